//! Differentiable layers that map arbitrary actor outputs onto resource
//! allocations satisfying a total budget, per-entity bounds and nested
//! regional bounds.
//!
//! * [`cs`]: closed-form constrained softmax.
//! * [`appropt`]: iterative clamping approximation of the Euclidean projection.
//! * [`qp`]: the exact projection, a KKT certificate and the violation cost.
//! * [`region`]: hierarchies of the above, one layer per region.

pub mod appropt;
pub mod config;
pub mod cs;
pub mod error;
pub mod feasibility;
pub mod gradcheck;
pub mod qp;
pub mod region;
pub mod rounding;
pub mod sampling;
pub mod types;

pub use appropt::{appropt_forward, appropt_layer, prescale, AppOptOptions, AppOptOutput, ClampTrace, Phase};
pub use config::{load_constraints, parse_constraints, ConstraintSet};
pub use cs::{build_context, cs_forward, cs_jacobian, cs_layer, squash_outputs, CsContext, CsMode};
pub use error::{AllocError, Require, Result};
pub use feasibility::{check_feasibility, normalize_discrete, FEASIBILITY_TOL};
pub use gradcheck::{finite_diff_jacobian, DEFAULT_STEP};
pub use qp::{
    cp_project, exact_project, projection_gap, verify_kkt, violation_cost, write_gap_csv, GapRecord, KktCertificate,
    KktResiduals, ProjectionGap,
};
pub use region::{validate_tree, Children, Method, PinLayout, RegionNode, RegionTree, TreeEvaluation};
pub use rounding::{integer_bounds, manhattan_distance, round_to_discrete, round_to_discrete_tree};
pub use types::{AllocationVector, BoundSpec, DiscreteAllocation, FeasibilityReport, JacobianMatrix};
