//! TOML description of a constraint set.
//!
//! ```toml
//! budget = 1.0
//! lower = [0.0, 0.0, 0.1]
//! upper = [0.5, 0.5, 0.6]
//! method = "appropt"        # layer used by nodes that do not set one
//!
//! [tree]                    # optional; omitted means a single layer
//! id = "root"
//! [[tree.regions]]
//! id = "G1"
//! lower = 0.2
//! upper = 0.8
//! entities = [0, 1]
//! [[tree.regions]]
//! id = "G2"
//! entities = [2]
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::error::{AllocError, Result};
use crate::region::{Method, RegionNode, RegionTree};
use crate::types::BoundSpec;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintDoc {
    #[serde(default = "one")]
    budget: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    total: Option<u32>,
    method: Option<Method>,
    tree: Option<NodeDoc>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    lower: Option<f64>,
    upper: Option<f64>,
    method: Option<Method>,
    entities: Option<Vec<usize>>,
    regions: Option<Vec<NodeDoc>>,
}

/// Bounds plus the region tree that enforces them.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub bounds: BoundSpec,
    pub tree: RegionTree,
    /// Number of indivisible resources, when the file states one.
    pub total: Option<u32>,
}

pub fn parse_constraints(text: &str) -> Result<ConstraintSet> {
    let doc: ConstraintDoc = toml::from_str(text).map_err(|e| AllocError::Parse(e.to_string()))?;
    let bounds = BoundSpec::new(doc.lower, doc.upper, doc.budget)?;
    let method = doc.method.unwrap_or_default();
    let tree = match doc.tree {
        None => RegionTree::flat(bounds.clone(), method),
        Some(root) => {
            let root = convert(root, method, doc.budget, doc.budget)?;
            RegionTree::new(root, bounds.clone())?
        }
    };
    Ok(ConstraintSet { bounds, tree, total: doc.total })
}

pub fn load_constraints(path: &Path) -> Result<ConstraintSet> {
    let text = std::fs::read_to_string(path).map_err(|e| AllocError::Parse(format!("{}: {e}", path.display())))?;
    parse_constraints(&text).map_err(|e| match e {
        AllocError::Parse(msg) => AllocError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn convert(doc: NodeDoc, inherited: Method, lower: f64, upper: f64) -> Result<RegionNode> {
    let method = doc.method.unwrap_or(inherited);
    let lower = doc.lower.unwrap_or(lower);
    let upper = doc.upper.unwrap_or(upper);
    match (doc.entities, doc.regions) {
        (Some(e), None) => Ok(RegionNode::leaf(doc.id, lower, upper, method, e)),
        (None, Some(r)) => {
            let children = r.into_iter().map(|c| convert(c, method, 0.0, f64::MAX)).collect::<Result<Vec<_>>>()?;
            Ok(RegionNode::inner(doc.id, lower, upper, method, children))
        }
        _ => Err(AllocError::tree(doc.id, "needs exactly one of `entities` or `regions`")),
    }
}
