//! Hierarchical regional constraints built from nested projection layers.
//!
//! Every node of the tree splits its budget among its children (entities or
//! sub-regions) with one constraint layer; the share handed to a sub-region
//! becomes the budget of that sub-region's layer. The actor supplies one pin
//! per entity and one per non-root region, and the Jacobian of the final
//! allocation with respect to all pins is assembled by the chain rule through
//! each layer's budget column.

use serde::{Deserialize, Serialize};

use crate::appropt::{appropt_forward, prescale_upper_sensitivity, prescale_with_jacobian, AppOptOptions};
use crate::cs::{build_context, cs_forward, cs_jacobian, cs_jacobian_with_budget, squash_derivative, squash_outputs};
use crate::error::{AllocError, Result};
use crate::types::{check_finite, check_len, AllocationVector, BoundSpec, JacobianMatrix, BOUND_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cs,
    #[default]
    #[serde(rename = "appropt")]
    AppOpt,
}

impl std::str::FromStr for Method {
    type Err = AllocError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cs" => Ok(Method::Cs),
            "appropt" => Ok(Method::AppOpt),
            other => Err(AllocError::Parse(format!("unknown layer method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Children {
    Entities(Vec<usize>),
    Regions(Vec<RegionNode>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionNode {
    pub id: String,
    pub lower: f64,
    pub upper: f64,
    pub method: Method,
    pub children: Children,
}

impl RegionNode {
    pub fn leaf(id: impl Into<String>, lower: f64, upper: f64, method: Method, entities: Vec<usize>) -> Self {
        RegionNode { id: id.into(), lower, upper, method, children: Children::Entities(entities) }
    }

    pub fn inner(id: impl Into<String>, lower: f64, upper: f64, method: Method, regions: Vec<RegionNode>) -> Self {
        RegionNode { id: id.into(), lower, upper, method, children: Children::Regions(regions) }
    }
}

/// Where each actor output pin feeds in: entity pins come first, then one pin
/// per non-root region in depth-first declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinLayout {
    pub entity_pins: Vec<usize>,
    pub region_pins: Vec<usize>,
    pub region_ids: Vec<String>,
}

impl PinLayout {
    pub fn n_pins(&self) -> usize {
        self.entity_pins.len() + self.region_pins.len()
    }
}

/// A validated node in arena form.
#[derive(Debug, Clone)]
pub struct RegionInfo {
    pub id: String,
    pub lower: f64,
    pub upper: f64,
    pub method: Method,
    /// Tightest interval the subtree can actually realize.
    pub eff_lower: f64,
    pub eff_upper: f64,
    /// Entities anywhere below this node.
    pub members: Vec<usize>,
    pin: Option<usize>,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Leaf(Vec<usize>),
    Inner(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct RegionTree {
    bounds: BoundSpec,
    nodes: Vec<RegionInfo>,
    layout: PinLayout,
}

/// Checks the partition and bound consistency of `root` and returns its pin layout.
pub fn validate_tree(root: &RegionNode, bounds: &BoundSpec) -> Result<PinLayout> {
    Ok(RegionTree::new(root.clone(), bounds.clone())?.layout)
}

impl RegionTree {
    pub fn new(root: RegionNode, bounds: BoundSpec) -> Result<Self> {
        let n = bounds.len();
        let mut nodes = Vec::new();
        let mut owner: Vec<Option<String>> = vec![None; n];
        let mut region_pin = n;
        flatten(&root, &mut nodes, &mut owner, &mut region_pin, true, &bounds)?;
        if let Some(k) = owner.iter().position(Option::is_none) {
            return Err(AllocError::tree(&root.id, format!("entity {k} is not covered by any region")));
        }
        let mut seen = std::collections::HashSet::new();
        for node in &nodes {
            if !seen.insert(node.id.as_str()) {
                return Err(AllocError::tree(&node.id, "duplicate region id"));
            }
        }
        let budget = bounds.budget();
        let tol = BOUND_TOL * budget.max(1.0);
        let r = &nodes[0];
        if budget < r.eff_lower - tol || budget > r.eff_upper + tol {
            return Err(AllocError::tree(
                &r.id,
                format!("budget {budget} outside realizable interval [{}, {}]", r.eff_lower, r.eff_upper),
            ));
        }
        let mut region_pins = Vec::new();
        let mut region_ids = Vec::new();
        for node in &nodes[1..] {
            region_pins.push(node.pin.expect("non-root regions carry a pin"));
            region_ids.push(node.id.clone());
        }
        let layout = PinLayout { entity_pins: (0..n).collect(), region_pins, region_ids };
        Ok(RegionTree { bounds, nodes, layout })
    }

    /// A single layer over all entities.
    pub fn flat(bounds: BoundSpec, method: Method) -> Self {
        let b = bounds.budget();
        let root = RegionNode::leaf("root", b, b, method, (0..bounds.len()).collect());
        RegionTree::new(root, bounds).expect("a flat tree over valid bounds is valid")
    }

    pub fn bounds(&self) -> &BoundSpec {
        &self.bounds
    }

    pub fn layout(&self) -> &PinLayout {
        &self.layout
    }

    pub fn n_entities(&self) -> usize {
        self.bounds.len()
    }

    pub fn n_pins(&self) -> usize {
        self.layout.n_pins()
    }

    pub fn is_flat(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn regions(&self) -> &[RegionInfo] {
        &self.nodes
    }

    /// Arena indices of the sub-regions of node `idx` (empty for leaves).
    pub fn child_regions(&self, idx: usize) -> Vec<usize> {
        match &self.nodes[idx].kind {
            Kind::Leaf(_) => Vec::new(),
            Kind::Inner(c) => c.clone(),
        }
    }

    /// Same topology with every node switched to `method`.
    pub fn with_method(&self, method: Method) -> Self {
        let mut t = self.clone();
        for node in &mut t.nodes {
            node.method = method;
        }
        t
    }

    /// Sum of `z` over every region, root first.
    pub fn region_sums(&self, z: &[f64]) -> Vec<(&RegionInfo, f64)> {
        self.nodes.iter().map(|node| (node, node.members.iter().map(|&k| z[k]).sum())).collect()
    }

    /// Child slots of a node: (pin, lower, upper, region index if any).
    fn slots(&self, node: &RegionInfo) -> Vec<Slot> {
        match &node.kind {
            Kind::Leaf(entities) => entities
                .iter()
                .map(|&k| Slot { pin: k, lower: self.bounds.lower()[k], upper: self.bounds.upper()[k], region: None })
                .collect(),
            Kind::Inner(children) => children
                .iter()
                .map(|&c| {
                    let child = &self.nodes[c];
                    Slot { pin: child.pin.unwrap(), lower: child.eff_lower, upper: child.eff_upper, region: Some(c) }
                })
                .collect(),
        }
    }

    /// Children bounds of `node` for a given budget; uppers are capped at the budget.
    fn child_bounds(slots: &[Slot], budget: f64) -> Result<(BoundSpec, Vec<bool>)> {
        let clipped: Vec<bool> = slots.iter().map(|s| s.upper > budget).collect();
        let lower = slots.iter().map(|s| s.lower.min(budget)).collect();
        let upper = slots.iter().map(|s| s.upper.min(budget)).collect();
        Ok((BoundSpec::new(lower, upper, budget)?, clipped))
    }

    /// Maps raw pins to a feasible allocation over entities, with the
    /// Jacobian (entities x pins).
    pub fn nested_forward(&self, pins: &[f64]) -> Result<(AllocationVector, JacobianMatrix)> {
        let mut eval = self.evaluate(pins, true)?;
        let jac = eval.jacobian.take().expect("jacobian requested");
        Ok((AllocationVector::from_vec_unchecked(eval.z), jac))
    }

    /// Forward pass only.
    pub fn project(&self, pins: &[f64]) -> Result<AllocationVector> {
        Ok(AllocationVector::from_vec_unchecked(self.evaluate(pins, false)?.z))
    }

    /// Full evaluation including per-node budgets and budget derivatives.
    pub fn evaluate(&self, pins: &[f64], with_jacobian: bool) -> Result<TreeEvaluation> {
        check_len(self.n_pins(), pins.len())?;
        check_finite(pins)?;
        let p = self.n_pins();
        let n = self.n_entities();
        let mut out = TreeEvaluation {
            z: vec![0.0; n],
            budgets: vec![0.0; self.nodes.len()],
            budget_derivatives: vec![Vec::new(); self.nodes.len()],
            jacobian: with_jacobian.then(|| JacobianMatrix::zeros(n, p)),
        };
        let grad = if with_jacobian { vec![0.0; p] } else { Vec::new() };
        self.eval_node(0, self.bounds.budget(), grad, pins, &mut out)?;
        Ok(out)
    }

    fn eval_node(
        &self,
        idx: usize,
        budget: f64,
        budget_grad: Vec<f64>,
        pins: &[f64],
        out: &mut TreeEvaluation,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        out.budgets[idx] = budget;
        let slots = self.slots(node);
        let m = slots.len();
        let with_jac = out.jacobian.is_some();
        let (z, local_jac, d_dc, layer_d_dc) = if m == 1 {
            (vec![budget], JacobianMatrix::zeros(1, 1), vec![1.0], vec![1.0])
        } else {
            let (bspec, clipped) = Self::child_bounds(&slots, budget).map_err(|e| tag(e, &node.id))?;
            let x: Vec<f64> = slots.iter().map(|s| pins[s.pin]).collect();
            match node.method {
                Method::AppOpt => {
                    let (y, dy) = prescale_with_jacobian(&x, &bspec).map_err(|e| tag(e, &node.id))?;
                    let res = appropt_forward(&y, &bspec, AppOptOptions::default()).map_err(|e| tag(e, &node.id))?;
                    let layer_d_dc = res.jacobian.d_dc().unwrap().to_vec();
                    let mut d_dc = layer_d_dc.clone();
                    // Capped uppers move with the budget, and the prescale moves with them.
                    if clipped.iter().any(|&c| c) {
                        let sens = prescale_upper_sensitivity(&x, &bspec);
                        let dy: Vec<f64> = sens.iter().zip(&clipped).map(|(s, &c)| if c { *s } else { 0.0 }).collect();
                        for (d, extra) in d_dc.iter_mut().zip(res.jacobian.jvp(&dy)) {
                            *d += extra;
                        }
                    }
                    let j = if with_jac { res.jacobian.matmul(&dy) } else { JacobianMatrix::zeros(0, 0) };
                    (res.z.into_inner(), j, d_dc, layer_d_dc)
                }
                Method::Cs => {
                    let y = squash_outputs(&x)?;
                    let ctx = build_context(&bspec).map_err(|e| tag(e, &node.id))?;
                    let z = cs_forward(&y, &ctx)?.into_inner();
                    let mut j = cs_jacobian_with_budget(&y, &ctx, &clipped)?;
                    let d_dc = j.d_dc().unwrap().to_vec();
                    let layer_d_dc = cs_jacobian(&y, &ctx)?.d_dc().unwrap().to_vec();
                    let ds = squash_derivative(&x);
                    for k in 0..m {
                        for (c, d) in ds.iter().enumerate() {
                            j.set(k, c, j.get(k, c) * d);
                        }
                    }
                    (z, j, d_dc, layer_d_dc)
                }
            }
        };
        out.budget_derivatives[idx] = layer_d_dc;
        for (c, slot) in slots.iter().enumerate() {
            let grad = if with_jac {
                let mut g: Vec<f64> = budget_grad.iter().map(|b| d_dc[c] * b).collect();
                if m > 1 {
                    for (j, s) in slots.iter().enumerate() {
                        g[s.pin] += local_jac.get(c, j);
                    }
                }
                g
            } else {
                Vec::new()
            };
            match slot.region {
                Some(child) => self.eval_node(child, z[c], grad, pins, out)?,
                None => {
                    out.z[slot.pin] = z[c];
                    if let Some(jac) = out.jacobian.as_mut() {
                        for (j, g) in grad.iter().enumerate() {
                            jac.set(slot.pin, j, *g);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Infeasibility of the raw pins as inputs to each node's layer, given the
    /// budgets that node received: `|budget - sum x| + sum bound violations`
    /// per node, with budgets held constant. Returns the value and its
    /// subgradient with respect to the pins (zero at kinks).
    pub fn pin_violation(&self, pins: &[f64], budgets: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(self.n_pins(), pins.len())?;
        check_len(self.nodes.len(), budgets.len())?;
        let mut total = 0.0;
        let mut grad = vec![0.0; pins.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            let slots = self.slots(node);
            let budget = budgets[idx];
            let s: f64 = slots.iter().map(|sl| pins[sl.pin]).sum();
            total += (budget - s).abs();
            let sign = signum0(s - budget);
            for sl in &slots {
                grad[sl.pin] += sign;
                let x = pins[sl.pin];
                let upper = sl.upper.min(budget);
                if x < sl.lower {
                    total += sl.lower - x;
                    grad[sl.pin] -= 1.0;
                } else if x > upper {
                    total += x - upper;
                    grad[sl.pin] += 1.0;
                }
            }
        }
        Ok((total, grad))
    }
}

/// Per-call results of a tree evaluation.
#[derive(Debug, Clone)]
pub struct TreeEvaluation {
    pub z: Vec<f64>,
    /// Budget received by each node (root first, arena order).
    pub budgets: Vec<f64>,
    /// Derivative of each node's layer outputs with respect to its budget,
    /// with the layer's bounds held fixed.
    pub budget_derivatives: Vec<Vec<f64>>,
    pub jacobian: Option<JacobianMatrix>,
}

struct Slot {
    pin: usize,
    lower: f64,
    upper: f64,
    region: Option<usize>,
}

pub(crate) fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn tag(err: AllocError, node: &str) -> AllocError {
    match err {
        AllocError::CsConditionViolated { index, epsilon, .. } => {
            AllocError::CsConditionViolated { index, epsilon, node: Some(node.to_string()) }
        }
        AllocError::Tree { .. } | AllocError::InternalAssertion(_) => err,
        other => AllocError::tree(node, other.to_string()),
    }
}

fn flatten(
    node: &RegionNode,
    nodes: &mut Vec<RegionInfo>,
    owner: &mut [Option<String>],
    next_pin: &mut usize,
    is_root: bool,
    bounds: &BoundSpec,
) -> Result<usize> {
    if !(node.lower.is_finite() && node.upper.is_finite()) || node.lower < 0.0 || node.lower > node.upper {
        return Err(AllocError::tree(&node.id, format!("invalid bounds [{}, {}]", node.lower, node.upper)));
    }
    let idx = nodes.len();
    let pin = if is_root {
        None
    } else {
        *next_pin += 1;
        Some(*next_pin - 1)
    };
    nodes.push(RegionInfo {
        id: node.id.clone(),
        lower: node.lower,
        upper: node.upper,
        method: node.method,
        eff_lower: 0.0,
        eff_upper: 0.0,
        members: Vec::new(),
        pin,
        kind: Kind::Leaf(Vec::new()),
    });
    let (kind, members, lo_sum, hi_sum) = match &node.children {
        Children::Entities(entities) => {
            if entities.is_empty() {
                return Err(AllocError::tree(&node.id, "region has no children"));
            }
            for &k in entities {
                if k >= owner.len() {
                    return Err(AllocError::tree(&node.id, format!("entity {k} out of range (n = {})", owner.len())));
                }
                if let Some(prev) = &owner[k] {
                    return Err(AllocError::tree(&node.id, format!("entity {k} also belongs to region {prev}")));
                }
                owner[k] = Some(node.id.clone());
            }
            let lo: f64 = entities.iter().map(|&k| bounds.lower()[k]).sum();
            let hi: f64 = entities.iter().map(|&k| bounds.upper()[k]).sum();
            (Kind::Leaf(entities.clone()), entities.clone(), lo, hi)
        }
        Children::Regions(children) => {
            if children.is_empty() {
                return Err(AllocError::tree(&node.id, "region has no children"));
            }
            let mut idxs = Vec::new();
            let mut members = Vec::new();
            let (mut lo, mut hi) = (0.0, 0.0);
            for child in children {
                let c = flatten(child, nodes, owner, next_pin, false, bounds)?;
                lo += nodes[c].eff_lower;
                hi += nodes[c].eff_upper;
                members.extend_from_slice(&nodes[c].members);
                idxs.push(c);
            }
            (Kind::Inner(idxs), members, lo, hi)
        }
    };
    let eff_lower = node.lower.max(lo_sum);
    let eff_upper = node.upper.min(hi_sum);
    let tol = BOUND_TOL * bounds.budget().max(1.0);
    if eff_lower > eff_upper + tol {
        return Err(AllocError::tree(
            &node.id,
            format!(
                "infeasible: bounds [{}, {}] but children can realize only [{lo_sum}, {hi_sum}]",
                node.lower, node.upper
            ),
        ));
    }
    let info = &mut nodes[idx];
    info.kind = kind;
    info.members = members;
    info.eff_lower = eff_lower;
    info.eff_upper = eff_upper.max(eff_lower);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_jacobian;

    /// Zones 0-2 in G1, zones 3-4 in G2.
    fn two_region_tree(method: Method) -> RegionTree {
        let bounds = BoundSpec::new(vec![0.0; 5], vec![0.5; 5], 1.0).unwrap();
        let root = RegionNode::inner(
            "root",
            1.0,
            1.0,
            method,
            vec![
                RegionNode::leaf("G1", 0.4, 0.8, method, vec![0, 1, 2]),
                RegionNode::leaf("G2", 0.2, 0.6, method, vec![3, 4]),
            ],
        );
        RegionTree::new(root, bounds).unwrap()
    }

    #[test]
    fn two_region_layout() {
        let t = two_region_tree(Method::AppOpt);
        assert_eq!(t.layout().entity_pins, vec![0, 1, 2, 3, 4]);
        assert_eq!(t.layout().region_pins, vec![5, 6]);
        assert_eq!(t.n_pins(), 7);
    }

    #[test]
    fn flat_layout_has_no_region_pins() {
        let t = RegionTree::flat(BoundSpec::unbounded(4, 1.0).unwrap(), Method::AppOpt);
        assert_eq!(t.n_pins(), 4);
        assert!(t.layout().region_pins.is_empty());
    }

    #[test]
    fn overlapping_regions_rejected() {
        let bounds = BoundSpec::unbounded(3, 1.0).unwrap();
        let root = RegionNode::inner(
            "root",
            1.0,
            1.0,
            Method::AppOpt,
            vec![
                RegionNode::leaf("G1", 0.0, 1.0, Method::AppOpt, vec![0, 1]),
                RegionNode::leaf("G2", 0.0, 1.0, Method::AppOpt, vec![1, 2]),
            ],
        );
        match validate_tree(&root, &bounds) {
            Err(AllocError::Tree { node, detail }) => {
                assert_eq!(node, "G2");
                assert!(detail.contains("entity 1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_region_rejected() {
        let bounds = BoundSpec::new(vec![0.0; 3], vec![0.1, 0.1, 1.0], 1.0).unwrap();
        let root = RegionNode::inner(
            "root",
            1.0,
            1.0,
            Method::AppOpt,
            vec![
                RegionNode::leaf("small", 0.5, 1.0, Method::AppOpt, vec![0, 1]),
                RegionNode::leaf("big", 0.0, 1.0, Method::AppOpt, vec![2]),
            ],
        );
        match validate_tree(&root, &bounds) {
            Err(AllocError::Tree { node, .. }) => assert_eq!(node, "small"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identity_through_two_levels() {
        let t = two_region_tree(Method::AppOpt);
        let pins = [0.1, 0.2, 0.2, 0.25, 0.25, 0.5, 0.5];
        let (z, _) = t.nested_forward(&pins).unwrap();
        assert_eq!(&z[..], &pins[..5]);
    }

    #[test]
    fn flat_tree_matches_plain_layer() {
        let b = BoundSpec::new(vec![0.05, 0.0, 0.1], vec![0.6, 0.5, 0.7], 1.0).unwrap();
        let x = [-0.8, 1.7, 0.2];
        let t = RegionTree::flat(b.clone(), Method::AppOpt);
        let (z, j) = t.nested_forward(&x).unwrap();
        let (z2, j2) = crate::appropt::appropt_layer(&x, &b).unwrap();
        assert_eq!(z, z2);
        assert_eq!(j.as_slice(), j2.as_slice());
        let t = RegionTree::flat(b.clone(), Method::Cs);
        let (z, j) = t.nested_forward(&x).unwrap();
        let ctx = build_context(&b).unwrap();
        let (z2, j2) = crate::cs::cs_layer(&x, &ctx).unwrap();
        assert_eq!(z, z2);
        assert_eq!(j.as_slice(), j2.as_slice());
    }

    #[test]
    fn jacobian_over_all_pins() {
        for method in [Method::AppOpt, Method::Cs] {
            let t = two_region_tree(method);
            let pins = [0.1, 0.35, -0.2, 0.3, -0.4, -0.3, 0.2];
            let (_, j) = t.nested_forward(&pins).unwrap();
            let fd = finite_diff_jacobian(|p| t.project(p).map(|z| z.into_inner()), &pins, 1e-7).unwrap();
            assert!(j.max_rel_error(&fd) < 1e-5, "{method:?}: {j:?}\n{fd:?}");
        }
    }

    #[test]
    fn cs_violation_names_the_node() {
        let bounds = BoundSpec::new(vec![0.0; 4], vec![1.0, 0.1, 0.45, 0.45], 1.0).unwrap();
        let root = RegionNode::inner(
            "root",
            1.0,
            1.0,
            Method::AppOpt,
            vec![
                RegionNode::leaf("A", 0.0, 1.0, Method::AppOpt, vec![0]),
                RegionNode::leaf("B", 0.0, 1.0, Method::Cs, vec![1, 2, 3]),
            ],
        );
        let t = RegionTree::new(root, bounds).unwrap();
        // B receives 0.5, so its reduced uppers are (0.2, 0.9, 0.9).
        let pins = [0.0, 0.0, 0.0, 0.0, 0.5, 0.5];
        match t.nested_forward(&pins) {
            Err(AllocError::CsConditionViolated { index, node, .. }) => {
                assert_eq!(index, 0);
                assert_eq!(node.as_deref(), Some("B"));
            }
            other => panic!("{other:?}"),
        }
    }
}
