//! Random problem instances for tests and projection studies.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::qp::exact_project;
use crate::region::{Method, RegionNode, RegionTree};
use crate::types::BoundSpec;

/// Bounds on a unit budget with `sum lower < 1 < sum upper`, each side by a
/// margin of at least 1e-3.
pub fn random_bounds<R: Rng + ?Sized>(rng: &mut R, n: usize) -> BoundSpec {
    assert!(n >= 2, "need at least two entities");
    let nf = n as f64;
    loop {
        let scale = rng.random_range(0.0..0.9);
        let lower: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0) * scale / nf).collect();
        let upper: Vec<f64> = lower.iter().map(|l| (l + rng.random_range(0.0..3.0) / nf).min(1.0)).collect();
        let (lo, hi): (f64, f64) = (lower.iter().sum(), upper.iter().sum());
        if lo < 1.0 - 1e-3 && hi > 1.0 + 1e-3 {
            return BoundSpec::new(lower, upper, 1.0).expect("sampled bounds are consistent");
        }
    }
}

/// Uniform point inside the entity box (the sum is unconstrained).
pub fn random_point_in_box<R: Rng + ?Sized>(rng: &mut R, bounds: &BoundSpec) -> Vec<f64> {
    bounds.lower().iter().zip(bounds.upper()).map(|(&l, &u)| if u > l { rng.random_range(l..=u) } else { l }).collect()
}

/// Raw outputs in `[-scale, scale]`.
pub fn random_raw<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Random region tree over `n` entities with at most `max_depth` levels
/// below the root. Region bounds are drawn around a feasible reference
/// allocation, so every tree is valid.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, n: usize, max_depth: usize, method: Method) -> RegionTree {
    let bounds = random_bounds(rng, n);
    let start = random_point_in_box(rng, &bounds);
    let (reference, _) = exact_project(&start, &bounds).expect("valid bounds");
    let mut entities: Vec<usize> = (0..n).collect();
    entities.shuffle(rng);
    let mut next_id = 0;
    let children = split(rng, &entities, max_depth, &reference, method, &mut next_id);
    let root = RegionNode::inner("root", 1.0, 1.0, method, children);
    RegionTree::new(root, bounds).expect("bounds drawn around a feasible point")
}

fn split<R: Rng + ?Sized>(
    rng: &mut R,
    entities: &[usize],
    depth: usize,
    reference: &[f64],
    method: Method,
    next_id: &mut usize,
) -> Vec<RegionNode> {
    let parts = rng.random_range(2..=3).min(entities.len());
    let mut cuts: Vec<usize> = (1..entities.len()).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
    cuts.sort_unstable();
    cuts.insert(0, 0);
    cuts.push(entities.len());
    cuts.windows(2)
        .map(|w| {
            let members = &entities[w[0]..w[1]];
            let mass: f64 = members.iter().map(|&k| reference[k]).sum();
            let lower = mass * rng.random_range(0.3..=1.0);
            let upper = mass + rng.random_range(0.0..=0.3) * (1.0 - mass);
            let id = format!("R{next_id}");
            *next_id += 1;
            if depth > 1 && members.len() >= 2 && rng.random_bool(0.6) {
                let sub = split(rng, members, depth - 1, reference, method, next_id);
                RegionNode::inner(id, lower, upper, method, sub)
            } else {
                RegionNode::leaf(id, lower, upper, method, members.to_vec())
            }
        })
        .collect()
}
