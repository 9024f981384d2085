//! Nearest feasible integer allocation under the Manhattan metric.

use crate::error::{AllocError, Result};
use crate::region::RegionTree;
use crate::types::{check_finite, check_len, BoundSpec, DiscreteAllocation};

/// Slack when converting fractional bounds to integer counts, so that a bound
/// of `3/8 * 8` is not rounded to 2 by floating error.
const COUNT_SLACK: f64 = 1e-9;

/// Equal marginal costs within this distance are treated as ties.
const TIE_EPS: f64 = 1e-12;

/// Integer per-entity bounds implied by fractional bounds on `total` units.
pub fn integer_bounds(bounds: &BoundSpec, total: u32) -> (Vec<u32>, Vec<u32>) {
    let c = total as f64;
    let lo = bounds.lower().iter().map(|&l| ((c * l - COUNT_SLACK).ceil().max(0.0) as u32).min(total)).collect();
    let hi = bounds.upper().iter().map(|&u| ((c * u + COUNT_SLACK).floor().max(0.0) as u32).min(total)).collect();
    (lo, hi)
}

/// Rounds a continuous allocation to the integer allocation of `total` units
/// that minimizes `sum |counts_k - total * z_k|` within the integer bounds.
///
/// Starts every entity at its integer lower bound and hands out the remaining
/// units one at a time to the entity whose distance grows least (or shrinks
/// most). The per-entity cost is convex, so the greedy order is optimal; ties
/// go to the lowest index.
pub fn round_to_discrete(z: &[f64], total: u32, bounds: &BoundSpec) -> Result<DiscreteAllocation> {
    check_len(bounds.len(), z.len())?;
    check_finite(z)?;
    if total == 0 {
        return Err(AllocError::InvalidDiscrete("total must be positive".into()));
    }
    let (lo, hi) = integer_bounds(bounds, total);
    let min_sum: u32 = lo.iter().sum();
    let max_sum: u32 = hi.iter().sum();
    if min_sum > total || max_sum < total || lo.iter().zip(&hi).any(|(l, h)| l > h) {
        return Err(AllocError::NoIntegerAllocation { total, min_sum, max_sum });
    }
    let targets: Vec<f64> = z.iter().map(|&v| v * total as f64).collect();
    DiscreteAllocation::new(greedy_fill(&targets, lo, &hi, total), total)
}

/// Starting from `lo`, adds units one at a time where `|count - target|`
/// grows least. Callers guarantee `sum lo <= total <= sum hi`.
fn greedy_fill(targets: &[f64], lo: Vec<u32>, hi: &[u32], total: u32) -> Vec<u32> {
    let min_sum: u32 = lo.iter().sum();
    let mut counts = lo;
    for _ in min_sum..total {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..counts.len() {
            if counts[k] >= hi[k] {
                continue;
            }
            let c = counts[k] as f64;
            let delta = (c + 1.0 - targets[k]).abs() - (c - targets[k]).abs();
            match best {
                Some((_, d)) if delta >= d - TIE_EPS => {}
                _ => best = Some((k, delta)),
            }
        }
        let (k, _) = best.expect("an entity below its integer upper bound");
        counts[k] += 1;
    }
    counts
}

/// Rounds `z` so that every region of `tree` also holds an integer count
/// within its bounds: each node's count is split among its children by the
/// same greedy rule, top-down. A flat tree reduces to [`round_to_discrete`].
pub fn round_to_discrete_tree(z: &[f64], total: u32, tree: &RegionTree) -> Result<DiscreteAllocation> {
    let bounds = tree.bounds();
    if tree.is_flat() {
        return round_to_discrete(z, total, bounds);
    }
    check_len(bounds.len(), z.len())?;
    check_finite(z)?;
    if total == 0 {
        return Err(AllocError::InvalidDiscrete("total must be positive".into()));
    }
    let c = total as f64;
    let (elo, ehi) = integer_bounds(bounds, total);
    let regions = tree.regions();
    let mut counts = vec![0u32; z.len()];
    let mut stack = vec![(0usize, total)];
    while let Some((idx, units)) = stack.pop() {
        let children = tree.child_regions(idx);
        let (targets, lo, hi): (Vec<f64>, Vec<u32>, Vec<u32>) = if children.is_empty() {
            let ks = &regions[idx].members;
            (
                ks.iter().map(|&k| z[k] * c).collect(),
                ks.iter().map(|&k| elo[k]).collect(),
                ks.iter().map(|&k| ehi[k].min(units)).collect(),
            )
        } else {
            let mut t = Vec::new();
            let mut l = Vec::new();
            let mut h = Vec::new();
            for &ch in &children {
                let r = &regions[ch];
                t.push(r.members.iter().map(|&k| z[k]).sum::<f64>() * c);
                l.push(((c * r.eff_lower - COUNT_SLACK).ceil().max(0.0) as u32).min(total));
                h.push(((c * r.eff_upper + COUNT_SLACK).floor().max(0.0) as u32).min(units));
            }
            (t, l, h)
        };
        let min_sum: u32 = lo.iter().sum();
        let max_sum: u32 = hi.iter().sum();
        if min_sum > units || max_sum < units || lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(AllocError::NoIntegerAllocation { total: units, min_sum, max_sum });
        }
        let split = greedy_fill(&targets, lo, &hi, units);
        if children.is_empty() {
            for (&k, &v) in regions[idx].members.iter().zip(&split) {
                counts[k] = v;
            }
        } else {
            stack.extend(children.into_iter().zip(split));
        }
    }
    DiscreteAllocation::new(counts, total)
}

/// Manhattan distance between a discrete allocation and `total * z`.
pub fn manhattan_distance(a: &DiscreteAllocation, z: &[f64]) -> f64 {
    let t = a.total() as f64;
    a.counts().iter().zip(z).map(|(&c, &v)| (c as f64 - t * v).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::normalize_discrete;
    use proptest::prelude::*;

    /// Enumerates every integer vector within the bounds summing to `total`
    /// and keeps the first minimizer in lexicographic-descending order, which
    /// matches the lowest-index tie-break.
    fn brute_force(z: &[f64], total: u32, bounds: &BoundSpec) -> Option<(Vec<u32>, f64)> {
        let (lo, hi) = integer_bounds(bounds, total);
        let n = z.len();
        let mut best: Option<(Vec<u32>, f64)> = None;
        let mut cur = vec![0u32; n];
        #[allow(clippy::too_many_arguments)]
        fn rec(
            k: usize,
            left: u32,
            cur: &mut Vec<u32>,
            lo: &[u32],
            hi: &[u32],
            z: &[f64],
            total: u32,
            best: &mut Option<(Vec<u32>, f64)>,
        ) {
            let n = cur.len();
            if k == n - 1 {
                if left < lo[k] || left > hi[k] {
                    return;
                }
                cur[k] = left;
                let d: f64 = cur.iter().zip(z).map(|(&c, &v)| (c as f64 - total as f64 * v).abs()).sum();
                if best.as_ref().is_none_or(|(_, bd)| d < bd - 1e-12) {
                    *best = Some((cur.clone(), d));
                }
                return;
            }
            for c in (lo[k]..=hi[k].min(left)).rev() {
                cur[k] = c;
                rec(k + 1, left - c, cur, lo, hi, z, total, best);
            }
        }
        rec(0, total, &mut cur, &lo, &hi, z, total, &mut best);
        best
    }

    #[test]
    fn exact_multiples() {
        let b = BoundSpec::unbounded(4, 1.0).unwrap();
        let a = round_to_discrete(&[0.1, 0.2, 0.3, 0.4], 10, &b).unwrap();
        assert_eq!(a.counts(), &[1, 2, 3, 4]);
    }

    #[test]
    fn near_thirds_matches_brute_force() {
        let b = BoundSpec::unbounded(3, 1.0).unwrap();
        let z = [0.33, 0.33, 0.34];
        let a = round_to_discrete(&z, 10, &b).unwrap();
        let (bf, d) = brute_force(&z, 10, &b).unwrap();
        assert_eq!(a.counts(), &[3, 3, 4]);
        assert_eq!(a.counts(), bf.as_slice());
        assert!((manhattan_distance(&a, &z) - d).abs() < 1e-12);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let b = BoundSpec::unbounded(2, 1.0).unwrap();
        let a = round_to_discrete(&[0.5, 0.5], 3, &b).unwrap();
        assert_eq!(a.counts(), &[2, 1]);
    }

    #[test]
    fn respects_integer_bounds() {
        // 0.95 * 4 = 3.8 would round to 4 without the upper bound of 2/4.
        let b = BoundSpec::new(vec![0.0, 0.25], vec![0.5, 1.0], 1.0).unwrap();
        let a = round_to_discrete(&[0.95, 0.05], 4, &b).unwrap();
        assert_eq!(a.counts(), &[2, 2]);
    }

    #[test]
    fn incompatible_integer_bounds_error() {
        // Each entity needs at least 0.4 of 2 units (ceil(0.8) = 1) and at most
        // 0.45 (floor(0.9) = 0).
        let b = BoundSpec::new(vec![0.4, 0.4], vec![0.45, 0.6], 1.0).unwrap();
        let err = round_to_discrete(&[0.45, 0.55], 2, &b).unwrap_err();
        assert!(matches!(err, AllocError::NoIntegerAllocation { .. }));
    }

    proptest! {
        #[test]
        fn greedy_equals_brute_force(
            raw in proptest::collection::vec(0.0f64..1.0, 2..=4),
            total in 1u32..12,
            lo_frac in 0.0f64..0.2,
            hi_frac in 0.5f64..1.0,
        ) {
            let n = raw.len();
            let s: f64 = raw.iter().sum::<f64>().max(1e-9);
            let z: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let b = match BoundSpec::uniform(n, lo_frac, hi_frac, 1.0) {
                Ok(b) => b,
                Err(_) => return Ok(()),
            };
            match (round_to_discrete(&z, total, &b), brute_force(&z, total, &b)) {
                (Ok(a), Some((bf, d))) => {
                    prop_assert!((manhattan_distance(&a, &z) - d).abs() < 1e-9);
                    prop_assert_eq!(a.counts(), bf.as_slice());
                }
                (Err(_), None) => {}
                (got, want) => prop_assert!(false, "greedy {:?} vs brute force {:?}", got, want),
            }
        }

        #[test]
        fn round_trip(counts in proptest::collection::vec(0u32..20, 1..8)) {
            let total: u32 = counts.iter().sum();
            prop_assume!(total > 0);
            let a = DiscreteAllocation::new(counts, total).unwrap();
            let z = normalize_discrete(&a);
            prop_assert!((z.sum() - 1.0).abs() <= 1e-12);
            let b = BoundSpec::unbounded(a.len(), 1.0).unwrap();
            prop_assert_eq!(round_to_discrete(&z, total, &b).unwrap(), a);
        }
    }
}
