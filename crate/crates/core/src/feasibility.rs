use crate::error::Result;
use crate::region::RegionTree;
use crate::types::{check_len, BoundSpec, DiscreteAllocation, FeasibilityReport};

/// Default absolute tolerance for feasibility checks.
pub const FEASIBILITY_TOL: f64 = 1e-9;

pub fn normalize_discrete(a: &DiscreteAllocation) -> crate::AllocationVector {
    a.normalize()
}

/// Reports the sum residual, entity bound violations and region sum violations
/// of `z`. Only violations larger than `tol` are listed.
pub fn check_feasibility(
    z: &[f64],
    bounds: &BoundSpec,
    tree: Option<&RegionTree>,
    tol: f64,
) -> Result<FeasibilityReport> {
    check_len(bounds.len(), z.len())?;
    if let Some(t) = tree {
        check_len(t.n_entities(), z.len())?;
    }
    let sum_residual = (z.iter().sum::<f64>() - bounds.budget()).abs();
    let bound_violations: Vec<(usize, f64)> = z
        .iter()
        .enumerate()
        .filter_map(|(k, &v)| {
            let amount = (bounds.lower()[k] - v).max(v - bounds.upper()[k]).max(0.0);
            (amount > tol).then_some((k, amount))
        })
        .collect();
    let region_violations: Vec<(String, f64)> = match tree {
        Some(t) => t
            .region_sums(z)
            .into_iter()
            .filter_map(|(node, sum)| {
                let amount = (node.lower - sum).max(sum - node.upper).max(0.0);
                (amount > tol).then(|| (node.id.clone(), amount))
            })
            .collect(),
        None => Vec::new(),
    };
    let feasible = sum_residual <= tol && bound_violations.is_empty() && region_violations.is_empty();
    Ok(FeasibilityReport { feasible, sum_residual, bound_violations, region_violations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_bounds(n: usize) -> BoundSpec {
        BoundSpec::uniform(n, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn normalizes_counts() {
        let a = DiscreteAllocation::new(vec![10, 20, 30, 40], 100).unwrap();
        assert_eq!(normalize_discrete(&a).as_slice(), &[0.1, 0.2, 0.3, 0.4]);
        let a = DiscreteAllocation::new(vec![5], 5).unwrap();
        assert_eq!(normalize_discrete(&a).as_slice(), &[1.0]);
        let a = DiscreteAllocation::new(vec![0, 7], 7).unwrap();
        assert_eq!(normalize_discrete(&a).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn feasible_point() {
        let r = check_feasibility(&[0.5, 0.5], &unit_bounds(2), None, FEASIBILITY_TOL).unwrap();
        assert!(r.feasible);
        assert!(r.bound_violations.is_empty());
    }

    #[test]
    fn sum_violation() {
        let r = check_feasibility(&[0.6, 0.6], &unit_bounds(2), None, FEASIBILITY_TOL).unwrap();
        assert!(!r.feasible);
        assert!((r.sum_residual - 0.2).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_violation() {
        let b = BoundSpec::new(vec![0.1, 0.0], vec![1.0, 1.0], 1.0).unwrap();
        let r = check_feasibility(&[0.05, 0.95], &b, None, FEASIBILITY_TOL).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.bound_violations.len(), 1);
        assert_eq!(r.bound_violations[0].0, 0);
        assert!((r.bound_violations[0].1 - 0.05).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(check_feasibility(&[1.0], &unit_bounds(2), None, 1e-9).is_err());
    }

    #[test]
    fn looser_tolerance_never_flips_to_infeasible() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let b = BoundSpec::new(vec![0.1, 0.0, 0.2], vec![0.5, 0.6, 0.7], 1.0).unwrap();
        for _ in 0..1000 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.8)).collect();
            let t1 = rng.random_range(0.0..0.1);
            let t2 = t1 + rng.random_range(0.0..0.1);
            let tight = check_feasibility(&z, &b, None, t1).unwrap();
            let loose = check_feasibility(&z, &b, None, t2).unwrap();
            assert!(!tight.feasible || loose.feasible);
        }
    }
}
