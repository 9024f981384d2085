use std::time::Instant;

use alloc_envs::bss::gravity_matrix;
use alloc_envs::*;
use alloc_layers::{ConstraintSet, DiscreteAllocation, Method};

fn uniform_policy(env: &dyn Environment) -> DiscreteAllocation {
    let n = env.n_entities();
    let c = env.n_resources();
    let counts = (0..n).map(|i| c / n as u32 + u32::from((i as u32) < c % n as u32)).collect();
    DiscreteAllocation::new(counts, c).unwrap()
}

/// Cycles through a few feasible targets so relocations happen.
fn rotating_policy(env: &dyn Environment) -> impl FnMut(&Observation) -> Result<DiscreteAllocation> {
    let base = uniform_policy(env).counts().to_vec();
    let c = env.n_resources();
    let mut k = 0;
    move |_| {
        let mut counts = base.clone();
        let shift = k % counts.len();
        counts.rotate_left(shift);
        k += 1;
        Ok(DiscreteAllocation::new(counts, c).unwrap())
    }
}

#[test]
fn traces_are_bit_exact_per_seed() {
    for name in ["ers-toy", "ers-toy-poisson", "bss-toy"] {
        let spec = EnvSpec::preset(name).unwrap();
        let mut a = spec.build().unwrap();
        let mut b = spec.build().unwrap();
        let pa = rotating_policy(a.as_ref());
        let pb = rotating_policy(b.as_ref());
        let ta = run_episode(a.as_mut(), 17, pa).unwrap();
        let tb = run_episode(b.as_mut(), 17, pb).unwrap();
        assert_eq!(ta, tb, "{name}");
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        ta.write_csv(&mut ca).unwrap();
        tb.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        let other = run_episode(a.as_mut(), 18, rotating_policy(b.as_ref())).unwrap();
        assert_ne!(ta, other, "{name}: seeds should differ");
    }
}

#[test]
fn ers_conservation_and_reward_bounds() {
    let mut env = ErsEnv::new(ErsConfig::toy(true)).unwrap();
    for seed in 0..30 {
        env.reset(seed);
        let mut policy = rotating_policy(&env);
        let mut obs = env.reset(seed);
        let mut rewards = 0.0;
        loop {
            let queued_before = env.queued() as f64;
            let target = policy(&obs).unwrap();
            let step = env.step(&target).unwrap();
            let incidents: u32 = step.demand.iter().sum();
            assert_eq!(env.allocation().iter().sum::<u32>(), 8);
            assert_eq!(env.statuses().len(), 8);
            assert!(step.reward >= 0.0);
            assert!(step.reward <= incidents as f64 + queued_before);
            // each incident is either dispatched once or still queued
            assert_eq!(env.served() as usize + env.queued(), env.incidents_so_far());
            rewards += step.reward;
            obs = step.observation;
            if step.done {
                break;
            }
        }
        assert!(rewards <= env.incidents_so_far() as f64);
    }
}

#[test]
fn bss_conservation_and_reward_bounds() {
    let mut env = BssEnv::new(BssConfig::toy()).unwrap();
    for seed in 0..30 {
        let mut policy = rotating_policy(&env);
        let mut obs = env.reset(seed);
        loop {
            let step = env.step(&policy(&obs).unwrap()).unwrap();
            assert_eq!(env.allocation().iter().sum::<u32>(), 40);
            let attempts: u32 = step.demand.iter().sum();
            assert!(step.reward <= 0.0 && step.reward >= -(attempts as f64));
            for v in step.observation.demand.iter().chain(&step.observation.allocation) {
                assert!((0.0..=1.0).contains(v));
            }
            obs = step.observation;
            if step.done {
                break;
            }
        }
    }
}

#[test]
fn bss_do_nothing_changes_only_through_trips() {
    let mut cfg = BssConfig::toy();
    for row in &mut cfg.demand {
        row.iter_mut().for_each(|v| *v = 0.0);
    }
    cfg.demand[0][0] = 2.0;
    let mut env = BssEnv::new(cfg).unwrap();
    env.reset(4);
    let before = env.allocation();
    let step = env.step_unchecked(&before).unwrap();
    let after = env.allocation();
    let picked = step.demand[0] as i64 + step.reward as i64;
    assert_eq!(before[0] as i64 - after[0] as i64, picked);
    assert_eq!(after.iter().sum::<u32>(), 40);
}

#[test]
fn bss_empty_station_loses_its_demand() {
    let lambda = 3.0;
    let stations = vec![[0.0, 0.0], [1.0, 0.0]];
    let cfg = BssConfig {
        destinations: gravity_matrix(&stations, 1.0, |_, _| 1.0),
        stations,
        n_bikes: 4,
        frames_per_episode: 1,
        frame_minutes: 30.0,
        speed_kmh: 12.0,
        demand: vec![vec![lambda, 0.0]],
        lower: vec![0, 0],
        upper: vec![4, 4],
        move_cap: None,
        method: Method::AppOpt,
        demand_scale: 4.0,
    };
    let mut env = BssEnv::new(cfg).unwrap();
    let target = DiscreteAllocation::new(vec![0, 4], 4).unwrap();
    let trials = 1000;
    let mut sum = 0.0;
    for seed in 0..trials {
        env.reset(seed);
        sum += env.step(&target).unwrap().reward;
    }
    let mean = sum / trials as f64;
    let se = (lambda / trials as f64).sqrt();
    assert!((mean + lambda).abs() < 3.0 * se, "mean {mean}");
}

struct Concave {
    cs: ConstraintSet,
    cap: Vec<u32>,
}

impl Environment for Concave {
    fn name(&self) -> &str {
        "concave"
    }
    fn constraints(&self) -> &ConstraintSet {
        &self.cs
    }
    fn n_resources(&self) -> u32 {
        2
    }
    fn frames_per_episode(&self) -> usize {
        1
    }
    fn reset(&mut self, _seed: u64) -> Observation {
        unreachable!()
    }
    fn step_unchecked(&mut self, _target: &[u32]) -> Result<Step> {
        unreachable!()
    }
    fn allocation(&self) -> Vec<u32> {
        vec![1, 1]
    }
    fn static_episode(&self, counts: &[u32], _seed: u64) -> Result<f64> {
        Ok(counts.iter().zip(&self.cap).map(|(&k, &c)| k.min(c) as f64).sum())
    }
}

#[test]
fn greedy_symmetric_demand_splits_evenly() {
    let bounds = alloc_layers::BoundSpec::uniform(2, 0.0, 1.0, 1.0).unwrap();
    let cs =
        ConstraintSet { tree: alloc_layers::RegionTree::flat(bounds.clone(), Method::AppOpt), bounds, total: Some(2) };
    let env = Concave { cs, cap: vec![1, 1] };
    let seeds: Vec<u64> = (0..32).collect();
    assert_eq!(greedy_static_baseline(&env, 2, &seeds).unwrap().counts(), &[1, 1]);
}

#[test]
fn greedy_picks_the_only_busy_base() {
    let mut cfg = ErsConfig::toy(false);
    cfg.bases = vec![[2.5, 5.0], [12.5, 5.0]];
    cfg.zone_cols = 2;
    cfg.zone_rows = 1;
    cfg.demand_profile = vec![vec![2.0, 0.0]];
    cfg.upper = None;
    cfg.n_ambulances = 1;
    let env = ErsEnv::new(cfg).unwrap();
    let seeds: Vec<u64> = (0..32).collect();
    assert_eq!(greedy_static_baseline(&env, 1, &seeds).unwrap().counts(), &[1, 0]);
}

#[test]
fn greedy_scores_do_not_drop_with_more_resources() {
    let env = ErsEnv::new(ErsConfig::toy(true)).unwrap();
    let seeds: Vec<u64> = (0..32).collect();
    let mut prev = f64::NEG_INFINITY;
    for k in 1..=8 {
        let g = greedy_static_baseline(&env, k, &seeds).unwrap();
        let score: f64 = evaluate_static(&env, g.counts(), &seeds).unwrap().iter().sum::<f64>() / 32.0;
        assert!(score >= prev, "{k} resources scored {score} < {prev}");
        prev = score;
    }
}

#[test]
fn infeasible_targets_are_rejected() {
    let mut env = ErsEnv::new(ErsConfig::toy(true)).unwrap();
    env.reset(0);
    // upper bound is 4 ambulances per base
    let bad = DiscreteAllocation::new(vec![5, 3, 0, 0, 0, 0], 8).unwrap();
    assert!(matches!(env.step(&bad), Err(EnvError::InfeasibleTarget(_))));
    let wrong_total = DiscreteAllocation::new(vec![1, 1, 1, 1, 1, 1], 6).unwrap();
    assert!(env.step(&wrong_total).is_err());
}

#[test]
fn thousand_toy_episodes_fit_the_time_budget() {
    for name in ["ers-toy", "bss-toy"] {
        let mut env = EnvSpec::preset(name).unwrap().build().unwrap();
        let start = Instant::now();
        for seed in 0..1000 {
            let p = rotating_policy(env.as_ref());
            run_episode(env.as_mut(), seed, p).unwrap();
        }
        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 60.0, "{name}: {secs:.1}s");
    }
}

#[test]
fn trace_csv_has_header_and_rows() {
    let mut env = EnvSpec::preset("bss-toy").unwrap().build().unwrap();
    let p = rotating_policy(env.as_ref());
    let trace = run_episode(env.as_mut(), 1, p).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines[0].starts_with("frame,demand_0,"));
    assert!(lines[0].ends_with("alloc_7,reward"));
    let total: f64 = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert_eq!(total, trace.total_reward());
}
