//! Bike sharing: bikes are repositioned between stations at frame starts and
//! customers move them around during the frame.
//!
//! Pickup attempts arrive at each station as a Poisson process; an attempt at
//! an empty station is a lost customer and costs 1. A picked bike rides to a
//! destination drawn from the station's row of the destination matrix and
//! docks on arrival, or at the frame end if the ride would overrun it, so all
//! bikes are docked at frame boundaries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use alloc_layers::{BoundSpec, ConstraintSet, Method, RegionTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{poisson, uniform_times};
use crate::error::{EnvError, Result};
use crate::geometry::{dist, Point};
use crate::{spread_evenly, Environment, Observation, Step};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BssConfig {
    /// Station coordinates in km.
    pub stations: Vec<Point>,
    pub n_bikes: u32,
    pub frames_per_episode: usize,
    pub frame_minutes: f64,
    pub speed_kmh: f64,
    /// Expected pickup attempts per frame, `demand[frame % len][station]`.
    pub demand: Vec<Vec<f64>>,
    /// Row-stochastic station-to-station trip matrix.
    pub destinations: Vec<Vec<f64>>,
    pub lower: Vec<u32>,
    pub upper: Vec<u32>,
    /// Most bikes moved per frame by repositioning; unlimited when absent.
    #[serde(default)]
    pub move_cap: Option<u32>,
    #[serde(default)]
    pub method: Method,
    /// Attempts per station and frame that map to an observed demand of 1.
    pub demand_scale: f64,
}

impl BssConfig {
    /// Eight stations in two clusters of four, a residential west and a
    /// business east. Mornings send riders east, afternoons back west.
    pub fn toy() -> Self {
        let stations: Vec<Point> =
            vec![[0.0, 0.0], [0.8, 0.6], [0.2, 1.4], [1.0, 2.0], [4.0, 0.2], [4.6, 1.0], [4.2, 1.8], [5.0, 2.4]];
        let residential = |i: usize| i < 4;
        let affinity = |i: usize, j: usize| if residential(i) == residential(j) { 1.0 } else { 6.0 };
        let destinations = gravity_matrix(&stations, 2.0, affinity);
        let weights = [1.2, 1.0, 0.8, 1.0];
        let demand = (0..12)
            .map(|f| {
                let morning = f < 6;
                (0..8)
                    .map(|i| {
                        let w = weights[i % 4];
                        if residential(i) == morning {
                            3.5 * w
                        } else {
                            0.6 * w
                        }
                    })
                    .collect()
            })
            .collect();
        BssConfig {
            stations,
            n_bikes: 40,
            frames_per_episode: 12,
            frame_minutes: 30.0,
            speed_kmh: 12.0,
            demand,
            destinations,
            lower: vec![1, 1, 1, 1, 2, 1, 1, 1],
            upper: vec![12, 10, 9, 10, 12, 10, 9, 10],
            move_cap: None,
            method: Method::AppOpt,
            demand_scale: 8.0,
        }
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        let n = self.n_stations();
        if n == 0 || self.n_bikes == 0 || self.frames_per_episode == 0 {
            return bad("need stations, bikes and frames");
        }
        if !(self.frame_minutes > 0.0 && self.speed_kmh > 0.0 && self.demand_scale > 0.0) {
            return bad("frame length, speed and demand scale must be positive");
        }
        if self.demand.is_empty()
            || self.demand.iter().any(|r| r.len() != n || r.iter().any(|v| v.is_nan() || *v < 0.0))
        {
            return bad("demand rows need one non-negative rate per station");
        }
        if self.destinations.len() != n
            || self.destinations.iter().any(|r| {
                r.len() != n || r.iter().any(|p| p.is_nan() || *p < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9
            })
        {
            return bad("destination rows must be probability vectors over the stations");
        }
        if self.lower.len() != n || self.upper.len() != n {
            return bad("bound vectors need one entry per station");
        }
        Ok(())
    }

    fn constraints(&self) -> Result<ConstraintSet> {
        let bounds = BoundSpec::from_counts(&self.lower, &self.upper, self.n_bikes)?;
        Ok(ConstraintSet { tree: RegionTree::flat(bounds.clone(), self.method), bounds, total: Some(self.n_bikes) })
    }
}

/// Destination probabilities proportional to `affinity(i, j) * exp(-d_ij / decay_km)`,
/// excluding round trips.
pub fn gravity_matrix(stations: &[Point], decay_km: f64, affinity: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
    let n = stations.len();
    (0..n)
        .map(|i| {
            let w: Vec<f64> = (0..n)
                .map(|j| {
                    if i == j && n > 1 {
                        0.0
                    } else {
                        affinity(i, j) * (-dist(stations[i], stations[j]) / decay_km).exp()
                    }
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Attempt {
    time: f64,
    from: usize,
    to: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dock {
    time: f64,
    station: usize,
}

impl Eq for Dock {}

impl Ord for Dock {
    // min-heap on time, then station
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.station.cmp(&self.station))
    }
}

impl PartialOrd for Dock {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn sample_attempts(cfg: &BssConfig, seed: u64) -> Vec<Vec<Attempt>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.frames_per_episode)
        .map(|f| {
            let rates = &cfg.demand[f % cfg.demand.len()];
            let mut frame: Vec<Attempt> = Vec::new();
            for (from, &rate) in rates.iter().enumerate() {
                let count = poisson(&mut rng, rate);
                for time in uniform_times(&mut rng, count, 0.0, cfg.frame_minutes) {
                    let u: f64 = rng.random();
                    let row = &cfg.destinations[from];
                    let mut acc = 0.0;
                    let mut to = row.len() - 1;
                    for (j, &p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            to = j;
                            break;
                        }
                    }
                    frame.push(Attempt { time, from, to });
                }
            }
            frame.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.from.cmp(&b.from)));
            frame
        })
        .collect()
}

/// Moves bikes from surplus to deficit stations, lowest indices first, at most
/// `cap` bikes.
fn reposition(bikes: &mut [u32], target: &[u32], cap: Option<u32>) {
    let mut budget = cap.unwrap_or(u32::MAX);
    let mut from = 0;
    let mut to = 0;
    while budget > 0 {
        while from < bikes.len() && bikes[from] <= target[from] {
            from += 1;
        }
        while to < bikes.len() && bikes[to] >= target[to] {
            to += 1;
        }
        if from == bikes.len() || to == bikes.len() {
            break;
        }
        let k = (bikes[from] - target[from]).min(target[to] - bikes[to]).min(budget);
        bikes[from] -= k;
        bikes[to] += k;
        budget -= k;
    }
}

#[derive(Debug, Clone)]
pub struct BssEnv {
    cfg: BssConfig,
    constraints: ConstraintSet,
    bikes: Vec<u32>,
    attempts: Vec<Vec<Attempt>>,
    frame: usize,
    name: String,
}

impl BssEnv {
    pub fn new(cfg: BssConfig) -> Result<Self> {
        cfg.validate()?;
        let constraints = cfg.constraints()?;
        let bikes = spread_evenly(cfg.n_bikes, cfg.n_stations());
        Ok(BssEnv { name: "bss".into(), constraints, bikes, attempts: Vec::new(), frame: 0, cfg })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &BssConfig {
        &self.cfg
    }

    fn run_frame(cfg: &BssConfig, bikes: &mut [u32], attempts: &[Attempt]) -> (f64, Vec<u32>) {
        let mut docks = BinaryHeap::new();
        let mut lost = 0u32;
        let mut demand = vec![0; bikes.len()];
        for a in attempts {
            while docks.peek().is_some_and(|d: &Dock| d.time <= a.time) {
                let d = docks.pop().expect("peeked");
                bikes[d.station] += 1;
            }
            demand[a.from] += 1;
            if bikes[a.from] == 0 {
                lost += 1;
                continue;
            }
            bikes[a.from] -= 1;
            let ride = dist(cfg.stations[a.from], cfg.stations[a.to]) / cfg.speed_kmh * 60.0;
            docks.push(Dock { time: (a.time + ride).min(cfg.frame_minutes), station: a.to });
        }
        for d in docks {
            bikes[d.station] += 1;
        }
        (-(lost as f64), demand)
    }

    fn observation(&self, demand: &[u32]) -> Observation {
        let total = self.cfg.n_bikes as f64;
        Observation {
            demand: demand.iter().map(|&d| (d as f64 / self.cfg.demand_scale).min(1.0)).collect(),
            allocation: self.bikes.iter().map(|&b| b as f64 / total).collect(),
            time: self.frame as f64 / self.cfg.frames_per_episode as f64,
        }
    }
}

impl Environment for BssEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    fn n_resources(&self) -> u32 {
        self.cfg.n_bikes
    }

    fn frames_per_episode(&self) -> usize {
        self.cfg.frames_per_episode
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.bikes = spread_evenly(self.cfg.n_bikes, self.cfg.n_stations());
        self.attempts = sample_attempts(&self.cfg, seed);
        self.frame = 0;
        self.observation(&vec![0; self.cfg.n_stations()])
    }

    fn step_unchecked(&mut self, target: &[u32]) -> Result<Step> {
        if self.frame >= self.cfg.frames_per_episode || self.attempts.is_empty() {
            return Err(EnvError::EpisodeOver);
        }
        let total: u32 = target.iter().sum();
        if target.len() != self.cfg.n_stations() || total != self.cfg.n_bikes {
            return Err(EnvError::InfeasibleTarget(format!(
                "expected {} stations holding {}, got {} holding {total}",
                self.cfg.n_stations(),
                self.cfg.n_bikes,
                target.len()
            )));
        }
        reposition(&mut self.bikes, target, self.cfg.move_cap);
        let (reward, demand) = BssEnv::run_frame(&self.cfg, &mut self.bikes, &self.attempts[self.frame]);
        self.frame += 1;
        Ok(Step {
            observation: self.observation(&demand),
            reward,
            done: self.frame == self.cfg.frames_per_episode,
            demand,
        })
    }

    fn allocation(&self) -> Vec<u32> {
        self.bikes.clone()
    }

    fn static_episode(&self, counts: &[u32], seed: u64) -> Result<f64> {
        if counts.len() != self.cfg.n_stations() {
            return Err(EnvError::InfeasibleTarget("one count per station required".into()));
        }
        let attempts = sample_attempts(&self.cfg, seed);
        let mut total = 0.0;
        for frame in &attempts {
            let mut bikes = counts.to_vec();
            total += BssEnv::run_frame(&self.cfg, &mut bikes, frame).0;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gravity_rows_are_stochastic() {
        let cfg = BssConfig::toy();
        for row in &cfg.destinations {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        cfg.validate().unwrap();
        // cross-cluster trips dominate
        assert!(cfg.destinations[0][4..].iter().sum::<f64>() > 0.5);
    }

    #[test]
    fn reposition_respects_cap() {
        let mut bikes = vec![10, 0, 0];
        reposition(&mut bikes, &[2, 4, 4], Some(5));
        assert_eq!(bikes, vec![5, 4, 1]);
        reposition(&mut bikes, &[2, 4, 4], None);
        assert_eq!(bikes, vec![2, 4, 4]);
    }

    #[test]
    fn zero_demand_zero_reward() {
        let mut cfg = BssConfig::toy();
        for r in &mut cfg.demand {
            r.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut env = BssEnv::new(cfg).unwrap();
        env.reset(0);
        let s = env.step_unchecked(&[5; 8]).unwrap();
        assert_eq!(s.reward, 0.0);
        assert_eq!(env.allocation(), vec![5; 8]);
    }

    #[test]
    fn bikes_are_conserved() {
        let mut env = BssEnv::new(BssConfig::toy()).unwrap();
        env.reset(9);
        for _ in 0..12 {
            let cur = env.allocation();
            let s = env.step_unchecked(&cur).unwrap();
            assert_eq!(env.allocation().iter().sum::<u32>(), 40);
            let attempts: u32 = s.demand.iter().sum();
            assert!(s.reward <= 0.0 && s.reward >= -(attempts as f64));
        }
    }
}
