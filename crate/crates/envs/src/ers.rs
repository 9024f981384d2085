//! Emergency response: ambulances parked at bases answer incidents.
//!
//! An incident is answered by the nearest base holding an idle ambulance, or
//! queued first-come first-served until an ambulance returns to its base.
//! A dispatched ambulance drives to the scene, treats the patient, drives to
//! the hospital, hands over and drives back to its base; it is busy the whole
//! time. A request counts as a success when the ambulance reaches the scene
//! within the response bound of the call.
//!
//! Retargeting reassigns the fewest ambulances possible. Surplus and deficit
//! slots are matched by base-to-base distance; idle ambulances are moved
//! first and are unavailable while driving.

use std::collections::VecDeque;

use alloc_layers::{BoundSpec, ConstraintSet, Method, RegionTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{gaussian, poisson, uniform_times};
use crate::error::{EnvError, Result};
use crate::geometry::{dist, grid_centres, lerp, nearest, Point};
use crate::hungarian::min_cost_assignment;
use crate::{spread_evenly, Environment, Observation, Step};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurgeConfig {
    /// Expected surge incidents per hour at the peak.
    pub amplitude: f64,
    pub spatial_sigma_km: f64,
    pub temporal_sigma_min: f64,
    /// Chance that an episode has a surge at all.
    #[serde(default = "one")]
    pub probability: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErsConfig {
    pub n_ambulances: u32,
    /// Base coordinates in km.
    pub bases: Vec<Point>,
    pub city_width: f64,
    pub city_height: f64,
    pub speed_kmh: f64,
    pub frame_minutes: f64,
    pub frames_per_episode: usize,
    /// Minute of the day at which episodes start.
    #[serde(default)]
    pub start_minute: f64,
    pub response_bound_minutes: f64,
    pub scene_minutes: f64,
    pub handover_minutes: f64,
    /// Defaults to the city centre.
    #[serde(default)]
    pub hospital: Option<Point>,
    /// Demand zones form a `zone_cols x zone_rows` grid over the city.
    pub zone_cols: usize,
    pub zone_rows: usize,
    /// Incidents per hour, `demand_profile[hour_of_day % len][zone]`.
    pub demand_profile: Vec<Vec<f64>>,
    #[serde(default)]
    pub surge: Option<SurgeConfig>,
    /// Per-base ambulance bounds; default `[0, C]`.
    #[serde(default)]
    pub lower: Option<Vec<u32>>,
    #[serde(default)]
    pub upper: Option<Vec<u32>>,
    /// Layer method of the constraint tree.
    #[serde(default)]
    pub method: Method,
    /// Incidents per base and frame that map to an observed demand of 1.
    pub demand_scale: f64,
}

impl ErsConfig {
    /// Six bases on a 3x2 grid, eight ambulances, Poisson demand with an
    /// optional Gaussian surge.
    pub fn toy(surge: bool) -> Self {
        let (w, h) = (15.0, 10.0);
        let rates = [0.4, 0.25, 0.35, 0.3, 0.45, 0.25];
        // quieter late morning, busier afternoon
        let shape = [0.8, 0.9, 1.0, 1.0, 1.1, 1.2, 1.2, 1.1];
        let demand_profile = (0..24)
            .map(|hour| {
                let m = if (8..16).contains(&hour) { shape[hour - 8] } else { 0.8 };
                rates.iter().map(|r| r * m).collect()
            })
            .collect();
        ErsConfig {
            n_ambulances: 8,
            bases: grid_centres(3, 2, w, h),
            city_width: w,
            city_height: h,
            speed_kmh: 30.0,
            frame_minutes: 30.0,
            frames_per_episode: 16,
            start_minute: 8.0 * 60.0,
            response_bound_minutes: 10.0,
            scene_minutes: 5.0,
            handover_minutes: 2.0,
            hospital: None,
            zone_cols: 3,
            zone_rows: 2,
            demand_profile,
            surge: surge.then_some(SurgeConfig {
                amplitude: 10.0,
                spatial_sigma_km: 1.0,
                temporal_sigma_min: 90.0,
                probability: 1.0,
            }),
            lower: None,
            upper: Some(vec![4; 6]),
            method: Method::AppOpt,
            demand_scale: 4.0,
        }
    }

    pub fn n_bases(&self) -> usize {
        self.bases.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.bases.is_empty() || self.n_ambulances == 0 {
            return bad("need at least one base and one ambulance");
        }
        for v in [
            self.city_width,
            self.city_height,
            self.speed_kmh,
            self.frame_minutes,
            self.response_bound_minutes,
            self.demand_scale,
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad("dimensions, speed, frame length, response bound and demand scale must be positive");
            }
        }
        if self.scene_minutes < 0.0 || self.handover_minutes < 0.0 || self.start_minute < 0.0 {
            return bad("service times must be non-negative");
        }
        if self.frames_per_episode == 0 || self.zone_cols == 0 || self.zone_rows == 0 {
            return bad("frames and zone grid must be non-empty");
        }
        let inside = |p: &Point| (0.0..=self.city_width).contains(&p[0]) && (0.0..=self.city_height).contains(&p[1]);
        if !self.bases.iter().all(inside) || !self.hospital.iter().all(inside) {
            return bad("bases and hospital must lie inside the city");
        }
        let zones = self.zone_cols * self.zone_rows;
        if self.demand_profile.is_empty()
            || self
                .demand_profile
                .iter()
                .any(|row| row.len() != zones || row.iter().any(|r| !(r.is_finite() && *r >= 0.0)))
        {
            return bad("demand_profile rows need one non-negative rate per zone");
        }
        if let Some(s) = &self.surge {
            if !(s.amplitude >= 0.0 && s.spatial_sigma_km > 0.0 && s.temporal_sigma_min > 0.0)
                || !(0.0..=1.0).contains(&s.probability)
            {
                return bad("surge amplitude must be non-negative, sigmas positive, probability in [0, 1]");
            }
        }
        for b in [&self.lower, &self.upper].into_iter().flatten() {
            if b.len() != self.n_bases() {
                return bad("bound vectors need one entry per base");
            }
        }
        Ok(())
    }

    fn constraints(&self) -> Result<ConstraintSet> {
        let n = self.n_bases();
        let c = self.n_ambulances;
        let lower = self.lower.clone().unwrap_or_else(|| vec![0; n]);
        let upper = self.upper.clone().unwrap_or_else(|| vec![c; n]);
        let bounds = BoundSpec::from_counts(&lower, &upper, c)?;
        Ok(ConstraintSet { tree: RegionTree::flat(bounds.clone(), self.method), bounds, total: Some(c) })
    }

    fn hospital(&self) -> Point {
        self.hospital.unwrap_or([self.city_width / 2.0, self.city_height / 2.0])
    }

    fn minutes(&self, km: f64) -> f64 {
        km / self.speed_kmh * 60.0
    }

    fn episode_minutes(&self) -> f64 {
        self.frame_minutes * self.frames_per_episode as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Incident {
    pub time: f64,
    pub pos: Point,
    /// Nearest base, the entity whose demand the incident counts toward.
    pub base: usize,
}

/// Draws the episode's incidents, sorted by time.
pub(crate) fn sample_incidents(cfg: &ErsConfig, seed: u64) -> Vec<Incident> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = cfg.episode_minutes();
    let (zw, zh) = (cfg.city_width / cfg.zone_cols as f64, cfg.city_height / cfg.zone_rows as f64);
    let mut out = Vec::new();
    // piecewise-constant base rates, split at hour boundaries
    let mut t = 0.0;
    while t < horizon {
        let clock = cfg.start_minute + t;
        let hour = (clock / 60.0).floor();
        let end = ((hour + 1.0) * 60.0 - cfg.start_minute).min(horizon);
        let rates = &cfg.demand_profile[(hour as usize) % cfg.demand_profile.len()];
        for (zone, &rate) in rates.iter().enumerate() {
            let count = poisson(&mut rng, rate * (end - t) / 60.0);
            let (zc, zr) = ((zone % cfg.zone_cols) as f64, (zone / cfg.zone_cols) as f64);
            for time in uniform_times(&mut rng, count, t, end) {
                let pos = [(zc + rng.random::<f64>()) * zw, (zr + rng.random::<f64>()) * zh];
                out.push(Incident { time, pos, base: nearest(&cfg.bases, pos) });
            }
        }
        t = end;
    }
    if let Some(s) = &cfg.surge {
        if rng.random::<f64>() < s.probability {
            let centre = [rng.random::<f64>() * cfg.city_width, rng.random::<f64>() * cfg.city_height];
            let margin = s.temporal_sigma_min.min(horizon / 4.0);
            let peak = rng.random_range(margin..=horizon - margin);
            // thinning of a homogeneous process at the peak rate
            let candidates = poisson(&mut rng, s.amplitude * horizon / 60.0);
            for time in uniform_times(&mut rng, candidates, 0.0, horizon) {
                let z = (time - peak) / s.temporal_sigma_min;
                if rng.random::<f64>() >= (-0.5 * z * z).exp() {
                    continue;
                }
                let pos = loop {
                    let p = [
                        gaussian(&mut rng, centre[0], s.spatial_sigma_km),
                        gaussian(&mut rng, centre[1], s.spatial_sigma_km),
                    ];
                    if (0.0..=cfg.city_width).contains(&p[0]) && (0.0..=cfg.city_height).contains(&p[1]) {
                        break p;
                    }
                };
                out.push(Incident { time, pos, base: nearest(&cfg.bases, pos) });
            }
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmbulanceStatus {
    IdleAtBase,
    ToIncident,
    /// On scene, driving to the hospital or handing over.
    ToHospital,
    Returning,
    Relocating,
}

#[derive(Debug, Clone, Copy)]
enum Activity {
    Idle,
    Busy {
        relocating: bool,
        arrive_scene: f64,
        /// Start of the final drive to the assigned base.
        move_start: f64,
        move_from: Point,
        free_at: f64,
    },
}

#[derive(Debug, Clone, Copy)]
struct Ambulance {
    base: usize,
    activity: Activity,
}

#[derive(Debug, Clone)]
struct Queued {
    incident: Incident,
}

/// Single-episode simulator state.
#[derive(Debug, Clone)]
struct Sim {
    ambulances: Vec<Ambulance>,
    queue: VecDeque<Queued>,
    incidents: Vec<Incident>,
    next_incident: usize,
    frame: usize,
    served: u64,
    relocations: u64,
}

impl Sim {
    fn new(cfg: &ErsConfig, counts: &[u32], seed: u64) -> Self {
        let ambulances = counts
            .iter()
            .enumerate()
            .flat_map(|(b, &k)| std::iter::repeat_n(Ambulance { base: b, activity: Activity::Idle }, k as usize))
            .collect();
        Sim {
            ambulances,
            queue: VecDeque::new(),
            incidents: sample_incidents(cfg, seed),
            next_incident: 0,
            frame: 0,
            served: 0,
            relocations: 0,
        }
    }

    fn counts(&self, n: usize) -> Vec<u32> {
        let mut c = vec![0; n];
        for a in &self.ambulances {
            c[a.base] += 1;
        }
        c
    }

    fn position(cfg: &ErsConfig, a: &Ambulance, now: f64) -> Point {
        match a.activity {
            Activity::Idle => cfg.bases[a.base],
            Activity::Busy { move_start, move_from, free_at, .. } => {
                if now < move_start {
                    move_from
                } else if free_at <= move_start {
                    cfg.bases[a.base]
                } else {
                    lerp(move_from, cfg.bases[a.base], (now - move_start) / (free_at - move_start))
                }
            }
        }
    }

    fn status(a: &Ambulance, now: f64) -> AmbulanceStatus {
        match a.activity {
            Activity::Idle => AmbulanceStatus::IdleAtBase,
            Activity::Busy { relocating: true, .. } => AmbulanceStatus::Relocating,
            Activity::Busy { arrive_scene, move_start, .. } => {
                if now < arrive_scene {
                    AmbulanceStatus::ToIncident
                } else if now < move_start {
                    AmbulanceStatus::ToHospital
                } else {
                    AmbulanceStatus::Returning
                }
            }
        }
    }

    /// Reassigns the fewest ambulances so that base counts equal `target`.
    fn retarget(&mut self, cfg: &ErsConfig, target: &[u32], now: f64) {
        let current = self.counts(cfg.n_bases());
        let mut surplus = Vec::new();
        let mut deficit = Vec::new();
        for (b, (&c, &t)) in current.iter().zip(target).enumerate() {
            surplus.extend(std::iter::repeat_n(b, c.saturating_sub(t) as usize));
            deficit.extend(std::iter::repeat_n(b, t.saturating_sub(c) as usize));
        }
        debug_assert_eq!(surplus.len(), deficit.len());
        let cost: Vec<Vec<f64>> =
            surplus.iter().map(|&s| deficit.iter().map(|&d| dist(cfg.bases[s], cfg.bases[d])).collect()).collect();
        let assign = min_cost_assignment(&cost);
        for (i, &from) in surplus.iter().enumerate() {
            self.reassign(cfg, from, deficit[assign[i]], now);
        }
    }

    fn reassign(&mut self, cfg: &ErsConfig, from: usize, to: usize, now: f64) {
        // idle first, then relocating, then on a mission; lowest index within
        let rank = |a: &Ambulance| match Sim::status(a, now) {
            AmbulanceStatus::IdleAtBase => 0,
            AmbulanceStatus::Relocating => 1,
            _ => 2,
        };
        let Some(idx) = (0..self.ambulances.len())
            .filter(|&i| self.ambulances[i].base == from)
            .min_by_key(|&i| (rank(&self.ambulances[i]), i))
        else {
            return;
        };
        self.relocations += 1;
        let a = self.ambulances[idx];
        let here = Sim::position(cfg, &a, now);
        let dest = cfg.bases[to];
        let activity = match a.activity {
            Activity::Busy { relocating: false, arrive_scene, move_start, move_from, .. } if now < move_start => {
                // still on the mission: only the final leg changes
                Activity::Busy {
                    relocating: false,
                    arrive_scene,
                    move_start,
                    move_from,
                    free_at: move_start + cfg.minutes(dist(move_from, dest)),
                }
            }
            Activity::Busy { relocating, arrive_scene, .. } => Activity::Busy {
                relocating,
                arrive_scene,
                move_start: now,
                move_from: here,
                free_at: now + cfg.minutes(dist(here, dest)),
            },
            Activity::Idle => Activity::Busy {
                relocating: true,
                arrive_scene: now,
                move_start: now,
                move_from: here,
                free_at: now + cfg.minutes(dist(here, dest)),
            },
        };
        self.ambulances[idx] = Ambulance { base: to, activity };
    }

    /// Sends ambulance `idx`, idle at its base at `now`, to `incident`.
    /// Returns whether the scene is reached within the response bound.
    fn dispatch(&mut self, cfg: &ErsConfig, idx: usize, incident: &Incident, now: f64) -> bool {
        let base = cfg.bases[self.ambulances[idx].base];
        let hospital = cfg.hospital();
        let arrive_scene = now + cfg.minutes(dist(base, incident.pos));
        let move_start =
            arrive_scene + cfg.scene_minutes + cfg.minutes(dist(incident.pos, hospital)) + cfg.handover_minutes;
        let free_at = move_start + cfg.minutes(dist(hospital, base));
        self.ambulances[idx].activity =
            Activity::Busy { relocating: false, arrive_scene, move_start, move_from: hospital, free_at };
        self.served += 1;
        arrive_scene - incident.time <= cfg.response_bound_minutes + 1e-9
    }

    /// Runs events on `[start, end)`; returns successes and demand per base.
    fn run_frame(&mut self, cfg: &ErsConfig, start: f64, end: f64) -> (u32, Vec<u32>) {
        let mut reward = 0;
        let mut demand = vec![0; cfg.n_bases()];
        loop {
            let next_free = self
                .ambulances
                .iter()
                .enumerate()
                .filter_map(|(i, a)| match a.activity {
                    Activity::Busy { free_at, .. } if free_at < end => Some((free_at, i)),
                    _ => None,
                })
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let next_call = self.incidents.get(self.next_incident).filter(|inc| inc.time < end).copied();
            match (next_free, next_call) {
                (None, None) => break,
                (Some((t, i)), call) if call.is_none_or(|c| t <= c.time) => {
                    self.ambulances[i].activity = Activity::Idle;
                    if let Some(q) = self.queue.pop_front() {
                        reward += u32::from(self.dispatch(cfg, i, &q.incident, t.max(start)));
                    }
                }
                (_, Some(call)) => {
                    self.next_incident += 1;
                    demand[call.base] += 1;
                    let best = self
                        .ambulances
                        .iter()
                        .enumerate()
                        .filter(|(_, a)| matches!(a.activity, Activity::Idle))
                        .map(|(i, a)| (dist(cfg.bases[a.base], call.pos), i))
                        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                    match best {
                        Some((_, i)) => reward += u32::from(self.dispatch(cfg, i, &call, call.time)),
                        None => self.queue.push_back(Queued { incident: call }),
                    }
                }
                (Some(_), None) => unreachable!("guard covers a free event without a call"),
            }
        }
        (reward, demand)
    }

    fn step(&mut self, cfg: &ErsConfig, target: &[u32]) -> (u32, Vec<u32>) {
        let start = self.frame as f64 * cfg.frame_minutes;
        self.retarget(cfg, target, start);
        let out = self.run_frame(cfg, start, start + cfg.frame_minutes);
        self.frame += 1;
        out
    }

    fn idle_counts(&self, n: usize) -> Vec<u32> {
        let mut c = vec![0; n];
        for a in &self.ambulances {
            if matches!(a.activity, Activity::Idle) {
                c[a.base] += 1;
            }
        }
        c
    }
}

/// Emergency-response environment over a fixed [`ErsConfig`].
#[derive(Debug, Clone)]
pub struct ErsEnv {
    cfg: ErsConfig,
    constraints: ConstraintSet,
    sim: Sim,
    name: String,
}

impl ErsEnv {
    pub fn new(cfg: ErsConfig) -> Result<Self> {
        cfg.validate()?;
        let constraints = cfg.constraints()?;
        let initial = spread_evenly(cfg.n_ambulances, cfg.n_bases());
        let sim = Sim::new(&cfg, &initial, 0);
        Ok(ErsEnv { name: "ers".into(), cfg, constraints, sim })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &ErsConfig {
        &self.cfg
    }

    /// Status of every ambulance at the current clock.
    pub fn statuses(&self) -> Vec<AmbulanceStatus> {
        let now = self.sim.frame as f64 * self.cfg.frame_minutes;
        self.sim.ambulances.iter().map(|a| Sim::status(a, now)).collect()
    }

    /// Requests dispatched so far in the episode.
    pub fn served(&self) -> u64 {
        self.sim.served
    }

    /// Requests waiting for an ambulance.
    pub fn queued(&self) -> usize {
        self.sim.queue.len()
    }

    /// Incidents that have occurred so far in the episode.
    pub fn incidents_so_far(&self) -> usize {
        self.sim.next_incident
    }

    /// Reassignments made so far in the episode.
    pub fn relocations(&self) -> u64 {
        self.sim.relocations
    }

    fn observation(&self, demand: &[u32]) -> Observation {
        let c = self.cfg.n_ambulances as f64;
        Observation {
            demand: demand.iter().map(|&d| (d as f64 / self.cfg.demand_scale).min(1.0)).collect(),
            allocation: self.sim.idle_counts(self.cfg.n_bases()).iter().map(|&k| k as f64 / c).collect(),
            time: self.sim.frame as f64 / self.cfg.frames_per_episode as f64,
        }
    }
}

impl Environment for ErsEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    fn n_resources(&self) -> u32 {
        self.cfg.n_ambulances
    }

    fn frames_per_episode(&self) -> usize {
        self.cfg.frames_per_episode
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let initial = spread_evenly(self.cfg.n_ambulances, self.cfg.n_bases());
        self.sim = Sim::new(&self.cfg, &initial, seed);
        self.observation(&vec![0; self.cfg.n_bases()])
    }

    fn step_unchecked(&mut self, target: &[u32]) -> Result<Step> {
        if self.sim.frame >= self.cfg.frames_per_episode {
            return Err(EnvError::EpisodeOver);
        }
        let total: u32 = target.iter().sum();
        if target.len() != self.cfg.n_bases() || total != self.cfg.n_ambulances {
            return Err(EnvError::InfeasibleTarget(format!(
                "expected {} bases holding {}, got {} holding {total}",
                self.cfg.n_bases(),
                self.cfg.n_ambulances,
                target.len()
            )));
        }
        let (reward, demand) = self.sim.step(&self.cfg, target);
        Ok(Step {
            observation: self.observation(&demand),
            reward: reward as f64,
            done: self.sim.frame == self.cfg.frames_per_episode,
            demand,
        })
    }

    fn allocation(&self) -> Vec<u32> {
        self.sim.counts(self.cfg.n_bases())
    }

    fn static_episode(&self, counts: &[u32], seed: u64) -> Result<f64> {
        if counts.len() != self.cfg.n_bases() {
            return Err(EnvError::InfeasibleTarget("one count per base required".into()));
        }
        let mut sim = Sim::new(&self.cfg, counts, seed);
        let mut total = 0.0;
        for _ in 0..self.cfg.frames_per_episode {
            total += sim.step(&self.cfg, counts).0 as f64;
        }
        Ok(total)
    }
}
