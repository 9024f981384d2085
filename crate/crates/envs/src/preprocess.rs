//! Observation history to network input: the last three demand frames, the
//! current allocation and the time of day, `3n + n + 1` values in `[0, 1]`.

use std::collections::VecDeque;

use crate::Observation;

pub const HISTORY: usize = 3;

#[derive(Debug, Clone)]
pub struct Preprocessor {
    n: usize,
    demand: VecDeque<Vec<f64>>,
}

impl Preprocessor {
    pub fn new(n: usize) -> Self {
        Preprocessor { n, demand: VecDeque::with_capacity(HISTORY) }
    }

    pub fn dim(&self) -> usize {
        input_dim(self.n)
    }

    /// Forgets the demand history (start of an episode).
    pub fn reset(&mut self) {
        self.demand.clear();
    }

    /// Records `obs` and returns the feature vector, most recent demand first.
    pub fn push(&mut self, obs: &Observation) -> Vec<f64> {
        if self.demand.len() == HISTORY {
            self.demand.pop_back();
        }
        self.demand.push_front(obs.demand.clone());
        let mut out = Vec::with_capacity(self.dim());
        for i in 0..HISTORY {
            match self.demand.get(i) {
                Some(d) => out.extend(d.iter().map(|v| v.clamp(0.0, 1.0))),
                None => out.extend(std::iter::repeat_n(0.0, self.n)),
            }
        }
        out.extend(obs.allocation.iter().map(|v| v.clamp(0.0, 1.0)));
        out.push(obs.time.clamp(0.0, 1.0));
        out
    }
}

pub fn input_dim(n: usize) -> usize {
    HISTORY * n + n + 1
}
