use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

pub fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    // Poisson::new only fails for non-positive or non-finite means.
    Poisson::new(mean).map(|d| d.sample(rng) as u32).unwrap_or(0)
}

/// `count` event times uniform on `[start, end)`, sorted. Given its count, a
/// homogeneous Poisson process has exactly these times.
pub fn uniform_times(rng: &mut ChaCha8Rng, count: u32, start: f64, end: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..count).map(|_| rng.random_range(start..end)).collect();
    t.sort_by(f64::total_cmp);
    t
}

pub fn gaussian(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    Normal::new(mean, sd).map(|d| d.sample(rng)).unwrap_or(mean)
}
