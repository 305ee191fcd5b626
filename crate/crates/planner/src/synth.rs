//! Synthetic request-rate traces: a diurnal sinusoid with multiplicative
//! noise plus Pareto-sized request bursts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Pareto};

use crate::TraceSeries;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synthetic {
    pub intervals: usize,
    pub interval_s: i64,
    /// Mean requests per interval.
    pub base: f64,
    /// Peak-to-mean swing of the daily cycle, as a fraction of `base`.
    pub diurnal_amplitude: f64,
    /// Daily cycle length in intervals.
    pub period: f64,
    /// Log-space standard deviation of per-interval noise.
    pub noise_sigma: f64,
    /// Chance that a burst starts in a given interval.
    pub burst_rate: f64,
    /// Pareto tail index of burst heights.
    pub burst_shape: f64,
    /// Smallest burst height, as a multiple of `base`.
    pub burst_scale: f64,
    /// Mean burst length in intervals.
    pub burst_len: f64,
    /// Burst heights are capped at this multiple of `base`.
    pub burst_cap: f64,
    pub seed: u64,
}

impl Default for Synthetic {
    /// One day at one-second resolution.
    fn default() -> Self {
        Synthetic {
            intervals: 86_400,
            interval_s: 1,
            base: 1000.0,
            diurnal_amplitude: 0.35,
            period: 86_400.0,
            noise_sigma: 0.6,
            burst_rate: 0.005,
            burst_shape: 1.3,
            burst_scale: 1.0,
            burst_len: 4.0,
            burst_cap: 25.0,
            seed: 2023,
        }
    }
}

impl Synthetic {
    pub fn generate(&self) -> TraceSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = LogNormal::new(-self.noise_sigma * self.noise_sigma / 2.0, self.noise_sigma)
            .expect("valid sigma");
        let height = Pareto::new(self.burst_scale, self.burst_shape).expect("valid burst shape");
        let mut load: Vec<f64> = (0..self.intervals)
            .map(|t| {
                let phase = 2.0 * std::f64::consts::PI * t as f64 / self.period;
                // trough near the start of the day
                let cycle = 1.0 - self.diurnal_amplitude * phase.cos();
                self.base * cycle * noise.sample(&mut rng)
            })
            .collect();
        let stop = 1.0 / self.burst_len.max(1.0);
        for t in 0..self.intervals {
            if rng.gen::<f64>() >= self.burst_rate {
                continue;
            }
            let h = self.base * height.sample(&mut rng).min(self.burst_cap);
            let mut k = t;
            // geometric length with the given mean
            loop {
                if k >= self.intervals {
                    break;
                }
                load[k] += h;
                k += 1;
                if rng.gen::<f64>() < stop {
                    break;
                }
            }
        }
        TraceSeries::new(self.interval_s, load.into_iter().map(f64::round).collect())
    }
}
