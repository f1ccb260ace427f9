//! Monte Carlo engines: the mass-particle superprocess approximation, the
//! skeleton branching diffusion and the dressed skeleton.
//!
//! Time advances on a fixed grid of step `dt`. Within a step positions are
//! frozen, events fire at exact times drawn from residual exponential
//! clocks, and every particle then makes one Euler-Maruyama move over the
//! part of the step it was alive for.

pub mod dressed;
pub mod events;
pub mod rng;
pub mod skeleton;
pub mod superprocess;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dressed::{simulate_dressed, DressedModel, DressedPath, DressedState};
pub use events::{Event, EventKind, Record};
pub use rng::{stream, Purpose, SimRng};
pub use skeleton::{
    sample_initial_skeleton, simulate_skeleton, skeleton_at, thin_jump, SkeletonModel,
    SkeletonParticle, SkeletonPath,
};
pub use superprocess::{simulate_superprocess, SuperprocessModel, SuperprocessPath};

pub const DEFAULT_POPULATION_CEILING: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    pub dt: f64,
    /// Mass carried by one superprocess particle.
    pub delta: f64,
    /// Mass of one excursion-surrogate immigrant.
    pub epsilon: f64,
    pub seed: u64,
    pub horizon: f64,
    /// Extra observation times in `[0, horizon]`; the horizon is always
    /// observed.
    #[serde(default)]
    pub observe: Vec<f64>,
    #[serde(default = "default_ceiling")]
    pub population_ceiling: usize,
}

fn default_ceiling() -> usize {
    DEFAULT_POPULATION_CEILING
}

impl SimParams {
    pub fn new(dt: f64, delta: f64, epsilon: f64, seed: u64, horizon: f64) -> Self {
        SimParams {
            dt,
            delta,
            epsilon,
            seed,
            horizon,
            observe: Vec::new(),
            population_ceiling: DEFAULT_POPULATION_CEILING,
        }
    }

    pub fn observing(mut self, times: &[f64]) -> Self {
        self.observe = times.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dt", self.dt),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("horizon", self.horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::precondition(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.dt > self.horizon {
            return Err(Error::precondition("dt exceeds the horizon"));
        }
        if self.population_ceiling == 0 {
            return Err(Error::precondition("population ceiling must be positive"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }

    /// Step actually used: the horizon divided into a whole number of steps.
    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// Sorted, de-duplicated `(step index, time)` observation points.
    pub fn observation_steps(&self) -> Result<Vec<(usize, f64)>> {
        let h = self.step_size();
        let steps = self.steps();
        let mut out = Vec::with_capacity(self.observe.len() + 1);
        for &t in &self.observe {
            let k = (t / h).round();
            if !(t >= 0.0 && t <= self.horizon + 1e-12) || (k * h - t).abs() > 1e-9 * (1.0 + t) {
                return Err(Error::precondition(format!(
                    "observation time {t} is not a multiple of the step {h} within [0, T]"
                )));
            }
            out.push(k as usize);
        }
        out.push(steps);
        out.sort_unstable();
        out.dedup();
        Ok(out.into_iter().map(|k| (k, k as f64 * h)).collect())
    }
}

/// `floor(x) + Bernoulli(frac(x))`: an integer with mean `x`.
#[inline]
pub fn round_random<R: Rng + ?Sized>(x: f64, rng: &mut R) -> usize {
    let base = x.floor();
    let frac = x - base;
    base as usize + usize::from(frac > 0.0 && rng.random::<f64>() < frac)
}

/// Runs `m` independent replicates, replicate `i` on stream
/// `(seed, purpose, i)`. Output order is the replicate order.
pub fn run_replicates<T, F>(m: usize, seed: u64, purpose: Purpose, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> Result<T> + Sync,
{
    (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, purpose, i as u64);
            job(i, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_schedule() {
        let p = SimParams::new(1e-3, 1e-2, 1e-2, 1, 1.0).observing(&[0.5, 0.0, 1.0]);
        let obs = p.observation_steps().unwrap();
        assert_eq!(
            obs.iter().map(|o| o.0).collect::<Vec<_>>(),
            vec![0, 500, 1000]
        );
        let bad = SimParams::new(1e-3, 1e-2, 1e-2, 1, 1.0).observing(&[0.12345]);
        assert!(bad.observation_steps().is_err());
        assert!(SimParams::new(1e-3, 0.0, 1e-2, 1, 1.0).validate().is_err());
    }

    #[test]
    fn random_rounding_is_unbiased() {
        let mut rng = stream(5, Purpose::Control, 0);
        let n = 200_000;
        let mean = (0..n)
            .map(|_| round_random(2.3, &mut rng) as f64)
            .sum::<f64>()
            / n as f64;
        // sd of one draw is sqrt(0.21).
        assert!((mean - 2.3).abs() < 3.0 * (0.21f64 / n as f64).sqrt());
        assert_eq!(round_random(4.0, &mut rng), 4);
    }

    #[test]
    fn replicates_are_order_stable() {
        let job = |i: usize, rng: &mut SimRng| Ok((i, rng.random::<u64>()));
        let a = run_replicates(50, 9, Purpose::Control, job).unwrap();
        let b = run_replicates(50, 9, Purpose::Control, job).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, r)| r.0 == i));
    }
}
