//! Branching-particle approximation of the `(P, psi)`-superprocess.
//!
//! Each particle carries mass `delta`. With `alpha_eff = alpha - sum_j c_j u_j`
//! a particle at `x`
//!
//! * splits in two at rate `r2 = beta/delta + alpha_eff/2`,
//! * dies at rate `r0 = r2 - alpha_eff`,
//! * for every jump atom, spawns about `u_j/delta` particles at rate
//!   `c_j delta`.
//!
//! The rescaled system then has log-Laplace exponent
//! `(r2 (e^{-delta z} - 1) + r0 (e^{delta z} - 1))/delta + sum_j c_j (e^{-u_j z} - 1)`,
//! which agrees with `psi` up to `O(delta^2 z^3)`. When `beta/delta` is too
//! small to carry `|alpha_eff|/2` the split and death rates are raised
//! together so that the mean stays exact.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::mechanism::{BranchingMechanism, LocalMechanism};
use crate::motion::Motion;

use super::{round_random, SimParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct MassParticle {
    pub x: f64,
    /// Component label: 0 for the particles started from the initial
    /// measure, otherwise the immigrant it descends from.
    pub tag: u32,
    clock: f64,
}

impl MassParticle {
    pub fn new<R: Rng + ?Sized>(x: f64, tag: u32, rng: &mut R) -> Self {
        MassParticle {
            x,
            tag,
            clock: rng.sample(Exp1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LocalRates {
    split: f64,
    death: f64,
    /// `(rate, mass)` per jump atom.
    jumps: Vec<(f64, f64)>,
    total: f64,
}

impl LocalRates {
    fn new(m: &LocalMechanism, delta: f64) -> Self {
        let alpha_eff = m.alpha - m.jumps.iter().map(|&(u, c)| c * u).sum::<f64>();
        let split = (m.beta / delta + 0.5 * alpha_eff).max(alpha_eff.max(0.0));
        let death = split - alpha_eff;
        let jumps: Vec<(f64, f64)> = m.jumps.iter().map(|&(u, c)| (c * delta, u)).collect();
        let total = split + death + jumps.iter().map(|j| j.0).sum::<f64>();
        LocalRates {
            split,
            death,
            jumps,
            total,
        }
    }
}

/// Pre-computed particle dynamics for one mechanism and motion.
#[derive(Clone, Debug)]
pub(crate) struct MassDynamics {
    mech: BranchingMechanism,
    motion: Motion,
    delta: f64,
    ceiling: usize,
    homogeneous: Option<LocalRates>,
    drift: Option<f64>,
}

#[derive(Debug, Default)]
pub(crate) struct MassPool {
    pub particles: Vec<MassParticle>,
    next: Vec<MassParticle>,
    stack: Vec<(MassParticle, f64)>,
}

impl MassPool {
    pub fn measure(&self, delta: f64) -> AtomicMeasure {
        self.particles.iter().map(|p| (p.x, delta)).collect()
    }
}

impl MassDynamics {
    pub fn new(
        mech: &BranchingMechanism,
        motion: &Motion,
        delta: f64,
        ceiling: usize,
    ) -> Result<Self> {
        if mech.domain() != motion.domain() {
            return Err(Error::GridMismatch(
                "mechanism and motion are defined on different domains".into(),
            ));
        }
        if !(delta > 0.0) {
            return Err(Error::precondition(format!(
                "delta must be positive, got {delta}"
            )));
        }
        let homogeneous = mech
            .is_homogeneous()
            .then(|| LocalRates::new(&mech.local(mech.domain().lower()), delta));
        Ok(MassDynamics {
            mech: mech.clone(),
            motion: motion.clone(),
            delta,
            ceiling,
            homogeneous,
            drift: motion.drift().constant_value(),
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[inline]
    fn total_rate(&self, x: f64) -> f64 {
        match &self.homogeneous {
            Some(r) => r.total,
            None => LocalRates::new(&self.mech.local(x), self.delta).total,
        }
    }

    fn rates(&self, x: f64) -> LocalRates {
        match &self.homogeneous {
            Some(r) => r.clone(),
            None => LocalRates::new(&self.mech.local(x), self.delta),
        }
    }

    /// Adds about `mass/delta` particles at `x`.
    pub fn launch<R: Rng + ?Sized>(
        &self,
        x: f64,
        mass: f64,
        tag: u32,
        remaining: f64,
        pool: &mut Vec<(MassParticle, f64)>,
        rng: &mut R,
    ) {
        let k = round_random(mass / self.delta, rng);
        for _ in 0..k {
            pool.push((MassParticle::new(x, tag, rng), remaining));
        }
    }

    pub fn seed<R: Rng + ?Sized>(&self, mu: &AtomicMeasure, pool: &mut MassPool, rng: &mut R) {
        for &(x, m) in mu.atoms() {
            let k = round_random(m / self.delta, rng);
            for _ in 0..k {
                pool.particles.push(MassParticle::new(x, 0, rng));
            }
        }
    }

    /// Advances every particle over `dt` and every arrival over its
    /// remaining time. `t` is the time at the end of the step (for errors).
    pub fn step<R: Rng + ?Sized>(
        &self,
        pool: &mut MassPool,
        arrivals: &mut Vec<(MassParticle, f64)>,
        dt: f64,
        t: f64,
        rng: &mut R,
    ) -> Result<()> {
        let MassPool {
            particles,
            next,
            stack,
        } = pool;
        next.clear();
        for p in particles.drain(..) {
            stack.push((p, dt));
            self.drain(stack, next, t, rng)?;
        }
        for a in arrivals.drain(..) {
            stack.push(a);
            self.drain(stack, next, t, rng)?;
        }
        std::mem::swap(particles, next);
        Ok(())
    }

    fn drain<R: Rng + ?Sized>(
        &self,
        stack: &mut Vec<(MassParticle, f64)>,
        out: &mut Vec<MassParticle>,
        t: f64,
        rng: &mut R,
    ) -> Result<()> {
        while let Some((mut p, rem)) = stack.pop() {
            let rate = self.total_rate(p.x);
            let need = rate * rem;
            if p.clock > need || rate == 0.0 {
                p.clock -= need;
                if self.displace(&mut p, rem, rng) {
                    out.push(p);
                    if out.len() > self.ceiling {
                        return Err(Error::PopulationCeiling {
                            ceiling: self.ceiling,
                            population: out.len(),
                            time: t,
                        });
                    }
                }
                continue;
            }
            let rem = rem - p.clock / rate;
            let r = self.rates(p.x);
            let mut u = rng.random::<f64>() * r.total;
            if u < r.split {
                let child = MassParticle::new(p.x, p.tag, rng);
                p.clock = rng.sample(Exp1);
                stack.push((p, rem));
                stack.push((child, rem));
                continue;
            }
            u -= r.split;
            if u < r.death {
                continue;
            }
            u -= r.death;
            let mut size = r.jumps.last().map(|j| j.1).unwrap_or(0.0);
            for &(rate_j, u_j) in &r.jumps {
                if u < rate_j {
                    size = u_j;
                    break;
                }
                u -= rate_j;
            }
            p.clock = rng.sample(Exp1);
            stack.push((p, rem));
            let k = round_random(size / self.delta, rng);
            for _ in 0..k {
                stack.push((MassParticle::new(p.x, p.tag, rng), rem));
            }
            if stack.len() > self.ceiling {
                return Err(Error::PopulationCeiling {
                    ceiling: self.ceiling,
                    population: stack.len(),
                    time: t,
                });
            }
        }
        Ok(())
    }

    /// Euler-Maruyama move; false if the particle was killed.
    #[inline]
    fn displace<R: Rng + ?Sized>(&self, p: &mut MassParticle, dt: f64, rng: &mut R) -> bool {
        if dt <= 0.0 {
            return true;
        }
        let b = match self.drift {
            Some(b) => b,
            None => self.motion.drift().eval(p.x),
        };
        let z: f64 = rng.sample(StandardNormal);
        match self.motion.displace(p.x, b, dt, z) {
            Some(y) => {
                p.x = y;
                true
            }
            None => false,
        }
    }
}

/// Measure-valued states of one replicate at the observation times.
#[derive(Clone, Debug)]
pub struct SuperprocessPath {
    pub times: Vec<f64>,
    pub states: Vec<AtomicMeasure>,
}

impl SuperprocessPath {
    pub fn final_state(&self) -> &AtomicMeasure {
        self.states.last().unwrap()
    }

    /// State at an observation time.
    pub fn at(&self, t: f64) -> Option<&AtomicMeasure> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() < 1e-9)
            .map(|k| &self.states[k])
    }
}

/// Validated superprocess set-up shared by all replicates.
#[derive(Clone, Debug)]
pub struct SuperprocessModel {
    dynamics: MassDynamics,
    params: SimParams,
    observations: Vec<(usize, f64)>,
}

impl SuperprocessModel {
    pub fn new(mech: &BranchingMechanism, motion: &Motion, params: &SimParams) -> Result<Self> {
        params.validate()?;
        Ok(SuperprocessModel {
            dynamics: MassDynamics::new(mech, motion, params.delta, params.population_ceiling)?,
            observations: params.observation_steps()?,
            params: params.clone(),
        })
    }

    pub fn run<R: Rng + ?Sized>(
        &self,
        mu: &AtomicMeasure,
        rng: &mut R,
    ) -> Result<SuperprocessPath> {
        mu.validate()?;
        mu.check_domain(self.dynamics.motion.domain())?;
        let delta = self.dynamics.delta();
        let dt = self.params.step_size();
        let mut pool = MassPool::default();
        self.dynamics.seed(mu, &mut pool, rng);
        let mut arrivals = Vec::new();
        let mut times = Vec::with_capacity(self.observations.len());
        let mut states = Vec::with_capacity(self.observations.len());
        let mut obs = self.observations.iter().peekable();
        let mut step = 0;
        loop {
            while let Some(&&(k, t)) = obs.peek() {
                if k != step {
                    break;
                }
                times.push(t);
                states.push(pool.measure(delta));
                obs.next();
            }
            if obs.peek().is_none() {
                break;
            }
            step += 1;
            if pool.particles.is_empty() {
                continue;
            }
            self.dynamics
                .step(&mut pool, &mut arrivals, dt, step as f64 * dt, rng)?;
        }
        Ok(SuperprocessPath { times, states })
    }
}

/// One replicate of the superprocess started from `mu`.
pub fn simulate_superprocess<R: Rng + ?Sized>(
    mech: &BranchingMechanism,
    motion: &Motion,
    mu: &AtomicMeasure,
    params: &SimParams,
    rng: &mut R,
) -> Result<SuperprocessPath> {
    SuperprocessModel::new(mech, motion, params)?.run(mu, rng)
}
