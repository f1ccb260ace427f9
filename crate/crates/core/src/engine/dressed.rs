//! The dressed skeleton `(Lambda, Z)`.
//!
//! `Lambda = X* + D`: `X*` is a `psi*`-superprocess from `mu`, and `D` is the
//! sum of `psi*`-superprocesses immigrated along the skeleton `Z`
//!
//! * continuously, mass `epsilon` at rate `2 beta(x) / epsilon`,
//! * at jumps, mass `u_j` at rate `c_j(x) u_j e^{-w(x) u_j}`,
//! * at branch points, mass `y ~ eta_n(x)` when `y > 0`.
//!
//! All mass particles share one pool. Each carries a component tag, 0 for
//! `X*` and `k` for the `k`-th immigrant, so the decomposition of `Lambda`
//! can be read off any snapshot.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::Result;
use crate::measure::AtomicMeasure;
use crate::mechanism::{build_offspring_law, tilt, BranchingMechanism, MartingaleFunction};
use crate::motion::Motion;

use super::events::Event;
use super::skeleton::{sample_initial_skeleton, Immigration, SkeletonDynamics, SkeletonParticle};
use super::superprocess::{MassDynamics, MassPool};
use super::SimParams;

#[derive(Clone, Debug)]
pub struct DressedState {
    pub time: f64,
    pub lambda: AtomicMeasure,
    /// Component tag of every atom of `lambda`, in the same order.
    pub components: Vec<u32>,
    pub skeleton: Vec<SkeletonParticle>,
}

impl DressedState {
    pub fn total_mass(&self) -> f64 {
        self.lambda.total_mass()
    }

    pub fn component_mass(&self, tag: u32) -> f64 {
        self.lambda
            .atoms()
            .iter()
            .zip(&self.components)
            .filter(|(_, &c)| c == tag)
            .map(|(a, _)| a.1)
            .sum()
    }

    pub fn x_star_mass(&self) -> f64 {
        self.component_mass(0)
    }

    /// Mass per component tag (tag 0 is `X*`).
    pub fn component_masses(&self) -> BTreeMap<u32, f64> {
        let mut out = BTreeMap::new();
        for (a, &c) in self.lambda.atoms().iter().zip(&self.components) {
            *out.entry(c).or_insert(0.0) += a.1;
        }
        out
    }

    /// Skeleton particles in `[lo, hi)`.
    pub fn skeleton_count_in(&self, lo: f64, hi: f64) -> usize {
        self.skeleton
            .iter()
            .filter(|p| p.position >= lo && p.position < hi)
            .count()
    }

    /// `<h, Z>`
    pub fn skeleton_pair(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.skeleton.iter().map(|p| h(p.position)).sum()
    }
}

#[derive(Clone, Debug)]
pub struct DressedPath {
    pub states: Vec<DressedState>,
    /// Branch and immigration events in order of occurrence.
    pub events: Vec<Event>,
}

impl DressedPath {
    pub fn final_state(&self) -> &DressedState {
        self.states.last().unwrap()
    }

    pub fn at(&self, t: f64) -> Option<&DressedState> {
        self.states.iter().find(|s| (s.time - t).abs() < 1e-9)
    }

    /// Immigration events with their component tags.
    pub fn immigrants(&self) -> impl Iterator<Item = (u32, &Event)> {
        self.events
            .iter()
            .filter(|e| e.kind.is_immigration())
            .enumerate()
            .map(|(i, e)| (i as u32 + 1, e))
    }
}

/// Validated dressed-skeleton set-up shared by all replicates.
#[derive(Clone, Debug)]
pub struct DressedModel {
    mass: MassDynamics,
    skeleton: SkeletonDynamics,
    w: MartingaleFunction,
    params: SimParams,
    observations: Vec<(usize, f64)>,
    n_max: usize,
}

impl DressedModel {
    pub fn new(
        mech: &BranchingMechanism,
        w: &MartingaleFunction,
        motion: &Motion,
        params: &SimParams,
    ) -> Result<Self> {
        Self::with_n_max(mech, w, motion, params, 2)
    }

    pub fn with_n_max(
        mech: &BranchingMechanism,
        w: &MartingaleFunction,
        motion: &Motion,
        params: &SimParams,
        n_max: usize,
    ) -> Result<Self> {
        params.validate()?;
        let star = tilt(mech, w)?;
        let law = build_offspring_law(mech, w, n_max, 1e-12)?;
        let immigration = Immigration::new(mech, w, params.epsilon);
        Ok(DressedModel {
            mass: MassDynamics::new(&star, motion, params.delta, params.population_ceiling)?,
            skeleton: SkeletonDynamics::new(
                &law,
                motion,
                Some(immigration),
                params.step_size(),
                params.population_ceiling,
            )?,
            w: w.clone(),
            observations: params.observation_steps()?,
            params: params.clone(),
            n_max: law.n_max(),
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// Offspring truncation actually used.
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn run<R: Rng + ?Sized>(&self, mu: &AtomicMeasure, rng: &mut R) -> Result<DressedPath> {
        mu.validate()?;
        let delta = self.mass.delta();
        let dt = self.params.step_size();
        let mut pool = MassPool::default();
        self.mass.seed(mu, &mut pool, rng);
        let mut skeleton = sample_initial_skeleton(mu, &self.w, rng);
        let mut next_id = skeleton.len() as u64;
        let mut events = Vec::new();
        let mut launches = Vec::new();
        let mut arrivals = Vec::new();
        let mut next_tag = 1u32;
        let mut states = Vec::with_capacity(self.observations.len());
        let mut obs = self.observations.iter().peekable();
        let mut step = 0;
        loop {
            while let Some(&&(k, t)) = obs.peek() {
                if k != step {
                    break;
                }
                states.push(DressedState {
                    time: t,
                    lambda: pool.measure(delta),
                    components: pool.particles.iter().map(|p| p.tag).collect(),
                    skeleton: skeleton.clone(),
                });
                obs.next();
            }
            if obs.peek().is_none() {
                break;
            }
            let t = step as f64 * dt;
            step += 1;
            if !skeleton.is_empty() {
                self.skeleton.step(
                    &mut skeleton,
                    &mut next_id,
                    t,
                    dt,
                    &mut events,
                    &mut launches,
                    None,
                    rng,
                )?;
            }
            for (launch, _) in launches.drain(..) {
                self.mass.launch(
                    launch.x,
                    launch.mass,
                    next_tag,
                    launch.remaining,
                    &mut arrivals,
                    rng,
                );
                next_tag += 1;
            }
            if !pool.particles.is_empty() || !arrivals.is_empty() {
                self.mass.step(&mut pool, &mut arrivals, dt, t + dt, rng)?;
            }
        }
        Ok(DressedPath { states, events })
    }
}

/// One replicate of the dressed skeleton started from `mu`.
pub fn simulate_dressed<R: Rng + ?Sized>(
    mech: &BranchingMechanism,
    w: &MartingaleFunction,
    motion: &Motion,
    mu: &AtomicMeasure,
    params: &SimParams,
    rng: &mut R,
) -> Result<DressedPath> {
    DressedModel::new(mech, w, motion, params)?.run(mu, rng)
}
