//! The skeleton: a branching diffusion moving under the h-transformed
//! motion, branching at rate `q(x)` into `n >= 2` offspring with law `p_n(x)`.
//!
//! When used inside the dressed construction each skeleton particle also
//! emits immigrants. All skeleton event streams are simulated by thinning:
//! candidates arrive at the constant rate `q_bar + d_bar + c_bar` and are
//! accepted with probability `rate(x) / bound`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::mechanism::{BranchingMechanism, MartingaleFunction, OffspringLaw};
use crate::motion::Motion;

use super::events::{Event, EventKind};
use super::SimParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonParticle {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub position: f64,
    pub birth_time: f64,
    pub death_time: Option<f64>,
    pub offspring_count: Option<usize>,
    #[serde(skip)]
    clock: f64,
}

impl SkeletonParticle {
    fn new<R: Rng + ?Sized>(
        id: u64,
        parent_id: Option<u64>,
        position: f64,
        birth_time: f64,
        rng: &mut R,
    ) -> Self {
        SkeletonParticle {
            id,
            parent_id,
            position,
            birth_time,
            death_time: None,
            offspring_count: None,
            clock: rng.sample(Exp1),
        }
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean)
            .map(|p| p.sample(rng) as u64)
            .unwrap_or(0)
    } else {
        0
    }
}

/// Poisson random field with intensity `w mu`: `Poisson(w(x) m)` particles
/// at every atom `(x, m)`. Ids are assigned from 0.
pub fn sample_initial_skeleton<R: Rng + ?Sized>(
    mu: &AtomicMeasure,
    w: &MartingaleFunction,
    rng: &mut R,
) -> Vec<SkeletonParticle> {
    let mut out = Vec::new();
    for &(x, m) in mu.atoms() {
        let k = poisson(w.eval(x) * m, rng);
        for _ in 0..k {
            let id = out.len() as u64;
            out.push(SkeletonParticle::new(id, None, x, 0.0, rng));
        }
    }
    out
}

/// Mark of a jump of size `u` at `x`: `k ~ Poisson(w(x) u)`.
pub fn thin_jump<R: Rng + ?Sized>(x: f64, u: f64, w: &MartingaleFunction, rng: &mut R) -> u64 {
    poisson(w.eval(x) * u, rng)
}

/// Immigration rates along a skeleton particle, from the untilted mechanism.
#[derive(Clone, Debug)]
pub(crate) struct Immigration {
    mech: BranchingMechanism,
    epsilon: f64,
    d_bar: f64,
    c_bar: f64,
}

impl Immigration {
    pub fn new(mech: &BranchingMechanism, w: &MartingaleFunction, epsilon: f64) -> Self {
        let grid = mech.domain().grid();
        let homogeneous = mech.is_homogeneous() && w.function().is_constant();
        let inflate = if homogeneous { 1.0 } else { 1.01 };
        let nodes: Vec<f64> = if homogeneous {
            vec![grid.nodes[0]]
        } else {
            crate::domain::DomainSpec {
                grid_nodes: 8 * grid.len(),
                ..mech.domain().clone()
            }
            .grid()
            .nodes
        };
        let mut imm = Immigration {
            mech: mech.clone(),
            epsilon,
            d_bar: 0.0,
            c_bar: 0.0,
        };
        for &x in &nodes {
            let (d, c) = imm.rates(w, x);
            imm.d_bar = imm.d_bar.max(d);
            imm.c_bar = imm.c_bar.max(c);
        }
        imm.d_bar *= inflate;
        imm.c_bar *= inflate;
        imm
    }

    /// `(sum_j c_j u_j e^{-w u_j}, 2 beta / epsilon)` at `x`.
    fn rates(&self, w: &MartingaleFunction, x: f64) -> (f64, f64) {
        let wx = w.eval(x);
        let d = self
            .mech
            .jumps()
            .iter()
            .map(|a| a.intensity.eval(x) * a.size * (-wx * a.size).exp())
            .sum();
        (d, 2.0 * self.mech.beta().eval(x) / self.epsilon)
    }

    fn pick_atom<R: Rng + ?Sized>(&self, w: &MartingaleFunction, x: f64, rng: &mut R) -> f64 {
        let wx = w.eval(x);
        let weights: Vec<(f64, f64)> = self
            .mech
            .jumps()
            .iter()
            .map(|a| (a.intensity.eval(x) * a.size * (-wx * a.size).exp(), a.size))
            .collect();
        let total: f64 = weights.iter().map(|p| p.0).sum();
        let mut u = rng.random::<f64>() * total;
        for &(wt, size) in &weights {
            if u < wt {
                return size;
            }
            u -= wt;
        }
        weights.last().map(|p| p.1).unwrap_or(0.0)
    }
}

/// Mass launched by a skeleton event inside the current step.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Launch {
    pub x: f64,
    pub mass: f64,
    /// Time left in the step after the launch.
    pub remaining: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct SkeletonDynamics {
    law: OffspringLaw,
    motion: Motion,
    w: MartingaleFunction,
    immigration: Option<Immigration>,
    q_bar: f64,
    total_bar: f64,
    exact: bool,
    ceiling: usize,
}

impl SkeletonDynamics {
    pub fn new(
        law: &OffspringLaw,
        motion: &Motion,
        immigration: Option<Immigration>,
        dt: f64,
        ceiling: usize,
    ) -> Result<Self> {
        let q_bar = law.q_bar();
        if q_bar > 0.0 && dt > 0.1 / q_bar {
            return Err(Error::precondition(format!(
                "dt = {dt} exceeds 0.1 / q_bar = {}",
                0.1 / q_bar
            )));
        }
        let (d_bar, c_bar) = immigration
            .as_ref()
            .map(|i| (i.d_bar, i.c_bar))
            .unwrap_or((0.0, 0.0));
        let w = law.martingale_function().clone();
        Ok(SkeletonDynamics {
            exact: law.homogeneous().is_some(),
            law: law.clone(),
            motion: motion.clone(),
            w,
            immigration,
            q_bar,
            total_bar: q_bar + d_bar + c_bar,
            ceiling,
        })
    }

    /// Thinning acceptance; rejects bounds that were exceeded.
    fn accept<R: Rng + ?Sized>(&self, rate: f64, bound: f64, rng: &mut R) -> Result<bool> {
        if self.exact {
            return Ok(true);
        }
        let p = rate / bound;
        if p > 1.0 + 1e-12 {
            return Err(Error::model(format!(
                "thinning bound {bound} below the local rate {rate}"
            )));
        }
        Ok(rng.random::<f64>() < p)
    }

    /// One step from `t` to `t + dt`.
    #[allow(clippy::too_many_arguments)]
    pub fn step<R: Rng + ?Sized>(
        &self,
        particles: &mut Vec<SkeletonParticle>,
        next_id: &mut u64,
        t: f64,
        dt: f64,
        events: &mut Vec<Event>,
        launches: &mut Vec<(Launch, EventKind)>,
        history: Option<&mut Vec<SkeletonParticle>>,
        rng: &mut R,
    ) -> Result<()> {
        let mut history = history;
        let mut next = Vec::with_capacity(particles.len());
        let mut stack: Vec<(SkeletonParticle, f64)> = Vec::new();
        for p in particles.drain(..) {
            stack.push((p, dt));
            while let Some((mut p, rem)) = stack.pop() {
                let need = self.total_bar * rem;
                if p.clock > need || self.total_bar == 0.0 {
                    p.clock -= need;
                    let drift = self.motion.htransform_drift(&self.w, p.position);
                    let z: f64 = rng.sample(StandardNormal);
                    match self.motion.displace(p.position, drift, rem, z) {
                        Some(y) => {
                            p.position = y;
                            next.push(p);
                        }
                        None => {
                            p.death_time = Some(t + dt);
                            if let Some(h) = history.as_deref_mut() {
                                h.push(p);
                            }
                        }
                    }
                    continue;
                }
                let rem = rem - p.clock / self.total_bar;
                let now = t + dt - rem;
                let x = p.position;
                let u = rng.random::<f64>() * self.total_bar;
                if u < self.q_bar {
                    if !self.accept(self.law.q(x), self.q_bar, rng)? {
                        p.clock = rng.sample(Exp1);
                        stack.push((p, rem));
                        continue;
                    }
                    let local = self.law.local(x);
                    let n = local.offspring_from_uniform(rng.random());
                    let y = local.branch_mass_from_uniform(n, rng.random());
                    events.push(Event {
                        time: now,
                        kind: EventKind::Branch,
                        site: x,
                        mass: n as f64,
                        source: p.id,
                    });
                    if y > 0.0 {
                        events.push(Event {
                            time: now,
                            kind: EventKind::BranchPoint,
                            site: x,
                            mass: y,
                            source: p.id,
                        });
                        launches.push((
                            Launch {
                                x,
                                mass: y,
                                remaining: rem,
                            },
                            EventKind::BranchPoint,
                        ));
                    }
                    for _ in 0..n {
                        let child = SkeletonParticle::new(*next_id, Some(p.id), x, now, rng);
                        *next_id += 1;
                        stack.push((child, rem));
                    }
                    p.death_time = Some(now);
                    p.offspring_count = Some(n);
                    if let Some(h) = history.as_deref_mut() {
                        h.push(p);
                    }
                    if next.len() + stack.len() > self.ceiling {
                        return Err(Error::PopulationCeiling {
                            ceiling: self.ceiling,
                            population: next.len() + stack.len(),
                            time: now,
                        });
                    }
                    continue;
                }
                let imm = self
                    .immigration
                    .as_ref()
                    .expect("immigration candidates need immigration rates");
                let (d, c) = if self.exact {
                    (0.0, 0.0)
                } else {
                    imm.rates(&self.w, x)
                };
                if u < self.q_bar + imm.d_bar {
                    if self.accept(d, imm.d_bar, rng)? {
                        let size = imm.pick_atom(&self.w, x, rng);
                        events.push(Event {
                            time: now,
                            kind: EventKind::Discontinuous,
                            site: x,
                            mass: size,
                            source: p.id,
                        });
                        launches.push((
                            Launch {
                                x,
                                mass: size,
                                remaining: rem,
                            },
                            EventKind::Discontinuous,
                        ));
                    }
                } else if self.accept(c, imm.c_bar, rng)? {
                    events.push(Event {
                        time: now,
                        kind: EventKind::Continuous,
                        site: x,
                        mass: imm.epsilon,
                        source: p.id,
                    });
                    launches.push((
                        Launch {
                            x,
                            mass: imm.epsilon,
                            remaining: rem,
                        },
                        EventKind::Continuous,
                    ));
                }
                p.clock = rng.sample(Exp1);
                stack.push((p, rem));
            }
        }
        *particles = next;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SkeletonPath {
    pub times: Vec<f64>,
    /// Alive particles at each observation time.
    pub states: Vec<Vec<SkeletonParticle>>,
    /// Branch events, plus branch-point marks where `eta` puts mass.
    pub events: Vec<Event>,
    /// Particles that branched or were killed, with death data filled in.
    pub history: Vec<SkeletonParticle>,
}

impl SkeletonPath {
    pub fn final_population(&self) -> usize {
        self.states.last().map(|s| s.len()).unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct SkeletonModel {
    dynamics: SkeletonDynamics,
    params: SimParams,
    observations: Vec<(usize, f64)>,
}

impl SkeletonModel {
    pub fn new(law: &OffspringLaw, motion: &Motion, params: &SimParams) -> Result<Self> {
        params.validate()?;
        if law.mechanism().domain() != motion.domain() {
            return Err(Error::GridMismatch(
                "offspring law and motion are defined on different domains".into(),
            ));
        }
        Ok(SkeletonModel {
            dynamics: SkeletonDynamics::new(
                law,
                motion,
                None,
                params.step_size(),
                params.population_ceiling,
            )?,
            observations: params.observation_steps()?,
            params: params.clone(),
        })
    }

    pub fn run<R: Rng + ?Sized>(
        &self,
        init: Vec<SkeletonParticle>,
        rng: &mut R,
    ) -> Result<SkeletonPath> {
        let dt = self.params.step_size();
        let mut particles = init;
        let mut next_id = particles.iter().map(|p| p.id + 1).max().unwrap_or(0);
        let mut events = Vec::new();
        let mut launches = Vec::new();
        let mut history = Vec::new();
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut obs = self.observations.iter().peekable();
        let mut step = 0;
        loop {
            while let Some(&&(k, t)) = obs.peek() {
                if k != step {
                    break;
                }
                times.push(t);
                states.push(particles.clone());
                obs.next();
            }
            if obs.peek().is_none() {
                break;
            }
            let t = step as f64 * dt;
            step += 1;
            self.dynamics.step(
                &mut particles,
                &mut next_id,
                t,
                dt,
                &mut events,
                &mut launches,
                Some(&mut history),
                rng,
            )?;
        }
        Ok(SkeletonPath {
            times,
            states,
            events,
            history,
        })
    }
}

/// Skeleton started from `init` over `[0, params.horizon]`.
pub fn simulate_skeleton<R: Rng + ?Sized>(
    law: &OffspringLaw,
    motion: &Motion,
    init: Vec<SkeletonParticle>,
    params: &SimParams,
    rng: &mut R,
) -> Result<SkeletonPath> {
    SkeletonModel::new(law, motion, params)?.run(init, rng)
}

/// `n` particles at `x` (ids `0..n`), with fresh clocks.
pub fn skeleton_at<R: Rng + ?Sized>(x: f64, n: usize, rng: &mut R) -> Vec<SkeletonParticle> {
    (0..n as u64)
        .map(|id| SkeletonParticle::new(id, None, x, 0.0, rng))
        .collect()
}
