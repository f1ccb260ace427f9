//! The spatial motion: a one-dimensional diffusion with generator
//! `L = a(x)/2 d^2/dx^2 + b(x) d/dx`, its h-transform by a martingale
//! function, and the finite-difference generator used by the PDE solvers.
//!
//! Noise is supplied by the caller so that this module holds no RNG state.

use crate::domain::{DomainMode, DomainSpec, Grid};
use crate::error::{Error, Result};
use crate::mechanism::MartingaleFunction;
use crate::spatial::SpatialFn;
use crate::tridiag::Tridiagonal;

#[derive(Clone, Debug)]
pub struct Motion {
    drift: SpatialFn,
    diffusion: SpatialFn,
    domain: DomainSpec,
    grid: Grid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathState {
    pub position: f64,
    pub time: f64,
    pub alive: bool,
    pub kill_time: Option<f64>,
}

impl PathState {
    pub fn new(position: f64, time: f64) -> Self {
        PathState {
            position,
            time,
            alive: true,
            kill_time: None,
        }
    }
}

impl Motion {
    /// `diffusion` is the variance coefficient `a(x)`; it must be
    /// non-negative and finite on the grid (zero gives deterministic motion).
    pub fn new(drift: SpatialFn, diffusion: SpatialFn, domain: DomainSpec) -> Result<Self> {
        domain.validate()?;
        let grid = domain.grid();
        drift.check_finite(&grid, "drift b")?;
        diffusion.check_finite(&grid, "diffusion a")?;
        if let Some(x) = grid
            .nodes
            .iter()
            .copied()
            .find(|&x| diffusion.eval(x) < 0.0)
        {
            return Err(Error::model(format!(
                "diffusion coefficient a must be non-negative, a({x}) = {}",
                diffusion.eval(x)
            )));
        }
        Ok(Motion {
            drift,
            diffusion,
            domain,
            grid,
        })
    }

    /// Brownian motion with variance rate `a` and no drift.
    pub fn brownian(a: f64, domain: DomainSpec) -> Result<Self> {
        Self::new(SpatialFn::zero(), SpatialFn::constant(a), domain)
    }

    pub fn dimension(&self) -> usize {
        1
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn drift(&self) -> &SpatialFn {
        &self.drift
    }

    pub fn diffusion(&self) -> &SpatialFn {
        &self.diffusion
    }

    pub fn is_homogeneous(&self) -> bool {
        self.drift.is_constant() && self.diffusion.is_constant()
    }

    /// Same motion over a grid with half the spacing.
    pub fn refined(&self) -> Motion {
        let domain = self.domain.refined();
        Motion {
            grid: domain.grid(),
            domain,
            drift: self.drift.clone(),
            diffusion: self.diffusion.clone(),
        }
    }

    /// One Euler-Maruyama step of the base motion.
    pub fn step(&self, state: PathState, dt: f64, noise: f64) -> PathState {
        let x = state.position;
        let b = self.drift.eval(x);
        self.advance(state, b, dt, noise)
    }

    /// Drift of the h-transformed motion, `b + a w'/w`.
    pub fn htransform_drift(&self, w: &MartingaleFunction, x: f64) -> f64 {
        let b = self.drift.eval(x);
        if w.function().is_constant() {
            return b;
        }
        let (grad, _) = w.function().gradient_on(&self.grid, x);
        b + self.diffusion.eval(x) * grad / w.function().eval(x)
    }

    /// One Euler-Maruyama step of the motion under the h-transformed law.
    pub fn step_htransformed(
        &self,
        w: &MartingaleFunction,
        state: PathState,
        dt: f64,
        noise: f64,
    ) -> PathState {
        let b = self.htransform_drift(w, state.position);
        self.advance(state, b, dt, noise)
    }

    #[inline]
    fn advance(&self, state: PathState, drift: f64, dt: f64, noise: f64) -> PathState {
        debug_assert!(state.alive && dt > 0.0);
        let x = state.position;
        let sigma = self.diffusion.eval(x).sqrt();
        let y = x + drift * dt + sigma * dt.sqrt() * noise;
        let time = state.time + dt;
        match self.domain.mode {
            DomainMode::Torus => PathState {
                position: self.domain.wrap(y),
                time,
                alive: true,
                kill_time: None,
            },
            DomainMode::KilledInterval => {
                if self.domain.interior(y) {
                    PathState {
                        position: y,
                        time,
                        alive: true,
                        kill_time: None,
                    }
                } else {
                    PathState {
                        position: x,
                        time,
                        alive: false,
                        kill_time: Some(time),
                    }
                }
            }
        }
    }

    /// Position update used by the particle engines: returns the new
    /// position or `None` if the particle left a killed interval.
    #[inline]
    pub(crate) fn displace(&self, x: f64, drift: f64, dt: f64, noise: f64) -> Option<f64> {
        let sigma = if let Some(a) = self.diffusion.constant_value() {
            a.sqrt()
        } else {
            self.diffusion.eval(x).sqrt()
        };
        let y = x + drift * dt + sigma * dt.sqrt() * noise;
        match self.domain.mode {
            DomainMode::Torus => Some(self.domain.wrap(y)),
            DomainMode::KilledInterval => self.domain.interior(y).then_some(y),
        }
    }

    /// Tridiagonal stencil of the discrete generator: central second
    /// differences for the `a` term and central first differences for the
    /// `b` term. Periodic on the torus, zero ghost values on a killed interval.
    pub fn generator_stencil(&self) -> Tridiagonal {
        let h = self.grid.spacing;
        let n = self.grid.len();
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for (i, &x) in self.grid.nodes.iter().enumerate() {
            let a = self.diffusion.eval(x);
            let b = self.drift.eval(x);
            sub[i] = a / (2.0 * h * h) - b / (2.0 * h);
            diag[i] = -a / (h * h);
            sup[i] = a / (2.0 * h * h) + b / (2.0 * h);
        }
        Tridiagonal {
            sub,
            diag,
            sup,
            cyclic: self.domain.mode == DomainMode::Torus,
        }
    }

    pub fn discrete_generator(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} grid values, got {}",
                self.grid.len(),
                f.len()
            )));
        }
        let mut out = vec![0.0; f.len()];
        self.generator_stencil().apply(f, &mut out);
        Ok(out)
    }
}
