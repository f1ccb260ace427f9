//! Deterministic solvers for the Laplace-exponent equations.
//!
//! All equations have the form `d/dt y = L y + R(x, y)` and are advanced by
//! Strang splitting: a Crank-Nicolson half step of the discrete generator,
//! a full explicit RK4 step of the pointwise reaction, and another
//! generator half step. Terminal-value problems (`f^T`, `h^T`) are obtained
//! by reversing initial-value solves in time.
//!
//! `v_{f,h}` is integrated through `g = w e^{-v}` jointly with `u*_f`:
//!
//! ```text
//! d/dt u* = L u* - psi*(x, u*)
//! d/dt g  = L g  + psi*(x, u* - g) - psi*(x, u*),     g(., 0) = w e^{-h}
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::Grid;
use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::mechanism::{tilt, BranchingMechanism, LocalMechanism, MartingaleFunction};
use crate::motion::Motion;
use crate::spatial::SpatialFn;
use crate::tridiag::{Factorized, Tridiagonal};

/// Default ceiling on `sup u` before a solve is aborted.
pub const BLOW_UP_CEILING: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldTag {
    U,
    UStar,
    FT,
    V,
    HT,
    Kappa,
}

impl FieldTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldTag::U => "u",
            FieldTag::UStar => "u_star",
            FieldTag::FT => "f_T",
            FieldTag::V => "v",
            FieldTag::HT => "h_T",
            FieldTag::Kappa => "kappa",
        }
    }
}

/// Non-negative, bounded initial or terminal data.
#[derive(Clone, Debug)]
pub struct TestFunction {
    f: SpatialFn,
    tag: String,
}

impl TestFunction {
    pub fn new(f: SpatialFn) -> Self {
        let tag = f.label().to_string();
        TestFunction { f, tag }
    }

    pub fn tagged(f: SpatialFn, tag: impl Into<String>) -> Self {
        TestFunction { f, tag: tag.into() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(SpatialFn::constant(c))
    }

    /// Piecewise-linear interpolant of grid values.
    pub fn from_grid_values(grid: &Grid, values: Vec<f64>, tag: impl Into<String>) -> Self {
        let g = grid.clone();
        let tag = tag.into();
        TestFunction {
            f: SpatialFn::from_fn(tag.clone(), move |x| g.interpolate(&values, x)),
            tag,
        }
    }

    pub fn function(&self) -> &SpatialFn {
        &self.f
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.f.eval(x)
    }

    fn sample_checked(&self, grid: &Grid) -> Result<Vec<f64>> {
        let v = self.f.sample(grid);
        if let Some((i, &bad)) = v
            .iter()
            .enumerate()
            .find(|(_, y)| !(y.is_finite() && **y >= 0.0))
        {
            return Err(Error::precondition(format!(
                "test function {} must be non-negative and finite, got {bad} at x = {}",
                self.tag, grid.nodes[i]
            )));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug)]
pub struct SolverField {
    pub tag: FieldTag,
    pub grid: Grid,
    pub times: Vec<f64>,
    /// `values[k][i]` is the value at `times[k]`, node `i`.
    pub values: Vec<Vec<f64>>,
    /// Human-readable description of the data the field was solved from.
    pub source: String,
}

impl SolverField {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn final_slice(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    /// Index of the time node nearest to `t`.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let dt = self.horizon() / self.steps() as f64;
        let k = (t / dt).round();
        if !(k >= 0.0 && k <= self.steps() as f64) || (k * dt - t).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::precondition(format!(
                "t = {t} is not a time node of the field"
            )));
        }
        Ok(k as usize)
    }

    /// Interpolated value at time node `k`.
    pub fn at(&self, k: usize, x: f64) -> f64 {
        self.grid.interpolate(&self.values[k], x)
    }

    /// `<field(., t_k), mu>`
    pub fn pair(&self, k: usize, mu: &AtomicMeasure) -> f64 {
        mu.pair(|x| self.at(k, x))
    }

    pub fn sup(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `t -> T - t`, keeping the same time nodes.
    pub fn time_reversed(&self, tag: FieldTag) -> SolverField {
        let mut values = self.values.clone();
        values.reverse();
        SolverField {
            tag,
            grid: self.grid.clone(),
            times: self.times.clone(),
            values,
            source: self.source.clone(),
        }
    }

    /// CSV with columns `t,x,value,field`; every `time_stride`-th time node
    /// is written (the final node always is).
    pub fn write_csv<W: Write>(&self, mut out: W, time_stride: usize) -> std::io::Result<()> {
        let stride = time_stride.max(1);
        writeln!(out, "t,x,value,field")?;
        let last = self.steps();
        for (k, (t, row)) in self.times.iter().zip(&self.values).enumerate() {
            if k % stride != 0 && k != last {
                continue;
            }
            for (x, v) in self.grid.nodes.iter().zip(row) {
                writeln!(out, "{t},{x},{v},{}", self.tag.as_str())?;
            }
        }
        Ok(())
    }
}

/// `u_f`: `d/dt u = L u - psi(x, u)`, `u(., 0) = f`.
pub fn solve_u(
    mech: &BranchingMechanism,
    motion: &Motion,
    f: &TestFunction,
    horizon: f64,
    dt: f64,
) -> Result<SolverField> {
    check_setup(mech, motion, horizon, dt)?;
    let grid = motion.grid();
    let init = f.sample_checked(grid)?;
    let table = mech.table(grid);
    let (times, hist) = march(
        motion,
        [init],
        horizon,
        dt,
        |i, [u]| [-table[i].psi(u)],
        |t, [u]| nonneg_and_bounded("u", t, u),
    )?;
    let [values] = hist;
    Ok(SolverField {
        tag: FieldTag::U,
        grid: grid.clone(),
        times,
        values,
        source: f.tag().to_string(),
    })
}

/// `u*_f`: `solve_u` under the tilted mechanism.
pub fn solve_u_star(
    mech: &BranchingMechanism,
    w: &MartingaleFunction,
    motion: &Motion,
    f: &TestFunction,
    horizon: f64,
    dt: f64,
) -> Result<SolverField> {
    let star = tilt(mech, w)?;
    let mut field = solve_u(&star, motion, f, horizon, dt)?;
    field.tag = FieldTag::UStar;
    Ok(field)
}

/// `f^T(x, t) = u*_f(x, T - t)`.
pub fn solve_ft(
    mech: &BranchingMechanism,
    w: &MartingaleFunction,
    motion: &Motion,
    f: &TestFunction,
    horizon: f64,
    dt: f64,
) -> Result<SolverField> {
    Ok(solve_u_star(mech, w, motion, f, horizon, dt)?.time_reversed(FieldTag::FT))
}

/// `u*_f` and `v_{f,h}` from one joint solve.
#[derive(Clone, Debug)]
pub struct TransportFields {
    pub u_star: SolverField,
    pub v: SolverField,
}

impl TransportFields {
    pub fn f_t(&self) -> SolverField {
        self.u_star.time_reversed(FieldTag::FT)
    }

    pub fn h_t(&self) -> SolverField {
        self.v.time_reversed(FieldTag::HT)
    }
}

pub fn solve_transport(
    mech: &BranchingMechanism,
    w: &MartingaleFunction,
    motion: &Motion,
    f: &TestFunction,
    h: &TestFunction,
    horizon: f64,
    dt: f64,
) -> Result<TransportFields> {
    check_setup(mech, motion, horizon, dt)?;
    let star = tilt(mech, w)?;
    let grid = motion.grid();
    let u0 = f.sample_checked(grid)?;
    let h0 = h.sample_checked(grid)?;
    let wv = w.function().sample(grid);
    let g0: Vec<f64> = wv.iter().zip(&h0).map(|(w, h)| w * (-h).exp()).collect();
    let table: Vec<LocalMechanism> = star.table(grid);
    let slack = (10.0 * w.residual_sup() * horizon).max(1e-9) * w.bound().max(1.0);
    let (times, hist) = march(
        motion,
        [u0, g0],
        horizon,
        dt,
        |i, [u, g]| {
            let m = &table[i];
            let pu = m.psi(u);
            [-pu, m.psi(u - g) - pu]
        },
        |t, [u, g]| {
            nonneg_and_bounded("u*", t, u)?;
            for (i, gi) in g.iter_mut().enumerate() {
                if !(*gi > 0.0 && *gi <= wv[i] + slack) {
                    return Err(Error::SchemeFailure {
                        equation: "v",
                        detail: format!(
                            "g = w e^(-v) left (0, w] at t = {t}, x = {}: g = {gi}, w = {}",
                            grid.nodes[i], wv[i]
                        ),
                    });
                }
                *gi = gi.min(wv[i]);
            }
            Ok(())
        },
    )?;
    let [u_hist, g_hist] = hist;
    let v_values = g_hist
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(&wv)
                .map(|(g, w)| (-(g / w).ln()).max(0.0))
                .collect()
        })
        .collect();
    let source = format!("f = {}, h = {}", f.tag(), h.tag());
    Ok(TransportFields {
        u_star: SolverField {
            tag: FieldTag::UStar,
            grid: grid.clone(),
            times: times.clone(),
            values: u_hist,
            source: f.tag().to_string(),
        },
        v: SolverField {
            tag: FieldTag::V,
            grid: grid.clone(),
            times,
            values: v_values,
            source,
        },
    })
}

/// `v_{f,h}` with `e^{-v}` in `[0, 1]`.
pub fn solve_v(
    mech: &BranchingMechanism,
    w: &MartingaleFunction,
    motion: &Motion,
    f: &TestFunction,
    h: &TestFunction,
    horizon: f64,
    dt: f64,
) -> Result<SolverField> {
    Ok(solve_transport(mech, w, motion, f, h, horizon, dt)?.v)
}

/// `kappa^T = f^T + w (1 - e^{-h^T})`.
pub fn kappa(ft: &SolverField, ht: &SolverField, w: &MartingaleFunction) -> Result<SolverField> {
    if ft.grid != ht.grid || ft.times.len() != ht.times.len() {
        return Err(Error::GridMismatch(
            "f^T and h^T live on different grids or time nodes".into(),
        ));
    }
    if ft
        .times
        .iter()
        .zip(&ht.times)
        .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::GridMismatch(
            "f^T and h^T have different time nodes".into(),
        ));
    }
    let wv = w.function().sample(&ft.grid);
    let values = ft
        .values
        .iter()
        .zip(&ht.values)
        .map(|(fr, hr)| {
            fr.iter()
                .zip(hr)
                .zip(&wv)
                .map(|((f, h), w)| f - w * (-h).exp_m1())
                .collect()
        })
        .collect();
    Ok(SolverField {
        tag: FieldTag::Kappa,
        grid: ft.grid.clone(),
        times: ft.times.clone(),
        values,
        source: ht.source.clone(),
    })
}

fn check_setup(mech: &BranchingMechanism, motion: &Motion, horizon: f64, dt: f64) -> Result<()> {
    if mech.domain() != motion.domain() {
        return Err(Error::GridMismatch(
            "mechanism and motion are defined on different domains".into(),
        ));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::precondition(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !(dt > 0.0 && dt <= horizon) {
        return Err(Error::precondition(format!(
            "time step must lie in (0, T], got {dt}"
        )));
    }
    Ok(())
}

fn nonneg_and_bounded(equation: &'static str, t: f64, u: &mut [f64]) -> Result<()> {
    let mut sup = 0.0f64;
    for v in u.iter() {
        if !v.is_finite() {
            return Err(Error::SchemeFailure {
                equation,
                detail: format!("non-finite value at t = {t}"),
            });
        }
        sup = sup.max(v.abs());
    }
    if sup > BLOW_UP_CEILING {
        return Err(Error::BlowUp {
            equation,
            value: sup,
            ceiling: BLOW_UP_CEILING,
            time: t,
        });
    }
    let tol = 1e-9 * sup.max(1.0);
    for v in u.iter_mut() {
        if *v < 0.0 {
            if *v < -tol {
                return Err(Error::SchemeFailure {
                    equation,
                    detail: format!("negative value {v} at t = {t}"),
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Crank-Nicolson propagator for a generator half step of length `dt / 2`.
struct HalfStep {
    explicit: Tridiagonal,
    implicit: Factorized,
}

impl HalfStep {
    fn new(motion: &Motion, dt: f64) -> Self {
        let a = motion.generator_stencil();
        let c = dt / 4.0;
        let scaled = |sign: f64| Tridiagonal {
            sub: a.sub.iter().map(|v| sign * c * v).collect(),
            diag: a.diag.iter().map(|v| 1.0 + sign * c * v).collect(),
            sup: a.sup.iter().map(|v| sign * c * v).collect(),
            cyclic: a.cyclic,
        };
        HalfStep {
            explicit: scaled(1.0),
            implicit: scaled(-1.0).factorize(),
        }
    }

    fn apply(&self, y: &mut [f64], scratch: &mut [f64]) {
        self.explicit.apply(y, scratch);
        self.implicit.solve(scratch, y);
    }
}

type History<const N: usize> = (Vec<f64>, [Vec<Vec<f64>>; N]);

/// Strang-split time marching of `N` coupled components sharing the
/// generator. `check` runs after every step and may clamp values.
fn march<const N: usize>(
    motion: &Motion,
    init: [Vec<f64>; N],
    horizon: f64,
    dt: f64,
    reaction: impl Fn(usize, [f64; N]) -> [f64; N],
    mut check: impl FnMut(f64, &mut [Vec<f64>; N]) -> Result<()>,
) -> Result<History<N>> {
    let steps = (horizon / dt).round().max(1.0) as usize;
    let dt = horizon / steps as f64;
    let n = motion.grid().len();
    let half = HalfStep::new(motion, dt);
    let mut state = init;
    let mut scratch = vec![0.0; n];
    let mut times = Vec::with_capacity(steps + 1);
    let mut hist: [Vec<Vec<f64>>; N] = std::array::from_fn(|_| Vec::with_capacity(steps + 1));
    times.push(0.0);
    for (h, s) in hist.iter_mut().zip(&state) {
        h.push(s.clone());
    }
    let add =
        |y: [f64; N], k: [f64; N], c: f64| -> [f64; N] { std::array::from_fn(|j| y[j] + c * k[j]) };
    for step in 1..=steps {
        for comp in state.iter_mut() {
            half.apply(comp, &mut scratch);
        }
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let y: [f64; N] = std::array::from_fn(|j| state[j][i]);
            let k1 = reaction(i, y);
            let k2 = reaction(i, add(y, k1, dt / 2.0));
            let k3 = reaction(i, add(y, k2, dt / 2.0));
            let k4 = reaction(i, add(y, k3, dt));
            for j in 0..N {
                state[j][i] = y[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        for comp in state.iter_mut() {
            half.apply(comp, &mut scratch);
        }
        let t = step as f64 * dt;
        check(t, &mut state)?;
        times.push(t);
        for (h, s) in hist.iter_mut().zip(&state) {
            h.push(s.clone());
        }
    }
    Ok((times, hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::mechanism::{find_w_star, validate_w, JumpAtom};
    use std::f64::consts::PI;

    fn torus(n: usize) -> DomainSpec {
        DomainSpec::torus(0.0, 2.0 * PI, n).unwrap()
    }

    fn quadratic(alpha: f64, beta: f64, d: &DomainSpec) -> BranchingMechanism {
        BranchingMechanism::quadratic(alpha, beta, d).unwrap()
    }

    fn w_of(mech: &BranchingMechanism, motion: &Motion) -> MartingaleFunction {
        let w = find_w_star(mech).unwrap();
        validate_w(mech, motion, SpatialFn::constant(w), 1e-10).unwrap()
    }

    /// Adaptive RK4 with step halving for `y' = g(y)`.
    fn ode_oracle(g: impl Fn(f64) -> f64, y0: f64, t: f64) -> f64 {
        let rk4 = |y: f64, h: f64| {
            let k1 = g(y);
            let k2 = g(y + h / 2.0 * k1);
            let k3 = g(y + h / 2.0 * k2);
            let k4 = g(y + h * k3);
            y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        };
        let (mut s, mut y, mut h) = (0.0f64, y0, 0.1f64);
        while s < t {
            h = h.min(t - s);
            let full = rk4(y, h);
            let halves = rk4(rk4(y, h / 2.0), h / 2.0);
            if (full - halves).abs() < 1e-13 * (1.0 + y.abs()) {
                y = halves;
                s += h;
                h *= 1.5;
            } else {
                h /= 2.0;
            }
        }
        y
    }

    #[test]
    fn zero_data_stays_zero() {
        let d = torus(101);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let u = solve_u(
            &quadratic(1.0, 1.0, &d),
            &motion,
            &TestFunction::constant(0.0),
            1.0,
            1e-2,
        )
        .unwrap();
        assert_eq!(u.sup(), 0.0);
    }

    #[test]
    fn constant_data_matches_scalar_ode() {
        let d = torus(201);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = BranchingMechanism::new(
            SpatialFn::constant(1.0),
            SpatialFn::constant(1.0),
            vec![JumpAtom::new(1.0, SpatialFn::constant(1.0))],
            &d,
        )
        .unwrap();
        let c = 0.7;
        let u = solve_u(&mech, &motion, &TestFunction::constant(c), 1.0, 1e-3).unwrap();
        let oracle = ode_oracle(|z| -(-z + z * z + ((-z).exp() - 1.0 + z)), c, 1.0);
        let last = u.final_slice();
        for v in last {
            assert!((v - last[0]).abs() < 1e-10);
            assert!((v - oracle).abs() < 1e-4 * oracle);
        }
    }

    #[test]
    fn quadratic_tilted_closed_form() {
        // psi*(z) = alpha z + beta z^2 solved by
        // u(t) = alpha c e^{-alpha t} / (alpha + beta c (1 - e^{-alpha t})).
        let (alpha, beta, c) = (1.0, 1.0, 0.8);
        let closed = |t: f64| {
            let e = (-alpha * t).exp();
            alpha * c * e / (alpha + beta * c * (1.0 - e))
        };
        // The derivative by hand, -alpha u - u (beta c alpha e^{-alpha t}) / D,
        // equals -psi*(u).
        for &t in &[0.0, 0.3, 1.0] {
            let e = (-alpha * t).exp();
            let den = alpha + beta * c * (1.0 - e);
            let du = -alpha * closed(t) - closed(t) * beta * c * alpha * e / den;
            let u = closed(t);
            assert!((du + alpha * u + beta * u * u).abs() < 1e-14);
        }
        let d = torus(201);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = quadratic(alpha, beta, &d);
        let w = w_of(&mech, &motion);
        let u = solve_u_star(&mech, &w, &motion, &TestFunction::constant(c), 1.0, 1e-3).unwrap();
        for k in [250, 500, 1000] {
            let t = u.times[k];
            assert!((u.slice(k)[17] - closed(t)).abs() < 1e-6 * closed(t));
        }
    }

    /// Heat semigroup on the torus via a naive DFT of the samples.
    fn heat_oracle(samples: &[f64], a: f64, t: f64) -> Vec<f64> {
        let n = samples.len();
        let nf = n as f64;
        let mut out = vec![0.0; n];
        for k in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, s) in samples.iter().enumerate() {
                let th = -2.0 * PI * (k * j) as f64 / nf;
                re += s * th.cos();
                im += s * th.sin();
            }
            let wave = if k <= n / 2 { k as f64 } else { k as f64 - nf };
            let damp = (-0.5 * a * wave * wave * t).exp();
            for (j, o) in out.iter_mut().enumerate() {
                let th = 2.0 * PI * (k * j) as f64 / nf;
                *o += damp * (re * th.cos() - im * th.sin()) / nf;
            }
        }
        out
    }

    #[test]
    fn pure_diffusion_matches_spectral_oracle() {
        let d = torus(201);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let f = SpatialFn::gaussian_bump(0.0, 1.0, PI, 0.5);
        let u = solve_u(
            &quadratic(0.0, 0.0, &d),
            &motion,
            &TestFunction::new(f.clone()),
            0.5,
            1e-3,
        )
        .unwrap();
        let exact = heat_oracle(&f.sample(motion.grid()), 1.0, 0.5);
        let peak = exact.iter().cloned().fold(0.0, f64::max);
        for (v, e) in u.final_slice().iter().zip(&exact) {
            assert!((v - e).abs() < 1e-3 * peak, "{v} vs {e}");
        }
    }

    #[test]
    fn agrees_with_picard_iteration_on_mild_form() {
        // u(t) = P_t f - int_0^t P_{t-s} psi(u(s)) ds, three Picard sweeps
        // with trapezoidal time quadrature on a coarse grid.
        let n = 48;
        let d = torus(n);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = quadratic(1.0, 1.0, &d);
        let f = SpatialFn::cosine(0.5, 0.3, 1.0, 0.0);
        let horizon = 0.1;
        let m = 40;
        let ts: Vec<f64> = (0..=m).map(|j| horizon * j as f64 / m as f64).collect();
        let f0 = f.sample(motion.grid());
        let psi = |z: f64| -z + z * z;
        let mut iterate: Vec<Vec<f64>> = ts.iter().map(|&t| heat_oracle(&f0, 1.0, t)).collect();
        for _ in 0..3 {
            let reaction: Vec<Vec<f64>> = iterate
                .iter()
                .map(|u| u.iter().map(|&z| psi(z)).collect())
                .collect();
            let mut next = Vec::with_capacity(ts.len());
            for (j, &t) in ts.iter().enumerate() {
                let mut u = heat_oracle(&f0, 1.0, t);
                let ds = horizon / m as f64;
                for i in 0..=j {
                    if j == 0 {
                        break;
                    }
                    let wgt = if i == 0 || i == j { 0.5 } else { 1.0 };
                    let p = heat_oracle(&reaction[i], 1.0, t - ts[i]);
                    for (ui, pi) in u.iter_mut().zip(&p) {
                        *ui -= wgt * ds * pi;
                    }
                }
                next.push(u);
            }
            iterate = next;
        }
        let imex = solve_u(&mech, &motion, &TestFunction::new(f), horizon, 1e-3).unwrap();
        for (a, b) in imex.final_slice().iter().zip(iterate.last().unwrap()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn comparison_principle() {
        let d = torus(101);
        let motion = Motion::new(
            SpatialFn::cosine(0.0, 0.3, 1.0, 0.0),
            SpatialFn::constant(0.8),
            d.clone(),
        )
        .unwrap();
        let mech = quadratic(1.0, 1.0, &d);
        let w = w_of(&mech, &motion);
        let f1 = TestFunction::new(SpatialFn::cosine(0.5, 0.3, 1.0, 0.0));
        let f2 = TestFunction::new(SpatialFn::cosine(0.9, 0.3, 1.0, 0.0));
        let u1 = solve_u_star(&mech, &w, &motion, &f1, 1.0, 1e-2).unwrap();
        let u2 = solve_u_star(&mech, &w, &motion, &f2, 1.0, 1e-2).unwrap();
        for (r1, r2) in u1.values.iter().zip(&u2.values) {
            assert!(r1.iter().zip(r2).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn terminal_reversal() {
        let d = torus(101);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = quadratic(1.0, 1.0, &d);
        let w = w_of(&mech, &motion);
        let f = TestFunction::new(SpatialFn::cosine(0.5, 0.3, 1.0, 0.0));
        let u = solve_u_star(&mech, &w, &motion, &f, 1.0, 1e-2).unwrap();
        let ft = solve_ft(&mech, &w, &motion, &f, 1.0, 1e-2).unwrap();
        assert_eq!(ft.final_slice(), &f.function().sample(motion.grid())[..]);
        assert_eq!(ft.slice(0), u.final_slice());
        assert_eq!(ft.slice(50), u.slice(50));
        assert_eq!(ft.slice(30), u.slice(70));
    }

    #[test]
    fn zero_data_gives_zero_v_when_w_is_valid() {
        let d = DomainSpec::killed_interval(0.0, PI, 201).unwrap();
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = BranchingMechanism::new(
            SpatialFn::cosine(0.5, 1.0, 1.0, PI / 2.0),
            SpatialFn::constant(1.0),
            vec![],
            &d,
        )
        .unwrap();
        let w = validate_w(
            &mech,
            &motion,
            SpatialFn::cosine(0.0, 1.0, 1.0, PI / 2.0),
            1e-4,
        )
        .unwrap();
        let zero = TestFunction::constant(0.0);
        let v = solve_v(&mech, &w, &motion, &zero, &zero, 1.0, 1e-3).unwrap();
        // The residual of w is O(h^2); v inherits it.
        assert!(v.sup() < 10.0 * w.residual_sup(), "sup v = {}", v.sup());

        let d = torus(201);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = quadratic(1.0, 1.0, &d);
        let w = w_of(&mech, &motion);
        let v = solve_v(&mech, &w, &motion, &zero, &zero, 1.0, 1e-3).unwrap();
        assert!(v.sup() < 1e-6);
    }

    #[test]
    fn v_is_monotone_in_h_and_bounded_for_large_h() {
        let d = torus(101);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = quadratic(1.0, 1.0, &d);
        let w = w_of(&mech, &motion);
        let f = TestFunction::new(SpatialFn::cosine(0.3, 0.2, 1.0, 0.0));
        let h1 = TestFunction::new(SpatialFn::cosine(0.5, 0.4, 2.0, 0.0));
        let h2 = TestFunction::new(SpatialFn::cosine(1.0, 0.4, 2.0, 0.0));
        let v1 = solve_v(&mech, &w, &motion, &f, &h1, 1.0, 1e-2).unwrap();
        let v2 = solve_v(&mech, &w, &motion, &f, &h2, 1.0, 1e-2).unwrap();
        for (r1, r2) in v1.values.iter().zip(&v2.values) {
            assert!(r1.iter().zip(r2).all(|(a, b)| a <= b));
        }
        let big = TestFunction::constant(10.0);
        let v = solve_v(&mech, &w, &motion, &f, &big, 1.0, 1e-2).unwrap();
        assert!(v.values.iter().flatten().all(|&x| x >= 0.0));
        let e0: f64 = (-v.slice(0)[0]).exp();
        assert!(e0 <= (-10.0f64).exp() * (1.0 + 1e-12));
    }

    #[test]
    fn v_semigroup_property() {
        let d = torus(101);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = quadratic(1.0, 1.0, &d);
        let w = w_of(&mech, &motion);
        let f = TestFunction::new(SpatialFn::cosine(0.3, 0.2, 1.0, 0.0));
        let h = TestFunction::new(SpatialFn::cosine(1.0, 0.5, 1.0, 1.0));
        let full = solve_transport(&mech, &w, &motion, &f, &h, 1.0, 1e-2).unwrap();
        let first = solve_transport(&mech, &w, &motion, &f, &h, 0.5, 1e-2).unwrap();
        let grid = motion.grid();
        let f_mid =
            TestFunction::from_grid_values(grid, first.u_star.final_slice().to_vec(), "u*(T/2)");
        let h_mid = TestFunction::from_grid_values(grid, first.v.final_slice().to_vec(), "v(T/2)");
        let second = solve_v(&mech, &w, &motion, &f_mid, &h_mid, 0.5, 1e-2).unwrap();
        for (a, b) in second.final_slice().iter().zip(full.v.final_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn kappa_definitions() {
        let d = torus(51);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = quadratic(1.0, 1.0, &d);
        let w = w_of(&mech, &motion);
        let f = TestFunction::new(SpatialFn::cosine(0.3, 0.2, 1.0, 0.0));
        let zero = TestFunction::constant(0.0);
        let ft0 = solve_ft(&mech, &w, &motion, &f, 1.0, 1e-2).unwrap();
        let mut ht0 = ft0.time_reversed(FieldTag::HT);
        ht0.values.iter_mut().flatten().for_each(|v| *v = 0.0);
        let k = kappa(&ft0, &ht0, &w).unwrap();
        assert_eq!(k.values, ft0.values);
        let h = TestFunction::new(SpatialFn::cosine(1.0, 0.5, 1.0, 1.0));
        let t1 = solve_transport(&mech, &w, &motion, &f, &h, 1.0, 1e-2).unwrap();
        let (ft, ht) = (t1.f_t(), t1.h_t());
        let k = kappa(&ft, &ht, &w).unwrap();
        for j in [0, 40, 100] {
            for i in [0, 13, 50] {
                let naive = ft.values[j][i] + w.eval(0.0) * (1.0 - (-ht.values[j][i]).exp());
                assert!((k.values[j][i] - naive).abs() < 1e-14);
            }
        }
        // h -> infinity with f = 0: kappa -> w.
        let big = TestFunction::constant(40.0);
        let t2 = solve_transport(&mech, &w, &motion, &zero, &big, 1.0, 1e-2).unwrap();
        let k = kappa(&t2.f_t(), &t2.h_t(), &w).unwrap();
        assert!(k
            .final_slice()
            .iter()
            .all(|v| (v - w.eval(0.0)).abs() < 1e-12));

        let other = solve_transport(&mech, &w, &motion, &f, &h, 0.5, 1e-2).unwrap();
        assert!(matches!(
            kappa(&ft, &other.h_t(), &w),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn transport_identity_exact_on_constant_w_torus() {
        let d = torus(101);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = quadratic(1.0, 1.0, &d);
        let w = w_of(&mech, &motion);
        let f = SpatialFn::cosine(0.5, 0.3, 1.0, 0.0);
        let h = SpatialFn::cosine(1.0, 0.5, 1.0, 1.0);
        let tr = solve_transport(
            &mech,
            &w,
            &motion,
            &TestFunction::new(f.clone()),
            &TestFunction::new(h.clone()),
            1.0,
            1e-2,
        )
        .unwrap();
        let k = kappa(&tr.f_t(), &tr.h_t(), &w).unwrap();
        let phi = SpatialFn::from_fn("phi", move |x| f.eval(x) + 1.0 - (-h.eval(x)).exp());
        let u = solve_u(&mech, &motion, &TestFunction::new(phi), 1.0, 1e-2).unwrap();
        for (a, b) in k.slice(0).iter().zip(u.final_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_changes_functional_little() {
        let d = torus(201);
        let motion = Motion::new(
            SpatialFn::cosine(0.0, 0.3, 1.0, 0.0),
            SpatialFn::constant(1.0),
            d.clone(),
        )
        .unwrap();
        let mech = quadratic(1.0, 1.0, &d);
        let f = TestFunction::new(SpatialFn::gaussian_bump(0.1, 1.0, 2.0, 0.5));
        let mu = AtomicMeasure::new(vec![(PI / 2.0, 0.5), (1.5 * PI, 0.5)]).unwrap();
        let coarse = solve_u(&mech, &motion, &f, 1.0, 1e-3).unwrap();
        let fine_motion = motion.refined();
        let fine = solve_u(
            &mech.on_domain(fine_motion.domain()),
            &fine_motion,
            &f,
            1.0,
            5e-4,
        )
        .unwrap();
        let (a, b) = (
            coarse.pair(coarse.steps(), &mu),
            fine.pair(fine.steps(), &mu),
        );
        assert!((a - b).abs() < 1e-3 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn blow_up_and_bad_input() {
        let d = torus(51);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let mech = quadratic(10.0, 0.0, &d);
        assert!(matches!(
            solve_u(&mech, &motion, &TestFunction::constant(1.0), 2.0, 1e-2),
            Err(Error::BlowUp { .. })
        ));
        let neg = TestFunction::new(SpatialFn::constant(-1.0));
        assert!(matches!(
            solve_u(&quadratic(1.0, 1.0, &d), &motion, &neg, 1.0, 1e-2),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn csv_export() {
        let d = torus(5);
        let motion = Motion::brownian(1.0, d.clone()).unwrap();
        let u = solve_u(
            &quadratic(1.0, 1.0, &d),
            &motion,
            &TestFunction::constant(0.5),
            0.1,
            0.05,
        )
        .unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,value,field");
        assert_eq!(lines.len(), 1 + 3 * 5);
        assert!(lines[1].starts_with("0,0,0.5,u"));
    }
}
