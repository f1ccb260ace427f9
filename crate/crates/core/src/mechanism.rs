//! Branching mechanisms with a finite atomic jump measure, the martingale
//! function `w`, the Esscher-tilted mechanism and the skeleton's branching
//! data.
//!
//! The mechanism is
//!
//! ```text
//! psi(x, z) = -alpha(x) z + beta(x) z^2 + sum_j c_j(x) (exp(-z u_j) - 1 + z u_j)
//! ```
//!
//! so every derived quantity (tilt, offspring law, branch-point law) is a
//! finite sum and needs no quadrature.

use std::sync::Arc;

use crate::domain::{DomainSpec, Grid};
use crate::error::{Error, Result};
use crate::motion::Motion;
use crate::spatial::SpatialFn;

#[derive(Clone, Debug)]
pub struct JumpAtom {
    pub size: f64,
    pub intensity: SpatialFn,
}

impl JumpAtom {
    pub fn new(size: f64, intensity: SpatialFn) -> Self {
        JumpAtom { size, intensity }
    }
}

#[derive(Clone, Debug)]
pub struct BranchingMechanism {
    alpha: SpatialFn,
    beta: SpatialFn,
    jumps: Vec<JumpAtom>,
    domain: DomainSpec,
}

/// Coefficients of a mechanism at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMechanism {
    pub alpha: f64,
    pub beta: f64,
    /// `(u_j, c_j)` pairs.
    pub jumps: Vec<(f64, f64)>,
}

impl LocalMechanism {
    /// Valid for every real `z` (the tilted mechanism is evaluated below 0).
    #[inline]
    pub fn psi(&self, z: f64) -> f64 {
        let mut v = -self.alpha * z + self.beta * z * z;
        for &(u, c) in &self.jumps {
            let y = z * u;
            v += c * ((-y).exp_m1() + y);
        }
        v
    }

    #[inline]
    pub fn psi_prime(&self, z: f64) -> f64 {
        let mut v = -self.alpha + 2.0 * self.beta * z;
        for &(u, c) in &self.jumps {
            v -= c * u * (-z * u).exp_m1();
        }
        v
    }
}

impl BranchingMechanism {
    pub fn new(
        alpha: SpatialFn,
        beta: SpatialFn,
        jumps: Vec<JumpAtom>,
        domain: &DomainSpec,
    ) -> Result<Self> {
        domain.validate()?;
        let grid = domain.grid();
        alpha.check_finite(&grid, "alpha")?;
        beta.check_finite(&grid, "beta")?;
        let beta_min = beta.min_on(&grid);
        if beta_min < 0.0 {
            return Err(Error::model(format!(
                "beta must be non-negative on the domain, min over grid is {beta_min}"
            )));
        }
        for (j, atom) in jumps.iter().enumerate() {
            if !(atom.size > 0.0 && atom.size.is_finite()) {
                return Err(Error::model(format!(
                    "jump atom {j}: size must be positive and finite, got {}",
                    atom.size
                )));
            }
            atom.intensity.check_finite(&grid, "jump intensity")?;
            let cmin = atom.intensity.min_on(&grid);
            if cmin < 0.0 {
                return Err(Error::model(format!(
                    "jump atom {j}: intensity must be non-negative, min over grid is {cmin}"
                )));
            }
        }
        let mech = BranchingMechanism {
            alpha,
            beta,
            jumps,
            domain: domain.clone(),
        };
        // sup_x sum_j c_j(x) (u_j ^ u_j^2) is finite for finite atom lists;
        // assert it numerically together with psi(x, 0) = 0.
        let kernel_sup = grid
            .nodes
            .iter()
            .map(|&x| {
                mech.jumps
                    .iter()
                    .map(|a| a.intensity.eval(x) * a.size.min(a.size * a.size))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        if !kernel_sup.is_finite() {
            return Err(Error::model("jump kernel (u ^ u^2) m(x, du) is unbounded"));
        }
        for &x in &grid.nodes {
            let v = mech.local(x).psi(0.0);
            if v != 0.0 {
                return Err(Error::model(format!("psi(x, 0) = {v} at x = {x}")));
            }
        }
        Ok(mech)
    }

    /// `psi(z) = -alpha z + beta z^2` with constant coefficients.
    pub fn quadratic(alpha: f64, beta: f64, domain: &DomainSpec) -> Result<Self> {
        Self::new(
            SpatialFn::constant(alpha),
            SpatialFn::constant(beta),
            vec![],
            domain,
        )
    }

    pub fn alpha(&self) -> &SpatialFn {
        &self.alpha
    }

    pub fn beta(&self) -> &SpatialFn {
        &self.beta
    }

    pub fn jumps(&self) -> &[JumpAtom] {
        &self.jumps
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn is_homogeneous(&self) -> bool {
        self.alpha.is_constant()
            && self.beta.is_constant()
            && self.jumps.iter().all(|a| a.intensity.is_constant())
    }

    /// Returns a copy bound to another domain with the same bounds
    /// (e.g. a refined grid).
    pub fn on_domain(&self, domain: &DomainSpec) -> BranchingMechanism {
        BranchingMechanism {
            domain: domain.clone(),
            ..self.clone()
        }
    }

    pub fn local(&self, x: f64) -> LocalMechanism {
        LocalMechanism {
            alpha: self.alpha.eval(x),
            beta: self.beta.eval(x),
            jumps: self
                .jumps
                .iter()
                .map(|a| (a.size, a.intensity.eval(x)))
                .collect(),
        }
    }

    pub fn eval_psi(&self, x: f64, z: f64) -> Result<f64> {
        self.check_args(x, z)?;
        Ok(self.local(x).psi(z))
    }

    pub fn eval_psi_prime(&self, x: f64, z: f64) -> Result<f64> {
        self.check_args(x, z)?;
        Ok(self.local(x).psi_prime(z))
    }

    fn check_args(&self, x: f64, z: f64) -> Result<()> {
        self.domain.check(x)?;
        if !(z >= 0.0 && z.is_finite()) {
            return Err(Error::precondition(format!(
                "psi is evaluated at z >= 0, got {z}"
            )));
        }
        Ok(())
    }

    /// Node-wise coefficient table for the PDE solvers.
    pub fn table(&self, grid: &Grid) -> Vec<LocalMechanism> {
        grid.nodes.iter().map(|&x| self.local(x)).collect()
    }
}

/// Unique positive root of a spatially homogeneous, supercritical mechanism,
/// found by bracketing on `[1e-12, z_hi]` (doubling `z_hi`) and bisection.
pub fn find_w_star(mech: &BranchingMechanism) -> Result<f64> {
    if !mech.is_homogeneous() {
        return Err(Error::precondition(
            "find_w_star needs spatially constant coefficients",
        ));
    }
    let local = mech.local(mech.domain().lower());
    if !(local.alpha > 0.0) {
        return Err(Error::model(format!(
            "mechanism is not supercritical: psi'(0) = {} >= 0",
            -local.alpha
        )));
    }
    let psi = |z: f64| local.psi(z);
    let mut lo = 1e-12;
    if psi(lo) >= 0.0 {
        return Err(Error::model("psi is not negative just above 0"));
    }
    let mut hi = 1.0;
    while psi(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::model(
                "psi has no positive root: it stays negative up to 1e12",
            ));
        }
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if psi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A strictly positive, bounded function `w` together with its
/// generator-residual certificate `sup |Lw - psi(., w)|` over the grid.
#[derive(Clone, Debug)]
pub struct MartingaleFunction {
    w: SpatialFn,
    residual_sup: f64,
    tolerance: f64,
    lower_bound: f64,
    bound: f64,
    validated: bool,
}

impl MartingaleFunction {
    /// Wraps a positive function without the residual check. Such a value is
    /// only usable where validity is not required (h-transform drift,
    /// negative controls); `tilt` and `build_offspring_law` reject it.
    pub fn unvalidated(w: SpatialFn, grid: &Grid) -> Result<Self> {
        let (lower_bound, bound) = positivity(&w, grid)?;
        Ok(MartingaleFunction {
            w,
            residual_sup: f64::NAN,
            tolerance: 0.0,
            lower_bound,
            bound,
            validated: false,
        })
    }

    pub fn function(&self) -> &SpatialFn {
        &self.w
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.w.eval(x)
    }

    pub fn residual_sup(&self) -> f64 {
        self.residual_sup
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn is_validated(&self) -> bool {
        self.validated
    }

    fn require_valid(&self, what: &str) -> Result<()> {
        if self.validated && self.residual_sup <= self.tolerance {
            Ok(())
        } else {
            Err(Error::precondition(format!(
                "{what} requires a validated martingale function"
            )))
        }
    }
}

fn positivity(w: &SpatialFn, grid: &Grid) -> Result<(f64, f64)> {
    w.check_finite(grid, "w")?;
    let lower = w.min_on(grid);
    if !(lower > 0.0) {
        return Err(Error::precondition(format!(
            "martingale function must be strictly positive on the grid, min is {lower}"
        )));
    }
    Ok((lower, w.bound_on(grid)))
}

/// Certifies `w` by the discrete generator equation `Lw = psi(., w)`.
pub fn validate_w(
    mech: &BranchingMechanism,
    motion: &Motion,
    w_candidate: SpatialFn,
    tol: f64,
) -> Result<MartingaleFunction> {
    if mech.domain() != motion.domain() {
        return Err(Error::GridMismatch(
            "mechanism and motion are defined on different domains".into(),
        ));
    }
    let grid = motion.grid();
    let (lower_bound, bound) = positivity(&w_candidate, grid)?;
    let values = w_candidate.sample(grid);
    let lw = motion.discrete_generator(&values)?;
    let profile: Vec<f64> = grid
        .nodes
        .iter()
        .zip(values.iter().zip(&lw))
        .map(|(&x, (&wx, &lwx))| (lwx - mech.local(x).psi(wx)).abs())
        .collect();
    let (worst, residual_sup) = profile
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
    if !(residual_sup <= tol) {
        return Err(Error::InvalidMartingaleFunction {
            residual_sup,
            tolerance: tol,
            worst_x: grid.nodes[worst],
            profile,
        });
    }
    Ok(MartingaleFunction {
        w: w_candidate,
        residual_sup,
        tolerance: tol,
        lower_bound,
        bound,
        validated: true,
    })
}

/// Esscher tilt `psi*(x, z) = psi(x, z + w(x)) - psi(x, w(x))`, expressed as a
/// mechanism of the same form with `alpha* = -psi'(x, w(x))`, the same `beta`
/// and atom weights `c_j e^{-w u_j}`.
pub fn tilt(mech: &BranchingMechanism, w: &MartingaleFunction) -> Result<BranchingMechanism> {
    w.require_valid("tilt")?;
    let wf = w.function().clone();
    let alpha_star = match (mech.is_homogeneous(), wf.constant_value()) {
        (true, Some(wc)) => SpatialFn::constant(-mech.local(mech.domain().lower()).psi_prime(wc)),
        _ => {
            let m = mech.clone();
            let wf = wf.clone();
            SpatialFn::from_fn("alpha*", move |x| -m.local(x).psi_prime(wf.eval(x)))
        }
    };
    let jumps = mech
        .jumps()
        .iter()
        .map(|a| {
            let u = a.size;
            let intensity = match (a.intensity.constant_value(), wf.constant_value()) {
                (Some(c), Some(wc)) => SpatialFn::constant(c * (-wc * u).exp()),
                _ => {
                    let c = a.intensity.clone();
                    let wf = wf.clone();
                    SpatialFn::from_fn("c*", move |x| c.eval(x) * (-wf.eval(x) * u).exp())
                }
            };
            JumpAtom::new(u, intensity)
        })
        .collect();
    BranchingMechanism::new(alpha_star, mech.beta().clone(), jumps, mech.domain())
}

/// Skeleton branching data at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOffspring {
    /// Branching rate `q(x)`.
    pub q: f64,
    /// `probs[k]` is `p_{k+2}(x)`.
    pub probs: Vec<f64>,
    /// Probability mass beyond `n_max`, summed directly from the tail terms.
    pub tail_mass: f64,
    /// `eta[k]` is the branch-point mass law for `n = k + 2`, as
    /// `(mass, probability)` pairs over `{0} ∪ {u_j}`.
    pub eta: Vec<Vec<(f64, f64)>>,
    cdf: Vec<f64>,
}

impl LocalOffspring {
    pub fn n_max(&self) -> usize {
        self.probs.len() + 1
    }

    pub fn p(&self, n: usize) -> f64 {
        if n < 2 || n > self.n_max() {
            0.0
        } else {
            self.probs[n - 2]
        }
    }

    pub fn eta(&self, n: usize) -> &[(f64, f64)] {
        &self.eta[n - 2]
    }

    pub fn mean_offspring(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| (k + 2) as f64 * p)
            .sum()
    }

    /// Offspring number from a uniform variate (inverse CDF; the truncated
    /// tail is folded into `n_max`).
    pub fn offspring_from_uniform(&self, u: f64) -> usize {
        let k = self.cdf.partition_point(|&c| c <= u);
        k.min(self.probs.len() - 1) + 2
    }

    /// Branch-point mass from a uniform variate.
    pub fn branch_mass_from_uniform(&self, n: usize, u: f64) -> f64 {
        let law = self.eta(n);
        let mut acc = 0.0;
        for &(y, p) in law {
            acc += p;
            if u < acc {
                return y;
            }
        }
        law.last().map(|&(y, _)| y).unwrap_or(0.0)
    }
}

#[derive(Clone, Debug)]
pub struct OffspringLaw {
    mech: BranchingMechanism,
    w: MartingaleFunction,
    n_max: usize,
    q_bar: f64,
    homogeneous: Option<Arc<LocalOffspring>>,
}

impl OffspringLaw {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Upper bound on `q` used by the thinning scheme.
    pub fn q_bar(&self) -> f64 {
        self.q_bar
    }

    pub fn martingale_function(&self) -> &MartingaleFunction {
        &self.w
    }

    pub fn mechanism(&self) -> &BranchingMechanism {
        &self.mech
    }

    pub fn homogeneous(&self) -> Option<&Arc<LocalOffspring>> {
        self.homogeneous.as_ref()
    }

    pub fn q(&self, x: f64) -> f64 {
        branch_rate(&self.mech.local(x), self.w.eval(x))
    }

    pub fn p(&self, x: f64, n: usize) -> f64 {
        self.local(x).p(n)
    }

    pub fn tail_mass(&self, x: f64) -> f64 {
        self.local(x).tail_mass
    }

    pub fn eta(&self, x: f64, n: usize) -> Vec<(f64, f64)> {
        self.local(x).eta(n).to_vec()
    }

    pub fn local(&self, x: f64) -> Arc<LocalOffspring> {
        match &self.homogeneous {
            Some(l) => l.clone(),
            None => Arc::new(local_offspring(
                &self.mech.local(x),
                self.w.eval(x),
                self.n_max,
            )),
        }
    }
}

#[inline]
fn branch_rate(m: &LocalMechanism, w: f64) -> f64 {
    m.psi_prime(w) - m.psi(w) / w
}

fn local_offspring(m: &LocalMechanism, w: f64, n_max: usize) -> LocalOffspring {
    let q = branch_rate(m, w).max(0.0);
    let wq = w * q;
    let count = n_max - 1;
    if !(wq > 0.0) {
        // No branching; the law is never sampled.
        let mut probs = vec![0.0; count];
        probs[0] = 1.0;
        return LocalOffspring {
            q,
            cdf: cumulative(&probs),
            probs,
            tail_mass: 0.0,
            eta: vec![vec![(0.0, 1.0)]; count],
        };
    }
    // term_j(n) = c_j e^{-w u_j} (w u_j)^n / n!
    let mut terms: Vec<f64> = m.jumps.iter().map(|&(u, c)| c * (-w * u).exp()).collect();
    let advance = |terms: &mut Vec<f64>, n: usize| {
        for (t, &(u, _)) in terms.iter_mut().zip(&m.jumps) {
            *t *= w * u / n as f64;
        }
    };
    advance(&mut terms, 1);
    let mut probs = Vec::with_capacity(count);
    let mut eta = Vec::with_capacity(count);
    for n in 2..=n_max {
        advance(&mut terms, n);
        let diffusive = if n == 2 { m.beta * w * w } else { 0.0 };
        let numer = diffusive + terms.iter().sum::<f64>();
        probs.push(numer / wq);
        let mut law = Vec::new();
        if numer > 0.0 {
            if diffusive > 0.0 {
                law.push((0.0, diffusive / numer));
            }
            for (&t, &(u, _)) in terms.iter().zip(&m.jumps) {
                if t > 0.0 {
                    law.push((u, t / numer));
                }
            }
        } else {
            law.push((0.0, 1.0));
        }
        eta.push(law);
    }
    // Tail beyond n_max, summed until the Poisson terms are negligible.
    let mut tail = 0.0;
    let peak = m.jumps.iter().map(|&(u, _)| w * u).fold(0.0, f64::max);
    let mut n = n_max;
    loop {
        n += 1;
        advance(&mut terms, n);
        let s: f64 = terms.iter().sum();
        tail += s;
        if (n as f64 > peak + 10.0 && s <= 1e-20 * (tail + 1e-300))
            || s == 0.0
            || n > n_max + 100_000
        {
            break;
        }
    }
    LocalOffspring {
        q,
        cdf: cumulative(&probs),
        probs,
        tail_mass: tail / wq,
        eta,
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Builds `q`, `p_n` and `eta_n`. `n_max` is extended until the truncated
/// tail mass is at most `tail_tol` at every grid node.
pub fn build_offspring_law(
    mech: &BranchingMechanism,
    w: &MartingaleFunction,
    n_max: usize,
    tail_tol: f64,
) -> Result<OffspringLaw> {
    w.require_valid("build_offspring_law")?;
    if n_max < 2 {
        return Err(Error::precondition(format!(
            "n_max must be >= 2, got {n_max}"
        )));
    }
    let grid = mech.domain().grid();
    let locals: Vec<LocalMechanism> = mech.table(&grid);
    for (&x, m) in grid.nodes.iter().zip(&locals) {
        let q = branch_rate(m, w.eval(x));
        if q < -1e-12 {
            return Err(Error::model(format!(
                "skeleton branching rate q({x}) = {q} < 0"
            )));
        }
    }
    let mut n_max = n_max;
    loop {
        let worst = grid
            .nodes
            .iter()
            .zip(&locals)
            .map(|(&x, m)| local_offspring(m, w.eval(x), n_max).tail_mass)
            .fold(0.0, f64::max);
        if worst <= tail_tol {
            break;
        }
        n_max += 1;
        if n_max > 10_000 {
            return Err(Error::model(format!(
                "offspring tail mass {worst} does not fall below {tail_tol}"
            )));
        }
    }
    let homogeneous_w = w.function().constant_value();
    let (homogeneous, q_bar) = match (mech.is_homogeneous(), homogeneous_w) {
        (true, Some(wc)) => {
            let l = local_offspring(&locals[0], wc, n_max);
            let q = l.q;
            (Some(Arc::new(l)), q)
        }
        _ => {
            // Sup over a finer sampling, inflated to cover positions between
            // sample points.
            let fine = DomainSpec {
                grid_nodes: 8 * grid.len(),
                ..mech.domain().clone()
            }
            .grid();
            let sup = fine
                .nodes
                .iter()
                .map(|&x| branch_rate(&mech.local(x), w.eval(x)))
                .fold(0.0, f64::max);
            (None, sup * 1.01)
        }
    };
    Ok(OffspringLaw {
        mech: mech.clone(),
        w: w.clone(),
        n_max,
        q_bar,
        homogeneous,
    })
}
