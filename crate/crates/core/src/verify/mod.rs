//! Estimators and hypothesis tests: Laplace functionals of simulated paths
//! against solver values, the w-martingale property, Poissonization of the
//! skeleton given the dressed mass, and skeleton growth.
//!
//! Every comparison uses the rule `|estimate - target| <= sigma * se + tol`,
//! with the discretization allowance `tol` kept separate from the
//! statistical band. Thresholds are recorded in each report.

pub mod stats;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::engine::{
    run_replicates, stream, DressedModel, DressedState, Purpose, SimParams, SuperprocessModel,
    SuperprocessPath,
};
use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::mechanism::{BranchingMechanism, MartingaleFunction, OffspringLaw};
use crate::motion::Motion;
use crate::solver::{solve_u, TestFunction};
use crate::spatial::SpatialFn;

/// Minimum replicate count for the Poissonization test.
pub const MIN_POISSON_REPLICATES: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Width of the statistical band in standard errors.
    pub sigma: f64,
    /// Absolute discretization allowance for Laplace comparisons.
    pub tol_disc: f64,
    /// KS rejection level.
    pub ks_alpha: f64,
    /// Correlation screen `|rho| <= corr_sigma / sqrt(M)`.
    pub corr_sigma: f64,
    /// Absolute allowance for the skeleton moment test.
    pub moment_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            sigma: 3.0,
            tol_disc: 2e-2,
            ks_alpha: 0.01,
            corr_sigma: 3.0,
            moment_tol: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    pub point_estimate: f64,
    pub std_error: f64,
    pub replicates: usize,
    pub functional: String,
}

impl LaplaceEstimate {
    /// Sample mean and standard error of `e^{-exponent}`.
    pub fn from_exponents(exponents: &[f64], functional: impl Into<String>) -> Result<Self> {
        let values: Vec<f64> = exponents.iter().map(|e| (-e).exp()).collect();
        let (point_estimate, std_error) = stats::mean_and_se(&values)?;
        Ok(LaplaceEstimate {
            point_estimate,
            std_error,
            replicates: values.len(),
            functional: functional.into(),
        })
    }
}

/// A simulated state whose Laplace exponent can be evaluated.
pub trait LaplaceSample {
    /// `<f, mass> + <h, skeleton>`; plain superprocess states ignore `h`.
    fn laplace_exponent(&self, f: &SpatialFn, h: &SpatialFn) -> f64;
}

impl LaplaceSample for AtomicMeasure {
    fn laplace_exponent(&self, f: &SpatialFn, _h: &SpatialFn) -> f64 {
        self.pair(|x| f.eval(x))
    }
}

impl LaplaceSample for DressedState {
    fn laplace_exponent(&self, f: &SpatialFn, h: &SpatialFn) -> f64 {
        self.lambda.pair(|x| f.eval(x)) + self.skeleton_pair(|x| h.eval(x))
    }
}

/// `E[e^{-<f, Lambda_T> - <h, Z_T>}]` from replicate states at time `T`.
pub fn mc_laplace<'a, S, I>(
    samples: I,
    f: &SpatialFn,
    h: &SpatialFn,
    horizon: f64,
) -> Result<LaplaceEstimate>
where
    S: LaplaceSample + 'a,
    I: IntoIterator<Item = &'a S>,
{
    let exps: Vec<f64> = samples
        .into_iter()
        .map(|s| s.laplace_exponent(f, h))
        .collect();
    LaplaceEstimate::from_exponents(
        &exps,
        format!("f = {}, h = {}, T = {horizon}", f.label(), h.label()),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_score: Option<f64>,
    pub pass: bool,
    pub thresholds: BTreeMap<String, f64>,
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

impl TestReport {
    pub fn new(name: impl Into<String>, statistic: f64, pass: bool) -> Self {
        TestReport {
            name: name.into(),
            statistic,
            p_value: None,
            z_score: None,
            pass,
            thresholds: BTreeMap::new(),
            details: BTreeMap::new(),
            fingerprint: None,
        }
    }

    pub fn threshold(mut self, key: &str, v: f64) -> Self {
        self.thresholds.insert(key.to_string(), v);
        self
    }

    pub fn detail(mut self, key: &str, v: f64) -> Self {
        self.details.insert(key.to_string(), v);
        self
    }

    pub fn with_fingerprint(mut self, fp: impl Into<String>) -> Self {
        self.fingerprint = Some(fp.into());
        self
    }

    /// One line for the summary table.
    pub fn summary_line(&self) -> String {
        let tail = match (self.p_value, self.z_score) {
            (Some(p), _) => format!("p = {p:.4}"),
            (None, Some(z)) => format!("z = {z:+.3}"),
            _ => String::new(),
        };
        format!(
            "{:<4} {:<28} stat = {:<12.4e} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            tail
        )
    }
}

fn z_of(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Compares an estimate with a deterministic target.
pub fn compare(name: &str, est: &LaplaceEstimate, target: f64, th: &Thresholds) -> TestReport {
    let diff = est.point_estimate - target;
    let z = z_of(diff, est.std_error);
    let pass = diff.abs() <= th.sigma * est.std_error + th.tol_disc;
    let mut r = TestReport::new(name, diff.abs(), pass)
        .threshold("sigma", th.sigma)
        .threshold("tol_disc", th.tol_disc)
        .detail("estimate", est.point_estimate)
        .detail("std_error", est.std_error)
        .detail("target", target)
        .detail("replicates", est.replicates as f64);
    r.z_score = Some(z);
    r
}

/// `exp(-<u_f(., T), mu>)`.
pub fn superprocess_laplace_target(
    mech: &BranchingMechanism,
    motion: &Motion,
    mu: &AtomicMeasure,
    f: &SpatialFn,
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    let u = solve_u(mech, motion, &TestFunction::new(f.clone()), horizon, dt)?;
    Ok((-u.pair(u.steps(), mu)).exp())
}

/// `f + w (1 - e^{-h})`.
pub fn identity_data(f: &SpatialFn, h: &SpatialFn, w: &MartingaleFunction) -> TestFunction {
    let (f2, h2, w2) = (f.clone(), h.clone(), w.function().clone());
    let label = format!("{} + w(1 - e^-({}))", f.label(), h.label());
    TestFunction::tagged(
        SpatialFn::from_fn(label.clone(), move |x| {
            f2.eval(x) - w2.eval(x) * (-h2.eval(x)).exp_m1()
        }),
        label,
    )
}

/// Right side of the dressed Laplace identity:
/// `exp(-<u_{f + w(1 - e^{-h})}(., T), mu>)`.
#[allow(clippy::too_many_arguments)]
pub fn identity_target(
    mech: &BranchingMechanism,
    w: &MartingaleFunction,
    motion: &Motion,
    mu: &AtomicMeasure,
    f: &SpatialFn,
    h: &SpatialFn,
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    let u = solve_u(mech, motion, &identity_data(f, h, w), horizon, dt)?;
    Ok((-u.pair(u.steps(), mu)).exp())
}

/// Superprocess Laplace functional at the horizon against the solver.
pub fn laplace_check(
    mech: &BranchingMechanism,
    motion: &Motion,
    mu: &AtomicMeasure,
    f: &SpatialFn,
    params: &SimParams,
    replicates: usize,
    th: &Thresholds,
) -> Result<TestReport> {
    let model = SuperprocessModel::new(mech, motion, params)?;
    let finals = run_replicates(replicates, params.seed, Purpose::Superprocess, |_, rng| {
        Ok(model.run(mu, rng)?.final_state().clone())
    })?;
    let est = mc_laplace(&finals, f, &SpatialFn::zero(), params.horizon)?;
    let target = superprocess_laplace_target(mech, motion, mu, f, params.horizon, params.dt)?;
    Ok(compare("laplace", &est, target, th))
}

/// Dressed Laplace identity: simulated left side against the solver's
/// right side.
#[allow(clippy::too_many_arguments)]
pub fn identity_check(
    mech: &BranchingMechanism,
    w: &MartingaleFunction,
    motion: &Motion,
    mu: &AtomicMeasure,
    f: &SpatialFn,
    h: &SpatialFn,
    params: &SimParams,
    replicates: usize,
    th: &Thresholds,
) -> Result<TestReport> {
    let model = DressedModel::new(mech, w, motion, params)?;
    let finals = run_replicates(replicates, params.seed, Purpose::Dressed, |_, rng| {
        Ok(model.run(mu, rng)?.final_state().clone())
    })?;
    let est = mc_laplace(&finals, f, h, params.horizon)?;
    let target = identity_target(mech, w, motion, mu, f, h, params.horizon, params.dt)?;
    Ok(compare("identity", &est, target, th))
}

/// Checks `E[e^{-<w, X_t>}] = e^{-<w, mu>}` at every observed time of the
/// paths.
pub fn martingale_test(
    paths: &[SuperprocessPath],
    w: &SpatialFn,
    mu: &AtomicMeasure,
    times: &[f64],
    th: &Thresholds,
) -> Result<TestReport> {
    let target = (-mu.pair(|x| w.eval(x))).exp();
    let zero = SpatialFn::zero();
    let mut worst = 0.0f64;
    let mut pass = true;
    let mut report = TestReport::new("martingale", 0.0, true).detail("target", target);
    for &t in times {
        let states = paths
            .iter()
            .map(|p| {
                p.at(t).ok_or_else(|| {
                    Error::precondition(format!("time {t} was not observed in the paths"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let est = mc_laplace(states, w, &zero, t)?;
        let diff = est.point_estimate - target;
        let z = z_of(diff, est.std_error);
        pass &= diff.abs() <= th.sigma * est.std_error + th.tol_disc;
        worst = worst.max(z.abs());
        report = report
            .detail(&format!("estimate_t{t}"), est.point_estimate)
            .detail(&format!("std_error_t{t}"), est.std_error)
            .detail(&format!("z_t{t}"), z);
    }
    report.statistic = worst;
    report.pass = pass;
    report.z_score = Some(worst);
    Ok(report
        .threshold("sigma", th.sigma)
        .threshold("tol_disc", th.tol_disc))
}

/// Region intensities `<w 1_B, Lambda_t>` and skeleton counts `Z_t(B)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonObservation {
    pub intensity: Vec<f64>,
    pub counts: Vec<u64>,
}

impl PoissonObservation {
    pub fn from_state(state: &DressedState, w: &SpatialFn, regions: &[(f64, f64)]) -> Self {
        let intensity = regions
            .iter()
            .map(|&(lo, hi)| {
                state
                    .lambda
                    .pair(|x| if x >= lo && x < hi { w.eval(x) } else { 0.0 })
            })
            .collect();
        let counts = regions
            .iter()
            .map(|&(lo, hi)| state.skeleton_count_in(lo, hi) as u64)
            .collect();
        PoissonObservation { intensity, counts }
    }
}

/// Randomized-PIT Kolmogorov-Smirnov test of `Z_t(B) | Lambda_t ~
/// Poisson(<w 1_B, Lambda_t>)`, pooled over regions, plus a cross-region
/// correlation screen on the PIT values.
pub fn poissonization_test(
    obs: &[PoissonObservation],
    pit_seed: u64,
    th: &Thresholds,
) -> Result<TestReport> {
    let regions = obs.first().map(|o| o.counts.len()).unwrap_or(0);
    if regions == 0 {
        return Err(Error::EmptyInput(
            "no regions for the Poissonization test".into(),
        ));
    }
    if obs.len() < MIN_POISSON_REPLICATES {
        return Err(Error::precondition(format!(
            "Poissonization test needs at least {MIN_POISSON_REPLICATES} replicates, got {}",
            obs.len()
        )));
    }
    if obs
        .iter()
        .any(|o| o.counts.len() != regions || o.intensity.len() != regions)
    {
        return Err(Error::precondition(
            "observations disagree on the region count",
        ));
    }
    let mut rng = stream(pit_seed, Purpose::Pit, 0);
    let mut pit = vec![Vec::with_capacity(obs.len()); regions];
    for o in obs {
        for (b, u) in pit.iter_mut().enumerate() {
            u.push(stats::poisson_pit(
                o.counts[b],
                o.intensity[b],
                rng.random(),
            ));
        }
    }
    let pooled: Vec<f64> = pit.iter().flatten().copied().collect();
    let (d, p) = stats::ks_uniform(&pooled)?;
    let bound = th.corr_sigma / (obs.len() as f64).sqrt();
    let mut max_rho = 0.0f64;
    for a in 0..regions {
        for b in a + 1..regions {
            max_rho = max_rho.max(stats::correlation(&pit[a], &pit[b]).abs());
        }
    }
    let pass = p >= th.ks_alpha && max_rho <= bound;
    let mut r = TestReport::new("poissonization", d, pass)
        .threshold("ks_alpha", th.ks_alpha)
        .threshold("corr_bound", bound)
        .detail("max_abs_correlation", max_rho)
        .detail("replicates", obs.len() as f64)
        .detail("regions", regions as f64);
    r.p_value = Some(p);
    Ok(r)
}

/// Direct-sampling oracle for the Poissonization test: random atomic
/// `Lambda` on the regions' hull and counts `Poisson(factor <w 1_B, Lambda>)`.
/// `factor = 1` is the positive control; anything else is miscalibrated.
pub fn synthetic_poisson_observations(
    replicates: usize,
    w: &SpatialFn,
    regions: &[(f64, f64)],
    factor: f64,
    seed: u64,
    trial: u64,
) -> Vec<PoissonObservation> {
    let mut rng = stream(seed, Purpose::Control, trial);
    let lo = regions.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let hi = regions
        .iter()
        .map(|r| r.1)
        .fold(f64::NEG_INFINITY, f64::max);
    (0..replicates)
        .map(|_| {
            // Some replicates are empty, mimicking extinction.
            let atoms = rng.random_range(0..=12usize);
            let lambda: AtomicMeasure = (0..atoms)
                .map(|_| {
                    let m: f64 = rng.sample(Exp1);
                    (rng.random_range(lo..hi), 0.3 * m + 1e-9)
                })
                .collect();
            let intensity: Vec<f64> = regions
                .iter()
                .map(|&(a, b)| lambda.pair(|x| if x >= a && x < b { w.eval(x) } else { 0.0 }))
                .collect();
            let counts = intensity
                .iter()
                .map(|&l| {
                    let mean = factor * l;
                    if mean > 0.0 {
                        Poisson::new(mean).unwrap().sample(&mut rng) as u64
                    } else {
                        0
                    }
                })
                .collect();
            PoissonObservation { intensity, counts }
        })
        .collect()
}

/// Keeps the intensities of `obs` and redraws every count directly as
/// `Poisson(factor * intensity)`: a control built on simulated `Lambda`.
pub fn resample_counts(
    obs: &[PoissonObservation],
    factor: f64,
    seed: u64,
    trial: u64,
) -> Vec<PoissonObservation> {
    let mut rng = stream(seed, Purpose::Control, trial);
    obs.iter()
        .map(|o| PoissonObservation {
            intensity: o.intensity.clone(),
            counts: o
                .intensity
                .iter()
                .map(|&l| {
                    let mean = factor * l;
                    if mean > 0.0 {
                        Poisson::new(mean).unwrap().sample(&mut rng) as u64
                    } else {
                        0
                    }
                })
                .collect(),
        })
        .collect()
}

/// Mean skeleton population at `T` against `N_0 exp(q (m - 1) T)`.
pub fn skeleton_moment_test(
    populations: &[f64],
    n0: f64,
    law: &OffspringLaw,
    horizon: f64,
    th: &Thresholds,
) -> Result<TestReport> {
    let local = law.homogeneous().ok_or_else(|| {
        Error::precondition("skeleton moment test needs a homogeneous offspring law")
    })?;
    // The sampler folds the truncated tail into n_max.
    let m = local.mean_offspring() + local.n_max() as f64 * local.tail_mass;
    let target = n0 * (local.q * (m - 1.0) * horizon).exp();
    let (mean, se) = stats::mean_and_se(populations)?;
    let diff = mean - target;
    let pass = diff.abs() <= th.sigma * se + th.moment_tol;
    let mut r = TestReport::new("skeleton-moment", diff.abs(), pass)
        .threshold("sigma", th.sigma)
        .threshold("moment_tol", th.moment_tol)
        .detail("mean", mean)
        .detail("std_error", se)
        .detail("target", target)
        .detail("q", local.q)
        .detail("mean_offspring", m);
    r.z_score = Some(z_of(diff, se));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::mechanism::{build_offspring_law, find_w_star, validate_w};
    use std::f64::consts::PI;

    fn regions() -> Vec<(f64, f64)> {
        let third = 2.0 * PI / 3.0;
        vec![(0.0, third), (third, 2.0 * third), (2.0 * third, 2.0 * PI)]
    }

    #[test]
    fn trivial_laplace_is_one() {
        let states = vec![AtomicMeasure::dirac(1.0, 2.0); 5];
        let est = mc_laplace(&states, &SpatialFn::zero(), &SpatialFn::zero(), 1.0).unwrap();
        assert_eq!(est.point_estimate, 1.0);
        assert_eq!(est.std_error, 0.0);
        let empty: Vec<AtomicMeasure> = Vec::new();
        assert!(matches!(
            mc_laplace(&empty, &SpatialFn::zero(), &SpatialFn::zero(), 1.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn comparison_rule() {
        let est = LaplaceEstimate {
            point_estimate: 0.5,
            std_error: 0.01,
            replicates: 100,
            functional: String::new(),
        };
        let th = Thresholds::default();
        assert!(compare("x", &est, 0.549, &th).pass);
        assert!(!compare("x", &est, 0.551, &th).pass);
        let r = compare("x", &est, 0.45, &th);
        assert!((r.z_score.unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn report_serializes_to_one_json_line() {
        let r = TestReport::new("t", 1.5, true)
            .threshold("sigma", 3.0)
            .with_fingerprint("ab");
        let line = serde_json::to_string(&r).unwrap();
        assert!(!line.contains('\n'));
        let back: TestReport = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn degenerate_poisson_zero() {
        let obs = vec![
            PoissonObservation {
                intensity: vec![0.0; 3],
                counts: vec![0; 3],
            };
            600
        ];
        let r = poissonization_test(&obs, 1, &Thresholds::default()).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(poissonization_test(&obs[..100], 1, &Thresholds::default()).is_err());
    }

    #[test]
    fn synthetic_controls_bracket_the_test() {
        let w = SpatialFn::constant(1.0);
        let th = Thresholds::default();
        let pos = synthetic_poisson_observations(2000, &w, &regions(), 1.0, 11, 0);
        assert!(poissonization_test(&pos, 1, &th).unwrap().pass);
        let neg = synthetic_poisson_observations(2000, &w, &regions(), 1.5, 11, 1);
        let r = poissonization_test(&neg, 1, &th).unwrap();
        assert!(!r.pass, "{r:?}");
    }

    #[test]
    fn skeleton_moment_dyadic_zero_variance() {
        let d = DomainSpec::torus(0.0, 2.0 * PI, 41).unwrap();
        let mech = BranchingMechanism::quadratic(1.0, 1.0, &d).unwrap();
        let motion = Motion::brownian(1.0, d).unwrap();
        let w = validate_w(
            &mech,
            &motion,
            SpatialFn::constant(find_w_star(&mech).unwrap()),
            1e-9,
        )
        .unwrap();
        let law = build_offspring_law(&mech, &w, 2, 1e-12).unwrap();
        let e = std::f64::consts::E;
        let r = skeleton_moment_test(&[270.0, 275.0], 100.0, &law, 1.0, &Thresholds::default())
            .unwrap();
        assert!((r.details["target"] - 100.0 * e).abs() < 1e-9);
        assert!(r.pass);
    }
}
