//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set-up shared by the criteria: the circle [0, 2 pi) with 201 nodes,
//! Brownian motion with generator f''/2, dt = 1e-3, T = 1, and
//! mu = 0.5 delta_{pi/2} + 0.5 delta_{3 pi/2}. Two mechanisms are used
//! throughout: quadratic psi(z) = -z + z^2, and the same plus one jump atom
//! of size 1 and rate 1.
//!
//! Runs without the libtest harness so the summary lines always reach the
//! output. `ACCEPTANCE_ONLY=5,6` restricts the run to some criteria.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use superskel::commands::cmd_simulate;
use superskel::config::{RunConfig, PRESETS};
use superskel::engine::{
    run_replicates, skeleton_at, DressedModel, DressedState, Purpose, SimParams, SkeletonModel,
    SuperprocessModel, SuperprocessPath,
};
use superskel::solver::{kappa, solve_transport, solve_u, solve_u_star, TestFunction};
use superskel::verify::{
    compare, identity_target, martingale_test, mc_laplace, poissonization_test, resample_counts,
    skeleton_moment_test, superprocess_laplace_target, PoissonObservation, Thresholds,
};
use superskel::{
    build_offspring_law, find_w_star, tilt, validate_w, AtomicMeasure, BranchingMechanism,
    DomainSpec, JumpAtom, MartingaleFunction, Motion, SpatialFn,
};

const DT: f64 = 1e-3;
const T: f64 = 1.0;
const M: usize = 10_000;
const M_POISSON: usize = 2000;
const M_SKELETON: usize = 1000;

type Outcome = std::result::Result<String, String>;
type Criterion = (usize, &'static str, fn(&Ctx) -> Outcome);

struct Tier {
    name: &'static str,
    mech: BranchingMechanism,
    w: MartingaleFunction,
    /// Closed-form psi used by the independent oracles.
    alpha: f64,
    beta: f64,
    jump: Option<(f64, f64)>,
}

impl Tier {
    fn psi(&self, z: f64) -> f64 {
        let mut v = -self.alpha * z + self.beta * z * z;
        if let Some((u, c)) = self.jump {
            v += c * ((-z * u).exp() - 1.0 + z * u);
        }
        v
    }

    fn w_star(&self) -> f64 {
        self.w.eval(0.0)
    }
}

struct Ctx {
    domain: DomainSpec,
    motion: Motion,
    mu: AtomicMeasure,
    tiers: Vec<Tier>,
    pairs: Vec<(SpatialFn, SpatialFn)>,
    regions: Vec<(f64, f64)>,
    th: Thresholds,
    superprocess: Vec<OnceLock<Vec<SuperprocessPath>>>,
    dressed: Vec<OnceLock<Vec<DressedState>>>,
}

fn params(seed: u64) -> SimParams {
    SimParams::new(DT, 1e-2, 1e-2, seed, T)
}

impl Ctx {
    fn new() -> Self {
        let domain = DomainSpec::torus(0.0, 2.0 * PI, 201).unwrap();
        let motion = Motion::brownian(1.0, domain.clone()).unwrap();
        let mut tiers = Vec::new();
        for (name, jump) in [("quadratic", None), ("single-atom", Some((1.0, 1.0)))] {
            let jumps = jump
                .map(|(u, c)| vec![JumpAtom::new(u, SpatialFn::constant(c))])
                .unwrap_or_default();
            let mech = BranchingMechanism::new(
                SpatialFn::constant(1.0),
                SpatialFn::constant(1.0),
                jumps,
                &domain,
            )
            .unwrap();
            let ws = find_w_star(&mech).unwrap();
            let w = validate_w(&mech, &motion, SpatialFn::constant(ws), 1e-10).unwrap();
            tiers.push(Tier {
                name,
                mech,
                w,
                alpha: 1.0,
                beta: 1.0,
                jump,
            });
        }
        let third = 2.0 * PI / 3.0;
        Ctx {
            mu: AtomicMeasure::new(vec![(PI / 2.0, 0.5), (1.5 * PI, 0.5)]).unwrap(),
            pairs: vec![
                (
                    SpatialFn::cosine(0.5, 0.3, 1.0, 0.0),
                    SpatialFn::cosine(1.0, 0.5, 1.0, 1.0),
                ),
                (
                    SpatialFn::constant(0.2),
                    SpatialFn::cosine(2.0, 1.0, 2.0, 0.0),
                ),
            ],
            regions: vec![(0.0, third), (third, 2.0 * third), (2.0 * third, 2.0 * PI)],
            th: Thresholds::default(),
            superprocess: vec![OnceLock::new(), OnceLock::new()],
            dressed: vec![OnceLock::new(), OnceLock::new()],
            domain,
            motion,
            tiers,
        }
    }

    /// M superprocess replicates per tier, observed at 0.5 and 1.
    fn superprocess(&self, k: usize) -> &[SuperprocessPath] {
        self.superprocess[k].get_or_init(|| {
            let p = params(500 + k as u64).observing(&[0.5]);
            let model = SuperprocessModel::new(&self.tiers[k].mech, &self.motion, &p).unwrap();
            run_replicates(M, p.seed, Purpose::Superprocess, |_, rng| {
                model.run(&self.mu, rng)
            })
            .unwrap()
        })
    }

    /// M dressed replicates per tier, final states.
    fn dressed(&self, k: usize) -> &[DressedState] {
        self.dressed[k].get_or_init(|| dressed_run(self, k, params(700 + k as u64), M))
    }
}

fn dressed_run(ctx: &Ctx, k: usize, p: SimParams, m: usize) -> Vec<DressedState> {
    let tier = &ctx.tiers[k];
    let model = DressedModel::new(&tier.mech, &tier.w, &ctx.motion, &p).unwrap();
    run_replicates(m, p.seed, Purpose::Dressed, |_, rng| {
        Ok(model.run(&ctx.mu, rng)?.final_state().clone())
    })
    .unwrap()
}

fn ensure(cond: bool, msg: String, fails: &mut Vec<String>) {
    if !cond {
        fails.push(msg);
    }
}

fn finish(summary: String, fails: Vec<String>) -> Outcome {
    if fails.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {}", fails.join("; ")))
    }
}

/// Scalar RK4 for y' = g(y).
fn rk4(g: impl Fn(f64) -> f64, y0: f64, t: f64, h: f64) -> f64 {
    let n = (t / h).round() as usize;
    let mut y = y0;
    for _ in 0..n {
        let k1 = g(y);
        let k2 = g(y + 0.5 * h * k1);
        let k3 = g(y + 0.5 * h * k2);
        let k4 = g(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

// 1. Offspring probabilities sum to one, q >= 0, and the tilt identity,
// for randomized spatial mechanisms. Each is built around a chosen
// w(x) = 1 + A cos(x - s) by solving the generator equation for alpha(x).
fn c1(ctx: &Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let grid = ctx.motion.grid();
    let (mut worst_sum, mut worst_q, mut worst_tilt) = (0.0f64, f64::INFINITY, 0.0f64);
    for _ in 0..5 {
        let (amp, shift) = (rng.random_range(0.0..0.4), rng.random_range(0.0..2.0 * PI));
        let w_fn = SpatialFn::cosine(1.0, amp, 1.0, shift);
        let beta = SpatialFn::cosine(
            rng.random_range(0.3..1.5),
            rng.random_range(0.0..0.25),
            1.0,
            rng.random_range(0.0..2.0 * PI),
        );
        let n_atoms = rng.random_range(0..=3);
        let atoms: Vec<(f64, SpatialFn)> = (0..n_atoms)
            .map(|_| {
                let c0 = rng.random_range(0.1..1.5);
                (
                    rng.random_range(0.2..2.0),
                    SpatialFn::cosine(
                        c0,
                        rng.random_range(0.0..0.9) * c0,
                        2.0,
                        rng.random_range(0.0..2.0 * PI),
                    ),
                )
            })
            .collect();
        let (wc, bc, ac) = (w_fn.clone(), beta.clone(), atoms.clone());
        // (1/2) w'' = -(A/2) cos(x - s)
        let alpha = SpatialFn::from_fn("alpha", move |x| {
            let w = wc.eval(x);
            let lw = -0.5 * amp * (x - shift).cos();
            let jumps: f64 = ac
                .iter()
                .map(|(u, c)| c.eval(x) * ((-w * u).exp_m1() + w * u))
                .sum();
            (bc.eval(x) * w * w + jumps - lw) / w
        });
        let jumps = atoms
            .iter()
            .map(|(u, c)| JumpAtom::new(*u, c.clone()))
            .collect();
        let mech =
            BranchingMechanism::new(alpha, beta, jumps, &ctx.domain).map_err(|e| e.to_string())?;
        let w = validate_w(&mech, &ctx.motion, w_fn, 1e-4).map_err(|e| e.to_string())?;
        let law = build_offspring_law(&mech, &w, 2, 1e-13).map_err(|e| e.to_string())?;
        for &x in &grid.nodes {
            let l = law.local(x);
            worst_sum = worst_sum.max((l.probs.iter().sum::<f64>() + l.tail_mass - 1.0).abs());
            worst_q = worst_q.min(l.q);
        }
        let star = tilt(&mech, &w).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let x = rng.random_range(0.0..2.0 * PI);
            let z = rng.random_range(0.0..3.0);
            let wx = w.eval(x);
            let lhs = star.local(x).psi(z);
            let rhs = mech.local(x).psi(z + wx) - mech.local(x).psi(wx);
            worst_tilt = worst_tilt.max((lhs - rhs).abs());
        }
    }
    let mut fails = Vec::new();
    ensure(
        worst_sum <= 1e-10,
        format!("sum p deviates by {worst_sum:e}"),
        &mut fails,
    );
    ensure(
        worst_q >= -1e-12,
        format!("min q = {worst_q:e}"),
        &mut fails,
    );
    ensure(
        worst_tilt <= 1e-12,
        format!("tilt identity off by {worst_tilt:e}"),
        &mut fails,
    );
    finish(
        format!("5 mechanisms: max|sum p - 1| = {worst_sum:.1e}, min q = {worst_q:.3}, max tilt error = {worst_tilt:.1e}"),
        fails,
    )
}

// 2. Quadratic closed forms.
fn c2(ctx: &Ctx) -> Outcome {
    let tier = &ctx.tiers[0];
    let mut fails = Vec::new();
    let ws = tier.w_star();
    ensure((ws - 1.0).abs() <= 1e-12, format!("w* = {ws}"), &mut fails);
    let law = build_offspring_law(&tier.mech, &tier.w, 2, 1e-12).unwrap();
    let star = tilt(&tier.mech, &tier.w).unwrap();
    let mut worst = 0.0f64;
    for &x in ctx.motion.grid().nodes.iter().step_by(10) {
        let l = law.local(x);
        worst = worst.max((l.q - 1.0).abs()).max((l.p(2) - 1.0).abs());
        ensure(
            l.n_max() == 2 && l.tail_mass <= 1e-12,
            format!("extra offspring mass at {x}"),
            &mut fails,
        );
        let eta = l.eta(2);
        let at_zero: f64 = eta.iter().filter(|e| e.0 == 0.0).map(|e| e.1).sum();
        worst = worst.max((at_zero - 1.0).abs());
        for z in [0.0, 0.3, 1.0, 2.5, 7.0] {
            worst = worst.max((star.local(x).psi(z) - (z + z * z)).abs() / (1.0 + z * z));
        }
    }
    ensure(
        worst <= 1e-12,
        format!("closed forms off by {worst:e}"),
        &mut fails,
    );
    finish(
        format!("w* = {ws:.15}, max deviation of q, p_2, eta_2, psi* = {worst:.1e}"),
        fails,
    )
}

// 3. Solver against the scalar ODE, and grid/step halving.
fn c3(ctx: &Ctx) -> Outcome {
    let mut fails = Vec::new();
    let mut worst_ode = 0.0f64;
    let mut worst_ref = 0.0f64;
    let fine_motion = ctx.motion.refined();
    for tier in &ctx.tiers {
        let ws = tier.w_star();
        for c in [0.3, 1.7] {
            let f = TestFunction::constant(c);
            let u = solve_u(&tier.mech, &ctx.motion, &f, T, DT).unwrap();
            let us = solve_u_star(&tier.mech, &tier.w, &ctx.motion, &f, T, DT).unwrap();
            let oracle_u = rk4(|y| -tier.psi(y), c, T, 1e-4);
            let oracle_us = rk4(|y| -(tier.psi(y + ws) - tier.psi(ws)), c, T, 1e-4);
            for v in u.final_slice() {
                worst_ode = worst_ode.max(rel(*v, oracle_u));
            }
            for v in us.final_slice() {
                worst_ode = worst_ode.max(rel(*v, oracle_us));
            }
        }
        // Halving on non-constant data.
        let fine_mech = tier.mech.on_domain(fine_motion.domain());
        let f = TestFunction::new(SpatialFn::cosine(0.8, 0.6, 1.0, 0.5));
        let coarse = solve_u(&tier.mech, &ctx.motion, &f, T, DT).unwrap();
        let fine = solve_u(&fine_mech, &fine_motion, &f, T, DT / 2.0).unwrap();
        let scale = coarse.sup();
        for &x in ctx.motion.grid().nodes.iter() {
            let a = coarse.at(coarse.steps(), x);
            let b = fine.at(fine.steps(), x);
            worst_ref = worst_ref.max((a - b).abs() / scale);
        }
    }
    ensure(
        worst_ode <= 1e-4,
        format!("ODE relative error {worst_ode:e}"),
        &mut fails,
    );
    ensure(
        worst_ref < 1e-3,
        format!("halving changed u by {worst_ref:e}"),
        &mut fails,
    );
    finish(
        format!("max rel error vs RK4 oracle = {worst_ode:.1e}, halving change = {worst_ref:.1e}"),
        fails,
    )
}

// 4. <kappa^T(., 0), mu> = <u_{f + w(1 - e^{-h})}(., T), mu>.
fn c4(ctx: &Ctx) -> Outcome {
    let mut fails = Vec::new();
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for tier in &ctx.tiers {
        for (i, (f, h)) in ctx.pairs.iter().enumerate() {
            let (tf, th) = (TestFunction::new(f.clone()), TestFunction::new(h.clone()));
            let fields =
                solve_transport(&tier.mech, &tier.w, &ctx.motion, &tf, &th, T, DT).unwrap();
            let k = kappa(&fields.f_t(), &fields.h_t(), &tier.w).unwrap();
            let lhs = k.pair(0, &ctx.mu);
            let wf = tier.w.function().clone();
            let (f2, h2) = (f.clone(), h.clone());
            let g = TestFunction::new(SpatialFn::from_fn("g", move |x| {
                f2.eval(x) - wf.eval(x) * (-h2.eval(x)).exp_m1()
            }));
            let u = solve_u(&tier.mech, &ctx.motion, &g, T, DT).unwrap();
            let rhs = u.pair(u.steps(), &ctx.mu);
            let r = rel(lhs, rhs);
            worst = worst.max(r);
            lines.push(format!("{}[{i}] {lhs:.6}/{rhs:.6}", tier.name));
        }
    }
    ensure(worst <= 5e-4, format!("relative gap {worst:e}"), &mut fails);
    finish(
        format!("max relative gap = {worst:.1e} ({})", lines.join(", ")),
        fails,
    )
}

// 5. Superprocess Laplace functional against the solver.
fn c5(ctx: &Ctx) -> Outcome {
    let mut fails = Vec::new();
    let mut lines = Vec::new();
    let f = &ctx.pairs[0].0;
    for (k, tier) in ctx.tiers.iter().enumerate() {
        let paths = ctx.superprocess(k);
        let est = mc_laplace(
            paths.iter().map(|p| p.final_state()),
            f,
            &SpatialFn::zero(),
            T,
        )
        .unwrap();
        let target =
            superprocess_laplace_target(&tier.mech, &ctx.motion, &ctx.mu, f, T, DT).unwrap();
        let r = compare("laplace", &est, target, &ctx.th);
        lines.push(format!(
            "{}: {:.4} vs {:.4} (se {:.4}, z {:+.2})",
            tier.name,
            est.point_estimate,
            target,
            est.std_error,
            r.z_score.unwrap()
        ));
        ensure(
            r.pass,
            format!("{} outside 3 se + 2e-2", tier.name),
            &mut fails,
        );
    }
    finish(lines.join("; "), fails)
}

// 6. w-martingale at t = 0.5, 1 and the 1.2 w* negative control.
fn c6(ctx: &Ctx) -> Outcome {
    let mut fails = Vec::new();
    let mut lines = Vec::new();
    for (k, tier) in ctx.tiers.iter().enumerate() {
        let paths = ctx.superprocess(k);
        let r = martingale_test(paths, tier.w.function(), &ctx.mu, &[0.5, 1.0], &ctx.th).unwrap();
        lines.push(format!("{} max|z| = {:.2}", tier.name, r.statistic));
        ensure(
            r.pass,
            format!("{} martingale rejected: {:?}", tier.name, r.details),
            &mut fails,
        );
    }
    let tier = &ctx.tiers[0];
    let wrong = SpatialFn::constant(1.2 * tier.w_star());
    let r = martingale_test(ctx.superprocess(0), &wrong, &ctx.mu, &[0.5, 1.0], &ctx.th).unwrap();
    let z1 = r.details["z_t1"];
    let drifted =
        superprocess_laplace_target(&tier.mech, &ctx.motion, &ctx.mu, &wrong, T, DT).unwrap();
    lines.push(format!(
        "control 1.2 w*: z(t=1) = {z1:.1}, estimate {:.4}, solver {drifted:.4}, start {:.4}",
        r.details["estimate_t1"], r.details["target"]
    ));
    ensure(
        !r.pass && z1.abs() > 3.0,
        "negative control not rejected".into(),
        &mut fails,
    );
    finish(lines.join("; "), fails)
}

// 7. Dressed Laplace identity, 2 pairs x 2 mechanisms.
fn c7(ctx: &Ctx) -> Outcome {
    let mut fails = Vec::new();
    let mut lines = Vec::new();
    for (k, tier) in ctx.tiers.iter().enumerate() {
        let finals = ctx.dressed(k);
        for (i, (f, h)) in ctx.pairs.iter().enumerate() {
            let est = mc_laplace(finals, f, h, T).unwrap();
            let target =
                identity_target(&tier.mech, &tier.w, &ctx.motion, &ctx.mu, f, h, T, DT).unwrap();
            let r = compare("identity", &est, target, &ctx.th);
            lines.push(format!(
                "{}[{i}]: {:.4} vs {:.4} (z {:+.2})",
                tier.name,
                est.point_estimate,
                target,
                r.z_score.unwrap()
            ));
            ensure(
                r.pass,
                format!("{}[{i}] outside 3 se + 2e-2", tier.name),
                &mut fails,
            );
        }
    }
    finish(lines.join("; "), fails)
}

// 8. Poissonization with direct-sampling controls on the simulated Lambda.
fn c8(ctx: &Ctx) -> Outcome {
    let mut fails = Vec::new();
    let mut lines = Vec::new();
    const TRIALS: u64 = 100;
    for (k, tier) in ctx.tiers.iter().enumerate() {
        let obs: Vec<PoissonObservation> = ctx.dressed(k)[..M_POISSON]
            .iter()
            .map(|s| PoissonObservation::from_state(s, tier.w.function(), &ctx.regions))
            .collect();
        let r = poissonization_test(&obs, 800 + k as u64, &ctx.th).unwrap();
        ensure(r.pass, format!("{} rejected: {r:?}", tier.name), &mut fails);
        let pos_first = poissonization_test(&resample_counts(&obs, 1.0, 900, 0), 1, &ctx.th)
            .unwrap()
            .pass;
        let pos = (0..TRIALS)
            .filter(|&t| {
                poissonization_test(&resample_counts(&obs, 1.0, 900, t), t, &ctx.th)
                    .unwrap()
                    .pass
            })
            .count() as f64
            / TRIALS as f64;
        let power = (0..TRIALS)
            .filter(|&t| {
                !poissonization_test(&resample_counts(&obs, 1.5, 901, t), t, &ctx.th)
                    .unwrap()
                    .pass
            })
            .count() as f64
            / TRIALS as f64;
        lines.push(format!(
            "{}: KS p = {:.3}, max|rho| = {:.3}, positive pass rate {pos:.2}, 1.5x power {power:.2}",
            tier.name,
            r.p_value.unwrap(),
            r.details["max_abs_correlation"]
        ));
        ensure(
            pos_first && pos >= 0.9,
            format!("{} positive control pass rate {pos}", tier.name),
            &mut fails,
        );
        ensure(
            power > 0.9,
            format!("{} negative control power {power}", tier.name),
            &mut fails,
        );
    }
    finish(lines.join("; "), fails)
}

// 9. Skeleton growth N_0 exp(q (m - 1) T).
fn c9(ctx: &Ctx) -> Outcome {
    let mut fails = Vec::new();
    let mut lines = Vec::new();
    for (k, tier) in ctx.tiers.iter().enumerate() {
        let law = build_offspring_law(&tier.mech, &tier.w, 2, 1e-12).unwrap();
        let p = params(2000 + k as u64);
        let model = SkeletonModel::new(&law, &ctx.motion, &p).unwrap();
        let pops = run_replicates(M_SKELETON, p.seed, Purpose::Skeleton, |_, rng| {
            let init = skeleton_at(PI / 2.0, 100, rng);
            Ok(model.run(init, rng)?.final_population() as f64)
        })
        .unwrap();
        let r = skeleton_moment_test(&pops, 100.0, &law, T, &ctx.th).unwrap();
        lines.push(format!(
            "{}: mean {:.2} vs {:.2} (se {:.2})",
            tier.name, r.details["mean"], r.details["target"], r.details["std_error"]
        ));
        ensure(r.pass, format!("{} outside 3 se", tier.name), &mut fails);
    }
    finish(lines.join("; "), fails)
}

// 10. Halving epsilon and delta moves the identity left side by less than
// the combined 3 sigma band.
fn c10(ctx: &Ctx) -> Outcome {
    let mut fails = Vec::new();
    let (f, h) = &ctx.pairs[0];
    let base = mc_laplace(ctx.dressed(0), f, h, T).unwrap();
    let mut p = params(1100);
    p.epsilon = 5e-3;
    p.delta = 5e-3;
    let halved = dressed_run(ctx, 0, p, M);
    let half = mc_laplace(&halved, f, h, T).unwrap();
    let diff = (half.point_estimate - base.point_estimate).abs();
    let band = 3.0 * (base.std_error.powi(2) + half.std_error.powi(2)).sqrt();
    ensure(
        diff < band,
        format!("change {diff:.4} exceeds {band:.4}"),
        &mut fails,
    );
    finish(
        format!(
            "quadratic[0]: {:.4} -> {:.4}, change {diff:.4} < band {band:.4}",
            base.point_estimate, half.point_estimate
        ),
        fails,
    )
}

// 11. Byte-identical event CSVs for every preset.
fn c11(_ctx: &Ctx) -> Outcome {
    let mut fails = Vec::new();
    let mut sizes = Vec::new();
    for (name, text) in PRESETS {
        let cfg = RunConfig::from_toml_str(text, &["campaign.replicates=6".into()]).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut bytes = Vec::new();
        for d in &dirs {
            let m = cmd_simulate(&cfg, None, d.path()).unwrap();
            let csv = m.outputs.iter().find(|o| o.contains("events-")).unwrap();
            bytes.push(std::fs::read(csv).unwrap());
        }
        ensure(
            bytes[0] == bytes[1],
            format!("{name}: event CSVs differ"),
            &mut fails,
        );
        sizes.push(format!("{name} {} B", bytes[0].len()));
    }
    finish(format!("identical event CSVs: {}", sizes.join(", ")), fails)
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [Criterion; 11] = [
        (1, "mechanism algebra", c1),
        (2, "quadratic closed forms", c2),
        (3, "solver vs ODE oracle", c3),
        (4, "transport identity", c4),
        (5, "superprocess Laplace functional", c5),
        (6, "w-martingale", c6),
        (7, "dressed Laplace identity", c7),
        (8, "Poissonization", c8),
        (9, "skeleton growth", c9),
        (10, "surrogate stability", c10),
        (11, "determinism", c11),
    ];
    let ctx = Ctx::new();
    let mut failed = 0;
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&ctx)))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n:>2} PASS [{secs:6.1} s] {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} FAIL [{secs:6.1} s] {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
