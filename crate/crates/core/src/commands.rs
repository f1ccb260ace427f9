//! The four commands behind the CLI. Each writes its outputs plus a
//! `manifest.json` into the output directory and returns the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Model, OutputFormat, RunConfig, SimKind, TestKind};
use crate::engine::events::{self, EventKind, Record};
use crate::engine::{
    run_replicates, sample_initial_skeleton, skeleton_at, DressedModel, Purpose, SkeletonModel,
    SuperprocessModel,
};
use crate::error::{Error, Result};
use crate::mechanism::{build_offspring_law, validate_w};
use crate::solver::{kappa, solve_transport, solve_u, SolverField};
use crate::spatial::SpatialFn;
use crate::verify::{
    compare, identity_data, identity_target, martingale_test, mc_laplace, poissonization_test,
    skeleton_moment_test, superprocess_laplace_target, PoissonObservation, TestReport,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_TEST_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub fingerprint: String,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    pub seed: u64,
    pub replicates: usize,
    pub pass: bool,
    pub reports: Vec<TestReport>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            fingerprint: cfg.fingerprint(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: 0.0,
            seed: cfg.campaign.seed,
            replicates: cfg.campaign.replicates,
            pass: true,
            reports: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn push(&mut self, report: TestReport) {
        self.pass &= report.pass;
        self.reports
            .push(report.with_fingerprint(self.fingerprint.clone()));
    }

    /// First failing report, if any.
    pub fn first_failure(&self) -> Option<&TestReport> {
        self.reports.iter().find(|r| !r.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_PASS
        } else {
            EXIT_TEST_FAILURE
        }
    }

    fn finish(mut self, out: &Path, started: Instant) -> Result<Self> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let path = out.join("manifest.json");
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::config(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(self)
    }
}

/// Exit code for a command result.
pub fn exit_code(result: &Result<RunManifest>) -> i32 {
    match result {
        Ok(m) => m.exit_code(),
        Err(Error::Config(_)) => EXIT_CONFIG,
        Err(_) => EXIT_RUNTIME,
    }
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn w_report(model: &Model) -> TestReport {
    match &model.w_error {
        None => TestReport::new("w-residual", model.w.residual_sup(), true)
            .threshold("w_tol", model.w.tolerance()),
        Some(Error::InvalidMartingaleFunction {
            residual_sup,
            tolerance,
            worst_x,
            ..
        }) => TestReport::new("w-residual", *residual_sup, false)
            .threshold("w_tol", *tolerance)
            .detail("worst_x", *worst_x),
        Some(_) => TestReport::new("w-residual", f64::NAN, false),
    }
}

/// Checks the model invariants: `w` certification, the offspring law
/// (probabilities sum to one, `q >= 0`) and the step-size bound.
pub fn cmd_validate(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    prepare(out)?;
    let model = cfg.build()?;
    let mut m = RunManifest::new("validate", cfg);
    let grid = model.motion.grid();
    m.push(
        TestReport::new("grid", grid.len() as f64, grid.len() >= 3)
            .detail("spacing", grid.spacing)
            .detail("mu_mass", model.mu.total_mass()),
    );
    m.push(w_report(&model));
    if model.w_error.is_some() {
        return m.finish(out, started);
    }
    let law = build_offspring_law(
        &model.mech,
        &model.w,
        cfg.numerics.n_max,
        cfg.numerics.tail_tol,
    )?;
    let (mut sum_err, mut q_min, mut q_max) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &x in &grid.nodes {
        let local = law.local(x);
        let total: f64 = local.probs.iter().sum::<f64>() + local.tail_mass;
        sum_err = sum_err.max((total - 1.0).abs());
        q_min = q_min.min(local.q);
        q_max = q_max.max(local.q);
    }
    m.push(
        TestReport::new(
            "offspring-law",
            sum_err,
            sum_err <= 1e-10 && q_min >= -1e-12,
        )
        .threshold("sum_tol", 1e-10)
        .threshold("q_floor", -1e-12)
        .detail("q_min", q_min)
        .detail("q_max", q_max)
        .detail("q_bar", law.q_bar())
        .detail("n_max", law.n_max() as f64),
    );
    let dt_max = if law.q_bar() > 0.0 {
        0.1 / law.q_bar()
    } else {
        f64::INFINITY
    };
    m.push(
        TestReport::new("step-size", cfg.numerics.dt, cfg.numerics.dt <= dt_max)
            .threshold("dt_max", dt_max),
    );
    m.finish(out, started)
}

fn pair_or_zero(model: &Model) -> (SpatialFn, SpatialFn) {
    model
        .pairs
        .first()
        .cloned()
        .unwrap_or_else(|| (SpatialFn::zero(), SpatialFn::zero()))
}

struct Solved {
    fields: Vec<SolverField>,
    /// `<u_{f + w(1 - e^{-h})}(., T), mu>` and `<kappa^T(., 0), mu>`.
    u_pair: f64,
    kappa_pair: f64,
}

fn solve_all(model: &Model, f: &SpatialFn, h: &SpatialFn, horizon: f64, dt: f64) -> Result<Solved> {
    let (mech, motion, w) = (&model.mech, &model.motion, &model.w);
    let u = solve_u(mech, motion, &identity_data(f, h, w), horizon, dt)?;
    let tf = solve_transport(
        mech,
        w,
        motion,
        &crate::solver::TestFunction::new(f.clone()),
        &crate::solver::TestFunction::new(h.clone()),
        horizon,
        dt,
    )?;
    let (ft, ht) = (tf.f_t(), tf.h_t());
    let k = kappa(&ft, &ht, w)?;
    let u_pair = u.pair(u.steps(), &model.mu);
    let kappa_pair = k.pair(0, &model.mu);
    Ok(Solved {
        fields: vec![u, tf.u_star, ft, ht, k],
        u_pair,
        kappa_pair,
    })
}

fn write_fields(path: &Path, fields: &[SolverField], stride: usize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,x,value,field")?;
    for f in fields {
        let mut body = Vec::new();
        f.write_csv(&mut body, stride)?;
        // Drop each field's own header line.
        let start = body.iter().position(|&b| b == b'\n').map_or(0, |i| i + 1);
        out.write_all(&body[start..])?;
    }
    out.flush()?;
    Ok(())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Emits `u` (for the data `f + w(1 - e^{-h})`), `u*`, `f^T`, `h^T` and
/// `kappa^T` for the first `(f, h)` pair, and reports the transport identity
/// `<kappa^T(., 0), mu> = <u(., T), mu>`.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    prepare(out)?;
    let model = cfg.build()?;
    let mut m = RunManifest::new("solve", cfg);
    if let Some(e) = &model.w_error {
        return Err(Error::precondition(format!(
            "solve needs a certified w: {e}"
        )));
    }
    let (f, h) = pair_or_zero(&model);
    let (horizon, dt) = (cfg.campaign.horizon, cfg.numerics.dt);
    let coarse = solve_all(&model, &f, &h, horizon, dt)?;
    let fp = cfg.short_fingerprint();
    let path = out.join(format!("solve-{fp}.csv"));
    write_fields(&path, &coarse.fields, cfg.numerics.time_stride)?;
    m.outputs.push(path.display().to_string());
    let gap = (coarse.kappa_pair - coarse.u_pair).abs();
    m.push(
        TestReport::new(
            "transport-identity",
            rel(coarse.kappa_pair, coarse.u_pair),
            true,
        )
        .detail("kappa_pair", coarse.kappa_pair)
        .detail("u_pair", coarse.u_pair)
        .detail("abs_gap", gap),
    );
    if cfg.numerics.refine {
        let motion = model.motion.refined();
        let mech = model.mech.on_domain(motion.domain());
        let w = validate_w(
            &mech,
            &motion,
            model.w.function().clone(),
            cfg.numerics.w_tol,
        )?;
        let fine_model = Model {
            motion,
            mech,
            w,
            w_error: None,
            mu: model.mu.clone(),
            pairs: model.pairs.clone(),
            params: model.params.clone(),
        };
        let fine = solve_all(&fine_model, &f, &h, horizon, dt / 2.0)?;
        let path = out.join(format!("solve-{fp}-refined.csv"));
        write_fields(&path, &fine.fields, 2 * cfg.numerics.time_stride)?;
        m.outputs.push(path.display().to_string());
        let delta = rel(fine.u_pair, coarse.u_pair).max(rel(fine.kappa_pair, coarse.kappa_pair));
        m.push(
            TestReport::new("refinement", delta, true)
                .detail("u_pair_fine", fine.u_pair)
                .detail("kappa_pair_fine", fine.kappa_pair),
        );
    }
    m.finish(out, started)
}

fn write_records(
    cfg: &RunConfig,
    out: &Path,
    stem: &str,
    records: &[Record],
    m: &mut RunManifest,
) -> Result<()> {
    let fp = cfg.short_fingerprint();
    for fmt in &cfg.output.formats {
        let path = match fmt {
            OutputFormat::Csv => out.join(format!("{stem}-{fp}.csv")),
            OutputFormat::Binary => out.join(format!("{stem}-{fp}.bin")),
        };
        let mut w = BufWriter::new(File::create(&path)?);
        match fmt {
            OutputFormat::Csv => events::write_csv(&mut w, records)?,
            OutputFormat::Binary => events::write_binary(&mut w, records)?,
        }
        w.flush()?;
        m.outputs.push(path.display().to_string());
    }
    Ok(())
}

fn mass_rows(rep: u64, time: f64, mu: &crate::measure::AtomicMeasure, rows: &mut Vec<Record>) {
    rows.extend(mu.atoms().iter().map(|&(x, mass)| Record {
        replicate: rep,
        time,
        kind: EventKind::MassAtom,
        site: x,
        mass,
    }));
}

fn skeleton_rows(rep: u64, time: f64, sites: impl Iterator<Item = f64>, rows: &mut Vec<Record>) {
    rows.extend(sites.map(|x| Record {
        replicate: rep,
        time,
        kind: EventKind::SkeletonAtom,
        site: x,
        mass: 1.0,
    }));
}

/// Runs `campaign.replicates` replicates of one process and writes the
/// event log and the snapshots at the observation times.
pub fn cmd_simulate(cfg: &RunConfig, kind: Option<SimKind>, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    prepare(out)?;
    let model = cfg.build()?;
    let kind = kind.unwrap_or(cfg.campaign.simulate);
    let mut m = RunManifest::new(
        match kind {
            SimKind::Skeleton => "simulate skeleton",
            SimKind::Superprocess => "simulate superprocess",
            SimKind::Dressed => "simulate dressed",
        },
        cfg,
    );
    let reps = cfg.campaign.replicates;
    if reps == 0 {
        m.warnings.push("replicates = 0: nothing simulated".into());
        return m.finish(out, started);
    }
    if kind != SimKind::Superprocess {
        if let Some(e) = &model.w_error {
            return Err(Error::precondition(format!(
                "simulation needs a certified w: {e}"
            )));
        }
    }
    let (params, mu) = (&model.params, &model.mu);
    type Rows = (Vec<Record>, Vec<Record>);
    let per_rep: Vec<Rows> = match kind {
        SimKind::Superprocess => {
            let sm = SuperprocessModel::new(&model.mech, &model.motion, params)?;
            run_replicates(reps, params.seed, Purpose::Superprocess, |i, rng| {
                let path = sm.run(mu, rng)?;
                let mut snaps = Vec::new();
                for (t, s) in path.times.iter().zip(&path.states) {
                    mass_rows(i as u64, *t, s, &mut snaps);
                }
                Ok((Vec::new(), snaps))
            })?
        }
        SimKind::Dressed => {
            let dm = DressedModel::with_n_max(
                &model.mech,
                &model.w,
                &model.motion,
                params,
                cfg.numerics.n_max,
            )?;
            run_replicates(reps, params.seed, Purpose::Dressed, |i, rng| {
                let path = dm.run(mu, rng)?;
                let ev = path
                    .events
                    .iter()
                    .map(|e| Record::from_event(i as u64, e))
                    .collect();
                let mut snaps = Vec::new();
                for s in &path.states {
                    mass_rows(i as u64, s.time, &s.lambda, &mut snaps);
                    skeleton_rows(
                        i as u64,
                        s.time,
                        s.skeleton.iter().map(|p| p.position),
                        &mut snaps,
                    );
                }
                Ok((ev, snaps))
            })?
        }
        SimKind::Skeleton => {
            let law = build_offspring_law(
                &model.mech,
                &model.w,
                cfg.numerics.n_max,
                cfg.numerics.tail_tol,
            )?;
            let sk = SkeletonModel::new(&law, &model.motion, params)?;
            run_replicates(reps, params.seed, Purpose::Skeleton, |i, rng| {
                let init = sample_initial_skeleton(mu, &model.w, rng);
                let path = sk.run(init, rng)?;
                let ev = path
                    .events
                    .iter()
                    .map(|e| Record::from_event(i as u64, e))
                    .collect();
                let mut snaps = Vec::new();
                for (t, s) in path.times.iter().zip(&path.states) {
                    skeleton_rows(i as u64, *t, s.iter().map(|p| p.position), &mut snaps);
                }
                Ok((ev, snaps))
            })?
        }
    };
    let (mut ev, mut snaps) = (Vec::new(), Vec::new());
    for (e, s) in per_rep {
        ev.extend(e);
        snaps.extend(s);
    }
    write_records(cfg, out, "events", &ev, &mut m)?;
    write_records(cfg, out, "snapshot", &snaps, &mut m)?;
    m.finish(out, started)
}

/// Runs the configured test battery and writes `results.jsonl`.
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    prepare(out)?;
    let model = cfg.build()?;
    let mut m = RunManifest::new("verify", cfg);
    let tests = &cfg.campaign.tests;
    let th = &cfg.numerics.thresholds;
    let reps = cfg.campaign.replicates;
    let (mech, motion, w, mu) = (&model.mech, &model.motion, &model.w, &model.mu);
    let params = &model.params;
    let (horizon, dt) = (cfg.campaign.horizon, cfg.numerics.dt);
    if !tests.is_empty() && model.w_error.is_some() {
        m.push(w_report(&model));
    }
    let has = |k: TestKind| tests.contains(&k);
    if has(TestKind::Laplace) || has(TestKind::Martingale) {
        let sm = SuperprocessModel::new(mech, motion, params)?;
        let paths = run_replicates(reps, params.seed, Purpose::Superprocess, |_, rng| {
            sm.run(mu, rng)
        })?;
        if has(TestKind::Laplace) {
            for (i, (f, _)) in model.pairs.iter().enumerate() {
                let est = mc_laplace(
                    paths.iter().map(|p| p.final_state()),
                    f,
                    &SpatialFn::zero(),
                    horizon,
                )?;
                let target = superprocess_laplace_target(mech, motion, mu, f, horizon, dt)?;
                m.push(compare(&format!("laplace[{i}]"), &est, target, th));
            }
        }
        if has(TestKind::Martingale) {
            let mut times = cfg.campaign.observe.clone();
            times.push(horizon);
            times.sort_by(f64::total_cmp);
            times.dedup();
            m.push(martingale_test(&paths, w.function(), mu, &times, th)?);
        }
    }
    if has(TestKind::Identity) || has(TestKind::Poissonization) {
        if let Some(e) = &model.w_error {
            return Err(Error::precondition(format!(
                "dressed tests need a certified w: {e}"
            )));
        }
        let dm = DressedModel::with_n_max(mech, w, motion, params, cfg.numerics.n_max)?;
        let finals = run_replicates(reps, params.seed, Purpose::Dressed, |_, rng| {
            Ok(dm.run(mu, rng)?.final_state().clone())
        })?;
        if has(TestKind::Identity) {
            for (i, (f, h)) in model.pairs.iter().enumerate() {
                let est = mc_laplace(&finals, f, h, horizon)?;
                let target = identity_target(mech, w, motion, mu, f, h, horizon, dt)?;
                m.push(compare(&format!("identity[{i}]"), &est, target, th));
            }
        }
        if has(TestKind::Poissonization) {
            let regions = cfg.regions();
            let obs: Vec<_> = finals
                .iter()
                .map(|s| PoissonObservation::from_state(s, w.function(), &regions))
                .collect();
            m.push(poissonization_test(&obs, params.seed, th)?);
        }
    }
    if has(TestKind::SkeletonMoment) {
        let law = build_offspring_law(mech, w, cfg.numerics.n_max, cfg.numerics.tail_tol)?;
        let sk = SkeletonModel::new(&law, motion, params)?;
        let x0 = mu
            .atoms()
            .first()
            .map(|a| a.0)
            .ok_or_else(|| Error::config("skeleton-moment needs at least one atom in mu"))?;
        let n0 = cfg.campaign.skeleton_n0;
        let pops = run_replicates(reps, params.seed, Purpose::Skeleton, |_, rng| {
            let init = skeleton_at(x0, n0, rng);
            Ok(sk.run(init, rng)?.final_population() as f64)
        })?;
        m.push(skeleton_moment_test(&pops, n0 as f64, &law, horizon, th)?);
    }
    let path = out.join("results.jsonl");
    let mut file = BufWriter::new(File::create(&path)?);
    for r in &m.reports {
        writeln!(
            file,
            "{}",
            serde_json::to_string(r).map_err(|e| Error::config(e.to_string()))?
        )?;
    }
    file.flush()?;
    m.outputs.push(path.display().to_string());
    m.finish(out, started)
}

/// Output directory: the explicit override, else the config's.
pub fn output_dir(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory))
}
