//! Run configuration: a TOML file with `model`, `numerics`, `campaign` and
//! `output` blocks, dotted `--set key=value` overrides, built-in presets and
//! a content fingerprint.
//!
//! The fingerprint is the SHA-256 of the canonical JSON form (sorted keys)
//! of everything except the `output` block, so it does not depend on key
//! order in the file or on where results are written.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::DomainSpec;
use crate::engine::{SimParams, DEFAULT_POPULATION_CEILING};
use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::mechanism::{find_w_star, validate_w, BranchingMechanism, JumpAtom, MartingaleFunction};
use crate::motion::Motion;
use crate::spatial::{FnSpec, SpatialFn};
use crate::verify::Thresholds;

pub const PRESETS: [(&str, &str); 4] = [
    (
        "quadratic-torus",
        include_str!("../presets/quadratic-torus.toml"),
    ),
    (
        "single-atom-torus",
        include_str!("../presets/single-atom-torus.toml"),
    ),
    (
        "negative-control",
        include_str!("../presets/negative-control.toml"),
    ),
    (
        "killed-interval",
        include_str!("../presets/killed-interval.toml"),
    ),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    pub campaign: CampaignConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub domain: DomainSpec,
    /// Diffusion coefficient `a(x)`; the generator is `b f' + (a / 2) f''`.
    #[serde(default = "one")]
    pub diffusion: FnSpec,
    #[serde(default = "zero")]
    pub drift: FnSpec,
    pub alpha: FnSpec,
    #[serde(default = "zero")]
    pub beta: FnSpec,
    #[serde(default)]
    pub jumps: Vec<JumpSpec>,
    #[serde(default)]
    pub w: WSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    pub size: f64,
    pub intensity: FnSpec,
}

/// How the martingale function is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WSpec {
    /// Constant positive root of `psi(w) = 0` (homogeneous mechanisms).
    Root {
        #[serde(default = "one_f")]
        scale: f64,
    },
    /// A closed-form candidate, certified against the generator equation.
    Given {
        function: FnSpec,
        #[serde(default = "one_f")]
        scale: f64,
    },
}

impl Default for WSpec {
    fn default() -> Self {
        WSpec::Root { scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    pub dt: f64,
    pub delta: f64,
    pub epsilon: f64,
    /// Initial offspring truncation; extended until the tail is below
    /// `tail_tol`.
    pub n_max: usize,
    pub tail_tol: f64,
    /// Residual tolerance for certifying `w`.
    pub w_tol: f64,
    pub population_ceiling: usize,
    /// `solve` also runs on the refined grid with half the step.
    pub refine: bool,
    /// Every `time_stride`-th time slice goes into solver CSVs.
    pub time_stride: usize,
    pub thresholds: Thresholds,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            dt: 1e-3,
            delta: 1e-2,
            epsilon: 1e-2,
            n_max: 2,
            tail_tol: 1e-12,
            w_tol: 1e-6,
            population_ceiling: DEFAULT_POPULATION_CEILING,
            refine: false,
            time_stride: 100,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    Laplace,
    Martingale,
    Identity,
    Poissonization,
    SkeletonMoment,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Laplace => "laplace",
            TestKind::Martingale => "martingale",
            TestKind::Identity => "identity",
            TestKind::Poissonization => "poissonization",
            TestKind::SkeletonMoment => "skeleton-moment",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimKind {
    Skeleton,
    Superprocess,
    Dressed,
}

impl std::str::FromStr for SimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skeleton" => Ok(SimKind::Skeleton),
            "superprocess" => Ok(SimKind::Superprocess),
            "dressed" => Ok(SimKind::Dressed),
            other => Err(Error::config(format!(
                "unknown simulation kind {other:?} (skeleton, superprocess, dressed)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub f: FnSpec,
    #[serde(default = "zero")]
    pub h: FnSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub horizon: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Initial measure as `[position, mass]` atoms.
    pub mu: AtomicMeasure,
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
    /// Disjoint `[lo, hi)` regions for the Poissonization test.
    #[serde(default)]
    pub regions: Vec<[f64; 2]>,
    #[serde(default)]
    pub tests: Vec<TestKind>,
    /// Intermediate observation times (martingale test, snapshots).
    #[serde(default)]
    pub observe: Vec<f64>,
    /// Initial skeleton size for the skeleton moment test, placed at the
    /// first atom of `mu`.
    #[serde(default = "default_n0")]
    pub skeleton_n0: usize,
    #[serde(default = "default_sim")]
    pub simulate: SimKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".into(),
            formats: vec![OutputFormat::Csv],
        }
    }
}

fn one() -> FnSpec {
    FnSpec::Number(1.0)
}
fn zero() -> FnSpec {
    FnSpec::Number(0.0)
}
fn one_f() -> f64 {
    1.0
}
fn default_n0() -> usize {
    100
}
fn default_sim() -> SimKind {
    SimKind::Dressed
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Model(m) | Error::Precondition(m) => Error::Config(m),
        other => other,
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `key.path=value` overrides to a parsed TOML document.
pub fn apply_overrides(doc: &mut toml::Table, sets: &[String]) -> Result<()> {
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {s:?} is not of the form key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::config(format!("bad override key {key:?}")));
        }
        let mut table = &mut *doc;
        for part in &path[..path.len() - 1] {
            let entry = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::config(format!("override {key:?}: {part} is not a table")))?;
        }
        table.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

impl RunConfig {
    /// Parses, applies overrides and validates.
    pub fn from_toml_str(text: &str, sets: &[String]) -> Result<Self> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("parse error: {e}")))?;
        apply_overrides(&mut doc, sets)?;
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("schema error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file, or a built-in preset when `source` names one and no
    /// such file exists.
    pub fn load(source: &str, sets: &[String]) -> Result<Self> {
        let path = std::path::Path::new(source);
        if !path.exists() {
            if let Some(text) = preset(source) {
                return Self::from_toml_str(text, sets);
            }
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {source}: {e}")))?;
        Self::from_toml_str(&text, sets)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().unwrap().remove("output");
        // serde_json's default map is ordered by key, so this is canonical.
        let canonical = serde_json::to_string(&v).unwrap();
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn short_fingerprint(&self) -> String {
        self.fingerprint()[..12].to_string()
    }

    /// Schema-level checks that need no model construction.
    pub fn validate(&self) -> Result<()> {
        let n = &self.numerics;
        for (name, v) in [
            ("numerics.dt", n.dt),
            ("numerics.delta", n.delta),
            ("numerics.epsilon", n.epsilon),
            ("numerics.tail_tol", n.tail_tol),
            ("numerics.w_tol", n.w_tol),
            ("numerics.thresholds.sigma", n.thresholds.sigma),
            ("numerics.thresholds.ks_alpha", n.thresholds.ks_alpha),
            ("numerics.thresholds.corr_sigma", n.thresholds.corr_sigma),
            ("campaign.horizon", self.campaign.horizon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if n.thresholds.tol_disc < 0.0 || n.thresholds.moment_tol < 0.0 {
            return Err(Error::config("threshold allowances must be non-negative"));
        }
        if n.n_max < 2 || n.population_ceiling == 0 || n.time_stride == 0 {
            return Err(Error::config(
                "n_max must be at least 2; population_ceiling and time_stride positive",
            ));
        }
        if n.dt > self.campaign.horizon {
            return Err(Error::config("numerics.dt exceeds campaign.horizon"));
        }
        self.model.domain.validate()?;
        let scale = match &self.model.w {
            WSpec::Root { scale } | WSpec::Given { scale, .. } => *scale,
        };
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config(format!(
                "model.w.scale must be positive, got {scale}"
            )));
        }
        self.campaign.mu.validate().map_err(as_config)?;
        self.campaign
            .mu
            .check_domain(&self.model.domain)
            .map_err(|e| Error::config(format!("campaign.mu: {e}")))?;
        let mut regions = self.campaign.regions.clone();
        regions.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (i, r) in regions.iter().enumerate() {
            if !(r[0] < r[1]) {
                return Err(Error::config(format!(
                    "region [{}, {}) is empty",
                    r[0], r[1]
                )));
            }
            if i > 0 && regions[i - 1][1] > r[0] {
                return Err(Error::config("regions overlap"));
            }
        }
        self.sim_params().validate().map_err(as_config)?;
        // Mechanism coefficients are checked by building the model.
        let grid = self.model.domain.grid();
        let beta = self.model.beta.build()?;
        let bmin = beta.min_on(&grid);
        if bmin < 0.0 {
            return Err(Error::config(format!(
                "model.beta must be non-negative, min over grid is {bmin}"
            )));
        }
        Ok(())
    }

    pub fn sim_params(&self) -> SimParams {
        let n = &self.numerics;
        let c = &self.campaign;
        let mut p =
            SimParams::new(n.dt, n.delta, n.epsilon, c.seed, c.horizon).observing(&c.observe);
        p.population_ceiling = n.population_ceiling;
        p
    }

    pub fn regions(&self) -> Vec<(f64, f64)> {
        self.campaign.regions.iter().map(|r| (r[0], r[1])).collect()
    }

    /// Builds the model objects. `w` is certified when possible; a failed
    /// certification is reported in [`Model::w_error`] rather than raised, so
    /// that negative controls can still run.
    pub fn build(&self) -> Result<Model> {
        let m = &self.model;
        let domain = m.domain.clone();
        let motion = Motion::new(m.drift.build()?, m.diffusion.build()?, domain.clone())
            .map_err(as_config)?;
        let jumps = m
            .jumps
            .iter()
            .map(|j| Ok(JumpAtom::new(j.size, j.intensity.build()?)))
            .collect::<Result<Vec<_>>>()?;
        let mech = BranchingMechanism::new(m.alpha.build()?, m.beta.build()?, jumps, &domain)
            .map_err(as_config)?;
        let candidate = match &m.w {
            WSpec::Root { scale } => {
                SpatialFn::constant(find_w_star(&mech).map_err(as_config)? * scale)
            }
            WSpec::Given { function, scale } => function.build()?.scaled(*scale),
        };
        let (w, w_error) = match validate_w(&mech, &motion, candidate.clone(), self.numerics.w_tol)
        {
            Ok(w) => (w, None),
            Err(e @ Error::InvalidMartingaleFunction { .. }) => (
                MartingaleFunction::unvalidated(candidate, motion.grid()).map_err(as_config)?,
                Some(e),
            ),
            Err(e) => return Err(as_config(e)),
        };
        let pairs = self
            .campaign
            .pairs
            .iter()
            .map(|p| Ok((p.f.build()?, p.h.build()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            motion,
            mech,
            w,
            w_error,
            mu: self.campaign.mu.clone(),
            pairs,
            params: self.sim_params(),
        })
    }
}

/// Model objects built from a [`RunConfig`].
#[derive(Debug)]
pub struct Model {
    pub motion: Motion,
    pub mech: BranchingMechanism,
    pub w: MartingaleFunction,
    /// Why `w` failed certification, if it did.
    pub w_error: Option<Error>,
    pub mu: AtomicMeasure,
    pub pairs: Vec<(SpatialFn, SpatialFn)>,
    pub params: SimParams,
}
