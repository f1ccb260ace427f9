//! Bounded spatial coefficient functions.
//!
//! Every spatially varying quantity of the model (branching coefficients,
//! motion coefficients, the martingale function, test functions) is a
//! [`SpatialFn`]: a shareable evaluator with an optional closed-form gradient.
//! Named closed-form families are described by [`FnSpec`] in run configs.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainMode, Grid};
use crate::error::{Error, Result};

type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct SpatialFn {
    label: String,
    constant: Option<f64>,
    value: Eval,
    gradient: Option<Eval>,
}

impl fmt::Debug for SpatialFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialFn")
            .field("label", &self.label)
            .field("constant", &self.constant)
            .field("has_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl SpatialFn {
    pub fn constant(c: f64) -> Self {
        SpatialFn {
            label: format!("constant({c})"),
            constant: Some(c),
            value: Arc::new(move |_| c),
            gradient: Some(Arc::new(|_| 0.0)),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn affine(intercept: f64, slope: f64) -> Self {
        if slope == 0.0 {
            return Self::constant(intercept);
        }
        SpatialFn {
            label: format!("affine({intercept}, {slope})"),
            constant: None,
            value: Arc::new(move |x| intercept + slope * x),
            gradient: Some(Arc::new(move |_| slope)),
        }
    }

    /// `base + amplitude * exp(-(x - center)^2 / (2 width^2))`
    pub fn gaussian_bump(base: f64, amplitude: f64, center: f64, width: f64) -> Self {
        let s2 = width * width;
        SpatialFn {
            label: format!("gaussian-bump({base}, {amplitude}, {center}, {width})"),
            constant: None,
            value: Arc::new(move |x| {
                let d = x - center;
                base + amplitude * (-d * d / (2.0 * s2)).exp()
            }),
            gradient: Some(Arc::new(move |x| {
                let d = x - center;
                -amplitude * d / s2 * (-d * d / (2.0 * s2)).exp()
            })),
        }
    }

    /// `scale * exp(rate * x)`
    pub fn exponential(scale: f64, rate: f64) -> Self {
        SpatialFn {
            label: format!("exponential({scale}, {rate})"),
            constant: None,
            value: Arc::new(move |x| scale * (rate * x).exp()),
            gradient: Some(Arc::new(move |x| scale * rate * (rate * x).exp())),
        }
    }

    /// `base + amplitude * cos(wavenumber * (x - shift))`
    pub fn cosine(base: f64, amplitude: f64, wavenumber: f64, shift: f64) -> Self {
        SpatialFn {
            label: format!("cosine({base}, {amplitude}, {wavenumber}, {shift})"),
            constant: None,
            value: Arc::new(move |x| base + amplitude * (wavenumber * (x - shift)).cos()),
            gradient: Some(Arc::new(move |x| {
                -amplitude * wavenumber * (wavenumber * (x - shift)).sin()
            })),
        }
    }

    /// Arbitrary evaluator without a closed-form gradient.
    pub fn from_fn(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SpatialFn {
            label: label.into(),
            constant: None,
            value: Arc::new(f),
            gradient: None,
        }
    }

    pub fn with_gradient(mut self, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn without_gradient(mut self) -> Self {
        self.gradient = None;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self.constant {
            Some(c) => c,
            None => (self.value)(x),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// Closed-form gradient, if one was supplied.
    pub fn gradient(&self, x: f64) -> Option<f64> {
        self.gradient.as_ref().map(|g| g(x))
    }

    /// Gradient at `x`, falling back to finite differences with step equal to
    /// the grid spacing. Central differences are used unless a killed boundary
    /// is within one step, in which case the difference is one-sided. The
    /// flag reports whether the value is approximate.
    pub fn gradient_on(&self, grid: &Grid, x: f64) -> (f64, bool) {
        if let Some(g) = self.gradient(x) {
            return (g, false);
        }
        let h = grid.spacing;
        let f = |y: f64| self.eval(y);
        let d = match grid.mode {
            DomainMode::Torus => (f(x + h) - f(x - h)) / (2.0 * h),
            DomainMode::KilledInterval => {
                let left_ok = x - h > grid.lower;
                let right_ok = x + h < grid.upper;
                match (left_ok, right_ok) {
                    (true, true) => (f(x + h) - f(x - h)) / (2.0 * h),
                    (false, true) => (f(x + h) - f(x)) / h,
                    (true, false) => (f(x) - f(x - h)) / h,
                    (false, false) => 0.0,
                }
            }
        };
        (d, true)
    }

    pub fn scaled(&self, factor: f64) -> SpatialFn {
        if let Some(c) = self.constant {
            return SpatialFn::constant(c * factor);
        }
        let v = self.value.clone();
        SpatialFn {
            label: format!("{factor} * {}", self.label),
            constant: None,
            value: Arc::new(move |x| factor * v(x)),
            gradient: self
                .gradient
                .clone()
                .map(|g| Arc::new(move |x| factor * g(x)) as Eval),
        }
    }

    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        grid.sample(|x| self.eval(x))
    }

    /// Certified bound: sup of `|value|` over the grid nodes.
    pub fn bound_on(&self, grid: &Grid) -> f64 {
        grid.nodes
            .iter()
            .map(|&x| self.eval(x).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_on(&self, grid: &Grid) -> f64 {
        grid.nodes
            .iter()
            .map(|&x| self.eval(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_on(&self, grid: &Grid) -> f64 {
        grid.nodes
            .iter()
            .map(|&x| self.eval(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every node value must be finite.
    pub fn check_finite(&self, grid: &Grid, what: &str) -> Result<()> {
        for &x in &grid.nodes {
            let v = self.eval(x);
            if !v.is_finite() {
                return Err(Error::model(format!(
                    "{what} is not finite at x = {x}: {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Serializable description of a closed-form spatial function.
///
/// A bare number is shorthand for the constant family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FnSpec {
    Number(f64),
    Family(FnFamily),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FnFamily {
    Constant {
        value: f64,
    },
    Affine {
        intercept: f64,
        slope: f64,
    },
    GaussianBump {
        #[serde(default)]
        base: f64,
        amplitude: f64,
        center: f64,
        width: f64,
    },
    Exponential {
        #[serde(default = "one")]
        scale: f64,
        rate: f64,
    },
    Cosine {
        #[serde(default)]
        base: f64,
        amplitude: f64,
        #[serde(default = "one")]
        wavenumber: f64,
        #[serde(default)]
        shift: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl FnSpec {
    pub fn constant(value: f64) -> Self {
        FnSpec::Number(value)
    }

    pub fn build(&self) -> Result<SpatialFn> {
        let f = match self {
            FnSpec::Number(c) | FnSpec::Family(FnFamily::Constant { value: c }) => {
                SpatialFn::constant(*c)
            }
            FnSpec::Family(FnFamily::Affine { intercept, slope }) => {
                SpatialFn::affine(*intercept, *slope)
            }
            FnSpec::Family(FnFamily::GaussianBump {
                base,
                amplitude,
                center,
                width,
            }) => {
                if !(*width > 0.0) {
                    return Err(Error::config(format!(
                        "gaussian-bump width must be positive, got {width}"
                    )));
                }
                SpatialFn::gaussian_bump(*base, *amplitude, *center, *width)
            }
            FnSpec::Family(FnFamily::Exponential { scale, rate }) => {
                SpatialFn::exponential(*scale, *rate)
            }
            FnSpec::Family(FnFamily::Cosine {
                base,
                amplitude,
                wavenumber,
                shift,
            }) => SpatialFn::cosine(*base, *amplitude, *wavenumber, *shift),
        };
        Ok(f)
    }
}
