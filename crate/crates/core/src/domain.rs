//! Spatial domain and the finite-difference grid laid over it.
//!
//! Two modes are supported. A killed interval `(l, r)` carries interior nodes
//! only, with the boundary acting as the cemetery state: grid functions are
//! extended by zero there. A torus `[l, r)` identifies the endpoints and keeps
//! the motion conservative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainMode {
    KilledInterval,
    Torus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub mode: DomainMode,
    pub bounds: [f64; 2],
    pub grid_nodes: usize,
}

impl DomainSpec {
    pub fn new(mode: DomainMode, lower: f64, upper: f64, grid_nodes: usize) -> Result<Self> {
        let spec = DomainSpec {
            mode,
            bounds: [lower, upper],
            grid_nodes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn torus(lower: f64, upper: f64, grid_nodes: usize) -> Result<Self> {
        Self::new(DomainMode::Torus, lower, upper, grid_nodes)
    }

    pub fn killed_interval(lower: f64, upper: f64, grid_nodes: usize) -> Result<Self> {
        Self::new(DomainMode::KilledInterval, lower, upper, grid_nodes)
    }

    pub fn validate(&self) -> Result<()> {
        let [l, r] = self.bounds;
        if !(l.is_finite() && r.is_finite() && l < r) {
            return Err(Error::config(format!(
                "domain bounds must satisfy l < r, got [{l}, {r}]"
            )));
        }
        if self.grid_nodes < 3 {
            return Err(Error::config(format!(
                "grid_nodes must be at least 3, got {}",
                self.grid_nodes
            )));
        }
        Ok(())
    }

    pub fn lower(&self) -> f64 {
        self.bounds[0]
    }

    pub fn upper(&self) -> f64 {
        self.bounds[1]
    }

    pub fn length(&self) -> f64 {
        self.bounds[1] - self.bounds[0]
    }

    /// Closed domain membership used for evaluation-time range checks.
    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && x >= self.lower() && x <= self.upper()
    }

    /// Open-interval membership used by the killing rule.
    pub fn interior(&self, x: f64) -> bool {
        x > self.lower() && x < self.upper()
    }

    /// Map a position back onto `[l, r)`. Only meaningful on the torus.
    #[inline]
    pub fn wrap(&self, x: f64) -> f64 {
        let [l, r] = self.bounds;
        if x >= l && x < r {
            return x;
        }
        let len = r - l;
        if x < l && x + len >= l && x + len < r {
            return x + len;
        }
        if x >= r && x - len >= l && x - len < r {
            return x - len;
        }
        let y = l + (x - l).rem_euclid(len);
        // rem_euclid can round up to exactly `len`.
        if y >= self.upper() {
            l
        } else {
            y
        }
    }

    pub fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                x,
                lower: self.lower(),
                upper: self.upper(),
            })
        }
    }

    /// Same domain with the grid spacing halved.
    pub fn refined(&self) -> DomainSpec {
        let grid_nodes = match self.mode {
            DomainMode::Torus => 2 * self.grid_nodes,
            DomainMode::KilledInterval => 2 * self.grid_nodes + 1,
        };
        DomainSpec {
            grid_nodes,
            ..self.clone()
        }
    }

    pub fn grid(&self) -> Grid {
        let [l, r] = self.bounds;
        let n = self.grid_nodes;
        let (spacing, nodes) = match self.mode {
            DomainMode::Torus => {
                let h = (r - l) / n as f64;
                (h, (0..n).map(|i| l + i as f64 * h).collect())
            }
            DomainMode::KilledInterval => {
                let h = (r - l) / (n + 1) as f64;
                (h, (0..n).map(|i| l + (i + 1) as f64 * h).collect())
            }
        };
        Grid {
            mode: self.mode,
            lower: l,
            upper: r,
            spacing,
            nodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub mode: DomainMode,
    pub lower: f64,
    pub upper: f64,
    pub spacing: f64,
    pub nodes: Vec<f64>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    /// Piecewise-linear interpolation of grid values. Periodic on the torus;
    /// zero at the boundary of a killed interval.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let n = self.len();
        let h = self.spacing;
        match self.mode {
            DomainMode::Torus => {
                let len = self.upper - self.lower;
                let s = (x - self.lower).rem_euclid(len) / h;
                let i = (s.floor() as usize).min(n - 1);
                let frac = s - i as f64;
                let a = values[i];
                let b = values[(i + 1) % n];
                a + frac * (b - a)
            }
            DomainMode::KilledInterval => {
                if x <= self.lower || x >= self.upper {
                    return 0.0;
                }
                // Position in units of h with index 0 at the left boundary.
                let s = (x - self.lower) / h;
                let k = s.floor() as usize;
                let frac = s - k as f64;
                let at = |j: usize| -> f64 {
                    if j == 0 || j > n {
                        0.0
                    } else {
                        values[j - 1]
                    }
                };
                at(k) + frac * (at(k + 1) - at(k))
            }
        }
    }

    /// Index of the node nearest to `x`, if `x` is within half a cell of one.
    pub fn nearest_node(&self, x: f64) -> Option<usize> {
        let n = self.len();
        match self.mode {
            DomainMode::Torus => {
                let len = self.upper - self.lower;
                let s = (x - self.lower).rem_euclid(len) / self.spacing;
                Some((s.round() as usize) % n)
            }
            DomainMode::KilledInterval => {
                let s = (x - self.lower) / self.spacing - 1.0;
                let i = s.round();
                if i < 0.0 || i >= n as f64 {
                    None
                } else {
                    Some(i as usize)
                }
            }
        }
    }
}
