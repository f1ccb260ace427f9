//! Finite atomic measures `sum_i m_i delta_{x_i}`: initial conditions and
//! simulation states.

use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AtomicMeasure {
    /// `(position, mass)` pairs.
    atoms: Vec<(f64, f64)>,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let m = AtomicMeasure { atoms };
        m.validate()?;
        Ok(m)
    }

    pub fn empty() -> Self {
        AtomicMeasure::default()
    }

    pub fn dirac(x: f64, mass: f64) -> Self {
        AtomicMeasure {
            atoms: vec![(x, mass)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &(x, m) in &self.atoms {
            if !x.is_finite() || !(m >= 0.0 && m.is_finite()) {
                return Err(Error::config(format!(
                    "measure atoms need finite positions and non-negative finite mass, got ({x}, {m})"
                )));
            }
        }
        Ok(())
    }

    /// Every atom must lie in the closed domain.
    pub fn check_domain(&self, domain: &DomainSpec) -> Result<()> {
        for &(x, _) in &self.atoms {
            domain.check(x)?;
        }
        Ok(())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn push(&mut self, x: f64, mass: f64) {
        self.atoms.push((x, mass));
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// `<f, mu>`
    pub fn pair(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(x, m)| m * f(x)).sum()
    }

    /// Mass in `[lo, hi)`.
    pub fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.0 >= lo && a.0 < hi)
            .map(|a| a.1)
            .sum()
    }
}

impl FromIterator<(f64, f64)> for AtomicMeasure {
    fn from_iter<I: IntoIterator<Item = (f64, f64)>>(iter: I) -> Self {
        AtomicMeasure {
            atoms: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_and_regions() {
        let mu = AtomicMeasure::new(vec![(0.5, 1.0), (1.5, 2.0), (2.5, 0.25)]).unwrap();
        assert_eq!(mu.total_mass(), 3.25);
        assert_eq!(mu.pair(|x| x), 0.5 + 3.0 + 0.625);
        assert_eq!(mu.mass_in(1.0, 2.5), 2.0);
        assert!(AtomicMeasure::new(vec![(0.0, -1.0)]).is_err());
    }

    #[test]
    fn serializes_as_pairs() {
        let mu = AtomicMeasure::dirac(1.0, 0.5);
        assert_eq!(serde_json::to_string(&mu).unwrap(), "[[1.0,0.5]]");
    }
}
