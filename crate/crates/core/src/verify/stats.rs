//! Small statistical toolkit: sample moments, the one-sample KS test
//! against Uniform(0, 1), randomized Poisson PIT and Pearson correlation.

use statrs::distribution::{Discrete, DiscreteCDF, Poisson};

use crate::error::{Error, Result};

/// Sample mean and standard error `s / sqrt(n)` (with the `n - 1` variance).
pub fn mean_and_se(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "need at least 2 replicates, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function form, fast for small arguments.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda
            * (1..=20)
                .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
                .sum::<f64>();
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let sf = 2.0
            * (1..=100)
                .map(|k| {
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
                })
                .sum::<f64>();
        sf.clamp(0.0, 1.0)
    }
}

/// One-sample KS test against Uniform(0, 1): `(D, p)`.
///
/// The p-value uses the asymptotic Kolmogorov law with Stephens' finite-n
/// correction `(sqrt(n) + 0.12 + 0.11 / sqrt(n)) D`.
pub fn ks_uniform(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("KS test on an empty sample".into()));
    }
    let mut u = samples.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    Ok((d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)))
}

/// Randomized PIT of a Poisson count: `F(n - 1) + v pmf(n)`, uniform on
/// (0, 1) exactly when `n ~ Poisson(lambda)`.
pub fn poisson_pit(n: u64, lambda: f64, v: f64) -> f64 {
    if lambda <= 0.0 {
        // Poisson(0) is the point mass at 0.
        return if n == 0 { v } else { 1.0 };
    }
    let law = Poisson::new(lambda).expect("positive Poisson rate");
    let below = if n == 0 { 0.0 } else { law.cdf(n - 1) };
    (below + v * law.pmf(n)).clamp(0.0, 1.0)
}

/// Pearson correlation; 0 when either sample is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Two-sided normal p-value of a z-score.
pub fn two_sided_p(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}
