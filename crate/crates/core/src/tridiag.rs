//! Pre-factorized tridiagonal and cyclic tridiagonal solves.

/// Row `i` reads `sub[i] * x[i-1] + diag[i] * x[i] + sup[i] * x[i+1]`.
/// In the cyclic case `sub[0]` couples to `x[n-1]` and `sup[n-1]` to `x[0]`;
/// otherwise those two entries are ignored.
#[derive(Clone, Debug)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub cyclic: bool,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let left = if i > 0 {
                x[i - 1]
            } else if self.cyclic {
                x[n - 1]
            } else {
                0.0
            };
            let right = if i + 1 < n {
                x[i + 1]
            } else if self.cyclic {
                x[0]
            } else {
                0.0
            };
            out[i] = self.sub[i] * left + self.diag[i] * x[i] + self.sup[i] * right;
        }
    }

    pub fn factorize(&self) -> Factorized {
        let n = self.len();
        assert!(n >= 3, "tridiagonal system needs at least 3 rows");
        if !self.cyclic {
            return Factorized {
                thomas: Thomas::new(&self.sub, &self.diag, &self.sup),
                correction: None,
            };
        }
        // Sherman-Morrison: split off the corner entries.
        let corner_top = self.sub[0];
        let corner_bottom = self.sup[n - 1];
        let gamma = -self.diag[0];
        let mut diag = self.diag.clone();
        diag[0] -= gamma;
        diag[n - 1] -= corner_bottom * corner_top / gamma;
        let thomas = Thomas::new(&self.sub, &diag, &self.sup);
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = corner_bottom;
        let mut z = vec![0.0; n];
        thomas.solve(&u, &mut z);
        let denom = 1.0 + z[0] + corner_top * z[n - 1] / gamma;
        Factorized {
            thomas,
            correction: Some(Correction {
                z,
                gamma,
                corner_top,
                denom,
            }),
        }
    }
}

#[derive(Clone, Debug)]
struct Thomas {
    sub: Vec<f64>,
    // Modified super-diagonal and inverse pivots.
    c_prime: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Thomas {
    fn new(sub: &[f64], diag: &[f64], sup: &[f64]) -> Self {
        let n = diag.len();
        let mut c_prime = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut pivot = diag[0];
        inv_pivot[0] = 1.0 / pivot;
        c_prime[0] = sup[0] * inv_pivot[0];
        for i in 1..n {
            pivot = diag[i] - sub[i] * c_prime[i - 1];
            inv_pivot[i] = 1.0 / pivot;
            c_prime[i] = if i + 1 < n {
                sup[i] * inv_pivot[i]
            } else {
                0.0
            };
        }
        Thomas {
            sub: sub.to_vec(),
            c_prime,
            inv_pivot,
        }
    }

    fn solve(&self, rhs: &[f64], x: &mut [f64]) {
        let n = rhs.len();
        x[0] = rhs[0] * self.inv_pivot[0];
        for i in 1..n {
            x[i] = (rhs[i] - self.sub[i] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.c_prime[i] * x[i + 1];
        }
    }
}

#[derive(Clone, Debug)]
struct Correction {
    z: Vec<f64>,
    gamma: f64,
    corner_top: f64,
    denom: f64,
}

#[derive(Clone, Debug)]
pub struct Factorized {
    thomas: Thomas,
    correction: Option<Correction>,
}

impl Factorized {
    pub fn solve(&self, rhs: &[f64], x: &mut [f64]) {
        self.thomas.solve(rhs, x);
        if let Some(c) = &self.correction {
            let n = x.len();
            let fact = (x[0] + c.corner_top * x[n - 1] / c.gamma) / c.denom;
            for (xi, zi) in x.iter_mut().zip(&c.z) {
                *xi -= fact * zi;
            }
        }
    }
}
