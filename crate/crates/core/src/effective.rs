//! Effective (homogenized) coefficients: drift `c`, diffusion `eta`
//! (computed two independent ways), and the one-dimensional quadratic
//! coefficient `a`, plus the factorization used for Gaussian profiles.

use crate::error::{Error, Result};
use crate::torus::TorusField;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Constant coefficients of the homogenized equation, together with the
/// factorization `P P^T = S` of the symmetrized diffusion matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveCoefficients {
    pub dims: usize,
    /// Effective drift `c_i = <alpha1_i f0>`.
    pub c: Vec<f64>,
    /// Raw diffusion matrix (possibly non-symmetric), row-major.
    pub eta: Vec<Vec<f64>>,
    /// Symmetrized diffusion `S = (eta + eta^T)/2`.
    pub eta_sym: Vec<Vec<f64>>,
    /// Quadratic coefficient of the 1-d homogenized equation.
    pub a: Option<f64>,
    /// `P = Q diag(sqrt(lambda))` with `Q` the eigenvectors of `S`.
    pub p: Vec<Vec<f64>>,
    /// Eigenvalues of `S`, all positive.
    pub lambdas: Vec<f64>,
    /// `det S = prod(lambda)`.
    pub det_s: f64,
    /// Inverse of `S`, so `|P^-1 x|^2 = x^T S^-1 x`.
    pub s_inv: Vec<Vec<f64>>,
}

fn to_dmatrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let n = m.len();
    DMatrix::from_fn(n, n, |i, j| m[i][j])
}

fn from_dmatrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Exact mean of a pointwise product (zero mode of the dealiased product,
/// free of quadrature aliasing).
fn mean_product(a: &TorusField, b: &TorusField) -> f64 {
    a.mul_field(b).mean()
}

/// Effective drift `c_i = <alpha1_i f0>`.
///
/// This is the compatibility-consistent definition: it makes
/// `<(alpha1 - c) f0> = 0`, which is what every corrector right-hand side
/// relies on, and it reproduces constant drifts exactly.
pub fn drift_velocity(alpha1: &[TorusField], f0: &TorusField) -> Vec<f64> {
    alpha1.iter().map(|a| mean_product(a, f0)).collect()
}

/// Diffusion matrix from the first-order correctors:
/// `eta_ij = delta_ij - <(alpha1_i - c_i) f1_j>`.
pub fn eta_direct(alpha1: &[TorusField], c: &[f64], f1: &[TorusField]) -> Vec<Vec<f64>> {
    let n = alpha1.len();
    let mut eta = vec![vec![0.0; n]; n];
    for i in 0..n {
        let shifted = alpha1[i].add_scalar(-c[i]);
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            eta[i][j] = delta - mean_product(&shifted, &f1[j]);
        }
    }
    eta
}

/// Diffusion matrix as the quadratic form
/// `xi^T Q xi = <f0 |xi + grad(chi . xi)|^2>`,
/// expanded into `Q_ij = <f0 (delta_ij + d_j chi_i + d_i chi_j + grad chi_i . grad chi_j)>`.
pub fn eta_quadratic(chi: &[TorusField], f0: &TorusField) -> Result<Vec<Vec<f64>>> {
    let n = chi.len();
    let grads: Vec<Vec<TorusField>> = chi.iter().map(|x| x.gradient()).collect();
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let mut v = if i == j { f0.mean() } else { 0.0 };
            v += mean_product(f0, &grads[i][j]);
            v += mean_product(f0, &grads[j][i]);
            for ax in 0..n {
                v += f0.mul_field(&grads[i][ax].mul_field(&grads[j][ax])).mean();
            }
            q[i][j] = v;
            q[j][i] = v;
        }
    }
    let s = to_dmatrix(&q);
    let threshold = 1e-12 * s.trace();
    let eig = s.symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig <= threshold {
        return Err(Error::NotCoercive {
            min_eigenvalue: min_eig,
        });
    }
    Ok(q)
}

/// Quadratic coefficient of the 1-d homogenized equation:
/// `a = <alpha2 f0^2> + <(alpha1 - c) g1>`.
pub fn coeff_a(
    alpha1: &[TorusField],
    alpha2: &TorusField,
    c: &[f64],
    f0: &TorusField,
    g1: &TorusField,
) -> Result<f64> {
    if alpha1.len() != 1 {
        return Err(Error::DimensionUnsupported { dims: alpha1.len() });
    }
    let f0sq = f0.mul_field(f0);
    let first = mean_product(alpha2, &f0sq);
    let second = mean_product(&alpha1[0].add_scalar(-c[0]), g1);
    Ok(first + second)
}

/// Factorization data of the symmetrized diffusion matrix.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub p: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub det_s: f64,
    pub s_inv: Vec<Vec<f64>>,
}

/// Symmetrize `eta`, eigendecompose `S = Q diag(lambda) Q^T`, and return
/// `P = Q diag(sqrt(lambda))` so that `P P^T = S`.
pub fn factorize(eta: &[Vec<f64>]) -> Result<Factorization> {
    let n = eta.len();
    let raw = to_dmatrix(eta);
    let s = (&raw + raw.transpose()) * 0.5;
    let eig = s.clone().symmetric_eigen();
    let threshold = 1e-12 * s.trace();
    let mut lambdas: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    let min_eig = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig <= threshold {
        return Err(Error::NotCoercive {
            min_eigenvalue: min_eig,
        });
    }
    let q = eig.eigenvectors;
    let mut p = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            p[(i, j)] = q[(i, j)] * lambdas[j].sqrt();
        }
    }
    let det_s: f64 = lambdas.iter().product();
    let s_inv = s
        .try_inverse()
        .ok_or(Error::NotCoercive {
            min_eigenvalue: min_eig,
        })?;
    // sort eigenvalues descending for stable reporting
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(Factorization {
        p: from_dmatrix(&p),
        lambdas,
        det_s,
        s_inv: from_dmatrix(&s_inv),
    })
}

impl EffectiveCoefficients {
    /// Assemble the full coefficient record from solved correctors.
    pub fn new(
        alpha1: &[TorusField],
        c: Vec<f64>,
        eta: Vec<Vec<f64>>,
        a: Option<f64>,
    ) -> Result<Self> {
        let fact = factorize(&eta)?;
        let n = alpha1.len();
        let mut eta_sym = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                eta_sym[i][j] = 0.5 * (eta[i][j] + eta[j][i]);
            }
        }
        Ok(Self {
            dims: n,
            c,
            eta,
            eta_sym,
            a,
            p: fact.p,
            lambdas: fact.lambdas,
            det_s: fact.det_s,
            s_inv: fact.s_inv,
        })
    }

    /// Isotropic coefficients for tests and synthetic profiles.
    pub fn isotropic(dims: usize, eta: f64, a: Option<f64>) -> Self {
        let mut m = vec![vec![0.0; dims]; dims];
        for i in 0..dims {
            m[i][i] = eta;
        }
        let alpha_stub: Vec<TorusField> = (0..dims)
            .map(|_| TorusField::constant(dims, 16, 0.0))
            .collect();
        Self::new(&alpha_stub, vec![0.0; dims], m, a).expect("eta > 0")
    }

    /// From an explicit diffusion matrix (tests, synthetic cases).
    pub fn from_matrix(eta: Vec<Vec<f64>>, a: Option<f64>) -> Result<Self> {
        let dims = eta.len();
        let alpha_stub: Vec<TorusField> = (0..dims)
            .map(|_| TorusField::constant(dims.max(1), 16, 0.0))
            .collect();
        Self::new(&alpha_stub, vec![0.0; dims], eta, a)
    }

    pub fn eta_scalar(&self) -> f64 {
        self.eta[0][0]
    }

    pub fn a_scalar(&self) -> f64 {
        self.a.unwrap_or(0.0)
    }

    /// `x^T S^-1 x = |P^-1 x|^2`.
    pub fn quad_s_inv(&self, x: &[f64]) -> f64 {
        let n = self.dims;
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                v += x[i] * self.s_inv[i][j] * x[j];
            }
        }
        v
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambdas.iter().cloned().fold(0.0, f64::max)
    }
}
