//! Elliptic cell problems on the torus.
//!
//! The direct operator is `L phi = -lap phi + div(alpha1 phi)`, the
//! adjoint one is `L* psi = -lap psi - alpha1 . grad psi`. Both have a
//! one-dimensional kernel (the invariant density `f0` for `L`, constants
//! for `L*`), so the linear solves pin the mean by augmenting the
//! operator with `phi -> phi + <phi>`. That augmented operator is
//! invertible and its solutions automatically land in the right
//! normalization class.
//!
//! Products are formed in physical space with 3/2-rule dealiasing and
//! derivatives in spectral space.

use crate::error::{Error, Result};
use crate::krylov::gmres;
use crate::spectral;
use crate::torus::{divergence, TorusField, VectorField};
use ndarray::{ArrayD, IxDyn};

/// Default residual tolerance for cell solves (`L^2(T^N)` norm).
pub const TOL_CELL: f64 = 1e-10;

/// Right-hand-side means below this are treated as discretization noise
/// and projected out; larger means are genuine modeling errors.
pub const COMPAT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Direct,
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    MeanZero,
    MeanOne,
}

/// A cell problem `L phi = rhs` (or `L* phi = rhs`) with a normalization
/// constraint on the mean of the solution.
pub struct CellProblem<'a> {
    pub drift: &'a [TorusField],
    pub rhs: TorusField,
    pub kind: CellKind,
    pub normalization: Normalization,
    /// Invariant density of the direct operator; used to verify the
    /// solvability condition of adjoint problems when available.
    pub kernel_weight: Option<&'a TorusField>,
}

#[derive(Debug, Clone, Copy)]
pub struct CellOptions {
    pub tol: f64,
    /// Maximum Krylov iterations; defaults to `10 * M^N`.
    pub max_iter: Option<usize>,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            tol: TOL_CELL,
            max_iter: None,
        }
    }
}

/// Apply the (un-augmented) cell operator spectrally.
pub fn apply_operator(drift: &[TorusField], kind: CellKind, phi: &TorusField) -> TorusField {
    let lap = phi.laplacian();
    match kind {
        CellKind::Direct => {
            let prods: VectorField = drift.iter().map(|a| a.mul_field(phi)).collect();
            divergence(&prods).sub(&lap)
        }
        CellKind::Adjoint => {
            let mut adv = TorusField::zeros_like(phi);
            for (ax, a) in drift.iter().enumerate() {
                adv = adv.add(&a.mul_field(&phi.deriv(ax)));
            }
            lap.add(&adv).scale(-1.0)
        }
    }
}

fn inv_lap_pinned(field: &ArrayD<f64>) -> ArrayD<f64> {
    use std::f64::consts::PI;
    let mut c = spectral::to_coeffs(field);
    let shape: Vec<usize> = c.shape().to_vec();
    for (idx, v) in c.indexed_iter_mut() {
        let mut w2 = 0.0;
        for ax in 0..shape.len() {
            let om = 2.0 * PI * spectral::freq(idx[ax], shape[ax]) as f64;
            w2 += om * om;
        }
        if w2 > 0.0 {
            *v /= w2;
        }
    }
    spectral::to_values(&c)
}

struct SolveOutcome {
    field: TorusField,
    iterations: usize,
    residual: f64,
}

/// Solve the augmented system `L phi + <phi> = b`.
fn solve_augmented(
    drift: &[TorusField],
    kind: CellKind,
    b: &TorusField,
    opts: &CellOptions,
) -> Result<SolveOutcome> {
    let shape = b.shape().to_vec();
    let ntot: usize = shape.iter().product();
    let max_iter = opts.max_iter.unwrap_or(10 * ntot);
    let tol_abs = opts.tol * (ntot as f64).sqrt();
    let apply = |x: &[f64]| -> Vec<f64> {
        let f = TorusField::new(ArrayD::from_shape_vec(IxDyn(&shape), x.to_vec()).unwrap());
        let lf = apply_operator(drift, kind, &f);
        let mean = f.mean();
        lf.data().iter().map(|v| v + mean).collect()
    };
    let precond = |x: &[f64]| -> Vec<f64> {
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), x.to_vec()).unwrap();
        inv_lap_pinned(&arr).into_iter().collect()
    };
    let bvec: Vec<f64> = b.data().iter().copied().collect();
    let (x, iterations, residual) = gmres(apply, precond, &bvec, tol_abs, max_iter)?;
    let field = TorusField::new(ArrayD::from_shape_vec(IxDyn(&shape), x).unwrap());
    Ok(SolveOutcome {
        field,
        iterations,
        residual: residual / (ntot as f64).sqrt(),
    })
}

fn check_residual(
    drift: &[TorusField],
    kind: CellKind,
    phi: &TorusField,
    rhs: &TorusField,
    opts: &CellOptions,
    iterations: usize,
) -> Result<f64> {
    let res = apply_operator(drift, kind, phi).sub(rhs).l2();
    if res > opts.tol {
        return Err(Error::NonConvergence {
            iterations,
            residual: res,
        });
    }
    Ok(res)
}

/// Invariant density of the direct operator: `L f0 = 0`, `<f0> = 1`,
/// `f0 > 0` pointwise.
pub fn solve_f0(alpha1: &[TorusField], opts: &CellOptions) -> Result<TorusField> {
    let n = alpha1[0].shape()[0];
    if n < 16 {
        return Err(Error::InvalidInput(format!(
            "grid resolution {n} < 16 per axis"
        )));
    }
    // K phi = 1 has the unique solution phi = f0: taking the mean gives
    // <phi> = 1, hence L phi = 0.
    let one = TorusField::constant(alpha1[0].dims(), n, 1.0);
    let out = solve_augmented(alpha1, CellKind::Direct, &one, opts)?;
    let mean = out.field.mean();
    let f0 = out.field.scale(1.0 / mean);
    let zero = TorusField::zeros_like(&f0);
    check_residual(alpha1, CellKind::Direct, &f0, &zero, opts, out.iterations)?;
    let min = f0.min();
    if min <= 0.0 {
        return Err(Error::NotPositive { min_value: min });
    }
    Ok(f0)
}

/// Solve a general cell problem with compatibility checking.
pub fn solve_cell(problem: &CellProblem, opts: &CellOptions) -> Result<TorusField> {
    let mut rhs = problem.rhs.clone();
    match problem.kind {
        CellKind::Direct => {
            let mean = rhs.mean();
            if mean.abs() > COMPAT_THRESHOLD {
                return Err(Error::CompatibilityViolated { mean });
            }
            if mean != 0.0 {
                rhs = rhs.add_scalar(-mean);
            }
        }
        CellKind::Adjoint => {
            if let Some(f0) = problem.kernel_weight {
                let pairing = rhs.inner(f0);
                if pairing.abs() > COMPAT_THRESHOLD {
                    return Err(Error::CompatibilityViolated { mean: pairing });
                }
                // <(rhs - s) f0> = 0 with s the pairing, since <f0> = 1
                if pairing != 0.0 {
                    rhs = rhs.add_scalar(-pairing);
                }
            }
        }
    }
    let out = solve_augmented(problem.drift, problem.kind, &rhs, opts)?;
    let phi = match problem.normalization {
        Normalization::MeanZero => {
            let m = out.field.mean();
            out.field.add_scalar(-m)
        }
        Normalization::MeanOne => {
            let m = out.field.mean();
            out.field.scale(1.0 / m)
        }
    };
    check_residual(
        problem.drift,
        problem.kind,
        &phi,
        &rhs,
        opts,
        out.iterations,
    )?;
    Ok(phi)
}

/// First-order correctors: for each component `i`,
/// `L f1_i = -f0 (alpha1_i - c_i) + 2 d_i f0`, `<f1_i> = 0`.
pub fn solve_f1(
    alpha1: &[TorusField],
    c: &[f64],
    f0: &TorusField,
    opts: &CellOptions,
) -> Result<VectorField> {
    let mut out = Vec::with_capacity(alpha1.len());
    for (i, a) in alpha1.iter().enumerate() {
        let rhs = f0
            .deriv(i)
            .scale(2.0)
            .sub(&f0.mul_field(&a.add_scalar(-c[i])));
        let problem = CellProblem {
            drift: alpha1,
            rhs,
            kind: CellKind::Direct,
            normalization: Normalization::MeanZero,
            kernel_weight: None,
        };
        out.push(solve_cell(&problem, opts)?);
    }
    Ok(out)
}

/// Quadratic corrector (one space dimension only):
/// `L g1 = -d_z(alpha2 f0^2)`, `<g1> = 0`.
pub fn solve_g1(
    alpha1: &[TorusField],
    alpha2: &TorusField,
    f0: &TorusField,
    opts: &CellOptions,
) -> Result<TorusField> {
    if alpha1.len() != 1 || f0.dims() != 1 {
        return Err(Error::DimensionUnsupported { dims: f0.dims() });
    }
    let f0sq = f0.mul_field(f0);
    let rhs = alpha2.mul_field(&f0sq).deriv(0).scale(-1.0);
    let problem = CellProblem {
        drift: alpha1,
        rhs,
        kind: CellKind::Direct,
        normalization: Normalization::MeanZero,
        kernel_weight: None,
    };
    solve_cell(&problem, opts)
}

/// Adjoint correctors: `L* chi_j = alpha1_j - c_j`, `<chi_j> = 0`.
pub fn solve_chi(
    alpha1: &[TorusField],
    c: &[f64],
    f0: &TorusField,
    opts: &CellOptions,
) -> Result<VectorField> {
    let mut out = Vec::with_capacity(alpha1.len());
    for (j, a) in alpha1.iter().enumerate() {
        let problem = CellProblem {
            drift: alpha1,
            rhs: a.add_scalar(-c[j]),
            kind: CellKind::Adjoint,
            normalization: Normalization::MeanZero,
            kernel_weight: Some(f0),
        };
        out.push(solve_cell(&problem, opts)?);
    }
    Ok(out)
}
