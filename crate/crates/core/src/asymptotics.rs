//! Self-similar rescaling, approximate-solution assembly, and the
//! convergence diagnostics.
//!
//! The rescaling `tau = log sqrt(1+2t)`, `x = (y - c t)/sqrt(1+2t)` maps
//! diffusive spreading to a fixed frame; the fast variable
//! `z = e^tau x + c (e^(2 tau) - 1)/2` is the original spatial position,
//! so torus fields are evaluated at `z` by periodic spectral
//! interpolation (exact for band-limited fields).

use crate::cell::{self, CellKind, CellOptions, CellProblem, Normalization};
use crate::direct::BoxGrid;
use crate::effective::{self, EffectiveCoefficients};
use crate::error::{Error, Result};
use crate::profile::{ProfileGrid, SelfSimilarProfile};
use crate::torus::{TorusField, VectorField};
use ndarray::{ArrayD, IxDyn};

/// `tau` as a function of the original time.
pub fn tau_of_t(t: f64) -> f64 {
    (1.0 + 2.0 * t).sqrt().ln()
}

/// Scale factor `R = e^tau = sqrt(1+2t)`.
pub fn scale_of_t(t: f64) -> f64 {
    (1.0 + 2.0 * t).sqrt()
}

/// A field in self-similar variables on a truncated x-grid.
#[derive(Debug, Clone)]
pub struct RescaledState {
    pub tau: f64,
    pub values: ArrayD<f64>,
}

/// Map a box field to self-similar variables:
/// `U(tau, x) = (1+2t)^(N/2) f(t, sqrt(1+2t) x + c t)`.
///
/// Points that map outside the fundamental box are zeroed (the wrap
/// guard keeps the true field negligible there). The interpolation is
/// spectral, so the quadrature mass of `U` matches the box mass of `f`
/// to spectral accuracy.
pub fn to_self_similar(
    f_box: &ArrayD<f64>,
    grid: &BoxGrid,
    t: f64,
    c: &[f64],
    x_grid: &ProfileGrid,
) -> Result<RescaledState> {
    let dims = grid.dims;
    let r = scale_of_t(t);
    let tau = tau_of_t(t);
    let coeffs = crate::spectral::to_coeffs(f_box);
    let xs = x_grid.coords();
    let l_box = grid.half_width as f64;
    let mut axis_pts = Vec::with_capacity(dims);
    let mut masks = Vec::with_capacity(dims);
    for ax in 0..dims {
        let pts: Vec<f64> = xs.iter().map(|&x| r * x + c[ax] * t).collect();
        let mask: Vec<bool> = pts.iter().map(|&y| (-l_box..l_box).contains(&y)).collect();
        axis_pts.push(pts);
        masks.push(mask);
    }
    let mut values = crate::spectral::eval_tensor(
        &coeffs,
        &grid.periods(),
        &grid.origins(),
        &axis_pts,
    );
    let amp = r.powi(dims as i32);
    for (idx, v) in values.indexed_iter_mut() {
        let inside = (0..dims).all(|ax| masks[ax][idx[ax]]);
        *v = if inside { amp * *v } else { 0.0 };
    }
    let state = RescaledState { tau, values };
    // domain adequacy of the target grid
    let total = x_grid.l1_norm(&state.values);
    if total > 0.0 {
        let n = x_grid.n;
        let lo = n / 20;
        let hi = n - 1 - n / 20;
        let mut band = 0.0;
        for (idx, v) in state.values.indexed_iter() {
            if (0..dims).any(|ax| idx[ax] < lo || idx[ax] > hi) {
                band += v.abs();
            }
        }
        band *= x_grid.cell_volume();
        if band > 1e-6 * total {
            return Err(Error::OutOfDomain {
                fraction: band / total,
            });
        }
    }
    Ok(state)
}

/// Inverse of [`to_self_similar`]: `f(t, y) = R^-N U(tau, (y - ct)/R)`.
pub fn from_self_similar(
    state: &RescaledState,
    x_grid: &ProfileGrid,
    c: &[f64],
    grid: &BoxGrid,
) -> ArrayD<f64> {
    let dims = grid.dims;
    let r = state.tau.exp();
    let t = (r * r - 1.0) / 2.0;
    let coeffs = crate::spectral::to_coeffs(&state.values);
    let centers = grid.centers();
    let lx = x_grid.half_width;
    let mut axis_pts = Vec::with_capacity(dims);
    let mut masks = Vec::with_capacity(dims);
    for ax in 0..dims {
        let pts: Vec<f64> = centers.iter().map(|&y| (y - c[ax] * t) / r).collect();
        let mask: Vec<bool> = pts.iter().map(|&x| (-lx..lx).contains(&x)).collect();
        axis_pts.push(pts);
        masks.push(mask);
    }
    let mut values = crate::spectral::eval_tensor(
        &coeffs,
        &x_grid.periods(),
        &x_grid.origins(),
        &axis_pts,
    );
    let amp = r.powi(-(dims as i32));
    for (idx, v) in values.indexed_iter_mut() {
        let inside = (0..dims).all(|ax| masks[ax][idx[ax]]);
        *v = if inside { amp * *v } else { 0.0 };
    }
    values
}

/// Per-axis fast-variable coordinates `z_i = R x_i + c_i (R^2 - 1)/2`.
fn z_points(x_grid: &ProfileGrid, r: f64, c: &[f64]) -> Vec<Vec<f64>> {
    let xs = x_grid.coords();
    (0..x_grid.dims)
        .map(|ax| {
            let shift = c[ax] * (r * r - 1.0) / 2.0;
            xs.iter().map(|&x| r * x + shift).collect()
        })
        .collect()
}

/// Cell data feeding the two-scale expansion.
#[derive(Debug, Clone)]
pub struct CellData {
    pub alpha1: VectorField,
    pub alpha2: VectorField,
    pub alpha3: VectorField,
    pub f0: TorusField,
    pub f1: VectorField,
    /// Quadratic corrector (one dimension only).
    pub g1: Option<TorusField>,
    pub chi: VectorField,
    pub u2: U2Data,
}

/// Second-order cell solutions, one per separated x-factor of the
/// right-hand side in the definition of the approximate solution.
#[derive(Debug, Clone)]
pub struct U2Data {
    /// Pairs with `e1(x) = -dtau F + div(xF) + lap F`; solves `L G = f0 - 1`.
    pub from_hom: TorusField,
    /// Pairs with `d_i d_j F`.
    pub from_grad2: Vec<Vec<TorusField>>,
    /// Pairs with `F F'` (one dimension).
    pub from_ffp: Option<TorusField>,
    /// Pairs with `F^3` (one dimension).
    pub from_cube: Option<TorusField>,
    /// Pairs with `F^2` (two dimensions, from `div_z(alpha2 f0^2)`).
    pub from_sq: Option<TorusField>,
}

/// Residual record of every cell solve (`L^2` norms).
#[derive(Debug, Clone, serde::Serialize)]
pub struct CellResiduals {
    pub f0: f64,
    pub f1: Vec<f64>,
    pub g1: Option<f64>,
    pub chi: Vec<f64>,
}

/// Complete homogenization output for one flux background.
#[derive(Debug, Clone)]
pub struct Homogenization {
    pub cell: CellData,
    pub coeffs: EffectiveCoefficients,
    pub eta_quadratic: Vec<Vec<f64>>,
    pub residuals: CellResiduals,
}

/// Solve every cell problem and assemble the effective coefficients.
pub fn homogenize(
    alpha1: &VectorField,
    alpha2: &VectorField,
    alpha3: &VectorField,
    opts: &CellOptions,
) -> Result<Homogenization> {
    let dims = alpha1.len();
    let f0 = cell::solve_f0(alpha1, opts)?;
    let c = effective::drift_velocity(alpha1, &f0);
    let f1 = cell::solve_f1(alpha1, &c, &f0, opts)?;
    let chi = cell::solve_chi(alpha1, &c, &f0, opts)?;
    let eta = effective::eta_direct(alpha1, &c, &f1);
    let eta_quadratic = effective::eta_quadratic(&chi, &f0)?;
    let g1 = if dims == 1 {
        Some(cell::solve_g1(alpha1, &alpha2[0], &f0, opts)?)
    } else {
        None
    };
    let a = if dims == 1 {
        Some(effective::coeff_a(
            alpha1,
            &alpha2[0],
            &c,
            &f0,
            g1.as_ref().unwrap(),
        )?)
    } else {
        None
    };
    let coeffs = EffectiveCoefficients::new(alpha1, c, eta, a)?;
    let u2 = solve_u2_data(alpha1, alpha2, alpha3, &f0, &f1, g1.as_ref(), &coeffs, opts)?;
    let residuals = CellResiduals {
        f0: cell::apply_operator(alpha1, CellKind::Direct, &f0).l2(),
        f1: f1
            .iter()
            .enumerate()
            .map(|(i, fi)| {
                let rhs = f0
                    .deriv(i)
                    .scale(2.0)
                    .sub(&f0.mul_field(&alpha1[i].add_scalar(-coeffs.c[i])));
                cell::apply_operator(alpha1, CellKind::Direct, fi).sub(&rhs).l2()
            })
            .collect(),
        g1: g1.as_ref().map(|g| {
            let rhs = alpha2[0].mul_field(&f0.mul_field(&f0)).deriv(0).scale(-1.0);
            cell::apply_operator(alpha1, CellKind::Direct, g).sub(&rhs).l2()
        }),
        chi: chi
            .iter()
            .enumerate()
            .map(|(j, xj)| {
                let rhs = alpha1[j].add_scalar(-coeffs.c[j]);
                cell::apply_operator(alpha1, CellKind::Adjoint, xj).sub(&rhs).l2()
            })
            .collect(),
    };
    Ok(Homogenization {
        cell: CellData {
            alpha1: alpha1.clone(),
            alpha2: alpha2.clone(),
            alpha3: alpha3.clone(),
            f0,
            f1,
            g1,
            chi,
            u2,
        },
        coeffs,
        eta_quadratic,
        residuals,
    })
}

fn solve_direct_mean_zero(
    alpha1: &VectorField,
    rhs: TorusField,
    opts: &CellOptions,
) -> Result<TorusField> {
    let problem = CellProblem {
        drift: alpha1,
        rhs,
        kind: CellKind::Direct,
        normalization: Normalization::MeanZero,
        kernel_weight: None,
    };
    cell::solve_cell(&problem, opts)
}

#[allow(clippy::too_many_arguments)]
fn solve_u2_data(
    alpha1: &VectorField,
    alpha2: &VectorField,
    alpha3: &VectorField,
    f0: &TorusField,
    f1: &VectorField,
    g1: Option<&TorusField>,
    coeffs: &EffectiveCoefficients,
    opts: &CellOptions,
) -> Result<U2Data> {
    let dims = alpha1.len();
    let from_hom = solve_direct_mean_zero(alpha1, f0.add_scalar(-1.0), opts)?;
    // grad2[i][j] pairs with d_i d_j F:
    // rhs = <(a1_i - c_i) f1_j> - (a1_i - c_i) f1_j + 2 d_{z_i} f1_j
    let mut from_grad2 = Vec::with_capacity(dims);
    for i in 0..dims {
        let shifted = alpha1[i].add_scalar(-coeffs.c[i]);
        let mut row = Vec::with_capacity(dims);
        for j in 0..dims {
            let prod = shifted.mul_field(&f1[j]);
            let mean = prod.mean();
            let rhs = f1[j]
                .deriv(i)
                .scale(2.0)
                .sub(&prod)
                .add_scalar(mean);
            row.push(solve_direct_mean_zero(alpha1, rhs, opts)?);
        }
        from_grad2.push(row);
    }
    let mut from_ffp = None;
    let mut from_cube = None;
    let mut from_sq = None;
    if dims == 1 {
        let g1 = g1.expect("g1 present in one dimension");
        let shifted = alpha1[0].add_scalar(-coeffs.c[0]);
        let f0sq = f0.mul_field(f0);
        // pairs with F F':
        //   2[<(a1-c) g1> - (a1-c) g1] + 4 d_z g1
        //   + 2[alpha2 f0^2 - <alpha2 f0^2>] + 2 d_z(alpha2 f0 f1)
        let pg = shifted.mul_field(g1);
        let a2f0sq = alpha2[0].mul_field(&f0sq);
        // the nonlinear collection enters the equation with the sign of
        // -R^(N+1) div B1~, hence negatively here (this is also what makes
        // a = <alpha2 f0^2> + <(alpha1-c) g1> come out of compatibility)
        let rhs_ffp = g1
            .deriv(0)
            .scale(4.0)
            .sub(&pg.scale(2.0))
            .add_scalar(2.0 * pg.mean())
            .sub(&a2f0sq.scale(2.0))
            .add_scalar(2.0 * a2f0sq.mean())
            .sub(&alpha2[0].mul_field(&f0.mul_field(&f1[0])).deriv(0).scale(2.0));
        from_ffp = Some(solve_direct_mean_zero(alpha1, rhs_ffp, opts)?);
        // pairs with F^3: -(2 d_z(alpha2 f0 g1) + d_z(alpha3 f0^3))
        let rhs_cube = alpha2[0]
            .mul_field(&f0.mul_field(g1))
            .deriv(0)
            .scale(-2.0)
            .sub(&alpha3[0].mul_field(&f0sq.mul_field(f0)).deriv(0));
        from_cube = Some(solve_direct_mean_zero(alpha1, rhs_cube, opts)?);
    } else if dims == 2 {
        // pairs with F^2: -div_z(alpha2 f0^2)
        let f0sq = f0.mul_field(f0);
        let comps: VectorField = alpha2.iter().map(|a| a.mul_field(&f0sq)).collect();
        let rhs = crate::torus::divergence(&comps).scale(-1.0);
        from_sq = Some(solve_direct_mean_zero(alpha1, rhs, opts)?);
    }
    Ok(U2Data {
        from_hom,
        from_grad2,
        from_ffp,
        from_cube,
        from_sq,
    })
}

/// One separable term `R^pow * G(z(x)) * X(x)` of a two-scale field.
#[derive(Debug, Clone)]
struct Term {
    pow: i32,
    cell: TorusField,
    prof: ArrayD<f64>,
}

/// The approximate solution `U0 + R^-1 U1 + R^-2 U2` as separable terms.
///
/// The profile's time derivative is taken to be the homogenized
/// right-hand side, which vanishes identically for stationary profiles.
fn uapp_term_list(
    f_prof: &SelfSimilarProfile,
    cell_data: &CellData,
    coeffs: &EffectiveCoefficients,
) -> Vec<Term> {
    let grid = &f_prof.grid;
    let dims = grid.dims;
    let f = &f_prof.values;
    let mut terms = Vec::new();
    terms.push(Term {
        pow: 0,
        cell: cell_data.f0.clone(),
        prof: f.clone(),
    });
    // first-order corrector
    for ax in 0..dims {
        terms.push(Term {
            pow: -1,
            cell: cell_data.f1[ax].clone(),
            prof: grid.deriv(f, ax, 1),
        });
    }
    if dims == 1 {
        if let Some(g1) = &cell_data.g1 {
            terms.push(Term {
                pow: -1,
                cell: g1.clone(),
                prof: f * f,
            });
        }
    }
    // second order: e1 = -dtauF + div(xF) + lapF with
    // dtauF = div(xF) + sum s_ij didjF - a d(F^2), so
    // e1 = sum (delta_ij - s_ij) didjF + a d(F^2)
    let mut e1 = ArrayD::<f64>::zeros(f.raw_dim());
    for i in 0..dims {
        for j in 0..dims {
            let w = if i == j { 1.0 } else { 0.0 } - coeffs.eta_sym[i][j];
            if w == 0.0 {
                continue;
            }
            let d = if i == j {
                grid.deriv(f, i, 2)
            } else {
                grid.deriv(&grid.deriv(f, i, 1), j, 1)
            };
            e1 = e1 + d.mapv(|v| v * w);
        }
    }
    if dims == 1 {
        let a = coeffs.a_scalar();
        if a != 0.0 {
            e1 = e1 + grid.deriv(&(f * f), 0, 1).mapv(|v| v * a);
        }
    }
    terms.push(Term {
        pow: -2,
        cell: cell_data.u2.from_hom.clone(),
        prof: e1,
    });
    for i in 0..dims {
        for j in 0..dims {
            let d = if i == j {
                grid.deriv(f, i, 2)
            } else {
                grid.deriv(&grid.deriv(f, i, 1), j, 1)
            };
            terms.push(Term {
                pow: -2,
                cell: cell_data.u2.from_grad2[i][j].clone(),
                prof: d,
            });
        }
    }
    if dims == 1 {
        if let Some(gc) = &cell_data.u2.from_ffp {
            terms.push(Term {
                pow: -2,
                cell: gc.clone(),
                prof: f * &grid.deriv(f, 0, 1),
            });
        }
        if let Some(gd) = &cell_data.u2.from_cube {
            terms.push(Term {
                pow: -2,
                cell: gd.clone(),
                prof: f * f * f,
            });
        }
    } else if let Some(gs) = &cell_data.u2.from_sq {
        terms.push(Term {
            pow: -2,
            cell: gs.clone(),
            prof: f * f,
        });
    }
    terms
}

/// Evaluate a term list at scale `R`: `sum_m R^pow_m G_m(z(x)) X_m(x)`.
fn eval_terms(terms: &[Term], x_grid: &ProfileGrid, r: f64, c: &[f64]) -> ArrayD<f64> {
    let z_pts = z_points(x_grid, r, c);
    let mut out = ArrayD::<f64>::zeros(IxDyn(&x_grid.shape()));
    for t in terms {
        let g = t.cell.eval_tensor(&z_pts);
        let w = r.powi(t.pow);
        for ((o, gv), pv) in out.iter_mut().zip(g.iter()).zip(t.prof.iter()) {
            *o += w * gv * pv;
        }
    }
    out
}

/// The assembled approximate solution and its leading part.
#[derive(Debug, Clone)]
pub struct ApproxSolution {
    pub r: f64,
    pub values: ArrayD<f64>,
    /// Leading term `f0(z) F(x)` alone.
    pub leading: ArrayD<f64>,
}

/// Assemble `U^app[F](tau, x; R)` on the profile grid, `R = e^(tau_offset + tau)`.
pub fn build_uapp(
    f_prof: &SelfSimilarProfile,
    cell_data: &CellData,
    coeffs: &EffectiveCoefficients,
    tau: f64,
    tau_offset: f64,
) -> ApproxSolution {
    let r = (tau_offset + tau).exp();
    let terms = uapp_term_list(f_prof, cell_data, coeffs);
    let values = eval_terms(&terms, &f_prof.grid, r, &coeffs.c);
    let leading = eval_terms(&terms[..1], &f_prof.grid, r, &coeffs.c);
    ApproxSolution { r, values, leading }
}

/// Apply the rescaled-equation operator to a separable term list
/// (one space dimension): the result is again a term list, with the
/// polynomial flux expanded through its cubic Taylor data.
fn residual_term_list(
    terms: &[Term],
    cell_data: &CellData,
    coeffs: &EffectiveCoefficients,
    grid: &ProfileGrid,
) -> Vec<Term> {
    assert_eq!(grid.dims, 1);
    let c0 = coeffs.c[0];
    let alpha1 = &cell_data.alpha1[0];
    let alpha2 = &cell_data.alpha2[0];
    let alpha3 = &cell_data.alpha3[0];
    let coords = grid.coord_field(0);
    let mut out: Vec<Term> = Vec::new();
    // linear part: dtau T - dx(x T) - dxx T + R dx((alpha1 - c) T)
    for t in terms {
        let gp = t.cell.deriv(0);
        let gpp = gp.deriv(0);
        let xp = grid.deriv(&t.prof, 0, 1);
        let xpp = grid.deriv(&t.prof, 0, 2);
        // dtau T - dx(x T) contributes (p - 1) R^p G X + ...
        let w = (t.pow - 1) as f64;
        if w != 0.0 {
            out.push(Term {
                pow: t.pow,
                cell: t.cell.scale(w),
                prof: t.prof.clone(),
            });
        }
        if c0 != 0.0 {
            out.push(Term {
                pow: t.pow + 2,
                cell: gp.scale(c0),
                prof: t.prof.clone(),
            });
        }
        out.push(Term {
            pow: t.pow,
            cell: t.cell.clone(),
            prof: -(&coords * &xp),
        });
        out.push(Term {
            pow: t.pow + 2,
            cell: gpp.scale(-1.0),
            prof: t.prof.clone(),
        });
        out.push(Term {
            pow: t.pow + 1,
            cell: gp.scale(-2.0),
            prof: xp.clone(),
        });
        out.push(Term {
            pow: t.pow,
            cell: t.cell.scale(-1.0),
            prof: xpp,
        });
        let a1g = alpha1.add_scalar(-c0).mul_field(&t.cell);
        out.push(Term {
            pow: t.pow + 2,
            cell: a1g.deriv(0),
            prof: t.prof.clone(),
        });
        out.push(Term {
            pow: t.pow + 1,
            cell: a1g,
            prof: xp,
        });
    }
    // quadratic flux: + dx(alpha2 U^2) over unordered pairs
    for (m, tm) in terms.iter().enumerate() {
        for (n, tn) in terms.iter().enumerate().skip(m) {
            let mult = if m == n { 1.0 } else { 2.0 };
            let gg = alpha2.mul_field(&tm.cell.mul_field(&tn.cell)).scale(mult);
            let xx = &tm.prof * &tn.prof;
            out.push(Term {
                pow: tm.pow + tn.pow + 1,
                cell: gg.deriv(0),
                prof: xx.clone(),
            });
            out.push(Term {
                pow: tm.pow + tn.pow,
                cell: gg,
                prof: grid.deriv(&xx, 0, 1),
            });
        }
    }
    // cubic flux: + R^-1 dx(alpha3 U^3) over unordered triples
    if alpha3.linf() > 0.0 {
        for (m, tm) in terms.iter().enumerate() {
            for (n, tn) in terms.iter().enumerate().skip(m) {
                for (l, tl) in terms.iter().enumerate().skip(n) {
                    let mult = if m == n && n == l {
                        1.0
                    } else if m == n || n == l {
                        3.0
                    } else {
                        6.0
                    };
                    let ggg = alpha3
                        .mul_field(&tm.cell.mul_field(&tn.cell).mul_field(&tl.cell))
                        .scale(mult);
                    let xxx = &(&tm.prof * &tn.prof) * &tl.prof;
                    out.push(Term {
                        pow: tm.pow + tn.pow + tl.pow,
                        cell: ggg.deriv(0),
                        prof: xxx.clone(),
                    });
                    out.push(Term {
                        pow: tm.pow + tn.pow + tl.pow - 1,
                        cell: ggg,
                        prof: grid.deriv(&xxx, 0, 1),
                    });
                }
            }
        }
    }
    out
}

/// `L^1` norm of the discrete remainder of `U^app[F]` in the rescaled
/// equation at time `tau` (one space dimension, polynomial flux through
/// cubic order).
pub fn uapp_remainder_l1(
    f_prof: &SelfSimilarProfile,
    cell_data: &CellData,
    coeffs: &EffectiveCoefficients,
    tau: f64,
) -> f64 {
    let grid = &f_prof.grid;
    let terms = uapp_term_list(f_prof, cell_data, coeffs);
    let res_terms = residual_term_list(&terms, cell_data, coeffs, grid);
    let r = tau.exp();
    let res = eval_terms(&res_terms, grid, r, &coeffs.c);
    grid.l1_norm(&res)
}

/// Least-squares slope of `log v` against `tau`.
pub fn fit_decay_exponent(taus: &[f64], values: &[f64]) -> f64 {
    let n = taus.len() as f64;
    let mx = taus.iter().sum::<f64>() / n;
    let my = values.iter().map(|v| v.max(1e-300).ln()).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, v) in taus.iter().zip(values) {
        let y = v.max(1e-300).ln();
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Pointwise quotient `V = U / f0(z)`.
pub fn compute_v(u: &RescaledState, f0: &TorusField, c: &[f64], x_grid: &ProfileGrid) -> ArrayD<f64> {
    let r = u.tau.exp();
    let z_pts = z_points(x_grid, r, c);
    let f0z = f0.eval_tensor(&z_pts);
    let mut out = u.values.clone();
    for (v, w) in out.iter_mut().zip(f0z.iter()) {
        *v /= w;
    }
    out
}

/// `int |U(tau, x) - f0(z) F_M(x)| dx` by the trapezoid rule.
pub fn diag_l1(
    u: &RescaledState,
    f0: &TorusField,
    f_m: &SelfSimilarProfile,
    c: &[f64],
) -> f64 {
    let grid = &f_m.grid;
    let r = u.tau.exp();
    let z_pts = z_points(grid, r, c);
    let f0z = f0.eval_tensor(&z_pts);
    let mut acc = 0.0;
    for ((uv, fv), mv) in u.values.iter().zip(f0z.iter()).zip(f_m.values.iter()) {
        acc += (uv - fv * mv).abs();
    }
    acc * grid.cell_volume()
}

/// Quasi-Lyapunov functional `H = ||U - U^app||_1`.
pub fn diag_quasi_lyapunov(u: &RescaledState, uapp: &ApproxSolution, grid: &ProfileGrid) -> f64 {
    let diff = &u.values - &uapp.values;
    grid.l1_norm(&diff)
}

/// Weighted `L^2` norm `int |V|^2 (1+|x|^2)^(m/2) dx` and the plain
/// gradient norm `int |grad V|^2 dx`.
pub fn diag_weighted(
    v: &ArrayD<f64>,
    m: f64,
    x_grid: &ProfileGrid,
) -> Result<(f64, f64)> {
    let dims = x_grid.dims;
    let min_m = 2.0 * (dims as f64 + 1.0);
    if m <= min_m {
        return Err(Error::WeightTooSmall {
            m,
            min: min_m,
            dims,
        });
    }
    let coords = x_grid.coords();
    let mut l2w = 0.0;
    for (idx, val) in v.indexed_iter() {
        let mut r2 = 0.0;
        for ax in 0..dims {
            r2 += coords[idx[ax]] * coords[idx[ax]];
        }
        l2w += val * val * (1.0 + r2).powf(m / 2.0);
    }
    l2w *= x_grid.cell_volume();
    let mut grad = 0.0;
    for ax in 0..dims {
        let d = x_grid.deriv(v, ax, 1);
        grad += d.iter().map(|g| g * g).sum::<f64>();
    }
    grad *= x_grid.cell_volume();
    Ok((l2w, grad))
}

/// Fourth-moment monitor `(1+2t)^-2 int |f| |y - c t|^4 dy` on the box.
pub fn diag_moment4(f_box: &ArrayD<f64>, grid: &BoxGrid, t: f64, c: &[f64]) -> f64 {
    let centers = grid.centers();
    let dims = grid.dims;
    let mut acc = 0.0;
    for (idx, v) in f_box.indexed_iter() {
        let mut r2 = 0.0;
        for ax in 0..dims {
            let d = centers[idx[ax]] - c[ax] * t;
            r2 += d * d;
        }
        acc += v.abs() * r2 * r2;
    }
    acc * grid.cell_volume() / (1.0 + 2.0 * t).powi(2)
}

/// Optional energy diagnostic `int U^2 / W` with the comparison field
/// `W = f0(z) h_m(x) + e^-tau f1(z) . grad h_m(x)`,
/// `h_m = (1+|x|^2)^(-m/2)`; the denominator is floored at half its
/// leading part, matching its a-priori positivity range.
pub fn diag_energy(
    u: &RescaledState,
    cell_data: &CellData,
    c: &[f64],
    m: f64,
    x_grid: &ProfileGrid,
) -> f64 {
    let dims = x_grid.dims;
    let r = u.tau.exp();
    let z_pts = z_points(x_grid, r, c);
    let f0z = cell_data.f0.eval_tensor(&z_pts);
    let f1z: Vec<ArrayD<f64>> = cell_data.f1.iter().map(|f| f.eval_tensor(&z_pts)).collect();
    let coords = x_grid.coords();
    let mut acc = 0.0;
    for (idx, uv) in u.values.indexed_iter() {
        let mut r2 = 0.0;
        for ax in 0..dims {
            r2 += coords[idx[ax]] * coords[idx[ax]];
        }
        let hm = (1.0 + r2).powf(-m / 2.0);
        let mut w = f0z[&idx] * hm;
        for ax in 0..dims {
            let dh = -m * coords[idx[ax]] / (1.0 + r2) * hm;
            w += f1z[ax][&idx] * dh / r;
        }
        let floor = 0.5 * f0z[&idx] * hm;
        acc += uv * uv / w.max(floor);
    }
    acc * x_grid.cell_volume()
}

/// One row of the diagnostics series.
#[derive(Debug, Clone)]
pub struct DiagRow {
    pub t: f64,
    pub tau: f64,
    pub l1_error: f64,
    pub h: f64,
    pub weighted_l2: f64,
    pub grad_l2: f64,
    pub moment4: f64,
    pub mass: f64,
    pub com: Vec<f64>,
    pub linf: f64,
}

/// Diagnostics provider bundling the homogenized data for a run.
pub struct DiagnosticContext {
    pub cell: CellData,
    pub coeffs: EffectiveCoefficients,
    pub f_m: SelfSimilarProfile,
    /// Weight exponent, default `2N + 4`.
    pub m_weight: f64,
}

impl DiagnosticContext {
    pub fn new(homog: Homogenization, f_m: SelfSimilarProfile) -> Self {
        let m_weight = 2.0 * homog.coeffs.dims as f64 + 4.0;
        Self {
            cell: homog.cell,
            coeffs: homog.coeffs,
            f_m,
            m_weight,
        }
    }

    /// Full diagnostics row for a box snapshot at time `t`.
    pub fn row(&self, f_box: &ArrayD<f64>, grid: &BoxGrid, t: f64) -> Result<DiagRow> {
        let dims = grid.dims;
        let u = to_self_similar(f_box, grid, t, &self.coeffs.c, &self.f_m.grid)?;
        let l1_error = diag_l1(&u, &self.cell.f0, &self.f_m, &self.coeffs.c);
        let uapp = build_uapp(&self.f_m, &self.cell, &self.coeffs, u.tau, 0.0);
        let h = diag_quasi_lyapunov(&u, &uapp, &self.f_m.grid);
        let v = compute_v(&u, &self.cell.f0, &self.coeffs.c, &self.f_m.grid);
        let (weighted_l2, grad_l2) = diag_weighted(&v, self.m_weight, &self.f_m.grid)?;
        let moment4 = diag_moment4(f_box, grid, t, &self.coeffs.c);
        let mass = grid.integrate(f_box);
        let centers = grid.centers();
        let mut com = vec![0.0; dims];
        if mass.abs() > 1e-14 {
            for (idx, v) in f_box.indexed_iter() {
                for ax in 0..dims {
                    com[ax] += centers[idx[ax]] * v;
                }
            }
            for cm in &mut com {
                *cm *= grid.cell_volume() / mass;
            }
        }
        let linf = f_box.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(DiagRow {
            t,
            tau: u.tau,
            l1_error,
            h,
            weighted_l2,
            grad_l2,
            moment4,
            mass,
            com,
            linf,
        })
    }
}

/// Write rows in the fixed column order
/// `t,tau,l1_error,H,weighted_l2,grad_l2,moment4,mass,com_*,linf`.
pub fn write_diagnostics_csv(path: &std::path::Path, rows: &[DiagRow]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dims = rows.first().map(|r| r.com.len()).unwrap_or(1);
    let com_cols: Vec<String> = (0..dims).map(|ax| format!("com_{}", ax + 1)).collect();
    writeln!(
        w,
        "t,tau,l1_error,H,weighted_l2,grad_l2,moment4,mass,{},linf",
        com_cols.join(",")
    )?;
    for r in rows {
        let com: Vec<String> = r.com.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
            r.t,
            r.tau,
            r.l1_error,
            r.h,
            r.weighted_l2,
            r.grad_l2,
            r.moment4,
            r.mass,
            com.join(","),
            r.linf
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::{taylor_flux_coeffs, FluxModel, FluxSpec, TrigPoly};
    use std::f64::consts::PI;

    fn heat_box(n: usize, l: usize) -> BoxGrid {
        BoxGrid::new(1, l, n)
    }

    fn gaussian_on_box(grid: &BoxGrid, sigma: f64, mass: f64) -> ArrayD<f64> {
        let centers = grid.centers();
        ArrayD::from_shape_fn(IxDyn(&grid.shape()), |idx| {
            let y = centers[idx[0]];
            mass * (2.0 * PI * sigma * sigma).powf(-0.5)
                * (-y * y / (2.0 * sigma * sigma)).exp()
        })
    }

    fn ratchet_homog(n: usize) -> Homogenization {
        let flux = FluxModel::from_spec(&FluxSpec::LinearRatchet {
            omega: vec![0.0],
            psi: TrigPoly::single(vec![1], 1.0, -0.5 * PI),
        })
        .unwrap();
        let v = crate::direct::solve_stationary_periodic(
            &flux,
            0.0,
            n,
            &crate::direct::NewtonOptions::default(),
        )
        .unwrap();
        let (a1, a2, a3) = taylor_flux_coeffs(&flux, &v);
        homogenize(&a1, &a2, &a3, &CellOptions::default()).unwrap()
    }

    fn burgers_homog(n: usize) -> Homogenization {
        let flux = FluxModel::from_spec(&FluxSpec::Burgers {
            advection: TrigPoly::single(vec![1], 2.0 * PI, 0.0), // 2 pi cos(2 pi y)
            quadratic: 0.5,
        })
        .unwrap();
        let v = crate::direct::solve_stationary_periodic(
            &flux,
            0.0,
            n,
            &crate::direct::NewtonOptions::default(),
        )
        .unwrap();
        let (a1, a2, a3) = taylor_flux_coeffs(&flux, &v);
        homogenize(&a1, &a2, &a3, &CellOptions::default()).unwrap()
    }

    #[test]
    fn rescaling_at_time_zero_is_identity() {
        let grid = heat_box(512, 16);
        let f = gaussian_on_box(&grid, 1.0, 1.0);
        let x_grid = ProfileGrid::new(1, 1024, 10.0);
        let u = to_self_similar(&f, &grid, 0.0, &[0.0], &x_grid).unwrap();
        assert_eq!(u.tau, 0.0);
        // compare at the x-grid nodes against the analytic initial bump
        let xs = x_grid.coords();
        for (j, &x) in xs.iter().enumerate() {
            let exact = (2.0 * PI).powf(-0.5) * (-x * x / 2.0).exp();
            assert!((u.values[[j]] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn rescaling_preserves_mass() {
        let grid = heat_box(1024, 16);
        let f = gaussian_on_box(&grid, 1.3, 0.7);
        let x_grid = ProfileGrid::new(1, 1024, 10.0);
        for t in [0.0, 0.5, 2.0, 5.0] {
            let u = to_self_similar(&f, &grid, t, &[0.0], &x_grid).unwrap();
            let mass_u = x_grid.integrate(&u.values);
            assert!(
                (mass_u - 0.7).abs() < 1e-8,
                "t = {t}: mass {mass_u}"
            );
        }
    }

    #[test]
    fn rescaling_round_trip() {
        let grid = heat_box(1024, 16);
        let f = gaussian_on_box(&grid, 1.1, 1.0);
        let x_grid = ProfileGrid::new(1, 2048, 12.0);
        let t = 1.7;
        let u = to_self_similar(&f, &grid, t, &[0.0], &x_grid).unwrap();
        let back = from_self_similar(&u, &x_grid, &[0.0], &grid);
        let sup = f
            .iter()
            .zip(back.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(sup < 1e-8, "round-trip sup {sup:.3e}");
    }

    #[test]
    fn heat_kernel_is_fixed_in_self_similar_frame() {
        // f = heat kernel with variance 1+2t stays the unit Gaussian
        let grid = heat_box(1024, 16);
        let x_grid = ProfileGrid::new(1, 1024, 10.0);
        for t in [0.0_f64, 1.0, 4.0] {
            let s2 = 1.0 + 2.0 * t;
            let f = gaussian_on_box(&grid, s2.sqrt(), 1.0);
            let u = to_self_similar(&f, &grid, t, &[0.0], &x_grid).unwrap();
            let xs = x_grid.coords();
            let mut sup = 0.0_f64;
            for (j, &x) in xs.iter().enumerate() {
                let g = (2.0 * PI).powf(-0.5) * (-x * x / 2.0).exp();
                sup = sup.max((u.values[[j]] - g).abs());
            }
            assert!(sup <= 1e-4, "t = {t}: sup {sup:.3e}");
        }
    }

    #[test]
    fn compute_v_divides_out_the_cell_density() {
        let homog = ratchet_homog(128);
        let x_grid = ProfileGrid::new(1, 512, 8.0);
        let tau = 0.8_f64;
        let r = tau.exp();
        // synthetic U = f0(z) G(x)
        let z_pts = z_points(&x_grid, r, &homog.coeffs.c);
        let f0z = homog.cell.f0.eval_tensor(&z_pts);
        let xs = x_grid.coords();
        let g = ArrayD::from_shape_fn(IxDyn(&x_grid.shape()), |idx| {
            let x = xs[idx[0]];
            (2.0 * PI).powf(-0.5) * (-x * x / 2.0).exp()
        });
        let u = RescaledState {
            tau,
            values: &f0z * &g,
        };
        let v = compute_v(&u, &homog.cell.f0, &homog.coeffs.c, &x_grid);
        let sup = v
            .iter()
            .zip(g.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(sup < 1e-8, "sup {sup:.3e}");
        // L1 bound by min f0
        let min_f0 = homog.cell.f0.min();
        assert!(
            x_grid.l1_norm(&v) * min_f0 <= x_grid.l1_norm(&u.values) * (1.0 + 1e-12)
        );
    }

    #[test]
    fn diag_l1_detects_a_disjoint_bump() {
        let homog = ratchet_homog(128);
        let coeffs = &homog.coeffs;
        let x_grid = ProfileGrid::new(1, 2048, 10.0);
        let f_m = crate::profile::solve_fm_1d(1.0, coeffs.eta_scalar(), coeffs.a_scalar(), &x_grid)
            .unwrap();
        let tau = 1.0_f64;
        let r = tau.exp();
        let z_pts = z_points(&x_grid, r, &coeffs.c);
        let f0z = homog.cell.f0.eval_tensor(&z_pts);
        let exact = &f0z * &f_m.values;
        let u0 = RescaledState {
            tau,
            values: exact.clone(),
        };
        assert!(diag_l1(&u0, &homog.cell.f0, &f_m, &coeffs.c) < 1e-12);
        // add a bump of mass eps at distance
        let eps = 1e-3;
        let xs = x_grid.coords();
        let bump = ArrayD::from_shape_fn(IxDyn(&x_grid.shape()), |idx| {
            let x = xs[idx[0]] - 5.0;
            eps * (2.0 * PI * 0.01).powf(-0.5) * (-x * x / 0.02).exp()
        });
        let u1 = RescaledState {
            tau,
            values: &exact + &bump,
        };
        let d = diag_l1(&u1, &homog.cell.f0, &f_m, &coeffs.c);
        assert!((d - eps).abs() <= 1e-3 * eps, "d = {d:.6e}");
    }

    #[test]
    fn weighted_diag_matches_quadrature_oracle() {
        // V = unit Gaussian, m = 6, N = 1: high-resolution quadrature of
        // the closed-form integrand, frozen before the build
        let x_grid = ProfileGrid::new(1, 4096, 10.0);
        let xs = x_grid.coords();
        let v = ArrayD::from_shape_fn(IxDyn(&x_grid.shape()), |idx| {
            let x = xs[idx[0]];
            (2.0 * PI).powf(-0.5) * (-x * x / 2.0).exp()
        });
        let (l2w, _) = diag_weighted(&v, 6.0, &x_grid).unwrap();
        assert!(
            (l2w - 1.8688779955019427).abs() < 1e-10,
            "weighted L2 {l2w:.12}"
        );
        // V = 0
        let zero = ArrayD::zeros(IxDyn(&x_grid.shape()));
        let (a, b) = diag_weighted(&zero, 6.0, &x_grid).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
    }

    #[test]
    fn weighted_diag_rejects_small_exponent() {
        let x_grid = ProfileGrid::new(1, 64, 5.0);
        let zero = ArrayD::zeros(IxDyn(&x_grid.shape()));
        match diag_weighted(&zero, 3.0, &x_grid) {
            Err(Error::WeightTooSmall { .. }) => {}
            other => panic!("expected WeightTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn moment4_of_heat_kernel_approaches_three() {
        let grid = heat_box(2048, 32);
        for t in [1.0_f64, 4.0, 10.0] {
            let s2 = 1.0 + 2.0 * t;
            let f = gaussian_on_box(&grid, s2.sqrt(), 1.0);
            let m4 = diag_moment4(&f, &grid, t, &[0.0]);
            // Gaussian fourth moment: 3 (1+2t)^2 / (1+2t)^2 = 3
            assert!((m4 - 3.0).abs() < 1e-6, "t = {t}: m4 = {m4}");
        }
    }

    #[test]
    fn moment4_of_centered_point_mass_is_small() {
        let grid = heat_box(2048, 32);
        let c = [0.25];
        let t = 4.0;
        let f = {
            let centers = grid.centers();
            ArrayD::from_shape_fn(IxDyn(&grid.shape()), |idx| {
                let y = centers[idx[0]] - c[0] * t;
                (2.0 * PI * 1e-4).powf(-0.5) * (-y * y / 2e-4).exp()
            })
        };
        let m4 = diag_moment4(&f, &grid, t, &c);
        assert!(m4 < 1e-5, "m4 = {m4:.3e}");
    }

    #[test]
    fn uapp_reduces_to_profile_for_trivial_background() {
        // constant drift: f0 = 1, all correctors vanish, U^app = F
        let flux = FluxModel::from_spec(&FluxSpec::Polynomial {
            dims: 1,
            p0: 0.0,
            coeffs: vec![
                vec![TrigPoly::constant(0.0)],
                vec![TrigPoly::constant(0.7)],
                vec![TrigPoly::constant(0.25)],
            ],
        })
        .unwrap();
        let v = crate::direct::solve_stationary_periodic(
            &flux,
            0.0,
            64,
            &crate::direct::NewtonOptions::default(),
        )
        .unwrap();
        let (a1, a2, a3) = taylor_flux_coeffs(&flux, &v);
        let homog = homogenize(&a1, &a2, &a3, &CellOptions::default()).unwrap();
        assert!((homog.coeffs.c[0] - 0.7).abs() < 1e-12);
        assert!((homog.coeffs.a_scalar() - 0.25).abs() < 1e-12);
        let x_grid = ProfileGrid::new(1, 1024, 10.0);
        let f_m =
            crate::profile::solve_fm_1d(1.0, 1.0, 0.25, &x_grid).unwrap();
        let uapp = build_uapp(&f_m, &homog.cell, &homog.coeffs, 1.0, 0.0);
        let sup = uapp
            .values
            .iter()
            .zip(f_m.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(sup < 1e-8, "sup {sup:.3e}");
    }

    #[test]
    fn uapp_expansion_order_in_r() {
        let homog = ratchet_homog(128);
        let coeffs = homog.coeffs.clone();
        let x_grid = ProfileGrid::new(1, 1024, 10.0);
        let f_m = crate::profile::solve_fm_1d(1.0, coeffs.eta_scalar(), coeffs.a_scalar(), &x_grid)
            .unwrap();
        let mut last = f64::INFINITY;
        for tau in [1.0, 2.0, 3.0] {
            let uapp = build_uapp(&f_m, &homog.cell, &coeffs, tau, 0.0);
            let diff = &uapp.values - &uapp.leading;
            let d = x_grid.l1_norm(&diff);
            // ||U^app - f0 F|| = O(1/R)
            assert!(d <= 3.0 * last * (-1.0_f64).exp(), "tau {tau}: {d:.3e}");
            last = d;
        }
    }

    #[test]
    fn remainder_vanishes_for_trivial_background() {
        let flux = FluxModel::from_spec(&FluxSpec::Polynomial {
            dims: 1,
            p0: 0.0,
            coeffs: vec![
                vec![TrigPoly::constant(0.0)],
                vec![TrigPoly::constant(0.4)],
                vec![TrigPoly::constant(0.25)],
            ],
        })
        .unwrap();
        let v = crate::direct::solve_stationary_periodic(
            &flux,
            0.0,
            64,
            &crate::direct::NewtonOptions::default(),
        )
        .unwrap();
        let (a1, a2, a3) = taylor_flux_coeffs(&flux, &v);
        let homog = homogenize(&a1, &a2, &a3, &CellOptions::default()).unwrap();
        let x_grid = ProfileGrid::new(1, 1024, 10.0);
        let f_m = crate::profile::solve_fm_1d(1.0, 1.0, 0.25, &x_grid).unwrap();
        // constant coefficients: the expansion terminates and the
        // remainder is solver noise amplified by R^2 at worst
        for tau in [0.5, 1.5] {
            let rem = uapp_remainder_l1(&f_m, &homog.cell, &homog.coeffs, tau);
            assert!(rem < 1e-5, "tau {tau}: remainder {rem:.3e}");
        }
    }

    #[test]
    fn remainder_decays_like_inverse_r_for_ratchet() {
        let homog = ratchet_homog(128);
        let coeffs = homog.coeffs.clone();
        let x_grid = ProfileGrid::new(1, 2048, 10.0);
        let f_m = crate::profile::solve_fm_1d(1.0, coeffs.eta_scalar(), coeffs.a_scalar(), &x_grid)
            .unwrap();
        let taus: Vec<f64> = vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
        let vals: Vec<f64> = taus
            .iter()
            .map(|&tau| uapp_remainder_l1(&f_m, &homog.cell, &coeffs, tau))
            .collect();
        let slope = fit_decay_exponent(&taus, &vals);
        assert!(
            slope <= -0.9,
            "fitted decay exponent {slope:.3} (values {vals:?})"
        );
    }

    #[test]
    fn remainder_decays_for_burgers_background() {
        let homog = burgers_homog(128);
        let coeffs = homog.coeffs.clone();
        let x_grid = ProfileGrid::new(1, 2048, 10.0);
        let f_m = crate::profile::solve_fm_1d(1.0, coeffs.eta_scalar(), coeffs.a_scalar(), &x_grid)
            .unwrap();
        let taus: Vec<f64> = vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
        let vals: Vec<f64> = taus
            .iter()
            .map(|&tau| uapp_remainder_l1(&f_m, &homog.cell, &coeffs, tau))
            .collect();
        let slope = fit_decay_exponent(&taus, &vals);
        assert!(slope <= -0.9, "fitted decay exponent {slope:.3}");
    }

    #[test]
    fn expansion_orders_cancel_for_burgers() {
        // the correctors are built so that the R^2, R^1 and R^0
        // coefficients of the two-scale residual vanish identically
        let homog = burgers_homog(128);
        let x_grid = ProfileGrid::new(1, 1024, 10.0);
        let f_m = crate::profile::solve_fm_1d(
            1.0,
            homog.coeffs.eta_scalar(),
            homog.coeffs.a_scalar(),
            &x_grid,
        )
        .unwrap();
        for (p, norm) in residual_power_group_norms(&f_m, &homog.cell, &homog.coeffs, 2.0) {
            if p >= 0 {
                assert!(norm <= 1e-8, "power {p}: group L1 = {norm:.3e}");
            }
        }
    }

    #[test]
    fn energy_diagnostic_is_finite_and_bounded() {
        let homog = ratchet_homog(128);
        let x_grid = ProfileGrid::new(1, 1024, 10.0);
        let xs = x_grid.coords();
        let u = RescaledState {
            tau: 1.0,
            values: ArrayD::from_shape_fn(IxDyn(&x_grid.shape()), |idx| {
                let x = xs[idx[0]];
                (2.0 * PI).powf(-0.5) * (-x * x / 2.0).exp()
            }),
        };
        let e = diag_energy(&u, &homog.cell, &homog.coeffs.c, 6.0, &x_grid);
        assert!(e.is_finite() && e > 0.0);
    }
}

/// L1 size of each power-of-R group of the residual term list; the
/// groups at powers 2, 1, 0 must cancel to cell-solver accuracy.
#[cfg(test)]
fn residual_power_group_norms(
    f_prof: &SelfSimilarProfile,
    cell_data: &CellData,
    coeffs: &EffectiveCoefficients,
    tau: f64,
) -> Vec<(i32, f64)> {
    let grid = &f_prof.grid;
    let terms = uapp_term_list(f_prof, cell_data, coeffs);
    let res_terms = residual_term_list(&terms, cell_data, coeffs, grid);
    let r = tau.exp();
    let mut pows: Vec<i32> = res_terms.iter().map(|t| t.pow).collect();
    pows.sort_unstable();
    pows.dedup();
    pows.iter()
        .map(|&p| {
            let group: Vec<Term> = res_terms.iter().filter(|t| t.pow == p).cloned().collect();
            let vals = eval_terms(&group, grid, r, &coeffs.c);
            (p, grid.l1_norm(&vals))
        })
        .collect()
}
