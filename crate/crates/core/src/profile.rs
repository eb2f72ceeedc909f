//! Stationary self-similar profiles and the homogenized evolution.
//!
//! Profiles live on a truncated uniform grid `[-L, L)^N` (1-d or 2-d).
//! The grid is treated as periodic for spectral residual evaluation;
//! every admissible profile decays far below roundoff at the boundary,
//! which the domain-adequacy check enforces.

use crate::effective::EffectiveCoefficients;
use crate::error::{Error, Result};
use crate::spectral;
use ndarray::{ArrayD, IxDyn};
use std::f64::consts::PI;

/// Sup-norm tolerance for stationary-profile residuals on the default grids.
pub const TOL_PROF: f64 = 1e-6;

/// Uniform truncated grid on `[-L, L)^N` with `n` points per axis
/// (`x_j = -L + j * 2L/n`, so `x = 0` is a grid point for even `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileGrid {
    pub dims: usize,
    pub n: usize,
    pub half_width: f64,
}

impl ProfileGrid {
    pub fn new(dims: usize, n: usize, half_width: f64) -> Self {
        assert!(matches!(dims, 1 | 2), "profiles support N in {{1,2}}");
        assert!(n % 2 == 0);
        Self {
            dims,
            n,
            half_width,
        }
    }

    /// Default grid for a coefficient set: `L = 10 max(1, sqrt(lambda_max))`,
    /// 2048 points in 1-d, 256 per axis in 2-d.
    pub fn default_for(coeffs: &EffectiveCoefficients) -> Self {
        let l = 10.0 * coeffs.lambda_max().sqrt().max(1.0);
        let n = if coeffs.dims == 1 { 2048 } else { 256 };
        Self::new(coeffs.dims, n, l)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| -self.half_width + j as f64 * self.dx())
            .collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n; self.dims]
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dims as i32)
    }

    /// Periodic trapezoid quadrature (plain scaled sum).
    pub fn integrate(&self, v: &ArrayD<f64>) -> f64 {
        v.sum() * self.cell_volume()
    }

    pub fn l1_norm(&self, v: &ArrayD<f64>) -> f64 {
        v.iter().map(|x| x.abs()).sum::<f64>() * self.cell_volume()
    }

    pub fn periods(&self) -> Vec<f64> {
        vec![2.0 * self.half_width; self.dims]
    }

    pub fn origins(&self) -> Vec<f64> {
        vec![-self.half_width; self.dims]
    }

    /// Spectral partial derivative on the periodicized domain.
    pub fn deriv(&self, v: &ArrayD<f64>, axis: usize, order: u32) -> ArrayD<f64> {
        spectral::deriv(v, axis, 2.0 * self.half_width, order)
    }

    /// Coordinate array along `axis` broadcast over the grid.
    pub fn coord_field(&self, axis: usize) -> ArrayD<f64> {
        let coords = self.coords();
        ArrayD::from_shape_fn(IxDyn(&self.shape()), |idx| coords[idx[axis]])
    }
}

/// A mass-`M` profile on a truncated grid.
#[derive(Debug, Clone)]
pub struct SelfSimilarProfile {
    pub grid: ProfileGrid,
    pub values: ArrayD<f64>,
    pub mass: f64,
}

impl SelfSimilarProfile {
    pub fn new(grid: ProfileGrid, values: ArrayD<f64>) -> Self {
        let mass = grid.integrate(&values);
        Self { grid, values, mass }
    }

    pub fn mass_quadrature(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest value on the outer 10% shell of the grid.
    pub fn outer_band_sup(&self) -> f64 {
        let n = self.grid.n;
        let lo = n / 20; // indices within 10% of either edge
        let hi = n - 1 - n / 20;
        let mut sup = 0.0_f64;
        for (idx, v) in self.values.indexed_iter() {
            let outer = (0..self.grid.dims).any(|ax| idx[ax] < lo || idx[ax] > hi);
            if outer {
                sup = sup.max(v.abs());
            }
        }
        sup
    }

    fn check_domain_adequacy(&self) -> Result<()> {
        let sup = self.outer_band_sup();
        if sup > 1e-12 {
            return Err(Error::OutOfDomain {
                fraction: sup / self.linf().max(1e-300),
            });
        }
        Ok(())
    }

    pub fn l1_distance(&self, other: &SelfSimilarProfile) -> f64 {
        let diff = &self.values - &other.values;
        self.grid.l1_norm(&diff)
    }
}

/// Gaussian stationary profile
/// `F_M(x) = M (2 pi)^(-N/2) (det S)^(-1/2) exp(-x^T S^-1 x / 2)`.
///
/// Valid whenever the homogenized equation is linear (`N >= 2`, or `N = 1`
/// with `a = 0`).
pub fn gaussian_profile(
    mass: f64,
    coeffs: &EffectiveCoefficients,
    grid: &ProfileGrid,
) -> Result<SelfSimilarProfile> {
    let dims = grid.dims;
    let norm = mass * (2.0 * PI).powf(-(dims as f64) / 2.0) / coeffs.det_s.sqrt();
    let coords = grid.coords();
    let values = ArrayD::from_shape_fn(IxDyn(&grid.shape()), |idx| {
        let mut x = [0.0; 2];
        for ax in 0..dims {
            x[ax] = coords[idx[ax]];
        }
        norm * (-0.5 * coeffs.quad_s_inv(&x[..dims])).exp()
    });
    let prof = SelfSimilarProfile::new(grid.clone(), values);
    prof.check_domain_adequacy()?;
    Ok(prof)
}

/// 1-d stationary profile with the quadratic term: shooting on the
/// once-integrated relation `eta F' = a F^2 - x F` (integration constant
/// zero by decay), bisecting on `F(0)` to reach mass `M`.
pub fn solve_fm_1d(
    mass: f64,
    eta: f64,
    a: f64,
    grid: &ProfileGrid,
) -> Result<SelfSimilarProfile> {
    assert_eq!(grid.dims, 1);
    if eta <= 0.0 {
        return Err(Error::NotCoercive { min_eigenvalue: eta });
    }
    if mass == 0.0 {
        return Ok(SelfSimilarProfile::new(
            grid.clone(),
            ArrayD::zeros(IxDyn(&grid.shape())),
        ));
    }
    if mass < 0.0 {
        // F_{-M}[a] = -F_M[-a]
        let flipped = solve_fm_1d(-mass, eta, -a, grid)?;
        let values = flipped.values.mapv(|v| -v);
        return Ok(SelfSimilarProfile::new(grid.clone(), values));
    }

    let shoot = |s: f64| -> (Vec<f64>, f64) { integrate_profile(s, eta, a, grid) };

    // bracket the target mass; mass(s) is monotone in s by the ordering
    // of profiles, and may blow up for large s when a > 0
    let mut s_hi = (mass / (2.0 * PI * eta).sqrt()).max(1e-8);
    let mut mass_hi = shoot(s_hi).1;
    let mut grow = 0;
    while mass_hi < mass {
        s_hi *= 2.0;
        mass_hi = shoot(s_hi).1;
        grow += 1;
        if grow > 200 {
            return Err(Error::ShootingFailed {
                message: format!("could not bracket mass {mass} (reached F(0) = {s_hi:.3e})"),
            });
        }
    }
    let mut s_lo = 0.0;
    for _ in 0..200 {
        let s_mid = 0.5 * (s_lo + s_hi);
        let m_mid = shoot(s_mid).1;
        if m_mid < mass {
            s_lo = s_mid;
        } else {
            s_hi = s_mid;
        }
        if (s_hi - s_lo) < 1e-16 * s_hi.max(1.0) {
            break;
        }
    }
    let s_final = 0.5 * (s_lo + s_hi);
    let (vals, m_final) = shoot(s_final);
    if (m_final - mass).abs() > 1e-8 * mass.max(1.0) {
        return Err(Error::ShootingFailed {
            message: format!("bisection stalled: mass {m_final} vs target {mass}"),
        });
    }
    let mut values = ArrayD::from_shape_vec(IxDyn(&grid.shape()), vals).unwrap();
    // rescale the leftover bisection error onto the profile; the relative
    // correction is far below the quadrature tolerance
    let scale = mass / m_final;
    values.mapv_inplace(|v| v * scale);
    let prof = SelfSimilarProfile::new(grid.clone(), values);
    prof.check_domain_adequacy()?;
    if prof.values.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotPositive {
            min_value: prof.values.iter().cloned().fold(f64::INFINITY, f64::min),
        });
    }
    Ok(prof)
}

/// RK4 integration of `F' = (a F^2 - x F) / eta` outward from `x = 0`,
/// returning grid values and the trapezoid mass. Blow-up is reported as
/// infinite mass so the bisection backs off.
fn integrate_profile(s: f64, eta: f64, a: f64, grid: &ProfileGrid) -> (Vec<f64>, f64) {
    let n = grid.n;
    let dx = grid.dx();
    let coords = grid.coords();
    let mut vals = vec![0.0; n];
    let i0 = n / 2;
    debug_assert!((coords[i0]).abs() < 1e-12);
    vals[i0] = s;
    let rhs = |x: f64, f: f64| (a * f * f - x * f) / eta;
    let sub = 8;
    let h = dx / sub as f64;
    let cap = 1e8 * (1.0 + s);
    let mut blown = false;
    // rightward
    let mut f = s;
    'right: for j in i0..n - 1 {
        let mut x = coords[j];
        for _ in 0..sub {
            let k1 = rhs(x, f);
            let k2 = rhs(x + 0.5 * h, f + 0.5 * h * k1);
            let k3 = rhs(x + 0.5 * h, f + 0.5 * h * k2);
            let k4 = rhs(x + h, f + h * k3);
            f += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            x += h;
            if !f.is_finite() || f.abs() > cap {
                blown = true;
                break 'right;
            }
        }
        vals[j + 1] = f;
    }
    // leftward
    let mut f = s;
    'left: for j in (1..=i0).rev() {
        let mut x = coords[j];
        for _ in 0..sub {
            let k1 = rhs(x, f);
            let k2 = rhs(x - 0.5 * h, f - 0.5 * h * k1);
            let k3 = rhs(x - 0.5 * h, f - 0.5 * h * k2);
            let k4 = rhs(x - h, f - h * k3);
            f -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            x -= h;
            if !f.is_finite() || f.abs() > cap {
                blown = true;
                break 'left;
            }
        }
        vals[j - 1] = f;
    }
    if blown {
        return (vals, f64::INFINITY);
    }
    let mass = vals.iter().sum::<f64>() * dx;
    (vals, mass)
}

/// Sup-norm of the stationary homogenized operator applied to `F`:
/// `div(x F) + sum_ij s_ij d_i d_j F - a d_x F^2`, evaluated spectrally.
pub fn profile_residual(prof: &SelfSimilarProfile, coeffs: &EffectiveCoefficients) -> f64 {
    let grid = &prof.grid;
    let dims = grid.dims;
    let mut res = ArrayD::<f64>::zeros(IxDyn(&grid.shape()));
    // div(x F)
    for ax in 0..dims {
        let xf = &grid.coord_field(ax) * &prof.values;
        res = res + grid.deriv(&xf, ax, 1);
    }
    // diffusion (symmetrized matrix; second derivatives commute)
    for i in 0..dims {
        for j in 0..dims {
            let s = coeffs.eta_sym[i][j];
            if s == 0.0 {
                continue;
            }
            let d = if i == j {
                grid.deriv(&prof.values, i, 2)
            } else {
                grid.deriv(&grid.deriv(&prof.values, i, 1), j, 1)
            };
            res = res + d.mapv(|v| v * s);
        }
    }
    if dims == 1 {
        if let Some(a) = coeffs.a {
            if a != 0.0 {
                let f2 = &prof.values * &prof.values;
                res = res - grid.deriv(&f2, 0, 1).mapv(|v| v * a);
            }
        }
    }
    res.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// One state of the homogenized semigroup.
#[derive(Debug, Clone)]
pub struct HomogenizedState {
    pub tau: f64,
    pub profile: SelfSimilarProfile,
    pub mass: f64,
    /// `||F(tau) - target||_1` when a target profile was supplied.
    pub l1_to_target: Option<f64>,
}

/// Evolve the homogenized equation to `tau_end`, emitting states every
/// `dtau_out`.
///
/// The scheme is well-balanced: it advances the deviation
/// `d = F - F_ref`, where `F_ref` is the stationary profile with the same
/// mass, so the stationary state is an exact fixed point of the discrete
/// dynamics. Drift and the quadratic flux are explicit second-order
/// finite volumes (minmod-limited), diffusion is implicit; everything is
/// in flux form with zero-flux boundaries, so mass is conserved to
/// roundoff.
pub fn evolve_homogenized(
    f_init: &SelfSimilarProfile,
    coeffs: &EffectiveCoefficients,
    tau_end: f64,
    dtau_out: f64,
    target: Option<&SelfSimilarProfile>,
) -> Result<Vec<HomogenizedState>> {
    if dtau_out > 0.1 + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "output interval {dtau_out} exceeds 0.1"
        )));
    }
    let grid = f_init.grid.clone();
    let dims = grid.dims;
    let a = if dims == 1 { coeffs.a_scalar() } else { 0.0 };
    let mass = f_init.mass;
    let f_ref = if dims == 1 {
        solve_fm_1d(mass, coeffs.eta_scalar(), a, &grid)?
    } else {
        gaussian_profile(mass, coeffs, &grid)?
    };
    let mut d = &f_init.values - &f_ref.values;
    // the equation preserves nonnegativity; enforce it conservatively on
    // the scheme's transient undershoots, but only for nonnegative data
    let enforce_pos = f_init.values.iter().all(|&v| v >= 0.0);
    let mut tau = 0.0_f64;
    let mut out = Vec::new();
    let snapshot = |tau: f64, d: &ArrayD<f64>| -> HomogenizedState {
        let profile = SelfSimilarProfile::new(grid.clone(), d + &f_ref.values);
        let l1 = target.map(|t| profile.l1_distance(t));
        let mass = profile.mass;
        HomogenizedState {
            tau,
            profile,
            mass,
            l1_to_target: l1,
        }
    };
    out.push(snapshot(0.0, &d));
    let n_out = (tau_end / dtau_out).round() as usize;
    for k in 1..=n_out {
        let tau_next = k as f64 * dtau_out;
        while tau < tau_next - 1e-13 {
            let linf = d
                .iter()
                .zip(f_ref.values.iter())
                .fold(0.0_f64, |m, (dv, rv)| m.max((dv + rv).abs()));
            if linf > 1e6 {
                return Err(Error::BlowUp {
                    sup: linf,
                    limit: 1e6,
                });
            }
            let vmax = grid.half_width + 2.0 * a.abs() * linf;
            let mut dt = 0.4 * grid.dx() / vmax;
            if dims == 2 {
                let s12 = coeffs.eta_sym[0][1].abs();
                if s12 > 0.0 {
                    dt = dt.min(0.2 * grid.dx() * grid.dx() / s12);
                }
            }
            dt = dt.min(tau_next - tau);
            advect(&mut d, &f_ref.values, &grid, a, 0.5 * dt);
            diffuse(&mut d, &grid, coeffs, dt);
            advect(&mut d, &f_ref.values, &grid, a, 0.5 * dt);
            if enforce_pos {
                positivity_fix(&mut d, &f_ref.values);
            }
            tau += dt;
        }
        tau = tau_next;
        out.push(snapshot(tau, &d));
    }
    Ok(out)
}

/// Clip undershoots of `F = d + F_ref` below zero and remove the clipped
/// mass from the positive part, keeping the total exactly conserved.
fn positivity_fix(d: &mut ArrayD<f64>, f_ref: &ArrayD<f64>) {
    let mut deficit = 0.0;
    let mut positive = 0.0;
    for (dv, rv) in d.iter().zip(f_ref.iter()) {
        let f = dv + rv;
        if f < 0.0 {
            deficit -= f;
        } else {
            positive += f;
        }
    }
    if deficit == 0.0 || positive <= deficit {
        return;
    }
    let scale = (positive - deficit) / positive;
    for (dv, rv) in d.iter_mut().zip(f_ref.iter()) {
        let f = *dv + rv;
        let f_new = if f < 0.0 { 0.0 } else { f * scale };
        *dv = f_new - rv;
    }
}

fn minmod(p: f64, q: f64) -> f64 {
    if p * q <= 0.0 {
        0.0
    } else if p.abs() < q.abs() {
        p
    } else {
        q
    }
}

/// Explicit SSP-RK2 sub-step for the deviation transport
/// `d_tau d = div(x d) - a d_x ((F_ref + d)^2 - F_ref^2)`
/// (dimension-by-dimension upwind fluxes, zero-flux boundaries).
fn advect(d: &mut ArrayD<f64>, f_ref: &ArrayD<f64>, grid: &ProfileGrid, a: f64, dt: f64) {
    let r1 = advect_rhs(d, f_ref, grid, a);
    let d1 = &*d + &r1.mapv(|v| v * dt);
    let r2 = advect_rhs(&d1, f_ref, grid, a);
    *d = (&*d + &d1 + r2.mapv(|v| v * dt)) * 0.5;
}

fn advect_rhs(d: &ArrayD<f64>, f_ref: &ArrayD<f64>, grid: &ProfileGrid, a: f64) -> ArrayD<f64> {
    let dims = grid.dims;
    let dx = grid.dx();
    let coords = grid.coords();
    let mut rhs = ArrayD::<f64>::zeros(d.raw_dim());
    for ax in 0..dims {
        let burgers = if ax == 0 { a } else { 0.0 };
        for ((lane, ref_lane), mut out) in d
            .lanes(ndarray::Axis(ax))
            .into_iter()
            .zip(f_ref.lanes(ndarray::Axis(ax)))
            .zip(rhs.lanes_mut(ndarray::Axis(ax)))
        {
            let n = lane.len();
            let mut slopes = vec![0.0; n];
            for j in 1..n - 1 {
                slopes[j] = minmod(lane[j] - lane[j - 1], lane[j + 1] - lane[j]);
            }
            // face k sits between nodes k-1 and k
            let mut flux = vec![0.0; n + 1];
            for k in 1..n {
                let x_face = coords[k] - 0.5 * dx;
                let dl = lane[k - 1] + 0.5 * slopes[k - 1];
                let dr = lane[k] - 0.5 * slopes[k];
                // drift velocity -x (the equation moves mass toward 0)
                let v = -x_face;
                let mut g = if v >= 0.0 { v * dl } else { v * dr };
                if burgers != 0.0 {
                    // flux of the deviation: a ((F_ref + d)^2 - F_ref^2);
                    // it vanishes identically at d = 0
                    let rf = 0.5 * (ref_lane[k - 1] + ref_lane[k]);
                    let q = |dd: f64| burgers * dd * (2.0 * rf + dd);
                    let lambda = 2.0
                        * burgers.abs()
                        * (rf + dl).abs().max((rf + dr).abs());
                    g += 0.5 * (q(dl) + q(dr)) - 0.5 * lambda * (dr - dl);
                }
                flux[k] = g;
            }
            for j in 0..n {
                out[j] = -(flux[j + 1] - flux[j]) / dx;
            }
        }
    }
    rhs
}

/// Implicit diffusion: per-axis tridiagonal solves with zero-flux
/// boundaries; the 2-d mixed term is handled explicitly in flux form.
fn diffuse(f: &mut ArrayD<f64>, grid: &ProfileGrid, coeffs: &EffectiveCoefficients, dt: f64) {
    let dims = grid.dims;
    let dx = grid.dx();
    if dims == 2 {
        let s12 = coeffs.eta_sym[0][1];
        if s12 != 0.0 {
            let mixed = mixed_term(f, grid, s12);
            *f = &*f + &mixed.mapv(|v| v * dt);
        }
    }
    for ax in 0..dims {
        let s = coeffs.eta_sym[ax][ax];
        let r = s * dt / (dx * dx);
        for mut lane in f.lanes_mut(ndarray::Axis(ax)) {
            let n = lane.len();
            // Thomas solve of (I - dt s Dxx) u = lane, Neumann flux form
            let mut diag = vec![1.0 + 2.0 * r; n];
            diag[0] = 1.0 + r;
            diag[n - 1] = 1.0 + r;
            let off = -r;
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            c[0] = off / diag[0];
            d[0] = lane[0] / diag[0];
            for j in 1..n {
                let m = diag[j] - off * c[j - 1];
                c[j] = off / m;
                d[j] = (lane[j] - off * d[j - 1]) / m;
            }
            lane[n - 1] = d[n - 1];
            for j in (0..n - 1).rev() {
                lane[j] = d[j] - c[j] * lane[j + 1];
            }
        }
    }
}

/// `2 s12 d_x d_y F` in conservative form (zero boundary fluxes).
fn mixed_term(f: &ArrayD<f64>, grid: &ProfileGrid, s12: f64) -> ArrayD<f64> {
    let n = grid.n;
    let dx = grid.dx();
    let mut out = ArrayD::<f64>::zeros(f.raw_dim());
    let get = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
            0.0
        } else {
            f[[i as usize, j as usize]]
        }
    };
    // d_x(s12 d_y F): flux through x-faces
    for i in 0..n {
        for j in 0..n {
            let ii = i as isize;
            let jj = j as isize;
            let gy = |i0: isize| (get(i0, jj + 1) - get(i0, jj - 1)) / (2.0 * dx);
            let flux_e = if i + 1 < n { 0.5 * (gy(ii) + gy(ii + 1)) } else { 0.0 };
            let flux_w = if i > 0 { 0.5 * (gy(ii) + gy(ii - 1)) } else { 0.0 };
            let gx = |j0: isize| (get(ii + 1, j0) - get(ii - 1, j0)) / (2.0 * dx);
            let flux_n = if j + 1 < n { 0.5 * (gx(jj) + gx(jj + 1)) } else { 0.0 };
            let flux_s = if j > 0 { 0.5 * (gx(jj) + gx(jj - 1)) } else { 0.0 };
            out[[i, j]] = s12 * ((flux_e - flux_w) / dx + (flux_n - flux_s) / dx);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize) -> ProfileGrid {
        ProfileGrid::new(1, n, 10.0)
    }

    #[test]
    fn gaussian_profile_matches_normalization() {
        let coeffs = EffectiveCoefficients::isotropic(1, 1.0, None);
        let prof = gaussian_profile(1.0, &coeffs, &grid1(2048)).unwrap();
        let i0 = 1024;
        assert!((prof.values[[i0]] - 0.3989422804014327).abs() < 1e-12);
        assert!((prof.mass_quadrature() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_profile_2d_anisotropic() {
        let coeffs = EffectiveCoefficients::from_matrix(
            vec![vec![4.0, 0.0], vec![0.0, 1.0]],
            None,
        )
        .unwrap();
        let grid = ProfileGrid::new(2, 256, 20.0);
        let prof = gaussian_profile(2.0, &coeffs, &grid).unwrap();
        let c = 128;
        assert!((prof.values[[c, c]] - 2.0 / (2.0 * PI * 2.0)).abs() < 1e-12);
        assert!((prof.mass_quadrature() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_profile_zero_mass_is_zero() {
        let coeffs = EffectiveCoefficients::isotropic(1, 1.0, None);
        let prof = gaussian_profile(0.0, &coeffs, &grid1(256)).unwrap();
        assert_eq!(prof.linf(), 0.0);
    }

    #[test]
    fn gaussian_residual_is_spectrally_small() {
        for eta in [
            vec![vec![1.0]],
            vec![vec![4.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.2], vec![-0.1, 1.0]],
        ] {
            let dims = eta.len();
            let coeffs = EffectiveCoefficients::from_matrix(eta, None).unwrap();
            let grid = if dims == 1 {
                grid1(2048)
            } else {
                ProfileGrid::new(2, 256, 10.0 * coeffs.lambda_max().sqrt().max(1.0))
            };
            let prof = gaussian_profile(1.0, &coeffs, &grid).unwrap();
            let res = profile_residual(&prof, &coeffs);
            assert!(res <= 1e-8, "dims {dims}: residual {res:.3e}");
        }
    }

    #[test]
    fn fm_1d_reduces_to_gaussian_without_quadratic_term() {
        let grid = grid1(2048);
        let prof = solve_fm_1d(1.0, 1.0, 0.0, &grid).unwrap();
        assert!((prof.values[[1024]] - 0.3989422804014327).abs() < 1e-9);
        assert!((prof.mass_quadrature() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fm_1d_small_mass_linearizes_to_gaussian() {
        let grid = grid1(2048);
        let m = 1e-6;
        let prof = solve_fm_1d(m, 1.0, 0.5, &grid).unwrap();
        let coeffs = EffectiveCoefficients::isotropic(1, 1.0, None);
        let gauss = gaussian_profile(1.0, &coeffs, &grid).unwrap();
        let sup = prof
            .values
            .iter()
            .zip(gauss.values.iter())
            .map(|(p, g)| (p / m - g).abs())
            .fold(0.0_f64, f64::max);
        assert!(sup <= 1e-3, "sup deviation {sup:.3e}");
    }

    #[test]
    fn fm_1d_profile_ordering_and_l1_gap() {
        let grid = grid1(2048);
        let f1 = solve_fm_1d(1.0, 1.0, 0.5, &grid).unwrap();
        let f05 = solve_fm_1d(0.5, 1.0, 0.5, &grid).unwrap();
        assert!(f1
            .values
            .iter()
            .zip(f05.values.iter())
            .all(|(a, b)| a > b));
        assert!((f1.l1_distance(&f05) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fm_1d_satisfies_once_integrated_relation() {
        let grid = grid1(2048);
        let (eta, a) = (0.8, 0.5);
        let prof = solve_fm_1d(1.0, eta, a, &grid).unwrap();
        // spectral derivative route, independent of the shooting path
        let df = grid.deriv(&prof.values, 0, 1);
        let coords = grid.coords();
        let mut sup = 0.0_f64;
        for j in 0..grid.n {
            let f = prof.values[[j]];
            let rel = eta * df[[j]] + coords[j] * f - a * f * f;
            sup = sup.max(rel.abs());
        }
        assert!(sup <= TOL_PROF, "once-integrated relation sup {sup:.3e}");
        // full stationary residual
        let coeffs = EffectiveCoefficients::isotropic(1, eta, Some(a));
        let res = profile_residual(&prof, &coeffs);
        assert!(res <= TOL_PROF, "stationary residual {res:.3e}");
    }

    #[test]
    fn perturbed_profile_has_large_residual() {
        let grid = grid1(2048);
        let coeffs = EffectiveCoefficients::isotropic(1, 1.0, Some(0.5));
        let prof = solve_fm_1d(1.0, 1.0, 0.5, &grid).unwrap();
        let coords = grid.coords();
        let bump = ArrayD::from_shape_fn(IxDyn(&grid.shape()), |idx| {
            let x = coords[idx[0]];
            0.01 * (-x * x).exp()
        });
        let perturbed = SelfSimilarProfile::new(grid.clone(), &prof.values + &bump);
        let res = profile_residual(&perturbed, &coeffs);
        assert!(res > 10.0 * TOL_PROF, "residual {res:.3e}");
    }

    #[test]
    fn negative_mass_profile_mirrors_positive() {
        let grid = grid1(1024);
        let neg = solve_fm_1d(-0.5, 1.0, 0.3, &grid).unwrap();
        assert!((neg.mass_quadrature() + 0.5).abs() < 1e-10);
        assert!(neg.values.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn evolution_keeps_stationary_profile_fixed() {
        let grid = grid1(1024);
        let coeffs = EffectiveCoefficients::isotropic(1, 1.0, Some(0.5));
        let fm = solve_fm_1d(1.0, 1.0, 0.5, &grid).unwrap();
        let states = evolve_homogenized(&fm, &coeffs, 5.0, 0.1, Some(&fm)).unwrap();
        for s in &states {
            let d = s.l1_to_target.unwrap();
            assert!(d <= 1e-6, "tau {}: {d:.3e}", s.tau);
        }
    }

    #[test]
    fn evolution_conserves_mass_and_positivity() {
        let grid = grid1(1024);
        let coeffs = EffectiveCoefficients::isotropic(1, 1.0, Some(0.5));
        let coords = grid.coords();
        // box initial data of mass 1
        let vals = ArrayD::from_shape_fn(IxDyn(&grid.shape()), |idx| {
            if coords[idx[0]].abs() < 1.0 {
                0.5
            } else {
                0.0
            }
        });
        let init = SelfSimilarProfile::new(grid.clone(), vals);
        let fm = solve_fm_1d(init.mass, 1.0, 0.5, &grid).unwrap();
        let states = evolve_homogenized(&init, &coeffs, 6.0, 0.1, Some(&fm)).unwrap();
        for s in &states {
            assert!((s.mass - init.mass).abs() <= 1e-10 * (1.0 + s.tau));
            assert!(s.profile.values.iter().all(|&v| v >= -1e-14));
        }
        let final_l1 = states.last().unwrap().l1_to_target.unwrap();
        assert!(final_l1 < 1e-2, "final L1 distance {final_l1:.3e}");
        // distances decrease after the first unit of time
        let dists: Vec<f64> = states.iter().map(|s| s.l1_to_target.unwrap()).collect();
        for w in dists.windows(2).skip(10) {
            assert!(w[1] <= w[0] + 1e-9, "not decreasing: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn ou_variance_relaxation_matches_closed_form() {
        // linear case: Gaussian variance obeys 1 + (s0^2 - 1) e^(-2 tau)
        let grid = ProfileGrid::new(1, 8192, 10.0);
        let coeffs = EffectiveCoefficients::isotropic(1, 1.0, None);
        let coords = grid.coords();
        let s0sq = 4.0;
        let vals = ArrayD::from_shape_fn(IxDyn(&grid.shape()), |idx| {
            let x = coords[idx[0]];
            (2.0 * PI * s0sq).powf(-0.5) * (-x * x / (2.0 * s0sq)).exp()
        });
        let init = SelfSimilarProfile::new(grid.clone(), vals);
        let states = evolve_homogenized(&init, &coeffs, 1.0, 0.05, None).unwrap();
        let last = states.last().unwrap();
        let mut var = 0.0;
        for j in 0..grid.n {
            var += coords[j] * coords[j] * last.profile.values[[j]];
        }
        var *= grid.dx();
        var /= last.mass;
        let exact = 1.0 + 3.0 * (-2.0_f64).exp();
        assert!(
            (var - exact).abs() <= 1e-4,
            "variance {var:.6} vs {exact:.6}"
        );
    }

    #[test]
    fn evolution_l1_contraction() {
        let grid = grid1(1024);
        let coeffs = EffectiveCoefficients::isotropic(1, 1.0, Some(0.5));
        let coords = grid.coords();
        let gauss = |s: f64, shift: f64| -> ArrayD<f64> {
            ArrayD::from_shape_fn(IxDyn(&grid.shape()), |idx| {
                let x = coords[idx[0]] - shift;
                (2.0 * PI * s).powf(-0.5) * (-x * x / (2.0 * s)).exp()
            })
        };
        let a0 = SelfSimilarProfile::new(grid.clone(), gauss(1.0, 0.0));
        let b0 = SelfSimilarProfile::new(grid.clone(), gauss(2.0, 0.7));
        let sa = evolve_homogenized(&a0, &coeffs, 3.0, 0.1, None).unwrap();
        let sb = evolve_homogenized(&b0, &coeffs, 3.0, 0.1, None).unwrap();
        let mut last = f64::INFINITY;
        for (x, y) in sa.iter().zip(sb.iter()) {
            let d = x.profile.l1_distance(&y.profile);
            assert!(d <= last + 1e-8, "contraction violated: {last} -> {d}");
            last = d;
        }
    }

    #[test]
    fn evolution_2d_gaussian_stays_stationary() {
        let coeffs = EffectiveCoefficients::from_matrix(
            vec![vec![1.0, 0.1], vec![0.1, 1.0]],
            None,
        )
        .unwrap();
        let grid = ProfileGrid::new(2, 128, 10.0);
        let fm = gaussian_profile(1.0, &coeffs, &grid).unwrap();
        let states = evolve_homogenized(&fm, &coeffs, 0.5, 0.1, Some(&fm)).unwrap();
        for s in &states {
            assert!((s.mass - 1.0).abs() < 1e-10);
            assert!(s.l1_to_target.unwrap() < 5e-3, "drifted {:.3e}", s.l1_to_target.unwrap());
        }
    }
}
