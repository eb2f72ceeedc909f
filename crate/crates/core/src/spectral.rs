//! N-dimensional Fourier collocation on uniform periodic grids.
//!
//! All fields live on tensor grids `x_j = origin + j * period / n` (no
//! duplicated endpoint). Spectra are stored as Fourier *coefficients*
//! `c_k` with `f(x) = sum_k c_k exp(2 pi i k (x - origin) / period)`,
//! so padding, truncation and off-grid evaluation need no extra
//! normalization factors.

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Signed frequency of FFT bin `i` for a length-`n` transform.
#[inline]
pub fn freq(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

thread_local! {
    static PLANNER: std::cell::RefCell<FftPlanner<f64>> =
        std::cell::RefCell::new(FftPlanner::new());
}

fn transform_axis(data: &mut ArrayD<Complex64>, axis: usize, forward: bool) {
    let n = data.shape()[axis];
    if n == 1 {
        return;
    }
    let fft = PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        if forward {
            planner.plan_fft_forward(n)
        } else {
            planner.plan_fft_inverse(n)
        }
    });
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for mut lane in data.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// Forward transform of a real field into Fourier coefficients.
pub fn to_coeffs(field: &ArrayD<f64>) -> ArrayD<Complex64> {
    let mut c = field.mapv(|v| Complex64::new(v, 0.0));
    let ndim = c.ndim();
    for ax in 0..ndim {
        transform_axis(&mut c, ax, true);
    }
    let ntot: usize = field.len();
    c.mapv_inplace(|z| z / ntot as f64);
    c
}

/// Inverse transform back to grid values (real part).
pub fn to_values(coeffs: &ArrayD<Complex64>) -> ArrayD<f64> {
    let mut c = coeffs.clone();
    let ndim = c.ndim();
    for ax in 0..ndim {
        transform_axis(&mut c, ax, false);
    }
    c.mapv(|z| z.re)
}

/// Multiply coefficients by `(2 pi i k / period)^order` along `axis`.
///
/// The Nyquist bin is zeroed for odd orders (its derivative has no
/// consistent sign on the collocation grid).
pub fn deriv_coeffs(coeffs: &mut ArrayD<Complex64>, axis: usize, period: f64, order: u32) {
    let n = coeffs.shape()[axis];
    let factors: Vec<Complex64> = (0..n)
        .map(|i| {
            let k = freq(i, n);
            if order % 2 == 1 && n % 2 == 0 && i == n / 2 {
                return Complex64::new(0.0, 0.0);
            }
            let w = Complex64::new(0.0, 2.0 * PI * k as f64 / period);
            w.powu(order)
        })
        .collect();
    for mut lane in coeffs.lanes_mut(Axis(axis)) {
        for (i, v) in lane.iter_mut().enumerate() {
            *v *= factors[i];
        }
    }
}

/// Spectral derivative of a real field along one axis.
pub fn deriv(field: &ArrayD<f64>, axis: usize, period: f64, order: u32) -> ArrayD<f64> {
    let mut c = to_coeffs(field);
    deriv_coeffs(&mut c, axis, period, order);
    to_values(&c)
}

/// Spectral Laplacian with per-axis periods.
pub fn laplacian(field: &ArrayD<f64>, periods: &[f64]) -> ArrayD<f64> {
    let mut c = to_coeffs(field);
    laplacian_coeffs(&mut c, periods);
    to_values(&c)
}

/// In-place multiplication of coefficients by `-|omega|^2`.
pub fn laplacian_coeffs(coeffs: &mut ArrayD<Complex64>, periods: &[f64]) {
    let shape: Vec<usize> = coeffs.shape().to_vec();
    for (idx, v) in coeffs.indexed_iter_mut() {
        let mut w2 = 0.0;
        for ax in 0..shape.len() {
            let om = 2.0 * PI * freq(idx[ax], shape[ax]) as f64 / periods[ax];
            w2 += om * om;
        }
        *v *= -w2;
    }
}

/// Resize one spectral axis, preserving coefficient meaning.
///
/// Growing an axis splits the Nyquist bin symmetrically; shrinking folds
/// the bins at `+-m/2` into the new Nyquist slot and drops the rest.
fn resize_axis(coeffs: &ArrayD<Complex64>, axis: usize, m: usize) -> ArrayD<Complex64> {
    let n = coeffs.shape()[axis];
    if m == n {
        return coeffs.clone();
    }
    let mut shape = coeffs.shape().to_vec();
    shape[axis] = m;
    let mut out = ArrayD::<Complex64>::zeros(IxDyn(&shape));
    // (src bin, dst bin, weight)
    let mut map: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        let k = freq(i, n);
        if n % 2 == 0 && i == n / 2 {
            // combined +-n/2 bin
            if m > n {
                map.push((i, n / 2, 0.5));
                map.push((i, m - n / 2, 0.5));
            }
            continue;
        }
        let half_m = (m / 2) as i64;
        if k.unsigned_abs() as i64 > half_m || (k.abs() == half_m && m % 2 == 0 && k == -half_m) {
            // k == -m/2 folds onto the +m/2 slot below; anything larger is cut
            if m % 2 == 0 && k == -half_m {
                map.push((i, m / 2, 1.0));
            }
            continue;
        }
        if m % 2 == 0 && k == half_m {
            map.push((i, m / 2, 1.0));
            continue;
        }
        let dst = if k >= 0 { k as usize } else { (m as i64 + k) as usize };
        map.push((i, dst, 1.0));
    }
    for (src_lane, mut dst_lane) in coeffs
        .lanes(Axis(axis))
        .into_iter()
        .zip(out.lanes_mut(Axis(axis)))
    {
        for &(si, di, w) in &map {
            dst_lane[di] += src_lane[si] * w;
        }
    }
    out
}

/// Resize all spectral axes to `shape`.
pub fn resize(coeffs: &ArrayD<Complex64>, shape: &[usize]) -> ArrayD<Complex64> {
    let mut out = coeffs.clone();
    for ax in 0..shape.len() {
        out = resize_axis(&out, ax, shape[ax]);
    }
    out
}

/// Pointwise product with 3/2-rule dealiasing.
///
/// Exact whenever the combined bandwidth of the factors fits in 3n/2
/// modes, which covers products of a full-spectrum unknown with a
/// band-limited coefficient field.
pub fn mul_dealiased(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let shape: Vec<usize> = a.shape().to_vec();
    let fine: Vec<usize> = shape.iter().map(|&n| 3 * n / 2).collect();
    let ca = resize(&to_coeffs(a), &fine);
    let cb = resize(&to_coeffs(b), &fine);
    let va = to_values(&ca);
    let vb = to_values(&cb);
    let prod = &va * &vb;
    let cp = resize(&to_coeffs(&prod), &shape);
    to_values(&cp)
}

fn contract_axis(src: &ArrayD<Complex64>, axis: usize, e: &Array2<Complex64>) -> ArrayD<Complex64> {
    let mut shape = src.shape().to_vec();
    shape[axis] = e.nrows();
    let mut out = ArrayD::<Complex64>::zeros(IxDyn(&shape));
    for (src_lane, mut out_lane) in src
        .lanes(Axis(axis))
        .into_iter()
        .zip(out.lanes_mut(Axis(axis)))
    {
        for j in 0..e.nrows() {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..e.ncols() {
                acc += e[[j, k]] * src_lane[k];
            }
            out_lane[j] = acc;
        }
    }
    out
}

/// Evaluate the trigonometric interpolant on a tensor grid of arbitrary
/// per-axis coordinates. The Nyquist bin is evaluated as a cosine so the
/// interpolant stays real.
pub fn eval_tensor(
    coeffs: &ArrayD<Complex64>,
    periods: &[f64],
    origins: &[f64],
    axis_pts: &[Vec<f64>],
) -> ArrayD<f64> {
    let mut cur = coeffs.clone();
    for ax in 0..axis_pts.len() {
        let n = cur.shape()[ax];
        let pts = &axis_pts[ax];
        let mut e = Array2::<Complex64>::zeros((pts.len(), n));
        for (j, &x) in pts.iter().enumerate() {
            let theta = 2.0 * PI * (x - origins[ax]) / periods[ax];
            for i in 0..n {
                let k = freq(i, n);
                e[[j, i]] = if n % 2 == 0 && i == n / 2 {
                    Complex64::new((theta * (n / 2) as f64).cos(), 0.0)
                } else {
                    Complex64::new(0.0, theta * k as f64).exp()
                };
            }
        }
        cur = contract_axis(&cur, ax, &e);
    }
    cur.mapv(|z| z.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    fn grid1(n: usize, period: f64, origin: f64, f: impl Fn(f64) -> f64) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(&[n]), |i| f(origin + i[0] as f64 * period / n as f64))
    }

    #[test]
    fn derivative_of_sine() {
        let n = 32;
        let f = grid1(n, 1.0, 0.0, |x| (2.0 * PI * x).sin());
        let d = deriv(&f, 0, 1.0, 1);
        let exact = grid1(n, 1.0, 0.0, |x| 2.0 * PI * (2.0 * PI * x).cos());
        for (a, b) in d.iter().zip(exact.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let f = ArrayD::from_elem(IxDyn(&[16, 16]), 3.5);
        let d = deriv(&f, 1, 1.0, 1);
        assert!(d.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn laplacian_2d_mode() {
        let n = 16;
        let f = ArrayD::from_shape_fn(IxDyn(&[n, n]), |i| {
            let x = i[0] as f64 / n as f64;
            let y = i[1] as f64 / n as f64;
            (2.0 * PI * x).cos() * (2.0 * PI * 2.0 * y).sin()
        });
        let l = laplacian(&f, &[1.0, 1.0]);
        let fac = -(4.0 * PI * PI) * (1.0 + 4.0);
        for (a, b) in l.iter().zip(f.iter()) {
            assert!((a - fac * b).abs() < 1e-10);
        }
    }

    #[test]
    fn dealiased_product_of_band_limited_fields() {
        let n = 32;
        let a = grid1(n, 1.0, 0.0, |x| 1.0 + 0.5 * (2.0 * PI * 3.0 * x).cos());
        let b = grid1(n, 1.0, 0.0, |x| (2.0 * PI * 5.0 * x).sin());
        let p = mul_dealiased(&a, &b);
        let exact = &a * &b;
        // combined bandwidth 8 < n/2, plain product already alias-free
        for (x, y) in p.iter().zip(exact.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_roundtrip_preserves_band_limited() {
        let n = 16;
        let f = grid1(n, 1.0, 0.0, |x| {
            (2.0 * PI * x).sin() + 0.3 * (2.0 * PI * 5.0 * x).cos()
        });
        let c = to_coeffs(&f);
        let up = resize(&c, &[24]);
        let back = resize(&up, &[16]);
        let g = to_values(&back);
        for (a, b) in f.iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_tensor_matches_grid_and_interpolates() {
        let n = 32;
        let f = grid1(n, 2.0, -1.0, |x| (PI * x).sin() + 0.2 * (2.0 * PI * x).cos());
        let c = to_coeffs(&f);
        // on-grid points reproduce values
        let pts: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
        let v = eval_tensor(&c, &[2.0], &[-1.0], &[pts]);
        for (a, b) in v.iter().zip(f.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // off-grid band-limited evaluation is exact
        let q = vec![0.1234, -0.777, 0.5];
        let w = eval_tensor(&c, &[2.0], &[-1.0], &[q.clone()]);
        for (j, &x) in q.iter().enumerate() {
            let exact = (PI * x).sin() + 0.2 * (2.0 * PI * x).cos();
            assert!((w[[j]] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_tensor_2d_separable() {
        let n = 16;
        let f = ArrayD::from_shape_fn(IxDyn(&[n, n]), |i| {
            let x = i[0] as f64 / n as f64;
            let y = i[1] as f64 / n as f64;
            (2.0 * PI * x).cos() * (1.0 + 0.5 * (2.0 * PI * 2.0 * y).sin())
        });
        let c = to_coeffs(&f);
        let px = vec![0.33, 0.91];
        let py = vec![0.11, 0.5, 0.72];
        let v = eval_tensor(&c, &[1.0, 1.0], &[0.0, 0.0], &[px.clone(), py.clone()]);
        for (a, &x) in px.iter().enumerate() {
            for (b, &y) in py.iter().enumerate() {
                let exact = (2.0 * PI * x).cos() * (1.0 + 0.5 * (2.0 * PI * 2.0 * y).sin());
                assert!((v[[a, b]] - exact).abs() < 1e-12);
            }
        }
    }
}
