//! Flux models: space-periodic fluxes `A(y, p)`, polynomial in `p` with
//! trigonometric coefficient fields, plus the structural hypothesis
//! checks (divergence-free point, growth fit).

use crate::error::{Error, Result};
use crate::torus::{TorusField, VectorField};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One trigonometric mode `amp * cos(2 pi wave . y + phase)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrigMode {
    pub wave: Vec<i32>,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

/// A real trigonometric polynomial on the torus.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrigPoly {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<TrigMode>,
}

impl TrigPoly {
    pub fn constant(value: f64) -> Self {
        Self {
            constant: value,
            modes: Vec::new(),
        }
    }

    pub fn single(wave: Vec<i32>, amp: f64, phase: f64) -> Self {
        Self {
            constant: 0.0,
            modes: vec![TrigMode { wave, amp, phase }],
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let mut v = self.constant;
        for m in &self.modes {
            let arg: f64 = m
                .wave
                .iter()
                .zip(y)
                .map(|(k, yi)| *k as f64 * yi)
                .sum::<f64>();
            v += m.amp * (2.0 * PI * arg + m.phase).cos();
        }
        v
    }

    /// Analytic partial derivative; trig polynomials are closed under it.
    pub fn deriv(&self, axis: usize) -> TrigPoly {
        let modes = self
            .modes
            .iter()
            .filter(|m| m.wave.get(axis).copied().unwrap_or(0) != 0)
            .map(|m| TrigMode {
                wave: m.wave.clone(),
                amp: m.amp * 2.0 * PI * m.wave[axis] as f64,
                phase: m.phase + 0.5 * PI,
            })
            .collect();
        TrigPoly {
            constant: 0.0,
            modes,
        }
    }

    pub fn max_wave(&self) -> usize {
        self.modes
            .iter()
            .flat_map(|m| m.wave.iter().map(|k| k.unsigned_abs() as usize))
            .max()
            .unwrap_or(0)
    }

    pub fn sample(&self, dims: usize, n: usize) -> TorusField {
        TorusField::from_fn(dims, n, |y| self.eval(y))
    }
}

/// Config-facing flux description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum FluxSpec {
    /// `A(y, p) = (-omega - grad psi(y)) p`: particle density in a
    /// traveling periodic potential.
    LinearRatchet { omega: Vec<f64>, psi: TrigPoly },
    /// `A(y, p) = a(y) p + quadratic p^2` in one space dimension.
    Burgers { advection: TrigPoly, quadratic: f64 },
    /// `A_i(y, p) = sum_k coeffs[k][i](y) p^k`.
    Polynomial {
        dims: usize,
        p0: f64,
        coeffs: Vec<Vec<TrigPoly>>,
    },
}

/// Runtime flux model: everything is reduced to the polynomial form,
/// with analytic `p`- and `y`-derivatives.
#[derive(Debug, Clone)]
pub struct FluxModel {
    dims: usize,
    p0: f64,
    /// `coeffs[k][i]` is the coefficient of `p^k` in component `i`.
    coeffs: Vec<Vec<TrigPoly>>,
    /// Analytic divergence of each coefficient: `div_coeffs[k] = div c_k`.
    div_coeffs: Vec<TrigPoly>,
}

impl FluxModel {
    pub fn from_spec(spec: &FluxSpec) -> Result<Self> {
        let (dims, p0, coeffs) = match spec {
            FluxSpec::LinearRatchet { omega, psi } => {
                let dims = omega.len();
                let mut linear = Vec::with_capacity(dims);
                for (i, om) in omega.iter().enumerate() {
                    let mut g = psi.deriv(i);
                    for m in &mut g.modes {
                        m.amp = -m.amp;
                    }
                    g.constant = -om;
                    linear.push(g);
                }
                let zero: Vec<TrigPoly> = (0..dims).map(|_| TrigPoly::constant(0.0)).collect();
                (dims, 0.0, vec![zero, linear])
            }
            FluxSpec::Burgers {
                advection,
                quadratic,
            } => {
                let coeffs = vec![
                    vec![TrigPoly::constant(0.0)],
                    vec![advection.clone()],
                    vec![TrigPoly::constant(*quadratic)],
                ];
                (1, 0.0, coeffs)
            }
            FluxSpec::Polynomial { dims, p0, coeffs } => {
                for c in coeffs {
                    if c.len() != *dims {
                        return Err(Error::InvalidInput(
                            "flux coefficient arity does not match dims".into(),
                        ));
                    }
                }
                (*dims, *p0, coeffs.clone())
            }
        };
        if !matches!(dims, 1 | 2 | 3) {
            return Err(Error::DimensionUnsupported { dims });
        }
        let div_coeffs = coeffs
            .iter()
            .map(|ck| {
                let mut d = TrigPoly::default();
                for (i, c) in ck.iter().enumerate() {
                    let g = c.deriv(i);
                    d.constant += g.constant;
                    d.modes.extend(g.modes);
                }
                d
            })
            .collect();
        Ok(Self {
            dims,
            p0,
            coeffs,
            div_coeffs,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// Polynomial degree in `p`.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn max_wave(&self) -> usize {
        self.coeffs
            .iter()
            .flatten()
            .map(|c| c.max_wave())
            .max()
            .unwrap_or(0)
    }

    /// Flux component `i` at `(y, p)`.
    pub fn a_component(&self, i: usize, y: &[f64], p: f64) -> f64 {
        let mut v = 0.0;
        let mut pk = 1.0;
        for ck in &self.coeffs {
            v += ck[i].eval(y) * pk;
            pk *= p;
        }
        v
    }

    pub fn a(&self, y: &[f64], p: f64) -> Vec<f64> {
        (0..self.dims).map(|i| self.a_component(i, y, p)).collect()
    }

    /// `d^order A_i / dp^order` at `(y, p)`.
    pub fn dp_a_component(&self, i: usize, y: &[f64], p: f64, order: u32) -> f64 {
        let mut v = 0.0;
        for (k, ck) in self.coeffs.iter().enumerate() {
            if (k as u32) < order {
                continue;
            }
            let mut fac = 1.0;
            for j in 0..order {
                fac *= (k as u32 - j) as f64;
            }
            v += ck[i].eval(y) * fac * p.powi(k as i32 - order as i32);
        }
        v
    }

    /// `div_y A(y, p)` (analytic).
    pub fn div_a(&self, y: &[f64], p: f64) -> f64 {
        let mut v = 0.0;
        let mut pk = 1.0;
        for dk in &self.div_coeffs {
            v += dk.eval(y) * pk;
            pk *= p;
        }
        v
    }

    /// Shifted flux component `B_i(y, f) = A_i(y, v + f) - A_i(y, v)`.
    pub fn b_component(&self, i: usize, y: &[f64], v: f64, f: f64) -> f64 {
        self.a_component(i, y, v + f) - self.a_component(i, y, v)
    }
}

/// Taylor data of the shifted flux around the stationary solution:
/// `alpha1 = dpA(y, v)`, `alpha2 = dp2A(y, v)/2`, `alpha3 = dp3A(y, v)/6`,
/// each a vector field on the torus.
pub fn taylor_flux_coeffs(
    flux: &FluxModel,
    v: &TorusField,
) -> (VectorField, VectorField, VectorField) {
    let dims = flux.dims;
    let sample = |order: u32, scale: f64| -> VectorField {
        (0..dims)
            .map(|i| {
                let mut field = TorusField::zeros_like(v);
                let shape: Vec<usize> = v.shape().to_vec();
                for (idx, out) in field.data_mut().indexed_iter_mut() {
                    let mut y = [0.0; 3];
                    for ax in 0..dims {
                        y[ax] = idx[ax] as f64 / shape[ax] as f64;
                    }
                    let vv = v.data()[&idx];
                    *out = scale * flux.dp_a_component(i, &y[..dims], vv, order);
                }
                field
            })
            .collect()
    };
    (
        sample(1, 1.0),
        sample(2, 0.5),
        sample(3, 1.0 / 6.0),
    )
}

/// Structural hypothesis report for a flux model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub dims: usize,
    pub p0: f64,
    /// `sup |div_y A(y, p0)|` on the check grid.
    pub div_sup: f64,
    /// Fitted growth exponent of `|A(y, p+q) - A(y, p)|` in `q`.
    pub n_effective: f64,
    /// Admissible bound `(N + 2) / N`.
    pub n_max: f64,
    pub pass: bool,
    pub messages: Vec<String>,
}

/// Check `div_y A(., p0) = 0` on a grid and fit the flux growth exponent.
pub fn verify_hypotheses(flux: &FluxModel) -> HypothesisReport {
    let dims = flux.dims;
    let n_grid = 64usize;
    let mut div_sup = 0.0_f64;
    let mut idx = vec![0usize; dims];
    loop {
        let y: Vec<f64> = idx.iter().map(|&i| i as f64 / n_grid as f64).collect();
        div_sup = div_sup.max(flux.div_a(&y, flux.p0).abs());
        // advance the mixed-radix counter
        let mut ax = 0;
        loop {
            idx[ax] += 1;
            if idx[ax] < n_grid {
                break;
            }
            idx[ax] = 0;
            ax += 1;
            if ax == dims {
                break;
            }
        }
        if ax == dims {
            break;
        }
    }
    let n_effective = growth_exponent(flux);
    let n_max = (dims as f64 + 2.0) / dims as f64;
    let mut messages = Vec::new();
    let mut pass = true;
    if div_sup > 1e-10 {
        pass = false;
        messages.push(format!(
            "div_y A(., p0) is not zero: sup = {div_sup:.3e} at p0 = {}",
            flux.p0
        ));
    }
    if !(n_effective < n_max) {
        pass = false;
        messages.push(format!(
            "flux growth exponent {n_effective:.2} >= admissible bound {n_max:.2}"
        ));
    }
    HypothesisReport {
        dims,
        p0: flux.p0,
        div_sup,
        n_effective,
        n_max,
        pass,
        messages,
    }
}

/// Log-log fit of `max_y |A(y, p + q) - A(y, p)|` against `q` over the
/// top sampled decade.
fn growth_exponent(flux: &FluxModel) -> f64 {
    let dims = flux.dims;
    let bases = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let qs: Vec<f64> = (0..16).map(|i| 10f64.powf(i as f64 / 15.0 * 4.0)).collect();
    let n_y = 16usize;
    let mut g = Vec::with_capacity(qs.len());
    for &q in &qs {
        let mut sup = 0.0_f64;
        for iy in 0..n_y.pow(dims as u32) {
            let mut rem = iy;
            let mut y = vec![0.0; dims];
            for ax in 0..dims {
                y[ax] = (rem % n_y) as f64 / n_y as f64;
                rem /= n_y;
            }
            for &p in &bases {
                let mut norm2 = 0.0;
                for i in 0..dims {
                    let d = flux.a_component(i, &y, p + q) - flux.a_component(i, &y, p);
                    norm2 += d * d;
                }
                sup = sup.max(norm2.sqrt());
            }
        }
        g.push(sup);
    }
    if g.iter().all(|v| *v < 1e-14) {
        return 1.0; // identically vanishing increments: trivially admissible
    }
    // least-squares slope on the top sampled decade
    let tail = 5;
    let xs: Vec<f64> = qs[qs.len() - tail..].iter().map(|q| q.ln()).collect();
    let ys: Vec<f64> = g[g.len() - tail..].iter().map(|v| v.max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / tail as f64;
    let my = ys.iter().sum::<f64>() / tail as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..tail {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    num / den
}
