//! Scalar and vector fields on the unit torus `T^N`, `N in {1,2,3}`.
//!
//! Fields are sampled on a uniform grid with no duplicated endpoint, so
//! periodicity holds by construction and the grid average coincides with
//! the spectral zero mode.

use crate::error::{Error, Result};
use crate::spectral;
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// A real scalar field on the unit torus.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusField {
    data: ArrayD<f64>,
}

/// A vector field on the torus, one scalar component per space dimension.
pub type VectorField = Vec<TorusField>;

impl TorusField {
    pub fn new(data: ArrayD<f64>) -> Self {
        assert!(matches!(data.ndim(), 1..=3), "torus fields support N in {{1,2,3}}");
        Self { data }
    }

    /// Sample `f` on the uniform grid with `n` points per axis.
    pub fn from_fn(dims: usize, n: usize, f: impl Fn(&[f64]) -> f64) -> Self {
        let shape: Vec<usize> = vec![n; dims];
        let data = ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
            let mut y = [0.0; 3];
            for ax in 0..dims {
                y[ax] = idx[ax] as f64 / n as f64;
            }
            f(&y[..dims])
        });
        Self::new(data)
    }

    pub fn constant(dims: usize, n: usize, value: f64) -> Self {
        Self::new(ArrayD::from_elem(IxDyn(&vec![n; dims]), value))
    }

    pub fn zeros_like(other: &TorusField) -> Self {
        Self::new(ArrayD::zeros(other.data.raw_dim()))
    }

    pub fn dims(&self) -> usize {
        self.data.ndim()
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> ArrayD<f64> {
        self.data
    }

    fn periods(&self) -> Vec<f64> {
        vec![1.0; self.dims()]
    }

    /// Grid average, equal to the spectral zero mode.
    pub fn mean(&self) -> f64 {
        self.data.sum() / self.data.len() as f64
    }

    /// `L^2(T^N)` norm: square root of the mean square.
    pub fn l2(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Mean of the pointwise product `<self * other>` (plain grid product;
    /// exact for band-limited integrands by the trapezoid rule).
    pub fn inner(&self, other: &TorusField) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Spectral partial derivative along `axis`.
    pub fn deriv(&self, axis: usize) -> TorusField {
        Self::new(spectral::deriv(&self.data, axis, 1.0, 1))
    }

    pub fn laplacian(&self) -> TorusField {
        Self::new(spectral::laplacian(&self.data, &self.periods()))
    }

    pub fn gradient(&self) -> VectorField {
        (0..self.dims()).map(|ax| self.deriv(ax)).collect()
    }

    /// Dealiased pointwise product (3/2 rule).
    pub fn mul_field(&self, other: &TorusField) -> TorusField {
        Self::new(spectral::mul_dealiased(&self.data, &other.data))
    }

    pub fn scale(&self, s: f64) -> TorusField {
        Self::new(self.data.mapv(|v| v * s))
    }

    pub fn add(&self, other: &TorusField) -> TorusField {
        Self::new(&self.data + &other.data)
    }

    pub fn sub(&self, other: &TorusField) -> TorusField {
        Self::new(&self.data - &other.data)
    }

    pub fn add_scalar(&self, s: f64) -> TorusField {
        Self::new(self.data.mapv(|v| v + s))
    }

    pub fn coeffs(&self) -> ArrayD<Complex64> {
        spectral::to_coeffs(&self.data)
    }

    /// Evaluate the trigonometric interpolant on a tensor grid of
    /// arbitrary per-axis coordinates (coordinates may lie outside
    /// `[0,1)`; the interpolant is periodic).
    pub fn eval_tensor(&self, axis_pts: &[Vec<f64>]) -> ArrayD<f64> {
        let c = self.coeffs();
        spectral::eval_tensor(&c, &self.periods(), &vec![0.0; self.dims()], axis_pts)
    }

    /// Plain-text serialization: header lines, then one value per line in
    /// row-major order.
    pub fn save_text(&self, path: &Path) -> Result<()> {
        save_components_text(path, std::slice::from_ref(self))
    }

    pub fn load_text(path: &Path) -> Result<TorusField> {
        let mut fields = load_components_text(path)?;
        if fields.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "{} holds {} components, expected a scalar field",
                path.display(),
                fields.len()
            )));
        }
        Ok(fields.remove(0))
    }

    /// CSV export for plotting: one row per grid node, coordinates first.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        export_components_csv(path, std::slice::from_ref(self))
    }
}

/// Spectral divergence of a vector field.
pub fn divergence(v: &[TorusField]) -> TorusField {
    let mut out = v[0].deriv(0);
    for (ax, comp) in v.iter().enumerate().skip(1) {
        out = out.add(&comp.deriv(ax));
    }
    out
}

/// Serialize one or more components sharing a grid.
pub fn save_components_text(path: &Path, fields: &[TorusField]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let first = &fields[0];
    writeln!(w, "torusfield v1")?;
    writeln!(w, "dims {}", first.dims())?;
    let shape: Vec<String> = first.shape().iter().map(|s| s.to_string()).collect();
    writeln!(w, "shape {}", shape.join(" "))?;
    writeln!(w, "components {}", fields.len())?;
    for f in fields {
        for v in f.data.iter() {
            writeln!(w, "{:.17e}", v)?;
        }
    }
    Ok(())
}

pub fn load_components_text(path: &Path) -> Result<Vec<TorusField>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let bad = |msg: &str| Error::InvalidInput(format!("{}: {}", path.display(), msg));
    let magic = lines.next().ok_or_else(|| bad("empty file"))??;
    if magic.trim() != "torusfield v1" {
        return Err(bad("missing `torusfield v1` header"));
    }
    let mut header = |key: &str| -> Result<Vec<String>> {
        let line = lines
            .next()
            .ok_or_else(|| bad("truncated header"))??;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(&format!("expected `{key}` line")));
        }
        Ok(parts.map(|s| s.to_string()).collect())
    };
    let dims: usize = header("dims")?[0]
        .parse()
        .map_err(|_| bad("bad dims"))?;
    let shape: Vec<usize> = header("shape")?
        .iter()
        .map(|s| s.parse().map_err(|_| bad("bad shape")))
        .collect::<Result<_>>()?;
    if shape.len() != dims {
        return Err(bad("shape length does not match dims"));
    }
    let components: usize = header("components")?[0]
        .parse()
        .map_err(|_| bad("bad components"))?;
    let ntot: usize = shape.iter().product();
    let mut fields = Vec::with_capacity(components);
    for _ in 0..components {
        let mut vals = Vec::with_capacity(ntot);
        for _ in 0..ntot {
            let line = lines.next().ok_or_else(|| bad("truncated values"))??;
            vals.push(line.trim().parse::<f64>().map_err(|_| bad("bad value"))?);
        }
        let data = ArrayD::from_shape_vec(IxDyn(&shape), vals)
            .map_err(|_| bad("shape/value mismatch"))?;
        fields.push(TorusField::new(data));
    }
    Ok(fields)
}

pub fn export_components_csv(path: &Path, fields: &[TorusField]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let first = &fields[0];
    let dims = first.dims();
    let coords: Vec<String> = (0..dims).map(|a| format!("z{}", a + 1)).collect();
    let comps: Vec<String> = (0..fields.len()).map(|c| format!("c{}", c + 1)).collect();
    writeln!(w, "{},{}", coords.join(","), comps.join(","))?;
    let shape = first.shape();
    for idx in ndarray::indices(shape) {
        let mut row: Vec<String> = Vec::with_capacity(dims + fields.len());
        for ax in 0..dims {
            row.push(format!("{:.17e}", idx[ax] as f64 / shape[ax] as f64));
        }
        for f in fields {
            row.push(format!("{:.17e}", f.data[&idx]));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
