use std::fmt;
use std::sync::Arc;

use super::grid::{GridSpec, WeightedMeasure};
use crate::error::{Error, Result};

pub type Callback = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Anything that can be evaluated pointwise on Q_1(0).
pub trait PointField: Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

#[derive(Clone)]
pub struct VectorField {
    grid: GridSpec,
    values: Vec<f64>,
    analytic: Option<Callback>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("grid", &self.grid)
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

impl VectorField {
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_cells() * grid.dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.num_cells() * grid.dim,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::CorruptField(format!("nonfinite value at index {i}")));
        }
        Ok(VectorField { grid, values, analytic: None })
    }

    /// Samples `cb` at cell centers and keeps it for exact evaluation.
    pub fn from_fn(grid: GridSpec, cb: Callback) -> Result<Self> {
        let n = grid.dim;
        let mut values = vec![0.0; grid.num_cells() * n];
        let mut x = vec![0.0; n];
        for (c, chunk) in values.chunks_mut(n).enumerate() {
            grid.center(c, &mut x);
            cb(&x, chunk);
        }
        let mut f = Self::from_values(grid, values)?;
        f.analytic = Some(cb);
        Ok(f)
    }

    pub fn constant(grid: GridSpec, c: &[f64]) -> Result<Self> {
        if c.len() != grid.dim {
            return Err(Error::InvalidArgument("constant has wrong length".into()));
        }
        let v = c.to_vec();
        Self::from_fn(grid, Arc::new(move |_, out| out.copy_from_slice(&v)))
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn has_analytic(&self) -> bool {
        self.analytic.is_some()
    }

    pub fn scaled(&self, c: f64) -> VectorField {
        let values = self.values.iter().map(|v| c * v).collect();
        let analytic = self.analytic.clone().map(|cb| -> Callback {
            Arc::new(move |x, out| {
                cb(x, out);
                out.iter_mut().for_each(|v| *v *= c);
            })
        });
        VectorField { grid: self.grid, values, analytic }
    }

    /// Drops the analytic callback, as if the field had been read from disk.
    pub fn sampled_only(&self) -> VectorField {
        VectorField { grid: self.grid, values: self.values.clone(), analytic: None }
    }

    /// Multilinear interpolation of cell-center values, clamped to the hull of the centers.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        let n = self.grid.dim;
        let big_n = self.grid.cells_per_axis;
        let h = self.grid.h();
        let mut base = [0usize; 4];
        let mut frac = [0.0f64; 4];
        for k in 0..n {
            let t = ((x[k] + 0.5) / h - 0.5).clamp(0.0, (big_n - 1) as f64);
            let i = (t.floor() as usize).min(big_n.saturating_sub(2));
            base[k] = i;
            frac[k] = if big_n == 1 { 0.0 } else { t - i as f64 };
        }
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        let mut idx = [0usize; 4];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            for k in 0..n {
                let bit = (corner >> k) & 1;
                if bit == 1 && big_n == 1 {
                    w = 0.0;
                }
                idx[k] = base[k] + bit;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            }
            if w == 0.0 {
                continue;
            }
            let flat = self.grid.flatten(&idx[..n]);
            for c in 0..n {
                out[c] += w * self.values[flat * n + c];
            }
        }
    }
}

impl PointField for VectorField {
    fn dim(&self) -> usize {
        self.grid.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.analytic {
            Some(cb) => cb(x, out),
            None => self.interpolate(x, out),
        }
    }
}

/// (sum_cells |V|^p f(center) h^n)^(1/p).
pub fn lp_norm(v: &VectorField, p: f64, mu: WeightedMeasure) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p = {p} must be >= 1")));
    }
    if v.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::CorruptField("nonfinite value".into()));
    }
    let g = v.grid;
    let n = g.dim;
    let vol = g.h().powi(n as i32);
    let mut x = vec![0.0; n];
    let mut acc = 0.0;
    for (c, chunk) in v.values.chunks(n).enumerate() {
        let m = chunk.iter().map(|a| a * a).sum::<f64>().sqrt();
        let term = m.powf(p);
        if mu.is_lebesgue() {
            acc += term;
        } else {
            g.center(c, &mut x);
            acc += term * mu.density(&x);
        }
    }
    Ok((acc * vol).powf(1.0 / p))
}

/// Same norm for the pointwise difference of two fields sampled at the centers of `grid`.
pub fn lp_distance<A: PointField + ?Sized, B: PointField + ?Sized>(
    a: &A,
    b: &B,
    grid: GridSpec,
    p: f64,
    mu: WeightedMeasure,
) -> f64 {
    let n = grid.dim;
    let vol = grid.h().powi(n as i32);
    let mut x = vec![0.0; n];
    let mut va = vec![0.0; n];
    let mut vb = vec![0.0; n];
    let mut acc = 0.0;
    for c in 0..grid.num_cells() {
        grid.center(c, &mut x);
        a.eval_into(&x, &mut va);
        b.eval_into(&x, &mut vb);
        let m = va.iter().zip(&vb).map(|(s, t)| (s - t) * (s - t)).sum::<f64>().sqrt();
        acc += m.powf(p) * mu.density(&x);
    }
    (acc * vol).powf(1.0 / p)
}
