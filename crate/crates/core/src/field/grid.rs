use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform cell-centered grid on the open unit cube (-1/2, 1/2)^n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub cells_per_axis: usize,
}

impl GridSpec {
    pub fn new(dim: usize, cells_per_axis: usize) -> Result<Self> {
        if !(1..=4).contains(&dim) {
            return Err(Error::InvalidArgument(format!("dim {dim} not in 1..=4")));
        }
        if cells_per_axis == 0 {
            return Err(Error::InvalidArgument("cells_per_axis must be positive".into()));
        }
        Ok(GridSpec { dim, cells_per_axis })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells_per_axis as f64
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -0.5 + (i as f64 + 0.5) * self.h()
    }

    /// Multi-index of a flat cell index; the last axis varies fastest.
    pub fn unflatten(&self, mut flat: usize, idx: &mut [usize]) {
        let n = self.cells_per_axis;
        for k in (0..self.dim).rev() {
            idx[k] = flat % n;
            flat /= n;
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.cells_per_axis + i)
    }

    pub fn center(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; 4];
        self.unflatten(flat, &mut idx[..self.dim]);
        for k in 0..self.dim {
            out[k] = self.coord(idx[k]);
        }
    }
}

/// mu = f L^n with f(x) = (1/2 - |x|_inf)^q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedMeasure {
    pub q: f64,
}

impl WeightedMeasure {
    pub fn new(q: f64) -> Result<Self> {
        if !(q <= 1.0) {
            return Err(Error::InvalidArgument(format!("weight exponent q = {q} must be <= 1")));
        }
        Ok(WeightedMeasure { q })
    }

    pub fn lebesgue() -> Self {
        WeightedMeasure { q: 0.0 }
    }

    pub fn is_lebesgue(&self) -> bool {
        self.q == 0.0
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        if self.is_lebesgue() {
            return 1.0;
        }
        (0.5 - sup_norm(x)).powf(self.q)
    }
}

pub fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn euclid(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_roundtrip() {
        let g = GridSpec::new(3, 5).unwrap();
        let mut idx = [0usize; 3];
        for f in 0..g.num_cells() {
            g.unflatten(f, &mut idx);
            assert_eq!(g.flatten(&idx), f);
        }
        g.unflatten(1, &mut idx);
        assert_eq!(idx, [0, 0, 1]);
    }

    #[test]
    fn centers_symmetric() {
        let g = GridSpec::new(1, 4).unwrap();
        assert_eq!(g.coord(0), -0.375);
        assert_eq!(g.coord(3), 0.375);
    }

    #[test]
    fn density() {
        let mu = WeightedMeasure::new(1.0).unwrap();
        assert!((mu.density(&[0.1, -0.3]) - 0.2).abs() < 1e-15);
        assert_eq!(WeightedMeasure::lebesgue().density(&[0.49, 0.0]), 1.0);
        let neg = WeightedMeasure::new(-1.0).unwrap();
        assert!(neg.density(&[0.0, 0.0]) >= 2.0 - 1e-12);
        assert!(WeightedMeasure::new(1.5).is_err());
        assert!(GridSpec::new(5, 2).is_err());
    }
}
