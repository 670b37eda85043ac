use serde::{Deserialize, Serialize};

use crate::field::LatticeCube;

/// Outward normal flux f = V·nu sampled on the M^(n-1) midpoint nodes of each of the
/// 2n faces, ordered (axis 0 low, axis 0 high, axis 1 low, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub cube: LatticeCube,
    pub m: usize,
    pub faces: Vec<Vec<f64>>,
}

impl BoundaryTrace {
    pub fn from_fn(cube: &LatticeCube, m: usize, mut f: impl FnMut(&[f64], usize, bool) -> f64) -> Self {
        let n = cube.dim();
        let mut faces = Vec::with_capacity(2 * n);
        for axis in 0..n {
            for high in [false, true] {
                let mut s = Vec::with_capacity(m.pow(n as u32 - 1));
                cube.for_face_nodes(axis, high, m, |x, _| s.push(f(x, axis, high)));
                faces.push(s);
            }
        }
        BoundaryTrace { cube: cube.clone(), m, faces }
    }

    pub fn dim(&self) -> usize {
        self.cube.dim()
    }

    pub fn weight(&self) -> f64 {
        self.cube.face_weight(self.m)
    }

    pub fn face_integral(&self, face: usize) -> f64 {
        self.faces[face].iter().sum::<f64>() * self.weight()
    }

    pub fn integral(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_integral(f)).sum()
    }

    pub fn abs_integral(&self) -> f64 {
        self.faces.iter().flatten().map(|v| v.abs()).sum::<f64>() * self.weight()
    }

    pub fn sup(&self) -> f64 {
        self.faces.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// int |f|^p over the boundary.
    pub fn lp_pow(&self, p: f64) -> f64 {
        self.faces.iter().flatten().map(|v| v.abs().powf(p)).sum::<f64>() * self.weight()
    }

    /// Adds a constant so that the boundary integral equals `target`.
    pub fn with_integral(&self, target: f64) -> BoundaryTrace {
        let shift = (target - self.integral()) / self.cube.area();
        let mut out = self.clone();
        out.faces.iter_mut().flatten().for_each(|v| *v += shift);
        out
    }

    /// Node coordinates of every face, matching the order of `faces`.
    pub fn nodes(&self) -> Vec<Vec<Vec<f64>>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(2 * n);
        for axis in 0..n {
            for high in [false, true] {
                let mut pts = Vec::new();
                self.cube.for_face_nodes(axis, high, self.m, |x, _| pts.push(x.to_vec()));
                out.push(pts);
            }
        }
        out
    }

    /// Multilinear interpolation of the samples at a boundary point y.
    /// The face is the one on which |y - c|_inf is attained.
    pub fn eval(&self, y: &[f64]) -> f64 {
        let n = self.dim();
        let c = self.cube.center();
        let mut axis = 0;
        let mut best = -1.0;
        for k in 0..n {
            let d = (y[k] - c[k]).abs();
            if d > best {
                best = d;
                axis = k;
            }
        }
        let high = y[axis] >= c[axis];
        let face = &self.faces[2 * axis + high as usize];
        if n == 1 {
            return face[0];
        }
        let m = self.m;
        let tangential: Vec<usize> = (0..n).filter(|&k| k != axis).collect();
        let d = tangential.len();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for (a, &k) in tangential.iter().enumerate() {
            let u = ((y[k] - self.cube.lo(k)) / self.cube.side * m as f64 - 0.5).clamp(0.0, (m - 1) as f64);
            let i = (u.floor() as usize).min(m.saturating_sub(2));
            base[a] = i;
            frac[a] = if m == 1 { 0.0 } else { u - i as f64 };
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..d {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat = flat * m + (base[a] + bit).min(m - 1);
            }
            if w != 0.0 {
                acc += w * face[flat];
            }
        }
        acc
    }
}
