use serde::{Deserialize, Serialize};

use super::vector::PointField;
use crate::error::{Error, Result};

/// Axis-aligned cube placed on a lattice: corner = origin + side * index.
/// Cubes on the same lattice compute shared face nodes with identical arithmetic,
/// so the node coordinates agree bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeCube {
    pub origin: Vec<f64>,
    pub side: f64,
    pub index: Vec<i64>,
}

impl LatticeCube {
    /// The cube Q_rho(x0).
    pub fn centered(x0: &[f64], rho: f64) -> Self {
        LatticeCube {
            origin: x0.iter().map(|c| c - rho / 2.0).collect(),
            side: rho,
            index: vec![0; x0.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn lo(&self, k: usize) -> f64 {
        self.origin[k] + self.side * self.index[k] as f64
    }

    pub fn hi(&self, k: usize) -> f64 {
        self.origin[k] + self.side * (self.index[k] + 1) as f64
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.origin[k] + self.side * (self.index[k] as f64 + 0.5)).collect()
    }

    pub fn check_inside(&self) -> Result<()> {
        let ok = (0..self.dim()).all(|k| self.lo(k) > -0.5 && self.hi(k) < 0.5) && self.side > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::CubeOutsideDomain { center: self.center(), side: self.side })
        }
    }

    /// Coordinate of tangential node `i` of `m` along axis `k`.
    pub fn node_coord(&self, k: usize, i: usize, m: usize) -> f64 {
        self.origin[k] + self.side * self.index[k] as f64 + self.side * ((i as f64 + 0.5) / m as f64)
    }

    /// Coordinate of the face plane on axis `k`.
    pub fn face_coord(&self, k: usize, high: bool) -> f64 {
        self.origin[k] + self.side * (self.index[k] + high as i64) as f64
    }

    pub fn face_weight(&self, m: usize) -> f64 {
        let n = self.dim();
        (self.side / m as f64).powi(n as i32 - 1)
    }

    pub fn area(&self) -> f64 {
        2.0 * self.dim() as f64 * self.side.powi(self.dim() as i32 - 1)
    }

    /// Calls `f(node, j)` for the M^(n-1) nodes of a face, in row-major order
    /// over the tangential axes.
    pub fn for_face_nodes(&self, axis: usize, high: bool, m: usize, mut f: impl FnMut(&[f64], usize)) {
        let n = self.dim();
        let tangential: Vec<usize> = (0..n).filter(|&k| k != axis).collect();
        let count = m.pow(tangential.len() as u32);
        let mut x = vec![0.0; n];
        x[axis] = self.face_coord(axis, high);
        for j in 0..count {
            let mut rem = j;
            for &k in tangential.iter().rev() {
                x[k] = self.node_coord(k, rem % m, m);
                rem /= m;
            }
            f(&x, j);
        }
    }
}

/// Tensor midpoint nodes on one face.
#[derive(Debug, Clone)]
pub struct FaceQuadrature {
    pub axis: usize,
    pub high: bool,
    pub m: usize,
    pub dim: usize,
    pub nodes: Vec<f64>,
    pub weight: f64,
}

impl FaceQuadrature {
    pub fn new(cube: &LatticeCube, axis: usize, high: bool, m: usize) -> Self {
        let n = cube.dim();
        let mut nodes = Vec::with_capacity(m.pow(n as u32 - 1) * n);
        cube.for_face_nodes(axis, high, m, |x, _| nodes.extend_from_slice(x));
        FaceQuadrature { axis, high, m, dim: n, nodes, weight: cube.face_weight(m) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }
}

/// Unweighted sum of V·e_axis over the nodes of one face.
pub fn face_sum<F: PointField + ?Sized>(v: &F, cube: &LatticeCube, axis: usize, high: bool, m: usize) -> f64 {
    let mut out = vec![0.0; cube.dim()];
    let mut s = 0.0;
    cube.for_face_nodes(axis, high, m, |x, _| {
        v.eval_into(x, &mut out);
        s += out[axis];
    });
    s
}

/// Signed face contributions in the order (axis 0 low, axis 0 high, axis 1 low, ...).
pub fn face_fluxes<F: PointField + ?Sized>(v: &F, cube: &LatticeCube, m: usize) -> Result<Vec<f64>> {
    if m < 2 && cube.dim() > 1 {
        return Err(Error::InvalidArgument("quadrature resolution M must be >= 2".into()));
    }
    cube.check_inside()?;
    let w = cube.face_weight(m);
    let mut out = Vec::with_capacity(2 * cube.dim());
    for k in 0..cube.dim() {
        out.push(-(face_sum(v, cube, k, false, m) * w));
        out.push(face_sum(v, cube, k, true, m) * w);
    }
    Ok(out)
}

/// Outward flux of V through the boundary of `cube`.
pub fn boundary_flux<F: PointField + ?Sized>(v: &F, cube: &LatticeCube, m: usize) -> Result<f64> {
    Ok(face_fluxes(v, cube, m)?.iter().sum())
}

/// Gauss-Legendre nodes and weights on (a, b).
pub fn gauss_legendre(k: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pk = if k == 0 { 1.0 } else if k == 1 { x } else { p1 };
            let pkm1 = if k == 1 { 1.0 } else { p0 };
            dp = k as f64 * (x * pk - pkm1) / (x * x - 1.0);
            let dx = pk / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w));
    }
    out
}
