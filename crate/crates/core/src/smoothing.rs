use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::CubicMesh;
use crate::error::{Error, Result};
use crate::field::{LatticeCube, PointField, WeightedMeasure};
use crate::trace::BoundaryTrace;

/// A face of the skeleton: the low face, along `axis`, of the lattice cell `index`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaceKey {
    pub axis: usize,
    pub index: Vec<i64>,
}

/// Scalar samples of V·e_axis on the M^(n-1) midpoint nodes of one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceData {
    pub key: FaceKey,
    pub origin: Vec<f64>,
    pub side: f64,
    pub m: usize,
    pub samples: Vec<f64>,
    pub integral: f64,
    /// Width in nodes of the zeroed boundary band (0 for raw data).
    pub margin: usize,
    /// Mollifier radius in nodes.
    pub radius: usize,
}

impl FaceData {
    pub fn new(key: FaceKey, origin: Vec<f64>, side: f64, m: usize, samples: Vec<f64>) -> Self {
        let mut f = FaceData { key, origin, side, m, samples, integral: 0.0, margin: 0, radius: 0 };
        f.integral = f.weight() * f.samples.iter().sum::<f64>();
        f
    }

    pub fn sample<F: PointField + ?Sized>(v: &F, key: FaceKey, origin: &[f64], side: f64, m: usize) -> Self {
        let cell = LatticeCube { origin: origin.to_vec(), side, index: key.index.clone() };
        let mut out = vec![0.0; origin.len()];
        let mut samples = Vec::new();
        cell.for_face_nodes(key.axis, false, m, |x, _| {
            v.eval_into(x, &mut out);
            samples.push(out[key.axis]);
        });
        FaceData::new(key, origin.to_vec(), side, m, samples)
    }

    pub fn face_dim(&self) -> usize {
        self.origin.len() - 1
    }

    pub fn weight(&self) -> f64 {
        (self.side / self.m as f64).powi(self.face_dim() as i32)
    }

    pub fn lp_distance(&self, other: &FaceData, p: f64) -> f64 {
        let s: f64 = self.samples.iter().zip(&other.samples).map(|(a, b)| (a - b).abs().powf(p)).sum();
        (s * self.weight()).powf(1.0 / p)
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        (self.samples.iter().map(|a| a.abs().powf(p)).sum::<f64>() * self.weight()).powf(1.0 / p)
    }

    fn multi(&self, mut j: usize, idx: &mut [usize]) {
        for a in (0..idx.len()).rev() {
            idx[a] = j % self.m;
            j /= self.m;
        }
    }

    /// Distance in nodes to the face boundary ring (0 on the outermost ring).
    fn ring(&self, j: usize) -> usize {
        let mut idx = [0usize; 3];
        let d = self.face_dim();
        self.multi(j, &mut idx[..d]);
        idx[..d].iter().map(|&i| i.min(self.m - 1 - i)).min().unwrap_or(usize::MAX)
    }
}

fn bump_1d(m: usize, i: usize) -> f64 {
    let u = (i as f64 + 0.5) / m as f64;
    if u > 0.25 && u < 0.75 {
        1.0 + (2.0 * PI * 2.0 * (u - 0.5)).cos()
    } else {
        0.0
    }
}

/// Tensor (1 + cos) window on the middle half, normalized to unit quadrature integral.
fn bump(face: &FaceData) -> Vec<f64> {
    let d = face.face_dim();
    let mut idx = [0usize; 3];
    let mut psi: Vec<f64> = (0..face.samples.len())
        .map(|j| {
            face.multi(j, &mut idx[..d]);
            idx[..d].iter().map(|&i| bump_1d(face.m, i)).product()
        })
        .collect();
    let s: f64 = psi.iter().sum::<f64>() * face.weight();
    psi.iter_mut().for_each(|v| *v /= s);
    psi
}

fn kernel(radius: usize) -> Vec<f64> {
    let r = radius as f64 + 1.0;
    let raw: Vec<f64> = (-(radius as i64)..=radius as i64)
        .map(|j| {
            let t = j as f64 / r;
            (1.0 - t * t).powi(2)
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Separable truncated convolution; data must vanish within `radius` of the edge.
fn mollify(data: &[f64], m: usize, d: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return data.to_vec();
    }
    let k = kernel(radius);
    let mut cur = data.to_vec();
    for axis in 0..d {
        let stride = m.pow((d - 1 - axis) as u32);
        let mut next = vec![0.0; cur.len()];
        for (j, out) in next.iter_mut().enumerate() {
            let i = (j / stride) % m;
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let off = t as i64 - radius as i64;
                let src = i as i64 - off;
                if src >= 0 && (src as usize) < m {
                    acc += w * cur[(j as i64 - off * stride as i64) as usize];
                }
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

fn lp(v: &[f64], w: f64, p: f64) -> f64 {
    (v.iter().map(|a| a.abs().powf(p)).sum::<f64>() * w).powf(1.0 / p)
}

/// Margin truncation, bump compensation, mollification; the quadrature integral is kept.
pub fn smooth_face(g: &FaceData, delta: f64, p: f64) -> Result<FaceData> {
    if !(delta >= 0.0) || !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {delta}, p = {p}")));
    }
    let d = g.face_dim();
    if d == 0 {
        return Ok(g.clone());
    }
    let m = g.m;
    if m < 8 {
        return Err(Error::FaceTooCoarse(format!("{m} nodes per axis, need at least 8")));
    }
    let w = g.weight();
    let psi = bump(g);
    let psi_norm = lp(&psi, w, p);
    let rings: Vec<usize> = (0..g.samples.len()).map(|j| g.ring(j)).collect();

    let mut margin = (m / 8).max(1);
    let (truncated, s) = loop {
        let mut band = Vec::new();
        let mut inner = g.samples.clone();
        for (j, v) in inner.iter_mut().enumerate() {
            if rings[j] < margin {
                band.push(*v);
                *v = 0.0;
            }
        }
        let s = band.iter().sum::<f64>() * w;
        if lp(&band, w, p) + s.abs() * psi_norm <= 2.0 * delta {
            break (inner, s);
        }
        if margin == 1 {
            return Err(Error::FaceTooCoarse(format!(
                "truncating the outer ring costs {} in L^p, allowance is {}",
                lp(&band, w, p) + s.abs() * psi_norm,
                2.0 * delta
            )));
        }
        margin /= 2;
    };
    let tilde: Vec<f64> = truncated.iter().zip(&psi).map(|(a, b)| a + s * b).collect();

    let mut radius = (margin - 1) / 2;
    let mut out = loop {
        let out = mollify(&tilde, m, d, radius);
        let dev: Vec<f64> = out.iter().zip(&tilde).map(|(a, b)| a - b).collect();
        if radius == 0 || lp(&dev, w, p) <= delta {
            break out;
        }
        radius /= 2;
    };

    // restore the raw quadrature sum exactly at the bump's peak
    let target: f64 = g.samples.iter().sum();
    let peak = psi.iter().enumerate().fold(0, |b, (j, v)| if *v > psi[b] { j } else { b });
    for _ in 0..4 {
        let diff = target - out.iter().sum::<f64>();
        if diff == 0.0 {
            break;
        }
        out[peak] += diff;
    }
    let mut f = FaceData::new(g.key.clone(), g.origin.clone(), g.side, m, out);
    f.margin = margin;
    f.radius = radius;
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Budget {
    /// Absolute L^p budget per face.
    Absolute(f64),
    /// Fraction of the face's own L^p norm.
    Relative(f64),
}

impl Budget {
    fn for_face(&self, g: &FaceData, p: f64) -> f64 {
        match *self {
            Budget::Absolute(d) => d,
            Budget::Relative(r) => r * g.lp_norm(p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Skeleton {
    pub mesh: CubicMesh,
    pub m: usize,
    pub keys: BTreeMap<FaceKey, usize>,
    pub raw: Vec<FaceData>,
    pub smooth: Vec<FaceData>,
}

/// The 2n face keys of a cube with their outward orientation (true = high face).
pub fn cube_faces(index: &[i64]) -> Vec<(FaceKey, bool)> {
    let n = index.len();
    let mut out = Vec::with_capacity(2 * n);
    for axis in 0..n {
        out.push((FaceKey { axis, index: index.to_vec() }, false));
        let mut up = index.to_vec();
        up[axis] += 1;
        out.push((FaceKey { axis, index: up }, true));
    }
    out
}

pub fn smooth_skeleton<F: PointField + ?Sized>(
    v: &F,
    mesh: &CubicMesh,
    budget: Budget,
    p: f64,
    m: usize,
) -> Result<Skeleton> {
    let mut keys = BTreeMap::new();
    for i in 0..mesh.num_cubes() {
        for (k, _) in cube_faces(&mesh.lattice_index(i)) {
            let next = keys.len();
            keys.entry(k).or_insert(next);
        }
    }
    let mut ordered: Vec<(FaceKey, usize)> = keys.iter().map(|(k, &i)| (k.clone(), i)).collect();
    ordered.sort_by_key(|(_, i)| *i);
    let origin = mesh.origin();
    let raw: Vec<FaceData> = ordered
        .par_iter()
        .map(|(k, _)| FaceData::sample(v, k.clone(), &origin, mesh.epsilon, m))
        .collect();
    let smooth = raw
        .par_iter()
        .map(|g| smooth_face(g, budget.for_face(g, p), p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Skeleton { mesh: mesh.clone(), m, keys, raw, smooth })
}

impl Skeleton {
    fn trace_of(&self, cube: usize, faces: &[FaceData]) -> BoundaryTrace {
        let idx = self.mesh.lattice_index(cube);
        let data = cube_faces(&idx)
            .into_iter()
            .map(|(k, high)| {
                let f = &faces[self.keys[&k]];
                if high {
                    f.samples.clone()
                } else {
                    f.samples.iter().map(|v| -v).collect()
                }
            })
            .collect();
        BoundaryTrace { cube: self.mesh.cube(cube), m: self.m, faces: data }
    }

    pub fn smoothed_trace(&self, cube: usize) -> BoundaryTrace {
        self.trace_of(cube, &self.smooth)
    }

    pub fn raw_trace(&self, cube: usize) -> BoundaryTrace {
        self.trace_of(cube, &self.raw)
    }

    pub fn cube_flux(&self, cube: usize, smoothed: bool) -> f64 {
        let faces = if smoothed { &self.smooth } else { &self.raw };
        let idx = self.mesh.lattice_index(cube);
        cube_faces(&idx)
            .into_iter()
            .map(|(k, high)| {
                let i = faces[self.keys[&k]].integral;
                if high {
                    i
                } else {
                    -i
                }
            })
            .sum()
    }

    /// sum_Q int_{dQ} |V_eps - V|^p f(c_Q).
    pub fn deviation(&self, p: f64, mu: WeightedMeasure) -> f64 {
        (0..self.mesh.num_cubes())
            .map(|i| {
                let fc = mu.density(&self.mesh.center(i));
                let s: f64 = cube_faces(&self.mesh.lattice_index(i))
                    .iter()
                    .map(|(k, _)| {
                        let j = self.keys[k];
                        self.smooth[j].lp_distance(&self.raw[j], p).powf(p)
                    })
                    .sum();
                fc * s
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::build_mesh;
    use crate::field::{gen_divfree, gen_vortex, ChargeSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn face(m: usize, d: usize, f: impl FnMut(usize) -> f64) -> FaceData {
        let key = FaceKey { axis: 0, index: vec![0; d + 1] };
        FaceData::new(key, vec![-0.25; d + 1], 0.5, m, (0..m.pow(d as u32)).map(f).collect())
    }

    #[test]
    fn zero_stays_zero() {
        let g = face(32, 1, |_| 0.0);
        let out = smooth_face(&g, 1e-3, 2.0).unwrap();
        assert!(out.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_face() {
        for d in [1usize, 2] {
            let g = face(32, d, |_| 1.0);
            let out = smooth_face(&g, 0.2, 2.0).unwrap();
            let area = 0.5f64.powi(d as i32);
            assert!((out.integral - area).abs() <= 1e-15 * area.max(1.0), "{}", out.integral);
            let psi = bump(&g);
            let band = g.samples.iter().enumerate().filter(|(j, _)| g.ring(*j) < out.margin).count();
            let s = band as f64 * g.weight();
            let bound = 1.0 + s * psi.iter().cloned().fold(0.0, f64::max);
            assert!(out.samples.iter().all(|v| v.abs() <= bound + 1e-12));
            for j in 0..out.samples.len() {
                if out.ring(j) == 0 {
                    assert_eq!(out.samples[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn noise_within_three_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g = face(64, 1, |_| rng.gen_range(-1.0..1.0));
            let delta = 0.2 * g.lp_norm(2.0);
            let out = smooth_face(&g, delta, 2.0).unwrap();
            assert!(out.lp_distance(&g, 2.0) <= 3.0 * delta);
            assert!((out.integral - g.integral).abs() <= 1e-13 * g.lp_norm(1.0));
        }
    }

    #[test]
    fn too_coarse() {
        assert!(matches!(smooth_face(&face(4, 1, |_| 1.0), 0.1, 2.0), Err(Error::FaceTooCoarse(_))));
        assert!(matches!(smooth_face(&face(16, 1, |_| 100.0), 1e-6, 2.0), Err(Error::FaceTooCoarse(_))));
    }

    #[test]
    fn second_differences_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = face(128, 1, |j| (j as f64 * 0.05).sin() + 0.05 * rng.gen_range(-1.0..1.0));
        let out = smooth_face(&g, 0.3 * g.lp_norm(2.0), 2.0).unwrap();
        assert!(out.radius >= 1);
        let d0 = out.radius as f64 + 1.0;
        let sup = g.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let s = &out.samples;
        for j in 1..s.len() - 1 {
            let d2 = (s[j + 1] - 2.0 * s[j] + s[j - 1]).abs();
            assert!(d2 <= 16.0 / (d0 * d0) * sup * 4.0, "{d2}");
        }
    }

    #[test]
    fn skeleton_preserves_cube_fluxes() {
        let v = gen_divfree(2, 2, 32).unwrap();
        let mesh = build_mesh(0.125, &[0.01, -0.02]).unwrap();
        let sk = smooth_skeleton(&v, &mesh, Budget::Relative(0.5), 2.0, 32).unwrap();
        for i in 0..mesh.num_cubes() {
            assert!(sk.cube_flux(i, true).abs() < 1e-13);
            assert!((sk.smoothed_trace(i).integral() - sk.cube_flux(i, true)).abs() < 1e-13);
        }
        let vx = gen_vortex(2, 64, &ChargeSet::single(&[0.0, 0.0], 1)).unwrap();
        let mesh = build_mesh(0.25, &[0.03, 0.04]).unwrap();
        let sk = smooth_skeleton(&vx, &mesh, Budget::Relative(0.5), 1.5, 64).unwrap();
        for i in 0..mesh.num_cubes() {
            let (a, b) = (sk.cube_flux(i, false), sk.cube_flux(i, true));
            assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0), "{a} {b}");
        }
        let d1 = sk.deviation(1.5, WeightedMeasure::lebesgue());
        let sk2 = smooth_skeleton(&vx, &mesh, Budget::Relative(0.25), 1.5, 64).unwrap();
        let d2 = sk2.deviation(1.5, WeightedMeasure::lebesgue());
        assert!(d2 <= 1.1 * d1, "{d2} vs {d1}");
    }
}
