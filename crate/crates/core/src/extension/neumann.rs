use serde::{Deserialize, Serialize};

use super::banded::BandCholesky;
use crate::error::{Error, Result};
use crate::field::LatticeCube;
use crate::trace::BoundaryTrace;

/// Neumann datum on a cube together with the exponent of the energy and the
/// number of interior cells per axis.
#[derive(Debug, Clone)]
pub struct NeumannProblem {
    pub trace: BoundaryTrace,
    pub exponent: f64,
    pub m: usize,
}

impl NeumannProblem {
    pub fn new(trace: BoundaryTrace, exponent: f64, m: usize) -> Result<Self> {
        if !(exponent > 1.0) {
            return Err(Error::InvalidArgument(format!("exponent {exponent} must exceed 1")));
        }
        if m < 2 || !trace.m.is_multiple_of(m) {
            return Err(Error::InvalidArgument(format!(
                "face resolution {} must be a multiple of the cell count {m}",
                trace.m
            )));
        }
        let total = trace.integral();
        if total.abs() > 1e-12 * trace.abs_integral().max(1e-300) && total.abs() > 1e-300 {
            return Err(Error::IncompatibleData(total));
        }
        Ok(NeumannProblem { trace, exponent, m })
    }

    /// Dual exponent p' = p/(p-1), or s = n + 1 when p = 1.
    pub fn exponent_for(p: f64, dim: usize) -> f64 {
        if p == 1.0 {
            dim as f64 + 1.0
        } else {
            p / (p - 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Regularization relative to |f|_inf^(1/(p'-1)).
    pub reg: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Use the descent solver even when p' = 2.
    pub force_iterative: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { reg: 1e-6, max_iter: 500, tol: 1e-9, force_iterative: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionDiagnostics {
    /// max over quadratic test polynomials of the discrete weak residual, relative to |f|_1.
    pub weak_residual: f64,
    /// Same pairing with the exact boundary quadrature of f*phi.
    pub consistency_residual: f64,
    /// max over boundary cells of the flux imbalance, relative to h^(n-1) |f|_inf.
    pub neumann_mismatch: f64,
    /// max over interior cells of the flux imbalance, same scale.
    pub divergence_max: f64,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ExtensionResult {
    pub cube: LatticeCube,
    pub m: usize,
    pub exponent: f64,
    /// Potential at cell centers (zero mean).
    pub u: Vec<f64>,
    /// Per axis, V·e_a on the interior face above each cell (0 on the top layer).
    pub flux: Vec<Vec<f64>>,
    /// Per boundary face (2n), outward datum averaged over each boundary cell face.
    pub boundary: Vec<Vec<f64>>,
    /// V at cell centers, component-fastest.
    pub samples: Vec<f64>,
    pub energies: Vec<f64>,
    pub diagnostics: ExtensionDiagnostics,
}

struct Cells {
    n: usize,
    m: usize,
    h: f64,
    count: usize,
    stride: Vec<usize>,
}

impl Cells {
    fn new(n: usize, m: usize, side: f64) -> Self {
        let stride = (0..n).map(|a| m.pow((n - 1 - a) as u32)).collect();
        Cells { n, m, h: side / m as f64, count: m.pow(n as u32), stride }
    }

    fn coord(&self, c: usize, a: usize) -> usize {
        (c / self.stride[a]) % self.m
    }

    fn has_upper(&self, c: usize, a: usize) -> bool {
        self.coord(c, a) + 1 < self.m
    }
}

struct Model<'a> {
    cells: &'a Cells,
    exponent: f64,
    reg2: f64,
    load: &'a [f64],
}

impl Model<'_> {
    fn diffs(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let c = self.cells;
        (0..c.n)
            .map(|a| {
                (0..c.count)
                    .map(|i| if c.has_upper(i, a) { (u[i + c.stride[a]] - u[i]) / c.h } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn s_of(&self, d: &[Vec<f64>]) -> Vec<f64> {
        let c = self.cells;
        (0..c.count)
            .map(|i| {
                let mut s = 0.0;
                for a in 0..c.n {
                    s += 0.5 * d[a][i] * d[a][i];
                    if c.coord(i, a) > 0 {
                        let lo = d[a][i - c.stride[a]];
                        s += 0.5 * lo * lo;
                    }
                }
                s
            })
            .collect()
    }

    fn energy(&self, u: &[f64]) -> f64 {
        let c = self.cells;
        let s = self.s_of(&self.diffs(u));
        let vol = c.h.powi(c.n as i32);
        let bulk: f64 = s.iter().map(|v| (v + self.reg2).powf(self.exponent / 2.0)).sum::<f64>() * vol / self.exponent;
        let work: f64 = self.load.iter().zip(u).map(|(f, x)| f * x).sum();
        bulk - work
    }

    /// E(u + alpha d) - E(u), evaluated termwise so that it stays accurate when tiny.
    fn energy_delta(&self, u: &[f64], d: &[f64], alpha: f64) -> f64 {
        let c = self.cells;
        let du = self.diffs(u);
        let dd = self.diffs(d);
        let mut ds = vec![0.0; c.count];
        for a in 0..c.n {
            for i in 0..c.count {
                if c.has_upper(i, a) {
                    let t = alpha * dd[a][i] * (2.0 * du[a][i] + alpha * dd[a][i]) * 0.5;
                    ds[i] += t;
                    ds[i + c.stride[a]] += t;
                }
            }
        }
        let s = self.s_of(&du);
        let q = self.exponent / 2.0;
        let vol = c.h.powi(c.n as i32);
        let mut bulk = 0.0;
        for i in 0..c.count {
            let b = s[i] + self.reg2;
            bulk += b.powf(q) * (q * (ds[i] / b).ln_1p()).exp_m1();
        }
        let work: f64 = self.load.iter().zip(d).map(|(f, x)| f * x).sum();
        bulk * vol / self.exponent - alpha * work
    }

    /// Face coefficients a-bar and face fluxes V_f = a-bar D_f.
    fn fluxes(&self, u: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let c = self.cells;
        let d = self.diffs(u);
        let s = self.s_of(&d);
        let ac: Vec<f64> = s.iter().map(|v| (v + self.reg2).powf((self.exponent - 2.0) / 2.0)).collect();
        let mut abar = vec![vec![0.0; c.count]; c.n];
        let mut v = vec![vec![0.0; c.count]; c.n];
        for a in 0..c.n {
            for i in 0..c.count {
                if c.has_upper(i, a) {
                    let w = 0.5 * (ac[i] + ac[i + c.stride[a]]);
                    abar[a][i] = w;
                    v[a][i] = w * d[a][i];
                }
            }
        }
        (abar, v)
    }

    fn gradient(&self, v: &[Vec<f64>]) -> Vec<f64> {
        let c = self.cells;
        let area = c.h.powi(c.n as i32 - 1);
        let mut g: Vec<f64> = self.load.iter().map(|f| -f).collect();
        for a in 0..c.n {
            for i in 0..c.count {
                if c.has_upper(i, a) {
                    let q = area * v[a][i];
                    g[i + c.stride[a]] += q;
                    g[i] -= q;
                }
            }
        }
        g
    }

    /// Solves L_a x = rhs on zero-mean functions, L_a the weighted Laplacian h^(n-2) sum a-bar (x_c - x_nb).
    fn laplace_solve(&self, abar: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
        let c = self.cells;
        let scale = c.h.powi(c.n as i32 - 2);
        let mut diag = vec![0.0; c.count];
        for a in 0..c.n {
            for i in 0..c.count {
                if c.has_upper(i, a) {
                    diag[i] += scale * abar[a][i];
                    diag[i + c.stride[a]] += scale * abar[a][i];
                }
            }
        }
        let b = c.stride[0];
        let chol = BandCholesky::factor(c.count, b, |i, j| {
            if i == 0 || j == 0 {
                return if i == j { 1.0 } else { 0.0 };
            }
            if i == j {
                return diag[i];
            }
            for a in 0..c.n {
                if i - j == c.stride[a] && c.has_upper(j, a) {
                    return -scale * abar[a][j];
                }
            }
            0.0
        })?;
        let mut x = rhs.to_vec();
        x[0] = 0.0;
        chol.solve(&mut x);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter_mut().for_each(|v| *v -= mean);
        Ok(x)
    }
}

fn monomials(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for a in 0..n {
        out.push(vec![a]);
    }
    for a in 0..n {
        for b in a..n {
            out.push(vec![a, b]);
        }
    }
    out
}

fn eval_monomial(mono: &[usize], x: &[f64], center: &[f64], side: f64) -> f64 {
    mono.iter().map(|&a| (x[a] - center[a]) / side).product()
}

/// Minimizes the regularized p'-energy with the datum entering through boundary cell faces.
pub fn extend_good(problem: &NeumannProblem, settings: &SolverSettings) -> Result<ExtensionResult> {
    if !(settings.reg > 0.0) {
        return Err(Error::InvalidArgument("reg must be positive".into()));
    }
    let tr = &problem.trace;
    let n = tr.dim();
    let m = problem.m;
    let cube = &tr.cube;
    let cells = Cells::new(n, m, cube.side);
    let k = tr.m / m;
    let w = tr.weight();
    let area = cells.h.powi(n as i32 - 1);

    // loads per cell and averaged datum per boundary cell face
    let mut load = vec![0.0; cells.count];
    let per_face = m.pow(n as u32 - 1);
    let mut boundary = vec![vec![0.0; per_face]; 2 * n];
    for axis in 0..n {
        let tang: Vec<usize> = (0..n).filter(|&a| a != axis).collect();
        for high in [false, true] {
            let fi = 2 * axis + high as usize;
            let mut sums = vec![0.0; per_face];
            for (j, v) in tr.faces[fi].iter().enumerate() {
                let mut rem = j;
                let mut t = 0;
                let mut mult = 1;
                for _ in tang.iter().rev() {
                    let node = rem % tr.m;
                    rem /= tr.m;
                    t += (node / k) * mult;
                    mult *= m;
                }
                sums[t] += v;
            }
            for (t, s) in sums.iter().enumerate() {
                let f = s * w;
                boundary[fi][t] = f / area;
                let mut rem = t;
                let mut c = if high { (m - 1) * cells.stride[axis] } else { 0 };
                for &a in tang.iter().rev() {
                    c += (rem % m) * cells.stride[a];
                    rem /= m;
                }
                load[c] += f;
            }
        }
    }

    let p2 = problem.exponent;
    let sup = tr.sup();
    let reg = settings.reg * if sup > 0.0 { sup.powf(1.0 / (p2 - 1.0)) } else { 1.0 };
    let model = Model { cells: &cells, exponent: p2, reg2: reg * reg, load: &load };
    let ones = vec![vec![1.0; cells.count]; n];

    let mut energies = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    let mut u = vec![0.0; cells.count];
    if sup > 0.0 {
        let u2 = model.laplace_solve(&ones, &load)?;
        if p2 == 2.0 && !settings.force_iterative {
            u = u2;
            iterations = 1;
        } else {
            // best multiple of the quadratic solution
            let s = model.s_of(&model.diffs(&u2));
            let vol = cells.h.powi(n as i32);
            let a_coef: f64 = s.iter().map(|v| v.powf(p2 / 2.0)).sum::<f64>() * vol;
            let b_coef: f64 = load.iter().zip(&u2).map(|(f, x)| f * x).sum();
            let t = if a_coef > 0.0 && b_coef > 0.0 { (b_coef / a_coef).powf(1.0 / (p2 - 1.0)) } else { 1.0 };
            u = u2.iter().map(|v| t * v).collect();
            let mut e = model.energy(&u);
            energies.push(e);
            converged = false;
            let scale = area * sup;
            let mut prev_step: Option<(Vec<f64>, Vec<f64>)> = None;
            let mut alpha_trial = 1.0;
            while iterations < settings.max_iter {
                let (abar, vf) = model.fluxes(&u);
                let g = model.gradient(&vf);
                let res = g.iter().fold(0.0f64, |mx, v| mx.max(v.abs())) / scale;
                if res < settings.tol {
                    converged = true;
                    break;
                }
                let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
                let d = model.laplace_solve(&abar, &rhs)?;
                let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
                if !(slope < 0.0) {
                    break;
                }
                // Barzilai-Borwein curvature from the previous step, trial step kept in [1/4, 1]
                if let Some((ds, dg)) = &prev_step {
                    let sy: f64 = ds.iter().zip(g.iter().zip(dg)).map(|(s, (g1, g0))| s * (g1 - g0)).sum();
                    let ss: f64 = ds.iter().map(|s| s * s).sum();
                    let dd: f64 = d.iter().map(|x| x * x).sum();
                    if sy > 0.0 && ss > 0.0 && dd > 0.0 {
                        alpha_trial = (-slope * ss / (sy * dd)).clamp(0.25, 1.0);
                    }
                }
                let mut alpha = alpha_trial;
                let mut accepted = None;
                for _ in 0..50 {
                    let delta = model.energy_delta(&u, &d, alpha);
                    if delta <= 1e-4 * alpha * slope {
                        let cand: Vec<f64> = u.iter().zip(&d).map(|(x, y)| x + alpha * y).collect();
                        accepted = Some((cand, e + delta));
                        break;
                    }
                    alpha *= 0.5;
                }
                let Some((cand, ec)) = accepted else { break };
                let step: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
                prev_step = Some((step, g));
                u = cand;
                e = ec;
                energies.push(e);
                iterations += 1;
            }
        }
    }

    let (_, vf) = model.fluxes(&u);
    let g = model.gradient(&vf);
    let energy = model.energy(&u);
    if energies.is_empty() {
        energies.push(energy);
    }

    // cell-center samples
    let mut samples = vec![0.0; cells.count * n];
    for i in 0..cells.count {
        for a in 0..n {
            let ci = cells.coord(i, a);
            let lo = if ci > 0 {
                vf[a][i - cells.stride[a]]
            } else {
                -boundary[2 * a][tangential_index(&cells, i, a)]
            };
            let hi = if ci + 1 < m { vf[a][i] } else { boundary[2 * a + 1][tangential_index(&cells, i, a)] };
            samples[i * n + a] = 0.5 * (lo + hi);
        }
    }

    let mut result = ExtensionResult {
        cube: cube.clone(),
        m,
        exponent: p2,
        u,
        flux: vf,
        boundary,
        samples,
        energies,
        diagnostics: ExtensionDiagnostics {
            weak_residual: 0.0,
            consistency_residual: 0.0,
            neumann_mismatch: 0.0,
            divergence_max: 0.0,
            energy,
            iterations,
            converged,
        },
    };

    let denom = (area * sup).max(1e-300);
    let mut nm = 0.0f64;
    let mut dm = 0.0f64;
    for i in 0..cells.count {
        let on_boundary = (0..n).any(|a| {
            let c = cells.coord(i, a);
            c == 0 || c + 1 == m
        });
        let r = g[i].abs() / denom;
        if on_boundary {
            nm = nm.max(r);
        } else {
            dm = dm.max(r);
        }
    }
    let f1 = tr.abs_integral().max(1e-300);
    let center = cube.center();
    let nodes = tr.nodes();
    let mut weak = 0.0f64;
    let mut cons = 0.0f64;
    let mut x = vec![0.0; n];
    for mono in monomials(n) {
        let phi = |y: &[f64]| eval_monomial(&mono, y, &center, cube.side);
        let mut r = 0.0;
        for (i, gi) in g.iter().enumerate() {
            result.center_of(i, &mut x);
            r += phi(&x) * gi;
        }
        let q = result.integrate_grad(&phi, None);
        let mut exact = 0.0;
        for (fi, pts) in nodes.iter().enumerate() {
            for (j, y) in pts.iter().enumerate() {
                exact += tr.faces[fi][j] * phi(y);
            }
        }
        exact *= w;
        weak = weak.max(r.abs() / f1);
        cons = cons.max((q - exact).abs() / f1);
    }
    result.diagnostics.weak_residual = weak;
    result.diagnostics.consistency_residual = cons;
    result.diagnostics.neumann_mismatch = if sup > 0.0 { nm } else { 0.0 };
    result.diagnostics.divergence_max = if sup > 0.0 { dm } else { 0.0 };
    Ok(result)
}

fn tangential_index(cells: &Cells, i: usize, axis: usize) -> usize {
    let mut t = 0;
    for a in 0..cells.n {
        if a != axis {
            t = t * cells.m + cells.coord(i, a);
        }
    }
    t
}

impl ExtensionResult {
    fn cells(&self) -> Cells {
        Cells::new(self.cube.dim(), self.m, self.cube.side)
    }

    pub fn center_of(&self, i: usize, out: &mut [f64]) {
        let c = self.cells();
        for a in 0..c.n {
            out[a] = self.cube.node_coord(a, c.coord(i, a), self.m);
        }
    }

    /// Staggered quadrature of int_Q (V + offset)·grad(phi), using differences of phi
    /// between the points flanking each face (cell centers and boundary face centers).
    pub fn integrate_grad(&self, phi: &dyn Fn(&[f64]) -> f64, offset: Option<&[f64]>) -> f64 {
        let c = self.cells();
        let n = c.n;
        let area = c.h.powi(n as i32 - 1);
        let phis: Vec<f64> = (0..c.count)
            .map(|i| {
                let mut x = vec![0.0; n];
                self.center_of(i, &mut x);
                phi(&x)
            })
            .collect();
        let mut total = 0.0;
        let mut x = vec![0.0; n];
        for a in 0..n {
            let off = offset.map_or(0.0, |o| o[a]);
            for i in 0..c.count {
                if c.has_upper(i, a) {
                    total += area * (self.flux[a][i] + off) * (phis[i + c.stride[a]] - phis[i]);
                }
                let ci = c.coord(i, a);
                for (high, on) in [(false, ci == 0), (true, ci + 1 == self.m)] {
                    if !on {
                        continue;
                    }
                    self.center_of(i, &mut x);
                    x[a] = self.cube.face_coord(a, high);
                    let pb = phi(&x);
                    let t = tangential_index(&c, i, a);
                    let f = self.boundary[2 * a + high as usize][t];
                    // outward datum f: V·e_a = -f on the low face, +f on the high face
                    let (va, dphi) = if high { (f, pb - phis[i]) } else { (-f, phis[i] - pb) };
                    total += area * (va + off) * dphi;
                }
            }
        }
        total
    }

    /// Multilinear interpolation of the cell-center samples, clamped to the cube.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = self.cube.dim();
        let m = self.m;
        let c = self.cells();
        let mut base = [0usize; 4];
        let mut frac = [0.0f64; 4];
        for a in 0..n {
            let t = ((x[a] - self.cube.lo(a)) / c.h - 0.5).clamp(0.0, (m - 1) as f64);
            let i = (t.floor() as usize).min(m - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..n {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat += (base[a] + bit) * c.stride[a];
            }
            if w != 0.0 {
                for k in 0..n {
                    out[k] += w * self.samples[flat * n + k];
                }
            }
        }
    }

    /// int_Q |V|^p from cell-center samples.
    pub fn lp_pow(&self, p: f64) -> f64 {
        let n = self.cube.dim();
        let vol = (self.cube.side / self.m as f64).powi(n as i32);
        self.samples
            .chunks(n)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p))
            .sum::<f64>()
            * vol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(side: f64, center: &[f64], m: usize, k: usize, p2: f64, f: impl Fn(&[f64], usize, bool) -> f64) -> NeumannProblem {
        let cube = LatticeCube::centered(center, side);
        let t = BoundaryTrace::from_fn(&cube, m * k, f);
        let t = t.with_integral(0.0);
        NeumannProblem::new(t, p2, m).unwrap()
    }

    fn wavy(x: &[f64], axis: usize, high: bool) -> f64 {
        let s = if high { 1.0 } else { -1.0 };
        s * (1.0 + 0.5 * (7.0 * x[1 - axis]).sin()) + x[0] * x[1]
    }

    #[test]
    fn zero_datum() {
        let pr = problem(1.0, &[0.0, 0.0], 8, 2, 3.0, |_, _, _| 0.0);
        let r = extend_good(&pr, &SolverSettings::default()).unwrap();
        assert_eq!(r.diagnostics.iterations, 0);
        assert!(r.samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn incompatible_rejected() {
        let cube = LatticeCube::centered(&[0.0, 0.0], 1.0);
        let t = BoundaryTrace::from_fn(&cube, 8, |_, _, _| 1.0);
        assert!(matches!(NeumannProblem::new(t, 2.0, 8), Err(Error::IncompatibleData(_))));
    }

    #[test]
    fn constant_field_recovered() {
        let w = [0.7, -0.3];
        let pr = problem(1.0, &[0.0, 0.0], 64, 1, 2.0, |_, a, high| if high { w[a] } else { -w[a] });
        let r = extend_good(&pr, &SolverSettings::default()).unwrap();
        assert!(r.diagnostics.neumann_mismatch < 1e-6);
        for v in r.samples.chunks(2) {
            assert!((v[0] - w[0]).abs() < 1e-8 && (v[1] - w[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_matches_dense_solve() {
        let m = 8;
        let pr = problem(0.5, &[0.1, 0.0], m, 2, 2.0, wavy);
        let r = extend_good(&pr, &SolverSettings::default()).unwrap();
        // dense oracle: Gaussian elimination on the Laplacian with a mean-zero constraint row
        let n = m * m;
        let h = 0.5 / m as f64;
        let mut a = vec![vec![0.0f64; n + 1]; n + 1];
        let mut b = vec![0.0; n + 1];
        let id = |i: usize, j: usize| i * m + j;
        for i in 0..m {
            for j in 0..m {
                for (di, dj) in [(1usize, 0usize), (0, 1)] {
                    if i + di < m && j + dj < m {
                        let (p, q) = (id(i, j), id(i + di, j + dj));
                        a[p][p] += 1.0;
                        a[q][q] += 1.0;
                        a[p][q] -= 1.0;
                        a[q][p] -= 1.0;
                    }
                }
            }
        }
        // loads: integrate the datum over each boundary cell face by brute force from the trace
        let tr = &pr.trace;
        let nodes = tr.nodes();
        for (fi, pts) in nodes.iter().enumerate() {
            for (j, y) in pts.iter().enumerate() {
                let ci = (((y[0] - 0.1 + 0.25) / h).floor() as usize).min(m - 1);
                let cj = (((y[1] + 0.25) / h).floor() as usize).min(m - 1);
                b[id(ci, cj)] += tr.faces[fi][j] * tr.weight();
            }
        }
        for k in 0..n {
            a[k][n] = 1.0;
            a[n][k] = 1.0;
        }
        let size = n + 1;
        for col in 0..size {
            let piv = (col..size).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..size {
                let f = a[row][col] / a[col][col];
                for k in col..size {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut u = vec![0.0; size];
        for row in (0..size).rev() {
            let s: f64 = (row + 1..size).map(|k| a[row][k] * u[k]).sum();
            u[row] = (b[row] - s) / a[row][row];
        }
        let mut e = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i + 1 < m {
                    e += 0.5 * (u[id(i + 1, j)] - u[id(i, j)]).powi(2);
                }
                if j + 1 < m {
                    e += 0.5 * (u[id(i, j + 1)] - u[id(i, j)]).powi(2);
                }
            }
        }
        let reg = 1e-6 * tr.sup();
        let loads: Vec<f64> = {
            let mut l = vec![0.0; n];
            for (fi, pts) in nodes.iter().enumerate() {
                for (j, y) in pts.iter().enumerate() {
                    let ci = (((y[0] - 0.1 + 0.25) / h).floor() as usize).min(m - 1);
                    let cj = (((y[1] + 0.25) / h).floor() as usize).min(m - 1);
                    l[id(ci, cj)] += tr.faces[fi][j] * tr.weight();
                }
            }
            l
        };
        e += 0.5 * reg * reg * 0.25 - (0..n).map(|k| loads[k] * u[k]).sum::<f64>();
        assert!((r.diagnostics.energy - e).abs() < 1e-8 * e.abs().max(1.0), "{} vs {e}", r.diagnostics.energy);
        for k in 0..n {
            assert!((r.u[k] - u[k]).abs() < 1e-9);
        }
        assert!(r.diagnostics.weak_residual < 1e-10);
    }

    #[test]
    fn nonquadratic_exponents_converge() {
        for p2 in [1.5, 3.0] {
            let pr = problem(1.0, &[0.0, 0.0], 32, 2, p2, wavy);
            let r = extend_good(&pr, &SolverSettings::default()).unwrap();
            let d = &r.diagnostics;
            assert!(d.converged, "p2={p2} {:?} last energies {:?}", d, &r.energies[r.energies.len().saturating_sub(3)..]);
            assert!(d.weak_residual < 1e-3 && d.neumann_mismatch < 1e-3 && d.divergence_max < 1e-3);
            for w in r.energies.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn iterative_agrees_with_direct() {
        let pr = problem(1.0, &[0.0, 0.0], 16, 1, 2.0, wavy);
        let direct = extend_good(&pr, &SolverSettings::default()).unwrap();
        let it = extend_good(&pr, &SolverSettings { force_iterative: true, ..Default::default() }).unwrap();
        assert!((direct.diagnostics.energy - it.diagnostics.energy).abs() < 1e-12);
    }

    #[test]
    fn scaling_law() {
        let p2 = 3.0;
        let p = p2 / (p2 - 1.0);
        let mut ratios = Vec::new();
        for eps in [0.25, 0.125, 0.0625] {
            let pr = problem(eps, &[0.0, 0.0], 16, 2, p2, |x, a, high| wavy(&[x[0] / eps, x[1] / eps], a, high));
            let r = extend_good(&pr, &SolverSettings::default()).unwrap();
            ratios.push(r.lp_pow(p) / pr.trace.lp_pow(p) / eps);
        }
        for r in &ratios {
            assert!((r / ratios[0] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn three_dimensional() {
        let pr = problem(1.0, &[0.0, 0.0, 0.0], 8, 1, 2.0, |x, a, high| {
            let s = if high { 1.0 } else { -1.0 };
            s * (a as f64 + 1.0) + x[(a + 1) % 3]
        });
        let r = extend_good(&pr, &SolverSettings::default()).unwrap();
        assert!(r.diagnostics.weak_residual < 1e-10 && r.diagnostics.neumann_mismatch < 1e-10);
    }
}
