use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{build_mesh, classify_cubes, select_shift, CubeClass, CubeRecord, CubicMesh, DEFAULT_CANDIDATES};
use crate::error::{Error, Result};
use crate::extension::{
    bad_cube_pairing, extend_bad, extend_good, ExtensionDiagnostics, ExtensionResult, NeumannProblem, SolverSettings,
};
use crate::field::{sup_norm, Charge, ChargeSet, GridSpec, PointField, VectorField, WeightedMeasure};
use crate::smoothing::{smooth_skeleton, Budget};
use crate::trace::BoundaryTrace;

const RADIAL_NODES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub tolerance: f64,
    pub n_candidates: usize,
    pub seed: u64,
    /// Face nodes per axis used when scoring candidate shifts.
    pub shift_nodes: usize,
    /// Face nodes per axis used for the cube fluxes.
    pub class_nodes: usize,
    /// Solver cells per axis on each cube; derived from the input grid when absent.
    pub cells: Option<usize>,
    /// Skeleton face nodes per solver cell; by default enough for 512 nodes per face axis
    /// in two dimensions and 64 in higher ones.
    pub face_factor: Option<usize>,
    pub budget: Budget,
    pub solver: SolverSettings,
    pub force_round: bool,
    pub shift: Option<Vec<f64>>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            tolerance: 1e-2,
            n_candidates: DEFAULT_CANDIDATES,
            seed: 42,
            shift_nodes: 32,
            class_nodes: 256,
            cells: None,
            face_factor: None,
            budget: Budget::Relative(0.1),
            solver: SolverSettings::default(),
            force_round: false,
            shift: None,
        }
    }
}

impl PipelineSettings {
    pub fn cells_for(&self, mesh: &CubicMesh, grid: GridSpec) -> usize {
        self.cells.unwrap_or_else(|| {
            let m = (mesh.epsilon * grid.cells_per_axis as f64).round() as usize;
            m.clamp(8, 64).div_ceil(2) * 2
        })
    }

    pub fn face_nodes_for(&self, dim: usize, cells: usize) -> usize {
        let factor = self.face_factor.unwrap_or_else(|| {
            let target: usize = if dim <= 2 { 512 } else { 64 };
            target.div_ceil(cells).max(1)
        });
        factor.max(1) * cells
    }
}

#[derive(Debug, Clone)]
pub enum CubePiece {
    Good { extension: ExtensionResult, mean: Vec<f64> },
    Bad { trace: BoundaryTrace, degree: i64 },
}

/// The assembled field on Omega_eps, optionally dilated onto Q_1(0).
#[derive(Debug, Clone)]
pub struct ApproximantField {
    pub mesh: CubicMesh,
    pub records: Vec<CubeRecord>,
    pub pieces: Arc<Vec<CubePiece>>,
    pub charges: ChargeSet,
    pub alpha: f64,
    pub p: f64,
    pub mu: WeightedMeasure,
    pub settings: PipelineSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeReport {
    pub center: Vec<f64>,
    pub class: CubeClass,
    pub flux: f64,
    pub degree: i64,
    pub diagnostics: Option<ExtensionDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximantSummary {
    pub epsilon: f64,
    pub shift: Vec<f64>,
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
    pub charges: ChargeSet,
    pub bad_count: usize,
    pub cubes: Vec<CubeReport>,
}

fn exponent_for(p: f64, n: usize) -> f64 {
    NeumannProblem::exponent_for(p, n)
}

/// select_shift, classify, smooth the skeleton, and extend every cube.
pub fn assemble(
    v: &VectorField,
    epsilon: f64,
    p: f64,
    mu: WeightedMeasure,
    settings: &PipelineSettings,
) -> Result<ApproximantField> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p = {p} must be >= 1")));
    }
    let grid = v.grid();
    let n = grid.dim;
    let mesh = match &settings.shift {
        Some(a) => build_mesh(epsilon, a)?,
        None => select_shift(v, n, epsilon, p, mu, settings.n_candidates, settings.seed, settings.shift_nodes)?,
    };
    let mut records = classify_cubes(v, &mesh, settings.tolerance, settings.class_nodes)?;
    for (index, r) in records.iter_mut().enumerate() {
        if r.class == CubeClass::NonIntegral {
            if !settings.force_round {
                return Err(Error::NonIntegralCube { index, flux: r.flux });
            }
            r.class = if r.degree == 0 { CubeClass::Good } else { CubeClass::Bad };
        }
    }
    let m = settings.cells_for(&mesh, grid);
    let face_m = settings.face_nodes_for(n, m);
    let skeleton = smooth_skeleton(v, &mesh, settings.budget, p, face_m)?;
    let p2 = exponent_for(p, n);
    let pieces = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| match r.class {
            CubeClass::Bad => Ok(CubePiece::Bad {
                trace: skeleton.smoothed_trace(i).with_integral(r.degree as f64),
                degree: r.degree,
            }),
            _ => {
                let mut trace = skeleton.smoothed_trace(i);
                for (fi, face) in trace.faces.iter_mut().enumerate() {
                    let c = if fi % 2 == 1 { r.mean[fi / 2] } else { -r.mean[fi / 2] };
                    face.iter_mut().for_each(|x| *x -= c);
                }
                let problem = NeumannProblem::new(trace.with_integral(0.0), p2, m)?;
                let extension = extend_good(&problem, &settings.solver)?;
                Ok(CubePiece::Good { extension, mean: r.mean.clone() })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let charges = ChargeSet::new(
        records
            .iter()
            .filter(|r| r.class == CubeClass::Bad)
            .map(|r| Charge { pos: r.center.clone(), deg: r.degree })
            .collect(),
    )?;
    Ok(ApproximantField {
        mesh,
        records,
        pieces: Arc::new(pieces),
        charges,
        alpha: 1.0,
        p,
        mu,
        settings: settings.clone(),
    })
}

/// Largest alpha with alpha Q_1(0) inside Omega_eps.
pub fn rescale_factor(mesh: &CubicMesh) -> f64 {
    let reach = mesh.bounds().iter().fold(f64::INFINITY, |m, &(lo, hi)| m.min(-lo).min(hi));
    (2.0 * reach).min(1.0)
}

/// P_alpha: x -> alpha^(n-1) V(alpha x), with the charges moved to c/alpha.
pub fn rescale(tilde: &ApproximantField) -> ApproximantField {
    let alpha = rescale_factor(&tilde.mesh);
    let charges = tilde
        .records
        .iter()
        .filter(|r| r.class == CubeClass::Bad)
        .map(|r| Charge { pos: r.center.iter().map(|c| c / alpha).collect(), deg: r.degree })
        .filter(|c| sup_norm(&c.pos) < 0.5)
        .collect();
    ApproximantField { alpha, charges: ChargeSet { charges }, ..tilde.clone() }
}

impl ApproximantField {
    pub fn dim(&self) -> usize {
        self.mesh.dim
    }

    /// The undilated field at a point of Omega_eps (zero outside and at charges).
    pub fn eval_tilde(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let Some(i) = self.mesh.locate(y) else { return };
        match &self.pieces[i] {
            CubePiece::Good { extension, mean } => {
                extension.eval(y, out);
                for (o, m) in out.iter_mut().zip(mean) {
                    *o += m;
                }
            }
            CubePiece::Bad { trace, .. } => {
                if let Ok(v) = extend_bad(trace, y) {
                    out.copy_from_slice(&v);
                }
            }
        }
    }

    pub fn bad_count(&self) -> usize {
        self.records.iter().filter(|r| r.class == CubeClass::Bad).count()
    }

    pub fn summary(&self) -> ApproximantSummary {
        ApproximantSummary {
            epsilon: self.mesh.epsilon,
            shift: self.mesh.shift.clone(),
            alpha: self.alpha,
            p: self.p,
            q: self.mu.q,
            charges: self.charges.clone(),
            bad_count: self.bad_count(),
            cubes: self
                .records
                .iter()
                .zip(self.pieces.iter())
                .map(|(r, piece)| CubeReport {
                    center: r.center.clone(),
                    class: r.class,
                    flux: r.flux,
                    degree: r.degree,
                    diagnostics: match piece {
                        CubePiece::Good { extension, .. } => Some(extension.diagnostics.clone()),
                        CubePiece::Bad { .. } => None,
                    },
                })
                .collect(),
        }
    }

    /// Sum over cubes of the weak pairing int V·grad(phi) + sum_j d_j phi(x_j), evaluated
    /// with the solver's staggered quadrature on good cubes and shell quadrature on bad ones.
    pub fn weak_divergence(&self, phi: &TestFunction, charges: &ChargeSet) -> f64 {
        let alpha = self.alpha;
        let n = self.dim();
        let scaled = |y: &[f64]| {
            let x: Vec<f64> = y.iter().map(|t| t / alpha).collect();
            phi.value(&x)
        };
        let (lo, hi) = phi.support();
        let mut total = 0.0;
        for (i, piece) in self.pieces.iter().enumerate() {
            let cube = self.mesh.cube(i);
            let touches = (0..n).all(|k| cube.lo(k) < alpha * hi[k] && cube.hi(k) > alpha * lo[k]);
            if !touches {
                continue;
            }
            total += match piece {
                CubePiece::Good { extension, mean } => extension.integrate_grad(&scaled, Some(mean)),
                CubePiece::Bad { trace, .. } => bad_cube_pairing(
                    trace,
                    |y, g| {
                        let x: Vec<f64> = y.iter().map(|t| t / alpha).collect();
                        phi.grad(&x, g);
                        g.iter_mut().for_each(|v| *v /= alpha);
                    },
                    RADIAL_NODES,
                ),
            };
        }
        total + charges.charges.iter().map(|c| c.deg as f64 * phi.value(&c.pos)).sum::<f64>()
    }
}

impl PointField for ApproximantField {
    fn dim(&self) -> usize {
        self.mesh.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let y: Vec<f64> = x.iter().map(|t| self.alpha * t).collect();
        self.eval_tilde(&y, out);
        let s = self.alpha.powi(self.dim() as i32 - 1);
        out.iter_mut().for_each(|v| *v *= s);
    }
}

/// P_alpha applied to any point field.
pub struct Dilation<'a, F: PointField + ?Sized> {
    pub field: &'a F,
    pub alpha: f64,
}

impl<F: PointField + ?Sized> PointField for Dilation<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let y: Vec<f64> = x.iter().map(|t| self.alpha * t).collect();
        self.field.eval_into(&y, out);
        let s = self.alpha.powi(self.dim() as i32 - 1);
        out.iter_mut().for_each(|v| *v *= s);
    }
}

/// Pointwise difference a - b.
pub struct Difference<'a, A: PointField + ?Sized, B: PointField + ?Sized>(pub &'a A, pub &'a B);

impl<A: PointField + ?Sized, B: PointField + ?Sized> PointField for Difference<'_, A, B> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.0.eval_into(x, out);
        self.1.eval_into(x, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o -= t);
    }
}

/// Window prod_k (1 - t_k^2)^3, t = (x - c)/r, times a monomial in t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: Vec<f64>,
    pub radius: f64,
    pub monomial: Vec<usize>,
}

impl TestFunction {
    pub fn support(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.center.iter().map(|c| c - self.radius).collect(),
            self.center.iter().map(|c| c + self.radius).collect(),
        )
    }

    fn t(&self, x: &[f64]) -> Option<Vec<f64>> {
        let t: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| (a - c) / self.radius).collect();
        if t.iter().all(|v| v.abs() < 1.0) {
            Some(t)
        } else {
            None
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let Some(t) = self.t(x) else { return 0.0 };
        let w: f64 = t.iter().map(|v| (1.0 - v * v).powi(3)).product();
        w * self.monomial.iter().map(|&k| t[k]).product::<f64>()
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let Some(t) = self.t(x) else { return };
        let n = t.len();
        let w1: Vec<f64> = t.iter().map(|v| (1.0 - v * v).powi(3)).collect();
        let dw1: Vec<f64> = t.iter().map(|v| -6.0 * v * (1.0 - v * v).powi(2)).collect();
        for a in 0..n {
            // d/dt_a of prod_k w1(t_k) * prod_j t_{m_j}
            let mut wprod = 1.0;
            let mut dwprod = 1.0;
            for k in 0..n {
                if k == a {
                    dwprod *= dw1[k];
                } else {
                    wprod *= w1[k];
                    dwprod *= w1[k];
                }
            }
            let wa = wprod * w1[a];
            let mono: f64 = self.monomial.iter().map(|&k| t[k]).product();
            let count = self.monomial.iter().filter(|&&k| k == a).count();
            let dmono = if count == 0 {
                0.0
            } else {
                count as f64
                    * t[a].powi(count as i32 - 1)
                    * self.monomial.iter().filter(|&&k| k != a).map(|&k| t[k]).product::<f64>()
            };
            out[a] = (dwprod * mono + wa * dmono) / self.radius;
        }
    }

    pub fn grad_sup(&self, samples: usize) -> f64 {
        let n = self.center.len();
        let mut best = 0.0f64;
        let mut g = vec![0.0; n];
        let total = samples.pow(n as u32);
        let mut x = vec![0.0; n];
        for i in 0..total {
            let mut rem = i;
            for k in 0..n {
                let j = rem % samples;
                rem /= samples;
                x[k] = self.center[k] - self.radius + (j as f64 + 0.5) / samples as f64 * 2.0 * self.radius;
            }
            self.grad(&x, &mut g);
            best = best.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        best
    }
}

/// Four windows inside Q_1(0) times {1, t_0, t_1, t_0 t_1, t_0^2}: twenty functions.
pub fn standard_family(dim: usize) -> Vec<TestFunction> {
    let b = 1.min(dim - 1);
    let windows = [([-0.2, -0.2], 0.25), ([0.2, -0.2], 0.22), ([-0.2, 0.2], 0.2), ([0.15, 0.2], 0.28)];
    let monos = [vec![], vec![0], vec![b], vec![0, b], vec![0, 0]];
    let mut out = Vec::with_capacity(20);
    for (c, r) in windows {
        let center: Vec<f64> = (0..dim).map(|k| if k < 2 { c[k] } else { 0.05 * k as f64 }).collect();
        for m in &monos {
            out.push(TestFunction { center: center.clone(), radius: r, monomial: m.clone() });
        }
    }
    out
}

/// Per test function |int field·grad(phi) + sum_j d_j phi(x_j)| using the field's own charges
/// (or `charges` when given).
pub fn divergence_residual(
    field: &ApproximantField,
    family: &[TestFunction],
    charges: Option<&ChargeSet>,
) -> Vec<f64> {
    let charges = charges.unwrap_or(&field.charges);
    family.par_iter().map(|phi| field.weak_divergence(phi, charges).abs()).collect()
}

/// Same pairing for an arbitrary point field by the midpoint rule on `grid`.
pub fn midpoint_divergence_residual<F: PointField + ?Sized + Sync>(
    field: &F,
    charges: &ChargeSet,
    family: &[TestFunction],
    grid: GridSpec,
) -> Vec<f64> {
    let n = grid.dim;
    let vol = grid.h().powi(n as i32);
    family
        .par_iter()
        .map(|phi| {
            let mut x = vec![0.0; n];
            let mut v = vec![0.0; n];
            let mut g = vec![0.0; n];
            let mut acc = 0.0;
            for c in 0..grid.num_cells() {
                grid.center(c, &mut x);
                phi.grad(&x, &mut g);
                if g.iter().all(|t| *t == 0.0) {
                    continue;
                }
                field.eval_into(&x, &mut v);
                acc += v.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() * vol;
            }
            (acc + charges.charges.iter().map(|c| c.deg as f64 * phi.value(&c.pos)).sum::<f64>()).abs()
        })
        .collect()
}

/// |V_bar - V|_{L^p(mu)} over Q_1(0), sampled at the centers of V's grid.
pub fn lp_error(field: &ApproximantField, v: &VectorField) -> f64 {
    masked_error(field, v, false)
}

/// |V_tilde - V|_{L^p(mu)} over Omega_eps (no dilation).
pub fn tilde_error(field: &ApproximantField, v: &VectorField) -> f64 {
    let undilated = ApproximantField { alpha: 1.0, ..field.clone() };
    masked_error(&undilated, v, true)
}

fn masked_error(field: &ApproximantField, v: &VectorField, inside_only: bool) -> f64 {
    let grid = v.grid();
    let n = grid.dim;
    let vol = grid.h().powi(n as i32);
    let p = field.p;
    let mu = field.mu;
    let acc: f64 = (0..grid.num_cells())
        .into_par_iter()
        .map(|c| {
            let mut x = vec![0.0; n];
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            grid.center(c, &mut x);
            if inside_only && field.mesh.locate(&x).is_none() {
                return 0.0;
            }
            field.eval_into(&x, &mut a);
            v.eval_into(&x, &mut b);
            let d = a.iter().zip(&b).map(|(s, t)| (s - t) * (s - t)).sum::<f64>().sqrt();
            d.powf(p) * mu.density(&x)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    (acc * vol).powf(1.0 / p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub lp_error: f64,
    pub tilde_error: f64,
    pub bad_count: usize,
    pub alpha: f64,
    pub wallclock_ms: f64,
    pub charges: ChargeSet,
    pub error: Option<String>,
}

/// One pipeline run per epsilon; failures are recorded in their row.
pub fn converge_sweep(
    v: &VectorField,
    p: f64,
    mu: WeightedMeasure,
    eps_list: &[f64],
    settings: &PipelineSettings,
) -> Result<Vec<SweepRow>> {
    if eps_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidArgument("epsilon list must be strictly descending".into()));
    }
    Ok(eps_list
        .par_iter()
        .map(|&eps| {
            let start = Instant::now();
            let run = assemble(v, eps, p, mu, settings).map(|tilde| {
                let bar = rescale(&tilde);
                (lp_error(&bar, v), tilde_error(&tilde, v), tilde.bad_count(), bar.alpha, bar.charges)
            });
            let wallclock_ms = start.elapsed().as_secs_f64() * 1e3;
            match run {
                Ok((lp, te, bad, alpha, charges)) => SweepRow {
                    epsilon: eps,
                    lp_error: lp,
                    tilde_error: te,
                    bad_count: bad,
                    alpha,
                    wallclock_ms,
                    charges,
                    error: None,
                },
                Err(e) => SweepRow {
                    epsilon: eps,
                    lp_error: f64::NAN,
                    tilde_error: f64::NAN,
                    bad_count: 0,
                    alpha: f64::NAN,
                    wallclock_ms,
                    charges: ChargeSet::default(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}
