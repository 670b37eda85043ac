use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{boundary_flux, sup_norm, LatticeCube, PointField, VectorField};

pub const DEFAULT_TOLERANCE: f64 = 1e-2;
pub const DEFAULT_NODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Integral,
    NonIntegral,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxSample {
    pub center: Vec<f64>,
    pub edge: f64,
    pub flux: f64,
    pub nearest: i64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxAuditReport {
    pub tolerance: f64,
    pub requested: usize,
    pub skipped: usize,
    pub samples: Vec<FluxSample>,
    pub pass_fraction: f64,
    pub max_deviation: f64,
    pub verdict: Verdict,
}

impl FluxAuditReport {
    fn assemble(tolerance: f64, requested: usize, samples: Vec<FluxSample>) -> Self {
        let skipped = requested - samples.len();
        let passing: Vec<&FluxSample> = samples.iter().filter(|s| s.deviation < tolerance).collect();
        let pass_fraction = if samples.is_empty() { 0.0 } else { passing.len() as f64 / samples.len() as f64 };
        let max_pass = passing.iter().fold(0.0f64, |m, s| m.max(s.deviation));
        let max_deviation = samples.iter().fold(0.0f64, |m, s| m.max(s.deviation));
        let verdict = if samples.len() * 2 < requested || samples.is_empty() {
            Verdict::Inconclusive
        } else if pass_fraction >= 0.95 && max_pass < tolerance {
            Verdict::Integral
        } else {
            Verdict::NonIntegral
        };
        FluxAuditReport { tolerance, requested, skipped, samples, pass_fraction, max_deviation, verdict }
    }
}

fn sample<F: PointField + ?Sized>(v: &F, x0: &[f64], rho: f64, m: usize) -> Result<FluxSample> {
    let flux = boundary_flux(v, &LatticeCube::centered(x0, rho), m)?;
    let nearest = flux.round() as i64;
    Ok(FluxSample { center: x0.to_vec(), edge: rho, flux, nearest, deviation: (flux - nearest as f64).abs() })
}

fn check_tol(tolerance: f64) -> Result<()> {
    if tolerance > 0.0 && tolerance < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tolerance {tolerance} not in (0, 0.5)")))
    }
}

/// Random cube fluxes: centers uniform in Q_1(0), edges uniform in (0, 2 dist_inf(x0, boundary)).
pub fn integer_flux_scan(
    v: &VectorField,
    tolerance: f64,
    n_centers: usize,
    n_radii: usize,
    seed: u64,
    nodes: usize,
) -> Result<FluxAuditReport> {
    check_tol(tolerance)?;
    let n = v.grid().dim;
    let min_edge = 2.0 * v.grid().h();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(n_centers * n_radii);
    for _ in 0..n_centers {
        let x0: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let reach = 2.0 * (0.5 - sup_norm(&x0));
        for _ in 0..n_radii {
            let rho = rng.gen::<f64>() * reach;
            jobs.push((x0.clone(), rho));
        }
    }
    let results: Vec<Option<FluxSample>> = jobs
        .par_iter()
        .map(|(x0, rho)| {
            if *rho < min_edge || *rho <= 0.0 {
                return Ok(None);
            }
            match sample(v, x0, *rho, nodes) {
                Ok(s) => Ok(Some(s)),
                // closure touching the boundary within rounding
                Err(Error::CubeOutsideDomain { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let samples = results.into_iter().flatten().collect();
    Ok(FluxAuditReport::assemble(tolerance, n_centers * n_radii, samples))
}

/// Level sets of min(|x - x0|_inf, r/2) with r = 2 dist_inf(x0, boundary): the cubes Q_{2t}(x0).
pub fn lipschitz_slice_check(
    v: &VectorField,
    x0: &[f64],
    n_levels: usize,
    tolerance: f64,
    nodes: usize,
) -> Result<FluxAuditReport> {
    check_tol(tolerance)?;
    if x0.len() != v.grid().dim || sup_norm(x0) >= 0.5 {
        return Err(Error::InvalidArgument("x0 must lie in Q_1(0)".into()));
    }
    let reach = 0.5 - sup_norm(x0);
    let min_edge = 2.0 * v.grid().h();
    let results: Vec<Option<FluxSample>> = (0..n_levels)
        .into_par_iter()
        .map(|k| {
            let t = (k + 1) as f64 / (n_levels + 1) as f64 * reach;
            let rho = 2.0 * t;
            if rho < min_edge {
                return Ok(None);
            }
            sample(v, x0, rho, nodes).map(Some)
        })
        .collect::<Result<_>>()?;
    let samples = results.into_iter().flatten().collect();
    Ok(FluxAuditReport::assemble(tolerance, n_levels, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gen_divfree, gen_vortex, gen_vortex_scaled, Charge, ChargeSet, GridSpec};

    #[test]
    fn vortex_integral() {
        let v = gen_vortex(2, 64, &ChargeSet::single(&[0.0, 0.0], 1)).unwrap();
        let r = integer_flux_scan(&v, 1e-2, 50, 20, 1, 256).unwrap();
        assert_eq!(r.verdict, Verdict::Integral);
        assert!(r.samples.iter().all(|s| s.nearest == 0 || s.nearest == 1));
    }

    #[test]
    fn constant_field_fluxes_vanish() {
        let v = VectorField::constant(GridSpec::new(2, 64).unwrap(), &[0.37, 0.0]).unwrap();
        let r = integer_flux_scan(&v, 1e-2, 20, 5, 2, 32).unwrap();
        assert_eq!(r.verdict, Verdict::Integral);
        assert!(r.samples.iter().all(|s| s.nearest == 0));
    }

    #[test]
    fn half_vortex_fails() {
        let v = gen_vortex_scaled(2, 64, &ChargeSet::single(&[0.0, 0.0], 1), 0.5).unwrap();
        let r = integer_flux_scan(&v, 1e-2, 50, 20, 1, 256).unwrap();
        assert_eq!(r.verdict, Verdict::NonIntegral);
        let bad: Vec<_> = r.samples.iter().filter(|s| s.deviation >= 1e-2).collect();
        assert!(!bad.is_empty() && bad.iter().all(|s| (s.deviation - 0.5).abs() < 0.05));
    }

    #[test]
    fn coarse_grid_inconclusive() {
        let v = VectorField::constant(GridSpec::new(2, 2).unwrap(), &[1.0, 0.0]).unwrap();
        let r = integer_flux_scan(&v, 1e-2, 20, 5, 2, 8).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert_eq!(r.skipped + r.samples.len(), 100);
    }

    #[test]
    fn slices() {
        let v = gen_vortex(2, 64, &ChargeSet::single(&[0.0, 0.0], 1)).unwrap();
        let r = lipschitz_slice_check(&v, &[0.0, 0.0], 10, 1e-2, 256).unwrap();
        assert!(r.samples.iter().all(|s| s.nearest == 1));
        let d = gen_divfree(3, 2, 32).unwrap();
        let r = lipschitz_slice_check(&d, &[0.1, 0.2], 8, 1e-2, 64).unwrap();
        assert!(r.samples.iter().all(|s| s.nearest == 0) && r.verdict == Verdict::Integral);
        let dip = ChargeSet::new(vec![
            Charge { pos: vec![0.1, 0.0], deg: 1 },
            Charge { pos: vec![-0.1, 0.0], deg: -1 },
        ])
        .unwrap();
        let v = gen_vortex(2, 64, &dip).unwrap();
        let r = lipschitz_slice_check(&v, &[0.1, 0.0], 12, 1e-2, 256).unwrap();
        for s in &r.samples {
            let expect = if s.edge / 2.0 < 0.2 { 1 } else { 0 };
            assert_eq!(s.nearest, expect, "edge {}", s.edge);
        }
    }

    #[test]
    fn deterministic() {
        let v = gen_vortex(2, 32, &ChargeSet::single(&[0.1, 0.0], 1)).unwrap();
        let a = integer_flux_scan(&v, 1e-2, 10, 4, 9, 64).unwrap();
        let b = integer_flux_scan(&v, 1e-2, 10, 4, 9, 64).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
