use crate::error::{Error, Result};
use crate::field::{gauss_legendre, sup_norm};
use crate::trace::BoundaryTrace;

pub const SHELL_NODES: usize = 16;

/// Largest admissible exponent n/(n-1) (infinite in one dimension).
pub fn integrability_limit(n: usize) -> f64 {
    if n <= 1 {
        f64::INFINITY
    } else {
        n as f64 / (n - 1) as f64
    }
}

pub fn check_integrable(n: usize, p: f64) -> Result<()> {
    let limit = integrability_limit(n);
    if p >= 1.0 && p < limit {
        Ok(())
    } else {
        Err(Error::NotIntegrable { p, limit })
    }
}

/// Constant C(n, p) with int_Q |V|^p <= eps C(n, p) int_{dQ} |f|^p.
pub fn bad_cube_constant(n: usize, p: f64) -> Result<f64> {
    check_integrable(n, p)?;
    let k = (n as f64 - 1.0) * (p - 1.0);
    Ok((n as f64).powf(p / 2.0) / (2.0 * (1.0 - k)))
}

/// Radial extension V(x) = (eps/2)^(n-1) f(y) (x - c)/r^n, r = |x - c|_inf,
/// y = c + (eps/2)(x - c)/r the radial projection onto the boundary.
pub fn extend_bad(f: &BoundaryTrace, x: &[f64]) -> Result<Vec<f64>> {
    let n = f.dim();
    let c = f.cube.center();
    let d: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
    let r = sup_norm(&d);
    if r == 0.0 {
        return Err(Error::Singularity);
    }
    let half = 0.5 * f.cube.side;
    let y: Vec<f64> = c.iter().zip(&d).map(|(ci, di)| ci + half * di / r).collect();
    let s = half.powi(n as i32 - 1) * f.eval(&y) / r.powi(n as i32);
    Ok(d.iter().map(|di| s * di).collect())
}

/// int_Q |V|^p, integrated exactly in r over shells and by the trace quadrature on the boundary.
pub fn bad_cube_lp(f: &BoundaryTrace, p: f64) -> Result<f64> {
    let n = f.dim();
    check_integrable(n, p)?;
    let half = 0.5 * f.cube.side;
    let k = (n as f64 - 1.0) * (p - 1.0);
    let c = f.cube.center();
    let w = f.weight();
    let mut acc = 0.0;
    for (face, pts) in f.faces.iter().zip(f.nodes()) {
        for (v, y) in face.iter().zip(pts) {
            if *v == 0.0 {
                continue;
            }
            let dist: f64 = y.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            acc += v.abs().powf(p) * dist.powf(p);
        }
    }
    Ok(acc * w * half.powf(1.0 - p) / (1.0 - k))
}

/// Shell quadrature of int_Q V·g for the radial extension, g a vector field on Q.
/// With x = c + (2r/eps)(y - c) the integrand becomes (2/eps) f(y) (y - c)·g(x) dr dH(y).
pub fn bad_cube_pairing(f: &BoundaryTrace, g: impl Fn(&[f64], &mut [f64]), radial_nodes: usize) -> f64 {
    let n = f.dim();
    let c = f.cube.center();
    let half = 0.5 * f.cube.side;
    let rq = gauss_legendre(radial_nodes, 0.0, half);
    let w = f.weight();
    let mut x = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut acc = 0.0;
    for (face, pts) in f.faces.iter().zip(f.nodes()) {
        for (v, y) in face.iter().zip(pts) {
            if *v == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for &(r, wr) in &rq {
                for k in 0..n {
                    x[k] = c[k] + r / half * (y[k] - c[k]);
                }
                g(&x, &mut gx);
                inner += wr * (0..n).map(|k| (y[k] - c[k]) * gx[k]).sum::<f64>();
            }
            acc += v * inner / half;
        }
    }
    acc * w
}
