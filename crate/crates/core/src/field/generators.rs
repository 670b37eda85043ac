use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::charges::ChargeSet;
use super::grid::GridSpec;
use super::vector::{Callback, VectorField};
use crate::error::{Error, Result};

const NUDGE: f64 = 1e-9;

/// n * alpha(n), the surface area of the unit sphere.
fn sphere_area(n: usize) -> f64 {
    match n {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unreachable!(),
    }
}

/// Moves charges that sit on a grid center by 1e-9 along every axis.
fn nudged(grid: GridSpec, charges: &ChargeSet) -> Vec<(Vec<f64>, f64)> {
    let h = grid.h();
    charges
        .charges
        .iter()
        .map(|c| {
            let on_center = c.pos.iter().all(|&x| {
                let t = (x + 0.5) / h - 0.5;
                (t - t.round()).abs() * h < 1e-12
            });
            let pos = if on_center { c.pos.iter().map(|x| x + NUDGE).collect() } else { c.pos.clone() };
            (pos, c.deg as f64)
        })
        .collect()
}

pub fn gen_vortex(dim: usize, cells_per_axis: usize, charges: &ChargeSet) -> Result<VectorField> {
    gen_vortex_scaled(dim, cells_per_axis, charges, 1.0)
}

/// Superposition of fundamental solutions with every degree multiplied by `strength`.
pub fn gen_vortex_scaled(dim: usize, cells_per_axis: usize, charges: &ChargeSet, strength: f64) -> Result<VectorField> {
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidArgument(format!("vortex generator needs n in {{2,3}}, got {dim}")));
    }
    charges.validate()?;
    if charges.charges.iter().any(|c| c.pos.len() != dim) {
        return Err(Error::InvalidArgument("charge dimension mismatch".into()));
    }
    let grid = GridSpec::new(dim, cells_per_axis)?;
    let pts = nudged(grid, charges);
    let area = sphere_area(dim);
    let cb: Callback = Arc::new(move |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (a, d) in &pts {
            let mut r2 = 0.0;
            for k in 0..x.len() {
                r2 += (x[k] - a[k]) * (x[k] - a[k]);
            }
            if r2 == 0.0 {
                continue;
            }
            let s = strength * d / (area * r2.powf(x.len() as f64 / 2.0));
            for k in 0..x.len() {
                out[k] += s * (x[k] - a[k]);
            }
        }
    });
    VectorField::from_fn(grid, cb)
}

/// (1/2pi) u ^ grad-perp u for u(z) = prod ((z - a_j)/|z - a_j|)^(s_j), n = 2.
pub fn gen_circle_map_current(cells_per_axis: usize, charges: &ChargeSet) -> Result<VectorField> {
    charges.validate()?;
    if charges.charges.iter().any(|c| c.pos.len() != 2) {
        return Err(Error::InvalidArgument("circle-map current is two-dimensional".into()));
    }
    let grid = GridSpec::new(2, cells_per_axis)?;
    let pts = nudged(grid, charges);
    let cb: Callback = Arc::new(move |x: &[f64], out: &mut [f64]| {
        // u and its partials as complex numbers (re, im)
        let mut u = (1.0, 0.0);
        let mut lx = (0.0, 0.0);
        let mut ly = (0.0, 0.0);
        for (a, s) in &pts {
            let (dx, dy) = (x[0] - a[0], x[1] - a[1]);
            let r2 = dx * dx + dy * dy;
            if r2 == 0.0 {
                continue;
            }
            let r = r2.sqrt();
            let w = (dx / r, dy / r);
            let wp = if *s > 0.0 { w } else { (w.0, -w.1) };
            for _ in 0..(s.abs() as i64) {
                u = (u.0 * wp.0 - u.1 * wp.1, u.0 * wp.1 + u.1 * wp.0);
            }
            // d/dx log w = 1/(z-a) - dx/r^2, d/dy log w = i/(z-a) - dy/r^2
            let inv = (dx / r2, -dy / r2);
            lx = (lx.0 + s * (inv.0 - dx / r2), lx.1 + s * inv.1);
            ly = (ly.0 + s * (-inv.1 - dy / r2), ly.1 + s * inv.0);
        }
        let ux = (u.0 * lx.0 - u.1 * lx.1, u.0 * lx.1 + u.1 * lx.0);
        let uy = (u.0 * ly.0 - u.1 * ly.1, u.0 * ly.1 + u.1 * ly.0);
        // u ^ v = Im(conj(u) v)
        let wedge = |v: (f64, f64)| u.0 * v.1 - u.1 * v.0;
        out[0] = wedge(uy) / (2.0 * PI);
        out[1] = -wedge(ux) / (2.0 * PI);
    });
    VectorField::from_fn(grid, cb)
}

#[derive(Debug, Clone)]
struct Potential {
    i: usize,
    j: usize,
    g: [(f64, f64); 3],
    h: [(f64, f64); 3],
    c: [[f64; 3]; 3],
}

fn trig_derivative(series: &[(f64, f64); 3], t: f64) -> f64 {
    series
        .iter()
        .enumerate()
        .map(|(k, &(amp, phase))| {
            let w = 2.0 * PI * (k + 1) as f64;
            amp * w * (w * t + phase).cos()
        })
        .sum()
}

/// Divergence-free field V = sum_{i<j} (d_j psi e_i - d_i psi e_j) with
/// psi(x_i, x_j) = g(x_i) + h(x_j) + biquadratic(x_i, x_j).
pub fn gen_divfree(seed: u64, dim: usize, cells_per_axis: usize) -> Result<VectorField> {
    let grid = GridSpec::new(dim, cells_per_axis)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if dim == 1 {
        let c = rng.gen_range(-1.0..1.0);
        return VectorField::constant(grid, &[c]);
    }
    let mut pots = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            let mut series = || {
                let mut s = [(0.0, 0.0); 3];
                for (k, e) in s.iter_mut().enumerate() {
                    let w = 2.0 * PI * (k + 1) as f64;
                    *e = (rng.gen_range(-1.0..1.0) / w, rng.gen_range(0.0..2.0 * PI));
                }
                s
            };
            let g = series();
            let h = series();
            let mut c = [[0.0; 3]; 3];
            for row in c.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            pots.push(Potential { i, j, g, h, c });
        }
    }
    let cb: Callback = Arc::new(move |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for p in &pots {
            let (a, b) = (x[p.i], x[p.j]);
            let pa = [1.0, a, a * a];
            let pb = [1.0, b, b * b];
            let mut d_i = trig_derivative(&p.g, a);
            let mut d_j = trig_derivative(&p.h, b);
            for s in 0..3 {
                for t in 0..3 {
                    if s > 0 {
                        d_i += p.c[s][t] * s as f64 * pa[s - 1] * pb[t];
                    }
                    if t > 0 {
                        d_j += p.c[s][t] * t as f64 * pa[s] * pb[t - 1];
                    }
                }
            }
            out[p.i] += d_j;
            out[p.j] -= d_i;
        }
    });
    VectorField::from_fn(grid, cb)
}
