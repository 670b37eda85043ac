use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::gauss_legendre;

const AVERAGE_NODES: usize = 12;

/// c + sum of values on [breakpoints[i], breakpoints[i+1]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub offset: f64,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, offset: f64) -> Result<Self> {
        let s = StepFunction { breakpoints, values, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.breakpoints;
        if b.len() != self.values.len() + 1 || b.first() != Some(&0.0) || b.last() != Some(&1.0) {
            return Err(Error::InvalidArgument("breakpoints must span [0, 1] with one value per interval".into()));
        }
        if b.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("breakpoints must be strictly increasing".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) || !self.offset.is_finite() {
            return Err(Error::InvalidArgument("values must be finite".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.breakpoints.partition_point(|b| *b <= x).saturating_sub(1).min(self.values.len() - 1);
        self.offset + self.values[i]
    }

    pub fn is_integer_valued(&self) -> bool {
        self.values.iter().all(|v| v.fract() == 0.0)
    }

    /// Pieces (a, b, value) without the offset.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints.windows(2).zip(&self.values).map(|(w, v)| (w[0], w[1], *v))
    }

    /// int_a^b (step - offset).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.pieces().map(|(lo, hi, v)| v * (hi.min(b) - lo.max(a)).max(0.0)).sum()
    }

    /// int_0^1 (step - offset) g, with g integrated by Gauss-Legendre on each piece.
    pub fn pair(&self, g: &dyn Fn(f64) -> f64) -> f64 {
        self.pieces()
            .filter(|(_, _, v)| *v != 0.0)
            .map(|(lo, hi, v)| v * gauss_legendre(AVERAGE_NODES, lo, hi).iter().map(|(x, w)| w * g(*x)).sum::<f64>())
            .sum()
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        self.pieces().map(|(lo, hi, v)| (v + self.offset).abs().powf(p) * (hi - lo)).sum::<f64>().powf(1.0 / p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("step function serializes")
    }
}

/// A function on [0, 1): either a closure or uniform cell samples (piecewise constant).
pub enum Profile<'a> {
    Fn(&'a dyn Fn(f64) -> f64),
    Samples(&'a [f64]),
}

impl Profile<'_> {
    /// int_a^b f.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Profile::Fn(f) => gauss_legendre(AVERAGE_NODES, a, b).iter().map(|(x, w)| w * f(*x)).sum(),
            Profile::Samples(s) => {
                let n = s.len() as f64;
                let i0 = ((a * n).floor() as usize).min(s.len() - 1);
                let i1 = ((b * n).ceil() as usize).min(s.len());
                (i0..i1)
                    .map(|i| {
                        let lo = (i as f64 / n).max(a);
                        let hi = ((i + 1) as f64 / n).min(b);
                        s[i] * (hi - lo).max(0.0)
                    })
                    .sum()
            }
        }
    }
}

fn circular_offset(samples: &[f64]) -> f64 {
    let (s, c) = samples
        .iter()
        .fold((0.0, 0.0), |(s, c), f| (s + (2.0 * PI * f).sin(), c + (2.0 * PI * f).cos()));
    (s.atan2(c) / (2.0 * PI)).rem_euclid(1.0)
}

/// Integer step function plus constant within L^p distance `tol` of the samples. The constant is
/// the circular mean of the fractional parts; levels above `k_trunc` are dropped.
pub fn integer_step_projection(samples: &[f64], k_trunc: i64, tol: f64, p: f64) -> Result<StepFunction> {
    if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be nonempty and finite".into()));
    }
    if !(tol > 0.0) || !(p >= 1.0) || k_trunc < 0 {
        return Err(Error::InvalidArgument(format!("tol = {tol}, p = {p}, K = {k_trunc}")));
    }
    let mut c = circular_offset(samples);
    if c < 0.01 * tol || 1.0 - c < 0.01 * tol {
        c = 0.0;
    }
    let levels: Vec<i64> = samples
        .iter()
        .map(|f| {
            let g = (f - c).round() as i64;
            if g.abs() <= k_trunc {
                g
            } else {
                0
            }
        })
        .collect();
    let n = samples.len();
    let mut breakpoints = vec![0.0];
    let mut values = Vec::new();
    for (i, g) in levels.iter().enumerate() {
        if i > 0 && levels[i - 1] == *g {
            continue;
        }
        if i > 0 {
            breakpoints.push(i as f64 / n as f64);
        }
        values.push(*g as f64);
    }
    breakpoints.push(1.0);
    let d = (samples.iter().zip(&levels).map(|(f, g)| (f - c - *g as f64).abs().powf(p)).sum::<f64>() / n as f64)
        .powf(1.0 / p);
    if d > tol {
        return Err(Error::ProjectionFailed { distance: d, tol });
    }
    StepFunction::new(breakpoints, values, c)
}

/// Integer-valued f_n with the same averages as f on every dyadic interval of length 2^-n.
pub fn weak_approx_sequence(f: &Profile, n: u32) -> Result<StepFunction> {
    if n > 40 {
        return Err(Error::InvalidArgument(format!("level {n} too fine")));
    }
    let count = 1usize << n;
    let len = 1.0 / count as f64;
    let mut breakpoints = vec![0.0];
    let mut values = Vec::new();
    for k in 0..count {
        let a = k as f64 * len;
        let b = (k + 1) as f64 * len;
        let c = f.integral(a, b) / len;
        let v = if c > 0.0 { c.ceil() } else { c.floor() };
        if c == 0.0 || !c.is_finite() {
            if !c.is_finite() {
                return Err(Error::InvalidArgument(format!("average on interval {k} is not finite")));
            }
            values.push(0.0);
            breakpoints.push(b);
            continue;
        }
        let seg = c * len / v;
        let cut = a + seg;
        if cut < b {
            values.push(v);
            breakpoints.push(cut);
            values.push(0.0);
            breakpoints.push(b);
        } else {
            values.push(v);
            breakpoints.push(b);
        }
    }
    // merge neighbors with equal values
    let mut bp = vec![0.0];
    let mut vals: Vec<f64> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        if vals.last() == Some(v) {
            *bp.last_mut().unwrap() = breakpoints[i + 1];
        } else {
            vals.push(*v);
            bp.push(breakpoints[i + 1]);
        }
    }
    StepFunction::new(bp, vals, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|i| f((i as f64 + 0.5) / n as f64)).collect()
    }

    #[test]
    fn projection_examples() {
        let s = sample(1000, |x| if x < 0.3 { 2.0 } else { 0.0 });
        let p = integer_step_projection(&s, 10, 1e-2, 2.0).unwrap();
        assert_eq!(p.offset, 0.0);
        assert_eq!(p.breakpoints, vec![0.0, 0.3, 1.0]);
        assert_eq!(p.values, vec![2.0, 0.0]);
        let s = sample(1000, |x| 0.7 + if x >= 0.5 { 1.0 } else { 0.0 });
        let p = integer_step_projection(&s, 10, 1e-2, 2.0).unwrap();
        assert!((p.offset - 0.7).abs() < 1e-12);
        assert_eq!(p.values, vec![0.0, 1.0]);
        assert_eq!(p.breakpoints, vec![0.0, 0.5, 1.0]);
        let s = sample(100, |x| 0.5 * x);
        assert!(matches!(integer_step_projection(&s, 10, 1e-2, 2.0), Err(Error::ProjectionFailed { .. })));
    }

    #[test]
    fn truncation() {
        let s = sample(100, |x| if x < 0.5 { 5.0 } else { 1.0 });
        assert!(integer_step_projection(&s, 3, 1e-2, 1.0).is_err());
        let p = integer_step_projection(&s, 5, 1e-2, 1.0).unwrap();
        assert_eq!(p.values, vec![5.0, 1.0]);
    }

    #[test]
    fn weak_half() {
        let f = |_: f64| 0.5;
        let s = weak_approx_sequence(&Profile::Fn(&f), 1).unwrap();
        assert_eq!(s.breakpoints, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s.values, vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.integral(0.0, 0.5), 0.25);
        let two = |_: f64| 2.0;
        let s = weak_approx_sequence(&Profile::Fn(&two), 3).unwrap();
        assert_eq!(s.values, vec![2.0]);
    }

    #[test]
    fn negative_and_zero_averages() {
        let f = |x: f64| if x < 0.5 { -0.3 } else { 0.0 };
        let s = weak_approx_sequence(&Profile::Fn(&f), 1).unwrap();
        assert_eq!(s.values, vec![-1.0, 0.0]);
        assert!((s.integral(0.0, 0.5) + 0.15).abs() < 1e-16);
        let samples = [0.25, 0.75, -1.5, 0.0];
        let s = weak_approx_sequence(&Profile::Samples(&samples), 2).unwrap();
        for k in 0..4 {
            let a = k as f64 / 4.0;
            assert!((s.integral(a, a + 0.25) - samples[k] / 4.0).abs() < 1e-16);
        }
    }

    #[test]
    fn weak_pairing_decreases() {
        let f = |x: f64| x;
        let g = |x: f64| x * x;
        let exact = 0.25;
        let v: Vec<f64> = [2, 4, 6]
            .iter()
            .map(|&n| (weak_approx_sequence(&Profile::Fn(&f), n).unwrap().pair(&g) - exact).abs())
            .collect();
        assert!(v[0] > v[1] && v[1] > v[2], "{v:?}");
    }
}
