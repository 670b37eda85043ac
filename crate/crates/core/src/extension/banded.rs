use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    b: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// `entry(i, j)` must return A[i][j] for i - b <= j <= i.
    pub fn factor(n: usize, b: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = b + 1;
        let mut l = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (b + j - i);
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(b));
                let mut s = entry(i, j);
                for k in k0..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::InvalidArgument(format!("matrix not positive definite at row {i}")));
                    }
                    l[at(i, i)] = s.sqrt();
                } else {
                    l[at(i, j)] = s / l[at(j, j)];
                }
            }
        }
        Ok(BandCholesky { n, b, l })
    }

    pub fn solve(&self, rhs: &mut [f64]) {
        let (n, b) = (self.n, self.b);
        let w = b + 1;
        let at = |i: usize, j: usize| i * w + (b + j - i);
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(b)..i {
                s -= self.l[at(i, k)] * rhs[k];
            }
            rhs[i] = s / self.l[at(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in i + 1..(i + b + 1).min(n) {
                s -= self.l[at(k, i)] * rhs[k];
            }
            rhs[i] = s / self.l[at(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal() {
        let n = 6;
        let a = |i: usize, j: usize| if i == j { 4.0 } else if i == j + 1 { -1.0 } else { 0.0 };
        let f = BandCholesky::factor(n, 1, a).unwrap();
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = 4.0 * x[i];
                if i > 0 {
                    s -= x[i - 1];
                }
                if i + 1 < n {
                    s -= x[i + 1];
                }
                s
            })
            .collect();
        f.solve(&mut rhs);
        for i in 0..n {
            assert!((rhs[i] - x[i]).abs() < 1e-13);
        }
        assert!(BandCholesky::factor(2, 1, |i, j| if i == j { -1.0 } else { 0.0 }).is_err());
    }
}
