use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dist, sup_norm, Charge, ChargeSet};

const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub mult: u64,
}

/// Integer 1-current made of oriented segments a -> b; its boundary is mult (delta_b - delta_a).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OneCurrent {
    pub segments: Vec<Segment>,
}

impl OneCurrent {
    pub fn mass(&self) -> f64 {
        self.segments.iter().map(|s| s.mult as f64 * dist(&s.a, &s.b)).sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            offset: crate::field::byte_offset(text, e.line(), e.column()),
            msg: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("current serializes")
    }
}

/// Euclidean distance to the boundary of Q_1(0).
pub fn boundary_distance(x: &[f64]) -> f64 {
    0.5 - sup_norm(x)
}

/// Nearest point of the boundary of Q_1(0).
pub fn nearest_boundary_point(x: &[f64]) -> Vec<f64> {
    let mut k = 0;
    for i in 1..x.len() {
        if x[i].abs() > x[k].abs() {
            k = i;
        }
    }
    let mut y = x.to_vec();
    y[k] = if x[k] < 0.0 { -0.5 } else { 0.5 };
    y
}

fn on_boundary(x: &[f64]) -> bool {
    sup_norm(x) >= 0.5 - BOUNDARY_EPS
}

/// Positives in input order absorb negatives in input order; a negative split between two
/// consecutive positives carries its residual over. Leftover degree goes to `boundary_point`.
pub fn greedy_connection(charges: &ChargeSet, boundary_point: Option<&[f64]>) -> Result<OneCurrent> {
    charges.validate()?;
    let total = charges.total_degree();
    if total != 0 {
        match boundary_point {
            None => return Err(Error::Unbalanced(total)),
            Some(b) if (sup_norm(b) - 0.5).abs() > BOUNDARY_EPS => {
                return Err(Error::InvalidArgument("boundary point must lie on the boundary of Q_1(0)".into()))
            }
            _ => {}
        }
    }
    let pos: Vec<&Charge> = charges.charges.iter().filter(|c| c.deg > 0).collect();
    let neg: Vec<&Charge> = charges.charges.iter().filter(|c| c.deg < 0).collect();
    let mut supply: Vec<u64> = pos.iter().map(|c| c.deg as u64).collect();
    let mut demand: Vec<u64> = neg.iter().map(|c| c.deg.unsigned_abs()).collect();
    let mut segments = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < pos.len() && j < neg.len() {
        let m = supply[i].min(demand[j]);
        segments.push(Segment { a: neg[j].pos.clone(), b: pos[i].pos.clone(), mult: m });
        supply[i] -= m;
        demand[j] -= m;
        if demand[j] == 0 {
            j += 1;
        }
        if supply[i] == 0 {
            i += 1;
        }
    }
    if let Some(b) = boundary_point {
        for (c, s) in pos.iter().zip(&supply) {
            if *s > 0 {
                segments.push(Segment { a: b.to_vec(), b: c.pos.clone(), mult: *s });
            }
        }
        for (c, d) in neg.iter().zip(&demand) {
            if *d > 0 {
                segments.push(Segment { a: c.pos.clone(), b: b.to_vec(), mult: *d });
            }
        }
    }
    Ok(OneCurrent { segments })
}

/// Signed endpoint multiset; endpoints on the boundary of Q_1(0) are dropped, coincident points merged.
pub fn boundary_of_current(current: &OneCurrent) -> ChargeSet {
    let mut pts: Vec<(Vec<f64>, i64)> = Vec::new();
    for s in &current.segments {
        for (p, sign) in [(&s.b, 1i64), (&s.a, -1i64)] {
            if !on_boundary(p) {
                pts.push((p.clone(), sign * s.mult as i64));
            }
        }
    }
    pts.sort_by(|x, y| lex_cmp(&x.0, &y.0));
    let mut charges: Vec<Charge> = Vec::new();
    for (p, d) in pts {
        match charges.last_mut() {
            Some(last) if last.pos == p => last.deg += d,
            _ => charges.push(Charge { pos: p, deg: d }),
        }
    }
    charges.retain(|c| c.deg != 0);
    ChargeSet { charges }
}

pub fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Charges sorted lexicographically by position.
pub fn canonical(charges: &ChargeSet) -> ChargeSet {
    let mut c = charges.charges.clone();
    c.sort_by(|x, y| lex_cmp(&x.pos, &y.pos));
    ChargeSet { charges: c }
}

struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

struct Flow {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl Flow {
    fn new(n: usize) -> Self {
        Flow { edges: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Successive shortest paths with Johnson potentials; costs are nonnegative initially.
    fn run(&mut self, s: usize, t: usize, need: i64) -> i64 {
        let n = self.adj.len();
        let mut pot = vec![0.0; n];
        let mut sent = 0;
        while sent < need {
            let mut d = vec![f64::INFINITY; n];
            let mut prev = vec![usize::MAX; n];
            d[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(Item(0.0, s));
            while let Some(Item(du, u)) = heap.pop() {
                if du > d[u] {
                    continue;
                }
                for &e in &self.adj[u] {
                    let edge = &self.edges[e];
                    if edge.cap <= 0 {
                        continue;
                    }
                    let nd = du + edge.cost + pot[u] - pot[edge.to];
                    let nd = nd.max(du);
                    if nd < d[edge.to] {
                        d[edge.to] = nd;
                        prev[edge.to] = e;
                        heap.push(Item(nd, edge.to));
                    }
                }
            }
            if !d[t].is_finite() {
                break;
            }
            for v in 0..n {
                if d[v].is_finite() {
                    pot[v] += d[v];
                }
            }
            let mut push = need - sent;
            let mut v = t;
            while v != s {
                let e = prev[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let e = prev[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                v = self.edges[e ^ 1].to;
            }
            sent += push;
        }
        sent
    }
}

/// Minimal-mass connection: transport from positive charges (and a boundary source) to
/// negative charges (and a boundary sink), solved as a min-cost flow.
pub fn minimal_connection(charges: &ChargeSet) -> Result<(OneCurrent, f64)> {
    charges.validate()?;
    let pos: Vec<&Charge> = charges.charges.iter().filter(|c| c.deg > 0).collect();
    let neg: Vec<&Charge> = charges.charges.iter().filter(|c| c.deg < 0).collect();
    let p_total: i64 = pos.iter().map(|c| c.deg).sum();
    let n_total: i64 = neg.iter().map(|c| -c.deg).sum();
    // nodes: s, positives, boundary source, negatives, boundary sink, t
    let np = pos.len();
    let nn = neg.len();
    let s = 0;
    let src = |i: usize| 1 + i;
    let bsrc = 1 + np;
    let snk = |j: usize| 2 + np + j;
    let bsnk = 2 + np + nn;
    let t = bsnk + 1;
    let mut g = Flow::new(t + 1);
    for (i, c) in pos.iter().enumerate() {
        g.add(s, src(i), c.deg, 0.0);
    }
    g.add(s, bsrc, n_total, 0.0);
    for (j, c) in neg.iter().enumerate() {
        g.add(snk(j), t, -c.deg, 0.0);
    }
    g.add(bsnk, t, p_total, 0.0);
    let mut pairs = Vec::new();
    for (i, a) in pos.iter().enumerate() {
        for (j, b) in neg.iter().enumerate() {
            pairs.push((g.add(src(i), snk(j), i64::MAX / 4, dist(&a.pos, &b.pos)), Some(i), Some(j)));
        }
        pairs.push((g.add(src(i), bsnk, i64::MAX / 4, boundary_distance(&a.pos)), Some(i), None));
    }
    for (j, b) in neg.iter().enumerate() {
        pairs.push((g.add(bsrc, snk(j), i64::MAX / 4, boundary_distance(&b.pos)), None, Some(j)));
    }
    g.add(bsrc, bsnk, i64::MAX / 4, 0.0);
    let need = p_total + n_total;
    let sent = g.run(s, t, need);
    debug_assert_eq!(sent, need);
    let mut segments = Vec::new();
    for (e, i, j) in pairs {
        let f = g.edges[e ^ 1].cap;
        if f <= 0 {
            continue;
        }
        let seg = match (i, j) {
            (Some(i), Some(j)) => Segment { a: neg[j].pos.clone(), b: pos[i].pos.clone(), mult: f as u64 },
            (Some(i), None) => {
                Segment { a: nearest_boundary_point(&pos[i].pos), b: pos[i].pos.clone(), mult: f as u64 }
            }
            (None, Some(j)) => {
                Segment { a: neg[j].pos.clone(), b: nearest_boundary_point(&neg[j].pos), mult: f as u64 }
            }
            (None, None) => unreachable!(),
        };
        segments.push(seg);
    }
    let current = OneCurrent { segments };
    let mass = current.mass();
    Ok((current, mass))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub grid_res: usize,
    /// Potential at the (grid_res + 1)^n nodes of Q_1(0), row-major, last axis fastest.
    pub values: Vec<f64>,
    /// Potential at each charge, in input order.
    pub at_charges: Vec<f64>,
    pub value: f64,
    /// max over grid edges of (|phi(a) - phi(b)|/h - 1), clamped at 0.
    pub feasibility_residual: f64,
}

/// Dense simplex with Bland's rule for max c·x, A x <= b, x >= 0, b >= 0.
fn simplex(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Vec<f64> {
    let m = a.len();
    let n = c.len();
    let mut tab = vec![vec![0.0; n + m + 1]; m + 1];
    for i in 0..m {
        tab[i][..n].copy_from_slice(&a[i]);
        tab[i][n + i] = 1.0;
        tab[i][n + m] = b[i];
    }
    for k in 0..n {
        tab[m][k] = -c[k];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let tol = 1e-12;
    while let Some(col) = (0..n + m).find(|&k| tab[m][k] < -tol) {
        let mut row = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if tab[i][col] > tol {
                let r = tab[i][n + m] / tab[i][col];
                if r < best - 1e-15 || (row.is_some() && (r - best).abs() <= 1e-15 && basis[i] < basis[row.unwrap()]) {
                    best = r;
                    row = Some(i);
                }
            }
        }
        let Some(r) = row else { break };
        let piv = tab[r][col];
        tab[r].iter_mut().for_each(|v| *v /= piv);
        for i in 0..=m {
            if i != r {
                let f = tab[i][col];
                if f != 0.0 {
                    for k in 0..=n + m {
                        tab[i][k] -= f * tab[r][k];
                    }
                }
            }
        }
        basis[r] = col;
    }
    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab[i][n + m];
        }
    }
    x
}

/// Maximizes sum_j d_j phi(x_j) over 1-Lipschitz phi vanishing on the boundary. The optimum
/// over charge values is found exactly by linear programming; the certificate on the grid is
/// the largest 1-Lipschitz extension, clamped by the distance to the boundary.
pub fn dual_value(charges: &ChargeSet, grid_res: usize) -> Result<DualCertificate> {
    charges.validate()?;
    if grid_res < 8 {
        return Err(Error::InvalidArgument(format!("grid_res {grid_res} must be >= 8")));
    }
    let pts: Vec<&Charge> = charges.charges.iter().collect();
    let k = pts.len();
    let bd: Vec<f64> = pts.iter().map(|c| boundary_distance(&c.pos)).collect();
    let mut at_charges = vec![0.0; k];
    if k > 0 {
        // w_j = phi_j + b_j >= 0
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let mut r = vec![0.0; k];
                    r[i] = 1.0;
                    r[j] = -1.0;
                    rows.push(r);
                    rhs.push((dist(&pts[i].pos, &pts[j].pos) + bd[i] - bd[j]).max(0.0));
                }
            }
            let mut r = vec![0.0; k];
            r[i] = 1.0;
            rows.push(r);
            rhs.push(2.0 * bd[i]);
        }
        let c: Vec<f64> = pts.iter().map(|p| p.deg as f64).collect();
        let w = simplex(&rows, &rhs, &c);
        // slight contraction keeps the certificate strictly feasible under rounding
        let shrink = 1.0 - 1e-12;
        for j in 0..k {
            at_charges[j] = shrink * (w[j] - bd[j]).clamp(-bd[j], bd[j]);
        }
    }
    let n = charges.charges.first().map_or(2, |c| c.pos.len());
    let side = grid_res + 1;
    let total = side.pow(n as u32);
    let h = 1.0 / grid_res as f64;
    let phi = |x: &[f64]| {
        let b = boundary_distance(x);
        let mut g = f64::INFINITY;
        for (c, v) in pts.iter().zip(&at_charges) {
            g = g.min(v + dist(x, &c.pos));
        }
        g.clamp(-b, b)
    };
    let mut x = vec![0.0; n];
    let values: Vec<f64> = (0..total)
        .map(|flat| {
            let mut rem = flat;
            for a in (0..n).rev() {
                x[a] = -0.5 + (rem % side) as f64 * h;
                rem /= side;
            }
            phi(&x)
        })
        .collect();
    let mut resid = 0.0f64;
    for flat in 0..total {
        let mut stride = 1;
        for _ in 0..n {
            let i = (flat / stride) % side;
            if i + 1 < side {
                let slope = (values[flat + stride] - values[flat]).abs() / h;
                resid = resid.max(slope - 1.0);
            }
            stride *= side;
        }
    }
    let value = pts.iter().zip(&at_charges).map(|(c, v)| c.deg as f64 * v).sum();
    Ok(DualCertificate { grid_res, values, at_charges, value, feasibility_residual: resid.max(0.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    pub p: Vec<f64>,
    pub n: Vec<f64>,
}

/// Unit dipoles (P_i, N_i) of a minimal connection for the boundary of `current`.
pub fn dipole_decomposition(current: &OneCurrent) -> Result<(Vec<Dipole>, f64)> {
    let charges = boundary_of_current(current);
    let (conn, mass) = minimal_connection(&charges)?;
    let mut out = Vec::new();
    for s in &conn.segments {
        for _ in 0..s.mult {
            out.push(Dipole { p: s.b.clone(), n: s.a.clone() });
        }
    }
    Ok((out, mass))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs(items: &[(&[f64], i64)]) -> ChargeSet {
        ChargeSet::new(items.iter().map(|(p, d)| Charge { pos: p.to_vec(), deg: *d }).collect()).unwrap()
    }

    #[test]
    fn greedy_hand_traces() {
        let c = greedy_connection(&cs(&[(&[0.1, 0.0], 1), (&[-0.1, 0.0], -1)]), None).unwrap();
        assert_eq!(c.segments, vec![Segment { a: vec![-0.1, 0.0], b: vec![0.1, 0.0], mult: 1 }]);
        let c = greedy_connection(&cs(&[(&[0.0, 0.0], 2), (&[0.1, 0.0], -1), (&[0.0, 0.1], -1)]), None).unwrap();
        assert_eq!(c.segments.len(), 2);
        assert!(c.segments.iter().all(|s| s.mult == 1 && s.b == vec![0.0, 0.0]));
        let b = [0.5, 0.2];
        let c = greedy_connection(&cs(&[(&[0.1, 0.0], 1)]), Some(&b)).unwrap();
        assert_eq!(c.segments, vec![Segment { a: b.to_vec(), b: vec![0.1, 0.0], mult: 1 }]);
        assert!(matches!(greedy_connection(&cs(&[(&[0.1, 0.0], 1)]), None), Err(Error::Unbalanced(1))));
    }

    #[test]
    fn minimal_examples() {
        let (_, m) = minimal_connection(&cs(&[(&[0.1, 0.0], 1), (&[-0.1, 0.0], -1)])).unwrap();
        assert!((m - 0.2).abs() < 1e-15);
        let (c, m) = minimal_connection(&cs(&[(&[0.0, 0.0], 1)])).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert_eq!(boundary_of_current(&c), cs(&[(&[0.0, 0.0], 1)]));
        let (c, m) = minimal_connection(&ChargeSet::default()).unwrap();
        assert!(c.segments.is_empty() && m == 0.0);
        // both near the boundary: cheaper through it
        let (_, m) = minimal_connection(&cs(&[(&[0.45, 0.0], 1), (&[-0.45, 0.0], -1)])).unwrap();
        assert!((m - 0.1).abs() < 1e-15);
    }

    #[test]
    fn boundary_examples() {
        let seg = OneCurrent { segments: vec![Segment { a: vec![0.5, 0.0], b: vec![0.1, 0.1], mult: 1 }] };
        assert_eq!(boundary_of_current(&seg), cs(&[(&[0.1, 0.1], 1)]));
        let two = OneCurrent {
            segments: vec![
                Segment { a: vec![0.0, 0.0], b: vec![0.1, 0.1], mult: 1 },
                Segment { a: vec![0.1, 0.1], b: vec![0.0, 0.0], mult: 1 },
            ],
        };
        assert!(boundary_of_current(&two).is_empty());
    }

    #[test]
    fn dual_examples() {
        let d = dual_value(&cs(&[(&[0.0, 0.0], 1)]), 64).unwrap();
        assert!((d.value - 0.5).abs() < 1.0 / 64.0 && d.value <= 0.5);
        assert!(d.feasibility_residual <= 1e-9);
        let d = dual_value(&cs(&[(&[0.1, 0.0], 1), (&[-0.1, 0.0], -1)]), 64).unwrap();
        assert!((d.value - 0.2).abs() < 2.0 / 64.0);
        assert_eq!(dual_value(&ChargeSet::default(), 8).unwrap().value, 0.0);
    }

    #[test]
    fn dipoles() {
        let c = OneCurrent { segments: vec![Segment { a: vec![0.0, 0.0], b: vec![0.3, 0.0], mult: 2 }] };
        let (d, m) = dipole_decomposition(&c).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0], d[1]);
        assert!((m - 0.6).abs() < 1e-15);
        let tri = OneCurrent {
            segments: vec![
                Segment { a: vec![0.0, 0.0], b: vec![0.1, 0.0], mult: 1 },
                Segment { a: vec![0.1, 0.0], b: vec![0.0, 0.1], mult: 1 },
                Segment { a: vec![0.0, 0.1], b: vec![0.0, 0.0], mult: 1 },
            ],
        };
        assert!(dipole_decomposition(&tri).unwrap().0.is_empty());
        let edge = OneCurrent { segments: vec![Segment { a: vec![0.1, 0.5], b: vec![0.1, 0.3], mult: 1 }] };
        let (d, m) = dipole_decomposition(&edge).unwrap();
        assert_eq!(d.len(), 1);
        assert!((m - 0.2).abs() < 1e-15);
    }

    #[test]
    fn json_roundtrip() {
        let c = OneCurrent { segments: vec![Segment { a: vec![0.0, 0.0], b: vec![0.3, 0.0], mult: 2 }] };
        assert_eq!(OneCurrent::from_json(&c.to_json()).unwrap(), c);
        assert!(matches!(OneCurrent::from_json("{\"segments\": [}"), Err(Error::Format { .. })));
    }
}
