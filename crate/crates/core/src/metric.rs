//! Parabolic distance, cubes and boxes on R^{n} x R.

use serde::{Deserialize, Serialize};

/// A point (X, t) with X in R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StPoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl StPoint {
    pub fn new(x: Vec<f64>, t: f64) -> Self {
        StPoint { x, t }
    }
}

#[inline]
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (u, v) in a.iter().zip(b) {
        let d = u - v;
        s += d * d;
    }
    s.sqrt()
}

/// d_p((X,t),(Y,s)) = |X - Y| + |t - s|^{1/2}.
#[inline]
pub fn dist_p(ax: &[f64], at: f64, bx: &[f64], bt: f64) -> f64 {
    euclid(ax, bx) + (at - bt).abs().sqrt()
}

pub fn dist_pts(a: &StPoint, b: &StPoint) -> f64 {
    dist_p(&a.x, a.t, &b.x, b.t)
}

/// `dist_pts` with a dimension check.
pub fn try_dist_pts(a: &StPoint, b: &StPoint) -> crate::Result<f64> {
    if a.x.len() != b.x.len() {
        return Err(crate::Error::Input(format!("dimension mismatch: {} vs {}", a.x.len(), b.x.len())));
    }
    if !(a.t.is_finite() && b.t.is_finite() && a.x.iter().chain(&b.x).all(|v| v.is_finite())) {
        return Err(crate::Error::Input("non-finite coordinate".into()));
    }
    Ok(dist_pts(a, b))
}

/// Membership in the open cube C_r(center): |x_i - c_i| < r, |t - c_t| < r^2.
#[inline]
pub fn in_cube(cx: &[f64], ct: f64, r: f64, x: &[f64], t: f64) -> bool {
    (t - ct).abs() < r * r && cx.iter().zip(x).all(|(c, v)| (v - c).abs() < r)
}

/// Axis-aligned box in space-time, closed.
#[derive(Debug, Clone, PartialEq)]
pub struct StBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl StBox {
    pub fn empty(dim: usize) -> Self {
        StBox { lo: vec![f64::INFINITY; dim], hi: vec![f64::NEG_INFINITY; dim], t_lo: f64::INFINITY, t_hi: f64::NEG_INFINITY }
    }

    /// Closure of the cube C_r(center).
    pub fn cube(cx: &[f64], ct: f64, r: f64) -> Self {
        StBox { lo: cx.iter().map(|c| c - r).collect(), hi: cx.iter().map(|c| c + r).collect(), t_lo: ct - r * r, t_hi: ct + r * r }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extend(&mut self, x: &[f64], t: f64) {
        for (i, v) in x.iter().enumerate() {
            self.lo[i] = self.lo[i].min(*v);
            self.hi[i] = self.hi[i].max(*v);
        }
        self.t_lo = self.t_lo.min(t);
        self.t_hi = self.t_hi.max(t);
    }

    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        t >= self.t_lo && t <= self.t_hi && x.iter().enumerate().all(|(i, v)| *v >= self.lo[i] && *v <= self.hi[i])
    }

    /// Exact inf of d_p over the box to a point.
    pub fn dist_to_point(&self, x: &[f64], t: f64) -> f64 {
        let mut s = 0.0;
        for (i, v) in x.iter().enumerate() {
            let d = if *v < self.lo[i] {
                self.lo[i] - v
            } else if *v > self.hi[i] {
                v - self.hi[i]
            } else {
                0.0
            };
            s += d * d;
        }
        let dt = if t < self.t_lo {
            self.t_lo - t
        } else if t > self.t_hi {
            t - self.t_hi
        } else {
            0.0
        };
        s.sqrt() + dt.sqrt()
    }

    /// Sup of d_p over the box to a point.
    pub fn far_to_point(&self, x: &[f64], t: f64) -> f64 {
        let mut s = 0.0;
        for (i, v) in x.iter().enumerate() {
            let d = (v - self.lo[i]).abs().max((self.hi[i] - v).abs());
            s += d * d;
        }
        let dt = (t - self.t_lo).abs().max((self.t_hi - t).abs());
        s.sqrt() + dt.sqrt()
    }

    /// Exact inf of d_p between points of two boxes.
    pub fn dist_to_box(&self, o: &StBox) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            let d = (o.lo[i] - self.hi[i]).max(self.lo[i] - o.hi[i]).max(0.0);
            s += d * d;
        }
        let dt = (o.t_lo - self.t_hi).max(self.t_lo - o.t_hi).max(0.0);
        s.sqrt() + dt.sqrt()
    }

    /// True when the box meets the open cube C_r(center).
    pub fn meets_open_cube(&self, cx: &[f64], ct: f64, r: f64) -> bool {
        let r2 = r * r;
        self.t_lo < ct + r2 && self.t_hi > ct - r2 && (0..self.dim()).all(|i| self.lo[i] < cx[i] + r && self.hi[i] > cx[i] - r)
    }

    pub fn diam(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            let d = self.hi[i] - self.lo[i];
            s += d * d;
        }
        s.sqrt() + (self.t_hi - self.t_lo).max(0.0).sqrt()
    }
}

/// Exact parabolic diameter of an indexed point set.
pub fn parabolic_diameter<'a, F>(ids: &[u32], get: F) -> f64
where
    F: Fn(u32) -> (&'a [f64], f64),
{
    if ids.len() < 2 {
        return 0.0;
    }
    if ids.len() <= 48 {
        let mut best = 0.0f64;
        for (a, &i) in ids.iter().enumerate() {
            let (xi, ti) = get(i);
            for &j in &ids[a + 1..] {
                let (xj, tj) = get(j);
                best = best.max(dist_p(xi, ti, xj, tj));
            }
        }
        return best;
    }
    let dim = get(ids[0]).0.len();
    let mut xs = Vec::with_capacity(ids.len() * dim);
    let mut ts = Vec::with_capacity(ids.len());
    for &i in ids {
        let (x, t) = get(i);
        xs.extend_from_slice(x);
        ts.push(t);
    }
    crate::index::KdIndex::new(dim, &xs, &ts, ids, None).diameter()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_basics() {
        assert_eq!(dist_p(&[0.0, 0.0], 0.0, &[3.0, 4.0], 4.0), 7.0);
        assert!(in_cube(&[0.0], 0.0, 1.0, &[0.5], 0.99));
        assert!(!in_cube(&[0.0], 0.0, 1.0, &[0.5], 1.0));
    }

    #[test]
    fn box_distance_is_inf() {
        let b = StBox { lo: vec![0.0], hi: vec![1.0], t_lo: 0.0, t_hi: 1.0 };
        assert_eq!(b.dist_to_point(&[2.0], 5.0), 1.0 + 2.0);
        assert_eq!(b.dist_to_point(&[0.5], 0.5), 0.0);
    }

    #[test]
    fn diameter_matches_brute_force() {
        let pts: Vec<(Vec<f64>, f64)> = (0..60)
            .map(|i| {
                let a = i as f64 * 0.37;
                (vec![a.sin(), (1.7 * a).cos()], (0.3 * a).sin() * 0.5)
            })
            .collect();
        let ids: Vec<u32> = (0..60).collect();
        let d = parabolic_diameter(&ids, |i| (&pts[i as usize].0[..], pts[i as usize].1));
        let mut bf = 0.0f64;
        for a in &pts {
            for b in &pts {
                bf = bf.max(dist_p(&a.0, a.1, &b.0, b.1));
            }
        }
        assert_eq!(d, bf);
    }
}
