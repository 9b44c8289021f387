//! t-independent planes {(X, t) : <X, nu> = c} and their fits.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A plane containing the t-direction, given by a unit spatial normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TPlane {
    pub normal: Vec<f64>,
    pub offset: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

impl TPlane {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        let norm = dot(&normal, &normal).sqrt();
        let mut p = TPlane { normal: normal.iter().map(|v| v / norm).collect(), offset: offset / norm };
        p.canonicalize();
        p
    }

    /// Plane of the graph X_n = slope . y + offset.
    pub fn from_graph_slope(n: usize, slope: &[f64], offset: f64) -> Self {
        let mut nu: Vec<f64> = slope.iter().map(|s| -s).collect();
        nu.resize(n - 1, 0.0);
        nu.push(1.0);
        TPlane::new(nu, offset)
    }

    /// Fix the sign so the largest-magnitude component of the normal is positive.
    fn canonicalize(&mut self) {
        let mut k = 0;
        for i in 0..self.normal.len() {
            if self.normal[i].abs() > self.normal[k].abs() + 1e-12 {
                k = i;
            }
        }
        if self.normal[k] < 0.0 {
            for v in self.normal.iter_mut() {
                *v = -*v;
            }
            self.offset = -self.offset;
        }
    }

    pub fn n(&self) -> usize {
        self.normal.len()
    }

    #[inline]
    pub fn signed(&self, x: &[f64]) -> f64 {
        dot(x, &self.normal) - self.offset
    }

    /// d_p distance from (X, t) to the plane; the time coordinate is free.
    #[inline]
    pub fn dist(&self, x: &[f64]) -> f64 {
        self.signed(x).abs()
    }

    /// Orthogonal projection of a spatial point onto the plane.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let s = self.signed(x);
        x.iter().zip(&self.normal).map(|(v, nu)| v - s * nu).collect()
    }

    /// Angle between the planes, in [0, pi/2].
    pub fn angle_to(&self, o: &TPlane) -> f64 {
        dot(&self.normal, &o.normal).abs().min(1.0).acos()
    }
}

/// Weighted point set view: flat coordinates with `n` per point.
#[derive(Debug, Clone, Copy)]
pub struct Pts<'a> {
    pub n: usize,
    pub xs: &'a [f64],
    pub ws: &'a [f64],
}

impl<'a> Pts<'a> {
    pub fn len(&self) -> usize {
        self.ws.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ws.is_empty()
    }
    #[inline]
    pub fn x(&self, i: usize) -> &'a [f64] {
        &self.xs[i * self.n..(i + 1) * self.n]
    }
}

/// Weighted mean and covariance of the spatial coordinates.
pub fn weighted_covariance(p: Pts) -> (Vec<f64>, DMatrix<f64>, f64) {
    let n = p.n;
    let wsum: f64 = p.ws.iter().sum();
    let mut mean = vec![0.0; n];
    for i in 0..p.len() {
        for k in 0..n {
            mean[k] += p.ws[i] * p.x(i)[k];
        }
    }
    for m in mean.iter_mut() {
        *m /= wsum;
    }
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..p.len() {
        let x = p.x(i);
        for a in 0..n {
            let da = x[a] - mean[a];
            for b in a..n {
                cov[(a, b)] += p.ws[i] * da * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..n {
        for b in a..n {
            cov[(a, b)] /= wsum;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mean, cov, wsum)
}

/// Weighted least-squares t-plane; returns the plane and the rms residual.
///
/// The residual squared equals the smallest eigenvalue of the weighted
/// spatial covariance.
pub fn fit_t_plane_l2(p: Pts) -> Result<(TPlane, f64)> {
    let n = p.n;
    let wsum: f64 = p.ws.iter().sum();
    if p.is_empty() || wsum <= 0.0 {
        return Err(Error::DegenerateFit("no weighted points".into()));
    }
    let (mean, cov, _) = weighted_covariance(p);
    if n == 1 {
        let var = cov[(0, 0)].max(0.0);
        return Ok((TPlane::new(vec![1.0], mean[0]), var.sqrt()));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let scale = cov.trace().abs().max(1e-300);
    let second = eig.eigenvalues[order[1]];
    if second <= 1e-12 * scale || scale <= 1e-300 {
        let null: Vec<Vec<f64>> =
            order.iter().filter(|&&k| eig.eigenvalues[k] <= 1e-12 * scale).map(|&k| eig.eigenvectors.column(k).iter().cloned().collect()).collect();
        return Err(Error::DegenerateFit(format!("spatial covariance has rank < n-1; null directions {null:?}")));
    }
    let k = order[0];
    let nu: Vec<f64> = eig.eigenvectors.column(k).iter().cloned().collect();
    let c = dot(&nu, &mean);
    let lam = eig.eigenvalues[k].max(0.0);
    Ok((TPlane::new(nu, c), lam.sqrt()))
}

/// Half the width of the projections onto `nu`: (sup residual, midpoint).
fn width_along(p: Pts, idx: &[usize], nu: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in idx {
        let v = dot(p.x(i), nu);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (0.5 * (hi - lo), 0.5 * (hi + lo))
}

/// Indices of the spatial convex hull vertices (n = 2).
fn hull_2d(p: Pts) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| {
        let (xa, xb) = (p.x(a), p.x(b));
        xa[0].partial_cmp(&xb[0]).unwrap().then(xa[1].partial_cmp(&xb[1]).unwrap())
    });
    idx.dedup_by(|a, b| p.x(*a) == p.x(*b));
    if idx.len() < 3 {
        return idx;
    }
    let cross = |o: usize, a: usize, b: usize| {
        let (o, a, b) = (p.x(o), p.x(a), p.x(b));
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut h: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for &i in &idx {
        while h.len() >= 2 && cross(h[h.len() - 2], h[h.len() - 1], i) <= 0.0 {
            h.pop();
        }
        h.push(i);
    }
    let lower = h.len() + 1;
    for &i in idx.iter().rev().skip(1) {
        while h.len() >= lower && cross(h[h.len() - 2], h[h.len() - 1], i) <= 0.0 {
            h.pop();
        }
        h.push(i);
    }
    h.pop();
    h
}

fn rotate_towards(nu: &[f64], e: &[f64], angle: f64) -> Vec<f64> {
    // Rotate nu in the plane spanned by nu and the unit vector e (orthogonal to nu).
    let (s, c) = angle.sin_cos();
    let mut v: Vec<f64> = nu.iter().zip(e).map(|(a, b)| c * a + s * b).collect();
    let norm = dot(&v, &v).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

/// Orthonormal completion of `nu`: n-1 unit vectors orthogonal to it.
pub fn tangent_basis(nu: &[f64]) -> Vec<Vec<f64>> {
    let n = nu.len();
    let mut basis: Vec<Vec<f64>> = vec![nu.to_vec()];
    for k in 0..n {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for b in &basis {
            let d = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            basis.push(v);
        }
        if basis.len() == n {
            break;
        }
    }
    basis.remove(0);
    basis
}

/// Coordinate search over unit normals minimizing `cost`, seeded at `seed`.
///
/// Steps rotate the normal towards each tangent direction; the step halves
/// when no move improves and the search ends when the step is below 1e-7 rad
/// or an accepted move improves the cost by less than `tol`.
pub fn normal_search<F: FnMut(&[f64]) -> f64>(seed: &[f64], step0: f64, tol: f64, max_evals: usize, mut cost: F) -> (Vec<f64>, f64) {
    let mut nu = seed.to_vec();
    let mut best = cost(&nu);
    let mut step = step0;
    let mut evals = 1;
    while step > 1e-7 && evals < max_evals {
        let mut moved = false;
        for e in tangent_basis(&nu) {
            for sgn in [1.0, -1.0] {
                let cand = rotate_towards(&nu, &e, sgn * step);
                let v = cost(&cand);
                evals += 1;
                if v < best {
                    let gain = best - v;
                    best = v;
                    nu = cand;
                    moved = true;
                    if gain < tol {
                        return (nu, best);
                    }
                    break;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (nu, best)
}

/// Chebyshev (sup-norm) t-plane: minimizes the largest point-to-plane
/// distance. Returns the plane and the sup residual.
///
/// Seeded at the least-squares normal, refined by coordinate search. For
/// n = 1 the answer is exact; for n = 2 only spatial hull vertices matter
/// and every hull edge normal is tried as an extra seed.
pub fn fit_t_plane_sup(p: Pts, scale: f64) -> Result<(TPlane, f64)> {
    if p.is_empty() {
        return Err(Error::DegenerateFit("no points".into()));
    }
    if p.n == 1 {
        let all: Vec<usize> = (0..p.len()).collect();
        let (w, m) = width_along(p, &all, &[1.0]);
        return Ok((TPlane::new(vec![1.0], m), w));
    }
    let seed = match fit_t_plane_l2(p) {
        Ok((pl, _)) => pl.normal,
        Err(e) => return Err(e),
    };
    let idx: Vec<usize> = if p.n == 2 { hull_2d(p) } else { (0..p.len()).collect() };
    let mut seeds = vec![seed];
    if p.n == 2 && idx.len() >= 2 {
        for k in 0..idx.len() {
            let a = p.x(idx[k]);
            let b = p.x(idx[(k + 1) % idx.len()]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let l = (dx * dx + dy * dy).sqrt();
            if l > 0.0 {
                seeds.push(vec![-dy / l, dx / l]);
            }
        }
    }
    let mut start = seeds[0].clone();
    let mut start_w = width_along(p, &idx, &start).0;
    for s in &seeds[1..] {
        let w = width_along(p, &idx, s).0;
        if w < start_w {
            start_w = w;
            start = s.clone();
        }
    }
    let tol = 1e-6 * scale;
    let (nu, _) = normal_search(&start, 0.05, tol, 20_000, |nu| width_along(p, &idx, nu).0);
    let (w, m) = width_along(p, &idx, &nu);
    Ok((TPlane::new(nu, m), w))
}

/// Dense set of unit normals for brute-force oracles (n = 1, 2, 3).
pub fn normal_grid(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci points on the upper hemisphere.
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = golden * k as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Brute-force sup fit over a dense normal grid.
pub fn fit_t_plane_sup_bruteforce(p: Pts, count: usize) -> (TPlane, f64) {
    let all: Vec<usize> = (0..p.len()).collect();
    let mut best = (vec![1.0; 1], f64::INFINITY, 0.0);
    for nu in normal_grid(p.n, count) {
        let (w, m) = width_along(p, &all, &nu);
        if w < best.1 {
            best = (nu, w, m);
        }
    }
    (TPlane::new(best.0, best.2), best.1)
}

/// Brute-force least-squares fit over a dense normal grid; rms residual.
pub fn fit_t_plane_l2_bruteforce(p: Pts, count: usize) -> (TPlane, f64) {
    let wsum: f64 = p.ws.iter().sum();
    let mut best = (vec![1.0; 1], f64::INFINITY, 0.0);
    for nu in normal_grid(p.n, count) {
        let mut m = 0.0;
        for i in 0..p.len() {
            m += p.ws[i] * dot(p.x(i), &nu);
        }
        m /= wsum;
        let mut s = 0.0;
        for i in 0..p.len() {
            let d = dot(p.x(i), &nu) - m;
            s += p.ws[i] * d * d;
        }
        let rms = (s / wsum).sqrt();
        if rms < best.1 {
            best = (nu, rms, m);
        }
    }
    (TPlane::new(best.0, best.2), best.1)
}
