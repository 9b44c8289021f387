//! kd-tree over space-time points with parabolic-distance pruning.
//!
//! Spatial dimension is a runtime parameter so the same index serves the
//! surface in R^n x R and projected points in R^{n-1} x R.

use crate::metric::{dist_p, StBox};

const LEAF: usize = 12;

struct Node {
    start: usize,
    end: usize,
    left: u32,
    right: u32,
    min_m: f64,
}

pub struct KdIndex {
    ds: usize,
    xs: Vec<f64>,
    ts: Vec<f64>,
    ids: Vec<u32>,
    ms: Vec<f64>,
    nodes: Vec<Node>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    tlo: Vec<f64>,
    thi: Vec<f64>,
}

const NONE: u32 = u32::MAX;

impl KdIndex {
    /// Build from flat spatial coordinates (`ds` per point), times, and
    /// optional additive weights used by the weighted nearest queries.
    pub fn new(ds: usize, xs: &[f64], ts: &[f64], ids: &[u32], ms: Option<&[f64]>) -> Self {
        let npts = ts.len();
        assert_eq!(xs.len(), npts * ds);
        assert_eq!(ids.len(), npts);
        let mut perm: Vec<usize> = (0..npts).collect();
        let mut idx = KdIndex {
            ds,
            xs: Vec::new(),
            ts: Vec::new(),
            ids: Vec::new(),
            ms: Vec::new(),
            nodes: Vec::new(),
            lo: Vec::new(),
            hi: Vec::new(),
            tlo: Vec::new(),
            thi: Vec::new(),
        };
        if npts > 0 {
            idx.build(&mut perm, 0, npts, xs, ts);
        }
        idx.xs = Vec::with_capacity(npts * ds);
        for &p in &perm {
            idx.xs.extend_from_slice(&xs[p * ds..(p + 1) * ds]);
        }
        idx.ts = perm.iter().map(|&p| ts[p]).collect();
        idx.ids = perm.iter().map(|&p| ids[p]).collect();
        idx.ms = match ms {
            Some(m) => perm.iter().map(|&p| m[p]).collect(),
            None => vec![0.0; npts],
        };
        if npts > 0 {
            idx.fill_min_m(0);
        }
        idx
    }

    /// Index over all points of a flat array with ids 0..n.
    pub fn from_points(ds: usize, xs: &[f64], ts: &[f64]) -> Self {
        let ids: Vec<u32> = (0..ts.len() as u32).collect();
        Self::new(ds, xs, ts, &ids, None)
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    fn build(&mut self, perm: &mut [usize], start: usize, end: usize, xs: &[f64], ts: &[f64]) -> u32 {
        let ds = self.ds;
        let me = self.nodes.len();
        self.nodes.push(Node { start, end, left: NONE, right: NONE, min_m: 0.0 });
        let mut lo = vec![f64::INFINITY; ds];
        let mut hi = vec![f64::NEG_INFINITY; ds];
        let (mut tl, mut th) = (f64::INFINITY, f64::NEG_INFINITY);
        for &p in &perm[start..end] {
            for k in 0..ds {
                let v = xs[p * ds + k];
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
            tl = tl.min(ts[p]);
            th = th.max(ts[p]);
        }
        let mut axis = ds;
        let mut ext = (th - tl).sqrt();
        for k in 0..ds {
            if hi[k] - lo[k] > ext {
                ext = hi[k] - lo[k];
                axis = k;
            }
        }
        self.lo.extend_from_slice(&lo);
        self.hi.extend_from_slice(&hi);
        self.tlo.push(tl);
        self.thi.push(th);
        if end - start > LEAF && ext > 0.0 {
            let mid = (start + end) / 2;
            let key = |p: &usize| if axis == ds { ts[*p] } else { xs[*p * ds + axis] };
            perm[start..end].select_nth_unstable_by(mid - start, |a, b| key(a).partial_cmp(&key(b)).unwrap().then(a.cmp(b)));
            let l = self.build(perm, start, mid, xs, ts);
            let r = self.build(perm, mid, end, xs, ts);
            self.nodes[me].left = l;
            self.nodes[me].right = r;
        }
        me as u32
    }

    fn fill_min_m(&mut self, node: usize) -> f64 {
        let (l, r) = (self.nodes[node].left, self.nodes[node].right);
        let m = if l == NONE {
            let (s, e) = (self.nodes[node].start, self.nodes[node].end);
            self.ms[s..e].iter().cloned().fold(f64::INFINITY, f64::min)
        } else {
            self.fill_min_m(l as usize).min(self.fill_min_m(r as usize))
        };
        self.nodes[node].min_m = m;
        m
    }

    #[inline]
    fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.ds..(i + 1) * self.ds]
    }

    #[inline]
    fn node_dist_point(&self, node: usize, x: &[f64], t: f64) -> f64 {
        let ds = self.ds;
        let mut s = 0.0;
        for k in 0..ds {
            let lo = self.lo[node * ds + k];
            let hi = self.hi[node * ds + k];
            let d = if x[k] < lo {
                lo - x[k]
            } else if x[k] > hi {
                x[k] - hi
            } else {
                0.0
            };
            s += d * d;
        }
        let (tl, th) = (self.tlo[node], self.thi[node]);
        let dt = if t < tl {
            tl - t
        } else if t > th {
            t - th
        } else {
            0.0
        };
        s.sqrt() + dt.sqrt()
    }

    #[inline]
    fn node_dist_box(&self, node: usize, b: &StBox) -> f64 {
        let ds = self.ds;
        let mut s = 0.0;
        for k in 0..ds {
            let d = (b.lo[k] - self.hi[node * ds + k]).max(self.lo[node * ds + k] - b.hi[k]).max(0.0);
            s += d * d;
        }
        let dt = (b.t_lo - self.thi[node]).max(self.tlo[node] - b.t_hi).max(0.0);
        s.sqrt() + dt.sqrt()
    }

    #[inline]
    fn node_meets_open_cube(&self, node: usize, cx: &[f64], ct: f64, r: f64) -> bool {
        let ds = self.ds;
        let r2 = r * r;
        if !(self.tlo[node] < ct + r2 && self.thi[node] > ct - r2) {
            return false;
        }
        (0..ds).all(|k| self.lo[node * ds + k] < cx[k] + r && self.hi[node * ds + k] > cx[k] - r)
    }

    /// Visit every point in the open cube C_r(center).
    pub fn for_each_in_cube<F: FnMut(u32)>(&self, cx: &[f64], ct: f64, r: f64, mut f: F) {
        if self.is_empty() {
            return;
        }
        let r2 = r * r;
        let mut stack = vec![0usize];
        while let Some(nd) = stack.pop() {
            if !self.node_meets_open_cube(nd, cx, ct, r) {
                continue;
            }
            let node = &self.nodes[nd];
            if node.left == NONE {
                for i in node.start..node.end {
                    if (self.ts[i] - ct).abs() < r2 && self.x(i).iter().zip(cx).all(|(v, c)| (v - c).abs() < r) {
                        f(self.ids[i]);
                    }
                }
            } else {
                stack.push(node.left as usize);
                stack.push(node.right as usize);
            }
        }
    }

    pub fn collect_in_cube(&self, cx: &[f64], ct: f64, r: f64) -> Vec<u32> {
        let mut v = Vec::new();
        self.for_each_in_cube(cx, ct, r, |i| v.push(i));
        v.sort_unstable();
        v
    }

    /// Visit every point with d_p < rho.
    pub fn for_each_within<F: FnMut(u32, f64)>(&self, x: &[f64], t: f64, rho: f64, mut f: F) {
        if self.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(nd) = stack.pop() {
            if self.node_dist_point(nd, x, t) >= rho {
                continue;
            }
            let node = &self.nodes[nd];
            if node.left == NONE {
                for i in node.start..node.end {
                    let d = dist_p(self.x(i), self.ts[i], x, t);
                    if d < rho {
                        f(self.ids[i], d);
                    }
                }
            } else {
                stack.push(node.left as usize);
                stack.push(node.right as usize);
            }
        }
    }

    /// Nearest point in d_p; ties go to the lower id.
    pub fn nearest(&self, x: &[f64], t: f64) -> Option<(u32, f64)> {
        self.nearest_impl(x, t, false, u32::MAX)
    }

    /// Nearest point other than `skip`.
    pub fn nearest_excluding(&self, x: &[f64], t: f64, skip: u32) -> Option<(u32, f64)> {
        self.nearest_impl(x, t, false, skip).filter(|b| b.0 != u32::MAX)
    }

    /// Minimizer of d_p(q, p) + m(p); ties go to the lower id.
    pub fn nearest_weighted(&self, x: &[f64], t: f64) -> Option<(u32, f64)> {
        self.nearest_impl(x, t, true, u32::MAX)
    }

    fn nearest_impl(&self, x: &[f64], t: f64, weighted: bool, skip: u32) -> Option<(u32, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (u32::MAX, f64::INFINITY);
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((nd, lb)) = stack.pop() {
            if lb > best.1 {
                continue;
            }
            let node = &self.nodes[nd];
            if node.left == NONE {
                for i in node.start..node.end {
                    if self.ids[i] == skip {
                        continue;
                    }
                    let mut d = dist_p(self.x(i), self.ts[i], x, t);
                    if weighted {
                        d += self.ms[i];
                    }
                    if d < best.1 || (d == best.1 && self.ids[i] < best.0) {
                        best = (self.ids[i], d);
                    }
                }
            } else {
                let (l, r) = (node.left as usize, node.right as usize);
                let mut bl = self.node_dist_point(l, x, t);
                let mut br = self.node_dist_point(r, x, t);
                if weighted {
                    bl += self.nodes[l].min_m;
                    br += self.nodes[r].min_m;
                }
                if bl < br {
                    stack.push((r, br));
                    stack.push((l, bl));
                } else {
                    stack.push((l, bl));
                    stack.push((r, br));
                }
            }
        }
        Some(best)
    }

    #[inline]
    fn node_far_node(&self, a: usize, b: usize) -> f64 {
        let ds = self.ds;
        let mut s = 0.0;
        for k in 0..ds {
            let d = (self.hi[a * ds + k] - self.lo[b * ds + k]).abs().max((self.hi[b * ds + k] - self.lo[a * ds + k]).abs());
            s += d * d;
        }
        let dt = (self.thi[a] - self.tlo[b]).abs().max((self.thi[b] - self.tlo[a]).abs());
        s.sqrt() + dt.sqrt()
    }

    /// Exact largest d_p between two indexed points (dual-tree branch and bound).
    pub fn diameter(&self) -> f64 {
        use std::collections::BinaryHeap;
        #[derive(PartialEq)]
        struct Item(f64, u32, u32);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                self.0.partial_cmp(&o.0).unwrap_or(std::cmp::Ordering::Equal)
            }
        }
        let npts = self.len();
        if npts < 2 {
            return 0.0;
        }
        // Seed with two farthest-point sweeps.
        let far_from = |i: usize| -> (usize, f64) {
            let mut b = (i, 0.0);
            for j in 0..npts {
                let d = dist_p(self.x(i), self.ts[i], self.x(j), self.ts[j]);
                if d > b.1 {
                    b = (j, d);
                }
            }
            b
        };
        let (a, _) = far_from(0);
        let (_, mut best) = far_from(a);
        let mut heap = BinaryHeap::new();
        heap.push(Item(self.node_far_node(0, 0), 0, 0));
        while let Some(Item(ub, a, b)) = heap.pop() {
            if ub <= best {
                break;
            }
            let (na, nb) = (&self.nodes[a as usize], &self.nodes[b as usize]);
            let a_leaf = na.left == NONE;
            let b_leaf = nb.left == NONE;
            if a_leaf && b_leaf {
                for i in na.start..na.end {
                    let from = if a == b { i + 1 } else { nb.start };
                    for j in from..nb.end {
                        let d = dist_p(self.x(i), self.ts[i], self.x(j), self.ts[j]);
                        if d > best {
                            best = d;
                        }
                    }
                }
                continue;
            }
            let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(3);
            if a == b {
                let (l, r) = (na.left, na.right);
                pairs.extend([(l, l), (l, r), (r, r)]);
            } else if !a_leaf && (b_leaf || na.end - na.start >= nb.end - nb.start) {
                pairs.extend([(na.left, b), (na.right, b)]);
            } else {
                pairs.extend([(a, nb.left), (a, nb.right)]);
            }
            for (p, q) in pairs {
                let u = self.node_far_node(p as usize, q as usize);
                if u > best {
                    heap.push(Item(u, p, q));
                }
            }
        }
        best
    }

    /// Exact min over indexed p of [inf_{y in box} d_p(y, p) + m(p)].
    pub fn box_weighted_min(&self, b: &StBox) -> Option<(u32, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (u32::MAX, f64::INFINITY);
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((nd, lb)) = stack.pop() {
            if lb > best.1 {
                continue;
            }
            let node = &self.nodes[nd];
            if node.left == NONE {
                for i in node.start..node.end {
                    let d = b.dist_to_point(self.x(i), self.ts[i]) + self.ms[i];
                    if d < best.1 || (d == best.1 && self.ids[i] < best.0) {
                        best = (self.ids[i], d);
                    }
                }
            } else {
                let (l, r) = (node.left as usize, node.right as usize);
                let bl = self.node_dist_box(l, b) + self.nodes[l].min_m;
                let br = self.node_dist_box(r, b) + self.nodes[r].min_m;
                if bl < br {
                    stack.push((r, br));
                    stack.push((l, bl));
                } else {
                    stack.push((l, bl));
                    stack.push((r, br));
                }
            }
        }
        Some(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>()).collect();
        let ts: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let ms: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 0.3).collect();
        (xs, ts, ms)
    }

    #[test]
    fn queries_match_linear_scan() {
        let n = 500;
        let (xs, ts, ms) = cloud(n, 3);
        let ids: Vec<u32> = (0..n as u32).collect();
        let idx = KdIndex::new(2, &xs, &ts, &ids, Some(&ms));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let q = [rng.gen::<f64>(), rng.gen::<f64>()];
            let qt = rng.gen::<f64>();
            let (mut bi, mut bd) = (0u32, f64::INFINITY);
            let (mut wi, mut wd) = (0u32, f64::INFINITY);
            for i in 0..n {
                let d = dist_p(&xs[2 * i..2 * i + 2], ts[i], &q, qt);
                if d < bd {
                    bd = d;
                    bi = i as u32;
                }
                if d + ms[i] < wd {
                    wd = d + ms[i];
                    wi = i as u32;
                }
            }
            assert_eq!(idx.nearest(&q, qt).unwrap(), (bi, bd));
            assert_eq!(idx.nearest_weighted(&q, qt).unwrap(), (wi, wd));
            let r = 0.2;
            let got = idx.collect_in_cube(&q, qt, r);
            let want: Vec<u32> = (0..n).filter(|&i| crate::metric::in_cube(&q, qt, r, &xs[2 * i..2 * i + 2], ts[i])).map(|i| i as u32).collect();
            assert_eq!(got, want);
            let b = StBox::cube(&q, qt, 0.05);
            let mut bw = f64::INFINITY;
            for i in 0..n {
                bw = bw.min(b.dist_to_point(&xs[2 * i..2 * i + 2], ts[i]) + ms[i]);
            }
            assert_eq!(idx.box_weighted_min(&b).unwrap().1, bw);
        }
    }
}
