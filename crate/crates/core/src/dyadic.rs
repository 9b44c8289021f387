//! Christ-type dyadic cubes on a sampled surface.
//!
//! Generation k uses a maximal (2^{-k} scale0)-separated net; nets are
//! nested, every point is assigned to its nearest finest-generation center
//! (ties to the lower index), and each center is attached to the nearest
//! center of the previous generation. Cubes are therefore exact partitions
//! at every generation and nest by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::KdIndex;
use crate::metric::StPoint;
use crate::surface::Surface;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub id: u32,
    pub k: u32,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    /// Index of the sample point used as the center.
    pub center: u32,
    /// Nominal size 2^{-k} scale0.
    pub ell: f64,
    /// Exact parabolic diameter of the member set.
    pub diam: f64,
    pub sigma: f64,
    pub members_offset: u32,
    pub members_len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeOptions {
    /// Stop refining when the generation size would drop below this multiple of the spacing.
    pub resolution_factor: f64,
    pub max_depth: Option<u32>,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions { resolution_factor: 20.0, max_depth: None }
    }
}

#[derive(Debug, Clone)]
pub struct DyadicTree {
    pub n: usize,
    pub spacing: f64,
    pub scale0: f64,
    pub cubes: Vec<Cube>,
    /// Member permutation; cube members are `order[offset .. offset + len]`.
    pub order: Vec<u32>,
    /// Cube ids per generation.
    pub generations: Vec<Vec<u32>>,
    /// Finest cube containing each point.
    pub leaf_of: Vec<u32>,
    pub roots: Vec<u32>,
}

/// Maximal separated net over all points, extending `base` in index order.
fn extend_net(s: &Surface, base: &[u32], sep: f64) -> Vec<u32> {
    let mut covered = vec![false; s.len()];
    let idx = s.index();
    let mut net = Vec::with_capacity(base.len() * 4);
    let mark = |c: u32, covered: &mut Vec<bool>| {
        idx.for_each_within(s.x(c as usize), s.ts[c as usize], sep, |j, _| covered[j as usize] = true);
    };
    for &c in base {
        net.push(c);
        mark(c, &mut covered);
    }
    for i in 0..s.len() {
        if !covered[i] {
            net.push(i as u32);
            mark(i as u32, &mut covered);
        }
    }
    net
}

fn sub_index(s: &Surface, ids: &[u32]) -> KdIndex {
    let mut xs = Vec::with_capacity(ids.len() * s.n);
    let mut ts = Vec::with_capacity(ids.len());
    for &i in ids {
        xs.extend_from_slice(s.x(i as usize));
        ts.push(s.ts[i as usize]);
    }
    KdIndex::new(s.n, &xs, &ts, ids, None)
}

impl DyadicTree {
    pub fn build(s: &Surface, opts: TreeOptions) -> Result<DyadicTree> {
        if s.is_empty() {
            return Err(Error::Input("empty surface".into()));
        }
        let diam = s.diam();
        let base = if diam > 0.0 { diam } else { s.spacing };
        let scale0 = 2f64.powi(base.log2().ceil() as i32);
        let floor = opts.resolution_factor * s.spacing;
        let mut depth = 0u32;
        while scale0 * 2f64.powi(-(depth as i32 + 1)) >= floor {
            depth += 1;
        }
        if let Some(m) = opts.max_depth {
            depth = depth.min(m);
        }
        // Nested nets.
        let mut nets: Vec<Vec<u32>> = Vec::new();
        let mut prev: Vec<u32> = Vec::new();
        for k in 0..=depth {
            let sep = scale0 * 2f64.powi(-(k as i32));
            // scale0 >= diam, so one center covers everything; the strict
            // separation test would split off the far end when diam == scale0.
            let net = if k == 0 { vec![0] } else { extend_net(s, &prev, sep) };
            prev = net.clone();
            nets.push(net);
        }
        // Parent center of every center.
        let mut parent_center: Vec<std::collections::HashMap<u32, u32>> = vec![Default::default(); nets.len()];
        for k in 1..nets.len() {
            let idx = sub_index(s, &nets[k - 1]);
            for &z in &nets[k] {
                let (p, _) = idx.nearest(s.x(z as usize), s.ts[z as usize]).unwrap();
                parent_center[k].insert(z, p);
            }
        }
        // Finest assignment.
        let finest = nets.len() - 1;
        let fidx = sub_index(s, &nets[finest]);
        let assign: Vec<u32> = (0..s.len()).map(|i| fidx.nearest(s.x(i), s.ts[i]).unwrap().0).collect();
        // Children lists per (generation, center).
        let mut kids: Vec<std::collections::BTreeMap<u32, Vec<u32>>> = vec![Default::default(); nets.len()];
        for k in 1..nets.len() {
            for &z in &nets[k] {
                kids[k - 1].entry(parent_center[k][&z]).or_default().push(z);
            }
        }
        let mut point_lists: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
        for (i, &c) in assign.iter().enumerate() {
            point_lists.entry(c).or_default().push(i as u32);
        }
        // Depth-first layout.
        let mut tree = DyadicTree {
            n: s.n,
            spacing: s.spacing,
            scale0,
            cubes: Vec::new(),
            order: Vec::with_capacity(s.len()),
            generations: vec![Vec::new(); nets.len()],
            leaf_of: vec![0; s.len()],
            roots: Vec::new(),
        };
        let roots = nets[0].clone();
        for r in roots {
            let id = tree.layout(s, r, 0, None, finest, &kids, &point_lists);
            tree.roots.push(id);
        }
        Ok(tree)
    }

    #[allow(clippy::too_many_arguments)]
    fn layout(
        &mut self,
        s: &Surface,
        center: u32,
        k: usize,
        parent: Option<u32>,
        finest: usize,
        kids: &[std::collections::BTreeMap<u32, Vec<u32>>],
        points: &std::collections::BTreeMap<u32, Vec<u32>>,
    ) -> u32 {
        let id = self.cubes.len() as u32;
        let offset = self.order.len() as u32;
        self.cubes.push(Cube {
            id,
            k: k as u32,
            parent,
            children: Vec::new(),
            center,
            ell: self.scale0 * 2f64.powi(-(k as i32)),
            diam: 0.0,
            sigma: 0.0,
            members_offset: offset,
            members_len: 0,
        });
        self.generations[k].push(id);
        if k == finest {
            if let Some(list) = points.get(&center) {
                for &p in list {
                    self.leaf_of[p as usize] = id;
                }
                self.order.extend_from_slice(list);
            }
        } else {
            let mut children = Vec::new();
            if let Some(list) = kids[k].get(&center) {
                for &z in list {
                    let c = self.layout(s, z, k + 1, Some(id), finest, kids, points);
                    children.push(c);
                }
            }
            self.cubes[id as usize].children = children;
        }
        let len = self.order.len() as u32 - offset;
        let members = &self.order[offset as usize..(offset + len) as usize];
        let sigma = members.iter().map(|&p| s.ws[p as usize]).sum();
        let diam = s.diam_of(members);
        let c = &mut self.cubes[id as usize];
        c.members_len = len;
        c.sigma = sigma;
        c.diam = diam;
        id
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn cube(&self, id: u32) -> &Cube {
        &self.cubes[id as usize]
    }

    pub fn members(&self, id: u32) -> &[u32] {
        let c = &self.cubes[id as usize];
        &self.order[c.members_offset as usize..(c.members_offset + c.members_len) as usize]
    }

    pub fn center(&self, s: &Surface, id: u32) -> StPoint {
        s.point(self.cubes[id as usize].center as usize)
    }

    pub fn depth(&self) -> u32 {
        self.generations.len() as u32 - 1
    }

    /// Ancestors of a cube from its parent up to the root.
    pub fn ancestors(&self, id: u32) -> Vec<u32> {
        let mut v = Vec::new();
        let mut cur = self.cubes[id as usize].parent;
        while let Some(p) = cur {
            v.push(p);
            cur = self.cubes[p as usize].parent;
        }
        v
    }

    pub fn is_ancestor_or_self(&self, a: u32, mut q: u32) -> bool {
        loop {
            if q == a {
                return true;
            }
            match self.cubes[q as usize].parent {
                Some(p) => q = p,
                None => return false,
            }
        }
    }

    /// Siblings of a cube, including itself.
    pub fn siblings(&self, id: u32) -> Vec<u32> {
        match self.cubes[id as usize].parent {
            Some(p) => self.cubes[p as usize].children.clone(),
            None => self.roots.clone(),
        }
    }

    /// All descendants of `id` (including itself) in depth-first order.
    pub fn subtree(&self, id: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(c) = stack.pop() {
            out.push(c);
            for &ch in self.cubes[c as usize].children.iter().rev() {
                stack.push(ch);
            }
        }
        out
    }

    /// lambda Q = Sigma intersected with C_{lambda diam Q}(center of Q).
    pub fn dilate(&self, s: &Surface, id: u32, lambda: f64) -> Vec<u32> {
        let c = &self.cubes[id as usize];
        let r = lambda * c.diam;
        s.index().collect_in_cube(s.x(c.center as usize), s.ts[c.center as usize], r)
    }

    /// Measured constants of the cube system.
    pub fn report(&self, s: &Surface) -> TreeReport {
        let mut pos = vec![0u32; s.len()];
        for (k, &p) in self.order.iter().enumerate() {
            pos[p as usize] = k as u32;
        }
        let mut c_star = 0.0f64;
        let mut alpha = f64::INFINITY;
        for c in &self.cubes {
            c_star = c_star.max(c.diam / c.ell);
            let cx = s.x(c.center as usize);
            let ct = s.ts[c.center as usize];
            let (lo, hi) = (c.members_offset, c.members_offset + c.members_len);
            let mut r = c.ell;
            s.index().for_each_in_cube(cx, ct, c.ell, |p| {
                let q = pos[p as usize];
                if q < lo || q >= hi {
                    let x = s.x(p as usize);
                    let mut nrm = (s.ts[p as usize] - ct).abs().sqrt();
                    for (a, b) in x.iter().zip(cx) {
                        nrm = nrm.max((a - b).abs());
                    }
                    r = r.min(nrm);
                }
            });
            alpha = alpha.min(r / c.ell);
        }
        let (gamma, c_boundary, layers) = self.small_boundary(s);
        TreeReport { c_star, alpha, gamma, c_boundary, boundary_layers: layers, cubes: self.len(), depth: self.depth() }
    }

    /// Boundary-layer mass fractions for eta in {1/2, 1/4, 1/8, 1/16}, pooled
    /// over generations >= 1 on a deterministic subsample, with a log-log fit
    /// of C eta^gamma.
    fn small_boundary(&self, s: &Surface) -> (f64, f64, Vec<(f64, f64)>) {
        let etas = [0.5, 0.25, 0.125, 0.0625];
        if self.generations.len() < 2 {
            return (1.0, 0.0, etas.iter().map(|&e| (e, 0.0)).collect());
        }
        let step = (s.len() / 1500).max(1);
        let mut mass = [0.0f64; 4];
        let mut total = 0.0;
        for k in 1..self.generations.len() {
            let ell = self.scale0 * 2f64.powi(-(k as i32));
            let label = |p: usize| -> u32 {
                let mut c = self.leaf_of[p];
                while self.cubes[c as usize].k as usize > k {
                    c = self.cubes[c as usize].parent.unwrap();
                }
                c
            };
            for i in (0..s.len()).step_by(step) {
                let mine = label(i);
                let mut best = f64::INFINITY;
                s.index().for_each_within(s.x(i), s.ts[i], 0.5 * ell, |j, d| {
                    if d < best && label(j as usize) != mine {
                        best = d;
                    }
                });
                total += s.ws[i];
                for (m, e) in mass.iter_mut().zip(etas) {
                    if best <= e * ell {
                        *m += s.ws[i];
                    }
                }
            }
        }
        let layers: Vec<(f64, f64)> = etas.iter().zip(mass).map(|(&e, m)| (e, m / total)).collect();
        let pts: Vec<(f64, f64)> = layers.iter().filter(|l| l.1 > 0.0).map(|l| (l.0.ln(), l.1.ln())).collect();
        if pts.len() < 2 {
            return (1.0, layers.iter().map(|l| l.1).fold(0.0, f64::max), layers);
        }
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let gamma = sxy / sxx;
        // Smallest C with layer <= C eta^gamma at every eta.
        let c = layers.iter().map(|l| l.1 / l.0.powf(gamma)).fold(0.0, f64::max);
        (gamma, c, layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub c_star: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub c_boundary: f64,
    pub boundary_layers: Vec<(f64, f64)>,
    pub cubes: usize,
    pub depth: u32,
}
