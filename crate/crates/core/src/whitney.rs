//! Stopping distances, Whitney cubes, partition of unity and the
//! Lip(1,1/2) graph attached to a coherent regime.
//!
//! Everything is expressed in a frame adapted to the plane of the regime
//! top: graph coordinates (y, s) in R^{n-1} x R and a height along the
//! spatial normal of that plane.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corona::{CoronaResult, Regime};
use crate::dyadic::DyadicTree;
use crate::error::{Error, Result};
use crate::index::KdIndex;
use crate::metric::{dist_p, StBox};
use crate::plane::{tangent_basis, TPlane};
use crate::surface::Surface;
use crate::surfaces::smoothstep;

/// Multiplicative hasher for lattice keys; the default hasher dominates
/// the cost of partition of unity evaluation.
#[derive(Default, Clone, Copy)]
struct KeyHasher(u64);

impl std::hash::Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.write_u64(*b as u64);
        }
    }
    fn write_u64(&mut self, v: u64) {
        self.0 = (self.0.rotate_left(5) ^ v).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }
    fn write_i64(&mut self, v: i64) {
        self.write_u64(v as u64);
    }
    fn write_i32(&mut self, v: i32) {
        self.write_u64(v as u64);
    }
    fn write_usize(&mut self, v: usize) {
        self.write_u64(v as u64);
    }
}

type KeyMap<V> = HashMap<CellKey, V, std::hash::BuildHasherDefault<KeyHasher>>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Orthonormal frame: tangents of the plane, its spatial normal, time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub n: usize,
    pub origin: Vec<f64>,
    pub t0: f64,
    pub tangents: Vec<Vec<f64>>,
    pub normal: Vec<f64>,
}

/// Affine function of the spatial graph variable, constant in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub slope: Vec<f64>,
    pub offset: f64,
}

impl Affine {
    pub fn zero(m: usize) -> Self {
        Affine { slope: vec![0.0; m], offset: 0.0 }
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.offset + dot(&self.slope, y)
    }
}

impl Frame {
    /// Frame of `plane` with origin at the projection of (center, t0).
    pub fn new(plane: &TPlane, center: &[f64], t0: f64) -> Self {
        Frame { n: plane.n(), origin: plane.project(center), t0, tangents: tangent_basis(&plane.normal), normal: plane.normal.clone() }
    }

    /// Graph coordinates pi(X, t).
    pub fn project(&self, x: &[f64], t: f64) -> (Vec<f64>, f64) {
        let d: Vec<f64> = x.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        (self.tangents.iter().map(|e| dot(e, &d)).collect(), t - self.t0)
    }

    /// Height pi_perp(X) along the normal.
    pub fn perp(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.origin).zip(&self.normal).map(|((a, b), nu)| (a - b) * nu).sum()
    }

    /// Space-time point with graph coordinates (y, s) and height h.
    pub fn lift(&self, y: &[f64], s: f64, h: f64) -> (Vec<f64>, f64) {
        let mut x: Vec<f64> = self.origin.iter().zip(&self.normal).map(|(o, nu)| o + h * nu).collect();
        for (e, yi) in self.tangents.iter().zip(y) {
            for (xk, ek) in x.iter_mut().zip(e) {
                *xk += yi * ek;
            }
        }
        (x, s + self.t0)
    }

    /// The plane as a graph h = B(y) over this frame.
    pub fn graph_of(&self, plane: &TPlane) -> Result<Affine> {
        let c = dot(&self.normal, &plane.normal);
        if c.abs() <= std::f64::consts::FRAC_1_SQRT_2 {
            return Err(Error::Construction(format!("plane tilts {:.4} rad from the regime plane; not a graph over it", c.abs().min(1.0).acos())));
        }
        let base = plane.offset - dot(&self.origin, &plane.normal);
        Ok(Affine { slope: self.tangents.iter().map(|e| -dot(e, &plane.normal) / c).collect(), offset: base / c })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MemberInfo {
    diam: f64,
    /// Parent when it belongs to the regime.
    parent: Option<u32>,
    plane: TPlane,
}

/// Stopping distances d and D of a regime.
///
/// With m(p) the diameter of the smallest regime cube containing the point
/// p of Q(S), d(X,t) = min_p d_p((X,t), p) + m(p) and D is the same
/// minimum over projected points; both are exact weighted nearest queries.
pub struct StoppingField {
    pub n: usize,
    pub spacing: f64,
    pub regime: Regime,
    pub frame: Frame,
    /// R = diam Q(S).
    pub r: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Points of Q(S), global ids.
    pub points: Vec<u32>,
    pub m: Vec<f64>,
    /// Smallest regime cube containing each point.
    pub owner: Vec<u32>,
    /// Points of Q(S) with d <= f_tol.
    pub f_set: Vec<u32>,
    pub f_tol: f64,
    proj_y: Vec<f64>,
    proj_s: Vec<f64>,
    perp: Vec<f64>,
    info: HashMap<u32, MemberInfo>,
    d_index: KdIndex,
    big_d_index: KdIndex,
    f_index: Option<KdIndex>,
}

impl std::fmt::Debug for StoppingField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoppingField")
            .field("regime", &self.regime.id)
            .field("r", &self.r)
            .field("points", &self.points.len())
            .field("f_set", &self.f_set.len())
            .finish()
    }
}

/// Build d, D and F for regime `regime_id` of a corona result.
pub fn stopping_distances(s: &Surface, tree: &DyadicTree, corona: &CoronaResult, regime_id: u32) -> Result<StoppingField> {
    let regime = corona.regimes.get(regime_id as usize).ok_or_else(|| Error::Input(format!("no regime {regime_id}")))?.clone();
    if regime.members.is_empty() {
        return Err(Error::Precondition("empty regime".into()));
    }
    let n = s.n;
    let root = tree.cube(regime.root);
    let top_plane = &corona.planes[regime.root as usize];
    let frame = Frame::new(top_plane, s.x(root.center as usize), s.ts[root.center as usize]);
    let points: Vec<u32> = tree.members(regime.root).to_vec();
    let mut local = HashMap::with_capacity(points.len());
    for (k, &p) in points.iter().enumerate() {
        local.insert(p, k);
    }
    let mut m = vec![f64::INFINITY; points.len()];
    let mut owner = vec![regime.root; points.len()];
    let mut info = HashMap::new();
    for &q in &regime.members {
        let c = tree.cube(q);
        let parent = c.parent.filter(|p| corona.assignment[*p as usize] == regime.id as i64 && q != regime.root);
        info.insert(q, MemberInfo { diam: c.diam, parent, plane: corona.planes[q as usize].clone() });
        for p in tree.members(q) {
            let k = local[p];
            if c.diam < m[k] || (c.diam == m[k] && c.k > tree.cube(owner[k]).k) {
                m[k] = c.diam;
                owner[k] = q;
            }
        }
    }
    let (xs, ws) = crate::beta::gather(s, &points);
    drop(ws);
    let ts: Vec<f64> = points.iter().map(|&p| s.ts[p as usize]).collect();
    let ids: Vec<u32> = (0..points.len() as u32).collect();
    let d_index = KdIndex::new(n, &xs, &ts, &ids, Some(&m));
    let mut proj_y = Vec::with_capacity(points.len() * (n - 1));
    let mut proj_s = Vec::with_capacity(points.len());
    let mut perp = Vec::with_capacity(points.len());
    for &p in &points {
        let (y, t) = frame.project(s.x(p as usize), s.ts[p as usize]);
        proj_y.extend_from_slice(&y);
        proj_s.push(t);
        perp.push(frame.perp(s.x(p as usize)));
    }
    let big_d_index = KdIndex::new(n - 1, &proj_y, &proj_s, &ids, Some(&m));
    let f_tol = 4.0 * s.spacing;
    let mut field = StoppingField {
        n,
        spacing: s.spacing,
        regime,
        frame,
        r: root.diam,
        kappa: corona.params.kappa,
        epsilon: corona.params.epsilon,
        delta: corona.params.delta,
        points,
        m,
        owner,
        f_set: Vec::new(),
        f_tol,
        proj_y,
        proj_s,
        perp,
        info,
        d_index,
        big_d_index,
        f_index: None,
    };
    let mut f_local = Vec::new();
    for k in 0..field.points.len() {
        let p = field.points[k] as usize;
        if field.d(s.x(p), s.ts[p]) <= f_tol {
            f_local.push(k as u32);
        }
    }
    field.f_set = f_local.iter().map(|&k| field.points[k as usize]).collect();
    if !f_local.is_empty() {
        let mut fy = Vec::new();
        let mut fs = Vec::new();
        for &k in &f_local {
            fy.extend_from_slice(field.proj_y(k as usize));
            fs.push(field.proj_s[k as usize]);
        }
        field.f_index = Some(KdIndex::new(n - 1, &fy, &fs, &f_local, None));
    }
    Ok(field)
}

impl StoppingField {
    fn proj_y(&self, k: usize) -> &[f64] {
        &self.proj_y[k * (self.n - 1)..(k + 1) * (self.n - 1)]
    }

    /// Graph coordinates of the local point k.
    pub fn projected(&self, k: usize) -> (&[f64], f64) {
        (self.proj_y(k), self.proj_s[k])
    }

    /// Height of the local point k.
    pub fn height(&self, k: usize) -> f64 {
        self.perp[k]
    }

    pub fn d(&self, x: &[f64], t: f64) -> f64 {
        self.d_index.nearest_weighted(x, t).map(|b| b.1).unwrap_or(f64::INFINITY)
    }

    pub fn big_d(&self, y: &[f64], s: f64) -> f64 {
        self.big_d_witness(y, s).1
    }

    /// D and the local index of the minimizing point.
    pub fn big_d_witness(&self, y: &[f64], s: f64) -> (u32, f64) {
        self.big_d_index.nearest_weighted(y, s).unwrap_or((0, f64::INFINITY))
    }

    /// Exact infimum of D over a closed box in graph coordinates.
    pub fn big_d_inf(&self, b: &StBox) -> f64 {
        self.big_d_index.box_weighted_min(b).map(|v| v.1).unwrap_or(f64::INFINITY)
    }

    /// inf over regime cubes Q of d_p((X,t), Q) + diam Q, by exhaustion.
    pub fn d_bruteforce(&self, s: &Surface, tree: &DyadicTree, x: &[f64], t: f64) -> f64 {
        let mut best = f64::INFINITY;
        for &q in &self.regime.members {
            let dq = tree.cube(q).diam;
            for &p in tree.members(q) {
                let v = dist_p(s.x(p as usize), s.ts[p as usize], x, t) + dq;
                best = best.min(v);
            }
        }
        best
    }

    /// D by exhaustion over regime cubes and their projected points.
    pub fn big_d_bruteforce(&self, s: &Surface, tree: &DyadicTree, y: &[f64], t: f64) -> f64 {
        let mut best = f64::INFINITY;
        for &q in &self.regime.members {
            let dq = tree.cube(q).diam;
            for &p in tree.members(q) {
                let (py, ps) = self.frame.project(s.x(p as usize), s.ts[p as usize]);
                best = best.min(dist_p(&py, ps, y, t) + dq);
            }
        }
        best
    }

    fn diam_of(&self, q: u32) -> f64 {
        self.info[&q].diam
    }

    /// Graph of P_Q over the frame.
    pub fn plane_graph(&self, q: u32) -> Result<Affine> {
        self.frame.graph_of(&self.info[&q].plane)
    }

    /// psi-hat at a point of pi(F): height of the F point projecting nearest.
    fn psi_hat(&self, y: &[f64], s: f64) -> Option<f64> {
        let idx = self.f_index.as_ref()?;
        let (k, _) = idx.nearest(y, s)?;
        Some(self.perp[k as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub level: i32,
    /// Spatial indices followed by the time index; unused slots are zero.
    pub idx: [i64; 4],
}

impl CellKey {
    fn parent(&self, m: usize) -> CellKey {
        let mut idx = [0i64; 4];
        for k in 0..m {
            idx[k] = self.idx[k].div_euclid(2);
        }
        idx[m] = self.idx[m].div_euclid(4);
        CellKey { level: self.level - 1, idx }
    }
}

/// A Whitney cube I_i with its associated regime cube and affine piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCube {
    pub key: CellKey,
    pub corner: Vec<f64>,
    pub corner_t: f64,
    /// Spatial side; the time side is side^2.
    pub side: f64,
    /// Parabolic diameter r_i.
    pub r: f64,
    pub q_of_i: u32,
    /// Q(i) could not satisfy both brackets and was clamped.
    pub clamped: bool,
    pub b: Affine,
}

/// Whitney family {I_i}. Cubes are found lazily: the acceptance test
/// 20 r <= inf D is memoized per lattice cell, and cubes of Lambda (those
/// meeting C'_{2 kappa R}) are materialized with Q(i) and B_i on first use.
pub struct WhitneyFamily {
    pub m: usize,
    pub lambda_radius: f64,
    pub support_radius: f64,
    diam_factor: f64,
    cond_memo: RwLock<KeyMap<bool>>,
    cubes: RwLock<KeyMap<Arc<WhitneyCube>>>,
}

impl std::fmt::Debug for WhitneyFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WhitneyFamily").field("materialized", &self.materialized()).finish()
    }
}

fn cell_box(m: usize, key: &CellKey) -> StBox {
    let a = 2f64.powi(-key.level);
    let mut b = StBox::empty(m);
    for k in 0..m {
        b.lo[k] = key.idx[k] as f64 * a;
        b.hi[k] = (key.idx[k] + 1) as f64 * a;
    }
    b.t_lo = key.idx[m] as f64 * a * a;
    b.t_hi = (key.idx[m] + 1) as f64 * a * a;
    b
}

fn meets_centered(b: &StBox, rho: f64) -> bool {
    b.meets_open_cube(&vec![0.0; b.dim()], 0.0, rho)
}

/// Result of a top-down enumeration of the cubes of Lambda.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub cubes: Vec<Arc<WhitneyCube>>,
    /// Lattice cells abandoned next to pi(F).
    pub near_f: usize,
    pub cells_visited: usize,
}

impl WhitneyFamily {
    pub fn new(field: &StoppingField) -> Result<Self> {
        let m = field.n - 1;
        if m > 3 {
            return Err(Error::Input("Whitney construction supports n <= 4".into()));
        }
        Ok(WhitneyFamily {
            m,
            lambda_radius: 2.0 * field.kappa * field.r,
            support_radius: 4.0 * field.kappa * field.r,
            diam_factor: (m as f64).sqrt() + 1.0,
            cond_memo: RwLock::new(KeyMap::default()),
            cubes: RwLock::new(KeyMap::default()),
        })
    }

    /// Number of cubes of Lambda built so far.
    pub fn materialized(&self) -> usize {
        self.cubes.read().unwrap().len()
    }

    fn cond(&self, field: &StoppingField, key: &CellKey) -> bool {
        if let Some(v) = self.cond_memo.read().unwrap().get(key) {
            return *v;
        }
        let b = cell_box(self.m, key);
        let v = 20.0 * self.diam_at(key.level) <= field.big_d_inf(&b);
        self.cond_memo.write().unwrap().insert(*key, v);
        v
    }

    /// True when the lattice cell is a Whitney cube: it passes the test and
    /// its parent does not.
    pub fn is_whitney(&self, field: &StoppingField, key: &CellKey) -> bool {
        self.cond(field, key) && !self.cond(field, &key.parent(self.m))
    }

    /// is_whitney using D(z) at a nearby point: D is 1-Lipschitz, so the
    /// memo is consulted only when the bounds are inconclusive.
    fn whitney_near(&self, field: &StoppingField, key: &CellKey, y: &[f64], s: f64, dz: f64) -> bool {
        let b = cell_box(self.m, key);
        let pad = 1.0 + 1e-9;
        let r = self.diam_at(key.level);
        let near = b.dist_to_point(y, s) * pad;
        let far = b.far_to_point(y, s) * pad;
        // inf_J D in [dz - far, dz + near]; inf over the parent is at most dz + near.
        let cond_j = if dz - far >= 20.0 * r {
            true
        } else if dz + near < 20.0 * r {
            false
        } else {
            self.cond(field, key)
        };
        if !cond_j {
            return false;
        }
        if dz + near < 40.0 * r {
            return true;
        }
        let pkey = key.parent(self.m);
        let pfar = cell_box(self.m, &pkey).far_to_point(y, s) * pad;
        if dz - pfar >= 40.0 * r {
            return false;
        }
        !self.cond(field, &pkey)
    }

    pub fn in_lambda(&self, key: &CellKey) -> bool {
        meets_centered(&cell_box(self.m, key), self.lambda_radius)
    }

    /// The cube of Lambda at `key`, assumed to be a Whitney cube.
    pub fn cube(&self, field: &StoppingField, key: &CellKey) -> Arc<WhitneyCube> {
        if let Some(c) = self.cubes.read().unwrap().get(key) {
            return c.clone();
        }
        let c = Arc::new(make_cube(field, self, *key));
        self.cubes.write().unwrap().entry(*key).or_insert(c).clone()
    }

    pub fn cell_box(&self, key: &CellKey) -> StBox {
        cell_box(self.m, key)
    }

    /// Parabolic diameter of a lattice cell at `level`.
    pub fn diam_at(&self, level: i32) -> f64 {
        self.diam_factor * 2f64.powi(-level)
    }

    /// Whitney cube containing (y, s); None on pi(F).
    pub fn locate(&self, field: &StoppingField, y: &[f64], s: f64) -> Option<CellKey> {
        let dz = field.big_d(y, s);
        if !(dz > field.f_tol) {
            return None;
        }
        // 20 r > D(z) >= inf D over the cell, so the cell at this level fails.
        let mut level = (self.diam_factor * 20.0 / dz).log2().floor() as i32;
        loop {
            let key = key_of(self.m, level, y, s);
            if self.cond(field, &key) {
                return Some(key);
            }
            level += 1;
            if level > 200 {
                return None;
            }
        }
    }

    /// All cubes of Lambda, top-down; None when more than `max_cells`
    /// lattice cells would be visited.
    pub fn enumerate(&self, field: &StoppingField, max_cells: usize) -> Option<Enumeration> {
        let m = self.m;
        let lam = self.lambda_radius;
        // Top level: cells at least as large as the window, all failing.
        let mut top = -(2.0 * lam).log2().ceil() as i32;
        let tops = loop {
            let a = 2f64.powi(-top);
            let lo = (-lam / a).floor() as i64;
            let hi = (lam / a).floor() as i64;
            let tlo = (-lam * lam / (a * a)).floor() as i64;
            let thi = (lam * lam / (a * a)).floor() as i64;
            let span = (hi - lo + 1) as usize;
            let count = (thi - tlo + 1) as usize * span.pow(m as u32);
            let mut keys = Vec::with_capacity(count);
            for c in 0..count {
                let mut rem = c;
                let mut idx = [0i64; 4];
                for k in 0..m {
                    idx[k] = lo + (rem % span) as i64;
                    rem /= span;
                }
                idx[m] = tlo + rem as i64;
                keys.push(CellKey { level: top, idx });
            }
            if keys.iter().all(|k| !self.cond(field, k)) {
                break keys;
            }
            top -= 1;
        };
        let floor_side = field.spacing / 64.0;
        let mut stack: Vec<CellKey> = tops.into_iter().rev().collect();
        let mut out = Enumeration { cubes: Vec::new(), near_f: 0, cells_visited: 0 };
        while let Some(key) = stack.pop() {
            out.cells_visited += 1;
            if out.cells_visited > max_cells {
                return None;
            }
            if !self.in_lambda(&key) {
                continue;
            }
            if self.cond(field, &key) {
                out.cubes.push(self.cube(field, &key));
                continue;
            }
            if 2f64.powi(-key.level) < floor_side {
                out.near_f += 1;
                continue;
            }
            let nchild = (1usize << m) * 4;
            for c in (0..nchild).rev() {
                let mut idx = [0i64; 4];
                for k in 0..m {
                    idx[k] = 2 * key.idx[k] + ((c >> k) & 1) as i64;
                }
                idx[m] = 4 * key.idx[m] + (c >> m) as i64;
                stack.push(CellKey { level: key.level + 1, idx });
            }
        }
        Some(out)
    }
}

fn key_of(m: usize, level: i32, y: &[f64], s: f64) -> CellKey {
    let a = 2f64.powi(-level);
    let mut idx = [0i64; 4];
    for k in 0..m {
        idx[k] = (y[k] / a).floor() as i64;
    }
    idx[m] = (s / (a * a)).floor() as i64;
    CellKey { level, idx }
}

fn make_cube(field: &StoppingField, fam: &WhitneyFamily, key: CellKey) -> WhitneyCube {
    let m = fam.m;
    let b = cell_box(m, &key);
    let a = 2f64.powi(-key.level);
    let cy: Vec<f64> = (0..m).map(|k| 0.5 * (b.lo[k] + b.hi[k])).collect();
    let cs = 0.5 * (b.t_lo + b.t_hi);
    let (w, di) = field.big_d_witness(&cy, cs);
    let (q, clamped) = associated_cube(field, field.owner[w as usize], di);
    WhitneyCube {
        key,
        corner: b.lo.clone(),
        corner_t: b.t_lo,
        side: a,
        r: fam.diam_factor * a,
        q_of_i: q,
        clamped,
        // Every regime plane was checked to be a graph when the field was built.
        b: field.plane_graph(q).unwrap_or_else(|_| Affine::zero(m)),
    }
}

/// Walk up from the witness cube until diam Q >= D / (4 kappa) without
/// exceeding 2 D; the top of the regime clamps.
fn associated_cube(field: &StoppingField, witness: u32, big_d: f64) -> (u32, bool) {
    let lower = big_d / (4.0 * field.kappa);
    let mut q = witness;
    while field.diam_of(q) < lower {
        match field.info[&q].parent {
            Some(p) if field.diam_of(p) <= 2.0 * big_d => q = p,
            _ => return (q, true),
        }
    }
    (q, false)
}

/// One-dimensional profile equal to 1 on |v| <= 1, vanishing for
/// |v| >= outer, with a quintic transition. Returns value and derivative.
#[inline]
fn profile(v: f64, outer: f64) -> (f64, f64) {
    let av = v.abs();
    if av <= 1.0 {
        (1.0, 0.0)
    } else if av >= outer {
        (0.0, 0.0)
    } else {
        let w = outer - 1.0;
        let u = (av - 1.0) / w;
        let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / w;
        (1.0 - smoothstep(u), -ds * v.signum())
    }
}

/// Bump of a lattice cell: 1 on 2I, 0 off 3I (parabolic dilations).
/// Returns value, spatial gradient and time derivative.
fn bump(m: usize, key: &CellKey, y: &[f64], s: f64) -> (f64, [f64; 3], f64) {
    let a = 2f64.powi(-key.level);
    let mut vals = [1.0f64; 4];
    let mut ders = [0.0f64; 4];
    for k in 0..m {
        let c = (key.idx[k] as f64 + 0.5) * a;
        let (v, d) = profile((y[k] - c) / a, 1.5);
        if v == 0.0 {
            return (0.0, [0.0; 3], 0.0);
        }
        vals[k] = v;
        ders[k] = d / a;
    }
    let ct = (key.idx[m] as f64 + 0.5) * a * a;
    // 2I has time half-width 2 a^2, 3I has 4.5 a^2.
    let (v, d) = profile((s - ct) / (2.0 * a * a), 2.25);
    if v == 0.0 {
        return (0.0, [0.0; 3], 0.0);
    }
    vals[m] = v;
    ders[m] = d / (2.0 * a * a);
    let total: f64 = vals[..=m].iter().product();
    let mut grad = [0.0; 3];
    for k in 0..m {
        let mut g = ders[k];
        for j in 0..=m {
            if j != k {
                g *= vals[j];
            }
        }
        grad[k] = g;
    }
    let mut dt = ders[m];
    for j in 0..m {
        dt *= vals[j];
    }
    (total, grad, dt)
}

fn bump_value(m: usize, key: &CellKey, y: &[f64], s: f64) -> f64 {
    let a = 2f64.powi(-key.level);
    let ct = (key.idx[m] as f64 + 0.5) * a * a;
    let mut v = profile((s - ct) / (2.0 * a * a), 2.25).0;
    for k in 0..m {
        if v == 0.0 {
            break;
        }
        let c = (key.idx[k] as f64 + 0.5) * a;
        v *= profile((y[k] - c) / a, 1.5).0;
    }
    v
}

/// One term of the partition of unity at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct PouTerm {
    pub key: CellKey,
    /// The cube when it belongs to Lambda.
    pub cube: Option<Arc<WhitneyCube>>,
    pub r: f64,
    pub nu: f64,
    pub grad: Vec<f64>,
    pub dt: f64,
}

/// Partition of unity at a point: nonzero terms and the unnormalized sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PouValue {
    pub terms: Vec<PouTerm>,
    pub sum_tilde: f64,
    /// D(y, s) <= f_tol: the point is treated as lying on pi(F).
    pub on_f: bool,
}

impl WhitneyFamily {
    /// Every nonzero nu_i at (y, s), with derivatives.
    pub fn partition_of_unity(&self, field: &StoppingField, y: &[f64], s: f64) -> PouValue {
        let m = self.m;
        let dz = field.big_d(y, s);
        if !(dz > field.f_tol) {
            return PouValue { terms: Vec::new(), sum_tilde: 0.0, on_f: true };
        }
        // Any cell J with (y, s) in 3J that is a Whitney cube has
        // r_J in (D/46, D/17] since D is 1-Lipschitz and 3J has diameter 3 r_J.
        let kmin = ((self.diam_factor * 17.0 / dz).log2() - 1e-9).ceil() as i32;
        let kmax = ((self.diam_factor * 46.0 / dz).log2() + 1e-9).floor() as i32;
        let mut raw: Vec<(CellKey, Option<Arc<WhitneyCube>>, f64, [f64; 3], f64)> = Vec::new();
        for level in kmin..=kmax {
            let a = 2f64.powi(-level);
            let mut base = [0i64; 4];
            for k in 0..m {
                base[k] = (y[k] / a).floor() as i64;
            }
            base[m] = (s / (a * a)).floor() as i64;
            let sp = 3usize.pow(m as u32);
            for c in 0..sp * 9 {
                let mut rem = c;
                let mut idx = [0i64; 4];
                for k in 0..m {
                    idx[k] = base[k] + (rem % 3) as i64 - 1;
                    rem /= 3;
                }
                idx[m] = base[m] + rem as i64 - 4;
                let key = CellKey { level, idx };
                let (v, g, dt) = bump(m, &key, y, s);
                if v == 0.0 {
                    continue;
                }
                if !self.whitney_near(field, &key, y, s, dz) {
                    continue;
                }
                let cube = self.in_lambda(&key).then(|| self.cube(field, &key));
                raw.push((key, cube, v, g, dt));
            }
        }
        let sum: f64 = raw.iter().map(|r| r.2).sum();
        let mut sg = [0.0f64; 3];
        let mut st = 0.0;
        for r in &raw {
            for k in 0..m {
                sg[k] += r.3[k];
            }
            st += r.4;
        }
        let terms = raw
            .into_iter()
            .map(|(key, cube, v, g, dt)| PouTerm {
                key,
                cube,
                r: self.diam_at(key.level),
                nu: v / sum,
                grad: (0..m).map(|k| (g[k] * sum - v * sg[k]) / (sum * sum)).collect(),
                dt: (dt * sum - v * st) / (sum * sum),
            })
            .collect();
        PouValue { terms, sum_tilde: sum, on_f: false }
    }
}

/// Value of psi with first derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiValue {
    pub value: f64,
    pub grad: Vec<f64>,
    pub dt: f64,
    /// Evaluated on pi(F) through psi-hat.
    pub on_f: bool,
}

/// The graph psi of a regime: stopping field plus Whitney family.
#[derive(Debug)]
pub struct GraphField {
    pub field: StoppingField,
    pub family: WhitneyFamily,
}

impl GraphField {
    pub fn support_radius(&self) -> f64 {
        self.family.support_radius
    }

    /// psi(y, s) = sum_{i in Lambda} B_i nu_i off pi(F), psi-hat on pi(F),
    /// and 0 outside C'_{4 kappa R}.
    pub fn psi(&self, y: &[f64], s: f64) -> PsiValue {
        let m = self.family.m;
        let rho = self.family.support_radius;
        if y.iter().any(|v| v.abs() >= rho) || s.abs() >= rho * rho {
            return PsiValue { value: 0.0, grad: vec![0.0; m], dt: 0.0, on_f: false };
        }
        let pou = self.family.partition_of_unity(&self.field, y, s);
        if pou.on_f || pou.terms.is_empty() {
            let v = self.field.psi_hat(y, s).unwrap_or(0.0);
            return PsiValue { value: v, grad: vec![0.0; m], dt: 0.0, on_f: true };
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; m];
        let mut dt = 0.0;
        for t in &pou.terms {
            if let Some(c) = &t.cube {
                let b = &c.b;
                let bv = b.eval(y);
                value += bv * t.nu;
                for k in 0..m {
                    grad[k] += b.slope[k] * t.nu + bv * t.grad[k];
                }
                dt += bv * t.dt;
            }
        }
        PsiValue { value, grad, dt, on_f: false }
    }

    /// Value only; skips derivative bookkeeping.
    pub fn psi_value(&self, y: &[f64], s: f64) -> f64 {
        let fam = &self.family;
        let field = &self.field;
        let m = fam.m;
        let rho = fam.support_radius;
        if y.iter().any(|v| v.abs() >= rho) || s.abs() >= rho * rho {
            return 0.0;
        }
        let dz = field.big_d(y, s);
        let on_f = || field.psi_hat(y, s).unwrap_or(0.0);
        if !(dz > field.f_tol) {
            return on_f();
        }
        let kmin = ((fam.diam_factor * 17.0 / dz).log2() - 1e-9).ceil() as i32;
        let kmax = ((fam.diam_factor * 46.0 / dz).log2() + 1e-9).floor() as i32;
        let mut sum = 0.0;
        let mut acc = 0.0;
        let mut any = false;
        for level in kmin..=kmax {
            let a = 2f64.powi(-level);
            let mut base = [0i64; 4];
            for k in 0..m {
                base[k] = (y[k] / a).floor() as i64;
            }
            base[m] = (s / (a * a)).floor() as i64;
            for c in 0..3usize.pow(m as u32) * 9 {
                let mut rem = c;
                let mut idx = [0i64; 4];
                for k in 0..m {
                    idx[k] = base[k] + (rem % 3) as i64 - 1;
                    rem /= 3;
                }
                idx[m] = base[m] + rem as i64 - 4;
                let key = CellKey { level, idx };
                let v = bump_value(m, &key, y, s);
                if v == 0.0 || !fam.whitney_near(field, &key, y, s, dz) {
                    continue;
                }
                any = true;
                sum += v;
                if fam.in_lambda(&key) {
                    acc += v * fam.cube(field, &key).b.eval(y);
                }
            }
        }
        if !any {
            return on_f();
        }
        acc / sum
    }
}

/// Stopping field, Whitney family and graph of one regime.
pub fn assemble_psi(s: &Surface, tree: &DyadicTree, corona: &CoronaResult, regime_id: u32) -> Result<GraphField> {
    let field = stopping_distances(s, tree, corona, regime_id)?;
    check_injective(&field)?;
    for &q in &field.regime.members {
        field.plane_graph(q)?;
    }
    let family = WhitneyFamily::new(&field)?;
    Ok(GraphField { field, family })
}

/// pi must be one-to-one on F: two F points projecting within one spacing
/// may differ in height by at most 2 delta spacing.
fn check_injective(field: &StoppingField) -> Result<()> {
    let Some(idx) = field.f_index.as_ref() else { return Ok(()) };
    let h = field.spacing;
    for &p in &field.f_set {
        let k = field.points.binary_search(&p).ok().or_else(|| field.points.iter().position(|&q| q == p)).unwrap();
        let (y, s) = field.projected(k);
        let mut bad = None;
        idx.for_each_within(y, s, h, |j, _| {
            if (field.perp[j as usize] - field.perp[k]).abs() > 2.0 * field.delta * h {
                bad = Some(j);
            }
        });
        if let Some(j) = bad {
            return Err(Error::RegimeIntegrity(format!("projection is not injective on F: points {} and {} overlap", p, field.points[j as usize])));
        }
    }
    Ok(())
}

/// Structural checks of a Whitney family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitneyAudit {
    /// Cubes audited.
    pub cubes: usize,
    /// The audited cubes are all of Lambda; otherwise they are the cubes met
    /// by projected samples and random points of the window.
    pub complete: bool,
    pub near_f: usize,
    /// Cubes where D < 10 r_i somewhere on 10 I_i or D > 60 r_i at a lattice
    /// point of 10 I_i.
    pub ten_sixty_violations: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Neighbour pairs (10 I_i meets 10 I_j) with r_i / r_j outside [1/36, 36].
    pub neighbour_violations: usize,
    pub max_level_gap: i32,
    /// Cubes with diam Q(i) > 120 r_i or dist(pi Q(i), I_i) > 120 r_i.
    pub association_violations: usize,
    pub clamped: usize,
    /// max |B_i - B_j| / (epsilon min(r_i, r_j)) on 100 I_i u 100 I_j.
    pub b_difference_c: f64,
    pub b_pairs: usize,
    /// max |sum nu_i - 1| off pi(F).
    pub pou_error: f64,
    /// max r_i |grad nu_i| + r_i^2 |d_t nu_i|.
    pub pou_derivative_c: f64,
    pub pou_points: usize,
    /// Random window points not inside exactly one Whitney cube of Lambda.
    pub coverage_errors: usize,
}

fn dilated(m: usize, c: &WhitneyCube, lambda: f64) -> StBox {
    let mut b = StBox::empty(m);
    for k in 0..m {
        let mid = c.corner[k] + 0.5 * c.side;
        b.lo[k] = mid - 0.5 * lambda * c.side;
        b.hi[k] = mid + 0.5 * lambda * c.side;
    }
    let tm = c.corner_t + 0.5 * c.side * c.side;
    b.t_lo = tm - 0.5 * lambda * lambda * c.side * c.side;
    b.t_hi = tm + 0.5 * lambda * lambda * c.side * c.side;
    b
}

fn boxes_meet(a: &StBox, b: &StBox) -> bool {
    a.t_lo < b.t_hi && b.t_lo < a.t_hi && (0..a.dim()).all(|k| a.lo[k] < b.hi[k] && b.lo[k] < a.hi[k])
}

fn random_window_point(rng: &mut ChaCha8Rng, m: usize, lam: f64) -> (Vec<f64>, f64) {
    let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-lam..lam)).collect();
    (y, rng.gen_range(-lam * lam..lam * lam))
}

/// Cubes to audit: all of Lambda when the enumeration stays below
/// `max_cells` lattice cells, otherwise the cubes containing up to
/// `sample_points` projected samples and as many random window points.
pub fn audit_family(g: &GraphField, max_cells: usize, sample_points: usize, seed: u64) -> (Vec<Arc<WhitneyCube>>, bool, usize) {
    let fam = &g.family;
    let field = &g.field;
    if let Some(e) = fam.enumerate(field, max_cells) {
        return (e.cubes, true, e.near_f);
    }
    let mut keys = std::collections::BTreeSet::new();
    let npts = field.points.len();
    let stride = (npts / sample_points.max(1)).max(1);
    for k in (0..npts).step_by(stride) {
        let (y, s) = field.projected(k);
        if let Some(key) = fam.locate(field, y, s) {
            if fam.in_lambda(&key) {
                keys.insert(key);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for _ in 0..sample_points {
        let (y, s) = random_window_point(&mut rng, fam.m, fam.lambda_radius);
        if let Some(key) = fam.locate(field, &y, s) {
            if fam.in_lambda(&key) {
                keys.insert(key);
            }
        }
    }
    (keys.iter().map(|k| fam.cube(field, k)).collect(), false, 0)
}

/// Audit the 10-60 bounds, neighbour comparability, the association
/// brackets, B_i differences and the partition of unity.
pub fn audit_whitney(g: &GraphField, opts: &AuditOptions) -> WhitneyAudit {
    let fam = &g.family;
    let field = &g.field;
    let m = fam.m;
    let (cubes, complete, near_f) = audit_family(g, opts.max_cells, opts.sample_points, opts.seed);
    let mut a = WhitneyAudit {
        cubes: cubes.len(),
        complete,
        near_f,
        ten_sixty_violations: 0,
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
        neighbour_violations: 0,
        max_level_gap: 0,
        association_violations: 0,
        clamped: 0,
        b_difference_c: 0.0,
        b_pairs: 0,
        pou_error: 0.0,
        pou_derivative_c: 0.0,
        pou_points: 0,
        coverage_errors: 0,
    };
    // 10-60 on 10 I_i: exact infimum, supremum on the 3^{m+1} lattice of the box.
    for c in &cubes {
        let b = dilated(m, c, 10.0);
        let lo = field.big_d_inf(&b);
        let mut hi = 0.0f64;
        let pts = 3usize.pow(m as u32 + 1);
        let mut y = vec![0.0; m];
        for p in 0..pts {
            let mut rem = p;
            for k in 0..m {
                y[k] = b.lo[k] + 0.5 * (rem % 3) as f64 * (b.hi[k] - b.lo[k]);
                rem /= 3;
            }
            let s = b.t_lo + 0.5 * rem as f64 * (b.t_hi - b.t_lo);
            hi = hi.max(field.big_d(&y, s));
        }
        a.min_ratio = a.min_ratio.min(lo / c.r);
        a.max_ratio = a.max_ratio.max(hi / c.r);
        if lo < 10.0 * c.r || hi > 60.0 * c.r {
            a.ten_sixty_violations += 1;
        }
        if c.clamped {
            a.clamped += 1;
        }
        let qd = field.diam_of(c.q_of_i);
        let cy: Vec<f64> = (0..m).map(|k| c.corner[k] + 0.5 * c.side).collect();
        let cs = c.corner_t + 0.5 * c.side * c.side;
        let (w, _) = field.big_d_witness(&cy, cs);
        let (wy, ws) = field.projected(w as usize);
        // The witness point lies in Q(i), so this bounds dist(pi Q(i), I_i).
        let dist = fam.cell_box(&c.key).dist_to_point(wy, ws);
        if qd > 120.0 * c.r || dist > 120.0 * c.r {
            a.association_violations += 1;
        }
    }
    // Neighbour comparability through per-level center indexes.
    let mut levels: Vec<i32> = cubes.iter().map(|c| c.key.level).collect();
    levels.sort_unstable();
    levels.dedup();
    let per_level: Vec<(i32, KdIndex)> = levels
        .iter()
        .map(|&l| {
            let ids: Vec<u32> = (0..cubes.len() as u32).filter(|&i| cubes[i as usize].key.level == l).collect();
            let mut xs = Vec::new();
            let mut ts = Vec::new();
            for &i in &ids {
                let c = &cubes[i as usize];
                xs.extend((0..m).map(|k| c.corner[k] + 0.5 * c.side));
                ts.push(c.corner_t + 0.5 * c.side * c.side);
            }
            (l, KdIndex::new(m, &xs, &ts, &ids, None))
        })
        .collect();
    let neighbours = |c: &WhitneyCube, idx: &KdIndex, level: i32, f: &mut dyn FnMut(u32)| {
        let aj = 2f64.powi(-level);
        let rad = (5.0 * (c.side + aj)).max((50.0 * (c.side * c.side + aj * aj)).sqrt());
        let cy: Vec<f64> = (0..m).map(|k| c.corner[k] + 0.5 * c.side).collect();
        let cs = c.corner_t + 0.5 * c.side * c.side;
        let bi = dilated(m, c, 10.0);
        idx.for_each_in_cube(&cy, cs, rad, |j| {
            if boxes_meet(&bi, &dilated(m, &cubes[j as usize], 10.0)) {
                f(j);
            }
        });
    };
    for c in &cubes {
        for (l, idx) in &per_level {
            let gap = (l - c.key.level).abs();
            if gap <= a.max_level_gap && gap <= 5 {
                continue;
            }
            let mut cnt = 0usize;
            neighbours(c, idx, *l, &mut |_| cnt += 1);
            if cnt > 0 {
                a.max_level_gap = a.max_level_gap.max(gap);
                if gap > 5 {
                    a.neighbour_violations += cnt;
                }
            }
        }
    }
    // B differences on a deterministic sample of cubes.
    let stride = (cubes.len() / opts.b_sample.max(1)).max(1);
    for i in (0..cubes.len()).step_by(stride) {
        let c = &cubes[i];
        let bi = dilated(m, c, 100.0);
        for (l, idx) in &per_level {
            neighbours(c, idx, *l, &mut |j| {
                if j as usize == i {
                    return;
                }
                let o = &cubes[j as usize];
                let bj = dilated(m, o, 100.0);
                let mut worst = 0.0f64;
                for corner in 0..(1usize << m) {
                    for bx in [&bi, &bj] {
                        let y: Vec<f64> = (0..m).map(|k| if (corner >> k) & 1 == 0 { bx.lo[k] } else { bx.hi[k] }).collect();
                        worst = worst.max((c.b.eval(&y) - o.b.eval(&y)).abs());
                    }
                }
                a.b_pairs += 1;
                a.b_difference_c = a.b_difference_c.max(worst / (field.epsilon * c.r.min(o.r)));
            });
        }
    }
    // Partition of unity and coverage on random points of the Lambda window.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.pou_points {
        let (y, s) = random_window_point(&mut rng, m, fam.lambda_radius);
        let pou = fam.partition_of_unity(field, &y, s);
        if pou.on_f {
            continue;
        }
        a.pou_points += 1;
        let total: f64 = pou.terms.iter().map(|t| t.nu).sum();
        a.pou_error = a.pou_error.max((total - 1.0).abs());
        for t in &pou.terms {
            let g = t.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            a.pou_derivative_c = a.pou_derivative_c.max(t.r * g + t.r * t.r * t.dt.abs());
        }
        let covered = fam.locate(field, &y, s).map(|k| fam.is_whitney(field, &k) && fam.in_lambda(&k)).unwrap_or(false);
        if !covered {
            a.coverage_errors += 1;
        }
    }
    a
}

/// Sizes of the Whitney audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    /// Enumerate all of Lambda when it takes at most this many lattice cells.
    pub max_cells: usize,
    pub sample_points: usize,
    pub pou_points: usize,
    pub b_sample: usize,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { max_cells: 150_000, sample_points: 10_000, pou_points: 100_000, b_sample: 500, seed: 7 }
    }
}

/// How well the graph approximates the surface near each regime cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationAudit {
    pub cubes: usize,
    /// max over cubes of sup_{kappa Q} dist / (delta diam Q + 8 spacing).
    pub forward_ratio: f64,
    pub forward_failures: usize,
    /// Same for graph points near the surface, bilateral runs only.
    pub reverse_ratio: Option<f64>,
    pub reverse_failures: usize,
    /// max over samples with d >= 40 spacing of vertical distance / (epsilon d).
    pub closegraph_c: f64,
    /// max d / D(pi X) over samples of 2 kappa Q(S).
    pub lambda_hat: f64,
    /// Samples with D(pi X) > d(X) (should not happen).
    pub d_order_violations: usize,
    /// Lip(1,1/2) constant of psi-hat on F pairs.
    pub hat_lip: Option<f64>,
    pub worst_cube: Option<u32>,
}

/// Vertical distance |pi_perp X - psi(pi X)| per surface sample of the window.
fn vertical_distances(s: &Surface, g: &GraphField, ids: &[u32]) -> Vec<f64> {
    ids.iter()
        .map(|&p| {
            let x = s.x(p as usize);
            let (y, t) = g.field.frame.project(x, s.ts[p as usize]);
            (g.field.frame.perp(x) - g.psi_value(&y, t)).abs()
        })
        .collect()
}

/// Sup over graph points in the cube C_{rho}(center) and the sample's
/// bounding box of the distance to the surface.
fn graph_reverse_sup(s: &Surface, g: &GraphField, cx: &[f64], ct: f64, rho: f64) -> f64 {
    let m = g.family.m;
    let bb = s.bbox();
    let pitch = (rho / 8.0).max(s.spacing);
    let frame = &g.field.frame;
    let (cy, cs) = frame.project(cx, ct);
    // The projection of the world cube lies within sqrt(n) rho of pi(center).
    let ext = (s.n as f64).sqrt() * rho;
    let steps = (2.0 * ext / pitch).ceil() as usize;
    let t_lo = (cs - rho * rho).max(bb.t_lo - g.field.frame.t0);
    let t_hi = (cs + rho * rho).min(bb.t_hi - g.field.frame.t0);
    if t_lo > t_hi {
        return 0.0;
    }
    let tp = (pitch * pitch).max((t_hi - t_lo) / 256.0);
    let nt = ((t_hi - t_lo) / tp).floor() as usize;
    let mut best = 0.0f64;
    let cells = (steps + 1).pow(m as u32);
    let mut y = vec![0.0; m];
    for cell in 0..cells {
        let mut rem = cell;
        for k in 0..m {
            y[k] = cy[k] - ext + (rem % (steps + 1)) as f64 * pitch;
            rem /= steps + 1;
        }
        for it in 0..=nt {
            let sv = t_lo + it as f64 * tp;
            let h = g.psi_value(&y, sv);
            let (x, t) = frame.lift(&y, sv, h);
            let inside_cube = (t - ct).abs() < rho * rho && x.iter().zip(cx).all(|(a, b)| (a - b).abs() < rho);
            let inside_bb = (0..s.n).all(|k| x[k] >= bb.lo[k] - s.spacing && x[k] <= bb.hi[k] + s.spacing);
            if !(inside_cube && inside_bb) {
                continue;
            }
            if let Some((_, d)) = s.index().nearest(&x, t) {
                best = best.max(d);
            }
        }
    }
    best
}

/// Forward (surface to graph) and, when `bilateral`, reverse (graph to
/// surface) approximation per regime cube, plus the pointwise closeness and
/// d/D comparisons.
///
/// Surface-to-graph distances use the vertical distance, an upper bound for
/// the parabolic distance to the graph.
pub fn approximation_audit(s: &Surface, tree: &DyadicTree, g: &GraphField, bilateral: bool) -> ApproximationAudit {
    let field = &g.field;
    let kappa = field.kappa;
    let h = s.spacing;
    let root = tree.cube(field.regime.root);
    let window = tree.dilate(s, field.regime.root, 2.0 * kappa);
    let vert = vertical_distances(s, g, &window);
    let mut vmap = HashMap::with_capacity(window.len());
    for (k, &p) in window.iter().enumerate() {
        vmap.insert(p, vert[k]);
    }
    let mut out = ApproximationAudit {
        cubes: field.regime.members.len(),
        forward_ratio: 0.0,
        forward_failures: 0,
        reverse_ratio: None,
        reverse_failures: 0,
        closegraph_c: 0.0,
        lambda_hat: 0.0,
        d_order_violations: 0,
        hat_lip: None,
        worst_cube: None,
    };
    let mut worst = 0.0;
    for &q in &field.regime.members {
        let c = tree.cube(q);
        let budget = field.delta * c.diam + 8.0 * h;
        let mut sup = 0.0f64;
        for p in tree.dilate(s, q, kappa) {
            let v = match vmap.get(&p) {
                Some(v) => *v,
                None => {
                    let x = s.x(p as usize);
                    let (y, t) = field.frame.project(x, s.ts[p as usize]);
                    (field.frame.perp(x) - g.psi_value(&y, t)).abs()
                }
            };
            sup = sup.max(v);
        }
        let ratio = sup / budget;
        if ratio > 1.0 {
            out.forward_failures += 1;
        }
        if ratio > worst {
            worst = ratio;
            out.worst_cube = Some(q);
        }
        out.forward_ratio = out.forward_ratio.max(ratio);
        if bilateral {
            let rho = kappa * c.diam;
            let rev = graph_reverse_sup(s, g, s.x(c.center as usize), s.ts[c.center as usize], rho);
            let rb = 2.0 * field.delta * c.diam + 8.0 * h;
            let rr = rev / rb;
            if rr > 1.0 {
                out.reverse_failures += 1;
            }
            out.reverse_ratio = Some(out.reverse_ratio.unwrap_or(0.0).max(rr));
        }
    }
    for (k, &p) in window.iter().enumerate() {
        let x = s.x(p as usize);
        let t = s.ts[p as usize];
        let d = field.d(x, t);
        let (y, st) = field.frame.project(x, t);
        let dd = field.big_d(&y, st);
        if dd > d * (1.0 + 1e-12) + 1e-15 {
            out.d_order_violations += 1;
        }
        if dd > 0.0 {
            out.lambda_hat = out.lambda_hat.max(d / dd);
        }
        if d >= 40.0 * h {
            out.closegraph_c = out.closegraph_c.max(vert[k] / (field.epsilon * d));
        }
    }
    let _ = root;
    if field.f_set.len() >= 2 {
        let mut lip = 0.0f64;
        let step = (field.f_set.len() / 500).max(1);
        let locals: Vec<usize> = field.f_set.iter().map(|p| field.points.iter().position(|q| q == p).unwrap()).collect();
        for i in (0..locals.len()).step_by(step) {
            for j in (i + 1..locals.len()).step_by(step) {
                let (a, b) = (locals[i], locals[j]);
                let (ya, sa) = field.projected(a);
                let (yb, sb) = field.projected(b);
                let dpp = dist_p(ya, sa, yb, sb);
                if dpp > 0.0 {
                    lip = lip.max((field.perp[a] - field.perp[b]).abs() / dpp);
                }
            }
        }
        out.hat_lip = Some(lip);
    }
    out
}

/// Largest observed |psi(a) - psi(b)| / d_p(a, b) over random pairs: half
/// with the first point in the projected regime and a partner at a random
/// scale, half uniform in the support box.
pub fn measure_b1(g: &GraphField, pairs: usize, seed: u64) -> f64 {
    let m = g.family.m;
    let field = &g.field;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = g.support_radius();
    let npts = field.points.len();
    let mut best = 0.0f64;
    let lo_scale = (field.spacing / 4.0).ln();
    let hi_scale = (2.0 * rho).ln();
    let mut ya = vec![0.0; m];
    let mut yb = vec![0.0; m];
    for k in 0..pairs {
        let sa;
        if k % 2 == 0 {
            let p = rng.gen_range(0..npts);
            let (py, ps) = field.projected(p);
            ya.copy_from_slice(py);
            sa = ps;
        } else {
            for v in ya.iter_mut() {
                *v = rng.gen_range(-rho..rho);
            }
            sa = rng.gen_range(-rho * rho..rho * rho);
        }
        let r = rng.gen_range(lo_scale..hi_scale).exp();
        let mut sb = sa;
        if m == 0 || rng.gen_bool(0.5) {
            sb += if rng.gen_bool(0.5) { r * r } else { -r * r };
        }
        for k2 in 0..m {
            yb[k2] = ya[k2] + rng.gen_range(-r..r);
        }
        let d = dist_p(&ya, sa, &yb, sb);
        if d <= 0.0 {
            continue;
        }
        let va = g.psi_value(&ya, sa);
        let vb = g.psi_value(&yb, sb);
        best = best.max((va - vb).abs() / d);
    }
    best
}

/// psi sampled on a uniform grid of C'_{rho}(0, 0): spatial pitch hx, time
/// pitch hx^2. Values are ordered with time fastest.
pub fn sample_psi(g: &GraphField, rho: f64, hx: f64) -> (Vec<usize>, usize, Vec<f64>) {
    let m = g.family.m;
    let nx = (2.0 * rho / hx).round() as usize;
    let nt = (2.0 * rho * rho / (hx * hx)).round() as usize;
    let dims = vec![nx; m];
    let cols = nx.pow(m as u32);
    let mut vals = Vec::with_capacity(cols * nt);
    let mut y = vec![0.0; m];
    for c in 0..cols {
        let mut rem = c;
        for k in 0..m {
            y[k] = -rho + (rem % nx) as f64 * hx;
            rem /= nx;
        }
        for it in 0..nt {
            let s = -rho * rho + it as f64 * hx * hx;
            vals.push(g.psi_value(&y, s));
        }
    }
    (dims, nt, vals)
}
