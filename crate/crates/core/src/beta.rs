//! Beta numbers, square functions and Carleson sums on a dyadic tree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicTree;
use crate::error::Result;
use crate::metric::StBox;
use crate::plane::{fit_t_plane_l2, fit_t_plane_sup, fit_t_plane_sup_bruteforce, normal_search, tangent_basis, Pts, TPlane};
use crate::surface::Surface;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    /// Window dilation constant K: windows are 8K Q.
    pub k: f64,
    /// Cubes with diam below this multiple of the spacing are unresolved.
    pub resolution_factor: f64,
    /// Compute the bilateral number as well.
    pub bilateral: bool,
    /// Plane evaluations allowed when refining the bilateral fit.
    pub sup_refine_iters: usize,
}

impl Default for BetaParams {
    fn default() -> Self {
        BetaParams { k: 4.0, resolution_factor: 20.0, bilateral: false, sup_refine_iters: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRecord {
    pub cube: u32,
    pub resolved: bool,
    pub beta_inf: f64,
    pub beta2: f64,
    pub bbeta_inf: Option<f64>,
    /// Sup-norm plane P_Q.
    pub plane: TPlane,
    pub plane_l2: TPlane,
    pub bplane: Option<TPlane>,
    pub window_points: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaField {
    pub params: BetaParams,
    pub records: Vec<BetaRecord>,
}

impl BetaField {
    pub fn get(&self, id: u32) -> &BetaRecord {
        &self.records[id as usize]
    }
}

pub(crate) fn gather(s: &Surface, ids: &[u32]) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(ids.len() * s.n);
    let mut ws = Vec::with_capacity(ids.len());
    for &i in ids {
        xs.extend_from_slice(s.x(i as usize));
        ws.push(s.ws[i as usize]);
    }
    (xs, ws)
}

/// Sup over plane points inside `window` and the sample's bounding box of
/// d_p(point, Sigma). The plane is sampled at spatial pitch `pitch` along
/// its tangent directions and time pitch pitch^2 (at most 1024 time rows).
///
/// Plane points outside the bounding box of the sample are ignored: a finite
/// sample says nothing about the set there.
pub fn reverse_sup(s: &Surface, plane: &TPlane, window: &StBox, pitch: f64) -> f64 {
    let mut bb = s.bbox();
    for k in 0..s.n {
        bb.lo[k] = bb.lo[k].max(window.lo[k]) - s.spacing;
        bb.hi[k] = bb.hi[k].min(window.hi[k]) + s.spacing;
    }
    bb.t_lo = bb.t_lo.max(window.t_lo);
    bb.t_hi = bb.t_hi.min(window.t_hi);
    if bb.t_lo > bb.t_hi || (0..s.n).any(|k| bb.lo[k] > bb.hi[k]) {
        return 0.0;
    }
    let n = s.n;
    let tang = tangent_basis(&plane.normal);
    let origin: Vec<f64> = plane.normal.iter().map(|v| v * plane.offset).collect();
    // Range of tangent coordinates covering the box.
    let center: Vec<f64> = bb.lo.iter().zip(&bb.hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let half = 0.5 * bb.lo.iter().zip(&bb.hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    let c_proj: Vec<f64> = tang.iter().map(|e| e.iter().zip(&center).map(|(a, b)| a * b).sum::<f64>()).collect();
    let m = ((2.0 * half) / pitch).ceil().max(1.0) as usize;
    let tp = (pitch * pitch).max((bb.t_hi - bb.t_lo) / 1024.0);
    let nt = ((bb.t_hi - bb.t_lo) / tp).floor() as usize;
    let mut best = 0.0f64;
    let dims = n - 1;
    let cells = (m + 1).pow(dims as u32);
    let mut x = vec![0.0; n];
    for cell in 0..cells {
        let mut rem = cell;
        for v in x.iter_mut().zip(&origin) {
            *v.0 = *v.1;
        }
        for (d, e) in tang.iter().enumerate() {
            let k = rem % (m + 1);
            rem /= m + 1;
            let u = c_proj[d] - half + k as f64 * pitch;
            for (xi, ei) in x.iter_mut().zip(e) {
                *xi += u * ei;
            }
        }
        if !(0..n).all(|k| x[k] >= bb.lo[k] && x[k] <= bb.hi[k]) {
            continue;
        }
        for it in 0..=nt {
            let t = (bb.t_lo + it as f64 * tp).min(bb.t_hi);
            if let Some((_, d)) = s.index().nearest(&x, t) {
                best = best.max(d);
            }
        }
    }
    best
}

fn sup_along(xs: &[f64], n: usize, plane: &TPlane) -> f64 {
    xs.chunks(n).map(|x| plane.dist(x)).fold(0.0, f64::max)
}

struct FullFit {
    sup: (TPlane, f64),
    l2: (TPlane, f64),
    wsum_d2: f64,
}

fn fit_window(n: usize, xs: &[f64], ws: &[f64], scale: f64) -> Result<FullFit> {
    let p = Pts { n, xs, ws };
    let l2 = fit_t_plane_l2(p)?;
    let sup = fit_t_plane_sup(p, scale)?;
    let wsum: f64 = ws.iter().sum();
    Ok(FullFit { wsum_d2: wsum * l2.1 * l2.1, sup, l2 })
}

/// Beta numbers of every cube.
pub fn compute_beta_field(s: &Surface, tree: &DyadicTree, params: BetaParams) -> Result<BetaField> {
    let d = (s.n + 1) as i32;
    let full_ids: Vec<u32> = (0..s.len() as u32).collect();
    let (fx, fw) = gather(s, &full_ids);
    let full = fit_window(s.n, &fx, &fw, s.diam().max(s.spacing)).ok();
    let records: Vec<Result<BetaRecord>> = tree
        .cubes
        .par_iter()
        .map(|c| {
            let resolved = c.diam >= params.resolution_factor * s.spacing;
            let win = tree.dilate(s, c.id, 8.0 * params.k);
            let mut flags = Vec::new();
            if !resolved {
                flags.push("below resolution".to_string());
            }
            let (xs, ws) = gather(s, &win);
            let local;
            let fit = if let Some(f) = full.as_ref().filter(|_| win.len() == s.len()) {
                f
            } else {
                local = match fit_window(s.n, &xs, &ws, c.diam.max(s.spacing)) {
                    Ok(f) => f,
                    Err(e) => {
                        flags.push(format!("fit failed: {e}"));
                        return Ok(BetaRecord {
                            cube: c.id,
                            resolved: false,
                            beta_inf: f64::MAX,
                            beta2: f64::MAX,
                            bbeta_inf: None,
                            plane: TPlane::new(unit(s.n), 0.0),
                            plane_l2: TPlane::new(unit(s.n), 0.0),
                            bplane: None,
                            window_points: win.len(),
                            flags,
                        });
                    }
                };
                &local
            };
            let diam = c.diam.max(s.spacing);
            let beta_inf = fit.sup.1 / diam;
            let beta2 = (fit.wsum_d2 / diam.powi(d) / (diam * diam)).sqrt();
            let (bbeta_inf, bplane) = if params.bilateral {
                let cx = s.x(c.center as usize);
                let window = StBox::cube(cx, s.ts[c.center as usize], 8.0 * params.k * c.diam);
                let (pl, v) = bilateral_fit(s, &xs, &window, &fit.sup.0, &fit.l2.0, diam, params.sup_refine_iters);
                (Some((v / diam).max(beta_inf)), Some(pl))
            } else {
                (None, None)
            };
            Ok(BetaRecord {
                cube: c.id,
                resolved,
                beta_inf,
                beta2,
                bbeta_inf,
                plane: fit.sup.0.clone(),
                plane_l2: fit.l2.0.clone(),
                bplane,
                window_points: win.len(),
                flags,
            })
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(BetaField { params, records })
}

fn unit(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[n - 1] = 1.0;
    v
}

/// Reverse distances up to this value are attributed to sampling: a point of
/// a spacing-dense sample lies within this d_p distance of any point of the
/// sampled set.
pub fn sampling_floor(s: &Surface) -> f64 {
    2.0 * s.spacing
}

/// Plane minimizing forward sup plus reverse sup; returns the plane and the
/// unnormalized value.
fn bilateral_fit(s: &Surface, xs: &[f64], window: &StBox, sup_plane: &TPlane, l2_plane: &TPlane, diam: f64, iters: usize) -> (TPlane, f64) {
    let pitch = (diam / 8.0).max(s.spacing);
    let floor = sampling_floor(s);
    let eval_offset = |nu: &[f64]| -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in xs.chunks(s.n) {
            let v: f64 = x.iter().zip(nu).map(|(a, b)| a * b).sum();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (0.5 * (hi - lo), 0.5 * (hi + lo))
    };
    let total = |pl: &TPlane| sup_along(xs, s.n, pl) + (reverse_sup(s, pl, window, pitch) - floor).max(0.0);
    let mut best_pl = sup_plane.clone();
    let mut best = total(sup_plane);
    let v2 = total(l2_plane);
    if v2 < best {
        best = v2;
        best_pl = l2_plane.clone();
    }
    if s.n >= 2 && iters > 0 {
        let (nu, v) = normal_search(&best_pl.normal, 0.02, 1e-6 * diam, iters, |nu| {
            let (_, m) = eval_offset(nu);
            total(&TPlane::new(nu.to_vec(), m))
        });
        if v < best {
            best = v;
            let (_, m) = eval_offset(&nu);
            best_pl = TPlane::new(nu, m);
        }
    }
    (best_pl, best)
}

/// Brute-force beta_inf over a dense normal grid (oracle cross-check).
pub fn beta_inf_bruteforce(s: &Surface, tree: &DyadicTree, id: u32, k: f64, count: usize) -> f64 {
    let c = tree.cube(id);
    let win = tree.dilate(s, id, 8.0 * k);
    let (xs, ws) = gather(s, &win);
    let (_, w) = fit_t_plane_sup_bruteforce(Pts { n: s.n, xs: &xs, ws: &ws }, count);
    w / c.diam.max(s.spacing)
}

/// Normalized l2 residual on Delta(Z, tau, r): rms distance to the best
/// t-plane divided by r.
pub fn gamma(s: &Surface, z: &[f64], tau: f64, r: f64) -> f64 {
    let ids = s.index().collect_in_cube(z, tau, r);
    if ids.len() < s.n + 1 {
        return 0.0;
    }
    let (xs, ws) = gather(s, &ids);
    match fit_t_plane_l2(Pts { n: s.n, xs: &xs, ws: &ws }) {
        Ok((_, rms)) => rms / r,
        Err(_) => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareFunction {
    /// gamma(center_Q, ell(Q)) per cube.
    pub gamma: Vec<f64>,
    /// sup over sampled (X, t, rho) of nu(Delta x (0, rho)) / rho^{n+1}.
    pub nu_norm: f64,
    pub argmax: Option<(u32, f64)>,
}

fn member_boxes(s: &Surface, tree: &DyadicTree) -> Vec<StBox> {
    tree.cubes
        .iter()
        .map(|c| {
            let mut b = StBox::empty(s.n);
            for &p in tree.members(c.id) {
                b.extend(s.x(p as usize), s.ts[p as usize]);
            }
            b
        })
        .collect()
}

fn box_inside_open_cube(b: &StBox, cx: &[f64], ct: f64, r: f64) -> bool {
    (b.t_lo - ct).abs() < r * r && (b.t_hi - ct).abs() < r * r && (0..b.dim()).all(|k| (b.lo[k] - cx[k]).abs() < r && (b.hi[k] - cx[k]).abs() < r)
}

/// Dyadic discretization of the Carleson measure
/// d nu = gamma(Z, tau, r)^2 d sigma dr / r and its Carleson norm.
pub fn square_function(s: &Surface, tree: &DyadicTree) -> SquareFunction {
    let d = (s.n + 1) as i32;
    let g: Vec<f64> = tree.cubes.par_iter().map(|c| gamma(s, s.x(c.center as usize), s.ts[c.center as usize], c.ell)).collect();
    let contrib: Vec<f64> = tree.cubes.iter().map(|c| g[c.id as usize].powi(2) * c.sigma * std::f64::consts::LN_2).collect();
    let boxes = member_boxes(s, tree);
    let mut best = (0.0f64, None);
    for c in &tree.cubes {
        let cx = s.x(c.center as usize);
        let ct = s.ts[c.center as usize];
        for k in c.k..tree.generations.len() as u32 {
            let rho = tree.scale0 * 2f64.powi(-(k as i32));
            let mut nu = 0.0;
            for q in &tree.cubes {
                if q.ell <= rho && box_inside_open_cube(&boxes[q.id as usize], cx, ct, rho) {
                    nu += contrib[q.id as usize];
                }
            }
            let v = nu / rho.powi(d);
            if v > best.0 {
                best = (v, Some((c.id, rho)));
            }
        }
    }
    SquareFunction { gamma: g, nu_norm: best.0, argmax: best.1 }
}

/// sum_{Q subset Q*} beta2(Q)^2 sigma(Q) / sigma(Q*) for every Q*; returns
/// the per-cube ratios and their maximum.
pub fn carleson_sum(tree: &DyadicTree, field: &BetaField) -> (Vec<f64>, f64) {
    let mut acc = vec![0.0; tree.len()];
    // Children have larger ids than parents in the depth-first layout.
    for c in tree.cubes.iter().rev() {
        let r = field.get(c.id);
        let own = if r.resolved { r.beta2 * r.beta2 * c.sigma } else { 0.0 };
        let kids: f64 = c.children.iter().map(|&k| acc[k as usize]).sum();
        acc[c.id as usize] = own + kids;
    }
    let ratios: Vec<f64> = tree.cubes.iter().map(|c| if c.sigma > 0.0 { acc[c.id as usize] / c.sigma } else { 0.0 }).collect();
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    (ratios, max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonAudit {
    /// max over resolved Q of beta_inf(Q)^{n+3} / beta2(Q*).
    pub c_fitted: f64,
    pub pairs: usize,
    pub clamped_to_root: usize,
    pub zero_denominator: usize,
}

/// Compare beta_inf(Q)^{n+3} with beta2(Q*) for the smallest ancestor Q*
/// with 100 c diam(Q) <= diam(Q*); shallow trees fall back to the root.
pub fn beta_comparison_audit(s: &Surface, tree: &DyadicTree, field: &BetaField, c: f64) -> ComparisonAudit {
    let mut out = ComparisonAudit { c_fitted: 0.0, pairs: 0, clamped_to_root: 0, zero_denominator: 0 };
    for q in &tree.cubes {
        let rq = field.get(q.id);
        if !rq.resolved || q.parent.is_none() {
            continue;
        }
        let anc = tree.ancestors(q.id);
        let star = anc.iter().copied().find(|&a| tree.cube(a).diam >= 100.0 * c * q.diam);
        let star = match star {
            Some(a) => a,
            None => {
                out.clamped_to_root += 1;
                *anc.last().unwrap()
            }
        };
        let lhs = rq.beta_inf.powi(s.n as i32 + 3);
        let rhs = field.get(star).beta2;
        out.pairs += 1;
        if rhs <= 0.0 {
            if lhs > 1e-300 {
                out.zero_denominator += 1;
                out.c_fitted = f64::INFINITY;
            }
            continue;
        }
        out.c_fitted = out.c_fitted.max(lhs / rhs);
    }
    out
}

/// n points of Q whose successive distances to the affine span of the
/// previous ones are as large as possible; returns them and the smallest of
/// those distances divided by diam(Q).
pub fn spanning_points(s: &Surface, tree: &DyadicTree, id: u32) -> (Vec<u32>, f64) {
    let members = tree.members(id);
    let c = tree.cube(id);
    let mut chosen = vec![c.center];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut worst = f64::INFINITY;
    let origin = s.x(c.center as usize).to_vec();
    while chosen.len() < s.n {
        let mut best = (0u32, -1.0f64, Vec::new());
        for &p in members {
            let mut v: Vec<f64> = s.x(p as usize).iter().zip(&origin).map(|(a, b)| a - b).collect();
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > best.1 {
                best = (p, norm, v);
            }
        }
        if best.1 <= 1e-12 * c.diam {
            return (chosen, 0.0);
        }
        worst = worst.min(best.1 / c.diam.max(1e-300));
        basis.push(best.2.iter().map(|x| x / best.1).collect());
        chosen.push(best.0);
    }
    (chosen, if worst.is_finite() { worst } else { 1.0 })
}
