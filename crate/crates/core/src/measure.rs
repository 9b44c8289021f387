//! Measure estimators on sampled surfaces: parabolic Hausdorff content,
//! the slice-wise measure, and Ahlfors-David regularity checks.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::metric::{euclid, StPoint};
use crate::surface::Surface;

/// The open parabolic cube C_r(center) used as a measurement region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: StPoint,
    pub r: f64,
}

impl Region {
    pub fn new(center: StPoint, r: f64) -> Self {
        Region { center, r }
    }

    /// A cube containing every sample point.
    pub fn whole(s: &Surface) -> Self {
        let b = s.bbox();
        let cx: Vec<f64> = b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let ct = 0.5 * (b.t_lo + b.t_hi);
        let mut r = (0.5 * (b.t_hi - b.t_lo)).sqrt();
        for (l, h) in b.lo.iter().zip(&b.hi) {
            r = r.max(0.5 * (h - l));
        }
        Region { center: StPoint::new(cx, ct), r: r * 1.0001 + s.spacing }
    }

    pub fn members(&self, s: &Surface) -> Vec<u32> {
        s.index().collect_in_cube(&self.center.x, self.center.t, self.r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Weights,
    HausdorffP,
    Slicewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub kind: MeasureKind,
    pub value: f64,
    pub scale: f64,
    pub n_cover: usize,
}

fn unit_sphere_area(k: usize) -> f64 {
    // |S^k| = 2 pi^{(k+1)/2} / Gamma((k+1)/2)
    let a = (k + 1) as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(a) / gamma(a)
}

fn gamma(x: f64) -> f64 {
    // Exact for the half-integers and integers used here.
    let twice = (2.0 * x).round() as i64;
    if twice % 2 == 0 {
        (1..(x as i64)).map(|k| k as f64).product()
    } else {
        let mut g = std::f64::consts::PI.sqrt();
        let mut y = 0.5;
        while y < x - 0.25 {
            g *= y;
            y += 1.0;
        }
        g
    }
}

/// Normalization c_n = vol(B_p) / diam(B_p)^{n+1} of the parabolic ball in
/// R^{n-1} x R, so that the estimate agrees with Lebesgue measure on t-planes.
pub fn parabolic_normalization(n: usize) -> f64 {
    if n == 1 {
        return 1.0;
    }
    let s = unit_sphere_area(n - 2);
    let nf = n as f64;
    4.0 * s / ((nf - 1.0) * nf * (nf + 1.0) * 2f64.powi(n as i32 + 1))
}

/// Normalization omega_k / 2^k of k-dimensional Hausdorff measure.
pub fn euclidean_normalization(k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let omega = std::f64::consts::PI.powf(k as f64 / 2.0) / gamma(k as f64 / 2.0 + 1.0);
    omega / 2f64.powi(k as i32)
}

/// Greedy cover at scale `s`: clusters are the not-yet-covered points within
/// d_p < s/2 of each new center, taken in index order.
fn greedy_parabolic(s: &Surface, ids: &[u32], scale: f64) -> (f64, usize) {
    let d = (s.n + 1) as i32;
    let c = parabolic_normalization(s.n);
    let mut state = vec![0u8; s.len()];
    for &i in ids {
        state[i as usize] = 1;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut cluster = Vec::new();
    for &i in ids {
        if state[i as usize] != 1 {
            continue;
        }
        cluster.clear();
        s.index().for_each_within(s.x(i as usize), s.ts[i as usize], 0.5 * scale * (1.0 - 1e-9), |j, _| {
            if state[j as usize] == 1 {
                cluster.push(j);
            }
        });
        for &j in &cluster {
            state[j as usize] = 2;
        }
        total += c * inflated_diam(s, &cluster).powi(d);
        count += 1;
    }
    (total, count)
}

/// Parabolic diameter of the union of the sample cells (spacing in each
/// spatial direction, spacing^2 in time) around the cluster points.
fn inflated_diam(s: &Surface, ids: &[u32]) -> f64 {
    let h = s.spacing;
    let mut t_lo = f64::INFINITY;
    let mut t_hi = f64::NEG_INFINITY;
    for &i in ids {
        t_lo = t_lo.min(s.ts[i as usize]);
        t_hi = t_hi.max(s.ts[i as usize]);
    }
    let mut spatial = 0.0f64;
    if s.n > 1 {
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                spatial = spatial.max(euclid(s.x(i as usize), s.x(j as usize)));
            }
        }
    }
    spatial + ((s.n - 1) as f64).sqrt() * h + (t_hi - t_lo + h * h).sqrt()
}

/// Ladder of cover scales: 2*spacing times powers of 2^{1/4}.
fn ladder(spacing: f64, scale: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut k = 0;
    loop {
        let s = 2.0 * spacing * 2f64.powf(k as f64 / 4.0);
        if s > scale * (1.0 + 1e-12) {
            break;
        }
        v.push(s);
        k += 1;
    }
    v
}

/// Estimate of the parabolic Hausdorff measure H^{n+1}_p on a region.
///
/// Covers are greedy nets; the value is the infimum over a fixed ladder of
/// cover scales not exceeding `scale`, which makes it non-increasing in scale.
pub fn estimate_hausdorff_p(s: &Surface, region: &Region, scale: f64) -> Result<MeasureEstimate> {
    precondition(scale >= 2.0 * s.spacing * (1.0 - 1e-12), || format!("scale {scale} below twice the sample spacing {}", s.spacing))?;
    let ids = region.members(s);
    if ids.is_empty() {
        return Ok(MeasureEstimate { kind: MeasureKind::HausdorffP, value: 0.0, scale, n_cover: 0 });
    }
    let mut best = (f64::INFINITY, 0usize);
    for sc in ladder(s.spacing, scale) {
        let v = greedy_parabolic(s, &ids, sc);
        if v.0 < best.0 {
            best = v;
        }
    }
    Ok(MeasureEstimate { kind: MeasureKind::HausdorffP, value: best.0, scale, n_cover: best.1 })
}

fn euclid_diam(s: &Surface, ids: &[u32]) -> f64 {
    let mut best = 0.0f64;
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            best = best.max(euclid(s.x(i as usize), s.x(j as usize)));
        }
    }
    best
}

/// Greedy Euclidean estimate of H^{n-1} of the spatial points `ids`.
fn slice_measure(s: &Surface, ids: &[u32], scale: f64) -> f64 {
    let k = s.n - 1;
    if k == 0 {
        // Counting measure: number of clusters at the given scale.
        let mut xs: Vec<f64> = ids.iter().map(|&i| s.x(i as usize)[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut count = 0usize;
        let mut last = f64::NEG_INFINITY;
        for x in xs {
            if x - last >= scale / 2.0 {
                count += 1;
                last = x;
            }
        }
        return count as f64;
    }
    let c = euclidean_normalization(k);
    let mut covered = vec![false; ids.len()];
    let mut total = 0.0;
    let mut cluster = Vec::new();
    for a in 0..ids.len() {
        if covered[a] {
            continue;
        }
        cluster.clear();
        let xa = s.x(ids[a] as usize);
        for b in a..ids.len() {
            if !covered[b] && euclid(xa, s.x(ids[b] as usize)) < scale / 2.0 {
                covered[b] = true;
                cluster.push(ids[b]);
            }
        }
        total += c * (euclid_diam(s, &cluster) + s.spacing).powi(k as i32);
    }
    total
}

/// Slice-wise measure: sum over time slabs of width `slice_width` (anchored
/// at t = 0) of slab width times the H^{n-1} estimate of the spatial slice at
/// Euclidean cover scale `spatial_scale`.
///
/// The slab width must not be below the time resolution of the sample or
/// empty slabs between sampled rows make the value undercount.
pub fn estimate_slicewise(s: &Surface, region: &Region, slice_width: f64, spatial_scale: f64) -> Result<MeasureEstimate> {
    precondition(slice_width >= s.spacing * s.spacing * (1.0 - 1e-12), || format!("slice width {slice_width} below spacing^2"))?;
    precondition(spatial_scale >= 2.0 * s.spacing * (1.0 - 1e-12), || format!("spatial scale {spatial_scale} below twice the spacing"))?;
    let ids = region.members(s);
    let mut slabs: std::collections::BTreeMap<i64, Vec<u32>> = Default::default();
    for &i in &ids {
        // Rows sitting on a slab boundary belong to the slab they open.
        let key = (s.ts[i as usize] / slice_width + 1e-9).floor() as i64;
        slabs.entry(key).or_default().push(i);
    }
    let mut total = 0.0;
    for members in slabs.values() {
        total += slice_width * slice_measure(s, members, spatial_scale);
    }
    Ok(MeasureEstimate { kind: MeasureKind::Slicewise, value: total, scale: slice_width, n_cover: slabs.len() })
}

/// Surface-measure (point weights) of a region.
pub fn weight_measure(s: &Surface, region: &Region) -> f64 {
    let mut w = 0.0;
    s.index().for_each_in_cube(&region.center.x, region.center.t, region.r, |i| w += s.ws[i as usize]);
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdrViolation {
    pub center: StPoint,
    pub r: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdrReport {
    pub kind: MeasureKind,
    /// Smallest and largest observed value of measure(C_r) / r^{n+1}.
    pub density_min: f64,
    pub density_max: f64,
    pub ratio: f64,
    pub m: f64,
    pub scales: Vec<f64>,
    pub samples: usize,
    pub skipped_scales: Vec<f64>,
    pub violations: Vec<AdrViolation>,
    pub passes: bool,
}

/// Check M^{-1} r^d <= measure(C_r(X,t)) <= M r^d at sample centers.
///
/// Centers are sample points whose cube lies inside the bounding box of the
/// sample along every axis at least as long as the cube, so that truncation
/// of a finite patch does not register as a density drop; at most `max_centers` evenly strided centers per scale.
pub fn check_adr(s: &Surface, kind: MeasureKind, scales: &[f64], m: f64, max_centers: usize) -> Result<AdrReport> {
    if scales.is_empty() {
        return Err(Error::Input("no scales given".into()));
    }
    let d = (s.n + 1) as i32;
    let bb = s.bbox();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    let mut violations = Vec::new();
    let mut skipped = Vec::new();
    let mut samples = 0;
    for &r in scales {
        precondition(r >= 2.0 * s.spacing, || format!("ADR scale {r} below twice the spacing"))?;
        let inside: Vec<usize> = (0..s.len())
            .filter(|&i| {
                let x = s.x(i);
                let t = s.ts[i];
                (0..s.n).all(|k| {
                    let lo = bb.lo[k];
                    let hi = bb.hi[k];
                    hi - lo < 2.0 * r || (x[k] - r >= lo - 1e-12 && x[k] + r <= hi + 1e-12)
                }) && t - r * r >= bb.t_lo - 1e-12
                    && t + r * r <= bb.t_hi + 1e-12
            })
            .collect();
        if inside.is_empty() {
            skipped.push(r);
            continue;
        }
        let stride = (inside.len() / max_centers.max(1)).max(1);
        for &i in inside.iter().step_by(stride) {
            let region = Region::new(s.point(i), r);
            let v = match kind {
                MeasureKind::Weights => weight_measure(s, &region),
                MeasureKind::HausdorffP => estimate_hausdorff_p(s, &region, (r / 4.0).max(2.0 * s.spacing))?.value,
                MeasureKind::Slicewise => estimate_slicewise(s, &region, (r * r / 16.0).max(s.spacing * s.spacing), 2.0 * s.spacing)?.value,
            };
            let dens = v / r.powi(d);
            samples += 1;
            dmin = dmin.min(dens);
            dmax = dmax.max(dens);
            if dens > m || dens < 1.0 / m {
                violations.push(AdrViolation { center: region.center, r, density: dens });
            }
        }
    }
    if samples == 0 {
        return Err(Error::Resolution("no admissible ADR centers at any scale".into()));
    }
    Ok(AdrReport {
        kind,
        density_min: dmin,
        density_max: dmax,
        ratio: dmax / dmin,
        m,
        scales: scales.to_vec(),
        samples,
        skipped_scales: skipped,
        passes: violations.is_empty(),
        violations,
    })
}
