//! Synthetic surface families with analytic ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::dist_p;
use crate::plane::TPlane;
use crate::surface::Surface;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    TPlane,
    TiltedPlane,
    LipGraph,
    RegularGraph,
    BentGraph,
    HoledPlane,
    Ridge,
    WeierstrassT,
    CantorProduct,
}

impl std::str::FromStr for SurfaceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "t_plane" => SurfaceKind::TPlane,
            "tilted_plane" => SurfaceKind::TiltedPlane,
            "lip_graph" => SurfaceKind::LipGraph,
            "regular_graph" => SurfaceKind::RegularGraph,
            "bent_graph" => SurfaceKind::BentGraph,
            "holed_plane" => SurfaceKind::HoledPlane,
            "ridge" => SurfaceKind::Ridge,
            "weierstrass_t" => SurfaceKind::WeierstrassT,
            "cantor_product" => SurfaceKind::CantorProduct,
            _ => return Err(Error::Input(format!("unknown surface kind `{s}`"))),
        })
    }
}

/// Parameters of a synthetic surface.
///
/// Graph kinds live over y in [0, extent]^{n-1}, t in [0, time_extent] and
/// put the graph value in the last spatial coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub kind: SurfaceKind,
    pub n: usize,
    pub spacing: f64,
    pub extent: f64,
    /// Defaults to extent^2.
    pub time_extent: Option<f64>,
    /// Defaults to spacing^2, which makes the sample spacing-dense in d_p.
    pub time_pitch: Option<f64>,
    /// Tilt, Lipschitz constant, ridge slope, amplitude or bend slope
    /// depending on the kind.
    pub amplitude: f64,
    /// Angular frequency of the regular graph.
    pub frequency: f64,
    /// Width of the bend region.
    pub width: f64,
    /// Octaves of the Weierstrass function.
    pub octaves: u32,
    /// Generation of the Cantor product.
    pub generations: u32,
    pub hole_radius: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn new(kind: SurfaceKind, n: usize, spacing: f64, extent: f64) -> Self {
        let amplitude = match kind {
            SurfaceKind::TiltedPlane => 0.1,
            SurfaceKind::LipGraph => 0.2,
            SurfaceKind::RegularGraph => 0.05,
            SurfaceKind::BentGraph => 0.15,
            SurfaceKind::Ridge => 0.5,
            SurfaceKind::WeierstrassT => 0.05,
            _ => 0.0,
        };
        SynthParams {
            kind,
            n,
            spacing,
            extent,
            time_extent: None,
            time_pitch: None,
            amplitude,
            frequency: 1.0,
            width: 0.25 * extent,
            octaves: 6,
            generations: 3,
            hole_radius: 0.15 * extent,
            seed: 0,
        }
    }
}

/// Analytic facts about a synthesized surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: SurfaceKind,
    /// Lip(1,1/2) constant of the generating graph, when known.
    pub b1: Option<f64>,
    /// Exact planes containing the surface, when it is planar.
    pub planes: Vec<TPlane>,
    /// Smallest parabolic scale at which the sample resolves the set.
    pub resolved_scale: f64,
    pub notes: String,
}

/// Quintic smoothstep on [0, 1], clamped outside.
pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

/// Antiderivative of the smoothstep starting at 0; equals u - 1/2 for u >= 1.
fn smoothstep_integral(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        u - 0.5
    } else {
        u.powi(4) * (2.5 - 3.0 * u + u * u)
    }
}

fn grid_axis(len: f64, pitch: f64) -> Vec<f64> {
    let m = (len / pitch + 1e-9).floor() as usize;
    (0..=m).map(|k| k as f64 * pitch).collect()
}

fn graph_value(p: &SynthParams, y: &[f64], t: f64) -> f64 {
    let y1 = y.first().copied().unwrap_or(0.0);
    let l = p.extent;
    match p.kind {
        SurfaceKind::TPlane | SurfaceKind::HoledPlane => 0.0,
        SurfaceKind::TiltedPlane => p.amplitude * y1,
        SurfaceKind::LipGraph => {
            let cy: Vec<f64> = y.iter().map(|_| 0.5 * l).collect();
            p.amplitude * dist_p(y, t, &cy, 0.5 * p.time_extent.unwrap_or(l * l))
        }
        SurfaceKind::RegularGraph => {
            if y.is_empty() {
                p.amplitude * (p.frequency * t).sin()
            } else {
                p.amplitude * (p.frequency * y1).sin() * (p.frequency * t).sin()
            }
        }
        SurfaceKind::BentGraph => {
            let u = (y1 - 0.5 * l) / p.width + 0.5;
            p.amplitude * p.width * smoothstep_integral(u)
        }
        SurfaceKind::Ridge => p.amplitude * (y1 - 0.5 * l).abs(),
        SurfaceKind::WeierstrassT => weierstrass(p.amplitude, p.octaves, t),
        SurfaceKind::CantorProduct => unreachable!(),
    }
}

fn graph_gradient_norm(p: &SynthParams, y: &[f64], t: f64) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let y1 = y[0];
    let l = p.extent;
    match p.kind {
        SurfaceKind::TPlane | SurfaceKind::HoledPlane | SurfaceKind::WeierstrassT => 0.0,
        SurfaceKind::TiltedPlane => p.amplitude,
        SurfaceKind::LipGraph => p.amplitude,
        SurfaceKind::RegularGraph => (p.amplitude * p.frequency * (p.frequency * y1).cos() * (p.frequency * t).sin()).abs(),
        SurfaceKind::BentGraph => p.amplitude * smoothstep((y1 - 0.5 * l) / p.width + 0.5),
        SurfaceKind::Ridge => p.amplitude,
        SurfaceKind::CantorProduct => 0.0,
    }
}

/// Truncated Weierstrass-type function sum_{j=1}^{J} 2^{-j/2} cos(2^j t).
pub fn weierstrass(amplitude: f64, octaves: u32, t: f64) -> f64 {
    (1..=octaves).map(|j| 2f64.powf(-(j as f64) / 2.0) * (2f64.powi(j as i32) * t).cos()).fold(0.0, |a, v| a + v) * amplitude
}

/// Build a synthetic surface and its ground truth.
pub fn synthesize(p: &SynthParams) -> Result<(Surface, GroundTruth)> {
    if p.n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    if !(p.spacing > 0.0 && p.extent > 0.0) {
        return Err(Error::Input("spacing and extent must be positive".into()));
    }
    if p.kind == SurfaceKind::CantorProduct {
        return cantor_product(p);
    }
    if p.n == 1 && matches!(p.kind, SurfaceKind::TiltedPlane | SurfaceKind::Ridge | SurfaceKind::BentGraph) {
        return Err(Error::Input(format!("{:?} needs a spatial graph direction (n >= 2)", p.kind)));
    }
    let tl = p.time_extent.unwrap_or(p.extent * p.extent);
    let ht = p.time_pitch.unwrap_or(p.spacing * p.spacing);
    if ht > 16.0 * p.spacing * p.spacing && p.n == 1 {
        return Err(Error::Input("time pitch too coarse for n = 1: sample would not be 4h-dense".into()));
    }
    let ys = grid_axis(p.extent, p.spacing);
    let tss = grid_axis(tl, ht);
    let k = p.n - 1;
    let ny = ys.len().pow(k as u32);
    let est = ny * tss.len();
    if est > 20_000_000 {
        return Err(Error::Input(format!("requested sample has {est} points; refusing")));
    }
    let mut xs = Vec::with_capacity(est * p.n);
    let mut ts = Vec::with_capacity(est);
    let mut ws = Vec::with_capacity(est);
    let cell = p.spacing.powi(k as i32) * ht;
    let hole_c: Vec<f64> = vec![0.5 * p.extent; k];
    let mut y = vec![0.0; k];
    for iy in 0..ny {
        let mut rem = iy;
        for c in y.iter_mut() {
            *c = ys[rem % ys.len()];
            rem /= ys.len();
        }
        for &t in &tss {
            if p.kind == SurfaceKind::HoledPlane && dist_p(&y, t, &hole_c, 0.5 * tl) < p.hole_radius {
                continue;
            }
            let v = graph_value(p, &y, t);
            xs.extend_from_slice(&y);
            xs.push(v);
            ts.push(t);
            let g = graph_gradient_norm(p, &y, t);
            ws.push(cell * (1.0 + g * g).sqrt());
        }
    }
    let surface = Surface::new(p.n, p.spacing, xs, ts, ws)?;
    let mut planes = Vec::new();
    let b1 = match p.kind {
        SurfaceKind::TPlane | SurfaceKind::HoledPlane => {
            planes.push(TPlane::from_graph_slope(p.n, &vec![0.0; k], 0.0));
            Some(0.0)
        }
        SurfaceKind::TiltedPlane => {
            let mut slope = vec![0.0; k];
            slope[0] = p.amplitude;
            planes.push(TPlane::from_graph_slope(p.n, &slope, 0.0));
            Some(p.amplitude)
        }
        SurfaceKind::LipGraph | SurfaceKind::Ridge => Some(p.amplitude),
        SurfaceKind::RegularGraph => {
            // |psi(a)-psi(b)| <= A w (|dy| + |dt|) <= A w max(1, sqrt|dt|) d_p
            let tmax = tl.sqrt().max(1.0);
            Some(p.amplitude * p.frequency * (1.0f64).max(p.frequency.sqrt() * tmax))
        }
        SurfaceKind::BentGraph => Some(p.amplitude),
        SurfaceKind::WeierstrassT => None,
        SurfaceKind::CantorProduct => None,
    };
    let resolved = p.spacing.max(ht.sqrt());
    Ok((surface, GroundTruth { kind: p.kind, b1, planes, resolved_scale: resolved, notes: String::new() }))
}

/// Cantor-type product [C_{1-1/2n}]^n x C_{3/4} sampled at the centers of
/// its generation-g boxes.
///
/// Each generation divides parabolic size by rho in space and rho^2 in time
/// (rho = 1/4 for n = 1, 1/16 for n = 2), so the sample is uniformly
/// resolved at parabolic scale rho^g.
fn cantor_product(p: &SynthParams) -> Result<(Surface, GroundTruth)> {
    let g = p.generations;
    // (spatial subdivisions, kept spatial indices, time subdivisions, kept time stride)
    let (sub_x, keep_x, sub_t, stride_t): (usize, Vec<usize>, usize, usize) = match p.n {
        1 => (4, vec![0, 3], 16, 2),
        2 => (16, (0..16).step_by(2).collect(), 256, 4),
        _ => return Err(Error::Input("cantor_product is implemented for n = 1 and n = 2".into())),
    };
    let keep_t: Vec<usize> = (0..sub_t).step_by(stride_t).collect();
    let count = (keep_x.len().pow(p.n as u32) * keep_t.len()).pow(g);
    if count > 5_000_000 {
        return Err(Error::Input(format!("cantor generation {g} has {count} points; refusing")));
    }
    fn centers(sub: usize, keep: &[usize], g: u32, len: f64) -> Vec<f64> {
        let mut cur = vec![0.0f64];
        let mut size = len;
        for _ in 0..g {
            size /= sub as f64;
            let mut next = Vec::with_capacity(cur.len() * keep.len());
            for &c in &cur {
                for &k in keep {
                    next.push(c + k as f64 * size);
                }
            }
            cur = next;
        }
        cur.iter().map(|c| c + 0.5 * size).collect()
    }
    let l = p.extent;
    let cx = centers(sub_x, &keep_x, g, l);
    let ct = centers(sub_t, &keep_t, g, l * l);
    let rho = l / (sub_x as f64).powi(g as i32);
    let mass = rho.powi(p.n as i32 + 1);
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut ws = Vec::new();
    let nx = cx.len().pow(p.n as u32);
    for ix in 0..nx {
        let mut rem = ix;
        let mut x = Vec::with_capacity(p.n);
        for _ in 0..p.n {
            x.push(cx[rem % cx.len()]);
            rem /= cx.len();
        }
        for &t in &ct {
            xs.extend_from_slice(&x);
            ts.push(t);
            ws.push(mass);
        }
    }
    let surface = Surface::new(p.n, rho, xs, ts, ws)?;
    Ok((
        surface,
        GroundTruth {
            kind: SurfaceKind::CantorProduct,
            b1: None,
            planes: Vec::new(),
            resolved_scale: rho,
            notes: format!("generation {g}, box size {rho}, box mass {mass}"),
        },
    ))
}

/// Largest observed |f(a) - f(b)| / d_p over sample pairs, where f is the
/// last spatial coordinate and (y, t) the remaining ones.
pub fn sampled_graph_lip(s: &Surface, pairs: usize, seed: u64) -> f64 {
    let n = s.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    let len = s.len();
    for k in 0..pairs {
        let i = rng.gen_range(0..len);
        let j = if k % 2 == 0 {
            rng.gen_range(0..len)
        } else {
            let r = s.spacing * 2f64.powf(rng.gen_range(0.0..6.0));
            let near = s.index().collect_in_cube(s.x(i), s.ts[i], r);
            near[rng.gen_range(0..near.len())] as usize
        };
        if i == j {
            continue;
        }
        let (a, b) = (s.x(i), s.x(j));
        let d = dist_p(&a[..n - 1], s.ts[i], &b[..n - 1], s.ts[j]);
        if d > 0.0 {
            best = best.max((a[n - 1] - b[n - 1]).abs() / d);
        }
    }
    best
}
