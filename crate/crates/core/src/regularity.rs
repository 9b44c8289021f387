//! Half-order time regularity of graphs: D_t^{1/2} by Fourier multiplier and
//! by singular-integral quadrature, parabolic BMO, the local flatness
//! gamma-hat with its Carleson integral nu-hat, and a Littlewood-Paley
//! reconstruction check.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::whitney::{sample_psi, GraphField};

/// Normalization of the kernel form of D_t^{1/2}: for f = exp(i w t) the
/// integral of (f(s) - f(t)) / |s - t|^{3/2} equals -2 sqrt(2 pi) |w|^{1/2} f(t).
pub const C_HAT: f64 = -0.199_471_140_200_716_35;

/// -zeta(-1/2): leading correction of the trapezoid rule for u^{1/2} phi(u).
const NAVOT: f64 = 0.207_886_224_977_354_57;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    ZeroExtend,
    Periodic,
}

/// Samples on a uniform parabolic grid: spatial pitch hx, time pitch hx^2.
///
/// Node (i_1..i_m, j) sits at (lo + i hx, t_lo + j hx^2). Values are stored
/// column by column with time fastest; columns are ordered with the first
/// spatial index fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub lo: Vec<f64>,
    pub t_lo: f64,
    pub hx: f64,
    pub dims: Vec<usize>,
    pub nt: usize,
    pub policy: Boundary,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(lo: Vec<f64>, t_lo: f64, hx: f64, dims: Vec<usize>, nt: usize, policy: Boundary, values: Vec<f64>) -> Result<Self> {
        let g = GridFunction { lo, t_lo, hx, dims, nt, policy, values };
        g.validate()?;
        Ok(g)
    }

    /// Grid filled from f(y, t).
    pub fn from_fn(lo: Vec<f64>, t_lo: f64, hx: f64, dims: Vec<usize>, nt: usize, policy: Boundary, f: impl Fn(&[f64], f64) -> f64) -> Result<Self> {
        let cols: usize = dims.iter().product();
        let mut values = Vec::with_capacity(cols * nt);
        let mut y = vec![0.0; dims.len()];
        for c in 0..cols {
            let mut rem = c;
            for (k, d) in dims.iter().enumerate() {
                y[k] = lo[k] + (rem % d) as f64 * hx;
                rem /= d;
            }
            for j in 0..nt {
                values.push(f(&y, t_lo + j as f64 * hx * hx));
            }
        }
        Self::new(lo, t_lo, hx, dims, nt, policy, values)
    }

    /// psi of a regime graph on C'_rho(0, 0), zero-extended.
    pub fn sample_graph(g: &GraphField, rho: f64, hx: f64) -> Result<Self> {
        let (dims, nt, values) = sample_psi(g, rho, hx);
        let m = dims.len();
        Self::new(vec![-rho; m], -rho * rho, hx, dims, nt, Boundary::ZeroExtend, values)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hx > 0.0 && self.hx.is_finite()) {
            return Err(Error::Input(format!("grid pitch {} is not positive", self.hx)));
        }
        if self.lo.len() != self.dims.len() {
            return Err(Error::Input("box and grid dimensions disagree".into()));
        }
        if self.dims.len() > 2 {
            return Err(Error::Input("at most two spatial grid dimensions".into()));
        }
        if self.nt == 0 || self.dims.contains(&0) {
            return Err(Error::Input("empty grid".into()));
        }
        if self.values.len() != self.columns() * self.nt {
            return Err(Error::Input(format!("expected {} grid values, found {}", self.columns() * self.nt, self.values.len())));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("grid value {i} is not finite")));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.dims.len()
    }

    pub fn ht(&self) -> f64 {
        self.hx * self.hx
    }

    pub fn columns(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.values[c * self.nt..(c + 1) * self.nt]
    }

    fn with_values(&self, values: Vec<f64>) -> GridFunction {
        GridFunction { values, ..self.clone_header() }
    }

    fn clone_header(&self) -> GridFunction {
        GridFunction {
            lo: self.lo.clone(),
            t_lo: self.t_lo,
            hx: self.hx,
            dims: self.dims.clone(),
            nt: self.nt,
            policy: self.policy,
            values: Vec::new(),
        }
    }

    /// Column index of a spatial multi-index.
    fn col_of(&self, idx: &[usize]) -> usize {
        let mut c = 0;
        for k in (0..self.m()).rev() {
            c = c * self.dims[k] + idx[k];
        }
        c
    }

    pub fn at(&self, idx: &[usize], j: usize) -> f64 {
        self.values[self.col_of(idx) * self.nt + j]
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Relative l2 distance |a - b| / |b|; 0 when both vanish.
pub fn relative_l2(a: &GridFunction, b: &GridFunction) -> f64 {
    let num: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = b.l2();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

fn transform_len(f: &GridFunction) -> usize {
    match f.policy {
        Boundary::Periodic => f.nt,
        Boundary::ZeroExtend => (4 * f.nt).next_power_of_two(),
    }
}

/// D_t^{1/2} as the multiplier |tau|^{1/2} applied column by column.
/// Zero-extended grids are padded to at least four times their length and
/// corrected for the periodic images of the padded transform.
pub fn half_t_derivative_fourier(f: &GridFunction) -> Result<GridFunction> {
    f.validate()?;
    let p = transform_len(f);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(p);
    let inv = planner.plan_fft_inverse(p);
    let period = p as f64 * f.ht();
    let mult: Vec<f64> = (0..p)
        .map(|k| {
            let kk = if k <= p / 2 { k as f64 } else { k as f64 - p as f64 };
            (2.0 * std::f64::consts::PI * kk.abs() / period).sqrt() / p as f64
        })
        .collect();
    let mut out = Vec::with_capacity(f.values.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); p];
    for c in 0..f.columns() {
        let col = f.column(c);
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(if k < f.nt { col[k] } else { 0.0 }, 0.0);
        }
        fwd.process(&mut buf);
        for (b, w) in buf.iter_mut().zip(&mult) {
            *b *= w;
        }
        inv.process(&mut buf);
        let start = out.len();
        out.extend(buf[..f.nt].iter().map(|z| z.re));
        if f.policy == Boundary::ZeroExtend {
            remove_images(&mut out[start..], col, f.ht(), period);
        }
    }
    Ok(f.with_values(out))
}

/// Riemann zeta for s > 1 by a direct sum with an Euler-Maclaurin tail.
fn zeta(s: f64) -> f64 {
    let n = 64.0f64;
    let head: f64 = (1..64).map(|m| (m as f64).powf(-s)).sum();
    head + n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s) + s / 12.0 * n.powf(-s - 1.0) - s * (s + 1.0) * (s + 2.0) / 720.0 * n.powf(-s - 3.0)
}

/// Subtract the periodic images sum_{m != 0} D f(t + m P) left by the
/// transform of a zero-extended column. Outside the support the images
/// equal C_HAT int f(s) |t - s + m P|^{-3/2} ds, expanded in (t - s) / P.
fn remove_images(out: &mut [f64], col: &[f64], ht: f64, period: f64) {
    const TERMS: usize = 8;
    let nt = col.len();
    let centre = (nt as f64 - 1.0) / 2.0 * ht;
    // a_j = 2 binom(-3/2, 2j) zeta(3/2 + 2j)
    let mut coef = [0.0f64; TERMS];
    let mut binom = 1.0;
    for j in 0..2 * TERMS {
        if j % 2 == 0 {
            coef[j / 2] = 2.0 * binom * zeta(1.5 + j as f64);
        }
        binom *= (-1.5 - j as f64) / (j + 1) as f64;
    }
    let mut moments = [0.0f64; 2 * TERMS];
    for (j, v) in col.iter().enumerate() {
        let x = (j as f64 * ht - centre) / period;
        let mut p = v * ht;
        for q in moments.iter_mut() {
            *q += p;
            p *= x;
        }
    }
    if moments.iter().all(|&q| q == 0.0) {
        return;
    }
    let scale = C_HAT * period.powf(-1.5);
    for (j, o) in out.iter_mut().enumerate() {
        let u = (j as f64 * ht - centre) / period;
        let mut total = 0.0;
        for (k, a) in coef.iter().enumerate() {
            // sum_j f_j (u - v_j)^{2k} = sum_i binom(2k, i) u^i (-1)^{2k-i} mu_{2k-i}
            let deg = 2 * k;
            let mut acc = 0.0;
            let mut b = 1.0;
            let mut up = 1.0;
            for i in 0..=deg {
                let sign = if (deg - i) % 2 == 0 { 1.0 } else { -1.0 };
                acc += b * up * sign * moments[deg - i];
                b *= (deg - i) as f64 / (i + 1) as f64;
                up *= u;
            }
            total += a * acc;
        }
        *o -= scale * total;
    }
}

/// D_t^{1/2} by direct quadrature of C_HAT * int (f(s) - f(t)) / |s - t|^{3/2} ds
/// over |s - t| <= cutoff, with a trapezoid rule corrected for the
/// u^{1/2} behaviour at the singularity and an analytic tail beyond the
/// cutoff that treats f as equal to its far-field mean (0 for zero
/// extension, the column mean for periodic grids).
pub fn half_t_derivative_kernel(f: &GridFunction, cutoff: f64) -> Result<GridFunction> {
    f.validate()?;
    let ht = f.ht();
    precondition(cutoff >= 4.0 * ht, || format!("cutoff {cutoff} is below four time pitches ({})", 4.0 * ht))?;
    let nt = f.nt as i64;
    let jmax = (cutoff / ht + 1e-9).floor() as i64;
    let u_end = jmax as f64 * ht;
    let weights: Vec<f64> = (1..=jmax)
        .map(|k| {
            let u = k as f64 * ht;
            let w = if k == jmax { 0.5 } else { 1.0 };
            w * ht / (u * u.sqrt())
        })
        .collect();
    let mut out = Vec::with_capacity(f.values.len());
    for c in 0..f.columns() {
        let col = f.column(c);
        let fetch = |j: i64| -> f64 {
            match f.policy {
                Boundary::Periodic => col[j.rem_euclid(nt) as usize],
                Boundary::ZeroExtend => {
                    if (0..nt).contains(&j) {
                        col[j as usize]
                    } else {
                        0.0
                    }
                }
            }
        };
        let far = match f.policy {
            Boundary::Periodic => col.iter().sum::<f64>() / nt as f64,
            Boundary::ZeroExtend => 0.0,
        };
        for j in 0..nt {
            let v = col[j as usize];
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let k = k as i64 + 1;
                acc += w * (fetch(j + k) + fetch(j - k) - 2.0 * v);
            }
            let f2 = (fetch(j + 1) + fetch(j - 1) - 2.0 * v) / (ht * ht);
            acc += NAVOT * f2 * ht * ht.sqrt();
            acc += 4.0 * (far - v) / u_end.sqrt();
            out.push(C_HAT * acc);
        }
    }
    Ok(f.with_values(out))
}

/// Sup of the mean oscillation over one parabolic scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmoScale {
    /// r in spatial pitches.
    pub pitches: usize,
    pub r: f64,
    pub windows: usize,
    pub sup: f64,
}

/// Mean oscillation battery: windows C'_r with r = q hx for dyadic q >= min_pitches,
/// spanning 2q spatial and 2q^2 time nodes, placed on an r/4 stride inside the box.
pub fn parabolic_bmo_battery(f: &GridFunction, min_pitches: usize) -> Vec<BmoScale> {
    let m = f.m();
    let mut out = Vec::new();
    let mut q = min_pitches.max(1).next_power_of_two();
    loop {
        let ws = 2 * q;
        let wt = 2 * q * q;
        if f.dims.iter().any(|&d| d < ws) || f.nt < wt {
            break;
        }
        let ss = (q / 4).max(1);
        let st = (q * q / 4).max(1);
        let starts: Vec<Vec<usize>> = f.dims.iter().map(|&d| (0..=d - ws).step_by(ss).collect()).collect();
        let t_starts: Vec<usize> = (0..=f.nt - wt).step_by(st).collect();
        let ncorner: usize = starts.iter().map(|s| s.len()).product();
        let mut sup = 0.0f64;
        let mut windows = 0;
        let count = (ws.pow(m as u32) * wt) as f64;
        let mut idx = vec![0usize; m];
        for corner in 0..ncorner {
            let mut rem = corner;
            let mut base = vec![0usize; m];
            for k in 0..m {
                base[k] = starts[k][rem % starts[k].len()];
                rem /= starts[k].len();
            }
            let cols: Vec<usize> = (0..ws.pow(m as u32))
                .map(|c| {
                    let mut rem = c;
                    for k in 0..m {
                        idx[k] = base[k] + rem % ws;
                        rem /= ws;
                    }
                    f.col_of(&idx)
                })
                .collect();
            for &t0 in &t_starts {
                let mut mean = 0.0;
                for &c in &cols {
                    mean += f.column(c)[t0..t0 + wt].iter().sum::<f64>();
                }
                mean /= count;
                let mut osc = 0.0;
                for &c in &cols {
                    osc += f.column(c)[t0..t0 + wt].iter().map(|v| (v - mean).abs()).sum::<f64>();
                }
                sup = sup.max(osc / count);
                windows += 1;
            }
        }
        out.push(BmoScale { pitches: q, r: q as f64 * f.hx, windows, sup });
        q *= 2;
    }
    out
}

/// Parabolic BMO norm over the battery with r >= 8 pitches.
pub fn parabolic_bmo(f: &GridFunction) -> f64 {
    parabolic_bmo_battery(f, 8).iter().map(|s| s.sup).fold(0.0, f64::max)
}

/// Node window of C'_r(z, tau): centre node and half-widths.
fn window(psi: &GridFunction, z: &[f64], tau: f64, r: f64) -> Result<(Vec<usize>, usize, usize, usize)> {
    let w = (r / psi.hx).round() as usize;
    if w < 4 {
        return Err(Error::Resolution(format!("window r = {r} spans fewer than 4 pitches")));
    }
    let wt = w * w;
    let mut centre = Vec::with_capacity(psi.m());
    for k in 0..psi.m() {
        let c = ((z[k] - psi.lo[k]) / psi.hx).round();
        precondition(c >= w as f64 && c + (w as f64) < psi.dims[k] as f64, || format!("window at {z:?}, r = {r} leaves the grid"))?;
        centre.push(c as usize);
    }
    let ct = ((tau - psi.t_lo) / psi.ht()).round();
    precondition(ct >= wt as f64 && ct + (wt as f64) < psi.nt as f64, || format!("window at t = {tau}, r = {r} leaves the grid"))?;
    Ok((centre, ct as usize, w, wt))
}

/// gamma-hat(z, tau, r): rms distance over C'_r(z, tau), divided by r, from psi
/// to its best least-squares fit among functions affine in y and constant in t.
pub fn hat_gamma(psi: &GridFunction, z: &[f64], tau: f64, r: f64) -> Result<f64> {
    let m = psi.m();
    let (centre, ct, w, wt) = window(psi, z, tau, r)?;
    let side = 2 * w + 1;
    let ncols = side.pow(m as u32);
    let ntw = 2 * wt + 1;
    let mut idx = vec![0usize; m];
    let mut offs = vec![0.0f64; m];
    let mut col_mean = Vec::with_capacity(ncols);
    let mut col_offs = Vec::with_capacity(ncols);
    for c in 0..ncols {
        let mut rem = c;
        for k in 0..m {
            let o = rem % side;
            rem /= side;
            idx[k] = centre[k] + o - w;
            offs[k] = o as f64 - w as f64;
        }
        let col = &psi.column(psi.col_of(&idx))[ct - wt..=ct + wt];
        col_mean.push(col.iter().sum::<f64>() / ntw as f64);
        col_offs.push(offs.clone());
    }
    // Symmetric product grid: centred coordinates are orthogonal to each
    // other and to constants.
    let a = col_mean.iter().sum::<f64>() / ncols as f64;
    let mut b = vec![0.0; m];
    for k in 0..m {
        let num: f64 = col_mean.iter().zip(&col_offs).map(|(v, o)| v * o[k]).sum();
        let den: f64 = col_offs.iter().map(|o| o[k] * o[k]).sum();
        b[k] = num / den;
    }
    let mut ss = 0.0;
    for o in &col_offs {
        for k in 0..m {
            idx[k] = (centre[k] as f64 + o[k]) as usize;
        }
        let l = a + b.iter().zip(o).map(|(bk, ok)| bk * ok).sum::<f64>();
        let col = &psi.column(psi.col_of(&idx))[ct - wt..=ct + wt];
        ss += col.iter().map(|v| (v - l) * (v - l)).sum::<f64>();
    }
    Ok((ss / (ncols * ntw) as f64).sqrt() / r)
}

/// nu-hat(z, tau, rho) = int_0^rho int_{C'_rho(z,tau)} gamma-hat^2 dr / r, with
/// r in dyadic bands evaluated at their geometric midpoints and the inner
/// integral averaged over a centre grid of stride about r/2. Bands below
/// four pitches are dropped.
pub fn hat_nu(psi: &GridFunction, z: &[f64], tau: f64, rho: f64) -> Result<f64> {
    let m = psi.m();
    let vol = (2.0 * rho).powi(m as i32) * 2.0 * rho * rho;
    let mut total = 0.0;
    let mut band = 0;
    loop {
        let r = rho * 2f64.powf(-(band as f64) - 0.5);
        if ((r / psi.hx).round() as usize) < 4 {
            break;
        }
        let ns = ((2.0 * rho) / (r / 2.0)).ceil().max(1.0) as usize;
        let nts = ((2.0 * rho * rho) / (r * r / 2.0)).ceil().max(1.0) as usize;
        let mut acc = 0.0;
        let mut count = 0usize;
        let mut y = vec![0.0; m];
        for c in 0..ns.pow(m as u32) {
            let mut rem = c;
            for k in 0..m {
                y[k] = z[k] - rho + (rem % ns) as f64 * (2.0 * rho / ns as f64) + rho / ns as f64;
                rem /= ns;
            }
            for j in 0..nts {
                let s = tau - rho * rho + (j as f64 + 0.5) * (2.0 * rho * rho / nts as f64);
                let g = hat_gamma(psi, &y, s, r)?;
                acc += g * g;
                count += 1;
            }
        }
        total += std::f64::consts::LN_2 * vol * acc / count as f64;
        band += 1;
    }
    Ok(total)
}

/// Polynomial on [0, 1] by ascending coefficients.
fn poly_eval(p: &[f64], u: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

fn poly_deriv(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect()
}

/// (int_0^1 p cos(w u) du, int_0^1 p sin(w u) du).
fn trig_moments(p: &[f64], w: f64) -> (f64, f64) {
    if w.abs() < 4.0 {
        let moment = |j: usize| p.iter().enumerate().map(|(i, c)| c / (i + j + 1) as f64).sum::<f64>();
        let (mut c, mut s) = (0.0, 0.0);
        let mut term = 1.0;
        for j in 0..80 {
            // term = w^j / j!
            let mj = moment(j);
            match j % 4 {
                0 => c += term * mj,
                1 => s += term * mj,
                2 => c -= term * mj,
                _ => s -= term * mj,
            }
            term *= w / (j + 1) as f64;
            if term.abs() < 1e-20 {
                break;
            }
        }
        (c, s)
    } else {
        // Repeated integration by parts against exp(i w u).
        let e1 = Complex64::new(w.cos(), w.sin());
        let iw = Complex64::new(0.0, w);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut d = p.to_vec();
        let mut denom = iw;
        let mut sign = 1.0;
        while !d.is_empty() {
            acc += sign * (e1 * poly_eval(&d, 1.0) - poly_eval(&d, 0.0)) / denom;
            d = poly_deriv(&d);
            denom *= iw;
            sign = -sign;
        }
        (acc.re, acc.im)
    }
}

/// 1 - smoothstep(u) on [0, 1].
const PROFILE: [f64; 6] = [1.0, 0.0, 0.0, -10.0, 15.0, -6.0];
const PROFILE_U: [f64; 7] = [0.0, 1.0, 0.0, 0.0, -10.0, 15.0, -6.0];

/// One-dimensional factor b(u) = 1 - smoothstep(|u|) of the kernel and b'(u).
pub fn bump_1d(u: f64) -> (f64, f64) {
    let a = u.abs();
    if a >= 1.0 {
        return (0.0, 0.0);
    }
    (poly_eval(&PROFILE, a), poly_eval(&poly_deriv(&PROFILE), a) * u.signum())
}

/// Fourier transform of b and its derivative.
pub fn bump_hat(w: f64) -> (f64, f64) {
    let (c, _) = trig_moments(&PROFILE, w);
    let (_, s) = trig_moments(&PROFILE_U, w);
    (2.0 * c, -2.0 * s)
}

/// Smoothing kernel k(y, s) = prod_i b(y_i) b(s), its scaled copies
/// k_lambda(y, s) = lambda^{-(m+2)} k(y / lambda, s / lambda^2), and
/// phi_lambda = -2 lambda d k_lambda / d lambda, at dyadic scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpFilterBank {
    pub m: usize,
    pub lambda_min: f64,
    pub octaves: usize,
    pub steps_per_octave: usize,
}

impl LpFilterBank {
    pub fn new(m: usize, lambda_min: f64, octaves: usize) -> Self {
        LpFilterBank { m, lambda_min, octaves, steps_per_octave: 8 }
    }

    /// (lambda_j, weight) with log-midpoint nodes; weights sum to octaves ln 2.
    pub fn scales(&self) -> Vec<(f64, f64)> {
        let s = self.steps_per_octave.max(1);
        let w = std::f64::consts::LN_2 / s as f64;
        (0..self.octaves * s).map(|j| (self.lambda_min * 2f64.powf((j as f64 + 0.5) / s as f64), w)).collect()
    }

    pub fn k(&self, y: &[f64], s: f64) -> f64 {
        y.iter().map(|&v| bump_1d(v).0).product::<f64>() * bump_1d(s).0
    }

    /// phi = phi_1 = 2 [(m + 2) k + y . grad_y k + 2 s d_s k].
    pub fn phi(&self, y: &[f64], s: f64) -> f64 {
        let bs: Vec<(f64, f64)> = y.iter().map(|&v| bump_1d(v)).collect();
        let (bt, dbt) = bump_1d(s);
        let prod: f64 = bs.iter().map(|b| b.0).product();
        let k = prod * bt;
        let mut radial = 0.0;
        for (i, &(_, db)) in bs.iter().enumerate() {
            let others: f64 = bs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b.0).product();
            radial += y[i] * db * others * bt;
        }
        radial += 2.0 * s * prod * dbt;
        2.0 * ((self.m as f64 + 2.0) * k + radial)
    }

    pub fn phi_lambda(&self, lambda: f64, y: &[f64], s: f64) -> f64 {
        let ys: Vec<f64> = y.iter().map(|v| v / lambda).collect();
        self.phi(&ys, s / (lambda * lambda)) / lambda.powi(self.m as i32 + 2)
    }

    /// k-hat at (xi, tau) with its gradient (spatial components, then tau).
    pub fn k_hat(&self, xi: &[f64], tau: f64) -> (f64, Vec<f64>) {
        let bs: Vec<(f64, f64)> = xi.iter().map(|&w| bump_hat(w)).chain(std::iter::once(bump_hat(tau))).collect();
        let val: f64 = bs.iter().map(|b| b.0).product();
        let grad = (0..bs.len()).map(|i| bs.iter().enumerate().map(|(j, b)| if i == j { b.1 } else { b.0 }).product()).collect();
        (val, grad)
    }

    /// Transfer function sum_j w_j k-hat_j phi-hat_j of the truncated
    /// reconstruction at (xi, tau).
    pub fn transfer(&self, xi: &[f64], tau: f64) -> f64 {
        let m = self.m;
        let mut total = 0.0;
        let mut arg = vec![0.0; m];
        for (lam, w) in self.scales() {
            for k in 0..m {
                arg[k] = lam * xi[k];
            }
            let at = lam * lam * tau;
            let (kv, grad) = self.k_hat(&arg, at);
            let mut euler = 2.0 * at * grad[m];
            for k in 0..m {
                euler += arg[k] * grad[k];
            }
            total += w * kv * (-2.0 * euler);
        }
        total
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Moments of the synthesized kernels at scale lambda: (int k_lambda,
/// int phi_lambda, max_i |int y_i phi_lambda|). Exact quadrature on the
/// polynomial pieces.
pub fn kernel_moments(bank: &LpFilterBank, lambda: f64) -> (f64, f64, f64) {
    let gl = gauss_legendre(8);
    // Nodes on [-1, 0] and [0, 1].
    let nodes: Vec<(f64, f64)> = gl.iter().flat_map(|&(x, w)| [((x - 1.0) / 2.0, w / 2.0), ((x + 1.0) / 2.0, w / 2.0)]).collect();
    let m = bank.m;
    let per = nodes.len();
    let total = per.pow(m as u32 + 1);
    let (mut mk, mut mphi) = (0.0, 0.0);
    let mut first = vec![0.0; m];
    let mut y = vec![0.0; m];
    for c in 0..total {
        let mut rem = c;
        let mut wgt = 1.0;
        for k in 0..m {
            let (u, w) = nodes[rem % per];
            rem /= per;
            y[k] = u * lambda;
            wgt *= w * lambda;
        }
        let (u, w) = nodes[rem];
        let s = u * lambda * lambda;
        wgt *= w * lambda * lambda;
        let kv = bank.k(&y.iter().map(|v| v / lambda).collect::<Vec<_>>(), s / (lambda * lambda)) / lambda.powi(m as i32 + 2);
        let pv = bank.phi_lambda(lambda, &y, s);
        mk += wgt * kv;
        mphi += wgt * pv;
        for k in 0..m {
            first[k] += wgt * y[k] * pv;
        }
    }
    (mk, mphi, first.iter().fold(0.0, |a, v| a.max(v.abs())))
}

fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    // shape[0] is time (stride 1), shape[1..] spatial.
    let len = shape[axis];
    let stride: usize = shape[..axis].iter().product();
    let total: usize = shape.iter().product();
    let plan = if inverse { planner.plan_fft_inverse(len) } else { planner.plan_fft_forward(len) };
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let block = stride * len;
    for outer in (0..total).step_by(block) {
        for inner in 0..stride {
            for k in 0..len {
                buf[k] = data[outer + inner + k * stride];
            }
            plan.process(&mut buf);
            for k in 0..len {
                data[outer + inner + k * stride] = buf[k];
            }
        }
    }
}

fn freq(k: usize, n: usize, pitch: f64) -> f64 {
    let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * std::f64::consts::PI * kk / (n as f64 * pitch)
}

/// Relative l2 residual |f - sum_j w_j k_j * phi_j * f| / |f| of the
/// truncated Calderon reproducing formula, evaluated by FFT. Periodic
/// grids are used as they are; zero-extended grids are padded twofold
/// in every direction.
pub fn calderon_identity_check(bank: &LpFilterBank, f: &GridFunction) -> Result<f64> {
    f.validate()?;
    if bank.m != f.m() {
        return Err(Error::Input(format!("filter bank has {} spatial dimensions, grid has {}", bank.m, f.m())));
    }
    let pad = if f.policy == Boundary::Periodic { 1 } else { 2 };
    let mut shape = vec![f.nt * pad];
    shape.extend(f.dims.iter().map(|d| d * pad));
    let total: usize = shape.iter().product();
    let mut data = vec![Complex64::new(0.0, 0.0); total];
    let m = f.m();
    let mut idx = vec![0usize; m];
    for c in 0..f.columns() {
        let mut rem = c;
        let mut off = 0;
        let mut stride = shape[0];
        for k in 0..m {
            idx[k] = rem % f.dims[k];
            rem /= f.dims[k];
            off += idx[k] * stride;
            stride *= shape[k + 1];
        }
        for (j, v) in f.column(c).iter().enumerate() {
            data[off + j] = Complex64::new(*v, 0.0);
        }
    }
    let energy: f64 = data.iter().map(|z| z.norm_sqr()).sum();
    if energy == 0.0 {
        return Ok(0.0);
    }
    let mut planner = FftPlanner::new();
    for axis in 0..shape.len() {
        fft_axis(&mut data, &shape, axis, false, &mut planner);
    }
    // Per scale and axis: b-hat and its derivative at every frequency.
    let scales = bank.scales();
    let tables: Vec<Vec<Vec<(f64, f64)>>> = (0..shape.len())
        .map(|axis| {
            let pitch = if axis == 0 { f.ht() } else { f.hx };
            scales
                .iter()
                .map(|&(lam, _)| {
                    let factor = if axis == 0 { lam * lam } else { lam };
                    (0..shape[axis])
                        .map(|k| {
                            let w = factor * freq(k, shape[axis], pitch);
                            let (b, db) = bump_hat(w);
                            (b, w * db)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    let mut idx = vec![0usize; shape.len()];
    for (flat, z) in data.iter().enumerate() {
        let e = z.norm_sqr();
        if e == 0.0 {
            continue;
        }
        let mut rem = flat;
        for (a, i) in idx.iter_mut().enumerate() {
            *i = rem % shape[a];
            rem /= shape[a];
        }
        // k-hat phi-hat = -2 k-hat (sum_i xi_i d_i k-hat + 2 tau d_tau k-hat)
        // with every factor a product of per-axis values.
        let mut t = 0.0;
        for (j, &(_, w)) in scales.iter().enumerate() {
            let mut prod = 1.0;
            let mut euler = 0.0;
            for (a, &i) in idx.iter().enumerate() {
                let (b, wdb) = tables[a][j][i];
                let weight = if a == 0 { 2.0 } else { 1.0 };
                euler = euler * b + prod * weight * wdb;
                prod *= b;
            }
            t += w * prod * (-2.0 * euler);
        }
        num += (1.0 - t) * (1.0 - t) * e;
        den += e;
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// ||D_t^{1/2} psi||_* over the battery.
    pub bmo: f64,
    pub battery: Vec<BmoScale>,
    /// Kernel against Fourier half-derivative, relative l2 on sampled columns.
    pub backend_residual: f64,
    /// nu-hat(0, 0, rho) / rho^{m+2} on the central window.
    pub nu_hat: f64,
    pub b2: f64,
    /// (delta^2 + ||nu||)^{1/2}.
    pub bound: f64,
    pub ratio: f64,
}

/// b2 of a graph grid against (delta^2 + nu_norm)^{1/2}.
pub fn certify_regular(psi: &GridFunction, delta: f64, nu_norm: f64) -> Result<RegularityReport> {
    let d = half_t_derivative_fourier(psi)?;
    let battery = parabolic_bmo_battery(&d, 8);
    let bmo = battery.iter().map(|s| s.sup).fold(0.0, f64::max);
    let backend_residual = backend_gap(psi, 4)?;
    let nu_hat = central_nu(psi).unwrap_or(0.0);
    let bound = (delta * delta + nu_norm.max(0.0)).sqrt();
    Ok(RegularityReport { bmo, battery, backend_residual, nu_hat, b2: bmo, bound, ratio: if bound > 0.0 { bmo / bound } else { f64::INFINITY } })
}

/// Backend gap on up to `cols` evenly spaced columns, cutoff spanning the grid.
pub fn backend_gap(psi: &GridFunction, cols: usize) -> Result<f64> {
    let n = psi.columns();
    let pick: Vec<usize> = (0..cols.min(n)).map(|i| (2 * i + 1) * n / (2 * cols.min(n))).collect();
    let mut fourier = Vec::new();
    let mut kernel = Vec::new();
    for &c in &pick {
        let one = GridFunction { lo: vec![], dims: vec![], values: psi.column(c).to_vec(), ..psi.clone_header() };
        fourier.extend(half_t_derivative_fourier(&one)?.values);
        kernel.extend(half_t_derivative_kernel(&one, psi.nt as f64 * psi.ht())?.values);
    }
    let num: f64 = kernel.iter().zip(&fourier).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = fourier.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Heights below 1e-12 of the box width count as zero.
    let width = psi.dims.iter().map(|&d| d as f64 * psi.hx).fold(psi.hx, f64::max);
    let floor = 1e-12 * width / (psi.nt as f64 * psi.ht()).sqrt() * (fourier.len() as f64).sqrt();
    Ok(num / den.max(floor))
}

fn central_nu(psi: &GridFunction) -> Result<f64> {
    let m = psi.m();
    let half_x = psi.dims.iter().map(|&d| (d - 1) as f64 * psi.hx / 2.0).fold(f64::INFINITY, f64::min);
    let half_t = (psi.nt - 1) as f64 * psi.ht() / 2.0;
    let rho = (half_x / 2.0).min((half_t / 2.0).sqrt() / 2f64.sqrt());
    let z: Vec<f64> = (0..m).map(|k| psi.lo[k] + (psi.dims[k] - 1) as f64 * psi.hx / 2.0).collect();
    let tau = psi.t_lo + half_t;
    Ok(hat_nu(psi, &z, tau, rho)? / rho.powi(m as i32 + 2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_hat_matches_quadrature() {
        let gl = gauss_legendre(64);
        for &w in &[0.0, 0.5, 3.9, 4.1, 17.0, 80.0] {
            let (mut c, mut d) = (0.0, 0.0);
            for piece in [(-1.0, 0.0), (0.0, 1.0)] {
                for &(x, wt) in &gl {
                    let u = piece.0 + (x + 1.0) / 2.0;
                    c += wt / 2.0 * bump_1d(u).0 * (w * u).cos();
                    d -= wt / 2.0 * u * bump_1d(u).0 * (w * u).sin();
                }
            }
            let (b, db) = bump_hat(w);
            assert!((b - c).abs() < 1e-9, "w={w} {b} {c}");
            assert!((db - d).abs() < 1e-9, "w={w} {db} {d}");
        }
    }

    #[test]
    fn unit_mass() {
        assert!((bump_hat(0.0).0 - 1.0).abs() < 1e-15);
    }
}
