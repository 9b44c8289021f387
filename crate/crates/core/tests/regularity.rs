use paracorona::beta::gamma;
use paracorona::regularity::{
    backend_gap, calderon_identity_check, certify_regular, half_t_derivative_fourier, half_t_derivative_kernel, hat_gamma, hat_nu, kernel_moments,
    parabolic_bmo, parabolic_bmo_battery, relative_l2, Boundary, GridFunction, LpFilterBank, C_HAT,
};
use paracorona::surfaces::{synthesize, weierstrass, SurfaceKind, SynthParams};
use paracorona::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Periodic grid whose time period is exactly 2 pi.
fn periodic(cols: usize, nt: usize, f: impl Fn(&[f64], f64) -> f64) -> GridFunction {
    let hx = (2.0 * PI / nt as f64).sqrt();
    GridFunction::from_fn(vec![0.0], 0.0, hx, vec![cols], nt, Boundary::Periodic, f).unwrap()
}

fn max_abs(f: &GridFunction) -> f64 {
    f.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn fourier_kills_time_independent_input() {
    let f = periodic(8, 512, |y, _| (3.0 * y[0]).sin() + y[0] * y[0]);
    assert!(max_abs(&half_t_derivative_fourier(&f).unwrap()) <= 1e-12);
}

#[test]
fn fourier_scales_a_cosine_by_root_frequency() {
    let nt = 1024;
    for k in [1.0, 3.0, 17.0] {
        let f = periodic(2, nt, |_, t| (k * t).cos());
        let d = half_t_derivative_fourier(&f).unwrap();
        let ht = f.ht();
        for j in 0..nt {
            let want = k.sqrt() * (k * j as f64 * ht).cos();
            assert!((d.values[j] - want).abs() <= 1e-6, "k={k} j={j}: {} vs {want}", d.values[j]);
        }
    }
}

#[test]
fn fourier_is_linear() {
    let a = periodic(4, 256, |y, t| (2.0 * t).sin() * y[0]);
    let b = periodic(4, 256, |y, t| (5.0 * t + y[0]).cos());
    let sum = GridFunction { values: a.values.iter().zip(&b.values).map(|(u, v)| 2.0 * u - 3.0 * v).collect(), ..a.clone() };
    let (da, db, ds) = (half_t_derivative_fourier(&a).unwrap(), half_t_derivative_fourier(&b).unwrap(), half_t_derivative_fourier(&sum).unwrap());
    for i in 0..ds.values.len() {
        assert!((ds.values[i] - 2.0 * da.values[i] + 3.0 * db.values[i]).abs() <= 1e-12);
    }
}

#[test]
fn kernel_kills_time_independent_input() {
    let f = periodic(8, 512, |y, _| 0.3 + y[0]);
    let d = half_t_derivative_kernel(&f, 1.0).unwrap();
    assert!(max_abs(&d) <= 1e-12, "{}", max_abs(&d));
}

#[test]
fn kernel_matches_fourier_on_band_limited_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let coef: Vec<(f64, f64, f64)> = (0..6).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(5.0..60.0), rng.gen_range(0.0..6.3))).collect();
    let nt = 2048usize;
    let hx = (1.0 / nt as f64).sqrt();
    let f = GridFunction::from_fn(vec![0.0], 0.0, hx, vec![4], nt, Boundary::ZeroExtend, |y, t| {
        let u = (t - 0.5).abs() / 0.45;
        let w = if u >= 1.0 { 0.0 } else { (1.0 - u * u).powi(4) };
        w * (1.0 + y[0]) * coef.iter().map(|(a, om, ph)| a * (om * t + ph).cos()).sum::<f64>()
    })
    .unwrap();
    let gap = relative_l2(&half_t_derivative_kernel(&f, 1.0).unwrap(), &half_t_derivative_fourier(&f).unwrap());
    assert!(gap <= 1e-3, "{gap}");
}

#[test]
fn kernel_cutoff_tail_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let nt = 4096usize;
    let hx = (1.0 / 512.0f64).sqrt();
    let vals: Vec<f64> = (0..2 * nt).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = GridFunction::new(vec![0.0], 0.0, hx, vec![2], nt, Boundary::ZeroExtend, vals).unwrap();
    let sup = max_abs(&f);
    for cutoff in [0.25, 0.5, 1.0, 2.0] {
        let a = half_t_derivative_kernel(&f, cutoff).unwrap();
        let b = half_t_derivative_kernel(&f, 2.0 * cutoff).unwrap();
        // The band cutoff < |u| <= 2 cutoff moves from the far-field tail into the quadrature.
        let bound = C_HAT.abs() * 8.0 * (1.0 - 0.5f64.sqrt()) * sup / cutoff.sqrt();
        let diff = a.values.iter().zip(&b.values).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        assert!(diff <= 1.05 * bound, "cutoff {cutoff}: {diff} vs {bound}");
    }
}

#[test]
fn kernel_cutoff_below_four_pitches_is_rejected() {
    let f = periodic(2, 256, |_, t| t.sin());
    let e = half_t_derivative_kernel(&f, 3.0 * f.ht()).unwrap_err();
    assert!(matches!(e, Error::Precondition(_)), "{e}");
    assert!(half_t_derivative_kernel(&f, 4.0 * f.ht()).is_ok());
}

#[test]
fn invalid_grids_are_input_errors() {
    let bad = [
        GridFunction::new(vec![0.0], 0.0, 0.0, vec![2], 4, Boundary::Periodic, vec![0.0; 8]),
        GridFunction::new(vec![0.0], 0.0, 0.1, vec![2], 4, Boundary::Periodic, vec![0.0; 7]),
        GridFunction::new(vec![0.0, 0.0], 0.0, 0.1, vec![2], 4, Boundary::Periodic, vec![0.0; 8]),
        GridFunction::new(vec![0.0], 0.0, 0.1, vec![2], 4, Boundary::Periodic, vec![f64::NAN; 8]),
    ];
    for b in bad {
        assert!(matches!(b, Err(Error::Input(_))));
    }
}

#[test]
fn bmo_of_constant_is_zero() {
    let f = periodic(64, 1024, |_, _| 2.5);
    assert_eq!(parabolic_bmo(&f), 0.0);
}

#[test]
fn bmo_of_half_space_indicator_is_one_half() {
    let f = periodic(64, 1024, |y, _| if y[0] >= 32.0 * (2.0 * PI / 1024.0f64).sqrt() - 1e-9 { 1.0 } else { 0.0 });
    let v = parabolic_bmo(&f);
    assert!((v - 0.5).abs() <= 1e-12, "{v}");
}

#[test]
fn larger_scale_battery_cannot_increase_the_sup() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vals: Vec<f64> = (0..64 * 1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = GridFunction::new(vec![0.0], 0.0, 0.05, vec![64], 1024, Boundary::Periodic, vals).unwrap();
    let sup = |q| parabolic_bmo_battery(&f, q).iter().map(|s| s.sup).fold(0.0, f64::max);
    let (a, b, c) = (sup(4), sup(8), sup(16));
    assert!(b <= a && c <= b, "{a} {b} {c}");
}

fn grid2(n: usize, hx: f64, f: impl Fn(&[f64], f64) -> f64) -> GridFunction {
    GridFunction::from_fn(vec![0.0, 0.0], 0.0, hx, vec![n, n], n * n, Boundary::ZeroExtend, f).unwrap()
}

#[test]
fn hat_gamma_of_spatial_affine_is_zero() {
    let f = grid2(40, 0.025, |y, _| 0.3 - 2.0 * y[0] + 0.7 * y[1]);
    let g = hat_gamma(&f, &[0.5, 0.5], 0.5 * 0.999, 0.2).unwrap();
    assert!(g <= 1e-12, "{g}");
}

#[test]
fn hat_gamma_of_linear_time_drift() {
    let a = -1.7;
    let hx = 0.025;
    let f = grid2(40, hx, |_, t| a * t);
    for w in [4usize, 8, 12] {
        let r = w as f64 * hx;
        let g = hat_gamma(&f, &[0.5, 0.5], 0.5, r).unwrap();
        // Discrete mean of j^2 over -w^2..w^2 is w^2 (w^2 + 1) / 3.
        let wt = (w * w) as f64;
        let want = a.abs() * hx * hx * (wt * (wt + 1.0) / 3.0).sqrt() / r;
        assert!((g - want).abs() <= 1e-12 * want.max(1.0), "w={w}: {g} vs {want}");
        assert!((g / (a.abs() * r / 3f64.sqrt()) - 1.0).abs() <= 0.5 / wt + 1e-9);
    }
}

#[test]
fn hat_gamma_window_limits() {
    let f = grid2(40, 0.025, |y, t| y[0] * t);
    assert!(matches!(hat_gamma(&f, &[0.5, 0.5], 0.5, 0.07), Err(Error::Resolution(_))));
    assert!(matches!(hat_gamma(&f, &[0.05, 0.5], 0.5, 0.2), Err(Error::Precondition(_))));
}

#[test]
fn hat_gamma_tracks_surface_gamma_at_a_ridge() {
    let a = 0.5;
    let h = 0.02;
    let (s, _) = synthesize(&SynthParams::new(SurfaceKind::Ridge, 2, h, 1.0)).unwrap();
    let n = 51;
    let f = GridFunction::from_fn(vec![0.0], 0.0, h, vec![n], 2501, Boundary::ZeroExtend, |y, _| a * (y[0] - 0.5).abs()).unwrap();
    for r in [0.1, 0.2, 0.3] {
        let hat = hat_gamma(&f, &[0.5], 0.5, r).unwrap();
        let sur = gamma(&s, &[0.5, 0.0], 0.5, r);
        // Discrete oracle: a times the rms of |j| hx about its mean on -w..w, over r.
        let w = (r / h).round() as i64;
        let js: Vec<f64> = (-w..=w).map(|j| j.abs() as f64).collect();
        let mean = js.iter().sum::<f64>() / js.len() as f64;
        let var = js.iter().map(|j| (j - mean) * (j - mean)).sum::<f64>() / js.len() as f64;
        let want = a * h * var.sqrt() / r;
        assert!((hat - want).abs() <= 1e-12, "r={r}: {hat} vs {want}");
        assert!((hat / (a / 12f64.sqrt()) - 1.0).abs() <= 0.15);
        assert!(sur > 0.0 && hat / sur <= 4.0 && sur / hat <= 4.0, "r={r}: {hat} vs {sur}");
    }
}

#[test]
fn hat_nu_of_affine_is_zero() {
    let f = grid2(40, 0.025, |y, _| 1.0 + y[0] - y[1]);
    assert!(hat_nu(&f, &[0.5, 0.5], 0.5, 0.25).unwrap() <= 1e-20);
}

#[test]
fn hat_nu_is_subadditive_up_to_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 64usize;
    let hx = 1.0 / 64.0;
    let nt = (0.4 / (hx * hx)) as usize;
    let vals: Vec<f64> = (0..n * n * nt).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = GridFunction::new(vec![0.0, 0.0], 0.3, hx, vec![n, n], nt, Boundary::ZeroExtend, vals).unwrap();
    let (z, tau, rho) = ([0.5, 0.5], 0.5, 0.25);
    let whole = hat_nu(&f, &z, tau, rho).unwrap();
    let mut parts = 0.0;
    let half = rho / 2.0;
    for dx in [-1.0, 1.0] {
        for dy in [-1.0, 1.0] {
            for dt in [-3.0, -1.0, 1.0, 3.0] {
                parts += hat_nu(&f, &[z[0] + dx * half, z[1] + dy * half], tau + dt * half * half, half).unwrap();
            }
        }
    }
    assert!(whole > 0.0 && whole <= 2.0 * parts, "{whole} vs {parts}");
}

#[test]
fn calderon_residual_is_small_and_monotone() {
    let n = 32usize;
    let hx = 1.0 / n as f64;
    let tp = 2.0 * PI;
    let f = GridFunction::from_fn(vec![0.0], 0.0, hx, vec![n], n * n, Boundary::Periodic, |y, t| {
        (tp * y[0]).cos() * (tp * 2.0 * t).sin() + 0.5 * (tp * 3.0 * y[0] + 1.0).sin() + 0.2 * (tp * t).cos()
    })
    .unwrap();
    let mut last = f64::INFINITY;
    for oct in 1..=12 {
        let res = calderon_identity_check(&LpFilterBank::new(1, 1e-3, oct), &f).unwrap();
        assert!(res <= last + 1e-3, "{oct} octaves: {res} after {last}");
        last = res;
    }
    assert!(last <= 0.05, "{last}");
    let zero = GridFunction::new(vec![0.0], 0.0, hx, vec![n], n * n, Boundary::Periodic, vec![0.0; n * n * n]).unwrap();
    assert_eq!(calderon_identity_check(&LpFilterBank::new(1, 1e-3, 12), &zero).unwrap(), 0.0);
}

#[test]
fn filter_moments_vanish() {
    for m in [1, 2] {
        let bank = LpFilterBank::new(m, 1e-3, 12);
        for lambda in [0.01, 0.1, 1.0] {
            let (k, phi, first) = kernel_moments(&bank, lambda);
            assert!((k - 1.0).abs() <= 1e-12, "m={m} lambda={lambda}: {k}");
            assert!(phi.abs() <= 1e-12 && first.abs() <= 1e-12, "m={m} lambda={lambda}: {phi} {first}");
        }
    }
}

#[test]
fn bmo_of_half_derivative_scales_with_rho() {
    let nt = 1024;
    let base = periodic(64, nt, |y, t| (3.0 * t + y[0]).sin() + 0.4 * (7.0 * t).cos() * y[0]);
    let d1 = parabolic_bmo(&half_t_derivative_fourier(&base).unwrap());
    for rho in [0.5, 2.0, 3.0] {
        // f_rho(x, t) = f(rho x, rho^2 t) on the correspondingly finer grid.
        let scaled = GridFunction { hx: base.hx / rho, ..base.clone() };
        let d = parabolic_bmo(&half_t_derivative_fourier(&scaled).unwrap());
        assert!((d - rho * d1).abs() <= 1e-3 * rho * d1, "rho={rho}: {d} vs {}", rho * d1);
    }
}

#[test]
fn time_independent_graph_is_certified_flat() {
    let f = periodic(64, 1024, |y, _| (y[0] - 4.0).abs() * 0.2);
    let rep = certify_regular(&f, 0.1, 0.0).unwrap();
    assert!(rep.b2 <= 1e-6, "{}", rep.b2);
    assert!(rep.ratio <= 1e-5);
}

#[test]
fn backend_gap_ignores_roundoff_heights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise: Vec<f64> = (0..64 * 1024).map(|_| rng.gen_range(-1e-19..1e-19)).collect();
    let f = GridFunction::new(vec![0.0], 0.0, 0.05, vec![64], 1024, Boundary::ZeroExtend, noise).unwrap();
    assert!(backend_gap(&f, 4).unwrap() <= 1e-3);
    let smooth =
        GridFunction::from_fn(vec![0.0], 0.0, 0.05, vec![64], 1024, Boundary::ZeroExtend, |_, t| (-(t - 1.28).powi(2) / 0.02).exp()).unwrap();
    assert!(backend_gap(&smooth, 4).unwrap() <= 1e-3);
}

#[test]
fn weierstrass_b2_grows_with_octaves() {
    let nt = 4096usize;
    let hx = (2.0 * PI / nt as f64).sqrt();
    let mut last = 0.0;
    for j in 1..=5 {
        let f = GridFunction::from_fn(vec![0.0], 0.0, hx, vec![64], nt, Boundary::Periodic, |_, t| weierstrass(1.0, j, t)).unwrap();
        let b2 = certify_regular(&f, 0.1, 0.0).unwrap().b2;
        assert!(b2 > last, "J={j}: {b2} after {last}");
        last = b2;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn hat_gamma_ignores_added_spatial_affine(
        a0 in -3.0..3.0f64,
        a1 in -3.0..3.0f64,
        a2 in -3.0..3.0f64,
        w in 4usize..10,
        ci in 10usize..30,
        cj in 10usize..30,
    ) {
        let hx = 0.025;
        let base = |y: &[f64], t: f64| (7.0 * y[0] * t).sin() + (y[1] - 0.4).abs() * (3.0 * t).cos();
        let f = grid2(40, hx, base);
        let g = grid2(40, hx, |y, t| base(y, t) + a0 + a1 * y[0] + a2 * y[1]);
        let z = [ci as f64 * hx, cj as f64 * hx];
        let r = w as f64 * hx;
        let (u, v) = (hat_gamma(&f, &z, 0.5, r).unwrap(), hat_gamma(&g, &z, 0.5, r).unwrap());
        prop_assert!((u - v).abs() <= 1e-10, "{} vs {}", u, v);
    }
}
