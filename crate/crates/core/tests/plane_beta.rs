use paracorona::beta::{beta_comparison_audit, carleson_sum, compute_beta_field, gamma, spanning_points, square_function, BetaField, BetaParams};
use paracorona::dyadic::{DyadicTree, TreeOptions};
use paracorona::plane::{fit_t_plane_l2, fit_t_plane_l2_bruteforce, fit_t_plane_sup, weighted_covariance, Pts, TPlane};
use paracorona::surfaces::{synthesize, SurfaceKind, SynthParams};
use paracorona::{Error, Surface};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pts(n: usize, xs: &[f64], ws: &[f64]) -> Pts<'static> {
    let xs: &'static [f64] = Box::leak(xs.to_vec().into_boxed_slice());
    let ws: &'static [f64] = Box::leak(ws.to_vec().into_boxed_slice());
    Pts { n, xs, ws }
}

fn pipeline(p: &SynthParams, bilateral: bool) -> (Surface, DyadicTree, BetaField) {
    let (s, _) = synthesize(p).unwrap();
    let t = DyadicTree::build(&s, TreeOptions::default()).unwrap();
    let f = compute_beta_field(&s, &t, BetaParams { bilateral, ..Default::default() }).unwrap();
    (s, t, f)
}

fn sup_dist(plane: &TPlane, p: Pts) -> f64 {
    (0..p.len()).map(|i| plane.dist(p.x(i))).fold(0.0, f64::max)
}

#[test]
fn l2_fit_recovers_exact_plane() {
    let nu = [0.6, -0.8];
    let mut xs = Vec::new();
    for k in 0..50 {
        let u = k as f64 / 7.0;
        // points u * tangent + 0.3 * normal
        xs.extend_from_slice(&[0.8 * u + 0.3 * nu[0], 0.6 * u + 0.3 * nu[1]]);
    }
    let p = pts(2, &xs, &[1.0; 50]);
    let (pl, rms) = fit_t_plane_l2(p).unwrap();
    assert!(rms < 1e-12);
    assert!((pl.normal[0].abs() - 0.6).abs() < 1e-12 && (pl.normal[1].abs() - 0.8).abs() < 1e-12);
}

#[test]
fn l2_fit_of_two_symmetric_groups() {
    let mut xs = Vec::new();
    for k in 0..20 {
        let u = k as f64 / 19.0 * 4.0 - 2.0;
        xs.extend_from_slice(&[u, 1.0, u, -1.0]);
    }
    let p = pts(2, &xs, &[1.0; 40]);
    let (pl, rms) = fit_t_plane_l2(p).unwrap();
    assert!((rms - 1.0).abs() < 1e-12, "{rms}");
    assert!((pl.normal[1].abs() - 1.0).abs() < 1e-12 && pl.offset.abs() < 1e-12);
}

#[test]
fn l2_fit_matches_normal_grid_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in [2usize, 3] {
        let xs: Vec<f64> = (0..200 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ws: Vec<f64> = (0..200).map(|_| rng.gen_range(0.5..1.5)).collect();
        let p = pts(n, &xs, &ws);
        let (_, fit) = fit_t_plane_l2(p).unwrap();
        let (_, brute) = fit_t_plane_l2_bruteforce(p, 10_000);
        assert!(fit <= brute * (1.0 + 1e-12));
        assert!((brute - fit) / fit <= 0.01, "n={n}: {fit} vs {brute}");
    }
}

#[test]
fn l2_residual_is_smallest_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ws: Vec<f64> = (0..100).map(|_| rng.gen_range(0.1..2.0)).collect();
    let p = pts(3, &xs, &ws);
    let (pl, rms) = fit_t_plane_l2(p).unwrap();
    let (_, cov, _) = weighted_covariance(p);
    let lam = cov.symmetric_eigenvalues().min();
    assert!((rms * rms - lam).abs() <= 1e-10 * lam, "{} vs {lam}", rms * rms);
    let wsum: f64 = ws.iter().sum();
    let direct: f64 = (0..100).map(|i| ws[i] * pl.dist(p.x(i)).powi(2)).sum::<f64>() / wsum;
    assert!((direct - rms * rms).abs() <= 1e-10 * direct);
}

#[test]
fn degenerate_fit_is_reported() {
    // n = 3 with every point on one spatial line: rank 1 < n - 1.
    let mut xs = Vec::new();
    for k in 0..10 {
        let u = k as f64;
        xs.extend_from_slice(&[u, 2.0 * u, -u]);
    }
    assert!(matches!(fit_t_plane_l2(pts(3, &xs, &[1.0; 10])), Err(Error::DegenerateFit(_))));
}

#[test]
fn sup_fit_examples() {
    // A segment of length 20, long enough that the optimal strip stays
    // parallel to it once an outlier is added.
    let mut xs = Vec::new();
    for k in 0..41 {
        xs.extend_from_slice(&[k as f64 / 2.0 - 10.0, 0.25]);
    }
    let exact = pts(2, &xs, &[1.0; 41]);
    assert!(fit_t_plane_sup(exact, 20.0).unwrap().1 < 1e-12);
    // One outlier at distance 1 from the line x2 = 0.25, mid-span.
    xs.extend_from_slice(&[0.0, 1.25]);
    let out = pts(2, &xs, &[1.0; 42]);
    let (_, w) = fit_t_plane_sup(out, 20.0).unwrap();
    assert!((w - 0.5).abs() < 1e-3, "{w}");
}

#[test]
fn sup_fit_never_worse_than_l2_plane() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [1usize, 2, 3] {
        for _ in 0..20 {
            let xs: Vec<f64> = (0..60 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = pts(n, &xs, &[1.0; 60]);
            let (l2, _) = fit_t_plane_l2(p).unwrap_or((TPlane::new(vec![1.0; n], 0.0), 0.0));
            let (_, w) = fit_t_plane_sup(p, 2.0).unwrap();
            assert!(w <= sup_dist(&l2, p) + 1e-12);
        }
    }
}

#[test]
fn beta_on_planes_is_discretization_only() {
    for kind in [SurfaceKind::TPlane, SurfaceKind::TiltedPlane] {
        let (s, t, f) = pipeline(&SynthParams::new(kind, 2, 0.025, 1.0), false);
        for c in &t.cubes {
            let r = f.get(c.id);
            if r.resolved {
                assert!(r.beta_inf <= 2.0 * s.spacing / c.diam, "{kind:?} cube {}: {}", c.id, r.beta_inf);
            }
        }
    }
}

#[test]
fn small_cubes_are_unresolved() {
    let (s, t, f) = pipeline(&SynthParams::new(SurfaceKind::RegularGraph, 1, 0.01, 1.0), false);
    for c in &t.cubes {
        assert_eq!(f.get(c.id).resolved, c.diam >= 20.0 * s.spacing);
    }
}

#[test]
fn bilateral_numbers() {
    let (s, t, f) = pipeline(&SynthParams::new(SurfaceKind::TPlane, 2, 0.025, 1.0), true);
    for c in &t.cubes {
        let r = f.get(c.id);
        let b = r.bbeta_inf.unwrap();
        assert!(b >= r.beta_inf);
        if r.resolved {
            assert!(b <= 4.0 * s.spacing / c.diam, "cube {}: {b}", c.id);
        }
    }
    // A parabolic hole of radius 0.3 centred at ((0.5, 0), 0.5); cubes of
    // diameter up to twice the radius see it in their window.
    let mut p = SynthParams::new(SurfaceKind::HoledPlane, 2, 0.025, 1.0);
    p.hole_radius = 0.3;
    let (s, t, f) = pipeline(&p, true);
    let mut seen = 0;
    for c in &t.cubes {
        let r = f.get(c.id);
        assert!(r.bbeta_inf.unwrap() >= r.beta_inf);
        if r.resolved && c.diam <= 2.0 * p.hole_radius {
            seen += 1;
            assert!(r.beta_inf <= 2.0 * s.spacing / c.diam);
            let expect = (p.hole_radius - 2.0 * s.spacing) / c.diam;
            assert!(r.bbeta_inf.unwrap() >= 0.5 * expect, "cube {}: {:?} vs {expect}", c.id, r.bbeta_inf);
        }
    }
    assert!(seen > 0);
}

#[test]
fn square_function_on_plane_vanishes() {
    for h in [0.05, 0.025] {
        let (s, _) = synthesize(&SynthParams::new(SurfaceKind::TPlane, 2, h, 1.0)).unwrap();
        let t = DyadicTree::build(&s, TreeOptions::default()).unwrap();
        let sq = square_function(&s, &t);
        assert!(sq.nu_norm <= (h / (20.0 * h)).powi(2), "{}", sq.nu_norm);
    }
}

#[test]
fn gamma_at_a_ridge_corner() {
    // x2 = a |x1 - 1/2|: on a cube centred at the corner the best line is
    // horizontal at height a r / 2 with rms residual a r / sqrt(12).
    let p = SynthParams::new(SurfaceKind::Ridge, 2, 0.01, 1.0);
    let (s, _) = synthesize(&p).unwrap();
    let expect = p.amplitude / 12f64.sqrt();
    for r in [0.2, 0.3, 0.4] {
        let g = gamma(&s, &[0.5, 0.0], 0.5, r);
        assert!(g <= 2.0 * expect && g >= expect / 2.0, "r={r}: {g} vs {expect}");
    }
    let flat = gamma(&s, &[0.15, 0.35 * p.amplitude], 0.5, 0.1);
    assert!(flat < 1e-6, "{flat}");
}

#[test]
fn carleson_constant_stable_across_roots() {
    let mut p = SynthParams::new(SurfaceKind::RegularGraph, 1, 0.01, 1.0);
    p.frequency = 4.0 * std::f64::consts::PI;
    let (_, t, f) = pipeline(&p, false);
    let (ratios, max) = carleson_sum(&t, &f);
    let roots: Vec<u32> = t.generations.iter().find(|g| g.len() >= 10).unwrap().iter().copied().filter(|&q| f.get(q).resolved).collect();
    assert!(roots.len() >= 10);
    let vals: Vec<f64> = roots.iter().map(|&q| ratios[q as usize]).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(0.0, f64::max);
    assert!(lo > 0.0 && hi / lo <= 4.0, "{lo} {hi}");
    assert!(max >= hi);
}

#[test]
fn comparison_audit_fits_one_constant() {
    let (s, t, f) = pipeline(&SynthParams::new(SurfaceKind::LipGraph, 2, 0.025, 1.0), false);
    let a = beta_comparison_audit(&s, &t, &f, 1.0);
    assert!(a.pairs > 0);
    assert!(a.c_fitted.is_finite());
}

#[test]
fn beta2_bounded_by_beta_inf_and_window_mass() {
    let (s, t, f) = pipeline(&SynthParams::new(SurfaceKind::LipGraph, 2, 0.025, 1.0), false);
    for c in &t.cubes {
        let r = f.get(c.id);
        let diam = c.diam.max(s.spacing);
        let mass: f64 = t.dilate(&s, c.id, 32.0).iter().map(|&p| s.ws[p as usize]).sum();
        let bound = r.beta_inf * (mass / diam.powi(3)).sqrt();
        assert!(r.beta2 <= bound * (1.0 + 1e-9) + 1e-15, "cube {}: {} > {bound}", c.id, r.beta2);
    }
}

#[test]
fn larger_window_plane_dominates() {
    let p = SynthParams::new(SurfaceKind::LipGraph, 2, 0.025, 1.0);
    let (s, _) = synthesize(&p).unwrap();
    let t = DyadicTree::build(&s, TreeOptions::default()).unwrap();
    let small = compute_beta_field(&s, &t, BetaParams { k: 2.0, ..Default::default() }).unwrap();
    let large = compute_beta_field(&s, &t, BetaParams { k: 4.0, ..Default::default() }).unwrap();
    for c in &t.cubes {
        let plane = &large.get(c.id).plane;
        let sup = t.dilate(&s, c.id, 16.0).iter().map(|&q| plane.dist(s.x(q as usize))).fold(0.0, f64::max);
        assert!(small.get(c.id).beta_inf <= sup / c.diam.max(s.spacing) + 1e-12);
    }
}

#[test]
fn spanning_points_on_plane_and_line() {
    let (s, t, _) = pipeline(&SynthParams::new(SurfaceKind::TiltedPlane, 2, 0.025, 1.0), false);
    for c in &t.cubes {
        let (ids, ratio) = spanning_points(&s, &t, c.id);
        assert!(ratio > 0.0 && 1.0 / ratio <= 8.0, "cube {}: A = {}", c.id, 1.0 / ratio);
        let members: std::collections::HashSet<u32> = t.members(c.id).iter().copied().collect();
        assert!(ids.iter().all(|p| members.contains(p)));
    }
    // n = 3 samples on one spatial line cannot span a 2-plane.
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    for j in 0..40 {
        for k in 0..20 {
            let u = k as f64 * 0.05;
            xs.extend_from_slice(&[u, u, 0.0]);
            ts.push(j as f64 * 0.0025);
        }
    }
    let len = ts.len();
    let line = Surface::new(3, 0.05, xs, ts, vec![1.0; len]).unwrap();
    let lt = DyadicTree::build(&line, TreeOptions::default()).unwrap();
    let (ids, ratio) = spanning_points(&line, &lt, 0);
    assert_eq!(ratio, 0.0);
    assert_eq!(ids.len(), 2);
}

#[test]
fn plane_angles() {
    let a = TPlane::new(vec![1.0, 0.0], 0.0);
    let b = TPlane::new(vec![0.0, 1.0], 0.3);
    assert_eq!(a.angle_to(&a), 0.0);
    assert!((a.angle_to(&b) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    // Two fits of eps-perturbed copies of one segment of length 1.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut c = 0.0f64;
    for eps in [0.001, 0.01, 0.05] {
        let base: Vec<f64> = (0..100).flat_map(|k| [k as f64 / 99.0, 0.0]).collect();
        let jitter = |rng: &mut ChaCha8Rng| -> Vec<f64> { base.chunks(2).flat_map(|p| [p[0], p[1] + rng.gen_range(-eps..eps)]).collect() };
        let (p1, _) = fit_t_plane_sup(pts(2, &jitter(&mut rng), &[1.0; 100]), 1.0).unwrap();
        let (p2, _) = fit_t_plane_sup(pts(2, &jitter(&mut rng), &[1.0; 100]), 1.0).unwrap();
        c = c.max(p1.angle_to(&p2) / eps);
    }
    // Lever arm: a tilt by 2 eps over half the length.
    assert!(c <= 8.0, "{c}");
}

fn rotate(s: &Surface, th: f64) -> Surface {
    let (cs, sn) = (th.cos(), th.sin());
    let xs: Vec<f64> = s.xs.chunks(2).flat_map(|p| [cs * p[0] - sn * p[1], sn * p[0] + cs * p[1]]).collect();
    Surface::new(2, s.spacing, xs, s.ts.clone(), s.ws.clone()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn betas_invariant_under_symmetries(th in 0.0..std::f64::consts::TAU, shift in -4i32..4, seed in 0u64..4) {
        let mut p = SynthParams::new(SurfaceKind::LipGraph, 2, 0.05, 1.0);
        p.seed = seed;
        let (s, t, f) = pipeline(&p, false);
        let moved = Surface::new(2, s.spacing, s.xs.clone(), s.ts.iter().map(|v| v + shift as f64).collect(), s.ws.clone()).unwrap();
        let turned = rotate(&s, th);
        for other in [moved, turned] {
            let g = compute_beta_field(&other, &t, BetaParams::default()).unwrap();
            for (a, b) in f.records.iter().zip(&g.records) {
                prop_assert!((a.beta_inf - b.beta_inf).abs() <= 1e-6 * a.beta_inf.max(1e-3));
                prop_assert!((a.beta2 - b.beta2).abs() <= 1e-9 * a.beta2.max(1e-3));
            }
        }
        // (X, t) -> (2X, 4t) with spacing doubled: the tree scales exactly.
        let dil = Surface::new(2, 2.0 * s.spacing, s.xs.iter().map(|v| 2.0 * v).collect(), s.ts.iter().map(|v| 4.0 * v).collect(), s.ws.iter().map(|w| 8.0 * w).collect()).unwrap();
        let dt = DyadicTree::build(&dil, TreeOptions::default()).unwrap();
        prop_assert_eq!(dt.len(), t.len());
        let g = compute_beta_field(&dil, &dt, BetaParams::default()).unwrap();
        for (a, b) in f.records.iter().zip(&g.records) {
            prop_assert!((a.beta_inf - b.beta_inf).abs() <= 1e-9 * a.beta_inf.max(1e-3));
            prop_assert!((a.beta2 - b.beta2).abs() <= 1e-9 * a.beta2.max(1e-3));
        }
    }
}
