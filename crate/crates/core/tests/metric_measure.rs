use paracorona::measure::{check_adr, estimate_hausdorff_p, estimate_slicewise, MeasureKind, Region};
use paracorona::metric::{dist_p, dist_pts, in_cube, try_dist_pts, StPoint};
use paracorona::surfaces::{synthesize, SurfaceKind, SynthParams};
use paracorona::{Error, Surface};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plane(n: usize, h: f64) -> Surface {
    synthesize(&SynthParams::new(SurfaceKind::TPlane, n, h, 1.0)).unwrap().0
}

#[test]
fn dist_p_examples() {
    let p = |x: &[f64], t| StPoint::new(x.to_vec(), t);
    assert_eq!(dist_pts(&p(&[3.0, 4.0], 0.0), &p(&[0.0, 0.0], 0.0)), 5.0);
    assert_eq!(dist_pts(&p(&[1.0, 2.0], 9.0), &p(&[1.0, 2.0], 0.0)), 3.0);
    assert_eq!(dist_pts(&p(&[1.0, 0.0], 4.0), &p(&[0.0, 0.0], 0.0)), 3.0);
    assert!(matches!(try_dist_pts(&p(&[1.0], 0.0), &p(&[1.0, 2.0], 0.0)), Err(Error::Input(_))));
}

#[test]
fn parabolic_ball_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 2;
    let count = 1000;
    let xs: Vec<f64> = (0..count * n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ts: Vec<f64> = (0..count).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s = Surface::new(n, 0.01, xs, ts, vec![1.0; count]).unwrap();
    for _ in 0..200 {
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.2..1.2)).collect();
        let ct = rng.gen_range(-0.2..1.2);
        let r = rng.gen_range(0.001..0.6);
        let mut fast = s.index().collect_in_cube(&c, ct, r);
        fast.sort_unstable();
        let slow: Vec<u32> = (0..count).filter(|&i| in_cube(&c, ct, r, s.x(i), s.ts[i])).map(|i| i as u32).collect();
        assert_eq!(fast, slow);
    }
    // A cube of radius below spacing/10 around an off-surface center is empty.
    let p = plane(2, 0.05);
    assert!(p.index().collect_in_cube(&[0.5, 0.3], 0.5, 0.004).is_empty());
    let whole = Region::whole(&p);
    assert!(!whole.members(&p).is_empty());
}

#[test]
fn hausdorff_on_plane_patch() {
    // Lebesgue mass of the unit patch is L * L^2 = 1.
    let s = plane(2, 0.05);
    let v = estimate_hausdorff_p(&s, &Region::whole(&s), 0.1).unwrap().value;
    assert!((0.25..=4.0).contains(&v), "{v}");
    let s1 = plane(1, 0.01);
    let v1 = estimate_hausdorff_p(&s1, &Region::whole(&s1), 0.02).unwrap().value;
    assert!((0.25..=4.0).contains(&v1), "{v1}");
}

#[test]
fn hausdorff_trivial_cases() {
    let s = plane(2, 0.05);
    let empty = Region::new(StPoint::new(vec![5.0, 5.0], 5.0), 0.1);
    assert_eq!(estimate_hausdorff_p(&s, &empty, 0.1).unwrap().value, 0.0);
    let one = Surface::new(2, 0.05, vec![0.0, 0.0], vec![0.0], vec![1.0]).unwrap();
    let v = estimate_hausdorff_p(&one, &Region::whole(&one), 0.2).unwrap().value;
    assert!(v <= 0.2f64.powi(3), "{v}");
    assert!(matches!(estimate_hausdorff_p(&s, &Region::whole(&s), 0.05), Err(Error::Precondition(_))));
}

#[test]
fn slicewise_on_plane_patch() {
    let s = plane(2, 0.05);
    let v = estimate_slicewise(&s, &Region::whole(&s), 0.0025, 0.1).unwrap().value;
    assert!((0.25..=4.0).contains(&v), "{v}");
    // A region inside one slab is the slab width times the slice length.
    let row = Region::new(StPoint::new(vec![0.5, 0.0], 0.5), 0.6);
    let one = estimate_slicewise(&s, &Region::new(row.center.clone(), 0.04), 0.0025, 0.1).unwrap();
    assert_eq!(one.n_cover, 1);
    assert!(matches!(estimate_slicewise(&s, &Region::whole(&s), 0.001, 0.1), Err(Error::Precondition(_))));
}

#[test]
fn cantor_slicewise_decays_while_hausdorff_stays() {
    let mut last = f64::INFINITY;
    for g in 2..=4 {
        let mut p = SynthParams::new(SurfaceKind::CantorProduct, 1, 1.0, 1.0);
        p.generations = g;
        let (s, _) = synthesize(&p).unwrap();
        let r = Region::whole(&s);
        let h = estimate_hausdorff_p(&s, &r, 2.0 * s.spacing).unwrap().value;
        let mu = estimate_slicewise(&s, &r, s.spacing * s.spacing, 1.0).unwrap().value;
        assert!(h >= 0.5, "g={g} H_p={h}");
        assert!(mu < last, "g={g} mu={mu} last={last}");
        last = mu;
    }
    assert!(last <= 0.2, "{last}");
}

#[test]
fn adr_on_plane_over_two_decades() {
    let s = plane(1, 0.0025);
    let scales: Vec<f64> = (0..=8).map(|k| 0.005 * 10f64.powf(k as f64 / 4.0)).filter(|&r| r <= 0.45).collect();
    let rep = check_adr(&s, MeasureKind::Weights, &scales, 4.0, 64).unwrap();
    assert!(rep.passes, "{:?}", rep.violations.first());
    assert!(rep.ratio <= 4.0, "{}", rep.ratio);
    assert!(rep.scales.last().unwrap() / rep.scales[0] >= 50.0);
}

#[test]
fn time_segment_is_not_three_dimensional() {
    // A pure time line in R^2 x R has mass ~ r^2 in C_r, not r^3.
    let h = 0.02;
    let rows = (1.0 / (h * h)) as usize + 1;
    let ts: Vec<f64> = (0..rows).map(|j| j as f64 * h * h).collect();
    let s = Surface::new(2, h, vec![0.0; 2 * rows], ts, vec![h * h; rows]).unwrap();
    let rep = check_adr(&s, MeasureKind::Weights, &[0.04, 0.08, 0.16, 0.32], 4.0, 64).unwrap();
    assert!(!rep.passes);
    assert!(rep.density_max / rep.density_min >= 4.0);
}

#[test]
fn graph_adr_close_to_plane() {
    let scales = [0.2, 0.25, 0.3, 0.4];
    let pl = plane(2, 0.025);
    let mut p = SynthParams::new(SurfaceKind::RegularGraph, 2, 0.025, 1.0);
    p.amplitude = 0.01;
    let (g, _) = synthesize(&p).unwrap();
    let a = check_adr(&pl, MeasureKind::Weights, &scales, 8.0, 64).unwrap();
    let b = check_adr(&g, MeasureKind::Weights, &scales, 8.0, 64).unwrap();
    let m_plane = a.density_max.max(1.0 / a.density_min);
    let m_graph = b.density_max.max(1.0 / b.density_min);
    assert!(m_graph <= 2.0 * m_plane, "{m_graph} vs {m_plane}");
}

#[test]
fn mu_below_hausdorff_on_battery() {
    for (kind, n, h) in [
        (SurfaceKind::TPlane, 1, 0.01),
        (SurfaceKind::TPlane, 2, 0.05),
        (SurfaceKind::RegularGraph, 2, 0.05),
        (SurfaceKind::Ridge, 2, 0.05),
        (SurfaceKind::HoledPlane, 2, 0.05),
    ] {
        let (s, _) = synthesize(&SynthParams::new(kind, n, h, 1.0)).unwrap();
        let r = Region::whole(&s);
        let hp = estimate_hausdorff_p(&s, &r, 2.0 * h).unwrap().value;
        let mu = estimate_slicewise(&s, &r, h * h, 2.0 * h).unwrap().value;
        assert!(mu <= 8f64.powi(n as i32 + 1) * hp, "{kind:?}: {mu} vs {hp}");
    }
}

#[test]
fn hausdorff_is_monotone_in_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let count = 600;
    let xs: Vec<f64> = (0..count * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ts: Vec<f64> = (0..count).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s = Surface::new(2, 0.02, xs, ts, vec![1.0; count]).unwrap();
    let r = Region::whole(&s);
    let mut last = f64::INFINITY;
    for k in 0..12 {
        let v = estimate_hausdorff_p(&s, &r, 0.04 * 1.3f64.powi(k)).unwrap().value;
        assert!(v <= last, "scale step {k}: {v} > {last}");
        last = v;
    }
}

#[test]
fn projection_onto_t_plane_does_not_increase() {
    // Points of a graph over the x1 axis, projected to x2 = 0.
    let mut p = SynthParams::new(SurfaceKind::RegularGraph, 2, 0.05, 1.0);
    p.amplitude = 0.05;
    let (g, _) = synthesize(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let c = rng.gen_range(0..g.len());
        let ids = g.index().collect_in_cube(g.x(c), g.ts[c], rng.gen_range(0.15..0.4));
        let a = g.subset(&ids).unwrap();
        let mut xs = a.xs.clone();
        for k in 0..a.len() {
            xs[2 * k + 1] = 0.0;
        }
        let b = Surface::new(2, a.spacing, xs, a.ts.clone(), a.ws.clone()).unwrap();
        let va = estimate_hausdorff_p(&a, &Region::whole(&a), 0.1).unwrap().value;
        let vb = estimate_hausdorff_p(&b, &Region::whole(&b), 0.1).unwrap().value;
        assert!(vb <= 1.01 * va, "{vb} vs {va}");
    }
}

proptest! {
    #[test]
    fn dist_p_is_a_metric(
        a in prop::collection::vec(-5.0..5.0f64, 3),
        b in prop::collection::vec(-5.0..5.0f64, 3),
        c in prop::collection::vec(-5.0..5.0f64, 3),
    ) {
        let d = |u: &[f64], v: &[f64]| dist_p(&u[..2], u[2], &v[..2], v[2]);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert_eq!(d(&a, &a), 0.0);
        if a != b {
            prop_assert!(d(&a, &b) > 0.0);
        }
    }
}
