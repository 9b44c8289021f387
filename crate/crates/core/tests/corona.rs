use paracorona::beta::{compute_beta_field, BetaField, BetaParams};
use paracorona::corona::{build_regimes, packing_constant, CoronaParams, CoronaResult, StopReason};
use paracorona::dyadic::{DyadicTree, TreeOptions};
use paracorona::surfaces::{synthesize, SurfaceKind, SynthParams};
use paracorona::{io, Error, Surface};

struct Run {
    s: Surface,
    t: DyadicTree,
    f: BetaField,
}

fn run(p: &SynthParams, bilateral: bool) -> Run {
    let (s, _) = synthesize(p).unwrap();
    let t = DyadicTree::build(&s, TreeOptions::default()).unwrap();
    let f = compute_beta_field(&s, &t, BetaParams { bilateral, ..Default::default() }).unwrap();
    Run { s, t, f }
}

/// A wide, thin slab: the spatial extent dwarfs the 8K windows of the
/// smallest resolved cubes.
fn wide(kind: SurfaceKind) -> SynthParams {
    let mut p = SynthParams::new(kind, 2, 0.1, 160.0);
    p.time_extent = Some(0.1);
    p.width = 8.0;
    p
}

fn corona(r: &Run, eps: f64, delta: f64, bilateral: bool) -> CoronaResult {
    let mut cp = CoronaParams::new(eps, delta);
    cp.bilateral = bilateral;
    build_regimes(&r.t, &r.f, cp).unwrap()
}

/// Coherence, disjoint cover and condition (A), checked from scratch.
fn check_structure(t: &DyadicTree, c: &CoronaResult, angle_bound: f64) {
    let mut owner = vec![None; t.len()];
    for s in &c.regimes {
        for &q in &s.members {
            assert!(owner[q as usize].is_none(), "cube {q} in two regimes");
            owner[q as usize] = Some(s.id);
        }
    }
    for &b in &c.bad {
        assert!(owner[b as usize].is_none(), "bad cube {b} also in a regime");
    }
    let covered = c.bad.len() + c.regimes.iter().map(|s| s.members.len()).sum::<usize>();
    assert_eq!(covered, t.len());
    for s in &c.regimes {
        // Unique maximal element: every other member has its parent inside.
        let tops: Vec<u32> = s.members.iter().copied().filter(|&q| t.cube(q).parent.is_none_or(|p| owner[p as usize] != Some(s.id))).collect();
        assert_eq!(tops, vec![s.root]);
        for &q in &s.members {
            // Ancestor-closed between q and the root.
            let mut a = q;
            while a != s.root {
                a = t.cube(a).parent.unwrap();
                assert_eq!(owner[a as usize], Some(s.id));
            }
            // Children all in or all out.
            let kids = &t.cube(q).children;
            let inside = kids.iter().filter(|&&k| owner[k as usize] == Some(s.id)).count();
            assert!(inside == 0 || inside == kids.len(), "regime {} splits the children of {q}", s.id);
            let ang = c.planes[q as usize].angle_to(&c.planes[s.root as usize]);
            assert!(ang <= angle_bound + c.params.angle_tol, "cube {q}: angle {ang}");
        }
    }
}

fn stop_certificates(t: &DyadicTree, c: &CoronaResult) {
    let bad: std::collections::HashSet<u32> = c.bad.iter().copied().collect();
    for s in &c.regimes {
        for &(q, why) in &s.minimal {
            match why {
                StopReason::BadChild => assert!(t.cube(q).children.iter().any(|k| bad.contains(k))),
                StopReason::Tilt => {
                    let a = c.planes[q as usize].angle_to(&c.planes[s.root as usize]);
                    assert!(a >= c.params.delta / 2.0 - 1e-6, "cube {q}: {a}");
                }
                _ => {}
            }
        }
    }
}

#[test]
fn plane_is_one_regime_per_root() {
    let r = run(&SynthParams::new(SurfaceKind::TPlane, 2, 0.025, 1.0), false);
    let c = corona(&r, 0.045, 0.9, false);
    for &b in &c.bad {
        assert!(!r.f.get(b).resolved, "resolved cube {b} is bad");
    }
    let good = r.f.records.iter().filter(|x| x.resolved).count();
    assert_eq!(c.regimes.len(), r.t.roots.len());
    assert_eq!(c.regimes.iter().map(|s| s.members.len()).sum::<usize>(), good);
    check_structure(&r.t, &c, c.params.delta);
}

#[test]
fn ridge_bad_cubes_follow_the_window() {
    // x2 = s |y1 - 80|. A window holding arms of length a on both sides of
    // the ridge forces a sup-fit half-width of at least s a / 2; a window
    // missing the ridge sees one exact line.
    let mut p = wide(SurfaceKind::Ridge);
    p.amplitude = 0.5;
    let r = run(&p, false);
    let eps = 0.02;
    let c = corona(&r, eps, 0.5, false);
    check_structure(&r.t, &c, 0.5);
    let (mut forced, mut free) = (0, 0);
    for cube in &r.t.cubes {
        if !r.f.get(cube.id).resolved {
            continue;
        }
        let x1 = r.s.x(cube.center as usize)[0];
        let w = 8.0 * r.f.params.k * cube.diam;
        let (lo, hi) = ((x1 - w).max(0.0), (x1 + w).min(p.extent));
        let arm = (80.0 - lo).min(hi - 80.0);
        let is_bad = c.assignment[cube.id as usize] < 0;
        if p.amplitude * arm / (2.0 * cube.diam) >= 1.01 * eps {
            forced += 1;
            assert!(is_bad, "cube {} at x1 = {x1} should be bad", cube.id);
        } else if arm < -r.s.spacing {
            free += 1;
            assert!(!is_bad, "cube {} at x1 = {x1} should be good", cube.id);
        }
    }
    assert!(forced > 0 && free > 0);
}

#[test]
fn beta_inf_stays_below_eleven_tenths_on_unit_patches() {
    for kind in [
        SurfaceKind::TPlane,
        SurfaceKind::TiltedPlane,
        SurfaceKind::LipGraph,
        SurfaceKind::RegularGraph,
        SurfaceKind::BentGraph,
        SurfaceKind::HoledPlane,
        SurfaceKind::Ridge,
        SurfaceKind::WeierstrassT,
    ] {
        let r = run(&SynthParams::new(kind, 2, 0.05, 1.0), false);
        let worst = r.f.records.iter().filter(|x| x.resolved).map(|x| x.beta_inf).fold(0.0, f64::max);
        assert!(worst < 1.1, "{kind:?}: {worst}");
    }
}

#[test]
fn bend_splits_into_regimes_by_angle() {
    // Total slope 0.15 = 3 delta / 2 spread over x1 in [76, 84].
    let mut p = wide(SurfaceKind::BentGraph);
    p.amplitude = 0.15;
    let delta = 0.1;
    let r = run(&p, false);
    let c = corona(&r, delta / 20.0, delta, false);
    check_structure(&r.t, &c, delta);
    stop_certificates(&r.t, &c);
    assert!(c.regimes.len() >= 2);
    let slope = |q: u32| {
        let nv = &c.planes[q as usize].normal;
        -nv[0] / nv[1]
    };
    let mut flat = 0;
    let mut steep = 0;
    for s in &c.regimes {
        for &q in &s.members {
            // The fitted slope lies in the range of the analytic slope over
            // the window.
            let x1 = r.s.x(r.t.cube(q).center as usize)[0];
            let w = 8.0 * r.f.params.k * r.t.cube(q).diam;
            let at = |y: f64| p.amplitude * paracorona::surfaces::smoothstep((y - 80.0) / p.width + 0.5);
            let (a, b) = (at(x1 - w), at(x1 + w));
            assert!(slope(q) >= a - 0.01 && slope(q) <= b + 0.01, "cube {q}: {} not in [{a}, {b}]", slope(q));
        }
        let x1 = r.s.x(r.t.cube(s.root).center as usize)[0];
        if slope(s.root).abs() < 0.01 {
            flat += 1;
            assert!(x1 < 80.0);
        } else if (slope(s.root) - p.amplitude).abs() < 0.01 {
            steep += 1;
            assert!(x1 > 80.0);
        }
    }
    assert!(flat > 0 && steep > 0, "flat {flat} steep {steep}");
}

#[test]
fn stop_reasons_are_certified() {
    for (kind, a) in [(SurfaceKind::RegularGraph, 0.05), (SurfaceKind::LipGraph, 0.2), (SurfaceKind::TiltedPlane, 0.2)] {
        let mut p = SynthParams::new(kind, 2, 0.025, 1.0);
        p.amplitude = a;
        let r = run(&p, false);
        for delta in [0.1, 0.4] {
            let c = corona(&r, delta / 20.0, delta, false);
            check_structure(&r.t, &c, delta);
            stop_certificates(&r.t, &c);
        }
    }
}

#[test]
fn packing_constant_examples() {
    let r = run(&SynthParams::new(SurfaceKind::Ridge, 2, 0.025, 1.0), false);
    let t = &r.t;
    for gen in &t.generations {
        assert!((packing_constant(t, gen) - 1.0).abs() < 1e-9);
    }
    let all: Vec<u32> = (0..t.len() as u32).collect();
    let g = t.generations.len() as f64;
    assert!((packing_constant(t, &all) - g).abs() < 1e-9 * g);
    assert_eq!(packing_constant(t, &[]), 0.0);
}

#[test]
fn ridge_packing_is_stable_under_refinement() {
    let mut v = Vec::new();
    for h in [0.05, 0.025] {
        let r = run(&SynthParams::new(SurfaceKind::Ridge, 2, h, 1.0), false);
        let c = corona(&r, 0.02, 0.4, false);
        let resolved_bad: Vec<u32> = c.bad.iter().copied().filter(|&q| r.f.get(q).resolved).collect();
        let k = packing_constant(&r.t, &resolved_bad);
        assert!((k - c.packing.bad).abs() < 1e-9, "{k} vs {}", c.packing.bad);
        v.push(k);
    }
    assert!(v[0] > 0.0 && v[1] <= 4.0 * v[0] && v[0] <= 4.0 * v[1], "{v:?}");
}

#[test]
fn bilateral_on_a_full_plane_matches_unilateral() {
    let r = run(&SynthParams::new(SurfaceKind::TPlane, 2, 0.05, 1.0), true);
    let uni = corona(&r, 0.005, 0.1, false);
    let bil = corona(&r, 0.005, 0.1, true);
    assert_eq!(uni.bad, bil.bad);
    assert_eq!(uni.regimes.len(), bil.regimes.len());
    for (a, b) in uni.regimes.iter().zip(&bil.regimes) {
        assert_eq!((a.root, &a.members), (b.root, &b.members));
    }
}

#[test]
fn bilateral_regimes_avoid_the_hole() {
    let mut p = wide(SurfaceKind::HoledPlane);
    p.hole_radius = 4.0;
    let r = run(&p, true);
    let delta = 0.1;
    let uni = corona(&r, delta / 20.0, delta, false);
    let bil = corona(&r, delta / 20.0, delta, true);
    check_structure(&r.t, &bil, 4.0 * delta);
    assert!(bil.regimes.len() >= uni.regimes.len());
    // The hole is centred at x1 = 80 and spans the whole time slab. A cube of
    // diameter at most twice the radius whose window holds the hole sees a
    // reverse gap of order the radius, far above epsilon.
    let mut near = 0;
    for s in &bil.regimes {
        for &q in &s.members {
            let c = r.t.cube(q);
            let x1 = r.s.x(c.center as usize)[0];
            let w = 8.0 * r.f.params.k * c.diam;
            if c.diam <= 2.0 * p.hole_radius {
                near += 1;
                assert!((x1 - 80.0).abs() >= w - p.hole_radius, "cube {q} at x1 = {x1} sees the hole");
            }
        }
    }
    assert!(near > 0);
}

#[test]
fn regime_count_grows_with_bilateral_split() {
    for kind in [SurfaceKind::RegularGraph, SurfaceKind::HoledPlane, SurfaceKind::Ridge] {
        let r = run(&SynthParams::new(kind, 2, 0.05, 1.0), true);
        let uni = corona(&r, 0.005, 0.1, false);
        let bil = corona(&r, 0.005, 0.1, true);
        assert!(bil.regimes.len() >= uni.regimes.len(), "{kind:?}");
    }
}

#[test]
fn corona_bytes_are_deterministic() {
    let r = run(&SynthParams::new(SurfaceKind::RegularGraph, 2, 0.05, 1.0), true);
    for bil in [false, true] {
        let a = io::corona_bytes(&corona(&r, 0.005, 0.1, bil));
        let b = io::corona_bytes(&corona(&r, 0.005, 0.1, bil));
        assert_eq!(a, b);
    }
}

#[test]
fn parameter_contract() {
    let r = run(&SynthParams::new(SurfaceKind::TPlane, 1, 0.02, 1.0), false);
    let err = build_regimes(&r.t, &r.f, CoronaParams::new(0.05, 0.1)).unwrap_err();
    assert!(matches!(&err, Error::Input(m) if m.contains("delta/20")), "{err}");
    let mut cp = CoronaParams::new(0.005, 0.1);
    cp.k = 3.0;
    assert!(build_regimes(&r.t, &r.f, cp).is_err());
    // Bilateral regimes need bilateral numbers.
    cp.k = 4.0;
    cp.bilateral = true;
    assert!(build_regimes(&r.t, &r.f, cp).is_err());
}
