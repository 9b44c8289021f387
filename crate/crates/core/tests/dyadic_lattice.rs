use paracorona::dyadic::{DyadicTree, TreeOptions};
use paracorona::measure::{check_adr, MeasureKind};
use paracorona::metric::in_cube;
use paracorona::surfaces::{synthesize, SurfaceKind, SynthParams};
use paracorona::{io, Surface};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn surface(kind: SurfaceKind, n: usize, h: f64) -> Surface {
    synthesize(&SynthParams::new(kind, n, h, 1.0)).unwrap().0
}

fn tree(s: &Surface) -> DyadicTree {
    DyadicTree::build(s, TreeOptions::default()).unwrap()
}

#[test]
fn diameters_comparable_to_side() {
    // 10^4 samples of a t-plane.
    let s = surface(SurfaceKind::TPlane, 1, 0.01);
    assert!(s.len() >= 10_000);
    let t = tree(&s);
    let rep = t.report(&s);
    assert!(rep.c_star <= 8.0, "{}", rep.c_star);
    for c in &t.cubes {
        assert!(c.diam <= 8.0 * c.ell);
        if c.members_len > 1 {
            assert!(c.diam >= c.ell / 8.0, "cube {} diam {} side {}", c.id, c.diam, c.ell);
        }
    }
}

#[test]
fn single_point_is_one_root() {
    let s = Surface::new(2, 0.05, vec![0.3, 0.4], vec![0.1], vec![1.0]).unwrap();
    let t = tree(&s);
    assert_eq!(t.len(), 1);
    assert_eq!(t.roots.len(), 1);
    assert!(t.cube(0).children.is_empty());
}

#[test]
fn single_root_and_nesting() {
    let s = surface(SurfaceKind::RegularGraph, 2, 0.025);
    let t = tree(&s);
    assert_eq!(t.roots.len(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let q = rng.gen_range(0..t.len() as u32);
        let k = t.cube(q).k;
        for m in 0..k {
            let hits = t.generations[m as usize].iter().filter(|&&a| t.is_ancestor_or_self(a, q)).count();
            assert_eq!(hits, 1, "cube {q} generation {m}");
        }
    }
}

#[test]
fn generations_partition_the_mass() {
    let s = surface(SurfaceKind::Ridge, 2, 0.025);
    let t = tree(&s);
    let total = s.total_weight();
    for (k, gen) in t.generations.iter().enumerate() {
        let mass: f64 = gen.iter().map(|&q| t.cube(q).sigma).sum();
        assert!((mass - total).abs() <= 1e-12 * total, "generation {k}: {mass} vs {total}");
        let count: u32 = gen.iter().map(|&q| t.cube(q).members_len).sum();
        assert_eq!(count as usize, s.len());
    }
}

#[test]
fn containment_chain() {
    let s = surface(SurfaceKind::TPlane, 2, 0.025);
    let t = tree(&s);
    let rep = t.report(&s);
    assert!(rep.alpha > 0.0);
    for c in &t.cubes {
        let cx = s.x(c.center as usize);
        let ct = s.ts[c.center as usize];
        let members: std::collections::HashSet<u32> = t.members(c.id).iter().copied().collect();
        for p in s.index().collect_in_cube(cx, ct, rep.alpha * c.ell * 0.999) {
            assert!(members.contains(&p));
        }
        for &p in &members {
            assert!(in_cube(cx, ct, rep.c_star * c.ell * 1.001 + 1e-12, s.x(p as usize), s.ts[p as usize]));
        }
    }
}

#[test]
fn dilations_are_monotone() {
    let s = surface(SurfaceKind::RegularGraph, 2, 0.025);
    let t = tree(&s);
    for q in (0..t.len() as u32).step_by(3) {
        let c = t.cube(q);
        let one: std::collections::HashSet<u32> = t.dilate(&s, q, 1.0).into_iter().collect();
        let cx = s.x(c.center as usize);
        let ct = s.ts[c.center as usize];
        for &p in t.members(q) {
            if in_cube(cx, ct, c.diam, s.x(p as usize), s.ts[p as usize]) {
                assert!(one.contains(&p));
            }
        }
        let mut last = 0;
        for lam in [0.5, 1.0, 2.0, 4.0] {
            let d = t.dilate(&s, q, lam);
            assert!(d.len() >= last);
            last = d.len();
        }
    }
}

#[test]
fn dilated_mass_bounded_by_adr_constant() {
    let s = surface(SurfaceKind::TPlane, 2, 0.025);
    let t = tree(&s);
    let scales = [0.1, 0.15, 0.2, 0.3];
    let rep = check_adr(&s, MeasureKind::Weights, &scales, 100.0, 64).unwrap();
    let m = rep.density_max;
    for c in t.cubes.iter().filter(|c| c.diam >= 0.1) {
        let mass: f64 = t.dilate(&s, c.id, 2.0).iter().map(|&p| s.ws[p as usize]).sum();
        assert!(mass <= m * 8.0 * c.diam.powi(3), "cube {}: {mass}", c.id);
    }
}

#[test]
fn boundary_layers_shrink() {
    let s = surface(SurfaceKind::TPlane, 2, 0.025);
    let rep = tree(&s).report(&s);
    for (_, ratio) in &rep.boundary_layers {
        assert!(*ratio <= 1.0);
    }
    // Slope of log(ratio) against log(eta) over the measured decade.
    assert!(rep.gamma >= 0.5, "{}", rep.gamma);
}

#[test]
fn tree_bytes_are_reproducible() {
    let s = surface(SurfaceKind::Ridge, 2, 0.05);
    let a = tree(&s);
    let b = tree(&s);
    assert_eq!(io::tree_bytes(&a, &s), io::tree_bytes(&b, &s));
    assert_eq!(io::members_bytes(&a), io::members_bytes(&b));
}

#[test]
fn max_depth_caps_generations() {
    let s = surface(SurfaceKind::TPlane, 1, 0.005);
    let t = DyadicTree::build(&s, TreeOptions { max_depth: Some(1), ..Default::default() }).unwrap();
    assert_eq!(t.depth(), 1);
    let full = tree(&s);
    assert!(full.depth() > 1);
    // Finest generation stays at or above 20 spacings.
    let finest = full.generations.len() - 1;
    assert!(full.scale0 * 0.5f64.powi(finest as i32) >= 20.0 * s.spacing);
}
