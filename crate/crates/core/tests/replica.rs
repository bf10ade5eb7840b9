use polylab::environment::PotentialLaw;
use polylab::lattice::Site;
use polylab::poly::{Algebra, BasicPolys};
use polylab::polymer::ConeSpec;
use polylab::replica::*;

fn polys(law: PotentialLaw, beta: f64, n_max: usize) -> BasicPolys<f64> {
    let cone = ConeSpec::with_default_delta(vec![1.0, 0.0]).unwrap();
    BasicPolys::new(&cone, law, beta, 0.1, n_max).unwrap()
}

fn overlapping() -> Geometry {
    let x = Site::new(&[2, 0]);
    Geometry { x, y: x + Site::new(&[2, 1]), x_prime: x, y_prime: x + Site::new(&[3, 0]), ell: 2, m: 3, m_prime: 5 }
}

#[test]
fn randomized_suite_has_no_violations() {
    for law in [PotentialLaw::BernoulliTrap { p_inf: 0.3 }, PotentialLaw::Exponential { rate: 1.0 }] {
        let p = polys(law, 0.8, 6);
        let r = attractivity_suite(&p, 300, 8, 3, 5, 11);
        assert_eq!(r.violations(), 0, "{r:?}");
        assert_eq!(r.geometries, 300);
        assert!(r.disjoint_cases > 0);
        assert!(r.min_defect > -1e-12);
    }
}

#[test]
fn factorization_matches_brute_force() {
    let p = polys(PotentialLaw::BernoulliTrap { p_inf: 0.3 }, 1.0, 6);
    let g = overlapping();
    assert!(!g.disjoint(p.cone()));
    let algebras = [
        Algebra::HalfSpace { level: 3 },
        Algebra::HalfSpace { level: 4 },
        Algebra::Sites { sites: [Site::new(&[3, 0]), Site::new(&[4, 1])].into_iter().collect() },
    ];
    for a in &algebras {
        let exact = factorization_check(&p, &g, a);
        assert!(exact.value.abs() > 1e-6, "{a:?}");
        for seed in [None, Some(3), Some(8)] {
            let brute = factorization_enumerated(&p, &g, a, seed).unwrap();
            assert!((brute - exact.value).abs() <= 1e-12 * exact.value.abs().max(1.0), "{brute} vs {}", exact.value);
        }
    }
    // trivial and full algebras bracket it
    assert!(factorization_check(&p, &g, &Algebra::Trivial).value.abs() < 1e-15);
    assert!(factorization_check(&p, &g, &Algebra::Full).value > 0.0);
}

#[test]
fn factorization_vanishes_without_disorder() {
    let p = polys(PotentialLaw::BernoulliTrap { p_inf: 0.3 }, 0.0, 6);
    let f = factorization_check(&p, &overlapping(), &Algebra::HalfSpace { level: 3 });
    assert!(f.value.abs() < 1e-15);
}

#[test]
fn monotonicity_endpoints() {
    let p = polys(PotentialLaw::BernoulliTrap { p_inf: 0.3 }, 1.0, 6);
    let g = overlapping();
    let (l, r) = conditional_monotonicity_check(&p, &g, &Algebra::Full);
    assert!((l - r).abs() <= 1e-14 * r);
    let (l, r) = conditional_monotonicity_check(&p, &g, &Algebra::Trivial);
    let phi = p.phi();
    let tt = p.t(Site::ORIGIN, g.x, g.ell).expect_product(&p.t(Site::ORIGIN, g.x_prime, g.ell), phi);
    let fb = p.f(g.x, g.y, g.m).expect(phi) * p.f(g.x_prime, g.y_prime, g.m_prime).expect(phi);
    assert!((l - tt * fb).abs() <= 1e-14 * l);
    assert!(l < r);
}

#[test]
fn second_moments() {
    for (law, beta) in [
        (PotentialLaw::BernoulliTrap { p_inf: 0.3 }, 0.0),
        (PotentialLaw::Deterministic { v0: 0.5 }, 1.3),
    ] {
        let prof = second_moment_profile(&polys(law, beta, 4), &[0.4, 0.0], 4);
        assert!(!prof.entries.is_empty());
        for e in &prof.entries {
            assert!((e.second - e.product).abs() <= 1e-13 * e.product, "{e:?}");
        }
    }
    let prof = second_moment_profile(&polys(PotentialLaw::BernoulliTrap { p_inf: 0.1 }, 1.0, 5), &[0.4, 0.0], 5);
    assert_eq!(prof.violations, 0);
    assert!(prof.entries.iter().any(|e| e.second > e.product * 1.01));
}

#[test]
fn defect_moments() {
    let (m, e) = defect_moment(&PotentialLaw::Deterministic { v0: 0.7 }, 1.0, &[0.5, 0.0], 20, 2.0, 200, 4);
    assert_eq!((m, e), (1.0, 0.0));
    let (m, e) = defect_moment(&PotentialLaw::BernoulliTrap { p_inf: 0.2 }, 1.0, &[0.5, 0.0], 20, 1.0, 400, 4);
    assert!(m > 1.0 && e > 0.0);
}
