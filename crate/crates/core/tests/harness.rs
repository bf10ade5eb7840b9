use polylab::environment::{ensemble_seed, sample_environment, Environment, Homogeneous, PotentialLaw, SampledField};
use polylab::exactenum::{enumerate_basic, Disorder, EnumLimits};
use polylab::harness::*;
use polylab::lattice::Site;
use polylab::poly::{atoms, for_each_config, Algebra, BasicPolys};
use polylab::polymer::ConeSpec;
use polylab::renewal::{speed_and_diffusivity, IrreducibleLaw};
use polylab::transfer::{dp_quenched, mean_stderr, DpOptions};
use polylab::Error;

fn trap_setup(p: f64, n_max: usize) -> (BasicPolys<f64>, f64) {
    trap_setup_h(p, 1.0, n_max)
}

fn trap_setup_h(p: f64, h: f64, n_max: usize) -> (BasicPolys<f64>, f64) {
    let law = PotentialLaw::BernoulliTrap { p_inf: p };
    let cone = ConeSpec::with_default_delta(vec![h, 0.0]).unwrap();
    let (_, f) = enumerate_basic(&Disorder::Annealed(law), &cone, 1.0, 0.0, 10, &EnumLimits::default()).unwrap();
    let irr = IrreducibleLaw::from_irreducible(&f, 10).unwrap();
    let model = speed_and_diffusivity(&irr);
    (BasicPolys::new(&cone, law, 1.0, irr.lambda(), n_max).unwrap(), model.v[0])
}

#[test]
fn conditional_expectation_trivial_cases() {
    let (polys, _) = trap_setup(0.2, 6);
    let env: Environment<f64> = sample_environment(polys.law(), 2, 12, 5).unwrap();
    let x = Site::new(&[2, 1]);
    let y = Site::new(&[3, 0]);
    // region inside the algebra: the quenched weight itself
    let (_, fq) = enumerate_basic(&Disorder::quenched(&env).at(x), polys.cone(), 1.0, polys.lambda(), 3, &EnumLimits::default())
        .unwrap();
    let c = cond_expect_f(&polys, &env, x, y, 3, &Algebra::Full, CondMode::Exact).unwrap();
    assert!((c.value - fq.get(3, &y)).abs() <= 1e-14);
    let mc = cond_expect_f(&polys, &env, x, y, 3, &Algebra::Full, CondMode::MonteCarlo { samples: 50, seed: 1 }).unwrap();
    assert_eq!(mc.stderr, 0.0);
    assert!((mc.value - c.value).abs() <= 1e-14);
    // region outside: the annealed weight
    let (_, fa) = enumerate_basic(&Disorder::Annealed(*polys.law()), polys.cone(), 1.0, polys.lambda(), 3, &EnumLimits::default())
        .unwrap();
    let c = cond_expect_f(&polys, &env, x, y, 3, &Algebra::HalfSpace { level: 2 }, CondMode::Exact).unwrap();
    assert_eq!(c.free_sites, polys.f(x, x + y, 3).sites().len());
    assert!((c.value - fa.get(3, &y)).abs() <= 1e-14);
}

#[test]
fn straddling_target_matches_exhaustive_average() {
    // shortest irreducible pieces in two dimensions have three steps
    let (polys, _) = trap_setup(0.2, 6);
    let x = Site::new(&[1, 0]);
    let y = Site::new(&[2, 1]);
    let a = Algebra::HalfSpace { level: 2 };
    let f = polys.f(x, x + y, 3);
    let sites: Vec<Site> = f.sites().into_iter().collect();
    let fixed: Vec<Site> = sites.iter().copied().filter(|s| a.contains(s)).collect();
    assert!(!fixed.is_empty() && fixed.len() < sites.len(), "target must straddle the boundary");
    let at = atoms::<f64>(polys.law()).unwrap();
    let mut tower = 0.0;
    for_each_config(&fixed, &at, |vals, p| {
        let mut env = Environment::constant(2, 8, 0.0).unwrap();
        for (s, v) in fixed.iter().zip(vals) {
            env.set(s, *v).unwrap();
        }
        let exact = cond_expect_f(&polys, &env, x, y, 3, &a, CondMode::Exact).unwrap();
        let brute = cond_expect_f(&polys, &env, x, y, 3, &a, CondMode::Enumerate).unwrap();
        assert!((exact.value - brute.value).abs() <= 1e-14);
        tower += p * exact.value;
    })
    .unwrap();
    let fbar = f.expect(polys.phi());
    assert!(fbar > 0.0 && (tower - fbar).abs() <= 1e-12);
}

#[test]
fn enumeration_capacity_and_monte_carlo() {
    let law = PotentialLaw::BernoulliTrap { p_inf: 0.2 };
    let cone = ConeSpec::with_default_delta(vec![1.0, 0.0, 0.0]).unwrap();
    let polys = BasicPolys::new(&cone, law, 1.0, 0.0, 7).unwrap();
    let env: Environment<f64> = sample_environment(&law, 3, 10, 2).unwrap();
    let y = Site::new(&[3, 0, 0]);
    assert!(polys.f(Site::ORIGIN, y, 7).sites().len() > 24);
    let r = cond_expect_f(&polys, &env, Site::ORIGIN, y, 7, &Algebra::Trivial, CondMode::Enumerate);
    assert!(matches!(r, Err(Error::Capacity { what: "free sites", .. })), "{r:?}");
    let exact = cond_expect_f(&polys, &env, Site::ORIGIN, y, 7, &Algebra::Trivial, CondMode::Exact).unwrap();
    let mc = cond_expect_f(&polys, &env, Site::ORIGIN, y, 7, &Algebra::Trivial, CondMode::MonteCarlo { samples: 4000, seed: 7 })
        .unwrap();
    assert!(mc.stderr > 0.0 && (mc.value - exact.value).abs() <= 4.0 * mc.stderr, "{} vs {}", mc.value, exact.value);
}

#[test]
fn irreducible_fluctuation_has_mean_zero() {
    let (polys, _) = trap_setup(0.2, 4);
    let fbar = polys.f_total(Site::ORIGIN, 4).expect(polys.phi());
    let xs: Vec<f64> = (0..400)
        .map(|i| {
            let field = SampledField::new(*polys.law(), 2, 6, ensemble_seed(31, i)).unwrap();
            polys.f_total(Site::ORIGIN, 4).evaluate(&field, 1.0).unwrap() - fbar
        })
        .collect();
    let (m, e) = mean_stderr(&xs);
    assert!(e > 0.0 && m.abs() <= 3.0 * e, "{m} ± {e}");
}

#[test]
fn mixingale_profile_shape() {
    let (polys, v) = trap_setup_h(0.2, 2.0, 6);
    let p = mixingale_profile(&polys, v, 4, 2, 14, Some((40, 3))).unwrap();
    for w in p.lower.windows(2).chain(p.upper.windows(2)) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12));
    }
    assert!(p.lower[0] > 0.0 && p.upper[0] > 0.0);
    assert_eq!(*p.lower.last().unwrap(), 0.0);
    assert_eq!(*p.upper.last().unwrap(), 0.0);
    let ens = p.lower_ensemble.as_ref().unwrap();
    assert_eq!(ens.last().unwrap().0, 0.0);
    // ensemble agrees with the exact moments
    for (e, x) in ens.iter().zip(&p.lower) {
        assert!((e.0 - x).abs() <= 4.0 * e.1 + 1e-15);
    }
    // no disorder, no fluctuation
    let free = BasicPolys::new(polys.cone(), *polys.law(), 0.0, 0.0, 6).unwrap();
    let p = mixingale_profile(&free, 0.5, 4, 2, 6, None).unwrap();
    assert!(p.lower.iter().chain(&p.upper).all(|&x| x == 0.0));
}

#[test]
fn s_series_without_disorder_is_one() {
    let cone = ConeSpec::with_default_delta(vec![0.8, 0.0]).unwrap();
    for (law, beta) in [("bernoulli:p=0.2", 0.0), ("det:v=0.5", 0.7)] {
        let law: PotentialLaw = law.parse().unwrap();
        let (_, f) = enumerate_basic(&Disorder::Annealed(law), &cone, beta, 0.0, 8, &EnumLimits::default()).unwrap();
        let irr = IrreducibleLaw::from_irreducible(&f, 8).unwrap();
        let model = speed_and_diffusivity(&irr);
        let polys = BasicPolys::new(&cone, law, beta, irr.lambda(), 4).unwrap();
        let field = SampledField::new(law, 2, 20, 9).unwrap();
        let s = s_series(&field, 9, &polys, &model, 12, 4).unwrap();
        assert!(s.s.iter().all(|x| (x - 1.0).abs() <= 1e-12), "{law}: {:?}", s.s);
        assert!(s.companion.iter().all(|c| c.is_finite() && *c > 0.0));
    }
}

#[test]
fn s_series_is_stable_in_four_dimensions() {
    let law: PotentialLaw = "bernoulli:p=0.02".parse().unwrap();
    let cone = ConeSpec::with_default_delta(vec![0.8, 0.0, 0.0, 0.0]).unwrap();
    let beta = 0.2;
    let (_, f) = enumerate_basic(&Disorder::Annealed(law), &cone, beta, 0.0, 6, &EnumLimits::default()).unwrap();
    let irr = IrreducibleLaw::from_irreducible(&f, 6).unwrap();
    let model = speed_and_diffusivity(&irr);
    let polys = BasicPolys::new(&cone, law, beta, irr.lambda(), 3).unwrap();
    let (res, runs) = s_series_ensemble(&law, &polys, &model, 8, 3, 50, 17).unwrap();
    assert_eq!(runs.len(), 50);
    let var = |k: usize| {
        let xs: Vec<f64> = runs.iter().map(|r| r.s[k]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (m4, m8) = (res.value[4], res.value[8]);
    assert!((m8 - m4).abs() <= 3.0 * (res.err[4] + res.err[8]), "{m4} vs {m8}");
    assert!(var(8).is_finite() && var(8) <= 2.0 * var(4) + 1e-12);
}

fn free_constants(t: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let c = t.cosh() + 1.0;
    let v1 = t.sinh() / c;
    ([v1, 0.0], [[t.cosh() / c - v1 * v1, 0.0], [0.0, 1.0 / c]])
}

#[test]
fn quenched_clt_at_zero_disorder() {
    let env = Homogeneous { dims: 2, v: 0.0 };
    let (v, s) = free_constants(1.0);
    let sigma = vec![s[0].to_vec(), s[1].to_vec()];
    let alphas = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, -1.0], vec![-0.5, 1.0]];
    let run = dp_quenched(&env, &[1.0, 0.0], 0.0, 400, &DpOptions::default()).unwrap();
    let q = quenched_clt(&[run.last()], &v, &sigma, &alphas);
    assert_eq!(q.alphas[0].ratios[0].re, 1.0);
    assert_eq!(q.alphas[0].ratios[0].im, 0.0);
    let (a, b) = (q.alphas[2].ratios[0], q.alphas[3].ratios[0]);
    assert!((a - b.conj()).norm() <= 1e-12);
    for al in &q.alphas {
        assert!(al.deviation.median <= 1.0 / 20.0, "{al:?}");
    }
}

#[test]
fn lln_tails() {
    let env = Homogeneous { dims: 2, v: 0.0 };
    let (v, _) = free_constants(1.0);
    let h = [1.0, 0.0];
    let opts = DpOptions { keep: vec![200, 400], ..Default::default() };
    let run = dp_quenched(&env, &h, 0.0, 400, &opts).unwrap();
    let far = empirical_lln(&[run.slice(400).unwrap()], &v, 1.0 + v[0] + 1e-9);
    assert_eq!(far.tails[0], 0.0);
    // the large-deviation rate along e1 beyond v + eps
    let eps = 0.25;
    let t1 = empirical_lln(&[run.slice(200).unwrap()], &v, eps).tails[0];
    let t2 = empirical_lln(&[run.slice(400).unwrap()], &v, eps).tails[0];
    let rate = -(t2.ln() - t1.ln()) / 200.0;
    let want = min_rate(&h, &v, eps);
    assert!((rate - want).abs() <= 0.1 * want, "rate {rate} vs {want}");
}

// min over |a - v| = eps of the Cramer rate of the tilted walk step
fn min_rate(h: &[f64; 2], v: &[f64; 2], eps: f64) -> f64 {
    let steps = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
    let w: Vec<f64> = steps.iter().map(|e| (h[0] * e[0] + h[1] * e[1]).exp()).collect();
    let z: f64 = w.iter().sum();
    let rate = |a: [f64; 2]| -> f64 {
        // Newton on grad (theta.a - log M(theta)) = 0
        let mut th = [0.0f64; 2];
        for _ in 0..100 {
            let ws: Vec<f64> = steps.iter().zip(&w).map(|(e, wi)| wi / z * (th[0] * e[0] + th[1] * e[1]).exp()).collect();
            let m: f64 = ws.iter().sum();
            let mut mean = [0.0; 2];
            let mut cov = [[0.0; 2]; 2];
            for (e, wi) in steps.iter().zip(&ws) {
                for i in 0..2 {
                    mean[i] += wi * e[i] / m;
                    for j in 0..2 {
                        cov[i][j] += wi * e[i] * e[j] / m;
                    }
                }
            }
            let g = [a[0] - mean[0], a[1] - mean[1]];
            let hm = [[cov[0][0] - mean[0] * mean[0], cov[0][1] - mean[0] * mean[1]], [cov[1][0] - mean[1] * mean[0], cov[1][1] - mean[1] * mean[1]]];
            let det = hm[0][0] * hm[1][1] - hm[0][1] * hm[1][0];
            th[0] += (hm[1][1] * g[0] - hm[0][1] * g[1]) / det;
            th[1] += (hm[0][0] * g[1] - hm[1][0] * g[0]) / det;
        }
        let m: f64 = steps.iter().zip(&w).map(|(e, wi)| wi / z * (th[0] * e[0] + th[1] * e[1]).exp()).sum();
        th[0] * a[0] + th[1] * a[1] - m.ln()
    };
    (0..720)
        .map(|k| {
            let p = k as f64 * std::f64::consts::PI / 360.0;
            rate([v[0] + eps * p.cos(), v[1] + eps * p.sin()])
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn lln_tail_decreases_in_four_dimensions() {
    let law: PotentialLaw = "bernoulli:p=0.02".parse().unwrap();
    let h = [0.8, 0.0, 0.0, 0.0];
    let runs = polylab::transfer::dp_ensemble(
        &law,
        &h,
        0.2,
        16,
        10,
        5,
        &DpOptions { keep: vec![8, 16], ..Default::default() },
    )
    .unwrap();
    let v = [runs[0].slice(16).unwrap().mean()[0] / 16.0, 0.0, 0.0, 0.0];
    let at = |n: usize| {
        let s: Vec<_> = runs.iter().map(|r| r.slice(n).unwrap()).collect();
        empirical_lln(&s, &v, 0.3).spread.median
    };
    assert!(at(16) < at(8));
}

#[test]
fn region_geometry_matches_cone() {
    let cone = ConeSpec::with_default_delta(vec![1.0, 0.0]).unwrap();
    let (u, w) = (Site::new(&[1, 1]), Site::new(&[5, 0]));
    let d = dependence_region(&cone, u, w);
    let mut brute: Vec<Site> = polylab::lattice::box_sites(2, 12)
        .filter(|z| cone.contains(&(*z - u)) && cone.contains(&(w - *z)))
        .collect();
    brute.sort();
    assert_eq!(d, brute);
    // every irreducible path from u to w stays inside
    let polys = BasicPolys::new(&cone, PotentialLaw::BernoulliTrap { p_inf: 0.1 }, 1.0, 0.0, 7).unwrap();
    let set: std::collections::HashSet<Site> = d.iter().copied().collect();
    for m in 1..=7 {
        assert!(polys.f(u, w, m).sites().iter().all(|s| set.contains(s)));
    }
}
