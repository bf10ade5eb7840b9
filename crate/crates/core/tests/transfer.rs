use polylab::environment::{sample_environment, Environment, Homogeneous, PotentialLaw, SampledField};
use polylab::exactenum::{enumerate_basic, enumerate_q, Disorder, EnumLimits};
use polylab::lattice::Site;
use polylab::polymer::ConeSpec;
use polylab::scalar::rel_diff;
use polylab::transfer::*;

fn keep_all(n: usize) -> DpOptions {
    DpOptions { keep: (0..=n).collect(), ..Default::default() }
}

#[test]
fn dp_matches_enumeration_pointwise() {
    let law: PotentialLaw = "exp:rate=1.0".parse().unwrap();
    for seed in [3u64, 4] {
        let env: Environment<f64> = sample_environment(&law, 2, 9, seed).unwrap();
        let h = [0.7, -0.2];
        let table = enumerate_q(&Disorder::quenched(&env), &h, 0.8, 8, &EnumLimits::default()).unwrap();
        let run = dp_quenched(&env, &h, 0.8, 8, &keep_all(8)).unwrap();
        for n in 1..=8 {
            let slice = run.slice(n).unwrap();
            let mut count = 0;
            for (x, w) in table.at_length(n) {
                assert!(rel_diff(slice.get(&x), w) <= 1e-12, "n={n} x={x}");
                count += 1;
            }
            assert_eq!(count, slice.entries().len());
        }
    }
}

#[test]
fn tilted_free_walk_closed_form_at_50() {
    let env = Homogeneous { dims: 2, v: 0.0 };
    let t = 1.0f64;
    let run = dp_quenched(&env, &[t, 0.0], 0.0, 50, &DpOptions::default()).unwrap();
    let exact = ((t.cosh() + 1.0) / 2.0).powi(50);
    assert!(rel_diff(run.totals()[50], exact) <= 1e-10);
    assert!(rel_diff(run.last().total(), exact) <= 1e-10);
}

#[test]
fn log_and_linear_agree_at_64() {
    let law: PotentialLaw = "twopoint:v0=0.0,v1=2.0,p=0.3".parse().unwrap();
    let env = SampledField::new(law, 2, 64, 11).unwrap();
    let h = [0.5, 0.0];
    let lin = dp_quenched::<f64, _>(&env, &h, 1.0, 64, &DpOptions { mode: DpMode::Linear, ..Default::default() })
        .unwrap();
    let log = dp_quenched::<f64, _>(&env, &h, 1.0, 64, &DpOptions { mode: DpMode::Log, ..Default::default() })
        .unwrap();
    for k in 0..=64 {
        assert!(rel_diff(lin.totals()[k], log.totals()[k]) <= 1e-10, "k={k}");
    }
    for (x, w) in lin.last().entries() {
        assert!(rel_diff(w, log.last().get(&x)) <= 1e-10);
    }
}

#[test]
fn folded_and_end_tilts_agree() {
    let law: PotentialLaw = "bernoulli:p=0.1".parse().unwrap();
    let env: Environment<f64> = sample_environment(&law, 3, 12, 5).unwrap();
    let h = [0.6, 0.1, -0.3];
    for mode in [DpMode::Linear, DpMode::Log] {
        let a = dp_quenched(&env, &h, 0.5, 12, &DpOptions { mode, ..Default::default() }).unwrap();
        let b = dp_quenched(&env, &h, 0.5, 12, &DpOptions { mode, tilt: TiltMode::AtEnd, ..Default::default() })
            .unwrap();
        for k in 0..=12 {
            assert!(rel_diff(a.totals()[k], b.totals()[k]) <= 1e-12);
        }
        for (x, w) in a.last().entries() {
            assert!(rel_diff(w, b.last().get(&x)) <= 1e-12);
        }
    }
}

#[test]
fn rect_window_reports_a_valid_leak_bound() {
    let env = Homogeneous { dims: 2, v: 0.0 };
    let h = [0.8, 0.0];
    let n = 30;
    let full = dp_quenched::<f64, _>(&env, &h, 0.0, n, &DpOptions::default()).unwrap();
    let window = Window::rect(2, &[-3, -6], &[30, 6]).unwrap();
    let cut = dp_quenched::<f64, _>(&env, &h, 0.0, n, &DpOptions { window: Some(window), ..Default::default() })
        .unwrap();
    let lost = full.totals()[n] - cut.totals()[n];
    let bound = cut.log_leak_bound.unwrap().exp();
    assert!(lost > 0.0 && lost <= bound * (1.0 + 1e-12), "lost {lost} bound {bound}");
    assert!(full.log_leak_bound.is_none());
}

#[test]
fn char_sum_basic_properties() {
    let env = Homogeneous { dims: 2, v: 0.0 };
    let h = [0.9, 0.0];
    let run = dp_quenched::<f64, _>(&env, &h, 0.0, 20, &DpOptions::default()).unwrap();
    let s = run.last();
    let v = [0.4, 0.0];
    let at0 = s.char_sum(&[0.0, 0.0], &v);
    assert!(rel_diff(at0.re, s.total()) <= 1e-14 && at0.im == 0.0);
    // reflection in x2 makes the transverse transform real
    let z = s.char_sum(&[0.0, 0.37], &v);
    assert!(z.im.abs() <= 1e-12 * s.total());
    let a = s.char_sum(&[0.2, 0.1], &v);
    let b = s.char_sum(&[-0.2, -0.1], &v);
    assert!((a - b.conj()).norm() <= 1e-12 * s.total());
    assert!(a.norm() <= s.total());
}

#[test]
fn mc_annealed_without_disorder_is_exact() {
    let h = [0.4, 0.0, 0.0];
    for law in ["det:v=0.5", "exp:rate=1.0"] {
        let law: PotentialLaw = law.parse().unwrap();
        let beta = if law.is_degenerate() { 0.7 } else { 0.0 };
        let mc = mc_annealed::<f64>(&law, &h, beta, 6, 4, 9).unwrap();
        let exact = enumerate_q(&Disorder::Annealed(law), &h, beta, 6, &EnumLimits::default()).unwrap();
        let z = exact.partition_functions();
        for k in 1..=6 {
            assert_eq!(mc.estimate.stderr[k], 0.0);
            assert!(rel_diff(mc.estimate.mean[k], z[k]) <= 1e-12);
        }
    }
}

#[test]
fn mc_annealed_agrees_with_enumeration_in_4d() {
    let law: PotentialLaw = "bernoulli:p=0.05".parse().unwrap();
    let h = [0.5, 0.0, 0.0, 0.0];
    let mc = mc_annealed::<f64>(&law, &h, 1.0, 6, 200, 2024).unwrap();
    let exact = enumerate_q(&Disorder::Annealed(law), &h, 1.0, 6, &EnumLimits::default()).unwrap();
    let z = exact.partition_functions()[6];
    let (m, e) = (mc.estimate.mean[6], mc.estimate.stderr[6]);
    assert!(e > 0.0 && (m - z).abs() <= 3.0 * e, "mc {m} ± {e}, exact {z}");
    let again = mc_annealed::<f64>(&law, &h, 1.0, 6, 200, 2024).unwrap();
    assert_eq!(mc, again);
}

#[test]
fn ratio_series_trivial_cases() {
    let h = [0.5, 0.0];
    let law: PotentialLaw = "bernoulli:p=0.2".parse().unwrap();
    let env: Environment<f64> = sample_environment(&law, 2, 8, 1).unwrap();
    let reference = AnnealedRef::exact(
        enumerate_q(&Disorder::Annealed(law), &h, 0.0, 8, &EnumLimits::default()).unwrap().partition_functions(),
    );
    let mut reference = reference;
    reference.mean[0] = 1.0;
    let r = ratio_series(&env, &h, 0.0, 8, &reference).unwrap();
    assert!(r.w.iter().all(|w| (w - 1.0).abs() <= 1e-12));
    assert!(r.zero_from.is_none());
    let zero = AnnealedRef::exact(vec![0.0; 9]);
    assert!(ratio_series(&env, &h, 0.0, 8, &zero).is_err());
}

#[test]
fn cone_table_matches_enumeration() {
    let cone = ConeSpec::with_default_delta(vec![0.8f64, 0.0]).unwrap();
    // quenched, several anchors
    let law: PotentialLaw = "bernoulli:p=0.15".parse().unwrap();
    let env: Environment<f64> = sample_environment(&law, 2, 12, 8).unwrap();
    for anchor in [Site::ORIGIN, Site::new(&[2, -1])] {
        let d = Disorder::quenched(&env).at(anchor);
        let (t, _) = enumerate_basic(&d, &cone, 0.7, 0.0, 8, &EnumLimits::default()).unwrap();
        let w = ConeWeights::Field { field: &env, seed: env.seed(), anchor };
        let run = cone_table(&w, &cone, 0.7, 8, 0.0).unwrap();
        assert_eq!(run.skipped, 0);
        for (n, x, v) in t.iter() {
            assert!(rel_diff(run.table.raw(n, &x), v) <= 1e-12, "n={n} x={x}");
        }
        assert_eq!(run.table.len(), t.len());
    }
    // Markov annealed weights
    let det: PotentialLaw = "det:v=0.3".parse().unwrap();
    let (t, _) = enumerate_basic(&Disorder::Annealed(det), &cone, 1.0, 0.0, 9, &EnumLimits::default()).unwrap();
    let run = cone_table(&ConeWeights::Markov(det), &cone, 1.0, 9, 0.0).unwrap();
    for (n, x, v) in t.iter() {
        assert!(rel_diff(run.table.raw(n, &x), v) <= 1e-12);
    }
    assert_eq!(run.table.len(), t.len());
    assert!(cone_table(&ConeWeights::Markov(law), &cone, 1.0, 4, 0.0).is_err());
}
