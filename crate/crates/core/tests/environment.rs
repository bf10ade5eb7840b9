use polylab::environment::*;

#[test]
fn trap_fraction_is_binomial() {
    let law = PotentialLaw::BernoulliTrap { p_inf: 0.2 };
    let n = 21f64.powi(3);
    let sd = (0.2 * 0.8 / n).sqrt();
    for seed in 0..5 {
        let env: Environment<f64> = sample_environment(&law, 3, 10, seed).unwrap();
        assert_eq!(env.values().len(), n as usize);
        let f = env.trap_fraction();
        assert!((f - 0.2).abs() <= 3.0 * sd, "seed {seed}: {f}");
    }
}

#[test]
fn serialization_is_byte_identical() {
    for law in ["bernoulli:p=0.25", "exp:rate=0.7", "twopoint:v0=0.0,v1=1.5,p=0.4"] {
        let law: PotentialLaw = law.parse().unwrap();
        let a: Environment<f64> = sample_environment(&law, 3, 4, 1234).unwrap();
        let b: Environment<f64> = sample_environment(&law, 3, 4, 1234).unwrap();
        assert_eq!(a.to_polyenv_string(), b.to_polyenv_string());
        let mut buf = Vec::new();
        a.write_polyenv(&mut buf).unwrap();
        assert_eq!(Environment::<f64>::read_polyenv(&buf[..]).unwrap(), a);
    }
}

#[test]
fn phi_is_monotone_and_subadditive() {
    let laws = [
        PotentialLaw::Deterministic { v0: 0.4 },
        PotentialLaw::BernoulliTrap { p_inf: 0.3 },
        PotentialLaw::Exponential { rate: 2.0 },
        PotentialLaw::TwoPoint { v0: 0.0, v1: 1.0, p: 0.5 },
    ];
    let betas = [0.05, 0.3, 1.0, 4.0];
    for law in &laws {
        for w in betas.windows(2) {
            for ell in 1..30 {
                let (a, b): (f64, f64) = (law.phi_beta(w[0], ell), law.phi_beta(w[1], ell));
                assert!(a <= b + 1e-15, "{law} ell={ell}");
                assert!(law.phi_beta(w[0], ell) <= law.phi_beta(w[0], ell + 1) + 1e-15);
            }
        }
        for &beta in &betas {
            assert!(check_attractivity(law, beta, 40).is_empty(), "{law} beta={beta}");
        }
    }
}

#[test]
fn exponential_phi_matches_quadrature() {
    let law = PotentialLaw::Exponential { rate: 1.0 };
    for (beta, ell) in [(0.3, 1u32), (0.7, 4), (2.0, 9)] {
        // E exp(-beta ell V) by the midpoint rule on the quantile scale
        let k = 200_000;
        let m: f64 = (0..k)
            .map(|i| (-beta * ell as f64 * law.quantile((i as f64 + 0.5) / k as f64)).exp())
            .sum::<f64>()
            / k as f64;
        let phi: f64 = law.phi_beta(beta, ell);
        assert!((phi + m.ln()).abs() < 1e-6, "{phi} vs {}", -m.ln());
    }
}

#[test]
fn origin_trap_flags() {
    let law = PotentialLaw::BernoulliTrap { p_inf: 0.5 };
    let trapped = (0..200)
        .filter(|&s| sample_environment::<f64>(&law, 2, 2, s).unwrap().origin_is_trap())
        .count();
    // binomial(200, 0.5): 3 sd is about 21
    assert!((trapped as i64 - 100).abs() <= 22, "{trapped}");
}
