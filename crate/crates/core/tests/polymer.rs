use std::collections::HashMap;

use polylab::environment::{Environment, PotentialLaw};
use polylab::lattice::{Direction, Site};
use polylab::polymer::*;
use proptest::prelude::*;

fn path_strategy(dims: usize, max_len: usize) -> impl Strategy<Value = PolymerPath> {
    prop::collection::vec(0..2 * dims, 0..=max_len)
        .prop_map(move |ix| PolymerPath::new(dims, ix.into_iter().map(Direction::from_index).collect()).unwrap())
}

/// Mostly forward steps, so a fair share of paths is cone-confined.
fn forward_strategy(max_len: usize) -> impl Strategy<Value = PolymerPath> {
    prop::collection::vec(prop_oneof![4 => Just(0usize), 1 => Just(2), 1 => Just(3)], 1..=max_len)
        .prop_map(|ix| PolymerPath::new(2, ix.into_iter().map(Direction::from_index).collect()).unwrap())
}

proptest! {
    #[test]
    fn local_times_match_tally(path in path_strategy(3, 20)) {
        let mut tally: HashMap<Site, u32> = HashMap::new();
        let mut x = Site::ORIGIN;
        for d in path.steps() {
            x = x.step(*d);
            *tally.entry(x).or_default() += 1;
        }
        let lt = path.local_times(false);
        prop_assert_eq!(lt.len(), tally.len());
        for (s, c) in &lt {
            prop_assert_eq!(tally[s], *c);
        }
        prop_assert_eq!(lt.values().sum::<u32>() as usize, path.len());
    }

    #[test]
    fn split_concatenates_and_is_idempotent(path in forward_strategy(14)) {
        let cone = ConeSpec::new(vec![1.0, 0.0], 0.4).unwrap();
        prop_assume!(cone.is_cone_confined(&path));
        let pieces = cone.irreducible_split(&path).unwrap();
        let mut joined = pieces[0].clone();
        for p in &pieces[1..] {
            prop_assert_eq!(p.start(), joined.end());
            joined = joined.concat(p);
        }
        prop_assert_eq!(&joined, &path);
        for p in &pieces {
            prop_assert!(cone.is_irreducible(p));
            let again = cone.irreducible_split(p).unwrap();
            prop_assert_eq!(again.len(), 1);
            prop_assert_eq!(&again[0], p);
        }
    }

    #[test]
    fn distinct_sites_under_linear_potential(path in forward_strategy(10), beta in 0.0..3.0f64) {
        let verts = path.vertices();
        let mut sorted = verts[1..].to_vec();
        sorted.sort();
        sorted.dedup();
        prop_assume!(sorted.len() == path.len());
        let law = PotentialLaw::Deterministic { v0: 0.6 };
        let h = [0.7, -0.2];
        let w = annealed_weight(&path, &law, &h, beta).unwrap();
        let x = path.end();
        let expect = (0.7 * x.0[0] as f64 - 0.2 * x.0[1] as f64 - beta * 0.6 * path.len() as f64).exp()
            * 4f64.powi(-(path.len() as i32));
        prop_assert!((w - expect).abs() <= 1e-13 * expect);
    }
}

#[test]
fn annealed_is_the_disorder_average() {
    let path = PolymerPath::parse(2, "+1,-1,+1").unwrap();
    let law = PotentialLaw::BernoulliTrap { p_inf: 0.3 };
    let sites = [Site::ORIGIN, Site::unit(0)];
    let mut avg = 0.0;
    for mask in 0..4u32 {
        let mut env = Environment::<f64>::constant(2, 2, 0.0).unwrap();
        let mut p = 1.0;
        for (i, s) in sites.iter().enumerate() {
            if mask >> i & 1 == 1 {
                env.set(s, f64::INFINITY).unwrap();
                p *= 0.3;
            } else {
                p *= 0.7;
            }
        }
        avg += p * quenched_weight(&path, &env, &[0.0, 0.0], 1.5).unwrap();
    }
    let w = annealed_weight(&path, &law, &[0.0, 0.0], 1.5).unwrap();
    assert!((w - avg).abs() < 1e-15);
    assert!((w - 0.49 / 64.0).abs() < 1e-15);
}

#[test]
fn free_weights() {
    let path = PolymerPath::parse(3, "+1,+3,-2,+1").unwrap();
    let law = PotentialLaw::Exponential { rate: 1.0 };
    let env = Environment::<f64>::constant(3, 5, 0.4).unwrap();
    let h = [0.3, 0.1, -0.5];
    assert_eq!(quenched_weight(&path, &env, &[0.0; 3], 0.0).unwrap(), 6f64.powi(-4));
    let x = path.end();
    let e = (0.3 * x.0[0] as f64 + 0.1 * x.0[1] as f64 - 0.5 * x.0[2] as f64).exp() * 6f64.powi(-4);
    assert!((annealed_weight(&path, &law, &h, 0.0).unwrap() - e).abs() < 1e-15);
}
