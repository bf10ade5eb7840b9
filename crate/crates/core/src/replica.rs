//! Two-replica quantities: attractivity inequalities, factorization over
//! disjoint dependence regions, the interaction defect and exact second
//! moments of cone-confined weights.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::environment::PotentialLaw;
use crate::error::Result;
use crate::harness::dependence_region;
use crate::lattice::{directions, Direction, Site};
use crate::poly::{atoms, for_each_config, Algebra, BasicPolys, SitePoly};
use crate::polymer::{interaction, ConeSpec, PolymerPath};
use crate::scalar::{cst, to_f64, Real};
use crate::stats::{linear_fit, LineFit};
use crate::transfer::mean_stderr;

/// Two paths in a common environment.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaPair {
    pub gamma: PolymerPath,
    pub gamma_prime: PolymerPath,
}

impl ReplicaPair {
    pub fn defect<T: Real>(&self, law: &PotentialLaw, beta: T) -> T {
        interaction_defect(&self.gamma, &self.gamma_prime, law, beta)
    }
}

/// `Phi(gamma) + Phi(gamma') - Phi(gamma, gamma')`; non-negative for
/// attractive `phi`. Summed per shared site, so disjoint supports and
/// linear `phi` give exactly zero.
pub fn interaction_defect<T: Real>(gamma: &PolymerPath, gamma_prime: &PolymerPath, law: &PotentialLaw, beta: T) -> T {
    if law.markov_weight(beta).is_some() {
        return T::zero();
    }
    let a = gamma.local_times(false);
    let b = gamma_prime.local_times(false);
    a.iter()
        .filter_map(|(x, &la)| b.get(x).map(|&lb| (la, lb)))
        .map(|(la, lb)| law.phi_beta(beta, la) + law.phi_beta(beta, lb) - law.phi_beta(beta, la + lb))
        .sum()
}

/// `{Phi(g, g', e, e') - Phi(g, g')} + {(m + m') phi(1) - Phi(e) - Phi(e')}`
/// with `m, m'` the lengths of `eta, eta'`.
pub fn last_step_bound_check<T: Real>(
    gamma: &PolymerPath,
    gamma_prime: &PolymerPath,
    eta: &PolymerPath,
    eta_prime: &PolymerPath,
    law: &PotentialLaw,
    beta: T,
) -> T {
    let g = gamma.local_times(false);
    let gp = gamma_prime.local_times(false);
    let e = eta.local_times(false);
    let ep = eta_prime.local_times(false);
    let m = T::from_usize(eta.len() + eta_prime.len()).unwrap();
    (interaction(law, beta, &[&g, &gp, &e, &ep]) - interaction(law, beta, &[&g, &gp]))
        + (m * law.phi_beta(beta, 1) - interaction(law, beta, &[&e]) - interaction(law, beta, &[&ep]))
}

/// Endpoints and lengths of a two-replica expectation: cone steps
/// `0 -> x`, `0 -> x'` of length `ell`, then irreducible steps `x -> y`
/// (length `m`) and `x' -> y'` (length `m'`). All points are absolute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Geometry {
    pub x: Site,
    pub y: Site,
    pub x_prime: Site,
    pub y_prime: Site,
    pub ell: usize,
    pub m: usize,
    pub m_prime: usize,
}

impl Geometry {
    /// Whether `D(x, y)` and `D(x', y')` are disjoint.
    pub fn disjoint<T: Real>(&self, cone: &ConeSpec<T>) -> bool {
        let a: BTreeSet<Site> = dependence_region(cone, self.x, self.y).into_iter().collect();
        dependence_region(cone, self.x_prime, self.y_prime).iter().all(|z| !a.contains(z))
    }
}

struct Pieces<T> {
    t: SitePoly<T>,
    t_prime: SitePoly<T>,
    f: SitePoly<T>,
    f_prime: SitePoly<T>,
}

fn pieces<T: Real>(polys: &BasicPolys<T>, g: &Geometry) -> Pieces<T> {
    Pieces {
        t: polys.t(Site::ORIGIN, g.x, g.ell),
        t_prime: polys.t(Site::ORIGIN, g.x_prime, g.ell),
        f: polys.f(g.x, g.y, g.m),
        f_prime: polys.f(g.x_prime, g.y_prime, g.m_prime),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Factorization {
    pub value: f64,
    pub disjoint: bool,
}

/// `E[t t' E(f - fbar | A) E(f' - fbar' | A)]`, exactly.
pub fn factorization_check<T: Real>(polys: &BasicPolys<T>, g: &Geometry, a: &Algebra) -> Factorization {
    let p = pieces(polys, g);
    let phi = polys.phi();
    let centred = |f: &SitePoly<T>| f.condition(a, phi).minus(&f.condition(&Algebra::Trivial, phi));
    let tt = p.t.mul(&p.t_prime);
    let gg = centred(&p.f).mul(&centred(&p.f_prime));
    Factorization { value: to_f64(tt.expect_product(&gg, phi)), disjoint: g.disjoint(polys.cone()) }
}

/// `(E[t t' E(f|A) E(f'|A)], E[t t' f f'])`.
pub fn conditional_monotonicity_check<T: Real>(polys: &BasicPolys<T>, g: &Geometry, a: &Algebra) -> (f64, f64) {
    let p = pieces(polys, g);
    let phi = polys.phi();
    let tt = p.t.mul(&p.t_prime);
    let lhs = tt.expect_product(&p.f.condition(a, phi).mul(&p.f_prime.condition(a, phi)), phi);
    let rhs = tt.expect_product(&p.f.mul(&p.f_prime), phi);
    (to_f64(lhs), to_f64(rhs))
}

/// The factorization expectation by brute-force summation over every
/// configuration of the involved sites (finite-support laws only), with
/// the sites visited in an order shuffled by `order_seed`.
pub fn factorization_enumerated<T: Real>(
    polys: &BasicPolys<T>,
    g: &Geometry,
    a: &Algebra,
    order_seed: Option<u64>,
) -> Result<f64> {
    let p = pieces(polys, g);
    let law = polys.law();
    let beta = polys.beta();
    let at = atoms::<T>(law)?;
    let mut sites: Vec<Site> = [&p.t, &p.t_prime, &p.f, &p.f_prime]
        .iter()
        .flat_map(|q| q.sites())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if let Some(s) = order_seed {
        sites.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    let pos: HashMap<Site, usize> = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    // E(f | A) at a configuration: average the free sites of f with its
    // A-sites fixed, by a nested enumeration cached on the fixed values
    let mean_of = |f: &SitePoly<T>| -> Result<T> {
        let fs: Vec<Site> = f.sites().into_iter().collect();
        let mut mean = T::zero();
        let mut all: HashMap<Site, T> = HashMap::new();
        for_each_config(&fs, &at, |v, pr| {
            for (s, x) in fs.iter().zip(v) {
                all.insert(*s, *x);
            }
            mean += pr * f.evaluate_with(beta, |z| all[z]);
        })?;
        Ok(mean)
    };
    let fbar = [mean_of(&p.f)?, mean_of(&p.f_prime)?];
    let mut cache: [HashMap<Vec<u64>, T>; 2] = [HashMap::new(), HashMap::new()];
    let mut cond_at = |which: usize, f: &SitePoly<T>, vals: &[T]| -> Result<T> {
        let fs: Vec<Site> = f.sites().into_iter().collect();
        let fixed: Vec<Site> = fs.iter().copied().filter(|s| a.contains(s)).collect();
        let key: Vec<u64> = fixed.iter().map(|s| to_f64(vals[pos[s]]).to_bits()).collect();
        if let Some(v) = cache[which].get(&key) {
            return Ok(*v);
        }
        let free: Vec<Site> = fs.iter().copied().filter(|s| !a.contains(s)).collect();
        let mut local: HashMap<Site, T> = fixed.iter().map(|s| (*s, vals[pos[s]])).collect();
        let mut cond = T::zero();
        for_each_config(&free, &at, |v, pr| {
            for (s, x) in free.iter().zip(v) {
                local.insert(*s, *x);
            }
            cond += pr * f.evaluate_with(beta, |z| local[z]);
        })?;
        cache[which].insert(key, cond - fbar[which]);
        Ok(cond - fbar[which])
    };
    let mut total = T::zero();
    let mut err = None;
    for_each_config(&sites, &at, |vals, pr| {
        let val = |z: &Site| vals[pos[z]];
        let tt = p.t.evaluate_with(beta, val) * p.t_prime.evaluate_with(beta, val);
        if tt == T::zero() {
            return;
        }
        match (cond_at(0, &p.f, vals), cond_at(1, &p.f_prime, vals)) {
            (Ok(a1), Ok(a2)) => total += pr * tt * a1 * a2,
            (Err(e), _) | (_, Err(e)) => err = Some(e),
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(to_f64(total)),
    }
}

/// `E[t_{x,l} t_{x',l}]` next to `E t_{x,l} E t_{x',l}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SecondMoment {
    pub ell: usize,
    pub x: Site,
    pub x_prime: Site,
    pub second: f64,
    pub product: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SecondMomentProfile {
    pub entries: Vec<SecondMoment>,
    /// Entries with `E[t t'] < E[t] E[t'] (1 - 1e-12)`.
    pub violations: usize,
    /// Per length, fit of `log E[t t']` against
    /// `-(|x - l v|^2 + |x' - l v|^2) / l`.
    pub gaussian_fits: Vec<(usize, LineFit)>,
    /// Fit of the per-length intercepts against `log l`; the slope estimates
    /// `-(D - rho)`.
    pub power_fit: Option<LineFit>,
    pub rho: Option<f64>,
}

/// Exact second moments over all pairs of endpoints at every length up to
/// `ell_max`.
pub fn second_moment_profile<T: Real>(polys: &BasicPolys<T>, v: &[f64], ell_max: usize) -> SecondMomentProfile {
    let phi = polys.phi();
    let dims = polys.cone().dims();
    let mut entries = Vec::new();
    let mut fits = Vec::new();
    for ell in 1..=ell_max.min(polys.n_max()) {
        let ts: Vec<(Site, SitePoly<T>, T)> = polys
            .endpoints(ell)
            .into_iter()
            .map(|x| {
                let t = polys.t(Site::ORIGIN, x, ell);
                let e = t.expect(phi);
                (x, t, e)
            })
            .collect();
        let (mut qs, mut ls) = (Vec::new(), Vec::new());
        for (x, t, et) in &ts {
            for (xp, tp, etp) in &ts {
                let second = to_f64(t.expect_product(tp, phi));
                let product = to_f64(*et * *etp);
                let dev = |z: &Site| -> f64 {
                    (0..dims).map(|i| (z.0[i] as f64 - ell as f64 * v[i]).powi(2)).sum::<f64>()
                };
                if second > 0.0 {
                    qs.push(-(dev(x) + dev(xp)) / ell as f64);
                    ls.push(second.ln());
                }
                entries.push(SecondMoment { ell, x: *x, x_prime: *xp, second, product });
            }
        }
        if let Some(f) = linear_fit(&qs, &ls) {
            fits.push((ell, f));
        }
    }
    let violations = entries.iter().filter(|e| e.second < e.product * (1.0 - 1e-12)).count();
    let (xs, ys): (Vec<f64>, Vec<f64>) = fits.iter().map(|(l, f)| ((*l as f64).ln(), f.intercept)).unzip();
    let power_fit = linear_fit(&xs, &ys);
    let rho = power_fit.map(|f| dims as f64 + f.slope);
    SecondMomentProfile { entries, violations, gaussian_fits: fits, power_fit, rho }
}

/// A nearest-neighbour path of `n` uniform steps from `start`.
pub fn random_path<R: Rng>(dims: usize, start: Site, n: usize, rng: &mut R) -> PolymerPath {
    let steps: Vec<Direction> = (0..n).map(|_| Direction::from_index(rng.gen_range(0..2 * dims))).collect();
    PolymerPath::from_start(dims, start, steps).expect("valid dimension")
}

/// A path from `start` drawn from the tilted free walk, step `e` with
/// probability proportional to `exp(h.e)`.
pub fn tilted_path<R: Rng>(h: &[f64], start: Site, n: usize, rng: &mut R) -> PolymerPath {
    let dims = h.len();
    let w: Vec<f64> = directions(dims).map(|d| d.dot(h).exp()).collect();
    let total: f64 = w.iter().sum();
    let steps = (0..n)
        .map(|_| {
            let mut u = rng.gen::<f64>() * total;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    return Direction::from_index(i);
                }
                u -= wi;
            }
            Direction::from_index(w.len() - 1)
        })
        .collect();
    PolymerPath::from_start(dims, start, steps).expect("valid dimension")
}

/// Sample moment `E exp(p Delta)` of the interaction defect over pairs of
/// independent tilted walks of length `n` from the origin: `(mean, stderr)`.
pub fn defect_moment<T: Real>(
    law: &PotentialLaw,
    beta: T,
    h: &[f64],
    n: usize,
    power: f64,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..samples)
        .map(|_| {
            let a = tilted_path(h, Site::ORIGIN, n, &mut rng);
            let b = tilted_path(h, Site::ORIGIN, n, &mut rng);
            (power * to_f64(interaction_defect(&a, &b, law, beta))).exp()
        })
        .collect();
    mean_stderr(&xs)
}

/// A random geometry with cone steps of length `ell <= ell_max` and
/// irreducible steps of length at most `m_max`, or `None` if the drawn
/// lengths admit no path.
pub fn random_geometry<T: Real, R: Rng>(polys: &BasicPolys<T>, ell_max: usize, m_max: usize, rng: &mut R) -> Option<Geometry> {
    let ell = rng.gen_range(1..=ell_max);
    let m = rng.gen_range(1..=m_max);
    let m_prime = rng.gen_range(1..=m_max);
    let xs = polys.endpoints(ell);
    let x = *xs.choose(rng)?;
    let x_prime = *xs.choose(rng)?;
    let pick_f = |m: usize, rng: &mut R| -> Option<Site> {
        let ys: Vec<Site> =
            polys.endpoints(m).into_iter().filter(|y| !polys.f(Site::ORIGIN, *y, m).is_empty()).collect();
        ys.choose(rng).copied()
    };
    let y = x + pick_f(m, rng)?;
    let y_prime = x_prime + pick_f(m_prime, rng)?;
    Some(Geometry { x, y, x_prime, y_prime, ell, m, m_prime })
}

/// A random cylindrical algebra: trivial, full, a half-space or a random
/// subset of the sites the geometry involves.
pub fn random_algebra<T: Real, R: Rng>(polys: &BasicPolys<T>, g: &Geometry, rng: &mut R) -> Algebra {
    match rng.gen_range(0..4) {
        0 => Algebra::Trivial,
        1 => Algebra::Full,
        2 => Algebra::HalfSpace { level: rng.gen_range(-1..=(g.ell + g.m.max(g.m_prime)) as i64) },
        _ => {
            let p = pieces(polys, g);
            let sites = [&p.t, &p.t_prime, &p.f, &p.f_prime]
                .iter()
                .flat_map(|q| q.sites())
                .filter(|_| rng.gen_bool(0.5))
                .collect();
            Algebra::Sites { sites }
        }
    }
}

/// Counts from a randomized attractivity run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuiteReport {
    pub cases: usize,
    /// Geometries actually drawn; short of `cases` only when the lengths
    /// admit almost no irreducible pieces.
    pub geometries: usize,
    pub defect_violations: usize,
    pub min_defect: f64,
    pub last_step_violations: usize,
    pub min_last_step: f64,
    pub monotonicity_violations: usize,
    /// Largest `lhs - rhs` relative to `rhs`.
    pub max_monotonicity_excess: f64,
    pub disjoint_cases: usize,
    pub factorization_violations: usize,
    pub max_disjoint_factorization: f64,
}

impl SuiteReport {
    pub fn violations(&self) -> usize {
        self.defect_violations + self.last_step_violations + self.monotonicity_violations + self.factorization_violations
    }
}

/// `cases` random path pairs and quartets (lengths up to `n_max`) for the
/// pathwise inequalities, and `cases` random geometries for the two
/// expectation checks.
pub fn attractivity_suite<T: Real>(
    polys: &BasicPolys<T>,
    cases: usize,
    n_max: usize,
    ell_max: usize,
    m_max: usize,
    seed: u64,
) -> SuiteReport {
    let law = polys.law();
    let beta = polys.beta();
    let dims = polys.cone().dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = SuiteReport { cases, min_defect: f64::INFINITY, min_last_step: f64::INFINITY, ..Default::default() };
    let tol: T = cst(1e-12);
    for _ in 0..cases {
        let la = rng.gen_range(1..=n_max);
        let lb = rng.gen_range(1..=n_max);
        let g = random_path(dims, Site::ORIGIN, la, &mut rng);
        let gp = random_path(dims, Site::ORIGIN, lb, &mut rng);
        let d = interaction_defect(&g, &gp, law, beta);
        r.min_defect = r.min_defect.min(to_f64(d));
        if d < -tol {
            r.defect_violations += 1;
        }
        let e = random_path(dims, g.end(), rng.gen_range(1..=n_max), &mut rng);
        let ep = random_path(dims, gp.end(), rng.gen_range(1..=n_max), &mut rng);
        let s = last_step_bound_check(&g, &gp, &e, &ep, law, beta);
        r.min_last_step = r.min_last_step.min(to_f64(s));
        if s < -tol {
            r.last_step_violations += 1;
        }
    }
    let (mut done, mut attempts) = (0, 0);
    while done < cases && attempts < 1000 * cases.max(1) {
        attempts += 1;
        let Some(g) = random_geometry(polys, ell_max, m_max, &mut rng) else { continue };
        done += 1;
        r.geometries = done;
        let a = random_algebra(polys, &g, &mut rng);
        let (lhs, rhs) = conditional_monotonicity_check(polys, &g, &a);
        let excess = (lhs - rhs) / rhs.abs().max(f64::MIN_POSITIVE);
        r.max_monotonicity_excess = r.max_monotonicity_excess.max(excess);
        if lhs > rhs + 1e-12 * rhs.abs() {
            r.monotonicity_violations += 1;
        }
        let f = factorization_check(polys, &g, &a);
        if f.disjoint {
            r.disjoint_cases += 1;
            r.max_disjoint_factorization = r.max_disjoint_factorization.max(f.value.abs());
            if f.value.abs() > 1e-12 {
                r.factorization_violations += 1;
            }
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(s: &str) -> PolymerPath {
        PolymerPath::parse(2, s).unwrap()
    }

    #[test]
    fn defect_closed_forms() {
        let trap = PotentialLaw::BernoulliTrap { p_inf: 0.3 };
        let g = path("+1,+1,+2");
        let d: f64 = interaction_defect(&g, &g, &trap, 1.0);
        assert!((d - 3.0 * -(0.7f64.ln())).abs() < 1e-14);
        let det = PotentialLaw::Deterministic { v0: 0.8 };
        assert_eq!(interaction_defect(&g, &path("+2,+1,-2"), &det, 0.6f64), 0.0);
        let far = path("-1,-1").translated(Site::new(&[0, 5]));
        assert_eq!(interaction_defect(&g, &far, &trap, 1.0f64), 0.0);
    }

    #[test]
    fn last_step_examples() {
        let det = PotentialLaw::Deterministic { v0: 0.4 };
        let g = path("+1,+1");
        let e = path("+2,+1").translated(g.end());
        // linear phi: the second bracket vanishes, the first is (m + m') phi(1)
        let s: f64 = last_step_bound_check(&g, &g, &e, &e, &det, 0.9);
        assert!((s - 4.0 * 0.9 * 0.4).abs() < 1e-14);
        // site-disjoint quartet: the first bracket is Phi(eta) + Phi(eta')
        let ex = PotentialLaw::Exponential { rate: 1.0 };
        let gp = path("-2,-2").translated(Site::new(&[0, -3]));
        let ep = path("-1,+2,-1").translated(gp.end());
        let s: f64 = last_step_bound_check(&g, &gp, &e, &ep, &ex, 0.7);
        assert!((s - 5.0 * ex.phi_beta(0.7, 1)).abs() < 1e-14);
    }
}
