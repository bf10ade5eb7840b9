//! Polynomials in the per-site visit factors `exp(-beta V(x))`.
//!
//! Every basic weight is a finite sum over paths of `c * prod_x exp(-beta
//! l(x) V(x))`, so products of weights and their (conditional) disorder
//! averages reduce to sums of `c * exp(-sum_x phi_beta(l(x)))`. This module
//! keeps such sums symbolically, which gives exact averages for any law,
//! and also provides brute-force configuration enumeration for finitely
//! supported laws.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{visit_factor, Potential, PotentialLaw};
use crate::error::{Error, Result};
use crate::exactenum::{BasicCatalogue, EnumLimits};
use crate::lattice::Site;
use crate::polymer::ConeSpec;
use crate::scalar::{cst, Real};

/// Largest number of free sites an exhaustive configuration enumeration
/// may range over.
pub const MAX_FREE_SITES: usize = 24;

/// A cylindrical sigma-algebra `sigma(V(x) : x in A)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algebra {
    Trivial,
    Full,
    /// `A = {x : x1 <= level}`.
    HalfSpace { level: i64 },
    Sites { sites: BTreeSet<Site> },
}

impl Algebra {
    #[inline]
    pub fn contains(&self, x: &Site) -> bool {
        match self {
            Algebra::Trivial => false,
            Algebra::Full => true,
            Algebra::HalfSpace { level } => x.0[0] as i64 <= *level,
            Algebra::Sites { sites } => sites.contains(x),
        }
    }
}

/// Cached `phi_beta(l)` for small local times.
#[derive(Clone, Debug)]
pub struct PhiTable<T> {
    law: PotentialLaw,
    beta: T,
    vals: Vec<T>,
}

impl<T: Real> PhiTable<T> {
    pub fn new(law: PotentialLaw, beta: T) -> Self {
        let vals = (0..64).map(|l| law.phi_beta(beta, l)).collect();
        PhiTable { law, beta, vals }
    }
    #[inline]
    pub fn get(&self, l: u32) -> T {
        match self.vals.get(l as usize) {
            Some(&v) => v,
            None => self.law.phi_beta(self.beta, l),
        }
    }
    pub fn law(&self) -> &PotentialLaw {
        &self.law
    }
    pub fn beta(&self) -> T {
        self.beta
    }
}

/// Local times as a vector sorted by site.
pub type Visits = Vec<(Site, u32)>;

/// Sorted local times of a sequence of visited sites.
pub fn visits_of(sites: impl IntoIterator<Item = Site>) -> Visits {
    let mut v: Vec<Site> = sites.into_iter().collect();
    v.sort_unstable();
    let mut out: Visits = Vec::with_capacity(v.len());
    for s in v {
        match out.last_mut() {
            Some(e) if e.0 == s => e.1 += 1,
            _ => out.push((s, 1)),
        }
    }
    out
}

fn merge(a: &[(Site, u32)], b: &[(Site, u32)]) -> Visits {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

// sum_x phi(a(x) + b(x)) without building the merged list
fn merged_phi<T: Real>(a: &[(Site, u32)], b: &[(Site, u32)], phi: &PhiTable<T>) -> T {
    let mut s = T::zero();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                s += phi.get(a[i].1);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                s += phi.get(b[j].1);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                s += phi.get(a[i].1 + b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    s + a[i..].iter().map(|e| phi.get(e.1)).sum::<T>() + b[j..].iter().map(|e| phi.get(e.1)).sum::<T>()
}

/// `sum_k c_k prod_x exp(-beta l_k(x) V(x))`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SitePoly<T> {
    terms: Vec<(T, Visits)>,
}

impl<T: Real> SitePoly<T> {
    pub fn zero() -> Self {
        SitePoly { terms: Vec::new() }
    }

    pub fn constant(c: T) -> Self {
        SitePoly { terms: vec![(c, Vec::new())] }
    }

    pub fn monomial(c: T, visits: Visits) -> Self {
        SitePoly { terms: vec![(c, visits)] }
    }

    pub fn push(&mut self, c: T, visits: Visits) {
        self.terms.push((c, visits));
    }

    pub fn terms(&self) -> &[(T, Visits)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Merges terms with identical local times and drops zero coefficients.
    pub fn compact(mut self) -> Self {
        let mut idx: HashMap<Visits, usize> = HashMap::with_capacity(self.terms.len());
        let mut out: Vec<(T, Visits)> = Vec::with_capacity(self.terms.len());
        for (c, v) in self.terms.drain(..) {
            match idx.get(&v) {
                Some(&k) => out[k].0 += c,
                None => {
                    idx.insert(v.clone(), out.len());
                    out.push((c, v));
                }
            }
        }
        out.retain(|t| t.0 != T::zero());
        SitePoly { terms: out }
    }

    pub fn scale(mut self, s: T) -> Self {
        for t in &mut self.terms {
            t.0 *= s;
        }
        self
    }

    pub fn plus(mut self, other: &SitePoly<T>) -> Self {
        self.terms.extend(other.terms.iter().cloned());
        self.compact()
    }

    pub fn minus(self, other: &SitePoly<T>) -> Self {
        self.plus(&other.clone().scale(-T::one()))
    }

    pub fn mul(&self, other: &SitePoly<T>) -> Self {
        let mut terms = Vec::with_capacity(self.len() * other.len());
        for (a, va) in &self.terms {
            for (b, vb) in &other.terms {
                terms.push((*a * *b, merge(va, vb)));
            }
        }
        SitePoly { terms }.compact()
    }

    /// Every site carrying a positive local time.
    pub fn sites(&self) -> BTreeSet<Site> {
        self.terms.iter().flat_map(|t| t.1.iter().map(|e| e.0)).collect()
    }

    /// `E[P]`.
    pub fn expect(&self, phi: &PhiTable<T>) -> T {
        self.terms
            .iter()
            .map(|(c, v)| *c * (-v.iter().map(|e| phi.get(e.1)).sum::<T>()).exp())
            .sum()
    }

    /// `E[P Q]` without expanding the product.
    pub fn expect_product(&self, other: &SitePoly<T>, phi: &PhiTable<T>) -> T {
        let mut s = T::zero();
        for (a, va) in &self.terms {
            for (b, vb) in &other.terms {
                s += *a * *b * (-merged_phi(va, vb, phi)).exp();
            }
        }
        s
    }

    /// `E[P | A]`: free sites are integrated out, sites of `A` stay symbolic.
    pub fn condition(&self, algebra: &Algebra, phi: &PhiTable<T>) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len());
        for (c, v) in &self.terms {
            let mut free = T::zero();
            let mut kept = Vec::new();
            for e in v {
                if algebra.contains(&e.0) {
                    kept.push(*e);
                } else {
                    free += phi.get(e.1);
                }
            }
            terms.push((*c * (-free).exp(), kept));
        }
        SitePoly { terms }.compact()
    }

    /// Value in a concrete field.
    pub fn evaluate<P: Potential<T> + ?Sized>(&self, field: &P, beta: T) -> Result<T> {
        let mut s = T::zero();
        for (c, v) in &self.terms {
            let mut w = *c;
            for e in v {
                let x = field.value(&e.0).ok_or(Error::OutOfDomain(e.0))?;
                w *= visit_factor(beta, x).powi(e.1 as i32);
            }
            s += w;
        }
        Ok(s)
    }

    /// Value with the potential given by a lookup.
    pub fn evaluate_with(&self, beta: T, value: impl Fn(&Site) -> T) -> T {
        self.terms
            .iter()
            .map(|(c, v)| v.iter().fold(*c, |w, e| w * visit_factor(beta, value(&e.0)).powi(e.1 as i32)))
            .sum()
    }
}

/// Basic weights `t_{u,v,n}` and `f_{u,v,n}` as site polynomials, shifted
/// by `exp(-lambda n)`.
#[derive(Clone, Debug)]
pub struct BasicPolys<T> {
    catalogue: BasicCatalogue<T>,
    phi: PhiTable<T>,
    lambda: T,
    // (n, end) -> shape indices
    index: HashMap<(usize, Site), Vec<usize>>,
}

impl<T: Real> BasicPolys<T> {
    pub fn new(cone: &ConeSpec<T>, law: PotentialLaw, beta: T, lambda: T, n_max: usize) -> Result<Self> {
        law.validate()?;
        let catalogue = BasicCatalogue::new(cone, n_max, &EnumLimits::default())?;
        let mut index: HashMap<(usize, Site), Vec<usize>> = HashMap::new();
        for (i, s) in catalogue.shapes().iter().enumerate() {
            index.entry((s.len(), s.end)).or_default().push(i);
        }
        Ok(BasicPolys { catalogue, phi: PhiTable::new(law, beta), lambda, index })
    }

    pub fn cone(&self) -> &ConeSpec<T> {
        self.catalogue.cone()
    }
    pub fn catalogue(&self) -> &BasicCatalogue<T> {
        &self.catalogue
    }
    pub fn phi(&self) -> &PhiTable<T> {
        &self.phi
    }
    pub fn law(&self) -> &PotentialLaw {
        self.phi.law()
    }
    pub fn beta(&self) -> T {
        self.phi.beta()
    }
    pub fn lambda(&self) -> T {
        self.lambda
    }
    pub fn n_max(&self) -> usize {
        self.catalogue.n_max()
    }

    fn prefactor(&self, y: &Site, n: usize) -> T {
        let dims = self.cone().dims();
        let nf = T::from_usize(n).unwrap();
        (y.dot(self.cone().h()) - self.lambda * nf - nf * T::from_usize(2 * dims).unwrap().ln()).exp()
    }

    fn build(&self, from: Site, to: Site, n: usize, irreducible: bool) -> SitePoly<T> {
        let y = to - from;
        let mut p = SitePoly::zero();
        if n == 0 {
            if y == Site::ORIGIN && !irreducible {
                p.push(T::one(), Vec::new());
            }
            return p;
        }
        let c = self.prefactor(&y, n);
        for &i in self.index.get(&(n, y)).map(|v| v.as_slice()).unwrap_or(&[]) {
            let s = &self.catalogue.shapes()[i];
            if irreducible && !s.irreducible {
                continue;
            }
            p.push(c, visits_of(s.visits().map(|x| from + x)));
        }
        p.compact()
    }

    /// Cone-confined weight from `from` to `to` in `n` steps; `n = 0` gives
    /// the constant `1` at `to == from`.
    pub fn t(&self, from: Site, to: Site, n: usize) -> SitePoly<T> {
        self.build(from, to, n, false)
    }

    /// Irreducible weight from `from` to `to` in `n` steps.
    pub fn f(&self, from: Site, to: Site, n: usize) -> SitePoly<T> {
        self.build(from, to, n, true)
    }

    /// Endpoints `y` (relative) with a cone-confined shape of length `n`.
    pub fn endpoints(&self, n: usize) -> Vec<Site> {
        if n == 0 {
            return vec![Site::ORIGIN];
        }
        let mut v: Vec<Site> = self.index.keys().filter(|k| k.0 == n).map(|k| k.1).collect();
        v.sort_unstable();
        v
    }

    /// `sum_{y, 1 <= m <= m_max} f_{u,u+y,m}`.
    pub fn f_total(&self, from: Site, m_max: usize) -> SitePoly<T> {
        let mut p = SitePoly::zero();
        for m in 1..=m_max.min(self.n_max()) {
            for y in self.endpoints(m) {
                for t in self.f(from, from + y, m).terms() {
                    p.push(t.0, t.1.clone());
                }
            }
        }
        p.compact()
    }
}

/// Atoms of a finitely supported law in the scalar type.
pub fn atoms<T: Real>(law: &PotentialLaw) -> Result<Vec<(T, T)>> {
    law.finite_support()
        .map(|a| a.into_iter().map(|(v, p)| (cst(v), cst(p))).collect())
        .ok_or_else(|| Error::Invalid(format!("{law} is not finitely supported")))
}

/// Calls `f(values, probability)` for every configuration of `sites`
/// (`values[i]` is the potential at `sites[i]`). The first site varies
/// slowest.
pub fn for_each_config<T: Real>(
    sites: &[Site],
    atoms: &[(T, T)],
    mut f: impl FnMut(&[T], T),
) -> Result<()> {
    if sites.len() > MAX_FREE_SITES {
        return Err(Error::Capacity { what: "free sites", requested: sites.len(), limit: MAX_FREE_SITES });
    }
    let k = sites.len();
    let mut idx = vec![0usize; k];
    let mut vals: Vec<T> = vec![atoms[0].0; k];
    loop {
        let mut p = T::one();
        for i in 0..k {
            vals[i] = atoms[idx[i]].0;
            p *= atoms[idx[i]].1;
        }
        f(&vals, p);
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < atoms.len() {
                break;
            }
            idx[i] = 0;
        }
    }
}

/// `E[P | A]` evaluated at the frozen values `frozen` by summing over all
/// configurations of the remaining sites of `P`.
pub fn enumerate_conditional<T: Real>(
    p: &SitePoly<T>,
    law: &PotentialLaw,
    beta: T,
    frozen: &HashMap<Site, T>,
) -> Result<T> {
    let at = atoms::<T>(law)?;
    let free: Vec<Site> = p.sites().into_iter().filter(|s| !frozen.contains_key(s)).collect();
    let mut total = T::zero();
    let mut local = frozen.clone();
    for_each_config(&free, &at, |vals, prob| {
        for (s, v) in free.iter().zip(vals) {
            local.insert(*s, *v);
        }
        total += prob * p.evaluate_with(beta, |x| local[x]);
    })?;
    Ok(total)
}

/// Monte Carlo estimate of `E[P | A]` at frozen values: mean and standard
/// error over `samples` independent draws of the free sites.
pub fn sample_conditional<T: Real>(
    p: &SitePoly<T>,
    law: &PotentialLaw,
    beta: T,
    frozen: &HashMap<Site, T>,
    samples: usize,
    seed: u64,
) -> (T, T) {
    let free: Vec<Site> = p.sites().into_iter().filter(|s| !frozen.contains_key(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut local = frozen.clone();
    let mut xs = Vec::with_capacity(samples);
    for _ in 0..samples {
        for s in &free {
            local.insert(*s, cst(law.quantile(rng.gen::<f64>())));
        }
        xs.push(p.evaluate_with(beta, |x| local[x]));
    }
    let n = T::from_usize(samples.max(1)).unwrap();
    let mean = xs.iter().copied().sum::<T>() / n;
    if samples < 2 {
        return (mean, T::infinity());
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (n - T::one());
    (mean, (var / n).sqrt())
}
