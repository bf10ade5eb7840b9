//! Exhaustive enumeration of short paths: full partition functions, the
//! cone-confined and irreducible tables, and the renewal identity check.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{visit_log_factor, Environment, Potential, PotentialLaw};
use crate::error::{invalid, Error, Result};
use crate::lattice::{check_dims, directions, Direction, Site, MAX_DIMS};
use crate::polymer::ConeSpec;
use crate::scalar::{to_f64, Real};

/// Which path family a table sums over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// All paths: `Q_n(x)`.
    Full,
    /// Cone-confined paths: `t_{x,n}`.
    Cone,
    /// Irreducible paths: `f_{x,n}`.
    Irreducible,
}

/// Quenched (one environment, seen from `anchor`) or annealed weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flavor", rename_all = "snake_case")]
pub enum Flavor {
    Quenched { seed: u64, anchor: Site },
    Annealed { law: PotentialLaw },
}

/// Source of the disorder weights for an enumeration.
#[derive(Clone, Copy)]
pub enum Disorder<'a, T: Real> {
    Quenched {
        field: &'a dyn Potential<T>,
        seed: u64,
        anchor: Site,
    },
    Annealed(PotentialLaw),
}

impl<'a, T: Real> Disorder<'a, T> {
    pub fn quenched(env: &'a Environment<T>) -> Self {
        Disorder::Quenched { field: env, seed: env.seed(), anchor: Site::ORIGIN }
    }

    /// The same disorder seen from `anchor` (the shifted environment).
    pub fn at(self, anchor: Site) -> Self {
        match self {
            Disorder::Quenched { field, seed, .. } => Disorder::Quenched { field, seed, anchor },
            a => a,
        }
    }

    pub fn flavor(&self) -> Flavor {
        match *self {
            Disorder::Quenched { seed, anchor, .. } => Flavor::Quenched { seed, anchor },
            Disorder::Annealed(law) => Flavor::Annealed { law },
        }
    }

    fn dims(&self) -> Option<usize> {
        match self {
            Disorder::Quenched { field, .. } => Some(field.dims()),
            Disorder::Annealed(_) => None,
        }
    }
}

/// Parameters shared by every entry of a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableParams<T> {
    pub dims: usize,
    pub h: Vec<T>,
    pub beta: T,
    /// Cone aperture; `None` for full tables.
    pub delta: Option<T>,
}

/// Weights indexed by `(n, x)`. Raw weights are stored; [`WeightTable::get`]
/// applies the `exp(-lambda n)` shift.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable<T> {
    pub kind: TableKind,
    pub flavor: Flavor,
    pub params: TableParams<T>,
    pub lambda: T,
    pub n_max: usize,
    entries: BTreeMap<(usize, Site), T>,
}

impl<T: Real> WeightTable<T> {
    pub fn from_entries(
        kind: TableKind,
        flavor: Flavor,
        params: TableParams<T>,
        n_max: usize,
        entries: BTreeMap<(usize, Site), T>,
    ) -> Self {
        WeightTable { kind, flavor, params, lambda: T::zero(), n_max, entries }
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn set_lambda(&mut self, lambda: T) {
        self.lambda = lambda;
    }

    #[inline]
    fn shift(&self, n: usize) -> T {
        if self.lambda == T::zero() {
            T::one()
        } else {
            (-self.lambda * T::from_usize(n).unwrap()).exp()
        }
    }

    /// Unshifted weight.
    pub fn raw(&self, n: usize, x: &Site) -> T {
        self.entries.get(&(n, *x)).copied().unwrap_or_else(T::zero)
    }

    /// `exp(-lambda n)` times the raw weight.
    pub fn get(&self, n: usize, x: &Site) -> T {
        self.raw(n, x) * self.shift(n)
    }

    /// Shifted entries in `(n, x)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Site, T)> + '_ {
        self.entries.iter().map(move |(&(n, x), &w)| (n, x, w * self.shift(n)))
    }

    /// Shifted entries of one length.
    pub fn at_length(&self, n: usize) -> impl Iterator<Item = (Site, T)> + '_ {
        let s = self.shift(n);
        self.entries
            .range((n, Site([i32::MIN; MAX_DIMS]))..=(n, Site([i32::MAX; MAX_DIMS])))
            .map(move |(&(_, x), &w)| (x, w * s))
    }

    pub fn raw_entries(&self) -> &BTreeMap<(usize, Site), T> {
        &self.entries
    }

    /// `sum_x w(x, n)` for `n = 0..=n_max` (index 0 is the empty path, absent
    /// from the table and reported as 0).
    pub fn mass_by_length(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_max + 1];
        for (n, _, w) in self.iter() {
            out[n] += w;
        }
        out
    }

    /// Raw masses per length without the shift.
    pub fn raw_mass_by_length(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_max + 1];
        for (&(n, _), &w) in &self.entries {
            out[n] += w;
        }
        out
    }

    /// `Q_n(h) = sum_x Q_n(x)`: with the tilt folded in, this is the mass.
    pub fn partition_functions(&self) -> Vec<T> {
        self.mass_by_length()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes the table as CSV: a `#` comment line with the parameters, the
    /// header `n,x1,..,xD,weight`, then rows in `(n, x)` order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.params;
        let flavor = match self.flavor {
            Flavor::Quenched { seed, anchor } => format!("quenched seed={seed} anchor={anchor}"),
            Flavor::Annealed { law } => format!("annealed law={law}"),
        };
        let h: Vec<String> = p.h.iter().map(|v| format!("{:?}", to_f64(*v))).collect();
        let delta = p.delta.map_or("none".to_string(), |d| format!("{:?}", to_f64(d)));
        writeln!(
            w,
            "# kind={:?} {flavor} dims={} h={} beta={:?} delta={delta} lambda={:?}",
            self.kind,
            p.dims,
            h.join(";"),
            to_f64(p.beta),
            to_f64(self.lambda)
        )?;
        let mut header = vec!["n".to_string()];
        header.extend((1..=p.dims).map(|i| format!("x{i}")));
        header.push("weight".into());
        writeln!(w, "{}", header.join(","))?;
        for (n, x, v) in self.iter() {
            let coords: Vec<String> = x.coords(p.dims).iter().map(|c| c.to_string()).collect();
            writeln!(w, "{n},{},{:?}", coords.join(","), to_f64(v))?;
        }
        Ok(())
    }
}

/// Hard caps on the enumeration length, per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumLimits {
    /// `caps[D]` is the largest `n_max` allowed in dimension `D`.
    pub caps: [usize; MAX_DIMS + 1],
}

impl Default for EnumLimits {
    fn default() -> Self {
        EnumLimits { caps: [0, 0, 10, 7, 6, 5] }
    }
}

impl EnumLimits {
    pub fn check(&self, dims: usize, n_max: usize) -> Result<()> {
        check_dims(dims)?;
        let cap = self.caps[dims];
        if n_max > cap {
            return Err(Error::Capacity { what: "n_max", requested: n_max, limit: cap });
        }
        Ok(())
    }
}

/// Incremental log-weight bookkeeping along a depth-first traversal.
trait Walker<T: Real>: Clone + Send {
    /// Log factor for visiting `x`; `None` if `x` is outside the domain.
    fn push(&mut self, x: Site) -> Option<T>;
    fn pop(&mut self, x: Site);
}

#[derive(Clone)]
struct QuenchedWalker<'a, T: Real> {
    field: &'a dyn Potential<T>,
    anchor: Site,
    beta: T,
}

impl<'a, T: Real> Walker<T> for QuenchedWalker<'a, T> {
    #[inline]
    fn push(&mut self, x: Site) -> Option<T> {
        self.field.value(&(self.anchor + x)).map(|v| visit_log_factor(self.beta, v))
    }
    #[inline]
    fn pop(&mut self, _x: Site) {}
}

/// Tracks local times with a short linear list; paths are at most a few
/// dozen steps long here.
#[derive(Clone)]
struct AnnealedWalker<T> {
    // phi_diff[l] = phi(l + 1) - phi(l)
    phi_diff: Vec<T>,
    visits: Vec<(Site, u32)>,
}

impl<T: Real> AnnealedWalker<T> {
    fn new(law: &PotentialLaw, beta: T, n_max: usize) -> Self {
        let phi_diff = (0..=n_max as u32 + 1)
            .map(|l| law.phi_beta(beta, l + 1) - law.phi_beta(beta, l))
            .collect();
        AnnealedWalker { phi_diff, visits: Vec::with_capacity(n_max + 1) }
    }
}

impl<T: Real> Walker<T> for AnnealedWalker<T> {
    #[inline]
    fn push(&mut self, x: Site) -> Option<T> {
        if let Some(e) = self.visits.iter_mut().find(|e| e.0 == x) {
            let l = e.1;
            e.1 += 1;
            return Some(-self.phi_diff[l as usize]);
        }
        self.visits.push((x, 1));
        Some(-self.phi_diff[0])
    }
    #[inline]
    fn pop(&mut self, x: Site) {
        let i = self.visits.iter().rposition(|e| e.0 == x).expect("pop of unvisited site");
        if self.visits[i].1 == 1 {
            self.visits.swap_remove(i);
        } else {
            self.visits[i].1 -= 1;
        }
    }
}

type Acc<T> = HashMap<(usize, Site), T>;

struct Dfs<'c, T: Real> {
    dims: usize,
    n_max: usize,
    h: Vec<T>,
    log_step: T,
    cone: Option<&'c ConeSpec<T>>,
    // forward[k]: gamma_k - gamma_j in Y for all j < k
    forward: Vec<bool>,
    verts: Vec<Site>,
    full: Acc<T>,
    irreducible: Acc<T>,
    error: Option<Site>,
}

impl<'c, T: Real> Dfs<'c, T> {
    fn new(dims: usize, n_max: usize, h: &[T], cone: Option<&'c ConeSpec<T>>) -> Self {
        Dfs {
            dims,
            n_max,
            h: h.to_vec(),
            log_step: -T::from_usize(2 * dims).unwrap().ln(),
            cone,
            forward: vec![true],
            verts: vec![Site::ORIGIN],
            full: Acc::new(),
            irreducible: Acc::new(),
            error: None,
        }
    }

    fn record(&mut self, logw: T) {
        let n = self.verts.len() - 1;
        let end = *self.verts.last().unwrap();
        let w = (logw + end.dot(&self.h) + self.log_step * T::from_usize(n).unwrap()).exp();
        match self.cone {
            None => *self.full.entry((n, end)).or_insert_with(T::zero) += w,
            Some(cone) => {
                // forward[n] is exactly the backward-cone condition at the endpoint
                if !self.forward[n] {
                    return;
                }
                *self.full.entry((n, end)).or_insert_with(T::zero) += w;
                let irreducible = (1..n).all(|k| {
                    !(self.forward[k] && self.verts[k + 1..].iter().all(|v| cone.precedes(&self.verts[k], v)))
                });
                if irreducible {
                    *self.irreducible.entry((n, end)).or_insert_with(T::zero) += w;
                }
            }
        }
    }

    fn descend<W: Walker<T>>(&mut self, walker: &mut W, d: Direction, logw: T) {
        if self.error.is_some() {
            return;
        }
        let x = self.verts.last().unwrap().step(d);
        if let Some(cone) = self.cone {
            if !cone.precedes(&Site::ORIGIN, &x) {
                return;
            }
        }
        let Some(inc) = walker.push(x) else {
            self.error = Some(x);
            return;
        };
        let logw = logw + inc;
        if logw != T::neg_infinity() {
            let fwd = match self.cone {
                Some(cone) => self.verts.iter().all(|v| cone.precedes(v, &x)),
                None => true,
            };
            self.verts.push(x);
            self.forward.push(fwd);
            self.record(logw);
            if self.verts.len() <= self.n_max {
                for d2 in directions(self.dims) {
                    self.descend(walker, d2, logw);
                }
            }
            self.verts.pop();
            self.forward.pop();
        }
        walker.pop(x);
    }
}

fn run_dfs<T: Real, W: Walker<T> + Sync>(
    dims: usize,
    n_max: usize,
    h: &[T],
    cone: Option<&ConeSpec<T>>,
    walker: W,
) -> Result<(Acc<T>, Acc<T>)> {
    let branches: Vec<(Acc<T>, Acc<T>, Option<Site>)> = directions(dims)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|d| {
            let mut dfs = Dfs::new(dims, n_max, h, cone);
            let mut w = walker.clone();
            if n_max > 0 {
                dfs.descend(&mut w, d, T::zero());
            }
            (dfs.full, dfs.irreducible, dfs.error)
        })
        .collect();
    // merge in direction order for bit-stable sums
    let mut full = Acc::new();
    let mut irr = Acc::new();
    for (f, i, err) in branches {
        if let Some(x) = err {
            return Err(Error::OutOfDomain(x));
        }
        merge_sorted(&mut full, f);
        merge_sorted(&mut irr, i);
    }
    Ok((full, irr))
}

fn merge_sorted<T: Real>(into: &mut Acc<T>, from: Acc<T>) {
    let mut items: Vec<_> = from.into_iter().collect();
    items.sort_by_key(|a| a.0);
    for (k, v) in items {
        *into.entry(k).or_insert_with(T::zero) += v;
    }
}

fn to_btree<T: Real>(acc: Acc<T>) -> BTreeMap<(usize, Site), T> {
    acc.into_iter().collect()
}

fn dispatch<T: Real>(
    disorder: &Disorder<T>,
    dims: usize,
    h: &[T],
    beta: T,
    n_max: usize,
    cone: Option<&ConeSpec<T>>,
) -> Result<(Acc<T>, Acc<T>)> {
    match *disorder {
        Disorder::Quenched { field, anchor, .. } => {
            run_dfs(dims, n_max, h, cone, QuenchedWalker { field, anchor, beta })
        }
        Disorder::Annealed(law) => run_dfs(dims, n_max, h, cone, AnnealedWalker::new(&law, beta, n_max)),
    }
}

fn check_common<T: Real>(disorder: &Disorder<T>, dims: usize, h: &[T], beta: T) -> Result<()> {
    check_dims(dims)?;
    if h.len() != dims {
        return invalid(format!("h has {} components, expected {dims}", h.len()));
    }
    if !(beta >= T::zero()) || !beta.is_finite() {
        return invalid(format!("beta must be a finite non-negative number, got {beta}"));
    }
    if let Some(d) = disorder.dims() {
        if d != dims {
            return invalid(format!("environment has dims {d}, expected {dims}"));
        }
    }
    if let Disorder::Annealed(law) = disorder {
        law.validate()?;
    }
    Ok(())
}

/// Full partition functions `Q_n(x) e^{h.x}` for `1 <= n <= n_max`, summed
/// over all `(2D)^n` paths. `Q_0 = delta_0` is implicit.
pub fn enumerate_q<T: Real>(
    disorder: &Disorder<T>,
    h: &[T],
    beta: T,
    n_max: usize,
    limits: &EnumLimits,
) -> Result<WeightTable<T>> {
    let dims = h.len();
    check_common(disorder, dims, h, beta)?;
    limits.check(dims, n_max)?;
    let (full, _) = dispatch(disorder, dims, h, beta, n_max, None)?;
    Ok(WeightTable::from_entries(
        TableKind::Full,
        disorder.flavor(),
        TableParams { dims, h: h.to_vec(), beta, delta: None },
        n_max,
        to_btree(full),
    ))
}

/// Cone-confined (`t`) and irreducible (`f`) tables, tilted by the cone
/// direction `h` and shifted by `lambda`.
pub fn enumerate_basic<T: Real>(
    disorder: &Disorder<T>,
    cone: &ConeSpec<T>,
    beta: T,
    lambda: T,
    n_max: usize,
    limits: &EnumLimits,
) -> Result<(WeightTable<T>, WeightTable<T>)> {
    let dims = cone.dims();
    let h = cone.h();
    check_common(disorder, dims, h, beta)?;
    limits.check(dims, n_max)?;
    let (t, f) = dispatch(disorder, dims, h, beta, n_max, Some(cone))?;
    let params = TableParams { dims, h: h.to_vec(), beta, delta: Some(cone.delta()) };
    let flavor = disorder.flavor();
    Ok((
        WeightTable::from_entries(TableKind::Cone, flavor, params.clone(), n_max, to_btree(t)).with_lambda(lambda),
        WeightTable::from_entries(TableKind::Irreducible, flavor, params, n_max, to_btree(f)).with_lambda(lambda),
    ))
}

fn check_pair<T: Real>(t: &WeightTable<T>, f: &WeightTable<T>, anchor: Site) -> Result<()> {
    if t.kind != TableKind::Cone || f.kind != TableKind::Irreducible {
        return invalid("renewal check needs a cone table and an irreducible table");
    }
    if t.params != f.params || t.lambda != f.lambda {
        return invalid("renewal check: tables were built with different parameters");
    }
    match (t.flavor, f.flavor) {
        (Flavor::Annealed { law: a }, Flavor::Annealed { law: b }) if a == b => Ok(()),
        (Flavor::Quenched { seed: a, anchor: o }, Flavor::Quenched { seed: b, anchor: x })
            if a == b && x == o + anchor =>
        {
            Ok(())
        }
        _ => invalid(format!("renewal check: flavour mismatch for anchor {anchor}")),
    }
}

/// Max over `z` of `|t_{z,n} - sum_{m<n} sum_x t_{x,m} f^{(x)}_{z-x,n-m}|`
/// with `t_{0,0} = 1`. `f_at(x)` supplies the irreducible table seen from
/// anchor `x` (for annealed tables, the same table for every `x`).
pub fn verify_renewal<T: Real>(
    t: &WeightTable<T>,
    f_at: &mut dyn FnMut(Site) -> Result<Arc<WeightTable<T>>>,
    n: usize,
) -> Result<T> {
    if n == 0 || n > t.n_max {
        return invalid(format!("renewal check length {n} outside 1..={}", t.n_max));
    }
    let mut conv: BTreeMap<Site, T> = BTreeMap::new();
    let mut anchors: Vec<(usize, Site, T)> = vec![(0, Site::ORIGIN, T::one())];
    for m in 1..n {
        anchors.extend(t.at_length(m).map(|(x, w)| (m, x, w)));
    }
    let mut cache: HashMap<Site, Arc<WeightTable<T>>> = HashMap::new();
    for (m, x, tw) in anchors {
        let f = match cache.get(&x) {
            Some(f) => f.clone(),
            None => {
                let f = f_at(x)?;
                check_pair(t, &f, x)?;
                if f.n_max < n - m {
                    return invalid("irreducible table is shorter than the checked length");
                }
                cache.insert(x, f.clone());
                f
            }
        };
        for (y, fw) in f.at_length(n - m) {
            *conv.entry(x + y).or_insert_with(T::zero) += tw * fw;
        }
    }
    let mut worst = T::zero();
    for (z, w) in t.at_length(n) {
        let c = conv.remove(&z).unwrap_or_else(T::zero);
        worst = worst.max((w - c).abs());
    }
    for (_, c) in conv {
        worst = worst.max(c.abs());
    }
    Ok(worst)
}

/// Renewal residuals for `n = 1..=t.n_max`.
pub fn verify_renewal_all<T: Real>(
    t: &WeightTable<T>,
    f_at: &mut dyn FnMut(Site) -> Result<Arc<WeightTable<T>>>,
) -> Result<Vec<T>> {
    (1..=t.n_max).map(|n| verify_renewal(t, f_at, n)).collect()
}

/// Convenience: builds the `t` table and checks the renewal identity for all
/// lengths, computing anchored `f` tables on demand.
pub fn renewal_residuals<T: Real>(
    disorder: &Disorder<T>,
    cone: &ConeSpec<T>,
    beta: T,
    lambda: T,
    n_max: usize,
    limits: &EnumLimits,
) -> Result<Vec<T>> {
    let (t, f0) = enumerate_basic(disorder, cone, beta, lambda, n_max, limits)?;
    let f0 = Arc::new(f0);
    let catalogue = BasicCatalogue::new(cone, n_max, limits)?;
    let mut f_at = |x: Site| -> Result<Arc<WeightTable<T>>> {
        match disorder {
            Disorder::Annealed(_) => Ok(f0.clone()),
            Disorder::Quenched { .. } => {
                if x == Site::ORIGIN {
                    return Ok(f0.clone());
                }
                let (_, f) = catalogue.tables(&disorder.at(x), beta, lambda)?;
                Ok(Arc::new(f))
            }
        }
    };
    verify_renewal_all(&t, &mut f_at)
}

/// One cone-confined path shape from the origin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    pub steps: Vec<Direction>,
    pub end: Site,
    pub irreducible: bool,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
    /// `gamma_1, ..., gamma_n`.
    pub fn visits(&self) -> impl Iterator<Item = Site> + '_ {
        self.steps.iter().scan(Site::ORIGIN, |x, &d| {
            *x = x.step(d);
            Some(*x)
        })
    }
}

/// All cone-confined shapes up to a length, independent of the disorder.
/// Evaluating them against many anchors or environments avoids repeated
/// traversals.
#[derive(Clone, Debug)]
pub struct BasicCatalogue<T> {
    cone: ConeSpec<T>,
    n_max: usize,
    shapes: Vec<Shape>,
}

impl<T: Real> BasicCatalogue<T> {
    pub fn new(cone: &ConeSpec<T>, n_max: usize, limits: &EnumLimits) -> Result<Self> {
        limits.check(cone.dims(), n_max)?;
        let mut shapes = Vec::new();
        let mut steps = Vec::new();
        let mut verts = vec![Site::ORIGIN];
        let mut fwd = vec![true];
        collect_shapes(cone, n_max, &mut steps, &mut verts, &mut fwd, &mut shapes);
        Ok(BasicCatalogue { cone: cone.clone(), n_max, shapes })
    }

    pub fn cone(&self) -> &ConeSpec<T> {
        &self.cone
    }
    pub fn n_max(&self) -> usize {
        self.n_max
    }
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Raw shape weight `exp(h.X + sum log visit factors) (2D)^{-n}`.
    pub fn shape_weight(&self, shape: &Shape, disorder: &Disorder<T>, beta: T) -> Result<T> {
        let dims = self.cone.dims();
        let log_step = -T::from_usize(2 * dims).unwrap().ln();
        let mut logw = shape.end.dot(self.cone.h()) + log_step * T::from_usize(shape.len()).unwrap();
        match *disorder {
            Disorder::Quenched { field, anchor, .. } => {
                for x in shape.visits() {
                    let v = field.value(&(anchor + x)).ok_or(Error::OutOfDomain(anchor + x))?;
                    logw += visit_log_factor(beta, v);
                }
            }
            Disorder::Annealed(law) => {
                let mut lt: Vec<(Site, u32)> = Vec::with_capacity(shape.len());
                for x in shape.visits() {
                    match lt.iter_mut().find(|e| e.0 == x) {
                        Some(e) => e.1 += 1,
                        None => lt.push((x, 1)),
                    }
                }
                for (_, c) in lt {
                    logw -= law.phi_beta(beta, c);
                }
            }
        }
        Ok(logw.exp())
    }

    /// `t` and `f` tables for the given disorder; equal to
    /// [`enumerate_basic`] up to summation order.
    pub fn tables(&self, disorder: &Disorder<T>, beta: T, lambda: T) -> Result<(WeightTable<T>, WeightTable<T>)> {
        self.tables_upto(disorder, beta, lambda, self.n_max)
    }

    pub fn tables_upto(
        &self,
        disorder: &Disorder<T>,
        beta: T,
        lambda: T,
        n_max: usize,
    ) -> Result<(WeightTable<T>, WeightTable<T>)> {
        let dims = self.cone.dims();
        check_common(disorder, dims, self.cone.h(), beta)?;
        let mut t = BTreeMap::new();
        let mut f = BTreeMap::new();
        for s in self.shapes.iter().filter(|s| s.len() <= n_max) {
            let w = self.shape_weight(s, disorder, beta)?;
            if w == T::zero() {
                continue;
            }
            *t.entry((s.len(), s.end)).or_insert_with(T::zero) += w;
            if s.irreducible {
                *f.entry((s.len(), s.end)).or_insert_with(T::zero) += w;
            }
        }
        let params = TableParams { dims, h: self.cone.h().to_vec(), beta, delta: Some(self.cone.delta()) };
        let flavor = disorder.flavor();
        Ok((
            WeightTable::from_entries(TableKind::Cone, flavor, params.clone(), n_max, t).with_lambda(lambda),
            WeightTable::from_entries(TableKind::Irreducible, flavor, params, n_max, f).with_lambda(lambda),
        ))
    }

    /// Total raw irreducible weight `sum_{x, n <= n_max} f_{x,n}` seen from
    /// one anchor, shifted by `lambda`.
    pub fn irreducible_total(&self, disorder: &Disorder<T>, beta: T, lambda: T, n_max: usize) -> Result<T> {
        let mut total = T::zero();
        for s in self.shapes.iter().filter(|s| s.irreducible && s.len() <= n_max) {
            let w = self.shape_weight(s, disorder, beta)?;
            total += w * (-lambda * T::from_usize(s.len()).unwrap()).exp();
        }
        Ok(total)
    }
}

fn collect_shapes<T: Real>(
    cone: &ConeSpec<T>,
    n_max: usize,
    steps: &mut Vec<Direction>,
    verts: &mut Vec<Site>,
    fwd: &mut Vec<bool>,
    out: &mut Vec<Shape>,
) {
    if steps.len() == n_max {
        return;
    }
    for d in directions(cone.dims()) {
        let x = verts.last().unwrap().step(d);
        if !cone.precedes(&Site::ORIGIN, &x) {
            continue;
        }
        let f = verts.iter().all(|v| cone.precedes(v, &x));
        steps.push(d);
        verts.push(x);
        fwd.push(f);
        if f {
            // x is the endpoint; it needs every vertex behind it in the cone
            let n = steps.len();
            let irreducible = (1..n).all(|k| !(fwd[k] && verts[k + 1..].iter().all(|v| cone.precedes(&verts[k], v))));
            out.push(Shape { steps: steps.clone(), end: x, irreducible });
        }
        collect_shapes(cone, n_max, steps, verts, fwd, out);
        steps.pop();
        verts.pop();
        fwd.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::sample_environment;

    #[test]
    fn beta_zero_untilted_is_probability() {
        let law = PotentialLaw::BernoulliTrap { p_inf: 0.3 };
        let q = enumerate_q(&Disorder::Annealed(law), &[0.0, 0.0], 0.0, 6, &EnumLimits::default()).unwrap();
        for z in &q.partition_functions()[1..] {
            assert!((z - 1.0f64).abs() < 1e-14);
        }
    }

    #[test]
    fn one_step_annealed_hand_value() {
        let law = PotentialLaw::Exponential { rate: 1.0 };
        let (t, beta) = (0.7f64, 0.4f64);
        let q = enumerate_q(&Disorder::Annealed(law), &[t, 0.0], beta, 1, &EnumLimits::default()).unwrap();
        let want = (-law.phi_beta(beta, 1)).exp() * (t.exp() + (-t).exp() + 2.0) / 4.0;
        assert!((q.partition_functions()[1] - want).abs() < 1e-15);
    }

    #[test]
    fn caps_are_enforced() {
        let law = PotentialLaw::Deterministic { v0: 0.0 };
        let r = enumerate_q(&Disorder::Annealed(law), &[0.0; 3], 0.0, 8, &EnumLimits::default());
        assert!(matches!(r, Err(Error::Capacity { what: "n_max", .. })));
    }

    #[test]
    fn small_box_is_an_error() {
        let law = PotentialLaw::BernoulliTrap { p_inf: 0.1 };
        let env: Environment<f64> = sample_environment(&law, 2, 2, 1).unwrap();
        let r = enumerate_q(&Disorder::quenched(&env), &[0.0, 0.0], 1.0, 4, &EnumLimits::default());
        assert!(matches!(r, Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn catalogue_matches_dfs() {
        let law = PotentialLaw::TwoPoint { v0: 0.0, v1: 1.5, p: 0.4 };
        let env: Environment<f64> = sample_environment(&law, 2, 9, 3).unwrap();
        let cone = ConeSpec::new(vec![0.8, 0.3], 0.3).unwrap();
        let lim = EnumLimits::default();
        let cat = BasicCatalogue::new(&cone, 7, &lim).unwrap();
        for dis in [Disorder::Annealed(law), Disorder::quenched(&env).at(Site::new(&[1, -1]))] {
            let (t1, f1) = enumerate_basic(&dis, &cone, 0.6, 0.1, 7, &lim).unwrap();
            let (t2, f2) = cat.tables(&dis, 0.6, 0.1).unwrap();
            for (a, b) in [(&t1, &t2), (&f1, &f2)] {
                assert_eq!(a.len(), b.len());
                for (n, x, w) in a.iter() {
                    assert!((w - b.get(n, &x)).abs() <= 1e-14 * w.abs());
                }
            }
        }
    }

    #[test]
    fn length_one_tables_agree() {
        let cone = ConeSpec::new(vec![1.0, 0.0], 0.3).unwrap();
        let law = PotentialLaw::Deterministic { v0: 0.5 };
        let (t, f) = enumerate_basic(&Disorder::Annealed(law), &cone, 1.0, 0.0, 1, &EnumLimits::default()).unwrap();
        assert_eq!(t, f.clone().with_lambda(0.0).tap_kind(TableKind::Cone));
        assert_eq!(t.len(), 1);
        assert!(t.raw(1, &Site::unit(0)) > 0.0);
    }

    impl<T: Real> WeightTable<T> {
        fn tap_kind(mut self, k: TableKind) -> Self {
            self.kind = k;
            self
        }
    }
}
