//! Random potential fields and the annealed one-site potential.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{box_sites, check_dims, directions, Site, MAX_DIMS};
use crate::scalar::{cst, log_sum_exp, Real};

/// Largest number of sites a dense [`Environment`] may hold.
pub const MAX_ENV_SITES: usize = 64_000_000;

/// Distribution of the i.i.d. potential `V(x) in [0, inf]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialLaw {
    /// `V = v0` almost surely.
    Deterministic { v0: f64 },
    /// `P(V = inf) = p_inf`, `P(V = 0) = 1 - p_inf`.
    BernoulliTrap { p_inf: f64 },
    /// `P(V = v1) = p`, `P(V = v0) = 1 - p`.
    TwoPoint { v0: f64, v1: f64, p: f64 },
    /// `V ~ Exp(rate)`.
    Exponential { rate: f64 },
}

impl PotentialLaw {
    pub fn validate(&self) -> Result<()> {
        let ok_val = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            PotentialLaw::Deterministic { v0 } if !ok_val(v0) => {
                invalid(format!("det: v must be a finite non-negative number, got {v0}"))
            }
            PotentialLaw::BernoulliTrap { p_inf } if !(0.0..1.0).contains(&p_inf) => {
                invalid(format!("bernoulli: p must lie in [0, 1), got {p_inf}"))
            }
            PotentialLaw::TwoPoint { v0, v1, p } => {
                if !ok_val(v0) || !ok_val(v1) {
                    invalid("twopoint: v0 and v1 must be finite and non-negative")
                } else if !(0.0..=1.0).contains(&p) {
                    invalid(format!("twopoint: p must lie in [0, 1], got {p}"))
                } else {
                    Ok(())
                }
            }
            PotentialLaw::Exponential { rate } if !(rate.is_finite() && rate > 0.0) => {
                invalid(format!("exp: rate must be positive, got {rate}"))
            }
            _ => Ok(()),
        }
    }

    /// Whether `0` lies in the support of `V`.
    pub fn is_normalized(&self) -> bool {
        match *self {
            PotentialLaw::Deterministic { v0 } => v0 == 0.0,
            PotentialLaw::BernoulliTrap { .. } => true,
            PotentialLaw::TwoPoint { v0, v1, p } => (v0 == 0.0 && p < 1.0) || (v1 == 0.0 && p > 0.0),
            PotentialLaw::Exponential { .. } => true,
        }
    }

    pub fn has_traps(&self) -> bool {
        matches!(*self, PotentialLaw::BernoulliTrap { p_inf } if p_inf > 0.0)
    }

    /// Atoms `(value, probability)` for finitely supported laws, zero-mass
    /// atoms dropped.
    pub fn finite_support(&self) -> Option<Vec<(f64, f64)>> {
        let atoms = match *self {
            PotentialLaw::Deterministic { v0 } => vec![(v0, 1.0)],
            PotentialLaw::BernoulliTrap { p_inf } => vec![(0.0, 1.0 - p_inf), (f64::INFINITY, p_inf)],
            PotentialLaw::TwoPoint { v0, v1, p } => vec![(v0, 1.0 - p), (v1, p)],
            PotentialLaw::Exponential { .. } => return None,
        };
        Some(atoms.into_iter().filter(|a| a.1 > 0.0).collect())
    }

    /// `phi_beta(ell) = -log E exp(-beta * ell * V)`, with `phi(0) = 0`.
    pub fn phi_beta<T: Real>(&self, beta: T, ell: u32) -> T {
        if ell == 0 || beta == T::zero() {
            return T::zero();
        }
        let bl = beta * T::from_u32(ell).unwrap();
        match *self {
            PotentialLaw::Deterministic { v0 } => bl * cst(v0),
            PotentialLaw::BernoulliTrap { p_inf } => -(-cst::<T>(p_inf)).ln_1p(),
            PotentialLaw::TwoPoint { v0, v1, p } => {
                let a = (-cst::<T>(p)).ln_1p() - bl * cst(v0);
                let b = cst::<T>(p).ln() - bl * cst(v1);
                -log_sum_exp(&[a, b])
            }
            PotentialLaw::Exponential { rate } => (bl / cst(rate)).ln_1p(),
        }
    }

    /// If the annealed interaction is linear in the local time at this
    /// `beta`, returns the per-visit weight `exp(-phi(1))`; annealed path
    /// weights then factor over steps.
    pub fn markov_weight<T: Real>(&self, beta: T) -> Option<T> {
        if beta == T::zero() {
            return Some(T::one());
        }
        match *self {
            PotentialLaw::Deterministic { .. } => Some((-self.phi_beta(beta, 1)).exp()),
            PotentialLaw::BernoulliTrap { p_inf: 0.0 } => Some(T::one()),
            PotentialLaw::TwoPoint { v0, v1, p } if p == 0.0 || p == 1.0 || v0 == v1 => {
                Some((-self.phi_beta(beta, 1)).exp())
            }
            _ => None,
        }
    }

    /// Whether the law puts all its mass on one value.
    pub fn is_degenerate(&self) -> bool {
        match *self {
            PotentialLaw::Deterministic { .. } => true,
            PotentialLaw::BernoulliTrap { p_inf } => p_inf == 0.0,
            PotentialLaw::TwoPoint { v0, v1, p } => p == 0.0 || p == 1.0 || v0 == v1,
            PotentialLaw::Exponential { .. } => false,
        }
    }

    /// Inverse-CDF draw from a uniform `u in [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            PotentialLaw::Deterministic { v0 } => v0,
            PotentialLaw::BernoulliTrap { p_inf } => {
                if u < p_inf {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            PotentialLaw::TwoPoint { v0, v1, p } => {
                if u < p {
                    v1
                } else {
                    v0
                }
            }
            PotentialLaw::Exponential { rate } => -(-u).ln_1p() / rate,
        }
    }
}

impl fmt::Display for PotentialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PotentialLaw::Deterministic { v0 } => write!(f, "det:v={v0:?}"),
            PotentialLaw::BernoulliTrap { p_inf } => write!(f, "bernoulli:p={p_inf:?}"),
            PotentialLaw::TwoPoint { v0, v1, p } => write!(f, "twopoint:v0={v0:?},v1={v1:?},p={p:?}"),
            PotentialLaw::Exponential { rate } => write!(f, "exp:rate={rate:?}"),
        }
    }
}

impl FromStr for PotentialLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params: Vec<(&str, f64)> = Vec::new();
        for kv in rest.split(',').filter(|t| !t.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("law parameter `{kv}` is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("law parameter `{kv}` is not a number")))?;
            params.push((k.trim(), v));
        }
        let take = |names: &[&str]| -> Result<Vec<f64>> {
            for (k, _) in &params {
                if !names.contains(k) {
                    return Err(Error::Parse(format!("unknown parameter `{k}` for law `{kind}`")));
                }
            }
            names
                .iter()
                .map(|n| {
                    params
                        .iter()
                        .find(|(k, _)| k == n)
                        .map(|p| p.1)
                        .ok_or_else(|| Error::Parse(format!("law `{kind}` needs parameter `{n}`")))
                })
                .collect()
        };
        let law = match kind {
            "det" | "deterministic" => PotentialLaw::Deterministic { v0: take(&["v"])?[0] },
            "bernoulli" => PotentialLaw::BernoulliTrap { p_inf: take(&["p"])?[0] },
            "twopoint" => {
                let v = take(&["v0", "v1", "p"])?;
                PotentialLaw::TwoPoint { v0: v[0], v1: v[1], p: v[2] }
            }
            "exp" => PotentialLaw::Exponential { rate: take(&["rate"])?[0] },
            other => {
                return Err(Error::Parse(format!(
                    "unknown law `{other}` (expected det, bernoulli, twopoint or exp)"
                )))
            }
        };
        law.validate()?;
        Ok(law)
    }
}

/// One violation of `0 < phi(l) <= phi(l+m) <= phi(l) + phi(m)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttractivityViolation {
    pub ell: u32,
    pub m: u32,
    pub kind: &'static str,
    pub amount: f64,
}

/// Checks positivity, monotonicity and subadditivity of `phi_beta` on
/// `1 <= l, m <= max_ell`. Positivity is skipped at `beta = 0`.
pub fn check_attractivity(law: &PotentialLaw, beta: f64, max_ell: u32) -> Vec<AttractivityViolation> {
    let phi = |l: u32| law.phi_beta(beta, l);
    let tol = |x: f64| 1e-12 * x.abs().max(1.0);
    let mut out = Vec::new();
    for l in 1..=max_ell {
        let pl = phi(l);
        if beta > 0.0 && !(pl > 0.0) && !law.is_normalized_zero() {
            out.push(AttractivityViolation { ell: l, m: 0, kind: "positivity", amount: pl });
        }
        for m in 1..=max_ell {
            let plm = phi(l + m);
            if plm < pl - tol(pl) {
                out.push(AttractivityViolation { ell: l, m, kind: "monotonicity", amount: pl - plm });
            }
            let sum = pl + phi(m);
            if plm > sum + tol(sum) {
                out.push(AttractivityViolation { ell: l, m, kind: "subadditivity", amount: plm - sum });
            }
        }
    }
    out
}

impl PotentialLaw {
    // V = 0 a.s. makes phi vanish identically; that is not a positivity
    // failure of the functional, only a degenerate law.
    fn is_normalized_zero(&self) -> bool {
        match *self {
            PotentialLaw::Deterministic { v0 } => v0 == 0.0,
            PotentialLaw::BernoulliTrap { p_inf } => p_inf == 0.0,
            PotentialLaw::TwoPoint { v0, v1, p } => {
                (v0 == 0.0 || p == 1.0) && (v1 == 0.0 || p == 0.0)
            }
            PotentialLaw::Exponential { .. } => false,
        }
    }
}

/// Per-visit factor `exp(-beta V)` with `exp(-beta * inf) = 0` for `beta > 0`
/// and `1` at `beta = 0`.
#[inline]
pub fn visit_factor<T: Real>(beta: T, v: T) -> T {
    if beta == T::zero() {
        T::one()
    } else if v.is_infinite() {
        T::zero()
    } else {
        (-beta * v).exp()
    }
}

/// `-beta V` in log space (`-inf` for a trap when `beta > 0`).
#[inline]
pub fn visit_log_factor<T: Real>(beta: T, v: T) -> T {
    if beta == T::zero() {
        T::zero()
    } else if v.is_infinite() {
        T::neg_infinity()
    } else {
        -beta * v
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based hash of `(seed, x)`; the site value depends on nothing else.
pub fn site_hash(seed: u64, x: &Site) -> u64 {
    let mut h = splitmix64(seed);
    for &c in &x.0 {
        h = splitmix64(h ^ (c as u32 as u64));
    }
    h
}

/// Uniform `[0, 1)` variate attached to `(seed, x)`.
#[inline]
pub fn site_uniform(seed: u64, x: &Site) -> f64 {
    (site_hash(seed, x) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives the seed of the `index`-th member of an ensemble.
pub fn ensemble_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Read access to a potential field. `None` means the site is outside the
/// field's domain.
pub trait Potential<T: Real>: Sync {
    fn dims(&self) -> usize;
    fn value(&self, x: &Site) -> Option<T>;
}

/// A sampled field on the box `|x|_inf <= radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment<T> {
    dims: usize,
    radius: i32,
    law: PotentialLaw,
    seed: u64,
    values: Vec<T>,
}

fn box_len(dims: usize, radius: i32) -> Result<usize> {
    let side = (2 * radius as u64 + 1) as u128;
    let n = side.pow(dims as u32);
    if n > MAX_ENV_SITES as u128 {
        return Err(Error::Capacity {
            what: "environment sites",
            requested: n.min(usize::MAX as u128) as usize,
            limit: MAX_ENV_SITES,
        });
    }
    Ok(n as usize)
}

/// Draws the field on the box of the given radius. Each site value is a
/// pure function of `(law, seed, x)`.
pub fn sample_environment<T: Real>(
    law: &PotentialLaw,
    dims: usize,
    box_radius: i32,
    seed: u64,
) -> Result<Environment<T>> {
    check_dims(dims)?;
    law.validate()?;
    if box_radius < 1 {
        return invalid(format!("box radius must be at least 1, got {box_radius}"));
    }
    let n = box_len(dims, box_radius)?;
    let mut values = Vec::with_capacity(n);
    values.extend(box_sites(dims, box_radius).map(|x| cst::<T>(law.quantile(site_uniform(seed, &x)))));
    Ok(Environment {
        dims,
        radius: box_radius,
        law: *law,
        seed,
        values,
    })
}

impl<T: Real> Environment<T> {
    pub fn dims(&self) -> usize {
        self.dims
    }
    pub fn radius(&self) -> i32 {
        self.radius
    }
    pub fn law(&self) -> &PotentialLaw {
        &self.law
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    fn index(&self, x: &Site) -> Option<usize> {
        let side = 2 * self.radius + 1;
        let mut idx = 0usize;
        for &c in &x.0[..self.dims] {
            if c.abs() > self.radius {
                return None;
            }
            idx = idx * side as usize + (c + self.radius) as usize;
        }
        if x.0[self.dims..].iter().any(|&c| c != 0) {
            return None;
        }
        Some(idx)
    }

    pub fn get(&self, x: &Site) -> Option<T> {
        self.index(x).map(|i| self.values[i])
    }

    /// Overwrites one site, e.g. to build hand-made test fields.
    pub fn set(&mut self, x: &Site, v: T) -> Result<()> {
        match self.index(x) {
            Some(i) => {
                self.values[i] = v;
                Ok(())
            }
            None => Err(Error::OutOfDomain(*x)),
        }
    }

    /// A field with every value equal to `v`.
    pub fn constant(dims: usize, radius: i32, v: T) -> Result<Environment<T>> {
        check_dims(dims)?;
        let n = box_len(dims, radius)?;
        Ok(Environment {
            dims,
            radius,
            law: PotentialLaw::Deterministic { v0: crate::scalar::to_f64(v) },
            seed: 0,
            values: vec![v; n],
        })
    }

    pub fn trap_fraction(&self) -> f64 {
        let traps = self.values.iter().filter(|v| v.is_infinite()).count();
        traps as f64 / self.values.len() as f64
    }

    /// The origin's own value is a trap.
    pub fn origin_is_trap(&self) -> bool {
        self.get(&Site::ORIGIN).is_some_and(|v| v.is_infinite())
    }

    /// Every neighbour of the origin is a trap, so all weights with `n >= 1`
    /// vanish for `beta > 0`.
    pub fn origin_blocked(&self) -> bool {
        directions(self.dims).all(|d| self.get(&Site::ORIGIN.step(d)).is_some_and(|v| v.is_infinite()))
    }

    /// Writes the `POLYENV v1` text format.
    pub fn write_polyenv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "POLYENV v1 dims={} radius={} law={} seed={}",
            self.dims, self.radius, self.law, self.seed
        )?;
        let mut line = String::new();
        for (x, v) in box_sites(self.dims, self.radius).zip(&self.values) {
            line.clear();
            for c in x.coords(self.dims) {
                line.push_str(&c.to_string());
                line.push(' ');
            }
            if v.is_infinite() {
                line.push_str("inf");
            } else {
                line.push_str(&format!("{v:?}"));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_polyenv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_polyenv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Reads the `POLYENV v1` text format.
    pub fn read_polyenv<R: BufRead>(r: R) -> Result<Environment<T>> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty POLYENV input".into()))??;
        let mut toks = header.split_whitespace();
        if toks.next() != Some("POLYENV") || toks.next() != Some("v1") {
            return Err(Error::Parse("missing `POLYENV v1` header".into()));
        }
        let (mut dims, mut radius, mut law, mut seed) = (None, None, None, None);
        for t in toks {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field `{t}`")))?;
            let bad = || Error::Parse(format!("bad header value `{t}`"));
            match k {
                "dims" => dims = Some(v.parse::<usize>().map_err(|_| bad())?),
                "radius" => radius = Some(v.parse::<i32>().map_err(|_| bad())?),
                "law" => law = Some(v.parse::<PotentialLaw>()?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                _ => return Err(Error::Parse(format!("unknown header field `{k}`"))),
            }
        }
        let missing = |f: &str| Error::Parse(format!("header lacks `{f}`"));
        let dims = dims.ok_or_else(|| missing("dims"))?;
        let radius = radius.ok_or_else(|| missing("radius"))?;
        let law = law.ok_or_else(|| missing("law"))?;
        let seed = seed.ok_or_else(|| missing("seed"))?;
        check_dims(dims)?;
        if radius < 1 {
            return Err(Error::Parse("radius must be at least 1".into()));
        }
        let n = box_len(dims, radius)?;
        let mut values = Vec::with_capacity(n);
        let mut expected = box_sites(dims, radius);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != dims + 1 {
                return Err(Error::Parse(format!("line {}: expected {} fields", lineno + 2, dims + 1)));
            }
            let mut c = [0i32; MAX_DIMS];
            for (i, p) in parts[..dims].iter().enumerate() {
                c[i] = p
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad coordinate `{p}`", lineno + 2)))?;
            }
            let x = Site(c);
            if expected.next() != Some(x) {
                return Err(Error::Parse(format!(
                    "line {}: site {x} out of lexicographic order or outside the box",
                    lineno + 2
                )));
            }
            let raw = parts[dims];
            let v = if raw == "inf" {
                T::infinity()
            } else {
                let v = T::from_str_radix(raw, 10)
                    .map_err(|_| Error::Parse(format!("line {}: bad value `{raw}`", lineno + 2)))?;
                if !(v >= T::zero()) || v.is_infinite() {
                    return Err(Error::Parse(format!("line {}: value must be non-negative", lineno + 2)));
                }
                v
            };
            values.push(v);
        }
        if values.len() != n {
            return Err(Error::Parse(format!("expected {n} sites, found {}", values.len())));
        }
        Ok(Environment { dims, radius, law, seed, values })
    }
}

impl<T: Real> Potential<T> for Environment<T> {
    fn dims(&self) -> usize {
        self.dims
    }
    #[inline]
    fn value(&self, x: &Site) -> Option<T> {
        self.get(x)
    }
}

/// A field evaluated lazily from `(law, seed)`; identical values to
/// [`sample_environment`] with the same seed, but no storage. Useful where
/// only a thin region of a large box is visited.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledField {
    pub dims: usize,
    pub radius: i32,
    pub law: PotentialLaw,
    pub seed: u64,
}

impl SampledField {
    pub fn new(law: PotentialLaw, dims: usize, radius: i32, seed: u64) -> Result<SampledField> {
        check_dims(dims)?;
        law.validate()?;
        Ok(SampledField { dims, radius, law, seed })
    }
}

impl<T: Real> Potential<T> for SampledField {
    fn dims(&self) -> usize {
        self.dims
    }
    #[inline]
    fn value(&self, x: &Site) -> Option<T> {
        if x.0[..self.dims].iter().any(|c| c.abs() > self.radius) {
            return None;
        }
        Some(cst(self.law.quantile(site_uniform(self.seed, x))))
    }
}

/// The constant field `V = v` on all of `Z^D`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homogeneous<T> {
    pub dims: usize,
    pub v: T,
}

impl<T: Real> Potential<T> for Homogeneous<T> {
    fn dims(&self) -> usize {
        self.dims
    }
    fn value(&self, _x: &Site) -> Option<T> {
        Some(self.v)
    }
}

/// A field shifted by `anchor`: `value(x) = base(anchor + x)`.
pub struct Shifted<'a, T, P: ?Sized> {
    pub base: &'a P,
    pub anchor: Site,
    _t: std::marker::PhantomData<T>,
}

impl<'a, T, P: ?Sized> Shifted<'a, T, P> {
    pub fn new(base: &'a P, anchor: Site) -> Self {
        Shifted { base, anchor, _t: std::marker::PhantomData }
    }
}

impl<'a, T: Real, P: Potential<T> + ?Sized> Potential<T> for Shifted<'a, T, P> {
    fn dims(&self) -> usize {
        self.base.dims()
    }
    fn value(&self, x: &Site) -> Option<T> {
        self.base.value(&(self.anchor + *x))
    }
}

/// A base field with a finite set of sites overridden.
pub struct Overlay<'a, T, P: ?Sized> {
    pub base: &'a P,
    pub sites: Vec<(Site, T)>,
}

impl<'a, T: Real, P: Potential<T> + ?Sized> Potential<T> for Overlay<'a, T, P> {
    fn dims(&self) -> usize {
        self.base.dims()
    }
    fn value(&self, x: &Site) -> Option<T> {
        for (s, v) in &self.sites {
            if s == x {
                return Some(*v);
            }
        }
        self.base.value(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn law_grammar_roundtrip() {
        for s in ["bernoulli:p=0.1", "det:v=1.0", "exp:rate=1.0", "twopoint:v0=0.0,v1=2.0,p=0.3"] {
            let law: PotentialLaw = s.parse().unwrap();
            assert_eq!(law.to_string(), s);
            assert_eq!(law.to_string().parse::<PotentialLaw>().unwrap(), law);
        }
        assert!("bernoulli:p=1".parse::<PotentialLaw>().is_err());
        assert!("exp:rate=0".parse::<PotentialLaw>().is_err());
        assert!("gauss:s=1".parse::<PotentialLaw>().is_err());
        assert!("det:w=1".parse::<PotentialLaw>().is_err());
    }

    #[test]
    fn phi_closed_forms() {
        let det = PotentialLaw::Deterministic { v0: 0.7 };
        assert!((det.phi_beta(0.3, 5) - 0.3 * 5.0 * 0.7f64).abs() < 1e-15);
        let trap = PotentialLaw::BernoulliTrap { p_inf: 0.2 };
        for ell in 1..6 {
            assert!((trap.phi_beta(0.01, ell) + 0.8f64.ln()).abs() < 1e-15);
        }
        assert_eq!(trap.phi_beta(0.0, 3), 0.0);
        let ex = PotentialLaw::Exponential { rate: 1.0 };
        assert!((ex.phi_beta(0.4, 3) - (1.0 + 1.2f64).ln()).abs() < 1e-15);
        // two-point against the defining expectation
        let tp = PotentialLaw::TwoPoint { v0: 0.5, v1: 2.0, p: 0.3 };
        let direct = -(0.7 * (-0.9f64 * 2.0 * 0.5).exp() + 0.3 * (-0.9f64 * 2.0 * 2.0).exp()).ln();
        assert!((tp.phi_beta(0.9, 2) - direct).abs() < 1e-14);
    }

    #[test]
    fn attractivity_examples() {
        assert!(check_attractivity(&PotentialLaw::Deterministic { v0: 1.0 }, 1.0, 20).is_empty());
        assert!(check_attractivity(&PotentialLaw::BernoulliTrap { p_inf: 0.1 }, 1.0, 20).is_empty());
        assert!(check_attractivity(&PotentialLaw::Exponential { rate: 1.0 }, 0.5, 50).is_empty());
        assert!(check_attractivity(&PotentialLaw::TwoPoint { v0: 0.0, v1: 3.0, p: 0.4 }, 0.7, 30).is_empty());
    }

    #[test]
    fn degenerate_bernoulli_is_all_zero() {
        let law = PotentialLaw::BernoulliTrap { p_inf: 0.0 };
        let env: Environment<f64> = sample_environment(&law, 3, 4, 99).unwrap();
        assert!(env.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sampling_is_deterministic_and_matches_lazy_field() {
        let law = PotentialLaw::Exponential { rate: 2.0 };
        let a: Environment<f64> = sample_environment(&law, 2, 5, 7).unwrap();
        let b: Environment<f64> = sample_environment(&law, 2, 5, 7).unwrap();
        assert_eq!(a, b);
        let c: Environment<f64> = sample_environment(&law, 2, 5, 8).unwrap();
        assert_ne!(a, c);
        let lazy = SampledField::new(law, 2, 5, 7).unwrap();
        for x in box_sites(2, 5) {
            assert_eq!(Potential::<f64>::value(&lazy, &x), a.get(&x));
        }
    }

    #[test]
    fn capacity_errors() {
        let law = PotentialLaw::Deterministic { v0: 0.0 };
        assert!(matches!(sample_environment::<f64>(&law, 6, 2, 0), Err(Error::Capacity { .. })));
        assert!(matches!(sample_environment::<f64>(&law, 5, 200, 0), Err(Error::Capacity { .. })));
        assert!(sample_environment::<f64>(&law, 2, 0, 0).is_err());
    }

    #[test]
    fn polyenv_roundtrip_is_bit_exact() {
        let law = PotentialLaw::BernoulliTrap { p_inf: 0.3 };
        let env: Environment<f64> = sample_environment(&law, 2, 3, 11).unwrap();
        let text = env.to_polyenv_string();
        assert!(text.starts_with("POLYENV v1 dims=2 radius=3 law=bernoulli:p=0.3 seed=11\n"));
        let back = Environment::<f64>::read_polyenv(text.as_bytes()).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.to_polyenv_string(), text);

        let law = PotentialLaw::Exponential { rate: 0.3 };
        let env: Environment<f32> = sample_environment(&law, 3, 2, 5).unwrap();
        let back = Environment::<f32>::read_polyenv(env.to_polyenv_string().as_bytes()).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn polyenv_rejects_garbage() {
        assert!(Environment::<f64>::read_polyenv("POLYENV v2 dims=2".as_bytes()).is_err());
        let bad = "POLYENV v1 dims=2 radius=1 law=det:v=0.0 seed=1\n-1 -1 0\n";
        assert!(Environment::<f64>::read_polyenv(bad.as_bytes()).is_err());
    }

    #[test]
    fn visit_factor_trap_convention() {
        assert_eq!(visit_factor(0.0f64, f64::INFINITY), 1.0);
        assert_eq!(visit_factor(0.5f64, f64::INFINITY), 0.0);
        assert_eq!(visit_log_factor(0.5f64, f64::INFINITY), f64::NEG_INFINITY);
    }
}
