//! Nearest-neighbour paths, their weights, and cone geometry.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::environment::{visit_factor, Potential, PotentialLaw};
use crate::error::{invalid, Error, Result};
use crate::lattice::{check_dims, directions, vec_norm, Direction, Site};
use crate::scalar::{cst, Real};

/// Visit counts per site.
pub type LocalTimes = BTreeMap<Site, u32>;

/// A nearest-neighbour trajectory `gamma_0 = start, ..., gamma_n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PolymerPath {
    dims: usize,
    start: Site,
    steps: Vec<Direction>,
}

impl PolymerPath {
    pub fn new(dims: usize, steps: Vec<Direction>) -> Result<PolymerPath> {
        PolymerPath::from_start(dims, Site::ORIGIN, steps)
    }

    pub fn from_start(dims: usize, start: Site, steps: Vec<Direction>) -> Result<PolymerPath> {
        check_dims(dims)?;
        if let Some(d) = steps.iter().find(|d| d.axis as usize >= dims) {
            return invalid(format!("step along axis {} in dimension {dims}", d.axis + 1));
        }
        Ok(PolymerPath { dims, start, steps })
    }

    /// Parses the literal syntax `+1,-2,+1` (steps `+e1, -e2, +e1`).
    pub fn parse(dims: usize, s: &str) -> Result<PolymerPath> {
        let mut steps = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (sign, axis) = tok.split_at(1);
            let positive = match sign {
                "+" => true,
                "-" => false,
                _ => return Err(Error::Parse(format!("step `{tok}` must start with + or -"))),
            };
            let axis: usize = axis
                .parse()
                .map_err(|_| Error::Parse(format!("step `{tok}` has no axis number")))?;
            if axis == 0 || axis > dims {
                return Err(Error::Parse(format!("step `{tok}`: axis must be in 1..={dims}")));
            }
            steps.push(Direction::new(axis - 1, positive));
        }
        PolymerPath::new(dims, steps)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
    pub fn start(&self) -> Site {
        self.start
    }
    pub fn steps(&self) -> &[Direction] {
        &self.steps
    }
    pub fn len(&self) -> usize {
        self.steps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `gamma_0, ..., gamma_n`.
    pub fn vertices(&self) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut x = self.start;
        out.push(x);
        for &d in &self.steps {
            x = x.step(d);
            out.push(x);
        }
        out
    }

    pub fn end(&self) -> Site {
        self.steps.iter().fold(self.start, |x, &d| x.step(d))
    }

    /// Spatial extension `X = gamma_n - gamma_0`.
    pub fn extension(&self) -> Site {
        self.end() - self.start
    }

    /// The same steps started at `start`.
    pub fn translated(&self, start: Site) -> PolymerPath {
        PolymerPath { dims: self.dims, start, steps: self.steps.clone() }
    }

    /// Appends `other`'s steps.
    pub fn concat(&self, other: &PolymerPath) -> PolymerPath {
        let mut steps = self.steps.clone();
        steps.extend_from_slice(&other.steps);
        PolymerPath { dims: self.dims, start: self.start, steps }
    }

    /// Sub-path `gamma_a .. gamma_b`.
    pub fn slice(&self, a: usize, b: usize) -> PolymerPath {
        let start = self.steps[..a].iter().fold(self.start, |x, &d| x.step(d));
        PolymerPath { dims: self.dims, start, steps: self.steps[a..b].to_vec() }
    }

    /// Visit counts of `gamma_1..gamma_n`, plus `gamma_0` if `include_origin`.
    pub fn local_times(&self, include_origin: bool) -> LocalTimes {
        let mut lt = LocalTimes::new();
        let verts = self.vertices();
        let skip = usize::from(!include_origin);
        for x in verts.into_iter().skip(skip) {
            *lt.entry(x).or_insert(0) += 1;
        }
        lt
    }
}

impl fmt::Display for PolymerPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.steps.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}{}", if d.positive { '+' } else { '-' }, d.axis + 1)?;
        }
        Ok(())
    }
}

/// Annealed interaction `Phi(gamma_1, ..., gamma_k) = sum_x phi(sum_i l_i(x))`
/// of local-time maps (origins excluded by the caller's choice of maps).
pub fn interaction<T: Real>(law: &PotentialLaw, beta: T, maps: &[&LocalTimes]) -> T {
    let mut total = LocalTimes::new();
    for m in maps {
        for (x, &c) in m.iter() {
            *total.entry(*x).or_insert(0) += c;
        }
    }
    total.values().map(|&c| law.phi_beta(beta, c)).sum()
}

/// `Phi_beta(gamma)` over the visits `gamma_1..gamma_n`.
pub fn path_interaction<T: Real>(path: &PolymerPath, law: &PotentialLaw, beta: T) -> T {
    interaction(law, beta, &[&path.local_times(false)])
}

/// `(2D)^{-n}`.
#[inline]
pub fn step_norm<T: Real>(dims: usize, n: usize) -> T {
    T::from_usize(2 * dims).unwrap().powi(-(n as i32))
}

/// Quenched weight `exp(h.X - beta sum_{i>=1} V(gamma_i)) (2D)^{-n}`. The
/// potential at `gamma_0` never enters. A trap gives exactly zero; leaving
/// the domain of `env` is an error.
pub fn quenched_weight<T: Real, P: Potential<T> + ?Sized>(
    path: &PolymerPath,
    env: &P,
    h: &[T],
    beta: T,
) -> Result<T> {
    check_h(path.dims, h)?;
    let mut w = T::one();
    let mut x = path.start;
    for &d in &path.steps {
        x = x.step(d);
        let v = env.value(&x).ok_or(Error::OutOfDomain(x))?;
        w *= visit_factor(beta, v);
    }
    Ok(w * path.extension().dot(h).exp() * step_norm::<T>(path.dims, path.len()))
}

/// Annealed weight `exp(h.X - Phi_beta(gamma)) (2D)^{-n}`.
pub fn annealed_weight<T: Real>(path: &PolymerPath, law: &PotentialLaw, h: &[T], beta: T) -> Result<T> {
    check_h(path.dims, h)?;
    let phi = path_interaction(path, law, beta);
    Ok((path.extension().dot(h) - phi).exp() * step_norm::<T>(path.dims, path.len()))
}

fn check_h<T: Real>(dims: usize, h: &[T]) -> Result<()> {
    if h.len() != dims {
        return invalid(format!("h has {} components, expected {dims}", h.len()));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return invalid("h must be finite");
    }
    Ok(())
}

/// Expands `--h t` into `t e1` in `dims` dimensions.
pub fn on_axis<T: Real>(dims: usize, t: T) -> Vec<T> {
    let mut h = vec![T::zero(); dims];
    h[0] = t;
    h
}

/// How vertex pairs of a path are compared against the cone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Confinement {
    /// `b - a` must lie in `Y \ {0}`: a confined path never revisits its
    /// first or last vertex, so adjacent pieces share only their junction
    /// and annealed weights factorize over the decomposition.
    #[default]
    Punctured,
    /// `b - a` may be `0`.
    Closed,
}

/// The cone `Y = {x : x.h >= delta |x| |h|}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeSpec<T> {
    h: Vec<T>,
    delta: T,
    threshold: T,
    confinement: Confinement,
}

impl<T: Real> ConeSpec<T> {
    pub fn new(h: Vec<T>, delta: T) -> Result<ConeSpec<T>> {
        let dims = h.len();
        check_dims(dims)?;
        check_h(dims, &h)?;
        let hn = vec_norm(&h);
        if hn == T::zero() {
            return invalid("cone direction h must be non-zero");
        }
        let dmax = T::one() / T::from_usize(dims).unwrap().sqrt();
        if !(delta > T::zero() && delta < dmax) {
            return invalid(format!(
                "delta must lie in (0, 1/sqrt({dims})) = (0, {:.6}), got {delta}",
                crate::scalar::to_f64(dmax)
            ));
        }
        let cone = ConeSpec { threshold: delta * hn, h, delta, confinement: Confinement::default() };
        if !directions(dims).any(|d| cone.contains(&d.as_site())) {
            return invalid("cone contains no lattice direction");
        }
        Ok(cone)
    }

    /// Cone with the default aperture `delta = 1/(2 sqrt D)`.
    pub fn with_default_delta(h: Vec<T>) -> Result<ConeSpec<T>> {
        let d = T::from_usize(h.len()).unwrap();
        ConeSpec::new(h, cst::<T>(0.5) / d.sqrt())
    }

    pub fn default_delta(dims: usize) -> T {
        cst::<T>(0.5) / T::from_usize(dims).unwrap().sqrt()
    }

    pub fn with_confinement(mut self, c: Confinement) -> Self {
        self.confinement = c;
        self
    }

    pub fn confinement(&self) -> Confinement {
        self.confinement
    }

    pub fn dims(&self) -> usize {
        self.h.len()
    }
    pub fn h(&self) -> &[T] {
        &self.h
    }
    pub fn delta(&self) -> T {
        self.delta
    }

    /// `x.h >= delta |x| |h|`; the origin is always inside.
    #[inline]
    pub fn contains(&self, x: &Site) -> bool {
        let d = x.dot(&self.h);
        if d < T::zero() {
            return false;
        }
        // compare squares to avoid a sqrt: both sides non-negative here
        d * d >= self.threshold * self.threshold * T::from_i64(x.norm_sq()).unwrap()
    }

    /// Order relation between two vertices at different times along a path:
    /// `b - a` in the cone, and `a != b` under [`Confinement::Punctured`].
    #[inline]
    pub fn precedes(&self, a: &Site, b: &Site) -> bool {
        let d = *b - *a;
        (self.confinement == Confinement::Closed || d != Site::ORIGIN) && self.contains(&d)
    }

    /// Every later vertex lies in `gamma_0 + Y` and every earlier one in
    /// `gamma_n - Y`.
    pub fn is_cone_confined(&self, path: &PolymerPath) -> bool {
        let v = path.vertices();
        let (a, b) = (v[0], *v.last().unwrap());
        let n = v.len() - 1;
        v[1..].iter().all(|x| self.precedes(&a, x)) && v[..n].iter().all(|x| self.precedes(x, &b))
    }

    /// Whether `k` (`0 < k < n`) splits `verts` into two cone-confined halves.
    pub fn is_break_point(&self, verts: &[Site], k: usize) -> bool {
        let c = verts[k];
        verts[..k].iter().all(|x| self.precedes(x, &c)) && verts[k + 1..].iter().all(|x| self.precedes(&c, x))
    }

    /// Interior break points of `path`, ascending.
    pub fn break_points(&self, path: &PolymerPath) -> Vec<usize> {
        let v = path.vertices();
        (1..path.len()).filter(|&k| self.is_break_point(&v, k)).collect()
    }

    /// Cone-confined and free of break points.
    pub fn is_irreducible(&self, path: &PolymerPath) -> bool {
        !path.is_empty() && self.is_cone_confined(path) && self.break_points(path).is_empty()
    }

    /// Splits a cone-confined path at all of its break points.
    pub fn irreducible_split(&self, path: &PolymerPath) -> Result<Vec<PolymerPath>> {
        if !self.is_cone_confined(path) {
            return invalid("irreducible_split needs a cone-confined path");
        }
        let mut cuts = vec![0];
        cuts.extend(self.break_points(path));
        cuts.push(path.len());
        Ok(cuts.windows(2).map(|w| path.slice(w[0], w[1])).collect())
    }
}

impl FromStr for PolymerPath {
    type Err = Error;
    /// Parses with `dims` inferred as `max(2, largest axis)`.
    fn from_str(s: &str) -> Result<Self> {
        let max_axis = s
            .split(',')
            .filter_map(|t| t.trim().get(1..).and_then(|a| a.parse::<usize>().ok()))
            .max()
            .unwrap_or(2);
        PolymerPath::parse(max_axis.max(2), s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Environment;

    fn p(s: &str) -> PolymerPath {
        PolymerPath::parse(2, s).unwrap()
    }

    #[test]
    fn literal_roundtrip() {
        let path = p("+1,-2,+1");
        assert_eq!(path.to_string(), "+1,-2,+1");
        assert_eq!(path.end(), Site::new(&[2, -1]));
        assert!(PolymerPath::parse(2, "+3").is_err());
        assert!(PolymerPath::parse(2, "1").is_err());
        assert!(p("").is_empty());
    }

    #[test]
    fn local_time_examples() {
        let empty = p("");
        assert_eq!(empty.local_times(true), LocalTimes::from([(Site::ORIGIN, 1)]));
        let back = p("+1,-1");
        assert_eq!(back.local_times(false), LocalTimes::from([(Site::ORIGIN, 1), (Site::unit(0), 1)]));
    }

    #[test]
    fn quenched_weight_examples() {
        let mut env = Environment::<f64>::constant(2, 3, 0.0).unwrap();
        assert_eq!(quenched_weight(&p(""), &env, &[1.0, 0.0], 2.0).unwrap(), 1.0);
        env.set(&Site::unit(0), 0.5).unwrap();
        let w = quenched_weight(&p("+1"), &env, &[1.0, 0.0], 2.0).unwrap();
        assert!((w - 0.25).abs() < 1e-15);
        let far = p("+1,+1,+1,+1");
        assert!(matches!(quenched_weight(&far, &env, &[0.0, 0.0], 0.0), Err(Error::OutOfDomain(_))));
        // origin value is ignored
        env.set(&Site::ORIGIN, f64::INFINITY).unwrap();
        assert_eq!(quenched_weight(&p("+2"), &env, &[0.0, 0.0], 1.0).unwrap(), 0.25);
        assert_eq!(quenched_weight(&p("+2,-2"), &env, &[0.0, 0.0], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn cone_examples() {
        let cone = ConeSpec::new(vec![1.0, 0.0], 0.4).unwrap();
        assert!(cone.contains(&Site::ORIGIN));
        assert!(cone.contains(&Site::unit(0)));
        assert!(!cone.contains(&Site::unit(1)));
        assert!(cone.contains(&Site::new(&[1, 1])));
        assert!(!cone.contains(&Site::new(&[-1, 0])));
        assert!(ConeSpec::new(vec![1.0, 0.0], 0.9).is_err());
        assert!(ConeSpec::new(vec![0.0, 0.0], 0.3).is_err());
    }

    #[test]
    fn confinement_and_split_examples() {
        let cone = ConeSpec::new(vec![1.0, 0.0], 0.4).unwrap();
        assert!(cone.is_cone_confined(&p("+1")));
        assert!(!cone.is_cone_confined(&p("+2")));
        // +e1,+e2,+e1: vertices (0,0),(1,0),(1,1),(2,1)
        // (1,0)-(0,0) ok; (2,1)-(1,0)=(1,1) ok; (1,1)-(0,0) ok; (2,1)-(1,1) ok
        assert!(cone.is_cone_confined(&p("+1,+2,+1")));
        let pieces = cone.irreducible_split(&p("+1,+1")).unwrap();
        assert_eq!(pieces.len(), 2);
        assert_eq!(pieces[0].to_string(), "+1");
        assert_eq!(pieces[1].start(), Site::unit(0));
        assert!(cone.irreducible_split(&p("+2")).is_err());
    }
}
