//! Renewal structure of the irreducible law: the normalizing shift `lambda`,
//! the function `mu(z)`, speed `v`, diffusivity `Sigma`, the mean length
//! `kappa(0)`, and the annealed local estimates built on them.
//!
//! All spatial information enters through per-length sums
//! `A_n(z) = sum_x f_{x,n} exp(z.x)` and their first two moments, so a law
//! given by a cone table (`t`) is handled by scalar deconvolution in `n`.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exactenum::{Flavor, TableKind, TableParams, WeightTable};
use crate::lattice::Site;
use crate::scalar::{to_f64, Real};
use crate::stats::{linear_fit, LineFit};

/// Mass, first and second spatial moments of one length.
#[derive(Clone, Debug, PartialEq)]
struct Moments<T> {
    m0: T,
    m1: Vec<T>,
    m2: Vec<T>, // row-major D x D
}

impl<T: Real> Moments<T> {
    fn zero(dims: usize) -> Self {
        Moments { m0: T::zero(), m1: vec![T::zero(); dims], m2: vec![T::zero(); dims * dims] }
    }

    fn add_point(&mut self, x: &Site, w: T) {
        let d = self.m1.len();
        self.m0 += w;
        for i in 0..d {
            let xi = T::from_i32(x.0[i]).unwrap();
            self.m1[i] += w * xi;
            for j in 0..d {
                self.m2[i * d + j] += w * xi * T::from_i32(x.0[j]).unwrap();
            }
        }
    }

    /// `self += sign * (a conv b)` for the moments of a convolution.
    fn add_product(&mut self, a: &Moments<T>, b: &Moments<T>, sign: T) {
        let d = self.m1.len();
        self.m0 += sign * a.m0 * b.m0;
        for i in 0..d {
            self.m1[i] += sign * (a.m1[i] * b.m0 + a.m0 * b.m1[i]);
            for j in 0..d {
                let k = i * d + j;
                self.m2[k] += sign
                    * (a.m2[k] * b.m0 + a.m0 * b.m2[k] + a.m1[i] * b.m1[j] + a.m1[j] * b.m1[i]);
            }
        }
    }
}

/// Where the weights of an [`IrreducibleLaw`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LawSource {
    /// Irreducible weights `f` directly (enumeration).
    Irreducible,
    /// Cone weights `t`, with `f` recovered by deconvolution.
    Cone,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub source: LawSource,
    pub flavor: Flavor,
    pub dims: usize,
    pub h: Vec<f64>,
    pub beta: f64,
    pub delta: Option<f64>,
    pub horizon: usize,
}

/// The irreducible law `f_{x,n} exp(-lambda n)`, `n <= horizon`, normalized
/// by the solved `lambda`.
#[derive(Clone, Debug)]
pub struct IrreducibleLaw<T> {
    dims: usize,
    horizon: usize,
    source: LawSource,
    // raw (lambda = 0) weights of the source table, by length
    by_length: Vec<Vec<(Site, T)>>,
    // raw per-length moments of f
    moments: Vec<Moments<T>>,
    lambda: T,
    nu_hat: T,
    nu_fit: Option<LineFit>,
    params: TableParams<T>,
    flavor: Flavor,
}

fn group_by_length<T: Real>(table: &WeightTable<T>, horizon: usize) -> Vec<Vec<(Site, T)>> {
    let mut out = vec![Vec::new(); horizon + 1];
    for (&(n, x), &w) in table.raw_entries() {
        if n >= 1 && n <= horizon {
            out[n].push((x, w));
        }
    }
    out
}

impl<T: Real> IrreducibleLaw<T> {
    /// From an irreducible table; `lambda` is solved on lengths `<= horizon`.
    pub fn from_irreducible(f: &WeightTable<T>, horizon: usize) -> Result<Self> {
        if f.kind != TableKind::Irreducible {
            return invalid("expected an irreducible (f) table");
        }
        if horizon > f.n_max || horizon == 0 {
            return invalid(format!("horizon {horizon} outside 1..={}", f.n_max));
        }
        let dims = f.params.dims;
        let by_length = group_by_length(f, horizon);
        let moments = by_length
            .iter()
            .map(|es| {
                let mut m = Moments::zero(dims);
                for (x, w) in es {
                    m.add_point(x, *w);
                }
                m
            })
            .collect();
        Self::finish(dims, horizon, LawSource::Irreducible, by_length, moments, f)
    }

    /// From a cone table `t`; the irreducible moments follow from
    /// `t_n = f_n + sum_{m<n} t_m * f_{n-m}`.
    pub fn from_cone(t: &WeightTable<T>, horizon: usize) -> Result<Self> {
        if t.kind != TableKind::Cone {
            return invalid("expected a cone (t) table");
        }
        if horizon > t.n_max || horizon == 0 {
            return invalid(format!("horizon {horizon} outside 1..={}", t.n_max));
        }
        let dims = t.params.dims;
        let by_length = group_by_length(t, horizon);
        let tm: Vec<Moments<T>> = by_length
            .iter()
            .map(|es| {
                let mut m = Moments::zero(dims);
                for (x, w) in es {
                    m.add_point(x, *w);
                }
                m
            })
            .collect();
        let mut fm: Vec<Moments<T>> = vec![Moments::zero(dims)];
        for n in 1..=horizon {
            let mut f = tm[n].clone();
            for m in 1..n {
                f.add_product(&tm[m], &fm[n - m], -T::one());
            }
            fm.push(f);
        }
        Self::finish(dims, horizon, LawSource::Cone, by_length, fm, t)
    }

    fn finish(
        dims: usize,
        horizon: usize,
        source: LawSource,
        by_length: Vec<Vec<(Site, T)>>,
        moments: Vec<Moments<T>>,
        table: &WeightTable<T>,
    ) -> Result<Self> {
        let masses: Vec<T> = moments.iter().map(|m| m.m0).collect();
        let lambda = solve_lambda(&masses)?;
        let mut law = IrreducibleLaw {
            dims,
            horizon,
            source,
            by_length,
            moments,
            lambda,
            nu_hat: T::zero(),
            nu_fit: None,
            params: table.params.clone(),
            flavor: table.flavor,
        };
        let fit = tail_rate(&law.length_masses());
        law.nu_fit = fit;
        law.nu_hat = fit.map_or(T::nan(), |f| T::from_f64(-f.slope).unwrap());
        Ok(law)
    }

    /// The same source cut at a shorter horizon (re-solving `lambda`).
    pub fn truncated(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 || horizon > self.horizon {
            return invalid(format!("horizon {horizon} outside 1..={}", self.horizon));
        }
        let mut law = self.clone();
        law.horizon = horizon;
        law.by_length.truncate(horizon + 1);
        law.moments.truncate(horizon + 1);
        let masses: Vec<T> = law.moments.iter().map(|m| m.m0).collect();
        law.lambda = solve_lambda(&masses)?;
        law.nu_fit = tail_rate(&law.length_masses());
        law.nu_hat = law.nu_fit.map_or(T::nan(), |f| T::from_f64(-f.slope).unwrap());
        Ok(law)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn source(&self) -> LawSource {
        self.source
    }
    pub fn lambda(&self) -> T {
        self.lambda
    }
    pub fn nu_hat(&self) -> T {
        self.nu_hat
    }
    pub fn nu_fit(&self) -> Option<LineFit> {
        self.nu_fit
    }
    pub fn params(&self) -> &TableParams<T> {
        &self.params
    }

    /// `exp(-nu_hat N)`.
    pub fn truncation_bound(&self) -> T {
        (-self.nu_hat * T::from_usize(self.horizon).unwrap()).exp()
    }

    /// Raw `F_n = sum_x f_{x,n}`, index `0..=horizon`.
    pub fn raw_masses(&self) -> Vec<T> {
        self.moments.iter().map(|m| m.m0).collect()
    }

    /// Normalized `fbar_n = exp(-lambda n) F_n`.
    pub fn length_masses(&self) -> Vec<T> {
        self.moments
            .iter()
            .enumerate()
            .map(|(n, m)| m.m0 * self.shift(n))
            .collect()
    }

    /// `sum_{n <= upto} fbar_n`.
    pub fn partial_mass(&self, upto: usize) -> T {
        self.length_masses().iter().take(upto.min(self.horizon) + 1).copied().sum()
    }

    fn shift(&self, n: usize) -> T {
        (-self.lambda * T::from_usize(n).unwrap()).exp()
    }

    /// Normalized irreducible entries `fbar_{x,n}` (irreducible sources only).
    pub fn entries(&self) -> Result<Vec<Vec<(Site, T)>>> {
        if self.source != LawSource::Irreducible {
            return invalid("pointwise irreducible entries are only kept for enumerated laws");
        }
        Ok(self
            .by_length
            .iter()
            .enumerate()
            .map(|(n, es)| es.iter().map(|(x, w)| (*x, *w * self.shift(n))).collect())
            .collect())
    }

    /// `A_n(z) = exp(-lambda n) sum_x f_{x,n} exp(z.x)` for complex `z`,
    /// index `0..=horizon` (`A_0 = 0`).
    pub fn transform(&self, z: &[Complex<T>]) -> Vec<Complex<T>> {
        let zero = Complex::new(T::zero(), T::zero());
        let raw: Vec<Complex<T>> = self
            .by_length
            .iter()
            .enumerate()
            .map(|(n, es)| {
                let s = self.shift(n);
                let mut acc = zero;
                for (x, w) in es {
                    let mut e = zero;
                    for (i, zi) in z.iter().enumerate() {
                        if x.0[i] != 0 {
                            e += *zi * T::from_i32(x.0[i]).unwrap();
                        }
                    }
                    acc += e.exp() * (*w * s);
                }
                acc
            })
            .collect();
        match self.source {
            LawSource::Irreducible => raw,
            LawSource::Cone => {
                let mut f = vec![zero; self.horizon + 1];
                for n in 1..=self.horizon {
                    let mut acc = raw[n];
                    for m in 1..n {
                        acc -= raw[m] * f[n - m];
                    }
                    f[n] = acc;
                }
                f
            }
        }
    }

    fn real_transform(&self, z: &[T]) -> Vec<T> {
        let zc: Vec<Complex<T>> = z.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform(&zc).into_iter().map(|c| c.re).collect()
    }

    /// `E[n]`, `E[x]`, `E[n x]`, `E[n^2]`, `E[x x^T]` under the normalized law.
    fn expectations(&self) -> (T, Vec<T>, Vec<T>, T, Vec<T>) {
        let d = self.dims;
        let (mut en, mut en2) = (T::zero(), T::zero());
        let mut ex = vec![T::zero(); d];
        let mut enx = vec![T::zero(); d];
        let mut exx = vec![T::zero(); d * d];
        for (n, m) in self.moments.iter().enumerate() {
            let s = self.shift(n);
            let nf = T::from_usize(n).unwrap();
            en += nf * m.m0 * s;
            en2 += nf * nf * m.m0 * s;
            for i in 0..d {
                ex[i] += m.m1[i] * s;
                enx[i] += nf * m.m1[i] * s;
            }
            for k in 0..d * d {
                exx[k] += m.m2[k] * s;
            }
        }
        (en, ex, enx, en2, exx)
    }
}

/// `log` of per-length masses fitted over the last third of the lengths;
/// the slope is `-nu_hat`.
fn tail_rate<T: Real>(masses: &[T]) -> Option<LineFit> {
    let horizon = masses.len().saturating_sub(1);
    let k = horizon.div_ceil(3).max(3).min(horizon);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (n, &m) in masses.iter().enumerate().skip(horizon + 1 - k) {
        if n >= 1 && m > T::zero() {
            xs.push(n as f64);
            ys.push(to_f64(m).ln());
        }
    }
    linear_fit(&xs, &ys)
}

/// Root of `G(lambda) = sum_n exp(-lambda n) F_n = 1` (`masses[n] = F_n`,
/// index 0 ignored) by bisection to `1e-6` and Newton to `|G - 1| <= 1e-12`.
/// The bracket is `[0, max_n log(F_n)/n + 1]`, extended below 0 when the
/// total mass is under 1.
pub fn solve_lambda<T: Real>(masses: &[T]) -> Result<T> {
    let g = |l: T| -> (T, T) {
        let mut v = T::zero();
        let mut dv = T::zero();
        for (n, &f) in masses.iter().enumerate().skip(1) {
            let nf = T::from_usize(n).unwrap();
            let e = (-l * nf).exp() * f;
            v += e;
            dv -= nf * e;
        }
        (v, dv)
    };
    let mut hi = T::neg_infinity();
    let mut lo = T::infinity();
    for (n, &f) in masses.iter().enumerate().skip(1) {
        if f > T::zero() {
            let r = f.ln() / T::from_usize(n).unwrap();
            hi = hi.max(r);
            lo = lo.min(r);
        }
    }
    if hi == T::neg_infinity() {
        return Err(Error::Numerical("irreducible weights vanish at every length".into()));
    }
    hi = hi.max(T::zero()) + T::one();
    // a truncated law can need a negative shift; G(min_n log(F_n)/n - 1) > 1
    lo = if g(T::zero()).0 >= T::one() { T::zero() } else { lo - T::one() };
    if !(g(lo).0 >= T::one() && g(hi).0 <= T::one()) {
        return Err(Error::Numerical(format!("no sign change of G - 1 on [{lo}, {hi}]")));
    }
    let tol_b = T::from_f64(1e-6).unwrap();
    while hi - lo > tol_b {
        let mid = (lo + hi) / T::from_f64(2.0).unwrap();
        if g(mid).0 >= T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tol = T::from_f64(1e-12).unwrap().max(T::epsilon() * T::from_f64(16.0).unwrap());
    let mut l = (lo + hi) / T::from_f64(2.0).unwrap();
    for _ in 0..60 {
        let (v, dv) = g(l);
        let step = (v - T::one()) / dv;
        l -= step;
        if step.abs() <= T::epsilon() * T::from_f64(4.0).unwrap() * (T::one() + l.abs()) {
            break;
        }
    }
    let (v, _) = g(l);
    if (v - T::one()).abs() <= tol {
        return Ok(l);
    }
    Err(Error::Numerical(format!("Newton stalled at lambda = {l}, |G - 1| = {}", (v - T::one()).abs())))
}

/// `mu(z)` for real `z`: the root of `sum_n exp(-mu n) A_n(z) = 1`.
pub fn mu_of_z<T: Real>(law: &IrreducibleLaw<T>, z: &[T]) -> Result<T> {
    if z.len() != law.dims {
        return invalid("z has the wrong dimension");
    }
    if z.iter().all(|&c| c == T::zero()) {
        return Ok(T::zero());
    }
    let a = law.real_transform(z);
    check_decay(&a, T::zero(), z)?;
    let h = |mu: T| -> (T, T) {
        let mut v = -T::one();
        let mut dv = T::zero();
        for (n, &an) in a.iter().enumerate().skip(1) {
            let nf = T::from_usize(n).unwrap();
            let e = (-mu * nf).exp() * an;
            v += e;
            dv -= nf * e;
        }
        (v, dv)
    };
    let r = z.iter().fold(T::zero(), |m, c| m.max(c.abs())) * T::from_f64(1.0 + 1e-9).unwrap();
    let (mut lo, mut hi) = (-r, r);
    if !(h(lo).0 >= T::zero() && h(hi).0 <= T::zero()) {
        return Err(Error::Domain(format!("mu({z:?}) has no root in [{lo}, {hi}]")));
    }
    let tol_b = T::from_f64(1e-6).unwrap();
    while hi - lo > tol_b {
        let mid = (lo + hi) / T::from_f64(2.0).unwrap();
        if h(mid).0 >= T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut mu = (lo + hi) / T::from_f64(2.0).unwrap();
    let tol = T::from_f64(1e-14).unwrap().max(T::epsilon() * T::from_f64(16.0).unwrap());
    for _ in 0..60 {
        let (v, dv) = h(mu);
        let step = v / dv;
        mu -= step;
        if step.abs() <= tol * (T::one() + mu.abs()) {
            break;
        }
    }
    Ok(mu)
}

// The series `sum exp(-Re mu n) |A_n|` must decay over the last third of the
// horizon, otherwise the truncated root equation is meaningless.
fn check_decay<T: Real, Z: std::fmt::Debug>(a: &[T], re_mu: T, z: Z) -> Result<()> {
    let terms: Vec<T> = a
        .iter()
        .enumerate()
        .map(|(n, &v)| v.abs() * (-re_mu * T::from_usize(n).unwrap()).exp())
        .collect();
    if let Some(f) = tail_rate(&terms) {
        if f.slope >= 0.0 {
            return Err(Error::Domain(format!("root equation at z = {z:?} does not converge (tail slope {:.3})", f.slope)));
        }
    }
    Ok(())
}

/// `mu(i theta)` on the imaginary axis, by Newton continuation from 0.
pub fn mu_imag<T: Real>(law: &IrreducibleLaw<T>, theta: &[T]) -> Result<Complex<T>> {
    if theta.len() != law.dims {
        return invalid("theta has the wrong dimension");
    }
    let zero = Complex::new(T::zero(), T::zero());
    let mut mu = zero;
    let steps = 16;
    let tol = T::from_f64(1e-13).unwrap().max(T::epsilon() * T::from_f64(64.0).unwrap());
    for k in 1..=steps {
        let s = T::from_usize(k).unwrap() / T::from_usize(steps).unwrap();
        let z: Vec<Complex<T>> = theta.iter().map(|&t| Complex::new(T::zero(), t * s)).collect();
        let a = law.transform(&z);
        let mut ok = false;
        for _ in 0..50 {
            let mut v = Complex::new(-T::one(), T::zero());
            let mut dv = zero;
            for (n, an) in a.iter().enumerate().skip(1) {
                let nf = T::from_usize(n).unwrap();
                let e = (-mu * nf).exp() * *an;
                v += e;
                dv -= e * nf;
            }
            if v.norm() <= tol {
                ok = true;
                break;
            }
            if dv.norm() == T::zero() {
                break;
            }
            mu -= v / dv;
        }
        if !ok || !mu.re.is_finite() {
            return Err(Error::Domain(format!("Newton continuation for mu(i theta) failed at theta = {theta:?}")));
        }
        if law.nu_hat.is_finite() && mu.re < -law.nu_hat / T::from_f64(2.0).unwrap() {
            return Err(Error::Domain(format!("mu(i theta) left the convergence strip at theta = {theta:?}")));
        }
    }
    Ok(mu)
}

/// `lambda`, `v = grad mu(0)`, `Sigma = Hess mu(0)`, `kappa(0)` and the
/// truncation data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenewalModel<T> {
    pub lambda: T,
    pub v: Vec<T>,
    pub sigma: Vec<Vec<T>>,
    pub kappa0: T,
    pub nu_hat: T,
    pub horizon: usize,
    pub truncation_bound: T,
    /// Set when `Sigma` is not positive definite.
    pub sigma_singular: bool,
    pub provenance: Provenance,
}

impl<T: Real> RenewalModel<T> {
    pub fn sigma_quadratic(&self, a: &[T]) -> T {
        let mut q = T::zero();
        for (i, row) in self.sigma.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                q += a[i] * *s * a[j];
            }
        }
        q
    }
}

/// Implicit differentiation of `sum f e^{z.x - mu n} = 1` at 0:
/// `v = E[x]/E[n]`, `Sigma = E[(x - n v)(x - n v)^T] / E[n]`.
pub fn speed_and_diffusivity<T: Real>(law: &IrreducibleLaw<T>) -> RenewalModel<T> {
    let d = law.dims;
    let (en, ex, enx, en2, exx) = law.expectations();
    let v: Vec<T> = ex.iter().map(|&e| e / en).collect();
    let mut sigma = vec![vec![T::zero(); d]; d];
    for i in 0..d {
        for j in 0..d {
            let c = exx[i * d + j] - enx[i] * v[j] - v[i] * enx[j] + en2 * v[i] * v[j];
            sigma[i][j] = c / en;
        }
    }
    let m = DMatrix::from_fn(d, d, |i, j| to_f64(sigma[i][j]));
    let eig = SymmetricEigen::new(m);
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let sigma_singular = eig.eigenvalues.iter().any(|&e| e <= 1e-12 * max_ev.max(1e-300));
    RenewalModel {
        lambda: law.lambda,
        v,
        sigma,
        kappa0: en,
        nu_hat: law.nu_hat,
        horizon: law.horizon,
        truncation_bound: law.truncation_bound(),
        sigma_singular,
        provenance: Provenance {
            source: law.source,
            flavor: law.flavor,
            dims: d,
            h: law.params.h.iter().map(|&x| to_f64(x)).collect(),
            beta: to_f64(law.params.beta),
            delta: law.params.delta.map(to_f64),
            horizon: law.horizon,
        },
    }
}

/// `tbar_n` from the scalar renewal recursion and its approach to `1/kappa(0)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenewalMass<T> {
    pub t: Vec<T>,
    /// `|tbar_n kappa(0) - 1|`.
    pub error: Vec<T>,
    /// Fit of `log error` against `n` over the points above the noise floor.
    pub decay: Option<LineFit>,
}

pub fn renewal_mass<T: Real>(law: &IrreducibleLaw<T>, n: usize) -> RenewalMass<T> {
    let f = law.length_masses();
    let kappa = law.expectations().0;
    let mut t = vec![T::one()];
    for k in 1..=n {
        let mut acc = T::zero();
        for m in 1..=k.min(law.horizon) {
            acc += f[m] * t[k - m];
        }
        t.push(acc);
    }
    let error: Vec<T> = t.iter().map(|&x| (x * kappa - T::one()).abs()).collect();
    let floor = 1e-13;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (k, &e) in error.iter().enumerate().skip(1) {
        let e = to_f64(e);
        if e > floor {
            xs.push(k as f64);
            ys.push(e.ln());
        }
    }
    RenewalMass { t, error, decay: linear_fit(&xs, &ys) }
}

/// `Sbar_n(theta) = sum_x tbar_{x,n} exp(i theta.(x - n v))` by the scalar
/// renewal recursion at fixed `theta`.
pub fn annealed_char<T: Real>(law: &IrreducibleLaw<T>, v: &[T], theta: &[T], n: usize) -> Complex<T> {
    let z: Vec<Complex<T>> = theta.iter().map(|&t| Complex::new(T::zero(), t)).collect();
    let a = law.transform(&z);
    let mut t = vec![Complex::new(T::one(), T::zero())];
    for k in 1..=n {
        let mut acc = Complex::new(T::zero(), T::zero());
        for m in 1..=k.min(law.horizon) {
            acc += a[m] * t[k - m];
        }
        t.push(acc);
    }
    let mut ph = T::zero();
    for (i, &th) in theta.iter().enumerate() {
        ph += th * v[i];
    }
    t[n] * Complex::from_polar(T::one(), -ph * T::from_usize(n).unwrap())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltPoint<T> {
    pub alpha: Vec<T>,
    pub n: usize,
    pub value: Complex<T>,
    pub target: T,
    pub deviation: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltAlpha<T> {
    pub alpha: Vec<T>,
    pub points: Vec<CltPoint<T>>,
    pub decreasing: bool,
    /// Log-log fit of deviation against `n`.
    pub fit: Option<LineFit>,
}

/// `|kappa(0) Sbar_n(alpha / sqrt n) - exp(-alpha.Sigma alpha / 2)|` over a
/// grid of `alpha` and lengths.
pub fn annealed_clt_check<T: Real>(
    law: &IrreducibleLaw<T>,
    model: &RenewalModel<T>,
    alphas: &[Vec<T>],
    ns: &[usize],
) -> Vec<CltAlpha<T>> {
    alphas
        .iter()
        .map(|alpha| {
            let target = (-model.sigma_quadratic(alpha) / T::from_f64(2.0).unwrap()).exp();
            let points: Vec<CltPoint<T>> = ns
                .iter()
                .map(|&n| {
                    let sq = T::from_usize(n).unwrap().sqrt();
                    let theta: Vec<T> = alpha.iter().map(|&a| a / sq).collect();
                    let value = annealed_char(law, &model.v, &theta, n) * model.kappa0;
                    let deviation = (value - Complex::new(target, T::zero())).norm();
                    CltPoint { alpha: alpha.clone(), n, value, target, deviation }
                })
                .collect();
            let decreasing = points.windows(2).all(|w| w[1].deviation < w[0].deviation);
            let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
            let ys: Vec<f64> = points.iter().map(|p| to_f64(p.deviation).ln()).collect();
            let fit = if points.iter().all(|p| p.deviation > T::zero()) { linear_fit(&xs, &ys) } else { None };
            CltAlpha { alpha: alpha.clone(), points, decreasing, fit }
        })
        .collect()
}

/// `tbar_{x,n}`, `n <= n_max`, by lattice convolution of the law (for cone
/// sources the table itself, which satisfies the same identity).
pub fn renewal_table<T: Real>(law: &IrreducibleLaw<T>, n_max: usize) -> Result<WeightTable<T>> {
    let mut entries = std::collections::BTreeMap::new();
    match law.source {
        LawSource::Cone => {
            if n_max > law.horizon {
                return invalid(format!("cone-sourced law only covers n <= {}", law.horizon));
            }
            for (n, es) in law.by_length.iter().enumerate().take(n_max + 1) {
                for (x, w) in es {
                    entries.insert((n, *x), *w * law.shift(n));
                }
            }
        }
        LawSource::Irreducible => {
            let f = law.entries()?;
            let mut t: Vec<HashMap<Site, T>> = vec![HashMap::from([(Site::ORIGIN, T::one())])];
            for n in 1..=n_max {
                let mut cur: HashMap<Site, T> = HashMap::new();
                for m in 1..=n.min(law.horizon) {
                    for (y, ty) in &t[n - m] {
                        for (x, fx) in &f[m] {
                            *cur.entry(*y + *x).or_insert_with(T::zero) += *ty * *fx;
                        }
                    }
                }
                for (x, w) in &cur {
                    entries.insert((n, *x), *w);
                }
                t.push(cur);
            }
        }
    }
    Ok(WeightTable::from_entries(TableKind::Cone, law.flavor, law.params.clone(), n_max, entries))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalBound {
    /// Largest `c` with `t <= (c n^{D/2})^{-1} exp(-c |x - n v|^2 / n)` on the table.
    pub c: f64,
    pub worst_n: usize,
    pub worst_x: Site,
    pub entries: usize,
}

/// Largest admissible constant in the annealed local upper bound.
pub fn local_bound_check<T: Real>(table: &WeightTable<T>, v: &[T], n_range: (usize, usize)) -> LocalBound {
    let dims = table.params.dims;
    let mut best = LocalBound { c: f64::INFINITY, worst_n: 0, worst_x: Site::ORIGIN, entries: 0 };
    for (n, x, w) in table.iter() {
        if n < n_range.0.max(1) || n > n_range.1 || w <= T::zero() {
            continue;
        }
        best.entries += 1;
        let nf = n as f64;
        let mut a = 0.0;
        for i in 0..dims {
            let d = x.0[i] as f64 - nf * to_f64(v[i]);
            a += d * d;
        }
        a /= nf;
        let lt = to_f64(w).ln();
        let half = 0.5 * dims as f64 * nf.ln();
        // g(c) = -ln c - half - c a - ln t is decreasing; find its root in ln c
        let g = |lc: f64| -lc - half - lc.exp() * a - lt;
        let (mut lo, mut hi) = (-80.0f64, 80.0f64);
        if g(hi) >= 0.0 {
            continue;
        }
        if g(lo) < 0.0 {
            best.c = 0.0;
            best.worst_n = n;
            best.worst_x = x;
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = lo.exp();
        if c < best.c {
            best.c = c;
            best.worst_n = n;
            best.worst_x = x;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_of_a_single_length() {
        // F_1 = e^{0.3}: lambda = 0.3
        let l = solve_lambda(&[0.0, 0.3f64.exp()]).unwrap();
        assert!((l - 0.3).abs() < 1e-13);
        assert!(solve_lambda(&[0.0, 0.0f64, 0.0]).is_err());
        let l = solve_lambda(&[0.0, 0.4f64, 0.1]).unwrap();
        assert!(l < 0.0 && (0.4 * (-l).exp() + 0.1 * (-2.0 * l).exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_shifts_under_rescaling() {
        let base = [0.0, 0.4f64, 0.5, 0.3, 0.2];
        let l0 = solve_lambda(&base).unwrap();
        let c = 0.37;
        let scaled: Vec<f64> = base.iter().enumerate().map(|(n, f)| f * (c * n as f64).exp()).collect();
        let l1 = solve_lambda(&scaled).unwrap();
        assert!((l1 - l0 - c).abs() < 1e-11);
    }
}
