//! Transfer-operator recursions: quenched partition functions and endpoint
//! slices at large `n`, Monte Carlo disorder averages, and cone-restricted
//! tables for Markov weights.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::environment::{
    ensemble_seed, visit_factor, visit_log_factor, Potential, PotentialLaw, SampledField,
};
use crate::error::{invalid, Error, Result};
use crate::exactenum::{Flavor, TableKind, TableParams, WeightTable};
use crate::lattice::{check_dims, directions, l1_ball, Direction, Site, MAX_DIMS};
use crate::polymer::{Confinement, ConeSpec};
use crate::scalar::{cst, log_sum_exp, to_f64, Real};

/// A finite set of sites on which the recursion runs, ordered by `|x|_1`
/// (ties lexicographic) so that the sites reachable in `k` steps form a
/// union of leading layers.
#[derive(Debug)]
pub struct Window {
    dims: usize,
    sites: Vec<Site>,
    layer_start: Vec<usize>,
    // pred[i * 2D + d]: index of sites[i] - e_d, or `len` (a zero slot)
    pred: Vec<u32>,
    // bit d set if sites[i] + e_d lies outside the window
    outside: Vec<u16>,
    index: HashMap<Site, u32>,
    rect: Option<(Site, Site)>,
}

impl Window {
    /// All sites with `|x|_1 <= radius`: exactly the sites an `n <= radius`
    /// step path can reach, so nothing leaks.
    pub fn ball(dims: usize, radius: usize) -> Result<Arc<Window>> {
        check_dims(dims)?;
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Window>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(w) = cache.lock().unwrap().get(&(dims, radius)) {
            return Ok(w.clone());
        }
        let w = Arc::new(Window::build(dims, l1_ball(dims, radius as i32), None));
        let mut guard = cache.lock().unwrap();
        if guard.len() > 16 {
            guard.clear();
        }
        guard.insert((dims, radius), w.clone());
        Ok(w)
    }

    /// The rectangle `lo <= x <= hi` (coordinatewise); must contain the
    /// origin. Mass that steps outside is dropped and bounded in
    /// [`DpRun::log_leak_bound`].
    pub fn rect(dims: usize, lo: &[i32], hi: &[i32]) -> Result<Arc<Window>> {
        check_dims(dims)?;
        if lo.len() != dims || hi.len() != dims {
            return invalid("rectangle corners need one coordinate per dimension");
        }
        if lo.iter().zip(hi).any(|(a, b)| *a > 0 || *b < 0) {
            return invalid("rectangle window must contain the origin");
        }
        let mut sites = Vec::new();
        let mut c = lo.to_vec();
        loop {
            sites.push(Site::new(&c));
            let mut i = dims;
            loop {
                if i == 0 {
                    let (lo_s, hi_s) = (Site::new(lo), Site::new(hi));
                    return Ok(Arc::new(Window::build(dims, sites, Some((lo_s, hi_s)))));
                }
                i -= 1;
                if c[i] < hi[i] {
                    c[i] += 1;
                    break;
                }
                c[i] = lo[i];
            }
        }
    }

    fn build(dims: usize, mut sites: Vec<Site>, rect: Option<(Site, Site)>) -> Window {
        sites.sort_by_key(|s| (s.l1(), *s));
        let max_l = sites.last().map_or(0, |s| s.l1()) as usize;
        let mut layer_start = vec![0usize; max_l + 2];
        for s in &sites {
            layer_start[s.l1() as usize + 1] += 1;
        }
        for l in 1..layer_start.len() {
            layer_start[l] += layer_start[l - 1];
        }
        let index: HashMap<Site, u32> = sites.iter().enumerate().map(|(i, s)| (*s, i as u32)).collect();
        let len = sites.len() as u32;
        let nd = 2 * dims;
        let mut pred = vec![len; sites.len() * nd];
        let mut outside = vec![0u16; sites.len()];
        for (i, s) in sites.iter().enumerate() {
            for d in directions(dims) {
                let k = d.index();
                if let Some(&j) = index.get(&s.step(d.reverse())) {
                    pred[i * nd + k] = j;
                }
                if !index.contains_key(&s.step(d)) {
                    outside[i] |= 1 << k;
                }
            }
        }
        Window { dims, sites, layer_start, pred, outside, index, rect }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
    pub fn len(&self) -> usize {
        self.sites.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
    pub fn sites(&self) -> &[Site] {
        &self.sites
    }
    pub fn index_of(&self, x: &Site) -> Option<usize> {
        self.index.get(x).map(|&i| i as usize)
    }
    pub fn is_rect(&self) -> bool {
        self.rect.is_some()
    }
    fn max_layer(&self) -> usize {
        self.layer_start.len() - 2
    }
    fn layer(&self, l: usize) -> std::ops::Range<usize> {
        self.layer_start[l]..self.layer_start[l + 1]
    }
}

/// Arithmetic used by the recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DpMode {
    Linear,
    Log,
    /// Linear up to `threshold` steps, log-space beyond.
    Auto { threshold: usize },
}

impl Default for DpMode {
    fn default() -> Self {
        DpMode::Auto { threshold: 64 }
    }
}

/// Where the drift tilt `exp(h.x)` enters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltMode {
    /// Each step `e` carries `exp(h.e)`.
    #[default]
    Folded,
    /// Untilted recursion, `exp(h.x)` applied to the result.
    AtEnd,
    /// Raw `Q_n(x)` without tilt.
    Untilted,
}

#[derive(Clone, Debug, Default)]
pub struct DpOptions {
    pub mode: DpMode,
    pub tilt: TiltMode,
    /// Defaults to the `L1` ball of radius `n`.
    pub window: Option<Arc<Window>>,
    /// Lengths whose endpoint slices are kept; the last length is always kept.
    pub keep: Vec<usize>,
}

/// Output of one sweep.
#[derive(Clone, Debug)]
pub struct DpRun<T> {
    pub n: usize,
    pub mode: DpMode,
    /// `log Q_k(h)` (or the untilted mass) for `k = 0..=n`.
    pub log_totals: Vec<T>,
    /// Requested slices in increasing `n`.
    pub slices: Vec<EndpointSlice<T>>,
    /// Log of an upper bound on the tilted mass lost through the window
    /// boundary by step `n` (rectangle windows only).
    pub log_leak_bound: Option<T>,
}

impl<T: Real> DpRun<T> {
    pub fn slice(&self, n: usize) -> Option<&EndpointSlice<T>> {
        self.slices.iter().find(|s| s.n == n)
    }
    pub fn last(&self) -> &EndpointSlice<T> {
        self.slices.last().expect("a run keeps its final slice")
    }
    pub fn totals(&self) -> Vec<T> {
        self.log_totals.iter().map(|l| l.exp()).collect()
    }
}

#[inline]
fn lse_small<T: Real>(xs: &[T]) -> T {
    let mut m = T::neg_infinity();
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == T::neg_infinity() {
        return m;
    }
    let mut s = T::zero();
    for &x in xs {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// Quenched partition functions by the recursion
/// `Q_k(x) = exp(-beta V(x)) (2D)^{-1} sum_e w_e Q_{k-1}(x - e)`, `Q_0 = delta_0`.
pub fn dp_quenched<T: Real, P: Potential<T> + ?Sized>(
    env: &P,
    h: &[T],
    beta: T,
    n: usize,
    opts: &DpOptions,
) -> Result<DpRun<T>> {
    let dims = env.dims();
    if h.len() != dims {
        return invalid(format!("h has {} components, expected {dims}", h.len()));
    }
    if !(beta >= T::zero()) || !beta.is_finite() {
        return invalid("beta must be finite and non-negative");
    }
    let window = match &opts.window {
        Some(w) => {
            if w.dims != dims {
                return invalid("window dimension does not match the environment");
            }
            if !w.is_rect() && w.max_layer() < n {
                return invalid(format!("window radius {} is smaller than n = {n}", w.max_layer()));
            }
            w.clone()
        }
        None => Window::ball(dims, n)?,
    };
    let nd = 2 * dims;
    let len = window.len();
    let mode = match opts.mode {
        DpMode::Auto { threshold } if n > threshold => DpMode::Log,
        DpMode::Auto { .. } => DpMode::Linear,
        m => m,
    };
    let log_mode = mode == DpMode::Log;

    // per-site log visit factors
    let mut logc = Vec::with_capacity(len);
    for s in window.sites() {
        match env.value(s) {
            Some(v) => logc.push(visit_log_factor(beta, v)),
            None => {
                return invalid(format!(
                    "window too small: the environment does not cover site {s} needed for n = {n}"
                ))
            }
        }
    }
    let norm = -T::from_usize(nd).unwrap().ln();
    let log_w: Vec<T> = directions(dims)
        .map(|d| match opts.tilt {
            TiltMode::Folded => d.dot(h) + norm,
            _ => norm,
        })
        .collect();
    let log_tilt: Vec<T> = match opts.tilt {
        TiltMode::AtEnd => window.sites().iter().map(|s| s.dot(h)).collect(),
        _ => Vec::new(),
    };
    let log_g = log_sum_exp(&directions(dims).map(|d| d.dot(h) + norm).collect::<Vec<_>>());

    let keep: HashSet<usize> = opts.keep.iter().copied().chain([n]).collect();
    let mut slices = Vec::new();
    let mut log_totals = Vec::with_capacity(n + 1);
    let mut leaks: Vec<T> = Vec::new();
    let origin = window.index_of(&Site::ORIGIN).expect("window contains the origin");

    let zero = if log_mode { T::neg_infinity() } else { T::zero() };
    let one = if log_mode { T::zero() } else { T::one() };
    let mut old = vec![zero; len + 1];
    let mut new = vec![zero; len + 1];
    old[origin] = one;
    log_totals.push(T::zero());
    let c: Vec<T> = if log_mode { logc.clone() } else { logc.iter().map(|l| l.exp()).collect() };
    let w: Vec<T> = if log_mode { log_w.clone() } else { log_w.iter().map(|l| l.exp()).collect() };
    let max_l = window.max_layer();

    let make_slice = |vals: &[T], k: usize| -> EndpointSlice<T> {
        let mut logs: Vec<T> = if log_mode {
            vals[..len].to_vec()
        } else {
            vals[..len].iter().map(|v| v.ln()).collect()
        };
        if opts.tilt == TiltMode::AtEnd {
            for (l, t) in logs.iter_mut().zip(&log_tilt) {
                *l += *t;
            }
        }
        EndpointSlice::from_logs(k, window.clone(), logs, opts.tilt != TiltMode::Untilted, h.to_vec())
    };
    if keep.contains(&0) {
        slices.push(make_slice(&old, 0));
    }

    let mut terms = [T::zero(); 2 * MAX_DIMS];
    for k in 1..=n {
        if window.is_rect() {
            // tilted mass about to leave through the boundary
            let mut lk = Vec::new();
            for l in (((k - 1) % 2)..=max_l.min(k - 1)).step_by(2) {
                for i in window.layer(l) {
                    let out = window.outside[i];
                    if out == 0 {
                        continue;
                    }
                    let base = if log_mode { old[i] } else { old[i].ln() };
                    let base = if opts.tilt == TiltMode::AtEnd { base + log_tilt[i] } else { base };
                    for d in 0..nd {
                        if out & (1 << d) != 0 {
                            let dir = Direction::from_index(d);
                            lk.push(base + dir.dot(h) + norm);
                        }
                    }
                }
            }
            leaks.push(log_sum_exp(&lk) + log_g * T::from_usize(n - k).unwrap());
        }
        let mut total_terms: Vec<T> = Vec::new();
        let mut lin_total = T::zero();
        for l in ((k % 2)..=max_l.min(k)).step_by(2) {
            for i in window.layer(l) {
                let p = &window.pred[i * nd..(i + 1) * nd];
                let v = if log_mode {
                    for d in 0..nd {
                        terms[d] = w[d] + old[p[d] as usize];
                    }
                    c[i] + lse_small(&terms[..nd])
                } else {
                    let mut s = T::zero();
                    for d in 0..nd {
                        s += w[d] * old[p[d] as usize];
                    }
                    c[i] * s
                };
                new[i] = v;
                match (log_mode, opts.tilt == TiltMode::AtEnd) {
                    (true, true) => total_terms.push(v + log_tilt[i]),
                    (true, false) => total_terms.push(v),
                    (false, true) => lin_total += v * log_tilt[i].exp(),
                    (false, false) => lin_total += v,
                }
            }
        }
        log_totals.push(if log_mode { log_sum_exp(&total_terms) } else { lin_total.ln() });
        std::mem::swap(&mut old, &mut new);
        if keep.contains(&k) {
            slices.push(make_slice(&old, k));
        }
    }
    let log_leak_bound = if window.is_rect() { Some(log_sum_exp(&leaks)) } else { None };
    Ok(DpRun { n, mode, log_totals, slices, log_leak_bound })
}

/// `Q_n(x)` over a window, stored as `exp(log_scale) * values`.
#[derive(Clone, Debug)]
pub struct EndpointSlice<T> {
    pub n: usize,
    window: Arc<Window>,
    log_scale: T,
    values: Vec<T>,
    pub tilted: bool,
    pub h: Vec<T>,
}

impl<T: Real> EndpointSlice<T> {
    fn from_logs(n: usize, window: Arc<Window>, logs: Vec<T>, tilted: bool, h: Vec<T>) -> Self {
        let m = logs.iter().copied().fold(T::neg_infinity(), T::max);
        let scale = if m == T::neg_infinity() { T::zero() } else { m };
        let values = logs.iter().map(|&l| (l - scale).exp()).collect();
        EndpointSlice { n, window, log_scale: scale, values, tilted, h }
    }

    /// The point mass at the origin (`n = 0`).
    pub fn delta(dims: usize) -> Result<Self> {
        let window = Window::ball(dims, 0)?;
        Ok(EndpointSlice {
            n: 0,
            window,
            log_scale: T::zero(),
            values: vec![T::one()],
            tilted: false,
            h: vec![T::zero(); dims],
        })
    }

    pub fn dims(&self) -> usize {
        self.window.dims()
    }

    pub fn get(&self, x: &Site) -> T {
        self.window
            .index_of(x)
            .map_or(T::zero(), |i| self.values[i] * self.log_scale.exp())
    }

    /// Non-zero entries in lexicographic order.
    pub fn entries(&self) -> Vec<(Site, T)> {
        let s = self.log_scale.exp();
        let mut out: Vec<(Site, T)> = self
            .window
            .sites()
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| **v > T::zero())
            .map(|(x, v)| (*x, *v * s))
            .collect();
        out.sort_by_key(|a| a.0);
        out
    }

    pub fn log_total(&self) -> T {
        let s: T = self.values.iter().copied().sum();
        s.ln() + self.log_scale
    }

    pub fn total(&self) -> T {
        self.log_total().exp()
    }

    fn phase_sum(&self, alpha: &[T], v: &[T]) -> Complex<T> {
        let nv: Vec<T> = v.iter().map(|&c| c * T::from_usize(self.n).unwrap()).collect();
        let mut acc = Complex::new(T::zero(), T::zero());
        for (x, &w) in self.window.sites().iter().zip(&self.values) {
            if w == T::zero() {
                continue;
            }
            let mut ph = T::zero();
            for i in 0..alpha.len() {
                ph += alpha[i] * (T::from_i32(x.0[i]).unwrap() - nv[i]);
            }
            acc += Complex::from_polar(w, ph);
        }
        acc
    }

    /// `S_n(alpha) = sum_z Q(z) exp(i alpha.(z - n v))`.
    pub fn char_sum(&self, alpha: &[T], v: &[T]) -> Complex<T> {
        self.phase_sum(alpha, v) * self.log_scale.exp()
    }

    /// `S_n(alpha) / S_n(0)`; scale-free.
    pub fn normalized_char(&self, alpha: &[T], v: &[T]) -> Complex<T> {
        let s: T = self.values.iter().copied().sum();
        self.phase_sum(alpha, v) / s
    }

    /// Mean of `X` under the normalized slice.
    pub fn mean(&self) -> Vec<T> {
        let s: T = self.values.iter().copied().sum();
        let mut m = vec![T::zero(); self.dims()];
        for (x, &w) in self.window.sites().iter().zip(&self.values) {
            for (i, mi) in m.iter_mut().enumerate() {
                *mi += w * T::from_i32(x.0[i]).unwrap();
            }
        }
        m.into_iter().map(|c| c / s).collect()
    }

    /// Normalized mass of `{x : |x/n - v| > eps}`.
    pub fn tail_mass(&self, v: &[T], eps: T) -> T {
        let s: T = self.values.iter().copied().sum();
        let nn = T::from_usize(self.n.max(1)).unwrap();
        let mut out = T::zero();
        for (x, &w) in self.window.sites().iter().zip(&self.values) {
            if w == T::zero() {
                continue;
            }
            let mut d2 = T::zero();
            for (i, &vi) in v.iter().enumerate() {
                let d = T::from_i32(x.0[i]).unwrap() / nn - vi;
                d2 += d * d;
            }
            if d2.sqrt() > eps {
                out += w;
            }
        }
        out / s
    }

    /// CSV rows `x1,..,xD,value` for non-zero entries in lexicographic order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dims = self.dims();
        let mut header: Vec<String> = (1..=dims).map(|i| format!("x{i}")).collect();
        header.push("value".into());
        writeln!(w, "{}", header.join(","))?;
        for (x, v) in self.entries() {
            let c: Vec<String> = x.coords(dims).iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{:?}", c.join(","), to_f64(v))?;
        }
        Ok(())
    }
}

/// Annealed reference values `Q_k(h)` with standard errors, `k = 0..=n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnnealedRef<T> {
    pub mean: Vec<T>,
    pub stderr: Vec<T>,
}

impl<T: Real> AnnealedRef<T> {
    /// Exact values (zero error), e.g. from enumeration.
    pub fn exact(values: Vec<T>) -> Self {
        let stderr = vec![T::zero(); values.len()];
        AnnealedRef { mean: values, stderr }
    }
}

/// Monte Carlo estimate of `Q_k(h) = E Q_k^omega(h)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McAnnealed<T> {
    pub n_env: usize,
    pub seed: u64,
    pub estimate: AnnealedRef<T>,
    /// `Q_k^omega(h)` per environment (outer) and length (inner).
    pub samples: Vec<Vec<T>>,
}

/// Sample mean and standard error. The data are shifted by the first
/// sample first, so identical samples give an error of exactly zero.
pub fn mean_stderr<T: Real>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    if n == 0 {
        return (T::nan(), T::nan());
    }
    let s0 = xs[0];
    let nn = T::from_usize(n).unwrap();
    let d: Vec<T> = xs.iter().map(|&x| x - s0).collect();
    let md = d.iter().copied().sum::<T>() / nn;
    let mean = s0 + md;
    if n < 2 {
        return (mean, T::nan());
    }
    let var = d.iter().map(|&x| (x - md) * (x - md)).sum::<T>() / T::from_usize(n - 1).unwrap();
    (mean, (var / nn).sqrt())
}

/// Quenched sweeps over an ensemble of environments drawn lazily from
/// `(law, seed)`. Results are in ensemble order.
pub fn dp_ensemble<T: Real>(
    law: &PotentialLaw,
    h: &[T],
    beta: T,
    n: usize,
    n_env: usize,
    seed: u64,
    opts: &DpOptions,
) -> Result<Vec<DpRun<T>>> {
    let dims = h.len();
    check_dims(dims)?;
    law.validate()?;
    (0..n_env)
        .into_par_iter()
        .map(|i| {
            let field = SampledField::new(*law, dims, n as i32, ensemble_seed(seed, i as u64))?;
            dp_quenched(&field, h, beta, n, opts)
        })
        .collect()
}

/// Annealed partition functions by averaging quenched sweeps.
pub fn mc_annealed<T: Real>(
    law: &PotentialLaw,
    h: &[T],
    beta: T,
    n: usize,
    n_env: usize,
    seed: u64,
) -> Result<McAnnealed<T>> {
    if n_env < 2 {
        return invalid("mc_annealed needs at least 2 environments");
    }
    let runs = dp_ensemble(law, h, beta, n, n_env, seed, &DpOptions::default())?;
    let samples: Vec<Vec<T>> = runs.iter().map(|r| r.totals()).collect();
    let mut mean = Vec::with_capacity(n + 1);
    let mut stderr = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let col: Vec<T> = samples.iter().map(|s| s[k]).collect();
        let (m, e) = mean_stderr(&col);
        mean.push(m);
        stderr.push(e);
    }
    Ok(McAnnealed { n_env, seed, estimate: AnnealedRef { mean, stderr }, samples })
}

/// `W_n = Q_n^omega(h) / Q_n(h)` with propagated reference error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioSeries<T> {
    /// Index `k = 0..=n`.
    pub w: Vec<T>,
    pub err: Vec<T>,
    /// First `k` with `W_k = 0`, if any.
    pub zero_from: Option<usize>,
}

pub fn ratio_series<T: Real, P: Potential<T> + ?Sized>(
    env: &P,
    h: &[T],
    beta: T,
    n_max: usize,
    reference: &AnnealedRef<T>,
) -> Result<RatioSeries<T>> {
    if reference.mean.len() <= n_max {
        return invalid("annealed reference is shorter than the requested series");
    }
    let run = dp_quenched(env, h, beta, n_max, &DpOptions::default())?;
    ratio_from_totals(&run.totals(), reference)
}

/// Ratio series from precomputed quenched totals.
pub fn ratio_from_totals<T: Real>(q: &[T], reference: &AnnealedRef<T>) -> Result<RatioSeries<T>> {
    let mut w = Vec::with_capacity(q.len());
    let mut err = Vec::with_capacity(q.len());
    for (k, &qk) in q.iter().enumerate() {
        let d = reference.mean[k];
        if d == T::zero() || !d.is_finite() {
            return Err(Error::Numerical(format!("annealed reference vanishes at n = {k}")));
        }
        let r = qk / d;
        w.push(r);
        err.push(r * reference.stderr[k] / d);
    }
    let zero_from = w.iter().position(|&r| r == T::zero());
    Ok(RatioSeries { w, err, zero_from })
}

/// Step weights of a cone-restricted recursion.
#[derive(Clone, Copy)]
pub enum ConeWeights<'a, T: Real> {
    /// One environment seen from `anchor`.
    Field {
        field: &'a dyn Potential<T>,
        seed: u64,
        anchor: Site,
    },
    /// Annealed weights of a law whose interaction is linear in the local
    /// time at this `beta` (see [`PotentialLaw::markov_weight`]).
    Markov(PotentialLaw),
}

/// A cone table together with the bound on what target pruning dropped.
#[derive(Clone, Debug)]
pub struct ConeTableRun<T> {
    pub table: WeightTable<T>,
    pub targets: usize,
    pub skipped: usize,
    /// Upper bound on any single dropped `exp(-lambda_0 n) t_{x,n}` with
    /// `lambda_0` the free tilted-walk rate.
    pub prune: T,
}

/// Point probabilities `P(S_k = x)` of the walk with step law
/// `exp(h.e)/sum exp(h.e')`, maximized over `k <= n`.
fn max_tilted_point_mass<T: Real>(h: &[T], n: usize) -> Result<HashMap<Site, T>> {
    let dims = h.len();
    let run = {
        let zero = crate::environment::Homogeneous { dims, v: T::zero() };
        let keep: Vec<usize> = (1..=n).collect();
        dp_quenched(&zero, h, T::zero(), n, &DpOptions { keep, mode: DpMode::Log, ..Default::default() })?
    };
    let mut out: HashMap<Site, T> = HashMap::new();
    for s in &run.slices {
        let lt = s.log_total();
        for (x, w) in s.entries() {
            let p = (w.ln() - lt).exp();
            let e = out.entry(x).or_insert_with(T::zero);
            if p > *e {
                *e = p;
            }
        }
    }
    Ok(out)
}

/// Cone-confined weights `t_{x,n}` for `n <= n_max` by a recursion on the
/// lens `(0 + Y) ∩ (x - Y)` of each target `x`. Valid whenever the weights
/// are Markov: any single environment, or annealed weights with a linear
/// interaction. Targets whose tilted-walk point mass never exceeds `prune`
/// are skipped.
pub fn cone_table<T: Real>(
    weights: &ConeWeights<T>,
    cone: &ConeSpec<T>,
    beta: T,
    n_max: usize,
    prune: T,
) -> Result<ConeTableRun<T>> {
    let dims = cone.dims();
    let h = cone.h();
    let (flavor, markov_c) = match *weights {
        ConeWeights::Field { field, seed, anchor } => {
            if field.dims() != dims {
                return invalid("environment dimension does not match the cone");
            }
            (Flavor::Quenched { seed, anchor }, None)
        }
        ConeWeights::Markov(law) => match law.markov_weight(beta) {
            Some(c) => (Flavor::Annealed { law }, Some(c)),
            None => {
                return invalid(format!(
                    "annealed weights of {law} at beta = {beta} are not Markov; use enumeration"
                ))
            }
        },
    };
    let bound = max_tilted_point_mass(h, n_max)?;
    // reflections x_i -> -x_i leave both the cone and Markov weights invariant
    let mirror_axes: Vec<usize> = if markov_c.is_some() {
        (0..dims).filter(|&i| h[i] == T::zero()).collect()
    } else {
        Vec::new()
    };
    let mut targets: Vec<Site> = bound
        .iter()
        .filter(|(x, p)| **p >= prune && **x != Site::ORIGIN && cone.contains(x))
        .map(|(x, _)| *x)
        .filter(|x| mirror_axes.iter().all(|&i| x.0[i] >= 0))
        .collect();
    targets.sort();
    let all_in_cone = bound.keys().filter(|x| **x != Site::ORIGIN && cone.contains(x)).count();
    let evaluated = bound
        .iter()
        .filter(|(x, p)| **p >= prune && **x != Site::ORIGIN && cone.contains(x))
        .count();
    let norm = -T::from_usize(2 * dims).unwrap().ln();
    let w: Vec<T> = directions(dims).map(|d| (d.dot(h) + norm).exp()).collect();

    let per_target: Vec<Result<Vec<(usize, Site, T)>>> = targets
        .par_iter()
        .map(|&x| {
            let series = lens_recursion(weights, markov_c, cone, beta, &w, x, n_max, prune)?;
            let mut images = vec![x];
            for &i in &mirror_axes {
                let extra: Vec<Site> = images
                    .iter()
                    .filter(|s| s.0[i] != 0)
                    .map(|s| {
                        let mut c = s.0;
                        c[i] = -c[i];
                        Site(c)
                    })
                    .collect();
                images.extend(extra);
            }
            let mut out = Vec::new();
            for (k, v) in series.into_iter().enumerate() {
                if v > T::zero() {
                    for im in &images {
                        out.push((k, *im, v));
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut entries = std::collections::BTreeMap::new();
    for r in per_target {
        for (k, x, v) in r? {
            entries.insert((k, x), v);
        }
    }
    let params = TableParams { dims, h: h.to_vec(), beta, delta: Some(cone.delta()) };
    Ok(ConeTableRun {
        table: WeightTable::from_entries(TableKind::Cone, flavor, params, n_max, entries),
        targets: evaluated,
        skipped: all_in_cone - evaluated,
        prune,
    })
}

/// `t_{x,k}`, `k = 0..=n_max`, for one target.
fn lens_recursion<T: Real>(
    weights: &ConeWeights<T>,
    markov_c: Option<T>,
    cone: &ConeSpec<T>,
    beta: T,
    w: &[T],
    x: Site,
    n_max: usize,
    prune: T,
) -> Result<Vec<T>> {
    let dims = cone.dims();
    let nd = 2 * dims;
    // flood fill the part of the lens on paths of length <= n_max
    let in_lens = |y: &Site| cone.contains(y) && cone.contains(&(x - *y));
    let mut idx: FxHashMap<Site, u32> = FxHashMap::default();
    let mut sites = vec![Site::ORIGIN];
    idx.insert(Site::ORIGIN, 0);
    let mut queue = VecDeque::from([Site::ORIGIN]);
    while let Some(y) = queue.pop_front() {
        for d in directions(dims) {
            let z = y.step(d);
            if (z.l1() + (x - z).l1()) as usize <= n_max && !idx.contains_key(&z) && in_lens(&z) {
                idx.insert(z, sites.len() as u32);
                sites.push(z);
                queue.push_back(z);
            }
        }
    }
    let mut out = vec![T::zero(); n_max + 1];
    if !idx.contains_key(&x) {
        return Ok(out);
    }
    // even sites first, then by |y|_1: step k only touches sites of parity k
    // with |y|_1 <= k, a prefix of each parity class
    sites.sort_by_key(|s| (s.parity(), s.l1()));
    let split = sites.partition_point(|s| s.parity() == 0);
    let reach = |k: usize| -> std::ops::Range<usize> {
        let (a, b) = if k.is_multiple_of(2) { (0, split) } else { (split, sites.len()) };
        a..a + sites[a..b].partition_point(|s| s.l1() as usize <= k)
    };
    let ranges: Vec<std::ops::Range<usize>> = (0..=n_max).map(reach).collect();
    for (i, s) in sites.iter().enumerate() {
        idx.insert(*s, i as u32);
    }
    let xi = idx[&x];
    let origin = idx[&Site::ORIGIN] as usize;
    let len = sites.len();
    let mut pred = vec![len as u32; len * nd];
    for (i, s) in sites.iter().enumerate() {
        for d in directions(dims) {
            if let Some(&j) = idx.get(&s.step(d.reverse())) {
                pred[i * nd + d.index()] = j;
            }
        }
    }
    let mut c = Vec::with_capacity(len);
    for s in &sites {
        c.push(match (*weights, markov_c) {
            (_, Some(c)) => c,
            (ConeWeights::Field { field, anchor, .. }, None) => {
                let v = field.value(&(anchor + *s)).ok_or(Error::OutOfDomain(anchor + *s))?;
                visit_factor(beta, v)
            }
            _ => unreachable!(),
        });
    }
    // steps left before y can still reach x within n_max
    let slack: Vec<usize> = sites.iter().map(|s| n_max.saturating_sub((x - *s).l1() as usize)).collect();
    let punctured = cone.confinement() == Confinement::Punctured;
    let mut old = vec![T::zero(); len + 1];
    let mut new = vec![T::zero(); len + 1];
    old[origin] = T::one();
    let xi = xi as usize;
    let first = x.l1() as usize;
    let log_w0 = w.iter().copied().sum::<T>().ln();
    for k in 1..=n_max {
        let mut mass = T::zero();
        for i in ranges[k].clone() {
            if k > slack[i] {
                new[i] = T::zero();
                continue;
            }
            let p = &pred[i * nd..(i + 1) * nd];
            let mut s = T::zero();
            for d in 0..nd {
                s += w[d] * old[p[d] as usize];
            }
            let v = c[i] * s;
            new[i] = v;
            mass += v;
        }
        // with visit factors <= 1, every later exp(-lambda_0 k') t_{x,k'} is
        // bounded by the normalized mass still inside the lens
        if mass * (-log_w0 * T::from_usize(k).unwrap()).exp() < prune {
            if k >= first {
                out[k] = new[xi];
            }
            break;
        }
        if punctured {
            new[origin] = T::zero();
        }
        if k >= first {
            out[k] = new[xi];
        }
        if punctured {
            new[xi] = T::zero();
        }
        std::mem::swap(&mut old, &mut new);
    }
    Ok(out)
}

/// Convenience constructor for `h = t e1` vectors at the call site.
pub fn tilt<T: Real>(dims: usize, t: f64) -> Vec<T> {
    crate::polymer::on_axis(dims, cst(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, Environment, Homogeneous};

    #[test]
    fn zero_steps_is_a_delta() {
        let env = Homogeneous { dims: 2, v: 0.0f64 };
        let run = dp_quenched(&env, &[0.3, 0.0], 1.0, 0, &DpOptions::default()).unwrap();
        assert_eq!(run.last().entries(), vec![(Site::ORIGIN, 1.0)]);
        let d = EndpointSlice::<f64>::delta(3).unwrap();
        let z = d.char_sum(&[0.4, -1.0, 2.0], &[0.0; 3]);
        assert!((z.re - 1.0).abs() < 1e-15 && z.im.abs() < 1e-15);
    }

    #[test]
    fn mass_is_conserved_without_disorder_or_tilt() {
        let env = Homogeneous { dims: 3, v: 0.0f64 };
        let run = dp_quenched(&env, &[0.0; 3], 0.0, 12, &DpOptions::default()).unwrap();
        for t in run.totals() {
            assert!((t - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn blocked_origin_kills_everything() {
        let mut env = Environment::<f64>::constant(2, 6, 0.0).unwrap();
        for d in directions(2) {
            env.set(&Site::ORIGIN.step(d), f64::INFINITY).unwrap();
        }
        assert!(env.origin_blocked());
        let run = dp_quenched(&env, &[0.5, 0.0], 0.1, 6, &DpOptions::default()).unwrap();
        assert!(run.totals()[1..].iter().all(|&t| t == 0.0));
    }

    #[test]
    fn small_environment_is_rejected() {
        let env: Environment<f64> =
            sample_environment(&PotentialLaw::Exponential { rate: 1.0 }, 2, 3, 1).unwrap();
        assert!(dp_quenched(&env, &[0.0, 0.0], 1.0, 5, &DpOptions::default()).is_err());
    }

    #[test]
    fn stderr_vanishes_on_constant_data() {
        let (m, e) = mean_stderr(&[0.1f64 + 0.2; 7]);
        assert_eq!(m, 0.1 + 0.2);
        assert_eq!(e, 0.0);
    }
}
