//! Quenched statistical experiments: the expansion statistic `s_n`,
//! half-space conditional expectations, mixingale profiles, the quenched
//! CLT ratio and LLN tails.

use std::collections::HashMap;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{ensemble_seed, Potential, PotentialLaw, SampledField};
use crate::error::{Error, Result};
use crate::exactenum::Disorder;
use crate::lattice::Site;
use crate::poly::{enumerate_conditional, sample_conditional, Algebra, BasicPolys, SitePoly};
use crate::polymer::{Confinement, ConeSpec};
use crate::renewal::RenewalModel;
use crate::scalar::{to_f64, Real};
use crate::stats::{linear_fit, spread, LineFit, Spread};
use crate::transfer::{cone_table, mean_stderr, ConeWeights, EndpointSlice};

/// `A_m = sigma(V(x) : x1 <= floor(m |v|))`, drift along `e1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceAlgebra {
    pub m: i64,
    pub speed: f64,
}

impl HalfSpaceAlgebra {
    pub fn new(m: i64, speed: f64) -> Self {
        HalfSpaceAlgebra { m, speed }
    }

    /// Largest `x1` inside the half-space.
    pub fn level(&self) -> i64 {
        (self.m as f64 * self.speed.abs()).floor() as i64
    }

    pub fn contains(&self, x: &Site) -> bool {
        x.0[0] as i64 <= self.level()
    }

    pub fn algebra(&self) -> Algebra {
        Algebra::HalfSpace { level: self.level() }
    }
}

/// `D(u, v) = (u + Y) cap (v - Y)`, lexicographically sorted.
pub fn dependence_region<T: Real>(cone: &ConeSpec<T>, u: Site, v: Site) -> Vec<Site> {
    let dims = cone.dims();
    let y = v - u;
    if !cone.contains(&y) {
        return Vec::new();
    }
    // |z - u| <= (v - u).h / (delta |h|) inside the region
    let hn = crate::lattice::vec_norm(cone.h());
    let r = (to_f64(y.dot(cone.h()) / (cone.delta() * hn))).ceil() as i32;
    let mut out: Vec<Site> = crate::lattice::box_sites(dims, r)
        .map(|z| u + z)
        .filter(|z| cone.contains(&(*z - u)) && cone.contains(&(v - *z)))
        .collect();
    out.sort_unstable();
    out
}

/// How a conditional expectation is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CondMode {
    /// Symbolic average over the free sites; any law.
    Exact,
    /// Sum over all configurations of the free sites; finite-support laws
    /// and at most `MAX_FREE_SITES` free sites.
    Enumerate,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CondValue {
    pub value: f64,
    /// Zero for the exact modes.
    pub stderr: f64,
    pub free_sites: usize,
    pub region_sites: usize,
}

/// `E(f_{y,m}^{theta_x omega} | A)` at the environment `env`.
pub fn cond_expect_f<T: Real, P: Potential<T> + ?Sized>(
    polys: &BasicPolys<T>,
    env: &P,
    x: Site,
    y: Site,
    m: usize,
    algebra: &Algebra,
    mode: CondMode,
) -> Result<CondValue> {
    let f = polys.f(x, x + y, m);
    let region = dependence_region(polys.cone(), x, x + y);
    let sites = f.sites();
    let mut frozen: HashMap<Site, T> = HashMap::new();
    for s in sites.iter().filter(|s| algebra.contains(s)) {
        frozen.insert(*s, env.value(s).ok_or(Error::OutOfDomain(*s))?);
    }
    let free_sites = sites.len() - frozen.len();
    let beta = polys.beta();
    let (value, stderr) = match mode {
        CondMode::Exact => (f.condition(algebra, polys.phi()).evaluate_with(beta, |s| frozen[s]), T::zero()),
        CondMode::Enumerate => (enumerate_conditional(&f, polys.law(), beta, &frozen)?, T::zero()),
        CondMode::MonteCarlo { samples, seed } => sample_conditional(&f, polys.law(), beta, &frozen, samples, seed),
    };
    Ok(CondValue { value: to_f64(value), stderr: to_f64(stderr), free_sites, region_sites: region.len() })
}

/// One experiment's per-`n` series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub experiment: String,
    pub n: Vec<usize>,
    pub value: Vec<f64>,
    pub err: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// `s_n` and the companion `kappa0 t_n` for one environment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SSeries {
    pub seed: u64,
    /// Irreducible steps are summed up to this length.
    pub m_max: usize,
    pub s: Vec<f64>,
    pub companion: Vec<f64>,
}

/// `s_n = 1 + sum_{l <= n} sum_x t_{x,l} (F^{theta_x omega} - Fbar)` with
/// `F = sum_{y, m <= m_max} f_{y,m}`, all weights shifted by the annealed
/// `lambda`.
pub fn s_series<T: Real>(
    field: &dyn Potential<T>,
    seed: u64,
    polys: &BasicPolys<T>,
    model: &RenewalModel<T>,
    n: usize,
    m_max: usize,
) -> Result<SSeries> {
    let cone = polys.cone();
    let beta = polys.beta();
    let lambda = polys.lambda();
    let m_max = m_max.min(polys.n_max());
    let cat = polys.catalogue();
    let run = cone_table(&ConeWeights::Field { field, seed, anchor: Site::ORIGIN }, cone, beta, n, T::zero())?;
    let mut t = run.table;
    t.set_lambda(lambda);
    let fbar = cat.irreducible_total(&Disorder::Annealed(*polys.law()), beta, lambda, m_max)?;
    let fq = |x: Site| cat.irreducible_total(&Disorder::Quenched { field, seed, anchor: x }, beta, lambda, m_max);
    let mut s = Vec::with_capacity(n + 1);
    let mut companion = Vec::with_capacity(n + 1);
    let mut acc = T::one() + (fq(Site::ORIGIN)? - fbar);
    s.push(to_f64(acc));
    companion.push(to_f64(model.kappa0));
    for l in 1..=n {
        let mut tn = T::zero();
        for (x, w) in t.at_length(l) {
            acc += w * (fq(x)? - fbar);
            tn += w;
        }
        s.push(to_f64(acc));
        companion.push(to_f64(tn * model.kappa0));
    }
    Ok(SSeries { seed, m_max, s, companion })
}

/// `s_N` over an ensemble of lazily sampled environments: mean and
/// standard error per `n`.
pub fn s_series_ensemble<T: Real>(
    law: &PotentialLaw,
    polys: &BasicPolys<T>,
    model: &RenewalModel<T>,
    n: usize,
    m_max: usize,
    n_env: usize,
    seed: u64,
) -> Result<(SeriesResult, Vec<SSeries>)> {
    let dims = polys.cone().dims();
    let radius = (n + m_max) as i32 + 1;
    let runs: Vec<SSeries> = (0..n_env as u64)
        .into_par_iter()
        .map(|i| {
            let s = ensemble_seed(seed, i);
            let field = SampledField::new(*law, dims, radius, s)?;
            s_series(&field, s, polys, model, n, m_max)
        })
        .collect::<Result<_>>()?;
    let mut value = Vec::with_capacity(n + 1);
    let mut err = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let xs: Vec<f64> = runs.iter().map(|r| r.s[k]).collect();
        let (m, e) = mean_stderr(&xs);
        value.push(m);
        err.push(e);
    }
    let res = SeriesResult {
        experiment: "s_series".into(),
        n: (0..=n).collect(),
        value,
        err,
        seeds: runs.iter().map(|r| r.seed).collect(),
    };
    Ok((res, runs))
}

/// The mean-zero summand `Z_l = sum_x t_{x,l} (F_x - Fbar)`, with the
/// conditional pieces it needs kept per endpoint.
pub struct MixingaleTerm<T> {
    pub ell: usize,
    pub m_max: usize,
    parts: Vec<(SitePoly<T>, SitePoly<T>)>,
    fbar: SitePoly<T>,
}

impl<T: Real> MixingaleTerm<T> {
    pub fn new(polys: &BasicPolys<T>, ell: usize, m_max: usize) -> Self {
        let fbar = polys.f_total(Site::ORIGIN, m_max).condition(&Algebra::Trivial, polys.phi());
        let parts = polys
            .endpoints(ell)
            .into_iter()
            .map(|x| (polys.t(Site::ORIGIN, x, ell), polys.f_total(x, m_max)))
            .collect();
        MixingaleTerm { ell, m_max, parts, fbar }
    }

    /// `Z_l` as a polynomial.
    pub fn z(&self) -> SitePoly<T> {
        let mut z = SitePoly::zero();
        for (t, f) in &self.parts {
            z = z.plus(&t.mul(&f.clone().minus(&self.fbar)));
        }
        z
    }

    /// `E(Z_l | A)`. Under punctured confinement the cone and irreducible
    /// pieces live on disjoint sites and the conditional expectation
    /// factorizes per endpoint.
    pub fn conditional(&self, a: &Algebra, polys: &BasicPolys<T>) -> SitePoly<T> {
        if polys.cone().confinement() != Confinement::Punctured {
            return self.z().condition(a, polys.phi());
        }
        let mut z = SitePoly::zero();
        for (t, f) in &self.parts {
            let g = f.condition(a, polys.phi()).minus(&self.fbar);
            if g.is_empty() {
                continue;
            }
            z = z.plus(&t.condition(a, polys.phi()).mul(&g));
        }
        z
    }

    /// `Z_l - E(Z_l | A)`.
    pub fn residual(&self, a: &Algebra, polys: &BasicPolys<T>) -> SitePoly<T> {
        if polys.cone().confinement() != Confinement::Punctured {
            return self.z().minus(&self.conditional(a, polys));
        }
        let mut z = SitePoly::zero();
        for (t, f) in &self.parts {
            let full = t.mul(&f.clone().minus(&self.fbar));
            let g = f.condition(a, polys.phi()).minus(&self.fbar);
            let cond = t.condition(a, polys.phi()).mul(&g);
            z = z.plus(&full.minus(&cond));
        }
        z
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingaleProfile {
    pub ell: usize,
    pub m_max: usize,
    pub speed: f64,
    pub k: Vec<i64>,
    /// `E[(E(Z_l | A_{l-k}))^2]`.
    pub lower: Vec<f64>,
    /// `E[(Z_l - E(Z_l | A_{l+k}))^2]`.
    pub upper: Vec<f64>,
    /// Ensemble estimates `(mean, stderr)` of the same moments, when requested.
    pub lower_ensemble: Option<Vec<(f64, f64)>>,
    pub upper_ensemble: Option<Vec<(f64, f64)>>,
    /// Fit of `log lower` against `log(1 + k)` over the non-zero points.
    pub lower_fit: Option<LineFit>,
    pub upper_fit: Option<LineFit>,
}

/// Exact conditional second moments of `Z_l` for `k = 0..=k_max`, plus
/// optional ensemble estimates from `n_env` sampled environments.
pub fn mixingale_profile<T: Real>(
    polys: &BasicPolys<T>,
    speed: f64,
    ell: usize,
    m_max: usize,
    k_max: i64,
    ensemble: Option<(usize, u64)>,
) -> Result<MixingaleProfile> {
    let term = MixingaleTerm::new(polys, ell, m_max);
    let phi = polys.phi();
    let ks: Vec<i64> = (0..=k_max).collect();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut lower_polys = Vec::new();
    let mut upper_polys = Vec::new();
    for &k in &ks {
        let a_lo = HalfSpaceAlgebra::new(ell as i64 - k, speed).algebra();
        let a_hi = HalfSpaceAlgebra::new(ell as i64 + k, speed).algebra();
        let c = term.conditional(&a_lo, polys);
        let r = term.residual(&a_hi, polys);
        lower.push(to_f64(c.expect_product(&c, phi)));
        upper.push(to_f64(r.expect_product(&r, phi)));
        lower_polys.push(c);
        upper_polys.push(r);
    }
    let (lower_ensemble, upper_ensemble) = match ensemble {
        None => (None, None),
        Some((n_env, seed)) => {
            let dims = polys.cone().dims();
            let radius = (ell + m_max) as i32 + 1;
            let beta = polys.beta();
            let mut lo = vec![Vec::with_capacity(n_env); ks.len()];
            let mut hi = vec![Vec::with_capacity(n_env); ks.len()];
            for i in 0..n_env as u64 {
                let field = SampledField::new(*polys.law(), dims, radius, ensemble_seed(seed, i))?;
                for j in 0..ks.len() {
                    let c = to_f64(lower_polys[j].evaluate(&field, beta)?);
                    let r = to_f64(upper_polys[j].evaluate(&field, beta)?);
                    lo[j].push(c * c);
                    hi[j].push(r * r);
                }
            }
            (Some(lo.iter().map(|x| mean_stderr(x)).collect()), Some(hi.iter().map(|x| mean_stderr(x)).collect()))
        }
    };
    let fit = |ys: &[f64]| {
        let (xs, ls): (Vec<f64>, Vec<f64>) = ks
            .iter()
            .zip(ys)
            .filter(|(_, &y)| y > 0.0)
            .map(|(&k, &y)| ((1.0 + k as f64).ln(), y.ln()))
            .unzip();
        linear_fit(&xs, &ls)
    };
    Ok(MixingaleProfile {
        ell,
        m_max,
        speed,
        lower_fit: fit(&lower),
        upper_fit: fit(&upper),
        k: ks,
        lower,
        upper,
        lower_ensemble,
        upper_ensemble,
    })
}

/// Quenched CLT ratios at one `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuenchedCltAlpha {
    pub alpha: Vec<f64>,
    pub target: f64,
    /// `S_n(alpha / sqrt n) / S_n(0)` per environment.
    pub ratios: Vec<Complex<f64>>,
    pub real_part: Spread,
    pub deviation: Spread,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuenchedClt {
    pub n: usize,
    pub alphas: Vec<QuenchedCltAlpha>,
}

impl QuenchedClt {
    /// Median deviation over environments, maximised over `alpha`.
    pub fn worst_median_deviation(&self) -> f64 {
        self.alphas.iter().map(|a| a.deviation.median).fold(0.0, f64::max)
    }
}

/// Ratio statistics `S_n^omega(alpha/sqrt n) / S_n^omega(0)` against
/// `exp(-Sigma alpha.alpha / 2)` over per-environment endpoint slices.
pub fn quenched_clt<T: Real>(slices: &[&EndpointSlice<T>], v: &[T], sigma: &[Vec<T>], alphas: &[Vec<T>]) -> QuenchedClt {
    let n = slices.first().map(|s| s.n).unwrap_or(0);
    let sq = T::from_usize(n.max(1)).unwrap().sqrt();
    let alphas = alphas
        .iter()
        .map(|a| {
            let theta: Vec<T> = a.iter().map(|&c| c / sq).collect();
            let mut q = T::zero();
            for i in 0..a.len() {
                for j in 0..a.len() {
                    q += a[i] * sigma[i][j] * a[j];
                }
            }
            let target = to_f64((-q / T::from_f64(2.0).unwrap()).exp());
            let ratios: Vec<Complex<f64>> = slices
                .iter()
                .map(|s| {
                    let z = s.normalized_char(&theta, v);
                    Complex::new(to_f64(z.re), to_f64(z.im))
                })
                .collect();
            let re: Vec<f64> = ratios.iter().map(|z| z.re).collect();
            let dev: Vec<f64> = ratios.iter().map(|z| (z - target).norm()).collect();
            QuenchedCltAlpha {
                alpha: a.iter().map(|&c| to_f64(c)).collect(),
                target,
                real_part: spread(&re),
                deviation: spread(&dev),
                ratios,
            }
        })
        .collect();
    QuenchedClt { n, alphas }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LlnTails {
    pub n: usize,
    pub eps: f64,
    /// `Q_n^omega(|X/n - v| > eps)` per environment.
    pub tails: Vec<f64>,
    pub spread: Spread,
    pub mean: f64,
}

/// Quenched tail mass outside the `eps`-ball around `n v`.
pub fn empirical_lln<T: Real>(slices: &[&EndpointSlice<T>], v: &[T], eps: T) -> LlnTails {
    let n = slices.first().map(|s| s.n).unwrap_or(0);
    let tails: Vec<f64> = slices.iter().map(|s| to_f64(s.tail_mass(v, eps))).collect();
    let mean = tails.iter().sum::<f64>() / tails.len().max(1) as f64;
    LlnTails { n, eps: to_f64(eps), spread: spread(&tails), mean, tails }
}
