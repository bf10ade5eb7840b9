use std::path::PathBuf;

use polylab::environment::{ensemble_seed, sample_environment, Environment, SampledField};
use polylab::exactenum::{enumerate_basic, enumerate_q, renewal_residuals, Disorder, EnumLimits};
use polylab::harness::{empirical_lln, mixingale_profile, quenched_clt};
use polylab::poly::BasicPolys;
use polylab::renewal::{
    annealed_clt_check, renewal_mass, speed_and_diffusivity, IrreducibleLaw, RenewalModel,
};
use polylab::replica::{attractivity_suite, second_moment_profile};
use polylab::transfer::{cone_table, dp_ensemble, dp_quenched, mc_annealed, ConeWeights, DpMode, DpOptions};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Config;
use crate::output::Table;
use crate::CliError;

pub struct Outcome {
    pub data: Value,
    pub table: Table,
    pub seeds: Vec<u64>,
    /// Replaces the rendered result (used by gen-env).
    pub raw: Option<String>,
}

fn outcome(data: impl Serialize, table: Table, seeds: Vec<u64>) -> Result<Outcome, CliError> {
    let data = serde_json::to_value(data).map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(Outcome { data, table, seeds, raw: None })
}

fn ensemble_seeds(cfg: &Config, n_env: usize) -> Vec<u64> {
    (0..n_env as u64).map(|i| ensemble_seed(cfg.seed, i)).collect()
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| CliError::Validation(format!("{what}: cannot parse '{p}'"))))
        .collect()
}

fn load_env(path: &PathBuf) -> Result<Environment<f64>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Environment::read_polyenv(std::io::BufReader::new(f))?)
}

/// The irreducible law of the annealed model, enumerated to `horizon`.
fn annealed_law(cfg: &Config, horizon: usize) -> Result<IrreducibleLaw<f64>, CliError> {
    let cone = cfg.cone()?;
    let (_, f) = enumerate_basic(&Disorder::Annealed(cfg.law_parsed), &cone, cfg.beta, 0.0, horizon, &EnumLimits::default())?;
    Ok(IrreducibleLaw::from_irreducible(&f, horizon)?)
}

fn default_horizon(dims: usize) -> usize {
    EnumLimits::default().caps[dims].min(8)
}

// ---- gen-env

#[derive(Clone, Debug, clap::Args, Serialize)]
pub struct GenEnvArgs {
    /// Box radius (sites with sup-norm at most this).
    #[arg(long, default_value_t = 10)]
    pub radius: i32,
}

pub fn gen_env(cfg: &Config, a: &GenEnvArgs) -> Result<Outcome, CliError> {
    let env: Environment<f64> = sample_environment(&cfg.law_parsed, cfg.dims, a.radius, cfg.seed)?;
    let mut table = Table::new(&["radius", "trap_fraction", "origin_trap"]);
    table.push(vec![a.radius as f64, env.trap_fraction(), f64::from(u8::from(env.origin_is_trap()))]);
    let mut o = outcome(json!({ "trap_fraction": env.trap_fraction(), "origin_trap": env.origin_is_trap() }), table, vec![cfg.seed])?;
    o.raw = Some(env.to_polyenv_string());
    Ok(o)
}

// ---- enumerate

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TableChoice {
    /// Cone-confined and irreducible tables.
    Basic,
    /// Unrestricted partition functions.
    Full,
}

#[derive(Clone, Debug, clap::Args, Serialize)]
pub struct EnumerateArgs {
    #[arg(long, value_enum, default_value_t = TableChoice::Basic)]
    pub kind: TableChoice,
    /// Use the annealed weights instead of a sampled environment.
    #[arg(long)]
    pub annealed: bool,
    /// Read the environment from a POLYENV file instead of sampling it.
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Check the renewal identity at every length.
    #[arg(long)]
    pub verify_renewal: bool,
}

fn entries_json(t: &polylab::exactenum::WeightTable<f64>, dims: usize) -> Vec<Value> {
    t.iter().map(|(n, x, w)| json!({ "n": n, "x": x.coords(dims), "w": w })).collect()
}

pub fn enumerate(cfg: &Config, a: &EnumerateArgs) -> Result<Outcome, CliError> {
    let env = match (&a.env, a.annealed) {
        (Some(p), _) => Some(load_env(p)?),
        // anchored tables for the renewal check reach twice as far
        (None, false) => Some(sample_environment(&cfg.law_parsed, cfg.dims, 2 * cfg.n as i32 + 1, cfg.seed)?),
        (None, true) => None,
    };
    if let Some(e) = &env {
        if e.dims() != cfg.dims {
            return Err(CliError::Validation(format!("environment has dims {} but --dims is {}", e.dims(), cfg.dims)));
        }
    }
    let disorder = match &env {
        Some(e) => Disorder::quenched(e),
        None => Disorder::Annealed(cfg.law_parsed),
    };
    let limits = EnumLimits::default();
    let seeds: Vec<u64> = env.iter().map(|e| e.seed()).collect();
    match a.kind {
        TableChoice::Full => {
            let q = enumerate_q(&disorder, &cfg.h, cfg.beta, cfg.n, &limits)?;
            let mut table = Table::new(&["n", "q"]);
            for (n, m) in q.partition_functions().iter().enumerate() {
                table.push(vec![n as f64, *m]);
            }
            outcome(json!({ "partition_functions": q.partition_functions(), "entries": entries_json(&q, cfg.dims) }), table, seeds)
        }
        TableChoice::Basic => {
            let cone = cfg.cone()?;
            let (t, f) = enumerate_basic(&disorder, &cone, cfg.beta, a.lambda, cfg.n, &limits)?;
            let residuals = if a.verify_renewal {
                Some(renewal_residuals(&disorder, &cone, cfg.beta, a.lambda, cfg.n, &limits)?)
            } else {
                None
            };
            let (tm, fm) = (t.mass_by_length(), f.mass_by_length());
            let mut cols = vec!["n", "t_mass", "f_mass"];
            if residuals.is_some() {
                cols.push("residual");
            }
            let mut table = Table::new(&cols);
            for n in 1..=cfg.n {
                let mut row = vec![n as f64, tm.get(n).copied().unwrap_or(0.0), fm.get(n).copied().unwrap_or(0.0)];
                if let Some(r) = &residuals {
                    row.push(r[n - 1]);
                }
                table.push(row);
            }
            let max_residual = residuals.as_ref().map(|r| r.iter().copied().fold(0.0, f64::max));
            outcome(
                json!({
                    "t": entries_json(&t, cfg.dims),
                    "f": entries_json(&f, cfg.dims),
                    "t_mass": tm,
                    "f_mass": fm,
                    "renewal_residuals": residuals,
                    "max_residual": max_residual,
                }),
                table,
                seeds,
            )
        }
    }
}

// ---- dp

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    Linear,
    Log,
    Auto,
}

#[derive(Clone, Debug, clap::Args, Serialize)]
pub struct DpArgs {
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeChoice::Auto)]
    pub mode: ModeChoice,
}

pub fn dp(cfg: &Config, a: &DpArgs) -> Result<Outcome, CliError> {
    let mode = match a.mode {
        ModeChoice::Linear => DpMode::Linear,
        ModeChoice::Log => DpMode::Log,
        ModeChoice::Auto => DpMode::default(),
    };
    let opts = DpOptions { mode, ..Default::default() };
    let (run, seed) = match &a.env {
        Some(p) => {
            let env = load_env(p)?;
            (dp_quenched(&env, &cfg.h, cfg.beta, cfg.n, &opts)?, env.seed())
        }
        None => {
            let field = SampledField::new(cfg.law_parsed, cfg.dims, cfg.n as i32, cfg.seed)?;
            (dp_quenched(&field, &cfg.h, cfg.beta, cfg.n, &opts)?, cfg.seed)
        }
    };
    let mut table = Table::new(&["n", "log_q"]);
    for (k, l) in run.log_totals.iter().enumerate() {
        table.push(vec![k as f64, *l]);
    }
    let last = run.last();
    outcome(
        json!({ "log_totals": run.log_totals, "mean_endpoint": last.mean(), "log_leak_bound": run.log_leak_bound }),
        table,
        vec![seed],
    )
}

// ---- mc-annealed

pub fn mc(cfg: &Config) -> Result<Outcome, CliError> {
    let r = mc_annealed(&cfg.law_parsed, &cfg.h, cfg.beta, cfg.n, cfg.n_env, cfg.seed)?;
    let mut table = Table::new(&["n", "mean", "stderr"]);
    for k in 0..=cfg.n {
        table.push(vec![k as f64, r.estimate.mean[k], r.estimate.stderr[k]]);
    }
    outcome(json!({ "estimate": r.estimate }), table, ensemble_seeds(cfg, cfg.n_env))
}

// ---- renewal

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceChoice {
    /// Irreducible weights by enumeration (length at most the per-dimension cap).
    Irreducible,
    /// Cone weights by the lens recursion; needs a linear interaction.
    Cone,
}

#[derive(Clone, Debug, clap::Args, Serialize)]
pub struct RenewalArgs {
    #[arg(long, value_enum, default_value_t = SourceChoice::Irreducible)]
    pub source: SourceChoice,
    /// Lengths used to solve for lambda; defaults to --n.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Target pruning threshold for the cone source.
    #[arg(long, default_value_t = 1e-12)]
    pub prune: f64,
    /// Length of the renewal mass series; defaults to 4 n.
    #[arg(long)]
    pub mass_n: Option<usize>,
}

pub fn renewal(cfg: &Config, a: &RenewalArgs) -> Result<Outcome, CliError> {
    let horizon = a.horizon.unwrap_or(cfg.n);
    if horizon == 0 || horizon > cfg.n {
        return Err(CliError::Validation(format!("--horizon must lie in 1..={}", cfg.n)));
    }
    let law = match a.source {
        SourceChoice::Irreducible => annealed_law(cfg, cfg.n)?.truncated(horizon)?,
        SourceChoice::Cone => {
            let cone = cfg.cone()?;
            let run = cone_table(&ConeWeights::Markov(cfg.law_parsed), &cone, cfg.beta, cfg.n, a.prune)?;
            IrreducibleLaw::from_cone(&run.table, horizon)?
        }
    };
    let model: RenewalModel<f64> = speed_and_diffusivity(&law);
    let mass = renewal_mass(&law, a.mass_n.unwrap_or(4 * cfg.n));
    let mut table = Table::new(&["n", "t", "error"]);
    for (k, (t, e)) in mass.t.iter().zip(&mass.error).enumerate() {
        table.push(vec![k as f64, *t, *e]);
    }
    outcome(json!({ "model": model, "mass": mass }), table, vec![])
}

// ---- clt

#[derive(Clone, Debug, clap::Args, Serialize)]
pub struct CltArgs {
    /// Frequency vector, comma-separated; repeat for several.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Vec<String>,
    /// Lengths for the annealed check.
    #[arg(long, default_value = "10,20,40,80")]
    pub ns: String,
    /// Enumeration length for the irreducible law.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Quenched ensemble at length --n instead of the annealed series.
    #[arg(long)]
    pub quenched: bool,
}

fn alphas(cfg: &Config, raw: &[String]) -> Result<Vec<Vec<f64>>, CliError> {
    if raw.is_empty() {
        return Ok(vec![polylab::polymer::on_axis(cfg.dims, 1.0)]);
    }
    raw.iter()
        .map(|s| {
            let a: Vec<f64> = parse_list(s, "--alpha")?;
            if a.len() != cfg.dims {
                return Err(CliError::Validation(format!("--alpha '{s}' has {} components, expected {}", a.len(), cfg.dims)));
            }
            Ok(a)
        })
        .collect()
}

pub fn clt(cfg: &Config, a: &CltArgs) -> Result<Outcome, CliError> {
    let alphas = alphas(cfg, &a.alpha)?;
    let law = annealed_law(cfg, a.horizon.unwrap_or(default_horizon(cfg.dims)))?;
    let model = speed_and_diffusivity(&law);
    if a.quenched {
        let keep = vec![cfg.n];
        let runs = dp_ensemble(&cfg.law_parsed, &cfg.h, cfg.beta, cfg.n, cfg.n_env, cfg.seed, &DpOptions { keep, ..Default::default() })?;
        let slices: Vec<_> = runs.iter().map(|r| r.last()).collect();
        let q = quenched_clt(&slices, &model.v, &model.sigma, &alphas);
        let mut table = Table::new(&["alpha_index", "median_real", "median_deviation"]);
        for (i, r) in q.alphas.iter().enumerate() {
            table.push(vec![i as f64, r.real_part.median, r.deviation.median]);
        }
        return outcome(json!({ "model": model, "quenched": q }), table, ensemble_seeds(cfg, cfg.n_env));
    }
    let ns: Vec<usize> = parse_list(&a.ns, "--ns")?;
    let mut ns_sorted = ns.clone();
    ns_sorted.sort_unstable();
    ns_sorted.dedup();
    let res = annealed_clt_check(&law, &model, &alphas, &ns_sorted);
    let mut cols: Vec<String> = vec!["n".into()];
    cols.extend((0..alphas.len()).map(|i| format!("deviation_{i}")));
    let mut table = Table { columns: cols, rows: Vec::new() };
    for (j, n) in ns_sorted.iter().enumerate() {
        let mut row = vec![*n as f64];
        row.extend(res.iter().map(|r| r.points[j].deviation));
        table.push(row);
    }
    outcome(json!({ "model": model, "annealed": res }), table, vec![])
}

// ---- lln

#[derive(Clone, Debug, clap::Args, Serialize)]
pub struct LlnArgs {
    /// Lengths at which tails are measured; the largest is swept.
    #[arg(long, default_value = "8,16,32")]
    pub ns: String,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long)]
    pub horizon: Option<usize>,
}

pub fn lln(cfg: &Config, a: &LlnArgs) -> Result<Outcome, CliError> {
    let mut ns: Vec<usize> = parse_list(&a.ns, "--ns")?;
    ns.sort_unstable();
    ns.dedup();
    if !(a.eps > 0.0) {
        return Err(CliError::Validation("--eps must be positive".into()));
    }
    let n = *ns.last().ok_or_else(|| CliError::Validation("--ns is empty".into()))?;
    let law = annealed_law(cfg, a.horizon.unwrap_or(default_horizon(cfg.dims)))?;
    let model = speed_and_diffusivity(&law);
    let runs = dp_ensemble(&cfg.law_parsed, &cfg.h, cfg.beta, n, cfg.n_env, cfg.seed, &DpOptions { keep: ns.clone(), ..Default::default() })?;
    let mut table = Table::new(&["n", "mean_tail", "median_tail"]);
    let mut all = Vec::new();
    for &k in &ns {
        let slices: Vec<_> = runs.iter().filter_map(|r| r.slice(k)).collect();
        let t = empirical_lln(&slices, &model.v, a.eps);
        table.push(vec![k as f64, t.mean, t.spread.median]);
        all.push(t);
    }
    outcome(json!({ "v": model.v, "tails": all }), table, ensemble_seeds(cfg, cfg.n_env))
}

// ---- mixingale

#[derive(Clone, Debug, clap::Args, Serialize)]
pub struct MixingaleArgs {
    #[arg(long, default_value_t = 4)]
    pub ell: usize,
    #[arg(long, default_value_t = 2)]
    pub m_max: usize,
    #[arg(long, default_value_t = 12)]
    pub k_max: i64,
    /// Also estimate the profile from this many sampled environments.
    #[arg(long)]
    pub ensemble: bool,
    #[arg(long)]
    pub horizon: Option<usize>,
}

pub fn mixingale(cfg: &Config, a: &MixingaleArgs) -> Result<Outcome, CliError> {
    let law = annealed_law(cfg, a.horizon.unwrap_or(default_horizon(cfg.dims)))?;
    let model = speed_and_diffusivity(&law);
    let cone = cfg.cone()?;
    let polys = BasicPolys::new(&cone, cfg.law_parsed, cfg.beta, law.lambda(), a.ell.max(a.m_max))?;
    let ens = a.ensemble.then_some((cfg.n_env, cfg.seed));
    let p = mixingale_profile(&polys, model.v[0], a.ell, a.m_max, a.k_max, ens)?;
    let mut table = Table::new(&["k", "lower", "upper"]);
    for k in 0..p.lower.len() {
        table.push(vec![k as f64, p.lower[k], p.upper[k]]);
    }
    let seeds = if a.ensemble { ensemble_seeds(cfg, cfg.n_env) } else { vec![] };
    outcome(json!({ "lambda": law.lambda(), "profile": p }), table, seeds)
}

// ---- replica

#[derive(Clone, Debug, clap::Args, Serialize)]
pub struct ReplicaArgs {
    #[arg(long, default_value_t = 1000)]
    pub cases: usize,
    /// Longest random path in the pathwise checks.
    #[arg(long, default_value_t = 10)]
    pub path_len: usize,
    #[arg(long, default_value_t = 3)]
    pub ell_max: usize,
    #[arg(long, default_value_t = 5)]
    pub m_max: usize,
    /// Exact second moments of cone weights up to this length.
    #[arg(long, default_value_t = 0)]
    pub second_moments: usize,
    #[arg(long)]
    pub horizon: Option<usize>,
}

pub fn replica(cfg: &Config, a: &ReplicaArgs) -> Result<Outcome, CliError> {
    if a.path_len == 0 || a.ell_max == 0 || a.m_max == 0 {
        return Err(CliError::Validation("--path-len, --ell-max and --m-max must be positive".into()));
    }
    let law = annealed_law(cfg, a.horizon.unwrap_or(default_horizon(cfg.dims)))?;
    let model = speed_and_diffusivity(&law);
    let cone = cfg.cone()?;
    let n_max = a.ell_max.max(a.m_max).max(a.second_moments);
    let polys = BasicPolys::new(&cone, cfg.law_parsed, cfg.beta, law.lambda(), n_max)?;
    let suite = attractivity_suite(&polys, a.cases, a.path_len, a.ell_max, a.m_max, cfg.seed);
    let mut table = Table::new(&["ell", "second", "product"]);
    let moments = (a.second_moments > 0).then(|| second_moment_profile(&polys, &model.v, a.second_moments));
    if let Some(m) = &moments {
        for e in &m.entries {
            table.push(vec![e.ell as f64, e.second, e.product]);
        }
    }
    outcome(json!({ "suite": suite, "second_moments": moments }), table, vec![cfg.seed])
}

