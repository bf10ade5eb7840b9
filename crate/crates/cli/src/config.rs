use std::path::{Path, PathBuf};

use polylab::environment::PotentialLaw;
use polylab::polymer::ConeSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// `h` as written by the user: a scalar on the first axis or a full vector.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum HSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl std::str::FromStr for HSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match parts {
            Ok(v) if v.len() == 1 => Ok(HSpec::Scalar(v[0])),
            Ok(v) => Ok(HSpec::Vector(v)),
            Err(_) => Err(format!("cannot parse h from '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Keys accepted in a TOML config file. Everything is optional; flags on the
/// command line take precedence.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dims: Option<usize>,
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub h: Option<HSpec>,
    pub delta: Option<f64>,
    pub law: Option<String>,
    pub n: Option<usize>,
    pub n_env: Option<usize>,
    pub jobs: Option<usize>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }
}

/// Flags shared by all subcommands, as parsed.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct GlobalArgs {
    /// Lattice dimension D = d + 1.
    #[arg(long, global = true)]
    pub dims: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; standard output if absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for ensemble runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML file with defaults for these flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Drift: a scalar (on the first axis) or a comma-separated vector.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub h: Option<HSpec>,
    /// Cone aperture, in (0, 1/sqrt(D)).
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Potential law, e.g. bernoulli:p=0.1, det:v=1.0, exp:rate=1.0.
    #[arg(long, global = true)]
    pub law: Option<String>,
    /// Path length or enumeration cap.
    #[arg(long, global = true, visible_alias = "nmax")]
    pub n: Option<usize>,
    /// Ensemble size.
    #[arg(long = "n-env", global = true)]
    pub n_env: Option<usize>,
    /// Record the wall time in the result (makes the output non-reproducible).
    #[arg(long, global = true)]
    pub timing: bool,
    /// Also write the result table as whitespace-separated plot data.
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
}

/// The effective configuration, echoed into every result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub dims: usize,
    pub seed: u64,
    pub beta: f64,
    pub h: Vec<f64>,
    pub delta: f64,
    pub law: String,
    pub n: usize,
    pub n_env: usize,
    pub format: Format,
    pub jobs: usize,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub plot: Option<PathBuf>,
    #[serde(skip)]
    pub timing: bool,
    #[serde(skip)]
    pub law_parsed: PotentialLaw,
}

pub const DEFAULT_LAW: &str = "bernoulli:p=0.1";

impl Config {
    pub fn resolve(g: &GlobalArgs) -> Result<Config, CliError> {
        let file = match &g.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let dims = g.dims.or(file.dims).unwrap_or(2);
        let h = match g.h.clone().or(file.h).unwrap_or(HSpec::Scalar(1.0)) {
            HSpec::Scalar(t) => polylab::polymer::on_axis(dims, t),
            HSpec::Vector(v) => v,
        };
        let law_text = g.law.clone().or(file.law).unwrap_or_else(|| DEFAULT_LAW.into());
        let law_parsed: PotentialLaw =
            law_text.parse().map_err(|e: polylab::Error| CliError::Validation(format!("--law: {e}")))?;
        let cfg = Config {
            dims,
            seed: g.seed.or(file.seed).unwrap_or(0),
            beta: g.beta.or(file.beta).unwrap_or(1.0),
            h,
            delta: g.delta.or(file.delta).unwrap_or_else(|| ConeSpec::<f64>::default_delta(dims.max(1))),
            law: law_parsed.to_string(),
            n: g.n.or(file.n).unwrap_or(8),
            n_env: g.n_env.or(file.n_env).unwrap_or(20),
            format: g.format.or(file.format).unwrap_or(Format::Json),
            jobs: g.jobs.or(file.jobs).unwrap_or(1),
            out: g.out.clone().or(file.out),
            plot: g.plot.clone(),
            timing: g.timing,
            law_parsed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        polylab::lattice::check_dims(self.dims)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(CliError::Validation(format!("--beta must be finite and >= 0, got {}", self.beta)));
        }
        if self.h.len() != self.dims {
            return Err(CliError::Validation(format!(
                "--h has {} components but --dims is {}",
                self.h.len(),
                self.dims
            )));
        }
        if self.jobs == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        self.cone()?;
        Ok(())
    }

    pub fn cone(&self) -> Result<ConeSpec<f64>, CliError> {
        ConeSpec::new(self.h.clone(), self.delta).map_err(|e| match e {
            polylab::Error::Invalid(m) => CliError::Validation(format!("--delta/--h: {m}")),
            e => e.into(),
        })
    }
}
