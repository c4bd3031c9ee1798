//! Run configuration: defaults, then a TOML file, then `TOPOVOMP_*`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use topovomp::data::{crossroads_environment, toy_environment, CsvFormat, SyntheticConfig};
use topovomp::eval::DEFAULT_FRACTIONS;
use topovomp::gmm::{ComponentPolicy, EmConfig};
use topovomp::topology::Environment;
use topovomp::vomp::VompConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Components {
    Bic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Environment JSON file, or the preset name `toy` or `crossroads`.
    pub environment: String,
    pub source: Source,
    pub csv_dir: Option<PathBuf>,
    pub gap_threshold_s: f64,
    pub min_points: usize,
    /// Border-crossing tolerance in meters; unset means 1% of the boundary extent.
    pub boundary_tolerance: Option<f64>,
    pub num_trajs: usize,
    pub resolution: f64,
    pub noise_std: Option<f64>,
    pub obstacle_radius: f64,
    pub speed: f64,
    /// Dataset file; unset means `<output_dir>/dataset.jsonl`.
    pub dataset: Option<PathBuf>,
    pub train_fraction: f64,
    pub timesteps: usize,
    pub epsilon: f64,
    pub max_order: usize,
    pub sigma_y: f64,
    pub components: Components,
    /// Fixed count, or the largest count BIC considers.
    pub num_components: usize,
    /// Covariance ridge relative to the mean per-dimension data variance.
    pub reg_scale: f64,
    pub em_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub output_dir: PathBuf,
    /// CSV layout; kept last so the TOML table follows the plain keys.
    pub csv: CsvFormat,
}

impl Default for Config {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        let em = EmConfig::default();
        let vomp = VompConfig::default();
        Self {
            environment: "toy".into(),
            source: Source::Synthetic,
            csv_dir: None,
            gap_threshold_s: 5.0,
            min_points: 10,
            boundary_tolerance: None,
            num_trajs: syn.num_trajs,
            resolution: syn.resolution,
            noise_std: None,
            obstacle_radius: syn.obstacle_radius,
            speed: syn.speed,
            dataset: None,
            train_fraction: 0.8,
            timesteps: 80,
            epsilon: vomp.epsilon,
            max_order: vomp.max_order,
            sigma_y: 0.1,
            components: Components::Bic,
            num_components: 5,
            reg_scale: 1e-6,
            em_tol: em.tol,
            max_iter: em.max_iter,
            seed: 0,
            fractions: DEFAULT_FRACTIONS.to_vec(),
            output_dir: PathBuf::from("out"),
            csv: CsvFormat::default(),
        }
    }
}

/// Flags shared by every subcommand. Each also reads `TOPOVOMP_<NAME>`.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, short, env = "TOPOVOMP_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "TOPOVOMP_ENVIRONMENT")]
    pub environment: Option<String>,
    #[arg(long, env = "TOPOVOMP_SOURCE")]
    pub source: Option<Source>,
    #[arg(long, env = "TOPOVOMP_CSV_DIR")]
    pub csv_dir: Option<PathBuf>,
    #[arg(long, env = "TOPOVOMP_NUM_TRAJS")]
    pub num_trajs: Option<usize>,
    #[arg(long, env = "TOPOVOMP_RESOLUTION")]
    pub resolution: Option<f64>,
    #[arg(long, env = "TOPOVOMP_NOISE_STD")]
    pub noise_std: Option<f64>,
    #[arg(long, env = "TOPOVOMP_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long, env = "TOPOVOMP_TRAIN_FRACTION")]
    pub train_fraction: Option<f64>,
    #[arg(long, short = 'T', env = "TOPOVOMP_TIMESTEPS")]
    pub timesteps: Option<usize>,
    #[arg(long, env = "TOPOVOMP_EPSILON")]
    pub epsilon: Option<f64>,
    #[arg(long, short = 'L', env = "TOPOVOMP_MAX_ORDER")]
    pub max_order: Option<usize>,
    #[arg(long, env = "TOPOVOMP_SIGMA_Y")]
    pub sigma_y: Option<f64>,
    #[arg(long, env = "TOPOVOMP_COMPONENTS")]
    pub components: Option<Components>,
    #[arg(long, env = "TOPOVOMP_NUM_COMPONENTS")]
    pub num_components: Option<usize>,
    #[arg(long, env = "TOPOVOMP_REG_SCALE")]
    pub reg_scale: Option<f64>,
    #[arg(long, env = "TOPOVOMP_SEED")]
    pub seed: Option<u64>,
    /// Comma-separated observation fractions.
    #[arg(long, env = "TOPOVOMP_FRACTIONS", value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, short, env = "TOPOVOMP_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident, $($field:ident),*) => {
        $( if let Some(v) = $o.$field.clone() { $cfg.$field = v; } )*
    };
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                Self::from_toml_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => Self::default(),
        };
        apply!(
            cfg, o, environment, source, num_trajs, resolution, train_fraction, timesteps, epsilon, max_order,
            sigma_y, components, num_components, reg_scale, seed, fractions, output_dir
        );
        if o.csv_dir.is_some() {
            cfg.csv_dir = o.csv_dir.clone();
        }
        if o.noise_std.is_some() {
            cfg.noise_std = o.noise_std;
        }
        if o.dataset.is_some() {
            cfg.dataset = o.dataset.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            bail!("epsilon must be > 0, got {}", self.epsilon);
        }
        if self.max_order < 1 {
            bail!("max_order must be >= 1");
        }
        if self.timesteps < 2 {
            bail!("timesteps must be >= 2, got {}", self.timesteps);
        }
        if !(self.sigma_y >= 0.0) {
            bail!("sigma_y must be >= 0, got {}", self.sigma_y);
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction must be in (0, 1), got {}", self.train_fraction);
        }
        if self.num_components < 1 {
            bail!("num_components must be >= 1");
        }
        if !(self.reg_scale > 0.0) {
            bail!("reg_scale must be > 0, got {}", self.reg_scale);
        }
        if !(self.resolution > 0.0) {
            bail!("resolution must be > 0, got {}", self.resolution);
        }
        if self.fractions.is_empty()
            || self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0))
            || self.fractions.windows(2).any(|w| w[1] <= w[0])
        {
            bail!("fractions must be ascending in (0, 1], got {:?}", self.fractions);
        }
        if self.source == Source::Csv && self.csv_dir.is_none() {
            bail!("source = \"csv\" needs csv_dir");
        }
        Ok(())
    }

    pub fn load_environment(&self) -> Result<Environment> {
        Ok(match self.environment.as_str() {
            "toy" => toy_environment(),
            "crossroads" => crossroads_environment(),
            path => Environment::from_json_file(path).with_context(|| format!("loading environment {path}"))?,
        })
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.output_dir.join("dataset.jsonl"))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            resolution: self.resolution,
            num_trajs: self.num_trajs,
            seed: self.seed,
            noise_std: self.noise_std,
            obstacle_radius: self.obstacle_radius,
            speed: self.speed,
            ..SyntheticConfig::default()
        }
    }

    pub fn vomp(&self) -> VompConfig {
        VompConfig { epsilon: self.epsilon, max_order: self.max_order }
    }

    pub fn policy(&self) -> ComponentPolicy {
        match self.components {
            Components::Bic => ComponentPolicy::Bic { max_k: self.num_components },
            Components::Fixed => ComponentPolicy::Fixed(self.num_components),
        }
    }

    pub fn em(&self, reg: f64) -> EmConfig {
        EmConfig { reg, tol: self.em_tol, max_iter: self.max_iter, seed: self.seed }
    }

    #[cfg(test)]
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
