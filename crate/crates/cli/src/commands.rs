use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topovomp::data::{
    assemble_trajectories, filter_border_crossing, generate_synthetic, parse_trajectory_csv, resample_uniform,
    split_dataset, TrajectoryDataset,
};
use topovomp::eval::{run_experiment, Predictors};
use topovomp::gmm::{
    default_reg, fit_hierarchical, flatten_points, predict, predict_flat, FlatGmm, HierarchicalGmm, Observation,
    Prediction,
};
use topovomp::topology::{partial_h_signature_of_points, Environment, Point2, Word};
use topovomp::vomp::VompModel;

use crate::config::{ensure_dir, Config, Source};

#[derive(Debug, Serialize)]
struct FileDigest {
    bytes: u64,
    sha256: String,
}

/// Record of one command run: its full configuration, summary facts and
/// the digests of everything it wrote.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a Config,
    summary: BTreeMap<String, serde_json::Value>,
    outputs: BTreeMap<String, FileDigest>,
}

struct Outputs {
    dir: PathBuf,
    written: BTreeMap<String, FileDigest>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        ensure_dir(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: BTreeMap::new() })
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let key = path.strip_prefix(&self.dir).unwrap_or(path).display().to_string();
        let digest = FileDigest { bytes: bytes.len() as u64, sha256: hex_digest(bytes) };
        self.written.insert(key, digest);
        Ok(())
    }

    fn write_named(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        self.write(&path, bytes)
    }

    fn finish(self, command: &str, cfg: &Config, summary: BTreeMap<String, serde_json::Value>) -> Result<()> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            summary,
            outputs: self.written,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.dir.join(format!("{command}_manifest.json"));
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn class_counts_json(ds: &TrajectoryDataset) -> serde_json::Value {
    let m: BTreeMap<String, usize> = ds.class_counts().into_iter().map(|(h, n)| (h.to_string(), n)).collect();
    serde_json::to_value(m).expect("plain map")
}

fn dataset_bytes(ds: &TrajectoryDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf)?;
    Ok(buf)
}

fn load_csv_dataset(cfg: &Config, env: Environment) -> Result<(TrajectoryDataset, usize)> {
    let dir = cfg.csv_dir.as_ref().expect("validated");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .csv files in {}", dir.display());
    }
    let tolerance = cfg.boundary_tolerance.unwrap_or_else(|| env.default_boundary_tolerance());
    let mut kept = Vec::new();
    let mut skipped = 0;
    let mut assembled = 0;
    for f in &files {
        let parsed = parse_trajectory_csv(f, &cfg.csv).with_context(|| format!("parsing {}", f.display()))?;
        skipped += parsed.skipped;
        let trajs = assemble_trajectories(&parsed.records, cfg.gap_threshold_s, cfg.min_points);
        assembled += trajs.len();
        kept.extend(filter_border_crossing(&trajs, &env, tolerance));
    }
    log::info!("{} files, {assembled} trajectories, {} cross the border, {skipped} rows skipped", files.len(), kept.len());
    Ok((TrajectoryDataset::labelled(env, kept, None)?, skipped))
}

pub fn generate(cfg: &Config) -> Result<()> {
    let env = cfg.load_environment()?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let mut summary = BTreeMap::new();
    let ds = match cfg.source {
        Source::Synthetic => {
            if cfg.num_trajs == 0 {
                log::warn!("num_trajs = 0; writing an empty dataset");
            }
            generate_synthetic(&env, &cfg.synthetic())?
        }
        Source::Csv => {
            let (ds, skipped) = load_csv_dataset(cfg, env.clone())?;
            summary.insert("skipped_rows".into(), skipped.into());
            ds
        }
    };
    out.write(&cfg.dataset_path(), &dataset_bytes(&ds)?)?;
    out.write_named("environment.json", env.to_json_string().as_bytes())?;
    summary.insert("trajectories".into(), ds.len().into());
    summary.insert("class_counts".into(), class_counts_json(&ds));
    out.finish("generate", cfg, summary)?;
    println!("wrote {} trajectories to {}", ds.len(), cfg.dataset_path().display());
    Ok(())
}

fn resampled(ds: &TrajectoryDataset, timesteps: usize) -> Result<Vec<nalgebra::DVector<f64>>> {
    ds.trajectories
        .iter()
        .map(|t| Ok(flatten_points(resample_uniform(t, timesteps)?.points())))
        .collect()
}

pub fn train(cfg: &Config) -> Result<()> {
    let env = cfg.load_environment()?;
    let path = cfg.dataset_path();
    let ds = TrajectoryDataset::load_jsonl(env, &path).with_context(|| format!("loading {}", path.display()))?;
    ds.validate_labels()?;
    let (train, test) = split_dataset(&ds, cfg.train_fraction, cfg.seed)?;
    let vomp = VompModel::train(&train.labels, train.environment.num_obstacles(), &cfg.vomp())?;

    let data = resampled(&train, cfg.timesteps)?;
    let mut by_class: BTreeMap<Word, Vec<_>> = BTreeMap::new();
    for (x, h) in data.iter().zip(&train.labels) {
        by_class.entry(h.clone()).or_default().push(x.clone());
    }
    let reg = default_reg(&data, cfg.reg_scale);
    let em = cfg.em(reg);
    let hgmm = fit_hierarchical(&by_class, cfg.timesteps, cfg.sigma_y, cfg.policy(), &em)?;
    let baseline = FlatGmm::fit(&data, cfg.timesteps, cfg.sigma_y, hgmm.total_components(), &em)?;

    let mut out = Outputs::new(&cfg.output_dir)?;
    out.write_named("psa.json", vomp.to_json_string().as_bytes())?;
    out.write_named("hgmm.json", hgmm.to_json_string().as_bytes())?;
    out.write_named("baseline.json", baseline.to_json_string().as_bytes())?;
    out.write_named("test.jsonl", &dataset_bytes(&test)?)?;

    let components: BTreeMap<String, usize> =
        hgmm.per_class.iter().map(|(h, g)| (h.to_string(), g.num_components())).collect();
    let mut summary = BTreeMap::new();
    summary.insert("epsilon".into(), cfg.epsilon.into());
    summary.insert("max_order".into(), cfg.max_order.into());
    summary.insert("seed".into(), cfg.seed.into());
    summary.insert("train_size".into(), train.len().into());
    summary.insert("test_size".into(), test.len().into());
    summary.insert("class_counts".into(), class_counts_json(&train));
    summary.insert("components_per_class".into(), serde_json::to_value(components)?);
    summary.insert("baseline_components".into(), baseline.gmm.num_components().into());
    summary.insert("psa_states".into(), vomp.psa.states().len().into());
    summary.insert("reg".into(), reg.into());
    out.finish("train", cfg, summary)?;
    println!(
        "trained on {} trajectories: {} classes, {} components",
        train.len(),
        hgmm.per_class.len(),
        hgmm.total_components()
    );
    Ok(())
}

struct Models {
    vomp: VompModel,
    hgmm: HierarchicalGmm,
    baseline: FlatGmm,
}

fn load_models(cfg: &Config) -> Result<Models> {
    let load = |name: &str| -> Result<String> {
        let p = cfg.out(name);
        std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    };
    let vomp = VompModel::from_json_str(&load("psa.json")?)?;
    let hgmm = HierarchicalGmm::from_json_str(&load("hgmm.json")?)?;
    let baseline = FlatGmm::from_json_str(&load("baseline.json")?)?;
    if hgmm.timesteps != cfg.timesteps || baseline.timesteps != cfg.timesteps {
        bail!(
            "models were trained with T = {} (baseline {}), configuration says T = {}",
            hgmm.timesteps,
            baseline.timesteps,
            cfg.timesteps
        );
    }
    Ok(Models { vomp, hgmm, baseline })
}

pub fn eval(cfg: &Config) -> Result<()> {
    let env = cfg.load_environment()?;
    let models = load_models(cfg)?;
    let test_path = cfg.out("test.jsonl");
    let test = TrajectoryDataset::load_jsonl(env, &test_path)
        .with_context(|| format!("loading {}", test_path.display()))?;
    let predictors = Predictors { vomp: &models.vomp, hierarchical: &models.hgmm, baseline: &models.baseline };
    let report = run_experiment(predictors, &test, &cfg.fractions)?;

    let mut out = Outputs::new(&cfg.output_dir)?;
    let mut buf = Vec::new();
    report.write_rows_csv(&mut buf)?;
    out.write_named("report.csv", &buf)?;
    buf.clear();
    report.write_aggregate_csv(&mut buf)?;
    out.write_named("aggregate.csv", &buf)?;
    out.write_named("metrics.svg", report.to_svg().as_bytes())?;
    let mut summary = BTreeMap::new();
    summary.insert("test_size".into(), test.len().into());
    summary.insert("rows".into(), report.rows.len().into());
    summary.insert("kld_floored".into(), report.rows.iter().filter(|r| r.kld_floored).count().into());
    out.finish("eval", cfg, summary)?;
    println!("evaluated {} trajectories at {} fractions", test.len(), cfg.fractions.len());
    Ok(())
}

/// Observed prefix positions, either `{"x": [...], "y": [...]}` or `[[x, y], ...]`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PrefixFile {
    Columns { x: Vec<f64>, y: Vec<f64> },
    Pairs(Vec<[f64; 2]>),
}

impl PrefixFile {
    fn points(self) -> Result<Vec<Point2>> {
        let pts: Vec<Point2> = match self {
            PrefixFile::Columns { x, y } => {
                if x.len() != y.len() {
                    bail!("prefix has {} x values and {} y values", x.len(), y.len());
                }
                x.into_iter().zip(y).map(|(x, y)| Point2::new(x, y)).collect()
            }
            PrefixFile::Pairs(p) => p.into_iter().map(|[x, y]| Point2::new(x, y)).collect(),
        };
        if pts.iter().any(|p| !p.is_finite()) {
            bail!("prefix contains non-finite coordinates");
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum System {
    Topology,
    Naive,
}

#[derive(Debug, Serialize)]
struct ClassProb {
    h: Word,
    p: f64,
}

#[derive(Debug, Serialize)]
struct TermOut {
    class: Option<Word>,
    component: usize,
    weight: f64,
    /// Conditional mean per timestep.
    mean: Vec<[f64; 2]>,
    /// Conditional 2x2 covariance per timestep, row-major.
    covariance: Vec<[f64; 4]>,
}

#[derive(Debug, Serialize)]
struct PredictionOut {
    system: &'static str,
    timesteps: usize,
    observed: usize,
    partial_signature: Option<Word>,
    class_posterior: Vec<ClassProb>,
    posterior_fallback: bool,
    weight_fallback: bool,
    terms: Vec<TermOut>,
}

fn terms_out(pred: &Prediction) -> Vec<TermOut> {
    pred.terms
        .iter()
        .map(|t| {
            let n = pred.timesteps;
            TermOut {
                class: t.class.clone(),
                component: t.component,
                weight: t.weight,
                mean: (0..n).map(|i| [t.mean[2 * i], t.mean[2 * i + 1]]).collect(),
                covariance: (0..n)
                    .map(|i| {
                        let c = &t.covariance;
                        [c[(2 * i, 2 * i)], c[(2 * i, 2 * i + 1)], c[(2 * i + 1, 2 * i)], c[(2 * i + 1, 2 * i + 1)]]
                    })
                    .collect(),
            }
        })
        .collect()
}

pub fn predict_cmd(cfg: &Config, prefix: &Path, output: Option<&Path>, system: System) -> Result<()> {
    let env = cfg.load_environment()?;
    let models = load_models(cfg)?;
    let text = std::fs::read_to_string(prefix).with_context(|| format!("reading {}", prefix.display()))?;
    let file: PrefixFile =
        serde_json::from_str(&text).with_context(|| format!("parsing prefix {}", prefix.display()))?;
    let points = file.points()?;
    if points.len() > cfg.timesteps {
        bail!("prefix has {} points but the model covers only T = {} timesteps", points.len(), cfg.timesteps);
    }
    let observed = points.len();
    let out = match system {
        System::Topology => {
            let p = partial_h_signature_of_points(&points, &env);
            let posterior = models.vomp.posterior(&p);
            let pred = predict(&models.hgmm, &Observation::prefix(points), &posterior)?;
            PredictionOut {
                system: "topology",
                timesteps: pred.timesteps,
                observed,
                partial_signature: Some(p),
                class_posterior: posterior.probs.iter().map(|(h, &p)| ClassProb { h: h.clone(), p }).collect(),
                posterior_fallback: posterior.fallback,
                weight_fallback: pred.fallback,
                terms: terms_out(&pred),
            }
        }
        System::Naive => {
            let pred = predict_flat(&models.baseline, &Observation::prefix(points))?;
            PredictionOut {
                system: "naive",
                timesteps: pred.timesteps,
                observed,
                partial_signature: None,
                class_posterior: Vec::new(),
                posterior_fallback: false,
                weight_fallback: pred.fallback,
                terms: terms_out(&pred),
            }
        }
    };
    let text = serde_json::to_string_pretty(&out)? + "\n";
    match output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
