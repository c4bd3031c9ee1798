//! Prediction quality metrics and the observation-fraction sweep.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{resample_uniform, DataError, TrajectoryDataset};
use crate::gmm::{predict, predict_flat, FlatGmm, GmmError, HierarchicalGmm, Observation, Prediction};
use crate::topology::{partial_h_signature_of_points, Point2, Trajectory};
use crate::vomp::VompModel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("weight index sets differ: {0}")]
    IndexMismatch(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Observation fractions used when none are configured.
pub const DEFAULT_FRACTIONS: [f64; 6] = [0.0125, 0.15, 0.42, 0.7, 0.975, 1.0];

/// Floor applied to a partial weight that is zero where the final weight is not.
pub const KLD_FLOOR: f64 = 1e-12;

fn check_length(truth: &[Point2], pred: &Prediction) -> Result<()> {
    if truth.len() != pred.timesteps {
        return Err(EvalError::InvalidParameter(format!(
            "truth has {} points, prediction {} timesteps",
            truth.len(),
            pred.timesteps
        )));
    }
    Ok(())
}

/// Mean Euclidean distance between the truth and the highest-weight term's mean.
pub fn ade(truth: &[Point2], pred: &Prediction) -> Result<f64> {
    check_length(truth, pred)?;
    let mean = &pred.best_term().mean;
    let total: f64 = truth
        .iter()
        .enumerate()
        .map(|(t, p)| ((p.x - mean[2 * t]).powi(2) + (p.y - mean[2 * t + 1]).powi(2)).sqrt())
        .sum();
    Ok(total / truth.len() as f64)
}

/// Weight-averaged squared Mahalanobis distance per timestep, using each
/// term's 2x2 marginal at every timestep.
pub fn amd(truth: &[Point2], pred: &Prediction) -> Result<f64> {
    check_length(truth, pred)?;
    let big_t = truth.len() as f64;
    let mut total = 0.0;
    for (t, p) in truth.iter().enumerate() {
        let x = Vector2::new(p.x, p.y);
        for (w, m, c) in pred.time_marginal(t + 1) {
            if w == 0.0 {
                continue;
            }
            let chol = c.cholesky().ok_or_else(|| {
                EvalError::NumericalFailure(format!("timestep {} block is not SPD", t + 1))
            })?;
            let d = x - m;
            total += w * d.dot(&chol.solve(&d)) / big_t;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kld {
    pub value: f64,
    /// Some partial weight was zero where the final weight was positive.
    pub floored: bool,
}

/// `sum w_final (ln w_final - ln w_partial)` with `0 ln 0 = 0`.
pub fn kld(final_weights: &[f64], partial_weights: &[f64]) -> Result<Kld> {
    if final_weights.len() != partial_weights.len() {
        return Err(EvalError::IndexMismatch(format!(
            "{} final vs {} partial weights",
            final_weights.len(),
            partial_weights.len()
        )));
    }
    let mut value = 0.0;
    let mut floored = false;
    for (&a, &b) in final_weights.iter().zip(partial_weights) {
        if a <= 0.0 {
            continue;
        }
        let b = if b <= 0.0 {
            floored = true;
            KLD_FLOOR
        } else {
            b
        };
        value += a * (a.ln() - b.ln());
    }
    Ok(Kld { value, floored })
}

/// `kld` on two predictions, after checking they cover the same terms.
pub fn prediction_kld(final_pred: &Prediction, partial: &Prediction) -> Result<Kld> {
    let same = final_pred.terms.len() == partial.terms.len()
        && final_pred
            .terms
            .iter()
            .zip(&partial.terms)
            .all(|(a, b)| a.class == b.class && a.component == b.component);
    if !same {
        return Err(EvalError::IndexMismatch("predictions come from different models".into()));
    }
    kld(&final_pred.weights(), &partial.weights())
}

/// Linear-interpolation quantile of sorted data, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Topology,
    Naive,
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Topology => "topology",
            System::Naive => "naive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Ade,
    Amd,
    Kld,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ade, Metric::Amd, Metric::Kld];
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ade => "ade",
            Metric::Amd => "amd",
            Metric::Kld => "kld",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub traj_id: u64,
    pub fraction: f64,
    pub system: System,
    pub ade: f64,
    pub amd: f64,
    pub kld: f64,
    pub kld_floored: bool,
}

impl MetricRow {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Ade => self.ade,
            Metric::Amd => self.amd,
            Metric::Kld => self.kld,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub fraction: f64,
    pub system: System,
    pub metric: Metric,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Median and quartiles per (fraction, system, metric), in that order.
pub fn aggregate(rows: &[MetricRow]) -> Vec<AggregateRow> {
    let mut fractions: Vec<f64> = rows.iter().map(|r| r.fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let mut out = Vec::new();
    for &f in &fractions {
        for system in [System::Topology, System::Naive] {
            let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.fraction == f && r.system == system).collect();
            if sel.is_empty() {
                continue;
            }
            for metric in Metric::ALL {
                let mut v: Vec<f64> = sel.iter().map(|r| r.metric(metric)).collect();
                v.sort_by(f64::total_cmp);
                out.push(AggregateRow {
                    fraction: f,
                    system,
                    metric,
                    median: quantile_sorted(&v, 0.5),
                    q25: quantile_sorted(&v, 0.25),
                    q75: quantile_sorted(&v, 0.75),
                });
            }
        }
    }
    out
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let aggregate = aggregate(&rows);
        Self { rows, aggregate }
    }

    pub fn find(&self, fraction: f64, system: System, metric: Metric) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|a| a.fraction == fraction && a.system == system && a.metric == metric)
    }

    pub fn write_rows_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "traj_id,fraction,system,ade,amd,kld")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{}", r.traj_id, r.fraction, r.system, r.ade, r.amd, r.kld)?;
        }
        Ok(())
    }

    pub fn write_aggregate_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "fraction,system,metric,median,q25,q75")?;
        for a in &self.aggregate {
            writeln!(w, "{},{},{},{},{},{}", a.fraction, a.system, a.metric, a.median, a.q25, a.q75)?;
        }
        Ok(())
    }

    /// Per-trajectory CSV, aggregate CSV and SVG plot into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut buf = Vec::new();
        self.write_rows_csv(&mut buf)?;
        std::fs::write(dir.join("report.csv"), &buf)?;
        buf.clear();
        self.write_aggregate_csv(&mut buf)?;
        std::fs::write(dir.join("aggregate.csv"), &buf)?;
        std::fs::write(dir.join("metrics.svg"), self.to_svg())?;
        Ok(())
    }

    /// Three panels (ADE, AMD, KLD) of median with quartile bars against
    /// observation fraction.
    pub fn to_svg(&self) -> String {
        const W: f64 = 300.0;
        const H: f64 = 240.0;
        const PAD: f64 = 40.0;
        let mut s = String::new();
        s.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
            3.0 * W,
            H + 20.0
        ));
        for (panel, metric) in Metric::ALL.into_iter().enumerate() {
            let x0 = panel as f64 * W;
            let sel: Vec<&AggregateRow> = self.aggregate.iter().filter(|a| a.metric == metric).collect();
            let ymax = sel.iter().map(|a| a.q75).fold(0.0_f64, f64::max).max(1e-12) * 1.05;
            let px = |f: f64| x0 + PAD + f * (W - 1.5 * PAD);
            let py = |v: f64| H - PAD + 10.0 - (v / ymax) * (H - 1.5 * PAD);
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"14\">{} (lower is better)</text>\n",
                x0 + PAD,
                metric.to_string().to_uppercase()
            ));
            s.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
                px(0.0),
                py(0.0),
                px(1.0),
                py(0.0)
            ));
            s.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
                px(0.0),
                py(0.0),
                px(0.0),
                py(ymax)
            ));
            s.push_str(&format!("<text x=\"{:.1}\" y=\"{:.1}\">{:.3}</text>\n", x0 + 2.0, py(ymax) + 4.0, ymax));
            s.push_str(&format!("<text x=\"{:.1}\" y=\"{:.1}\">fraction observed</text>\n", px(0.3), H + 8.0));
            for a in sel {
                let (colour, dx) = match a.system {
                    System::Topology => ("#1f77b4", -3.0),
                    System::Naive => ("#d62728", 3.0),
                };
                let x = px(a.fraction) + dx;
                s.push_str(&format!(
                    "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"{colour}\"/>\n",
                    py(a.q25),
                    py(a.q75)
                ));
                s.push_str(&format!(
                    "<circle cx=\"{x:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{colour}\"/>\n",
                    py(a.median)
                ));
            }
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#1f77b4\">topology</text><text x=\"{:.1}\" y=\"{:.1}\" fill=\"#d62728\">naive</text>\n",
            2.0 * W + PAD,
            30.0,
            2.0 * W + PAD + 60.0,
            30.0
        ));
        s.push_str("</svg>\n");
        s
    }
}

/// Number of leading timesteps observed at fraction `f` of `timesteps`.
pub fn observed_count(fraction: f64, timesteps: usize) -> usize {
    ((fraction * timesteps as f64 - 1e-9).ceil().max(0.0) as usize).min(timesteps)
}

/// The two predictors under comparison.
#[derive(Debug, Clone, Copy)]
pub struct Predictors<'a> {
    pub vomp: &'a VompModel,
    pub hierarchical: &'a HierarchicalGmm,
    pub baseline: &'a FlatGmm,
}

impl Predictors<'_> {
    pub fn timesteps(&self) -> usize {
        self.hierarchical.timesteps
    }

    /// Topology-informed prediction from the first `points.len()` timesteps.
    pub fn topology(&self, points: &[Point2], env: &crate::topology::Environment) -> Result<Prediction> {
        let p = partial_h_signature_of_points(points, env);
        let posterior = self.vomp.posterior(&p);
        Ok(predict(self.hierarchical, &Observation::prefix(points.to_vec()), &posterior)?)
    }

    pub fn naive(&self, points: &[Point2]) -> Result<Prediction> {
        Ok(predict_flat(self.baseline, &Observation::prefix(points.to_vec()))?)
    }
}

/// Evaluates both systems on every test trajectory at every fraction.
/// Observations are the noise-free resampled truth.
pub fn run_experiment(models: Predictors<'_>, test: &TrajectoryDataset, fractions: &[f64]) -> Result<MetricReport> {
    let timesteps = models.timesteps();
    if models.baseline.timesteps != timesteps {
        return Err(EvalError::InvalidParameter("baseline and hierarchical T differ".into()));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) || fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EvalError::InvalidParameter(format!("fractions must be ascending in (0, 1]: {fractions:?}")));
    }
    let env = &test.environment;
    let mut rows = Vec::with_capacity(test.len() * fractions.len() * 2);
    let mut floored = 0usize;
    for (id, traj) in test.ids.iter().zip(&test.trajectories) {
        let truth: Trajectory = resample_uniform(traj, timesteps)?;
        let pts = truth.points();
        let final_topo = models.topology(pts, env)?;
        let final_naive = models.naive(pts)?;
        for &f in fractions {
            let k = observed_count(f, timesteps);
            let obs = &pts[..k];
            for (system, final_pred) in [(System::Topology, &final_topo), (System::Naive, &final_naive)] {
                let pred = match system {
                    System::Topology => models.topology(obs, env)?,
                    System::Naive => models.naive(obs)?,
                };
                let d = prediction_kld(final_pred, &pred)?;
                floored += d.floored as usize;
                rows.push(MetricRow {
                    traj_id: *id,
                    fraction: f,
                    system,
                    ade: ade(pts, &pred)?,
                    amd: amd(pts, &pred)?,
                    kld: d.value,
                    kld_floored: d.floored,
                });
            }
        }
    }
    if floored > 0 {
        log::info!("{floored} KLD values used the zero-weight floor");
    }
    Ok(MetricReport::from_rows(rows))
}
