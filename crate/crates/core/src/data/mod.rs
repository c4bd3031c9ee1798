//! Trajectory datasets: ingestion, cleaning, resampling, synthetic generation
//! and the JSON-lines cache format.

pub mod atc;
pub mod grid;
pub mod synthetic;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{h_signature_with, Environment, Point2, TopologyError, Trajectory, Word};

pub use atc::{assemble_trajectories, parse_trajectory_csv, ColumnMap, ColumnRef, CsvFormat, RawRecord};
pub use grid::{GridGraph, ObstacleShape};
pub use synthetic::{crossroads_environment, generate_synthetic, toy_environment, SyntheticConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("file has no data rows")]
    EmptyFile,
    #[error("no path between sampled endpoints after {0} attempts")]
    Disconnected(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {msg}")]
    BadLine { line: usize, msg: String },
    #[error("label mismatch for trajectory {id}: stored {stored}, recomputed {recomputed}")]
    LabelMismatch { id: u64, stored: Word, recomputed: Word },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Labelled trajectories in one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub environment: Environment,
    pub ids: Vec<u64>,
    pub trajectories: Vec<Trajectory>,
    pub labels: Vec<Word>,
}

/// One line of the JSON-lines cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub id: u64,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Word>,
}

impl TrajectoryLine {
    pub fn from_trajectory(id: u64, traj: &Trajectory, h: Option<Word>) -> Self {
        Self {
            id,
            t: traj.timestamps().to_vec(),
            x: traj.points().iter().map(|p| p.x).collect(),
            y: traj.points().iter().map(|p| p.y).collect(),
            h,
        }
    }

    pub fn points(&self) -> Vec<Point2> {
        self.x.iter().zip(&self.y).map(|(&x, &y)| Point2::new(x, y)).collect()
    }

    pub fn trajectory(&self) -> std::result::Result<Trajectory, TopologyError> {
        if self.x.len() != self.y.len() {
            return Err(TopologyError::LengthMismatch { points: self.x.len(), times: self.y.len() });
        }
        Trajectory::new(self.points(), self.t.clone())
    }
}

impl TrajectoryDataset {
    /// Labels every trajectory with its h-signature. With a tolerance, the
    /// endpoints must lie on the boundary.
    pub fn labelled(
        environment: Environment,
        trajectories: Vec<Trajectory>,
        boundary_tolerance: Option<f64>,
    ) -> Result<Self> {
        let labels = trajectories
            .iter()
            .map(|t| h_signature_with(t, &environment, boundary_tolerance))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let ids = (0..trajectories.len() as u64).collect();
        Ok(Self { environment, ids, trajectories, labels })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Number of trajectories per label.
    pub fn class_counts(&self) -> BTreeMap<Word, usize> {
        let mut m = BTreeMap::new();
        for h in &self.labels {
            *m.entry(h.clone()).or_insert(0) += 1;
        }
        m
    }

    /// Recomputes every label (no boundary check) and reports the first
    /// disagreement.
    pub fn validate_labels(&self) -> Result<()> {
        for ((id, t), h) in self.ids.iter().zip(&self.trajectories).zip(&self.labels) {
            let recomputed = h_signature_with(t, &self.environment, None)?;
            if &recomputed != h {
                return Err(DataError::LabelMismatch { id: *id, stored: h.clone(), recomputed });
            }
        }
        Ok(())
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            environment: self.environment.clone(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            trajectories: idx.iter().map(|&i| self.trajectories[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for ((id, t), h) in self.ids.iter().zip(&self.trajectories).zip(&self.labels) {
            serde_json::to_writer(&mut w, &TrajectoryLine::from_trajectory(*id, t, Some(h.clone())))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Reads a JSON-lines cache. Lines without an `h` field are labelled on
    /// load.
    pub fn read_jsonl(environment: Environment, r: impl BufRead) -> Result<Self> {
        let mut ds = Self { environment, ids: vec![], trajectories: vec![], labels: vec![] };
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrajectoryLine = serde_json::from_str(&line)
                .map_err(|e| DataError::BadLine { line: i + 1, msg: e.to_string() })?;
            let traj = rec
                .trajectory()
                .map_err(|e| DataError::BadLine { line: i + 1, msg: e.to_string() })?;
            let h = match rec.h {
                Some(h) => h,
                None => h_signature_with(&traj, &ds.environment, None)?,
            };
            ds.ids.push(rec.id);
            ds.trajectories.push(traj);
            ds.labels.push(h);
        }
        Ok(ds)
    }

    pub fn load_jsonl(environment: Environment, path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_jsonl(environment, f)
    }
}

/// Keeps trajectories that start and end within `tolerance` of the boundary
/// and never leave the boundary (expanded by `tolerance`).
pub fn filter_border_crossing(trajs: &[Trajectory], env: &Environment, tolerance: f64) -> Vec<Trajectory> {
    let area = env.boundary().expanded(tolerance);
    trajs
        .iter()
        .filter(|t| {
            env.on_boundary(&t.first(), tolerance)
                && env.on_boundary(&t.last(), tolerance)
                && t.points().iter().all(|p| area.contains(p))
        })
        .cloned()
        .collect()
}

/// Linear interpolation at `timesteps` evenly spaced times over the
/// trajectory's span. Endpoints are copied exactly.
pub fn resample_uniform(traj: &Trajectory, timesteps: usize) -> Result<Trajectory> {
    if timesteps < 2 {
        return Err(DataError::InvalidParameter(format!("timesteps must be >= 2, got {timesteps}")));
    }
    let (pts, ts) = (traj.points(), traj.timestamps());
    let t0 = ts[0];
    let t1 = ts[ts.len() - 1];
    let mut out_p = Vec::with_capacity(timesteps);
    let mut out_t = Vec::with_capacity(timesteps);
    let mut seg = 0;
    for k in 0..timesteps {
        let (t, p) = if k == 0 {
            (t0, pts[0])
        } else if k + 1 == timesteps {
            (t1, pts[pts.len() - 1])
        } else {
            let t = t0 + (t1 - t0) * k as f64 / (timesteps - 1) as f64;
            while seg + 2 < ts.len() && ts[seg + 1] < t {
                seg += 1;
            }
            let s = ((t - ts[seg]) / (ts[seg + 1] - ts[seg])).clamp(0.0, 1.0);
            (t, pts[seg].lerp(&pts[seg + 1], s))
        };
        out_p.push(p);
        out_t.push(t);
    }
    Ok(Trajectory::new(out_p, out_t)?)
}

/// Seeded shuffle split. The training part gets `round(fraction * n)` items.
pub fn split_dataset(
    ds: &TrajectoryDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidParameter(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * ds.len() as f64).round() as usize).min(ds.len());
    Ok((ds.subset(&idx[..n_train]), ds.subset(&idx[n_train..])))
}
