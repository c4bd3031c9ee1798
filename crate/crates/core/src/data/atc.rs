//! Ingestion of ATC-style pedestrian tracking logs.
//!
//! The published ATC layout has no header and starts each row with
//! `time [s], person id, x [mm], y [mm], ...`; that is the default format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::topology::{Point2, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub time: f64,
    pub person_id: i64,
    pub position: Point2,
}

/// A column addressed by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub time: ColumnRef,
    pub id: ColumnRef,
    pub x: ColumnRef,
    pub y: ColumnRef,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            time: ColumnRef::Index(0),
            id: ColumnRef::Index(1),
            x: ColumnRef::Index(2),
            y: ColumnRef::Index(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvFormat {
    pub columns: ColumnMap,
    pub has_header: bool,
    /// Multiplier from file units to meters (millimeters: 0.001).
    pub unit_scale: f64,
    pub delimiter: u8,
}

impl Default for CsvFormat {
    fn default() -> Self {
        Self { columns: ColumnMap::default(), has_header: false, unit_scale: 0.001, delimiter: b',' }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedCsv {
    pub records: Vec<RawRecord>,
    /// Rows dropped because a field was missing or not numeric.
    pub skipped: usize,
}

fn resolve(col: &ColumnRef, header: Option<&csv::StringRecord>) -> Result<usize> {
    match col {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|f| f.trim() == name))
            .ok_or_else(|| DataError::MissingColumn(name.clone())),
    }
}

pub fn parse_trajectory_csv(path: impl AsRef<Path>, format: &CsvFormat) -> Result<ParsedCsv> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_trajectory_reader(file, format)
}

pub fn parse_trajectory_reader(reader: impl std::io::Read, format: &CsvFormat) -> Result<ParsedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(format.has_header)
        .delimiter(format.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = if format.has_header { Some(rdr.headers()?.clone()) } else { None };
    let cols = [
        resolve(&format.columns.time, header.as_ref())?,
        resolve(&format.columns.id, header.as_ref())?,
        resolve(&format.columns.x, header.as_ref())?,
        resolve(&format.columns.y, header.as_ref())?,
    ];
    let mut out = ParsedCsv::default();
    let mut rows = 0usize;
    for row in rdr.records() {
        rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                out.skipped += 1;
                continue;
            }
        };
        let field = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        let id = row.get(cols[1]).and_then(|s| s.parse::<i64>().ok());
        match (field(cols[0]), id, field(cols[2]), field(cols[3])) {
            (Some(time), Some(person_id), Some(x), Some(y)) => out.records.push(RawRecord {
                time,
                person_id,
                position: Point2::new(x * format.unit_scale, y * format.unit_scale),
            }),
            _ => out.skipped += 1,
        }
    }
    if rows == 0 {
        return Err(DataError::EmptyFile);
    }
    Ok(out)
}

/// Groups records by person, orders them by time and splits each track where
/// consecutive samples are more than `gap_threshold_s` apart. Pieces shorter
/// than `min_points` are dropped; repeated timestamps keep the first sample.
pub fn assemble_trajectories(
    records: &[RawRecord],
    gap_threshold_s: f64,
    min_points: usize,
) -> Vec<Trajectory> {
    let mut by_id: BTreeMap<i64, Vec<RawRecord>> = BTreeMap::new();
    for r in records {
        by_id.entry(r.person_id).or_default().push(*r);
    }
    let min_points = min_points.max(2);
    let mut out = Vec::new();
    for (_, mut recs) in by_id {
        recs.sort_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then(a.position.x.total_cmp(&b.position.x))
                .then(a.position.y.total_cmp(&b.position.y))
        });
        recs.dedup_by(|b, a| b.time == a.time);
        let mut start = 0;
        for i in 1..=recs.len() {
            if i == recs.len() || recs[i].time - recs[i - 1].time > gap_threshold_s {
                let piece = &recs[start..i];
                if piece.len() >= min_points {
                    let traj = Trajectory::new(
                        piece.iter().map(|r| r.position).collect(),
                        piece.iter().map(|r| r.time).collect(),
                    )
                    .expect("sorted, deduplicated, finite");
                    out.push(traj);
                }
                start = i;
            }
        }
    }
    out
}
