//! CSV artifacts and JSON sidecars.
//!
//! Every CSV starts with a schema line `# kdmhe-<kind> v<version>` followed by
//! a header row. Floats are written in the shortest form that round-trips,
//! so identical runs produce identical files. Run metadata (seed, config
//! hash, software version) lives in a `<file>.meta.json` sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dmhe::{GlobalEstimate, SolveRecord};
use crate::error::{Error, Result};
use crate::predict::Prediction;
use crate::simulate::Trajectory;

pub const SCHEMA_VERSION: u32 = 1;
pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

fn schema_line(kind: &str) -> String {
    format!("# kdmhe-{kind} v{SCHEMA_VERSION}")
}

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// Columns whose names start with `prefix`, as a matrix.
    pub fn columns_with_prefix(&self, prefix: &str) -> DMatrix<f64> {
        let idx: Vec<usize> = self
            .header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix) && h[prefix.len()..].parse::<usize>().is_ok())
            .map(|(c, _)| c)
            .collect();
        DMatrix::from_fn(self.rows.len(), idx.len(), |r, c| self.rows[r][idx[c]])
    }
}

/// Writes a table with its schema line.
pub fn write_table(path: impl AsRef<Path>, kind: &str, table: &Table) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", schema_line(kind))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        if row.len() != table.header.len() {
            return Err(Error::dim(
                format!("{kind} row"),
                table.header.len(),
                row.len(),
            ));
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_table`], checking kind and version.
pub fn read_table(path: impl AsRef<Path>, kind: &str) -> Result<Table> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let expected = schema_line(kind);
    if first.trim_end() != expected {
        return Err(Error::Config(format!(
            "{}: expected schema '{expected}', found '{}'",
            path.display(),
            first.trim_end()
        )));
    }
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| {
                    Error::Config(format!("{}: row {}: '{f}': {e}", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Writes serializable records with a schema line.
pub fn write_records<T: Serialize>(
    path: impl AsRef<Path>,
    kind: &str,
    records: &[T],
) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", schema_line(kind))?;
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records written by [`write_records`].
pub fn read_records<T: for<'de> Deserialize<'de>>(
    path: impl AsRef<Path>,
    kind: &str,
) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != schema_line(kind) {
        return Err(Error::Config(format!(
            "{}: not a {kind} file",
            path.display()
        )));
    }
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()?)
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// Sidecar metadata of one artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: String,
    pub schema_version: u32,
    pub software_version: String,
    pub seed: u64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensor_states: Vec<usize>,
}

impl Metadata {
    pub fn new(kind: &str, seed: u64, config_hash: impl Into<String>) -> Self {
        Metadata {
            kind: kind.into(),
            schema_version: SCHEMA_VERSION,
            software_version: SOFTWARE_VERSION.into(),
            seed,
            config_hash: config_hash.into(),
            sensor_states: Vec::new(),
        }
    }
}

pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    let mut s = path.as_ref().as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_metadata(path: impl AsRef<Path>, meta: &Metadata) -> Result<()> {
    write_json(sidecar_path(path), meta)
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<Metadata> {
    read_json(sidecar_path(path))
}

/// Writes `t, x.., u.., y..` per sample plus the sidecar.
pub fn write_trajectory(
    path: impl AsRef<Path>,
    traj: &Trajectory,
    config_hash: &str,
) -> Result<()> {
    let path = path.as_ref();
    let header = std::iter::once("t".to_string())
        .chain(names("x", traj.n_x()))
        .chain(names("u", traj.n_u()))
        .chain(names("y", traj.n_y()))
        .collect();
    let rows = (0..traj.len())
        .map(|k| {
            std::iter::once(traj.time[k])
                .chain(traj.states.row(k).iter().copied())
                .chain(traj.inputs.row(k).iter().copied())
                .chain(traj.measurements.row(k).iter().copied())
                .collect()
        })
        .collect();
    write_table(path, "trajectory", &Table { header, rows })?;
    let mut meta = Metadata::new("trajectory", traj.seed, config_hash);
    meta.sensor_states = traj.sensor_states.clone();
    write_metadata(path, &meta)
}

/// Reads a trajectory and its sidecar.
///
/// Measurement noise is recovered as `y - x[sensor]`; process noise is not
/// stored and comes back as zeros.
pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let table = read_table(path, "trajectory")?;
    let meta = read_metadata(path)?;
    let time = table
        .column("t")
        .ok_or_else(|| Error::Config(format!("{}: missing column 't'", path.display())))?;
    let states = table.columns_with_prefix("x");
    let inputs = table.columns_with_prefix("u");
    let measurements = table.columns_with_prefix("y");
    if measurements.ncols() != meta.sensor_states.len() {
        return Err(Error::dim(
            "trajectory measurements",
            meta.sensor_states.len(),
            measurements.ncols(),
        ));
    }
    if let Some(&g) = meta.sensor_states.iter().find(|&&g| g >= states.ncols()) {
        return Err(Error::Config(format!(
            "{}: sensor on missing state {g}",
            path.display()
        )));
    }
    let mut traj = Trajectory::new(time, states, inputs, meta.sensor_states, meta.seed);
    traj.measurement_noise = &measurements - &traj.measurements;
    traj.measurements = measurements;
    Ok(traj)
}

/// Writes an open-loop prediction: `t, xhat.., shat..` (unscaled and scaled).
pub fn write_prediction(
    path: impl AsRef<Path>,
    time: &[f64],
    prediction: &Prediction,
    meta: &Metadata,
) -> Result<()> {
    let nx = prediction.states.ncols();
    let header = std::iter::once("t".to_string())
        .chain(names("xhat", nx))
        .chain(names("shat", nx))
        .collect();
    let rows = (0..prediction.states.nrows())
        .map(|k| {
            std::iter::once(time[k])
                .chain(prediction.states.row(k).iter().copied())
                .chain(prediction.scaled.row(k).iter().copied())
                .collect()
        })
        .collect();
    write_table(&path, "prediction", &Table { header, rows })?;
    write_metadata(path, meta)
}

/// Writes estimate traces: `t, xhat.., shat..` (unscaled and scaled).
pub fn write_estimate(
    path: impl AsRef<Path>,
    time: &[f64],
    estimate: &GlobalEstimate,
    meta: &Metadata,
) -> Result<()> {
    let nx = estimate.states.ncols();
    let header = std::iter::once("t".to_string())
        .chain(names("xhat", nx))
        .chain(names("shat", nx))
        .collect();
    let rows = (0..estimate.len())
        .map(|k| {
            std::iter::once(time[k])
                .chain(estimate.states.row(k).iter().copied())
                .chain(estimate.scaled.row(k).iter().copied())
                .collect()
        })
        .collect();
    write_table(&path, "estimate", &Table { header, rows })?;
    write_metadata(path, meta)
}

/// Writes `t, error` per instant.
pub fn write_error_norms(
    path: impl AsRef<Path>,
    time: &[f64],
    norms: &[f64],
    meta: &Metadata,
) -> Result<()> {
    let rows = time.iter().zip(norms).map(|(&t, &e)| vec![t, e]).collect();
    let table = Table {
        header: vec!["t".into(), "error".into()],
        rows,
    };
    write_table(&path, "error-norms", &table)?;
    write_metadata(path, meta)
}

/// Writes per-solve wall times. Kept apart from deterministic artifacts.
pub fn write_timing(path: impl AsRef<Path>, solves: &[SolveRecord], meta: &Metadata) -> Result<()> {
    let rows = solves
        .iter()
        .map(|s| {
            vec![
                s.instant as f64,
                s.subsystem as f64,
                s.seconds,
                s.iterations as f64,
                s.active as f64,
            ]
        })
        .collect();
    let table = Table {
        header: ["instant", "subsystem", "seconds", "iterations", "active"]
            .map(String::from)
            .to_vec(),
        rows,
    };
    write_table(&path, "timing", &table)?;
    write_metadata(path, meta)
}

/// Writes a `state, rmse` table.
pub fn write_rmse(path: impl AsRef<Path>, rmse: &[f64], meta: &Metadata) -> Result<()> {
    let rows = rmse
        .iter()
        .enumerate()
        .map(|(g, &v)| vec![g as f64, v])
        .collect();
    let table = Table {
        header: vec!["state".into(), "rmse".into()],
        rows,
    };
    write_table(&path, "rmse", &table)?;
    write_metadata(path, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trajectory() -> Trajectory {
        let states = DMatrix::from_fn(4, 3, |r, c| 0.1 * r as f64 + c as f64 / 3.0);
        let inputs = DMatrix::from_fn(4, 1, |r, _| r as f64 * 1e-7);
        let mut t = Trajectory::new(
            vec![0.0, 0.025, 0.05, 0.075],
            states,
            inputs,
            vec![0, 2],
            42,
        );
        t.measurements[(1, 0)] += 1e-3;
        t.measurement_noise[(1, 0)] = 1e-3;
        t
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let t = trajectory();
        write_trajectory(&path, &t, "abc").unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.time, t.time);
        assert_eq!(back.states, t.states);
        assert_eq!(back.inputs, t.inputs);
        assert_eq!(back.measurements, t.measurements);
        assert_eq!(back.sensor_states, t.sensor_states);
        assert_eq!(back.seed, 42);
        assert!((back.measurement_noise[(1, 0)] - 1e-3).abs() < 1e-15);
        let meta = read_metadata(&path).unwrap();
        assert_eq!(meta.config_hash, "abc");
        assert_eq!(meta.software_version, SOFTWARE_VERSION);
    }

    #[test]
    fn file_starts_with_schema_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory(&path, &trajectory(), "h").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# kdmhe-trajectory v1"));
        assert_eq!(lines.next(), Some("t,x0,x1,x2,u0,y0,y1"));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory(&path, &trajectory(), "h").unwrap();
        let err = read_table(&path, "estimate").unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn ragged_row_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let table = Table {
            header: vec!["a".into(), "b".into()],
            rows: vec![vec![1.0]],
        };
        assert!(write_table(dir.path().join("x.csv"), "x", &table).is_err());
    }

    #[test]
    fn records_round_trip() {
        #[derive(Debug, PartialEq, Serialize, Deserialize)]
        struct Row {
            method: String,
            rmse: f64,
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = vec![
            Row {
                method: "a".into(),
                rmse: 0.25,
            },
            Row {
                method: "b".into(),
                rmse: 1e-3,
            },
        ];
        write_records(&path, "rows", &rows).unwrap();
        assert_eq!(read_records::<Row>(&path, "rows").unwrap(), rows);
        assert!(read_records::<Row>(&path, "other").is_err());
    }

    #[test]
    fn awkward_floats_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let vals = vec![
            0.1 + 0.2,
            -1e-300,
            1.0 / 3.0,
            6.02214076e23,
            f64::MIN_POSITIVE,
        ];
        let table = Table {
            header: names("v", vals.len()).collect(),
            rows: vec![vals.clone()],
        };
        write_table(&path, "x", &table).unwrap();
        assert_eq!(read_table(&path, "x").unwrap().rows[0], vals);
    }
}
