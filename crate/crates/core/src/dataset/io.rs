//! Dataset file formats: a CSV table with columns
//! `repetition_index,t,y_1..y_D` plus a JSON metadata sidecar. Floats are
//! written with 17 significant digits so a write/read round trip
//! reproduces every value bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Repetition, RepetitionSet};
use crate::dataset::SynthConfig;
use crate::error::{Error, Result};

/// Metadata sidecar stored next to the CSV as `<stem>.meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub period: f64,
    pub dim: usize,
    pub repetitions: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub synth_config: Option<SynthConfig>,
}

/// Serializes a float with 17 significant digits, enough to round-trip
/// any f64 exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes the CSV plus a minimal metadata sidecar.
pub fn write_dataset(rs: &RepetitionSet, path: &Path) -> Result<()> {
    let meta = DatasetMeta {
        period: rs.period(),
        dim: rs.dim(),
        repetitions: rs.r(),
        seed: None,
        synth_config: None,
    };
    write_dataset_with_meta(rs, path, &meta)
}

/// Writes the CSV and the given metadata sidecar.
pub fn write_dataset_with_meta(rs: &RepetitionSet, path: &Path, meta: &DatasetMeta) -> Result<()> {
    let mut out = String::new();
    out.push_str("repetition_index,t");
    for c in 1..=rs.dim() {
        out.push_str(&format!(",y_{c}"));
    }
    out.push('\n');
    for (i, rep) in rs.repetitions().iter().enumerate() {
        for (k, &t) in rep.times().iter().enumerate() {
            out.push_str(&format!("{i},{}", format_float(t)));
            for c in 0..rs.dim() {
                out.push(',');
                out.push_str(&format_float(rep.channel(c)[k]));
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::ConfigInvalid(format!("metadata serialization failed: {e}")))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads the metadata sidecar if one exists.
pub fn read_dataset_meta(path: &Path) -> Result<Option<DatasetMeta>> {
    let sidecar = sidecar_path(path);
    if !sidecar.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&sidecar)?;
    let meta = serde_json::from_str(&text).map_err(|e| Error::Format {
        line: e.line(),
        message: format!("bad metadata sidecar: {e}"),
    })?;
    Ok(Some(meta))
}

/// Reads a dataset CSV (and its sidecar for the period, defaulting to the
/// normalized period 1 when absent).
pub fn read_dataset(path: &Path) -> Result<RepetitionSet> {
    let text = fs::read_to_string(path)?;
    let period = read_dataset_meta(path)?.map_or(1.0, |m| m.period);
    parse_dataset(&text, period)
}

fn parse_dataset(text: &str, period: f64) -> Result<RepetitionSet> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Format {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "repetition_index" || cols[1] != "t" {
        return Err(Error::Format {
            line: 1,
            message: format!(
                "expected header starting with 'repetition_index,t,y_1', got '{header}'"
            ),
        });
    }
    for (c, col) in cols[2..].iter().enumerate() {
        let expected = format!("y_{}", c + 1);
        if *col != expected {
            return Err(Error::Format {
                line: 1,
                message: format!("missing column '{expected}', found '{col}'"),
            });
        }
    }
    let dim = cols.len() - 2;

    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<Vec<f64>>)> = BTreeMap::new();
    let mut any_row = false;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        any_row = true;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Format {
                line: line_no,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let rep: usize = fields[0].parse().map_err(|_| Error::Format {
            line: line_no,
            message: format!("bad repetition index '{}'", fields[0]),
        })?;
        let t: f64 = fields[1].parse().map_err(|_| Error::Format {
            line: line_no,
            message: format!("bad time '{}'", fields[1]),
        })?;
        let entry = groups.entry(rep).or_insert_with(|| (Vec::new(), vec![Vec::new(); dim]));
        entry.0.push(t);
        for c in 0..dim {
            let v: f64 = fields[2 + c].parse().map_err(|_| Error::Format {
                line: line_no,
                message: format!("bad value '{}'", fields[2 + c]),
            })?;
            entry.1[c].push(v);
        }
    }
    if !any_row {
        return Err(Error::Format {
            line: 2,
            message: "no data rows".into(),
        });
    }
    for (expected, &actual) in groups.keys().enumerate() {
        if expected != actual {
            return Err(Error::Format {
                line: 2,
                message: format!("repetition indices must cover 0..r, missing {expected}"),
            });
        }
    }
    let reps = groups
        .into_values()
        .map(|(times, channels)| Repetition::new(times, channels))
        .collect();
    RepetitionSet::new(reps, dim, period)
}

/// Writes sampled trajectories in the dataset CSV idiom: repetition
/// indices derived from the grid, one column per trajectory.
pub fn write_trajectories(
    path: &Path,
    grid: &[f64],
    period: f64,
    trajectories: &DMatrix<f64>,
) -> Result<()> {
    assert_eq!(grid.len(), trajectories.ncols());
    let mut out = String::new();
    out.push_str("repetition_index,t");
    for s in 1..=trajectories.nrows() {
        out.push_str(&format!(",traj_{s}"));
    }
    out.push('\n');
    for (j, &t) in grid.iter().enumerate() {
        let rep = (t / period).floor() as usize;
        out.push_str(&format!("{rep},{}", format_float(t)));
        for s in 0..trajectories.nrows() {
            out.push(',');
            out.push_str(&format_float(trajectories[(s, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a trajectory CSV back as `(grid, trajectories)` with one row per
/// trajectory.
pub fn read_trajectories(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Format {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "repetition_index" || cols[1] != "t" {
        return Err(Error::Format {
            line: 1,
            message: format!("expected header 'repetition_index,t,traj_1,...', got '{header}'"),
        });
    }
    let count = cols.len() - 2;
    let mut grid = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); count];
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Format {
                line: line_no,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let t: f64 = fields[1].parse().map_err(|_| Error::Format {
            line: line_no,
            message: format!("bad time '{}'", fields[1]),
        })?;
        grid.push(t);
        for s in 0..count {
            let v: f64 = fields[2 + s].parse().map_err(|_| Error::Format {
                line: line_no,
                message: format!("bad value '{}'", fields[2 + s]),
            })?;
            values[s].push(v);
        }
    }
    if grid.is_empty() {
        return Err(Error::Format {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let mat = DMatrix::from_fn(count, grid.len(), |s, j| values[s][j]);
    Ok((grid, mat))
}
