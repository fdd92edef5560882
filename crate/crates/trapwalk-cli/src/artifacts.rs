//! Output artifacts: flat table rows, CSV and JSON writers, and output
//! directory management.
//!
//! Every table row carries the run id so merged tables stay attributable.
//! Numeric formatting goes through the shortest-roundtrip float printer in
//! both formats, so a rerun of the same config reproduces every file byte
//! for byte.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use trapwalk_core::lattice::LatticeEdge;
use trapwalk_core::regen::RegenBlock;

#[derive(thiserror::Error, Debug)]
pub enum ArtifactError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("output directory {0} already holds run artifacts; pass --overwrite to replace them")]
    Occupied(String),
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

/// File names a run may produce. Overwrite clears exactly these, so stray
/// user files in the directory survive while stale artifacts from an
/// earlier run cannot mix into the new one.
pub const ARTIFACT_NAMES: [&str; 10] = [
    "manifest.json",
    "report.json",
    "blocks.csv",
    "blocks.json",
    "checkpoints.csv",
    "checkpoints.json",
    "traps.csv",
    "traps.json",
    "excursions.json",
    "oracle.json",
];

/// Creates the output directory. An existing directory is acceptable only
/// when it holds no artifact files or `overwrite` is set, in which case
/// the old artifacts are removed first.
pub fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), ArtifactError> {
    let io_err = |source| ArtifactError::Io {
        path: dir.display().to_string(),
        source,
    };
    if dir.exists() {
        let occupied = ARTIFACT_NAMES.iter().any(|name| dir.join(name).exists());
        if occupied && !overwrite {
            return Err(ArtifactError::Occupied(dir.display().to_string()));
        }
        if occupied {
            for name in ARTIFACT_NAMES {
                let p = dir.join(name);
                if p.exists() {
                    fs::remove_file(&p).map_err(io_err)?;
                }
            }
        }
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(io_err)
}

/// Compact edge encoding for CSV cells: "x1,x2,x3,x4;axis".
pub fn edge_string(edge: Option<LatticeEdge>) -> String {
    match edge {
        Some(e) => format!(
            "{},{},{},{};{}",
            e.lower[0], e.lower[1], e.lower[2], e.lower[3], e.axis
        ),
        None => String::new(),
    }
}

/// One regeneration block, flattened. Displacement always occupies four
/// columns; coordinates beyond the run's dimension are zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockRow {
    pub run_id: String,
    pub replica: u64,
    pub block_index: usize,
    pub start_time: u64,
    pub end_time: u64,
    pub duration: u64,
    pub disp_1: i64,
    pub disp_2: i64,
    pub disp_3: i64,
    pub disp_4: i64,
    pub chi: u32,
    pub max_conductance: f64,
    /// Empty when the block met no edge at or above the trap threshold.
    pub principal_edge: String,
    /// Conductance of the principal edge; 0 when there is none.
    pub principal_conductance: f64,
    pub visits: u64,
    pub pi_bar: f64,
    pub time_on_edge: u64,
    pub time_below_threshold: u64,
    pub lt: bool,
    pub slt: bool,
    pub olt: bool,
    pub nlt_count: u32,
}

impl BlockRow {
    pub fn new(
        run_id: &str,
        replica: u64,
        block: &RegenBlock,
        principal_conductance: f64,
    ) -> BlockRow {
        BlockRow {
            run_id: run_id.to_string(),
            replica,
            block_index: block.index,
            start_time: block.start_time,
            end_time: block.end_time,
            duration: block.duration,
            disp_1: block.displacement[0],
            disp_2: block.displacement[1],
            disp_3: block.displacement[2],
            disp_4: block.displacement[3],
            chi: block.chi,
            max_conductance: block.max_conductance,
            principal_edge: edge_string(block.principal_edge),
            principal_conductance,
            visits: block.visits_v,
            pi_bar: block.pi_bar,
            time_on_edge: block.time_on_max_edge,
            time_below_threshold: block.time_below_threshold,
            lt: block.flags.lt,
            slt: block.flags.slt,
            olt: block.flags.olt,
            nlt_count: block.flags.nlt_count,
        }
    }
}

/// One displacement checkpoint of one replica.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub run_id: String,
    pub replica: u64,
    pub time: u64,
    /// Displacement level along the bias direction at `time`.
    pub level: f64,
    pub pos_1: i64,
    pub pos_2: i64,
    pub pos_3: i64,
    pub pos_4: i64,
}

/// Trap observables of one LT block plus its synthesized limit sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrapRow {
    pub run_id: String,
    pub replica: u64,
    pub block_index: usize,
    /// Conductance of the principal (trap) edge.
    pub conductance: f64,
    /// Entries into the trap edge from outside.
    pub visits: u64,
    /// Tilt-free collapsed weight of the merged trap vertex.
    pub pi_bar: f64,
    pub time_on_edge: u64,
    /// Occupation time scaled by the trap conductance.
    pub w_n: f64,
    /// Matching draw of the limit law: (2 / pi_bar) * Gamma(visits, 1).
    pub w_infty_sample: f64,
}

pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<String, ArtifactError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|source| ArtifactError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    for row in rows {
        w.serialize(row).map_err(|source| ArtifactError::Csv {
            path: path.display().to_string(),
            source,
        })?;
    }
    w.flush().map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(name.to_string())
}

/// Writes any serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String, ArtifactError> {
    let path = dir.join(name);
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| ArtifactError::Json {
            path: path.display().to_string(),
            source,
        })?;
    text.push('\n');
    let mut f = fs::File::create(&path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(name.to_string())
}

/// Reads a whole CSV table back into rows (used by merge and by tests).
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ArtifactError> {
    let mut r = csv::Reader::from_path(path).map_err(|source| ArtifactError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(|source| ArtifactError::Csv {
            path: path.display().to_string(),
            source,
        })?);
    }
    Ok(rows)
}

/// All artifact files currently present in a run directory.
pub fn present_artifacts(dir: &Path) -> Vec<PathBuf> {
    ARTIFACT_NAMES
        .iter()
        .map(|name| dir.join(name))
        .filter(|p| p.exists())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use trapwalk_core::lattice::LatticeEdge;

    #[test]
    fn edge_string_encodes_lower_and_axis() {
        let e = LatticeEdge {
            lower: [3, -1, 0, 0],
            axis: 1,
        };
        assert_eq!(edge_string(Some(e)), "3,-1,0,0;1");
        assert_eq!(edge_string(None), "");
    }

    #[test]
    fn csv_roundtrip_preserves_rows() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            CheckpointRow {
                run_id: "abc".into(),
                replica: 0,
                time: 10,
                level: 3.5,
                pos_1: 3,
                pos_2: -1,
                pos_3: 0,
                pos_4: 0,
            },
            CheckpointRow {
                run_id: "abc".into(),
                replica: 1,
                time: 31,
                level: 11.25,
                pos_1: 11,
                pos_2: 2,
                pos_3: 0,
                pos_4: 0,
            },
        ];
        write_csv(dir.path(), "checkpoints.csv", &rows).unwrap();
        let back: Vec<CheckpointRow> = read_csv(&dir.path().join("checkpoints.csv")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].time, 31);
        assert_eq!(back[1].level, 11.25);
        assert_eq!(back[0].pos_2, -1);
    }

    #[test]
    fn occupied_dir_refused_without_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "keep me").unwrap();
        let err = prepare_dir(dir.path(), false).unwrap_err();
        assert!(matches!(err, ArtifactError::Occupied(_)));
        // With overwrite the artifacts go, unrelated files stay.
        prepare_dir(dir.path(), true).unwrap();
        assert!(!dir.path().join("manifest.json").exists());
        assert!(dir.path().join("notes.txt").exists());
    }

    #[test]
    fn non_artifact_files_do_not_block() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        prepare_dir(dir.path(), false).unwrap();
    }

    #[test]
    fn json_writes_identical_bytes_twice() {
        let dir = tempfile::tempdir().unwrap();
        let value = serde_json::json!({"a": 1.5, "b": [1, 2, 3]});
        write_json(dir.path(), "report.json", &value).unwrap();
        let first = std::fs::read(dir.path().join("report.json")).unwrap();
        write_json(dir.path(), "report.json", &value).unwrap();
        let second = std::fs::read(dir.path().join("report.json")).unwrap();
        assert_eq!(first, second);
        assert_eq!(second.last(), Some(&b'\n'));
    }
}
