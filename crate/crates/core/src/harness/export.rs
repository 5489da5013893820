//! CSV and JSON artifacts of a run.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::episode::{ActionTrace, EpisodeConfig, EpisodeResult, Timings};
use crate::error::{Error, Result};
use crate::mmcci::FittedCci;
use crate::problems::RunArchive;

/// Run description written next to the CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub problem: String,
    pub seed: u64,
    pub config: EpisodeConfig,
    pub cci: Vec<FittedCci>,
    pub final_igd: Option<f64>,
    pub evaluations: usize,
    pub evaluations_to_feasible: Option<usize>,
    pub timings: Timings,
    pub trace: ActionTrace,
}

impl RunMetadata {
    pub fn from_result(r: &EpisodeResult) -> Self {
        Self {
            problem: r.problem.clone(),
            seed: r.config.seed,
            config: r.config.clone(),
            cci: r.cci.clone(),
            final_igd: r.final_igd,
            evaluations: r.archive.len(),
            evaluations_to_feasible: r.evaluations_to_feasible(),
            timings: r.timings,
            trace: r.trace.clone(),
        }
    }
}

/// Paths of the files written by [`export_run`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportPaths {
    pub solutions: PathBuf,
    pub cycles: PathBuf,
    pub metadata: PathBuf,
    pub archive: PathBuf,
}

impl ExportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            solutions: dir.join("solutions.csv"),
            cycles: dir.join("cycles.csv"),
            metadata: dir.join("metadata.json"),
            archive: dir.join("archive.json"),
        }
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// `eval_index, cycle, x_*, f_*, g_*, level`, one row per evaluation.
pub fn write_solutions_csv(archive: &RunArchive, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let first = archive.solutions.first().ok_or(Error::Empty("archive to export"))?;
    let mut header = vec!["eval_index".to_string(), "cycle".to_string()];
    header.extend((1..=first.x.len()).map(|i| format!("x_{i}")));
    header.extend((1..=first.y.len()).map(|i| format!("f_{i}")));
    header.extend((1..=first.g.len()).map(|i| format!("g_{i}")));
    header.push("level".into());
    w.write_record(&header)?;
    for (i, s) in archive.solutions.iter().enumerate() {
        let mut row = vec![(i + 1).to_string(), s.cycle.to_string()];
        row.extend(s.x.iter().chain(&s.y).chain(&s.g).map(|&v| num(v)));
        row.push(num(s.level));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `cycle, action, reward, igd, max_level, feasible_count`; `igd` is empty
/// while no feasible solution exists.
pub fn write_cycles_csv(archive: &RunArchive, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cycle", "action", "reward", "igd", "max_level", "feasible_count", "perturbed"])?;
    for c in &archive.cycle_log {
        w.write_record([
            c.cycle.to_string(),
            c.action.map(|a| a.to_string()).unwrap_or_default(),
            num(c.reward),
            c.igd.map(num).unwrap_or_default(),
            num(c.max_level),
            c.feasible_count.to_string(),
            u8::from(c.perturbed_fallback).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Write all artifacts of `result` into `dir`, creating it if needed.
pub fn export_run(result: &EpisodeResult, dir: &Path) -> Result<ExportPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ExportPaths::in_dir(dir);
    write_solutions_csv(&result.archive, &paths.solutions)?;
    write_cycles_csv(&result.archive, &paths.cycles)?;
    write_json(&RunMetadata::from_result(result), &paths.metadata)?;
    write_json(&result.archive, &paths.archive)?;
    Ok(paths)
}
