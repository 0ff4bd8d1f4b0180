//! Scenario orchestration: build the input stream, run the requested modes and
//! persist reports.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::thread;

use thiserror::Error;

use crate::config::RunConfig;
use crate::ingest::{map_to_readings, parse_dataset, synthesize_vitals, IngestError};
use crate::metrics::{compare_modes, ComparisonTable, InputMismatch};
use crate::model::{merge_streams, SensorReading};
use crate::pipeline::{simulate, Mode, RunOutput};
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("simulation fault: {0}")]
    Fault(#[from] SimError),
    #[error(transparent)]
    Mismatch(#[from] InputMismatch),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl RunError {
    /// 1 config, 2 data, 3 internal fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Data(_) => 2,
            RunError::Fault(_) | RunError::Mismatch(_) | RunError::Io { .. } => 3,
        }
    }
}

impl From<IngestError> for RunError {
    fn from(e: IngestError) -> Self {
        RunError::Data(e.to_string())
    }
}

/// The merged reading stream every mode sees.
pub fn build_readings(config: &RunConfig) -> Result<Vec<SensorReading>, RunError> {
    let mut streams = Vec::new();
    if config.needs_dataset() {
        let path = config
            .dataset
            .as_ref()
            .ok_or_else(|| RunError::Data("mappings read from a dataset but none is configured".into()))?;
        let parsed = parse_dataset(path, config.dataset_limit)?;
        for mapping in &config.mappings {
            let bytes = config
                .vitals
                .iter()
                .find(|v| v.channel == mapping.target_channel)
                .map(|v| v.raw_payload_bytes)
                .ok_or_else(|| RunError::Config(format!("no vitals entry for {}", mapping.target_channel)))?;
            streams.push(map_to_readings(&parsed.records, mapping, bytes, &config.sim));
        }
    }
    let horizon = config.sim.horizon();
    for vital in config.vitals.iter().filter(|v| v.synth.is_some()) {
        streams.push(synthesize_vitals(vital, horizon, config.sim.seed));
    }
    Ok(merge_streams(streams))
}

/// Runs each mode as an independent simulation over the same readings.
pub fn run_modes(config: &RunConfig, modes: &[Mode], readings: &[SensorReading]) -> Result<Vec<RunOutput>, RunError> {
    let results: Vec<Result<RunOutput, SimError>> = thread::scope(|scope| {
        let handles: Vec<_> = modes
            .iter()
            .map(|&mode| scope.spawn(move || simulate(config, mode, readings)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    Ok(results.into_iter().collect::<Result<Vec<_>, _>>()?)
}

#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub runs: Vec<RunOutput>,
    pub comparison: Option<ComparisonTable>,
    pub written: Vec<PathBuf>,
}

/// Validates, runs, and writes `metrics-<mode>.json`, `comparison.csv` (all
/// three modes) and, if requested, `trace-<mode>.jsonl` to `output_dir`.
/// Nothing is written unless every run succeeded.
pub fn run_scenario(config: &RunConfig) -> Result<ScenarioOutput, RunError> {
    config.validate().map_err(|e| RunError::Config(e.to_string()))?;
    let readings = build_readings(config)?;
    let modes = config.mode.modes();
    let runs = run_modes(config, &modes, &readings)?;

    let by_mode: BTreeMap<Mode, &RunOutput> = runs.iter().map(|r| (r.mode, r)).collect();
    let comparison = match (by_mode.get(&Mode::Baseline), by_mode.get(&Mode::Filtered), by_mode.get(&Mode::Managed)) {
        (Some(b), Some(f), Some(m)) => Some(compare_modes(&b.report, &f.report, &m.report)?),
        _ => None,
    };

    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    for run in &runs {
        files.push((config.output_dir.join(format!("metrics-{}.json", run.mode)), run.report.to_json().into_bytes()));
        if config.emit_trace {
            let mut text = Vec::new();
            run.trace.write_jsonl(&mut text).expect("writing to memory");
            files.push((config.output_dir.join(format!("trace-{}.jsonl", run.mode)), text));
        }
    }
    if let Some(table) = &comparison {
        files.push((config.output_dir.join("comparison.csv"), table.to_delimited().into_bytes()));
    }
    let written = write_all(&config.output_dir, files)?;
    Ok(ScenarioOutput { runs, comparison, written })
}

/// Writes every file to a temporary name first, then renames them into place.
/// On failure the temporaries are removed and no final file is created.
fn write_all(dir: &Path, files: Vec<(PathBuf, Vec<u8>)>) -> Result<Vec<PathBuf>, RunError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut staged = Vec::new();
    let result = (|| {
        for (path, bytes) in &files {
            let tmp = path.with_extension("partial");
            staged.push(tmp.clone());
            fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        for tmp in &staged {
            let _ = fs::remove_file(tmp);
        }
        return Err(e);
    }
    for (path, _) in &files {
        let tmp = path.with_extension("partial");
        fs::rename(&tmp, path).map_err(io_err(path))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
