//! The subcommands. Each one reads its inputs, writes its artifacts under
//! `--out` and finishes with a [`RunManifest`].

use std::path::{Path, PathBuf};
use std::time::Instant;

use delaycast_core::formulation::{AirportRecord, Panel};
use serde::Serialize;

use crate::dataset;
use crate::error::{CliError, Result};
use crate::manifest::{config_hash, ArtifactVersions, RunManifest};

mod forecast;
mod gen;
mod wx;

pub use forecast::{
    eval, fit_forecaster, interpret, interpret_samples, predict, test_samples, train_tft, ForecasterRun,
    InterpretSummary,
};
pub use gen::gen;
pub use wx::{
    encode_wx, evaluate_codec, fit_codec, full_scale_check, grid_dir, train_wx, CodecReport, CodecRun, FullScaleCheck,
};

/// Global options shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub paper_scale: bool,
}

/// Collects what a command read and wrote for its manifest.
pub(crate) struct Run {
    command: &'static str,
    started: Instant,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Run {
    pub(crate) fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub(crate) fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub(crate) fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    pub(crate) fn finish<T: Serialize>(self, ctx: &Context, config: &T, seed: u64) -> Result<()> {
        RunManifest {
            command: self.command.to_string(),
            config_hash: config_hash(config)?,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            versions: ArtifactVersions::default(),
        }
        .write(&ctx.out)
    }
}

/// `dataset.csv` inside `data`, or `data` itself when it is a file.
pub fn dataset_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("dataset.csv")
    } else {
        data.to_path_buf()
    }
}

/// Reads a dataset and assembles its panel.
pub fn load_dataset(data: &Path) -> Result<(Vec<AirportRecord>, Panel)> {
    let path = dataset_path(data);
    let records = dataset::read(&path)?;
    let panel = Panel::from_records(&records)?;
    Ok((records, panel))
}

/// Number of time steps covered by a panel.
pub fn steps(panel: &Panel) -> Result<usize> {
    (0..panel.entities.len())
        .map(|e| panel.time_range(e).1 + 1)
        .max()
        .ok_or_else(|| CliError::Data("dataset has no airports".into()))
}
