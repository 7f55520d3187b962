//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{self, Context};
use crate::error::{CliError, Result};
use crate::grids::GridFormat;

#[derive(Debug, Parser)]
#[command(
    name = "delaycast",
    version,
    about = "Multi-airport delay forecasting from weather grids and traffic data"
)]
pub struct Cli {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config of the command; missing keys keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Check the 960×1072 codec geometry (train-wx, encode-wx).
    #[arg(long, global = true)]
    pub paper_scale: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GridFormatArg {
    Ascii,
    Binary,
}

impl From<GridFormatArg> for GridFormat {
    fn from(f: GridFormatArg) -> Self {
        match f {
            GridFormatArg::Ascii => GridFormat::Ascii,
            GridFormatArg::Binary => GridFormat::Binary,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario (dataset.csv, wx/, truth.json).
    Gen {
        #[arg(long, value_enum, default_value = "binary")]
        grid_format: GridFormatArg,
    },
    /// Train the weather-grid autoencoder.
    TrainWx {
        #[arg(long)]
        data: PathBuf,
    },
    /// Encode grids to features.csv with a trained codec.
    EncodeWx {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Train the forecaster on a dataset.
    TrainTft {
        #[arg(long)]
        data: PathBuf,
    },
    /// Write quantile forecasts of the test windows to forecast.csv.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        airport: Option<String>,
        #[arg(long)]
        anchor: Option<usize>,
    },
    /// Export variable importance, attention by lag and charts.
    Interpret {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Forecast step shown in the actual-vs-predicted charts.
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        /// Test windows per chart.
        #[arg(long, default_value_t = 192)]
        window: usize,
    },
    /// Score a bundle on the test windows (report.json).
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let out = cli.out.ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let ctx = Context {
        seed: cli.seed,
        config: cli.config,
        out,
        paper_scale: cli.paper_scale,
    };
    if let Some(p) = &ctx.config {
        if !p.is_file() {
            return Err(CliError::Usage(format!("config file {} not found", p.display())));
        }
    }
    crate::fsutil::create_dir(&ctx.out)?;
    match cli.command {
        Command::Gen { grid_format } => commands::gen(&ctx, grid_format.into()),
        Command::TrainWx { data } => commands::train_wx(&ctx, &data),
        Command::EncodeWx { data, bundle } => commands::encode_wx(&ctx, &data, &bundle),
        Command::TrainTft { data } => commands::train_tft(&ctx, &data),
        Command::Predict {
            data,
            bundle,
            airport,
            anchor,
        } => commands::predict(&ctx, &data, &bundle, airport.as_deref(), anchor),
        Command::Interpret {
            data,
            bundle,
            horizon,
            window,
        } => commands::interpret(&ctx, &data, &bundle, horizon, window),
        Command::Eval { data, bundle } => commands::eval(&ctx, &data, &bundle),
    }
}
