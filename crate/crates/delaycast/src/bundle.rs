//! Model bundles: a `config.json` next to a `weights/` archive.

use std::path::Path;

use delaycast_core::formulation::{NormStats, VariableSchema};
use delaycast_core::nn::ParamStore;
use delaycast_core::tft::{Tft, TftConfig};
use delaycast_core::training::TrainConfig;
use delaycast_core::wx::{CodecConfig, WxCodec};
use serde::{Deserialize, Serialize};

use crate::archive;
use crate::error::{CliError, Result};
use crate::fsutil;

pub const FORMAT_VERSION: u32 = 1;

/// `config.json` of a forecaster bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TftBundleConfig {
    pub format_version: u32,
    pub model: TftConfig,
    pub stats: NormStats,
    pub train: TrainConfig,
    /// First label time of the test period used during training.
    pub t_split: usize,
}

/// `config.json` of a weather codec bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecBundleConfig {
    pub format_version: u32,
    pub codec: CodecConfig,
    /// Grid shape the codec was trained on.
    pub height: usize,
    pub width: usize,
}

fn check_version(found: u32, what: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "{what} bundle has format_version {found}, this build reads {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

pub fn save_tft(dir: &Path, cfg: &TftBundleConfig, params: &ParamStore) -> Result<()> {
    fsutil::write_json(&dir.join("config.json"), cfg)?;
    archive::save(&dir.join("weights"), params)
}

/// Loads a forecaster bundle and rebuilds the model.
pub fn load_tft(dir: &Path) -> Result<(TftBundleConfig, Tft, ParamStore)> {
    let cfg: TftBundleConfig = fsutil::read_json(&dir.join("config.json"))?;
    check_version(cfg.format_version, "forecaster")?;
    let mut params = ParamStore::new();
    let model = Tft::new(&mut params, cfg.model.clone(), cfg.train.seed)?;
    archive::load_into(&dir.join("weights"), &mut params)?;
    Ok((cfg, model, params))
}

/// Fails unless `schema` is the one the bundle was trained with.
pub fn check_schema(cfg: &TftBundleConfig, schema: &VariableSchema) -> Result<()> {
    if &cfg.model.schema != schema {
        return Err(CliError::Data(format!(
            "bundle format_version {} was trained on a different variable schema than the dataset",
            cfg.format_version
        )));
    }
    Ok(())
}

pub fn save_codec(dir: &Path, cfg: &CodecBundleConfig, params: &ParamStore) -> Result<()> {
    fsutil::write_json(&dir.join("config.json"), cfg)?;
    archive::save(&dir.join("weights"), params)
}

pub fn load_codec(dir: &Path) -> Result<(CodecBundleConfig, WxCodec, ParamStore)> {
    let cfg: CodecBundleConfig = fsutil::read_json(&dir.join("config.json"))?;
    check_version(cfg.format_version, "codec")?;
    let mut params = ParamStore::new();
    let mut rng = delaycast_core::seed::rng(0, "wx-init");
    let codec = WxCodec::new(&mut params, &mut rng, &cfg.codec)?;
    archive::load_into(&dir.join("weights"), &mut params)?;
    Ok((cfg, codec, params))
}
