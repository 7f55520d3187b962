use delaycast_core::scenario::{generate, ScenarioConfig};

use super::{Context, Run};
use crate::error::Result;
use crate::grids::{self, GridFormat};
use crate::{config, dataset, fsutil};

/// Generates a synthetic scenario: `dataset.csv`, `wx/` grids, `truth.json`
/// and the effective `scenario.json`.
pub fn gen(ctx: &Context, format: GridFormat) -> Result<()> {
    let mut run = Run::start("gen");
    let mut cfg: ScenarioConfig = config::load(ctx.config.as_deref())?;
    if let Some(p) = &ctx.config {
        run.input(p);
    }
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let scenario = generate(&cfg)?;
    let out = &ctx.out;
    let data = out.join("dataset.csv");
    dataset::write(&data, &scenario.records)?;
    run.output(&data);
    let wx = out.join("wx");
    fsutil::create_dir(&wx)?;
    for g in &scenario.grids {
        grids::write_grid(&wx, g, format)?;
    }
    run.output(&wx);
    let truth = out.join("truth.json");
    fsutil::write(&truth, &serde_json::to_vec(&scenario.truth)?)?;
    run.output(&truth);
    let effective = out.join("scenario.json");
    fsutil::write_json(&effective, &cfg)?;
    run.output(&effective);
    run.finish(ctx, &cfg, cfg.seed)
}
