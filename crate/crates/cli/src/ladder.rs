use std::path::PathBuf;

use rholoss::ladder::{run_ladder, write_ladder_csv};

use crate::artifacts::{load_split, write_atomic, Layout, Overwrite};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// First-epoch rank correlations of each configured rung against the
/// ensemble reference, written to `ladder/ladder.csv`. Initial IL models are
/// fit on holdout and checkpointed on the training pool.
pub fn cmd_ladder(cfg: &ExperimentConfig, layout: &Layout, overwrite: Overwrite) -> Result<PathBuf> {
    let section = cfg
        .ladder
        .as_ref()
        .ok_or_else(|| CliError::Config("the config has no [ladder] section".into()))?;
    let path = layout.ladder();
    if path.exists() && overwrite != Overwrite::Force {
        return Err(CliError::Exists(path));
    }
    let train = load_split(layout, "train", cfg)?;
    let holdout = load_split(layout, "holdout", cfg)?;
    let core = section.to_core(train.dim(), train.classes());
    let results = run_ladder(&train, &holdout, &train, &core, &section.rungs)?;
    let mut buf = Vec::new();
    let header = format!("config_hash={} seed={}", cfg.config_hash(), section.seed);
    write_ladder_csv(&mut buf, &header, &results)?;
    write_atomic(&path, &buf)?;
    Ok(path)
}
