use std::path::PathBuf;

use rholoss::data::{split, LabeledDataset, SplitSpec};
use rholoss::il::{compute_il_table, compute_il_table_two_halves, model_digest, train_il_model, CheckpointLog, IlScheme};
use rholoss::nn::MlpModel;
use rholoss::rng::derive_seed;

use crate::artifacts::{header_matches, load_split, stamp, write_atomic, Layout, Overwrite};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

const HALVES_SPLIT: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrainIlOutcome {
    Written(Vec<PathBuf>),
    UpToDate,
}

/// Fits the IL model on holdout (checkpointed on the training pool) and
/// writes its table over the training pool; with the two-halves scheme,
/// fits one model per half of the pool and writes the merged table.
pub fn cmd_train_il(cfg: &ExperimentConfig, layout: &Layout, overwrite: Overwrite) -> Result<TrainIlOutcome> {
    let il_hash = cfg.il_hash();
    let table_path = layout.il_table();
    match header_matches(&table_path, "il_hash", &il_hash)? {
        Some(true) if overwrite != Overwrite::Force => return Ok(TrainIlOutcome::UpToDate),
        Some(false) if overwrite != Overwrite::Force => return Err(CliError::Exists(table_path)),
        _ => {}
    }
    let train = load_split(layout, "train", cfg)?;
    let training = cfg.il.training(train.dim(), train.classes());
    let fields = |seed: u64| {
        vec![
            ("config_hash", cfg.config_hash()),
            ("il_hash", il_hash.clone()),
            ("seed", seed.to_string()),
        ]
    };
    let mut written = Vec::new();
    let mut write_log = |log: &CheckpointLog, suffix: Option<&str>, seed: u64| -> Result<()> {
        let mut buf = Vec::new();
        log.write_csv(&mut buf)?;
        let path = layout.il_checkpoints(suffix);
        write_atomic(&path, stamp(&String::from_utf8_lossy(&buf), &fields(seed)).as_bytes())?;
        written.push(path);
        Ok(())
    };
    let table = match cfg.il.scheme {
        IlScheme::Holdout => {
            let holdout = load_split(layout, "holdout", cfg)?;
            let (model, log) = train_il_model(&holdout, &train, &training)?;
            write_log(&log, None, training.seed)?;
            compute_il_table(&model, &train)?
        }
        IlScheme::TwoHalves => {
            let (a, b) = split(&train, &SplitSpec::two_halves(derive_seed(cfg.il.seed, HALVES_SPLIT)))?;
            let (table, [(_, log_a), (_, log_b)]) = compute_il_table_two_halves(&a, &b, &training)?;
            write_log(&log_a, Some("a"), training.seed)?;
            write_log(&log_b, Some("b"), training.seed)?;
            table
        }
    };
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_atomic(&table_path, stamp(&String::from_utf8_lossy(&buf), &fields(training.seed)).as_bytes())?;
    written.push(table_path);
    Ok(TrainIlOutcome::Written(written))
}

/// Refits the holdout-scheme IL model and checks it is the one the table on
/// disk was computed with. Used by original-mode runs, which keep training
/// the model.
pub fn refit_il_model(cfg: &ExperimentConfig, train: &LabeledDataset, holdout: &LabeledDataset, provenance: &[String]) -> Result<MlpModel> {
    let training = cfg.il.training(train.dim(), train.classes());
    let (model, _) = train_il_model(holdout, train, &training)?;
    let digest = model_digest(&model);
    if !provenance.iter().any(|p| p.ends_with(&format!(":{digest}"))) {
        return Err(CliError::Input(format!(
            "refit IL model {digest} does not match the table's provenance {provenance:?}; rerun `rholoss train-il --force`"
        )));
    }
    Ok(model)
}
