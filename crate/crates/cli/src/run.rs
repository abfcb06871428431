//! `run` and `sweep`: independent (policy, seed) jobs on a worker pool.

use std::path::{Path, PathBuf};

use rholoss::data::LabeledDataset;
use rholoss::il::{train_il_model, IlTraining, IrreducibleLossTable};
use rholoss::nn::MlpModel;
use rholoss::optim::OptimizerConfig;
use rholoss::rng::derive_seed;
use rholoss::selection::SelectionPolicy;
use rholoss::trainer::{run_original_selection, run_svp, run_training, IlUpdateMode, RunRecord};

use crate::artifacts::{header_line, load_il_table, load_split, record_file, write_atomic, Layout, Overwrite};
use crate::config::{ExperimentConfig, RunSection};
use crate::error::{CliError, Result};
use crate::train_il::refit_il_model;

const SVP_PROXY: u64 = 0x7376_70;

/// Everything a job reads; shared by reference across workers.
pub struct Inputs {
    pub train: LabeledDataset,
    pub holdout: LabeledDataset,
    pub test: LabeledDataset,
    pub table: Option<IrreducibleLossTable>,
    /// Starting point of the live IL model for original-mode runs.
    pub il_model: Option<MlpModel>,
    il_training: IlTraining,
}

impl Inputs {
    /// Loads the prepared splits, plus the IL table (and a refit IL model)
    /// when some policy in `sections` needs them.
    pub fn load<'a>(cfg: &ExperimentConfig, layout: &Layout, sections: impl IntoIterator<Item = &'a RunSection>) -> Result<Self> {
        let train = load_split(layout, "train", cfg)?;
        let holdout = load_split(layout, "holdout", cfg)?;
        let test = load_split(layout, "test", cfg)?;
        let (mut need_table, mut need_model) = (false, false);
        for s in sections {
            let il = s.policies()?.iter().any(SelectionPolicy::needs_il);
            need_table |= il;
            need_model |= il && s.il_update == IlUpdateMode::Original;
        }
        let table = need_table.then(|| load_il_table(layout, cfg)).transpose()?;
        let il_model = match &table {
            Some(t) if need_model => Some(refit_il_model(cfg, &train, &holdout, t.provenance())?),
            _ => None,
        };
        let il_training = cfg.il.training(train.dim(), train.classes());
        Ok(Self {
            train,
            holdout,
            test,
            table,
            il_model,
            il_training,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Job {
    pub run: RunSection,
    pub policy: SelectionPolicy,
    pub seed: u64,
    pub config_hash: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunOutcome {
    pub written: Vec<PathBuf>,
    /// Complete records kept by `--resume`.
    pub kept: Vec<PathBuf>,
}

fn is_complete(record: &RunRecord, job: &Job) -> bool {
    record.header.config_hash == job.config_hash
        && record.header.seed == job.seed
        && record.header.policy == job.policy.name()
        && record.epoch_evals().last().map(|e| e.epoch) == Some(job.run.epochs)
}

/// One job per (policy, seed) of `cfg.run`, writing into `dir`. Existing
/// files are checked here, before anything runs.
pub fn plan(cfg: &ExperimentConfig, dir: &Path, overwrite: Overwrite, kept: &mut Vec<PathBuf>) -> Result<Vec<Job>> {
    let config_hash = cfg.config_hash();
    let mut jobs = Vec::new();
    for policy in cfg.run.policies()? {
        for &seed in &cfg.run.seeds {
            let path = record_file(dir, policy.name(), seed);
            let job = Job {
                run: cfg.run.clone(),
                policy: policy.clone(),
                seed,
                config_hash: config_hash.clone(),
                path: path.clone(),
            };
            if path.exists() {
                match overwrite {
                    Overwrite::Refuse => return Err(CliError::Exists(path)),
                    Overwrite::Force => {}
                    Overwrite::Resume => {
                        let ok = RunRecord::load_csv(&path).is_ok_and(|r| is_complete(&r, &job));
                        if !ok {
                            return Err(CliError::Stale {
                                path,
                                reason: "partial record or different config; refusing to resume (use --force to overwrite)".into(),
                            });
                        }
                        kept.push(path);
                        continue;
                    }
                }
            }
            jobs.push(job);
        }
    }
    Ok(jobs)
}

pub fn run_job(job: &Job, inputs: &Inputs) -> Result<RunRecord> {
    let mut rc = job.run.run_config(job.policy.clone(), job.seed);
    if !job.policy.needs_il() {
        rc.il_update = IlUpdateMode::Frozen;
    }
    let arch = job.run.arch.mlp(inputs.train.dim(), inputs.train.classes());
    let model = MlpModel::new(arch, job.seed)?;
    let mut record = match job.policy {
        SelectionPolicy::SvpEntropy { .. } => {
            // proxy trained like the IL model, but on the pool and
            // checkpointed on holdout
            let training = IlTraining {
                seed: derive_seed(job.seed, SVP_PROXY),
                ..inputs.il_training.clone()
            };
            let (proxy, _) = train_il_model(&inputs.train, &inputs.holdout, &training)?;
            run_svp(&inputs.train, &inputs.test, &proxy, &rc, model)?
        }
        _ if rc.il_update == IlUpdateMode::Original => {
            let il = inputs.il_model.clone().expect("loaded for original-mode runs");
            run_original_selection(&inputs.train, &inputs.test, il, &rc, model)?
        }
        _ => run_training(&inputs.train, &inputs.test, inputs.table.as_ref(), &rc, model)?,
    };
    record.header.config_hash = job.config_hash.clone();
    Ok(record)
}

/// Runs `jobs` on `threads` workers and writes each record as it finishes.
pub fn execute(jobs: &[Job], inputs: &Inputs, threads: usize) -> Result<Vec<PathBuf>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Input(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let record = run_job(job, inputs)?;
                write_atomic(&job.path, record.to_csv_string().as_bytes())?;
                eprintln!("wrote {}", job.path.display());
                Ok(job.path.clone())
            })
            .collect()
    })
}

/// One record per (policy, seed) under `runs/`.
pub fn cmd_run(cfg: &ExperimentConfig, layout: &Layout, overwrite: Overwrite, threads: usize) -> Result<RunOutcome> {
    let mut out = RunOutcome::default();
    let jobs = plan(cfg, &layout.runs(), overwrite, &mut out.kept)?;
    if !jobs.is_empty() {
        let inputs = Inputs::load(cfg, layout, [&cfg.run])?;
        out.written = execute(&jobs, &inputs, threads)?;
    }
    Ok(out)
}

/// The config of one sweep cell: the run section with the cell's batch
/// sizes and optimizer settings, and no sweep or ladder section.
pub fn cell_config(cfg: &ExperimentConfig, cell: &crate::config::SweepCell) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.sweep = None;
    c.ladder = None;
    c.run.n_b = cell.n_b;
    c.run.n_big = cell.n_big;
    c.run.optimizer = c.run.optimizer.with_lr(cell.lr);
    if let (Some(wd), OptimizerConfig::AdamW { weight_decay, .. }) = (cell.weight_decay, &mut c.run.optimizer) {
        *weight_decay = wd;
    }
    c
}

/// Each cell gets `sweep/cell_NNN/` with its `config.toml` and one record per
/// (policy, seed); `sweep/cells.csv` indexes the cells.
pub fn cmd_sweep(cfg: &ExperimentConfig, layout: &Layout, overwrite: Overwrite, threads: usize) -> Result<RunOutcome> {
    let section = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("the config has no [sweep] section".into()))?;
    let cells = section.cells(&cfg.run)?;
    let mut out = RunOutcome::default();
    let mut jobs = Vec::new();
    let mut configs = Vec::new();
    let mut index = header_line(&[
        ("config_hash", cfg.config_hash()),
        ("seeds", join(&cfg.run.seeds)),
    ]);
    index.push_str("cell,config_hash,n_b,n_B,lr,weight_decay\n");
    for (i, cell) in cells.iter().enumerate() {
        let c = cell_config(cfg, cell);
        let dir = layout.sweep_cell(i);
        let text = c.to_toml();
        let path = dir.join("config.toml");
        if overwrite == Overwrite::Refuse && path.exists() && std::fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
            return Err(CliError::Exists(path));
        }
        jobs.extend(plan(&c, &dir, overwrite, &mut out.kept)?);
        index.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            c.config_hash(),
            cell.n_b,
            cell.n_big,
            cell.lr,
            cell.weight_decay.map_or("NA".to_string(), |w| w.to_string())
        ));
        configs.push((path, text));
    }
    for (path, text) in &configs {
        write_atomic(path, text.as_bytes())?;
    }
    write_atomic(&layout.sweep().join("cells.csv"), index.as_bytes())?;
    if !jobs.is_empty() {
        let inputs = Inputs::load(cfg, layout, [&cfg.run])?;
        out.written = execute(&jobs, &inputs, threads)?;
    }
    Ok(out)
}

pub(crate) fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}
