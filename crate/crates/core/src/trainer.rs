//! The selection training loop: each epoch a seeded permutation of the
//! training set is cut into candidate batches of `n_big`; every candidate
//! batch is scored against the current (pre-update) model, the top `n_b` are
//! picked, and one optimizer step is taken on them.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{parse_comment, LabeledDataset};
use crate::error::{arg_err, Error, Result};
use crate::il::{fit_batch, IlUpdater, IrreducibleLossTable};
use crate::nn::{self, argmax, BnStats, MlpModel, Mode};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{self, stream};
use crate::selection::{self, SelectionPolicy};

/// How irreducible losses evolve during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IlUpdateMode {
    /// Values come from a fixed table.
    #[default]
    Frozen,
    /// Values come from a live IL model that also trains on each acquired
    /// batch.
    Original,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n_b: usize,
    /// Candidate batch size.
    pub n_big: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub policy: SelectionPolicy,
    pub il_update: IlUpdateMode,
    /// Learning-rate multiplier for the live IL model.
    pub il_lr_scale: f64,
    pub seed: u64,
    /// Evaluate every this many steps as well as at each epoch end; 0 for
    /// epoch ends only.
    pub eval_every: usize,
    pub targets: Vec<f64>,
    /// Keep every candidate's score in the record.
    pub record_scores: bool,
}

impl RunConfig {
    /// 32 of 320 candidates, AdamW(1e-3, wd 0.01), frozen IL.
    pub fn new(policy: SelectionPolicy, epochs: usize, seed: u64) -> Self {
        Self {
            n_b: 32,
            n_big: 320,
            epochs,
            optimizer: OptimizerConfig::default(),
            policy,
            il_update: IlUpdateMode::Frozen,
            il_lr_scale: 0.01,
            seed,
            eval_every: 0,
            targets: Vec::new(),
            record_scores: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_b == 0 {
            return arg_err("n_b must be at least 1");
        }
        if self.n_b > self.n_big {
            return arg_err(format!("n_b = {} exceeds candidate batch size {}", self.n_b, self.n_big));
        }
        if !(self.il_lr_scale >= 0.0 && self.il_lr_scale.is_finite()) {
            return arg_err("IL learning-rate scale must be non-negative");
        }
        if let Some(t) = self.targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return arg_err(format!("target accuracy {t} outside [0, 1]"));
        }
        self.policy.validate()
    }

    pub fn ratio(&self) -> f64 {
        self.n_b as f64 / self.n_big as f64
    }

    /// Number of points picked from a candidate chunk of `len` points.
    pub fn picks_for(&self, len: usize) -> usize {
        if len >= self.n_big {
            self.n_b
        } else {
            ((self.ratio() * len as f64).round() as usize).clamp(1, len)
        }
    }

    /// Digest of every setting that affects the trajectory.
    pub fn digest(&self) -> String {
        let text = format!(
            "{}|{}|{}|{:?}|{:?}|{:?}|{}|{}|{}|{:?}|{}",
            self.n_b,
            self.n_big,
            self.epochs,
            self.optimizer,
            self.policy.spec(),
            self.il_update,
            self.il_lr_scale,
            self.seed,
            self.eval_every,
            self.targets,
            self.record_scores
        );
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub epoch: usize,
    pub selected: Vec<u64>,
    pub mean_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    /// Steps taken so far.
    pub step: usize,
    pub epoch: usize,
    pub end_of_epoch: bool,
    pub accuracy: f64,
    pub loss: f64,
}

/// Shares of the points selected during one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositionRow {
    pub epoch: usize,
    pub selected: usize,
    pub corrupted: f64,
    pub low_relevance: f64,
    pub already_correct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub step: usize,
    pub id: u64,
    pub score: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordHeader {
    pub config_hash: String,
    pub seed: u64,
    pub policy: String,
    pub targets: Vec<f64>,
    /// Seconds since the epoch at creation; not part of the run's content.
    pub created_unix: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub header: RecordHeader,
    pub steps: Vec<StepRow>,
    pub evals: Vec<EvalRow>,
    pub compositions: Vec<CompositionRow>,
    pub scores: Vec<ScoreRow>,
}

/// Epoch or step count to a target, or "not reached".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Reached {
    At(usize),
    NotReached,
}

impl fmt::Display for Reached {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reached::At(n) => write!(f, "{n}"),
            Reached::NotReached => f.write_str("NR"),
        }
    }
}

impl Reached {
    pub fn value(self) -> Option<usize> {
        match self {
            Reached::At(n) => Some(n),
            Reached::NotReached => None,
        }
    }
}

impl RunRecord {
    /// End-of-epoch evaluations in epoch order.
    pub fn epoch_evals(&self) -> impl Iterator<Item = &EvalRow> {
        self.evals.iter().filter(|e| e.end_of_epoch)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.evals.last().map(|e| e.accuracy)
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.evals.iter().map(|e| e.accuracy).reduce(f64::max)
    }

    /// Mean of a composition column over all epochs.
    pub fn mean_composition(&self, column: impl Fn(&CompositionRow) -> f64) -> Option<f64> {
        if self.compositions.is_empty() {
            return None;
        }
        Some(self.compositions.iter().map(column).sum::<f64>() / self.compositions.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let h = &self.header;
        let targets: Vec<String> = h.targets.iter().map(f64::to_string).collect();
        writeln!(
            w,
            "# config_hash={} seed={} policy={} targets={} created_unix={}",
            h.config_hash,
            h.seed,
            h.policy,
            targets.join(";"),
            h.created_unix
        )?;
        writeln!(w, "[steps]")?;
        writeln!(w, "step,epoch,n_selected,mean_score,selected_ids")?;
        for s in &self.steps {
            let ids: Vec<String> = s.selected.iter().map(u64::to_string).collect();
            writeln!(w, "{},{},{},{},{}", s.step, s.epoch, s.selected.len(), s.mean_score, ids.join(";"))?;
        }
        writeln!(w, "[evals]")?;
        writeln!(w, "step,epoch,end_of_epoch,accuracy,loss")?;
        for e in &self.evals {
            writeln!(w, "{},{},{},{},{}", e.step, e.epoch, e.end_of_epoch as u8, e.accuracy, e.loss)?;
        }
        writeln!(w, "[compositions]")?;
        writeln!(w, "epoch,n_selected,corrupted_fraction,low_relevance_fraction,already_correct_fraction")?;
        for c in &self.compositions {
            writeln!(
                w,
                "{},{},{},{},{}",
                c.epoch, c.selected, c.corrupted, c.low_relevance, c.already_correct
            )?;
        }
        if !self.scores.is_empty() {
            writeln!(w, "[scores]")?;
            writeln!(w, "step,id,score,selected")?;
            for s in &self.scores {
                writeln!(w, "{},{},{},{}", s.step, s.id, s.score, s.selected as u8)?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 output")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("run record: {m}"));
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| bad("empty file"))??;
        let meta = parse_comment(&first)?;
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(&format!("missing header field {k}")));
        let targets = get("targets")?;
        let header = RecordHeader {
            config_hash: get("config_hash")?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            policy: get("policy")?,
            targets: if targets.is_empty() {
                Vec::new()
            } else {
                targets
                    .split(';')
                    .map(|t| t.parse().map_err(|_| bad("targets")))
                    .collect::<Result<_>>()?
            },
            created_unix: get("created_unix")?.parse().map_err(|_| bad("created_unix"))?,
        };
        let mut record = RunRecord {
            header,
            steps: Vec::new(),
            evals: Vec::new(),
            compositions: Vec::new(),
            scores: Vec::new(),
        };
        let mut section = String::new();
        let mut expect_header = false;
        let mut seen = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                section = line.trim_matches(|c| c == '[' || c == ']').to_string();
                seen.push(section.clone());
                expect_header = true;
                continue;
            }
            if expect_header {
                expect_header = false;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                cols.get(i).and_then(|c| c.parse().ok()).ok_or_else(|| bad(&format!("bad row {line:?}")))
            };
            let int = |i: usize| -> Result<usize> {
                cols.get(i).and_then(|c| c.parse().ok()).ok_or_else(|| bad(&format!("bad row {line:?}")))
            };
            match section.as_str() {
                "steps" => {
                    let ids = cols.get(4).copied().unwrap_or("");
                    let selected = if ids.is_empty() {
                        Vec::new()
                    } else {
                        ids.split(';')
                            .map(|s| s.parse().map_err(|_| bad("selected id")))
                            .collect::<Result<_>>()?
                    };
                    record.steps.push(StepRow {
                        step: int(0)?,
                        epoch: int(1)?,
                        mean_score: num(3)?,
                        selected,
                    });
                }
                "evals" => record.evals.push(EvalRow {
                    step: int(0)?,
                    epoch: int(1)?,
                    end_of_epoch: int(2)? == 1,
                    accuracy: num(3)?,
                    loss: num(4)?,
                }),
                "compositions" => record.compositions.push(CompositionRow {
                    epoch: int(0)?,
                    selected: int(1)?,
                    corrupted: num(2)?,
                    low_relevance: num(3)?,
                    already_correct: num(4)?,
                }),
                "scores" => record.scores.push(ScoreRow {
                    step: int(0)?,
                    id: int(1)? as u64,
                    score: num(2)?,
                    selected: int(3)? == 1,
                }),
                other => return Err(bad(&format!("unknown section {other:?}"))),
            }
        }
        // a file cut short loses its trailing sections
        for required in ["steps", "evals", "compositions"] {
            if !seen.iter().any(|s| s == required) {
                return Err(bad(&format!("missing [{required}] section")));
            }
        }
        Ok(record)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Removes the creation timestamp from a serialized record so two runs can be
/// compared byte for byte.
pub fn strip_timestamp(csv: &str) -> String {
    let mut out = String::with_capacity(csv.len());
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            let kept: Vec<&str> = line.split(' ').filter(|f| !f.starts_with("created_unix=")).collect();
            out.push_str(&kept.join(" "));
        } else {
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}

/// Test accuracy and mean test loss in evaluation mode.
pub fn evaluate(model: &MlpModel, test: &LabeledDataset) -> Result<(f64, f64)> {
    let (loss, acc) = crate::il::eval_loss_accuracy(model, test)?;
    Ok((acc, loss))
}

/// Row-major `C × C` counts of (true label, predicted label) on `ds`.
pub fn confusion_matrix(model: &MlpModel, ds: &LabeledDataset) -> Result<Vec<Vec<u64>>> {
    let logits = model.predict_logits(ds.features())?;
    let c = ds.classes();
    let mut m = vec![vec![0u64; c]; c];
    for (row, &y) in logits.iter_rows().zip(ds.labels()) {
        m[y][argmax(row)] += 1;
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Composition {
    pub corrupted: f64,
    pub low_relevance: f64,
    pub already_correct: f64,
}

/// Shares of `positions` (rows of `candidates`) that carry a corrupted label,
/// are flagged low-relevance, and whose row of `logits` already predicts the
/// label.
pub fn composition_metrics(positions: &[usize], candidates: &LabeledDataset, logits: &crate::tensor::Tensor) -> Composition {
    let counts = composition_counts(positions, candidates, logits);
    let n = positions.len().max(1) as f64;
    Composition {
        corrupted: counts[0] as f64 / n,
        low_relevance: counts[1] as f64 / n,
        already_correct: counts[2] as f64 / n,
    }
}

fn composition_counts(positions: &[usize], candidates: &LabeledDataset, logits: &crate::tensor::Tensor) -> [usize; 3] {
    let mut counts = [0; 3];
    for &p in positions {
        counts[0] += candidates.is_corrupted(p) as usize;
        counts[1] += candidates.low_relevance()[p] as usize;
        counts[2] += (argmax(logits.row(p)) == candidates.labels()[p]) as usize;
    }
    counts
}

/// Lowest final accuracy among `records`.
pub fn weakest_final_accuracy(records: &[RunRecord]) -> Option<f64> {
    records.iter().filter_map(RunRecord::final_accuracy).reduce(f64::min)
}

/// Mean already-correct share per record, over the epochs whose end-of-epoch
/// accuracy is below `threshold`. `None` when no epoch qualifies.
pub fn redundancy_epoch_filter(records: &[RunRecord], threshold: f64) -> Vec<Option<f64>> {
    records
        .iter()
        .map(|r| {
            let vals: Vec<f64> = r
                .compositions
                .iter()
                .filter(|c| {
                    r.epoch_evals()
                        .find(|e| e.epoch == c.epoch)
                        .is_some_and(|e| e.accuracy < threshold)
                })
                .map(|c| c.already_correct)
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// First epoch whose end-of-epoch accuracy is at least `target`.
pub fn epochs_to_target(record: &RunRecord, target: f64) -> Reached {
    record
        .epoch_evals()
        .find(|e| e.accuracy >= target)
        .map_or(Reached::NotReached, |e| Reached::At(e.epoch))
}

/// Steps taken at the first evaluation reaching `target`.
pub fn steps_to_target(record: &RunRecord, target: f64) -> Reached {
    record
        .evals
        .iter()
        .find(|e| e.accuracy >= target)
        .map_or(Reached::NotReached, |e| Reached::At(e.step))
}

enum IlSource<'a> {
    None,
    Table(&'a IrreducibleLossTable),
    Live(IlUpdater),
}

/// Runs the selection loop with a fixed IL table (or none, for policies that
/// do not read one) and returns the run record.
pub fn run_training(
    train: &LabeledDataset,
    test: &LabeledDataset,
    il: Option<&IrreducibleLossTable>,
    cfg: &RunConfig,
    model: MlpModel,
) -> Result<RunRecord> {
    Ok(run_training_model(train, test, il, cfg, model)?.0)
}

/// [`run_training`], also returning the final model.
pub fn run_training_model(
    train: &LabeledDataset,
    test: &LabeledDataset,
    il: Option<&IrreducibleLossTable>,
    cfg: &RunConfig,
    model: MlpModel,
) -> Result<(RunRecord, MlpModel)> {
    if cfg.il_update == IlUpdateMode::Original {
        return arg_err("original-mode selection takes an IL model; use run_original_selection");
    }
    let source = match il {
        Some(t) if cfg.policy.needs_il() => {
            t.check_covers(train)?;
            IlSource::Table(t)
        }
        None if cfg.policy.needs_il() => {
            return Err(Error::Setup(format!("policy {} needs an irreducible-loss table", cfg.policy)))
        }
        _ => IlSource::None,
    };
    run_loop(train, test, source, cfg, model)
}

/// Selection with IL values recomputed every step from `il_model`, which is
/// trained on each acquired batch with the target optimizer's kind at
/// `cfg.il_lr_scale` times its learning rate.
pub fn run_original_selection(
    train: &LabeledDataset,
    test: &LabeledDataset,
    il_model: MlpModel,
    cfg: &RunConfig,
    model: MlpModel,
) -> Result<RunRecord> {
    let updater = IlUpdater::new(il_model, &cfg.optimizer, cfg.il_lr_scale);
    Ok(run_loop(train, test, IlSource::Live(updater), cfg, model)?.0)
}

/// Offline max-entropy subset selection followed by plain shuffled training
/// on the kept subset in batches of `n_b`.
pub fn run_svp(
    train: &LabeledDataset,
    test: &LabeledDataset,
    proxy: &MlpModel,
    cfg: &RunConfig,
    model: MlpModel,
) -> Result<RunRecord> {
    let SelectionPolicy::SvpEntropy { keep_fraction } = cfg.policy else {
        return arg_err("run_svp needs the svp-entropy policy");
    };
    let kept = selection::svp_offline_select(proxy, train, keep_fraction, rng::derive_seed(cfg.seed, stream::TIE_BREAK))?;
    let subset = train.subset_by_ids(&kept)?;
    let inner = RunConfig {
        n_big: cfg.n_b,
        policy: SelectionPolicy::Uniform,
        ..cfg.clone()
    };
    let (mut record, _) = run_loop(&subset, test, IlSource::None, &inner, model)?;
    record.header.policy = cfg.policy.name().to_string();
    record.header.config_hash = cfg.digest();
    Ok(record)
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn run_loop(
    train: &LabeledDataset,
    test: &LabeledDataset,
    mut il: IlSource<'_>,
    cfg: &RunConfig,
    mut model: MlpModel,
) -> Result<(RunRecord, MlpModel)> {
    cfg.validate()?;
    if matches!(cfg.policy, SelectionPolicy::SvpEntropy { .. }) {
        return arg_err("svp-entropy selects offline; use run_svp");
    }
    if train.is_empty() {
        return Err(Error::Setup("training set is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::Setup("test set is empty".into()));
    }
    if train.dim() != model.config().input_dim() || train.classes() != model.classes() {
        return Err(Error::Setup("model shape does not match the training data".into()));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer.clone());
    let mut record = RunRecord {
        header: RecordHeader {
            config_hash: cfg.digest(),
            seed: cfg.seed,
            policy: cfg.policy.name().to_string(),
            targets: cfg.targets.clone(),
            created_unix: now_unix(),
        },
        steps: Vec::new(),
        evals: Vec::new(),
        compositions: Vec::new(),
        scores: Vec::new(),
    };
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::rng_for(rng::derive_seed(cfg.seed, epoch as u64), stream::SHUFFLE));
        let mut counts = [0usize; 3];
        let mut selected_total = 0usize;
        for chunk in order.chunks(cfg.n_big) {
            let candidates = train.subset(chunk);
            let step_seed = rng::derive_seed(cfg.seed, (1 << 32) + step as u64);
            // scoring snapshot: no dropout, batch-norm over the candidates
            let logits = model.forward(candidates.features(), Mode::Eval, BnStats::Batch)?;
            let losses = if cfg.policy.needs_losses() {
                Some(nn::cross_entropy(&logits, candidates.labels())?)
            } else {
                None
            };
            let il_values = match &il {
                IlSource::None => None,
                IlSource::Table(t) => Some(selection::lookup_il(candidates.ids(), t)?),
                IlSource::Live(u) => Some(u.losses(&candidates)?),
            };
            let scores = selection::score_candidates(
                &cfg.policy,
                &model,
                &candidates,
                losses.as_deref(),
                il_values.as_deref(),
                step_seed,
            )?;
            let k = cfg.picks_for(chunk.len());
            let mut batch = selection::pick(&cfg.policy, candidates.ids().to_vec(), scores, k, step_seed)?;
            sort_picks(&mut batch);
            let c = composition_counts(&batch.selected, &candidates, &logits);
            for (acc, v) in counts.iter_mut().zip(c) {
                *acc += v;
            }
            selected_total += batch.selected.len();

            let x = candidates.features().select_rows(&batch.selected);
            let y: Vec<usize> = batch.selected.iter().map(|&p| candidates.labels()[p]).collect();
            let n = y.len() as f64;
            let weights: Vec<f64> = match &batch.weights {
                Some(w) => w.iter().map(|wi| wi / n).collect(),
                None => vec![1.0 / n; y.len()],
            };
            let mask_seed = rng::derive_seed(step_seed, stream::DROPOUT);
            fit_batch(&mut model, &mut optimizer, &x, &y, Some(&weights), mask_seed)?;
            if let IlSource::Live(u) = &mut il {
                u.update(&candidates.subset(&batch.selected), mask_seed)?;
            }

            step += 1;
            if cfg.record_scores {
                let mut chosen = vec![false; batch.candidates.len()];
                for &p in &batch.selected {
                    chosen[p] = true;
                }
                for (p, (&id, &score)) in batch.candidates.iter().zip(&batch.scores).enumerate() {
                    record.scores.push(ScoreRow {
                        step,
                        id,
                        score,
                        selected: chosen[p],
                    });
                }
            }
            record.steps.push(StepRow {
                step,
                epoch,
                mean_score: batch.mean_selected_score(),
                selected: batch.selected_ids(),
            });
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                let (accuracy, loss) = evaluate(&model, test)?;
                record.evals.push(EvalRow {
                    step,
                    epoch,
                    end_of_epoch: false,
                    accuracy,
                    loss,
                });
            }
        }
        let (accuracy, loss) = evaluate(&model, test)?;
        if let Some(last) = record.evals.last_mut().filter(|e| e.step == step && !e.end_of_epoch) {
            last.end_of_epoch = true;
        } else {
            record.evals.push(EvalRow {
                step,
                epoch,
                end_of_epoch: true,
                accuracy,
                loss,
            });
        }
        let n = selected_total.max(1) as f64;
        record.compositions.push(CompositionRow {
            epoch,
            selected: selected_total,
            corrupted: counts[0] as f64 / n,
            low_relevance: counts[1] as f64 / n,
            already_correct: counts[2] as f64 / n,
        });
    }
    Ok((record, model))
}

/// Puts the picks in candidate order (keeping weights aligned), so the
/// update batch does not depend on tie-break order.
fn sort_picks(batch: &mut selection::ScoredBatch) {
    match &mut batch.weights {
        Some(w) => {
            let mut pairs: Vec<(usize, f64)> = batch.selected.iter().copied().zip(w.iter().copied()).collect();
            pairs.sort_by_key(|p| p.0);
            batch.selected = pairs.iter().map(|p| p.0).collect();
            *w = pairs.iter().map(|p| p.1).collect();
        }
        None => batch.selected.sort_unstable(),
    }
}
