//! Irreducible-loss models: classifiers trained only on holdout data whose
//! per-example loss on the training pool is cached in an
//! [`IrreducibleLossTable`] and subtracted from the training loss during
//! selection.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{parse_comment, LabeledDataset};
use crate::error::{arg_err, Error, Result};
use crate::nn::{cross_entropy, BnStats, MlpConfig, MlpModel, Mode};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{self, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IlScheme {
    Holdout,
    TwoHalves,
}

impl IlScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            IlScheme::Holdout => "holdout",
            IlScheme::TwoHalves => "two-halves",
        }
    }
}

/// Per-example irreducible holdout loss, keyed by example id.
#[derive(Clone, Debug, PartialEq)]
pub struct IrreducibleLossTable {
    values: BTreeMap<u64, f64>,
    /// Model digests, one per scorer; in the two-halves scheme the scorer of
    /// each id is recorded in `scored_by`.
    provenance: Vec<String>,
    scored_by: BTreeMap<u64, usize>,
    scheme: IlScheme,
}

impl IrreducibleLossTable {
    pub fn get(&self, id: u64) -> Result<f64> {
        self.values.get(&id).copied().ok_or(Error::Lookup(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scheme(&self) -> IlScheme {
        self.scheme
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    /// Digest of the model that produced the value for `id`.
    pub fn scorer_of(&self, id: u64) -> Option<&str> {
        self.scored_by.get(&id).map(|&k| self.provenance[k].as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.values.keys().copied()
    }

    /// Fails with a setup error unless every id of `ds` has a value.
    pub fn check_covers(&self, ds: &LabeledDataset) -> Result<()> {
        match ds.ids().iter().find(|id| !self.values.contains_key(id)) {
            Some(id) => Err(Error::Setup(format!("irreducible loss missing for example {id}"))),
            None => Ok(()),
        }
    }

    /// Digest over ids and value bits; unchanged iff the table is unchanged.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.scheme.as_str());
        for (id, v) in &self.values {
            h.update(id.to_le_bytes());
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// `# provenance=a;b scheme=... digest=...` followed by `id,il_value`
    /// (and a `scorer` column index into provenance for multi-model tables).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# provenance={} scheme={} digest={}",
            self.provenance.join(";"),
            self.scheme.as_str(),
            self.digest()
        )?;
        let multi = self.provenance.len() > 1;
        writeln!(w, "{}", if multi { "id,il_value,scorer" } else { "id,il_value" })?;
        for (id, v) in &self.values {
            if multi {
                writeln!(w, "{id},{v},{}", self.scored_by[id])?;
            } else {
                writeln!(w, "{id},{v}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let fmt = |m: String| Error::Format(m);
        let mut lines = r.lines();
        let meta = parse_comment(&lines.next().ok_or_else(|| fmt("empty table".into()))??)?;
        let provenance: Vec<String> = meta
            .get("provenance")
            .ok_or_else(|| fmt("missing provenance".into()))?
            .split(';')
            .map(str::to_string)
            .collect();
        let scheme = match meta.get("scheme").map(String::as_str) {
            Some("holdout") => IlScheme::Holdout,
            Some("two-halves") => IlScheme::TwoHalves,
            other => return Err(fmt(format!("unknown scheme {other:?}"))),
        };
        lines.next().ok_or_else(|| fmt("missing header".into()))??;
        let mut values = BTreeMap::new();
        let mut scored_by = BTreeMap::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let id: u64 = cols
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| fmt(format!("bad row {line:?}")))?;
            let v: f64 = cols
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| fmt(format!("bad row {line:?}")))?;
            let scorer: usize = cols.next().map_or(Ok(0), |c| c.parse()).map_err(|_| fmt(format!("bad row {line:?}")))?;
            if scorer >= provenance.len() || !v.is_finite() {
                return Err(fmt(format!("bad row {line:?}")));
            }
            if values.insert(id, v).is_some() {
                return Err(fmt(format!("id {id} listed twice")));
            }
            scored_by.insert(id, scorer);
        }
        let table = Self {
            values,
            provenance,
            scored_by,
            scheme,
        };
        if let Some(d) = meta.get("digest") {
            if *d != table.digest() {
                return Err(fmt("table digest does not match header".into()));
            }
        }
        Ok(table)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Digest of a model's architecture and parameter bits.
pub fn model_digest(model: &MlpModel) -> String {
    let mut h = Sha256::new();
    for s in &model.config().layer_sizes {
        h.update((*s as u64).to_le_bytes());
    }
    for t in model.parameters() {
        for v in t.values() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    for bn in model.norms() {
        for v in bn.running_mean.iter().chain(&bn.running_var) {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Validation loss per epoch and the epoch whose checkpoint was kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLog {
    pub epochs: Vec<EpochEval>,
    /// 1-based epoch with the lowest validation loss (first on ties).
    pub selected_epoch: usize,
}

impl CheckpointLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# selected_epoch={}", self.selected_epoch)?;
        writeln!(w, "epoch,validation_loss,validation_accuracy,selected")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.loss, e.accuracy, (e.epoch == self.selected_epoch) as u8)?;
        }
        Ok(())
    }
}

/// Settings for fitting an irreducible-loss model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlTraining {
    pub arch: MlpConfig,
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    32
}

/// Mean loss and accuracy of `model` on `ds` in evaluation mode.
pub fn eval_loss_accuracy(model: &MlpModel, ds: &LabeledDataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return arg_err("cannot evaluate on an empty dataset");
    }
    let logits = model.predict_logits(ds.features())?;
    let losses = cross_entropy(&logits, ds.labels())?;
    let correct = logits
        .iter_rows()
        .zip(ds.labels())
        .filter(|(row, &y)| crate::nn::argmax(row) == y)
        .count();
    let n = ds.len() as f64;
    Ok((losses.iter().sum::<f64>() / n, correct as f64 / n))
}

/// One pass of shuffled mini-batch training; returns the mean batch loss.
pub(crate) fn train_epoch(
    model: &mut MlpModel,
    opt: &mut Optimizer,
    ds: &LabeledDataset,
    batch_size: usize,
    rng: &mut rng::Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let x = ds.features().select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
        total += fit_batch(model, opt, &x, &y, None, rand::Rng::random(rng))? * chunk.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

/// A single optimizer step on a batch (train mode, batch statistics),
/// with per-example loss weights (default `1/n`). Returns the weighted loss
/// before the step.
pub(crate) fn fit_batch(
    model: &mut MlpModel,
    opt: &mut Optimizer,
    x: &crate::tensor::Tensor,
    labels: &[usize],
    weights: Option<&[f64]>,
    mask_seed: u64,
) -> Result<f64> {
    let n = labels.len();
    let uniform;
    let weights = match weights {
        Some(w) => w,
        None => {
            uniform = vec![1.0 / n as f64; n];
            &uniform
        }
    };
    let mode = Mode::Train { mask_seed };
    let pass = model.backward_weighted(x, labels, weights, mode, BnStats::Batch)?;
    opt.step(model, &pass.gradient)?;
    model.update_running_stats(&pass.stats, n);
    Ok(pass.loss)
}

/// Trains on `holdout` with uniformly shuffled mini-batches, evaluating the
/// mean loss on `validation` after every epoch, and returns the checkpoint
/// with the lowest validation loss.
pub fn train_il_model(
    holdout: &LabeledDataset,
    validation: &LabeledDataset,
    training: &IlTraining,
) -> Result<(MlpModel, CheckpointLog)> {
    if training.epochs == 0 {
        return arg_err("irreducible-loss training needs at least one epoch");
    }
    if holdout.is_empty() {
        return arg_err("holdout set is empty");
    }
    let mut model = MlpModel::new(training.arch.clone(), training.seed)?;
    let mut opt = Optimizer::new(training.optimizer.clone());
    let mut rng = rng::rng_for(training.seed, stream::SHUFFLE);
    let mut best: Option<(f64, MlpModel)> = None;
    let mut log = CheckpointLog {
        epochs: Vec::new(),
        selected_epoch: 0,
    };
    for epoch in 1..=training.epochs {
        train_epoch(&mut model, &mut opt, holdout, training.batch_size, &mut rng)?;
        let (loss, accuracy) = eval_loss_accuracy(&model, validation)?;
        log.epochs.push(EpochEval { epoch, loss, accuracy });
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, model.clone()));
            log.selected_epoch = epoch;
        }
    }
    Ok((best.expect("at least one epoch").1, log))
}

/// IL value of every example in `pool`: its cross-entropy under `model` in
/// evaluation mode (no dropout, running batch-norm statistics).
pub fn compute_il_table(model: &MlpModel, pool: &LabeledDataset) -> Result<IrreducibleLossTable> {
    let losses = cross_entropy(&model.predict_logits(pool.features())?, pool.labels())?;
    let values: BTreeMap<u64, f64> = pool.ids().iter().copied().zip(losses).collect();
    let scored_by = values.keys().map(|&id| (id, 0)).collect();
    Ok(IrreducibleLossTable {
        values,
        provenance: vec![format!("{}:{}", pool.content_hash(), model_digest(model))],
        scored_by,
        scheme: IlScheme::Holdout,
    })
}

/// IL tables without holdout data: a model fit on each half scores the
/// other half. Model `a` is trained on `half_a` (validated on `half_b`) and
/// vice versa. Returns the merged table and both fitted models.
pub fn compute_il_table_two_halves(
    half_a: &LabeledDataset,
    half_b: &LabeledDataset,
    training: &IlTraining,
) -> Result<(IrreducibleLossTable, [(MlpModel, CheckpointLog); 2])> {
    let ids_a: HashSet<u64> = half_a.ids().iter().copied().collect();
    if let Some(id) = half_b.ids().iter().find(|id| ids_a.contains(id)) {
        return arg_err(format!("halves overlap at example {id}"));
    }
    let (model_a, log_a) = train_il_model(half_a, half_b, training)?;
    let second = IlTraining {
        seed: rng::derive_seed(training.seed, 0x7477_6f),
        ..training.clone()
    };
    let (model_b, log_b) = train_il_model(half_b, half_a, &second)?;
    let on_b = compute_il_table(&model_a, half_b)?;
    let on_a = compute_il_table(&model_b, half_a)?;
    let mut values = on_a.values;
    let mut scored_by: BTreeMap<u64, usize> = values.keys().map(|&id| (id, 1)).collect();
    for (id, v) in on_b.values {
        values.insert(id, v);
        scored_by.insert(id, 0);
    }
    let provenance = vec![on_b.provenance[0].clone(), on_a.provenance[0].clone()];
    Ok((
        IrreducibleLossTable {
            values,
            provenance,
            scored_by,
            scheme: IlScheme::TwoHalves,
        },
        [(model_a, log_a), (model_b, log_b)],
    ))
}

/// A live irreducible-loss model that keeps learning from the acquired
/// batches, at a learning rate scaled relative to the target model.
#[derive(Clone, Debug)]
pub struct IlUpdater {
    model: MlpModel,
    optimizer: Optimizer,
}

impl IlUpdater {
    /// `target` is the target model's optimizer configuration; the IL model
    /// uses the same kind with learning rate `lr_scale · lr`.
    pub fn new(model: MlpModel, target: &OptimizerConfig, lr_scale: f64) -> Self {
        Self {
            model,
            optimizer: Optimizer::new(target.with_lr(target.lr() * lr_scale)),
        }
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn into_model(self) -> MlpModel {
        self.model
    }

    pub fn losses(&self, ds: &LabeledDataset) -> Result<Vec<f64>> {
        cross_entropy(&self.model.predict_logits(ds.features())?, ds.labels())
    }

    /// One optimizer step on the acquired batch.
    pub fn update(&mut self, batch: &LabeledDataset, mask_seed: u64) -> Result<()> {
        update_il_model(&mut self.model, &mut self.optimizer, batch, mask_seed)
    }
}

/// One gradient step of `model` on `batch` with the given optimizer state.
pub fn update_il_model(
    model: &mut MlpModel,
    optimizer: &mut Optimizer,
    batch: &LabeledDataset,
    mask_seed: u64,
) -> Result<()> {
    if batch.is_empty() {
        return Ok(());
    }
    fit_batch(model, optimizer, batch.features(), batch.labels(), None, mask_seed)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, split, SplitSpec};
    use crate::nn::Gradient;

    fn training(epochs: usize) -> IlTraining {
        IlTraining {
            arch: MlpConfig::new(vec![4, 16, 3]),
            epochs,
            optimizer: OptimizerConfig::adamw(1e-2),
            batch_size: 16,
            seed: 5,
        }
    }

    fn pools() -> (LabeledDataset, LabeledDataset) {
        let ds = gen_synthetic(3, 40, 4, 0.6, 9).unwrap();
        split(&ds, &SplitSpec::two_halves(1)).unwrap()
    }

    #[test]
    fn checkpoint_is_argmin_of_validation_loss() {
        let (ho, val) = pools();
        let (model, log) = train_il_model(&ho, &val, &training(8)).unwrap();
        assert_eq!(log.epochs.len(), 8);
        let mut best = 0;
        for (i, e) in log.epochs.iter().enumerate() {
            if e.loss < log.epochs[best].loss {
                best = i;
            }
        }
        assert_eq!(log.selected_epoch, best + 1);
        let (loss, _) = eval_loss_accuracy(&model, &val).unwrap();
        assert_eq!(loss, log.epochs[best].loss);
    }

    #[test]
    fn zero_epochs_rejected() {
        let (ho, val) = pools();
        assert!(matches!(train_il_model(&ho, &val, &training(0)), Err(Error::Argument(_))));
    }

    #[test]
    fn table_is_eval_mode_loss() {
        let (ho, val) = pools();
        let mut t = training(3);
        t.arch = t.arch.with_dropout(0.5);
        let (model, _) = train_il_model(&ho, &val, &t).unwrap();
        let a = compute_il_table(&model, &val).unwrap();
        let b = compute_il_table(&model, &val).unwrap();
        assert_eq!(a, b);
        for (i, &id) in val.ids().iter().enumerate() {
            let p = model.predict_proba(&val.features().select_rows(&[i])).unwrap();
            let oracle = -p.values()[val.labels()[i]].ln();
            assert!((a.get(id).unwrap() - oracle).abs() < 1e-9);
        }
        assert!(matches!(a.get(10_000), Err(Error::Lookup(10_000))));
        a.check_covers(&val).unwrap();
        assert!(a.check_covers(&ho).is_err());
    }

    #[test]
    fn two_halves_cross_scoring() {
        let (a, b) = pools();
        let (table, [(ma, _), (mb, _)]) = compute_il_table_two_halves(&a, &b, &training(3)).unwrap();
        assert_eq!(table.len(), a.len() + b.len());
        let da = format!("{}:{}", b.content_hash(), model_digest(&ma));
        let db = format!("{}:{}", a.content_hash(), model_digest(&mb));
        for (i, &id) in a.ids().iter().enumerate() {
            assert_eq!(table.scorer_of(id), Some(db.as_str()));
            let l = cross_entropy(&mb.predict_logits(&a.features().select_rows(&[i])).unwrap(), &[a.labels()[i]]).unwrap()[0];
            assert!((table.get(id).unwrap() - l).abs() < 1e-9);
        }
        for &id in b.ids() {
            assert_eq!(table.scorer_of(id), Some(da.as_str()));
        }
        assert!(compute_il_table_two_halves(&a, &a, &training(1)).is_err());
    }

    #[test]
    fn csv_round_trip_and_tamper() {
        let (a, b) = pools();
        let (table, _) = compute_il_table_two_halves(&a, &b, &training(2)).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = IrreducibleLossTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back, table);
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let row = lines[2].to_string();
        let mut cols: Vec<&str> = row.split(',').collect();
        cols[1] = "123.5";
        let edited = cols.join(",");
        lines[2] = &edited;
        assert!(IrreducibleLossTable::read_csv(lines.join("\n").as_bytes()).is_err());
    }

    #[test]
    fn updater_scales_learning_rate() {
        let (a, _) = pools();
        let model = MlpModel::new(MlpConfig::new(vec![4, 8, 3]), 2).unwrap();
        let target = OptimizerConfig::Sgd { lr: 0.5 };
        let mut up = IlUpdater::new(model.clone(), &target, 0.01);
        up.update(&a, 0).unwrap();
        let g: Gradient = model.backward(a.features(), a.labels(), Mode::Train { mask_seed: 0 }, BnStats::Batch).unwrap();
        for (after, (before, gi)) in up.model().parameters().iter().zip(model.parameters().iter().zip(&g.0)) {
            for ((x, y), d) in after.values().iter().zip(before.values()).zip(gi.values()) {
                assert!((x - (y - 0.005 * d)).abs() < 1e-12);
            }
        }
    }
}
