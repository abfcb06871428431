//! Fidelity of cheaper selection pipelines against an ensemble reference.
//!
//! The reference pipeline (`approx0`) keeps an ensemble target model trained
//! to convergence on the acquired data and an ensemble IL model trained to
//! convergence on holdout plus acquired data. Each rung drops one more piece:
//!
//! | rung | target | IL model |
//! |------|--------|----------|
//! | `approx1a` | single model, converged | converged on holdout + acquired |
//! | `approx1b` | single model, one step per batch | one step per batch |
//! | `approx2` | single model, one step per batch | frozen |
//! | `approx3` | single model, one step per batch | frozen, half width |
//!
//! Rungs from `approx1b` on run over the dataset duplicated `duplicate_factor`
//! times and are compared with a reference run on that same duplicated data.
//! Both pipelines see the same candidate batches; each picks and learns from
//! its own selection, so their model states drift apart by design.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{duplicate, LabeledDataset};
use crate::error::{arg_err, Error, Result};
use crate::il::{fit_batch, train_epoch, train_il_model, IlTraining};
use crate::nn::{EnsembleModel, MlpConfig, MlpModel};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{self, stream};
use crate::selection::select_top_k;

/// Spearman rank correlation with average ranks for ties. `None` when either
/// input is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return crate::error::dim_err(format!("lengths {} and {} differ", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return arg_err("rank correlation needs at least two points");
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return arg_err("rank correlation of NaN");
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// 1-based ranks, tied values sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Relative drop in mean training loss below which training stops.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-3;

/// Full shuffled passes over `data` until the mean pass loss improves by
/// less than [`CONVERGENCE_TOLERANCE`] (relative) or `budget` passes have
/// run. Returns the number of passes.
pub fn train_to_convergence(
    model: &mut MlpModel,
    optimizer: &mut Optimizer,
    data: &LabeledDataset,
    budget: usize,
    batch_size: usize,
    seed: u64,
) -> Result<usize> {
    if data.is_empty() {
        return Ok(0);
    }
    let mut rng = rng::rng_for(seed, stream::SHUFFLE);
    let mut previous: Option<f64> = None;
    for pass in 1..=budget {
        let loss = train_epoch(model, optimizer, data, batch_size, &mut rng)?;
        if let Some(p) = previous {
            if p - loss < CONVERGENCE_TOLERANCE * p.abs() {
                return Ok(pass);
            }
        }
        previous = Some(loss);
    }
    Ok(budget)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rung {
    #[serde(rename = "approx0")]
    Approx0,
    #[serde(rename = "approx1a")]
    Approx1a,
    #[serde(rename = "approx1b")]
    Approx1b,
    #[serde(rename = "approx2")]
    Approx2,
    #[serde(rename = "approx3")]
    Approx3,
}

impl Rung {
    pub const ALL: [Rung; 5] = [Rung::Approx0, Rung::Approx1a, Rung::Approx1b, Rung::Approx2, Rung::Approx3];

    pub fn name(self) -> &'static str {
        match self {
            Rung::Approx0 => "approx0",
            Rung::Approx1a => "approx1a",
            Rung::Approx1b => "approx1b",
            Rung::Approx2 => "approx2",
            Rung::Approx3 => "approx3",
        }
    }

    /// Published mean rank correlation for the rung, kept for side-by-side
    /// reporting only.
    pub fn reference_rho(self) -> Option<f64> {
        match self {
            Rung::Approx0 => None,
            Rung::Approx1a => Some(0.75),
            Rung::Approx1b => Some(0.76),
            Rung::Approx2 => Some(0.63),
            Rung::Approx3 => Some(0.51),
        }
    }

    /// Whether the rung runs on duplicated data.
    pub fn duplicated(self) -> bool {
        matches!(self, Rung::Approx1b | Rung::Approx2 | Rung::Approx3)
    }
}

impl fmt::Display for Rung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rung {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rung::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown rung `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    /// Target architecture; the IL model uses the same one except in
    /// `approx3`.
    pub arch: MlpConfig,
    #[serde(default = "default_n_b")]
    pub n_b: usize,
    #[serde(default = "default_n_big", rename = "n_B")]
    pub n_big: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Epochs for the initial IL models on holdout.
    #[serde(default = "default_il_epochs")]
    pub il_epochs: usize,
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    /// Maximum passes per acquisition when training to convergence.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Hidden width of the `approx3` IL model; half the target width when
    /// absent.
    #[serde(default)]
    pub small_width: Option<usize>,
    #[serde(default = "default_dup")]
    pub duplicate_factor: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_b() -> usize {
    32
}
fn default_n_big() -> usize {
    320
}
fn default_il_epochs() -> usize {
    10
}
fn default_ensemble() -> usize {
    5
}
fn default_budget() -> usize {
    5
}
fn default_batch() -> usize {
    32
}
fn default_dup() -> usize {
    5
}

impl LadderConfig {
    pub fn new(arch: MlpConfig, seed: u64) -> Self {
        Self {
            arch,
            n_b: default_n_b(),
            n_big: default_n_big(),
            optimizer: OptimizerConfig::default(),
            il_epochs: default_il_epochs(),
            ensemble_size: default_ensemble(),
            budget: default_budget(),
            batch_size: default_batch(),
            small_width: None,
            duplicate_factor: default_dup(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.n_b == 0 || self.n_b > self.n_big {
            return arg_err(format!("need 1 ≤ n_b ≤ n_B, got {} and {}", self.n_b, self.n_big));
        }
        if self.ensemble_size == 0 || self.duplicate_factor == 0 || self.il_epochs == 0 {
            return arg_err("ensemble size, duplication factor and IL epochs must be positive");
        }
        Ok(())
    }

    /// Architecture of the `approx3` IL model.
    pub fn small_arch(&self) -> MlpConfig {
        let sizes = &self.arch.layer_sizes;
        let mut small = sizes.clone();
        let last = sizes.len() - 1;
        for s in &mut small[1..last] {
            *s = self.small_width.unwrap_or((*s / 2).max(1));
        }
        MlpConfig {
            layer_sizes: small,
            ..self.arch.clone()
        }
    }
}

/// Something that scores candidate batches and learns from its picks.
pub trait Scorer {
    fn score(&mut self, candidates: &LabeledDataset, seed: u64) -> Result<Vec<f64>>;
    fn acquire(&mut self, batch: &LabeledDataset, seed: u64) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum IlMode {
    Converged,
    Stepped,
    Frozen,
}

struct Member {
    model: MlpModel,
    optimizer: Optimizer,
}

impl Member {
    fn new(model: MlpModel, cfg: &OptimizerConfig) -> Self {
        Self {
            model,
            optimizer: Optimizer::new(cfg.clone()),
        }
    }
}

/// One selection pipeline of the ladder.
pub struct Pipeline {
    target: Vec<Member>,
    il: Vec<Member>,
    converge: bool,
    il_mode: IlMode,
    holdout: LabeledDataset,
    acquired: Option<LabeledDataset>,
    budget: usize,
    batch_size: usize,
}

fn ensemble_losses(members: &[Member], ds: &LabeledDataset) -> Result<Vec<f64>> {
    let models: Vec<MlpModel> = members.iter().map(|m| m.model.clone()).collect();
    EnsembleModel::from_members(models)?.losses(ds.features(), ds.labels())
}

impl Pipeline {
    /// `il_models` are the IL models fitted on holdout, one per ensemble
    /// member.
    pub fn new(rung: Rung, cfg: &LadderConfig, il_models: Vec<MlpModel>, holdout: LabeledDataset) -> Result<Self> {
        let k = if rung == Rung::Approx0 { cfg.ensemble_size } else { 1 };
        if il_models.len() != k {
            return arg_err(format!("rung {rung} needs {k} IL models, got {}", il_models.len()));
        }
        let target = (0..k)
            .map(|i| {
                let seed = rng::derive_seed(cfg.seed, stream::ENSEMBLE + 100 * i as u64);
                Ok(Member::new(MlpModel::new(cfg.arch.clone(), seed)?, &cfg.optimizer))
            })
            .collect::<Result<_>>()?;
        let il = il_models.into_iter().map(|m| Member::new(m, &cfg.optimizer)).collect();
        let (converge, il_mode) = match rung {
            Rung::Approx0 | Rung::Approx1a => (true, IlMode::Converged),
            Rung::Approx1b => (false, IlMode::Stepped),
            Rung::Approx2 | Rung::Approx3 => (false, IlMode::Frozen),
        };
        Ok(Self {
            target,
            il,
            converge,
            il_mode,
            holdout,
            acquired: None,
            budget: cfg.budget,
            batch_size: cfg.batch_size,
        })
    }
}

impl Scorer for Pipeline {
    fn score(&mut self, candidates: &LabeledDataset, _seed: u64) -> Result<Vec<f64>> {
        let train = ensemble_losses(&self.target, candidates)?;
        let il = ensemble_losses(&self.il, candidates)?;
        Ok(train.iter().zip(&il).map(|(a, b)| a - b).collect())
    }

    fn acquire(&mut self, batch: &LabeledDataset, seed: u64) -> Result<()> {
        let acquired = match self.acquired.take() {
            Some(a) => a.concat(batch)?,
            None => batch.clone(),
        };
        for (i, m) in self.target.iter_mut().enumerate() {
            let s = rng::derive_seed(seed, i as u64);
            if self.converge {
                train_to_convergence(&mut m.model, &mut m.optimizer, &acquired, self.budget, self.batch_size, s)?;
            } else {
                fit_batch(&mut m.model, &mut m.optimizer, batch.features(), batch.labels(), None, s)?;
            }
        }
        match self.il_mode {
            IlMode::Frozen => {}
            IlMode::Stepped => {
                for (i, m) in self.il.iter_mut().enumerate() {
                    let s = rng::derive_seed(seed, 1000 + i as u64);
                    fit_batch(&mut m.model, &mut m.optimizer, batch.features(), batch.labels(), None, s)?;
                }
            }
            IlMode::Converged => {
                let pool = self.holdout.concat(&acquired)?;
                for (i, m) in self.il.iter_mut().enumerate() {
                    let s = rng::derive_seed(seed, 1000 + i as u64);
                    train_to_convergence(&mut m.model, &mut m.optimizer, &pool, self.budget, self.batch_size, s)?;
                }
            }
        }
        self.acquired = Some(acquired);
        Ok(())
    }
}

/// Scores of one pipeline over the first epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTrace {
    /// Candidate ids per step.
    pub candidates: Vec<Vec<u64>>,
    pub scores: Vec<Vec<f64>>,
}

/// Candidate batches of the first epoch: a seeded permutation cut into
/// chunks of `n_big`.
pub fn first_epoch_schedule(data: &LabeledDataset, n_big: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::rng_for(seed, stream::SHUFFLE));
    order.chunks(n_big.max(1)).map(<[usize]>::to_vec).collect()
}

/// Runs `scorer` through the first epoch of `data`, picking the top
/// `n_b / n_big` share of each candidate batch.
pub fn trace_first_epoch(scorer: &mut dyn Scorer, data: &LabeledDataset, n_b: usize, n_big: usize, seed: u64) -> Result<ScoreTrace> {
    let mut trace = ScoreTrace {
        candidates: Vec::new(),
        scores: Vec::new(),
    };
    let ratio = n_b as f64 / n_big as f64;
    for (t, chunk) in first_epoch_schedule(data, n_big, seed).into_iter().enumerate() {
        let step_seed = rng::derive_seed(seed, (1 << 32) + t as u64);
        let candidates = data.subset(&chunk);
        let scores = scorer.score(&candidates, step_seed)?;
        let k = if chunk.len() >= n_big {
            n_b
        } else {
            ((ratio * chunk.len() as f64).round() as usize).clamp(1, chunk.len())
        };
        let picked = select_top_k(&scores, k, step_seed)?;
        scorer.acquire(&candidates.subset(&picked), step_seed)?;
        trace.candidates.push(candidates.ids().to_vec());
        trace.scores.push(scores);
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderResult {
    pub rung: Rung,
    /// Per-step correlation with the reference; `None` where undefined.
    pub per_step: Vec<Option<f64>>,
}

impl LadderResult {
    /// Mean over the steps where the correlation is defined.
    pub fn mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.per_step.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Share of all steps with a defined, strictly positive correlation.
    pub fn positive_fraction(&self) -> f64 {
        if self.per_step.is_empty() {
            return 0.0;
        }
        self.per_step.iter().filter(|r| r.is_some_and(|v| v > 0.0)).count() as f64 / self.per_step.len() as f64
    }
}

/// Step-wise correlation of two traces over the same schedule.
pub fn compare_traces(rung: Rung, reference: &ScoreTrace, other: &ScoreTrace) -> Result<LadderResult> {
    if reference.candidates != other.candidates {
        return Err(Error::Setup(format!("rung {rung} saw different candidate batches than the reference")));
    }
    let per_step = reference
        .scores
        .iter()
        .zip(&other.scores)
        .map(|(a, b)| if a.len() < 2 { Ok(None) } else { spearman(a, b) })
        .collect::<Result<_>>()?;
    Ok(LadderResult { rung, per_step })
}

/// IL models fitted on `holdout` (validated on `validation`) for a rung.
pub fn initial_il_models(rung: Rung, cfg: &LadderConfig, holdout: &LabeledDataset, validation: &LabeledDataset) -> Result<Vec<MlpModel>> {
    let k = if rung == Rung::Approx0 { cfg.ensemble_size } else { 1 };
    let arch = if rung == Rung::Approx3 { cfg.small_arch() } else { cfg.arch.clone() };
    (0..k)
        .map(|i| {
            let training = IlTraining {
                arch: arch.clone(),
                epochs: cfg.il_epochs,
                optimizer: cfg.optimizer.clone(),
                batch_size: cfg.batch_size,
                seed: rng::derive_seed(cfg.seed, 0x696c_0000 + i as u64),
            };
            Ok(train_il_model(holdout, validation, &training)?.0)
        })
        .collect()
}

/// Runs the reference pipeline and each requested rung over the first epoch
/// of `train` (duplicated for the rungs that need it) and correlates their
/// per-step scores. IL models start from `holdout`, checkpointed on
/// `validation`.
pub fn run_ladder(
    train: &LabeledDataset,
    holdout: &LabeledDataset,
    validation: &LabeledDataset,
    cfg: &LadderConfig,
    rungs: &[Rung],
) -> Result<Vec<LadderResult>> {
    cfg.validate()?;
    let duplicated = if rungs.iter().any(|r| r.duplicated()) {
        Some(duplicate(train, cfg.duplicate_factor)?)
    } else {
        None
    };
    let data_for = |r: Rung| if r.duplicated() { duplicated.as_ref().expect("built above") } else { train };
    let trace = |r: Rung, data: &LabeledDataset| -> Result<ScoreTrace> {
        let il = initial_il_models(r, cfg, holdout, validation)?;
        let mut p = Pipeline::new(r, cfg, il, holdout.clone())?;
        trace_first_epoch(&mut p, data, cfg.n_b, cfg.n_big, cfg.seed)
    };
    let mut reference_base = None;
    let mut reference_dup = None;
    let mut out = Vec::new();
    for &r in rungs {
        let data = data_for(r);
        let slot = if r.duplicated() { &mut reference_dup } else { &mut reference_base };
        if slot.is_none() {
            *slot = Some(trace(Rung::Approx0, data)?);
        }
        let reference = slot.as_ref().expect("set above");
        let result = if r == Rung::Approx0 {
            compare_traces(r, reference, reference)?
        } else {
            compare_traces(r, reference, &trace(r, data)?)?
        };
        out.push(result);
    }
    Ok(out)
}

/// `rung,step,rho` rows (`NA` where undefined) followed by summary rows
/// whose step column is `mean`, `positive_fraction` or `reference`.
pub fn write_ladder_csv<W: Write>(mut w: W, header: &str, results: &[LadderResult]) -> Result<()> {
    writeln!(w, "# {header}")?;
    writeln!(w, "rung,step,rho")?;
    let na = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    for r in results {
        for (t, rho) in r.per_step.iter().enumerate() {
            writeln!(w, "{},{},{}", r.rung, t + 1, na(*rho))?;
        }
    }
    for r in results {
        writeln!(w, "{},mean,{}", r.rung, na(r.mean()))?;
        writeln!(w, "{},positive_fraction,{}", r.rung, r.positive_fraction())?;
        if let Some(p) = r.rung.reference_rho() {
            writeln!(w, "{},reference,{}", r.rung, p)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, inject_uniform_noise, split, SplitSpec};

    fn brute(xs: &[f64], ys: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|x| {
                    let less = v.iter().filter(|y| *y < x).count() as f64;
                    let eq = v.iter().filter(|y| *y == x).count() as f64;
                    less + (eq + 1.0) / 2.0
                })
                .collect()
        };
        let (a, b) = (rank(xs), rank(ys));
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &x).unwrap(), Some(1.0));
        let rev = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&x, &rev).unwrap(), Some(-1.0));
        let y = [5.0, 6.0, 7.0, 8.0, 7.0];
        let r = spearman(&x, &y).unwrap().unwrap();
        assert!((r - brute(&x, &y)).abs() < 1e-12);
        assert_eq!(spearman(&x, &[2.0; 5]).unwrap(), None);
        assert!(spearman(&x, &y[..4]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn convergence_budget() {
        let ds = gen_synthetic(2, 20, 3, 0.05, 1).unwrap();
        let m0 = MlpModel::new(MlpConfig::new(vec![3, 8, 2]), 0).unwrap();
        let mut m = m0.clone();
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.05));
        assert_eq!(train_to_convergence(&mut m, &mut opt, &ds, 0, 8, 1).unwrap(), 0);
        assert_eq!(m, m0);
        let passes = train_to_convergence(&mut m, &mut opt, &ds, 60, 8, 1).unwrap();
        assert!(passes >= 2);
        let (loss, _) = crate::il::eval_loss_accuracy(&m, &ds).unwrap();
        assert!(loss < 0.01, "loss {loss}");
    }

    #[test]
    fn small_arch_halves_hidden_layers() {
        let cfg = LadderConfig::new(MlpConfig::new(vec![4, 64, 32, 3]), 0);
        assert_eq!(cfg.small_arch().layer_sizes, vec![4, 32, 16, 3]);
        let cfg = LadderConfig {
            small_width: Some(10),
            ..cfg
        };
        assert_eq!(cfg.small_arch().layer_sizes, vec![4, 10, 10, 3]);
    }

    #[test]
    fn self_comparison_and_determinism() {
        let ds = inject_uniform_noise(&gen_synthetic(3, 40, 4, 0.7, 2).unwrap(), 0.1, 2).unwrap();
        let (train, rest) = split(&ds, &SplitSpec::holdout(0.5, 3)).unwrap();
        let (holdout, validation) = split(&rest, &SplitSpec::two_halves(4)).unwrap();
        let mut cfg = LadderConfig::new(MlpConfig::new(vec![4, 8, 3]), 5);
        cfg.n_big = 20;
        cfg.n_b = 2;
        cfg.ensemble_size = 2;
        cfg.budget = 2;
        cfg.il_epochs = 2;
        cfg.duplicate_factor = 2;
        let rungs = [Rung::Approx0, Rung::Approx2];
        let a = run_ladder(&train, &holdout, &validation, &cfg, &rungs).unwrap();
        let b = run_ladder(&train, &holdout, &validation, &cfg, &rungs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].mean(), Some(1.0));
        assert_eq!(a[1].per_step.len(), 6);
        assert!(a[1].per_step.iter().flatten().all(|r| (-1.0..=1.0).contains(r)));
    }
}
