//! The experiment config: one TOML document, validated in full before any
//! command does work. Unknown keys are rejected at every level.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rholoss::il::{IlScheme, IlTraining};
use rholoss::ladder::{LadderConfig, Rung};
use rholoss::nn::MlpConfig;
use rholoss::optim::OptimizerConfig;
use rholoss::selection::{PolicyEntry, SelectionPolicy};
use rholoss::trainer::{IlUpdateMode, RunConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub il: IlConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Gaussian clusters, one per class.
    Synthetic,
    /// A pair of IDX files (MNIST layout).
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Keep only the first `limit` IDX examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Copies of each training example (1 = no duplication).
    #[serde(default = "one")]
    pub duplicate_factor: usize,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<RelevanceConfig>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of the whole pool used as the test set.
    #[serde(default = "quarter")]
    pub test_fraction: f64,
    /// Share of the remainder used as the holdout set.
    #[serde(default = "half")]
    pub holdout_fraction: f64,
}

fn quarter() -> f64 {
    0.25
}
fn half() -> f64 {
    0.5
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: quarter(),
            holdout_fraction: half(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    None,
    Uniform,
    /// Flips along the most confused class pairs of a reference model.
    Structured,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<usize>,
    /// Training epochs of the reference model for structured noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_epochs: Option<usize>,
}

pub const DEFAULT_NOISE_PAIRS: usize = 1;
pub const DEFAULT_REFERENCE_EPOCHS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceConfig {
    pub high_frac: f64,
    pub keep_frac: f64,
}

/// Hidden layers of an MLP; input and output sizes come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub batchnorm: bool,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            dropout: 0.0,
            batchnorm: false,
        }
    }
}

impl ArchConfig {
    pub fn mlp(&self, input: usize, classes: usize) -> MlpConfig {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(classes);
        MlpConfig::new(sizes).with_dropout(self.dropout).with_batchnorm(self.batchnorm)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.hidden.contains(&0) {
            return config_err(format!("{what}.arch: hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return config_err(format!("{what}.arch: dropout {} not in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlConfig {
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default = "default_il_epochs")]
    pub epochs: usize,
    #[serde(default = "default_scheme")]
    pub scheme: IlScheme,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_il_epochs() -> usize {
    40
}
fn default_scheme() -> IlScheme {
    IlScheme::Holdout
}
fn default_batch() -> usize {
    32
}

impl Default for IlConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            epochs: default_il_epochs(),
            scheme: default_scheme(),
            optimizer: OptimizerConfig::default(),
            batch_size: default_batch(),
            seed: 0,
        }
    }
}

impl IlConfig {
    pub fn training(&self, input: usize, classes: usize) -> IlTraining {
        IlTraining {
            arch: self.arch.mlp(input, classes),
            epochs: self.epochs,
            optimizer: self.optimizer.clone(),
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

/// One policy or a list of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Policies {
    One(PolicyEntry),
    Many(Vec<PolicyEntry>),
}

impl Default for Policies {
    fn default() -> Self {
        Policies::One(PolicyEntry::Name("rho-loss".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub policy: Policies,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default = "default_n_b")]
    pub n_b: usize,
    #[serde(default = "default_n_big", rename = "n_B")]
    pub n_big: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Target test accuracies in [0, 1] for the epochs-to-target report.
    #[serde(default)]
    pub targets: Vec<f64>,
    #[serde(default)]
    pub il_update: IlUpdateMode,
    #[serde(default = "default_il_lr_scale")]
    pub il_lr_scale: f64,
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub record_scores: bool,
}

fn default_n_b() -> usize {
    32
}
fn default_n_big() -> usize {
    320
}
fn default_epochs() -> usize {
    20
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_il_lr_scale() -> f64 {
    0.01
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            policy: Policies::default(),
            arch: ArchConfig::default(),
            n_b: default_n_b(),
            n_big: default_n_big(),
            epochs: default_epochs(),
            optimizer: OptimizerConfig::default(),
            seeds: default_seeds(),
            targets: Vec::new(),
            il_update: IlUpdateMode::Frozen,
            il_lr_scale: default_il_lr_scale(),
            eval_every: 0,
            record_scores: false,
        }
    }
}

impl RunSection {
    /// Parsed policies in config order, with `uniform` appended when targets
    /// are set and it is not already listed.
    pub fn policies(&self) -> Result<Vec<SelectionPolicy>> {
        let entries = match &self.policy {
            Policies::One(e) => vec![e.clone()],
            Policies::Many(v) => v.clone(),
        };
        if entries.is_empty() {
            return config_err("run.policy: at least one policy is required");
        }
        let mut out: Vec<SelectionPolicy> = Vec::new();
        for e in entries {
            let p = SelectionPolicy::try_from(e.into_spec()).map_err(|e| CliError::Config(format!("run.policy: {e}")))?;
            if out.iter().any(|q| q.name() == p.name()) {
                return config_err(format!("run.policy: `{}` listed twice", p.name()));
            }
            out.push(p);
        }
        if !self.targets.is_empty() && !out.contains(&SelectionPolicy::Uniform) {
            out.push(SelectionPolicy::Uniform);
        }
        Ok(out)
    }

    pub fn run_config(&self, policy: SelectionPolicy, seed: u64) -> RunConfig {
        RunConfig {
            n_b: self.n_b,
            n_big: self.n_big,
            epochs: self.epochs,
            optimizer: self.optimizer.clone(),
            policy,
            il_update: self.il_update,
            il_lr_scale: self.il_lr_scale,
            seed,
            eval_every: self.eval_every,
            targets: self.targets.clone(),
            record_scores: self.record_scores,
        }
    }

    fn validate(&self) -> Result<()> {
        self.arch.validate("run")?;
        if self.seeds.is_empty() {
            return config_err("run.seeds: at least one seed is required");
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return config_err("run.seeds: duplicate seed");
        }
        if self.epochs == 0 {
            return config_err("run.epochs must be positive");
        }
        let policies = self.policies()?;
        for p in policies {
            self.run_config(p, 0).validate().map_err(|e| CliError::Config(format!("run: {e}")))?;
        }
        check_optimizer(&self.optimizer, "run.optimizer")
    }
}

fn check_optimizer(opt: &OptimizerConfig, what: &str) -> Result<()> {
    let lr = opt.lr();
    if !(lr > 0.0 && lr.is_finite()) {
        return config_err(format!("{what}: learning rate must be positive, got {lr}"));
    }
    if let OptimizerConfig::AdamW {
        beta1,
        beta2,
        eps,
        weight_decay,
        ..
    } = *opt
    {
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 && weight_decay >= 0.0) {
            return config_err(format!("{what}: need 0 ≤ β < 1, ε > 0 and weight decay ≥ 0"));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    #[serde(default = "all_rungs")]
    pub rungs: Vec<Rung>,
    #[serde(default = "ladder_arch")]
    pub arch: ArchConfig,
    #[serde(default = "default_n_b")]
    pub n_b: usize,
    #[serde(default = "default_n_big", rename = "n_B")]
    pub n_big: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_ladder_il_epochs")]
    pub il_epochs: usize,
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_width: Option<usize>,
    #[serde(default = "default_ladder_dup")]
    pub duplicate_factor: usize,
    #[serde(default)]
    pub seed: u64,
}

fn all_rungs() -> Vec<Rung> {
    Rung::ALL.to_vec()
}
fn ladder_arch() -> ArchConfig {
    ArchConfig {
        hidden: vec![64, 64],
        ..ArchConfig::default()
    }
}
fn default_ladder_il_epochs() -> usize {
    30
}
fn default_ensemble() -> usize {
    5
}
fn default_budget() -> usize {
    5
}
fn default_ladder_dup() -> usize {
    5
}

impl LadderSection {
    pub fn to_core(&self, input: usize, classes: usize) -> LadderConfig {
        LadderConfig {
            arch: self.arch.mlp(input, classes),
            n_b: self.n_b,
            n_big: self.n_big,
            optimizer: self.optimizer.clone(),
            il_epochs: self.il_epochs,
            ensemble_size: self.ensemble_size,
            budget: self.budget,
            batch_size: self.batch_size,
            small_width: self.small_width,
            duplicate_factor: self.duplicate_factor,
            seed: self.seed,
        }
    }

    fn validate(&self) -> Result<()> {
        self.arch.validate("ladder")?;
        if self.rungs.is_empty() {
            return config_err("ladder.rungs: at least one rung is required");
        }
        check_optimizer(&self.optimizer, "ladder.optimizer")?;
        // input and class counts do not matter for the remaining checks
        self.to_core(1, 2).validate().map_err(|e| CliError::Config(format!("ladder: {e}")))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Candidate batch size, learning rate and weight decay, with the
    /// selected share n_b / n_B held at the run section's ratio.
    #[default]
    Grid,
    /// Candidate batch size only, with n_b fixed: varies the share of each
    /// candidate batch that is trained on.
    SelectionRatio,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub kind: SweepKind,
    #[serde(default, rename = "n_B", skip_serializing_if = "Option::is_none")]
    pub n_big: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<Vec<f64>>,
}

pub const GRID_N_BIG: [usize; 3] = [160, 320, 960];
pub const GRID_LR: [f64; 3] = [1e-4, 1e-3, 1e-2];
pub const GRID_WEIGHT_DECAY: [f64; 3] = [1e-3, 1e-2, 0.1];
pub const RATIO_N_BIG: [usize; 5] = [32, 64, 160, 320, 640];

/// One point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub n_b: usize,
    pub n_big: usize,
    pub lr: f64,
    pub weight_decay: Option<f64>,
}

impl SweepSection {
    pub fn cells(&self, run: &RunSection) -> Result<Vec<SweepCell>> {
        let lr0 = run.optimizer.lr();
        match self.kind {
            SweepKind::SelectionRatio => {
                if self.lr.is_some() || self.weight_decay.is_some() {
                    return config_err("sweep: selection-ratio sweeps vary n_B only");
                }
                let sizes = self.n_big.clone().unwrap_or_else(|| RATIO_N_BIG.to_vec());
                Ok(sizes
                    .into_iter()
                    .map(|n_big| SweepCell {
                        n_b: run.n_b,
                        n_big,
                        lr: lr0,
                        weight_decay: None,
                    })
                    .collect())
            }
            SweepKind::Grid => {
                if !matches!(run.optimizer, OptimizerConfig::AdamW { .. }) {
                    return config_err("sweep: the grid varies weight decay, so run.optimizer must be adamw");
                }
                let ratio = run.n_b as f64 / run.n_big as f64;
                let sizes = self.n_big.clone().unwrap_or_else(|| GRID_N_BIG.to_vec());
                let lrs = self.lr.clone().unwrap_or_else(|| GRID_LR.to_vec());
                let wds = self.weight_decay.clone().unwrap_or_else(|| GRID_WEIGHT_DECAY.to_vec());
                let mut out = Vec::new();
                for &n_big in &sizes {
                    for &lr in &lrs {
                        for &wd in &wds {
                            out.push(SweepCell {
                                n_b: ((ratio * n_big as f64).round() as usize).max(1),
                                n_big,
                                lr,
                                weight_decay: Some(wd),
                            });
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    fn validate(&self, run: &RunSection) -> Result<()> {
        let cells = self.cells(run)?;
        if cells.is_empty() {
            return config_err("sweep: no cells");
        }
        for c in &cells {
            if c.n_b > c.n_big {
                return config_err(format!("sweep: n_B = {} is smaller than n_b = {}", c.n_big, c.n_b));
            }
            if !(c.lr > 0.0 && c.lr.is_finite()) || c.weight_decay.is_some_and(|w| !(w >= 0.0)) {
                return config_err("sweep: learning rates must be positive and weight decays non-negative");
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Reads, parses and validates a config file. Relative IDX paths are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|source| CliError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset.images, &mut cfg.dataset.labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|source| CliError::Toml {
            path: PathBuf::from("<inline>"),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.il.arch.validate("il")?;
        if self.il.epochs == 0 || self.il.batch_size == 0 {
            return config_err("il: epochs and batch_size must be positive");
        }
        check_optimizer(&self.il.optimizer, "il.optimizer")?;
        self.run.validate()?;
        if self.run.il_update == IlUpdateMode::Original && self.il.scheme == IlScheme::TwoHalves {
            return config_err("run.il_update = \"original\" needs a single IL model; use il.scheme = \"holdout\"");
        }
        if let Some(l) = &self.ladder {
            l.validate()?;
        }
        if let Some(s) = &self.sweep {
            s.validate(&self.run)?;
        }
        Ok(())
    }

    /// Replaces the run seeds and the ladder seed. Dataset and IL seeds stay,
    /// so prepared data and IL tables remain valid.
    pub fn apply_seed_override(&mut self, seed: u64) {
        self.run.seeds = vec![seed];
        if let Some(l) = &mut self.ladder {
            l.seed = seed;
        }
    }

    /// Hash of everything that shapes results except the output location
    /// and the run and ladder seeds, which are recorded per file instead.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.run.seeds.clear();
        if let Some(l) = &mut c.ladder {
            l.seed = 0;
        }
        short_hash(&c.to_toml())
    }

    /// Hash of the dataset section alone; prepared data is keyed by it.
    pub fn dataset_hash(&self) -> String {
        short_hash(&toml::to_string(&self.dataset).expect("dataset serializes"))
    }

    /// Hash of the dataset and IL sections; IL tables are keyed by it.
    pub fn il_hash(&self) -> String {
        let text = format!(
            "{}\n{}",
            toml::to_string(&self.dataset).expect("dataset serializes"),
            toml::to_string(&self.il).expect("il serializes")
        );
        short_hash(&text)
    }
}

pub(crate) fn short_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

impl DatasetConfig {
    fn validate(&self) -> Result<()> {
        let synthetic = [
            ("classes", self.classes.is_some()),
            ("per_class", self.per_class.is_some()),
            ("dim", self.dim.is_some()),
            ("spread", self.spread.is_some()),
        ];
        let idx = [
            ("images", self.images.is_some()),
            ("labels", self.labels.is_some()),
            ("limit", self.limit.is_some()),
        ];
        let (needed, foreign) = match self.kind {
            DatasetKind::Synthetic => (&synthetic[..], &idx[..]),
            DatasetKind::Idx => (&idx[..2], &synthetic[..]),
        };
        if let Some((k, _)) = needed.iter().find(|(_, present)| !present) {
            return config_err(format!("dataset.{k} is required for kind {:?}", self.kind));
        }
        if let Some((k, _)) = foreign.iter().find(|(_, present)| *present) {
            return config_err(format!("dataset.{k} does not apply to kind {:?}", self.kind));
        }
        if self.kind == DatasetKind::Synthetic {
            if self.classes < Some(2) || self.per_class == Some(0) || self.dim == Some(0) {
                return config_err("dataset: need at least 2 classes, 1 example per class and 1 dimension");
            }
            if !self.spread.is_some_and(|s| s > 0.0 && s.is_finite()) {
                return config_err("dataset.spread must be positive");
            }
        }
        if self.limit == Some(0) {
            return config_err("dataset.limit must be positive");
        }
        if self.duplicate_factor == 0 {
            return config_err("dataset.duplicate_factor must be at least 1");
        }
        for (k, f) in [
            ("test_fraction", self.split.test_fraction),
            ("holdout_fraction", self.split.holdout_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return config_err(format!("dataset.split.{k} = {f} not in (0, 1)"));
            }
        }
        let n = &self.noise;
        match n.kind {
            NoiseKind::None if n.p != 0.0 => return config_err("dataset.noise.p needs a noise kind"),
            _ if !(0.0..=1.0).contains(&n.p) => return config_err(format!("dataset.noise.p = {} not in [0, 1]", n.p)),
            NoiseKind::Structured if n.pairs == Some(0) => return config_err("dataset.noise.pairs must be positive"),
            NoiseKind::None | NoiseKind::Uniform if n.pairs.is_some() || n.reference_epochs.is_some() => {
                return config_err("dataset.noise.pairs and reference_epochs apply to structured noise only")
            }
            _ => {}
        }
        if let Some(r) = &self.relevance {
            if !(r.high_frac > 0.0 && r.high_frac <= 1.0 && r.keep_frac > 0.0 && r.keep_frac <= 1.0) {
                return config_err("dataset.relevance: high_frac and keep_frac must be in (0, 1]");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [dataset]
        kind = "synthetic"
        classes = 3
        per_class = 20
        dim = 4
        spread = 0.5
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.run.n_b, 32);
        assert_eq!(cfg.run.n_big, 320);
        assert_eq!(cfg.il.epochs, 40);
        assert_eq!(cfg.run.policies().unwrap(), vec![SelectionPolicy::RhoLoss]);
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        for extra in ["\ncolour = 1", "\n[il]\nepoch = 3", "\n[run]\nn_b = 4\nnb = 3", "\n[dataset.noise]\nkind = \"uniform\"\nprob = 0.1"] {
            let text = format!("{MINIMAL}{extra}");
            assert!(ExperimentConfig::from_toml(&text).is_err(), "accepted {extra:?}");
        }
    }

    #[test]
    fn kind_specific_fields_are_checked() {
        let idx_with_spread = "[dataset]\nkind = \"idx\"\nimages = \"a\"\nlabels = \"b\"\nspread = 0.3";
        assert!(ExperimentConfig::from_toml(idx_with_spread).is_err());
        let missing_dim = "[dataset]\nkind = \"synthetic\"\nclasses = 3\nper_class = 2\nspread = 0.3";
        assert!(ExperimentConfig::from_toml(missing_dim).is_err());
        let p_without_kind = format!("{MINIMAL}\n[dataset.noise]\np = 0.1");
        assert!(ExperimentConfig::from_toml(&p_without_kind).is_err());
    }

    #[test]
    fn targets_add_a_uniform_baseline() {
        let text = format!("{MINIMAL}\n[run]\npolicy = [\"rho-loss\", \"train-loss\"]\ntargets = [0.8]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let names: Vec<_> = cfg.run.policies().unwrap().iter().map(|p| p.name()).collect();
        assert_eq!(names, ["rho-loss", "train-loss", "uniform"]);
    }

    #[test]
    fn policy_tables_and_duplicates() {
        let text = format!("{MINIMAL}\n[run]\npolicy = [{{ kind = \"grad-norm-is\", temperature = 2.0 }}, \"uniform\"]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.run.policies().unwrap().len(), 2);
        let dup = format!("{MINIMAL}\n[run]\npolicy = [\"uniform\", \"uniform\"]");
        assert!(ExperimentConfig::from_toml(&dup).is_err());
    }

    #[test]
    fn default_grid_has_27_cells_at_fixed_ratio() {
        let text = format!("{MINIMAL}\n[sweep]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let cells = cfg.sweep.as_ref().unwrap().cells(&cfg.run).unwrap();
        assert_eq!(cells.len(), 27);
        assert!(cells.iter().all(|c| c.n_b * 10 == c.n_big));
        assert_eq!(cells[0].lr, 1e-4);
        assert_eq!(cells[26].weight_decay, Some(0.1));
    }

    #[test]
    fn hash_ignores_seeds_and_output_dir() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        b.apply_seed_override(9);
        assert_eq!(a.config_hash(), b.config_hash());
        b.run.epochs += 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.dataset_hash(), b.dataset_hash());
    }

    #[test]
    fn round_trips_through_toml() {
        let text = format!("{MINIMAL}\n[run]\npolicy = [\"rho-loss\", {{ kind = \"bald\", mc_samples = 4 }}]\n[ladder]\n[sweep]\nkind = \"selection-ratio\"");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
