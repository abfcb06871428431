use std::path::PathBuf;

use rholoss::data::{
    duplicate, gen_synthetic, inject_structured_noise, inject_uniform_noise, load_idx, make_relevance_skew, split,
    LabeledDataset, SplitSpec,
};
use rholoss::il::{train_il_model, IlTraining};
use rholoss::optim::OptimizerConfig;
use rholoss::rng::derive_seed;
use rholoss::trainer::confusion_matrix;

use crate::artifacts::{header_matches, stamp, write_atomic, Layout, Overwrite};
use crate::config::{
    ArchConfig, DatasetConfig, DatasetKind, ExperimentConfig, NoiseKind, DEFAULT_NOISE_PAIRS, DEFAULT_REFERENCE_EPOCHS,
};
use crate::error::{config_err, CliError, Result};

pub const SPLITS: [&str; 3] = ["train", "holdout", "test"];

// sub-streams of the dataset seed
const RELEVANCE: u64 = 1;
const TEST_SPLIT: u64 = 2;
const HOLDOUT_SPLIT: u64 = 3;
const TRAIN_NOISE: u64 = 4;
const HOLDOUT_NOISE: u64 = 5;
const REFERENCE: u64 = 6;

#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: LabeledDataset,
    pub holdout: LabeledDataset,
    pub test: LabeledDataset,
}

impl Prepared {
    fn get(&self, split: &str) -> &LabeledDataset {
        match split {
            "train" => &self.train,
            "holdout" => &self.holdout,
            _ => &self.test,
        }
    }
}

/// Generate or load, skew relevance over the whole pool, split off test,
/// split the rest into train and holdout, corrupt labels of train and
/// holdout (never test), then duplicate train.
pub fn build_datasets(d: &DatasetConfig) -> Result<Prepared> {
    let mut all = match d.kind {
        DatasetKind::Synthetic => gen_synthetic(
            d.classes.unwrap_or_default(),
            d.per_class.unwrap_or_default(),
            d.dim.unwrap_or_default(),
            d.spread.unwrap_or_default(),
            d.seed,
        )?,
        DatasetKind::Idx => {
            let (Some(images), Some(labels)) = (&d.images, &d.labels) else {
                return config_err("dataset: idx needs images and labels");
            };
            let ds = load_idx(images, labels)?;
            match d.limit {
                Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()),
                _ => ds,
            }
        }
    };
    if let Some(r) = &d.relevance {
        all = make_relevance_skew(&all, r.high_frac, r.keep_frac, derive_seed(d.seed, RELEVANCE))?;
    }
    let (rest, test) = split(&all, &SplitSpec::holdout(d.split.test_fraction, derive_seed(d.seed, TEST_SPLIT)))?;
    let (mut train, mut holdout) =
        split(&rest, &SplitSpec::holdout(d.split.holdout_fraction, derive_seed(d.seed, HOLDOUT_SPLIT)))?;
    let (train_seed, holdout_seed) = (derive_seed(d.seed, TRAIN_NOISE), derive_seed(d.seed, HOLDOUT_NOISE));
    match d.noise.kind {
        NoiseKind::None => {}
        NoiseKind::Uniform => {
            train = inject_uniform_noise(&train, d.noise.p, train_seed)?;
            holdout = inject_uniform_noise(&holdout, d.noise.p, holdout_seed)?;
        }
        NoiseKind::Structured => {
            // confusions of a model fit on the clean holdout, measured on train
            let reference = IlTraining {
                arch: ArchConfig::default().mlp(all.dim(), all.classes()),
                epochs: d.noise.reference_epochs.unwrap_or(DEFAULT_REFERENCE_EPOCHS),
                optimizer: OptimizerConfig::default(),
                batch_size: 32,
                seed: derive_seed(d.seed, REFERENCE),
            };
            let (model, _) = train_il_model(&holdout, &train, &reference)?;
            let confusion = confusion_matrix(&model, &train)?;
            let pairs = d.noise.pairs.unwrap_or(DEFAULT_NOISE_PAIRS);
            train = inject_structured_noise(&train, &confusion, pairs, d.noise.p, train_seed)?;
            holdout = inject_structured_noise(&holdout, &confusion, pairs, d.noise.p, holdout_seed)?;
        }
    }
    if d.duplicate_factor > 1 {
        train = duplicate(&train, d.duplicate_factor)?;
    }
    Ok(Prepared { train, holdout, test })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PrepareOutcome {
    Written(Vec<PathBuf>),
    /// All splits already exist for this dataset section.
    UpToDate,
}

/// Writes `data/{train,holdout,test}.csv`. Rerunning with an unchanged
/// dataset section is a no-op; a changed one needs `--force`.
pub fn cmd_prepare(cfg: &ExperimentConfig, layout: &Layout, overwrite: Overwrite) -> Result<PrepareOutcome> {
    let dataset_hash = cfg.dataset_hash();
    let mut all_current = true;
    for s in SPLITS {
        let path = layout.data(s);
        match header_matches(&path, "dataset_hash", &dataset_hash)? {
            Some(true) => {}
            Some(false) if overwrite != Overwrite::Force => return Err(CliError::Exists(path)),
            _ => all_current = false,
        }
    }
    if all_current && overwrite != Overwrite::Force {
        return Ok(PrepareOutcome::UpToDate);
    }
    let prepared = build_datasets(&cfg.dataset)?;
    let mut written = Vec::new();
    for s in SPLITS {
        let mut buf = Vec::new();
        prepared.get(s).write_csv(&mut buf)?;
        let text = String::from_utf8(buf).expect("dataset CSV is UTF-8");
        let text = stamp(
            &text,
            &[
                ("split", s.to_string()),
                ("config_hash", cfg.config_hash()),
                ("dataset_hash", dataset_hash.clone()),
                ("seed", cfg.dataset.seed.to_string()),
            ],
        );
        let path = layout.data(s);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(PrepareOutcome::Written(written))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "[dataset]\nkind = \"synthetic\"\nclasses = 4\nper_class = 50\ndim = 3\nspread = 0.4\nseed = 7\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn splits_partition_the_pool_and_test_stays_clean() {
        let c = cfg("duplicate_factor = 2\n[dataset.noise]\nkind = \"uniform\"\np = 0.3");
        let p = build_datasets(&c.dataset).unwrap();
        assert_eq!(p.test.len(), 50);
        assert_eq!(p.holdout.len(), 75);
        assert_eq!(p.train.len(), 150);
        assert_eq!(p.test.corrupted_count(), 0);
        assert!(p.train.corrupted_count() > 0 && p.holdout.corrupted_count() > 0);
        let originals = p.train.duplicate_of().iter().filter(|d| d.is_none()).count();
        assert_eq!(originals, 75);
    }

    #[test]
    fn structured_noise_flips_along_one_pair() {
        let c = cfg("[dataset.noise]\nkind = \"structured\"\np = 0.5\nreference_epochs = 2");
        let p = build_datasets(&c.dataset).unwrap();
        let sources: std::collections::BTreeSet<usize> = (0..p.train.len())
            .filter(|&i| p.train.is_corrupted(i))
            .map(|i| p.train.original_labels()[i])
            .collect();
        assert_eq!(sources.len(), 1);
    }
}
