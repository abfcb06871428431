use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::rng::{self, stream};

use super::LabeledDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    Holdout,
    TwoHalves,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_fraction")]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: SplitMode,
}

fn default_fraction() -> f64 {
    0.5
}
fn default_mode() -> SplitMode {
    SplitMode::Holdout
}

impl SplitSpec {
    pub fn holdout(fraction: f64, seed: u64) -> Self {
        Self {
            holdout_fraction: fraction,
            seed,
            mode: SplitMode::Holdout,
        }
    }

    pub fn two_halves(seed: u64) -> Self {
        Self {
            holdout_fraction: 0.5,
            seed,
            mode: SplitMode::TwoHalves,
        }
    }
}

/// Seeded shuffle, then cut. Holdout mode returns `(train, holdout)` with
/// `round(fraction · n)` holdout examples (at least one on each side);
/// two-halves mode returns halves of sizes `⌈n/2⌉` and `⌊n/2⌋`. Each part
/// keeps the input's relative order.
pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let n = ds.len();
    if n < 2 {
        return arg_err("need at least two examples to split");
    }
    let second = match spec.mode {
        SplitMode::Holdout => {
            if !(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0) {
                return arg_err(format!("holdout fraction {} not in (0, 1)", spec.holdout_fraction));
            }
            ((spec.holdout_fraction * n as f64).round() as usize).clamp(1, n - 1)
        }
        SplitMode::TwoHalves => n / 2,
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(spec.seed, stream::SPLIT));
    let (a, b) = order.split_at(n - second);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Ok((ds.subset(&a), ds.subset(&b)))
}

/// Each example independently, with probability `p`, receives a label drawn
/// uniformly from the other `C − 1` classes.
pub fn inject_uniform_noise(ds: &LabeledDataset, p: f64, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&p) {
        return arg_err(format!("noise probability {p} not in [0, 1]"));
    }
    let mut out = ds.clone();
    let classes = ds.classes();
    let mut rng = rng::rng_for(seed, stream::NOISE);
    for y in out.labels_mut() {
        if rng.random::<f64>() < p {
            let shift = rng.random_range(1..classes);
            *y = (*y + shift) % classes;
        }
    }
    Ok(out)
}

/// Ordered `(source, target)` class pairs ranked by off-diagonal count,
/// largest first; ties go to the smaller `(source, target)`.
pub fn most_confused_pairs(confusion: &[Vec<u64>]) -> Vec<(usize, usize, u64)> {
    let mut pairs: Vec<(usize, usize, u64)> = confusion
        .iter()
        .enumerate()
        .flat_map(|(s, row)| {
            row.iter()
                .enumerate()
                .filter(move |&(t, &c)| t != s && c > 0)
                .map(move |(t, &c)| (s, t, c))
        })
        .collect();
    pairs.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    pairs
}

/// Confusion-pair label noise. The `pairs` most confused ordered pairs of
/// `confusion` (rows: true class, columns: predicted class) are selected;
/// an example whose label is the source of a selected pair flips to that
/// pair's target with probability `flip_prob`. A class that sources several
/// selected pairs tries them in rank order and flips at most once.
pub fn inject_structured_noise(
    ds: &LabeledDataset,
    confusion: &[Vec<u64>],
    pairs: usize,
    flip_prob: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let c = ds.classes();
    if confusion.len() != c || confusion.iter().any(|r| r.len() != c) {
        return Err(Error::Dimension(format!("confusion matrix must be {c}×{c}")));
    }
    if !(0.0..=1.0).contains(&flip_prob) {
        return arg_err(format!("flip probability {flip_prob} not in [0, 1]"));
    }
    let ranked = most_confused_pairs(confusion);
    if pairs > ranked.len() {
        return arg_err(format!(
            "requested {pairs} confused pairs but only {} nonzero off-diagonal entries",
            ranked.len()
        ));
    }
    let selected = &ranked[..pairs];
    let mut out = ds.clone();
    let mut rng = rng::rng_for(seed, stream::NOISE);
    for y in out.labels_mut() {
        let source = *y;
        for &(s, t, _) in selected.iter().filter(|p| p.0 == source) {
            debug_assert_eq!(s, source);
            if rng.random::<f64>() < flip_prob {
                *y = t;
                break;
            }
        }
    }
    Ok(out)
}

/// Keeps every example of `⌈high_frac · C⌉` randomly chosen classes and
/// `round(keep_frac · m_c)` random examples of each other class, flagging
/// the latter as low relevance. Relative order is preserved.
pub fn make_relevance_skew(ds: &LabeledDataset, high_frac: f64, keep_frac: f64, seed: u64) -> Result<LabeledDataset> {
    let c = ds.classes();
    if !(high_frac > 0.0 && high_frac <= 1.0) || !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return arg_err("relevance fractions must lie in (0, 1]");
    }
    let n_high = (high_frac * c as f64).ceil() as usize;
    if n_high == 0 {
        return arg_err("no high-relevance class selected");
    }
    let mut rng = rng::rng_for(seed, stream::RELEVANCE);
    let mut classes: Vec<usize> = (0..c).collect();
    classes.shuffle(&mut rng);
    let mut high = vec![false; c];
    for &k in &classes[..n_high] {
        high[k] = true;
    }

    let labels = ds.original_labels();
    let mut keep = vec![false; ds.len()];
    for class in 0..c {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == class).collect();
        if high[class] {
            members.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        let count = (keep_frac * members.len() as f64).round() as usize;
        if count == 0 {
            return arg_err(format!(
                "class {class} would be empty after keeping {keep_frac} of {} examples",
                members.len()
            ));
        }
        let mut shuffled = members;
        shuffled.shuffle(&mut rng);
        shuffled[..count].iter().for_each(|&i| keep[i] = true);
    }
    let indices: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
    let mut out = ds.subset(&indices);
    for (i, flag) in out.low_relevance_mut().iter_mut().enumerate() {
        *flag = !high[labels[indices[i]]];
    }
    Ok(out)
}

/// Each example repeated `factor` times. Originals keep their ids; copies
/// get fresh ids above the current maximum and point back through
/// `duplicate_of`. Copies follow all originals, one round at a time.
pub fn duplicate(ds: &LabeledDataset, factor: usize) -> Result<LabeledDataset> {
    if factor == 0 {
        return arg_err("duplication factor must be at least 1");
    }
    if factor == 1 {
        return Ok(ds.clone());
    }
    let n = ds.len();
    let order: Vec<usize> = (0..factor).flat_map(|_| 0..n).collect();
    let mut out = ds.subset(&order);
    let mut next = ds.max_id().map_or(0, |m| m + 1);
    let mut ids = ds.ids().to_vec();
    let mut dup = ds.duplicate_of().to_vec();
    for _ in 1..factor {
        for i in 0..n {
            ids.push(next);
            next += 1;
            // copies of a copy point at the root original
            dup.push(Some(ds.duplicate_of()[i].unwrap_or(ds.ids()[i])));
        }
    }
    out.set_ids(ids);
    out.set_duplicate_of(dup);
    out.validate()?;
    Ok(out)
}
