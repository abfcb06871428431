//! Selection functions: per-candidate scores for a pre-sampled batch and the
//! pickers that turn scores into the trained subset.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{arg_err, Error, Result};
use crate::il::IrreducibleLossTable;
use crate::nn::{self, entropy, BnStats, MlpModel, Mode};
use crate::rng::{self, stream};

/// Which per-example gradient norm to score with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradNormVariant {
    /// Norm of the full-parameter gradient.
    #[default]
    Exact,
    /// Norm of the gradient with respect to the logits.
    LastLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlKind {
    Bald,
    CondEntropy,
    PredEntropy,
    LossMinusCondEntropy,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SelectionPolicy {
    RhoLoss,
    TrainLoss,
    GradNorm { variant: GradNormVariant },
    GradNormIs { variant: GradNormVariant, temperature: f64 },
    NegIl,
    Uniform,
    SvpEntropy { keep_fraction: f64 },
    Al { kind: AlKind, mc_samples: usize },
}

pub const POLICY_NAMES: [&str; 11] = [
    "rho-loss",
    "train-loss",
    "grad-norm",
    "grad-norm-is",
    "neg-il",
    "uniform",
    "svp-entropy",
    "bald",
    "cond-entropy",
    "pred-entropy",
    "loss-minus-cond-entropy",
];

/// A policy as written in a config file: a kind plus the settings it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<GradNormVariant>,
}

impl PolicySpec {
    pub fn named(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Self::default()
        }
    }
}

/// Config-file form: either a bare kind name or a table with settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyEntry {
    Name(String),
    Spec(PolicySpec),
}

impl PolicyEntry {
    pub fn into_spec(self) -> PolicySpec {
        match self {
            PolicyEntry::Name(n) => PolicySpec::named(&n),
            PolicyEntry::Spec(s) => s,
        }
    }
}

pub const DEFAULT_MC_SAMPLES: usize = 10;
pub const DEFAULT_KEEP_FRACTION: f64 = 0.5;

impl TryFrom<PolicySpec> for SelectionPolicy {
    type Error = Error;

    /// Settings that the kind does not use are rejected; missing ones take
    /// defaults (10 MC samples, temperature 1, keep fraction 0.5, exact
    /// gradient norm).
    fn try_from(spec: PolicySpec) -> Result<Self> {
        let kind = spec.kind.as_str();
        let al = match kind {
            "bald" => Some(AlKind::Bald),
            "cond-entropy" => Some(AlKind::CondEntropy),
            "pred-entropy" => Some(AlKind::PredEntropy),
            "loss-minus-cond-entropy" => Some(AlKind::LossMinusCondEntropy),
            _ => None,
        };
        let reject = |field: &str, present: bool| -> Result<()> {
            if present {
                arg_err(format!("policy {kind} does not take `{field}`"))
            } else {
                Ok(())
            }
        };
        reject("mc_samples", spec.mc_samples.is_some() && al.is_none())?;
        reject("temperature", spec.temperature.is_some() && kind != "grad-norm-is")?;
        reject("keep_fraction", spec.keep_fraction.is_some() && kind != "svp-entropy")?;
        reject(
            "grad_norm",
            spec.grad_norm.is_some() && kind != "grad-norm" && kind != "grad-norm-is",
        )?;
        let variant = spec.grad_norm.unwrap_or_default();
        let policy = match kind {
            "rho-loss" => SelectionPolicy::RhoLoss,
            "train-loss" => SelectionPolicy::TrainLoss,
            "grad-norm" => SelectionPolicy::GradNorm { variant },
            "grad-norm-is" => SelectionPolicy::GradNormIs {
                variant,
                temperature: spec.temperature.unwrap_or(1.0),
            },
            "neg-il" => SelectionPolicy::NegIl,
            "uniform" => SelectionPolicy::Uniform,
            "svp-entropy" => SelectionPolicy::SvpEntropy {
                keep_fraction: spec.keep_fraction.unwrap_or(DEFAULT_KEEP_FRACTION),
            },
            _ => match al {
                Some(kind) => SelectionPolicy::Al {
                    kind,
                    mc_samples: spec.mc_samples.unwrap_or(DEFAULT_MC_SAMPLES),
                },
                None => {
                    return arg_err(format!(
                        "unknown policy `{kind}`; expected one of {}",
                        POLICY_NAMES.join(", ")
                    ))
                }
            },
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl std::str::FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicySpec::named(s).try_into()
    }
}

impl SelectionPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionPolicy::RhoLoss => "rho-loss",
            SelectionPolicy::TrainLoss => "train-loss",
            SelectionPolicy::GradNorm { .. } => "grad-norm",
            SelectionPolicy::GradNormIs { .. } => "grad-norm-is",
            SelectionPolicy::NegIl => "neg-il",
            SelectionPolicy::Uniform => "uniform",
            SelectionPolicy::SvpEntropy { .. } => "svp-entropy",
            SelectionPolicy::Al { kind, .. } => match kind {
                AlKind::Bald => "bald",
                AlKind::CondEntropy => "cond-entropy",
                AlKind::PredEntropy => "pred-entropy",
                AlKind::LossMinusCondEntropy => "loss-minus-cond-entropy",
            },
        }
    }

    pub fn spec(&self) -> PolicySpec {
        let mut spec = PolicySpec::named(self.name());
        match *self {
            SelectionPolicy::GradNorm { variant } => spec.grad_norm = Some(variant),
            SelectionPolicy::GradNormIs { variant, temperature } => {
                spec.grad_norm = Some(variant);
                spec.temperature = Some(temperature);
            }
            SelectionPolicy::SvpEntropy { keep_fraction } => spec.keep_fraction = Some(keep_fraction),
            SelectionPolicy::Al { mc_samples, .. } => spec.mc_samples = Some(mc_samples),
            _ => {}
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionPolicy::GradNormIs { temperature, .. } if !(temperature > 0.0 && temperature.is_finite()) => {
                arg_err(format!("importance-sampling temperature must be positive, got {temperature}"))
            }
            SelectionPolicy::SvpEntropy { keep_fraction } if !(keep_fraction > 0.0 && keep_fraction <= 1.0) => {
                arg_err(format!("keep fraction must be in (0, 1], got {keep_fraction}"))
            }
            SelectionPolicy::Al {
                kind: AlKind::Bald,
                mc_samples,
            } if mc_samples < 2 => arg_err("BALD needs at least 2 Monte-Carlo samples"),
            SelectionPolicy::Al { mc_samples: 0, .. } => arg_err("at least one Monte-Carlo sample is required"),
            _ => Ok(()),
        }
    }

    /// Whether scoring reads irreducible-loss values.
    pub fn needs_il(&self) -> bool {
        matches!(self, SelectionPolicy::RhoLoss | SelectionPolicy::NegIl)
    }

    /// Whether scoring needs the candidates' train losses.
    pub fn needs_losses(&self) -> bool {
        matches!(self, SelectionPolicy::RhoLoss | SelectionPolicy::TrainLoss)
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One scored candidate batch and the subset picked from it.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredBatch {
    pub candidates: Vec<u64>,
    pub scores: Vec<f64>,
    /// Positions into `candidates`, in pick order.
    pub selected: Vec<usize>,
    /// Per-selected loss weights, present only for importance sampling.
    pub weights: Option<Vec<f64>>,
}

impl ScoredBatch {
    pub fn selected_ids(&self) -> Vec<u64> {
        self.selected.iter().map(|&p| self.candidates[p]).collect()
    }

    pub fn mean_selected_score(&self) -> f64 {
        if self.selected.is_empty() {
            return 0.0;
        }
        self.selected.iter().map(|&p| self.scores[p]).sum::<f64>() / self.selected.len() as f64
    }
}

/// IL values aligned with `ids`.
pub fn lookup_il(ids: &[u64], il: &IrreducibleLossTable) -> Result<Vec<f64>> {
    ids.iter().map(|&id| il.get(id)).collect()
}

/// Train loss minus irreducible loss, unclamped.
pub fn score_rho_loss(losses: &[f64], il: &[f64]) -> Result<Vec<f64>> {
    if losses.len() != il.len() {
        return crate::error::dim_err("losses and IL values disagree in length");
    }
    Ok(losses.iter().zip(il).map(|(l, i)| l - i).collect())
}

/// [`score_rho_loss`] with IL values looked up by candidate id.
pub fn score_rho_loss_table(losses: &[f64], ids: &[u64], il: &IrreducibleLossTable) -> Result<Vec<f64>> {
    score_rho_loss(losses, &lookup_il(ids, il)?)
}

pub fn score_train_loss(losses: &[f64]) -> Vec<f64> {
    losses.to_vec()
}

pub fn score_neg_il(il: &[f64]) -> Vec<f64> {
    il.iter().map(|v| -v).collect()
}

pub fn score_grad_norm(model: &MlpModel, candidates: &LabeledDataset, variant: GradNormVariant) -> Result<Vec<f64>> {
    match variant {
        GradNormVariant::Exact => model.per_example_grad_norms(candidates.features(), candidates.labels()),
        GradNormVariant::LastLayer => model.last_layer_grad_norms(candidates.features(), candidates.labels()),
    }
}

/// Active-learning acquisition scores from `mc_samples` dropout forward
/// passes (entropies in nats). Only loss-minus-cond-entropy reads labels;
/// its loss term is the deterministic evaluation-mode loss.
pub fn score_al(
    kind: AlKind,
    model: &MlpModel,
    candidates: &LabeledDataset,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if kind == AlKind::Bald && mc_samples < 2 {
        return arg_err("BALD needs at least 2 Monte-Carlo samples");
    }
    let samples = model.mc_dropout_predict(candidates.features(), mc_samples, rng::derive_seed(seed, stream::MC))?;
    let n = candidates.len();
    let c = model.classes();
    let mut scores = Vec::with_capacity(n);
    let losses = match kind {
        AlKind::LossMinusCondEntropy => Some(nn::cross_entropy(
            &model.predict_logits(candidates.features())?,
            candidates.labels(),
        )?),
        _ => None,
    };
    let k = mc_samples as f64;
    for i in 0..n {
        let mut mean = vec![0.0; c];
        let mut cond = 0.0;
        for s in &samples {
            let p = s.row(i);
            cond += entropy(p) / k;
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / k;
            }
        }
        scores.push(match kind {
            AlKind::Bald => entropy(&mean) - cond,
            AlKind::CondEntropy => cond,
            AlKind::PredEntropy => entropy(&mean),
            AlKind::LossMinusCondEntropy => losses.as_ref().expect("computed above")[i] - cond,
        });
    }
    Ok(scores)
}

/// Positions of the `n_b` largest scores, highest first. Ties are broken by
/// a uniform shuffle seeded with `tie_seed` ahead of a stable sort, so
/// constant scores yield a uniformly random subset.
pub fn select_top_k(scores: &[f64], n_b: usize, tie_seed: u64) -> Result<Vec<usize>> {
    if n_b > scores.len() {
        return arg_err(format!("cannot select {n_b} of {} candidates", scores.len()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return arg_err(format!("score {i} is NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut rng::rng_for(tie_seed, stream::TIE_BREAK));
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(n_b);
    Ok(order)
}

/// Draws `n_b` positions with replacement, position `i` with probability
/// `p_i ∝ score_i^(1/temperature)`, and weights each draw by `1/(N·p_i)`.
/// Averaging `w_i · g_i` over the draws is then an unbiased estimate of the
/// mean of `g` over all `N` candidates. Equal scores give uniform draws with
/// unit weights; all-zero scores fall back to exactly that.
pub fn sample_grad_norm_is(scores: &[f64], n_b: usize, temperature: f64, seed: u64) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = scores.len();
    if n == 0 || n_b == 0 {
        return arg_err("importance sampling needs candidates and a positive draw count");
    }
    if let Some(s) = scores.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return arg_err(format!("importance-sampling scores must be finite and non-negative, got {s}"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return arg_err(format!("temperature must be positive, got {temperature}"));
    }
    let mut rng = rng::rng_for(seed, stream::IS_SAMPLE);
    let max = scores.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        let picks = (0..n_b).map(|_| rng.random_range(0..n)).collect();
        return Ok((picks, vec![1.0; n_b]));
    }
    // scale by the max before exponentiating to stay in range
    let mass: Vec<f64> = scores.iter().map(|s| (s / max).powf(1.0 / temperature)).collect();
    let total: f64 = mass.iter().sum();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for m in &mass {
        acc += m;
        cumulative.push(acc);
    }
    let mut picks = Vec::with_capacity(n_b);
    let mut weights = Vec::with_capacity(n_b);
    for _ in 0..n_b {
        let u = rng.random::<f64>() * total;
        let mut i = cumulative.partition_point(|&c| c <= u).min(n - 1);
        while mass[i] == 0.0 {
            i -= 1;
        }
        picks.push(i);
        weights.push(total / (n as f64 * mass[i]));
    }
    Ok((picks, weights))
}

/// Scores a candidate batch under `policy`. `losses` and `il` are aligned
/// with the candidates and required by the policies that read them.
pub fn score_candidates(
    policy: &SelectionPolicy,
    model: &MlpModel,
    candidates: &LabeledDataset,
    losses: Option<&[f64]>,
    il: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<f64>> {
    let need = |v: Option<&[f64]>, what: &str| -> Result<Vec<f64>> {
        match v {
            Some(v) if v.len() == candidates.len() => Ok(v.to_vec()),
            Some(_) => crate::error::dim_err(format!("{what} not aligned with candidates")),
            None => Err(Error::Setup(format!("policy {policy} needs {what}"))),
        }
    };
    match policy {
        SelectionPolicy::RhoLoss => score_rho_loss(&need(losses, "train losses")?, &need(il, "irreducible losses")?),
        SelectionPolicy::TrainLoss => Ok(score_train_loss(&need(losses, "train losses")?)),
        SelectionPolicy::NegIl => Ok(score_neg_il(&need(il, "irreducible losses")?)),
        SelectionPolicy::Uniform => Ok(vec![0.0; candidates.len()]),
        SelectionPolicy::GradNorm { variant } | SelectionPolicy::GradNormIs { variant, .. } => {
            score_grad_norm(model, candidates, *variant)
        }
        SelectionPolicy::Al { kind, mc_samples } => score_al(*kind, model, candidates, *mc_samples, seed),
        SelectionPolicy::SvpEntropy { .. } => {
            arg_err("svp-entropy selects offline; it has no per-step scores")
        }
    }
}

/// Turns scores into a [`ScoredBatch`]: importance sampling for
/// grad-norm-is, top-k otherwise.
pub fn pick(
    policy: &SelectionPolicy,
    candidates: Vec<u64>,
    scores: Vec<f64>,
    n_b: usize,
    seed: u64,
) -> Result<ScoredBatch> {
    let (selected, weights) = match *policy {
        SelectionPolicy::GradNormIs { temperature, .. } => {
            let (s, w) = sample_grad_norm_is(&scores, n_b, temperature, seed)?;
            (s, Some(w))
        }
        _ => (select_top_k(&scores, n_b, seed)?, None),
    };
    Ok(ScoredBatch {
        candidates,
        scores,
        selected,
        weights,
    })
}

/// Train losses of the candidates under the scoring snapshot: no dropout,
/// batch-norm statistics taken over the candidate batch itself.
pub fn candidate_losses(model: &MlpModel, candidates: &LabeledDataset) -> Result<Vec<f64>> {
    model.losses(candidates.features(), candidates.labels(), Mode::Eval, BnStats::Batch)
}

/// Ids of the `keep_fraction` share of `pool` (rounded, at least one) with
/// the highest predictive entropy under `proxy`; ties broken by `seed`.
/// Returned in pool order.
pub fn svp_offline_select(proxy: &MlpModel, pool: &LabeledDataset, keep_fraction: f64, seed: u64) -> Result<Vec<u64>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return arg_err(format!("keep fraction must be in (0, 1], got {keep_fraction}"));
    }
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let entropies = nn::entropy_rows(&proxy.predict_proba(pool.features())?);
    let keep = ((keep_fraction * pool.len() as f64).round() as usize).clamp(1, pool.len());
    let mut picked = select_top_k(&entropies, keep, seed)?;
    picked.sort_unstable();
    Ok(picked.into_iter().map(|p| pool.ids()[p]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::nn::MlpConfig;
    use crate::tensor::Tensor;

    #[test]
    fn rho_loss_examples() {
        let s = score_rho_loss(&[2.0, 0.5], &[1.9, 0.1]).unwrap();
        assert!((s[0] - 0.1).abs() < 1e-12 && (s[1] - 0.4).abs() < 1e-12);
        assert_eq!(select_top_k(&s, 1, 0).unwrap(), vec![1]);
        let noisy_vs_clean = score_rho_loss(&[2.3, 1.0], &[2.3, 0.1]).unwrap();
        assert!(noisy_vs_clean[0] < noisy_vs_clean[1]);
        assert_eq!(score_rho_loss(&[0.7; 4], &[0.7; 4]).unwrap(), vec![0.0; 4]);
        let neg = score_rho_loss(&[0.1], &[0.5]).unwrap();
        assert!(neg[0] < 0.0);
    }

    #[test]
    fn rho_loss_missing_id() {
        let ds = gen_synthetic(2, 3, 2, 0.5, 1).unwrap();
        let model = MlpModel::new(MlpConfig::new(vec![2, 2]), 0).unwrap();
        let table = crate::il::compute_il_table(&model, &ds.subset(&[0, 1])).unwrap();
        assert!(matches!(
            score_rho_loss_table(&[0.0, 0.0], &[0, 5], &table),
            Err(Error::Lookup(5))
        ));
    }

    #[test]
    fn neg_il_and_train_loss() {
        assert_eq!(score_train_loss(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(score_neg_il(&[0.5, 2.0]), vec![-0.5, -2.0]);
        let ln10 = 10f64.ln();
        let s = score_neg_il(&[ln10; 5]);
        assert!(s.iter().all(|v| *v == -ln10));
    }

    #[test]
    fn top_k_basics() {
        assert_eq!(select_top_k(&[0.1, 0.4, 0.2], 1, 9).unwrap(), vec![1]);
        let mut all = select_top_k(&[0.3, 0.3, 0.1, 0.9], 4, 2).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(matches!(select_top_k(&[1.0], 2, 0), Err(Error::Argument(_))));
        assert!(select_top_k(&[1.0, f64::NAN], 1, 0).is_err());
    }

    #[test]
    fn constant_scores_give_uniform_subsets() {
        // chi-square goodness of fit over all C(5,2) = 10 subsets
        let draws = 10_000;
        let mut counts = std::collections::HashMap::new();
        for seed in 0..draws {
            let mut s = select_top_k(&[1.0; 5], 2, seed).unwrap();
            s.sort();
            *counts.entry(s).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 10);
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 9 degrees of freedom
        assert!(chi2 < 27.877, "chi2 {chi2}");
    }

    #[test]
    fn is_single_nonzero_and_equal_scores() {
        let (p, w) = sample_grad_norm_is(&[0.0, 3.0, 0.0], 1, 1.0, 4).unwrap();
        assert_eq!(p, vec![1]);
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        let mut counts = [0usize; 2];
        for seed in 0..10_000 {
            let (p, w) = sample_grad_norm_is(&[2.0, 2.0], 1, 1.0, seed).unwrap();
            assert_eq!(w, vec![1.0]);
            counts[p[0]] += 1;
        }
        let sd = (10_000.0f64 * 0.25).sqrt();
        assert!((counts[0] as f64 - 5000.0).abs() < 4.0 * sd, "{counts:?}");
        let (_, w) = sample_grad_norm_is(&[0.0; 4], 3, 1.0, 1).unwrap();
        assert_eq!(w, vec![1.0; 3]);
        assert!(sample_grad_norm_is(&[-1.0, 1.0], 1, 1.0, 1).is_err());
    }

    #[test]
    fn is_estimator_unbiased_on_scalars() {
        let g = [1.0, -2.0, 0.5, 4.0, 3.0];
        let scores = [0.1, 2.0, 0.3, 1.0, 0.7];
        let mean: f64 = g.iter().sum::<f64>() / 5.0;
        let mut acc = 0.0;
        let reps = 20_000;
        for seed in 0..reps {
            let (p, w) = sample_grad_norm_is(&scores, 2, 1.0, seed).unwrap();
            acc += p.iter().zip(&w).map(|(&i, wi)| wi * g[i]).sum::<f64>() / 2.0;
        }
        let est = acc / reps as f64;
        assert!((est - mean).abs() / mean.abs() < 0.05, "{est} vs {mean}");
    }

    #[test]
    fn bald_hand_case() {
        let h09 = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert!((h09 - 0.325083).abs() < 1e-6);
        let mean = vec![0.5, 0.5];
        let bald = entropy(&mean) - h09;
        assert!((entropy(&mean) - 2f64.ln()).abs() < 1e-12);
        assert!((bald - 0.368064).abs() < 1e-6);
    }

    #[test]
    fn deterministic_model_has_zero_bald() {
        let ds = gen_synthetic(3, 5, 4, 0.5, 3).unwrap();
        let model = MlpModel::new(MlpConfig::new(vec![4, 8, 3]), 1).unwrap();
        let b = score_al(AlKind::Bald, &model, &ds, 4, 7).unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-9));
        assert!(score_al(AlKind::Bald, &model, &ds, 1, 7).is_err());
        let dropout = MlpModel::new(MlpConfig::new(vec![4, 8, 3]).with_dropout(0.5), 1).unwrap();
        let b = score_al(AlKind::Bald, &dropout, &ds, 8, 7).unwrap();
        assert!(b.iter().all(|v| *v >= -1e-12));
        assert!(b.iter().any(|v| *v > 1e-6));
    }

    #[test]
    fn uniform_predictive_entropy() {
        let model = MlpModel::from_weights(
            MlpConfig::new(vec![3, 10]),
            vec![Tensor::zeros(&[3, 10])],
            vec![Tensor::zeros(&[10])],
        )
        .unwrap();
        let ds = gen_synthetic(10, 1, 3, 0.5, 0).unwrap();
        let s = score_al(AlKind::PredEntropy, &model, &ds, 3, 0).unwrap();
        assert!(s.iter().all(|v| (v - 10f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn svp_keeps_highest_entropy() {
        let ds = gen_synthetic(3, 10, 4, 0.8, 5).unwrap();
        let proxy = MlpModel::new(MlpConfig::new(vec![4, 8, 3]), 2).unwrap();
        assert_eq!(svp_offline_select(&proxy, &ds, 1.0, 0).unwrap(), ds.ids().to_vec());
        let kept = svp_offline_select(&proxy, &ds, 0.3, 0).unwrap();
        assert_eq!(kept.len(), 9);
        let probs = proxy.predict_proba(ds.features()).unwrap();
        let h: Vec<f64> = probs
            .iter_rows()
            .map(|p| -p.iter().map(|v| v * v.ln()).sum::<f64>())
            .collect();
        let worst_kept = kept.iter().map(|&id| h[id as usize]).fold(f64::INFINITY, f64::min);
        for (i, hi) in h.iter().enumerate() {
            if !kept.contains(&(i as u64)) {
                assert!(*hi <= worst_kept + 1e-12);
            }
        }
    }

    #[test]
    fn policy_parsing() {
        let p: SelectionPolicy = "rho-loss".parse().unwrap();
        assert_eq!(p, SelectionPolicy::RhoLoss);
        assert!("nope".parse::<SelectionPolicy>().is_err());
        let spec = PolicySpec {
            mc_samples: Some(4),
            ..PolicySpec::named("rho-loss")
        };
        assert!(SelectionPolicy::try_from(spec).is_err());
        let spec = PolicySpec {
            mc_samples: Some(1),
            ..PolicySpec::named("bald")
        };
        assert!(SelectionPolicy::try_from(spec).is_err());
        for name in POLICY_NAMES {
            let p: SelectionPolicy = name.parse().unwrap();
            assert_eq!(p.name(), name);
            assert_eq!(SelectionPolicy::try_from(p.spec()).unwrap(), p);
        }
    }
}
