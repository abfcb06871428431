//! Labeled datasets and the transformations used to build experiment data:
//! holdout splits, label noise, relevance skew and duplication.

mod idx;
mod synthetic;
mod transform;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

pub use idx::{load_idx, parse_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synthetic::{gen_synthetic, SyntheticTask};
pub use transform::{
    duplicate, inject_structured_noise, inject_uniform_noise, make_relevance_skew, split, SplitMode,
    SplitSpec,
};

/// Features, labels and per-example provenance flags.
///
/// An example is *corrupted* exactly when its label differs from its
/// original label; the flag is derived rather than stored so the two can
/// never disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    ids: Vec<u64>,
    original_labels: Vec<usize>,
    low_relevance: Vec<bool>,
    duplicate_of: Vec<Option<u64>>,
    classes: usize,
}

impl LabeledDataset {
    /// Clean dataset with ids `0..n`.
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::with_ids(features, labels, ids, classes)
    }

    pub fn with_ids(features: Tensor, labels: Vec<usize>, ids: Vec<u64>, classes: usize) -> Result<Self> {
        let n = labels.len();
        let ds = Self {
            features,
            original_labels: labels.clone(),
            labels,
            ids,
            low_relevance: vec![false; n],
            duplicate_of: vec![None; n],
            classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.shape().len() != 2 || self.features.rows() != n {
            return dim_err(format!("{n} labels for features of shape {:?}", self.features.shape()));
        }
        if [self.ids.len(), self.original_labels.len(), self.low_relevance.len(), self.duplicate_of.len()]
            .iter()
            .any(|&l| l != n)
        {
            return dim_err("per-example columns disagree in length");
        }
        if self.classes < 2 {
            return Err(Error::Argument("need at least two classes".into()));
        }
        if let Some(y) = self
            .labels
            .iter()
            .chain(&self.original_labels)
            .find(|&&y| y >= self.classes)
        {
            return Err(Error::Domain(format!("label {y} outside [0, {})", self.classes)));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        if let Some(dup) = self.ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Argument(format!("duplicate example id {dup}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn original_labels(&self) -> &[usize] {
        &self.original_labels
    }

    pub fn is_corrupted(&self, i: usize) -> bool {
        self.labels[i] != self.original_labels[i]
    }

    pub fn corrupted(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_corrupted(i)).collect()
    }

    pub fn corrupted_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_corrupted(i)).count()
    }

    pub fn low_relevance(&self) -> &[bool] {
        &self.low_relevance
    }

    pub fn duplicate_of(&self) -> &[Option<u64>] {
        &self.duplicate_of
    }

    pub fn max_id(&self) -> Option<u64> {
        self.ids.iter().copied().max()
    }

    pub fn id_index(&self) -> HashMap<u64, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            original_labels: indices.iter().map(|&i| self.original_labels[i]).collect(),
            low_relevance: indices.iter().map(|&i| self.low_relevance[i]).collect(),
            duplicate_of: indices.iter().map(|&i| self.duplicate_of[i]).collect(),
            classes: self.classes,
        }
    }

    /// Examples whose ids are in `ids`, in the order given.
    pub fn subset_by_ids(&self, ids: &[u64]) -> Result<LabeledDataset> {
        let index = self.id_index();
        let idx = ids
            .iter()
            .map(|id| index.get(id).copied().ok_or(Error::Lookup(*id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&idx))
    }

    /// Union of two datasets with disjoint ids.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.dim() != other.dim() || self.classes != other.classes {
            return dim_err("datasets disagree in dimension or class count");
        }
        let mut values = self.features.values().to_vec();
        values.extend_from_slice(other.features.values());
        let out = LabeledDataset {
            features: Tensor::matrix(self.len() + other.len(), self.dim(), values)?,
            labels: [&self.labels[..], &other.labels].concat(),
            ids: [&self.ids[..], &other.ids].concat(),
            original_labels: [&self.original_labels[..], &other.original_labels].concat(),
            low_relevance: [&self.low_relevance[..], &other.low_relevance].concat(),
            duplicate_of: [&self.duplicate_of[..], &other.duplicate_of].concat(),
            classes: self.classes,
        };
        out.validate()?;
        Ok(out)
    }

    /// Stable digest of every column, features included bit for bit.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.classes as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for i in 0..self.len() {
            h.update(self.ids[i].to_le_bytes());
            h.update((self.labels[i] as u64).to_le_bytes());
            h.update((self.original_labels[i] as u64).to_le_bytes());
            h.update([self.low_relevance[i] as u8]);
            h.update(self.duplicate_of[i].map_or(u64::MAX, |d| d).to_le_bytes());
            for v in self.features.row(i) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// CSV cache: a `# classes=C hash=H` comment line, then
    /// `id,label,original_label,corrupted,low_relevance,duplicate_of,feature_0..feature_{d-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# classes={} hash={}", self.classes, self.content_hash())?;
        let mut header = String::from("id,label,original_label,corrupted,low_relevance,duplicate_of");
        for j in 0..self.dim() {
            write!(header, ",feature_{j}").unwrap();
        }
        writeln!(w, "{header}")?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            write!(
                line,
                "{},{},{},{},{},",
                self.ids[i],
                self.labels[i],
                self.original_labels[i],
                self.is_corrupted(i) as u8,
                self.low_relevance[i] as u8
            )
            .unwrap();
            if let Some(d) = self.duplicate_of[i] {
                write!(line, "{d}").unwrap();
            }
            for v in self.features.row(i) {
                write!(line, ",{v}").unwrap();
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let fmt = |m: String| Error::Format(m);
        let mut lines = r.lines();
        let meta = lines.next().ok_or_else(|| fmt("empty dataset file".into()))??;
        let meta = parse_comment(&meta)?;
        let classes: usize = meta
            .get("classes")
            .ok_or_else(|| fmt("missing classes".into()))?
            .parse()
            .map_err(|e| fmt(format!("classes: {e}")))?;
        let header = lines.next().ok_or_else(|| fmt("missing header".into()))??;
        let dim = header.split(',').count().saturating_sub(6);
        let mut ds = LabeledDataset {
            features: Tensor::zeros(&[0, dim]),
            labels: Vec::new(),
            ids: Vec::new(),
            original_labels: Vec::new(),
            low_relevance: Vec::new(),
            duplicate_of: Vec::new(),
            classes,
        };
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != dim + 6 {
                return Err(fmt(format!("row {}: expected {} columns", lineno + 1, dim + 6)));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| fmt(format!("row {}: {e}", lineno + 1)));
            ds.ids.push(num(cols[0])?);
            ds.labels.push(num(cols[1])? as usize);
            ds.original_labels.push(num(cols[2])? as usize);
            let corrupted = num(cols[3])? == 1;
            ds.low_relevance.push(num(cols[4])? == 1);
            ds.duplicate_of
                .push(if cols[5].is_empty() { None } else { Some(num(cols[5])?) });
            if corrupted != (ds.labels.last() != ds.original_labels.last()) {
                return Err(fmt(format!("row {}: corrupted flag inconsistent with labels", lineno + 1)));
            }
            for c in &cols[6..] {
                values.push(c.parse::<f64>().map_err(|e| fmt(format!("row {}: {e}", lineno + 1)))?);
            }
        }
        ds.features = Tensor::matrix(ds.labels.len(), dim, values)?;
        ds.validate()?;
        if let Some(h) = meta.get("hash") {
            if *h != ds.content_hash() {
                return Err(fmt("content hash does not match header".into()));
            }
        }
        Ok(ds)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub(crate) fn low_relevance_mut(&mut self) -> &mut [bool] {
        &mut self.low_relevance
    }

    pub(crate) fn set_duplicate_of(&mut self, dup: Vec<Option<u64>>) {
        self.duplicate_of = dup;
    }

    pub(crate) fn set_ids(&mut self, ids: Vec<u64>) {
        self.ids = ids;
    }
}

/// Parses `# key=value key=value` header comments.
pub fn parse_comment(line: &str) -> Result<HashMap<String, String>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Format(format!("expected comment line, got {line:?}")))?;
    Ok(body
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}
