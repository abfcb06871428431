//! Output layout, header stamping and atomic writes.
//!
//! Every file the CLI writes starts with a `# key=value ...` line carrying at
//! least `config_hash` and `seed` (or `seeds` for aggregates). Writes go to a
//! temporary sibling first and are renamed into place, so a crash never
//! leaves a truncated artifact under its final name.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rholoss::data::{parse_comment, LabeledDataset};
use rholoss::il::IrreducibleLossTable;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const OUT_DIR_ENV: &str = "RHOLOSS_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "rholoss-out";

/// `--out`, then the config's `output_dir`, then `$RHOLOSS_OUT_DIR`, then
/// `./rholoss-out`.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = cfg.and_then(|c| c.output_dir.as_ref()) {
        return p.clone();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// `data/{train,holdout,test}.csv`
    pub fn data(&self, split: &str) -> PathBuf {
        self.root.join("data").join(format!("{split}.csv"))
    }

    pub fn il_table(&self) -> PathBuf {
        self.root.join("il").join("table.csv")
    }

    /// `il/checkpoints.csv`, or `il/checkpoints_{suffix}.csv` per half.
    pub fn il_checkpoints(&self, suffix: Option<&str>) -> PathBuf {
        let name = suffix.map_or("checkpoints.csv".to_string(), |s| format!("checkpoints_{s}.csv"));
        self.root.join("il").join(name)
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn ladder(&self) -> PathBuf {
        self.root.join("ladder").join("ladder.csv")
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn sweep_cell(&self, index: usize) -> PathBuf {
        self.sweep().join(format!("cell_{index:03}"))
    }
}

pub fn record_file(dir: &Path, policy: &str, seed: u64) -> PathBuf {
    dir.join(format!("{policy}_seed{seed}.csv"))
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

/// Appends ` key=value` pairs to the leading comment line of `text`.
pub fn stamp(text: &str, fields: &[(&str, String)]) -> String {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    debug_assert!(first.starts_with('#'));
    let mut out = first.to_string();
    for (k, v) in fields {
        write!(out, " {k}={v}").unwrap();
    }
    out.push('\n');
    out.push_str(rest);
    out
}

/// A leading `# key=value` line rendered from `fields`.
pub fn header_line(fields: &[(&str, String)]) -> String {
    stamp("#\n", fields)
}

/// Header fields of an artifact, or `None` when the file does not exist.
pub fn read_header(path: &Path) -> Result<Option<HashMap<String, String>>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(CliError::Io { path: path.into(), source: e }),
    };
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(CliError::io(path))?;
    let fields = parse_comment(first.trim_end()).map_err(|_| CliError::Stale {
        path: path.into(),
        reason: "no header line".into(),
    })?;
    Ok(Some(fields))
}

/// Whether an existing artifact was produced under `key = expected`.
/// `Ok(None)` when the file is absent.
pub fn header_matches(path: &Path, key: &str, expected: &str) -> Result<Option<bool>> {
    Ok(read_header(path)?.map(|h| h.get(key).map(String::as_str) == Some(expected)))
}

fn stale(path: &Path, what: &str, cmd: &str) -> CliError {
    CliError::Stale {
        path: path.into(),
        reason: format!("{what} was produced by a different config; rerun `rholoss {cmd}`"),
    }
}

/// Loads a prepared split, checking it was built from the current dataset
/// section.
pub fn load_split(layout: &Layout, split: &str, cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let path = layout.data(split);
    match header_matches(&path, "dataset_hash", &cfg.dataset_hash())? {
        None => Err(CliError::Input(format!(
            "{} not found; run `rholoss prepare` first",
            path.display()
        ))),
        Some(false) => Err(stale(&path, "the dataset", "prepare")),
        Some(true) => Ok(LabeledDataset::load_csv(&path).map_err(|e| CliError::Stale {
            path: path.clone(),
            reason: e.to_string(),
        })?),
    }
}

pub fn load_il_table(layout: &Layout, cfg: &ExperimentConfig) -> Result<IrreducibleLossTable> {
    let path = layout.il_table();
    match header_matches(&path, "il_hash", &cfg.il_hash())? {
        None => Err(CliError::Input(format!(
            "{} not found; run `rholoss train-il` first",
            path.display()
        ))),
        Some(false) => Err(stale(&path, "the IL table", "train-il")),
        Some(true) => Ok(IrreducibleLossTable::load_csv(&path).map_err(|e| CliError::Stale {
            path: path.clone(),
            reason: e.to_string(),
        })?),
    }
}

/// What to do when an output already exists.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Overwrite {
    /// Refuse to touch existing outputs.
    #[default]
    Refuse,
    /// Replace existing outputs.
    Force,
    /// Keep complete outputs from the same config; reject anything else.
    Resume,
}
