//! Summary CSVs over a set of run records from one config.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rholoss::trainer::{epochs_to_target, redundancy_epoch_filter, weakest_final_accuracy, Reached, RunRecord};

use crate::artifacts::{header_line, write_atomic};
use crate::error::{CliError, Result};
use crate::run::join;

/// Paths matching a glob pattern, sorted.
pub fn expand(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Input(format!("bad pattern {pattern:?}: {e}")))?;
    let mut out: Vec<PathBuf> = paths
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Input(e.to_string()))?;
    out.sort();
    Ok(out)
}

pub fn load_records(paths: &[PathBuf]) -> Result<Vec<RunRecord>> {
    if paths.is_empty() {
        return Err(CliError::Input("no run records matched".into()));
    }
    let records: Vec<RunRecord> = paths
        .iter()
        .map(|p| {
            RunRecord::load_csv(p).map_err(|e| CliError::Stale {
                path: p.clone(),
                reason: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    let first = &records[0].header.config_hash;
    if let Some((p, r)) = paths.iter().zip(&records).find(|(_, r)| r.header.config_hash != *first) {
        return Err(CliError::Input(format!(
            "mixed config hashes: {} has {} but {} has {first}",
            p.display(),
            r.header.config_hash,
            paths[0].display()
        )));
    }
    Ok(records)
}

/// Rendered report files, keyed by file name.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub files: BTreeMap<&'static str, String>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".to_string(), |x| x.to_string())
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Builds every summary from `records`, which must share a config hash and
/// have at most one record per (policy, seed).
pub fn build_report(records: &[RunRecord]) -> Result<Report> {
    let mut by_policy: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_policy.entry(&r.header.policy).or_default().push(r);
    }
    for (policy, rs) in &mut by_policy {
        rs.sort_by_key(|r| r.header.seed);
        if rs.windows(2).any(|w| w[0].header.seed == w[1].header.seed) {
            return Err(CliError::Input(format!("two records for policy {policy} with the same seed")));
        }
    }
    let seeds: BTreeSet<u64> = records.iter().map(|r| r.header.seed).collect();
    let seeds: Vec<u64> = seeds.into_iter().collect();
    let head = header_line(&[
        ("config_hash", records[0].header.config_hash.clone()),
        ("seeds", join(&seeds)),
    ]);
    let targets = records[0].header.targets.clone();

    let mut ett = head.clone();
    ett.push_str("policy,target,seeds,reached,epochs_per_seed,mean_epochs,speedup_vs_uniform,final_accuracy\n");
    let mean_epochs = |rs: &[&RunRecord], t: f64| mean(rs.iter().filter_map(|r| epochs_to_target(r, t).value().map(|e| e as f64)));
    for (policy, rs) in &by_policy {
        let final_acc = mean(rs.iter().filter_map(|r| r.final_accuracy()));
        for &t in &targets {
            let reached: Vec<Reached> = rs.iter().map(|r| epochs_to_target(r, t)).collect();
            let m = mean_epochs(rs, t);
            let speedup = match (by_policy.get("uniform").and_then(|u| mean_epochs(u, t)), m) {
                (Some(u), Some(p)) => Some(u / p),
                _ => None,
            };
            ett.push_str(&format!(
                "{policy},{t},{},{},{},{},{},{}\n",
                rs.len(),
                reached.iter().filter(|r| r.value().is_some()).count(),
                join(&reached),
                m.map_or("NR".to_string(), |x| x.to_string()),
                fmt_opt(speedup),
                fmt_opt(final_acc)
            ));
        }
    }

    let mut comp = head.clone();
    comp.push_str("policy,epoch,seeds,corrupted,low_relevance,already_correct\n");
    for (policy, rs) in &by_policy {
        let mut rows: BTreeMap<usize, Vec<[f64; 3]>> = BTreeMap::new();
        for r in rs {
            for c in &r.compositions {
                rows.entry(c.epoch).or_default().push([c.corrupted, c.low_relevance, c.already_correct]);
            }
        }
        for (epoch, v) in rows {
            let col = |k: usize| mean(v.iter().map(|x| x[k])).expect("non-empty");
            comp.push_str(&format!("{policy},{epoch},{},{},{},{}\n", v.len(), col(0), col(1), col(2)));
        }
    }

    let mut acc = head.clone();
    acc.push_str("policy,step,epoch,end_of_epoch,seeds,accuracy,loss\n");
    for (policy, rs) in &by_policy {
        let mut rows: BTreeMap<(usize, usize, bool), Vec<(f64, f64)>> = BTreeMap::new();
        for r in rs {
            for e in &r.evals {
                rows.entry((e.step, e.epoch, e.end_of_epoch)).or_default().push((e.accuracy, e.loss));
            }
        }
        for ((step, epoch, end), v) in rows {
            acc.push_str(&format!(
                "{policy},{step},{epoch},{},{},{},{}\n",
                end as u8,
                v.len(),
                mean(v.iter().map(|x| x.0)).expect("non-empty"),
                mean(v.iter().map(|x| x.1)).expect("non-empty")
            ));
        }
    }

    // per seed, epochs count only while below the weakest final accuracy
    // among that seed's policies
    let mut red = head;
    red.push_str("policy,seed,threshold,already_correct\n");
    let mut per_policy: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &seed in &seeds {
        let group: Vec<RunRecord> = records.iter().filter(|r| r.header.seed == seed).cloned().collect();
        let threshold = weakest_final_accuracy(&group);
        let values = threshold.map_or_else(|| vec![None; group.len()], |t| redundancy_epoch_filter(&group, t));
        let mut rows: Vec<(&str, Option<f64>)> = group.iter().map(|r| r.header.policy.as_str()).zip(values).collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        for (policy, v) in rows {
            red.push_str(&format!("{policy},{seed},{},{}\n", fmt_opt(threshold), fmt_opt(v)));
            let policy = by_policy.keys().find(|p| **p == policy).expect("grouped above");
            per_policy.entry(policy).or_default().extend(v);
        }
    }
    for (policy, v) in per_policy {
        red.push_str(&format!("{policy},mean,NA,{}\n", fmt_opt(mean(v))));
    }

    let mut files = BTreeMap::new();
    files.insert("epochs_to_target.csv", ett);
    files.insert("composition.csv", comp);
    files.insert("accuracy_vs_step.csv", acc);
    files.insert("redundancy.csv", red);
    Ok(Report { files })
}

/// Writes the report for the records at `paths` into `out_dir`.
pub fn cmd_report(paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let records = load_records(paths)?;
    let report = build_report(&records)?;
    let mut written = Vec::new();
    for (name, text) in &report.files {
        let p = out_dir.join(name);
        write_atomic(&p, text.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}
