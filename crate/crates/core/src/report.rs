//! Writes a [`RunReport`] as JSON, CSV and Markdown files.
//!
//! CSV and Markdown files start with a `#` line carrying the config hash;
//! JSON files carry it as their first field.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::hex_digest;
use crate::error::{Error, Result};
use crate::ranking::top_k_flags;
use crate::run::{ModelReport, RunReport};
use crate::sensitivity::{ConfoundingRecord, ConfoundingSummary, PlaceboRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dir: PathBuf,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn get(&self, file: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|e| e.file == file)
    }
}

struct Writer {
    dir: PathBuf,
    manifest: Manifest,
}

impl Writer {
    fn put(&mut self, file: &str, content: String) -> Result<()> {
        let path = self.dir.join(file);
        fs::write(&path, content.as_bytes()).map_err(|e| Error::io(&path, e))?;
        self.manifest.files.push(ManifestEntry {
            file: file.to_string(),
            sha256: hex_digest(content.as_bytes()),
            bytes: content.len(),
        });
        Ok(())
    }
}

fn k_label(k: f64) -> String {
    if k.fract() == 0.0 {
        format!("{}", k as i64)
    } else {
        k.to_string()
    }
}

fn csv_header(hash: &str, columns: &[&str]) -> String {
    format!("# config_hash {hash}\n{}\n", columns.join(","))
}

fn ranking_csv(r: &RunReport) -> Result<Option<String>> {
    let grid = &r.config.validation.k_grid;
    let ranked: Vec<&ModelReport> = r.models.iter().filter(|m| m.ranked.is_some()).collect();
    if ranked.is_empty() {
        return Ok(None);
    }
    let mut cols = vec!["model".to_string(), "index".into(), "ite".into(), "rank".into(), "level".into()];
    cols.extend(grid.iter().map(|&k| format!("top_{}", k_label(k))));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut out = csv_header(&r.config_hash, &cols);
    for m in ranked {
        let c = m.ranked.as_ref().expect("filtered");
        let flags = top_k_flags(c, grid)?;
        for (pos, u) in c.units.iter().enumerate() {
            write!(out, "{},{},{},{},{}", m.name, u.index, u.ite, u.rank, u.level).unwrap();
            for f in &flags {
                out.push_str(if f[pos] { ",1" } else { ",0" });
            }
            out.push('\n');
        }
    }
    Ok(Some(out))
}

fn balance_csv(r: &RunReport) -> Option<String> {
    let ms: Vec<&ModelReport> = r.models.iter().filter(|m| m.balance.is_some()).collect();
    if ms.is_empty() {
        return None;
    }
    let mut out = csv_header(&r.config_hash, &["model", "covariate", "smd_before", "smd_after", "flagged"]);
    for m in ms {
        let b = m.balance.as_ref().expect("filtered");
        for c in &b.covariates {
            let flagged = b.flagged.contains(&c.covariate) as u8;
            writeln!(out, "{},{},{},{},{flagged}", m.name, c.covariate, c.smd_before, c.smd_after).unwrap();
        }
    }
    Some(out)
}

#[derive(Serialize)]
struct SensitivityModel<'a> {
    model: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    placebo: Option<&'a PlaceboRecord>,
    confounding: &'a [ConfoundingRecord],
    summaries: &'a [ConfoundingSummary],
}

#[derive(Serialize)]
struct SensitivityFile<'a> {
    config_hash: &'a str,
    models: Vec<SensitivityModel<'a>>,
}

fn sensitivity_json(r: &RunReport) -> Result<Option<String>> {
    let models: Vec<SensitivityModel> = r
        .models
        .iter()
        .filter(|m| m.placebo.is_some() || !m.confounding.is_empty())
        .map(|m| SensitivityModel {
            model: &m.name,
            placebo: m.placebo.as_ref(),
            confounding: &m.confounding,
            summaries: &m.overlap,
        })
        .collect();
    if models.is_empty() {
        return Ok(None);
    }
    let f = SensitivityFile {
        config_hash: &r.config_hash,
        models,
    };
    Ok(Some(serde_json::to_string_pretty(&f)? + "\n"))
}

fn overlap_csv(r: &RunReport) -> Option<String> {
    if r.models.iter().all(|m| m.confounding.is_empty()) {
        return None;
    }
    let mut out = csv_header(
        &r.config_hash,
        &["model", "config", "run", "alpha", "epsilon", "overlap", "rank_rmse", "corr_u_a", "corr_u_y"],
    );
    for m in &r.models {
        for c in &m.confounding {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                m.name, c.config, c.run, c.alpha, c.epsilon, c.overlap_fraction, c.rank_rmse, c.corr_u_a, c.corr_u_y
            )
            .unwrap();
        }
    }
    Some(out)
}

fn cate_by_k_csv(r: &RunReport) -> Option<String> {
    let mut sources: Vec<(&str, &crate::run::IvSummary)> = Vec::new();
    if let Some(o) = &r.oracle_iv {
        sources.push(("oracle", o));
    }
    sources.extend(r.models.iter().filter_map(|m| m.iv.as_ref().map(|iv| (m.name.as_str(), iv))));
    if sources.is_empty() {
        return None;
    }
    let mut out = csv_header(
        &r.config_hash,
        &["model", "k", "group", "n", "first_stage", "cate", "se", "separated"],
    );
    for (name, iv) in sources {
        for rec in &iv.result.records {
            let sep = iv
                .result
                .separation
                .iter()
                .find(|s| s.k == rec.k)
                .map(|s| s.separated as u8)
                .unwrap_or(0);
            writeln!(
                out,
                "{name},{},{},{},{},{},{},{sep}",
                k_label(rec.k),
                rec.group.name(),
                rec.n_group,
                rec.first_stage,
                rec.cate,
                rec.se
            )
            .unwrap();
        }
    }
    Some(out)
}

fn f4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn summary_md(r: &RunReport) -> Option<String> {
    if r.models.is_empty() {
        return None;
    }
    let mut s = String::new();
    writeln!(s, "# splitrank run {}\n", r.config_hash).unwrap();
    writeln!(s, "version {}, master seed {}", r.version, r.master_seed).unwrap();
    if let Some(c) = &r.cohort {
        let src = if c.simulated { "simulated" } else { "loaded" };
        writeln!(s, "\n{src} cohort: n = {}, k = {}, treated = {}", c.n, c.k, c.treated).unwrap();
    }
    s.push_str("\n## Models\n\n");
    s.push_str("| model | causal | retained | ATE | rank RMSE | placebo ATE (SE) | placebo RMSE vs truth | confounded RMSE | overlap | IV separated |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for m in &r.models {
        let mean = |f: fn(&ConfoundingRecord) -> f64| {
            (!m.confounding.is_empty())
                .then(|| m.confounding.iter().map(f).sum::<f64>() / m.confounding.len() as f64)
        };
        let placebo = m
            .placebo
            .as_ref()
            .map(|p| format!("{:.4} ({:.4})", p.ate_estimate, p.ate_se))
            .unwrap_or_else(|| "-".into());
        let iv = m
            .iv
            .as_ref()
            .map(|iv| format!("{}/{}", iv.k_separated, iv.k_evaluated))
            .unwrap_or_else(|| "-".into());
        writeln!(
            s,
            "| {} | {} | {} | {} | {} | {placebo} | {} | {} | {} | {iv} |",
            m.name,
            m.causal,
            m.retained,
            f4(m.ate),
            f4(m.rank_rmse),
            f4(m.placebo.as_ref().and_then(|p| p.rank_rmse_vs_truth)),
            f4(mean(|c| c.rank_rmse)),
            f4(mean(|c| c.overlap_fraction)),
        )
        .unwrap();
    }
    let balanced: Vec<&ModelReport> = r.models.iter().filter(|m| m.balance.is_some()).collect();
    if !balanced.is_empty() {
        s.push_str("\n## Balance\n\n| model | mean SMD before | mean SMD after | improved | flagged |\n|---|---|---|---|---|\n");
        for m in balanced {
            let b = m.balance.as_ref().expect("filtered");
            writeln!(
                s,
                "| {} | {:.4} | {:.4} | {:.1}% | {} |",
                m.name,
                b.mean_smd_before,
                b.mean_smd_after,
                100.0 * b.fraction_improved,
                b.flagged.len()
            )
            .unwrap();
        }
    }
    if let Some(o) = &r.oracle_iv {
        writeln!(s, "\nOracle ranking IV separation: {}/{} k values.", o.k_separated, o.k_evaluated).unwrap();
    }
    let failed: Vec<&ModelReport> = r.failed_models().collect();
    if !failed.is_empty() {
        s.push_str("\n## Failures\n\n");
        for m in failed {
            let e = m.error.as_ref().expect("filtered");
            writeln!(s, "- {}: {:?} stage: {}", m.name, e.stage, e.message).unwrap();
        }
    }
    Some(s)
}

/// Writes every non-empty output of `r` into `dir` (created if missing) and
/// returns the files written with their SHA-256. A report without models
/// yields report.json alone.
pub fn emit_report(r: &RunReport, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = Writer {
        dir: dir.to_path_buf(),
        manifest: Manifest {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        },
    };
    w.put("report.json", serde_json::to_string_pretty(r)? + "\n")?;
    let parts = [
        ("ranking.csv", ranking_csv(r)?),
        ("balance.csv", balance_csv(r)),
        ("sensitivity.json", sensitivity_json(r)?),
        ("overlap.csv", overlap_csv(r)),
        ("cate_by_k.csv", cate_by_k_csv(r)),
        ("summary.md", summary_md(r)),
    ];
    for (file, content) in parts {
        if let Some(c) = content {
            w.put(file, c)?;
        }
    }
    Ok(w.manifest)
}

/// Reads a report.json written by [`emit_report`]. Per-unit rankings are
/// not stored there and come back empty.
pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
