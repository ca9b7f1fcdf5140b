//! `report`: folds the experiment CSVs of one output directory into a single
//! Markdown summary. No timestamps, so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::commands::{log_config, tune_eval_csv, ABLATION_CSV, META_TRAIN_CSV, PROXIMITY_CSV};
use crate::config::{hex_digest, Baseline, RunConfig};
use crate::CliError;

pub const REPORT_MD: &str = "report.md";

/// Commands whose stored config is listed in the report, in this order.
const COMMANDS: [&str; 5] = ["synth", "meta-train", "tune-eval", "ablate-subcarriers", "proximity"];

const BASELINES: [Baseline; 3] = [Baseline::FrozenCnn, Baseline::FselKnn, Baseline::Frel];

pub fn expected_files() -> Vec<String> {
    let mut v = vec![META_TRAIN_CSV.to_string()];
    v.extend(BASELINES.iter().map(|&b| tune_eval_csv(b)));
    v.push(ABLATION_CSV.into());
    v.push(PROXIMITY_CSV.into());
    v
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let bad = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(bad)?;
        let headers = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let rows = r.records().map(|rec| rec.map(|r| r.iter().map(str::to_string).collect())).collect::<Result<_, _>>().map_err(bad)?;
        Ok(Self { headers, rows })
    }

    fn column(&self, path: &Path, name: &str) -> Result<Vec<f64>, CliError> {
        let i = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{}: no column {name}", path.display())))?;
        self.rows
            .iter()
            .map(|r| r[i].parse::<f64>().map_err(|e| CliError::Data(format!("{}: {name} value {:?}: {e}", path.display(), r[i]))))
            .collect()
    }

    fn markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.headers.join(" | "));
        writeln!(s, "|{}", "---|".repeat(self.headers.len())).unwrap();
        for r in &self.rows {
            writeln!(s, "| {} |", r.join(" | ")).unwrap();
        }
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Summarizes whatever experiment CSVs exist under `out_dir` into
/// `report.md`. Fails, naming every expected file, when none exist.
pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    let expected = expected_files();
    let (present, missing): (Vec<&String>, Vec<&String>) = expected.iter().partition(|f| dir.join(f).is_file());
    if present.is_empty() {
        return Err(CliError::Data(format!(
            "no experiment outputs in {}; expected any of: {}",
            dir.display(),
            expected.join(", ")
        )));
    }
    log_config(cfg, "report")?;

    let mut s = String::from("# Experiment report\n\n## Inputs\n\n| file | sha256 |\n|---|---|\n");
    for f in &present {
        writeln!(s, "| {f} | {} |", hex_digest(&fs::read(dir.join(f))?)).unwrap();
    }

    s.push_str("\n## Resolved configs\n\n| command | config sha256 | benchmark seed | frel seed |\n|---|---|---|---|\n");
    for c in COMMANDS {
        let path = dir.join(format!("{c}.config.toml"));
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        let rc = RunConfig::from_toml(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        writeln!(s, "| {c} | {} | {} | {} |", hex_digest(text.as_bytes()), rc.benchmark.seed, rc.frel.seed).unwrap();
    }

    let meta = dir.join(META_TRAIN_CSV);
    if meta.is_file() {
        let t = Table::read(&meta)?;
        let (loss, acc) = (t.column(&meta, "loss")?, t.column(&meta, "accuracy")?);
        s.push_str("\n## Meta-training\n\n");
        match (loss.last(), acc.last()) {
            (Some(l), Some(a)) => writeln!(s, "{} epochs; final loss {l:.4}, final train accuracy {a:.4}.", loss.len()).unwrap(),
            _ => s.push_str("No epochs recorded.\n"),
        }
    }

    let mut per_seed: Vec<(Baseline, Vec<f64>)> = Vec::new();
    for b in BASELINES {
        let path = dir.join(tune_eval_csv(b));
        if path.is_file() {
            per_seed.push((b, Table::read(&path)?.column(&path, "accuracy")?));
        }
    }
    if !per_seed.is_empty() {
        s.push_str("\n## Fine-tuning baselines\n\n| baseline | seeds | mean | min | max |\n|---|---|---|---|---|\n");
        for (b, acc) in &per_seed {
            let (lo, hi) = min_max(acc);
            writeln!(s, "| {} | {} | {:.4} | {lo:.4} | {hi:.4} |", b.name(), acc.len(), mean(acc)).unwrap();
        }
        let get = |b: Baseline| per_seed.iter().find(|p| p.0 == b).map(|p| &p.1);
        if let (Some(frel), Some(frozen)) = (get(Baseline::Frel), get(Baseline::FrozenCnn)) {
            writeln!(s, "\nFREL minus frozen CNN (means): {:+.4}", mean(frel) - mean(frozen)).unwrap();
        }
        if let (Some(frel), Some(knn)) = (get(Baseline::Frel), get(Baseline::FselKnn)) {
            let wins = frel.iter().zip(knn).filter(|(f, k)| f > k).count();
            writeln!(s, "\nFREL beats kNN in {wins} of {} paired seeds.", frel.len().min(knn.len())).unwrap();
        }
    }

    let abl = dir.join(ABLATION_CSV);
    if abl.is_file() {
        s.push_str("\n## Subcarrier ablation\n\n");
        s.push_str(&Table::read(&abl)?.markdown());
    }

    let prox = dir.join(PROXIMITY_CSV);
    if prox.is_file() {
        s.push_str("\n## Proximity\n\nRows are monitors, columns subjects.\n\n");
        s.push_str(&Table::read(&prox)?.markdown());
    }

    if !missing.is_empty() {
        s.push_str("\n## Missing inputs\n\n");
        for f in &missing {
            writeln!(s, "- {f}").unwrap();
        }
    }

    let path = dir.join(REPORT_MD);
    fs::write(&path, s)?;
    log::info!("wrote {}", path.display());
    Ok(path)
}
