//! CSV outputs of a campaign.
//!
//! Floats use Rust's shortest round-trip formatting, so files are
//! byte-identical whenever the underlying values are.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::MethodTag;
use super::harness::{CampaignResult, MethodRecord, TrialFailure, TrialRecord};
use crate::error::Result;

pub const TRIALS_HEADER: &str = "trial_id,seed,method,frobenius_se,grassmann_se,eapm_iters,residual,flags";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Frobenius,
    Grassmann,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Frobenius, Metric::Grassmann];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Frobenius => "frobenius",
            Metric::Grassmann => "grassmann",
        }
    }

    pub fn of(&self, r: &MethodRecord) -> f64 {
        match self {
            Metric::Frobenius => r.frobenius_se,
            Metric::Grassmann => r.grassmann_se,
        }
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn trials_csv(records: &[TrialRecord]) -> String {
    let mut out = format!("{TRIALS_HEADER}\n");
    for t in records {
        for m in &t.methods {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{},{},{}",
                t.trial_id,
                t.seed,
                m.method.as_str(),
                m.frobenius_se,
                m.grassmann_se,
                opt(m.iterations),
                opt(m.residual.map(|r| format!("{r:e}"))),
                m.flags()
            );
        }
    }
    out
}

pub fn diagnostics_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from(
        "trial_id,seed,raw_error,averaged_error,structure_violation,empirical_snr_db,zero_frobenius_se,zero_grassmann_se\n",
    );
    for t in records {
        let d = &t.diagnostics;
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{:e},{},{:e},{:e}",
            t.trial_id,
            t.seed,
            d.raw_error,
            d.averaged_error,
            d.structure_violation,
            d.empirical_snr_db,
            d.zero_frobenius_se,
            d.zero_grassmann_se
        );
    }
    out
}

pub fn failures_csv(failures: &[TrialFailure]) -> String {
    let mut out = String::from("trial_id,seed,reason\n");
    for f in failures {
        let reason = f.reason.replace('"', "\"\"");
        let _ = writeln!(out, "{},{},\"{reason}\"", f.trial_id, f.seed);
    }
    out
}

/// Sorted values of one metric for one method.
pub fn sorted_errors(records: &[TrialRecord], method: MethodTag, metric: Metric) -> Vec<f64> {
    let mut v: Vec<f64> = records.iter().filter_map(|t| t.method(method)).map(|m| metric.of(m)).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Empirical CDF table: the `i`-th smallest value gets `i / n`.
pub fn cdf_csv(sorted: &[f64]) -> String {
    let n = sorted.len();
    let mut out = String::from("se_value,empirical_cdf\n");
    for (i, v) in sorted.iter().enumerate() {
        let _ = writeln!(out, "{v:e},{:e}", (i + 1) as f64 / n as f64);
    }
    out
}

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn summary_csv(records: &[TrialRecord], methods: &[MethodTag]) -> String {
    let mut out = String::from("method,metric,n,q1,median,q3\n");
    for &m in methods {
        for metric in Metric::ALL {
            let v = sorted_errors(records, m, metric);
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{:e}",
                m.as_str(),
                metric.as_str(),
                v.len(),
                quantile(&v, 0.25),
                quantile(&v, 0.5),
                quantile(&v, 0.75)
            );
        }
    }
    out
}

/// Writes every campaign file into `dir` and returns their paths.
pub fn write_outputs(dir: &Path, result: &CampaignResult, methods: &[MethodTag]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![
        ("trials.csv".to_string(), trials_csv(&result.records)),
        ("diagnostics.csv".to_string(), diagnostics_csv(&result.records)),
        ("summary.csv".to_string(), summary_csv(&result.records, methods)),
        ("failures.csv".to_string(), failures_csv(&result.failures)),
    ];
    for &m in methods {
        for metric in Metric::ALL {
            files.push((
                format!("cdf_{}_{}.csv", m.as_str(), metric.as_str()),
                cdf_csv(&sorted_errors(&result.records, m, metric)),
            ));
        }
    }
    let mut paths = Vec::with_capacity(files.len());
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        paths.push(p);
    }
    Ok(paths)
}
