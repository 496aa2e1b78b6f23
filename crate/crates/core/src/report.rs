//! Coefficient summaries, chain statistics and result files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gibbs::GibbsOutput;
use crate::io::{fmt_f64, Standardization};
use crate::pipeline::PathPoint;
use crate::selection::{CredibleIntervals, SelectionResult, TailProbMatrix};
use crate::tuning::WaicReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub snp: String,
    pub phenotype: String,
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
    pub tail_prob: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

pub fn default_names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

impl SummaryTable {
    /// One row per coefficient in row-major `(snp, phenotype)` order.
    pub fn build(
        snp_names: &[String],
        phenotype_names: &[String],
        sd: &DMatrix<f64>,
        intervals: &CredibleIntervals,
        tail: &TailProbMatrix,
        selection: &SelectionResult,
    ) -> Result<Self> {
        let (d, c) = intervals.mean.shape();
        if snp_names.len() != d || phenotype_names.len() != c {
            return Err(Error::DimensionMismatch(format!(
                "{} SNP names and {} phenotype names for a {d}x{c} coefficient matrix",
                snp_names.len(),
                phenotype_names.len()
            )));
        }
        let mut rows = Vec::with_capacity(d * c);
        for i in 0..d {
            for j in 0..c {
                rows.push(SummaryRow {
                    snp: snp_names[i].clone(),
                    phenotype: phenotype_names[j].clone(),
                    mean: intervals.mean[(i, j)],
                    sd: sd[(i, j)],
                    lo: intervals.lo[(i, j)],
                    hi: intervals.hi[(i, j)],
                    tail_prob: tail.p[(i, j)],
                    selected: selection.is_selected(i, j),
                });
            }
        }
        Ok(Self { rows })
    }

    /// Mean, sd and interval endpoints multiplied by the phenotype column sd.
    pub fn to_original_scale(&self, t: &Standardization, c: usize) -> Self {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let s = t.sds[k % c];
                SummaryRow {
                    mean: r.mean * s,
                    sd: r.sd * s,
                    lo: r.lo * s,
                    hi: r.hi * s,
                    ..r.clone()
                }
            })
            .collect();
        Self { rows }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "snp,phenotype,mean,sd,lo,hi,tail_prob,selected")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.snp,
                r.phenotype,
                fmt_f64(r.mean),
                fmt_f64(r.sd),
                fmt_f64(r.lo),
                fmt_f64(r.hi),
                fmt_f64(r.tail_prob),
                u8::from(r.selected)
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
        let mut rows = Vec::new();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(path, k + 1, e.to_string()))?;
            let num = |j: usize| -> Result<f64> {
                rec.get(j).and_then(|s| s.parse().ok()).ok_or_else(|| {
                    parse_err(path, k + 1, format!("bad number in column {}", j + 1))
                })
            };
            rows.push(SummaryRow {
                snp: rec.get(0).unwrap_or_default().to_string(),
                phenotype: rec.get(1).unwrap_or_default().to_string(),
                mean: num(2)?,
                sd: num(3)?,
                lo: num(4)?,
                hi: num(5)?,
                tail_prob: num(6)?,
                selected: rec.get(7) == Some("1"),
            });
        }
        Ok(Self { rows })
    }
}

fn parse_err(path: &Path, row: usize, msg: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        col: 0,
        msg,
    }
}

/// Initial-positive-sequence estimate of the effective sample size.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|t| (x[t] - mean) * (x[t + lag] - mean))
            .sum::<f64>()
            / n as f64
            / c0
    };
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = if k == 0 {
            1.0 + acf(1)
        } else {
            acf(2 * k) + acf(2 * k + 1)
        };
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

/// Potential scale reduction from the two halves of a single chain.
pub fn split_rhat(x: &[f64]) -> f64 {
    let half = x.len() / 2;
    if half < 2 {
        return f64::NAN;
    }
    let chains = [&x[..half], &x[x.len() - half..]];
    let n = half as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let w = 0.5 * (vars[0] + vars[1]);
    let grand = 0.5 * (means[0] + means[1]);
    let b_over_n = (means[0] - grand).powi(2) + (means[1] - grand).powi(2);
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b_over_n) / w).sqrt()
}

/// Monte Carlo standard error of the mean by non-overlapping batch means.
pub fn batch_means_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStat {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub split_rhat: f64,
}

fn chain_stat(name: String, x: &[f64]) -> ChainStat {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    ChainStat {
        parameter: name,
        mean,
        sd,
        ess: effective_sample_size(x),
        split_rhat: split_rhat(x),
    }
}

pub fn chain_stats(
    out: &GibbsOutput,
    snp_names: &[String],
    phenotype_names: &[String],
) -> Vec<ChainStat> {
    let mut stats = Vec::new();
    if out.is_empty() {
        return stats;
    }
    let (d, c) = out.w_draws[0].shape();
    for i in 0..d {
        for j in 0..c {
            let x: Vec<f64> = out.w_draws.iter().map(|w| w[(i, j)]).collect();
            stats.push(chain_stat(
                format!("W[{},{}]", snp_names[i], phenotype_names[j]),
                &x,
            ));
        }
    }
    for (name, (r, s)) in [
        ("Sigma11", (0, 0)),
        ("Sigma12", (0, 1)),
        ("Sigma22", (1, 1)),
    ] {
        let x: Vec<f64> = out.sigma_draws.iter().map(|m| m[(r, s)]).collect();
        stats.push(chain_stat(name.to_string(), &x));
    }
    for i in 0..d {
        let x: Vec<f64> = out.omega2_draws.iter().map(|o| o[i]).collect();
        stats.push(chain_stat(format!("omega2[{}]", snp_names[i]), &x));
    }
    stats
}

/// Everything a fit writes to its output directory.
#[derive(Debug, Clone)]
pub struct RunResults {
    pub snp_names: Vec<String>,
    pub phenotype_names: Vec<String>,
    pub summary: SummaryTable,
    pub selection: SelectionResult,
    pub standardization: Option<Standardization>,
    pub waic: Option<WaicReport>,
    pub elbo_trace: Vec<f64>,
    pub path: Vec<PathPoint>,
    pub chain_stats: Vec<ChainStat>,
    /// Extra fields merged into `report.json`.
    pub details: Value,
}

fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Writes `summary.csv`, `summary_original_scale.csv` (when standardized),
/// `selection.csv`, `report.json`, `elbo_trace.csv`, `selection_counts.csv`,
/// `regularization_path.csv` and `chain_stats.csv`.
pub fn emit_results(results: &RunResults, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    results.summary.write_csv(&dir.join("summary.csv"))?;
    if let Some(t) = &results.standardization {
        results
            .summary
            .to_original_scale(t, results.phenotype_names.len())
            .write_csv(&dir.join("summary_original_scale.csv"))?;
    }

    let mut sel = BufWriter::new(File::create(dir.join("selection.csv"))?);
    writeln!(sel, "snp,phenotype,tail_prob")?;
    for r in results.summary.rows.iter().filter(|r| r.selected) {
        writeln!(sel, "{},{},{}", r.snp, r.phenotype, fmt_f64(r.tail_prob))?;
    }
    sel.flush()?;

    let mut elbo = BufWriter::new(File::create(dir.join("elbo_trace.csv"))?);
    writeln!(elbo, "sweep,elbo")?;
    for (k, v) in results.elbo_trace.iter().enumerate() {
        writeln!(elbo, "{},{}", k + 1, fmt_f64(*v))?;
    }
    elbo.flush()?;

    let mut counts = BufWriter::new(File::create(dir.join("selection_counts.csv"))?);
    writeln!(counts, "lambda2,phenotype,count")?;
    let mut path = BufWriter::new(File::create(dir.join("regularization_path.csv"))?);
    writeln!(path, "snp,phenotype,lambda2,mean")?;
    for p in &results.path {
        for (j, name) in results.phenotype_names.iter().enumerate() {
            writeln!(
                counts,
                "{},{},{}",
                fmt_f64(p.lambda2),
                name,
                p.selected_counts[j]
            )?;
        }
        for (i, snp) in results.snp_names.iter().enumerate() {
            for (j, ph) in results.phenotype_names.iter().enumerate() {
                writeln!(
                    path,
                    "{},{},{},{}",
                    snp,
                    ph,
                    fmt_f64(p.lambda2),
                    fmt_f64(p.mean[(i, j)])
                )?;
            }
        }
    }
    counts.flush()?;
    path.flush()?;

    let mut cs = BufWriter::new(File::create(dir.join("chain_stats.csv"))?);
    writeln!(cs, "parameter,mean,sd,ess,split_rhat")?;
    for s in &results.chain_stats {
        writeln!(
            cs,
            "{},{},{},{},{}",
            s.parameter,
            fmt_f64(s.mean),
            fmt_f64(s.sd),
            fmt_f64(s.ess),
            fmt_f64(s.split_rhat)
        )?;
    }
    cs.flush()?;

    let waic = results.waic.as_ref().map(|w| {
        json!({
            "waic": json_f64(w.waic),
            "lppd_term": json_f64(w.lppd_term),
            "penalty_term": json_f64(w.penalty_term),
        })
    });
    let mut report = json!({
        "alpha": results.selection.alpha,
        "threshold": json_f64(results.selection.threshold),
        "n_selected": results.selection.selected.len(),
        "per_region_counts": results.selection.per_region_counts,
        "waic": waic,
        "elbo_final": results.elbo_trace.last().map(|v| json_f64(*v)),
        "elbo_sweeps": results.elbo_trace.len(),
    });
    if let (Value::Object(base), Value::Object(extra)) = (&mut report, &results.details) {
        for (k, v) in extra {
            base.insert(k.clone(), v.clone());
        }
    }
    let mut f = BufWriter::new(File::create(dir.join("report.json"))?);
    serde_json::to_writer_pretty(&mut f, &report)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}
