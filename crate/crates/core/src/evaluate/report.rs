//! Estimate tables, per-method summaries and histograms.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{EvalError, Method, PolicyEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub replication: usize,
    pub method: Method,
    pub bootstrap_index: Option<usize>,
    pub count: f64,
    pub rate: f64,
    pub pct_change: f64,
}

impl EstimateRow {
    pub fn from_estimate(replication: usize, estimate: &PolicyEstimate) -> Self {
        Self {
            replication,
            method: estimate.method,
            bootstrap_index: estimate.bootstrap_index,
            count: estimate.employment_count,
            rate: estimate.employment_rate,
            pct_change: estimate.pct_change_vs_observed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
    /// mean / (sd / √n).
    pub t_stat: f64,
    /// Mean of (value − oracle value of the same replication).
    pub bias: f64,
    pub bias_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub method: Method,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-width bins spanning the values; identical values give one bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi || bins <= 1 {
        return vec![(lo, hi, finite.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &finite {
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| {
            let bin_hi = if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width };
            (lo + b as f64 * width, bin_hi, c)
        })
        .collect()
}

/// Every estimate of a run, in replication order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EstimateRow>,
}

impl EvalReport {
    pub fn new(rows: Vec<EstimateRow>) -> Self {
        Self { rows }
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        m.sort_unstable();
        m.dedup();
        m
    }

    pub fn values(&self, method: Method) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.pct_change.is_finite())
            .map(|r| r.pct_change)
            .collect()
    }

    pub fn summaries(&self) -> Vec<MethodSummary> {
        let oracle: BTreeMap<usize, f64> = self
            .rows
            .iter()
            .filter(|r| r.method == Method::Oracle)
            .map(|r| (r.replication, r.pct_change))
            .collect();
        self.methods()
            .into_iter()
            .map(|method| {
                let values = self.values(method);
                let mut sorted = values.clone();
                sorted.sort_by(f64::total_cmp);
                let (mean, sd) = mean_sd(&values);
                let n = values.len();
                let diffs: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.pct_change.is_finite())
                    .filter_map(|r| oracle.get(&r.replication).map(|o| r.pct_change - o))
                    .filter(|d| d.is_finite())
                    .collect();
                let (bias, bias_sd) = mean_sd(&diffs);
                MethodSummary {
                    method,
                    n,
                    mean,
                    sd,
                    min: sorted.first().copied().unwrap_or(f64::NAN),
                    q05: quantile(&sorted, 0.05),
                    q25: quantile(&sorted, 0.25),
                    median: quantile(&sorted, 0.5),
                    q75: quantile(&sorted, 0.75),
                    q95: quantile(&sorted, 0.95),
                    max: sorted.last().copied().unwrap_or(f64::NAN),
                    t_stat: mean / (sd / (n as f64).sqrt()),
                    bias,
                    bias_se: bias_sd / (diffs.len() as f64).sqrt(),
                }
            })
            .collect()
    }

    pub fn summary(&self, method: Method) -> Option<MethodSummary> {
        self.summaries().into_iter().find(|s| s.method == method)
    }

    pub fn histograms(&self, bins: usize) -> Vec<HistogramRow> {
        self.methods()
            .into_iter()
            .flat_map(|method| {
                histogram(&self.values(method), bins)
                    .into_iter()
                    .map(move |(bin_lo, bin_hi, count)| HistogramRow {
                        method,
                        bin_lo,
                        bin_hi,
                        count,
                    })
            })
            .collect()
    }

    pub fn write_estimates_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| EvalError::Diagnostics(format!("writing estimates: {e}"));
        w.write_record(["replication", "method", "bootstrap_index", "count", "rate", "pct_change"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.replication.to_string(),
                r.method.label().to_string(),
                r.bootstrap_index.map(|b| b.to_string()).unwrap_or_default(),
                r.count.to_string(),
                r.rate.to_string(),
                r.pct_change.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| EvalError::Diagnostics(e.to_string()))
    }

    pub fn read_estimates_csv<R: Read>(reader: R) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(reader);
        let bad = |msg: String| EvalError::Diagnostics(format!("reading estimates: {msg}"));
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 6 {
                return Err(bad(format!("expected 6 fields, got {}", rec.len())));
            }
            let num = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(format!("`{}`: {e}", &rec[k])));
            rows.push(EstimateRow {
                replication: rec[0].parse().map_err(|e| bad(format!("replication: {e}")))?,
                method: Method::from_label(&rec[1]).ok_or_else(|| bad(format!("unknown method `{}`", &rec[1])))?,
                bootstrap_index: if rec[2].is_empty() {
                    None
                } else {
                    Some(rec[2].parse().map_err(|e| bad(format!("bootstrap_index: {e}")))?)
                },
                count: num(3)?,
                rate: num(4)?,
                pct_change: num(5)?,
            });
        }
        Ok(Self { rows })
    }

    pub fn write_histograms_csv<W: Write>(&self, writer: W, bins: usize) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| EvalError::Diagnostics(format!("writing histograms: {e}"));
        w.write_record(["method", "bin_lo", "bin_hi", "count"]).map_err(io)?;
        for h in self.histograms(bins) {
            w.write_record([
                h.method.label().to_string(),
                h.bin_lo.to_string(),
                h.bin_hi.to_string(),
                h.count.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| EvalError::Diagnostics(e.to_string()))
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| EvalError::Diagnostics(format!("writing summary: {e}"));
        w.write_record([
            "method", "n", "mean", "sd", "min", "q05", "q25", "median", "q75", "q95", "max", "t_stat", "bias", "bias_se",
        ])
        .map_err(io)?;
        for s in self.summaries() {
            let mut rec = vec![s.method.label().to_string(), s.n.to_string()];
            rec.extend(
                [s.mean, s.sd, s.min, s.q05, s.q25, s.median, s.q75, s.q95, s.max, s.t_stat, s.bias, s.bias_se]
                    .iter()
                    .map(f64::to_string),
            );
            w.write_record(rec).map_err(io)?;
        }
        w.flush().map_err(|e| EvalError::Diagnostics(e.to_string()))
    }
}
