//! Report tables, multi-seed summaries and dataset-size curves.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::ThreewayReport;
use super::runtime::RuntimeStats;
use crate::scene::io::write_file;
use crate::{Error, Result};

pub const REPORT_HEADER: &str =
    "method,threeway_epe,fg_dynamic,fg_static,bg,runtime_ms_mean,runtime_ms_std";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub report: ThreewayReport,
    pub runtime: Option<RuntimeStats>,
}

impl ReportRow {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{}",
            self.method,
            r.threeway_epe,
            opt(r.fg_dynamic_epe),
            opt(r.fg_static_epe),
            opt(r.bg_epe),
            opt(self.runtime.map(|t| t.mean_ms)),
            opt(self.runtime.map(|t| t.std_ms)),
        )
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        writeln!(s, "{}", r.csv_row()).expect("string write");
    }
    s
}

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_file(path, report_csv(rows).as_bytes())
}

/// Sorts rows by Threeway EPE, ties by method name.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        a.report
            .threeway_epe
            .total_cmp(&b.report.threeway_epe)
            .then_with(|| a.method.cmp(&b.method))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMeans {
    pub threeway_epe: f64,
    pub fg_dynamic_epe: Option<f64>,
    pub fg_static_epe: Option<f64>,
    pub bg_epe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub rows: Vec<(u64, ThreewayReport)>,
    pub mean: BucketMeans,
    /// Max minus min Threeway EPE across seeds.
    pub spread: f64,
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains and evaluates once per seed. The first failing seed aborts the
/// report with its identity.
pub fn variance_report<F>(seeds: &[u64], mut train_and_eval: F) -> Result<VarianceReport>
where
    F: FnMut(u64) -> Result<ThreewayReport>,
{
    if seeds.len() < 2 {
        return Err(Error::InvalidConfig(
            "variance report needs at least two seeds".into(),
        ));
    }
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let report = train_and_eval(seed).map_err(|e| Error::Seed {
            seed,
            source: Box::new(e),
        })?;
        rows.push((seed, report));
    }
    let t: Vec<f64> = rows.iter().map(|(_, r)| r.threeway_epe).collect();
    let max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = BucketMeans {
        threeway_epe: t.iter().sum::<f64>() / t.len() as f64,
        fg_dynamic_epe: mean_present(rows.iter().map(|(_, r)| r.fg_dynamic_epe)),
        fg_static_epe: mean_present(rows.iter().map(|(_, r)| r.fg_static_epe)),
        bg_epe: mean_present(rows.iter().map(|(_, r)| r.bg_epe)),
    };
    Ok(VarianceReport {
        rows,
        mean,
        spread: max - min,
    })
}

impl VarianceReport {
    /// `seed,threeway_epe,fg_dynamic,fg_static,bg` rows plus a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,threeway_epe,fg_dynamic,fg_static,bg\n");
        for (seed, r) in &self.rows {
            writeln!(
                s,
                "{seed},{},{},{},{}",
                r.threeway_epe,
                opt(r.fg_dynamic_epe),
                opt(r.fg_static_epe),
                opt(r.bg_epe)
            )
            .expect("string write");
        }
        let m = &self.mean;
        writeln!(
            s,
            "mean,{},{},{},{}",
            m.threeway_epe,
            opt(m.fg_dynamic_epe),
            opt(m.fg_static_epe),
            opt(m.bg_epe)
        )
        .expect("string write");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub fraction: f64,
    pub train_n: usize,
    pub report: ThreewayReport,
}

/// Number of leading training pairs used for `fraction` of `n`.
pub fn prefix_len(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "fraction {fraction} is outside (0, 1]"
        )));
    }
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidConfig(format!(
            "fraction {fraction} of {n} training pairs is an empty subset"
        )));
    }
    Ok(k.min(n))
}

/// One training run per fraction on the leading `prefix_len` pairs.
pub fn scaling_curve<F>(
    fractions: &[f64],
    n: usize,
    mut train_on_prefix: F,
) -> Result<Vec<ScalingPoint>>
where
    F: FnMut(usize) -> Result<ThreewayReport>,
{
    if fractions.is_empty() {
        return Err(Error::Empty("scaling fractions"));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "fractions must be strictly increasing, got {fractions:?}"
        )));
    }
    let lens = fractions
        .iter()
        .map(|&f| prefix_len(n, f))
        .collect::<Result<Vec<_>>>()?;
    fractions
        .iter()
        .zip(lens)
        .map(|(&fraction, train_n)| {
            Ok(ScalingPoint {
                fraction,
                train_n,
                report: train_on_prefix(train_n)?,
            })
        })
        .collect()
}

pub fn scaling_csv(points: &[ScalingPoint]) -> String {
    let mut s = String::from("fraction,train_n,threeway_epe,fg_dynamic,fg_static,bg\n");
    for p in points {
        let r = &p.report;
        writeln!(
            s,
            "{},{},{},{},{},{}",
            p.fraction,
            p.train_n,
            r.threeway_epe,
            opt(r.fg_dynamic_epe),
            opt(r.fg_static_epe),
            opt(r.bg_epe)
        )
        .expect("string write");
    }
    s
}

/// Least-squares slope of `ln(threeway)` against `ln(train_n)`.
pub fn loglog_slope(points: &[ScalingPoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidConfig(
            "slope needs at least two points".into(),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.train_n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.report.threeway_epe.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig(
            "slope needs distinct subset sizes".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(t: f64) -> ThreewayReport {
        ThreewayReport {
            threeway_epe: t,
            fg_dynamic_epe: Some(t),
            fg_static_epe: None,
            bg_epe: Some(0.0),
            bg_count: 1,
            fg_static_count: 0,
            fg_dynamic_count: 1,
        }
    }

    #[test]
    fn report_csv_layout() {
        let rows = vec![ReportRow {
            method: "zero_flow".into(),
            report: report(0.25),
            runtime: Some(RuntimeStats {
                mean_ms: 1.5,
                std_ms: 0.5,
                timed_runs: 2,
            }),
        }];
        assert_eq!(
            report_csv(&rows),
            format!("{REPORT_HEADER}\nzero_flow,0.25,0.25,,0,1.5,0.5\n")
        );
    }

    #[test]
    fn variance_mean_is_arithmetic() {
        let vals = [0.1, 0.2, 0.4];
        let v = variance_report(&[1, 2, 3], |s| Ok(report(vals[s as usize - 1]))).unwrap();
        assert!((v.mean.threeway_epe - (0.1 + 0.2 + 0.4) / 3.0).abs() < 1e-12);
        assert!((v.spread - 0.3).abs() < 1e-12);
        assert_eq!(v.mean.fg_static_epe, None);
        let same = variance_report(&[5, 5], |_| Ok(report(0.3))).unwrap();
        assert_eq!(same.rows[0], same.rows[1]);
        let err = variance_report(&[1, 7], |s| {
            if s == 7 {
                Err(Error::Empty("x"))
            } else {
                Ok(report(0.1))
            }
        });
        assert!(matches!(err, Err(Error::Seed { seed: 7, .. })));
        assert!(variance_report(&[1], |_| Ok(report(0.1))).is_err());
    }

    #[test]
    fn scaling_uses_prefixes() {
        let mut seen = Vec::new();
        let pts = scaling_curve(&[0.1, 0.5, 1.0], 200, |k| {
            seen.push(k);
            Ok(report(1.0 / k as f64))
        })
        .unwrap();
        assert_eq!(seen, vec![20, 100, 200]);
        assert!((loglog_slope(&pts).unwrap() + 1.0).abs() < 1e-12);
        assert!(scaling_curve(&[0.001], 100, |_| Ok(report(1.0))).is_err());
        assert!(scaling_curve(&[0.5, 0.1], 100, |_| Ok(report(1.0))).is_err());
        assert!(scaling_csv(&pts).starts_with("fraction,train_n,threeway_epe"));
    }
}
