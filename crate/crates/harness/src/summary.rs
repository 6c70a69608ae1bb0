//! Mean and 95% confidence interval of each metric over trials, on 1 s bins.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::experiment::CSV_HEADER;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

pub const METRICS: [&str; 4] = ["tr_P", "map_rmse", "tr_Sigma", "pose_err"];

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("{path}: schema mismatch: {detail}")]
    SchemaMismatch { path: String, detail: String },
    #[error("{path}: {detail}")]
    Read { path: String, detail: String },
}

/// `(planner, utility, mapping_mode)`
pub type GroupKey = (String, String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: GroupKey,
    pub time: f64,
    pub metric: &'static str,
    pub n: usize,
    pub mean: f64,
    /// Half-width of the 95% interval; zero when `n = 1`.
    pub ci: f64,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    time: f64,
    values: [f64; 4],
}

type Trials = BTreeMap<GroupKey, BTreeMap<(String, u64), Vec<Sample>>>;

fn read_into(path: &Path, trials: &mut Trials) -> Result<(), SummaryError> {
    let p = path.display().to_string();
    let read = |detail: String| SummaryError::Read { path: p.clone(), detail };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| read(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| read(e.to_string()))?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(SummaryError::SchemaMismatch { path: p.clone(), detail: format!("header `{}`", header.join(",")) });
    }
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| read(e.to_string()))?;
        let num = |i: usize| {
            rec[i].parse::<f64>().map_err(|_| SummaryError::SchemaMismatch {
                path: p.clone(),
                detail: format!("row {}: column {} = `{}`", line + 2, CSV_HEADER[i], &rec[i]),
            })
        };
        let seed = rec[1].parse::<u64>().map_err(|_| read(format!("row {}: bad env_seed", line + 2)))?;
        let sample = Sample { time: num(2)?, values: [num(3)?, num(4)?, num(5)?, num(6)?] };
        let group = (rec[7].to_string(), rec[8].to_string(), rec[9].to_string());
        trials.entry(group).or_default().entry((rec[0].to_string(), seed)).or_default().push(sample);
    }
    Ok(())
}

/// Record nearest to `t`; the earlier record wins ties.
fn nearest(samples: &[Sample], t: f64) -> &Sample {
    let mut best = &samples[0];
    for s in samples {
        if (s.time - t).abs() < (best.time - t).abs() {
            best = s;
        }
    }
    best
}

fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

/// Summaries for every configuration found in `paths`, at bins
/// `0, 1, ..., floor(last time)` seconds.
pub fn summarize(paths: &[&Path]) -> Result<Vec<SummaryRow>, SummaryError> {
    let mut trials = Trials::new();
    for p in paths {
        read_into(p, &mut trials)?;
    }
    let mut out = Vec::new();
    for (group, by_trial) in &trials {
        let series: Vec<&Vec<Sample>> = by_trial.values().filter(|s| !s.is_empty()).collect();
        let end = series.iter().flat_map(|s| s.iter().map(|x| x.time)).fold(0.0f64, f64::max);
        for bin in 0..=(end.floor() as usize) {
            let t = bin as f64;
            let picked: Vec<&Sample> = series.iter().map(|s| nearest(s, t)).collect();
            for (m, name) in METRICS.iter().enumerate() {
                let xs: Vec<f64> = picked.iter().map(|s| s.values[m]).collect();
                let (mean, ci) = mean_ci(&xs);
                out.push(SummaryRow { group: group.clone(), time: t, metric: name, n: xs.len(), mean, ci });
            }
        }
    }
    Ok(out)
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], mut out: W) -> io::Result<()> {
    writeln!(out, "planner,utility,mapping_mode,time,metric,n,mean,ci_low,ci_high,note")?;
    for r in rows {
        let note = if r.n == 1 { "n=1" } else { "" };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.group.0,
            r.group.1,
            r.group.2,
            r.time,
            r.metric,
            r.n,
            r.mean,
            r.mean - r.ci,
            r.mean + r.ci,
            note
        )?;
    }
    out.flush()
}
