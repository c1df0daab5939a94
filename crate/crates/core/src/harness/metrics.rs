//! Per-step training metrics and their CSV files.
//!
//! `metrics.csv` has a fixed column order:
//!
//! ```text
//! step,stage,mean_reward,mean_acc_reward,mean_format_reward,mean_len_reward,mean_response_length,val_accuracy,wall_time_ms
//! ```
//!
//! `val_accuracy` is empty on steps without a validation pass and
//! `wall_time_ms` is empty unless wall-clock recording is enabled. Per-bucket
//! statistics and the group-accuracy histogram go to `buckets.csv` and
//! `group_acc_histogram.csv`.

use std::fmt::Write as _;
use std::path::Path;

use crate::curriculum::StageName;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "step,stage,mean_reward,mean_acc_reward,mean_format_reward,mean_len_reward,mean_response_length,val_accuracy,wall_time_ms";
pub const BUCKETS_HEADER: &str = "step,stage,bucket,responses,mean_response_length,accuracy";
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketStat {
    pub responses: usize,
    pub mean_response_length: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub stage: StageName,
    pub mean_reward: f64,
    pub mean_acc_reward: f64,
    pub mean_format_reward: f64,
    pub mean_len_reward: f64,
    pub mean_response_length: f64,
    /// Counts of groups by accuracy, in bins of width 0.1 (accuracy 1 falls in the last bin).
    pub group_acc_histogram: [usize; HISTOGRAM_BINS],
    pub val_accuracy: Option<f64>,
    pub wall_time_ms: Option<u64>,
    pub buckets: Vec<BucketStat>,
}

pub fn histogram_bin(acc: f64) -> usize {
    ((acc * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            r.stage,
            r.mean_reward,
            r.mean_acc_reward,
            r.mean_format_reward,
            r.mean_len_reward,
            r.mean_response_length,
            opt(r.val_accuracy),
            opt(r.wall_time_ms)
        );
    }
    out
}

pub fn buckets_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(BUCKETS_HEADER);
    out.push('\n');
    for r in records {
        for (b, s) in r.buckets.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.stage, b, s.responses, s.mean_response_length, s.accuracy
            );
        }
    }
    out
}

pub fn histogram_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("step,stage");
    for i in 0..HISTOGRAM_BINS {
        let _ = write!(out, ",bin{i}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{}", r.step, r.stage);
        for c in r.group_acc_histogram {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// One parsed row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub stage: StageName,
    pub mean_reward: f64,
    pub mean_acc_reward: f64,
    pub mean_format_reward: f64,
    pub mean_len_reward: f64,
    pub mean_response_length: f64,
    pub val_accuracy: Option<f64>,
    pub wall_time_ms: Option<u64>,
}

/// One parsed row of `buckets.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub step: usize,
    pub stage: StageName,
    pub bucket: usize,
    pub responses: usize,
    pub mean_response_length: f64,
    pub accuracy: f64,
}

struct Fields<'a> {
    path: &'a str,
    line: usize,
    cells: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line: self.line,
            message: message.into(),
        }
    }

    fn get<T: std::str::FromStr>(&self, i: usize, name: &str) -> Result<T> {
        self.cells[i]
            .parse()
            .map_err(|_| self.err(format!("bad {name} value {:?}", self.cells[i])))
    }

    fn get_opt<T: std::str::FromStr>(&self, i: usize, name: &str) -> Result<Option<T>> {
        if self.cells[i].is_empty() {
            Ok(None)
        } else {
            self.get(i, name).map(Some)
        }
    }
}

fn parse_rows<T>(
    text: &str,
    path: &str,
    header: &str,
    mut row: impl FnMut(&Fields<'_>) -> Result<T>,
) -> Result<Vec<T>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == header => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                message: format!("unexpected header {h:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let columns = header.split(',').count();
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f = Fields {
            path,
            line: i + 1,
            cells: line.trim_end().split(',').collect(),
        };
        if f.cells.len() != columns {
            return Err(f.err(format!("expected {columns} columns, found {}", f.cells.len())));
        }
        out.push(row(&f)?);
    }
    Ok(out)
}

pub fn parse_metrics(text: &str, path: &str) -> Result<Vec<MetricsRow>> {
    parse_rows(text, path, METRICS_HEADER, |f| {
        Ok(MetricsRow {
            step: f.get(0, "step")?,
            stage: f.get(1, "stage")?,
            mean_reward: f.get(2, "mean_reward")?,
            mean_acc_reward: f.get(3, "mean_acc_reward")?,
            mean_format_reward: f.get(4, "mean_format_reward")?,
            mean_len_reward: f.get(5, "mean_len_reward")?,
            mean_response_length: f.get(6, "mean_response_length")?,
            val_accuracy: f.get_opt(7, "val_accuracy")?,
            wall_time_ms: f.get_opt(8, "wall_time_ms")?,
        })
    })
}

pub fn parse_buckets(text: &str, path: &str) -> Result<Vec<BucketRow>> {
    parse_rows(text, path, BUCKETS_HEADER, |f| {
        Ok(BucketRow {
            step: f.get(0, "step")?,
            stage: f.get(1, "stage")?,
            bucket: f.get(2, "bucket")?,
            responses: f.get(3, "responses")?,
            mean_response_length: f.get(4, "mean_response_length")?,
            accuracy: f.get(5, "accuracy")?,
        })
    })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text, &path.display().to_string())
}

pub fn read_buckets(path: &Path) -> Result<Vec<BucketRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_buckets(&text, &path.display().to_string())
}
