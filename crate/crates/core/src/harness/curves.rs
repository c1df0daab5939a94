//! Turns a run's CSV files into plain-text `(step, value)` series.
//!
//! Every series file is tab separated with a `step\tvalue` header. When a
//! `buckets.csv` sits next to the metrics file, per-bucket length and
//! accuracy series are written too, along with `bucket_summary.tsv` holding
//! the per-stage mean of each bucket's length and accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::curriculum::StageName;
use crate::error::{Error, Result};
use crate::harness::metrics::{read_buckets, read_metrics, BucketRow, MetricsRow};

fn series_text(points: impl IntoIterator<Item = (usize, f64)>) -> String {
    let mut s = String::from("step\tvalue\n");
    for (step, v) in points {
        let _ = writeln!(s, "{step}\t{v}");
    }
    s
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the series for `metrics` into `out`, optionally keeping only rows
/// of one stage. Returns the paths written.
pub fn emit_curves(metrics: &Path, out: &Path, stage: Option<StageName>) -> Result<Vec<PathBuf>> {
    let keep = |s: StageName| stage.is_none_or(|want| want == s);
    let rows: Vec<MetricsRow> = read_metrics(metrics)?.into_iter().filter(|r| keep(r.stage)).collect();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();

    let columns: [(&str, fn(&MetricsRow) -> f64); 5] = [
        ("reward", |r| r.mean_reward),
        ("acc_reward", |r| r.mean_acc_reward),
        ("format_reward", |r| r.mean_format_reward),
        ("len_reward", |r| r.mean_len_reward),
        ("response_length", |r| r.mean_response_length),
    ];
    for (name, f) in columns {
        let text = series_text(rows.iter().map(|r| (r.step, f(r))));
        write(out.join(format!("{name}.tsv")), &text, &mut written)?;
    }
    let val = series_text(rows.iter().filter_map(|r| r.val_accuracy.map(|v| (r.step, v))));
    write(out.join("val_accuracy.tsv"), &val, &mut written)?;

    let buckets_path = metrics.with_file_name("buckets.csv");
    if buckets_path.exists() {
        let buckets: Vec<BucketRow> = read_buckets(&buckets_path)?
            .into_iter()
            .filter(|r| keep(r.stage))
            .collect();
        let n_buckets = buckets.iter().map(|r| r.bucket + 1).max().unwrap_or(0);
        for b in 0..n_buckets {
            let mine: Vec<&BucketRow> = buckets.iter().filter(|r| r.bucket == b && r.responses > 0).collect();
            let len = series_text(mine.iter().map(|r| (r.step, r.mean_response_length)));
            write(out.join(format!("bucket{b}_length.tsv")), &len, &mut written)?;
            let acc = series_text(mine.iter().map(|r| (r.step, r.accuracy)));
            write(out.join(format!("bucket{b}_accuracy.tsv")), &acc, &mut written)?;
        }
        write(out.join("bucket_summary.tsv"), &bucket_summary(&buckets), &mut written)?;
    }
    Ok(written)
}

/// Response-weighted mean length and accuracy per (stage, bucket), stages in
/// order of first appearance.
pub fn bucket_summary(rows: &[BucketRow]) -> String {
    let mut order: Vec<StageName> = Vec::new();
    let mut acc: BTreeMap<(usize, usize), (usize, f64, f64)> = BTreeMap::new();
    for r in rows {
        let si = match order.iter().position(|&s| s == r.stage) {
            Some(i) => i,
            None => {
                order.push(r.stage);
                order.len() - 1
            }
        };
        let e = acc.entry((si, r.bucket)).or_insert((0, 0.0, 0.0));
        e.0 += r.responses;
        e.1 += r.mean_response_length * r.responses as f64;
        e.2 += r.accuracy * r.responses as f64;
    }
    let mut s = String::from("stage\tbucket\tresponses\tmean_response_length\taccuracy\n");
    for ((si, b), (n, len, a)) in acc {
        if n == 0 {
            continue;
        }
        let _ = writeln!(s, "{}\t{b}\t{n}\t{}\t{}", order[si], len / n as f64, a / n as f64);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, stage: StageName, bucket: usize, n: usize, len: f64, acc: f64) -> BucketRow {
        BucketRow {
            step,
            stage,
            bucket,
            responses: n,
            mean_response_length: len,
            accuracy: acc,
        }
    }

    #[test]
    fn summary_weights_by_responses() {
        let rows = [
            row(1, StageName::Easy, 0, 1, 2.0, 1.0),
            row(2, StageName::Easy, 0, 3, 6.0, 0.0),
            row(3, StageName::Hard, 1, 2, 9.0, 0.5),
            row(3, StageName::Hard, 0, 0, 0.0, 0.0),
        ];
        let s = bucket_summary(&rows);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "easy\t0\t4\t5\t0.25");
        assert_eq!(lines[2], "hard\t1\t2\t9\t0.5");
    }
}
