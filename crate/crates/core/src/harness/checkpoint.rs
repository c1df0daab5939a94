//! Text checkpoints of the policy logits.
//!
//! The first line is `B T_cap V stage step seed`; each following line holds the
//! `V` logits of one `(bucket, position)` row in row-major order, written with
//! 17 significant digits so values survive a round trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::curriculum::StageName;
use crate::env::{PolicyDims, PolicyParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub params: PolicyParams,
    pub stage: StageName,
    pub step: usize,
    pub seed: u64,
}

pub fn to_text(params: &PolicyParams, stage: StageName, step: usize, seed: u64) -> String {
    let d = params.dims();
    let mut out = format!("{} {} {} {} {} {}\n", d.buckets, d.t_cap, d.vocab, stage, step, seed);
    for row in params.as_slice().chunks(d.vocab) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

pub fn parse(text: &str, path: &str) -> Result<CheckpointFile> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_string(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| err(1, "empty checkpoint".into()))?
        .split_whitespace()
        .collect();
    if header.len() != 6 {
        return Err(err(1, format!("header needs 6 fields, found {}", header.len())));
    }
    let field = |i: usize| -> Result<usize> {
        header[i]
            .parse()
            .map_err(|_| err(1, format!("bad header field {:?}", header[i])))
    };
    let dims = PolicyDims {
        buckets: field(0)?,
        t_cap: field(1)?,
        vocab: field(2)?,
    };
    let stage: StageName = header[3].parse().map_err(|e: Error| err(1, e.to_string()))?;
    let step = field(4)?;
    let seed: u64 = header[5]
        .parse()
        .map_err(|_| err(1, format!("bad seed {:?}", header[5])))?;

    let mut logits = Vec::with_capacity(dims.len());
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = logits.len();
        for cell in line.split_whitespace() {
            logits.push(
                cell.parse::<f64>()
                    .map_err(|_| err(i + 2, format!("bad logit {cell:?}")))?,
            );
        }
        if logits.len() - before != dims.vocab {
            return Err(err(i + 2, format!("expected {} values per row", dims.vocab)));
        }
        rows += 1;
    }
    if rows != dims.buckets * dims.t_cap {
        return Err(err(
            rows + 1,
            format!("expected {} rows, found {rows}", dims.buckets * dims.t_cap),
        ));
    }
    Ok(CheckpointFile {
        params: PolicyParams::from_vec(dims, logits)?,
        stage,
        step,
        seed,
    })
}

pub fn write(path: &Path, params: &PolicyParams, stage: StageName, step: usize, seed: u64) -> Result<()> {
    std::fs::write(path, to_text(params, stage, step, seed)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<CheckpointFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_exact(values in prop::collection::vec(-1e6f64..1e6, 2 * 3 * 6), step in 0usize..10_000, seed: u64) {
            let dims = PolicyDims { buckets: 2, t_cap: 3, vocab: 6 };
            let params = PolicyParams::from_vec(dims, values).unwrap();
            let text = to_text(&params, StageName::Hard, step, seed);
            let back = parse(&text, "ckpt").unwrap();
            prop_assert_eq!(back.params, params);
            prop_assert_eq!(back.step, step);
            prop_assert_eq!(back.seed, seed);
            prop_assert_eq!(back.stage, StageName::Hard);
        }
    }

    #[test]
    fn layout() {
        let dims = PolicyDims {
            buckets: 1,
            t_cap: 2,
            vocab: 3,
        };
        let params = PolicyParams::from_vec(dims, vec![0.0, 1.5, -2.0, 0.1, 0.2, 0.3]).unwrap();
        let text = to_text(&params, StageName::Easy, 25, 7);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "1 2 3 easy 25 7");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(' ').count(), 3);
        assert!(lines[2].starts_with("1.0000000000000001e-1"));
    }

    #[test]
    fn truncated_file_rejected() {
        let text = "1 2 3 easy 25 7\n0 0 0\n";
        assert!(matches!(parse(text, "c"), Err(Error::Parse { .. })));
        assert!(parse("1 2 3 easy\n", "c").is_err());
    }
}
