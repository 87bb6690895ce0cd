//! Audio I/O, synthetic corpora, splits and plain-text manifests.

mod synthetic;
mod wav;

pub use synthetic::{generate_synthetic_corpus, Carrier, Segment, SyntheticClip, SyntheticSpec};
pub use wav::{decode_wav, encode_wav, quantize, read_wav, write_wav, AudioClip, PEAK_TARGET};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles with `seed`, cuts at the rounded fractions, and returns each part
/// in input order.
pub fn split(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if ids.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty corpus".into()));
    }
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let part = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| ids[i].clone()).collect::<Vec<_>>()
    };
    Ok(Split {
        train: part(0..n_train),
        val: part(n_train..n_train + n_val),
        test: part(n_train + n_val..n),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
}

/// `id<TAB>path` lines. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, p) = line
            .split_once('\t')
            .ok_or_else(|| Error::format("manifest", format!("line {}: expected id<TAB>path", n + 1)))?;
        let p = PathBuf::from(p);
        out.push(ManifestEntry {
            id: id.to_string(),
            path: if p.is_absolute() { p } else { base.join(p) },
        });
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{}\t{}", e.id, e.path.display()).expect("string write");
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub id: String,
    pub start: usize,
    pub end: usize,
    pub label: String,
}

pub fn format_labels(rows: &[LabelRow]) -> String {
    let mut s = String::new();
    for r in rows {
        writeln!(s, "{}\t{}\t{}\t{}", r.id, r.start, r.end, r.label).expect("string write");
    }
    s
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRow>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::format("labels", format!("line {}: {what}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected id<TAB>start<TAB>end<TAB>label"));
        }
        let start = f[1].parse().map_err(|_| bad("bad start sample"))?;
        let end = f[2].parse().map_err(|_| bad("bad end sample"))?;
        if end <= start {
            return Err(bad("empty segment"));
        }
        out.push(LabelRow {
            id: f[0].to_string(),
            start,
            end,
            label: f[3].to_string(),
        });
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn write_labels(rows: &[LabelRow], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_labels(rows))?;
    Ok(())
}

impl SyntheticClip {
    pub fn label_rows(&self) -> Vec<LabelRow> {
        self.segments
            .iter()
            .map(|s| LabelRow {
                id: self.clip.id.clone(),
                start: s.start,
                end: s.end,
                label: s.label.clone(),
            })
            .collect()
    }
}
