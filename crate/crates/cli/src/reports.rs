//! Significance tests over alignment tables, semantic-phonetic preference
//! files and the report-tree digest.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use braintools::semphon::{preference_by_layer, Metric, WordTriple};
use braintools::stats::{wilcoxon_differences, WilcoxonMode, MIN_PAIRS};
use braintools::tensorio::load_tensor;
use braintools::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result, StageContext};
use crate::util::{read_csv, read_json, write_csv};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// ROI → participant → B, from a CSV with `participant`, `roi` and `B`
/// columns.
pub type AlignmentTable = BTreeMap<String, BTreeMap<String, f64>>;

pub fn read_alignment_table(path: &Path) -> Result<AlignmentTable> {
    let (header, rows) = read_csv(path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Core {
                stage: "stats",
                source: Error::Format {
                    path: Some(path.to_path_buf()),
                    msg: format!("alignment table lacks a {name:?} column"),
                },
            })
    };
    let (pc, rc, bc) = (col("participant")?, col("roi")?, col("B")?);
    let mut out = AlignmentTable::new();
    for (i, row) in rows.iter().enumerate() {
        let b: f64 = row[bc].parse().map_err(|_| CliError::Core {
            stage: "stats",
            source: Error::Data {
                index: (i, bc),
                msg: format!("{:?} is not a number", row[bc]),
            },
        })?;
        out.entry(row[rc].clone())
            .or_default()
            .insert(row[pc].clone(), b);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Ok,
    /// Fewer than the minimum number of paired participants.
    Insufficient,
    /// Every paired difference was zero.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceTest {
    pub comparison: String,
    pub roi: String,
    pub a: String,
    pub b: String,
    pub participants: Vec<String>,
    pub n_pairs: usize,
    pub status: TestStatus,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    #[serde(rename = "W")]
    pub w: Option<f64>,
    pub w_plus: Option<f64>,
    pub w_minus: Option<f64>,
    pub p: Option<f64>,
    pub mode: Option<WilcoxonMode>,
    /// `p < 0.05`.
    pub star: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceReport {
    pub tests: Vec<SignificanceTest>,
}

/// One Wilcoxon test per ROI over the participants present in both tables.
pub fn compare_tables(
    comparison: &str,
    a_name: &str,
    a: &AlignmentTable,
    b_name: &str,
    b: &AlignmentTable,
    mode: WilcoxonMode,
) -> Result<Vec<SignificanceTest>> {
    let mut tests = Vec::new();
    for (roi, pa) in a {
        let Some(pb) = b.get(roi) else { continue };
        let participants: Vec<String> =
            pa.keys().filter(|p| pb.contains_key(*p)).cloned().collect();
        let va: Vec<f64> = participants.iter().map(|p| pa[p]).collect();
        let vb: Vec<f64> = participants.iter().map(|p| pb[p]).collect();
        let n = participants.len();
        let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let mut t = SignificanceTest {
            comparison: comparison.into(),
            roi: roi.clone(),
            a: a_name.into(),
            b: b_name.into(),
            participants,
            n_pairs: n,
            status: TestStatus::Insufficient,
            mean_a: avg(&va),
            mean_b: avg(&vb),
            w: None,
            w_plus: None,
            w_minus: None,
            p: None,
            mode: None,
            star: false,
        };
        if n < MIN_PAIRS {
            log::warn!("{comparison}/{roi}: {n} paired participants, need {MIN_PAIRS}; no test");
        } else {
            let diffs: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
            let r = wilcoxon_differences(&diffs, mode).stage("stats")?;
            t.status = if r.degenerate {
                TestStatus::Degenerate
            } else {
                TestStatus::Ok
            };
            t.w = Some(r.w);
            t.w_plus = Some(r.w_plus);
            t.w_minus = Some(r.w_minus);
            t.p = Some(r.p_two_sided);
            t.mode = Some(r.mode);
            t.star = !r.degenerate && r.p_two_sided < SIGNIFICANCE_LEVEL;
        }
        tests.push(t);
    }
    Ok(tests)
}

/// Triple index for the preference score. Each layer file is a
/// `n_items × dim` tensor; triples refer to its rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleIndex {
    pub layers: BTreeMap<usize, PathBuf>,
    pub triples: Vec<TripleRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleRef {
    pub word: String,
    pub word_row: usize,
    pub semantic_row: usize,
    pub phonetic_row: usize,
}

/// Computes per-layer preference from a triple index and writes
/// `layer,d,n_triples`.
pub fn semphon_from_index(index_path: &Path, metric: Metric, out: &Path) -> Result<()> {
    const STAGE: &str = "semphon";
    let index: TripleIndex = read_json(index_path)?;
    let base = index_path.parent().unwrap_or(Path::new("."));
    let mut triples = Vec::new();
    for (&layer, file) in &index.layers {
        let path = if file.is_relative() {
            base.join(file)
        } else {
            file.clone()
        };
        let m = load_tensor(&path).stage(STAGE)?;
        let row = |i: usize| -> Result<Vec<f64>> {
            if i >= m.nrows() {
                return Err(CliError::Core {
                    stage: STAGE,
                    source: Error::Input(format!("row {i} out of range for {}", path.display())),
                });
            }
            Ok(m.row(i).iter().copied().collect())
        };
        for t in &index.triples {
            triples.push(WordTriple {
                word: t.word.clone(),
                layer,
                word_vec: row(t.word_row)?,
                semantic_vec: row(t.semantic_row)?,
                phonetic_vec: row(t.phonetic_row)?,
            });
        }
    }
    let prefs = preference_by_layer(&triples, metric).stage(STAGE)?;
    let rows: Vec<Vec<String>> = prefs
        .iter()
        .map(|p| {
            vec![
                p.layer.to_string(),
                p.d.to_string(),
                p.n_triples.to_string(),
            ]
        })
        .collect();
    write_csv(out, &["layer", "d", "n_triples"], &rows)
}

fn file_sha256(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// SHA-256 over every file below `dir` except the paths in `exclude`
/// (relative, `/`-separated): the digest of lines `<path>\0<sha256>\n` in
/// path order.
pub fn tree_digest(dir: &Path, exclude: &[&str]) -> Result<String> {
    let mut entries = Vec::new();
    for e in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let e = e.map_err(|e| {
            let path = e
                .path()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| dir.to_path_buf());
            CliError::io(path, e.into())
        })?;
        if !e.file_type().is_file() {
            continue;
        }
        let rel = e
            .path()
            .strip_prefix(dir)
            .expect("walk stays below root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        if exclude.contains(&rel.as_str()) {
            continue;
        }
        entries.push((rel, file_sha256(e.path())?));
    }
    entries.sort();
    let mut h = Sha256::new();
    for (rel, sum) in &entries {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(sum.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}
