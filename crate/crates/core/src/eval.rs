//! Flat and hierarchy-aware evaluation metrics.
//!
//! Path accuracy asks whether the correctly predicted labels of a document
//! span as many root-to-leaf chains as its gold set; depth accuracy counts
//! gold chains whose every label was predicted.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{LabelVector, Taxonomy, TaxonomyError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    /// Ancestor-closed gold set.
    pub gold: LabelVector,
    pub pred: LabelVector,
}

impl EvalPair {
    pub fn new(gold: LabelVector, pred: LabelVector) -> Self {
        Self { gold, pred }
    }

    /// Correctly predicted labels.
    pub fn true_positives(&self) -> LabelVector {
        self.gold.and(&self.pred)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Re-close the true positives under ancestors before counting paths.
    /// When off, paths are counted on the raw intersection as its labels
    /// with no child in the set.
    pub closure: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { closure: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_: f64,
    pub per_label: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn f1(self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn label_counts(pairs: &[EvalPair], n: usize) -> Vec<Counts> {
    let mut counts = vec![Counts::default(); n];
    for p in pairs {
        for (k, c) in counts.iter_mut().enumerate() {
            match (p.gold.get(k), p.pred.get(k)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

fn scores_from(counts: &[Counts]) -> F1Scores {
    let per_label: Vec<f64> = counts.iter().map(|c| c.f1()).collect();
    let mut pooled = Counts::default();
    counts.iter().for_each(|&c| pooled.add(c));
    let macro_ = if per_label.is_empty() { 0.0 } else { per_label.iter().sum::<f64>() / per_label.len() as f64 };
    F1Scores { micro: pooled.f1(), macro_, per_label }
}

fn label_count(pairs: &[EvalPair]) -> usize {
    pairs.first().map_or(0, |p| p.gold.len())
}

/// Micro-F1 over pooled counts and Macro-F1 over every taxonomy label.
/// A label that is never gold nor predicted scores 0 and still counts in
/// the macro mean; a micro score with no gold and no predictions is 0.
pub fn f1_scores(pairs: &[EvalPair]) -> F1Scores {
    scores_from(&label_counts(pairs, label_count(pairs)))
}

/// Root-to-leaf chains in a possibly non-closed set: its labels with no
/// child also in the set.
fn raw_path_count(taxonomy: &Taxonomy, y: &LabelVector) -> usize {
    y.iter_ones().filter(|&k| !taxonomy.children(k).iter().any(|&c| y.get(c))).count()
}

fn consistent_path(pair: &EvalPair, taxonomy: &Taxonomy, options: EvalOptions) -> Result<bool, TaxonomyError> {
    let gold_paths = taxonomy.path_count(&pair.gold)?;
    let tp = pair.true_positives();
    let tp_paths =
        if options.closure { taxonomy.path_count(&taxonomy.close(&tp)?)? } else { raw_path_count(taxonomy, &tp) };
    Ok(gold_paths == tp_paths)
}

/// Fraction of documents whose true positives span as many paths as gold.
pub fn path_accuracy(pairs: &[EvalPair], taxonomy: &Taxonomy, options: EvalOptions) -> Result<f64, TaxonomyError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for p in pairs {
        if consistent_path(p, taxonomy, options)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// `(fully predicted gold chains, gold chains)` for one pair.
fn chain_hits(pair: &EvalPair, taxonomy: &Taxonomy) -> Result<(usize, usize), TaxonomyError> {
    let paths = taxonomy.decompose_paths(&pair.gold)?;
    let tp = pair.true_positives();
    let hits = paths.iter().filter(|chain| chain.iter().all(|&k| tp.get(k))).count();
    Ok((hits, paths.len()))
}

/// Fraction of gold chains, pooled over documents, predicted in full.
pub fn depth_accuracy(pairs: &[EvalPair], taxonomy: &Taxonomy) -> Result<f64, TaxonomyError> {
    let (mut hits, mut total) = (0, 0);
    for p in pairs {
        let (h, t) = chain_hits(p, taxonomy)?;
        hits += h;
        total += t;
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub depth: usize,
    pub f1: f64,
    /// Documents with this gold label.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub level: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub documents: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub path_accuracy: f64,
    pub depth_accuracy: f64,
    pub per_level: Vec<LevelScore>,
    pub per_label: Vec<LabelScore>,
    /// Gold path count -> number of documents.
    pub path_histogram: BTreeMap<usize, usize>,
}

pub fn report(pairs: &[EvalPair], taxonomy: &Taxonomy, options: EvalOptions) -> Result<MetricsReport, TaxonomyError> {
    for p in pairs {
        if p.gold.len() != taxonomy.len() || p.pred.len() != taxonomy.len() {
            return Err(TaxonomyError::LengthMismatch {
                expected: taxonomy.len(),
                got: if p.gold.len() != taxonomy.len() { p.gold.len() } else { p.pred.len() },
            });
        }
    }
    let counts = label_counts(pairs, taxonomy.len());
    let overall = scores_from(&counts);
    let per_level = (1..=taxonomy.max_depth())
        .map(|level| {
            let at: Vec<Counts> =
                (0..taxonomy.len()).filter(|&k| taxonomy.depth(k) == level).map(|k| counts[k]).collect();
            let s = scores_from(&at);
            LevelScore { level, micro_f1: s.micro, macro_f1: s.macro_ }
        })
        .collect();
    let per_label = (0..taxonomy.len())
        .map(|k| LabelScore {
            label: taxonomy.name(k).to_string(),
            depth: taxonomy.depth(k),
            f1: overall.per_label[k],
            support: counts[k].tp + counts[k].fn_,
        })
        .collect();
    let mut path_histogram = BTreeMap::new();
    for p in pairs {
        *path_histogram.entry(taxonomy.path_count(&p.gold)?).or_insert(0) += 1;
    }
    Ok(MetricsReport {
        documents: pairs.len(),
        micro_f1: overall.micro,
        macro_f1: overall.macro_,
        path_accuracy: path_accuracy(pairs, taxonomy, options)?,
        depth_accuracy: depth_accuracy(pairs, taxonomy)?,
        per_level,
        per_label,
        path_histogram,
    })
}

impl MetricsReport {
    /// Aligned ASCII table, four decimals throughout.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows = [
            ("Micro-F1", self.micro_f1),
            ("Macro-F1", self.macro_f1),
            ("Acc_P", self.path_accuracy),
            ("Acc_D", self.depth_accuracy),
        ];
        let _ = writeln!(out, "{:<12} {:>10}", "metric", "value");
        for (name, v) in rows {
            let _ = writeln!(out, "{name:<12} {v:>10.4}");
        }
        let _ = writeln!(out, "{:<12} {:>10}", "documents", self.documents);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<6} {:>10} {:>10}", "level", "micro", "macro");
        for l in &self.per_level {
            let _ = writeln!(out, "{:<6} {:>10.4} {:>10.4}", l.level, l.micro_f1, l.macro_f1);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<6} {:>10}", "paths", "documents");
        for (paths, docs) in &self.path_histogram {
            let _ = writeln!(out, "{paths:<6} {docs:>10}");
        }
        out
    }
}
