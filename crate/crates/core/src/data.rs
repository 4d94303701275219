//! Corpus ingestion, vocabularies, label descriptions and the synthetic
//! hierarchical corpus generator.
//!
//! Corpora are JSON lines of the form
//! `{"id": "...", "text": "...", "labels": ["...", ...]}`. Text is
//! lowercased and split on whitespace.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{LabelVector, Taxonomy, TaxonomyError};
use crate::tensor::Tensor;

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Json { line: usize, msg: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: document {id:?} has no tokens")]
    EmptyText { line: usize, id: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: malformed description line")]
    Description { line: usize },
    #[error("description of label {0:?} has no tokens")]
    EmptyDescription(String),
    #[error("token embedding table has {rows} rows, vocabulary has {vocab}")]
    EmbeddingRows { rows: usize, vocab: usize },
    #[error("invalid synthetic corpus spec: {}", .0.join("; "))]
    Spec(Vec<String>),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token ids with `<unk>` fixed at 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self { tokens: vec![UNK.to_string()], index: HashMap::from([(UNK.to_string(), UNK_ID)]) }
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self, DataError> {
        let tokens: Vec<String> = tokens.into_iter().collect();
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(DataError::Json { line: 1, msg: format!("vocabulary must start with {UNK}") });
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(DataError::Json { line: i + 1, msg: format!("duplicate token {t:?}") });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id of `token`, or [`UNK_ID`] when unknown.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    /// Add unseen tokens to the vocabulary.
    Build,
    /// Map unseen tokens to `<unk>`.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub token_ids: Vec<usize>,
    /// Ancestor-closed.
    pub gold: LabelVector,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDocument {
    id: String,
    text: String,
    labels: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Tokens dropped at load time.
    pub stoplist: Option<HashSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    /// 1-based lines whose label set had to be closed under ancestors.
    pub closed_lines: Vec<usize>,
}

/// Reads a JSONL corpus, growing or consulting `vocab` per `mode`.
pub fn load_corpus<R: BufRead>(
    reader: R,
    taxonomy: &Taxonomy,
    vocab: &mut Vocab,
    mode: VocabMode,
    options: &LoadOptions,
) -> Result<Corpus, DataError> {
    let mut documents = Vec::new();
    let mut closed_lines = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument =
            serde_json::from_str(&line).map_err(|e| DataError::Json { line: line_no, msg: e.to_string() })?;
        if !seen.insert(raw.id.clone()) {
            return Err(DataError::DuplicateId { line: line_no, id: raw.id });
        }
        let mut gold = LabelVector::zeros(taxonomy.len());
        for label in &raw.labels {
            let k = taxonomy
                .index_of(label)
                .map_err(|_| DataError::UnknownLabel { line: line_no, label: label.clone() })?;
            gold.set(k, true);
        }
        if !taxonomy.is_ancestor_closed(&gold) {
            log::warn!("line {line_no}: labels of {:?} were not ancestor-closed; closing", raw.id);
            gold = taxonomy.close(&gold)?;
            closed_lines.push(line_no);
        }
        let token_ids: Vec<usize> = tokenize(&raw.text)
            .filter(|t| options.stoplist.as_ref().is_none_or(|s| !s.contains(t)))
            .map(|t| match mode {
                VocabMode::Build => vocab.insert(&t),
                VocabMode::Frozen => vocab.id(&t),
            })
            .collect();
        if token_ids.is_empty() {
            return Err(DataError::EmptyText { line: line_no, id: raw.id });
        }
        documents.push(Document { id: raw.id, token_ids, gold });
    }
    Ok(Corpus { documents, closed_lines })
}

pub fn load_corpus_file(
    path: &Path,
    taxonomy: &Taxonomy,
    vocab: &mut Vocab,
    mode: VocabMode,
    options: &LoadOptions,
) -> Result<Corpus, DataError> {
    let file = fs::File::open(path)?;
    load_corpus(std::io::BufReader::new(file), taxonomy, vocab, mode, options)
}

/// Writes documents back as JSONL; [`load_corpus`] reproduces them.
pub fn write_corpus<W: Write>(
    mut writer: W,
    documents: &[Document],
    vocab: &Vocab,
    taxonomy: &Taxonomy,
) -> Result<(), DataError> {
    for doc in documents {
        let text: Vec<&str> = doc.token_ids.iter().map(|&t| vocab.token(t).unwrap_or(UNK)).collect();
        let raw = RawDocument {
            id: doc.id.clone(),
            text: text.join(" "),
            labels: doc.gold.iter_ones().map(|k| taxonomy.name(k).to_string()).collect(),
        };
        serde_json::to_writer(&mut writer, &raw).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// One token per line; blank lines ignored.
pub fn load_stoplist<R: BufRead>(reader: R) -> Result<HashSet<String>, DataError> {
    let mut out = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            out.insert(t.to_lowercase());
        }
    }
    Ok(out)
}

/// `label<TAB>description` lines.
pub fn load_descriptions<R: BufRead>(reader: R, taxonomy: &Taxonomy) -> Result<HashMap<String, String>, DataError> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or(DataError::Description { line: i + 1 })?;
        taxonomy.index_of(label).map_err(|_| DataError::UnknownLabel { line: i + 1, label: label.to_string() })?;
        out.insert(label.to_string(), text.to_string());
    }
    Ok(out)
}

/// Row `k` is the mean token embedding of label `k`'s description, which
/// defaults to the label name. Unknown tokens use the `<unk>` row.
pub fn init_label_embeddings(
    vocab: &Vocab,
    token_embeddings: &Tensor,
    taxonomy: &Taxonomy,
    descriptions: &HashMap<String, String>,
) -> Result<Tensor, DataError> {
    if token_embeddings.rows() != vocab.len() {
        return Err(DataError::EmbeddingRows { rows: token_embeddings.rows(), vocab: vocab.len() });
    }
    let d = token_embeddings.cols();
    let mut out = Tensor::zeros(taxonomy.len(), d);
    for (k, name) in taxonomy.labels().iter().enumerate() {
        let text = descriptions.get(name).map_or(name.as_str(), String::as_str);
        let ids: Vec<usize> = tokenize(text).map(|t| vocab.id(&t)).collect();
        if ids.is_empty() {
            return Err(DataError::EmptyDescription(name.clone()));
        }
        for &id in &ids {
            for (c, &v) in token_embeddings.row_slice(id).iter().enumerate() {
                out.set(k, c, out.get(k, c) + v);
            }
        }
        for c in 0..d {
            out.set(k, c, out.get(k, c) / ids.len() as f64);
        }
    }
    Ok(out)
}

/// Parameters of the synthetic corpus: a complete label tree whose labels
/// each own a disjoint set of tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub depth: usize,
    pub branching: usize,
    pub tokens_per_label: usize,
    pub doc_length: usize,
    pub paths_min: usize,
    pub paths_max: usize,
    /// Probability that a free token slot draws from the noise vocabulary.
    pub noise_ratio: f64,
    pub noise_vocab: usize,
    /// Training documents; validation and test each get 15/70 of this.
    pub train_docs: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            depth: 3,
            branching: 3,
            tokens_per_label: 4,
            doc_length: 24,
            paths_min: 1,
            paths_max: 3,
            noise_ratio: 0.1,
            noise_vocab: 50,
            train_docs: 2000,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn leaf_count(&self) -> usize {
        self.branching.checked_pow(self.depth as u32).unwrap_or(usize::MAX)
    }

    pub fn heldout_docs(&self) -> usize {
        self.train_docs * 15 / 70
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.depth == 0 {
            out.push("depth must be at least 1".to_string());
        }
        if self.branching == 0 {
            out.push("branching must be at least 1".to_string());
        }
        if self.depth > 0 && self.branching > 0 && self.leaf_count() > 100_000 {
            out.push(format!("{}^{} leaves is too many", self.branching, self.depth));
        }
        if self.tokens_per_label == 0 {
            out.push("tokens_per_label must be at least 1".to_string());
        }
        if self.paths_min == 0 || self.paths_min > self.paths_max {
            out.push(format!("paths range {}..={} is empty or starts at 0", self.paths_min, self.paths_max));
        } else if self.depth > 0 && self.branching > 0 && self.paths_max > self.leaf_count() {
            out.push(format!("paths_max {} exceeds the {} leaves", self.paths_max, self.leaf_count()));
        }
        if self.doc_length < self.depth * self.paths_max {
            out.push(format!(
                "doc_length {} cannot hold one token per label of {} paths of depth {}",
                self.doc_length, self.paths_max, self.depth
            ));
        }
        if !(0.0..1.0).contains(&self.noise_ratio) {
            out.push(format!("noise_ratio {} must lie in [0, 1)", self.noise_ratio));
        }
        if self.noise_ratio > 0.0 && self.noise_vocab == 0 {
            out.push("noise_vocab must be positive when noise_ratio > 0".to_string());
        }
        if self.train_docs == 0 {
            out.push("train_docs must be at least 1".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(DataError::Spec(p))
        }
    }
}

/// The four generated files as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub taxonomy_tsv: String,
    pub train: String,
    pub val: String,
    pub test: String,
}

impl SynthCorpus {
    pub const FILES: [&'static str; 4] = ["taxonomy.tsv", "train.jsonl", "val.jsonl", "test.jsonl"];

    /// Writes the files into `dir` (created if missing) and returns their paths.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, DataError> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, body) in Self::FILES.iter().zip([&self.taxonomy_tsv, &self.train, &self.val, &self.test]) {
            let path = dir.join(name);
            fs::write(&path, body)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Generates a taxonomy and a 70/15/15 split of documents.
///
/// Each document samples distinct leaves, takes their ancestor closure as
/// gold, writes one token of every gold label, and fills the remaining
/// slots from the noise vocabulary with probability `noise_ratio` and
/// otherwise from a uniformly chosen gold label's tokens.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthCorpus, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // level by level: c0, c1, ..., then c0.0, c0.1, ...
    let mut tsv = String::new();
    let mut level: Vec<String> = vec![String::new()];
    let mut leaves = Vec::new();
    for depth in 1..=spec.depth {
        let mut next = Vec::new();
        for parent in &level {
            for b in 0..spec.branching {
                let name = if parent.is_empty() { format!("c{b}") } else { format!("{parent}.{b}") };
                let parent_name = if parent.is_empty() { crate::taxonomy::ROOT } else { parent.as_str() };
                tsv.push_str(&format!("{name}\t{parent_name}\n"));
                next.push(name);
            }
        }
        if depth == spec.depth {
            leaves = next.clone();
        }
        level = next;
    }
    let taxonomy = Taxonomy::parse(&tsv)?;
    let leaf_ids: Vec<usize> = leaves.iter().map(|l| taxonomy.index_of(l)).collect::<Result<_, _>>()?;
    let label_tokens: Vec<Vec<String>> = taxonomy
        .labels()
        .iter()
        .map(|name| {
            std::iter::once(name.clone()).chain((1..spec.tokens_per_label).map(|i| format!("{name}/{i}"))).collect()
        })
        .collect();

    let total = spec.train_docs + 2 * spec.heldout_docs();
    let mut lines = Vec::with_capacity(total);
    for i in 0..total {
        let paths = rng.gen_range(spec.paths_min..=spec.paths_max);
        let mut gold = LabelVector::zeros(taxonomy.len());
        for leaf in sample(&mut rng, leaf_ids.len(), paths) {
            gold.set(leaf_ids[leaf], true);
        }
        let gold = taxonomy.close(&gold)?;
        let labels = gold.ones_indices();
        let mut tokens: Vec<&str> =
            labels.iter().map(|&k| label_tokens[k][rng.gen_range(0..spec.tokens_per_label)].as_str()).collect();
        let mut noise = Vec::new();
        while tokens.len() + noise.len() < spec.doc_length {
            if rng.gen_bool(spec.noise_ratio) {
                noise.push(format!("noise{}", rng.gen_range(0..spec.noise_vocab)));
            } else {
                let k = labels[rng.gen_range(0..labels.len())];
                tokens.push(label_tokens[k][rng.gen_range(0..spec.tokens_per_label)].as_str());
            }
        }
        let mut all: Vec<&str> = tokens;
        all.extend(noise.iter().map(String::as_str));
        all.shuffle(&mut rng);
        let raw = RawDocument {
            id: format!("doc{i:05}"),
            text: all.join(" "),
            labels: labels.iter().map(|&k| taxonomy.name(k).to_string()).collect(),
        };
        lines.push(serde_json::to_string(&raw).map_err(std::io::Error::from)?);
    }
    lines.shuffle(&mut rng);
    let join = |part: &[String]| part.iter().map(|l| format!("{l}\n")).collect::<String>();
    let (train, rest) = lines.split_at(spec.train_docs);
    let (val, test) = rest.split_at(spec.heldout_docs());
    Ok(SynthCorpus { taxonomy_tsv: taxonomy.to_tsv(), train: join(train), val: join(val), test: join(test) })
}
