//! Label hierarchy: a rooted tree whose non-root nodes are the labels.
//!
//! The root is implicit. It never receives an index and never takes part
//! in distances or metrics. Labels are indexed `0..n` in the order of
//! their defining (`child<TAB>parent`) line.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sentinel parent token marking a level-1 label.
pub const ROOT: &str = "ROOT";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy input contains no labels")]
    Empty,
    #[error("line {line}: expected `child<TAB>parent`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: label {label:?} is defined more than once")]
    DuplicateChild { line: usize, label: String },
    #[error("label {label:?} names parent {parent:?}, which is never defined")]
    Orphan { label: String, parent: String },
    #[error("cycle detected through label {label:?}")]
    Cycle { label: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("label index {index} out of range for {n} labels")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("label vector has length {got}, taxonomy has {expected} labels")]
    LengthMismatch { expected: usize, got: usize },
    #[error("label set is not ancestor-closed: {label:?} is set but its parent {parent:?} is not")]
    NotClosed { label: String, parent: String },
    #[error("i/o error reading taxonomy: {0}")]
    Io(String),
}

/// Binary label assignment aligned to [`Taxonomy::labels`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LabelVector {
    bits: Vec<bool>,
}

impl LabelVector {
    pub fn zeros(n: usize) -> Self {
        Self { bits: vec![false; n] }
    }

    pub fn ones(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Builds a vector of length `n` with the given indices set.
    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut v = Self::zeros(n);
        for &i in indices {
            v.bits[i] = true;
        }
        v
    }

    /// Decodes the low `n` bits of `mask`, bit `k` being label `k`.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        Self { bits: (0..n).map(|k| mask >> k & 1 == 1).collect() }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn set(&mut self, k: usize, on: bool) {
        self.bits[k] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Indices of set labels, ascending.
    pub fn ones_indices(&self) -> Vec<usize> {
        self.iter_ones().collect()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Elementwise AND. Panics on length mismatch.
    pub fn and(&self, other: &LabelVector) -> LabelVector {
        assert_eq!(self.len(), other.len(), "label vector length mismatch");
        LabelVector { bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect() }
    }

    pub fn complement(&self) -> LabelVector {
        LabelVector { bits: self.bits.iter().map(|b| !b).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    max_depth: usize,
}

impl Taxonomy {
    /// Parses the `child<TAB>parent` format. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut edges: Vec<(String, String)> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (child, parent) = match (fields.next(), fields.next(), fields.next()) {
                (Some(c), Some(p), None) if !c.is_empty() && !p.is_empty() => (c, p),
                _ => return Err(TaxonomyError::Malformed { line: lineno + 1, text: line.to_string() }),
            };
            if child == ROOT {
                return Err(TaxonomyError::Malformed { line: lineno + 1, text: line.to_string() });
            }
            if seen.insert(child.to_string(), edges.len()).is_some() {
                return Err(TaxonomyError::DuplicateChild { line: lineno + 1, label: child.to_string() });
            }
            edges.push((child.to_string(), parent.to_string()));
        }
        Self::from_edges(edges)
    }

    pub fn read<R: BufRead>(mut reader: R) -> Result<Self, TaxonomyError> {
        let mut text = String::new();
        reader.read_to_string(&mut text).map_err(|e| TaxonomyError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    /// Builds a taxonomy from `(child, parent)` pairs; `parent == ROOT`
    /// marks a level-1 label. Label order follows the pair order.
    pub fn from_edges<S: AsRef<str>>(edges: Vec<(S, S)>) -> Result<Self, TaxonomyError> {
        if edges.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        let labels: Vec<String> = edges.iter().map(|(c, _)| c.as_ref().to_string()).collect();
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateChild { line: i + 1, label: l.clone() });
            }
        }
        let mut parent = Vec::with_capacity(labels.len());
        for (c, p) in &edges {
            let p = p.as_ref();
            if p == ROOT {
                parent.push(None);
            } else {
                match index.get(p) {
                    Some(&pi) => parent.push(Some(pi)),
                    None => return Err(TaxonomyError::Orphan { label: c.as_ref().to_string(), parent: p.to_string() }),
                }
            }
        }
        Self::from_parents(labels, parent)
    }

    /// Builds a taxonomy from names and a parent array (`None` = root).
    pub fn from_parents(labels: Vec<String>, parent: Vec<Option<usize>>) -> Result<Self, TaxonomyError> {
        let n = labels.len();
        if n == 0 {
            return Err(TaxonomyError::Empty);
        }
        assert_eq!(parent.len(), n, "parent array must align with labels");
        let mut index = HashMap::with_capacity(n);
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateChild { line: i + 1, label: l.clone() });
            }
        }
        for &p in parent.iter().flatten() {
            if p >= n {
                return Err(TaxonomyError::IndexOutOfRange { index: p, n });
            }
        }

        // 0 = unvisited, 1 = on the current walk, 2 = resolved
        let mut state = vec![0u8; n];
        let mut depth = vec![0usize; n];
        for start in 0..n {
            let mut walk = Vec::new();
            let mut cur = start;
            loop {
                match state[cur] {
                    2 => break,
                    1 => return Err(TaxonomyError::Cycle { label: labels[cur].clone() }),
                    _ => {}
                }
                state[cur] = 1;
                walk.push(cur);
                match parent[cur] {
                    Some(p) => cur = p,
                    None => break,
                }
            }
            for &k in walk.iter().rev() {
                depth[k] = parent[k].map_or(1, |p| depth[p] + 1);
                state[k] = 2;
            }
        }

        let mut children = vec![Vec::new(); n];
        for (k, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(k);
            }
        }
        let max_depth = depth.iter().copied().max().unwrap_or(0);
        Ok(Self { labels, index, parent, children, depth, max_depth })
    }

    /// Number of labels, root excluded.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn index_of(&self, label: &str) -> Result<usize, TaxonomyError> {
        self.index.get(label).copied().ok_or_else(|| TaxonomyError::UnknownLabel(label.to_string()))
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parent[k]
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    /// Level of label `k`; children of the root are level 1.
    pub fn depth(&self, k: usize) -> usize {
        self.depth[k]
    }

    pub fn depths(&self) -> &[usize] {
        &self.depth
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Ancestor chain from the level-1 ancestor down to the parent.
    pub fn ancestors(&self, k: usize) -> Result<Vec<usize>, TaxonomyError> {
        if k >= self.len() {
            return Err(TaxonomyError::IndexOutOfRange { index: k, n: self.len() });
        }
        let mut chain = Vec::with_capacity(self.depth[k] - 1);
        let mut cur = self.parent[k];
        while let Some(p) = cur {
            chain.push(p);
            cur = self.parent[p];
        }
        chain.reverse();
        Ok(chain)
    }

    pub fn ancestors_by_name(&self, label: &str) -> Result<Vec<&str>, TaxonomyError> {
        let k = self.index_of(label)?;
        Ok(self.ancestors(k)?.into_iter().map(|a| self.name(a)).collect())
    }

    fn check_len(&self, y: &LabelVector) -> Result<(), TaxonomyError> {
        if y.len() != self.len() {
            return Err(TaxonomyError::LengthMismatch { expected: self.len(), got: y.len() });
        }
        Ok(())
    }

    /// First label whose parent is missing from `y`, if any.
    fn closure_violation(&self, y: &LabelVector) -> Option<(usize, usize)> {
        y.iter_ones().find_map(|k| match self.parent[k] {
            Some(p) if !y.get(p) => Some((k, p)),
            _ => None,
        })
    }

    pub fn is_ancestor_closed(&self, y: &LabelVector) -> bool {
        y.len() == self.len() && self.closure_violation(y).is_none()
    }

    /// Adds every ancestor of every set label.
    pub fn close(&self, y: &LabelVector) -> Result<LabelVector, TaxonomyError> {
        self.check_len(y)?;
        let mut out = y.clone();
        for k in y.iter_ones() {
            let mut cur = self.parent[k];
            while let Some(p) = cur {
                if out.get(p) {
                    break;
                }
                out.set(p, true);
                cur = self.parent[p];
            }
        }
        Ok(out)
    }

    /// Splits an ancestor-closed set into one chain per leaf of the
    /// induced subtree. Chains keep their shared prefixes, so they overlap
    /// whenever two leaves share an ancestor. Chains are ordered by leaf
    /// index and each chain runs from level 1 down to its leaf.
    pub fn decompose_paths(&self, y: &LabelVector) -> Result<Vec<Vec<usize>>, TaxonomyError> {
        self.check_len(y)?;
        if let Some((k, p)) = self.closure_violation(y) {
            return Err(TaxonomyError::NotClosed { label: self.labels[k].clone(), parent: self.labels[p].clone() });
        }
        let mut paths = Vec::new();
        for k in y.iter_ones() {
            if self.children[k].iter().any(|&c| y.get(c)) {
                continue;
            }
            let mut chain = self.ancestors(k)?;
            chain.push(k);
            paths.push(chain);
        }
        Ok(paths)
    }

    /// Number of chains [`decompose_paths`](Self::decompose_paths) would return.
    pub fn path_count(&self, y: &LabelVector) -> Result<usize, TaxonomyError> {
        self.decompose_paths(y).map(|p| p.len())
    }

    pub fn label_vector(&self, names: &[&str]) -> Result<LabelVector, TaxonomyError> {
        let mut y = LabelVector::zeros(self.len());
        for name in names {
            y.set(self.index_of(name)?, true);
        }
        Ok(y)
    }

    /// Canonical TSV rendering; [`Taxonomy::parse`] reads it back unchanged.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, name) in self.labels.iter().enumerate() {
            out.push_str(name);
            out.push('\t');
            out.push_str(self.parent[k].map_or(ROOT, |p| self.labels[p].as_str()));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical TSV, lowercase hex.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Taxonomy({} labels, max depth {})", self.len(), self.max_depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn abc() -> Taxonomy {
        Taxonomy::parse("A\tROOT\nB\tA\nC\tA\n").unwrap()
    }

    #[test]
    fn depths_follow_parent_chain() {
        let t = abc();
        assert_eq!(t.len(), 3);
        assert_eq!(t.depth(0), 1);
        assert_eq!(t.depth(1), 2);
        assert_eq!(t.depth(2), 2);
        assert_eq!(t.max_depth(), 2);
    }

    #[test]
    fn fig1_fixture_has_four_levels() {
        let t = fixtures::fig1_taxonomy();
        assert_eq!(t.max_depth(), 4);
        for name in ["News", "Features", "Classifields"] {
            assert_eq!(t.depth(t.index_of(name).unwrap()), 1);
        }
        for name in ["United Kingdom", "France"] {
            assert_eq!(t.depth(t.index_of(name).unwrap()), 4);
        }
    }

    #[test]
    fn self_loop_is_a_cycle() {
        assert!(matches!(Taxonomy::parse("A\tA\n"), Err(TaxonomyError::Cycle { .. })));
    }

    #[test]
    fn longer_cycle_detected() {
        let err = Taxonomy::parse("A\tROOT\nB\tC\nC\tB\n").unwrap_err();
        assert!(matches!(err, TaxonomyError::Cycle { .. }));
    }

    #[test]
    fn load_errors() {
        assert_eq!(Taxonomy::parse(""), Err(TaxonomyError::Empty));
        assert_eq!(Taxonomy::parse("# only a comment\n\n"), Err(TaxonomyError::Empty));
        assert!(matches!(
            Taxonomy::parse("A\tROOT\nB\tX\n"),
            Err(TaxonomyError::Orphan { ref parent, .. }) if parent == "X"
        ));
        assert!(matches!(Taxonomy::parse("A\tROOT\nA\tROOT\n"), Err(TaxonomyError::DuplicateChild { line: 2, .. })));
        assert!(matches!(Taxonomy::parse("A ROOT\n"), Err(TaxonomyError::Malformed { line: 1, .. })));
    }

    #[test]
    fn forward_parent_reference_is_allowed() {
        let t = Taxonomy::parse("B\tA\nA\tROOT\n").unwrap();
        assert_eq!(t.labels(), ["B", "A"]);
        assert_eq!(t.depth(0), 2);
    }

    #[test]
    fn ancestors_chain() {
        let t = Taxonomy::parse("A\tROOT\nB\tA\nC\tB\n").unwrap();
        assert_eq!(t.ancestors_by_name("C").unwrap(), ["A", "B"]);
        assert!(t.ancestors_by_name("A").unwrap().is_empty());
        assert!(matches!(t.ancestors_by_name("Z"), Err(TaxonomyError::UnknownLabel(_))));
    }

    #[test]
    fn ancestors_on_fig1_truncate_at_subgraph() {
        let t = fixtures::fig1_taxonomy();
        assert_eq!(t.ancestors_by_name("Destinations").unwrap(), ["Features", "Travel", "Guides"]);
        assert_eq!(t.ancestors_by_name("France").unwrap(), ["News", "World", "Countries"]);
    }

    #[test]
    fn decompose_single_and_branching() {
        let t = abc();
        assert_eq!(t.decompose_paths(&LabelVector::from_indices(3, &[0])).unwrap(), vec![vec![0]]);
        let all = LabelVector::ones(3);
        assert_eq!(t.decompose_paths(&all).unwrap(), vec![vec![0, 1], vec![0, 2]]);
        assert!(t.decompose_paths(&LabelVector::zeros(3)).unwrap().is_empty());
    }

    #[test]
    fn decompose_rejects_open_sets() {
        let t = abc();
        let err = t.decompose_paths(&LabelVector::from_indices(3, &[1])).unwrap_err();
        assert!(matches!(err, TaxonomyError::NotClosed { .. }));
    }

    #[test]
    fn case_study_gold_has_four_paths() {
        let t = fixtures::case_study_taxonomy();
        let leaves = [
            "Top/News/U.S.",
            "Top/News/Washington",
            "Top/Features/Travel/Guides/Destinations/North America/United States",
            "Top/Opinion/Opinion/Op-Ed/Contributors",
        ];
        let gold = t.close(&t.label_vector(&leaves).unwrap()).unwrap();
        assert_eq!(t.path_count(&gold).unwrap(), 4);
    }

    #[test]
    fn closure_adds_ancestors() {
        let t = Taxonomy::parse("A\tROOT\nB\tA\nC\tB\nD\tROOT\n").unwrap();
        let y = t.close(&LabelVector::from_indices(4, &[2])).unwrap();
        assert_eq!(y.ones_indices(), vec![0, 1, 2]);
        assert!(t.is_ancestor_closed(&y));
    }

    #[test]
    fn tsv_round_trip() {
        let t = fixtures::fig1_taxonomy();
        let back = Taxonomy::parse(&t.to_tsv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.content_hash(), t.content_hash());
    }
}
