//! Training objectives.
//!
//! Contrastive terms share one shape: for an anchor row `a` of a
//! similarity matrix `S`, positives `p` with weights `w_p`, and
//! denominator weights `W_a`,
//!
//! ```text
//! term(a) = -1/|P(a)| * sum_p [ ln w_p + S_ap - ln sum_x W_ax exp(S_ax) ]
//! ```
//!
//! SupCon uses unit weights and dot products, HiLeCon uses cosine
//! similarities with `sigma` on positives and `gamma` on negatives, and the
//! instance loss applies the same form to level-pooled sample embeddings.
//! Anchors without positives contribute nothing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{DistanceMode, MetricContext};
use crate::taxonomy::{LabelVector, Taxonomy, TaxonomyError};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("no gold-label embeddings in the batch")]
    NoAnchors,
    #[error("embedding of label {label} in sample {sample} has zero norm")]
    ZeroNorm { sample: usize, label: usize },
    #[error("logit {index} is not finite")]
    NonFiniteLogit { index: usize },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("batch of {samples} samples has {golds} gold vectors")]
    BatchMismatch { samples: usize, golds: usize },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which label-level contrastive loss to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelLossMode {
    #[default]
    Hilecon,
    /// HiLeCon with plain Hamming distance.
    Lecon,
    /// Unweighted dot-product SupCon.
    Supcon,
}

/// Depth penalty of the instance loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyRule {
    /// `exp(1 / (L - l + 1))`.
    #[default]
    Shifted,
    /// `exp(1 / max(L - l, 1))`.
    PaperClamped,
}

impl PenaltyRule {
    pub fn weight(self, level: usize, max_depth: usize) -> f64 {
        let gap = match self {
            PenaltyRule::Shifted => max_depth - level + 1,
            PenaltyRule::PaperClamped => (max_depth - level).max(1),
        };
        (1.0 / gap as f64).exp()
    }
}

/// Normalizer in front of the HiLeCon sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prefactor {
    /// `1 / |I|`, the number of anchor embeddings.
    #[default]
    Anchors,
    /// `1 / n`, the number of taxonomy labels.
    Labels,
}

/// When two samples count as positives at a level of the instance loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveRule {
    /// Identical label sets up to the level.
    #[default]
    Exact,
    /// At least one shared label up to the level.
    Overlap,
}

/// Denominator of the instance loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceDenominator {
    /// Every other sample, positives included.
    #[default]
    AllOthers,
    /// The positive in the numerator plus the negatives.
    StrictNegatives,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassificationLoss {
    #[default]
    Zlpr,
    /// Per-label binary cross-entropy, averaged over labels.
    Bce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Instance-loss weight.
    pub lambda1: f64,
    /// Label-loss weight.
    pub lambda2: f64,
    pub temperature: f64,
    pub mode: LabelLossMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.1, lambda2: 0.5, temperature: 0.1, mode: LabelLossMode::Hilecon }
    }
}

/// Switches for readings the objective leaves open. Defaults are the
/// documented choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LossOptions {
    pub penalty: PenaltyRule,
    pub prefactor: Prefactor,
    pub positive_rule: PositiveRule,
    pub denominator: InstanceDenominator,
    pub classification: ClassificationLoss,
}

/// Per-sample `n x d` embeddings with their gold label sets.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveBatch<'a> {
    pub embeddings: &'a [NodeId],
    pub gold: &'a [LabelVector],
}

impl<'a> ContrastiveBatch<'a> {
    pub fn new(embeddings: &'a [NodeId], gold: &'a [LabelVector]) -> Result<Self, LossError> {
        if embeddings.len() != gold.len() {
            return Err(LossError::BatchMismatch { samples: embeddings.len(), golds: gold.len() });
        }
        Ok(Self { embeddings, gold })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// `(sample, label)` for every gold label, sample-major.
    pub fn anchors(&self) -> Vec<(usize, usize)> {
        self.gold.iter().enumerate().flat_map(|(b, y)| y.iter_ones().map(move |j| (b, j))).collect()
    }

    /// Stacks the gold-label rows of every sample into one `|I| x d` node.
    fn stack_anchors(&self, g: &mut Graph) -> Result<(NodeId, Vec<(usize, usize)>), LossError> {
        let anchors = self.anchors();
        if anchors.is_empty() {
            return Err(LossError::NoAnchors);
        }
        let mut parts = Vec::with_capacity(self.len());
        for (b, y) in self.gold.iter().enumerate() {
            let rows = y.ones_indices();
            if !rows.is_empty() {
                parts.push(g.gather_rows(self.embeddings[b], &rows)?);
            }
        }
        Ok((g.concat_rows(&parts)?, anchors))
    }
}

/// One anchor's contribution to a contrastive objective.
struct AnchorTerm {
    row: usize,
    /// `(column, weight)` of each positive.
    positives: Vec<(usize, f64)>,
    /// Denominator weights over all columns; zero excludes a column.
    denominator: Vec<f64>,
    /// Multiplier applied to the whole term.
    scale: f64,
}

/// Sums `AnchorTerm`s over similarity matrix `sim` as a 1x1 node.
fn contrastive_objective(g: &mut Graph, sim: NodeId, terms: &[AnchorTerm]) -> Result<NodeId, LossError> {
    let (rows, cols) = g.shape(sim);
    let mut linear = Tensor::zeros(rows, cols);
    let mut constant = 0.0;
    let mut lse_rows = Vec::with_capacity(terms.len());
    let mut lse_weights = Vec::with_capacity(terms.len() * cols);
    let mut lse_scale = Vec::with_capacity(terms.len());
    for t in terms {
        if t.positives.is_empty() {
            continue;
        }
        let k = t.scale / t.positives.len() as f64;
        for &(p, w) in &t.positives {
            linear.set(t.row, p, linear.get(t.row, p) - k);
            constant -= k * w.ln();
        }
        lse_rows.push(t.row);
        lse_weights.extend_from_slice(&t.denominator);
        lse_scale.push(t.scale);
    }
    if lse_rows.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let lin = g.constant(linear);
    let lin = g.mul(sim, lin)?;
    let lin = g.sum(lin);
    let picked = g.gather_rows(sim, &lse_rows)?;
    let weights = Tensor::from_vec(lse_rows.len(), cols, lse_weights)?;
    let lse = g.weighted_logsumexp_rows(picked, weights)?;
    let scale = g.constant(Tensor::col(&lse_scale));
    let lse = g.mul(lse, scale)?;
    let lse = g.sum(lse);
    let total = g.add(lin, lse)?;
    let c = g.constant(Tensor::scalar(constant));
    Ok(g.add(total, c)?)
}

fn check_temperature(tau: f64) -> Result<(), LossError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(LossError::Temperature(tau))
    }
}

/// Supervised contrastive loss over gold-label embeddings, summed over
/// anchors: positives share the anchor's label in other samples, every
/// other gold-label embedding is in the denominator, similarity is the
/// dot product over `tau`.
pub fn supcon(g: &mut Graph, batch: &ContrastiveBatch, tau: f64) -> Result<NodeId, LossError> {
    check_temperature(tau)?;
    let (stacked, anchors) = batch.stack_anchors(g)?;
    let t = g.transpose(stacked);
    let dots = g.matmul(stacked, t)?;
    let sim = g.scale(dots, 1.0 / tau);
    let n = anchors.len();
    let terms: Vec<AnchorTerm> = anchors
        .iter()
        .enumerate()
        .map(|(a, &(sa, la))| AnchorTerm {
            row: a,
            positives: anchors
                .iter()
                .enumerate()
                .filter(|&(_, &(sp, lp))| lp == la && sp != sa)
                .map(|(p, _)| (p, 1.0))
                .collect(),
            denominator: (0..n).map(|x| if x == a { 0.0 } else { 1.0 }).collect(),
            scale: 1.0,
        })
        .collect();
    contrastive_objective(g, sim, &terms)
}

/// Hierarchy-weighted label contrastive loss.
///
/// Similarity is `cos(u, v) / tau`. A positive from sample `k` is weighted
/// by `sigma(Y_anchor, Y_k)`, a negative by `gamma(Y_anchor, Y_k)`. Mode
/// `Lecon` swaps the distance for Hamming; mode `Supcon` is exactly
/// [`supcon`].
pub fn hilecon(
    g: &mut Graph,
    batch: &ContrastiveBatch,
    tau: f64,
    ctx: &MetricContext,
    mode: LabelLossMode,
    prefactor: Prefactor,
) -> Result<NodeId, LossError> {
    let distance = match mode {
        LabelLossMode::Supcon => return supcon(g, batch, tau),
        LabelLossMode::Hilecon => DistanceMode::Hierarchical,
        LabelLossMode::Lecon => DistanceMode::Hamming,
    };
    check_temperature(tau)?;
    let (stacked, anchors) = batch.stack_anchors(g)?;
    let cos = g.cosine_similarity(stacked, stacked).map_err(|e| match e {
        TensorError::ZeroNorm { row, .. } => {
            let (sample, label) = anchors[row];
            LossError::ZeroNorm { sample, label }
        }
        other => other.into(),
    })?;
    let sim = g.scale(cos, 1.0 / tau);

    let b = batch.len();
    let mut sigma = vec![0.0; b * b];
    let mut gamma = vec![0.0; b * b];
    for i in 0..b {
        for k in 0..b {
            let (s, gm) = ctx.weights(distance, &batch.gold[i], &batch.gold[k])?;
            sigma[i * b + k] = s;
            gamma[i * b + k] = gm;
        }
    }
    let n = anchors.len();
    let scale = match prefactor {
        Prefactor::Anchors => 1.0 / n as f64,
        Prefactor::Labels => 1.0 / ctx.len() as f64,
    };
    let terms: Vec<AnchorTerm> = anchors
        .iter()
        .enumerate()
        .map(|(a, &(sa, la))| {
            let mut positives = Vec::new();
            let mut denominator = vec![0.0; n];
            for (x, &(sx, lx)) in anchors.iter().enumerate() {
                if x == a {
                    continue;
                }
                if lx == la && sx != sa {
                    let w = sigma[sa * b + sx];
                    positives.push((x, w));
                    denominator[x] = w;
                } else {
                    denominator[x] = gamma[sa * b + sx];
                }
            }
            AnchorTerm { row: a, positives, denominator, scale }
        })
        .collect();
    contrastive_objective(g, sim, &terms)
}

#[derive(Debug, Clone)]
pub struct InstanceLoss {
    pub value: NodeId,
    /// Samples without any gold label; they take no part in the loss.
    pub empty_samples: Vec<usize>,
}

/// Level-pooled instance contrastive loss.
///
/// For each level `l`, every sample is represented by the mean of its
/// gold-label embeddings at depth `<= l`. Samples whose label sets agree
/// up to `l` (per `rule`) are positives. Each level's sum is divided by its
/// total positive-pair count and weighted by the depth penalty; the result
/// is averaged over levels.
pub fn instance_loss(
    g: &mut Graph,
    batch: &ContrastiveBatch,
    tau: f64,
    taxonomy: &Taxonomy,
    options: &LossOptions,
) -> Result<InstanceLoss, LossError> {
    check_temperature(tau)?;
    let max_depth = taxonomy.max_depth();
    let empty_samples: Vec<usize> = (0..batch.len()).filter(|&i| batch.gold[i].count_ones() == 0).collect();
    let mut level_terms = Vec::new();

    for level in 1..=max_depth {
        let members: Vec<(usize, Vec<usize>)> = (0..batch.len())
            .filter_map(|i| {
                let rows: Vec<usize> = batch.gold[i].iter_ones().filter(|&j| taxonomy.depth(j) <= level).collect();
                (!rows.is_empty()).then_some((i, rows))
            })
            .collect();
        let v = members.len();
        let positive = |a: &[usize], b: &[usize]| match options.positive_rule {
            PositiveRule::Exact => a == b,
            PositiveRule::Overlap => a.iter().any(|x| b.contains(x)),
        };
        let pos: Vec<Vec<usize>> =
            (0..v).map(|i| (0..v).filter(|&j| j != i && positive(&members[i].1, &members[j].1)).collect()).collect();
        let pair_count: usize = pos.iter().map(Vec::len).sum();
        if pair_count == 0 {
            continue;
        }

        let pooled =
            members.iter().map(|(i, rows)| g.mean_rows(batch.embeddings[*i], rows)).collect::<Result<Vec<_>, _>>()?;
        let x = g.concat_rows(&pooled)?;
        let xt = g.transpose(x);
        let dots = g.matmul(x, xt)?;
        let sim = g.scale(dots, 1.0 / tau);
        let weight = options.penalty.weight(level, max_depth) / (max_depth as f64 * pair_count as f64);

        let mut terms = Vec::new();
        for (i, pos_i) in pos.iter().enumerate() {
            if pos_i.is_empty() {
                continue;
            }
            match options.denominator {
                InstanceDenominator::AllOthers => terms.push(AnchorTerm {
                    row: i,
                    positives: pos_i.iter().map(|&j| (j, 1.0)).collect(),
                    denominator: (0..v).map(|k| if k == i { 0.0 } else { 1.0 }).collect(),
                    scale: weight * pos_i.len() as f64,
                }),
                InstanceDenominator::StrictNegatives => {
                    for &j in pos_i {
                        let denominator =
                            (0..v).map(|k| if k == j || (k != i && !pos_i.contains(&k)) { 1.0 } else { 0.0 }).collect();
                        terms.push(AnchorTerm { row: i, positives: vec![(j, 1.0)], denominator, scale: weight });
                    }
                }
            }
        }
        level_terms.push(contrastive_objective(g, sim, &terms)?);
    }

    let value = match level_terms.as_slice() {
        [] => g.constant(Tensor::scalar(0.0)),
        [only] => *only,
        many => {
            let stacked = g.concat_rows(many)?;
            g.sum(stacked)
        }
    };
    Ok(InstanceLoss { value, empty_samples })
}

fn check_logits(g: &Graph, logits: NodeId) -> Result<(), LossError> {
    match g.value(logits).data().iter().position(|v| !v.is_finite()) {
        Some(index) => Err(LossError::NonFiniteLogit { index }),
        None => Ok(()),
    }
}

/// `log(1 + sum_i exp(sign * s_i))` over `indices`, as a 1x1 node.
fn zero_bounded_lse(g: &mut Graph, logits: NodeId, indices: &[usize], sign: f64) -> Result<NodeId, LossError> {
    let zero = g.constant(Tensor::scalar(0.0));
    if indices.is_empty() {
        return Ok(zero);
    }
    let picked = g.gather_rows(logits, indices)?;
    let row = g.transpose(picked);
    let row = g.scale(row, sign);
    let row = g.concat_cols(&[zero, row])?;
    Ok(g.logsumexp_rows(row)?)
}

/// `log(1 + sum_pos exp(-s)) + log(1 + sum_neg exp(s))` for an `n x 1`
/// logit column.
pub fn zlpr(g: &mut Graph, logits: NodeId, gold: &LabelVector) -> Result<NodeId, LossError> {
    let (n, _) = g.shape(logits);
    if gold.len() != n {
        return Err(TaxonomyError::LengthMismatch { expected: n, got: gold.len() }.into());
    }
    check_logits(g, logits)?;
    let pos = gold.ones_indices();
    let neg = gold.complement().ones_indices();
    let p = zero_bounded_lse(g, logits, &pos, -1.0)?;
    let q = zero_bounded_lse(g, logits, &neg, 1.0)?;
    Ok(g.add(p, q)?)
}

/// Mean over labels of `log(1 + exp(s)) - y s`.
pub fn bce(g: &mut Graph, logits: NodeId, gold: &LabelVector) -> Result<NodeId, LossError> {
    let (n, _) = g.shape(logits);
    if gold.len() != n {
        return Err(TaxonomyError::LengthMismatch { expected: n, got: gold.len() }.into());
    }
    check_logits(g, logits)?;
    let zeros = g.constant(Tensor::zeros(n, 1));
    let pair = g.concat_cols(&[zeros, logits])?;
    let softplus = g.logsumexp_rows(pair)?;
    let y = g.constant(Tensor::col(&gold.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<_>>()));
    let ys = g.mul(logits, y)?;
    let per_label = g.sub(softplus, ys)?;
    let total = g.sum(per_label);
    Ok(g.scale(total, 1.0 / n as f64))
}

/// Node ids of the combined objective and its addends.
#[derive(Debug, Clone)]
pub struct LossNodes {
    pub total: NodeId,
    /// Batch mean of the classification loss.
    pub classification: NodeId,
    /// Unweighted instance loss; `None` when `lambda1 == 0`.
    pub instance: Option<NodeId>,
    /// Unweighted label loss; `None` when `lambda2 == 0`.
    pub label: Option<NodeId>,
    pub empty_samples: Vec<usize>,
}

/// `mean classification + lambda1 * instance + lambda2 * label`.
///
/// A contrastive term whose weight is zero is not built at all, so with
/// both weights zero the total is the mean classification loss exactly.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    batch: &ContrastiveBatch,
    logits: &[NodeId],
    weights: &LossWeights,
    ctx: &MetricContext,
    taxonomy: &Taxonomy,
    options: &LossOptions,
) -> Result<LossNodes, LossError> {
    if logits.len() != batch.len() {
        return Err(LossError::BatchMismatch { samples: logits.len(), golds: batch.len() });
    }
    let per_sample = logits
        .iter()
        .zip(batch.gold)
        .map(|(&s, y)| match options.classification {
            ClassificationLoss::Zlpr => zlpr(g, s, y),
            ClassificationLoss::Bce => bce(g, s, y),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stacked = g.concat_rows(&per_sample)?;
    let summed = g.sum(stacked);
    let classification = g.scale(summed, 1.0 / batch.len() as f64);

    let mut total = classification;
    let mut instance = None;
    let mut empty_samples = Vec::new();
    if weights.lambda1 != 0.0 {
        let inst = instance_loss(g, batch, weights.temperature, taxonomy, options)?;
        empty_samples = inst.empty_samples;
        let weighted = g.scale(inst.value, weights.lambda1);
        total = g.add(total, weighted)?;
        instance = Some(inst.value);
    }
    let mut label = None;
    if weights.lambda2 != 0.0 {
        let l = hilecon(g, batch, weights.temperature, ctx, weights.mode, options.prefactor)?;
        let weighted = g.scale(l, weights.lambda2);
        total = g.add(total, weighted)?;
        label = Some(l);
    }
    Ok(LossNodes { total, classification, instance, label, empty_samples })
}
