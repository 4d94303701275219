//! The label-aware network.
//!
//! Per document: token embeddings (optionally refined by self-attention
//! blocks) give `H`; graph attention over the taxonomy gives label
//! embeddings `Y'`; multi-head attention with `Y'` as queries over `H`
//! gives the label-aware embeddings `G`; a fusion attention turns
//! `[G | Y']` into the contrastive embeddings `Z`; a flat linear head over
//! `G` gives one logit per label.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{LabelVector, Taxonomy};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

/// Negative-side slope of the GAT scoring nonlinearity.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;

const EMBEDDING_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("document has no tokens")]
    EmptyInput,
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("logit {index} is not finite ({value})")]
    NonFiniteLogit { index: usize, value: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width `d`.
    pub dim: usize,
    /// Attention heads `h`; must divide `dim`.
    pub heads: usize,
    pub gat_layers: usize,
    pub vocab_size: usize,
    /// Self-attention blocks on top of the token lookup (0 = lookup only).
    pub encoder_layers: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dim: 32, heads: 4, gat_layers: 2, vocab_size: 1, encoder_layers: 0, seed: 42 }
    }
}

impl ModelConfig {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim == 0 {
            out.push("dim must be positive".to_string());
        }
        if self.heads == 0 {
            out.push("heads must be positive".to_string());
        } else if !self.dim.is_multiple_of(self.heads) {
            out.push(format!("dim {} is not divisible by heads {}", self.dim, self.heads));
        }
        if self.gat_layers == 0 {
            out.push("gat_layers must be at least 1".to_string());
        }
        if self.vocab_size == 0 {
            out.push("vocab_size must be positive".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.problems().as_slice() {
            [] => Ok(()),
            p => Err(ModelError::Config(p.join("; "))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    /// `d x d` shared node transform.
    pub weight: Tensor,
    /// `d x 1` score vector for the receiving node.
    pub attn_src: Tensor,
    /// `d x 1` score vector for the neighbour.
    pub attn_dst: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

/// All trainable tensors. Projections act on row vectors: `x W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub n_labels: usize,
    /// `vocab_size x d`.
    pub token_embedding: Tensor,
    /// `n x d`, initial label embeddings `Y'` before graph attention.
    pub label_embedding: Tensor,
    pub gat: Vec<GatLayer>,
    pub encoder: Vec<EncoderLayer>,
    /// Per-head `d x d/h` query projections.
    pub attn_query: Vec<Tensor>,
    pub attn_key: Vec<Tensor>,
    pub attn_value: Vec<Tensor>,
    /// `d x d` output projection over the concatenated heads.
    pub attn_output: Tensor,
    /// `d x 2d` fusion weight `W_a`.
    pub fusion_weight: Tensor,
    /// `1 x d` fusion bias `b_a`.
    pub fusion_bias: Tensor,
    /// `n x nd` classifier weight `W_s`.
    pub classifier_weight: Tensor,
    /// `n x 1` classifier bias `b_s`.
    pub classifier_bias: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized by construction")
}

fn fan_in_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    uniform(rng, rows, cols, 1.0 / (fan_in as f64).sqrt())
}

impl ModelParams {
    /// Seeded initialization: embeddings uniform in +-0.05, projections
    /// uniform in +-1/sqrt(fan_in), biases zero.
    pub fn init(config: &ModelConfig, n_labels: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if n_labels == 0 {
            return Err(ModelError::Config("taxonomy has no labels".into()));
        }
        let (d, dh) = (config.dim, config.head_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let token_embedding = uniform(&mut rng, config.vocab_size, d, EMBEDDING_INIT_RANGE);
        let label_embedding = uniform(&mut rng, n_labels, d, EMBEDDING_INIT_RANGE);
        let gat = (0..config.gat_layers)
            .map(|_| GatLayer {
                weight: fan_in_uniform(&mut rng, d, d, d),
                attn_src: fan_in_uniform(&mut rng, d, 1, d),
                attn_dst: fan_in_uniform(&mut rng, d, 1, d),
            })
            .collect();
        let encoder = (0..config.encoder_layers)
            .map(|_| EncoderLayer {
                query: fan_in_uniform(&mut rng, d, d, d),
                key: fan_in_uniform(&mut rng, d, d, d),
                value: fan_in_uniform(&mut rng, d, d, d),
            })
            .collect();
        let heads = |rng: &mut ChaCha8Rng| -> Vec<Tensor> {
            (0..config.heads).map(|_| fan_in_uniform(rng, d, dh, d)).collect()
        };
        let attn_query = heads(&mut rng);
        let attn_key = heads(&mut rng);
        let attn_value = heads(&mut rng);
        let attn_output = fan_in_uniform(&mut rng, d, d, d);
        let fusion_weight = fan_in_uniform(&mut rng, d, 2 * d, 2 * d);
        let classifier_weight = fan_in_uniform(&mut rng, n_labels, n_labels * d, n_labels * d);
        Ok(Self {
            config: config.clone(),
            n_labels,
            token_embedding,
            label_embedding,
            gat,
            encoder,
            attn_query,
            attn_key,
            attn_value,
            attn_output,
            fusion_weight,
            fusion_bias: Tensor::zeros(1, d),
            classifier_weight,
            classifier_bias: Tensor::zeros(n_labels, 1),
        })
    }

    /// Every tensor with its stable name, in canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            vec![("token_embedding".into(), &self.token_embedding), ("label_embedding".into(), &self.label_embedding)];
        for (i, l) in self.gat.iter().enumerate() {
            out.push((format!("gat.{i}.weight"), &l.weight));
            out.push((format!("gat.{i}.attn_src"), &l.attn_src));
            out.push((format!("gat.{i}.attn_dst"), &l.attn_dst));
        }
        for (i, l) in self.encoder.iter().enumerate() {
            out.push((format!("encoder.{i}.query"), &l.query));
            out.push((format!("encoder.{i}.key"), &l.key));
            out.push((format!("encoder.{i}.value"), &l.value));
        }
        for (i, t) in self.attn_query.iter().enumerate() {
            out.push((format!("attn.query.{i}"), t));
        }
        for (i, t) in self.attn_key.iter().enumerate() {
            out.push((format!("attn.key.{i}"), t));
        }
        for (i, t) in self.attn_value.iter().enumerate() {
            out.push((format!("attn.value.{i}"), t));
        }
        out.push(("attn.output".into(), &self.attn_output));
        out.push(("fusion.weight".into(), &self.fusion_weight));
        out.push(("fusion.bias".into(), &self.fusion_bias));
        out.push(("classifier.weight".into(), &self.classifier_weight));
        out.push(("classifier.bias".into(), &self.classifier_bias));
        out
    }

    /// Mutable tensors in the same order as [`named`](Self::named).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.token_embedding, &mut self.label_embedding];
        for l in &mut self.gat {
            out.extend([&mut l.weight, &mut l.attn_src, &mut l.attn_dst]);
        }
        for l in &mut self.encoder {
            out.extend([&mut l.query, &mut l.key, &mut l.value]);
        }
        out.extend(self.attn_query.iter_mut());
        out.extend(self.attn_key.iter_mut());
        out.extend(self.attn_value.iter_mut());
        out.extend([
            &mut self.attn_output,
            &mut self.fusion_weight,
            &mut self.fusion_bias,
            &mut self.classifier_weight,
            &mut self.classifier_bias,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds every tensor to `graph`, trainable or frozen.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let mut add = |t: &Tensor| if trainable { graph.param(t.clone()) } else { graph.constant(t.clone()) };
        let token_embedding = add(&self.token_embedding);
        let label_embedding = add(&self.label_embedding);
        let gat = self
            .gat
            .iter()
            .map(|l| BoundGat { weight: add(&l.weight), attn_src: add(&l.attn_src), attn_dst: add(&l.attn_dst) })
            .collect();
        let encoder = self
            .encoder
            .iter()
            .map(|l| BoundEncoder { query: add(&l.query), key: add(&l.key), value: add(&l.value) })
            .collect();
        let attn_query = self.attn_query.iter().map(&mut add).collect();
        let attn_key = self.attn_key.iter().map(&mut add).collect();
        let attn_value = self.attn_value.iter().map(&mut add).collect();
        let attn_output = add(&self.attn_output);
        let fusion_weight = add(&self.fusion_weight);
        let fusion_bias = add(&self.fusion_bias);
        let classifier_weight = add(&self.classifier_weight);
        let classifier_bias = add(&self.classifier_bias);
        BoundParams {
            config: self.config.clone(),
            n_labels: self.n_labels,
            token_embedding,
            label_embedding,
            gat,
            encoder,
            attn_query,
            attn_key,
            attn_value,
            attn_output,
            fusion_weight,
            fusion_bias,
            classifier_weight,
            classifier_bias,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundGat {
    pub weight: NodeId,
    pub attn_src: NodeId,
    pub attn_dst: NodeId,
}

#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub query: NodeId,
    pub key: NodeId,
    pub value: NodeId,
}

/// [`ModelParams`] living inside one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub config: ModelConfig,
    pub n_labels: usize,
    pub token_embedding: NodeId,
    pub label_embedding: NodeId,
    pub gat: Vec<BoundGat>,
    pub encoder: Vec<BoundEncoder>,
    pub attn_query: Vec<NodeId>,
    pub attn_key: Vec<NodeId>,
    pub attn_value: Vec<NodeId>,
    pub attn_output: NodeId,
    pub fusion_weight: NodeId,
    pub fusion_bias: NodeId,
    pub classifier_weight: NodeId,
    pub classifier_bias: NodeId,
}

impl BoundParams {
    /// Node ids in the order of [`ModelParams::named`].
    pub fn ids(&self) -> Vec<NodeId> {
        let mut out = vec![self.token_embedding, self.label_embedding];
        for l in &self.gat {
            out.extend([l.weight, l.attn_src, l.attn_dst]);
        }
        for l in &self.encoder {
            out.extend([l.query, l.key, l.value]);
        }
        out.extend(&self.attn_query);
        out.extend(&self.attn_key);
        out.extend(&self.attn_value);
        out.extend([
            self.attn_output,
            self.fusion_weight,
            self.fusion_bias,
            self.classifier_weight,
            self.classifier_bias,
        ]);
        out
    }

    /// Inverse of [`BoundParams::ids`] for nodes already added in that order.
    pub fn from_ids(params: &ModelParams, ids: &[NodeId]) -> Result<Self, ModelError> {
        let expected = params.named().len();
        if ids.len() != expected {
            return Err(ModelError::Config(format!("expected {expected} parameter nodes, got {}", ids.len())));
        }
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("length checked");
        let token_embedding = next();
        let label_embedding = next();
        let gat =
            (0..params.gat.len()).map(|_| BoundGat { weight: next(), attn_src: next(), attn_dst: next() }).collect();
        let encoder =
            (0..params.encoder.len()).map(|_| BoundEncoder { query: next(), key: next(), value: next() }).collect();
        let heads = params.attn_query.len();
        let attn_query = (0..heads).map(|_| next()).collect();
        let attn_key = (0..heads).map(|_| next()).collect();
        let attn_value = (0..heads).map(|_| next()).collect();
        Ok(Self {
            config: params.config.clone(),
            n_labels: params.n_labels,
            token_embedding,
            label_embedding,
            gat,
            encoder,
            attn_query,
            attn_key,
            attn_value,
            attn_output: next(),
            fusion_weight: next(),
            fusion_bias: next(),
            classifier_weight: next(),
            classifier_bias: next(),
        })
    }
}

/// Row-major `n x n` neighbourhood mask: parent-child edges in both
/// directions plus self-loops.
pub fn gat_neighbourhood(taxonomy: &Taxonomy) -> Vec<bool> {
    let n = taxonomy.len();
    let mut mask = vec![false; n * n];
    for k in 0..n {
        mask[k * n + k] = true;
        if let Some(p) = taxonomy.parent(k) {
            mask[k * n + p] = true;
            mask[p * n + k] = true;
        }
    }
    mask
}

/// One graph-attention layer: `softmax_N(i)(leaky(a_src.Wh_i + a_dst.Wh_j)) Wh`.
pub fn gat_layer(
    g: &mut Graph,
    layer: &BoundGat,
    input: NodeId,
    mask: &[bool],
) -> Result<(NodeId, NodeId), TensorError> {
    let n = g.shape(input).0;
    let wh = g.matmul(input, layer.weight)?;
    let src = g.matmul(wh, layer.attn_src)?;
    let dst = g.matmul(wh, layer.attn_dst)?;
    let ones_row = g.constant(Tensor::filled(1, n, 1.0));
    let ones_col = g.constant(Tensor::filled(n, 1, 1.0));
    let src_grid = g.matmul(src, ones_row)?;
    let dst_t = g.transpose(dst);
    let dst_grid = g.matmul(ones_col, dst_t)?;
    let scores = g.add(src_grid, dst_grid)?;
    let scores = g.leaky_relu(scores, GAT_LEAKY_SLOPE);
    let alpha = g.masked_softmax_rows(scores, mask)?;
    let out = g.matmul(alpha, wh)?;
    Ok((out, alpha))
}

/// Label embeddings after every GAT layer.
pub fn propagate_hierarchy(g: &mut Graph, p: &BoundParams, taxonomy: &Taxonomy) -> Result<NodeId, TensorError> {
    let mask = gat_neighbourhood(taxonomy);
    let mut y = p.label_embedding;
    for layer in &p.gat {
        y = gat_layer(g, layer, y, &mask)?.0;
    }
    Ok(y)
}

/// `H` for one document: embedding lookup, then residual self-attention blocks.
pub fn encode_tokens(g: &mut Graph, p: &BoundParams, token_ids: &[usize]) -> Result<NodeId, ModelError> {
    if token_ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let vocab_size = p.config.vocab_size;
    if let Some(&id) = token_ids.iter().find(|&&id| id >= vocab_size) {
        return Err(ModelError::TokenOutOfRange { id, vocab_size });
    }
    let mut h = g.gather_rows(p.token_embedding, token_ids)?;
    for block in &p.encoder {
        let q = g.matmul(h, block.query)?;
        let k = g.matmul(h, block.key)?;
        let v = g.matmul(h, block.value)?;
        let (attended, _) = g.scaled_dot_product_attention(q, k, v)?;
        h = g.add(h, attended)?;
    }
    Ok(h)
}

/// Per-graph quantities shared by every document of a batch.
#[derive(Debug, Clone)]
pub struct LabelContext {
    /// `Y'` after graph attention.
    pub label_states: NodeId,
    /// Per-head `Y' W^q_j`.
    pub queries: Vec<NodeId>,
    /// `W_a^T`.
    pub fusion_weight_t: NodeId,
}

impl LabelContext {
    pub fn new(g: &mut Graph, p: &BoundParams, taxonomy: &Taxonomy) -> Result<Self, TensorError> {
        let label_states = propagate_hierarchy(g, p, taxonomy)?;
        Self::from_label_states(g, p, label_states)
    }

    pub fn from_label_states(g: &mut Graph, p: &BoundParams, label_states: NodeId) -> Result<Self, TensorError> {
        let queries = p.attn_query.iter().map(|&wq| g.matmul(label_states, wq)).collect::<Result<_, _>>()?;
        let fusion_weight_t = g.transpose(p.fusion_weight);
        Ok(Self { label_states, queries, fusion_weight_t })
    }
}

/// `G`: row `i` is `Multihead(y'_i, H, H)`.
pub fn label_aware_embeddings(
    g: &mut Graph,
    p: &BoundParams,
    ctx: &LabelContext,
    h: NodeId,
) -> Result<NodeId, TensorError> {
    let mut heads = Vec::with_capacity(ctx.queries.len());
    for (j, &q) in ctx.queries.iter().enumerate() {
        let k = g.matmul(h, p.attn_key[j])?;
        let v = g.matmul(h, p.attn_value[j])?;
        heads.push(g.scaled_dot_product_attention(q, k, v)?.0);
    }
    let joined = g.concat_cols(&heads)?;
    g.matmul(joined, p.attn_output)
}

/// `Z`: `z_i = softmax(H (W_a [g_i | y'_i] + b_a))^T H`.
pub fn fuse_and_project(
    g: &mut Graph,
    p: &BoundParams,
    ctx: &LabelContext,
    h: NodeId,
    label_aware: NodeId,
) -> Result<NodeId, TensorError> {
    let a = g.concat_cols(&[label_aware, ctx.label_states])?;
    let u = g.matmul(a, ctx.fusion_weight_t)?;
    let u = g.add_row(u, p.fusion_bias)?;
    let ht = g.transpose(h);
    let scores = g.matmul(u, ht)?;
    let alpha = g.softmax_rows(scores);
    g.matmul(alpha, h)
}

/// `S = W_s [g_1 | ... | g_n] + b_s`, an `n x 1` logit column.
pub fn classify(g: &mut Graph, p: &BoundParams, label_aware: NodeId) -> Result<NodeId, TensorError> {
    let (n, d) = g.shape(label_aware);
    let flat = g.reshape(label_aware, n * d, 1)?;
    let s = g.matmul(p.classifier_weight, flat)?;
    g.add(s, p.classifier_bias)
}

/// `{i | s_i > 0}`; zero logits are negative.
pub fn predict(logits: &[f64]) -> Result<LabelVector, ModelError> {
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(ModelError::NonFiniteLogit { index, value });
    }
    Ok(LabelVector::from_bits(logits.iter().map(|&s| s > 0.0).collect()))
}

#[derive(Debug, Clone, Copy)]
pub struct DocumentNodes {
    pub tokens: NodeId,
    pub label_aware: NodeId,
    pub projected: NodeId,
    pub logits: NodeId,
}

/// Full forward pass for one document inside a batch graph.
pub fn forward_document(
    g: &mut Graph,
    p: &BoundParams,
    ctx: &LabelContext,
    token_ids: &[usize],
) -> Result<DocumentNodes, ModelError> {
    let tokens = encode_tokens(g, p, token_ids)?;
    let label_aware = label_aware_embeddings(g, p, ctx, tokens)?;
    let projected = fuse_and_project(g, p, ctx, tokens, label_aware)?;
    let logits = classify(g, p, label_aware)?;
    Ok(DocumentNodes { tokens, label_aware, projected, logits })
}

/// Inference without gradient tracking. Parameters and the label-side
/// context are bound once; each document's nodes are dropped afterwards.
pub struct Predictor {
    graph: Graph,
    bound: BoundParams,
    ctx: LabelContext,
    base_len: usize,
}

impl Predictor {
    pub fn new(params: &ModelParams, taxonomy: &Taxonomy) -> Result<Self, ModelError> {
        let mut graph = Graph::new();
        let bound = params.bind(&mut graph, false);
        let ctx = LabelContext::new(&mut graph, &bound, taxonomy)?;
        let base_len = graph.len();
        Ok(Self { graph, bound, ctx, base_len })
    }

    /// Logits for one document.
    pub fn logits(&mut self, token_ids: &[usize]) -> Result<Vec<f64>, ModelError> {
        let g = &mut self.graph;
        let result = (|| {
            let tokens = encode_tokens(g, &self.bound, token_ids)?;
            let label_aware = label_aware_embeddings(g, &self.bound, &self.ctx, tokens)?;
            let logits = classify(g, &self.bound, label_aware)?;
            Ok(g.value(logits).data().to_vec())
        })();
        self.graph.truncate(self.base_len);
        result
    }

    pub fn predict(&mut self, token_ids: &[usize]) -> Result<LabelVector, ModelError> {
        predict(&self.logits(token_ids)?)
    }
}
