//! Batch construction, the AdamW update and the training loop.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::data::{init_label_embeddings, DataError, Document, Vocab};
use crate::eval::{report, EvalOptions, EvalPair, MetricsReport};
use crate::losses::{total_loss, ContrastiveBatch, LossError, LossOptions, LossWeights};
use crate::metric::MetricContext;
use crate::model::{forward_document, LabelContext, ModelConfig, ModelError, ModelParams, Predictor};
use crate::taxonomy::{Taxonomy, TaxonomyError};
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("batch size {batch_size} exceeds the {documents} training documents")]
    BatchTooLarge { batch_size: usize, documents: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("non-finite value in {name} ({value})")]
    NonFinite { name: String, value: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub options: LossOptions,
    /// Divide the negative weight by its normalizer as well.
    pub normalize_gamma: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub eval: EvalOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 80,
            lr: 3e-5,
            weights: LossWeights::default(),
            options: LossOptions::default(),
            normalize_gamma: false,
            max_epochs: 50,
            patience: 10,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            eval: EvalOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch_size < 2 {
            out.push(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.patience < 1 {
            out.push("patience must be at least 1".to_string());
        }
        if self.max_epochs < 1 {
            out.push("max_epochs must be at least 1".to_string());
        }
        let w = &self.weights;
        if !(w.lambda1 >= 0.0 && w.lambda1.is_finite()) || !(w.lambda2 >= 0.0 && w.lambda2.is_finite()) {
            out.push(format!("lambda1 and lambda2 must be nonnegative, got {} and {}", w.lambda1, w.lambda2));
        }
        if !(w.temperature > 0.0 && w.temperature.is_finite()) {
            out.push(format!("temperature must be positive, got {}", w.temperature));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            out.push(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            out.push(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        out
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(p))
        }
    }
}

/// Optimizer moments and loop bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub best_macro_f1: Option<f64>,
    pub epochs_since_best: usize,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: &ModelParams, seed: u64) -> Self {
        let zeros: Vec<Tensor> = params.named().iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            epoch: 0,
            step: 0,
            best_macro_f1: None,
            epochs_since_best: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSchedule {
    /// Document indices per batch; together a partition of the corpus.
    pub batches: Vec<Vec<usize>>,
    /// Per batch: share of gold-label embeddings with an in-batch positive.
    pub coverage: Vec<f64>,
}

impl BatchSchedule {
    /// Coverage pooled over all batches.
    pub fn overall_coverage(&self, documents: &[Document]) -> f64 {
        let (mut covered, mut total) = (0, 0);
        for b in &self.batches {
            let (c, t) = coverage_counts(documents, b);
            covered += c;
            total += t;
        }
        if total == 0 {
            0.0
        } else {
            covered as f64 / total as f64
        }
    }
}

/// `(gold-label embeddings with a positive, gold-label embeddings)`.
fn coverage_counts(documents: &[Document], batch: &[usize]) -> (usize, usize) {
    let mut per_label: HashMap<usize, usize> = HashMap::new();
    for &i in batch {
        for k in documents[i].gold.iter_ones() {
            *per_label.entry(k).or_insert(0) += 1;
        }
    }
    let total = per_label.values().sum();
    let covered = per_label.values().filter(|&&c| c >= 2).sum();
    (covered, total)
}

pub fn batch_coverage(documents: &[Document], batch: &[usize]) -> f64 {
    let (c, t) = coverage_counts(documents, batch);
    if t == 0 {
        0.0
    } else {
        c as f64 / t as f64
    }
}

fn check_sizes(documents: &[Document], batch_size: usize) -> Result<(), TrainError> {
    if documents.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if batch_size > documents.len() {
        return Err(TrainError::BatchTooLarge { batch_size, documents: documents.len() });
    }
    Ok(())
}

fn schedule(documents: &[Document], order: Vec<usize>, batch_size: usize) -> BatchSchedule {
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let coverage = batches.iter().map(|b| batch_coverage(documents, b)).collect();
    BatchSchedule { batches, coverage }
}

/// Label-bucket batching: documents are grouped by their rarest gold
/// label, buckets are laid out back to back in shuffled order, documents
/// whose bucket is a singleton fill the tail in random order, and the
/// sequence is cut into consecutive batches. The last batch may be short.
pub fn build_batches(
    documents: &[Document],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchSchedule, TrainError> {
    check_sizes(documents, batch_size)?;
    let n = documents[0].gold.len();
    let mut freq = vec![0usize; n];
    for d in documents {
        for k in d.gold.iter_ones() {
            freq[k] += 1;
        }
    }
    let mut buckets: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, d) in documents.iter().enumerate() {
        let key = d.gold.iter_ones().min_by_key(|&k| (freq[k], k));
        buckets.entry(key).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut loose = Vec::new();
    for (_, mut members) in buckets {
        members.shuffle(rng);
        if members.len() >= 2 {
            groups.push(members);
        } else {
            loose.extend(members);
        }
    }
    groups.shuffle(rng);
    loose.shuffle(rng);
    let mut order: Vec<usize> = groups.into_iter().flatten().collect();
    order.extend(loose);
    let out = schedule(documents, order, batch_size);
    if out.overall_coverage(documents) == 0.0 {
        log::warn!("no two documents in any batch share a label; contrastive terms vanish");
    }
    Ok(out)
}

/// Uniformly shuffled batches, the baseline for [`build_batches`].
pub fn random_batches(
    documents: &[Document],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchSchedule, TrainError> {
    check_sizes(documents, batch_size)?;
    let mut order: Vec<usize> = (0..documents.len()).collect();
    order.shuffle(rng);
    Ok(schedule(documents, order, batch_size))
}

#[derive(Debug, Clone, Copy)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamWParams {
    fn from(c: &TrainConfig) -> Self {
        Self { lr: c.lr, beta1: c.beta1, beta2: c.beta2, eps: c.eps, weight_decay: c.weight_decay }
    }
}

/// One AdamW update of `param` at step `t` (1-based):
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p`.
pub fn adamw_update(param: &mut Tensor, grad: &Tensor, m: &mut Tensor, v: &mut Tensor, t: u64, h: AdamWParams) {
    let c1 = 1.0 - h.beta1.powi(t as i32);
    let c2 = 1.0 - h.beta2.powi(t as i32);
    let (p, g) = (param.data_mut(), grad.data());
    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps) + h.lr * h.weight_decay * *p;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub zlpr: f64,
    /// Unweighted; 0 when its weight is 0.
    pub instance: f64,
    /// Unweighted; 0 when its weight is 0.
    pub hilecon: f64,
}

/// Everything fixed across steps of one run.
pub struct TrainContext<'a> {
    pub taxonomy: &'a Taxonomy,
    pub metric: MetricContext,
    pub config: &'a TrainConfig,
}

impl<'a> TrainContext<'a> {
    pub fn new(taxonomy: &'a Taxonomy, config: &'a TrainConfig) -> Self {
        Self { taxonomy, metric: MetricContext::new(taxonomy).with_normalized_gamma(config.normalize_gamma), config }
    }
}

/// Forward, backward and one AdamW update on `batch`.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[&Document],
    ctx: &TrainContext,
    state: &mut TrainState,
) -> Result<StepLosses, TrainError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let labels = LabelContext::new(&mut g, &bound, ctx.taxonomy)?;
    let mut projected = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    for doc in batch {
        let nodes = forward_document(&mut g, &bound, &labels, &doc.token_ids)?;
        for (what, id) in [("logits", nodes.logits), ("projected", nodes.projected)] {
            if let Some(&bad) = g.value(id).data().iter().find(|v| !v.is_finite()) {
                return Err(TrainError::NonFinite { name: format!("forward.{what}[{}]", doc.id), value: bad });
            }
        }
        projected.push(nodes.projected);
        logits.push(nodes.logits);
    }
    let gold: Vec<_> = batch.iter().map(|d| d.gold.clone()).collect();
    let cb = ContrastiveBatch::new(&projected, &gold)?;
    let mut weights = ctx.config.weights;
    if cb.anchors().is_empty() {
        weights.lambda2 = 0.0;
    }
    let nodes = total_loss(&mut g, &cb, &logits, &weights, &ctx.metric, ctx.taxonomy, &ctx.config.options)?;
    let value = |id: Option<crate::tensor::NodeId>| id.map_or(0.0, |id| g.value(id).item());
    let losses = StepLosses {
        total: g.value(nodes.total).item(),
        zlpr: g.value(nodes.classification).item(),
        instance: value(nodes.instance),
        hilecon: value(nodes.label),
    };
    for (name, v) in [
        ("loss.zlpr", losses.zlpr),
        ("loss.instance", losses.instance),
        ("loss.hilecon", losses.hilecon),
        ("loss.total", losses.total),
    ] {
        if !v.is_finite() {
            return Err(TrainError::NonFinite { name: name.to_string(), value: v });
        }
    }
    g.backward(nodes.total)?;

    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let ids = bound.ids();
    let mut grads = Vec::with_capacity(ids.len());
    for ((id, name), p) in ids.iter().zip(&names).zip(params.named()) {
        let grad = g.grad(*id).cloned().unwrap_or_else(|| Tensor::zeros(p.1.rows(), p.1.cols()));
        if let Some(&bad) = grad.data().iter().find(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite { name: format!("grad.{name}"), value: bad });
        }
        grads.push(grad);
    }
    state.step += 1;
    let h = AdamWParams::from(ctx.config);
    for (((p, grad), m), v) in
        params.tensors_mut().into_iter().zip(&grads).zip(&mut state.first_moment).zip(&mut state.second_moment)
    {
        adamw_update(p, grad, m, v, state.step, h);
    }
    Ok(losses)
}

/// Seeded initial parameters with label embeddings averaged from their
/// descriptions (label names by default).
pub fn initial_params(
    config: &ModelConfig,
    taxonomy: &Taxonomy,
    vocab: &Vocab,
    descriptions: &HashMap<String, String>,
) -> Result<ModelParams, TrainError> {
    let mut params = ModelParams::init(config, taxonomy.len())?;
    params.label_embedding = init_label_embeddings(vocab, &params.token_embedding, taxonomy, descriptions)?;
    Ok(params)
}

/// Predicts every document and scores the predictions.
pub fn evaluate(
    params: &ModelParams,
    documents: &[Document],
    taxonomy: &Taxonomy,
    options: EvalOptions,
) -> Result<(MetricsReport, Vec<EvalPair>), TrainError> {
    let mut predictor = Predictor::new(params, taxonomy)?;
    let pairs = documents
        .iter()
        .map(|d| Ok(EvalPair::new(d.gold.clone(), predictor.predict(&d.token_ids)?)))
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok((report(&pairs, taxonomy, options)?, pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: StepLosses,
    pub batch_coverage: f64,
    pub val_micro_f1: f64,
    pub val_macro_f1: f64,
    pub val_acc_p: f64,
    pub val_acc_d: f64,
    pub improved: bool,
    /// Seconds spent on the epoch; only recorded on request because it
    /// breaks byte-identical logs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Training stopped by an error; `best` holds the last accepted checkpoint.
#[derive(Debug, Error)]
#[error("training failed after {} epochs: {source}", log.len())]
pub struct FitError {
    #[source]
    pub source: TrainError,
    pub best: Option<Box<Checkpoint>>,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub record_wall_time: bool,
}

/// Trains until `max_epochs` or until validation Macro-F1 has not improved
/// for `patience` epochs, keeping the best-scoring parameters.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    mut params: ModelParams,
    vocab: &Vocab,
    train: &[Document],
    val: &[Document],
    taxonomy: &Taxonomy,
    config: &TrainConfig,
    options: FitOptions,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<FitOutcome, FitError> {
    let fail = |source: TrainError, best: Option<Box<Checkpoint>>, log: Vec<EpochLog>| FitError { source, best, log };
    if let Err(e) = config.validate() {
        return Err(fail(e, None, Vec::new()));
    }
    let ctx = TrainContext::new(taxonomy, config);
    let mut state = TrainState::new(&params, config.seed);
    let mut best: Option<(Checkpoint, usize)> = None;
    let mut log = Vec::new();

    while state.epoch < config.max_epochs {
        let started = std::time::Instant::now();
        state.epoch += 1;
        let epoch = state.epoch;
        let result = (|| -> Result<(StepLosses, f64, MetricsReport), TrainError> {
            let sched = build_batches(train, config.batch_size, &mut state.rng)?;
            let mut sum = StepLosses::default();
            for batch in &sched.batches {
                let docs: Vec<&Document> = batch.iter().map(|&i| &train[i]).collect();
                let l = train_step(&mut params, &docs, &ctx, &mut state)?;
                sum.total += l.total;
                sum.zlpr += l.zlpr;
                sum.instance += l.instance;
                sum.hilecon += l.hilecon;
            }
            let k = sched.batches.len() as f64;
            let mean = StepLosses {
                total: sum.total / k,
                zlpr: sum.zlpr / k,
                instance: sum.instance / k,
                hilecon: sum.hilecon / k,
            };
            let (rep, _) = evaluate(&params, val, taxonomy, config.eval)?;
            Ok((mean, sched.overall_coverage(train), rep))
        })();
        let (losses, coverage, rep) = match result {
            Ok(r) => r,
            Err(e) => return Err(fail(e, best.map(|b| Box::new(b.0)), log)),
        };
        let improved = state.best_macro_f1.is_none_or(|b| rep.macro_f1 > b);
        if improved {
            state.best_macro_f1 = Some(rep.macro_f1);
            state.epochs_since_best = 0;
            let mut ck = Checkpoint::new(params.clone(), vocab.clone(), taxonomy);
            ck.metadata.insert("epoch".into(), epoch.to_string());
            ck.metadata.insert("val_macro_f1".into(), format!("{:?}", rep.macro_f1));
            best = Some((ck, epoch));
        } else {
            state.epochs_since_best += 1;
        }
        let entry = EpochLog {
            epoch,
            losses,
            batch_coverage: coverage,
            val_micro_f1: rep.micro_f1,
            val_macro_f1: rep.macro_f1,
            val_acc_p: rep.path_accuracy,
            val_acc_d: rep.depth_accuracy,
            improved,
            wall_time_s: options.record_wall_time.then(|| started.elapsed().as_secs_f64()),
        };
        on_epoch(&entry);
        log.push(entry);
        if state.epochs_since_best >= config.patience {
            break;
        }
    }
    let (best, best_epoch) = best.expect("at least one epoch ran");
    Ok(FitOutcome { best, log, best_epoch })
}
