//! Gradient-check runner over the full model and every loss.
//!
//! A fixed micro-batch of four documents on the seven-label fixture is
//! pushed through a small seeded model; each loss component is checked
//! against central finite differences over every model parameter.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::fixtures::seven_label_taxonomy;
use crate::losses::{self, ContrastiveBatch, LabelLossMode, LossOptions, LossWeights, Prefactor};
use crate::metric::MetricContext;
use crate::model::{forward_document, BoundParams, LabelContext, ModelConfig, ModelParams};
use crate::taxonomy::{LabelVector, Taxonomy};
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, Graph, NodeId, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Zlpr,
    Supcon,
    Hilecon,
    Instance,
    Total,
}

impl Component {
    pub const ALL: [Component; 5] =
        [Component::Zlpr, Component::Supcon, Component::Hilecon, Component::Instance, Component::Total];

    pub fn name(self) -> &'static str {
        match self {
            Component::Zlpr => "zlpr",
            Component::Supcon => "supcon",
            Component::Hilecon => "hilecon",
            Component::Instance => "instance",
            Component::Total => "total",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown component `{s}` (expected zlpr, supcon, hilecon, instance or total)"))
    }
}

/// The fixed micro-batch.
#[derive(Debug, Clone)]
pub struct MicroBatch {
    pub taxonomy: Taxonomy,
    pub params: ModelParams,
    pub documents: Vec<Vec<usize>>,
    pub gold: Vec<LabelVector>,
}

const VOCAB: usize = 12;

const GOLD: [&[&str]; 4] =
    [&["a", "a1", "a1x"], &["a", "a1", "a1x", "b", "b1"], &["a", "a2"], &["a", "a1", "b", "b1", "b1x"]];

const DOCUMENTS: [&[usize]; 4] = [&[1, 2, 3, 4, 5], &[2, 6, 7, 3], &[8, 9, 1, 10, 11, 0], &[4, 5, 6, 7]];

impl MicroBatch {
    /// Small model (width 8, two heads, two graph layers, one encoder
    /// block) initialized from `seed`.
    pub fn new(seed: u64) -> Self {
        let taxonomy = seven_label_taxonomy();
        let config = ModelConfig { dim: 8, heads: 2, gat_layers: 2, vocab_size: VOCAB, encoder_layers: 1, seed };
        let params = ModelParams::init(&config, taxonomy.len()).expect("fixed config is valid");
        let gold = GOLD.iter().map(|names| taxonomy.label_vector(names).expect("fixture labels exist")).collect();
        let documents = DOCUMENTS.iter().map(|d| d.to_vec()).collect();
        Self { taxonomy, params, documents, gold }
    }

    fn loss(&self, g: &mut Graph, ids: &[NodeId], component: Component) -> Result<NodeId, TensorError> {
        let wrap = |e: &dyn fmt::Display| TensorError::Invalid { op: "gradcheck", msg: e.to_string() };
        let bound = BoundParams::from_ids(&self.params, ids).map_err(|e| wrap(&e))?;
        let labels = LabelContext::new(g, &bound, &self.taxonomy)?;
        let mut projected = Vec::new();
        let mut logits = Vec::new();
        for doc in &self.documents {
            let nodes = forward_document(g, &bound, &labels, doc).map_err(|e| wrap(&e))?;
            projected.push(nodes.projected);
            logits.push(nodes.logits);
        }
        let batch = ContrastiveBatch::new(&projected, &self.gold).map_err(|e| wrap(&e))?;
        let weights = LossWeights::default();
        let options = LossOptions::default();
        let ctx = MetricContext::new(&self.taxonomy);
        let tau = weights.temperature;
        let out = match component {
            Component::Zlpr => {
                let per = logits
                    .iter()
                    .zip(&self.gold)
                    .map(|(&s, y)| losses::zlpr(g, s, y))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| wrap(&e))?;
                let stacked = g.concat_rows(&per)?;
                let sum = g.sum(stacked);
                Ok(g.scale(sum, 1.0 / per.len() as f64))
            }
            Component::Supcon => losses::supcon(g, &batch, tau),
            Component::Hilecon => losses::hilecon(g, &batch, tau, &ctx, LabelLossMode::Hilecon, Prefactor::Anchors),
            Component::Instance => losses::instance_loss(g, &batch, tau, &self.taxonomy, &options).map(|l| l.value),
            Component::Total => {
                losses::total_loss(g, &batch, &logits, &weights, &ctx, &self.taxonomy, &options).map(|l| l.total)
            }
        };
        out.map_err(|e| wrap(&e))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentReport {
    pub component: Component,
    pub max_rel_error: f64,
    pub passed: bool,
    pub seconds: f64,
    pub detail: GradCheckReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub tol: f64,
    pub components: Vec<ComponentReport>,
    pub passed: bool,
}

/// Checks each of `components` on the micro-batch built from `seed`.
pub fn run_suite(seed: u64, tol: f64, components: &[Component]) -> Result<SuiteReport, TensorError> {
    run_suite_with(seed, GradCheckConfig { tol, seed, ..GradCheckConfig::default() }, components)
}

/// [`run_suite`] with every finite-difference setting exposed.
pub fn run_suite_with(
    seed: u64,
    config: GradCheckConfig,
    components: &[Component],
) -> Result<SuiteReport, TensorError> {
    let tol = config.tol;
    let micro = MicroBatch::new(seed);
    let params: Vec<_> = micro.params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let mut reports = Vec::with_capacity(components.len());
    for &component in components {
        let start = Instant::now();
        let detail = grad_check(|g, ids| micro.loss(g, ids, component), &params, &config)?;
        reports.push(ComponentReport {
            component,
            max_rel_error: detail.max_rel_error,
            passed: detail.passed,
            seconds: start.elapsed().as_secs_f64(),
            detail,
        });
    }
    let passed = reports.iter().all(|r| r.passed);
    Ok(SuiteReport { seed, tol, components: reports, passed })
}
