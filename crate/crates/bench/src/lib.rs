//! Shared setup for the benchmarks.

use std::collections::HashMap;

use hjcl_core::data::{generate_synthetic, load_corpus, Document, LoadOptions, SynthSpec, Vocab, VocabMode};
use hjcl_core::model::{ModelConfig, ModelParams};
use hjcl_core::trainer::initial_params;
use hjcl_core::Taxonomy;

/// The default synthetic corpus loaded with a model at default width.
pub struct Workload {
    pub taxonomy: Taxonomy,
    pub vocab: Vocab,
    pub train: Vec<Document>,
    pub params: ModelParams,
}

impl Workload {
    pub fn new(spec: &SynthSpec) -> Self {
        let corpus = generate_synthetic(spec).expect("valid spec");
        let taxonomy = Taxonomy::parse(&corpus.taxonomy_tsv).expect("generated taxonomy parses");
        let mut vocab = Vocab::new();
        let train =
            load_corpus(corpus.train.as_bytes(), &taxonomy, &mut vocab, VocabMode::Build, &LoadOptions::default())
                .expect("generated corpus loads")
                .documents;
        let config = ModelConfig { vocab_size: vocab.len(), ..ModelConfig::default() };
        let params = initial_params(&config, &taxonomy, &vocab, &HashMap::new()).expect("valid model");
        Self { taxonomy, vocab, train, params }
    }
}
