//! Command-line front end: corpus generation, training, evaluation,
//! gradient checking and offline scoring.
//!
//! Every command reads an optional `--config` file of `key = value` lines;
//! flags override file values. Keys are the flag names with dashes
//! replaced by underscores.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "hjcl",
    version,
    about = "Hierarchical multi-label text classification with joint contrastive learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a synthetic hierarchical corpus (taxonomy plus train/val/test splits).
    Synth(SynthArgs),
    /// Train a model; writes the best checkpoint, a JSONL epoch log and validation metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of every loss.
    Gradcheck(GradcheckArgs),
    /// Score a predictions file against a gold corpus without a model.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// `key = value` config file; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed [default: $HJCL_SEED, else 42].
    #[arg(long)]
    pub seed: Option<String>,
}

macro_rules! keyed_args {
    ($(#[$meta:meta])* $name:ident { $($(#[doc = $doc:literal])* $field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Args)]
        pub struct $name {
            #[command(flatten)]
            pub common: Common,
            $(
                $(#[doc = $doc])*
                #[arg(long)]
                pub $field: Option<String>,
            )*
        }

        impl $name {
            /// `(config key, flag value)` for every flag.
            pub fn entries(&self) -> Vec<(&'static str, Option<String>)> {
                let mut v = vec![("seed", self.common.seed.clone())];
                $( v.push((stringify!($field), self.$field.clone())); )*
                v
            }
        }
    };
}

keyed_args!(SynthArgs {
    /// Output directory.
    out,
    /// Levels of the label tree [default: 3].
    depth,
    /// Children per internal label [default: 3].
    branching,
    /// Tokens owned by each label [default: 4].
    tokens_per_label,
    /// Tokens per document [default: 24].
    doc_length,
    /// Fewest root-to-leaf paths per document [default: 1].
    paths_min,
    /// Most root-to-leaf paths per document [default: 3].
    paths_max,
    /// Share of noise tokens [default: 0.1].
    noise_ratio,
    /// Size of the shared noise vocabulary [default: 50].
    noise_vocab,
    /// Training documents; validation and test get 15/70 of this each [default: 2000].
    train_docs,
});

keyed_args!(TrainArgs {
    /// Taxonomy TSV (`label<TAB>parent`).
    taxonomy,
    /// Training corpus (JSONL).
    train,
    /// Validation corpus (JSONL).
    val,
    /// Label descriptions (`label<TAB>text`); label names by default.
    descriptions,
    /// Stopword list, one token per line.
    stoplist,
    /// Output directory [default: run].
    out,
    /// Checkpoint path [default: <out>/checkpoint.hjcl].
    checkpoint,
    /// Embedding width [default: 32].
    dim,
    /// Attention heads [default: 4].
    heads,
    /// Graph attention layers [default: 2].
    gat_layers,
    /// Self-attention blocks over token embeddings [default: 0].
    encoder_layers,
    /// [default: 80]
    batch_size,
    /// AdamW learning rate [default: 3e-5].
    lr,
    /// Instance-level contrastive weight [default: 0.1].
    lambda1,
    /// Label-level contrastive weight [default: 0.5].
    lambda2,
    /// Contrastive temperature [default: 0.1].
    temperature,
    /// Label-level loss: hilecon, lecon or supcon [default: hilecon].
    mode,
    /// [default: 50]
    max_epochs,
    /// Epochs without a validation Macro-F1 gain before stopping [default: 10].
    patience,
    /// [default: 0.9]
    beta1,
    /// [default: 0.999]
    beta2,
    /// AdamW epsilon [default: 1e-8].
    eps,
    /// Decoupled weight decay [default: 0.01].
    weight_decay,
    /// Normalize negative-pair weights too [default: false].
    normalize_gamma,
    /// Depth penalty: shifted or paper_clamped [default: shifted].
    penalty,
    /// Label-loss prefactor: anchors or labels [default: anchors].
    prefactor,
    /// Instance positives: exact or overlap [default: exact].
    positive_rule,
    /// Instance denominator: all_others or strict_negatives [default: all_others].
    instance_denominator,
    /// Classification loss: zlpr or bce [default: zlpr].
    classification,
    /// Re-close true positives before counting paths [default: true].
    closure,
    /// Add per-epoch wall time to the log (breaks byte-identical logs) [default: false].
    record_wall_time,
});

keyed_args!(EvalArgs {
    /// Checkpoint written by `train`.
    checkpoint,
    /// Taxonomy TSV the checkpoint was trained on.
    taxonomy,
    /// Corpus to score (JSONL).
    corpus,
    /// Stopword list applied at load.
    stoplist,
    /// Write the metrics report as JSON here.
    json,
    /// Write one `{"id", "labels"}` line per document here.
    dump_predictions,
    /// Re-close true positives before counting paths [default: true].
    closure,
});

keyed_args!(GradcheckArgs {
    /// Relative error threshold [default: 1e-4].
    tol,
    /// Comma-separated subset of zlpr, supcon, hilecon, instance, total [default: all].
    component,
    /// Write the report as JSON here.
    json,
});

keyed_args!(MetricsArgs {
    /// Taxonomy TSV.
    taxonomy,
    /// Gold corpus (JSONL).
    gold,
    /// Predictions, one `{"id", "labels"}` object per line.
    predictions,
    /// Write the metrics report as JSON here.
    json,
    /// Re-close true positives before counting paths [default: true].
    closure,
});

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a.common, &a.entries()),
        Command::Train(a) => commands::train(&a.common, &a.entries()),
        Command::Eval(a) => commands::eval(&a.common, &a.entries()),
        Command::Gradcheck(a) => commands::gradcheck(&a.common, &a.entries()),
        Command::Metrics(a) => commands::metrics(&a.common, &a.entries()),
    }
}
