//! Generates the default synthetic corpus and trains on it, printing one
//! line per epoch. Usage: `train_synthetic [lr] [epochs] [lambda1] [lambda2]`.

use std::collections::HashMap;

use hjcl_core::data::{generate_synthetic, load_corpus, LoadOptions, SynthSpec, Vocab, VocabMode};
use hjcl_core::model::ModelConfig;
use hjcl_core::trainer::{evaluate, fit, initial_params, FitOptions, TrainConfig};
use hjcl_core::Taxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);

    let corpus = generate_synthetic(&SynthSpec::default())?;
    let taxonomy = Taxonomy::parse(&corpus.taxonomy_tsv)?;
    let mut vocab = Vocab::new();
    let opts = LoadOptions::default();
    let train = load_corpus(corpus.train.as_bytes(), &taxonomy, &mut vocab, VocabMode::Build, &opts)?.documents;
    let val = load_corpus(corpus.val.as_bytes(), &taxonomy, &mut vocab, VocabMode::Frozen, &opts)?.documents;
    let test = load_corpus(corpus.test.as_bytes(), &taxonomy, &mut vocab, VocabMode::Frozen, &opts)?.documents;

    let mut config = TrainConfig { lr: arg(0, 3e-5), max_epochs: arg(1, 50.0) as usize, ..Default::default() };
    config.weights.lambda1 = arg(2, config.weights.lambda1);
    config.weights.lambda2 = arg(3, config.weights.lambda2);
    let model = ModelConfig { vocab_size: vocab.len(), ..Default::default() };
    let params = initial_params(&model, &taxonomy, &vocab, &HashMap::new())?;
    let started = std::time::Instant::now();
    let outcome = fit(params, &vocab, &train, &val, &taxonomy, &config, FitOptions::default(), &mut |e| {
        println!(
            "epoch {:>3}  loss {:.4} (zlpr {:.4} inst {:.4} label {:.4})  val micro {:.4} macro {:.4} acc_p {:.4} acc_d {:.4}  {:.1}s",
            e.epoch,
            e.losses.total,
            e.losses.zlpr,
            e.losses.instance,
            e.losses.hilecon,
            e.val_micro_f1,
            e.val_macro_f1,
            e.val_acc_p,
            e.val_acc_d,
            started.elapsed().as_secs_f64()
        )
    })?;
    let (rep, _) = evaluate(&outcome.best.params, &test, &taxonomy, config.eval)?;
    println!("best epoch {}; test:\n{}", outcome.best_epoch, rep.to_table());
    Ok(())
}
