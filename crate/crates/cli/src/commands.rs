//! One function per subcommand. Each resolves its settings first, so every
//! configuration problem is reported before any work starts.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use hjcl_core::checkpoint::Checkpoint;
use hjcl_core::data::{
    generate_synthetic, load_corpus_file, load_descriptions, load_stoplist, LoadOptions, Vocab, VocabMode,
};
use hjcl_core::diagnostics::{run_suite, Component};
use hjcl_core::eval::{report, EvalPair};
use hjcl_core::model::ModelConfig;
use hjcl_core::trainer::{evaluate, fit, initial_params, EpochLog, FitOptions};
use hjcl_core::Taxonomy;

use crate::config::{read_eval_options, read_synth_spec, RunConfig, Settings};
use crate::error::CliError;
use crate::Common;

type Flags<'a> = [(&'a str, Option<String>)];

/// File names written into the `train` output directory.
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const VAL_METRICS_JSON: &str = "val_metrics.json";
pub const VAL_METRICS_TXT: &str = "val_metrics.txt";
pub const RUN_CONFIG: &str = "run.cfg";

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub labels: Vec<String>,
}

fn settings(common: &Common, flags: &Flags) -> Settings {
    Settings::load(common.config.as_deref(), flags)
}

fn read_taxonomy(path: &Path) -> Result<Taxonomy, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Taxonomy::read(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_options(stoplist: Option<&Path>) -> Result<LoadOptions, CliError> {
    let stoplist = match stoplist {
        Some(p) => Some(load_stoplist(BufReader::new(fs::File::open(p)?))?),
        None => None,
    };
    Ok(LoadOptions { stoplist })
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    Ok(fs::write(path, text)?)
}

fn data_err(path: &Path) -> impl Fn(hjcl_core::data::DataError) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub fn synth(common: &Common, flags: &Flags) -> Result<(), CliError> {
    let mut s = settings(common, flags);
    if s.raw("out").is_none() {
        s.problem("missing required setting `out`");
    }
    let out = s.output("out", "");
    let spec = read_synth_spec(&mut s);
    s.finish()?;
    let corpus = generate_synthetic(&spec)?;
    let paths = corpus.write_to(&out)?;
    println!("{:<40} {:>8} {:>10}", "file", "lines", "bytes");
    for (path, body) in paths.iter().zip([&corpus.taxonomy_tsv, &corpus.train, &corpus.val, &corpus.test]) {
        println!("{:<40} {:>8} {:>10}", path.display(), body.lines().count(), body.len());
    }
    Ok(())
}

fn progress(e: &EpochLog) {
    eprintln!(
        "epoch {:>3}  loss {:>10.5}  zlpr {:>9.5}  inst {:>9.5}  label {:>9.5}  val micro {:.4} macro {:.4}{}",
        e.epoch,
        e.losses.total,
        e.losses.zlpr,
        e.losses.instance,
        e.losses.hilecon,
        e.val_micro_f1,
        e.val_macro_f1,
        if e.improved { "  *" } else { "" }
    );
}

pub fn train(common: &Common, flags: &Flags) -> Result<(), CliError> {
    let mut s = settings(common, flags);
    let run = RunConfig::resolve(&mut s);
    s.finish()?;
    let run = run.expect("resolve succeeds when no problems were recorded");

    let taxonomy = read_taxonomy(&run.taxonomy)?;
    let options = load_options(run.stoplist.as_deref())?;
    let mut vocab = Vocab::new();
    let train = load_corpus_file(&run.train, &taxonomy, &mut vocab, VocabMode::Build, &options)
        .map_err(data_err(&run.train))?;
    let val =
        load_corpus_file(&run.val, &taxonomy, &mut vocab, VocabMode::Frozen, &options).map_err(data_err(&run.val))?;
    for (path, corpus) in [(&run.train, &train), (&run.val, &val)] {
        if !corpus.closed_lines.is_empty() {
            log::warn!("{}: {} label sets closed under ancestors", path.display(), corpus.closed_lines.len());
        }
    }
    let descriptions = match &run.descriptions {
        Some(p) => load_descriptions(BufReader::new(fs::File::open(p)?), &taxonomy).map_err(data_err(p))?,
        None => HashMap::new(),
    };
    let model = ModelConfig {
        dim: run.model.dim,
        heads: run.model.heads,
        gat_layers: run.model.gat_layers,
        vocab_size: vocab.len(),
        encoder_layers: run.model.encoder_layers,
        seed: run.train_config.seed,
    };
    let params = initial_params(&model, &taxonomy, &vocab, &descriptions)?;
    log::info!(
        "{} labels, {} train / {} val documents, vocabulary {}, {} parameters",
        taxonomy.len(),
        train.documents.len(),
        val.documents.len(),
        vocab.len(),
        params.parameter_count()
    );

    fs::create_dir_all(&run.out)?;
    fs::write(run.out.join(RUN_CONFIG), run.to_config_text())?;
    create_parent(&run.checkpoint)?;
    let mut log_file = BufWriter::new(fs::File::create(run.out.join(TRAIN_LOG))?);
    let mut write_error: Option<std::io::Error> = None;
    let mut on_epoch = |e: &EpochLog| {
        progress(e);
        if write_error.is_none() {
            let line = serde_json::to_string(e).expect("epoch log serializes");
            if let Err(err) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
                write_error = Some(err);
            }
        }
    };
    let fit_options = FitOptions { record_wall_time: run.record_wall_time };
    let result =
        fit(params, &vocab, &train.documents, &val.documents, &taxonomy, &run.train_config, fit_options, &mut on_epoch);
    if let Some(err) = write_error {
        return Err(CliError::Data(format!("writing {}: {err}", run.out.join(TRAIN_LOG).display())));
    }
    let outcome = match result {
        Ok(o) => o,
        Err(fe) => {
            let epochs = fe.log.len();
            let saved = match &fe.best {
                Some(ck) => {
                    ck.save(&run.checkpoint)?;
                    format!("; best checkpoint saved to {}", run.checkpoint.display())
                }
                None => String::new(),
            };
            let context = format!("training failed after {epochs} epochs{saved}");
            return Err(CliError::from(fe.source).context(&context));
        }
    };
    outcome.best.save(&run.checkpoint)?;
    let (val_report, _) = evaluate(&outcome.best.params, &val.documents, &taxonomy, run.train_config.eval)?;
    write_json(&run.out.join(VAL_METRICS_JSON), &val_report)?;
    let table = val_report.to_table();
    fs::write(run.out.join(VAL_METRICS_TXT), &table)?;
    println!("best epoch {} of {}; checkpoint {}", outcome.best_epoch, outcome.log.len(), run.checkpoint.display());
    println!();
    print!("{table}");
    Ok(())
}

fn prediction_lines(pairs: &[EvalPair], ids: &[&str], taxonomy: &Taxonomy) -> Vec<PredictionLine> {
    pairs
        .iter()
        .zip(ids)
        .map(|(p, id)| PredictionLine {
            id: id.to_string(),
            labels: p.pred.iter_ones().map(|k| taxonomy.name(k).to_string()).collect(),
        })
        .collect()
}

pub fn eval(common: &Common, flags: &Flags) -> Result<(), CliError> {
    let mut s = settings(common, flags);
    let checkpoint = s.input("checkpoint");
    let taxonomy_path = s.input("taxonomy");
    let corpus_path = s.input("corpus");
    let stoplist = s.optional_input("stoplist");
    let json = s.raw("json").map(std::path::PathBuf::from);
    let dump = s.raw("dump_predictions").map(std::path::PathBuf::from);
    let options = read_eval_options(&mut s);
    s.finish()?;
    let (checkpoint, taxonomy_path, corpus_path) = (checkpoint.unwrap(), taxonomy_path.unwrap(), corpus_path.unwrap());

    let ck = Checkpoint::load(&checkpoint)
        .map_err(|e| CliError::Data(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let taxonomy = read_taxonomy(&taxonomy_path)?;
    ck.check_taxonomy(&taxonomy)?;
    let mut vocab = ck.vocab.clone();
    let load = load_options(stoplist.as_deref())?;
    let corpus = load_corpus_file(&corpus_path, &taxonomy, &mut vocab, VocabMode::Frozen, &load)
        .map_err(data_err(&corpus_path))?;
    let (rep, pairs) = evaluate(&ck.params, &corpus.documents, &taxonomy, options)?;
    print!("{}", rep.to_table());
    if let Some(path) = json {
        write_json(&path, &rep)?;
    }
    if let Some(path) = dump {
        create_parent(&path)?;
        let ids: Vec<&str> = corpus.documents.iter().map(|d| d.id.as_str()).collect();
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for line in prediction_lines(&pairs, &ids, &taxonomy) {
            writeln!(w, "{}", serde_json::to_string(&line).expect("prediction serializes"))?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn gradcheck(common: &Common, flags: &Flags) -> Result<(), CliError> {
    let mut s = settings(common, flags);
    let seed = s.seed();
    let tol: f64 = s.get("tol", 1e-4);
    if !(tol.is_finite() && tol > 0.0) {
        s.problem(format!("tol: must be positive, got {tol}"));
    }
    let components: Vec<Component> = match s.raw("component").map(str::to_string) {
        None => Component::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .filter_map(|c| match c.parse() {
                Ok(c) => Some(c),
                Err(e) => {
                    s.problem(format!("component: {e}"));
                    None
                }
            })
            .collect(),
    };
    if components.is_empty() && s.raw("component").is_some() {
        s.problem("component: empty list");
    }
    let json = s.raw("json").map(std::path::PathBuf::from);
    s.finish()?;

    let suite = run_suite(seed, tol, &components)?;
    println!("seed {seed}, tolerance {tol:e}");
    println!("{:<10} {:>14} {:>8} {:>9}", "component", "max rel error", "result", "seconds");
    for c in &suite.components {
        println!(
            "{:<10} {:>14.3e} {:>8} {:>9.2}",
            c.component.name(),
            c.max_rel_error,
            if c.passed { "PASS" } else { "FAIL" },
            c.seconds
        );
    }
    if let Some(path) = json {
        write_json(&path, &suite)?;
    }
    if suite.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = suite.components.iter().filter(|c| !c.passed).map(|c| c.component.name()).collect();
        Err(CliError::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// Reads a predictions file keyed by document id.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<String>>, CliError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if out.insert(p.id.clone(), p.labels).is_some() {
            return Err(CliError::Data(format!("{} line {}: duplicate id `{}`", path.display(), i + 1, p.id)));
        }
    }
    Ok(out)
}

fn id_list(ids: &[String]) -> String {
    const SHOWN: usize = 5;
    let mut s = ids.iter().take(SHOWN).map(|i| format!("`{i}`")).collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(" and {} more", ids.len() - SHOWN));
    }
    s
}

pub fn metrics(common: &Common, flags: &Flags) -> Result<(), CliError> {
    let mut s = settings(common, flags);
    let taxonomy_path = s.input("taxonomy");
    let gold_path = s.input("gold");
    let pred_path = s.input("predictions");
    let json = s.raw("json").map(std::path::PathBuf::from);
    let options = read_eval_options(&mut s);
    s.finish()?;
    let (taxonomy_path, gold_path, pred_path) = (taxonomy_path.unwrap(), gold_path.unwrap(), pred_path.unwrap());

    let taxonomy = read_taxonomy(&taxonomy_path)?;
    let mut vocab = Vocab::new();
    let gold = load_corpus_file(&gold_path, &taxonomy, &mut vocab, VocabMode::Build, &LoadOptions::default())
        .map_err(data_err(&gold_path))?;
    let mut preds = read_predictions(&pred_path)?;
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(gold.documents.len());
    for doc in &gold.documents {
        match preds.remove(&doc.id) {
            Some(labels) => {
                let names: Vec<&str> = labels.iter().map(String::as_str).collect();
                let pred = taxonomy
                    .label_vector(&names)
                    .map_err(|e| CliError::Data(format!("{} id `{}`: {e}", pred_path.display(), doc.id)))?;
                pairs.push(EvalPair::new(doc.gold.clone(), pred));
            }
            None => missing.push(doc.id.clone()),
        }
    }
    let extra: Vec<String> = preds.into_keys().collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("{} gold ids without a prediction: {}", missing.len(), id_list(&missing)));
        }
        if !extra.is_empty() {
            parts.push(format!("{} predicted ids not in gold: {}", extra.len(), id_list(&extra)));
        }
        return Err(CliError::Data(format!("document ids do not match; {}", parts.join("; "))));
    }
    let rep = report(&pairs, &taxonomy, options)?;
    print!("{}", rep.to_table());
    if let Some(path) = json {
        write_json(&path, &rep)?;
    }
    Ok(())
}
