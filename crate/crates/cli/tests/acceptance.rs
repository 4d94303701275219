//! Acceptance suite. Each criterion is one test that writes a single
//! `acceptance criterion N [PASS|FAIL]` line straight to stdout (bypassing
//! the test harness capture) and then asserts its verdict.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Instant;

use hjcl_core::eval::{depth_accuracy, f1_scores, path_accuracy, report, EvalOptions, EvalPair, MetricsReport};
use hjcl_core::fixtures::{fig1_taxonomy, seven_label_taxonomy};
use hjcl_core::losses::{
    hilecon, supcon, total_loss, zlpr, ContrastiveBatch, LabelLossMode, LossOptions, LossWeights, Prefactor,
};
use hjcl_core::{Graph, LabelVector, MetricContext, NodeId, Taxonomy, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, title: &str, passed: bool, detail: &str) {
    let line = format!("acceptance criterion {n} [{}] {title}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(passed, "{}", line.trim_end());
}

fn hjcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjcl")).args(args).env_remove("HJCL_SEED").output().expect("binary runs")
}

fn hjcl_ok(args: &[&str]) -> Output {
    let out = hjcl(args);
    assert!(
        out.status.success(),
        "hjcl {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_report(path: &Path) -> MetricsReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_suite() {
    let dir = scratch("gradcheck");
    let json = dir.join("gradcheck.json");
    let start = Instant::now();
    let out = hjcl(&["gradcheck", "--json", s(&json)]);
    let seconds = start.elapsed().as_secs_f64();
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let errors: BTreeMap<String, f64> = value["components"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["component"].as_str().unwrap().to_string(), c["max_rel_error"].as_f64().unwrap()))
        .collect();
    let expected = ["hilecon", "instance", "supcon", "total", "zlpr"];
    let all_present = expected.iter().all(|c| errors.contains_key(*c));
    let worst = errors.values().copied().fold(0.0, f64::max);
    let passed = out.status.success() && all_present && worst < 1e-4 && seconds < 30.0;
    let listed: Vec<String> = errors.iter().map(|(k, v)| format!("{k} {v:.2e}")).collect();
    verdict(
        1,
        "gradient suite",
        passed,
        &format!("max relative error {worst:.2e} (< 1e-4) [{}]; {seconds:.1} s (< 30 s)", listed.join(", ")),
    );
}

// ---------------------------------------------------------------- 2

/// Bitmask-based reference metrics computed from a parent array.
struct MaskTaxonomy {
    n: usize,
    parent: Vec<Option<usize>>,
}

impl MaskTaxonomy {
    fn closure(&self, mask: u32) -> u32 {
        let mut out = mask;
        for k in 0..self.n {
            if mask >> k & 1 == 1 {
                let mut p = self.parent[k];
                while let Some(q) = p {
                    out |= 1 << q;
                    p = self.parent[q];
                }
            }
        }
        out
    }

    /// Chains of a closed set as masks, one per member without a member child.
    fn chains(&self, set: u32) -> Vec<u32> {
        (0..self.n)
            .filter(|&k| set >> k & 1 == 1 && !(0..self.n).any(|c| set >> c & 1 == 1 && self.parent[c] == Some(k)))
            .map(|leaf| self.closure(1 << leaf))
            .collect()
    }
}

#[derive(Debug, PartialEq)]
struct Tally {
    micro: f64,
    macro_: f64,
    acc_p: f64,
    acc_d: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn tally(t: &MaskTaxonomy, pairs: &[(u32, u32)]) -> Tally {
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let mut macro_sum = 0.0;
    for k in 0..t.n {
        let bit = |m: u32| m >> k & 1 == 1;
        let tp = pairs.iter().filter(|(g, p)| bit(*g) && bit(*p)).count();
        let fp = pairs.iter().filter(|(g, p)| !bit(*g) && bit(*p)).count();
        let fn_ = pairs.iter().filter(|(g, p)| bit(*g) && !bit(*p)).count();
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        macro_sum += f1(tp, fp, fn_);
    }
    let (mut consistent, mut hit, mut total) = (0, 0, 0);
    for &(g, p) in pairs {
        let inter = g & p;
        let gold_chains = t.chains(g);
        if gold_chains.len() == t.chains(t.closure(inter)).len() {
            consistent += 1;
        }
        total += gold_chains.len();
        hit += gold_chains.iter().filter(|&&c| c & inter == c).count();
    }
    Tally {
        micro: f1(tp_all, fp_all, fn_all),
        macro_: macro_sum / t.n as f64,
        acc_p: consistent as f64 / pairs.len() as f64,
        acc_d: if total == 0 { 0.0 } else { hit as f64 / total as f64 },
    }
}

fn library(t: &Taxonomy, pairs: &[EvalPair]) -> Tally {
    let f = f1_scores(pairs);
    Tally {
        micro: f.micro,
        macro_: f.macro_,
        acc_p: path_accuracy(pairs, t, EvalOptions::default()).unwrap(),
        acc_d: depth_accuracy(pairs, t).unwrap(),
    }
}

/// Every parent array where label `k` hangs from the root or an earlier
/// label; this reaches every forest shape on `n` labels.
fn parent_arrays(n: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = vec![Vec::new()];
    for k in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<Option<usize>>| {
                std::iter::once(None).chain((0..k).map(Some)).map(move |p| {
                    let mut v = prefix.clone();
                    v.push(p);
                    v
                })
            })
            .collect();
    }
    out
}

#[test]
fn criterion_2_metric_oracles_exhaustive() {
    let start = Instant::now();
    let (mut taxonomies, mut pair_checks, mut mismatches) = (0usize, 0usize, Vec::new());
    for n in 1..=6 {
        for parent in parent_arrays(n) {
            taxonomies += 1;
            let labels: Vec<String> = (0..n).map(|k| format!("l{k}")).collect();
            let t = Taxonomy::from_parents(labels, parent.clone()).unwrap();
            let mt = MaskTaxonomy { n, parent };
            let vec_of = |m: u32| LabelVector::from_mask(n, m as u64);
            let closed: Vec<u32> = (0..1u32 << n).filter(|&m| mt.closure(m) == m).collect();
            let mut all_pairs = Vec::new();
            let mut all_eval = Vec::new();
            for &g in &closed {
                for p in 0..1u32 << n {
                    let pair = EvalPair::new(vec_of(g), vec_of(p));
                    let got = library(&t, std::slice::from_ref(&pair));
                    let want = tally(&mt, &[(g, p)]);
                    pair_checks += 1;
                    if got != want && mismatches.len() < 5 {
                        mismatches.push(format!("n={n} {:?} gold {g:b} pred {p:b}: {got:?} vs {want:?}", mt.parent));
                    }
                    all_pairs.push((g, p));
                    all_eval.push(pair);
                }
            }
            // the whole grid as one corpus exercises the aggregate counts
            let got = library(&t, &all_eval);
            let want = tally(&mt, &all_pairs);
            let r = report(&all_eval, &t, EvalOptions::default()).unwrap();
            let from_report =
                Tally { micro: r.micro_f1, macro_: r.macro_f1, acc_p: r.path_accuracy, acc_d: r.depth_accuracy };
            if (got != want || from_report != want) && mismatches.len() < 5 {
                mismatches.push(format!("n={n} {:?} corpus: {got:?} vs {want:?}", mt.parent));
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let passed = mismatches.is_empty() && seconds < 60.0;
    let mut detail =
        format!("{taxonomies} taxonomies, {pair_checks} (gold, pred) pairs, exact match; {seconds:.1} s (< 60 s)");
    if !mismatches.is_empty() {
        detail.push_str(&format!("; mismatches: {}", mismatches.join(" | ")));
    }
    verdict(2, "metric oracles", passed, &detail);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_distance_fidelity() {
    let t = fig1_taxonomy();
    let ctx = MetricContext::new(&t);
    let v = |names: &[&str]| t.label_vector(names).unwrap();
    let weight = |name: &str| ctx.level_weight(t.index_of(name).unwrap());
    let (news, classifields, france) = (weight("News"), weight("Classifields"), weight("France"));
    let per_top = ctx.rho(&v(&["News"]), &v(&[])).unwrap();
    let per_deep = ctx.rho(&v(&["News", "World", "Countries"]), &v(&["News", "World", "Countries", "France"])).unwrap();
    let passed =
        t.max_depth() == 4 && news == 4.0 && classifields == 4.0 && france == 1.0 && per_top == 4.0 && per_deep == 1.0;
    verdict(
        3,
        "distance fidelity",
        passed,
        &format!(
            "{} levels; coordinate weights News {news}, Classifields {classifields}, France {france}; one level-1 disagreement {per_top}, one level-4 disagreement {per_deep}",
            t.max_depth()
        ),
    );
}

// ---------------------------------------------------------------- 4

type Emb = Vec<Vec<Vec<f64>>>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_emb(rng: &mut ChaCha8Rng, b: usize, n: usize, d: usize) -> Emb {
    (0..b).map(|_| (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()).collect()
}

fn bind(g: &mut Graph, z: &Emb) -> Vec<NodeId> {
    z.iter().map(|s| g.constant(Tensor::from_rows(s).unwrap())).collect()
}

fn vectors(gold: &[Vec<usize>], n: usize) -> Vec<LabelVector> {
    gold.iter().map(|g| LabelVector::from_indices(n, g)).collect()
}

/// Supervised contrastive loss evaluated directly: every gold-label
/// embedding is an anchor, positives share its label in other samples, and
/// every other gold-label embedding enters the denominator.
fn supcon_reference(z: &Emb, gold: &[Vec<usize>], tau: f64) -> f64 {
    let anchors: Vec<(usize, usize)> =
        gold.iter().enumerate().flat_map(|(i, g)| g.iter().map(move |&j| (i, j))).collect();
    let f = |a: (usize, usize), b: (usize, usize)| (dot(&z[a.0][a.1], &z[b.0][b.1]) / tau).exp();
    let mut total = 0.0;
    for &a in &anchors {
        let pos: Vec<_> = anchors.iter().copied().filter(|&x| x.1 == a.1 && x.0 != a.0).collect();
        if pos.is_empty() {
            continue;
        }
        let den: f64 = anchors.iter().copied().filter(|&x| x != a).map(|x| f(a, x)).sum();
        total += -pos.iter().map(|&p| (f(a, p) / den).ln()).sum::<f64>() / pos.len() as f64;
    }
    total
}

struct Fixture {
    taxonomy: Taxonomy,
    z: Emb,
    gold: Vec<Vec<usize>>,
    logits: Vec<Vec<f64>>,
}

fn fixture(seed: u64) -> Fixture {
    let taxonomy = seven_label_taxonomy();
    let n = taxonomy.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: [&[&str]; 4] =
        [&["a", "a1", "a1x"], &["a", "a1", "a1x", "b", "b1"], &["a", "a2"], &["a", "a1", "b", "b1", "b1x"]];
    let gold = names.iter().map(|g| taxonomy.label_vector(g).unwrap().ones_indices()).collect();
    let z = random_emb(&mut rng, 4, n, 6);
    let logits = (0..4).map(|_| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    Fixture { taxonomy, z, gold, logits }
}

/// (a) label mode `supcon` reproduces the direct evaluation.
fn law_supcon() -> (bool, String) {
    let t = Taxonomy::parse("a\tROOT\nb\tROOT\na1\ta\na2\ta\n").unwrap();
    let ctx = MetricContext::new(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let gold = vec![vec![0, 2], vec![0, 3], vec![0, 2, 1], vec![1]];
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let z = random_emb(&mut rng, 4, 4, 5);
        let mut g = Graph::new();
        let ids = bind(&mut g, &z);
        let y = vectors(&gold, 4);
        let batch = ContrastiveBatch::new(&ids, &y).unwrap();
        let id = hilecon(&mut g, &batch, 0.1, &ctx, LabelLossMode::Supcon, Prefactor::Anchors).unwrap();
        let got = g.value(id).item();
        let direct = supcon(&mut g, &batch, 0.1).unwrap();
        worst = worst.max((got - supcon_reference(&z, &gold, 0.1)).abs()).max((got - g.value(direct).item()).abs());
    }
    (worst <= 1e-9, format!("(a) supcon mode vs direct {worst:.1e}"))
}

/// (b) on a one-level taxonomy both distances coincide.
fn law_flat() -> (bool, String) {
    let t = Taxonomy::parse("p\tROOT\nq\tROOT\nr\tROOT\ns\tROOT\nu\tROOT\n").unwrap();
    let ctx = MetricContext::new(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut checked, mut equal) = (0, 0);
    while checked < 30 {
        let gold: Vec<Vec<usize>> = (0..5).map(|_| (0..5).filter(|_| rng.gen_bool(0.5)).collect()).collect();
        if gold.iter().all(Vec::is_empty) {
            continue;
        }
        let z = random_emb(&mut rng, 5, 5, 4);
        let mut g = Graph::new();
        let ids = bind(&mut g, &z);
        let y = vectors(&gold, 5);
        let batch = ContrastiveBatch::new(&ids, &y).unwrap();
        let a = hilecon(&mut g, &batch, 0.1, &ctx, LabelLossMode::Hilecon, Prefactor::Anchors).unwrap();
        let b = hilecon(&mut g, &batch, 0.1, &ctx, LabelLossMode::Lecon, Prefactor::Anchors).unwrap();
        checked += 1;
        if g.value(a).item().to_bits() == g.value(b).item().to_bits() {
            equal += 1;
        }
    }
    (equal == checked, format!("(b) one-level hierarchical == Hamming {equal}/{checked} bit-identical"))
}

/// (c) reordering the samples of a batch leaves every loss unchanged.
fn law_permutation() -> (bool, String) {
    let fx = fixture(43);
    let n = fx.taxonomy.len();
    let ctx = MetricContext::new(&fx.taxonomy);
    let eval = |order: &[usize]| -> Vec<f64> {
        let z: Emb = order.iter().map(|&i| fx.z[i].clone()).collect();
        let gold: Vec<Vec<usize>> = order.iter().map(|&i| fx.gold[i].clone()).collect();
        let mut g = Graph::new();
        let ids = bind(&mut g, &z);
        let y = vectors(&gold, n);
        let batch = ContrastiveBatch::new(&ids, &y).unwrap();
        let logits: Vec<NodeId> = order.iter().map(|&i| g.constant(Tensor::col(&fx.logits[i]))).collect();
        let mut out = Vec::new();
        for mode in [LabelLossMode::Hilecon, LabelLossMode::Lecon, LabelLossMode::Supcon] {
            let weights = LossWeights { mode, ..Default::default() };
            let nodes =
                total_loss(&mut g, &batch, &logits, &weights, &ctx, &fx.taxonomy, &LossOptions::default()).unwrap();
            let ids = [nodes.total, nodes.classification, nodes.instance.unwrap(), nodes.label.unwrap()];
            out.extend(ids.map(|id| g.value(id).item()));
        }
        out
    };
    let base = eval(&[0, 1, 2, 3]);
    let mut worst: f64 = 0.0;
    let mut orders = 0;
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let order = [a, b, c, d];
                    let mut seen = order;
                    seen.sort_unstable();
                    if seen != [0, 1, 2, 3] {
                        continue;
                    }
                    orders += 1;
                    for (x, y) in base.iter().zip(eval(&order)) {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
    }
    (worst <= 1e-9, format!("(c) {orders} sample orders, max change {worst:.1e}"))
}

/// (d) with both contrastive weights zero the total is the mean ranking loss.
fn law_zero_weights() -> (bool, String) {
    let fx = fixture(44);
    let n = fx.taxonomy.len();
    let ctx = MetricContext::new(&fx.taxonomy);
    let mut g = Graph::new();
    let ids = bind(&mut g, &fx.z);
    let y = vectors(&fx.gold, n);
    let batch = ContrastiveBatch::new(&ids, &y).unwrap();
    let logits: Vec<NodeId> = fx.logits.iter().map(|s| g.constant(Tensor::col(s))).collect();
    let weights = LossWeights { lambda1: 0.0, lambda2: 0.0, ..Default::default() };
    let nodes = total_loss(&mut g, &batch, &logits, &weights, &ctx, &fx.taxonomy, &LossOptions::default()).unwrap();
    let total = g.value(nodes.total).item();

    let mut h = Graph::new();
    let per: Vec<f64> = fx
        .logits
        .iter()
        .zip(&y)
        .map(|(s, y)| {
            let s = h.constant(Tensor::col(s));
            let id = zlpr(&mut h, s, y).unwrap();
            h.value(id).item()
        })
        .collect();
    let mean = per.iter().fold(0.0, |acc, v| acc + v) / per.len() as f64;
    let passed = total.to_bits() == mean.to_bits() && nodes.instance.is_none() && nodes.label.is_none();
    (passed, format!("(d) total {total:?} vs mean ranking loss {mean:?}"))
}

#[test]
fn criterion_4_loss_laws() {
    let laws = [law_supcon(), law_flat(), law_permutation(), law_zero_weights()];
    let passed = laws.iter().all(|l| l.0);
    let detail: Vec<String> = laws.iter().map(|l| format!("{} {}", l.1, if l.0 { "ok" } else { "FAILED" })).collect();
    verdict(4, "loss laws", passed, &detail.join("; "));
}

// ---------------------------------------------------------------- 5 and 6

const SEEDS: [u64; 3] = [42, 43, 44];

struct TrainedRun {
    val: MetricsReport,
    test: MetricsReport,
    epochs: usize,
    seconds: f64,
}

/// The default corpus (seed 42) trained at default settings and with both
/// contrastive weights zero, for each seed in [`SEEDS`].
fn pipeline_runs() -> &'static BTreeMap<(u64, bool), TrainedRun> {
    static RUNS: OnceLock<BTreeMap<(u64, bool), TrainedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let root = scratch("pipeline");
        let data = root.join("data");
        hjcl_ok(&["synth", "--out", s(&data)]);
        let (tax, train, val, test) =
            (data.join("taxonomy.tsv"), data.join("train.jsonl"), data.join("val.jsonl"), data.join("test.jsonl"));
        let mut runs = BTreeMap::new();
        for seed in SEEDS {
            for contrastive in [true, false] {
                let out = root.join(format!("seed{seed}_{}", if contrastive { "default" } else { "no_contrastive" }));
                let seed_s = seed.to_string();
                let mut args =
                    vec!["train", "--taxonomy", s(&tax), "--train", s(&train), "--val", s(&val), "--out", s(&out)];
                args.extend(["--seed", &seed_s]);
                if !contrastive {
                    args.extend(["--lambda1", "0", "--lambda2", "0"]);
                }
                let start = Instant::now();
                hjcl_ok(&args);
                let seconds = start.elapsed().as_secs_f64();
                let json = out.join("test_metrics.json");
                let ck = out.join("checkpoint.hjcl");
                hjcl_ok(&["eval", "--checkpoint", s(&ck), "--taxonomy", s(&tax), "--corpus", s(&test), "--json", s(&json)]);
                let epochs = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap().lines().count();
                let run = TrainedRun { val: read_report(&out.join("val_metrics.json")), test: read_report(&json), epochs, seconds };
                let mut out = std::io::stdout().lock();
                let _ = writeln!(
                    out,
                    "  pipeline seed {seed} contrastive {contrastive}: {} epochs, {:.0} s, val Macro-F1 {:.4}, test Macro-F1 {:.4}, test Acc_P {:.4}",
                    run.epochs, run.seconds, run.val.macro_f1, run.test.macro_f1, run.test.path_accuracy
                );
                runs.insert((seed, contrastive), run);
            }
        }
        runs
    })
}

#[test]
fn criterion_5_end_to_end_learning() {
    let run = &pipeline_runs()[&(42, true)];
    let passed = run.val.macro_f1 >= 0.80 && run.test.path_accuracy >= 0.70 && run.epochs <= 50 && run.seconds < 900.0;
    verdict(
        5,
        "end-to-end learning at default settings",
        passed,
        &format!(
            "val Macro-F1 {:.4} (>= 0.80), test Acc_P {:.4} (>= 0.70), {} epochs (<= 50), {:.0} s (< 900 s)",
            run.val.macro_f1, run.test.path_accuracy, run.epochs, run.seconds
        ),
    );
}

#[test]
fn criterion_6_ablation_direction() {
    let runs = pipeline_runs();
    let mean = |contrastive: bool| SEEDS.iter().map(|&s| runs[&(s, contrastive)].test.macro_f1).sum::<f64>() / 3.0;
    let (with, without) = (mean(true), mean(false));
    let per_seed: Vec<String> = SEEDS
        .iter()
        .map(|&s| format!("seed {s}: {:.4} vs {:.4}", runs[&(s, true)].test.macro_f1, runs[&(s, false)].test.macro_f1))
        .collect();
    verdict(
        6,
        "contrastive terms do not hurt",
        with >= without - 0.01,
        &format!(
            "mean test Macro-F1 defaults {with:.4} vs zero contrastive weights {without:.4} (need >= {:.4}); {}",
            without - 0.01,
            per_seed.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_determinism() {
    let root = scratch("determinism");
    let data = root.join("data");
    hjcl_ok(&["synth", "--out", s(&data), "--depth", "2", "--train-docs", "300"]);
    let cfg = root.join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "taxonomy = {}\ntrain = {}\nval = {}\nseed = 7\nlr = 0.001\nmax_epochs = 4\nbatch_size = 32\ndim = 16\nheads = 2\n",
            s(&data.join("taxonomy.tsv")),
            s(&data.join("train.jsonl")),
            s(&data.join("val.jsonl"))
        ),
    )
    .unwrap();
    let (a, b) = (root.join("a"), root.join("b"));
    for out in [&a, &b] {
        hjcl_ok(&["train", "--config", s(&cfg), "--out", s(out)]);
    }
    let files = ["train_log.jsonl", "checkpoint.hjcl", "val_metrics.json"];
    let same: Vec<bool> =
        files.iter().map(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap()).collect();
    let lines = std::fs::read_to_string(a.join("train_log.jsonl")).unwrap().lines().count();
    let detail: Vec<String> =
        files.iter().zip(&same).map(|(f, ok)| format!("{f} {}", if *ok { "identical" } else { "DIFFERS" })).collect();
    verdict(
        7,
        "determinism",
        same.iter().all(|&x| x) && lines == 4,
        &format!("two runs, {lines} logged epochs: {}", detail.join(", ")),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_ranking_loss_spot_values() {
    let mut g = Graph::new();
    let s0 = g.constant(Tensor::col(&[0.0]));
    let id = zlpr(&mut g, s0, &LabelVector::ones(1)).unwrap();
    let one = g.value(id).item();
    let s1 = g.constant(Tensor::col(&[10.0, -10.0]));
    let id = zlpr(&mut g, s1, &LabelVector::from_indices(2, &[0])).unwrap();
    let two = g.value(id).item();
    let want_one = std::f64::consts::LN_2;
    let want_two = 2.0 * (1.0 + (-10.0f64).exp()).ln();
    let (e1, e2) = ((one - want_one).abs(), (two - want_two).abs());
    verdict(
        8,
        "ranking loss spot values",
        e1 <= 1e-12 && e2 <= 1e-12,
        &format!("single positive at 0: {one:.15} (ln 2, err {e1:.1e}); +10/-10: {two:.15e} (err {e2:.1e})"),
    );
}
