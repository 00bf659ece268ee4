//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 6 to 10 train full-size synthetic experiments for three
//! seeds and take roughly half an hour on one core.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;

use common::*;
use textinv::attack::{
    cross_entropy_loss, modified_entropy_loss, run_attack_suite, tr_attack, vtg_generate, AttackConfig, AttackModels,
    Method,
};
use textinv::corpus::{extract_templates, kendall_topk, ranking::KENDALL_PENALTY, Template};
use textinv::eval::{lcs_len, match_ground_truth, pca_project, recovery_rate, MetricsReport};
use textinv::modeling::{ArchConfig, ClassifierModel};
use textinv::runner::pipeline::{
    attack_suite, build_templates, memorization, prepare, report, train_attack_generator, train_models, train_target,
    MemorizationReport, Models,
};
use textinv::runner::table::ablation_with_models;
use textinv::runner::{ExperimentConfig, GeneratorCorpus, ModelSize, TrainSpec};

const SEEDS: [u64; 3] = [0, 1, 2];
const FRACTIONS: [f64; 4] = [0.3, 0.5, 0.7, 1.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Between 1 and `max_len` distinct ids below `universe`, in random order.
fn distinct_ids(r: &mut rand_chacha::ChaCha8Rng, universe: u32, max_len: usize) -> Vec<u32> {
    let mut pool: Vec<u32> = (0..universe).collect();
    let n = r.random_range(1..=max_len);
    (0..n)
        .map(|_| pool.swap_remove(r.random_range(0..pool.len())))
        .collect()
}

fn oracle_suite() -> Outcome {
    let start = Instant::now();
    let mut set_mismatches = 0usize;
    let mut dev: f64 = 0.0;

    for seed in 0..5 {
        let (vocab, ds) = random_corpus(&mut rng(seed), 120 + 70 * seed as usize, 8, 8);
        let texts: Vec<Vec<usize>> = ds.texts().map(<[usize]>::to_vec).collect();
        for (n_min, n_max, min_freq) in [(1, 1, 1), (2, 3, 3), (3, 8, 2), (1, 4, 10)] {
            let got: BTreeSet<_> = extract_templates(&ds, &vocab, n_min, n_max, min_freq)
                .unwrap()
                .into_iter()
                .map(|t| (t.tokens, t.frequency))
                .collect();
            set_mismatches += (got != ngram_oracle(&texts, n_min, n_max, min_freq)) as usize;
        }
    }

    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let (vocab, ds) = random_corpus(&mut r, 150, 6, 40);
        let private: Vec<Vec<usize>> = ds.texts().map(<[usize]>::to_vec).collect();
        let (_, other) = random_corpus(&mut r, 30, 6, 40);
        let inv: Vec<Vec<usize>> = other
            .texts()
            .map(|t| t.iter().map(|&x| x % vocab.len()).collect())
            .collect();
        let texts: Vec<_> = inv.iter().map(|t| inverted(t.clone(), 0)).collect();
        let got = recovery_rate(&texts, &ds, &vocab).unwrap();
        dev = dev.max((got - recovery_oracle(&inv, &private, &vocab)).abs());
    }

    let mut r = rng(7);
    for _ in 0..2000 {
        let a = distinct_ids(&mut r, 30, 14);
        let b = distinct_ids(&mut r, 30, 14);
        let k = r.random_range(1..=a.len().max(b.len()));
        let got = kendall_topk(&a, &b, k).unwrap();
        dev = dev.max((got - kendall_oracle(&a, &b, k, KENDALL_PENALTY)).abs());
    }

    let mut r = rng(9);
    let (_, ds) = random_corpus(&mut r, 60, 20, 5);
    let (_, q) = random_corpus(&mut r, 20, 20, 5);
    for t in q.texts() {
        let best = ds
            .texts()
            .enumerate()
            .map(|(i, p)| (lcs_oracle(t, p), std::cmp::Reverse(i)))
            .max()
            .unwrap();
        let got = match_ground_truth(&inverted(t.to_vec(), 0), &ds).unwrap();
        set_mismatches += (got != (best.1 .0, best.0)) as usize;
        for p in ds.texts().take(5) {
            set_mismatches += (lcs_len(t, p) != lcs_oracle(t, p)) as usize;
        }
    }

    let (vocab, ds) = random_corpus(&mut rng(4), 80, 10, 30);
    let c = ClassifierModel::new(ArchConfig::tiny(), &vocab, 3, 1).unwrap();
    let texts: Vec<Vec<usize>> = ds.texts().map(<[usize]>::to_vec).collect();
    for dim in [1, 2, 5] {
        let got = pca_project(&texts, &c, dim).unwrap();
        let want = pca_oracle(&texts, &c, dim);
        for (g, w) in got.iter().zip(&want) {
            dev = dev.max(max_of(g.iter().zip(w).map(|(a, b)| (a - b).abs())));
        }
    }

    let secs = start.elapsed().as_secs_f64();
    outcome(
        set_mismatches == 0 && dev <= 1e-9 && secs < 60.0,
        format!("exact mismatches {set_mismatches}, max deviation {dev:.1e}, {secs:.1}s"),
    )
}

fn losses() -> Outcome {
    let ln4 = 4f64.ln();
    let hand = [
        (cross_entropy_loss(&[0.0, 1.0, 0.0], 1), 0.0),
        (cross_entropy_loss(&[0.25; 4], 2), ln4),
        (cross_entropy_loss(&[0.7, 0.2, 0.1], 1), 5f64.ln()),
        (modified_entropy_loss(&[0.0, 1.0, 0.0], 1), 0.0),
        (modified_entropy_loss(&[0.5, 0.5], 0), 2f64.ln()),
        (
            modified_entropy_loss(&[0.7, 0.2, 0.1], 0),
            -(0.3 * 0.7f64.ln()) - 0.2 * 0.8f64.ln() - 0.1 * 0.9f64.ln(),
        ),
    ];
    let hand_dev = max_of(hand.iter().map(|(a, b)| (a - b).abs()));
    let mut r = rng(3);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..8);
        let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let a = r.random_range(0..n);
        // move a fraction t of the remaining mass onto class a
        let t = r.random_range(0.05..0.95);
        let pa = p[a] + t * (1.0 - p[a]);
        let q: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(i, &x)| if i == a { pa } else { x * (1.0 - pa) / (1.0 - p[a]) })
            .collect();
        violations += (modified_entropy_loss(&q, a) >= modified_entropy_loss(&p, a)) as usize;
    }
    outcome(
        hand_dev <= 1e-6 && violations == 0,
        format!("hand-value deviation {hand_dev:.1e}, monotonicity violations {violations}/1000"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let state = gradcheck::state_gradient_check(2);
    let emb = gradcheck::embedding_gradient_errors(1);
    let (ws, we) = (max_of(state.errors.iter().copied()), max_of(emb.iter().copied()));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ws < 1e-2 && we < 1e-2 && state.window_respected && secs < 120.0,
        format!(
            "state max rel err {ws:.2e} (directional, 20 states), embedding max rel err {we:.2e} (20 inputs), {secs:.1}s"
        ),
    )
}

fn toy_templates(t: &Toy, n: usize) -> Vec<Template> {
    let mut out = extract_templates(&t.split.public, &t.vocab, 2, 4, 5).unwrap();
    out.truncate(n);
    out
}

fn reduction(t: &Toy) -> Outcome {
    let templates = toy_templates(t, 20);
    let mut same = 0;
    for (i, tpl) in templates.iter().enumerate() {
        let cfg = AttackConfig {
            step_size: 0.0,
            max_len: t.split.private.avg_len(),
            seed: 1000 + i as u64,
            target_label: i % t.classifier.num_classes,
            ..AttackConfig::default()
        };
        let tr = tr_attack(&t.generator, &t.classifier, tpl, &cfg).unwrap();
        let vtg = vtg_generate(
            &t.generator,
            &t.classifier,
            tpl,
            t.split.sealed_public(),
            &t.vocab,
            &cfg,
        )
        .unwrap();
        same += (tr.tokens == vtg.tokens) as usize;
    }
    outcome(
        templates.len() == 20 && same == 20,
        format!("{same}/{} templates token-identical", templates.len()),
    )
}

fn monotone_steps(t: &Toy) -> Outcome {
    let templates = toy_templates(t, 10);
    let cfg = AttackConfig {
        method: Method::Tr,
        max_len: t.split.private.avg_len(),
        seed: 11,
        ..AttackConfig::calibrated()
    };
    let models = AttackModels {
        generator: &t.generator,
        classifier: &t.classifier,
        labeled_public: None,
        vocab: &t.vocab,
    };
    let out = run_attack_suite(&models, &templates, &cfg).unwrap();
    let mut steps = 0;
    let mut worst = f64::NEG_INFINITY;
    for x in &out.texts {
        for (post, pre) in x.loss_trace.iter().zip(&x.pre_loss_trace) {
            steps += 1;
            worst = worst.max(post - pre);
        }
    }
    outcome(
        out.failures.is_empty() && steps > 0 && worst <= 1e-6,
        format!(
            "{} texts, {steps} steps, max(post - pre) {worst:.2e}, {} failures",
            out.texts.len(),
            out.failures.len()
        ),
    )
}

/// Everything criteria 6 to 10 need from one seed.
struct SeedRun {
    main: Vec<MetricsReport>,
    main_secs: f64,
    memo: MemorizationReport,
    ablation_acc: Vec<f64>,
    generic_rr: f64,
    large_rr: f64,
}

fn seed_run(seed: u64) -> SeedRun {
    let cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let prep = prepare(&cfg).unwrap();
    let models = train_models(&cfg, &prep).unwrap();
    let templates = build_templates(&cfg, &prep, 1.0).unwrap();
    let suite = |m: &Models, method| {
        let out = attack_suite(&cfg, &prep, &m.generator, &m.target, &templates, method).unwrap();
        report(&cfg, &prep, m, method, &out).unwrap()
    };
    let main: Vec<MetricsReport> = [Method::Tr, Method::Vtg, Method::Vmi]
        .into_iter()
        .map(|m| suite(&models, m))
        .collect();
    let main_secs = start.elapsed().as_secs_f64();
    for r in &main {
        eprintln!(
            "  seed {seed} {:?}: RR {:.2} Acc {:.2} PLL {:.2}",
            r.method, r.recovery_rate, r.attack_accuracy, r.fluency
        );
    }

    let memo = memorization(&cfg, &prep, &models.target).unwrap();

    let rows = ablation_with_models(&cfg, &prep, &models, &FRACTIONS[..3]).unwrap();
    let mut ablation_acc: Vec<f64> = rows.iter().map(|r| r.attack_accuracy).collect();
    ablation_acc.push(main[0].attack_accuracy);
    eprintln!("  seed {seed} ablation acc {ablation_acc:?}");

    let generic_cfg = ExperimentConfig {
        generator_corpus: GeneratorCorpus::Generic { examples: 2400 },
        ..cfg.clone()
    };
    let generic_prep = prepare(&generic_cfg).unwrap();
    assert_eq!(generic_prep.vocab.hash(), prep.vocab.hash());
    let generic = Models {
        target: models.target.clone(),
        generator: train_attack_generator(&generic_cfg, &generic_prep).unwrap(),
        eval: models.eval.clone(),
    };
    let generic_rr = suite(&generic, Method::Tr).recovery_rate;

    let large_cfg = ExperimentConfig {
        target: TrainSpec::new(ModelSize::Large, cfg.target.epochs),
        ..cfg.clone()
    };
    let large = Models {
        target: train_target(&large_cfg, &prep).unwrap(),
        generator: models.generator,
        eval: models.eval,
    };
    let large_rr = suite(&large, Method::Tr).recovery_rate;
    eprintln!("  seed {seed} generic-generator RR {generic_rr:.2}, large-target RR {large_rr:.2}");

    SeedRun {
        main,
        main_secs,
        memo,
        ablation_acc,
        generic_rr,
        large_rr,
    }
}

fn table_trend(runs: &[SeedRun]) -> Outcome {
    let avg = |i: usize, f: fn(&MetricsReport) -> f64| mean(&runs.iter().map(|r| f(&r.main[i])).collect::<Vec<_>>());
    let rr = [0, 1, 2].map(|i| avg(i, |r| r.recovery_rate));
    let acc = [0, 1, 2].map(|i| avg(i, |r| r.attack_accuracy));
    let pll = [0, 1, 2].map(|i| avg(i, |r| r.fluency));
    let secs: f64 = runs.iter().map(|r| r.main_secs).sum();
    let pass = rr[0] > rr[1] && rr[1] > rr[2] && acc[0] > acc[1].max(acc[2]) && pll[2] > 5.0 * pll[0] && secs < 1800.0;
    outcome(
        pass,
        format!(
            "RR TR {:.2} VTG {:.2} VMI {:.2}; Acc TR {:.2} VTG {:.2} VMI {:.2}; PLL TR {:.2} VMI {:.2}; {:.0}s",
            rr[0], rr[1], rr[2], acc[0], acc[1], acc[2], pll[0], pll[2], secs
        ),
    )
}

fn generator_trend(runs: &[SeedRun]) -> Outcome {
    let public = mean(&runs.iter().map(|r| r.main[0].recovery_rate).collect::<Vec<_>>());
    let generic = mean(&runs.iter().map(|r| r.generic_rr).collect::<Vec<_>>());
    outcome(
        public >= generic,
        format!("TR RR public generator {public:.2}, generic generator {generic:.2}"),
    )
}

fn template_trend(runs: &[SeedRun]) -> Outcome {
    let acc: Vec<f64> = (0..FRACTIONS.len())
        .map(|i| mean(&runs.iter().map(|r| r.ablation_acc[i]).collect::<Vec<_>>()))
        .collect();
    let pass = acc.windows(2).all(|w| w[1] >= w[0] - 2.0);
    let shown: Vec<String> = FRACTIONS
        .iter()
        .zip(&acc)
        .map(|(f, a)| format!("{f}: {a:.2}"))
        .collect();
    outcome(pass, format!("TR Acc by template fraction {}", shown.join(", ")))
}

fn memorization_trend(runs: &[SeedRun]) -> Outcome {
    let trained = mean(&runs.iter().map(|r| r.memo.trained.gap()).collect::<Vec<_>>());
    let untrained = mean(&runs.iter().map(|r| r.memo.untrained.gap()).collect::<Vec<_>>());
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.1}/{:.1}", r.memo.trained.gap(), r.memo.untrained.gap()))
        .collect();
    outcome(
        trained >= 5.0 && untrained.abs() <= 3.0,
        format!(
            "gap trained {trained:.2}, untrained {untrained:.2} (per seed trained/untrained {})",
            per_seed.join(" ")
        ),
    )
}

fn size_trend(runs: &[SeedRun]) -> Outcome {
    let small = mean(&runs.iter().map(|r| r.main[0].recovery_rate).collect::<Vec<_>>());
    let large = mean(&runs.iter().map(|r| r.large_rr).collect::<Vec<_>>());
    outcome(
        large >= small,
        format!("TR RR large target {large:.2}, small target {small:.2}"),
    )
}

const SMALL_RUN: &str = r#"{
  "dataset": {"kind": "synthetic", "examples": 600, "background_vocab": 200},
  "target": {"size": "small", "epochs": 3},
  "generator": {"size": "small", "epochs": 3},
  "eval": {"classifier": {"size": "small", "epochs": 3}},
  "templates": {"max_templates": 4, "min_freq": 5},
  "methods": ["tr", "vtg", "vmi", "gumbel"],
  "attack": {"gumbel_epochs": 5, "vmi_epochs": 10},
  "plots": true
}"#;

fn run_all(cfg: &Path, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_textinv"))
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .arg("--deterministic")
        .arg("run-all")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn single_dir(out: &Path) -> std::path::PathBuf {
    fs::read_dir(out).unwrap().next().unwrap().unwrap().path()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        if let Err(e) = run_all(&cfg, out) {
            return outcome(false, format!("run-all failed: {e}"));
        }
    }
    let (da, db) = (single_dir(&a), single_dir(&b));
    let mut files = 0;
    let mut differing = Vec::new();
    for entry in fs::read_dir(da.join("reports")).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_owned();
        let read = |d: &Path| -> Option<serde_json::Value> {
            serde_json::from_str(&fs::read_to_string(d.join("reports").join(&name)).ok()?).ok()
        };
        let (ja, jb) = (read(&da), read(&db));
        files += 1;
        let same = match (&ja, &jb) {
            (Some(serde_json::Value::Object(x)), Some(serde_json::Value::Object(y))) => {
                x.len() == y.len() && x.iter().all(|(k, v)| y.get(k) == Some(v))
            }
            _ => false,
        };
        if !same {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    let tables_equal = fs::read(da.join("table.csv")).ok() == fs::read(db.join("table.csv")).ok();
    outcome(
        files >= 5 && differing.is_empty() && tables_equal,
        format!(
            "{files} report files compared field by field, differing {differing:?}, table.csv identical {tables_equal}"
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |n: usize, o: Outcome| {
        println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };

    record(1, oracle_suite());
    record(2, losses());
    record(3, gradients());
    let toy = toy_world(7);
    record(4, reduction(&toy));
    record(5, monotone_steps(&toy));

    let runs: Vec<SeedRun> = SEEDS
        .iter()
        .map(|&s| {
            eprintln!("seed {s} ({:.0}s elapsed)", start.elapsed().as_secs_f64());
            seed_run(s)
        })
        .collect();
    record(6, table_trend(&runs));
    record(7, generator_trend(&runs));
    record(8, template_trend(&runs));
    record(9, memorization_trend(&runs));
    record(10, size_trend(&runs));
    record(11, determinism());

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
