use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use textinv::artifact::{read_json, write_json};
use textinv::attack::{read_inverted_tsv, write_inverted_tsv, ItemFailure, LossKind, Method, SuiteOutput};
use textinv::corpus::templates::read_templates;
use textinv::error::{Error, Result};
use textinv::modeling::Decoding;
use textinv::runner::pipeline::{
    artifact_stem, attack_suite, build_templates, load_or_train_eval, load_or_train_generator, load_or_train_models,
    load_or_train_target, persist_prepared, persist_templates, prepare, read_reports, report, stage, stamp, write_pca,
    Prepared, RunDir,
};
use textinv::runner::{ablation_template_length, compare_table, pipeline_run, ExperimentConfig};

/// Reconstruct private training text from a text classifier.
#[derive(Parser)]
#[command(name = "textinv", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; each run writes to <out>/<run-id>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Greedy decoding everywhere.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpus and split, and write them with the vocabulary.
    Prepare,
    TrainTarget,
    TrainGenerator,
    ExtractTemplates,
    /// Run one attack method over the templates.
    Attack {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long, value_parser = parse_loss)]
        loss: Option<LossKind>,
    },
    /// Score inverted texts (all methods found, or one).
    Evaluate {
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long, value_parser = parse_loss)]
        loss: Option<LossKind>,
    },
    /// Collect reports into table.csv and table.txt.
    Report,
    AblateTemplateLength {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.3, 0.5, 0.7, 1.0])]
        fractions: Vec<f64>,
    },
    RunAll,
    /// Print the resolved config.
    ShowConfig,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method {s:?}; expected tr, vmi, vtg or gumbel"))
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    LossKind::parse(s).ok_or_else(|| format!("unknown loss {s:?}; expected ce or mentr"))
}

fn resolve(g: &Global, loss: Option<LossKind>) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    if g.deterministic {
        cfg.attack.decoding = Decoding::Greedy;
    }
    if let Some(l) = loss {
        cfg.attack.loss_kind = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

const PARTIAL: u8 = 4;

fn report_failures(failures: &[ItemFailure]) -> u8 {
    for f in failures {
        eprintln!(
            "item failed: template {} label {:?}: {}",
            f.template_index, f.label, f.error
        );
    }
    if failures.is_empty() {
        0
    } else {
        PARTIAL
    }
}

fn templates_for(cfg: &ExperimentConfig, prep: &Prepared, dir: &RunDir) -> Result<Vec<textinv::corpus::Template>> {
    let path = dir.templates();
    if path.exists() {
        read_templates(&path, &prep.vocab)
    } else {
        let t = stage("extract-templates", build_templates(cfg, prep, cfg.templates.fraction))?;
        persist_templates(cfg, &t, &prep.vocab, dir)?;
        Ok(t)
    }
}

fn run(cli: Cli) -> Result<u8> {
    let loss = match &cli.command {
        Command::Attack { loss, .. } | Command::Evaluate { loss, .. } => *loss,
        _ => None,
    };
    let cfg = resolve(&cli.global, loss)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", cfg.to_json());
        return Ok(0);
    }
    if let Command::RunAll = cli.command {
        let out = pipeline_run(&cfg)?;
        print!("{}", compare_table(&out.reports).to_text());
        println!("outputs in {}", out.dir.display());
        let failures: Vec<ItemFailure> = out.failures.into_iter().map(|(_, f)| f).collect();
        return Ok(report_failures(&failures));
    }
    if let Command::AblateTemplateLength { fractions } = &cli.command {
        let rows = ablation_template_length(&cfg, fractions)?;
        print!("{}", textinv::runner::table::ablation_csv(&rows));
        return Ok(0);
    }

    let dir = RunDir::new(&cfg);
    let _lock = dir.lock()?;
    let prep = stage("prepare", prepare(&cfg))?;
    if !dir.config().exists() {
        persist_prepared(&cfg, &prep, &dir)?;
    }
    match cli.command {
        Command::Prepare => {
            println!(
                "public {} private {} vocabulary {} in {}",
                prep.split.public.len(),
                prep.split.private.len(),
                prep.vocab.len(),
                dir.root.display()
            );
        }
        Command::TrainTarget => {
            load_or_train_target(&cfg, &prep, &dir)?;
            load_or_train_eval(&cfg, &prep, &dir)?;
        }
        Command::TrainGenerator => {
            load_or_train_generator(&cfg, &prep, &dir)?;
        }
        Command::ExtractTemplates => {
            let t = stage(
                "extract-templates",
                build_templates(&cfg, &prep, cfg.templates.fraction),
            )?;
            persist_templates(&cfg, &t, &prep.vocab, &dir)?;
            println!("{} templates written to {}", t.len(), dir.templates().display());
        }
        Command::Attack { method, .. } => {
            let templates = templates_for(&cfg, &prep, &dir)?;
            let target = load_or_train_target(&cfg, &prep, &dir)?;
            let generator = load_or_train_generator(&cfg, &prep, &dir)?;
            let out = stage(
                "attack",
                attack_suite(&cfg, &prep, &generator, &target, &templates, method),
            )?;
            let stem = artifact_stem(method, cfg.attack.loss_kind);
            write_inverted_tsv(&dir.inverted(&stem), &out.texts, &prep.vocab, &stamp(&cfg))?;
            write_json(&dir.failures(&stem), &stamp(&cfg), &out.failures)?;
            println!("{} texts written to {}", out.texts.len(), dir.inverted(&stem).display());
            return Ok(report_failures(&out.failures));
        }
        Command::Evaluate { method, .. } => {
            let models = load_or_train_models(&cfg, &prep, &dir)?;
            let methods: Vec<Method> = match method {
                Some(m) => vec![m],
                None => Method::ALL.to_vec(),
            };
            let mut done = 0;
            for m in methods {
                let stem = artifact_stem(m, cfg.attack.loss_kind);
                let path = dir.inverted(&stem);
                if !path.exists() {
                    continue;
                }
                let texts = read_inverted_tsv(&path, &prep.vocab, Some(&stamp(&cfg)))?;
                let failures: Vec<ItemFailure> = read_json(&dir.failures(&stem), &stamp(&cfg))?;
                let out = SuiteOutput { texts, failures };
                let rep = stage("evaluate", report(&cfg, &prep, &models, m, &out))?;
                write_json(&dir.report(&stem), &stamp(&cfg), &rep)?;
                let svg = cfg.plots.then(|| dir.pca(&stem, "svg"));
                stage(
                    "pca",
                    write_pca(
                        &cfg,
                        &prep,
                        &models.target,
                        &out,
                        &dir.pca(&stem, "csv"),
                        svg.as_deref(),
                    ),
                )?;
                println!(
                    "{stem}: RR {:.2} Acc {:.2} PLL {:.2}",
                    rep.recovery_rate, rep.attack_accuracy, rep.fluency
                );
                done += 1;
            }
            if done == 0 {
                return Err(Error::Config(format!("no inverted texts in {}", dir.root.display())));
            }
        }
        Command::Report => {
            let reports = read_reports(&cfg, &dir)?;
            if reports.is_empty() {
                return Err(Error::Config(format!("no reports in {}", dir.root.display())));
            }
            let table = compare_table(&reports);
            table.write(&dir.table("csv"), &dir.table("txt"))?;
            print!("{}", table.to_text());
        }
        Command::AblateTemplateLength { .. } | Command::RunAll | Command::ShowConfig => unreachable!(),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
