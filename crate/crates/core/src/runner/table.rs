use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{LossKind, Method};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;

use super::config::ExperimentConfig;
use super::pipeline::{
    attack_suite, build_templates, load_or_train_models, prepare, report, stage, Models, Prepared, RunDir,
};

/// Metric rows by (method, model size) columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
    pub warnings: Vec<String>,
}

fn column_name(r: &MetricsReport) -> String {
    match r.loss {
        LossKind::CrossEntropy => format!("{}/{}", r.method.tag(), r.model_size),
        l => format!("{}-{}/{}", r.method.tag(), l.tag(), r.model_size),
    }
}

/// RR./Acc./PLL rows, one column per report, in input order. Reports built
/// from different datasets add a warning row.
pub fn compare_table(reports: &[MetricsReport]) -> Table {
    let mut warnings = Vec::new();
    if let Some(first) = reports.first() {
        let odd: Vec<String> = reports
            .iter()
            .filter(|r| r.dataset_hash != first.dataset_hash)
            .map(column_name)
            .collect();
        if !odd.is_empty() {
            warnings.push(format!(
                "dataset hash differs from {} for {}",
                column_name(first),
                odd.join(" ")
            ));
        }
    }
    Table {
        columns: reports.iter().map(column_name).collect(),
        rows: vec![
            ("RR.".into(), reports.iter().map(|r| r.recovery_rate).collect()),
            ("Acc.".into(), reports.iter().map(|r| r.attack_accuracy).collect()),
            ("PLL".into(), reports.iter().map(|r| r.fluency).collect()),
        ],
        warnings,
    }
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric");
        for c in &self.columns {
            write!(s, ",{c}").expect("write to string");
        }
        s.push('\n');
        for (name, vals) in &self.rows {
            s.push_str(name);
            for v in vals {
                write!(s, ",{v:.4}").expect("write to string");
            }
            s.push('\n');
        }
        for w in &self.warnings {
            writeln!(s, "warning,{}", w.replace(',', ";")).expect("write to string");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.columns.iter().map(String::len).max().unwrap_or(0).max(10);
        let mut s = format!("{:<8}", "");
        for c in &self.columns {
            write!(s, " {c:>width$}").expect("write to string");
        }
        s.push('\n');
        for (name, vals) in &self.rows {
            write!(s, "{name:<8}").expect("write to string");
            for v in vals {
                write!(s, " {v:>width$.2}").expect("write to string");
            }
            s.push('\n');
        }
        for w in &self.warnings {
            writeln!(s, "warning: {w}").expect("write to string");
        }
        s
    }

    pub fn write(&self, csv: &Path, text: &Path) -> Result<()> {
        fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        fs::write(text, self.to_text()).map_err(|e| Error::io(text, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fraction: f64,
    pub recovery_rate: f64,
    pub attack_accuracy: f64,
    pub fluency: f64,
    pub n_texts: usize,
    pub n_failures: usize,
}

/// TR at each template fraction with already trained models.
pub fn ablation_with_models(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    models: &Models,
    fractions: &[f64],
) -> Result<Vec<AblationRow>> {
    if fractions.is_empty() {
        return Err(Error::Config("no template fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Config(format!("template fraction {f} outside (0, 1]")));
    }
    fractions
        .iter()
        .map(|&fraction| {
            let templates = build_templates(cfg, prep, fraction)?;
            let out = attack_suite(cfg, prep, &models.generator, &models.target, &templates, Method::Tr)?;
            let r = report(cfg, prep, models, Method::Tr, &out)?;
            Ok(AblationRow {
                fraction,
                recovery_rate: r.recovery_rate,
                attack_accuracy: r.attack_accuracy,
                fluency: r.fluency,
                n_texts: r.n_texts,
                n_failures: r.n_failures,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("fraction,rr,acc,pll,n_texts,n_failures\n");
    for r in rows {
        writeln!(
            s,
            "{},{:.4},{:.4},{:.4},{},{}",
            r.fraction, r.recovery_rate, r.attack_accuracy, r.fluency, r.n_texts, r.n_failures
        )
        .expect("write to string");
    }
    s
}

/// Reruns the TR suite on templates truncated to each fraction, reusing (or
/// training) the run's checkpoints, and writes `ablation.csv`.
pub fn ablation_template_length(cfg: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let dir = RunDir::new(cfg);
    let _lock = dir.lock()?;
    let prep = stage("prepare", prepare(cfg))?;
    let models = load_or_train_models(cfg, &prep, &dir)?;
    let rows = stage("ablation", ablation_with_models(cfg, &prep, &models, fractions))?;
    let path = dir.ablation();
    fs::write(&path, ablation_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
