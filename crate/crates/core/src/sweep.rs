//! Batch runs over (variant, script, seed) and the ablation tables built from them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::metrics::{trace_metrics, MetricsReport};
use crate::par::{self, Execution};
use crate::sim::human::HumanScript;
use crate::sim::scenario::{run_scenario, SimError};
use crate::sim::scripts;
use crate::supervisor::SystemVariant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variants: Vec<SystemVariant>,
    /// Script names resolved through the config, then the built-in library.
    pub scripts: Vec<String>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Every variant over the built-in library, seeds `0..seeds`.
    pub fn full(seeds: u64) -> Self {
        Self {
            variants: SystemVariant::ALL.to_vec(),
            scripts: scripts::NAMES.iter().map(|s| s.to_string()).collect(),
            seeds: (0..seeds).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: SystemVariant,
    pub script: String,
    pub abnormal: bool,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sem = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sem, n }
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: SystemVariant,
    pub runs: usize,
    pub completed: usize,
    pub completion_time: Stat,
    pub robot_path: Stat,
    pub human_path: Stat,
    pub mean_force: Stat,
    pub energy: Stat,
    pub failures: Stat,
    pub recoveries: Stat,
    pub unrecovered_failures: Stat,
    pub abnormal_reverts: Stat,
    pub cooperation_detections: Stat,
    pub task_accuracy: Stat,
    pub interaction_accuracy: Stat,
    pub verification_accuracy: Stat,
}

impl VariantRow {
    fn from_runs(variant: SystemVariant, runs: &[&RunSummary]) -> Self {
        let stat = |f: &dyn Fn(&MetricsReport) -> f64| {
            Stat::of(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
        };
        let opt = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
            Stat::of(
                &runs
                    .iter()
                    .filter_map(|r| f(&r.metrics))
                    .collect::<Vec<_>>(),
            )
        };
        Self {
            variant,
            runs: runs.len(),
            completed: runs.iter().filter(|r| r.metrics.completed).count(),
            completion_time: stat(&|m| m.completion_time),
            robot_path: stat(&|m| m.robot_path),
            human_path: stat(&|m| m.human_path),
            mean_force: stat(&|m| m.mean_force),
            energy: stat(&|m| m.energy),
            failures: stat(&|m| m.failures as f64),
            recoveries: stat(&|m| m.recoveries as f64),
            unrecovered_failures: stat(&|m| m.unrecovered_failures as f64),
            abnormal_reverts: stat(&|m| m.abnormal_reverts as f64),
            cooperation_detections: stat(&|m| m.cooperation_detections as f64),
            task_accuracy: opt(&|m| m.accuracy.task),
            interaction_accuracy: opt(&|m| m.accuracy.interaction),
            verification_accuracy: opt(&|m| m.accuracy.verification),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub runs: Vec<RunSummary>,
    /// All scripts, one row per variant.
    pub table: Vec<VariantRow>,
    /// Only scripts with a false cooperation cue.
    pub abnormal_table: Vec<VariantRow>,
}

impl SweepReport {
    pub fn row(&self, variant: SystemVariant) -> Option<&VariantRow> {
        self.table.iter().find(|r| r.variant == variant)
    }

    pub fn abnormal_row(&self, variant: SystemVariant) -> Option<&VariantRow> {
        self.abnormal_table.iter().find(|r| r.variant == variant)
    }

    /// Plain-text rendering of both tables.
    pub fn render(&self) -> String {
        let mut out = String::new();
        render_table(&mut out, "all scripts", &self.table);
        if self.abnormal_table.iter().any(|r| r.runs > 0) {
            out.push('\n');
            render_table(
                &mut out,
                "scripts with a false cooperation cue",
                &self.abnormal_table,
            );
        }
        out
    }
}

fn cell(s: &Stat) -> String {
    if s.n == 0 {
        "n/a".to_owned()
    } else {
        format!("{:.2}±{:.2}", s.mean, s.sem)
    }
}

fn render_table(out: &mut String, title: &str, rows: &[VariantRow]) {
    let header = [
        "system",
        "runs",
        "done",
        "time s",
        "R path m",
        "H path m",
        "H force N",
        "H energy J",
        "fail",
        "recov",
        "unrecov",
        "abnormal",
        "acc task",
        "acc inter",
        "acc verif",
    ];
    let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows.iter().filter(|r| r.runs > 0) {
        lines.push(vec![
            r.variant.name().to_owned(),
            r.runs.to_string(),
            r.completed.to_string(),
            cell(&r.completion_time),
            cell(&r.robot_path),
            cell(&r.human_path),
            cell(&r.mean_force),
            cell(&r.energy),
            cell(&r.failures),
            cell(&r.recoveries),
            cell(&r.unrecovered_failures),
            cell(&r.abnormal_reverts),
            cell(&r.task_accuracy),
            cell(&r.interaction_accuracy),
            cell(&r.verification_accuracy),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            lines
                .iter()
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let _ = writeln!(out, "{title}");
    for l in &lines {
        let row: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:>w$}", w = *w))
            .collect();
        let _ = writeln!(out, "{}", row.join("  "));
    }
}

/// Runs every (variant, script, seed) combination. Results are ordered by
/// variant, then script, then seed, whatever the execution mode.
pub fn run_sweep(
    config: &ScenarioConfig,
    spec: &SweepSpec,
    mode: Execution,
) -> Result<SweepReport, SimError> {
    let resolved: Vec<HumanScript> = spec
        .scripts
        .iter()
        .map(|name| config.script(name))
        .collect::<Result<_, _>>()?;
    let mut jobs = Vec::new();
    for &v in &spec.variants {
        for s in &resolved {
            for &seed in &spec.seeds {
                jobs.push((v, s, seed));
            }
        }
    }
    let results = par::map(&jobs, mode, |(variant, script, seed)| {
        run_scenario(config, script, *variant, *seed).map(|trace| RunSummary {
            variant: *variant,
            script: script.name.clone(),
            abnormal: script.abnormal,
            seed: *seed,
            metrics: trace_metrics(&trace),
        })
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let table = spec
        .variants
        .iter()
        .map(|&v| {
            let rows: Vec<&RunSummary> = runs.iter().filter(|r| r.variant == v).collect();
            VariantRow::from_runs(v, &rows)
        })
        .collect();
    let abnormal_table = spec
        .variants
        .iter()
        .map(|&v| {
            let rows: Vec<&RunSummary> = runs
                .iter()
                .filter(|r| r.variant == v && r.abnormal)
                .collect();
            VariantRow::from_runs(v, &rows)
        })
        .collect();
    Ok(SweepReport {
        spec: spec.clone(),
        runs,
        table,
        abnormal_table,
    })
}
