//! Experiment suite: trains every requested variant over several seeds,
//! evaluates closed-loop success on the unseen environments, and runs the
//! weak-data reduction sweep. Cells run in parallel (capped by the
//! GPLAC_THREADS env var); one failed cell marks its row, the rest still
//! report.

use crate::config::Config;
use crate::dataset::Dataset;
use crate::train::{train, TrainOutcome};
use crate::{Error, Result};
use gplac_core::model::ModelVariant;
use gplac_core::rng::indexed_seed;
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub variant: ModelVariant,
    pub seed_index: usize,
    pub weak_fraction: f64,
}

pub struct CellResult {
    pub key: CellKey,
    pub outcome: std::result::Result<TrainOutcome, String>,
    pub run_dir: PathBuf,
}

pub struct RowSummary {
    pub group: String,
    pub label: String,
    pub weak_fraction: f64,
    pub per_seed: Vec<Option<f32>>,
    pub mean: Option<f32>,
    pub stddev: Option<f32>,
    pub failed: usize,
}

pub struct ExperimentResults {
    pub cells: Vec<CellResult>,
    pub rows: Vec<RowSummary>,
}

fn cell_name(key: &CellKey) -> String {
    if (key.weak_fraction - 1.0).abs() < 1e-12 {
        format!("{}_s{}", key.variant.name(), key.seed_index)
    } else {
        format!(
            "{}_s{}_f{:03}",
            key.variant.name(),
            key.seed_index,
            (key.weak_fraction * 1000.0).round() as u32
        )
    }
}

/// Per-cell training seed: derived from the suite master seed and the
/// cell identity so adding cells never perturbs existing ones.
pub fn cell_training_seed(base: &Config, key: &CellKey) -> u64 {
    indexed_seed(
        base.seed,
        &format!("cell_{}_{}", key.variant.name(), cell_name(key)),
        key.seed_index as u64,
    )
}

fn cell_config(base: &Config, key: &CellKey) -> Config {
    let mut cfg = base.clone();
    cfg.variant = key.variant;
    cfg.weak_fraction = key.weak_fraction;
    cfg.seed = cell_training_seed(base, key);
    cfg
}

pub fn parallel_width() -> usize {
    std::env::var("GPLAC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Train the given cells in parallel. Results come back in the input
/// order regardless of scheduling, so reductions are deterministic.
pub fn run_cells(base: &Config, data: &Dataset, out_dir: &Path, keys: Vec<CellKey>) -> Vec<CellResult> {
    let width = parallel_width().max(1);
    let queue: Mutex<VecDeque<(usize, CellKey)>> =
        Mutex::new(keys.iter().cloned().enumerate().collect());
    let results: Mutex<Vec<Option<CellResult>>> =
        Mutex::new((0..keys.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..width.min(keys.len().max(1)) {
            scope.spawn(|| loop {
                let job = queue.lock().unwrap().pop_front();
                let Some((slot, key)) = job else { break };
                let cfg = cell_config(base, &key);
                let run_dir = out_dir.join(cell_name(&key));
                let outcome = train(&cfg, data, &run_dir).map_err(|e| e.to_string());
                results.lock().unwrap()[slot] = Some(CellResult {
                    key,
                    outcome,
                    run_dir,
                });
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell produced a result"))
        .collect()
}

fn summarize(group: &str, label: &str, fraction: f64, cells: &[&CellResult]) -> RowSummary {
    let per_seed: Vec<Option<f32>> = cells
        .iter()
        .map(|c| c.outcome.as_ref().ok().and_then(|o| o.final_success))
        .collect();
    let ok: Vec<f32> = per_seed.iter().flatten().copied().collect();
    let mean = if ok.is_empty() {
        None
    } else {
        Some(ok.iter().sum::<f32>() / ok.len() as f32)
    };
    let stddev = mean.map(|m| {
        if ok.len() < 2 {
            0.0
        } else {
            (ok.iter().map(|v| (v - m) * (v - m)).sum::<f32>() / (ok.len() - 1) as f32).sqrt()
        }
    });
    RowSummary {
        group: group.to_string(),
        label: label.to_string(),
        weak_fraction: fraction,
        failed: per_seed.iter().filter(|v| v.is_none()).count(),
        per_seed,
        mean,
        stddev,
    }
}

/// The full suite: every variant in `exp_variants` over `exp_seeds`
/// seeds, plus the weak-data budget sweep (on the classifier-bearing
/// flagship variant) over `sweep_fractions`. The 100% sweep point reuses
/// the plain variant cells.
pub fn run_experiment(cfg: &Config, data: &Dataset, out_dir: &Path) -> Result<ExperimentResults> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(e, out_dir))?;
    let mut keys = Vec::new();
    for &variant in &cfg.exp_variants {
        for s in 0..cfg.exp_seeds {
            keys.push(CellKey {
                variant,
                seed_index: s,
                weak_fraction: 1.0,
            });
        }
    }
    let sweep_variant = ModelVariant::Gplac;
    for &f in &cfg.sweep_fractions {
        if (f - 1.0).abs() < 1e-12 && cfg.exp_variants.contains(&sweep_variant) {
            continue; // reuse the plain cells
        }
        for s in 0..cfg.exp_seeds {
            keys.push(CellKey {
                variant: sweep_variant,
                seed_index: s,
                weak_fraction: f,
            });
        }
    }

    let cells = run_cells(cfg, data, out_dir, keys);

    let mut rows = Vec::new();
    for &variant in &cfg.exp_variants {
        let group: Vec<&CellResult> = cells
            .iter()
            .filter(|c| c.key.variant == variant && (c.key.weak_fraction - 1.0).abs() < 1e-12)
            .collect();
        rows.push(summarize("variants", variant.name(), 1.0, &group));
    }
    for &f in &cfg.sweep_fractions {
        let group: Vec<&CellResult> = cells
            .iter()
            .filter(|c| {
                c.key.variant == sweep_variant && (c.key.weak_fraction - f).abs() < 1e-12
            })
            .collect();
        rows.push(summarize(
            "weak_sweep",
            &format!("{}@{:.4}", sweep_variant.name(), f),
            f,
            &group,
        ));
    }

    write_results_csv(&out_dir.join("results_table.csv"), &rows, cfg.exp_seeds)?;
    Ok(ExperimentResults { cells, rows })
}

fn write_results_csv(path: &Path, rows: &[RowSummary], seeds: usize) -> Result<()> {
    let mut out = String::from("group,label,weak_fraction,status,mean,stddev");
    for s in 0..seeds {
        out.push_str(&format!(",seed{s}"));
    }
    out.push('\n');
    for r in rows {
        let status = if r.failed == 0 {
            "ok".to_string()
        } else {
            format!("failed({})", r.failed)
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            r.group,
            r.label,
            r.weak_fraction,
            status,
            r.mean.map(|v| v.to_string()).unwrap_or_default(),
            r.stddev.map(|v| v.to_string()).unwrap_or_default(),
        ));
        for v in &r.per_seed {
            out.push_str(&format!(",{}", v.map(|x| x.to_string()).unwrap_or_default()));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(e, path))
}
