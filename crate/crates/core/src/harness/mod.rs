//! Experiment configs, seeded multi-trial runs, aggregation, CSV and SVG output.
//!
//! Trial `k` of a run uses seed `base_seed + k`; within a trial every consumer of
//! randomness draws from its own ChaCha stream of that seed, so results do not depend
//! on the thread count.

mod config;
mod experiments;
mod stats;
mod svg;
mod table;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{
    with_final_temperature, AblateSection, EvaluateSection, ExperimentConfig, ExperimentKind,
    LearnerKind, LearnerSection, MethodSpec, ProximalSection, RegressSection,
};
pub use experiments::{
    ablate_trial, annealing_down_to, control_trial, evaluate_trial, fit_qr, fit_wgf,
    learner_config, regress_trial, EvaluationSnapshot, ABLATE_COLUMNS, CONTROL_COLUMNS,
    EVALUATE_COLUMNS, REGRESS_COLUMNS,
};
pub use stats::{confidence_interval, rmse, t_critical};
pub use svg::{kernel_density, render_svg, PlotStyle, Series};
pub use table::{aggregate, format_float, Aggregate, Column, MetricSeries, Role, Value, CI_LEVEL};

use crate::error::{Error, Result};

/// Per-method trial series of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub methods: Vec<(String, Vec<MetricSeries>)>,
    pub files: Vec<PathBuf>,
}

impl RunOutput {
    pub fn trials(&self, method: &str) -> Option<&[MetricSeries]> {
        self.methods
            .iter()
            .find(|(m, _)| m == method)
            .map(|(_, t)| t.as_slice())
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every trial of `cfg` without writing anything.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<(String, Vec<MetricSeries>)>> {
    cfg.validate()?;
    let trials: Vec<usize> = (0..cfg.trials).collect();
    pool(cfg.threads)?.install(|| match cfg.kind {
        ExperimentKind::Control | ExperimentKind::ComparePolicies => {
            let env = cfg.env.grid()?;
            let jobs: Vec<(usize, usize)> = (0..cfg.methods.len())
                .flat_map(|m| trials.iter().map(move |&t| (m, t)))
                .collect();
            let mut done = jobs
                .par_iter()
                .map(|&(m, t)| control_trial(&env, cfg, &cfg.methods[m], t))
                .collect::<Result<Vec<_>>>()?
                .into_iter();
            Ok(cfg
                .methods
                .iter()
                .map(|m| (m.name.clone(), done.by_ref().take(cfg.trials).collect()))
                .collect())
        }
        ExperimentKind::Regress => {
            let gmm = cfg.env.gmm()?;
            let pairs = trials
                .par_iter()
                .map(|&t| regress_trial(gmm, cfg, t))
                .collect::<Result<Vec<_>>>()?;
            let (wgf, qr) = pairs.into_iter().unzip();
            Ok(vec![("wgf".into(), wgf), ("qr".into(), qr)])
        }
        ExperimentKind::Ablate => {
            let gmm = cfg.env.gmm()?;
            let series = trials
                .par_iter()
                .map(|&t| ablate_trial(gmm, cfg, t))
                .collect::<Result<Vec<_>>>()?;
            Ok(vec![("wgf".into(), series)])
        }
        ExperimentKind::Evaluate => {
            let (series, _) = run_evaluate(cfg, &trials)?;
            Ok(vec![("wgf".into(), series)])
        }
    })
}

fn run_evaluate(
    cfg: &ExperimentConfig,
    trials: &[usize],
) -> Result<(Vec<MetricSeries>, Vec<EvaluationSnapshot>)> {
    let env = cfg.env.grid()?;
    Ok(trials
        .par_iter()
        .map(|&t| evaluate_trial(&env, cfg, t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip())
}

/// Runs `cfg` and writes `raw_<method>_<trial>.csv`, `agg_<method>.csv` and
/// `fig_<name>.svg` into `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let mut snapshot = None;
    let methods = if cfg.kind == ExperimentKind::Evaluate {
        let trials: Vec<usize> = (0..cfg.trials).collect();
        let (series, snaps) = pool(cfg.threads)?.install(|| run_evaluate(cfg, &trials))?;
        snapshot = snaps.into_iter().next();
        vec![("wgf".to_string(), series)]
    } else {
        run_trials(cfg)?
    };

    let mut files = Vec::new();
    let mut aggregates = Vec::new();
    for (name, trials) in &methods {
        for (k, series) in trials.iter().enumerate() {
            let path = cfg.out.join(format!("raw_{name}_{k}.csv"));
            series.write_csv(&path)?;
            files.push(path);
        }
        let agg = aggregate(trials)?;
        let path = cfg.out.join(format!("agg_{name}.csv"));
        agg.write_csv(&path)?;
        files.push(path);
        aggregates.push((name.clone(), agg, trials.as_slice()));
    }
    for (fig, svg) in figures(cfg, &aggregates, snapshot.as_ref()) {
        let path = cfg.out.join(format!("fig_{fig}.svg"));
        fs::write(&path, svg)?;
        files.push(path);
    }
    Ok(RunOutput { methods, files })
}

fn band(agg: &Aggregate, metric: &str) -> Option<Vec<f64>> {
    if agg.trials < 2 {
        return None;
    }
    agg.column(&format!("{metric}_ci"))
}

fn curve(name: &str, agg: &Aggregate, x: &str, metric: &str) -> Series {
    Series::line(
        name,
        agg.column(x).unwrap_or_default(),
        agg.column(&format!("{metric}_mean")).unwrap_or_default(),
    )
    .with_band(band(agg, metric))
}

fn figures(
    cfg: &ExperimentConfig,
    aggs: &[(String, Aggregate, &[MetricSeries])],
    snapshot: Option<&EvaluationSnapshot>,
) -> Vec<(String, String)> {
    let per_method = |x: &str, metric: &str| -> Vec<Series> {
        aggs.iter().map(|(n, a, _)| curve(n, a, x, metric)).collect()
    };
    let mut out = Vec::new();
    match cfg.kind {
        ExperimentKind::Control | ExperimentKind::ComparePolicies => {
            for (fig, metric, label) in [
                ("return", "return", "episodic return"),
                ("steps", "steps", "episodic step count"),
                ("cliff_falls", "cliff_falls", "cliff falls per episode"),
                ("top_path", "path_class_top", "fraction of top-path episodes"),
                ("multi_solution", "multi_solution_events", "multiple-solution events"),
            ] {
                let style = PlotStyle::new(&format!("{} on {}", label, cfg.env_name), "episode", label);
                out.push((fig.to_string(), render_svg(&per_method("episode", metric), &style)));
            }
        }
        ExperimentKind::Regress => {
            for (fig, metric, label) in [
                ("regression_first", "first_moment_rmse", "first moment RMSE"),
                ("regression_second", "second_moment_rmse", "second moment RMSE"),
            ] {
                let series = aggs
                    .iter()
                    .map(|(n, a, trials)| {
                        let scatter = trials
                            .iter()
                            .flat_map(|t| t.numbers("samples").into_iter().zip(t.numbers(metric)))
                            .collect();
                        curve(n, a, "samples", metric).with_scatter(scatter)
                    })
                    .collect::<Vec<_>>();
                let style = PlotStyle::new(label, "particles (samples)", label);
                out.push((fig.to_string(), render_svg(&series, &style)));
            }
        }
        ExperimentKind::Ablate => {
            for (fig, metric, label) in [
                ("ablation_first", "first_moment_rmse", "first moment RMSE"),
                ("ablation_second", "second_moment_rmse", "second moment RMSE"),
            ] {
                let mut series = Vec::new();
                if let Some((_, agg, _)) = aggs.first() {
                    let temps = agg.column("temperature").unwrap_or_default();
                    let hs = agg.column("h").unwrap_or_default();
                    let means = agg.column(&format!("{metric}_mean")).unwrap_or_default();
                    let cis = band(agg, metric);
                    for &h in &cfg.ablate.step_sizes {
                        let rows: Vec<usize> = (0..hs.len()).filter(|&r| hs[r] == h).collect();
                        series.push(
                            Series::line(
                                format!("h = {h}"),
                                rows.iter().map(|&r| temps[r]).collect(),
                                rows.iter().map(|&r| means[r]).collect(),
                            )
                            .with_band(cis.as_ref().map(|c| rows.iter().map(|&r| c[r]).collect())),
                        );
                    }
                }
                let style = PlotStyle::new(label, "minimum temperature", label);
                out.push((fig.to_string(), render_svg(&series, &style)));
            }
        }
        ExperimentKind::Evaluate => {
            for (fig, metric, label) in [
                ("loss", "loss", "proximal loss"),
                ("value_error", "value_error", "squared value error"),
            ] {
                let style = PlotStyle::new(label, "gradient step", label);
                out.push((fig.to_string(), render_svg(&per_method("step", metric), &style)));
            }
            if let Some(snap) = snapshot {
                out.push(("distribution".into(), distribution_figure(snap)));
            }
        }
    }
    out
}

/// Smoothed densities of the Monte Carlo targets and the fitted particles of one trial.
fn distribution_figure(snap: &EvaluationSnapshot) -> String {
    let all: Vec<f64> = snap
        .targets
        .values()
        .iter()
        .chain(snap.particles.values())
        .copied()
        .collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let margin = 0.1 * (hi - lo).max(1.0);
    let grid: Vec<f64> = (0..=200)
        .map(|k| lo - margin + (hi - lo + 2.0 * margin) * k as f64 / 200.0)
        .collect();
    let series = vec![
        Series::line("monte carlo targets", grid.clone(), kernel_density(snap.targets.values(), &grid)),
        Series::line("fitted particles", grid.clone(), kernel_density(snap.particles.values(), &grid)),
    ];
    render_svg(&series, &PlotStyle::new("return distribution (trial 0)", "return", "density"))
}

/// Reads a CSV written by this module back as a header and rows of text.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}
