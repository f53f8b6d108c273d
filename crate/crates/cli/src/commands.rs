//! The five harness subcommands as plain functions, so that tests can drive
//! them without spawning the binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use matchradius::multitask::{self, write_loss_curve, TrainReport};
use matchradius::nn::{Checkpoint, TebModel};
use matchradius::radius::{collect_episode, write_decision_log, Dbras, TrainingData};
use matchradius::sim::{read_window_log, run, run_with_source, write_summary, write_window_log, FixedRadius, EpisodeSummary};
use matchradius::market::MarketWindow;
use rayon::prelude::*;

use crate::config::{InvalidConfig, ScenarioConfig};
use crate::manifest::Manifest;
use crate::report::{write_summary_table, SummaryRow};

/// Runs one fixed-radius episode per (radius, seed) and writes per-episode
/// logs under `out/FR-<r>/seed-<s>/` plus a seed-averaged `summary.csv`.
pub fn simulate(cfg: &ScenarioConfig, radii: Option<&[f64]>, out: &Path) -> anyhow::Result<Vec<SummaryRow>> {
    cfg.validate()?;
    let radii = match radii {
        Some(r) => r.to_vec(),
        None => cfg.candidate_set()?.radii().to_vec(),
    };
    if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        bail!(InvalidConfig("radii must be positive".into()));
    }
    let jobs: Vec<(f64, u64)> = radii.iter().flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s))).collect();
    let summaries = jobs
        .par_iter()
        .map(|&(r, seed)| -> anyhow::Result<EpisodeSummary> {
            let sim = cfg.sim_config(seed)?;
            let output = run(&sim, cfg.demand(seed)?, cfg.horizon_s(), FixedRadius(r))?;
            let dir = out.join(fixed_label(r)).join(format!("seed-{seed}"));
            write_episode(&dir, &output.windows, &output.summary)?;
            Ok(output.summary)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rows: Vec<SummaryRow> = radii
        .iter()
        .zip(summaries.chunks(cfg.seeds.len()))
        .map(|(&r, chunk)| SummaryRow::mean(fixed_label(r), chunk))
        .collect();
    write_summary_table(out.join("summary.csv"), &rows)?;
    Manifest::new("simulate", cfg).save(out)?;
    Ok(rows)
}

/// Exploration episodes with random per-grid radii, one per seed, written to
/// `out/episodes/seed-<s>.csv`.
pub fn collect(cfg: &ScenarioConfig, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    cfg.validate()?;
    let candidates = cfg.candidate_set()?;
    let dir = out.join("episodes");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let paths = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> anyhow::Result<PathBuf> {
            let sim = cfg.sim_config(seed)?;
            let windows = collect_episode(&sim, cfg.demand(seed)?, cfg.horizon_s(), &candidates, seed)?;
            let path = dir.join(format!("seed-{seed}.csv"));
            write_window_log(&path, &windows)?;
            Ok(path)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Manifest::new("collect", cfg).save(out)?;
    Ok(paths)
}

/// Reads every `*.csv` episode log in `episodes`, in file-name order.
pub fn read_episodes(episodes: &Path) -> anyhow::Result<Vec<Vec<MarketWindow>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(episodes)
        .with_context(|| format!("reading {}", episodes.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| read_window_log(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

/// Fits a TEB on collected episodes and writes `checkpoint.json`,
/// `loss_curve.csv` and `strategy.json`.
pub fn train(cfg: &ScenarioConfig, episodes: &Path, out: &Path) -> anyhow::Result<TrainReport> {
    cfg.validate()?;
    let logs = read_episodes(episodes)?;
    let layout = cfg.layout()?;
    let data = TrainingData::build(&logs, &layout, cfg.training.test_fraction, cfg.training.seed)?;
    let mut model = TebModel::new(cfg.teb_config()?, cfg.model.init_seed)?;
    let train_cfg = cfg.train_config()?;
    let report = multitask::train(&mut model, &data.split, &train_cfg)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut ck = Checkpoint::new(model, data.feature_stats, data.label_stats)?;
    ck.meta.insert("city".into(), cfg.city.name().into());
    ck.meta.insert("strategy".into(), train_cfg.strategy.kind.name().into());
    ck.meta.insert("config_hash".into(), cfg.hash());
    ck.save(out.join("checkpoint.json"))?;
    write_loss_curve(out.join("loss_curve.csv"), &report.curve)?;
    train_cfg.strategy.save(out.join("strategy.json"))?;
    Manifest::new("train", cfg).save(out)?;
    Ok(report)
}

/// Runs the learned controller on every seed.
pub fn dbras(cfg: &ScenarioConfig, checkpoint: &Path, out: &Path) -> anyhow::Result<SummaryRow> {
    cfg.validate()?;
    let ck = Checkpoint::<f64>::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if let Some(city) = ck.meta.get("city") {
        if city != cfg.city.name() {
            return Err(matchradius::Error::CheckpointMismatch(format!(
                "checkpoint trained for {city}, scenario is {}",
                cfg.city.name()
            ))
            .into());
        }
    }
    let label = format!("TEB + {}", ck.meta.get("strategy").map_or("?", String::as_str));
    let grid_count = cfg.grid()?.cell_count();
    let candidates = cfg.candidate_set()?;
    // Fail fast on a mismatched checkpoint before spawning work.
    Dbras::from_checkpoint(ck.clone(), grid_count, candidates.clone())?;

    let summaries = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> anyhow::Result<EpisodeSummary> {
            let source = Dbras::from_checkpoint(ck.clone(), grid_count, candidates.clone())?;
            let sim = cfg.sim_config(seed)?;
            let (output, source) = run_with_source(&sim, cfg.demand(seed)?, cfg.horizon_s(), source)?;
            let dir = out.join(format!("seed-{seed}"));
            write_episode(&dir, &output.windows, &output.summary)?;
            // The controller is also queried at the closing boundary; that
            // decision never takes effect.
            let decisions: Vec<_> = source
                .into_decisions()
                .into_iter()
                .filter(|d| d.window < output.summary.windows)
                .collect();
            write_decision_log(dir.join("decisions.csv"), &decisions)?;
            Ok(output.summary)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let row = SummaryRow::mean(label, &summaries);
    write_summary_table(out.join("summary.csv"), std::slice::from_ref(&row))?;
    Manifest::new("dbras", cfg).save(out)?;
    Ok(row)
}

fn write_episode(dir: &Path, windows: &[MarketWindow], summary: &EpisodeSummary) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_window_log(dir.join("windows.csv"), windows)?;
    write_summary(dir.join("summary.json"), summary)?;
    Ok(())
}

pub fn fixed_label(r: f64) -> String {
    format!("FR-{r}")
}
