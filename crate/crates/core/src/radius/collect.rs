use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{build_features, CandidateSet, DecisionQuery, FeatureLayout, RandomRadius, ScoreWeights};
use crate::demand::{fit_norm_stats, NormStats};
use crate::market::{MarketWindow, Order};
use crate::multitask::{Dataset, Split};
use crate::nn::Tensor;
use crate::sim::{run, GridSnapshot, SimConfig};
use crate::{Error, Result};

/// Runs one exploration episode with uniformly random per-grid radii and
/// returns its window log.
pub fn collect_episode(
    cfg: &SimConfig,
    stream: Vec<Order>,
    horizon_s: f64,
    candidates: &CandidateSet,
    policy_seed: u64,
) -> Result<Vec<MarketWindow>> {
    Ok(run(cfg, stream, horizon_s, RandomRadius::new(candidates.clone(), policy_seed))?.windows)
}

/// One labelled decision per window row: the query the controller would have
/// seen at the window's start, the radius actually used, and the metrics
/// realised under it.
pub fn window_samples(windows: &[MarketWindow], history_len: usize) -> Vec<(DecisionQuery<'_>, f64, [f64; 4])> {
    let grids = windows.iter().map(|w| w.grid + 1).max().unwrap_or(0);
    let mut per_grid: Vec<Vec<&MarketWindow>> = vec![Vec::new(); grids];
    for w in windows {
        per_grid[w.grid].push(w);
    }
    for rows in &mut per_grid {
        rows.sort_by_key(|w| w.window);
    }
    let mut out = Vec::with_capacity(windows.len());
    for rows in &per_grid {
        for (k, w) in rows.iter().enumerate() {
            let query = DecisionQuery {
                grid: w.grid,
                window: w.window,
                tod: w.tod,
                history: rows[k.saturating_sub(history_len)..k].to_vec(),
                snapshot: GridSnapshot {
                    n_idle: w.n_idle,
                    n_open: w.n_open,
                    n_vehicles: w.n_vehicles,
                },
            };
            out.push((query, w.radius_km, w.metrics.to_array()));
        }
    }
    out
}

/// Normalised train/test tensors plus the statistics needed to reproduce them.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub split: Split<f64>,
    pub feature_stats: NormStats<f64>,
    pub label_stats: NormStats<f64>,
    pub train_episodes: Vec<usize>,
    pub test_episodes: Vec<usize>,
}

impl TrainingData {
    /// Shuffles whole episodes with `seed`, holds out `test_fraction` of them
    /// (at least one), fits statistics on the training episodes only and
    /// builds every sample.
    pub fn build(episodes: &[Vec<MarketWindow>], layout: &FeatureLayout, test_fraction: f64, seed: u64) -> Result<Self> {
        if episodes.len() < 2 {
            return Err(Error::Empty("need at least two episodes to split train/test".into()));
        }
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!("test fraction must lie in [0, 1), got {test_fraction}")));
        }
        let mut order: Vec<usize> = (0..episodes.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = ((episodes.len() as f64 * test_fraction).round() as usize).clamp(1, episodes.len() - 1);
        let (test_idx, train_idx) = order.split_at(n_test);
        let (mut train_episodes, mut test_episodes) = (train_idx.to_vec(), test_idx.to_vec());
        train_episodes.sort_unstable();
        test_episodes.sort_unstable();

        let train_rows: Vec<&MarketWindow> = train_episodes.iter().flat_map(|&e| &episodes[e]).collect();
        if let Some(w) = train_rows.iter().find(|w| w.grid >= layout.grid_count) {
            return Err(Error::Config(format!("window for grid {} outside layout", w.grid)));
        }
        let feature_stats = fit_norm_stats(&train_rows.iter().map(|w| layout.window_row(w)).collect::<Vec<_>>())?;
        let label_stats = fit_norm_stats(&train_rows.iter().map(|w| w.metrics.to_array()).collect::<Vec<_>>())?;

        let build = |ids: &[usize]| -> Result<Dataset<f64>> {
            let (t, d) = (layout.seq_len, layout.dim());
            let mut x = Vec::new();
            let mut y = Vec::new();
            for &e in ids {
                for (query, radius, label) in window_samples(&episodes[e], t - 1) {
                    let seq = build_features(layout, &query, radius, &feature_stats)?;
                    x.extend_from_slice(seq.tensor().data());
                    y.extend(label_stats.apply(&label));
                }
            }
            let n = y.len() / 4;
            Dataset::new(Tensor::new(vec![n, t, d], x)?, Tensor::new(vec![n, 4], y)?)
        };
        Ok(Self {
            split: Split {
                train: build(&train_episodes)?,
                test: build(&test_episodes)?,
            },
            feature_stats,
            label_stats,
            train_episodes,
            test_episodes,
        })
    }
}

/// Mean over all window rows of `Σ_k sense_k · w_k · m_k / σ_k`.
///
/// This is the realised counterpart of the controller's composite score,
/// without centring, so that episodes can be compared by ratio.
pub fn episode_composite(windows: &[MarketWindow], label_stats: &NormStats<f64>, weights: &ScoreWeights) -> f64 {
    if windows.is_empty() {
        return 0.0;
    }
    let total: f64 = windows
        .iter()
        .map(|w| {
            let m = w.metrics.to_array();
            (0..4)
                .map(|k| ScoreWeights::SENSE[k] * weights.0[k] * m[k] / label_stats.std[k])
                .sum::<f64>()
        })
        .sum();
    total / windows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{synth_demand, DemandProfile, FareModel};
    use crate::market::{BBox, GridSpec};

    fn small_sim(seed: u64) -> (SimConfig, Vec<Order>) {
        let grid = GridSpec::new(BBox::new(0.0, 0.0, 0.04, 0.04), 2).unwrap();
        let cfg = SimConfig {
            seed,
            start_s: 8.0 * 3600.0,
            ..SimConfig::new(grid, 20, 20.0)
        };
        let profile = DemandProfile::synthetic(grid, 200.0, 1.0, FareModel::default());
        let stream = synth_demand(&profile, seed + 100, cfg.start_s, 3600.0);
        (cfg, stream)
    }

    fn episode(seed: u64) -> Vec<MarketWindow> {
        let (cfg, stream) = small_sim(seed);
        collect_episode(&cfg, stream, 3600.0, &CandidateSet::integers(3).unwrap(), seed).unwrap()
    }

    #[test]
    fn one_sample_per_window_row() {
        let log = episode(1);
        assert_eq!(log.len(), 4 * 12);
        let samples = window_samples(&log, 5);
        assert_eq!(samples.len(), log.len());
        for (q, r, label) in &samples {
            let row = log.iter().find(|w| w.grid == q.grid && w.window == q.window).unwrap();
            assert_eq!(*label, row.metrics.to_array());
            assert_eq!(*r, row.radius_km);
            assert_eq!(q.history.len(), q.window.min(5));
            assert!(q.history.iter().all(|h| h.grid == q.grid && h.window < q.window));
        }
    }

    #[test]
    fn different_seeds_draw_different_radii() {
        let radii = |seed| episode(seed).iter().map(|w| w.radius_km).collect::<Vec<_>>();
        assert_ne!(radii(1), radii(2));
        assert_eq!(radii(3), radii(3));
    }

    #[test]
    fn split_is_by_episode() {
        let episodes: Vec<_> = (0..5).map(episode).collect();
        let layout = FeatureLayout::new(4, 4).unwrap();
        let data = TrainingData::build(&episodes, &layout, 0.2, 9).unwrap();
        assert_eq!(data.test_episodes.len(), 1);
        assert_eq!(data.train_episodes.len(), 4);
        assert_eq!(data.split.train.len(), 4 * 48);
        assert_eq!(data.split.test.len(), 48);
        assert_eq!(data.split.train.inputs().shape(), &[192, 4, layout.dim()]);
        assert_eq!(data.feature_stats.dim(), layout.dim());
        assert!(TrainingData::build(&episodes[..1], &layout, 0.2, 9).is_err());
    }

    #[test]
    fn composite_is_mean_of_scaled_metrics() {
        let log = episode(4);
        let stats = NormStats {
            mean: vec![0.0; 4],
            std: vec![1.0, 2.0, 1.0, 10.0],
        };
        let want: f64 = log
            .iter()
            .map(|w| w.metrics.ofr - w.metrics.apd / 2.0 + w.metrics.dur + w.metrics.pr / 10.0)
            .sum::<f64>()
            / log.len() as f64;
        assert!((episode_composite(&log, &stats, &ScoreWeights::default()) - want).abs() < 1e-12);
    }
}
