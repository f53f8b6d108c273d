//! Online radius selection: build one feature sequence per candidate radius,
//! predict the four window metrics, score them and commit the best radius.

mod collect;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::NormStats;
use crate::market::{MarketWindow, TimeOfDay};
use crate::nn::{Checkpoint, FeatureSequence, Tensor};
use crate::sim::{DecisionContext, GridSnapshot, RadiusSource};
use crate::{Error, Result};

pub use collect::{collect_episode, episode_composite, window_samples, TrainingData};

/// Candidate radii in km, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CandidateSet(Vec<f64>);

impl CandidateSet {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::Config("candidate set is empty".into()));
        }
        if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("candidate radii must be positive: {radii:?}")));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("candidate radii must be strictly increasing: {radii:?}")));
        }
        Ok(Self(radii))
    }

    /// 1, 2, ..., `max` km.
    pub fn integers(max: u32) -> Result<Self> {
        Self::new((1..=max).map(f64::from).collect())
    }

    pub fn radii(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for CandidateSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CandidateSet> for Vec<f64> {
    fn from(c: CandidateSet) -> Self {
        c.0
    }
}

/// Column layout of a feature row: `[N_e, N_o, N_v, o, d, u, p, R]`, then a
/// grid one-hot, then a time-of-day one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub seq_len: usize,
    pub grid_count: usize,
}

impl FeatureLayout {
    pub const MARKET: usize = 8;
    /// Columns of the realised metrics, masked on the final row.
    pub const METRICS: std::ops::Range<usize> = 3..7;
    pub const RADIUS: usize = 7;

    pub fn new(seq_len: usize, grid_count: usize) -> Result<Self> {
        if seq_len == 0 || grid_count == 0 {
            return Err(Error::Config("feature layout needs seq_len >= 1 and grid_count >= 1".into()));
        }
        Ok(Self { seq_len, grid_count })
    }

    pub fn dim(&self) -> usize {
        Self::MARKET + self.grid_count + TimeOfDay::COUNT
    }

    /// Unnormalised row for a completed window.
    pub fn window_row(&self, w: &MarketWindow) -> Vec<f64> {
        let m = w.metrics;
        let snap = GridSnapshot {
            n_idle: w.n_idle,
            n_open: w.n_open,
            n_vehicles: w.n_vehicles,
        };
        let mut row = self.decision_row(w.grid, w.tod, &snap, w.radius_km);
        row[Self::METRICS].copy_from_slice(&[m.ofr, m.apd, m.dur, m.pr]);
        row
    }

    /// Unnormalised row for the window being decided: metrics are unknown
    /// and left at zero.
    pub fn decision_row(&self, grid: usize, tod: TimeOfDay, snap: &GridSnapshot, radius: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.dim()];
        row[0] = f64::from(snap.n_idle);
        row[1] = f64::from(snap.n_open);
        row[2] = f64::from(snap.n_vehicles);
        row[Self::RADIUS] = radius;
        row[Self::MARKET + grid] = 1.0;
        row[Self::MARKET + self.grid_count + tod.code()] = 1.0;
        row
    }
}

/// Everything a predictor may use to decide one grid's radius.
#[derive(Debug, Clone)]
pub struct DecisionQuery<'a> {
    pub grid: usize,
    pub window: usize,
    pub tod: TimeOfDay,
    /// This grid's completed windows, oldest first.
    pub history: Vec<&'a MarketWindow>,
    pub snapshot: GridSnapshot,
}

/// Normalised `T × D` input for one candidate.
///
/// The last `T − 1` history rows fill the top of the sequence, padded with
/// zero rows during cold start; the final row carries the current snapshot
/// and `radius`. Padding and the final row's metric cells are zero after
/// normalisation, which is the mean of the training distribution.
pub fn build_features(
    layout: &FeatureLayout,
    query: &DecisionQuery<'_>,
    radius: f64,
    stats: &NormStats<f64>,
) -> Result<FeatureSequence<f64>> {
    let (t, d) = (layout.seq_len, layout.dim());
    if stats.dim() != d {
        return Err(Error::Shape(format!("feature statistics have {} dims, layout {d}", stats.dim())));
    }
    if query.grid >= layout.grid_count {
        return Err(Error::Config(format!("grid {} outside layout of {}", query.grid, layout.grid_count)));
    }
    let mut seq = FeatureSequence::zeros(t, d);
    let keep = query.history.len().min(t - 1);
    let recent = &query.history[query.history.len() - keep..];
    for (k, w) in recent.iter().enumerate() {
        seq.row_mut(t - 1 - keep + k).copy_from_slice(&stats.apply(&layout.window_row(w)));
    }
    let mut last = stats.apply(&layout.decision_row(query.grid, query.tod, &query.snapshot, radius));
    for c in FeatureLayout::METRICS {
        last[c] = 0.0;
    }
    seq.row_mut(t - 1).copy_from_slice(&last);
    Ok(seq)
}

/// Per-metric emphasis of the composite score, in `[o, d, u, p]` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights(pub [f64; 4]);

impl Default for ScoreWeights {
    fn default() -> Self {
        Self([1.0; 4])
    }
}

impl ScoreWeights {
    /// +1 for metrics to maximise, −1 for pickup distance.
    pub const SENSE: [f64; 4] = [1.0, -1.0, 1.0, 1.0];
}

/// `Σ_k sense_k · w_k · z_k` with each metric z-scored by `stats`.
pub fn composite_score(pred: [f64; 4], stats: &NormStats<f64>, weights: &ScoreWeights) -> f64 {
    (0..4)
        .map(|k| ScoreWeights::SENSE[k] * weights.0[k] * stats.z(k, pred[k]))
        .sum()
}

/// Maps a decision query to predicted `[o, d, u, p]` for each candidate, in
/// the metrics' natural units.
pub trait Predictor {
    fn predict(&self, query: &DecisionQuery<'_>, candidates: &[f64]) -> Result<Vec<[f64; 4]>>;
}

impl<F> Predictor for F
where
    F: Fn(&DecisionQuery<'_>, f64) -> [f64; 4],
{
    fn predict(&self, query: &DecisionQuery<'_>, candidates: &[f64]) -> Result<Vec<[f64; 4]>> {
        Ok(candidates.iter().map(|r| self(query, *r)).collect())
    }
}

/// A trained checkpoint used as a predictor.
#[derive(Debug, Clone)]
pub struct TebPredictor {
    checkpoint: Checkpoint<f64>,
    layout: FeatureLayout,
}

impl TebPredictor {
    pub fn new(checkpoint: Checkpoint<f64>, grid_count: usize) -> Result<Self> {
        let cfg = checkpoint.config();
        let layout = FeatureLayout::new(cfg.seq_len, grid_count)?;
        if cfg.input_dim != layout.dim() || cfg.n_tasks != 4 {
            return Err(Error::CheckpointMismatch(format!(
                "model expects {} features and {} tasks, scenario needs {} and 4",
                cfg.input_dim,
                cfg.n_tasks,
                layout.dim()
            )));
        }
        Ok(Self { checkpoint, layout })
    }

    pub fn checkpoint(&self) -> &Checkpoint<f64> {
        &self.checkpoint
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }
}

impl Predictor for TebPredictor {
    fn predict(&self, query: &DecisionQuery<'_>, candidates: &[f64]) -> Result<Vec<[f64; 4]>> {
        let seqs = candidates
            .iter()
            .map(|r| build_features(&self.layout, query, *r, &self.checkpoint.feature_stats))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&FeatureSequence<f64>> = seqs.iter().collect();
        let batch = crate::nn::stack_sequences(&refs)?;
        let out: Tensor<f64> = self.checkpoint.model.forward(&batch)?;
        Ok(out
            .data()
            .chunks(4)
            .map(|z| {
                let raw = self.checkpoint.label_stats.invert(z);
                [raw[0], raw[1], raw[2], raw[3]]
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateEval {
    pub radius: f64,
    pub predicted: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusDecision {
    pub grid: usize,
    pub window: usize,
    pub chosen: f64,
    pub candidates: Vec<CandidateEval>,
}

/// Scores every candidate and returns the argmax, preferring the smaller
/// radius on ties.
pub fn choose_radius<P: Predictor + ?Sized>(
    query: &DecisionQuery<'_>,
    predictor: &P,
    candidates: &CandidateSet,
    stats: &NormStats<f64>,
    weights: &ScoreWeights,
) -> Result<RadiusDecision> {
    let preds = predictor.predict(query, candidates.radii())?;
    if preds.len() != candidates.len() {
        return Err(Error::Shape(format!(
            "predictor returned {} rows for {} candidates",
            preds.len(),
            candidates.len()
        )));
    }
    let evals: Vec<CandidateEval> = candidates
        .radii()
        .iter()
        .zip(preds)
        .map(|(&radius, predicted)| CandidateEval {
            radius,
            predicted,
            score: composite_score(predicted, stats, weights),
        })
        .collect();
    let mut best = 0;
    for (k, e) in evals.iter().enumerate() {
        if e.score > evals[best].score {
            best = k;
        }
    }
    Ok(RadiusDecision {
        grid: query.grid,
        window: query.window,
        chosen: evals[best].radius,
        candidates: evals,
    })
}

/// The online controller: one [`choose_radius`] per grid per window, with
/// every decision kept for audit.
#[derive(Debug, Clone)]
pub struct Dbras<P> {
    predictor: P,
    candidates: CandidateSet,
    stats: NormStats<f64>,
    weights: ScoreWeights,
    history_len: usize,
    decisions: Vec<RadiusDecision>,
}

impl<P: Predictor> Dbras<P> {
    /// `stats` z-score the predicted metrics; `history_len` bounds how many
    /// past windows each query carries.
    pub fn new(predictor: P, candidates: CandidateSet, stats: NormStats<f64>, history_len: usize) -> Result<Self> {
        if stats.dim() != 4 {
            return Err(Error::Shape(format!("score statistics need 4 metrics, got {}", stats.dim())));
        }
        Ok(Self {
            predictor,
            candidates,
            stats,
            weights: ScoreWeights::default(),
            history_len,
            decisions: Vec::new(),
        })
    }

    pub fn with_weights(mut self, weights: ScoreWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn decisions(&self) -> &[RadiusDecision] {
        &self.decisions
    }

    pub fn into_decisions(self) -> Vec<RadiusDecision> {
        self.decisions
    }
}

impl Dbras<TebPredictor> {
    pub fn from_checkpoint(checkpoint: Checkpoint<f64>, grid_count: usize, candidates: CandidateSet) -> Result<Self> {
        let stats = checkpoint.label_stats.clone();
        let seq_len = checkpoint.config().seq_len;
        Self::new(TebPredictor::new(checkpoint, grid_count)?, candidates, stats, seq_len)
    }
}

/// Query for one grid at the boundary described by `ctx`.
pub fn decision_query<'a>(ctx: &DecisionContext<'a>, grid: usize, history_len: usize) -> DecisionQuery<'a> {
    let all: Vec<&MarketWindow> = ctx.grid_history(grid).collect();
    let keep = all.len().saturating_sub(history_len);
    DecisionQuery {
        grid,
        window: ctx.window,
        tod: ctx.tod,
        history: all[keep..].to_vec(),
        snapshot: ctx.snapshot[grid],
    }
}

impl<P: Predictor> RadiusSource for Dbras<P> {
    fn radii(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ctx.grid_count());
        for grid in 0..ctx.grid_count() {
            let query = decision_query(ctx, grid, self.history_len);
            let d = choose_radius(&query, &self.predictor, &self.candidates, &self.stats, &self.weights)?;
            out.push(d.chosen);
            self.decisions.push(d);
        }
        Ok(out)
    }
}

/// Uniform random radius per grid per window, for data collection.
#[derive(Debug, Clone)]
pub struct RandomRadius {
    candidates: CandidateSet,
    rng: ChaCha8Rng,
}

impl RandomRadius {
    pub fn new(candidates: CandidateSet, seed: u64) -> Self {
        Self {
            candidates,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl RadiusSource for RandomRadius {
    fn radii(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        let r = self.candidates.radii();
        Ok((0..ctx.grid_count()).map(|_| r[self.rng.random_range(0..r.len())]).collect())
    }
}

#[derive(Debug, Serialize)]
struct DecisionLogRow {
    grid: usize,
    window: usize,
    #[serde(rename = "R")]
    radius: f64,
    o_hat: f64,
    d_hat: f64,
    u_hat: f64,
    p_hat: f64,
    score: f64,
    chosen: bool,
}

/// One row per (grid, window, candidate).
pub fn write_decision_log(path: impl AsRef<Path>, decisions: &[RadiusDecision]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for d in decisions {
        for c in &d.candidates {
            w.serialize(DecisionLogRow {
                grid: d.grid,
                window: d.window,
                radius: c.radius,
                o_hat: c.predicted[0],
                d_hat: c.predicted[1],
                u_hat: c.predicted[2],
                p_hat: c.predicted[3],
                score: c.score,
                chosen: c.radius == d.chosen,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
