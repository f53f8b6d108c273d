//! Task weighting from per-task loss histories.
//!
//! Five strategies share one shape: aggregate the recent losses of every
//! task into a single number, then turn those numbers into a weight vector
//! on the probability simplex.
//!
//! | kind | aggregation            | weights              |
//! |------|------------------------|----------------------|
//! | FW   | none                   | uniform              |
//! | AM   | uniform over `T + 1`   | one-hot on the max   |
//! | WAM  | uniform over `T + 1`   | proportional         |
//! | ESM  | exponential decay      | one-hot on the max   |
//! | WESM | exponential decay      | proportional         |

mod trainer;

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

pub use trainer::{train, write_loss_curve, CurveRow, Dataset, Split, TrainConfig, TrainReport};

/// The last `capacity` per-task loss vectors, newest at the front.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory<T: Scalar> {
    capacity: usize,
    tasks: usize,
    entries: VecDeque<Vec<T>>,
}

impl<T: Scalar> LossHistory<T> {
    pub fn new(capacity: usize, tasks: usize) -> Result<Self> {
        if capacity == 0 || tasks == 0 {
            return Err(Error::Config(format!(
                "loss history needs capacity >= 1 and tasks >= 1 (got {capacity}, {tasks})"
            )));
        }
        Ok(Self {
            capacity,
            tasks,
            entries: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records one step's losses, evicting the oldest entry when full.
    pub fn push(&mut self, losses: &[T]) -> Result<()> {
        check_losses(losses, self.tasks)?;
        self.entries.push_front(losses.to_vec());
        self.entries.truncate(self.capacity);
        Ok(())
    }

    /// Losses recorded `age` steps ago (`age = 1` is the latest push).
    pub fn get(&self, age: usize) -> Option<&[T]> {
        age.checked_sub(1).and_then(|i| self.entries.get(i)).map(Vec::as_slice)
    }
}

fn check_losses<T: Scalar>(losses: &[T], tasks: usize) -> Result<()> {
    if losses.len() != tasks {
        return Err(Error::Shape(format!("{} losses for {tasks} tasks", losses.len())));
    }
    if let Some(bad) = losses.iter().find(|l| !l.is_finite() || **l < T::zero()) {
        return Err(Error::Config(format!("loss {bad} is not a finite non-negative number")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StrategyKind {
    Fw,
    Am,
    Wam,
    Esm,
    Wesm,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [Self::Fw, Self::Am, Self::Wam, Self::Esm, Self::Wesm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fw => "FW",
            Self::Am => "AM",
            Self::Wam => "WAM",
            Self::Esm => "ESM",
            Self::Wesm => "WESM",
        }
    }

    /// Whether older losses are discounted by powers of the smoothing factor.
    pub fn decays(self) -> bool {
        matches!(self, Self::Esm | Self::Wesm)
    }

    /// Whether only the worst task is updated.
    pub fn selects_one(self) -> bool {
        matches!(self, Self::Am | Self::Esm)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected FW, AM, WAM, ESM or WESM)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Smoothing factor for the decayed aggregation.
    pub gamma: f64,
    /// Number of past steps kept per task.
    pub history: usize,
    /// Training steps between weight recomputations.
    pub refresh: usize,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            gamma: 0.1,
            history: 10,
            refresh: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.history == 0 || self.refresh == 0 {
            return Err(Error::Config("history length and refresh cadence must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// `Σ_{j=0}^{T} γ^j` in closed form.
pub fn normalization_factor<T: Scalar>(gamma: T, history: usize) -> Result<T> {
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let exp = i32::try_from(history + 1).map_err(|_| Error::Config("history too long".into()))?;
    Ok((T::one() - gamma.powi(exp)) / (T::one() - gamma))
}

/// `(Σ_{j=1}^{T} γ^j L_{t−j} + l_t) / n̄` per task, where `T` is the history
/// capacity and steps not yet recorded count as zero.
pub fn aggregate_decayed<T: Scalar>(history: &LossHistory<T>, current: &[T], gamma: T, nbar: T) -> Vec<T> {
    let mut out = current.to_vec();
    let mut weight = T::one();
    for age in 1..=history.capacity() {
        weight = weight * gamma;
        if let Some(past) = history.get(age) {
            for (o, l) in out.iter_mut().zip(past) {
                *o = *o + weight * *l;
            }
        }
    }
    out.into_iter().map(|v| v / nbar).collect()
}

/// `(Σ_{j=1}^{T} L_{t−j} + l_t) / (T + 1)` per task, missing steps as zero.
pub fn aggregate_uniform<T: Scalar>(history: &LossHistory<T>, current: &[T]) -> Vec<T> {
    let mut out = current.to_vec();
    for age in 1..=history.len() {
        for (o, l) in out.iter_mut().zip(history.get(age).unwrap_or_default()) {
            *o = *o + *l;
        }
    }
    let denom = T::lit((history.capacity() + 1) as f64);
    out.into_iter().map(|v| v / denom).collect()
}

/// Maps aggregated losses to task weights on the simplex.
pub fn weights<T: Scalar>(kind: StrategyKind, aggregated: &[T]) -> Vec<T> {
    let m = aggregated.len();
    let uniform = || vec![T::one() / T::lit(m as f64); m];
    let total: T = aggregated.iter().copied().sum();
    if kind == StrategyKind::Fw || !(total > T::zero()) || !total.is_finite() {
        return uniform();
    }
    if kind.selects_one() {
        let mut best = 0;
        for (i, l) in aggregated.iter().enumerate() {
            if *l > aggregated[best] {
                best = i;
            }
        }
        let mut w = vec![T::zero(); m];
        w[best] = T::one();
        w
    } else {
        aggregated.iter().map(|l| *l / total).collect()
    }
}

/// Loss history plus the weights currently in force.
#[derive(Debug, Clone)]
pub struct TaskWeighter<T: Scalar> {
    config: StrategyConfig,
    history: LossHistory<T>,
    nbar: T,
    weights: Vec<T>,
    steps: usize,
}

impl<T: Scalar> TaskWeighter<T> {
    pub fn new(config: StrategyConfig, tasks: usize) -> Result<Self> {
        config.validate()?;
        let nbar = normalization_factor(T::lit(config.gamma), config.history)?;
        Ok(Self {
            history: LossHistory::new(config.history, tasks)?,
            nbar,
            weights: vec![T::one() / T::lit(tasks as f64); tasks],
            steps: 0,
            config,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Aggregated losses for the current step without mutating anything.
    pub fn aggregate(&self, current: &[T]) -> Vec<T> {
        if self.config.kind.decays() {
            aggregate_decayed(&self.history, current, T::lit(self.config.gamma), self.nbar)
        } else {
            aggregate_uniform(&self.history, current)
        }
    }

    /// Feeds this step's losses. Recomputes the weights on refresh steps and
    /// returns whether it did.
    pub fn observe(&mut self, losses: &[T]) -> Result<bool> {
        check_losses(losses, self.history.tasks())?;
        let refresh = self.steps.is_multiple_of(self.config.refresh);
        if refresh {
            self.weights = weights(self.config.kind, &self.aggregate(losses));
        }
        self.history.push(losses)?;
        self.steps += 1;
        Ok(refresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(cap: usize, entries: &[&[f64]]) -> LossHistory<f64> {
        let mut h = LossHistory::new(cap, entries.first().map_or(1, |e| e.len())).unwrap();
        for e in entries {
            h.push(e).unwrap();
        }
        h
    }

    #[test]
    fn normalization_factor_examples() {
        assert!((normalization_factor(0.5_f64, 2).unwrap() - 1.75).abs() < 1e-15);
        assert!((normalization_factor(0.1_f64, 10).unwrap() - 1.111_111_111_10).abs() < 1e-11);
        assert!(normalization_factor(1.0, 3).is_err());
        assert!(normalization_factor(0.0, 3).is_err());
    }

    #[test]
    fn decayed_aggregation_examples() {
        let h = hist(1, &[&[0.4]]);
        let nbar = normalization_factor(0.5, 1).unwrap();
        assert!((aggregate_decayed(&h, &[0.2], 0.5, nbar)[0] - 0.4 / 1.5).abs() < 1e-15);

        let empty = LossHistory::new(4, 1).unwrap();
        let nbar: f64 = normalization_factor(0.3, 4).unwrap();
        assert!((aggregate_decayed(&empty, &[0.6], 0.3, nbar)[0] - 0.6 / nbar).abs() < 1e-15);
    }

    #[test]
    fn decayed_aggregation_of_constants_is_the_constant() {
        let h = hist(5, &[&[0.7][..]; 5]);
        let nbar = normalization_factor(0.4, 5).unwrap();
        assert!((aggregate_decayed(&h, &[0.7], 0.4, nbar)[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn uniform_aggregation_examples() {
        let h = hist(1, &[&[0.4]]);
        assert!((aggregate_uniform(&h, &[0.2])[0] - 0.3).abs() < 1e-15);
        let h = hist(3, &[&[2.5][..]; 3]);
        assert_eq!(aggregate_uniform(&h, &[2.5])[0], 2.5);
        let empty = LossHistory::new(3, 1).unwrap();
        assert_eq!(aggregate_uniform(&empty, &[0.8])[0], 0.2);
    }

    #[test]
    fn history_evicts_oldest() {
        let h = hist(2, &[&[1.0], &[2.0], &[3.0]]);
        assert_eq!(h.len(), 2);
        assert_eq!(h.get(1), Some(&[3.0][..]));
        assert_eq!(h.get(2), Some(&[2.0][..]));
        assert_eq!(h.get(3), None);
        assert_eq!(h.get(0), None);
    }

    #[test]
    fn history_rejects_bad_losses() {
        let mut h = LossHistory::<f64>::new(2, 2).unwrap();
        assert!(h.push(&[1.0]).is_err());
        assert!(h.push(&[1.0, f64::NAN]).is_err());
        assert!(h.push(&[-1.0, 0.0]).is_err());
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weights(StrategyKind::Wesm, &[2.0, 1.0, 1.0]), vec![0.5, 0.25, 0.25]);
        assert_eq!(weights(StrategyKind::Am, &[0.3, 0.1, 0.1, 0.1]), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(weights(StrategyKind::Fw, &[9.0, 0.1, 3.0, 0.0]), vec![0.25; 4]);
        assert_eq!(weights(StrategyKind::Esm, &[0.2, 0.5, 0.5]), vec![0.0, 1.0, 0.0]);
        assert_eq!(weights(StrategyKind::Wam, &[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().to_lowercase().parse::<StrategyKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("xyz".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let cfg = StrategyConfig::new(StrategyKind::Wesm);
        cfg.save(&path).unwrap();
        assert_eq!(StrategyConfig::load(&path).unwrap(), cfg);
        for bad in [
            StrategyConfig { gamma: 1.0, ..cfg.clone() },
            StrategyConfig { history: 0, ..cfg.clone() },
            StrategyConfig { refresh: 0, ..cfg.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn weighter_holds_weights_between_refreshes() {
        let cfg = StrategyConfig {
            refresh: 3,
            ..StrategyConfig::new(StrategyKind::Am)
        };
        let mut w = TaskWeighter::<f64>::new(cfg, 2).unwrap();
        assert!(w.observe(&[1.0, 0.0]).unwrap());
        assert_eq!(w.weights(), &[1.0, 0.0]);
        assert!(!w.observe(&[0.0, 9.0]).unwrap());
        assert!(!w.observe(&[0.0, 9.0]).unwrap());
        assert_eq!(w.weights(), &[1.0, 0.0]);
        assert!(w.observe(&[0.0, 9.0]).unwrap());
        assert_eq!(w.weights(), &[0.0, 1.0]);
    }

    proptest::proptest! {
        #[test]
        fn weights_lie_on_the_simplex(losses in proptest::collection::vec(0.0f64..100.0, 1..8)) {
            for k in StrategyKind::ALL {
                let w = weights(k, &losses);
                proptest::prop_assert!(w.iter().all(|v| *v >= 0.0));
                proptest::prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn weights_are_scale_equivariant(
            losses in proptest::collection::vec(0.01f64..100.0, 1..8),
            c in 1e-3f64..1e3,
        ) {
            let scaled: Vec<f64> = losses.iter().map(|l| l * c).collect();
            for k in StrategyKind::ALL {
                let (a, b) = (weights(k, &losses), weights(k, &scaled));
                for (x, y) in a.iter().zip(&b) {
                    proptest::prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
