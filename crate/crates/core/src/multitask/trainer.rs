use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{StrategyConfig, TaskWeighter};
use crate::nn::{per_task_mse, Adam, TebModel, Tensor};
use crate::{Error, Result, Scalar};

/// Normalised inputs `[N, T, D]` with targets `[N, m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    x: Tensor<T>,
    y: Tensor<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Tensor<T>, y: Tensor<T>) -> Result<Self> {
        match (x.shape(), y.shape()) {
            ([n, _, _], [ny, _]) if n == ny => Ok(Self { x, y }),
            (xs, ys) => Err(Error::Shape(format!("dataset inputs {xs:?} vs targets {ys:?}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tasks(&self) -> usize {
        self.y.shape()[1]
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.x
    }

    pub fn targets(&self) -> &Tensor<T> {
        &self.y
    }

    /// Copies the listed samples into a new batch.
    pub fn select(&self, idx: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let (xs, ys) = (&self.x.shape()[1..], &self.y.shape()[1..]);
        let (xw, yw) = (xs.iter().product::<usize>(), ys[0]);
        let mut xd = Vec::with_capacity(idx.len() * xw);
        let mut yd = Vec::with_capacity(idx.len() * yw);
        for &i in idx {
            xd.extend_from_slice(&self.x.data()[i * xw..(i + 1) * xw]);
            yd.extend_from_slice(&self.y.data()[i * yw..(i + 1) * yw]);
        }
        let mut xshape = vec![idx.len()];
        xshape.extend_from_slice(xs);
        (
            Tensor::new(xshape, xd).expect("consistent batch shape"),
            Tensor::new(vec![idx.len(), yw], yd).expect("consistent batch shape"),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T: Scalar> {
    pub train: Dataset<T>,
    pub test: Dataset<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub strategy: StrategyConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Steps between test-set evaluations.
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(strategy: StrategyConfig) -> Self {
        Self {
            eval_every: strategy.refresh,
            strategy,
            lr: 1e-3,
            batch_size: 1024,
            epochs: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch size and evaluation cadence must be >= 1".into()));
        }
        Ok(())
    }
}

/// One task's losses and weight at one step. `test_loss` is only present on
/// evaluation steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub step: usize,
    pub task: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub curve: Vec<CurveRow>,
    /// Per-task test loss after the last step.
    pub final_test: Vec<f64>,
}

impl TrainReport {
    /// Weight vectors in force at each step, as recorded in the curve.
    pub fn weight_trajectory(&self, tasks: usize) -> Vec<Vec<f64>> {
        self.curve.chunks(tasks).map(|c| c.iter().map(|r| r.weight).collect()).collect()
    }
}

fn evaluate<T: Scalar>(model: &TebModel<T>, data: &Dataset<T>, chunk: usize) -> Result<Vec<f64>> {
    let m = data.tasks();
    let mut sums = vec![0.0; m];
    let idx: Vec<usize> = (0..data.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let (x, y) = data.select(part);
        let pred = model.forward(&x)?;
        for (s, l) in sums.iter_mut().zip(per_task_mse(&pred, &y)) {
            *s += l.as_f64() * part.len() as f64;
        }
    }
    Ok(sums.into_iter().map(|s| s / data.len().max(1) as f64).collect())
}

/// Trains `model` in place with the configured weighting strategy.
///
/// Every step computes the batch's per-task losses, feeds them to the
/// strategy (which may refresh its weights), backpropagates the weighted
/// objective and takes one Adam step.
pub fn train<T: Scalar>(model: &mut TebModel<T>, data: &Split<T>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Empty("training needs non-empty train and test sets".into()));
    }
    let m = model.config.n_tasks;
    if data.train.tasks() != m || data.test.tasks() != m {
        return Err(Error::Shape(format!("dataset has {} tasks, model {m}", data.train.tasks())));
    }

    let mut weighter = TaskWeighter::<T>::new(cfg.strategy.clone(), m)?;
    let mut adam = Adam::new(T::lit(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut curve = Vec::new();
    let mut last_finite: Vec<f64> = Vec::new();
    let mut step = 0;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = data.train.select(batch);
            let pass = model.record(&x)?;
            let losses = pass.task_losses(&y)?;
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(Error::Diverged { step, last_finite });
            }
            weighter.observe(&losses)?;
            let w = weighter.weights().to_vec();
            let back = pass.backward(&y, &w).map_err(|e| match e {
                Error::Diverged { .. } => Error::Diverged {
                    step,
                    last_finite: last_finite.clone(),
                },
                other => other,
            })?;
            adam.step(model.params.slots_mut(), back.grads.slots());
            if !model.params.all_finite() {
                return Err(Error::Diverged { step, last_finite });
            }
            last_finite = losses.iter().map(|l| l.as_f64()).collect();

            let test = if step % cfg.eval_every == 0 {
                Some(evaluate(model, &data.test, cfg.batch_size)?)
            } else {
                None
            };
            for task in 0..m {
                curve.push(CurveRow {
                    step,
                    task,
                    train_loss: last_finite[task],
                    test_loss: test.as_ref().map(|t| t[task]),
                    weight: w[task].as_f64(),
                });
            }
            step += 1;
        }
    }

    Ok(TrainReport {
        steps: step,
        curve,
        final_test: evaluate(model, &data.test, cfg.batch_size)?,
    })
}

/// Writes `step,task,train_loss,test_loss,weight` rows; missing test losses
/// are left empty.
pub fn write_loss_curve(path: impl AsRef<Path>, rows: &[CurveRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multitask::StrategyKind;
    use crate::nn::TebConfig;
    use rand::Rng;

    fn tiny_config(tasks: usize) -> TebConfig {
        TebConfig {
            d_model: 8,
            embed_hidden: 8,
            block_hidden: 8,
            head_hidden: 8,
            n_blocks: 1,
            n_tasks: tasks,
            ..TebConfig::new(3, 2)
        }
    }

    /// Targets are linear functions of the mean input, with per-task scales.
    fn regression(n: usize, scales: &[f64], seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = Vec::new();
        for i in 0..n {
            let s: f64 = x[i * 6..i * 6 + 6].iter().sum();
            for sc in scales {
                y.push(sc * (s * 0.5 + rng.random_range(-0.5..0.5)));
            }
        }
        Dataset::new(
            Tensor::new(vec![n, 2, 3], x).unwrap(),
            Tensor::new(vec![n, scales.len()], y).unwrap(),
        )
        .unwrap()
    }

    fn split(scales: &[f64]) -> Split<f64> {
        Split {
            train: regression(256, scales, 1),
            test: regression(64, scales, 2),
        }
    }

    fn run(kind: StrategyKind, scales: &[f64], epochs: usize) -> TrainReport {
        let mut model = TebModel::new(tiny_config(scales.len()), 3).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            epochs,
            lr: 3e-3,
            ..TrainConfig::new(StrategyConfig::new(kind))
        };
        train(&mut model, &split(scales), &cfg).unwrap()
    }

    #[test]
    fn dataset_shapes_are_checked() {
        let x = Tensor::<f64>::zeros(&[4, 2, 3]);
        assert!(Dataset::new(x.clone(), Tensor::zeros(&[3, 2])).is_err());
        let d = Dataset::new(x, Tensor::zeros(&[4, 2])).unwrap();
        let (bx, by) = d.select(&[3, 1]);
        assert_eq!(bx.shape(), &[2, 2, 3]);
        assert_eq!(by.shape(), &[2, 2]);
    }

    #[test]
    fn weights_sum_to_one_at_every_step() {
        for kind in StrategyKind::ALL {
            let report = run(kind, &[1.0, 2.0, 1.0, 1.0], 2);
            for w in report.weight_trajectory(4) {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{kind}: {w:?}");
                if kind.selects_one() {
                    assert_eq!(w.iter().filter(|v| **v == 1.0).count(), 1);
                }
            }
        }
    }

    #[test]
    fn training_reduces_test_loss() {
        let report = run(StrategyKind::Fw, &[1.0, 1.0], 30);
        let first = report.curve.iter().find(|r| r.test_loss.is_some()).unwrap();
        let start: f64 = report.curve[..2].iter().map(|r| r.test_loss.unwrap()).sum();
        let end: f64 = report.final_test.iter().sum();
        assert_eq!(first.step, 0);
        assert!(end < 0.5 * start, "{start} -> {end}");
    }

    #[test]
    fn symmetric_tasks_get_near_uniform_weights() {
        let report = run(StrategyKind::Wesm, &[1.0, 1.0, 1.0, 1.0], 40);
        let traj = report.weight_trajectory(4);
        let late = &traj[traj.len() / 2..];
        for task in 0..4 {
            let avg = late.iter().map(|w| w[task]).sum::<f64>() / late.len() as f64;
            assert!((avg - 0.25).abs() < 0.05, "task {task}: {avg}");
        }
    }

    #[test]
    fn argmax_prefers_large_scale_task_early() {
        let report = run(StrategyKind::Am, &[1.0, 1.0, 10.0, 1.0], 3);
        let refreshes: Vec<_> = report
            .weight_trajectory(4)
            .into_iter()
            .step_by(10)
            .collect();
        let picked = refreshes.iter().filter(|w| w[2] == 1.0).count();
        assert!(picked * 10 > refreshes.len() * 8, "{picked}/{}", refreshes.len());
    }

    #[test]
    fn loss_curve_csv_has_expected_columns() {
        let report = run(StrategyKind::Wam, &[1.0, 1.0], 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_loss_curve(&path, &report.curve).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,task,train_loss,test_loss,weight"));
        assert_eq!(lines.count(), report.curve.len());
    }

    #[test]
    fn empty_split_is_rejected() {
        let mut model = TebModel::<f64>::new(tiny_config(2), 0).unwrap();
        let data = Split {
            train: Dataset::new(Tensor::zeros(&[0, 2, 3]), Tensor::zeros(&[0, 2])).unwrap(),
            test: regression(4, &[1.0, 1.0], 0),
        };
        let cfg = TrainConfig::new(StrategyConfig::new(StrategyKind::Fw));
        assert!(matches!(train(&mut model, &data, &cfg), Err(Error::Empty(_))));
    }
}
