//! Driver order-grabbing behaviour: a logistic acceptance model over pickup
//! distance and fare with a per-decision Gaussian noise term.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AcceptanceModel<T: Scalar> {
    pub beta0: T,
    /// Per km of pickup distance.
    pub beta1: T,
    /// Per currency unit of fare.
    pub beta2: T,
    /// Standard deviation of the logit noise.
    pub sigma: T,
}

impl<T: Scalar> Default for AcceptanceModel<T> {
    fn default() -> Self {
        Self {
            beta0: T::lit(1.0),
            beta1: T::lit(-0.8),
            beta2: T::lit(0.02),
            sigma: T::one(),
        }
    }
}

impl<T: Scalar> AcceptanceModel<T> {
    pub fn new(beta0: T, beta1: T, beta2: T, sigma: T) -> Result<Self> {
        let m = Self { beta0, beta1, beta2, sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.beta0, self.beta1, self.beta2, self.sigma].iter().all(|v| v.is_finite());
        if !finite || self.sigma < T::zero() {
            return Err(Error::Config(format!("invalid acceptance model {self:?}")));
        }
        Ok(())
    }

    pub fn logit(&self, pickup_km: T, fare: T) -> T {
        self.beta0 + self.beta1 * pickup_km + self.beta2 * fare
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::lit(PROB_FLOOR);
    p.max(lo).min(T::one() - lo)
}

/// Acceptance probability for a given noise draw, clamped to `[1e-12, 1 − 1e-12]`.
pub fn accept_probability<T: Scalar>(model: &AcceptanceModel<T>, pickup_km: T, fare: T, eps: T) -> T {
    clamp_prob(sigmoid(model.logit(pickup_km, fare) + eps))
}

/// Draws a fresh noise term, then a Bernoulli decision.
pub fn sample_accept<T: Scalar, R: Rng + ?Sized>(model: &AcceptanceModel<T>, pickup_km: T, fare: T, rng: &mut R) -> bool {
    let z: f64 = rng.sample(StandardNormal);
    let p = accept_probability(model, pickup_km, fare, model.sigma * T::lit(z));
    let u: f64 = rng.random();
    u < p.as_f64()
}

/// Binary cross-entropy of one prediction.
pub fn log_loss<T: Scalar>(y: T, y_hat: T) -> T {
    let p = clamp_prob(y_hat);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

/// One labelled decision: pickup distance, fare, accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DecisionSample<T: Scalar> {
    pub pickup_km: T,
    pub fare: T,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit<T: Scalar> {
    pub model: AcceptanceModel<T>,
    pub final_loss: T,
    /// Mean log loss before each epoch's update, plus the final value.
    pub loss_curve: Vec<T>,
    /// Norm of the loss gradient w.r.t. the original-scale coefficients.
    pub grad_norm: T,
}

struct Standardizer<T> {
    mean: [T; 2],
    scale: [T; 2],
}

/// Full-batch gradient descent on the mean log loss, noise term omitted.
///
/// Inputs are standardised internally for conditioning and the coefficients
/// are mapped back to the original units; the returned model keeps the
/// default noise scale of 1.
pub fn fit_logistic<T: Scalar>(samples: &[DecisionSample<T>], lr: T, epochs: usize) -> Result<LogisticFit<T>> {
    let positives = samples.iter().filter(|s| s.accepted).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::Degenerate("logistic fit needs both accepted and rejected samples".into()));
    }
    let n = T::lit(samples.len() as f64);
    let col = |s: &DecisionSample<T>, j: usize| if j == 0 { s.pickup_km } else { s.fare };
    let mut std = Standardizer {
        mean: [T::zero(); 2],
        scale: [T::one(); 2],
    };
    for j in 0..2 {
        let mean = samples.iter().map(|s| col(s, j)).sum::<T>() / n;
        let var = samples.iter().map(|s| (col(s, j) - mean).powi(2)).sum::<T>() / n;
        std.mean[j] = mean;
        std.scale[j] = if var > T::lit(1e-24) { var.sqrt() } else { T::one() };
    }
    let xs: Vec<[T; 3]> = samples
        .iter()
        .map(|s| {
            [
                T::one(),
                (s.pickup_km - std.mean[0]) / std.scale[0],
                (s.fare - std.mean[1]) / std.scale[1],
            ]
        })
        .collect();
    let ys: Vec<T> = samples.iter().map(|s| if s.accepted { T::one() } else { T::zero() }).collect();

    let loss_and_grad = |w: &[T; 3]| {
        let mut loss = T::zero();
        let mut grad = [T::zero(); 3];
        for (x, y) in xs.iter().zip(&ys) {
            let p = clamp_prob(sigmoid(w[0] * x[0] + w[1] * x[1] + w[2] * x[2]));
            loss = loss + log_loss(*y, p);
            for k in 0..3 {
                grad[k] = grad[k] + (p - *y) * x[k];
            }
        }
        (loss / n, grad.map(|g| g / n))
    };

    let mut w = [T::zero(); 3];
    let mut curve = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let (loss, grad) = loss_and_grad(&w);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: curve.len(),
                last_finite: curve.iter().map(|v: &T| v.as_f64()).collect(),
            });
        }
        curve.push(loss);
        for k in 0..3 {
            w[k] = w[k] - lr * grad[k];
        }
    }
    let (final_loss, _) = loss_and_grad(&w);
    curve.push(final_loss);

    // Undo the standardisation: logit = w0 + w1 (x1 - m1)/s1 + w2 (x2 - m2)/s2.
    let beta1 = w[1] / std.scale[0];
    let beta2 = w[2] / std.scale[1];
    let beta0 = w[0] - beta1 * std.mean[0] - beta2 * std.mean[1];
    let grad_norm = loss_grad_norm(samples, beta0, beta1, beta2);

    Ok(LogisticFit {
        model: AcceptanceModel {
            beta0,
            beta1,
            beta2,
            sigma: T::one(),
        },
        final_loss,
        loss_curve: curve,
        grad_norm,
    })
}

/// Norm of the mean-log-loss gradient at the given original-scale coefficients.
fn loss_grad_norm<T: Scalar>(samples: &[DecisionSample<T>], b0: T, b1: T, b2: T) -> T {
    let n = T::lit(samples.len() as f64);
    let mut g = [T::zero(); 3];
    for s in samples {
        let y = if s.accepted { T::one() } else { T::zero() };
        let r = sigmoid(b0 + b1 * s.pickup_km + b2 * s.fare) - y;
        g[0] = g[0] + r;
        g[1] = g[1] + r * s.pickup_km;
        g[2] = g[2] + r * s.fare;
    }
    g.iter().map(|v| (*v / n).powi(2)).sum::<T>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(b0: f64, b1: f64, b2: f64) -> AcceptanceModel<f64> {
        AcceptanceModel::new(b0, b1, b2, 1.0).unwrap()
    }

    #[test]
    fn zero_logit_gives_one_half() {
        assert_eq!(accept_probability(&m(0.0, -1.0, 0.5), 2.0, 4.0, 0.0), 0.5);
        assert_eq!(accept_probability(&m(0.0, 0.0, 0.0), 17.0, 3.0, 0.0), 0.5);
    }

    #[test]
    fn probability_stays_in_open_interval() {
        let p_hi = accept_probability(&m(1e6, 0.0, 0.0), 0.0, 0.0, 0.0);
        let p_lo = accept_probability(&m(-1e6, 0.0, 0.0), 0.0, 0.0, 0.0);
        assert!(p_hi < 1.0 && p_lo > 0.0);
    }

    #[test]
    fn monotone_in_distance_and_fare() {
        let model = AcceptanceModel::<f64>::default();
        let h = 1e-6;
        for i in 0..50 {
            let x1 = i as f64 * 0.2;
            let x2 = 3.0 + i as f64;
            let d1 = accept_probability(&model, x1 + h, x2, 0.0) - accept_probability(&model, x1 - h, x2, 0.0);
            let d2 = accept_probability(&model, x1, x2 + h, 0.0) - accept_probability(&model, x1, x2 - h, 0.0);
            assert!(d1 < 0.0, "x1={x1}");
            assert!(d2 > 0.0, "x2={x2}");
        }
    }

    #[test]
    fn saturated_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let yes = m(50.0, 0.0, 0.0);
        let no = m(-50.0, 0.0, 0.0);
        assert!((0..1_000_000).all(|_| sample_accept(&yes, 1.0, 1.0, &mut rng)));
        assert!((0..1_000_000).all(|_| !sample_accept(&no, 1.0, 1.0, &mut rng)));
    }

    #[test]
    fn symmetric_model_accepts_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = m(0.0, 0.0, 0.0);
        let n = 100_000;
        let acc = (0..n).filter(|_| sample_accept(&model, 1.0, 1.0, &mut rng)).count();
        let rate = acc as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 0.01, "{rate}");
    }

    #[test]
    fn log_loss_examples() {
        assert!(log_loss(1.0, 1.0) < 1e-11);
        assert!((log_loss(1.0, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(log_loss(0.0, 0.0f64).is_finite());
    }

    #[test]
    fn single_class_rejected() {
        let s = vec![DecisionSample { pickup_km: 1.0, fare: 2.0, accepted: true }; 4];
        assert!(matches!(fit_logistic(&s, 0.5, 10), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fit_loss_is_non_increasing_and_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = m(0.3, -0.7, 0.2);
        let samples: Vec<_> = (0..5000)
            .map(|_| {
                let x1 = rng.random::<f64>() * 5.0;
                let x2 = 3.0 + rng.random::<f64>() * 10.0;
                let p = accept_probability(&truth, x1, x2, 0.0);
                DecisionSample { pickup_km: x1, fare: x2, accepted: rng.random::<f64>() < p }
            })
            .collect();
        let fit = fit_logistic(&samples, 1.0, 500).unwrap();
        assert!(fit.loss_curve.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(fit.grad_norm < 1e-4, "grad norm {}", fit.grad_norm);
    }

    #[test]
    fn model_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = m(1.0, -0.8, 0.02);
        model.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("beta0") && text.contains("sigma"));
        assert_eq!(AcceptanceModel::<f64>::load(&path).unwrap(), model);
    }
}
