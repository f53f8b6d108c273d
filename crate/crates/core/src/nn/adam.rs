use super::tensor::Tensor;
use crate::Scalar;

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Updates `params` in place. Slots are matched positionally with `grads`.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: Vec<&Tensor<T>>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient slot count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            debug_assert_eq!(p.shape(), g.shape());
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = self.beta1 * *mv + (T::one() - self.beta1) * *gv;
                *vv = self.beta2 * *vv + (T::one() - self.beta2) * *gv * *gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::<f64>::zeros(&[3]);
        let mut opt = Adam::new(1e-3);
        for _ in 0..5 {
            opt.step(vec![&mut p], vec![&g]);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps).
        let mut p = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::new(vec![2], vec![0.3, -4.0]).unwrap();
        let mut opt = Adam::new(1e-3);
        opt.step(vec![&mut p], vec![&g]);
        assert!((p.data()[0] + 1e-3 * 0.3 / (0.3 + 1e-8)).abs() < 1e-15);
        assert!((p.data()[1] - 1e-3 * 4.0 / (4.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let target = [3.0, -1.0, 0.5];
        let mut p = Tensor::<f64>::zeros(&[3]);
        let mut opt = Adam::new(0.05);
        let loss = |p: &Tensor<f64>| p.data().iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut losses = Vec::new();
        for _ in 0..300 {
            let g = Tensor::from_fn(&[3], |i| 2.0 * (p.data()[i] - target[i]));
            opt.step(vec![&mut p], vec![&g]);
            losses.push(loss(&p));
        }
        // Monotone once past the first few steps of momentum build-up.
        assert!(losses[5..40].windows(2).all(|w| w[1] <= w[0]));
        assert!(losses.last().unwrap() < &1e-3);
    }
}
