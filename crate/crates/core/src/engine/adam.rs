use serde::{Deserialize, Serialize};

use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment accumulators plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape().to_vec()), Tensor::zeros(p.shape().to_vec())))
            .unzip();
        AdamState {
            config,
            first,
            second,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "adam",
                format!(
                    "{} parameters, {} gradients, state tracks {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::dim(
                    "adam",
                    format!(
                        "parameter {i}: value {:?}, gradient {:?}, moments {:?}",
                        p.shape(),
                        g.shape(),
                        self.first[i].shape()
                    ),
                ));
            }
        }
        self.t += 1;
        let c = self.config;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.epsilon);
        let t = self.t.min(i32::MAX as u64) as i32;
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [3.0f64, -0.25, 1e-3] {
            let mut w = Tensor::scalar(0.7);
            let mut st = AdamState::new(AdamConfig::default(), [&w]);
            adam_step(&mut [&mut w], &[Tensor::scalar(g)], &mut st).unwrap();
            let delta = w.data()[0] - 0.7;
            assert!((delta + 1e-3 * g.signum()).abs() < 1e-8, "g={g} delta={delta}");
            assert_eq!(st.steps(), 1);
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut w = Tensor::new(vec![3], vec![1.0f64, -2.0, 3.5]).unwrap();
        let orig = w.clone();
        let mut st = AdamState::new(AdamConfig::default(), [&w]);
        for _ in 0..5 {
            st.step(&mut [&mut w], &[Tensor::zeros(vec![3])]).unwrap();
        }
        assert_eq!(w, orig);
        assert_eq!(st.steps(), 5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut w = Tensor::<f64>::zeros(vec![2]);
        let mut st = AdamState::new(AdamConfig::default(), [&w]);
        assert!(st.step(&mut [&mut w], &[Tensor::zeros(vec![3])]).is_err());
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let cfg = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        let mut w = Tensor::scalar(1.0f64);
        let mut st = AdamState::new(cfg, [&w]);
        let mut prev = 1.0;
        for _ in 0..10 {
            let g = Tensor::scalar(2.0 * w.data()[0]);
            st.step(&mut [&mut w], &[g]).unwrap();
            let f = w.data()[0] * w.data()[0];
            assert!(f < prev);
            prev = f;
        }
    }
}
