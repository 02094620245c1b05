use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::nn::{Grads, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive moment estimation without weight decay.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: f64,
    settings: AdamSettings,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, settings: AdamSettings) -> Self {
        let zeros = || params.values().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        Adam {
            lr,
            settings,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>) {
        self.t += 1;
        let AdamSettings { beta1, beta2, eps } = self.settings;
        let step = self.lr * (1.0 - beta2.powi(self.t)).sqrt() / (1.0 - beta1.powi(self.t));
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - beta1), T::from_f64_lossy(1.0 - beta2));
        let step = T::from_f64_lossy(step);
        // eps applied to the bias-corrected second moment, as in the usual formulation
        let eps_hat = T::from_f64_lossy(eps * (1.0 - beta2.powi(self.t)).sqrt());
        for ((p, g), (m, v)) in params
            .values_mut()
            .iter_mut()
            .zip(grads.values())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p - step * *m / (v.sqrt() + eps_hat);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::TensorStore;
    use ndarray::IxDyn;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = TensorStore::<f64>::new();
        let id = params.add_param("x", ArrayD::from_elem(IxDyn(&[3]), 1.0));
        let mut grads = Grads::zeros_like(&params);
        grads.get_mut(id).assign(&ndarray::arr1(&[2.0, -0.5, 1e-3]).into_dyn());
        let mut adam = Adam::new(&params, 0.01, AdamSettings::default());
        adam.step(&mut params, &grads);
        let x = params.param(id);
        assert!((x[[0]] - 0.99).abs() < 1e-6);
        assert!((x[[1]] - 1.01).abs() < 1e-6);
        assert!((x[[2]] - 0.99).abs() < 1e-4);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = TensorStore::<f64>::new();
        let id = params.add_param("x", ArrayD::from_elem(IxDyn(&[2]), 3.0));
        let mut adam = Adam::new(&params, 0.1, AdamSettings::default());
        for _ in 0..500 {
            let mut grads = Grads::zeros_like(&params);
            let x = params.param(id).clone();
            grads.get_mut(id).assign(&(x * 2.0));
            adam.step(&mut params, &grads);
        }
        assert!(params.param(id).iter().all(|v| v.abs() < 1e-2));
    }
}
