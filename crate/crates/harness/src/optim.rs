//! Adam optimizer over named parameters.

use adares_core::nn::ParamStore;
use indexmap::IndexMap;
use ndarray::ArrayD;

/// Per-parameter first/second moment estimates, keyed by parameter name.
#[derive(Debug)]
struct Moments {
    m: ArrayD<f64>,
    v: ArrayD<f64>,
}

#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    state: IndexMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, state: IndexMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient entry are left
    /// untouched; gradients for unknown parameters are an error upstream
    /// (the store panics on a missing name).
    pub fn step(&mut self, store: &mut ParamStore, grads: &IndexMap<String, ArrayD<f64>>) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (name, g) in grads {
            let slot = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: ArrayD::zeros(g.raw_dim()),
                v: ArrayD::zeros(g.raw_dim()),
            });
            assert_eq!(
                slot.m.shape(),
                g.shape(),
                "gradient shape changed between steps for {name}"
            );
            slot.m.zip_mut_with(g, |m, &gi| *m = self.beta1 * *m + (1.0 - self.beta1) * gi);
            slot.v.zip_mut_with(g, |v, &gi| *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi);
            let p = store
                .param_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            ndarray::Zip::from(p)
                .and(&slot.m)
                .and(&slot.v)
                .for_each(|pi, &mi, &vi| {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}
