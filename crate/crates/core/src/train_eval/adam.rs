use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    steps: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update. Weight decay is decoupled: `p *= 1 - lr * wd` before the
    /// moment-based step. Missing gradients count as zero.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid("adam_step", format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params.tensors()[i].shape() {
                    return Err(Error::shape("adam_step", params.tensors()[i].shape(), g.shape()));
                }
                if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                    return Err(Error::invalid(
                        "adam_step",
                        format!(
                            "non-finite gradient {} at element {pos} of {}",
                            g.data()[pos],
                            params.names()[i]
                        ),
                    ));
                }
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr_t, eps) = (T::of(lr), T::of(self.eps));
        let decay = T::of(1.0 - lr * weight_decay);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let g = grads[i].as_ref().map(Tensor::data);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w = *w * decay - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
