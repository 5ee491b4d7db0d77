use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

/// Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure_moments(&mut self, params: &[&mut Tensor<T>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
            return Ok(());
        }
        if self.first.len() != params.len() {
            return Err(Error::InvalidSpec(format!(
                "optimizer tracks {} tensors, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (m, p) in self.first.iter().zip(params) {
            p.expect_shape("optimizer moment", m.shape())?;
        }
        Ok(())
    }
}

impl<T: Scalar> Default for OptimizerState<T> {
    fn default() -> Self {
        Self::new(DEFAULT_LEARNING_RATE)
    }
}

pub fn adam_step<T: Scalar>(
    mut params: Vec<&mut Tensor<T>>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidSpec(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        g.expect_shape("gradient", p.shape())?;
    }
    state.ensure_moments(&params)?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.eps;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i].to_f64_lossy();
            let mi = b1 * md[i].to_f64_lossy() + (1.0 - b1) * gi;
            let vi = b2 * vd[i].to_f64_lossy() + (1.0 - b2) * gi * gi;
            md[i] = T::from_f64_lossy(mi);
            vd[i] = T::from_f64_lossy(vi);
            let update = lr * (mi / correction1) / ((vi / correction2).sqrt() + eps);
            pd[i] = T::from_f64_lossy(pd[i].to_f64_lossy() - update);
        }
    }
    Ok(())
}
