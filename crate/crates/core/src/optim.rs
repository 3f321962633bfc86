//! Minibatch SGD with momentum.
//!
//! Update rule per tensor: v ← momentum·v + g, then p ← p − lr·v.
//! Velocities persist across steps; a non-finite gradient aborts the run.

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, Gradients, Layer};
use crate::scalar::Scalar;

/// One tensor update. `velocity` must have the same length as `param`.
pub fn sgd_step<F: Scalar>(
    param: &mut [F],
    grad: &[F],
    velocity: &mut [F],
    lr: F,
    momentum: F,
) -> Result<()> {
    if grad.len() != param.len() || velocity.len() != param.len() {
        return Err(Error::config("sgd_step: shape mismatch"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::run("sgd_step: non-finite gradient"));
    }
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p = *p - lr * *v;
    }
    Ok(())
}

/// SGD state for every affine layer of one graph.
#[derive(Debug, Clone)]
pub struct GraphSgd<F: Scalar> {
    lr: F,
    momentum: F,
    // (weight velocity, bias velocity) per layer index, lazily sized.
    velocities: Vec<Option<(Vec<F>, Vec<F>)>>,
}

impl<F: Scalar> GraphSgd<F> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        GraphSgd {
            lr: F::from_config(lr),
            momentum: F::from_config(momentum),
            velocities: Vec::new(),
        }
    }

    pub fn step(&mut self, graph: &mut ComputationGraph<F>, grads: &Gradients<F>) -> Result<()> {
        let n_layers = graph.layers().len();
        if grads.per_layer.len() != n_layers {
            return Err(Error::config("optimizer: gradient/graph layer mismatch"));
        }
        if self.velocities.is_empty() {
            self.velocities = vec![None; n_layers];
        }
        for (i, layer) in graph.layers_mut().iter_mut().enumerate() {
            let (weight, bias) = match layer {
                Layer::Affine { weight, bias } => (weight, bias),
                Layer::Relu => continue,
            };
            let g = grads.per_layer[i]
                .as_ref()
                .ok_or_else(|| Error::config("optimizer: missing affine gradient"))?;
            let (vw, vb) = self.velocities[i].get_or_insert_with(|| {
                (vec![F::zero(); weight.data().len()], vec![F::zero(); bias.len()])
            });
            sgd_step(weight.data_mut(), g.weight.data(), vw, self.lr, self.momentum)?;
            sgd_step(bias, &g.bias, vb, self.lr, self.momentum)?;
        }
        Ok(())
    }
}
