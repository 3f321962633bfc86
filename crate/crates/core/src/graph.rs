//! Layered feed-forward networks with reverse-mode differentiation.
//!
//! The graph is a fixed chain of affine and relu layers ending in an affine
//! layer (logits). `forward` keeps every intermediate output so `backward`
//! can produce gradients for all parameters and for the input itself; the
//! input gradient is what the PGD attack and the latent perturbations need.

use crate::error::{Error, Result};
use crate::loss::{self, LossKind};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub enum Layer<F: Scalar> {
    Affine { weight: Matrix<F>, bias: Vec<F> },
    Relu,
}

impl<F: Scalar> Layer<F> {
    pub fn affine(weight: Matrix<F>, bias: Vec<F>) -> Self {
        assert_eq!(weight.cols(), bias.len(), "affine bias width");
        Layer::Affine { weight, bias }
    }
}

#[derive(Debug, Clone)]
pub struct ComputationGraph<F: Scalar> {
    layers: Vec<Layer<F>>,
    input_dim: usize,
    output_dim: usize,
}

impl<F: Scalar> ComputationGraph<F> {
    /// Validates that consecutive layer dimensions compose and that the
    /// final layer is affine (logits carry no activation).
    pub fn new(layers: Vec<Layer<F>>) -> Result<Self> {
        let first_affine = layers.iter().find_map(|l| match l {
            Layer::Affine { weight, .. } => Some(weight.rows()),
            Layer::Relu => None,
        });
        let input_dim = first_affine
            .ok_or_else(|| Error::config("graph needs at least one affine layer"))?;

        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Affine { weight, bias } => {
                    if weight.rows() != dim {
                        return Err(Error::config(format!(
                            "layer {i}: affine expects input dim {}, chain provides {dim}",
                            weight.rows()
                        )));
                    }
                    if bias.len() != weight.cols() {
                        return Err(Error::config(format!(
                            "layer {i}: bias length {} != output dim {}",
                            bias.len(),
                            weight.cols()
                        )));
                    }
                    dim = weight.cols();
                }
                Layer::Relu => {}
            }
        }
        match layers.last() {
            Some(Layer::Affine { .. }) => {}
            _ => return Err(Error::config("final layer must be affine")),
        }
        Ok(ComputationGraph { layers, input_dim, output_dim: dim })
    }

    /// Affine chain with relu between consecutive pairs: widths [d0, d1, ..., dk]
    /// become affine(d0→d1), relu, ..., affine(d_{k-1}→dk).
    pub fn mlp(widths: &[usize], init_scale: InitScale, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("mlp needs at least input and output widths"));
        }
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (d_in, d_out) = (pair[0], pair[1]);
            let scale = match init_scale {
                InitScale::He => (2.0 / d_in as f64).sqrt(),
                InitScale::Fixed(s) => s,
            };
            let mut w = Matrix::zeros(d_in, d_out);
            for x in w.data_mut() {
                *x = rng.normal::<F>() * F::from_config(scale);
            }
            layers.push(Layer::affine(w, vec![F::zero(); d_out]));
            if i + 2 < widths.len() {
                layers.push(Layer::Relu);
            }
        }
        ComputationGraph::new(layers)
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Chains `other` after `self`; dimensions must compose.
    pub fn chain(&self, other: &ComputationGraph<F>) -> Result<ComputationGraph<F>> {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        ComputationGraph::new(layers)
    }

    /// True when both graphs have bit-identical parameters.
    pub fn params_bit_equal(&self, other: &ComputationGraph<F>) -> bool {
        if self.layers.len() != other.layers.len() {
            return false;
        }
        self.layers.iter().zip(&other.layers).all(|(a, b)| match (a, b) {
            (
                Layer::Affine { weight: wa, bias: ba },
                Layer::Affine { weight: wb, bias: bb },
            ) => wa == wb && ba == bb,
            (Layer::Relu, Layer::Relu) => true,
            _ => false,
        })
    }

    pub fn forward(&self, input: &Matrix<F>) -> Result<Activations<F>> {
        if input.cols() != self.input_dim {
            return Err(Error::config(format!(
                "forward: input has {} columns, graph expects {}",
                input.cols(),
                self.input_dim
            )));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.clone());
        for layer in &self.layers {
            let prev = values.last().unwrap();
            let next = match layer {
                Layer::Affine { weight, bias } => prev.matmul(weight).add_row_broadcast(bias),
                Layer::Relu => prev.map(|x| if x > F::zero() { x } else { F::zero() }),
            };
            values.push(next);
        }
        Ok(Activations { values })
    }

    /// Reverse pass from an arbitrary upstream gradient at the logits.
    pub fn backward_from(
        &self,
        acts: &Activations<F>,
        upstream: &Matrix<F>,
    ) -> Result<Gradients<F>> {
        if acts.values.len() != self.layers.len() + 1 {
            return Err(Error::config("activations do not match this graph"));
        }
        let logits = acts.logits();
        if (upstream.rows(), upstream.cols()) != (logits.rows(), logits.cols()) {
            return Err(Error::config("upstream gradient shape mismatch"));
        }

        let mut delta = upstream.clone();
        let mut per_layer: Vec<Option<AffineGradients<F>>> = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let layer_input = &acts.values[i];
            match layer {
                Layer::Affine { weight, .. } => {
                    let dw = layer_input.t_matmul(&delta);
                    let db = delta.column_sums();
                    delta = delta.matmul_t(weight);
                    per_layer[i] = Some(AffineGradients { weight: dw, bias: db });
                }
                Layer::Relu => {
                    let out = &acts.values[i + 1];
                    for (d, &o) in delta.data_mut().iter_mut().zip(out.data()) {
                        if o <= F::zero() {
                            *d = F::zero();
                        }
                    }
                }
            }
        }
        Ok(Gradients { per_layer, input: delta })
    }

    /// Scalar mean loss and gradients for every parameter and the input.
    pub fn backward(
        &self,
        acts: &Activations<F>,
        loss_kind: &LossKind<'_, F>,
    ) -> Result<(F, Gradients<F>)> {
        let (value, upstream) = loss::loss_and_grad(loss_kind, acts.logits())?;
        let grads = self.backward_from(acts, &upstream)?;
        Ok((value, grads))
    }
}

/// Every layer output of one forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Activations<F: Scalar> {
    values: Vec<Matrix<F>>,
}

impl<F: Scalar> Activations<F> {
    pub fn logits(&self) -> &Matrix<F> {
        self.values.last().unwrap()
    }

    pub fn layer_output(&self, i: usize) -> &Matrix<F> {
        &self.values[i + 1]
    }

    pub fn all(&self) -> &[Matrix<F>] {
        &self.values
    }
}

#[derive(Debug, Clone)]
pub struct AffineGradients<F: Scalar> {
    pub weight: Matrix<F>,
    pub bias: Vec<F>,
}

/// Gradients aligned with the graph's layers plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients<F: Scalar> {
    pub per_layer: Vec<Option<AffineGradients<F>>>,
    pub input: Matrix<F>,
}

impl<F: Scalar> Gradients<F> {
    pub fn all_finite(&self) -> bool {
        self.input.all_finite()
            && self.per_layer.iter().flatten().all(|g| {
                g.weight.all_finite() && g.bias.iter().all(|b| b.is_finite())
            })
    }
}

/// Weight initialization for [`ComputationGraph::mlp`].
#[derive(Debug, Clone, Copy)]
pub enum InitScale {
    /// sqrt(2 / fan_in), the usual choice ahead of relu.
    He,
    /// Fixed standard deviation.
    Fixed(f64),
}
