//! Scalar losses over logits and their gradients.
//!
//! All losses are means over the batch. Softmax is stabilized by max
//! subtraction; probabilities are clamped to [1e-12, 1 - 1e-12] inside
//! log, KL and entropy so confident heads cannot produce NaN.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug)]
pub enum LossKind<'a, F: Scalar> {
    /// Cross-entropy of softmax(logits) against integer labels.
    SoftmaxCrossEntropy { labels: &'a [usize] },
    /// KL(reference ‖ softmax(logits)); the reference rows are fixed
    /// probability distributions and receive no gradient.
    KlFromReference { reference: &'a Matrix<F> },
    /// Mean prediction entropy of softmax(logits).
    Entropy,
    /// Mean over samples of the squared L2 distance between logits and target.
    MeanSquaredError { target: &'a Matrix<F> },
}

/// Row-wise stabilized softmax. Output rows sum to 1 within 1e-12.
pub fn softmax<F: Scalar>(logits: &Matrix<F>) -> Matrix<F> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(F::neg_infinity(), |a, &b| if b > a { b } else { a });
        let mut sum = F::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum = sum + *x;
        }
        for x in row.iter_mut() {
            *x = *x / sum;
        }
    }
    out
}

fn clamp_prob<F: Scalar>(p: F) -> F {
    let lo = F::from_config(PROB_CLAMP);
    let hi = F::one() - lo;
    if p < lo {
        lo
    } else if p > hi {
        hi
    } else {
        p
    }
}

/// ln of a clamped probability.
pub fn ln_prob<F: Scalar>(p: F) -> F {
    clamp_prob(p).ln()
}

/// Shannon entropy of one probability row, clamped-log convention.
pub fn entropy_row<F: Scalar>(probs: &[F]) -> F {
    let mut h = F::zero();
    for &p in probs {
        h = h - p * ln_prob(p);
    }
    h
}

/// Per-row entropies of a probability matrix.
pub fn entropy_rows<F: Scalar>(probs: &Matrix<F>) -> Vec<F> {
    (0..probs.rows()).map(|i| entropy_row(probs.row(i))).collect()
}

/// KL(r ‖ p) for two probability rows, clamped-log convention.
pub fn kl_row<F: Scalar>(reference: &[F], p: &[F]) -> F {
    let mut kl = F::zero();
    for (&r, &q) in reference.iter().zip(p) {
        kl = kl + r * (ln_prob(r) - ln_prob(q));
    }
    kl
}

fn validate<F: Scalar>(kind: &LossKind<'_, F>, logits: &Matrix<F>) -> Result<()> {
    match kind {
        LossKind::SoftmaxCrossEntropy { labels } => {
            if labels.len() != logits.rows() {
                return Err(Error::config(format!(
                    "loss: {} labels for {} logit rows",
                    labels.len(),
                    logits.rows()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
                return Err(Error::config(format!(
                    "loss: label {bad} out of range for {} classes",
                    logits.cols()
                )));
            }
        }
        LossKind::KlFromReference { reference } => {
            if (reference.rows(), reference.cols()) != (logits.rows(), logits.cols()) {
                return Err(Error::config("loss: reference shape mismatch"));
            }
        }
        LossKind::MeanSquaredError { target } => {
            if (target.rows(), target.cols()) != (logits.rows(), logits.cols()) {
                return Err(Error::config("loss: mse target shape mismatch"));
            }
        }
        LossKind::Entropy => {}
    }
    Ok(())
}

/// Mean loss value only (used by finite-difference checks).
pub fn loss_value<F: Scalar>(kind: &LossKind<'_, F>, logits: &Matrix<F>) -> Result<F> {
    validate(kind, logits)?;
    let n = F::from_config(logits.rows() as f64);
    let value = match kind {
        LossKind::SoftmaxCrossEntropy { labels } => {
            let probs = softmax(logits);
            let mut total = F::zero();
            for (i, &y) in labels.iter().enumerate() {
                total = total - ln_prob(probs.get(i, y));
            }
            total / n
        }
        LossKind::KlFromReference { reference } => {
            let probs = softmax(logits);
            let mut total = F::zero();
            for i in 0..probs.rows() {
                total = total + kl_row(reference.row(i), probs.row(i));
            }
            total / n
        }
        LossKind::Entropy => {
            let probs = softmax(logits);
            let mut total = F::zero();
            for i in 0..probs.rows() {
                total = total + entropy_row(probs.row(i));
            }
            total / n
        }
        LossKind::MeanSquaredError { target } => {
            let mut total = F::zero();
            for (&o, &t) in logits.data().iter().zip(target.data()) {
                let d = o - t;
                total = total + d * d;
            }
            total / n
        }
    };
    Ok(value)
}

/// Mean loss value and its gradient with respect to the logits.
pub fn loss_and_grad<F: Scalar>(
    kind: &LossKind<'_, F>,
    logits: &Matrix<F>,
) -> Result<(F, Matrix<F>)> {
    let value = loss_value(kind, logits)?;
    let n = F::from_config(logits.rows() as f64);
    let grad = match kind {
        LossKind::SoftmaxCrossEntropy { labels } => {
            let mut g = softmax(logits);
            for (i, &y) in labels.iter().enumerate() {
                let v = g.get(i, y);
                g.set(i, y, v - F::one());
            }
            g.scale(F::one() / n)
        }
        LossKind::KlFromReference { reference } => {
            // d/dz [-Σ r ln p(z)] = p - r for a fixed reference distribution.
            let probs = softmax(logits);
            probs.sub(reference).scale(F::one() / n)
        }
        LossKind::Entropy => {
            // dH/dz_k = -p_k (ln p_k + H)
            let probs = softmax(logits);
            let mut g = Matrix::zeros(probs.rows(), probs.cols());
            for i in 0..probs.rows() {
                let h = entropy_row(probs.row(i));
                for j in 0..probs.cols() {
                    let p = probs.get(i, j);
                    g.set(i, j, -p * (ln_prob(p) + h));
                }
            }
            g.scale(F::one() / n)
        }
        LossKind::MeanSquaredError { target } => {
            logits.sub(target).scale(F::from_config(2.0) / n)
        }
    };
    Ok((value, grad))
}
