//! Linear classifier head with Max-norm projection and weight decay.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{init, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub delta: f64,
    pub lambda: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self { delta: 0.3, lambda: 0.1 }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization needs delta > 0 and lambda >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Materialized classifier: `C × D` weights (row `θ_k` per class) and a
/// length-`C` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierWeights {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl ClassifierWeights {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[classes, dim]),
            bias: vec![0.0; classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        row_norms(&self.weight)
    }
}

pub fn row_norms(w: &Tensor) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// `logits = W·h + b` and `−log softmax(logits)[label]`.
pub fn logits_and_ce(h: &[f64], weights: &ClassifierWeights, label: usize) -> Result<(Vec<f64>, f64)> {
    let d = weights.weight.cols();
    if h.len() != d {
        return Err(Error::shape("logits_and_ce", &[h.len()], weights.weight.shape()));
    }
    let logits: Vec<f64> = (0..weights.num_classes())
        .map(|k| weights.weight.row(k).iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + weights.bias[k])
        .collect();
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    Ok((logits, loss))
}

/// Rescales each row in place by `min(1, δ/‖θ_k‖)`.
pub fn maxnorm_rows(w: &mut Tensor, delta: f64) {
    for r in 0..w.rows() {
        let row = w.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Rescaled rows can land an ulp above delta; leave those alone so the
        // projection is idempotent.
        if n > delta * (1.0 + 4.0 * f64::EPSILON) {
            let s = delta / n;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Euclidean projection of every class row onto the radius-`δ` ball; the
/// bias is untouched.
pub fn maxnorm_project(weights: &ClassifierWeights, delta: f64) -> Result<ClassifierWeights> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("max-norm radius must be positive, got {delta}")));
    }
    let mut out = weights.clone();
    maxnorm_rows(&mut out.weight, delta);
    Ok(out)
}

/// `λ·Σ_k ‖θ_k‖²`.
pub fn weight_decay_term(weights: &ClassifierWeights, lambda: f64) -> f64 {
    lambda * weights.weight.values().iter().map(|v| v * v).sum::<f64>()
}

/// Tape form of [`weight_decay_term`].
pub fn weight_decay_var(tape: &mut Tape, w: Var, lambda: f64) -> Result<Var> {
    let sq = tape.mul(w, w)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, lambda))
}

/// Classifier parameters inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, classes: usize, dim: usize, rng: &mut R) -> Self {
        let weight = store.add("classifier.weight", init::glorot(rng, classes, dim));
        let bias = store.add("classifier.bias", Tensor::zeros(&[1, classes]));
        Self { weight, bias }
    }

    /// `h · Wᵀ + b` for a batch `h` of shape `n × D`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let z = tape.matmul_nt(h, w)?;
        tape.add_row(z, b)
    }

    /// Mean cross-entropy of a batch.
    pub fn cross_entropy(&self, tape: &mut Tape, store: &ParamStore, h: Var, labels: &[usize]) -> Result<Var> {
        let z = self.logits(tape, store, h)?;
        tape.cross_entropy(z, Rc::new(labels.to_vec()))
    }

    pub fn weights(&self, store: &ParamStore) -> ClassifierWeights {
        ClassifierWeights {
            weight: store.value(self.weight).clone(),
            bias: store.value(self.bias).values().to_vec(),
        }
    }

    pub fn project(&self, store: &mut ParamStore, delta: f64) {
        maxnorm_rows(store.value_mut(self.weight), delta);
    }

    /// Argmax predictions for rows of `h` (ties to the lower class).
    pub fn predict(&self, store: &ParamStore, h: &Tensor) -> Vec<usize> {
        let w = store.value(self.weight);
        let b = store.value(self.bias).values();
        (0..h.rows())
            .map(|i| {
                let row = h.row(i);
                let mut best = (0, f64::NEG_INFINITY);
                for (k, bk) in b.iter().enumerate() {
                    let z = w.row(k).iter().zip(row).map(|(a, x)| a * x).sum::<f64>() + bk;
                    if z > best.1 {
                        best = (k, z);
                    }
                }
                best.0
            })
            .collect()
    }
}
