//! Balanced supervised contrastive learning with category centers.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub temperature: f64,
    /// Weight on instance positives; the anchor's own center has weight 1.
    pub alpha: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            alpha: 0.05,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "contrast config needs temperature > 0 and alpha in [0, 1], got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Projected views and raw embeddings of one two-view batch, aligned by row.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch {
    pub z_v1: Tensor,
    pub z_v2: Tensor,
    pub h_raw: Tensor,
    pub labels: Vec<usize>,
}

/// A row of the candidate pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Key {
    View1(usize),
    View2(usize),
}

/// Candidate set `A(i)` (every row of both views except the anchor's own
/// first-view row) and positive set `P(i)` (members of `A(i)` sharing the
/// anchor's label).
pub fn build_positive_sets(i: usize, labels: &[usize]) -> (Vec<Key>, Vec<Key>) {
    let b = labels.len();
    let candidates: Vec<Key> = (0..b)
        .filter(|&k| k != i)
        .map(Key::View1)
        .chain((0..b).map(Key::View2))
        .collect();
    let positives = candidates
        .iter()
        .copied()
        .filter(|k| {
            let (Key::View1(j) | Key::View2(j)) = *k;
            labels[j] == labels[i]
        })
        .collect();
    (candidates, positives)
}

/// `E|P(i)| = (2B − 1)·π`.
pub fn expected_positive_count(batch_size: usize, class_freq: f64) -> f64 {
    (2.0 * batch_size as f64 - 1.0) * class_freq
}

/// Minimizers of the per-anchor objective over the probability simplex:
/// `(α/(1+αK), 1/(1+αK))` for one instance positive and the center.
pub fn optimal_probabilities(alpha: f64, k: f64) -> (f64, f64) {
    let z = 1.0 + alpha * k;
    (alpha / z, 1.0 / z)
}

/// Learnable `C × D` class centers, kept row-normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CategoryCenters {
    pub id: ParamId,
}

impl CategoryCenters {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, classes: usize, dim: usize, rng: &mut R) -> Self {
        let values = (0..classes * dim).map(|_| StandardNormal.sample(rng)).collect();
        let id = store.add("centers", Tensor::matrix(classes, dim, values));
        let c = Self { id };
        c.normalize(store);
        c
    }

    pub fn normalize(&self, store: &mut ParamStore) {
        normalize_rows(store.value_mut(self.id));
    }
}

pub(crate) fn normalize_rows(t: &mut Tensor) {
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Weighted contrastive loss over anchors `z_v1` (instance queries) and
/// `h_anchor` (center queries, normalized here).
///
/// For anchor `i` the logits are `[z_i·z_v1ᵀ, z_i·z_v2ᵀ, ĥ_i·Oᵀ] / τ` with
/// the anchor's own first-view entry excluded from the softmax. Instance
/// positives get `instance_weight`, the anchor's center `center_weight`.
/// Returns the mean over anchors of `−Σ w·log p`. Without `centers` the
/// pool is instances only.
#[allow(clippy::too_many_arguments)]
pub fn weighted_contrastive_loss(
    tape: &mut Tape,
    z_v1: Var,
    z_v2: Var,
    h_anchor: Var,
    centers: Option<Var>,
    labels: &[usize],
    temperature: f64,
    instance_weight: f64,
    center_weight: f64,
) -> Result<Var> {
    let b = labels.len();
    if b == 0 {
        return Err(Error::InvalidArgument("contrastive loss on an empty batch".into()));
    }
    for v in [z_v1, z_v2, h_anchor] {
        if tape.value(v).rows() != b {
            return Err(Error::shape("bscl_loss", tape.shape(v), &[b]));
        }
    }
    let keys = tape.concat_rows(&[z_v1, z_v2])?;
    let inst = tape.matmul_nt(z_v1, keys)?;
    let (logits, c) = match centers {
        Some(o) => {
            let c = tape.value(o).rows();
            if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
                return Err(Error::InvalidState(format!("label {bad} has no category center ({c} centers)")));
            }
            let h = tape.l2_normalize_rows(h_anchor)?;
            let cen = tape.matmul_nt(h, o)?;
            (tape.concat_cols(&[inst, cen])?, c)
        }
        None => (inst, 0),
    };
    let width = 2 * b + c;
    let scaled = tape.scale(logits, 1.0 / temperature);
    let mut keep = vec![true; b * width];
    let mut w = vec![0.0; b * width];
    for i in 0..b {
        keep[i * width + i] = false;
        for k in 0..b {
            if labels[k] == labels[i] {
                if k != i {
                    w[i * width + k] = instance_weight;
                }
                w[i * width + b + k] = instance_weight;
            }
        }
        if c > 0 {
            w[i * width + 2 * b + labels[i]] = center_weight;
        }
    }
    let logp = tape.masked_row_log_softmax(scaled, Rc::new(keep))?;
    let s = tape.weighted_sum(logp, Rc::new(Tensor::matrix(b, width, w)))?;
    Ok(tape.scale(s, -1.0 / b as f64))
}

/// Balanced contrastive loss on tape variables.
pub fn bscl_loss_vars(
    tape: &mut Tape,
    z_v1: Var,
    z_v2: Var,
    h_raw: Var,
    centers: Var,
    labels: &[usize],
    cfg: &ContrastConfig,
) -> Result<Var> {
    cfg.validate()?;
    weighted_contrastive_loss(tape, z_v1, z_v2, h_raw, Some(centers), labels, cfg.temperature, cfg.alpha, 1.0)
}

/// Balanced contrastive loss of a materialized batch.
pub fn bscl_loss(batch: &ViewBatch, centers: &Tensor, cfg: &ContrastConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let z1 = tape.constant(batch.z_v1.clone());
    let z2 = tape.constant(batch.z_v2.clone());
    let h = tape.constant(batch.h_raw.clone());
    let o = tape.constant(centers.clone());
    let l = bscl_loss_vars(&mut tape, z1, z2, h, o, &batch.labels, cfg)?;
    tape.value(l).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn smallest_batch_sets() {
        let (a, p) = build_positive_sets(0, &[3]);
        assert_eq!(a, vec![Key::View2(0)]);
        assert_eq!(p, a);
        let (a, p) = build_positive_sets(0, &[0, 1]);
        assert_eq!(a.len(), 3);
        assert_eq!(p, vec![Key::View2(0)]);
    }

    #[test]
    fn single_anchor_closed_form() {
        // One anchor, its second view and one center: a 2-term softmax.
        let z1 = unit(&[1.0, 2.0]);
        let z2 = unit(&[0.5, -1.0]);
        let h = [3.0, 1.0];
        let o = unit(&[-1.0, 0.2]);
        let (tau, alpha) = (0.2, 0.3);
        let batch = ViewBatch {
            z_v1: Tensor::matrix(1, 2, z1.clone()),
            z_v2: Tensor::matrix(1, 2, z2.clone()),
            h_raw: Tensor::matrix(1, 2, h.to_vec()),
            labels: vec![0],
        };
        let got = bscl_loss(&batch, &Tensor::matrix(1, 2, o.clone()), &ContrastConfig { temperature: tau, alpha }).unwrap();
        let hn = unit(&h);
        let s_inst = (z1[0] * z2[0] + z1[1] * z2[1]) / tau;
        let s_cent = (hn[0] * o[0] + hn[1] * o[1]) / tau;
        let lse = (s_inst.exp() + s_cent.exp()).ln();
        let want = -alpha * (s_inst - lse) - (s_cent - lse);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn optimal_probability_examples() {
        let (p, c) = optimal_probabilities(0.05, 31.5);
        assert!((p - 0.0194).abs() < 5e-5 && (c - 0.3883).abs() < 5e-5);
        assert_eq!(optimal_probabilities(0.3, 0.0), (0.3, 1.0));
        assert_eq!(expected_positive_count(32, 0.5), 31.5);
        assert_eq!(expected_positive_count(32, 0.0), 0.0);
    }

    #[test]
    fn missing_center_is_invalid_state() {
        let batch = ViewBatch {
            z_v1: Tensor::matrix(1, 1, vec![1.0]),
            z_v2: Tensor::matrix(1, 1, vec![1.0]),
            h_raw: Tensor::matrix(1, 1, vec![1.0]),
            labels: vec![2],
        };
        let r = bscl_loss(&batch, &Tensor::matrix(2, 1, vec![1.0, -1.0]), &ContrastConfig::default());
        assert!(matches!(r, Err(Error::InvalidState(_))));
    }

    #[test]
    fn centers_start_normalized() {
        let mut store = ParamStore::new();
        let c = CategoryCenters::init(&mut store, 3, 5, &mut crate::rng::stream(0, crate::rng::Stream::Init));
        let o = store.value(c.id);
        for r in 0..3 {
            let n: f64 = o.row(r).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
