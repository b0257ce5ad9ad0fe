use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Attention fusion of retrieved embeddings: `a = softmax(h_base · W_a)` per
/// row and `h_ret = Σ_j a_j ĥ_j`.
///
/// `h_base` is `b × D`, `w_a` is `D × q`, and `retrieved` stacks the `q`
/// neighbors of each query consecutively (`(b·q) × D`).
pub fn fuse_retrieved(tape: &mut Tape, h_base: Var, retrieved: Var, w_a: Var) -> Result<Var> {
    let logits = tape.matmul(h_base, w_a)?;
    let a = tape.row_softmax(logits)?;
    tape.fuse_rows(a, retrieved)
}

/// Single-query form of [`fuse_retrieved`].
pub fn fuse_one(h_base: &[f64], retrieved: &[Vec<f64>], w_a: &Tensor) -> Result<Vec<f64>> {
    let q = w_a.cols();
    if retrieved.len() != q {
        return Err(Error::shape("fuse_retrieved", &[retrieved.len()], &[q]));
    }
    let d = h_base.len();
    if let Some(bad) = retrieved.iter().find(|r| r.len() != d) {
        return Err(Error::shape("fuse_retrieved", &[d], &[bad.len()]));
    }
    let rows: Vec<f64> = retrieved.concat();
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::matrix(1, d, h_base.to_vec()));
    let r = tape.constant(Tensor::matrix(q, d, rows));
    let w = tape.constant(w_a.clone());
    let out = fuse_retrieved(&mut tape, h, r, w)?;
    Ok(tape.value(out).values().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_neighbors_pass_through() {
        let w = Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.7]);
        let v = vec![1.5, -2.0];
        let out = fuse_one(&[0.4, 0.9], &[v.clone(), v.clone(), v.clone()], &w).unwrap();
        assert!((out[0] - v[0]).abs() < 1e-12 && (out[1] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_attention_averages() {
        let w = Tensor::zeros(&[1, 2]);
        let out = fuse_one(&[3.0], &[vec![1.0], vec![4.0]], &w).unwrap();
        assert!((out[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn hand_set_logits() {
        // h = [1, 0] picks the logits [ln 3, 0] → weights [0.75, 0.25].
        let w = Tensor::matrix(2, 2, vec![3f64.ln(), 0.0, 5.0, -5.0]);
        let out = fuse_one(&[1.0, 0.0], &[vec![2.0, 0.0], vec![-2.0, 4.0]], &w).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((out[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_neighbor_count_is_a_shape_error() {
        let w = Tensor::zeros(&[1, 3]);
        assert!(matches!(fuse_one(&[1.0], &[vec![1.0]], &w), Err(Error::Shape { .. })));
    }
}
