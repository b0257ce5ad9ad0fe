use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Largest relative disagreement between reverse-mode and central-difference
/// gradients of a scalar function at `x`.
///
/// Per coordinate the error is `|analytic − numeric| / max(1e-8, |analytic| +
/// |numeric|)`. Functions with kinks (hinge, L1) should be evaluated away
/// from the kink; perturb `x` first.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .wrt(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |point: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(point.clone());
        let l = f(&mut t, v)?;
        t.value(l).item()
    };
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.values_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.values()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// [`grad_check`] over stored parameters: compares the backward gradients
/// of `ids` with central differences obtained by perturbing the store.
pub fn grad_check_params<F>(store: &ParamStore, ids: &[ParamId], f: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let mut probe = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        t.value(l).item()
    };
    let mut worst = 0.0f64;
    for &id in ids {
        let analytic = grads
            .params()
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        for i in 0..store.value(id).numel() {
            let orig = store.value(id).values()[i];
            probe.value_mut(id).values_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.value_mut(id).values_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.value_mut(id).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.values()[i];
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let a = Tensor::matrix(1, 4, vec![0.5, -1.0, 2.0, 3.0]);
        let x = Tensor::matrix(4, 1, vec![1.0, 2.0, -0.5, 0.1]);
        let err = grad_check(
            |t, x| {
                let a = t.constant(a.clone());
                let y = t.matmul(a, x)?;
                Ok(t.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let x = Tensor::vector(vec![1.0]);
        assert!(grad_check(|t, x| Ok(t.sum(x)), &x, 0.0).is_err());
    }
}
