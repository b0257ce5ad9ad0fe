use super::{ParamId, ParamStore, Tensor};

/// Adaptive moment estimation over a fixed set of parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    params: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, lr: f64) -> Self {
        let m = params.iter().map(|&id| Tensor::zeros(store.value(id).shape())).collect::<Vec<_>>();
        let v = m.clone();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            params,
            m,
            v,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, &id) in self.params.iter().enumerate() {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (self.m[k].values_mut(), self.v[k].values_mut());
            for (((w, &g), mi), vi) in p.value.values_mut().iter_mut().zip(p.grad.values()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Plain gradient descent.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    params: Vec<ParamId>,
}

impl Sgd {
    pub fn new(params: Vec<ParamId>, lr: f64) -> Self {
        Self { lr, params }
    }

    pub fn step(&self, store: &mut ParamStore) {
        for &id in &self.params {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            for (w, &g) in p.value.values_mut().iter_mut().zip(p.grad.values()) {
                *w -= self.lr * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![0.5, -0.25]));
        let before = store.value(id).clone();
        let mut adam = Adam::new(&store, vec![id], 1e-3);
        adam.step(&mut store);
        assert_eq!(store.value(id), &before);
        Sgd::new(vec![id], 0.1).step(&mut store);
        assert_eq!(store.value(id), &before);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![3.0]));
        let mut adam = Adam::new(&store, vec![id], 0.1);
        for _ in 0..500 {
            store.zero_grad();
            let w = store.value(id).values()[0];
            store.get_mut(id).grad = Tensor::vector(vec![2.0 * w]);
            adam.step(&mut store);
        }
        assert!(store.value(id).values()[0].abs() < 1e-2);
    }
}
