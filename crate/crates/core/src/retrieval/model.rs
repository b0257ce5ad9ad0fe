use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use super::Triple;
use crate::diffcore::{init, Adam, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graphdata::Graph;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub edge_dim: usize,
    pub rounds: usize,
    pub margin: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_temp: f64,
    pub gumbel_scale: f64,
}

impl RetrieverConfig {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            hidden_dim: 16,
            edge_dim: 16,
            rounds: 3,
            margin: 0.5,
            sinkhorn_iters: 20,
            sinkhorn_temp: 0.1,
            gumbel_scale: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::InvalidArgument(format!("margin must be positive, got {}", self.margin)));
        }
        if self.sinkhorn_iters == 0 {
            return Err(Error::InvalidArgument("sinkhorn_iters must be at least 1".into()));
        }
        if !(self.sinkhorn_temp > 0.0) || self.gumbel_scale < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid temperatures: sinkhorn_temp {} gumbel_scale {}",
                self.sinkhorn_temp, self.gumbel_scale
            )));
        }
        if self.rounds == 0 || self.hidden_dim == 0 || self.edge_dim == 0 {
            return Err(Error::InvalidArgument("retriever dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Edge-embedding matrix of one graph (`|E| × edge_dim`). Edgeless graphs
/// give a `0 × edge_dim` matrix with `edgeless` set.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeEmbeddings {
    pub matrix: Tensor,
    pub edgeless: bool,
}

/// Gumbel-Sinkhorn in log space on a square affinity matrix. Noise is
/// added only when `noise` is given.
pub fn gumbel_sinkhorn(
    tape: &mut Tape,
    affinity: Var,
    iters: usize,
    temp: f64,
    gumbel_scale: f64,
    noise: Option<&mut rng::Rng>,
) -> Result<Var> {
    let (r, c) = tape
        .value(affinity)
        .dims2()
        .ok_or_else(|| Error::shape("gumbel_sinkhorn", tape.shape(affinity), &[]))?;
    if r != c {
        return Err(Error::shape("gumbel_sinkhorn", &[r, c], &[c, r]));
    }
    let mut x = affinity;
    if let Some(rng) = noise {
        if gumbel_scale > 0.0 {
            let g = Gumbel::new(0.0, 1.0).expect("valid gumbel");
            let values = (0..r * c).map(|_| gumbel_scale * g.sample(rng)).collect();
            let n = tape.constant(Tensor::matrix(r, c, values));
            x = tape.add(x, n)?;
        }
    }
    let mut log_p = tape.scale(x, 1.0 / temp);
    for _ in 0..iters {
        log_p = tape.row_log_normalize(log_p)?;
        log_p = tape.col_log_normalize(log_p)?;
    }
    Ok(tape.exp(log_p))
}

/// Tensor form of [`gumbel_sinkhorn`] without noise.
pub fn sinkhorn_matrix(affinity: &Tensor, iters: usize, temp: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(affinity.clone());
    let p = gumbel_sinkhorn(&mut tape, a, iters, temp, 0.0, None)?;
    Ok(tape.value(p).clone())
}

/// Edge-alignment matcher: node message passing with sum aggregation,
/// symmetrized edge embeddings, and a linear map `ψ` applied before the
/// negative-L1 affinity.
#[derive(Clone, Debug, PartialEq)]
pub struct Retriever {
    pub config: RetrieverConfig,
    pub store: ParamStore,
    input: ParamId,
    rounds: Vec<ParamId>,
    edge: ParamId,
    psi: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrieverTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for RetrieverTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            batch_size: 16,
        }
    }
}

impl Retriever {
    pub fn new<R: Rng + ?Sized>(config: RetrieverConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let h = config.hidden_dim;
        let input = store.add("retriever.input", init::glorot(rng, config.feature_dim, h));
        let rounds = (0..config.rounds)
            .map(|t| store.add(format!("retriever.round{t}"), init::glorot(rng, 2 * h, h)))
            .collect();
        let edge = store.add("retriever.edge", init::glorot(rng, 3 * h, config.edge_dim));
        let psi = store.add("retriever.psi", Tensor::identity(config.edge_dim));
        Ok(Self {
            config,
            store,
            input,
            rounds,
            edge,
            psi,
        })
    }

    /// Rebuilds the parameter layout for `config` and loads values from a
    /// checkpoint.
    pub fn from_checkpoint(config: RetrieverConfig, text: &str) -> Result<Self> {
        let mut r = Self::new(config, &mut rng::stream(0, rng::Stream::Init))?;
        crate::diffcore::checkpoint::load_into(&mut r.store, text)?;
        Ok(r)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// Edge embeddings recorded on `tape` against `store` (which must share
    /// this retriever's layout). `None` for an edgeless graph.
    pub fn edge_vars(&self, tape: &mut Tape, store: &ParamStore, g: &Graph) -> Result<Option<Var>> {
        if g.feature_dim() != self.config.feature_dim {
            return Err(Error::shape("embed_edges", &[self.config.feature_dim], &[g.feature_dim()]));
        }
        if g.num_edges() == 0 {
            return Ok(None);
        }
        let n = g.num_nodes();
        let adj_rows: Vec<Vec<(usize, f64)>> = g
            .adjacency()
            .into_iter()
            .map(|nb| nb.into_iter().map(|u| (u, 1.0)).collect())
            .collect();
        let adj = Rc::new(SparseMatrix::from_rows(n, &adj_rows));
        let x = tape.constant(Tensor::matrix(n, g.feature_dim(), g.features().to_vec()));
        let w = tape.param(store, self.input);
        let z = tape.matmul(x, w)?;
        let mut h = tape.relu(z);
        for &wt in &self.rounds {
            let agg = tape.spmm(adj.clone(), h)?;
            let cat = tape.concat_cols(&[h, agg])?;
            let w = tape.param(store, wt);
            let z = tape.matmul(cat, w)?;
            h = tape.relu(z);
        }
        let us = Rc::new(g.edges().iter().map(|e| e.0).collect::<Vec<_>>());
        let vs = Rc::new(g.edges().iter().map(|e| e.1).collect::<Vec<_>>());
        let hu = tape.gather_rows(h, us)?;
        let hv = tape.gather_rows(h, vs)?;
        let prod = tape.mul(hu, hv)?;
        let forward = tape.concat_cols(&[hu, hv, prod])?;
        let backward = tape.concat_cols(&[hv, hu, prod])?;
        let we = tape.param(store, self.edge);
        let a = tape.matmul(forward, we)?;
        let a = tape.relu(a);
        let b = tape.matmul(backward, we)?;
        let b = tape.relu(b);
        let s = tape.add(a, b)?;
        Ok(Some(tape.scale(s, 0.5)))
    }

    pub fn embed_edges(&self, g: &Graph) -> Result<EdgeEmbeddings> {
        let mut tape = Tape::new();
        Ok(match self.edge_vars(&mut tape, &self.store, g)? {
            Some(v) => EdgeEmbeddings {
                matrix: tape.value(v).clone(),
                edgeless: false,
            },
            None => EdgeEmbeddings {
                matrix: Tensor::matrix(0, self.config.edge_dim, Vec::new()),
                edgeless: true,
            },
        })
    }

    /// `Σ (R_q − P·R_c)_+` with both sides zero-padded to the larger edge
    /// count and `P` the Gumbel-Sinkhorn alignment of the `ψ`-mapped rows.
    pub fn distance_vars(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        rq: Option<Var>,
        rc: Option<Var>,
        noise: Option<&mut rng::Rng>,
    ) -> Result<Var> {
        let Some(rq) = rq else {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        };
        let m = tape.value(rq).rows();
        let rc = match rc {
            Some(v) => v,
            None => tape.constant(Tensor::matrix(0, self.config.edge_dim, Vec::new())),
        };
        let k = m.max(tape.value(rc).rows());
        let rq = tape.pad_rows(rq, k)?;
        let rc = tape.pad_rows(rc, k)?;
        let psi = tape.param(store, self.psi);
        let aq = tape.matmul(rq, psi)?;
        let ac = tape.matmul(rc, psi)?;
        let affinity = tape.neg_l1_dist(aq, ac)?;
        let cfg = &self.config;
        let p = gumbel_sinkhorn(tape, affinity, cfg.sinkhorn_iters, cfg.sinkhorn_temp, cfg.gumbel_scale, noise)?;
        let aligned = tape.matmul(p, rc)?;
        let diff = tape.sub(rq, aligned)?;
        let h = tape.hinge(diff);
        Ok(tape.sum(h))
    }

    /// Distance `d(query | corpus)`; Gumbel noise is drawn from `noise` when
    /// given (training) and omitted otherwise.
    pub fn distance(&self, query: &Graph, corpus: &Graph, noise: Option<&mut rng::Rng>) -> Result<f64> {
        let mut tape = Tape::new();
        let rq = self.edge_vars(&mut tape, &self.store, query)?;
        let rc = self.edge_vars(&mut tape, &self.store, corpus)?;
        let d = self.distance_vars(&mut tape, &self.store, rq, rc, noise)?;
        tape.value(d).item()
    }

    /// Noise-free distance between precomputed edge embeddings.
    pub fn distance_embedded(&self, rq: &EdgeEmbeddings, rc: &EdgeEmbeddings) -> Result<f64> {
        let mut tape = Tape::new();
        let q = (!rq.edgeless).then(|| tape.constant(rq.matrix.clone()));
        let c = (!rc.edgeless).then(|| tape.constant(rc.matrix.clone()));
        let d = self.distance_vars(&mut tape, &self.store, q, c, None)?;
        tape.value(d).item()
    }

    /// Hinge ranking loss `[γ + d(q|pos) − d(q|neg)]_+` for one triple.
    pub fn triple_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        t: &Triple,
        mut noise: Option<&mut rng::Rng>,
    ) -> Result<Var> {
        let rq = self.edge_vars(tape, store, &t.query)?;
        let rp = self.edge_vars(tape, store, &t.positive)?;
        let rn = self.edge_vars(tape, store, &t.negative)?;
        let dp = self.distance_vars(tape, store, rq, rp, noise.as_deref_mut())?;
        let dn = self.distance_vars(tape, store, rq, rn, noise)?;
        let diff = tape.sub(dp, dn)?;
        let margin = tape.constant(Tensor::scalar(self.config.margin));
        let z = tape.add(diff, margin)?;
        Ok(tape.hinge(z))
    }

    /// Fraction of triples with `d(q|pos) < d(q|neg)` under noise-free
    /// alignment.
    pub fn ranking_accuracy(&self, triples: &[Triple], exec: Exec) -> Result<f64> {
        if triples.is_empty() {
            return Err(Error::InvalidArgument("no triples to rank".into()));
        }
        let wins = exec.try_map_range(triples.len(), |i| -> Result<bool> {
            let t = &triples[i];
            Ok(self.distance(&t.query, &t.positive, None)? < self.distance(&t.query, &t.negative, None)?)
        })?;
        Ok(wins.iter().filter(|&&w| w).count() as f64 / triples.len() as f64)
    }

    /// Minibatch Adam on the hinge ranking loss. Returns the mean training
    /// loss of every epoch. Aborts when an epoch's loss exceeds ten times
    /// the first epoch's or is not finite.
    pub fn train(&mut self, triples: &[Triple], opts: RetrieverTrainConfig, seed: u64, exec: Exec) -> Result<Vec<f64>> {
        if triples.is_empty() {
            return Err(Error::InvalidArgument("retriever training needs at least one triple".into()));
        }
        if opts.epochs == 0 || opts.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be at least 1".into()));
        }
        let mut stream = rng::stream(seed, rng::Stream::Retrieval);
        let mut adam = Adam::new(&self.store, self.param_ids(), opts.lr);
        let mut history = Vec::with_capacity(opts.epochs);
        let mut order: Vec<usize> = (0..triples.len()).collect();
        for _ in 0..opts.epochs {
            order.shuffle(&mut stream);
            let mut total = 0.0;
            for chunk in order.chunks(opts.batch_size) {
                let seeds: Vec<u64> = chunk.iter().map(|_| stream.random()).collect();
                let this = &*self;
                let parts = exec.try_map_range(chunk.len(), |k| -> Result<(f64, Vec<(ParamId, Tensor)>)> {
                    let mut noise = rng::Rng::seed_from_u64(seeds[k]);
                    let mut tape = Tape::new();
                    let loss = this.triple_loss(&mut tape, &this.store, &triples[chunk[k]], Some(&mut noise))?;
                    let value = tape.value(loss).item()?;
                    Ok((value, tape.backward(loss)?.params().to_vec()))
                })?;
                self.store.zero_grad();
                let scale = 1.0 / chunk.len() as f64;
                for (value, grads) in parts {
                    total += value;
                    for (id, g) in grads {
                        let acc = &mut self.store.get_mut(id).grad;
                        for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                            *a += scale * b;
                        }
                    }
                }
                adam.step(&mut self.store);
            }
            let mean = total / triples.len() as f64;
            let initial = history.first().copied().unwrap_or(mean);
            if !mean.is_finite() || mean > 10.0 * initial.max(f64::MIN_POSITIVE) {
                return Err(Error::Divergence { initial, loss: mean });
            }
            history.push(mean);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn retriever(f: usize) -> Retriever {
        Retriever::new(RetrieverConfig::new(f), &mut rng::stream(1, rng::Stream::Init)).unwrap()
    }

    fn triangle_with_tail() -> Graph {
        Graph::new(
            vec![0.1, 0.9, 0.4, 0.2, 0.7, 0.3, 0.5, 0.5],
            2,
            vec![(0, 1), (1, 2), (2, 0), (2, 3)],
            0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_affinity_gives_uniform_plan() {
        let p = sinkhorn_matrix(&Tensor::full(&[4, 4], 3.0), 20, 0.1).unwrap();
        assert!(p.values().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn edge_rows_are_symmetric_in_endpoint_order() {
        let r = retriever(2);
        let g = Graph::new(vec![0.3, -0.2, 1.0, 0.5], 2, vec![(0, 1)], 0).unwrap();
        let flipped = Graph::new(vec![1.0, 0.5, 0.3, -0.2], 2, vec![(0, 1)], 0).unwrap();
        let a = r.embed_edges(&g).unwrap();
        let b = r.embed_edges(&flipped).unwrap();
        assert_eq!(a.matrix.shape(), &[1, 16]);
        assert!(a.matrix.max_abs_diff(&b.matrix) < 1e-12);
    }

    #[test]
    fn edgeless_query_is_contained_everywhere() {
        let r = retriever(2);
        let q = Graph::new(vec![1.0, 2.0], 2, vec![], 0).unwrap();
        assert_eq!(r.distance(&q, &triangle_with_tail(), None).unwrap(), 0.0);
        assert!(r.embed_edges(&q).unwrap().edgeless);
    }

    #[test]
    fn distance_is_nonnegative_and_asymmetric() {
        let r = retriever(2);
        let big = triangle_with_tail();
        let small = big.induced(&[0, 1]);
        let a = r.distance(&small, &big, None).unwrap();
        let b = r.distance(&big, &small, None).unwrap();
        assert!(a >= 0.0 && b >= 0.0);
        assert!(b > a);
    }

    #[test]
    fn equal_distances_give_margin_loss() {
        let r = retriever(2);
        let g = triangle_with_tail();
        let t = Triple {
            query: g.induced(&[0, 1, 2]),
            positive: g.clone(),
            negative: g,
            source: 0,
        };
        let mut tape = Tape::new();
        let l = r.triple_loss(&mut tape, &r.store, &t, None).unwrap();
        assert!((tape.value(l).item().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = RetrieverConfig::new(2);
        c.margin = 0.0;
        assert!(Retriever::new(c, &mut rng::stream(0, rng::Stream::Init)).is_err());
    }
}
