//! Mean-aggregation message-passing encoder, multi-layer READOUT, and the
//! projection head used by the contrastive branch.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{init, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graphdata::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
}

/// Several graphs packed as one block-diagonal graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    features: Tensor,
    /// Row-normalized adjacency: row `v` averages the neighbors of `v`.
    neighbor_mean: Rc<SparseMatrix>,
    /// `graphs × nodes` mean-pooling matrix.
    pool: Rc<SparseMatrix>,
    num_graphs: usize,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let f = graphs
            .first()
            .map(|g| g.feature_dim())
            .ok_or_else(|| Error::InvalidArgument("empty graph batch".into()))?;
        let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut features = Vec::with_capacity(total * f);
        let mut agg_rows = Vec::with_capacity(total);
        let mut pool_rows = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for g in graphs {
            if g.feature_dim() != f {
                return Err(Error::shape("graph batch", &[f], &[g.feature_dim()]));
            }
            features.extend_from_slice(g.features());
            for nbrs in g.adjacency() {
                let w = if nbrs.is_empty() { 0.0 } else { 1.0 / nbrs.len() as f64 };
                agg_rows.push(nbrs.into_iter().map(|u| (offset + u, w)).collect());
            }
            let n = g.num_nodes();
            pool_rows.push((offset..offset + n).map(|v| (v, 1.0 / n as f64)).collect());
            offset += n;
        }
        Ok(Self {
            features: Tensor::matrix(total, f, features),
            neighbor_mean: Rc::new(SparseMatrix::from_rows(total, &agg_rows)),
            pool: Rc::new(SparseMatrix::from_rows(total, &pool_rows)),
            num_graphs: graphs.len(),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.num_graphs
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }
}

/// Per-layer combine weights over `[self; mean(neighbors)]` and the linear
/// READOUT map from concatenated per-layer pooled vectors to `embed_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layers: Vec<ParamId>,
    pub readout: ParamId,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, config: EncoderConfig, rng: &mut R) -> Result<Self> {
        if config.layers == 0 || config.embed_dim == 0 || config.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!("degenerate encoder config {config:?}")));
        }
        let mut layers = Vec::with_capacity(config.layers);
        let mut input = config.feature_dim;
        for l in 0..config.layers {
            layers.push(store.add(format!("encoder.layer{l}"), init::glorot(rng, 2 * input, config.hidden_dim)));
            input = config.hidden_dim;
        }
        let readout = store.add(
            "encoder.readout",
            init::glorot(rng, config.layers * config.hidden_dim, config.embed_dim),
        );
        Ok(Self { config, layers, readout })
    }

    /// Node embeddings after every layer (`layers` matrices of
    /// `nodes × hidden`).
    pub fn encode_nodes(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<Vec<Var>> {
        if batch.features.cols() != self.config.feature_dim {
            return Err(Error::shape(
                "encode_nodes",
                &[self.config.feature_dim],
                &[batch.features.cols()],
            ));
        }
        let mut h = tape.constant(batch.features.clone());
        let mut out = Vec::with_capacity(self.layers.len());
        for &w in &self.layers {
            let agg = tape.spmm(batch.neighbor_mean.clone(), h)?;
            let cat = tape.concat_cols(&[h, agg])?;
            let w = tape.param(store, w);
            let z = tape.matmul(cat, w)?;
            h = tape.relu(z);
            out.push(h);
        }
        Ok(out)
    }

    /// Mean-pools each layer per graph, concatenates, and maps to
    /// `graphs × embed_dim`.
    pub fn readout(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch, layers: &[Var]) -> Result<Var> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("readout needs at least one layer".into()));
        }
        let pooled = layers
            .iter()
            .map(|&h| tape.spmm(batch.pool.clone(), h))
            .collect::<Result<Vec<_>>>()?;
        let cat = tape.concat_cols(&pooled)?;
        let w = tape.param(store, self.readout);
        tape.matmul(cat, w)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<Var> {
        let layers = self.encode_nodes(tape, store, batch)?;
        self.readout(tape, store, batch, &layers)
    }

    /// Inference embeddings (`graphs × embed_dim`), computed in chunks that
    /// may run in parallel.
    pub fn embed(&self, store: &ParamStore, graphs: &[&Graph], exec: Exec) -> Result<Tensor> {
        const CHUNK: usize = 64;
        let chunks: Vec<&[&Graph]> = graphs.chunks(CHUNK).collect();
        let parts = exec.try_map_range(chunks.len(), |i| -> Result<Tensor> {
            let batch = GraphBatch::new(chunks[i])?;
            let mut tape = Tape::new();
            let h = self.forward(&mut tape, store, &batch)?;
            Ok(tape.value(h).clone())
        })?;
        let d = self.config.embed_dim;
        let mut values = Vec::with_capacity(graphs.len() * d);
        for p in parts {
            values.extend(p.into_values());
        }
        Ok(Tensor::matrix(graphs.len(), d, values))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Identity,
    Mlp,
}

/// `g(·)`: identity or a two-layer `D → D → D` perceptron, followed by L2
/// normalization.
#[derive(Clone, Debug, PartialEq)]
pub enum ProjectionHead {
    Identity,
    Mlp { first: ParamId, second: ParamId },
}

impl ProjectionHead {
    pub fn init_mlp<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        let first = store.add("projection.first", init::glorot(rng, dim, dim));
        let second = store.add("projection.second", init::glorot(rng, dim, dim));
        Self::Mlp { first, second }
    }

    pub fn kind(&self) -> ProjectionKind {
        match self {
            Self::Identity => ProjectionKind::Identity,
            Self::Mlp { .. } => ProjectionKind::Mlp,
        }
    }

    /// Row-wise projection; zero rows come out as zero rows.
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let z = match self {
            Self::Identity => h,
            Self::Mlp { first, second } => {
                let w1 = tape.param(store, *first);
                let a = tape.matmul(h, w1)?;
                let a = tape.relu(a);
                let w2 = tape.param(store, *second);
                tape.matmul(a, w2)?
            }
        };
        tape.l2_normalize_rows(z)
    }

    /// Projects a single embedding. The flag is set when the projected
    /// vector is zero and could not be normalized.
    pub fn project(&self, store: &ParamStore, h: &[f64]) -> Result<(Vec<f64>, bool)> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, h.len(), h.to_vec()));
        let z = self.apply(&mut tape, store, x)?;
        let out = tape.value(z).values().to_vec();
        let degenerate = out.iter().all(|&v| v == 0.0);
        Ok((out, degenerate))
    }
}
