//! Two-stage decoupled training: joint feature learning with the base,
//! retrieval and contrastive branches, then classifier re-balancing on a
//! frozen encoder.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bscl::{bscl_loss_vars, CategoryCenters, ContrastConfig};
use crate::classifier::{weight_decay_var, ClassifierParams, RegConfig};
use crate::diffcore::{checkpoint, init, Adam, ParamId, ParamStore, Sgd, Tape, Tensor};
use crate::encoder::{EncoderConfig, EncoderParams, GraphBatch, ProjectionHead, ProjectionKind};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graphdata::{augment, Batch, ClassSampler, Dataset, Graph, InstanceSampler};
use crate::retrieval::{
    mine_pairs, params_fingerprint, CorpusIndex, Retriever, RetrieverConfig, RetrieverTrainConfig,
};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta_ret: f64,
    pub eta_con: f64,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub seed: u64,
    pub use_retrieval: bool,
    pub use_bscl: bool,
    pub use_weight_reg: bool,
    pub temperature: f64,
    pub alpha: f64,
    pub top_q: usize,
    pub augment_ratio: f64,
    pub projection: ProjectionKind,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
    /// Write measured epoch times into `history.csv`. Off by default so
    /// that reruns produce identical files.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta_ret: 0.1,
            eta_con: 1.0,
            epochs: 200,
            finetune_epochs: 50,
            batch_size: 32,
            lr_stage1: 1e-3,
            lr_stage2: 1e-2,
            seed: 0,
            use_retrieval: true,
            use_bscl: true,
            use_weight_reg: true,
            temperature: 0.2,
            alpha: 0.05,
            top_q: 10,
            augment_ratio: crate::graphdata::augment::DEFAULT_AUGMENT_RATIO,
            projection: ProjectionKind::Mlp,
            hidden_dim: 64,
            embed_dim: 64,
            layers: 3,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eta_ret >= 0.0) || !(self.eta_con >= 0.0) {
            return bad(format!("loss weights must be nonnegative: eta_ret {} eta_con {}", self.eta_ret, self.eta_con));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.lr_stage1 > 0.0) || !(self.lr_stage2 > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.use_retrieval && self.top_q == 0 {
            return bad("top_q must be at least 1 when retrieval is on".into());
        }
        self.contrast().validate()
    }

    pub fn contrast(&self) -> ContrastConfig {
        ContrastConfig {
            temperature: self.temperature,
            alpha: self.alpha,
        }
    }

    /// Same run with every branch disabled: plain cross-entropy, one stage.
    pub fn baseline(&self) -> Self {
        Self {
            use_retrieval: false,
            use_bscl: false,
            use_weight_reg: false,
            ..self.clone()
        }
    }

    fn retrieval_active(&self) -> bool {
        self.use_retrieval && self.eta_ret > 0.0
    }

    fn bscl_active(&self) -> bool {
        self.use_bscl && self.eta_con > 0.0
    }
}

/// Top-q neighbors of every training graph under a frozen retriever.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalContext {
    pub neighbors: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
    pub q: usize,
    pub retriever_fingerprint: String,
}

impl RetrievalContext {
    /// Neighbor table of `train` from an index built over it.
    pub fn from_index(retriever: &Retriever, index: &CorpusIndex, train: &Dataset, q: usize, exec: Exec) -> Result<Self> {
        index.check_dataset(train)?;
        if q == 0 || q + 1 > train.len() {
            return Err(Error::InvalidArgument(format!(
                "top_q {q} needs at least {} training graphs, have {}",
                q + 1,
                train.len()
            )));
        }
        let table = index.neighbor_table(retriever, q, exec)?;
        Ok(Self {
            neighbors: table.iter().map(|r| r.neighbor_indices.clone()).collect(),
            distances: table.into_iter().map(|r| r.distances).collect(),
            q,
            retriever_fingerprint: params_fingerprint(retriever),
        })
    }

    /// Mines triples from `train`, trains a retriever, indexes `train` and
    /// builds the neighbor table.
    pub fn prepare(
        train: &Dataset,
        config: RetrieverConfig,
        opts: RetrieverTrainConfig,
        per_query: usize,
        q: usize,
        seed: u64,
        exec: Exec,
    ) -> Result<(Retriever, CorpusIndex, Self)> {
        let mined = mine_pairs(train, per_query, &mut rng::stream(seed, Stream::Mining))?;
        let mut retriever = Retriever::new(config, &mut rng::stream(seed, Stream::Retrieval))?;
        retriever.train(&mined.triples, opts, seed, exec)?;
        let index = CorpusIndex::build(&retriever, train, exec)?;
        let ctx = Self::from_index(&retriever, &index, train, q, exec)?;
        Ok((retriever, index, ctx))
    }
}

/// All trainable state: encoder, projection head, category centers,
/// attention, and classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub projection: ProjectionHead,
    pub centers: CategoryCenters,
    pub attention: ParamId,
    pub classifier: ClassifierParams,
    pub num_classes: usize,
    /// Fingerprint of the frozen retriever used in stage 1, if any.
    pub retriever_fingerprint: Option<String>,
}

impl ModelState {
    /// Initializes every component from the run's init stream in a fixed
    /// order, whichever branches are enabled.
    pub fn init(feature_dim: usize, num_classes: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = rng::stream(cfg.seed, Stream::Init);
        let mut store = ParamStore::new();
        let enc_cfg = EncoderConfig {
            feature_dim,
            hidden_dim: cfg.hidden_dim,
            embed_dim: cfg.embed_dim,
            layers: cfg.layers,
        };
        let encoder = EncoderParams::init(&mut store, enc_cfg, &mut rng)?;
        let d = cfg.embed_dim;
        let projection = match cfg.projection {
            ProjectionKind::Mlp => ProjectionHead::init_mlp(&mut store, d, &mut rng),
            ProjectionKind::Identity => ProjectionHead::Identity,
        };
        let centers = CategoryCenters::init(&mut store, num_classes, d, &mut rng);
        let attention = store.add("attention", init::glorot(&mut rng, d, cfg.top_q.max(1)));
        let classifier = ClassifierParams::init(&mut store, num_classes, d, &mut rng);
        Ok(Self {
            store,
            encoder,
            projection,
            centers,
            attention,
            classifier,
            num_classes,
            retriever_fingerprint: None,
        })
    }

    /// Graph embeddings `h_base` (`n × D`).
    pub fn embed(&self, graphs: &[&Graph], exec: Exec) -> Result<Tensor> {
        self.encoder.embed(&self.store, graphs, exec)
    }

    pub fn embed_dataset(&self, ds: &Dataset, exec: Exec) -> Result<Tensor> {
        let graphs: Vec<&Graph> = ds.graphs().iter().collect();
        self.embed(&graphs, exec)
    }

    pub fn predict(&self, ds: &Dataset, exec: Exec) -> Result<Vec<usize>> {
        let h = self.embed_dataset(ds, exec)?;
        Ok(self.classifier.predict(&self.store, &h))
    }

    pub fn accuracy(&self, ds: &Dataset, exec: Exec) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::InvalidArgument("accuracy on an empty dataset".into()));
        }
        let pred = self.predict(ds, exec)?;
        let hits = pred.iter().zip(ds.graphs()).filter(|(p, g)| **p == g.label()).count();
        Ok(hits as f64 / ds.len() as f64)
    }

    fn encoder_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.layers.clone();
        ids.push(self.encoder.readout);
        ids
    }

    /// Serialized encoder parameters, for frozen-encoder checks.
    pub fn encoder_snapshot(&self) -> String {
        self.encoder_ids()
            .into_iter()
            .map(|id| {
                let p = self.store.get(id);
                let mut s = format!("{}:", p.name);
                for v in p.value.values() {
                    let _ = write!(s, "{:016x},", v.to_bits());
                }
                s
            })
            .collect()
    }

    pub fn check_frozen(&self, snapshot: &str) -> Result<()> {
        if self.encoder_snapshot() != snapshot {
            return Err(Error::InvariantViolation("encoder parameters changed during classifier fine-tuning".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.store, path)
    }

    /// Rebuilds the layout for `cfg` and loads parameter values.
    pub fn load(path: &Path, feature_dim: usize, num_classes: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut m = Self::init(feature_dim, num_classes, cfg)?;
        checkpoint::load(&mut m.store, path)?;
        Ok(m)
    }
}

/// Losses of one optimizer step (or epoch means).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub l_base: f64,
    pub l_ret: f64,
    pub l_con: f64,
    pub l_total: f64,
}

impl LossRecord {
    fn add(&mut self, o: &LossRecord) {
        self.l_base += o.l_base;
        self.l_ret += o.l_ret;
        self.l_con += o.l_con;
        self.l_total += o.l_total;
    }

    fn scaled(&self, k: f64) -> LossRecord {
        LossRecord {
            l_base: self.l_base * k,
            l_ret: self.l_ret * k,
            l_con: self.l_con * k,
            l_total: self.l_total * k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, continuing across stages.
    pub epoch: usize,
    pub stage: u8,
    pub losses: LossRecord,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_stage1_epoch: usize,
    pub best_stage2_epoch: Option<usize>,
}

impl TrainHistory {
    /// `epoch,l_base,l_ret,l_con,l_total,val_acc,seconds`; the seconds
    /// field is left empty unless `with_time`.
    pub fn to_csv(&self, with_time: bool) -> String {
        let mut out = String::from("epoch,l_base,l_ret,l_con,l_total,val_acc,seconds\n");
        for r in &self.records {
            let l = &r.losses;
            let _ = write!(out, "{},{},{},{},{},{},", r.epoch, l.l_base, l.l_ret, l.l_con, l.l_total, r.val_acc);
            if with_time {
                let _ = write!(out, "{:.3}", r.seconds);
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path, with_time: bool) -> Result<()> {
        std::fs::write(path, self.to_csv(with_time)).map_err(|e| Error::io(path, e))
    }
}

fn check_finite(rec: &LossRecord, store: &ParamStore) -> Result<()> {
    if rec.l_total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch: 0,
            step: 0,
            last_good: Box::new(store.clone()),
        })
    }
}

/// One stage-1 update on `batch`: optional two-view augmentation, retrieval
/// expansion, a single encoder pass over originals, retrieved graphs and
/// second views, the three losses, and one Adam step.
pub fn stage1_step(
    model: &mut ModelState,
    opt: &mut Adam,
    train: &Dataset,
    batch: &Batch,
    retrieval: Option<&RetrievalContext>,
    cfg: &TrainConfig,
    aug_rng: &mut rng::Rng,
) -> Result<LossRecord> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let use_ret = cfg.retrieval_active();
    let use_con = cfg.bscl_active();
    let b = batch.len();
    let labels: Vec<usize> = batch.graph_indices.iter().map(|&i| train.graph(i).label()).collect();

    // With the contrastive branch on, both views are augmented; each view-2
    // graph is drawn right after its view-1 sibling.
    let mut v2 = Vec::new();
    let mut graphs: Vec<Graph> = Vec::with_capacity(2 * b);
    for &i in &batch.graph_indices {
        let g = train.graph(i);
        if use_con {
            graphs.push(augment(g, cfg.augment_ratio, aug_rng)?.graph);
            v2.push(augment(g, cfg.augment_ratio, aug_rng)?.graph);
        } else {
            graphs.push(g.clone());
        }
    }
    let mut neighbor_rows = Vec::new();
    let mut q = 0;
    if use_ret {
        let ctx = retrieval.ok_or_else(|| Error::InvalidState("retrieval branch needs a neighbor table".into()))?;
        q = ctx.q;
        if ctx.neighbors.len() != train.len() {
            return Err(Error::InvalidState("neighbor table does not match the training set".into()));
        }
        let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in &batch.graph_indices {
            for &j in &ctx.neighbors[i] {
                slot.entry(j).or_insert(0);
            }
        }
        for (k, (j, s)) in slot.iter_mut().enumerate() {
            *s = b + k;
            graphs.push(train.graph(*j).clone());
        }
        for &i in &batch.graph_indices {
            neighbor_rows.extend(ctx.neighbors[i].iter().map(|j| slot[j]));
        }
    }
    let v2_start = graphs.len();
    graphs.extend(v2);

    let refs: Vec<&Graph> = graphs.iter().collect();
    let gb = GraphBatch::new(&refs)?;
    let mut tape = Tape::new();
    let h_all = model.encoder.forward(&mut tape, &model.store, &gb)?;
    let h_base = tape.gather_rows(h_all, Rc::new((0..b).collect()))?;
    let l_base = model.classifier.cross_entropy(&mut tape, &model.store, h_base, &labels)?;
    let mut total = l_base;
    let mut rec = LossRecord {
        l_base: tape.value(l_base).item()?,
        ..LossRecord::default()
    };

    if use_ret {
        let retrieved = tape.gather_rows(h_all, Rc::new(neighbor_rows))?;
        let w_a = tape.param(&model.store, model.attention);
        if tape.value(w_a).cols() != q {
            return Err(Error::shape("attention", tape.shape(w_a), &[cfg.embed_dim, q]));
        }
        let h_ret = crate::retrieval::fuse_retrieved(&mut tape, h_base, retrieved, w_a)?;
        let l_ret = model.classifier.cross_entropy(&mut tape, &model.store, h_ret, &labels)?;
        rec.l_ret = tape.value(l_ret).item()?;
        let weighted = tape.scale(l_ret, cfg.eta_ret);
        total = tape.add(total, weighted)?;
    }
    if use_con {
        let h_v2 = tape.gather_rows(h_all, Rc::new((v2_start..v2_start + b).collect()))?;
        let z1 = model.projection.apply(&mut tape, &model.store, h_base)?;
        let z2 = model.projection.apply(&mut tape, &model.store, h_v2)?;
        let o = tape.param(&model.store, model.centers.id);
        let l_con = bscl_loss_vars(&mut tape, z1, z2, h_base, o, &labels, &cfg.contrast())?;
        rec.l_con = tape.value(l_con).item()?;
        let weighted = tape.scale(l_con, cfg.eta_con);
        total = tape.add(total, weighted)?;
    }
    rec.l_total = tape.value(total).item()?;
    check_finite(&rec, &model.store)?;

    let grads = tape.backward(total)?;
    model.store.zero_grad();
    grads.accumulate_into(&mut model.store);
    opt.step(&mut model.store);
    model.centers.normalize(&mut model.store);
    Ok(rec)
}

/// One stage-2 update: cross-entropy plus weight decay on cached frozen
/// embeddings, a gradient step on the classifier only, then Max-norm.
pub fn stage2_step(
    model: &mut ModelState,
    embeddings: &Tensor,
    labels: &[usize],
    batch: &Batch,
    reg: &RegConfig,
    lr: f64,
) -> Result<LossRecord> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut tape = Tape::new();
    let h = tape.constant(embeddings.select_rows(&batch.graph_indices));
    let y: Vec<usize> = batch.graph_indices.iter().map(|&i| labels[i]).collect();
    let ce = model.classifier.cross_entropy(&mut tape, &model.store, h, &y)?;
    let w = tape.param(&model.store, model.classifier.weight);
    let wd = weight_decay_var(&mut tape, w, reg.lambda)?;
    let total = tape.add(ce, wd)?;
    let rec = LossRecord {
        l_base: tape.value(ce).item()?,
        l_ret: 0.0,
        l_con: 0.0,
        l_total: tape.value(total).item()?,
    };
    check_finite(&rec, &model.store)?;
    let grads = tape.backward(total)?;
    model.store.zero_grad();
    grads.accumulate_into(&mut model.store);
    Sgd::new(vec![model.classifier.weight, model.classifier.bias], lr).step(&mut model.store);
    model.classifier.project(&mut model.store, reg.delta);
    Ok(rec)
}

fn with_position(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFiniteLoss { last_good, .. } => Error::NonFiniteLoss { epoch, step, last_good },
        other => other,
    }
}

fn check_pair(train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    if train.feature_dim() != val.feature_dim() || train.num_classes() != val.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "train ({} features, {} classes) and val ({} features, {} classes) disagree",
            train.feature_dim(),
            train.num_classes(),
            val.feature_dim(),
            val.num_classes()
        )));
    }
    Ok(())
}

fn accuracy_of(pred: &[usize], ds: &Dataset) -> f64 {
    let hits = pred.iter().zip(ds.graphs()).filter(|(p, g)| **p == g.label()).count();
    hits as f64 / ds.len() as f64
}

/// Stage 1: `epochs` epochs with the instance-balanced sampler, keeping the
/// parameters of the best validation epoch (earliest on ties).
pub fn train_stage1(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    retrieval: Option<&RetrievalContext>,
    exec: Exec,
) -> Result<(ModelState, TrainHistory)> {
    cfg.validate()?;
    check_pair(train, val)?;
    if cfg.retrieval_active() {
        let ctx = retrieval.ok_or_else(|| Error::InvalidState("use_retrieval needs a neighbor table".into()))?;
        if ctx.q != cfg.top_q {
            return Err(Error::InvalidArgument(format!(
                "neighbor table has q = {} but config has top_q = {}",
                ctx.q, cfg.top_q
            )));
        }
    }
    let mut model = ModelState::init(train.feature_dim(), train.num_classes(), cfg)?;
    if cfg.retrieval_active() {
        model.retriever_fingerprint = retrieval.map(|c| c.retriever_fingerprint.clone());
    }
    let ids: Vec<ParamId> = model.store.ids().collect();
    let mut adam = Adam::new(&model.store, ids, cfg.lr_stage1);
    let mut sampler = InstanceSampler::new(train)?;
    let mut sample_rng = rng::stream(cfg.seed, Stream::Sampler);
    let mut aug_rng = rng::stream(cfg.seed, Stream::Augment);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches = sampler.epoch(cfg.batch_size, &mut sample_rng)?;
        let mut sum = LossRecord::default();
        for (step, batch) in batches.iter().enumerate() {
            let rec = stage1_step(&mut model, &mut adam, train, batch, retrieval, cfg, &mut aug_rng)
                .map_err(|e| with_position(e, epoch, step))?;
            sum.add(&rec);
        }
        let val_acc = model.accuracy(val, exec)?;
        history.records.push(EpochRecord {
            epoch,
            stage: 1,
            losses: sum.scaled(1.0 / batches.len() as f64),
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(acc, _)| val_acc > *acc) {
            best = Some((val_acc, model.store.clone()));
            history.best_stage1_epoch = epoch;
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok((model, history))
}

/// Stage 2: `finetune_epochs` epochs of classifier re-balancing with the
/// class-balanced sampler on cached embeddings of the frozen encoder.
/// Epoch numbers continue after the last record in `history`; the best
/// validation epoch of this stage is kept.
pub fn finetune_classifier(
    model: &mut ModelState,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    reg: &RegConfig,
    history: &mut TrainHistory,
    exec: Exec,
) -> Result<()> {
    cfg.validate()?;
    reg.validate()?;
    check_pair(train, val)?;
    let snapshot = model.encoder_snapshot();
    let embeddings = model.embed_dataset(train, exec)?;
    let val_h = model.embed_dataset(val, exec)?;
    let labels = train.labels();
    let sampler = ClassSampler::new(train)?;
    let mut ft_rng = rng::stream(cfg.seed, Stream::Finetune);
    let steps = train.len().div_ceil(cfg.batch_size);
    let first = history.records.last().map_or(1, |r| r.epoch + 1);
    let mut best: Option<(f64, Tensor, Tensor)> = None;
    for epoch in first..first + cfg.finetune_epochs {
        let start = Instant::now();
        let mut sum = LossRecord::default();
        for step in 0..steps {
            let batch = sampler.next_batch(cfg.batch_size, &mut ft_rng)?;
            let rec = stage2_step(model, &embeddings, &labels, &batch, reg, cfg.lr_stage2)
                .map_err(|e| with_position(e, epoch, step))?;
            sum.add(&rec);
        }
        let val_acc = accuracy_of(&model.classifier.predict(&model.store, &val_h), val);
        history.records.push(EpochRecord {
            epoch,
            stage: 2,
            losses: sum.scaled(1.0 / steps as f64),
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) {
            best = Some((
                val_acc,
                model.store.value(model.classifier.weight).clone(),
                model.store.value(model.classifier.bias).clone(),
            ));
            history.best_stage2_epoch = Some(epoch);
        }
    }
    if let Some((_, w, b)) = best {
        model.store.set_value(model.classifier.weight, w)?;
        model.store.set_value(model.classifier.bias, b)?;
    }
    model.check_frozen(&snapshot)
}

/// Full pipeline: [`train_stage1`], then [`finetune_classifier`] when
/// `use_weight_reg` is set and `finetune_epochs > 0`.
pub fn fit(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    reg: &RegConfig,
    retrieval: Option<&RetrievalContext>,
    exec: Exec,
) -> Result<(ModelState, TrainHistory)> {
    reg.validate()?;
    let (mut model, mut history) = train_stage1(train, val, cfg, retrieval, exec)?;
    if cfg.use_weight_reg && cfg.finetune_epochs > 0 {
        finetune_classifier(&mut model, train, val, cfg, reg, &mut history, exec)?;
    }
    Ok((model, history))
}

/// Plain cross-entropy training: [`fit`] with every branch disabled.
pub fn train_baseline_ce(train: &Dataset, val: &Dataset, cfg: &TrainConfig, exec: Exec) -> Result<(ModelState, TrainHistory)> {
    fit(train, val, &cfg.baseline(), &RegConfig::default(), None, exec)
}
