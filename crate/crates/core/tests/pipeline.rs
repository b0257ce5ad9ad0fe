use std::time::Instant;

use tailgraph::classifier::RegConfig;
use tailgraph::diffcore::{Adam, ParamId, Sgd, Tape};
use tailgraph::eval::{cosine_cluster_scores, evaluate, export_embeddings, shot_split, ShotGroup, ShotThresholds};
use tailgraph::graphdata::{generate_synthetic, ClassSampler, Dataset, InstanceSampler, ViewTag};
use tailgraph::retrieval::{RetrieverConfig, RetrieverTrainConfig};
use tailgraph::rng::{self, Stream};
use tailgraph::trainer::*;
use tailgraph::{Error, Exec};

fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        finetune_epochs: 2,
        batch_size: 8,
        hidden_dim: 12,
        embed_dim: 12,
        layers: 2,
        top_q: 3,
        seed,
        ..TrainConfig::default()
    }
}

fn small_data(seed: u64) -> (Dataset, Dataset, Dataset) {
    generate_synthetic(4, 20, 0.3, seed).unwrap().split(seed).unwrap()
}

fn context(train: &Dataset, q: usize, seed: u64) -> RetrievalContext {
    let opts = RetrieverTrainConfig { epochs: 3, ..RetrieverTrainConfig::default() };
    RetrievalContext::prepare(train, RetrieverConfig::new(train.feature_dim()), opts, 2, q, seed, Exec::Sequential)
        .unwrap()
        .2
}

fn per_class_acc(model: &ModelState, ds: &Dataset) -> Vec<f64> {
    let pred = model.predict(ds, Exec::Sequential).unwrap();
    let mut hit = vec![0.0; ds.num_classes()];
    let mut tot = vec![0.0; ds.num_classes()];
    for (p, g) in pred.iter().zip(ds.graphs()) {
        tot[g.label()] += 1.0;
        if *p == g.label() {
            hit[g.label()] += 1.0;
        }
    }
    hit.iter().zip(&tot).map(|(h, t)| h / t).collect()
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = y.iter().enumerate().map(|(i, v)| (i as f64 - mx) * (v - my)).sum();
    let den: f64 = (0..y.len()).map(|i| (i as f64 - mx).powi(2)).sum();
    num / den
}

// Batches drawn the same way train_stage1 draws them.
fn batches(train: &Dataset, cfg: &TrainConfig, count: usize) -> Vec<tailgraph::graphdata::Batch> {
    let mut sampler = InstanceSampler::new(train).unwrap();
    let mut r = rng::stream(cfg.seed, Stream::Sampler);
    let mut out = Vec::new();
    while out.len() < count {
        out.extend(sampler.epoch(cfg.batch_size, &mut r).unwrap());
    }
    out.truncate(count);
    out
}

#[test]
fn fifty_full_steps_lower_the_total_loss() {
    let (train, _, _) = small_data(3);
    let cfg = small_cfg(3);
    let ctx = context(&train, cfg.top_q, 3);
    let mut model = ModelState::init(train.feature_dim(), train.num_classes(), &cfg).unwrap();
    let ids: Vec<ParamId> = model.store.ids().collect();
    let mut adam = Adam::new(&model.store, ids, cfg.lr_stage1);
    let mut aug = rng::stream(cfg.seed, Stream::Augment);
    let losses: Vec<f64> = batches(&train, &cfg, 50)
        .iter()
        .map(|b| stage1_step(&mut model, &mut adam, &train, b, Some(&ctx), &cfg, &mut aug).unwrap().l_total)
        .collect();
    assert!(slope(&losses) < 0.0, "{losses:?}");
}

#[test]
fn default_weights_combine_the_three_losses() {
    let (train, _, _) = small_data(4);
    let cfg = TrainConfig { eta_ret: 0.1, eta_con: 1.0, ..small_cfg(4) };
    let ctx = context(&train, cfg.top_q, 4);
    let mut model = ModelState::init(train.feature_dim(), train.num_classes(), &cfg).unwrap();
    let ids: Vec<ParamId> = model.store.ids().collect();
    let mut adam = Adam::new(&model.store, ids, cfg.lr_stage1);
    let mut aug = rng::stream(cfg.seed, Stream::Augment);
    let b = &batches(&train, &cfg, 1)[0];
    let r = stage1_step(&mut model, &mut adam, &train, b, Some(&ctx), &cfg, &mut aug).unwrap();
    assert!(r.l_ret > 0.0 && r.l_con > 0.0);
    assert!((r.l_total - (r.l_base + 0.1 * r.l_ret + 1.0 * r.l_con)).abs() < 1e-12);
}

#[test]
fn zero_loss_weights_give_the_plain_ce_step() {
    let (train, _, _) = small_data(5);
    let on = TrainConfig { eta_ret: 0.0, eta_con: 0.0, ..small_cfg(5) };
    let off = on.baseline();
    let ctx = context(&train, on.top_q, 5);
    let b = &batches(&train, &on, 1)[0];
    let run = |cfg: &TrainConfig, ctx: Option<&RetrievalContext>| {
        let mut model = ModelState::init(train.feature_dim(), train.num_classes(), cfg).unwrap();
        let ids: Vec<ParamId> = model.store.ids().collect();
        let mut adam = Adam::new(&model.store, ids, cfg.lr_stage1);
        let mut aug = rng::stream(cfg.seed, Stream::Augment);
        let rec = stage1_step(&mut model, &mut adam, &train, b, ctx, cfg, &mut aug).unwrap();
        (rec, model.store)
    };
    assert_eq!(run(&on, Some(&ctx)), run(&off, None));
}

#[test]
fn flags_off_is_the_baseline() {
    let (train, val, _) = small_data(6);
    let cfg = small_cfg(6);
    let off = TrainConfig { use_retrieval: false, use_bscl: false, use_weight_reg: false, ..cfg.clone() };
    let (ma, ha) = fit(&train, &val, &off, &RegConfig::default(), None, Exec::Sequential).unwrap();
    let (mb, hb) = train_baseline_ce(&train, &val, &cfg, Exec::Sequential).unwrap();
    assert_eq!(ma.store, mb.store);
    assert_eq!(ha.to_csv(false), hb.to_csv(false));
}

#[test]
fn same_seed_same_history() {
    let (train, val, _) = small_data(7);
    let cfg = small_cfg(7);
    let ctx = context(&train, cfg.top_q, 7);
    let a = fit(&train, &val, &cfg, &RegConfig::default(), Some(&ctx), Exec::Parallel).unwrap();
    let b = fit(&train, &val, &cfg, &RegConfig::default(), Some(&ctx), Exec::Sequential).unwrap();
    assert_eq!(a.1.to_csv(false), b.1.to_csv(false));
    assert_eq!(a.1.records.len(), cfg.epochs + cfg.finetune_epochs);
    assert_eq!(a.0.store, b.0.store);
}

#[test]
fn baseline_fits_noise_free_data() {
    let ds = generate_synthetic(4, 10, 0.0, 8).unwrap();
    let cfg = TrainConfig { epochs: 150, batch_size: 8, lr_stage1: 1e-2, seed: 8, ..TrainConfig::default() };
    let (model, _) = train_baseline_ce(&ds, &ds, &cfg, Exec::Parallel).unwrap();
    assert_eq!(model.accuracy(&ds, Exec::Parallel).unwrap(), 1.0);
}

fn longtail(seed: u64) -> (Dataset, Dataset, Dataset) {
    let (train, val, test) = generate_synthetic(8, 100, 0.55, seed).unwrap().split(seed).unwrap();
    let (train, _) = train.make_longtail_with_head(20.0, 60, seed).unwrap();
    (train, val, test)
}

fn group_mean(acc: &[f64], groups: &[ShotGroup], g: ShotGroup) -> f64 {
    let v: Vec<f64> = acc.iter().zip(groups).filter(|(_, &k)| k == g).map(|(a, _)| *a).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn baseline_favours_head_classes() {
    let (train, val, test) = longtail(9);
    let cfg = TrainConfig { seed: 9, ..TrainConfig::default() };
    let (model, _) = train_baseline_ce(&train, &val, &cfg, Exec::Parallel).unwrap();
    let acc = per_class_acc(&model, &test);
    let groups = shot_split(&train.class_counts(), ShotThresholds::default());
    let many = group_mean(&acc, &groups, ShotGroup::Many);
    let few = group_mean(&acc, &groups, ShotGroup::Few);
    assert!(many > few + 0.1, "many {many} few {few} {acc:?}");
}

#[test]
fn classifier_rebalancing_evens_out_classes() {
    let (train, val, test) = longtail(10);
    let cfg = TrainConfig { seed: 10, ..TrainConfig::default() };
    let (mut model, _) = train_baseline_ce(&train, &val, &cfg, Exec::Parallel).unwrap();
    let before = std_dev(&per_class_acc(&model, &test));
    let reg = RegConfig::default();
    let h = model.embed_dataset(&train, Exec::Parallel).unwrap();
    let labels = train.labels();
    let sampler = ClassSampler::new(&train).unwrap();
    let mut r = rng::stream(10, Stream::Finetune);
    for _ in 0..100 {
        let b = sampler.next_batch(cfg.batch_size, &mut r).unwrap();
        stage2_step(&mut model, &h, &labels, &b, &reg, cfg.lr_stage2).unwrap();
    }
    let after = std_dev(&per_class_acc(&model, &test));
    assert!(after < before, "std before {before} after {after}");
}

#[test]
fn stage2_touches_only_the_classifier() {
    let (train, val, _) = small_data(11);
    let cfg = small_cfg(11).baseline();
    let (mut model, mut history) = train_stage1(&train, &val, &cfg, None, Exec::Sequential).unwrap();
    let before = model.encoder_snapshot();
    let reg = RegConfig::default();
    finetune_classifier(&mut model, &train, &val, &cfg, &reg, &mut history, Exec::Sequential).unwrap();
    assert_eq!(model.encoder_snapshot(), before);
    let w = model.classifier.weights(&model.store);
    assert!(w.row_norms().iter().all(|&n| n <= reg.delta + 1e-9));
    assert_eq!(history.records.last().unwrap().epoch, cfg.epochs + cfg.finetune_epochs);
}

#[test]
fn stage2_steps_respect_the_radius_and_cache() {
    let (train, _, _) = small_data(12);
    let cfg = small_cfg(12);
    let mut model = ModelState::init(train.feature_dim(), train.num_classes(), &cfg).unwrap();
    let reg = RegConfig::default();
    let labels = train.labels();
    let sampler = ClassSampler::new(&train).unwrap();
    let mut r = rng::stream(12, Stream::Finetune);
    for _ in 0..5 {
        let b = sampler.next_batch(cfg.batch_size, &mut r).unwrap();
        let cached = model.embed_dataset(&train, Exec::Parallel).unwrap();
        let fresh = model.embed_dataset(&train, Exec::Sequential).unwrap();
        let mut twin = model.clone();
        let a = stage2_step(&mut model, &cached, &labels, &b, &reg, cfg.lr_stage2).unwrap();
        let c = stage2_step(&mut twin, &fresh, &labels, &b, &reg, cfg.lr_stage2).unwrap();
        assert_eq!(a, c);
        let w = model.classifier.weights(&model.store);
        assert!(w.row_norms().iter().all(|&n| n <= reg.delta + 1e-9));
    }
}

#[test]
fn zero_decay_inside_the_ball_is_plain_gradient_descent() {
    let (train, _, _) = small_data(13);
    let cfg = small_cfg(13);
    let model = ModelState::init(train.feature_dim(), train.num_classes(), &cfg).unwrap();
    let reg = RegConfig { delta: 1e6, lambda: 0.0 };
    let h = model.embed_dataset(&train, Exec::Sequential).unwrap();
    let labels = train.labels();
    let sampler = ClassSampler::new(&train).unwrap();
    let mut r = rng::stream(13, Stream::Finetune);
    let mut reg_model = model.clone();
    let mut plain = model;
    let c = plain.classifier;
    let sgd = Sgd::new(vec![c.weight, c.bias], cfg.lr_stage2);
    for _ in 0..10 {
        let b = sampler.next_batch(cfg.batch_size, &mut r).unwrap();
        stage2_step(&mut reg_model, &h, &labels, &b, &reg, cfg.lr_stage2).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(h.select_rows(&b.graph_indices));
        let y: Vec<usize> = b.graph_indices.iter().map(|&i| labels[i]).collect();
        let loss = c.cross_entropy(&mut tape, &plain.store, x, &y).unwrap();
        let grads = tape.backward(loss).unwrap();
        plain.store.zero_grad();
        grads.accumulate_into(&mut plain.store);
        sgd.step(&mut plain.store);
    }
    assert_eq!(reg_model.store, plain.store);
}

#[test]
fn non_finite_loss_reports_the_last_good_parameters() {
    let (train, _, _) = small_data(14);
    let cfg = small_cfg(14).baseline();
    let mut model = ModelState::init(train.feature_dim(), train.num_classes(), &cfg).unwrap();
    let w = model.classifier.weight;
    let mut bad = model.store.value(w).clone();
    bad.values_mut()[0] = f64::NAN;
    model.store.set_value(w, bad).unwrap();
    let ids: Vec<ParamId> = model.store.ids().collect();
    let mut adam = Adam::new(&model.store, ids, cfg.lr_stage1);
    let mut aug = rng::stream(cfg.seed, Stream::Augment);
    let b = &batches(&train, &cfg, 1)[0];
    let snapshot = model.store.clone();
    match stage1_step(&mut model, &mut adam, &train, b, None, &cfg, &mut aug) {
        Err(Error::NonFiniteLoss { last_good, .. }) => {
            assert_eq!(last_good.ids().count(), snapshot.ids().count());
            assert_eq!(last_good.value(w).values()[1], snapshot.value(w).values()[1]);
        }
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn trained_embeddings_cluster_by_label() {
    let (train, val, test) = small_data(15);
    let cfg = TrainConfig { epochs: 40, ..small_cfg(15).baseline() };
    let (model, _) = train_baseline_ce(&train, &val, &cfg, Exec::Parallel).unwrap();
    let h = model.embed_dataset(&test, Exec::Parallel).unwrap();
    let (intra, inter) = cosine_cluster_scores(&h, &test.labels());
    assert!(intra > inter, "intra {intra} inter {inter}");
}

#[test]
fn export_is_line_per_graph_and_repeatable() {
    let (train, _, _) = small_data(16);
    let cfg = small_cfg(16);
    let model = ModelState::init(train.feature_dim(), train.num_classes(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    export_embeddings(&model, &train, &a, Exec::Parallel).unwrap();
    export_embeddings(&model, &train, &b, Exec::Sequential).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), train.len() + 1);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 2 + cfg.embed_dim);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let missing = dir.path().join("no/such/dir/x.csv");
    assert!(matches!(export_embeddings(&model, &train, &missing, Exec::Parallel), Err(Error::Io { .. })));
}

#[test]
fn evaluate_is_pure() {
    let (train, val, test) = small_data(17);
    let cfg = small_cfg(17).baseline();
    let (model, _) = train_baseline_ce(&train, &val, &cfg, Exec::Sequential).unwrap();
    let groups = shot_split(&train.class_counts(), ShotThresholds::default());
    let a = evaluate(&model, &test, &groups, Exec::Parallel).unwrap();
    let b = evaluate(&model, &test, &groups, Exec::Sequential).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.confusion, b.confusion);
    let trace: usize = (0..test.num_classes()).map(|k| a.confusion[k][k]).sum();
    assert!((a.overall_acc - trace as f64 / test.len() as f64).abs() < 1e-15);
}

#[test]
fn stage1_step_time_fits_a_quadratic_in_batch_size() {
    let (train, _, _) = generate_synthetic(4, 40, 0.3, 18).unwrap().split(18).unwrap();
    let base = small_cfg(18);
    let ctx = context(&train, base.top_q, 18);
    let sizes = [8usize, 16, 32, 64];
    let mut times = Vec::new();
    for &bs in &sizes {
        let cfg = TrainConfig { batch_size: bs, ..base.clone() };
        let mut model = ModelState::init(train.feature_dim(), train.num_classes(), &cfg).unwrap();
        let ids: Vec<ParamId> = model.store.ids().collect();
        let mut adam = Adam::new(&model.store, ids, cfg.lr_stage1);
        let mut aug = rng::stream(cfg.seed, Stream::Augment);
        let b = (0..bs).map(|i| i % train.len()).collect();
        let batch = tailgraph::graphdata::Batch { graph_indices: b, view_tag: ViewTag::Original };
        let mut runs: Vec<f64> = (0..7)
            .map(|_| {
                let t = Instant::now();
                stage1_step(&mut model, &mut adam, &train, &batch, Some(&ctx), &cfg, &mut aug).unwrap();
                t.elapsed().as_secs_f64()
            })
            .collect();
        runs.sort_by(f64::total_cmp);
        times.push(runs[3]);
    }
    // Least squares for t = a·B + c·B² without intercept.
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&b, &t) in sizes.iter().zip(&times) {
        let (x1, x2) = (b as f64, (b * b) as f64);
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        s1y += x1 * t;
        s2y += x2 * t;
    }
    let det = s11 * s22 - s12 * s12;
    let a = (s1y * s22 - s2y * s12) / det;
    let c = (s2y * s11 - s1y * s12) / det;
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let ss_res: f64 = sizes.iter().zip(&times).map(|(&b, &t)| (t - a * b as f64 - c * (b * b) as f64).powi(2)).sum();
    let ss_tot: f64 = times.iter().map(|t| (t - mean).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(r2 >= 0.9, "r2 {r2} times {times:?}");
}
