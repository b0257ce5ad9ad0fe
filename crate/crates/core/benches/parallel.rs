use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tailgraph::graphdata::{generate_synthetic, Graph};
use tailgraph::retrieval::{CorpusIndex, Retriever, RetrieverConfig};
use tailgraph::rng::{self, Stream};
use tailgraph::trainer::{ModelState, TrainConfig};
use tailgraph::Exec;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn neighbor_table(c: &mut Criterion) {
    let ds = generate_synthetic(4, 10, 0.3, 0).unwrap();
    let r = Retriever::new(RetrieverConfig::new(ds.feature_dim()), &mut rng::stream(0, Stream::Retrieval)).unwrap();
    let index = CorpusIndex::build(&r, &ds, Exec::Parallel).unwrap();
    let mut group = c.benchmark_group("neighbor_table");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(index.neighbor_table(&r, 5, exec).unwrap()))
        });
    }
    group.finish();
}

fn embed(c: &mut Criterion) {
    let ds = generate_synthetic(8, 40, 0.3, 0).unwrap();
    let model = ModelState::init(ds.feature_dim(), ds.num_classes(), &TrainConfig::default()).unwrap();
    let graphs: Vec<&Graph> = ds.graphs().iter().collect();
    let mut group = c.benchmark_group("embed");
    for (name, exec) in STRATEGIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(model.embed(&graphs, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, neighbor_table, embed);
criterion_main!(benches);
