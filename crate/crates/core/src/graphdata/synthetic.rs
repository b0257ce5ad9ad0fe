//! Desk-scale synthetic benchmark: every class carries its own motif.
//!
//! A class-`c` graph is a cycle of length `3 + c` joined by one bridge edge
//! to a random connected background graph of 4–8 nodes. Features have
//! `C + 2` dimensions; motif nodes are centered on the class indicator
//! `e_c`, background nodes on zero, and every node gets isotropic Gaussian
//! noise of scale `noise`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Graph};
use crate::error::{Error, Result};

pub const BACKGROUND_NODES: std::ops::RangeInclusive<usize> = 4..=8;

pub fn motif_len(class: usize) -> usize {
    3 + class
}

fn background_edges<R: Rng + ?Sized>(n: usize, offset: usize, rng: &mut R) -> Vec<(usize, usize)> {
    // Random recursive tree plus a few chords.
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (offset + rng.random_range(0..v), offset + v)).collect();
    let extra = n / 3;
    for _ in 0..extra {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        let e = ((offset + u).min(offset + v), (offset + u).max(offset + v));
        if u != v && !edges.contains(&e) {
            edges.push(e);
        }
    }
    edges
}

/// One class-`class` graph.
pub fn synthetic_graph<R: Rng + ?Sized>(class: usize, num_classes: usize, noise: f64, rng: &mut R) -> Graph {
    let k = motif_len(class);
    let bg = rng.random_range(BACKGROUND_NODES);
    let n = k + bg;
    let f = num_classes + 2;
    let mut edges: Vec<(usize, usize)> = (0..k).map(|i| (i.min((i + 1) % k), i.max((i + 1) % k))).collect();
    edges.extend(background_edges(bg, k, rng));
    edges.push((rng.random_range(0..k), k + rng.random_range(0..bg)));
    let mut features = vec![0.0; n * f];
    for v in 0..n {
        if v < k {
            features[v * f + class] = 1.0;
        }
        for d in 0..f {
            let z: f64 = StandardNormal.sample(rng);
            features[v * f + d] += noise * z;
        }
    }
    Graph::new(features, f, edges, class).expect("synthetic graph is valid")
}

/// Balanced dataset of `per_class` graphs for each of `num_classes` classes,
/// listed class by class.
pub fn generate_synthetic(num_classes: usize, per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if num_classes < 2 || per_class < 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes and 1 graph per class, got {num_classes} x {per_class}"
        )));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise must be nonnegative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..num_classes)
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .map(|c| synthetic_graph(c, num_classes, noise, &mut rng))
        .collect();
    Dataset::new(graphs, num_classes)
}
