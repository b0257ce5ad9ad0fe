//! Label-preserving graph augmentations for contrastive views.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::Graph;
use crate::error::{Error, Result};

pub const DEFAULT_AUGMENT_RATIO: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    EdgePermutation,
    AttributeMasking,
    NodeDropping,
    Subgraph,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::EdgePermutation,
        Strategy::AttributeMasking,
        Strategy::NodeDropping,
        Strategy::Subgraph,
    ];
}

#[derive(Clone, Debug)]
pub struct Augmented {
    pub graph: Graph,
    /// Strategy actually applied.
    pub strategy: Strategy,
    /// Set when the drawn strategy could not apply and masking ran instead.
    pub fell_back: bool,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("augmentation ratio must be in (0,1), got {ratio}")));
    }
    Ok(())
}

/// Applies one of the four strategies, chosen uniformly.
pub fn augment<R: Rng + ?Sized>(graph: &Graph, ratio: f64, rng: &mut R) -> Result<Augmented> {
    check_ratio(ratio)?;
    let strategy = *Strategy::ALL.choose(rng).expect("nonempty");
    augment_with(graph, strategy, ratio, rng)
}

/// Applies a specific strategy, falling back to attribute masking when the
/// graph is too small for it.
pub fn augment_with<R: Rng + ?Sized>(
    graph: &Graph,
    strategy: Strategy,
    ratio: f64,
    rng: &mut R,
) -> Result<Augmented> {
    check_ratio(ratio)?;
    let out = match strategy {
        Strategy::EdgePermutation => permute_edges(graph, ratio, rng),
        Strategy::AttributeMasking => Some(mask_attributes(graph, ratio, rng)),
        Strategy::NodeDropping => drop_nodes(graph, ratio, rng),
        Strategy::Subgraph => random_walk_subgraph(graph, ratio, rng),
    };
    Ok(match out {
        Some(g) => Augmented {
            graph: g,
            strategy,
            fell_back: false,
        },
        None => Augmented {
            graph: mask_attributes(graph, ratio, rng),
            strategy: Strategy::AttributeMasking,
            fell_back: true,
        },
    })
}

/// Rewires `round(ratio·|E|)` edges: removes that many and adds as many new
/// non-edges. `None` if the complement has too few pairs.
fn permute_edges<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Option<Graph> {
    let k = (ratio * g.num_edges() as f64).round() as usize;
    if k == 0 {
        return Some(g.clone());
    }
    let n = g.num_nodes();
    let mut non_edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if !g.has_edge(u, v) {
                non_edges.push((u, v));
            }
        }
    }
    if non_edges.len() < k {
        return None;
    }
    let mut order: Vec<usize> = (0..g.num_edges()).collect();
    order.shuffle(rng);
    let mut removed = vec![false; g.num_edges()];
    order[..k].iter().for_each(|&i| removed[i] = true);
    let mut edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(&e, _)| e)
        .collect();
    non_edges.shuffle(rng);
    edges.extend_from_slice(&non_edges[..k]);
    Graph::new(g.features().to_vec(), g.feature_dim(), edges, g.label()).ok()
}

/// Zeroes `round(ratio·F)` randomly chosen feature dimensions on every node.
fn mask_attributes<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Graph {
    let f = g.feature_dim();
    let k = (ratio * f as f64).round() as usize;
    let mut features = g.features().to_vec();
    if k > 0 {
        let mut dims: Vec<usize> = (0..f).collect();
        for v in 0..g.num_nodes() {
            dims.shuffle(rng);
            for &d in &dims[..k] {
                features[v * f + d] = 0.0;
            }
        }
    }
    Graph::new(features, f, g.edges().to_vec(), g.label()).expect("same structure")
}

fn keep_largest_component(g: Graph) -> Graph {
    let comps = g.components();
    if comps.len() <= 1 {
        return g;
    }
    let best = comps
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.len().cmp(&b.len()).then(j.cmp(i)))
        .map(|(i, _)| i)
        .unwrap();
    g.induced(&comps[best])
}

/// Removes `round(ratio·|V|)` nodes one at a time, preferring nodes that are
/// not articulation points, then keeps the largest connected component.
fn drop_nodes<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Option<Graph> {
    let n = g.num_nodes();
    let k = (ratio * n as f64).round() as usize;
    if k == 0 {
        return Some(g.clone());
    }
    if n < 2 || k >= n {
        return None;
    }
    let mut current = g.clone();
    for _ in 0..k {
        let art = current.articulation_points();
        let safe: Vec<usize> = (0..current.num_nodes()).filter(|&v| !art[v]).collect();
        let victim = match safe.choose(rng) {
            Some(&v) => v,
            None => rng.random_range(0..current.num_nodes()),
        };
        let keep: Vec<usize> = (0..current.num_nodes()).filter(|&v| v != victim).collect();
        current = current.induced(&keep);
    }
    Some(keep_largest_component(current))
}

/// Keeps a connected node set of size `|V| − round(ratio·|V|)` grown by a
/// random walk, as an induced subgraph with the original node order.
fn random_walk_subgraph<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Option<Graph> {
    let n = g.num_nodes();
    let target = n - (ratio * n as f64).round() as usize;
    if target == n {
        return Some(g.clone());
    }
    if n < 2 || target == 0 {
        return None;
    }
    let adj = g.adjacency();
    let comps = g.components();
    let candidates: Vec<usize> = comps.iter().filter(|c| c.len() >= target).flatten().copied().collect();
    let &start = candidates.choose(rng)?;
    let mut visited = vec![false; n];
    visited[start] = true;
    let mut count = 1;
    let mut cur = start;
    let mut steps = 0;
    let limit = 100 * n * n;
    while count < target && steps < limit {
        steps += 1;
        let &next = adj[cur].choose(rng)?;
        if !visited[next] {
            visited[next] = true;
            count += 1;
        }
        cur = next;
    }
    if count < target {
        return None;
    }
    let keep: Vec<usize> = (0..n).filter(|&v| visited[v]).collect();
    Some(g.induced(&keep))
}
