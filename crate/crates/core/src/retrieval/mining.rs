use std::collections::VecDeque;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::vf2_subgraph_iso;
use crate::error::{Error, Result};
use crate::graphdata::{Dataset, Graph};

/// Rewiring attempts allowed before a negative is given up.
pub const MAX_MUTATIONS: usize = 50;

/// A query with a corpus graph that contains it and one that does not.
#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub query: Graph,
    pub positive: Graph,
    pub negative: Graph,
    /// Corpus graph the query was grown from.
    pub source: usize,
}

#[derive(Clone, Debug, Default)]
pub struct MinedPairs {
    pub triples: Vec<Triple>,
    /// Draws abandoned because rewiring never broke containment.
    pub skipped: usize,
}

/// Connected node set of `size` nodes grown breadth-first from `start`,
/// visiting neighbors in random order.
pub fn bfs_nodes<R: Rng + ?Sized>(adj: &[Vec<usize>], start: usize, size: usize, rng: &mut R) -> Vec<usize> {
    let mut seen = vec![false; adj.len()];
    let mut out = vec![start];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let mut nbrs = adj[u].clone();
        nbrs.shuffle(rng);
        for w in nbrs {
            if out.len() == size {
                return out;
            }
            if !seen[w] {
                seen[w] = true;
                out.push(w);
                queue.push_back(w);
            }
        }
    }
    out
}

/// Removes one edge inside `region` and adds one absent edge anywhere, so
/// the edge count is unchanged.
fn rewire_once<R: Rng + ?Sized>(g: &Graph, region: &[bool], rng: &mut R) -> Option<Graph> {
    let inside: Vec<usize> = (0..g.num_edges())
        .filter(|&i| {
            let (u, v) = g.edges()[i];
            region[u] && region[v]
        })
        .collect();
    let &drop = inside.choose(rng)?;
    let n = g.num_nodes();
    let removed = g.edges()[drop];
    let mut absent = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if (u, v) != removed && !g.has_edge(u, v) {
                absent.push((u, v));
            }
        }
    }
    let &add = absent.choose(rng)?;
    let mut edges: Vec<(usize, usize)> = g.edges().to_vec();
    edges[drop] = add;
    Graph::new(g.features().to_vec(), g.feature_dim(), edges, g.label()).ok()
}

/// Mines up to `per_query` triples per corpus graph. The query is a
/// BFS-grown induced subgraph of the corpus graph (the positive); the
/// negative is the corpus graph with edges inside the BFS region rewired,
/// one at a time, until the query no longer embeds. Every triple is
/// certified with [`vf2_subgraph_iso`].
pub fn mine_pairs<R: Rng + ?Sized>(corpus: &Dataset, per_query: usize, rng: &mut R) -> Result<MinedPairs> {
    if let Some(i) = corpus.graphs().iter().position(|g| g.num_nodes() < 3) {
        return Err(Error::InvalidArgument(format!("corpus graph {i} has fewer than 3 nodes")));
    }
    let mut out = MinedPairs::default();
    for (source, g) in corpus.graphs().iter().enumerate() {
        let adj = g.adjacency();
        let n = g.num_nodes();
        for _ in 0..per_query {
            let min_size = ((0.4 * n as f64).ceil() as usize).clamp(3, n);
            let max_size = ((0.7 * n as f64).ceil() as usize).clamp(min_size, n);
            let size = rng.random_range(min_size..=max_size);
            let start = rng.random_range(0..n);
            let nodes = bfs_nodes(&adj, start, size, rng);
            let query = g.induced(&nodes);
            if query.num_edges() == 0 || !vf2_subgraph_iso(&query, g) {
                out.skipped += 1;
                continue;
            }
            let mut region = vec![false; n];
            nodes.iter().for_each(|&v| region[v] = true);
            let mut current = g.clone();
            let mut negative = None;
            for _ in 0..MAX_MUTATIONS {
                match rewire_once(&current, &region, rng) {
                    Some(next) => current = next,
                    None => break,
                }
                if !vf2_subgraph_iso(&query, &current) {
                    negative = Some(current.clone());
                    break;
                }
            }
            match negative {
                Some(negative) => out.triples.push(Triple {
                    query,
                    positive: g.clone(),
                    negative,
                    source,
                }),
                None => out.skipped += 1,
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::generate_synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triples_are_certified_and_deterministic() {
        let ds = generate_synthetic(4, 5, 0.1, 3).unwrap();
        let mine = || mine_pairs(&ds, 2, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let a = mine();
        assert!(a.triples.len() + a.skipped == 40);
        for t in &a.triples {
            assert!(vf2_subgraph_iso(&t.query, &t.positive));
            assert!(!vf2_subgraph_iso(&t.query, &t.negative));
            assert_eq!(t.negative.num_edges(), t.positive.num_edges());
        }
        assert_eq!(a.triples, mine().triples);
    }

    #[test]
    fn bfs_nodes_are_connected() {
        let g = Graph::new(vec![0.0; 6], 1, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nodes = bfs_nodes(&g.adjacency(), 2, 4, &mut rng);
        assert_eq!(nodes.len(), 4);
        assert!(g.induced(&nodes).is_connected());
    }

    #[test]
    fn tiny_graphs_are_rejected() {
        let g = Graph::new(vec![0.0; 2], 1, vec![(0, 1)], 0).unwrap();
        let ds = Dataset::new(vec![g], 1).unwrap();
        assert!(mine_pairs(&ds, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
