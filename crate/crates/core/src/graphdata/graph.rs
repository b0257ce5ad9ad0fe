use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Attributed undirected graph with a class label.
///
/// Node features are stored row-major (`num_nodes × feature_dim`). Edges are
/// kept as `(min, max)` pairs in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    features: Vec<f64>,
    feature_dim: usize,
    edges: Vec<(usize, usize)>,
    label: usize,
}

impl Graph {
    /// Validates and builds a graph: at least one node, endpoints in range,
    /// no self-loops, no duplicate edges.
    pub fn new(
        features: Vec<f64>,
        feature_dim: usize,
        edges: Vec<(usize, usize)>,
        label: usize,
    ) -> Result<Self> {
        if feature_dim == 0 || features.is_empty() || !features.len().is_multiple_of(feature_dim) {
            return Err(Error::InvalidArgument(format!(
                "{} feature values do not form rows of width {feature_dim}",
                features.len()
            )));
        }
        let n = features.len() / feature_dim;
        let mut seen = std::collections::BTreeSet::new();
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!("edge ({u},{v}) out of range for {n} nodes")));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop on node {u}")));
            }
            let e = (u.min(v), u.max(v));
            if !seen.insert(e) {
                return Err(Error::InvalidArgument(format!("duplicate edge ({u},{v})")));
            }
            canon.push(e);
        }
        Ok(Self {
            features,
            feature_dim,
            edges: canon,
            label,
        })
    }

    /// Builds from per-node feature rows.
    pub fn from_rows(nodes: &[Vec<f64>], edges: Vec<(usize, usize)>, label: usize) -> Result<Self> {
        let dim = nodes.first().map_or(0, Vec::len);
        if nodes.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("ragged node feature rows".into()));
        }
        Self::new(nodes.concat(), dim, edges, label)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.len() / self.feature_dim
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn node_features(&self, v: usize) -> &[f64] {
        &self.features[v * self.feature_dim..(v + 1) * self.feature_dim]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = label;
        self
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// Subgraph induced by `keep` (kept in the given order, reindexed
    /// `0..keep.len()`).
    pub fn induced(&self, keep: &[usize]) -> Graph {
        let mut map = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut features = Vec::with_capacity(keep.len() * self.feature_dim);
        for &old in keep {
            features.extend_from_slice(self.node_features(old));
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v)| map[u] != usize::MAX && map[v] != usize::MAX)
            .map(|&(u, v)| (map[u].min(map[v]), map[u].max(map[v])))
            .collect();
        Graph {
            features,
            feature_dim: self.feature_dim,
            edges,
            label: self.label,
        }
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        q.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Nodes whose removal increases the number of connected components.
    pub fn articulation_points(&self) -> Vec<bool> {
        let adj = self.adjacency();
        let n = self.num_nodes();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0; n];
        let mut art = vec![false; n];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // Iterative DFS: (node, parent, next neighbor position).
            let mut stack = vec![(root, usize::MAX, 0usize)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            let mut root_children = 0;
            while let Some(top) = stack.len().checked_sub(1) {
                let (u, parent, pos) = stack[top];
                if pos < adj[u].len() {
                    let w = adj[u][pos];
                    stack[top].2 += 1;
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        if u == root {
                            root_children += 1;
                        }
                        stack.push((w, u, 0));
                    } else if w != parent {
                        low[u] = low[u].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[u]);
                        if p != root && low[u] >= disc[p] {
                            art[p] = true;
                        }
                    }
                }
            }
            if root_children > 1 {
                art[root] = true;
            }
        }
        art
    }

    /// Mean of node feature rows.
    pub fn mean_features(&self) -> Vec<f64> {
        let n = self.num_nodes() as f64;
        let mut m = vec![0.0; self.feature_dim];
        for v in 0..self.num_nodes() {
            for (a, b) in m.iter_mut().zip(self.node_features(v)) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|x| *x /= n);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::new(vec![0.0; n], 1, edges, 0).unwrap()
    }

    #[test]
    fn rejects_invalid_structure() {
        assert!(Graph::new(vec![0.0; 2], 1, vec![(0, 0)], 0).is_err());
        assert!(Graph::new(vec![0.0; 2], 1, vec![(0, 1), (1, 0)], 0).is_err());
        assert!(Graph::new(vec![0.0; 2], 1, vec![(0, 2)], 0).is_err());
        assert!(Graph::new(vec![], 1, vec![], 0).is_err());
    }

    #[test]
    fn articulation_points_of_a_path() {
        let art = path(4).articulation_points();
        assert_eq!(art, vec![false, true, true, false]);
    }

    #[test]
    fn cycle_has_no_articulation_points() {
        let g = Graph::new(vec![0.0; 4], 1, vec![(0, 1), (1, 2), (2, 3), (3, 0)], 0).unwrap();
        assert!(g.articulation_points().iter().all(|a| !a));
    }

    #[test]
    fn induced_subgraph_reindexes() {
        let g = path(5).induced(&[4, 3, 1]);
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.edges(), &[(0, 1)]);
    }
}
