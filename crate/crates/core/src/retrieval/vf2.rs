use crate::graphdata::Graph;

/// Whether `pattern` is subgraph-isomorphic to `target`: some injective node
/// map sends every pattern edge onto a target edge. Attributes are ignored.
pub fn vf2_subgraph_iso(pattern: &Graph, target: &Graph) -> bool {
    let (np, nt) = (pattern.num_nodes(), target.num_nodes());
    if np > nt || pattern.num_edges() > target.num_edges() {
        return false;
    }
    let padj = pattern.adjacency();
    let tadj = target.adjacency();
    let mut tmat = vec![false; nt * nt];
    for &(u, v) in target.edges() {
        tmat[u * nt + v] = true;
        tmat[v * nt + u] = true;
    }
    let order = match_order(&padj);
    let mut state = State {
        padj: &padj,
        tadj: &tadj,
        tmat: &tmat,
        nt,
        order: &order,
        core_p: vec![usize::MAX; np],
        used_t: vec![false; nt],
    };
    state.extend(0)
}

/// Pattern nodes ordered so each one (after the first of its component)
/// has an already-placed neighbor, highest degree first.
fn match_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !placed[v])
            .max_by_key(|&v| (adj[v].len(), std::cmp::Reverse(v)))
            .unwrap();
        placed[seed] = true;
        order.push(seed);
        loop {
            // Next: unplaced node with most placed neighbors, then degree.
            let next = (0..n)
                .filter(|&v| !placed[v])
                .map(|v| (adj[v].iter().filter(|&&w| placed[w]).count(), adj[v].len(), v))
                .filter(|&(k, _, _)| k > 0)
                .max_by_key(|&(k, d, v)| (k, d, std::cmp::Reverse(v)));
            match next {
                Some((_, _, v)) => {
                    placed[v] = true;
                    order.push(v);
                }
                None => break,
            }
        }
    }
    order
}

struct State<'a> {
    padj: &'a [Vec<usize>],
    tadj: &'a [Vec<usize>],
    tmat: &'a [bool],
    nt: usize,
    order: &'a [usize],
    core_p: Vec<usize>,
    used_t: Vec<bool>,
}

impl State<'_> {
    fn feasible(&self, p: usize, t: usize) -> bool {
        if self.used_t[t] || self.tadj[t].len() < self.padj[p].len() {
            return false;
        }
        let mut unmapped_p = 0;
        for &q in &self.padj[p] {
            let m = self.core_p[q];
            if m == usize::MAX {
                unmapped_p += 1;
            } else if !self.tmat[t * self.nt + m] {
                return false;
            }
        }
        // Look-ahead: the unmapped pattern neighbors need distinct free
        // target neighbors.
        let free_t = self.tadj[t].iter().filter(|&&u| !self.used_t[u]).count();
        unmapped_p <= free_t
    }

    fn extend(&mut self, depth: usize) -> bool {
        if depth == self.order.len() {
            return true;
        }
        let p = self.order[depth];
        // Candidates: neighbors of the image of a mapped pattern neighbor,
        // or every target node when `p` starts a new component.
        let anchor = self.padj[p].iter().map(|&q| self.core_p[q]).find(|&m| m != usize::MAX);
        let candidates: Vec<usize> = match anchor {
            Some(m) => self.tadj[m].clone(),
            None => (0..self.nt).collect(),
        };
        for t in candidates {
            if self.feasible(p, t) {
                self.core_p[p] = t;
                self.used_t[t] = true;
                if self.extend(depth + 1) {
                    return true;
                }
                self.core_p[p] = usize::MAX;
                self.used_t[t] = false;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn structure(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(vec![0.0; n], 1, edges.to_vec(), 0).unwrap()
    }

    fn complete(n: usize) -> Graph {
        let mut e = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                e.push((u, v));
            }
        }
        structure(n, &e)
    }

    #[test]
    fn triangle_embeds_in_k4() {
        assert!(vf2_subgraph_iso(&complete(3), &complete(4)));
    }

    #[test]
    fn triangle_does_not_embed_in_a_tree() {
        let tree = structure(6, &[(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)]);
        assert!(!vf2_subgraph_iso(&complete(3), &tree));
    }

    #[test]
    fn matching_is_not_induced() {
        let path = structure(3, &[(0, 1), (1, 2)]);
        assert!(vf2_subgraph_iso(&path, &complete(3)));
    }

    #[test]
    fn disconnected_pattern() {
        let two_edges = structure(4, &[(0, 1), (2, 3)]);
        let star = structure(4, &[(0, 1), (0, 2), (0, 3)]);
        let path = structure(4, &[(0, 1), (1, 2), (2, 3)]);
        assert!(!vf2_subgraph_iso(&two_edges, &star));
        assert!(vf2_subgraph_iso(&two_edges, &path));
    }

    #[test]
    fn larger_pattern_is_rejected_fast() {
        assert!(!vf2_subgraph_iso(&complete(4), &complete(3)));
    }
}
