use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Graph;
use crate::error::{Error, Result};

/// Collection of graphs over a fixed class set `0..num_classes` sharing one
/// feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    graphs: Vec<Graph>,
    num_classes: usize,
    feature_dim: usize,
}

/// Realized long-tail construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongTailProfile {
    pub imbalance_factor: f64,
    pub head_count: usize,
    /// Class ids sorted by realized count, descending.
    pub class_order: Vec<usize>,
    /// Realized count per class, indexed by class id.
    pub counts: Vec<usize>,
}

impl LongTailProfile {
    /// Realized counts in class-order (head first).
    pub fn sorted_counts(&self) -> Vec<usize> {
        self.class_order.iter().map(|&c| self.counts[c]).collect()
    }

    pub fn realized_factor(&self) -> f64 {
        let s = self.sorted_counts();
        s[0] as f64 / *s.last().unwrap() as f64
    }
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    nodes: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    label: usize,
}

/// Target per-class counts `round(head · IF^(−c/(C−1)))`, clamped to ≥ 1.
pub fn longtail_targets(head: usize, imbalance_factor: f64, num_classes: usize) -> Vec<usize> {
    (0..num_classes)
        .map(|c| {
            let exp = if num_classes > 1 {
                -(c as f64) / (num_classes - 1) as f64
            } else {
                0.0
            };
            ((head as f64 * imbalance_factor.powf(exp)).round() as usize).max(1)
        })
        .collect()
}

impl Dataset {
    /// Builds a dataset; `num_classes` must cover every label.
    pub fn new(graphs: Vec<Graph>, num_classes: usize) -> Result<Self> {
        let feature_dim = graphs.first().map_or(0, Graph::feature_dim);
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(Error::InvalidArgument(format!(
                    "graph {i} has feature dim {} but dataset uses {feature_dim}",
                    g.feature_dim()
                )));
            }
            if g.label() >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "graph {i} label {} outside {num_classes} classes",
                    g.label()
                )));
            }
        }
        Ok(Self {
            graphs,
            num_classes,
            feature_dim,
        })
    }

    /// Builds with `num_classes = max label + 1`.
    pub fn from_graphs(graphs: Vec<Graph>) -> Result<Self> {
        let c = graphs.iter().map(|g| g.label() + 1).max().unwrap_or(0);
        Self::new(graphs, c)
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn graph(&self, i: usize) -> &Graph {
        &self.graphs[i]
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for g in &self.graphs {
            counts[g.label()] += 1;
        }
        counts
    }

    /// Graph indices per class, ascending.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_classes];
        for (i, g) in self.graphs.iter().enumerate() {
            m[g.label()].push(i);
        }
        m
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            graphs: idx.iter().map(|&i| self.graphs[i].clone()).collect(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }

    /// Long-tails with the largest feasible head count: the size of the
    /// largest class, truncated so every class can meet its target (with
    /// `IF = 1` this is the smallest class size).
    pub fn make_longtail(&self, imbalance_factor: f64, seed: u64) -> Result<(Dataset, LongTailProfile)> {
        self.check_longtail_args(imbalance_factor)?;
        let order = self.class_order();
        let counts = self.class_counts();
        let fits = |head: usize| {
            longtail_targets(head, imbalance_factor, self.num_classes)
                .iter()
                .zip(&order)
                .all(|(&t, &c)| t <= counts[c])
        };
        let mut head = counts[order[0]];
        while head > 1 && !fits(head) {
            head -= 1;
        }
        self.make_longtail_with_head(imbalance_factor, head, seed)
    }

    /// Long-tails with an explicit head count. Class `c` in count-sorted
    /// order keeps `round(head · IF^(−c/(C−1)))` graphs drawn uniformly
    /// without replacement.
    pub fn make_longtail_with_head(
        &self,
        imbalance_factor: f64,
        head: usize,
        seed: u64,
    ) -> Result<(Dataset, LongTailProfile)> {
        self.check_longtail_args(imbalance_factor)?;
        if head == 0 {
            return Err(Error::InvalidArgument("head count must be positive".into()));
        }
        let order = self.class_order();
        let targets = longtail_targets(head, imbalance_factor, self.num_classes);
        let members = self.class_members();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = Vec::new();
        let mut counts = vec![0; self.num_classes];
        for (rank, &c) in order.iter().enumerate() {
            let need = targets[rank];
            if members[c].len() < need {
                return Err(Error::InsufficientData {
                    class: c,
                    needed: need,
                    available: members[c].len(),
                });
            }
            let mut pool = members[c].clone();
            pool.shuffle(&mut rng);
            let mut chosen = pool[..need].to_vec();
            chosen.sort_unstable();
            counts[c] = need;
            keep.extend(chosen);
        }
        keep.sort_unstable();
        let profile = LongTailProfile {
            imbalance_factor,
            head_count: head,
            class_order: order,
            counts,
        };
        Ok((self.subset(&keep), profile))
    }

    fn check_longtail_args(&self, imbalance_factor: f64) -> Result<()> {
        if !(imbalance_factor >= 1.0) || !imbalance_factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "imbalance factor must be >= 1, got {imbalance_factor}"
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("long-tailing needs at least 2 classes".into()));
        }
        Ok(())
    }

    /// Classes by count descending, ties by class id.
    fn class_order(&self) -> Vec<usize> {
        let counts = self.class_counts();
        let mut order: Vec<usize> = (0..self.num_classes).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        order
    }

    /// Stratified 60/20/20 split. Per class, val and test each get
    /// `floor(0.2·n)` graphs and train keeps the remainder.
    pub fn split(&self, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        if self.graphs.is_empty() {
            return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (c, members) in self.class_members().into_iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            if members.len() < 5 {
                return Err(Error::InsufficientData {
                    class: c,
                    needed: 5,
                    available: members.len(),
                });
            }
            let mut pool = members;
            pool.shuffle(&mut rng);
            let n_hold = pool.len() / 5;
            let n_train = pool.len() - 2 * n_hold;
            train.extend_from_slice(&pool[..n_train]);
            val.extend_from_slice(&pool[n_train..n_train + n_hold]);
            test.extend_from_slice(&pool[n_train + n_hold..]);
        }
        for part in [&mut train, &mut val, &mut test] {
            part.sort_unstable();
        }
        Ok((self.subset(&train), self.subset(&val), self.subset(&test)))
    }

    /// JSON-lines text, one graph per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for g in &self.graphs {
            let rec = GraphRecord {
                nodes: (0..g.num_nodes()).map(|v| g.node_features(v).to_vec()).collect(),
                edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
                label: g.label(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("graph record"));
            out.push('\n');
        }
        out
    }

    /// Parses JSON-lines; blank lines are skipped. `source` names the input
    /// in error messages.
    pub fn from_jsonl<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut graphs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message,
            };
            let rec: GraphRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let edges = rec.edges.iter().map(|e| (e[0], e[1])).collect();
            let g = Graph::from_rows(&rec.nodes, edges, rec.label).map_err(|e| parse_err(e.to_string()))?;
            if let Some(first) = graphs.first() {
                let first: &Graph = first;
                if first.feature_dim() != g.feature_dim() {
                    return Err(parse_err(format!(
                        "feature dim {} differs from {}",
                        g.feature_dim(),
                        first.feature_dim()
                    )));
                }
            }
            graphs.push(g);
        }
        Self::from_graphs(graphs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(std::io::BufReader::new(f), &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the JSON-lines form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_jsonl().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
