use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EdgeEmbeddings, Retriever, RetrieverConfig};
use crate::diffcore::{checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graphdata::{Dataset, Graph};

/// Top-q neighbors of one query, ascending by distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub neighbor_indices: Vec<usize>,
    pub distances: Vec<f64>,
    /// Set when fewer than `q` candidates existed.
    pub truncated: bool,
}

#[derive(Serialize, Deserialize)]
struct Fingerprints {
    dataset: String,
    params: String,
}

#[derive(Serialize, Deserialize)]
struct StoredEmbedding {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// Fingerprint of a retriever's configuration and parameter values.
pub fn params_fingerprint(retriever: &Retriever) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(&retriever.config).expect("config serializes"));
    h.update(checkpoint::to_json(&retriever.store));
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Searchable corpus: graphs with edge embeddings precomputed by a fixed
/// retriever.
#[derive(Clone, Debug)]
pub struct CorpusIndex {
    graphs: Vec<Graph>,
    embeddings: Vec<EdgeEmbeddings>,
    dataset_fingerprint: String,
    params_fingerprint: String,
}

/// Sorts candidates by distance, then index, and keeps the first `q`.
fn top_q(mut scored: Vec<(usize, f64)>, q: usize) -> RetrievalResult {
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let truncated = scored.len() < q;
    scored.truncate(q);
    RetrievalResult {
        neighbor_indices: scored.iter().map(|s| s.0).collect(),
        distances: scored.iter().map(|s| s.1).collect(),
        truncated,
    }
}

impl CorpusIndex {
    pub fn build(retriever: &Retriever, corpus: &Dataset, exec: Exec) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("cannot index an empty corpus".into()));
        }
        let graphs = corpus.graphs().to_vec();
        let embeddings = exec.try_map_range(graphs.len(), |i| retriever.embed_edges(&graphs[i]))?;
        Ok(Self {
            graphs,
            embeddings,
            dataset_fingerprint: corpus.fingerprint(),
            params_fingerprint: params_fingerprint(retriever),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }

    pub fn embeddings(&self) -> &[EdgeEmbeddings] {
        &self.embeddings
    }

    pub fn dataset_fingerprint(&self) -> &str {
        &self.dataset_fingerprint
    }

    /// Fails unless the index was built with exactly these parameters.
    pub fn check(&self, retriever: &Retriever) -> Result<()> {
        if params_fingerprint(retriever) != self.params_fingerprint {
            return Err(Error::InvalidState(
                "corpus index embeddings are stale for these retriever parameters; rebuild the index".into(),
            ));
        }
        Ok(())
    }

    /// Fails unless the index was built over `dataset`.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.fingerprint() != self.dataset_fingerprint {
            return Err(Error::InvalidState("corpus index was built over a different dataset".into()));
        }
        Ok(())
    }

    /// Top-q corpus graphs for the corpus member `query`, excluding itself.
    pub fn retrieve_topq(&self, retriever: &Retriever, query: usize, q: usize) -> Result<RetrievalResult> {
        self.check(retriever)?;
        if q == 0 {
            return Err(Error::InvalidArgument("q must be at least 1".into()));
        }
        if query >= self.len() {
            return Err(Error::InvalidArgument(format!("query {query} outside a corpus of {}", self.len())));
        }
        let rq = &self.embeddings[query];
        let scored = (0..self.len())
            .filter(|&j| j != query)
            .map(|j| Ok((j, retriever.distance_embedded(rq, &self.embeddings[j])?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(top_q(scored, q))
    }

    /// Top-q corpus graphs for an outside query graph.
    pub fn retrieve_graph(&self, retriever: &Retriever, query: &Graph, q: usize) -> Result<RetrievalResult> {
        self.check(retriever)?;
        if q == 0 {
            return Err(Error::InvalidArgument("q must be at least 1".into()));
        }
        let rq = retriever.embed_edges(query)?;
        let scored = (0..self.len())
            .map(|j| Ok((j, retriever.distance_embedded(&rq, &self.embeddings[j])?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(top_q(scored, q))
    }

    /// [`CorpusIndex::retrieve_topq`] for every corpus member; queries fan
    /// out across workers.
    pub fn neighbor_table(&self, retriever: &Retriever, q: usize, exec: Exec) -> Result<Vec<RetrievalResult>> {
        self.check(retriever)?;
        exec.try_map_range(self.len(), |i| self.retrieve_topq(retriever, i, q))
    }

    /// Writes the retriever config, parameters, fingerprints, edge
    /// embeddings and corpus graphs into `dir`.
    pub fn save(&self, retriever: &Retriever, dir: &Path) -> Result<()> {
        self.check(retriever)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("retriever.json", serde_json::to_string_pretty(&retriever.config)? + "\n")?;
        write("params.json", checkpoint::to_json(&retriever.store))?;
        let fp = Fingerprints {
            dataset: self.dataset_fingerprint.clone(),
            params: self.params_fingerprint.clone(),
        };
        write("fingerprint.json", serde_json::to_string_pretty(&fp)? + "\n")?;
        let path = dir.join("embeddings.jsonl");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for e in &self.embeddings {
            let rec = StoredEmbedding {
                rows: e.matrix.rows(),
                cols: e.matrix.cols(),
                values: e.matrix.values().to_vec(),
            };
            writeln!(f, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&path, e))?;
        }
        let corpus = Dataset::from_graphs(self.graphs.clone())?;
        corpus.save(&dir.join("corpus.jsonl"))
    }

    /// Reads a directory written by [`CorpusIndex::save`] and verifies that
    /// the stored embeddings belong to the stored parameters.
    pub fn load(dir: &Path) -> Result<(Retriever, CorpusIndex)> {
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let config: RetrieverConfig = serde_json::from_str(&read("retriever.json")?)?;
        let retriever = Retriever::from_checkpoint(config, &read("params.json")?)?;
        let fp: Fingerprints = serde_json::from_str(&read("fingerprint.json")?)?;
        if fp.params != params_fingerprint(&retriever) {
            return Err(Error::InvalidState(format!(
                "index at {} was built with different retriever parameters",
                dir.display()
            )));
        }
        let path = dir.join("embeddings.jsonl");
        let mut embeddings = Vec::new();
        for (k, line) in read("embeddings.jsonl")?.lines().enumerate() {
            let rec: StoredEmbedding = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: k + 1,
                message: e.to_string(),
            })?;
            let matrix = Tensor::new(vec![rec.rows, rec.cols], rec.values)?;
            embeddings.push(EdgeEmbeddings {
                edgeless: rec.rows == 0,
                matrix,
            });
        }
        let corpus = Dataset::load(&dir.join("corpus.jsonl"))?;
        if corpus.len() != embeddings.len() {
            return Err(Error::InvalidState(format!(
                "index holds {} graphs but {} embeddings",
                corpus.len(),
                embeddings.len()
            )));
        }
        let index = CorpusIndex {
            graphs: corpus.graphs().to_vec(),
            embeddings,
            dataset_fingerprint: fp.dataset,
            params_fingerprint: fp.params,
        };
        Ok((retriever, index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::generate_synthetic;
    use crate::rng;

    fn setup() -> (Retriever, Dataset) {
        let ds = generate_synthetic(3, 4, 0.1, 5).unwrap();
        let r = Retriever::new(RetrieverConfig::new(ds.feature_dim()), &mut rng::stream(2, rng::Stream::Init)).unwrap();
        (r, ds)
    }

    #[test]
    fn exact_copy_ranks_first() {
        let (r, ds) = setup();
        let mut graphs = ds.graphs().to_vec();
        graphs.push(graphs[3].clone());
        let ds = Dataset::new(graphs, 3).unwrap();
        let idx = CorpusIndex::build(&r, &ds, Exec::Sequential).unwrap();
        let res = idx.retrieve_topq(&r, 3, 3).unwrap();
        assert_eq!(res.neighbor_indices[0], ds.len() - 1);
        assert!(res.distances.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn exhaustive_and_truncated_queries() {
        let (r, ds) = setup();
        let idx = CorpusIndex::build(&r, &ds, Exec::Sequential).unwrap();
        let all = idx.retrieve_topq(&r, 0, ds.len() - 1).unwrap();
        assert!(!all.truncated);
        assert_eq!(all.neighbor_indices.len(), ds.len() - 1);
        assert!(!all.neighbor_indices.contains(&0));
        let over = idx.retrieve_topq(&r, 0, ds.len()).unwrap();
        assert!(over.truncated);
    }

    #[test]
    fn ties_break_by_index() {
        let res = top_q(vec![(4, 1.0), (2, 1.0), (7, 0.5)], 3);
        assert_eq!(res.neighbor_indices, vec![7, 2, 4]);
    }

    #[test]
    fn stale_parameters_are_detected() {
        let (mut r, ds) = setup();
        let idx = CorpusIndex::build(&r, &ds, Exec::Sequential).unwrap();
        let id = r.param_ids()[0];
        r.store.value_mut(id).values_mut()[0] += 1.0;
        assert!(matches!(idx.retrieve_topq(&r, 0, 1), Err(Error::InvalidState(_))));
    }

    #[test]
    fn saved_index_round_trips() {
        let (r, ds) = setup();
        let idx = CorpusIndex::build(&r, &ds, Exec::Sequential).unwrap();
        let dir = tempfile::tempdir().unwrap();
        idx.save(&r, dir.path()).unwrap();
        let (r2, idx2) = CorpusIndex::load(dir.path()).unwrap();
        assert_eq!(r2.store, r.store);
        assert_eq!(idx2.embeddings(), idx.embeddings());
        assert_eq!(
            idx2.neighbor_table(&r2, 2, Exec::Sequential).unwrap(),
            idx.neighbor_table(&r, 2, Exec::Sequential).unwrap()
        );
    }
}
