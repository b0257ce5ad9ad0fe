//! Neural subgraph-matching retrieval: exact containment oracle, triple
//! mining, the edge-alignment retriever, corpus search, and attention
//! fusion of retrieved embeddings.

mod fusion;
mod index;
mod mining;
mod model;
mod vf2;

pub use fusion::{fuse_one, fuse_retrieved};
pub use index::{params_fingerprint, CorpusIndex, RetrievalResult};
pub use mining::{bfs_nodes, mine_pairs, MinedPairs, Triple, MAX_MUTATIONS};
pub use model::{
    gumbel_sinkhorn, sinkhorn_matrix, EdgeEmbeddings, Retriever, RetrieverConfig, RetrieverTrainConfig,
};
pub use vf2::vf2_subgraph_iso;
