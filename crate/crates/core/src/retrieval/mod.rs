//! Joint context-image embedding and nearest-context retrieval.

mod embedder;
mod index;

pub use embedder::{train_joint_embedding, EmbedTrainConfig, EmbedderConfig, JointEmbedder};
pub use index::{dataset_fingerprint, neighbors, IndexEntry, Neighbor, NeighborIndex, NeighborQuery};
