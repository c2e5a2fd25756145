//! Bounded streaming memory for per-frame visual features.
//!
//! Each incoming `P × P × D` feature map is written into four banks under a
//! fixed token budget:
//!
//! - **spatial**: the newest frames at fine resolution, from a FIFO buffer;
//! - **temporal**: weighted k-means centroids summarising the whole stream;
//! - **abstract**: slots updated by decayed semantic attention;
//! - **retrieved**: buffered frames nearest the heaviest temporal clusters.
//!
//! A single [`Engine`] writes; any number of [`SnapshotReader`]s read
//! immutable [`MemorySnapshot`]s concurrently.

pub mod attention;
pub mod engine;
pub mod error;
pub mod harness;
pub mod memory;
pub mod model;
pub mod pooling;
pub mod retrieval;
pub mod stream;
pub mod temporal;

pub use attention::{
    semantic_attention, semantic_attention_forward, semantic_attention_grad, AbstractBank,
    AttentionGrads, AttentionParams,
};
pub use engine::{Engine, QueryResult, SnapshotReader};
pub use error::{Error, Result};
pub use memory::{IngestReport, StarMemory};
pub use model::{
    max_tokens, validate_config, Bank, BankSpan, FrameFeature, KmeansInit, MemoryConfig,
    MemorySnapshot,
};
pub use pooling::{average_pool, BufferEntry, FeatureBuffer};
pub use retrieval::{retrieve_key_features, top_k_by_weight, KeySelection};
pub use stream::{
    read_stream, synth_stream, write_stream, StreamHeader, StreamReader, StreamWriter, SynthSpec,
    SyntheticStream,
};
pub use temporal::{weighted_kmeans, ClusterState, KmeansOptions, TemporalBank};
