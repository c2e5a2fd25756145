//! Single-writer, multi-reader front end.
//!
//! The writer owns the [`StarMemory`] and, after every frame, publishes an
//! immutable [`MemorySnapshot`] by swapping one pointer. Readers load that
//! pointer without locks, so they always see a complete commit and never
//! hold up the writer.

use std::collections::VecDeque;
use std::sync::Arc;

use arc_swap::ArcSwap;

use crate::attention::AttentionParams;
use crate::error::Result;
use crate::memory::{IngestReport, StarMemory};
use crate::model::{FrameFeature, MemoryConfig, MemorySnapshot};

#[derive(Debug)]
struct History {
    current: Arc<MemorySnapshot>,
    /// Newest last; at most `depth` committed versions.
    retained: VecDeque<Arc<MemorySnapshot>>,
}

#[derive(Debug)]
struct Shared {
    history: ArcSwap<History>,
}

/// Result of a timestamped query.
#[derive(Debug, Clone)]
pub struct QueryResult {
    pub question_id: String,
    pub frame_timestamp: u64,
    pub snapshot: Arc<MemorySnapshot>,
    /// Set when no retained snapshot is old enough; `snapshot` is then the
    /// current one.
    pub stale: bool,
}

/// Cloneable, `Send + Sync` read handle.
#[derive(Debug, Clone)]
pub struct SnapshotReader {
    shared: Arc<Shared>,
}

impl SnapshotReader {
    /// Latest committed snapshot.
    pub fn read_snapshot(&self) -> Arc<MemorySnapshot> {
        self.shared.history.load().current.clone()
    }

    /// Newest retained snapshot committed at or before `frame_timestamp`.
    pub fn query_at(&self, question_id: impl Into<String>, frame_timestamp: u64) -> QueryResult {
        let history = self.shared.history.load();
        let found = history
            .retained
            .iter()
            .rev()
            .find(|s| s.timestamp_frame() <= frame_timestamp);
        let (snapshot, stale) = match found {
            Some(s) => (s.clone(), false),
            None => (history.current.clone(), true),
        };
        QueryResult {
            question_id: question_id.into(),
            frame_timestamp,
            snapshot,
            stale,
        }
    }

    /// Versions currently retained for timestamped queries, oldest first.
    pub fn retained_versions(&self) -> Vec<u64> {
        let history = self.shared.history.load();
        history.retained.iter().map(|s| s.version()).collect()
    }
}

/// The writer. Not `Clone`: exactly one exists per memory.
#[derive(Debug)]
pub struct Engine {
    memory: StarMemory,
    shared: Arc<Shared>,
    version: u64,
    depth: usize,
}

impl Engine {
    pub fn new(
        config: MemoryConfig,
        input_grid: usize,
        params: Option<AttentionParams>,
    ) -> Result<Self> {
        let memory = StarMemory::new(config, input_grid, params)?;
        let depth = memory.config().history_depth;
        let history = History {
            current: Arc::new(MemorySnapshot::empty(memory.config().dim)),
            retained: VecDeque::with_capacity(depth),
        };
        Ok(Self {
            memory,
            shared: Arc::new(Shared {
                history: ArcSwap::from_pointee(history),
            }),
            version: 0,
            depth,
        })
    }

    pub fn reader(&self) -> SnapshotReader {
        SnapshotReader {
            shared: self.shared.clone(),
        }
    }

    /// Applies one frame and publishes the resulting snapshot. Returns the
    /// committed version. On error nothing is published.
    pub fn ingest_frame(&mut self, frame: &FrameFeature) -> Result<u64> {
        self.ingest_frame_report(frame).map(|(v, _)| v)
    }

    pub fn ingest_frame_report(&mut self, frame: &FrameFeature) -> Result<(u64, IngestReport)> {
        let report = self.memory.ingest(frame)?;
        self.version += 1;
        let snapshot = Arc::new(self.memory.snapshot(self.version));

        let previous = self.shared.history.load();
        let mut retained = previous.retained.clone();
        if retained.len() == self.depth {
            retained.pop_front();
        }
        retained.push_back(snapshot.clone());
        self.shared.history.store(Arc::new(History {
            current: snapshot,
            retained,
        }));
        Ok((self.version, report))
    }

    pub fn read_snapshot(&self) -> Arc<MemorySnapshot> {
        self.shared.history.load().current.clone()
    }

    pub fn query_at(&self, question_id: impl Into<String>, frame_timestamp: u64) -> QueryResult {
        self.reader().query_at(question_id, frame_timestamp)
    }

    pub fn memory(&self) -> &StarMemory {
        &self.memory
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Bank tokens, buffer tokens and the tokens pinned by retained
    /// snapshots. Bounded independently of the stream length.
    pub fn resident_tokens(&self) -> usize {
        let retained: usize = self
            .shared
            .history
            .load()
            .retained
            .iter()
            .map(|s| s.num_tokens())
            .sum();
        self.memory.bank_tokens() + self.memory.buffer_tokens() + retained
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine(depth: usize) -> Engine {
        let config = MemoryConfig {
            dim: 2,
            n_buff: 20,
            history_depth: depth,
            ..MemoryConfig::default()
        };
        Engine::new(config, 8, None).unwrap()
    }

    fn frame(v: f64) -> FrameFeature {
        FrameFeature::constant(8, &[v, 1.0]).unwrap()
    }

    #[test]
    fn initial_state_is_version_zero() {
        let engine = engine(8);
        let snap = engine.read_snapshot();
        assert_eq!(snap.version(), 0);
        assert_eq!(snap.num_tokens(), 0);
        let q = engine.query_at("q0", 0);
        assert!(q.stale);
        assert_eq!(q.snapshot.version(), 0);
    }

    #[test]
    fn repeated_reads_are_identical() {
        let mut engine = engine(8);
        engine.ingest_frame(&frame(1.0)).unwrap();
        let a = engine.read_snapshot();
        let b = engine.reader().read_snapshot();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn same_frame_twice_bumps_version_by_two() {
        let mut engine = engine(8);
        for i in 0..30 {
            engine.ingest_frame(&frame(i as f64)).unwrap();
        }
        let v0 = engine.version();
        engine.ingest_frame(&frame(0.5)).unwrap();
        let first = engine.read_snapshot();
        engine.ingest_frame(&frame(0.5)).unwrap();
        let second = engine.read_snapshot();
        assert_eq!(second.version(), v0 + 2);
        assert_eq!(first.bank_spans(), second.bank_spans());
        assert_eq!(second.num_tokens(), 681);
        assert_ne!(first.temporal_weights(), second.temporal_weights());
    }

    #[test]
    fn timestamped_queries_use_ring() {
        let mut engine = engine(3);
        for i in 1..=5 {
            engine.ingest_frame(&frame(i as f64)).unwrap();
        }
        assert_eq!(engine.reader().retained_versions(), vec![3, 4, 5]);
        let now = engine.query_at("now", 5);
        assert!(!now.stale);
        assert!(Arc::ptr_eq(&now.snapshot, &engine.read_snapshot()));
        let past = engine.query_at("past", 4);
        assert_eq!(past.snapshot.version(), 4);
        let future = engine.query_at("future", 99);
        assert_eq!(future.snapshot.version(), 5);
        let evicted = engine.query_at("old", 2);
        assert!(evicted.stale);
        assert_eq!(evicted.snapshot.version(), 5);
    }

    #[test]
    fn failed_frame_publishes_nothing() {
        let mut engine = engine(8);
        engine.ingest_frame(&frame(1.0)).unwrap();
        let before = engine.read_snapshot();
        let bad = FrameFeature::constant(4, &[1.0, 1.0]).unwrap();
        assert!(engine.ingest_frame(&bad).is_err());
        assert!(Arc::ptr_eq(&before, &engine.read_snapshot()));
        assert_eq!(engine.version(), 1);
    }
}
