//! Read latency and footprint as a function of stream length.
//!
//! For each checkpoint the writer ingests up to that frame count, then a
//! pool of reader threads times `queries` snapshot reads. A read loads the
//! latest snapshot and verifies its checksum, which touches every token the
//! way a downstream consumer would.

use std::io::Write;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Instant;

use arc_swap::ArcSwap;
use serde::Serialize;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::harness::{percentile, resident_bytes};
use crate::model::{FrameFeature, MemoryConfig};
use crate::pooling::average_pool;
use crate::stream::{SynthSpec, SyntheticStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    /// The bounded four-bank memory.
    Star,
    /// Baseline that keeps every pooled frame and never compresses.
    KeepAll,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Checkpoints, ascending.
    pub frame_counts: Vec<usize>,
    pub queries: usize,
    pub readers: usize,
    /// Shape, seed and scene structure of the input stream. `n_frames` is
    /// overridden by the largest checkpoint.
    pub synth: SynthSpec,
    pub keep_all: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            frame_counts: vec![1000, 10000],
            queries: 32,
            readers: 4,
            synth: SynthSpec::default(),
            keep_all: true,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub mode: BenchMode,
    pub frames: usize,
    pub queries: usize,
    pub median_read_ns: u64,
    pub p95_read_ns: u64,
    pub ingest_fps: f64,
    pub bank_tokens: usize,
    pub buffer_tokens: usize,
    pub resident_tokens: usize,
    /// Informational only.
    pub rss_bytes: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Max over min median read latency across the bounded-memory rows.
    pub flatness: f64,
}

impl BenchReport {
    pub fn rows_for(&self, mode: BenchMode) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Unbounded store of pooled frames, published by pointer swap like the
/// engine so reads are comparable.
#[derive(Debug)]
pub struct KeepAllMemory {
    grid: usize,
    frames: Vec<Arc<[f32]>>,
    published: Arc<ArcSwap<Vec<Arc<[f32]>>>>,
}

impl KeepAllMemory {
    pub fn new(grid: usize) -> Self {
        Self {
            grid,
            frames: Vec::new(),
            published: Arc::new(ArcSwap::from_pointee(Vec::new())),
        }
    }

    pub fn ingest(&mut self, frame: &FrameFeature) -> Result<()> {
        let pooled = average_pool(frame, self.grid)?;
        let values: Vec<f32> = pooled.as_slice().iter().map(|&v| v as f32).collect();
        self.frames.push(Arc::from(values));
        Ok(())
    }

    /// Publishes the current frame list. Called at checkpoints only; the
    /// copy is linear in the number of frames.
    pub fn publish(&self) {
        self.published.store(Arc::new(self.frames.clone()));
    }

    pub fn tokens(&self) -> usize {
        self.frames.len() * self.grid * self.grid
    }

    fn reader(&self) -> Arc<ArcSwap<Vec<Arc<[f32]>>>> {
        self.published.clone()
    }
}

fn keep_all_read(published: &ArcSwap<Vec<Arc<[f32]>>>) -> u64 {
    let frames = published.load_full();
    let mut acc = 0u64;
    for frame in frames.iter() {
        for v in frame.iter() {
            acc = acc.rotate_left(1) ^ u64::from(v.to_bits());
        }
    }
    acc
}

/// Spawns `readers` threads that together perform `queries` timed reads.
fn timed_reads<F>(readers: usize, queries: usize, read: F) -> Vec<u64>
where
    F: Fn() -> bool + Send + Sync + 'static,
{
    let readers = readers.max(1);
    let read = Arc::new(read);
    let barrier = Arc::new(Barrier::new(readers));
    let handles: Vec<_> = (0..readers)
        .map(|r| {
            let read = read.clone();
            let barrier = barrier.clone();
            let share = queries / readers + usize::from(r < queries % readers);
            thread::spawn(move || {
                for _ in 0..2 {
                    assert!(read(), "snapshot failed verification");
                }
                barrier.wait();
                (0..share)
                    .map(|_| {
                        let start = Instant::now();
                        let ok = read();
                        let elapsed = start.elapsed().as_nanos() as u64;
                        assert!(ok, "snapshot failed verification");
                        elapsed
                    })
                    .collect::<Vec<u64>>()
            })
        })
        .collect();
    handles
        .into_iter()
        .flat_map(|h| h.join().expect("reader thread panicked"))
        .collect()
}

pub fn bench_latency(config: &MemoryConfig, options: &BenchOptions) -> Result<BenchReport> {
    let mut counts = options.frame_counts.clone();
    counts.sort_unstable();
    counts.dedup();
    let max_frames = *counts
        .last()
        .ok_or_else(|| Error::shape("no frame counts given"))?;
    let synth = SyntheticStream::new(SynthSpec {
        n_frames: max_frames,
        n_scenes: options.synth.n_scenes.min(max_frames).max(1),
        ..options.synth.clone()
    })?;
    let config = config.clone().with_dim(synth.spec().dim);
    let mut engine = Engine::new(config.clone(), synth.spec().grid, None)?;
    let mut keep_all = options.keep_all.then(|| KeepAllMemory::new(config.p_spa));

    let mut rows = Vec::new();
    let mut ingested = 0;
    for &target in &counts {
        let start = Instant::now();
        let mut keep_all_secs = 0.0;
        for i in ingested..target {
            let frame = synth.frame(i);
            engine.ingest_frame(&frame)?;
            if let Some(k) = keep_all.as_mut() {
                let t = Instant::now();
                k.ingest(&frame)?;
                keep_all_secs += t.elapsed().as_secs_f64();
            }
        }
        let secs = (start.elapsed().as_secs_f64() - keep_all_secs).max(1e-9);
        let new_frames = (target - ingested) as f64;
        ingested = target;

        let reader = engine.reader();
        let mut samples = timed_reads(options.readers, options.queries, move || {
            reader.read_snapshot().verify()
        });
        rows.push(BenchRow {
            mode: BenchMode::Star,
            frames: target,
            queries: samples.len(),
            median_read_ns: percentile(&mut samples, 0.5),
            p95_read_ns: percentile(&mut samples, 0.95),
            ingest_fps: new_frames / secs,
            bank_tokens: engine.memory().bank_tokens(),
            buffer_tokens: engine.memory().buffer_tokens(),
            resident_tokens: engine.resident_tokens(),
            rss_bytes: resident_bytes(),
        });

        if let Some(k) = keep_all.as_ref() {
            k.publish();
            let published = k.reader();
            let mut samples = timed_reads(options.readers, options.queries, move || {
                std::hint::black_box(keep_all_read(&published));
                true
            });
            rows.push(BenchRow {
                mode: BenchMode::KeepAll,
                frames: target,
                queries: samples.len(),
                median_read_ns: percentile(&mut samples, 0.5),
                p95_read_ns: percentile(&mut samples, 0.95),
                ingest_fps: new_frames / keep_all_secs.max(1e-9),
                bank_tokens: k.tokens(),
                buffer_tokens: 0,
                resident_tokens: k.tokens(),
                rss_bytes: resident_bytes(),
            });
        }
    }

    let medians: Vec<u64> = rows
        .iter()
        .filter(|r| r.mode == BenchMode::Star)
        .map(|r| r.median_read_ns.max(1))
        .collect();
    let max = *medians.iter().max().expect("one row per count") as f64;
    let min = *medians.iter().min().expect("one row per count") as f64;
    Ok(BenchReport {
        rows,
        flatness: max / min,
    })
}
