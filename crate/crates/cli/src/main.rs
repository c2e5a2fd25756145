use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use star_memory::harness::{
    bench_latency, export_memory_pca, sweep_ablation, write_sweep_csv, BenchOptions, GridSpec,
    SweepOptions, DEFAULT_GRID,
};
use star_memory::{
    read_stream, AttentionParams, Bank, Engine, FrameFeature, MemoryConfig, MemorySnapshot,
    StreamReader, SynthSpec, SyntheticStream,
};

#[derive(Parser)]
#[command(name = "star", version, about = "Bounded streaming memory for per-frame visual features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest an FVS1 stream and print the final snapshot summary as JSON.
    Ingest {
        /// Stream file, or `-` for stdin.
        stream: PathBuf,
        #[command(flatten)]
        memory: MemoryArgs,
        /// Also print a summary line every N frames.
        #[arg(long)]
        every: Option<u64>,
    },
    /// Read latency against stream length, as CSV.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1000,10000")]
        frames: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        queries: usize,
        #[arg(long, default_value_t = 4)]
        readers: usize,
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the keep-everything baseline.
        #[arg(long)]
        no_keep_all: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Answer timestamped queries while replaying a stream; one JSON line per query.
    Replay {
        /// JSON array of `{"id": ..., "frame_timestamp": ...}`.
        triplets: PathBuf,
        stream: PathBuf,
        #[command(flatten)]
        memory: MemoryArgs,
    },
    /// Budget ablation sweep over synthetic input, as CSV.
    Sweep {
        #[arg(long, default_value = DEFAULT_GRID)]
        grid: String,
        #[arg(long, default_value_t = 500)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        queries: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Project memory and recent raw tokens onto two principal axes, as CSV.
    ExportPca {
        stream: PathBuf,
        /// Stop after this many frames.
        #[arg(long)]
        at_frame: u64,
        /// Number of most recent raw frames to include.
        #[arg(long, default_value_t = 32)]
        raw_frames: usize,
        #[command(flatten)]
        memory: MemoryArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic scene-structured FVS1 stream.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        frames: usize,
        #[arg(long, default_value_t = 3)]
        scenes: usize,
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MemoryArgs {
    /// JSON memory configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// SAP1 attention parameter file; seeded from the config when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl MemoryArgs {
    fn engine(&self, grid: usize, dim: usize) -> Result<Engine> {
        let config = load_config(self.config.as_deref())?.with_dim(dim);
        let params = match &self.params {
            Some(path) => {
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                Some(AttentionParams::read_from(BufReader::new(file))?)
            }
            None => None,
        };
        Ok(Engine::new(config, grid, params)?)
    }
}

fn load_config(path: Option<&Path>) -> Result<MemoryConfig> {
    match path {
        None => Ok(MemoryConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }
}

fn open_input(path: &Path) -> Result<Box<dyn Read>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(BufReader::new(io::stdin().lock())))
    } else {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(Box::new(BufReader::new(file)))
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            Ok(Box::new(BufWriter::new(file)))
        }
    }
}

fn open_stream(path: &Path) -> Result<StreamReader<Box<dyn Read>>> {
    read_stream(open_input(path)?).with_context(|| format!("reading stream header from {}", path.display()))
}

#[derive(Serialize)]
struct Summary {
    version: u64,
    frame: u64,
    tokens: usize,
    spatial: usize,
    temporal: usize,
    #[serde(rename = "abstract")]
    abstract_: usize,
    retrieved: usize,
    checksum: String,
}

impl Summary {
    fn of(snap: &MemorySnapshot) -> Self {
        let tokens = |bank| snap.bank_span(bank).len;
        Self {
            version: snap.version(),
            frame: snap.timestamp_frame(),
            tokens: snap.num_tokens(),
            spatial: tokens(Bank::Spatial),
            temporal: tokens(Bank::Temporal),
            abstract_: tokens(Bank::Abstract),
            retrieved: tokens(Bank::Retrieved),
            checksum: format!("{:016x}", snap.checksum()),
        }
    }
}

#[derive(Deserialize)]
struct Triplet {
    id: serde_json::Value,
    frame_timestamp: u64,
}

#[derive(Serialize)]
struct ReplayLine {
    id: String,
    frame_timestamp: u64,
    version: u64,
    snapshot_frame: u64,
    stale: bool,
    tokens: usize,
    checksum: String,
}

fn ingest(stream: &Path, memory: &MemoryArgs, every: Option<u64>) -> Result<()> {
    let reader = open_stream(stream)?;
    let header = *reader.header();
    let mut engine = memory.engine(header.grid(), header.dim())?;
    let mut out = io::stdout().lock();
    for (i, frame) in reader.enumerate() {
        let frame = frame.with_context(|| format!("frame {i}"))?;
        let version = engine.ingest_frame(&frame).with_context(|| format!("ingesting frame {i}"))?;
        if every.is_some_and(|n| n > 0 && version % n == 0) {
            serde_json::to_writer(&mut out, &Summary::of(&engine.read_snapshot()))?;
            writeln!(out)?;
        }
    }
    serde_json::to_writer_pretty(&mut out, &Summary::of(&engine.read_snapshot()))?;
    writeln!(out)?;
    Ok(())
}

fn replay(triplets: &Path, stream: &Path, memory: &MemoryArgs) -> Result<()> {
    let text = std::fs::read_to_string(triplets).with_context(|| format!("reading {}", triplets.display()))?;
    let mut queries: Vec<Triplet> = serde_json::from_str(&text).context("parsing triplets")?;
    queries.sort_by_key(|q| q.frame_timestamp);

    let reader = open_stream(stream)?;
    let header = *reader.header();
    let mut engine = memory.engine(header.grid(), header.dim())?;
    let handle = engine.reader();
    let mut out = io::stdout().lock();
    let mut pending = queries.into_iter().peekable();
    let answer = |q: Triplet, out: &mut dyn Write| -> Result<()> {
        let id = match q.id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        let result = handle.query_at(id, q.frame_timestamp);
        if result.stale {
            eprintln!(
                "query {}: snapshot for frame {} no longer retained, answered from version {}",
                result.question_id,
                q.frame_timestamp,
                result.snapshot.version()
            );
        }
        serde_json::to_writer(
            &mut *out,
            &ReplayLine {
                id: result.question_id,
                frame_timestamp: result.frame_timestamp,
                version: result.snapshot.version(),
                snapshot_frame: result.snapshot.timestamp_frame(),
                stale: result.stale,
                tokens: result.snapshot.num_tokens(),
                checksum: format!("{:016x}", result.snapshot.checksum()),
            },
        )?;
        writeln!(out)?;
        Ok(())
    };

    // Queries at or before the current frame are answered as soon as it is
    // committed, like a live system would.
    for (i, frame) in reader.enumerate() {
        let frame = frame.with_context(|| format!("frame {i}"))?;
        let version = engine.ingest_frame(&frame)?;
        while let Some(q) = pending.next_if(|q| q.frame_timestamp <= version) {
            answer(q, &mut out)?;
        }
    }
    for q in pending {
        answer(q, &mut out)?;
    }
    Ok(())
}

fn export_pca(stream: &Path, at_frame: u64, raw_frames: usize, memory: &MemoryArgs, out: Option<&Path>) -> Result<()> {
    let reader = open_stream(stream)?;
    let header = *reader.header();
    let mut engine = memory.engine(header.grid(), header.dim())?;
    let mut recent: std::collections::VecDeque<FrameFeature> = std::collections::VecDeque::new();
    for (i, frame) in reader.enumerate() {
        if engine.version() >= at_frame {
            break;
        }
        let frame = frame.with_context(|| format!("frame {i}"))?;
        engine.ingest_frame(&frame)?;
        if raw_frames > 0 {
            if recent.len() == raw_frames {
                recent.pop_front();
            }
            recent.push_back(frame);
        }
    }
    if engine.version() < at_frame {
        bail!("stream ended after {} frames, before frame {at_frame}", engine.version());
    }
    let raw: Vec<FrameFeature> = recent.into_iter().collect();
    let export = export_memory_pca(&engine.read_snapshot(), &raw)?;
    if export.axes.degenerate {
        eprintln!("warning: tokens span fewer than two directions; projection is degenerate");
    }
    export.write_csv(open_output(out)?)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { stream, memory, every } => ingest(&stream, &memory, every),
        Command::Bench {
            frames,
            queries,
            readers,
            grid,
            dim,
            seed,
            no_keep_all,
            config,
            out,
        } => {
            let options = BenchOptions {
                frame_counts: frames,
                queries,
                readers,
                synth: SynthSpec {
                    seed,
                    grid,
                    dim,
                    ..SynthSpec::default()
                },
                keep_all: !no_keep_all,
            };
            let report = bench_latency(&load_config(config.as_deref())?, &options)?;
            report.write_csv(open_output(out.as_deref())?)?;
            eprintln!("flatness {:.3}", report.flatness);
            Ok(())
        }
        Command::Replay { triplets, stream, memory } => replay(&triplets, &stream, &memory),
        Command::Sweep {
            grid,
            frames,
            queries,
            dim,
            config,
            out,
        } => {
            let spec: GridSpec = grid.parse()?;
            let options = SweepOptions {
                frames,
                queries,
                synth: SynthSpec {
                    dim,
                    ..SweepOptions::default().synth
                },
            };
            let rows = sweep_ablation(&load_config(config.as_deref())?, &spec, &options)?;
            for row in rows.iter().filter(|r| r.status == "ok" && !r.invariants_ok) {
                eprintln!("invariant violated: {}", row.reason);
            }
            write_sweep_csv(&rows, open_output(out.as_deref())?)?;
            Ok(())
        }
        Command::ExportPca {
            stream,
            at_frame,
            raw_frames,
            memory,
            out,
        } => export_pca(&stream, at_frame, raw_frames, &memory, out.as_deref()),
        Command::Synth {
            seed,
            frames,
            scenes,
            grid,
            dim,
            noise,
            out,
        } => {
            let synth = SyntheticStream::new(SynthSpec {
                seed,
                n_frames: frames,
                n_scenes: scenes,
                grid,
                dim,
                noise,
            })?;
            synth.write_to(open_output(out.as_deref())?)?.flush()?;
            Ok(())
        }
    }
}
