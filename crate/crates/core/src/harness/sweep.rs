//! Budget ablation sweeps.
//!
//! A grid spec is one or more groups joined by `|`. Each group is a
//! cartesian product of `;`-separated axes, and the cells of all groups are
//! concatenated. An axis is `key=v1,v2,...`:
//!
//! - `p=SPA:TEM:ABS,...` sets the three bank grid sides together;
//! - `n=TEM:ABS,...` sets the temporal and abstract capacities together;
//! - `p_spa`, `p_tem`, `p_abs`, `n_buff`, `n_spa`, `n_tem`, `n_abs`,
//!   `n_ret` take single integers.
//!
//! Keys not mentioned keep the base configuration's value.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::harness::percentile;
use crate::model::{Bank, MemoryConfig};
use crate::stream::{SynthSpec, SyntheticStream};

/// Spatial-size and temporal-length ablation rows.
pub const DEFAULT_GRID: &str =
    "p=16:4:1,4:4:1,8:8:1,8:1:1,8:4:4,8:4:1 | n=32:32,16:16,8:8,25:25";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Key {
    P,
    N,
    PSpa,
    PTem,
    PAbs,
    NBuff,
    NSpa,
    NTem,
    NAbs,
    NRet,
}

impl Key {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "p" => Key::P,
            "n" => Key::N,
            "p_spa" => Key::PSpa,
            "p_tem" => Key::PTem,
            "p_abs" => Key::PAbs,
            "n_buff" => Key::NBuff,
            "n_spa" => Key::NSpa,
            "n_tem" => Key::NTem,
            "n_abs" => Key::NAbs,
            "n_ret" => Key::NRet,
            other => return Err(Error::GridSpec(format!("unknown key {other:?}"))),
        })
    }

    fn arity(self) -> usize {
        match self {
            Key::P => 3,
            Key::N => 2,
            _ => 1,
        }
    }

    fn apply(self, config: &mut MemoryConfig, values: &[usize]) {
        match self {
            Key::P => {
                config.p_spa = values[0];
                config.p_tem = values[1];
                config.p_abs = values[2];
            }
            Key::N => {
                config.n_tem = values[0];
                config.n_abs = values[1];
            }
            Key::PSpa => config.p_spa = values[0],
            Key::PTem => config.p_tem = values[0],
            Key::PAbs => config.p_abs = values[0],
            Key::NBuff => config.n_buff = values[0],
            Key::NSpa => config.n_spa = values[0],
            Key::NTem => config.n_tem = values[0],
            Key::NAbs => config.n_abs = values[0],
            Key::NRet => config.n_ret = values[0],
        }
    }
}

type Axis = (Key, Vec<Vec<usize>>);

#[derive(Debug, Clone)]
pub struct GridSpec {
    groups: Vec<Vec<Axis>>,
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let mut groups = Vec::new();
        for group in spec.split('|') {
            let mut axes = Vec::new();
            for axis in group.split(';').map(str::trim).filter(|a| !a.is_empty()) {
                let (name, values) = axis
                    .split_once('=')
                    .ok_or_else(|| Error::GridSpec(format!("axis {axis:?} lacks '='")))?;
                let key = Key::parse(name.trim())?;
                let mut tuples = Vec::new();
                for value in values.split(',').map(str::trim) {
                    let tuple = value
                        .split(':')
                        .map(|v| {
                            v.trim().parse::<usize>().map_err(|_| {
                                Error::GridSpec(format!("bad integer {v:?} in {axis:?}"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if tuple.len() != key.arity() {
                        return Err(Error::GridSpec(format!(
                            "{name} takes {} values per entry, got {value:?}",
                            key.arity()
                        )));
                    }
                    tuples.push(tuple);
                }
                axes.push((key, tuples));
            }
            if axes.is_empty() {
                return Err(Error::GridSpec(format!("empty group in {spec:?}")));
            }
            groups.push(axes);
        }
        Ok(Self { groups })
    }
}

impl GridSpec {
    /// Every cell as a full configuration derived from `base`.
    pub fn cells(&self, base: &MemoryConfig) -> Vec<MemoryConfig> {
        let mut out = Vec::new();
        for axes in &self.groups {
            let mut cells = vec![base.clone()];
            for (key, tuples) in axes {
                cells = cells
                    .iter()
                    .flat_map(|cell| {
                        tuples.iter().map(move |t| {
                            let mut c = cell.clone();
                            key.apply(&mut c, t);
                            c
                        })
                    })
                    .collect();
            }
            out.extend(cells);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub frames: usize,
    pub queries: usize,
    pub synth: SynthSpec,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            frames: 500,
            queries: 32,
            synth: SynthSpec {
                grid: 16,
                dim: 32,
                ..SynthSpec::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub p_spa: usize,
    pub p_tem: usize,
    pub p_abs: usize,
    pub n_buff: usize,
    pub n_spa: usize,
    pub n_tem: usize,
    pub n_abs: usize,
    pub n_ret: usize,
    pub budget: usize,
    /// `ok` or `skipped`.
    pub status: &'static str,
    pub reason: String,
    pub observed_tokens: usize,
    pub invariants_ok: bool,
    pub median_read_ns: u64,
    pub p95_read_ns: u64,
    pub ingest_fps: f64,
}

impl SweepRow {
    fn new(config: &MemoryConfig) -> Self {
        Self {
            p_spa: config.p_spa,
            p_tem: config.p_tem,
            p_abs: config.p_abs,
            n_buff: config.n_buff,
            n_spa: config.n_spa,
            n_tem: config.n_tem,
            n_abs: config.n_abs,
            n_ret: config.n_ret,
            budget: config.max_tokens(),
            status: "ok",
            reason: String::new(),
            observed_tokens: 0,
            invariants_ok: false,
            median_read_ns: 0,
            p95_read_ns: 0,
            ingest_fps: 0.0,
        }
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Runs every cell: ingests `frames` synthetic frames while checking the
/// budget, weight-conservation and checksum invariants after each one, then
/// times snapshot reads. Invalid cells are reported as skipped.
pub fn sweep_ablation(
    base: &MemoryConfig,
    grid: &GridSpec,
    options: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    let synth = SyntheticStream::new(SynthSpec {
        n_frames: options.frames,
        ..options.synth.clone()
    })?;
    let mut rows = Vec::new();
    for cell in grid.cells(&base.clone().with_dim(synth.spec().dim)) {
        let mut row = SweepRow::new(&cell);
        if let Err(e) = cell.validate(synth.spec().grid) {
            row.status = "skipped";
            row.reason = e.to_string();
            rows.push(row);
            continue;
        }
        match run_cell(&cell, &synth, options.queries, &mut row) {
            Ok(()) => {}
            Err(e) => {
                row.invariants_ok = false;
                row.reason = e.to_string();
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn run_cell(
    config: &MemoryConfig,
    synth: &SyntheticStream,
    queries: usize,
    row: &mut SweepRow,
) -> Result<()> {
    let mut engine = Engine::new(config.clone(), synth.spec().grid, None)?;
    let budget = config.max_tokens();
    let full_from = config.n_tem.max(config.n_spa) as u64;
    let mut violation: Option<String> = None;
    let start = Instant::now();
    for frame in synth.frames() {
        engine.ingest_frame(&frame)?;
        if violation.is_some() {
            continue;
        }
        let snap = engine.read_snapshot();
        let t = snap.timestamp_frame();
        let weights: f64 = snap.temporal_weights().iter().sum();
        violation = if snap.num_tokens() > budget {
            Some(format!("frame {t}: {} tokens over budget", snap.num_tokens()))
        } else if t >= full_from && snap.num_tokens() != budget {
            Some(format!("frame {t}: {} tokens, budget {budget}", snap.num_tokens()))
        } else if weights != t as f64 {
            Some(format!("frame {t}: temporal weights sum to {weights}"))
        } else if !snap.verify() {
            Some(format!("frame {t}: checksum mismatch"))
        } else if snap.bank_span(Bank::Abstract).len != config.n_abs * config.abstract_slot_tokens() {
            Some(format!("frame {t}: abstract bank resized"))
        } else {
            None
        };
    }
    row.ingest_fps = synth.len() as f64 / start.elapsed().as_secs_f64().max(1e-9);
    row.observed_tokens = engine.read_snapshot().num_tokens();

    let reader = engine.reader();
    let mut samples: Vec<u64> = (0..queries.max(1))
        .map(|_| {
            let t = Instant::now();
            let ok = reader.read_snapshot().verify();
            let ns = t.elapsed().as_nanos() as u64;
            if !ok && violation.is_none() {
                violation = Some("checksum mismatch on read".into());
            }
            ns
        })
        .collect();
    row.median_read_ns = percentile(&mut samples, 0.5);
    row.p95_read_ns = percentile(&mut samples, 0.95);
    row.invariants_ok = violation.is_none();
    row.reason = violation.unwrap_or_default();
    Ok(())
}
