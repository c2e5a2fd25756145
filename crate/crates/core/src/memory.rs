//! The writer-side memory state and its per-frame update path.

use std::sync::Arc;

use crate::attention::{AbstractBank, AttentionParams};
use crate::error::{Error, Result};
use crate::model::{Bank, BankSpan, FrameFeature, MemoryConfig, MemorySnapshot};
use crate::pooling::{average_pool, pool_values, BufferEntry, FeatureBuffer};
use crate::retrieval::{retrieve_key_features, KeySelection};
use crate::temporal::{ClusterState, KmeansOptions, TemporalBank};

/// What one ingested frame did to the banks.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub frame_index: u64,
    pub evicted: Option<u64>,
    pub clustering: Option<ClusterState>,
    pub retrieved: Vec<KeySelection>,
}

/// Spatial, temporal, abstract and retrieved banks plus the feature buffer.
/// Owned by a single writer.
#[derive(Debug, Clone)]
pub struct StarMemory {
    config: MemoryConfig,
    input_grid: usize,
    params: AttentionParams,
    buffer: FeatureBuffer,
    temporal: TemporalBank,
    abstract_bank: AbstractBank,
    retrieved: Vec<BufferEntry>,
    frames_ingested: u64,
}

impl StarMemory {
    /// Memory for frames of side `input_grid`. Without explicit attention
    /// parameters, projections are drawn from `config.rng_seed`.
    pub fn new(
        config: MemoryConfig,
        input_grid: usize,
        params: Option<AttentionParams>,
    ) -> Result<Self> {
        config.validate(input_grid)?;
        let params = match params {
            Some(p) => {
                if p.dim() != config.dim {
                    return Err(Error::shape(format!(
                        "attention params are dim {}, memory is dim {}",
                        p.dim(),
                        config.dim
                    )));
                }
                p
            }
            None => AttentionParams::seeded(
                config.dim,
                config.decay_alpha,
                config.attention_scaled,
                config.rng_seed,
            )?,
        };
        let kmeans = KmeansOptions {
            max_iters: config.kmeans_max_iters,
            init: config.kmeans_init,
            seed: config.rng_seed,
        };
        Ok(Self {
            buffer: FeatureBuffer::new(config.n_buff, config.p_spa),
            temporal: TemporalBank::new(config.n_tem, kmeans),
            abstract_bank: AbstractBank::zeros(
                config.n_abs,
                config.abstract_slot_tokens(),
                config.dim,
            ),
            retrieved: Vec::with_capacity(config.n_ret),
            frames_ingested: 0,
            input_grid,
            params,
            config,
        })
    }

    pub fn check_frame(&self, frame: &FrameFeature) -> Result<()> {
        if frame.grid() != self.input_grid || frame.dim() != self.config.dim {
            return Err(Error::shape(format!(
                "expected {0}x{0}x{1} frame, got {2}x{2}x{3}",
                self.input_grid,
                self.config.dim,
                frame.grid(),
                frame.dim()
            )));
        }
        Ok(())
    }

    /// Writes one frame: buffer, spatial view, temporal clustering,
    /// abstract attention, then retrieval against the updated buffer and
    /// temporal bank. A frame of the wrong shape leaves the state untouched.
    pub fn ingest(&mut self, frame: &FrameFeature) -> Result<IngestReport> {
        self.check_frame(frame)?;
        let dim = self.config.dim;
        let spatial = average_pool(frame, self.config.p_spa)?;
        let temporal = pool_values(frame.as_slice(), self.input_grid, dim, self.config.p_tem)?;
        let abstract_tokens =
            pool_values(frame.as_slice(), self.input_grid, dim, self.config.p_abs)?;

        let frame_index = self.frames_ingested + 1;
        let evicted = self
            .buffer
            .push(BufferEntry {
                frame: Arc::new(spatial),
                key: Arc::from(temporal.as_slice()),
                frame_index,
            })?
            .map(|e| e.frame_index);
        let clustering = self.temporal.update(temporal)?;
        self.abstract_bank.update(&abstract_tokens, &self.params)?;

        let keys: Vec<&[f64]> = self.buffer.iter().map(|e| &*e.key).collect();
        let retrieved = retrieve_key_features(
            &keys,
            self.temporal.centroids(),
            self.temporal.weights(),
            self.config.n_ret,
        )?;
        self.retrieved.clear();
        self.retrieved.extend(
            retrieved
                .iter()
                .map(|s| self.buffer.get(s.buffer_index).expect("index from scan").clone()),
        );
        self.frames_ingested = frame_index;
        Ok(IngestReport {
            frame_index,
            evicted,
            clustering,
            retrieved,
        })
    }

    /// Flattens the banks, in spatial, temporal, abstract, retrieved order,
    /// into a sealed snapshot.
    pub fn snapshot(&self, version: u64) -> MemorySnapshot {
        let dim = self.config.dim;
        let mut tokens = Vec::with_capacity(self.config.max_tokens() * dim);
        let mut spans = [BankSpan::default(); 4];
        let mut cursor = 0;
        let mut record = |bank: Bank, tokens: &Vec<f64>, entry_tokens: usize| {
            let end = tokens.len() / dim;
            spans[bank as usize] = BankSpan {
                start: cursor,
                len: end - cursor,
                entry_tokens,
            };
            cursor = end;
        };

        for entry in self.buffer.spatial(self.config.n_spa) {
            tokens.extend_from_slice(entry.frame.as_slice());
        }
        record(Bank::Spatial, &tokens, self.config.spatial_frame_tokens());
        for centroid in self.temporal.centroids() {
            tokens.extend_from_slice(centroid);
        }
        record(Bank::Temporal, &tokens, self.config.temporal_frame_tokens());
        if self.frames_ingested > 0 {
            tokens.extend_from_slice(self.abstract_bank.as_slice());
        }
        record(Bank::Abstract, &tokens, self.config.abstract_slot_tokens());
        for entry in &self.retrieved {
            tokens.extend_from_slice(entry.frame.as_slice());
        }
        record(Bank::Retrieved, &tokens, self.config.spatial_frame_tokens());

        MemorySnapshot::seal(
            version,
            self.frames_ingested,
            dim,
            tokens,
            spans,
            self.temporal.weights().to_vec(),
        )
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn input_grid(&self) -> usize {
        self.input_grid
    }

    pub fn params(&self) -> &AttentionParams {
        &self.params
    }

    pub fn frames_ingested(&self) -> u64 {
        self.frames_ingested
    }

    pub fn buffer(&self) -> &FeatureBuffer {
        &self.buffer
    }

    pub fn temporal(&self) -> &TemporalBank {
        &self.temporal
    }

    pub fn abstract_bank(&self) -> &AbstractBank {
        &self.abstract_bank
    }

    pub fn retrieved(&self) -> &[BufferEntry] {
        &self.retrieved
    }

    /// Tokens currently held by the four banks.
    pub fn bank_tokens(&self) -> usize {
        let spatial = self.buffer.len().min(self.config.n_spa) * self.config.spatial_frame_tokens();
        let temporal = self.temporal.len() * self.config.temporal_frame_tokens();
        let abstract_tokens = if self.frames_ingested > 0 {
            self.config.n_abs * self.config.abstract_slot_tokens()
        } else {
            0
        };
        let retrieved = self.retrieved.len() * self.config.spatial_frame_tokens();
        spatial + temporal + abstract_tokens + retrieved
    }

    pub fn buffer_tokens(&self) -> usize {
        self.buffer.len() * self.config.spatial_frame_tokens()
    }
}
