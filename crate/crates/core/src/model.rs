//! Domain types shared by every part of the engine: frame features, the
//! memory configuration with its token budget, and published snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One frame's `grid × grid` map of `dim`-dimensional tokens, row-major.
///
/// Token `(row, col)` occupies `tokens[(row * grid + col) * dim..][..dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeature {
    grid: usize,
    dim: usize,
    tokens: Vec<f64>,
}

impl FrameFeature {
    pub fn new(grid: usize, dim: usize, tokens: Vec<f64>) -> Result<Self> {
        if grid == 0 || dim == 0 {
            return Err(Error::shape(format!(
                "grid and dim must be positive (grid={grid}, dim={dim})"
            )));
        }
        if tokens.len() != grid * grid * dim {
            return Err(Error::shape(format!(
                "expected {} values for a {grid}x{grid}x{dim} frame, got {}",
                grid * grid * dim,
                tokens.len()
            )));
        }
        if let Some(index) = tokens.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, dim, tokens })
    }

    /// Frame whose every token equals `token`.
    pub fn constant(grid: usize, token: &[f64]) -> Result<Self> {
        let tokens = token
            .iter()
            .copied()
            .cycle()
            .take(grid * grid * token.len())
            .collect();
        Self::new(grid, token.len(), tokens)
    }

    pub(crate) fn from_parts_unchecked(grid: usize, dim: usize, tokens: Vec<f64>) -> Self {
        debug_assert_eq!(tokens.len(), grid * grid * dim);
        Self { grid, dim, tokens }
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.tokens
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.tokens
    }

    pub fn token(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.grid + col) * self.dim;
        &self.tokens[start..start + self.dim]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f64]> {
        self.tokens.chunks_exact(self.dim)
    }
}

/// How the temporal clustering picks its starting centroids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KmeansInit {
    /// Start from the first `k` points, i.e. the previous bank entries.
    WarmStart,
    /// Greedily merge the cheapest weighted pair of points until `k`
    /// remain. For the streaming `k + 1` case that is one merge, so a frame
    /// from a new scene keeps its own centroid.
    ClosestPair,
    /// Seeded sample of `k` distinct points.
    Random,
}

/// Budget and shape hyperparameters of the four-bank memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub p_spa: usize,
    pub p_tem: usize,
    pub p_abs: usize,
    pub n_buff: usize,
    pub n_spa: usize,
    pub n_tem: usize,
    pub n_abs: usize,
    pub n_ret: usize,
    pub dim: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_init: KmeansInit,
    pub decay_alpha: f64,
    /// Scale attention logits by `1/sqrt(dim)`. Off by default.
    pub attention_scaled: bool,
    pub rng_seed: u64,
    /// Number of committed snapshots retained for timestamped queries.
    pub history_depth: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            p_spa: 8,
            p_tem: 4,
            p_abs: 1,
            n_buff: 300,
            n_spa: 1,
            n_tem: 25,
            n_abs: 25,
            n_ret: 3,
            dim: 1024,
            kmeans_max_iters: 10,
            kmeans_init: KmeansInit::ClosestPair,
            decay_alpha: 0.1,
            attention_scaled: false,
            rng_seed: 0,
            history_depth: 8,
        }
    }
}

impl MemoryConfig {
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    /// Total token budget across the spatial, temporal, abstract and
    /// retrieved banks.
    pub fn max_tokens(&self) -> usize {
        max_tokens(self)
    }

    pub fn spatial_frame_tokens(&self) -> usize {
        self.p_spa * self.p_spa
    }

    pub fn temporal_frame_tokens(&self) -> usize {
        self.p_tem * self.p_tem
    }

    pub fn abstract_slot_tokens(&self) -> usize {
        self.p_abs * self.p_abs
    }

    pub fn validate(&self, input_grid: usize) -> Result<()> {
        validate_config(self, input_grid)
    }
}

pub fn max_tokens(config: &MemoryConfig) -> usize {
    (config.n_spa + config.n_ret) * config.p_spa * config.p_spa
        + config.n_tem * config.p_tem * config.p_tem
        + config.n_abs * config.p_abs * config.p_abs
}

/// Checks every configuration invariant against frames of side `input_grid`.
/// Reports the first violated constraint.
pub fn validate_config(config: &MemoryConfig, input_grid: usize) -> Result<()> {
    let positive = [
        ("p_spa", config.p_spa),
        ("p_tem", config.p_tem),
        ("p_abs", config.p_abs),
        ("n_buff", config.n_buff),
        ("n_spa", config.n_spa),
        ("n_tem", config.n_tem),
        ("n_abs", config.n_abs),
        ("n_ret", config.n_ret),
        ("dim", config.dim),
        ("kmeans_max_iters", config.kmeans_max_iters),
        ("history_depth", config.history_depth),
    ];
    for (field, value) in positive {
        if value == 0 {
            return Err(Error::config(field, "must be positive"));
        }
    }
    if input_grid == 0 {
        return Err(Error::config("input_grid", "must be positive"));
    }
    if config.n_spa > config.n_buff {
        return Err(Error::config(
            "n_spa",
            format!("n_spa ({}) exceeds n_buff ({})", config.n_spa, config.n_buff),
        ));
    }
    if config.n_ret > config.n_tem {
        return Err(Error::config(
            "n_ret",
            format!("n_ret ({}) exceeds n_tem ({})", config.n_ret, config.n_tem),
        ));
    }
    if config.p_tem > config.p_spa {
        return Err(Error::config(
            "p_tem",
            format!("p_tem ({}) exceeds p_spa ({})", config.p_tem, config.p_spa),
        ));
    }
    if config.p_abs > config.p_tem {
        return Err(Error::config(
            "p_abs",
            format!("p_abs ({}) exceeds p_tem ({})", config.p_abs, config.p_tem),
        ));
    }
    if !(config.decay_alpha > 0.0 && config.decay_alpha < 1.0) {
        return Err(Error::config(
            "decay_alpha",
            format!("decay out of range (0, 1): {}", config.decay_alpha),
        ));
    }
    for target in [config.p_spa, config.p_tem, config.p_abs] {
        if !input_grid.is_multiple_of(target) {
            return Err(Error::PoolingNotExact {
                grid: input_grid,
                target,
            });
        }
    }
    // Retrieval compares buffer entries (stored at p_spa) against centroids
    // at p_tem, so the second pooling stage must be exact as well.
    if !config.p_spa.is_multiple_of(config.p_tem) {
        return Err(Error::PoolingNotExact {
            grid: config.p_spa,
            target: config.p_tem,
        });
    }
    Ok(())
}

/// The four banks in snapshot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bank {
    Spatial,
    Temporal,
    Abstract,
    Retrieved,
}

impl Bank {
    pub const ALL: [Bank; 4] = [Bank::Spatial, Bank::Temporal, Bank::Abstract, Bank::Retrieved];

    pub fn name(self) -> &'static str {
        match self {
            Bank::Spatial => "spatial",
            Bank::Temporal => "temporal",
            Bank::Abstract => "abstract",
            Bank::Retrieved => "retrieved",
        }
    }
}

/// Token range occupied by one bank inside a snapshot, plus the number of
/// tokens in each of its entries (frames, centroids or slots).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BankSpan {
    pub start: usize,
    pub len: usize,
    pub entry_tokens: usize,
}

impl BankSpan {
    pub fn entries(&self) -> usize {
        if self.entry_tokens == 0 {
            0
        } else {
            self.len / self.entry_tokens
        }
    }
}

/// Immutable, versioned flattening of the memory banks in the order
/// spatial, temporal, abstract, retrieved.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySnapshot {
    pub(crate) version: u64,
    pub(crate) timestamp_frame: u64,
    pub(crate) dim: usize,
    pub(crate) tokens: Vec<f64>,
    pub(crate) banks: [BankSpan; 4],
    pub(crate) temporal_weights: Vec<f64>,
    pub(crate) checksum: u64,
}

impl MemorySnapshot {
    /// Version 0: nothing ingested, every bank empty.
    pub fn empty(dim: usize) -> Self {
        Self::seal(0, 0, dim, Vec::new(), [BankSpan::default(); 4], Vec::new())
    }

    pub(crate) fn seal(
        version: u64,
        timestamp_frame: u64,
        dim: usize,
        tokens: Vec<f64>,
        banks: [BankSpan; 4],
        temporal_weights: Vec<f64>,
    ) -> Self {
        let checksum = checksum(version, timestamp_frame, &tokens, &temporal_weights);
        Self {
            version,
            timestamp_frame,
            dim,
            tokens,
            banks,
            temporal_weights,
            checksum,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn timestamp_frame(&self) -> u64 {
        self.timestamp_frame
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_tokens(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.tokens.len() / self.dim
        }
    }

    /// Flat `num_tokens × dim` values.
    pub fn as_slice(&self) -> &[f64] {
        &self.tokens
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f64]> {
        self.tokens.chunks_exact(self.dim.max(1))
    }

    pub fn bank_span(&self, bank: Bank) -> BankSpan {
        self.banks[bank as usize]
    }

    pub fn bank_spans(&self) -> &[BankSpan; 4] {
        &self.banks
    }

    /// Flat values of one bank.
    pub fn bank(&self, bank: Bank) -> &[f64] {
        let span = self.bank_span(bank);
        &self.tokens[span.start * self.dim..(span.start + span.len) * self.dim]
    }

    /// Flat values of entry `index` of a bank.
    pub fn bank_entry(&self, bank: Bank, index: usize) -> &[f64] {
        let span = self.bank_span(bank);
        let per = span.entry_tokens * self.dim;
        &self.bank(bank)[index * per..(index + 1) * per]
    }

    pub fn temporal_weights(&self) -> &[f64] {
        &self.temporal_weights
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// Recomputes the commit checksum over the payload.
    pub fn verify(&self) -> bool {
        checksum(
            self.version,
            self.timestamp_frame,
            &self.tokens,
            &self.temporal_weights,
        ) == self.checksum
    }
}

// FNV-1a over the little-endian bytes of every field.
fn checksum(version: u64, timestamp: u64, tokens: &[f64], weights: &[f64]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    let mut feed = |word: u64| {
        for byte in word.to_le_bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(PRIME);
        }
    };
    feed(version);
    feed(timestamp);
    for value in tokens.iter().chain(weights) {
        feed(value.to_bits());
    }
    hash
}
