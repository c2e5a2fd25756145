//! Semantic attention update of the abstract bank, with analytic gradients.
//!
//! Given abstract tokens `A` (`m × d`) and new tokens `E` (`n × d`):
//!
//! ```text
//! K = E·Wkᵀ    Q = A·Wqᵀ    S = Q·Kᵀ    W = softmax_rows(S)
//! out = (1 − α)·A + W·E
//! ```
//!
//! Each abstract row distributes its attention over the new tokens.
//!
//! Parameter files (`SAP1`) are little-endian:
//!
//! ```text
//! magic  b"SAP1"
//! dim    u32
//! count  u32                      number of matrices (2)
//! repeat count times:
//!   role  4 bytes                 b"KPRJ" (key) or b"QPRJ" (query)
//!   rows  u32, cols u32           both equal to dim
//!   data  rows·cols f64, row-major
//! alpha  f64
//! scaled u8                       0 = raw logits, 1 = divide by sqrt(dim)
//! ```

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const PARAMS_MAGIC: [u8; 4] = *b"SAP1";
const KEY_TAG: [u8; 4] = *b"KPRJ";
const QUERY_TAG: [u8; 4] = *b"QPRJ";

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    dim: usize,
    /// Row-major `dim × dim`.
    pub key_proj: Vec<f64>,
    /// Row-major `dim × dim`.
    pub query_proj: Vec<f64>,
    pub decay_alpha: f64,
    pub scaled: bool,
}

impl AttentionParams {
    pub fn new(
        dim: usize,
        key_proj: Vec<f64>,
        query_proj: Vec<f64>,
        decay_alpha: f64,
        scaled: bool,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::shape("attention dim must be positive"));
        }
        for (name, m) in [("key_proj", &key_proj), ("query_proj", &query_proj)] {
            if m.len() != dim * dim {
                return Err(Error::shape(format!(
                    "{name} has {} values, expected {}",
                    m.len(),
                    dim * dim
                )));
            }
            if let Some(index) = m.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        if !(decay_alpha > 0.0 && decay_alpha < 1.0) {
            return Err(Error::config(
                "decay_alpha",
                format!("decay out of range (0, 1): {decay_alpha}"),
            ));
        }
        Ok(Self {
            dim,
            key_proj,
            query_proj,
            decay_alpha,
            scaled,
        })
    }

    /// Bias-free projections drawn from `N(0, 1/dim)`.
    pub fn seeded(dim: usize, decay_alpha: f64, scaled: bool, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim.max(1) as f64).sqrt())
            .map_err(|e| Error::shape(e.to_string()))?;
        let key = (0..dim * dim).map(|_| normal.sample(&mut rng)).collect();
        let query = (0..dim * dim).map(|_| normal.sample(&mut rng)).collect();
        Self::new(dim, key, query, decay_alpha, scaled)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn logit_scale(&self) -> f64 {
        if self.scaled {
            1.0 / (self.dim as f64).sqrt()
        } else {
            1.0
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&PARAMS_MAGIC)?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&2u32.to_le_bytes())?;
        for (tag, m) in [(KEY_TAG, &self.key_proj), (QUERY_TAG, &self.query_proj)] {
            out.write_all(&tag)?;
            out.write_all(&(self.dim as u32).to_le_bytes())?;
            out.write_all(&(self.dim as u32).to_le_bytes())?;
            for v in m {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.write_all(&self.decay_alpha.to_le_bytes())?;
        out.write_all(&[u8::from(self.scaled)])?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if magic != PARAMS_MAGIC {
            return Err(Error::BadMagic {
                found: magic,
                expected: PARAMS_MAGIC,
            });
        }
        let dim = read_u32(&mut input)? as usize;
        let count = read_u32(&mut input)?;
        let mut key = None;
        let mut query = None;
        for _ in 0..count {
            let mut tag = [0u8; 4];
            input.read_exact(&mut tag)?;
            let rows = read_u32(&mut input)? as usize;
            let cols = read_u32(&mut input)? as usize;
            if rows != dim || cols != dim {
                return Err(Error::shape(format!(
                    "matrix {rows}x{cols} in a dim-{dim} params file"
                )));
            }
            let mut data = vec![0.0; rows * cols];
            for v in data.iter_mut() {
                *v = read_f64(&mut input)?;
            }
            match tag {
                KEY_TAG => key = Some(data),
                QUERY_TAG => query = Some(data),
                other => {
                    return Err(Error::shape(format!(
                        "unknown matrix role {:?}",
                        String::from_utf8_lossy(&other)
                    )))
                }
            }
        }
        let alpha = read_f64(&mut input)?;
        let mut scaled = [0u8; 1];
        input.read_exact(&mut scaled)?;
        let key = key.ok_or_else(|| Error::shape("params file lacks KPRJ"))?;
        let query = query.ok_or_else(|| Error::shape("params file lacks QPRJ"))?;
        Self::new(dim, key, query, alpha, scaled[0] != 0)
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// `a` is `rows × inner`, `b` is `cols × inner`; returns `a·bᵀ` (`rows × cols`).
fn matmul_bt(a: &[f64], b: &[f64], rows: usize, cols: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let ar = &a[r * inner..(r + 1) * inner];
        for c in 0..cols {
            let bc = &b[c * inner..(c + 1) * inner];
            out[r * cols + c] = ar.iter().zip(bc).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a` is `rows × inner`, `b` is `inner × cols`; returns `a·b`.
fn matmul(a: &[f64], b: &[f64], rows: usize, cols: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for i in 0..inner {
            let av = a[r * inner + i];
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * cols..(i + 1) * cols];
            for (o, bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a` is `inner × rows`, `b` is `inner × cols`; returns `aᵀ·b`.
fn matmul_at(a: &[f64], b: &[f64], rows: usize, cols: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..inner {
        let arow = &a[i * rows..(i + 1) * rows];
        let brow = &b[i * cols..(i + 1) * cols];
        for (r, av) in arow.iter().enumerate() {
            for (o, bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn softmax_rows(scores: &mut [f64], cols: usize) {
    for row in scores.chunks_exact_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct AttentionForward {
    pub keys: Vec<f64>,
    pub queries: Vec<f64>,
    /// Row-stochastic `m × n` attention weights.
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
    pub slots: usize,
    pub new_tokens: usize,
}

fn check_shapes(abstract_tokens: &[f64], new_tokens: &[f64], params: &AttentionParams) -> Result<(usize, usize)> {
    let d = params.dim;
    if !abstract_tokens.len().is_multiple_of(d) || !new_tokens.len().is_multiple_of(d) {
        return Err(Error::shape(format!(
            "token arrays ({}, {}) are not multiples of dim {d}",
            abstract_tokens.len(),
            new_tokens.len()
        )));
    }
    let n = new_tokens.len() / d;
    if n == 0 {
        return Err(Error::shape("semantic attention needs at least one new token"));
    }
    Ok((abstract_tokens.len() / d, n))
}

pub fn semantic_attention_forward(
    abstract_tokens: &[f64],
    new_tokens: &[f64],
    params: &AttentionParams,
) -> Result<AttentionForward> {
    let (m, n) = check_shapes(abstract_tokens, new_tokens, params)?;
    let d = params.dim;
    let keys = matmul_bt(new_tokens, &params.key_proj, n, d, d);
    let queries = matmul_bt(abstract_tokens, &params.query_proj, m, d, d);
    let mut weights = matmul_bt(&queries, &keys, m, n, d);
    let scale = params.logit_scale();
    if scale != 1.0 {
        weights.iter_mut().for_each(|v| *v *= scale);
    }
    softmax_rows(&mut weights, n);
    let mut output = matmul(&weights, new_tokens, m, d, n);
    let keep = 1.0 - params.decay_alpha;
    for (o, a) in output.iter_mut().zip(abstract_tokens) {
        *o += keep * a;
    }
    Ok(AttentionForward {
        keys,
        queries,
        weights,
        output,
        slots: m,
        new_tokens: n,
    })
}

/// Updated abstract tokens `(1 − α)·A + softmax(Q·Kᵀ)·E`.
pub fn semantic_attention(
    abstract_tokens: &[f64],
    new_tokens: &[f64],
    params: &AttentionParams,
) -> Result<Vec<f64>> {
    semantic_attention_forward(abstract_tokens, new_tokens, params).map(|f| f.output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub key_proj: Vec<f64>,
    pub query_proj: Vec<f64>,
    pub abstract_tokens: Vec<f64>,
    pub new_tokens: Vec<f64>,
}

/// Reverse-mode gradients of the forward pass given the cotangent
/// `upstream` (`m × d`) of its output.
pub fn semantic_attention_grad(
    abstract_tokens: &[f64],
    new_tokens: &[f64],
    params: &AttentionParams,
    upstream: &[f64],
) -> Result<AttentionGrads> {
    let fwd = semantic_attention_forward(abstract_tokens, new_tokens, params)?;
    let (m, n, d) = (fwd.slots, fwd.new_tokens, params.dim);
    if upstream.len() != m * d {
        return Err(Error::shape(format!(
            "upstream has {} values, expected {}",
            upstream.len(),
            m * d
        )));
    }

    // out = keep·A + W·E
    let keep = 1.0 - params.decay_alpha;
    let mut d_abstract: Vec<f64> = upstream.iter().map(|g| keep * g).collect();
    let d_weights = matmul_bt(upstream, new_tokens, m, n, d);
    let mut d_new = matmul_at(&fwd.weights, upstream, n, d, m);

    // Row softmax: dS = W ⊙ (dW − Σ_j dW·W), then the logit scale.
    let scale = params.logit_scale();
    let mut d_scores = vec![0.0; m * n];
    for r in 0..m {
        let w = &fwd.weights[r * n..(r + 1) * n];
        let g = &d_weights[r * n..(r + 1) * n];
        let dot: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..n {
            d_scores[r * n + j] = scale * w[j] * (g[j] - dot);
        }
    }

    // S = Q·Kᵀ
    let d_queries = matmul(&d_scores, &fwd.keys, m, d, n);
    let d_keys = matmul_at(&d_scores, &fwd.queries, n, d, m);

    // Q = A·Wqᵀ, K = E·Wkᵀ
    let d_query_proj = matmul_at(&d_queries, abstract_tokens, d, d, m);
    let d_key_proj = matmul_at(&d_keys, new_tokens, d, d, n);
    for (da, v) in d_abstract
        .iter_mut()
        .zip(matmul(&d_queries, &params.query_proj, m, d, d))
    {
        *da += v;
    }
    for (de, v) in d_new.iter_mut().zip(matmul(&d_keys, &params.key_proj, n, d, d)) {
        *de += v;
    }

    Ok(AttentionGrads {
        key_proj: d_key_proj,
        query_proj: d_query_proj,
        abstract_tokens: d_abstract,
        new_tokens: d_new,
    })
}

/// Abstract bank: `slots × tokens_per_slot` tokens updated in place by
/// attending to the pooled tokens of each new frame.
#[derive(Debug, Clone)]
pub struct AbstractBank {
    tokens: Vec<f64>,
    slots: usize,
    tokens_per_slot: usize,
}

impl AbstractBank {
    pub fn zeros(slots: usize, tokens_per_slot: usize, dim: usize) -> Self {
        Self {
            tokens: vec![0.0; slots * tokens_per_slot * dim],
            slots,
            tokens_per_slot,
        }
    }

    /// `pooled` is the frame pooled to the abstract grid: every one of its
    /// tokens is a new feature attended to by every abstract token.
    pub fn update(&mut self, pooled: &[f64], params: &AttentionParams) -> Result<()> {
        self.tokens = semantic_attention(&self.tokens, pooled, params)?;
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.tokens
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn tokens_per_slot(&self) -> usize {
        self.tokens_per_slot
    }
}
