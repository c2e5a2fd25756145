//! The `FVS1` binary feature-stream format and a deterministic synthetic
//! stream generator.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"FVS1"`                         |
//! | 4      | 4    | grid side `P` (u32, ≥ 1)                |
//! | 8      | 4    | token dim `D` (u32, ≥ 1)                |
//! | 12     | 8    | frame count (u64, 0 = unbounded)        |
//! | 20     | 1    | dtype tag (0 = f32)                     |
//! | 21     | …    | frames, each `P·P·D` f32, row-major     |
//!
//! With a non-zero frame count exactly that many frames are read and any
//! trailing bytes are ignored; with zero, frames are read until end of
//! input.

use std::io::{self, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::FrameFeature;

pub const MAGIC: [u8; 4] = *b"FVS1";
pub const HEADER_LEN: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
}

impl Dtype {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub grid_side: u32,
    pub dim: u32,
    /// 0 for an unbounded stream.
    pub frame_count: u64,
    pub dtype: Dtype,
}

impl StreamHeader {
    pub fn new(grid_side: usize, dim: usize, frame_count: u64) -> Result<Self> {
        let header = Self {
            grid_side: u32::try_from(grid_side).map_err(|_| Error::shape("grid side too large"))?,
            dim: u32::try_from(dim).map_err(|_| Error::shape("dim too large"))?,
            frame_count,
            dtype: Dtype::F32,
        };
        header.check()?;
        Ok(header)
    }

    fn check(&self) -> Result<()> {
        if self.grid_side == 0 || self.dim == 0 {
            return Err(Error::shape(format!(
                "header grid side {} and dim {} must be positive",
                self.grid_side, self.dim
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.grid_side as usize
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn values_per_frame(&self) -> usize {
        self.grid() * self.grid() * self.dim()
    }

    pub fn frame_bytes(&self) -> usize {
        self.values_per_frame() * self.dtype.size()
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&self.grid_side.to_le_bytes());
        out[8..12].copy_from_slice(&self.dim.to_le_bytes());
        out[12..20].copy_from_slice(&self.frame_count.to_le_bytes());
        out[20] = self.dtype as u8;
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedHeader {
                got: bytes.len(),
                need: HEADER_LEN,
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic {
                found: magic,
                expected: MAGIC,
            });
        }
        let header = Self {
            grid_side: u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")),
            dim: u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")),
            frame_count: u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")),
            dtype: Dtype::from_tag(bytes[20])?,
        };
        header.check()?;
        Ok(header)
    }
}

// Reads until `buf` is full or the input ends; returns the bytes read.
fn read_full<R: Read>(input: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match input.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Iterator over the frames of an `FVS1` stream. Stops after the first
/// error.
pub struct StreamReader<R> {
    input: R,
    header: StreamHeader,
    frames_read: u64,
    offset: u64,
    scratch: Vec<u8>,
    done: bool,
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut bytes = [0u8; HEADER_LEN];
        let got = read_full(&mut input, &mut bytes)?;
        let header = StreamHeader::parse(&bytes[..got])?;
        Ok(Self {
            input,
            scratch: vec![0u8; header.frame_bytes()],
            header,
            frames_read: 0,
            offset: HEADER_LEN as u64,
            done: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn frames_read(&self) -> u64 {
        self.frames_read
    }

    fn next_frame(&mut self) -> Result<Option<FrameFeature>> {
        let bounded = self.header.frame_count > 0;
        if bounded && self.frames_read == self.header.frame_count {
            return Ok(None);
        }
        let frame_start = self.offset;
        let got = read_full(&mut self.input, &mut self.scratch)?;
        self.offset += got as u64;
        if got == 0 && !bounded {
            return Ok(None);
        }
        if got < self.scratch.len() {
            return Err(Error::TruncatedFrame {
                frame: self.frames_read,
                frame_start,
                offset: self.offset,
            });
        }
        let mut values = Vec::with_capacity(self.header.values_per_frame());
        for (i, chunk) in self.scratch.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::NonFiniteInStream {
                    frame: self.frames_read,
                    offset: frame_start + 4 * i as u64,
                });
            }
            values.push(f64::from(v));
        }
        self.frames_read += 1;
        Ok(Some(FrameFeature::from_parts_unchecked(
            self.header.grid(),
            self.header.dim(),
            values,
        )))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<FrameFeature>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_frame() {
            Ok(Some(frame)) => Some(Ok(frame)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_stream<R: Read>(input: R) -> Result<StreamReader<R>> {
    StreamReader::new(input)
}

/// Writes a header followed by frames stored as f32.
pub struct StreamWriter<W: Write> {
    output: W,
    header: StreamHeader,
    written: u64,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut output: W, header: StreamHeader) -> Result<Self> {
        output.write_all(&header.to_bytes())?;
        Ok(Self {
            output,
            header,
            written: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &FrameFeature) -> Result<()> {
        if frame.grid() != self.header.grid() || frame.dim() != self.header.dim() {
            return Err(Error::shape(format!(
                "stream holds {0}x{0}x{1} frames, got {2}x{2}x{3}",
                self.header.grid(),
                self.header.dim(),
                frame.grid(),
                frame.dim()
            )));
        }
        if self.header.frame_count > 0 && self.written == self.header.frame_count {
            return Err(Error::shape("more frames than the header declares"));
        }
        let mut bytes = Vec::with_capacity(self.header.frame_bytes());
        for &v in frame.as_slice() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.output.write_all(&bytes)?;
        self.written += 1;
        Ok(())
    }

    /// Flushes and returns the sink. Fails if fewer frames than declared
    /// were written.
    pub fn finish(mut self) -> Result<W> {
        if self.header.frame_count > 0 && self.written != self.header.frame_count {
            return Err(Error::shape(format!(
                "header declares {} frames, wrote {}",
                self.header.frame_count, self.written
            )));
        }
        self.output.flush()?;
        Ok(self.output)
    }
}

pub fn write_stream<'a, W, I>(output: W, header: StreamHeader, frames: I) -> Result<W>
where
    W: Write,
    I: IntoIterator<Item = &'a FrameFeature>,
{
    let mut writer = StreamWriter::new(output, header)?;
    for frame in frames {
        writer.write_frame(frame)?;
    }
    writer.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_frames: usize,
    pub n_scenes: usize,
    pub grid: usize,
    pub dim: usize,
    /// Noise norm as a fraction of the anchor norm.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 1000,
            n_scenes: 3,
            grid: 16,
            dim: 64,
            noise: 0.05,
        }
    }
}

/// Scene-structured stand-in for an encoder: frames are split into
/// contiguous scenes, each frame is its scene's fixed random anchor plus
/// seeded Gaussian noise. Frame `i` depends only on the seed and `i`.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    spec: SynthSpec,
    anchors: Vec<Vec<f64>>,
    noise_std: Vec<f64>,
}

impl SyntheticStream {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        if spec.grid == 0 || spec.dim == 0 {
            return Err(Error::shape("synthetic grid and dim must be positive"));
        }
        if spec.n_scenes == 0 || spec.n_scenes > spec.n_frames {
            return Err(Error::shape(format!(
                "{} scenes for {} frames",
                spec.n_scenes, spec.n_frames
            )));
        }
        if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
            return Err(Error::shape(format!("noise {} must be non-negative", spec.noise)));
        }
        let len = spec.grid * spec.grid * spec.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let anchors: Vec<Vec<f64>> = (0..spec.n_scenes)
            .map(|_| (0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let noise_std = anchors
            .iter()
            .map(|a| {
                let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                spec.noise * norm / (len as f64).sqrt()
            })
            .collect();
        Ok(Self {
            spec,
            anchors,
            noise_std,
        })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.spec.n_frames == 0
    }

    pub fn scene_of(&self, frame: usize) -> usize {
        frame * self.spec.n_scenes / self.spec.n_frames
    }

    pub fn anchor(&self, scene: usize) -> &[f64] {
        &self.anchors[scene]
    }

    pub fn frame(&self, index: usize) -> FrameFeature {
        let scene = self.scene_of(index);
        let std = self.noise_std[scene];
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(index as u64 + 1);
        let tokens = self.anchors[scene]
            .iter()
            .map(|a| {
                if std == 0.0 {
                    *a
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    a + std * z
                }
            })
            .collect();
        FrameFeature::from_parts_unchecked(self.spec.grid, self.spec.dim, tokens)
    }

    pub fn frames(&self) -> impl Iterator<Item = FrameFeature> + '_ {
        (0..self.spec.n_frames).map(|i| self.frame(i))
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader::new(self.spec.grid, self.spec.dim, self.spec.n_frames as u64)
            .expect("validated in new")
    }

    pub fn write_to<W: Write>(&self, output: W) -> Result<W> {
        let mut writer = StreamWriter::new(output, self.header())?;
        for frame in self.frames() {
            writer.write_frame(&frame)?;
        }
        writer.finish()
    }
}

pub fn synth_stream(spec: SynthSpec) -> Result<SyntheticStream> {
    SyntheticStream::new(spec)
}
