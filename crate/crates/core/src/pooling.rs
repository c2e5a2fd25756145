//! Average pooling of token grids and the newest-first feature buffer that
//! backs the spatial and retrieved banks.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::FrameFeature;

/// Non-overlapping average pooling from a `grid × grid` map down to
/// `target × target`. Each output token is the channelwise mean of its
/// `(grid / target)²` input tokens.
pub fn average_pool(feature: &FrameFeature, target: usize) -> Result<FrameFeature> {
    let tokens = pool_values(feature.as_slice(), feature.grid(), feature.dim(), target)?;
    Ok(FrameFeature::from_parts_unchecked(target, feature.dim(), tokens))
}

/// Pooling over a raw row-major `grid × grid × dim` slice.
pub fn pool_values(values: &[f64], grid: usize, dim: usize, target: usize) -> Result<Vec<f64>> {
    if target == 0 || !grid.is_multiple_of(target) {
        return Err(Error::PoolingNotExact { grid, target });
    }
    if values.len() != grid * grid * dim {
        return Err(Error::shape(format!(
            "expected {} values for a {grid}x{grid}x{dim} grid, got {}",
            grid * grid * dim,
            values.len()
        )));
    }
    if target == grid {
        return Ok(values.to_vec());
    }
    let window = grid / target;
    let scale = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; target * target * dim];
    for row in 0..grid {
        let out_row = row / window;
        for col in 0..grid {
            let src = &values[(row * grid + col) * dim..][..dim];
            let dst = &mut out[(out_row * target + col / window) * dim..][..dim];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// A buffered frame at spatial resolution, together with its pooled view at
/// temporal resolution (used as the retrieval key).
#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub frame: Arc<FrameFeature>,
    pub key: Arc<[f64]>,
    /// 1-based index of the frame in the stream.
    pub frame_index: u64,
}

/// Sliding window of the newest `capacity` pooled frames, newest first.
#[derive(Debug, Clone)]
pub struct FeatureBuffer {
    entries: VecDeque<BufferEntry>,
    capacity: usize,
    grid: usize,
}

impl FeatureBuffer {
    pub fn new(capacity: usize, grid: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity + 1),
            capacity,
            grid,
        }
    }

    /// Prepends `entry`, evicting and returning the oldest entry once the
    /// buffer is over capacity.
    pub fn push(&mut self, entry: BufferEntry) -> Result<Option<BufferEntry>> {
        if entry.frame.grid() != self.grid {
            return Err(Error::shape(format!(
                "buffer holds {0}x{0} frames, got {1}x{1}",
                self.grid,
                entry.frame.grid()
            )));
        }
        self.entries.push_front(entry);
        if self.entries.len() > self.capacity {
            Ok(self.entries.pop_back())
        } else {
            Ok(None)
        }
    }

    /// The first `n_spa` entries: the spatial bank.
    pub fn spatial(&self, n_spa: usize) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter().take(n_spa)
    }

    pub fn get(&self, index: usize) -> Option<&BufferEntry> {
        self.entries.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, grid: usize, dim: usize) -> FrameFeature {
        let tokens = (0..grid * grid * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FrameFeature::new(grid, dim, tokens).unwrap()
    }

    fn entry(value: f64, index: u64) -> BufferEntry {
        let frame = FrameFeature::constant(2, &[value]).unwrap();
        BufferEntry {
            key: Arc::from(vec![value]),
            frame: Arc::new(frame),
            frame_index: index,
        }
    }

    #[test]
    fn constant_grid_pools_to_constant() {
        let frame = FrameFeature::constant(8, &[0.5, -2.0, 3.0]).unwrap();
        for target in [1, 2, 4, 8] {
            let pooled = average_pool(&frame, target).unwrap();
            assert_eq!(pooled.grid(), target);
            for token in pooled.tokens() {
                assert_eq!(token, &[0.5, -2.0, 3.0]);
            }
        }
    }

    #[test]
    fn two_by_two_to_one() {
        let frame = FrameFeature::new(2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(average_pool(&frame, 1).unwrap().as_slice(), &[2.5]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frame = random_frame(&mut rng, 8, 4);
        for target in [1, 2, 4] {
            let pooled = average_pool(&frame, target).unwrap();
            let w = 8 / target;
            for orow in 0..target {
                for ocol in 0..target {
                    for d in 0..4 {
                        let mut sum = 0.0;
                        for r in orow * w..(orow + 1) * w {
                            for c in ocol * w..(ocol + 1) * w {
                                sum += frame.token(r, c)[d];
                            }
                        }
                        let expected = sum / (w * w) as f64;
                        assert!((pooled.token(orow, ocol)[d] - expected).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn non_divisible_target_rejected() {
        let frame = FrameFeature::constant(12, &[1.0]).unwrap();
        assert!(matches!(
            average_pool(&frame, 8),
            Err(Error::PoolingNotExact { grid: 12, target: 8 })
        ));
        assert!(average_pool(&frame, 0).is_err());
    }

    #[test]
    fn fifo_evicts_oldest() {
        let mut buffer = FeatureBuffer::new(3, 2);
        let mut evicted = Vec::new();
        for i in 1..=4 {
            if let Some(old) = buffer.push(entry(i as f64, i)).unwrap() {
                evicted.push(old.frame_index);
            }
        }
        let order: Vec<u64> = buffer.iter().map(|e| e.frame_index).collect();
        assert_eq!(order, vec![4, 3, 2]);
        assert_eq!(evicted, vec![1]);
    }

    #[test]
    fn single_spatial_slot_tracks_newest() {
        let mut buffer = FeatureBuffer::new(5, 2);
        for i in 1..=9 {
            buffer.push(entry(i as f64, i)).unwrap();
            let spatial: Vec<u64> = buffer.spatial(1).map(|e| e.frame_index).collect();
            assert_eq!(spatial, vec![i]);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let mut buffer = FeatureBuffer::new(2, 4);
        assert!(buffer.push(entry(1.0, 1)).is_err());
        assert!(buffer.is_empty());
    }

    proptest! {
        #[test]
        fn replay_matches_plain_list(capacity in 1usize..12, pushes in 0usize..40) {
            let mut buffer = FeatureBuffer::new(capacity, 2);
            let mut oracle: Vec<u64> = Vec::new();
            for i in 1..=pushes as u64 {
                buffer.push(entry(i as f64, i)).unwrap();
                oracle.insert(0, i);
                oracle.truncate(capacity);
                prop_assert_eq!(buffer.len(), (i as usize).min(capacity));
            }
            let got: Vec<u64> = buffer.iter().map(|e| e.frame_index).collect();
            prop_assert_eq!(got, oracle);
        }

        #[test]
        fn pooling_is_linear_and_mean_preserving(
            seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, target_pow in 0u32..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_frame(&mut rng, 8, 3);
            let y = random_frame(&mut rng, 8, 3);
            let target = 1usize << target_pow;
            let combo: Vec<f64> = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| a * p + b * q).collect();
            let combo = FrameFeature::new(8, 3, combo).unwrap();
            let lhs = average_pool(&combo, target).unwrap();
            let px = average_pool(&x, target).unwrap();
            let py = average_pool(&y, target).unwrap();
            for ((l, p), q) in lhs.as_slice().iter().zip(px.as_slice()).zip(py.as_slice()) {
                prop_assert!((l - (a * p + b * q)).abs() < 1e-12);
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((mean(px.as_slice()) - mean(x.as_slice())).abs() < 1e-12);
        }
    }
}
