//! Two-dimensional PCA of memory tokens against raw frame tokens.
//!
//! CSV schema, one row per token:
//!
//! | column       | meaning                                                  |
//! |--------------|----------------------------------------------------------|
//! | `x`, `y`     | projection on the first and second principal axes        |
//! | `label`      | `memory` or `raw`                                        |
//! | `bank`       | `spatial`, `temporal`, `abstract`, `retrieved` or `raw`  |
//! | `entry`      | bank entry index (memory) or frame index (raw)           |
//! | `degenerate` | `true` when fewer than two axes carry variance           |

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Bank, FrameFeature, MemorySnapshot};

const TOLERANCE: f64 = 1e-9;
const MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLabel {
    Memory,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaPoint {
    pub x: f64,
    pub y: f64,
    pub label: PointLabel,
    pub bank: &'static str,
    pub entry: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct PrincipalAxes {
    pub mean: Vec<f64>,
    pub axes: [Vec<f64>; 2],
    pub variances: [f64; 2],
    pub degenerate: bool,
}

impl PrincipalAxes {
    pub fn project(&self, token: &[f64]) -> (f64, f64) {
        let mut xy = [0.0; 2];
        for (k, axis) in self.axes.iter().enumerate() {
            xy[k] = token
                .iter()
                .zip(&self.mean)
                .zip(axis)
                .map(|((t, m), a)| (t - m) * a)
                .sum();
        }
        (xy[0], xy[1])
    }
}

#[derive(Debug, Clone)]
pub struct PcaExport {
    pub axes: PrincipalAxes,
    pub points: Vec<PcaPoint>,
}

impl PcaExport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for p in &self.points {
            writer.serialize(p)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mat_vec(matrix: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = matrix[r * d..(r + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Leading eigenpair of a symmetric positive semi-definite matrix by power
/// iteration, restricted to the complement of `exclude`. Stops when the
/// residual `‖Cv − λv‖` falls below `TOLERANCE · scale`.
fn power_iteration(matrix: &[f64], d: usize, exclude: Option<&[f64]>, scale: f64, seed: u64) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let orthogonalize = |v: &mut Vec<f64>| {
        if let Some(u) = exclude {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
    };
    orthogonalize(&mut v);
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    let mut next = vec![0.0; d];
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        mat_vec(matrix, &v, &mut next);
        orthogonalize(&mut next);
        lambda = next.iter().zip(&v).map(|(a, b)| a * b).sum();
        let residual: f64 = next
            .iter()
            .zip(&v)
            .map(|(cv, x)| (cv - lambda * x).powi(2))
            .sum::<f64>()
            .sqrt();
        let n = norm(&next);
        if n <= f64::MIN_POSITIVE {
            return (v, 0.0);
        }
        next.iter_mut().for_each(|x| *x /= n);
        std::mem::swap(&mut v, &mut next);
        if residual <= TOLERANCE * scale {
            break;
        }
    }
    (v, lambda.max(0.0))
}

/// Mean and top two principal axes of `tokens` (each of length `dim`).
pub fn principal_axes<'a, I>(tokens: I, dim: usize) -> Result<PrincipalAxes>
where
    I: IntoIterator<Item = &'a [f64]> + Clone,
{
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for t in tokens.clone() {
        if t.len() != dim {
            return Err(Error::shape(format!("token of length {} in dim {dim}", t.len())));
        }
        mean.iter_mut().zip(t).for_each(|(m, x)| *m += x);
        count += 1;
    }
    if count < 3 {
        return Err(Error::shape(format!("PCA needs at least 3 tokens, got {count}")));
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);

    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for t in tokens {
        centered.iter_mut().zip(t).zip(&mean).for_each(|((c, x), m)| *c = x - m);
        for r in 0..dim {
            let cr = centered[r];
            for c in r..dim {
                cov[r * dim + c] += cr * centered[c];
            }
        }
    }
    for r in 0..dim {
        for c in r..dim {
            let v = cov[r * dim + c] / count as f64;
            cov[r * dim + c] = v;
            cov[c * dim + r] = v;
        }
    }
    let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
    let scale = trace.max(f64::MIN_POSITIVE);

    let (first, l1) = power_iteration(&cov, dim, None, scale, 0x5eed);
    let (second, l2) = if dim >= 2 {
        power_iteration(&cov, dim, Some(&first), scale, 0x5eed + 1)
    } else {
        (vec![0.0; dim], 0.0)
    };
    let degenerate = dim < 2 || l1 <= TOLERANCE * scale || l2 <= TOLERANCE * scale || trace <= 0.0;
    let second = if degenerate && norm(&second) == 0.0 {
        vec![0.0; dim]
    } else {
        second
    };
    Ok(PrincipalAxes {
        mean,
        axes: [first, second],
        variances: [l1, l2],
        degenerate,
    })
}

/// Projects every snapshot token and every raw frame token onto the top two
/// principal axes of their combined set.
pub fn export_memory_pca(snapshot: &MemorySnapshot, raw_frames: &[FrameFeature]) -> Result<PcaExport> {
    let dim = snapshot.dim();
    if let Some(f) = raw_frames.iter().find(|f| f.dim() != dim) {
        return Err(Error::shape(format!(
            "raw frame dim {} differs from snapshot dim {dim}",
            f.dim()
        )));
    }
    let all: Vec<&[f64]> = snapshot
        .tokens()
        .chain(raw_frames.iter().flat_map(|f| f.tokens()))
        .collect();
    let axes = principal_axes(all.iter().copied(), dim)?;
    let degenerate = axes.degenerate;

    let mut points = Vec::new();
    for bank in Bank::ALL {
        let span = snapshot.bank_span(bank);
        for (i, token) in snapshot.bank(bank).chunks_exact(dim).enumerate() {
            let (x, y) = axes.project(token);
            points.push(PcaPoint {
                x,
                y,
                label: PointLabel::Memory,
                bank: bank.name(),
                entry: i / span.entry_tokens.max(1),
                degenerate,
            });
        }
    }
    for (frame_index, frame) in raw_frames.iter().enumerate() {
        for token in frame.tokens() {
            let (x, y) = axes.project(token);
            points.push(PcaPoint {
                x,
                y,
                label: PointLabel::Raw,
                bank: "raw",
                entry: frame_index,
                degenerate,
            });
        }
    }
    Ok(PcaExport { axes, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_d_input_is_an_isometry() {
        let pts: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0],
            vec![3.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 2.0],
            vec![-1.0, 0.5],
        ];
        let axes = principal_axes(pts.iter().map(Vec::as_slice), 2).unwrap();
        assert!(!axes.degenerate);
        let proj: Vec<(f64, f64)> = pts.iter().map(|p| axes.project(p)).collect();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let orig = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                let got = ((proj[i].0 - proj[j].0).powi(2) + (proj[i].1 - proj[j].1).powi(2)).sqrt();
                assert!((orig - got).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_tokens_are_degenerate() {
        let pts = vec![vec![1.0, 2.0, 3.0]; 5];
        let axes = principal_axes(pts.iter().map(Vec::as_slice), 3).unwrap();
        assert!(axes.degenerate);
        assert!(axes.project(&pts[0]).0.abs() < 1e-12);
    }

    #[test]
    fn collinear_tokens_are_degenerate() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        let axes = principal_axes(pts.iter().map(Vec::as_slice), 3).unwrap();
        assert!(axes.degenerate);
        assert!((axes.variances[0] - 5.0 * 35.0 / 12.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_tokens_rejected() {
        let pts = [vec![1.0], vec![2.0]];
        assert!(principal_axes(pts.iter().map(Vec::as_slice), 1).is_err());
    }
}
