//! Oracles shared by the integration and acceptance tests. Each one is a
//! direct, unoptimized restatement of the property it checks.
#![allow(dead_code)]

use std::collections::BTreeSet;

use star_memory::{
    semantic_attention, semantic_attention_forward, semantic_attention_grad, AttentionParams, Engine, FrameFeature, MemoryConfig, SynthSpec,
    SyntheticStream,
};

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Brute-force key retrieval: repeatedly take the heaviest not yet chosen
/// cluster (first index on ties), then scan the buffer for the first entry
/// at minimal distance.
pub fn brute_force_retrieval(
    keys: &[Vec<f64>],
    centroids: &[Vec<f64>],
    weights: &[f64],
    n_ret: usize,
) -> Vec<(usize, usize)> {
    let mut chosen = vec![false; weights.len()];
    let mut out = Vec::new();
    for _ in 0..n_ret.min(weights.len()) {
        let mut best: Option<usize> = None;
        for j in 0..weights.len() {
            if chosen[j] {
                continue;
            }
            match best {
                Some(b) if weights[j] <= weights[b] => {}
                _ => best = Some(j),
            }
        }
        let j = best.unwrap();
        chosen[j] = true;
        let mut nearest = 0;
        for i in 1..keys.len() {
            if sq_dist(&keys[i], &centroids[j]) < sq_dist(&keys[nearest], &centroids[j]) {
                nearest = i;
            }
        }
        out.push((j, nearest));
    }
    out
}

/// Weighted mean of the points assigned to each cluster.
pub fn weighted_means(points: &[Vec<f64>], weights: &[f64], assign: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = points[0].len();
    (0..k)
        .map(|c| {
            let total: f64 = (0..points.len()).filter(|&i| assign[i] == c).map(|i| weights[i]).sum();
            (0..d)
                .map(|x| {
                    (0..points.len())
                        .filter(|&i| assign[i] == c)
                        .map(|i| weights[i] * points[i][x])
                        .sum::<f64>()
                        / total
                })
                .collect()
        })
        .collect()
}

pub fn partition_objective(points: &[Vec<f64>], weights: &[f64], assign: &[usize], k: usize) -> f64 {
    let means = weighted_means(points, weights, assign, k);
    (0..points.len())
        .map(|i| weights[i] * sq_dist(&points[i], &means[assign[i]]))
        .sum()
}

/// Every assignment of `n` points to `k` clusters that leaves no cluster
/// empty, with its objective under weighted-mean centroids.
pub fn enumerate_partitions(points: &[Vec<f64>], weights: &[f64], k: usize) -> Vec<(Vec<usize>, f64)> {
    let n = points.len();
    let mut out = Vec::new();
    let mut assign = vec![0usize; n];
    loop {
        let used: BTreeSet<usize> = assign.iter().copied().collect();
        if used.len() == k {
            out.push((assign.clone(), partition_objective(points, weights, &assign, k)));
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return out;
            }
            assign[pos] += 1;
            if assign[pos] < k {
                break;
            }
            assign[pos] = 0;
            pos += 1;
        }
    }
}

/// Relative error used by the gradient checks.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// `‖semantic_attention(...) − target‖²`.
pub fn attention_loss(abs: &[f64], new: &[f64], params: &AttentionParams, target: &[f64]) -> f64 {
    semantic_attention(abs, new, params)
        .unwrap()
        .iter()
        .zip(target)
        .map(|(o, t)| (o - t) * (o - t))
        .sum()
}

/// Central differences of `f` around each entry of `x`.
pub fn central_differences(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Worst relative error between the analytic gradients of
/// `attention_loss` and central differences, over all four inputs.
pub fn attention_gradcheck(abs: &[f64], new: &[f64], params: &AttentionParams, target: &[f64], step: f64) -> f64 {
    let out = semantic_attention_forward(abs, new, params).unwrap().output;
    let upstream: Vec<f64> = out.iter().zip(target).map(|(o, t)| 2.0 * (o - t)).collect();
    let g = semantic_attention_grad(abs, new, params, &upstream).unwrap();
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: &[f64], numeric: Vec<f64>| {
        for (a, n) in analytic.iter().zip(numeric) {
            worst = worst.max(rel_err(*a, n));
        }
    };
    compare(
        &g.abstract_tokens,
        central_differences(abs, step, |x| attention_loss(x, new, params, target)),
    );
    compare(
        &g.new_tokens,
        central_differences(new, step, |x| attention_loss(abs, x, params, target)),
    );
    compare(
        &g.key_proj,
        central_differences(&params.key_proj, step, |x| {
            let mut p = params.clone();
            p.key_proj = x.to_vec();
            attention_loss(abs, new, &p, target)
        }),
    );
    compare(
        &g.query_proj,
        central_differences(&params.query_proj, step, |x| {
            let mut p = params.clone();
            p.query_proj = x.to_vec();
            attention_loss(abs, new, &p, target)
        }),
    );
    worst
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain).
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

pub fn hull_contains(hull: &[(f64, f64)], p: (f64, f64), eps: f64) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= -eps)
}

/// Replays a stream through an engine while tracking which frames each
/// temporal centroid absorbed, using the per-frame cluster assignments.
pub struct MembershipReplay {
    pub engine: Engine,
    pub members: Vec<BTreeSet<usize>>,
    pub frames: Vec<FrameFeature>,
    pub stream: SyntheticStream,
}

pub fn replay_with_membership(config: MemoryConfig, spec: SynthSpec) -> MembershipReplay {
    let stream = SyntheticStream::new(spec).unwrap();
    let mut engine = Engine::new(config.with_dim(stream.spec().dim), stream.spec().grid, None).unwrap();
    let mut members: Vec<BTreeSet<usize>> = Vec::new();
    let mut frames = Vec::new();
    for i in 0..stream.len() {
        let frame = stream.frame(i);
        let (_, report) = engine.ingest_frame_report(&frame).unwrap();
        members.push(BTreeSet::from([i]));
        if let Some(state) = report.clustering {
            let mut merged = vec![BTreeSet::new(); state.centroids.len()];
            for (point, &cluster) in state.assignments.iter().enumerate() {
                merged[cluster].extend(members[point].iter().copied());
            }
            members = merged;
        }
        frames.push(frame);
    }
    MembershipReplay {
        engine,
        members,
        frames,
        stream,
    }
}

/// Checks that every temporal centroid absorbed frames of a single scene
/// and that each of its projected tokens lies inside the convex hull of that
/// scene's projected raw tokens.
pub fn scene_hull_check(replay: &MembershipReplay) -> Result<(), String> {
    use star_memory::harness::{export_memory_pca, PointLabel};

    let snapshot = replay.engine.read_snapshot();
    let export = export_memory_pca(&snapshot, &replay.frames).map_err(|e| e.to_string())?;
    if export.axes.degenerate {
        return Err("degenerate projection".into());
    }
    let n_scenes = replay.stream.spec().n_scenes;
    let mut raw: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_scenes];
    let mut scale: f64 = 0.0;
    for p in export.points.iter().filter(|p| p.label == PointLabel::Raw) {
        raw[replay.stream.scene_of(p.entry)].push((p.x, p.y));
        scale = scale.max(p.x.abs()).max(p.y.abs());
    }
    let hulls: Vec<_> = raw.iter().map(|pts| convex_hull(pts)).collect();
    for (c, members) in replay.members.iter().enumerate() {
        let scenes: BTreeSet<usize> = members.iter().map(|&f| replay.stream.scene_of(f)).collect();
        if scenes.len() != 1 {
            return Err(format!("centroid {c} mixes scenes {scenes:?}"));
        }
        let scene = *scenes.iter().next().unwrap();
        for p in export
            .points
            .iter()
            .filter(|p| p.bank == "temporal" && p.entry == c)
        {
            if !hull_contains(&hulls[scene], (p.x, p.y), 1e-9 * scale) {
                return Err(format!(
                    "centroid {c} token at ({:.4}, {:.4}) outside scene {scene} hull",
                    p.x, p.y
                ));
            }
        }
    }
    Ok(())
}

pub fn scene_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        n_frames: 300,
        n_scenes: 3,
        grid: 8,
        dim: 16,
        noise: 0.05,
    }
}
