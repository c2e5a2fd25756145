mod common;

use common::{enumerate_partitions, partition_objective, sq_dist, weighted_means};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use star_memory::{weighted_kmeans, KmeansInit, KmeansOptions};

fn options(init: KmeansInit) -> KmeansOptions {
    KmeansOptions {
        max_iters: 100,
        init,
        seed: 3,
    }
}

#[test]
fn six_points_two_clusters_against_exhaustive_oracle() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let weights = vec![1.0; 6];
        let all = enumerate_partitions(&points, &weights, 2);
        assert_eq!(all.len(), 62);
        let global_min = all.iter().map(|(_, o)| *o).fold(f64::INFINITY, f64::min);

        for init in [KmeansInit::WarmStart, KmeansInit::ClosestPair, KmeansInit::Random] {
            let state = weighted_kmeans(&points, &weights, 2, &options(init)).unwrap();
            assert!(state.converged);
            for w in state.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            // Our partition appears in the enumeration with the same objective.
            let ours = partition_objective(&points, &weights, &state.assignments, 2);
            let listed = all
                .iter()
                .find(|(a, _)| *a == state.assignments)
                .expect("partition is enumerated");
            assert!((listed.1 - ours).abs() < 1e-12);
            assert!((state.objective() - ours).abs() < 1e-12);
            assert!(global_min <= ours + 1e-12);

            // Local optimality: no point prefers another centroid.
            for (i, p) in points.iter().enumerate() {
                let own = sq_dist(p, &state.centroids[state.assignments[i]]);
                for c in &state.centroids {
                    assert!(own <= sq_dist(p, c) + 1e-12);
                }
            }
            // Every enumerated Lloyd fixed point at least as good as ours
            // would have to be reachable; the global optimum is one.
            let fixed_points: Vec<f64> = all
                .iter()
                .filter(|(a, _)| {
                    let means = weighted_means(&points, &weights, a, 2);
                    points.iter().enumerate().all(|(i, p)| {
                        let own = sq_dist(p, &means[a[i]]);
                        means.iter().all(|m| own <= sq_dist(p, m) + 1e-12)
                    })
                })
                .map(|(_, o)| *o)
                .collect();
            assert!(fixed_points.iter().any(|o| (o - ours).abs() < 1e-12));
        }
    }
}

#[test]
fn weighted_centroids_and_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let n = rng.gen_range(2..=8);
        let k = rng.gen_range(1..=n.min(4));
        let dim = rng.gen_range(1..=4);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..4.0)).collect();
        let state = weighted_kmeans(&points, &weights, k, &options(KmeansInit::ClosestPair)).unwrap();
        let means = weighted_means(&points, &weights, &state.assignments, k);
        for (c, m) in state.centroids.iter().zip(&means) {
            for (a, b) in c.iter().zip(m) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let total: f64 = weights.iter().sum();
        assert!((state.weights.iter().sum::<f64>() - total).abs() < 1e-9);
        assert!(state.weights.iter().all(|&w| w > 0.0));
    }
}

#[test]
fn sensitivity_to_point_weights() {
    // A heavy point drags its cluster's centroid onto itself.
    let points = vec![vec![0.0], vec![1.0], vec![10.0]];
    let state = weighted_kmeans(&points, &[1000.0, 1.0, 1.0], 2, &KmeansOptions::default()).unwrap();
    let left = state.centroids[state.assignments[0]][0];
    assert!(left < 0.01, "{left}");
    let light = weighted_kmeans(&points, &[1.0, 1.0, 1.0], 2, &KmeansOptions::default()).unwrap();
    assert_eq!(light.centroids[light.assignments[0]][0], 0.5);
}
