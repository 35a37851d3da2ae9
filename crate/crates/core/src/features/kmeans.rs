use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Flat `[n, w]`.
    pub centers: Vec<f64>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center (lowest index on ties) and its squared distance.
pub(crate) fn nearest(point: &[f64], centers: &[f64], w: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks_exact(w).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's k-means over `M` points of dimension `w`, seeded by
/// distance-squared weighted sampling. Stops once inertia improves by less
/// than `tol` relative to its previous value or after `max_iter` rounds.
/// A cluster left empty is moved onto the point farthest from its center.
pub fn kmeans_fit(
    points: &[f64],
    w: usize,
    n: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    if w == 0 || !points.len().is_multiple_of(w) {
        return Err(Error::Shape(format!("{} values are not rows of {w}", points.len())));
    }
    let m = points.len() / w;
    if n == 0 || m < n {
        return Err(Error::Config(format!("k-means needs at least {n} points, got {m}")));
    }
    let row = |i: usize| &points[i * w..(i + 1) * w];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = Vec::with_capacity(n * w);
    centers.extend_from_slice(row(rng.gen_range(0..m)));
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(row(i), &centers[..w])).collect();
    while centers.len() < n * w {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Rounding can run past the end; fall back to the last positive weight.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap();
            }
            chosen
        } else {
            rng.gen_range(0..m)
        };
        let start = centers.len();
        centers.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &centers[start..]));
        }
    }

    let mut assign = vec![0usize; m];
    let mut dist = vec![0.0f64; m];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        for i in 0..m {
            let (j, d) = nearest(row(i), &centers, w);
            assign[i] = j;
            dist[i] = d;
        }
        let current: f64 = dist.iter().sum();
        let converged = inertia
            .last()
            .is_some_and(|&prev: &f64| prev - current <= tol * prev.max(f64::MIN_POSITIVE));
        inertia.push(current);
        if converged || current == 0.0 {
            break;
        }
        let mut sums = vec![0.0f64; n * w];
        let mut counts = vec![0usize; n];
        for i in 0..m {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * w..(assign[i] + 1) * w].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for j in 0..n {
            if counts[j] > 0 {
                for k in 0..w {
                    centers[j * w + k] = sums[j * w + k] / counts[j] as f64;
                }
            } else {
                let far = (0..m).max_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap();
                centers[j * w..(j + 1) * w].copy_from_slice(row(far));
                dist[far] = 0.0;
            }
        }
    }
    Ok(KMeansFit {
        centers,
        inertia,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn random_points(seed: u64, m: usize, w: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m * w).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn as_many_points_as_clusters() {
        let pts = random_points(1, 6, 3);
        let fit = kmeans_fit(&pts, 3, 6, 0, 100, 1e-6).unwrap();
        assert_eq!(*fit.inertia.last().unwrap(), 0.0);
        let mut a: Vec<_> = pts.chunks(3).map(|c| c.to_vec()).collect();
        let mut b: Vec<_> = fit.centers.chunks(3).map(|c| c.to_vec()).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let means = [[-5.0, 2.0], [4.0, -3.0]];
        let mut pts = Vec::new();
        for i in 0..400 {
            for v in means[i % 2] {
                pts.push(v + noise.sample(&mut rng));
            }
        }
        let fit = kmeans_fit(&pts, 2, 2, 9, 100, 1e-6).unwrap();
        for mean in means {
            let (_, d) = nearest(&mean, &fit.centers, 2);
            assert!(d.sqrt() < 0.1, "{:?}", fit.centers);
        }
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..20 {
            let pts = random_points(100 + seed, 300, 4);
            let fit = kmeans_fit(&pts, 4, 12, seed, 100, 0.0).unwrap();
            for pair in fit.inertia.windows(2) {
                assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "seed {seed}: {pair:?}");
            }
        }
    }

    #[test]
    fn duplicate_points_reseed_empty_clusters() {
        // Only two distinct points but three clusters: seeding must fall back
        // and the empty cluster must not break the iteration.
        let pts = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let fit = kmeans_fit(&pts, 1, 3, 4, 10, 1e-6).unwrap();
        assert_eq!(*fit.inertia.last().unwrap(), 0.0);
    }

    #[test]
    fn deterministic_and_validated() {
        let pts = random_points(3, 100, 5);
        assert_eq!(
            kmeans_fit(&pts, 5, 7, 1, 50, 1e-6).unwrap(),
            kmeans_fit(&pts, 5, 7, 1, 50, 1e-6).unwrap()
        );
        assert!(kmeans_fit(&pts[..15], 5, 4, 1, 50, 1e-6).is_err());
    }
}
