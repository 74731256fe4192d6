//! Lloyd's k-means with k-means++ seeding over flattened feature vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop when the objective improves by less than this fraction.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 100,
            tol: 1e-4,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    /// Cluster of every point; each center is the mean of its members.
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).powi(2)).sum()
}

fn nearest(p: &[f32], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let to_f64 = |p: &[f32]| p.iter().map(|v| *v as f64).collect::<Vec<f64>>();
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut centers = vec![to_f64(points[chosen[0]])];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on a zero-weight tail
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|d| *d > 0.0).expect("total > 0");
            }
            pick
        } else {
            // every point coincides with a center; take an unused index
            (0..points.len())
                .find(|i| !chosen.contains(i))
                .unwrap_or(0)
        };
        chosen.push(pick);
        let c = to_f64(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

pub fn kmeans(points: &[&[f32]], config: KMeansConfig) -> Result<KMeansResult> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("k-means input".into()));
    }
    if config.k == 0 || config.k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {} must lie in [1, {n}]",
            config.k
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points differ in length".into()));
    }
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();

    for _ in 0..config.max_iter.max(1) {
        let mut dists = vec![0.0f64; n];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centers);
            assignments[i] = c;
            dists[i] = d;
        }
        // reseed empty clusters with the point farthest from its center
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("k <= n leaves a cluster with two members");
            counts[assignments[far]] -= 1;
            assignments[far] = c;
            counts[c] = 1;
            dists[far] = 0.0;
            centers[c] = points[far].iter().map(|v| *v as f64).collect();
        }
        let objective: f64 = dists.iter().sum();

        // update step: centers become member means
        let mut sums = vec![vec![0.0f64; dim]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += *v as f64;
            }
        }
        for (c, s) in sums.into_iter().enumerate() {
            centers[c] = s.into_iter().map(|v| v / counts[c] as f64).collect();
        }

        let converged = history
            .last()
            .is_some_and(|prev: &f64| prev - objective <= config.tol * prev.abs());
        history.push(objective);
        if converged {
            break;
        }
    }
    Ok(KMeansResult {
        centers,
        assignments,
        objective_history: history,
    })
}
