//! Physical plausibility and diversity of placed bodies.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::rng::rng_indexed;
use crate::sdf::SdfGrid;

pub const DEFAULT_CLUSTERS: usize = 20;
pub const RESTARTS: usize = 50;
const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{samples} samples cannot form {k} clusters")]
    TooFewSamples { samples: usize, k: usize },
    #[error("samples have inconsistent dimensions")]
    Ragged,
    #[error("k must be at least 1")]
    ZeroClusters,
}

/// Fraction of vertices in free space (`sdf > 0`).
pub fn non_collision(vertices: &[Point], sdf: &SdfGrid) -> f64 {
    if vertices.is_empty() {
        return 1.0;
    }
    let free = vertices.iter().filter(|v| sdf.sample(v).value > 0.0).count();
    free as f64 / vertices.len() as f64
}

/// 1 when any vertex touches or enters the scene (`sdf ≤ 0`).
pub fn contact_score(vertices: &[Point], sdf: &SdfGrid) -> u8 {
    vertices.iter().any(|v| sdf.sample(v).value <= 0.0) as u8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityReport {
    pub non_collision: Vec<f64>,
    pub contact: Vec<u8>,
    pub non_collision_mean: f64,
    pub contact_mean: f64,
    /// Vertices sampled outside the SDF domain, per body.
    pub clamped: Vec<usize>,
}

pub fn plausibility<'a>(bodies: impl IntoIterator<Item = &'a [Point]>, sdf: &SdfGrid) -> PlausibilityReport {
    let mut nc = Vec::new();
    let mut ct = Vec::new();
    let mut clamped = Vec::new();
    for b in bodies {
        nc.push(non_collision(b, sdf));
        ct.push(contact_score(b, sdf));
        clamped.push(b.iter().filter(|v| sdf.sample(v).clamped).count());
    }
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let ctf: Vec<f64> = ct.iter().map(|&c| c as f64).collect();
    PlausibilityReport {
        non_collision_mean: mean(&nc),
        contact_mean: mean(&ctf),
        non_collision: nc,
        contact: ct,
        clamped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub k: usize,
    /// Natural-log entropy of the cluster histogram.
    pub entropy: f64,
    /// Mean distance from each sample to its cluster center.
    pub cluster_size: f64,
    pub histogram: Vec<usize>,
    pub inertia: f64,
}

/// Entropy in nats of a count histogram.
pub fn histogram_entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp(samples: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![samples[rng.gen_range(0..samples.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = samples.iter().map(|x| nearest(x, &centers).1).collect();
        let next = match WeightedIndex::new(&d) {
            Ok(w) => w.sample(rng),
            // every sample already sits on a center
            Err(_) => rng.gen_range(0..samples.len()),
        };
        centers.push(samples[next].clone());
    }
    centers
}

/// One Lloyd run: assignments, centers and inertia.
fn lloyd(samples: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let dim = samples[0].len();
    let mut assign = vec![usize::MAX; samples.len()];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        for (i, x) in samples.iter().enumerate() {
            let j = nearest(x, &centers).0;
            if assign[i] != j {
                assign[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (x, &j) in samples.iter().zip(&assign) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (j, c) in centers.iter_mut().enumerate() {
            if counts[j] > 0 {
                *c = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    let inertia = samples.iter().zip(&assign).map(|(x, &j)| dist2(x, &centers[j])).sum();
    (assign, centers, inertia)
}

/// K-means (k-means++ seeding, best of [`RESTARTS`] by inertia) over
/// parameter vectors; entropy of the cluster histogram and mean distance to
/// the assigned center.
pub fn diversity(samples: &[Vec<f64>], k: usize, seed: u64) -> Result<DiversityReport, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroClusters);
    }
    if samples.len() < k {
        return Err(MetricsError::TooFewSamples { samples: samples.len(), k });
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(MetricsError::Ragged);
    }
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, f64)> = None;
    for r in 0..RESTARTS {
        let mut rng = rng_indexed(seed, "kmeans", r as u64);
        let run = lloyd(samples, kmeans_pp(samples, k, &mut rng));
        if best.as_ref().map_or(true, |b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (assign, centers, inertia) = best.expect("at least one restart");
    let mut histogram = vec![0usize; k];
    for &j in &assign {
        histogram[j] += 1;
    }
    let cluster_size = samples
        .iter()
        .zip(&assign)
        .map(|(x, &j)| dist2(x, &centers[j]).sqrt())
        .sum::<f64>()
        / samples.len() as f64;
    Ok(DiversityReport {
        k,
        entropy: histogram_entropy(&histogram),
        cluster_size,
        histogram,
        inertia,
    })
}
