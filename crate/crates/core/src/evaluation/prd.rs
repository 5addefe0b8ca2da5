use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par;
use crate::rng::{self, StreamRng};

pub const PRD_ANGLES: usize = 1001;
const ANGLE_EPS: f64 = 1e-10;
const KMEANS_ITERS: usize = 100;
const ASSIGN_BLOCK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrdSettings {
    pub clusters: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for PrdSettings {
    fn default() -> Self {
        Self { clusters: 20, runs: 10, seed: 0 }
    }
}

/// Summary pair of a precision/recall curve: max F_{1/8} and max F_8.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
}

fn nearest_center(p: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centers.chunks(dim).enumerate() {
        let d: f64 = p.iter().zip(ctr).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &[f64], dim: usize, centers: &[f64]) -> Vec<(usize, f64)> {
    let n = points.len() / dim;
    par::map_chunks(n, ASSIGN_BLOCK, |r| {
        r.map(|i| nearest_center(&points[i * dim..(i + 1) * dim], centers, dim)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Lloyd's k-means with k-means++ seeding; returns the cluster of each point.
pub fn kmeans(points: &[f64], dim: usize, k: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    let n = points.len() / dim.max(1);
    if n == 0 || dim == 0 || points.len() != n * dim {
        return Err(invalid("k-means needs a non-empty point set"));
    }
    if k == 0 {
        return Err(invalid("k-means needs at least one cluster"));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = row(rng.random_range(0..n)).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| nearest_center(row(i), &centers, dim).1).collect();
    while centers.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut j = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    j = i;
                    break;
                }
                u -= w;
            }
            j
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            let e: f64 = row(i).iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            *d = d.min(e);
        }
        centers.extend(c);
    }
    let mut labels: Vec<usize> = assign(points, dim, &centers).into_iter().map(|a| a.0).collect();
    for _ in 0..KMEANS_ITERS {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centers[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        let next: Vec<usize> = assign(points, dim, &centers).into_iter().map(|a| a.0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(labels)
}

/// Precision and recall values of the PRD curve for two histograms over
/// the same bins (each normalised to sum to one).
pub fn prd_curve(reference: &[f64], model: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let step = (std::f64::consts::FRAC_PI_2 - 2.0 * ANGLE_EPS) / (PRD_ANGLES - 1) as f64;
    (0..PRD_ANGLES)
        .map(|i| {
            let slope = (ANGLE_EPS + step * i as f64).tan();
            let p: f64 = reference.iter().zip(model).map(|(r, m)| (slope * r).min(*m)).sum();
            (p.clamp(0.0, 1.0), (p / slope).clamp(0.0, 1.0))
        })
        .unzip()
}

pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den > 0.0 {
        (1.0 + b2) * precision * recall / den
    } else {
        0.0
    }
}

/// Summary of a PRD curve: (max F_{1/8}, max F_8).
pub fn summarize(precision: &[f64], recall: &[f64]) -> PrecisionRecall {
    let max_f = |beta: f64| precision.iter().zip(recall).map(|(&p, &r)| f_beta(p, r, beta)).fold(0.0, f64::max);
    PrecisionRecall { precision: max_f(1.0 / 8.0), recall: max_f(8.0) }
}

fn normalized_histogram(labels: &[usize], k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k];
    for &l in labels {
        h[l] += 1.0;
    }
    let n = labels.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Cluster-histogram precision and recall of `fake` against `real`
/// (row-major feature sets of width `dim`), averaged over independent
/// clusterings of the union.
pub fn prd_precision_recall(real: &[f32], fake: &[f32], dim: usize, settings: &PrdSettings) -> Result<PrecisionRecall> {
    if dim == 0 || real.is_empty() || fake.is_empty() || !real.len().is_multiple_of(dim) || !fake.len().is_multiple_of(dim) {
        return Err(invalid("precision/recall needs two non-empty feature sets of the same width"));
    }
    if settings.clusters < 2 || settings.runs == 0 {
        return Err(invalid("precision/recall needs at least 2 clusters and 1 run"));
    }
    let (nr, nf) = (real.len() / dim, fake.len() / dim);
    // Cluster the union in a canonical order so the result does not depend
    // on which set came first.
    let rows: Vec<(&[f32], bool)> = real.chunks(dim).map(|r| (r, true)).chain(fake.chunks(dim).map(|r| (r, false))).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[a].0.iter().zip(rows[b].0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let points: Vec<f64> = order.iter().flat_map(|&i| rows[i].0.iter().map(|&v| v as f64)).collect();
    let k = settings.clusters.min(nr + nf);
    let mut sum = PrecisionRecall { precision: 0.0, recall: 0.0 };
    for run in 0..settings.runs {
        let labels = kmeans(&points, dim, k, &mut rng::stream(settings.seed, run as u64))?;
        let (mut lr, mut lf) = (Vec::with_capacity(nr), Vec::with_capacity(nf));
        for (pos, &i) in order.iter().enumerate() {
            if rows[i].1 { &mut lr } else { &mut lf }.push(labels[pos]);
        }
        let (p, r) = prd_curve(&normalized_histogram(&lr, k), &normalized_histogram(&lf, k));
        let s = summarize(&p, &r);
        sum.precision += s.precision;
        sum.recall += s.recall;
    }
    Ok(PrecisionRecall { precision: sum.precision / settings.runs as f64, recall: sum.recall / settings.runs as f64 })
}
