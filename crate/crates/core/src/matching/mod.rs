//! Nearest-neighbour latent matching.
//!
//! Every target is assigned the pool latent whose generated sample is
//! closest in feature space. Distances are squared Euclidean, accumulated in
//! f64 in coordinate order; ties go to the lowest pool index.

mod kdtree;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{Discriminator, FeatureSpace, Generator};
use crate::nn::kernels::{gemm, View};
use crate::par;

/// Largest feature dimension handled by the k-d tree.
const TREE_MAX_DIM: usize = 8;
const TARGET_BLOCK: usize = 64;
const GENERATE_BATCH: usize = 256;

/// Latents drawn from the prior together with their generated features.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    pub latents: Vec<f32>,
    pub latent_dim: usize,
    pub features: Vec<f32>,
    pub feature_dim: usize,
    pub epoch: usize,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.latents.len() / self.latent_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latent(&self, i: usize) -> &[f32] {
        &self.latents[i * self.latent_dim..(i + 1) * self.latent_dim]
    }
}

/// Per-target matched latents, stamped with the epoch they were computed in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchAssignment {
    pub latents: Vec<f32>,
    pub latent_dim: usize,
    pub pool_index: Vec<usize>,
    pub distance: Vec<f64>,
    pub epoch: usize,
}

impl MatchAssignment {
    pub fn len(&self) -> usize {
        self.pool_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool_index.is_empty()
    }

    pub fn latent(&self, i: usize) -> &[f32] {
        &self.latents[i * self.latent_dim..(i + 1) * self.latent_dim]
    }
}

pub(crate) fn exact_sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        s += d * d;
    }
    s
}

/// `size` i.i.d. standard normal latents of dimension `dim`, flat.
pub fn sample_pool(rng: &mut impl Rng, size: usize, dim: usize) -> Vec<f32> {
    (0..size * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Generate and embed `latents` (flat, `m × latent_dim`).
pub fn build_pool(
    generator: &Generator,
    space: &FeatureSpace,
    disc: Option<&Discriminator>,
    latents: Vec<f32>,
    epoch: usize,
) -> Result<CandidatePool> {
    let d = generator.latent_dim();
    let shape = generator.output_shape();
    let feature_dim = space.dim(shape, disc)?;
    let m = latents.len() / d;
    let mut features = Vec::with_capacity(m * feature_dim);
    for r in par::chunk_ranges(m, GENERATE_BATCH) {
        let x = generator.generate(&latents[r.start * d..r.end * d])?;
        features.extend(space.extract(&x, r.len(), shape, disc)?);
    }
    if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCandidate(bad / feature_dim.max(1)));
    }
    Ok(CandidatePool { latents, latent_dim: d, features, feature_dim, epoch })
}

/// Index and distance of the nearest candidate for every target.
///
/// `targets` is `n × dim`, `candidates` is `m × dim`. The answer equals an
/// exhaustive scan under the same distance and tie-breaking rule.
pub fn nearest_neighbors(targets: &[f32], candidates: &[f32], dim: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if dim == 0 || !targets.len().is_multiple_of(dim) || !candidates.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!("feature buffers do not divide into rows of {dim}")));
    }
    let m = candidates.len() / dim;
    let n = targets.len() / dim;
    if m == 0 {
        return Err(invalid("empty candidate pool"));
    }
    if let Some(bad) = candidates.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCandidate(bad / dim));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target features".into()));
    }
    let blocks: Vec<Vec<(usize, f64)>> = if dim <= TREE_MAX_DIM {
        let tree = kdtree::KdTree::new(candidates, dim);
        par::map_chunks(n, TARGET_BLOCK, |r| r.map(|t| tree.nearest(&targets[t * dim..(t + 1) * dim])).collect())
    } else {
        let cand_norms: Vec<f64> = candidates.chunks(dim).map(sq_norm).collect();
        par::map_chunks(n, TARGET_BLOCK, |r| block_nearest(&targets[r.start * dim..r.end * dim], candidates, &cand_norms, dim))
    };
    Ok(blocks.into_iter().flatten().unzip())
}

fn sq_norm(a: &[f32]) -> f64 {
    a.iter().map(|&v| v as f64 * v as f64).sum()
}

/// GEMM distances screen the candidates; survivors are re-ranked exactly.
///
/// With `u = 2^-24`, a length-`dim` f32 dot product is off by at most
/// `γ·Σ|a_k b_k| ≤ γ(‖a‖² + ‖b‖²)/2`, `γ = dim·u / (1 − dim·u)`, so the
/// screened distance is within `γ(‖a‖² + ‖b‖²)` of the true one.
fn block_nearest(targets: &[f32], candidates: &[f32], cand_norms: &[f64], dim: usize) -> Vec<(usize, f64)> {
    let b = targets.len() / dim;
    let m = cand_norms.len();
    let mut dots = vec![0.0f32; b * m];
    gemm(b, dim, m, View::rows(targets, dim), View::transposed(candidates, dim), 0.0, &mut dots);
    let u = f64::powi(2.0, -24);
    let gamma = dim as f64 * u / (1.0 - dim as f64 * u) * 1.01 + 1e-12;
    let exact_slack = 1.0 + 4.0 * dim as f64 * f64::EPSILON;
    let mut out = Vec::with_capacity(b);
    let mut keep = Vec::new();
    for t in 0..b {
        let q = &targets[t * dim..(t + 1) * dim];
        let qn = sq_norm(q);
        let row = &dots[t * m..(t + 1) * m];
        let approx = |j: usize| qn + cand_norms[j] - 2.0 * row[j] as f64;
        let margin = |j: usize| gamma * (qn + cand_norms[j]);
        let bound = (0..m).map(|j| approx(j) + margin(j)).fold(f64::INFINITY, f64::min) * exact_slack;
        keep.clear();
        keep.extend((0..m).filter(|&j| approx(j) - margin(j) <= bound));
        let mut best = (usize::MAX, f64::INFINITY);
        for &j in &keep {
            let d = exact_sq_dist(q, &candidates[j * dim..(j + 1) * dim]);
            if d < best.1 {
                best = (j, d);
            }
        }
        out.push(best);
    }
    out
}

/// Match every target (features `n × pool.feature_dim`) to its nearest
/// pool latent.
pub fn match_latents(target_features: &[f32], pool: &CandidatePool, epoch: usize) -> Result<MatchAssignment> {
    if pool.is_empty() {
        return Err(invalid("empty candidate pool"));
    }
    let (pool_index, distance) = nearest_neighbors(target_features, &pool.features, pool.feature_dim)?;
    let latents = pool_index.iter().flat_map(|&i| pool.latent(i).iter().copied()).collect();
    Ok(MatchAssignment { latents, latent_dim: pool.latent_dim, pool_index, distance, epoch })
}

/// `z + sigma·ε` with `ε ~ N(0, I)`. `sigma = 0` returns `z` unchanged
/// without consuming randomness.
pub fn perturb(z: &[f32], sigma: f32, rng: &mut impl Rng) -> Result<Vec<f32>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("perturbation scale {sigma} must be finite and non-negative")));
    }
    if sigma == 0.0 {
        return Ok(z.to_vec());
    }
    Ok(z.iter().map(|&v| v + sigma * rng.sample::<f32, _>(StandardNormal)).collect())
}

/// `alpha·a + (1 − alpha)·b`.
pub fn interpolate(a: &[f32], b: &[f32], alpha: f32) -> Result<Vec<f32>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("interpolation weight {alpha} outside [0, 1]")));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| alpha * x + (1.0 - alpha) * y).collect())
}

/// Whether the assignment is recomputed at the start of `epoch`.
pub fn needs_rematch(epoch: usize, period: usize) -> bool {
    period > 0 && epoch.is_multiple_of(period)
}
