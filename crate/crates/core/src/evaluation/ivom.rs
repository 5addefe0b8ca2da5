use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{Discriminator, FeatureSpace, Generator};
use crate::nn::{Adam, CHUNK};
use crate::par;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvomSettings {
    pub steps: usize,
    pub max_lr: f32,
    /// Fraction of steps spent ramping the learning rate up from zero.
    pub ramp_up: f32,
    /// Fraction of steps spent decaying it back to zero.
    pub ramp_down: f32,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for IvomSettings {
    fn default() -> Self {
        Self { steps: 400, max_lr: 0.1, ramp_up: 0.05, ramp_down: 0.25, restarts: 3, seed: 0 }
    }
}

impl IvomSettings {
    /// Learning rate at `step`: linear ramp-up, flat, cosine ramp-down.
    pub fn learning_rate(&self, step: usize) -> f32 {
        if self.steps == 0 {
            return 0.0;
        }
        let t = step as f32 / self.steps as f32;
        let mut r = ((1.0 - t) / self.ramp_down).min(1.0);
        r = 0.5 - 0.5 * (r * std::f32::consts::PI).cos();
        r *= (t / self.ramp_up).min(1.0);
        self.max_lr * r
    }
}

/// Retrieval error of one query and the latent that achieved it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvomResult {
    pub error: f64,
    pub latent: Vec<f32>,
}

/// Minimise the squared feature distance between `G(z)` and each of `n`
/// queries over `z`, keeping the best latent seen over all steps and restarts.
///
/// `init`, when given, holds one starting latent per query for the first
/// restart; later restarts draw from a standard normal.
pub fn ivom_batch(
    queries: &[f32],
    n: usize,
    g: &Generator,
    space: &FeatureSpace,
    disc: Option<&Discriminator>,
    settings: &IvomSettings,
    init: Option<&[f32]>,
) -> Result<Vec<IvomResult>> {
    let shape = g.output_shape();
    let d = g.latent_dim();
    if queries.len() != n * shape.len() {
        return Err(Error::Shape(format!("expected {n} queries of {shape}, got {} values", queries.len())));
    }
    if init.is_some_and(|z| z.len() != n * d) {
        return Err(Error::Shape("initial latents do not match the query count".into()));
    }
    if settings.restarts == 0 {
        return Err(invalid("ivom needs at least one restart"));
    }
    let blocks = par::map_chunks(n, CHUNK, |r| {
        let q = &queries[r.start * shape.len()..r.end * shape.len()];
        let z0 = init.map(|z| &z[r.start * d..r.end * d]);
        optimize_block(q, r.start, r.len(), g, space, disc, settings, z0)
    });
    let mut out = Vec::with_capacity(n);
    for b in blocks {
        out.extend(b?);
    }
    Ok(out)
}

/// Single-query form of [`ivom_batch`].
pub fn ivom(
    query: &[f32],
    g: &Generator,
    space: &FeatureSpace,
    disc: Option<&Discriminator>,
    settings: &IvomSettings,
    init: Option<&[f32]>,
) -> Result<IvomResult> {
    Ok(ivom_batch(query, 1, g, space, disc, settings, init)?.remove(0))
}

#[allow(clippy::too_many_arguments)]
fn optimize_block(
    queries: &[f32],
    first: usize,
    m: usize,
    g: &Generator,
    space: &FeatureSpace,
    disc: Option<&Discriminator>,
    s: &IvomSettings,
    init: Option<&[f32]>,
) -> Result<Vec<IvomResult>> {
    let shape = g.output_shape();
    let d = g.latent_dim();
    let target = space.extract(queries, m, shape, disc)?;
    let fd = target.len() / m;
    let mut best: Vec<Option<(f64, Vec<f32>)>> = vec![None; m];
    for restart in 0..s.restarts {
        let mut z: Vec<f32> = match init {
            Some(z0) if restart == 0 => z0.to_vec(),
            _ => (0..m)
                .flat_map(|i| rng::normal_vec(&mut rng::stream(s.seed, ((first + i) as u64) << 8 | restart as u64), d))
                .collect(),
        };
        let mut adam = Adam::new(m * d, s.max_lr, 0.9, 0.999);
        let mut failed = vec![false; m];
        for step in 0..=s.steps {
            let gt = g.trace(&z)?;
            let ft = space.trace(&gt.output(), m, shape, disc)?;
            let mut grad = vec![0.0f32; target.len()];
            for i in 0..m {
                let (f, t) = (&ft.features[i * fd..(i + 1) * fd], &target[i * fd..(i + 1) * fd]);
                let err: f64 = f.iter().zip(t).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                if failed[i] {
                    continue;
                }
                if !err.is_finite() {
                    failed[i] = true;
                    continue;
                }
                if best[i].as_ref().is_none_or(|b| err < b.0) {
                    best[i] = Some((err, z[i * d..(i + 1) * d].to_vec()));
                }
                for ((gv, a), b) in grad[i * fd..(i + 1) * fd].iter_mut().zip(f).zip(t) {
                    *gv = 2.0 * (a - b);
                }
            }
            if step == s.steps || failed.iter().all(|&f| f) {
                break;
            }
            let dx = space.backward(&ft, &grad, disc)?;
            let mut dz = g.network().backward(&gt, &[(gt.end(), &dx)], false)?.input;
            for i in 0..m {
                let row = &mut dz[i * d..(i + 1) * d];
                if failed[i] || row.iter().any(|v| !v.is_finite()) {
                    failed[i] = true;
                    row.fill(0.0);
                }
            }
            adam.step_with_lr(&mut z, &dz, s.learning_rate(step));
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(i, b)| {
            b.map(|(error, latent)| IvomResult { error, latent })
                .ok_or_else(|| Error::NonFinite(format!("every restart diverged for query {}", first + i)))
        })
        .collect()
}
