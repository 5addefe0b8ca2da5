//! Adversarial, reconstruction and interpolation losses with their
//! generator-side gradients.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{Discriminator, FeatureKind, FeatureSpace, Generator};
use crate::nn::{log_sigmoid, sigmoid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvVariant {
    Minimax,
    #[default]
    NonSaturating,
}

impl std::str::FromStr for AdvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(Self::Minimax),
            "non_saturating" | "non-saturating" => Ok(Self::NonSaturating),
            _ => Err(Error::Config(format!("unknown adversarial variant {s:?}"))),
        }
    }
}

/// Reconstruction weight `lambda` and interpolation weight `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f32,
    pub beta: f32,
}

impl LossWeights {
    pub const ITP_RATIO: f32 = 0.4;

    pub fn new(lambda: f32, beta: f32) -> Result<Self> {
        if !(lambda.is_finite() && beta.is_finite() && lambda >= 0.0 && beta >= 0.0) {
            return Err(invalid(format!("loss weights must be finite and non-negative, got {lambda}, {beta}")));
        }
        Ok(Self { lambda, beta })
    }

    /// `beta = 0.4 * lambda`.
    pub fn from_lambda(lambda: f32) -> Result<Self> {
        Self::new(lambda, Self::ITP_RATIO * lambda)
    }

    pub fn for_feature(kind: FeatureKind) -> Self {
        Self::from_lambda(kind.default_lambda()).unwrap()
    }

    pub fn is_adversarial_only(&self) -> bool {
        self.lambda == 0.0 && self.beta == 0.0
    }
}

/// Values of both adversarial terms and their gradients with respect to
/// the logits.
#[derive(Clone, Debug)]
pub struct AdvTerms {
    /// Generator term, minimised.
    pub generator: f64,
    /// `E log σ(D(x)) + E log(1 − σ(D(G(z))))`, maximised by the discriminator.
    pub discriminator: f64,
    pub disc_real_grad: Vec<f32>,
    pub disc_fake_grad: Vec<f32>,
    pub gen_fake_grad: Vec<f32>,
}

pub fn adv_loss(real_logits: &[f32], fake_logits: &[f32], variant: AdvVariant) -> Result<AdvTerms> {
    if real_logits.is_empty() || fake_logits.is_empty() {
        return Err(invalid("adversarial loss needs non-empty real and fake batches"));
    }
    if real_logits.iter().chain(fake_logits).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("discriminator logits".into()));
    }
    let nr = real_logits.len() as f64;
    let nf = fake_logits.len() as f64;
    let real: f64 = real_logits.iter().map(|&l| log_sigmoid(l as f64)).sum::<f64>() / nr;
    let fake: f64 = fake_logits.iter().map(|&l| log_sigmoid(-(l as f64))).sum::<f64>() / nf;
    let disc_real_grad = real_logits.iter().map(|&l| (sigmoid(-(l as f64)) / nr) as f32).collect();
    let disc_fake_grad = fake_logits.iter().map(|&l| (-sigmoid(l as f64) / nf) as f32).collect();
    let (generator, gen_fake_grad) = match variant {
        AdvVariant::Minimax => (fake, fake_logits.iter().map(|&l| (-sigmoid(l as f64) / nf) as f32).collect()),
        AdvVariant::NonSaturating => (
            -fake_logits.iter().map(|&l| log_sigmoid(l as f64)).sum::<f64>() / nf,
            fake_logits.iter().map(|&l| (-sigmoid(-(l as f64)) / nf) as f32).collect(),
        ),
    };
    Ok(AdvTerms { generator, discriminator: real + fake, disc_real_grad, disc_fake_grad, gen_fake_grad })
}

/// A loss value with its gradient with respect to the generator parameters.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f32>,
}

/// Generator adversarial term for latents `z` and its parameter gradient.
pub fn generator_adv_loss(g: &Generator, d: &Discriminator, z: &[f32], variant: AdvVariant) -> Result<LossGrad> {
    let gt = g.trace(z)?;
    let fake = gt.output();
    let dt = d.trace(&fake)?;
    let logits = dt.output();
    let terms = adv_loss(&[0.0], &logits, variant)?;
    let dx = d.network().backward(&dt, &[(dt.end(), &terms.gen_fake_grad)], false)?.input;
    let grad = g.network().backward(&gt, &[(gt.end(), &dx)], true)?.params.unwrap();
    Ok(LossGrad { value: terms.generator, grad })
}

/// Reconstruction and interpolation inputs for one step, `P` pairs.
#[derive(Clone, Debug)]
pub struct ImleBatch {
    /// Perturbed matched latents of the first and second element of each pair.
    pub z_i: Vec<f32>,
    pub z_j: Vec<f32>,
    /// Target features of the paired samples, `P × feature_dim`.
    pub f_i: Vec<f32>,
    pub f_j: Vec<f32>,
    pub alpha: Vec<f32>,
}

impl ImleBatch {
    pub fn pairs(&self) -> usize {
        self.alpha.len()
    }
}

/// `Σ_r Σ_k w[r,k]·‖F(G(z_r)) − t[r,k]‖²` and its θ-gradient, where each
/// generated row is compared against `k` targets.
fn weighted_feature_loss(
    g: &Generator,
    space: &FeatureSpace,
    disc: Option<&Discriminator>,
    z: &[f32],
    targets: &[f32],
    weights: &[f32],
    k: usize,
) -> Result<(Vec<f64>, Vec<f32>)> {
    let rows = weights.len() / k;
    let gt = g.trace(z)?;
    let x = gt.output();
    let ft = space.trace(&x, rows, g.output_shape(), disc)?;
    let fd = ft.features.len() / rows.max(1);
    if targets.len() != rows * k * fd {
        return Err(Error::Shape(format!("{} target feature values for {rows}×{k} rows of {fd}", targets.len())));
    }
    let mut per_row = vec![0.0f64; rows * k];
    let mut gf = vec![0.0f32; rows * fd];
    for r in 0..rows {
        let f = &ft.features[r * fd..(r + 1) * fd];
        for c in 0..k {
            let w = weights[r * k + c];
            let t = &targets[(r * k + c) * fd..(r * k + c + 1) * fd];
            let mut s = 0.0f64;
            for (q, (&a, &b)) in f.iter().zip(t).enumerate() {
                let diff = a - b;
                s += diff as f64 * diff as f64;
                gf[r * fd + q] += 2.0 * w * diff;
            }
            per_row[r * k + c] = s;
        }
    }
    let dx = space.backward(&ft, &gf, disc)?;
    let grad = g.network().backward(&gt, &[(gt.end(), &dx)], true)?.params.unwrap();
    Ok((per_row, grad))
}

/// Mean over rows of `‖F(G(z_r)) − target_r‖²`.
pub fn rec_loss(
    g: &Generator,
    space: &FeatureSpace,
    disc: Option<&Discriminator>,
    z: &[f32],
    target_features: &[f32],
) -> Result<LossGrad> {
    let rows = z.len() / g.latent_dim();
    if rows == 0 {
        return Err(invalid("reconstruction loss on an empty batch"));
    }
    let w = vec![1.0 / rows as f32; rows];
    let (d, grad) = weighted_feature_loss(g, space, disc, z, target_features, &w, 1)?;
    Ok(LossGrad { value: d.iter().sum::<f64>() / rows as f64, grad })
}

/// Mean over pairs of `α‖F(G(z_α)) − F(x_i)‖² + (1 − α)‖F(G(z_α)) − F(x_j)‖²`
/// with `z_α = α z_i + (1 − α) z_j`.
pub fn itp_loss(
    g: &Generator,
    space: &FeatureSpace,
    disc: Option<&Discriminator>,
    batch: &ImleBatch,
) -> Result<LossGrad> {
    let (z, t, w) = itp_rows(g.latent_dim(), batch)?;
    let p = batch.pairs();
    let (d, grad) = weighted_feature_loss(g, space, disc, &z, &t, &w, 2)?;
    let value = (0..p).map(|r| w[2 * r] as f64 * d[2 * r] + w[2 * r + 1] as f64 * d[2 * r + 1]).sum();
    Ok(LossGrad { value, grad })
}

fn itp_rows(dim: usize, b: &ImleBatch) -> Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
    let p = b.pairs();
    if p == 0 {
        return Err(invalid("interpolation loss on an empty batch"));
    }
    if let Some(a) = b.alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(invalid(format!("interpolation weight {a} outside [0, 1]")));
    }
    let fd = b.f_i.len() / p;
    let mut z = Vec::with_capacity(p * dim);
    let mut t = Vec::with_capacity(2 * p * fd);
    let mut w = Vec::with_capacity(2 * p);
    for r in 0..p {
        let a = b.alpha[r];
        z.extend(crate::matching::interpolate(&b.z_i[r * dim..(r + 1) * dim], &b.z_j[r * dim..(r + 1) * dim], a)?);
        t.extend_from_slice(&b.f_i[r * fd..(r + 1) * fd]);
        t.extend_from_slice(&b.f_j[r * fd..(r + 1) * fd]);
        w.push(a / p as f32);
        w.push((1.0 - a) / p as f32);
    }
    Ok((z, t, w))
}

/// Reconstruction and interpolation values from one generator pass.
#[derive(Clone, Debug)]
pub struct ImleTerms {
    pub rec: f64,
    pub itp: f64,
    /// `lambda·∇rec + beta·∇itp`.
    pub grad: Vec<f32>,
}

/// Both reconstruction terms of `batch`, with the weighted gradient, from a
/// single generator pass over `[z_i; z_j; z_α]`. The reconstruction term is
/// `½(‖F(G(z_i)) − F(x_i)‖² + ‖F(G(z_j)) − F(x_j)‖²)` averaged over pairs.
pub fn imle_terms(
    g: &Generator,
    space: &FeatureSpace,
    disc: Option<&Discriminator>,
    batch: &ImleBatch,
    weights: LossWeights,
) -> Result<ImleTerms> {
    let dim = g.latent_dim();
    let p = batch.pairs();
    let (z_itp, t_itp, w_itp) = itp_rows(dim, batch)?;
    let fd = batch.f_i.len() / p;
    if batch.z_i.len() != p * dim || batch.z_j.len() != p * dim || batch.f_j.len() != p * fd {
        return Err(Error::Shape("pair buffers disagree in length".into()));
    }
    let mut z = Vec::with_capacity(3 * p * dim);
    z.extend_from_slice(&batch.z_i);
    z.extend_from_slice(&batch.z_j);
    z.extend_from_slice(&z_itp);
    let zeros = vec![0.0f32; fd];
    let mut t = Vec::with_capacity(6 * p * fd);
    let mut w = Vec::with_capacity(6 * p);
    let rec_w = weights.lambda / (2 * p) as f32;
    for f in [&batch.f_i, &batch.f_j] {
        for r in 0..p {
            t.extend_from_slice(&f[r * fd..(r + 1) * fd]);
            t.extend_from_slice(&zeros);
            w.extend([rec_w, 0.0]);
        }
    }
    t.extend_from_slice(&t_itp);
    w.extend(w_itp.iter().map(|v| weights.beta * v));
    let (d, grad) = weighted_feature_loss(g, space, disc, &z, &t, &w, 2)?;
    let rec = (0..2 * p).map(|r| d[2 * r]).sum::<f64>() / (2 * p) as f64;
    let itp = (0..p)
        .map(|r| w_itp[2 * r] as f64 * d[4 * p + 2 * r] + w_itp[2 * r + 1] as f64 * d[4 * p + 2 * r + 1])
        .sum();
    Ok(ImleTerms { rec, itp, grad })
}

/// `(adv_G + λ·rec + β·itp, adv_D)`.
pub fn total_objective(adv: &AdvTerms, rec: f64, itp: f64, weights: LossWeights) -> (f64, f64) {
    (adv.generator + weights.lambda as f64 * rec + weights.beta as f64 * itp, adv.discriminator)
}
