//! The joint training loop: adversarial updates on the full dataset plus
//! reconstruction and interpolation on matched latents of a target set.

mod checkpoint;
mod config;

pub use checkpoint::{decode, encode, load as load_checkpoint, save as save_checkpoint, CHECKPOINT_VERSION};
pub use config::{BackboneKind, TrainConfig};

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{select_minority, DataKind, Dataset, DigitBank};
use crate::error::{Error, Result};
use crate::losses::{adv_loss, imle_terms, total_objective, AdvTerms, ImleBatch, LossWeights};
use crate::matching::{build_pool, match_latents, needs_rematch, perturb, sample_pool, MatchAssignment};
use crate::models::{
    ClassifierTraining, Discriminator, FeatureKind, FeatureSpace, Generator, ModeClassifier, PerceptualNet,
};
use crate::nn::{add_assign, Adam};
use crate::rng::{self, StreamRng};
use crate::viz;

const FEATURE_BATCH: usize = 256;
const PREVIEW_SAMPLES: usize = 64;

/// Everything needed to continue a run bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub space: FeatureSpace,
    pub assignment: Option<MatchAssignment>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimisation steps.
    pub step: u64,
    /// Batch order and adversarial latents.
    pub adv_rng: StreamRng,
    /// Pools, perturbations, pair sampling and interpolation weights.
    pub imle_rng: StreamRng,
    pub nonfinite_streak: usize,
    /// Epochs at which the assignment was recomputed.
    pub rematch_epochs: Vec<usize>,
}

impl TrainState {
    /// Hex SHA-256 over generator then discriminator parameters.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.generator.network().params().iter().chain(self.discriminator.network().params()) {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    #[serde(rename = "adv_G")]
    pub adv_g: f64,
    #[serde(rename = "adv_D")]
    pub adv_d: f64,
    pub rec: f64,
    pub itp: f64,
    pub total: f64,
    /// Dataset rows of the real batch shown to the discriminator.
    #[serde(skip)]
    pub real_indices: Vec<usize>,
    /// Dataset rows used as reconstruction targets.
    #[serde(skip)]
    pub target_indices: Vec<usize>,
}

/// Feature space named by the config, with frozen extractors built
/// deterministically from `extractor_seed`.
pub fn build_feature_space(cfg: &TrainConfig, data: &Dataset) -> Result<FeatureSpace> {
    let shape = data.shape();
    match cfg.feature {
        FeatureKind::Pixel => Ok(FeatureSpace::Pixel),
        FeatureKind::Discriminator => Ok(FeatureSpace::Discriminator),
        FeatureKind::Perceptual => {
            let mut r = rng::stream(cfg.extractor_seed, 0xfea7);
            Ok(FeatureSpace::Perceptual(PerceptualNet::random(shape, &cfg.perceptual_widths, &mut r)?))
        }
        FeatureKind::Embedding => {
            if data.kind() != DataKind::Images || shape.h != 32 || shape.w != 32 {
                return Err(Error::ExtractorUnavailable(format!(
                    "no pretrained embedding network for samples of shape {shape}"
                )));
            }
            let bank = DigitBank::render(cfg.embedding_bank_per_class, cfg.extractor_seed);
            let clf = ModeClassifier::train_stacked_digits(&bank, 32, &ClassifierTraining::default(), cfg.extractor_seed)?;
            Ok(FeatureSpace::Embedding(clf.embedding()?))
        }
    }
}

/// Fresh state for `cfg` on `data`.
pub fn init_state(cfg: &TrainConfig, data: &Dataset, space: Option<FeatureSpace>) -> Result<TrainState> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training needs a non-empty dataset".into()));
    }
    let mut init = rng::stream(cfg.seed, 0);
    let (generator, discriminator) = cfg.backbone_for(data.kind()).build(cfg.latent_dim, data.shape(), data.kind(), &mut init)?;
    let space = match space {
        Some(s) => s,
        None => build_feature_space(cfg, data)?,
    };
    space.dim(data.shape(), Some(&discriminator))?;
    let opt_g = Adam::new(generator.network().num_params(), cfg.learning_rate, cfg.b1, cfg.b2);
    let opt_d = Adam::new(discriminator.network().num_params(), cfg.learning_rate, cfg.b1, cfg.b2);
    Ok(TrainState {
        config: cfg.clone(),
        generator,
        discriminator,
        opt_g,
        opt_d,
        space,
        assignment: None,
        epoch: 0,
        step: 0,
        adv_rng: rng::stream(cfg.seed, 1),
        imle_rng: rng::stream(cfg.seed, 2),
        nonfinite_streak: 0,
        rematch_epochs: Vec::new(),
    })
}

/// Drives a [`TrainState`] over a dataset.
pub struct Trainer<'a> {
    pub state: TrainState,
    data: &'a Dataset,
    targets: Vec<usize>,
    minority: bool,
    target_cache: Option<Vec<f32>>,
    weights: LossWeights,
    out: Option<PathBuf>,
    log: Option<BufWriter<File>>,
    probe: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, data: &'a Dataset, space: Option<FeatureSpace>) -> Result<Self> {
        Self::from_state(init_state(cfg, data, space)?, data)
    }

    /// Continue from a restored state. Target features are recomputed, which
    /// is exact because frozen extractors are deterministic.
    pub fn from_state(state: TrainState, data: &'a Dataset) -> Result<Self> {
        let cfg = &state.config;
        cfg.validate()?;
        let spec = cfg.minority_spec()?;
        let (targets, minority) = match &spec {
            Some(s) => (select_minority(data, s)?, true),
            None => ((0..data.len()).collect(), false),
        };
        if let Some(a) = &state.assignment {
            if a.len() != targets.len() {
                return Err(Error::Checkpoint(format!(
                    "assignment covers {} targets but the dataset yields {}",
                    a.len(),
                    targets.len()
                )));
            }
        }
        let weights = cfg.weights()?;
        let mut t = Self { state, data, targets, minority, target_cache: None, weights, out: None, log: None, probe: false };
        if t.imle_active() && matches!(t.state.space, FeatureSpace::Embedding(_) | FeatureSpace::Perceptual(_)) {
            let all: Vec<usize> = (0..t.targets.len()).collect();
            t.target_cache = Some(t.compute_target_features(&all)?);
        }
        Ok(t)
    }

    /// Write checkpoints, previews and the step log under `dir`.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join("logs"))?;
        let f = OpenOptions::new().create(true).append(self.state.step > 0).write(true).truncate(self.state.step == 0).open(dir.join("logs/train.jsonl"))?;
        self.log = Some(BufWriter::new(f));
        self.out = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Rows targeted by reconstruction.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    fn imle_active(&self) -> bool {
        self.probe || !self.weights.is_adversarial_only()
    }

    fn compute_target_features(&self, positions: &[usize]) -> Result<Vec<f32>> {
        let shape = self.data.shape();
        let rows: Vec<usize> = positions.iter().map(|&p| self.targets[p]).collect();
        if let FeatureSpace::Pixel = self.state.space {
            return Ok(self.data.gather(&rows));
        }
        let mut out = Vec::new();
        for chunk in rows.chunks(FEATURE_BATCH) {
            let x = self.data.gather(chunk);
            out.extend(self.state.space.extract(&x, chunk.len(), shape, Some(&self.state.discriminator))?);
        }
        Ok(out)
    }

    fn target_features(&self, positions: &[usize]) -> Result<Vec<f32>> {
        match &self.target_cache {
            Some(cache) => {
                let fd = cache.len() / self.targets.len();
                Ok(positions.iter().flat_map(|&p| cache[p * fd..(p + 1) * fd].iter().copied()).collect())
            }
            None => self.compute_target_features(positions),
        }
    }

    /// Draw a fresh pool and recompute the assignment of every target.
    pub fn rematch(&mut self, epoch: usize) -> Result<()> {
        let s = &mut self.state;
        let m = s.config.pool_multiplier * self.targets.len();
        let latents = sample_pool(&mut s.imle_rng, m, s.config.latent_dim);
        let pool = build_pool(&s.generator, &s.space, Some(&s.discriminator), latents, epoch)?;
        let all: Vec<usize> = (0..self.targets.len()).collect();
        let tf = self.target_features(&all)?;
        let a = match_latents(&tf, &pool, epoch)?;
        log::debug!("rematch at epoch {epoch}: mean distance {:.4}", a.distance.iter().sum::<f64>() / a.len() as f64);
        self.state.assignment = Some(a);
        self.state.rematch_epochs.push(epoch);
        Ok(())
    }

    /// Run until the configured number of epochs (or `max_steps`) is reached,
    /// calling `observer` after every step.
    pub fn run(&mut self, mut observer: impl FnMut(&TrainState, &StepLog)) -> Result<Vec<StepLog>> {
        let cfg = self.state.config.clone();
        if self.state.epoch >= cfg.epochs {
            log::info!("run already finished at epoch {}; nothing to do", self.state.epoch);
            return Ok(Vec::new());
        }
        let n = self.data.len();
        let batch = cfg.batch_size.min(n);
        let mut logs = Vec::new();
        while self.state.epoch < cfg.epochs {
            let epoch = self.state.epoch;
            if self.imle_active() && needs_rematch(epoch, cfg.rematch_period) {
                self.rematch(epoch)?;
            }
            let order = rng::permutation(&mut self.state.adv_rng, n);
            for idx in order.chunks(batch) {
                if cfg.max_steps.is_some_and(|m| self.state.step >= m) {
                    self.flush()?;
                    return Ok(logs);
                }
                let entry = self.step(epoch, idx)?;
                if let Some(w) = &mut self.log {
                    serde_json::to_writer(&mut *w, &entry)?;
                    w.write_all(b"\n")?;
                }
                observer(&self.state, &entry);
                logs.push(entry);
            }
            self.state.epoch += 1;
            let done = self.state.epoch;
            if self.out.is_some() && (done.is_multiple_of(cfg.checkpoint_period()) || done == cfg.epochs) {
                self.write_artifacts(done)?;
            }
        }
        self.flush()?;
        Ok(logs)
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.log {
            w.flush()?;
        }
        Ok(())
    }

    fn write_artifacts(&mut self, epoch: usize) -> Result<()> {
        self.flush()?;
        let dir = self.out.clone().unwrap();
        save_checkpoint(&self.state, &dir.join(format!("checkpoints/epoch_{epoch}.ckpt")))?;
        let img = preview(&self.state.generator, self.data, self.state.config.seed)?;
        viz::save_png(&img, &dir.join(format!("samples/epoch_{epoch}.png")))
    }

    fn imle_batch(&mut self, real: &[usize]) -> Result<Option<(ImleBatch, Vec<usize>)>> {
        let s = &mut self.state;
        let pairs = s.config.pairs();
        let positions: Vec<usize> = if self.minority {
            (0..2 * pairs).map(|_| s.imle_rng.random_range(0..self.targets.len())).collect()
        } else {
            let p = pairs.min(real.len() / 2);
            if p == 0 {
                return Ok(None);
            }
            real[..2 * p].to_vec()
        };
        let p = positions.len() / 2;
        let a = s.assignment.as_ref().expect("assignment exists while reconstruction is active");
        let sigma = s.config.perturb_sigma;
        let mut z_i = Vec::with_capacity(p * a.latent_dim);
        let mut z_j = Vec::with_capacity(p * a.latent_dim);
        for (k, &pos) in positions.iter().enumerate() {
            let z = perturb(a.latent(pos), sigma, &mut s.imle_rng)?;
            if k < p { &mut z_i } else { &mut z_j }.extend(z);
        }
        let alpha: Vec<f32> = (0..p).map(|_| s.imle_rng.random::<f32>()).collect();
        let f_i = self.target_features(&positions[..p])?;
        let f_j = self.target_features(&positions[p..])?;
        let rows = positions.iter().map(|&q| self.targets[q]).collect();
        Ok(Some((ImleBatch { z_i, z_j, f_i, f_j, alpha }, rows)))
    }

    fn step(&mut self, epoch: usize, real_idx: &[usize]) -> Result<StepLog> {
        let cfg = &self.state.config;
        let variant = cfg.adv_variant;
        let z = rng::normal_vec(&mut self.state.adv_rng, real_idx.len() * cfg.latent_dim);
        let imle = if self.imle_active() { self.imle_batch(real_idx)? } else { None };
        let s = &self.state;
        let (g, d) = (&s.generator, &s.discriminator);

        let real = self.data.gather(real_idx);
        let gt = g.trace(&z)?;
        let rt = d.trace(&real)?;
        let ft = d.trace(&gt.output())?;
        let adv = adv_loss(&rt.output(), &ft.output(), variant);
        let (adv, finite_logits) = match adv {
            Ok(a) => (a, true),
            Err(Error::NonFinite(_)) => (nan_terms(), false),
            Err(e) => return Err(e),
        };

        let mut grad_g = vec![0.0f32; g.network().num_params()];
        let mut grad_d = vec![0.0f32; d.network().num_params()];
        let (mut rec, mut itp) = (0.0, 0.0);
        let mut target_rows = Vec::new();
        if finite_logits {
            let neg = |v: &[f32]| v.iter().map(|x| -x).collect::<Vec<f32>>();
            let dr = d.network().backward(&rt, &[(rt.end(), &neg(&adv.disc_real_grad))], true)?;
            let df = d.network().backward(&ft, &[(ft.end(), &neg(&adv.disc_fake_grad))], true)?;
            grad_d.copy_from_slice(dr.params.as_ref().unwrap());
            add_assign(&mut grad_d, df.params.as_ref().unwrap());
            let dx = d.network().backward(&ft, &[(ft.end(), &adv.gen_fake_grad)], false)?.input;
            grad_g = g.network().backward(&gt, &[(gt.end(), &dx)], true)?.params.unwrap();
        }
        if let Some((batch, rows)) = &imle {
            let w = if self.probe && self.weights.is_adversarial_only() { LossWeights::new(0.0, 0.0)? } else { self.weights };
            match imle_terms(g, &s.space, Some(d), batch, w) {
                Ok(t) => {
                    rec = t.rec;
                    itp = t.itp;
                    add_assign(&mut grad_g, &t.grad);
                }
                Err(Error::NonFinite(_)) => (rec, itp) = (f64::NAN, f64::NAN),
                Err(e) => return Err(e),
            }
            target_rows = rows.clone();
        }
        let (total, adv_d) = total_objective(&adv, rec, itp, self.weights);
        let entry = StepLog {
            epoch,
            step: self.state.step,
            adv_g: adv.generator,
            adv_d,
            rec,
            itp,
            total,
            real_indices: real_idx.to_vec(),
            target_indices: target_rows,
        };

        let finite = [entry.adv_g, entry.adv_d, rec, itp, total].iter().all(|v| v.is_finite())
            && grad_g.iter().chain(&grad_d).all(|v| v.is_finite());
        let s = &mut self.state;
        if finite {
            s.nonfinite_streak = 0;
            s.opt_d.step(s.discriminator.network_mut().params_mut(), &grad_d);
            s.opt_g.step(s.generator.network_mut().params_mut(), &grad_g);
        } else {
            s.nonfinite_streak += 1;
            log::warn!("non-finite loss at epoch {epoch}, step {}; update skipped", s.step);
            if s.nonfinite_streak >= s.config.divergence_patience {
                return Err(Error::Diverged(format!(
                    "losses non-finite for {} consecutive steps (epoch {epoch}, step {}): adv_G={} adv_D={} rec={} itp={}",
                    s.nonfinite_streak, s.step, entry.adv_g, entry.adv_d, rec, itp
                )));
            }
        }
        s.step += 1;
        Ok(entry)
    }
}

fn nan_terms() -> AdvTerms {
    AdvTerms {
        generator: f64::NAN,
        discriminator: f64::NAN,
        disc_real_grad: Vec::new(),
        disc_fake_grad: Vec::new(),
        gen_fake_grad: Vec::new(),
    }
}

/// An 8×8 grid of samples from fixed latents, or a scatter plot for points.
pub fn preview(g: &Generator, data: &Dataset, seed: u64) -> Result<image::RgbImage> {
    let mut r = rng::stream(seed, 3);
    match data.kind() {
        DataKind::Images => {
            let x = g.generate(&rng::normal_vec(&mut r, PREVIEW_SAMPLES * g.latent_dim()))?;
            viz::tile_images(&x, g.output_shape(), 8)
        }
        DataKind::Points => {
            let x = g.generate(&rng::normal_vec(&mut r, 2048 * g.latent_dim()))?;
            let reference: Vec<usize> = (0..data.len().min(2000)).collect();
            let refs = data.gather(&reference);
            let extent = refs.iter().fold(1.0f32, |m, v| m.max(v.abs())) * 1.2;
            Ok(viz::scatter(&x, &refs, extent, 256))
        }
    }
}

/// Train from scratch, writing artifacts under `out` when given.
pub fn train(cfg: &TrainConfig, data: &Dataset, out: Option<&Path>) -> Result<TrainState> {
    let mut t = Trainer::new(cfg, data, None)?;
    if let Some(dir) = out {
        t = t.with_output(dir)?;
    }
    t.run(|_, _| {})?;
    Ok(t.state)
}

/// Continue a run from a checkpoint.
pub fn resume(ckpt: &Path, data: &Dataset, out: Option<&Path>) -> Result<TrainState> {
    let state = load_checkpoint(ckpt)?;
    let mut t = Trainer::from_state(state, data)?;
    if let Some(dir) = out {
        t = t.with_output(dir)?;
    }
    t.run(|_, _| {})?;
    Ok(t.state)
}

/// Reconstruction weight that makes the reconstruction term about as large
/// as the adversarial generator term, estimated from a short probe run.
pub fn calibrate_lambda(cfg: &TrainConfig, data: &Dataset, space: Option<FeatureSpace>, steps: u64) -> Result<f32> {
    let mut probe = cfg.clone();
    probe.lambda = Some(0.0);
    probe.beta = Some(0.0);
    probe.max_steps = Some(steps);
    probe.epochs = probe.epochs.max(steps as usize);
    let mut t = Trainer::new(&probe, data, space)?;
    t.probe = true;
    let logs = t.run(|_, _| {})?;
    let k = logs.len().max(1) as f64;
    let adv = logs.iter().map(|l| l.adv_g.abs()).sum::<f64>() / k;
    let rec = logs.iter().map(|l| l.rec).sum::<f64>() / k;
    if !(rec > 0.0 && adv.is_finite()) {
        return Err(Error::InvalidArgument("probe run produced no usable reconstruction loss".into()));
    }
    Ok((adv / rec) as f32)
}
