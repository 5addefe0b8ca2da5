//! Generator and discriminator backbones, feature spaces and mode classifiers.

mod backbone;
mod classifier;
mod features;

pub use backbone::Backbone;
pub use classifier::{train_classifier, ClassifierTraining, ModeClassifier, ValidatedClassifier, ACCURACY_GATE};
pub use features::{EmbeddingNet, FeatureKind, FeatureSpace, FeatureTrace, PerceptualNet};

use crate::error::{Error, Result};
use crate::nn::{Network, Shape, Trace};

/// Deterministic map from latent codes to samples.
#[derive(Clone, Debug)]
pub struct Generator {
    net: Network,
}

impl Generator {
    pub fn new(net: Network) -> Result<Self> {
        let s = net.input_shape();
        if s.h != 1 || s.w != 1 {
            return Err(Error::Shape(format!("generator input must be a flat latent, got {s}")));
        }
        Ok(Self { net })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.input_shape().c
    }

    pub fn output_shape(&self) -> Shape {
        self.net.output_shape()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    fn batch_size(&self, z: &[f32]) -> Result<usize> {
        let d = self.latent_dim();
        if !z.len().is_multiple_of(d) {
            return Err(Error::Shape(format!("latent buffer of {} values is not a multiple of d = {d}", z.len())));
        }
        if let Some(v) = z.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("latent value {v}")));
        }
        Ok(z.len() / d)
    }

    /// Samples for a flat batch of latents (`B × d`).
    pub fn generate(&self, z: &[f32]) -> Result<Vec<f32>> {
        let n = self.batch_size(z)?;
        self.net.forward(z, n)
    }

    pub fn trace(&self, z: &[f32]) -> Result<Trace> {
        let n = self.batch_size(z)?;
        self.net.trace(z, n, self.net.num_layers())
    }
}

/// Real/fake classifier producing one logit per sample.
#[derive(Clone, Debug)]
pub struct Discriminator {
    net: Network,
}

impl Discriminator {
    pub fn new(net: Network) -> Result<Self> {
        if net.output_shape().len() != 1 {
            return Err(Error::Shape(format!("discriminator must output one logit, got {}", net.output_shape())));
        }
        Ok(Self { net })
    }

    pub fn input_shape(&self) -> Shape {
        self.net.input_shape()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    fn batch_size(&self, x: &[f32]) -> Result<usize> {
        let d = self.input_shape().len();
        if !x.len().is_multiple_of(d) {
            return Err(Error::Shape(format!("{} values do not form inputs of shape {}", x.len(), self.input_shape())));
        }
        Ok(x.len() / d)
    }

    pub fn discriminate(&self, x: &[f32]) -> Result<Vec<f32>> {
        let n = self.batch_size(x)?;
        self.net.forward(x, n)
    }

    pub fn trace(&self, x: &[f32]) -> Result<Trace> {
        let n = self.batch_size(x)?;
        self.net.trace(x, n, self.net.num_layers())
    }

    /// Index of the pre-logit activation: the input of the final layer.
    pub fn penultimate(&self) -> usize {
        self.net.num_layers() - 1
    }
}
