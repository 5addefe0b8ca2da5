//! Feature spaces in which reconstruction distances are measured.
//!
//! Every space maps a sample to a flat vector; the distance between two
//! samples is the squared Euclidean distance between their vectors.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Discriminator;
use crate::error::{Error, Result};
use crate::nn::{Architecture, LayerSpec, Network, Shape, Trace};

const NORM_EPS: f32 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Pixel,
    Discriminator,
    Embedding,
    Perceptual,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [Self::Pixel, Self::Discriminator, Self::Embedding, Self::Perceptual];

    /// Reconstruction weight λ calibrated so the reconstruction term is about
    /// as large as the adversarial term at full scale.
    pub fn default_lambda(self) -> f32 {
        match self {
            Self::Pixel => 36.0,
            Self::Discriminator => 9.6e6,
            Self::Embedding => 10.0,
            Self::Perceptual => 2.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Pixel => "pixel",
            Self::Discriminator => "discriminator",
            Self::Embedding => "embedding",
            Self::Perceptual => "perceptual",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pixel" => Ok(Self::Pixel),
            "discriminator" | "disc" => Ok(Self::Discriminator),
            "embedding" | "inception" => Ok(Self::Embedding),
            "perceptual" | "lpips" => Ok(Self::Perceptual),
            other => Err(Error::Config(format!("unknown feature space {other:?}"))),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Frozen classifier activations. With `per_channel`, every input channel is
/// embedded separately by a single-channel network and the results are
/// concatenated.
#[derive(Clone, Debug)]
pub struct EmbeddingNet {
    pub net: Network,
    pub layer: usize,
    pub per_channel: bool,
}

/// Frozen multi-layer network whose activations, unit-normalised across
/// channels at every position and scaled by `sqrt(weight / positions)`, give
/// features whose squared distance is a layer-weighted perceptual distance.
#[derive(Clone, Debug)]
pub struct PerceptualNet {
    pub net: Network,
    pub taps: Vec<usize>,
    pub weights: Vec<f32>,
}

#[derive(Clone, Debug)]
pub enum FeatureSpace {
    Pixel,
    /// Pre-logit activations of whatever discriminator is passed in.
    Discriminator,
    Embedding(EmbeddingNet),
    Perceptual(PerceptualNet),
}

/// Recorded forward pass for [`FeatureSpace::backward`].
#[derive(Clone, Debug)]
pub struct FeatureTrace {
    pub features: Vec<f32>,
    n: usize,
    inner: Inner,
}

#[derive(Clone, Debug)]
enum Inner {
    Identity,
    Net(Trace, usize),
    Perceptual(Trace),
}

impl EmbeddingNet {
    fn split(&self, input: Shape, n: usize) -> Result<usize> {
        let s = self.net.input_shape();
        if self.per_channel {
            if s != Shape::new(1, input.h, input.w) {
                return Err(Error::Shape(format!("per-channel embedding expects 1x{}x{}, net takes {s}", input.h, input.w)));
            }
            Ok(n * input.c)
        } else {
            if s != input {
                return Err(Error::Shape(format!("embedding net takes {s}, samples are {input}")));
            }
            Ok(n)
        }
    }
}

impl PerceptualNet {
    /// Randomly initialised frozen net: strided 4×4 convs for images,
    /// dense layers for flat inputs, each followed by a tapped LeakyReLU.
    pub fn random(input: Shape, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut taps = Vec::new();
        for &w in widths {
            if input.h > 1 || input.w > 1 {
                layers.push(LayerSpec::Conv { channels: w, kernel: 4, stride: 2, padding: 1 });
            } else {
                layers.push(LayerSpec::Dense { units: w });
            }
            layers.push(LayerSpec::LeakyRelu { slope: 0.2 });
            taps.push(layers.len());
        }
        let net = Network::new(Architecture { input, layers }, rng)?;
        let weights = vec![1.0 / widths.len().max(1) as f32; widths.len()];
        Self::new(net, taps, weights)
    }

    pub fn new(net: Network, taps: Vec<usize>, weights: Vec<f32>) -> Result<Self> {
        if taps.is_empty() || taps.len() != weights.len() {
            return Err(Error::InvalidArgument("perceptual net needs one weight per tap".into()));
        }
        if taps.iter().any(|&t| t == 0 || t > net.num_layers()) {
            return Err(Error::InvalidArgument("perceptual tap out of range".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("perceptual weights must be non-negative".into()));
        }
        Ok(Self { net, taps, weights })
    }

    fn dim(&self) -> usize {
        self.taps.iter().map(|&t| self.net.shape_after(t).len()).sum()
    }

    fn normalize(&self, trace: &Trace) -> Vec<f32> {
        let n = trace.len();
        let dim = self.dim();
        let mut out = vec![0.0; n * dim];
        let mut off = 0;
        for (&tap, &w) in self.taps.iter().zip(&self.weights) {
            let s = self.net.shape_after(tap);
            let (c, hw) = (s.c, s.h * s.w);
            let scale = (w / hw as f32).sqrt();
            let act = trace.activation(tap);
            for i in 0..n {
                let a = &act[i * c * hw..(i + 1) * c * hw];
                let o = &mut out[i * dim + off..i * dim + off + c * hw];
                for p in 0..hw {
                    let norm = (0..c).map(|ch| a[ch * hw + p] * a[ch * hw + p]).sum::<f32>().sqrt();
                    let inv = scale / (norm + NORM_EPS);
                    for ch in 0..c {
                        o[ch * hw + p] = a[ch * hw + p] * inv;
                    }
                }
            }
            off += c * hw;
        }
        out
    }

    fn backward(&self, trace: &Trace, grad: &[f32]) -> Result<Vec<f32>> {
        let n = trace.len();
        let dim = self.dim();
        let mut seeds = Vec::with_capacity(self.taps.len());
        let mut off = 0;
        for (&tap, &w) in self.taps.iter().zip(&self.weights) {
            let s = self.net.shape_after(tap);
            let (c, hw) = (s.c, s.h * s.w);
            let scale = (w / hw as f32).sqrt();
            let act = trace.activation(tap);
            let mut ga = vec![0.0f32; n * c * hw];
            for i in 0..n {
                let a = &act[i * c * hw..(i + 1) * c * hw];
                let gu = &grad[i * dim + off..i * dim + off + c * hw];
                let g = &mut ga[i * c * hw..(i + 1) * c * hw];
                for p in 0..hw {
                    let norm = (0..c).map(|ch| a[ch * hw + p] * a[ch * hw + p]).sum::<f32>().sqrt();
                    let s_ = norm + NORM_EPS;
                    let dot: f32 = (0..c).map(|ch| a[ch * hw + p] * gu[ch * hw + p]).sum();
                    let radial = if norm > 0.0 { dot / (norm * s_ * s_) } else { 0.0 };
                    for ch in 0..c {
                        g[ch * hw + p] = scale * (gu[ch * hw + p] / s_ - a[ch * hw + p] * radial);
                    }
                }
            }
            seeds.push((tap, ga));
            off += c * hw;
        }
        let seed_refs: Vec<(usize, &[f32])> = seeds.iter().map(|(t, g)| (*t, g.as_slice())).collect();
        Ok(self.net.backward(trace, &seed_refs, false)?.input)
    }
}

impl FeatureSpace {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Self::Pixel => FeatureKind::Pixel,
            Self::Discriminator => FeatureKind::Discriminator,
            Self::Embedding(_) => FeatureKind::Embedding,
            Self::Perceptual(_) => FeatureKind::Perceptual,
        }
    }

    /// Whether features depend only on the input (not on training state).
    pub fn is_frozen(&self) -> bool {
        !matches!(self, Self::Discriminator)
    }

    fn need_disc<'a>(&self, disc: Option<&'a Discriminator>) -> Result<&'a Discriminator> {
        disc.ok_or_else(|| Error::ExtractorUnavailable("discriminator features requested without a discriminator".into()))
    }

    /// Feature dimension for samples of shape `input`.
    pub fn dim(&self, input: Shape, disc: Option<&Discriminator>) -> Result<usize> {
        Ok(match self {
            Self::Pixel => input.len(),
            Self::Discriminator => {
                let d = self.need_disc(disc)?;
                d.network().shape_after(d.penultimate()).len()
            }
            Self::Embedding(e) => {
                let per = e.net.shape_after(e.layer).len();
                if e.per_channel {
                    per * input.c
                } else {
                    per
                }
            }
            Self::Perceptual(p) => p.dim(),
        })
    }

    /// Features for `n` samples of shape `input`, flat `n × dim`.
    pub fn extract(&self, x: &[f32], n: usize, input: Shape, disc: Option<&Discriminator>) -> Result<Vec<f32>> {
        check_len(x, n, input)?;
        match self {
            Self::Pixel => Ok(x.to_vec()),
            Self::Discriminator => {
                let d = self.need_disc(disc)?;
                if d.input_shape() != input {
                    return Err(Error::Shape(format!("discriminator takes {}, samples are {input}", d.input_shape())));
                }
                d.network().forward_to(x, n, d.penultimate())
            }
            Self::Embedding(e) => {
                let rows = e.split(input, n)?;
                e.net.forward_to(x, rows, e.layer)
            }
            Self::Perceptual(p) => {
                if p.net.input_shape() != input {
                    return Err(Error::Shape(format!("perceptual net takes {}, samples are {input}", p.net.input_shape())));
                }
                let end = *p.taps.iter().max().unwrap();
                let t = p.net.trace(x, n, end)?;
                Ok(p.normalize(&t))
            }
        }
    }

    pub fn trace(&self, x: &[f32], n: usize, input: Shape, disc: Option<&Discriminator>) -> Result<FeatureTrace> {
        check_len(x, n, input)?;
        let (features, inner) = match self {
            Self::Pixel => (x.to_vec(), Inner::Identity),
            Self::Discriminator => {
                let d = self.need_disc(disc)?;
                let t = d.network().trace(x, n, d.penultimate())?;
                (t.output(), Inner::Net(t, d.penultimate()))
            }
            Self::Embedding(e) => {
                let rows = e.split(input, n)?;
                let t = e.net.trace(x, rows, e.layer)?;
                (t.output(), Inner::Net(t, e.layer))
            }
            Self::Perceptual(p) => {
                let end = *p.taps.iter().max().unwrap();
                let t = p.net.trace(x, n, end)?;
                (p.normalize(&t), Inner::Perceptual(t))
            }
        };
        Ok(FeatureTrace { features, n, inner })
    }

    /// Gradient with respect to the samples given the gradient with respect
    /// to their features. Never produces parameter gradients.
    pub fn backward(&self, trace: &FeatureTrace, grad: &[f32], disc: Option<&Discriminator>) -> Result<Vec<f32>> {
        if grad.len() != trace.features.len() {
            return Err(Error::Shape(format!("feature gradient has {} values, expected {}", grad.len(), trace.features.len())));
        }
        match (&trace.inner, self) {
            (Inner::Identity, _) => Ok(grad.to_vec()),
            (Inner::Net(t, layer), Self::Discriminator) => Ok(self.need_disc(disc)?.network().backward(t, &[(*layer, grad)], false)?.input),
            (Inner::Net(t, layer), Self::Embedding(e)) => Ok(e.net.backward(t, &[(*layer, grad)], false)?.input),
            (Inner::Perceptual(t), Self::Perceptual(p)) => p.backward(t, grad),
            _ => Err(Error::InvalidArgument("feature trace was recorded by a different space".into())),
        }
    }
}

impl FeatureTrace {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

fn check_len(x: &[f32], n: usize, input: Shape) -> Result<()> {
    if x.len() != n * input.len() {
        return Err(Error::Shape(format!("expected {n} samples of {input}, got {} values", x.len())));
    }
    Ok(())
}
