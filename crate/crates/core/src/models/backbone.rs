use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Discriminator, Generator};
use crate::data::DataKind;
use crate::error::{Error, Result};
use crate::nn::{Architecture, LayerSpec, Network, Shape};

const SLOPE: f32 = 0.2;

/// Generator/discriminator pair families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Backbone {
    /// Fully connected nets, mainly for point sets.
    Mlp { hidden: usize, depth: usize },
    /// DCGAN-style: transposed-conv upsampling from 4×4 in G, strided
    /// convs down to 4×4 in D. Needs square inputs of side 4·2^k.
    Dcgan { base: usize },
    Custom { generator: Architecture, discriminator: Architecture },
}

impl Backbone {
    pub fn generator_arch(&self, latent_dim: usize, out: Shape, kind: DataKind) -> Result<Architecture> {
        let input = Shape::flat(latent_dim);
        let mut layers = Vec::new();
        match self {
            Backbone::Mlp { hidden, depth } => {
                for _ in 0..*depth {
                    layers.push(LayerSpec::Dense { units: *hidden });
                    layers.push(LayerSpec::LeakyRelu { slope: SLOPE });
                }
                layers.push(LayerSpec::Dense { units: out.len() });
                if out.h != 1 || out.w != 1 {
                    layers.push(LayerSpec::Reshape { c: out.c, h: out.h, w: out.w });
                }
            }
            Backbone::Dcgan { base } => {
                let blocks = dcgan_blocks(out)?;
                let mut ch = base << (blocks - 1);
                layers.push(LayerSpec::Dense { units: ch * 16 });
                layers.push(LayerSpec::Reshape { c: ch, h: 4, w: 4 });
                layers.push(LayerSpec::LeakyRelu { slope: SLOPE });
                for b in 0..blocks {
                    let last = b + 1 == blocks;
                    let next = if last { out.c } else { ch / 2 };
                    layers.push(LayerSpec::ConvTranspose { channels: next, kernel: 4, stride: 2, padding: 1 });
                    if !last {
                        layers.push(LayerSpec::LeakyRelu { slope: SLOPE });
                    }
                    ch = next;
                }
            }
            Backbone::Custom { generator, .. } => return Ok(generator.clone()),
        }
        if kind == DataKind::Images {
            layers.push(LayerSpec::Tanh);
        }
        Ok(Architecture { input, layers })
    }

    pub fn discriminator_arch(&self, input: Shape) -> Result<Architecture> {
        let mut layers = Vec::new();
        match self {
            Backbone::Mlp { hidden, depth } => {
                if input.h != 1 || input.w != 1 {
                    layers.push(LayerSpec::Reshape { c: input.len(), h: 1, w: 1 });
                }
                for _ in 0..*depth {
                    layers.push(LayerSpec::Dense { units: *hidden });
                    layers.push(LayerSpec::LeakyRelu { slope: SLOPE });
                }
            }
            Backbone::Dcgan { base } => {
                let blocks = dcgan_blocks(input)?;
                let mut ch = *base;
                for _ in 0..blocks {
                    layers.push(LayerSpec::Conv { channels: ch, kernel: 4, stride: 2, padding: 1 });
                    layers.push(LayerSpec::LeakyRelu { slope: SLOPE });
                    ch *= 2;
                }
                layers.push(LayerSpec::Reshape { c: (ch / 2) * 16, h: 1, w: 1 });
            }
            Backbone::Custom { discriminator, .. } => return Ok(discriminator.clone()),
        }
        layers.push(LayerSpec::Dense { units: 1 });
        Ok(Architecture { input, layers })
    }

    /// Freshly initialised generator and discriminator for samples of shape `out`.
    pub fn build(
        &self,
        latent_dim: usize,
        out: Shape,
        kind: DataKind,
        rng: &mut impl Rng,
    ) -> Result<(Generator, Discriminator)> {
        let g = Network::new(self.generator_arch(latent_dim, out, kind)?, rng)?;
        let d = Network::new(self.discriminator_arch(out)?, rng)?;
        if g.output_shape() != out {
            return Err(Error::Shape(format!("generator produces {}, data has {out}", g.output_shape())));
        }
        Ok((Generator::new(g)?, Discriminator::new(d)?))
    }
}

fn dcgan_blocks(s: Shape) -> Result<usize> {
    if s.h != s.w || s.h < 8 || !s.h.is_power_of_two() {
        return Err(Error::Shape(format!("DCGAN backbone needs square power-of-two inputs of side >= 8, got {s}")));
    }
    Ok(s.h.trailing_zeros() as usize - 2)
}
