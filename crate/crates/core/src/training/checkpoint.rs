//! Versioned binary checkpoints.
//!
//! Layout: `b"IGCK"`, `u32` version, `u64` header length, a JSON header,
//! the f32 sections listed in the header (little endian), and a trailing
//! SHA-256 of all preceding bytes. Floats never pass through decimal text,
//! so a save/load round trip is bit-exact.

use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::matching::MatchAssignment;
use crate::models::{Discriminator, EmbeddingNet, FeatureSpace, Generator, PerceptualNet};
use crate::nn::{Adam, Architecture, Network};
use crate::rng::RngState;

const MAGIC: &[u8; 4] = b"IGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SpaceRecord {
    Pixel,
    Discriminator,
    Embedding { arch: Architecture, layer: usize, per_channel: bool },
    Perceptual { arch: Architecture, taps: Vec<usize> },
}

#[derive(Serialize, Deserialize)]
struct AdamRecord {
    bits: [u32; 4],
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct AssignmentRecord {
    latent_dim: usize,
    pool_index: Vec<usize>,
    distance_bits: Vec<u64>,
    epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    step: u64,
    generator: Architecture,
    discriminator: Architecture,
    space: SpaceRecord,
    opt_g: AdamRecord,
    opt_d: AdamRecord,
    assignment: Option<AssignmentRecord>,
    adv_rng: RngState,
    imle_rng: RngState,
    nonfinite_streak: usize,
    rematch_epochs: Vec<usize>,
    sections: Vec<(String, u64)>,
}

fn adam_record(a: &Adam) -> AdamRecord {
    AdamRecord { bits: [a.lr.to_bits(), a.beta1.to_bits(), a.beta2.to_bits(), a.eps.to_bits()], t: a.t }
}

fn adam_from(r: &AdamRecord, m: Vec<f32>, v: Vec<f32>) -> Adam {
    let [lr, b1, b2, eps] = r.bits.map(f32::from_bits);
    Adam { lr, beta1: b1, beta2: b2, eps, m, v, t: r.t }
}

/// Serialise a training state.
pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let mut sections: Vec<(&str, &[f32])> = vec![
        ("generator", state.generator.network().params()),
        ("discriminator", state.discriminator.network().params()),
        ("opt_g.m", &state.opt_g.m),
        ("opt_g.v", &state.opt_g.v),
        ("opt_d.m", &state.opt_d.m),
        ("opt_d.v", &state.opt_d.v),
    ];
    let space = match &state.space {
        FeatureSpace::Pixel => SpaceRecord::Pixel,
        FeatureSpace::Discriminator => SpaceRecord::Discriminator,
        FeatureSpace::Embedding(e) => {
            sections.push(("extractor", e.net.params()));
            SpaceRecord::Embedding { arch: e.net.architecture().clone(), layer: e.layer, per_channel: e.per_channel }
        }
        FeatureSpace::Perceptual(p) => {
            sections.push(("extractor", p.net.params()));
            sections.push(("extractor.weights", &p.weights));
            SpaceRecord::Perceptual { arch: p.net.architecture().clone(), taps: p.taps.clone() }
        }
    };
    if let Some(a) = &state.assignment {
        sections.push(("assignment", &a.latents));
    }
    let header = Header {
        config: state.config.clone(),
        epoch: state.epoch,
        step: state.step,
        generator: state.generator.network().architecture().clone(),
        discriminator: state.discriminator.network().architecture().clone(),
        space,
        opt_g: adam_record(&state.opt_g),
        opt_d: adam_record(&state.opt_d),
        assignment: state.assignment.as_ref().map(|a| AssignmentRecord {
            latent_dim: a.latent_dim,
            pool_index: a.pool_index.clone(),
            distance_bits: a.distance.iter().map(|d| d.to_bits()).collect(),
            epoch: a.epoch,
        }),
        adv_rng: RngState::capture(&state.adv_rng),
        imle_rng: RngState::capture(&state.imle_rng),
        nonfinite_streak: state.nonfinite_streak,
        rematch_epochs: state.rematch_epochs.clone(),
        sections: sections.iter().map(|(n, s)| (n.to_string(), s.len() as u64)).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, s) in &sections {
        let start = out.len();
        out.resize(start + 4 * s.len(), 0);
        LittleEndian::write_f32_into(s, &mut out[start..]);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Parse a checkpoint; any truncation or corruption is an error.
pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 + 32 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file or truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch: file is truncated or corrupted"));
    }
    let version = LittleEndian::read_u32(&body[4..8]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("version {version} is not supported (expected {CHECKPOINT_VERSION})")));
    }
    let hlen = LittleEndian::read_u64(&body[8..16]) as usize;
    let header: Header = serde_json::from_slice(body.get(16..16 + hlen).ok_or_else(|| bad("header truncated"))?)?;
    let mut pos = 16 + hlen;
    let mut sections = std::collections::HashMap::new();
    for (name, len) in &header.sections {
        let n = *len as usize * 4;
        let raw = body.get(pos..pos + n).ok_or_else(|| bad("section truncated"))?;
        let mut v = vec![0f32; *len as usize];
        LittleEndian::read_f32_into(raw, &mut v);
        sections.insert(name.clone(), v);
        pos += n;
    }
    if pos != body.len() {
        return Err(bad("trailing bytes after sections"));
    }
    let mut take = |name: &str| sections.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing section {name}")));
    let generator = Generator::new(Network::from_params(header.generator, take("generator")?)?)?;
    let discriminator = Discriminator::new(Network::from_params(header.discriminator, take("discriminator")?)?)?;
    let opt_g = adam_from(&header.opt_g, take("opt_g.m")?, take("opt_g.v")?);
    let opt_d = adam_from(&header.opt_d, take("opt_d.m")?, take("opt_d.v")?);
    let space = match header.space {
        SpaceRecord::Pixel => FeatureSpace::Pixel,
        SpaceRecord::Discriminator => FeatureSpace::Discriminator,
        SpaceRecord::Embedding { arch, layer, per_channel } => {
            FeatureSpace::Embedding(EmbeddingNet { net: Network::from_params(arch, take("extractor")?)?, layer, per_channel })
        }
        SpaceRecord::Perceptual { arch, taps } => {
            let net = Network::from_params(arch, take("extractor")?)?;
            FeatureSpace::Perceptual(PerceptualNet::new(net, taps, take("extractor.weights")?)?)
        }
    };
    let assignment = match header.assignment {
        Some(a) => Some(MatchAssignment {
            latents: take("assignment")?,
            latent_dim: a.latent_dim,
            pool_index: a.pool_index,
            distance: a.distance_bits.into_iter().map(f64::from_bits).collect(),
            epoch: a.epoch,
        }),
        None => None,
    };
    if opt_g.m.len() != generator.network().num_params() || opt_d.m.len() != discriminator.network().num_params() {
        return Err(bad("optimizer state does not match the networks"));
    }
    Ok(TrainState {
        config: header.config,
        generator,
        discriminator,
        opt_g,
        opt_d,
        space,
        assignment,
        epoch: header.epoch,
        step: header.step,
        adv_rng: header.adv_rng.restore(),
        imle_rng: header.imle_rng.restore(),
        nonfinite_streak: header.nonfinite_streak,
        rematch_epochs: header.rematch_epochs,
    })
}

/// Write atomically: a temporary sibling is renamed into place.
pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let bytes = encode(state)?;
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState> {
    decode(&std::fs::read(path)?)
}
