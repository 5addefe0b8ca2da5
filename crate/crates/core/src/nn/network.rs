use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::kernels::{col2im, gemm, im2col, to_channel_major, to_sample_major, ConvGeom, View};
use crate::error::{Error, Result};
use crate::par;

/// Samples per work unit. Fixed so that gradient reductions always happen in
/// the same order.
pub const CHUNK: usize = 32;

/// Per-sample tensor shape, channels first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn flat(len: usize) -> Self {
        Self { c: len, h: 1, w: 1 }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv { channels: usize, kernel: usize, stride: usize, padding: usize },
    ConvTranspose { channels: usize, kernel: usize, stride: usize, padding: usize },
    Reshape { c: usize, h: usize, w: usize },
    LeakyRelu { slope: f32 },
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug)]
enum Op {
    Dense { inp: usize, out: usize },
    Conv { geom: ConvGeom, out_c: usize },
    // `geom` describes the output image seen as the input of the adjoint conv.
    ConvT { geom: ConvGeom, in_c: usize },
    Reshape,
    LeakyRelu(f32),
    Relu,
    Tanh,
}

#[derive(Clone, Debug)]
struct Layer {
    op: Op,
    output: Shape,
    offset: usize,
    size: usize,
}

/// Feed-forward network with all parameters in one flat buffer.
#[derive(Clone, Debug)]
pub struct Network {
    arch: Architecture,
    layers: Vec<Layer>,
    params: Vec<f32>,
}

/// Activations recorded by [`Network::trace`] for a later backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    n: usize,
    end: usize,
    chunks: Vec<ChunkTrace>,
}

#[derive(Clone, Debug)]
struct ChunkTrace {
    n: usize,
    // acts[k] is the input of layer k; acts[end] is the traced output.
    acts: Vec<Vec<f32>>,
    aux: Vec<Vec<f32>>,
}

/// Gradients from [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Grads {
    pub input: Vec<f32>,
    pub params: Option<Vec<f32>>,
}

fn compile(arch: &Architecture) -> Result<(Vec<Layer>, usize)> {
    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut shape = arch.input;
    let mut offset = 0;
    for (i, spec) in arch.layers.iter().enumerate() {
        let bad = |msg: &str| Error::Shape(format!("layer {i} ({spec:?}) on input {shape}: {msg}"));
        let (op, output, size) = match *spec {
            LayerSpec::Dense { units } => {
                let inp = shape.len();
                (Op::Dense { inp, out: units }, Shape::flat(units), units * inp + units)
            }
            LayerSpec::Conv { channels, kernel, stride, padding } => {
                let geom = ConvGeom::new(shape.c, shape.h, shape.w, kernel, stride, padding)
                    .ok_or_else(|| bad("kernel larger than padded input"))?;
                let out = Shape::new(channels, geom.oh, geom.ow);
                (Op::Conv { geom, out_c: channels }, out, channels * geom.rows() + channels)
            }
            LayerSpec::ConvTranspose { channels, kernel, stride, padding } => {
                let oh = ((shape.h - 1) * stride + kernel)
                    .checked_sub(2 * padding)
                    .ok_or_else(|| bad("padding too large"))?;
                let ow = ((shape.w - 1) * stride + kernel)
                    .checked_sub(2 * padding)
                    .ok_or_else(|| bad("padding too large"))?;
                let geom = ConvGeom::new(channels, oh, ow, kernel, stride, padding)
                    .ok_or_else(|| bad("degenerate transposed conv"))?;
                if geom.oh != shape.h || geom.ow != shape.w {
                    return Err(bad("transposed conv geometry is not invertible"));
                }
                let out = Shape::new(channels, oh, ow);
                (Op::ConvT { geom, in_c: shape.c }, out, shape.c * geom.rows() + channels)
            }
            LayerSpec::Reshape { c, h, w } => {
                let out = Shape::new(c, h, w);
                if out.len() != shape.len() {
                    return Err(bad("reshape changes element count"));
                }
                (Op::Reshape, out, 0)
            }
            LayerSpec::LeakyRelu { slope } => (Op::LeakyRelu(slope), shape, 0),
            LayerSpec::Relu => (Op::Relu, shape, 0),
            LayerSpec::Tanh => (Op::Tanh, shape, 0),
        };
        layers.push(Layer { op, output, offset, size });
        offset += size;
        shape = output;
    }
    Ok((layers, offset))
}

impl Network {
    /// Build a network and draw its weights from `rng`.
    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        let (layers, total) = compile(&arch)?;
        let mut params = vec![0.0; total];
        for l in &layers {
            let fan_in = match l.op {
                Op::Dense { inp, .. } => inp,
                Op::Conv { geom, .. } => geom.rows(),
                Op::ConvT { geom, in_c } => (in_c * geom.k * geom.k / (geom.stride * geom.stride)).max(1),
                _ => continue,
            };
            let bias = l.output.c;
            let bound = (3.0 / fan_in as f32).sqrt();
            for p in &mut params[l.offset..l.offset + l.size - bias] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { arch, layers, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f32>) -> Result<Self> {
        let (layers, total) = compile(&arch)?;
        if params.len() != total {
            return Err(Error::Shape(format!(
                "architecture needs {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { arch, layers, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_shape(&self) -> Shape {
        self.arch.input
    }

    pub fn output_shape(&self) -> Shape {
        self.shape_after(self.layers.len())
    }

    /// Shape of the activation after the first `k` layers.
    pub fn shape_after(&self, k: usize) -> Shape {
        if k == 0 {
            self.arch.input
        } else {
            self.layers[k - 1].output
        }
    }

    /// Hex SHA-256 of the parameter bytes.
    pub fn checksum(&self) -> String {
        params_checksum(&self.params)
    }

    fn check_input(&self, x: &[f32], n: usize) -> Result<()> {
        let len = self.arch.input.len();
        if x.len() != n * len {
            return Err(Error::Shape(format!(
                "expected {n} inputs of shape {} ({} values), got {} values",
                self.arch.input,
                n * len,
                x.len()
            )));
        }
        Ok(())
    }

    /// Output of the whole network for `n` samples.
    pub fn forward(&self, x: &[f32], n: usize) -> Result<Vec<f32>> {
        self.forward_to(x, n, self.layers.len())
    }

    /// Activation after the first `end` layers, without recording a trace.
    pub fn forward_to(&self, x: &[f32], n: usize, end: usize) -> Result<Vec<f32>> {
        self.check_input(x, n)?;
        let end = end.min(self.layers.len());
        let in_len = self.arch.input.len();
        let parts = par::map_chunks(n, CHUNK, |r| {
            let mut cur = x[r.start * in_len..r.end * in_len].to_vec();
            for l in &self.layers[..end] {
                cur = self.layer_forward(l, r.len(), &cur).0;
            }
            cur
        });
        Ok(parts.concat())
    }

    /// Forward through the first `end` layers, keeping what backward needs.
    pub fn trace(&self, x: &[f32], n: usize, end: usize) -> Result<Trace> {
        self.check_input(x, n)?;
        let end = end.min(self.layers.len());
        let in_len = self.arch.input.len();
        let chunks = par::map_chunks(n, CHUNK, |r| {
            let cn = r.len();
            let mut acts = Vec::with_capacity(end + 1);
            let mut aux = Vec::with_capacity(end);
            acts.push(x[r.start * in_len..r.end * in_len].to_vec());
            for l in &self.layers[..end] {
                let (y, a) = self.layer_forward(l, cn, acts.last().unwrap());
                acts.push(y);
                aux.push(a);
            }
            ChunkTrace { n: cn, acts, aux }
        });
        Ok(Trace { n, end, chunks })
    }

    /// Backpropagate gradients seeded at one or more activations of a trace.
    ///
    /// Each seed `(k, g)` is the gradient of the loss with respect to the
    /// activation after `k` layers (`k <= trace.end()`), laid out for all `n`
    /// samples. Parameter gradients are summed over chunks in chunk order.
    pub fn backward(&self, trace: &Trace, seeds: &[(usize, &[f32])], want_params: bool) -> Result<Grads> {
        let top = seeds.iter().map(|s| s.0).max().unwrap_or(0);
        if top > trace.end {
            return Err(Error::Shape(format!("seed at layer {top} beyond trace end {}", trace.end)));
        }
        for (k, g) in seeds {
            let len = self.shape_after(*k).len();
            if g.len() != trace.n * len {
                return Err(Error::Shape(format!(
                    "seed at layer {k}: expected {} values, got {}",
                    trace.n * len,
                    g.len()
                )));
            }
        }
        let mut starts = Vec::with_capacity(trace.chunks.len());
        let mut acc = 0;
        for c in &trace.chunks {
            starts.push(acc);
            acc += c.n;
        }
        let per_chunk = par::map_range(trace.chunks.len(), |ci| {
            let chunk = &trace.chunks[ci];
            let s0 = starts[ci];
            let mut dparams = want_params.then(|| vec![0.0f32; self.params.len()]);
            let seed_slice = |k: usize, g: &[f32]| {
                let len = self.shape_after(k).len();
                g[s0 * len..(s0 + chunk.n) * len].to_vec()
            };
            let mut grad: Vec<f32> = vec![0.0; chunk.n * self.shape_after(top).len()];
            for (k, g) in seeds.iter().filter(|s| s.0 == top) {
                add_assign(&mut grad, &seed_slice(*k, g));
            }
            for li in (0..top).rev() {
                let l = &self.layers[li];
                grad = self.layer_backward(
                    l,
                    chunk.n,
                    &chunk.acts[li],
                    &chunk.acts[li + 1],
                    &chunk.aux[li],
                    &grad,
                    dparams.as_deref_mut(),
                );
                for (k, g) in seeds.iter().filter(|s| s.0 == li) {
                    add_assign(&mut grad, &seed_slice(*k, g));
                }
            }
            (grad, dparams)
        });
        let mut input = Vec::with_capacity(trace.n * self.arch.input.len());
        let mut params: Option<Vec<f32>> = None;
        for (g, p) in per_chunk {
            input.extend_from_slice(&g);
            if let Some(p) = p {
                match params.as_mut() {
                    None => params = Some(p),
                    Some(acc) => add_assign(acc, &p),
                }
            }
        }
        if want_params && params.is_none() {
            params = Some(vec![0.0; self.params.len()]);
        }
        Ok(Grads { input, params })
    }

    fn layer_forward(&self, l: &Layer, n: usize, x: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let w = &self.params[l.offset..l.offset + l.size];
        match l.op {
            Op::Dense { inp, out } => {
                let (wm, b) = w.split_at(out * inp);
                let mut y = vec![0.0; n * out];
                gemm(n, inp, out, View::rows(x, inp), View::transposed(wm, inp), 0.0, &mut y);
                for row in y.chunks_exact_mut(out) {
                    add_assign(row, b);
                }
                (y, Vec::new())
            }
            Op::Conv { geom, out_c } => {
                let k = geom.rows();
                let p = geom.positions();
                let width = n * p;
                let (wm, b) = w.split_at(out_c * k);
                let mut cols = vec![0.0; k * width];
                im2col(&geom, n, x, &mut cols);
                let mut ycm = vec![0.0; out_c * width];
                gemm(out_c, k, width, View::rows(wm, k), View::rows(&cols, width), 0.0, &mut ycm);
                for (row, bias) in ycm.chunks_exact_mut(width).zip(b) {
                    row.iter_mut().for_each(|v| *v += bias);
                }
                let mut y = vec![0.0; out_c * width];
                to_sample_major(n, out_c, p, &ycm, &mut y);
                (y, cols)
            }
            Op::ConvT { geom, in_c } => {
                let k = geom.rows();
                let p = geom.positions();
                let width = n * p;
                let (wm, b) = w.split_at(in_c * k);
                let mut xcm = vec![0.0; in_c * width];
                to_channel_major(n, in_c, p, x, &mut xcm);
                let mut cols = vec![0.0; k * width];
                gemm(k, in_c, width, View::transposed(wm, k), View::rows(&xcm, width), 0.0, &mut cols);
                let plane = geom.h * geom.w;
                let mut y = vec![0.0; n * geom.c * plane];
                col2im(&geom, n, &cols, &mut y);
                for s in 0..n {
                    for (ch, bias) in b.iter().enumerate() {
                        let o = (s * geom.c + ch) * plane;
                        y[o..o + plane].iter_mut().for_each(|v| *v += bias);
                    }
                }
                (y, xcm)
            }
            Op::Reshape => (x.to_vec(), Vec::new()),
            Op::LeakyRelu(a) => (x.iter().map(|&v| if v > 0.0 { v } else { a * v }).collect(), Vec::new()),
            Op::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), Vec::new()),
            Op::Tanh => (x.iter().map(|v| v.tanh()).collect(), Vec::new()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        l: &Layer,
        n: usize,
        x: &[f32],
        y: &[f32],
        aux: &[f32],
        dy: &[f32],
        dparams: Option<&mut [f32]>,
    ) -> Vec<f32> {
        let w = &self.params[l.offset..l.offset + l.size];
        match l.op {
            Op::Dense { inp, out } => {
                let wm = &w[..out * inp];
                if let Some(dp) = dparams {
                    let (dw, db) = dp[l.offset..l.offset + l.size].split_at_mut(out * inp);
                    gemm(out, n, inp, View::transposed(dy, out), View::rows(x, inp), 1.0, dw);
                    for row in dy.chunks_exact(out) {
                        add_assign(db, row);
                    }
                }
                let mut dx = vec![0.0; n * inp];
                gemm(n, out, inp, View::rows(dy, out), View::rows(wm, inp), 0.0, &mut dx);
                dx
            }
            Op::Conv { geom, out_c } => {
                let k = geom.rows();
                let p = geom.positions();
                let width = n * p;
                let wm = &w[..out_c * k];
                let mut dycm = vec![0.0; out_c * width];
                to_channel_major(n, out_c, p, dy, &mut dycm);
                if let Some(dp) = dparams {
                    let (dw, db) = dp[l.offset..l.offset + l.size].split_at_mut(out_c * k);
                    gemm(out_c, width, k, View::rows(&dycm, width), View::transposed(aux, width), 1.0, dw);
                    for (bias, row) in db.iter_mut().zip(dycm.chunks_exact(width)) {
                        *bias += row.iter().sum::<f32>();
                    }
                }
                let mut dcols = vec![0.0; k * width];
                gemm(k, out_c, width, View::transposed(wm, k), View::rows(&dycm, width), 0.0, &mut dcols);
                let mut dx = vec![0.0; x.len()];
                col2im(&geom, n, &dcols, &mut dx);
                dx
            }
            Op::ConvT { geom, in_c } => {
                let k = geom.rows();
                let p = geom.positions();
                let width = n * p;
                let wm = &w[..in_c * k];
                let mut dcols = vec![0.0; k * width];
                im2col(&geom, n, dy, &mut dcols);
                if let Some(dp) = dparams {
                    let (dw, db) = dp[l.offset..l.offset + l.size].split_at_mut(in_c * k);
                    gemm(in_c, width, k, View::rows(aux, width), View::transposed(&dcols, width), 1.0, dw);
                    let plane = geom.h * geom.w;
                    for s in 0..n {
                        for (ch, bias) in db.iter_mut().enumerate() {
                            let o = (s * geom.c + ch) * plane;
                            *bias += dy[o..o + plane].iter().sum::<f32>();
                        }
                    }
                }
                let mut dxcm = vec![0.0; in_c * width];
                gemm(in_c, k, width, View::rows(wm, k), View::rows(&dcols, width), 0.0, &mut dxcm);
                let mut dx = vec![0.0; in_c * width];
                to_sample_major(n, in_c, p, &dxcm, &mut dx);
                dx
            }
            Op::Reshape => dy.to_vec(),
            Op::LeakyRelu(a) => x.iter().zip(dy).map(|(&v, &g)| if v > 0.0 { g } else { a * g }).collect(),
            Op::Relu => x.iter().zip(dy).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect(),
            Op::Tanh => y.iter().zip(dy).map(|(&t, &g)| g * (1.0 - t * t)).collect(),
        }
    }
}

impl Trace {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Activation after `k` layers for all samples.
    pub fn activation(&self, k: usize) -> Vec<f32> {
        let mut out = Vec::new();
        for c in &self.chunks {
            out.extend_from_slice(&c.acts[k]);
        }
        out
    }

    pub fn output(&self) -> Vec<f32> {
        self.activation(self.end)
    }
}

pub fn params_checksum(params: &[f32]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub(crate) fn add_assign(acc: &mut [f32], x: &[f32]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}
