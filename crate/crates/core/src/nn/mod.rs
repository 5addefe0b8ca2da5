//! Minimal feed-forward network engine with explicit backpropagation.
//!
//! Networks hold their parameters in a single flat `Vec<f32>`; a batch is a
//! flat slice of `n` samples laid out sample-major. Batches are processed in
//! fixed-size chunks that may run in parallel.

pub(crate) mod kernels;
mod network;
mod optim;

pub use network::{params_checksum, Architecture, Grads, LayerSpec, Network, Shape, Trace, CHUNK};
pub use optim::Adam;

pub(crate) use network::add_assign;

/// `log(sigmoid(x))`, stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean softmax cross-entropy over rows of `logits` and its gradient.
pub fn softmax_cross_entropy(logits: &[f32], classes: usize, labels: &[usize]) -> (f64, Vec<f32>) {
    let n = labels.len();
    let mut grad = vec![0.0f32; logits.len()];
    let mut loss = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let row = &logits[s * classes..(s + 1) * classes];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        loss += z.ln() + max - row[y] as f64;
        for c in 0..classes {
            let p = (row[c] as f64 - max).exp() / z;
            let t = if c == y { 1.0 } else { 0.0 };
            grad[s * classes + c] = ((p - t) / n as f64) as f32;
        }
    }
    (loss / n.max(1) as f64, grad)
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
