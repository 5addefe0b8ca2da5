//! Mode classifiers: map a sample to a discrete mode id.

use serde::{Deserialize, Serialize};

use super::EmbeddingNet;
use crate::data::{grid_centers, nearest_center, stacked_label, Dataset, DigitBank};
use crate::error::{invalid, Error, Result};
use crate::nn::{argmax, softmax_cross_entropy, Adam, Architecture, LayerSpec, Network, Shape};
use crate::rng;

/// Minimum held-out accuracy before mode counts are trusted.
pub const ACCURACY_GATE: f64 = 0.99;

#[derive(Clone, Debug)]
pub enum ModeClassifier {
    /// Index of the nearest grid center.
    NearestCenter { centers: Vec<[f32; 2]> },
    /// One single-channel digit net applied to each channel; the mode is
    /// the positional number formed by the three digits.
    StackedDigits { net: Network },
    Network { net: Network, modes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTraining {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self { hidden: vec![64, 32], epochs: 8, batch: 64, lr: 1e-3 }
    }
}

/// A classifier together with its measured held-out accuracy.
#[derive(Clone, Debug)]
pub struct ValidatedClassifier {
    pub classifier: ModeClassifier,
    pub accuracy: f64,
}

impl ValidatedClassifier {
    /// Fails unless accuracy reaches [`ACCURACY_GATE`].
    pub fn require_gate(&self) -> Result<&ModeClassifier> {
        if self.accuracy >= ACCURACY_GATE {
            Ok(&self.classifier)
        } else {
            Err(Error::ClassifierGate { accuracy: self.accuracy, required: ACCURACY_GATE })
        }
    }
}

/// Fully connected softmax classifier trained with Adam on cross-entropy.
pub fn train_classifier(
    x: &[f32],
    labels: &[usize],
    input: Shape,
    classes: usize,
    cfg: &ClassifierTraining,
    seed: u64,
) -> Result<Network> {
    let n = labels.len();
    if n == 0 || x.len() != n * input.len() {
        return Err(Error::Shape(format!("{} values for {n} labelled samples of {input}", x.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid(format!("label {bad} out of range for {classes} classes")));
    }
    let mut layers = Vec::new();
    if input.h != 1 || input.w != 1 {
        layers.push(LayerSpec::Reshape { c: input.len(), h: 1, w: 1 });
    }
    for &h in &cfg.hidden {
        layers.push(LayerSpec::Dense { units: h });
        layers.push(LayerSpec::LeakyRelu { slope: 0.2 });
    }
    layers.push(LayerSpec::Dense { units: classes });
    let mut init = rng::stream(seed, 0xc1a5);
    let mut net = Network::new(Architecture { input, layers }, &mut init)?;
    let mut opt = Adam::new(net.num_params(), cfg.lr, 0.9, 0.999);
    let d = input.len();
    let batch = cfg.batch.max(1);
    for _ in 0..cfg.epochs {
        let order = rng::permutation(&mut init, n);
        for idx in order.chunks(batch) {
            let xb: Vec<f32> = idx.iter().flat_map(|&i| x[i * d..(i + 1) * d].iter().copied()).collect();
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let t = net.trace(&xb, idx.len(), net.num_layers())?;
            let (_, g) = softmax_cross_entropy(&t.output(), classes, &yb);
            let grads = net.backward(&t, &[(net.num_layers(), &g)], true)?;
            opt.step(net.params_mut(), grads.params.as_ref().unwrap());
        }
    }
    Ok(net)
}

impl ModeClassifier {
    pub fn grid(rows: usize, cols: usize) -> Self {
        Self::NearestCenter { centers: grid_centers(rows, cols) }
    }

    /// Digit net trained on the bank's images padded to `side`.
    pub fn train_stacked_digits(bank: &DigitBank, side: usize, cfg: &ClassifierTraining, seed: u64) -> Result<Self> {
        bank.check_complete()?;
        let (x, y) = bank.padded_examples(side);
        let net = train_classifier(&x, &y, Shape::new(1, side, side), 10, cfg, seed)?;
        Ok(Self::StackedDigits { net })
    }

    pub fn num_modes(&self) -> usize {
        match self {
            Self::NearestCenter { centers } => centers.len(),
            Self::StackedDigits { .. } => 1000,
            Self::Network { modes, .. } => *modes,
        }
    }

    /// Mode id of each of the `n` samples in `x`.
    pub fn predict(&self, x: &[f32], n: usize) -> Result<Vec<u32>> {
        match self {
            Self::NearestCenter { centers } => {
                if x.len() != 2 * n {
                    return Err(Error::Shape(format!("grid classifier needs 2-D points, got {} values for {n}", x.len())));
                }
                Ok(x.chunks(2).map(|p| nearest_center(centers, [p[0], p[1]]) as u32).collect())
            }
            Self::StackedDigits { net } => {
                let logits = net.forward(x, 3 * n)?;
                Ok(logits
                    .chunks(10)
                    .collect::<Vec<_>>()
                    .chunks(3)
                    .map(|c| stacked_label([argmax(c[0]), argmax(c[1]), argmax(c[2])]))
                    .collect())
            }
            Self::Network { net, modes } => Ok(net.forward(x, n)?.chunks(*modes).map(|r| argmax(r) as u32).collect()),
        }
    }

    /// Fraction of labelled samples classified correctly.
    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        let labels = ds.labels().ok_or_else(|| invalid("accuracy needs a labelled dataset"))?;
        if ds.is_empty() {
            return Err(invalid("accuracy on an empty dataset"));
        }
        let pred = self.predict(&ds.to_vec(), ds.len())?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / ds.len() as f64)
    }

    pub fn validate(self, heldout: &Dataset) -> Result<ValidatedClassifier> {
        let accuracy = self.accuracy(heldout)?;
        Ok(ValidatedClassifier { classifier: self, accuracy })
    }

    /// Penultimate activations as a frozen embedding, when the classifier
    /// is a network.
    pub fn embedding(&self) -> Result<EmbeddingNet> {
        match self {
            Self::NearestCenter { .. } => {
                Err(Error::ExtractorUnavailable("nearest-center classifier has no embedding".into()))
            }
            Self::StackedDigits { net } => Ok(EmbeddingNet { net: net.clone(), layer: net.num_layers() - 1, per_channel: true }),
            Self::Network { net, .. } => Ok(EmbeddingNet { net: net.clone(), layer: net.num_layers() - 1, per_channel: false }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_grid_gaussians, synthesize_stacked_mnist, DigitBank};
    use crate::models::FeatureSpace;

    #[test]
    fn grid_classifier_passes_gate() {
        let ds = make_grid_gaussians(5, 5, 0.05, 2000, 3).unwrap();
        let v = ModeClassifier::grid(5, 5).validate(&ds).unwrap();
        assert!(v.accuracy >= ACCURACY_GATE);
        assert!(v.require_gate().is_ok());
    }

    #[test]
    fn gate_rejects_weak_classifier() {
        let v = ValidatedClassifier { classifier: ModeClassifier::grid(2, 2), accuracy: 0.5 };
        assert!(matches!(v.require_gate(), Err(Error::ClassifierGate { .. })));
    }

    #[test]
    fn stacked_digit_classifier_learns_the_bank() {
        let bank = DigitBank::render(300, 1);
        let clf = ModeClassifier::train_stacked_digits(&bank, 32, &ClassifierTraining::default(), 0).unwrap();
        let held = synthesize_stacked_mnist(&DigitBank::render(40, 2), 500, 4).unwrap();
        let acc = clf.accuracy(&held).unwrap();
        assert!(acc >= ACCURACY_GATE, "accuracy {acc}");
        let emb = FeatureSpace::Embedding(clf.embedding().unwrap());
        assert_eq!(emb.dim(held.shape(), None).unwrap(), 96);
        let x = held.gather(&[0, 1]);
        let a = emb.extract(&x, 2, held.shape(), None).unwrap();
        let b = emb.extract(&x, 2, held.shape(), None).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() <= 1e-5));
    }
}
