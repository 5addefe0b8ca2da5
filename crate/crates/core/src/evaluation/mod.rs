//! Coverage metrics: mode counts, precision/recall, retrieval error and the
//! attribute bias study.

mod bias;
mod ivom;
mod modes;
mod prd;

pub use bias::{attribute_variance, average_ranks, bias_correlation, joint_difficulty, per_attribute_ivom, population_std, spearman, AttributeStats};
pub use ivom::{ivom, ivom_batch, IvomResult, IvomSettings};
pub use modes::{count_modes, kl_to_uniform, ModeReport};
pub use prd::{f_beta, kmeans, prd_curve, prd_precision_recall, summarize, PrdSettings, PrecisionRecall, PRD_ANGLES};

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::data::{BankSource, DataKind, Dataset, DatasetRecipe, DigitBank, MinoritySpec};
use crate::error::{invalid, Error, Result};
use crate::models::{ClassifierTraining, FeatureKind, FeatureSpace, Generator, ModeClassifier, PerceptualNet, ValidatedClassifier};
use crate::rng;
use crate::training::TrainState;

const GENERATE_BATCH: usize = 512;
const HELDOUT: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Modes,
    Prd,
    Ivom,
    Bias,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Modes, Metric::Prd, Metric::Ivom, Metric::Bias];
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modes" => Ok(Metric::Modes),
            "prd" => Ok(Metric::Prd),
            "ivom" => Ok(Metric::Ivom),
            "bias" => Ok(Metric::Bias),
            _ => Err(invalid(format!("unknown metric {s:?}"))),
        }
    }
}

/// Which metrics to compute and at what sample sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalPlan {
    pub metrics: Vec<Metric>,
    pub mode_samples: usize,
    pub prd_samples: usize,
    pub ivom_queries: usize,
    /// Restrict retrieval queries to rows matching this attribute conjunction.
    pub ivom_subset: Option<String>,
    /// Space for retrieval error; perceptual for images and pixel for points when unset.
    pub ivom_metric: Option<FeatureKind>,
    pub ivom: IvomSettings,
    pub prd: PrdSettings,
    pub seed: u64,
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Modes, Metric::Prd],
            mode_samples: 10_000,
            prd_samples: 5_000,
            ivom_queries: 1_000,
            ivom_subset: None,
            ivom_metric: None,
            ivom: IvomSettings::default(),
            prd: PrdSettings::default(),
            seed: 0,
        }
    }
}

/// Everything measured for one model. Absent metrics are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<ModeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ivom_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ivom_queries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ivom_per_attribute: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ivom_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_attributes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_correlation: Option<f64>,
}

impl EvalReport {
    /// Flat JSON object: report fields, mode fields at top level, and the
    /// training config under `config.` keys.
    pub fn to_flat_json(&self, state: Option<&TrainState>) -> Value {
        let mut m = Map::new();
        if let Value::Object(fields) = serde_json::to_value(self).expect("report serialises") {
            for (k, v) in fields {
                match (k.as_str(), v) {
                    ("modes", Value::Object(inner)) => m.extend(inner),
                    (_, v) => {
                        m.insert(k, v);
                    }
                }
            }
        }
        if let Some(s) = state {
            m.insert("config_hash".into(), json!(s.config.content_hash()));
            m.insert("param_checksum".into(), json!(s.checksum()));
            m.insert("epoch".into(), json!(s.epoch));
            if let Value::Object(cfg) = serde_json::to_value(&s.config).expect("config serialises") {
                for (k, v) in cfg {
                    m.insert(format!("config.{k}"), v);
                }
            }
        }
        Value::Object(m)
    }
}

/// `n` samples from fixed latents of stream `seed`.
pub fn generate(g: &Generator, n: usize, seed: u64) -> Result<Vec<f32>> {
    let mut r = rng::stream(seed, 0x5a3e);
    let mut out = Vec::with_capacity(n * g.output_shape().len());
    let mut left = n;
    while left > 0 {
        let b = left.min(GENERATE_BATCH);
        out.extend(g.generate(&rng::normal_vec(&mut r, b * g.latent_dim()))?);
        left -= b;
    }
    Ok(out)
}

fn heldout(data: &Dataset) -> Result<Dataset> {
    data.subset(&(0..data.len().min(HELDOUT)).collect::<Vec<_>>())
}

/// Mode classifier for the dataset a recipe produces, validated on that
/// dataset. Stacked digits are classified by a net trained on a digit bank
/// drawn independently of the one behind the data.
pub fn mode_classifier(recipe: &DatasetRecipe, data: &Dataset) -> Result<ValidatedClassifier> {
    match recipe {
        DatasetRecipe::Grid { spec, .. } => ModeClassifier::grid(spec.rows, spec.cols).validate(&heldout(data)?),
        DatasetRecipe::StackedMnist { bank, .. } => {
            let train_bank = match bank {
                BankSource::Rendered { per_class, seed } => DigitBank::render((*per_class).max(500), seed.wrapping_add(0x0c1a)),
                BankSource::Idx { .. } => bank.load()?,
            };
            ModeClassifier::train_stacked_digits(&train_bank, 32, &ClassifierTraining::default(), 0)?.validate(&heldout(data)?)
        }
        DatasetRecipe::Directory { .. } => Err(Error::ExtractorUnavailable("no mode classifier for an unlabelled directory dataset".into())),
    }
}

/// Feature space in which precision/recall is measured: the classifier
/// embedding for images, raw coordinates for points.
fn prd_space(data: &Dataset, classifier: Option<&ValidatedClassifier>) -> Result<FeatureSpace> {
    match (data.kind(), classifier) {
        (DataKind::Points, _) => Ok(FeatureSpace::Pixel),
        (DataKind::Images, Some(c)) => Ok(FeatureSpace::Embedding(c.classifier.embedding()?)),
        (DataKind::Images, None) => Err(Error::ExtractorUnavailable("precision/recall on images needs an embedding network".into())),
    }
}

fn ivom_space(plan: &EvalPlan, state: &TrainState, data: &Dataset, classifier: Option<&ValidatedClassifier>) -> Result<FeatureSpace> {
    let kind = plan.ivom_metric.unwrap_or(match data.kind() {
        DataKind::Points => FeatureKind::Pixel,
        DataKind::Images => FeatureKind::Perceptual,
    });
    match kind {
        FeatureKind::Pixel => Ok(FeatureSpace::Pixel),
        FeatureKind::Discriminator => Ok(FeatureSpace::Discriminator),
        FeatureKind::Perceptual => {
            let mut r = rng::stream(state.config.extractor_seed, 0xfea7);
            Ok(FeatureSpace::Perceptual(PerceptualNet::random(data.shape(), &state.config.perceptual_widths, &mut r)?))
        }
        FeatureKind::Embedding => prd_space(data, classifier),
    }
}

fn features(space: &FeatureSpace, x: &[f32], n: usize, data: &Dataset, state: &TrainState) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    let len = data.shape().len();
    for s in (0..n).step_by(GENERATE_BATCH) {
        let e = (s + GENERATE_BATCH).min(n);
        out.extend(space.extract(&x[s * len..e * len], e - s, data.shape(), Some(&state.discriminator))?);
    }
    Ok(out)
}

/// Evaluate a trained model on the dataset produced by `recipe`.
pub fn evaluate(state: &TrainState, data: &Dataset, recipe: &DatasetRecipe, plan: &EvalPlan) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    let g = &state.generator;
    let needs_classifier = plan.metrics.contains(&Metric::Modes)
        || (data.kind() == DataKind::Images && plan.metrics.contains(&Metric::Prd))
        || (plan.metrics.contains(&Metric::Ivom) && plan.ivom_metric == Some(FeatureKind::Embedding));
    let classifier = if needs_classifier { Some(mode_classifier(recipe, data)?) } else { None };
    if let Some(c) = &classifier {
        report.classifier_accuracy = Some(c.accuracy);
    }
    if plan.metrics.contains(&Metric::Modes) {
        let c = classifier.as_ref().unwrap();
        let k = c.classifier.num_modes();
        let x = generate(g, plan.mode_samples, plan.seed)?;
        report.modes = Some(count_modes(&x, plan.mode_samples, c, k)?);
    }
    if plan.metrics.contains(&Metric::Prd) {
        let space = prd_space(data, classifier.as_ref())?;
        let n = plan.prd_samples.min(data.len());
        let real = data.gather(&rng::permutation(&mut rng::stream(plan.seed, 0x9d), data.len())[..n]);
        let fake = generate(g, n, plan.seed.wrapping_add(1))?;
        let (fr, ff) = (features(&space, &real, n, data, state)?, features(&space, &fake, n, data, state)?);
        let pr = prd_precision_recall(&fr, &ff, fr.len() / n, &plan.prd)?;
        report.precision = Some(pr.precision);
        report.recall = Some(pr.recall);
    }
    let wants_ivom = plan.metrics.contains(&Metric::Ivom) || plan.metrics.contains(&Metric::Bias);
    if wants_ivom {
        let pool: Vec<usize> = match &plan.ivom_subset {
            Some(s) => data.select_minority(&MinoritySpec::parse(s)?)?,
            None => (0..data.len()).collect(),
        };
        let take = plan.ivom_queries.min(pool.len());
        let mut pick = rng::permutation(&mut rng::stream(plan.seed, 0x1f0), pool.len());
        pick.truncate(take);
        pick.sort_unstable();
        let rows: Vec<usize> = pick.iter().map(|&i| pool[i]).collect();
        if rows.is_empty() {
            return Err(invalid("no retrieval queries selected"));
        }
        let space = ivom_space(plan, state, data, classifier.as_ref())?;
        let results = ivom_batch(&data.gather(&rows), rows.len(), g, &space, Some(&state.discriminator), &plan.ivom, None)?;
        let errors: Vec<f64> = results.iter().map(|r| r.error).collect();
        report.ivom_mean = Some(errors.iter().sum::<f64>() / errors.len() as f64);
        report.ivom_queries = Some(errors.len());
        if let Some(table) = data.attributes() {
            let sub = table.subset(&rows);
            let per = per_attribute_ivom(&errors, &sub)?;
            report.ivom_std = Some(population_std(&per.values));
            report.excluded_attributes = per.excluded.clone();
            if plan.metrics.contains(&Metric::Bias) {
                let x = data.gather(&rows);
                let fspace = prd_space(data, classifier.as_ref()).unwrap_or(FeatureSpace::Pixel);
                let f = features(&fspace, &x, rows.len(), data, state)?;
                let var = attribute_variance(&f, f.len() / rows.len(), &sub)?;
                let counts = table.counts();
                let mut cs = Vec::new();
                let mut vs = Vec::new();
                let mut is = Vec::new();
                for (name, iv) in per.names.iter().zip(&per.values) {
                    if let Some(j) = var.names.iter().position(|n| n == name) {
                        cs.push(counts[table.column(name).unwrap()] as f64);
                        vs.push(var.values[j]);
                        is.push(*iv);
                    }
                }
                report.bias_correlation = Some(bias_correlation(&cs, &vs, &is)?);
            }
            report.ivom_per_attribute = Some(per.names.into_iter().zip(per.values).collect());
        } else if plan.metrics.contains(&Metric::Bias) {
            return Err(Error::Attributes("bias study needs an attribute table".into()));
        }
    }
    Ok(report)
}
