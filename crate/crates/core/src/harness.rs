//! Experiment orchestration: train every arm of a spec, evaluate it, and
//! write a manifest plus merged result tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{BankSource, Dataset, DatasetRecipe};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalPlan, EvalReport, IvomSettings, Metric};
use crate::models::FeatureKind;
use crate::training::{Trainer, TrainConfig, TrainState};
use crate::viz;

/// One comparison arm: flat config keys overriding the shared base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    #[serde(default)]
    pub overrides: toml::Table,
}

impl ArmSpec {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), overrides: toml::Table::new() }
    }

    pub fn set(mut self, key: &str, value: impl Into<toml::Value>) -> Self {
        self.overrides.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetRecipe,
    pub config: TrainConfig,
    pub arms: Vec<ArmSpec>,
    #[serde(default)]
    pub eval: EvalPlan,
    /// Model seeds per arm.
    #[serde(default = "one")]
    pub replicates: usize,
    /// First model seed; every (arm, replicate) gets its own seed from here.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Structural checks. Per-arm config problems are reported when that
    /// arm runs, so the other arms still complete.
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() || self.replicates == 0 {
            return Err(Error::Config("an experiment needs at least one arm and one replicate".into()));
        }
        let mut names: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("arm names must be unique".into()));
        }
        if names.iter().any(|n| n.is_empty() || n.contains(['/', '\\'])) {
            return Err(Error::Config("arm names must be non-empty and contain no path separators".into()));
        }
        self.config.validate()
    }

    /// Model seed of an arm in a replicate. Arms share the data seed but
    /// never a model seed.
    pub fn model_seed(&self, arm: usize, replicate: usize) -> u64 {
        self.seed + (replicate * self.arms.len() + arm) as u64
    }

    /// Base config with the arm's overrides and seed applied.
    pub fn arm_config(&self, arm: usize, replicate: usize) -> Result<TrainConfig> {
        let mut table = toml::Table::try_from(&self.config).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in &self.arms[arm].overrides {
            table.insert(k.clone(), v.clone());
        }
        let mut cfg: TrainConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("arm {}: {e}", self.arms[arm].name)))?;
        cfg.seed = self.model_seed(arm, replicate);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmArtifacts {
    pub run_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub arm: String,
    pub replicate: usize,
    pub seed: u64,
    pub status: ArmStatus,
    pub error: Option<String>,
    pub config_hash: Option<String>,
    pub param_checksum: Option<String>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub artifacts: ArmArtifacts,
    pub report: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub arms: Vec<ArmRecord>,
    pub results_csv: PathBuf,
    pub results_table: PathBuf,
    pub wall_seconds: f64,
}

impl Manifest {
    pub fn all_ok(&self) -> bool {
        self.arms.iter().all(|a| a.status == ArmStatus::Ok)
    }

    /// Successful records of one arm, by replicate.
    pub fn arm(&self, name: &str) -> Vec<&ArmRecord> {
        self.arms.iter().filter(|a| a.arm == name && a.status == ArmStatus::Ok).collect()
    }
}

fn train_arm(cfg: &TrainConfig, data: &Dataset, dir: &Path) -> Result<TrainState> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_text())?;
    let mut t = Trainer::new(cfg, data, None)?.with_output(dir)?;
    t.run(|_, _| {})?;
    Ok(t.state)
}

/// Train and evaluate every arm for every replicate under `out`.
///
/// A failing arm is recorded and the remaining arms still run.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("spec.json"), serde_json::to_vec_pretty(spec)?)?;
    spec.dataset.save(&out.join("data"))?;
    let data = spec.dataset.build()?;
    let mut records = Vec::new();
    for replicate in 0..spec.replicates {
        for (a, arm) in spec.arms.iter().enumerate() {
            let dir = out.join("arms").join(&arm.name).join(format!("rep_{replicate}"));
            let mut rec = ArmRecord {
                arm: arm.name.clone(),
                replicate,
                seed: spec.model_seed(a, replicate),
                status: ArmStatus::Failed,
                error: None,
                config_hash: None,
                param_checksum: None,
                train_seconds: 0.0,
                eval_seconds: 0.0,
                artifacts: ArmArtifacts { run_dir: dir.clone(), ..Default::default() },
                report: None,
            };
            let outcome = (|| -> Result<()> {
                let cfg = spec.arm_config(a, replicate)?;
                rec.config_hash = Some(cfg.content_hash());
                let t0 = Instant::now();
                let state = train_arm(&cfg, &data, &dir)?;
                rec.train_seconds = t0.elapsed().as_secs_f64();
                rec.param_checksum = Some(state.checksum());
                rec.artifacts.config = Some(dir.join("config.toml"));
                rec.artifacts.checkpoint = Some(dir.join(format!("checkpoints/epoch_{}.ckpt", state.epoch)));
                rec.artifacts.log = Some(dir.join("logs/train.jsonl"));
                rec.artifacts.samples = Some(dir.join(format!("samples/epoch_{}.png", state.epoch)));
                let t0 = Instant::now();
                let report = evaluate(&state, &data, &spec.dataset, &spec.eval)?;
                rec.eval_seconds = t0.elapsed().as_secs_f64();
                let path = dir.join("report.json");
                std::fs::write(&path, serde_json::to_vec_pretty(&report.to_flat_json(Some(&state)))?)?;
                rec.artifacts.report = Some(path);
                rec.report = Some(report);
                Ok(())
            })();
            match outcome {
                Ok(()) => rec.status = ArmStatus::Ok,
                Err(e) => {
                    log::error!("arm {} replicate {replicate} failed: {e}", arm.name);
                    rec.error = Some(e.to_string());
                }
            }
            log::info!("arm {} replicate {replicate}: {:?} in {:.1}s", arm.name, rec.status, rec.train_seconds + rec.eval_seconds);
            records.push(rec);
        }
    }
    let manifest = Manifest {
        spec: spec.clone(),
        results_csv: out.join("results.csv"),
        results_table: out.join("results.txt"),
        arms: records,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_results(&manifest)?;
    std::fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

const COLUMNS: [&str; 13] = [
    "arm",
    "replicate",
    "seed",
    "status",
    "config_hash",
    "param_checksum",
    "modes_covered",
    "kl_to_uniform",
    "precision",
    "recall",
    "ivom_mean",
    "ivom_std",
    "bias_correlation",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn row(r: &ArmRecord) -> Vec<String> {
    let rep = r.report.as_ref();
    let modes = rep.and_then(|p| p.modes.as_ref());
    let f = |v: Option<f64>| opt(v.map(|x| format!("{x:.6}")));
    vec![
        r.arm.clone(),
        r.replicate.to_string(),
        r.seed.to_string(),
        match r.status {
            ArmStatus::Ok => "ok".into(),
            ArmStatus::Failed => "failed".into(),
        },
        opt(r.config_hash.as_deref().map(|h| h[..12].to_string())),
        opt(r.param_checksum.as_deref().map(|h| h[..12].to_string())),
        opt(modes.map(|m| m.modes_covered)),
        f(modes.map(|m| m.kl_to_uniform)),
        f(rep.and_then(|p| p.precision)),
        f(rep.and_then(|p| p.recall)),
        f(rep.and_then(|p| p.ivom_mean)),
        f(rep.and_then(|p| p.ivom_std)),
        f(rep.and_then(|p| p.bias_correlation)),
    ]
}

/// Merged CSV and an aligned text table. Neither contains wall times, so a
/// rerun of the same spec reproduces both byte for byte.
pub fn write_results(m: &Manifest) -> Result<()> {
    let mut w = csv::Writer::from_path(&m.results_csv)?;
    w.write_record(COLUMNS)?;
    let rows: Vec<Vec<String>> = m.arms.iter().map(row).collect();
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    std::fs::write(&m.results_table, render_table(&COLUMNS.map(String::from), &rows))?;
    Ok(())
}

pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            let _ = write!(s, "{cell:<w$}  ", w = widths[c]);
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ") + "\n");
    for r in rows {
        out += &line(r);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Testbed {
    Grid,
    StackedMnist,
}

/// GAN-only versus IMLE-GAN coverage comparison on a testbed.
pub fn coverage_spec(testbed: Testbed, replicates: usize) -> ExperimentSpec {
    let (name, dataset, config) = match testbed {
        Testbed::Grid => ("coverage_grid", DatasetRecipe::grid(5, 5, 0.05, 10_000, 0), TrainConfig {
            epochs: 30,
            rematch_period: 5,
            lambda: Some(0.3),
            learning_rate: 5e-4,
            ..TrainConfig::default()
        }),
        Testbed::StackedMnist => (
            "coverage_stacked_mnist",
            DatasetRecipe::StackedMnist { n: 60_000, seed: 0, bank: BankSource::Rendered { per_class: 500, seed: 0 } },
            TrainConfig {
                epochs: 10,
                rematch_period: 5,
                pool_multiplier: 1,
                feature: FeatureKind::Embedding,
                width: 8,
                latent_dim: 16,
                ..TrainConfig::default()
            },
        ),
    };
    ExperimentSpec {
        name: name.into(),
        dataset,
        config,
        arms: vec![ArmSpec::new("gan_only").set("lambda", 0.0).set("beta", 0.0), ArmSpec::new("imle_gan")],
        eval: EvalPlan { metrics: vec![Metric::Modes], mode_samples: 10_000, ..Default::default() },
        replicates,
        seed: 100,
    }
}

/// General IMLE-GAN versus the minority-targeted variant on a grid whose
/// two corner modes hold 4% of the data.
pub fn minority_spec(replicates: usize) -> Result<ExperimentSpec> {
    Ok(ExperimentSpec {
        name: "minority_grid".into(),
        dataset: DatasetRecipe::grid_with_minority(5, 5, 0.05, 10_000, 0, &[0, 24], 0.04)?,
        config: TrainConfig { epochs: 30, lambda: Some(1.0), latent_dim: 2, ..TrainConfig::default() },
        arms: vec![ArmSpec::new("imle_gan"), ArmSpec::new("minority").set("minority", "minority=1")],
        eval: EvalPlan {
            metrics: vec![Metric::Modes, Metric::Ivom],
            mode_samples: 10_000,
            ivom_queries: 200,
            ivom_subset: Some("minority=1".into()),
            ivom: IvomSettings::default(),
            ..Default::default()
        },
        replicates,
        seed: 100,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub arm: String,
    pub modes: Vec<usize>,
    pub kl: Vec<f64>,
    pub modes_mean: f64,
    pub kl_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudy {
    pub rows: Vec<CoverageRow>,
    pub table: String,
    pub manifest: Manifest,
}

/// Modes covered and KL to uniform for each arm of a finished coverage run.
pub fn summarize_coverage(manifest: Manifest) -> Result<CoverageStudy> {
    let mut rows = Vec::new();
    for arm in &manifest.spec.arms {
        let recs = manifest.arm(&arm.name);
        let modes: Vec<usize> = recs.iter().filter_map(|r| r.report.as_ref()?.modes.as_ref().map(|m| m.modes_covered)).collect();
        let kl: Vec<f64> = recs.iter().filter_map(|r| r.report.as_ref()?.modes.as_ref().map(|m| m.kl_to_uniform)).collect();
        let n = modes.len().max(1) as f64;
        rows.push(CoverageRow {
            arm: arm.name.clone(),
            modes_mean: modes.iter().sum::<usize>() as f64 / n,
            kl_mean: kl.iter().sum::<f64>() / n,
            modes,
            kl,
        });
    }
    let header = ["arm", "runs", "modes (mean)", "KL (mean)"].map(String::from);
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.arm.clone(), r.modes.len().to_string(), format!("{:.1}", r.modes_mean), format!("{:.4}", r.kl_mean)])
        .collect();
    Ok(CoverageStudy { table: render_table(&header, &cells), rows, manifest })
}

/// Run the coverage comparison on a testbed and tabulate it.
pub fn reproduce_coverage_study(testbed: Testbed, replicates: usize, out: &Path) -> Result<CoverageStudy> {
    let manifest = run_experiment(&coverage_spec(testbed, replicates), out)?;
    if let Some(bad) = manifest.arms.iter().find(|a| a.status == ArmStatus::Failed) {
        return Err(Error::InvalidArgument(format!(
            "arm {} failed: {}",
            bad.arm,
            bad.error.as_deref().unwrap_or("unknown error")
        )));
    }
    let study = summarize_coverage(manifest)?;
    std::fs::write(out.join("coverage.txt"), &study.table)?;
    Ok(study)
}

/// One matched target as reported by [`inspect_matches`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub target: usize,
    pub row: usize,
    pub latent_id: usize,
    pub distance: f64,
    pub image: PathBuf,
}

/// For the first `count` targets: the matched pool latent, its feature
/// distance and a side-by-side PNG of the target and its reconstruction.
/// Uses the checkpoint's assignment, or matches afresh when it has none.
pub fn inspect_matches(state: TrainState, data: &Dataset, count: usize, out: &Path) -> Result<Vec<MatchRecord>> {
    let epoch = state.epoch;
    let mut t = Trainer::from_state(state, data)?;
    if t.state.assignment.is_none() {
        t.rematch(epoch)?;
    }
    let a = t.state.assignment.clone().unwrap();
    let g = &t.state.generator;
    let shape = data.shape();
    std::fs::create_dir_all(out)?;
    let mut records = Vec::new();
    for k in 0..count.min(a.len()) {
        let row = t.targets()[k];
        let target = data.sample(row);
        let recon = g.generate(a.latent(k))?;
        let img = match data.kind() {
            crate::data::DataKind::Images => viz::tile_images(&[target, recon].concat(), shape, 2)?,
            crate::data::DataKind::Points => {
                let extent = target.iter().chain(&recon).fold(1.0f32, |m, v| m.max(v.abs())) * 1.2;
                viz::scatter(&recon, &target, extent, 128)
            }
        };
        let image = out.join(format!("match_{k:05}.png"));
        viz::save_png(&img, &image)?;
        records.push(MatchRecord { target: k, row, latent_id: a.pool_index[k], distance: a.distance[k], image });
    }
    std::fs::write(out.join("matches.json"), serde_json::to_vec_pretty(&records)?)?;
    Ok(records)
}
