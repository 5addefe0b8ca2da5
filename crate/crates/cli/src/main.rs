use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use inclusive_gen::data::{load_dataset, save_dataset, BankSource, DatasetRecipe};
use inclusive_gen::evaluation::{evaluate, EvalPlan, Metric};
use inclusive_gen::harness::{coverage_spec, inspect_matches, minority_spec, run_experiment, summarize_coverage, ExperimentSpec, Testbed};
use inclusive_gen::models::FeatureKind;
use inclusive_gen::training::{load_checkpoint, Trainer, TrainConfig};

#[derive(Parser)]
#[command(name = "inclusive-gen", version, about = "Adversarial training with nearest-neighbour latent matching")]
struct Cli {
    /// Random seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (dataset directory, run directory or report file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config file: training config for `train`, eval plan for `eval`,
    /// experiment spec for `experiment`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize datasets.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        which: EvalWhich,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        sizes: EvalSizes,
    },
    /// Run a multi-arm experiment from a spec file or a preset.
    Experiment {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Model seeds per arm (presets only).
        #[arg(long, default_value_t = 5)]
        replicates: usize,
    },
    /// Show which pool latent each target is matched to.
    InspectMatches {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// RGB images whose channels hold three independent digits (1000 modes).
    SynthStackedMnist {
        #[arg(long)]
        n: usize,
        /// Rendered digits per class when no IDX files are given.
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        /// MNIST-style IDX image file; rendered digits are used when absent.
        #[arg(long, requires = "idx_labels")]
        idx_images: Option<PathBuf>,
        #[arg(long)]
        idx_labels: Option<PathBuf>,
    },
    /// Gaussian mixture on a rows × cols grid.
    SynthGrid {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        std: f32,
        #[arg(long)]
        n: usize,
        /// Components to flag with a `minority` attribute.
        #[arg(long, value_delimiter = ',')]
        minority_modes: Vec<usize>,
        /// Share of the data held by the minority components.
        #[arg(long, default_value_t = 0.04)]
        minority_share: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalWhich {
    Modes,
    Prd,
    Ivom,
    Bias,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    CoverageGrid,
    CoverageStacked,
    MinorityGrid,
}

#[derive(Args)]
struct EvalSizes {
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    /// Space for retrieval error.
    #[arg(long)]
    metric: Option<FeatureKind>,
    /// Restrict retrieval queries to rows matching an attribute conjunction.
    #[arg(long)]
    subset: Option<String>,
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().context("--out is required for this command")
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Data(cmd) => {
            let seed = cli.seed.unwrap_or(0);
            let recipe = match cmd {
                DataCommand::SynthStackedMnist { n, per_class, idx_images, idx_labels } => {
                    let bank = match (idx_images, idx_labels) {
                        (Some(i), Some(l)) => BankSource::Idx { images: i.clone(), labels: l.clone() },
                        _ => BankSource::Rendered { per_class: *per_class, seed },
                    };
                    DatasetRecipe::StackedMnist { n: *n, seed, bank }
                }
                DataCommand::SynthGrid { rows, cols, std, n, minority_modes, minority_share } => {
                    if minority_modes.is_empty() {
                        DatasetRecipe::grid(*rows, *cols, *std, *n, seed)
                    } else {
                        DatasetRecipe::grid_with_minority(*rows, *cols, *std, *n, seed, minority_modes, *minority_share)?
                    }
                }
            };
            let out = require_out(cli)?;
            let ds = recipe.build()?;
            save_dataset(&ds, out)?;
            recipe.save(out)?;
            log::info!("wrote {} samples of shape {} to {}", ds.len(), ds.shape(), out.display());
            Ok(true)
        }
        Command::Train { dataset, resume } => {
            let out = require_out(cli)?;
            let data = load_dataset(dataset)?;
            let mut t = match resume {
                Some(ckpt) => {
                    let state = load_checkpoint(ckpt)?;
                    if cli.seed.is_some_and(|s| s != state.config.seed) {
                        bail!("--seed conflicts with the seed stored in the checkpoint");
                    }
                    Trainer::from_state(state, &data)?
                }
                None => {
                    let mut cfg = match &cli.config {
                        Some(p) => TrainConfig::load(p)?,
                        None => TrainConfig::default(),
                    };
                    if let Some(s) = cli.seed {
                        cfg.seed = s;
                    }
                    std::fs::create_dir_all(out)?;
                    std::fs::write(out.join("config.toml"), cfg.to_text())?;
                    Trainer::new(&cfg, &data, None)?
                }
            }
            .with_output(out)?;
            t.run(|s, l| {
                if s.step % 500 == 0 {
                    log::info!("epoch {} step {} adv_G {:.4} adv_D {:.4} rec {:.4} itp {:.4}", l.epoch, l.step, l.adv_g, l.adv_d, l.rec, l.itp);
                }
            })?;
            println!("trained to epoch {} ({} steps), checksum {}", t.state.epoch, t.state.step, t.state.checksum());
            Ok(true)
        }
        Command::Eval { which, checkpoint, dataset, sizes } => {
            let out = require_out(cli)?;
            let state = load_checkpoint(checkpoint)?;
            let recipe = DatasetRecipe::load(dataset)?;
            let data = load_dataset(dataset)?;
            let mut plan = match &cli.config {
                Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
                None => EvalPlan::default(),
            };
            plan.metrics = match which {
                EvalWhich::Modes => vec![Metric::Modes],
                EvalWhich::Prd => vec![Metric::Prd],
                EvalWhich::Ivom => vec![Metric::Ivom],
                EvalWhich::Bias => vec![Metric::Bias],
                EvalWhich::All => {
                    let mut m = vec![Metric::Modes, Metric::Prd, Metric::Ivom];
                    if data.attributes().is_some() {
                        m.push(Metric::Bias);
                    }
                    m
                }
            };
            if let Some(n) = sizes.samples {
                plan.mode_samples = n;
                plan.prd_samples = n;
            }
            if let Some(q) = sizes.queries {
                plan.ivom_queries = q;
            }
            if sizes.metric.is_some() {
                plan.ivom_metric = sizes.metric;
            }
            if sizes.subset.is_some() {
                plan.ivom_subset = sizes.subset.clone();
            }
            if let Some(s) = cli.seed {
                plan.seed = s;
            }
            let report = evaluate(&state, &data, &recipe, &plan)?;
            let mut json = report.to_flat_json(Some(&state));
            json["plan"] = serde_json::to_value(&plan)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(out, serde_json::to_vec_pretty(&json)?)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(true)
        }
        Command::Experiment { preset, replicates } => {
            let out = require_out(cli)?;
            let mut spec = match (preset, &cli.config) {
                (Some(Preset::CoverageGrid), None) => coverage_spec(Testbed::Grid, *replicates),
                (Some(Preset::CoverageStacked), None) => coverage_spec(Testbed::StackedMnist, *replicates),
                (Some(Preset::MinorityGrid), None) => minority_spec(*replicates)?,
                (None, Some(p)) => ExperimentSpec::load(p)?,
                _ => bail!("give exactly one of --preset or --config"),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let manifest = run_experiment(&spec, out)?;
            print!("{}", std::fs::read_to_string(&manifest.results_table)?);
            if matches!(preset, Some(Preset::CoverageGrid | Preset::CoverageStacked)) && manifest.all_ok() {
                let study = summarize_coverage(manifest.clone())?;
                std::fs::write(out.join("coverage.txt"), &study.table)?;
                print!("\n{}", study.table);
            }
            for bad in manifest.arms.iter().filter(|a| a.error.is_some()) {
                eprintln!("arm {} replicate {} failed: {}", bad.arm, bad.replicate, bad.error.as_deref().unwrap_or(""));
            }
            Ok(manifest.all_ok())
        }
        Command::InspectMatches { checkpoint, dataset, count } => {
            let out = require_out(cli)?;
            let state = load_checkpoint(checkpoint)?;
            let data = load_dataset(dataset)?;
            for r in inspect_matches(state, &data, *count, out)? {
                println!("target {} (row {}): latent {} distance {:.6} -> {}", r.target, r.row, r.latent_id, r.distance, r.image.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
