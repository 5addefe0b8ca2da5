//! How a dataset was produced, stored next to it as `recipe.json` so
//! evaluation can rebuild the matching mode classifier.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_dataset, make_grid_gaussians_weighted, synthesize_stacked_mnist, Dataset, DigitBank, GridSpec};
use crate::error::{Error, Result};

pub const RECIPE_FILE: &str = "recipe.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BankSource {
    Rendered { per_class: usize, seed: u64 },
    Idx { images: PathBuf, labels: PathBuf },
}

impl BankSource {
    pub fn load(&self) -> Result<DigitBank> {
        match self {
            BankSource::Rendered { per_class, seed } => Ok(DigitBank::render(*per_class, *seed)),
            BankSource::Idx { images, labels } => DigitBank::from_idx(images, labels),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetRecipe {
    Grid {
        #[serde(flatten)]
        spec: GridSpec,
        n: usize,
        seed: u64,
        /// Components flagged by an extra `minority` attribute.
        #[serde(default)]
        minority_modes: Vec<usize>,
    },
    StackedMnist { n: usize, seed: u64, bank: BankSource },
    /// An existing dataset directory, used as is.
    Directory { path: PathBuf },
}

impl DatasetRecipe {
    pub fn grid(rows: usize, cols: usize, std: f32, n: usize, seed: u64) -> Self {
        DatasetRecipe::Grid { spec: GridSpec { rows, cols, std, weights: None }, n, seed, minority_modes: Vec::new() }
    }

    /// A grid where `minority` components together hold `share` of the mass.
    pub fn grid_with_minority(rows: usize, cols: usize, std: f32, n: usize, seed: u64, minority: &[usize], share: f64) -> Result<Self> {
        let k = rows * cols;
        if minority.is_empty() || minority.len() >= k || minority.iter().any(|&m| m >= k) || !(share > 0.0 && share < 1.0) {
            return Err(Error::InvalidArgument("minority modes must be a proper subset of the grid and share in (0, 1)".into()));
        }
        let (inside, outside) = (share / minority.len() as f64, (1.0 - share) / (k - minority.len()) as f64);
        let weights = (0..k).map(|c| if minority.contains(&c) { inside } else { outside }).collect();
        Ok(DatasetRecipe::Grid {
            spec: GridSpec { rows, cols, std, weights: Some(weights) },
            n,
            seed,
            minority_modes: minority.to_vec(),
        })
    }

    pub fn build(&self) -> Result<Dataset> {
        match self {
            DatasetRecipe::Grid { spec, n, seed, minority_modes } => {
                let ds = make_grid_gaussians_weighted(spec, *n, *seed)?;
                if minority_modes.is_empty() {
                    return Ok(ds);
                }
                let flags: Vec<bool> = ds.labels().unwrap().iter().map(|l| minority_modes.contains(&(*l as usize))).collect();
                let table = ds.attributes().unwrap().with_column("minority", &flags)?;
                ds.with_attributes(table)
            }
            DatasetRecipe::StackedMnist { n, seed, bank } => synthesize_stacked_mnist(&bank.load()?, *n, *seed),
            DatasetRecipe::Directory { path } => load_dataset(path),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RECIPE_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// The recipe stored in `dir`, or a plain directory reference when absent.
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(RECIPE_FILE);
        if p.exists() {
            Ok(serde_json::from_slice(&std::fs::read(p)?)?)
        } else {
            Ok(DatasetRecipe::Directory { path: dir.to_path_buf() })
        }
    }
}
