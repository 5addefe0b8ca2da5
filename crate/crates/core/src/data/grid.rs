//! Gaussian mixture on a regular 2-D grid: countable modes at desk scale.

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AttributeTable, Dataset};
use crate::error::{invalid, Result};
use crate::nn::Shape;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub std: f32,
    /// Relative mixture weights per component; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

/// Component centers on a unit-spaced grid centred at the origin;
/// component `r * cols + c` sits at column `c`, row `r`.
pub fn grid_centers(rows: usize, cols: usize) -> Vec<[f32; 2]> {
    let ox = (cols as f32 - 1.0) / 2.0;
    let oy = (rows as f32 - 1.0) / 2.0;
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| [c as f32 - ox, r as f32 - oy]))
        .collect()
}

/// Index of the closest center; ties go to the lower index.
pub fn nearest_center(centers: &[[f32; 2]], p: [f32; 2]) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// `n` points drawn uniformly over the `rows`×`cols` components.
pub fn make_grid_gaussians(rows: usize, cols: usize, std: f32, n: usize, seed: u64) -> Result<Dataset> {
    make_grid_gaussians_weighted(&GridSpec { rows, cols, std, weights: None }, n, seed)
}

/// Like [`make_grid_gaussians`] with optional per-component weights.
///
/// The dataset carries `row_r` and `col_c` attribute flags.
pub fn make_grid_gaussians_weighted(spec: &GridSpec, n: usize, seed: u64) -> Result<Dataset> {
    let GridSpec { rows, cols, std, .. } = *spec;
    if rows == 0 || cols == 0 {
        return Err(invalid("grid needs at least one row and one column"));
    }
    if !(std >= 0.0 && std.is_finite()) {
        return Err(invalid(format!("std must be non-negative, got {std}")));
    }
    let k = rows * cols;
    let weights = match &spec.weights {
        Some(w) if w.len() != k => return Err(invalid(format!("{} weights for {k} components", w.len()))),
        Some(w) => w.clone(),
        None => vec![1.0; k],
    };
    let pick = WeightedIndex::new(&weights).map_err(|e| invalid(format!("mixture weights: {e}")))?;
    let centers = grid_centers(rows, cols);
    let mut r = rng::stream(seed, 0x971d);
    let mut values = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let comp = if k == 1 { 0 } else { pick.sample(&mut r) };
        let c = centers[comp];
        let dx: f32 = r.sample(StandardNormal);
        let dy: f32 = r.sample(StandardNormal);
        values.push(c[0] + std * dx);
        values.push(c[1] + std * dy);
        labels.push(comp as u32);
    }
    let mut names: Vec<String> = (0..rows).map(|i| format!("row_{i}")).collect();
    names.extend((0..cols).map(|i| format!("col_{i}")));
    let flags = labels
        .iter()
        .map(|&l| {
            let (lr, lc) = (l as usize / cols, l as usize % cols);
            let mut row = vec![false; rows + cols];
            row[lr] = true;
            row[rows + lc] = true;
            row
        })
        .collect();
    Dataset::points(Shape::flat(2), values, Some(labels))?.with_attributes(AttributeTable::new(names, flags)?)
}
