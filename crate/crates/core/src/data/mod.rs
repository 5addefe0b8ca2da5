//! Datasets with explicit mode and attribute structure.

mod attributes;
mod digits;
mod grid;
mod io;
mod recipe;
mod stacked;

pub use attributes::{load_attribute_dataset, parse_attribute_csv, AttributeTable, MinoritySpec};
pub use digits::{DigitBank, DIGIT_SIDE};
pub use grid::{grid_centers, make_grid_gaussians, make_grid_gaussians_weighted, nearest_center, GridSpec};
pub use io::{load_dataset, save_dataset};
pub use recipe::{BankSource, DatasetRecipe, RECIPE_FILE};
pub use stacked::{decode_stacked_label, stacked_label, synthesize_stacked_mnist, STACKED_MODES};

use crate::error::{invalid, Error, Result};
use crate::nn::Shape;

/// How sample values are held in memory.
#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    /// Images quantised to 256 levels over [-1, 1]: `v = q / 127.5 - 1`.
    Quantized(Vec<u8>),
    /// Raw values, used for point sets.
    Real(Vec<f32>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Images,
    Points,
}

/// An immutable collection of equally shaped samples, optionally labelled
/// with a mode id and binary attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: Shape,
    len: usize,
    storage: Storage,
    labels: Option<Vec<u32>>,
    attributes: Option<AttributeTable>,
}

pub fn quantize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn dequantize(q: u8) -> f32 {
    q as f32 / 127.5 - 1.0
}

impl Dataset {
    /// Images quantised to 8 bits. Every value must already lie in [-1, 1].
    pub fn from_quantized(shape: Shape, data: Vec<u8>, labels: Option<Vec<u32>>) -> Result<Self> {
        let len = checked_len(shape, data.len())?;
        check_labels(len, labels.as_deref())?;
        Ok(Self { shape, len, storage: Storage::Quantized(data), labels, attributes: None })
    }

    /// Images in [-1, 1], quantised on construction.
    pub fn images(shape: Shape, values: &[f32], labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(invalid(format!("pixel value {v} outside [-1, 1]")));
        }
        Self::from_quantized(shape, values.iter().map(|&v| quantize(v)).collect(), labels)
    }

    /// Unconstrained real-valued samples such as 2-D points.
    pub fn points(shape: Shape, values: Vec<f32>, labels: Option<Vec<u32>>) -> Result<Self> {
        let len = checked_len(shape, values.len())?;
        check_labels(len, labels.as_deref())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(Self { shape, len, storage: Storage::Real(values), labels, attributes: None })
    }

    pub fn with_attributes(mut self, table: AttributeTable) -> Result<Self> {
        if table.rows() != self.len {
            return Err(Error::Attributes(format!(
                "table has {} rows but dataset has {} samples",
                table.rows(),
                self.len
            )));
        }
        self.attributes = Some(table);
        Ok(self)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn kind(&self) -> DataKind {
        match self.storage {
            Storage::Quantized(_) => DataKind::Images,
            Storage::Real(_) => DataKind::Points,
        }
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn attributes(&self) -> Option<&AttributeTable> {
        self.attributes.as_ref()
    }

    pub fn sample_into(&self, i: usize, out: &mut [f32]) {
        let d = self.shape.len();
        match &self.storage {
            Storage::Quantized(q) => {
                for (o, &b) in out.iter_mut().zip(&q[i * d..(i + 1) * d]) {
                    *o = dequantize(b);
                }
            }
            Storage::Real(v) => out.copy_from_slice(&v[i * d..(i + 1) * d]),
        }
    }

    pub fn sample(&self, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.shape.len()];
        self.sample_into(i, &mut v);
        v
    }

    /// Flat batch of the samples at `indices`.
    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        let d = self.shape.len();
        let mut out = vec![0.0; indices.len() * d];
        for (k, &i) in indices.iter().enumerate() {
            self.sample_into(i, &mut out[k * d..(k + 1) * d]);
        }
        out
    }

    /// Every sample as one flat buffer.
    pub fn to_vec(&self) -> Vec<f32> {
        let all: Vec<usize> = (0..self.len).collect();
        self.gather(&all)
    }

    /// New dataset made of the given rows, keeping labels and attributes.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len) {
            return Err(invalid(format!("index {bad} out of range for {} samples", self.len)));
        }
        let d = self.shape.len();
        let storage = match &self.storage {
            Storage::Quantized(q) => {
                Storage::Quantized(indices.iter().flat_map(|&i| q[i * d..(i + 1) * d].iter().copied()).collect())
            }
            Storage::Real(v) => Storage::Real(indices.iter().flat_map(|&i| v[i * d..(i + 1) * d].iter().copied()).collect()),
        };
        Ok(Self {
            shape: self.shape,
            len: indices.len(),
            storage,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            attributes: self.attributes.as_ref().map(|t| t.subset(indices)),
        })
    }

    /// Rows satisfying every conjunct of `spec`, in ascending order.
    pub fn select_minority(&self, spec: &MinoritySpec) -> Result<Vec<usize>> {
        select_minority(self, spec)
    }
}

fn checked_len(shape: Shape, values: usize) -> Result<usize> {
    let d = shape.len();
    if d == 0 || !values.is_multiple_of(d) {
        return Err(Error::Shape(format!("{values} values do not divide into samples of shape {shape}")));
    }
    Ok(values / d)
}

fn check_labels(len: usize, labels: Option<&[u32]>) -> Result<()> {
    match labels {
        Some(l) if l.len() != len => Err(Error::Shape(format!("{} labels for {len} samples", l.len()))),
        _ => Ok(()),
    }
}

/// Indices of all rows matching the conjunction.
///
/// An empty conjunction selects everything. An empty result is an error,
/// since minority training needs at least one target.
pub fn select_minority(dataset: &Dataset, spec: &MinoritySpec) -> Result<Vec<usize>> {
    let table = dataset
        .attributes()
        .ok_or_else(|| Error::Attributes("dataset has no attribute table".into()))?;
    let cols = spec
        .conjuncts
        .iter()
        .map(|(name, want)| {
            table
                .column(name)
                .map(|c| (c, *want))
                .ok_or_else(|| Error::Attributes(format!("unknown attribute {name:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<usize> = (0..table.rows())
        .filter(|&r| cols.iter().all(|&(c, want)| table.get(r, c) == want))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyMinority);
    }
    Ok(rows)
}
