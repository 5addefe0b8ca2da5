use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Shape;

/// N×A binary flags with named columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeTable {
    names: Vec<String>,
    rows: usize,
    flags: Vec<bool>,
}

impl AttributeTable {
    pub fn new(names: Vec<String>, rows: Vec<Vec<bool>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Attributes(format!("duplicate attribute name {n:?}")));
            }
        }
        let a = names.len();
        let mut flags = Vec::with_capacity(rows.len() * a);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != a {
                return Err(Error::Attributes(format!("row {i} has {} values, expected {a}", r.len())));
            }
            flags.extend_from_slice(r);
        }
        Ok(Self { names, rows: rows.len(), flags })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_attributes(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.flags[row * self.names.len() + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        let a = self.names.len();
        &self.flags[row * a..(row + 1) * a]
    }

    /// Rows with the attribute set.
    pub fn positives(&self, col: usize) -> Vec<usize> {
        (0..self.rows).filter(|&r| self.get(r, col)).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        (0..self.names.len()).map(|c| self.positives(c).len()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let flags = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { names: self.names.clone(), rows: indices.len(), flags }
    }

    /// Append a column.
    pub fn with_column(&self, name: &str, values: &[bool]) -> Result<Self> {
        if values.len() != self.rows {
            return Err(Error::Attributes(format!("column {name:?} has {} values for {} rows", values.len(), self.rows)));
        }
        let mut names = self.names.clone();
        names.push(name.to_string());
        let rows = (0..self.rows)
            .map(|r| {
                let mut v = self.row(r).to_vec();
                v.push(values[r]);
                v
            })
            .collect();
        Self::new(names, rows)
    }

    /// CSV with a `filename` key column; keys are the row indices.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["filename".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.rows {
            let mut rec = vec![r.to_string()];
            rec.extend(self.row(r).iter().map(|&b| if b { "1".into() } else { "0".into() }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Conjunction of `(attribute, required value)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinoritySpec {
    pub conjuncts: Vec<(String, bool)>,
}

impl MinoritySpec {
    /// Parse `Name=1,Other=0`. An empty string is the empty conjunction.
    pub fn parse(s: &str) -> Result<Self> {
        let mut conjuncts = Vec::new();
        for part in s.split([',', '&']).map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = match part.split_once('=') {
                Some((n, v)) => (n.trim(), v.trim()),
                None => (part, "1"),
            };
            let value = parse_flag(value).ok_or_else(|| Error::Attributes(format!("bad value in conjunct {part:?}")))?;
            conjuncts.push((name.to_string(), value));
        }
        Ok(Self { conjuncts })
    }
}

impl std::fmt::Display for MinoritySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.conjuncts.iter().map(|(n, v)| format!("{n}={}", u8::from(*v))).collect();
        write!(f, "{}", parts.join(","))
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "1" | "+1" => Some(true),
        "0" | "-1" => Some(false),
        _ => None,
    }
}

/// Parse an attribute file: a header `filename,<name>...` followed by one
/// row per image with values in {-1, 0, 1}; -1 maps to 0.
pub fn parse_attribute_csv(reader: impl Read) -> Result<(Vec<String>, HashMap<String, Vec<bool>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = r.headers()?.clone();
    if header.is_empty() {
        return Err(Error::Attributes("empty header".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut seen = HashSet::new();
    for n in &names {
        if !seen.insert(n.as_str()) {
            return Err(Error::Attributes(format!("duplicate attribute name {n:?} in header")));
        }
    }
    let mut rows = HashMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() + 1 {
            return Err(Error::Shape(format!(
                "attribute row {} has {} fields, header has {}",
                line + 1,
                rec.len(),
                names.len() + 1
            )));
        }
        let key = rec[0].to_string();
        let flags = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(c, v)| {
                parse_flag(v).ok_or_else(|| {
                    Error::Attributes(format!("non-binary value {v:?} for {} in row {key:?}", names[c]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.insert(key, flags);
    }
    Ok((names, rows))
}

/// Load `dir/images/*.png` with `dir/attributes.csv`.
///
/// Images are expected to be cropped already; they are converted to RGB,
/// resized to `resolution`², and mapped to [-1, 1]. Rows are ordered by
/// file name.
pub fn load_attribute_dataset(dir: &Path, resolution: u32) -> Result<Dataset> {
    let file = std::fs::File::open(dir.join("attributes.csv"))?;
    let (names, table) = parse_attribute_csv(file)?;
    let mut files: Vec<_> = std::fs::read_dir(dir.join("images"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Attributes(format!("no PNG images under {}", dir.join("images").display())));
    }
    let res = resolution as usize;
    let mut data = Vec::with_capacity(files.len() * 3 * res * res);
    let mut rows = Vec::with_capacity(files.len());
    for path in &files {
        let key = path.file_name().unwrap().to_string_lossy().to_string();
        let flags = table
            .get(&key)
            .ok_or_else(|| Error::Attributes(format!("no attribute row for image {key:?}")))?;
        rows.push(flags.clone());
        let mut img = image::open(path)?.to_rgb8();
        if img.width() != resolution || img.height() != resolution {
            img = image::imageops::resize(&img, resolution, resolution, image::imageops::FilterType::Triangle);
        }
        for ch in 0..3 {
            for y in 0..res {
                for x in 0..res {
                    data.push(img.get_pixel(x as u32, y as u32)[ch]);
                }
            }
        }
    }
    let table = AttributeTable::new(names, rows)?;
    Dataset::from_quantized(Shape::new(3, res, res), data, None)?.with_attributes(table)
}
