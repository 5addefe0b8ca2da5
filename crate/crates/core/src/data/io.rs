//! Packed on-disk dataset layout.
//!
//! A dataset directory holds `data.bin` (header plus packed samples), an
//! optional `labels.txt` sidecar with one mode id per line, and an optional
//! `attributes.csv` keyed by row index.
//!
//! `data.bin` layout, little endian:
//! `b"IGDS"`, `u32` version, `u8` kind (0 = 8-bit images, 1 = f32 points),
//! `u32` c, h, w, `u64` n, then `n*c*h*w` bytes or f32 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{load_attribute_dataset, parse_attribute_csv, AttributeTable, Dataset, Storage};
use crate::error::{Error, Result};
use crate::nn::Shape;

const MAGIC: &[u8; 4] = b"IGDS";
const VERSION: u32 = 1;

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("data.bin"))?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let s = ds.shape();
    match ds.storage() {
        Storage::Quantized(_) => w.write_u8(0)?,
        Storage::Real(_) => w.write_u8(1)?,
    }
    for v in [s.c, s.h, s.w] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    w.write_u64::<LittleEndian>(ds.len() as u64)?;
    match ds.storage() {
        Storage::Quantized(q) => w.write_all(q)?,
        Storage::Real(v) => {
            for x in v {
                w.write_f32::<LittleEndian>(*x)?;
            }
        }
    }
    w.flush()?;
    if let Some(labels) = ds.labels() {
        let mut lw = BufWriter::new(File::create(dir.join("labels.txt"))?);
        for l in labels {
            writeln!(lw, "{l}")?;
        }
        lw.flush()?;
    }
    if let Some(t) = ds.attributes() {
        t.write_csv(&dir.join("attributes.csv"))?;
    }
    Ok(())
}

/// Load a packed dataset directory, or an image directory with
/// `images/*.png` + `attributes.csv` (resized to 32×32).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let packed = dir.join("data.bin");
    if !packed.exists() {
        if dir.join("images").is_dir() && dir.join("attributes.csv").exists() {
            return load_attribute_dataset(dir, 32);
        }
        return Err(Error::InvalidArgument(format!("{} holds no dataset", dir.display())));
    }
    let mut r = BufReader::new(File::open(&packed)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidArgument(format!("{} is not a packed dataset", packed.display())));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::InvalidArgument(format!("unsupported dataset version {version}")));
    }
    let kind = r.read_u8()?;
    let c = r.read_u32::<LittleEndian>()? as usize;
    let h = r.read_u32::<LittleEndian>()? as usize;
    let w = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let shape = Shape::new(c, h, w);
    let total = n * shape.len();
    let labels = read_labels(dir, n)?;
    let ds = match kind {
        0 => {
            let mut q = vec![0u8; total];
            r.read_exact(&mut q)?;
            Dataset::from_quantized(shape, q, labels)?
        }
        1 => {
            let mut v = vec![0f32; total];
            r.read_f32_into::<LittleEndian>(&mut v)?;
            Dataset::points(shape, v, labels)?
        }
        k => return Err(Error::InvalidArgument(format!("unknown sample kind {k}"))),
    };
    let attr = dir.join("attributes.csv");
    if attr.exists() {
        let (names, rows) = parse_attribute_csv(File::open(attr)?)?;
        let ordered = (0..n)
            .map(|i| {
                rows.get(&i.to_string())
                    .cloned()
                    .ok_or_else(|| Error::Attributes(format!("no attribute row for sample {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        return ds.with_attributes(AttributeTable::new(names, ordered)?);
    }
    Ok(ds)
}

fn read_labels(dir: &Path, n: usize) -> Result<Option<Vec<u32>>> {
    let path = dir.join("labels.txt");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    let labels = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<u32>().map_err(|e| Error::InvalidArgument(format!("label {l:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    Ok(Some(labels))
}
