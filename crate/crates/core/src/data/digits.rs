//! Per-class bank of grayscale digit images.
//!
//! The bank can be read from MNIST IDX files or rendered procedurally from
//! stroke templates with random affine jitter, which gives a fully offline,
//! seedable stand-in with ten cleanly separable classes.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Side length of rendered digits, matching MNIST.
pub const DIGIT_SIDE: usize = 28;

#[derive(Clone, Debug, PartialEq)]
pub struct DigitBank {
    side: usize,
    classes: Vec<Vec<Vec<u8>>>,
}

type Stroke = Vec<(f32, f32)>;

fn arc(cx: f32, cy: f32, rx: f32, ry: f32, a0: f32, a1: f32) -> Stroke {
    let steps = (((a1 - a0).abs() / 15.0).ceil() as usize).max(2);
    (0..=steps)
        .map(|i| {
            let a = (a0 + (a1 - a0) * i as f32 / steps as f32).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Stroke templates in unit coordinates, y pointing down.
fn template(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.24, 0.36, 0.0, 360.0)],
        1 => vec![vec![(0.40, 0.24), (0.54, 0.12), (0.54, 0.88)]],
        2 => {
            let mut top = arc(0.5, 0.33, 0.22, 0.2, 180.0, 390.0);
            top.extend([(0.27, 0.88), (0.75, 0.88)]);
            vec![top]
        }
        3 => vec![arc(0.48, 0.3, 0.2, 0.18, 200.0, 450.0), arc(0.48, 0.68, 0.23, 0.2, 270.0, 520.0)],
        4 => vec![vec![(0.62, 0.88), (0.62, 0.12), (0.24, 0.62), (0.78, 0.62)]],
        5 => {
            let mut s = vec![(0.72, 0.12), (0.34, 0.12), (0.31, 0.47)];
            s.extend(arc(0.5, 0.65, 0.22, 0.22, 225.0, 500.0));
            vec![s]
        }
        6 => vec![
            arc(0.5, 0.66, 0.21, 0.21, 0.0, 360.0),
            vec![(0.68, 0.13), (0.46, 0.24), (0.33, 0.43), (0.29, 0.66)],
        ],
        7 => vec![vec![(0.25, 0.12), (0.76, 0.12), (0.42, 0.88)]],
        8 => vec![arc(0.5, 0.29, 0.18, 0.17, 0.0, 360.0), arc(0.5, 0.68, 0.23, 0.21, 0.0, 360.0)],
        9 => vec![arc(0.5, 0.33, 0.21, 0.21, 0.0, 360.0), vec![(0.71, 0.33), (0.68, 0.62), (0.55, 0.88)]],
        _ => unreachable!("digit {digit}"),
    }
}

fn seg_dist(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Render one jittered instance of `digit` at `side`×`side`.
fn render(digit: usize, side: usize, rng: &mut impl Rng) -> Vec<u8> {
    let s = side as f32;
    let scale = rng.random_range(0.80..1.0) * s;
    let angle: f32 = rng.random_range(-0.2..0.2);
    let shear: f32 = rng.random_range(-0.15..0.15);
    let tx = rng.random_range(-1.5..1.5);
    let ty = rng.random_range(-1.5..1.5);
    let thick = rng.random_range(1.6..2.6) * s / 28.0;
    let (sin, cos) = angle.sin_cos();
    let map = |(u, v): (f32, f32)| {
        let (x, y) = ((u - 0.5) + shear * (v - 0.5), v - 0.5);
        let (x, y) = (cos * x - sin * y, sin * x + cos * y);
        (s / 2.0 + x * scale + tx, s / 2.0 + y * scale + ty)
    };
    let segments: Vec<((f32, f32), (f32, f32))> = template(digit)
        .into_iter()
        .flat_map(|stroke| {
            let pts: Vec<_> = stroke.into_iter().map(map).collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();
    let mut img = vec![0u8; side * side];
    for y in 0..side {
        for x in 0..side {
            let p = (x as f32 + 0.5, y as f32 + 0.5);
            let d = segments.iter().map(|&(a, b)| seg_dist(p, a, b)).fold(f32::INFINITY, f32::min);
            let v = (thick / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            img[y * side + x] = (v * 255.0).round() as u8;
        }
    }
    img
}

impl DigitBank {
    /// Bank from explicit per-class images (row-major, `side`² bytes each).
    pub fn new(side: usize, classes: Vec<Vec<Vec<u8>>>) -> Result<Self> {
        if classes.len() != 10 {
            return Err(Error::InvalidArgument(format!("expected 10 digit classes, got {}", classes.len())));
        }
        for (d, imgs) in classes.iter().enumerate() {
            if let Some(bad) = imgs.iter().find(|i| i.len() != side * side) {
                return Err(Error::Shape(format!("digit {d} image has {} pixels, expected {}", bad.len(), side * side)));
            }
        }
        Ok(Self { side, classes })
    }

    /// Procedurally rendered bank with `per_class` images of each digit.
    pub fn render(per_class: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0xd161);
        let classes = (0..10)
            .map(|d| (0..per_class).map(|_| render(d, DIGIT_SIDE, &mut r)).collect())
            .collect();
        Self { side: DIGIT_SIDE, classes }
    }

    /// Read an MNIST-style IDX image file and its label file.
    pub fn from_idx(images: &Path, labels: &Path) -> Result<Self> {
        let mut fi = std::io::BufReader::new(std::fs::File::open(images)?);
        let mut fl = std::io::BufReader::new(std::fs::File::open(labels)?);
        if fi.read_u32::<BigEndian>()? != 0x0803 || fl.read_u32::<BigEndian>()? != 0x0801 {
            return Err(Error::InvalidArgument("not an IDX image/label file pair".into()));
        }
        let n = fi.read_u32::<BigEndian>()? as usize;
        let rows = fi.read_u32::<BigEndian>()? as usize;
        let cols = fi.read_u32::<BigEndian>()? as usize;
        if rows != cols || fl.read_u32::<BigEndian>()? as usize != n {
            return Err(Error::Shape("IDX image/label counts or sizes disagree".into()));
        }
        let mut pix = vec![0u8; n * rows * cols];
        fi.read_exact(&mut pix)?;
        let mut lab = vec![0u8; n];
        fl.read_exact(&mut lab)?;
        let mut classes = vec![Vec::new(); 10];
        for (i, &l) in lab.iter().enumerate() {
            let l = l as usize;
            if l > 9 {
                return Err(Error::InvalidArgument(format!("label {l} out of range")));
            }
            classes[l].push(pix[i * rows * cols..(i + 1) * rows * cols].to_vec());
        }
        Self::new(rows, classes)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn class(&self, digit: usize) -> &[Vec<u8>] {
        &self.classes[digit]
    }

    /// Fails naming the first empty class.
    pub fn check_complete(&self) -> Result<()> {
        match self.classes.iter().position(|c| c.is_empty()) {
            Some(d) => Err(Error::EmptyDigitClass(d)),
            None => Ok(()),
        }
    }

    /// Single-channel images padded to `out_side` and mapped to [-1, 1],
    /// with their digit labels, in class-interleaved order.
    pub fn padded_examples(&self, out_side: usize) -> (Vec<f32>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let most = self.classes.iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..most {
            for d in 0..10 {
                if let Some(img) = self.classes[d].get(i) {
                    x.extend(pad(img, self.side, out_side).into_iter().map(super::dequantize));
                    y.push(d);
                }
            }
        }
        (x, y)
    }
}

/// Center `img` (side²) on a zero canvas of `out`²; crops if `out < side`.
pub(crate) fn pad(img: &[u8], side: usize, out: usize) -> Vec<u8> {
    let mut canvas = vec![0u8; out * out];
    let off = (out as isize - side as isize) / 2;
    for y in 0..side {
        for x in 0..side {
            let (cy, cx) = (y as isize + off, x as isize + off);
            if (0..out as isize).contains(&cy) && (0..out as isize).contains(&cx) {
                canvas[cy as usize * out + cx as usize] = img[y * side + x];
            }
        }
    }
    canvas
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic() {
        assert_eq!(DigitBank::render(3, 9), DigitBank::render(3, 9));
        assert_ne!(DigitBank::render(3, 9), DigitBank::render(3, 10));
    }

    #[test]
    fn rendered_digits_are_centered() {
        let bank = DigitBank::render(20, 1);
        for d in 0..10 {
            for img in bank.class(d) {
                let ink: u32 = img.iter().map(|&v| v as u32).sum();
                assert!(ink > 255 * 20, "digit {d} too faint");
                let on: Vec<(usize, usize)> =
                    (0..img.len()).filter(|&i| img[i] > 64).map(|i| (i % DIGIT_SIDE, i / DIGIT_SIDE)).collect();
                let (x0, x1) = (on.iter().map(|p| p.0).min().unwrap(), on.iter().map(|p| p.0).max().unwrap());
                let (y0, y1) = (on.iter().map(|p| p.1).min().unwrap(), on.iter().map(|p| p.1).max().unwrap());
                let half = (DIGIT_SIDE - 1) as f64 / 2.0;
                let (ox, oy) = ((x0 + x1) as f64 / 2.0 - half, (y0 + y1) as f64 / 2.0 - half);
                assert!(ox.abs() < 5.0 && oy.abs() < 5.0, "digit {d} box offset ({ox:.2}, {oy:.2})");
            }
        }
    }

    #[test]
    fn empty_class_is_named() {
        let mut classes = vec![vec![vec![0u8; 4]]; 10];
        classes[7].clear();
        let bank = DigitBank::new(2, classes).unwrap();
        assert!(matches!(bank.check_complete(), Err(Error::EmptyDigitClass(7))));
    }

    #[test]
    fn pad_centers() {
        let p = pad(&[1, 2, 3, 4], 2, 4);
        assert_eq!(p, vec![0, 0, 0, 0, 0, 1, 2, 0, 0, 3, 4, 0, 0, 0, 0, 0]);
    }
}
