//! PNG renderings of samples.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::quantize;
use crate::error::{invalid, Result};
use crate::nn::Shape;

fn pixel(sample: &[f32], shape: Shape, x: usize, y: usize) -> Rgb<u8> {
    let plane = shape.h * shape.w;
    let at = |c: usize| quantize(sample[c * plane + y * shape.w + x]);
    if shape.c >= 3 {
        Rgb([at(0), at(1), at(2)])
    } else {
        let v = at(0);
        Rgb([v, v, v])
    }
}

/// Images (values in [-1, 1]) tiled row-major into a grid `cols` wide,
/// separated by a one-pixel border.
pub fn tile_images(samples: &[f32], shape: Shape, cols: usize) -> Result<RgbImage> {
    let n = samples.len() / shape.len().max(1);
    if n == 0 || cols == 0 {
        return Err(invalid("nothing to tile"));
    }
    let rows = n.div_ceil(cols);
    let (cw, ch) = (shape.w + 1, shape.h + 1);
    let mut img = RgbImage::from_pixel((cols * cw + 1) as u32, (rows * ch + 1) as u32, Rgb([40, 40, 40]));
    for i in 0..n {
        let s = &samples[i * shape.len()..(i + 1) * shape.len()];
        let (ox, oy) = ((i % cols) * cw + 1, (i / cols) * ch + 1);
        for y in 0..shape.h {
            for x in 0..shape.w {
                img.put_pixel((ox + x) as u32, (oy + y) as u32, pixel(s, shape, x, y));
            }
        }
    }
    Ok(img)
}

/// 2-D points drawn over `reference` points on a square canvas covering
/// `[-extent, extent]²`.
pub fn scatter(points: &[f32], reference: &[f32], extent: f32, size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let mut plot = |p: &[f32], color: Rgb<u8>, r: i64| {
        let to = |v: f32| ((v / extent + 1.0) / 2.0 * (size - 1) as f32).round() as i64;
        let (cx, cy) = (to(p[0]), to(-p[1]));
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (cx + dx, cy + dy);
                if (0..size as i64).contains(&x) && (0..size as i64).contains(&y) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    };
    for p in reference.chunks(2) {
        plot(p, Rgb([200, 60, 60]), 2);
    }
    for p in points.chunks(2) {
        plot(p, Rgb([30, 30, 140]), 0);
    }
    img
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_dimensions() {
        let s = Shape::new(3, 4, 4);
        let img = tile_images(&vec![0.0; 64 * s.len()], s, 8).unwrap();
        assert_eq!(img.dimensions(), (41, 41));
        assert_eq!(img.get_pixel(1, 1), &Rgb([128, 128, 128]));
    }

    #[test]
    fn scatter_marks_points() {
        let img = scatter(&[0.0, 0.0], &[], 1.0, 11);
        assert_eq!(img.get_pixel(5, 5), &Rgb([30, 30, 140]));
    }
}
