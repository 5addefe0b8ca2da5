use rand::Rng;

use super::{digits::pad, Dataset, DigitBank};
use crate::error::{invalid, Result};
use crate::nn::Shape;
use crate::rng;

pub const STACKED_MODES: usize = 1000;
const SIDE: usize = 32;

/// Mode id of an image whose R, G, B channels show the given digits.
pub fn stacked_label(digits: [usize; 3]) -> u32 {
    (100 * digits[0] + 10 * digits[1] + digits[2]) as u32
}

pub fn decode_stacked_label(label: u32) -> [usize; 3] {
    let l = label as usize;
    [l / 100, (l / 10) % 10, l % 10]
}

/// `n` 32×32 RGB images, each channel an independently drawn digit.
pub fn synthesize_stacked_mnist(bank: &DigitBank, n: usize, seed: u64) -> Result<Dataset> {
    bank.check_complete()?;
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let plane = SIDE * SIDE;
    let mut r = rng::stream(seed, 0x57ac);
    let mut data = Vec::with_capacity(n * 3 * plane);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut digits = [0usize; 3];
        for d in &mut digits {
            *d = r.random_range(0..10);
            let class = bank.class(*d);
            let img = &class[r.random_range(0..class.len())];
            // byte v maps to the pixel value v / 127.5 - 1
            data.extend(pad(img, bank.side(), SIDE));
        }
        labels.push(stacked_label(digits));
    }
    Dataset::from_quantized(Shape::new(3, SIDE, SIDE), data, Some(labels))
}
