//! Procedural stand-in for the digit corpus: thin white bars and boxes as
//! references, styled variants as unlabelled data. No downloads needed.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{substream, Rng, Stream};

use super::style::{apply_style, sample_style_factors};
use super::{DatasetPair, GrayImage, ImageSet, LabeledSet, RgbImage};

fn line(px: &mut [f32], size: usize, (y0, x0): (usize, usize), (y1, x1): (usize, usize)) {
    for y in y0.min(y1)..=y0.max(y1) {
        for x in x0.min(x1)..=x0.max(x1) {
            px[y * size + x] = 1.0;
        }
    }
}

/// A one-pixel outline shape inside the central region of the raster.
pub fn toy_template(size: usize, rng: &mut Rng) -> GrayImage {
    let mut px = vec![0.0f32; size * size];
    let margin = size / 4;
    let hi = size - 1 - margin;
    let pick = |rng: &mut Rng| rng.random_range(margin..=hi);
    match rng.random_range(0..4) {
        // horizontal bar
        0 => {
            let y = pick(rng);
            line(&mut px, size, (y, margin), (y, hi));
        }
        // vertical bar
        1 => {
            let x = pick(rng);
            line(&mut px, size, (margin, x), (hi, x));
        }
        // box outline
        2 => {
            let (a, b) = (pick(rng), pick(rng));
            let (c, d) = (pick(rng), pick(rng));
            let (y0, y1) = (a.min(b), a.max(b).max(a.min(b) + 2).min(hi));
            let (x0, x1) = (c.min(d), c.max(d).max(c.min(d) + 2).min(hi));
            line(&mut px, size, (y0, x0), (y0, x1));
            line(&mut px, size, (y1, x0), (y1, x1));
            line(&mut px, size, (y0, x0), (y1, x0));
            line(&mut px, size, (y0, x1), (y1, x1));
        }
        // cross
        _ => {
            let (y, x) = (pick(rng), pick(rng));
            line(&mut px, size, (y, margin), (y, hi));
            line(&mut px, size, (margin, x), (hi, x));
        }
    }
    GrayImage {
        width: size,
        height: size,
        pixels: px,
    }
}

fn styled_set(n: usize, size: usize, seed: u64, base: u64) -> Result<LabeledSet> {
    let mut out = LabeledSet::empty(size);
    for k in 0..n as u64 {
        let idx = base + k;
        let template = toy_template(size, &mut substream(seed, Stream::Toy, idx));
        let f = sample_style_factors(&mut substream(seed, Stream::Style, idx));
        out.images.push(&apply_style(&template, &f)?);
        out.factors.push(f);
        out.sources.push(idx as usize);
    }
    Ok(out)
}

/// `n` grey references and `2n` styled unlabelled images at `size`x`size`,
/// plus two labeled probe sets of `n` images each.
pub fn make_toy_dataset(n: usize, size: usize, seed: u64) -> Result<DatasetPair> {
    if size < 8 {
        return Err(Error::Config(format!("toy images need size >= 8, got {size}")));
    }
    let mut reference = ImageSet::empty(size, 3);
    for k in 0..n as u64 {
        let template = toy_template(size, &mut substream(seed, Stream::Toy, k));
        reference.push(&RgbImage::from_gray(&template));
    }
    // Index bands keep every image on its own substream.
    let band = 1u64 << 40;
    Ok(DatasetPair {
        image_size: size,
        seed,
        source: "toy".into(),
        reference,
        unlabelled: styled_set(2 * n, size, seed, band)?,
        probe_fit: Some(styled_set(n, size, seed, 2 * band)?),
        probe_eval: Some(styled_set(n, size, seed, 3 * band)?),
    })
}
