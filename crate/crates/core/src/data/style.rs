//! Digit style synthesis: outline extraction, then stroke width, colour and
//! scale transforms applied to the outline.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::image_ops::{dilate_square, erode3x3, resize_area, resize_bilinear};
use super::{GrayImage, RgbImage};

pub const BOUNDARY_SIZE: usize = 64;
pub const MAX_WIDTH: u32 = 10;
pub const MIN_SCALE: f64 = 0.5;

/// Ground-truth style of one synthesized image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleFactors {
    /// Side of the square dilation kernel, in pixels.
    pub width: u32,
    /// Downscale factor in `[0.5, 1]`.
    pub scale: f64,
    /// Per-channel multiplier on the L1 simplex.
    pub color: [f64; 3],
}

impl StyleFactors {
    /// Build from an unnormalised colour draw; the colour is L1-normalised.
    pub fn new(width: u32, scale: f64, raw_color: [f64; 3]) -> Result<Self> {
        if raw_color.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::Validation(format!(
                "colour components must be finite and non-negative: {raw_color:?}"
            )));
        }
        let l1: f64 = raw_color.iter().sum();
        if l1 <= 0.0 {
            return Err(Error::Validation("colour vector is zero".into()));
        }
        let f = StyleFactors {
            width,
            scale,
            color: raw_color.map(|c| c / l1),
        };
        f.validate()?;
        Ok(f)
    }

    /// The identity style: 1px kernel, no downscale, grey.
    pub fn identity() -> Self {
        StyleFactors {
            width: 1,
            scale: 1.0,
            color: [1.0 / 3.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_WIDTH).contains(&self.width) {
            return Err(Error::Validation(format!(
                "width {} outside 1..={MAX_WIDTH}",
                self.width
            )));
        }
        if !(MIN_SCALE..=1.0).contains(&self.scale) {
            return Err(Error::Validation(format!(
                "scale {} outside [{MIN_SCALE}, 1]",
                self.scale
            )));
        }
        let sum: f64 = self.color.iter().sum();
        if self.color.iter().any(|&c| !(c >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "colour {:?} is not on the L1 simplex",
                self.color
            )));
        }
        Ok(())
    }

    /// Width mapped onto `[0, 1]` so its error is comparable to the others.
    pub fn width_unit(&self) -> f64 {
        (self.width as f64 - 1.0) / (MAX_WIDTH as f64 - 1.0)
    }

    /// Probe targets in column order R, G, B, Scale, Width (unit scale).
    pub fn targets(&self) -> [f64; 5] {
        [
            self.color[0],
            self.color[1],
            self.color[2],
            self.scale,
            self.width_unit(),
        ]
    }
}

/// Width uniform on `{1..10}`, scale uniform on `[0.5, 1]`, colour a uniform
/// draw from the unit cube projected onto the L1 simplex.
pub fn sample_style_factors(rng: &mut Rng) -> StyleFactors {
    let width = rng.random_range(1..=MAX_WIDTH);
    let scale = rng.random_range(MIN_SCALE..=1.0);
    loop {
        let raw: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        if raw.iter().sum::<f64>() > 0.0 {
            return StyleFactors::new(width, scale, raw).expect("valid by construction");
        }
    }
}

/// Outline of a digit at `size`x`size`: bilinear upscale, binarise at 0.5,
/// subtract the 3x3 erosion.
pub fn boundary_to(img: &GrayImage, size: usize) -> GrayImage {
    let up = resize_bilinear(&img.pixels, img.width, img.height, size, size);
    let binary: Vec<f32> = up
        .iter()
        .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    let eroded = erode3x3(&binary, size, size);
    let pixels = binary.iter().zip(&eroded).map(|(b, e)| b - e).collect();
    GrayImage {
        width: size,
        height: size,
        pixels,
    }
}

/// [`boundary_to`] at the canonical 64x64 resolution.
pub fn boundary_preprocess(img: &GrayImage) -> GrayImage {
    boundary_to(img, BOUNDARY_SIZE)
}

/// Dilate, colourise, then downscale and zero-pad back to the input size.
pub fn apply_style(img: &GrayImage, f: &StyleFactors) -> Result<RgbImage> {
    f.validate()?;
    if img.width != img.height {
        return Err(Error::Shape(format!(
            "style transforms need square images, got {}x{}",
            img.width, img.height
        )));
    }
    let n = img.width;
    let dilated = dilate_square(&img.pixels, n, n, f.width as usize);
    let colored: Vec<Vec<f32>> = f
        .color
        .iter()
        .map(|&c| dilated.iter().map(|&v| (c * v as f64) as f32).collect())
        .collect();
    let inner = ((n as f64 * f.scale).round() as usize).clamp(1, n);
    let offset = (n - inner) / 2;
    let mut out = RgbImage::zeros(n);
    for (ch, plane) in colored.iter().enumerate() {
        let small = if inner == n {
            plane.clone()
        } else {
            resize_area(plane, n, n, inner, inner)
        };
        let dst = out.plane_mut(ch);
        for y in 0..inner {
            let row = &small[y * inner..(y + 1) * inner];
            dst[(y + offset) * n + offset..(y + offset) * n + offset + inner].copy_from_slice(row);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn square_digit() -> GrayImage {
        let mut px = vec![0.0f32; 28 * 28];
        for y in 6..22 {
            for x in 6..22 {
                px[y * 28 + x] = 1.0;
            }
        }
        GrayImage::new(28, 28, px).unwrap()
    }

    #[test]
    fn blank_digit_has_no_boundary() {
        let out = boundary_preprocess(&GrayImage::new(28, 28, vec![0.0; 784]).unwrap());
        assert_eq!((out.width, out.height), (64, 64));
        assert!(out.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filled_square_becomes_hollow_outline() {
        let out = boundary_preprocess(&square_digit());
        // Brute force: find the filled block after thresholding, then check the
        // outline is exactly its one-pixel rim.
        let up = resize_bilinear(&square_digit().pixels, 28, 28, 64, 64);
        let on: Vec<(usize, usize)> = (0..64 * 64)
            .filter(|&i| up[i] >= 0.5)
            .map(|i| (i / 64, i % 64))
            .collect();
        let (y0, y1) = (on.iter().map(|p| p.0).min().unwrap(), on.iter().map(|p| p.0).max().unwrap());
        let (x0, x1) = (on.iter().map(|p| p.1).min().unwrap(), on.iter().map(|p| p.1).max().unwrap());
        assert_eq!(on.len(), (y1 - y0 + 1) * (x1 - x0 + 1), "threshold gives a filled block");
        for y in 0..64 {
            for x in 0..64 {
                let inside = (y0..=y1).contains(&y) && (x0..=x1).contains(&x);
                let rim = inside && (y == y0 || y == y1 || x == x0 || x == x1);
                assert_eq!(out.pixels[y * 64 + x], if rim { 1.0 } else { 0.0 }, "({y},{x})");
            }
        }
    }

    #[test]
    fn identity_style_divides_by_three() {
        let b = boundary_preprocess(&square_digit());
        let out = apply_style(&b, &StyleFactors::identity()).unwrap();
        for c in 0..3 {
            for (o, i) in out.plane(c).iter().zip(&b.pixels) {
                assert_eq!(*o, ((1.0f64 / 3.0) * *i as f64) as f32);
            }
        }
    }

    #[test]
    fn colour_draw_is_l1_normalised() {
        let f = StyleFactors::new(3, 0.8, [2.0, 1.0, 1.0]).unwrap();
        assert_eq!(f.color, [0.5, 0.25, 0.25]);
    }

    #[test]
    fn half_scale_occupies_central_32_square() {
        let full = GrayImage::new(64, 64, vec![1.0; 64 * 64]).unwrap();
        let f = StyleFactors::new(1, 0.5, [1.0, 1.0, 1.0]).unwrap();
        let out = apply_style(&full, &f).unwrap();
        let plane = out.plane(0);
        for y in 0..64 {
            for x in 0..64 {
                let inside = (16..48).contains(&y) && (16..48).contains(&x);
                assert_eq!(plane[y * 64 + x] > 0.0, inside, "({y},{x})");
            }
        }
    }

    #[test]
    fn out_of_range_factors_rejected() {
        let img = GrayImage::new(64, 64, vec![0.0; 4096]).unwrap();
        let mut f = StyleFactors::identity();
        f.width = 11;
        assert!(matches!(apply_style(&img, &f), Err(Error::Validation(_))));
        f.width = 0;
        assert!(apply_style(&img, &f).is_err());
        let mut f = StyleFactors::identity();
        f.scale = 0.49;
        assert!(apply_style(&img, &f).is_err());
        let mut f = StyleFactors::identity();
        f.color = [0.5, 0.5, 0.5];
        assert!(apply_style(&img, &f).is_err());
        assert!(StyleFactors::new(1, 1.0, [0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn sampled_factors_are_valid() {
        let mut rng = seeded(3);
        for _ in 0..1000 {
            sample_style_factors(&mut rng).validate().unwrap();
        }
    }
}
