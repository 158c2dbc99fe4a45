use std::path::Path;

use candle_core::{DType, Tensor};
use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};

const PAD: u32 = 2;

/// `(C, H, W)` tensor in `[-1, 1]` to 8-bit RGB. One channel is repeated.
pub fn tensor_to_rgb8(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = t.dims3()?;
    if c != 1 && c != 3 {
        return Err(Error::Shape(format!("cannot render {c} channels")));
    }
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let px = |ch: usize, y: usize, x: usize| {
        let ch = if c == 1 { 0 } else { ch };
        let u = (v[ch * h * w + y * w + x].clamp(-1.0, 1.0) + 1.0) * 127.5;
        u.round() as u8
    };
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([px(0, y, x), px(1, y, x), px(2, y, x)])
    }))
}

/// Tile `rows` (each a `(K, C, H, W)` batch, all equal shape) into one PNG
/// with a small grey gutter.
pub fn save_grid(rows: &[Tensor], path: &Path) -> Result<()> {
    let first = rows.first().ok_or_else(|| Error::Shape("empty grid".into()))?;
    let (k, _, h, w) = first.dims4()?;
    if rows.iter().any(|r| r.dims() != first.dims()) {
        return Err(Error::Shape("grid rows differ in shape".into()));
    }
    let (h, w, k) = (h as u32, w as u32, k as u32);
    let n = rows.len() as u32;
    let mut out = RgbImage::from_pixel(k * (w + PAD) + PAD, n * (h + PAD) + PAD, Rgb([128, 128, 128]));
    for (r, row) in rows.iter().enumerate() {
        for j in 0..k {
            let tile = tensor_to_rgb8(&row.get(j as usize)?)?;
            let (ox, oy) = (PAD + j * (w + PAD), PAD + r as u32 * (h + PAD));
            image::imageops::replace(&mut out, &tile, ox as i64, oy as i64);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    out.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
