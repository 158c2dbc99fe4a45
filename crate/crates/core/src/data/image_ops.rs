//! Raster primitives on single-channel `f32` planes stored row-major.

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    assert_eq!(src.len(), sw * sh);
    let mut out = vec![0.0f32; dw * dh];
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    for y in 0..dh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for x in 0..dw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * sw + x0] as f64 * (1.0 - wx) + src[y0 * sw + x1] as f64 * wx;
            let bot = src[y1 * sw + x0] as f64 * (1.0 - wx) + src[y1 * sw + x1] as f64 * wx;
            out[y * dw + x] = (top * (1.0 - wy) + bot * wy) as f32;
        }
    }
    out
}

// Fractional overlap of each destination cell with the source cells along one axis.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let lo = d as f64 * ratio;
            let hi = lo + ratio;
            let mut w = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((s, overlap / ratio));
                }
                s += 1;
            }
            w
        })
        .collect()
}

/// Area-averaging resize. Used for downscaling, where thin strokes would
/// alias under point sampling.
pub fn resize_area(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    assert_eq!(src.len(), sw * sh);
    let wx = area_weights(sw, dw);
    let wy = area_weights(sh, dh);
    let mut out = vec![0.0f32; dw * dh];
    for (y, rows) in wy.iter().enumerate() {
        for (x, cols) in wx.iter().enumerate() {
            let mut acc = 0.0f64;
            for &(sy, ay) in rows {
                for &(sx, ax) in cols {
                    acc += src[sy * sw + sx] as f64 * ay * ax;
                }
            }
            out[y * dw + x] = acc as f32;
        }
    }
    out
}

/// 3x3 erosion; pixels outside the raster count as background.
pub fn erode3x3(src: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut m = f32::INFINITY;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    let v = if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        0.0
                    } else {
                        src[yy as usize * w + xx as usize]
                    };
                    m = m.min(v);
                }
            }
            out[y * w + x] = m;
        }
    }
    out
}

/// Grey-level dilation with a `k`x`k` square kernel covering offsets
/// `[-k/2, k-1-k/2]` on both axes. `k = 1` is the identity.
pub fn dilate_square(src: &[f32], w: usize, h: usize, k: usize) -> Vec<f32> {
    assert!(k >= 1);
    if k == 1 {
        return src.to_vec();
    }
    let lo = (k / 2) as i64;
    let hi = (k - 1 - k / 2) as i64;
    let pass = |input: &[f32], horizontal: bool| {
        let mut out = vec![0.0f32; w * h];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut m = f32::NEG_INFINITY;
                for d in -lo..=hi {
                    let (yy, xx) = if horizontal { (y, x + d) } else { (y + d, x) };
                    if yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64 {
                        m = m.max(input[yy as usize * w + xx as usize]);
                    }
                }
                out[y as usize * w + x as usize] = m;
            }
        }
        out
    };
    let rows = pass(src, true);
    pass(&rows, false)
}

/// Integer-factor box downsampling of a planar CHW image.
pub fn box_downsample(src: &[f32], channels: usize, size: usize, factor: usize) -> Vec<f32> {
    assert_eq!(src.len(), channels * size * size);
    assert!(factor >= 1 && size % factor == 0);
    if factor == 1 {
        return src.to_vec();
    }
    let out_size = size / factor;
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0f32; channels * out_size * out_size];
    for c in 0..channels {
        let plane = &src[c * size * size..(c + 1) * size * size];
        for y in 0..out_size {
            for x in 0..out_size {
                let mut acc = 0.0f64;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += plane[(y * factor + dy) * size + x * factor + dx] as f64;
                    }
                }
                out[c * out_size * out_size + y * out_size + x] = (acc * norm) as f32;
            }
        }
    }
    out
}
