//! IDX container ingestion (the format MNIST ships in).
//!
//! Big-endian header: a magic word (`0x0000_0803` for rank-3 `u8` image
//! stacks, `0x0000_0801` for rank-1 label vectors), one `u32` per
//! dimension, then the row-major payload. Files ending in `.gz` are
//! decompressed on the fly.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

use super::RawImageSet;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn open(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|ext| ext == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Corrupt(format!("{}: truncated header", path.display())))
}

/// Parse an in-memory IDX image stack into `[0,1]` gray values.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: magic {magic} is not an IDX image stack ({IMAGE_MAGIC})",
            path.display()
        )));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let payload = &bytes[16..];
    let expected = n * rows * cols;
    if payload.len() < expected {
        return Err(Error::Corrupt(format!(
            "{}: expected {expected} payload bytes, found {}",
            path.display(),
            payload.len()
        )));
    }
    let pixels = payload[..expected]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Ok((n, rows, cols, pixels))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: magic {magic} is not an IDX label vector ({LABEL_MAGIC})",
            path.display()
        )));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::Corrupt(format!(
            "{}: expected {n} labels, found {}",
            path.display(),
            payload.len()
        )));
    }
    Ok(payload[..n].to_vec())
}

/// Load an image stack. Labels default to zero; use [`load_idx_pair`] to
/// attach real ones.
pub fn load_idx(path: impl AsRef<Path>) -> Result<RawImageSet> {
    let path = path.as_ref();
    let (n, rows, cols, pixels) = parse_images(&read_all(path)?, path)?;
    RawImageSet::new(rows, cols, pixels, vec![0; n])
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_labels(&read_all(path)?, path)
}

pub fn load_idx_pair(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<RawImageSet> {
    let mut set = load_idx(images)?;
    let labels = load_idx_labels(labels)?;
    if labels.len() != set.len() {
        return Err(Error::Corrupt(format!(
            "{} images but {} labels",
            set.len(),
            labels.len()
        )));
    }
    set.labels = labels;
    Ok(set)
}

/// Locate `{prefix}-images-idx3-ubyte[.gz]` and its label file in `dir`.
pub fn find_split(dir: &Path, prefix: &str) -> Option<(PathBuf, PathBuf)> {
    let pick = |stem: &str| {
        [format!("{stem}.gz"), stem.to_string()]
            .into_iter()
            .map(|name| dir.join(name))
            .find(|p| p.is_file())
    };
    let images = pick(&format!("{prefix}-images-idx3-ubyte"))?;
    let labels = pick(&format!("{prefix}-labels-idx1-ubyte"))?;
    Some((images, labels))
}

/// Serialise an image stack (values rounded back to bytes).
pub fn encode_images(set: &RawImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.pixels.len());
    for word in [
        IMAGE_MAGIC,
        set.len() as u32,
        set.rows as u32,
        set.cols as u32,
    ] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(set.pixels.iter().map(|&v| (v * 255.0).round() as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    #[test]
    fn two_images_from_header_arithmetic() {
        let mut bytes = header(2051, &[2, 28, 28]);
        bytes.extend((0..1568).map(|i| (i % 256) as u8));
        let (n, r, c, px) = parse_images(&bytes, Path::new("mem")).unwrap();
        assert_eq!((n, r, c, px.len()), (2, 28, 28, 1568));
        assert_eq!(px[255], 1.0);
        assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn label_magic_rejected_by_image_loader() {
        let mut bytes = header(2049, &[2, 28, 28]);
        bytes.extend(vec![0u8; 1568]);
        assert!(matches!(
            parse_images(&bytes, Path::new("mem")),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let mut bytes = header(2051, &[2, 28, 28]);
        bytes.extend(vec![0u8; 1000]);
        assert!(matches!(
            parse_images(&bytes, Path::new("mem")),
            Err(Error::Corrupt(_))
        ));
        assert!(matches!(
            parse_images(&bytes[..10], Path::new("mem")),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn labels_parse() {
        let mut bytes = header(2049, &[3]);
        bytes.extend([7, 1, 9]);
        assert_eq!(parse_labels(&bytes, Path::new("mem")).unwrap(), vec![7, 1, 9]);
    }
}
