//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.toml          counts, seed, image size, per-array sha256
//! <dir>/reference.f32          little-endian f32, N x 3 x H x W
//! <dir>/unlabelled.f32
//! <dir>/unlabelled.csv         source,width,scale,r,g,b
//! <dir>/probe_fit.f32 + .csv   optional
//! <dir>/probe_eval.f32 + .csv  optional
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DatasetPair, ImageSet, LabeledSet, StyleFactors};

pub const MANIFEST: &str = "manifest.toml";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub source: String,
    pub seed: u64,
    pub image_size: usize,
    pub channels: usize,
    pub counts: Counts,
    pub sha256: Hashes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub reference: usize,
    pub unlabelled: usize,
    pub probe_fit: usize,
    pub probe_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hashes {
    pub reference: String,
    pub unlabelled: String,
    pub probe_fit: Option<String>,
    pub probe_eval: Option<String>,
    pub dataset: String,
}

#[derive(Serialize, Deserialize)]
struct FactorRow {
    source: usize,
    width: u32,
    scale: f64,
    r: f64,
    g: f64,
    b: f64,
}

impl Manifest {
    pub fn of(pair: &DatasetPair) -> Manifest {
        let len = |p: &Option<LabeledSet>| p.as_ref().map_or(0, |s| s.len());
        Manifest {
            format: "refvae-dataset".into(),
            version: FORMAT_VERSION,
            source: pair.source.clone(),
            seed: pair.seed,
            image_size: pair.image_size,
            channels: pair.channels(),
            counts: Counts {
                reference: pair.reference.len(),
                unlabelled: pair.unlabelled.len(),
                probe_fit: len(&pair.probe_fit),
                probe_eval: len(&pair.probe_eval),
            },
            sha256: Hashes {
                reference: pair.reference.sha256(),
                unlabelled: pair.unlabelled.sha256(),
                probe_fit: pair.probe_fit.as_ref().map(LabeledSet::sha256),
                probe_eval: pair.probe_eval.as_ref().map(LabeledSet::sha256),
                dataset: pair.fingerprint(),
            },
        }
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.format != "refvae-dataset" || m.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported dataset format {} v{}",
                path.display(),
                m.format,
                m.version
            )));
        }
        Ok(m)
    }
}

fn write_array(path: &Path, set: &ImageSet) -> Result<()> {
    let mut bytes = Vec::with_capacity(set.data.len() * 4);
    for v in &set.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_array(path: &Path, size: usize, count: usize) -> Result<ImageSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = count * 3 * size * size * 4;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(ImageSet {
        size,
        channels: 3,
        data,
    })
}

fn write_labeled(dir: &Path, name: &str, set: &LabeledSet) -> Result<()> {
    write_array(&dir.join(format!("{name}.f32")), &set.images)?;
    let path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for (f, &source) in set.factors.iter().zip(&set.sources) {
        w.serialize(FactorRow {
            source,
            width: f.width,
            scale: f.scale,
            r: f.color[0],
            g: f.color[1],
            b: f.color[2],
        })
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn read_labeled(dir: &Path, name: &str, size: usize, count: usize) -> Result<LabeledSet> {
    let images = read_array(&dir.join(format!("{name}.f32")), size, count)?;
    let path = dir.join(format!("{name}.csv"));
    let mut r = csv::Reader::from_path(&path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut factors = Vec::with_capacity(count);
    let mut sources = Vec::with_capacity(count);
    for row in r.deserialize::<FactorRow>() {
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let f = StyleFactors {
            width: row.width,
            scale: row.scale,
            color: [row.r, row.g, row.b],
        };
        f.validate()?;
        factors.push(f);
        sources.push(row.source);
    }
    if factors.len() != count {
        return Err(Error::Corrupt(format!(
            "{}: {} label rows for {count} images",
            path.display(),
            factors.len()
        )));
    }
    Ok(LabeledSet {
        images,
        factors,
        sources,
    })
}

/// Write `pair` under `dir` (created if missing) and return its manifest.
pub fn save_dataset(pair: &DatasetPair, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_array(&dir.join("reference.f32"), &pair.reference)?;
    write_labeled(dir, "unlabelled", &pair.unlabelled)?;
    if let Some(p) = &pair.probe_fit {
        write_labeled(dir, "probe_fit", p)?;
    }
    if let Some(p) = &pair.probe_eval {
        write_labeled(dir, "probe_eval", p)?;
    }
    let manifest = Manifest::of(pair);
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<DatasetPair> {
    let m = Manifest::read(dir)?;
    let size = m.image_size;
    let optional = |name: &str, count: usize| -> Result<Option<LabeledSet>> {
        if count == 0 {
            Ok(None)
        } else {
            read_labeled(dir, name, size, count).map(Some)
        }
    };
    let pair = DatasetPair {
        image_size: size,
        seed: m.seed,
        source: m.source.clone(),
        reference: if m.counts.reference == 0 {
            ImageSet::empty(size, 3)
        } else {
            read_array(&dir.join("reference.f32"), size, m.counts.reference)?
        },
        unlabelled: read_labeled(dir, "unlabelled", size, m.counts.unlabelled)?,
        probe_fit: optional("probe_fit", m.counts.probe_fit)?,
        probe_eval: optional("probe_eval", m.counts.probe_eval)?,
    };
    if pair.fingerprint() != m.sha256.dataset {
        return Err(Error::Corrupt(format!(
            "{}: contents do not match manifest digest",
            dir.display()
        )));
    }
    Ok(pair)
}
