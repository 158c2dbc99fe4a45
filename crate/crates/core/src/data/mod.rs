//! Data pipeline: raw digit ingestion, style synthesis and the
//! reference/unlabelled split.
//!
//! Images live in `[0, 1]` throughout the pipeline and are shifted to
//! `[-1, 1]` only when a batch tensor is assembled ([`ImageSet::batch`]).

pub mod idx;
pub mod image_ops;
pub mod store;
pub mod style;
pub mod toy;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

pub use idx::{load_idx, load_idx_labels, load_idx_pair};
pub use style::{
    apply_style, boundary_preprocess, boundary_to, sample_style_factors, StyleFactors, BOUNDARY_SIZE,
    MAX_WIDTH, MIN_SCALE,
};
pub use toy::make_toy_dataset;

/// Single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }
}

/// Square three-channel image stored as planar CHW.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn zeros(size: usize) -> Self {
        RgbImage {
            size,
            data: vec![0.0; 3 * size * size],
        }
    }

    /// Grey outline replicated on all three channels.
    pub fn from_gray(img: &GrayImage) -> Self {
        assert_eq!(img.width, img.height);
        let mut data = Vec::with_capacity(3 * img.pixels.len());
        for _ in 0..3 {
            data.extend_from_slice(&img.pixels);
        }
        RgbImage {
            size: img.width,
            data,
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.size * self.size;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn downsample_to(self, size: usize) -> Result<RgbImage> {
        if size == 0 || self.size % size != 0 {
            return Err(Error::Config(format!(
                "cannot downsample {} to {size}",
                self.size
            )));
        }
        let data = image_ops::box_downsample(&self.data, 3, self.size, self.size / size);
        Ok(RgbImage { size, data })
    }
}

/// Grey digits with class labels, as read from IDX files.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImageSet {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

impl RawImageSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols * labels.len() {
            return Err(Error::Shape(format!(
                "{} pixels do not make {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("pixel values outside [0, 1]".into()));
        }
        Ok(RawImageSet {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> GrayImage {
        let n = self.rows * self.cols;
        GrayImage {
            width: self.cols,
            height: self.rows,
            pixels: self.pixels[i * n..(i + 1) * n].to_vec(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> RawImageSet {
        let n = self.rows * self.cols;
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(&self.pixels[i * n..(i + 1) * n]);
        }
        RawImageSet {
            rows: self.rows,
            cols: self.cols,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// A stack of square CHW images with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub size: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageSet {
    pub fn empty(size: usize, channels: usize) -> Self {
        ImageSet {
            size,
            channels,
            data: Vec::new(),
        }
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.size * self.size
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.image_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, img: &RgbImage) {
        assert_eq!(img.size, self.size);
        assert_eq!(self.channels, 3);
        self.data.extend_from_slice(&img.data);
    }

    pub fn push_raw(&mut self, img: &[f32]) {
        assert_eq!(img.len(), self.image_len());
        self.data.extend_from_slice(img);
    }

    pub fn select(&self, indices: &[usize]) -> ImageSet {
        let mut out = ImageSet::empty(self.size, self.channels);
        for &i in indices {
            out.push_raw(self.image(i));
        }
        out
    }

    /// Batch tensor `(N, C, H, W)` with pixels mapped from `[0,1]` to `[-1,1]`.
    pub fn batch(&self, indices: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
        let n = self.image_len();
        let mut buf = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            buf.extend(self.image(i).iter().map(|&v| v * 2.0 - 1.0));
        }
        let t = Tensor::from_vec(buf, (indices.len(), self.channels, self.size, self.size), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    pub fn all(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx, dtype, device)
    }

    fn digest_into(&self, h: &mut Sha256) {
        h.update((self.size as u64).to_le_bytes());
        h.update((self.channels as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        self.digest_into(&mut h);
        hex::encode(h.finalize())
    }
}

/// Images with the style factors they were synthesized from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub images: ImageSet,
    pub factors: Vec<StyleFactors>,
    /// Index of the source image each sample was transformed from.
    pub sources: Vec<usize>,
}

impl LabeledSet {
    pub fn empty(size: usize) -> Self {
        LabeledSet {
            images: ImageSet::empty(size, 3),
            factors: Vec::new(),
            sources: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn targets(&self) -> Vec<[f64; 5]> {
        self.factors.iter().map(StyleFactors::targets).collect()
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        self.images.digest_into(&mut h);
        for (f, s) in self.factors.iter().zip(&self.sources) {
            h.update(f.width.to_le_bytes());
            h.update(f.scale.to_le_bytes());
            for c in f.color {
                h.update(c.to_le_bytes());
            }
            h.update((*s as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Unlabelled images (`y = 0`) plus a reference set (`y = 1`), and optional
/// held-out labeled sets for linear probes.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub image_size: usize,
    pub seed: u64,
    pub source: String,
    pub reference: ImageSet,
    pub unlabelled: LabeledSet,
    pub probe_fit: Option<LabeledSet>,
    pub probe_eval: Option<LabeledSet>,
}

impl DatasetPair {
    pub fn channels(&self) -> usize {
        3
    }

    /// Digest over every array and label; equal iff the corpora are identical.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.reference.sha256());
        h.update(self.unlabelled.sha256());
        for p in [&self.probe_fit, &self.probe_eval] {
            match p {
                Some(p) => h.update(p.sha256()),
                None => h.update(b"none"),
            }
        }
        hex::encode(h.finalize())
    }
}

fn check_output_size(size: usize) -> Result<usize> {
    if size == 0 || style::BOUNDARY_SIZE % size != 0 {
        return Err(Error::Config(format!(
            "output size {size} must divide {}",
            style::BOUNDARY_SIZE
        )));
    }
    Ok(size)
}

fn styled(boundary: &GrayImage, f: &StyleFactors, size: usize) -> Result<RgbImage> {
    apply_style(boundary, f)?.downsample_to(size)
}

/// Outline images for a raw set, computed once per source.
fn boundaries(raw: &RawImageSet, indices: &[usize]) -> Vec<GrayImage> {
    indices
        .iter()
        .map(|&i| boundary_preprocess(&raw.image(i)))
        .collect()
}

/// Transform each listed source `copies` times with fresh factors drawn from
/// per-sample substreams `stream_base + k`.
fn stylize(
    raw: &RawImageSet,
    indices: &[usize],
    copies: usize,
    seed: u64,
    stream: Stream,
    stream_base: u64,
    size: usize,
) -> Result<LabeledSet> {
    let outlines = boundaries(raw, indices);
    let mut out = LabeledSet::empty(size);
    let mut k = stream_base;
    for _ in 0..copies {
        for (b, &src) in outlines.iter().zip(indices) {
            let f = sample_style_factors(&mut substream(seed, stream, k));
            k += 1;
            out.images.push(&styled(b, &f, size)?);
            out.factors.push(f);
            out.sources.push(src);
        }
    }
    Ok(out)
}

fn reference_images(raw: &RawImageSet, indices: &[usize], size: usize) -> Result<ImageSet> {
    let mut set = ImageSet::empty(size, 3);
    for b in boundaries(raw, indices) {
        set.push(&RgbImage::from_gray(&b).downsample_to(size)?);
    }
    Ok(set)
}

/// Half the sources (outlined, grey) become the reference set; every other
/// source is styled twice with independent factors for the unlabelled set.
pub fn build_splits(raw: &RawImageSet, seed: u64, output_size: usize) -> Result<DatasetPair> {
    if raw.is_empty() {
        return Err(Error::Validation("raw image set is empty".into()));
    }
    let size = check_output_size(output_size)?;
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut substream(seed, Stream::Split, 0));
    let n_ref = raw.len() / 2;
    let (ref_idx, unl_idx) = order.split_at(n_ref);
    Ok(DatasetPair {
        image_size: size,
        seed,
        source: "mnist".into(),
        reference: reference_images(raw, ref_idx, size)?,
        unlabelled: stylize(raw, unl_idx, 2, seed, Stream::Style, 0, size)?,
        probe_fit: None,
        probe_eval: None,
    })
}

/// Options for [`synth_mnist`].
#[derive(Debug, Clone)]
pub struct MnistSynth {
    pub seed: u64,
    pub output_size: usize,
    /// Training images held out for probe sets when no test split exists.
    pub holdout: usize,
    /// Styled copies per held-out source image.
    pub probe_copies: usize,
}

impl Default for MnistSynth {
    fn default() -> Self {
        MnistSynth {
            seed: 0,
            output_size: 64,
            holdout: 1000,
            probe_copies: 2,
        }
    }
}

/// Build the full corpus: reference/unlabelled from `train`, and two
/// disjoint labeled probe sets from `test` (each image styled once) or,
/// without a test split, from `opts.holdout` held-out training images.
pub fn synth_mnist(
    train: &RawImageSet,
    test: Option<&RawImageSet>,
    opts: &MnistSynth,
) -> Result<DatasetPair> {
    let size = check_output_size(opts.output_size)?;
    let (model_raw, probe_raw, copies, origin) = match test {
        Some(test) => (train.clone(), test.clone(), 1, None),
        None => {
            if opts.holdout >= train.len() {
                return Err(Error::Config(format!(
                    "holdout {} leaves no training images out of {}",
                    opts.holdout,
                    train.len()
                )));
            }
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut substream(opts.seed, Stream::Split, 1));
            let (probe, model) = order.split_at(opts.holdout);
            let origin = (model.to_vec(), probe.to_vec());
            (train.subset(model), train.subset(probe), opts.probe_copies, Some(origin))
        }
    };
    let mut pair = build_splits(&model_raw, opts.seed, size)?;
    let (mut fit, mut eval) = probe_splits(&probe_raw, opts.seed, copies, size)?;
    // Report held-out sources as indices into `train`, not into the subsets.
    if let Some((model, probe)) = origin {
        let remap = |set: &mut LabeledSet, map: &[usize]| set.sources.iter_mut().for_each(|s| *s = map[*s]);
        remap(&mut pair.unlabelled, &model);
        remap(&mut fit, &probe);
        remap(&mut eval, &probe);
    }
    pair.probe_fit = Some(fit);
    pair.probe_eval = Some(eval);
    Ok(pair)
}

/// Disjoint halves of `raw`, each styled `copies` times.
pub fn probe_splits(
    raw: &RawImageSet,
    seed: u64,
    copies: usize,
    size: usize,
) -> Result<(LabeledSet, LabeledSet)> {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut substream(seed, Stream::Split, 2));
    let (a, b) = order.split_at(raw.len() / 2);
    let fit = stylize(raw, a, copies, seed, Stream::Probe, 0, size)?;
    let eval = stylize(raw, b, copies, seed, Stream::Probe, 1 << 40, size)?;
    Ok((fit, eval))
}
