use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Rng, Stream};

use super::layers::{flatten, leaky_gain, leaky_relu, pixel_norm, upsample2, Conv2d, Linear};
use super::params::{Group, ParamStore};
use super::{apply_block_mask, missing, GaussianParams, LatentModel, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Shape of the convolutional networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub image_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Output width of the first convolution; doubles per block up to
    /// `max_channels`.
    pub base_channels: usize,
    pub max_channels: usize,
    /// Downsampling blocks in encoders (and upsampling blocks in the
    /// generator).
    pub num_blocks: usize,
    pub d_z: usize,
    pub d_e: usize,
    /// Width of the fully connected layers.
    pub hidden: usize,
    pub leaky_slope: f64,
    /// Block dropout rate on discriminator inputs in training mode.
    pub disc_dropout: f64,
    pub precision: Precision,
}

fn default_channels() -> usize {
    3
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_size: 32,
            channels: 3,
            base_channels: 16,
            max_channels: 128,
            num_blocks: 3,
            d_z: 32,
            d_e: 32,
            hidden: 256,
            leaky_slope: 0.2,
            disc_dropout: 0.25,
            precision: Precision::F32,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.channels == 0 {
            return bad("image size and channel count must be positive".into());
        }
        if self.num_blocks == 0 {
            return bad("at least one convolutional block is required".into());
        }
        if self.num_blocks >= usize::BITS as usize || self.image_size % (1 << self.num_blocks) != 0 {
            return bad(format!(
                "{} downsampling blocks do not divide a {}px image",
                self.num_blocks, self.image_size
            ));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return bad(format!(
                "channel widths {}..{} are invalid",
                self.base_channels, self.max_channels
            ));
        }
        if self.d_z == 0 || self.d_e == 0 || self.hidden == 0 {
            return bad("latent and hidden sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad(format!("leaky slope {} outside [0, 1)", self.leaky_slope));
        }
        if !(0.0..1.0).contains(&self.disc_dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.disc_dropout));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }

    fn bottom(&self) -> usize {
        self.image_size >> self.num_blocks
    }

    fn flat(&self) -> usize {
        self.width(self.num_blocks - 1) * self.bottom() * self.bottom()
    }
}

struct Init<'a> {
    cfg: &'a ArchConfig,
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
    dtype: DType,
    device: &'a Device,
}

impl Init<'_> {
    fn linear(&mut self, g: Group, name: &str, io: (usize, usize), gain: f64) -> Result<Linear> {
        Linear::new(self.store, g, name, io, gain, self.rng, self.dtype, self.device)
    }

    fn conv(&mut self, g: Group, name: &str, shape: (usize, usize, usize), gain: f64) -> Result<Conv2d> {
        Conv2d::new(self.store, g, name, shape, gain, self.rng, self.dtype, self.device)
    }
}

/// Convolutional image trunk ending in a `hidden`-wide feature vector. Block
/// `i` runs at resolution `size / 2^i`: conv, leaky rectifier, 2x2 average
/// pool.
struct Trunk {
    blocks: Vec<Conv2d>,
    fc: Linear,
    slope: f64,
}

impl Trunk {
    fn new(init: &mut Init, g: Group, name: &str) -> Result<Self> {
        let cfg = init.cfg.clone();
        let gain = leaky_gain(cfg.leaky_slope);
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for i in 0..cfg.num_blocks {
            let c_in = if i == 0 { cfg.channels } else { cfg.width(i - 1) };
            blocks.push(init.conv(g, &format!("{name}.down{i}"), (c_in, cfg.width(i), 3), gain)?);
        }
        let fc = init.linear(g, &format!("{name}.fc"), (cfg.flat(), cfg.hidden), gain)?;
        Ok(Trunk {
            blocks,
            fc,
            slope: cfg.leaky_slope,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = leaky_relu(&b.forward(&h)?, self.slope)?.avg_pool2d(2)?;
        }
        leaky_relu(&self.fc.forward(&flatten(&h)?)?, self.slope)
    }
}

struct Encoder {
    trunk: Trunk,
    head: Linear,
}

impl Encoder {
    fn new(init: &mut Init, g: Group, d: usize) -> Result<Self> {
        let trunk = Trunk::new(init, g, "enc")?;
        let head = init.linear(g, "head", (init.cfg.hidden, 2 * d), 1.0)?;
        Ok(Encoder { trunk, head })
    }

    fn forward(&self, x: &Tensor) -> Result<GaussianParams> {
        GaussianParams::from_head(&self.head.forward(&self.trunk.forward(x)?)?)
    }
}

struct Generator {
    fc: Linear,
    blocks: Vec<Conv2d>,
    cfg: ArchConfig,
}

impl Generator {
    fn new(init: &mut Init) -> Result<Self> {
        let cfg = init.cfg.clone();
        let g = Group::Generator;
        let gain = leaky_gain(cfg.leaky_slope);
        let fc = init.linear(g, "gen.fc", (cfg.d_z + cfg.d_e, cfg.flat()), gain)?;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for i in (0..cfg.num_blocks).rev() {
            let (c_out, gain) = if i == 0 {
                (cfg.channels, 1.0)
            } else {
                (cfg.width(i - 1), gain)
            };
            blocks.push(init.conv(g, &format!("gen.up{i}"), (cfg.width(i), c_out, 3), gain)?);
        }
        Ok(Generator { fc, blocks, cfg })
    }

    /// Fully connected layer to the smallest feature map, then per block:
    /// nearest upsample, conv, leaky rectifier, pixel normalisation. The last
    /// block emits image channels through `tanh` instead.
    fn forward(&self, latent: &Tensor) -> Result<Tensor> {
        let c = &self.cfg;
        let n = latent.dim(0)?;
        let s = c.bottom();
        let h = self.fc.forward(latent)?.reshape((n, c.width(c.num_blocks - 1), s, s))?;
        let mut h = pixel_norm(&leaky_relu(&h, c.leaky_slope)?)?;
        let last = self.blocks.len() - 1;
        for (k, b) in self.blocks.iter().enumerate() {
            let y = b.forward(&upsample2(&h)?)?;
            h = if k == last {
                y.tanh()?
            } else {
                pixel_norm(&leaky_relu(&y, c.leaky_slope)?)?
            };
        }
        Ok(h)
    }
}

struct Discriminator {
    trunk: Trunk,
    z_fc: Linear,
    e_fc: Option<Linear>,
    mix: Linear,
    out: Linear,
    slope: f64,
}

impl Discriminator {
    fn new(init: &mut Init, g: Group, with_e: bool) -> Result<Self> {
        let cfg = init.cfg.clone();
        let gain = leaky_gain(cfg.leaky_slope);
        let trunk = Trunk::new(init, g, "img")?;
        let z_fc = init.linear(g, "z_fc", (cfg.d_z, cfg.hidden), gain)?;
        let e_fc = if with_e {
            Some(init.linear(g, "e_fc", (cfg.d_e, cfg.hidden), gain)?)
        } else {
            None
        };
        let blocks = if with_e { 3 } else { 2 };
        let mix = init.linear(g, "mix", (blocks * cfg.hidden, cfg.hidden), gain)?;
        let out = init.linear(g, "out", (cfg.hidden, 1), 1.0)?;
        Ok(Discriminator {
            trunk,
            z_fc,
            e_fc,
            mix,
            out,
            slope: cfg.leaky_slope,
        })
    }

    fn forward(&self, x: &Tensor, z: &Tensor, e: Option<&Tensor>, mask: Option<&Tensor>) -> Result<Tensor> {
        let mut blocks = vec![
            self.trunk.forward(x)?,
            leaky_relu(&self.z_fc.forward(z)?, self.slope)?,
        ];
        if let (Some(fc), Some(e)) = (&self.e_fc, e) {
            blocks.push(leaky_relu(&fc.forward(e)?, self.slope)?);
        }
        let blocks = apply_block_mask(&blocks, mask)?;
        let h = leaky_relu(&self.mix.forward(&Tensor::cat(&blocks, 1)?)?, self.slope)?;
        Ok(self.out.forward(&h)?.squeeze(1)?)
    }
}

/// Convolutional encoders, generator and discriminators.
pub struct ConvModel {
    cfg: ArchConfig,
    variant: Variant,
    device: Device,
    store: ParamStore,
    enc_z: Encoder,
    enc_e: Option<Encoder>,
    gen: Generator,
    e_ref: Option<candle_core::Var>,
    disc_joint: Option<Discriminator>,
    disc_ref: Option<Discriminator>,
}

impl ConvModel {
    /// Fresh parameters drawn from the `Init` substream of `seed`. The
    /// reference code starts at zero.
    pub fn new(cfg: &ArchConfig, variant: Variant, seed: u64) -> Result<Self> {
        Self::on_device(cfg, variant, seed, &Device::Cpu)
    }

    pub fn on_device(cfg: &ArchConfig, variant: Variant, seed: u64, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = substream(seed, Stream::Init, 0);
        let mut init = Init {
            cfg,
            store: &mut store,
            rng: &mut rng,
            dtype: cfg.precision.dtype(),
            device,
        };
        let (enc_z, enc_e) = if variant.has_reference() {
            (
                Encoder::new(&mut init, Group::EncoderZ, cfg.d_z)?,
                Some(Encoder::new(&mut init, Group::EncoderE, cfg.d_e)?),
            )
        } else {
            (Encoder::new(&mut init, Group::EncoderZ, cfg.d_z + cfg.d_e)?, None)
        };
        let gen = Generator::new(&mut init)?;
        let (disc_joint, disc_ref) = if variant.has_discriminators() {
            (
                Some(Discriminator::new(&mut init, Group::JointDisc, true)?),
                Some(Discriminator::new(&mut init, Group::RefDisc, false)?),
            )
        } else {
            (None, None)
        };
        let e_ref = if variant.has_reference() {
            let zero = Tensor::zeros((1, cfg.d_e), cfg.precision.dtype(), device)?;
            Some(store.add(Group::Generator, "e_ref", zero)?)
        } else {
            None
        };
        Ok(ConvModel {
            cfg: cfg.clone(),
            variant,
            device: device.clone(),
            store,
            enc_z,
            enc_e,
            gen,
            e_ref,
            disc_joint,
            disc_ref,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    fn check_image(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let s = self.cfg.image_size;
        if (c, h, w) != (self.cfg.channels, s, s) {
            return Err(Error::Shape(format!(
                "model expects {}x{s}x{s} images, got {c}x{h}x{w}",
                self.cfg.channels
            )));
        }
        Ok(())
    }
}

impl LatentModel for ConvModel {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn dtype(&self) -> DType {
        self.cfg.precision.dtype()
    }

    fn device(&self) -> &Device {
        &self.device
    }

    fn latent_dims(&self) -> (usize, usize) {
        (self.cfg.d_z, self.cfg.d_e)
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        (self.cfg.channels, self.cfg.image_size, self.cfg.image_size)
    }

    fn encode_z(&self, x: &Tensor) -> Result<GaussianParams> {
        self.check_image(x)?;
        let q = self.enc_z.forward(x)?;
        match self.enc_e {
            Some(_) => Ok(q),
            None => q.narrow(0, self.cfg.d_z),
        }
    }

    fn encode_e(&self, x: &Tensor) -> Result<GaussianParams> {
        self.check_image(x)?;
        match &self.enc_e {
            Some(enc) => enc.forward(x),
            None => self.enc_z.forward(x)?.narrow(self.cfg.d_z, self.cfg.d_e),
        }
    }

    fn encode_joint(&self, x: &Tensor) -> Result<GaussianParams> {
        self.check_image(x)?;
        match &self.enc_e {
            Some(enc) => GaussianParams::concat(&[&self.enc_z.forward(x)?, &enc.forward(x)?]),
            None => self.enc_z.forward(x),
        }
    }

    fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let d = latent.dim(1)?;
        if d != self.cfg.d_z + self.cfg.d_e {
            return Err(Error::Shape(format!(
                "generator expects {}-dim codes, got {d}",
                self.cfg.d_z + self.cfg.d_e
            )));
        }
        self.gen.forward(latent)
    }

    fn e_ref(&self) -> Result<Tensor> {
        self.e_ref
            .as_ref()
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| missing("reference code", self.variant))
    }

    fn disc_joint(&self, x: &Tensor, z: &Tensor, e: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let d = self
            .disc_joint
            .as_ref()
            .ok_or_else(|| missing("joint discriminator", self.variant))?;
        d.forward(x, z, Some(e), mask)
    }

    fn disc_ref(&self, x: &Tensor, z: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let d = self
            .disc_ref
            .as_ref()
            .ok_or_else(|| missing("reference discriminator", self.variant))?;
        d.forward(x, z, None, mask)
    }

    fn disc_dropout(&self) -> f64 {
        self.cfg.disc_dropout
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }
}
