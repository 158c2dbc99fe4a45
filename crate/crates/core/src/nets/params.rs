use std::fmt;

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Optimizer partition of the trainable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// `psi_z`: the common-factor encoder.
    EncoderZ,
    /// `psi_e`: the target-factor encoder.
    EncoderE,
    /// `theta`: the generator, plus the reference code.
    Generator,
    /// `xi`: the joint discriminator over `(x, z, e)`.
    JointDisc,
    /// `gamma`: the reference discriminator over `(x, z)`.
    RefDisc,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::EncoderZ,
        Group::EncoderE,
        Group::Generator,
        Group::JointDisc,
        Group::RefDisc,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::EncoderZ => "psi_z",
            Group::EncoderE => "psi_e",
            Group::Generator => "theta",
            Group::JointDisc => "xi",
            Group::RefDisc => "gamma",
        }
    }

    pub fn is_discriminator(self) -> bool {
        matches!(self, Group::JointDisc | Group::RefDisc)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub var: Var,
}

/// Ordered registry of every trainable tensor of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register `init` under `<group>.<name>`.
    pub fn add(&mut self, group: Group, name: &str, init: Tensor) -> Result<Var> {
        let full = format!("{}.{name}", group.prefix());
        if self.params.iter().any(|p| p.name == full) {
            return Err(Error::Config(format!("duplicate parameter {full}")));
        }
        let var = Var::from_tensor(&init)?;
        self.params.push(Param {
            name: full,
            group,
            var: var.clone(),
        });
        Ok(var)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn group(&self, g: Group) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(move |p| p.group == g)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn has_group(&self, g: Group) -> bool {
        self.params.iter().any(|p| p.group == g)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.var.elem_count()).sum()
    }

    /// Digest of every parameter value in registration order.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            let flat = p.var.as_tensor().flatten_all()?.to_dtype(DType::F64)?;
            for v in flat.to_vec1::<f64>()? {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Overwrite values from `(name, tensor)` pairs; every parameter must be
    /// covered with a matching shape.
    pub fn load<'a>(&self, mut lookup: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        for p in &self.params {
            let src = lookup(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            if src.dims() != p.var.dims() {
                return Err(Error::Checkpoint(format!(
                    "{}: stored shape {:?}, model expects {:?}",
                    p.name,
                    src.dims(),
                    p.var.dims()
                )));
            }
            p.var.set(&src.to_dtype(p.var.dtype())?)?;
        }
        Ok(())
    }

    pub fn device(&self) -> Device {
        self.params
            .first()
            .map(|p| p.var.device().clone())
            .unwrap_or(Device::Cpu)
    }
}
