//! Binary checkpoints of trained networks and their optimizer state.
//!
//! Byte layout, all integers and reals little-endian:
//!
//! ```text
//! magic            4 bytes  "CMPK"
//! version          u32      1
//! header_len       u32      byte length of the header
//! header           JSON     CheckpointHeader
//! for each net in header order:
//!     param_count  u64
//!     params       param_count × f64
//!     if the net's has_accum:
//!         accum_count  u64
//!         accum        accum_count × f64
//! ```
//!
//! The header lists every network with its per-sample input shape and layer
//! specs, so a checkpoint can be rebuilt without knowing the architecture.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{LayerSpec, Sequential};
use super::models::{Discriminator, Generator};
use super::optim::Adagrad;
use super::train::{DiscriminatorTrainer, GeneratorTrainer, LossCurve};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CMPK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const ENCODER: &str = "encoder";
pub const TRUNK: &str = "trunk";
pub const DISCRIMINATOR: &str = "discriminator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetHeader {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub has_accum: bool,
    #[serde(default)]
    pub lr: f64,
    #[serde(default)]
    pub epochs_done: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub seed: u64,
    pub nets: Vec<NetHeader>,
    #[serde(default)]
    pub generator_losses: LossCurve,
    #[serde(default)]
    pub discriminator_losses: LossCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetEntry {
    pub name: String,
    pub net: Sequential,
    pub opt: Option<Adagrad>,
    pub epochs_done: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub seed: u64,
    pub nets: Vec<NetEntry>,
    pub generator_losses: LossCurve,
    pub discriminator_losses: LossCurve,
}

fn write_array<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_array<R: Read>(r: &mut R, expected: usize) -> Result<Vec<f64>> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let n = u64::from_le_bytes(b) as usize;
    if n != expected {
        return Err(Error::Format(format!(
            "array holds {n} values, the header implies {expected}"
        )));
    }
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl Checkpoint {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    /// Adds or replaces the network called `name`.
    pub fn put(&mut self, name: &str, net: &Sequential, opt: Option<&Adagrad>, epochs_done: usize) {
        let entry = NetEntry {
            name: name.to_string(),
            net: net.clone(),
            opt: opt.cloned(),
            epochs_done,
        };
        match self.nets.iter_mut().find(|e| e.name == name) {
            Some(e) => *e = entry,
            None => self.nets.push(entry),
        }
    }

    pub fn get(&self, name: &str) -> Option<&NetEntry> {
        self.nets.iter().find(|e| e.name == name)
    }

    pub fn put_generator(&mut self, gen: &Generator, trainer: Option<&GeneratorTrainer>) {
        let epochs = trainer.map_or(0, |t| t.epochs_done);
        self.put(ENCODER, &gen.encoder, trainer.map(|t| &t.encoder_opt), epochs);
        self.put(TRUNK, &gen.trunk, trainer.map(|t| &t.trunk_opt), epochs);
    }

    pub fn put_discriminator(&mut self, disc: &Discriminator, trainer: Option<&DiscriminatorTrainer>) {
        self.put(
            DISCRIMINATOR,
            &disc.net,
            trainer.map(|t| &t.opt),
            trainer.map_or(0, |t| t.epochs_done),
        );
    }

    pub fn generator(&self) -> Result<Generator> {
        let (Some(enc), Some(trunk)) = (self.get(ENCODER), self.get(TRUNK)) else {
            return Err(Error::Format("checkpoint holds no generator".into()));
        };
        Generator::from_parts(enc.net.clone(), trunk.net.clone())
    }

    /// Optimizer state for resuming generator training, if it was saved.
    pub fn generator_trainer(&self) -> Option<GeneratorTrainer> {
        let enc = self.get(ENCODER)?;
        let trunk = self.get(TRUNK)?;
        Some(GeneratorTrainer {
            encoder_opt: enc.opt.clone()?,
            trunk_opt: trunk.opt.clone()?,
            epochs_done: trunk.epochs_done,
        })
    }

    pub fn discriminator(&self) -> Result<Option<Discriminator>> {
        self.get(DISCRIMINATOR)
            .map(|e| Discriminator::from_net(e.net.clone()))
            .transpose()
    }

    pub fn discriminator_trainer(&self) -> Option<DiscriminatorTrainer> {
        let e = self.get(DISCRIMINATOR)?;
        Some(DiscriminatorTrainer {
            opt: e.opt.clone()?,
            epochs_done: e.epochs_done,
            latent_noise: 0.0,
        })
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            seed: self.seed,
            nets: self
                .nets
                .iter()
                .map(|e| NetHeader {
                    name: e.name.clone(),
                    input_shape: e.net.input_shape().to_vec(),
                    layers: e.net.layers().to_vec(),
                    has_accum: e.opt.is_some(),
                    lr: e.opt.as_ref().map_or(0.0, |o| o.lr),
                    epochs_done: e.epochs_done,
                })
                .collect(),
            generator_losses: self.generator_losses.clone(),
            discriminator_losses: self.discriminator_losses.clone(),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::to_vec(&self.header())?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for e in &self.nets {
            write_array(w, e.net.params())?;
            if let Some(opt) = &e.opt {
                write_array(w, &opt.accum)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(r)? as usize;
        let mut raw = vec![0u8; len];
        r.read_exact(&mut raw)?;
        let header: CheckpointHeader = serde_json::from_slice(&raw)?;
        let mut nets = Vec::with_capacity(header.nets.len());
        for h in header.nets {
            let mut net = Sequential::new(h.input_shape, h.layers)?;
            let n = net.param_count();
            net.set_params(read_array(r, n)?)?;
            let opt = if h.has_accum {
                let mut opt = Adagrad::new(n, h.lr);
                opt.accum = read_array(r, n)?;
                Some(opt)
            } else {
                None
            };
            nets.push(NetEntry {
                name: h.name,
                net,
                opt,
                epochs_done: h.epochs_done,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            seed: header.seed,
            nets,
            generator_losses: header.generator_losses,
            discriminator_losses: header.discriminator_losses,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
