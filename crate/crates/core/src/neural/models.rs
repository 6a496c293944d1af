//! The sampler networks for the sphere point robot.
//!
//! The scene encoder reads the 40³ occupancy grid as a 40-channel 40×40
//! image and compresses it to a 128-dimensional latent `z`. The generator
//! trunk maps `z ⊕ q_curr ⊕ q_targ` to a next configuration; dropout stays
//! active at sampling time, which makes the generator stochastic. The
//! discriminator maps `z ⊕ q` to a predicted distance from the manifold.

use rand::{Rng, RngCore, SeedableRng};

use super::layers::{LayerSpec, Mode, Sequential};
use super::tensor::Tensor;
use crate::environments::{VoxelGrid, VOXEL_RESOLUTION};
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 128;
pub const TRUNK_DROPOUT: f64 = 0.5;

fn linear(in_features: usize, out_features: usize) -> LayerSpec {
    LayerSpec::Linear {
        in_features,
        out_features,
    }
}

pub fn encoder_layers(channels: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d {
            in_channels: channels,
            out_channels: 16,
            kernel: 5,
            stride: 2,
        },
        LayerSpec::Prelu,
        LayerSpec::Conv2d {
            in_channels: 16,
            out_channels: 8,
            kernel: 3,
            stride: 1,
        },
        LayerSpec::Prelu,
        LayerSpec::Maxpool2d { size: 2 },
        LayerSpec::Flatten,
        linear(8 * 8 * 8, LATENT_DIM),
    ]
}

pub fn trunk_layers(dof: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let sizes = [LATENT_DIM + 2 * dof, 896, 512, 256, 128];
    for w in sizes.windows(2) {
        layers.push(linear(w[0], w[1]));
        layers.push(LayerSpec::Prelu);
        layers.push(LayerSpec::Dropout { p: TRUNK_DROPOUT });
    }
    layers.push(linear(128, 64));
    layers.push(LayerSpec::Prelu);
    layers.push(linear(64, dof));
    layers
}

pub fn discriminator_layers(dof: usize) -> Vec<LayerSpec> {
    vec![
        linear(LATENT_DIM + dof, 256),
        LayerSpec::Prelu,
        linear(256, 256),
        LayerSpec::Prelu,
        linear(256, 1),
    ]
}

/// Occupancy grid as a `[1, 40, 40, 40]` encoder input.
pub fn voxel_input(grid: &VoxelGrid) -> Result<Tensor> {
    let r = grid.resolution();
    Tensor::new(vec![1, r, r, r], grid.to_f64())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub encoder: Sequential,
    pub trunk: Sequential,
}

impl Generator {
    /// The sphere architecture with zero parameters.
    pub fn zeros(dof: usize) -> Self {
        let r = VOXEL_RESOLUTION;
        Self {
            encoder: Sequential::new(vec![r, r, r], encoder_layers(r))
                .expect("encoder shapes compose"),
            trunk: Sequential::new(vec![LATENT_DIM + 2 * dof], trunk_layers(dof))
                .expect("trunk shapes compose"),
        }
    }

    pub fn new<R: Rng + ?Sized>(dof: usize, rng: &mut R) -> Self {
        let mut g = Self::zeros(dof);
        g.encoder.init(rng);
        g.trunk.init(rng);
        g
    }

    pub fn from_parts(encoder: Sequential, trunk: Sequential) -> Result<Self> {
        if encoder.output_shape() != [LATENT_DIM]
            || trunk.input_shape().len() != 1
            || trunk.input_shape()[0] != LATENT_DIM + 2 * trunk.output_shape()[0]
        {
            return Err(Error::Shape("encoder and trunk do not fit together".into()));
        }
        Ok(Self { encoder, trunk })
    }

    pub fn dof(&self) -> usize {
        self.trunk.output_shape()[0]
    }

    /// Scene latent for a `[1, C, H, W]` voxel tensor.
    pub fn encode(&self, voxels: &Tensor) -> Result<Vec<f64>> {
        Ok(self.encoder.infer(voxels)?.into_data())
    }

    pub fn encode_grid(&self, grid: &VoxelGrid) -> Result<Vec<f64>> {
        self.encode(&voxel_input(grid)?)
    }

    /// One trunk input row `z ⊕ q_curr ⊕ q_targ`.
    pub fn trunk_row(&self, z: &[f64], q_curr: &[f64], q_targ: &[f64]) -> Result<Vec<f64>> {
        let n = self.dof();
        if z.len() != LATENT_DIM || q_curr.len() != n || q_targ.len() != n {
            return Err(Error::Shape(format!(
                "generator expects z[{LATENT_DIM}], q_curr[{n}], q_targ[{n}]"
            )));
        }
        let mut row = Vec::with_capacity(LATENT_DIM + 2 * n);
        row.extend_from_slice(z);
        row.extend_from_slice(q_curr);
        row.extend_from_slice(q_targ);
        Ok(row)
    }

    /// Next-configuration predictions for a batch of trunk rows.
    pub fn predict_rows(
        &self,
        rows: &[Vec<f64>],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<f64>>> {
        let input = Tensor::from_rows(rows)?;
        let out = self.trunk.forward(&input, mode, rng)?.into_output();
        Ok((0..out.batch()).map(|b| out.row(b).to_vec()).collect())
    }

    pub fn predict(
        &self,
        z: &[f64],
        q_curr: &[f64],
        q_targ: &[f64],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let row = self.trunk_row(z, q_curr, q_targ)?;
        Ok(self.predict_rows(&[row], mode, rng)?.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Sequential,
}

impl Discriminator {
    pub fn zeros(dof: usize) -> Self {
        Self {
            net: Sequential::new(vec![LATENT_DIM + dof], discriminator_layers(dof))
                .expect("discriminator shapes compose"),
        }
    }

    pub fn new<R: Rng + ?Sized>(dof: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(dof);
        d.net.init(rng);
        d
    }

    pub fn from_net(net: Sequential) -> Result<Self> {
        if net.output_shape() != [1] || net.input_shape().len() != 1 {
            return Err(Error::Shape("discriminator must map a vector to a scalar".into()));
        }
        Ok(Self { net })
    }

    pub fn dof(&self) -> usize {
        self.net.input_shape()[0] - LATENT_DIM
    }

    fn input(&self, z: &[f64], q: &[f64]) -> Result<Tensor> {
        if z.len() != LATENT_DIM || q.len() != self.dof() {
            return Err(Error::Shape("discriminator input mismatch".into()));
        }
        let mut row = z.to_vec();
        row.extend_from_slice(q);
        Tensor::new(vec![1, row.len()], row)
    }

    /// Predicted distance of `q` from the manifold.
    pub fn predict(&self, z: &[f64], q: &[f64]) -> Result<f64> {
        Ok(self.net.infer(&self.input(z, q)?)?.data()[0])
    }

    /// Prediction and its gradient with respect to `q`.
    pub fn predict_with_gradient(&self, z: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let x = self.input(z, q)?;
        // No dropout in this network, so the rng is never drawn from.
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let fwd = self.net.forward(&x, Mode::Deterministic, &mut unused)?;
        let value = fwd.output().data()[0];
        let (_, gx) = self
            .net
            .backward(&fwd, &Tensor::new(vec![1, 1], vec![1.0])?, true)?;
        let gx = gx.expect("requested");
        Ok((value, gx.data()[LATENT_DIM..].to_vec()))
    }
}
