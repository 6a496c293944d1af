//! Layer stacks with hand-written reverse-mode gradients.
//!
//! Parameters of a stack live in one flat array, layer by layer:
//!
//! * linear: weight `[in, out]` (row `i` holds the weights leaving input `i`),
//!   then bias `[out]`
//! * conv2d: weight `[out_channels, in_channels, kernel, kernel]`, then bias
//!   `[out_channels]`
//! * prelu: one slope
//!
//! Every layer processes batch rows independently with the same loop order,
//! so a batched forward pass equals the per-row passes bit for bit.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Prelu,
    Dropout {
        p: f64,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Maxpool2d {
        size: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Linear {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            LayerSpec::Prelu => 1,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::Dropout { .. } | LayerSpec::Maxpool2d { .. } | LayerSpec::Flatten => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || Error::Shape(format!("{self:?} cannot take input {input:?}"));
        match *self {
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(mismatch());
                }
                Ok(vec![out_features])
            }
            LayerSpec::Prelu => Ok(input.to_vec()),
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Shape(format!("dropout probability {p} not in [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => match *input {
                [c, h, w] if c == in_channels && h >= kernel && w >= kernel && stride > 0 => {
                    Ok(vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ])
                }
                _ => Err(mismatch()),
            },
            LayerSpec::Maxpool2d { size } => match *input {
                [c, h, w] if size > 0 && h >= size && w >= size => {
                    Ok(vec![c, h / size, w / size])
                }
                _ => Err(mismatch()),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some((in_features, out_features)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * kernel * kernel, out_channels * kernel * kernel)),
            _ => None,
        }
    }
}

/// Dropout behavior of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; activations kept for a backward pass.
    Train,
    /// Dropout active at inference time.
    Stochastic,
    /// Dropout is the identity.
    Deterministic,
}

/// Activations of one forward pass, input first.
#[derive(Debug, Clone)]
pub struct Forward {
    pub activations: Vec<Tensor>,
    /// Per layer: the dropout multipliers used, if the layer dropped anything.
    pub masks: Vec<Option<Vec<f64>>>,
}

impl Forward {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("input is always stored")
    }

    pub fn into_output(mut self) -> Tensor {
        self.activations.pop().expect("input is always stored")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl Sequential {
    /// A stack with all parameters zero. Fails if the layer shapes do not
    /// compose starting from the per-sample `input_shape`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = vec![input_shape.clone()];
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for layer in &layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
            offsets.push(total);
            total += layer.param_count();
        }
        offsets.push(total);
        Ok(Self {
            layers,
            input_shape,
            shapes,
            offsets,
            params: vec![0.0; total],
        })
    }

    /// Uniform weights in ±√(6/(fan_in+fan_out)), zero biases, PReLU slopes
    /// at [`PRELU_INIT`].
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (l, layer) in self.layers.iter().enumerate() {
            let p = &mut self.params[self.offsets[l]..self.offsets[l + 1]];
            if let Some((fan_in, fan_out)) = layer.fans() {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n_bias = match *layer {
                    LayerSpec::Linear { out_features, .. } => out_features,
                    LayerSpec::Conv2d { out_channels, .. } => out_channels,
                    _ => 0,
                };
                let n_weight = p.len() - n_bias;
                for w in &mut p[..n_weight] {
                    *w = rng.random_range(-bound..bound);
                }
                p[n_weight..].fill(0.0);
            } else if *layer == LayerSpec::Prelu {
                p[0] = PRELU_INIT;
            }
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Parameter slice of layer `l`.
    pub fn layer_params(&self, l: usize) -> &[f64] {
        &self.params[self.offsets[l]..self.offsets[l + 1]]
    }

    pub fn layer_params_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.params[self.offsets[l]..self.offsets[l + 1]]
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != self.input_shape.len() + 1
            || input.shape()[1..] != self.input_shape[..]
        {
            return Err(Error::Shape(format!(
                "expected [batch, {:?}], got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Forward> {
        self.check_input(input)?;
        let batch = input.batch();
        let mut masks = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mask = match (layer, mode) {
                (LayerSpec::Dropout { p }, Mode::Train | Mode::Stochastic) if *p > 0.0 => {
                    let len = batch * self.shapes[l].iter().product::<usize>();
                    Some(dropout_mask(len, *p, rng))
                }
                _ => None,
            };
            masks.push(mask);
        }
        self.run(input, masks)
    }

    /// Forward pass with caller-supplied dropout multipliers (one entry per
    /// layer; `None` makes a dropout layer the identity).
    pub fn forward_with_masks(
        &self,
        input: &Tensor,
        masks: Vec<Option<Vec<f64>>>,
    ) -> Result<Forward> {
        self.check_input(input)?;
        if masks.len() != self.layers.len() {
            return Err(Error::Shape("one mask entry per layer is required".into()));
        }
        self.run(input, masks)
    }

    /// Deterministic-mode output.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        Ok(self.run(input, vec![None; self.layers.len()])?.into_output())
    }

    fn run(&self, input: &Tensor, masks: Vec<Option<Vec<f64>>>) -> Result<Forward> {
        let batch = input.batch();
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = activations.last().expect("non-empty");
            let mut out_shape = vec![batch];
            out_shape.extend_from_slice(&self.shapes[l + 1]);
            let p = self.layer_params(l);
            let data = match *layer {
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => linear_forward(x.data(), p, batch, in_features, out_features),
                LayerSpec::Prelu => {
                    let a = p[0];
                    x.data()
                        .iter()
                        .map(|&v| if v > 0.0 { v } else { a * v })
                        .collect()
                }
                LayerSpec::Dropout { .. } => match &masks[l] {
                    Some(m) => {
                        if m.len() != x.data().len() {
                            return Err(Error::Shape("dropout mask length mismatch".into()));
                        }
                        x.data().iter().zip(m).map(|(v, m)| v * m).collect()
                    }
                    None => x.data().to_vec(),
                },
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => conv_forward(
                    x.data(),
                    p,
                    batch,
                    [in_channels, self.shapes[l][1], self.shapes[l][2]],
                    [out_channels, self.shapes[l + 1][1], self.shapes[l + 1][2]],
                    kernel,
                    stride,
                ),
                LayerSpec::Maxpool2d { size } => {
                    maxpool_forward(x.data(), batch, &self.shapes[l], &self.shapes[l + 1], size)
                }
                LayerSpec::Flatten => x.data().to_vec(),
            };
            activations.push(Tensor::new(out_shape, data)?);
        }
        Ok(Forward { activations, masks })
    }

    /// Gradients of a scalar loss given `grad_out = dL/d(output)`. Returns the
    /// parameter gradient and, if requested, the input gradient.
    pub fn backward(
        &self,
        fwd: &Forward,
        grad_out: &Tensor,
        want_input_grad: bool,
    ) -> Result<(Vec<f64>, Option<Tensor>)> {
        if grad_out.shape() != fwd.output().shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match output {:?}",
                grad_out.shape(),
                fwd.output().shape()
            )));
        }
        let batch = grad_out.batch();
        let mut grads = vec![0.0; self.params.len()];
        let mut g = grad_out.data().to_vec();
        for l in (0..self.layers.len()).rev() {
            let x = fwd.activations[l].data();
            let p = self.layer_params(l);
            let gp = &mut grads[self.offsets[l]..self.offsets[l + 1]];
            let need_gx = l > 0 || want_input_grad;
            g = match self.layers[l] {
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => linear_backward(x, p, &g, gp, batch, in_features, out_features, need_gx),
                LayerSpec::Prelu => {
                    let a = p[0];
                    let mut ga = 0.0;
                    let gx = x
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| {
                            if v > 0.0 {
                                gv
                            } else {
                                ga += gv * v;
                                a * gv
                            }
                        })
                        .collect();
                    gp[0] = ga;
                    gx
                }
                LayerSpec::Dropout { .. } => match &fwd.masks[l] {
                    Some(m) => g.iter().zip(m).map(|(gv, m)| gv * m).collect(),
                    None => g,
                },
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => conv_backward(
                    x,
                    p,
                    &g,
                    gp,
                    batch,
                    [in_channels, self.shapes[l][1], self.shapes[l][2]],
                    [out_channels, self.shapes[l + 1][1], self.shapes[l + 1][2]],
                    kernel,
                    stride,
                    need_gx,
                ),
                LayerSpec::Maxpool2d { size } => {
                    maxpool_backward(x, &g, batch, &self.shapes[l], &self.shapes[l + 1], size)
                }
                LayerSpec::Flatten => g,
            };
        }
        let input_grad = if want_input_grad {
            let mut shape = vec![batch];
            shape.extend_from_slice(&self.input_shape);
            Some(Tensor::new(shape, g)?)
        } else {
            None
        };
        Ok((grads, input_grad))
    }
}

/// Inverted-dropout multipliers: `1/(1-p)` with probability `1-p`, else 0.
pub fn dropout_mask(len: usize, p: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 })
        .collect()
}

fn linear_forward(x: &[f64], p: &[f64], batch: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let (w, bias) = p.split_at(n_in * n_out);
    let mut y = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    for i in 0..n_in {
        let w_row = &w[i * n_out..(i + 1) * n_out];
        for b in 0..batch {
            let xi = x[b * n_in + i];
            axpy(&mut y[b * n_out..(b + 1) * n_out], xi, w_row);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    p: &[f64],
    g: &[f64],
    gp: &mut [f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
    need_gx: bool,
) -> Vec<f64> {
    let w = &p[..n_in * n_out];
    let (gw, gb) = gp.split_at_mut(n_in * n_out);
    for b in 0..batch {
        let g_row = &g[b * n_out..(b + 1) * n_out];
        axpy(gb, 1.0, g_row);
        for i in 0..n_in {
            let xi = x[b * n_in + i];
            if xi != 0.0 {
                axpy(&mut gw[i * n_out..(i + 1) * n_out], xi, g_row);
            }
        }
    }
    if !need_gx {
        return Vec::new();
    }
    let mut gx = vec![0.0; batch * n_in];
    for b in 0..batch {
        let g_row = &g[b * n_out..(b + 1) * n_out];
        for i in 0..n_in {
            gx[b * n_in + i] = dot(&w[i * n_out..(i + 1) * n_out], g_row);
        }
    }
    gx
}

/// Output positions `(yy, xx)` fed by input pixel `(r, col)` through kernel
/// tap `(ki, kj)`, in a fixed order.
fn taps(
    r: usize,
    col: usize,
    k: usize,
    s: usize,
    ho: usize,
    wo: usize,
) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    (0..k.min(r + 1))
        .filter(move |ki| (r - ki) % s == 0 && (r - ki) / s < ho)
        .flat_map(move |ki| {
            (0..k.min(col + 1))
                .filter(move |kj| (col - kj) % s == 0 && (col - kj) / s < wo)
                .map(move |kj| (ki, kj, (r - ki) / s, (col - kj) / s))
        })
}

// Both conv passes walk input pixels and scatter, skipping zero inputs, so
// sparse occupancy grids cost only their occupied cells.
fn conv_forward(
    x: &[f64],
    p: &[f64],
    batch: usize,
    [c_in, h, w]: [usize; 3],
    [c_out, ho, wo]: [usize; 3],
    k: usize,
    s: usize,
) -> Vec<f64> {
    let (weights, bias) = p.split_at(c_out * c_in * k * k);
    let plane = ho * wo;
    let mut y = vec![0.0; batch * c_out * plane];
    for b in 0..batch {
        let yb = &mut y[b * c_out * plane..(b + 1) * c_out * plane];
        for o in 0..c_out {
            yb[o * plane..(o + 1) * plane].fill(bias[o]);
        }
        for c in 0..c_in {
            let xin = &x[(b * c_in + c) * h * w..(b * c_in + c + 1) * h * w];
            for r in 0..h {
                for col in 0..w {
                    let xv = xin[r * w + col];
                    if xv == 0.0 {
                        continue;
                    }
                    for (ki, kj, yy, xx) in taps(r, col, k, s, ho, wo) {
                        let at = yy * wo + xx;
                        for o in 0..c_out {
                            yb[o * plane + at] += weights[((o * c_in + c) * k + ki) * k + kj] * xv;
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    p: &[f64],
    g: &[f64],
    gp: &mut [f64],
    batch: usize,
    [c_in, h, w]: [usize; 3],
    [c_out, ho, wo]: [usize; 3],
    k: usize,
    s: usize,
    need_gx: bool,
) -> Vec<f64> {
    let weights = &p[..c_out * c_in * k * k];
    let (gw, gb) = gp.split_at_mut(c_out * c_in * k * k);
    let plane = ho * wo;
    let mut gx = if need_gx {
        vec![0.0; batch * c_in * h * w]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        let gbatch = &g[b * c_out * plane..(b + 1) * c_out * plane];
        for o in 0..c_out {
            gb[o] += gbatch[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
        for c in 0..c_in {
            let base = (b * c_in + c) * h * w;
            for r in 0..h {
                for col in 0..w {
                    let xv = x[base + r * w + col];
                    if xv == 0.0 && !need_gx {
                        continue;
                    }
                    let mut acc = 0.0;
                    for (ki, kj, yy, xx) in taps(r, col, k, s, ho, wo) {
                        let at = yy * wo + xx;
                        for o in 0..c_out {
                            let widx = ((o * c_in + c) * k + ki) * k + kj;
                            let gv = gbatch[o * plane + at];
                            if xv != 0.0 {
                                gw[widx] += gv * xv;
                            }
                            acc += weights[widx] * gv;
                        }
                    }
                    if need_gx {
                        gx[base + r * w + col] = acc;
                    }
                }
            }
        }
    }
    gx
}

fn pool_argmax(x: &[f64], plane: usize, w: usize, yy: usize, xx: usize, size: usize) -> usize {
    let mut best = (f64::NEG_INFINITY, plane + yy * size * w + xx * size);
    for di in 0..size {
        for dj in 0..size {
            let idx = plane + (yy * size + di) * w + xx * size + dj;
            if x[idx] > best.0 {
                best = (x[idx], idx);
            }
        }
    }
    best.1
}

fn maxpool_forward(
    x: &[f64],
    batch: usize,
    input: &[usize],
    output: &[usize],
    size: usize,
) -> Vec<f64> {
    let (c, h, w) = (input[0], input[1], input[2]);
    let (ho, wo) = (output[1], output[2]);
    let mut y = Vec::with_capacity(batch * c * ho * wo);
    for bc in 0..batch * c {
        let plane = bc * h * w;
        for yy in 0..ho {
            for xx in 0..wo {
                y.push(x[pool_argmax(x, plane, w, yy, xx, size)]);
            }
        }
    }
    y
}

fn maxpool_backward(
    x: &[f64],
    g: &[f64],
    batch: usize,
    input: &[usize],
    output: &[usize],
    size: usize,
) -> Vec<f64> {
    let (c, h, w) = (input[0], input[1], input[2]);
    let (ho, wo) = (output[1], output[2]);
    let mut gx = vec![0.0; batch * c * h * w];
    let mut gi = 0;
    for bc in 0..batch * c {
        let plane = bc * h * w;
        for yy in 0..ho {
            for xx in 0..wo {
                gx[pool_argmax(x, plane, w, yy, xx, size)] += g[gi];
                gi += 1;
            }
        }
    }
    gx
}
