//! Layer kernels. Activations are batched, image-major `[batch][channel][row][col]`
//! buffers of `f32`; matrix products go through `ndarray`'s GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use super::tensor::Shape3;

/// Shape of the activation flowing between two layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial(Shape3),
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match self {
            ActShape::Spatial(s) => s.len(),
            ActShape::Flat(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for ActShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActShape::Spatial(s) => write!(f, "{s}"),
            ActShape::Flat(n) => write!(f, "[{n}]"),
        }
    }
}

/// 2-D convolution, stride 1, symmetric zero padding.
///
/// `weight` is `[out][in][k][k]`, i.e. an `out × (in·k·k)` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Fully connected layer; `weight` is `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    MaxPool2x2,
    Flatten,
    Dense(Dense),
    /// Output marker. The network returns logits; the softmax is applied by
    /// the loss and by `predict`.
    Softmax,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2x2 => "maxpool2x2",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            _ => 0,
        }
    }

    /// Output shape for a given input shape, or a description of the mismatch.
    pub fn output_shape(&self, input: ActShape) -> Result<ActShape, String> {
        match (self, input) {
            (Layer::Conv2d(c), ActShape::Spatial(s)) => {
                if s.channels != c.in_channels {
                    return Err(format!(
                        "conv2d expects {} input channels, got {}",
                        c.in_channels, s.channels
                    ));
                }
                let (h, w) = c.output_hw(s.height, s.width)?;
                Ok(ActShape::Spatial(Shape3::new(c.out_channels, h, w)))
            }
            (Layer::Relu, any) => Ok(any),
            (Layer::MaxPool2x2, ActShape::Spatial(s)) => {
                if s.height % 2 != 0 || s.width % 2 != 0 || s.height == 0 || s.width == 0 {
                    return Err(format!("maxpool2x2 needs even spatial size, got {s}"));
                }
                Ok(ActShape::Spatial(Shape3::new(
                    s.channels,
                    s.height / 2,
                    s.width / 2,
                )))
            }
            (Layer::Flatten, any) => Ok(ActShape::Flat(any.len())),
            (Layer::Dense(d), ActShape::Flat(n)) => {
                if n != d.inputs {
                    return Err(format!("dense expects {} inputs, got {n}", d.inputs));
                }
                Ok(ActShape::Flat(d.outputs))
            }
            (Layer::Softmax, ActShape::Flat(n)) => Ok(ActShape::Flat(n)),
            (layer, shape) => Err(format!(
                "{} cannot follow an activation of shape {shape}",
                layer.kind_name()
            )),
        }
    }
}

fn view<'a>(rows: usize, cols: usize, data: &'a [f32]) -> ArrayView2<'a, f32> {
    ArrayView2::from_shape((rows, cols), data).expect("buffer sized for matrix view")
}

fn view_mut<'a>(rows: usize, cols: usize, data: &'a mut [f32]) -> ArrayViewMut2<'a, f32> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("buffer sized for matrix view")
}

impl Conv2d {
    fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), String> {
        let oh = (h + 2 * self.padding).checked_sub(self.kernel - 1);
        let ow = (w + 2 * self.padding).checked_sub(self.kernel - 1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(format!(
                "kernel {} too large for {h}x{w} input with padding {}",
                self.kernel, self.padding
            )),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unfolds one image into a `(in·k·k) × (oh·ow)` patch matrix.
    fn im2col(&self, input: &[f32], s: Shape3, oh: usize, ow: usize, cols: &mut [f32]) {
        let k = self.kernel;
        let pad = self.padding as isize;
        let plane = oh * ow;
        for c in 0..s.channels {
            let src = &input[c * s.plane()..(c + 1) * s.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    let dx = kx as isize - pad;
                    // Valid output columns: 0 <= ox + dx < width.
                    let ox_lo = (-dx).max(0) as usize;
                    let ox_hi = ((s.width as isize - dx).min(ow as isize)).max(0) as usize;
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= s.height as isize || ox_lo >= ox_hi {
                            out_row.fill(0.0);
                            continue;
                        }
                        let in_row = &src[iy as usize * s.width..(iy as usize + 1) * s.width];
                        out_row[..ox_lo].fill(0.0);
                        let start = (ox_lo as isize + dx) as usize;
                        out_row[ox_lo..ox_hi].copy_from_slice(&in_row[start..start + (ox_hi - ox_lo)]);
                        out_row[ox_hi..].fill(0.0);
                    }
                }
            }
        }
    }

    /// Folds a patch-matrix gradient back onto the image, accumulating into `dx`.
    fn col2im(&self, cols: &[f32], s: Shape3, oh: usize, ow: usize, dx: &mut [f32]) {
        let k = self.kernel;
        let pad = self.padding as isize;
        let plane = oh * ow;
        for c in 0..s.channels {
            let dst = &mut dx[c * s.plane()..(c + 1) * s.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    let d = kx as isize - pad;
                    let ox_lo = (-d).max(0) as usize;
                    let ox_hi = ((s.width as isize - d).min(ow as isize)).max(0) as usize;
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad;
                        if iy < 0 || iy >= s.height as isize {
                            continue;
                        }
                        let start = (ox_lo as isize + d) as usize;
                        let in_row = &mut dst[iy as usize * s.width + start..];
                        for (acc, g) in in_row.iter_mut().zip(&src[oy * ow + ox_lo..oy * ow + ox_hi]) {
                            *acc += g;
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn forward(&self, input: &[f32], s: Shape3) -> Vec<f32> {
        let (oh, ow) = self.output_hw(s.height, s.width).expect("validated shape");
        let plane = oh * ow;
        let out_len = self.out_channels * plane;
        let batch = input.len() / s.len();
        let mut out = vec![0.0f32; batch * out_len];
        let weight = view(self.out_channels, self.patch_len(), &self.weight);
        out.par_chunks_mut(out_len)
            .zip(input.par_chunks(s.len()))
            .for_each_init(
                || vec![0.0f32; self.patch_len() * plane],
                |cols, (dst, src)| {
                    self.im2col(src, s, oh, ow, cols);
                    for (o, row) in dst.chunks_mut(plane).enumerate() {
                        row.fill(self.bias[o]);
                    }
                    let mut y = view_mut(self.out_channels, plane, dst);
                    general_mat_mul(1.0, &weight, &view(self.patch_len(), plane, cols), 1.0, &mut y);
                },
            );
        out
    }

    /// Returns the input gradient; accumulates parameter gradients when given.
    pub(crate) fn backward(
        &self,
        input: &[f32],
        s: Shape3,
        grad_out: &[f32],
        mut param_grads: Option<(&mut [f32], &mut [f32])>,
    ) -> Vec<f32> {
        let (oh, ow) = self.output_hw(s.height, s.width).expect("validated shape");
        let plane = oh * ow;
        let out_len = self.out_channels * plane;
        let patch = self.patch_len();
        let mut dx = vec![0.0f32; input.len()];
        let weight = view(self.out_channels, patch, &self.weight);
        let mut cols = vec![0.0f32; patch * plane];
        let mut dcols = vec![0.0f32; patch * plane];
        for ((src, dy), dxi) in input
            .chunks(s.len())
            .zip(grad_out.chunks(out_len))
            .zip(dx.chunks_mut(s.len()))
        {
            let dy_m = view(self.out_channels, plane, dy);
            if let Some((dw, db)) = param_grads.as_mut() {
                self.im2col(src, s, oh, ow, &mut cols);
                let mut dw_m = view_mut(self.out_channels, patch, dw);
                general_mat_mul(1.0, &dy_m, &view(patch, plane, &cols).t(), 1.0, &mut dw_m);
                for (o, row) in dy.chunks(plane).enumerate() {
                    db[o] += row.iter().map(|&v| v as f64).sum::<f64>() as f32;
                }
            }
            let mut dc = view_mut(patch, plane, &mut dcols);
            general_mat_mul(1.0, &weight.t(), &dy_m, 0.0, &mut dc);
            self.col2im(&dcols, s, oh, ow, dxi);
        }
        dx
    }
}

impl Dense {
    pub(crate) fn forward(&self, input: &[f32]) -> Vec<f32> {
        let batch = input.len() / self.inputs;
        let mut out = vec![0.0f32; batch * self.outputs];
        for row in out.chunks_mut(self.outputs) {
            row.copy_from_slice(&self.bias);
        }
        let x = view(batch, self.inputs, input);
        let w = view(self.outputs, self.inputs, &self.weight);
        general_mat_mul(1.0, &x, &w.t(), 1.0, &mut view_mut(batch, self.outputs, &mut out));
        out
    }

    pub(crate) fn backward(
        &self,
        input: &[f32],
        grad_out: &[f32],
        param_grads: Option<(&mut [f32], &mut [f32])>,
    ) -> Vec<f32> {
        let batch = input.len() / self.inputs;
        let dy = view(batch, self.outputs, grad_out);
        if let Some((dw, db)) = param_grads {
            let x = view(batch, self.inputs, input);
            general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut view_mut(self.outputs, self.inputs, dw));
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += (0..batch).map(|b| grad_out[b * self.outputs + o] as f64).sum::<f64>() as f32;
            }
        }
        let mut dx = vec![0.0f32; input.len()];
        let w = view(self.outputs, self.inputs, &self.weight);
        general_mat_mul(1.0, &dy, &w, 0.0, &mut view_mut(batch, self.inputs, &mut dx));
        dx
    }
}

pub(crate) fn relu_forward(input: &[f32]) -> Vec<f32> {
    input.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU, gated on the layer's output.
pub(crate) fn relu_backward(output: &[f32], grad_out: &[f32]) -> Vec<f32> {
    output
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect()
}

/// 2×2 max pooling, stride 2. Returns the pooled activations and, for each
/// output, the flat index of the winning input (first maximum wins).
pub(crate) fn maxpool_forward(input: &[f32], s: Shape3) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (s.height / 2, s.width / 2);
    let batch = input.len() / s.len();
    let out_len = s.channels * oh * ow;
    let mut out = vec![0.0f32; batch * out_len];
    let mut arg = vec![0u32; batch * out_len];
    for b in 0..batch {
        let img = &input[b * s.len()..(b + 1) * s.len()];
        for c in 0..s.channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = c * s.plane() + 2 * oy * s.width + 2 * ox;
                    let candidates = [base, base + 1, base + s.width, base + s.width + 1];
                    let mut best = candidates[0];
                    for &i in &candidates[1..] {
                        if img[i] > img[best] {
                            best = i;
                        }
                    }
                    let o = b * out_len + (c * oh + oy) * ow + ox;
                    out[o] = img[best];
                    arg[o] = best as u32;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(arg: &[u32], s: Shape3, grad_out: &[f32]) -> Vec<f32> {
    let batch = arg.len() / (s.len() / 4);
    let out_len = s.len() / 4;
    let mut dx = vec![0.0f32; batch * s.len()];
    for b in 0..batch {
        for o in 0..out_len {
            let i = b * out_len + o;
            dx[b * s.len() + arg[i] as usize] += grad_out[i];
        }
    }
    dx
}
