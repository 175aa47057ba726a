use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Channel-major image shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// The 3×32×32 shape of CIFAR-10 images.
    pub const fn cifar() -> Self {
        Self::new(3, 32, 32)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A normalized image: channel-major pixels, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f32>,
    shape: Shape3,
}

impl ImageTensor {
    pub fn new(data: Vec<f32>, shape: Shape3) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {shape}", shape.len()),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "pixel {pos} = {} outside [0, 1]",
                data[pos]
            )));
        }
        Ok(Self { data, shape })
    }

    /// Scales raw 8-bit pixels by 1/255.
    pub fn from_bytes(bytes: &[u8], shape: Shape3) -> Result<Self> {
        Self::new(bytes.iter().map(|&b| b as f32 / 255.0).collect(), shape)
    }

    /// Builds an image by clipping arbitrary values into `[0, 1]`.
    pub fn clipped(data: Vec<f32>, shape: Shape3) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {shape}", shape.len()),
                actual: format!("{} values", data.len()),
            });
        }
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self {
            data: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Quantizes back to 8-bit pixels (round to nearest).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}
