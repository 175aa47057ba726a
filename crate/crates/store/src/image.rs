//! PNG encoding of planar image tensors.

use base64::Engine;

use crate::{Result, StoreError};

/// Encodes planar `[channel][row][col]` values in `[0, 1]` as an 8-bit PNG
/// (gray for one channel, RGB for three). Values are rounded to the nearest
/// level and clamped.
pub fn encode_png(planar: &[f32], channels: usize, height: usize, width: usize) -> Result<Vec<u8>> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(StoreError::Consistency(format!(
                "cannot render a {c}-channel image as PNG"
            )))
        }
    };
    if planar.len() != channels * height * width {
        return Err(StoreError::Consistency(format!(
            "{} values for a {channels}x{height}x{width} image",
            planar.len()
        )));
    }
    let plane = height * width;
    let mut interleaved = Vec::with_capacity(planar.len());
    for px in 0..plane {
        for c in 0..channels {
            interleaved.push(to_level(planar[c * plane + px]));
        }
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| StoreError::Consistency(format!("png header: {e}")))?;
    writer
        .write_image_data(&interleaved)
        .map_err(|e| StoreError::Consistency(format!("png data: {e}")))?;
    writer
        .finish()
        .map_err(|e| StoreError::Consistency(format!("png finish: {e}")))?;
    Ok(out)
}

fn to_level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Maps signed noise onto `[0, 1]` with `n ↦ (n + s)/(2s)`, so zero noise is
/// mid-gray. A zero scale maps everything to 0.5.
pub fn noise_to_unit(noise: &[f32], scale: f32) -> Vec<f32> {
    noise
        .iter()
        .map(|&n| {
            if scale > 0.0 {
                ((n + scale) / (2.0 * scale)).clamp(0.0, 1.0)
            } else {
                0.5
            }
        })
        .collect()
}

pub fn to_base64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}
