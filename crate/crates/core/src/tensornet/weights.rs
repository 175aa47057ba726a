//! Little-endian weight files.
//!
//! ```text
//! "ADVXNET1"            8-byte magic; the trailing digit is the format version
//! u32 layer count       includes the leading input descriptor
//! per layer:
//!   u8  kind tag        0 input, 1 conv2d, 2 relu, 3 maxpool2x2, 4 flatten, 5 dense, 6 softmax
//!   u32 shape fields    input: c h w; conv2d: in out kernel padding; dense: in out; others: none
//!   f32 parameters      conv2d/dense: weights then biases
//! ```

use std::fs;
use std::path::Path;

use super::layers::{Conv2d, Dense, Layer};
use super::network::Network;
use super::tensor::Shape3;
use crate::{Error, Result};

pub const MAGIC_PREFIX: &[u8; 7] = b"ADVXNET";
pub const VERSION: u8 = b'1';

const TAG_INPUT: u8 = 0;
const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_POOL: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_DENSE: u8 = 5;
const TAG_SOFTMAX: u8 = 6;

// Guards against absurd allocations from corrupt headers.
const MAX_DIM: u32 = 1 << 20;

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + net.param_count() * 4);
    out.extend_from_slice(MAGIC_PREFIX);
    out.push(VERSION);
    out.extend_from_slice(&(net.layers().len() as u32 + 1).to_le_bytes());
    let s = net.input_shape();
    out.push(TAG_INPUT);
    put_u32s(&mut out, &[s.channels, s.height, s.width]);
    for layer in net.layers() {
        match layer {
            Layer::Conv2d(c) => {
                out.push(TAG_CONV);
                put_u32s(&mut out, &[c.in_channels, c.out_channels, c.kernel, c.padding]);
                put_f32s(&mut out, &c.weight);
                put_f32s(&mut out, &c.bias);
            }
            Layer::Relu => out.push(TAG_RELU),
            Layer::MaxPool2x2 => out.push(TAG_POOL),
            Layer::Flatten => out.push(TAG_FLATTEN),
            Layer::Dense(d) => {
                out.push(TAG_DENSE);
                put_u32s(&mut out, &[d.inputs, d.outputs]);
                put_f32s(&mut out, &d.weight);
                put_f32s(&mut out, &d.bias);
            }
            Layer::Softmax => out.push(TAG_SOFTMAX),
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8)?;
    if &magic[..7] != MAGIC_PREFIX {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, not a network weight file".into(),
        });
    }
    if magic[7] != VERSION {
        return Err(Error::UnsupportedVersion {
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let count = r.u32()? as usize;
    if count < 2 {
        return Err(r.error("a network needs an input descriptor and layers"));
    }
    let tag_at = r.pos;
    if r.u8()? != TAG_INPUT {
        return Err(Error::Parse {
            offset: tag_at,
            message: "first layer must be the input descriptor".into(),
        });
    }
    let dims = r.dims(3)?;
    let input = Shape3::new(dims[0], dims[1], dims[2]);
    let mut layers = Vec::with_capacity(count - 1);
    for _ in 1..count {
        let tag_at = r.pos;
        let layer = match r.u8()? {
            TAG_CONV => {
                let d = r.dims(4)?;
                let (in_c, out_c, k) = (d[0], d[1], d[2]);
                Layer::Conv2d(Conv2d {
                    in_channels: in_c,
                    out_channels: out_c,
                    kernel: k,
                    padding: d[3],
                    weight: r.f32s(out_c * in_c * k * k)?,
                    bias: r.f32s(out_c)?,
                })
            }
            TAG_RELU => Layer::Relu,
            TAG_POOL => Layer::MaxPool2x2,
            TAG_FLATTEN => Layer::Flatten,
            TAG_DENSE => {
                let d = r.dims(2)?;
                Layer::Dense(Dense {
                    inputs: d[0],
                    outputs: d[1],
                    weight: r.f32s(d[0] * d[1])?,
                    bias: r.f32s(d[1])?,
                })
            }
            TAG_SOFTMAX => Layer::Softmax,
            other => {
                return Err(Error::Parse {
                    offset: tag_at,
                    message: format!("unknown layer tag {other}"),
                })
            }
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(r.error("trailing bytes after the last layer"));
    }
    Network::new(input, layers).map_err(|e| Error::Parse {
        offset: bytes.len(),
        message: e.to_string(),
    })
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(net))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    decode(&fs::read(path)?)
}

fn put_u32s(out: &mut Vec<u8>, values: &[usize]) {
    for &v in values {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!(
                "truncated: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dims(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n)
            .map(|_| {
                let at = self.pos;
                let v = self.u32()?;
                if v > MAX_DIM {
                    return Err(Error::Parse {
                        offset: at,
                        message: format!("dimension {v} exceeds {MAX_DIM}"),
                    });
                }
                Ok(v as usize)
            })
            .collect()
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| self.error("parameter count overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::Architecture;

    #[test]
    fn round_trip_is_exact() {
        for arch in [Architecture::CnnA, Architecture::CnnB] {
            let net = Network::fixture(arch, Shape3::cifar(), 10, 9).unwrap();
            let bytes = encode(&net);
            assert_eq!(bytes.len(), 8 + 4 + 13 + net.param_count() * 4 + net.layers().len() + extra_dims(&net));
            assert_eq!(decode(&bytes).unwrap(), net);
        }
        let dir = tempfile::tempdir().unwrap();
        let net = Network::fixture(Architecture::CnnA, Shape3::new(1, 8, 8), 3, 2).unwrap();
        let path = dir.path().join("m.advxnet");
        save_weights(&net, &path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), net);
    }

    fn extra_dims(net: &Network) -> usize {
        net.layers()
            .iter()
            .map(|l| match l {
                Layer::Conv2d(_) => 16,
                Layer::Dense(_) => 8,
                _ => 0,
            })
            .sum()
    }

    #[test]
    fn truncated_file_reports_offset() {
        let net = Network::fixture(Architecture::CnnA, Shape3::new(1, 8, 8), 3, 2).unwrap();
        let bytes = encode(&net);
        let cut = bytes.len() - 10;
        match decode(&bytes[..cut]) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= cut),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(decode(&bytes[..5]), Err(Error::Parse { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::Parse { .. })));
    }

    #[test]
    fn wrong_version_and_magic() {
        let net = Network::fixture(Architecture::CnnA, Shape3::new(1, 8, 8), 3, 2).unwrap();
        let mut bytes = encode(&net);
        bytes[7] = b'2';
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn unknown_tag_and_bad_stack() {
        let net = Network::fixture(Architecture::CnnA, Shape3::new(1, 8, 8), 3, 2).unwrap();
        let mut bytes = encode(&net);
        // First layer tag follows magic, count and the 13-byte input descriptor.
        bytes[25] = 42;
        assert!(matches!(decode(&bytes), Err(Error::Parse { offset: 25, .. })));
        let mut bytes = encode(&net);
        // Input with 2 channels no longer matches the first convolution.
        bytes[13] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Parse { .. })));
    }
}
