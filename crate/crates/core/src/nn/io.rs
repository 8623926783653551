//! Binary model file. All integers and floats are little-endian.
//!
//! ```text
//! header   8  magic "FECNNMDL"
//!          4  u32 version (1)
//!          4  u32 input rows
//!          4  u32 input cols
//!          4  u32 input channels
//!          4  u32 class count
//!          4  u32 layer count N
//! table    N x 24 bytes:
//!          1  u8 kind (0 = conv, 1 = fc)
//!          1  u8 relu (0 or 1)
//!          1  u8 max-pool window (1 = none)
//!          1  u8 reserved (0)
//!         20  u32 c_in, c_out, kernel, stride, feat
//! payload  for each layer in order: f32 weights[|W_i|], then f32 bias[c_out]
//! ```
//!
//! Weights are held as `f64` in memory; writing narrows them to `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{EdgeLayer, InputShape, LayerKind, NetworkModel};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"FECNNMDL";
pub const MODEL_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

fn to_f32(v: f64) -> Result<f32> {
    let narrowed = v as f32;
    if !narrowed.is_finite() {
        return Err(Error::format(
            "model file",
            format!("value {v} does not fit in f32"),
        ));
    }
    Ok(narrowed)
}

struct TableEntry {
    kind: LayerKind,
    relu: bool,
    pool: usize,
    dims: [usize; 5],
}

impl NetworkModel {
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format("model file", "bad magic"));
        }
        let version = read_u32(r)?;
        if version != MODEL_VERSION {
            return Err(Error::format(
                "model file",
                format!("unsupported version {version}"),
            ));
        }
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let channels = read_u32(r)? as usize;
        let class_count = read_u32(r)? as usize;
        let layer_count = read_u32(r)? as usize;
        if layer_count > 4096 {
            return Err(Error::format(
                "model file",
                format!("implausible layer count {layer_count}"),
            ));
        }

        let mut table = Vec::with_capacity(layer_count);
        for i in 0..layer_count {
            let mut flags = [0u8; 4];
            r.read_exact(&mut flags)?;
            let kind = match flags[0] {
                0 => LayerKind::Conv,
                1 => LayerKind::Fc,
                k => {
                    return Err(Error::format(
                        "model file",
                        format!("layer {i}: unknown kind {k}"),
                    ))
                }
            };
            let mut dims = [0usize; 5];
            for d in dims.iter_mut() {
                *d = read_u32(r)? as usize;
            }
            table.push(TableEntry {
                kind,
                relu: flags[1] != 0,
                pool: usize::from(flags[2]),
                dims,
            });
        }

        let mut layers = Vec::with_capacity(layer_count);
        for entry in table {
            let [c_in, c_out, kernel, stride, feat] = entry.dims;
            let weight_len = c_out
                .checked_mul(c_in)
                .and_then(|v| v.checked_mul(kernel * kernel))
                .filter(|&v| v <= 1 << 30)
                .ok_or_else(|| Error::format("model file", "layer too large"))?;
            let weights = read_f32s(r, weight_len)?;
            let bias = read_f32s(r, c_out)?;
            let layer = match entry.kind {
                LayerKind::Conv => {
                    EdgeLayer::conv(c_in, c_out, kernel, stride, feat, weights, bias)?
                }
                LayerKind::Fc => EdgeLayer::fc(c_in, c_out, weights, bias)?,
            };
            layers.push(layer.with_relu(entry.relu).with_pool(entry.pool));
        }
        let input = InputShape {
            rows,
            cols,
            channels,
        };
        NetworkModel::new(input, layers, class_count)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let input = self.input();
        w.write_all(MODEL_MAGIC)?;
        let header = [
            MODEL_VERSION,
            input.rows as u32,
            input.cols as u32,
            input.channels as u32,
            self.class_count() as u32,
            self.layers().len() as u32,
        ];
        for v in header {
            w.write_all(&v.to_le_bytes())?;
        }
        for layer in self.layers() {
            let kind = match layer.kind() {
                LayerKind::Conv => 0u8,
                LayerKind::Fc => 1u8,
            };
            let pool = u8::try_from(layer.pool())
                .map_err(|_| Error::format("model file", "pool window above 255"))?;
            w.write_all(&[kind, u8::from(layer.relu()), pool, 0])?;
            for v in [
                layer.c_in(),
                layer.c_out(),
                layer.kernel(),
                layer.stride(),
                layer.feat(),
            ] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
        }
        for layer in self.layers() {
            for &v in layer.weights().iter().chain(layer.bias()) {
                w.write_all(&to_f32(v)?.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}
