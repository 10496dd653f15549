//! Binary model checkpoints.
//!
//! Little-endian layout: magic `CLRF`, version u32, rank K u32, training
//! dims H, W, L as u32, then the spatial and the spectral net. Each net is
//! an activation tag u8, ω0 f64, layer count u32 and, per layer, rows u32,
//! cols u32, row-major weights f64 and biases f64.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::FusionModel;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::siren::{Activation, Layer, SirenConfig, SirenNet};

pub const MODEL_MAGIC: &[u8; 4] = b"CLRF";
pub const MODEL_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize, field: &'static str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format(field, format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_net(buf: &mut Vec<u8>, net: &SirenNet) -> Result<()> {
    buf.push(net.config().activation.tag());
    buf.extend_from_slice(&net.config().omega0.to_le_bytes());
    put_u32(buf, net.layers().len(), "layer_count")?;
    for layer in net.layers() {
        let (rows, cols) = layer.weight.dim();
        put_u32(buf, rows, "rows")?;
        put_u32(buf, cols, "cols")?;
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

pub fn write_model_to<W: Write>(model: &FusionModel, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut buf, model.rank(), "rank")?;
    let (h, w, l) = model.train_dims();
    put_u32(&mut buf, h, "height")?;
    put_u32(&mut buf, w, "width")?;
    put_u32(&mut buf, l, "bands")?;
    put_net(&mut buf, model.spatial_net())?;
    put_net(&mut buf, model.spectral_net())?;
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_model(model: &FusionModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_model_to(model, &mut buf)?;
    write_atomic(path.as_ref(), &buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(field, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::format(field, format!("non-finite value before byte {}", self.pos)));
        }
        Ok(v)
    }

    fn f64s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(field, "length overflow"))?;
        if self.bytes.len() - self.pos < bytes {
            return Err(Error::format(field, format!("truncated: expected {n} values")));
        }
        (0..n).map(|_| self.f64(field)).collect()
    }
}

fn read_net(cur: &mut Cursor<'_>, in_dim: usize, rank: usize) -> Result<SirenNet> {
    let tag = cur.u8("activation")?;
    let activation =
        Activation::from_tag(tag).ok_or_else(|| Error::format("activation", format!("unknown tag {tag}")))?;
    let omega0 = cur.f64("omega0")?;
    if omega0 <= 0.0 {
        return Err(Error::format("omega0", format!("must be positive, got {omega0}")));
    }
    let count = cur.u32("layer_count")?;
    if count == 0 {
        return Err(Error::format("layer_count", "a network needs at least one layer"));
    }
    let mut layers = Vec::with_capacity(count.min(64));
    let mut expected_cols = activation.encoded_dim(in_dim);
    for i in 0..count {
        let rows = cur.u32("rows")?;
        let cols = cur.u32("cols")?;
        if cols != expected_cols {
            return Err(Error::format("cols", format!("layer {i} has {cols} columns, expected {expected_cols}")));
        }
        if rows == 0 || (i + 1 == count && rows != rank) {
            return Err(Error::format("rows", format!("layer {i} has {rows} rows")));
        }
        let weights = cur.f64s(rows * cols, "weights")?;
        let bias = cur.f64s(rows, "biases")?;
        layers.push(Layer {
            weight: Array2::from_shape_vec((rows, cols), weights).expect("sized above"),
            bias: Array1::from(bias),
        });
        expected_cols = rows;
    }
    let hidden = layers[..count - 1].iter().map(|l| l.weight.nrows()).collect();
    let config = SirenConfig::new(in_dim, rank, hidden)
        .with_activation(activation)
        .with_omega0(omega0);
    SirenNet::from_layers(config, layers).map_err(|e| Error::format("layers", e.to_string()))
}

pub fn read_model_from<R: Read>(mut input: R) -> Result<FusionModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let magic = cur.take(4, "magic").map_err(|_| Error::format("magic", "bad magic: file too short"))?;
    if magic != MODEL_MAGIC {
        return Err(Error::format("magic", format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = cur.u32("version")?;
    if version != MODEL_VERSION as usize {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let rank = cur.u32("rank")?;
    if rank == 0 {
        return Err(Error::format("rank", "rank must be at least 1"));
    }
    let h = cur.u32("height")?;
    let w = cur.u32("width")?;
    let l = cur.u32("bands")?;
    let spatial = read_net(&mut cur, 2, rank)?;
    let spectral = read_net(&mut cur, 1, rank)?;
    if cur.pos != bytes.len() {
        return Err(Error::format("payload", format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    FusionModel::new(spatial, spectral, (h, w, l)).map_err(|e| Error::format("dimensions", e.to_string()))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FusionModel> {
    read_model_from(BufReader::new(File::open(path)?))
}
