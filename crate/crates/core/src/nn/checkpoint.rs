//! Binary model checkpoint.
//!
//! ```text
//! magic      4 bytes  "TTNN"
//! version    u32 LE
//! layers     u32 LE
//! per layer:
//!   kind       u32 (0 dense-fc, 1 dense-conv, 2 tt-fc, 3 tt-conv, 4 avg-pool2)
//!   activation u32 (0 none, 1 relu)
//!   dense-fc:   blob weight, blob bias
//!   dense-conv: width, height, blob kernel, blob bias
//!   tt-fc:      map, tt tensor, blob bias
//!   tt-conv:    width, height, map, tt tensor, blob bias
//!   avg-pool2:  width, height, channels
//! blob:  ndim u32, shape ndim x u32, f64 LE data
//! map:   d u32, out factors d x u32, in factors d x u32, kernel u32 (0 = fc)
//! tt:    the single-tensor TT layout
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, Layer, LayerOp, Network};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;
use crate::tt::{read_f64s, read_tt, read_u32, write_f64s, write_tt, write_u32, TensorizationMap};

pub const NETWORK_MAGIC: [u8; 4] = *b"TTNN";
pub const NETWORK_VERSION: usize = 1;

fn write_blob(w: &mut impl Write, t: &DenseTensor) -> Result<()> {
    write_u32(w, t.ndim())?;
    for &n in t.shape() {
        write_u32(w, n)?;
    }
    write_f64s(w, t.data())
}

fn read_blob(r: &mut impl Read) -> Result<DenseTensor> {
    let ndim = read_u32(r)?;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Checkpoint(format!("blob with {ndim} axes")));
    }
    let shape = (0..ndim).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .filter(|&n| n <= 1 << 31)
        .ok_or_else(|| Error::Checkpoint(format!("blob shape {shape:?} is too large")))?;
    DenseTensor::new(shape, read_f64s(r, len)?)
}

fn write_map(w: &mut impl Write, map: &TensorizationMap) -> Result<()> {
    write_u32(w, map.out_factors.len())?;
    for &f in map.out_factors.iter().chain(&map.in_factors) {
        write_u32(w, f)?;
    }
    write_u32(w, map.kernel.unwrap_or(0))
}

fn read_map(r: &mut impl Read) -> Result<TensorizationMap> {
    let d = read_u32(r)?;
    if d == 0 || d > 64 {
        return Err(Error::Checkpoint(format!("map of order {d}")));
    }
    let out_factors = (0..d).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    let in_factors = (0..d).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    match read_u32(r)? {
        0 => TensorizationMap::fc(out_factors, in_factors),
        k => TensorizationMap::conv(k, out_factors, in_factors),
    }
}

pub fn write_network(w: &mut impl Write, net: &Network) -> Result<()> {
    w.write_all(&NETWORK_MAGIC)?;
    write_u32(w, NETWORK_VERSION)?;
    write_u32(w, net.layers().len())?;
    for layer in net.layers() {
        let kind = match layer.op {
            LayerOp::DenseFc { .. } => 0,
            LayerOp::DenseConv { .. } => 1,
            LayerOp::TtFc { .. } => 2,
            LayerOp::TtConv { .. } => 3,
            LayerOp::AvgPool2 { .. } => 4,
        };
        write_u32(w, kind)?;
        write_u32(w, matches!(layer.activation, Activation::Relu) as usize)?;
        match &layer.op {
            LayerOp::DenseFc { weight, bias } => {
                write_blob(w, weight)?;
                write_blob(w, bias)?;
            }
            LayerOp::DenseConv {
                weight,
                bias,
                width,
                height,
            } => {
                write_u32(w, *width)?;
                write_u32(w, *height)?;
                write_blob(w, weight)?;
                write_blob(w, bias)?;
            }
            LayerOp::TtFc { cores, map, bias } => {
                write_map(w, map)?;
                write_tt(w, cores)?;
                write_blob(w, bias)?;
            }
            LayerOp::TtConv {
                cores,
                map,
                bias,
                width,
                height,
            } => {
                write_u32(w, *width)?;
                write_u32(w, *height)?;
                write_map(w, map)?;
                write_tt(w, cores)?;
                write_blob(w, bias)?;
            }
            LayerOp::AvgPool2 {
                width,
                height,
                channels,
            } => {
                write_u32(w, *width)?;
                write_u32(w, *height)?;
                write_u32(w, *channels)?;
            }
        }
    }
    Ok(())
}

fn expect(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Checkpoint(what()))
    }
}

fn read_layer(r: &mut impl Read) -> Result<Layer> {
    let kind = read_u32(r)?;
    let activation = match read_u32(r)? {
        0 => Activation::None,
        1 => Activation::Relu,
        a => return Err(Error::Checkpoint(format!("unknown activation tag {a}"))),
    };
    let op = match kind {
        0 => {
            let weight = read_blob(r)?;
            let bias = read_blob(r)?;
            expect(weight.ndim() == 2 && bias.shape() == [weight.shape()[0]], || {
                format!("dense-fc weight {:?} with bias {:?}", weight.shape(), bias.shape())
            })?;
            LayerOp::DenseFc { weight, bias }
        }
        1 => {
            let (width, height) = (read_u32(r)?, read_u32(r)?);
            let weight = read_blob(r)?;
            let bias = read_blob(r)?;
            let s = weight.shape().to_vec();
            expect(
                s.len() == 4 && s[0] == s[1] && s[0] <= width && s[0] <= height && bias.shape() == [s[2]],
                || {
                    format!(
                        "dense-conv kernel {s:?} with bias {:?} on {width}x{height}",
                        bias.shape()
                    )
                },
            )?;
            LayerOp::DenseConv {
                weight,
                bias,
                width,
                height,
            }
        }
        2 => {
            let map = read_map(r)?;
            let cores = read_tt(r)?;
            let bias = read_blob(r)?;
            expect(map.kernel.is_none() && cores.mode_sizes() == map.mode_sizes(), || {
                "tt-fc cores do not match their map".into()
            })?;
            expect(bias.shape() == [map.out_dim()], || "tt-fc bias size".into())?;
            LayerOp::TtFc { cores, map, bias }
        }
        3 => {
            let (width, height) = (read_u32(r)?, read_u32(r)?);
            let map = read_map(r)?;
            let cores = read_tt(r)?;
            let bias = read_blob(r)?;
            let k = map.kernel.unwrap_or(0);
            expect(
                k > 0 && k <= width && k <= height && cores.mode_sizes() == map.mode_sizes(),
                || "tt-conv cores do not match their map".into(),
            )?;
            expect(bias.shape() == [map.out_dim()], || "tt-conv bias size".into())?;
            LayerOp::TtConv {
                cores,
                map,
                bias,
                width,
                height,
            }
        }
        4 => {
            let (width, height, channels) = (read_u32(r)?, read_u32(r)?, read_u32(r)?);
            expect(width >= 2 && height >= 2 && channels > 0, || {
                "degenerate avg-pool2".into()
            })?;
            LayerOp::AvgPool2 {
                width,
                height,
                channels,
            }
        }
        k => return Err(Error::Checkpoint(format!("unknown layer kind tag {k}"))),
    };
    Ok(Layer { op, activation })
}

pub fn read_network(r: &mut impl Read) -> Result<Network> {
    read_network_inner(r).map_err(|e| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Checkpoint("checkpoint is truncated".into())
        }
        other => other,
    })
}

fn read_network_inner(r: &mut impl Read) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != NETWORK_MAGIC {
        return Err(Error::Checkpoint(format!("bad network magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != NETWORK_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version}, this build reads {NETWORK_VERSION}"
        )));
    }
    let count = read_u32(r)?;
    expect(count > 0 && count < 4096, || format!("{count} layers"))?;
    let layers = (0..count).map(|_| read_layer(r)).collect::<Result<Vec<_>>>()?;
    Network::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

impl Network {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_network(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        read_network(&mut r)
    }
}
