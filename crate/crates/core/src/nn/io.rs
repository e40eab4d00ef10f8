//! Flat binary checkpoint format for [`Network`].
//!
//! ```text
//! magic        8 bytes  "UAVXNET1"
//! layer_count  u32 LE
//! per layer:
//!   input_dim  u32 LE
//!   output_dim u32 LE
//!   activation u8       0 = identity, 1 = relu
//!   weights    output_dim * input_dim f64 LE, row-major [out, in]
//!   biases     output_dim f64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Layer, Network, Tensor};
use crate::error::{Error, Result};

pub const NETWORK_MAGIC: &[u8; 8] = b"UAVXNET1";

pub fn write_network<W: Write>(net: &Network, mut w: W) -> std::io::Result<()> {
    w.write_all(NETWORK_MAGIC)?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&(layer.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.output_dim() as u32).to_le_bytes())?;
        let act = match layer.activation {
            Activation::Identity => 0u8,
            Activation::Relu => 1u8,
        };
        w.write_all(&[act])?;
        for v in layer.weights.values().iter().chain(layer.biases.values()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Parses a network; `path` is only used for error context.
pub fn read_network<R: Read>(mut r: R, path: &Path) -> Result<Network> {
    let fmt = |message: String| Error::Format { path: path.to_path_buf(), message };
    let io = |e: std::io::Error| fmt(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != NETWORK_MAGIC {
        return Err(fmt(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut r).map_err(io)? as usize;
    if count == 0 || count > 1024 {
        return Err(fmt(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let n_in = read_u32(&mut r).map_err(io)? as usize;
        let n_out = read_u32(&mut r).map_err(io)? as usize;
        let mut act = [0u8; 1];
        r.read_exact(&mut act).map_err(io)?;
        let activation = match act[0] {
            0 => Activation::Identity,
            1 => Activation::Relu,
            other => return Err(fmt(format!("layer {i}: unknown activation tag {other}"))),
        };
        let w = read_f64s(&mut r, n_in * n_out).map_err(io)?;
        let b = read_f64s(&mut r, n_out).map_err(io)?;
        layers.push(Layer {
            weights: Tensor::matrix(n_out, n_in, w).map_err(|e| fmt(format!("layer {i}: {e}")))?,
            biases: Tensor::vector(b).map_err(|e| fmt(format!("layer {i}: {e}")))?,
            activation,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(fmt("trailing bytes after last layer".into()));
    }
    Network::from_layers(layers).map_err(|e| fmt(e.to_string()))
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_network(net, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_network(BufReader::new(f), path)
}
