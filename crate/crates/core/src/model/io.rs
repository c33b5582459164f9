//! Binary parameter files. The layout is documented in `docs/model-format.md`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Shape, Tensor};

use super::config::{ModelConfig, WidthScale};
use super::graph::{build_fcn8, NetworkGraph, ParamKind};
use super::params::ParamSet;

pub const MAGIC: &[u8; 7] = b"SNWSEG1";

const KIND_CONV: u8 = 0;
const KIND_TRANSPOSED: u8 = 1;
const FLAG_LEARN_UPSAMPLING: u8 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Serializes `params` for the model described by `graph`.
pub fn write_params(w: &mut impl Write, graph: &NetworkGraph, params: &ParamSet) -> Result<()> {
    params.check_against(graph)?;
    let cfg = &graph.config;
    let enc = |e: std::io::Error| Error::Format(e.to_string());
    w.write_all(MAGIC).map_err(enc)?;
    put_u32(w, cfg.num_classes).map_err(enc)?;
    put_u32(w, cfg.width_scale.numerator() as usize).map_err(enc)?;
    put_u32(w, cfg.width_scale.denominator() as usize).map_err(enc)?;
    put_u32(w, params.layers.len()).map_err(enc)?;
    put_u32(w, cfg.input_h).map_err(enc)?;
    put_u32(w, cfg.input_w).map_err(enc)?;
    let flags = if cfg.learn_upsampling {
        FLAG_LEARN_UPSAMPLING
    } else {
        0
    };
    w.write_all(&[flags]).map_err(enc)?;
    for (spec, p) in graph.params.iter().zip(&params.layers) {
        let kind = match spec.kind {
            ParamKind::Conv => KIND_CONV,
            ParamKind::TransposedConv => KIND_TRANSPOSED,
        };
        w.write_all(&[kind]).map_err(enc)?;
        put_u32(w, p.stride).map_err(enc)?;
        put_u32(w, p.padding).map_err(enc)?;
        for d in p.kernel.shape().dims() {
            put_u32(w, d).map_err(enc)?;
        }
        put_f64s(w, p.kernel.data()).map_err(enc)?;
        put_u32(w, p.bias.len()).map_err(enc)?;
        put_f64s(w, &p.bias).map_err(enc)?;
    }
    Ok(())
}

struct Input<R> {
    inner: R,
}

impl<R: Read> Input<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated while reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| Ok(f64::from_le_bytes(self.bytes::<8>(what)?)))
            .collect()
    }
}

/// Reads a parameter file, rebuilding the graph it was saved from.
pub fn read_params(r: impl Read) -> Result<(NetworkGraph, ParamSet)> {
    let mut r = Input { inner: r };
    if &r.bytes::<7>("magic")? != MAGIC {
        return Err(Error::Format("missing SNWSEG1 magic".into()));
    }
    let num_classes = r.u32("num_classes")?;
    let num = r.u32("width numerator")?;
    let den = r.u32("width denominator")?;
    let layer_count = r.u32("layer count")?;
    let input_h = r.u32("input_h")?;
    let input_w = r.u32("input_w")?;
    let [flags] = r.bytes::<1>("flags")?;
    let cfg = ModelConfig {
        num_classes,
        width_scale: WidthScale::new(num as u32, den as u32)
            .map_err(|e| Error::Format(e.to_string()))?,
        input_h,
        input_w,
        seed: 0,
        learn_upsampling: flags & FLAG_LEARN_UPSAMPLING != 0,
    };
    let graph = build_fcn8(&cfg).map_err(|e| Error::Format(e.to_string()))?;
    if layer_count != graph.params.len() {
        return Err(Error::Format(format!(
            "file has {layer_count} layers, an FCN-8 has {}",
            graph.params.len()
        )));
    }

    let mut layers = Vec::with_capacity(layer_count);
    for spec in &graph.params {
        let [kind] = r.bytes::<1>("layer kind")?;
        let expected_kind = match spec.kind {
            ParamKind::Conv => KIND_CONV,
            ParamKind::TransposedConv => KIND_TRANSPOSED,
        };
        if kind != expected_kind {
            return Err(Error::Format(format!(
                "layer {} has kind tag {kind}",
                spec.name
            )));
        }
        let stride = r.u32("stride")?;
        let padding = r.u32("padding")?;
        let dims = [r.u32("dim")?, r.u32("dim")?, r.u32("dim")?, r.u32("dim")?];
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        if shape != spec.kernel {
            return Err(Error::Format(format!(
                "layer {} kernel is {shape}, expected {}",
                spec.name, spec.kernel
            )));
        }
        let kernel = Tensor::from_vec(shape, r.f64s(shape.len(), "kernel")?)?;
        let bias_len = r.u32("bias length")?;
        if bias_len != spec.out_channels() {
            return Err(Error::Format(format!(
                "layer {} bias has {bias_len} entries, expected {}",
                spec.name,
                spec.out_channels()
            )));
        }
        let bias = r.f64s(bias_len, "bias")?;
        layers.push(ConvParams {
            kernel,
            bias,
            stride,
            padding,
        });
    }
    let mut trailing = [0u8; 1];
    if r.inner
        .read(&mut trailing)
        .map_err(|e| Error::Format(e.to_string()))?
        != 0
    {
        return Err(Error::Format("trailing bytes after last layer".into()));
    }
    let params = ParamSet { layers };
    params
        .check_against(&graph)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((graph, params))
}

pub fn save_params(path: impl AsRef<Path>, graph: &NetworkGraph, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_params(&mut w, graph, params)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<(NetworkGraph, ParamSet)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(BufReader::new(file))
}
