//! Bit-exact checkpoint format.
//!
//! Layout: 8-byte magic `DAFRCKPT`, little-endian u32 version (1),
//! little-endian u32 metadata length, metadata as `key=value` lines
//! (kind, n, m, c, s, precision, seed, step), then every parameter array
//! as raw little-endian f32 words prefixed by a little-endian u64 element
//! count. Arrays appear in layer order: each conv's weights then biases,
//! followed by that layer's PReLU coefficients when it has them, and
//! finally the deconvolution weights and biases for the upsampling
//! network.
//!
//! Decoding rebuilds the model from its config and seed, then overwrites
//! every array, so shapes are validated against a freshly constructed
//! network and a save/load round trip is bit-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dafr_core::model::{build_dafr, build_residual_net, Model, ModelKind, NetworkConfig};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"DAFRCKPT";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Artifact(msg.into())
}

/// Serializes a model to the checkpoint byte format.
pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let kind = match model.kind {
        ModelKind::Dafr => "dafr",
        ModelKind::Residual => "residual",
    };
    let meta = format!(
        "kind={kind}\nn={}\nm={}\nc={}\ns={}\nprecision=f32\nseed={}\nstep={}\n",
        model.cfg.n, model.cfg.m, model.cfg.c, model.cfg.s, model.seed, model.step
    );

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());

    let mut push = |vals: &[f32]| {
        out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (i, conv) in model.convs.iter().enumerate() {
        push(conv.weights.data());
        push(&conv.bias);
        if let Some(prelu) = model.prelus.get(i) {
            push(&prelu.coeff);
        }
    }
    if let Some(deconv) = &model.deconv {
        push(deconv.weights.data());
        push(&deconv.bias);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad("checkpoint truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads one length-prefixed array into `dst`, which must already
    /// have the expected length.
    fn array_into(&mut self, dst: &mut [f32], what: &str) -> Result<()> {
        let n = self.u64()? as usize;
        if n != dst.len() {
            return Err(bad(format!(
                "checkpoint {what}: expected {} values, found {n}",
                dst.len()
            )));
        }
        let raw = self.take(4 * n)?;
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            dst[i] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}

fn parse_meta(text: &str) -> Result<BTreeMap<&str, &str>> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed metadata line {line:?}")))?;
        map.insert(k, v);
    }
    Ok(map)
}

fn meta_int<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| bad(format!("checkpoint metadata missing {key}")))?
        .parse()
        .map_err(|_| bad(format!("checkpoint metadata {key} is not a number")))
}

/// Deserializes the checkpoint byte format back into a model.
pub fn decode(buf: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta_text = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| bad("checkpoint metadata is not UTF-8"))?;
    let meta = parse_meta(meta_text)?;

    match meta.get("precision") {
        Some(&"f32") => {}
        Some(p) => return Err(bad(format!("unsupported precision {p:?}"))),
        None => return Err(bad("checkpoint metadata missing precision")),
    }
    let cfg = NetworkConfig {
        n: meta_int(&meta, "n")?,
        m: meta_int(&meta, "m")?,
        c: meta_int(&meta, "c")?,
        s: meta_int(&meta, "s")?,
        ..NetworkConfig::default()
    };
    let seed: u64 = meta_int(&meta, "seed")?;
    let step: u64 = meta_int(&meta, "step")?;
    let rebuild_err = |e: dafr_core::Error| bad(format!("checkpoint config invalid: {e}"));
    let mut model = match meta.get("kind") {
        Some(&"dafr") => build_dafr::<f32>(&cfg, seed).map_err(rebuild_err)?,
        Some(&"residual") => build_residual_net::<f32>(&cfg, seed).map_err(rebuild_err)?,
        Some(k) => return Err(bad(format!("unknown model kind {k:?}"))),
        None => return Err(bad("checkpoint metadata missing kind")),
    };
    model.step = step;

    let n_convs = model.convs.len();
    for i in 0..n_convs {
        r.array_into(model.convs[i].weights.data_mut(), "conv weights")?;
        r.array_into(&mut model.convs[i].bias, "conv bias")?;
        if i < model.prelus.len() {
            r.array_into(&mut model.prelus[i].coeff, "prelu coefficients")?;
        }
    }
    if let Some(deconv) = &mut model.deconv {
        r.array_into(deconv.weights.data_mut(), "deconv weights")?;
        r.array_into(&mut deconv.bias, "deconv bias")?;
    }
    if r.pos != buf.len() {
        return Err(bad(format!(
            "checkpoint has {} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode(model))
        .map_err(|e| bad(format!("cannot write {}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    let buf =
        fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    decode(&buf)
}
