//! Binary model checkpoint.
//!
//! Layout (all integers u32, all reals f64, little-endian):
//!
//! ```text
//! "RPVAE1"
//! encoder_kind (0 = conv, 1 = dense)
//! height width latent_dim decoder_hidden
//! a b c d          conv: channels[0] channels[1] kernel stride
//!                  dense: hidden[0] hidden[1] 0 0
//! recon_weight kl_weight
//! n_tensors
//! per tensor: rank, dims[rank], values[prod(dims)]
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::tape::Tensor;
use super::vae::{EncoderArch, LossWeights, VaeArch, VaeModel};
use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"RPVAE1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_checkpoint<W: Write>(model: &VaeModel, mut w: W) -> std::io::Result<()> {
    let arch = model.arch();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let (kind, extra) = match arch.encoder {
        EncoderArch::Conv {
            channels,
            kernel,
            stride,
        } => (0, [channels[0], channels[1], kernel, stride]),
        EncoderArch::Dense { hidden } => (1, [hidden[0], hidden[1], 0, 0]),
    };
    for v in [kind, arch.height, arch.width, arch.latent_dim, arch.decoder_hidden] {
        put_u32(&mut out, v);
    }
    for v in extra {
        put_u32(&mut out, v);
    }
    put_f64(&mut out, model.weights().recon);
    put_f64(&mut out, model.weights().kl);
    put_u32(&mut out, model.params().len());
    for t in model.params() {
        put_u32(&mut out, t.shape.len());
        for d in &t.shape {
            put_u32(&mut out, *d);
        }
        for v in &t.data {
            put_f64(&mut out, *v);
        }
    }
    w.write_all(&out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn parse(bytes: &[u8]) -> Result<VaeModel, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(6)? != CHECKPOINT_MAGIC {
        return Err("bad magic".into());
    }
    let kind = c.u32()?;
    let (height, width, latent_dim, decoder_hidden) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    let extra = [c.u32()?, c.u32()?, c.u32()?, c.u32()?];
    let encoder = match kind {
        0 => EncoderArch::Conv {
            channels: [extra[0], extra[1]],
            kernel: extra[2],
            stride: extra[3],
        },
        1 => EncoderArch::Dense {
            hidden: [extra[0], extra[1]],
        },
        k => return Err(format!("unknown encoder kind {k}")),
    };
    let weights = LossWeights {
        recon: c.f64()?,
        kl: c.f64()?,
    };
    let n = c.u32()?;
    let mut params = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        params.push(Tensor { shape, data });
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    let arch = VaeArch {
        height,
        width,
        latent_dim,
        encoder,
        decoder_hidden,
    };
    VaeModel::from_params(arch, weights, params).map_err(|e| e.to_string())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<VaeModel, String> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| e.to_string())?;
    parse(&bytes)
}

pub fn save_checkpoint(model: &VaeModel, path: &Path) -> Result<(), NnError> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).expect("writing to a Vec cannot fail");
    fs::write(path, buf).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<VaeModel, NnError> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&bytes).map_err(|reason| NnError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}
