//! Binary model checkpoints.
//!
//! ```text
//! "ACFM" | u8 format version | u32 input_dim | u16 hidden count | u32 x hidden
//! | u32 output_dim | u8 activation | u64 model version | f32 x params
//! ```
//! All integers and floats little-endian, layers in order, rows `[weights.., bias]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, GlobalModel, ModelArch};

pub const MAGIC: [u8; 4] = *b"ACFM";
pub const FORMAT_VERSION: u8 = 1;

pub fn encode_checkpoint(model: &GlobalModel) -> Result<Vec<u8>> {
    let arch = &model.arch;
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::InvalidArch("dimension exceeds u32".into()));
    let mut out = Vec::with_capacity(32 + 4 * model.param_count());
    out.extend_from_slice(&MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&dim(arch.input_dim)?.to_le_bytes());
    let hidden = u16::try_from(arch.hidden_sizes.len()).map_err(|_| Error::InvalidArch("too many layers".into()))?;
    out.extend_from_slice(&hidden.to_le_bytes());
    for &h in &arch.hidden_sizes {
        out.extend_from_slice(&dim(h)?.to_le_bytes());
    }
    out.extend_from_slice(&dim(arch.output_dim)?.to_le_bytes());
    out.push(arch.activation.code());
    out.extend_from_slice(&model.version.to_le_bytes());
    for layer in &model.layers {
        for &v in &layer.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(Error::corrupt(format!("checkpoint truncated in {what}")));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("split at N"))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(what)?) as usize)
    }
}

/// Architecture and version without reading the weights.
pub fn read_checkpoint_header(bytes: &[u8]) -> Result<(ModelArch, u64)> {
    let mut r = Reader(bytes);
    header(&mut r)
}

fn header(r: &mut Reader<'_>) -> Result<(ModelArch, u64)> {
    if r.take::<4>("magic")? != MAGIC {
        return Err(Error::corrupt("not a model checkpoint"));
    }
    let [format] = r.take::<1>("version")?;
    if format != FORMAT_VERSION {
        return Err(Error::corrupt(format!("unsupported checkpoint version {format}")));
    }
    let input_dim = r.u32("input dim")?;
    let hidden = u16::from_le_bytes(r.take("hidden count")?) as usize;
    let hidden_sizes = (0..hidden).map(|_| r.u32("hidden size")).collect::<Result<Vec<_>>>()?;
    let output_dim = r.u32("output dim")?;
    let [code] = r.take::<1>("activation")?;
    let activation = Activation::from_code(code).ok_or_else(|| Error::corrupt(format!("activation code {code}")))?;
    let version = u64::from_le_bytes(r.take("model version")?);
    let arch = ModelArch {
        input_dim,
        hidden_sizes,
        output_dim,
        activation,
    };
    arch.validate().map_err(|e| Error::corrupt(e.to_string()))?;
    Ok((arch, version))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<GlobalModel> {
    let mut r = Reader(bytes);
    let (arch, version) = header(&mut r)?;
    let expected = arch.param_count().checked_mul(4).ok_or_else(|| Error::corrupt("absurd size"))?;
    if r.0.len() != expected {
        return Err(Error::corrupt(format!(
            "expected {expected} weight bytes, found {}",
            r.0.len()
        )));
    }
    let mut model = GlobalModel::zeros(arch);
    model.version = version;
    let mut values = r.0.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    for layer in &mut model.layers {
        for v in &mut layer.data {
            *v = values.next().expect("length checked");
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &GlobalModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GlobalModel> {
    decode_checkpoint(&std::fs::read(path)?)
}
