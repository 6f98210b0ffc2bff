//! Byte layout (little-endian; bit sections MSB-first, byte-aligned):
//!
//! ```text
//! "ACFL" | u8 version | f32 alpha | f32 beta | u16 layer_count
//! per layer:
//!   u32 element_count | f32 u_min | f32 u_max | u16 L | u8 rice_k
//!   u32 mask_len  | Golomb-Rice zero runs
//!   u32 sign_len  | one bit per nonzero (1 = negative)
//!   (L + 1) x u8 Huffman code lengths
//!   u32 level_len | canonical Huffman level indices
//! ```

use super::bits::{BitReader, BitWriter};
use super::{golomb, huffman, EncodedUpdate, QuantizedLayer, QuantizedUpdate, UpdateHeader};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ACFL";
pub const VERSION: u8 = 1;
/// Upper bound on elements per layer accepted by the decoder.
pub const MAX_LAYER_ELEMENTS: usize = 1 << 28;

pub fn encode_update(q: &QuantizedUpdate, header: &UpdateHeader) -> Result<EncodedUpdate> {
    if q.layers.len() != header.shapes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} layers for {} shapes",
            q.layers.len(),
            header.shapes.len()
        )));
    }
    if q.layers.len() > u16::MAX as usize {
        return Err(Error::InvalidArgument("too many layers".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&header.alpha.to_le_bytes());
    out.extend_from_slice(&header.beta.to_le_bytes());
    out.extend_from_slice(&(q.layers.len() as u16).to_le_bytes());
    for (layer, &(o, i)) in q.layers.iter().zip(&header.shapes) {
        if layer.element_count != o * (i + 1) {
            return Err(Error::ShapeMismatch(format!(
                "layer of {} elements for shape ({o}, {i})",
                layer.element_count
            )));
        }
        encode_layer(layer, &mut out)?;
    }
    Ok(EncodedUpdate {
        bytes: out,
        declared_alpha: header.alpha,
        declared_beta: header.beta,
    })
}

fn put_section(out: &mut Vec<u8>, bytes: &[u8]) -> Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| Error::InvalidArgument("section too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

fn encode_layer(layer: &QuantizedLayer, out: &mut Vec<u8>) -> Result<()> {
    let count = u32::try_from(layer.element_count)
        .map_err(|_| Error::InvalidArgument("layer too large".into()))?;
    let nonzero = layer.mask.iter().filter(|&&b| b).count();
    if layer.mask.len() != layer.element_count
        || layer.level_indices.len() != nonzero
        || layer.signs.len() != nonzero
    {
        return Err(Error::ShapeMismatch("mask, levels and signs disagree".into()));
    }
    if layer.levels == 0 || layer.level_indices.iter().any(|&l| l > layer.levels) {
        return Err(Error::InvalidArgument("level index outside [0, L]".into()));
    }
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&layer.u_min.to_le_bytes());
    out.extend_from_slice(&layer.u_max.to_le_bytes());
    out.extend_from_slice(&layer.levels.to_le_bytes());
    let (k, mask_bytes) = golomb::encode_mask(&layer.mask);
    out.push(k);
    put_section(out, &mask_bytes)?;

    let mut w = BitWriter::new();
    for &s in &layer.signs {
        w.write_bit(s);
    }
    put_section(out, &w.finish())?;

    let mut freqs = vec![0u64; layer.levels as usize + 1];
    for &l in &layer.level_indices {
        freqs[l as usize] += 1;
    }
    let lengths = huffman::code_lengths(&freqs);
    out.extend_from_slice(&lengths);
    put_section(out, &huffman::encode_symbols(&layer.level_indices, &lengths))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::corrupt(format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let v = f32::from_le_bytes(self.array(what)?);
        if !v.is_finite() {
            return Err(Error::corrupt(format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn section(&mut self, what: &str) -> Result<&'a [u8]> {
        let len = self.u32(what)? as usize;
        self.take(len, what)
    }
}

/// Inverse of [`encode_update`]; returns the declared header alongside.
pub fn decode_update(encoded: &[u8]) -> Result<(QuantizedUpdate, f32, f32)> {
    let mut c = Cursor { bytes: encoded, pos: 0 };
    if c.array::<4>("magic")? != MAGIC {
        return Err(Error::corrupt("bad magic"));
    }
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(Error::corrupt(format!("unsupported version {version}")));
    }
    let alpha = c.f32("alpha")?;
    let beta = c.f32("beta")?;
    let layer_count = c.u16("layer count")?;
    let mut layers = Vec::with_capacity(layer_count as usize);
    for _ in 0..layer_count {
        layers.push(decode_layer(&mut c)?);
    }
    if c.pos != encoded.len() {
        return Err(Error::corrupt(format!("{} trailing bytes", encoded.len() - c.pos)));
    }
    Ok((QuantizedUpdate { layers }, alpha, beta))
}

fn decode_layer(c: &mut Cursor<'_>) -> Result<QuantizedLayer> {
    let element_count = c.u32("element count")? as usize;
    if element_count > MAX_LAYER_ELEMENTS {
        return Err(Error::corrupt(format!("layer of {element_count} elements")));
    }
    let u_min = c.f32("u_min")?;
    let u_max = c.f32("u_max")?;
    if u_min < 0.0 || u_min > u_max {
        return Err(Error::corrupt(format!("bad range [{u_min}, {u_max}]")));
    }
    let levels = c.u16("level count")?;
    if levels == 0 {
        return Err(Error::corrupt("level count 0"));
    }
    let k = c.u8("rice parameter")?;
    let mask = golomb::decode_mask(c.section("mask")?, k, element_count)?;
    let nonzero = mask.iter().filter(|&&b| b).count();

    let sign_bytes = c.section("signs")?;
    if sign_bytes.len() != nonzero.div_ceil(8) {
        return Err(Error::corrupt("sign section length mismatch"));
    }
    let mut r = BitReader::new(sign_bytes);
    let signs = (0..nonzero).map(|_| r.read_bit()).collect::<Result<Vec<_>>>()?;

    let lengths = c.take(levels as usize + 1, "code lengths")?;
    let decoder = huffman::Decoder::new(lengths)?;
    let level_bytes = c.section("levels")?;
    let mut r = BitReader::new(level_bytes);
    let level_indices = (0..nonzero)
        .map(|_| decoder.decode(&mut r))
        .collect::<Result<Vec<_>>>()?;
    if r.remaining() >= 8 {
        return Err(Error::corrupt("trailing bytes in level section"));
    }
    Ok(QuantizedLayer {
        element_count,
        u_min,
        u_max,
        levels,
        mask,
        level_indices,
        signs,
    })
}
