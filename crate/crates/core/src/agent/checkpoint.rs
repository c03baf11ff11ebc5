//! Binary checkpoint format.
//!
//! ```text
//! magic      9 bytes  "POSERCKPT"
//! version    u16
//! step       u64
//! layers     u32      number of layer widths L (network has L-1 layers)
//! widths     L x u32
//! params     f32 x P  layer by layer: W (row-major, outputs x inputs), then b
//! adam_t     u64
//! adam_m     f32 x P  same layout as params
//! adam_v     f32 x P
//! crc32      u32      over every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::network::QNetwork;
use crate::{Error, Result};

pub const MAGIC: &[u8; 9] = b"POSERCKPT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: QNetwork,
    pub adam: AdamState,
    pub step: u64,
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode(net: &QNetwork, adam: &AdamState, step: u64) -> Vec<u8> {
    let p = net.param_count();
    let mut buf = Vec::with_capacity(64 + 12 * p);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&step.to_le_bytes());
    buf.extend_from_slice(&(net.shape().len() as u32).to_le_bytes());
    for &w in net.shape() {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    put_f32s(&mut buf, net.params());
    buf.extend_from_slice(&adam.t.to_le_bytes());
    put_f32s(&mut buf, &adam.m);
    put_f32s(&mut buf, &adam.v);
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::CorruptChecksum)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(Error::CorruptChecksum)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or(Error::CorruptChecksum)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let header = MAGIC.len() + 2;
    if bytes.len() < header {
        return Err(Error::CorruptChecksum);
    }
    let version = u16::from_le_bytes([bytes[MAGIC.len()], bytes[MAGIC.len() + 1]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < header + 4 {
        return Err(Error::CorruptChecksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::CorruptChecksum);
    }

    let mut r = Reader {
        bytes: body,
        pos: header,
    };
    let step = r.u64()?;
    let n_widths = r.u32()? as usize;
    if !(2..=64).contains(&n_widths) {
        return Err(Error::CorruptChecksum);
    }
    let shape = (0..n_widths)
        .map(|_| r.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = QNetwork::zeros(&shape).param_count();
    let params = r.f32s(count)?;
    let net = QNetwork::from_params(&shape, params).ok_or(Error::CorruptChecksum)?;
    let t = r.u64()?;
    let m = r.f32s(count)?;
    let v = r.f32s(count)?;
    if r.pos != body.len() {
        return Err(Error::CorruptChecksum);
    }
    Ok(Checkpoint {
        net,
        adam: AdamState { m, v, t },
        step,
    })
}

pub fn save_checkpoint(path: &Path, net: &QNetwork, adam: &AdamState, step: u64) -> Result<()> {
    fs::write(path, encode(net, adam, step))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
