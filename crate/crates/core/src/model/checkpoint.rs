//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic            4 bytes  "UQDN"
//! version          u32      1
//! config block
//!   height, width  u32, u32
//!   n_enc          u32
//!   enc_channels   n_enc × u32
//!   bottleneck     u32
//!   dropout_rate   f64
//!   num_heads      u32
//!   out_channels   u32
//!   max_depth      f64
//!   seed           u64
//! n_arrays         u32
//! per array, in declaration order
//!   ndim           u32
//!   dims           ndim × u32
//!   data           product(dims) × f64
//! ```

use std::fs;
use std::path::Path;

use super::{DepthNet, ModelConfig};
use crate::autodiff::Array;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UQDN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(net: &DepthNet) -> Vec<u8> {
    let c = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32le(&mut out, CHECKPOINT_VERSION as usize);
    u32le(&mut out, c.input_size.0);
    u32le(&mut out, c.input_size.1);
    u32le(&mut out, c.enc_channels.len());
    for &ch in &c.enc_channels {
        u32le(&mut out, ch);
    }
    u32le(&mut out, c.bottleneck_channels);
    out.extend_from_slice(&c.dropout_rate.to_le_bytes());
    u32le(&mut out, c.num_heads);
    u32le(&mut out, c.head_out_channels);
    out.extend_from_slice(&c.max_depth.to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    u32le(&mut out, net.params().len());
    for p in net.params() {
        u32le(&mut out, p.ndim());
        for &d in p.shape() {
            u32le(&mut out, d);
        }
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::corrupt(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<DepthNet> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::corrupt(path, "bad magic, not a UQDN checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::corrupt(path, format!("unsupported checkpoint version {version}")));
    }
    let input_size = (r.u32()?, r.u32()?);
    let n_enc = r.u32()?;
    if n_enc > 16 {
        return Err(Error::corrupt(path, format!("implausible encoder depth {n_enc}")));
    }
    let enc_channels = (0..n_enc).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        input_size,
        enc_channels,
        bottleneck_channels: r.u32()?,
        dropout_rate: r.f64()?,
        num_heads: r.u32()?,
        head_out_channels: r.u32()?,
        max_depth: r.f64()?,
        seed: r.u64()?,
    };
    config
        .validate()
        .map_err(|e| Error::corrupt(path, format!("invalid config block: {e}")))?;
    let n = r.u32()?;
    let mut params = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let ndim = r.u32()?;
        if ndim > 8 {
            return Err(Error::corrupt(path, format!("implausible array rank {ndim}")));
        }
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Array::new(shape, data).map_err(|e| Error::corrupt(path, e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::corrupt(path, "trailing bytes after last array"));
    }
    DepthNet::from_params(config, params).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn save_checkpoint(net: &DepthNet, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<DepthNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> DepthNet {
        DepthNet::build(ModelConfig {
            input_size: (8, 8),
            enc_channels: vec![2, 3],
            bottleneck_channels: 4,
            num_heads: 2,
            head_out_channels: 2,
            seed: 3,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let n = net();
        let bytes = write_checkpoint(&n);
        assert_eq!(&bytes[..4], b"UQDN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = read_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn truncation_and_bad_magic_are_corruption() {
        let bytes = write_checkpoint(&net());
        let p = Path::new("mem");
        assert!(matches!(read_checkpoint(&bytes[..bytes.len() - 3], p), Err(Error::Corrupt { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad, p), Err(Error::Corrupt { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(read_checkpoint(&long, p), Err(Error::Corrupt { .. })));
    }
}
