//! Binary weight file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "VRNNWTS\0"
//! version    u32
//! seed       u64
//! input rank u32, then rank x u32 dims
//! layers     u32 count, then per layer: kind u8 + 4 x u32 arguments
//! params     u64 count, then count x f32
//! crc32      u32 over every preceding byte
//! ```

use std::io::{Read, Write};

use crate::{LayerSpec, Network, NnError, Result};

pub const MAGIC: &[u8; 8] = b"VRNNWTS\0";
pub const FORMAT_VERSION: u32 = 1;

fn encode_layer(l: &LayerSpec) -> (u8, [u32; 4]) {
    match *l {
        LayerSpec::Dense { inputs, outputs } => (0, [inputs as u32, outputs as u32, 0, 0]),
        LayerSpec::DepthwiseSeparableConv {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => (
            1,
            [in_channels as u32, out_channels as u32, kernel as u32, stride as u32],
        ),
        LayerSpec::SpaceToDepth { block } => (2, [block as u32, 0, 0, 0]),
        LayerSpec::Relu => (3, [0; 4]),
        LayerSpec::Tanh => (4, [0; 4]),
        LayerSpec::Flatten => (5, [0; 4]),
    }
}

fn decode_layer(kind: u8, a: [u32; 4]) -> Result<LayerSpec> {
    let [a0, a1, a2, a3] = a.map(|v| v as usize);
    Ok(match kind {
        0 => LayerSpec::Dense {
            inputs: a0,
            outputs: a1,
        },
        1 => LayerSpec::DepthwiseSeparableConv {
            in_channels: a0,
            out_channels: a1,
            kernel: a2,
            stride: a3,
        },
        2 => LayerSpec::SpaceToDepth { block: a0 },
        3 => LayerSpec::Relu,
        4 => LayerSpec::Tanh,
        5 => LayerSpec::Flatten,
        k => return Err(NnError::CorruptFile(format!("unknown layer kind {k}"))),
    })
}

/// Serialises a network into a self-contained, checksummed byte block.
pub fn encode(net: &Network) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + net.param_count() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&net.seed().to_le_bytes());
    buf.extend_from_slice(&(net.input_shape().len() as u32).to_le_bytes());
    for &d in net.input_shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        let (kind, args) = encode_layer(l);
        buf.push(kind);
        for a in args {
            buf.extend_from_slice(&a.to_le_bytes());
        }
    }
    buf.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for &p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| NnError::CorruptFile("truncated".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a block written by [`encode`]. Returns the network and the number of bytes consumed.
pub fn decode(data: &[u8]) -> Result<(Network, usize)> {
    let mut c = Cursor { data, pos: 0 };
    if c.take(8).map_err(|_| NnError::BadMagic)? != MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let seed = c.u64()?;
    let rank = c.u32()? as usize;
    if rank > 8 {
        return Err(NnError::CorruptFile(format!("input rank {rank}")));
    }
    let input_shape = (0..rank).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let n_layers = c.u32()? as usize;
    if n_layers > 4096 {
        return Err(NnError::CorruptFile(format!("{n_layers} layers")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = c.u8()?;
        let args = [c.u32()?, c.u32()?, c.u32()?, c.u32()?];
        layers.push(decode_layer(kind, args)?);
    }
    let count = c.u64()? as usize;
    let raw = c.take(count.checked_mul(4).ok_or_else(|| NnError::CorruptFile("param count".into()))?)?;
    let body_end = c.pos;
    let stored = c.u32()?;
    if crc32fast::hash(&data[..body_end]) != stored {
        return Err(NnError::CorruptFile("checksum mismatch".into()));
    }
    let mut net = Network::with_zero_params(input_shape, layers, seed)
        .map_err(|e| NnError::CorruptFile(format!("layer manifest: {e}")))?;
    if net.param_count() != count {
        return Err(NnError::CorruptFile(format!(
            "manifest needs {} params, file has {count}",
            net.param_count()
        )));
    }
    for (p, b) in net.params_mut().iter_mut().zip(raw.chunks_exact(4)) {
        *p = f32::from_le_bytes(b.try_into().unwrap());
    }
    Ok((net, c.pos))
}

pub fn write_network<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    w.write_all(&encode(net))?;
    Ok(())
}

pub fn read_network<R: Read>(r: &mut R) -> Result<Network> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let (net, used) = decode(&buf)?;
    if used != buf.len() {
        return Err(NnError::CorruptFile("trailing bytes".into()));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn sample_net(seed: u64) -> Network {
        Network::new(
            vec![8, 8, 1],
            vec![
                LayerSpec::SpaceToDepth { block: 2 },
                LayerSpec::DepthwiseSeparableConv {
                    in_channels: 4,
                    out_channels: 8,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 32, outputs: 5 },
                LayerSpec::Tanh,
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = sample_net(11);
        let bytes = encode(&net);
        let mut r = &bytes[..];
        let back = read_network(&mut r).unwrap();
        assert_eq!(back, net);
        let x = Tensor::new(vec![2, 8, 8, 1], (0..128).map(|i| (i as f32 * 0.1).cos()).collect()).unwrap();
        let a = net.predict(&x).unwrap();
        let b = back.predict(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut bytes = encode(&sample_net(3));
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(NnError::CorruptFile(_))));
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = encode(&sample_net(3));
        bytes[8] = 9;
        assert!(matches!(decode(&bytes), Err(NnError::VersionMismatch { found: 9, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(NnError::BadMagic)));
    }
}
