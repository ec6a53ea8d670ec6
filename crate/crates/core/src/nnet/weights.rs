//! Little-endian weight container.
//!
//! ```text
//! "MVFIWGT1" | u32 count | count × { u16 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | data }
//! ```
//!
//! dtype: 0 = f32, 1 = i8, 2 = i32.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::nnet::graph::{Graph, Param};

pub const MAGIC: [u8; 8] = *b"MVFIWGT1";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl TensorData {
    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::I8(_) => 1,
            TensorData::I32(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

pub fn write_container<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(&MAGIC)?;
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Format("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for t in tensors {
        let name_len = u16::try_from(t.name.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::Format(format!("rank too large for `{}`", t.name)))?;
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::Format(format!("`{}` dims disagree with data length", t.name)));
        }
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[t.data.dtype(), rank])?;
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("dim too large in `{}`", t.name)))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::I8(v) => buf.extend(v.iter().map(|&x| x as u8)),
            TensorData::I32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated(what),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_container<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::Magic {
            expected: MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&mut r, "tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        read_exact(&mut r, &mut b2, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact(&mut r, &mut name, "tensor name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        read_exact(&mut r, &mut b2, "tensor header")?;
        let (dtype, rank) = (b2[0], b2[1]);
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(read_u32(&mut r, "tensor dims")? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("`{name}` dims overflow")))?;
        let width = match dtype {
            0 | 2 => 4,
            1 => 1,
            _ => return Err(Error::Format(format!("`{name}` has unknown dtype {dtype}"))),
        };
        let bytes = n
            .checked_mul(width)
            .ok_or_else(|| Error::Format(format!("`{name}` is too large")))?;
        // Read through `take` so a bogus size in a short file reports truncation
        // instead of allocating up front.
        let mut raw = Vec::new();
        (&mut r).take(bytes as u64).read_to_end(&mut raw)?;
        if raw.len() != bytes {
            return Err(Error::Truncated("tensor data"));
        }
        let data = match dtype {
            0 => TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => TensorData::I8(raw.iter().map(|&b| b as i8).collect()),
            _ => TensorData::I32(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        out.push(NamedTensor { name, dims, data });
    }
    Ok(out)
}

/// Serializes every graph parameter as f32, in name order.
pub fn save_weights<W: Write>(g: &Graph, w: W) -> Result<()> {
    let tensors: Vec<NamedTensor> = g
        .params()
        .iter()
        .map(|(name, p)| NamedTensor {
            name: name.clone(),
            dims: p.shape.clone(),
            data: TensorData::F32(p.data.clone()),
        })
        .collect();
    write_container(w, &tensors)
}

/// Replaces `g`'s parameters with those in the stream. Every graph parameter
/// must be present with the same shape, and no extra tensors are allowed.
pub fn load_weights<R: Read>(r: R, g: &Graph) -> Result<Graph> {
    let tensors = read_container(r)?;
    let mut by_name: BTreeMap<String, NamedTensor> = BTreeMap::new();
    for t in tensors {
        if by_name.contains_key(&t.name) {
            return Err(Error::Format(format!("duplicate tensor `{}`", t.name)));
        }
        by_name.insert(t.name.clone(), t);
    }
    // Shape problems are the most informative, so report them before name mismatches.
    for (name, p) in g.params() {
        if let Some(t) = by_name.get(name) {
            if t.dims != p.shape {
                return Err(Error::Shape {
                    name: name.clone(),
                    expected: p.shape.clone(),
                    found: t.dims.clone(),
                });
            }
        }
    }
    if let Some(extra) = by_name.keys().find(|k| !g.params().contains_key(*k)) {
        return Err(Error::Format(format!("unknown tensor `{extra}`")));
    }
    let mut out = g.clone();
    for (name, p) in out.params_mut().iter_mut() {
        let t = by_name
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
        match t.data {
            TensorData::F32(v) => *p = Param { shape: t.dims, data: v },
            _ => return Err(Error::Format(format!("`{name}` must be stored as f32"))),
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::unet::{build_unet_seeded, init_he, randomize_batch_norm, UNetConfig};

    fn random_s() -> Graph {
        let mut g = build_unet_seeded(&UNetConfig::anvil_s(), 1).unwrap();
        init_he(&mut g, 2, true);
        randomize_batch_norm(&mut g, 3);
        g
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = random_s();
        let mut buf = Vec::new();
        save_weights(&g, &mut buf).unwrap();
        let fresh = build_unet_seeded(&UNetConfig::anvil_s(), 99).unwrap();
        let back = load_weights(buf.as_slice(), &fresh).unwrap();
        for (name, p) in g.params() {
            let q = back.param(name).unwrap();
            assert!(p.data.iter().zip(&q.data).all(|(a, b)| a.to_bits() == b.to_bits()), "{name}");
        }
    }

    #[test]
    fn mixed_dtypes_round_trip() {
        let ts = vec![
            NamedTensor { name: "a".into(), dims: vec![2], data: TensorData::I8(vec![-128, 127]) },
            NamedTensor { name: "b".into(), dims: vec![1, 1], data: TensorData::I32(vec![-7]) },
            NamedTensor { name: "c".into(), dims: vec![], data: TensorData::F32(vec![1.5]) },
        ];
        let mut buf = Vec::new();
        write_container(&mut buf, &ts).unwrap();
        assert_eq!(read_container(buf.as_slice()).unwrap(), ts);
    }

    #[test]
    fn truncation_and_magic_are_distinct() {
        let g = random_s();
        let mut buf = Vec::new();
        save_weights(&g, &mut buf).unwrap();
        for cut in [3, 10, 15, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(load_weights(&buf[..cut], &g), Err(Error::Truncated(_))), "cut {cut}");
        }
        buf[0] = b'X';
        assert!(matches!(load_weights(buf.as_slice(), &g), Err(Error::Magic { .. })));
    }

    #[test]
    fn m_weights_into_s_graph_names_tensor() {
        let m = build_unet_seeded(&UNetConfig::anvil_m(), 1).unwrap();
        let mut buf = Vec::new();
        save_weights(&m, &mut buf).unwrap();
        match load_weights(buf.as_slice(), &random_s()) {
            Err(Error::Shape { name, .. }) => assert!(!name.is_empty()),
            other => panic!("expected shape error, got {other:?}"),
        }
    }
}
