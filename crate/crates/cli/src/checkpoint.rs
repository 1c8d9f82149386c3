// SPDX-License-Identifier: Apache-2.0
//! Binary tensor container.
//!
//! ```text
//! "CFNOCKPT" | version u32 | count u32 |
//!   per tensor: name_len u32 | name (UTF-8) | rank u32 | dims u32[rank] |
//!               dtype u32 | payload (little-endian, row-major)
//! ```
//!
//! dtype 0 is `f32`, 1 is complex `f32` stored as interleaved (re, im), 2 is
//! `u32`. Model checkpoints carry their architecture in `arch.*` tensors.

use litho_cfno::ad::{Data, ParamSet, Tensor};
use litho_cfno::cfno::{CfnoConfig, CfnoNet};
use litho_cfno::Grid;
use num_complex::Complex64;

use crate::error::{IoError, Result};

pub const MAGIC: &[u8; 8] = b"CFNOCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Stored {
    F32(Vec<f32>),
    C32(Vec<[f32; 2]>),
    U32(Vec<u32>),
}

impl Stored {
    fn len(&self) -> usize {
        match self {
            Stored::F32(v) => v.len(),
            Stored::C32(v) => v.len(),
            Stored::U32(v) => v.len(),
        }
    }

    fn tag(&self) -> u32 {
        match self {
            Stored::F32(_) => 0,
            Stored::C32(_) => 1,
            Stored::U32(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Stored,
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let n: u64 = e.dims.iter().map(|&d| d as u64).product();
        if n != e.data.len() as u64 {
            return Err(IoError::Format(format!(
                "tensor `{}` has dims {:?} but {} values",
                e.name,
                e.dims,
                e.data.len()
            )));
        }
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&e.data.tag().to_le_bytes());
        match &e.data {
            Stored::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Stored::C32(v) => v
                .iter()
                .flatten()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Stored::U32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| IoError::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(data: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(IoError::Format("not a CFNOCKPT file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(IoError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| IoError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d as usize));
        let n = n.ok_or_else(|| IoError::Format(format!("tensor `{name}` is too large")))?;
        let words = |r: &mut Reader, k: usize| -> Result<Vec<[u8; 4]>> {
            let bytes = r.take(
                k.checked_mul(4)
                    .ok_or_else(|| IoError::Format("size overflow".into()))?,
            )?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| c.try_into().expect("4 bytes"))
                .collect())
        };
        let stored = match r.u32()? {
            0 => Stored::F32(
                words(&mut r, n)?
                    .into_iter()
                    .map(f32::from_le_bytes)
                    .collect(),
            ),
            1 => {
                let w = words(&mut r, 2 * n)?;
                Stored::C32(
                    w.chunks_exact(2)
                        .map(|p| [f32::from_le_bytes(p[0]), f32::from_le_bytes(p[1])])
                        .collect(),
                )
            }
            2 => Stored::U32(
                words(&mut r, n)?
                    .into_iter()
                    .map(u32::from_le_bytes)
                    .collect(),
            ),
            t => {
                return Err(IoError::Format(format!(
                    "tensor `{name}` has unknown dtype {t}"
                )))
            }
        };
        out.push(Entry {
            name,
            dims,
            data: stored,
        });
    }
    if r.pos != data.len() {
        return Err(IoError::Format(format!(
            "{} trailing bytes after the last tensor",
            data.len() - r.pos
        )));
    }
    Ok(out)
}

fn to_entry(name: &str, t: &Tensor) -> Entry {
    let dims = t.dims().iter().map(|&d| d as u32).collect();
    let data = match t.data() {
        Data::Real(v) => Stored::F32(v.iter().map(|&x| x as f32).collect()),
        Data::Complex(v) => Stored::C32(v.iter().map(|c| [c.re as f32, c.im as f32]).collect()),
    };
    Entry {
        name: name.to_string(),
        dims,
        data,
    }
}

fn to_tensor(e: &Entry) -> Result<Tensor> {
    let dims: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
    Ok(match &e.data {
        Stored::F32(v) => Tensor::real(&dims, v.iter().map(|&x| x as f64).collect())?,
        Stored::C32(v) => Tensor::complex(
            &dims,
            v.iter()
                .map(|c| Complex64::new(c[0] as f64, c[1] as f64))
                .collect(),
        )?,
        Stored::U32(_) => {
            return Err(IoError::Format(format!(
                "`{}` is not a float tensor",
                e.name
            )))
        }
    })
}

fn u32_entry(name: &str, v: Vec<u32>) -> Entry {
    Entry {
        name: name.to_string(),
        dims: vec![v.len() as u32],
        data: Stored::U32(v),
    }
}

pub fn encode_net(net: &CfnoNet) -> Result<Vec<u8>> {
    let c = net.config();
    let as_u32 = |v: &[usize]| v.iter().map(|&x| x as u32).collect::<Vec<_>>();
    let mut entries = vec![
        u32_entry("arch.token_sizes", as_u32(&c.token_sizes)),
        u32_entry("arch.modes", as_u32(&c.modes)),
        u32_entry("arch.width", vec![c.width as u32]),
        u32_entry("arch.token_radius", vec![c.token_radius as u32]),
        u32_entry(
            "arch.per_channel_token_conv",
            vec![u32::from(c.per_channel_token_conv)],
        ),
    ];
    entries.extend(net.params().iter().map(|(n, t)| to_entry(n, t)));
    encode(&entries)
}

pub fn decode_net(data: &[u8]) -> Result<CfnoNet> {
    let entries = decode(data)?;
    let arch = |name: &str| -> Result<Vec<usize>> {
        match entries.iter().find(|e| e.name == name).map(|e| &e.data) {
            Some(Stored::U32(v)) => Ok(v.iter().map(|&x| x as usize).collect()),
            _ => Err(IoError::Format(format!("checkpoint lacks `{name}`"))),
        }
    };
    let scalar = |name: &str| -> Result<usize> {
        arch(name)?
            .first()
            .copied()
            .ok_or_else(|| IoError::Format(format!("`{name}` is empty")))
    };
    let config = CfnoConfig {
        token_sizes: arch("arch.token_sizes")?,
        modes: arch("arch.modes")?,
        width: scalar("arch.width")?,
        token_radius: scalar("arch.token_radius")?,
        per_channel_token_conv: scalar("arch.per_channel_token_conv")? != 0,
    };
    let mut params = ParamSet::new();
    for e in entries.iter().filter(|e| !e.name.starts_with("arch.")) {
        params.insert(e.name.clone(), to_tensor(e)?)?;
    }
    Ok(CfnoNet::from_parts(config, params)?)
}

pub fn save_net(path: &std::path::Path, net: &CfnoNet) -> Result<()> {
    crate::error::write_bytes(path, &encode_net(net)?)
}

pub fn load_net(path: &std::path::Path) -> Result<CfnoNet> {
    decode_net(&crate::error::read_bytes(path)?)
}

/// A continuous mask as a single `[H, W]` tensor named `mask`.
pub fn encode_mask(m: &Grid<f64>) -> Result<Vec<u8>> {
    let (h, w) = m.dims();
    encode(&[Entry {
        name: "mask".into(),
        dims: vec![h as u32, w as u32],
        data: Stored::F32(m.as_slice().iter().map(|&v| v as f32).collect()),
    }])
}

pub fn decode_mask(data: &[u8]) -> Result<Grid<f64>> {
    let entries = decode(data)?;
    match entries.as_slice() {
        [Entry {
            dims,
            data: Stored::F32(v),
            ..
        }] if dims.len() == 2 => Ok(Grid::from_vec(
            dims[0] as usize,
            dims[1] as usize,
            v.iter().map(|&x| x as f64).collect(),
        )?),
        _ => Err(IoError::Format(
            "expected a single 2-D f32 mask tensor".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Entry> {
        vec![
            Entry {
                name: "w".into(),
                dims: vec![2, 3],
                data: Stored::F32(vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25e-7, f32::MAX, -2.0]),
            },
            Entry {
                name: "spectrum µ".into(),
                dims: vec![1, 2],
                data: Stored::C32(vec![[0.5, -0.25], [1e-30, 7.0]]),
            },
            u32_entry("arch.k", vec![8, 16]),
            Entry {
                name: "s".into(),
                dims: vec![],
                data: Stored::F32(vec![4.0]),
            },
        ]
    }

    #[test]
    fn layout_starts_with_magic_and_counts() {
        let b = encode(&sample()).unwrap();
        assert_eq!(&b[..8], b"CFNOCKPT");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 1);
        assert_eq!(&b[20..21], b"w");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let e = sample();
        let b = encode(&e).unwrap();
        let back = decode(&b).unwrap();
        assert_eq!(back, e);
        assert_eq!(encode(&back).unwrap(), b);
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let b = encode(&sample()).unwrap();
        for cut in [0, 7, 12, 20, b.len() - 1] {
            assert!(decode(&b[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = b.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = b;
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn mask_round_trip() {
        let g = Grid::from_fn(3, 4, |y, x| (y * 4 + x) as f64 / 16.0);
        assert_eq!(decode_mask(&encode_mask(&g).unwrap()).unwrap(), g);
    }
}
