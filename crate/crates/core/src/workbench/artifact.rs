//! Binary container for offline ROM artifacts.
//!
//! Layout, all integers little-endian:
//! magic `TARROM1\0`, version byte, `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `u64` dims, row-major `f64` values;
//! finally `u64` length and UTF-8 `key=value` lines of metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rom::ReducedBasis;
use crate::tar::{TarArtifact, TarMode};

pub const MAGIC: &[u8; 8] = b"TARROM1\0";
pub const VERSION: u8 = 1;

/// Named row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

/// Serializes named tensors and metadata.
pub fn encode(
    tensors: &[(String, Tensor)],
    metadata: &BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        if t.dims.iter().product::<usize>() != t.data.len() {
            return fmt_err(format!("tensor '{name}' dims do not match its data"));
        }
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut text = String::new();
    for (k, v) in metadata {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return fmt_err(format!("metadata entry '{k}' cannot be stored"));
        }
        text.push_str(&format!("{k}={v}\n"));
    }
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return fmt_err("truncated artifact");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
        .or_else(|_| fmt_err("dimension overflows usize"))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses bytes written by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(Vec<(String, Tensor)>, BTreeMap<String, String>)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8).ok() != Some(&MAGIC[..]) {
        return fmt_err("bad magic");
    }
    let version = c.take(1)?[0];
    if version != VERSION {
        return fmt_err(format!("unsupported version {version}"));
    }
    let count = c.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let nlen = c.u32()?;
        let name = std::str::from_utf8(c.take(nlen)?)
            .or_else(|_| fmt_err("tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u32()?;
        if rank.saturating_mul(8) > c.remaining() {
            return fmt_err("truncated artifact");
        }
        let dims = (0..rank).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= c.remaining()))
            .ok_or_else(|| Error::Format(format!("tensor '{name}' is truncated or oversized")))?;
        let data = c
            .take(len * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Tensor { dims, data }));
    }
    let mlen = c.u64()?;
    let text = std::str::from_utf8(c.take(mlen)?).or_else(|_| fmt_err("metadata is not UTF-8"))?;
    if c.remaining() != 0 {
        return fmt_err("trailing bytes after metadata");
    }
    let mut metadata = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed metadata line '{line}'")))?;
        metadata.insert(k.to_string(), v.to_string());
    }
    Ok((tensors, metadata))
}

fn push_basis(out: &mut Vec<(String, Tensor)>, prefix: &str, b: &ReducedBasis) {
    let t = |dims: Vec<usize>, data: &[f64]| Tensor {
        dims,
        data: data.to_vec(),
    };
    out.push((format!("{prefix}.modes"), t(vec![b.rank, b.nh], &b.modes)));
    out.push((
        format!("{prefix}.singular"),
        t(vec![b.singular_values.len()], &b.singular_values),
    ));
    out.push((format!("{prefix}.u_rho"), t(vec![b.rank, b.ndof], &b.u_rho)));
    out.push((format!("{prefix}.u_iso"), t(vec![b.rank, b.ndof], &b.u_iso)));
    for (q, blk) in b.op_blocks.iter().enumerate() {
        out.push((format!("{prefix}.op.{q}"), t(vec![b.rank, b.rank], blk)));
    }
    for (p, blk) in b.rhs_blocks.iter().enumerate() {
        out.push((format!("{prefix}.rhs.{p}"), t(vec![b.rank], blk)));
    }
}

fn take_basis(
    tensors: &mut BTreeMap<String, Tensor>,
    prefix: &str,
) -> Result<Option<ReducedBasis>> {
    let Some(modes) = tensors.remove(&format!("{prefix}.modes")) else {
        return Ok(None);
    };
    let mut get = |name: &str| {
        tensors
            .remove(&format!("{prefix}.{name}"))
            .ok_or_else(|| Error::Format(format!("missing tensor '{prefix}.{name}'")))
    };
    let singular = get("singular")?;
    let u_rho = get("u_rho")?;
    let u_iso = get("u_iso")?;
    let [rank, nh] = modes.dims[..] else {
        return fmt_err(format!("'{prefix}.modes' must have rank 2"));
    };
    let ndof = match u_rho.dims[..] {
        [r, n] if r == rank => n,
        _ => return fmt_err(format!("'{prefix}.u_rho' dimensions are inconsistent")),
    };
    if u_iso.dims != [rank, ndof] || singular.dims.len() != 1 {
        return fmt_err(format!("'{prefix}' density maps are inconsistent"));
    }
    let mut op_blocks = Vec::new();
    while let Some(t) = tensors.remove(&format!("{prefix}.op.{}", op_blocks.len())) {
        if t.dims != [rank, rank] {
            return fmt_err(format!(
                "'{prefix}.op.{}' has wrong dimensions",
                op_blocks.len()
            ));
        }
        op_blocks.push(t.data);
    }
    let mut rhs_blocks = Vec::new();
    while let Some(t) = tensors.remove(&format!("{prefix}.rhs.{}", rhs_blocks.len())) {
        if t.dims != [rank] {
            return fmt_err(format!(
                "'{prefix}.rhs.{}' has wrong dimensions",
                rhs_blocks.len()
            ));
        }
        rhs_blocks.push(t.data);
    }
    Ok(Some(ReducedBasis {
        nh,
        ndof,
        rank,
        modes: modes.data,
        singular_values: singular.data,
        u_rho: u_rho.data,
        u_iso: u_iso.data,
        op_blocks,
        rhs_blocks,
    }))
}

pub fn artifact_to_bytes(artifact: &TarArtifact) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    if let Some(b) = &artifact.ig_basis {
        push_basis(&mut tensors, "ig", b);
    }
    for (l, b) in artifact.levels.iter().enumerate() {
        push_basis(&mut tensors, &format!("level{}", l + 1), b);
    }
    let mut meta = artifact.metadata.clone();
    meta.insert("mode".into(), artifact.mode.as_str().into());
    encode(&tensors, &meta)
}

pub fn artifact_from_bytes(bytes: &[u8]) -> Result<TarArtifact> {
    let (list, mut metadata) = decode(bytes)?;
    let mut tensors = BTreeMap::new();
    for (name, t) in list {
        if tensors.insert(name.clone(), t).is_some() {
            return fmt_err(format!("duplicate tensor '{name}'"));
        }
    }
    let mode = metadata
        .remove("mode")
        .ok_or_else(|| Error::Format("missing 'mode' metadata".into()))?;
    let mode = TarMode::parse(&mode).map_err(|e| Error::Format(e.to_string()))?;
    let ig_basis = take_basis(&mut tensors, "ig")?;
    let mut levels = Vec::new();
    while let Some(b) = take_basis(&mut tensors, &format!("level{}", levels.len() + 1))? {
        levels.push(b);
    }
    if let Some(name) = tensors.keys().next() {
        return fmt_err(format!("unexpected tensor '{name}'"));
    }
    let sizes: Vec<(usize, usize)> = ig_basis
        .iter()
        .chain(&levels)
        .map(|b| (b.nh, b.ndof))
        .collect();
    if sizes.windows(2).any(|w| w[0] != w[1]) {
        return fmt_err("bases disagree on problem size");
    }
    Ok(TarArtifact {
        mode,
        ig_basis,
        levels,
        metadata,
    })
}

/// Writes `artifact` to `path` atomically via a sibling temporary file.
pub fn save_artifact(artifact: &TarArtifact, path: &Path) -> Result<()> {
    let bytes = artifact_to_bytes(artifact)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<TarArtifact> {
    artifact_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(nh: usize, ndof: usize, rank: usize, seed: f64) -> ReducedBasis {
        let v = |n: usize, s: f64| {
            (0..n)
                .map(|i| (s + i as f64 * 0.37).sin() * 1e-3f64.powi(i as i32 % 4))
                .collect::<Vec<_>>()
        };
        ReducedBasis {
            nh,
            ndof,
            rank,
            modes: v(nh * rank, seed),
            singular_values: v(rank + 2, seed + 1.0),
            u_rho: v(ndof * rank, seed + 2.0),
            u_iso: v(ndof * rank, seed + 3.0),
            op_blocks: vec![v(rank * rank, seed + 4.0), v(rank * rank, seed + 5.0)],
            rhs_blocks: vec![v(rank, seed + 6.0)],
        }
    }

    fn artifact() -> TarArtifact {
        let mut metadata = BTreeMap::new();
        metadata.insert("family".into(), "demo".into());
        metadata.insert("note".into(), "a=b".into());
        TarArtifact {
            mode: TarMode::Fgmres,
            ig_basis: Some(basis(12, 3, 2, 0.1)),
            levels: vec![basis(12, 3, 3, 0.2), basis(12, 3, 0, 0.3)],
            metadata,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let a = artifact();
        let bytes = artifact_to_bytes(&a).unwrap();
        let b = artifact_from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        let bits = |x: &TarArtifact| -> Vec<u64> {
            x.levels
                .iter()
                .chain(&x.ig_basis)
                .flat_map(|b| b.modes.iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(artifact_to_bytes(&b).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tarrom");
        save_artifact(&artifact(), &path).unwrap();
        assert_eq!(load_artifact(&path).unwrap(), artifact());
    }

    #[test]
    fn corrupted_inputs_are_format_errors() {
        let bytes = artifact_to_bytes(&artifact()).unwrap();
        for cut in [0, 5, 9, 13, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(artifact_from_bytes(&bytes[..cut]), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(artifact_from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(artifact_from_bytes(&bad), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(artifact_from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn inconsistent_dimensions_are_rejected() {
        let mut a = artifact();
        a.levels[0].u_rho.truncate(3);
        a.levels[0].u_iso.truncate(3);
        a.levels[0].ndof = 1;
        assert!(matches!(
            artifact_from_bytes(&artifact_to_bytes(&a).unwrap()),
            Err(Error::Format(_))
        ));
        let mut t = vec![(
            "x".to_string(),
            Tensor {
                dims: vec![2, 2],
                data: vec![0.0; 3],
            },
        )];
        assert!(encode(&t, &BTreeMap::new()).is_err());
        t[0].1.data.push(1.0);
        let (back, _) = decode(&encode(&t, &BTreeMap::new()).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
