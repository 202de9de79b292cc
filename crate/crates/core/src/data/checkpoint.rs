//! Named-tensor container: `CVL1`, entry count, then per entry
//! `name_len, name, rank, dims..., f32 values`, all little-endian.

use std::fs;
use std::path::Path;

use crate::error::{CvlError, Result};
use crate::numeric::param::{ensure_unique_names, ParameterSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CVL1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params<P: ParameterSet + ?Sized>(model: &P) -> Self {
        Checkpoint {
            entries: model
                .parameters()
                .into_iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn extend(&mut self, other: Checkpoint) {
        self.entries.extend(other.entries);
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| CvlError::Format(format!("checkpoint has no entry {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        ensure_unique_names(self.entries.iter().map(|(n, _)| n.as_str()))?;
        let mut out = MAGIC.to_vec();
        put_u32(&mut out, self.entries.len())?;
        for (name, t) in &self.entries {
            put_u32(&mut out, name.len())?;
            out.extend(name.as_bytes());
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for &v in t.data() {
                out.extend((v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CvlError::Format("bad checkpoint magic".into()));
        }
        let count = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = r.u32()?;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CvlError::Format("checkpoint name is not UTF-8".into()))?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| CvlError::Format(format!("entry {name:?} is too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| CvlError::Format("entry too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| CvlError::Format(format!("entry {name:?}: {e}")))?;
            entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(CvlError::Format("trailing bytes after checkpoint".into()));
        }
        ensure_unique_names(entries.iter().map(|(n, _)| n.as_str()))?;
        Ok(Checkpoint { entries })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CvlError::Format(format!("{v} does not fit in u32")))?;
    out.extend(v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CvlError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?).map_err(|e| CvlError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path).map_err(|e| CvlError::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_to_f32_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = Checkpoint::new();
        c.push("a", Tensor::randn(&[3, 4], 1.0, &mut rng));
        c.push("b.bias", Tensor::randn(&[7], 100.0, &mut rng));
        c.push("scalar", Tensor::from_vec(vec![std::f64::consts::PI]));
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.entries.len(), 3);
        for ((n0, t0), (n1, t1)) in c.entries.iter().zip(&back.entries) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            for (a, b) in t0.data().iter().zip(t1.data()) {
                assert_eq!(*b, f64::from(*a as f32));
            }
        }
    }

    #[test]
    fn bytes_are_stable() {
        let mut c = Checkpoint::new();
        c.push("w", Tensor::from_vec(vec![1.0, -2.0]));
        let b = c.to_bytes().unwrap();
        let mut expected = b"CVL1".to_vec();
        expected.extend([1, 0, 0, 0, 1, 0, 0, 0, b'w', 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(b, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(Checkpoint::from_bytes(b"CVL2\0\0\0\0"), Err(CvlError::Format(_))));
        let mut c = Checkpoint::new();
        c.push("w", Tensor::from_vec(vec![1.0]));
        let b = c.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = Checkpoint::new();
        c.push("w", Tensor::from_vec(vec![1.0]));
        c.push("w", Tensor::from_vec(vec![2.0]));
        assert!(c.to_bytes().is_err());
    }
}
