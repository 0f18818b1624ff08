//! Versioned binary checkpoint.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "UDUCENS\0"
//! version      u32
//! member tag   u8       0 = physics, 1 = mlp
//! B            u32
//! header       physics: fixed_variance [f64; 4]
//!              mlp:     hidden u32, var_min f64, var_max f64
//! param_len    u64
//! live         B × param_len f64
//! target       B × param_len f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};

use super::{Ensemble, Member, MlpMember, PhysicsMember, VarianceBounds};

const MAGIC: &[u8; 8] = b"UDUCENS\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(e: &Ensemble) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    match e.member(0) {
        Member::Physics(p) => {
            out.push(0);
            out.extend_from_slice(&(e.size() as u32).to_le_bytes());
            for v in p.fixed_variance {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Member::Mlp(m) => {
            out.push(1);
            out.extend_from_slice(&(e.size() as u32).to_le_bytes());
            out.extend_from_slice(&(m.hidden as u32).to_le_bytes());
            out.extend_from_slice(&m.bounds.min.to_le_bytes());
            out.extend_from_slice(&m.bounds.max.to_le_bytes());
        }
    }
    let len = e.member(0).params().len();
    out.extend_from_slice(&(len as u64).to_le_bytes());
    for m in e.members().iter().chain(e.targets()) {
        for v in &m.params().values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Ensemble> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not an ensemble checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let tag = r.u8()?;
    let b = r.u32()? as usize;
    if b == 0 {
        return Err(Error::Checkpoint("ensemble size is zero".into()));
    }
    let make: Box<dyn Fn(Vec<f64>) -> Member> = match tag {
        0 => {
            let mut var = [0.0; 4];
            for v in var.iter_mut() {
                *v = r.f64()?;
            }
            Box::new(move |p| {
                let mut m = PhysicsMember::from_log_params(p);
                m.fixed_variance = var;
                Member::Physics(m)
            })
        }
        1 => {
            let hidden = r.u32()? as usize;
            let bounds = VarianceBounds {
                min: r.f64()?,
                max: r.f64()?,
            };
            let expected = super::mlp::layout(hidden).len();
            let len = r.u64()? as usize;
            if len != expected {
                return Err(Error::Checkpoint(format!(
                    "parameter length {len} does not match hidden width {hidden}"
                )));
            }
            r.pos -= 8;
            Box::new(move |p| Member::Mlp(MlpMember::from_params(hidden, bounds, p)))
        }
        t => return Err(Error::Checkpoint(format!("unknown member type tag {t}"))),
    };
    let len = r.u64()? as usize;
    if tag == 0 && len != 2 {
        return Err(Error::Checkpoint(format!("physics members have 2 parameters, found {len}")));
    }
    let live = (0..b).map(|_| r.f64s(len).map(&make)).collect::<Result<Vec<_>>>()?;
    let targets = (0..b).map(|_| r.f64s(len).map(&make)).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ensemble::with_targets(live, targets)
}

pub fn save_checkpoint(e: &Ensemble, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(e)).map_err(|err| Error::io(path, err))
}

pub fn load_checkpoint(path: &Path) -> Result<Ensemble> {
    let bytes = std::fs::read(path).map_err(|err| Error::io(path, err))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::PhysicsParams;
    use crate::rng::derive_rng;

    #[test]
    fn physics_round_trip() {
        let mut e = Ensemble::physics_random(9, &PhysicsParams::nominal(), 0.2, &mut derive_rng(1, 4));
        e.member_mut(2).params_mut().values[0] += 0.3;
        let back = decode_checkpoint(&encode_checkpoint(&e)).unwrap();
        assert_eq!(back.members(), e.members());
        assert_eq!(back.targets(), e.targets());
    }

    #[test]
    fn mlp_round_trip() {
        let e = Ensemble::mlp_random(3, 8, VarianceBounds::default(), &mut derive_rng(1, 4));
        let back = decode_checkpoint(&encode_checkpoint(&e)).unwrap();
        assert_eq!(back.members(), e.members());
    }

    #[test]
    fn rejects_bad_version_magic_and_truncation() {
        let e = Ensemble::physics_from(&[(0.1, 1.0)]);
        let bytes = encode_checkpoint(&e);

        let mut wrong_version = bytes.clone();
        wrong_version[8..12].copy_from_slice(&2u32.to_le_bytes());
        let err = decode_checkpoint(&wrong_version).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(decode_checkpoint(&wrong_magic).is_err());

        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(decode_checkpoint(&trailing).is_err());
    }
}
