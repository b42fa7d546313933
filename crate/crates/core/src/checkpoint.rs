//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LGAD" | version: u32 | payload | crc32(payload): u32
//! payload = count: u32, then per tensor:
//!           name_len: u32 | name (UTF-8) | rank: u32 | dims: u32 × rank | f32 × ∏dims
//! ```
//!
//! Besides the model parameters the payload holds `arch.*` tensors describing
//! the architecture and `adam.*` tensors with the optimiser state.

use std::path::Path;

use crate::error::{Error, Result};
use crate::group::OperatorKind;
use crate::nn::{AdamState, Architecture, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LGAD";
pub const VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn usize_tensor(v: &[usize]) -> Tensor<f32> {
    Tensor::from_vec(v.iter().map(|&x| x as f32).collect())
}

pub fn encode_tensors(tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
        payload.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            payload.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let crc = crc32fast::hash(&payload);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < 12 {
        return Err(corrupt(format!("{} bytes is too short", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let payload = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let mut r = Reader { bytes: payload, at: 0 };
    // Parse before checking the CRC so truncation reports as such.
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| corrupt(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt(format!("tensor `{name}` size overflows")))?;
        let raw = r.take(
            n.checked_mul(4).ok_or_else(|| corrupt("size overflow"))?,
            &format!("data of `{name}`"),
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.at != payload.len() {
        return Err(corrupt(format!(
            "{} unexpected bytes after the last tensor",
            payload.len() - r.at
        )));
    }
    if crc32fast::hash(payload) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    Ok(out)
}

pub fn checkpoint_bytes(model: &Model<f32>, opt: &AdamState<f32>) -> Vec<u8> {
    let a = &model.arch;
    let mut tensors: Vec<(String, Tensor<f32>)> = vec![
        (
            "arch.dims".into(),
            usize_tensor(&[
                a.height,
                a.width,
                a.latent_dim,
                (a.operator == OperatorKind::Learned) as usize,
                a.pair_aligned as usize,
            ]),
        ),
        ("arch.hidden".into(), usize_tensor(&a.hidden)),
        ("arch.operator_hidden".into(), usize_tensor(&a.operator_hidden)),
    ];
    let named = model.named_params();
    tensors.extend(named.iter().map(|(n, t)| (n.clone(), (*t).clone())));
    tensors.push((
        "adam.hyper".into(),
        Tensor::from_vec(vec![
            opt.lr as f32,
            opt.beta1 as f32,
            opt.beta2 as f32,
            opt.eps as f32,
            opt.step as f32,
        ]),
    ));
    for ((n, _), (m, v)) in named.iter().zip(opt.first.iter().zip(&opt.second)) {
        tensors.push((format!("adam.m.{n}"), m.clone()));
        tensors.push((format!("adam.v.{n}"), v.clone()));
    }
    encode_tensors(&tensors)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model<f32>, opt: &AdamState<f32>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model, opt)).map_err(|e| Error::io(path, e))
}

fn to_usizes(t: &Tensor<f32>) -> Vec<usize> {
    t.data().iter().map(|&v| v as usize).collect()
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model<f32>, AdamState<f32>)> {
    let mut tensors = decode_tensors(bytes)?;
    let mut take = |name: &str| -> Result<Tensor<f32>> {
        let i = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| corrupt(format!("missing tensor `{name}`")))?;
        Ok(tensors.swap_remove(i).1)
    };
    let dims = to_usizes(&take("arch.dims")?);
    if dims.len() != 5 {
        return Err(corrupt("arch.dims must hold 5 entries"));
    }
    let arch = Architecture {
        height: dims[0],
        width: dims[1],
        latent_dim: dims[2],
        hidden: to_usizes(&take("arch.hidden")?),
        operator: if dims[3] == 1 {
            OperatorKind::Learned
        } else {
            OperatorKind::Geometric
        },
        operator_hidden: to_usizes(&take("arch.operator_hidden")?),
        pair_aligned: dims[4] == 1,
    };
    let mut model = Model::<f32>::init(arch, 0).map_err(|e| corrupt(e.to_string()))?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(model.params_mut()) {
        let t = take(name)?;
        if t.shape() != slot.shape() {
            return Err(corrupt(format!(
                "`{name}` has shape {:?}, architecture implies {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }

    let hyper = take("adam.hyper")?;
    if hyper.len() != 5 {
        return Err(corrupt("adam.hyper must hold 5 entries"));
    }
    let h = hyper.data();
    let mut opt = AdamState::new(h[0] as f64);
    opt.beta1 = h[1] as f64;
    opt.beta2 = h[2] as f64;
    opt.eps = h[3] as f64;
    opt.step = h[4] as u64;
    if opt.step > 0 {
        for name in &names {
            opt.first.push(take(&format!("adam.m.{name}"))?);
            opt.second.push(take(&format!("adam.v.{name}"))?);
        }
    }
    if let Some((extra, _)) = tensors.first() {
        return Err(corrupt(format!("unexpected tensor `{extra}`")));
    }
    Ok((model, opt))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, AdamState<f32>)> {
    let path = path.as_ref();
    checkpoint_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads and checks the stored architecture against `expected`.
pub fn load_checkpoint_for(
    path: impl AsRef<Path>,
    expected: &Architecture,
) -> Result<(Model<f32>, AdamState<f32>)> {
    let (model, opt) = load_checkpoint(path)?;
    if &model.arch != expected {
        return Err(Error::Shape(format!(
            "checkpoint architecture (d={}, hidden={:?}, {}×{}, {}) does not match the configuration (d={}, hidden={:?}, {}×{}, {})",
            model.arch.latent_dim,
            model.arch.hidden,
            model.arch.height,
            model.arch.width,
            model.arch.operator,
            expected.latent_dim,
            expected.hidden,
            expected.height,
            expected.width,
            expected.operator,
        )));
    }
    Ok((model, opt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::OperatorKind;

    fn trained_ish(operator: OperatorKind) -> (Model<f32>, AdamState<f32>) {
        let arch = Architecture {
            operator,
            ..Architecture::new(6, 6, 4, vec![8])
        };
        let mut model = Model::<f32>::init(arch, 5).unwrap();
        let mut opt = AdamState::new(1e-3);
        let grads: Vec<Tensor<f32>> = model
            .named_params()
            .iter()
            .map(|(_, t)| t.map(|v| v * 0.5 + 0.01))
            .collect();
        opt.step(&mut model.params_mut(), &grads).unwrap();
        (model, opt)
    }

    #[test]
    fn round_trip_is_bitwise() {
        for kind in [OperatorKind::Geometric, OperatorKind::Learned] {
            let (model, opt) = trained_ish(kind);
            let (m2, o2) = checkpoint_from_bytes(&checkpoint_bytes(&model, &opt)).unwrap();
            assert_eq!(m2, model);
            assert_eq!(o2.first, opt.first);
            assert_eq!(o2.second, opt.second);
            assert_eq!(o2.step, 1);
            let x = Tensor::full([2, 36], 0.25f32);
            assert_eq!(m2.encode(&x).unwrap(), model.encode(&x).unwrap());
        }
    }

    #[test]
    fn truncation_is_reported() {
        let (model, opt) = trained_ish(OperatorKind::Geometric);
        let bytes = checkpoint_bytes(&model, &opt);
        for cut in [3, 11, 40, bytes.len() - 1] {
            let e = checkpoint_from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(e, Error::CorruptCheckpoint(_)), "cut {cut}: {e}");
        }
    }

    #[test]
    fn bit_flip_fails_checksum() {
        let (model, opt) = trained_ish(OperatorKind::Geometric);
        let mut bytes = checkpoint_bytes(&model, &opt);
        let n = bytes.len();
        bytes[n - 10] ^= 0x40;
        let e = checkpoint_from_bytes(&bytes).unwrap_err();
        assert!(e.to_string().contains("checksum"), "{e}");
    }

    #[test]
    fn version_mismatch() {
        let (model, opt) = trained_ish(OperatorKind::Geometric);
        let mut bytes = checkpoint_bytes(&model, &opt);
        bytes[4] = 9;
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(Error::CheckpointVersion { found: 9, .. })
        ));
    }

    #[test]
    fn architecture_mismatch_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (model, opt) = trained_ish(OperatorKind::Geometric);
        save_checkpoint(&path, &model, &opt).unwrap();
        let other = Architecture::new(6, 6, 2, vec![8]);
        assert!(matches!(load_checkpoint_for(&path, &other), Err(Error::Shape(_))));
        assert!(load_checkpoint_for(&path, &model.arch).is_ok());
    }
}
