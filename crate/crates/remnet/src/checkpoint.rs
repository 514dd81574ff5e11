//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! ```text
//! magic "RMNT" | version u32 | epoch u32 | val_loss f64
//! descriptor_len u32 | descriptor (UTF-8 TOML)
//! entry_count u32 | total_param_count u64
//! entry_count x { name_len u16 | name | kind u8 (0 param, 1 buffer)
//!                 | ndim u8 | dims u32 x ndim | data f32 x prod(dims) }
//! ```

use std::path::Path;

use remnet_core::param::ParamStore;
use remnet_core::Tensor;

use crate::config::ModelDescriptor;
use crate::error::{IoError, IoResult};
use crate::model::AnyModel;

pub const MAGIC: [u8; 4] = *b"RMNT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub val_loss: f64,
    pub descriptor: ModelDescriptor,
}

pub fn encode(meta: &CheckpointMeta, store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&meta.epoch.to_le_bytes());
    out.extend_from_slice(&meta.val_loss.to_le_bytes());
    let desc = meta.descriptor.to_toml();
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    let entries: Vec<(&str, u8, &Tensor<f32>)> = store
        .params()
        .iter()
        .map(|p| (p.name.as_str(), 0u8, &p.tensor))
        .chain(store.buffers().iter().map(|b| (b.name.as_str(), 1u8, &b.tensor)))
        .collect();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    out.extend_from_slice(&(store.trainable_count() as u64).to_le_bytes());
    for (name, kind, t) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(kind);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
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

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> IoResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| IoError::checkpoint(self.path, "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> IoResult<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> IoResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> IoResult<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> IoResult<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> IoResult<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> IoResult<f64> {
        self.array().map(f64::from_le_bytes)
    }
}

/// Rebuilds the model described in the checkpoint and loads every stored
/// tensor into it. Missing, extra or mis-shaped tensors are errors.
pub fn decode(bytes: &[u8], path: &Path) -> IoResult<(AnyModel, CheckpointMeta)> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.array::<4>()? != MAGIC {
        return Err(IoError::checkpoint(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(IoError::checkpoint(path, format!("unsupported version {version}")));
    }
    let epoch = r.u32()?;
    let val_loss = r.f64()?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| IoError::checkpoint(path, "descriptor is not UTF-8"))?;
    let descriptor = ModelDescriptor::from_toml(text, path)?;
    let mut model = AnyModel::build(&descriptor, 0)?;
    let count = r.u32()? as usize;
    let total = r.u64()?;
    let store = model.store_mut();
    let expected = store.params().len() + store.buffers().len();
    if count != expected || total != store.trainable_count() as u64 {
        return Err(IoError::checkpoint(
            path,
            format!("{count} tensors / {total} parameters stored, descriptor needs {expected} / {}", store.trainable_count()),
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| IoError::checkpoint(path, "tensor name is not UTF-8"))?.to_string();
        let kind = r.u8()?;
        let is_param = store.params().iter().any(|p| p.name == name);
        if (kind == 0) != is_param || kind > 1 {
            return Err(IoError::checkpoint(path, format!("tensor `{name}` has the wrong kind")));
        }
        let ndim = r.u8()? as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<IoResult<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| IoError::checkpoint(path, "tensor too large"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if !seen.insert(name.clone()) {
            return Err(IoError::checkpoint(path, format!("duplicate tensor `{name}`")));
        }
        store.load_tensor(&name, Tensor::new(&dims, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(IoError::checkpoint(path, "trailing bytes"));
    }
    Ok((model, CheckpointMeta { epoch, val_loss, descriptor }))
}

pub fn save(path: &Path, meta: &CheckpointMeta, store: &ParamStore<f32>) -> IoResult<()> {
    std::fs::write(path, encode(meta, store)).map_err(|e| IoError::io(path, e))
}

pub fn load(path: &Path) -> IoResult<(AnyModel, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(desc: ModelDescriptor) -> CheckpointMeta {
        CheckpointMeta {
            epoch: 3,
            val_loss: 0.125,
            descriptor: desc,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let desc = ModelDescriptor::toy(3, true);
        let mut model = AnyModel::build(&desc, 42).unwrap();
        // make buffers non-default too
        for (i, v) in model.store_mut().params_mut()[0].tensor.data_mut().iter_mut().enumerate() {
            *v = f32::from_bits(0x3f80_0001 + i as u32);
        }
        let m = meta(desc);
        let bytes = encode(&m, model.store());
        let (back, back_meta) = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back_meta, m);
        let bits = |s: &ParamStore<f32>| -> Vec<u32> {
            s.params().iter().flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits())).chain(s.buffers().iter().flat_map(|b| b.tensor.data().iter().map(|v| v.to_bits()))).collect()
        };
        assert_eq!(bits(back.store()), bits(model.store()));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let desc = ModelDescriptor::toy(2, false);
        let model = AnyModel::build(&desc, 1).unwrap();
        let bytes = encode(&meta(desc), model.store());
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, Path::new("m")).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long, Path::new("m")).is_err());
    }
}
