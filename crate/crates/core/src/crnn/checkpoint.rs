//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "CSEDCKPT"
//! version  u32 LE   (1)
//! config   u32 LE length + UTF-8 JSON of CrnnConfig
//! count    u32 LE   number of tensors
//! tensor   u32 LE name length, name, u32 LE rank, rank x u64 LE dims,
//!          f64 LE values (row-major)
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{CrnnConfig, CrnnError, CrnnParams};
use crate::numkit::Tensor;

const MAGIC: &[u8; 8] = b"CSEDCKPT";
const VERSION: u32 = 1;

/// A loaded model plus a content hash identifying it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: CrnnParams,
    pub id: String,
}

impl Checkpoint {
    pub fn from_params(params: CrnnParams) -> Self {
        let id = content_id(&encode(&params));
        Checkpoint { params, id }
    }
}

fn content_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn encode(params: &CrnnParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(params.config()).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let tensors = params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in params.tensor_names().iter().zip(tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
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
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<CrnnParams, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let n = r.u32()? as usize;
    let config: CrnnConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| format!("config: {e}"))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| e.to_string())?);
        names.push(name);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let params = CrnnParams::from_tensors(config, tensors).map_err(|e| e.to_string())?;
    if params.tensor_names() != names {
        return Err("tensor names do not match the config layout".into());
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &CrnnParams) -> Result<String, CrnnError> {
    let bytes = encode(params);
    fs::write(path, &bytes)?;
    Ok(content_id(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CrnnError> {
    let bytes = fs::read(path).map_err(|e| CrnnError::Checkpoint {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let params = decode(&bytes)
        .map_err(|msg| CrnnError::Checkpoint { path: path.display().to_string(), msg })?;
    Ok(Checkpoint { params, id: content_id(&bytes) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crnn::init_params;

    #[test]
    fn round_trip_is_exact() {
        let p = init_params(&CrnnConfig::desk(8, 3), 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let id = save_checkpoint(&path, &p).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.params, p);
        assert_eq!(ck.id, id);
        assert_eq!(Checkpoint::from_params(p).id, id);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = init_params(&CrnnConfig::desk(8, 3), 12).unwrap();
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing.ckpt")),
            Err(CrnnError::Checkpoint { .. })
        ));
    }
}
