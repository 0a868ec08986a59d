//! Binary checkpoints: magic, version, a JSON header describing every
//! tensor, then raw little-endian f32 payloads in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, Param};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Format { path: "<rng state>".into(), reason: format!("invalid rng state {self:?}") };
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let pos: u128 = self.word_pos.parse().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamSnapshot {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub epoch: usize,
    pub params: Vec<Param<f32>>,
    pub adam: Option<AdamSnapshot>,
    pub rng: Vec<(String, RngState)>,
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    epoch: usize,
    tensors: Vec<TensorEntry>,
    adam_step: Option<u64>,
    rng: Vec<(String, RngState)>,
    extra: serde_json::Value,
}

fn push_f32s(buf: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        tensors: ckpt.params.iter().map(|p| TensorEntry { name: p.name.clone(), shape: p.shape.clone() }).collect(),
        adam_step: ckpt.adam.as_ref().map(|a| a.step),
        rng: ckpt.rng.clone(),
        extra: ckpt.extra.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &ckpt.params {
        push_f32s(&mut buf, &p.data);
    }
    if let Some(adam) = &ckpt.adam {
        if adam.m.len() != ckpt.params.len() || adam.v.len() != ckpt.params.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        for m in &adam.m {
            push_f32s(&mut buf, m);
        }
        for v in &adam.v {
            push_f32s(&mut buf, v);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20usize.saturating_add(hlen)).ok_or_else(|| fail("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut pos = 20 + hlen;
    let mut take = |n: usize| -> Result<Vec<f32>> {
        let end = pos + 4 * n;
        let raw = bytes.get(pos..end).ok_or_else(|| fail("truncated tensor data"))?;
        pos = end;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n = t.shape.iter().product();
        params.push(Param { name: t.name.clone(), shape: t.shape.clone(), data: take(n)? });
    }
    let adam = match header.adam_step {
        Some(step) => {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for p in &params {
                m.push(take(p.data.len())?);
            }
            for p in &params {
                v.push(take(p.data.len())?);
            }
            Some(AdamSnapshot { step, m, v })
        }
        None => None,
    };
    if pos != bytes.len() {
        return Err(fail("trailing bytes after tensor data"));
    }
    Ok(Checkpoint { config: header.config, epoch: header.epoch, params, adam, rng: header.rng, extra: header.extra })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet3d::Network;
    use rand::Rng;

    #[test]
    fn round_trip_with_optimizer_and_rng() {
        let net = Network::<f32>::build(&NetworkConfig { base_channels: 2, ..Default::default() }, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _: u64 = rng.random();
        let m = net.params.iter().map(|p| vec![0.5; p.data.len()]).collect();
        let v = net.params.iter().map(|p| vec![0.25; p.data.len()]).collect();
        let ckpt = Checkpoint {
            config: net.config.clone(),
            epoch: 7,
            params: net.params.clone(),
            adam: Some(AdamSnapshot { step: 42, m, v }),
            rng: vec![("sampler".into(), RngState::capture(&rng))],
            extra: serde_json::json!({"lr": 0.005}),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("last.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        let mut restored = back.rng[0].1.restore().unwrap();
        assert_eq!(restored.random::<u64>(), rng.random::<u64>());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));

        let net = Network::<f32>::build(&NetworkConfig { base_channels: 2, ..Default::default() }, 5).unwrap();
        let ckpt = Checkpoint {
            config: net.config.clone(),
            epoch: 0,
            params: net.params,
            adam: None,
            rng: vec![],
            extra: serde_json::Value::Null,
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
