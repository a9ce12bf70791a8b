//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `"HNCK"`, `u32` version, `u64` config hash, `u32` metadata length,
//! metadata JSON, `u32` tensor count, then per tensor `u32` name length,
//! name, `u32` rank, `u64` per dimension and `f64` values.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, EpochRecord, TrainConfig, Trainer};
use crate::archspace::{profile_from_toml, profile_to_toml, SearchSpaceProfile};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState};
use crate::numerics::{GradBuffer, Tensor};
use crate::rng::Rng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    train: TrainConfig,
    profile: String,
    epoch: usize,
    step: usize,
    adam_t: u64,
    accumulated: usize,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    history: Vec<EpochRecord>,
}

/// Stable hash of everything that determines a run.
pub fn config_hash(profile: &SearchSpaceProfile, model: &ModelConfig, train: &TrainConfig) -> Result<u64> {
    let text = serde_json::to_string(&(profile_to_toml(profile)?, model, train))
        .map_err(|e| Error::Config(e.to_string()))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    let mut out = [0u8; 32];
    if s.len() != 64 {
        return None;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<'a, R> {
    r: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(|_| self.bad("truncated checkpoint"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn bad(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.bytes(len)?).map_err(|_| self.bad("tensor name is not UTF-8"))?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.bytes(n * 8)?;
        let data = raw
            .chunks(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| self.bad(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}

impl Trainer {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let st = &self.state;
        let meta = Meta {
            model: st.config.clone(),
            train: self.cfg.clone(),
            profile: profile_to_toml(&st.profile)?,
            epoch: self.epoch,
            step: self.step,
            adam_t: self.adam.t,
            accumulated: self.grads.accumulated(),
            rng_seed: hex(&self.rng.get_seed()),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            history: self.history.clone(),
        };
        let meta = serde_json::to_vec(&meta).map_err(|e| Error::Config(e.to_string()))?;
        let hash = config_hash(&st.profile, &st.config, &self.cfg)?;

        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
            w.write_all(CHECKPOINT_MAGIC)?;
            w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
            w.write_all(&hash.to_le_bytes())?;
            w.write_all(&(meta.len() as u32).to_le_bytes())?;
            w.write_all(&meta)?;
            w.write_all(&((st.store.len() * 4) as u32).to_le_bytes())?;
            for (id, name, t) in st.store.iter() {
                write_tensor(w, name, t)?;
                write_tensor(w, &format!("adam.m/{name}"), &self.adam.m[id.index()])?;
                write_tensor(w, &format!("adam.v/{name}"), &self.adam.v[id.index()])?;
                write_tensor(w, &format!("grad/{name}"), self.grads.get(id))?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    /// Restores a trainer exactly as it was saved, ready to continue.
    pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            r: BufReader::new(file),
            path,
        };
        if r.bytes(4)? != CHECKPOINT_MAGIC {
            return Err(r.bad("bad magic, expected HNCK"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.bad(format!("unsupported checkpoint version {version}")));
        }
        let hash = r.u64()?;
        let len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(&r.bytes(len)?).map_err(|e| r.bad(e.to_string()))?;
        let profile = profile_from_toml(&meta.profile)?;
        if config_hash(&profile, &meta.model, &meta.train)? != hash {
            return Err(r.bad("config hash does not match metadata"));
        }

        let mut state = ModelState::new(profile, meta.model)?;
        let mut adam = Adam::new(&state.store);
        adam.t = meta.adam_t;
        let mut grads = GradBuffer::new(&state.store);
        let mut pending: Vec<(usize, Tensor)> = Vec::new();
        let count = r.u32()? as usize;
        if count != state.store.len() * 4 {
            return Err(r.bad(format!("{count} tensors, expected {}", state.store.len() * 4)));
        }
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            let (kind, pname) = match name.split_once('/') {
                Some((k, p)) => (k, p),
                None => ("param", name.as_str()),
            };
            let id = state
                .store
                .find(pname)
                .ok_or_else(|| r.bad(format!("unknown tensor {name}")))?;
            let expect = state.store.get(id).shape().to_vec();
            if t.shape() != expect.as_slice() {
                return Err(r.bad(format!("tensor {name} has shape {:?}, expected {expect:?}", t.shape())));
            }
            match kind {
                "param" => state.store.set(id, t)?,
                "adam.m" => adam.m[id.index()] = t,
                "adam.v" => adam.v[id.index()] = t,
                "grad" => pending.push((id.index(), t)),
                _ => return Err(r.bad(format!("unknown tensor {name}"))),
            }
        }
        let mut rest = [0u8; 1];
        if r.r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
            return Err(r.bad("trailing bytes"));
        }
        grads.restore(pending, meta.accumulated);

        let seed = unhex(&meta.rng_seed).ok_or_else(|| r.bad("bad rng seed"))?;
        let word_pos: u128 = meta.rng_word_pos.parse().map_err(|_| r.bad("bad rng position"))?;
        let mut rng = Rng::from_seed(seed);
        rng.set_stream(meta.rng_stream);
        rng.set_word_pos(word_pos);

        Ok(Trainer {
            state,
            cfg: meta.train,
            grads,
            adam,
            rng,
            epoch: meta.epoch,
            step: meta.step,
            history: meta.history,
        })
    }
}

/// Reads only the model from a checkpoint.
pub fn load_model(path: &Path) -> Result<ModelState> {
    Ok(Trainer::load_checkpoint(path)?.into_state())
}
