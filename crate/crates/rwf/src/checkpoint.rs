//! Tensor container files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RWFC"  u32 version  u32 count
//! count × { u32 key_len  key (UTF-8)  u8 dtype  u32 rank  rank × u64 dim  payload }
//! u32 CRC32 of every preceding byte
//! ```
//!
//! `dtype` 0 is `f32`, 1 is `f64`. A model checkpoint stores parameters
//! under their own names and the configuration under `config.*`; the
//! optimizer state goes to a sibling file with suffix `.opt`.

use std::fs;
use std::path::{Path, PathBuf};

use rwf_core::attention::QkvMode;
use rwf_core::network::{ModelConfig, ModelState, ParamStore, SCALES};
use rwf_core::train::OptimState;
use rwf_core::Tensor;

use crate::error::{Result, RwfError};

pub const MAGIC: &[u8; 4] = b"RWFC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Serializes `(key, tensor)` pairs.
pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>, dtype: DType) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (key, t) in entries {
        out.extend_from_slice(&(key.len() as u32).to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        out.push(dtype.tag());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            match dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> RwfError {
        RwfError::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(self.pos, format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a container; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let body_len = bytes.len().saturating_sub(4);
    let mut r = Reader {
        buf: &bytes[..body_len],
        pos: 0,
        path,
    };
    if bytes.len() < 12 {
        return Err(r.fail(bytes.len(), "file too short for a header"));
    }
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_len]) != stored {
        return Err(r.fail(body_len, "CRC mismatch"));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("key length")? as usize;
        let key = std::str::from_utf8(r.take(len, "key")?)
            .map_err(|_| r.fail(at + 4, "key is not UTF-8"))?
            .to_string();
        let at = r.pos;
        let dtype = match r.take(1, "dtype")?[0] {
            0 => DType::F32,
            1 => DType::F64,
            t => return Err(r.fail(at, format!("unknown dtype tag {t}"))),
        };
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let at = r.pos;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)));
        let Some((numel, nbytes)) = numel else {
            return Err(r.fail(at, "payload size overflows"));
        };
        let raw = r.take(nbytes, "payload")?;
        let data: Vec<f64> = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        debug_assert_eq!(data.len(), numel);
        out.push((key, Tensor::new(&shape, data)?));
    }
    if r.pos != body_len {
        return Err(r.fail(r.pos, "trailing bytes after the last tensor"));
    }
    Ok(out)
}

pub fn write_container(path: &Path, entries: &[(String, Tensor)], dtype: DType) -> Result<()> {
    let bytes = encode(entries.iter().map(|(k, t)| (k.as_str(), t)), dtype);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| RwfError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RwfError::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| RwfError::io(path, e))?;
    decode(&bytes, path)
}

/// Path of the optimizer file next to a checkpoint.
pub fn optimizer_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".opt");
    PathBuf::from(s)
}

fn vector(v: &[usize]) -> Tensor {
    Tensor::new(&[v.len()], v.iter().map(|&x| x as f64).collect()).unwrap()
}

fn config_entries(cfg: &ModelConfig) -> Vec<(String, Tensor)> {
    let qkv = match cfg.qkv {
        QkvMode::Project => 0.0,
        QkvMode::Split => 1.0,
    };
    let name: Vec<usize> = cfg.name.bytes().map(usize::from).collect();
    vec![
        ("config.name".into(), vector(&name)),
        ("config.depths".into(), vector(&cfg.depths)),
        ("config.channels".into(), Tensor::scalar(cfg.channels as f64)),
        ("config.window".into(), Tensor::scalar(cfg.window as f64)),
        ("config.heads".into(), vector(&cfg.heads)),
        ("config.select".into(), vector(&cfg.select)),
        ("config.radius".into(), Tensor::scalar(cfg.radius as f64)),
        ("config.ffn_expansion".into(), Tensor::scalar(cfg.ffn_expansion as f64)),
        ("config.msr".into(), Tensor::scalar(if cfg.msr { 1.0 } else { 0.0 })),
        ("config.qkv".into(), Tensor::scalar(qkv)),
    ]
}

fn config_from(map: &mut std::collections::BTreeMap<String, Tensor>, path: &Path) -> Result<ModelConfig> {
    let bad = |key: &str| RwfError::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("missing or invalid {key}"),
    };
    let mut take = |key: &str| -> Result<Vec<usize>> {
        let t = map.remove(key).ok_or_else(|| bad(key))?;
        t.data()
            .iter()
            .map(|&v| (v >= 0.0 && v.fract() == 0.0).then_some(v as usize).ok_or_else(|| bad(key)))
            .collect()
    };
    let one = |v: Vec<usize>, key: &str| if v.len() == 1 { Ok(v[0]) } else { Err(bad(key)) };
    let four = |v: Vec<usize>, key: &str| <[usize; SCALES]>::try_from(v).map_err(|_| bad(key));
    let name = take("config.name")?;
    let name = String::from_utf8(name.into_iter().map(|b| b as u8).collect()).map_err(|_| bad("config.name"))?;
    let cfg = ModelConfig {
        name,
        depths: four(take("config.depths")?, "config.depths")?,
        channels: one(take("config.channels")?, "config.channels")?,
        window: one(take("config.window")?, "config.window")?,
        heads: four(take("config.heads")?, "config.heads")?,
        select: four(take("config.select")?, "config.select")?,
        radius: one(take("config.radius")?, "config.radius")?,
        ffn_expansion: one(take("config.ffn_expansion")?, "config.ffn_expansion")?,
        msr: one(take("config.msr")?, "config.msr")? == 1,
        qkv: match one(take("config.qkv")?, "config.qkv")? {
            0 => QkvMode::Project,
            1 => QkvMode::Split,
            _ => return Err(bad("config.qkv")),
        },
    };
    Ok(cfg)
}

/// Writes the model to `path` and, when given, the optimizer state to the
/// sibling `.opt` file.
pub fn save_checkpoint(state: &ModelState, opt: Option<&OptimState>, path: &Path, dtype: DType) -> Result<()> {
    let mut entries = config_entries(&state.config);
    entries.extend(state.params.iter().map(|(k, t)| (k.clone(), t.clone())));
    write_container(path, &entries, dtype)?;
    if let Some(opt) = opt {
        let mut e: Vec<(String, Tensor)> = vec![
            ("step".into(), Tensor::scalar(opt.step as f64)),
            ("beta1".into(), Tensor::scalar(opt.beta1)),
            ("beta2".into(), Tensor::scalar(opt.beta2)),
            ("eps".into(), Tensor::scalar(opt.eps)),
            ("weight_decay".into(), Tensor::scalar(opt.weight_decay)),
        ];
        e.extend(opt.m.iter().map(|(k, t)| (format!("m.{k}"), t.clone())));
        e.extend(opt.v.iter().map(|(k, t)| (format!("v.{k}"), t.clone())));
        write_container(&optimizer_path(path), &e, DType::F64)?;
    }
    Ok(())
}

/// Reads a model checkpoint and validates it against its configuration.
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut map: std::collections::BTreeMap<String, Tensor> = read_container(path)?.into_iter().collect();
    let config = config_from(&mut map, path)?;
    let mut params = ParamStore::new();
    for (k, t) in map {
        params.insert(k, t);
    }
    let state = ModelState { config, params };
    state.validate()?;
    Ok(state)
}

/// Reads the optimizer file next to `path`.
pub fn load_optimizer(path: &Path) -> Result<OptimState> {
    let opath = optimizer_path(path);
    let entries = read_container(&opath)?;
    let mut m = ParamStore::new();
    let mut v = ParamStore::new();
    let mut scalars = std::collections::BTreeMap::new();
    for (k, t) in entries {
        if let Some(name) = k.strip_prefix("m.") {
            m.insert(name, t);
        } else if let Some(name) = k.strip_prefix("v.") {
            v.insert(name, t);
        } else {
            scalars.insert(k, t.item());
        }
    }
    let get = |k: &str| {
        scalars.get(k).copied().ok_or_else(|| RwfError::Format {
            path: opath.clone(),
            offset: 0,
            message: format!("missing {k}"),
        })
    };
    Ok(OptimState {
        m,
        v,
        step: get("step")? as u64,
        beta1: get("beta1")?,
        beta2: get("beta2")?,
        eps: get("eps")?,
        weight_decay: get("weight_decay")?,
    })
}
