//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//! `"PHFU"`, `u32` version, `u32` metadata length, metadata (TOML, UTF-8),
//! `u32` tensor count, then per tensor: `u32` name length, name, `u8` dtype
//! tag (0 = f32, 1 = f64), `u32` rank, `u64` dims, raw values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Target;
use crate::dsp::Modality;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::fused::FusedModel;
use crate::model::single::{Mode, SingleModalityModel};
use crate::nn::Parameters;
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"PHFU";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointMeta {
    Single {
        modality: Modality,
        in_channels: usize,
        mode: Mode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<Target>,
        model: ModelConfig,
    },
    Fused {
        target: Target,
        fusion_hidden: Vec<usize>,
        ecg: ModelConfig,
        eeg: ModelConfig,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

pub fn write_raw<T: Scalar>(path: &Path, meta: &CheckpointMeta, module: &dyn Parameters<T>) -> Result<()> {
    let meta_text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    let mut tensors = Vec::new();
    module.visit("", &mut |name, p| tensors.push((name.to_string(), p.value.clone())));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    out.extend_from_slice(meta_text.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.to_le_bytes_vec(&mut out);
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::load(
                self.path,
                format!("truncated: needed {n} bytes at offset {}, file has {}", self.pos, self.buf.len()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_raw(path: &Path) -> Result<(CheckpointMeta, Vec<RawTensor>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    if c.take(4)? != MAGIC {
        return Err(Error::load(path, "bad magic: not a checkpoint"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::load(path, format!("unsupported format version {version} (expected {VERSION})")));
    }
    let meta_len = c.u32()? as usize;
    let meta_text = std::str::from_utf8(c.take(meta_len)?)
        .map_err(|_| Error::load(path, "metadata is not UTF-8"))?;
    let meta: CheckpointMeta =
        toml::from_str(meta_text).map_err(|e| Error::load(path, format!("metadata: {e}")))?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::load(path, "tensor name is not UTF-8"))?;
        let tag = c.take(1)?[0];
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::load(path, format!("tensor `{name}` has unknown dtype tag {tag}")))?;
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| Error::load(path, format!("tensor `{name}` is impossibly large")))?;
        let bytes = c.take(numel)?.to_vec();
        tensors.push(RawTensor {
            name,
            dtype,
            shape,
            bytes,
        });
    }
    if c.pos != buf.len() {
        return Err(Error::load(path, format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok((meta, tensors))
}

/// Copies stored tensors into `module`, requiring an exact name/shape/dtype match.
fn fill<T: Scalar>(path: &Path, module: &mut dyn Parameters<T>, tensors: Vec<RawTensor>) -> Result<()> {
    let mut by_name: BTreeMap<String, RawTensor> = tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut err = None;
    module.visit_mut("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        let Some(t) = by_name.remove(name) else {
            err = Some(Error::load(path, format!("missing parameter `{name}`")));
            return;
        };
        if t.dtype != T::DTYPE {
            err = Some(Error::load(
                path,
                format!("parameter `{name}` stored as {}, requested {}", t.dtype.name(), T::DTYPE.name()),
            ));
            return;
        }
        if t.shape != p.value.shape() {
            err = Some(Error::load(
                path,
                format!("parameter `{name}` has shape {:?}, model expects {:?}", t.shape, p.value.shape()),
            ));
            return;
        }
        let vals = t.bytes.chunks_exact(T::DTYPE.size()).map(T::from_le_slice).collect();
        p.value = Tensor::new(t.shape, vals).expect("checked shape");
        p.grad = None;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::load(path, format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}

/// First differing key between two serializable configs, as a dotted path.
fn first_difference<S: Serialize>(expected: &S, found: &S) -> Option<(String, String, String)> {
    fn walk(prefix: &str, a: &toml::Value, b: &toml::Value) -> Option<(String, String, String)> {
        match (a, b) {
            (toml::Value::Table(x), toml::Value::Table(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(va), Some(vb)) => {
                            if let Some(d) = walk(&path, va, vb) {
                                return Some(d);
                            }
                        }
                        (va, vb) => {
                            let show = |v: Option<&toml::Value>| v.map_or("<absent>".to_string(), |v| v.to_string());
                            return Some((path, show(va), show(vb)));
                        }
                    }
                }
                None
            }
            _ if a == b => None,
            _ => Some((prefix.to_string(), a.to_string(), b.to_string())),
        }
    }
    let a = toml::Value::try_from(expected).ok()?;
    let b = toml::Value::try_from(found).ok()?;
    walk("", &a, &b)
}

fn check_config(expected: &ModelConfig, found: &ModelConfig, prefix: &str) -> Result<()> {
    if let Some((field, e, f)) = first_difference(expected, found) {
        return Err(Error::ConfigMismatch {
            field: format!("{prefix}{field}"),
            expected: e,
            found: f,
        });
    }
    Ok(())
}

pub fn save_model<T: Scalar>(
    model: &SingleModalityModel<T>,
    target: Option<Target>,
    path: &Path,
) -> Result<()> {
    let meta = CheckpointMeta::Single {
        modality: model.modality,
        in_channels: model.channels(),
        mode: model.mode,
        target,
        model: model.config.clone(),
    };
    write_raw(path, &meta, model)
}

/// Loads a single-modality checkpoint. When `expected` is given, the stored
/// modality and architecture must match it.
pub fn load_model<T: Scalar>(
    path: &Path,
    expected: Option<(Modality, &ModelConfig)>,
) -> Result<(SingleModalityModel<T>, Option<Target>)> {
    let (meta, tensors) = read_raw(path)?;
    let CheckpointMeta::Single {
        modality,
        in_channels,
        mode,
        target,
        model: config,
    } = meta
    else {
        return Err(Error::load(path, "expected a single-modality checkpoint, found a fused one"));
    };
    if let Some((m, cfg)) = expected {
        if in_channels != m.channel_count() {
            return Err(Error::ConfigMismatch {
                field: "in_channels".into(),
                expected: m.channel_count().to_string(),
                found: in_channels.to_string(),
            });
        }
        if m != modality {
            return Err(Error::ConfigMismatch {
                field: "modality".into(),
                expected: m.to_string(),
                found: modality.to_string(),
            });
        }
        check_config(cfg, &config, "")?;
    }
    if in_channels != modality.channel_count() {
        return Err(Error::load(path, format!("{modality} checkpoint claims {in_channels} channels")));
    }
    let mut model = SingleModalityModel::new(modality, config, mode, 0)?;
    fill(path, &mut model, tensors)?;
    Ok((model, target))
}

pub fn save_fused<T: Scalar>(model: &FusedModel<T>, path: &Path) -> Result<()> {
    let hidden: Vec<usize> = model.fusion_head.layers[..model.fusion_head.layers.len() - 1]
        .iter()
        .map(|l| l.output_size())
        .collect();
    let meta = CheckpointMeta::Fused {
        target: model.target,
        fusion_hidden: hidden,
        ecg: model.ecg.config.clone(),
        eeg: model.eeg.config.clone(),
    };
    write_raw(path, &meta, model)
}

pub fn load_fused<T: Scalar>(path: &Path, expected: Option<(&ModelConfig, &ModelConfig)>) -> Result<FusedModel<T>> {
    let (meta, tensors) = read_raw(path)?;
    let CheckpointMeta::Fused {
        target,
        fusion_hidden,
        ecg,
        eeg,
    } = meta
    else {
        return Err(Error::load(path, "expected a fused checkpoint, found a single-modality one"));
    };
    if let Some((e, g)) = expected {
        check_config(e, &ecg, "ecg.")?;
        check_config(g, &eeg, "eeg.")?;
    }
    let ecg_m = SingleModalityModel::new(Modality::Ecg, ecg, Mode::Finetune, 0)?;
    let eeg_m = SingleModalityModel::new(Modality::Eeg, eeg, Mode::Finetune, 0)?;
    let mut fused = FusedModel::new(target, ecg_m, eeg_m, &fusion_hidden, 0.0, 0)?;
    fill(path, &mut fused, tensors)?;
    Ok(fused)
}

/// Reads only the metadata block.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    read_raw(path).map(|(m, _)| m)
}
