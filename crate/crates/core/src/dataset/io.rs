//! Signal files: raw little-endian `f32`, channel-major, with a sidecar text
//! header at `<file>.hdr` holding `channels`, `samples`, and `sample_rate`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalHeader {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
}

pub fn header_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

pub fn read_header(data: &Path) -> Result<SignalHeader> {
    let hp = header_path(data);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let h: SignalHeader = toml::from_str(&text).map_err(|e| Error::load(&hp, e.to_string()))?;
    if h.channels == 0 || !(h.sample_rate > 0.0) {
        return Err(Error::load(&hp, "channels and sample_rate must be positive"));
    }
    let meta = fs::metadata(data).map_err(|e| Error::io(data, e))?;
    let want = (h.channels * h.samples * 4) as u64;
    if meta.len() != want {
        return Err(Error::load(
            data,
            format!("expected {want} bytes for {}×{} f32 samples, found {}", h.channels, h.samples, meta.len()),
        ));
    }
    Ok(h)
}

/// Returns `channels[c][t]` widened to `f64`.
pub fn read_signal(data: &Path) -> Result<(SignalHeader, Vec<Vec<f64>>)> {
    let h = read_header(data)?;
    let bytes = fs::read(data).map_err(|e| Error::io(data, e))?;
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let channels = if h.samples == 0 {
        vec![Vec::new(); h.channels]
    } else {
        values.chunks(h.samples).map(<[f64]>::to_vec).collect()
    };
    Ok((h, channels))
}

/// Values are narrowed to `f32`.
pub fn write_signal(data: &Path, channels: &[Vec<f64>], sample_rate: f64) -> Result<()> {
    let samples = channels.first().map_or(0, Vec::len);
    if channels.iter().any(|c| c.len() != samples) {
        return Err(Error::dim("write_signal", "ragged channels"));
    }
    if let Some(dir) = data.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(channels.len() * samples * 4);
    for c in channels {
        for &v in c {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(data, bytes).map_err(|e| Error::io(data, e))?;
    let h = SignalHeader {
        channels: channels.len(),
        samples,
        sample_rate,
    };
    let hp = header_path(data);
    let text = toml::to_string(&h).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&hp, text).map_err(|e| Error::io(&hp, e))
}
