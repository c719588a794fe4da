use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::config::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    pub wall_s: f64,
}

/// Per-epoch records, optionally mirrored to a JSON-lines file as they arrive.
#[derive(Debug, Default)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
    sink: Option<(PathBuf, File)>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Truncates `path` and appends one line per epoch.
    pub fn to_file(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            sink: Some((path.to_path_buf(), f)),
            ..Self::default()
        })
    }

    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.epoch <= last.epoch && rec.phase == last.phase {
                return Err(Error::Contract(format!(
                    "epoch {} logged after epoch {}",
                    rec.epoch, last.epoch
                )));
            }
        }
        if let Some((path, f)) = &mut self.sink {
            let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        log::debug!(
            "{} epoch {} lr {:.3e} loss {:.5}{}",
            rec.phase.name(),
            rec.epoch,
            rec.lr,
            rec.train_loss,
            rec.val_accuracy.map(|a| format!(" val_acc {a:.3}")).unwrap_or_default()
        );
        self.records.push(rec);
        Ok(())
    }

    pub fn set_checkpoint(&mut self, path: &Path) -> Result<()> {
        self.checkpoint = Some(path.to_path_buf());
        if let Some((sink, f)) = &mut self.sink {
            let line = serde_json::json!({ "checkpoint": path });
            writeln!(f, "{line}").map_err(|e| Error::io(sink.as_path(), e))?;
        }
        Ok(())
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

/// Reads the epoch records back from a JSON-lines log.
pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.contains("\"checkpoint\"") {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::load(path, e.to_string()))?);
    }
    Ok(out)
}
