//! Run configuration file: every section is optional and falls back to the
//! full-size defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, load_manifest, Manifest, SegmentTable, SyntheticSpec, Target, MANIFEST_FILE};
use crate::dsp::{FilterPreset, FilterSpec, Modality};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, FUSION_HIDDEN};
use crate::training::{CvOptions, Phase, TrainConfig, TrainSection};

/// Name of the effective-config echo written into every output directory.
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, flatten)]
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Manifest path, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Generated into `<output>/data` when no manifest is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    /// Restricts the run to these modalities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modalities: Option<Vec<Modality>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecg: Option<FilterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eeg: Option<FilterSpec>,
}

fn default_preset() -> String {
    "amigos".into()
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            ecg: None,
            eeg: None,
        }
    }
}

impl PreprocessSection {
    pub fn filters(&self) -> Result<FilterPreset> {
        let mut p = FilterPreset::named(&self.preset)?;
        if let Some(f) = self.ecg {
            p.ecg = Some(f);
        }
        if let Some(f) = self.eeg {
            p.eeg = Some(f);
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub ecg: ModelConfig,
    #[serde(default)]
    pub eeg: ModelConfig,
    #[serde(default = "default_fusion_hidden")]
    pub fusion_hidden: Vec<usize>,
}

fn default_fusion_hidden() -> Vec<usize> {
    FUSION_HIDDEN.to_vec()
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            ecg: ModelConfig::default(),
            eeg: ModelConfig::default(),
            fusion_hidden: default_fusion_hidden(),
        }
    }
}

impl ModelSection {
    pub fn for_modality(&self, m: Modality) -> &ModelConfig {
        match m {
            Modality::Ecg => &self.ecg,
            Modality::Eeg => &self.eeg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub folds: usize,
    pub seed: u64,
    pub targets: Vec<Target>,
    pub label_fraction: f64,
    /// Run masked-value pre-training in every fold.
    pub pretrain: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            targets: Target::ALL.to_vec(),
            label_fraction: 1.0,
            pretrain: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "runs/latest".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub pretrain: TrainSection,
    pub finetune: TrainSection,
    pub fuse: TrainSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses and validates; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.dataset.manifest {
            cfg.dataset.manifest = Some(rebase(base, m));
        }
        cfg.output.dir = rebase(base, &cfg.output.dir);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.manifest.is_some() && self.dataset.synthetic.is_some() {
            return Err(Error::Config("dataset: give either `manifest` or `synthetic`, not both".into()));
        }
        self.preprocess.filters()?;
        self.model.ecg.validate()?;
        self.model.eeg.validate()?;
        for phase in [Phase::Pretrain, Phase::Finetune, Phase::Fuse] {
            self.train_config(phase)?;
        }
        self.cv_options(1)?.validate()
    }

    pub fn train_config(&self, phase: Phase) -> Result<TrainConfig> {
        let section = match phase {
            Phase::Pretrain => &self.pretrain,
            Phase::Finetune => &self.finetune,
            Phase::Fuse => &self.fuse,
        };
        let mut c = section.resolve(phase)?;
        c.seed = self.eval.seed;
        Ok(c)
    }

    pub fn cv_options(&self, jobs: usize) -> Result<CvOptions> {
        Ok(CvOptions {
            folds: self.eval.folds,
            seed: self.eval.seed,
            targets: self.eval.targets.clone(),
            ecg: self.model.ecg.clone(),
            eeg: self.model.eeg.clone(),
            pretrain: if self.eval.pretrain {
                Some(self.train_config(Phase::Pretrain)?)
            } else {
                None
            },
            finetune: self.train_config(Phase::Finetune)?,
            fuse: self.train_config(Phase::Fuse)?,
            fusion_hidden: self.model.fusion_hidden.clone(),
            label_fraction: self.eval.label_fraction,
            jobs,
            out: Some(self.output.dir.clone()),
        })
    }

    /// Writes the effective configuration into the output directory.
    pub fn echo(&self) -> Result<PathBuf> {
        let dir = &self.output.dir;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO);
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads the manifest, generating the synthetic dataset first if needed.
    pub fn manifest(&self) -> Result<Manifest> {
        let mut manifest = match (&self.dataset.manifest, &self.dataset.synthetic) {
            (Some(p), _) => load_manifest(p)?,
            (None, Some(s)) => {
                let dir = self.output.dir.join("data");
                let path = dir.join(MANIFEST_FILE);
                if path.exists() {
                    load_manifest(&path)?
                } else {
                    generate_synthetic(&s.spec, s.seed, &dir)?;
                    load_manifest(&path)?
                }
            }
            (None, None) => return Err(Error::Config("dataset: set `manifest` or `synthetic`".into())),
        };
        if let Some(keep) = &self.dataset.modalities {
            if let Some(m) = keep.iter().find(|m| !manifest.has(**m)) {
                return Err(Error::Config(format!("dataset.modalities: manifest has no {m} signals")));
            }
            manifest.modalities.retain(|m| keep.contains(m));
        }
        Ok(manifest)
    }

    /// Manifest → filtered, decimated, windowed table.
    pub fn table(&self) -> Result<SegmentTable> {
        SegmentTable::build(&self.manifest()?, &self.preprocess.filters()?)
    }
}

/// The small synthetic configuration shipped with the crate.
pub const TINY_SYNTHETIC: &str = include_str!("../configs/tiny_synthetic.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let c = RunConfig::parse("[dataset]\nmanifest = \"m.toml\"\n").unwrap();
        assert_eq!(c.eval.folds, 10);
        assert_eq!(c.model.ecg, ModelConfig::default());
        assert_eq!(c.train_config(Phase::Finetune).unwrap().epochs, 100);
        let err = RunConfig::parse("[eval]\nfold = 3\n").unwrap_err().to_string();
        assert!(err.contains("fold"), "{err}");
        let err = RunConfig::parse("[model.eeg]\nhidden = 3\n").unwrap_err().to_string();
        assert!(err.contains("hidden"), "{err}");
    }

    #[test]
    fn bundled_config_parses() {
        let c = RunConfig::parse(TINY_SYNTHETIC).unwrap();
        assert!(c.dataset.synthetic.is_some());
        let echoed = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&echoed).unwrap(), c);
    }
}
