use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crnn::CrnnConfig;
use crate::dataio::SynthConfig;
use crate::features::FeatureConfig;
use crate::plg::PlgConfig;
use crate::teacher::{PseudoKinds, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Plg,
    Score,
    Ablation1,
    Ablation2,
    Voi,
    /// Write the synthetic dataset to a directory.
    Synth,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Train => "train",
            Mode::Plg => "plg",
            Mode::Score => "score",
            Mode::Ablation1 => "ablation1",
            Mode::Ablation2 => "ablation2",
            Mode::Voi => "voi",
            Mode::Synth => "synth",
        };
        f.write_str(s)
    }
}

/// Network shape. Input width and class count come from the features and
/// the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub conv_filters: Vec<usize>,
    pub pool_sizes: Vec<[usize; 2]>,
    pub kernel_size: usize,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = CrnnConfig::desk(1, 1);
        ModelSection {
            conv_filters: d.conv_filters,
            pool_sizes: d.pool_sizes,
            kernel_size: d.kernel_size,
            gru_layers: d.gru_layers,
            gru_hidden: d.gru_hidden,
            dropout: d.dropout,
        }
    }
}

impl ModelSection {
    pub fn crnn(&self, n_mels: usize, n_classes: usize) -> CrnnConfig {
        CrnnConfig {
            n_mels,
            conv_filters: self.conv_filters.clone(),
            pool_sizes: self.pool_sizes.clone(),
            kernel_size: self.kernel_size,
            gru_layers: self.gru_layers,
            gru_hidden: self.gru_hidden,
            n_classes,
            dropout: self.dropout,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub reference: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
}

/// The whole config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must agree with the command-line mode when present.
    pub mode: Option<Mode>,
    pub seeds: Vec<u64>,
    /// Dataset directory; the synthetic recipe is used when absent.
    pub dataset_dir: Option<PathBuf>,
    /// Checkpoint read by `plg`, and substituted for the +MT model as the
    /// pseudo-label source in `ablation1`, `ablation2` and `voi`.
    pub checkpoint: Option<PathBuf>,
    /// Pseudo-label directory ingested by `train`.
    pub pseudo_dir: Option<PathBuf>,
    /// Pseudo-label kinds ingested by `train`.
    pub pseudo: PseudoKinds,
    /// Draw a fresh synthetic dataset per seed (`synth.seed + seed`).
    pub dataset_per_seed: bool,
    pub features: FeatureConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub plg: PlgConfig,
    pub synth: SynthConfig,
    pub score: ScoreSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: None,
            seeds: vec![0, 1, 2, 3, 4],
            dataset_dir: None,
            checkpoint: None,
            pseudo_dir: None,
            pseudo: PseudoKinds::default(),
            dataset_per_seed: false,
            features: FeatureConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            plg: PlgConfig::default(),
            synth: SynthConfig::default(),
            score: ScoreSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale preset: 16 log-mel bands over 31.25 ms hops, two conv
    /// blocks and a 16-unit GRU.
    pub fn desk() -> Self {
        ExperimentConfig {
            features: FeatureConfig { sample_rate: 16_000, n_fft: 1024, hop: 500, n_mels: 16, log_floor: 1e-10 },
            ..Default::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.dataset_dir);
        fix(&mut self.checkpoint);
        fix(&mut self.pseudo_dir);
        fix(&mut self.score.reference);
        fix(&mut self.score.estimate);
    }

    /// Semantic checks beyond the schema, reported as `field: problem`.
    pub fn check(&self, mode: Mode) -> Result<(), String> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(format!("mode: file says {m} but command line says {mode}"));
            }
        }
        match mode {
            Mode::Ablation1 | Mode::Ablation2 | Mode::Voi if self.seeds.len() < 3 => {
                return Err(format!("seeds: {mode} needs at least 3 seeds, got {}", self.seeds.len()));
            }
            Mode::Train | Mode::Plg | Mode::Synth if self.seeds.is_empty() => {
                return Err("seeds: at least one seed is required".into());
            }
            Mode::Plg if self.checkpoint.is_none() => {
                return Err("checkpoint: required for plg".into());
            }
            Mode::Score if self.score.reference.is_none() || self.score.estimate.is_none() => {
                return Err("score.reference and score.estimate: both required for score".into());
            }
            _ => {}
        }
        if mode == Mode::Score {
            return Ok(());
        }
        self.features.validate().map_err(|e| format!("features: {e}"))?;
        self.model.crnn(self.features.n_mels, 2).validate().map_err(|e| format!("model: {e}"))?;
        self.train.validate().map_err(|e| format!("train: {e}"))?;
        self.plg.validate().map_err(|e| format!("plg: {e}"))?;
        if self.dataset_dir.is_none() {
            self.synth.validate().map_err(|e| format!("synth: {e}"))?;
            if self.synth.sample_rate != self.features.sample_rate {
                return Err(format!(
                    "synth.sample_rate: {} differs from features.sample_rate {}",
                    self.synth.sample_rate, self.features.sample_rate
                ));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
