//! Dataset model, label file formats, the synthetic desk-scale generator
//! and the epoch composer.

mod compose;
mod labels;
mod synth;
mod wav;

pub use compose::{compose_epoch, compose_stratified, Provenance, StratifiedPools, VoiMode};
pub use labels::{
    load_strong, load_weak, parse_strong, parse_weak, save_strong, save_weak, write_strong,
    write_weak,
};
pub use synth::{synth_dataset, SynthConfig, SynthDataset};
pub use wav::{read_wav, write_wav};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: wav: {msg}")]
    Wav { path: String, msg: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Strong,
    Weak,
    Unlabeled,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Strong => "strong",
            Split::Weak => "weak",
            Split::Unlabeled => "unlabeled",
            Split::Validation => "validation",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Some(match s {
            "strong" => Split::Strong,
            "weak" => Split::Weak,
            "unlabeled" => Split::Unlabeled,
            "validation" => Split::Validation,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub split: Split,
}

impl Clip {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventLabel {
    pub onset: f64,
    pub offset: f64,
    pub class_name: String,
}

impl EventLabel {
    pub fn new(onset: f64, offset: f64, class_name: impl Into<String>) -> Self {
        EventLabel { onset, offset, class_name: class_name.into() }
    }
}

/// Clip id -> events. A clip present with an empty list has no events.
pub type StrongLabels = BTreeMap<String, Vec<EventLabel>>;
/// Clip id -> class tags.
pub type WeakLabels = BTreeMap<String, BTreeSet<String>>;

/// Clips and the labels each split exposes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub clips: Vec<Clip>,
    /// Events for the strong split.
    pub strong: StrongLabels,
    /// Tags for the weak split.
    pub weak: WeakLabels,
    /// Reference events for the validation split.
    pub validation: StrongLabels,
}

impl Dataset {
    pub fn clips_in(&self, split: Split) -> impl Iterator<Item = &Clip> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.clips_in(split).count()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for c in &self.clips {
            if !seen.insert(c.id.as_str()) {
                return Err(DataError::Invalid(format!("duplicate clip id {}", c.id)));
            }
            if c.samples.is_empty() || c.sample_rate == 0 {
                return Err(DataError::Invalid(format!("clip {} has zero duration", c.id)));
            }
        }
        let split_of: BTreeMap<&str, (Split, f64)> =
            self.clips.iter().map(|c| (c.id.as_str(), (c.split, c.duration()))).collect();
        for (labels, split) in [(&self.strong, Split::Strong), (&self.validation, Split::Validation)] {
            for (id, events) in labels {
                let Some(&(s, dur)) = split_of.get(id.as_str()) else {
                    return Err(DataError::Invalid(format!("labels for unknown clip {id}")));
                };
                if s != split {
                    return Err(DataError::Invalid(format!("{id} is {} but has {} labels", s.as_str(), split.as_str())));
                }
                for e in events {
                    if self.class_index(&e.class_name).is_none() {
                        return Err(DataError::Invalid(format!("{id}: unknown class {}", e.class_name)));
                    }
                    if !(0.0 <= e.onset && e.onset < e.offset && e.offset <= dur + 1e-9) {
                        return Err(DataError::Invalid(format!(
                            "{id}: event ({}, {}) outside [0, {dur}]",
                            e.onset, e.offset
                        )));
                    }
                }
            }
        }
        for (id, tags) in &self.weak {
            if split_of.get(id.as_str()).map(|x| x.0) != Some(Split::Weak) {
                return Err(DataError::Invalid(format!("weak tags for non-weak clip {id}")));
            }
            if let Some(t) = tags.iter().find(|t| self.class_index(t).is_none()) {
                return Err(DataError::Invalid(format!("{id}: unknown class {t}")));
            }
        }
        Ok(())
    }
}

const MANIFEST: &str = "clips.tsv";
const CLASSES: &str = "classes.txt";
const STRONG: &str = "strong.tsv";
const WEAK: &str = "weak.tsv";
const VALIDATION: &str = "validation.tsv";

/// Writes `audio/<id>` WAV files plus the manifest and label files.
pub fn save_dataset_dir(dir: &Path, ds: &Dataset) -> Result<(), DataError> {
    let audio = dir.join("audio");
    fs::create_dir_all(&audio).map_err(|e| DataError::io(&audio, e))?;
    let mut manifest = String::from("filename\tsplit\n");
    for c in &ds.clips {
        write_wav(&audio.join(&c.id), &c.samples, c.sample_rate)?;
        manifest.push_str(&format!("{}\t{}\n", c.id, c.split.as_str()));
    }
    let write = |name: &str, text: String| -> Result<(), DataError> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| DataError::io(&p, e))
    };
    write(MANIFEST, manifest)?;
    write(CLASSES, ds.classes.iter().map(|c| format!("{c}\n")).collect())?;
    save_strong(&dir.join(STRONG), &ds.strong, None)?;
    save_weak(&dir.join(WEAK), &ds.weak, None)?;
    save_strong(&dir.join(VALIDATION), &ds.validation, None)?;
    Ok(())
}

pub fn load_dataset_dir(dir: &Path) -> Result<Dataset, DataError> {
    if !dir.is_dir() {
        return Err(DataError::Io {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        });
    }
    let read = |name: &str| -> Result<(PathBuf, String), DataError> {
        let p = dir.join(name);
        let text = fs::read_to_string(&p).map_err(|e| DataError::io(&p, e))?;
        Ok((p, text))
    };
    let (_, classes) = read(CLASSES)?;
    let classes: Vec<String> =
        classes.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    let (mpath, manifest) = read(MANIFEST)?;
    let mut clips = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        if i == 0 && line == "filename\tsplit" || line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Parse { path: mpath.display().to_string(), line: i + 1, msg };
        let (id, split) = line.split_once('\t').ok_or_else(|| err("expected 2 fields".into()))?;
        let split = Split::parse(split).ok_or_else(|| err(format!("unknown split {split:?}")))?;
        let (samples, sample_rate) = read_wav(&dir.join("audio").join(id))?;
        clips.push(Clip { id: id.to_string(), samples, sample_rate, split });
    }
    let ds = Dataset {
        classes,
        clips,
        strong: load_strong(&dir.join(STRONG))?,
        weak: load_weak(&dir.join(WEAK))?,
        validation: load_strong(&dir.join(VALIDATION))?,
    };
    ds.validate()?;
    Ok(ds)
}
