//! Pseudo-label generation from a trained checkpoint.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crnn::{self, CrnnError, CrnnParams, Predictions};
use crate::dataio::{self, DataError, EventLabel, StrongLabels, WeakLabels};
use crate::features::FeatureMatrix;

#[derive(Debug, Error)]
pub enum PlgError {
    #[error("median window must be odd and at least 1, got {0}")]
    EvenWindow(usize),
    #[error("invalid plg config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] CrnnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlgConfig {
    pub clip_threshold: f64,
    pub frame_threshold: f64,
    pub median_window: usize,
    /// Suppress weak-clip pseudo events outside the clip's real tags.
    pub gate_strong_by_weak: bool,
}

impl Default for PlgConfig {
    fn default() -> Self {
        PlgConfig { clip_threshold: 0.5, frame_threshold: 0.5, median_window: 5, gate_strong_by_weak: true }
    }
}

impl PlgConfig {
    pub fn validate(&self) -> Result<(), PlgError> {
        for (name, v) in [("clip_threshold", self.clip_threshold), ("frame_threshold", self.frame_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PlgError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.median_window % 2 == 0 {
            return Err(PlgError::EvenWindow(self.median_window));
        }
        Ok(())
    }
}

/// Pseudo labels plus the identity of the checkpoint that produced them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoLabelSet {
    /// Unlabeled clip -> tags.
    pub upw: WeakLabels,
    /// Unlabeled clip -> events.
    pub ups: StrongLabels,
    /// Weak clip -> events.
    pub wps: StrongLabels,
    pub checkpoint: String,
}

/// Majority vote over a centred window; windows shrink at the edges and a
/// tie resolves to 0.
pub fn median_filter(bits: &[bool], window: usize) -> Result<Vec<bool>, PlgError> {
    if window % 2 == 0 {
        return Err(PlgError::EvenWindow(window));
    }
    let half = window / 2;
    let n = bits.len();
    let mut prefix = vec![0usize; n + 1];
    for (i, &b) in bits.iter().enumerate() {
        prefix[i + 1] = prefix[i] + b as usize;
    }
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            2 * (prefix[hi] - prefix[lo]) > hi - lo
        })
        .collect())
}

/// Each maximal run of set frames `[i, j]` becomes `(i·d, (j+1)·d)`.
pub fn frames_to_events(bits: &[bool], frame_duration: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &b) in bits.iter().chain(std::iter::once(&false)).enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s as f64 * frame_duration, i as f64 * frame_duration));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Rasterizes events: a frame is set when its centre falls in `[onset, offset)`.
pub fn events_to_frames(events: &[(f64, f64)], n_frames: usize, frame_duration: f64) -> Vec<bool> {
    (0..n_frames)
        .map(|t| {
            let c = (t as f64 + 0.5) * frame_duration;
            events.iter().any(|&(on, off)| on <= c && c < off)
        })
        .collect()
}

/// Tags whose clip probability reaches `threshold`.
pub fn tags_from_probs(pred: &Predictions, classes: &[String], threshold: f64) -> BTreeSet<String> {
    pred.clip_probs
        .data()
        .iter()
        .zip(classes)
        .filter(|(p, _)| **p >= threshold)
        .map(|(_, c)| c.clone())
        .collect()
}

/// Thresholded, median-filtered frame decisions turned into events.
/// With `gate`, classes outside the tag set are dropped.
pub fn events_from_probs(
    pred: &Predictions,
    classes: &[String],
    threshold: f64,
    window: usize,
    frame_duration: f64,
    gate: Option<&BTreeSet<String>>,
) -> Result<Vec<EventLabel>, PlgError> {
    let (t_len, n_classes) = (pred.frame_probs.dim(0), pred.frame_probs.dim(1));
    let data = pred.frame_probs.data();
    let mut events = Vec::new();
    for (k, name) in classes.iter().enumerate().take(n_classes) {
        if gate.is_some_and(|g| !g.contains(name)) {
            continue;
        }
        let bits: Vec<bool> = (0..t_len).map(|t| data[t * n_classes + k] >= threshold).collect();
        let smoothed = median_filter(&bits, window)?;
        for (on, off) in frames_to_events(&smoothed, frame_duration) {
            events.push(EventLabel::new(on, off, name.clone()));
        }
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then_with(|| a.class_name.cmp(&b.class_name)));
    Ok(events)
}

fn output_frame_duration(model: &CrnnParams, feats: &FeatureMatrix) -> f64 {
    feats.frame_duration * model.config().time_pool_factor() as f64
}

pub fn generate_upw(
    model: &CrnnParams,
    clips: &[(String, &FeatureMatrix)],
    classes: &[String],
    clip_threshold: f64,
) -> Result<WeakLabels, PlgError> {
    let mut out = WeakLabels::new();
    for (id, feats) in clips {
        let pred = crnn::forward(model, feats, 0.0, 0)?;
        out.insert(id.clone(), tags_from_probs(&pred, classes, clip_threshold));
    }
    Ok(out)
}

/// `weak_gate` maps clip id to its real tags; a clip missing from the gate
/// is treated as having no tags.
pub fn generate_strong(
    model: &CrnnParams,
    clips: &[(String, &FeatureMatrix)],
    classes: &[String],
    frame_threshold: f64,
    median_window: usize,
    weak_gate: Option<&WeakLabels>,
) -> Result<StrongLabels, PlgError> {
    let empty = BTreeSet::new();
    let mut out = StrongLabels::new();
    for (id, feats) in clips {
        let pred = crnn::forward(model, feats, 0.0, 0)?;
        let gate = weak_gate.map(|g| g.get(id).unwrap_or(&empty));
        let d = output_frame_duration(model, feats);
        out.insert(id.clone(), events_from_probs(&pred, classes, frame_threshold, median_window, d, gate)?);
    }
    Ok(out)
}

/// Runs the model over unlabeled and weak clips and collects all three
/// pseudo-label kinds.
pub fn generate_all(
    model: &CrnnParams,
    checkpoint_id: &str,
    unlabeled: &[(String, &FeatureMatrix)],
    weak: &[(String, &FeatureMatrix)],
    weak_tags: &WeakLabels,
    classes: &[String],
    cfg: &PlgConfig,
) -> Result<PseudoLabelSet, PlgError> {
    cfg.validate()?;
    let gate = cfg.gate_strong_by_weak.then_some(weak_tags);
    Ok(PseudoLabelSet {
        upw: generate_upw(model, unlabeled, classes, cfg.clip_threshold)?,
        ups: generate_strong(model, unlabeled, classes, cfg.frame_threshold, cfg.median_window, None)?,
        wps: generate_strong(model, weak, classes, cfg.frame_threshold, cfg.median_window, gate)?,
        checkpoint: checkpoint_id.to_string(),
    })
}

const HEADER_KEY: &str = "plg-checkpoint: ";

/// Writes `upw.tsv`, `ups.tsv` and `wps.tsv` into `dir`.
pub fn save_pseudo_labels(dir: &Path, set: &PseudoLabelSet) -> Result<(), PlgError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let header = format!("{HEADER_KEY}{}", set.checkpoint);
    dataio::save_weak(&dir.join("upw.tsv"), &set.upw, Some(&header))?;
    dataio::save_strong(&dir.join("ups.tsv"), &set.ups, Some(&header))?;
    dataio::save_strong(&dir.join("wps.tsv"), &set.wps, Some(&header))?;
    Ok(())
}

pub fn load_pseudo_labels(dir: &Path) -> Result<PseudoLabelSet, PlgError> {
    let upw_path = dir.join("upw.tsv");
    let text = fs::read_to_string(&upw_path).map_err(|e| DataError::io(&upw_path, e))?;
    let checkpoint = text
        .lines()
        .find_map(|l| l.strip_prefix("# ").and_then(|r| r.strip_prefix(HEADER_KEY)))
        .unwrap_or_default()
        .to_string();
    Ok(PseudoLabelSet {
        upw: dataio::parse_weak(&text, &upw_path.display().to_string())?,
        ups: dataio::load_strong(&dir.join("ups.tsv"))?,
        wps: dataio::load_strong(&dir.join("wps.tsv"))?,
        checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Tensor;
    use proptest::prelude::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    fn classes(n: usize) -> Vec<String> {
        (0..n).map(|k| k.to_string()).collect()
    }

    fn pred(frames: Vec<f64>, clip: Vec<f64>) -> Predictions {
        let c = clip.len();
        Predictions {
            frame_probs: Tensor::new(vec![frames.len() / c, c], frames).unwrap(),
            clip_probs: Tensor::from_vec(clip),
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_filter(&b(&[0, 1, 0, 1, 1, 1, 0]), 3).unwrap(), b(&[0, 0, 1, 1, 1, 1, 0]));
        let x = b(&[1, 0, 0, 1, 0]);
        assert_eq!(median_filter(&x, 1).unwrap(), x);
        assert_eq!(median_filter(&[true; 6], 5).unwrap(), vec![true; 6]);
        assert!(matches!(median_filter(&x, 4), Err(PlgError::EvenWindow(4))));
        assert!(median_filter(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn run_extraction_examples() {
        assert!(frames_to_events(&[false; 4], 0.1).is_empty());
        assert_eq!(frames_to_events(&[true; 5], 0.1), vec![(0.0, 0.5)]);
        let ev = frames_to_events(&b(&[0, 1, 1, 0, 1]), 0.1);
        assert_eq!(ev.len(), 2);
        assert!((ev[0].0 - 0.1).abs() < 1e-12 && (ev[0].1 - 0.3).abs() < 1e-12);
        assert!((ev[1].0 - 0.4).abs() < 1e-12 && (ev[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn upw_threshold_is_inclusive() {
        let p = pred(vec![0.0; 4], vec![0.7, 0.3, 0.5, 0.9]);
        let tags = tags_from_probs(&p, &classes(4), 0.5);
        assert_eq!(tags, BTreeSet::from(["0".to_string(), "2".into(), "3".into()]));
        assert!(tags_from_probs(&p, &classes(4), 0.95).is_empty());
        assert_eq!(tags_from_probs(&p, &classes(4), 0.0).len(), 4);
    }

    #[test]
    fn strong_examples() {
        let p = pred(vec![0.9, 0.9, 0.1, 0.9, 0.9], vec![0.5]);
        let ev = events_from_probs(&p, &classes(1), 0.5, 3, 0.1, None).unwrap();
        assert_eq!(ev.len(), 1);
        assert!((ev[0].onset - 0.0).abs() < 1e-12 && (ev[0].offset - 0.5).abs() < 1e-12);

        let zeros = pred(vec![0.0; 10], vec![0.0; 2]);
        assert!(events_from_probs(&zeros, &classes(2), 0.5, 3, 0.1, None).unwrap().is_empty());

        let ones = pred(vec![1.0; 10], vec![1.0; 2]);
        let gate = BTreeSet::new();
        assert!(events_from_probs(&ones, &classes(2), 0.5, 3, 0.1, Some(&gate)).unwrap().is_empty());
        let gate = BTreeSet::from(["1".to_string()]);
        let ev = events_from_probs(&ones, &classes(2), 0.5, 3, 0.1, Some(&gate)).unwrap();
        assert!(ev.iter().all(|e| e.class_name == "1") && ev.len() == 1);
    }

    #[test]
    fn pseudo_label_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = PseudoLabelSet { checkpoint: "deadbeef".into(), ..Default::default() };
        set.upw.insert("u.wav".into(), BTreeSet::from(["a".to_string()]));
        set.ups.insert("u.wav".into(), vec![EventLabel::new(0.125, 0.5, "a")]);
        set.wps.insert("w.wav".into(), vec![]);
        save_pseudo_labels(dir.path(), &set).unwrap();
        let text = fs::read_to_string(dir.path().join("ups.tsv")).unwrap();
        assert!(text.starts_with("# plg-checkpoint: deadbeef\n"));
        assert_eq!(load_pseudo_labels(dir.path()).unwrap(), set);
    }

    fn majority_oracle(bits: &[bool], w: usize) -> Vec<bool> {
        let h = w as isize / 2;
        (0..bits.len() as isize)
            .map(|i| {
                let win: Vec<bool> =
                    (i - h..=i + h).filter(|&j| j >= 0 && j < bits.len() as isize).map(|j| bits[j as usize]).collect();
                win.iter().filter(|&&x| x).count() * 2 > win.len()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn median_matches_majority_oracle(bits in proptest::collection::vec(any::<bool>(), 0..40), half in 0usize..4) {
            let w = 2 * half + 1;
            let out = median_filter(&bits, w).unwrap();
            prop_assert_eq!(&out, &majority_oracle(&bits, w));
            for i in 0..bits.len() {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(bits.len());
                if out[i] {
                    prop_assert!(bits[lo..hi].iter().any(|&x| x));
                }
            }
        }

        #[test]
        fn rasterize_then_extract_is_idempotent(bits in proptest::collection::vec(any::<bool>(), 0..40)) {
            let d = 0.125;
            let ev = frames_to_events(&bits, d);
            prop_assert_eq!(&events_to_frames(&ev, bits.len(), d), &bits);
            prop_assert_eq!(frames_to_events(&events_to_frames(&ev, bits.len(), d), d), ev);
        }

        #[test]
        fn thresholds_are_monotone(
            probs in proptest::collection::vec(0.0f64..1.0, 12),
            t1 in 0.0f64..1.0,
            dt in 0.0f64..0.5,
        ) {
            let p = pred(probs[..8].to_vec(), probs[8..10].to_vec());
            let c = classes(2);
            let lo = tags_from_probs(&p, &c, t1);
            let hi = tags_from_probs(&p, &c, t1 + dt);
            prop_assert!(hi.is_subset(&lo));
            let ev_lo = events_from_probs(&p, &c, t1, 1, 0.1, None).unwrap();
            let ev_hi = events_from_probs(&p, &c, t1 + dt, 1, 0.1, None).unwrap();
            let frames = |ev: &[EventLabel], k: &str| {
                let spans: Vec<(f64, f64)> = ev.iter().filter(|e| e.class_name == k).map(|e| (e.onset, e.offset)).collect();
                events_to_frames(&spans, 4, 0.1)
            };
            for k in &c {
                let (a, b) = (frames(&ev_lo, k), frames(&ev_hi, k));
                prop_assert!(a.iter().zip(&b).all(|(x, y)| *x || !*y));
            }
        }
    }
}
