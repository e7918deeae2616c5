//! Event-based F1 with onset/offset collars.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{EventLabel, StrongLabels};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("class list is empty")]
    NoClasses,
    #[error("clip {clip}: unknown class {class}")]
    UnknownClass { clip: String, class: String },
    #[error("collar parameters must be finite and non-negative")]
    BadCollar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollarParams {
    pub onset_collar: f64,
    pub offset_collar: f64,
    pub offset_ratio: f64,
    /// First-fit matching instead of maximum cardinality.
    pub greedy: bool,
}

impl Default for CollarParams {
    fn default() -> Self {
        CollarParams { onset_collar: 0.2, offset_collar: 0.2, offset_ratio: 0.2, greedy: false }
    }
}

impl CollarParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.onset_collar) && ok(self.offset_collar) && ok(self.offset_ratio) {
            Ok(())
        } else {
            Err(EvalError::BadCollar)
        }
    }

    pub fn eligible(&self, r: &EventLabel, e: &EventLabel) -> bool {
        let tol = self.offset_collar.max(self.offset_ratio * (r.offset - r.onset));
        (r.onset - e.onset).abs() <= self.onset_collar && (r.offset - e.offset).abs() <= tol
    }
}

/// One-to-one matching between `reference` and `estimated` (single class).
/// Returns `(ref_index, est_index)` pairs sorted by ref index.
pub fn match_events(
    reference: &[EventLabel],
    estimated: &[EventLabel],
    collar: &CollarParams,
) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|r| (0..estimated.len()).filter(|&j| collar.eligible(r, &estimated[j])).collect())
        .collect();
    let mut est_to_ref: Vec<Option<usize>> = vec![None; estimated.len()];
    if collar.greedy {
        for (i, cands) in adj.iter().enumerate() {
            if let Some(&j) = cands.iter().find(|&&j| est_to_ref[j].is_none()) {
                est_to_ref[j] = Some(i);
            }
        }
    } else {
        for i in 0..reference.len() {
            let mut seen = vec![false; estimated.len()];
            augment(i, &adj, &mut seen, &mut est_to_ref);
        }
    }
    let mut pairs: Vec<(usize, usize)> =
        est_to_ref.iter().enumerate().filter_map(|(j, r)| r.map(|i| (i, j))).collect();
    pairs.sort_unstable();
    pairs
}

fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], est_to_ref: &mut [Option<usize>]) -> bool {
    for &j in &adj[i] {
        if seen[j] {
            continue;
        }
        seen[j] = true;
        if est_to_ref[j].is_none_or(|k| augment(k, adj, seen, est_to_ref)) {
            est_to_ref[j] = Some(i);
            return true;
        }
    }
    false
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_name: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_class: Vec<ClassScore>,
    /// Mean F1 over classes that occur in the reference or the estimate.
    pub macro_f1: f64,
}

impl ScoreReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,tp,fp,fn,f1\n");
        for c in &self.per_class {
            s.push_str(&format!("{},{},{},{},{:.6}\n", c.class_name, c.tp, c.fp, c.fn_, c.f1));
        }
        s.push_str(&format!("macro,,,,{:.6}\n", self.macro_f1));
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<16} {:>5} {:>5} {:>5} {:>7}\n", "class", "TP", "FP", "FN", "F1");
        for c in &self.per_class {
            s.push_str(&format!("{:<16} {:>5} {:>5} {:>5} {:>7.3}\n", c.class_name, c.tp, c.fp, c.fn_, c.f1));
        }
        s.push_str(&format!("{:<16} {:>25.3}\n", "macro", self.macro_f1));
        s
    }
}

pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 { 0.0 } else { 2.0 * tp as f64 / den as f64 }
}

/// Clips missing from one side count as having no events there.
pub fn eb_f1(
    reference: &StrongLabels,
    estimated: &StrongLabels,
    collar: &CollarParams,
    classes: &[String],
) -> Result<ScoreReport, EvalError> {
    if classes.is_empty() {
        return Err(EvalError::NoClasses);
    }
    collar.validate()?;
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut counts = vec![(0usize, 0usize, 0usize); classes.len()];
    let clips: BTreeSet<&String> = reference.keys().chain(estimated.keys()).collect();
    let empty = Vec::new();
    for clip in clips {
        let r = reference.get(clip).unwrap_or(&empty);
        let e = estimated.get(clip).unwrap_or(&empty);
        let mut by_class: Vec<(Vec<EventLabel>, Vec<EventLabel>)> = vec![(vec![], vec![]); classes.len()];
        for (events, side) in [(r, 0), (e, 1)] {
            for ev in events {
                let k = *index.get(ev.class_name.as_str()).ok_or_else(|| EvalError::UnknownClass {
                    clip: clip.clone(),
                    class: ev.class_name.clone(),
                })?;
                if side == 0 { by_class[k].0.push(ev.clone()) } else { by_class[k].1.push(ev.clone()) }
            }
        }
        for (k, (rs, es)) in by_class.iter_mut().enumerate() {
            // Canonical order makes greedy mode independent of input order.
            let key = |a: &EventLabel, b: &EventLabel| a.onset.total_cmp(&b.onset).then(a.offset.total_cmp(&b.offset));
            rs.sort_by(key);
            es.sort_by(key);
            let tp = match_events(rs, es, collar).len();
            counts[k].0 += tp;
            counts[k].1 += es.len() - tp;
            counts[k].2 += rs.len() - tp;
        }
    }
    let per_class: Vec<ClassScore> = classes
        .iter()
        .zip(&counts)
        .map(|(c, &(tp, fp, fn_))| ClassScore { class_name: c.clone(), tp, fp, fn_, f1: f1_from_counts(tp, fp, fn_) })
        .collect();
    let active: Vec<f64> = per_class.iter().filter(|c| c.tp + c.fp + c.fn_ > 0).map(|c| c.f1).collect();
    let macro_f1 = if active.is_empty() { 0.0 } else { active.iter().sum::<f64>() / active.len() as f64 };
    Ok(ScoreReport { per_class, macro_f1 })
}
