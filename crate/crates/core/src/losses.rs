//! Classification cost over real and pseudo targets, student/teacher
//! consistency cost, and their weighted total.

use serde::{Deserialize, Serialize};

use crate::crnn::Predictions;
use crate::dataio::{Provenance, Split};
use crate::numkit::ops::{bce_sum, sq_err_sum};
use crate::numkit::{GradTape, NumError, Tensor, Var};

/// Targets for one batch member. A clip with neither target only feeds the
/// consistency cost.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTarget {
    /// `[T', n_classes]` in {0, 1}.
    pub strong: Option<Tensor>,
    /// `[n_classes]` in {0, 1}.
    pub weak: Option<Tensor>,
    pub provenance: Provenance,
    pub split: Split,
}

impl ClipTarget {
    pub fn unlabeled() -> Self {
        ClipTarget { strong: None, weak: None, provenance: Provenance::Real, split: Split::Unlabeled }
    }

    pub fn has_targets(&self) -> bool {
        self.strong.is_some() || self.weak.is_some()
    }

    fn n_terms(&self) -> usize {
        self.strong.as_ref().map_or(0, Tensor::len) + self.weak.as_ref().map_or(0, Tensor::len)
    }
}

pub type BatchTargets = [ClipTarget];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub j1_real: f64,
    pub j1_pseudo: f64,
    pub j2_strong: f64,
    pub j2_weak: f64,
    /// Consistency weight applied to `j2_strong + j2_weak`.
    pub weight: f64,
    pub total: f64,
    pub n_real: usize,
    pub n_pseudo: usize,
    pub n_frame: usize,
    pub n_clip: usize,
}

/// Mean binary cross-entropy.
pub fn bce(pred: &Tensor, target: &Tensor) -> Result<f64, NumError> {
    let s = bce_sum(pred, target)?;
    Ok(if pred.is_empty() { 0.0 } else { s / pred.len() as f64 })
}

fn check_len(preds: usize, targets: usize) -> Result<(), NumError> {
    if preds != targets {
        return Err(NumError::Shape { op: "loss", msg: format!("{preds} predictions for {targets} clips") });
    }
    Ok(())
}

/// `(j1_real, j1_pseudo, n_real, n_pseudo)`. Each component is a mean over
/// its scalar terms; the pseudo mean is scaled by `pseudo_weight`.
pub fn classification_cost(
    preds: &[Predictions],
    targets: &BatchTargets,
    pseudo_weight: f64,
) -> Result<(f64, f64, usize, usize), NumError> {
    check_len(preds.len(), targets.len())?;
    let (mut real, mut pseudo) = (0.0, 0.0);
    let (mut n_real, mut n_pseudo) = (0, 0);
    for (p, t) in preds.iter().zip(targets) {
        let mut s = 0.0;
        if let Some(y) = &t.strong {
            s += bce_sum(&p.frame_probs, y)?;
        }
        if let Some(y) = &t.weak {
            s += bce_sum(&p.clip_probs, y)?;
        }
        match t.provenance {
            Provenance::Real => {
                real += s;
                n_real += t.n_terms();
            }
            Provenance::Pseudo => {
                pseudo += s;
                n_pseudo += t.n_terms();
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok((mean(real, n_real), pseudo_weight * mean(pseudo, n_pseudo), n_real, n_pseudo))
}

/// `(j2_strong, j2_weak)`: mean squared student/teacher differences of
/// frame and clip probabilities over every clip in the batch.
pub fn consistency_cost(student: &[Predictions], teacher: &[Predictions]) -> Result<(f64, f64), NumError> {
    check_len(student.len(), teacher.len())?;
    let (mut sf, mut sc, mut nf, mut nc) = (0.0, 0.0, 0usize, 0usize);
    for (s, t) in student.iter().zip(teacher) {
        sf += sq_err_sum(&s.frame_probs, &t.frame_probs)?;
        sc += sq_err_sum(&s.clip_probs, &t.clip_probs)?;
        nf += s.frame_probs.len();
        nc += s.clip_probs.len();
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok((mean(sf, nf), mean(sc, nc)))
}

pub fn total_objective(j1_real: f64, j1_pseudo: f64, j2_strong: f64, j2_weak: f64, w: f64) -> LossBreakdown {
    LossBreakdown {
        j1_real,
        j1_pseudo,
        j2_strong,
        j2_weak,
        weight: w,
        total: j1_real + j1_pseudo + w * (j2_strong + j2_weak),
        ..Default::default()
    }
}

/// Term counts for the whole batch, fixed before any per-clip loss is
/// recorded so each clip's share can be normalized independently.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Norms {
    pub n_real: usize,
    pub n_pseudo: usize,
    pub n_frame: usize,
    pub n_clip: usize,
}

impl Norms {
    /// `outputs[i]` is `(frame element count, clip element count)` of clip i.
    /// Consistency counts are zero when no teacher is used.
    pub fn new(targets: &BatchTargets, outputs: &[(usize, usize)], with_teacher: bool) -> Self {
        let mut n = Norms::default();
        for (t, &(f, c)) in targets.iter().zip(outputs) {
            match t.provenance {
                Provenance::Real => n.n_real += t.n_terms(),
                Provenance::Pseudo => n.n_pseudo += t.n_terms(),
            }
            if with_teacher {
                n.n_frame += f;
                n.n_clip += c;
            }
        }
        n
    }
}

/// Unnormalized sums a clip contributes to each component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PartialSums {
    pub bce_real: f64,
    pub bce_pseudo: f64,
    pub sq_frame: f64,
    pub sq_clip: f64,
}

impl PartialSums {
    pub fn add(&mut self, o: &PartialSums) {
        self.bce_real += o.bce_real;
        self.bce_pseudo += o.bce_pseudo;
        self.sq_frame += o.sq_frame;
        self.sq_clip += o.sq_clip;
    }

    pub fn breakdown(&self, norms: &Norms, pseudo_weight: f64, w: f64) -> LossBreakdown {
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        LossBreakdown {
            n_real: norms.n_real,
            n_pseudo: norms.n_pseudo,
            n_frame: norms.n_frame,
            n_clip: norms.n_clip,
            ..total_objective(
                mean(self.bce_real, norms.n_real),
                pseudo_weight * mean(self.bce_pseudo, norms.n_pseudo),
                mean(self.sq_frame, norms.n_frame),
                mean(self.sq_clip, norms.n_clip),
                w,
            )
        }
    }
}

fn inv(n: usize) -> f64 {
    if n == 0 { 0.0 } else { 1.0 / n as f64 }
}

/// Records one clip's share of the batch objective on its tape. Summing the
/// returned scalars over the batch gives the total objective. The teacher
/// predictions enter as constants.
pub fn clip_objective_on_tape(
    tape: &mut GradTape,
    frame_probs: Var,
    clip_probs: Var,
    target: &ClipTarget,
    teacher: Option<&Predictions>,
    norms: &Norms,
    pseudo_weight: f64,
    w: f64,
) -> Result<(Var, PartialSums), NumError> {
    let mut terms = Vec::new();
    let mut sums = PartialSums::default();
    let scale = match target.provenance {
        Provenance::Real => inv(norms.n_real),
        Provenance::Pseudo => pseudo_weight * inv(norms.n_pseudo),
    };
    for (pred, y) in [(frame_probs, &target.strong), (clip_probs, &target.weak)] {
        if let Some(y) = y {
            let v = tape.bce_sum(pred, y.clone())?;
            match target.provenance {
                Provenance::Real => sums.bce_real += tape.value(v).item(),
                Provenance::Pseudo => sums.bce_pseudo += tape.value(v).item(),
            }
            terms.push((v, scale));
        }
    }
    if let Some(t) = teacher {
        let f = tape.sq_err_sum(frame_probs, t.frame_probs.clone())?;
        let c = tape.sq_err_sum(clip_probs, t.clip_probs.clone())?;
        sums.sq_frame = tape.value(f).item();
        sums.sq_clip = tape.value(c).item();
        terms.push((f, w * inv(norms.n_frame)));
        terms.push((c, w * inv(norms.n_clip)));
    }
    Ok((tape.weighted_sum(terms)?, sums))
}
