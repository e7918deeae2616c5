//! Mean Teacher training: SGD on the student, EMA teacher, noisy teacher
//! inputs and a ramped consistency weight.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crnn::{self, CrnnConfig, CrnnError, CrnnParams, ForwardOptions, Predictions};
use crate::dataio::{
    compose_epoch, compose_stratified, DataError, Dataset, Provenance, Split, StratifiedPools, StrongLabels,
    VoiMode,
};
use crate::evalkit::{self, CollarParams, EvalError};
use crate::features::FeatureMatrix;
use crate::losses::{clip_objective_on_tape, ClipTarget, LossBreakdown, Norms, PartialSums};
use crate::numkit::{GradTape, NumError, Tensor};
use crate::plg::{self, PlgError, PseudoLabelSet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("no labeled clips to train on")]
    NoLabeledData,
    #[error("step {step}: non-finite {what}")]
    NonFinite { step: u64, what: String },
    #[error(transparent)]
    Model(#[from] CrnnError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Plg(#[from] PlgError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub ema_alpha: f64,
    /// Cap the decay at `1 - 1/(step + 1)` so the teacher tracks the student
    /// closely during the first updates.
    pub ema_warmup: bool,
    /// Std of the Gaussian noise on the teacher input.
    pub noise_std: f64,
    /// Also perturb the student input with `noise_std`.
    pub student_noise: bool,
    /// Ramp-up length in steps. `None` means ten epochs inside [`train`] and
    /// no ramp for a bare [`train_step`].
    pub ramp_len: Option<u64>,
    /// Zero disables the teacher entirely.
    pub max_consistency_weight: f64,
    pub pseudo_weight: f64,
    /// Epoch ordering of real and pseudo items. `None` mixes strong, weak
    /// and unlabeled items in fixed shares per batch.
    pub voi_mode: Option<VoiMode>,
    pub seed: u64,
    /// Frame threshold and median window for validation decoding.
    pub val_threshold: f64,
    pub val_median_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 24,
            learning_rate: 0.01,
            momentum: 0.9,
            ema_alpha: 0.999,
            ema_warmup: false,
            noise_std: 0.1,
            student_noise: false,
            ramp_len: None,
            max_consistency_weight: 2.0,
            pseudo_weight: 1.0,
            voi_mode: None,
            seed: 0,
            val_threshold: 0.5,
            val_median_window: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return bad(format!("ema_alpha must lie in [0, 1], got {}", self.ema_alpha));
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be >= 0 and momentum in [0, 1)".into());
        }
        if !(self.max_consistency_weight >= 0.0) || !(self.pseudo_weight >= 0.0) {
            return bad("max_consistency_weight and pseudo_weight must be >= 0".into());
        }
        if self.val_median_window % 2 == 0 {
            return bad(format!("val_median_window must be odd, got {}", self.val_median_window));
        }
        Ok(())
    }

    pub fn uses_teacher(&self) -> bool {
        self.max_consistency_weight > 0.0
    }
}

/// Student, teacher, step counter and momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanTeacherState {
    pub student: CrnnParams,
    pub teacher: CrnnParams,
    pub step: u64,
    pub velocity: Vec<Tensor>,
}

impl MeanTeacherState {
    pub fn new(params: CrnnParams) -> Self {
        let velocity = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        MeanTeacherState { teacher: params.clone(), student: params, step: 0, velocity }
    }
}

/// `θ' ← α·θ' + (1 − α)·θ` element-wise.
pub fn ema_update(state: &mut MeanTeacherState, alpha: f64) -> Result<(), TrainError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TrainError::Config(format!("ema alpha must lie in [0, 1], got {alpha}")));
    }
    let student = state.student.tensors();
    for (t, s) in state.teacher.tensors_mut().into_iter().zip(student) {
        if t.shape() != s.shape() {
            return Err(NumError::Shape { op: "ema_update", msg: format!("{:?} vs {:?}", t.shape(), s.shape()) }.into());
        }
        for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = alpha * *a + (1.0 - alpha) * b;
        }
    }
    Ok(())
}

/// `max_w · exp(−5 (1 − min(step / ramp_len, 1))²)`, or `max_w` when
/// `ramp_len` is zero.
pub fn ramp_up(step: u64, ramp_len: u64, max_w: f64) -> f64 {
    if ramp_len == 0 {
        return max_w;
    }
    let p = (step as f64 / ramp_len as f64).min(1.0);
    max_w * (-5.0 * (1.0 - p) * (1.0 - p)).exp()
}

fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

const TEACHER_STREAM: u64 = 1;
const STUDENT_NOISE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;
const EPOCH_STREAM: u64 = 4;

/// One batch member.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub features: &'a FeatureMatrix,
    pub target: &'a ClipTarget,
}

/// Teacher predictions with input noise seeded by `(seed, step, position)`.
pub fn teacher_predictions(
    teacher: &CrnnParams,
    batch: &[BatchItem],
    noise_std: f64,
    seed: u64,
    step: u64,
) -> Result<Vec<Predictions>, TrainError> {
    batch
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let s = mix(&[seed, TEACHER_STREAM, step, i as u64]);
            Ok(crnn::forward(teacher, item.features, noise_std, s)?)
        })
        .collect()
}

/// Batch objective and its gradient with respect to the student. Each clip
/// is recorded on its own tape; gradients are summed in batch order.
/// `teacher` holds constant targets for the consistency term.
pub fn objective_and_gradient(
    student: &CrnnParams,
    batch: &[BatchItem],
    teacher: Option<&[Predictions]>,
    student_opts: &(dyn Fn(usize) -> ForwardOptions + Sync),
    pseudo_weight: f64,
    w: f64,
) -> Result<(LossBreakdown, Vec<Tensor>), TrainError> {
    let mut runs = batch
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut tape = GradTape::new();
            let out = crnn::forward_on_tape(&mut tape, student, item.features, &student_opts(i), true)?;
            Ok((tape, out))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let sizes: Vec<(usize, usize)> =
        runs.iter().map(|(t, o)| (t.value(o.frame_probs).len(), t.value(o.clip_probs).len())).collect();
    let targets: Vec<ClipTarget> = batch.iter().map(|b| b.target.clone()).collect();
    let norms = Norms::new(&targets, &sizes, teacher.is_some());
    let parts = runs
        .par_iter_mut()
        .enumerate()
        .map(|(i, (tape, out))| {
            let (loss, sums) = clip_objective_on_tape(
                tape,
                out.frame_probs,
                out.clip_probs,
                &targets[i],
                teacher.map(|t| &t[i]),
                &norms,
                pseudo_weight,
                w,
            )?;
            Ok((tape.backward(loss)?, sums))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut grads: Vec<Tensor> = student.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut sums = PartialSums::default();
    for (g, s) in parts {
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.axpy(1.0, gi)?;
        }
        sums.add(&s);
    }
    Ok((sums.breakdown(&norms, pseudo_weight, w), grads))
}

fn step_impl(
    state: &mut MeanTeacherState,
    batch: &[BatchItem],
    cfg: &TrainConfig,
    ramp_len: u64,
    run_teacher: bool,
) -> Result<LossBreakdown, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let step = state.step;
    let w = ramp_up(step, ramp_len, cfg.max_consistency_weight);
    let teacher = if run_teacher {
        Some(teacher_predictions(&state.teacher, batch, cfg.noise_std, cfg.seed, step)?)
    } else {
        None
    };
    let dropout = state.student.config().dropout > 0.0;
    let (seed, noise) = (cfg.seed, if cfg.student_noise { cfg.noise_std } else { 0.0 });
    let opts = move |i: usize| ForwardOptions {
        noise_std: noise,
        noise_seed: mix(&[seed, STUDENT_NOISE_STREAM, step, i as u64]),
        dropout_seed: dropout.then(|| mix(&[seed, DROPOUT_STREAM, step, i as u64])),
    };
    let (loss, grads) =
        objective_and_gradient(&state.student, batch, teacher.as_deref(), &opts, cfg.pseudo_weight, w)?;
    if !loss.total.is_finite() {
        return Err(TrainError::NonFinite { step, what: format!("loss {loss:?}") });
    }
    if let Some(k) = grads.iter().position(|g| !g.all_finite()) {
        return Err(TrainError::NonFinite { step, what: format!("gradient of {}", state.student.tensor_names()[k]) });
    }
    let (lr, mu) = (cfg.learning_rate, cfg.momentum);
    for ((p, v), g) in state.student.tensors_mut().into_iter().zip(state.velocity.iter_mut()).zip(&grads) {
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    let alpha = if cfg.ema_warmup {
        cfg.ema_alpha.min(1.0 - 1.0 / (state.step as f64 + 1.0))
    } else {
        cfg.ema_alpha
    };
    ema_update(state, alpha)?;
    state.step += 1;
    Ok(loss)
}

/// One SGD step on the student followed by the EMA teacher update. The
/// teacher forward pass is skipped when the consistency weight is zero.
pub fn train_step(
    state: &mut MeanTeacherState,
    batch: &[BatchItem],
    cfg: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    step_impl(state, batch, cfg, cfg.ramp_len.unwrap_or(0), cfg.uses_teacher())
}

/// Which pseudo-label kinds enter the classification cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoKinds {
    pub upw: bool,
    pub ups: bool,
    pub wps: bool,
}

impl PseudoKinds {
    pub const ALL: PseudoKinds = PseudoKinds { upw: true, ups: true, wps: true };

    pub fn any(&self) -> bool {
        self.upw || self.ups || self.wps
    }
}

/// A training example: clip index into the dataset plus its targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub clip: usize,
    pub target: ClipTarget,
}

/// Frame-level target matrix `[n_frames, n_classes]` from events.
pub fn strong_target(
    events: &[crate::dataio::EventLabel],
    classes: &[String],
    n_frames: usize,
    frame_duration: f64,
) -> Tensor {
    let c = classes.len();
    let mut data = vec![0.0; n_frames * c];
    for (k, name) in classes.iter().enumerate() {
        let spans: Vec<(f64, f64)> =
            events.iter().filter(|e| &e.class_name == name).map(|e| (e.onset, e.offset)).collect();
        for (t, on) in plg::events_to_frames(&spans, n_frames, frame_duration).into_iter().enumerate() {
            if on {
                data[t * c + k] = 1.0;
            }
        }
    }
    Tensor::new(vec![n_frames, c], data).expect("shape")
}

fn weak_target<'a>(tags: impl IntoIterator<Item = &'a String>, classes: &[String]) -> Tensor {
    let mut v = vec![0.0; classes.len()];
    for t in tags {
        if let Some(k) = classes.iter().position(|c| c == t) {
            v[k] = 1.0;
        }
    }
    Tensor::from_vec(v)
}

/// Everything [`train`] needs: clips, their features and the item list.
pub struct TrainData<'a> {
    pub dataset: &'a Dataset,
    /// Aligned with `dataset.clips`.
    pub features: &'a [FeatureMatrix],
    pub items: Vec<TrainItem>,
}

impl<'a> TrainData<'a> {
    /// Real targets for strong and weak clips. Unlabeled clips join when
    /// `include_unlabeled` is set; enabled pseudo kinds attach UPS/UPW
    /// targets to them, and WPS adds one extra item per weak clip.
    pub fn build(
        dataset: &'a Dataset,
        features: &'a [FeatureMatrix],
        model: &CrnnConfig,
        pseudo: Option<&PseudoLabelSet>,
        kinds: PseudoKinds,
        include_unlabeled: bool,
    ) -> Result<Self, TrainError> {
        if features.len() != dataset.clips.len() {
            return Err(TrainError::Config(format!(
                "{} feature matrices for {} clips",
                features.len(),
                dataset.clips.len()
            )));
        }
        let classes = &dataset.classes;
        let empty = PseudoLabelSet::default();
        let pseudo = pseudo.unwrap_or(&empty);
        let mut items = Vec::new();
        for (i, clip) in dataset.clips.iter().enumerate() {
            let f = &features[i];
            let n_out = model.output_frames(f.n_frames);
            let d = f.frame_duration * model.time_pool_factor() as f64;
            match clip.split {
                Split::Strong => {
                    let events = dataset.strong.get(&clip.id).map(Vec::as_slice).unwrap_or(&[]);
                    items.push(TrainItem {
                        clip: i,
                        target: ClipTarget {
                            strong: Some(strong_target(events, classes, n_out, d)),
                            weak: None,
                            provenance: Provenance::Real,
                            split: Split::Strong,
                        },
                    });
                }
                Split::Weak => {
                    let tags = dataset.weak.get(&clip.id).into_iter().flatten();
                    items.push(TrainItem {
                        clip: i,
                        target: ClipTarget {
                            strong: None,
                            weak: Some(weak_target(tags, classes)),
                            provenance: Provenance::Real,
                            split: Split::Weak,
                        },
                    });
                    if let (true, Some(events)) = (kinds.wps, pseudo.wps.get(&clip.id)) {
                        items.push(TrainItem {
                            clip: i,
                            target: ClipTarget {
                                strong: Some(strong_target(events, classes, n_out, d)),
                                weak: None,
                                provenance: Provenance::Pseudo,
                                split: Split::Weak,
                            },
                        });
                    }
                }
                Split::Unlabeled if include_unlabeled => {
                    let strong = pseudo
                        .ups
                        .get(&clip.id)
                        .filter(|_| kinds.ups)
                        .map(|ev| strong_target(ev, classes, n_out, d));
                    let weak = pseudo.upw.get(&clip.id).filter(|_| kinds.upw).map(|t| weak_target(t, classes));
                    let provenance =
                        if strong.is_some() || weak.is_some() { Provenance::Pseudo } else { Provenance::Real };
                    items.push(TrainItem {
                        clip: i,
                        target: ClipTarget { strong, weak, provenance, split: Split::Unlabeled },
                    });
                }
                Split::Unlabeled | Split::Validation => {}
            }
        }
        Ok(TrainData { dataset, features, items })
    }

    fn unlabeled_share(batch_size: usize) -> (usize, usize, usize) {
        let s = (batch_size / 4).max(1);
        let w = (batch_size / 4).max(1);
        (s, w, batch_size.saturating_sub(s + w).max(1))
    }

    /// Batches per epoch in the mixed-share mode: one pass over the
    /// dataset's unlabeled clips, whether or not they are used.
    pub fn steps_per_epoch(&self, cfg: &TrainConfig) -> usize {
        match cfg.voi_mode {
            Some(_) => self.usable(cfg).len().div_ceil(cfg.batch_size).max(1),
            None => {
                let (_, _, u) = Self::unlabeled_share(cfg.batch_size);
                self.dataset.count(Split::Unlabeled).div_ceil(u).max(1)
            }
        }
    }

    fn usable(&self, cfg: &TrainConfig) -> Vec<usize> {
        (0..self.items.len()).filter(|&i| cfg.uses_teacher() || self.items[i].target.has_targets()).collect()
    }

    /// Item indices for every batch of `epoch`.
    pub fn epoch_batches(&self, cfg: &TrainConfig, epoch: usize) -> Result<Vec<Vec<usize>>, TrainError> {
        let usable = self.usable(cfg);
        if !usable.iter().any(|&i| self.items[i].target.has_targets()) {
            return Err(TrainError::NoLabeledData);
        }
        let seed = mix(&[cfg.seed, EPOCH_STREAM, epoch as u64]);
        let batches = match cfg.voi_mode {
            Some(mode) => {
                let prov: Vec<Provenance> = usable.iter().map(|&i| self.items[i].target.provenance).collect();
                compose_epoch(&prov, mode, cfg.batch_size, seed)?
                    .into_iter()
                    .map(|b| b.into_iter().map(|k| usable[k]).collect())
                    .collect()
            }
            None => {
                let mut pools = StratifiedPools::default();
                for &i in &usable {
                    match self.items[i].target.split {
                        Split::Strong => pools.strong.push(i),
                        Split::Weak => pools.weak.push(i),
                        _ => pools.unlabeled.push(i),
                    }
                }
                let (s, w, u) = Self::unlabeled_share(cfg.batch_size);
                compose_stratified(&pools, [s, w, u], self.steps_per_epoch(cfg), seed)?
            }
        };
        Ok(batches)
    }

    pub fn batch(&self, indices: &[usize]) -> Vec<BatchItem<'_>> {
        indices
            .iter()
            .map(|&i| BatchItem { features: &self.features[self.items[i].clip], target: &self.items[i].target })
            .collect()
    }
}

/// Student predictions on the validation split decoded to events.
pub fn predict_events(
    params: &CrnnParams,
    dataset: &Dataset,
    features: &[FeatureMatrix],
    split: Split,
    threshold: f64,
    median_window: usize,
) -> Result<StrongLabels, TrainError> {
    let idx: Vec<usize> = (0..dataset.clips.len()).filter(|&i| dataset.clips[i].split == split).collect();
    let factor = params.config().time_pool_factor() as f64;
    let decoded = idx
        .par_iter()
        .map(|&i| {
            let f = &features[i];
            let pred = crnn::forward(params, f, 0.0, 0)?;
            let ev = plg::events_from_probs(&pred, &dataset.classes, threshold, median_window, f.frame_duration * factor, None)?;
            Ok((dataset.clips[i].id.clone(), ev))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(decoded.into_iter().collect())
}

pub fn validation_f1(
    params: &CrnnParams,
    dataset: &Dataset,
    features: &[FeatureMatrix],
    cfg: &TrainConfig,
) -> Result<Option<f64>, TrainError> {
    if dataset.validation.is_empty() {
        return Ok(None);
    }
    let est = predict_events(params, dataset, features, Split::Validation, cfg.val_threshold, cfg.val_median_window)?;
    let report = evalkit::eb_f1(&dataset.validation, &est, &CollarParams::default(), &dataset.classes)?;
    Ok(Some(report.macro_f1))
}

/// Per-epoch means of the loss components plus validation EB-F1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_eb_f1: Option<f64>,
}

/// Runs `cfg.epochs` epochs. `on_epoch` sees each record as soon as it is
/// final, so a caller can persist history before a later failure.
pub fn train(
    state: MeanTeacherState,
    data: &TrainData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(MeanTeacherState, Vec<EpochRecord>), TrainError> {
    cfg.validate()?;
    let mut state = state;
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok((state, history));
    }
    let ramp_len = cfg.ramp_len.unwrap_or(10 * data.steps_per_epoch(cfg) as u64);
    for epoch in 0..cfg.epochs {
        let batches = data.epoch_batches(cfg, epoch)?;
        let mut acc = LossBreakdown::default();
        for b in &batches {
            let l = step_impl(&mut state, &data.batch(b), cfg, ramp_len, cfg.uses_teacher())?;
            acc.j1_real += l.j1_real;
            acc.j1_pseudo += l.j1_pseudo;
            acc.j2_strong += l.j2_strong;
            acc.j2_weak += l.j2_weak;
            acc.total += l.total;
            acc.weight = l.weight;
            acc.n_real += l.n_real;
            acc.n_pseudo += l.n_pseudo;
            acc.n_frame += l.n_frame;
            acc.n_clip += l.n_clip;
        }
        let n = batches.len().max(1) as f64;
        for v in [&mut acc.j1_real, &mut acc.j1_pseudo, &mut acc.j2_strong, &mut acc.j2_weak, &mut acc.total] {
            *v /= n;
        }
        let val_eb_f1 = validation_f1(&state.student, data.dataset, data.features, cfg)?;
        let rec = EpochRecord { epoch: epoch + 1, loss: acc, val_eb_f1 };
        log::info!("epoch {} total {:.4} val_eb_f1 {:?}", rec.epoch, acc.total, val_eb_f1);
        on_epoch(&rec);
        history.push(rec);
    }
    Ok((state, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crnn::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feats(t: usize, f: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMatrix { n_frames: t, n_mels: f, data: (0..t * f).map(|_| rng.random_range(-1.0..1.0)).collect(), frame_duration: 0.03125 }
    }

    fn state(seed: u64) -> MeanTeacherState {
        MeanTeacherState::new(init_params(&CrnnConfig::desk(8, 4), seed).unwrap())
    }

    #[test]
    fn ema_closed_form() {
        for k in [1u32, 7, 100] {
            let mut st = state(1);
            st.student = state(2).student;
            let t0 = st.teacher.clone();
            let alpha = 0.93;
            for _ in 0..k {
                ema_update(&mut st, alpha).unwrap();
            }
            let ak = alpha.powi(k as i32);
            for ((t, t0), s) in st.teacher.tensors().iter().zip(t0.tensors()).zip(st.student.tensors()) {
                for ((a, b), c) in t.data().iter().zip(t0.data()).zip(s.data()) {
                    assert!((a - (ak * b + (1.0 - ak) * c)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn ema_examples_and_errors() {
        let mut st = state(1);
        st.student = state(2).student;
        ema_update(&mut st, 0.0).unwrap();
        assert_eq!(st.teacher, st.student);
        let before = st.teacher.clone();
        ema_update(&mut st, 0.37).unwrap();
        for (a, b) in st.teacher.tensors().iter().zip(before.tensors()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1e-15 * y.abs().max(1.0)));
        }
        st.teacher.tensors_mut()[0].data_mut()[0] = 1.0;
        st.student.tensors_mut()[0].data_mut()[0] = 0.0;
        ema_update(&mut st, 0.5).unwrap();
        assert_eq!(st.teacher.tensors()[0].data()[0], 0.5);
        assert!(ema_update(&mut st, 1.5).is_err());
        assert!(ema_update(&mut st, -0.1).is_err());
    }

    #[test]
    fn ramp_examples() {
        assert_eq!(ramp_up(10, 10, 2.0), 2.0);
        assert_eq!(ramp_up(50, 10, 2.0), 2.0);
        assert_eq!(ramp_up(0, 0, 2.0), 2.0);
        assert!((ramp_up(0, 10, 1.0) - 0.006_737_946_999).abs() < 1e-12);
        assert!((ramp_up(5, 10, 3.0) - 3.0 * (-1.25f64).exp()).abs() < 1e-12);
        let mut prev = 0.0;
        for s in 0..=40 {
            let w = ramp_up(s, 30, 1.0);
            assert!(w >= prev);
            prev = w;
        }
    }

    fn strong_item(n_out: usize, c: usize, seed: u64) -> ClipTarget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n_out * c).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        ClipTarget {
            strong: Some(Tensor::new(vec![n_out, c], data).unwrap()),
            weak: None,
            provenance: Provenance::Real,
            split: Split::Strong,
        }
    }

    #[test]
    fn zero_rate_full_alpha_is_a_no_op() {
        let mut st = state(3);
        st.student = state(4).student;
        let before = st.clone();
        let f = feats(16, 8, 1);
        let t = strong_item(4, 4, 1);
        let cfg = TrainConfig { learning_rate: 0.0, ema_alpha: 1.0, ..Default::default() };
        train_step(&mut st, &[BatchItem { features: &f, target: &t }], &cfg).unwrap();
        assert_eq!(st.student, before.student);
        assert_eq!(st.teacher, before.teacher);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_consistency_matches_skipped_teacher() {
        let f: Vec<FeatureMatrix> = (0..3).map(|i| feats(16, 8, i)).collect();
        let t = [strong_item(4, 4, 1), ClipTarget::unlabeled(), strong_item(4, 4, 2)];
        let batch: Vec<BatchItem> = f.iter().zip(&t).map(|(f, t)| BatchItem { features: f, target: t }).collect();
        let cfg = TrainConfig { max_consistency_weight: 0.0, ..Default::default() };
        let mut a = state(5);
        let mut b = state(5);
        for _ in 0..3 {
            let la = step_impl(&mut a, &batch, &cfg, 0, true).unwrap();
            let lb = step_impl(&mut b, &batch, &cfg, 0, false).unwrap();
            assert_eq!(la.j1_real.to_bits(), lb.j1_real.to_bits());
            assert_eq!(la.total.to_bits(), lb.total.to_bits());
        }
        assert_eq!(a.student, b.student);
        assert_eq!(a.teacher, b.teacher);
    }

    #[test]
    fn training_is_deterministic() {
        let f: Vec<FeatureMatrix> = (0..2).map(|i| feats(16, 8, i + 10)).collect();
        let t = [strong_item(4, 4, 3), ClipTarget::unlabeled()];
        let batch: Vec<BatchItem> = f.iter().zip(&t).map(|(f, t)| BatchItem { features: f, target: t }).collect();
        let cfg = TrainConfig { ramp_len: Some(4), ..Default::default() };
        let run = || {
            let mut st = state(6);
            let losses: Vec<u64> = (0..4).map(|_| train_step(&mut st, &batch, &cfg).unwrap().total.to_bits()).collect();
            (st, losses)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { ema_alpha: 1.2, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { noise_std: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
