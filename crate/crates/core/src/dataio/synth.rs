use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Clip, DataError, Dataset, EventLabel, Split, StrongLabels, WeakLabels};

/// Synthetic dataset recipe. Each class is a tone or chirp template; events
/// are dropped at random onsets over white Gaussian noise. The strong split
/// is cleaner than the rest: higher SNR and no distractor tones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_strong: usize,
    pub n_weak: usize,
    pub n_unlabeled: usize,
    pub n_validation: usize,
    pub n_classes: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    /// Inclusive range of events per clip.
    pub events_per_clip: [usize; 2],
    /// Event duration range in seconds.
    pub event_seconds: [f64; 2],
    /// Event-to-background SNR range in dB.
    pub snr_db: [f64; 2],
    /// SNR range for the strong split, which stands in for clean synthetic
    /// soundscapes.
    pub strong_snr_db: [f64; 2],
    /// Non-target tone bursts per clip outside the strong split.
    pub distractors_per_clip: [usize; 2],
    /// Background noise standard deviation.
    pub noise_std: f64,
    /// Relative spread of each event's base frequency around its class centre.
    pub freq_jitter: f64,
    /// Class centre frequencies are spread geometrically over this range (Hz).
    pub freq_range: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_strong: 40,
            n_weak: 80,
            n_unlabeled: 400,
            n_validation: 60,
            n_classes: 4,
            clip_seconds: 2.0,
            sample_rate: 16000,
            events_per_clip: [1, 2],
            event_seconds: [0.25, 1.0],
            snr_db: [-4.0, 6.0],
            strong_snr_db: [4.0, 12.0],
            distractors_per_clip: [0, 2],
            noise_std: 0.05,
            freq_jitter: 0.15,
            freq_range: [400.0, 2400.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Invalid(format!("synth config: {m}")));
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if !(self.clip_seconds > 0.0) || self.sample_rate == 0 {
            return bad("clip_seconds and sample_rate must be positive");
        }
        if self.events_per_clip[0] > self.events_per_clip[1] {
            return bad("events_per_clip range is reversed");
        }
        let [lo, hi] = self.event_seconds;
        if !(lo > 0.0 && lo <= hi && hi <= self.clip_seconds) {
            return bad("event_seconds must satisfy 0 < min <= max <= clip_seconds");
        }
        for r in [self.snr_db, self.strong_snr_db] {
            if r[0] > r[1] || !r.iter().all(|v| v.is_finite()) {
                return bad("snr ranges must be finite and ordered");
            }
        }
        if self.distractors_per_clip[0] > self.distractors_per_clip[1] {
            return bad("distractors_per_clip range is reversed");
        }
        if !(self.noise_std >= 0.0) || !(0.0..1.0).contains(&self.freq_jitter) {
            return bad("noise_std must be >= 0 and freq_jitter in [0, 1)");
        }
        let nyq = self.sample_rate as f64 / 2.0;
        if !(self.freq_range[0] > 0.0 && self.freq_range[0] <= self.freq_range[1])
            || self.freq_range[1] * 2.0 * (1.0 + self.freq_jitter) >= nyq
        {
            return bad("freq_range must be positive, ordered and leave room below Nyquist");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|k| format!("class_{k}")).collect()
    }

    fn centre(&self, k: usize) -> f64 {
        let [lo, hi] = self.freq_range;
        let t = if self.n_classes > 1 { k as f64 / (self.n_classes - 1) as f64 } else { 0.0 };
        lo * (hi / lo).powf(t)
    }
}

/// A generated dataset plus ground-truth events for every clip.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub truth: StrongLabels,
}

const DISTRACTOR: usize = usize::MAX;

fn render_event(out: &mut [f64], sr: f64, start: usize, len: usize, kind: usize, f0: f64, amp: f64, phase: f64) {
    let fade = ((0.01 * sr) as usize).max(1).min(len / 2);
    let dur = len as f64 / sr;
    let mut acc = 0.0f64;
    for i in 0..len {
        let t = i as f64 / sr;
        let env = if i < fade {
            0.5 - 0.5 * (PI * i as f64 / fade as f64).cos()
        } else if i + fade >= len {
            0.5 - 0.5 * (PI * (len - 1 - i) as f64 / fade as f64).cos()
        } else {
            1.0
        };
        let v = match kind {
            DISTRACTOR => (2.0 * PI * f0 * t + phase).sin(),
            // Harmonic tone.
            0 => (2.0 * PI * f0 * t + phase).sin() + 0.5 * (4.0 * PI * f0 * t + phase).sin(),
            // Up and down chirps over one octave: integrate the instantaneous frequency.
            1 | 2 => {
                let frac = t / dur;
                let f = if kind == 1 { f0 * (1.0 + frac) } else { f0 * (2.0 - frac) };
                acc += 2.0 * PI * f / sr;
                (acc + phase).sin()
            }
            // Tone with 8 Hz amplitude modulation.
            _ => (0.55 + 0.45 * (2.0 * PI * 8.0 * t).sin()) * (2.0 * PI * f0 * t + phase).sin(),
        };
        out[start + i] += amp * env * v;
    }
}

fn rms_unit(kind: usize) -> f64 {
    match kind {
        0 => (0.5f64 + 0.125).sqrt(),
        1 | 2 => 0.5f64.sqrt(),
        _ => (0.5 * (0.55f64.powi(2) + 0.45f64.powi(2) / 2.0)).sqrt(),
    }
}

/// Bit-identical output for identical configs.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset, DataError> {
    cfg.validate()?;
    let classes = cfg.class_names();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sr = cfg.sample_rate as f64;
    let n_samples = (cfg.clip_seconds * sr).round() as usize;
    let clip_ms = (cfg.clip_seconds * 1000.0).round() as u64;
    let (min_ms, max_ms) =
        ((cfg.event_seconds[0] * 1000.0).round() as u64, (cfg.event_seconds[1] * 1000.0).round() as u64);
    let level = if cfg.noise_std > 0.0 { cfg.noise_std } else { 0.05 };
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");

    let mut clips = Vec::new();
    let mut truth = StrongLabels::new();
    let plan = [
        (Split::Strong, cfg.n_strong),
        (Split::Weak, cfg.n_weak),
        (Split::Unlabeled, cfg.n_unlabeled),
        (Split::Validation, cfg.n_validation),
    ];
    for (split, count) in plan {
        for i in 0..count {
            let id = format!("{}_{i:04}.wav", split.as_str());
            let mut samples: Vec<f64> = if cfg.noise_std > 0.0 {
                (0..n_samples).map(|_| noise.sample(&mut rng)).collect()
            } else {
                vec![0.0; n_samples]
            };
            let snr_range = if split == Split::Strong { cfg.strong_snr_db } else { cfg.snr_db };
            let n_events = rng.random_range(cfg.events_per_clip[0]..=cfg.events_per_clip[1]);
            let mut order: Vec<usize> = (0..cfg.n_classes).collect();
            order.shuffle(&mut rng);
            let mut events = Vec::with_capacity(n_events);
            for e in 0..n_events {
                let k = order[e % cfg.n_classes];
                let dur_ms = rng.random_range(min_ms..=max_ms).max(1);
                let onset_ms = rng.random_range(0..=clip_ms - dur_ms);
                let start = (onset_ms as f64 * sr / 1000.0).round() as usize;
                let end = (((onset_ms + dur_ms) as f64) * sr / 1000.0).round() as usize;
                let end = end.min(n_samples);
                let kind = k % 4;
                let f0 = cfg.centre(k) * (1.0 + cfg.freq_jitter * rng.random_range(-1.0..=1.0));
                let snr = rng.random_range(snr_range[0]..=snr_range[1]);
                let amp = level * 10f64.powf(snr / 20.0) / rms_unit(kind);
                let phase = rng.random_range(0.0..2.0 * PI);
                render_event(&mut samples, sr, start, end - start, kind, f0, amp, phase);
                events.push(EventLabel::new(
                    onset_ms as f64 / 1000.0,
                    (onset_ms + dur_ms) as f64 / 1000.0,
                    classes[k].clone(),
                ));
            }
            if split != Split::Strong {
                let n = rng.random_range(cfg.distractors_per_clip[0]..=cfg.distractors_per_clip[1]);
                let [lo, hi] = cfg.freq_range;
                for _ in 0..n {
                    let dur_ms = rng.random_range(min_ms..=max_ms).max(1);
                    let onset_ms = rng.random_range(0..=clip_ms - dur_ms);
                    let start = (onset_ms as f64 * sr / 1000.0).round() as usize;
                    let end = ((((onset_ms + dur_ms) as f64) * sr / 1000.0).round() as usize).min(n_samples);
                    let f = (lo / 1.5) * ((hi * 1.5) / (lo / 1.5)).powf(rng.random::<f64>());
                    let snr = rng.random_range(cfg.snr_db[0]..=cfg.snr_db[1]);
                    let amp = level * 10f64.powf(snr / 20.0) / 0.5f64.sqrt();
                    let phase = rng.random_range(0.0..2.0 * PI);
                    render_event(&mut samples, sr, start, end - start, DISTRACTOR, f, amp, phase);
                }
            }
            events.sort_by(|a, b| a.onset.total_cmp(&b.onset));
            truth.insert(id.clone(), events);
            clips.push(Clip { id, samples, sample_rate: cfg.sample_rate, split });
        }
    }

    let mut strong = StrongLabels::new();
    let mut weak = WeakLabels::new();
    let mut validation = StrongLabels::new();
    for c in &clips {
        let ev = &truth[&c.id];
        match c.split {
            Split::Strong => {
                strong.insert(c.id.clone(), ev.clone());
            }
            Split::Weak => {
                let tags: BTreeSet<String> = ev.iter().map(|e| e.class_name.clone()).collect();
                weak.insert(c.id.clone(), tags);
            }
            Split::Validation => {
                validation.insert(c.id.clone(), ev.clone());
            }
            Split::Unlabeled => {}
        }
    }
    let dataset = Dataset { classes, clips, strong, weak, validation };
    dataset.validate()?;
    Ok(SynthDataset { dataset, truth })
}
