//! Log-mel spectrogram frontend.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("clip has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("{n_mels} mel bands cannot be resolved by a {n_fft}-point FFT")]
    TooManyMels { n_mels: usize, n_fft: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    /// FFT size; also the analysis window length.
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { sample_rate: 16_000, n_fft: 2048, hop: 255, n_mels: 128, log_floor: 1e-10 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.hop == 0 {
            return Err(FeatureError::Config("hop must be >= 1".into()));
        }
        if self.n_mels == 0 {
            return Err(FeatureError::Config("n_mels must be >= 1".into()));
        }
        if self.n_fft < self.hop {
            return Err(FeatureError::Config(format!(
                "window ({}) must be at least the hop ({})",
                self.n_fft, self.hop
            )));
        }
        if self.sample_rate == 0 {
            return Err(FeatureError::Config("sample_rate must be positive".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(FeatureError::Config("log_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Seconds between consecutive frames.
    pub fn frame_duration(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Frames produced for a clip of `n_samples`, or `None` if shorter
    /// than one window.
    pub fn frame_count(&self, n_samples: usize) -> Option<usize> {
        (n_samples >= self.n_fft).then(|| (n_samples - self.n_fft) / self.hop + 1)
    }
}

/// Row-major `frames x n_mels` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub n_frames: usize,
    pub n_mels: usize,
    pub data: Vec<f64>,
    pub frame_duration: f64,
}

impl FeatureMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Windowed DFT magnitudes, one row of `n_fft/2 + 1` bins per frame.
pub fn stft_mag(samples: &[f64], cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>, FeatureError> {
    cfg.validate()?;
    let n_frames = cfg
        .frame_count(samples.len())
        .ok_or(FeatureError::TooShort { samples: samples.len(), window: cfg.n_fft })?;
    let window = hann(cfg.n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let frame = &samples[t * cfg.hop..t * cfg.hop + cfg.n_fft];
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.push(buf[..cfg.n_bins()].iter().map(|c| c.norm()).collect());
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters evenly spaced on the mel scale between 0 Hz and
/// Nyquist, as an `n_mels x (n_fft/2 + 1)` row-major matrix.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>, FeatureError> {
    cfg.validate()?;
    if cfg.n_mels >= cfg.n_fft / 2 {
        return Err(FeatureError::TooManyMels { n_mels: cfg.n_mels, n_fft: cfg.n_fft });
    }
    let n_bins = cfg.n_bins();
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> =
        (0..cfg.n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64)).collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut bank = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row: Vec<f64> = (0..n_bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                let up = (f - lo) / (center - lo);
                let down = (hi - f) / (hi - center);
                up.min(down).max(0.0)
            })
            .collect();
        if row.iter().all(|&v| v == 0.0) {
            return Err(FeatureError::TooManyMels { n_mels: cfg.n_mels, n_fft: cfg.n_fft });
        }
        bank.push(row);
    }
    Ok(bank)
}

/// `log(filterbank · |X|² + log_floor)` per frame, before standardization.
pub fn log_mel_energies(samples: &[f64], cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    let bank = mel_filterbank(cfg)?;
    let mags = stft_mag(samples, cfg)?;
    let mut data = Vec::with_capacity(mags.len() * cfg.n_mels);
    for frame in &mags {
        for row in &bank {
            let e: f64 = row.iter().zip(frame).map(|(w, m)| w * m * m).sum();
            data.push((e + cfg.log_floor).ln());
        }
    }
    Ok(FeatureMatrix {
        n_frames: mags.len(),
        n_mels: cfg.n_mels,
        data,
        frame_duration: cfg.frame_duration(),
    })
}

/// Per-band zero mean / unit variance over the clip's frames. Bands with
/// zero variance are only centred.
pub fn standardize(m: &mut FeatureMatrix) {
    let n = m.n_frames as f64;
    for b in 0..m.n_mels {
        let first = m.data[b];
        if (0..m.n_frames).all(|t| m.data[t * m.n_mels + b] == first) {
            // constant band: the rounded mean would leave residue
            (0..m.n_frames).for_each(|t| m.data[t * m.n_mels + b] = 0.0);
            continue;
        }
        let mean = (0..m.n_frames).map(|t| m.data[t * m.n_mels + b]).sum::<f64>() / n;
        let var = (0..m.n_frames).map(|t| (m.data[t * m.n_mels + b] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for t in 0..m.n_frames {
            let v = &mut m.data[t * m.n_mels + b];
            *v -= mean;
            if std > 0.0 {
                *v /= std;
            }
        }
    }
}

pub fn log_mel(samples: &[f64], cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    let mut m = log_mel_energies(samples, cfg)?;
    standardize(&mut m);
    Ok(m)
}
