use std::path::Path;

use super::DataError;

fn wav_err(path: &Path, e: hound::Error) -> DataError {
    DataError::Wav { path: path.display().to_string(), msg: e.to_string() }
}

/// 16-bit PCM mono. Samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), DataError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        w.write_sample(q).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32), DataError> {
    let mut r = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(DataError::Wav {
            path: path.display().to_string(),
            msg: format!(
                "expected 16-bit PCM mono, got {} ch {}-bit",
                spec.channels, spec.bits_per_sample
            ),
        });
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / i16::MAX as f64))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    Ok((samples, spec.sample_rate))
}
