//! Audio clips to log-mel features.
//!
//! Frames are 128 ms with a 64 ms hop, Hamming-windowed and transformed with
//! an FFT of the frame length rounded up to a power of two. The power
//! spectrum is projected onto 128 HTK-scale triangular mel filters, log
//! compressed, and the time axis is fixed at 156 frames so that an
//! encoder's stride-2 stem lands on 78 time steps.

mod mel;
mod stft;
pub mod wav;

pub use mel::{hz_to_mel, mel_project, mel_to_hz, MelFilterbank};
pub use stft::{stft_power, Spectrogram};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;
pub const N_MELS: usize = 128;
pub const TARGET_FRAMES: usize = 156;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub clip_id: String,
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(clip_id: impl Into<String>, sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Input("audio clip has no samples".into()));
        }
        Ok(AudioClip {
            clip_id: clip_id.into(),
            sample_rate,
            samples,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling.
    pub fn resampled(&self, rate: u32) -> AudioClip {
        if rate == self.sample_rate {
            return self.clone();
        }
        let ratio = self.sample_rate as f64 / rate as f64;
        let n_out = ((self.samples.len() as f64) / ratio).round().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let frac = (pos - i0 as f64) as f32;
                self.samples[i0] * (1.0 - frac) + self.samples[i1] * frac
            })
            .collect();
        AudioClip {
            clip_id: self.clip_id.clone(),
            sample_rate: rate,
            samples,
        }
    }
}

/// A `n_mels x frames` log-mel matrix, mel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMelFeature {
    pub clip_id: String,
    pub n_mels: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl LogMelFeature {
    pub fn at(&self, mel: usize, frame: usize) -> f32 {
        self.data[mel * self.frames + frame]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub target_frames: usize,
    pub f_min: f64,
    /// `None` means the Nyquist frequency.
    pub f_max: Option<f64>,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: CANONICAL_SAMPLE_RATE,
            frame_ms: 128.0,
            hop_ms: 64.0,
            n_mels: N_MELS,
            target_frames: TARGET_FRAMES,
            f_min: 0.0,
            f_max: None,
        }
    }
}

impl FrontendConfig {
    pub fn frame_samples(&self) -> usize {
        (self.frame_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn f_range(&self) -> (f64, f64) {
        (
            self.f_min,
            self.f_max.unwrap_or(self.sample_rate as f64 / 2.0),
        )
    }
}

/// `ln(mel + floor)`, then the time axis is forced to `target_frames`:
/// short inputs repeat their last frame, long inputs are center-cropped.
pub fn log_compress_and_canonicalize(
    clip_id: &str,
    mel: &Spectrogram,
    target_frames: usize,
) -> LogMelFeature {
    let n_mels = mel.bins;
    let t_in = mel.frames;
    let offset = t_in.saturating_sub(target_frames) / 2;
    let mut data = vec![0.0f32; n_mels * target_frames];
    for t in 0..target_frames {
        let src = if t_in > target_frames {
            t + offset
        } else {
            t.min(t_in - 1)
        };
        let frame = mel.frame(src);
        for (m, &v) in frame.iter().enumerate() {
            data[m * target_frames + t] = (v.max(0.0) + LOG_FLOOR).ln() as f32;
        }
    }
    LogMelFeature {
        clip_id: clip_id.to_string(),
        n_mels,
        frames: target_frames,
        data,
    }
}

/// Clip to canonical log-mel feature, resampling to the configured rate.
pub fn extract_logmel(clip: &AudioClip, config: &FrontendConfig) -> Result<LogMelFeature> {
    let clip = clip.resampled(config.sample_rate);
    let power = stft_power(&clip, config.frame_samples(), config.hop_samples())?;
    let bank = MelFilterbank::new(
        config.n_mels,
        power.n_fft,
        config.sample_rate,
        config.f_range(),
    )?;
    let mel = bank.apply(&power)?;
    Ok(log_compress_and_canonicalize(
        &clip.clip_id,
        &mel,
        config.target_frames,
    ))
}

/// Global mean and standard deviation of a feature set, used to
/// standardize network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

impl FeatureStats {
    pub const IDENTITY: FeatureStats = FeatureStats {
        mean: 0.0,
        std: 1.0,
    };

    /// A constant input gets `std = 1` so standardizing only recenters it.
    pub fn fit(values: &[f32]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input(
                "cannot fit feature statistics to no values".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite feature value {v}")));
        }
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(FeatureStats { mean, std })
    }

    pub fn apply(&self, values: &mut [f32]) {
        for v in values {
            *v = ((*v as f64 - self.mean) / self.std) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mel_with_frames(frames: usize) -> Spectrogram {
        let bins = 4;
        let data = (0..frames * bins)
            .map(|i| (i / bins) as f64 + 1.0)
            .collect();
        Spectrogram::new(frames, bins, 0, data)
    }

    #[test]
    fn zero_mel_is_constant_floor() {
        let mel = Spectrogram::new(156, 3, 0, vec![0.0; 156 * 3]);
        let f = log_compress_and_canonicalize("z", &mel, 156);
        let floor = (1e-10f64).ln() as f32;
        assert!(f.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn short_input_repeats_trailing_frame() {
        let f = log_compress_and_canonicalize("a", &mel_with_frames(155), 156);
        assert_eq!(f.frames, 156);
        // frame values encode their source index + 1
        assert_eq!(f.at(0, 154), f.at(0, 155));
        assert!((f.at(2, 155) - (155.0f64 + 1e-10).ln() as f32).abs() < 1e-6);
        assert!((f.at(2, 0) - (1.0f64 + 1e-10).ln() as f32).abs() < 1e-6);
    }

    #[test]
    fn long_input_is_center_cropped() {
        let f = log_compress_and_canonicalize("a", &mel_with_frames(160), 156);
        // 4 surplus frames, 2 dropped from each end: output frame 0 == input frame 2
        assert!((f.at(1, 0) - 3.0f64.ln() as f32).abs() < 1e-6);
        assert!((f.at(1, 155) - 158.0f64.ln() as f32).abs() < 1e-6);
    }

    #[test]
    fn resampling_preserves_duration() {
        let clip = AudioClip::new("r", 8000, vec![0.25; 8000]).unwrap();
        let up = clip.resampled(16000);
        assert_eq!(up.samples.len(), 16000);
        assert!(up.samples.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn invalid_clips_are_rejected() {
        assert!(AudioClip::new("x", 0, vec![0.0]).is_err());
        assert!(AudioClip::new("x", 16000, vec![]).is_err());
    }
    #[test]
    fn feature_stats_standardize() {
        let mut v = vec![1.0f32, 2.0, 3.0, 4.0];
        let s = FeatureStats::fit(&v).unwrap();
        s.apply(&mut v);
        let mean: f32 = v.iter().sum::<f32>() / 4.0;
        let var: f32 = v.iter().map(|x| x * x).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        assert_eq!(FeatureStats::fit(&[5.0, 5.0]).unwrap().std, 1.0);
        assert!(FeatureStats::fit(&[]).is_err());
    }
}
