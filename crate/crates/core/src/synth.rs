//! Synthetic band-limited noise clips with known classes, for smoke tests
//! and end-to-end checks without a real corpus.
//!
//! Class `c` of `n` is Gaussian noise confined to a band whose center is
//! log-spaced between 300 Hz and 5 kHz and whose width is half its center.
//! Every clip jitters the band center and the level and sits on a faint
//! broadband floor.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::wav::write_wav;
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::io::{DatasetManifest, ManifestRow};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub classes: usize,
    pub clips_per_class: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    /// Relative spread of the per-clip band center.
    pub center_jitter: f64,
    /// Spread of the per-clip level in dB.
    pub gain_jitter_db: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            classes: 3,
            clips_per_class: 100,
            duration_secs: 10.0,
            sample_rate: 16_000,
            center_jitter: 0.08,
            gain_jitter_db: 6.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyClip {
    pub clip: AudioClip,
    pub label: String,
}

pub fn class_band(class: usize, classes: usize) -> (f64, f64) {
    let (lo, hi) = (300.0f64, 5000.0f64);
    let t = if classes > 1 {
        class as f64 / (classes - 1) as f64
    } else {
        0.5
    };
    let center = lo * (hi / lo).powf(t);
    (center * 0.75, center * 1.25)
}

fn noise_in_band<R: Rng + ?Sized>(
    n: usize,
    rate: f64,
    band: (f64, f64),
    floor: f64,
    planner: &mut FftPlanner<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let f = k as f64 * rate / n as f64;
        let amp = if f >= band.0 && f <= band.1 {
            1.0
        } else {
            floor
        };
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        spec[k] = Complex::new(re * amp, im * amp);
        if k != n - k {
            spec[n - k] = spec[k].conj();
        } else {
            spec[k].im = 0.0;
        }
    }
    planner.plan_fft_inverse(n).process(&mut spec);
    spec.into_iter().map(|c| c.re).collect()
}

/// Clips ordered by class, ids `toy_c<class>_<index>`, labels
/// `class<class>`.
pub fn toy_clips(cfg: &ToyConfig) -> Result<Vec<ToyClip>> {
    if cfg.classes == 0 || cfg.clips_per_class == 0 {
        return Err(Error::Config(
            "toy dataset needs at least one class and clip".into(),
        ));
    }
    let n = (cfg.duration_secs * cfg.sample_rate as f64).round() as usize;
    if n < 2 {
        return Err(Error::Config(
            "toy clips must be at least two samples long".into(),
        ));
    }
    let nyquist = cfg.sample_rate as f64 / 2.0;
    if class_band(cfg.classes - 1, cfg.classes).1 * (1.0 + cfg.center_jitter) > nyquist {
        return Err(Error::Config(format!(
            "sample rate {} is too low for the toy bands",
            cfg.sample_rate
        )));
    }
    let mut rng = stream(cfg.seed, Stream::Synth);
    let mut planner = FftPlanner::new();
    let mut out = Vec::with_capacity(cfg.classes * cfg.clips_per_class);
    for c in 0..cfg.classes {
        let (lo, hi) = class_band(c, cfg.classes);
        for i in 0..cfg.clips_per_class {
            let shift = 1.0 + cfg.center_jitter * rng.random_range(-1.0..=1.0);
            let gain_db = cfg.gain_jitter_db * rng.random_range(-1.0..=1.0);
            let raw = noise_in_band(
                n,
                cfg.sample_rate as f64,
                (lo * shift, hi * shift),
                0.01,
                &mut planner,
                &mut rng,
            );
            let rms = (raw.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            let scale = if rms > 0.0 {
                0.1 * 10f64.powf(gain_db / 20.0) / rms
            } else {
                0.0
            };
            let samples = raw
                .iter()
                .map(|v| (v * scale).clamp(-1.0, 1.0) as f32)
                .collect();
            out.push(ToyClip {
                clip: AudioClip::new(format!("toy_c{c}_{i:03}"), cfg.sample_rate, samples)?,
                label: format!("class{c}"),
            });
        }
    }
    Ok(out)
}

/// Writes every toy clip as a 16-bit WAV under `dir` together with a
/// `manifest.csv` that references them by relative path. Returns the
/// manifest as loaded back, with paths resolved against `dir`.
pub fn write_toy_dataset(dir: impl AsRef<Path>, cfg: &ToyConfig) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("wav")).map_err(|source| Error::File {
        path: dir.join("wav"),
        source,
    })?;
    let mut rows = Vec::new();
    for t in toy_clips(cfg)? {
        let rel = Path::new("wav").join(format!("{}.wav", t.clip.clip_id));
        write_wav(dir.join(&rel), &t.clip)?;
        rows.push(ManifestRow {
            clip_id: t.clip.clip_id,
            wav_path: rel,
            label: Some(t.label),
        });
    }
    let path = dir.join("manifest.csv");
    DatasetManifest::new(rows)?.save(&path)?;
    DatasetManifest::load(&path)
}
