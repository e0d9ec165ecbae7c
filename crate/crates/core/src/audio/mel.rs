use super::Spectrogram;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centers evenly spaced on the HTK mel scale. Each
/// filter peaks at 1 on its center frequency and reaches 0 on its
/// neighbours' centers; weights are evaluated at the FFT bin frequencies.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// `n_mels x n_bins`, row-major.
    pub weights: Vec<f64>,
    /// First and one-past-last bin with nonzero weight, per filter.
    support: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, f_range: (f64, f64)) -> Result<Self> {
        let n_bins = n_fft / 2 + 1;
        if n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if n_mels > n_bins {
            return Err(Error::Config(format!(
                "{n_mels} mel bands exceed the {n_bins} FFT bins"
            )));
        }
        let (f_lo, f_hi) = f_range;
        if !(f_lo >= 0.0 && f_hi > f_lo) {
            return Err(Error::Config(format!(
                "invalid mel frequency range {f_lo}..{f_hi}"
            )));
        }
        let (m_lo, m_hi) = (hz_to_mel(f_lo), hz_to_mel(f_hi));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mut weights = vec![0.0; n_mels * n_bins];
        let mut support = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            let (mut first, mut last) = (n_bins, 0);
            for (b, w) in row.iter_mut().enumerate() {
                let f = b as f64 * bin_hz;
                let v = ((f - lo) / (center - lo)).min((hi - f) / (hi - center));
                if v > 0.0 {
                    *w = v;
                    first = first.min(b);
                    last = b + 1;
                }
            }
            if last == 0 {
                return Err(Error::Config(format!(
                    "mel band {m} ({lo:.1}..{hi:.1} Hz) covers no FFT bin"
                )));
            }
            support.push((first, last));
        }
        Ok(MelFilterbank {
            n_mels,
            n_bins,
            weights,
            support,
        })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn apply(&self, power: &Spectrogram) -> Result<Spectrogram> {
        if power.bins != self.n_bins {
            return Err(Error::dim(
                "mel_project",
                format!(
                    "spectrogram has {} bins, filterbank expects {}",
                    power.bins, self.n_bins
                ),
            ));
        }
        let mut data = Vec::with_capacity(power.frames * self.n_mels);
        for t in 0..power.frames {
            let frame = power.frame(t);
            for m in 0..self.n_mels {
                let (a, b) = self.support[m];
                let w = &self.row(m)[a..b];
                data.push(w.iter().zip(&frame[a..b]).map(|(w, p)| w * p).sum());
            }
        }
        Ok(Spectrogram::new(power.frames, self.n_mels, 0, data))
    }
}

pub fn mel_project(
    power: &Spectrogram,
    n_mels: usize,
    sample_rate: u32,
    f_range: (f64, f64),
) -> Result<Spectrogram> {
    MelFilterbank::new(n_mels, power.n_fft, sample_rate, f_range)?.apply(power)
}
