use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AudioClip;
use crate::error::{Error, Result};

/// Frame-major nonnegative time-frequency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    /// FFT size the bins came from (0 when not FFT-derived).
    pub n_fft: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn new(frames: usize, bins: usize, n_fft: usize, data: Vec<f64>) -> Self {
        assert_eq!(frames * bins, data.len(), "spectrogram shape");
        Spectrogram {
            frames,
            bins,
            n_fft,
            data,
        }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Power spectrogram `|FFT(window * frame)|^2`, one row per frame, bins
/// `0..=n_fft/2`. Frame count is `1 + (len - frame_len) / hop`.
pub fn stft_power(clip: &AudioClip, frame_len: usize, hop: usize) -> Result<Spectrogram> {
    if frame_len == 0 || hop == 0 {
        return Err(Error::Config(
            "frame length and hop must be positive".into(),
        ));
    }
    let len = clip.samples.len();
    if len < frame_len {
        return Err(Error::Input(format!(
            "clip {:?} has {len} samples, shorter than one {frame_len}-sample frame",
            clip.clip_id
        )));
    }
    let n_fft = frame_len.next_power_of_two();
    let bins = n_fft / 2 + 1;
    let frames = 1 + (len - frame_len) / hop;
    let window = hamming(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < frame_len {
                Complex::new(clip.samples[start + i] as f64 * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(Spectrogram::new(frames, bins, n_fft, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_second_clip_frame_count() {
        let clip = AudioClip::new("c", 16000, vec![0.0; 160_000]).unwrap();
        let s = stft_power(&clip, 2048, 1024).unwrap();
        assert_eq!(s.frames, 155);
        assert_eq!(s.bins, 1025);
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_clip_is_an_input_error() {
        let clip = AudioClip::new("c", 16000, vec![0.1; 2047]).unwrap();
        assert!(matches!(
            stft_power(&clip, 2048, 1024),
            Err(Error::Input(_))
        ));
        let clip = AudioClip::new("c", 16000, vec![0.1; 2048]).unwrap();
        assert_eq!(stft_power(&clip, 2048, 1024).unwrap().frames, 1);
    }

    #[test]
    fn bin_centered_sine_concentrates_in_main_lobe() {
        let bin = 100usize;
        let freq = bin as f64 * 16000.0 / 2048.0;
        let samples: Vec<f32> = (0..16000)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin() as f32 * 0.5)
            .collect();
        let clip = AudioClip::new("s", 16000, samples).unwrap();
        let s = stft_power(&clip, 2048, 1024).unwrap();
        for t in 0..s.frames {
            let f = s.frame(t);
            let total: f64 = f.iter().sum();
            let peak = f
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(peak, bin);
            // Hamming main lobe spans the center bin and its two neighbours.
            let lobe: f64 = f[bin - 1..=bin + 1].iter().sum();
            assert!(lobe / total > 0.9, "frame {t}: {}", lobe / total);
        }
    }
}
