//! Log-mel feature frames at a fixed hop.

mod cache;

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{read_features, write_features, FEATURE_MAGIC};

/// Added to mel energies before the logarithm.
pub const LOG_EPS: f64 = 1e-6;

/// A `T × D` matrix of frame features, row-major, with its time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub frames: Vec<f64>,
    pub n_frames: usize,
    pub dim: usize,
    pub hop_s: f64,
    /// Time of the centre of frame 0.
    pub t0_s: f64,
}

impl FeatureSequence {
    pub fn new(frames: Vec<f64>, n_frames: usize, dim: usize, hop_s: f64, t0_s: f64) -> Result<Self> {
        if frames.len() != n_frames * dim {
            return Err(Error::Shape(format!(
                "{} values for {n_frames} x {dim} frames",
                frames.len()
            )));
        }
        if !(hop_s > 0.0) || !t0_s.is_finite() {
            return Err(Error::Invalid(format!("frame grid hop {hop_s}, t0 {t0_s}")));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature frames".into()));
        }
        Ok(Self {
            frames,
            n_frames,
            dim,
            hop_s,
            t0_s,
        })
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i * self.dim..(i + 1) * self.dim]
    }

    pub fn grid(&self) -> FrameGrid {
        FrameGrid {
            hop_s: self.hop_s,
            t0_s: self.t0_s,
        }
    }
}

/// Frame timing shared by features and frame labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameGrid {
    pub hop_s: f64,
    pub t0_s: f64,
}

impl FrameGrid {
    pub fn time(&self, index: usize) -> f64 {
        frame_time(index, self.hop_s, self.t0_s)
    }

    /// Index of the frame whose centre is nearest to `t` (may be negative).
    pub fn nearest(&self, t: f64) -> i64 {
        ((t - self.t0_s) / self.hop_s).round() as i64
    }

    /// First frame index whose centre is at or after `t`.
    pub fn first_at_or_after(&self, t: f64) -> i64 {
        let x = (t - self.t0_s) / self.hop_s;
        let i = x.ceil() as i64;
        // guard against ceil landing one past because of rounding noise
        if i > 0 && self.t0_s + (i - 1) as f64 * self.hop_s >= t {
            i - 1
        } else {
            i
        }
    }
}

pub fn frame_time(index: usize, hop_s: f64, t0_s: f64) -> f64 {
    t0_s + index as f64 * hop_s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub win_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            win_s: 0.04,
            hop_s: 0.02,
            n_mels: 40,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.win_s > 0.0 && self.hop_s > 0.0) || self.n_mels == 0 {
            return Err(Error::Config(format!("frontend {self:?}")));
        }
        Ok(())
    }

    /// Frame count for `duration_s` seconds of audio.
    pub fn n_frames(&self, duration_s: f64) -> usize {
        if duration_s < self.win_s {
            0
        } else {
            ((duration_s - self.win_s) / self.hop_s + 1e-9).floor() as usize + 1
        }
    }

    pub fn extract(&self, samples: &[f64], sample_rate_hz: u32) -> Result<FeatureSequence> {
        logmel(samples, sample_rate_hz, self.win_s, self.hop_s, self.n_mels)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of `n_mels` triangular filters spanning 0..sr/2.
pub fn mel_centers_hz(n_mels: usize, sample_rate_hz: u32) -> Vec<f64> {
    let top = hz_to_mel(f64::from(sample_rate_hz) / 2.0);
    (1..=n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters with unit peak over the `n_fft / 2 + 1` FFT bins.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate_hz: u32) -> Vec<Vec<f64>> {
    let sr = f64::from(sample_rate_hz);
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sr / n_fft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Log mel-filterbank energies of Hann-windowed power spectra.
///
/// Frame `i` covers samples `[i·hop, i·hop + win)`, so its centre sits at
/// `win/2 + i·hop` seconds.
pub fn logmel(samples: &[f64], sample_rate_hz: u32, win_s: f64, hop_s: f64, n_mels: usize) -> Result<FeatureSequence> {
    if samples.is_empty() {
        return Err(Error::Invalid("empty signal".into()));
    }
    if sample_rate_hz == 0 || !(win_s > 0.0 && hop_s > 0.0) || n_mels == 0 {
        return Err(Error::Config(format!(
            "logmel sr {sample_rate_hz}, win {win_s}, hop {hop_s}, mels {n_mels}"
        )));
    }
    let sr = f64::from(sample_rate_hz);
    let win = (win_s * sr).round() as usize;
    let hop = (hop_s * sr).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::Config("window or hop shorter than one sample".into()));
    }
    if samples.len() < win {
        return Err(Error::Invalid(format!(
            "signal of {} samples shorter than the {win}-sample window",
            samples.len()
        )));
    }
    let n_frames = (samples.len() - win) / hop + 1;
    let n_fft = win.next_power_of_two();
    let window = hann(win);
    let bank = mel_filterbank(n_mels, n_fft, sample_rate_hz);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut frames = Vec::with_capacity(n_frames * n_mels);
    for i in 0..n_frames {
        let seg = &samples[i * hop..i * hop + win];
        for (b, (s, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new(s * w, 0.0);
        }
        buf[win..].iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            frames.push((e + LOG_EPS).ln());
        }
    }
    FeatureSequence::new(frames, n_frames, n_mels, f64::from(hop as u32) / sr, win as f64 / sr / 2.0)
}

#[cfg(test)]
mod tests;
