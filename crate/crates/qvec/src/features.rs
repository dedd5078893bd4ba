//! MFCC front-end: waveform to normalized T x 64 feature matrices.
//!
//! Processing chain per utterance:
//! 1. framing: 20 ms windows every 10 ms, no padding
//! 2. periodic Hann window, zero-pad to the FFT size
//! 3. power spectrum (unnormalized forward FFT, magnitude squared)
//! 4. triangular mel filterbank (HTK mel scale)
//! 5. natural log with a small floor
//! 6. orthonormal DCT-II, keeping the first `n_mfcc` coefficients
//! 7. per-utterance normalization of each coefficient to zero mean and
//!    unit variance across time
//!
//! Everything is computed in `f64`; the model casts to its own precision at
//! the boundary. There is no pre-emphasis, no dithering and no VAD.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioSignal;
use crate::nn::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("signal of {len} samples is shorter than one window ({required} samples)")]
    TooShort { len: usize, required: usize },
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("feature cache {path}: {reason}")]
    Cache { path: String, reason: String },
}

/// MFCC extraction parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Analysis window in milliseconds.
    pub win_ms: u32,
    /// Hop between windows in milliseconds.
    pub hop_ms: u32,
    /// FFT size; windows are zero-padded to this length.
    pub n_fft: usize,
    /// Number of triangular mel filters.
    pub n_mels: usize,
    /// Number of cepstral coefficients kept.
    pub n_mfcc: usize,
    /// Lowest filterbank edge in Hz.
    pub fmin: f64,
    /// Highest filterbank edge in Hz.
    pub fmax: f64,
    /// Floor added before the log.
    pub log_floor: f64,
    /// Variance threshold below which a coefficient is only mean-shifted.
    pub norm_eps: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            win_ms: 20,
            hop_ms: 10,
            n_fft: 512,
            n_mels: 64,
            n_mfcc: 64,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
            norm_eps: 1e-5,
        }
    }
}

impl FeatureConfig {
    /// Window length in samples at the given rate.
    pub fn win_samples(&self, sample_rate: u32) -> usize {
        (self.win_ms as usize * sample_rate as usize) / 1000
    }

    /// Hop length in samples at the given rate.
    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms as usize * sample_rate as usize) / 1000
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        if self.win_ms == 0 || self.hop_ms == 0 {
            return Err(FeatureError::Config("window and hop must be positive".into()));
        }
        if self.n_mfcc > self.n_mels {
            return Err(FeatureError::Config(format!(
                "n_mfcc ({}) must not exceed n_mels ({})",
                self.n_mfcc, self.n_mels
            )));
        }
        if self.n_fft < self.win_samples(sample_rate) {
            return Err(FeatureError::Config(format!(
                "n_fft ({}) smaller than window ({} samples)",
                self.n_fft,
                self.win_samples(sample_rate)
            )));
        }
        if !(self.fmin < self.fmax && self.fmax <= sample_rate as f64 / 2.0) {
            return Err(FeatureError::Config(format!(
                "need fmin < fmax <= {}; got [{}, {}]",
                sample_rate as f64 / 2.0,
                self.fmin,
                self.fmax
            )));
        }
        if self.log_floor <= 0.0 || self.norm_eps <= 0.0 {
            return Err(FeatureError::Config(
                "log_floor and norm_eps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// T x D matrix of per-frame coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(frames * dim, data.len());
        Self { frames, dim, data }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.dim + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Convert to a `[T, D]` tensor of the model's element type.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&x| T::from_f64(x)).collect();
        Tensor::new(vec![self.frames, self.dim], data).expect("consistent dims")
    }
}

/// Periodic Hann window: `w[i] = 0.5 * (1 - cos(2 pi i / n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>, FeatureError> {
    if n == 0 {
        return Err(FeatureError::Config("window length must be >= 1".into()));
    }
    Ok((0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect())
}

/// Split a signal into full windows; frame `t` starts at `t * hop`.
/// No padding: `T = floor((len - win) / hop) + 1`.
pub fn frame_signal(signal: &AudioSignal, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>, FeatureError> {
    let win = cfg.win_samples(signal.sample_rate);
    let hop = cfg.hop_samples(signal.sample_rate);
    if signal.samples.len() < win {
        return Err(FeatureError::TooShort {
            len: signal.samples.len(),
            required: win,
        });
    }
    let frames = (signal.samples.len() - win) / hop + 1;
    Ok((0..frames)
        .map(|t| {
            signal.samples[t * hop..t * hop + win]
                .iter()
                .map(|&s| s as f64)
                .collect()
        })
        .collect())
}

/// Closed-form frame count for a signal of `len` samples.
pub fn frame_count(len: usize, win: usize, hop: usize) -> Option<usize> {
    if len < win {
        None
    } else {
        Some((len - win) / hop + 1)
    }
}

/// Power spectrum of one frame: Hann window, zero-pad to `n_fft`, forward
/// FFT (unnormalized), magnitude squared of bins `0..=n_fft/2`.
pub fn power_spectrum(frame: &[f64], cfg: &FeatureConfig) -> Result<Vec<f64>, FeatureError> {
    if frame.len() > cfg.n_fft {
        return Err(FeatureError::Config(format!(
            "frame of {} samples exceeds n_fft {}",
            frame.len(),
            cfg.n_fft
        )));
    }
    let window = hann_window(frame.len())?;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut buf = windowed_padded(frame, &window, cfg.n_fft);
    fft.process(&mut buf);
    Ok(buf[..cfg.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect())
}

fn windowed_padded(frame: &[f64], window: &[f64], n_fft: usize) -> Vec<Complex<f64>> {
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for (i, (&x, &w)) in frame.iter().zip(window).enumerate() {
        buf[i].re = x * w;
    }
    buf
}

/// Triangular mel filterbank as an `n_mels x (n_fft/2 + 1)` row-major matrix.
///
/// Centers are equally spaced on the HTK mel scale
/// `mel(f) = 2595 * log10(1 + f / 700)` between `fmin` and `fmax`.
pub fn mel_filterbank(cfg: &FeatureConfig, sample_rate: u32) -> Result<Vec<f64>, FeatureError> {
    cfg.validate(sample_rate)?;
    let bins = cfg.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = vec![0.0; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut nonzero = false;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let rising = safe_div(f - lo, center - lo);
            let falling = safe_div(hi - f, hi - center);
            let w = rising.min(falling).max(0.0);
            if w > 0.0 {
                nonzero = true;
            }
            fb[m * bins + k] = w;
        }
        if !nonzero {
            return Err(FeatureError::Config(format!(
                "mel filter {m} has no positive weight; n_mels too large for FFT resolution"
            )));
        }
    }
    Ok(fb)
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        0.0
    } else {
        num / den
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Orthonormal DCT-II matrix of shape `n_out x n_in`, row-major.
fn dct_matrix(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut m = vec![0.0; n_out * n_in];
    let norm0 = (1.0 / n_in as f64).sqrt();
    let norm = (2.0 / n_in as f64).sqrt();
    for k in 0..n_out {
        let a = if k == 0 { norm0 } else { norm };
        for n in 0..n_in {
            m[k * n_in + n] =
                a * (std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / n_in as f64).cos();
        }
    }
    m
}

/// Un-normalized MFCC matrix of an utterance: `T x n_mfcc`.
pub fn mfcc(signal: &AudioSignal, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    cfg.validate(signal.sample_rate)?;
    let frames = frame_signal(signal, cfg)?;
    let window = hann_window(cfg.win_samples(signal.sample_rate))?;
    let fb = mel_filterbank(cfg, signal.sample_rate)?;
    let dct = dct_matrix(cfg.n_mfcc, cfg.n_mels);
    let bins = cfg.n_fft / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);

    let mut out = Vec::with_capacity(frames.len() * cfg.n_mfcc);
    let mut logmel = vec![0.0; cfg.n_mels];
    for frame in &frames {
        let mut buf = windowed_padded(frame, &window, cfg.n_fft);
        fft.process(&mut buf);
        for (m, lm) in logmel.iter_mut().enumerate() {
            let row = &fb[m * bins..(m + 1) * bins];
            let energy: f64 = row
                .iter()
                .zip(&buf[..bins])
                .map(|(&w, c)| w * c.norm_sqr())
                .sum();
            *lm = (energy + cfg.log_floor).ln();
        }
        for k in 0..cfg.n_mfcc {
            let row = &dct[k * cfg.n_mels..(k + 1) * cfg.n_mels];
            out.push(row.iter().zip(&logmel).map(|(&d, &x)| d * x).sum());
        }
    }
    Ok(FeatureMatrix::new(frames.len(), cfg.n_mfcc, out))
}

/// Per-utterance normalization: each coefficient is shifted to zero mean
/// and scaled to unit variance across time (population variance).
/// Coefficients with variance below `norm_eps` are only mean-shifted.
pub fn normalize_features(m: &FeatureMatrix, cfg: &FeatureConfig) -> FeatureMatrix {
    let t = m.frames();
    let d = m.dim();
    let mut out = vec![0.0; t * d];
    for c in 0..d {
        let mean = (0..t).map(|i| m.get(i, c)).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (m.get(i, c) - mean).powi(2)).sum::<f64>() / t as f64;
        if var < cfg.norm_eps {
            for i in 0..t {
                out[i * d + c] = m.get(i, c) - mean;
            }
        } else {
            let inv = 1.0 / var.sqrt();
            for i in 0..t {
                out[i * d + c] = (m.get(i, c) - mean) * inv;
            }
        }
    }
    FeatureMatrix::new(t, d, out)
}

/// Full front-end: MFCC followed by per-utterance normalization.
pub fn extract_features(
    signal: &AudioSignal,
    cfg: &FeatureConfig,
) -> Result<FeatureMatrix, FeatureError> {
    Ok(normalize_features(&mfcc(signal, cfg)?, cfg))
}

/// Write a feature matrix to the cache format: two little-endian `u32`
/// (frames, dim), then `frames * dim` little-endian `f32` values.
pub fn write_feature_cache(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let err = |reason: String| FeatureError::Cache {
        path: path.display().to_string(),
        reason,
    };
    let mut buf = Vec::with_capacity(8 + m.data.len() * 4);
    buf.extend_from_slice(&(m.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(m.dim as u32).to_le_bytes());
    for &v in &m.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| err(e.to_string()))?;
    f.write_all(&buf).map_err(|e| err(e.to_string()))
}

/// Read a feature matrix previously written by [`write_feature_cache`].
pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<FeatureMatrix, FeatureError> {
    let path = path.as_ref();
    let err = |reason: String| FeatureError::Cache {
        path: path.display().to_string(),
        reason,
    };
    let mut f = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut header = [0u8; 8];
    f.read_exact(&mut header).map_err(|e| err(e.to_string()))?;
    let frames = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload).map_err(|e| err(e.to_string()))?;
    if payload.len() != frames * dim * 4 {
        return Err(err(format!(
            "expected {} payload bytes, found {}",
            frames * dim * 4,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureMatrix::new(frames, dim, data))
}
