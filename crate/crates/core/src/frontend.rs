//! Short-time spectral analysis shared by every feature pipeline.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{LidError, Result};

pub const DEFAULT_PREEMPHASIS: f64 = 0.98;

/// `y[0] = x[0]`, `y[n] = x[n] - alpha * x[n-1]`.
pub fn preemphasize(samples: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    if let Some(&first) = samples.first() {
        out.push(first);
    }
    out.extend(samples.windows(2).map(|w| w[1] - alpha * w[0]));
    out
}

/// Overlapping analysis frames; frame `i` starts at sample `i * hop`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Vec<f64>>,
    pub frame_len: usize,
    pub hop: usize,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn starts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.frames.len()).map(|i| i * self.hop)
    }
}

pub fn samples_for_ms(sample_rate: u32, ms: f64) -> usize {
    (f64::from(sample_rate) * ms / 1000.0).round() as usize
}

/// Number of complete frames; the trailing partial frame is discarded.
pub fn frame_count(n_samples: usize, frame_len: usize, hop: usize) -> usize {
    if n_samples < frame_len || frame_len == 0 || hop == 0 {
        0
    } else {
        (n_samples - frame_len) / hop + 1
    }
}

pub fn frame_signal(
    samples: &[f64],
    sample_rate: u32,
    frame_ms: f64,
    hop_ms: f64,
) -> Result<FrameSequence> {
    if !(frame_ms > hop_ms && hop_ms > 0.0) {
        return Err(LidError::InvalidArgument(format!(
            "need frame_ms > hop_ms > 0, got {frame_ms}/{hop_ms}"
        )));
    }
    let frame_len = samples_for_ms(sample_rate, frame_ms);
    let hop = samples_for_ms(sample_rate, hop_ms);
    let n = frame_count(samples.len(), frame_len, hop);
    let frames = (0..n)
        .map(|i| samples[i * hop..i * hop + frame_len].to_vec())
        .collect();
    Ok(FrameSequence { frames, frame_len, hop })
}

pub fn hamming_window(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / denom).cos())
        .collect()
}

pub fn apply_hamming(frame: &[f64]) -> Vec<f64> {
    frame
        .iter()
        .zip(hamming_window(frame.len()))
        .map(|(x, w)| x * w)
        .collect()
}

/// One-sided power spectrum `|X[k]|^2`, `k = 0..=nfft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub bins: Vec<f64>,
    pub nfft: usize,
    pub sample_rate: u32,
}

impl PowerSpectrum {
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * f64::from(self.sample_rate) / self.nfft as f64
    }
}

/// Smallest power of two holding `frame_len` samples.
pub fn default_nfft(frame_len: usize) -> usize {
    frame_len.max(1).next_power_of_two()
}

fn check_nfft(nfft: usize, frame_len: usize) -> Result<()> {
    if !nfft.is_power_of_two() || nfft < frame_len || nfft < 2 {
        return Err(LidError::BadFftSize { nfft, frame_len });
    }
    Ok(())
}

/// Reusable forward FFT of a fixed length.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    nfft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer").field("nfft", &self.nfft).finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(nfft: usize) -> Result<Self> {
        check_nfft(nfft, 0)?;
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(Self { nfft, fft })
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    /// Full complex spectrum of `frame` zero-padded to `nfft`.
    pub fn spectrum(&self, frame: &[f64]) -> Result<Vec<Complex<f64>>> {
        check_nfft(self.nfft, frame.len())?;
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.nfft)
            .collect();
        self.fft.process(&mut buf);
        Ok(buf)
    }

    pub fn power(&self, frame: &[f64], sample_rate: u32) -> Result<PowerSpectrum> {
        let spec = self.spectrum(frame)?;
        let bins = spec[..=self.nfft / 2].iter().map(|c| c.norm_sqr()).collect();
        Ok(PowerSpectrum { bins, nfft: self.nfft, sample_rate })
    }
}

pub fn power_spectrum(frame: &[f64], nfft: usize, sample_rate: u32) -> Result<PowerSpectrum> {
    check_nfft(nfft, frame.len())?;
    SpectrumAnalyzer::new(nfft)?.power(frame, sample_rate)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Schroeder's warp with `omega = 2 pi f`; reduces to `6 asinh(f / 600)`.
pub fn bark_warp(f: f64) -> f64 {
    let x = 2.0 * PI * f / (1200.0 * PI);
    6.0 * (x + (x * x + 1.0).sqrt()).ln()
}

pub fn bark_to_hz(bark: f64) -> f64 {
    600.0 * (bark / 6.0).sinh()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterbankKind {
    Mel,
    Bark,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    pub kind: FilterbankKind,
    /// `n_filters x (nfft/2 + 1)`
    pub weights: Vec<Vec<f64>>,
    pub center_freqs: Vec<f64>,
    pub nfft: usize,
    pub sample_rate: u32,
}

impl Filterbank {
    pub fn n_filters(&self) -> usize {
        self.weights.len()
    }

    pub fn n_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    fn validate(self) -> Result<Self> {
        if let Some(m) = self.weights.iter().position(|row| !row.iter().any(|&w| w > 0.0)) {
            return Err(LidError::DegenerateBank(m));
        }
        Ok(self)
    }
}

fn bin_freqs(nfft: usize, sample_rate: u32) -> impl Iterator<Item = f64> {
    let df = f64::from(sample_rate) / nfft as f64;
    (0..=nfft / 2).map(move |k| k as f64 * df)
}

/// Triangular filters with `n_filters + 2` edges equally spaced in Mel
/// between `f_lo` and `f_hi`.
pub fn build_mel_filterbank(
    nfft: usize,
    sample_rate: u32,
    n_filters: usize,
    f_lo: f64,
    f_hi: f64,
) -> Result<Filterbank> {
    check_nfft(nfft, 0)?;
    let nyquist = f64::from(sample_rate) / 2.0;
    if !(0.0 <= f_lo && f_lo < f_hi && f_hi <= nyquist) || n_filters == 0 {
        return Err(LidError::InvalidArgument(format!(
            "mel bank range [{f_lo}, {f_hi}] invalid for Nyquist {nyquist}"
        )));
    }
    let (mlo, mhi) = (hz_to_mel(f_lo), hz_to_mel(f_hi));
    let step = (mhi - mlo) / (n_filters + 1) as f64;
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mlo + i as f64 * step))
        .collect();
    let weights = (0..n_filters)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            bin_freqs(nfft, sample_rate)
                .map(|f| {
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect();
    Filterbank {
        kind: FilterbankKind::Mel,
        weights,
        center_freqs: edges[1..=n_filters].to_vec(),
        nfft,
        sample_rate,
    }
    .validate()
}

/// Critical-band masking curve as a function of Bark offset from the band centre.
pub fn critical_band_curve(offset: f64) -> f64 {
    if offset < -1.3 {
        0.0
    } else if offset <= -0.5 {
        10f64.powf(2.5 * (offset + 0.5))
    } else if offset < 0.5 {
        1.0
    } else if offset <= 2.5 {
        10f64.powf(-(offset - 0.5))
    } else {
        0.0
    }
}

/// Critical-band filters centred at 0.5, 1.5, ... Bark, up to Bark(Nyquist) - 0.5.
pub fn build_bark_filterbank(nfft: usize, sample_rate: u32) -> Result<Filterbank> {
    check_nfft(nfft, 0)?;
    let top = bark_warp(f64::from(sample_rate) / 2.0);
    let n_filters = if top >= 1.0 { (top - 1.0).floor() as usize + 1 } else { 0 };
    if n_filters == 0 {
        return Err(LidError::DegenerateBank(0));
    }
    let bin_barks: Vec<f64> = bin_freqs(nfft, sample_rate).map(bark_warp).collect();
    let centers: Vec<f64> = (0..n_filters).map(|m| m as f64 + 0.5).collect();
    let weights = centers
        .iter()
        .map(|&c| bin_barks.iter().map(|&z| critical_band_curve(z - c)).collect())
        .collect();
    Filterbank {
        kind: FilterbankKind::Bark,
        weights,
        center_freqs: centers.iter().map(|&z| bark_to_hz(z)).collect(),
        nfft,
        sample_rate,
    }
    .validate()
}

/// `e[m] = sum_k weights[m][k] * bins[k]`.
pub fn apply_filterbank(spec: &PowerSpectrum, fb: &Filterbank) -> Result<Vec<f64>> {
    if spec.bins.len() != fb.n_bins() {
        return Err(LidError::ShapeMismatch { expected: fb.n_bins(), actual: spec.bins.len() });
    }
    Ok(fb
        .weights
        .iter()
        .map(|row| row.iter().zip(&spec.bins).map(|(w, p)| w * p).sum())
        .collect())
}

/// Rational approximation of the ear's equal-loudness sensitivity.
pub fn equal_loudness(f: f64) -> f64 {
    let w2 = (2.0 * PI * f).powi(2);
    ((w2 + 56.8e6) * w2 * w2) / ((w2 + 6.3e6).powi(2) * (w2 + 0.38e9))
}

pub fn equal_loudness_weights(center_freqs: &[f64]) -> Vec<f64> {
    center_freqs.iter().map(|&f| equal_loudness(f)).collect()
}

pub fn intensity_to_loudness(e: f64) -> f64 {
    e.cbrt()
}
