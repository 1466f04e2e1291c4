//! The four cepstral pipelines and their numeric kernels.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio_io::Waveform;
use crate::error::{LidError, Result};
use crate::frontend::{
    self, apply_filterbank, build_bark_filterbank, build_mel_filterbank, equal_loudness_weights,
    intensity_to_loudness, Filterbank, SpectrumAnalyzer,
};

/// Band energies are clamped here before a logarithm or LP analysis.
pub const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureKind {
    Mfcc,
    Bfcc,
    Plp,
    Rplp,
}

impl FeatureKind {
    /// In the order used for report rows.
    pub const ALL: [FeatureKind; 4] =
        [FeatureKind::Mfcc, FeatureKind::Bfcc, FeatureKind::Plp, FeatureKind::Rplp];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Bfcc => "bfcc",
            FeatureKind::Plp => "plp",
            FeatureKind::Rplp => "rplp",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = LidError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mfcc" => Ok(FeatureKind::Mfcc),
            "bfcc" => Ok(FeatureKind::Bfcc),
            "plp" => Ok(FeatureKind::Plp),
            "rplp" => Ok(FeatureKind::Rplp),
            other => Err(LidError::InvalidArgument(format!("unknown feature kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub preemphasis: f64,
    pub n_mel: usize,
    pub n_ceps: usize,
    pub lp_order: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::CANONICAL_RATE,
            frame_ms: 25.0,
            hop_ms: 15.0,
            preemphasis: frontend::DEFAULT_PREEMPHASIS,
            n_mel: 24,
            n_ceps: 13,
            lp_order: 13,
        }
    }
}

impl FeatureConfig {
    pub fn frame_len(&self) -> usize {
        frontend::samples_for_ms(self.sample_rate, self.frame_ms)
    }

    pub fn hop(&self) -> usize {
        frontend::samples_for_ms(self.sample_rate, self.hop_ms)
    }

    pub fn nfft(&self) -> usize {
        frontend::default_nfft(self.frame_len())
    }
}

/// Per-frame cepstral vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    pub vectors: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn header(&self, cfg: &FeatureConfig) -> String {
        format!(
            "# kind={} rate={} frame_ms={} hop_ms={}",
            self.kind, self.sample_rate, cfg.frame_ms, cfg.hop_ms
        )
    }

    /// One row per frame, values with 17 significant digits.
    pub fn write_csv<W: Write>(&self, cfg: &FeatureConfig, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header(cfg))?;
        for row in &self.vectors {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<FeatureMatrix> {
        let bad = |msg: String| LidError::InvalidArgument(format!("feature csv: {msg}"));
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let mut kind = None;
        let mut rate = None;
        let mut frame_ms = None;
        let mut hop_ms = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("kind", v)) => kind = Some(v.parse::<FeatureKind>()?),
                Some(("rate", v)) => rate = v.parse::<u32>().ok(),
                Some(("frame_ms", v)) => frame_ms = v.parse::<f64>().ok(),
                Some(("hop_ms", v)) => hop_ms = v.parse::<f64>().ok(),
                _ => {}
            }
        }
        let (kind, rate, frame_ms, hop_ms) = match (kind, rate, frame_ms, hop_ms) {
            (Some(k), Some(r), Some(f), Some(h)) => (k, r, f, h),
            _ => return Err(bad(format!("bad header '{header}'"))),
        };
        let mut vectors = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            vectors.push(row);
        }
        Ok(FeatureMatrix {
            kind,
            vectors,
            sample_rate: rate,
            frame_len: frontend::samples_for_ms(rate, frame_ms),
            hop: frontend::samples_for_ms(rate, hop_ms),
        })
    }
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct_ii(values: &[f64], n_out: usize) -> Vec<f64> {
    let n = values.len();
    assert!(n >= n_out && n_out >= 1, "dct_ii needs n >= n_out >= 1");
    let nf = n as f64;
    (0..n_out)
        .map(|j| {
            let scale = if j == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            scale
                * values
                    .iter()
                    .enumerate()
                    .map(|(m, v)| v * (PI * j as f64 * (m as f64 + 0.5) / nf).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Inverse of the full-length orthonormal [`dct_ii`] (a DCT-III).
pub fn idct_ii(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    let nf = n as f64;
    (0..n)
        .map(|m| {
            coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let scale = if j == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                    scale * c * (PI * j as f64 * (m as f64 + 0.5) / nf).cos()
                })
                .sum()
        })
        .collect()
}

/// Autocorrelation `r[0..=p]` of a sampled power spectrum covering `[0, Nyquist]`.
///
/// The `n` samples are mirrored into an even sequence of length `2(n-1)`
/// whose inverse DFT is real.
pub fn auditory_to_autocorr(band_values: &[f64], p: usize) -> Result<Vec<f64>> {
    let n = band_values.len();
    if n < 2 || p >= n {
        return Err(LidError::InvalidArgument(format!(
            "autocorrelation lag {p} needs more than {n} spectrum samples"
        )));
    }
    let len = 2 * (n - 1);
    let mut buf: Vec<Complex<f64>> = band_values
        .iter()
        .chain(band_values[1..n - 1].iter().rev())
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
    Ok(buf[..=p].iter().map(|c| c.re / len as f64).collect())
}

/// All-pole model `gain / |A(z)|^2` with `A(z) = 1 - sum a_k z^-k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    pub coeffs: Vec<f64>,
    pub gain: f64,
    pub reflection: Vec<f64>,
}

impl LpModel {
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }
}

/// Solves the Toeplitz normal equations by the Levinson-Durbin recursion.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<LpModel> {
    if r.len() <= order {
        return Err(LidError::InvalidArgument(format!(
            "order {order} needs {} autocorrelation lags, got {}",
            order + 1,
            r.len()
        )));
    }
    if !(r[0] > 0.0) {
        return Err(LidError::SingularAutocorr(format!("r[0] = {}", r[0])));
    }
    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    for i in 0..order {
        let acc: f64 = (0..i).map(|j| a[j] * r[i - j]).sum();
        let k = (r[i + 1] - acc) / err;
        if !(k.abs() < 1.0) {
            return Err(LidError::SingularAutocorr(format!("|k{}| = {} >= 1", i + 1, k.abs())));
        }
        prev[..i].copy_from_slice(&a[..i]);
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        reflection.push(k);
    }
    Ok(LpModel { coeffs: a, gain: err, reflection })
}

/// Cepstrum of `gain / |A|^2`: `c[0] = ln gain`, then the standard recursion.
pub fn lpc_to_cepstra(lp: &LpModel, n_ceps: usize) -> Result<Vec<f64>> {
    if !(lp.gain > 0.0) {
        return Err(LidError::NonPositiveGain(lp.gain));
    }
    let a = &lp.coeffs;
    let p = a.len();
    let mut c = vec![0.0; n_ceps];
    if n_ceps == 0 {
        return Ok(c);
    }
    c[0] = lp.gain.ln();
    for n in 1..n_ceps {
        let mut acc = if n <= p { a[n - 1] } else { 0.0 };
        for k in n.saturating_sub(p).max(1)..n {
            acc += (k as f64 / n as f64) * c[k] * a[n - k - 1];
        }
        c[n] = acc;
    }
    Ok(c)
}

/// What happens to filterbank energies before the cepstral step.
#[derive(Debug, Clone, PartialEq)]
pub struct BandShaping {
    pub loudness_weights: Option<Vec<f64>>,
    pub cube_root: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CepstralStep {
    /// natural log, then DCT-II
    LogDct,
    /// autocorrelation, LP of the given order, cepstral recursion
    LinearPrediction(usize),
}

/// A configurable short-time cepstral pipeline.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub kind: FeatureKind,
    pub cfg: FeatureConfig,
    pub preemphasis: Option<f64>,
    pub bank: Filterbank,
    pub shaping: BandShaping,
    pub cepstral: CepstralStep,
    analyzer: SpectrumAnalyzer,
    window: Vec<f64>,
}

impl Pipeline {
    pub fn new(kind: FeatureKind, cfg: &FeatureConfig) -> Result<Self> {
        let nfft = cfg.nfft();
        let rate = cfg.sample_rate;
        let mel = || build_mel_filterbank(nfft, rate, cfg.n_mel, 0.0, f64::from(rate) / 2.0);
        let perceptual = |bank: &Filterbank| BandShaping {
            loudness_weights: Some(equal_loudness_weights(&bank.center_freqs)),
            cube_root: true,
        };
        let plain = BandShaping { loudness_weights: None, cube_root: false };
        let pre = Some(cfg.preemphasis);
        let (preemphasis, bank, shaping, cepstral) = match kind {
            FeatureKind::Mfcc => (pre, mel()?, plain, CepstralStep::LogDct),
            FeatureKind::Bfcc => {
                let bank = build_bark_filterbank(nfft, rate)?;
                let shaping = perceptual(&bank);
                (pre, bank, shaping, CepstralStep::LogDct)
            }
            FeatureKind::Plp => {
                let bank = build_bark_filterbank(nfft, rate)?;
                let shaping = perceptual(&bank);
                (None, bank, shaping, CepstralStep::LinearPrediction(cfg.lp_order))
            }
            FeatureKind::Rplp => {
                (pre, mel()?, plain, CepstralStep::LinearPrediction(cfg.lp_order))
            }
        };
        Self::custom(kind, cfg, preemphasis, bank, shaping, cepstral)
    }

    pub fn custom(
        kind: FeatureKind,
        cfg: &FeatureConfig,
        preemphasis: Option<f64>,
        bank: Filterbank,
        shaping: BandShaping,
        cepstral: CepstralStep,
    ) -> Result<Self> {
        let nfft = cfg.nfft();
        if bank.nfft != nfft {
            return Err(LidError::ShapeMismatch { expected: nfft, actual: bank.nfft });
        }
        if let Some(w) = &shaping.loudness_weights {
            if w.len() != bank.n_filters() {
                return Err(LidError::ShapeMismatch { expected: bank.n_filters(), actual: w.len() });
            }
        }
        match cepstral {
            CepstralStep::LogDct if bank.n_filters() < cfg.n_ceps => {
                return Err(LidError::InvalidArgument(format!(
                    "{} bands cannot give {} cepstra",
                    bank.n_filters(),
                    cfg.n_ceps
                )))
            }
            CepstralStep::LinearPrediction(p) if p >= bank.n_filters() || p + 1 < cfg.n_ceps => {
                return Err(LidError::InvalidArgument(format!(
                    "LP order {p} incompatible with {} bands and {} cepstra",
                    bank.n_filters(),
                    cfg.n_ceps
                )))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            cfg: cfg.clone(),
            preemphasis,
            bank,
            shaping,
            cepstral,
            analyzer: SpectrumAnalyzer::new(nfft)?,
            window: frontend::hamming_window(cfg.frame_len()),
        })
    }

    /// Cepstral vector for one raw (unwindowed) frame.
    pub fn frame_cepstra(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let windowed: Vec<f64> = frame.iter().zip(&self.window).map(|(x, w)| x * w).collect();
        let spec = self.analyzer.power(&windowed, self.cfg.sample_rate)?;
        let mut bands = apply_filterbank(&spec, &self.bank)?;
        if let Some(w) = &self.shaping.loudness_weights {
            bands.iter_mut().zip(w).for_each(|(b, w)| *b *= w);
        }
        if self.shaping.cube_root {
            bands.iter_mut().for_each(|b| *b = intensity_to_loudness(*b));
        }
        bands.iter_mut().for_each(|b| *b = b.max(ENERGY_FLOOR));
        match self.cepstral {
            CepstralStep::LogDct => {
                let logs: Vec<f64> = bands.iter().map(|b| b.ln()).collect();
                Ok(dct_ii(&logs, self.cfg.n_ceps))
            }
            CepstralStep::LinearPrediction(order) => {
                let r = auditory_to_autocorr(&bands, order)?;
                let lp = levinson_durbin(&r, order)?;
                lpc_to_cepstra(&lp, self.cfg.n_ceps)
            }
        }
    }

    pub fn extract(&self, w: &Waveform) -> Result<FeatureMatrix> {
        if w.sample_rate != self.cfg.sample_rate {
            return Err(LidError::InvalidArgument(format!(
                "waveform at {} Hz, pipeline expects {} Hz",
                w.sample_rate, self.cfg.sample_rate
            )));
        }
        let emphasized;
        let samples = match self.preemphasis {
            Some(alpha) => {
                emphasized = frontend::preemphasize(&w.samples, alpha);
                &emphasized
            }
            None => &w.samples,
        };
        let frame_len = self.cfg.frame_len();
        let hop = self.cfg.hop();
        let n = frontend::frame_count(samples.len(), frame_len, hop);
        if n == 0 {
            return Err(LidError::TooShort(format!(
                "{} samples yield no {frame_len}-sample frame",
                samples.len()
            )));
        }
        let vectors = (0..n)
            .map(|i| self.frame_cepstra(&samples[i * hop..i * hop + frame_len]))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix {
            kind: self.kind,
            vectors,
            sample_rate: self.cfg.sample_rate,
            frame_len,
            hop,
        })
    }
}

pub fn extract(kind: FeatureKind, w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    Pipeline::new(kind, cfg)?.extract(w)
}

pub fn extract_mfcc(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    extract(FeatureKind::Mfcc, w, cfg)
}

pub fn extract_plp(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    extract(FeatureKind::Plp, w, cfg)
}

pub fn extract_bfcc(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    extract(FeatureKind::Bfcc, w, cfg)
}

pub fn extract_rplp(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    extract(FeatureKind::Rplp, w, cfg)
}
