//! Synthetic multi-language corpus.
//!
//! A "language" is a stable 8th-order all-pole filter (four resonances)
//! together with pitch and voicing statistics. Each speaker jitters the
//! language's resonances and pitch. Excitation alternates voiced stretches
//! (jittered pulse train plus breath noise) with unvoiced noise stretches
//! under a syllable-rate amplitude envelope.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{CorpusManifest, ManifestEntry, Role, DEFAULT_TRAIN_PER_LANGUAGE};
use crate::audio_io::{write_wav_pcm16, Waveform};
use crate::error::{LidError, Result};

const RESONANCE_BANDS: [(f64, f64); 4] =
    [(250.0, 900.0), (900.0, 2300.0), (2300.0, 3400.0), (3400.0, 5200.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_languages: usize,
    pub n_speakers: usize,
    pub utterance_seconds: f64,
    pub seed: u64,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_languages: 4, n_speakers: 7, utterance_seconds: 60.0, seed: 42, sample_rate: 16000 }
    }
}

/// Source-filter parameters for one language or speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageVoice {
    /// (frequency Hz, pole radius) per resonance
    pub resonances: Vec<(f64, f64)>,
    pub f0: f64,
    pub voicing: f64,
    pub breath: f64,
    pub syllable_rate: f64,
}

impl LanguageVoice {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let resonances = RESONANCE_BANDS
            .iter()
            .map(|&(lo, hi)| (rng.random_range(lo..hi), rng.random_range(0.88..0.97)))
            .collect();
        Self {
            resonances,
            f0: rng.random_range(90.0..240.0),
            voicing: rng.random_range(0.55..0.85),
            breath: rng.random_range(0.02..0.2),
            syllable_rate: rng.random_range(3.0..6.0),
        }
    }

    fn speaker(&self, rng: &mut ChaCha8Rng) -> Self {
        let jitter = Normal::new(0.0, 1.0).expect("unit normal");
        let resonances = self
            .resonances
            .iter()
            .map(|&(f, r)| {
                let f = f * (1.0 + 0.02 * jitter.sample(rng));
                let r = (r + 0.004 * jitter.sample(rng)).clamp(0.8, 0.985);
                (f, r)
            })
            .collect();
        Self {
            resonances,
            f0: self.f0 * (1.0f64 + 0.1 * jitter.sample(rng)).max(0.5),
            ..self.clone()
        }
    }

    /// Predictor coefficients `a[1..=8]` for `y[n] = e[n] + sum a_k y[n-k]`.
    pub fn predictor(&self, sample_rate: u32) -> Vec<f64> {
        // product of second-order sections 1 - 2 r cos(theta) z^-1 + r^2 z^-2
        let mut poly = vec![1.0];
        for &(f, r) in &self.resonances {
            let theta = 2.0 * PI * f / f64::from(sample_rate);
            let section = [1.0, -2.0 * r * theta.cos(), r * r];
            let mut next = vec![0.0; poly.len() + 2];
            for (i, p) in poly.iter().enumerate() {
                for (j, s) in section.iter().enumerate() {
                    next[i + j] += p * s;
                }
            }
            poly = next;
        }
        poly[1..].iter().map(|c| -c).collect()
    }

    /// Renders `seconds` of audio with peak magnitude 0.9.
    pub fn render(&self, seconds: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let rate = f64::from(sample_rate);
        let n = (seconds * rate).round() as usize;
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let mut excitation = vec![0.0; n];
        let mut pos = 0usize;
        let mut next_pulse = 0.0f64;
        while pos < n {
            let dur = (rng.random_range(0.08..0.3) * rate) as usize;
            let end = (pos + dur).min(n);
            let voiced = rng.random::<f64>() < self.voicing;
            // slow pitch drift across a stretch
            let f0 = self.f0 * (1.0f64 + 0.08 * noise.sample(rng)).clamp(0.6, 1.6);
            for (i, e) in excitation.iter_mut().enumerate().take(end).skip(pos) {
                if voiced {
                    let mut v = self.breath * noise.sample(rng);
                    if i as f64 >= next_pulse {
                        v += 1.0;
                        next_pulse = i as f64 + rate / f0 * (1.0 + 0.02 * noise.sample(rng));
                    }
                    *e = v;
                } else {
                    *e = 0.3 * noise.sample(rng);
                    next_pulse = i as f64;
                }
            }
            pos = end;
        }
        let a = self.predictor(sample_rate);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = excitation[i];
            for (k, ak) in a.iter().enumerate() {
                if i > k {
                    v += ak * y[i - k - 1];
                }
            }
            y[i] = v;
        }
        let phase = rng.random_range(0.0..PI);
        for (i, v) in y.iter_mut().enumerate() {
            let t = i as f64 / rate;
            *v *= 0.25 + 0.75 * (PI * self.syllable_rate * t + phase).sin().abs();
        }
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            y.iter_mut().for_each(|v| *v *= 0.9 / peak);
        }
        y
    }
}

pub fn language_label(index: usize) -> String {
    format!("lang{index:02}")
}

/// Generates the per-language voices for a seed.
pub fn language_voices(cfg: &SynthConfig) -> Vec<LanguageVoice> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_languages).map(|_| LanguageVoice::random(&mut rng)).collect()
}

fn speaker_rng(seed: u64, lang: usize, speaker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + (lang as u64) * 10_000 + speaker as u64);
    rng
}

/// Writes `<out>/<lang>/spkNN.wav` for every language and speaker plus
/// `<out>/manifest.csv`, and returns the manifest.
pub fn synth_corpus(out_dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<CorpusManifest> {
    if cfg.n_languages < 2 {
        return Err(LidError::InvalidArgument("need at least two languages".into()));
    }
    if cfg.n_speakers < 2 || !(cfg.utterance_seconds > 0.0) {
        return Err(LidError::InvalidArgument(
            "need at least two speakers and a positive utterance length".into(),
        ));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let voices = language_voices(cfg);
    let n_train = DEFAULT_TRAIN_PER_LANGUAGE.min(cfg.n_speakers - 1);
    let jobs: Vec<(usize, usize)> = (0..cfg.n_languages)
        .flat_map(|l| (0..cfg.n_speakers).map(move |s| (l, s)))
        .collect();
    use rayon::prelude::*;
    let entries = jobs
        .par_iter()
        .map(|&(l, s)| {
            let mut rng = speaker_rng(cfg.seed, l, s);
            let voice = voices[l].speaker(&mut rng);
            let samples = voice.render(cfg.utterance_seconds, cfg.sample_rate, &mut rng);
            let language = language_label(l);
            let rel = format!("{language}/spk{s:02}.wav");
            let resolved = out.join(&rel);
            std::fs::create_dir_all(resolved.parent().expect("file has a parent"))?;
            write_wav_pcm16(&resolved, &Waveform { samples, sample_rate: cfg.sample_rate })?;
            Ok(ManifestEntry {
                language,
                speaker: format!("spk{s:02}"),
                path: rel,
                resolved,
                role: if s < n_train { Role::Train } else { Role::Test },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest { entries, sample_rate: cfg.sample_rate };
    manifest.validate()?;
    manifest.write_csv(out.join("manifest.csv"))?;
    Ok(manifest)
}
