//! Corpus-level training and evaluation.

mod eval;
mod manifest;
mod model_file;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use eval::{evaluate, Decision, EvalCell, EvalReport};
pub use manifest::{load_manifest, parse_manifest, CorpusManifest, ManifestEntry, Role};
pub use model_file::{decode_model_set, encode_model_set, load_model_set, save_model_set, MAGIC};
pub use synth::{synth_corpus, LanguageVoice, SynthConfig};

use crate::audio_io::{self, Waveform};
use crate::error::{LidError, Result};
use crate::features::{FeatureConfig, FeatureKind, FeatureMatrix, Pipeline};
use crate::gmm::{self, EmOptions, GmmModel};
use crate::vq_dtw::{self, Codebook};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Leading seconds of each training utterance used for GMM training.
pub const GMM_TRAIN_SECONDS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Backend {
    VqDtw,
    Gmm,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::VqDtw => "vq_dtw",
            Backend::Gmm => "gmm",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = LidError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gmm" => Ok(Backend::Gmm),
            "vq_dtw" | "vq-dtw" | "vq" => Ok(Backend::VqDtw),
            other => Err(LidError::InvalidArgument(format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    /// mixture count (GMM) or language codebook size (VQ+DTW)
    pub model_size: usize,
    /// codebook size for test-utterance signatures (VQ+DTW)
    pub utterance_codebook: usize,
    pub em: EmOptions,
    /// GMM training truncation; VQ+DTW always uses whole utterances
    pub gmm_train_seconds: Option<f64>,
    pub features: FeatureConfig,
}

impl TrainParams {
    pub fn gmm(mixtures: usize) -> Self {
        Self {
            model_size: mixtures,
            utterance_codebook: vq_dtw::DEFAULT_CODEBOOK_SIZE,
            em: EmOptions::default(),
            gmm_train_seconds: Some(GMM_TRAIN_SECONDS),
            features: FeatureConfig::default(),
        }
    }

    pub fn vq_dtw(codebook: usize) -> Self {
        Self { model_size: codebook, gmm_train_seconds: None, ..Self::gmm(codebook) }
    }

    pub fn for_backend(backend: Backend, size: usize) -> Self {
        match backend {
            Backend::Gmm => Self::gmm(size),
            Backend::VqDtw => Self::vq_dtw(size),
        }
    }
}

/// Provenance stored with every model set.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildMeta {
    pub toolkit: String,
    pub seed: u64,
    pub model_size: usize,
    pub utterance_codebook: usize,
    pub sample_rate: u32,
    pub train_seconds: Option<f64>,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub var_floor: f64,
    pub train_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LanguageModels {
    Gmm(BTreeMap<String, GmmModel>),
    VqDtw(BTreeMap<String, Codebook>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub kind: FeatureKind,
    pub meta: BuildMeta,
    pub models: LanguageModels,
}

impl ModelSet {
    pub fn backend(&self) -> Backend {
        match self.models {
            LanguageModels::Gmm(_) => Backend::Gmm,
            LanguageModels::VqDtw(_) => Backend::VqDtw,
        }
    }

    pub fn languages(&self) -> Vec<String> {
        match &self.models {
            LanguageModels::Gmm(m) => m.keys().cloned().collect(),
            LanguageModels::VqDtw(m) => m.keys().cloned().collect(),
        }
    }

    pub fn model_size(&self) -> usize {
        self.meta.model_size
    }

    /// Canonical file name, e.g. `gmm_rplp_m8.lidkit`.
    pub fn file_name(&self) -> String {
        match self.backend() {
            Backend::Gmm => format!("gmm_{}_m{}.lidkit", self.kind, self.meta.model_size),
            Backend::VqDtw => format!("vq_dtw_{}_k{}.lidkit", self.kind, self.meta.model_size),
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig { sample_rate: self.meta.sample_rate, ..FeatureConfig::default() }
    }

    /// Ranked `(language, score)` for one feature matrix. GMM scores are
    /// average log-likelihoods (descending), VQ+DTW scores are DTW costs
    /// (ascending).
    pub fn classify(&self, features: &FeatureMatrix) -> Result<Vec<(String, f64)>> {
        if features.kind != self.kind {
            return Err(LidError::InvalidArgument(format!(
                "model set expects {} features, got {}",
                self.kind, features.kind
            )));
        }
        match &self.models {
            LanguageModels::Gmm(models) => gmm::classify_gmm(&features.vectors, models),
            LanguageModels::VqDtw(books) => {
                vq_dtw::classify_vq_dtw(&features.vectors, books, self.meta.utterance_codebook)
            }
        }
    }

    /// Reads, resamples and conditions a WAV, then ranks languages.
    pub fn identify(&self, w: &Waveform) -> Result<Vec<(String, f64)>> {
        let cfg = self.feature_config();
        let w = prepare(w, cfg.sample_rate, None)?;
        self.classify(&Pipeline::new(self.kind, &cfg)?.extract(&w)?)
    }
}

/// Resample, optionally truncate, then remove DC and peak-normalise.
pub fn prepare(w: &Waveform, rate: u32, truncate_secs: Option<f64>) -> Result<Waveform> {
    let w = audio_io::resample(w, rate)?;
    let w = match truncate_secs {
        Some(s) => w.truncated(s),
        None => w,
    };
    audio_io::preprocess(&w)
}

pub fn load_utterance(entry: &ManifestEntry, rate: u32, truncate_secs: Option<f64>) -> Result<Waveform> {
    prepare(&audio_io::read_wav(&entry.resolved)?, rate, truncate_secs)
}

/// Consecutive non-overlapping segments of exactly `seconds`; the remainder is dropped.
pub fn segment_test(utterance: &Waveform, seconds: f64) -> Result<Vec<Waveform>> {
    if !(seconds > 0.0) {
        return Err(LidError::InvalidArgument(format!("segment length {seconds} must be positive")));
    }
    let len = (seconds * f64::from(utterance.sample_rate)).round() as usize;
    if len == 0 || utterance.len() < len {
        return Err(LidError::TooShort(format!(
            "{:.3} s utterance holds no complete {seconds} s segment",
            utterance.duration_secs()
        )));
    }
    Ok(utterance
        .samples
        .chunks_exact(len)
        .map(|c| Waveform { samples: c.to_vec(), sample_rate: utterance.sample_rate })
        .collect())
}

/// Pooled per-language training frames.
pub struct TrainingFrames {
    pub kind: FeatureKind,
    pub by_language: BTreeMap<String, Vec<Vec<f64>>>,
    pub files: Vec<String>,
    pub sample_rate: u32,
}

pub fn collect_training_frames(
    corpus: &CorpusManifest,
    kind: FeatureKind,
    cfg: &FeatureConfig,
    truncate_secs: Option<f64>,
) -> Result<TrainingFrames> {
    let pipeline = Pipeline::new(kind, cfg)?;
    let entries: Vec<&ManifestEntry> = corpus.with_role(Role::Train).collect();
    let extracted = entries
        .par_iter()
        .map(|e| {
            let w = load_utterance(e, cfg.sample_rate, truncate_secs)?;
            pipeline.extract(&w)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut by_language: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (e, fm) in entries.iter().zip(extracted) {
        by_language.entry(e.language.clone()).or_default().extend(fm.vectors);
    }
    Ok(TrainingFrames {
        kind,
        by_language,
        files: entries.iter().map(|e| e.path.clone()).collect(),
        sample_rate: cfg.sample_rate,
    })
}

/// Per-language EM seed derived from the run seed and the language's position.
fn language_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

pub fn train_from_frames(
    frames: &TrainingFrames,
    backend: Backend,
    params: &TrainParams,
    seed: u64,
) -> Result<ModelSet> {
    let langs: Vec<(usize, &String, &Vec<Vec<f64>>)> = frames
        .by_language
        .iter()
        .enumerate()
        .map(|(i, (l, v))| (i, l, v))
        .collect();
    let models = match backend {
        Backend::Gmm => {
            let fitted = langs
                .par_iter()
                .map(|&(i, lang, data)| {
                    let opts = EmOptions { seed: language_seed(seed, i), ..params.em.clone() };
                    let mut model = gmm::em_fit(data, params.model_size, &opts)?;
                    model.label = lang.clone();
                    Ok((lang.clone(), model))
                })
                .collect::<Result<Vec<_>>>()?;
            LanguageModels::Gmm(fitted.into_iter().collect())
        }
        Backend::VqDtw => {
            let books = langs
                .par_iter()
                .map(|&(_, lang, data)| {
                    Ok((lang.clone(), vq_dtw::lbg_train(data, params.model_size, vq_dtw::DEFAULT_SPLIT_EPS)?))
                })
                .collect::<Result<Vec<_>>>()?;
            LanguageModels::VqDtw(books.into_iter().collect())
        }
    };
    Ok(ModelSet {
        kind: frames.kind,
        meta: BuildMeta {
            toolkit: TOOLKIT_VERSION.to_string(),
            seed,
            model_size: params.model_size,
            utterance_codebook: params.utterance_codebook,
            sample_rate: frames.sample_rate,
            train_seconds: match backend {
                Backend::Gmm => params.gmm_train_seconds,
                Backend::VqDtw => None,
            },
            em_max_iters: params.em.max_iters,
            em_tol: params.em.tol,
            var_floor: params.em.var_floor,
            train_files: frames.files.clone(),
        },
        models,
    })
}

/// Trains one model per language on pooled training frames.
pub fn train_all(
    corpus: &CorpusManifest,
    kind: FeatureKind,
    backend: Backend,
    params: &TrainParams,
    seed: u64,
) -> Result<ModelSet> {
    Ok(train_many(corpus, kind, backend, std::slice::from_ref(&params.model_size), params, seed)?
        .remove(0))
}

/// Like [`train_all`] for several model sizes, extracting features once.
pub fn train_many(
    corpus: &CorpusManifest,
    kind: FeatureKind,
    backend: Backend,
    sizes: &[usize],
    params: &TrainParams,
    seed: u64,
) -> Result<Vec<ModelSet>> {
    let truncate = match backend {
        Backend::Gmm => params.gmm_train_seconds,
        Backend::VqDtw => None,
    };
    let frames = collect_training_frames(corpus, kind, &params.features, truncate)?;
    sizes
        .iter()
        .map(|&size| {
            let p = TrainParams { model_size: size, ..params.clone() };
            train_from_frames(&frames, backend, &p, seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_counts() {
        let w = |secs: f64| Waveform::new(vec![0.0; (secs * 16000.0) as usize], 16000).unwrap();
        assert_eq!(segment_test(&w(35.0), 10.0).unwrap().len(), 3);
        assert_eq!(segment_test(&w(35.0), 2.0).unwrap().len(), 17);
        assert!(segment_test(&w(35.0), 2.0).unwrap().iter().all(|s| s.len() == 32000));
        assert!(matches!(segment_test(&w(1.5), 2.0), Err(LidError::TooShort(_))));
        assert!(segment_test(&w(1.5), 0.0).is_err());
    }

    #[test]
    fn backend_names() {
        for b in [Backend::Gmm, Backend::VqDtw] {
            assert_eq!(b.as_str().parse::<Backend>().unwrap(), b);
        }
        assert!("hmm".parse::<Backend>().is_err());
    }
}
