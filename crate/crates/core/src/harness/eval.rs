//! Segment-level evaluation over a grid of model sets and test lengths.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::manifest::{CorpusManifest, ManifestEntry, Role};
use super::{load_utterance, segment_test, Backend, ModelSet};
use crate::audio_io::Waveform;
use crate::error::{LidError, Result};
use crate::features::{FeatureKind, FeatureMatrix, Pipeline};

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub utterance: String,
    pub segment: usize,
    pub truth: String,
    pub predicted: String,
}

/// One (backend, feature, model size, segment length) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCell {
    pub backend: Backend,
    pub kind: FeatureKind,
    pub model_size: usize,
    /// `None` for whole-utterance trials
    pub segment_seconds: Option<f64>,
    pub languages: Vec<String>,
    /// rows: true language, columns: predicted
    pub confusion: Vec<Vec<usize>>,
    pub decisions: Vec<Decision>,
}

impl EvalCell {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Identification rate in percent.
    pub fn rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.correct() as f64 / t as f64,
        }
    }

    pub fn segment_label(&self) -> String {
        self.segment_seconds.map_or_else(|| "whole".to_string(), |s| format!("{s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
}

fn fmt_rate(r: f64) -> String {
    format!("{r:.2}")
}

impl EvalReport {
    pub fn cell(
        &self,
        backend: Backend,
        kind: FeatureKind,
        model_size: usize,
        segment_seconds: Option<f64>,
    ) -> Option<&EvalCell> {
        self.cells.iter().find(|c| {
            c.backend == backend
                && c.kind == kind
                && c.model_size == model_size
                && c.segment_seconds == segment_seconds
        })
    }

    fn gmm_axes(&self) -> (Vec<FeatureKind>, Vec<usize>, Vec<f64>) {
        let gmm: Vec<&EvalCell> = self.cells.iter().filter(|c| c.backend == Backend::Gmm).collect();
        let mut kinds: Vec<FeatureKind> = gmm.iter().map(|c| c.kind).collect();
        kinds.sort();
        kinds.dedup();
        let mut sizes: Vec<usize> = gmm.iter().map(|c| c.model_size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let mut lengths: Vec<f64> = gmm.iter().filter_map(|c| c.segment_seconds).collect();
        lengths.sort_by(f64::total_cmp);
        lengths.dedup();
        (kinds, sizes, lengths)
    }

    /// Mean rate over mixture counts for one feature kind and segment length.
    pub fn gmm_average(&self, kind: FeatureKind, seconds: f64) -> Option<f64> {
        let rates: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.backend == Backend::Gmm && c.kind == kind && c.segment_seconds == Some(seconds))
            .map(EvalCell::rate)
            .collect();
        (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
    }

    /// GMM rates laid out like a feature x (length, mixtures, average) table.
    pub fn table_csv(&self) -> String {
        let (kinds, sizes, lengths) = self.gmm_axes();
        let mut s = String::from("feature");
        for len in &lengths {
            for m in &sizes {
                let _ = write!(s, ",{len}s_m{m}");
            }
            let _ = write!(s, ",{len}s_avg");
        }
        s.push('\n');
        for kind in kinds {
            s.push_str(kind.as_str());
            for &len in &lengths {
                for &m in &sizes {
                    let v = self
                        .cell(Backend::Gmm, kind, m, Some(len))
                        .map_or(String::new(), |c| fmt_rate(c.rate()));
                    let _ = write!(s, ",{v}");
                }
                let avg = self.gmm_average(kind, len).map_or(String::new(), fmt_rate);
                let _ = write!(s, ",{avg}");
            }
            s.push('\n');
        }
        s
    }

    pub fn vq_csv(&self) -> String {
        let mut s = String::from("feature,codebook,segment_s,correct,total,rate\n");
        let mut cells: Vec<&EvalCell> = self.cells.iter().filter(|c| c.backend == Backend::VqDtw).collect();
        cells.sort_by_key(|c| (c.kind, c.model_size));
        for c in cells {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.kind,
                c.model_size,
                c.segment_label(),
                c.correct(),
                c.total(),
                fmt_rate(c.rate())
            );
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("backend,feature,model_size,segment_s,true_language,predicted_counts\n");
        for c in &self.cells {
            for (lang, row) in c.languages.iter().zip(&c.confusion) {
                let counts: Vec<String> = row.iter().map(usize::to_string).collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    c.backend,
                    c.kind,
                    c.model_size,
                    c.segment_label(),
                    lang,
                    counts.join(";")
                );
            }
        }
        s
    }

    pub fn decisions_csv(&self) -> String {
        let mut s = String::from("backend,feature,model_size,segment_s,utterance,segment,truth,predicted\n");
        for c in &self.cells {
            for d in &c.decisions {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    c.backend,
                    c.kind,
                    c.model_size,
                    c.segment_label(),
                    d.utterance,
                    d.segment,
                    d.truth,
                    d.predicted
                );
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{:<6} {:<4} size={:<3} segment={:<5} {:>4}/{:<4} {:>6}%",
                c.backend.as_str(),
                c.kind.as_str(),
                c.model_size,
                c.segment_label(),
                c.correct(),
                c.total(),
                fmt_rate(c.rate())
            );
        }
        s
    }

    pub fn write_dir(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("table.csv"), self.table_csv())?;
        std::fs::write(dir.join("vq_dtw.csv"), self.vq_csv())?;
        std::fs::write(dir.join("confusion.csv"), self.confusion_csv())?;
        std::fs::write(dir.join("decisions.csv"), self.decisions_csv())?;
        Ok(())
    }
}

/// Feature matrices for one test utterance: whole, and per segment length.
struct TestFeatures {
    whole: Option<FeatureMatrix>,
    segments: Vec<Vec<FeatureMatrix>>,
}

fn test_features(
    w: &Waveform,
    pipeline: &Pipeline,
    need_whole: bool,
    lengths: &[f64],
) -> Result<TestFeatures> {
    let whole = need_whole.then(|| pipeline.extract(w)).transpose()?;
    let segments = lengths
        .iter()
        .map(|&len| {
            segment_test(w, len)?
                .iter()
                .map(|seg| pipeline.extract(seg))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestFeatures { whole, segments })
}

fn new_cell(ms: &ModelSet, segment_seconds: Option<f64>) -> EvalCell {
    let languages = ms.languages();
    let n = languages.len();
    EvalCell {
        backend: ms.backend(),
        kind: ms.kind,
        model_size: ms.model_size(),
        segment_seconds,
        languages,
        confusion: vec![vec![0; n]; n],
        decisions: Vec::new(),
    }
}

fn record(cell: &mut EvalCell, utterance: &str, segment: usize, truth: &str, predicted: String) -> Result<()> {
    let ti = cell.languages.iter().position(|l| l == truth).ok_or_else(|| {
        LidError::InvalidArgument(format!("test language '{truth}' has no model"))
    })?;
    let pi = cell.languages.iter().position(|l| *l == predicted).expect("prediction from model set");
    cell.confusion[ti][pi] += 1;
    cell.decisions.push(Decision {
        utterance: utterance.to_string(),
        segment,
        truth: truth.to_string(),
        predicted,
    });
    Ok(())
}

/// Classifies every test utterance with every model set. GMM sets are
/// scored on each segment length; VQ+DTW sets on whole utterances.
pub fn evaluate(corpus: &CorpusManifest, model_sets: &[ModelSet], segment_lengths: &[f64]) -> Result<EvalReport> {
    let tests: Vec<&ManifestEntry> = corpus.with_role(Role::Test).collect();
    if tests.is_empty() {
        return Err(LidError::BadManifest("no test utterances".into()));
    }
    let Some(first) = model_sets.first() else {
        return Ok(EvalReport::default());
    };
    let rate = first.meta.sample_rate;
    if model_sets.iter().any(|m| m.meta.sample_rate != rate) {
        return Err(LidError::InvalidArgument("model sets disagree on sample rate".into()));
    }
    let waves = tests
        .par_iter()
        .map(|e| load_utterance(e, rate, None))
        .collect::<Result<Vec<_>>>()?;

    let mut kinds: Vec<FeatureKind> = model_sets.iter().map(|m| m.kind).collect();
    kinds.sort();
    kinds.dedup();
    let mut features: BTreeMap<FeatureKind, Vec<TestFeatures>> = BTreeMap::new();
    for kind in kinds {
        let sets = model_sets.iter().filter(|m| m.kind == kind);
        let need_whole = sets.clone().any(|m| m.backend() == Backend::VqDtw);
        let lengths: &[f64] = if sets.clone().any(|m| m.backend() == Backend::Gmm) { segment_lengths } else { &[] };
        let pipeline = Pipeline::new(kind, &first.feature_config())?;
        let per_utt = waves
            .par_iter()
            .map(|w| test_features(w, &pipeline, need_whole, lengths))
            .collect::<Result<Vec<_>>>()?;
        features.insert(kind, per_utt);
    }

    let mut cells = Vec::new();
    for ms in model_sets {
        let feats = &features[&ms.kind];
        match ms.backend() {
            Backend::Gmm => {
                for (li, &len) in segment_lengths.iter().enumerate() {
                    let mut cell = new_cell(ms, Some(len));
                    let ranked = feats
                        .par_iter()
                        .map(|tf| {
                            tf.segments[li]
                                .iter()
                                .map(|seg| Ok(ms.classify(seg)?.swap_remove(0).0))
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<Vec<_>>>()?;
                    for (entry, preds) in tests.iter().zip(ranked) {
                        for (si, p) in preds.into_iter().enumerate() {
                            record(&mut cell, &entry.path, si, &entry.language, p)?;
                        }
                    }
                    cells.push(cell);
                }
            }
            Backend::VqDtw => {
                let mut cell = new_cell(ms, None);
                let preds = feats
                    .par_iter()
                    .map(|tf| {
                        let whole = tf.whole.as_ref().expect("whole-utterance features extracted");
                        Ok(ms.classify(whole)?.swap_remove(0).0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (entry, p) in tests.iter().zip(preds) {
                    record(&mut cell, &entry.path, 0, &entry.language, p)?;
                }
                cells.push(cell);
            }
        }
    }
    Ok(EvalReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(backend: Backend, kind: FeatureKind, m: usize, seg: Option<f64>, diag: usize, off: usize) -> EvalCell {
        let langs = vec!["a".to_string(), "b".to_string()];
        let mut decisions = Vec::new();
        for i in 0..diag {
            decisions.push(Decision { utterance: "a.wav".into(), segment: i, truth: "a".into(), predicted: "a".into() });
        }
        for i in 0..off {
            decisions.push(Decision { utterance: "b.wav".into(), segment: i, truth: "b".into(), predicted: "a".into() });
        }
        EvalCell {
            backend,
            kind,
            model_size: m,
            segment_seconds: seg,
            languages: langs,
            confusion: vec![vec![diag, 0], vec![off, 0]],
            decisions,
        }
    }

    #[test]
    fn rates_and_table_layout() {
        let report = EvalReport {
            cells: vec![
                cell(Backend::Gmm, FeatureKind::Mfcc, 2, Some(2.0), 3, 1),
                cell(Backend::Gmm, FeatureKind::Mfcc, 4, Some(2.0), 4, 0),
                cell(Backend::VqDtw, FeatureKind::Mfcc, 32, None, 1, 1),
            ],
        };
        assert_eq!(report.cells[0].rate(), 75.0);
        assert_eq!(report.gmm_average(FeatureKind::Mfcc, 2.0), Some(87.5));
        assert_eq!(report.table_csv(), "feature,2s_m2,2s_m4,2s_avg\nmfcc,75.00,100.00,87.50\n");
        assert_eq!(report.vq_csv(), "feature,codebook,segment_s,correct,total,rate\nmfcc,32,whole,1,2,50.00\n");
        // rates rebuilt from decisions match the confusion matrices
        for c in &report.cells {
            let correct = c.decisions.iter().filter(|d| d.truth == d.predicted).count();
            assert_eq!(correct, c.correct());
            assert_eq!(c.decisions.len(), c.total());
        }
    }
}
