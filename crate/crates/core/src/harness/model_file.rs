//! Text model file.
//!
//! ```text
//! LIDKIT/1 <backend> <feature_kind>
//! [meta]
//! key = value
//! [language <label>]
//! key = v1 v2 ...
//! checksum=<crc32 hex of every preceding byte>
//! ```
//!
//! Floats are written with 17 significant digits so the decimal text
//! round-trips to the same `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Backend, BuildMeta, LanguageModels, ModelSet};
use crate::error::{LidError, Result};
use crate::features::FeatureKind;
use crate::gmm::GmmModel;
use crate::vq_dtw::Codebook;

pub const MAGIC: &str = "LIDKIT";
const VERSION: u32 = 1;

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_array(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(" ")
}

pub fn encode_model_set(ms: &ModelSet) -> String {
    let mut s = String::new();
    let m = &ms.meta;
    let _ = writeln!(s, "{MAGIC}/{VERSION} {} {}", ms.backend(), ms.kind);
    s.push_str("[meta]\n");
    let _ = writeln!(s, "toolkit = {}", m.toolkit);
    let _ = writeln!(s, "seed = {}", m.seed);
    let _ = writeln!(s, "model_size = {}", m.model_size);
    let _ = writeln!(s, "utterance_codebook = {}", m.utterance_codebook);
    let _ = writeln!(s, "sample_rate = {}", m.sample_rate);
    if let Some(t) = m.train_seconds {
        let _ = writeln!(s, "train_seconds = {}", fmt_f64(t));
    }
    let _ = writeln!(s, "em_max_iters = {}", m.em_max_iters);
    let _ = writeln!(s, "em_tol = {}", fmt_f64(m.em_tol));
    let _ = writeln!(s, "var_floor = {}", fmt_f64(m.var_floor));
    for f in &m.train_files {
        let _ = writeln!(s, "train_file = {f}");
    }
    match &ms.models {
        LanguageModels::Gmm(models) => {
            for (lang, g) in models {
                let _ = writeln!(s, "[language {lang}]");
                let _ = writeln!(s, "components = {}", g.n_components());
                let _ = writeln!(s, "dim = {}", g.dim());
                let _ = writeln!(s, "weights = {}", fmt_array(g.weights.iter().copied()));
                let _ = writeln!(s, "means = {}", fmt_array(g.means.iter().flatten().copied()));
                let _ = writeln!(s, "variances = {}", fmt_array(g.variances.iter().flatten().copied()));
                let _ = writeln!(s, "history = {}", fmt_array(g.history.iter().copied()));
            }
        }
        LanguageModels::VqDtw(books) => {
            for (lang, cb) in books {
                let _ = writeln!(s, "[language {lang}]");
                let _ = writeln!(s, "size = {}", cb.size());
                let _ = writeln!(s, "dim = {}", cb.dim());
                let _ = writeln!(s, "distortion = {}", fmt_f64(cb.distortion));
                let _ = writeln!(s, "centroids = {}", fmt_array(cb.centroids.iter().flatten().copied()));
                let _ = writeln!(s, "history = {}", fmt_array(cb.history.iter().copied()));
            }
        }
    }
    let crc = crc32fast::hash(s.as_bytes());
    let _ = writeln!(s, "checksum={crc:08x}");
    s
}

fn bad(msg: impl Into<String>) -> LidError {
    LidError::BadModelFile(msg.into())
}

/// Key/value pairs of one `[...]` section, in file order.
struct Section {
    name: String,
    entries: Vec<(String, String)>,
}

impl Section {
    fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| bad(format!("section [{}] is missing '{key}'", self.name)))
    }

    fn scalar<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| bad(format!("section [{}]: bad value for '{key}': '{v}'", self.name)))
    }

    fn array(&self, key: &str, expected: Option<usize>) -> Result<Vec<f64>> {
        let v = self.get(key)?;
        let values = v
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| bad(format!("section [{}]: bad number '{t}' in '{key}'", self.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(n) = expected {
            if values.len() != n {
                return Err(bad(format!(
                    "section [{}]: '{key}' has {} values, expected {n} (truncated?)",
                    self.name,
                    values.len()
                )));
            }
        }
        Ok(values)
    }
}

fn rows(flat: Vec<f64>, dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim.max(1)).map(<[f64]>::to_vec).collect()
}

fn parse_meta(sec: &Section) -> Result<BuildMeta> {
    Ok(BuildMeta {
        toolkit: sec.get("toolkit")?.to_string(),
        seed: sec.scalar("seed")?,
        model_size: sec.scalar("model_size")?,
        utterance_codebook: sec.scalar("utterance_codebook")?,
        sample_rate: sec.scalar("sample_rate")?,
        train_seconds: match sec.get("train_seconds") {
            Ok(_) => Some(sec.scalar("train_seconds")?),
            Err(_) => None,
        },
        em_max_iters: sec.scalar("em_max_iters")?,
        em_tol: sec.scalar("em_tol")?,
        var_floor: sec.scalar("var_floor")?,
        train_files: sec
            .entries
            .iter()
            .filter(|(k, _)| k == "train_file")
            .map(|(_, v)| v.clone())
            .collect(),
    })
}

fn parse_gmm(sec: &Section, lang: &str) -> Result<GmmModel> {
    let m: usize = sec.scalar("components")?;
    let dim: usize = sec.scalar("dim")?;
    let weights = sec.array("weights", Some(m))?;
    let means = rows(sec.array("means", Some(m * dim))?, dim);
    let variances = rows(sec.array("variances", Some(m * dim))?, dim);
    let history = sec.array("history", None)?;
    Ok(GmmModel { label: lang.to_string(), weights, means, variances, history })
}

fn parse_codebook(sec: &Section) -> Result<Codebook> {
    let k: usize = sec.scalar("size")?;
    let dim: usize = sec.scalar("dim")?;
    Ok(Codebook {
        distortion: sec.scalar("distortion")?,
        centroids: rows(sec.array("centroids", Some(k * dim))?, dim),
        history: sec.array("history", None)?,
    })
}

pub fn decode_model_set(text: &str) -> Result<ModelSet> {
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    let mut parts = header.split_whitespace();
    let magic = parts.next().unwrap_or("");
    match magic.split_once('/') {
        Some((MAGIC, v)) if v == VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(bad(format!("unsupported version {v}"))),
        _ => return Err(bad(format!("wrong magic '{magic}'"))),
    }
    let backend: Backend = parts
        .next()
        .ok_or_else(|| bad("header lacks backend"))?
        .parse()
        .map_err(|e: LidError| bad(e.to_string()))?;
    let kind: FeatureKind = parts
        .next()
        .ok_or_else(|| bad("header lacks feature kind"))?
        .parse()
        .map_err(|e: LidError| bad(e.to_string()))?;

    let mut offset = header.len();
    let mut sections: Vec<Section> = Vec::new();
    let mut checksum: Option<(usize, String)> = None;
    for raw in lines {
        let line = raw.trim_end_matches(['\n', '\r']);
        if let Some(hex) = line.strip_prefix("checksum=") {
            checksum = Some((offset, hex.trim().to_string()));
            break;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push(Section { name: name.to_string(), entries: Vec::new() });
        } else if let Some((k, v)) = line.split_once(" = ") {
            let sec = sections
                .last_mut()
                .ok_or_else(|| bad(format!("key '{k}' outside any section")))?;
            sec.entries.push((k.to_string(), v.to_string()));
        } else if !line.trim().is_empty() {
            let at = sections.last().map_or("header".to_string(), |s| format!("[{}]", s.name));
            return Err(bad(format!("unreadable line in section {at}: '{line}'")));
        }
        offset += raw.len();
    }
    let Some((body_len, hex)) = checksum else {
        let at = sections.last().map_or("header".to_string(), |s| format!("[{}]", s.name));
        return Err(bad(format!("file truncated in section {at}: no checksum line")));
    };
    let expected = u32::from_str_radix(&hex, 16).map_err(|_| bad(format!("bad checksum '{hex}'")))?;
    let actual = crc32fast::hash(&text.as_bytes()[..body_len]);
    if expected != actual {
        return Err(bad(format!("checksum mismatch: file says {expected:08x}, content is {actual:08x}")));
    }

    let mut iter = sections.into_iter();
    let meta_sec = iter.next().filter(|s| s.name == "meta").ok_or_else(|| bad("first section must be [meta]"))?;
    let meta = parse_meta(&meta_sec)?;
    let mut gmms = BTreeMap::new();
    let mut books = BTreeMap::new();
    for sec in iter {
        let lang = sec
            .name
            .strip_prefix("language ")
            .ok_or_else(|| bad(format!("unexpected section [{}]", sec.name)))?
            .to_string();
        let duplicate = match backend {
            Backend::Gmm => gmms.insert(lang.clone(), parse_gmm(&sec, &lang)?).is_some(),
            Backend::VqDtw => books.insert(lang.clone(), parse_codebook(&sec)?).is_some(),
        };
        if duplicate {
            return Err(bad(format!("duplicate section [language {lang}]")));
        }
    }
    let models = match backend {
        Backend::Gmm => LanguageModels::Gmm(gmms),
        Backend::VqDtw => LanguageModels::VqDtw(books),
    };
    Ok(ModelSet { kind, meta, models })
}

pub fn save_model_set(ms: &ModelSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model_set(ms))?;
    Ok(())
}

pub fn load_model_set(path: impl AsRef<Path>) -> Result<ModelSet> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(LidError::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| bad("file is not UTF-8 text"))?;
    decode_model_set(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_gmm() -> ModelSet {
        let g = |shift: f64| GmmModel {
            label: String::new(),
            weights: vec![0.25, 0.75],
            means: vec![vec![shift, 1.0 / 3.0], vec![-2.5e-7, 1e300]],
            variances: vec![vec![0.1, 0.2], vec![1e-4, 3.0]],
            history: vec![-10.0, -9.5, -9.25],
        };
        let models = [("alpha".to_string(), g(0.5)), ("beta two".to_string(), g(-0.125))]
            .into_iter()
            .map(|(l, mut m)| {
                m.label = l.clone();
                (l, m)
            })
            .collect();
        ModelSet {
            kind: FeatureKind::Rplp,
            meta: BuildMeta {
                toolkit: "0.1.0".into(),
                seed: 7,
                model_size: 2,
                utterance_codebook: 32,
                sample_rate: 16000,
                train_seconds: Some(30.0),
                em_max_iters: 100,
                em_tol: 1e-5,
                var_floor: 1e-4,
                train_files: vec!["a/b.wav".into(), "c d.wav".into()],
            },
            models: LanguageModels::Gmm(models),
        }
    }

    #[test]
    fn gmm_round_trip_is_exact() {
        let ms = sample_gmm();
        let text = encode_model_set(&ms);
        assert!(text.starts_with("LIDKIT/1 gmm rplp\n"));
        assert_eq!(decode_model_set(&text).unwrap(), ms);
        assert_eq!(encode_model_set(&decode_model_set(&text).unwrap()), text);
    }

    #[test]
    fn codebook_round_trip() {
        let mut ms = sample_gmm();
        ms.meta.train_seconds = None;
        let cb = Codebook {
            centroids: vec![vec![0.1, 0.2], vec![std::f64::consts::PI, -1.0]],
            distortion: 0.012345678901234567,
            history: vec![1.0, 0.5],
        };
        ms.models = LanguageModels::VqDtw([("x".to_string(), cb)].into_iter().collect());
        let text = encode_model_set(&ms);
        assert_eq!(decode_model_set(&text).unwrap(), ms);
    }

    #[test]
    fn wrong_magic_and_version() {
        let text = encode_model_set(&sample_gmm());
        let wrong = text.replacen("LIDKIT/1", "LIDKOT/1", 1);
        assert!(matches!(decode_model_set(&wrong), Err(LidError::BadModelFile(m)) if m.contains("magic")));
        let v2 = text.replacen("LIDKIT/1", "LIDKIT/2", 1);
        assert!(matches!(decode_model_set(&v2), Err(LidError::BadModelFile(m)) if m.contains("version")));
    }

    #[test]
    fn truncation_names_the_section() {
        let text = encode_model_set(&sample_gmm());
        let cut = text.find("[language beta two]").unwrap() + 60;
        match decode_model_set(&text[..cut]) {
            Err(LidError::BadModelFile(m)) => assert!(m.contains("[language beta two]"), "{m}"),
            other => panic!("expected BadModelFile, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_body_fails_checksum() {
        let text = encode_model_set(&sample_gmm());
        let corrupted = text.replacen("seed = 7", "seed = 8", 1);
        assert!(matches!(decode_model_set(&corrupted), Err(LidError::BadModelFile(m)) if m.contains("checksum")));
    }
}
