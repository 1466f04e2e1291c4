//! Corpus manifest CSV: `language,speaker,path,role`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{LidError, Result};

/// Per-language count of leading utterances used for training when the
/// manifest gives no role.
pub const DEFAULT_TRAIN_PER_LANGUAGE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = LidError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "test" => Ok(Role::Test),
            other => Err(LidError::BadManifest(format!("unknown role '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub language: String,
    pub speaker: String,
    /// path as written in the manifest
    pub path: String,
    /// `path` resolved against the manifest's directory
    pub resolved: PathBuf,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub sample_rate: u32,
}

impl CorpusManifest {
    pub fn languages(&self) -> Vec<String> {
        let mut langs: Vec<String> = self.entries.iter().map(|e| e.language.clone()).collect();
        langs.sort();
        langs.dedup();
        langs
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.language.is_empty() || e.language.contains([']', '\n', '\r']) {
                return Err(LidError::BadManifest(format!("invalid language label '{}'", e.language)));
            }
            if !seen.insert(&e.resolved) {
                return Err(LidError::BadManifest(format!("duplicate path '{}'", e.path)));
            }
        }
        let mut roles: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for e in &self.entries {
            let slot = roles.entry(&e.language).or_default();
            match e.role {
                Role::Train => slot.0 += 1,
                Role::Test => slot.1 += 1,
            }
        }
        if roles.is_empty() {
            return Err(LidError::BadManifest("no entries".into()));
        }
        for (lang, (train, test)) in roles {
            if train == 0 || test == 0 {
                return Err(LidError::BadManifest(format!(
                    "language '{lang}' has {train} train and {test} test entries; need at least one of each"
                )));
            }
        }
        Ok(())
    }

    /// Writes the manifest with paths as originally given.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["language", "speaker", "path", "role"]).map_err(csv_err)?;
        for e in &self.entries {
            w.write_record([&e.language, &e.speaker, &e.path, &e.role.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> LidError {
    LidError::BadManifest(e.to_string())
}

/// Role for the `index`-th of `count` role-less utterances of a language.
fn default_role(index: usize, count: usize) -> Role {
    let n_train = DEFAULT_TRAIN_PER_LANGUAGE.min(count.saturating_sub(1));
    if index < n_train {
        Role::Train
    } else {
        Role::Test
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path, check_files: bool) -> Result<CorpusManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (lang_col, spk_col, path_col) = match (col("language"), col("speaker"), col("path")) {
        (Some(l), Some(s), Some(p)) => (l, s, p),
        _ => {
            return Err(LidError::BadManifest(
                "header must contain language, speaker and path columns".into(),
            ))
        }
    };
    let role_col = col("role");

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let role = match role_col.map(&field).as_deref() {
            None | Some("") => None,
            Some(r) => Some(r.parse::<Role>()?),
        };
        rows.push((field(lang_col), field(spk_col), field(path_col), role));
    }

    let mut per_language: BTreeMap<String, usize> = BTreeMap::new();
    for (lang, ..) in &rows {
        *per_language.entry(lang.clone()).or_default() += 1;
    }
    let mut position: BTreeMap<String, usize> = BTreeMap::new();
    let mut entries = Vec::with_capacity(rows.len());
    for (language, speaker, path, role) in rows {
        let idx = position.entry(language.clone()).or_default();
        let role = role.unwrap_or_else(|| default_role(*idx, per_language[&language]));
        *idx += 1;
        if path.is_empty() {
            return Err(LidError::BadManifest(format!("empty path for language '{language}'")));
        }
        let resolved = base_dir.join(&path);
        if check_files && !resolved.exists() {
            return Err(LidError::MissingFile(resolved));
        }
        entries.push(ManifestEntry { language, speaker, path, resolved, role });
    }
    let manifest = CorpusManifest { entries, sample_rate: crate::CANONICAL_RATE };
    manifest.validate()?;
    Ok(manifest)
}

/// Reads and validates a manifest; relative paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(LidError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(with_roles: bool) -> String {
        let mut s = String::from(if with_roles { "language,speaker,path,role\n" } else { "language,speaker,path\n" });
        for l in 0..10 {
            for k in 0..7 {
                let role = if k < 6 { "train" } else { "test" };
                if with_roles {
                    s += &format!("L{l},s{k},L{l}/s{k}.wav,{role}\n");
                } else {
                    s += &format!("L{l},s{k},L{l}/s{k}.wav\n");
                }
            }
        }
        s
    }

    #[test]
    fn seventy_entries() {
        let m = parse_manifest(&grid(true), Path::new("."), false).unwrap();
        assert_eq!(m.entries.len(), 70);
        assert_eq!(m.languages().len(), 10);
    }

    #[test]
    fn split_rule_without_roles() {
        let m = parse_manifest(&grid(false), Path::new("."), false).unwrap();
        assert_eq!(m.entries.len(), 70);
        for lang in m.languages() {
            let roles: Vec<Role> = m.entries.iter().filter(|e| e.language == lang).map(|e| e.role).collect();
            assert_eq!(&roles[..6], &[Role::Train; 6]);
            assert_eq!(roles[6], Role::Test);
        }
        assert_eq!(m.with_role(Role::Test).count(), 10);
    }

    #[test]
    fn duplicate_path_is_rejected() {
        let text = "language,speaker,path,role\nA,1,x.wav,train\nA,2,x.wav,test\n";
        assert!(matches!(parse_manifest(text, Path::new("."), false), Err(LidError::BadManifest(_))));
    }

    #[test]
    fn bad_columns_and_roles() {
        let no_path = "language,speaker\nA,1\n";
        assert!(matches!(parse_manifest(no_path, Path::new("."), false), Err(LidError::BadManifest(_))));
        let bad_role = "language,speaker,path,role\nA,1,a.wav,dev\nA,2,b.wav,test\n";
        assert!(matches!(parse_manifest(bad_role, Path::new("."), false), Err(LidError::BadManifest(_))));
        let no_test = "language,speaker,path,role\nA,1,a.wav,train\n";
        assert!(matches!(parse_manifest(no_test, Path::new("."), false), Err(LidError::BadManifest(_))));
    }

    #[test]
    fn missing_audio_file() {
        let text = "language,speaker,path,role\nA,1,nope.wav,train\nA,2,nope2.wav,test\n";
        assert!(matches!(
            parse_manifest(text, Path::new("/nonexistent"), true),
            Err(LidError::MissingFile(_))
        ));
    }
}
