//! Command-line front end.
//!
//! Flags override values from an optional `--config` file of `key = value`
//! lines. Exit status is 0 on success, 1 on usage errors and 2 on data or
//! model errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::audio_io;
use crate::error::{LidError, Result};
use crate::features::{FeatureConfig, FeatureKind, Pipeline};
use crate::harness::{
    self, evaluate, load_manifest, load_model_set, save_model_set, synth_corpus, Backend, ModelSet,
    SynthConfig, TrainParams,
};

#[derive(Debug, Parser)]
#[command(name = "lidkit", version, about = "Spoken language identification toolkit")]
struct Cli {
    /// key = value file supplying defaults for any flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// worker threads (results do not depend on this)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// WAV -> feature CSV
    Extract(ExtractArgs),
    /// generate a synthetic corpus with its manifest
    Synth(SynthArgs),
    /// manifest -> model files
    Train(TrainArgs),
    /// model file + WAV -> ranked languages
    Identify(IdentifyArgs),
    /// manifest + model files -> report CSVs
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    feat: Option<String>,
    #[arg(long)]
    rate: Option<u32>,
    /// output CSV (standard output when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    wav: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    languages: Option<usize>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    backend: Option<String>,
    /// comma-separated feature kinds
    #[arg(long)]
    feat: Option<String>,
    /// comma-separated mixture counts (gmm)
    #[arg(long)]
    mixtures: Option<String>,
    /// language and utterance codebook size (vq_dtw)
    #[arg(long)]
    codebook: Option<usize>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rate: Option<u32>,
}

#[derive(Debug, Args)]
struct IdentifyArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    wav: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// model directory or comma-separated model files
    #[arg(long)]
    models: Option<String>,
    /// comma-separated test segment lengths in seconds
    #[arg(long)]
    segments: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flag values layered over config-file values.
struct Settings {
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            if !path.exists() {
                return Err(LidError::MissingFile(path.to_path_buf()));
            }
            for (n, line) in std::fs::read_to_string(path)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    LidError::InvalidArgument(format!("{}:{}: expected key = value", path.display(), n + 1))
                })?;
                file.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self { file, resolved: Vec::new() })
    }

    fn raw(&mut self, key: &str, flag: Option<String>) -> Option<String> {
        let v = flag.or_else(|| self.file.get(key).cloned());
        if let Some(v) = &v {
            self.resolved.push((key.to_string(), v.clone()));
        }
        v
    }

    fn get<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>, default: Option<T>) -> Result<T> {
        let raw = self.raw(key, flag.map(|f| f.to_string()));
        match raw {
            Some(v) => v
                .parse()
                .map_err(|_| LidError::InvalidArgument(format!("invalid value for {key}: '{v}'"))),
            None => {
                let d = default.ok_or_else(|| LidError::InvalidArgument(format!("missing required --{key}")))?;
                self.resolved.push((key.to_string(), d.to_string()));
                Ok(d)
            }
        }
    }

    fn list<T: FromStr>(&mut self, key: &str, flag: Option<String>, default: Option<&str>) -> Result<Vec<T>> {
        let raw = match self.raw(key, flag) {
            Some(v) => v,
            None => {
                let d = default.ok_or_else(|| LidError::InvalidArgument(format!("missing required --{key}")))?;
                self.resolved.push((key.to_string(), d.to_string()));
                d.to_string()
            }
        };
        raw.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| LidError::InvalidArgument(format!("invalid item '{t}' in --{key}")))
            })
            .collect()
    }

    fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let s = flag.map(|p| p.display().to_string());
        self.get::<String>(key, s, None).map(PathBuf::from)
    }

    fn describe(&self, command: &str) -> String {
        let mut s = format!("# lidkit {command}");
        for (k, v) in &self.resolved {
            let _ = write!(s, " {k}={v}");
        }
        s
    }
}

fn parse_kinds(list: Vec<String>) -> Result<Vec<FeatureKind>> {
    list.iter().map(|k| k.parse()).collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut st = Settings::load(cli.config.as_deref())?;
    let seed: u64 = st.get("seed", cli.seed, Some(0))?;
    let workers: usize = st.get("workers", cli.workers, Some(rayon::current_num_threads()))?;
    if workers == 0 {
        return Err(LidError::InvalidArgument("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LidError::InvalidArgument(e.to_string()))?;
    match cli.command {
        Command::Extract(a) => {
            let kind: FeatureKind = st.get("feat", a.feat.map(|f| f.to_string()), None::<String>)?.parse()?;
            let rate: u32 = st.get("rate", a.rate, Some(crate::CANONICAL_RATE))?;
            eprintln!("{}", st.describe("extract"));
            let cfg = FeatureConfig { sample_rate: rate, ..FeatureConfig::default() };
            let w = harness::prepare(&audio_io::read_wav(&a.wav)?, rate, None)?;
            let fm = Pipeline::new(kind, &cfg)?.extract(&w)?;
            match a.out {
                Some(p) => fm.write_csv(&cfg, std::io::BufWriter::new(std::fs::File::create(p)?))?,
                None => fm.write_csv(&cfg, std::io::stdout().lock())?,
            }
        }
        Command::Synth(a) => {
            let cfg = SynthConfig {
                n_languages: st.get("languages", a.languages, Some(4))?,
                n_speakers: st.get("speakers", a.speakers, Some(7))?,
                utterance_seconds: st.get("seconds", a.seconds, Some(60.0))?,
                seed,
                sample_rate: crate::CANONICAL_RATE,
            };
            let out = st.path("out", a.out)?;
            eprintln!("{}", st.describe("synth"));
            let manifest = pool.install(|| synth_corpus(&out, &cfg))?;
            println!("wrote {} utterances and {}", manifest.entries.len(), out.join("manifest.csv").display());
        }
        Command::Train(a) => {
            let backend: Backend = st.get::<String>("backend", a.backend, Some("gmm".into()))?.parse()?;
            let kinds = parse_kinds(st.list("feat", a.feat, Some("mfcc,bfcc,plp,rplp"))?)?;
            let sizes: Vec<usize> = match backend {
                Backend::Gmm => st.list("mixtures", a.mixtures, Some("2,4,8,16"))?,
                Backend::VqDtw => vec![st.get("codebook", a.codebook, Some(crate::vq_dtw::DEFAULT_CODEBOOK_SIZE))?],
            };
            let rate: u32 = st.get("rate", a.rate, Some(crate::CANONICAL_RATE))?;
            let manifest_path = st.path("manifest", a.manifest)?;
            let out = st.path("out", a.out)?;
            eprintln!("{}", st.describe("train"));
            let corpus = load_manifest(&manifest_path)?;
            std::fs::create_dir_all(&out)?;
            let mut params = TrainParams::for_backend(backend, sizes[0]);
            params.features.sample_rate = rate;
            if backend == Backend::VqDtw {
                params.utterance_codebook = sizes[0];
            }
            for kind in kinds {
                let sets = pool.install(|| harness::train_many(&corpus, kind, backend, &sizes, &params, seed))?;
                for ms in sets {
                    let path = out.join(ms.file_name());
                    save_model_set(&ms, &path)?;
                    println!("{}", path.display());
                }
            }
        }
        Command::Identify(a) => {
            let model = st.path("model", a.model)?;
            eprintln!("{}", st.describe("identify"));
            let ms = load_model_set(&model)?;
            let w = audio_io::read_wav(&a.wav)?;
            let ranked = pool.install(|| ms.identify(&w))?;
            let mut out = String::new();
            for (i, (lang, score)) in ranked.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{:.6}", i + 1, lang, score);
            }
            std::io::stdout().lock().write_all(out.as_bytes())?;
        }
        Command::Evaluate(a) => {
            let manifest_path = st.path("manifest", a.manifest)?;
            let models: String = st.get("models", a.models, None)?;
            let segments: Vec<f64> = st.list("segments", a.segments, Some("2,4,10"))?;
            let out = st.path("out", a.out)?;
            eprintln!("{}", st.describe("evaluate"));
            let corpus = load_manifest(&manifest_path)?;
            let sets = load_model_sets(&models)?;
            let report = pool.install(|| evaluate(&corpus, &sets, &segments))?;
            report.write_dir(&out)?;
            print!("{}", report.summary());
            let table = report.table_csv();
            if table.lines().count() > 1 {
                print!("\n{table}");
            }
        }
    }
    Ok(())
}

/// A directory (every `*.lidkit` inside) or a comma-separated file list,
/// ordered by backend, feature kind and model size.
fn load_model_sets(spec: &str) -> Result<Vec<ModelSet>> {
    let path = Path::new(spec);
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "lidkit"))
            .collect();
        v.sort();
        v
    } else {
        spec.split(',').map(|s| PathBuf::from(s.trim())).collect()
    };
    if files.is_empty() {
        return Err(LidError::MissingFile(path.to_path_buf()));
    }
    let mut sets = files.iter().map(load_model_set).collect::<Result<Vec<_>>>()?;
    sets.sort_by_key(|m| (m.backend(), m.kind, m.model_size()));
    Ok(sets)
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e @ LidError::InvalidArgument(_)) => {
            eprintln!("error: {e}");
            eprintln!("usage: lidkit [--config FILE] [--workers N] [--seed S] <extract|synth|train|identify|evaluate> ...");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
