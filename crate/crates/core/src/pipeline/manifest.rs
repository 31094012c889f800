//! Dataset manifests and ingestion.
//!
//! A manifest is UTF-8 text with one tab-separated record per line. Blank
//! lines and lines starting with `#` are ignored. Relative paths resolve
//! against the manifest's directory.
//!
//! ```text
//! genres  Jazz    Pop
//! text    Jazz    emb/jazz_text.dgfm
//! train   Jazz    motion/a.dgfm   audio:music/a.wav   w2c:emb/a.dgfm
//! test    Pop     motion/b.dgfm   stft:feat/b.dgfm    stub:17
//! ```
//!
//! `genres` declares the vocabulary (exactly once). `text` lines supply a
//! genre's text embedding; genres without one use the stub embedding of
//! their prompt.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::audio::{prepare, read_wav, stft_features, STFT_BINS};
use crate::conditioning::{
    build_prompt, load_audio_embedding, load_genre_embedding, stub_embedding, stub_genre_embedding,
};
use crate::diffusion::NormStats;
use crate::error::{Error, Result};
use crate::format::{load_tensor, save_container};
use crate::motion::MotionSequence;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MusicSource {
    Audio(PathBuf),
    Stft(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum EmbedSource {
    File(PathBuf),
    Stub(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub line: usize,
    pub split: Split,
    pub genre: String,
    pub motion: PathBuf,
    pub music: MusicSource,
    pub w2c: EmbedSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub genres: Vec<String>,
    pub text: BTreeMap<String, PathBuf>,
    pub records: Vec<ManifestRecord>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut diags = Vec::new();
        let mut genres: Option<Vec<String>> = None;
        let mut text_paths = BTreeMap::new();
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
            match fields[0] {
                "genres" => {
                    if genres.is_some() {
                        diags.push(format!("line {line}: vocabulary declared twice"));
                    }
                    let list: Vec<String> = fields[1..].iter().filter(|s| !s.is_empty()).map(|s| s.to_string()).collect();
                    if list.is_empty() {
                        diags.push(format!("line {line}: empty genre vocabulary"));
                    }
                    genres = Some(list);
                }
                "text" => {
                    if fields.len() != 3 {
                        diags.push(format!("line {line}: expected `text<TAB>genre<TAB>path`"));
                    } else {
                        text_paths.insert(fields[1].to_string(), resolve(base, fields[2]));
                    }
                }
                "train" | "test" => {
                    if fields.len() != 5 {
                        diags.push(format!("line {line}: expected 5 tab-separated fields, got {}", fields.len()));
                        continue;
                    }
                    let music = match fields[3].split_once(':') {
                        Some(("audio", p)) => MusicSource::Audio(resolve(base, p)),
                        Some(("stft", p)) => MusicSource::Stft(resolve(base, p)),
                        _ => {
                            diags.push(format!("line {line}: music source must be `audio:PATH` or `stft:PATH`"));
                            continue;
                        }
                    };
                    let w2c = match fields[4].split_once(':') {
                        Some(("w2c", p)) => EmbedSource::File(resolve(base, p)),
                        Some(("stub", s)) => match s.parse() {
                            Ok(seed) => EmbedSource::Stub(seed),
                            Err(_) => {
                                diags.push(format!("line {line}: bad stub seed `{s}`"));
                                continue;
                            }
                        },
                        _ => {
                            diags.push(format!("line {line}: embedding source must be `w2c:PATH` or `stub:SEED`"));
                            continue;
                        }
                    };
                    records.push(ManifestRecord {
                        line,
                        split: if fields[0] == "train" { Split::Train } else { Split::Test },
                        genre: fields[1].to_string(),
                        motion: resolve(base, fields[2]),
                        music,
                        w2c,
                    });
                }
                other => diags.push(format!("line {line}: unknown record kind `{other}`")),
            }
        }
        let genres = genres.unwrap_or_else(|| {
            diags.push("no `genres` line declaring the vocabulary".into());
            Vec::new()
        });
        for r in &records {
            if !genres.contains(&r.genre) {
                diags.push(format!("line {}: genre `{}` is not in the vocabulary", r.line, r.genre));
            }
        }
        for g in text_paths.keys() {
            if !genres.contains(g) {
                diags.push(format!("text embedding for undeclared genre `{g}`"));
            }
        }
        if !diags.is_empty() {
            return Err(Error::Ingest(diags));
        }
        Ok(Self {
            genres,
            text: text_paths,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_text(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// One validated record with its features loaded.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub split: Split,
    pub genre: String,
    /// Raw (unnormalized) motion.
    pub motion: MotionSequence,
    pub stft: Tensor,
    pub w2c: Tensor,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub genres: Vec<String>,
    /// Text embedding per genre.
    pub text: BTreeMap<String, Tensor>,
    pub samples: Vec<Sample>,
    /// Statistics of the train split.
    pub norm: NormStats,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.split == Split::Train)
    }

    /// Writes the normalization statistics as a container.
    pub fn save_norm(&self, path: &Path) -> Result<()> {
        save_container(
            path,
            &[
                ("norm.mean".to_string(), self.norm.mean.clone()),
                ("norm.std".to_string(), self.norm.std.clone()),
            ],
        )
    }
}

fn load_record(r: &ManifestRecord) -> std::result::Result<Sample, String> {
    let here = |p: &Path, e: Error| format!("line {}: {}: {e}", r.line, p.display());
    let motion = load_tensor(&r.motion)
        .and_then(MotionSequence::new)
        .map_err(|e| here(&r.motion, e))?;
    let k = motion.len();
    let (stft, music_path) = match &r.music {
        MusicSource::Audio(p) => {
            let clip = read_wav(p).and_then(|c| prepare(&c)).map_err(|e| here(p, e))?;
            (stft_features(&clip).map_err(|e| here(p, e))?.frames, p)
        }
        MusicSource::Stft(p) => {
            let t = load_tensor(p).map_err(|e| here(p, e))?;
            if t.rank() != 2 || t.cols() != STFT_BINS {
                return Err(here(
                    p,
                    Error::Shape {
                        op: "stft features",
                        lhs: t.shape().to_vec(),
                        rhs: vec![k, STFT_BINS],
                    },
                ));
            }
            (t, p)
        }
    };
    if stft.rows() != k {
        return Err(here(music_path, Error::Alignment { expected: k, got: stft.rows() }));
    }
    let w2c = match &r.w2c {
        EmbedSource::File(p) => {
            let e = load_audio_embedding(p).map_err(|e| here(p, e))?;
            if e.len() != k {
                return Err(here(p, Error::Alignment { expected: k, got: e.len() }));
            }
            e.frames
        }
        EmbedSource::Stub(seed) => stub_embedding(*seed, k).map_err(|e| here(&r.motion, e))?.frames,
    };
    let name = r
        .motion
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Sample {
        name,
        split: r.split,
        genre: r.genre.clone(),
        motion,
        stft,
        w2c,
    })
}

/// Loads and validates every record. Any failure aborts the whole ingest
/// with one diagnostic per offending record.
pub fn ingest(manifest: &Manifest) -> Result<Dataset> {
    let mut diags = Vec::new();
    let mut samples = Vec::new();
    for r in &manifest.records {
        match load_record(r) {
            Ok(s) => samples.push(s),
            Err(d) => diags.push(d),
        }
    }
    let mut text = BTreeMap::new();
    for g in &manifest.genres {
        let v = match manifest.text.get(g) {
            Some(p) => load_genre_embedding(p).map_err(|e| format!("{}: {e}", p.display())),
            None => build_prompt(g)
                .and_then(|p| stub_genre_embedding(&p))
                .map_err(|e| format!("genre `{g}`: {e}")),
        };
        match v {
            Ok(v) => {
                text.insert(g.clone(), v.vector);
            }
            Err(d) => diags.push(d),
        }
    }
    if !manifest.records.iter().any(|r| r.split == Split::Train) {
        diags.push("no train records".into());
    }
    if !diags.is_empty() {
        return Err(Error::Ingest(diags));
    }
    let train: Vec<&Tensor> = samples
        .iter()
        .filter(|s| s.split == Split::Train)
        .map(|s| s.motion.frames())
        .collect();
    let norm = NormStats::from_sequences(&train)?;
    Ok(Dataset {
        genres: manifest.genres.clone(),
        text,
        samples,
        norm,
    })
}
