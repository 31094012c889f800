//! Music and genre conditioning: prompt construction, embedding files and
//! stubs, and fusion of the audio embedding with STFT features into `C_M`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{StftFeatureMap, STFT_BINS};
use crate::error::{Error, Result};
use crate::format;
use crate::numerics::{linear, randn, Bound, Graph, ParamStore, Tensor, Var};

pub const EMBED_DIM: usize = 512;

const PROMPT_PREFIX: &str = "This is a ";
const PROMPT_SUFFIX: &str = " type of music.";

/// Expands a genre label into the text prompt fed to the text encoder.
pub fn build_prompt(genre: &str) -> Result<String> {
    if genre.trim().is_empty() {
        return Err(Error::Validation("genre label is empty".into()));
    }
    Ok(format!("{PROMPT_PREFIX}{genre}{PROMPT_SUFFIX}"))
}

/// Inverse of [`build_prompt`].
pub fn parse_prompt(prompt: &str) -> Option<&str> {
    prompt
        .strip_prefix(PROMPT_PREFIX)?
        .strip_suffix(PROMPT_SUFFIX)
        .filter(|g| !g.trim().is_empty())
}

/// Per-frame audio embedding, `T x 512`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipAudioEmbedding {
    pub frames: Tensor,
}

impl ClipAudioEmbedding {
    pub fn new(frames: Tensor) -> Result<Self> {
        if frames.rank() != 2 || frames.cols() != EMBED_DIM {
            return Err(Error::Shape {
                op: "audio embedding",
                lhs: frames.shape().to_vec(),
                rhs: vec![EMBED_DIM],
            });
        }
        check_finite(&frames, "audio embedding")?;
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        Self::new(self.frames.slice_rows(start, len)?)
    }
}

/// Text embedding of a genre prompt, 512 values.
#[derive(Clone, Debug, PartialEq)]
pub struct GenreEmbedding {
    pub vector: Tensor,
}

impl GenreEmbedding {
    pub fn new(vector: Tensor) -> Result<Self> {
        if vector.shape() != [EMBED_DIM] {
            return Err(Error::Shape {
                op: "genre embedding",
                lhs: vector.shape().to_vec(),
                rhs: vec![EMBED_DIM],
            });
        }
        check_finite(&vector, "genre embedding")?;
        Ok(Self { vector })
    }
}

/// The fused music conditioning map `C_M`, `T x 512`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedMusicFeatures {
    frames: Tensor,
}

impl FusedMusicFeatures {
    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    match t.data().iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Data(format!("{what}: non-finite value at index {i}"))),
        None => Ok(()),
    }
}

pub fn load_audio_embedding(path: &Path) -> Result<ClipAudioEmbedding> {
    ClipAudioEmbedding::new(format::load_tensor(path)?)
}

pub fn load_genre_embedding(path: &Path) -> Result<GenreEmbedding> {
    GenreEmbedding::new(format::load_tensor(path)?)
}

fn unit_rows(mut t: Tensor) -> Tensor {
    let c = t.cols();
    for row in t.data_mut().chunks_mut(c) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    t
}

/// Deterministic stand-in for a per-frame audio embedding: unit-norm
/// Gaussian rows drawn from `seed`.
pub fn stub_embedding(seed: u64, frames: usize) -> Result<ClipAudioEmbedding> {
    if frames == 0 {
        return Err(Error::Validation("stub embedding needs at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ClipAudioEmbedding::new(unit_rows(randn(&mut rng, &[frames, EMBED_DIM], 1.0)))
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Deterministic stand-in for the text embedding of a prompt.
pub fn stub_genre_embedding(prompt: &str) -> Result<GenreEmbedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt.as_bytes()));
    GenreEmbedding::new(unit_rows(randn(&mut rng, &[EMBED_DIM], 1.0)))
}

/// Where per-frame audio embeddings come from.
#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingProvider {
    File(std::path::PathBuf),
    Stub(u64),
}

impl EmbeddingProvider {
    /// Loads (or synthesizes) an embedding with exactly `frames` rows.
    pub fn audio_embedding(&self, frames: usize) -> Result<ClipAudioEmbedding> {
        let emb = match self {
            Self::File(p) => load_audio_embedding(p).map_err(|e| match e {
                Error::Io(io) => Error::Provider(format!("{}: {io}", p.display())),
                other => other,
            })?,
            Self::Stub(seed) => stub_embedding(*seed, frames)?,
        };
        if emb.len() != frames {
            return Err(Error::Alignment {
                expected: frames,
                got: emb.len(),
            });
        }
        Ok(emb)
    }
}

/// Adds the fusion parameters: a residual 512-512-512 adapter for the audio
/// embedding and a 193-to-512 projection for STFT features.
pub fn init_fusion_params(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let d = EMBED_DIM;
    let s = (1.0 / d as f64).sqrt();
    store.insert("fuse.adapter.w1", randn(rng, &[d, d], s));
    store.insert("fuse.adapter.b1", Tensor::zeros(&[d]));
    store.insert("fuse.adapter.w2", randn(rng, &[d, d], 0.1 * s));
    store.insert("fuse.adapter.b2", Tensor::zeros(&[d]));
    store.insert(
        "fuse.stft.w",
        randn(rng, &[STFT_BINS, d], (1.0 / STFT_BINS as f64).sqrt()),
    );
    store.insert("fuse.stft.b", Tensor::zeros(&[d]));
}

/// `adapter(w2c) + linear(stft)` on the graph. With `linear_adapter` the
/// adapter's hidden activation is the identity.
pub fn fuse_graph(
    g: &mut Graph,
    p: &Bound,
    w2c: Var,
    stft: Var,
    linear_adapter: bool,
) -> Result<Var> {
    let (tw, ts) = (g.shape(w2c)[0], g.shape(stft)[0]);
    if tw != ts {
        return Err(Error::Alignment {
            expected: tw,
            got: ts,
        });
    }
    let h = linear(g, w2c, p.get("fuse.adapter.w1")?, p.get("fuse.adapter.b1")?)?;
    let h = if linear_adapter { h } else { g.gelu(h)? };
    let h = linear(g, h, p.get("fuse.adapter.w2")?, p.get("fuse.adapter.b2")?)?;
    let adapted = g.add(w2c, h)?;
    let projected = linear(g, stft, p.get("fuse.stft.w")?, p.get("fuse.stft.b")?)?;
    g.add(adapted, projected)
}

/// Fuses outside of training.
pub fn fuse(
    w2c: &ClipAudioEmbedding,
    stft: &StftFeatureMap,
    params: &ParamStore,
) -> Result<FusedMusicFeatures> {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let a = g.constant(w2c.frames.clone());
    let s = g.constant(stft.frames.clone());
    let out = fuse_graph(&mut g, &p, a, s, false)?;
    Ok(FusedMusicFeatures {
        frames: g.value(out).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, GradCheckOptions};

    fn params(seed: u64) -> ParamStore {
        let mut p = ParamStore::new();
        init_fusion_params(&mut p, &mut ChaCha8Rng::seed_from_u64(seed));
        p
    }

    fn stft_rows(seed: u64, t: usize) -> StftFeatureMap {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        StftFeatureMap::new(randn(&mut r, &[t, STFT_BINS], 1.0).map(f64::abs)).unwrap()
    }

    #[test]
    fn prompts() {
        assert_eq!(build_prompt("Jazz").unwrap(), "This is a Jazz type of music.");
        assert_eq!(build_prompt("Breaking").unwrap(), "This is a Breaking type of music.");
        assert!(matches!(build_prompt(""), Err(Error::Validation(_))));
        for g in ["Jazz", "Hip Hop", "K-pop"] {
            assert_eq!(parse_prompt(&build_prompt(g).unwrap()), Some(g));
        }
        assert_eq!(parse_prompt("This is a  type of music."), None);
    }

    #[test]
    fn stubs_are_deterministic_unit_rows() {
        let a = stub_embedding(7, 4).unwrap();
        assert_eq!(a, stub_embedding(7, 4).unwrap());
        for r in 0..4 {
            let n: f64 = a.frames.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert_ne!(stub_embedding(1, 4).unwrap(), stub_embedding(2, 4).unwrap());
        assert!(stub_embedding(1, 0).is_err());
        assert_ne!(
            stub_genre_embedding("This is a Jazz type of music.").unwrap(),
            stub_genre_embedding("This is a Pop type of music.").unwrap()
        );
    }

    #[test]
    fn embedding_files_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.dgfm");
        let emb = stub_embedding(3, 120).unwrap();
        format::save_tensor(&good, &emb.frames).unwrap();
        let back = load_audio_embedding(&good).unwrap();
        assert_eq!(back.frames.shape(), &[120, 512]);
        assert!(back.frames.max_abs_diff(&emb.frames) < 1e-7);

        let narrow = dir.path().join("narrow.dgfm");
        format::save_tensor(&narrow, &Tensor::zeros(&[120, 256])).unwrap();
        assert!(matches!(load_audio_embedding(&narrow), Err(Error::Shape { .. })));

        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.dgfm");
        std::fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_audio_embedding(&cut), Err(Error::Format(_))));

        let nan = dir.path().join("nan.dgfm");
        format::save_tensor(&nan, &Tensor::full(&[512], f64::NAN)).unwrap();
        assert!(matches!(load_genre_embedding(&nan), Err(Error::Data(_))));

        let text = dir.path().join("text.dgfm");
        format::save_tensor(&text, &Tensor::zeros(&[512])).unwrap();
        assert!(load_genre_embedding(&text).is_ok());
        assert!(load_audio_embedding(&text).is_err());
    }

    #[test]
    fn provider_checks_length() {
        let p = EmbeddingProvider::Stub(4);
        assert_eq!(p.audio_embedding(10).unwrap().len(), 10);
        let missing = EmbeddingProvider::File("/nonexistent/x.dgfm".into());
        assert!(matches!(missing.audio_embedding(10), Err(Error::Provider(_))));
    }

    #[test]
    fn zero_paths_isolate_each_branch() {
        let mut p = params(1);
        let w2c = stub_embedding(5, 6).unwrap();
        let zero_stft = StftFeatureMap::new(Tensor::zeros(&[6, STFT_BINS])).unwrap();
        // bypass adapter: w2 = 0, b2 = 0 makes adapter(x) = x
        *p.get_mut("fuse.adapter.w2").unwrap() = Tensor::zeros(&[512, 512]);
        let out = fuse(&w2c, &zero_stft, &p).unwrap();
        assert!(out.frames().max_abs_diff(&w2c.frames) < 1e-15);

        let p = params(2);
        let zero_w2c = ClipAudioEmbedding::new(Tensor::zeros(&[6, 512])).unwrap();
        let stft = stft_rows(3, 6);
        let out = fuse(&zero_w2c, &stft, &p).unwrap();
        let expect = crate::numerics::matmul(&stft.frames, p.get("fuse.stft.w").unwrap()).unwrap();
        assert!(out.frames().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let p = params(1);
        let err = fuse(&stub_embedding(1, 5).unwrap(), &stft_rows(1, 6), &p);
        assert!(matches!(err, Err(Error::Alignment { .. })));
    }

    #[test]
    fn linear_fusion_decomposes_by_path() {
        let mut p = params(4);
        for b in ["fuse.adapter.b1", "fuse.adapter.b2", "fuse.stft.b"] {
            *p.get_mut(b).unwrap() = randn(&mut ChaCha8Rng::seed_from_u64(9), &[512], 0.1);
        }
        let eval = |a: &Tensor, s: &Tensor| {
            let mut g = Graph::new();
            let b = p.bind_frozen(&mut g);
            let (av, sv) = (g.constant(a.clone()), g.constant(s.clone()));
            let out = fuse_graph(&mut g, &b, av, sv, true).unwrap();
            g.value(out).clone()
        };
        let mut r = ChaCha8Rng::seed_from_u64(10);
        let a = randn(&mut r, &[3, 512], 1.0);
        let b = randn(&mut r, &[3, 512], 1.0);
        let s = randn(&mut r, &[3, STFT_BINS], 1.0);
        let z512 = Tensor::zeros(&[3, 512]);
        let zs = Tensor::zeros(&[3, STFT_BINS]);
        let ab = a.zip_map(&b, |x, y| x + y).unwrap();
        // fuse(a + b, s) = fuse(a, s) + fuse(b, 0) - fuse(0, 0)
        let lhs = eval(&ab, &s);
        let rhs = eval(&a, &s)
            .zip_map(&eval(&b, &zs), |x, y| x + y)
            .unwrap()
            .zip_map(&eval(&z512, &zs), |x, y| x - y)
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        // shrink the adapter so the check stays fast; shapes are what matter
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let p = params(5);
        let w2c = stub_embedding(6, 4).unwrap().frames;
        let stft = stft_rows(7, 4).frames;
        let proj = randn(&mut r, &[4, 512], 1.0);
        let f = |g: &mut Graph, b: &Bound| {
            let a = g.constant(w2c.clone());
            let s = g.constant(stft.clone());
            let out = fuse_graph(g, b, a, s, false)?;
            let pr = g.constant(proj.clone());
            let m = g.mul(out, pr)?;
            g.sum(m)
        };
        let rep = grad_check(
            f,
            &p,
            &GradCheckOptions {
                samples_per_tensor: 30,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-5, "{rep:?}");
    }
}
