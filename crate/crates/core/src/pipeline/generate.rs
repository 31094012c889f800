use std::path::PathBuf;

use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::{mix_seed, thread_pool};
use crate::audio::{prepare, read_wav, stft_features};
use crate::conditioning::{load_audio_embedding, stub_embedding};
use crate::diffusion::{make_schedule, sample_loop, ModelPredictor, CLIP_BOUND};
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, MOTION_FPS, POSE_DIM};
use crate::numerics::Tensor;

/// Frames shared by consecutive segments and blended linearly.
pub const CROSSFADE_FRAMES: usize = 15;

#[derive(Clone, Debug, PartialEq)]
pub enum AudioEmbeddings {
    /// One `T x 512` file covering the whole track.
    File(PathBuf),
    /// Segment `i` uses the stub embedding of `seed + i`.
    Stub(u64),
}

#[derive(Clone, Debug)]
pub struct GenerationRequest {
    pub audio: PathBuf,
    pub genre: String,
    pub seconds: f64,
    pub seed: u64,
    pub embeddings: AudioEmbeddings,
}

/// Start frames of the windows covering `total` frames: consecutive windows
/// overlap by at least `overlap` frames and the last one ends at `total`.
pub fn segment_starts(total: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if total < window {
        return Err(Error::TooShort {
            needed: window,
            got: total,
        });
    }
    if overlap >= window {
        return Err(Error::Validation(format!("overlap {overlap} must be below window {window}")));
    }
    let stride = window - overlap;
    let mut starts = vec![0];
    while starts[starts.len() - 1] + window < total {
        starts.push((starts[starts.len() - 1] + stride).min(total - window));
    }
    Ok(starts)
}

/// Places `segments` at `starts` in a `total`-frame sequence. Where two
/// segments overlap, the earlier one is kept up to the last `fade` frames of
/// the overlap, across which it blends linearly into the later one.
pub fn crossfade(segments: &[Tensor], starts: &[usize], total: usize, fade: usize) -> Result<Tensor> {
    if segments.len() != starts.len() || segments.is_empty() {
        return Err(Error::Validation("one start per segment required".into()));
    }
    let cols = segments[0].cols();
    let mut out = Tensor::zeros(&[total, cols]);
    let mut end = 0;
    for (seg, &s) in segments.iter().zip(starts) {
        if s > end || s + seg.rows() > total {
            return Err(Error::Validation(format!("segment at {s} leaves a gap or overruns {total} frames")));
        }
        let fade_start = end.saturating_sub(fade).max(s);
        let span = (end - fade_start) as f64;
        for r in 0..seg.rows() {
            let f = s + r;
            let row = seg.row(r);
            if f >= end {
                out.row_mut(f).copy_from_slice(row);
            } else if f >= fade_start {
                let w = (f - fade_start + 1) as f64 / (span + 1.0);
                for (o, v) in out.row_mut(f).iter_mut().zip(row) {
                    *o = (1.0 - w) * *o + w * v;
                }
            }
        }
        end = s + seg.rows();
    }
    if end != total {
        return Err(Error::Validation(format!("segments cover {end} of {total} frames")));
    }
    Ok(out)
}

/// Long-form generation: overlapping 4 s windows over the track, each
/// sampled with its own music features and the shared genre embedding, then
/// crossfaded.
pub fn generate(req: &GenerationRequest, ck: &Checkpoint) -> Result<MotionSequence> {
    let cfg = &ck.config;
    let window = cfg.window;
    let total = (req.seconds * MOTION_FPS as f64).round() as usize;
    if total < window {
        return Err(Error::Validation(format!(
            "requested {} s is shorter than one {window}-frame segment",
            req.seconds
        )));
    }
    let text = ck.genres.get(&req.genre).ok_or_else(|| {
        Error::Validation(format!(
            "genre `{}` not in vocabulary [{}]",
            req.genre,
            ck.genres.keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let clip = prepare(&read_wav(&req.audio)?)?;
    let stft = stft_features(&clip)?.frames;
    if stft.rows() < total {
        return Err(Error::TooShort {
            needed: total,
            got: stft.rows(),
        });
    }
    let w2c_full = match &req.embeddings {
        AudioEmbeddings::File(p) => {
            let e = load_audio_embedding(p).map_err(|e| match e {
                Error::Io(io) => Error::Provider(format!("{}: {io}", p.display())),
                other => other,
            })?;
            if e.len() != stft.rows() {
                return Err(Error::Alignment {
                    expected: stft.rows(),
                    got: e.len(),
                });
            }
            Some(e.frames)
        }
        AudioEmbeddings::Stub(_) => None,
    };
    let starts = segment_starts(total, window, CROSSFADE_FRAMES)?;
    let schedule = make_schedule(cfg.diffusion_steps)?;
    let sample_segment = |(i, &s): (usize, &usize)| -> Result<Tensor> {
        let w2c = match (&req.embeddings, &w2c_full) {
            (AudioEmbeddings::Stub(seed), _) => stub_embedding(seed.wrapping_add(i as u64), window)?.frames,
            (_, Some(full)) => full.slice_rows(s, window)?,
            _ => unreachable!("file embeddings are loaded above"),
        };
        let st = stft.slice_rows(s, window)?;
        let predictor = ModelPredictor::new(&cfg.model, &ck.params, &w2c, &st, text)?;
        let x = sample_loop(
            &predictor,
            &schedule,
            window,
            cfg.guidance,
            CLIP_BOUND,
            mix_seed(req.seed, i as u64),
        )?;
        ck.norm.denormalize(&x)
    };
    let segments = thread_pool()?.install(|| {
        starts
            .par_iter()
            .enumerate()
            .map(sample_segment)
            .collect::<Result<Vec<_>>>()
    })?;
    let joined = crossfade(&segments, &starts, total, CROSSFADE_FRAMES)?;
    debug_assert_eq!(joined.cols(), POSE_DIM);
    MotionSequence::new(joined)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_seconds_need_overlapping_windows() {
        assert_eq!(segment_starts(240, 120, 15).unwrap(), vec![0, 105, 120]);
        assert_eq!(segment_starts(120, 120, 15).unwrap(), vec![0]);
        assert_eq!(segment_starts(225, 120, 15).unwrap(), vec![0, 105]);
        assert!(segment_starts(100, 120, 15).is_err());
    }

    #[test]
    fn crossfade_blends_only_the_last_overlap_frames() {
        let a = Tensor::full(&[10, 2], 0.0);
        let b = Tensor::full(&[10, 2], 1.0);
        let out = crossfade(&[a, b], &[0, 6], 16, 3).unwrap();
        let col: Vec<f64> = (0..16).map(|f| out.at(f, 0)).collect();
        // overlap is frames 6..10; the fade covers 7..10
        assert_eq!(&col[..7], &[0.0; 7]);
        assert_eq!(&col[7..10], &[0.25, 0.5, 0.75]);
        assert_eq!(&col[10..], &[1.0; 6]);
    }

    #[test]
    fn crossfade_rejects_gaps() {
        let a = Tensor::zeros(&[4, 1]);
        assert!(crossfade(&[a.clone(), a], &[0, 5], 9, 2).is_err());
    }
}
