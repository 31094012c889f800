//! Dataset ingestion, training, long-form generation and evaluation.

mod checkpoint;
mod config;
mod evaluate;
mod generate;
mod manifest;
mod train;

use std::path::Path;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use evaluate::{evaluate_dirs, EvalInputs};
pub use generate::{crossfade, generate, segment_starts, AudioEmbeddings, GenerationRequest, CROSSFADE_FRAMES};
pub use manifest::{ingest, Dataset, EmbedSource, Manifest, ManifestRecord, MusicSource, Sample, Split};
pub use train::{train, training_windows, TrainSummary, LOG_HEADER};

use crate::audio::{prepare, read_wav, stft_features};
use crate::error::{Error, Result};
use crate::format::save_tensor;

/// Derives an independent seed from a base seed and a stream index
/// (splitmix64 finalizer over the pair).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Worker pool sized by `DGFM_THREADS`, or the number of logical cores.
/// Results never depend on the pool size.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var("DGFM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("DGFM_THREADS must be a number, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Writes the STFT feature map of a WAV file as a tensor.
pub fn export_features(audio: &Path, out: &Path) -> Result<usize> {
    let feats = stft_features(&prepare(&read_wav(audio)?)?)?;
    save_tensor(out, &feats.frames)?;
    Ok(feats.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_seeds_differ_per_stream() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|i| mix_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(mix_seed(1, 2), mix_seed(2, 1));
        assert_eq!(mix_seed(3, 4), mix_seed(3, 4));
    }
}
