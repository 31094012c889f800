use std::path::{Path, PathBuf};

use crate::audio::{detect_beats, read_wav};
use crate::error::{Error, Result};
use crate::format::load_tensor;
use crate::metrics::{evaluate, EvalReport};
use crate::motion::{fk, MotionSequence, SkeletonDef};

#[derive(Clone, Debug)]
pub struct EvalInputs {
    /// Generated motions, `<stem>.dgfm`.
    pub generated: PathBuf,
    /// Reference motions, `<stem>.dgfm`.
    pub reference: PathBuf,
    /// Music for the generated motions, `<stem>.wav`.
    pub audio: PathBuf,
}

fn motion_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "dgfm") {
            if let Some(stem) = p.file_stem() {
                out.push((stem.to_string_lossy().into_owned(), p));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Computes the report for two directories of motions. Every generated
/// motion must have a WAV of the same stem in the audio directory; all
/// missing pairs are listed in one error.
pub fn evaluate_dirs(inputs: &EvalInputs, skel: &SkeletonDef) -> Result<EvalReport> {
    let generated = motion_files(&inputs.generated)?;
    let reference = motion_files(&inputs.reference)?;
    let missing: Vec<String> = generated
        .iter()
        .filter(|(stem, _)| !inputs.audio.join(format!("{stem}.wav")).is_file())
        .map(|(stem, p)| format!("{}: no {stem}.wav in {}", p.display(), inputs.audio.display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Pairing(missing));
    }
    let positions = |set: &[(String, PathBuf)]| {
        set.iter()
            .map(|(_, p)| {
                let m = MotionSequence::new(load_tensor(p)?)?;
                fk(&m, skel)
            })
            .collect::<Result<Vec<_>>>()
    };
    let gen_pos = positions(&generated)?;
    let ref_pos = positions(&reference)?;
    let beats = generated
        .iter()
        .map(|(stem, _)| detect_beats(&read_wav(&inputs.audio.join(format!("{stem}.wav")))?))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&gen_pos, &ref_pos, &beats, skel)
}
