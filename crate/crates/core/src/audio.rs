//! Audio input, segmentation, STFT features and onset-based beat detection.
//!
//! Features are computed at an analysis rate of 15360 Hz with a 512-sample
//! hop, which yields exactly 30 frames per second, one per motion frame.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const ANALYSIS_RATE: u32 = 15_360;
pub const N_FFT: usize = 384;
pub const HOP: usize = 512;
pub const FEATURE_FPS: usize = 30;
pub const STFT_BINS: usize = N_FFT / 2 + 1;

const RESAMPLE_HALF_TAPS: i64 = 32;
const KAISER_BETA: f64 = 8.0;

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Data(format!("non-finite audio sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples `start..start + len`, as a new clip.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.samples.len() {
            return Err(Error::TooShort {
                needed: start + len,
                got: self.samples.len(),
            });
        }
        Self::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }
}

/// Reads a mono WAV file (16-bit PCM or 32-bit float).
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other.into(),
    })?;
    let wav_spec = reader.spec();
    if wav_spec.channels != 1 {
        return Err(Error::Validation(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            wav_spec.channels
        )));
    }
    let samples = match (wav_spec.sample_format, wav_spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported WAV encoding {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    AudioClip::new(samples, wav_spec.sample_rate)
}

/// Writes a clip as 32-bit float mono WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let wav_spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, wav_spec)?;
    for &s in &clip.samples {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Kaiser-windowed sinc resampling (64 taps).
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Validation("target rate must be positive".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let cutoff = (1.0 / ratio).min(1.0);
    let n_in = clip.samples.len() as i64;
    let n_out = (clip.samples.len() as f64 / ratio).round() as usize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let half = RESAMPLE_HALF_TAPS as f64;
    let out = (0..n_out)
        .map(|m| {
            let x = m as f64 * ratio;
            let base = x.floor() as i64;
            let mut acc = 0.0;
            for k in (base - RESAMPLE_HALF_TAPS + 1)..=(base + RESAMPLE_HALF_TAPS) {
                if k < 0 || k >= n_in {
                    continue;
                }
                let d = x - k as f64;
                let u = d / half;
                if u.abs() > 1.0 {
                    continue;
                }
                let w = bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / i0_beta;
                acc += clip.samples[k as usize] * cutoff * sinc(cutoff * d) * w;
            }
            acc
        })
        .collect();
    AudioClip::new(out, target_rate)
}

/// Splits a clip into contiguous segments of `seconds`, dropping the remainder.
pub fn segment_audio(clip: &AudioClip, seconds: f64) -> Result<Vec<AudioClip>> {
    if !(seconds > 0.0) {
        return Err(Error::Validation(format!("segment length {seconds} must be positive")));
    }
    let len = (seconds * clip.sample_rate as f64).round() as usize;
    if len == 0 || clip.samples.len() < len {
        return Err(Error::TooShort {
            needed: len,
            got: clip.samples.len(),
        });
    }
    (0..clip.samples.len() / len)
        .map(|i| clip.slice(i * len, len))
        .collect()
}

/// `T x 193` map of `log1p` STFT magnitudes at 30 frames per second.
#[derive(Clone, Debug, PartialEq)]
pub struct StftFeatureMap {
    pub frames: Tensor,
    pub frame_rate: usize,
}

impl StftFeatureMap {
    pub fn new(frames: Tensor) -> Result<Self> {
        if frames.rank() != 2 || frames.cols() != STFT_BINS {
            return Err(Error::Shape {
                op: "stft features",
                lhs: frames.shape().to_vec(),
                rhs: vec![STFT_BINS],
            });
        }
        if frames.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Data("STFT features must be finite and non-negative".into()));
        }
        Ok(Self {
            frames,
            frame_rate: FEATURE_FPS,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of feature frames for a clip: `round(duration * 30)`.
pub fn frame_count(clip: &AudioClip) -> usize {
    (clip.duration() * FEATURE_FPS as f64).round() as usize
}

/// Index into a reflect-padded signal (edge sample not repeated).
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    if m < n as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Windowed frame `t`, centered at sample `t * HOP`.
pub fn frame_samples(samples: &[f64], t: usize, window: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let start = (t * HOP) as i64 - (N_FFT / 2) as i64;
    (0..N_FFT)
        .map(|j| samples[reflect(start + j as i64, n)] * window[j])
        .collect()
}

fn check_rate(clip: &AudioClip) -> Result<()> {
    if clip.sample_rate != ANALYSIS_RATE {
        return Err(Error::SampleRate {
            expected: ANALYSIS_RATE,
            got: clip.sample_rate,
        });
    }
    if clip.samples.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Ok(())
}

/// Raw STFT magnitudes, `T x 193`.
pub fn stft_magnitudes(clip: &AudioClip) -> Result<Tensor> {
    check_rate(clip)?;
    let frames = frame_count(clip);
    if frames == 0 {
        return Err(Error::TooShort {
            needed: HOP / 2,
            got: clip.samples.len(),
        });
    }
    let window = hann_window(N_FFT);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut out = Vec::with_capacity(frames * STFT_BINS);
    for t in 0..frames {
        for (b, s) in buf.iter_mut().zip(frame_samples(&clip.samples, t, &window)) {
            *b = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        out.extend(buf[..STFT_BINS].iter().map(|c| c.norm()));
    }
    Tensor::new(vec![frames, STFT_BINS], out)
}

/// The 193-dim hand-crafted feature map. The clip must already be at
/// [`ANALYSIS_RATE`]; see [`prepare`].
pub fn stft_features(clip: &AudioClip) -> Result<StftFeatureMap> {
    StftFeatureMap::new(stft_magnitudes(clip)?.map(f64::ln_1p))
}

/// Resamples to the analysis rate when needed.
pub fn prepare(clip: &AudioClip) -> Result<AudioClip> {
    resample(clip, ANALYSIS_RATE)
}

/// Strictly increasing beat times in seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BeatTimes {
    times: Vec<f64>,
}

impl BeatTimes {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Data("beat times must be finite and non-negative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("beat times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn from_frames(frames: &[usize], fps: f64) -> Result<Self> {
        Self::new(frames.iter().map(|&f| f as f64 / fps).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Centered moving average; the window shrinks at the edges.
pub fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let h = width / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Half-wave rectified spectral flux of the feature map, one value per frame.
pub fn onset_envelope(features: &StftFeatureMap) -> Vec<f64> {
    let f = &features.frames;
    let mut env = vec![0.0; f.rows()];
    for t in 1..f.rows() {
        env[t] = f
            .row(t)
            .iter()
            .zip(f.row(t - 1))
            .map(|(a, b)| (a - b).max(0.0))
            .sum();
    }
    env
}

/// Centers of plateaus that are strictly above (or below, with `minima`)
/// both neighbouring values. Runs touching either end are skipped.
pub(crate) fn plateau_extrema(x: &[f64], minima: bool) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < x.len() {
        let mut j = i;
        while j + 1 < x.len() && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 < x.len() {
            let (l, r) = (x[i - 1], x[j + 1]);
            let hit = if minima {
                l > x[i] && r > x[i]
            } else {
                l < x[i] && r < x[i]
            };
            if hit {
                out.push((i + j) / 2);
            }
        }
        i = j + 1;
    }
    out
}

/// Music beats: peaks of the smoothed onset envelope above mean + 1 std,
/// at least 10 frames apart.
pub fn detect_beats(clip: &AudioClip) -> Result<BeatTimes> {
    let clip = prepare(clip)?;
    if clip.duration() < 1.0 {
        return Err(Error::TooShort {
            needed: ANALYSIS_RATE as usize,
            got: clip.samples.len(),
        });
    }
    let features = stft_features(&clip)?;
    let env = moving_average(&onset_envelope(&features), 5);
    BeatTimes::from_frames(&pick_peaks(&env, 10), FEATURE_FPS as f64)
}

fn pick_peaks(env: &[f64], min_gap: usize) -> Vec<usize> {
    let n = env.len() as f64;
    let mean = env.iter().sum::<f64>() / n;
    let std = (env.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + std;
    let mut cands: Vec<usize> = plateau_extrema(env, false)
        .into_iter()
        .filter(|&i| env[i] > threshold)
        .collect();
    cands.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cands {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_gap) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}
