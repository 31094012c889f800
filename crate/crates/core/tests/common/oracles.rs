//! Independent reference implementations used to check the library.

use dgfm::motion::{SkeletonDef, ROT_OFFSET, TRANS_OFFSET};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gram-Schmidt decode of a 6D rotation into a column-major matrix.
pub fn decode6d(r: &[f64]) -> Matrix3<f64> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let b1 = a1.normalize();
    let b2 = (a2 - b1 * b1.dot(&a2)).normalize();
    let b3 = b1.cross(&b2);
    Matrix3::from_columns(&[b1, b2, b3])
}

/// Global rotation and position of joint `j` by walking up to the root.
pub fn naive_global(j: usize, row: &[f64], skel: &SkeletonDef) -> (Matrix3<f64>, Vector3<f64>) {
    let local = decode6d(&row[ROT_OFFSET + 6 * j..ROT_OFFSET + 6 * j + 6]);
    match skel.parents[j] {
        None => (
            local,
            Vector3::new(row[TRANS_OFFSET], row[TRANS_OFFSET + 1], row[TRANS_OFFSET + 2]),
        ),
        Some(p) => {
            let (rp, pp) = naive_global(p, row, skel);
            let o = skel.offsets[j];
            (rp * local, pp + rp * Vector3::new(o[0], o[1], o[2]))
        }
    }
}

pub fn random_factor(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            0.5 + rng.gen::<f64>()
        } else if j < i {
            0.4 * gauss(rng)
        } else {
            0.0
        }
    })
}

/// Square root of a matrix with positive real spectrum by the Denman-Beavers
/// iteration.
pub fn denman_beavers(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut y = m.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let ny = (&y + zi) * 0.5;
        let nz = (&z + yi) * 0.5;
        let done = (&ny - &y).norm() < 1e-14 * ny.norm();
        y = ny;
        z = nz;
        if done {
            break;
        }
    }
    y
}

/// Frechet distance between two Gaussians.
pub fn closed_form_fid(ma: &DVector<f64>, ca: &DMatrix<f64>, mb: &DVector<f64>, cb: &DMatrix<f64>) -> f64 {
    (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * denman_beavers(&(ca * cb)).trace()
}

/// `n` draws of `mean + l z` with standard normal `z`.
pub fn draw(rng: &mut ChaCha8Rng, mean: &DVector<f64>, l: &DMatrix<f64>, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(mean.len(), |_, _| gauss(rng));
            (mean + l * z).iter().copied().collect()
        })
        .collect()
}

/// `ln(1 + |X_k|)` for `k = 0..=n_fft/2` of every frame: frames centered on
/// multiples of `hop`, reflect padding, periodic Hann window, O(n^2) DFT.
pub fn naive_stft_features(x: &[f64], n_fft: usize, hop: usize, frames: usize) -> Vec<Vec<f64>> {
    let n = x.len() as i64;
    let at = |i: i64| {
        let p = 2 * (n - 1);
        let m = i.rem_euclid(p);
        x[if m < n { m } else { p - m } as usize]
    };
    let tau = 2.0 * std::f64::consts::PI;
    (0..frames)
        .map(|t| {
            let frame: Vec<f64> = (0..n_fft)
                .map(|j| {
                    let w = 0.5 - 0.5 * (tau * j as f64 / n_fft as f64).cos();
                    w * at((t * hop + j) as i64 - (n_fft / 2) as i64)
                })
                .collect();
            (0..=n_fft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (j, v) in frame.iter().enumerate() {
                        let ang = -tau * ((k * j) % n_fft) as f64 / n_fft as f64;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    (re * re + im * im).sqrt().ln_1p()
                })
                .collect()
        })
        .collect()
}
