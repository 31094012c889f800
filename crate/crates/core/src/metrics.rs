use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::audio::{moving_average, plateau_extrema, BeatTimes};
use crate::error::{Error, Result};
use crate::motion::{JointPositions, SkeletonDef, Vec3, MOTION_FPS};

/// Beat alignment kernel width in seconds (3 frames at 30 fps).
pub const BAS_SIGMA: f64 = 0.1;

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Per joint of `joints`: temporal mean of half the squared velocity and
/// temporal std of the speed, both from forward differences in m/s.
pub fn kinetic_features(pos: &JointPositions, joints: &[usize]) -> Result<Vec<f64>> {
    let k = pos.frames();
    if k < 2 {
        return Err(Error::InsufficientData(format!("kinetic features need 2 frames, got {k}")));
    }
    if let Some(&j) = joints.iter().find(|&&j| j >= pos.joints()) {
        return Err(Error::Validation(format!("joint {j} outside a {}-joint clip", pos.joints())));
    }
    let fps = MOTION_FPS as f64;
    let n = (k - 1) as f64;
    let mut out = Vec::with_capacity(2 * joints.len());
    for &j in joints {
        let speeds: Vec<f64> = (0..k - 1)
            .map(|f| norm(sub(pos.get(f + 1, j), pos.get(f, j))) * fps)
            .collect();
        let energy = speeds.iter().map(|s| 0.5 * s * s).sum::<f64>() / n;
        let mean = speeds.iter().sum::<f64>() / n;
        let var = speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        out.push(energy);
        out.push(var.sqrt());
    }
    Ok(out)
}

/// Gaussian fit of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn eig_tolerance(values: &DVector<f64>, rel: f64) -> f64 {
    rel * values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

impl FeatureDist {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(Error::Shape {
                op: "feature distribution",
                lhs: vec![d],
                rhs: vec![cov.len(), cov.first().map_or(0, Vec::len)],
            });
        }
        let cov = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        let dist = Self {
            mean: DVector::from_vec(mean),
            cov,
        };
        dist.validate()?;
        Ok(dist)
    }

    /// Sample mean and unbiased covariance of `rows`.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!("need 2 feature rows, got {n}")));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape {
                op: "feature rows",
                lhs: vec![d],
                rhs: rows.iter().map(Vec::len).collect(),
            });
        }
        let mut mean = DVector::zeros(d);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for r in rows {
            let c = DVector::from_column_slice(r) - &mean;
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let dist = Self { mean, cov };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature statistics".into()));
        }
        let d = self.dim();
        for i in 0..d {
            for j in 0..i {
                if (self.cov[(i, j)] - self.cov[(j, i)]).abs() > 1e-10 {
                    return Err(Error::Data(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        let eig = SymmetricEigen::new(self.cov.clone()).eigenvalues;
        let tol = eig_tolerance(&eig, 1e-10);
        if let Some(v) = eig.iter().find(|&&v| v < -tol) {
            return Err(Error::Data(format!("covariance has negative eigenvalue {v}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.cov[(i, j)]
    }
}

/// Symmetric PSD square root; rejects eigenvalues below `-1e-8` of the
/// spectrum scale.
fn psd_sqrt_eigenvalues(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let tol = eig_tolerance(&eig.eigenvalues, 1e-8);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -tol {
            return Err(Error::Data(format!("matrix square root of a negative eigenvalue {v}")));
        }
        *v = v.max(0.0).sqrt();
    }
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok((root, roots))
}

/// Fréchet distance between two Gaussian fits, floored at zero.
pub fn fid(a: &FeatureDist, b: &FeatureDist) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            op: "fid",
            lhs: vec![a.dim()],
            rhs: vec![b.dim()],
        });
    }
    let (sa, _) = psd_sqrt_eigenvalues(&a.cov)?;
    let (_, roots) = psd_sqrt_eigenvalues(&(&sa * &b.cov * &sa))?;
    let dm = (&a.mean - &b.mean).norm_squared();
    let value = dm + a.cov.trace() + b.cov.trace() - 2.0 * roots.sum();
    Ok(value.max(0.0))
}

/// Mean pairwise Euclidean distance between rows.
pub fn diversity(rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("diversity needs 2 rows, got {n}")));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape {
            op: "diversity",
            lhs: vec![d],
            rhs: rows.iter().map(Vec::len).collect(),
        });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(2.0 * total / (n * (n - 1)) as f64)
}

/// Physical foot contact score. The root stands in for the centre of mass;
/// upward acceleration is kept, downward is zeroed.
pub fn pfc(pos: &JointPositions, skel: &SkeletonDef) -> Result<f64> {
    let k = pos.frames();
    if k < 3 {
        return Err(Error::InsufficientData(format!("pfc needs 3 frames, got {k}")));
    }
    if pos.joints() != skel.len() {
        return Err(Error::Shape {
            op: "pfc",
            lhs: vec![pos.joints()],
            rhs: vec![skel.len()],
        });
    }
    let fps = MOTION_FPS as f64;
    let root = skel.parents.iter().position(Option::is_none).unwrap_or(0);
    let (left, right) = skel.foot_sides();
    let side_speed = |side: [usize; 2], f: usize| {
        let mut v = [0.0; 3];
        for j in side {
            let d = sub(pos.get(f + 1, j), pos.get(f, j));
            for c in 0..3 {
                v[c] += d[c] * fps / side.len() as f64;
            }
        }
        norm(v)
    };
    let mut max_acc = 0.0f64;
    let mut sum = 0.0;
    for i in 0..k - 2 {
        let (p0, p1, p2) = (pos.get(i, root), pos.get(i + 1, root), pos.get(i + 2, root));
        let mut a = [0.0; 3];
        for c in 0..3 {
            a[c] = (p2[c] - 2.0 * p1[c] + p0[c]) * fps * fps;
        }
        a[1] = a[1].max(0.0);
        let acc = norm(a);
        max_acc = max_acc.max(acc);
        sum += acc * side_speed(left, i + 1) * side_speed(right, i + 1);
    }
    if max_acc < 1e-12 {
        return Ok(0.0);
    }
    Ok(sum / (k as f64 * max_acc))
}

/// Beat alignment score: for every music beat, a Gaussian of the distance
/// to the nearest dance beat, averaged.
pub fn bas(music: &BeatTimes, dance: &BeatTimes) -> Result<f64> {
    if music.is_empty() {
        return Err(Error::InsufficientData("no music beats".into()));
    }
    if dance.is_empty() {
        return Ok(0.0);
    }
    let d = dance.times();
    let total: f64 = music
        .times()
        .iter()
        .map(|&t| {
            // dance times are sorted, so the nearest one brackets t
            let i = d.partition_point(|&x| x < t);
            let mut best = f64::INFINITY;
            for c in [i.wrapping_sub(1), i] {
                if let Some(&x) = d.get(c) {
                    best = best.min((x - t) * (x - t));
                }
            }
            (-best / (2.0 * BAS_SIGMA * BAS_SIGMA)).exp()
        })
        .sum();
    Ok(total / music.len() as f64)
}

/// Mean-over-joints speed per frame (forward differences, m/s).
pub fn speed_curve(pos: &JointPositions) -> Vec<f64> {
    let fps = MOTION_FPS as f64;
    let j = pos.joints() as f64;
    (0..pos.frames().saturating_sub(1))
        .map(|f| {
            (0..pos.joints())
                .map(|jj| norm(sub(pos.get(f + 1, jj), pos.get(f, jj))))
                .sum::<f64>()
                * fps
                / j
        })
        .collect()
}

/// Dance beats: local minima of the 5-frame smoothed speed curve.
pub fn dance_beats(pos: &JointPositions) -> Result<BeatTimes> {
    let k = pos.frames();
    if k < 5 {
        return Err(Error::InsufficientData(format!("dance beats need 5 frames, got {k}")));
    }
    let smooth = moving_average(&speed_curve(pos), 5);
    // snap to a relative grid so rounding noise on flat stretches is not
    // mistaken for minima
    let scale = smooth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let snapped: Vec<f64> = if scale > 0.0 {
        smooth.iter().map(|v| (v / scale * 1e9).round()).collect()
    } else {
        smooth
    };
    BeatTimes::from_frames(&plateau_extrema(&snapped, true), MOTION_FPS as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub fid_hand: f64,
    pub fid_body: f64,
    pub div_hand: f64,
    pub div_body: f64,
    pub pfc: f64,
    pub bas: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "fid_hand,fid_body,div_body,div_hand,pfc,bas";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.fid_hand, self.fid_body, self.div_body, self.div_hand, self.pfc, self.bas
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    pub fn to_text(&self) -> String {
        format!(
            "[motion quality]\nfid_hand = {:.6}\nfid_body = {:.6}\n\n[motion diversity]\ndiv_body = {:.6}\ndiv_hand = {:.6}\n\n[physics]\npfc = {:.6}\n\n[rhythm]\nbas = {:.6}\n",
            self.fid_hand, self.fid_body, self.div_body, self.div_hand, self.pfc, self.bas
        )
    }
}

/// All six report fields. `music_beats[i]` pairs with `generated[i]`.
pub fn evaluate(
    generated: &[JointPositions],
    reference: &[JointPositions],
    music_beats: &[BeatTimes],
    skel: &SkeletonDef,
) -> Result<EvalReport> {
    if generated.len() < 2 || reference.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need 2 sequences per set, got {} generated and {} reference",
            generated.len(),
            reference.len()
        )));
    }
    if music_beats.len() != generated.len() {
        return Err(Error::Alignment {
            expected: generated.len(),
            got: music_beats.len(),
        });
    }
    let feats = |set: &[JointPositions], joints: &[usize]| -> Result<Vec<Vec<f64>>> {
        set.iter().map(|p| kinetic_features(p, joints)).collect()
    };
    let gen_body = feats(generated, &skel.body_joints)?;
    let gen_hand = feats(generated, &skel.hand_joints)?;
    let ref_body = feats(reference, &skel.body_joints)?;
    let ref_hand = feats(reference, &skel.hand_joints)?;
    let mut pfc_sum = 0.0;
    let mut bas_sum = 0.0;
    for (p, m) in generated.iter().zip(music_beats) {
        pfc_sum += pfc(p, skel)?;
        bas_sum += bas(m, &dance_beats(p)?)?;
    }
    let n = generated.len() as f64;
    Ok(EvalReport {
        fid_hand: fid(&FeatureDist::fit(&gen_hand)?, &FeatureDist::fit(&ref_hand)?)?,
        fid_body: fid(&FeatureDist::fit(&gen_body)?, &FeatureDist::fit(&ref_body)?)?,
        div_hand: diversity(&gen_hand)?,
        div_body: diversity(&gen_body)?,
        pfc: pfc_sum / n,
        bas: bas_sum / n,
    })
}
