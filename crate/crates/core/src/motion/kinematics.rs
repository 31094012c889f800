use super::rotation::{gram_schmidt, mat_mul, mat_transpose, mat_vec, GramSchmidt, Mat3, Vec3};
use super::{MotionSequence, CONTACT_DIM, ROT_OFFSET, TRANS_OFFSET};
use super::skeleton::SkeletonDef;
use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Graph, Tensor, Var};

/// World-space joint positions, `k x J x 3`, y up.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPositions {
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl JointPositions {
    pub fn new(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || joints == 0 || data.len() != frames * joints * 3 {
            return Err(Error::Shape {
                op: "joint positions",
                lhs: vec![data.len()],
                rhs: vec![frames, joints, 3],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite joint position".into()));
        }
        Ok(Self { frames, joints, data })
    }

    /// From a `k x 3J` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 || t.cols() % 3 != 0 {
            return Err(Error::Shape {
                op: "joint positions",
                lhs: t.shape().to_vec(),
                rhs: vec![3],
            });
        }
        Self::new(t.rows(), t.cols() / 3, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, self.joints * 3], self.data.clone()).expect("consistent shape")
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn get(&self, f: usize, j: usize) -> Vec3 {
        let i = (f * self.joints + j) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, f: usize, j: usize, p: Vec3) {
        let i = (f * self.joints + j) * 3;
        self.data[i..i + 3].copy_from_slice(&p);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Adds `d` to every joint in every frame.
    pub fn translated(&self, d: Vec3) -> Self {
        let mut out = self.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            *v += d[i % 3];
        }
        out
    }
}

fn check_row(row_len: usize, skel: &SkeletonDef) -> Result<()> {
    if row_len != ROT_OFFSET + 6 * skel.len() {
        return Err(Error::Structure(format!(
            "pose rows of width {row_len} do not fit a {}-joint skeleton",
            skel.len()
        )));
    }
    Ok(())
}

struct FrameState {
    rot: Vec<GramSchmidt>,
    world: Vec<Mat3>,
    pos: Vec<Vec3>,
}

fn forward_frame(row: &[f64], skel: &SkeletonDef) -> Result<FrameState> {
    let n = skel.len();
    let mut rot = Vec::with_capacity(n);
    let mut world: Vec<Mat3> = Vec::with_capacity(n);
    let mut pos: Vec<Vec3> = Vec::with_capacity(n);
    for j in 0..n {
        let gs = gram_schmidt(&row[ROT_OFFSET + 6 * j..ROT_OFFSET + 6 * j + 6])
            .map_err(|e| Error::Singular(format!("joint {j} ({}): {e}", skel.names[j])))?;
        let r = gs.matrix();
        match skel.parents[j] {
            None => {
                pos.push([row[TRANS_OFFSET], row[TRANS_OFFSET + 1], row[TRANS_OFFSET + 2]]);
                world.push(r);
            }
            Some(p) => {
                let o = mat_vec(&world[p], skel.offsets[j]);
                pos.push([pos[p][0] + o[0], pos[p][1] + o[1], pos[p][2] + o[2]]);
                world.push(mat_mul(&world[p], &r));
            }
        }
        rot.push(gs);
    }
    Ok(FrameState { rot, world, pos })
}

/// Joint positions of one pose row `[contact | translation | J x 6D]`.
pub fn fk_frame(row: &[f64], skel: &SkeletonDef) -> Result<Vec<Vec3>> {
    check_row(row.len(), skel)?;
    Ok(forward_frame(row, skel)?.pos)
}

fn fk_rows(poses: &Tensor, skel: &SkeletonDef) -> Result<Tensor> {
    check_row(poses.cols(), skel)?;
    let n = skel.len();
    let mut out = Vec::with_capacity(poses.rows() * n * 3);
    for f in 0..poses.rows() {
        for p in forward_frame(poses.row(f), skel)?.pos {
            out.extend_from_slice(&p);
        }
    }
    Tensor::new(vec![poses.rows(), n * 3], out)
}

pub fn fk(motion: &MotionSequence, skel: &SkeletonDef) -> Result<JointPositions> {
    JointPositions::from_tensor(&fk_rows(motion.frames(), skel)?)
}

struct FkOp {
    skel: SkeletonDef,
}

impl CustomOp for FkOp {
    fn name(&self) -> &'static str {
        "fk"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let poses = inputs[0];
        let skel = &self.skel;
        let n = skel.len();
        let mut out = Tensor::zeros(poses.shape());
        for f in 0..poses.rows() {
            let st = forward_frame(poses.row(f), skel)?;
            let gout = grad.row(f);
            let mut gp: Vec<Vec3> = (0..n).map(|j| [gout[3 * j], gout[3 * j + 1], gout[3 * j + 2]]).collect();
            let mut gw: Vec<Mat3> = vec![[[0.0; 3]; 3]; n];
            let grow = out.row_mut(f);
            for j in (0..n).rev() {
                let gr = match skel.parents[j] {
                    None => {
                        grow[TRANS_OFFSET..TRANS_OFFSET + 3].copy_from_slice(&gp[j]);
                        gw[j]
                    }
                    Some(p) => {
                        let gpj = gp[j];
                        for (a, b) in gp[p].iter_mut().zip(gpj) {
                            *a += b;
                        }
                        let off = skel.offsets[j];
                        let back = mat_mul(&gw[j], &mat_transpose(&st.rot[j].matrix()));
                        for r in 0..3 {
                            for c in 0..3 {
                                gw[p][r][c] += gpj[r] * off[c] + back[r][c];
                            }
                        }
                        mat_mul(&mat_transpose(&st.world[p]), &gw[j])
                    }
                };
                let g6 = st.rot[j].backward(&gr);
                grow[ROT_OFFSET + 6 * j..ROT_OFFSET + 6 * j + 6].copy_from_slice(&g6);
            }
            debug_assert!(grow[..CONTACT_DIM].iter().all(|&v| v == 0.0));
        }
        Ok(vec![Some(out)])
    }
}

/// Differentiable FK: `[k, 7 + 6J]` pose rows to `[k, 3J]` positions.
pub fn fk_graph(g: &mut Graph, poses: Var, skel: &SkeletonDef) -> Result<Var> {
    let value = fk_rows(g.value(poses), skel)?;
    g.custom(&[poses], value, Box::new(FkOp { skel: skel.clone() }))
}

fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (values.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Binary `k x 4` contact labels for the skeleton's foot joints: a foot is in
/// contact when its speed to the next frame is below `contact_speed` and its
/// height is within `contact_height` of its 5th-percentile height.
pub fn extract_contact_labels(pos: &JointPositions, skel: &SkeletonDef) -> Result<Tensor> {
    let k = pos.frames();
    if k < 2 {
        return Err(Error::InsufficientData(format!("contact labels need 2 frames, got {k}")));
    }
    let mut out = Tensor::zeros(&[k, CONTACT_DIM]);
    for (c, &j) in skel.foot_joints.iter().enumerate() {
        let mut heights: Vec<f64> = (0..k).map(|f| pos.get(f, j)[1]).collect();
        let ground = percentile(&mut heights, 0.05);
        for f in 0..k - 1 {
            let (a, b) = (pos.get(f, j), pos.get(f + 1, j));
            let speed = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
            let grounded = a[1] - ground < skel.contact_height;
            out.row_mut(f)[c] = f64::from(u8::from(speed < skel.contact_speed && grounded));
        }
        out.row_mut(k - 1)[c] = out.at(k - 2, c);
    }
    Ok(out)
}
