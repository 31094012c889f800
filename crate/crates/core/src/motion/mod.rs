//! Pose representation, 6D rotations, skeletons and forward kinematics.
//!
//! A pose vector is laid out as `[contact (4) | root translation (3) |
//! 52 x 6D rotation (312)]`, 319 values per frame.

mod bvh;
mod kinematics;
mod rotation;
mod skeleton;
mod synthetic;

pub use bvh::{euler_zyx_to_matrix, matrix_to_euler_zyx, write_bvh};
pub use kinematics::{extract_contact_labels, fk, fk_frame, fk_graph, JointPositions};
pub use rotation::{axis_angle, mat_mul, mat_transpose, matrix_to_rot6d, rot6d_to_matrix, Mat3, Vec3};
pub use skeleton::SkeletonDef;
pub use synthetic::{synthetic_dance, SyntheticClip};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const NUM_JOINTS: usize = 52;
pub const CONTACT_DIM: usize = 4;
pub const TRANS_OFFSET: usize = 4;
pub const ROT_OFFSET: usize = 7;
pub const POSE_DIM: usize = ROT_OFFSET + 6 * NUM_JOINTS;
pub const MOTION_FPS: usize = 30;
pub const SEGMENT_FRAMES: usize = 120;

/// A `k x 319` pose sequence at 30 fps.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    frames: Tensor,
}

impl MotionSequence {
    pub fn new(frames: Tensor) -> Result<Self> {
        if frames.rank() != 2 || frames.cols() != POSE_DIM {
            return Err(Error::Shape {
                op: "motion",
                lhs: frames.shape().to_vec(),
                rhs: vec![POSE_DIM],
            });
        }
        if let Some(i) = frames.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite pose value at frame {}, dim {}",
                i / POSE_DIM,
                i % POSE_DIM
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fps(&self) -> usize {
        MOTION_FPS
    }

    pub fn pose(&self, f: usize) -> &[f64] {
        self.frames.row(f)
    }

    pub fn contact(&self, f: usize) -> &[f64] {
        &self.pose(f)[..CONTACT_DIM]
    }

    pub fn root_translation(&self, f: usize) -> Vec3 {
        let p = self.pose(f);
        [p[TRANS_OFFSET], p[TRANS_OFFSET + 1], p[TRANS_OFFSET + 2]]
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        Self::new(self.frames.slice_rows(start, len)?)
    }
}
