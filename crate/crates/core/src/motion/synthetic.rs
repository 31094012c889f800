use std::f64::consts::TAU;

use super::rotation::{axis_angle, matrix_to_rot6d, Mat3};
use super::skeleton::SkeletonDef;
use super::{MotionSequence, CONTACT_DIM, NUM_JOINTS, POSE_DIM, ROT_OFFSET, TRANS_OFFSET};
use crate::numerics::Tensor;

const CYCLE: usize = 40;
const STANCE: usize = 20;

/// A procedurally generated clip and its scripted contact phases.
#[derive(Clone, Debug)]
pub struct SyntheticClip {
    pub motion: MotionSequence,
    pub stance: Vec<bool>,
}

/// A stepping dance: legs and root advance only during swing phases so the
/// feet are exactly still while in stance; arms, spine, head and fingers
/// follow sinusoids whose rates depend on `variant`.
pub fn synthetic_dance(skel: &SkeletonDef, variant: u64, frames: usize) -> SyntheticClip {
    assert_eq!(skel.len(), NUM_JOINTS, "synthetic clips use the 52-joint layout");
    let v = variant as f64;
    let offset = (variant as usize * 7) % CYCLE;
    let idx = |name: &str| skel.names.iter().position(|n| n == name);
    let x = [1.0, 0.0, 0.0];
    let y = [0.0, 1.0, 0.0];
    let z = [0.0, 0.0, 1.0];

    let mut data = vec![0.0; frames * POSE_DIM];
    let mut stance = Vec::with_capacity(frames);
    // a clip that opens mid-swing starts with the matching swing progress so
    // every stance phase has both legs straight
    let mut tau = offset.saturating_sub(STANCE);
    for f in 0..frames {
        let swing = (f + offset) % CYCLE >= STANCE;
        let row = &mut data[f * POSE_DIM..(f + 1) * POSE_DIM];
        let mut rots: Vec<Mat3> = vec![axis_angle(x, 0.0); NUM_JOINTS];
        let s = tau as f64;
        let ft = f as f64;
        let stride = (TAU * s / STANCE as f64).sin();
        let bend = 0.5 * (1.0 - (TAU * s / STANCE as f64).cos());

        rots[0] = axis_angle(y, 0.3 * (TAU * s / CYCLE as f64 + v).sin());
        let mut set = |name: &str, r: Mat3| {
            if let Some(j) = idx(name) {
                rots[j] = r;
            }
        };
        set("left_hip", axis_angle(x, 0.4 * stride));
        set("right_hip", axis_angle(x, -0.4 * stride));
        set("left_knee", axis_angle(x, 0.6 * bend));
        set("right_knee", axis_angle(x, 0.6 * bend));
        set("spine1", axis_angle(y, 0.2 * (TAU * ft / (30.0 + 5.0 * v)).sin()));
        set("spine2", axis_angle(x, 0.1 * (TAU * ft / (45.0 + 3.0 * v)).sin()));
        set("neck", axis_angle(x, 0.15 * (TAU * ft / 36.0 + v).sin()));
        let arm = 0.6 + 0.4 * (TAU * ft / (24.0 + 2.0 * v) + v).sin();
        set("left_shoulder", axis_angle(z, -arm));
        set("right_shoulder", axis_angle(z, arm));
        let elbow = 0.5 + 0.4 * (TAU * ft / (20.0 + v)).sin();
        set("left_elbow", axis_angle(y, elbow));
        set("right_elbow", axis_angle(y, -elbow));
        let curl = 0.3 * (1.0 + (TAU * ft / 20.0 + v).sin());
        for j in 22..NUM_JOINTS {
            let sign = if j < 37 { -1.0 } else { 1.0 };
            rots[j] = axis_angle(z, sign * curl);
        }

        for (j, r) in rots.iter().enumerate() {
            row[ROT_OFFSET + 6 * j..ROT_OFFSET + 6 * j + 6].copy_from_slice(&matrix_to_rot6d(r));
        }
        let speed = 0.015 * (1.0 + 0.2 * v);
        row[TRANS_OFFSET] = 0.3 * (TAU * s / 80.0).sin();
        row[TRANS_OFFSET + 1] = 0.93;
        row[TRANS_OFFSET + 2] = speed * s;
        let c = if swing { 0.0 } else { 1.0 };
        row[..CONTACT_DIM].fill(c);
        stance.push(!swing);
        if swing {
            tau += 1;
        }
    }
    let motion = MotionSequence::new(Tensor::new(vec![frames, POSE_DIM], data).expect("sized"))
        .expect("finite synthetic motion");
    SyntheticClip { motion, stance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::fk;

    #[test]
    fn feet_are_still_during_stance() {
        let skel = SkeletonDef::default_52();
        for variant in 0..4 {
            let clip = synthetic_dance(&skel, variant, 120);
            let pos = fk(&clip.motion, &skel).unwrap();
            for f in 0..119 {
                if clip.stance[f] && clip.stance[f + 1] {
                    for &j in &skel.foot_joints {
                        let (a, b) = (pos.get(f, j), pos.get(f + 1, j));
                        assert!((0..3).all(|d| (a[d] - b[d]).abs() < 1e-12), "frame {f} joint {j}");
                    }
                }
            }
            assert!(clip.stance.iter().any(|&s| s) && clip.stance.iter().any(|&s| !s));
        }
    }

    #[test]
    fn variants_differ() {
        let skel = SkeletonDef::default_52();
        let a = synthetic_dance(&skel, 0, 120).motion;
        let b = synthetic_dance(&skel, 1, 120).motion;
        assert!(a.frames().max_abs_diff(b.frames()) > 0.1);
    }
}
