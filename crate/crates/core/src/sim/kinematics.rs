use crate::config::{FingerConfig, HandConfig};
use crate::error::{Error, Result};
use crate::geometry::{rotate, Vec2};

pub const FINGERS: usize = 5;
pub const JOINTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finger {
    Thumb = 0,
    Middle = 1,
    Index = 2,
    Ring = 3,
    Little = 4,
}

impl Finger {
    pub const ALL: [Finger; FINGERS] = [Finger::Thumb, Finger::Middle, Finger::Index, Finger::Ring, Finger::Little];
    pub const GRASP: [Finger; 2] = [Finger::Thumb, Finger::Middle];
    pub const WRAP: [Finger; 3] = [Finger::Index, Finger::Ring, Finger::Little];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Fifteen joint angles, `[proximal, middle, distal]` per finger in
/// thumb, middle, index, ring, little order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointVector(pub [f64; JOINTS]);

impl JointVector {
    pub fn finger(&self, f: Finger) -> [f64; 3] {
        let i = 3 * f.index();
        [self.0[i], self.0[i + 1], self.0[i + 2]]
    }

    pub fn set_finger(&mut self, f: Finger, q: [f64; 3]) {
        let i = 3 * f.index();
        self.0[i..i + 3].copy_from_slice(&q);
    }

    pub fn get(&self, f: Finger, joint: usize) -> f64 {
        self.0[3 * f.index() + joint]
    }

    pub fn set(&mut self, f: Finger, joint: usize, v: f64) {
        self.0[3 * f.index() + joint] = v;
    }

    pub fn open(hand: &HandConfig) -> Self {
        let mut q = [0.0; JOINTS];
        for (f, cfg) in hand.fingers.iter().enumerate() {
            q[3 * f..3 * f + 3].copy_from_slice(&cfg.open);
        }
        Self(q)
    }

    pub fn within_limits(&self, hand: &HandConfig) -> bool {
        hand.fingers.iter().enumerate().all(|(f, c)| {
            (0..3).all(|j| {
                let v = self.0[3 * f + j];
                v.is_finite() && v >= c.lower[j] && v <= c.upper[j]
            })
        })
    }

    pub fn clamp_to_limits(&mut self, hand: &HandConfig) {
        for (f, c) in hand.fingers.iter().enumerate() {
            for j in 0..3 {
                let v = &mut self.0[3 * f + j];
                *v = v.clamp(c.lower[j], c.upper[j]);
            }
        }
    }

    /// Thumb and middle non-proximal joints `[th2, th3, mid2, mid3]`.
    pub fn non_proximal(&self) -> [f64; 4] {
        [self.0[1], self.0[2], self.0[4], self.0[5]]
    }

    /// Thumb and middle joints, thumb first.
    pub fn grasp_joints(&self) -> [f64; 6] {
        std::array::from_fn(|i| self.0[i])
    }

    pub fn wrap_joints(&self) -> [f64; 9] {
        std::array::from_fn(|i| self.0[6 + i])
    }
}

/// Planar pose of a fingertip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipPose {
    pub center: Vec2,
    /// Heading of the distal link measured from +y, counter-clockwise.
    pub heading: f64,
    /// Unit pad normal (flexion side).
    pub pad: Vec2,
    /// Unit direction along the distal link.
    pub tangent: Vec2,
}

/// Unit vector for a heading measured from +y, counter-clockwise.
#[inline]
pub fn heading_dir(heading: f64) -> Vec2 {
    let (s, c) = heading.sin_cos();
    Vec2::new(-s, c)
}

/// Joint positions `[base, j2, j3, tip]` and the tip pose of one finger.
pub fn finger_chain(cfg: &FingerConfig, q: [f64; 3]) -> ([Vec2; 4], TipPose) {
    let mut pts = [Vec2::new(cfg.base[0], cfg.base[1]); 4];
    let mut heading = 0.0;
    for j in 0..3 {
        heading += cfg.flex_sign * q[j];
        pts[j + 1] = pts[j] + cfg.links[j] * heading_dir(heading);
    }
    let tangent = heading_dir(heading);
    let tip = TipPose {
        center: pts[3],
        heading,
        pad: rotate(tangent, cfg.flex_sign * cfg.pad_angle),
        tangent,
    };
    (pts, tip)
}

/// Tip poses of all five fingers. Fails if any joint is outside its limits.
pub fn forward_kinematics(hand: &HandConfig, joints: &JointVector) -> Result<[TipPose; FINGERS]> {
    if !joints.within_limits(hand) {
        return Err(Error::Domain("joint vector outside limits".into()));
    }
    Ok(tip_poses(hand, joints))
}

/// Unchecked variant used inside the stepping loop, where limits hold by construction.
pub fn tip_poses(hand: &HandConfig, joints: &JointVector) -> [TipPose; FINGERS] {
    std::array::from_fn(|f| finger_chain(&hand.fingers[f], joints.finger(Finger::ALL[f])).1)
}

/// Inverse kinematics for a 3-link finger: place the tip centre at `target`
/// with distal heading `heading`. Returns the flexion-positive solution.
pub fn finger_ik(cfg: &FingerConfig, target: Vec2, heading: f64) -> Option<[f64; 3]> {
    let wrist = target - cfg.links[2] * heading_dir(heading);
    let base = Vec2::new(cfg.base[0], cfg.base[1]);
    let v = wrist - base;
    let (l1, l2) = (cfg.links[0], cfg.links[1]);
    let r2 = v.norm_squared();
    let c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return None;
    }
    // flexion-positive elbow
    let q2 = c2.acos();
    // heading of the vector base->wrist, measured from +y ccw
    let h_v = (-v.x).atan2(v.y);
    let phi = (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    // heading1 + s*phi = h_v with heading1 = s*q1
    let s = cfg.flex_sign;
    let q1 = s * h_v - phi;
    let q3 = s * heading - q1 - q2;
    Some([q1, q2, q3])
}
