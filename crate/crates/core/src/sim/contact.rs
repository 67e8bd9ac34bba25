use super::kinematics::{finger_chain, Finger, JointVector, TipPose, FINGERS};
use super::object::{ObjectSpec, ObjectState};
use crate::config::HandConfig;
use crate::geometry::{Superellipse, Vec2};
use crate::tactile::{TaxelLayout, Vec3, TAXELS};

/// Samples per link when testing link capsules against a cross-section.
const LINK_SAMPLES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipContact {
    /// Overlap of the tip circle with the object, mm (0 when apart).
    pub depth: f64,
    /// Closest object boundary point, world frame.
    pub point: Vec2,
    /// Unit direction from the tip into the object.
    pub normal: Vec2,
    pub taxels: [f64; TAXELS],
}

impl TipContact {
    pub fn none() -> Self {
        Self {
            depth: 0.0,
            point: Vec2::zeros(),
            normal: Vec2::zeros(),
            taxels: [0.0; TAXELS],
        }
    }

    pub fn in_contact(&self) -> bool {
        self.depth > 0.0
    }
}

/// Contacts of every fingertip plus link overlaps of the wrapping fingers.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet {
    pub tips: [TipContact; FINGERS],
    pub tip_poses: [TipPose; FINGERS],
    /// Per-link overlap for index, ring and little; zero for thumb and middle.
    pub links: [[f64; 3]; FINGERS],
}

impl ContactSet {
    pub fn tip(&self, f: Finger) -> &TipContact {
        &self.tips[f.index()]
    }
}

/// Overlap of a circle of `radius` at world `center` with a section placed at `state.pose`.
fn circle_overlap(section: &Superellipse, state: &ObjectState, center: Vec2, radius: f64) -> Option<(f64, Vec2, Vec2)> {
    let local = state.pose.to_local(center);
    if local.norm() > section.bounding_radius() + radius {
        return None;
    }
    let q = section.closest_point(local);
    let depth = radius - q.signed_distance;
    if depth <= 0.0 {
        return None;
    }
    let point = state.pose.to_world(q.point);
    let gap = point - center;
    let n = gap.norm();
    let normal = if n == 0.0 {
        // centre exactly on the boundary: push along the inward surface normal
        (state.pose.translation() - center).try_normalize(0.0).unwrap_or_else(Vec2::zeros)
    } else if q.signed_distance >= 0.0 {
        gap / n
    } else {
        -gap / n
    };
    Some((depth, point, normal))
}

pub fn tip_contact(section: &Superellipse, state: &ObjectState, tip: &TipPose, radius: f64, layout: &TaxelLayout) -> TipContact {
    match circle_overlap(section, state, tip.center, radius) {
        None => TipContact::none(),
        Some((depth, point, normal)) => {
            let dir = Vec3::new(normal.dot(&tip.pad), normal.dot(&tip.tangent), 0.0);
            let dir = dir.try_normalize(0.0).unwrap_or_else(Vec3::x);
            TipContact {
                depth,
                point,
                normal,
                taxels: layout.taxel_depths(depth, dir),
            }
        }
    }
}

/// Resolve all fingertip and wrap-link contacts for a hand configuration.
pub fn resolve_contacts(
    hand: &HandConfig,
    layout: &TaxelLayout,
    joints: &JointVector,
    obj: &ObjectSpec,
    state: &ObjectState,
) -> ContactSet {
    let mut tips = [TipContact::none(); FINGERS];
    let mut links = [[0.0; 3]; FINGERS];
    let mut tip_poses = [None; FINGERS];
    for f in Finger::ALL {
        let cfg = &hand.fingers[f.index()];
        let (pts, tip) = finger_chain(cfg, joints.finger(f));
        tip_poses[f.index()] = Some(tip);
        if state.dropped {
            continue;
        }
        let section = &obj.sections[cfg.plane];
        tips[f.index()] = tip_contact(section, state, &tip, hand.tip_radius, layout);
        if matches!(f, Finger::Thumb | Finger::Middle) {
            continue;
        }
        for l in 0..3 {
            let mut deepest: f64 = 0.0;
            for s in 0..LINK_SAMPLES {
                let t = s as f64 / LINK_SAMPLES as f64;
                let c = pts[l] + t * (pts[l + 1] - pts[l]);
                if let Some((d, _, _)) = circle_overlap(section, state, c, hand.link_radius) {
                    deepest = deepest.max(d);
                }
            }
            links[f.index()][l] = deepest;
        }
    }
    ContactSet {
        tips,
        tip_poses: tip_poses.map(|t| t.expect("every finger visited")),
        links,
    }
}
