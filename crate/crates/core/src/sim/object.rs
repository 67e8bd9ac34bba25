use crate::geometry::{Pose2, Superellipse};
use serde::{Deserialize, Serialize};

/// Catalog provenance of an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectTag {
    YcbLike,
    Supplemental,
}

/// Parameterized compliant object.
///
/// `sections[0]` is the cross-section in the grasp plane (thumb/middle),
/// `sections[1..4]` those met by the index, ring and little fingers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub name: String,
    pub tag: ObjectTag,
    /// N/mm
    pub stiffness: f64,
    pub friction: f64,
    /// Load the grasp must carry through friction, N.
    pub load: f64,
    pub sections: [Superellipse; 4],
}

impl ObjectSpec {
    pub fn is_valid(&self) -> bool {
        self.stiffness > 0.0
            && self.friction > 0.0
            && self.friction <= 2.0
            && self.load >= 0.0
            && self.sections.iter().all(Superellipse::is_valid)
    }

    pub fn grasp_section(&self) -> &Superellipse {
        &self.sections[0]
    }
}

/// Object centre expressed in the frame spanned by the two grasping tips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripAnchor {
    /// Along the thumb->middle axis from the tip midpoint.
    pub along: f64,
    /// Perpendicular offset (axis rotated +90 degrees).
    pub across: f64,
    /// Object orientation minus axis orientation.
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState {
    pub pose: Pose2,
    pub dropped: bool,
    /// Held in place by the operator; released once both grasp tips touch.
    pub supported: bool,
    pub anchor: Option<GripAnchor>,
}

impl ObjectState {
    pub fn presented(pose: Pose2) -> Self {
        Self {
            pose,
            dropped: false,
            supported: true,
            anchor: None,
        }
    }
}
