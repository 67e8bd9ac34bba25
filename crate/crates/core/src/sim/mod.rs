//! Deterministic fixed-timestep quasi-static hand simulation.
//!
//! Five planar fingers: thumb and middle oppose each other in the grasp
//! plane, index/ring/little sit in three parallel wrap planes. Each object
//! is a stack of four superellipse cross-sections sharing one planar pose.
//! Proximal joints follow a first-order motor model; the other joints track
//! position targets under a rate limit. Contacts are compliant: the normal
//! force is `k * overlap`.

mod contact;
mod kinematics;
mod object;

pub use contact::{resolve_contacts, tip_contact, ContactSet, TipContact};
pub use kinematics::{
    finger_chain, finger_ik, forward_kinematics, heading_dir, tip_poses, Finger, JointVector, TipPose, FINGERS, JOINTS,
};
pub use object::{GripAnchor, ObjectSpec, ObjectState, ObjectTag};

use crate::config::{Config, HandConfig, MotorConfig, ObjectDynamicsConfig, PresentationConfig};
use crate::error::{Error, Result};
use crate::geometry::{rotate, Pose2, Vec2};
use crate::tactile::TaxelLayout;
use rand::Rng;

/// Proximal-joint voltages plus position targets for the two distal joints of every finger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorCommand {
    volts: [f64; FINGERS],
    pub targets: [[f64; 2]; FINGERS],
}

impl MotorCommand {
    /// Saturates every voltage to `[-v_max, v_max]`; NaN is rejected.
    pub fn new(volts: [f64; FINGERS], targets: [[f64; 2]; FINGERS], v_max: f64) -> Result<Self> {
        if volts.iter().chain(targets.iter().flatten()).any(|v| v.is_nan()) {
            return Err(Error::Domain("motor command contains NaN".into()));
        }
        Ok(Self {
            volts: volts.map(|v| v.clamp(-v_max, v_max)),
            targets,
        })
    }

    /// Zero voltage, targets equal to the current joints.
    pub fn hold(joints: &JointVector) -> Self {
        Self {
            volts: [0.0; FINGERS],
            targets: std::array::from_fn(|f| {
                let q = joints.finger(Finger::ALL[f]);
                [q[1], q[2]]
            }),
        }
    }

    pub fn volts(&self) -> &[f64; FINGERS] {
        &self.volts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub joints: JointVector,
    pub object: ObjectState,
    pub time: f64,
}

/// Immutable simulator: geometry, motor and object constants.
#[derive(Debug, Clone)]
pub struct HandSim {
    pub hand: HandConfig,
    pub motor: MotorConfig,
    pub dynamics: ObjectDynamicsConfig,
    pub presentation: PresentationConfig,
    pub layout: TaxelLayout,
}

impl HandSim {
    pub fn new(cfg: &Config) -> Self {
        Self {
            hand: cfg.hand.clone(),
            motor: cfg.motor.clone(),
            dynamics: cfg.object.clone(),
            presentation: cfg.presentation.clone(),
            layout: TaxelLayout::from_config(&cfg.tactile),
        }
    }

    pub fn dt(&self) -> f64 {
        self.motor.dt
    }

    pub fn forward_kinematics(&self, joints: &JointVector) -> Result<[TipPose; FINGERS]> {
        forward_kinematics(&self.hand, joints)
    }

    pub fn resolve_contacts(&self, joints: &JointVector, obj: &ObjectSpec, state: &ObjectState) -> ContactSet {
        resolve_contacts(&self.hand, &self.layout, joints, obj, state)
    }

    pub fn initial_state(&self, object: ObjectState) -> SimState {
        SimState {
            joints: JointVector::open(&self.hand),
            object,
            time: 0.0,
        }
    }

    /// Nominal presentation pose for an object.
    pub fn nominal_pose(&self, spec: &ObjectSpec) -> Pose2 {
        let p = &self.presentation;
        Pose2::new(0.0, p.height_offset + p.height_per_width * spec.grasp_section().width(), 0.0)
    }

    /// Presentation pose drawn uniformly within the configured ranges around the nominal pose.
    pub fn sample_initial_pose<R: Rng + ?Sized>(&self, spec: &ObjectSpec, rng: &mut R) -> ObjectState {
        let nominal = self.nominal_pose(spec);
        let p = &self.presentation;
        let mut draw = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let dx = draw(p.range_x);
        let dy = draw(p.range_y);
        let dphi = draw(p.range_phi);
        ObjectState::presented(Pose2::new(nominal.x + dx, nominal.y + dy, nominal.phi + dphi))
    }

    /// Advance one step of `dt`. Contacts are resolved at the start of the step.
    pub fn step(&self, state: &SimState, cmd: &MotorCommand, obj: &ObjectSpec) -> SimState {
        let contacts = self.resolve_contacts(&state.joints, obj, &state.object);
        self.step_with_contacts(state, &contacts, cmd, obj)
    }

    /// As [`HandSim::step`] with contacts already resolved for `state`.
    pub fn step_with_contacts(&self, state: &SimState, contacts: &ContactSet, cmd: &MotorCommand, obj: &ObjectSpec) -> SimState {
        let dt = self.motor.dt;
        let mut joints = state.joints;
        for f in Finger::ALL {
            let cfg = &self.hand.fingers[f.index()];
            let tip = contacts.tip(f);
            let resist = if tip.in_contact() {
                // force on the finger is -k*depth*normal, applied at the tip centre
                let force = -obj.stiffness * tip.depth * tip.normal;
                let lever = contacts.tip_poses[f.index()].center - Vec2::new(cfg.base[0], cfg.base[1]);
                let torque_z = lever.x * force.y - lever.y * force.x;
                -cfg.flex_sign * torque_z
            } else {
                0.0
            };
            let q1 = joints.get(f, 0) + dt * (self.motor.k_v * cmd.volts[f.index()] - self.motor.k_r * resist);
            joints.set(f, 0, q1);
            let max_step = self.motor.position_rate * dt;
            for j in 1..3 {
                let cur = joints.get(f, j);
                let delta = (cmd.targets[f.index()][j - 1] - cur).clamp(-max_step, max_step);
                joints.set(f, j, cur + delta);
            }
        }
        joints.clamp_to_limits(&self.hand);

        let mut object = state.object;
        if !object.dropped && !object.supported {
            if let Some(anchor) = object.anchor {
                let tips = tip_poses(&self.hand, &joints);
                object.pose = carry(anchor, tips[0].center, tips[1].center);
            }
        }
        let mut object = update_object(&object, contacts, obj, &self.dynamics);
        if !object.dropped && !object.supported && contacts.tip(Finger::Thumb).in_contact() && contacts.tip(Finger::Middle).in_contact() {
            let tips = tip_poses(&self.hand, &joints);
            object.anchor = Some(anchor_of(&object.pose, tips[0].center, tips[1].center));
        } else {
            object.anchor = None;
        }
        SimState {
            joints,
            object,
            time: state.time + dt,
        }
    }
}

fn grip_axis(thumb: Vec2, middle: Vec2) -> (Vec2, Vec2, f64) {
    let mid = 0.5 * (thumb + middle);
    let u = (middle - thumb).try_normalize(0.0).unwrap_or_else(|| Vec2::new(1.0, 0.0));
    (mid, u, u.y.atan2(u.x))
}

/// Object pose held rigidly by the two grasping tips.
fn carry(anchor: GripAnchor, thumb: Vec2, middle: Vec2) -> Pose2 {
    let (mid, u, ang) = grip_axis(thumb, middle);
    let c = mid + anchor.along * u + anchor.across * rotate(u, std::f64::consts::FRAC_PI_2);
    Pose2::new(c.x, c.y, ang + anchor.phi)
}

fn anchor_of(pose: &Pose2, thumb: Vec2, middle: Vec2) -> GripAnchor {
    let (mid, u, ang) = grip_axis(thumb, middle);
    let rel = pose.translation() - mid;
    GripAnchor {
        along: rel.dot(&u),
        across: rel.dot(&rotate(u, std::f64::consts::FRAC_PI_2)),
        phi: pose.phi - ang,
    }
}

/// Quasi-static object response to the grasp contacts.
///
/// With both grasp tips touching, the object relaxes along the tip axis
/// towards normal-force balance and rotates towards zero moment; motion
/// across the axis is held by friction. With one tip touching it is pushed
/// away along that contact normal. An object held by the operator does not
/// move. The object drops when `friction * (f_thumb + f_middle) < load`.
pub fn update_object(state: &ObjectState, contacts: &ContactSet, obj: &ObjectSpec, dyn_cfg: &ObjectDynamicsConfig) -> ObjectState {
    let mut next = *state;
    if state.dropped || state.supported {
        return next;
    }
    let k = obj.stiffness;
    let th = contacts.tip(Finger::Thumb);
    let mi = contacts.tip(Finger::Middle);
    let normal_sum = k * (th.depth + mi.depth);
    if obj.friction * normal_sum < obj.load {
        next.dropped = true;
        next.anchor = None;
        return next;
    }
    let center = state.pose.translation();
    match (th.in_contact(), mi.in_contact()) {
        (true, true) => {
            let tips = &contacts.tip_poses;
            let (_, u, _) = grip_axis(tips[0].center, tips[1].center);
            let f_th = k * th.depth * th.normal;
            let f_mi = k * mi.depth * mi.normal;
            let along = (f_th + f_mi).dot(&u);
            let shift = dyn_cfg.translation_relaxation * along / (2.0 * k) * u;
            let arm = |p: Vec2, f: Vec2| {
                let r = p - center;
                r.x * f.y - r.y * f.x
            };
            let moment = arm(th.point, f_th) + arm(mi.point, f_mi);
            let s = obj.grasp_section();
            let radius2 = s.a * s.b;
            next.pose.x += shift.x;
            next.pose.y += shift.y;
            next.pose.phi += dyn_cfg.rotation_relaxation * moment / (k * radius2);
        }
        (true, false) | (false, true) => {
            let c = if th.in_contact() { th } else { mi };
            let shift = dyn_cfg.translation_relaxation * c.depth * c.normal;
            next.pose.x += shift.x;
            next.pose.y += shift.y;
        }
        (false, false) => {}
    }
    next
}
