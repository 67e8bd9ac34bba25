//! Grasp stabilizer control tiers: per-finger PID force loops and the
//! high-level loop that coordinates grip strength and object position.

use crate::config::{ControlConfig, PidGains};
use crate::error::{Error, Result};
use crate::geometry::{angle_between, Vec2};
use crate::sim::{Finger, MotorCommand, FINGERS};

/// PID with clamped integral (anti-windup) and clamped output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    /// Accumulated `ki * integral(e)`, always within `gains.integral_limit`.
    pub integral: f64,
    pub prev_error: Option<f64>,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        Self {
            gains,
            integral: 0.0,
            prev_error: None,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn update(&mut self, error: f64, dt: f64) -> f64 {
        let g = &self.gains;
        self.integral = (self.integral + g.ki * error * dt).clamp(-g.integral_limit, g.integral_limit);
        let derivative = match self.prev_error {
            Some(prev) => (error - prev) / dt,
            None => 0.0,
        };
        self.prev_error = Some(error);
        (g.kp * error + self.integral + g.kd * derivative).clamp(-g.output_limit, g.output_limit)
    }
}

/// Functional form: returns the output and the advanced controller.
pub fn pid_step(c: &PidController, error: f64, dt: f64) -> Result<(f64, PidController)> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    let mut next = *c;
    let u = next.update(error, dt);
    Ok((u, next))
}

/// Anchor points at the thumb base `a` and the middle-finger base `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspFrame {
    pub a: Vec2,
    pub b: Vec2,
}

impl GraspFrame {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn origin(&self) -> Vec2 {
        0.5 * (self.a + self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripStrength(pub f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSetpoints {
    pub thumb: f64,
    pub middle: f64,
}

/// Mean of the two grasping forces.
pub fn grip_strength(f_th: f64, f_mid: f64) -> Result<GripStrength> {
    if !(f_th >= 0.0 && f_mid >= 0.0) {
        return Err(Error::Domain(format!("forces must be non-negative, got {f_th}, {f_mid}")));
    }
    Ok(GripStrength((f_th + f_mid) / 2.0))
}

/// Unsigned angle in `[0, pi]` between `O -> C_o` and `O -> B`, where `C_o`
/// is the midpoint of the two contact points.
pub fn object_position(contact_th: Vec2, contact_mid: Vec2, frame: &GraspFrame) -> Result<f64> {
    let o = frame.origin();
    let oc = 0.5 * (contact_th + contact_mid) - o;
    if oc.norm() == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    Ok(angle_between(oc, frame.b - o))
}

pub fn fingertip_distance(tip_th: Vec2, tip_mid: Vec2) -> f64 {
    (tip_mid - tip_th).norm()
}

/// Object-position loop. Allocates the position correction differentially so
/// the mean of the two setpoints stays at the grip reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighLevelController {
    pub pid: PidController,
    pub f_min: f64,
}

impl HighLevelController {
    pub fn new(cfg: &ControlConfig) -> Self {
        Self {
            pid: PidController::new(cfg.position),
            f_min: cfg.f_min,
        }
    }

    /// `f_th = g + u/2`, `f_mid = g - u/2` with `u = PID(alpha_ref - alpha_act)`,
    /// each floored at `f_min`.
    pub fn step(&mut self, alpha_act: f64, alpha_ref: f64, grip_ref: f64, dt: f64) -> ForceSetpoints {
        let u = self.pid.update(alpha_ref - alpha_act, dt);
        allocate(grip_ref, u, self.f_min)
    }
}

pub fn allocate(grip_ref: f64, u: f64, f_min: f64) -> ForceSetpoints {
    let thumb = grip_ref + u / 2.0;
    let middle = 2.0 * grip_ref - thumb;
    ForceSetpoints {
        thumb: thumb.max(f_min),
        middle: middle.max(f_min),
    }
}

/// Per-finger force loops on thumb and middle driving proximal voltages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowLevelController {
    pub thumb: PidController,
    pub middle: PidController,
    pub v_max: f64,
}

impl LowLevelController {
    pub fn new(cfg: &ControlConfig, v_max: f64) -> Self {
        Self {
            thumb: PidController::new(cfg.force),
            middle: PidController::new(cfg.force),
            v_max,
        }
    }

    pub fn reset(&mut self) {
        self.thumb.reset();
        self.middle.reset();
    }

    /// Writes the thumb and middle voltages into `base`, keeping its position targets.
    pub fn step(&mut self, actual: [f64; 2], setpoints: ForceSetpoints, base: &MotorCommand, dt: f64) -> MotorCommand {
        let v_th = self.thumb.update(setpoints.thumb - actual[0], dt);
        let v_mid = self.middle.update(setpoints.middle - actual[1], dt);
        let mut volts = *base.volts();
        volts[Finger::Thumb.index()] = v_th;
        volts[Finger::Middle.index()] = v_mid;
        MotorCommand::new(volts, base.targets, self.v_max).expect("finite controller output")
    }
}

/// Build a command from explicit voltages and targets.
pub fn command(volts: [f64; FINGERS], targets: [[f64; 2]; FINGERS], v_max: f64) -> MotorCommand {
    MotorCommand::new(volts, targets, v_max).expect("finite command")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::geometry::{rotate, Pose2, Superellipse};
    use crate::sim::{HandSim, JointVector, ObjectSpec, ObjectState, ObjectTag};
    use crate::tactile::{estimate_force, taxel_pressures};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn frame() -> GraspFrame {
        GraspFrame::new(Vec2::new(-10.0, 0.0), Vec2::new(10.0, 0.0))
    }

    #[test]
    fn grip_strength_is_the_mean() {
        assert_eq!(grip_strength(1.0, 1.0).unwrap().0, 1.0);
        assert!((grip_strength(0.8, 1.2).unwrap().0 - 1.0).abs() < 1e-12);
        assert_eq!(grip_strength(0.0, 2.0).unwrap().0, 1.0);
        assert!(grip_strength(-0.1, 1.0).is_err());
    }

    #[test]
    fn object_position_constructed_cases() {
        let f = frame();
        assert!(object_position(Vec2::new(3.0, 0.0), Vec2::new(5.0, 0.0), &f).unwrap().abs() < 1e-12);
        assert!((object_position(Vec2::new(-1.0, 6.0), Vec2::new(1.0, 6.0), &f).unwrap() - FRAC_PI_2).abs() < 1e-12);
        assert!(matches!(
            object_position(Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0), &f),
            Err(Error::UndefinedAngle)
        ));
    }

    #[test]
    fn object_position_matches_atan2_oracle() {
        let f = frame();
        let alpha = object_position(Vec2::new(2.0, 8.0), Vec2::new(4.0, 12.0), &f).unwrap();
        // C_o = (3, 10), OB along +x: angle is atan2(10, 3)
        let oracle = 10f64.atan2(3.0);
        assert!((alpha - oracle).abs() < 1e-9);
    }

    #[test]
    fn fingertip_distance_cases() {
        assert_eq!(fingertip_distance(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)), 0.0);
        assert_eq!(fingertip_distance(Vec2::new(0.0, 0.0), Vec2::new(3.0, 4.0)), 5.0);
    }

    #[test]
    fn pid_basics() {
        let gains = PidGains {
            kp: 3.0,
            ki: 0.0,
            kd: 0.0,
            output_limit: 100.0,
            integral_limit: 1.0,
        };
        let c = PidController::new(gains);
        assert_eq!(pid_step(&c, 0.0, 0.01).unwrap().0, 0.0);
        assert_eq!(pid_step(&c, 2.0, 0.01).unwrap().0, 6.0);
        assert!(pid_step(&c, 2.0, 0.0).is_err());
    }

    #[test]
    fn high_level_symmetric_and_mean_preserving() {
        let cfg = ControlConfig::default();
        let mut hl = HighLevelController::new(&cfg);
        let sp = hl.step(1.2, 1.2, 0.5, 1e-3);
        assert_eq!((sp.thumb, sp.middle), (0.5, 0.5));
        for u in [-0.3, -0.01, 0.2, 0.35] {
            let sp = allocate(0.5, u, cfg.f_min);
            assert_eq!((sp.thumb + sp.middle) / 2.0 - 0.5, 0.0);
        }
    }

    #[test]
    fn positive_angle_error_loads_the_middle_finger() {
        // Pushing harder with the thumb moves C_o towards B and shrinks alpha,
        // so raising alpha calls for the opposite imbalance.
        let cfg = ControlConfig::default();
        let mut hl = HighLevelController::new(&cfg);
        let sp = hl.step(1.0, 1.1, 0.5, 1e-3);
        assert!(sp.middle > sp.thumb);
    }

    #[test]
    fn low_level_signs() {
        let cfg = Config::default();
        let hold = MotorCommand::hold(&JointVector::open(&cfg.hand));
        let mut ll = LowLevelController::new(&cfg.control, cfg.motor.v_max);
        let cmd = ll.step([0.5, 0.5], ForceSetpoints { thumb: 0.5, middle: 0.5 }, &hold, 1e-3);
        assert_eq!(cmd.volts()[0], 0.0);
        assert_eq!(cmd.volts()[1], 0.0);
        let cmd = ll.step([0.2, 0.2], ForceSetpoints { thumb: 0.5, middle: 0.5 }, &hold, 1e-3);
        assert!(cmd.volts()[0] > 0.0 && cmd.volts()[1] > 0.0);
    }

    /// Force loop on a centered rigid cylinder; returns (time, force) samples of the thumb.
    fn closed_force_loop(stiffness: f64, setpoint: f64, seconds: f64) -> Vec<(f64, f64, f64)> {
        let cfg = Config::default();
        let sim = HandSim::new(&cfg);
        let obj = ObjectSpec {
            id: 0,
            name: "rigid".into(),
            tag: ObjectTag::YcbLike,
            stiffness,
            friction: 1.0,
            load: 0.0,
            sections: [Superellipse::new(25.0, 25.0, 2.0); 4],
        };
        let mut quiet = cfg.tactile.clone();
        quiet.noise_sigma = 0.0;
        // close until both touch, operator holding the object
        let mut state = sim.initial_state(ObjectState::presented(Pose2::new(0.0, 70.0, 0.0)));
        // distal joints bent so both pads meet the object square-on
        for f in Finger::GRASP {
            state.joints.set(f, 1, 0.35);
            state.joints.set(f, 2, 0.35);
        }
        let mut ll = LowLevelController::new(&cfg.control, cfg.motor.v_max);
        let mut out = Vec::new();
        let dt = cfg.motor.dt;
        let steps = (seconds / dt) as usize;
        for _ in 0..steps {
            let contacts = sim.resolve_contacts(&state.joints, &obj, &state.object);
            let f: [f64; 2] = [0, 1].map(|i| {
                let p = taxel_pressures::<StdRng>(&contacts.tips[i].taxels, stiffness, &sim.layout, &quiet, None);
                estimate_force(&p, &sim.layout).magnitude
            });
            out.push((state.time, f[0], stiffness * contacts.tips[0].depth));
            let hold = MotorCommand::hold(&state.joints);
            let cmd = ll.step(f, ForceSetpoints { thumb: setpoint, middle: setpoint }, &hold, dt);
            state = sim.step_with_contacts(&state, &contacts, &cmd, &obj);
        }
        out
    }

    #[test]
    fn force_loop_settles_within_two_percent() {
        for &k in &[0.25, 1.0, 5.0] {
            let trace = closed_force_loop(k, 0.5, 4.0);
            let first_contact = trace.iter().position(|s| s.1 > 0.0).expect("contact reached");
            let t0 = trace[first_contact].0;
                        let settle = trace
                .iter()
                .rposition(|s| (s.1 - 0.5).abs() >= 0.01)
                .map(|i| trace[i].0 - t0)
                .unwrap_or(0.0);
            println!("k={k} settle={settle:.3}");
            assert!(settle < 1.0, "k={k} settled after {settle} s");
        }
    }

    #[test]
    fn rigid_steady_state_balances_penetration_force() {
        let trace = closed_force_loop(5.0, 0.5, 3.0);
        let last = trace.last().unwrap();
        assert!((last.2 - 0.5).abs() < 0.01, "k*delta = {}", last.2);
    }

    proptest! {
        #[test]
        fn integral_stays_clamped(errors in prop::collection::vec(-100.0f64..100.0, 1..200)) {
            let mut c = PidController::new(ControlConfig::default().force);
            for e in errors {
                let u = c.update(e, 1e-3);
                prop_assert!(c.integral.abs() <= c.gains.integral_limit);
                prop_assert!(u.abs() <= c.gains.output_limit);
            }
        }

        #[test]
        fn alpha_in_range_and_rotation_invariant(
            ax in -50.0f64..50.0, ay in -50.0f64..50.0, bx in -50.0f64..50.0, by in -50.0f64..50.0,
            c1x in -80.0f64..80.0, c1y in -80.0f64..80.0, c2x in -80.0f64..80.0, c2y in -80.0f64..80.0,
            rot in -PI..PI,
        ) {
            let f = GraspFrame::new(Vec2::new(ax, ay), Vec2::new(bx, by));
            prop_assume!((f.b - f.a).norm() > 1.0);
            let (c1, c2) = (Vec2::new(c1x, c1y), Vec2::new(c2x, c2y));
            prop_assume!((0.5 * (c1 + c2) - f.origin()).norm() > 1e-3);
            let a = object_position(c1, c2, &f).unwrap();
            prop_assert!((0.0..=PI).contains(&a));
            let r = |v: Vec2| rotate(v, rot);
            let fr = GraspFrame::new(r(f.a), r(f.b));
            let ar = object_position(r(c1), r(c2), &fr).unwrap();
            prop_assert!((a - ar).abs() < 1e-9);
        }

        #[test]
        fn distance_matches_coordinatewise_norm(x1 in -1e3f64..1e3, y1 in -1e3f64..1e3, x2 in -1e3f64..1e3, y2 in -1e3f64..1e3) {
            let d = fingertip_distance(Vec2::new(x1, y1), Vec2::new(x2, y2));
            let oracle = ((x2 - x1) * (x2 - x1) + (y2 - y1) * (y2 - y1)).sqrt();
            prop_assert!((d - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }

        #[test]
        fn unclamped_allocation_preserves_grip(g in 0.2f64..3.0, u in -0.3f64..0.3) {
            let sp = allocate(g, u, 0.05);
            prop_assume!(sp.thumb > 0.05 && sp.middle > 0.05);
            prop_assert!(((sp.thumb + sp.middle) / 2.0 - g).abs() <= 1e-12);
        }
    }
}
