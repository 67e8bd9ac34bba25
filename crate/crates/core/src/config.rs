//! Versioned text configuration shared by every subsystem.
//!
//! The file is TOML whose first line is `schema="haptic-config/1"`. All
//! geometric values are millimetres, angles radians, forces newton-equivalent
//! sensor units and times seconds.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::Path;

const PAD_ANGLE: f64 = 0.9;

pub const CONFIG_SCHEMA: &str = "haptic-config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerConfig {
    /// Joint-1 location in the hand frame.
    pub base: [f64; 2],
    /// Proximal, middle and distal link lengths.
    pub links: [f64; 3],
    /// -1 flexes clockwise (towards +x), +1 counter-clockwise.
    pub flex_sign: f64,
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    /// Joint angles of the open hand.
    pub open: [f64; 3],
    /// Object cross-section plane this finger lives in.
    pub plane: usize,
    /// Angle from the distal link direction to the pad normal, towards flexion.
    pub pad_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandConfig {
    /// thumb, middle, index, ring, little
    pub fingers: [FingerConfig; 5],
    pub tip_radius: f64,
    pub link_radius: f64,
}

impl Default for HandConfig {
    fn default() -> Self {
        let grasp_lower = [-0.6, 0.0, 0.0];
        let grasp_upper = [1.6, 1.4, 1.2];
        let wrap_lower = [-0.3, 0.0, 0.0];
        let wrap_upper = [1.7, 1.7, 1.5];
        let thumb = FingerConfig {
            base: [-40.0, 0.0],
            links: [42.0, 30.0, 20.0],
            flex_sign: -1.0,
            lower: grasp_lower,
            upper: grasp_upper,
            open: [-0.45, 0.05, 0.05],
            plane: 0,
            pad_angle: PAD_ANGLE,
        };
        let middle = FingerConfig {
            base: [40.0, 0.0],
            links: [46.0, 32.0, 22.0],
            flex_sign: 1.0,
            lower: grasp_lower,
            upper: grasp_upper,
            open: [-0.45, 0.05, 0.05],
            plane: 0,
            pad_angle: PAD_ANGLE,
        };
        let wrap = |plane: usize, links: [f64; 3]| FingerConfig {
            base: [62.0, 0.0],
            links,
            flex_sign: 1.0,
            lower: wrap_lower,
            upper: wrap_upper,
            open: [-0.2, 0.0, 0.0],
            plane,
            pad_angle: PAD_ANGLE,
        };
        Self {
            fingers: [
                thumb,
                middle,
                wrap(1, [50.0, 34.0, 24.0]),
                wrap(2, [48.0, 32.0, 22.0]),
                wrap(3, [44.0, 28.0, 20.0]),
            ],
            tip_radius: 8.0,
            link_radius: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorConfig {
    /// Proximal joint speed per volt, rad/(s V).
    pub k_v: f64,
    /// Back-drive of the proximal joint by contact torque, rad/(s N mm).
    pub k_r: f64,
    pub v_max: f64,
    /// Fixed simulation step, s.
    pub dt: f64,
    /// Rate limit of position-controlled joints, rad/s.
    pub position_rate: f64,
}

impl Default for MotorConfig {
    fn default() -> Self {
        Self {
            k_v: 1.0,
            k_r: 0.002,
            v_max: 12.0,
            dt: 1e-3,
            position_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDynamicsConfig {
    /// Fraction of the along-axis force imbalance removed per step.
    pub translation_relaxation: f64,
    /// Rotational relaxation gain per step.
    pub rotation_relaxation: f64,
}

impl Default for ObjectDynamicsConfig {
    fn default() -> Self {
        Self {
            translation_relaxation: 0.5,
            rotation_relaxation: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresentationConfig {
    /// Nominal object centre height is `height_offset + height_per_width * width`.
    pub height_offset: f64,
    pub height_per_width: f64,
    pub range_x: f64,
    pub range_y: f64,
    pub range_phi: f64,
}

impl Default for PresentationConfig {
    fn default() -> Self {
        Self {
            height_offset: 88.0,
            height_per_width: 0.0,
            range_x: 14.0,
            range_y: 8.0,
            range_phi: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TactileConfig {
    /// Polar angle of each taxel normal from the pad axis.
    pub polar: Vec<f64>,
    /// Azimuth of each taxel normal around the pad axis (0 = towards the finger tip).
    pub azimuth: Vec<f64>,
    /// Angular width of a taxel's receptive field, rad.
    pub receptive_width: f64,
    /// Pressure per (N/mm * mm).
    pub gain: f64,
    /// Spread-kernel width at `spread_ref_stiffness`, rad. Zero disables spreading.
    pub spread_width: f64,
    pub spread_ref_stiffness: f64,
    pub spread_max: f64,
    pub noise_sigma: f64,
    pub r_max: f64,
}

impl TactileConfig {
    pub fn hemisphere_layout() -> (Vec<f64>, Vec<f64>) {
        let mut polar = vec![0.0];
        let mut azimuth = vec![0.0];
        for i in 0..5 {
            polar.push(PI / 6.0);
            azimuth.push(2.0 * PI * i as f64 / 5.0);
        }
        for i in 0..6 {
            polar.push(PI / 3.0);
            azimuth.push(2.0 * PI * (i as f64 + 0.5) / 6.0);
        }
        (polar, azimuth)
    }
}

impl Default for TactileConfig {
    fn default() -> Self {
        let (polar, azimuth) = Self::hemisphere_layout();
        Self {
            polar,
            azimuth,
            receptive_width: 0.35,
            gain: 1.0,
            spread_width: 0.25,
            spread_ref_stiffness: 1.0,
            spread_max: 1.2,
            noise_sigma: 0.002,
            r_max: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub output_limit: f64,
    pub integral_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    /// Per-finger force loop, volts per newton.
    pub force: PidGains,
    /// Object-position loop, newton per radian. Negative gains: a positive
    /// angle error must raise the middle-finger setpoint in this geometry.
    pub position: PidGains,
    /// Setpoint floor, N.
    pub f_min: f64,
    /// Closing voltage during approach and wrap.
    pub approach_voltage: f64,
    /// Joint-2/3 position target per unit of proximal closure during approach.
    pub approach_coupling: [f64; 2],
    pub wrap_rate: f64,
    pub wrap_contact_depth: f64,
    /// Slew limit applied by the stabilizer to non-proximal targets, rad/s.
    pub np_rate: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            force: PidGains {
                kp: 0.6,
                ki: 6.0,
                kd: 0.0,
                output_limit: 12.0,
                integral_limit: 2.0,
            },
            position: PidGains {
                kp: -4.0,
                ki: -0.5,
                kd: -0.8,
                output_limit: 1.0,
                integral_limit: 0.5,
            },
            f_min: 0.05,
            approach_voltage: 0.3,
            approach_coupling: [0.5, 0.4],
            wrap_rate: 1.0,
            wrap_contact_depth: 0.05,
            np_rate: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDefaults {
    pub grip_init: f64,
    pub grip_squeeze: f64,
    pub contact_threshold: f64,
    pub squeeze_dwell: f64,
    pub alpha_tolerance: f64,
    pub grip_tolerance: f64,
    pub hold_time: f64,
    pub timeout: f64,
}

impl Default for TrialDefaults {
    fn default() -> Self {
        Self {
            grip_init: 0.5,
            grip_squeeze: 1.5,
            contact_threshold: 0.05,
            squeeze_dwell: 3.0,
            alpha_tolerance: 0.02,
            grip_tolerance: 0.05,
            hold_time: 0.3,
            timeout: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspModelConfig {
    pub components: usize,
    pub regularization: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub demos: usize,
    pub demo_width_min: f64,
    pub demo_width_max: f64,
    /// Std of demonstration jitter on joint angles, rad.
    pub demo_noise: f64,
}

impl Default for GraspModelConfig {
    fn default() -> Self {
        Self {
            components: 3,
            regularization: 1e-6,
            max_iter: 200,
            tol: 1e-8,
            demos: 150,
            demo_width_min: 14.0,
            demo_width_max: 72.0,
            demo_noise: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub folds: usize,
    pub inner_folds: usize,
    pub lambdas: Vec<f64>,
    /// Multipliers of the median pairwise distance.
    pub sigma_factors: Vec<f64>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            folds: 4,
            inner_folds: 3,
            lambdas: (0..7).map(|i| 10f64.powi(i - 6)).collect(),
            sigma_factors: vec![0.1, 10f64.powf(-0.5), 1.0, 10f64.powf(0.5), 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub hand: HandConfig,
    pub motor: MotorConfig,
    pub object: ObjectDynamicsConfig,
    pub presentation: PresentationConfig,
    pub tactile: TactileConfig,
    pub control: ControlConfig,
    pub trial: TrialDefaults,
    pub grasp_model: GraspModelConfig,
    pub learn: LearnConfig,
}

impl Config {
    pub fn to_text(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        format!("schema=\"{CONFIG_SCHEMA}\"\n{body}")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let first = text.lines().next().unwrap_or_default();
        let schema = first
            .strip_prefix("schema")
            .map(|s| s.trim_start().trim_start_matches('=').trim().trim_matches('"'))
            .ok_or_else(|| Error::Format("config must start with a schema= line".into()))?;
        if schema != CONFIG_SCHEMA {
            return Err(Error::Format(format!("unsupported config schema {schema}")));
        }
        #[derive(Deserialize)]
        struct WithSchema {
            #[allow(dead_code)]
            schema: String,
            #[serde(flatten)]
            config: Config,
        }
        let parsed: WithSchema = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        parsed.config.validate()?;
        Ok(parsed.config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        if self.tactile.polar.len() != crate::tactile::TAXELS || self.tactile.azimuth.len() != crate::tactile::TAXELS {
            return bad("taxel layout must have 12 entries");
        }
        if !(self.motor.dt > 0.0) {
            return bad("dt must be positive");
        }
        for f in &self.hand.fingers {
            if f.plane > 3 {
                return bad("finger plane index out of range");
            }
            for j in 0..3 {
                if !(f.lower[j] < f.upper[j]) || f.open[j] < f.lower[j] || f.open[j] > f.upper[j] {
                    return bad("joint limits must bracket the open pose");
                }
            }
        }
        let t = &self.trial;
        if !(t.grip_squeeze > t.grip_init && t.grip_init > 0.0) {
            return bad("grip_squeeze > grip_init > 0 required");
        }
        if !(t.timeout > 0.0 && t.contact_threshold > 0.0) {
            return bad("timeout and contact threshold must be positive");
        }
        if self.learn.folds < 2 || self.learn.lambdas.is_empty() || self.learn.sigma_factors.is_empty() {
            return bad("learning grid must be non-empty with at least two folds");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = Config::default();
        let text = cfg.to_text();
        assert!(text.starts_with("schema=\"haptic-config/1\"\n"));
        assert_eq!(Config::from_text(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_wrong_schema() {
        let text = Config::default().to_text().replace("haptic-config/1", "haptic-config/9");
        assert!(Config::from_text(&text).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        b.trial.grip_init = 0.6;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Config::default().hash());
    }
}
