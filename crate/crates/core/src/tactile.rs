//! Fingertip taxel model: penetration to pressure, and force estimation as the
//! response-weighted sum of taxel normals.

use crate::config::TactileConfig;
use crate::error::{Error, Result};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const TAXELS: usize = 12;

pub type Vec3 = Vector3<f64>;

/// Fixed hemispherical taxel layout of one fingertip.
///
/// Tip-frame axes: x is the pad normal, y points along the distal link
/// towards the tip, z is out of the finger plane.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxelLayout {
    pub normals: [Vec3; TAXELS],
    /// Pairwise angles between normals.
    angles: [[f64; TAXELS]; TAXELS],
    receptive_width: f64,
    /// Calibration so an aligned contact of depth `d` on stiffness `k` reads `k d`.
    pub force_scale: f64,
}

impl TaxelLayout {
    pub fn from_config(cfg: &TactileConfig) -> Self {
        let mut normals = [Vec3::zeros(); TAXELS];
        for (i, n) in normals.iter_mut().enumerate() {
            let (sp, cp) = cfg.polar[i].sin_cos();
            let (sa, ca) = cfg.azimuth[i].sin_cos();
            *n = Vec3::new(cp, sp * ca, sp * sa);
        }
        let mut angles = [[0.0; TAXELS]; TAXELS];
        for i in 0..TAXELS {
            for j in 0..TAXELS {
                angles[i][j] = normals[i].dot(&normals[j]).clamp(-1.0, 1.0).acos();
            }
        }
        let mut layout = Self {
            normals,
            angles,
            receptive_width: cfg.receptive_width,
            force_scale: 1.0,
        };
        let aligned = layout.taxel_depths(1.0, Vec3::x());
        let sum: Vec3 = aligned.iter().zip(&normals).map(|(&d, n)| cfg.gain * d * n).sum();
        layout.force_scale = 1.0 / sum.norm();
        layout
    }

    /// Per-taxel penetration for a contact of `depth` arriving along unit
    /// tip-frame direction `dir`. Taxels respond with a Gaussian receptive
    /// field in the angle between their normal and the contact direction.
    pub fn taxel_depths(&self, depth: f64, dir: Vec3) -> [f64; TAXELS] {
        let mut out = [0.0; TAXELS];
        if depth <= 0.0 {
            return out;
        }
        let w2 = 2.0 * self.receptive_width * self.receptive_width;
        for (o, n) in out.iter_mut().zip(&self.normals) {
            let g = n.dot(&dir).clamp(-1.0, 1.0).acos();
            *o = depth * (-g * g / w2).exp();
        }
        out
    }

    pub fn angle(&self, i: usize, j: usize) -> f64 {
        self.angles[i][j]
    }
}

/// Pressure readings of one fingertip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaxelArray {
    pub values: [f64; TAXELS],
}

impl TaxelArray {
    pub fn zeros() -> Self {
        Self { values: [0.0; TAXELS] }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Estimated fingertip contact force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactForce {
    pub magnitude: f64,
    /// Unit direction in the tip frame; zero when `magnitude == 0`.
    pub direction: Vec3,
    /// Taxel-index centroid of the response; zero when there is no response.
    pub centroid: f64,
}

/// Spread-kernel width (rad) for stiffness `k`: soft objects spread wider.
pub fn spread_width(cfg: &TactileConfig, k: f64) -> f64 {
    if cfg.spread_width <= 0.0 {
        return 0.0;
    }
    (cfg.spread_width * (cfg.spread_ref_stiffness / k).sqrt()).min(cfg.spread_max)
}

/// Convert per-taxel penetrations (mm) into pressures.
///
/// `pressure_i = sum_j W_ij * gain * k * depth_j` with a column-normalized
/// Gaussian spread kernel over inter-taxel angles, plus optional Gaussian
/// noise, clamped to `[0, r_max]`.
pub fn taxel_pressures<R: Rng + ?Sized>(
    depths: &[f64; TAXELS],
    stiffness: f64,
    layout: &TaxelLayout,
    cfg: &TactileConfig,
    rng: Option<&mut R>,
) -> TaxelArray {
    PressureModel::new(layout, cfg, stiffness).pressures(depths, rng)
}

/// Pressure response of one fingertip against an object of fixed stiffness,
/// with the spread kernel precomputed.
#[derive(Debug, Clone)]
pub struct PressureModel {
    /// `kernel[i][j]`: share of taxel `j`'s raw pressure that lands on taxel `i`.
    kernel: [[f64; TAXELS]; TAXELS],
    gain: f64,
    noise_sigma: f64,
    r_max: f64,
}

impl PressureModel {
    pub fn new(layout: &TaxelLayout, cfg: &TactileConfig, stiffness: f64) -> Self {
        let width = spread_width(cfg, stiffness);
        let mut kernel = [[0.0; TAXELS]; TAXELS];
        for j in 0..TAXELS {
            if width == 0.0 {
                kernel[j][j] = 1.0;
                continue;
            }
            let w2 = 2.0 * width * width;
            let col: [f64; TAXELS] = std::array::from_fn(|i| {
                let a = layout.angle(i, j);
                (-a * a / w2).exp()
            });
            let norm: f64 = col.iter().sum();
            for i in 0..TAXELS {
                kernel[i][j] = col[i] / norm;
            }
        }
        Self {
            kernel,
            gain: cfg.gain * stiffness,
            noise_sigma: cfg.noise_sigma,
            r_max: cfg.r_max,
        }
    }

    pub fn pressures<R: Rng + ?Sized>(&self, depths: &[f64; TAXELS], rng: Option<&mut R>) -> TaxelArray {
        let raw = depths.map(|d| self.gain * d.max(0.0));
        let mut values = [0.0; TAXELS];
        for (j, &r) in raw.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            for i in 0..TAXELS {
                values[i] += self.kernel[i][j] * r;
            }
        }
        if let Some(rng) = rng {
            if self.noise_sigma > 0.0 {
                let noise = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
                for v in values.iter_mut() {
                    *v += noise.sample(rng);
                }
            }
        }
        for v in values.iter_mut() {
            *v = v.clamp(0.0, self.r_max);
        }
        TaxelArray { values }
    }
}

/// Sum of taxel normals weighted by response, scaled by the layout calibration.
pub fn force_vector(t: &TaxelArray, layout: &TaxelLayout) -> Vec3 {
    let sum: Vec3 = t.values.iter().zip(&layout.normals).map(|(&p, n)| p * n).sum();
    sum * layout.force_scale
}

pub fn estimate_force(t: &TaxelArray, layout: &TaxelLayout) -> ContactForce {
    let v = force_vector(t, layout);
    let magnitude = v.norm();
    let total = t.total();
    ContactForce {
        magnitude,
        direction: if magnitude > 0.0 { v / magnitude } else { Vec3::zeros() },
        centroid: if total > 0.0 {
            t.values.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>() / total
        } else {
            0.0
        },
    }
}

/// Contact iff the estimated magnitude strictly exceeds `threshold`.
pub fn detect_contact(f: &ContactForce, threshold: f64) -> Result<bool> {
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!("contact threshold must be positive, got {threshold}")));
    }
    Ok(f.magnitude > threshold)
}
