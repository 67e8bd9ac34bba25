//! Planar geometry helpers and the superellipse cross-section used for object planes.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

pub type Vec2 = Vector2<f64>;

/// Rotate `v` counter-clockwise by `angle` radians.
#[inline]
pub fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Planar rigid pose: translation in mm, orientation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Self { x, y, phi }
    }

    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// World point -> body frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        rotate(p - self.translation(), -self.phi)
    }

    /// Body frame point -> world.
    pub fn to_world(&self, p: Vec2) -> Vec2 {
        rotate(p, self.phi) + self.translation()
    }
}

/// Closed curve `|x/a|^p + |y/b|^p = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Superellipse {
    /// Semi-axis along the body x axis (mm).
    pub a: f64,
    /// Semi-axis along the body y axis (mm).
    pub b: f64,
    /// Exponent, `p >= 1`. 2 is an ellipse, large values approach a rectangle.
    pub p: f64,
}

/// Result of a closest-point query against a superellipse boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryQuery {
    /// Closest boundary point (same frame as the query point).
    pub point: Vec2,
    /// Distance to the boundary, negative when the query point is inside.
    pub signed_distance: f64,
}

const COARSE_SAMPLES: usize = 24;
const GOLDEN_ITERS: usize = 32;

impl Superellipse {
    pub fn new(a: f64, b: f64, p: f64) -> Self {
        Self { a, b, p }
    }

    pub fn is_valid(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.p.is_finite() && self.a > 0.0 && self.b > 0.0 && self.p >= 1.0
    }

    /// Implicit function value; `< 1` inside, `> 1` outside.
    pub fn implicit(&self, q: Vec2) -> f64 {
        (q.x / self.a).abs().powf(self.p) + (q.y / self.b).abs().powf(self.p)
    }

    pub fn contains(&self, q: Vec2) -> bool {
        self.implicit(q) < 1.0
    }

    /// Boundary radius along polar angle `theta`.
    pub fn radius_at(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let v = (c / self.a).abs().powf(self.p) + (s / self.b).abs().powf(self.p);
        v.powf(-1.0 / self.p)
    }

    /// Boundary point along polar angle `theta`.
    pub fn boundary_point(&self, theta: f64) -> Vec2 {
        let r = self.radius_at(theta);
        Vec2::new(r * theta.cos(), r * theta.sin())
    }

    /// Radius of a circle centred at the origin that encloses the curve.
    pub fn bounding_radius(&self) -> f64 {
        if self.p >= 2.0 {
            self.a.hypot(self.b)
        } else {
            self.a.max(self.b)
        }
    }

    /// Extent of the curve along the body x axis (full width, mm).
    pub fn width(&self) -> f64 {
        2.0 * self.a
    }

    /// Closest boundary point to `q` in the body frame.
    ///
    /// The curve is symmetric about both axes, so the search is folded into
    /// the first quadrant: a coarse scan of the polar angle followed by a
    /// golden-section refinement around each local minimum.
    pub fn closest_point(&self, q: Vec2) -> BoundaryQuery {
        let sx = if q.x < 0.0 { -1.0 } else { 1.0 };
        let sy = if q.y < 0.0 { -1.0 } else { 1.0 };
        let qf = Vec2::new(q.x.abs(), q.y.abs());
        let dist2 = |t: f64| (self.boundary_point(t) - qf).norm_squared();

        let step = FRAC_PI_2 / COARSE_SAMPLES as f64;
        let coarse: Vec<f64> = (0..=COARSE_SAMPLES).map(|i| dist2(i as f64 * step)).collect();
        // boxy shapes can have near-equal minima on two sides; refine each one
        let mut t = 0.0;
        let mut best = f64::INFINITY;
        for i in 0..=COARSE_SAMPLES {
            let left = if i > 0 { coarse[i - 1] } else { f64::INFINITY };
            let right = if i < COARSE_SAMPLES { coarse[i + 1] } else { f64::INFINITY };
            if coarse[i] > left || coarse[i] > right {
                continue;
            }
            let lo = (i as f64 - 1.0).max(0.0) * step;
            let hi = ((i as f64 + 1.0) * step).min(FRAC_PI_2);
            let cand = golden_section(&dist2, lo, hi);
            for c in [cand, i as f64 * step] {
                let d = dist2(c);
                if d < best {
                    best = d;
                    t = c;
                }
            }
        }
        let pf = self.boundary_point(t);
        let point = Vec2::new(sx * pf.x, sy * pf.y);
        let dist = (point - q).norm();
        let signed_distance = if self.contains(q) { -dist } else { dist };
        BoundaryQuery { point, signed_distance }
    }
}

fn golden_section(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..GOLDEN_ITERS {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Unsigned angle between two planar vectors in `[0, pi]`.
pub fn angle_between(u: Vec2, v: Vec2) -> f64 {
    let cross = u.x * v.y - u.y * v.x;
    cross.abs().atan2(u.dot(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Distance to a dense polygon through boundary samples (segment distance,
    /// so flat sides with sparse radial samples stay accurate).
    fn brute_force_distance(s: &Superellipse, q: Vec2, n: usize) -> f64 {
        let pt = |i: usize| s.boundary_point(2.0 * PI * (i % n) as f64 / n as f64);
        (0..n)
            .map(|i| {
                let (a, b) = (pt(i), pt(i + 1));
                let ab = b - a;
                let t = ((q - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                (a + t * ab - q).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn circle_closest_point_is_radial() {
        let c = Superellipse::new(10.0, 10.0, 2.0);
        let q = c.closest_point(Vec2::new(20.0, 0.0));
        assert!((q.signed_distance - 10.0).abs() < 1e-9);
        let q = c.closest_point(Vec2::new(3.0, 4.0));
        assert!((q.signed_distance + 5.0).abs() < 1e-9);
        assert!((q.point - Vec2::new(6.0, 8.0)).norm() < 1e-7);
    }

    #[test]
    fn boundary_points_satisfy_implicit_equation() {
        for &(a, b, p) in &[(10.0, 20.0, 1.0), (15.0, 5.0, 2.0), (30.0, 12.0, 8.0)] {
            let s = Superellipse::new(a, b, p);
            for i in 0..100 {
                let t = i as f64 * 0.0631;
                assert!((s.implicit(s.boundary_point(t)) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn closest_point_agrees_with_dense_sampling() {
        let shapes = [
            Superellipse::new(20.0, 12.0, 2.0),
            Superellipse::new(18.0, 25.0, 4.0),
            Superellipse::new(15.0, 15.0, 1.0),
            Superellipse::new(30.0, 20.0, 8.0),
        ];
        let queries = [
            Vec2::new(30.0, 5.0),
            Vec2::new(-25.0, 18.0),
            Vec2::new(3.0, -40.0),
            Vec2::new(-12.0, -2.0),
        ];
        for s in &shapes {
            for &q in &queries {
                let fast = s.closest_point(q).signed_distance.abs();
                let slow = brute_force_distance(s, q, 400_000);
                assert!((fast - slow).abs() < 1e-5, "{s:?} {q:?}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn angle_between_is_unsigned() {
        assert!((angle_between(Vec2::new(1.0, 0.0), Vec2::new(0.0, -1.0)) - FRAC_PI_2).abs() < 1e-15);
        assert!((angle_between(Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)) - PI).abs() < 1e-15);
    }
}
