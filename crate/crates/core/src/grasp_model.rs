//! Stable-grasp model: synthetic demonstrations, a Gaussian mixture over
//! `[d, alpha, th2, th3, mid2, mid3]` fitted by EM, and mixture regression of
//! the stabilization targets given the fingertip distance `d`.

use crate::config::{FingerConfig, HandConfig};
use crate::control::{object_position, GraspFrame};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::sim::{finger_chain, finger_ik, Finger};
use nalgebra::{SMatrix, SVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

/// Joint dimensionality `[d, alpha, theta_np]`.
pub const DIM: usize = 6;
const OUT: usize = DIM - 1;

pub type VecD = SVector<f64, DIM>;
pub type MatD = SMatrix<f64, DIM, DIM>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoSample {
    /// Fingertip centre distance, mm.
    pub d: f64,
    pub alpha: f64,
    /// `[th2, th3, mid2, mid3]`
    pub theta_np: [f64; 4],
}

impl DemoSample {
    pub fn to_vector(&self) -> VecD {
        VecD::from_column_slice(&[self.d, self.alpha, self.theta_np[0], self.theta_np[1], self.theta_np[2], self.theta_np[3]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableGraspTarget {
    pub alpha: f64,
    pub theta_np: [f64; 4],
    /// `d` lay outside the demonstrated range; the value is extrapolated.
    pub out_of_range: bool,
}

/// A stable grasp configuration solved for one object width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspSolution {
    pub thumb: [f64; 3],
    pub middle: [f64; 3],
    pub contact_thumb: Vec2,
    pub contact_middle: Vec2,
    /// Inward contact normals (from each tip towards the object).
    pub normal_thumb: Vec2,
    pub normal_middle: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub samples: Vec<DemoSample>,
    /// Widths that had no feasible stable grasp.
    pub skipped: usize,
}

/// Sum of log-barrier margins to the joint limits; `-inf` outside.
fn limit_margin(cfg: &FingerConfig, q: &[f64; 3]) -> f64 {
    (0..3)
        .map(|j| {
            let span = cfg.upper[j] - cfg.lower[j];
            let lo = (q[j] - cfg.lower[j]) / span;
            let hi = (cfg.upper[j] - q[j]) / span;
            if lo > 0.0 && hi > 0.0 {
                lo.ln() + hi.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum()
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Place the middle finger antipodal to the thumb across an object of
/// `width`: contact points on one line along the thumb pad normal.
fn antipodal_middle(hand: &HandConfig, thumb: [f64; 3], width: f64) -> Option<GraspSolution> {
    let r = hand.tip_radius;
    let (_, tip) = finger_chain(&hand.fingers[Finger::Thumb.index()], thumb);
    let n = tip.pad;
    let target = tip.center + (width + 2.0 * r) * n;
    let mid_cfg = &hand.fingers[Finger::Middle.index()];
    // middle pad = (-sin(h + s*pad), cos(h + s*pad)) must equal -n
    let s = mid_cfg.flex_sign;
    let heading = n.x.atan2(-n.y) - s * mid_cfg.pad_angle;
    let mut q = finger_ik(mid_cfg, target, heading)?;
    q[2] = wrap_angle(q[2]);
    q[0] = wrap_angle(q[0]);
    Some(GraspSolution {
        thumb,
        middle: q,
        contact_thumb: tip.center + r * n,
        contact_middle: tip.center + (r + width) * n,
        normal_thumb: n,
        normal_middle: -n,
    })
}

fn grasp_score(hand: &HandConfig, thumb: [f64; 3], width: f64) -> (f64, Option<GraspSolution>) {
    let th_cfg = &hand.fingers[Finger::Thumb.index()];
    let m_th = limit_margin(th_cfg, &thumb);
    if !m_th.is_finite() {
        return (f64::NEG_INFINITY, None);
    }
    match antipodal_middle(hand, thumb, width) {
        None => (f64::NEG_INFINITY, None),
        Some(sol) => {
            let m = m_th + limit_margin(&hand.fingers[Finger::Middle.index()], &sol.middle);
            // object centre must sit above the palm
            let centre = 0.5 * (sol.contact_thumb + sol.contact_middle);
            if !m.is_finite() || centre.y <= hand.tip_radius {
                (f64::NEG_INFINITY, None)
            } else {
                (m, Some(sol))
            }
        }
    }
}

/// Open-hand gap between the thumb and middle tip surfaces.
pub fn open_gap(hand: &HandConfig) -> f64 {
    let th = finger_chain(&hand.fingers[0], hand.fingers[0].open).1.center;
    let mid = finger_chain(&hand.fingers[1], hand.fingers[1].open).1.center;
    (mid - th).norm() - 2.0 * hand.tip_radius
}

/// Antipodal grasp of an object of `width` with the largest joint-limit margin.
pub fn solve_stable_grasp(hand: &HandConfig, width: f64) -> Option<GraspSolution> {
    if !(width > 0.0) || width >= open_gap(hand) {
        return None;
    }
    let cfg = &hand.fingers[Finger::Thumb.index()];
    const GRID: usize = 12;
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for i in 1..GRID {
        for j in 1..GRID {
            for k in 1..GRID {
                let idx = [i, j, k];
                let q: [f64; 3] = std::array::from_fn(|a| cfg.lower[a] + (cfg.upper[a] - cfg.lower[a]) * idx[a] as f64 / GRID as f64);
                let (s, _) = grasp_score(hand, q, width);
                if s > best.0 {
                    best = (s, q);
                }
            }
        }
    }
    if !best.0.is_finite() {
        return None;
    }
    // compass search refinement
    let mut step = 0.05;
    let (mut score, mut q) = best;
    while step > 1e-10 {
        let mut improved = false;
        for a in 0..3 {
            for sign in [1.0, -1.0] {
                let mut c = q;
                c[a] += sign * step;
                let (s, _) = grasp_score(hand, c, width);
                if s > score {
                    score = s;
                    q = c;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    grasp_score(hand, q, width).1
}

/// Demonstration record from a solved grasp.
pub fn demo_from_solution(hand: &HandConfig, sol: &GraspSolution) -> Result<DemoSample> {
    let th = finger_chain(&hand.fingers[0], sol.thumb).1.center;
    let mid = finger_chain(&hand.fingers[1], sol.middle).1.center;
    let frame = grasp_frame(hand);
    Ok(DemoSample {
        d: (mid - th).norm(),
        alpha: object_position(sol.contact_thumb, sol.contact_middle, &frame)?,
        theta_np: [sol.thumb[1], sol.thumb[2], sol.middle[1], sol.middle[2]],
    })
}

/// Frame anchored at the thumb and middle bases.
pub fn grasp_frame(hand: &HandConfig) -> GraspFrame {
    let b = |f: Finger| {
        let c = &hand.fingers[f.index()].base;
        Vec2::new(c[0], c[1])
    };
    GraspFrame::new(b(Finger::Thumb), b(Finger::Middle))
}

/// Synthetic stable-grasp demonstrations over widths drawn uniformly from
/// `widths`. `noise` jitters the thumb joints (rad) away from the max-margin
/// optimum before the middle finger is re-solved, so every sample stays antipodal.
pub fn generate_demonstrations<R: Rng + ?Sized>(
    hand: &HandConfig,
    n: usize,
    widths: (f64, f64),
    noise: f64,
    rng: &mut R,
) -> Result<DemoSet> {
    if n == 0 || !(widths.0 > 0.0 && widths.1 >= widths.0) || !(noise >= 0.0) {
        return Err(Error::Domain(format!("bad demonstration request n={n} widths={widths:?} noise={noise}")));
    }
    let mut samples = Vec::with_capacity(n);
    let mut skipped = 0;
    for _ in 0..n {
        let w = if widths.1 > widths.0 { rng.gen_range(widths.0..=widths.1) } else { widths.0 };
        let Some(base) = solve_stable_grasp(hand, w) else {
            skipped += 1;
            continue;
        };
        let mut sol = None;
        for _ in 0..8 {
            let thumb = base.thumb.map(|q| q + noise * rng.sample::<f64, _>(StandardNormal));
            if let (s, Some(found)) = grasp_score(hand, thumb, w) {
                if s.is_finite() {
                    sol = Some(found);
                    break;
                }
            }
        }
        match sol {
            Some(s) => samples.push(demo_from_solution(hand, &s)?),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} demonstration widths had no feasible stable grasp");
    }
    Ok(DemoSet { samples, skipped })
}

/// Mixture over `[d, alpha, theta_np]`, stored in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<VecD>,
    pub covs: Vec<MatD>,
    /// Standardization used during fitting.
    pub shift: VecD,
    pub scale: VecD,
    /// Range of `d` seen in training.
    pub d_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Log-likelihood (standardized space) before each M-step and after the last.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub reseeded: usize,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log N(x; mu, cov)` via Cholesky. `None` if `cov` is not positive-definite.
fn log_normal<const N: usize>(x: &SVector<f64, N>, mu: &SVector<f64, N>, cov: &SMatrix<f64, N, N>) -> Option<f64> {
    let chol = cov.cholesky()?;
    let diff = x - mu;
    let z = chol.l().solve_lower_triangular(&diff)?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(-0.5 * (N as f64 * LN_2PI + log_det + z.norm_squared()))
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Components {
    weights: Vec<f64>,
    means: Vec<VecD>,
    covs: Vec<MatD>,
}

impl Components {
    /// Per-sample log joint densities `log w_k + log N_k`.
    fn log_joint(&self, x: &VecD) -> Vec<f64> {
        (0..self.weights.len())
            .map(|k| self.weights[k].ln() + log_normal(x, &self.means[k], &self.covs[k]).expect("covariance is regularized"))
            .collect()
    }

    fn log_likelihood(&self, xs: &[VecD]) -> f64 {
        xs.iter().map(|x| log_sum_exp(&self.log_joint(x))).sum()
    }
}

/// Weighted mean and covariance (MLE) plus `eps` on the diagonal.
fn moments(xs: &[VecD], resp: &[f64], eps: f64) -> (f64, VecD, MatD) {
    let mass: f64 = resp.iter().sum();
    let mean = xs.iter().zip(resp).fold(VecD::zeros(), |acc, (x, r)| acc + *r * x) / mass;
    let mut cov = xs.iter().zip(resp).fold(MatD::zeros(), |acc, (x, r)| {
        let d = x - mean;
        acc + *r * d * d.transpose()
    }) / mass;
    cov = 0.5 * (cov + cov.transpose());
    cov += MatD::identity() * eps;
    (mass, mean, cov)
}

/// k-means++ seeding followed by Lloyd iterations; returns hard labels.
fn kmeans_labels<R: Rng + ?Sized>(xs: &[VecD], k: usize, rng: &mut R) -> Vec<usize> {
    let mut centres = vec![xs[rng.gen_range(0..xs.len())]];
    while centres.len() < k {
        let d2: Vec<f64> = xs
            .iter()
            .map(|x| centres.iter().map(|c| (x - c).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = xs.len() - 1;
            for (i, v) in d2.iter().enumerate() {
                if u < *v {
                    pick = i;
                    break;
                }
                u -= v;
            }
            pick
        } else {
            rng.gen_range(0..xs.len())
        };
        centres.push(xs[next]);
    }
    let mut labels = vec![0; xs.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, x) in xs.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| (x - centres[a]).norm_squared().total_cmp(&(x - centres[b]).norm_squared()))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<&VecD> = xs.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(x, _)| x).collect();
            if !members.is_empty() {
                *centre = members.iter().fold(VecD::zeros(), |a, x| a + *x) / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

fn standardize(samples: &[DemoSample]) -> (VecD, VecD, Vec<VecD>) {
    let raw: Vec<VecD> = samples.iter().map(DemoSample::to_vector).collect();
    let n = raw.len() as f64;
    let shift = raw.iter().fold(VecD::zeros(), |a, x| a + x) / n;
    let var = raw.iter().fold(VecD::zeros(), |a, x| a + (x - shift).component_mul(&(x - shift))) / n;
    let scale = var.map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    let xs = raw.iter().map(|x| (x - shift).component_div(&scale)).collect();
    (shift, scale, xs)
}

/// EM fit. Data are standardized per dimension; `eps` regularizes the
/// covariance diagonal in that space. Returns the model and its trace.
pub fn fit_gmm_traced<R: Rng + ?Sized>(
    samples: &[DemoSample],
    k: usize,
    rng: &mut R,
    max_iter: usize,
    tol: f64,
    eps: f64,
) -> Result<(Gmm, FitTrace)> {
    if k == 0 || samples.len() < 10 * k {
        return Err(Error::Insufficient(format!("{} samples for K={k} (need {})", samples.len(), 10 * k)));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain("covariance regularization must be positive".into()));
    }
    let (shift, scale, xs) = standardize(samples);
    let n = xs.len();

    let labels = kmeans_labels(&xs, k, rng);
    let mut comp = Components {
        weights: Vec::with_capacity(k),
        means: Vec::with_capacity(k),
        covs: Vec::with_capacity(k),
    };
    let mut reseeded = 0;
    for c in 0..k {
        let mut resp: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
        if resp.iter().sum::<f64>() == 0.0 {
            resp[rng.gen_range(0..n)] = 1.0;
            reseeded += 1;
        }
        let (mass, mean, _) = moments(&xs, &resp, eps);
        comp.weights.push(mass / n as f64);
        comp.means.push(mean);
        // start from the pooled covariance so singleton clusters stay well-posed
        comp.covs.push(moments(&xs, &vec![1.0; n], eps).2);
    }
    let wsum: f64 = comp.weights.iter().sum();
    comp.weights.iter_mut().for_each(|w| *w /= wsum);

    let mut trace = vec![comp.log_likelihood(&xs)];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        // E-step
        let resp: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let lj = comp.log_joint(x);
                let z = log_sum_exp(&lj);
                lj.iter().map(|v| (v - z).exp()).collect()
            })
            .collect();
        // M-step
        for c in 0..k {
            let r: Vec<f64> = resp.iter().map(|row| row[c]).collect();
            if r.iter().sum::<f64>() < 1e-10 {
                log::warn!("mixture component {c} lost all responsibility; re-seeding");
                reseeded += 1;
                let worst = (0..n)
                    .min_by(|&a, &b| log_sum_exp(&comp.log_joint(&xs[a])).total_cmp(&log_sum_exp(&comp.log_joint(&xs[b]))))
                    .unwrap();
                comp.means[c] = xs[worst];
                comp.covs[c] = moments(&xs, &vec![1.0; n], eps).2;
                comp.weights[c] = 1.0 / n as f64;
                continue;
            }
            let (mass, mean, cov) = moments(&xs, &r, eps);
            comp.weights[c] = mass / n as f64;
            comp.means[c] = mean;
            comp.covs[c] = cov;
        }
        let wsum: f64 = comp.weights.iter().sum();
        comp.weights.iter_mut().for_each(|w| *w /= wsum);
        let ll = comp.log_likelihood(&xs);
        let gain = ll - trace.last().unwrap();
        trace.push(ll);
        if gain.abs() < tol * ll.abs().max(1.0) {
            break;
        }
    }

    let s = MatD::from_diagonal(&scale);
    let gmm = Gmm {
        weights: comp.weights,
        means: comp.means.iter().map(|m| m.component_mul(&scale) + shift).collect(),
        covs: comp.covs.iter().map(|c| s * c * s).collect(),
        shift,
        scale,
        d_range: samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.d), hi.max(s.d))),
    };
    Ok((
        gmm,
        FitTrace {
            log_likelihood: trace,
            iterations,
            reseeded,
        },
    ))
}

pub fn fit_gmm<R: Rng + ?Sized>(samples: &[DemoSample], k: usize, rng: &mut R, max_iter: usize, tol: f64, eps: f64) -> Result<Gmm> {
    fit_gmm_traced(samples, k, rng, max_iter, tol, eps).map(|(g, _)| g)
}

impl Gmm {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn log_joint(&self, x: &VecD) -> Vec<f64> {
        (0..self.components())
            .map(|k| self.weights[k].ln() + log_normal(x, &self.means[k], &self.covs[k]).unwrap_or(f64::NEG_INFINITY))
            .collect()
    }
}

/// `sum_i log sum_k w_k N(x_i; mu_k, Sigma_k)` in original units.
///
/// The outer sum is correctly rounded, so it does not depend on sample order.
pub fn log_likelihood(gmm: &Gmm, samples: &[DemoSample]) -> f64 {
    exact_sum(samples.iter().map(|s| log_sum_exp(&gmm.log_joint(&s.to_vector()))))
}

/// Correctly rounded floating-point sum (Shewchuk partials).
fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // round-half-even correction from the top partials
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Mixture regression of `(alpha, theta_np)` given `d`.
pub fn regress(gmm: &Gmm, d: f64) -> Result<StableGraspTarget> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("fingertip distance must be positive, got {d}")));
    }
    let k = gmm.components();
    let log_h: Vec<f64> = (0..k)
        .map(|c| {
            let var = gmm.covs[c][(0, 0)];
            let mu = gmm.means[c][0];
            gmm.weights[c].ln() - 0.5 * (LN_2PI + var.ln() + (d - mu) * (d - mu) / var)
        })
        .collect();
    let z = log_sum_exp(&log_h);
    let mut out = SVector::<f64, OUT>::zeros();
    for c in 0..k {
        let h = (log_h[c] - z).exp();
        let mu = &gmm.means[c];
        let cov = &gmm.covs[c];
        let gain = (d - mu[0]) / cov[(0, 0)];
        let cond = SVector::<f64, OUT>::from_fn(|i, _| mu[i + 1] + cov[(i + 1, 0)] * gain);
        out += h * cond;
    }
    let span = (gmm.d_range.1 - gmm.d_range.0).max(1e-9);
    let out_of_range = d < gmm.d_range.0 - 0.1 * span || d > gmm.d_range.1 + 0.1 * span;
    if out_of_range {
        log::warn!("regressing at d = {d} outside the demonstrated range {:?}", gmm.d_range);
    }
    Ok(StableGraspTarget {
        alpha: out[0].clamp(0.0, PI),
        theta_np: [out[1], out[2], out[3], out[4]],
        out_of_range,
    })
}

/// Pick K in `1..=k_max` by log-likelihood on a held-out quarter of the samples.
pub fn select_k<R: Rng + ?Sized>(
    samples: &[DemoSample],
    k_max: usize,
    rng: &mut R,
    max_iter: usize,
    tol: f64,
    eps: f64,
) -> Result<(usize, Vec<(usize, f64)>)> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(rng);
    let n_test = samples.len() / 4;
    let test: Vec<DemoSample> = idx[..n_test].iter().map(|&i| samples[i]).collect();
    let train: Vec<DemoSample> = idx[n_test..].iter().map(|&i| samples[i]).collect();
    if test.is_empty() {
        return Err(Error::Insufficient("too few samples to hold out".into()));
    }
    let mut scores = Vec::new();
    for k in 1..=k_max {
        if train.len() < 10 * k {
            break;
        }
        let g = fit_gmm(&train, k, rng, max_iter, tol, eps)?;
        scores.push((k, log_likelihood(&g, &test)));
    }
    let best = scores
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|s| s.0)
        .ok_or_else(|| Error::Insufficient("no K could be fitted".into()))?;
    Ok((best, scores))
}

const GMM_SCHEMA: &str = "haptic-gmm/1";
const DEMO_SCHEMA: &str = "haptic-demos/1";

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats(line: Option<&str>, key: &str, n: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| Error::Format(format!("missing `{key}` line")))?;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::Format(format!("expected `{key}`, found `{line}`")))?;
    let vals: Vec<f64> = rest
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("{key}: {e}"))))
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(Error::Format(format!("{key}: expected {n} values, got {}", vals.len())));
    }
    Ok(vals)
}

impl Gmm {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "schema={GMM_SCHEMA}").unwrap();
        writeln!(s, "components {}", self.components()).unwrap();
        writeln!(s, "d_range {}", join([self.d_range.0, self.d_range.1])).unwrap();
        writeln!(s, "shift {}", join(self.shift.iter().copied())).unwrap();
        writeln!(s, "scale {}", join(self.scale.iter().copied())).unwrap();
        for k in 0..self.components() {
            writeln!(s, "weight {}", self.weights[k]).unwrap();
            writeln!(s, "mean {}", join(self.means[k].iter().copied())).unwrap();
            // row-major
            writeln!(s, "cov {}", join(self.covs[k].transpose().iter().copied())).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(l) if l.trim() == format!("schema={GMM_SCHEMA}") => {}
            other => return Err(Error::Format(format!("unsupported model header {other:?}"))),
        }
        let k = parse_floats(lines.next(), "components", 1)?[0];
        if !(k >= 1.0 && k.fract() == 0.0) {
            return Err(Error::Format(format!("bad component count {k}")));
        }
        let r = parse_floats(lines.next(), "d_range", 2)?;
        let shift = VecD::from_vec(parse_floats(lines.next(), "shift", DIM)?);
        let scale = VecD::from_vec(parse_floats(lines.next(), "scale", DIM)?);
        let mut g = Gmm {
            weights: vec![],
            means: vec![],
            covs: vec![],
            shift,
            scale,
            d_range: (r[0], r[1]),
        };
        for _ in 0..k as usize {
            g.weights.push(parse_floats(lines.next(), "weight", 1)?[0]);
            g.means.push(VecD::from_vec(parse_floats(lines.next(), "mean", DIM)?));
            g.covs.push(MatD::from_row_slice(&parse_floats(lines.next(), "cov", DIM * DIM)?));
        }
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w > 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Format("mixture weights must be positive and sum to 1".into()));
        }
        for c in &self.covs {
            if (c - c.transpose()).abs().max() > 1e-9 * c.abs().max() || c.cholesky().is_none() {
                return Err(Error::Format("covariance is not symmetric positive-definite".into()));
            }
        }
        Ok(())
    }
}

pub fn demos_to_text(samples: &[DemoSample]) -> String {
    let mut s = format!("# schema={DEMO_SCHEMA}\nd,alpha,th2,th3,mid2,mid3\n");
    for d in samples {
        let v = d.to_vector();
        writeln!(s, "{}", v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")).unwrap();
    }
    s
}

pub fn demos_from_text(text: &str) -> Result<Vec<DemoSample>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(&format!("# schema={DEMO_SCHEMA}")) {
        return Err(Error::Format("unsupported demonstration header".into()));
    }
    lines.next();
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Format(format!("demo row: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != DIM {
                return Err(Error::IncompleteRecord(format!("demo row has {} fields", v.len())));
            }
            Ok(DemoSample {
                d: v[0],
                alpha: v[1],
                theta_np: [v[2], v[3], v[4], v[5]],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::geometry::angle_between;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn hand() -> HandConfig {
        Config::default().hand
    }

    /// Independent stability check: anti-parallel normals within 2 degrees and
    /// contact points on each other's line of action within 0.1 mm.
    fn verify_stable(h: &HandConfig, sol: &GraspSolution) -> bool {
        let (_, th) = finger_chain(&h.fingers[0], sol.thumb);
        let (_, mid) = finger_chain(&h.fingers[1], sol.middle);
        let normal_angle = PI - angle_between(th.pad, mid.pad);
        let chord = (mid.center + h.tip_radius * mid.pad) - (th.center + h.tip_radius * th.pad);
        let n = th.pad;
        let moment_arm = (chord.x * n.y - chord.y * n.x).abs();
        normal_angle < 2f64.to_radians() && moment_arm < 0.1 && chord.dot(&n) > 0.0
    }

    fn gaussian_samples(n: usize, seed: u64, mean: VecD, sd: VecD) -> Vec<DemoSample> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let v = VecD::from_fn(|i, _| mean[i] + sd[i] * r.sample::<f64, _>(StandardNormal));
                DemoSample {
                    d: v[0],
                    alpha: v[1],
                    theta_np: [v[2], v[3], v[4], v[5]],
                }
            })
            .collect()
    }

    #[test]
    fn open_hand_width_is_infeasible() {
        let h = hand();
        let gap = open_gap(&h);
        assert!(solve_stable_grasp(&h, gap).is_none());
        let set = generate_demonstrations(&h, 5, (gap, gap), 0.0, &mut rng(1)).unwrap();
        assert_eq!(set.skipped, 5);
        assert!(set.samples.is_empty());
    }

    #[test]
    fn fixed_width_without_noise_repeats() {
        let set = generate_demonstrations(&hand(), 6, (40.0, 40.0), 0.0, &mut rng(2)).unwrap();
        assert_eq!(set.samples.len(), 6);
        assert!(set.samples.iter().all(|s| *s == set.samples[0]));
    }

    #[test]
    fn demonstrations_pass_geometric_verifier() {
        let h = hand();
        let mut r = rng(3);
        for _ in 0..20 {
            let w = r.gen_range(14.0..72.0);
            let sol = solve_stable_grasp(&h, w).expect("catalog widths are reachable");
            assert!(verify_stable(&h, &sol), "width {w}");
            let demo = demo_from_solution(&h, &sol).unwrap();
            assert!((demo.d - (w + 2.0 * h.tip_radius)).abs() < 1e-6);
            assert!((0.0..=PI).contains(&demo.alpha));
            let mut q = crate::sim::JointVector::open(&h);
            q.set_finger(Finger::Thumb, sol.thumb);
            q.set_finger(Finger::Middle, sol.middle);
            assert!(q.within_limits(&h));
        }
    }

    #[test]
    fn noisy_demonstrations_stay_within_limits() {
        let h = hand();
        let set = generate_demonstrations(&h, 40, (14.0, 72.0), 0.005, &mut rng(4)).unwrap();
        assert_eq!(set.skipped, 0);
        for s in &set.samples {
            assert!(s.d > 0.0 && (0.0..=PI).contains(&s.alpha));
            let th = &h.fingers[0];
            let mid = &h.fingers[1];
            assert!(s.theta_np[0] > th.lower[1] && s.theta_np[0] < th.upper[1]);
            assert!(s.theta_np[1] > th.lower[2] && s.theta_np[1] < th.upper[2]);
            assert!(s.theta_np[2] > mid.lower[1] && s.theta_np[2] < mid.upper[1]);
            assert!(s.theta_np[3] > mid.lower[2] && s.theta_np[3] < mid.upper[2]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_demonstrations(&hand(), 20, (14.0, 72.0), 0.005, &mut rng(5)).unwrap();
        let b = generate_demonstrations(&hand(), 20, (14.0, 72.0), 0.005, &mut rng(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_component_is_sample_moments() {
        let xs = gaussian_samples(60, 7, VecD::from_column_slice(&[50.0, 1.5, 0.4, 0.3, 0.5, 0.2]), VecD::from_column_slice(&[8.0, 0.2, 0.1, 0.05, 0.1, 0.07]));
        let eps = 1e-6;
        let g = fit_gmm(&xs, 1, &mut rng(0), 50, 1e-12, eps).unwrap();
        let n = xs.len() as f64;
        let raw: Vec<VecD> = xs.iter().map(DemoSample::to_vector).collect();
        let mean = raw.iter().fold(VecD::zeros(), |a, x| a + x) / n;
        let mut cov = MatD::zeros();
        for x in &raw {
            for i in 0..DIM {
                for j in 0..DIM {
                    cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / n;
                }
            }
        }
        // eps sits on the standardized diagonal, i.e. eps * var_i in data units
        for i in 0..DIM {
            cov[(i, i)] += eps * cov[(i, i)];
        }
        assert!((g.means[0] - mean).abs().max() < 1e-10);
        assert!((g.covs[0] - cov).abs().max() < 1e-10, "{}", (g.covs[0] - cov).abs().max());
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn recovers_gaussian_mean_within_three_sigma() {
        let sd = VecD::from_column_slice(&[5.0, 0.3, 0.2, 0.1, 0.2, 0.1]);
        let mu = VecD::from_column_slice(&[40.0, 1.2, 0.5, 0.4, 0.3, 0.6]);
        let n = 400;
        let xs = gaussian_samples(n, 11, mu, sd);
        let g = fit_gmm(&xs, 1, &mut rng(0), 50, 1e-10, 1e-6).unwrap();
        for i in 0..DIM {
            assert!((g.means[0][i] - mu[i]).abs() < 3.0 * sd[i] / (n as f64).sqrt());
        }
    }

    fn two_clusters(seed: u64) -> Vec<DemoSample> {
        let mut xs = gaussian_samples(80, seed, VecD::from_column_slice(&[30.0, 1.2, 0.3, 0.2, 0.4, 0.3]), VecD::from_column_slice(&[2.0, 0.05, 0.05, 0.04, 0.05, 0.03]));
        xs.extend(gaussian_samples(60, seed + 1, VecD::from_column_slice(&[60.0, 1.8, 0.7, 0.5, 0.2, 0.6]), VecD::from_column_slice(&[3.0, 0.08, 0.04, 0.05, 0.06, 0.04])));
        xs
    }

    #[test]
    fn em_log_likelihood_never_decreases() {
        for k in 1..=4 {
            let (_, trace) = fit_gmm_traced(&two_clusters(20 + k as u64), k, &mut rng(k as u64), 60, 0.0, 1e-6).unwrap();
            assert!(trace.iterations >= 50);
            for w in trace.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "K={k}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn weights_stay_on_simplex() {
        let g = fit_gmm(&two_clusters(3), 3, &mut rng(9), 100, 1e-10, 1e-6).unwrap();
        assert!(g.weights.iter().all(|w| *w > 0.0));
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        g.validate().unwrap();
    }

    #[test]
    fn density_at_mean() {
        let g = fit_gmm(&gaussian_samples(30, 4, VecD::repeat(1.0), VecD::repeat(0.5)), 1, &mut rng(0), 20, 1e-12, 1e-6).unwrap();
        let m = g.means[0];
        let s = DemoSample {
            d: m[0],
            alpha: m[1],
            theta_np: [m[2], m[3], m[4], m[5]],
        };
        let expected = -0.5 * (6.0 * (2.0 * PI).ln() + g.covs[0].determinant().ln());
        assert!((log_likelihood(&g, &[s]) - expected).abs() < 1e-10);
    }

    #[test]
    fn likelihood_is_additive() {
        let xs = two_clusters(5);
        let g = fit_gmm(&xs, 2, &mut rng(1), 100, 1e-10, 1e-6).unwrap();
        let mut twice = xs.clone();
        twice.extend_from_slice(&xs);
        assert_eq!(log_likelihood(&g, &twice), 2.0 * log_likelihood(&g, &xs));
    }

    /// Direct evaluation: explicit inverse and determinant, plain sum of densities.
    fn naive_log_likelihood(g: &Gmm, xs: &[DemoSample]) -> f64 {
        xs.iter()
            .map(|s| {
                let x = s.to_vector();
                let p: f64 = (0..g.components())
                    .map(|k| {
                        let d = x - g.means[k];
                        let inv = g.covs[k].try_inverse().unwrap();
                        let q = (d.transpose() * inv * d)[0];
                        g.weights[k] * (-0.5 * q).exp() / ((2.0 * PI).powi(6) * g.covs[k].determinant()).sqrt()
                    })
                    .sum();
                p.ln()
            })
            .sum()
    }

    #[test]
    fn likelihood_matches_direct_summation() {
        let xs = two_clusters(6);
        let g = fit_gmm(&xs, 2, &mut rng(2), 100, 1e-10, 1e-6).unwrap();
        let a = log_likelihood(&g, &xs);
        let b = naive_log_likelihood(&g, &xs);
        assert!((a - b).abs() < 1e-9 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn single_component_regression_is_linear_gaussian() {
        let xs = gaussian_samples(80, 8, VecD::from_column_slice(&[45.0, 1.4, 0.3, 0.3, 0.4, 0.2]), VecD::from_column_slice(&[6.0, 0.2, 0.1, 0.1, 0.1, 0.1]));
        let g = fit_gmm(&xs, 1, &mut rng(0), 10, 1e-12, 1e-6).unwrap();
        let (mu, cov) = (g.means[0], g.covs[0]);
        for d in [30.0, 45.0, 61.5] {
            let out = regress(&g, d).unwrap();
            let want: Vec<f64> = (1..DIM).map(|i| mu[i] + cov[(i, 0)] / cov[(0, 0)] * (d - mu[0])).collect();
            assert!((out.alpha - want[0]).abs() < 1e-10);
            for j in 0..4 {
                assert!((out.theta_np[j] - want[j + 1]).abs() < 1e-10);
            }
        }
    }

    fn synthetic_two_component() -> Gmm {
        let mut c1 = MatD::identity() * 0.01;
        c1[(0, 0)] = 4.0;
        c1[(0, 1)] = 0.1;
        c1[(1, 0)] = 0.1;
        c1[(0, 2)] = -0.05;
        c1[(2, 0)] = -0.05;
        let mut c2 = MatD::identity() * 0.02;
        c2[(0, 0)] = 9.0;
        c2[(0, 1)] = -0.2;
        c2[(1, 0)] = -0.2;
        c2[(0, 4)] = 0.1;
        c2[(4, 0)] = 0.1;
        Gmm {
            weights: vec![0.4, 0.6],
            means: vec![
                VecD::from_column_slice(&[30.0, 1.0, 0.2, 0.3, 0.4, 0.5]),
                VecD::from_column_slice(&[36.0, 2.0, 0.6, 0.1, 0.2, 0.3]),
            ],
            covs: vec![c1, c2],
            shift: VecD::zeros(),
            scale: VecD::repeat(1.0),
            d_range: (20.0, 50.0),
        }
    }

    /// E[y_j | d] by integrating the (d, y_j) marginal of each component on a grid.
    fn quadrature_mean(g: &Gmm, d: f64, j: usize) -> f64 {
        let lo = g.means.iter().map(|m| m[j]).fold(f64::INFINITY, f64::min) - 3.0;
        let hi = g.means.iter().map(|m| m[j]).fold(f64::NEG_INFINITY, f64::max) + 3.0;
        let n = 60_000;
        let h = (hi - lo) / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let y = lo + h * i as f64;
            let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
            let p: f64 = (0..g.components())
                .map(|k| {
                    let (sdd, syy, sdy) = (g.covs[k][(0, 0)], g.covs[k][(j, j)], g.covs[k][(0, j)]);
                    let det = sdd * syy - sdy * sdy;
                    let (a, b) = (d - g.means[k][0], y - g.means[k][j]);
                    let q = (syy * a * a - 2.0 * sdy * a * b + sdd * b * b) / det;
                    g.weights[k] * (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
                })
                .sum();
            num += wt * y * p;
            den += wt * p;
        }
        num / den
    }

    #[test]
    fn two_component_regression_matches_quadrature() {
        let g = synthetic_two_component();
        for d in [28.0, 32.5, 35.0, 40.0] {
            let out = regress(&g, d).unwrap();
            let got = [out.alpha, out.theta_np[0], out.theta_np[1], out.theta_np[2], out.theta_np[3]];
            for j in 1..DIM {
                let q = quadrature_mean(&g, d, j);
                assert!((got[j - 1] - q).abs() < 1e-4, "d={d} dim {j}: {} vs {q}", got[j - 1]);
            }
        }
    }

    #[test]
    fn conditioning_at_isolated_mean() {
        let mut g = synthetic_two_component();
        g.means[1][0] = 300.0;
        g.d_range = (0.0, 400.0);
        let out = regress(&g, 30.0).unwrap();
        assert!((out.alpha - 1.0).abs() < 1e-6);
        assert!((out.theta_np[0] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn far_query_is_flagged() {
        let g = synthetic_two_component();
        assert!(!regress(&g, 35.0).unwrap().out_of_range);
        assert!(regress(&g, 500.0).unwrap().out_of_range);
        assert!(regress(&g, 0.0).is_err());
    }

    #[test]
    fn too_few_samples_rejected() {
        let xs = two_clusters(1);
        assert!(matches!(fit_gmm(&xs[..25], 3, &mut rng(0), 10, 1e-8, 1e-6), Err(Error::Insufficient(_))));
    }

    #[test]
    fn fit_is_deterministic_and_round_trips() {
        let xs = two_clusters(2);
        let a = fit_gmm(&xs, 3, &mut rng(5), 100, 1e-10, 1e-6).unwrap();
        let b = fit_gmm(&xs, 3, &mut rng(5), 100, 1e-10, 1e-6).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let back = Gmm::from_text(&a.to_text()).unwrap();
        assert_eq!(back, a);
        assert!(Gmm::from_text(&a.to_text().replacen("haptic-gmm/1", "haptic-gmm/9", 1)).is_err());
    }

    #[test]
    fn demo_text_round_trips() {
        let set = generate_demonstrations(&hand(), 12, (14.0, 72.0), 0.005, &mut rng(6)).unwrap();
        let back = demos_from_text(&demos_to_text(&set.samples)).unwrap();
        assert_eq!(back, set.samples);
    }

    #[test]
    fn select_k_prefers_two_for_two_clusters() {
        let (k, scores) = select_k(&two_clusters(12), 5, &mut rng(3), 200, 1e-10, 1e-6).unwrap();
        assert!(k >= 2, "{scores:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn regression_is_continuous(d in 22.0f64..48.0) {
            let g = synthetic_two_component();
            let h = 1e-6;
            let a = regress(&g, d).unwrap();
            let b = regress(&g, d + h).unwrap();
            prop_assert!((a.alpha - b.alpha).abs() < 1e-3);
            for j in 0..4 {
                prop_assert!((a.theta_np[j] - b.theta_np[j]).abs() < 1e-3);
            }
        }

        #[test]
        fn dominant_weight_reduces_to_single_component(d in 27.0f64..33.0) {
            let mut g = synthetic_two_component();
            g.weights = vec![1.0 - 1e-15, 1e-15];
            let out = regress(&g, d).unwrap();
            let (mu, cov) = (g.means[0], g.covs[0]);
            let want = mu[1] + cov[(1, 0)] / cov[(0, 0)] * (d - mu[0]);
            prop_assert!((out.alpha - want.clamp(0.0, PI)).abs() < 1e-9);
        }
    }
}
