//! Rao-Blackwellized particle filter: every agent particle carries its own
//! particle set per landmark.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::{predict_point, predict_virtual, Predicted};
use crate::environment::Vec3;

/// How the amplitude weight ρ of an MPC enters the landmark likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// ρ multiplies the likelihood.
    #[default]
    Multiplicative,
    /// ρ is the exponent of the likelihood.
    Tempered,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub agent_particles: usize,
    pub landmark_particles: usize,
    /// Acceleration noise variance q, m²/s⁴.
    pub accel_noise: f64,
    pub rho: RhoMode,
    /// Added in quadrature to each MPC's reported path-length deviation.
    pub length_floor: f64,
    /// Added in quadrature to each MPC's reported angle deviation, rad.
    pub angle_floor: f64,
    /// Jitter after resampling a landmark set, as a fraction of its spread.
    pub roughening: f64,
    pub min_roughening: f64,
    /// Keep the agent at its known antenna height.
    pub planar: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            agent_particles: 200,
            landmark_particles: 600,
            accel_noise: 0.01,
            rho: RhoMode::Multiplicative,
            length_floor: 0.002,
            angle_floor: 0.2f64.to_radians(),
            roughening: 0.1,
            min_roughening: 0.0005,
            planar: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkParticle {
    pub position: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub particles: Vec<LandmarkParticle>,
}

impl LandmarkSet {
    pub fn uniform(positions: Vec<Vec3>) -> Self {
        let w = 1.0 / positions.len().max(1) as f64;
        Self {
            particles: positions
                .into_iter()
                .map(|position| LandmarkParticle {
                    position,
                    weight: w,
                })
                .collect(),
        }
    }

    pub fn mean(&self) -> Vec3 {
        self.particles.iter().map(|p| p.position * p.weight).sum()
    }

    pub fn spread(&self) -> f64 {
        let m = self.mean();
        self.particles
            .iter()
            .map(|p| p.weight * (p.position - m).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParticle {
    pub position: Vec3,
    pub velocity: Vec3,
    pub weight: f64,
    /// One set per filter landmark slot.
    pub sets: Vec<LandmarkSet>,
}

/// How a landmark slot maps particle positions to observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotModel {
    Point,
    /// Mirror image whose first leg ends at the landmark of slot `source`.
    Virtual {
        source: usize,
    },
}

/// One MPC as the filter sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub length: f64,
    pub dir: Vec3,
    pub sigma_length: f64,
    pub sigma_angle: f64,
    pub rho: f64,
}

impl Measurement {
    /// Gaussian log-density of the residual in (path length, azimuth,
    /// elevation), each with its own deviation.
    fn log_likelihood(&self, p: &Predicted, basis: &(Vec3, Vec3, f64)) -> (f64, f64) {
        let (e_az, e_el, cos_el) = basis;
        let r = p.dir - self.dir;
        let d_az = r.dot(e_az) / cos_el;
        let d_el = r.dot(e_el);
        let d_len = p.length - self.length;
        let chi = (d_len / self.sigma_length).powi(2)
            + (d_az * d_az + d_el * d_el) / self.sigma_angle.powi(2);
        let norm = -(self.sigma_length * self.sigma_angle * self.sigma_angle).ln()
            - 1.5 * (2.0 * std::f64::consts::PI).ln();
        (norm - 0.5 * chi, chi)
    }

    /// Unit azimuth and elevation tangents at the observed direction.
    fn tangent_basis(&self) -> (Vec3, Vec3, f64) {
        let d = self.dir;
        let horiz = (d.x * d.x + d.y * d.y).sqrt();
        let cos_el = horiz.max(0.05);
        let (e_az, e_el) = if horiz > 1e-9 {
            let e_az = Vec3::new(-d.y / horiz, d.x / horiz, 0.0);
            (e_az, d.cross(&e_az))
        } else {
            (Vec3::y(), -Vec3::x())
        };
        (e_az, e_el, cos_el)
    }
}

/// ρᵢ = |α̂ᵢ| / mean |α̂|.
pub fn mpc_weights(amplitudes: &[f64]) -> Vec<f64> {
    if amplitudes.is_empty() {
        return Vec::new();
    }
    let mean = amplitudes.iter().sum::<f64>() / amplitudes.len() as f64;
    if mean > 0.0 {
        amplitudes.iter().map(|a| a / mean).collect()
    } else {
        vec![1.0; amplitudes.len()]
    }
}

/// White-noise-acceleration transition.
pub fn transition_agent_particles(
    particles: &mut [AgentParticle],
    dt: f64,
    q: f64,
    planar: bool,
    rng: &mut impl Rng,
) {
    if dt <= 0.0 {
        return;
    }
    let sd = q.max(0.0).sqrt();
    for p in particles {
        let mut w = Vec3::zeros();
        if sd > 0.0 {
            for k in 0..if planar { 2 } else { 3 } {
                w[k] = sd * {
                    let z: f64 = StandardNormal.sample(rng);
                    z
                };
            }
        }
        p.position += p.velocity * dt + w * (0.5 * dt * dt);
        p.velocity += w * dt;
    }
}

/// Outcome of one measurement update of a landmark set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetUpdate {
    /// Log of the unnormalized weight sum.
    pub log_sum: f64,
    /// No particle came within `LOST_CHI2` of the observation.
    pub lost: bool,
}

const LOST_CHI2: f64 = 100.0;

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Reweights one landmark set against its MPCs from the pose of `agent`
/// and normalizes it. `source` is the agent's own estimate of the first-leg
/// endpoint for virtual landmarks.
pub fn update_landmark_weights(
    set: &mut LandmarkSet,
    agent_rx: &Vec3,
    agent_tx: &Vec3,
    source: Option<&Vec3>,
    measurements: &[Measurement],
    rho: RhoMode,
) -> SetUpdate {
    let bases: Vec<_> = measurements
        .iter()
        .map(Measurement::tangent_basis)
        .collect();
    let mut logs = Vec::with_capacity(set.particles.len());
    let mut best_chi = f64::INFINITY;
    for lp in &set.particles {
        let pred = match source {
            Some(s) => predict_virtual(s, &lp.position, agent_tx, agent_rx),
            None => predict_point(&lp.position, agent_tx, agent_rx),
        };
        let mut l = lp.weight.ln();
        let mut chi_sum = 0.0;
        for (m, b) in measurements.iter().zip(&bases) {
            let (ll, chi) = m.log_likelihood(&pred, b);
            chi_sum += chi;
            l += match rho {
                RhoMode::Multiplicative => m.rho.ln() + ll,
                RhoMode::Tempered => m.rho * ll,
                RhoMode::Off => ll,
            };
        }
        best_chi = best_chi.min(chi_sum);
        logs.push(l);
    }
    let log_sum = log_sum_exp(&logs);
    if log_sum.is_finite() {
        for (lp, l) in set.particles.iter_mut().zip(&logs) {
            lp.weight = (l - log_sum).exp();
        }
    } else {
        let w = 1.0 / set.particles.len().max(1) as f64;
        set.particles.iter_mut().for_each(|p| p.weight = w);
    }
    SetUpdate {
        log_sum,
        lost: !log_sum.is_finite() || best_chi > LOST_CHI2 * measurements.len() as f64,
    }
}

/// Agent weight update in the log domain: `ln wᵢ += Σⱼ ln Sᵢⱼ`, then normalized.
/// Returns `true` when every weight vanished and a uniform reset was made.
pub fn update_agent_weights(particles: &mut [AgentParticle], log_sums: &[f64]) -> bool {
    let logs: Vec<f64> = particles
        .iter()
        .zip(log_sums)
        .map(|(p, s)| p.weight.ln() + s)
        .collect();
    let total = log_sum_exp(&logs);
    if !total.is_finite() {
        let w = 1.0 / particles.len().max(1) as f64;
        particles.iter_mut().for_each(|p| p.weight = w);
        return true;
    }
    for (p, l) in particles.iter_mut().zip(&logs) {
        p.weight = (l - total).exp();
    }
    false
}

pub fn effective_sample_size(weights: impl Iterator<Item = f64>) -> f64 {
    let (s, s2) = weights.fold((0.0, 0.0), |(a, b), w| (a + w, b + w * w));
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Low-variance resampling: one uniform offset, N evenly spaced pointers.
pub fn systematic_resample(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    if n == 0 || total <= 0.0 {
        return (0..n).collect();
    }
    let step = total / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let (mut i, mut c) = (0, weights[0]);
    for _ in 0..n {
        while u > c && i + 1 < n {
            i += 1;
            c += weights[i];
        }
        out.push(i);
        u += step;
    }
    out
}

fn resample_set(set: &mut LandmarkSet, cfg: &FilterConfig, rng: &mut impl Rng) -> bool {
    let n = set.particles.len();
    if n == 0 || effective_sample_size(set.particles.iter().map(|p| p.weight)) >= n as f64 / 2.0 {
        return false;
    }
    let jitter = (cfg.roughening * set.spread()).max(cfg.min_roughening);
    let w: Vec<f64> = set.particles.iter().map(|p| p.weight).collect();
    let idx = systematic_resample(&w, rng);
    let uw = 1.0 / n as f64;
    set.particles = idx
        .into_iter()
        .map(|i| {
            let j = Vec3::from_fn(|_, _| {
                jitter * {
                    let z: f64 = StandardNormal.sample(rng);
                    z
                }
            });
            LandmarkParticle {
                position: set.particles[i].position + j,
                weight: uw,
            }
        })
        .collect();
    true
}

/// ESS-triggered systematic resampling of the agents, then of every
/// landmark set. Returns (agents resampled, landmark sets resampled).
pub fn normalize_resample(
    particles: &mut Vec<AgentParticle>,
    cfg: &FilterConfig,
    rng: &mut impl Rng,
) -> (bool, usize) {
    let n = particles.len();
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if total > 0.0 && (total - 1.0).abs() > 1e-12 {
        particles.iter_mut().for_each(|p| p.weight /= total);
    }
    let mut agents = false;
    if n > 0 && effective_sample_size(particles.iter().map(|p| p.weight)) < n as f64 / 2.0 {
        let w: Vec<f64> = particles.iter().map(|p| p.weight).collect();
        let idx = systematic_resample(&w, rng);
        let mut next: Vec<AgentParticle> = idx.into_iter().map(|i| particles[i].clone()).collect();
        let uw = 1.0 / n as f64;
        next.iter_mut().for_each(|p| p.weight = uw);
        *particles = next;
        agents = true;
    }
    let mut sets = 0;
    for p in particles.iter_mut() {
        for s in &mut p.sets {
            let t = s.weight_sum();
            if t > 0.0 && (t - 1.0).abs() > 1e-12 {
                s.particles.iter_mut().for_each(|lp| lp.weight /= t);
            }
            sets += resample_set(s, cfg, rng) as usize;
        }
    }
    (agents, sets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEstimate {
    pub position: Vec3,
    pub velocity: Vec3,
    /// RMS distance of the agent particles from `position`.
    pub position_sigma: f64,
    /// (weighted mean, RMS spread) per landmark slot.
    pub landmarks: Vec<(Vec3, f64)>,
}

/// Weighted means over agents and, per slot, over all landmark particles.
pub fn estimate_state(particles: &[AgentParticle]) -> StateEstimate {
    let position: Vec3 = particles.iter().map(|p| p.position * p.weight).sum();
    let velocity: Vec3 = particles.iter().map(|p| p.velocity * p.weight).sum();
    let position_sigma = particles
        .iter()
        .map(|p| p.weight * (p.position - position).norm_squared())
        .sum::<f64>()
        .sqrt();
    let slots = particles.first().map_or(0, |p| p.sets.len());
    let landmarks = (0..slots)
        .map(|j| {
            let mean: Vec3 = particles.iter().map(|p| p.sets[j].mean() * p.weight).sum();
            let var: f64 = particles
                .iter()
                .map(|p| {
                    p.weight
                        * p.sets[j]
                            .particles
                            .iter()
                            .map(|lp| lp.weight * (lp.position - mean).norm_squared())
                            .sum::<f64>()
                })
                .sum();
            (mean, var.sqrt())
        })
        .collect();
    StateEstimate {
        position,
        velocity,
        position_sigma,
        landmarks,
    }
}

/// Updates every agent's observed landmark sets and returns, per agent, the
/// Log weight increment and the slots whose set was lost.
pub fn update_observed_sets(
    particles: &mut [AgentParticle],
    models: &[SlotModel],
    observed: &[(usize, Vec<Measurement>)],
    tx_offset: &Vec3,
    rho: RhoMode,
) -> Vec<(f64, Vec<usize>)> {
    particles
        .par_iter_mut()
        .map(|agent| {
            let rx = agent.position;
            let tx = rx + tx_offset;
            let mut total = 0.0;
            let mut lost = Vec::new();
            // sources are read before any set of this cycle is touched
            let sources: Vec<Option<Vec3>> = observed
                .iter()
                .map(|(j, _)| match models[*j] {
                    SlotModel::Point => None,
                    SlotModel::Virtual { source } => Some(agent.sets[source].mean()),
                })
                .collect();
            for ((j, ms), src) in observed.iter().zip(&sources) {
                let u =
                    update_landmark_weights(&mut agent.sets[*j], &rx, &tx, src.as_ref(), ms, rho);
                total += u.log_sum;
                if u.lost {
                    lost.push(*j);
                }
            }
            (total, lost)
        })
        .collect()
}
