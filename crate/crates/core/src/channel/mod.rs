//! Complex path gains for the four channel classes and received-signal
//! synthesis.

mod ris;
mod waveform;

pub use ris::{
    align_phasors, phase_align, phase_table, ris_aggregate_gain, ris_element_gain, ris_exact_gain,
    AggregateGain, PhaseConfig, RisSteering,
};
pub use waveform::{rrc, simpson, Waveform, WaveformConfig};

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::environment::{mirror_point, Environment, LandmarkKind, PropagationPath, Vec3};
use crate::error::ChannelError;
use crate::SPEED_OF_LIGHT;

/// Uniform linear array along `axis` with half-wavelength spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub antennas: usize,
    pub axis: Vec3,
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn half_wavelength(antennas: usize, axis: Vec3, wavelength: f64) -> Self {
        Self {
            antennas: antennas.max(1),
            axis: axis.normalize(),
            spacing: wavelength / 2.0,
        }
    }

    pub fn element_position(&self, l: usize) -> f64 {
        (l as f64 - (self.antennas as f64 - 1.0) / 2.0) * self.spacing
    }

    /// `b_l` for a plane wave arriving from unit direction `dir`.
    pub fn response(&self, dir: &Vec3, wavelength: f64) -> Vec<Complex64> {
        let c = dir.dot(&self.axis);
        (0..self.antennas)
            .map(|l| {
                Complex64::from_polar(1.0, -2.0 * PI * self.element_position(l) * c / wavelength)
            })
            .collect()
    }
}

/// A true multipath component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mpc {
    pub delay: f64,
    pub aoa: f64,
    pub elevation: f64,
    pub gain: Complex64,
    pub landmark_id: usize,
    pub kind: LandmarkKind,
    pub per_antenna_phase: Vec<Complex64>,
}

impl Mpc {
    pub fn direction(&self) -> Vec3 {
        crate::environment::direction_from(self.aoa, self.elevation)
    }
}

/// Channel 1: a single specular reflection of total length `d₁`.
pub fn reflector_gain(
    path: &PropagationPath,
    wavelength: f64,
    tx_gain: f64,
    coefficient: f64,
) -> Result<Complex64, ChannelError> {
    if path.vertices.len() != 3 {
        return Err(ChannelError::WrongPathClass(
            "reflection needs one bounce point",
        ));
    }
    let d = path.total_length;
    if d <= 0.0 {
        return Err(ChannelError::ZeroLength);
    }
    let amp = wavelength * coefficient * tx_gain.sqrt() / (4.0 * PI * d);
    Ok(Complex64::from_polar(amp, -2.0 * PI * d / wavelength))
}

/// Channel 2 from its two legs.
pub fn scatterer_gain_legs(
    d_ts: f64,
    d_sr: f64,
    wavelength: f64,
    tx_gain: f64,
    rcs: f64,
) -> Result<Complex64, ChannelError> {
    if d_ts <= 0.0 || d_sr <= 0.0 {
        return Err(ChannelError::ZeroLength);
    }
    let amp = wavelength * (tx_gain * rcs).sqrt() / ((4.0 * PI).powf(1.5) * d_ts * d_sr);
    Ok(Complex64::from_polar(
        amp,
        -2.0 * PI * (d_ts + d_sr) / wavelength,
    ))
}

/// Channel 2. For a mirrored path the second leg is the unfolded length
/// from the scatterer to the Rx.
pub fn scatterer_gain(
    path: &PropagationPath,
    wavelength: f64,
    tx_gain: f64,
    rcs: f64,
) -> Result<Complex64, ChannelError> {
    let legs = path.leg_lengths();
    if legs.len() < 2 {
        return Err(ChannelError::WrongPathClass(
            "scatterer path needs two legs",
        ));
    }
    scatterer_gain_legs(legs[0], legs[1..].iter().sum(), wavelength, tx_gain, rcs)
}

/// Complex gain of any in-scope path under the commanded RIS phases.
pub fn path_gain(
    env: &Environment,
    path: &PropagationPath,
    wavelength: f64,
    tx_gain: f64,
    phases: Option<&PhaseConfig>,
) -> Result<Complex64, ChannelError> {
    let n = path.vertices.len();
    let tx = path.vertices[0];
    let rx = path.vertices[n - 1];
    match path.kind {
        LandmarkKind::Vt => {
            let r = reflector_of(env, path)?;
            reflector_gain(path, wavelength, tx_gain, r)
        }
        LandmarkKind::Ps | LandmarkKind::Vs => {
            let s = scatterer_at(env, &path.vertices[1])?;
            let g = scatterer_gain(path, wavelength, tx_gain, s)?;
            if path.kind == LandmarkKind::Vs {
                Ok(g * reflector_of(env, path)?)
            } else {
                Ok(g)
            }
        }
        LandmarkKind::Ris | LandmarkKind::Vris => {
            let panel = env
                .panel()
                .ok()
                .flatten()
                .ok_or(ChannelError::WrongPathClass("RIS path without panel"))?;
            let default;
            let phases = match phases {
                Some(p) => p,
                None => {
                    default = PhaseConfig::for_panel(panel, panel.phase_levels);
                    &default
                }
            };
            if path.kind == LandmarkKind::Ris {
                Ok(ris_aggregate_gain(panel, &tx, &rx, wavelength, tx_gain, phases)?.value)
            } else {
                let refl = reflector_plane_of(env, path)?;
                let rx_img = mirror_point(&rx, &refl.0);
                Ok(
                    ris_aggregate_gain(panel, &tx, &rx_img, wavelength, tx_gain, phases)?.value
                        * refl.1,
                )
            }
        }
    }
}

fn scatterer_at(env: &Environment, p: &Vec3) -> Result<f64, ChannelError> {
    env.scatterers
        .iter()
        .find(|s| (s.position - p).norm() < 1e-9)
        .map(|s| s.radar_cross_section)
        .ok_or(ChannelError::WrongPathClass("no scatterer at path vertex"))
}

fn reflector_plane_of(
    env: &Environment,
    path: &PropagationPath,
) -> Result<(crate::environment::Plane, f64), ChannelError> {
    let bounce = path.vertices[path.vertices.len() - 2];
    env.reflectors
        .iter()
        .find(|r| r.plane.signed_distance(&bounce).abs() < 1e-9)
        .map(|r| (r.plane, r.reflection_coefficient))
        .ok_or(ChannelError::WrongPathClass("no reflector at bounce point"))
}

fn reflector_of(env: &Environment, path: &PropagationPath) -> Result<f64, ChannelError> {
    reflector_plane_of(env, path).map(|r| r.1)
}

/// True MPCs of every path in the scene.
pub fn scene_mpcs(
    env: &Environment,
    paths: &[PropagationPath],
    array: &ArrayGeometry,
    wavelength: f64,
    tx_gain: f64,
    phases: Option<&PhaseConfig>,
) -> Result<Vec<Mpc>, ChannelError> {
    paths
        .iter()
        .map(|p| {
            let gain = path_gain(env, p, wavelength, tx_gain, phases)?;
            let dir = p.arrival_direction();
            Ok(Mpc {
                delay: p.total_length / SPEED_OF_LIGHT,
                aoa: p.aoa,
                elevation: p.elevation,
                gain,
                landmark_id: p.landmark_id,
                kind: p.kind,
                per_antenna_phase: array.response(&dir, wavelength),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedSignal {
    /// `samples[l][u]` for antenna `l`, sample `u`.
    pub samples: Vec<Vec<Complex64>>,
    pub noise_variance: f64,
    pub sample_times: Vec<f64>,
}

impl ReceivedSignal {
    pub fn energy(&self) -> f64 {
        self.samples.iter().flatten().map(|s| s.norm_sqr()).sum()
    }

    /// ‖Y‖² / (L U σ_n²).
    pub fn snr(&self, noise_variance: f64) -> f64 {
        let lu = (self.samples.len() * self.sample_times.len()) as f64;
        self.energy() / (lu * noise_variance)
    }
}

/// Σ_i α_i b_l(φ_i) s(t - τ_i) plus circular complex noise of total variance
/// `noise_variance` per sample.
pub fn synthesize_received(
    mpcs: &[Mpc],
    wf: &Waveform,
    array: &ArrayGeometry,
    noise_variance: f64,
    seed: u64,
) -> ReceivedSignal {
    let times = wf.sample_times();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (noise_variance / 2.0).sqrt();
    let mut samples = vec![vec![Complex64::new(0.0, 0.0); times.len()]; array.antennas];
    for mpc in mpcs {
        let pulse: Vec<f64> = times.iter().map(|&t| wf.pulse(t - mpc.delay)).collect();
        for (l, row) in samples.iter_mut().enumerate() {
            let w = mpc.gain
                * mpc
                    .per_antenna_phase
                    .get(l)
                    .copied()
                    .unwrap_or(Complex64::new(1.0, 0.0));
            for (s, p) in row.iter_mut().zip(&pulse) {
                *s += w * *p;
            }
        }
    }
    if noise_variance > 0.0 {
        for row in samples.iter_mut() {
            for s in row.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *s += Complex64::new(re * sd, im * sd);
            }
        }
    }
    ReceivedSignal {
        samples,
        noise_variance,
        sample_times: times,
    }
}

/// Noise variance giving the target linear SNR for a noise-free signal.
pub fn calibrate_noise_variance(noise_free: &ReceivedSignal, snr_linear: f64) -> f64 {
    let lu = (noise_free.samples.len() * noise_free.sample_times.len()) as f64;
    noise_free.energy() / (lu * snr_linear)
}

/// Delay maximizing the matched-filter output of antenna 0 over `[lo, hi]`.
pub fn matched_filter_peak(signal: &ReceivedSignal, wf: &Waveform, lo: f64, hi: f64) -> f64 {
    let row = &signal.samples[0];
    let corr = |tau: f64| -> f64 {
        signal
            .sample_times
            .iter()
            .zip(row)
            .map(|(&t, y)| y * wf.pulse(t - tau))
            .sum::<Complex64>()
            .norm()
    };
    let steps = 400;
    let mut best = (lo, f64::MIN);
    for i in 0..=steps {
        let tau = lo + (hi - lo) * i as f64 / steps as f64;
        let c = corr(tau);
        if c > best.1 {
            best = (tau, c);
        }
    }
    // golden-section refinement around the coarse peak
    let width = (hi - lo) / steps as f64;
    let (mut a, mut b) = (best.0 - width, best.0 + width);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if corr(c) > corr(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests;
