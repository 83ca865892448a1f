//! Emulated channel estimator: noisy TOA / AOA / amplitude observations whose
//! error variances follow the per-MPC SNR.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::Mpc;
use crate::environment::{direction_from, LandmarkKind, Vec3};

/// Devices cannot separate arrivals closer than this.
pub const DEVICE_RESOLUTION: f64 = 0.5e-9;

const SIGMA_TOA_FLOOR: f64 = 1e-15;
const SIGMA_AOA_FLOOR: f64 = 1e-9;

/// Simulator-side label of an observation. Never read by the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpcTruth {
    pub landmark_id: usize,
    pub kind: LandmarkKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedMpc {
    pub toa: f64,
    pub aoa: f64,
    pub elevation: f64,
    pub amplitude: Complex64,
    pub sigma_toa: f64,
    /// Applies to both azimuth and elevation.
    pub sigma_aoa: f64,
    pub truth: Option<MpcTruth>,
}

impl ObservedMpc {
    pub fn direction(&self) -> Vec3 {
        direction_from(self.aoa, self.elevation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// N₀ in W/Hz.
    pub noise_spectral_density: f64,
    /// AOA standard deviation of an MPC with `reference_amplitude`.
    pub aoa_floor: f64,
    pub reference_amplitude: f64,
    pub detection_threshold: f64,
    pub effective_bandwidth_sq: f64,
}

impl NoiseModel {
    /// Reference amplitude at 20 dB matched-filter SNR and detection at 0 dB.
    pub fn new(noise_spectral_density: f64, effective_bandwidth_sq: f64) -> Self {
        let n0 = noise_spectral_density.max(0.0);
        Self {
            noise_spectral_density: n0,
            aoa_floor: 2f64.to_radians(),
            reference_amplitude: (n0 * 100.0).sqrt(),
            detection_threshold: n0.sqrt(),
            effective_bandwidth_sq,
        }
    }

    /// From the per-sample noise variance of the sampled receiver.
    pub fn from_noise_variance(
        noise_variance: f64,
        sample_rate: f64,
        effective_bandwidth_sq: f64,
    ) -> Self {
        Self::new(noise_variance / sample_rate, effective_bandwidth_sq)
    }

    pub fn noiseless(effective_bandwidth_sq: f64) -> Self {
        Self::new(0.0, effective_bandwidth_sq)
    }

    /// σ_τ² = N₀ / (8π²ζ²|α|²).
    pub fn sigma_toa(&self, amplitude: f64) -> f64 {
        (self.noise_spectral_density
            / (8.0 * PI * PI * self.effective_bandwidth_sq * amplitude * amplitude))
            .sqrt()
    }

    pub fn sigma_aoa(&self, amplitude: f64) -> f64 {
        self.aoa_floor * self.reference_amplitude / amplitude
    }

    pub fn detectable(&self, amplitude: f64) -> bool {
        amplitude > 0.0 && amplitude >= self.detection_threshold
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Noisy observations of the detectable MPCs, in input order.
pub fn extract_mpcs(true_mpcs: &[Mpc], model: &NoiseModel, seed: u64) -> Vec<ObservedMpc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp_sd = (model.noise_spectral_density / 2.0).sqrt();
    let mut out = Vec::with_capacity(true_mpcs.len());
    for m in true_mpcs {
        let a = m.gain.norm();
        // draw for every MPC so the stream does not depend on detection
        let z: [f64; 5] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        if !model.detectable(a) {
            continue;
        }
        let s_tau = model.sigma_toa(a);
        let s_phi = model.sigma_aoa(a);
        out.push(ObservedMpc {
            toa: (m.delay + s_tau * z[0]).max(f64::MIN_POSITIVE),
            aoa: wrap_angle(m.aoa + s_phi * z[1]),
            elevation: (m.elevation + s_phi * z[2]).clamp(-PI / 2.0, PI / 2.0),
            amplitude: m.gain + Complex64::new(amp_sd * z[3], amp_sd * z[4]),
            sigma_toa: s_tau.max(SIGMA_TOA_FLOOR),
            sigma_aoa: s_phi.max(SIGMA_AOA_FLOOR),
            truth: Some(MpcTruth {
                landmark_id: m.landmark_id,
                kind: m.kind,
            }),
        });
    }
    out
}

/// Collapses RIS-element arrivals closer than the device resolution into a
/// single MPC carrying their complex sum. Other MPCs pass through.
pub fn merge_ris_mpcs(observed: &[ObservedMpc]) -> Vec<ObservedMpc> {
    let is_ris = |o: &ObservedMpc| o.truth.is_some_and(|t| t.kind.involves_ris());
    let mut out: Vec<ObservedMpc> = observed.iter().filter(|o| !is_ris(o)).cloned().collect();
    let mut ris: Vec<&ObservedMpc> = observed.iter().filter(|o| is_ris(o)).collect();
    ris.sort_by(|a, b| a.toa.total_cmp(&b.toa));
    let mut i = 0;
    while i < ris.len() {
        let start = ris[i].toa;
        let mut j = i;
        while j < ris.len() && ris[j].toa - start <= DEVICE_RESOLUTION {
            j += 1;
        }
        let group = &ris[i..j];
        let sum: Complex64 = group.iter().map(|o| o.amplitude).sum();
        let w: f64 = group.iter().map(|o| o.amplitude.norm()).sum();
        let mean = |f: &dyn Fn(&ObservedMpc) -> f64| -> f64 {
            if w > 0.0 {
                group.iter().map(|o| f(o) * o.amplitude.norm()).sum::<f64>() / w
            } else {
                group.iter().map(|o| f(o)).sum::<f64>() / group.len() as f64
            }
        };
        out.push(ObservedMpc {
            toa: mean(&|o| o.toa),
            aoa: group[0].aoa,
            elevation: mean(&|o| o.elevation),
            amplitude: sum,
            sigma_toa: group
                .iter()
                .map(|o| o.sigma_toa)
                .fold(f64::INFINITY, f64::min),
            sigma_aoa: group
                .iter()
                .map(|o| o.sigma_aoa)
                .fold(f64::INFINITY, f64::min),
            truth: group[0].truth,
        });
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::LandmarkKind;

    fn mpc(delay: f64, amp: f64) -> Mpc {
        Mpc {
            delay,
            aoa: 0.7,
            elevation: 0.2,
            gain: Complex64::from_polar(amp, 0.4),
            landmark_id: 0,
            kind: LandmarkKind::Ps,
            per_antenna_phase: vec![],
        }
    }

    const ZETA2: f64 = 0.3e18;

    #[test]
    fn noiseless_is_exact() {
        let model = NoiseModel::noiseless(ZETA2);
        let obs = extract_mpcs(&[mpc(20e-9, 1e-5)], &model, 3);
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].toa, 20e-9);
        assert_eq!(obs[0].aoa, 0.7);
        assert!(obs[0].sigma_toa > 0.0 && obs[0].sigma_aoa > 0.0);
    }

    #[test]
    fn sigma_scales_inversely_with_amplitude() {
        let model = NoiseModel::new(1e-12, ZETA2);
        assert!((model.sigma_toa(0.5e-5) / model.sigma_toa(1e-5) - 2.0).abs() < 1e-12);
        assert!((model.sigma_aoa(model.reference_amplitude) - 2f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn empirical_toa_spread_matches_formula() {
        let model = NoiseModel::new(1e-12, ZETA2);
        let truth = mpc(20e-9, 1e-5);
        let n = 10_000;
        let mut sq = 0.0;
        for s in 0..n {
            let o = &extract_mpcs(std::slice::from_ref(&truth), &model, s)[0];
            sq += (o.toa - truth.delay).powi(2);
        }
        let emp = (sq / n as f64).sqrt();
        assert!((emp / model.sigma_toa(1e-5) - 1.0).abs() < 0.03);
    }

    #[test]
    fn detection_and_ordering() {
        let model = NoiseModel::new(1e-12, ZETA2);
        let t = model.detection_threshold;
        let all = [
            mpc(10e-9, 10.0 * t),
            mpc(20e-9, 3.0 * t),
            mpc(30e-9, 0.5 * t),
        ];
        let obs = extract_mpcs(&all, &model, 1);
        assert_eq!(obs.len(), 2);
        assert!(obs[0].sigma_toa <= obs[1].sigma_toa);
        assert_eq!(extract_mpcs(&all[..2], &model, 1).len(), 2);
        assert_eq!(extract_mpcs(&all, &model, 1), obs);
    }

    fn ris_obs(toa: f64, amp: Complex64) -> ObservedMpc {
        ObservedMpc {
            toa,
            aoa: 0.1,
            elevation: 1.2,
            amplitude: amp,
            sigma_toa: 1e-12,
            sigma_aoa: 0.01,
            truth: Some(MpcTruth {
                landmark_id: 1,
                kind: LandmarkKind::Ris,
            }),
        }
    }

    #[test]
    fn aligned_elements_merge_coherently() {
        let e = Complex64::from_polar(1e-6, 0.3);
        let elems: Vec<_> = (0..36)
            .map(|i| ris_obs(20e-9 + i as f64 * 0.008e-9, e))
            .collect();
        let merged = merge_ris_mpcs(&elems);
        assert_eq!(merged.len(), 1);
        assert!((merged[0].amplitude.norm() - 36e-6).abs() < 1e-15);

        let apart = merge_ris_mpcs(&[ris_obs(20e-9, e), ris_obs(21e-9, e)]);
        assert_eq!(apart.len(), 2);
    }
}
