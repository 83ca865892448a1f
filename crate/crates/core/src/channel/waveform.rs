//! Probe waveform: a Hann-tapered root-raised-cosine pulse with unit energy.
//!
//! The taper makes the pulse and its first derivative vanish at the support
//! edges, so the autocorrelation of the truncated pulse has exactly finite
//! support and its spectrum decays fast enough for the spectral moment to be
//! well defined.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub carrier_frequency: f64,
    /// Occupied two-sided baseband bandwidth in Hz.
    pub bandwidth: f64,
    pub rolloff: f64,
    /// Half-length of the pulse support, in symbol periods.
    pub span_symbols: f64,
    pub sample_rate: f64,
    /// Length of the receive window in seconds.
    pub duration: f64,
    /// Receive window start relative to transmission, seconds.
    pub window_start: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            carrier_frequency: 10e9,
            bandwidth: 2e9,
            rolloff: 0.25,
            span_symbols: 6.0,
            sample_rate: 4e9,
            duration: 100e-9,
            window_start: -5e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub config: WaveformConfig,
    pub wavelength: f64,
    pub symbol_period: f64,
    /// Effective bandwidth ζ² in Hz², from the spectrum of the pulse.
    pub effective_bandwidth_sq: f64,
    /// Pulse energy R_s(0). The pulse is normalized so this is 1.
    pub energy: f64,
    scale: f64,
}

impl Waveform {
    pub fn new(config: WaveformConfig) -> Self {
        let symbol_period = (1.0 + config.rolloff) / config.bandwidth;
        let mut wf = Self {
            config,
            wavelength: SPEED_OF_LIGHT / config.carrier_frequency,
            symbol_period,
            effective_bandwidth_sq: 0.0,
            energy: 1.0,
            scale: 1.0,
        };
        let half = wf.half_support();
        let raw_energy = simpson(-half, half, 4096, |t| wf.pulse(t).powi(2));
        wf.scale = 1.0 / raw_energy.sqrt();
        wf.energy = simpson(-half, half, 4096, |t| wf.pulse(t).powi(2));
        wf.effective_bandwidth_sq = wf.spectral_effective_bandwidth_sq();
        wf
    }

    pub fn half_support(&self) -> f64 {
        self.config.span_symbols * self.symbol_period
    }

    pub fn sample_count(&self) -> usize {
        (self.config.duration * self.config.sample_rate).round() as usize
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let fs = self.config.sample_rate;
        (0..self.sample_count())
            .map(|u| self.config.window_start + u as f64 / fs)
            .collect()
    }

    /// The unit-energy pulse s(t).
    pub fn pulse(&self, t: f64) -> f64 {
        let half = self.half_support();
        if t.abs() >= half {
            return 0.0;
        }
        let taper = (PI * t / (2.0 * half)).cos().powi(2);
        self.scale * rrc(t / self.symbol_period, self.config.rolloff) * taper
    }

    /// ds/dt by a fourth-order central difference.
    pub fn pulse_derivative(&self, t: f64) -> f64 {
        let h = self.symbol_period * 1e-3;
        (-self.pulse(t + 2.0 * h) + 8.0 * self.pulse(t + h) - 8.0 * self.pulse(t - h)
            + self.pulse(t - 2.0 * h))
            / (12.0 * h)
    }

    /// ζ² = ∫f²|S(f)|² df / ∫|S(f)|² df, with S from an FFT of the finely
    /// sampled pulse.
    fn spectral_effective_bandwidth_sq(&self) -> f64 {
        let half = self.half_support();
        let dt = self.symbol_period / 32.0;
        let n_support = (2.0 * half / dt).ceil() as usize + 1;
        let n_fft = (n_support * 8).next_power_of_two();
        let mut buf: Vec<Complex<f64>> = (0..n_fft)
            .map(|i| {
                if i < n_support {
                    Complex::new(self.pulse(-half + i as f64 * dt), 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                }
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
        let df = 1.0 / (n_fft as f64 * dt);
        let (mut num, mut den) = (0.0, 0.0);
        for (k, s) in buf.iter().enumerate() {
            let f = if k <= n_fft / 2 {
                k as f64 * df
            } else {
                (k as f64 - n_fft as f64) * df
            };
            let p = s.norm_sqr();
            num += f * f * p;
            den += p;
        }
        num / den
    }

    /// Support of R_s: |τ| below this gives nonzero correlation.
    pub fn correlation_support(&self) -> f64 {
        2.0 * self.half_support()
    }
}

/// Root-raised-cosine impulse response at normalized time `x = t / T`.
pub fn rrc(x: f64, beta: f64) -> f64 {
    if x.abs() < 1e-9 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let edge = 1.0 / (4.0 * beta);
    if (x.abs() - edge).abs() < 1e-7 {
        let a = PI / (4.0 * beta);
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * x * (1.0 - beta)).sin() + 4.0 * beta * x * (PI * x * (1.0 + beta)).cos();
    let den = PI * x * (1.0 - (4.0 * beta * x).powi(2));
    num / den
}

/// Composite Simpson rule with `n` (rounded up to even) intervals.
pub fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_energy_and_band() {
        let wf = Waveform::new(WaveformConfig::default());
        assert!((wf.energy - 1.0).abs() < 1e-12);
        // an ideal RC spectrum of width 2 GHz has ζ roughly B/(2√3)
        let zeta = wf.effective_bandwidth_sq.sqrt();
        assert!(zeta > 0.4e9 && zeta < 0.65e9, "ζ = {zeta}");
        assert!((wf.wavelength - 0.0299792458).abs() < 1e-12);
        assert_eq!(wf.sample_count(), 400);
    }

    #[test]
    fn rrc_is_continuous_at_special_points() {
        let beta = 0.25;
        let edge = 1.0 / (4.0 * beta);
        for x in [0.0, edge, -edge] {
            let a = rrc(x + 1e-5, beta);
            let b = rrc(x - 1e-5, beta);
            let c = rrc(x, beta);
            assert!((a - c).abs() < 1e-4 && (b - c).abs() < 1e-4);
        }
    }
}
