//! RIS channel: exact per-element gains, the far-field aggregate, and
//! discrete phase alignment.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::environment::{RisPanel, Vec3};
use crate::error::ChannelError;

/// Discrete phase levels `h` in `1..=H`, row-major over the panel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub rows: usize,
    pub cols: usize,
    pub levels: u32,
    pub genes: Vec<u32>,
}

impl PhaseConfig {
    pub fn new(
        rows: usize,
        cols: usize,
        levels: u32,
        genes: Vec<u32>,
    ) -> Result<Self, ChannelError> {
        let cfg = Self {
            rows,
            cols,
            levels,
            genes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn uniform(rows: usize, cols: usize, levels: u32, level: u32) -> Self {
        Self {
            rows,
            cols,
            levels,
            genes: vec![level; rows * cols],
        }
    }

    pub fn for_panel(panel: &RisPanel, level: u32) -> Self {
        Self::uniform(panel.rows, panel.cols, panel.phase_levels, level)
    }

    pub fn random(panel: &RisPanel, rng: &mut impl rand::Rng) -> Self {
        let genes = (0..panel.element_count())
            .map(|_| rng.random_range(1..=panel.phase_levels))
            .collect();
        Self {
            rows: panel.rows,
            cols: panel.cols,
            levels: panel.phase_levels,
            genes,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.genes.len() != self.rows * self.cols {
            return Err(ChannelError::PhaseShape(format!(
                "{} genes for a {}x{} panel",
                self.genes.len(),
                self.rows,
                self.cols
            )));
        }
        if let Some(g) = self.genes.iter().find(|&&g| g == 0 || g > self.levels) {
            return Err(ChannelError::PhaseShape(format!(
                "level {g} outside 1..={}",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn matches(&self, panel: &RisPanel) -> Result<(), ChannelError> {
        if self.rows != panel.rows || self.cols != panel.cols || self.levels != panel.phase_levels {
            return Err(ChannelError::PhaseShape(format!(
                "{}x{} H={} config on a {}x{} H={} panel",
                self.rows, self.cols, self.levels, panel.rows, panel.cols, panel.phase_levels
            )));
        }
        self.validate()
    }

    /// Phase shift ξ = h·Δθ of element `i`.
    pub fn phase(&self, i: usize) -> f64 {
        self.genes[i] as f64 * 2.0 * PI / self.levels as f64
    }
}

/// Gain of the element at (row `n`, column `m`) from the exact distances and
/// per-element pattern angles.
#[allow(clippy::too_many_arguments)]
pub fn ris_element_gain(
    n: usize,
    m: usize,
    panel: &RisPanel,
    tx: &Vec3,
    rx: &Vec3,
    wavelength: f64,
    tx_gain: f64,
    phases: &PhaseConfig,
) -> Result<Complex64, ChannelError> {
    let offsets = panel.element_offsets();
    let idx = n * panel.cols + m;
    let z = panel.center + offsets[idx];
    let to_tx = tx - z;
    let to_rx = rx - z;
    let (rt, rr) = (to_tx.norm(), to_rx.norm());
    if rt < 1e-12 || rr < 1e-12 {
        return Err(ChannelError::ZeroLength);
    }
    let cos_t = to_tx.dot(&panel.normal) / rt;
    let cos_r = to_rx.dot(&panel.normal) / rr;
    if cos_t.abs() < 1e-12 || cos_r.abs() < 1e-12 {
        return Err(ChannelError::InPanelPlane);
    }
    let f = panel.pattern.eval(cos_t) * panel.pattern.eval(cos_r);
    let amp = wavelength
        * (tx_gain * panel.element_gain * f * panel.element_dx * panel.element_dy).sqrt()
        / (8.0 * PI.powf(1.5) * rt * rr);
    let phase = -2.0 * PI * (rt + rr) / wavelength - phases.phase(idx);
    Ok(Complex64::from_polar(
        amp * panel.reflection_amplitude,
        phase,
    ))
}

/// Far-field description of the RIS channel for one (Tx, Rx) geometry:
/// `gain(config) = common · Σ_e phasor_e · e^{-jξ_e}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RisSteering {
    /// Amplitude factor, path phase e^{-j2πd₃/λ} and A combined.
    pub common: Complex64,
    /// e^{j2π z·(z_t + z_r)/λ} per element.
    pub phasors: Vec<Complex64>,
    /// Single-element amplitude |common|.
    pub element_amplitude: f64,
    pub near_field: bool,
}

impl RisSteering {
    pub fn new(
        panel: &RisPanel,
        tx: &Vec3,
        rx: &Vec3,
        wavelength: f64,
        tx_gain: f64,
    ) -> Result<Self, ChannelError> {
        let to_tx = tx - panel.center;
        let to_rx = rx - panel.center;
        let (dt, dr) = (to_tx.norm(), to_rx.norm());
        if dt < 1e-12 || dr < 1e-12 {
            return Err(ChannelError::ZeroLength);
        }
        let zt = to_tx / dt;
        let zr = to_rx / dr;
        let (cos_t, cos_r) = (zt.dot(&panel.normal), zr.dot(&panel.normal));
        if cos_t.abs() < 1e-12 || cos_r.abs() < 1e-12 {
            return Err(ChannelError::InPanelPlane);
        }
        let f = panel.pattern.eval(cos_t) * panel.pattern.eval(cos_r);
        let amp = wavelength
            * (tx_gain * panel.element_gain * f * panel.element_dx * panel.element_dy).sqrt()
            / ((4.0 * PI).powf(1.5) * dt * dr);
        let common = Complex64::from_polar(
            amp * panel.reflection_amplitude,
            -2.0 * PI * (dt + dr) / wavelength,
        );
        let k = 2.0 * PI / wavelength;
        let phasors = panel
            .element_offsets()
            .iter()
            .map(|z| Complex64::from_polar(1.0, k * z.dot(&(zt + zr))))
            .collect();
        let radius = panel.far_field_radius(wavelength);
        Ok(Self {
            common,
            phasors,
            element_amplitude: common.norm(),
            near_field: dt <= radius || dr <= radius,
        })
    }

    pub fn gain(&self, phases: &PhaseConfig) -> Complex64 {
        let step = 2.0 * PI / phases.levels as f64;
        let sum: Complex64 = self
            .phasors
            .iter()
            .zip(&phases.genes)
            .map(|(p, &h)| p * Complex64::from_polar(1.0, -(h as f64) * step))
            .sum();
        self.common * sum
    }

    /// Gain evaluated with a precomputed `phase_table`.
    pub fn gain_with_table(&self, genes: &[u32], table: &[Complex64]) -> Complex64 {
        let levels = (table.len() - 1) as u32;
        let mut sum = Complex64::new(0.0, 0.0);
        for (p, &h) in self.phasors.iter().zip(genes) {
            sum += p * table[(h % levels) as usize];
        }
        self.common * sum
    }
}

pub fn phase_table(levels: u32) -> Vec<Complex64> {
    let step = 2.0 * PI / levels as f64;
    (0..=levels)
        .map(|h| Complex64::from_polar(1.0, -(h as f64) * step))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateGain {
    pub value: Complex64,
    /// Tx or Rx lies inside 2D²/λ of the panel center.
    pub near_field: bool,
}

/// Far-field aggregate gain of the whole panel.
pub fn ris_aggregate_gain(
    panel: &RisPanel,
    tx: &Vec3,
    rx: &Vec3,
    wavelength: f64,
    tx_gain: f64,
    phases: &PhaseConfig,
) -> Result<AggregateGain, ChannelError> {
    phases.matches(panel)?;
    let steering = RisSteering::new(panel, tx, rx, wavelength, tx_gain)?;
    Ok(AggregateGain {
        value: steering.gain(phases),
        near_field: steering.near_field,
    })
}

/// Sum of exact element gains; the reference for the far-field aggregate.
pub fn ris_exact_gain(
    panel: &RisPanel,
    tx: &Vec3,
    rx: &Vec3,
    wavelength: f64,
    tx_gain: f64,
    phases: &PhaseConfig,
) -> Result<Complex64, ChannelError> {
    phases.matches(panel)?;
    let mut sum = Complex64::new(0.0, 0.0);
    for n in 0..panel.rows {
        for m in 0..panel.cols {
            sum += ris_element_gain(n, m, panel, tx, rx, wavelength, tx_gain, phases)?;
        }
    }
    Ok(sum)
}

/// Discrete phases maximizing `|Σ phasor_e e^{-jh_eΔθ}|`.
///
/// For a fixed direction ψ of the optimal sum, each element independently
/// picks the level nearest to `arg(phasor_e) - ψ`. Sweeping ψ over one turn
/// only changes that choice at `E·H` breakpoints, so evaluating every arc
/// between breakpoints yields the exact discrete optimum.
pub fn align_phasors(phasors: &[Complex64], levels: u32) -> Vec<u32> {
    let step = 2.0 * PI / levels as f64;
    let table = phase_table(levels);
    let quantize = |psi: f64| -> Vec<u32> {
        phasors
            .iter()
            .map(|p| {
                let k = ((p.arg() - psi) / step).round().rem_euclid(levels as f64) as u32;
                if k == 0 {
                    levels
                } else {
                    k
                }
            })
            .collect()
    };
    let score = |genes: &[u32]| -> f64 {
        phasors
            .iter()
            .zip(genes)
            .map(|(p, &h)| p * table[h as usize])
            .sum::<Complex64>()
            .norm()
    };
    let mut breaks: Vec<f64> = Vec::with_capacity(phasors.len() * levels as usize);
    for p in phasors {
        for h in 0..levels {
            breaks.push((p.arg() - (h as f64 + 0.5) * step).rem_euclid(2.0 * PI));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut best = quantize(0.0);
    let mut best_score = score(&best);
    for (i, &b) in breaks.iter().enumerate() {
        let next = if i + 1 < breaks.len() {
            breaks[i + 1]
        } else {
            breaks[0] + 2.0 * PI
        };
        let cand = quantize(0.5 * (b + next));
        let s = score(&cand);
        if s > best_score + 1e-15 * best_score.max(1e-300) {
            best_score = s;
            best = cand;
        }
    }
    best
}

/// Phase configuration that coherently combines the panel toward (Tx, Rx).
pub fn phase_align(
    panel: &RisPanel,
    tx: &Vec3,
    rx: &Vec3,
    wavelength: f64,
) -> Result<PhaseConfig, ChannelError> {
    let steering = RisSteering::new(panel, tx, rx, wavelength, 1.0)?;
    Ok(PhaseConfig {
        rows: panel.rows,
        cols: panel.cols,
        levels: panel.phase_levels,
        genes: align_phasors(&steering.phasors, panel.phase_levels),
    })
}
