//! Human-editable scenario description (TOML) and its defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{ArrayGeometry, Waveform, WaveformConfig};
use crate::environment::{
    AgentState, Environment, Plane, RadiationPattern, Reflector, RisPanel, Room, Scatterer, Vec3,
};
use crate::error::{EnvError, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectorSpec {
    pub point: [f64; 3],
    pub normal: [f64; 3],
    #[serde(default = "default_reflection")]
    pub coefficient: f64,
}

fn default_reflection() -> f64 {
    0.85
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererSpec {
    pub position: [f64; 3],
    pub radius: f64,
    /// Overrides the projected-disc cross-section of the sphere.
    #[serde(default)]
    pub rcs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RisSpec {
    pub center: [f64; 3],
    /// Normal pointing into the room.
    pub normal: [f64; 3],
    /// In-plane column axis.
    pub u_axis: [f64; 3],
    pub rows: usize,
    pub cols: usize,
    pub element_dx: f64,
    pub element_dy: f64,
    /// Linear element gain; `None` uses the aperture gain 4π·dx·dy/λ².
    pub element_gain: Option<f64>,
    pub amplitude: f64,
    pub phase_levels: u32,
    pub pattern: RadiationPattern,
}

impl Default for RisSpec {
    fn default() -> Self {
        Self {
            center: [3.0, 3.0, 3.0],
            normal: [0.0, 0.0, -1.0],
            u_axis: [1.0, 0.0, 0.0],
            rows: 6,
            cols: 6,
            element_dx: 0.015,
            element_dy: 0.015,
            element_gain: None,
            amplitude: 1.0,
            phase_levels: 4,
            pattern: RadiationPattern::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSpec {
    pub start: [f64; 3],
    pub velocity: [f64; 3],
    /// Height of both antennas above the floor.
    pub antenna_height: f64,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0, 0.0],
            velocity: [0.0707, 0.0707, 0.0],
            antenna_height: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySpec {
    pub antennas: usize,
    /// Axis of the receive ULA.
    pub axis: [f64; 3],
    /// Tx phase center offset from the Rx, along the initial velocity.
    pub tx_rx_separation: f64,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self {
            antennas: 4,
            axis: [1.0, 0.0, 0.0],
            tx_rx_separation: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub room: [f64; 3],
    pub reflectors: Vec<ReflectorSpec>,
    pub scatterers: Vec<ScattererSpec>,
    pub ris: Option<RisSpec>,
    pub agent: AgentSpec,
    pub array: ArraySpec,
    pub waveform: WaveformConfig,
    pub tx_gain: f64,
    pub cycles: usize,
    pub cycle_duration: f64,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            room: [6.0, 6.0, 3.0],
            // The walls through the start pose and the floor/ceiling pair
            // are left out: with the antennas at z = 0 and the agent starting
            // in the corner they produce degenerate zero-length bounces.
            reflectors: vec![
                ReflectorSpec {
                    point: [6.0, 0.0, 0.0],
                    normal: [-1.0, 0.0, 0.0],
                    coefficient: 0.85,
                },
                ReflectorSpec {
                    point: [0.0, 6.0, 0.0],
                    normal: [0.0, -1.0, 0.0],
                    coefficient: 0.85,
                },
            ],
            scatterers: vec![ScattererSpec {
                position: [2.0, 1.0, 1.0],
                radius: 0.05,
                rcs: None,
            }],
            ris: Some(RisSpec::default()),
            agent: AgentSpec::default(),
            array: ArraySpec::default(),
            waveform: WaveformConfig::default(),
            tx_gain: 1.0,
            cycles: 600,
            cycle_duration: 0.1,
            snr_db: 20.0,
            seed: 1,
        }
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn wavelength(&self) -> f64 {
        crate::SPEED_OF_LIGHT / self.waveform.carrier_frequency
    }

    pub fn waveform(&self) -> Waveform {
        Waveform::new(self.waveform)
    }

    pub fn array(&self) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(self.array.antennas, v3(self.array.axis), self.wavelength())
    }

    fn heading(&self) -> Vec3 {
        let v = v3(self.agent.velocity);
        if v.norm() > 0.0 {
            v.normalize()
        } else {
            Vec3::x()
        }
    }

    pub fn initial_agent(&self) -> AgentState {
        let mut p = v3(self.agent.start);
        p.z += self.agent.antenna_height;
        AgentState {
            position: p,
            velocity: v3(self.agent.velocity),
        }
    }

    pub fn build_panel(&self, spec: &RisSpec) -> Result<RisPanel, EnvError> {
        let normal = v3(spec.normal).normalize();
        let u = v3(spec.u_axis).normalize();
        let lambda = self.wavelength();
        let panel = RisPanel {
            center: v3(spec.center),
            u_axis: u,
            v_axis: normal.cross(&u),
            normal,
            rows: spec.rows,
            cols: spec.cols,
            element_dx: spec.element_dx,
            element_dy: spec.element_dy,
            element_gain: spec.element_gain.unwrap_or(
                4.0 * std::f64::consts::PI * spec.element_dx * spec.element_dy / lambda.powi(2),
            ),
            reflection_amplitude: spec.amplitude,
            phase_levels: spec.phase_levels,
            pattern: spec.pattern,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn build_environment(&self) -> Result<Environment, EnvError> {
        let room = Room::new(self.room[0], self.room[1], self.room[2])?;
        let reflectors = self
            .reflectors
            .iter()
            .map(|r| Reflector::new(Plane::new(v3(r.point), v3(r.normal))?, r.coefficient))
            .collect::<Result<Vec<_>, _>>()?;
        let scatterers = self
            .scatterers
            .iter()
            .map(|s| {
                let mut sc = Scatterer::sphere(v3(s.position), s.radius);
                if let Some(rcs) = s.rcs {
                    sc.radar_cross_section = rcs;
                }
                sc
            })
            .collect();
        let ris = match &self.ris {
            Some(spec) if spec.rows > 0 && spec.cols > 0 => vec![self.build_panel(spec)?],
            _ => Vec::new(),
        };
        let env = Environment {
            room,
            reflectors,
            scatterers,
            ris,
            tx_offset: self.heading() * self.array.tx_rx_separation,
        };
        env.validate()?;
        if !env.room.contains(&self.initial_agent().position) {
            return Err(EnvError::InvalidScene(
                "agent starts outside the room".into(),
            ));
        }
        Ok(env)
    }

    /// Same scene with an `n`×`n` panel; `n = 0` removes the RIS.
    pub fn with_ris_size(&self, n: usize) -> Self {
        let mut s = self.clone();
        if n == 0 {
            s.ris = None;
        } else {
            let mut spec = s.ris.unwrap_or_default();
            spec.rows = n;
            spec.cols = n;
            s.ris = Some(spec);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_matches_setup() {
        let sc = Scenario::default();
        let env = sc.build_environment().unwrap();
        let p = &env.ris[0];
        assert_eq!(p.element_count(), 36);
        assert!((p.far_field_radius(sc.wavelength()) - 0.54).abs() < 0.01);
        assert!((env.tx_offset.norm() - 0.1).abs() < 1e-12);
        assert!((p.v_axis - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let sc = Scenario::default();
        let text = sc.to_toml_string().unwrap();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), sc);
        let partial =
            Scenario::from_toml_str("snr_db = 10.0\n[agent]\nantenna_height = 0.5\n").unwrap();
        assert_eq!(partial.snr_db, 10.0);
        assert_eq!(partial.initial_agent().position.z, 0.5);
        assert!(Scenario::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn zero_size_panel_removes_ris() {
        let env = Scenario::default()
            .with_ris_size(0)
            .build_environment()
            .unwrap();
        assert!(env.ris.is_empty());
    }
}
