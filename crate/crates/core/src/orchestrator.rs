//! The cycle protocol: optimize the RIS phases against the predicted pose,
//! command them, acquire measurements under them, then localize and map.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    calibrate_noise_variance, scene_mpcs, synthesize_received, ArrayGeometry, PhaseConfig,
    RisSteering, Waveform,
};
use crate::crlb::PathDirectionSums;
use crate::environment::{
    advance_ground_truth, mirror_point, propagation_paths, AgentState, Environment, LandmarkKind,
    RisPanel, Vec3,
};
use crate::error::{Error, Result};
use crate::measurement::{extract_mpcs, merge_ris_mpcs, NoiseModel, ObservedMpc};
use crate::optimizer::{optimize_phases, CrlbContext, GaConfig, RisTerm};
use crate::scenario::Scenario;
use crate::slam::map::bisector_plane;
use crate::slam::{
    CycleContext, CycleOutput, RisAmplitudeModel, SlamConfig, SlamState, StreamId, StreamStatus,
};

/// How the RIS phases are chosen each cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// CRLB-GA against the estimated map.
    Optimized,
    /// A fresh uniform draw every cycle; the optimizer is bypassed.
    RandomPhase,
    /// The panel is removed from the scene.
    NoRis,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Optimized, Scheme::RandomPhase, Scheme::NoRis];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Optimized => "optimized",
            Scheme::RandomPhase => "random_phase",
            Scheme::NoRis => "no_ris",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    /// δ, seconds.
    pub cycle_duration: f64,
    /// δ_O, seconds. Simulated only; the GA wall time is logged instead.
    pub optimization_budget: f64,
    /// δ_C, seconds.
    pub communication_latency: f64,
    pub cycles: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            cycle_duration: 0.1,
            optimization_budget: 0.05,
            communication_latency: 0.01,
            cycles: 600,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cycle_duration > 0.0
            && self.optimization_budget >= 0.0
            && self.communication_latency >= 0.0
            && self.optimization_budget + self.communication_latency < self.cycle_duration;
        if !ok {
            return Err(Error::Config(format!(
                "need 0 <= δ_O + δ_C < δ, got δ_O={} δ_C={} δ={}",
                self.optimization_budget, self.communication_latency, self.cycle_duration
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub cycle: CycleConfig,
    pub slam: SlamConfig,
    pub ga: GaConfig,
    /// SNR of the no-RIS reference signal at the start pose; infinite
    /// means noiseless measurements.
    pub snr_db: f64,
}

impl RunConfig {
    /// Timing and SNR taken from the scenario, everything else default.
    pub fn for_scenario(scenario: &Scenario, scheme: Scheme) -> Self {
        let cycle = CycleConfig {
            cycle_duration: scenario.cycle_duration,
            cycles: scenario.cycles,
            ..CycleConfig::default()
        };
        Self {
            scheme,
            cycle,
            slam: SlamConfig {
                cycle_duration: scenario.cycle_duration,
                ..SlamConfig::default()
            },
            ga: GaConfig::default(),
            snr_db: scenario.snr_db,
        }
    }
}

/// One completed cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub true_position: Vec3,
    pub estimated_position: Vec3,
    pub estimated_velocity: Vec3,
    pub position_sigma: f64,
    /// Genes of the commanded configuration.
    pub phases: Option<Vec<u32>>,
    /// Position CRLB of the true scene at the true pose under the commanded
    /// phases, m².
    pub crlb: f64,
    /// CRLB the optimizer predicted for its choice, m².
    pub planned_crlb: Option<f64>,
    /// |α| of the direct RIS path; zero without a panel.
    pub ris_gain: f64,
    pub mpc_count: usize,
    /// Belief on the stream that carries the true RIS path.
    pub ris_belief: Option<f64>,
    /// The belief's most probable landmark is the true RIS.
    pub ris_identified: bool,
    pub landmarks: usize,
    pub dead_reckoned: bool,
    /// A sub-step failed and the cycle fell back to dead reckoning.
    pub degraded: Option<String>,
    /// GA wall time in seconds. Not part of equality.
    pub optimizer_seconds: f64,
}

impl PartialEq for CycleRecord {
    fn eq(&self, o: &Self) -> bool {
        self.cycle == o.cycle
            && self.true_position == o.true_position
            && self.estimated_position == o.estimated_position
            && self.estimated_velocity == o.estimated_velocity
            && self.position_sigma == o.position_sigma
            && self.phases == o.phases
            && self.crlb.to_bits() == o.crlb.to_bits()
            && self.planned_crlb.map(f64::to_bits) == o.planned_crlb.map(f64::to_bits)
            && self.ris_gain == o.ris_gain
            && self.mpc_count == o.mpc_count
            && self.ris_belief == o.ris_belief
            && self.ris_identified == o.ris_identified
            && self.landmarks == o.landmarks
            && self.dead_reckoned == o.dead_reckoned
            && self.degraded == o.degraded
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub scheme: Scheme,
    pub seed: u64,
    pub snr_db: f64,
    pub noise_variance: f64,
    pub records: Vec<CycleRecord>,
}

impl RunLog {
    pub fn true_trajectory(&self) -> Vec<Vec3> {
        self.records.iter().map(|r| r.true_position).collect()
    }

    pub fn estimated_trajectory(&self) -> Vec<Vec3> {
        self.records.iter().map(|r| r.estimated_position).collect()
    }

    /// One JSON object per cycle.
    pub fn write_json_lines(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Independent, reproducible sub-seeds of a run seed.
fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_PHASES: u64 = 1;
const STREAM_GA: u64 = 2;
const STREAM_MEASURE: u64 = 3;
const STREAM_FILTER: u64 = 4;

/// Per-sample noise variance that puts the no-RIS reference signal at the
/// start pose at `snr_db`. Shared by every scheme of a scenario.
pub fn reference_noise_variance(scenario: &Scenario, snr_db: f64) -> Result<f64> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(0.0);
    }
    let env = scenario.build_environment()?.without_ris();
    let agent = scenario.initial_agent();
    let paths = propagation_paths(&env, &agent)?;
    let wl = scenario.wavelength();
    let mpcs = scene_mpcs(&env, &paths, &scenario.array(), wl, scenario.tx_gain, None)?;
    let reference = synthesize_received(&mpcs, &scenario.waveform(), &scenario.array(), 0.0, 0);
    Ok(calibrate_noise_variance(
        &reference,
        10f64.powf(snr_db / 10.0),
    ))
}

/// MAP belief below which the optimized scheme keeps probing.
const PROBE_UNTIL: f64 = 0.9;

/// A run in progress.
pub struct Run {
    pub config: RunConfig,
    pub env: Environment,
    pub truth: AgentState,
    pub slam: SlamState,
    seed: u64,
    cycle: usize,
    wavelength: f64,
    tx_gain: f64,
    array: ArrayGeometry,
    noise: NoiseModel,
    noise_variance: f64,
    ris_model: Option<RisAmplitudeModel>,
    phase_rng: ChaCha8Rng,
    filter_rng: ChaCha8Rng,
    last_phases: Option<PhaseConfig>,
    /// Last observed amplitude per stream.
    amplitudes: BTreeMap<StreamId, f64>,
    /// Wall coefficient estimated for virtual images of the RIS.
    wall_coefficients: BTreeMap<StreamId, f64>,
}

impl Run {
    pub fn new(scenario: &Scenario, config: RunConfig, seed: u64) -> Result<Self> {
        config.cycle.validate()?;
        config.ga.validate()?;
        let full = scenario.build_environment()?;
        full.validate()?;
        let env = match config.scheme {
            Scheme::NoRis => full.without_ris(),
            _ => full,
        };
        let wf: Waveform = scenario.waveform();
        let noise_variance = reference_noise_variance(scenario, config.snr_db)?;
        let fs = wf.config.sample_rate;
        let noise = if noise_variance > 0.0 {
            NoiseModel::from_noise_variance(noise_variance, fs, wf.effective_bandwidth_sq)
        } else {
            NoiseModel::noiseless(wf.effective_bandwidth_sq)
        };
        let wavelength = scenario.wavelength();
        let ris_model = env.panel()?.map(|p| RisAmplitudeModel {
            panel: p.clone(),
            wavelength,
            tx_gain: scenario.tx_gain,
            log_spread: config.slam.ris_log_spread,
        });
        let truth = scenario.initial_agent();
        let mut slam_cfg = config.slam;
        slam_cfg.cycle_duration = config.cycle.cycle_duration;
        let slam = SlamState::new(slam_cfg, &truth, env.tx_offset);
        Ok(Self {
            env,
            truth,
            slam,
            seed,
            cycle: 0,
            wavelength,
            tx_gain: scenario.tx_gain,
            array: scenario.array(),
            noise,
            noise_variance,
            ris_model,
            phase_rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_PHASES, 0)),
            filter_rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_FILTER, 0)),
            last_phases: None,
            amplitudes: BTreeMap::new(),
            wall_coefficients: BTreeMap::new(),
            config,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    fn panel(&self) -> Option<&RisPanel> {
        self.env.ris.first()
    }

    /// CRLB objective over the estimated map at the predicted pose. `None`
    /// while no landmark is a RIS candidate.
    pub fn planning_context(&self) -> Option<CrlbContext> {
        let panel = self.panel()?;
        let pose = self.slam.predicted_pose();
        let ris_id = self.slam.belief.map_estimate()?;
        let ris_pos = self.slam.candidate_position(ris_id)?;
        let mut moved = panel.clone();
        moved.center = ris_pos;
        let n0 = if self.noise.noise_spectral_density > 0.0 {
            self.noise.noise_spectral_density
        } else {
            1.0
        };
        let mut ctx = CrlbContext::new(self.noise.effective_bandwidth_sq, n0, panel.phase_levels);
        // the predicted pose spread keeps the bound finite while the map
        // still lacks two independent paths
        ctx.fixed_info += Matrix2::identity() * (2.0 / pose.sigma.powi(2));
        let sums = |a: &Vec3, b: &Vec3| {
            let g = (pose.tx - a).normalize() + (pose.rx - b).normalize();
            PathDirectionSums {
                nu: g.x,
                kappa: g.y,
            }
        };
        let steering =
            RisSteering::new(&moved, &pose.tx, &pose.rx, self.wavelength, self.tx_gain).ok()?;
        ctx.add_ris(RisTerm {
            sums: sums(&ris_pos, &ris_pos),
            steering,
            scale: 1.0,
        });
        let positions: BTreeMap<StreamId, Vec3> = self
            .slam
            .landmark_estimates()
            .iter()
            .map(|l| (l.0, l.1))
            .collect();
        for (id, pos, status) in self.slam.landmark_estimates() {
            if id == ris_id {
                continue;
            }
            let amp = self.amplitudes.get(&id).copied().unwrap_or(0.0);
            match status {
                StreamStatus::Point => ctx.add_fixed(sums(&pos, &pos), amp * amp),
                StreamStatus::Virtual { source } if source == ris_id => {
                    let Some(plane) = bisector_plane(&ris_pos, &pos) else {
                        continue;
                    };
                    let rx_img = mirror_point(&pose.rx, &plane);
                    let Ok(steering) =
                        RisSteering::new(&moved, &pose.tx, &rx_img, self.wavelength, self.tx_gain)
                    else {
                        continue;
                    };
                    ctx.add_ris(RisTerm {
                        sums: sums(&ris_pos, &pos),
                        steering,
                        scale: self.wall_coefficients.get(&id).copied().unwrap_or(1.0),
                    });
                }
                StreamStatus::Virtual { source } => {
                    if let Some(src) = positions.get(&source) {
                        ctx.add_fixed(sums(src, &pos), amp * amp);
                    }
                }
                _ => {}
            }
        }
        Some(ctx)
    }

    /// Optimization step: the configuration commanded for this cycle.
    fn choose_phases(&mut self, k: usize) -> Result<(Option<PhaseConfig>, Option<f64>)> {
        let Some(panel) = self.panel().cloned() else {
            return Ok((None, None));
        };
        match self.config.scheme {
            Scheme::NoRis => Ok((None, None)),
            Scheme::RandomPhase => {
                Ok((Some(PhaseConfig::random(&panel, &mut self.phase_rng)), None))
            }
            Scheme::Optimized => {
                // a fixed configuration leaves the RIS indistinguishable
                // from a scatterer, so every other cycle probes with random
                // phases until one landmark is believed to be the panel
                let settled = self
                    .slam
                    .belief
                    .map_estimate()
                    .is_some_and(|i| self.slam.belief.get(i) >= PROBE_UNTIL);
                let ctx = self.planning_context().filter(|_| settled || k % 2 == 0);
                let Some(ctx) = ctx else {
                    return Ok((Some(PhaseConfig::random(&panel, &mut self.phase_rng)), None));
                };
                let ga = GaConfig {
                    seed: sub_seed(self.seed, STREAM_GA, k as u64),
                    ..self.config.ga
                };
                let res = optimize_phases(
                    &ctx,
                    panel.rows,
                    panel.cols,
                    panel.phase_levels,
                    &ga,
                    self.last_phases.as_ref(),
                )?;
                let planned = ctx.crlb(&res.best.genes);
                Ok((Some(res.best), Some(planned)))
            }
        }
    }

    /// Runs one full cycle.
    pub fn step(&mut self) -> Result<CycleRecord> {
        self.cycle += 1;
        let k = self.cycle;
        let dt = self.config.cycle.cycle_duration;

        // optimization
        let clock = Instant::now();
        let mut degraded = None;
        let (phases, planned_crlb) = match self.choose_phases(k) {
            Ok(x) => x,
            Err(e) => {
                degraded = Some(format!("optimization: {e}"));
                (self.last_phases.clone(), None)
            }
        };
        let optimizer_seconds = clock.elapsed().as_secs_f64();

        // communication: the configuration is in place after δ_C < δ, so it
        // governs this cycle's measurement
        self.last_phases = phases.clone();

        // measurement acquisition
        self.truth =
            advance_ground_truth(&self.truth, dt, &self.env.room).map_err(|e| Error::Scenario {
                cycle: k,
                source: e,
            })?;
        let (observed, ris_gain) = match self.measure(phases.as_ref(), k) {
            Ok(x) => x,
            Err(e) => {
                degraded.get_or_insert(format!("measurement: {e}"));
                (Vec::new(), 0.0)
            }
        };

        // localization and mapping
        let ctx = CycleContext {
            phases: phases.as_ref(),
            ris_model: self.ris_model.as_ref(),
            noise_spectral_density: self.noise.noise_spectral_density,
        };
        let out = self.slam.lme_cycle(&observed, &ctx, &mut self.filter_rng);
        self.remember(&out, &observed, phases.as_ref());

        let crlb = self.true_crlb(phases.as_ref()).unwrap_or(f64::INFINITY);
        let ris_stream = out
            .association
            .assignments
            .iter()
            .zip(&observed)
            .find_map(|(a, o)| o.truth.filter(|t| t.kind == LandmarkKind::Ris).and(*a));
        let ris_belief = ris_stream.map(|id| self.slam.belief.get(id));
        let ris_identified = ris_stream.is_some() && self.slam.belief.map_estimate() == ris_stream;
        Ok(CycleRecord {
            cycle: k,
            true_position: self.truth.position,
            estimated_position: out.estimate.position,
            estimated_velocity: out.estimate.velocity,
            position_sigma: out.estimate.position_sigma,
            phases: phases.map(|p| p.genes),
            crlb,
            planned_crlb,
            ris_gain,
            mpc_count: observed.len(),
            ris_belief,
            ris_identified,
            landmarks: self.slam.slots.len(),
            dead_reckoned: out.flags.dead_reckoned,
            degraded,
            optimizer_seconds,
        })
    }

    fn measure(&self, phases: Option<&PhaseConfig>, k: usize) -> Result<(Vec<ObservedMpc>, f64)> {
        let paths = propagation_paths(&self.env, &self.truth)?;
        let mpcs = scene_mpcs(
            &self.env,
            &paths,
            &self.array,
            self.wavelength,
            self.tx_gain,
            phases,
        )?;
        let ris_gain = mpcs
            .iter()
            .find(|m| m.kind == LandmarkKind::Ris)
            .map_or(0.0, |m| m.gain.norm());
        let observed = extract_mpcs(
            &mpcs,
            &self.noise,
            sub_seed(self.seed, STREAM_MEASURE, k as u64),
        );
        Ok((merge_ris_mpcs(&observed), ris_gain))
    }

    /// Amplitudes and wall coefficients the next optimization works with.
    fn remember(
        &mut self,
        out: &CycleOutput,
        observed: &[ObservedMpc],
        phases: Option<&PhaseConfig>,
    ) {
        for (id, i) in out.association.retained() {
            self.amplitudes.insert(id, observed[i].amplitude.norm());
        }
        self.amplitudes
            .retain(|id, _| self.slam.registry.streams.contains_key(id));
        self.wall_coefficients
            .retain(|id, _| self.slam.registry.streams.contains_key(id));
        let (Some(panel), Some(phases), Some(ris_id)) =
            (self.panel(), phases, self.slam.belief.map_estimate())
        else {
            return;
        };
        let Some(ris_pos) = self.slam.candidate_position(ris_id) else {
            return;
        };
        let mut moved = panel.clone();
        moved.center = ris_pos;
        let rx = out.estimate.position;
        let tx = rx + self.slam.tx_offset;
        for (id, pos, status) in self.slam.landmark_estimates() {
            if status != (StreamStatus::Virtual { source: ris_id }) {
                continue;
            }
            let (Some(&amp), Some(plane)) =
                (self.amplitudes.get(&id), bisector_plane(&ris_pos, &pos))
            else {
                continue;
            };
            let rx_img = mirror_point(&rx, &plane);
            if let Ok(s) = RisSteering::new(&moved, &tx, &rx_img, self.wavelength, self.tx_gain) {
                let g = s.gain(phases).norm();
                if g > 0.0 {
                    self.wall_coefficients
                        .insert(id, (amp / g).clamp(0.05, 1.0));
                }
            }
        }
    }

    fn true_crlb(&self, phases: Option<&PhaseConfig>) -> Result<f64> {
        if self.noise.noise_spectral_density <= 0.0 {
            return Ok(0.0);
        }
        let ctx = CrlbContext::from_truth(
            &self.env,
            &self.truth,
            self.wavelength,
            self.tx_gain,
            self.noise.effective_bandwidth_sq,
            self.noise.noise_spectral_density,
        )?;
        Ok(ctx.crlb(phases.map_or(&[][..], |p| &p.genes)))
    }
}

/// Runs every configured cycle from the scenario's start pose.
pub fn run(scenario: &Scenario, config: &RunConfig, seed: u64) -> Result<RunLog> {
    let mut r = Run::new(scenario, config.clone(), seed)?;
    let mut records = Vec::with_capacity(config.cycle.cycles);
    for _ in 0..config.cycle.cycles {
        records.push(r.step()?);
    }
    Ok(RunLog {
        scheme: config.scheme,
        seed,
        snr_db: config.snr_db,
        noise_variance: r.noise_variance,
        records,
    })
}

#[cfg(test)]
mod tests;
