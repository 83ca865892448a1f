//! Localization and mapping from MPC observations.
//!
//! MPC streams are followed across cycles by [`tracker`]; once a stream's
//! motion identifies it as a static landmark it gets a particle set in every
//! agent particle of the [`filter`]. [`belief`] tracks which landmark is the
//! RIS and [`map`] turns the estimate into reflectors and point landmarks.

pub mod belief;
pub mod filter;
pub mod geometry;
pub mod map;
pub mod tracker;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use belief::{update_ris_belief, RisAmplitudeModel, RisBelief};
pub use filter::{
    estimate_state, mpc_weights, normalize_resample, transition_agent_particles,
    update_agent_weights, update_landmark_weights, AgentParticle, FilterConfig, LandmarkParticle,
    LandmarkSet, Measurement, RhoMode, SlotModel, StateEstimate,
};
pub use map::{build_map, EstimatedMap, MapKind};
pub use tracker::{
    discard_transmitter_mpcs, Association, PoseEstimate, StreamId, StreamRegistry, StreamStatus,
};

use crate::channel::PhaseConfig;
use crate::environment::{AgentState, Vec3};
use crate::measurement::ObservedMpc;
use crate::SPEED_OF_LIGHT;
use geometry::{bistatic_backprojection, predict_point, predict_virtual, virtual_backprojection};
use tracker::{classify, consistency, MapPrediction, POSE_WANDER};

/// Floor of the agent spread used when interpreting observations.
const MIN_POSE_SIGMA: f64 = 0.002;
/// Inflation of the spawn spread over the averaged observation error.
const SPAWN_INFLATION: f64 = 1.0;
/// χ² lead of the transmitter hypothesis that takes a point out of the map.
const DEMOTE_LEAD: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlamConfig {
    pub filter: FilterConfig,
    pub cycle_duration: f64,
    /// Log-amplitude spread of the RIS identification likelihood.
    pub ris_log_spread: f64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            cycle_duration: 0.1,
            ris_log_spread: 0.5,
        }
    }
}

/// A landmark owned by the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub id: StreamId,
    /// Source stream of a virtual landmark.
    pub source: Option<StreamId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleFlags {
    /// Every agent weight vanished; weights were reset.
    pub diverged: bool,
    /// Landmarks whose set was re-initialized in at least one agent.
    pub lost: Vec<StreamId>,
    /// The RIS evidence annihilated every candidate.
    pub belief_rejected: bool,
    /// No landmark observation entered the update.
    pub dead_reckoned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleOutput {
    pub estimate: StateEstimate,
    pub map: EstimatedMap,
    pub association: Association,
    pub flags: CycleFlags,
}

/// What the cycle's measurements were taken under.
#[derive(Debug, Clone, Copy, Default)]
pub struct CycleContext<'a> {
    pub phases: Option<&'a PhaseConfig>,
    pub ris_model: Option<&'a RisAmplitudeModel>,
    /// N₀ of the receiver, for the amplitude noise.
    pub noise_spectral_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlamState {
    pub config: SlamConfig,
    /// Tx phase center relative to the Rx.
    pub tx_offset: Vec3,
    pub particles: Vec<AgentParticle>,
    pub slots: Vec<Slot>,
    pub registry: StreamRegistry,
    pub belief: RisBelief,
    pub estimate: StateEstimate,
    pub cycle: usize,
}

impl SlamState {
    /// All agent particles at the known initial pose.
    pub fn new(config: SlamConfig, initial: &AgentState, tx_offset: Vec3) -> Self {
        let n = config.filter.agent_particles.max(1);
        let particles = vec![
            AgentParticle {
                position: initial.position,
                velocity: initial.velocity,
                weight: 1.0 / n as f64,
                sets: Vec::new(),
            };
            n
        ];
        let estimate = estimate_state(&particles);
        Self {
            config,
            tx_offset,
            particles,
            slots: Vec::new(),
            registry: StreamRegistry::default(),
            belief: RisBelief::default(),
            estimate,
            cycle: 0,
        }
    }

    pub fn slot_index(&self, id: StreamId) -> Option<usize> {
        self.slots.iter().position(|s| s.id == id)
    }

    fn models(&self) -> Vec<SlotModel> {
        self.slots
            .iter()
            .map(|s| match s.source.and_then(|src| self.slot_index(src)) {
                Some(source) => SlotModel::Virtual { source },
                None => SlotModel::Point,
            })
            .collect()
    }

    /// Estimated position of every filter landmark.
    pub fn landmark_estimates(&self) -> Vec<(StreamId, Vec3, StreamStatus)> {
        self.slots
            .iter()
            .zip(&self.estimate.landmarks)
            .map(|(s, (p, _))| {
                let status = self
                    .registry
                    .get(s.id)
                    .map_or(StreamStatus::Point, |st| st.status);
                (s.id, *p, status)
            })
            .collect()
    }

    /// Dead-reckoned pose one cycle ahead.
    pub fn predicted_pose(&self) -> PoseEstimate {
        let rx = self.estimate.position + self.estimate.velocity * self.config.cycle_duration;
        let q = self.config.filter.accel_noise.max(0.0).sqrt();
        let dt = self.config.cycle_duration;
        let grow = q * dt * dt * 0.5;
        PoseEstimate {
            rx,
            tx: rx + self.tx_offset,
            sigma: (self.estimate.position_sigma.powi(2) + grow * grow)
                .sqrt()
                .max(MIN_POSE_SIGMA),
        }
    }

    fn posterior_pose(&self) -> PoseEstimate {
        PoseEstimate {
            rx: self.estimate.position,
            tx: self.estimate.position + self.tx_offset,
            sigma: self.estimate.position_sigma.max(MIN_POSE_SIGMA),
        }
    }

    fn map_predictions(&self, pose: &PoseEstimate) -> BTreeMap<StreamId, MapPrediction> {
        let mut out = BTreeMap::new();
        for (j, s) in self.slots.iter().enumerate() {
            let (q, sigma) = self.estimate.landmarks[j];
            let predicted = match s.source.and_then(|src| self.slot_index(src)) {
                Some(k) => predict_virtual(&self.estimate.landmarks[k].0, &q, &pose.tx, &pose.rx),
                None => predict_point(&q, &pose.tx, &pose.rx),
            };
            out.insert(s.id, MapPrediction { predicted, sigma });
        }
        out
    }

    /// Position of a candidate as the RIS model sees it.
    pub fn candidate_position(&self, id: StreamId) -> Option<Vec3> {
        if let Some(j) = self.slot_index(id) {
            return Some(self.estimate.landmarks[j].0);
        }
        self.registry.get(id)?.fitted_point()
    }

    fn update_belief(
        &mut self,
        assoc: &Association,
        observed: &[ObservedMpc],
        pose: &PoseEstimate,
        ctx: &CycleContext,
        cycle: usize,
    ) -> bool {
        let (Some(model), Some(phases)) = (ctx.ris_model, ctx.phases) else {
            return false;
        };
        let ids: Vec<StreamId> = self
            .registry
            .streams
            .values()
            .filter(|s| s.status != StreamStatus::Transmitter)
            .map(|s| s.id)
            .collect();
        if self.belief.probs.is_empty() {
            self.belief = RisBelief::uniform(&ids);
        } else {
            self.belief.sync(&ids);
        }
        let mut lk = BTreeMap::new();
        for (id, i) in assoc.retained() {
            let Some(stream) = self.registry.get(id) else {
                continue;
            };
            if let StreamStatus::Virtual { .. } = stream.status {
                lk.insert(id, 1.0 / belief::MAX_LIKELIHOOD_RATIO);
                continue;
            }
            let n = stream.history.len();
            if n < 2 || stream.history[n - 2].cycle + 1 != cycle {
                continue;
            }
            let prev = stream.history[n - 2].amplitude;
            let o = &observed[i];
            let Some(q) = self.candidate_position(id) else {
                continue;
            };
            let expected = model
                .expected(&q, &pose.tx, &pose.rx, phases)
                .unwrap_or(0.0);
            let amp_sd = (ctx.noise_spectral_density / 2.0).sqrt();
            lk.insert(
                id,
                model.likelihood_ratio(o.amplitude.norm(), prev, expected, amp_sd),
            );
        }
        let (post, rejected) = update_ris_belief(&self.belief, &lk);
        self.belief = post;
        rejected
    }

    /// Particle set of a new landmark in one agent, sampled around `center`
    /// with a radial and two tangential deviations.
    fn sample_set(
        &self,
        center: Vec3,
        rx: &Vec3,
        radial: f64,
        tangential: f64,
        rng: &mut impl Rng,
    ) -> LandmarkSet {
        let u = (center - rx).try_normalize(1e-12).unwrap_or(Vec3::z());
        let a = if u.x.abs() < 0.9 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        let t1 = u.cross(&a).normalize();
        let t2 = u.cross(&t1);
        let n = self.config.filter.landmark_particles.max(1);
        let pts = (0..n)
            .map(|_| {
                let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                center + u * (radial * z[0]) + t1 * (tangential * z[1]) + t2 * (tangential * z[2])
            })
            .collect();
        LandmarkSet::uniform(pts)
    }

    fn spawn(&mut self, id: StreamId, source: Option<StreamId>, center: Vec3, rng: &mut impl Rng) {
        let stream = self.registry.get(id).expect("spawned from a known stream");
        let n = stream.history.len() as f64;
        let f = &self.config.filter;
        let r = (center - self.estimate.position).norm().max(0.1);
        let sl2 = stream
            .history
            .iter()
            .map(|o| o.sigma_length.powi(2))
            .sum::<f64>()
            / n;
        let sa2 = stream
            .history
            .iter()
            .map(|o| o.sigma_angle.powi(2))
            .sum::<f64>()
            / n;
        // one common center for every agent: agents whose pose disagrees
        // with the averaged track lose weight on the next updates
        let radial = SPAWN_INFLATION * ((sl2 + f.length_floor.powi(2)) / n).sqrt();
        let tangential = SPAWN_INFLATION * (r * r * (sa2 + f.angle_floor.powi(2)) / n).sqrt();
        let sets: Vec<LandmarkSet> = self
            .particles
            .iter()
            .map(|p| p.position)
            .collect::<Vec<_>>()
            .into_iter()
            .map(|rx| self.sample_set(center, &rx, radial, tangential, rng))
            .collect();
        for (p, s) in self.particles.iter_mut().zip(sets) {
            p.sets.push(s);
        }
        self.slots.push(Slot { id, source });
    }

    fn remove_slot(&mut self, id: StreamId) {
        let Some(j) = self.slot_index(id) else { return };
        self.slots.remove(j);
        self.estimate.landmarks.remove(j);
        for p in &mut self.particles {
            p.sets.remove(j);
        }
        // images of a removed source lose their meaning
        let orphans: Vec<StreamId> = self
            .slots
            .iter()
            .filter(|s| s.source == Some(id))
            .map(|s| s.id)
            .collect();
        for o in orphans {
            if let Some(s) = self.registry.streams.get_mut(&o) {
                s.status = StreamStatus::Tentative;
            }
            self.remove_slot(o);
        }
    }

    /// Re-evaluates the motion evidence of every stream and moves streams
    /// into or out of the filter.
    fn reclassify(&mut self, rng: &mut impl Rng) {
        let sources: BTreeMap<StreamId, Vec3> = self
            .slots
            .iter()
            .zip(&self.estimate.landmarks)
            .filter(|(s, _)| s.source.is_none())
            .map(|(s, l)| (s.id, l.0))
            .collect();
        let ids: Vec<StreamId> = self.registry.streams.keys().copied().collect();
        for id in ids {
            let stream = &self.registry.streams[&id];
            if !matches!(stream.status, StreamStatus::Tentative | StreamStatus::Point)
                || stream.last_cycle != self.cycle
            {
                continue;
            }
            let c = consistency(stream, &sources);
            let Some(status) = classify(&c) else {
                continue;
            };
            let current = stream.status;
            if status == current {
                continue;
            }
            // established point landmarks only move on decisive evidence,
            // judged against the full pose spread rather than its wander
            if current == StreamStatus::Point
                && c.point * POSE_WANDER.powi(2) <= c.threshold()
                && c.transmitter + DEMOTE_LEAD >= c.point
            {
                continue;
            }
            if current == StreamStatus::Point {
                self.remove_slot(id);
            }
            self.registry.streams.get_mut(&id).unwrap().status = status;
            match status {
                StreamStatus::Point => {
                    if let Some(q) = c.point_estimate {
                        self.spawn(id, None, q, rng);
                    }
                }
                StreamStatus::Virtual { source } => {
                    if let Some((_, _, v)) = c.virtual_best {
                        self.spawn(id, Some(source), v, rng);
                    }
                }
                _ => {}
            }
        }
    }

    /// Re-initializes a lost set of agent `i` around the back-projection of
    /// its current observation.
    fn reinit_set(&mut self, i: usize, j: usize, m: &Measurement, rng: &mut impl Rng) {
        let rx = self.particles[i].position;
        let tx = rx + self.tx_offset;
        let center = match self.models()[j] {
            SlotModel::Point => bistatic_backprojection(&tx, &rx, m.length, &m.dir),
            SlotModel::Virtual { source } => {
                let s = self.particles[i].sets[source].mean();
                virtual_backprojection(&s, &tx, &rx, m.length, &m.dir)
            }
        };
        let Some(center) = center else { return };
        let r = (center - rx).norm();
        let set = self.sample_set(center, &rx, m.sigma_length, r * m.sigma_angle, rng);
        self.particles[i].sets[j] = set;
    }

    /// One localization-and-mapping cycle.
    pub fn lme_cycle(
        &mut self,
        observed: &[ObservedMpc],
        ctx: &CycleContext,
        rng: &mut impl Rng,
    ) -> CycleOutput {
        self.cycle += 1;
        let cycle = self.cycle;
        let mut flags = CycleFlags::default();

        // 1. association, transmitter discard and RIS identification
        let pose = self.predicted_pose();
        let preds = self.map_predictions(&pose);
        let assoc = self.registry.associate(observed, &preds, &pose, cycle);
        self.registry.record(&assoc, observed, &pose, cycle);
        flags.belief_rejected = self.update_belief(&assoc, observed, &pose, ctx, cycle);

        // 2. transition
        let f = self.config.filter;
        transition_agent_particles(
            &mut self.particles,
            self.config.cycle_duration,
            f.accel_noise,
            f.planar,
            rng,
        );

        // 3. MPC weights over the retained MPCs
        let retained = assoc.retained();
        let rho = mpc_weights(
            &retained
                .iter()
                .map(|&(_, i)| observed[i].amplitude.norm())
                .collect::<Vec<_>>(),
        );
        let mut per_slot: BTreeMap<usize, Vec<Measurement>> = BTreeMap::new();
        for (k, &(id, i)) in retained.iter().enumerate() {
            let Some(j) = self.slot_index(id) else {
                continue;
            };
            let o = &observed[i];
            per_slot.entry(j).or_default().push(Measurement {
                length: o.toa * SPEED_OF_LIGHT,
                dir: o.direction(),
                sigma_length: ((o.sigma_toa * SPEED_OF_LIGHT).powi(2) + f.length_floor.powi(2))
                    .sqrt(),
                sigma_angle: (o.sigma_aoa.powi(2) + f.angle_floor.powi(2)).sqrt(),
                rho: rho[k],
            });
        }
        let observations: Vec<(usize, Vec<Measurement>)> = per_slot.into_iter().collect();
        flags.dead_reckoned = observations.is_empty();

        // 4-5. landmark weights, then agent weights
        if !observations.is_empty() {
            let models = self.models();
            let res = filter::update_observed_sets(
                &mut self.particles,
                &models,
                &observations,
                &self.tx_offset,
                f.rho,
            );
            let sums: Vec<f64> = res.iter().map(|r| r.0).collect();
            flags.diverged = update_agent_weights(&mut self.particles, &sums);
            let mut lost = std::collections::BTreeSet::new();
            for (i, (_, l)) in res.iter().enumerate() {
                for &j in l {
                    let m = observations.iter().find(|o| o.0 == j).unwrap().1[0];
                    self.reinit_set(i, j, &m, rng);
                    lost.insert(self.slots[j].id);
                }
            }
            flags.lost = lost.into_iter().collect();
        }

        // 6. normalization and resampling
        normalize_resample(&mut self.particles, &f, rng);

        // 7. estimate
        self.estimate = estimate_state(&self.particles);
        let post = self.posterior_pose();
        self.registry.refine_pose(cycle, &post);
        self.reclassify(rng);
        self.estimate = estimate_state(&self.particles);

        // 8. map
        let ris = if ctx.ris_model.is_some() {
            self.belief.map_estimate()
        } else {
            None
        };
        let map = build_map(&self.landmark_estimates(), ris);
        CycleOutput {
            estimate: self.estimate.clone(),
            map,
            association: assoc,
            flags,
        }
    }
}

#[cfg(test)]
mod tests;
