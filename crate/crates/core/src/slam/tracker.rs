//! MPC streams: cycle-to-cycle association, motion-consistency tests that
//! separate static landmarks from moving transmitter images, and source
//! pairing of virtual landmarks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::geometry::{
    angle_between, bistatic_backprojection, predict_point, predict_transmitter_image,
    predict_virtual, transmitter_image_plane, virtual_backprojection, Predicted,
};
use crate::environment::Vec3;
use crate::measurement::ObservedMpc;
use crate::SPEED_OF_LIGHT;

pub type StreamId = usize;

/// Observations kept per stream.
pub const HISTORY: usize = 30;
/// A stream unseen for longer than this many cycles is dropped, unless it
/// already became a map landmark.
pub const STALE_CYCLES: usize = 5;
const GATE_SIGMAS: f64 = 3.0;
const GATE_FLOOR_LEN: f64 = 0.005;
const GATE_FLOOR_ANGLE: f64 = 0.005;
/// Per-cycle growth of the gate of a stream predicted from its last sighting.
const DRIFT_LEN_PER_CYCLE: f64 = 0.025;
const DRIFT_ANGLE_PER_CYCLE: f64 = 0.01;
const FIT_FLOOR_LEN: f64 = 0.001;
/// Fraction of the agent spread treated as independent per-cycle error.
pub const POSE_WANDER: f64 = 0.25;
const FIT_FLOOR_ANGLE: f64 = 0.001;
/// Minimum χ² gap between the winning motion hypothesis and the others.
const DECISIVE: f64 = 25.0;
const MIN_OBS: usize = 3;
const MIN_POINT_OBS: usize = 12;

/// Agent pose used to interpret a cycle's observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub rx: Vec3,
    pub tx: Vec3,
    /// Position spread of the agent belief, meters.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamObs {
    pub cycle: usize,
    /// Path length c·τ̂.
    pub length: f64,
    pub dir: Vec3,
    pub sigma_length: f64,
    pub sigma_angle: f64,
    pub amplitude: f64,
    pub pose: PoseEstimate,
}

impl StreamObs {
    pub fn from_mpc(cycle: usize, mpc: &ObservedMpc, pose: PoseEstimate) -> Self {
        Self {
            cycle,
            length: mpc.toa * SPEED_OF_LIGHT,
            dir: mpc.direction(),
            sigma_length: mpc.sigma_toa * SPEED_OF_LIGHT,
            sigma_angle: mpc.sigma_aoa,
            amplitude: mpc.amplitude.norm(),
            pose,
        }
    }

    /// Whitened residuals: length, then the direction error split over
    /// two tangent axes with the great-circle angle as its norm.
    fn whitened(&self, p: &Predicted) -> [f64; 3] {
        let r = (self.length * 0.5).max(0.1);
        // a common pose offset is absorbed by the fitted landmark; only the
        // cycle-to-cycle wander of the estimate counts against a hypothesis
        let wander = POSE_WANDER * self.pose.sigma;
        let sl = (self.sigma_length.powi(2) + wander.powi(2) + FIT_FLOOR_LEN.powi(2)).sqrt();
        let sa = (self.sigma_angle.powi(2) + (wander / r).powi(2) + FIT_FLOOR_ANGLE.powi(2)).sqrt();
        let a = if self.dir.x.abs() < 0.9 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        let e1 = self.dir.cross(&a).normalize();
        let e2 = self.dir.cross(&e1);
        let (t1, t2) = (p.dir.dot(&e1), p.dir.dot(&e2));
        let t = t1.hypot(t2);
        let ang = angle_between(&p.dir, &self.dir);
        let (c1, c2) = if t > 1e-15 {
            (t1 * ang / t, t2 * ang / t)
        } else {
            (ang, 0.0)
        };
        [(p.length - self.length) / sl, c1 / sa, c2 / sa]
    }
}

/// Levenberg-Marquardt on the whitened residuals of a 3-parameter model,
/// started at `x0`. Returns the refined parameters and their χ².
fn refine(x0: Vec3, residuals: impl Fn(&Vec3) -> Vec<f64>) -> (Vec3, f64) {
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut x = x0;
    let mut r = residuals(&x);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    for _ in 0..30 {
        if !c.is_finite() {
            break;
        }
        let h = 1e-7 * x.norm().max(1.0);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let mut xp = x;
                xp[k] += h;
                residuals(&xp)
                    .iter()
                    .zip(&r)
                    .map(|(a, b)| (a - b) / h)
                    .collect()
            })
            .collect();
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = Vec3::zeros();
        for a in 0..3 {
            jtr[a] = cols[a].iter().zip(&r).map(|(j, e)| j * e).sum();
            for b in 0..3 {
                jtj[(a, b)] = cols[a].iter().zip(&cols[b]).map(|(p, q)| p * q).sum();
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = jtj;
            for k in 0..3 {
                m[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = m.lu().solve(&(-jtr)) else {
                break;
            };
            let xn = x + step;
            let rn = residuals(&xn);
            let cn = cost(&rn);
            if cn < c {
                let done = c - cn <= 1e-10 * c.max(1e-300);
                (x, r, c) = (xn, rn, cn);
                lambda = (lambda * 0.1).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x, c)
}

/// What a stream has been identified as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamStatus {
    /// Not enough evidence yet; not used by the filter.
    Tentative,
    /// Static single-bounce landmark (scatterer or RIS).
    Point,
    /// Mirror image of the `source` stream's landmark.
    Virtual { source: StreamId },
    /// Moving image of the transmitter; its MPCs are discarded.
    Transmitter,
}

impl StreamStatus {
    pub fn is_landmark(&self) -> bool {
        matches!(self, Self::Point | Self::Virtual { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stream {
    pub id: StreamId,
    pub status: StreamStatus,
    pub history: VecDeque<StreamObs>,
    pub last_cycle: usize,
}

impl Stream {
    pub fn last(&self) -> &StreamObs {
        self.history
            .back()
            .expect("streams are created with one observation")
    }

    /// Position of the best static single-bounce fit over the history.
    pub fn fitted_point(&self) -> Option<Vec3> {
        point_fit(self.history.iter()).1
    }
}

/// χ² of each motion hypothesis over a stream's history.
#[derive(Debug, Clone, PartialEq)]
pub struct Consistency {
    pub observations: usize,
    pub point: f64,
    pub point_estimate: Option<Vec3>,
    pub transmitter: f64,
    /// Best virtual hypothesis: (source, χ², image estimate).
    pub virtual_best: Option<(StreamId, f64, Vec3)>,
}

impl Consistency {
    /// Largest χ² still compatible with a hypothesis.
    pub fn threshold(&self) -> f64 {
        6.0 * self.observations as f64 + 6.0
    }
}

fn mean(points: &[Vec3]) -> Option<Vec3> {
    (!points.is_empty()).then(|| points.iter().sum::<Vec3>() / points.len() as f64)
}

/// Static point: one position explains every observation.
pub fn point_fit<'a>(obs: impl Iterator<Item = &'a StreamObs> + Clone) -> (f64, Option<Vec3>) {
    let pts: Vec<Vec3> = obs
        .clone()
        .filter_map(|o| bistatic_backprojection(&o.pose.tx, &o.pose.rx, o.length, &o.dir))
        .collect();
    let Some(q0) = mean(&pts) else {
        return (f64::INFINITY, None);
    };
    let (q, chi) = refine(q0, |q| {
        obs.clone()
            .flat_map(|o| o.whitened(&predict_point(q, &o.pose.tx, &o.pose.rx)))
            .collect()
    });
    (chi, Some(q))
}

/// Tx image: a fixed reflector mirrors the moving Tx. The plane is carried
/// by the image of the first observation's Tx.
pub fn transmitter_fit<'a>(obs: impl Iterator<Item = &'a StreamObs> + Clone) -> f64 {
    let planes: Vec<(Vec3, f64)> = obs
        .clone()
        .filter_map(|o| transmitter_image_plane(&o.pose.tx, &o.pose.rx, o.length, &o.dir))
        .collect();
    let Some(first) = obs.clone().next() else {
        return f64::INFINITY;
    };
    if planes.is_empty() {
        return f64::INFINITY;
    }
    // average the planes with their normals on a common side
    let n_ref = planes[0].0;
    let (n_sum, off_sum) = planes.iter().fold((Vec3::zeros(), 0.0), |(n, d), p| {
        let s = if p.0.dot(&n_ref) < 0.0 { -1.0 } else { 1.0 };
        (n + p.0 * s, d + p.1 * s)
    });
    if n_sum.norm() < 1e-9 {
        return f64::INFINITY;
    }
    let normal = n_sum.normalize();
    let offset = off_sum / planes.len() as f64;
    let tx0 = first.pose.tx;
    let img0 = tx0 - normal * (2.0 * (normal.dot(&tx0) - offset));
    let (_, chi) = refine(img0, |img| {
        let d = tx0 - img;
        let Some(n) = d.try_normalize(1e-12) else {
            return vec![f64::INFINITY];
        };
        let off = n.dot(&((tx0 + img) * 0.5));
        obs.clone()
            .flat_map(|o| o.whitened(&predict_transmitter_image(&n, off, &o.pose.tx, &o.pose.rx)))
            .collect()
    });
    chi
}

/// Mirror image of a known source: the first leg ends at the source.
pub fn virtual_fit<'a>(
    source: &Vec3,
    obs: impl Iterator<Item = &'a StreamObs> + Clone,
) -> (f64, Option<Vec3>) {
    let pts: Vec<Vec3> = obs
        .clone()
        .filter_map(|o| virtual_backprojection(source, &o.pose.tx, &o.pose.rx, o.length, &o.dir))
        .collect();
    let n = obs.clone().count();
    let Some(v0) = mean(&pts).filter(|_| pts.len() == n) else {
        return (f64::INFINITY, None);
    };
    let (v, chi) = refine(v0, |v| {
        obs.clone()
            .flat_map(|o| o.whitened(&predict_virtual(source, v, &o.pose.tx, &o.pose.rx)))
            .collect()
    });
    // the image must lie farther away than the source itself
    if obs
        .clone()
        .any(|o| (v - o.pose.rx).norm() <= (source - o.pose.rx).norm())
    {
        return (f64::INFINITY, None);
    }
    (chi, Some(v))
}

pub fn consistency(stream: &Stream, sources: &BTreeMap<StreamId, Vec3>) -> Consistency {
    let obs = stream.history.iter();
    let (point, point_estimate) = point_fit(obs.clone());
    let transmitter = transmitter_fit(obs.clone());
    let mut virtual_best: Option<(StreamId, f64, Vec3)> = None;
    for (&sid, s) in sources {
        if sid == stream.id {
            continue;
        }
        if let (chi, Some(v)) = virtual_fit(s, obs.clone()) {
            if virtual_best.as_ref().is_none_or(|b| chi < b.1) {
                virtual_best = Some((sid, chi, v));
            }
        }
    }
    Consistency {
        observations: stream.history.len(),
        point,
        point_estimate,
        transmitter,
        virtual_best,
    }
}

/// Status implied by the motion evidence, or `None` while undecided.
///
/// A stream that no static point explains is a moving source unless it is
/// the mirror image of a known landmark. A full history that is still
/// ambiguous goes to the lower χ².
pub fn classify(c: &Consistency) -> Option<StreamStatus> {
    if c.observations < MIN_OBS {
        return None;
    }
    let thr = c.threshold();
    let virt = c.virtual_best.as_ref().filter(|v| v.1 <= thr);
    if let Some(&(source, chi, _)) = virt {
        if chi + DECISIVE < c.point.min(c.transmitter) || c.point > thr {
            return Some(StreamStatus::Virtual { source });
        }
    }
    if c.point > thr || c.transmitter + DECISIVE < c.point {
        return Some(StreamStatus::Transmitter);
    }
    // strong transmitter images separate from points well before this;
    // weak streams that still cannot be told apart are harmless as points
    if c.observations >= MIN_POINT_OBS && c.point <= c.transmitter {
        return Some(StreamStatus::Point);
    }
    if c.observations >= HISTORY {
        let v = virt.map_or(f64::INFINITY, |v| v.1);
        return Some(if v < c.point.min(c.transmitter) {
            StreamStatus::Virtual {
                source: virt.unwrap().0,
            }
        } else if c.point <= c.transmitter {
            StreamStatus::Point
        } else {
            StreamStatus::Transmitter
        });
    }
    None
}

/// Prediction of a landmark stream from the current map estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPrediction {
    pub predicted: Predicted,
    /// Position spread of the landmark estimate, meters.
    pub sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Association {
    /// Stream of every input MPC, in input order; `None` for none.
    pub assignments: Vec<Option<StreamId>>,
    /// Streams created this cycle.
    pub spawned: Vec<StreamId>,
    /// Input indices of MPCs dropped as transmitter images.
    pub discarded: Vec<usize>,
}

impl Association {
    /// (stream, MPC index) pairs of retained MPCs, sorted by stream.
    pub fn retained(&self) -> Vec<(StreamId, usize)> {
        let drop: BTreeSet<usize> = self.discarded.iter().copied().collect();
        let mut out: Vec<(StreamId, usize)> = self
            .assignments
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .filter_map(|(i, s)| s.map(|s| (s, i)))
            .collect();
        out.sort();
        out
    }
}

/// Processing order: strongest first, ties broken on the measurement values
/// so the result does not depend on input order.
pub fn canonical_order(observed: &[ObservedMpc]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..observed.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&observed[a], &observed[b]);
        y.amplitude
            .norm()
            .total_cmp(&x.amplitude.norm())
            .then(x.toa.total_cmp(&y.toa))
            .then(x.aoa.total_cmp(&y.aoa))
            .then(x.elevation.total_cmp(&y.elevation))
    });
    idx
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamRegistry {
    pub streams: BTreeMap<StreamId, Stream>,
    pub next_id: StreamId,
}

impl StreamRegistry {
    pub fn get(&self, id: StreamId) -> Option<&Stream> {
        self.streams.get(&id)
    }

    pub fn landmark_ids(&self) -> Vec<StreamId> {
        self.streams
            .values()
            .filter(|s| s.status.is_landmark())
            .map(|s| s.id)
            .collect()
    }

    /// Nearest-neighbour gating of each MPC against the stream predictions.
    ///
    /// Map landmarks are predicted from `map`; other streams from their last
    /// sighting with a gate that widens with the time since. MPCs are taken
    /// strongest first and each stream accepts at most one; ungated MPCs
    /// spawn new streams.
    pub fn associate(
        &self,
        observed: &[ObservedMpc],
        map: &BTreeMap<StreamId, MapPrediction>,
        pose: &PoseEstimate,
        cycle: usize,
    ) -> Association {
        let mut assoc = Association {
            assignments: vec![None; observed.len()],
            ..Default::default()
        };
        let mut taken = BTreeSet::new();
        let mut next = self.next_id;
        for i in canonical_order(observed) {
            let o = StreamObs::from_mpc(cycle, &observed[i], *pose);
            let mut best: Option<(f64, StreamId)> = None;
            for s in self.streams.values() {
                if taken.contains(&s.id) {
                    continue;
                }
                let Some(cost) = self.gate_cost(s, &o, map, pose) else {
                    continue;
                };
                if best.is_none_or(|b| cost < b.0) {
                    best = Some((cost, s.id));
                }
            }
            let id = match best {
                Some((_, id)) => id,
                None => {
                    next += 1;
                    assoc.spawned.push(next - 1);
                    next - 1
                }
            };
            taken.insert(id);
            assoc.assignments[i] = Some(id);
            if self
                .get(id)
                .is_some_and(|s| s.status == StreamStatus::Transmitter)
            {
                assoc.discarded.push(i);
            }
        }
        assoc.discarded.sort_unstable();
        assoc
    }

    fn gate_cost(
        &self,
        s: &Stream,
        o: &StreamObs,
        map: &BTreeMap<StreamId, MapPrediction>,
        pose: &PoseEstimate,
    ) -> Option<f64> {
        let (pred, extra_len, extra_angle) = match map.get(&s.id) {
            Some(m) => {
                let r = m.predicted.length * 0.5;
                let spread = (m.sigma.powi(2) + pose.sigma.powi(2)).sqrt();
                (m.predicted, spread, spread / r.max(0.1))
            }
            None => {
                let last = s.last();
                let gap = o.cycle.saturating_sub(last.cycle).max(1) as f64;
                let moved = (pose.rx - last.pose.rx).norm();
                let pred = Predicted {
                    length: last.length,
                    dir: last.dir,
                };
                let r = (last.length * 0.5).max(0.1);
                (
                    pred,
                    DRIFT_LEN_PER_CYCLE * gap + 2.0 * moved,
                    DRIFT_ANGLE_PER_CYCLE * gap + moved / r,
                )
            }
        };
        let last = s.last();
        let sl = (o.sigma_length.powi(2)
            + last.sigma_length.powi(2)
            + extra_len.powi(2)
            + GATE_FLOOR_LEN.powi(2))
        .sqrt();
        let sa = (o.sigma_angle.powi(2)
            + last.sigma_angle.powi(2)
            + extra_angle.powi(2)
            + GATE_FLOOR_ANGLE.powi(2))
        .sqrt();
        let dl = (o.length - pred.length) / sl;
        let da = angle_between(&o.dir, &pred.dir) / sa;
        (dl.abs() <= GATE_SIGMAS && da <= GATE_SIGMAS).then_some(dl * dl + da * da)
    }

    /// Appends this cycle's observations and drops stale streams.
    pub fn record(
        &mut self,
        assoc: &Association,
        observed: &[ObservedMpc],
        pose: &PoseEstimate,
        cycle: usize,
    ) {
        for (i, id) in assoc.assignments.iter().enumerate() {
            let Some(id) = *id else { continue };
            let obs = StreamObs::from_mpc(cycle, &observed[i], *pose);
            let s = self.streams.entry(id).or_insert_with(|| Stream {
                id,
                status: StreamStatus::Tentative,
                history: VecDeque::new(),
                last_cycle: cycle,
            });
            s.history.push_back(obs);
            if s.history.len() > HISTORY {
                s.history.pop_front();
            }
            s.last_cycle = cycle;
        }
        self.next_id = self
            .next_id
            .max(assoc.spawned.iter().map(|&s| s + 1).max().unwrap_or(0));
        self.streams.retain(|_, s| {
            s.status.is_landmark() || cycle.saturating_sub(s.last_cycle) <= STALE_CYCLES
        });
    }

    /// Replaces the provisional pose of `cycle`'s observations with the
    /// filter's posterior estimate.
    pub fn refine_pose(&mut self, cycle: usize, pose: &PoseEstimate) {
        for s in self.streams.values_mut() {
            if let Some(last) = s.history.back_mut().filter(|o| o.cycle == cycle) {
                last.pose = *pose;
            }
        }
    }
}

/// Retained MPCs after transmitter-image streams are removed.
pub fn discard_transmitter_mpcs(observed: &[ObservedMpc], assoc: &Association) -> Vec<ObservedMpc> {
    let drop: BTreeSet<usize> = assoc.discarded.iter().copied().collect();
    observed
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, o)| o.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::azimuth_elevation;
    use num_complex::Complex64;

    pub(crate) fn mpc_from(pred: &Predicted, amp: f64) -> ObservedMpc {
        let (aoa, elevation) = azimuth_elevation(&pred.dir);
        ObservedMpc {
            toa: pred.length / SPEED_OF_LIGHT,
            aoa,
            elevation,
            amplitude: Complex64::new(amp, 0.0),
            sigma_toa: 1e-12,
            sigma_aoa: 1e-3,
            truth: None,
        }
    }

    fn pose_at(k: usize) -> PoseEstimate {
        let rx = Vec3::new(0.0707, 0.0707, 0.0) * (0.1 * k as f64);
        PoseEstimate {
            rx,
            tx: rx + Vec3::new(0.0707, 0.0707, 0.0),
            sigma: 0.001,
        }
    }

    /// Feeds `cycles` cycles of MPCs through association, recording and
    /// classification, as the filter does.
    fn run(
        ms: &dyn Fn(&PoseEstimate, usize) -> Vec<ObservedMpc>,
        cycles: usize,
    ) -> (StreamRegistry, Vec<Association>) {
        let mut reg = StreamRegistry::default();
        let mut out = Vec::new();
        for k in 0..cycles {
            let pose = pose_at(k);
            let obs = ms(&pose, k);
            let a = reg.associate(&obs, &BTreeMap::new(), &pose, k);
            reg.record(&a, &obs, &pose, k);
            let ids: Vec<_> = reg.streams.keys().copied().collect();
            for id in ids {
                let s = &reg.streams[&id];
                let c = consistency(s, &BTreeMap::new());
                let next = match (s.status, classify(&c)) {
                    (StreamStatus::Tentative, Some(st)) => st,
                    (StreamStatus::Point, Some(st)) if c.point > c.threshold() => st,
                    (st, _) => st,
                };
                reg.streams.get_mut(&id).unwrap().status = next;
            }
            out.push(a);
        }
        (reg, out)
    }

    fn wall_image(p: &PoseEstimate) -> Predicted {
        predict_transmitter_image(&Vec3::new(-1.0, 0.0, 0.0), -6.0, &p.tx, &p.rx)
    }

    fn scene(p: &PoseEstimate, k: usize) -> Vec<ObservedMpc> {
        let q = Vec3::new(2.0, 1.0, 1.0);
        // a source riding along with the agent
        let rider = Vec3::new(1.5, -0.5, 1.0) + p.rx;
        let _ = k;
        vec![
            mpc_from(&predict_point(&q, &p.tx, &p.rx), 1e-5),
            mpc_from(&wall_image(p), 1e-4),
            mpc_from(&predict_point(&rider, &p.tx, &p.rx), 3e-5),
        ]
    }

    #[test]
    fn cold_start_spawns_everything() {
        let (_, assoc) = run(&scene, 1);
        assert_eq!(assoc[0].spawned.len(), 3);
        assert!(assoc[0].discarded.is_empty());
    }

    #[test]
    fn static_stream_retained_and_moving_sources_discarded() {
        let (reg, assoc) = run(&scene, 30);
        assert_eq!(reg.streams.len(), 3);
        // one stream per physical source over the whole run
        for a in &assoc {
            assert_eq!(a.assignments, assoc[0].assignments);
        }
        let [point, image, rider] = [0, 1, 2].map(|i| assoc[0].assignments[i].unwrap());
        assert_eq!(reg.streams[&point].status, StreamStatus::Point);
        assert_eq!(reg.streams[&image].status, StreamStatus::Transmitter);
        assert_eq!(reg.streams[&rider].status, StreamStatus::Transmitter);
        // the rider is decided on its third cycle and dropped from the fourth
        assert!(assoc[2].discarded.is_empty());
        assert_eq!(assoc[3].discarded, vec![2]);
        assert!(assoc[29].discarded.contains(&1));
        assert!(!assoc[29].discarded.contains(&0));
        assert_eq!(
            discard_transmitter_mpcs(&scene(&pose_at(29), 29), &assoc[29]).len(),
            1
        );
    }

    #[test]
    fn stronger_mpc_wins_a_shared_gate() {
        let q = Vec3::new(2.0, 1.0, 1.0);
        let pose = pose_at(0);
        let p = predict_point(&q, &pose.tx, &pose.rx);
        let mut reg = StreamRegistry::default();
        let first = vec![mpc_from(&p, 1e-5)];
        let a = reg.associate(&first, &BTreeMap::new(), &pose, 0);
        reg.record(&a, &first, &pose, 0);
        let near = Predicted {
            length: p.length + 0.001,
            dir: p.dir,
        };
        let second = vec![mpc_from(&near, 1e-6), mpc_from(&p, 2e-5)];
        let b = reg.associate(&second, &BTreeMap::new(), &pose, 1);
        assert_eq!(b.assignments[1], Some(0));
        assert_eq!(b.spawned, vec![1]);
        assert_eq!(b.assignments[0], Some(1));
    }

    #[test]
    fn virtual_image_pairs_with_its_source() {
        let s = Vec3::new(2.0, 1.0, 1.0);
        let v = Vec3::new(10.0, 1.0, 1.0);
        let hist: VecDeque<StreamObs> = (0..20)
            .map(|k| {
                let p = pose_at(k);
                StreamObs::from_mpc(
                    k,
                    &mpc_from(&predict_virtual(&s, &v, &p.tx, &p.rx), 1e-5),
                    p,
                )
            })
            .collect();
        let stream = Stream {
            id: 1,
            status: StreamStatus::Tentative,
            history: hist,
            last_cycle: 19,
        };
        let sources = BTreeMap::from([(0, s)]);
        let c = consistency(&stream, &sources);
        assert_eq!(classify(&c), Some(StreamStatus::Virtual { source: 0 }));
        assert!((c.virtual_best.unwrap().2 - v).norm() < 1e-6);
    }
}
