//! Bayes identification of the RIS among the mapped landmarks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tracker::StreamId;
use crate::channel::{PhaseConfig, RisSteering};
use crate::environment::{RisPanel, Vec3};

/// Bound on the evidence one cycle can contribute, either way.
pub const MAX_LIKELIHOOD_RATIO: f64 = 1e4;

/// p(L_i is the RIS) over the current landmark candidates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RisBelief {
    pub probs: BTreeMap<StreamId, f64>,
}

impl RisBelief {
    pub fn uniform(ids: &[StreamId]) -> Self {
        let p = 1.0 / ids.len().max(1) as f64;
        Self {
            probs: ids.iter().map(|&i| (i, p)).collect(),
        }
    }

    pub fn get(&self, id: StreamId) -> f64 {
        self.probs.get(&id).copied().unwrap_or(0.0)
    }

    /// Most probable landmark; ties go to the lower id.
    pub fn map_estimate(&self) -> Option<StreamId> {
        let mut best: Option<(StreamId, f64)> = None;
        for (&i, &p) in &self.probs {
            if best.is_none_or(|b| p > b.1) {
                best = Some((i, p));
            }
        }
        best.map(|b| b.0)
    }

    /// Restricts the belief to `ids`. Newcomers enter at 1/L each, the old
    /// members share the rest in proportion.
    pub fn sync(&mut self, ids: &[StreamId]) {
        self.probs.retain(|i, _| ids.contains(i));
        let fresh: Vec<StreamId> = ids
            .iter()
            .copied()
            .filter(|i| !self.probs.contains_key(i))
            .collect();
        let l = ids.len();
        if l == 0 {
            self.probs.clear();
            return;
        }
        let kept: f64 = self.probs.values().sum();
        if !(kept > 0.0) {
            *self = Self::uniform(ids);
            return;
        }
        let new_mass = fresh.len() as f64 / l as f64;
        for p in self.probs.values_mut() {
            *p *= (1.0 - new_mass) / kept;
        }
        for &i in &fresh {
            self.probs.insert(i, new_mass / fresh.len() as f64);
        }
        let total: f64 = self.probs.values().sum();
        self.probs.values_mut().for_each(|p| *p /= total);
    }
}

/// `p_i ∝ p_i · p(α | L_i is RIS)`; landmarks absent from `likelihoods` get
/// a flat factor. Returns `true` (belief unchanged) when the evidence
/// annihilates every hypothesis.
pub fn update_ris_belief(
    belief: &RisBelief,
    likelihoods: &BTreeMap<StreamId, f64>,
) -> (RisBelief, bool) {
    let post: BTreeMap<StreamId, f64> = belief
        .probs
        .iter()
        .map(|(&i, &p)| (i, p * likelihoods.get(&i).copied().unwrap_or(1.0)))
        .collect();
    let total: f64 = post.values().sum();
    if !(total > 0.0) || !total.is_finite() {
        return (belief.clone(), true);
    }
    (
        RisBelief {
            probs: post.into_iter().map(|(i, p)| (i, p / total)).collect(),
        },
        false,
    )
}

/// Amplitude the panel would produce if it sat at a landmark's position,
/// under the commanded phases.
#[derive(Debug, Clone, PartialEq)]
pub struct RisAmplitudeModel {
    /// Panel geometry known to the controller; only the position is replaced.
    pub panel: RisPanel,
    pub wavelength: f64,
    pub tx_gain: f64,
    /// Log-amplitude deviation of both the RIS prediction and the static
    /// prediction, covering model and pose error.
    pub log_spread: f64,
}

impl RisAmplitudeModel {
    pub fn expected(
        &self,
        position: &Vec3,
        tx: &Vec3,
        rx: &Vec3,
        phases: &PhaseConfig,
    ) -> Option<f64> {
        let mut panel = self.panel.clone();
        panel.center = *position;
        let s = RisSteering::new(&panel, tx, rx, self.wavelength, self.tx_gain).ok()?;
        Some(s.gain(phases).norm())
    }

    /// Ratio of the RIS-model density of `amplitude` to the density under a
    /// static scatterer that repeats `previous`, both log-normal.
    pub fn likelihood_ratio(
        &self,
        amplitude: f64,
        previous: f64,
        expected: f64,
        sigma_amplitude: f64,
    ) -> f64 {
        if !(amplitude > 0.0 && previous > 0.0) {
            return 1.0;
        }
        if !(expected > 0.0) {
            return 1.0 / MAX_LIKELIHOOD_RATIO;
        }
        let s2 = self.log_spread.powi(2) + (sigma_amplitude / amplitude).powi(2);
        let la = amplitude.ln();
        let lr = ((la - previous.ln()).powi(2) - (la - expected.ln()).powi(2)) / (2.0 * s2);
        lr.exp()
            .clamp(1.0 / MAX_LIKELIHOOD_RATIO, MAX_LIKELIHOOD_RATIO)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_evidence_keeps_belief() {
        let b = RisBelief::uniform(&[3, 5, 9]);
        let lk = BTreeMap::from([(3, 0.4), (5, 0.4), (9, 0.4)]);
        let (post, flagged) = update_ris_belief(&b, &lk);
        assert!(!flagged);
        for (x, y) in b.probs.values().zip(post.probs.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn decisive_evidence_collapses_belief() {
        let b = RisBelief::uniform(&[0, 1, 2, 3]);
        let lk = BTreeMap::from([(0, 0.0), (1, 0.0), (2, 1.0), (3, 0.0)]);
        let (post, _) = update_ris_belief(&b, &lk);
        assert_eq!(post.get(2), 1.0);
        assert_eq!(post.map_estimate(), Some(2));
    }

    #[test]
    fn zero_evidence_is_flagged() {
        let b = RisBelief::uniform(&[0, 1]);
        let (post, flagged) = update_ris_belief(&b, &BTreeMap::from([(0, 0.0), (1, 0.0)]));
        assert!(flagged);
        assert_eq!(post, b);
    }

    #[test]
    fn sync_keeps_simplex() {
        let mut b = RisBelief::uniform(&[0, 1]);
        b.probs.insert(0, 0.9);
        b.probs.insert(1, 0.1);
        b.sync(&[0, 1, 2, 3]);
        assert!((b.probs.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((b.get(2) - 0.25).abs() < 1e-12);
        assert!(b.get(0) > b.get(1));
        b.sync(&[1, 3]);
        assert!((b.probs.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(b.probs.len(), 2);
    }

    #[test]
    fn ratio_favours_the_model_that_predicted_the_change() {
        let m = RisAmplitudeModel {
            panel: crate::scenario::Scenario::default()
                .build_environment()
                .unwrap()
                .ris[0]
                .clone(),
            wavelength: 0.01,
            tx_gain: 1.0,
            log_spread: 0.5,
        };
        assert!(m.likelihood_ratio(4e-5, 1e-5, 4.2e-5, 1e-7) > 10.0);
        assert!(m.likelihood_ratio(1e-5, 1e-5, 4e-5, 1e-7) < 0.1);
        assert_eq!(m.likelihood_ratio(1e-5, 1e-5, 1e-5, 1e-7), 1.0);
    }
}
