use super::*;
use crate::environment::azimuth_elevation;
use geometry::{predict_transmitter_image, Predicted};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OFFSET: Vec3 = Vec3::new(0.0707, 0.0707, 0.0);

fn obs(p: &Predicted, amp: f64) -> ObservedMpc {
    let (aoa, elevation) = azimuth_elevation(&p.dir);
    ObservedMpc {
        toa: p.length / SPEED_OF_LIGHT,
        aoa,
        elevation,
        amplitude: Complex64::new(amp, 0.0),
        sigma_toa: 1e-12,
        sigma_aoa: 1e-3,
        truth: None,
    }
}

fn small_config() -> SlamConfig {
    SlamConfig {
        filter: FilterConfig {
            agent_particles: 50,
            landmark_particles: 100,
            ..FilterConfig::default()
        },
        ..SlamConfig::default()
    }
}

fn start() -> AgentState {
    AgentState {
        position: Vec3::zeros(),
        velocity: Vec3::new(0.0707, 0.0707, 0.0),
    }
}

/// Scene of two static points and one wall image, observed exactly.
fn scene_obs(rx: &Vec3) -> Vec<ObservedMpc> {
    let tx = rx + OFFSET;
    vec![
        obs(&predict_point(&Vec3::new(2.0, 1.0, 1.0), &tx, rx), 2e-5),
        obs(&predict_point(&Vec3::new(3.0, 3.0, 3.0), &tx, rx), 5e-5),
        obs(
            &predict_transmitter_image(&Vec3::new(-1.0, 0.0, 0.0), -6.0, &tx, rx),
            2e-4,
        ),
    ]
}

#[test]
fn no_mpcs_dead_reckons() {
    let mut s = SlamState::new(small_config(), &start(), OFFSET);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = s.lme_cycle(&[], &CycleContext::default(), &mut rng);
    assert!(out.flags.dead_reckoned);
    let expect = Vec3::new(0.00707, 0.00707, 0.0);
    assert!((out.estimate.position - expect).norm() < 1e-3);
}

#[test]
fn noiseless_points_track_the_agent() {
    let mut s = SlamState::new(SlamConfig::default(), &start(), OFFSET);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = start().velocity;
    let mut err = 0.0;
    for k in 1..=50 {
        let truth = v * (0.1 * k as f64);
        let out = s.lme_cycle(&scene_obs(&truth), &CycleContext::default(), &mut rng);
        err = (out.estimate.position - truth).norm();
        let w: f64 = s.particles.iter().map(|p| p.weight).sum();
        assert!((w - 1.0).abs() < 1e-9);
        for p in &s.particles {
            for set in &p.sets {
                assert!((set.weight_sum() - 1.0).abs() < 1e-9);
            }
        }
    }
    assert!(err < 0.01, "final error {err}");
    let kinds: Vec<StreamStatus> = s.registry.streams.values().map(|st| st.status).collect();
    assert_eq!(
        kinds.iter().filter(|k| **k == StreamStatus::Point).count(),
        2
    );
    assert!(kinds.contains(&StreamStatus::Transmitter));
}

#[test]
fn cycle_is_invariant_to_mpc_order() {
    let run = |rev: bool| {
        let mut s = SlamState::new(small_config(), &start(), OFFSET);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = start().velocity;
        let mut last = None;
        for k in 1..=12 {
            let mut o = scene_obs(&(v * (0.1 * k as f64)));
            if rev {
                o.reverse();
            }
            last = Some(s.lme_cycle(&o, &CycleContext::default(), &mut rng).estimate);
        }
        (last.unwrap(), s.particles)
    };
    assert_eq!(run(false), run(true));
}
