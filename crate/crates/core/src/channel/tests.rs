use super::*;
use crate::environment::{propagation_paths, AgentState, RisPanel};
use crate::scenario::Scenario;
use rand::Rng;

fn scene() -> (Environment, RisPanel, f64) {
    let sc = Scenario::default();
    let env = sc.build_environment().unwrap();
    let panel = env.ris[0].clone();
    (env, panel, sc.wavelength())
}

fn agent_at(x: f64, y: f64) -> AgentState {
    AgentState {
        position: Vec3::new(x, y, 0.0),
        velocity: Vec3::zeros(),
    }
}

fn straight_reflection(d: f64) -> PropagationPath {
    PropagationPath {
        landmark_id: 0,
        kind: LandmarkKind::Vt,
        vertices: vec![
            Vec3::zeros(),
            Vec3::new(d / 2.0, 0.0, 0.0),
            Vec3::new(d / 2.0 + 1e-300, 0.0, 0.0),
        ],
        total_length: d,
        aoa: 0.0,
        elevation: 0.0,
        via_ris: false,
    }
}

#[test]
fn reflector_gain_law() {
    let lambda = 0.03;
    let a = reflector_gain(&straight_reflection(2.0), lambda, 1.0, 0.85).unwrap();
    let b = reflector_gain(&straight_reflection(4.0), lambda, 1.0, 0.85).unwrap();
    assert!((a.norm() / b.norm() - 2.0).abs() < 1e-12);
    let expected = lambda * 0.85 / (4.0 * PI * 2.0);
    assert!((a.norm() - expected).abs() < 1e-15);
    assert_eq!(
        reflector_gain(&straight_reflection(2.0), lambda, 1.0, 0.0)
            .unwrap()
            .norm(),
        0.0
    );
    let wrap = reflector_gain(&straight_reflection(lambda), lambda, 1.0, 1.0).unwrap();
    assert!(wrap.im.abs() < 1e-9 * wrap.norm() && wrap.re > 0.0);
    assert!(reflector_gain(&straight_reflection(0.0), lambda, 1.0, 1.0).is_err());
}

#[test]
fn scatterer_gain_law() {
    let lambda = 0.03;
    let g = |a, b, s| scatterer_gain_legs(a, b, lambda, 1.0, s).unwrap();
    assert_eq!(g(2.0, 3.0, 0.01), g(3.0, 2.0, 0.01));
    assert!((g(2.0, 3.0, 0.04).norm() / g(2.0, 3.0, 0.01).norm() - 2.0).abs() < 1e-12);
    assert!((g(1.0, 5.0, 0.01).norm() / g(3.0, 3.0, 0.01).norm() - 9.0 / 5.0).abs() < 1e-12);
    assert!(scatterer_gain_legs(0.0, 1.0, lambda, 1.0, 0.01).is_err());
}

#[test]
fn element_gain_properties() {
    let (env, panel, lambda) = scene();
    let tx = Vec3::new(1.1, 0.9, 0.0);
    let rx = Vec3::new(1.0, 1.0, 0.0);
    let base = PhaseConfig::for_panel(&panel, 1);
    let g = ris_element_gain(2, 3, &panel, &tx, &rx, lambda, 1.0, &base).unwrap();
    let mut wrapped = base.clone();
    wrapped.genes[2 * panel.cols + 3] += panel.phase_levels;
    let w = ris_element_gain(2, 3, &panel, &tx, &rx, lambda, 1.0, &wrapped).unwrap();
    assert!((g - w).norm() < 1e-12 * g.norm());

    let mut dark = panel.clone();
    dark.reflection_amplitude = 0.0;
    assert_eq!(
        ris_element_gain(0, 0, &dark, &tx, &rx, lambda, 1.0, &base)
            .unwrap()
            .norm(),
        0.0
    );

    let in_plane = Vec3::new(1.0, 1.0, 3.0);
    assert_eq!(
        ris_element_gain(0, 0, &panel, &in_plane, &rx, lambda, 1.0, &base),
        Err(ChannelError::InPanelPlane)
    );

    let single = panel.resized(1, 1);
    let cfg = PhaseConfig::for_panel(&single, 3);
    for p in [Vec3::new(3.0, 3.0, 2.9), Vec3::new(0.2, 5.0, 0.0)] {
        let agg = ris_aggregate_gain(&single, &tx, &p, lambda, 1.0, &cfg)
            .unwrap()
            .value;
        let exact = ris_element_gain(0, 0, &single, &tx, &p, lambda, 1.0, &cfg).unwrap();
        assert!((agg - exact).norm() < 1e-12 * exact.norm());
    }
    let _ = env;
}

#[test]
fn gains_scale_with_amplitude_and_tx_gain() {
    let (_, panel, lambda) = scene();
    let tx = Vec3::new(1.1, 0.9, 0.0);
    let rx = Vec3::new(1.0, 1.0, 0.0);
    let cfg = PhaseConfig::for_panel(&panel, 2);
    let g1 = ris_aggregate_gain(&panel, &tx, &rx, lambda, 1.0, &cfg)
        .unwrap()
        .value;
    let g4 = ris_aggregate_gain(&panel, &tx, &rx, lambda, 4.0, &cfg)
        .unwrap()
        .value;
    assert!((g4 - g1 * 2.0).norm() < 1e-12 * g1.norm());
    let mut half = panel.clone();
    half.reflection_amplitude = 0.5;
    let gh = ris_aggregate_gain(&half, &tx, &rx, lambda, 1.0, &cfg)
        .unwrap()
        .value;
    assert!((gh - g1 * 0.5).norm() < 1e-12 * g1.norm());

    // incrementing every level rotates the gain by exactly -Δθ
    let cfg3 = PhaseConfig::for_panel(&panel, 3);
    let g3 = ris_aggregate_gain(&panel, &tx, &rx, lambda, 1.0, &cfg3)
        .unwrap()
        .value;
    let rot = Complex64::from_polar(1.0, -panel.phase_step());
    let g2 = ris_aggregate_gain(&panel, &tx, &rx, lambda, 1.0, &cfg)
        .unwrap()
        .value;
    assert!((g3 - g2 * rot).norm() < 1e-12 * g2.norm());
}

#[test]
fn far_field_matches_exact_sum_on_floor_grid() {
    let (env, panel, lambda) = scene();
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let rx = Vec3::new(0.3 + 0.6 * i as f64, 0.3 + 0.6 * j as f64, 0.0);
            let tx = rx + env.tx_offset;
            // Steered toward the agent. Unsteered configurations can sit near a
            // null of the array factor, where the small residual phase of each
            // element dominates the relative error.
            let cfg = phase_align(&panel, &tx, &rx, lambda).unwrap();
            let agg = ris_aggregate_gain(&panel, &tx, &rx, lambda, 1.0, &cfg).unwrap();
            assert!(!agg.near_field);
            let exact = ris_exact_gain(&panel, &tx, &rx, lambda, 1.0, &cfg).unwrap();
            let e = (agg.value.norm() - exact.norm()).abs() / exact.norm();
            worst = worst.max(e);
        }
    }
    assert!(worst < 0.01, "worst relative amplitude error {worst}");
}

#[test]
fn near_field_is_flagged() {
    let (_, panel, lambda) = scene();
    let close = Vec3::new(3.0, 3.0, 2.7);
    let cfg = PhaseConfig::for_panel(&panel, 1);
    let agg =
        ris_aggregate_gain(&panel, &close, &Vec3::new(3.1, 3.0, 2.7), lambda, 1.0, &cfg).unwrap();
    assert!(agg.near_field);
}

#[test]
fn random_phase_power_is_incoherent_sum() {
    let (_, panel, lambda) = scene();
    let tx = Vec3::new(1.1, 0.9, 0.0);
    let rx = Vec3::new(1.0, 1.0, 0.0);
    let steering = RisSteering::new(&panel, &tx, &rx, lambda, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 20_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        acc += steering
            .gain(&PhaseConfig::random(&panel, &mut rng))
            .norm_sqr();
    }
    let ratio = acc / draws as f64 / steering.element_amplitude.powi(2);
    assert!(
        (ratio / 36.0 - 1.0).abs() < 0.05,
        "E|g|²/element power = {ratio}"
    );
}

#[test]
fn phase_align_bounds() {
    let (_, panel, lambda) = scene();
    let tx = Vec3::new(4.1, 0.9, 0.0);
    let rx = Vec3::new(4.0, 1.0, 0.0);
    let st = RisSteering::new(&panel, &tx, &rx, lambda, 1.0).unwrap();
    let nm = panel.element_count() as f64;
    let mut fine = panel.clone();
    fine.phase_levels = 4096;
    let cfg = phase_align(&fine, &tx, &rx, lambda).unwrap();
    let g = RisSteering::new(&fine, &tx, &rx, lambda, 1.0)
        .unwrap()
        .gain(&cfg)
        .norm();
    assert!((g / (nm * st.element_amplitude) - 1.0).abs() < 1e-5);

    let cfg = phase_align(&panel, &tx, &rx, lambda).unwrap();
    let sinc = (PI / 4.0).sin() / (PI / 4.0);
    assert!(st.gain(&cfg).norm() >= sinc * nm * st.element_amplitude);
}

#[test]
fn phase_align_matches_brute_force_on_2x2() {
    let (_, panel, lambda) = scene();
    let small = panel.resized(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let rx = Vec3::new(rng.random_range(0.2..5.8), rng.random_range(0.2..5.8), 0.0);
        let tx = rx + Vec3::new(0.0707, 0.0707, 0.0);
        let st = RisSteering::new(&small, &tx, &rx, lambda, 1.0).unwrap();
        let best = (0..256u32)
            .map(|code| {
                let genes = (0..4).map(|e| (code >> (2 * e)) % 4 + 1).collect();
                st.gain(&PhaseConfig::new(2, 2, 4, genes).unwrap()).norm()
            })
            .fold(0.0, f64::max);
        let aligned = st
            .gain(&phase_align(&small, &tx, &rx, lambda).unwrap())
            .norm();
        assert!((aligned - best).abs() <= 1e-12 * best);
    }
}

#[test]
fn scene_paths_have_gains() {
    let (env, _, lambda) = scene();
    let agent = agent_at(1.0, 0.5);
    let paths = propagation_paths(&env, &agent).unwrap();
    let array = ArrayGeometry::half_wavelength(4, Vec3::x(), lambda);
    let mpcs = scene_mpcs(&env, &paths, &array, lambda, 1.0, None).unwrap();
    assert_eq!(mpcs.len(), paths.len());
    for m in &mpcs {
        assert!(m.gain.norm() > 0.0);
        assert_eq!(m.per_antenna_phase.len(), 4);
        assert!(m
            .per_antenna_phase
            .iter()
            .all(|b| (b.norm() - 1.0).abs() < 1e-12));
    }
    // a VS collects the scatterer gain times the wall coefficient
    let ps = mpcs.iter().find(|m| m.kind == LandmarkKind::Ps).unwrap();
    let vs = mpcs.iter().find(|m| m.kind == LandmarkKind::Vs).unwrap();
    assert!(vs.gain.norm() < ps.gain.norm());
}

fn one_mpc(delay: f64) -> Mpc {
    Mpc {
        delay,
        aoa: 0.3,
        elevation: 0.0,
        gain: Complex64::new(0.3, -0.4),
        landmark_id: 0,
        kind: LandmarkKind::Ps,
        per_antenna_phase: vec![Complex64::new(1.0, 0.0); 4],
    }
}

#[test]
fn noise_only_signal_has_configured_variance() {
    let wf = Waveform::new(WaveformConfig::default());
    let array = ArrayGeometry::half_wavelength(25, Vec3::x(), wf.wavelength);
    let sig = synthesize_received(&[], &wf, &array, 2.5, 9);
    let n = (sig.samples.len() * sig.sample_times.len()) as f64;
    assert!(n >= 1e4);
    let var = sig.energy() / n;
    assert!((var / 2.5 - 1.0).abs() < 0.05);
}

#[test]
fn noiseless_matched_filter_recovers_delay() {
    let wf = Waveform::new(WaveformConfig::default());
    let array = ArrayGeometry::half_wavelength(4, Vec3::x(), wf.wavelength);
    let tau = 23.4567e-9;
    let sig = synthesize_received(&[one_mpc(tau)], &wf, &array, 0.0, 0);
    let est = matched_filter_peak(&sig, &wf, 10e-9, 40e-9);
    assert!((est - tau).abs() < 1e-13, "{est} vs {tau}");
}

#[test]
fn snr_calibration_hits_target() {
    let wf = Waveform::new(WaveformConfig::default());
    let array = ArrayGeometry::half_wavelength(4, Vec3::x(), wf.wavelength);
    let mpcs = [one_mpc(20e-9), one_mpc(35e-9)];
    let clean = synthesize_received(&mpcs, &wf, &array, 0.0, 0);
    let target_db: f64 = 10.0;
    let sigma2 = calibrate_noise_variance(&clean, 10f64.powf(target_db / 10.0));
    let noisy = synthesize_received(&mpcs, &wf, &array, sigma2, 4);
    let measured_db = 10.0 * noisy.snr(sigma2).log10();
    // ‖Y‖² includes the noise energy, so the measured value sits slightly above
    let clean_db = 10.0 * clean.snr(sigma2).log10();
    assert!((clean_db - target_db).abs() < 1e-9);
    assert!((measured_db - 10.0 * (10f64.powf(target_db / 10.0) + 1.0).log10()).abs() < 0.5);
    assert_eq!(synthesize_received(&mpcs, &wf, &array, sigma2, 4), noisy);
}
