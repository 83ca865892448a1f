use super::*;
use crate::channel::ris_aggregate_gain;

fn quick(scheme: Scheme, cycles: usize) -> (Scenario, RunConfig) {
    let sc = Scenario::default();
    let mut cfg = RunConfig::for_scenario(&sc, scheme);
    cfg.cycle.cycles = cycles;
    cfg.slam.filter.agent_particles = 40;
    cfg.slam.filter.landmark_particles = 60;
    cfg.ga.iterations = 10;
    (sc, cfg)
}

#[test]
fn cycle_timing_is_validated() {
    assert!(CycleConfig::default().validate().is_ok());
    let bad = CycleConfig {
        optimization_budget: 0.08,
        communication_latency: 0.02,
        ..CycleConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn scheme_names_round_trip() {
    for s in Scheme::ALL {
        assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
    }
    assert_eq!("no-ris".parse::<Scheme>().unwrap(), Scheme::NoRis);
    assert!("best".parse::<Scheme>().is_err());
}

#[test]
fn reference_noise_hits_the_target_snr() {
    let sc = Scenario::default();
    let s10 = reference_noise_variance(&sc, 10.0).unwrap();
    let s20 = reference_noise_variance(&sc, 20.0).unwrap();
    assert!((s10 / s20 - 10.0).abs() < 1e-9);
    assert_eq!(reference_noise_variance(&sc, f64::INFINITY).unwrap(), 0.0);
}

#[test]
fn first_cycle_starts_from_the_prior() {
    let (sc, cfg) = quick(Scheme::Optimized, 1);
    let mut r = Run::new(&sc, cfg, 3).unwrap();
    let rec = r.step().unwrap();
    // nothing mapped yet: no candidate to aim at, the belief starts flat
    assert!(rec.planned_crlb.is_none());
    let p: Vec<f64> = r.slam.belief.probs.values().copied().collect();
    assert!(!p.is_empty());
    assert!(p.iter().all(|&x| (x - p[0]).abs() < 1e-12));
    assert!((rec.true_position - Vec3::new(0.00707, 0.00707, 0.0)).norm() < 1e-4);
}

#[test]
fn commanded_phases_govern_the_same_cycle() {
    let (sc, cfg) = quick(Scheme::Optimized, 15);
    let log = run(&sc, &cfg, 5).unwrap();
    let env = sc.build_environment().unwrap();
    let panel = &env.ris[0];
    for r in &log.records {
        let genes = r.phases.clone().unwrap();
        let phases = PhaseConfig::new(panel.rows, panel.cols, panel.phase_levels, genes).unwrap();
        let tx = r.true_position + env.tx_offset;
        let g = ris_aggregate_gain(
            panel,
            &tx,
            &r.true_position,
            sc.wavelength(),
            sc.tx_gain,
            &phases,
        )
        .unwrap();
        assert!((g.value.norm() - r.ris_gain).abs() <= 1e-12 * r.ris_gain.max(1e-30));
    }
    assert!(log.records.iter().any(|r| r.planned_crlb.is_some()));
}

#[test]
fn runs_are_deterministic() {
    for scheme in Scheme::ALL {
        let (sc, cfg) = quick(scheme, 20);
        let a = run(&sc, &cfg, 11).unwrap();
        let b = run(&sc, &cfg, 11).unwrap();
        assert_eq!(a, b, "{scheme}");
        let c = run(&sc, &cfg, 12).unwrap();
        assert_ne!(a.records, c.records);
    }
}

#[test]
fn ablation_modes_share_the_pipeline() {
    let (sc, cfg) = quick(Scheme::NoRis, 10);
    let log = run(&sc, &cfg, 1).unwrap();
    assert!(log
        .records
        .iter()
        .all(|r| r.phases.is_none() && r.ris_gain == 0.0 && r.ris_belief.is_none()));
    let (sc, cfg) = quick(Scheme::RandomPhase, 10);
    let log = run(&sc, &cfg, 1).unwrap();
    assert!(log
        .records
        .iter()
        .all(|r| r.phases.is_some() && r.planned_crlb.is_none()));
    let distinct: std::collections::BTreeSet<_> =
        log.records.iter().map(|r| r.phases.clone()).collect();
    assert_eq!(distinct.len(), 10);
}

#[test]
fn full_length_run_logs_every_cycle() {
    let (sc, mut cfg) = quick(Scheme::Optimized, 600);
    cfg.ga.iterations = 4;
    let log = run(&sc, &cfg, 2).unwrap();
    assert_eq!(log.records.len(), 600);
    assert!(log
        .records
        .iter()
        .enumerate()
        .all(|(i, r)| r.cycle == i + 1));
    let mut buf = Vec::new();
    log.write_json_lines(&mut buf).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 600);
}

#[test]
fn leaving_the_room_aborts_with_the_cycle() {
    let (mut sc, cfg) = quick(Scheme::NoRis, 100);
    sc.agent.velocity = [2.0, 0.0, 0.0];
    match run(&sc, &cfg, 1) {
        Err(Error::Scenario { cycle, .. }) => assert_eq!(cycle, 31),
        other => panic!("expected a scenario error, got {other:?}"),
    }
}
