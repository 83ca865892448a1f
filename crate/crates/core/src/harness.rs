//! Monte Carlo experiments: gain against distance, RMSE against SNR and
//! against panel size, collected into CSV result tables.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{phase_align, scatterer_gain_legs, PhaseConfig, RisSteering};
use crate::environment::Vec3;
use crate::error::{Error, Result};
use crate::optimizer::GaConfig;
use crate::orchestrator::{run, RunConfig, RunLog, Scheme};
use crate::scenario::Scenario;

/// Cycles left out of the RMSE while the filter settles.
pub const DEFAULT_BURN_IN: usize = 50;
/// Random configurations averaged per distance of a gain curve.
pub const RANDOM_DRAWS: usize = 100;

/// √(mean ‖p̂ − p‖²) over the cycles after `burn_in`.
pub fn rmse(truth: &[Vec3], estimate: &[Vec3], burn_in: usize) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::LengthMismatch(truth.len(), estimate.len()));
    }
    if truth.len() <= burn_in {
        return Err(Error::Config(format!(
            "{} cycles leave nothing after a burn-in of {burn_in}",
            truth.len()
        )));
    }
    let n = truth.len() - burn_in;
    let se: f64 = truth[burn_in..]
        .iter()
        .zip(&estimate[burn_in..])
        .map(|(p, q)| (q - p).norm_squared())
        .sum();
    Ok((se / n as f64).sqrt())
}

/// Sizes of a run: cycles, particle counts and trials per sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Small enough for the acceptance suite.
    #[default]
    Desk,
    /// The full-scale setting: 600 cycles, 2000 agent and 6000 landmark
    /// particles.
    Full,
    Custom {
        cycles: usize,
        agent_particles: usize,
        landmark_particles: usize,
    },
}

impl Profile {
    pub fn cycles(self) -> usize {
        match self {
            Profile::Desk => 200,
            Profile::Full => 600,
            Profile::Custom { cycles, .. } => cycles,
        }
    }

    pub fn particles(self) -> (usize, usize) {
        match self {
            Profile::Desk => (200, 600),
            Profile::Full => (2000, 6000),
            Profile::Custom {
                agent_particles,
                landmark_particles,
                ..
            } => (agent_particles, landmark_particles),
        }
    }

    pub fn trials(self) -> usize {
        10
    }

    /// Run configuration of `scheme` on `scenario` at this size.
    pub fn run_config(self, scenario: &Scenario, scheme: Scheme) -> RunConfig {
        let mut cfg = RunConfig::for_scenario(scenario, scheme);
        cfg.cycle.cycles = self.cycles();
        let (a, l) = self.particles();
        cfg.slam.filter.agent_particles = a;
        cfg.slam.filter.landmark_particles = l;
        cfg
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    SnrDb,
    RisSize,
    Distance,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::RisSize => "ris_size",
            SweepVariable::Distance => "distance",
        })
    }
}

/// One study: every scheme at every value, `trials` seeds each.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub trials: usize,
    pub scenario: Scenario,
    /// Trial `t` runs with seed `seed + t` under every scheme and value.
    pub seed: u64,
    pub profile: Profile,
    pub ga: GaConfig,
    pub burn_in: usize,
}

impl Sweep {
    pub fn new(
        variable: SweepVariable,
        values: Vec<f64>,
        schemes: Vec<Scheme>,
        scenario: Scenario,
    ) -> Self {
        let profile = Profile::Desk;
        Self {
            variable,
            values,
            schemes,
            trials: profile.trials(),
            seed: scenario.seed,
            scenario,
            profile,
            ga: GaConfig::default(),
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("a sweep needs at least one value".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("a sweep needs at least one trial".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("a sweep needs at least one scheme".into()));
        }
        if self.variable == SweepVariable::RisSize {
            if let Some(v) = self
                .values
                .iter()
                .find(|v| !(**v >= 0.0 && v.fract() == 0.0))
            {
                return Err(Error::Config(format!(
                    "panel size {v} is not a whole number"
                )));
            }
        }
        Ok(())
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

/// One row of a result table. Gain curves leave the RMSE and CRLB empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub value: f64,
    pub trial: usize,
    pub rmse: Option<f64>,
    pub mean_crlb: Option<f64>,
    pub mean_gain: f64,
}

impl ResultRow {
    /// Summary of one finished run; the means skip the same burn-in as the
    /// RMSE.
    pub fn from_log(value: f64, trial: usize, log: &RunLog, burn_in: usize) -> Result<Self> {
        let rmse = rmse(&log.true_trajectory(), &log.estimated_trajectory(), burn_in)?;
        let tail = &log.records[burn_in..];
        let n = tail.len() as f64;
        Ok(Self {
            scheme: log.scheme.name().to_string(),
            value,
            trial,
            rmse: Some(rmse),
            mean_crlb: Some(tail.iter().map(|r| r.crlb).sum::<f64>() / n),
            mean_gain: tail.iter().map(|r| r.ris_gain).sum::<f64>() / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub variable: String,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "scheme",
            &self.variable,
            "trial",
            "rmse_m",
            "mean_crlb_m2",
            "mean_gain",
        ])?;
        for r in &self.rows {
            let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
            out.write_record([
                r.scheme.clone(),
                r.value.to_string(),
                r.trial.to_string(),
                opt(r.rmse),
                opt(r.mean_crlb),
                format!("{:e}", r.mean_gain),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Rows of `scheme` at `value`.
    pub fn select<'a>(
        &'a self,
        scheme: &'a str,
        value: f64,
    ) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.scheme == scheme && r.value == value)
    }

    /// Mean and standard error of the RMSE over the trials of one point.
    pub fn rmse_stats(&self, scheme: &str, value: f64) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self.select(scheme, value).filter_map(|r| r.rmse).collect();
        mean_and_standard_error(&xs)
    }

    pub fn mean_gain(&self, scheme: &str, value: f64) -> Option<f64> {
        let xs: Vec<f64> = self.select(scheme, value).map(|r| r.mean_gain).collect();
        mean_and_standard_error(&xs).map(|m| m.0)
    }
}

/// Sample mean and its standard error (zero for a single sample).
pub fn mean_and_standard_error(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((m, 0.0));
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Some((m, (var / n).sqrt()))
}

/// A finished trial with its full log.
#[derive(Debug, Clone)]
pub struct Trial {
    pub value: f64,
    pub trial: usize,
    pub log: RunLog,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub table: ResultTable,
    pub trials: Vec<Trial>,
}

/// Scenario and run configuration of one sweep point.
fn point_config(sweep: &Sweep, scheme: Scheme, value: f64) -> Result<(Scenario, RunConfig)> {
    let scenario = match sweep.variable {
        SweepVariable::RisSize => sweep.scenario.with_ris_size(value as usize),
        SweepVariable::SnrDb => sweep.scenario.clone(),
        SweepVariable::Distance => {
            return Err(Error::Config(
                "distance sweeps are gain curves, see gain_vs_distance".into(),
            ));
        }
    };
    let mut cfg = sweep.profile.run_config(&scenario, scheme);
    cfg.ga = sweep.ga;
    if sweep.variable == SweepVariable::SnrDb {
        cfg.snr_db = value;
    }
    Ok((scenario, cfg))
}

/// Runs every (scheme, value, trial) concurrently. Rows come out ordered by
/// scheme (in sweep order), value and trial whatever the completion order.
pub fn run_sweep(sweep: &Sweep) -> Result<SweepOutput> {
    sweep.validate()?;
    let mut jobs = Vec::new();
    for &scheme in &sweep.schemes {
        for &value in &sweep.values {
            for trial in 0..sweep.trials {
                jobs.push((scheme, value, trial));
            }
        }
    }
    let done: Vec<Result<Trial>> = jobs
        .par_iter()
        .map(|&(scheme, value, trial)| {
            let (scenario, cfg) = point_config(sweep, scheme, value)?;
            let log = run(&scenario, &cfg, sweep.trial_seed(trial))?;
            Ok(Trial { value, trial, log })
        })
        .collect();
    let trials = done.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = trials
        .iter()
        .map(|t| ResultRow::from_log(t.value, t.trial, &t.log, sweep.burn_in))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepOutput {
        table: ResultTable {
            variable: sweep.variable.to_string(),
            rows,
        },
        trials,
    })
}

/// RMSE per scheme over the SNR values of `sweep`.
pub fn rmse_vs_snr(sweep: &Sweep) -> Result<SweepOutput> {
    if sweep.variable != SweepVariable::SnrDb {
        return Err(Error::Config(format!(
            "expected an snr_db sweep, got {}",
            sweep.variable
        )));
    }
    run_sweep(sweep)
}

/// RMSE over square panel sizes; size 0 removes the panel.
pub fn rmse_vs_ris_size(sweep: &Sweep) -> Result<SweepOutput> {
    if sweep.variable != SweepVariable::RisSize {
        return Err(Error::Config(format!(
            "expected a ris_size sweep, got {}",
            sweep.variable
        )));
    }
    run_sweep(sweep)
}

/// Scheme label of the equal-size scatterer in gain curves.
pub const SCATTERER: &str = "scatterer";

/// (Tx, Rx) with the receiver `distance` meters out along the panel
/// boresight.
pub fn gain_curve_pose(scenario: &Scenario, distance: f64) -> Result<(Vec3, Vec3)> {
    let env = scenario.build_environment()?;
    let panel = env
        .panel()?
        .ok_or_else(|| Error::Config("gain curves need a RIS".into()))?;
    let rx = panel.center + panel.normal * distance;
    Ok((rx + env.tx_offset, rx))
}

/// |α| of the RIS path under coherent and random phases, and of a sphere
/// whose cross-section equals the panel aperture, at each distance.
///
/// The random series has one row per draw, `trial` being the draw index.
pub fn gain_vs_distance(scenario: &Scenario, distances: &[f64], seed: u64) -> Result<ResultTable> {
    if distances.is_empty() {
        return Err(Error::Config(
            "a gain curve needs at least one distance".into(),
        ));
    }
    let env = scenario.build_environment()?;
    let panel = env
        .panel()?
        .ok_or_else(|| Error::Config("gain curves need a RIS".into()))?
        .clone();
    let wl = scenario.wavelength();
    let rcs = panel.rows as f64 * panel.element_dy * panel.cols as f64 * panel.element_dx;
    let per_distance: Vec<Result<Vec<ResultRow>>> = distances
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            let (tx, rx) = gain_curve_pose(scenario, d)?;
            let steering = RisSteering::new(&panel, &tx, &rx, wl, scenario.tx_gain)?;
            let row = |scheme: &str, trial: usize, gain: f64| ResultRow {
                scheme: scheme.to_string(),
                value: d,
                trial,
                rmse: None,
                mean_crlb: None,
                mean_gain: gain,
            };
            let aligned = phase_align(&panel, &tx, &rx, wl)?;
            let mut rows = vec![row(
                Scheme::Optimized.name(),
                0,
                steering.gain(&aligned).norm(),
            )];
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            for t in 0..RANDOM_DRAWS {
                let p = PhaseConfig::random(&panel, &mut rng);
                rows.push(row(Scheme::RandomPhase.name(), t, steering.gain(&p).norm()));
            }
            let s = scatterer_gain_legs(
                (tx - panel.center).norm(),
                (rx - panel.center).norm(),
                wl,
                scenario.tx_gain,
                rcs,
            )?;
            rows.push(row(SCATTERER, 0, s.norm()));
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_distance {
        rows.extend(r?);
    }
    // scheme-major order, like the sweeps
    let rank = |s: &str| match s {
        s if s == Scheme::Optimized.name() => 0,
        s if s == Scheme::RandomPhase.name() => 1,
        _ => 2,
    };
    rows.sort_by_key(|r| rank(&r.scheme));
    Ok(ResultTable {
        variable: SweepVariable::Distance.to_string(),
        rows,
    })
}
