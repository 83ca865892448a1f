//! Experiment runner: single runs, SNR and panel-size sweeps, gain curves.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ris_slam::harness::{
    gain_vs_distance, rmse_vs_ris_size, rmse_vs_snr, Profile, ResultRow, ResultTable, Sweep,
    SweepOutput, SweepVariable, DEFAULT_BURN_IN,
};
use ris_slam::optimizer::GaConfig;
use ris_slam::orchestrator::{run, Scheme};
use ris_slam::scenario::Scenario;

#[derive(Parser)]
#[command(name = "ris-slam", version, about = "RIS-assisted SLAM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run of one scheme; prints its RMSE.
    Simulate(SimulateArgs),
    /// RMSE of each scheme over SNR values.
    SweepSnr(SweepArgs),
    /// RMSE of the optimized scheme over square panel sizes.
    SweepRisSize(SweepArgs),
    /// |α| of the RIS and of an equal-size scatterer over distance.
    GainCurve(GainArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; the built-in scene when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Base seed; defaults to the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// desk (200 cycles, 200/600 particles) or full (600 cycles, 2000/6000).
    #[arg(long, default_value = "desk")]
    profile: String,
    /// CSV result table; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    ga: GaArgs,
}

#[derive(Args)]
struct GaArgs {
    /// GA population K.
    #[arg(long)]
    ga_population: Option<usize>,
    /// GA elites Q.
    #[arg(long)]
    ga_elites: Option<usize>,
    #[arg(long)]
    ga_iterations: Option<usize>,
    #[arg(long)]
    ga_mutation: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "optimized")]
    scheme: Scheme,
    /// Overrides the scenario SNR, dB.
    #[arg(long)]
    snr: Option<f64>,
    /// Line-delimited JSON log of every cycle.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Sweep values, comma separated (dB or panel side).
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Schemes, comma separated; all three for SNR sweeps.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Trials per point; the profile's count when absent.
    #[arg(long)]
    trials: Option<usize>,
    /// Directory for one JSON-lines log per trial.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct GainArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Distances in meters, comma separated.
    #[arg(long, value_delimiter = ',')]
    distances: Option<Vec<f64>>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn load_scenario(path: &Option<PathBuf>) -> Result<Scenario> {
    match path {
        Some(p) => Scenario::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Scenario::default()),
    }
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_table(table: &ResultTable, path: &Option<PathBuf>) -> Result<()> {
    let mut w = sink(path)?;
    table.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn apply_ga(cfg: &mut GaConfig, ga: &GaArgs) {
    if let Some(k) = ga.ga_population {
        cfg.population = k;
    }
    if let Some(q) = ga.ga_elites {
        cfg.elites = q;
    }
    if let Some(n) = ga.ga_iterations {
        cfg.iterations = n;
    }
    if let Some(p) = ga.ga_mutation {
        cfg.mutation_prob = p;
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let scenario = load_scenario(&args.common.scenario)?;
    let profile: Profile = args.common.profile.parse()?;
    let mut cfg = profile.run_config(&scenario, args.scheme);
    apply_ga(&mut cfg.ga, &args.common.ga);
    cfg.ga.validate()?;
    if let Some(snr) = args.snr {
        cfg.snr_db = snr;
    }
    let seed = args.common.seed.unwrap_or(scenario.seed);
    let log = run(&scenario, &cfg, seed)?;
    if let Some(p) = &args.trace {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = BufWriter::new(f);
        log.write_json_lines(&mut w)?;
        w.flush()?;
    }
    let row = ResultRow::from_log(cfg.snr_db, 0, &log, DEFAULT_BURN_IN)?;
    eprintln!(
        "{} seed {seed}: rmse {:.4} m",
        args.scheme,
        row.rmse.unwrap_or(f64::NAN)
    );
    write_table(
        &ResultTable {
            variable: SweepVariable::SnrDb.to_string(),
            rows: vec![row],
        },
        &args.common.output,
    )
}

fn sweep(args: SweepArgs, variable: SweepVariable) -> Result<()> {
    let scenario = load_scenario(&args.common.scenario)?;
    let (values, schemes) = match variable {
        SweepVariable::SnrDb => (
            vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            Scheme::ALL.to_vec(),
        ),
        _ => (vec![0.0, 2.0, 4.0, 6.0, 8.0], vec![Scheme::Optimized]),
    };
    let mut s = Sweep::new(
        variable,
        args.values.unwrap_or(values),
        args.schemes.unwrap_or(schemes),
        scenario,
    );
    s.profile = args.common.profile.parse()?;
    s.trials = args.trials.unwrap_or(s.profile.trials());
    if let Some(seed) = args.common.seed {
        s.seed = seed;
    }
    apply_ga(&mut s.ga, &args.common.ga);
    s.ga.validate()?;
    let out = match variable {
        SweepVariable::SnrDb => rmse_vs_snr(&s)?,
        _ => rmse_vs_ris_size(&s)?,
    };
    if let Some(dir) = &args.trace {
        write_traces(&out, dir)?;
    }
    write_table(&out.table, &args.common.output)
}

fn write_traces(out: &SweepOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for t in &out.trials {
        let name = format!("{}_{}_{}.jsonl", t.log.scheme, t.value, t.trial);
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        t.log.write_json_lines(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn gain_curve(args: GainArgs) -> Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let distances = args
        .distances
        .unwrap_or_else(|| (2..=16).map(|i| i as f64 * 0.5).collect());
    let table = gain_vs_distance(&scenario, &distances, args.seed.unwrap_or(scenario.seed))?;
    write_table(&table, &args.output)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::SweepSnr(a) => sweep(a, SweepVariable::SnrDb),
        Command::SweepRisSize(a) => sweep(a, SweepVariable::RisSize),
        Command::GainCurve(a) => gain_curve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
