use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use spinflip::effective::MarkedMeasure;
use spinflip::harness::io::{probe_grid, summary_rows, velocity_snapshot, write_csv_rows, write_trajectory_jsonl};
use spinflip::harness::sweep::{read_rows, series};
use spinflip::harness::validate::validate;
use spinflip::harness::{fit_scaling, nondimensionalize, sweep, ExperimentConfig, Observable, PhysicalParams, SweepAxis};
use spinflip::pdmp::{default_pairs, run_paths, simulate_path, summarize};
use spinflip::stokes::SingularitySet;
use spinflip::transport::{default_delta, w2_binned_upper, w2_exact, DistanceRecord};
use spinflip::{BoxDomain, Error, Result, Vec3};

#[derive(Parser)]
#[command(name = "spinflip", version, about = "Spin-flip ferrofluid particle simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory, written as JSONL checkpoints.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Overrides simulation.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write ũ_N at the final time on a probe grid (CSV).
        #[arg(long)]
        velocity: Option<PathBuf>,
        /// Probe points per axis for --velocity.
        #[arg(long, default_value_t = 8)]
        probes: usize,
    },
    /// Ensemble statistics on the checkpoint grid (CSV).
    Ensemble {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Sweep one parameter; appends to an existing output and skips
    /// values already present.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        observables: Option<Vec<Observable>>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Log-log fit of a sweep table.
    Fit {
        table: PathBuf,
        #[arg(long)]
        observable: Observable,
        /// Evaluation time; defaults to the latest time in the table.
        #[arg(long)]
        t: Option<f64>,
    },
    /// W₂ between two measures stored as CSV.
    W2 {
        file_a: PathBuf,
        file_b: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Exact)]
        method: Method,
        /// Cell diameter for the binned bound; default N^(-1/9).
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Admissibility of the initial configuration and kernel checks (JSON).
    Validate {
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        probes: usize,
    },
    /// Nondimensional parameters from SI values (JSON).
    Nondim { params: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Binned,
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path)
}

fn read_measure(path: &Path) -> Result<MarkedMeasure> {
    MarkedMeasure::read_csv(BufReader::new(File::open(path)?))
}

/// Smallest box containing every atom of both measures.
fn bounding_box(a: &MarkedMeasure, b: &MarkedMeasure) -> Result<BoxDomain> {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for atom in a.atoms.iter().chain(&b.atoms) {
        lo = lo.inf(&atom.position);
        hi = hi.sup(&atom.position);
    }
    let pad = Vec3::repeat(1e-9);
    BoxDomain::new(lo - pad, hi + pad)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, output, seed, velocity, probes } => {
            let cfg = load(&config)?;
            let state = cfg.build_configuration()?;
            let params = cfg.simulation_params()?;
            let seed = seed.unwrap_or(cfg.simulation.seed);
            let traj = simulate_path(&state, &params, cfg.simulation.horizon, seed, cfg.simulation.mode)?;
            log::info!("{} jumps from {} proposals", traj.jump_count, traj.proposals);
            write_trajectory_jsonl(open_out(&output)?, &traj.checkpoints, Some(&cfg.hash()))?;
            if let Some(path) = velocity {
                let last = &traj.final_state;
                let at_end = spinflip::ParticleConfiguration {
                    orientations: last.orientations.clone(),
                    spins: last.spins.clone(),
                    ..state
                };
                let set = SingularitySet::microscopic(&at_end, &cfg.field, &params.mobility.shape, last.t);
                let dom = cfg.particles.hypotheses.domain;
                let grid = probe_grid(&Vec3::from(dom.min), &Vec3::from(dom.max), probes);
                write_csv_rows(BufWriter::new(File::create(path)?), &velocity_snapshot(&set, &grid))?;
            }
        }
        Command::Ensemble { config, output } => {
            let cfg = load(&config)?;
            let state = cfg.build_configuration()?;
            let mut params = cfg.simulation_params()?;
            params.record_jumps = false;
            let paths = run_paths(&state, &params, cfg.simulation.horizon, cfg.ensemble.runs, cfg.ensemble.base_seed, cfg.simulation.mode)?;
            let star = spinflip::effective::evolve_star(&state, &params.rates, &params.field, params.mobility.gamma, &params.output_times, params.dt_max)?;
            let pairs = if cfg.ensemble.pairs.is_empty() { default_pairs(state.len()) } else { cfg.ensemble.pairs.clone() };
            let summary = summarize(&paths, &pairs, Some(&star), &params.rates, &params.field, state.len())?;
            write_csv_rows(open_out(&output)?, &summary_rows(&summary, &cfg.hash()))?;
        }
        Command::Sweep { config, axis, values, observables, output } => {
            let cfg = load(&config)?;
            let axis = axis.unwrap_or(cfg.sweep.axis);
            let values = values.unwrap_or_else(|| cfg.sweep.values.clone());
            let observables = observables.unwrap_or_else(|| cfg.sweep.observables.clone());
            let existing = match &output {
                Some(p) if p.exists() && std::fs::metadata(p)?.len() > 0 => read_rows(File::open(p)?)?,
                _ => Vec::new(),
            };
            let rows = sweep(&cfg, axis, &values, &observables, &existing);
            match &output {
                Some(p) if !existing.is_empty() => {
                    let f = std::fs::OpenOptions::new().append(true).open(p)?;
                    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
                    for r in &rows {
                        w.serialize(r)?;
                    }
                    w.flush()?;
                }
                _ => write_csv_rows(open_out(&output)?, &rows)?,
            }
            if rows.iter().any(|r| r.status.starts_with("infeasible")) {
                log::warn!("some sweep values were infeasible");
            }
        }
        Command::Fit { table, observable, t } => {
            let rows = read_rows(File::open(&table)?)?;
            let t = t.unwrap_or_else(|| rows.iter().filter(|r| r.is_ok()).map(|r| r.t).fold(f64::NEG_INFINITY, f64::max));
            let pts = series(&rows, observable, t);
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().map(|(x, e)| (*x, e.mean)).unzip();
            let fit = fit_scaling(&xs, &ys)?;
            println!("{}", json!({ "observable": observable.id(), "t": t, "fit": fit }));
        }
        Command::W2 { file_a, file_b, method, delta } => {
            let a = read_measure(&file_a)?;
            let b = read_measure(&file_b)?;
            let record = match method {
                Method::Exact => {
                    let d = w2_exact(&a, &b)?;
                    DistanceRecord { distance: d, squared: d * d, method: "exact".into(), parameters: json!({ "atoms": [a.len(), b.len()] }) }
                }
                Method::Binned => {
                    let delta = delta.unwrap_or_else(|| default_delta(a.len().max(b.len())));
                    let dom = bounding_box(&a, &b)?;
                    let bb = w2_binned_upper(&a, &b, delta, &dom)?;
                    DistanceRecord {
                        distance: bb.bound.sqrt(),
                        squared: bb.bound,
                        method: "binned".into(),
                        parameters: serde_json::to_value(&bb)?,
                    }
                }
            };
            println!("{}", serde_json::to_string(&record)?);
        }
        Command::Validate { config, probes } => {
            let cfg = load(&config)?;
            let report = validate(&cfg, probes)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.admissibility.is_admissible() {
                return Err(Error::Infeasible("initial configuration violates the admissibility hypotheses".into()));
            }
            if !report.kernels.passed() {
                return Err(Error::Parameter("kernel checks failed".into()));
            }
        }
        Command::Nondim { params } => {
            let text = std::fs::read_to_string(&params)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", params.display())))?;
            let p = PhysicalParams::from_toml_str(&text)?;
            let nd = nondimensionalize(&p).map_err(|e| Error::Config(e.to_string()))?;
            println!("{}", serde_json::to_string(&nd)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
