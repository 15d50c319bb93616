//! `irlink` subcommands: `simulate`, `sweep`, `steer` and `ir`.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 acquisition failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{evaluate, LinkMetrics};
use crate::raytrace::ChannelModel;
use crate::report::fmt_f64;
use crate::scene::{load_scenario, reference_scenario, Scenario, Vec3};
use crate::steering::{
    run_acquisition, steered_trace_with, write_event_log, SteeringError, SteeringResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ACQUISITION: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "irlink",
    version,
    about = "Indoor IR uplink simulator with ADR receivers and beam steering"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Unsteered,
    Steered,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Unsteered => "unsteered",
            Mode::Steered => "steered",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Scenario JSON document; the built-in reference scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-branch link metrics for one transmitter position.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Transmitter position X,Y,Z in meters (default: scenario transmitter).
        #[arg(long, value_parser = parse_vec3)]
        tx: Option<Vec3>,
        /// Wide unsteered emission, or the beam steered by the acquisition search.
        #[arg(long, value_enum, default_value = "unsteered")]
        mode: Mode,
        /// Highest reflection order traced (0 = line of sight only).
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=2))]
        max_order: u8,
    },
    /// Steered vs unsteered comparison along a line of transmitter positions.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Transmitter x coordinate in meters shared by every sweep position.
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        x: f64,
        /// Comma-separated y positions in meters.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7")]
        y: Vec<f64>,
        /// Comma-separated transmitter modes evaluated at each position.
        #[arg(
            long,
            value_enum,
            value_delimiter = ',',
            default_value = "unsteered,steered"
        )]
        modes: Vec<Mode>,
    },
    /// Runs the beam-steering acquisition and writes its event log.
    Steer {
        #[command(flatten)]
        common: Common,
        /// Transmitter position X,Y,Z in meters (default: scenario transmitter).
        #[arg(long, value_parser = parse_vec3)]
        tx: Option<Vec3>,
        /// Acquisition event log (JSON lines).
        #[arg(long)]
        log: PathBuf,
    },
    /// Dumps the impulse response.
    Ir {
        #[command(flatten)]
        common: Common,
        /// Transmitter position X,Y,Z in meters (default: scenario transmitter).
        #[arg(long, value_parser = parse_vec3)]
        tx: Option<Vec3>,
        /// Wide unsteered emission, or the beam steered by the acquisition search.
        #[arg(long, value_enum, default_value = "unsteered")]
        mode: Mode,
        /// Highest reflection order traced (0 = line of sight only).
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=2))]
        max_order: u8,
    },
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected X,Y,Z, got {} values", parts.len())),
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Acquisition(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Acquisition(_) => EXIT_ACQUISITION,
        }
    }
}

impl From<SteeringError> for CliError {
    fn from(e: SteeringError) -> Self {
        match e {
            SteeringError::AcquisitionFailed | SteeringError::DegenerateCoverage { .. } => {
                CliError::Acquisition(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn read_scenario(path: Option<&Path>) -> Result<Scenario, CliError> {
    match path {
        None => Ok(reference_scenario()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            load_scenario(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
    }
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tx_x_m: f64,
    pub tx_y_m: f64,
    pub mode: Mode,
    pub best_unit: usize,
    pub best_branch: usize,
    pub power_w: f64,
    pub delay_spread_s: f64,
    pub snr_db: f64,
    pub ber: f64,
    pub iterations: usize,
}

pub const SWEEP_HEADER: &str =
    "tx_x_m,tx_y_m,mode,best_unit,best_branch,power_w,delay_spread_s,snr_db,ber,iterations";

impl SweepRow {
    fn from_metrics(tx: Vec3, mode: Mode, m: &LinkMetrics, iterations: usize) -> Self {
        let b = m.best();
        Self {
            tx_x_m: tx.x,
            tx_y_m: tx.y,
            mode,
            best_unit: b.unit_id,
            best_branch: b.branch_id,
            power_w: b.power_w,
            delay_spread_s: b.delay_spread_s.unwrap_or(f64::NAN),
            snr_db: b.snr_db,
            ber: b.ber,
            iterations,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(self.tx_x_m),
            fmt_f64(self.tx_y_m),
            self.mode.as_str(),
            self.best_unit,
            self.best_branch,
            fmt_f64(self.power_w),
            fmt_f64(self.delay_spread_s),
            fmt_f64(self.snr_db),
            fmt_f64(self.ber),
            self.iterations
        )
    }
}

fn simulate_one(
    model: &ChannelModel,
    tx: Vec3,
    mode: Mode,
    max_order: u8,
) -> Result<(LinkMetrics, Option<SteeringResult>), CliError> {
    let scenario = model.scenario();
    match mode {
        Mode::Unsteered => {
            let ir = model.trace_unsteered(tx, max_order).map_err(input)?;
            Ok((evaluate(scenario, &ir).map_err(input)?, None))
        }
        Mode::Steered => {
            let acq = run_acquisition(model, tx)?;
            let metrics = if max_order == 2 {
                acq.final_metrics.clone()
            } else {
                let ir = steered_trace_with(
                    model,
                    tx,
                    acq.target,
                    scenario.steering.steered_divergence_deg,
                    max_order,
                )
                .map_err(input)?;
                evaluate(scenario, &ir).map_err(input)?
            };
            Ok((metrics, Some(acq)))
        }
    }
}

/// Computes the sweep rows in `(y, mode)` order. Positions run in parallel.
pub fn sweep_rows(
    scenario: &Scenario,
    x: f64,
    ys: &[f64],
    modes: &[Mode],
) -> Result<Vec<SweepRow>, CliError> {
    let z = scenario.room.comm_floor_height_m;
    for &y in ys {
        scenario
            .check_tx_position(Vec3::new(x, y, z))
            .map_err(input)?;
    }
    let model = ChannelModel::new(scenario);
    let jobs: Vec<(Vec3, Mode)> = ys
        .iter()
        .flat_map(|&y| modes.iter().map(move |&m| (Vec3::new(x, y, z), m)))
        .collect();
    jobs.par_iter()
        .map(|&(tx, mode)| {
            let (m, acq) = simulate_one(&model, tx, mode, 2)?;
            Ok(SweepRow::from_metrics(
                tx,
                mode,
                &m,
                acq.map_or(0, |a| a.iterations),
            ))
        })
        .collect()
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => {
            fs::write(p, bytes).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
        None => stdout.write_all(bytes).map_err(input),
    }
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut buf = Vec::new();
    match cli.command {
        Command::Simulate {
            common,
            tx,
            mode,
            max_order,
        } => {
            let scenario = read_scenario(common.scenario.as_deref())?;
            let tx = tx.unwrap_or(scenario.transmitter.position);
            scenario.check_tx_position(tx).map_err(input)?;
            let model = ChannelModel::new(&scenario);
            let (metrics, _) = simulate_one(&model, tx, mode, max_order)?;
            metrics.write_csv(&mut buf).map_err(input)?;
            emit(common.out.as_deref(), stdout, &buf)
        }
        Command::Sweep {
            common,
            x,
            y,
            modes,
        } => {
            let scenario = read_scenario(common.scenario.as_deref())?;
            let rows = sweep_rows(&scenario, x, &y, &modes)?;
            writeln!(buf, "{SWEEP_HEADER}").map_err(input)?;
            for r in &rows {
                writeln!(buf, "{}", r.csv_line()).map_err(input)?;
            }
            emit(common.out.as_deref(), stdout, &buf)
        }
        Command::Steer { common, tx, log } => {
            let scenario = read_scenario(common.scenario.as_deref())?;
            let tx = tx.unwrap_or(scenario.transmitter.position);
            scenario.check_tx_position(tx).map_err(input)?;
            let model = ChannelModel::new(&scenario);
            let acq = run_acquisition(&model, tx)?;
            let mut log_buf = Vec::new();
            write_event_log(&acq.events, &mut log_buf).map_err(input)?;
            fs::write(&log, log_buf)
                .map_err(|e| CliError::Input(format!("{}: {e}", log.display())))?;
            acq.final_metrics.write_csv(&mut buf).map_err(input)?;
            emit(common.out.as_deref(), stdout, &buf)
        }
        Command::Ir {
            common,
            tx,
            mode,
            max_order,
        } => {
            let scenario = read_scenario(common.scenario.as_deref())?;
            let tx = tx.unwrap_or(scenario.transmitter.position);
            scenario.check_tx_position(tx).map_err(input)?;
            let model = ChannelModel::new(&scenario);
            let ir = match mode {
                Mode::Unsteered => model.trace_unsteered(tx, max_order).map_err(input)?,
                Mode::Steered => {
                    let acq = run_acquisition(&model, tx)?;
                    steered_trace_with(
                        &model,
                        tx,
                        acq.target,
                        scenario.steering.steered_divergence_deg,
                        max_order,
                    )
                    .map_err(input)?
                }
            };
            ir.write_csv(&mut buf).map_err(input)?;
            emit(common.out.as_deref(), stdout, &buf)
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("irlink: {e}");
            e.exit_code()
        }
    }
}
