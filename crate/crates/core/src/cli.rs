//! Command-line front end: `run`, `validate-regime` and `check`.
//!
//! Exit codes: 0 success, 1 a failed verdict (`validate-regime`, `check`),
//! 2 an invariant or solver failure during `run`, 3 a time step below
//! `dt_min`, 64 usage and configuration errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{parse_config, RunConfig, SnapshotFormat};
use crate::diagnostics::{
    boundedness_monitor_with, cumulative_bounds, parse_csv, BoundReport, BoundednessVerdict, DiagnosticsRecord, NoiseFloors,
    RunStatus,
};
use crate::init::generate_initial;
use crate::io::{write_snapshot, DiagnosticsWriter, RunSummary, Snapshot, Verdict, SUMMARY_FILE};
use crate::model::{validate_regime, RegimeQuery};
use crate::stepper::{SimState, Simulation, StepError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_RUN_FAILED: i32 = 2;
pub const EXIT_DT_ABORT: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Overrides `[output] directory` when set.
pub const OUT_DIR_ENV: &str = "CHEMOSTOKES_OUT_DIR";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.ini";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

#[derive(Debug, Parser)]
#[command(name = "chemostokes", version, about = "Chemotaxis-Stokes finite-volume simulator and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured scenario and write diagnostics and snapshots.
    Run {
        config: PathBuf,
        /// Output directory; takes precedence over CHEMOSTOKES_OUT_DIR and the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check exponents (m, p, q, r) against the boundedness regime.
    ValidateRegime {
        #[arg(long, allow_negative_numbers = true)]
        m: f64,
        #[arg(long, allow_negative_numbers = true)]
        p: f64,
        #[arg(long, allow_negative_numbers = true)]
        q: f64,
        #[arg(long, allow_negative_numbers = true)]
        r: f64,
    },
    /// Re-assert the cumulative bounds and the boundedness monitor on a finished run.
    Check {
        diagnostics: PathBuf,
        /// Run summary written next to the CSV by `run` (default: its sibling run_summary.txt).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn execute<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match cli.command {
        Command::Run { config, out_dir } => {
            let env_dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
            run(&config, out_dir.or(env_dir), out, err)
        }
        Command::ValidateRegime { m, p, q, r } => {
            let report = validate_regime(RegimeQuery { m, p, q, r });
            let _ = writeln!(out, "{report}");
            if report.all_pass() {
                EXIT_OK
            } else {
                EXIT_VERDICT
            }
        }
        Command::Check { diagnostics, summary } => check(&diagnostics, summary.as_deref(), out, err),
    }
}

/// Verdicts shared by `run` and `check`, computed from the record stream only
/// so both always agree.
pub struct Verdicts {
    pub bounds: Option<BoundReport>,
    pub boundedness: Option<BoundednessVerdict>,
    pub notes: Vec<String>,
}

pub fn evaluate(records: &[DiagnosticsRecord], summary: &RunSummary, enabled: (bool, bool)) -> Verdicts {
    let mut notes = Vec::new();
    let bounds = match (enabled.0, records.last()) {
        (false, _) => None,
        (true, None) => {
            notes.push("cumulative bounds: no records".to_string());
            None
        }
        (true, Some(last)) => {
            match cumulative_bounds(last.cum_consumption, last.cum_dirichlet_c, summary.c0_integral, summary.c0_half_l2sq, summary.slack) {
                Ok(r) => Some(r),
                Err(e) => {
                    notes.push(format!("cumulative bounds: {e}"));
                    Some(BoundReport { consumption_ratio: f64::NAN, dirichlet_ratio: f64::NAN, slack: summary.slack, pass: false })
                }
            }
        }
    };
    let boundedness = if enabled.1 {
        let floors = NoiseFloors { sup_u: summary.velocity_floor, ..Default::default() };
        match boundedness_monitor_with(records, summary.transient_fraction, summary.status, &floors) {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(format!("boundedness: {e}"));
                Some(BoundednessVerdict { pass: false, failures: vec![e.to_string()], cutoff_time: f64::NAN, peak_y: f64::NAN })
            }
        }
    } else {
        None
    };
    Verdicts { bounds, boundedness, notes }
}

fn verdict_of<T>(v: &Option<T>, pass: impl Fn(&T) -> bool) -> Verdict {
    v.as_ref().map_or(Verdict::Skipped, |x| Verdict::from_pass(pass(x)))
}

fn report_verdicts(v: &Verdicts, out: &mut dyn Write) {
    match &v.bounds {
        Some(b) => writeln!(out, "cumulative bounds: {b}"),
        None => writeln!(out, "cumulative bounds: skipped"),
    }
    .ok();
    match &v.boundedness {
        Some(b) => writeln!(out, "boundedness: {b}"),
        None => writeln!(out, "boundedness: skipped"),
    }
    .ok();
    for n in &v.notes {
        writeln!(out, "note: {n}").ok();
    }
}

fn resolve_out_dir(cfg: &RunConfig, config_path: &Path, override_dir: Option<PathBuf>) -> PathBuf {
    if let Some(d) = override_dir {
        return d;
    }
    let d = PathBuf::from(&cfg.output.directory);
    if d.is_absolute() {
        d
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(d)
    }
}

fn snapshot_name(index: usize, format: SnapshotFormat) -> String {
    let ext = match format {
        SnapshotFormat::Csv => "csv",
        SnapshotFormat::Bin => "bin",
    };
    format!("snapshot_{index:05}.{ext}")
}

struct Output {
    dir: PathBuf,
    format: SnapshotFormat,
    snapshot_cadence: f64,
    snapshots: usize,
    /// Index of the next snapshot time `k * snapshot_cadence` still owed.
    next_snapshot: u64,
    last_snapshot_t: Option<f64>,
    csv: DiagnosticsWriter,
    records: Vec<DiagnosticsRecord>,
    failure: Option<String>,
}

impl Output {
    fn snapshot(&mut self, state: &SimState) {
        let path = self.dir.join(snapshot_name(self.snapshots, self.format));
        match write_snapshot(&path, &Snapshot::of(state), self.format) {
            Ok(()) => {
                self.snapshots += 1;
                self.last_snapshot_t = Some(state.t);
            }
            Err(e) => self.fail(e.to_string()),
        }
    }

    fn fail(&mut self, msg: String) {
        self.failure.get_or_insert(msg);
    }

    /// Records a row and writes a snapshot when a snapshot time has been reached.
    fn push(&mut self, state: &SimState, rec: &DiagnosticsRecord) {
        if let Err(e) = self.csv.push(rec) {
            self.fail(e.to_string());
        }
        self.records.push(*rec);
        if self.snapshot_cadence > 0.0 {
            let due = self.next_snapshot as f64 * self.snapshot_cadence;
            if state.t >= due - 1e-12 * due.abs().max(1.0) {
                self.snapshot(state);
                while self.next_snapshot as f64 * self.snapshot_cadence <= state.t + 1e-12 * state.t.abs().max(1.0) {
                    self.next_snapshot += 1;
                }
            }
        }
    }
}

fn run(config_path: &Path, override_dir: Option<PathBuf>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let usage = |err: &mut dyn Write, msg: String| {
        writeln!(err, "error: {msg}").ok();
        EXIT_USAGE
    };
    let text = match fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => return usage(err, format!("{}: {e}", config_path.display())),
    };
    let parsed = match parse_config(&text) {
        Ok(p) => p,
        Err(e) => return usage(err, format!("{}: {e}", config_path.display())),
    };
    for w in &parsed.warnings {
        writeln!(err, "warning: {w}").ok();
    }
    let cfg = &parsed.config;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let built = cfg.grid().map_err(|e| e.to_string()).and_then(|grid| {
        let params = cfg.model_params()?;
        let exps = (cfg.model.p, cfg.model.q);
        let mut sim = Simulation::new(grid, params, cfg.step_control(), cfg.solver_settings(), exps).map_err(|e| e.to_string())?;
        sim.tolerances = cfg.tolerances();
        Ok(sim)
    });
    let sim = match built {
        Ok(s) => s,
        Err(e) => return usage(err, e),
    };
    let mut state = match generate_initial(cfg, base) {
        Ok(s) => s,
        Err(e) => return usage(err, format!("initial data: {e}")),
    };

    let dir = resolve_out_dir(cfg, config_path, override_dir);
    let setup = fs::create_dir_all(&dir)
        .and_then(|_| fs::write(dir.join(EFFECTIVE_CONFIG_FILE), parsed.echo()))
        .map_err(|e| format!("{}: {e}", dir.display()));
    let csv = setup.and_then(|_| DiagnosticsWriter::create(&dir.join(DIAGNOSTICS_FILE)).map_err(|e| e.to_string()));
    let csv = match csv {
        Ok(c) => c,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            return EXIT_RUN_FAILED;
        }
    };
    let mut output = Output {
        dir: dir.clone(),
        format: cfg.output.snapshot_format,
        snapshot_cadence: cfg.output.snapshot_cadence,
        snapshots: 0,
        next_snapshot: 0,
        last_snapshot_t: None,
        csv,
        records: Vec::new(),
        failure: None,
    };
    let first = sim.record(&state);
    output.push(&state, &first);
    if output.last_snapshot_t.is_none() {
        output.snapshot(&state);
    }

    let t_end = cfg.stepping.t_end;
    let result = sim.advance(&mut state, t_end, Some(cfg.output.cadence), &mut |s, r| output.push(s, r));
    if output.records.last().is_some_and(|r| r.t < state.t) {
        let rec = sim.record(&state);
        output.push(&state, &rec);
    }
    if output.last_snapshot_t != Some(state.t) {
        output.snapshot(&state);
    }

    let (status, code) = match &result {
        Ok(_) => (RunStatus::Completed, EXIT_OK),
        Err(StepError::DtBelowMin { .. }) => (RunStatus::DtAborted, EXIT_DT_ABORT),
        Err(_) => (RunStatus::InvariantAborted, EXIT_RUN_FAILED),
    };
    if let Err(e) = &result {
        writeln!(err, "error: {e}").ok();
    }

    let floors = NoiseFloors::for_run(&sim);
    let mut summary = RunSummary {
        status,
        steps: state.step,
        t_final: state.t,
        n0_mass: state.initial.n_mass,
        c0_integral: state.initial.c_integral,
        c0_half_l2sq: state.initial.c_half_l2sq,
        slack: cfg.checks.slack,
        transient_fraction: cfg.checks.transient_fraction,
        velocity_floor: floors.sup_u,
        cumulative_bounds: Verdict::Skipped,
        boundedness: Verdict::Skipped,
    };
    let verdicts = evaluate(&output.records, &summary, (cfg.checks.cumulative_bounds, cfg.checks.boundedness));
    summary.cumulative_bounds = verdict_of(&verdicts.bounds, |b| b.pass);
    summary.boundedness = verdict_of(&verdicts.boundedness, |b| b.pass);

    let Output { csv, failure, snapshots, records, .. } = output;
    let mut failure = failure;
    if let Err(e) = csv.finish() {
        failure.get_or_insert(e.to_string());
    }
    if let Err(e) = summary.write(&dir.join(SUMMARY_FILE)) {
        failure.get_or_insert(e.to_string());
    }
    writeln!(
        out,
        "{}: {} steps to t = {}, {} records, {} snapshots in {}",
        match status {
            RunStatus::Completed => "completed",
            RunStatus::DtAborted => "aborted (dt below dt_min)",
            RunStatus::InvariantAborted => "aborted (invariant or solver failure)",
        },
        state.step,
        state.t,
        records.len(),
        snapshots,
        dir.display()
    )
    .ok();
    report_verdicts(&verdicts, out);
    if let Some(f) = failure {
        writeln!(err, "error: writing output: {f}").ok();
        return EXIT_RUN_FAILED;
    }
    code
}

fn check(csv_path: &Path, summary_path: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let fail = |err: &mut dyn Write, msg: String| {
        writeln!(err, "error: {msg}").ok();
        EXIT_USAGE
    };
    let text = match fs::read_to_string(csv_path) {
        Ok(t) => t,
        Err(e) => return fail(err, format!("{}: {e}", csv_path.display())),
    };
    let records = match parse_csv(&text) {
        Ok(r) => r,
        Err(e) => return fail(err, format!("{}: {e}", csv_path.display())),
    };
    let summary_path =
        summary_path.map(Path::to_path_buf).unwrap_or_else(|| csv_path.parent().unwrap_or(Path::new(".")).join(SUMMARY_FILE));
    let summary = match RunSummary::read(&summary_path) {
        Ok(s) => s,
        Err(e) => return fail(err, format!("{e} (pass --summary to point at the run summary)")),
    };
    let enabled = (summary.cumulative_bounds != Verdict::Skipped, summary.boundedness != Verdict::Skipped);
    let verdicts = evaluate(&records, &summary, enabled);
    report_verdicts(&verdicts, out);
    let again = (verdict_of(&verdicts.bounds, |b| b.pass), verdict_of(&verdicts.boundedness, |b| b.pass));
    if again != (summary.cumulative_bounds, summary.boundedness) {
        writeln!(
            err,
            "warning: verdicts differ from the run summary ({:?}, {:?} recorded)",
            summary.cumulative_bounds, summary.boundedness
        )
        .ok();
    }
    if again.0 == Verdict::Fail || again.1 == Verdict::Fail {
        EXIT_VERDICT
    } else {
        EXIT_OK
    }
}
