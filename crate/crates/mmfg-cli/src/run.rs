//! Command execution: solves, artifact writing, and error classification.
//!
//! Every command writes its artifacts into the output directory with an
//! atomic temp-file-and-rename, then a `summary.json` echoing the effective
//! configuration. Failures are classified into the documented exit codes:
//! 1 for invalid input, 2 for runs that finished without meeting their
//! convergence or verification target, 3 for I/O.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use mmfg::fbsde::{mean_field_ode_solve, FBSDEPaths, MeanFieldOde};
use mmfg::mfg::{
    export_equilibrium, fit_decoupling_fields, solve_mmmfg, EquilibriumBundle, MFGSolution,
    SPEC_VERSION,
};
use mmfg::model::{ModelSpec, VerifyMode};
use mmfg::nplayer::{estimate_eps_nash, simulate_finite_game, GameOutcome, NashGapReport};

use crate::config::RunConfig;
use crate::plot::emit_plot_data;

/// The requested subcommand.
#[derive(Debug, Clone)]
pub enum CommandKind {
    SolveMfg,
    VerifyExample { model: Option<String> },
    MeanFieldOde,
    FiniteGame,
    NashGap,
}

/// A failure with its exit-code classification.
#[derive(Debug)]
pub enum CliError {
    /// Bad command line or configuration outside the library's purview.
    Usage(String),
    /// A library error; the variant decides validation vs non-convergence.
    Lib(mmfg::Error),
    /// The run completed but a verification threshold was exceeded.
    Verification { metric: String, value: f64, tol: f64 },
    /// Reading inputs or writing artifacts failed.
    Io(String),
}

impl From<mmfg::Error> for CliError {
    fn from(e: mmfg::Error) -> Self {
        CliError::Lib(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Verification { metric, value, tol } => {
                write!(f, "verification failed: {metric} = {value:e} exceeds {tol:e}")
            }
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    /// The documented process exit code for this failure.
    #[must_use]
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) => match e {
                mmfg::Error::NonConvergence { .. }
                | mmfg::Error::FixedPointFailure { .. }
                | mmfg::Error::Divergence { .. }
                | mmfg::Error::OptimizationFailure { .. }
                | mmfg::Error::NonFinite(_) => 2,
                _ => 1,
            },
            CliError::Verification { .. } => 2,
            CliError::Io(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "validation",
            2 => "non-convergence",
            _ => "io",
        }
    }

    /// The machine-readable error object printed to stderr on failure.
    #[must_use]
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        })
        .to_string()
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}

/// Writes `bytes` to `dir/name` atomically: a unique temp file in the same
/// directory is renamed over the target, so readers never observe partial
/// artifacts.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| io_err(&format!("writing {}", tmp.display()), e))?;
    let target = dir.join(name);
    fs::rename(&tmp, &target)
        .map_err(|e| io_err(&format!("renaming into {}", target.display()), e))
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Io(format!("serializing JSON: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Column order of every trajectory table the CLI writes.
pub const TRAJECTORY_HEADER: &str =
    "t, alpha0, mean_x, mean_gamma, mean_P, mean_Pgrave, mean_Y, mean_Ygrave";

fn sig(v: f64) -> String {
    format!("{v:.16e}")
}

fn trajectories_from_paths(paths: &FBSDEPaths) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for n in 0..paths.node_count() {
        let row = [
            paths.grid().time(n),
            paths.alpha0(n),
            paths.mean_x(n),
            paths.mean_gamma(n),
            paths.mean_p(n),
            paths.mean_p_grave(n),
            paths.mean_y(n),
            paths.mean_y_grave(n),
        ];
        let cells: Vec<String> = row.iter().map(|v| sig(*v)).collect();
        out.push_str(&cells.join(", "));
        out.push('\n');
    }
    out
}

fn trajectories_from_ode(ode: &MeanFieldOde) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for n in 0..ode.times.len() {
        let row = [
            ode.times[n],
            ode.alpha0[n],
            ode.mean_x[n],
            ode.mean_gamma[n],
            ode.p[n],
            ode.p_grave[n],
            ode.y[n],
            ode.y_grave[n],
        ];
        let cells: Vec<String> = row.iter().map(|v| sig(*v)).collect();
        out.push_str(&cells.join(", "));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Timings {
    total_seconds: f64,
}

#[derive(Serialize, Default)]
struct Convergence {
    #[serde(skip_serializing_if = "Option::is_none")]
    outer_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixed_point_residuals: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    picard_residuals: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ode_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ode_residual: Option<f64>,
}

#[derive(Serialize)]
struct EpsBlock {
    eps_major: f64,
    se_major: f64,
    eps_minor_max: f64,
    se_minor: f64,
}

#[derive(Serialize)]
struct VerifyBlock {
    model: String,
    metric: String,
    value: f64,
    tol: f64,
    passed: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    spec_version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a RunConfig,
    timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    convergence: Option<Convergence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<EpsBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<VerifyBlock>,
    artifacts: Vec<String>,
}

/// Shared state of one command invocation.
struct Runner<'a> {
    config: &'a RunConfig,
    output: &'a Path,
    command: &'static str,
    started: Instant,
    artifacts: Vec<String>,
}

impl<'a> Runner<'a> {
    fn new(config: &'a RunConfig, output: &'a Path, command: &'static str) -> Self {
        Runner { config, output, command, started: Instant::now(), artifacts: Vec::new() }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(self.output, name, bytes)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Writes `trajectories.csv` and the derived `plot_data.csv`.
    fn write_trajectories(&mut self, csv: &str, model: &ModelSpec) -> Result<(), CliError> {
        self.write("trajectories.csv", csv.as_bytes())?;
        let plot = emit_plot_data(csv, model.oracle())?;
        self.write("plot_data.csv", plot.as_bytes())
    }

    fn write_summary(
        &mut self,
        seed: u64,
        convergence: Option<Convergence>,
        eps: Option<EpsBlock>,
        verify: Option<VerifyBlock>,
    ) -> Result<(), CliError> {
        let mut artifacts = self.artifacts.clone();
        artifacts.push("summary.json".to_string());
        let summary = Summary {
            spec_version: SPEC_VERSION,
            command: self.command,
            seed,
            config: self.config,
            timings: Timings { total_seconds: self.started.elapsed().as_secs_f64() },
            convergence,
            eps,
            verify,
            artifacts,
        };
        self.write("summary.json", &to_pretty_json(&summary)?)
    }
}

fn solve(config: &RunConfig) -> Result<(ModelSpec, MFGSolution), CliError> {
    let model = config.to_model()?;
    let solver = config.to_solver();
    let outer = config.to_outer();
    let solution = solve_mmmfg(&model, &solver, &outer)?;
    Ok((model, solution))
}

fn convergence_of(solution: &MFGSolution) -> Convergence {
    Convergence {
        outer_iterations: Some(solution.outer_iterations),
        fixed_point_residuals: Some(solution.fixed_point_residuals.clone()),
        picard_residuals: Some(solution.paths.picard_residuals().to_vec()),
        ..Convergence::default()
    }
}

fn run_solve_mfg(config: &RunConfig, output: &Path) -> Result<(), CliError> {
    let mut runner = Runner::new(config, output, "solve-mfg");
    let (model, solution) = solve(config)?;
    let fields = fit_decoupling_fields(&solution, config.solver.basis_degree)?;
    let bundle = export_equilibrium(&solution, &fields)?;
    runner.write("bundle.json", &to_pretty_json(&bundle)?)?;
    runner.write_trajectories(&trajectories_from_paths(&solution.paths), &model)?;
    runner.write_summary(config.solver.seed, Some(convergence_of(&solution)), None, None)
}

fn run_verify_example(
    config: &RunConfig,
    output: &Path,
    model_override: Option<&str>,
) -> Result<(), CliError> {
    let mut config = config.clone();
    if let Some(name) = model_override {
        config.model.name = name.to_string();
    }
    let mut runner = Runner::new(&config, output, "verify-example");
    let (model, solution) = solve(&config)?;
    let oracle = model
        .oracle()
        .ok_or_else(|| mmfg::Error::NoOracle(model.name().to_string()))?;

    let grid = solution.paths.grid().clone();
    let alpha0 = solution.alpha0_path();
    let (metric, value, tol) = match oracle.verify {
        VerifyMode::Absolute { tol } => {
            let worst = (0..grid.node_count())
                .map(|n| (alpha0[n] - (oracle.alpha0)(grid.time(n))).abs())
                .fold(0.0_f64, f64::max);
            ("alpha0_max_abs_err", worst, tol)
        }
        VerifyMode::Relative { tol, from_time } => {
            let worst = (0..grid.node_count())
                .filter(|&n| grid.time(n) >= from_time)
                .map(|n| {
                    let truth = (oracle.alpha0)(grid.time(n));
                    (alpha0[n] - truth).abs() / truth.abs()
                })
                .fold(0.0_f64, f64::max);
            ("alpha0_max_rel_err", worst, tol)
        }
    };
    let passed = value <= tol;

    runner.write_trajectories(&trajectories_from_paths(&solution.paths), &model)?;
    runner.write_summary(
        config.solver.seed,
        Some(convergence_of(&solution)),
        None,
        Some(VerifyBlock {
            model: model.name().to_string(),
            metric: metric.to_string(),
            value,
            tol,
            passed,
        }),
    )?;
    if !passed {
        return Err(CliError::Verification { metric: metric.to_string(), value, tol });
    }
    Ok(())
}

fn run_mean_field_ode(config: &RunConfig, output: &Path) -> Result<(), CliError> {
    let mut runner = Runner::new(config, output, "mean-field-ode");
    let model = config.to_model()?;
    let solver = config.to_solver();
    let t_min = solver.resolved_t_min(&model);
    let ode =
        mean_field_ode_solve(&model, t_min, config.ode.steps, solver.x0, solver.gamma0)?;
    runner.write_trajectories(&trajectories_from_ode(&ode), &model)?;
    runner.write_summary(
        config.solver.seed,
        Some(Convergence {
            ode_iterations: Some(ode.iterations),
            ode_residual: Some(ode.residual),
            ..Convergence::default()
        }),
        None,
        None,
    )
}

fn load_bundle(config: &RunConfig) -> Result<EquilibriumBundle, CliError> {
    let Some(path) = &config.game.bundle else {
        return Err(CliError::Usage(
            "game.bundle must point to a bundle produced by solve-mfg".into(),
        ));
    };
    let path = PathBuf::from(path);
    let text = fs::read_to_string(&path)
        .map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Lib(mmfg::Error::InvalidConfig(format!(
            "bundle {} is not a valid equilibrium bundle: {e}",
            path.display()
        )))
    })
}

/// Per-run cost table: one row per (run, player), player 0 is the major.
fn runs_csv(outcome: &GameOutcome) -> String {
    let mut out = String::from("run, player, cost\n");
    for (run, row) in outcome.costs.iter().enumerate() {
        for (player, cost) in row.iter().enumerate() {
            out.push_str(&format!("{run}, {player}, {}\n", sig(*cost)));
        }
    }
    out
}

fn run_finite_game(config: &RunConfig, output: &Path) -> Result<(), CliError> {
    let mut runner = Runner::new(config, output, "finite-game");
    let bundle = load_bundle(config)?;
    let model = config.to_model()?;
    let outcome = simulate_finite_game(&model, &bundle, &config.to_game())?;
    runner.write("finite_game.json", &to_pretty_json(&outcome)?)?;
    runner.write("runs.csv", runs_csv(&outcome).as_bytes())?;
    runner.write_summary(config.game.seed, None, None, None)
}

fn eps_of(report: &NashGapReport) -> EpsBlock {
    EpsBlock {
        eps_major: report.eps_major,
        se_major: report.se_major,
        eps_minor_max: report.eps_minor_max,
        se_minor: report.se_minor,
    }
}

fn run_nash_gap(config: &RunConfig, output: &Path) -> Result<(), CliError> {
    let mut runner = Runner::new(config, output, "nash-gap");
    let bundle = load_bundle(config)?;
    let model = config.to_model()?;
    let game = config.to_game();
    let outcome = simulate_finite_game(&model, &bundle, &game)?;
    let report = estimate_eps_nash(&model, &bundle, &game)?;
    runner.write("nash_gap.json", &to_pretty_json(&report)?)?;
    runner.write("runs.csv", runs_csv(&outcome).as_bytes())?;
    runner.write_summary(config.game.seed, None, Some(eps_of(&report)), None)
}

/// Runs one command against a loaded configuration, writing all artifacts
/// into `output`.
pub fn execute(command: &CommandKind, config: &RunConfig, output: &Path) -> Result<(), CliError> {
    fs::create_dir_all(output)
        .map_err(|e| io_err(&format!("creating {}", output.display()), e))?;
    match command {
        CommandKind::SolveMfg => run_solve_mfg(config, output),
        CommandKind::VerifyExample { model } => {
            run_verify_example(config, output, model.as_deref())
        }
        CommandKind::MeanFieldOde => run_mean_field_ode(config, output),
        CommandKind::FiniteGame => run_finite_game(config, output),
        CommandKind::NashGap => run_nash_gap(config, output),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_classify_errors() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Lib(mmfg::Error::InvalidConfig("x".into())).exit_code(), 1);
        assert_eq!(CliError::Lib(mmfg::Error::NoOracle("example3".into())).exit_code(), 1);
        assert_eq!(
            CliError::Lib(mmfg::Error::Divergence { step: 1, time: 0.5 }).exit_code(),
            2
        );
        assert_eq!(
            CliError::Verification { metric: "m".into(), value: 1.0, tol: 0.5 }.exit_code(),
            2
        );
        assert_eq!(CliError::Io("disk".into()).exit_code(), 3);
    }

    #[test]
    fn error_json_is_machine_readable() {
        let err = CliError::Verification { metric: "m".into(), value: 1.0, tol: 0.5 };
        let json: serde_json::Value = serde_json::from_str(&err.to_json()).unwrap();
        assert_eq!(json["error"]["kind"], "non-convergence");
        assert_eq!(json["error"]["exit_code"], 2);
        assert!(json["error"]["message"].as_str().unwrap().contains("verification failed"));
    }

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [std::f64::consts::PI, -0.48, 1.0 / 3.0, 1.98e-9] {
            let back: f64 = sig(v).parse().unwrap();
            assert_eq!(back, v, "{v} should survive the CSV format");
        }
    }
}
