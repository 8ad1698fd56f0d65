//! Batch front end: problem files, run reports and the `fodof` command.
//!
//! Problem files are JSON objects with row-major nested arrays:
//!
//! ```json
//! {
//!   "alpha": 0.75,
//!   "a_lower": [[...]], "a_upper": [[...]],
//!   "b_lower": [[...]], "b_upper": [[...]],
//!   "c": [[...]],
//!   "n_c": 0,
//!   "solver": {"eps_margin": 1e-6, "tol": 1e-8, "max_iter": 200, "seed": 0},
//!   "certify": {"sample_count": 500, "seed": 0},
//!   "simulate": {"x0": [...], "t_end": 10.0, "h": 0.01}
//! }
//! ```
//!
//! `n_c`, `solver`, `certify` and `simulate` are optional. A missing `x0`
//! starts the plant states at 1 and the controller states at 0.
//!
//! Exit codes: 0 certification passed (or the command succeeded), 1 bad
//! input or I/O error, 2 usage error, 3 `INFEASIBLE`, 4
//! `CERTIFICATION_FAILED`, 5 `SOLVER_ERROR`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fosim::simulate;
use crate::interval::{decompose, IntervalMatrix, UncertainFoltiSystem, UncertaintyFactors};
use crate::linalg::{rows, Matrix};
use crate::sdp::{SdpStatus, SolverConfig};
use crate::stability::{closed_loop, sector_margin};
use crate::synthesis::{certify, synthesize, CertificationReport, CertifyConfig, DynamicController, SynthesisResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_CERTIFICATION_FAILED: i32 = 4;
pub const EXIT_SOLVER_ERROR: i32 = 5;

/// Environment variable holding the log filter (`error`, `warn`, `info`,
/// `debug`, `trace`, or an env_logger directive list).
pub const LOG_ENV: &str = "FODOF_LOG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub t_end: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub alpha: f64,
    #[serde(with = "rows")]
    pub a_lower: Matrix,
    #[serde(with = "rows")]
    pub a_upper: Matrix,
    #[serde(with = "rows")]
    pub b_lower: Matrix,
    #[serde(with = "rows")]
    pub b_upper: Matrix,
    #[serde(with = "rows")]
    pub c: Matrix,
    #[serde(default)]
    pub n_c: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
}

impl ProblemConfig {
    pub fn system(&self) -> Result<UncertainFoltiSystem> {
        let wrap = |e: Error| Error::Validation(e.to_string());
        let a = IntervalMatrix::new(self.a_lower.clone(), self.a_upper.clone()).map_err(wrap)?;
        let b = IntervalMatrix::new(self.b_lower.clone(), self.b_upper.clone()).map_err(wrap)?;
        UncertainFoltiSystem::new(self.alpha, a, b, self.c.clone()).map_err(wrap)
    }

    pub fn validate(&self) -> Result<()> {
        self.system()?;
        let s = &self.solver;
        if !(s.eps_margin > 0.0 && s.tol > 0.0 && s.box_bound > 0.0 && s.max_iter > 0) {
            return Err(Error::Validation(
                "solver: eps_margin, tol, box_bound and max_iter must be positive".into(),
            ));
        }
        if let Some(sim) = &self.simulate {
            if !(sim.h > 0.0 && sim.h.is_finite()) {
                return Err(Error::Validation(format!("simulate: step h = {} must be positive", sim.h)));
            }
            if !(sim.t_end >= sim.h && sim.t_end.is_finite()) {
                return Err(Error::Validation(format!(
                    "simulate: t_end = {} must be at least h",
                    sim.t_end
                )));
            }
            if sim.x0.as_ref().is_some_and(|x| x.iter().any(|v| !v.is_finite())) {
                return Err(Error::Validation("simulate: x0 must be finite".into()));
            }
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<ProblemConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: ProblemConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_controller(path: &Path) -> Result<DynamicController> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Passed,
    Ok,
    Infeasible,
    CertificationFailed,
    SolverError,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Passed | RunStatus::Ok => EXIT_OK,
            RunStatus::Infeasible => EXIT_INFEASIBLE,
            RunStatus::CertificationFailed => EXIT_CERTIFICATION_FAILED,
            RunStatus::SolverError => EXIT_SOLVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub t_end: f64,
    pub h: f64,
    pub steps: usize,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub ratio: f64,
    /// Sector margin of the simulated (midpoint) closed loop.
    pub sector_margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    #[serde(with = "rows")]
    pub a0: Matrix,
    #[serde(with = "rows")]
    pub delta_a: Matrix,
    #[serde(with = "rows")]
    pub m_a: Matrix,
    #[serde(with = "rows")]
    pub r_a: Matrix,
    #[serde(with = "rows")]
    pub b0: Matrix,
    #[serde(with = "rows")]
    pub delta_b: Matrix,
    #[serde(with = "rows")]
    pub m_b: Matrix,
    #[serde(with = "rows")]
    pub r_b: Matrix,
    pub open_loop_sector_margin: f64,
}

impl From<&UncertaintyFactors> for Decomposition {
    fn from(f: &UncertaintyFactors) -> Self {
        Self {
            a0: f.a0.clone(),
            delta_a: f.delta_a.clone(),
            m_a: f.m_a.clone(),
            r_a: f.r_a.clone(),
            b0: f.b0.clone(),
            delta_b: f.delta_b.clone(),
            m_b: f.m_b.clone(),
            r_b: f.r_b.clone(),
            open_loop_sector_margin: f64::NAN,
        }
    }
}

/// Wall-clock timings, excluded from reproducibility comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub status: RunStatus,
    pub config: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<DynamicController>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certification: Option<CertificationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Decomposition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timings: Timings,
}

impl RunReport {
    fn new(command: &str, config: ProblemConfig) -> Self {
        Self {
            command: command.into(),
            status: RunStatus::Ok,
            config,
            synthesis: None,
            controller: None,
            certification: None,
            simulation: None,
            decomposition: None,
            error: None,
            timings: Timings::default(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn certification_status(rep: &CertificationReport) -> RunStatus {
    if rep.passed {
        RunStatus::Passed
    } else {
        RunStatus::CertificationFailed
    }
}

/// Solver outcomes become report statuses; input errors propagate.
fn classify(err: Error) -> Result<(RunStatus, String)> {
    let msg = err.to_string();
    match err {
        Error::Infeasible(SdpStatus::Infeasible) => Ok((RunStatus::Infeasible, msg)),
        Error::Infeasible(_)
        | Error::SolverFailure(_)
        | Error::SingularCertificate { .. }
        | Error::ConvergenceFailure
        | Error::NonFinite => Ok((RunStatus::SolverError, msg)),
        other => Err(other),
    }
}

pub fn cmd_synth(cfg: &ProblemConfig) -> Result<RunReport> {
    let start = Instant::now();
    let sys = cfg.system()?;
    let mut report = RunReport::new("synth", cfg.clone());
    match synthesize(&sys, cfg.n_c, &cfg.solver, &cfg.certify) {
        Ok((res, cert)) => {
            report.status = certification_status(&cert);
            report.controller = Some(res.controller.clone());
            report.synthesis = Some(res);
            report.certification = Some(cert);
        }
        Err(e) => {
            let (status, msg) = classify(e)?;
            report.status = status;
            report.error = Some(msg);
        }
    }
    report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

pub fn cmd_check(cfg: &ProblemConfig, k: &DynamicController) -> Result<RunReport> {
    let start = Instant::now();
    let sys = cfg.system()?;
    let mut report = RunReport::new("check", cfg.clone());
    match certify(&sys, k, &cfg.certify, &cfg.solver) {
        Ok(cert) => {
            report.status = certification_status(&cert);
            report.certification = Some(cert);
        }
        Err(e) => {
            let (status, msg) = classify(e)?;
            report.status = status;
            report.error = Some(msg);
        }
    }
    report.controller = Some(k.clone());
    report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// Simulates the midpoint closed loop; returns the report and the CSV text.
pub fn cmd_simulate(cfg: &ProblemConfig, k: &DynamicController) -> Result<(RunReport, String)> {
    let start = Instant::now();
    let sys = cfg.system()?;
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Validation("config has no simulate block".into()))?;
    let f = decompose(&sys);
    let acl = closed_loop(&f.a0, &f.b0, &sys.c, k)?;
    let (n, nc) = (sys.n(), k.n_c);
    let x0 = match &sim.x0 {
        Some(x) if x.len() == n + nc => x.clone(),
        Some(x) if x.len() == n => x.iter().copied().chain(std::iter::repeat_n(0.0, nc)).collect(),
        Some(x) => {
            return Err(Error::Validation(format!(
                "simulate: x0 has length {}, expected {n} or {}",
                x.len(),
                n + nc
            )))
        }
        None => std::iter::repeat_n(1.0, n).chain(std::iter::repeat_n(0.0, nc)).collect(),
    };
    let tr = simulate(&acl, sys.alpha, &x0, sim.t_end, sim.h)?;
    let mut csv = Vec::new();
    tr.write_csv(&mut csv)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut report = RunReport::new("simulate", cfg.clone());
    report.controller = Some(k.clone());
    report.simulation = Some(SimulationSummary {
        t_end: sim.t_end,
        h: sim.h,
        steps: tr.times.len() - 1,
        initial_norm: norm(&x0),
        final_norm: norm(tr.final_state()),
        ratio: tr.decay_ratio(),
        sector_margin: sector_margin(&acl, sys.alpha)?.margin,
    });
    report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((report, String::from_utf8(csv).expect("CSV is ASCII")))
}

pub fn cmd_decompose(cfg: &ProblemConfig) -> Result<RunReport> {
    let start = Instant::now();
    let sys = cfg.system()?;
    let f = decompose(&sys);
    let mut d = Decomposition::from(&f);
    d.open_loop_sector_margin = sector_margin(&f.a0, sys.alpha)?.margin;
    let mut report = RunReport::new("decompose", cfg.clone());
    report.decomposition = Some(d);
    report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

#[derive(Debug, Parser)]
#[command(name = "fodof", version, about = "Robust output feedback for interval fractional-order systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Problem file (JSON).
    pub config: PathBuf,
    /// Write the report (or CSV for `simulate`) here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for the solver record and the certification samples.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of random interior realizations checked by certification.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize and certify a controller.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Controller order (overrides `n_c` in the config).
        #[arg(long)]
        nc: Option<usize>,
        /// Where to write the controller file; defaults to
        /// `<out>.controller.json` when `--out` is given.
        #[arg(long)]
        controller_out: Option<PathBuf>,
    },
    /// Certify a given controller on the interval family.
    Check {
        #[command(flatten)]
        common: Common,
        /// Controller file (JSON).
        controller: PathBuf,
    },
    /// Simulate the midpoint closed loop and write a CSV trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Controller file (JSON).
        controller: PathBuf,
    },
    /// Print the midpoint/radius decomposition and uncertainty factors.
    Decompose {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ProblemConfig> {
    let mut cfg = parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.solver.seed = seed;
        cfg.certify.seed = seed;
    }
    if let Some(samples) = common.samples {
        cfg.certify.sample_count = samples;
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn controller_path(out: Option<&Path>, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        out.map(|o| {
            let mut name = o.file_stem().unwrap_or_default().to_os_string();
            name.push(".controller.json");
            o.with_file_name(name)
        })
    })
}

fn summary(report: &RunReport) -> String {
    let mut s = format!("{}: {:?}", report.command, report.status);
    if let Some(c) = &report.certification {
        s.push_str(&format!(
            ", {} vertices + {} samples, min sector margin {:.6}",
            c.vertex_count, c.sample_count, c.min_sector_margin
        ));
    }
    if let Some(sim) = &report.simulation {
        s.push_str(&format!(", |x(t_end)|/|x(0)| = {:.6}", sim.ratio));
    }
    if let Some(e) = &report.error {
        s.push_str(&format!(", {e}"));
    }
    s
}

fn execute(cli: Cli) -> Result<i32> {
    let report = match &cli.command {
        Command::Synth {
            common,
            nc,
            controller_out,
        } => {
            let mut cfg = load(common)?;
            if let Some(nc) = nc {
                cfg.n_c = *nc;
            }
            let report = cmd_synth(&cfg)?;
            if let (Some(k), Some(path)) = (
                &report.controller,
                controller_path(common.out.as_deref(), controller_out.as_deref()),
            ) {
                let mut text = serde_json::to_string_pretty(k).expect("controller serializes");
                text.push('\n');
                fs::write(&path, text)?;
                info!("controller written to {}", path.display());
            }
            emit(common.out.as_deref(), &report.to_json())?;
            report
        }
        Command::Check { common, controller } => {
            let cfg = load(common)?;
            let k = parse_controller(controller)?;
            let report = cmd_check(&cfg, &k)?;
            emit(common.out.as_deref(), &report.to_json())?;
            report
        }
        Command::Simulate { common, controller } => {
            let cfg = load(common)?;
            let k = parse_controller(controller)?;
            let (report, csv) = cmd_simulate(&cfg, &k)?;
            emit(common.out.as_deref(), &csv)?;
            report
        }
        Command::Decompose { common } => {
            let cfg = load(common)?;
            let report = cmd_decompose(&cfg)?;
            emit(common.out.as_deref(), &report.to_json())?;
            report
        }
    };
    eprintln!("{}", summary(&report));
    Ok(report.status.exit_code())
}

/// Entry point of the `fodof` binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match classify(e) {
                Ok((status, _)) => status.exit_code(),
                Err(_) => EXIT_INPUT,
            }
        }
    }
}
