//! Experiment configuration and the command-line subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerConfig, ControllerError, ControllerMode};
use crate::harness::{self, HarnessError, RunOptions, SimTrace};
use crate::matlin::{format_matrix, parse_matrix, MatError, SymMatrix};
use crate::observer::{self, ObserverDesign, ObserverError, ObserverSpec};
use crate::oracle;
use crate::plant::{self, PlantError, PolytopicModel, SwitchSignal, Vertex};
use crate::sdp::SolveOptions;

/// Name of the built-in three-vertex example model.
pub const BUILTIN_MODEL: &str = "paper-eq58";

pub const EXIT_OK: i32 = 0;
/// A self-test case failed.
pub const EXIT_SELFTEST: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<MatError> for CliError {
    fn from(e: MatError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PlantError> for CliError {
    fn from(e: PlantError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ObserverError> for CliError {
    fn from(e: ObserverError) -> Self {
        match e {
            ObserverError::InvalidSpec(_) | ObserverError::Parse(_) | ObserverError::Plant(_) | ObserverError::Matrix(_) => {
                CliError::Config(e.to_string())
            }
            ObserverError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ControllerError> for CliError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::InvalidConfig(_) | ControllerError::Plant(_) => CliError::Config(e.to_string()),
            ControllerError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Step { k, source } => {
                let msg = format!("step {k}: {source}");
                match CliError::from(source) {
                    CliError::Config(_) => CliError::Config(msg),
                    CliError::Infeasible(_) => CliError::Infeasible(msg),
                    _ => CliError::Numerical(msg),
                }
            }
            HarnessError::Plant(p) => CliError::Config(p.to_string()),
            HarnessError::Observer(o) => o.into(),
            HarnessError::MismatchedRuns(_) => CliError::Config(e.to_string()),
            HarnessError::Io(_) | HarnessError::Csv(_) => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Builtin,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SignalSpec {
    Dsws,
    Rsws { seed: u64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub rho: f64,
    pub w: SymMatrix,
    /// Existing observer design; synthesized inline when absent.
    pub observer_design: Option<PathBuf>,
    pub controller: ControllerConfig,
    pub horizon: usize,
    pub signal: SignalSpec,
    pub x0: DVector<f64>,
    pub xhat0: DVector<f64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSource::Builtin,
            rho: 0.7_f64.sqrt(),
            w: SymMatrix::identity(2),
            observer_design: None,
            controller: ControllerConfig::standard(2, 1),
            horizon: 100,
            signal: SignalSpec::Dsws,
            x0: DVector::from_vec(vec![-1.5, -0.2]),
            xhat0: DVector::from_vec(vec![0.5, 1.0]),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    observer: RawObserver,
    #[serde(default)]
    controller: RawController,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    source: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObserver {
    rho: Option<f64>,
    #[serde(rename = "W")]
    w: Option<String>,
    design: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    mode: Option<String>,
    #[serde(rename = "Q")]
    q: Option<String>,
    #[serde(rename = "R")]
    r: Option<String>,
    eps: Option<f64>,
    u_max: Option<String>,
    eta_drift: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    horizon: Option<usize>,
    signal: Option<String>,
    seed: Option<u64>,
    signal_file: Option<String>,
    x0: Option<String>,
    xhat0: Option<String>,
    out_dir: Option<String>,
}

fn parse_vector(text: &str, what: &str) -> Result<DVector<f64>, CliError> {
    let m = parse_matrix(text)?;
    if m.ncols() != 1 {
        return Err(CliError::Config(format!("{what} must be a column vector")));
    }
    Ok(m.column(0).into_owned())
}

fn format_vector(v: &DVector<f64>) -> String {
    format_matrix(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

impl ExperimentConfig {
    /// Parses config text; absent keys take the defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let d = Self::default();
        let model = match raw.model.source.as_deref() {
            None | Some(BUILTIN_MODEL) => ModelSource::Builtin,
            Some(path) => ModelSource::File(PathBuf::from(path)),
        };
        let sym = |t: &Option<String>, dflt: &SymMatrix| -> Result<SymMatrix, CliError> {
            match t {
                Some(s) => Ok(SymMatrix::new(parse_matrix(s)?)?),
                None => Ok(dflt.clone()),
            }
        };
        let c = &raw.controller;
        let controller = ControllerConfig {
            q: sym(&c.q, &d.controller.q)?,
            r: sym(&c.r, &d.controller.r)?,
            u_max: match &c.u_max {
                Some(s) => parse_vector(s, "u_max")?,
                None => d.controller.u_max.clone(),
            },
            eps: c.eps.unwrap_or(d.controller.eps),
            mode: match &c.mode {
                Some(m) => m.parse().map_err(CliError::Config)?,
                None => d.controller.mode,
            },
            eta_drift: c.eta_drift.unwrap_or(d.controller.eta_drift),
        };
        let r = &raw.run;
        let signal = match r.signal.as_deref().unwrap_or("dsws") {
            "dsws" => SignalSpec::Dsws,
            "rsws" => SignalSpec::Rsws {
                seed: r.seed.ok_or_else(|| CliError::Config("signal = \"rsws\" needs a seed".into()))?,
            },
            "file" => SignalSpec::File(PathBuf::from(
                r.signal_file
                    .as_deref()
                    .ok_or_else(|| CliError::Config("signal = \"file\" needs signal_file".into()))?,
            )),
            other => return Err(CliError::Config(format!("unknown signal kind {other:?}"))),
        };
        Ok(Self {
            model,
            rho: raw.observer.rho.unwrap_or(d.rho),
            w: sym(&raw.observer.w, &d.w)?,
            observer_design: raw.observer.design.map(PathBuf::from),
            controller,
            horizon: r.horizon.unwrap_or(d.horizon),
            signal,
            x0: match &r.x0 {
                Some(s) => parse_vector(s, "x0")?,
                None => d.x0,
            },
            xhat0: match &r.xhat0 {
                Some(s) => parse_vector(s, "xhat0")?,
                None => d.xhat0,
            },
            out_dir: r.out_dir.as_deref().map(PathBuf::from).unwrap_or(d.out_dir),
        })
    }

    /// Renders every field explicitly.
    pub fn render(&self) -> String {
        let path = |p: &Path| p.to_string_lossy().into_owned();
        let (signal, seed, signal_file) = match &self.signal {
            SignalSpec::Dsws => ("dsws", None, None),
            SignalSpec::Rsws { seed } => ("rsws", Some(*seed), None),
            SignalSpec::File(p) => ("file", None, Some(path(p))),
        };
        let raw = RawConfig {
            model: RawModel {
                source: Some(match &self.model {
                    ModelSource::Builtin => BUILTIN_MODEL.to_string(),
                    ModelSource::File(p) => path(p),
                }),
            },
            observer: RawObserver {
                rho: Some(self.rho),
                w: Some(format_matrix(self.w.as_matrix())),
                design: self.observer_design.as_deref().map(path),
            },
            controller: RawController {
                mode: Some(self.controller.mode.name().to_string()),
                q: Some(format_matrix(self.controller.q.as_matrix())),
                r: Some(format_matrix(self.controller.r.as_matrix())),
                eps: Some(self.controller.eps),
                u_max: Some(format_vector(&self.controller.u_max)),
                eta_drift: Some(self.controller.eta_drift),
            },
            run: RawRun {
                horizon: Some(self.horizon),
                signal: Some(signal.to_string()),
                seed,
                signal_file,
                x0: Some(format_vector(&self.x0)),
                xhat0: Some(format_vector(&self.xhat0)),
                out_dir: Some(path(&self.out_dir)),
            },
        };
        toml::to_string(&raw).expect("config serializes")
    }

    /// Reads, parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks value invariants and that referenced files exist.
    pub fn validate(&self) -> Result<(), CliError> {
        ObserverSpec::new(self.rho, self.w.clone())?;
        self.controller.validate()?;
        if self.horizon == 0 {
            return Err(CliError::Config("horizon must be at least 1".into()));
        }
        let mut files = Vec::new();
        if let ModelSource::File(p) = &self.model {
            files.push(p);
        }
        if let SignalSpec::File(p) = &self.signal {
            files.push(p);
        }
        if let Some(p) = &self.observer_design {
            files.push(p);
        }
        for p in files {
            if !p.is_file() {
                return Err(CliError::Config(format!("{}: no such file", p.display())));
            }
        }
        Ok(())
    }

    pub fn load_model(&self) -> Result<PolytopicModel, CliError> {
        match &self.model {
            ModelSource::Builtin => Ok(plant::example_model()),
            ModelSource::File(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                parse_model(&text)
            }
        }
    }

    /// The switching signal, truncated or checked against the horizon.
    pub fn load_signal(&self) -> Result<SwitchSignal, CliError> {
        Ok(match &self.signal {
            SignalSpec::Dsws => plant::dsws(self.horizon)?,
            SignalSpec::Rsws { seed } => plant::rsws(self.horizon, *seed)?,
            SignalSpec::File(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let sig: SwitchSignal = text.parse()?;
                if sig.len() != self.horizon {
                    return Err(CliError::Config(format!(
                        "signal file has {} steps, horizon is {}",
                        sig.len(),
                        self.horizon
                    )));
                }
                sig
            }
        })
    }

    pub fn observer_spec(&self) -> Result<ObserverSpec, CliError> {
        Ok(ObserverSpec::new(self.rho, self.w.clone())?)
    }

    /// Loads the configured design, or synthesizes one.
    pub fn observer_design(&self, model: &PolytopicModel, opts: &SolveOptions) -> Result<ObserverDesign, CliError> {
        match &self.observer_design {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Ok(ObserverDesign::from_toml(&text)?)
            }
            None => Ok(observer::synthesize(model, &self.observer_spec()?, opts)?),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelFile {
    vertex: Vec<RawVertex>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVertex {
    #[serde(rename = "A")]
    a: String,
    #[serde(rename = "B")]
    b: String,
    #[serde(rename = "C")]
    c: String,
}

/// Parses a model file: one `[[vertex]]` table per vertex with `A`, `B`, `C`.
pub fn parse_model(text: &str) -> Result<PolytopicModel, CliError> {
    let raw: RawModelFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let vertices = raw
        .vertex
        .iter()
        .map(|v| {
            Ok(Vertex {
                a: parse_matrix(&v.a)?,
                b: parse_matrix(&v.b)?,
                c: parse_matrix(&v.c)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(PolytopicModel::new(vertices)?)
}

pub fn render_model(model: &PolytopicModel) -> String {
    let raw = RawModelFile {
        vertex: model
            .vertices()
            .iter()
            .map(|v| RawVertex {
                a: format_matrix(&v.a),
                b: format_matrix(&v.b),
                c: format_matrix(&v.c),
            })
            .collect(),
    };
    toml::to_string(&raw).expect("model serializes")
}

#[derive(Debug, Parser)]
#[command(name = "lpvmpc", version, about = "Output-feedback quasi-min-max MPC for switched polytopic LPV systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the robust observer and write its design file.
    SynthObserver(CommonArgs),
    /// Run one closed-loop experiment.
    Run(RunArgs),
    /// Run two experiments on the same signal and compare them.
    Compare(CompareArgs),
    /// Check the SDP solver and Schur test against independent oracles.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Use a random switching signal with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<ControllerMode>,
    /// Skip the per-step invariant battery.
    #[arg(long)]
    pub no_runtime_checks: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Second config; defaults to the first with the controller mode flipped.
    #[arg(long)]
    pub against: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, hide = true)]
    pub obj_tol: Option<f64>,
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) {
    if let Some(seed) = args.seed {
        cfg.signal = SignalSpec::Rsws { seed };
    }
    if let Some(mode) = args.mode {
        cfg.controller.mode = mode;
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn cmd_synth_observer(args: &CommonArgs, out: &mut String) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let model = cfg.load_model()?;
    let spec = cfg.observer_spec()?;
    spec.validate()?;
    let design = observer::synthesize(&model, &spec, &SolveOptions::default())?;
    let margin = design.certificate_margin(&model)?;
    let path = cfg.out_dir.join("observer.toml");
    write_file(&path, design.to_toml().as_bytes())?;
    let _ = writeln!(out, "L_obs = {}", format_matrix(&design.gain));
    let _ = writeln!(out, "P_o = {}", format_matrix(design.p.as_matrix()));
    let _ = writeln!(out, "certified margin = {margin:e}");
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(())
}

fn execute(cfg: &ExperimentConfig, checks: bool) -> Result<SimTrace, CliError> {
    cfg.validate()?;
    let model = cfg.load_model()?;
    let signal = cfg.load_signal()?;
    let opts = SolveOptions::default();
    let design = cfg.observer_design(&model, &opts)?;
    model.check_state(&cfg.x0, "x0")?;
    model.check_state(&cfg.xhat0, "xhat0")?;
    Ok(harness::run_closed_loop(
        &model,
        &design,
        &cfg.controller,
        &signal,
        &cfg.x0,
        &cfg.xhat0,
        &RunOptions {
            solve: opts,
            runtime_checks: checks,
        },
    )?)
}

/// Summary lines for one trace.
pub fn run_summary(trace: &SimTrace) -> Result<String, CliError> {
    let mut s = String::new();
    let _ = writeln!(s, "mode = {}", trace.meta.controller.mode.name());
    let _ = writeln!(s, "steps = {}", trace.horizon());
    let _ = writeln!(s, "rms_y = {:.16e}", harness::rms(&trace.outputs())?);
    let _ = writeln!(s, "max_abs_u = {:.16e}", trace.max_abs_input());
    let u0: Vec<String> = trace.steps[0].u.iter().map(|v| format!("{v:.16e}")).collect();
    let _ = writeln!(s, "u0 = {}", u0.join(" "));
    let _ = writeln!(s, "final_x_norm = {:.16e}", trace.final_x.norm());
    let _ = writeln!(s, "infeasible_steps = {}", trace.infeasible_count());
    Ok(s)
}

fn write_trace(trace: &SimTrace, path: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    harness::export_csv(trace, &mut buf)?;
    write_file(path, &buf)
}

pub fn cmd_run(args: &RunArgs, out: &mut String) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common)?;
    apply_overrides(&mut cfg, args);
    let trace = execute(&cfg, !args.no_runtime_checks)?;
    let summary = run_summary(&trace)?;
    write_trace(&trace, &cfg.out_dir.join("trace.csv"))?;
    write_file(&cfg.out_dir.join("summary.txt"), summary.as_bytes())?;
    out.push_str(&summary);
    Ok(())
}

pub fn cmd_compare(args: &CompareArgs, out: &mut String) -> Result<(), CliError> {
    let mut a = load_config(&args.run.common)?;
    apply_overrides(&mut a, &args.run);
    let b = match &args.against {
        Some(p) => {
            let mut b = ExperimentConfig::load(p)?;
            b.out_dir = a.out_dir.clone();
            if let Some(seed) = args.run.seed {
                b.signal = SignalSpec::Rsws { seed };
            }
            b
        }
        None => {
            let mut b = a.clone();
            b.controller.mode = match a.controller.mode {
                ControllerMode::Proposed => ControllerMode::Baseline,
                ControllerMode::Baseline => ControllerMode::Proposed,
            };
            b
        }
    };
    if a.load_signal()?.modes() != b.load_signal()?.modes() {
        return Err(HarnessError::MismatchedRuns("switching signals differ".into()).into());
    }
    if a.load_model()? != b.load_model()? {
        return Err(HarnessError::MismatchedRuns("models differ".into()).into());
    }
    let checks = !args.run.no_runtime_checks;
    let ta = execute(&a, checks)?;
    let tb = execute(&b, checks)?;
    let report = harness::compare_runs(&ta, &tb)?;
    write_trace(&ta, &a.out_dir.join("trace_a.csv"))?;
    write_trace(&tb, &a.out_dir.join("trace_b.csv"))?;
    write_file(&a.out_dir.join("compare.txt"), report.render_text().as_bytes())?;
    write_file(&a.out_dir.join("compare.kv"), report.render_kv().as_bytes())?;
    out.push_str(&report.render_text());
    out.push('\n');
    out.push_str(&report.render_kv());
    Ok(())
}

/// Returns the exit code: 0 when every case passes.
pub fn cmd_selftest(args: &SelftestArgs, out: &mut String) -> Result<i32, CliError> {
    let opts = SolveOptions {
        obj_tol: args.obj_tol.unwrap_or(SolveOptions::default().obj_tol),
        ..SolveOptions::default()
    };
    opts.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let report = oracle::selftest(&opts);
    let failures: Vec<_> = report.failures().collect();
    let _ = writeln!(out, "{} cases, {} failed", report.cases.len(), failures.len());
    for c in &failures {
        let _ = writeln!(out, "FAIL {}: {}", c.name, c.detail);
    }
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_SELFTEST })
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code. Normal output goes to `stdout`, errors to
/// `stderr`.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    let mut out = String::new();
    let result = match &cli.command {
        Command::SynthObserver(a) => cmd_synth_observer(a, &mut out).map(|_| EXIT_OK),
        Command::Run(a) => cmd_run(a, &mut out).map(|_| EXIT_OK),
        Command::Compare(a) => cmd_compare(a, &mut out).map(|_| EXIT_OK),
        Command::Selftest(a) => cmd_selftest(a, &mut out),
    };
    let _ = stdout.write_all(out.as_bytes());
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_render_and_parse_back() {
        let d = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&d.render()).unwrap(), d);
        assert_eq!(ExperimentConfig::parse("").unwrap(), d);
    }

    #[test]
    fn default_values() {
        let d = ExperimentConfig::default();
        assert_eq!(d.rho * d.rho, 0.7_f64.sqrt().powi(2));
        assert_eq!(d.horizon, 100);
        assert_eq!(d.controller.eps, 1e-3);
        assert_eq!(d.controller.u_max[0], 1.0);
        assert_eq!(d.signal, SignalSpec::Dsws);
        d.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let zero_rho = ExperimentConfig::parse("[observer]\nrho = 0.0\n").unwrap();
        assert!(matches!(zero_rho.validate(), Err(CliError::Config(_))));
        let h0 = ExperimentConfig::parse("[run]\nhorizon = 0\n").unwrap();
        assert!(matches!(h0.validate(), Err(CliError::Config(_))));
        let missing = ExperimentConfig::parse("[model]\nsource = \"/nonexistent/model.toml\"\n").unwrap();
        assert!(matches!(missing.validate(), Err(CliError::Config(_))));
        assert!(ExperimentConfig::parse("[run]\nsignal = \"rsws\"\n").is_err());
        assert!(ExperimentConfig::parse("[run]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("[controller]\nmode = \"fast\"\n").is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let m = plant::example_model();
        assert_eq!(parse_model(&render_model(&m)).unwrap(), m);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Infeasible(String::new()).exit_code(), 3);
        assert_eq!(CliError::Numerical(String::new()).exit_code(), 4);
        assert_eq!(CliError::Io(String::new()).exit_code(), 5);
    }

    #[test]
    fn unknown_subcommand_is_a_config_error() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_cli(["lpvmpc", "frobnicate"], &mut o, &mut e), EXIT_CONFIG);
    }
}
