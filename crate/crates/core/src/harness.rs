//! Closed-loop simulation, runtime invariant battery, metrics and CSV export.

use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::DVector;
use thiserror::Error;

use crate::controller::{
    contraction_margin, ellipsoid_value, mpc_step, predict_next, ControllerConfig, ControllerError, ControllerMode,
    StepInput,
};
use crate::observer::{self, ObserverDesign, ObserverError};
use crate::plant::{self, PlantError, PolytopicModel, SignalKind, SwitchSignal};
use crate::sdp::SolveOptions;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("step {k}: {source}")]
    Step { k: usize, source: ControllerError },
    #[error("step {k}: invariant {check} violated ({detail})")]
    Invariant { k: usize, check: &'static str, detail: String },
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("runs cannot be compared: {0}")]
    MismatchedRuns(String),
    #[error("empty series")]
    EmptySeries,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed trace CSV: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub mode: usize,
    pub x: DVector<f64>,
    pub xhat: DVector<f64>,
    /// One-step prediction at the applied input.
    pub x_p: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub du: DVector<f64>,
    /// NaN on fallback steps.
    pub delta: f64,
    pub feasible: bool,
    /// NaN on fallback steps.
    pub margin: f64,
    pub cond_phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub controller: ControllerConfig,
    pub signal: SignalKind,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub steps: Vec<StepRecord>,
    /// State and estimate after the last step.
    pub final_x: DVector<f64>,
    pub final_xhat: DVector<f64>,
    pub meta: RunMeta,
}

impl SimTrace {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn infeasible_count(&self) -> usize {
        self.steps.iter().filter(|s| !s.feasible).count()
    }

    /// At most `tolerance` fallback steps.
    pub fn accepted(&self, tolerance: usize) -> bool {
        self.infeasible_count() <= tolerance
    }

    pub fn modes(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.mode).collect()
    }

    /// All output components, step-major.
    pub fn outputs(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.y.iter().copied()).collect()
    }

    pub fn max_abs_input(&self) -> f64 {
        self.steps.iter().map(|s| s.u.amax()).fold(0.0, f64::max)
    }

    /// `‖x(k) − x̂(k)‖∞` per step, then after the last step.
    pub fn estimation_errors(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.steps.iter().map(|s| (&s.x - &s.xhat).amax()).collect();
        e.push((&self.final_x - &self.final_xhat).amax());
        e
    }

    /// Output estimation error `C_s(x − x̂)` per step.
    pub fn output_errors(&self, model: &PolytopicModel) -> Result<Vec<DVector<f64>>, HarnessError> {
        self.steps
            .iter()
            .map(|s| Ok(plant::output(model, s.mode, &(&s.x - &s.xhat))?))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub solve: SolveOptions,
    /// Evaluate the per-step invariant battery and abort on violation.
    pub runtime_checks: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            runtime_checks: true,
        }
    }
}

/// Relative slack for the observer decrease check, covering round-off in
/// `e = x − x̂` when the error is far below the state magnitude.
const ROUNDOFF: f64 = 1e-14;

/// Input strictly inside the box: `|u_j| ≤ (1 − 1e-9)·u_max_j`.
fn clamp_inside(u: &DVector<f64>, u_max: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        u.len(),
        u.iter().zip(u_max.iter()).map(|(&v, &m)| {
            let lim = m * (1.0 - 1e-9);
            v.clamp(-lim, lim)
        }),
    )
}

/// Runs the plant, observer and controller in closed loop for the length of `signal`.
pub fn run_closed_loop(
    model: &PolytopicModel,
    design: &ObserverDesign,
    cfg: &ControllerConfig,
    signal: &SwitchSignal,
    x0: &DVector<f64>,
    xhat0: &DVector<f64>,
    opts: &RunOptions,
) -> Result<SimTrace, HarnessError> {
    signal.check_against(model)?;
    model.check_state(x0, "initial state")?;
    model.check_state(xhat0, "initial estimate")?;
    cfg.check_model(model).map_err(|source| HarnessError::Step { k: 0, source })?;

    let nu = model.nu();
    let rho2 = design.spec.rho * design.spec.rho;
    let mut x = x0.clone();
    let mut xhat = xhat0.clone();
    let mut u_prev = DVector::zeros(nu);
    let mut psi_prev: Option<nalgebra::DMatrix<f64>> = None;
    let mut steps = Vec::with_capacity(signal.len());

    for k in 0..signal.len() {
        let mode = signal.mode(k);
        let y = plant::output(model, mode, &x)?;
        let inp = StepInput {
            xhat: xhat.clone(),
            y: y.clone(),
            mode,
            u_prev: u_prev.clone(),
            k,
        };
        let (u, du, delta, margin, cond_phi, feasible, x_p) = match mpc_step(model, design, cfg, &inp, &opts.solve) {
            Ok(step) => {
                let x_p = predict_next(model, design, &inp, &step.du).map_err(|source| HarnessError::Step { k, source })?;
                if opts.runtime_checks {
                    let ell = ellipsoid_value(&step, &x_p);
                    if !(ell < step.delta) {
                        return Err(HarnessError::Invariant {
                            k,
                            check: "ellipsoid",
                            detail: format!("x_p'Gamma x_p = {ell:e} vs delta = {:e}", step.delta),
                        });
                    }
                    let con = contraction_margin(model, cfg, &step).map_err(|source| HarnessError::Step { k, source })?;
                    if !(con > 0.0) {
                        return Err(HarnessError::Invariant {
                            k,
                            check: "contraction",
                            detail: format!("min eigenvalue {con:e}"),
                        });
                    }
                }
                psi_prev = Some(step.psi.clone());
                (step.u, step.du, step.delta, step.margin, step.cond_phi, true, x_p)
            }
            Err(ControllerError::Infeasible { .. }) => {
                let raw = match &psi_prev {
                    Some(psi) => psi * &xhat,
                    None => DVector::zeros(nu),
                };
                let u = clamp_inside(&raw, &cfg.u_max);
                let du = &u - &u_prev;
                let x_p = predict_next(model, design, &inp, &du).map_err(|source| HarnessError::Step { k, source })?;
                (u, du, f64::NAN, f64::NAN, f64::NAN, false, x_p)
            }
            Err(source) => return Err(HarnessError::Step { k, source }),
        };

        if opts.runtime_checks {
            if let Some(j) = (0..nu).find(|&j| !(u[j].abs() < cfg.u_max[j])) {
                return Err(HarnessError::Invariant {
                    k,
                    check: "input-bound",
                    detail: format!("|u_{}| = {:e}", j + 1, u[j].abs()),
                });
            }
        }

        let (x_next, _) = plant::step(model, mode, &x, &u)?;
        let xhat_next = observer::step(design, model, mode, &xhat, &u, &y)?;

        if opts.runtime_checks {
            let e = &x - &xhat;
            let e_next = &x_next - &xhat_next;
            let v = design.p.quad_form(&e);
            let v_next = design.p.quad_form(&e_next);
            let scale = 1.0 + x.amax() + xhat.amax() + x_next.amax() + xhat_next.amax();
            let slack = crate::matlin::max_eigenvalue(&design.p) * (ROUNDOFF * scale).powi(2);
            if !(v_next <= rho2 * v + slack) {
                return Err(HarnessError::Invariant {
                    k,
                    check: "observer-decrease",
                    detail: format!("{v_next:e} > rho^2 * {v:e}"),
                });
            }
        }

        steps.push(StepRecord {
            k,
            mode,
            x: x.clone(),
            xhat: xhat.clone(),
            x_p,
            y,
            u: u.clone(),
            du,
            delta,
            feasible,
            margin,
            cond_phi,
        });
        x = x_next;
        xhat = xhat_next;
        u_prev = u;
    }

    let seed = match signal.kind() {
        SignalKind::Rsws { seed } => Some(seed),
        _ => None,
    };
    Ok(SimTrace {
        steps,
        final_x: x,
        final_xhat: xhat,
        meta: RunMeta {
            controller: cfg.clone(),
            signal: signal.kind(),
            seed,
        },
    })
}

/// Root mean square.
pub fn rms(series: &[f64]) -> Result<f64, HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    Ok((series.iter().map(|v| v * v).sum::<f64>() / series.len() as f64).sqrt())
}

/// Distance below which an input counts as saturated.
pub const SATURATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: ControllerMode,
    pub rms_y: f64,
    pub max_switch_jump: f64,
    pub saturated_steps: usize,
    pub u0: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchJump {
    pub k: usize,
    pub from: usize,
    pub to: usize,
    pub jump_a: f64,
    pub jump_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub a: RunSummary,
    pub b: RunSummary,
    pub switches: Vec<SwitchJump>,
}

/// `‖u(k) − u(k−1)‖∞` with `u(−1) = 0`.
fn input_jump(trace: &SimTrace, k: usize) -> f64 {
    let prev = if k == 0 {
        DVector::zeros(trace.steps[0].u.len())
    } else {
        trace.steps[k - 1].u.clone()
    };
    (&trace.steps[k].u - prev).amax()
}

fn summarize(trace: &SimTrace, switches: &[usize]) -> Result<RunSummary, HarnessError> {
    let u_max = &trace.meta.controller.u_max;
    let saturated_steps = trace
        .steps
        .iter()
        .filter(|s| (0..s.u.len()).any(|j| u_max[j] - s.u[j].abs() <= SATURATION_TOL))
        .count();
    Ok(RunSummary {
        mode: trace.meta.controller.mode,
        rms_y: rms(&trace.outputs())?,
        max_switch_jump: switches.iter().map(|&k| input_jump(trace, k)).fold(0.0, f64::max),
        saturated_steps,
        u0: trace.steps[0].u.clone(),
    })
}

/// Compares two runs over the same switching signal.
pub fn compare_runs(a: &SimTrace, b: &SimTrace) -> Result<ComparisonReport, HarnessError> {
    if a.horizon() != b.horizon() {
        return Err(HarnessError::MismatchedRuns(format!(
            "horizons {} and {}",
            a.horizon(),
            b.horizon()
        )));
    }
    if a.horizon() == 0 {
        return Err(HarnessError::EmptySeries);
    }
    if a.modes() != b.modes() {
        return Err(HarnessError::MismatchedRuns("switching signals differ".into()));
    }
    let modes = a.modes();
    let instants: Vec<usize> = (1..modes.len()).filter(|&k| modes[k] != modes[k - 1]).collect();
    let switches = instants
        .iter()
        .map(|&k| SwitchJump {
            k,
            from: modes[k - 1],
            to: modes[k],
            jump_a: input_jump(a, k),
            jump_b: input_jump(b, k),
        })
        .collect();
    Ok(ComparisonReport {
        a: summarize(a, &instants)?,
        b: summarize(b, &instants)?,
        switches,
    })
}

impl ComparisonReport {
    /// Signed differences `a − b`.
    pub fn rms_delta(&self) -> f64 {
        self.a.rms_y - self.b.rms_y
    }

    pub fn switch_jump_delta(&self) -> f64 {
        self.a.max_switch_jump - self.b.max_switch_jump
    }

    pub fn saturation_delta(&self) -> i64 {
        self.a.saturated_steps as i64 - self.b.saturated_steps as i64
    }

    pub fn u0_delta(&self) -> DVector<f64> {
        &self.a.u0 - &self.b.u0
    }

    pub fn swapped(&self) -> Self {
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
            switches: self
                .switches
                .iter()
                .map(|s| SwitchJump {
                    jump_a: s.jump_b,
                    jump_b: s.jump_a,
                    ..s.clone()
                })
                .collect(),
        }
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28}{:>16}{:>16}{:>16}", "", self.a.mode.name(), self.b.mode.name(), "a - b");
        let _ = writeln!(
            s,
            "{:<28}{:>16.6}{:>16.6}{:>+16.6}",
            "RMS(y)",
            self.a.rms_y,
            self.b.rms_y,
            self.rms_delta()
        );
        let _ = writeln!(
            s,
            "{:<28}{:>16.6}{:>16.6}{:>+16.6}",
            "max |du| at switches",
            self.a.max_switch_jump,
            self.b.max_switch_jump,
            self.switch_jump_delta()
        );
        let _ = writeln!(
            s,
            "{:<28}{:>16}{:>16}{:>+16}",
            "steps at input bound",
            self.a.saturated_steps,
            self.b.saturated_steps,
            self.saturation_delta()
        );
        let _ = writeln!(
            s,
            "{:<28}{:>16.6e}{:>16.6e}{:>+16.6e}",
            "u(0)",
            self.a.u0.amax(),
            self.b.u0.amax(),
            self.a.u0.amax() - self.b.u0.amax()
        );
        if !self.switches.is_empty() {
            let _ = writeln!(s, "\nswitch instants");
            let _ = writeln!(s, "{:>6}{:>8}{:>16}{:>16}", "k", "modes", "jump a", "jump b");
            for sw in &self.switches {
                let _ = writeln!(
                    s,
                    "{:>6}{:>8}{:>16.6e}{:>16.6e}",
                    sw.k,
                    format!("{}->{}", sw.from, sw.to),
                    sw.jump_a,
                    sw.jump_b
                );
            }
        }
        s
    }

    /// One `key=value` per line.
    pub fn render_kv(&self) -> String {
        let mut s = String::new();
        for (tag, r) in [("a", &self.a), ("b", &self.b)] {
            let _ = writeln!(s, "{tag}.mode={}", r.mode.name());
            let _ = writeln!(s, "{tag}.rms_y={:.16e}", r.rms_y);
            let _ = writeln!(s, "{tag}.max_switch_jump={:.16e}", r.max_switch_jump);
            let _ = writeln!(s, "{tag}.saturated_steps={}", r.saturated_steps);
            for (j, v) in r.u0.iter().enumerate() {
                let _ = writeln!(s, "{tag}.u0_{}={v:.16e}", j + 1);
            }
        }
        let _ = writeln!(s, "delta.rms_y={:.16e}", self.rms_delta());
        let _ = writeln!(s, "delta.max_switch_jump={:.16e}", self.switch_jump_delta());
        let _ = writeln!(s, "delta.saturated_steps={}", self.saturation_delta());
        let _ = writeln!(s, "switches={}", self.switches.len());
        for sw in &self.switches {
            let _ = writeln!(
                s,
                "switch.{}={}->{} {:.16e} {:.16e}",
                sw.k, sw.from, sw.to, sw.jump_a, sw.jump_b
            );
        }
        s
    }
}

/// Column names of the trace CSV.
pub fn csv_header(nx: usize, ny: usize, nu: usize) -> Vec<String> {
    let mut h = vec!["k".to_string(), "s".to_string()];
    h.extend((1..=nx).map(|i| format!("x{i}")));
    h.extend((1..=nx).map(|i| format!("xhat{i}")));
    h.extend((1..=ny).map(|i| format!("y{i}")));
    h.extend((1..=nu).map(|i| format!("u{i}")));
    h.extend((1..=nu).map(|i| format!("du{i}")));
    h.extend(["delta", "feasible", "margin"].map(String::from));
    h
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the trace as CSV: header plus one row per step.
pub fn export_csv<W: Write>(trace: &SimTrace, out: W) -> Result<(), HarnessError> {
    let first = trace.steps.first().ok_or(HarnessError::EmptySeries)?;
    let (nx, ny, nu) = (first.x.len(), first.y.len(), first.u.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(nx, ny, nu))?;
    for s in &trace.steps {
        let mut row = vec![s.k.to_string(), s.mode.to_string()];
        row.extend(s.x.iter().map(|&v| num(v)));
        row.extend(s.xhat.iter().map(|&v| num(v)));
        row.extend(s.y.iter().map(|&v| num(v)));
        row.extend(s.u.iter().map(|&v| num(v)));
        row.extend(s.du.iter().map(|&v| num(v)));
        row.push(num(s.delta));
        row.push(if s.feasible { "1" } else { "0" }.to_string());
        row.push(num(s.margin));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub k: usize,
    pub mode: usize,
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub delta: f64,
    pub feasible: bool,
    pub margin: f64,
}

/// Reads back a trace written by [`export_csv`].
pub fn parse_csv<R: Read>(input: R) -> Result<Vec<CsvRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let count = |p: &str| {
        header
            .iter()
            .filter(|h| h.strip_prefix(p).is_some_and(|rest| rest.parse::<usize>().is_ok()))
            .count()
    };
    let (nx, ny, nu) = (count("x"), count("y"), count("u"));
    if header != csv_header(nx, ny, nu) {
        return Err(HarnessError::Parse(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, HarnessError> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| HarnessError::Parse(format!("column {i}: {:?}", &rec[i])))
        };
        let u = |i: usize| -> Result<usize, HarnessError> {
            rec[i]
                .parse::<usize>()
                .map_err(|_| HarnessError::Parse(format!("column {i}: {:?}", &rec[i])))
        };
        let span = |start: usize, len: usize| (start..start + len).map(f).collect::<Result<Vec<_>, _>>();
        let mut c = 2;
        let x = span(c, nx)?;
        c += nx;
        let xhat = span(c, nx)?;
        c += nx;
        let y = span(c, ny)?;
        c += ny;
        let uu = span(c, nu)?;
        c += nu;
        let du = span(c, nu)?;
        c += nu;
        let feasible = match &rec[c + 1] {
            "1" => true,
            "0" => false,
            other => return Err(HarnessError::Parse(format!("feasible flag {other:?}"))),
        };
        rows.push(CsvRow {
            k: u(0)?,
            mode: u(1)?,
            x,
            xhat,
            y,
            u: uu,
            du,
            delta: f(c)?,
            feasible,
            margin: f(c + 2)?,
        });
    }
    Ok(rows)
}
