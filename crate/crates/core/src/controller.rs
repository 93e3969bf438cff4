//! Online quasi-min-max output-feedback MPC step.
//!
//! Each step minimizes the cost bound `δ` over the first input move, the
//! future-law variables `Y`, `Φ` (with `Ψ = YΦ⁻¹`, `Γ = δΦ⁻¹`), the input
//! bound certificate `S_u` and `δ` itself.
//!
//! The one-step prediction enters the first block affinely in the input move:
//! `x_p = A_s x̂ + B_s(u_prev + Δu) + L(y − C_s x̂)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lmi::{AffineMat, BlockLmi, LmiError, LmiProgram, MatVar, ProgramBuilder, SymVar, VarId};
use crate::matlin::{is_positive_definite, min_eigenvalue, spd_inverse, sym_sqrt, MatError, SymMatrix};
use crate::observer::ObserverDesign;
use crate::plant::{PlantError, PolytopicModel};
use crate::sdp::{solve_min, SdpError, SolveOptions, Status};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("step LMIs infeasible; violated: {}", format_violations(.violated))]
    Infeasible { violated: Vec<(String, f64)> },
    #[error("numerical failure in controller step: {0}")]
    NumericalFailure(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Matrix(#[from] MatError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

fn format_violations(v: &[(String, f64)]) -> String {
    v.iter()
        .map(|(l, m)| format!("{l} ({m:.3e})"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// Cost and constraints in the input increment Δu.
    Proposed,
    /// Cost on the total input u, which replaces Δu as the decision variable.
    Baseline,
}

impl ControllerMode {
    pub fn name(self) -> &'static str {
        match self {
            ControllerMode::Proposed => "proposed",
            ControllerMode::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(ControllerMode::Proposed),
            "baseline" => Ok(ControllerMode::Baseline),
            other => Err(format!("unknown controller mode {other:?} (expected proposed|baseline)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub u_max: DVector<f64>,
    pub eps: f64,
    pub mode: ControllerMode,
    /// Adds `dᵀQd` to the top-left entry of the first block, with `d` the
    /// prediction drift (innovation correction, plus `B_s u_prev` in
    /// Proposed mode). Off by default: with it on, the first block only
    /// bounds `x_pᵀΓx_p` by `δ(1 + dᵀQd)` instead of `δ`.
    pub eta_drift: bool,
}

impl ControllerConfig {
    /// `Q = I`, `R = I`, `ε = 0.001`, `u_max = 1`.
    pub fn standard(nx: usize, nu: usize) -> Self {
        Self {
            q: SymMatrix::identity(nx),
            r: SymMatrix::identity(nu),
            u_max: DVector::from_element(nu, 1.0),
            eps: 1e-3,
            mode: ControllerMode::Proposed,
            eta_drift: false,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if !is_positive_definite(&self.q, 0.0) {
            return Err(ControllerError::InvalidConfig("Q must be positive definite".into()));
        }
        if !is_positive_definite(&self.r, 0.0) {
            return Err(ControllerError::InvalidConfig("R must be positive definite".into()));
        }
        if self.u_max.is_empty() || self.u_max.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
            return Err(ControllerError::InvalidConfig("u_max must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(ControllerError::InvalidConfig("eps must be positive".into()));
        }
        Ok(())
    }

    pub fn check_model(&self, model: &PolytopicModel) -> Result<(), ControllerError> {
        self.validate()?;
        let (nx, nu) = (model.nx(), model.nu());
        if self.q.order() != nx || self.r.order() != nu || self.u_max.len() != nu {
            return Err(ControllerError::InvalidConfig(format!(
                "weights sized Q{} R{} u_max{} for n_x = {nx}, n_u = {nu}",
                self.q.order(),
                self.r.order(),
                self.u_max.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub xhat: DVector<f64>,
    pub y: DVector<f64>,
    /// 1-based mode index.
    pub mode: usize,
    pub u_prev: DVector<f64>,
    pub k: usize,
}

impl StepInput {
    fn check(&self, model: &PolytopicModel) -> Result<(), ControllerError> {
        model.vertex(self.mode)?;
        model.check_state(&self.xhat, "estimate")?;
        model.check_output(&self.y, "output")?;
        model.check_input(&self.u_prev, "previous input")?;
        Ok(())
    }
}

/// Handles to the step program's decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct StepVars {
    /// Δu in Proposed mode, u in Baseline mode.
    pub input: Vec<VarId>,
    pub y: MatVar,
    pub phi: SymVar,
    pub su: SymVar,
    pub delta: VarId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepProgram {
    pub program: LmiProgram,
    pub vars: StepVars,
    /// Prediction at zero decision input.
    pub prediction_offset: DVector<f64>,
    pub mode: ControllerMode,
}

fn check_design(model: &PolytopicModel, design: &ObserverDesign) -> Result<(), ControllerError> {
    if design.gain.shape() != (model.nx(), model.ny()) {
        return Err(ControllerError::InvalidConfig(format!(
            "observer gain is {:?}, model needs ({}, {})",
            design.gain.shape(),
            model.nx(),
            model.ny()
        )));
    }
    Ok(())
}

/// Innovation correction `L(y − C_s x̂)`.
fn innovation_term(model: &PolytopicModel, design: &ObserverDesign, inp: &StepInput) -> Result<DVector<f64>, ControllerError> {
    let v = model.vertex(inp.mode)?;
    Ok(&design.gain * (&inp.y - &v.c * &inp.xhat))
}

/// Assembles the step program; constraints are labeled `Eq45`,
/// `Eq46-vertex{j}`, `Eq47`, `Eq48-input{j}` and `Eq49`.
pub fn build_step_lmis(
    model: &PolytopicModel,
    design: &ObserverDesign,
    cfg: &ControllerConfig,
    inp: &StepInput,
) -> Result<StepProgram, ControllerError> {
    cfg.check_model(model)?;
    check_design(model, design)?;
    inp.check(model)?;
    let (nx, nu) = (model.nx(), model.nu());
    let vs = model.vertex(inp.mode)?;
    let proposed = cfg.mode == ControllerMode::Proposed;

    let mut b = ProgramBuilder::new();
    let owner = if proposed { "du" } else { "u" };
    let input: Vec<VarId> = (0..nu).map(|_| b.scalar(owner)).collect();
    let y = b.matrix("Y", nu, nx);
    let phi = b.sym_matrix("Phi", nx);
    let su = b.sym_matrix("Su", nu);
    let delta = b.scalar("delta");
    b.set_objective(delta, 1.0);

    let innov = innovation_term(model, design, inp)?;
    let drift = if proposed { &innov + &vs.b * &inp.u_prev } else { innov.clone() };
    let offset = if proposed {
        &vs.a * &inp.xhat + &vs.b * &inp.u_prev + &innov
    } else {
        &vs.a * &inp.xhat + &innov
    };
    let eta = if cfg.eta_drift { 1.0 + cfg.q.quad_form(&drift) } else { 1.0 };

    // v: the decision input as an n_u × 1 affine vector.
    let mut v_expr = AffineMat::zeros(nu, 1);
    for (j, &id) in input.iter().enumerate() {
        let mut e = DMatrix::zeros(nu, 1);
        e[j] = 1.0;
        v_expr = v_expr.add(&AffineMat::term(id, e))?;
    }
    let xp_expr = AffineMat::constant(DMatrix::from_column_slice(nx, 1, offset.as_slice()))
        .add(&v_expr.left_mul(&vs.b)?)?;

    let ia = DMatrix::identity(nx, nx) + &vs.a;
    let theta = SymMatrix::symmetrize(ia.transpose() * cfg.q.as_matrix() * &ia)?;
    let beta = SymMatrix::symmetrize(vs.b.transpose() * cfg.q.as_matrix() * &vs.b + cfg.r.as_matrix())?;
    let theta_half = sym_sqrt(&theta)?;
    let beta_half = sym_sqrt(&beta)?;
    let q_half = sym_sqrt(&cfg.q)?;
    let r_half = sym_sqrt(&cfg.r)?;

    let phi_e = phi.expr();
    let y_e = y.expr();
    let delta_x = AffineMat::scalar_identity(delta, nx);
    let delta_u = AffineMat::scalar_identity(delta, nu);

    let mut e45 = BlockLmi::new(&[1, nx, nx, nu]);
    e45.set(0, 0, AffineMat::constant(DMatrix::from_element(1, 1, eta)))?
        .set(1, 0, xp_expr)?
        .set(1, 1, phi_e.clone())?
        .set(2, 0, AffineMat::constant(DMatrix::from_column_slice(nx, 1, (theta_half.as_matrix() * &inp.xhat).as_slice())))?
        .set(2, 2, delta_x.clone())?
        .set(3, 0, v_expr.left_mul(beta_half.as_matrix())?)?
        .set(3, 3, delta_u.clone())?;
    b.push(e45.build("Eq45")?);

    for (j, vj) in model.vertices().iter().enumerate() {
        let s_j = phi_e.left_mul(&vj.a)?.add(&y_e.left_mul(&vj.b)?)?;
        let mut e46 = BlockLmi::new(&[nx, nx, nx, nu]);
        e46.set(0, 0, phi_e.clone())?
            .set(1, 0, s_j)?
            .set(1, 1, phi_e.clone())?
            .set(2, 0, phi_e.left_mul(q_half.as_matrix())?)?
            .set(2, 2, delta_x.clone())?
            .set(3, 0, y_e.left_mul(r_half.as_matrix())?)?
            .set(3, 3, delta_u.clone())?;
        b.push(e46.build(format!("Eq46-vertex{}", j + 1))?);
    }

    let mut e47 = BlockLmi::new(&[nx]);
    e47.set(0, 0, delta_x.sub(&phi_e.scale(cfg.eps))?)?;
    b.push(e47.build("Eq47")?);

    for j in 0..nu {
        let mut row = DMatrix::zeros(1, nu);
        row[j] = 1.0;
        let mut u_j = v_expr.left_mul(&row)?;
        if proposed {
            u_j = u_j.add(&AffineMat::constant(DMatrix::from_element(1, 1, inp.u_prev[j])))?;
        }
        let bound = AffineMat::constant(DMatrix::from_element(1, 1, cfg.u_max[j]));
        let mut e48 = BlockLmi::new(&[1, 1]);
        e48.set(0, 0, bound.clone())?.set(1, 0, u_j)?.set(1, 1, bound)?;
        b.push(e48.build(format!("Eq48-input{}", j + 1))?);
    }

    let mut e49 = BlockLmi::new(&[nu, nx]);
    e49.set(0, 0, su.expr())?
        .set(1, 0, y_e.transpose())?
        .set(1, 1, phi_e)?;
    b.push(e49.build("Eq49")?);
    for j in 0..nu {
        b.bound(su.id(j, j), None, Some(cfg.u_max[j] * cfg.u_max[j]));
    }

    Ok(StepProgram {
        program: b.build()?,
        vars: StepVars {
            input,
            y,
            phi,
            su,
            delta,
        },
        prediction_offset: offset,
        mode: cfg.mode,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStep {
    pub du: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DMatrix<f64>,
    pub phi: SymMatrix,
    pub su: SymMatrix,
    pub delta: f64,
    pub psi: DMatrix<f64>,
    pub gamma: SymMatrix,
    /// Certified margin of the (preconditioned) step program.
    pub margin: f64,
    pub status: Status,
    pub cond_phi: f64,
    pub iterations: usize,
}

/// Condition number of `Φ` above which a step is flagged.
pub const COND_PHI_LIMIT: f64 = 1e10;

impl ControllerStep {
    pub fn ill_conditioned(&self) -> bool {
        !(self.cond_phi <= COND_PHI_LIMIT)
    }
}

const SIGMA_FLOOR: f64 = 1e-24;

/// State-size scale used to precondition the step program.
fn step_scale(inp: &StepInput, offset: &DVector<f64>) -> f64 {
    (inp.xhat.norm_squared() + offset.norm_squared()).max(SIGMA_FLOOR)
}

/// Substitutes `Φ = σΦ'`, `Y = σY'`, `δ = σδ'`, `Δu = √σ Δu'` and applies
/// matching diagonal congruences so every block is O(1) regardless of the
/// state magnitude. Feasibility and the minimizer are unchanged.
fn precondition(sp: &StepProgram, sigma: f64, nx: usize, nu: usize) -> Result<(LmiProgram, Vec<f64>), ControllerError> {
    let p = &sp.program;
    let root = sigma.sqrt();
    let mut var_scale = vec![1.0; p.num_vars()];
    for &id in &sp.vars.input {
        var_scale[id] = root;
    }
    for &id in sp.vars.y.ids().iter().chain(sp.vars.phi.ids()) {
        var_scale[id] = sigma;
    }
    var_scale[sp.vars.delta] = sigma;

    let inv_root = 1.0 / root;
    let congruence: Vec<Option<Vec<f64>>> = p
        .constraints()
        .iter()
        .map(|c| {
            let label = c.label();
            if label == "Eq45" {
                let mut d = vec![inv_root; c.order()];
                d[0] = 1.0;
                Some(d)
            } else if label.starts_with("Eq46") || label == "Eq47" {
                Some(vec![inv_root; c.order()])
            } else if label == "Eq49" {
                let mut d = vec![1.0; nu];
                d.extend(std::iter::repeat_n(inv_root, nx));
                Some(d)
            } else {
                None
            }
        })
        .collect();
    Ok((p.rescale(&var_scale, 1.0 / sigma, &congruence)?, var_scale))
}

/// Solves one step. In Proposed mode the first step (`k = 0`) pins `Δu = 0`
/// so the recorded initial input is exactly zero.
pub fn mpc_step(
    model: &PolytopicModel,
    design: &ObserverDesign,
    cfg: &ControllerConfig,
    inp: &StepInput,
    opts: &SolveOptions,
) -> Result<ControllerStep, ControllerError> {
    let sp = build_step_lmis(model, design, cfg, inp)?;
    let (nx, nu) = (model.nx(), model.nu());
    let sigma = step_scale(inp, &sp.prediction_offset);
    let (scaled, var_scale) = precondition(&sp, sigma, nx, nu)?;

    let pinned = cfg.mode == ControllerMode::Proposed && inp.k == 0;
    let (reduced, keep) = if pinned {
        let fixed: Vec<(VarId, f64)> = sp.vars.input.iter().map(|&id| (id, 0.0)).collect();
        scaled.fix_variables(&fixed)?
    } else {
        let n = scaled.num_vars();
        (scaled, (0..n).collect())
    };

    let sol = solve_min(&reduced, opts)?;
    let mut z = vec![0.0; sp.program.num_vars()];
    for (k, &id) in keep.iter().enumerate() {
        z[id] = sol.z[k] * var_scale[id];
    }
    match sol.status {
        Status::Optimal | Status::Feasible => {}
        Status::Infeasible => {
            let mut violated: Vec<(String, f64)> = sp
                .program
                .constraint_margins(&z)?
                .into_iter()
                .filter(|(_, m)| *m <= 0.0)
                .collect();
            if violated.is_empty() {
                violated.push(("(margin below tolerance)".into(), sol.margin));
            }
            return Err(ControllerError::Infeasible { violated });
        }
        other => {
            return Err(ControllerError::NumericalFailure(format!(
                "solver status {other:?} at margin {:.3e}",
                sol.margin
            )))
        }
    }

    let input = DVector::from_iterator(nu, sp.vars.input.iter().map(|&id| z[id]));
    let (du, u) = match cfg.mode {
        ControllerMode::Proposed => (input.clone(), &inp.u_prev + &input),
        ControllerMode::Baseline => (&input - &inp.u_prev, input),
    };
    let phi = sp.vars.phi.value(&z);
    let y = sp.vars.y.value(&z);
    let delta = z[sp.vars.delta];
    let (phi_inv, cond_phi) = spd_inverse(&phi)?;
    let psi = &y * phi_inv.as_matrix();
    let gamma = phi_inv.scale(delta);
    Ok(ControllerStep {
        du,
        u,
        y,
        phi,
        su: sp.vars.su.value(&z),
        delta,
        psi,
        gamma,
        margin: sol.margin,
        status: sol.status,
        cond_phi,
        iterations: sol.iterations,
    })
}

/// `A_s x̂ + B_s(u_prev + Δu) + L(y − C_s x̂)`.
pub fn predict_next(
    model: &PolytopicModel,
    design: &ObserverDesign,
    inp: &StepInput,
    du: &DVector<f64>,
) -> Result<DVector<f64>, ControllerError> {
    inp.check(model)?;
    check_design(model, design)?;
    model.check_input(du, "input increment")?;
    let v = model.vertex(inp.mode)?;
    let innov = innovation_term(model, design, inp)?;
    Ok(&v.a * &inp.xhat + &v.b * (&inp.u_prev + du) + innov)
}

/// The hypothetical future law `Ψ x_p`.
pub fn future_input(step: &ControllerStep, x_p: &DVector<f64>) -> DVector<f64> {
    &step.psi * x_p
}

/// `x_pᵀΓx_p`.
pub fn ellipsoid_value(step: &ControllerStep, x_p: &DVector<f64>) -> f64 {
    step.gamma.quad_form(x_p)
}

/// `Γ − Q − ΨᵀRΨ − (A_j + B_jΨ)ᵀΓ(A_j + B_jΨ)` at one vertex.
pub fn contraction_matrix(
    model: &PolytopicModel,
    cfg: &ControllerConfig,
    step: &ControllerStep,
    mode: usize,
) -> Result<SymMatrix, ControllerError> {
    let v = model.vertex(mode)?;
    let cl = &v.a + &v.b * &step.psi;
    let g = step.gamma.as_matrix();
    let m = g
        - cfg.q.as_matrix()
        - step.psi.transpose() * cfg.r.as_matrix() * &step.psi
        - cl.transpose() * g * &cl;
    Ok(SymMatrix::symmetrize(m)?)
}

/// Smallest eigenvalue of the contraction matrix over all vertices.
pub fn contraction_margin(
    model: &PolytopicModel,
    cfg: &ControllerConfig,
    step: &ControllerStep,
) -> Result<f64, ControllerError> {
    let mut margin = f64::INFINITY;
    for mode in 1..=model.num_vertices() {
        margin = margin.min(min_eigenvalue(&contraction_matrix(model, cfg, step, mode)?));
    }
    Ok(margin)
}

/// Slack of the future-law bound `u_max_j² − (YΦ⁻¹Yᵀ)_jj`, minimized over inputs.
pub fn future_input_slack(cfg: &ControllerConfig, step: &ControllerStep) -> Result<f64, ControllerError> {
    let (phi_inv, _) = spd_inverse(&step.phi)?;
    let m = &step.y * phi_inv.as_matrix() * step.y.transpose();
    Ok((0..cfg.u_max.len())
        .map(|j| cfg.u_max[j] * cfg.u_max[j] - m[(j, j)])
        .fold(f64::INFINITY, f64::min))
}

/// Feasibility margin of the step-`k+1` program at the best candidate carried
/// forward from step `k`. The candidate applies `u(k+1) = Ψ(k) x_p(k+1|k)` and
/// keeps `Γ` and `Ψ`: `(Y, Φ, δ)` are scaled by a common factor `c > 0` and
/// `S_u` sits midway between `c·YΦ⁻¹Yᵀ` and the input bound. `c` is chosen to
/// maximize the margin.
pub fn recursive_candidate_margin(
    model: &PolytopicModel,
    design: &ObserverDesign,
    cfg: &ControllerConfig,
    prev_inp: &StepInput,
    prev: &ControllerStep,
    next_inp: &StepInput,
) -> Result<f64, ControllerError> {
    Ok(recursive_candidate(model, design, cfg, prev_inp, prev, next_inp)?
        .margins
        .into_iter()
        .map(|(_, m)| m)
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveCandidate {
    pub scale: f64,
    pub margins: Vec<(String, f64)>,
}

/// The carried-forward candidate of [`recursive_candidate_margin`] with
/// per-constraint margins.
pub fn recursive_candidate(
    model: &PolytopicModel,
    design: &ObserverDesign,
    cfg: &ControllerConfig,
    prev_inp: &StepInput,
    prev: &ControllerStep,
    next_inp: &StepInput,
) -> Result<RecursiveCandidate, ControllerError> {
    let x_p = predict_next(model, design, prev_inp, &prev.du)?;
    let u_next = future_input(prev, &x_p);
    let sp = build_step_lmis(model, design, cfg, next_inp)?;
    let input = match cfg.mode {
        ControllerMode::Proposed => &u_next - &next_inp.u_prev,
        ControllerMode::Baseline => u_next,
    };
    let (phi_inv, _) = spd_inverse(&prev.phi)?;
    let m = &prev.y * phi_inv.as_matrix() * prev.y.transpose();
    let (nu, nx) = sp.vars.y.shape();

    let point = |c: f64| {
        let mut z = vec![0.0; sp.program.num_vars()];
        for (j, &id) in sp.vars.input.iter().enumerate() {
            z[id] = input[j];
        }
        for i in 0..nu {
            for j in 0..nx {
                z[sp.vars.y.id(i, j)] = c * prev.y[(i, j)];
            }
        }
        for i in 0..nx {
            for j in i..nx {
                z[sp.vars.phi.id(i, j)] = c * prev.phi[(i, j)];
            }
        }
        let tau = 0.5
            * (0..nu)
                .map(|j| cfg.u_max[j] * cfg.u_max[j] - c * m[(j, j)])
                .fold(f64::INFINITY, f64::min);
        for i in 0..nu {
            for j in i..nu {
                z[sp.vars.su.id(i, j)] = c * m[(i, j)] + if i == j { tau } else { 0.0 };
            }
        }
        z[sp.vars.delta] = c * prev.delta;
        z
    };
    let margin = |log_c: f64| -> Result<f64, ControllerError> { Ok(sp.program.feasibility_margin(&point(log_c.exp()))?) };

    // Coarse scan over c ∈ [1e-3, 1e3], then golden section around the best point.
    let grid: Vec<f64> = (0..=120).map(|i| (-3.0 + 6.0 * i as f64 / 120.0) * std::f64::consts::LN_10).collect();
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &g in &grid {
        let v = margin(g)?;
        if v > best.1 {
            best = (g, v);
        }
    }
    let h = 0.05 * std::f64::consts::LN_10;
    let (mut lo, mut hi) = (best.0 - h, best.0 + h);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if margin(a)? >= margin(b)? {
            hi = b;
        } else {
            lo = a;
        }
    }
    let mid = 0.5 * (lo + hi);
    let log_c = if margin(mid)? >= best.1 { mid } else { best.0 };
    let c = log_c.exp();
    Ok(RecursiveCandidate {
        scale: c,
        margins: sp.program.constraint_margins(&point(c))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::ObserverSpec;
    use crate::oracle::reference_margin;
    use crate::plant::example_model;

    fn example_design() -> ObserverDesign {
        ObserverDesign {
            gain: DMatrix::from_row_slice(2, 1, &[0.4631, -1.4336]),
            p: SymMatrix::identity(2),
            spec: ObserverSpec::standard(2),
        }
    }

    fn example_input(k: usize) -> StepInput {
        let x0 = DVector::from_vec(vec![-1.5, -0.2]);
        let model = example_model();
        StepInput {
            xhat: DVector::from_vec(vec![0.5, 1.0]),
            y: crate::plant::output(&model, 1, &x0).unwrap(),
            mode: 1,
            u_prev: DVector::zeros(1),
            k,
        }
    }

    fn rest_input(k: usize) -> StepInput {
        StepInput {
            xhat: DVector::zeros(2),
            y: DVector::zeros(1),
            mode: 1,
            u_prev: DVector::zeros(1),
            k,
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ControllerConfig::standard(2, 1);
        assert!(cfg.check_model(&example_model()).is_ok());
        cfg.eps = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ControllerConfig::standard(2, 1);
        cfg.u_max[0] = -1.0;
        assert!(cfg.validate().is_err());
        let cfg = ControllerConfig::standard(3, 1);
        assert!(cfg.check_model(&example_model()).is_err());
    }

    #[test]
    fn example_step_program_shape() {
        let sp = build_step_lmis(
            &example_model(),
            &example_design(),
            &ControllerConfig::standard(2, 1),
            &example_input(0),
        )
        .unwrap();
        assert_eq!(sp.program.num_vars(), 8);
        let labels: Vec<&str> = sp.program.constraints().iter().map(|c| c.label()).collect();
        assert_eq!(
            labels,
            ["Eq45", "Eq46-vertex1", "Eq46-vertex2", "Eq46-vertex3", "Eq47", "Eq48-input1", "Eq49"]
        );
        let orders: Vec<usize> = sp.program.constraints().iter().map(|c| c.order()).collect();
        assert_eq!(orders, [6, 7, 7, 7, 2, 2, 3]);
    }

    #[test]
    fn rest_point_is_strictly_feasible() {
        let model = example_model();
        let cfg = ControllerConfig::standard(2, 1);
        let sp = build_step_lmis(&model, &example_design(), &cfg, &rest_input(0)).unwrap();
        // Φ = I is not admissible here (Φ − A₃ΦA₃ᵀ is indefinite); Φ = diag(0.5, 1)
        // satisfies Φ − A_jΦA_jᵀ ≻ 0 at every vertex, and a generous δ covers the rest.
        let mut z = vec![0.0; 8];
        z[sp.vars.phi.id(0, 0)] = 0.5;
        z[sp.vars.phi.id(1, 1)] = 1.0;
        z[sp.vars.su.id(0, 0)] = 0.5;
        z[sp.vars.delta] = 100.0;
        let m = sp.program.feasibility_margin(&z).unwrap();
        assert!(m > 0.0, "{m}");
        assert!(reference_margin(&sp.program, &z) > 0.0);
    }

    #[test]
    fn input_at_bound_leaves_zero_margin() {
        let model = example_model();
        let cfg = ControllerConfig::standard(2, 1);
        let mut inp = rest_input(3);
        inp.u_prev[0] = 1.0;
        let sp = build_step_lmis(&model, &example_design(), &cfg, &inp).unwrap();
        let z = vec![0.0; 8];
        let e48 = sp.program.eval_constraint(5, &z).unwrap();
        assert_eq!(sp.program.constraints()[5].label(), "Eq48-input1");
        assert!(min_eigenvalue(&e48).abs() < 1e-15);
    }

    #[test]
    fn example_first_step() {
        let model = example_model();
        let design = example_design();
        let cfg = ControllerConfig::standard(2, 1);
        let inp = example_input(0);
        let step = mpc_step(&model, &design, &cfg, &inp, &SolveOptions::default()).unwrap();
        assert!(step.status.is_certified());
        assert_eq!(step.u[0], 0.0);
        assert_eq!(step.du[0], 0.0);
        assert!(step.delta.is_finite() && step.delta > 0.0);
        assert!(step.margin > 0.0);

        let sp = build_step_lmis(&model, &design, &cfg, &inp).unwrap();
        let mut z = vec![0.0; 8];
        for i in 0..1 {
            for j in 0..2 {
                z[sp.vars.y.id(i, j)] = step.y[(i, j)];
            }
        }
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            z[sp.vars.phi.id(i, j)] = step.phi[(i, j)];
        }
        z[sp.vars.su.id(0, 0)] = step.su[(0, 0)];
        z[sp.vars.delta] = step.delta;
        for (label, m) in sp.program.constraint_margins(&z).unwrap() {
            assert!(m > 0.0, "{label}: {m}");
        }
        assert!(reference_margin(&sp.program, &z) > 0.0);

        let x_p = predict_next(&model, &design, &inp, &step.du).unwrap();
        assert!(ellipsoid_value(&step, &x_p) < step.delta);
        assert!(contraction_margin(&model, &cfg, &step).unwrap() > 0.0);
        assert!(future_input_slack(&cfg, &step).unwrap() > 0.0);
    }

    #[test]
    fn later_step_moves_input() {
        let model = example_model();
        let design = example_design();
        let cfg = ControllerConfig::standard(2, 1);
        let step = mpc_step(&model, &design, &cfg, &example_input(1), &SolveOptions::default()).unwrap();
        assert!(step.u[0].abs() < 1.0);
        assert!(step.du[0] != 0.0);
        let x_p = predict_next(&model, &design, &example_input(1), &step.du).unwrap();
        assert!(ellipsoid_value(&step, &x_p) < step.delta);
        assert!(contraction_margin(&model, &cfg, &step).unwrap() > 0.0);
    }

    #[test]
    fn rest_returns_zero_input_in_both_modes() {
        let model = example_model();
        let design = example_design();
        for mode in [ControllerMode::Proposed, ControllerMode::Baseline] {
            let cfg = ControllerConfig {
                mode,
                ..ControllerConfig::standard(2, 1)
            };
            let step = mpc_step(&model, &design, &cfg, &rest_input(0), &SolveOptions::default()).unwrap();
            assert_eq!(step.u[0], 0.0, "{mode:?}");
        }
    }

    #[test]
    fn step_is_deterministic() {
        let model = example_model();
        let design = example_design();
        let cfg = ControllerConfig::standard(2, 1);
        let a = mpc_step(&model, &design, &cfg, &example_input(2), &SolveOptions::default()).unwrap();
        let b = mpc_step(&model, &design, &cfg, &example_input(2), &SolveOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prediction_matches_observer_update() {
        let model = example_model();
        let design = example_design();
        let inp = StepInput {
            xhat: DVector::from_vec(vec![0.2, -0.4]),
            y: DVector::from_element(1, 0.3),
            mode: 2,
            u_prev: DVector::from_element(1, 0.1),
            k: 5,
        };
        let du = DVector::from_element(1, -0.05);
        let p = predict_next(&model, &design, &inp, &du).unwrap();
        let o = crate::observer::step(&design, &model, 2, &inp.xhat, &(&inp.u_prev + &du), &inp.y).unwrap();
        assert_eq!(p, o);
    }

    #[test]
    fn future_input_is_bilinear() {
        let mut step = mpc_step(
            &example_model(),
            &example_design(),
            &ControllerConfig::standard(2, 1),
            &example_input(1),
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(future_input(&step, &DVector::zeros(2)), DVector::zeros(1));
        let x = DVector::from_vec(vec![0.3, -0.8]);
        let base = future_input(&step, &x);
        step.psi *= 4.0;
        let scaled = future_input(&step, &(x / 4.0));
        assert!((base[0] - scaled[0]).abs() < 1e-14);
    }

    #[test]
    fn future_loop_contracts_at_every_vertex() {
        let model = example_model();
        let cfg = ControllerConfig::standard(2, 1);
        let inp = example_input(1);
        let step = mpc_step(&model, &example_design(), &cfg, &inp, &SolveOptions::default()).unwrap();
        let x_p = predict_next(&model, &example_design(), &inp, &step.du).unwrap();
        for v in model.vertices() {
            let cl = &v.a + &v.b * &step.psi;
            let mut x = x_p.clone();
            let mut value = ellipsoid_value(&step, &x);
            for _ in 0..50 {
                x = &cl * &x;
                let next = ellipsoid_value(&step, &x);
                assert!(next < value || value == 0.0);
                value = next;
            }
        }
    }
}
