//! Log-det barrier solver for [`LmiProgram`]s.
//!
//! Phase 1 maximizes a common slack `s` with `F_k(z) − s·I ≻ 0` to find a
//! strictly interior point; phase 2 follows the central path of
//! `t·cᵀz − Σ log det F_k(z)` with damped Newton steps, shrinking the barrier
//! weight `1/t` by `barrier_shrink` per outer iteration. Scalar bounds enter
//! as 1×1 blocks.
//!
//! The solver is deterministic: no randomization, fixed evaluation order.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::lmi::LmiProgram;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("invalid solver options: {0}")]
    InvalidOptions(&'static str),
    #[error("program has an all-zero objective")]
    ZeroObjective,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Required strict-feasibility margin on every block.
    pub feas_margin: f64,
    /// Relative objective tolerance (absolute when `|objective| < 1`).
    pub obj_tol: f64,
    /// Cap on outer barrier iterations per phase.
    pub max_iters: usize,
    /// Factor applied to the barrier weight after each centering, in (0, 1).
    pub barrier_shrink: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            feas_margin: 1e-9,
            obj_tol: 1e-6,
            max_iters: 200,
            barrier_shrink: 0.5,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), SdpError> {
        if !(self.feas_margin > 0.0) {
            return Err(SdpError::InvalidOptions("feas_margin must be positive"));
        }
        if !(self.obj_tol > 0.0) {
            return Err(SdpError::InvalidOptions("obj_tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(SdpError::InvalidOptions("max_iters must be positive"));
        }
        if !(self.barrier_shrink > 0.0 && self.barrier_shrink < 1.0) {
            return Err(SdpError::InvalidOptions("barrier_shrink must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Feasible,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl Status {
    /// Optimal or Feasible: the returned point carries a certified margin.
    pub fn is_certified(self) -> bool {
        matches!(self, Status::Optimal | Status::Feasible)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub z: Vec<f64>,
    pub objective: f64,
    /// Smallest block eigenvalue at `z` (the best achieved slack when infeasible).
    pub margin: f64,
    /// Total Newton steps over both phases.
    pub iterations: usize,
}

/// One line of the optional iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub phase: u8,
    pub iteration: usize,
    /// Barrier weight `1/t`.
    pub barrier: f64,
    pub margin: f64,
    pub objective: f64,
}

impl std::fmt::Display for IterRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "phase {} iter {:4} mu {:.3e} margin {:+.6e} obj {:+.12e}",
            self.phase, self.iteration, self.barrier, self.margin, self.objective
        )
    }
}

pub type IterSink<'a> = &'a mut dyn FnMut(&IterRecord);

/// Finds a strictly feasible point with margin `≥ feas_margin`.
pub fn solve_feasible(program: &LmiProgram, opts: &SolveOptions) -> Result<Solution, SdpError> {
    solve_feasible_logged(program, opts, &mut |_| {})
}

pub fn solve_feasible_logged(
    program: &LmiProgram,
    opts: &SolveOptions,
    log: IterSink<'_>,
) -> Result<Solution, SdpError> {
    opts.validate()?;
    let mut ctx = Ctx::new(program, opts, log);
    let p1 = ctx.phase1(false);
    Ok(ctx.finish_phase1(program, p1))
}

/// Minimizes the program's linear objective.
pub fn solve_min(program: &LmiProgram, opts: &SolveOptions) -> Result<Solution, SdpError> {
    solve_min_logged(program, opts, &mut |_| {})
}

pub fn solve_min_logged(
    program: &LmiProgram,
    opts: &SolveOptions,
    log: IterSink<'_>,
) -> Result<Solution, SdpError> {
    opts.validate()?;
    if program.objective().iter().all(|&c| c == 0.0) {
        return Err(SdpError::ZeroObjective);
    }
    let mut ctx = Ctx::new(program, opts, log);
    let p1 = ctx.phase1(true);
    let start = match p1 {
        Phase1::Feasible(z) => z,
        other => return Ok(ctx.finish_phase1(program, other)),
    };
    Ok(ctx.phase2(program, start))
}

/// One constraint block `G(w) = G₀ + Σ wᵢ Gᵢ` over the solver's variable vector.
#[derive(Debug, Clone)]
struct Block {
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl Block {
    fn order(&self) -> usize {
        self.constant.nrows()
    }

    fn eval(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut g = self.constant.clone();
        for (i, m) in &self.terms {
            g += m * w[*i];
        }
        g
    }
}

fn lower_blocks(program: &LmiProgram) -> Vec<Block> {
    let mut blocks = Vec::new();
    for c in program.constraints() {
        blocks.push(Block {
            constant: c.constant().as_matrix().clone(),
            terms: c.terms().map(|(id, m)| (id, m.as_matrix().clone())).collect(),
        });
    }
    for (id, b) in program.bounds().iter().enumerate() {
        if let Some(lo) = b.lower {
            blocks.push(Block {
                constant: DMatrix::from_element(1, 1, -lo),
                terms: vec![(id, DMatrix::from_element(1, 1, 1.0))],
            });
        }
        if let Some(hi) = b.upper {
            blocks.push(Block {
                constant: DMatrix::from_element(1, 1, hi),
                terms: vec![(id, DMatrix::from_element(1, 1, -1.0))],
            });
        }
    }
    blocks
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Barrier objective `t·cᵀw − Σ log det G_k(w)` with derivatives.
struct Barrier<'b> {
    blocks: &'b [Block],
    cost: DVector<f64>,
    nvar: usize,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Barrier<'_> {
    fn value(&self, w: &DVector<f64>, t: f64) -> Option<f64> {
        let mut v = t * self.cost.dot(w);
        for b in self.blocks {
            let chol = Cholesky::new(b.eval(w))?;
            v -= log_det(&chol);
        }
        v.is_finite().then_some(v)
    }

    fn eval(&self, w: &DVector<f64>, t: f64) -> Option<Eval> {
        let mut value = t * self.cost.dot(w);
        let mut grad = &self.cost * t;
        let mut hess = DMatrix::zeros(self.nvar, self.nvar);
        for b in self.blocks {
            let chol = Cholesky::new(b.eval(w))?;
            value -= log_det(&chol);
            let ginv = chol.inverse();
            let ms: Vec<(usize, DMatrix<f64>)> =
                b.terms.iter().map(|(i, f)| (*i, &ginv * f)).collect();
            for (a, (i, mi)) in ms.iter().enumerate() {
                grad[*i] -= mi.trace();
                for (j, mj) in ms.iter().skip(a) {
                    // tr(Mi Mj) = Σ Mi[r,c] Mj[c,r]
                    let h = mi.component_mul(&mj.transpose()).sum();
                    hess[(*i, *j)] += h;
                    if i != j {
                        hess[(*j, *i)] += h;
                    }
                }
            }
        }
        value.is_finite().then_some(Eval { value, grad, hess })
    }

    fn margin(&self, w: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| min_eig(&b.eval(w)))
            .fold(f64::INFINITY, f64::min)
    }
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

enum Centering {
    Centered,
    /// Early exit requested by the caller's predicate.
    Stopped,
    Stalled,
    Diverged,
}

enum Phase1 {
    Feasible(DVector<f64>),
    Infeasible(DVector<f64>),
    Failure(DVector<f64>),
}

const NEWTON_TOL: f64 = 1e-10;
const MAX_NEWTON_PER_CENTER: usize = 100;
const STALL_LIMIT: usize = 20;
const DIVERGENCE_RADIUS: f64 = 1e12;
/// Phase 1 stops once the slack reaches this value even if it could grow further.
const SLACK_CAP: f64 = 1e3;
const PHASE1_RADII: [f64; 3] = [1e4, 1e8, 1e12];

struct Ctx<'a, 'l> {
    opts: &'a SolveOptions,
    log: IterSink<'l>,
    blocks: Vec<Block>,
    nvar: usize,
    newton_steps: usize,
}

impl<'a, 'l> Ctx<'a, 'l> {
    fn new(program: &LmiProgram, opts: &'a SolveOptions, log: IterSink<'l>) -> Self {
        Self {
            opts,
            log,
            blocks: lower_blocks(program),
            nvar: program.num_vars(),
            newton_steps: 0,
        }
    }

    fn total_order(&self) -> f64 {
        self.blocks.iter().map(Block::order).sum::<usize>() as f64
    }

    /// Damped Newton minimization of the barrier at weight `t`.
    fn center(
        &mut self,
        barrier: &Barrier<'_>,
        w: &mut DVector<f64>,
        t: f64,
        stop: &dyn Fn(&DVector<f64>) -> bool,
    ) -> Centering {
        let mut stalled = 0usize;
        for _ in 0..MAX_NEWTON_PER_CENTER {
            if stop(w) {
                return Centering::Stopped;
            }
            let Some(ev) = barrier.eval(w, t) else {
                return Centering::Stalled;
            };
            let Some(step) = newton_direction(&ev) else {
                return Centering::Stalled;
            };
            let decrement = -ev.grad.dot(&step);
            if decrement.is_nan() {
                return Centering::Stalled;
            }
            if decrement * 0.5 <= NEWTON_TOL {
                return Centering::Centered;
            }
            self.newton_steps += 1;

            let slope = ev.grad.dot(&step);
            // Damped phase: a step of local norm below one stays inside the domain.
            let lambda = decrement.sqrt();
            let mut alpha = if lambda > 0.25 { 1.0 / (1.0 + lambda) } else { 1.0 };
            let mut accepted = None;
            while alpha > 1e-14 {
                let cand = &*w + &step * alpha;
                if let Some(v) = barrier.value(&cand, t) {
                    if v <= ev.value + 0.01 * alpha * slope {
                        accepted = Some((cand, v));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((cand, v)) => {
                    let progress = ev.value - v;
                    *w = cand;
                    if progress <= 1e-14 * (1.0 + ev.value.abs()) {
                        stalled += 1;
                    } else {
                        stalled = 0;
                    }
                }
                None => stalled += 1,
            }
            if stalled >= STALL_LIMIT {
                return Centering::Stalled;
            }
            if w.amax() > DIVERGENCE_RADIUS {
                return Centering::Diverged;
            }
        }
        // Out of Newton steps: accept the current point as approximately centered.
        Centering::Centered
    }

    /// Maximizes the common slack. With `for_phase2`, stops once the slack is
    /// within a factor of two of its upper bound so phase 2 starts well inside.
    /// Phase 1 inside growing boxes `|zᵢ| ≤ R`: the box keeps the barrier
    /// bounded below when the feasible set is unbounded, and a verdict of
    /// infeasibility is only accepted once the box is no longer active.
    fn phase1(&mut self, for_phase2: bool) -> Phase1 {
        let last = PHASE1_RADII.len() - 1;
        for (i, &radius) in PHASE1_RADII.iter().enumerate() {
            let out = self.phase1_boxed(for_phase2, radius);
            let box_active = |z: &DVector<f64>| z.amax() >= 0.5 * radius;
            match &out {
                Phase1::Infeasible(z) | Phase1::Failure(z) if i < last && box_active(z) => continue,
                _ => return out,
            }
        }
        unreachable!("last radius always returns")
    }

    fn phase1_boxed(&mut self, for_phase2: bool, radius: f64) -> Phase1 {
        let n = self.nvar;
        let s_idx = n;
        let mut blocks = self.blocks.clone();
        for b in &mut blocks {
            let k = b.order();
            b.terms.push((s_idx, -DMatrix::identity(k, k)));
        }
        for i in 0..n {
            for sign in [1.0, -1.0] {
                blocks.push(Block {
                    constant: DMatrix::from_element(1, 1, radius),
                    terms: vec![(i, DMatrix::from_element(1, 1, sign))],
                });
            }
        }
        let mut cost = DVector::zeros(n + 1);
        cost[s_idx] = -1.0;
        let barrier = Barrier {
            blocks: &blocks,
            cost,
            nvar: n + 1,
        };

        let z0 = DVector::zeros(n);
        let mut w = DVector::zeros(n + 1);
        let m0 = self
            .blocks
            .iter()
            .map(|b| min_eig(&b.eval(&z0)))
            .fold(f64::INFINITY, f64::min);
        w[s_idx] = m0 - 1.0_f64.max(m0.abs());

        let m = self.total_order() + 2.0 * n as f64;
        let feas = self.opts.feas_margin;
        let mut t = 1.0;
        let mut outer = 0usize;
        let split = |w: &DVector<f64>| -> DVector<f64> { w.rows(0, n).into_owned() };

        loop {
            let stop = |w: &DVector<f64>| w[s_idx] >= SLACK_CAP;
            let outcome = self.center(&barrier, &mut w, t, &stop);
            let s = w[s_idx];
            let upper = s + m / t;
            (self.log)(&IterRecord {
                phase: 1,
                iteration: self.newton_steps,
                barrier: 1.0 / t,
                margin: s,
                objective: s,
            });
            match outcome {
                Centering::Stopped => return Phase1::Feasible(split(&w)),
                Centering::Diverged => {
                    return if s >= feas {
                        Phase1::Feasible(split(&w))
                    } else {
                        Phase1::Failure(split(&w))
                    }
                }
                Centering::Stalled => {
                    return if s >= feas {
                        Phase1::Feasible(split(&w))
                    } else if upper < feas {
                        Phase1::Infeasible(split(&w))
                    } else {
                        Phase1::Failure(split(&w))
                    };
                }
                Centering::Centered => {}
            }
            if upper < feas {
                return Phase1::Infeasible(split(&w));
            }
            if s >= feas && (!for_phase2 || s >= 0.5 * upper) {
                return Phase1::Feasible(split(&w));
            }
            if m / t <= 1e-3 * feas {
                // Converged to the maximal slack, which is below the required margin.
                return Phase1::Infeasible(split(&w));
            }
            outer += 1;
            if outer >= self.opts.max_iters {
                return Phase1::Failure(split(&w));
            }
            t /= self.opts.barrier_shrink;
        }
    }

    fn finish_phase1(&mut self, program: &LmiProgram, p1: Phase1) -> Solution {
        let (status, z) = match p1 {
            Phase1::Feasible(z) => (Status::Feasible, z),
            Phase1::Infeasible(z) => (Status::Infeasible, z),
            Phase1::Failure(z) => (Status::NumericalFailure, z),
        };
        let barrier = Barrier {
            blocks: &self.blocks,
            cost: DVector::zeros(self.nvar),
            nvar: self.nvar,
        };
        let margin = barrier.margin(&z);
        let status = match status {
            Status::Feasible if margin < self.opts.feas_margin => Status::NumericalFailure,
            s => s,
        };
        let z: Vec<f64> = z.iter().copied().collect();
        Solution {
            status,
            objective: program.objective_value(&z),
            z,
            margin,
            iterations: self.newton_steps,
        }
    }

    fn phase2(&mut self, program: &LmiProgram, start: DVector<f64>) -> Solution {
        let cost = DVector::from_column_slice(program.objective());
        let blocks = std::mem::take(&mut self.blocks);
        let barrier = Barrier {
            blocks: &blocks,
            cost: cost.clone(),
            nvar: self.nvar,
        };
        let m = self.total_order_of(&blocks);
        let feas = self.opts.feas_margin;
        let obj0 = cost.dot(&start);
        let mut w = start;
        let mut t = initial_weight(&barrier, &w, m);

        let mut best: Option<(DVector<f64>, f64, f64)> = None; // (w, gap, margin)
        let mut status = Status::Feasible;
        let mut outer = 0usize;
        loop {
            let outcome = self.center(&barrier, &mut w, t, &|_| false);
            let obj = cost.dot(&w);
            let margin = barrier.margin(&w);
            let gap = m / t;
            (self.log)(&IterRecord {
                phase: 2,
                iteration: self.newton_steps,
                barrier: 1.0 / t,
                margin,
                objective: obj,
            });
            match outcome {
                Centering::Centered => {}
                Centering::Diverged => {
                    status = if obj < obj0 { Status::Unbounded } else { Status::NumericalFailure };
                    if status == Status::Unbounded || best.is_none() {
                        best = Some((w.clone(), gap, margin));
                    }
                    break;
                }
                Centering::Stalled | Centering::Stopped => {
                    if best.is_none() {
                        status = Status::NumericalFailure;
                        best = Some((w.clone(), gap, margin));
                    }
                    break;
                }
            }
            if margin < feas {
                // Further progress would leave the certified region; keep the last good center.
                if best.is_none() {
                    status = Status::NumericalFailure;
                    best = Some((w.clone(), gap, margin));
                }
                break;
            }
            best = Some((w.clone(), gap, margin));
            if obj < obj0 - 1e6 * (1.0 + obj0.abs()) {
                status = Status::Unbounded;
                break;
            }
            if gap <= self.opts.obj_tol * obj.abs().max(1.0) {
                status = Status::Optimal;
                break;
            }
            outer += 1;
            if outer >= self.opts.max_iters {
                break;
            }
            t /= self.opts.barrier_shrink;
        }
        if let (Status::Feasible, Some((_, gap, _))) = (status, &best) {
            let (w_best, _, _) = best.as_ref().unwrap();
            if *gap <= self.opts.obj_tol * cost.dot(w_best).abs().max(1.0) {
                status = Status::Optimal;
            }
        }
        let (w, _, margin) = best.expect("phase 2 records at least one iterate");
        self.blocks = blocks;
        let z: Vec<f64> = w.iter().copied().collect();
        Solution {
            status,
            objective: program.objective_value(&z),
            z,
            margin,
            iterations: self.newton_steps,
        }
    }

    fn total_order_of(&self, blocks: &[Block]) -> f64 {
        blocks.iter().map(Block::order).sum::<usize>() as f64
    }
}

fn newton_direction(ev: &Eval) -> Option<DVector<f64>> {
    let n = ev.hess.nrows();
    let rhs = -&ev.grad;
    if let Some(chol) = Cholesky::new(ev.hess.clone()) {
        return Some(chol.solve(&rhs));
    }
    // Variables absent from every block leave the Hessian singular.
    let scale = ev.hess.diagonal().amax().max(1.0);
    let mut reg = ev.hess.clone();
    for i in 0..n {
        reg[(i, i)] += 1e-12 * scale;
    }
    Cholesky::new(reg).map(|c| c.solve(&rhs))
}

/// Weight that best centers `w` for the phase-2 barrier, in the Newton metric.
fn initial_weight(barrier: &Barrier<'_>, w: &DVector<f64>, m: f64) -> f64 {
    let fallback = m / barrier.cost.dot(w).abs().max(1.0);
    let Some(ev) = barrier.eval(w, 0.0) else {
        return fallback;
    };
    let Some(chol) = Cholesky::new(ev.hess.clone()) else {
        return fallback;
    };
    let hc = chol.solve(&barrier.cost);
    let denom = barrier.cost.dot(&hc);
    let t = -ev.grad.dot(&hc) / denom;
    if t.is_finite() && t > 0.0 {
        t.clamp(1e-8, 1e8)
    } else {
        fallback
    }
}
