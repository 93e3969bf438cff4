//! Independent reference computations and the solver self-test batteries.
//!
//! Nothing here shares code with the barrier solver or with nalgebra's
//! eigen-decomposition: eigenvalues come from a cyclic Jacobi sweep and SDP
//! optima from a nested grid-plus-golden-section search.

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lmi::{AffineLmi, LmiProgram, ProgramBuilder};
use crate::matlin::{schur_psd, BlockSym2x2, SymMatrix};
use crate::sdp::{solve_min, SolveOptions, Status};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        let scale: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn jacobi_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    jacobi_eigenvalues(m)[0]
}

/// Smallest eigenvalue over all constraints and bound slacks, via Jacobi.
pub fn reference_margin(program: &LmiProgram, z: &[f64]) -> f64 {
    let mut margin = f64::INFINITY;
    for c in program.constraints() {
        let f = c.eval(z).expect("dimension checked by caller");
        margin = margin.min(jacobi_min_eigenvalue(f.as_matrix()));
    }
    for (i, b) in program.bounds().iter().enumerate() {
        if let Some(lo) = b.lower {
            margin = margin.min(z[i] - lo);
        }
        if let Some(hi) = b.upper {
            margin = margin.min(hi - z[i]);
        }
    }
    margin
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const GRID: usize = 12;
const GOLDEN_TOL: f64 = 1e-8;

/// Brute-force optimum of a box-bounded program with at most three variables.
///
/// Minimizes the exact penalty `cᵀz + M·max(0, −λ_min(F(z)))` by nested
/// coordinate search (coarse grid to bracket, golden section to refine); the
/// penalty is convex, so each nested slice is unimodal. `M` grows until the
/// minimizer is feasible, at which point it is the constrained optimum.
/// Returns `None` if the program has no bounds box or more than three variables.
pub fn brute_force_min(program: &LmiProgram) -> Option<f64> {
    let n = program.num_vars();
    if n == 0 || n > 3 {
        return None;
    }
    let mut boxes = Vec::with_capacity(n);
    for b in program.bounds() {
        boxes.push((b.lower?, b.upper?));
    }
    let c = program.objective();
    let mut weight = 10.0 * (1.0 + c.iter().map(|v| v.abs()).sum::<f64>());
    for _ in 0..8 {
        let penalty = |z: &[f64]| {
            let viol = program
                .constraints()
                .iter()
                .map(|lmi| jacobi_min_eigenvalue(lmi.eval(z).unwrap().as_matrix()))
                .fold(f64::INFINITY, f64::min);
            program.objective_value(z) + weight * (-viol).max(0.0)
        };
        let mut z = vec![0.0; n];
        let (_, zbest) = nested_min(&penalty, &boxes, &mut z, 0);
        let viol = program
            .constraints()
            .iter()
            .map(|lmi| jacobi_min_eigenvalue(lmi.eval(&zbest).unwrap().as_matrix()))
            .fold(f64::INFINITY, f64::min);
        if viol >= -1e-7 {
            return Some(program.objective_value(&zbest));
        }
        weight *= 10.0;
    }
    None
}

fn nested_min(
    f: &dyn Fn(&[f64]) -> f64,
    boxes: &[(f64, f64)],
    z: &mut Vec<f64>,
    level: usize,
) -> (f64, Vec<f64>) {
    if level == boxes.len() {
        return (f(z), z.clone());
    }
    let (lo, hi) = boxes[level];
    let eval = |x: f64, z: &mut Vec<f64>| {
        z[level] = x;
        nested_min(f, boxes, z, level + 1)
    };

    let h = (hi - lo) / GRID as f64;
    let mut best_i = 0;
    let mut best = eval(lo, z);
    for i in 1..=GRID {
        let r = eval(lo + h * i as f64, z);
        if r.0 < best.0 {
            best = r;
            best_i = i;
        }
    }
    let mut a = (lo + h * best_i as f64 - h).max(lo);
    let mut b = (lo + h * best_i as f64 + h).min(hi);
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = eval(x1, z);
    let mut f2 = eval(x2, z);
    while b - a > GOLDEN_TOL {
        if f1.0 <= f2.0 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = eval(x1, z);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = eval(x2, z);
        }
    }
    for cand in [f1, f2] {
        if cand.0 < best.0 {
            best = cand;
        }
    }
    best
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize, range: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-range..range);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Random program: 1–3 variables in the box [−3, 3], 1–2 constraints of order
/// 1–3 with a positive definite constant term (so `z = 0` is interior).
pub fn random_program(rng: &mut ChaCha8Rng) -> LmiProgram {
    let nvars = rng.random_range(1..=3usize);
    let ncons = rng.random_range(1..=2usize);
    let mut b = ProgramBuilder::new();
    let ids: Vec<_> = (0..nvars).map(|i| b.scalar(&format!("z{i}"))).collect();
    for &id in &ids {
        let mut c = 0.0;
        while c == 0.0 {
            c = rng.random_range(-1.0..1.0);
        }
        b.set_objective(id, c);
        b.bound(id, Some(-3.0), Some(3.0));
    }
    for k in 0..ncons {
        let order = rng.random_range(1..=3usize);
        let g = random_sym(rng, order, 1.0);
        let f0 = &g * g.transpose() + DMatrix::identity(order, order) * 0.1;
        let mut lmi = AffineLmi::new(format!("rand{k}"), SymMatrix::symmetrize(f0).unwrap());
        for &id in &ids {
            let fi = SymMatrix::symmetrize(random_sym(rng, order, 1.0)).unwrap();
            lmi.add_term(id, fi).unwrap();
        }
        b.push(lmi);
    }
    b.build().expect("generated program is well-formed")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelftestReport {
    pub cases: Vec<CaseResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.passed)
    }
}

pub const ORACLE_TOL: f64 = 1e-3;
pub const ANALYTIC_TOL: f64 = 1e-4;

/// Solves `program` and compares against `reference`, also re-checking the
/// certificate with the Jacobi eigenvalue path.
fn check_against(
    name: String,
    program: &LmiProgram,
    opts: &SolveOptions,
    reference: f64,
    tol: f64,
) -> CaseResult {
    match solve_min(program, opts) {
        Ok(sol) if sol.status.is_certified() => {
            let margin = reference_margin(program, &sol.z);
            let err = (sol.objective - reference).abs();
            let passed = err <= tol && margin >= opts.feas_margin && sol.status == Status::Optimal;
            CaseResult {
                name,
                passed,
                detail: format!(
                    "{:?} objective {:.9} reference {:.9} error {:.2e} margin {:.2e}",
                    sol.status, sol.objective, reference, err, margin
                ),
            }
        }
        Ok(sol) => CaseResult {
            name,
            passed: false,
            detail: format!("status {:?}", sol.status),
        },
        Err(e) => CaseResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn scalar_program(constant: &[f64], coeff: &[f64]) -> LmiProgram {
    let mut b = ProgramBuilder::new();
    let t = b.scalar("t");
    b.set_objective(t, 1.0);
    b.push(
        AffineLmi::new("analytic", SymMatrix::from_row_slice(2, constant))
            .with_term(t, SymMatrix::from_row_slice(2, coeff))
            .unwrap(),
    );
    b.build().unwrap()
}

/// SDP oracle battery: the two analytic cases plus `count` random programs.
pub fn sdp_battery(opts: &SolveOptions, count: usize, seed: u64) -> SelftestReport {
    let mut report = SelftestReport::default();
    report.cases.push(check_against(
        "analytic-schur".into(),
        &scalar_program(&[0.0, 1.0, 1.0, 0.0], &[1.0, 0.0, 0.0, 1.0]),
        opts,
        1.0,
        ANALYTIC_TOL,
    ));
    report.cases.push(check_against(
        "analytic-lambda-max".into(),
        &scalar_program(&[-2.0, -1.0, -1.0, -2.0], &[1.0, 0.0, 0.0, 1.0]),
        opts,
        3.0,
        ANALYTIC_TOL,
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let p = random_program(&mut rng);
        let name = format!("random-{i:03}");
        match brute_force_min(&p) {
            Some(reference) => report.cases.push(check_against(name, &p, opts, reference, ORACLE_TOL)),
            None => report.cases.push(CaseResult {
                name,
                passed: false,
                detail: "oracle did not converge".into(),
            }),
        }
    }
    report
}

/// Schur battery: `count` random blocks with entries in [−2, 2] and orders
/// up to 4, compared against Jacobi definiteness of the assembled matrix.
pub fn schur_battery(count: usize, seed: u64) -> SelftestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SelftestReport::default();
    let mut done = 0;
    let mut attempt = 0;
    while done < count {
        attempt += 1;
        let n = rng.random_range(1..=4usize);
        let m = rng.random_range(1..=4usize);
        // A diagonal shift makes both outcomes common.
        let shift_a = rng.random_range(0.0..6.0);
        let shift_c = rng.random_range(0.0..6.0);
        let a = random_sym(&mut rng, n, 2.0) + DMatrix::identity(n, n) * shift_a;
        let c = random_sym(&mut rng, m, 2.0) + DMatrix::identity(m, m) * shift_c;
        let bm = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let blk = BlockSym2x2::new(
            SymMatrix::new(a).unwrap(),
            bm,
            SymMatrix::new(c).unwrap(),
        )
        .unwrap();
        let full = blk.assemble();
        let lam = jacobi_min_eigenvalue(full.as_matrix());
        if lam.abs() < 1e-9 {
            // Too close to the boundary for either path to be authoritative.
            continue;
        }
        let got = schur_psd(&blk, 0.0);
        let want = lam > 0.0;
        report.cases.push(CaseResult {
            name: format!("schur-{done:03}"),
            passed: got == want,
            detail: format!("attempt {attempt} orders ({n},{m}) lambda_min {lam:.3e} schur {got}"),
        });
        done += 1;
    }
    report
}

pub const SELFTEST_SEED: u64 = 20_240_601;

/// Both batteries with the counts used by the CLI and the acceptance suite.
pub fn selftest(opts: &SolveOptions) -> SelftestReport {
    let mut report = sdp_battery(opts, 50, SELFTEST_SEED);
    report.cases.extend(schur_battery(200, SELFTEST_SEED).cases);
    report
}
