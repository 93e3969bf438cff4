//! Offline robust observer synthesis and the online estimator update.
//!
//! The estimator is `x̂⁺ = A_s x̂ + B_s u + L(y − C_s x̂)`. A design is
//! certified when some `P ≻ 0` satisfies, at every vertex `j`,
//! `[[ρ²P − W, (PA_j − Y C_j)ᵀ], [PA_j − Y C_j, P]] ≻ 0` with `Y = P L`,
//! which makes `eᵀPe` contract by at least `ρ²` per step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lmi::{AffineMat, BlockLmi, LmiError, ProgramBuilder};
use crate::matlin::{
    format_matrix, is_positive_definite, max_eigenvalue, min_eigenvalue, parse_matrix, spd_inverse,
    MatError, SymMatrix,
};
use crate::plant::{PlantError, PolytopicModel};
use crate::sdp::{solve_feasible, solve_min, SdpError, Solution, SolveOptions, Status};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserverError {
    #[error("invalid observer spec: {0}")]
    InvalidSpec(String),
    #[error("observer LMI infeasible (best margin {margin:e})")]
    Infeasible { margin: f64 },
    #[error("numerical failure in observer synthesis: {0}")]
    NumericalFailure(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Matrix(#[from] MatError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("cannot parse observer design: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverSpec {
    pub rho: f64,
    pub w: SymMatrix,
}

impl ObserverSpec {
    pub fn new(rho: f64, w: SymMatrix) -> Result<Self, ObserverError> {
        let spec = Self { rho, w };
        spec.validate()?;
        Ok(spec)
    }

    /// Decay rate √0.7 with identity weighting.
    pub fn standard(nx: usize) -> Self {
        Self {
            rho: 0.7_f64.sqrt(),
            w: SymMatrix::identity(nx),
        }
    }

    pub fn validate(&self) -> Result<(), ObserverError> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(ObserverError::InvalidSpec(format!("rho = {} outside (0, 1]", self.rho)));
        }
        if !is_positive_definite(&self.w, 0.0) {
            return Err(ObserverError::InvalidSpec("W must be positive definite".into()));
        }
        Ok(())
    }

    fn check_model(&self, model: &PolytopicModel) -> Result<(), ObserverError> {
        self.validate()?;
        if self.w.order() != model.nx() {
            return Err(ObserverError::InvalidSpec(format!(
                "W has order {}, model state dimension is {}",
                self.w.order(),
                model.nx()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverDesign {
    /// Observer gain `L` (n_x × n_y).
    pub gain: DMatrix<f64>,
    /// Lyapunov matrix `P`.
    pub p: SymMatrix,
    pub spec: ObserverSpec,
}

/// Block whose positive definiteness certifies `(P, L)` at one vertex.
pub fn vertex_block(
    model: &PolytopicModel,
    mode: usize,
    p: &SymMatrix,
    gain: &DMatrix<f64>,
    spec: &ObserverSpec,
) -> Result<SymMatrix, ObserverError> {
    let v = model.vertex(mode)?;
    let n = model.nx();
    let pm = p.as_matrix();
    let off = pm * (&v.a - gain * &v.c);
    let top = pm * spec.rho * spec.rho - spec.w.as_matrix();
    let mut full = DMatrix::zeros(2 * n, 2 * n);
    full.view_mut((0, 0), (n, n)).copy_from(&top);
    full.view_mut((n, 0), (n, n)).copy_from(&off);
    full.view_mut((0, n), (n, n)).copy_from(&off.transpose());
    full.view_mut((n, n), (n, n)).copy_from(pm);
    Ok(SymMatrix::symmetrize(full)?)
}

impl ObserverDesign {
    /// Smallest eigenvalue over `P` and every vertex block.
    pub fn certificate_margin(&self, model: &PolytopicModel) -> Result<f64, ObserverError> {
        let mut margin = min_eigenvalue(&self.p);
        for mode in 1..=model.num_vertices() {
            let blk = vertex_block(model, mode, &self.p, &self.gain, &self.spec)?;
            margin = margin.min(min_eigenvalue(&blk));
        }
        Ok(margin)
    }

    pub fn to_toml(&self) -> String {
        let raw = DesignFile {
            observer: DesignSection {
                rho: self.spec.rho,
                w: format_matrix(self.spec.w.as_matrix()),
                gain: format_matrix(&self.gain),
                p: format_matrix(self.p.as_matrix()),
            },
        };
        toml::to_string(&raw).expect("design serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ObserverError> {
        let raw: DesignFile = toml::from_str(text).map_err(|e| ObserverError::Parse(e.to_string()))?;
        let s = raw.observer;
        let w = SymMatrix::new(parse_matrix(&s.w)?)?;
        let spec = ObserverSpec::new(s.rho, w)?;
        let gain = parse_matrix(&s.gain)?;
        let p = SymMatrix::new(parse_matrix(&s.p)?)?;
        if p.order() != spec.w.order() || gain.nrows() != p.order() {
            return Err(ObserverError::Parse("inconsistent matrix dimensions".into()));
        }
        Ok(Self { gain, p, spec })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    observer: DesignSection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignSection {
    rho: f64,
    #[serde(rename = "W")]
    w: String,
    gain: String,
    #[serde(rename = "P")]
    p: String,
}

/// Upper bound on `P` that keeps margin maximization bounded.
pub fn normalization_bound(spec: &ObserverSpec) -> f64 {
    100.0 * max_eigenvalue(&spec.w) / (spec.rho * spec.rho)
}

/// Synthesizes `(P, L)` by maximizing the common margin `s` of the vertex
/// blocks subject to `P ≺ κI`, then recovers `L = P⁻¹Y`.
pub fn synthesize(
    model: &PolytopicModel,
    spec: &ObserverSpec,
    opts: &SolveOptions,
) -> Result<ObserverDesign, ObserverError> {
    spec.check_model(model)?;
    let nx = model.nx();
    let ny = model.ny();
    let rho2 = spec.rho * spec.rho;

    let mut b = ProgramBuilder::new();
    let p = b.sym_matrix("P", nx);
    let y = b.matrix("Yo", nx, ny);
    let s = b.scalar("s");
    b.set_objective(s, -1.0);

    let pe = p.expr();
    let ye = y.expr();
    for (j, v) in model.vertices().iter().enumerate() {
        let top = pe
            .scale(rho2)
            .sub(&AffineMat::constant(spec.w.as_matrix().clone()))?
            .sub(&AffineMat::scalar_identity(s, nx))?;
        let off = pe.right_mul(&v.a)?.sub(&ye.right_mul(&v.c)?)?;
        let bottom = pe.sub(&AffineMat::scalar_identity(s, nx))?;
        let mut blk = BlockLmi::new(&[nx, nx]);
        blk.set(0, 0, top)?.set(1, 0, off)?.set(1, 1, bottom)?;
        b.push(blk.build(format!("Eq8-vertex{}", j + 1))?);
    }
    let kappa = normalization_bound(spec);
    let mut norm = BlockLmi::new(&[nx]);
    norm.set(0, 0, AffineMat::constant(DMatrix::identity(nx, nx) * kappa).sub(&pe)?)?;
    b.push(norm.build("Po-normalization")?);
    let program = b.build()?;

    let sol = solve_min(&program, opts)?;
    match sol.status {
        Status::Optimal | Status::Feasible => {}
        Status::Infeasible => return Err(ObserverError::Infeasible { margin: sol.margin }),
        other => return Err(ObserverError::NumericalFailure(format!("solver status {other:?}"))),
    }
    let s_opt = sol.z[s];
    if s_opt <= opts.feas_margin {
        return Err(ObserverError::Infeasible { margin: s_opt });
    }
    let p_val = p.value(&sol.z);
    let (p_inv, _) = spd_inverse(&p_val)?;
    let gain = p_inv.as_matrix() * y.value(&sol.z);
    let design = ObserverDesign {
        gain,
        p: p_val,
        spec: spec.clone(),
    };
    let margin = design.certificate_margin(model)?;
    if margin <= opts.feas_margin {
        return Err(ObserverError::NumericalFailure(format!(
            "recovered gain certifies only margin {margin:e}"
        )));
    }
    Ok(design)
}

/// Feasibility in `P` of `ρ²P − W − ΛⱼᵀPΛⱼ ≻ 0` for every vertex with the
/// gain fixed, where `Λⱼ = A_j − L C_j`.
pub fn verify_gain(
    model: &PolytopicModel,
    gain: &DMatrix<f64>,
    spec: &ObserverSpec,
    opts: &SolveOptions,
) -> Result<Solution, ObserverError> {
    spec.check_model(model)?;
    let nx = model.nx();
    if gain.shape() != (nx, model.ny()) {
        return Err(PlantError::DimensionMismatch(format!(
            "gain is {:?}, expected ({nx}, {})",
            gain.shape(),
            model.ny()
        ))
        .into());
    }
    let rho2 = spec.rho * spec.rho;
    let mut b = ProgramBuilder::new();
    let p = b.sym_matrix("P", nx);
    let pe = p.expr();
    for (j, v) in model.vertices().iter().enumerate() {
        let lam = &v.a - gain * &v.c;
        let m = pe
            .scale(rho2)
            .sub(&AffineMat::constant(spec.w.as_matrix().clone()))?
            .sub(&pe.right_mul(&lam)?.left_mul(&lam.transpose())?)?;
        let mut blk = BlockLmi::new(&[nx]);
        blk.set(0, 0, m)?;
        b.push(blk.build(format!("Eq6-vertex{}", j + 1))?);
    }
    let mut pos = BlockLmi::new(&[nx]);
    pos.set(0, 0, pe)?;
    b.push(pos.build("Po")?);
    Ok(solve_feasible(&b.build()?, opts)?)
}

/// One estimator update.
pub fn step(
    design: &ObserverDesign,
    model: &PolytopicModel,
    mode: usize,
    xhat: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>, ObserverError> {
    let v = model.vertex(mode)?;
    model.check_state(xhat, "estimate")?;
    model.check_input(u, "input")?;
    model.check_output(y, "output")?;
    if design.gain.shape() != (model.nx(), model.ny()) {
        return Err(PlantError::DimensionMismatch("observer gain shape".into()).into());
    }
    let innovation = y - &v.c * xhat;
    Ok(&v.a * xhat + &v.b * u + &design.gain * innovation)
}
