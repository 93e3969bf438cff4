//! Linear matrix inequality programs.
//!
//! A program is a linear objective over a decision vector `z` subject to
//! constraints `F(z) = F₀ + Σ zᵢ Fᵢ ≻ 0` and optional scalar box bounds.
//!
//! Symmetric-matrix variables are packed by their upper triangle. The id of
//! an off-diagonal entry `(i, j)` carries a coefficient in both mirrored
//! positions, so the value of the variable is the matrix entry itself.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::matlin::{self, MatError, SymMatrix};

pub type VarId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("constraint `{label}` references unregistered variable {id}")]
    UnknownVariable { label: String, id: VarId },
    #[error("program has no constraints")]
    NoConstraints,
    #[error("block `{0}` is not symmetric")]
    NotSymmetric(String),
    #[error(transparent)]
    Matrix(#[from] MatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    SymEntry { row: usize, col: usize },
    MatEntry { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionVar {
    pub id: VarId,
    pub kind: VarKind,
    pub owner: String,
}

/// Strict scalar bounds `lower < z < upper`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bound {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// `F(z) = F₀ + Σ zᵢ Fᵢ`, every block symmetric and of the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmi {
    label: String,
    constant: SymMatrix,
    terms: BTreeMap<VarId, SymMatrix>,
}

impl AffineLmi {
    pub fn new(label: impl Into<String>, constant: SymMatrix) -> Self {
        Self {
            label: label.into(),
            constant,
            terms: BTreeMap::new(),
        }
    }

    /// Adds `z_id · block`, accumulating onto an existing term.
    pub fn add_term(&mut self, id: VarId, block: SymMatrix) -> Result<(), LmiError> {
        if block.order() != self.order() {
            return Err(LmiError::DimensionMismatch(format!(
                "term of order {} on `{}` of order {}",
                block.order(),
                self.label,
                self.order()
            )));
        }
        let merged = match self.terms.remove(&id) {
            Some(prev) => prev.add(&block),
            None => block,
        };
        self.terms.insert(id, merged);
        Ok(())
    }

    pub fn with_term(mut self, id: VarId, block: SymMatrix) -> Result<Self, LmiError> {
        self.add_term(id, block)?;
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn order(&self) -> usize {
        self.constant.order()
    }

    pub fn constant(&self) -> &SymMatrix {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (VarId, &SymMatrix)> {
        self.terms.iter().map(|(&id, m)| (id, m))
    }

    pub fn max_var_id(&self) -> Option<VarId> {
        self.terms.keys().next_back().copied()
    }

    /// Evaluates `F₀ + Σ zᵢ Fᵢ`. Only checks that `z` covers every referenced id;
    /// [`LmiProgram::eval_constraint`] additionally checks the full length.
    pub fn eval(&self, z: &[f64]) -> Result<SymMatrix, LmiError> {
        let mut acc = self.constant.as_matrix().clone();
        for (&id, block) in &self.terms {
            let zi = *z.get(id).ok_or_else(|| {
                LmiError::DimensionMismatch(format!(
                    "`{}` needs variable {id} but z has length {}",
                    self.label,
                    z.len()
                ))
            })?;
            if zi != 0.0 {
                acc += block.as_matrix() * zi;
            }
        }
        Ok(SymMatrix::symmetrize(acc)?)
    }

    /// `D F(z) D` for diagonal `D = diag(d)`.
    pub fn diag_congruence(&self, d: &[f64]) -> Result<Self, LmiError> {
        if d.len() != self.order() {
            return Err(LmiError::DimensionMismatch(format!(
                "congruence of length {} on `{}` of order {}",
                d.len(),
                self.label,
                self.order()
            )));
        }
        let t = DMatrix::from_diagonal(&DVector::from_column_slice(d));
        let mut out = AffineLmi::new(self.label.clone(), self.constant.congruence(&t)?);
        for (&id, block) in &self.terms {
            out.terms.insert(id, block.congruence(&t)?);
        }
        Ok(out)
    }
}

/// A rectangular matrix affine in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMat {
    rows: usize,
    cols: usize,
    constant: DMatrix<f64>,
    terms: BTreeMap<VarId, DMatrix<f64>>,
}

impl AffineMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DMatrix::zeros(rows, cols),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    /// `z_id · coeff`.
    pub fn term(id: VarId, coeff: DMatrix<f64>) -> Self {
        let mut out = Self::zeros(coeff.nrows(), coeff.ncols());
        out.terms.insert(id, coeff);
        out
    }

    /// `z_id · I`.
    pub fn scalar_identity(id: VarId, n: usize) -> Self {
        Self::term(id, DMatrix::identity(n, n))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), LmiError> {
        if self.shape() != other.shape() {
            return Err(LmiError::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, LmiError> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        out.constant += &other.constant;
        for (&id, m) in &other.terms {
            out.terms
                .entry(id)
                .and_modify(|acc| *acc += m)
                .or_insert_with(|| m.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LmiError> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            constant: &self.constant * a,
            terms: self.terms.iter().map(|(&id, m)| (id, m * a)).collect(),
        }
    }

    /// `L · self`.
    pub fn left_mul(&self, l: &DMatrix<f64>) -> Result<Self, LmiError> {
        if l.ncols() != self.rows {
            return Err(LmiError::DimensionMismatch(format!(
                "left factor {}x{} on {:?}",
                l.nrows(),
                l.ncols(),
                self.shape()
            )));
        }
        Ok(Self {
            rows: l.nrows(),
            cols: self.cols,
            constant: l * &self.constant,
            terms: self.terms.iter().map(|(&id, m)| (id, l * m)).collect(),
        })
    }

    /// `self · R`.
    pub fn right_mul(&self, r: &DMatrix<f64>) -> Result<Self, LmiError> {
        if r.nrows() != self.cols {
            return Err(LmiError::DimensionMismatch(format!(
                "right factor {}x{} on {:?}",
                r.nrows(),
                r.ncols(),
                self.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: r.ncols(),
            constant: &self.constant * r,
            terms: self.terms.iter().map(|(&id, m)| (id, m * r)).collect(),
        })
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(&id, m)| (id, m.transpose())).collect(),
        }
    }

    pub fn eval(&self, z: &[f64]) -> Result<DMatrix<f64>, LmiError> {
        let mut acc = self.constant.clone();
        for (&id, m) in &self.terms {
            let zi = *z.get(id).ok_or_else(|| {
                LmiError::DimensionMismatch(format!("variable {id} outside z of length {}", z.len()))
            })?;
            acc += m * zi;
        }
        Ok(acc)
    }
}

/// Handle to a registered symmetric-matrix variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymVar {
    n: usize,
    ids: Vec<VarId>,
}

impl SymVar {
    pub fn order(&self) -> usize {
        self.n
    }

    /// Id of entry `(i, j)`; mirrored positions share the id.
    pub fn id(&self, i: usize, j: usize) -> VarId {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle
        let offset = r * self.n - r * (r + 1) / 2 + c;
        self.ids[offset]
    }

    pub fn ids(&self) -> &[VarId] {
        &self.ids
    }

    pub fn expr(&self) -> AffineMat {
        let mut out = AffineMat::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in i..self.n {
                let mut e = DMatrix::zeros(self.n, self.n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                out.terms.insert(self.id(i, j), e);
            }
        }
        out
    }

    pub fn value(&self, z: &[f64]) -> SymMatrix {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = z[self.id(i, j)];
            }
        }
        SymMatrix::new(m).expect("packed symmetric variable")
    }
}

/// Handle to a registered rectangular-matrix variable (row-major ids).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatVar {
    rows: usize,
    cols: usize,
    ids: Vec<VarId>,
}

impl MatVar {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn id(&self, i: usize, j: usize) -> VarId {
        self.ids[i * self.cols + j]
    }

    pub fn ids(&self) -> &[VarId] {
        &self.ids
    }

    pub fn expr(&self) -> AffineMat {
        let mut out = AffineMat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let mut e = DMatrix::zeros(self.rows, self.cols);
                e[(i, j)] = 1.0;
                out.terms.insert(self.id(i, j), e);
            }
        }
        out
    }

    pub fn value(&self, z: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| z[self.id(i, j)])
    }
}

/// Assembles a symmetric block LMI from its lower-triangular blocks.
#[derive(Debug, Clone)]
pub struct BlockLmi {
    sizes: Vec<usize>,
    blocks: BTreeMap<(usize, usize), AffineMat>,
}

impl BlockLmi {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
            blocks: BTreeMap::new(),
        }
    }

    /// Sets block `(i, j)` with `i ≥ j`; `(j, i)` is its transpose.
    pub fn set(&mut self, i: usize, j: usize, m: AffineMat) -> Result<&mut Self, LmiError> {
        assert!(i >= j, "only lower-triangular blocks are set");
        if m.shape() != (self.sizes[i], self.sizes[j]) {
            return Err(LmiError::DimensionMismatch(format!(
                "block ({i},{j}) expects {}x{}, got {:?}",
                self.sizes[i],
                self.sizes[j],
                m.shape()
            )));
        }
        self.blocks.insert((i, j), m);
        Ok(self)
    }

    pub fn build(&self, label: impl Into<String>) -> Result<AffineLmi, LmiError> {
        let label = label.into();
        let order: usize = self.sizes.iter().sum();
        let offsets: Vec<usize> = self
            .sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();

        let mut constant = DMatrix::zeros(order, order);
        let mut terms: BTreeMap<VarId, DMatrix<f64>> = BTreeMap::new();
        let place = |dst: &mut DMatrix<f64>, i: usize, j: usize, m: &DMatrix<f64>| {
            let (ri, cj) = (offsets[i], offsets[j]);
            dst.view_mut((ri, cj), (m.nrows(), m.ncols())).copy_from(m);
            if i != j {
                dst.view_mut((cj, ri), (m.ncols(), m.nrows()))
                    .copy_from(&m.transpose());
            }
        };
        for (&(i, j), blk) in &self.blocks {
            if i == j && !is_symmetric(&blk.constant) {
                return Err(LmiError::NotSymmetric(label));
            }
            place(&mut constant, i, j, &blk.constant);
            for (&id, m) in &blk.terms {
                if i == j && !is_symmetric(m) {
                    return Err(LmiError::NotSymmetric(label));
                }
                let dst = terms.entry(id).or_insert_with(|| DMatrix::zeros(order, order));
                place(dst, i, j, m);
            }
        }
        let mut lmi = AffineLmi::new(label, SymMatrix::symmetrize(constant)?);
        for (id, m) in terms {
            lmi.add_term(id, SymMatrix::symmetrize(m)?)?;
        }
        Ok(lmi)
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = 1.0 + m.amax();
    (m - m.transpose()).amax() <= 1e-12 * scale
}

/// A semidefinite program: minimize `cᵀz` subject to every `F_k(z) ≻ 0`
/// and the scalar bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProgram {
    vars: Vec<DecisionVar>,
    objective: Vec<f64>,
    constraints: Vec<AffineLmi>,
    bounds: Vec<Bound>,
}

impl LmiProgram {
    pub fn new(
        vars: Vec<DecisionVar>,
        objective: Vec<f64>,
        constraints: Vec<AffineLmi>,
        bounds: Vec<Bound>,
    ) -> Result<Self, LmiError> {
        let n = vars.len();
        for (k, v) in vars.iter().enumerate() {
            if v.id != k {
                return Err(LmiError::DimensionMismatch(format!(
                    "variable ids must be contiguous; position {k} holds id {}",
                    v.id
                )));
            }
        }
        if objective.len() != n || bounds.len() != n {
            return Err(LmiError::DimensionMismatch(format!(
                "{n} variables, {} objective coefficients, {} bounds",
                objective.len(),
                bounds.len()
            )));
        }
        if constraints.is_empty() {
            return Err(LmiError::NoConstraints);
        }
        for c in &constraints {
            if let Some(id) = c.max_var_id().filter(|&id| id >= n) {
                return Err(LmiError::UnknownVariable {
                    label: c.label().to_string(),
                    id,
                });
            }
        }
        Ok(Self {
            vars,
            objective,
            constraints,
            bounds,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn vars(&self) -> &[DecisionVar] {
        &self.vars
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[AffineLmi] {
        &self.constraints
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.iter().zip(z).map(|(c, v)| c * v).sum()
    }

    fn check_len(&self, z: &[f64]) -> Result<(), LmiError> {
        if z.len() != self.num_vars() {
            return Err(LmiError::DimensionMismatch(format!(
                "z has length {}, program has {} variables",
                z.len(),
                self.num_vars()
            )));
        }
        Ok(())
    }

    pub fn eval_constraint(&self, k: usize, z: &[f64]) -> Result<SymMatrix, LmiError> {
        self.check_len(z)?;
        self.constraints[k].eval(z)
    }

    /// `(label, λ_min)` for every constraint block, followed by one entry per
    /// finite scalar bound (`"bound lo z<id>"` / `"bound hi z<id>"`).
    pub fn constraint_margins(&self, z: &[f64]) -> Result<Vec<(String, f64)>, LmiError> {
        self.check_len(z)?;
        let mut out = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            out.push((c.label().to_string(), matlin::min_eigenvalue(&c.eval(z)?)));
        }
        for (id, b) in self.bounds.iter().enumerate() {
            if let Some(lo) = b.lower {
                out.push((format!("bound lo z{id}"), z[id] - lo));
            }
            if let Some(hi) = b.upper {
                out.push((format!("bound hi z{id}"), hi - z[id]));
            }
        }
        Ok(out)
    }

    /// Smallest eigenvalue over all constraints and bound slacks; positive iff
    /// `z` is strictly feasible.
    pub fn feasibility_margin(&self, z: &[f64]) -> Result<f64, LmiError> {
        Ok(self
            .constraint_margins(z)?
            .into_iter()
            .map(|(_, m)| m)
            .fold(f64::INFINITY, f64::min))
    }

    /// Substitutes fixed values for some variables. Returns the reduced
    /// program and, for each reduced id, the original id it stands for.
    pub fn fix_variables(&self, fixed: &[(VarId, f64)]) -> Result<(LmiProgram, Vec<VarId>), LmiError> {
        let mut value: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(id, v) in fixed {
            if id >= self.num_vars() {
                return Err(LmiError::UnknownVariable {
                    label: "fix_variables".into(),
                    id,
                });
            }
            value.insert(id, v);
        }
        let keep: Vec<VarId> = (0..self.num_vars()).filter(|id| !value.contains_key(id)).collect();
        let mut new_id = vec![usize::MAX; self.num_vars()];
        for (k, &old) in keep.iter().enumerate() {
            new_id[old] = k;
        }
        let vars = keep
            .iter()
            .enumerate()
            .map(|(k, &old)| DecisionVar {
                id: k,
                ..self.vars[old].clone()
            })
            .collect();
        let objective = keep.iter().map(|&old| self.objective[old]).collect();
        let bounds = keep.iter().map(|&old| self.bounds[old]).collect();
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let mut constant = c.constant.clone();
            for (&id, v) in &value {
                if let Some(block) = c.terms.get(&id) {
                    constant = constant.add(&block.scale(*v));
                }
            }
            let mut out = AffineLmi::new(c.label.clone(), constant);
            for (&id, block) in &c.terms {
                if !value.contains_key(&id) {
                    out.add_term(new_id[id], block.clone())?;
                }
            }
            constraints.push(out);
        }
        Ok((LmiProgram::new(vars, objective, constraints, bounds)?, keep))
    }

    /// Equivalent program under the substitution `zᵢ = scaleᵢ · z'ᵢ`
    /// (`scaleᵢ > 0`), objective multiplied by `obj_scale > 0`, and per-constraint
    /// diagonal congruences `D F D` where given.
    pub fn rescale(
        &self,
        var_scale: &[f64],
        obj_scale: f64,
        congruence: &[Option<Vec<f64>>],
    ) -> Result<LmiProgram, LmiError> {
        if var_scale.len() != self.num_vars() || congruence.len() != self.constraints.len() {
            return Err(LmiError::DimensionMismatch("rescale arguments".into()));
        }
        assert!(var_scale.iter().all(|&d| d > 0.0) && obj_scale > 0.0);
        let objective = self
            .objective
            .iter()
            .zip(var_scale)
            .map(|(c, d)| c * d * obj_scale)
            .collect();
        let bounds = self
            .bounds
            .iter()
            .zip(var_scale)
            .map(|(b, d)| Bound {
                lower: b.lower.map(|v| v / d),
                upper: b.upper.map(|v| v / d),
            })
            .collect();
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for (c, cong) in self.constraints.iter().zip(congruence) {
            let mut scaled = AffineLmi::new(c.label.clone(), c.constant.clone());
            for (&id, block) in &c.terms {
                scaled.add_term(id, block.scale(var_scale[id]))?;
            }
            constraints.push(match cong {
                Some(d) => scaled.diag_congruence(d)?,
                None => scaled,
            });
        }
        LmiProgram::new(self.vars.clone(), objective, constraints, bounds)
    }

    /// Plain-text listing of variables, objective, bounds and constraint
    /// blocks (row-major, 17 significant digits).
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variables {}", self.num_vars());
        for v in &self.vars {
            let kind = match v.kind {
                VarKind::Scalar => "scalar".to_string(),
                VarKind::SymEntry { row, col } => format!("sym({row},{col})"),
                VarKind::MatEntry { row, col } => format!("mat({row},{col})"),
            };
            let _ = writeln!(s, "  z{} {} {}", v.id, v.owner, kind);
        }
        let _ = write!(s, "objective");
        for c in &self.objective {
            let _ = write!(s, " {c:.16e}");
        }
        let _ = writeln!(s);
        for (id, b) in self.bounds.iter().enumerate() {
            if b.lower.is_some() || b.upper.is_some() {
                let fmt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:.16e}"));
                let _ = writeln!(s, "bound z{id} {} {}", fmt(b.lower), fmt(b.upper));
            }
        }
        let _ = writeln!(s, "constraints {}", self.constraints.len());
        for c in &self.constraints {
            let _ = writeln!(s, "constraint {} order {}", c.label, c.order());
            write_block(&mut s, "F0", &c.constant);
            for (id, block) in &c.terms {
                write_block(&mut s, &format!("F[z{id}]"), block);
            }
        }
        s
    }
}

fn write_block(s: &mut String, name: &str, m: &SymMatrix) {
    let _ = writeln!(s, "  {name}");
    for row in m.as_matrix().row_iter() {
        let _ = write!(s, "   ");
        for v in row.iter() {
            let _ = write!(s, " {v:.16e}");
        }
        let _ = writeln!(s);
    }
}

/// Accumulates variables, objective and constraints for an [`LmiProgram`].
#[derive(Debug, Default, Clone)]
pub struct ProgramBuilder {
    vars: Vec<DecisionVar>,
    objective: Vec<f64>,
    bounds: Vec<Bound>,
    constraints: Vec<AffineLmi>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, owner: &str, kind: VarKind) -> VarId {
        let id = self.vars.len();
        self.vars.push(DecisionVar {
            id,
            kind,
            owner: owner.to_string(),
        });
        self.objective.push(0.0);
        self.bounds.push(Bound::default());
        id
    }

    pub fn scalar(&mut self, owner: &str) -> VarId {
        self.register(owner, VarKind::Scalar)
    }

    pub fn sym_matrix(&mut self, owner: &str, n: usize) -> SymVar {
        let mut ids = Vec::with_capacity(n * (n + 1) / 2);
        for row in 0..n {
            for col in row..n {
                ids.push(self.register(owner, VarKind::SymEntry { row, col }));
            }
        }
        SymVar { n, ids }
    }

    pub fn matrix(&mut self, owner: &str, rows: usize, cols: usize) -> MatVar {
        let mut ids = Vec::with_capacity(rows * cols);
        for row in 0..rows {
            for col in 0..cols {
                ids.push(self.register(owner, VarKind::MatEntry { row, col }));
            }
        }
        MatVar { rows, cols, ids }
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn set_objective(&mut self, id: VarId, coeff: f64) {
        self.objective[id] = coeff;
    }

    pub fn bound(&mut self, id: VarId, lower: Option<f64>, upper: Option<f64>) {
        self.bounds[id] = Bound { lower, upper };
    }

    pub fn push(&mut self, lmi: AffineLmi) {
        self.constraints.push(lmi);
    }

    pub fn build(self) -> Result<LmiProgram, LmiError> {
        LmiProgram::new(self.vars, self.objective, self.constraints, self.bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eq48(u_max: f64) -> LmiProgram {
        let mut b = ProgramBuilder::new();
        let u = b.scalar("u");
        let mut blk = BlockLmi::new(&[1, 1]);
        blk.set(0, 0, AffineMat::constant(DMatrix::from_element(1, 1, u_max)))
            .unwrap()
            .set(1, 0, AffineMat::term(u, DMatrix::from_element(1, 1, 1.0)))
            .unwrap()
            .set(1, 1, AffineMat::constant(DMatrix::from_element(1, 1, u_max)))
            .unwrap();
        b.push(blk.build("Eq48").unwrap());
        b.build().unwrap()
    }

    #[test]
    fn eval_examples() {
        let lmi = AffineLmi::new("I", SymMatrix::identity(2));
        let p = LmiProgram::new(
            vec![DecisionVar { id: 0, kind: VarKind::Scalar, owner: "t".into() }],
            vec![0.0],
            vec![lmi],
            vec![Bound::default()],
        )
        .unwrap();
        assert_eq!(p.eval_constraint(0, &[7.0]).unwrap(), SymMatrix::identity(2));

        let lmi = AffineLmi::new("lin", SymMatrix::zeros(2))
            .with_term(0, SymMatrix::identity(2))
            .unwrap();
        assert_eq!(lmi.eval(&[3.0]).unwrap(), SymMatrix::identity(2).scale(3.0));

        let p = eq48(1.0);
        let m = p.eval_constraint(0, &[0.5]).unwrap();
        assert_eq!(m, SymMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 1.0]));
    }

    #[test]
    fn eval_rejects_wrong_length() {
        let p = eq48(1.0);
        assert!(matches!(
            p.eval_constraint(0, &[0.5, 1.0]),
            Err(LmiError::DimensionMismatch(_))
        ));
        assert!(p.feasibility_margin(&[]).is_err());
    }

    #[test]
    fn margin_examples() {
        let p = LmiProgram::new(
            vec![DecisionVar { id: 0, kind: VarKind::Scalar, owner: "t".into() }],
            vec![1.0],
            vec![AffineLmi::new("I", SymMatrix::identity(3))],
            vec![Bound::default()],
        )
        .unwrap();
        assert_eq!(p.feasibility_margin(&[0.0]).unwrap(), 1.0);
        let p = eq48(1.0);
        assert!(p.feasibility_margin(&[1.0]).unwrap().abs() < 1e-15);
        assert!(p.feasibility_margin(&[0.5]).unwrap() > 0.0);
    }

    #[test]
    fn margins_include_bounds() {
        let mut b = ProgramBuilder::new();
        let t = b.scalar("t");
        b.bound(t, Some(0.0), Some(2.0));
        b.push(AffineLmi::new("I", SymMatrix::identity(1)));
        let p = b.build().unwrap();
        assert!((p.feasibility_margin(&[1.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(p.feasibility_margin(&[2.5]).unwrap() < 0.0);
    }

    #[test]
    fn symmetric_variable_packing() {
        let mut b = ProgramBuilder::new();
        let s = b.scalar("delta");
        let phi = b.sym_matrix("Phi", 3);
        assert_eq!(s, 0);
        assert_eq!(phi.ids(), &[1, 2, 3, 4, 5, 6]);
        assert_eq!(phi.id(0, 2), phi.id(2, 0));
        assert_eq!(phi.id(1, 1), 4);
        let z = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let v = phi.value(&z);
        assert_eq!(v[(2, 1)], 5.0);
        assert_eq!(phi.expr().eval(&z).unwrap(), v.into_matrix());
    }

    #[test]
    fn block_builder_rejects_bad_shapes() {
        let mut blk = BlockLmi::new(&[2, 1]);
        assert!(blk.set(1, 0, AffineMat::zeros(2, 1)).is_err());
        assert!(blk.set(1, 0, AffineMat::zeros(1, 2)).is_ok());
    }

    #[test]
    fn program_validation() {
        let mut b = ProgramBuilder::new();
        b.scalar("t");
        assert!(matches!(b.clone().build(), Err(LmiError::NoConstraints)));
        b.push(AffineLmi::new("x", SymMatrix::identity(1)).with_term(3, SymMatrix::identity(1)).unwrap());
        assert!(matches!(b.build(), Err(LmiError::UnknownVariable { id: 3, .. })));
    }

    #[test]
    fn fix_and_rescale_preserve_evaluation() {
        let mut b = ProgramBuilder::new();
        let x = b.scalar("x");
        let y = b.scalar("y");
        b.set_objective(y, 2.0);
        b.bound(y, Some(-1.0), Some(4.0));
        let lmi = AffineLmi::new("c", SymMatrix::from_row_slice(2, &[2.0, 0.3, 0.3, 1.0]))
            .with_term(x, SymMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 0.0]))
            .unwrap()
            .with_term(y, SymMatrix::from_row_slice(2, &[0.0, 1.0, 1.0, -1.0]))
            .unwrap();
        b.push(lmi);
        let p = b.build().unwrap();

        let (reduced, keep) = p.fix_variables(&[(x, 0.25)]).unwrap();
        assert_eq!(keep, vec![y]);
        let full = p.eval_constraint(0, &[0.25, 0.1]).unwrap();
        let red = reduced.eval_constraint(0, &[0.1]).unwrap();
        assert!((full.as_matrix() - red.as_matrix()).amax() < 1e-15);

        let d = [2.0, 0.5];
        let scaled = p.rescale(&d, 3.0, &[Some(vec![0.5, 4.0])]).unwrap();
        let zp = [0.3, -0.4];
        let z = [d[0] * zp[0], d[1] * zp[1]];
        let orig = p.eval_constraint(0, &z).unwrap();
        let cong = scaled.eval_constraint(0, &zp).unwrap();
        let t = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, 4.0]));
        let expected = &t * orig.as_matrix() * &t;
        assert!((cong.as_matrix() - expected).amax() < 1e-14);
        assert!((scaled.objective_value(&zp) - 3.0 * p.objective_value(&z)).abs() < 1e-15);
        assert_eq!(scaled.bounds()[1].upper, Some(8.0));
    }

    #[test]
    fn dump_lists_labels_and_blocks() {
        let text = eq48(1.0).dump();
        assert!(text.contains("constraint Eq48 order 2"));
        assert!(text.contains("1.0000000000000000e0"));
        assert!(text.contains("z0 u scalar"));
    }

    fn random_program(seed: &[f64]) -> LmiProgram {
        let mut b = ProgramBuilder::new();
        let ids: Vec<_> = (0..3).map(|_| b.scalar("z")).collect();
        let mut k = 0;
        let mut next = || {
            k += 1;
            seed[k % seed.len()]
        };
        let sym = |a: f64, bb: f64, c: f64| SymMatrix::from_row_slice(2, &[a, bb, bb, c]);
        let mut lmi = AffineLmi::new("r", sym(2.0 + next().abs(), next(), 2.0 + next().abs()));
        for &id in &ids {
            lmi.add_term(id, sym(next(), next(), next())).unwrap();
        }
        b.push(lmi);
        b.build().unwrap()
    }

    proptest! {
        #[test]
        fn eval_is_affine(
            coeffs in prop::collection::vec(-2.0f64..2.0, 12),
            z1 in prop::collection::vec(-3.0f64..3.0, 3),
            z2 in prop::collection::vec(-3.0f64..3.0, 3),
            a in 0.0f64..1.0,
        ) {
            let p = random_program(&coeffs);
            let mix: Vec<f64> = z1.iter().zip(&z2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
            let lhs = p.eval_constraint(0, &mix).unwrap();
            let rhs = p.eval_constraint(0, &z1).unwrap().scale(a)
                .add(&p.eval_constraint(0, &z2).unwrap().scale(1.0 - a));
            prop_assert!((lhs.as_matrix() - rhs.as_matrix()).amax() < 1e-12);
        }

        #[test]
        fn strict_feasible_set_is_convex(
            coeffs in prop::collection::vec(-2.0f64..2.0, 12),
            z1 in prop::collection::vec(-1.0f64..1.0, 3),
            z2 in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let p = random_program(&coeffs);
            let m1 = p.feasibility_margin(&z1).unwrap();
            let m2 = p.feasibility_margin(&z2).unwrap();
            if m1 > 0.0 && m2 > 0.0 {
                let mid: Vec<f64> = z1.iter().zip(&z2).map(|(x, y)| 0.5 * (x + y)).collect();
                prop_assert!(p.feasibility_margin(&mid).unwrap() > 0.0);
            }
        }
    }
}
