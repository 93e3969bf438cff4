//! Switched polytopic LPV plant, the three-vertex example model and the
//! switching-signal generators.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("unknown mode {mode} (model has {vertices} vertices)")]
    UnknownMode { mode: usize, vertices: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid switching signal: {0}")]
    InvalidSignal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolytopicModel {
    vertices: Vec<Vertex>,
    nx: usize,
    nu: usize,
    ny: usize,
}

impl PolytopicModel {
    pub fn new(vertices: Vec<Vertex>) -> Result<Self, PlantError> {
        let first = vertices
            .first()
            .ok_or_else(|| PlantError::DimensionMismatch("model needs at least one vertex".into()))?;
        let nx = first.a.nrows();
        let nu = first.b.ncols();
        let ny = first.c.nrows();
        if nx == 0 || nu == 0 || ny == 0 {
            return Err(PlantError::DimensionMismatch("empty system matrix".into()));
        }
        for (j, v) in vertices.iter().enumerate() {
            let ok = v.a.shape() == (nx, nx) && v.b.shape() == (nx, nu) && v.c.shape() == (ny, nx);
            if !ok {
                return Err(PlantError::DimensionMismatch(format!(
                    "vertex {} has shapes A{:?} B{:?} C{:?}, expected A({nx},{nx}) B({nx},{nu}) C({ny},{nx})",
                    j + 1,
                    v.a.shape(),
                    v.b.shape(),
                    v.c.shape()
                )));
            }
        }
        Ok(Self { vertices, nx, nu, ny })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    /// Vertex for a 1-based mode index.
    pub fn vertex(&self, mode: usize) -> Result<&Vertex, PlantError> {
        if mode == 0 || mode > self.vertices.len() {
            return Err(PlantError::UnknownMode {
                mode,
                vertices: self.vertices.len(),
            });
        }
        Ok(&self.vertices[mode - 1])
    }

    pub fn check_state(&self, x: &DVector<f64>, what: &str) -> Result<(), PlantError> {
        check_len(x, self.nx, what)
    }

    pub fn check_input(&self, u: &DVector<f64>, what: &str) -> Result<(), PlantError> {
        check_len(u, self.nu, what)
    }

    pub fn check_output(&self, y: &DVector<f64>, what: &str) -> Result<(), PlantError> {
        check_len(y, self.ny, what)
    }
}

fn check_len(v: &DVector<f64>, n: usize, what: &str) -> Result<(), PlantError> {
    if v.len() != n {
        return Err(PlantError::DimensionMismatch(format!(
            "{what} has length {}, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

/// Parameter triples (α, β, γ) of the example, paired by vertex.
pub const EXAMPLE_PARAMS: [(f64, f64, f64); 3] = [(1.0, 1.0, 0.33), (1.7, 1.5, 0.66), (2.4, 4.3, 1.0)];

/// The three-vertex second-order example.
pub fn example_model() -> PolytopicModel {
    let vertices = EXAMPLE_PARAMS
        .iter()
        .map(|&(alpha, beta, gamma)| Vertex {
            a: DMatrix::from_row_slice(2, 2, &[0.85, -0.0743 * alpha, 0.0811 * beta, 0.905]),
            b: DMatrix::from_row_slice(2, 1, &[0.105 * gamma, 0.0092 * gamma]),
            c: DMatrix::from_row_slice(1, 2, &[0.65, -0.50]),
        })
        .collect();
    PolytopicModel::new(vertices).expect("example model is well-formed")
}

/// One plant update: returns `(A_s x + B_s u, C_s x)`.
pub fn step(
    model: &PolytopicModel,
    mode: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), PlantError> {
    let v = model.vertex(mode)?;
    model.check_state(x, "state")?;
    model.check_input(u, "input")?;
    Ok((&v.a * x + &v.b * u, &v.c * x))
}

pub fn output(model: &PolytopicModel, mode: usize, x: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
    let v = model.vertex(mode)?;
    model.check_state(x, "state")?;
    Ok(&v.c * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Dsws,
    Rsws { seed: u64 },
    /// Loaded from a file.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchSignal {
    modes: Vec<usize>,
    kind: SignalKind,
}

/// Steps spent in each mode before the defined signal advances.
pub const DSWS_DWELL: usize = 25;

/// Defined signal: modes 1, 2, 3 for 25 steps each, repeating.
pub fn dsws(horizon: usize) -> Result<SwitchSignal, PlantError> {
    if horizon == 0 {
        return Err(PlantError::InvalidSignal("horizon must be at least 1".into()));
    }
    let modes = (0..horizon).map(|k| (k / DSWS_DWELL) % 3 + 1).collect();
    Ok(SwitchSignal {
        modes,
        kind: SignalKind::Dsws,
    })
}

/// Random signal: independent uniform draws over {1, 2, 3} from ChaCha8
/// seeded with `seed`.
pub fn rsws(horizon: usize, seed: u64) -> Result<SwitchSignal, PlantError> {
    if horizon == 0 {
        return Err(PlantError::InvalidSignal("horizon must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = (0..horizon).map(|_| rng.random_range(1..=3usize)).collect();
    Ok(SwitchSignal {
        modes,
        kind: SignalKind::Rsws { seed },
    })
}

impl SwitchSignal {
    pub fn from_modes(modes: Vec<usize>) -> Result<Self, PlantError> {
        if modes.is_empty() {
            return Err(PlantError::InvalidSignal("signal is empty".into()));
        }
        if let Some(&m) = modes.iter().find(|&&m| m == 0) {
            return Err(PlantError::InvalidSignal(format!("mode {m} is not 1-based")));
        }
        Ok(Self {
            modes,
            kind: SignalKind::External,
        })
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn mode(&self, k: usize) -> usize {
        self.modes[k]
    }

    /// Steps `k ≥ 1` whose mode differs from step `k − 1`.
    pub fn switch_instants(&self) -> Vec<usize> {
        (1..self.modes.len())
            .filter(|&k| self.modes[k] != self.modes[k - 1])
            .collect()
    }

    pub fn check_against(&self, model: &PolytopicModel) -> Result<(), PlantError> {
        match self.modes.iter().find(|&&m| m > model.num_vertices()) {
            Some(&mode) => Err(PlantError::UnknownMode {
                mode,
                vertices: model.num_vertices(),
            }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for SwitchSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.modes {
            writeln!(f, "{m}")?;
        }
        Ok(())
    }
}

impl FromStr for SwitchSignal {
    type Err = PlantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut modes = Vec::new();
        for (i, line) in s.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let m = t
                .parse::<usize>()
                .map_err(|_| PlantError::InvalidSignal(format!("line {}: {t:?} is not a mode index", i + 1)))?;
            modes.push(m);
        }
        Self::from_modes(modes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn example_vertices_match_published_entries() {
        let m = example_model();
        assert_eq!(m.num_vertices(), 3);
        let v1 = m.vertex(1).unwrap();
        let a1 = [0.85, -0.0743, 0.0811, 0.905];
        for (got, want) in v1.a.transpose().iter().zip(a1) {
            assert!((got - want).abs() <= 1e-12);
        }
        assert!((v1.b[0] - 0.03465).abs() <= 1e-12);
        assert!((v1.b[1] - 0.003036).abs() <= 1e-12);

        let v3 = m.vertex(3).unwrap();
        let a3 = [0.85, -0.17832, 0.34873, 0.905];
        for (got, want) in v3.a.transpose().iter().zip(a3) {
            assert!((got - want).abs() <= 1e-12);
        }
        assert!((v3.b[0] - 0.105).abs() <= 1e-12);
        assert!((v3.b[1] - 0.0092).abs() <= 1e-12);
        for v in m.vertices() {
            assert_eq!(v.c.as_slice(), &[0.65, -0.50]);
        }
    }

    #[test]
    fn step_examples() {
        let m = example_model();
        let (x1, y) = step(&m, 1, &DVector::zeros(2), &DVector::zeros(1)).unwrap();
        assert_eq!(x1, DVector::zeros(2));
        assert_eq!(y, DVector::zeros(1));

        let x0 = DVector::from_vec(vec![-1.5, -0.2]);
        let (_, y0) = step(&m, 1, &x0, &DVector::zeros(1)).unwrap();
        assert!((y0[0] - (0.65 * -1.5 + -0.5 * -0.2)).abs() < 1e-15);
        assert!((y0[0] + 0.875).abs() < 1e-15);

        assert!(matches!(
            step(&m, 4, &x0, &DVector::zeros(1)),
            Err(PlantError::UnknownMode { mode: 4, .. })
        ));
        assert!(matches!(
            step(&m, 0, &x0, &DVector::zeros(1)),
            Err(PlantError::UnknownMode { .. })
        ));
        assert!(matches!(
            step(&m, 1, &DVector::zeros(3), &DVector::zeros(1)),
            Err(PlantError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn dsws_pattern() {
        assert_eq!(dsws(3).unwrap().modes(), &[1, 1, 1]);
        let s = dsws(150).unwrap();
        assert_eq!(s.mode(24), 1);
        assert_eq!(s.mode(25), 2);
        assert_eq!(s.mode(50), 3);
        assert_eq!(s.mode(75), 1);
        for m in 1..=3 {
            assert!(s.modes().contains(&m));
        }
        assert_eq!(dsws(100).unwrap().switch_instants(), vec![25, 50, 75]);
        assert!(dsws(0).is_err());
    }

    #[test]
    fn rsws_determinism_and_frequencies() {
        assert_eq!(rsws(50, 9).unwrap(), rsws(50, 9).unwrap());
        assert_ne!(rsws(50, 9).unwrap(), rsws(50, 10).unwrap());
        let one = rsws(1, 3).unwrap();
        assert!((1..=3).contains(&one.mode(0)));
        for seed in [0, 1, 42, 12345] {
            let s = rsws(3000, seed).unwrap();
            for m in 1..=3 {
                let f = s.modes().iter().filter(|&&v| v == m).count() as f64 / 3000.0;
                assert!((0.30..=0.37).contains(&f), "seed {seed} mode {m}: {f}");
            }
        }
    }

    #[test]
    fn signal_text_round_trip() {
        let s = rsws(40, 5).unwrap();
        let text = s.to_string();
        assert_eq!(text.lines().count(), 40);
        let back: SwitchSignal = text.parse().unwrap();
        assert_eq!(back.modes(), s.modes());
        assert!("1\n0\n".parse::<SwitchSignal>().is_err());
        assert!("1\nx\n".parse::<SwitchSignal>().is_err());
        assert!("".parse::<SwitchSignal>().is_err());
        let bad: SwitchSignal = "1\n4\n".parse().unwrap();
        assert!(bad.check_against(&example_model()).is_err());
    }

    #[test]
    fn model_shape_validation() {
        let good = example_model().vertices()[0].clone();
        let mut bad = good.clone();
        bad.b = DMatrix::zeros(3, 1);
        assert!(PolytopicModel::new(vec![good, bad]).is_err());
        assert!(PolytopicModel::new(vec![]).is_err());
    }

    proptest! {
        #[test]
        fn step_is_linear(
            mode in 1usize..=3,
            x in proptest::array::uniform2(-5.0f64..5.0),
            u in -2.0f64..2.0,
            a in -3.0f64..3.0,
        ) {
            let m = example_model();
            let xv = DVector::from_row_slice(&x);
            let uv = DVector::from_element(1, u);
            let (xn, y) = step(&m, mode, &xv, &uv).unwrap();
            let (xs, ys) = step(&m, mode, &(&xv * a), &(&uv * a)).unwrap();
            for (p, q) in xs.iter().zip((xn * a).iter()) {
                prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
            }
            prop_assert!((ys[0] - a * y[0]).abs() <= 1e-12 * (1.0 + y[0].abs()));
        }
    }
}
