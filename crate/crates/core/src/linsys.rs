//! Linear time-varying dynamics `dx = A(t)x dt + B(t)u dt` on [0, 1]:
//! state-transition matrices, controllability Gramians and minimum-energy
//! steering between two points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, locate, rk4_step, symmetrize};

/// Smallest admissible eigenvalue of M(1,0).
pub const CONTROLLABILITY_TOL: f64 = 1e-10;

/// Default number of RK4 intervals on [0, 1].
pub const DEFAULT_STEPS: usize = 200;

const NODE_EPS: f64 = 1e-13;

/// A matrix-valued function of time: constant, or tabulated with linear
/// interpolation (constant extrapolation outside the table).
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFn {
    Constant(DMatrix<f64>),
    Tabulated { grid: Vec<f64>, values: Vec<DMatrix<f64>> },
}

impl MatrixFn {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixFn::Constant(m) => m.shape(),
            MatrixFn::Tabulated { values, .. } => values[0].shape(),
        }
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        match self {
            MatrixFn::Constant(m) => m.clone(),
            MatrixFn::Tabulated { grid, values } => {
                if grid.len() == 1 || t <= grid[0] {
                    return values[0].clone();
                }
                if t >= grid[grid.len() - 1] {
                    return values[values.len() - 1].clone();
                }
                let k = locate(grid, t);
                let w = (t - grid[k]) / (grid[k + 1] - grid[k]);
                &values[k] * (1.0 - w) + &values[k + 1] * w
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("{name}: {msg}")));
        match self {
            MatrixFn::Constant(m) => {
                if !linalg::is_finite(m) {
                    return bad("non-finite entry".into());
                }
            }
            MatrixFn::Tabulated { grid, values } => {
                if grid.is_empty() || grid.len() != values.len() {
                    return bad(format!("{} grid points but {} matrices", grid.len(), values.len()));
                }
                if grid.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("grid must be strictly increasing".into());
                }
                let shape = values[0].shape();
                if values.iter().any(|v| v.shape() != shape) {
                    return bad("tabulated matrices differ in shape".into());
                }
                if grid.iter().any(|g| !g.is_finite()) || values.iter().any(|v| !linalg::is_finite(v)) {
                    return bad("non-finite entry".into());
                }
            }
        }
        Ok(())
    }
}

/// The pair (A(t), B(t)).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: MatrixFn,
    b: MatrixFn,
}

impl LinearSystem {
    pub fn new(a: MatrixFn, b: MatrixFn) -> Result<Self> {
        a.validate("A")?;
        b.validate("B")?;
        let (an, am) = a.shape();
        let (bn, bm) = b.shape();
        if an != am || an == 0 {
            return Err(Error::DimensionMismatch(format!("A must be square, got {an}x{am}")));
        }
        if bn != an || bm == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must have {an} rows and at least one column, got {bn}x{bm}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        Self::new(MatrixFn::Constant(a), MatrixFn::Constant(b))
    }

    /// `A = 0`, `B = I`: the prior of classical optimal transport.
    pub fn trivial(n: usize) -> Self {
        Self::constant(DMatrix::zeros(n, n), DMatrix::identity(n, n)).unwrap()
    }

    /// Inertial particle on a line: position and velocity, force input.
    pub fn double_integrator() -> Self {
        Self::constant(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    pub fn scalar(a: f64, b: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).unwrap()
    }

    pub fn dim_state(&self) -> usize {
        self.a.shape().0
    }

    pub fn dim_input(&self) -> usize {
        self.b.shape().1
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        self.a.eval(t)
    }

    pub fn b(&self, t: f64) -> DMatrix<f64> {
        self.b.eval(t)
    }

    /// a(t) = B(t)B(t)'.
    pub fn bbt(&self, t: f64) -> DMatrix<f64> {
        let b = self.b(t);
        &b * b.transpose()
    }

    /// Same dynamics with the input matrix scaled by `c`.
    pub fn with_scaled_input(&self, c: f64) -> Self {
        let b = match &self.b {
            MatrixFn::Constant(m) => MatrixFn::Constant(m * c),
            MatrixFn::Tabulated { grid, values } => MatrixFn::Tabulated {
                grid: grid.clone(),
                values: values.iter().map(|v| v * c).collect(),
            },
        };
        Self { a: self.a.clone(), b }
    }
}

/// JSON form of a matrix function: `{"constant": [[..]]}` or
/// `{"grid": [..], "values": [[[..]]]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged, deny_unknown_fields)]
pub enum MatrixSpec {
    Constant { constant: Vec<Vec<f64>> },
    Tabulated { grid: Vec<f64>, values: Vec<Vec<Vec<f64>>> },
}

/// JSON form of a system: `{"A": MatrixSpec, "B": MatrixSpec}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: MatrixSpec,
    #[serde(rename = "B")]
    pub b: MatrixSpec,
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput("matrix rows must be non-empty and of equal length".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl MatrixSpec {
    pub fn to_fn(&self) -> Result<MatrixFn> {
        match self {
            MatrixSpec::Constant { constant } => Ok(MatrixFn::Constant(matrix_from_rows(constant)?)),
            MatrixSpec::Tabulated { grid, values } => Ok(MatrixFn::Tabulated {
                grid: grid.clone(),
                values: values.iter().map(|v| matrix_from_rows(v)).collect::<Result<_>>()?,
            }),
        }
    }
}

impl SystemSpec {
    pub fn build(&self) -> Result<LinearSystem> {
        LinearSystem::new(self.a.to_fn()?, self.b.to_fn()?)
    }
}

/// Φ(t_k, 0) and M(t_k, 0) on a uniform grid over [0, 1].
#[derive(Debug, Clone)]
pub struct TransitionTable {
    sys: LinearSystem,
    grid: Vec<f64>,
    phi: Vec<DMatrix<f64>>,
    gramian: Vec<DMatrix<f64>>,
    phi10_inv: DMatrix<f64>,
    m10_inv: DMatrix<f64>,
}

fn transition_rhs(sys: &LinearSystem) -> impl Fn(f64, &[DMatrix<f64>]) -> Vec<DMatrix<f64>> + '_ {
    move |t, y| {
        let a = sys.a(t);
        let phi_dot = &a * &y[0];
        let m_dot = &a * &y[1] + &y[1] * a.transpose() + sys.bbt(t);
        vec![phi_dot, m_dot]
    }
}

impl TransitionTable {
    /// Integrates dΦ/dt = AΦ and dM/dt = AM + MA' + BB' jointly with RK4.
    pub fn build(sys: &LinearSystem, steps: usize) -> Result<Self> {
        if steps < 4 {
            return Err(Error::InvalidInput(format!("steps must be at least 4, got {steps}")));
        }
        let n = sys.dim_state();
        let grid = linalg::unit_grid(steps);
        let rhs = transition_rhs(sys);
        let mut phi = Vec::with_capacity(steps + 1);
        let mut gramian = Vec::with_capacity(steps + 1);
        let mut y = vec![DMatrix::identity(n, n), DMatrix::zeros(n, n)];
        phi.push(y[0].clone());
        gramian.push(y[1].clone());
        for k in 0..steps {
            y = rk4_step(grid[k], grid[k + 1] - grid[k], &y, &rhs);
            y[1] = symmetrize(&y[1]);
            if !linalg::is_finite(&y[0]) || !linalg::is_finite(&y[1]) {
                return Err(Error::NonFinite("transition integration"));
            }
            phi.push(y[0].clone());
            gramian.push(y[1].clone());
        }
        let m10 = &gramian[steps];
        let lambda_min = linalg::min_eigenvalue(m10);
        if !(lambda_min > CONTROLLABILITY_TOL) {
            return Err(Error::NonControllable { lambda_min, tol: CONTROLLABILITY_TOL });
        }
        let m10_inv = linalg::inverse_checked(m10, "M(1,0)", 1e14)?;
        let phi10_inv = linalg::inverse_checked(&phi[steps], "Φ(1,0)", 1e14)?;
        Ok(Self { sys: sys.clone(), grid, phi, gramian, phi10_inv, m10_inv })
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn dim(&self) -> usize {
        self.sys.dim_state()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn phi_table(&self) -> &[DMatrix<f64>] {
        &self.phi
    }

    pub fn gramian_table(&self) -> &[DMatrix<f64>] {
        &self.gramian
    }

    pub fn phi10(&self) -> &DMatrix<f64> {
        &self.phi[self.steps()]
    }

    pub fn m10(&self) -> &DMatrix<f64> {
        &self.gramian[self.steps()]
    }

    pub fn m10_inv(&self) -> &DMatrix<f64> {
        &self.m10_inv
    }

    pub fn lambda_min_m10(&self) -> f64 {
        linalg::min_eigenvalue(self.m10())
    }

    fn check_time(t: f64) -> Result<()> {
        if !(-NODE_EPS..=1.0 + NODE_EPS).contains(&t) {
            return Err(Error::OutOfRange { t, lo: 0.0, hi: 1.0 });
        }
        Ok(())
    }

    /// (Φ(t,0), M(t,0)); off-grid times take a partial RK4 step from the
    /// grid node below.
    pub fn state_at(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Self::check_time(t)?;
        let t = t.clamp(0.0, 1.0);
        let k = locate(&self.grid, t);
        for node in [k, k + 1] {
            if (self.grid[node] - t).abs() < NODE_EPS {
                return Ok((self.phi[node].clone(), self.gramian[node].clone()));
            }
        }
        let y = vec![self.phi[k].clone(), self.gramian[k].clone()];
        let mut y = rk4_step(self.grid[k], t - self.grid[k], &y, &transition_rhs(&self.sys));
        let m = symmetrize(&y.pop().unwrap());
        Ok((y.pop().unwrap(), m))
    }

    /// Φ(t,s) = Φ(t,0)Φ(s,0)⁻¹.
    pub fn phi(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let (pt, _) = self.state_at(t)?;
        let (ps, _) = self.state_at(s)?;
        let ps_inv = ps.try_inverse().ok_or(Error::Singular { what: "Φ(s,0)", cond: f64::INFINITY })?;
        Ok(pt * ps_inv)
    }

    /// M(t,s) = M(t,0) − Φ(t,s)M(s,0)Φ(t,s)'.
    pub fn gramian(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let (pt, mt) = self.state_at(t)?;
        if s == 0.0 {
            return Ok(mt);
        }
        let (ps, ms) = self.state_at(s)?;
        let ps_inv = ps.try_inverse().ok_or(Error::Singular { what: "Φ(s,0)", cond: f64::INFINITY })?;
        let pts = pt * ps_inv;
        Ok(symmetrize(&(mt - &pts * ms * pts.transpose())))
    }

    /// Φ(1,t), M(1,t) and Φ(t,0), M(t,0) in one evaluation.
    pub(crate) fn backward_pair(&self, t: f64) -> Result<BackwardPair> {
        let (phi_t0, m_t0) = self.state_at(t)?;
        let phi_t0_inv = phi_t0
            .clone()
            .try_inverse()
            .ok_or(Error::Singular { what: "Φ(t,0)", cond: f64::INFINITY })?;
        let phi_1t = self.phi10() * &phi_t0_inv;
        let m_1t = symmetrize(&(self.m10() - &phi_1t * &m_t0 * phi_1t.transpose()));
        Ok(BackwardPair { phi_t0, m_t0, phi_1t, m_1t })
    }

    fn check_vectors(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        let n = self.dim();
        if x.len() != n || y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "endpoints must have length {n}, got {} and {}",
                x.len(),
                y.len()
            )));
        }
        Ok(())
    }

    /// ½ (y − Φ₁₀x)' M₁₀⁻¹ (y − Φ₁₀x).
    pub fn min_energy_cost(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check_vectors(x, y)?;
        let r = y - self.phi10() * x;
        Ok((0.5 * linalg::quad_form(&self.m10_inv, &r)).max(0.0))
    }

    /// Point on the minimum-energy trajectory from `x` (t=0) to `y` (t=1).
    pub fn min_energy_path(&self, x: &DVector<f64>, y: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_vectors(x, y)?;
        let bp = self.backward_pair(t)?;
        // Φ(t,1) = Φ(t,0)Φ₁₀⁻¹
        let phi_t1 = &bp.phi_t0 * &self.phi10_inv;
        let from_x = phi_t1 * &bp.m_1t * &self.m10_inv * self.phi10() * x;
        let from_y = &bp.m_t0 * bp.phi_1t.transpose() * &self.m10_inv * y;
        Ok(from_x + from_y)
    }

    /// Open-loop minimum-energy input u(t) = B(t)'Φ(1,t)'M₁₀⁻¹(y − Φ₁₀x).
    pub fn min_energy_control(&self, x: &DVector<f64>, y: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.check_vectors(x, y)?;
        let bp = self.backward_pair(t)?;
        let r = y - self.phi10() * x;
        Ok(self.sys.b(t).transpose() * bp.phi_1t.transpose() * &self.m10_inv * r)
    }
}

pub(crate) struct BackwardPair {
    pub phi_t0: DMatrix<f64>,
    pub m_t0: DMatrix<f64>,
    pub phi_1t: DMatrix<f64>,
    pub m_1t: DMatrix<f64>,
}
