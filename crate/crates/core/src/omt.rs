//! Optimal mass transport with prior linear dynamics.
//!
//! The change of coordinates x̂ = M₁₀^{-1/2}Φ₁₀x, ŷ = M₁₀^{-1/2}y turns the
//! prior-dynamics problem into classical quadratic-cost transport. In one
//! dimension the classical map is the monotone rearrangement F̂₁⁻¹∘F̂₀,
//! which is lifted back and pushed through the minimum-energy paths to
//! obtain the displacement interpolation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss_bridge::GaussianState;
use crate::linalg;
use crate::linsys::TransitionTable;

/// Nonnegative density values on a strictly increasing 1-D grid. Each
/// point owns the cell between the midpoints to its neighbours; the CDF is
/// piecewise linear across cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    points: Vec<f64>,
    density: Vec<f64>,
}

/// Centers of `n` equal cells covering [a, b].
pub fn cell_centers(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / n as f64;
    (0..n).map(|i| a + (i as f64 + 0.5) * h).collect()
}

impl GridDensity {
    pub fn new(points: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points.len() != density.len() {
            return Err(Error::InvalidInput(format!(
                "density needs at least two points and matching lengths ({} points, {} values)",
                points.len(),
                density.len()
            )));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("density grid must be finite and strictly increasing".into()));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidInput("density values must be finite and nonnegative".into()));
        }
        Ok(Self { points, density })
    }

    pub fn from_fn(points: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let density = points.iter().map(|&x| f(x)).collect();
        Self::new(points, density)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cell boundaries; `edges()[i]..edges()[i+1]` is the cell of point `i`.
    pub fn edges(&self) -> Vec<f64> {
        let p = &self.points;
        let n = p.len();
        let mut e = Vec::with_capacity(n + 1);
        e.push(p[0] - 0.5 * (p[1] - p[0]));
        for i in 1..n {
            e.push(0.5 * (p[i - 1] + p[i]));
        }
        e.push(p[n - 1] + 0.5 * (p[n - 1] - p[n - 2]));
        e
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges().windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.density.iter().zip(self.widths()).map(|(d, w)| d * w).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    /// Rescaled to unit mass.
    pub fn normalized(&self) -> Result<Self> {
        let total = self.total_mass();
        if !(total > 0.0) {
            return Err(Error::EmptySupport("density"));
        }
        Ok(Self { points: self.points.clone(), density: self.density.iter().map(|d| d / total).collect() })
    }

    /// Normalized cumulative mass at each cell edge.
    pub fn cdf_at_edges(&self) -> Vec<f64> {
        let masses = self.masses();
        let total: f64 = masses.iter().sum();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(masses.len() + 1);
        out.push(0.0);
        for m in masses {
            acc += m;
            out.push(acc / total);
        }
        *out.last_mut().unwrap() = 1.0;
        out
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let e = self.edges();
        let c = self.cdf_at_edges();
        interp_clamped(&e, &c, x)
    }

    /// Generalized inverse of the CDF; plateaus resolve to their left end.
    pub fn quantile(&self, p: f64) -> f64 {
        quantile_from(&self.edges(), &self.cdf_at_edges(), p)
    }

    pub fn mean(&self) -> f64 {
        let m = self.masses();
        let total: f64 = m.iter().sum();
        m.iter().zip(&self.points).map(|(m, x)| m * x).sum::<f64>() / total
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let m = self.masses();
        let total: f64 = m.iter().sum();
        m.iter().zip(&self.points).map(|(m, x)| m * (x - mu) * (x - mu)).sum::<f64>() / total
    }

    /// Drops points carrying no mass (used before kernel scaling).
    pub fn support_indices(&self) -> Vec<usize> {
        self.masses().iter().enumerate().filter(|(_, m)| **m > 0.0).map(|(i, _)| i).collect()
    }
}

fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = linalg::locate(xs, x);
    let w = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] * (1.0 - w) + ys[k + 1] * w
}

fn quantile_from(edges: &[f64], cdf: &[f64], p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    // first edge whose cumulative mass reaches p
    let k = cdf.partition_point(|c| *c < p);
    if k == 0 {
        return edges[0];
    }
    if k >= cdf.len() {
        return edges[edges.len() - 1];
    }
    let (c0, c1) = (cdf[k - 1], cdf[k]);
    let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
    edges[k - 1] + w * (edges[k] - edges[k - 1])
}

/// W₁ between two 1-D densities: ∫|F_a − F_b| dx, exact for the piecewise
/// linear CDFs.
pub fn wasserstein1(a: &GridDensity, b: &GridDensity) -> f64 {
    let (ea, ca) = (a.edges(), a.cdf_at_edges());
    let (eb, cb) = (b.edges(), b.cdf_at_edges());
    let mut knots: Vec<f64> = ea.iter().chain(&eb).cloned().collect();
    knots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    knots.dedup();
    let diff = |x: f64| interp_clamped(&ea, &ca, x) - interp_clamped(&eb, &cb, x);
    let mut total = 0.0;
    let mut d0 = diff(knots[0]);
    for w in knots.windows(2) {
        let d1 = diff(w[1]);
        let h = w[1] - w[0];
        total += if d0 * d1 >= 0.0 {
            0.5 * (d0.abs() + d1.abs()) * h
        } else {
            0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs()) * h
        };
        d0 = d1;
    }
    total
}

/// Mass-conserving deposition of weighted particles onto a grid: each
/// particle's mass is split linearly between its two neighbouring points.
/// Particles beyond the grid land on the nearest end point.
pub fn deposit(particles: &[f64], masses: &[f64], points: &[f64]) -> Result<GridDensity> {
    let mut acc = vec![0.0; points.len()];
    let last = points.len() - 1;
    for (&x, &m) in particles.iter().zip(masses) {
        if x <= points[0] {
            acc[0] += m;
        } else if x >= points[last] {
            acc[last] += m;
        } else {
            let k = linalg::locate(points, x);
            let w = (x - points[k]) / (points[k + 1] - points[k]);
            acc[k] += m * (1.0 - w);
            acc[k + 1] += m * w;
        }
    }
    let shell = GridDensity::new(points.to_vec(), vec![1.0; points.len()])?;
    let density = acc.iter().zip(shell.widths()).map(|(m, w)| m / w).collect();
    GridDensity::new(points.to_vec(), density)
}

/// Piecewise-cosine example marginal on [0, 1] (unnormalized, total mass 2).
pub fn piecewise_cosine_rho0(x: f64) -> f64 {
    use std::f64::consts::PI;
    if (0.0..2.0 / 3.0).contains(&x) {
        0.2 - 0.2 * (3.0 * PI * x).cos() + 0.2
    } else if (2.0 / 3.0..=1.0).contains(&x) {
        5.0 - 5.0 * (6.0 * PI * x - 4.0 * PI).cos() + 0.2
    } else {
        0.0
    }
}

pub fn piecewise_cosine_rho1(x: f64) -> f64 {
    piecewise_cosine_rho0(1.0 - x)
}

/// Named built-in densities on `n` cell centers of [0, 1], normalized.
pub fn builtin_density(name: &str, n: usize) -> Result<GridDensity> {
    let f: fn(f64) -> f64 = match name {
        "paper62_rho0" => piecewise_cosine_rho0,
        "paper62_rho1" => piecewise_cosine_rho1,
        other => return Err(Error::InvalidInput(format!("unknown built-in density '{other}'"))),
    };
    GridDensity::from_fn(cell_centers(0.0, 1.0, n), f)?.normalized()
}

/// Samples (x, T(x)) of a scalar transport map on the source grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap1D {
    source: Vec<f64>,
    target: Vec<f64>,
}

impl TransportMap1D {
    pub fn new(source: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        if source.len() != target.len() || source.len() < 2 {
            return Err(Error::InvalidInput("transport map needs matching source/target samples".into()));
        }
        if source.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("transport map source must be strictly increasing".into()));
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Linear interpolation between samples, constant beyond them.
    pub fn eval(&self, x: f64) -> f64 {
        interp_clamped(&self.source, &self.target, x)
    }

    pub fn is_monotone(&self) -> bool {
        self.target.windows(2).all(|w| w[1] >= w[0])
    }
}

fn require_scalar(tbl: &TransitionTable) -> Result<(f64, f64)> {
    if tbl.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "grid densities need a scalar state, system has {} states",
            tbl.dim()
        )));
    }
    let phi = tbl.phi10()[(0, 0)];
    if phi == 0.0 || !phi.is_finite() {
        return Err(Error::Singular { what: "Φ(1,0)", cond: f64::INFINITY });
    }
    Ok((phi, tbl.m10()[(0, 0)].sqrt()))
}

/// Rescales the grid by `scale` and multiplies the density by `jac`.
fn affine_image(rho: &GridDensity, scale: f64, jac: f64) -> Result<GridDensity> {
    let mut pts: Vec<f64> = rho.points.iter().map(|x| x * scale).collect();
    let mut dens: Vec<f64> = rho.density.iter().map(|d| d * jac).collect();
    if scale < 0.0 {
        pts.reverse();
        dens.reverse();
    }
    GridDensity::new(pts, dens)?.normalized()
}

/// Marginals in the reduced coordinates x̂ = M₁₀^{-1/2}Φ₁₀x, ŷ = M₁₀^{-1/2}y:
/// ρ̂₀(x̂) = |M₁₀|^{1/2}|Φ₁₀|⁻¹ρ₀(x) and ρ̂₁(ŷ) = |M₁₀|^{1/2}ρ₁(y).
pub fn reduce_marginals(
    tbl: &TransitionTable,
    rho0: &GridDensity,
    rho1: &GridDensity,
) -> Result<(GridDensity, GridDensity)> {
    let (phi, s) = require_scalar(tbl)?;
    Ok((affine_image(rho0, phi / s, s / phi.abs())?, affine_image(rho1, 1.0 / s, s)?))
}

/// Gaussian marginals in reduced coordinates (any dimension).
pub fn reduce_gaussian(
    tbl: &TransitionTable,
    s0: &GaussianState,
    s1: &GaussianState,
) -> Result<(GaussianState, GaussianState)> {
    let m_inv_sqrt = linalg::inv_sqrt_pd(tbl.m10())?;
    let c0 = &m_inv_sqrt * tbl.phi10();
    let h0 = GaussianState::new(&c0 * &s0.mean, linalg::symmetrize(&(&c0 * &s0.cov * c0.transpose())))?;
    let h1 = GaussianState::new(
        &m_inv_sqrt * &s1.mean,
        linalg::symmetrize(&(&m_inv_sqrt * &s1.cov * &m_inv_sqrt)),
    )?;
    Ok((h0, h1))
}

/// Monotone rearrangement T̂ = F₁⁻¹∘F₀ sampled on the source grid.
pub fn monotone_map_1d(rho0: &GridDensity, rho1: &GridDensity) -> Result<TransportMap1D> {
    if !(rho0.total_mass() > 0.0) {
        return Err(Error::EmptySupport("source density"));
    }
    if !(rho1.total_mass() > 0.0) {
        return Err(Error::EmptySupport("target density"));
    }
    let (e0, c0) = (rho0.edges(), rho0.cdf_at_edges());
    let (e1, c1) = (rho1.edges(), rho1.cdf_at_edges());
    let target = rho0
        .points
        .iter()
        .map(|&x| quantile_from(&e1, &c1, interp_clamped(&e0, &c0, x)))
        .collect();
    TransportMap1D::new(rho0.points.clone(), target)
}

/// T(x) = M₁₀^{1/2} T̂(M₁₀^{-1/2}Φ₁₀x), sampled at the preimages of the
/// reduced source grid.
pub fn lift_map(tbl: &TransitionTable, t_hat: &TransportMap1D) -> Result<TransportMap1D> {
    let (phi, s) = require_scalar(tbl)?;
    let mut source: Vec<f64> = t_hat.source.iter().map(|xh| xh * s / phi).collect();
    let mut target: Vec<f64> = t_hat.target.iter().map(|yh| yh * s).collect();
    if phi < 0.0 {
        source.reverse();
        target.reverse();
    }
    TransportMap1D::new(source, target)
}

/// Full pipeline: reduce, rearrange, lift.
pub fn omt_map(tbl: &TransitionTable, rho0: &GridDensity, rho1: &GridDensity) -> Result<TransportMap1D> {
    let (h0, h1) = reduce_marginals(tbl, rho0, rho1)?;
    lift_map(tbl, &monotone_map_1d(&h0, &h1)?)
}

/// Coefficients (α(t), β(t)) of T_t(x) = α(t)x + β(t)T(x):
/// α = Φ(t,1)M(1,t)M₁₀⁻¹Φ₁₀ and β = M(t,0)Φ(1,t)'M₁₀⁻¹.
pub fn displacement_coefficients(tbl: &TransitionTable, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let bp = tbl.backward_pair(t)?;
    let phi10_inv = tbl
        .phi10()
        .clone()
        .try_inverse()
        .ok_or(Error::Singular { what: "Φ(1,0)", cond: f64::INFINITY })?;
    let phi_t1 = &bp.phi_t0 * phi10_inv;
    let alpha = phi_t1 * &bp.m_1t * tbl.m10_inv() * tbl.phi10();
    let beta = &bp.m_t0 * bp.phi_1t.transpose() * tbl.m10_inv();
    Ok((alpha, beta))
}

/// Pushforward of ρ₀ at time `t`: particle positions plus their histogram.
#[derive(Debug, Clone)]
pub struct Interpolant {
    pub density: GridDensity,
    pub particles: Vec<f64>,
    pub masses: Vec<f64>,
}

/// Displacement interpolation with prior dynamics, deposited on `eval_points`.
pub fn displacement_interp(
    tbl: &TransitionTable,
    t_map: &TransportMap1D,
    rho0: &GridDensity,
    t: f64,
    eval_points: &[f64],
) -> Result<Interpolant> {
    require_scalar(tbl)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    let (alpha, beta) = displacement_coefficients(tbl, t)?;
    let (a, b) = (alpha[(0, 0)], beta[(0, 0)]);
    let masses = rho0.normalized()?.masses();
    let particles: Vec<f64> = rho0.points.iter().map(|&x| a * x + b * t_map.eval(x)).collect();
    let density = deposit(&particles, &masses, eval_points)?;
    Ok(Interpolant { density, particles, masses })
}

/// Nonnegative coupling matrix between two 1-D grids.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCoupling {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub plan: DMatrix<f64>,
}

impl DiscreteCoupling {
    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.row_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.plan.column_iter().map(|c| c.sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.plan.sum()
    }
}

pub enum TransportPlan<'a> {
    Map(&'a TransportMap1D),
    Coupling(&'a DiscreteCoupling),
}

fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// ∫ ½(y − Φ₁₀x)'M₁₀⁻¹(y − Φ₁₀x) dπ(x, y) for a map or a coupling whose
/// source marginal is ρ₀.
pub fn transport_cost(tbl: &TransitionTable, plan: TransportPlan<'_>, rho0: &GridDensity) -> Result<f64> {
    let (phi, s) = require_scalar(tbl)?;
    let m = s * s;
    let masses = rho0.normalized()?.masses();
    match plan {
        TransportPlan::Map(map) => {
            if !same_grid(map.source(), rho0.points()) {
                return Err(Error::InvalidInput("map must be sampled on the source grid".into()));
            }
            Ok(masses
                .iter()
                .zip(map.source.iter().zip(&map.target))
                .map(|(w, (x, y))| w * 0.5 * (y - phi * x).powi(2) / m)
                .sum())
        }
        TransportPlan::Coupling(c) => {
            if !same_grid(&c.source, rho0.points()) {
                return Err(Error::InvalidInput("coupling must live on the source grid".into()));
            }
            let deviation: f64 = c.row_sums().iter().zip(&masses).map(|(r, w)| (r - w).abs()).sum();
            if deviation > 1e-6 {
                return Err(Error::MassMismatch { deviation });
            }
            let mut cost = 0.0;
            for (i, x) in c.source.iter().enumerate() {
                for (j, y) in c.target.iter().enumerate() {
                    cost += c.plan[(i, j)] * 0.5 * (y - phi * x).powi(2) / m;
                }
            }
            Ok(cost)
        }
    }
}

/// ½∫|T(x) − x|² dρ(x): classical quadratic cost of a map.
pub fn quadratic_cost(rho: &GridDensity, map: &TransportMap1D) -> Result<f64> {
    if !same_grid(map.source(), rho.points()) {
        return Err(Error::InvalidInput("map must be sampled on the density grid".into()));
    }
    let masses = rho.normalized()?.masses();
    Ok(masses.iter().zip(map.source.iter().zip(&map.target)).map(|(w, (x, y))| w * 0.5 * (y - x).powi(2)).sum())
}

/// Values ψ(0, y) at scattered points y.
#[derive(Debug, Clone)]
pub struct ScalarFieldGrid {
    pub points: Vec<DVector<f64>>,
    pub values: Vec<f64>,
}

impl ScalarFieldGrid {
    pub fn new(points: Vec<DVector<f64>>, values: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != values.len() {
            return Err(Error::InvalidInput("scalar field needs matching points and values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("scalar field values must be finite".into()));
        }
        Ok(Self { points, values })
    }

    pub fn scalar(points: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(points.iter().map(|&y| DVector::from_element(1, y)).collect(), points.iter().map(|&y| f(y)).collect())
    }
}

/// ψ(t,x) = min_y {ψ(0,y) + ½(x − Φ(t,0)y)'M(t,0)⁻¹(x − Φ(t,0)y)} by
/// exhaustive scan over the tabulated points.
pub fn hopf_lax_psi(tbl: &TransitionTable, psi0: &ScalarFieldGrid, t: f64, x: &DVector<f64>) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::OutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    let (phi, m) = tbl.state_at(t)?;
    let m_inv = linalg::inverse_checked(&m, "M(t,0)", 1e14)?;
    Ok(psi0
        .points
        .iter()
        .zip(&psi0.values)
        .map(|(y, v)| {
            let r = x - &phi * y;
            v + 0.5 * linalg::quad_form(&m_inv, &r)
        })
        .fold(f64::INFINITY, f64::min))
}

/// Max finite-difference residual of ∂ψ/∂t + x'A'∇ψ + ½∇ψ'BB'∇ψ for the
/// Hopf–Lax ψ at the probe points (central differences with step `delta`).
pub fn hj_residual_grid(
    tbl: &TransitionTable,
    psi0: &ScalarFieldGrid,
    probes: &[(f64, DVector<f64>)],
    delta: f64,
) -> Result<f64> {
    let sys = tbl.system();
    let mut worst: f64 = 0.0;
    for (t, x) in probes {
        if !(*t - delta > 0.0 && *t + delta <= 1.0) {
            return Err(Error::OutOfRange { t: *t, lo: delta, hi: 1.0 - delta });
        }
        let psi_t = (hopf_lax_psi(tbl, psi0, t + delta, x)? - hopf_lax_psi(tbl, psi0, t - delta, x)?) / (2.0 * delta);
        let mut grad = DVector::zeros(x.len());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += delta;
            xm[i] -= delta;
            grad[i] = (hopf_lax_psi(tbl, psi0, *t, &xp)? - hopf_lax_psi(tbl, psi0, *t, &xm)?) / (2.0 * delta);
        }
        let drift = x.dot(&(sys.a(*t).transpose() * &grad));
        let quad = 0.5 * linalg::quad_form(&sys.bbt(*t), &grad);
        worst = worst.max((psi_t + drift + quad).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::LinearSystem;

    fn gauss(points: Vec<f64>, mu: f64, sd: f64) -> GridDensity {
        GridDensity::from_fn(points, |x| (-(x - mu) * (x - mu) / (2.0 * sd * sd)).exp()).unwrap().normalized().unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridDensity::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(GridDensity::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(GridDensity::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        let z = GridDensity::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(z.normalized(), Err(Error::EmptySupport(_))));
    }

    #[test]
    fn cdf_and_quantile_are_inverse() {
        let g = gauss(cell_centers(-6.0, 6.0, 400), 0.0, 1.0);
        assert!((g.total_mass() - 1.0).abs() < 1e-12);
        for p in [0.01, 0.2, 0.5, 0.77, 0.99] {
            assert!((g.cdf(g.quantile(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn plateau_quantile_takes_left_end() {
        let g = GridDensity::new(vec![0.5, 1.5, 2.5], vec![1.0, 0.0, 1.0]).unwrap();
        assert!((g.quantile(0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w1_of_a_shift() {
        let pts = cell_centers(-8.0, 10.0, 900);
        let a = gauss(pts.clone(), 0.0, 1.0);
        let b = gauss(pts, 1.5, 1.0);
        assert!((wasserstein1(&a, &b) - 1.5).abs() < 1e-6);
        assert!(wasserstein1(&a, &a) == 0.0);
    }

    #[test]
    fn deposition_conserves_mass() {
        let pts = cell_centers(0.0, 1.0, 10);
        let d = deposit(&[0.33, 0.51, -1.0, 2.0], &[0.25; 4], &pts).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_map_for_equal_densities() {
        let g = gauss(cell_centers(-6.0, 6.0, 300), 0.3, 1.2);
        let t = monotone_map_1d(&g, &g).unwrap();
        for (x, y) in t.source().iter().zip(t.target()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_quantile_map() {
        let g0 = gauss(cell_centers(-8.0, 8.0, 2000), 0.0, 1.0);
        let g1 = gauss(cell_centers(-14.0, 18.0, 4000), 2.0, 2.0);
        let t = monotone_map_1d(&g0, &g1).unwrap();
        assert!(t.is_monotone());
        for (x, y) in t.source().iter().zip(t.target()) {
            if x.abs() <= 3.0 {
                assert!((y - (2.0 + 2.0 * x)).abs() < 1e-3, "x={x} T={y}");
            }
        }
    }

    #[test]
    fn empty_support_is_an_error() {
        let g = gauss(cell_centers(-3.0, 3.0, 20), 0.0, 1.0);
        let z = GridDensity::new(g.points().to_vec(), vec![0.0; 20]).unwrap();
        assert!(matches!(monotone_map_1d(&z, &g), Err(Error::EmptySupport(_))));
        assert!(matches!(monotone_map_1d(&g, &z), Err(Error::EmptySupport(_))));
    }

    #[test]
    fn trivial_reduction_is_identity() {
        let tbl = TransitionTable::build(&LinearSystem::trivial(1), 50).unwrap();
        let g0 = gauss(cell_centers(-5.0, 5.0, 100), 0.0, 1.0);
        let g1 = gauss(cell_centers(-5.0, 5.0, 100), 1.0, 0.5);
        let (h0, h1) = reduce_marginals(&tbl, &g0, &g1).unwrap();
        for (a, b) in [(&h0, &g0), (&h1, &g1)] {
            for (x, y) in a.points().iter().zip(b.points()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.density().iter().zip(b.density()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_reduction_of_a_gaussian() {
        let tbl = TransitionTable::build(&LinearSystem::scalar(-2.0, 1.0), 200).unwrap();
        let g0 = gauss(cell_centers(-7.0, 7.0, 1400), 0.0, 1.0);
        let (h0, _) = reduce_marginals(&tbl, &g0, &g0).unwrap();
        let phi = (-2f64).exp();
        let m = (1.0 - (-4f64).exp()) / 4.0;
        let expected_var = phi * phi / m;
        assert!((h0.total_mass() - 1.0).abs() < 1e-12);
        assert!((h0.variance() / expected_var - 1.0).abs() < 1e-4, "{}", h0.variance());
        // closed-form density check at a few points
        let sd = expected_var.sqrt();
        for (x, d) in h0.points().iter().zip(h0.density()).step_by(97) {
            let exact = (-(x * x) / (2.0 * expected_var)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            assert!((d - exact).abs() < 1e-6 * (1.0 + exact));
        }
    }

    #[test]
    fn gaussian_reduction_in_two_dimensions() {
        let tbl = TransitionTable::build(&LinearSystem::trivial(2), 50).unwrap();
        let s = GaussianState::new(DVector::from_column_slice(&[1.0, 2.0]), DMatrix::identity(2, 2) * 2.0).unwrap();
        let (h0, h1) = reduce_gaussian(&tbl, &s, &s).unwrap();
        assert!((h0.cov - &s.cov).amax() < 1e-12 && (h1.mean - &s.mean).amax() < 1e-12);
    }

    #[test]
    fn lift_examples() {
        let tbl = TransitionTable::build(&LinearSystem::scalar(-2.0, 1.0), 200).unwrap();
        let phi = tbl.phi10()[(0, 0)];
        let s = tbl.m10()[(0, 0)].sqrt();
        let xs = cell_centers(-1.0, 1.0, 50);
        let that = TransportMap1D::new(xs.clone(), xs.iter().map(|x| 0.5 + x * x * x).collect()).unwrap();
        let t = lift_map(&tbl, &that).unwrap();
        for x in [-0.03, 0.0, 0.02, 0.05] {
            let direct = s * that.eval(phi * x / s);
            assert!((t.eval(x) - direct).abs() < 1e-12);
        }
        // identity in reduced coordinates is free flow
        let id = TransportMap1D::new(xs.clone(), xs.clone()).unwrap();
        let free = lift_map(&tbl, &id).unwrap();
        for (x, y) in free.source().iter().zip(free.target()) {
            assert!((y - phi * x).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_displacement_is_straight_line() {
        let tbl = TransitionTable::build(&LinearSystem::trivial(1), 100).unwrap();
        let g0 = gauss(cell_centers(-5.0, 5.0, 200), 0.0, 1.0);
        let g1 = gauss(cell_centers(-5.0, 5.0, 200), 1.0, 0.7);
        let map = omt_map(&tbl, &g0, &g1).unwrap();
        let eval = cell_centers(-5.0, 5.0, 200);
        let i0 = displacement_interp(&tbl, &map, &g0, 0.0, &eval).unwrap();
        for (a, b) in i0.density.density().iter().zip(g0.density()) {
            assert!((a - b).abs() < 1e-12);
        }
        let t = 0.3;
        let it = displacement_interp(&tbl, &map, &g0, t, &eval).unwrap();
        for (k, x) in g0.points().iter().enumerate() {
            assert!((it.particles[k] - ((1.0 - t) * x + t * map.eval(*x))).abs() < 1e-12);
        }
        assert!(matches!(displacement_interp(&tbl, &map, &g0, 1.5, &eval), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn cost_examples() {
        let tbl = TransitionTable::build(&LinearSystem::trivial(1), 50).unwrap();
        let pts = cell_centers(-8.0, 8.0, 1600);
        let g0 = gauss(pts.clone(), 0.0, 1.0);
        let shift = TransportMap1D::new(pts.clone(), pts.iter().map(|x| x + 2.0).collect()).unwrap();
        assert!((transport_cost(&tbl, TransportPlan::Map(&shift), &g0).unwrap() - 2.0).abs() < 1e-12);
        let stable = TransitionTable::build(&LinearSystem::scalar(-2.0, 1.0), 200).unwrap();
        let free = TransportMap1D::new(pts.clone(), pts.iter().map(|x| stable.phi10()[(0, 0)] * x).collect()).unwrap();
        assert!(transport_cost(&stable, TransportPlan::Map(&free), &g0).unwrap().abs() < 1e-20);
        let c = DiscreteCoupling {
            source: pts.clone(),
            target: pts.clone(),
            plan: DMatrix::from_element(1600, 1600, 1.0 / (1600.0 * 1600.0)),
        };
        assert!(matches!(
            transport_cost(&tbl, TransportPlan::Coupling(&c), &g0),
            Err(Error::MassMismatch { .. })
        ));
    }

    #[test]
    fn hopf_lax_trivial_cases() {
        let tbl = TransitionTable::build(&LinearSystem::trivial(1), 100).unwrap();
        let ys = cell_centers(-3.0, 3.0, 601);
        let zero = ScalarFieldGrid::scalar(&ys, |_| 0.0).unwrap();
        let x = DVector::from_element(1, ys[300]);
        assert!(hopf_lax_psi(&tbl, &zero, 0.5, &x).unwrap().abs() < 1e-15);
        let konst = ScalarFieldGrid::scalar(&ys, |_| 1.25).unwrap();
        assert!((hopf_lax_psi(&tbl, &konst, 0.7, &x).unwrap() - 1.25).abs() < 1e-15);
        assert!(matches!(hopf_lax_psi(&tbl, &zero, 0.0, &x), Err(Error::OutOfRange { .. })));
    }
}
