//! Strict polyharmonic-spline regression through uncertain measurements.
//!
//! The model is `p(x) = sum_i w_i |x - x_i|^3 + v . (1, x)`. For a smoothing
//! parameter `rho` the weights solve the saddle-point system
//!
//! ```text
//! [ Phi + rho diag(sigma^2)   V^T ] [w]   [y]
//! [ V                         0   ] [v] = [0]
//! ```
//!
//! so that `p(x_i) - y_i + rho sigma_i^2 w_i = 0` at every datapoint. `rho` is
//! chosen so that the normalized misfit `T(rho) = sum ((p(x_i) - y_i)/sigma_i)^2`
//! equals one, unless the weighted linear fit already achieves `T <= 1`. The
//! result is then tightened, if needed, until every residual is within
//! `beta` standard deviations.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{squared_distance, Point};

/// Weight floor applied to zero standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-12;
/// Safeguarded Newton iterations on `log rho` before falling back to bisection.
pub const NEWTON_CAP: usize = 100;
/// Halvings of `rho` tried before dropping to interpolation.
pub const MAX_HALVINGS: usize = 64;
/// Target accuracy for `|T(rho) - 1|`.
pub const MISFIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("regression system is numerically singular")]
    SingularSystem,
    #[error("smoothing-parameter search did not converge (|T - 1| = {0:e})")]
    NonConvergence(f64),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("strictness constant must be positive")]
    InvalidBeta,
}

/// Measurements `y_i` with standard deviations `sigma_i` at distinct points.
#[derive(Clone, Debug)]
pub struct WeightedDataset {
    points: Vec<Point>,
    values: Vec<f64>,
    sigmas: Vec<f64>,
}

impl WeightedDataset {
    pub fn new(
        points: Vec<Point>,
        values: Vec<f64>,
        sigmas: Vec<f64>,
    ) -> Result<Self, RegressionError> {
        if points.len() != values.len() || points.len() != sigmas.len() {
            return Err(RegressionError::InvalidData("length mismatch".into()));
        }
        let Some(first) = points.first() else {
            return Err(RegressionError::InvalidData("empty dataset".into()));
        };
        let n = first.dim();
        if n == 0 || points.iter().any(|p| p.dim() != n) {
            return Err(RegressionError::InvalidData(
                "inconsistent dimension".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RegressionError::InvalidData("non-finite value".into()));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(RegressionError::InvalidData(
                "negative or non-finite sigma".into(),
            ));
        }
        for i in 1..points.len() {
            for j in 0..i {
                if points[i].coords() == points[j].coords() {
                    return Err(RegressionError::InvalidData(format!(
                        "points {j} and {i} coincide"
                    )));
                }
            }
        }
        Ok(WeightedDataset {
            points,
            values,
            sigmas,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    fn effective_sigmas(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| s.max(SIGMA_FLOOR)).collect()
    }
}

/// How the returned model was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitBranch {
    /// Weighted linear least squares (`rho = infinity`) already had `T <= 1`.
    Linear,
    /// `T(rho) = 1` at a finite `rho`.
    Smoothing,
    /// `rho` was reduced below the `T(rho) = 1` root to restore strictness.
    Tightened,
    /// `rho = 0`.
    Interpolation,
}

/// A fitted polyharmonic spline `p(x)`.
#[derive(Clone, Debug)]
pub struct RegressionModel {
    centers: Vec<Point>,
    rbf_weights: Vec<f64>,
    linear_weights: Vec<f64>,
    rho: f64,
    beta_strict: f64,
    branch: FitBranch,
}

impl RegressionModel {
    /// Assemble a model from explicit weights.
    pub fn from_parts(
        centers: Vec<Point>,
        rbf_weights: Vec<f64>,
        linear_weights: Vec<f64>,
        rho: f64,
        beta_strict: f64,
    ) -> Self {
        assert_eq!(centers.len(), rbf_weights.len());
        assert_eq!(linear_weights.len(), centers[0].dim() + 1);
        RegressionModel {
            centers,
            rbf_weights,
            linear_weights,
            rho,
            beta_strict,
            branch: FitBranch::Smoothing,
        }
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn rbf_weights(&self) -> &[f64] {
        &self.rbf_weights
    }

    pub fn linear_weights(&self) -> &[f64] {
        &self.linear_weights
    }

    /// Smoothing parameter; `f64::INFINITY` for the pure linear fit.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn beta_strict(&self) -> f64 {
        self.beta_strict
    }

    pub fn branch(&self) -> FitBranch {
        self.branch
    }

    pub fn dim(&self) -> usize {
        self.linear_weights.len() - 1
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut s = self.linear_weights[0];
        for (v, xj) in self.linear_weights[1..].iter().zip(x) {
            s += v * xj;
        }
        for (c, w) in self.centers.iter().zip(&self.rbf_weights) {
            let r = squared_distance(x, c).sqrt();
            s += w * r * r * r;
        }
        s
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.linear_weights[1..].to_vec();
        for (c, w) in self.centers.iter().zip(&self.rbf_weights) {
            let r = squared_distance(x, c).sqrt();
            let f = 3.0 * w * r;
            for (gj, (xj, cj)) in g.iter_mut().zip(x.iter().zip(c.iter())) {
                *gj += f * (xj - cj);
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        for (c, w) in self.centers.iter().zip(&self.rbf_weights) {
            let r = squared_distance(x, c).sqrt();
            if r < 1e-300 {
                continue;
            }
            let f = 3.0 * w / r;
            for i in 0..n {
                h[(i, i)] += 3.0 * w * r;
                let di = f * (x[i] - c[i]);
                for j in 0..n {
                    h[(i, j)] += di * (x[j] - c[j]);
                }
            }
        }
        h
    }

    /// `|p(x_i) - y_i| / sigma_i` for each datapoint.
    pub fn strictness_residuals(&self, data: &WeightedDataset) -> Vec<f64> {
        data.points
            .iter()
            .zip(&data.values)
            .zip(data.effective_sigmas())
            .map(|((x, y), s)| (self.evaluate(x) - y).abs() / s)
            .collect()
    }

    pub fn is_strict(&self, data: &WeightedDataset) -> bool {
        self.strictness_residuals(data)
            .iter()
            .all(|r| *r <= self.beta_strict)
    }
}

/// The saddle-point system for a fixed dataset.
struct BlockSystem {
    m: usize,
    n1: usize,
    phi: DMatrix<f64>,
    sig2: Vec<f64>,
    rhs: DVector<f64>,
}

struct BlockSolution {
    w: DVector<f64>,
    v: DVector<f64>,
    lu: nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    a: DMatrix<f64>,
}

impl BlockSystem {
    fn new(data: &WeightedDataset) -> Self {
        let m = data.len();
        let n1 = data.dim() + 1;
        let phi = DMatrix::from_fn(m, m, |i, j| {
            let r = squared_distance(&data.points[i], &data.points[j]).sqrt();
            r * r * r
        });
        let sig2 = data.effective_sigmas().iter().map(|s| s * s).collect();
        let mut rhs = DVector::zeros(m + n1);
        for (i, y) in data.values.iter().enumerate() {
            rhs[i] = *y;
        }
        BlockSystem {
            m,
            n1,
            phi,
            sig2,
            rhs,
        }
    }

    fn matrix(&self, rho: f64, points: &[Point]) -> DMatrix<f64> {
        let size = self.m + self.n1;
        let mut a = DMatrix::zeros(size, size);
        a.view_mut((0, 0), (self.m, self.m)).copy_from(&self.phi);
        for i in 0..self.m {
            a[(i, i)] += rho * self.sig2[i];
            a[(i, self.m)] = 1.0;
            a[(self.m, i)] = 1.0;
            for (j, xj) in points[i].iter().enumerate() {
                a[(i, self.m + 1 + j)] = *xj;
                a[(self.m + 1 + j, i)] = *xj;
            }
        }
        a
    }

    fn solve(&self, rho: f64, points: &[Point]) -> Result<BlockSolution, RegressionError> {
        let a = self.matrix(rho, points);
        let lu = a.clone().lu();
        let x = refine(&a, &lu, &self.rhs)?;
        let w = x.rows(0, self.m).into_owned();
        let v = x.rows(self.m, self.n1).into_owned();
        Ok(BlockSolution { w, v, lu, a })
    }

    /// `T(rho)` and `dT/d(log rho)`.
    fn misfit(&self, rho: f64, sol: &BlockSolution) -> Result<(f64, f64), RegressionError> {
        let s2w2: f64 = (0..self.m)
            .map(|i| self.sig2[i] * sol.w[i] * sol.w[i])
            .sum();
        let t = rho * rho * s2w2;
        let mut b = DVector::zeros(self.m + self.n1);
        for i in 0..self.m {
            b[i] = -self.sig2[i] * sol.w[i];
        }
        let dx = refine(&sol.a, &sol.lu, &b)?;
        let cross: f64 = (0..self.m).map(|i| self.sig2[i] * sol.w[i] * dx[i]).sum();
        let dt_drho = 2.0 * rho * s2w2 + 2.0 * rho * rho * cross;
        Ok((t, rho * dt_drho))
    }
}

/// LU solve followed by one step of iterative refinement.
fn refine(
    a: &DMatrix<f64>,
    lu: &nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    b: &DVector<f64>,
) -> Result<DVector<f64>, RegressionError> {
    let mut x = lu.solve(b).ok_or(RegressionError::SingularSystem)?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RegressionError::SingularSystem);
    }
    Ok(x)
}

fn model_from(
    data: &WeightedDataset,
    sol: &BlockSolution,
    rho: f64,
    beta: f64,
    branch: FitBranch,
) -> RegressionModel {
    RegressionModel {
        centers: data.points.clone(),
        rbf_weights: sol.w.iter().cloned().collect(),
        linear_weights: sol.v.iter().cloned().collect(),
        rho,
        beta_strict: beta,
        branch,
    }
}

/// Weighted linear least squares, the `rho -> infinity` limit.
fn weighted_linear(data: &WeightedDataset) -> Result<(Vec<f64>, f64), RegressionError> {
    let m = data.len();
    let n1 = data.dim() + 1;
    let sig = data.effective_sigmas();
    let b = DMatrix::from_fn(m, n1, |i, j| {
        let x = if j == 0 { 1.0 } else { data.points[i][j - 1] };
        x / sig[i]
    });
    let rhs = DVector::from_fn(m, |i, _| data.values[i] / sig[i]);
    let svd = b.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-13 * smax) {
        return Err(RegressionError::SingularSystem);
    }
    let v = svd
        .solve(&rhs, 0.0)
        .map_err(|_| RegressionError::SingularSystem)?;
    let resid = &b * &v - rhs;
    Ok((v.iter().cloned().collect(), resid.norm_squared()))
}

/// Interpolating spline (`rho = 0`).
pub fn interpolate(data: &WeightedDataset) -> Result<RegressionModel, RegressionError> {
    let sys = BlockSystem::new(data);
    let sol = sys.solve(0.0, &data.points)?;
    Ok(model_from(
        data,
        &sol,
        0.0,
        f64::INFINITY,
        FitBranch::Interpolation,
    ))
}

/// Fit a strict regression with strictness constant `beta`.
pub fn fit(data: &WeightedDataset, beta: f64) -> Result<RegressionModel, RegressionError> {
    fit_with_guess(data, beta, None)
}

/// As [`fit`], starting the smoothing-parameter search at `rho_guess` (for
/// example the previous iteration's value).
pub fn fit_with_guess(
    data: &WeightedDataset,
    beta: f64,
    rho_guess: Option<f64>,
) -> Result<RegressionModel, RegressionError> {
    if !(beta > 0.0) {
        return Err(RegressionError::InvalidBeta);
    }
    if data.len() < data.dim() + 1 {
        return Err(RegressionError::InvalidData(
            "fewer points than linear-tail unknowns".into(),
        ));
    }
    if data.sigmas.iter().all(|s| *s == 0.0) {
        let mut model = interpolate(data)?;
        model.beta_strict = beta;
        return Ok(model);
    }
    let sys = BlockSystem::new(data);

    let (lin, t_inf) = weighted_linear(data)?;
    if t_inf <= 1.0 {
        let model = RegressionModel {
            centers: data.points.clone(),
            rbf_weights: vec![0.0; data.len()],
            linear_weights: lin,
            rho: f64::INFINITY,
            beta_strict: beta,
            branch: FitBranch::Linear,
        };
        if model.is_strict(data) {
            return Ok(model);
        }
        // Only reachable with beta < 1: start from a large rho whose fit is
        // close to the linear limit and tighten from there.
        let mut rho = rho_guess.unwrap_or(1.0).max(1.0);
        for _ in 0..200 {
            let sol = sys.solve(rho, &data.points)?;
            if sys.misfit(rho, &sol)?.0 >= 0.99 * t_inf {
                break;
            }
            rho *= 2.0;
        }
        return tighten(data, &sys, rho, beta);
    }

    let (rho, sol) = solve_unit_misfit(&sys, &data.points, rho_guess)?;
    let model = model_from(data, &sol, rho, beta, FitBranch::Smoothing);
    if model.is_strict(data) {
        return Ok(model);
    }
    tighten(data, &sys, rho, beta)
}

fn tighten(
    data: &WeightedDataset,
    sys: &BlockSystem,
    mut rho: f64,
    beta: f64,
) -> Result<RegressionModel, RegressionError> {
    for _ in 0..MAX_HALVINGS {
        rho *= 0.5;
        let sol = sys.solve(rho, &data.points)?;
        let model = model_from(data, &sol, rho, beta, FitBranch::Tightened);
        if model.is_strict(data) {
            return Ok(model);
        }
    }
    let sol = sys.solve(0.0, &data.points)?;
    Ok(model_from(data, &sol, 0.0, beta, FitBranch::Interpolation))
}

/// Find `rho` with `T(rho) = 1` by safeguarded Newton on `u = log rho`.
/// Requires `T(infinity) > 1`; `T(0) = 0` always.
fn solve_unit_misfit(
    sys: &BlockSystem,
    points: &[Point],
    rho_guess: Option<f64>,
) -> Result<(f64, BlockSolution), RegressionError> {
    let eval = |u: f64| -> Result<(f64, f64, BlockSolution), RegressionError> {
        let rho = u.exp();
        let sol = sys.solve(rho, points)?;
        let (t, d) = sys.misfit(rho, &sol)?;
        Ok((t, d, sol))
    };
    let guess = rho_guess
        .filter(|r| r.is_finite() && *r > 0.0)
        .unwrap_or(1.0);
    let mut u = guess.ln();
    let (mut t, mut d, mut sol) = eval(u)?;
    if (t - 1.0).abs() <= 1e-12 {
        return Ok((u.exp(), sol));
    }

    let (mut lo, mut hi);
    if t < 1.0 {
        lo = u;
        hi = u;
        let mut step = 2.0;
        let mut found = false;
        for _ in 0..200 {
            hi += step;
            step *= 1.5;
            let (th, _, _) = eval(hi)?;
            if th >= 1.0 {
                found = true;
                break;
            }
            lo = hi;
        }
        if !found {
            return Err(RegressionError::NonConvergence(t - 1.0));
        }
    } else {
        hi = u;
        lo = u;
        let mut step = 2.0;
        let mut found = false;
        for _ in 0..200 {
            lo -= step;
            step *= 1.5;
            let (tl, _, _) = eval(lo)?;
            if tl <= 1.0 {
                found = true;
                break;
            }
            hi = lo;
        }
        if !found {
            return Err(RegressionError::NonConvergence(t - 1.0));
        }
    }
    if !(u > lo && u < hi) {
        u = 0.5 * (lo + hi);
        (t, d, sol) = eval(u)?;
    }

    let mut iterations = 0;
    while (t - 1.0).abs() > 1e-12 && iterations < NEWTON_CAP + 200 {
        if t < 1.0 {
            lo = u;
        } else {
            hi = u;
        }
        let newton = u - (t - 1.0) / d;
        u = if iterations < NEWTON_CAP && d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        (t, d, sol) = eval(u)?;
        iterations += 1;
        if hi - lo < 1e-14 {
            break;
        }
    }
    if (t - 1.0).abs() > MISFIT_TOLERANCE {
        return Err(RegressionError::NonConvergence(t - 1.0));
    }
    Ok((u.exp(), sol))
}

/// Evaluate a model (free-function form).
pub fn evaluate(model: &RegressionModel, x: &[f64]) -> f64 {
    model.evaluate(x)
}

pub fn strictness_residuals(model: &RegressionModel, data: &WeightedDataset) -> Vec<f64> {
    model.strictness_residuals(data)
}

/// Normalized misfit `T = sum ((p(x_i) - y_i) / sigma_i)^2` of a model.
pub fn misfit(model: &RegressionModel, data: &WeightedDataset) -> f64 {
    model.strictness_residuals(data).iter().map(|r| r * r).sum()
}
