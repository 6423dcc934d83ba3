//! Search functions driving each iteration: the continuous search
//! `s_c(x) = p(x) - K e(x)` minimized over the box, and the discrete search
//! `s_d(x_i) = min{p(x_i), 2 y_i - p(x_i)} - alpha sigma_i` minimized over the
//! evaluated points.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{barycentric, Point, Simplex, SimplexId, Triangulation};
use crate::regression::RegressionModel;

/// Lower and upper saturation of the measurement scaling factor.
pub const SCALE_LOWER: f64 = 1e-3;
pub const SCALE_UPPER: f64 = 1e3;

/// Newton iterations per simplex subproblem.
pub const NEWTON_ITERATIONS: usize = 50;
/// Barycentric lattice resolution per edge for the sampled fallback.
pub const LATTICE_PER_EDGE: usize = 11;
/// Cap on lattice points per simplex in high dimensions.
const LATTICE_BUDGET: usize = 600;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("every simplex subproblem failed")]
    OptimizationFailure,
    #[error("search context is empty")]
    Empty,
}

/// A smooth model that can be searched.
pub trait Surrogate: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

impl Surrogate for RegressionModel {
    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        RegressionModel::gradient(self, x)
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        RegressionModel::hessian(self, x)
    }
}

/// Everything the search functions read in one iteration. `values` and
/// `sigmas` are the (scaled) measurements at the triangulation's points, in
/// the same order.
pub struct SearchContext<'a, P: Surrogate> {
    pub surrogate: &'a P,
    pub triangulation: &'a Triangulation,
    pub k: f64,
    pub alpha: f64,
    pub values: &'a [f64],
    pub sigmas: &'a [f64],
    pub parallel: bool,
}

impl<P: Surrogate> SearchContext<'_, P> {
    /// `s_c` at `x`, with `e` evaluated on the containing simplex.
    pub fn continuous_value(&self, x: &[f64]) -> Option<f64> {
        let e = self.triangulation.remoteness(x).ok()?;
        Some(self.surrogate.value(x) - self.k * e)
    }

    /// `s_d` at the `i`-th point.
    pub fn discrete_value(&self, i: usize) -> f64 {
        let p = self.surrogate.value(&self.triangulation.points()[i]);
        let y = self.values[i];
        p.min(2.0 * y - p) - self.alpha * self.sigmas[i]
    }
}

/// `s_d(x_i) = min{p, 2 y - p} - alpha sigma`.
pub fn discrete_value(p: f64, y: f64, sigma: f64, alpha: f64) -> f64 {
    p.min(2.0 * y - p) - alpha * sigma
}

/// Minimizer of `s_d` over the evaluated points; ties go to the lowest index.
pub fn discrete_search<P: Surrogate>(
    ctx: &SearchContext<'_, P>,
) -> Result<(usize, f64), SearchError> {
    let m = ctx.values.len();
    if m == 0 {
        return Err(SearchError::Empty);
    }
    let mut best = (0, ctx.discrete_value(0));
    for i in 1..m {
        let v = ctx.discrete_value(i);
        if v < best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousMin {
    pub z: Point,
    pub value: f64,
    pub simplex: SimplexId,
}

/// Global minimizer of `s_c` over the triangulated box, by local
/// minimization inside every simplex.
pub fn continuous_search<P: Surrogate>(
    ctx: &SearchContext<'_, P>,
) -> Result<ContinuousMin, SearchError> {
    let simplices: Vec<(SimplexId, &Simplex)> = ctx.triangulation.simplices().collect();
    if simplices.is_empty() {
        return Err(SearchError::Empty);
    }
    let solve = |&(id, s): &(SimplexId, &Simplex)| -> Option<ContinuousMin> {
        let verts = ctx.triangulation.vertex_coords(id);
        minimize_in_simplex(ctx.surrogate, ctx.k, s, &verts).map(|(z, value)| ContinuousMin {
            z: Point::new(z),
            value,
            simplex: id,
        })
    };
    let results: Vec<Option<ContinuousMin>> = if ctx.parallel {
        simplices.par_iter().map(solve).collect()
    } else {
        simplices.iter().map(solve).collect()
    };
    let mut best: Option<ContinuousMin> = None;
    for r in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    best.ok_or(SearchError::OptimizationFailure)
}

/// Which branch an iteration takes.
#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    /// Add samples at the point with this index.
    Supplemental(usize),
    /// Evaluate this new grid point (unit coordinates).
    Identifying(Point),
    /// Refine the grid and advance the schedule.
    Refinement,
}

/// Branch selection: supplemental sampling if `s_c(z) > s_d(x_j)` and the
/// point is under its sample cap `gamma 2^level`; otherwise identify the
/// quantized minimizer if it is new; otherwise refine.
pub fn classify_iteration(
    continuous_value: f64,
    discrete: (usize, f64),
    n_j: u64,
    gamma: f64,
    level: u32,
    quantized: Point,
    quantized_is_new: bool,
) -> Decision {
    let cap = gamma * 2f64.powi(level as i32);
    if continuous_value > discrete.1 && (n_j as f64) < cap {
        Decision::Supplemental(discrete.0)
    } else if quantized_is_new {
        Decision::Identifying(quantized)
    } else {
        Decision::Refinement
    }
}

/// Saturated scaling `r_s` of the measurement range to about unity.
pub fn measurement_scale(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return SCALE_UPPER;
    }
    let r = 1.0 / range;
    // r_l + R(r - r_l) - R(r - r_u)
    let ramp = |t: f64| t.max(0.0);
    SCALE_LOWER + ramp(r - SCALE_LOWER) - ramp(r - SCALE_UPPER)
}

/// Euclidean projection onto `{mu >= 0, sum mu <= 1}`.
fn project_corner_simplex(mu: &mut [f64]) {
    for m in mu.iter_mut() {
        *m = m.max(0.0);
    }
    let s: f64 = mu.iter().sum();
    if s <= 1.0 {
        return;
    }
    let mut sorted: Vec<f64> = mu.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if v - t > 0.0 {
            tau = t;
        }
    }
    for m in mu.iter_mut() {
        *m = (*m - tau).max(0.0);
    }
}

struct Local<'a, P: Surrogate> {
    p: &'a P,
    k: f64,
    simplex: &'a Simplex,
    verts: &'a [&'a [f64]],
}

impl<P: Surrogate> Local<'_, P> {
    /// Point with barycentric coordinates `lam`.
    fn point(&self, lam: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.verts[0].len()];
        for (v, l) in self.verts.iter().zip(lam) {
            for (xr, vr) in x.iter_mut().zip(v.iter()) {
                *xr += l * vr;
            }
        }
        x
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.p.value(x) - self.k * self.simplex.remoteness(x)
    }

    fn grad_hess(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::from_vec(self.p.gradient(x));
        let re = self.simplex.remoteness_gradient(x);
        for (gi, ri) in g.iter_mut().zip(re) {
            *gi -= self.k * ri;
        }
        let mut h = self.p.hessian(x);
        for i in 0..x.len() {
            h[(i, i)] += 2.0 * self.k;
        }
        (g, h)
    }
}

/// Lattice points `mu` with `sum mu <= 1` at spacing `1 / m`.
fn lattice(n: usize, m: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let s: usize = idx.iter().sum();
        if s <= m {
            out.push(idx.iter().map(|&i| i as f64 / m as f64).collect());
        }
        let mut j = 0;
        loop {
            if j == n {
                return out;
            }
            idx[j] += 1;
            if idx[j] <= m && idx.iter().sum::<usize>() <= m {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn lattice_resolution(n: usize) -> usize {
    let mut m = LATTICE_PER_EDGE - 1;
    while m > 2 && binomial(m + n, n) > LATTICE_BUDGET {
        m -= 1;
    }
    m
}

/// Projected Newton in barycentric coordinates. Each iteration uses the
/// vertex of largest weight as the chart origin, so only the bounds
/// `mu_i >= 0` can be active; the Newton system is reduced to the free
/// coordinates.
fn descend<P: Surrogate>(local: &Local<'_, P>, mut lam: Vec<f64>) -> (Vec<f64>, f64) {
    let n = lam.len() - 1;
    let mut x = local.point(&lam);
    let mut f = local.value(&x);
    for _ in 0..NEWTON_ITERATIONS {
        let o = (0..=n)
            .max_by(|&a, &b| lam[a].total_cmp(&lam[b]))
            .unwrap_or(0);
        let idx: Vec<usize> = (0..=n).filter(|&i| i != o).collect();
        let edges = DMatrix::from_fn(n, n, |r, c| local.verts[idx[c]][r] - local.verts[o][r]);
        let mu: Vec<f64> = idx.iter().map(|&i| lam[i]).collect();
        let (gx, hx) = local.grad_hess(&x);
        let g = edges.transpose() * gx;
        let h = edges.transpose() * hx * &edges;

        let mut probe: Vec<f64> = mu.iter().zip(g.iter()).map(|(m, gi)| m - gi).collect();
        project_corner_simplex(&mut probe);
        let pg = probe
            .iter()
            .zip(&mu)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if pg <= 1e-8 * f.abs().max(1.0) {
            break;
        }
        let eps = pg.min(1e-3);
        let free: Vec<usize> = (0..n).filter(|&i| !(mu[i] <= eps && g[i] > 0.0)).collect();
        let mut newton = vec![0.0; n];
        if !free.is_empty() {
            let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let gf = DVector::from_fn(free.len(), |a, _| g[free[a]]);
            let df = match hf.clone().cholesky() {
                Some(ch) => -ch.solve(&gf),
                None => {
                    let eig = hf.symmetric_eigen();
                    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let floor = (1e-8 * top).max(1e-12);
                    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(floor)));
                    -(&eig.eigenvectors * d * eig.eigenvectors.transpose() * &gf)
                }
            };
            for (a, &i) in free.iter().enumerate() {
                newton[i] = df[a];
            }
        }
        let gradient: Vec<f64> = probe.iter().zip(&mu).map(|(a, b)| a - b).collect();

        let mut accepted = None;
        for (dir, halvings) in [(&newton, 30), (&gradient, 30)] {
            let mut t = 1.0;
            for _ in 0..halvings {
                let mut trial: Vec<f64> = (0..n).map(|i| mu[i] + t * dir[i]).collect();
                project_corner_simplex(&mut trial);
                let mut lt = vec![0.0; n + 1];
                lt[o] = 1.0 - trial.iter().sum::<f64>();
                for (a, &i) in idx.iter().enumerate() {
                    lt[i] = trial[a];
                }
                let xt = local.point(&lt);
                let ft = local.value(&xt);
                let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - mu[i])).sum();
                if ft <= f + 1e-4 * decrease && ft < f {
                    let step = (0..n).map(|i| (trial[i] - mu[i]).abs()).fold(0.0, f64::max);
                    accepted = Some((lt, xt, ft, step));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((lt, xt, ft, step)) = accepted else {
            break;
        };
        let stalled = f - ft <= 1e-13 * f.abs().max(1.0) || step <= 1e-12;
        lam = lt;
        x = xt;
        f = ft;
        if stalled {
            break;
        }
    }
    (x, f)
}

/// Minimize `p - K e_i` over one simplex by projected Newton from the
/// barycenter and the projected circumcenter. The vertices are always
/// candidates; a barycentric lattice is scanned only if both descents fail.
fn minimize_in_simplex<P: Surrogate>(
    p: &P,
    k: f64,
    simplex: &Simplex,
    verts: &[&[f64]],
) -> Option<(Vec<f64>, f64)> {
    let n = verts.len() - 1;
    let local = Local {
        p,
        k,
        simplex,
        verts,
    };

    let mut starts: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64 + 1.0); n + 1]];
    if let Some(mut lam) = barycentric(verts, simplex.circumcenter()) {
        project_corner_simplex(&mut lam[1..]);
        lam[0] = 1.0 - lam[1..].iter().sum::<f64>();
        starts.push(lam);
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let keep = |x: Vec<f64>, f: f64, best: &mut Option<(Vec<f64>, f64)>| {
        if f.is_finite() && best.as_ref().is_none_or(|(_, b)| f < *b) {
            *best = Some((x, f));
        }
    };
    for s in starts {
        let (x, f) = descend(&local, s);
        keep(x, f, &mut best);
    }
    if best.is_none() {
        for mu in lattice(n, lattice_resolution(n)) {
            let mut lam = vec![1.0 - mu.iter().sum::<f64>()];
            lam.extend(mu);
            let x = local.point(&lam);
            let f = local.value(&x);
            keep(x, f, &mut best);
        }
    }
    for v in verts {
        let f = local.value(v);
        keep(v.to_vec(), f, &mut best);
    }
    best
}
