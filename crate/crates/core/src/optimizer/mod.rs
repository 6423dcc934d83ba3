//! The optimization loops: alpha-DOGS, which decides per iteration whether to
//! sample an existing point further, evaluate a new grid point, or refine the
//! grid; and the fixed-sampling Delta-DOGS baseline.

mod records;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Point, Triangulation, MAX_DIMENSION};
use crate::grid::{GridError, GridKey, GridLevel, MAX_LEVEL};
use crate::regression::{self, RegressionError, WeightedDataset};
use crate::sampling::{
    initial_measure, point_stream, supplemental_measure, EvaluatedPoint, SamplerError,
    StochasticObjective,
};
use crate::search::{
    classify_iteration, continuous_search, discrete_search, measurement_scale, Decision,
    SearchContext, SearchError,
};

pub use records::{records_table, RECORD_SCHEMA_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("budget exhausted before the tolerance was met after {} records", history.len())]
    BudgetExhausted { history: Vec<IterationRecord> },
}

/// Tuning constants of alpha-DOGS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaDogsParams {
    pub alpha0: f64,
    pub alpha_delta: f64,
    pub k0: f64,
    pub ell0: u32,
    pub beta_strict: f64,
    pub gamma: f64,
    pub n0: u64,
    pub n_delta: u64,
    /// Solve the per-simplex search subproblems on the rayon pool.
    pub parallel_search: bool,
}

impl Default for AlphaDogsParams {
    fn default() -> Self {
        AlphaDogsParams {
            alpha0: 0.5,
            alpha_delta: 0.5,
            k0: 0.5,
            ell0: 3,
            beta_strict: 4.0,
            gamma: 100.0,
            n0: 1,
            n_delta: 1,
            parallel_search: true,
        }
    }
}

impl AlphaDogsParams {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let positive = [
            ("alpha0", self.alpha0),
            ("alpha_delta", self.alpha_delta),
            ("k0", self.k0),
            ("beta_strict", self.beta_strict),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(OptimizerError::InvalidParams(format!(
                    "{name} must be positive"
                )));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 1.0) {
            return Err(OptimizerError::InvalidParams(
                "gamma must be at least 1".into(),
            ));
        }
        if self.n0 == 0 || self.n_delta == 0 {
            return Err(OptimizerError::InvalidParams(
                "sample counts must be positive".into(),
            ));
        }
        if self.ell0 > MAX_LEVEL {
            return Err(OptimizerError::Grid(GridError::LevelTooFine(self.ell0)));
        }
        Ok(())
    }
}

/// Settings of the Delta-DOGS baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeltaDogsParams {
    pub k: f64,
    pub ell0: u32,
    /// Samples averaged at every point.
    pub samples_per_point: u64,
    pub parallel_search: bool,
}

impl Default for DeltaDogsParams {
    fn default() -> Self {
        DeltaDogsParams {
            k: 3.0,
            ell0: 3,
            samples_per_point: 1,
            parallel_search: true,
        }
    }
}

impl From<&DeltaDogsParams> for AlphaDogsParams {
    fn from(d: &DeltaDogsParams) -> Self {
        AlphaDogsParams {
            k0: d.k,
            ell0: d.ell0,
            n0: d.samples_per_point,
            n_delta: d.samples_per_point,
            parallel_search: d.parallel_search,
            ..AlphaDogsParams::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    AlphaDogs,
    DeltaDogs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Initial,
    Supplemental,
    Identifying,
    Refinement,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Initial => "initial",
            Branch::Supplemental => "supplemental",
            Branch::Identifying => "identifying",
            Branch::Refinement => "refinement",
        }
    }
}

/// One row of the run history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub branch: Branch,
    /// Index of the point sampled or added, if any.
    pub target: Option<usize>,
    pub points: usize,
    pub cumulative_samples: u64,
    pub candidate_index: usize,
    pub candidate_location: Vec<f64>,
    pub candidate_y: f64,
    pub candidate_sigma: f64,
    pub regret: Option<f64>,
    /// Smallest regret seen so far.
    pub min_regret: Option<f64>,
    pub reference_error: f64,
    pub alpha: f64,
    pub k: f64,
    pub level: u32,
    /// Smoothing parameter of this iteration's regression.
    pub rho: Option<f64>,
}

/// Candidate point and its regret.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateReport {
    pub index: usize,
    pub location: Point,
    pub measurement: f64,
    pub sigma: f64,
    pub regret: Option<f64>,
    pub reference_error: f64,
}

/// When to stop. At least one limit must be set. With a tolerance, reaching
/// a limit first is an error carrying the history.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stopping {
    pub max_iterations: Option<u64>,
    pub max_samples: Option<u64>,
    pub tolerance: Option<Tolerance>,
}

/// Stop once some point has `|y - f*| <= value` and `sigma <= sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    pub value: f64,
    pub sigma: f64,
}

impl Stopping {
    pub fn iterations(n: u64) -> Self {
        Stopping {
            max_iterations: Some(n),
            ..Default::default()
        }
    }

    pub fn samples(n: u64) -> Self {
        Stopping {
            max_samples: Some(n),
            ..Default::default()
        }
    }

    pub fn tolerance(value: f64, sigma: f64) -> Self {
        Stopping {
            tolerance: Some(Tolerance { value, sigma }),
            ..Default::default()
        }
    }
}

/// `sigma0 / sqrt(k)`: the uncertainty had all `k` samples gone to one point.
pub fn reference_error(sigma0: f64, cumulative_samples: u64) -> f64 {
    assert!(cumulative_samples >= 1);
    sigma0 / (cumulative_samples as f64).sqrt()
}

/// Full optimizer state. Serializes losslessly, including the sample
/// streams; the triangulation is rebuilt on demand after loading.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "S: Serialize + DeserializeOwned")]
pub struct OptimizerState<S> {
    pub algorithm: Algorithm,
    pub params: AlphaDogsParams,
    pub seed: u64,
    pub points: Vec<EvaluatedPoint<S>>,
    pub level: u32,
    pub refinements: u32,
    pub iteration: u64,
    pub rho_hint: Option<f64>,
    pub history: Vec<IterationRecord>,
    #[serde(skip)]
    triangulation: Option<Triangulation>,
}

impl<S> OptimizerState<S> {
    /// `alpha0 + i alpha_delta` after `i` refinements.
    pub fn alpha(&self) -> f64 {
        match self.algorithm {
            Algorithm::AlphaDogs => {
                self.params.alpha0 + self.refinements as f64 * self.params.alpha_delta
            }
            Algorithm::DeltaDogs => 0.0,
        }
    }

    /// `K0 2^i` after `i` refinements (fixed for the baseline).
    pub fn k(&self) -> f64 {
        match self.algorithm {
            Algorithm::AlphaDogs => self.params.k0 * 2f64.powi(self.refinements as i32),
            Algorithm::DeltaDogs => self.params.k0,
        }
    }

    pub fn cumulative_samples(&self) -> u64 {
        self.points.iter().map(|p| p.sample_count).sum()
    }

    pub fn dim(&self) -> usize {
        self.points[0].unit.dim()
    }

    /// Index of the point minimizing `y + alpha sigma`; ties go low.
    pub fn candidate_index(&self) -> usize {
        let alpha = self.alpha();
        let mut best = 0;
        for (i, p) in self.points.iter().enumerate().skip(1) {
            if p.merit(alpha) < self.points[best].merit(alpha) {
                best = i;
            }
        }
        best
    }

    fn contains_key(&self, key: &GridKey) -> bool {
        self.points.iter().any(|p| &p.key == key)
    }

    fn triangulation(&mut self) -> Result<&mut Triangulation, GeometryError> {
        if self.triangulation.is_none() {
            let units: Vec<Point> = self.points.iter().map(|p| p.unit.clone()).collect();
            let n = units[0].dim();
            self.triangulation = Some(Triangulation::build(units, n)?);
        }
        Ok(self.triangulation.as_mut().unwrap())
    }
}

/// Candidate report for the current state.
pub fn candidate<O: StochasticObjective>(
    state: &OptimizerState<O::State>,
    obj: &O,
) -> CandidateReport {
    let i = state.candidate_index();
    let p = &state.points[i];
    let regret = match (obj.truth(&p.location), obj.known_minimum()) {
        (Some(f), Some(m)) => Some(f - m),
        _ => None,
    };
    let total = state.cumulative_samples();
    CandidateReport {
        index: i,
        location: p.location.clone(),
        measurement: p.measurement,
        sigma: p.sigma,
        regret,
        reference_error: obj.uncertainty().sigma(total.max(1)),
    }
}

fn make_record<O: StochasticObjective>(
    state: &OptimizerState<O::State>,
    obj: &O,
    branch: Branch,
    target: Option<usize>,
    rho: Option<f64>,
) -> IterationRecord {
    let c = candidate(state, obj);
    let previous = state.history.last().and_then(|r| r.min_regret);
    let min_regret = match (previous, c.regret) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    IterationRecord {
        iteration: state.iteration,
        branch,
        target,
        points: state.points.len(),
        cumulative_samples: state.cumulative_samples(),
        candidate_index: c.index,
        candidate_location: c.location.into_inner(),
        candidate_y: c.measurement,
        candidate_sigma: c.sigma,
        regret: c.regret,
        min_regret,
        reference_error: c.reference_error,
        alpha: state.alpha(),
        k: state.k(),
        level: state.level,
        rho,
    }
}

fn grids(lower: &[f64], upper: &[f64], level: u32) -> Result<(GridLevel, GridLevel), GridError> {
    let n = lower.len();
    Ok((
        GridLevel::unit(level, n)?,
        GridLevel::new(level, lower.to_vec(), upper.to_vec())?,
    ))
}

/// Measure the box vertices and the quantized user points.
pub fn initialize<O: StochasticObjective>(
    obj: &O,
    params: &AlphaDogsParams,
    user_points: &[Vec<f64>],
    seed: u64,
) -> Result<OptimizerState<O::State>, OptimizerError> {
    init_with(obj, params, user_points, seed, Algorithm::AlphaDogs)
}

fn init_with<O: StochasticObjective>(
    obj: &O,
    params: &AlphaDogsParams,
    user_points: &[Vec<f64>],
    seed: u64,
    algorithm: Algorithm,
) -> Result<OptimizerState<O::State>, OptimizerError> {
    params.validate()?;
    let n = obj.dimension();
    if n == 0 || n > MAX_DIMENSION {
        return Err(GeometryError::UnsupportedDimension(n).into());
    }
    let (lower, upper) = obj.bounds();
    let (unit, phys) = grids(lower, upper, params.ell0)?;
    let top = unit.subdivisions();

    let mut indices: Vec<Vec<u64>> = (0..1usize << n)
        .map(|mask| {
            (0..n)
                .map(|j| if mask >> j & 1 == 1 { top } else { 0 })
                .collect()
        })
        .collect();
    for u in user_points {
        let idx = phys.quantize_indices(u)?;
        if !indices.contains(&idx) {
            indices.push(idx);
        }
    }
    let points = indices
        .par_iter()
        .enumerate()
        .map(|(i, idx)| {
            initial_measure(
                obj,
                phys.node(idx),
                unit.node(idx),
                unit.key(idx),
                params.n0,
                point_stream(seed, i as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut state = OptimizerState {
        algorithm,
        params: params.clone(),
        seed,
        points,
        level: params.ell0,
        refinements: 0,
        iteration: 0,
        rho_hint: None,
        history: Vec::new(),
        triangulation: None,
    };
    state.triangulation()?;
    let rec = make_record(&state, obj, Branch::Initial, None, None);
    state.history.push(rec);
    Ok(state)
}

/// One iteration: fit, search, then exactly one of supplemental sampling,
/// identifying a new point, or grid refinement.
pub fn step<O: StochasticObjective>(
    state: &mut OptimizerState<O::State>,
    obj: &O,
) -> Result<IterationRecord, OptimizerError> {
    let n = state.dim();
    let raw_y: Vec<f64> = state.points.iter().map(|p| p.measurement).collect();
    let scale = measurement_scale(&raw_y);
    let ys: Vec<f64> = raw_y.iter().map(|y| y * scale).collect();
    let sigmas: Vec<f64> = match state.algorithm {
        Algorithm::AlphaDogs => state.points.iter().map(|p| p.sigma * scale).collect(),
        Algorithm::DeltaDogs => vec![0.0; ys.len()],
    };
    let units: Vec<Point> = state.points.iter().map(|p| p.unit.clone()).collect();
    let data = WeightedDataset::new(units, ys.clone(), sigmas.clone())?;
    let model = match state.algorithm {
        Algorithm::AlphaDogs => {
            regression::fit_with_guess(&data, state.params.beta_strict, state.rho_hint)?
        }
        Algorithm::DeltaDogs => regression::interpolate(&data)?,
    };
    let rho = model.rho();
    if rho.is_finite() && rho > 0.0 {
        state.rho_hint = Some(rho);
    }

    let alpha = state.alpha();
    let k = state.k();
    let level = state.level;
    let parallel = state.params.parallel_search;
    let (discrete, cmin) = {
        let tri = state.triangulation()?;
        let ctx = SearchContext {
            surrogate: &model,
            triangulation: tri,
            k,
            alpha,
            values: &ys,
            sigmas: &sigmas,
            parallel,
        };
        (discrete_search(&ctx)?, continuous_search(&ctx)?)
    };

    let (lower, upper) = obj.bounds();
    let (unit, phys) = grids(lower, upper, level)?;
    let z: Vec<f64> = cmin.z.iter().map(|c| c.clamp(0.0, 1.0)).collect();
    let idx = unit.quantize_indices(&z)?;
    let key = unit.key(&idx);
    let is_new = !state.contains_key(&key);
    let decision = match state.algorithm {
        Algorithm::AlphaDogs => classify_iteration(
            cmin.value,
            discrete,
            state.points[discrete.0].sample_count,
            state.params.gamma,
            level,
            unit.node(&idx),
            is_new,
        ),
        Algorithm::DeltaDogs if is_new => Decision::Identifying(unit.node(&idx)),
        Algorithm::DeltaDogs => Decision::Refinement,
    };

    let (branch, target) = match decision {
        Decision::Supplemental(j) => {
            supplemental_measure(obj, &mut state.points[j], state.params.n_delta)?;
            (Branch::Supplemental, Some(j))
        }
        Decision::Identifying(u) => {
            let i = state.points.len();
            let ep = initial_measure(
                obj,
                phys.node(&idx),
                u.clone(),
                key,
                state.params.n0,
                point_stream(state.seed, i as u64),
            )?;
            state.triangulation()?.insert(u)?;
            state.points.push(ep);
            (Branch::Identifying, Some(i))
        }
        Decision::Refinement => {
            if state.level >= MAX_LEVEL {
                return Err(GridError::LevelTooFine(state.level + 1).into());
            }
            state.refinements += 1;
            state.level += 1;
            (Branch::Refinement, None)
        }
    };
    debug_assert_eq!(n, state.dim());
    state.iteration += 1;
    let rec = make_record(state, obj, branch, target, Some(rho));
    state.history.push(rec.clone());
    Ok(rec)
}

fn tolerance_met<S>(state: &OptimizerState<S>, tol: &Tolerance, f_star: f64) -> bool {
    state
        .points
        .iter()
        .any(|p| (p.measurement - f_star).abs() <= tol.value && p.sigma <= tol.sigma)
}

/// Iterate until `stopping` is satisfied.
pub fn run_from<O: StochasticObjective>(
    state: &mut OptimizerState<O::State>,
    obj: &O,
    stopping: &Stopping,
) -> Result<(), OptimizerError> {
    if stopping.max_iterations.is_none()
        && stopping.max_samples.is_none()
        && stopping.tolerance.is_none()
    {
        return Err(OptimizerError::InvalidParams(
            "no stopping rule given".into(),
        ));
    }
    let f_star = match stopping.tolerance {
        Some(_) => Some(obj.known_minimum().ok_or_else(|| {
            OptimizerError::InvalidParams("tolerance stopping needs a known minimum".into())
        })?),
        None => None,
    };
    loop {
        if let (Some(tol), Some(f)) = (&stopping.tolerance, f_star) {
            if tolerance_met(state, tol, f) {
                return Ok(());
            }
        }
        let out_of_iterations = stopping
            .max_iterations
            .is_some_and(|m| state.iteration >= m);
        let out_of_samples = stopping
            .max_samples
            .is_some_and(|m| state.cumulative_samples() >= m);
        if out_of_iterations || out_of_samples {
            if stopping.tolerance.is_some() {
                return Err(OptimizerError::BudgetExhausted {
                    history: state.history.clone(),
                });
            }
            return Ok(());
        }
        step(state, obj)?;
    }
}

/// Initialize and run alpha-DOGS.
pub fn run<O: StochasticObjective>(
    obj: &O,
    params: &AlphaDogsParams,
    stopping: &Stopping,
    seed: u64,
) -> Result<OptimizerState<O::State>, OptimizerError> {
    let mut state = initialize(obj, params, &[], seed)?;
    run_from(&mut state, obj, stopping)?;
    Ok(state)
}

/// Initialize the Delta-DOGS baseline: every point gets the same fixed
/// number of samples and the surrogate interpolates.
pub fn initialize_delta_dogs<O: StochasticObjective>(
    obj: &O,
    params: &DeltaDogsParams,
    user_points: &[Vec<f64>],
    seed: u64,
) -> Result<OptimizerState<O::State>, OptimizerError> {
    init_with(obj, &params.into(), user_points, seed, Algorithm::DeltaDogs)
}

/// Initialize and run the Delta-DOGS baseline.
pub fn run_delta_dogs<O: StochasticObjective>(
    obj: &O,
    params: &DeltaDogsParams,
    stopping: &Stopping,
    seed: u64,
) -> Result<OptimizerState<O::State>, OptimizerError> {
    let mut state = initialize_delta_dogs(obj, params, &[], seed)?;
    run_from(&mut state, obj, stopping)?;
    Ok(state)
}
