//! Measurements of stochastic objectives: resumable per-point sample state,
//! running means, uncertainty models and the empirical `A / sqrt(T)` fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;
use crate::grid::GridKey;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("trajectory left the finite range at step {0}")]
    NonFiniteState(u64),
    #[error("point {0:?} lies outside the objective's bounds")]
    OutOfBounds(Vec<f64>),
    #[error("invalid sampling request: {0}")]
    Invalid(String),
}

/// Shape of the uncertainty model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    /// Independent samples: `sigma = sigma0 / sqrt(N)`.
    Iid,
    /// Fitted `A / sqrt(T)` with `T = N h`.
    EmpiricalSqrt,
}

/// `sigma(N) = scale * (N * sample_interval)^(-theta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyModel {
    pub kind: UncertaintyKind,
    pub scale: f64,
    pub theta: f64,
    pub sample_interval: f64,
}

impl UncertaintyModel {
    pub fn iid(sigma0: f64) -> Self {
        UncertaintyModel {
            kind: UncertaintyKind::Iid,
            scale: sigma0,
            theta: 0.5,
            sample_interval: 1.0,
        }
    }

    pub fn empirical_sqrt(a: f64, sample_interval: f64) -> Self {
        UncertaintyModel {
            kind: UncertaintyKind::EmpiricalSqrt,
            scale: a,
            theta: 0.5,
            sample_interval,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        assert!(theta > 0.0 && theta <= 1.0, "theta must lie in (0, 1]");
        self.theta = theta;
        self
    }

    pub fn sigma(&self, samples: u64) -> f64 {
        assert!(samples >= 1, "sigma needs at least one sample");
        self.scale * (samples as f64 * self.sample_interval).powf(-self.theta)
    }
}

/// A source of samples `g(x, k)` whose finite averages estimate `f(x)`.
///
/// Locations passed to the objective are in physical coordinates.
pub trait StochasticObjective: Sync {
    /// Per-point continuation token.
    type State: Clone + std::fmt::Debug + Send + Sync + Serialize + DeserializeOwned;

    fn dimension(&self) -> usize;

    /// Lower and upper corners of the feasible box.
    fn bounds(&self) -> (&[f64], &[f64]);

    /// Fresh sampling state at `x` drawing randomness from `stream`. Any
    /// transient is consumed here; no samples are averaged yet.
    fn begin(&self, x: &[f64], stream: ChaCha8Rng) -> Result<Self::State, SamplerError>;

    /// Draw `count` further samples into `state`.
    fn extend(&self, x: &[f64], state: &mut Self::State, count: u64) -> Result<(), SamplerError>;

    /// Current finite-sample estimate of `f(x)` and the number of samples
    /// behind it.
    fn estimate(&self, state: &Self::State) -> (f64, u64);

    /// `f(x)` if it is known in closed form.
    fn truth(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// `f(x*)` if known.
    fn known_minimum(&self) -> Option<f64> {
        None
    }

    fn uncertainty(&self) -> UncertaintyModel;
}

/// A measured location in the optimizer's point set.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "S: Serialize + DeserializeOwned")]
pub struct EvaluatedPoint<S> {
    /// Physical coordinates.
    pub location: Point,
    /// Coordinates normalized to the unit box.
    pub unit: Point,
    pub key: GridKey,
    pub sample_count: u64,
    pub running_sum: f64,
    pub measurement: f64,
    pub sigma: f64,
    pub resume: S,
}

impl<S> EvaluatedPoint<S> {
    /// `y + alpha * sigma`, the candidate-point merit.
    pub fn merit(&self, alpha: f64) -> f64 {
        self.measurement + alpha * self.sigma
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derived from a master seed and an index. Streams for different
/// indices are independent of the order in which they are requested.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Random stream for the point with the given index.
pub fn point_stream(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}

fn refresh<O: StochasticObjective>(obj: &O, ep: &mut EvaluatedPoint<O::State>) {
    let (y, n) = obj.estimate(&ep.resume);
    ep.sample_count = n;
    ep.measurement = y;
    ep.running_sum = y * n as f64;
    ep.sigma = obj.uncertainty().sigma(n);
}

/// Start a point: consume the transient, then average `n0` samples.
pub fn initial_measure<O: StochasticObjective>(
    obj: &O,
    location: Point,
    unit: Point,
    key: GridKey,
    n0: u64,
    stream: ChaCha8Rng,
) -> Result<EvaluatedPoint<O::State>, SamplerError> {
    if n0 == 0 {
        return Err(SamplerError::Invalid("N0 must be at least 1".into()));
    }
    let (lo, hi) = obj.bounds();
    if location
        .iter()
        .zip(lo.iter().zip(hi))
        .any(|(x, (a, b))| !(x >= a && x <= b))
    {
        return Err(SamplerError::OutOfBounds(location.into_inner()));
    }
    let mut state = obj.begin(&location, stream)?;
    obj.extend(&location, &mut state, n0)?;
    let mut ep = EvaluatedPoint {
        location,
        unit,
        key,
        sample_count: 0,
        running_sum: 0.0,
        measurement: 0.0,
        sigma: 0.0,
        resume: state,
    };
    refresh(obj, &mut ep);
    Ok(ep)
}

/// Add `n_delta` samples to an existing point, continuing its stream.
pub fn supplemental_measure<O: StochasticObjective>(
    obj: &O,
    ep: &mut EvaluatedPoint<O::State>,
    n_delta: u64,
) -> Result<(), SamplerError> {
    if n_delta == 0 {
        return Err(SamplerError::Invalid("N_delta must be at least 1".into()));
    }
    let location = ep.location.clone();
    obj.extend(&location, &mut ep.resume, n_delta)?;
    refresh(obj, ep);
    Ok(())
}

/// Resumable state of a process whose samples are averaged directly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IidState {
    pub rng: ChaCha8Rng,
    pub sum: f64,
    pub count: u64,
}

impl IidState {
    pub fn new(rng: ChaCha8Rng) -> Self {
        IidState {
            rng,
            sum: 0.0,
            count: 0,
        }
    }

    pub fn push(&mut self, g: f64) {
        self.sum += g;
        self.count += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// One row of the UQ fit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqRow {
    pub samples: u64,
    /// `samples * sample_interval`.
    pub length: f64,
    pub empirical_std: f64,
    pub fitted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqFit {
    pub model: UncertaintyModel,
    pub rows: Vec<UqRow>,
    /// Set when the ensemble is too small for a trustworthy fit.
    pub low_confidence: bool,
}

impl UqFit {
    /// Largest `|fitted - empirical| / empirical` over the probe lengths.
    pub fn max_relative_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                if r.empirical_std > 0.0 {
                    (r.fitted - r.empirical_std).abs() / r.empirical_std
                } else if r.fitted == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Ensembles smaller than this are flagged as low confidence.
pub const UQ_CONFIDENT_ENSEMBLE: usize = 10;

/// Fit `sigma(N) = A (N h)^(-theta)` to the spread of independent finite
/// averages at `x`.
///
/// Member `i` uses the stream derived from `(seed, i)`. Each member runs once
/// to the longest probe and is read off at every shorter probe on the way,
/// so the probes of a member are nested prefixes of one trajectory.
pub fn fit_uq_model<O: StochasticObjective>(
    obj: &O,
    x: &[f64],
    ensemble: usize,
    probe_samples: &[u64],
    seed: u64,
) -> Result<UqFit, SamplerError> {
    if ensemble < 2 {
        return Err(SamplerError::Invalid(
            "ensemble must have at least 2 members".into(),
        ));
    }
    if probe_samples.is_empty()
        || probe_samples[0] == 0
        || probe_samples.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(SamplerError::Invalid(
            "probe lengths must be positive and strictly increasing".into(),
        ));
    }
    let members: Vec<Vec<f64>> = (0..ensemble)
        .map(|i| {
            let mut state = obj.begin(x, point_stream(seed, i as u64))?;
            let mut done = 0;
            let mut out = Vec::with_capacity(probe_samples.len());
            for &p in probe_samples {
                obj.extend(x, &mut state, p - done)?;
                done = p;
                out.push(obj.estimate(&state).0);
            }
            Ok(out)
        })
        .collect::<Result<_, SamplerError>>()?;

    let base = obj.uncertainty();
    let h = base.sample_interval;
    let theta = base.theta;
    let stds: Vec<f64> = (0..probe_samples.len())
        .map(|j| {
            let mean = members.iter().map(|m| m[j]).sum::<f64>() / ensemble as f64;
            let var = members.iter().map(|m| (m[j] - mean).powi(2)).sum::<f64>()
                / (ensemble as f64 - 1.0);
            var.sqrt()
        })
        .collect();
    let basis: Vec<f64> = probe_samples
        .iter()
        .map(|&n| (n as f64 * h).powf(-theta))
        .collect();

    // Relative least squares when every std is positive, plain otherwise.
    let a = if stds.iter().all(|s| *s > 0.0) {
        let num: f64 = basis.iter().zip(&stds).map(|(u, s)| u / s).sum();
        let den: f64 = basis.iter().zip(&stds).map(|(u, s)| (u / s).powi(2)).sum();
        num / den
    } else {
        let num: f64 = basis.iter().zip(&stds).map(|(u, s)| u * s).sum();
        let den: f64 = basis.iter().map(|u| u * u).sum();
        num / den
    };
    let model = UncertaintyModel {
        kind: UncertaintyKind::EmpiricalSqrt,
        scale: a,
        theta,
        sample_interval: h,
    };
    let rows = probe_samples
        .iter()
        .zip(&stds)
        .map(|(&n, &s)| UqRow {
            samples: n,
            length: n as f64 * h,
            empirical_std: s,
            fitted: model.sigma(n),
        })
        .collect();
    Ok(UqFit {
        model,
        rows,
        low_confidence: ensemble < UQ_CONFIDENT_ENSEMBLE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Replays a fixed sample list, then repeats its last entry.
    struct Scripted(Vec<f64>);

    impl StochasticObjective for Scripted {
        type State = IidState;
        fn dimension(&self) -> usize {
            1
        }
        fn bounds(&self) -> (&[f64], &[f64]) {
            (&[0.0], &[1.0])
        }
        fn begin(&self, _x: &[f64], stream: ChaCha8Rng) -> Result<IidState, SamplerError> {
            Ok(IidState::new(stream))
        }
        fn extend(&self, _x: &[f64], s: &mut IidState, count: u64) -> Result<(), SamplerError> {
            for _ in 0..count {
                let i = (s.count as usize).min(self.0.len() - 1);
                s.push(self.0[i]);
            }
            Ok(())
        }
        fn estimate(&self, s: &IidState) -> (f64, u64) {
            (s.mean(), s.count)
        }
        fn uncertainty(&self) -> UncertaintyModel {
            UncertaintyModel::iid(0.3)
        }
    }

    /// Gaussian noise around zero.
    struct Noise(f64);

    impl StochasticObjective for Noise {
        type State = IidState;
        fn dimension(&self) -> usize {
            1
        }
        fn bounds(&self) -> (&[f64], &[f64]) {
            (&[0.0], &[1.0])
        }
        fn begin(&self, _x: &[f64], stream: ChaCha8Rng) -> Result<IidState, SamplerError> {
            Ok(IidState::new(stream))
        }
        fn extend(&self, _x: &[f64], s: &mut IidState, count: u64) -> Result<(), SamplerError> {
            for _ in 0..count {
                let v: f64 = s.rng.sample(rand_distr::StandardNormal);
                s.push(self.0 * v);
            }
            Ok(())
        }
        fn estimate(&self, s: &IidState) -> (f64, u64) {
            (s.mean(), s.count)
        }
        fn uncertainty(&self) -> UncertaintyModel {
            UncertaintyModel::iid(self.0)
        }
    }

    fn start<O: StochasticObjective>(obj: &O, n0: u64) -> EvaluatedPoint<O::State> {
        initial_measure(
            obj,
            Point::new(vec![0.5]),
            Point::new(vec![0.5]),
            GridKey(vec![0]),
            n0,
            point_stream(1, 0),
        )
        .unwrap()
    }

    #[test]
    fn iid_sigma_values() {
        let m = UncertaintyModel::iid(0.3);
        assert!((m.sigma(9) - 0.1).abs() < 1e-15);
        assert!((m.sigma(16) - 0.075).abs() < 1e-15);
        assert_eq!(m.sigma(1), 0.3);
    }

    #[test]
    fn mean_and_running_mean() {
        let obj = Scripted(vec![1.0, 2.0, 3.0, 5.0]);
        let mut ep = start(&obj, 3);
        assert_eq!(ep.measurement, 2.0);
        assert!((ep.sigma - 0.3 / 3f64.sqrt()).abs() < 1e-15);
        supplemental_measure(&obj, &mut ep, 1).unwrap();
        assert_eq!(ep.measurement, 2.75);
        assert_eq!(ep.sample_count, 4);
        assert!((ep.measurement * 4.0 - ep.running_sum).abs() < 1e-12);
    }

    #[test]
    fn interleaved_equals_batch() {
        let obj = Noise(0.3);
        let mut a = start(&obj, 1);
        for _ in 0..49 {
            supplemental_measure(&obj, &mut a, 1).unwrap();
        }
        let b = start(&obj, 50);
        assert!((a.measurement - b.measurement).abs() <= 1e-12);
        assert_eq!(a.sample_count, b.sample_count);
    }

    #[test]
    fn resume_survives_serialization() {
        let obj = Noise(0.3);
        let mut a = start(&obj, 5);
        let json = serde_json::to_string(&a).unwrap();
        let mut b: EvaluatedPoint<IidState> = serde_json::from_str(&json).unwrap();
        supplemental_measure(&obj, &mut a, 7).unwrap();
        supplemental_measure(&obj, &mut b, 7).unwrap();
        assert_eq!(a.measurement, b.measurement);
    }

    #[test]
    fn zero_counts_rejected() {
        let obj = Noise(0.3);
        let r = initial_measure(
            &obj,
            Point::new(vec![0.5]),
            Point::new(vec![0.5]),
            GridKey(vec![0]),
            0,
            point_stream(1, 0),
        );
        assert!(r.is_err());
        let r = initial_measure(
            &obj,
            Point::new(vec![1.5]),
            Point::new(vec![1.5]),
            GridKey(vec![0]),
            1,
            point_stream(1, 0),
        );
        assert!(matches!(r, Err(SamplerError::OutOfBounds(_))));
    }

    #[test]
    fn uq_fit_recovers_iid_sigma() {
        let fit = fit_uq_model(&Noise(0.3), &[0.5], 30, &[10, 40, 160, 640], 11).unwrap();
        assert!(
            (fit.model.scale - 0.3).abs() < 0.06,
            "A = {}",
            fit.model.scale
        );
        assert!(!fit.low_confidence);
        assert_eq!(fit.model.kind, UncertaintyKind::EmpiricalSqrt);
    }

    #[test]
    fn uq_fit_of_deterministic_process_is_zero() {
        let fit = fit_uq_model(&Scripted(vec![1.0]), &[0.5], 5, &[1, 2, 4], 0).unwrap();
        assert_eq!(fit.model.scale, 0.0);
        assert!(fit.low_confidence);
        assert_eq!(fit.max_relative_residual(), 0.0);
    }

    #[test]
    fn uq_fit_argument_checks() {
        assert!(fit_uq_model(&Noise(0.3), &[0.5], 1, &[10], 0).is_err());
        assert!(fit_uq_model(&Noise(0.3), &[0.5], 3, &[10, 10], 0).is_err());
        assert!(fit_uq_model(&Noise(0.3), &[0.5], 3, &[], 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    #[test]
    fn iid_three_sigma_coverage() {
        let obj = Noise(0.3);
        let mut hits = 0;
        for i in 0..1000 {
            let ep = initial_measure(
                &obj,
                Point::new(vec![0.5]),
                Point::new(vec![0.5]),
                GridKey(vec![0]),
                7,
                point_stream(99, i),
            )
            .unwrap();
            if ep.measurement.abs() <= 3.0 * ep.sigma {
                hits += 1;
            }
        }
        assert!(hits >= 990, "coverage {hits}/1000");
    }
}
