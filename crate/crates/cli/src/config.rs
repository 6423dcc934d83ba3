use std::path::{Path, PathBuf};

use dogs_core::geometry::MAX_DIMENSION;
use dogs_core::{
    AlphaDogsParams, DeltaDogsParams, LorenzProblem, Stopping, SyntheticKind, SyntheticProblem,
    Tolerance,
};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    Parabola,
    Schwefel,
    Lorenz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    #[serde(alias = "alpha-dogs")]
    AlphaDogs,
    #[serde(alias = "delta-dogs")]
    DeltaDogs,
}

impl AlgorithmName {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmName::AlphaDogs => "alpha_dogs",
            AlgorithmName::DeltaDogs => "delta_dogs",
        }
    }
}

/// Overrides of the alpha-DOGS parameters; unset fields take the
/// problem's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaOverrides {
    pub alpha0: Option<f64>,
    pub alpha_delta: Option<f64>,
    pub k0: Option<f64>,
    pub ell0: Option<u32>,
    pub beta_strict: Option<f64>,
    pub gamma: Option<f64>,
    pub n0: Option<u64>,
    pub n_delta: Option<u64>,
    pub parallel_search: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeltaOverrides {
    pub k: Option<f64>,
    pub ell0: Option<u32>,
    pub samples_per_point: Option<u64>,
    pub parallel_search: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqConfig {
    /// Number of independent trajectories.
    pub ensemble: usize,
    /// Averaging lengths, in the objective's time units.
    pub probe_lengths: Vec<f64>,
    /// Where to fit; defaults to (28, 2.667) for Lorenz and the box center
    /// otherwise.
    pub location: Option<Vec<f64>>,
}

impl Default for UqConfig {
    fn default() -> Self {
        UqConfig {
            ensemble: 30,
            probe_lengths: vec![50.0, 100.0, 200.0, 400.0, 800.0],
            location: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemName,
    /// Dimension of the synthetic problems.
    pub dim: usize,
    /// Noise standard deviation of the synthetic problems.
    pub noise_sigma: f64,
    pub algorithm: AlgorithmName,
    pub seed: u64,
    /// Stop once this many samples have been taken.
    pub budget: Option<u64>,
    pub max_iterations: Option<u64>,
    pub tolerance: Option<Tolerance>,
    /// Ensemble size.
    pub runs: usize,
    pub out: Option<PathBuf>,
    /// User-supplied points of interest, in physical coordinates.
    pub points: Vec<Vec<f64>>,
    pub alpha_dogs: AlphaOverrides,
    pub delta_dogs: DeltaOverrides,
    pub lorenz: LorenzProblem,
    pub uq: UqConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemName::Parabola,
            dim: 1,
            noise_sigma: 0.3,
            algorithm: AlgorithmName::AlphaDogs,
            seed: 0,
            budget: None,
            max_iterations: None,
            tolerance: None,
            runs: 20,
            out: None,
            points: Vec::new(),
            alpha_dogs: AlphaOverrides::default(),
            delta_dogs: DeltaOverrides::default(),
            lorenz: LorenzProblem::default(),
            uq: UqConfig::default(),
        }
    }
}

pub enum Problem {
    Synthetic(SyntheticProblem),
    Lorenz(LorenzProblem),
}

/// Default iteration cap for tolerance-driven Lorenz runs.
pub const LORENZ_ITERATION_CAP: u64 = 5000;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))
    }

    pub fn problem(&self) -> Problem {
        match self.problem {
            ProblemName::Parabola => Problem::Synthetic(SyntheticProblem::new(
                SyntheticKind::Parabola,
                self.dim,
                self.noise_sigma,
            )),
            ProblemName::Schwefel => Problem::Synthetic(SyntheticProblem::new(
                SyntheticKind::Schwefel,
                self.dim,
                self.noise_sigma,
            )),
            ProblemName::Lorenz => Problem::Lorenz(self.lorenz.clone()),
        }
    }

    fn dimension(&self) -> usize {
        match self.problem {
            ProblemName::Lorenz => 2,
            _ => self.dim,
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self.problem {
            ProblemName::Lorenz => (self.lorenz.lower.clone(), self.lorenz.upper.clone()),
            _ => (vec![0.0; self.dim], vec![1.0; self.dim]),
        }
    }

    pub fn alpha_params(&self) -> AlphaDogsParams {
        let mut p = AlphaDogsParams::default();
        if self.problem == ProblemName::Lorenz {
            p.n0 = self.lorenz.identifying_samples();
            p.n_delta = self.lorenz.supplemental_samples();
        }
        let o = &self.alpha_dogs;
        p.alpha0 = o.alpha0.unwrap_or(p.alpha0);
        p.alpha_delta = o.alpha_delta.unwrap_or(p.alpha_delta);
        p.k0 = o.k0.unwrap_or(p.k0);
        p.ell0 = o.ell0.unwrap_or(p.ell0);
        p.beta_strict = o.beta_strict.unwrap_or(p.beta_strict);
        p.gamma = o.gamma.unwrap_or(p.gamma);
        p.n0 = o.n0.unwrap_or(p.n0);
        p.n_delta = o.n_delta.unwrap_or(p.n_delta);
        p.parallel_search = o.parallel_search.unwrap_or(p.parallel_search);
        p
    }

    pub fn delta_params(&self) -> DeltaDogsParams {
        let mut p = DeltaDogsParams::default();
        if self.problem == ProblemName::Lorenz {
            p.samples_per_point = self.lorenz.baseline_samples();
        }
        let o = &self.delta_dogs;
        p.k = o.k.unwrap_or(p.k);
        p.ell0 = o.ell0.unwrap_or(p.ell0);
        p.samples_per_point = o.samples_per_point.unwrap_or(p.samples_per_point);
        p.parallel_search = o.parallel_search.unwrap_or(p.parallel_search);
        p
    }

    /// The configured stopping rule, or the problem's default: 2000 samples
    /// for the synthetic problems and the `(0.04, 0.02)` tolerance, capped
    /// at [`LORENZ_ITERATION_CAP`] iterations, for Lorenz.
    pub fn stopping(&self) -> Stopping {
        let s = Stopping {
            max_iterations: self.max_iterations,
            max_samples: self.budget,
            tolerance: self.tolerance,
        };
        if s.max_iterations.is_some() || s.max_samples.is_some() || s.tolerance.is_some() {
            return s;
        }
        match self.problem {
            ProblemName::Lorenz => Stopping {
                max_iterations: Some(LORENZ_ITERATION_CAP),
                ..Stopping::tolerance(0.04, 0.02)
            },
            _ => Stopping::samples(2000),
        }
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: String| Err(UsageError(m));
        if self.problem != ProblemName::Lorenz {
            if self.dim == 0 || self.dim > MAX_DIMENSION {
                return bad(format!("dim must be between 1 and {MAX_DIMENSION}"));
            }
            if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
                return bad("noise_sigma must be finite and nonnegative".into());
            }
        } else {
            let l = &self.lorenz;
            if l.lower.len() != 2
                || l.upper.len() != 2
                || l.lower.iter().zip(&l.upper).any(|(a, b)| !(a < b))
            {
                return bad("lorenz bounds must be two strictly increasing intervals".into());
            }
            for (name, v) in [
                ("h", l.h),
                ("t0", l.t0),
                ("t1", l.t1),
                ("t_fixed", l.t_fixed),
                ("uq_scale", l.uq_scale),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("lorenz.{name} must be positive"));
                }
            }
            for t in [l.t0, l.t1, l.t_fixed] {
                if let Err(e) = l.samples_for(t) {
                    return bad(format!("lorenz averaging length {t}: {e}"));
                }
            }
        }
        let (lower, upper) = self.bounds();
        for p in &self.points {
            if p.len() != self.dimension() {
                return bad(format!(
                    "point {p:?} must have {} coordinates",
                    self.dimension()
                ));
            }
            if p.iter()
                .zip(lower.iter().zip(&upper))
                .any(|(x, (a, b))| !(x >= a && x <= b))
            {
                return bad(format!("point {p:?} lies outside the bounds"));
            }
        }
        self.alpha_params()
            .validate()
            .map_err(|e| UsageError(format!("alpha_dogs: {e}")))?;
        let d = self.delta_params();
        if !(d.k > 0.0 && d.k.is_finite()) || d.samples_per_point == 0 {
            return bad("delta_dogs.k and delta_dogs.samples_per_point must be positive".into());
        }
        if self.budget == Some(0) {
            return bad("budget must be positive".into());
        }
        if let Some(t) = &self.tolerance {
            if !(t.value > 0.0 && t.sigma > 0.0) {
                return bad("tolerance values must be positive".into());
            }
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.uq.ensemble < 2 {
            return bad("uq.ensemble must be at least 2".into());
        }
        if self.uq.probe_lengths.is_empty()
            || self.uq.probe_lengths.iter().any(|t| !(*t > 0.0))
            || self.uq.probe_lengths.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("uq.probe_lengths must be positive and strictly increasing".into());
        }
        if let Some(x) = &self.uq.location {
            if x.len() != self.dimension()
                || x.iter()
                    .zip(lower.iter().zip(&upper))
                    .any(|(x, (a, b))| !(x >= a && x <= b))
            {
                return bad(format!("uq.location {x:?} is not a point of the domain"));
            }
        }
        Ok(())
    }

    pub fn uq_location(&self) -> Vec<f64> {
        if let Some(x) = &self.uq.location {
            return x.clone();
        }
        match self.problem {
            ProblemName::Lorenz => vec![28.0, 2.667],
            _ => vec![0.5; self.dim],
        }
    }
}

/// Parse `value,sigma`.
pub fn parse_tolerance(s: &str) -> Result<Tolerance, String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| "expected VALUE,SIGMA".to_string())?;
    let value = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let sigma = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok(Tolerance { value, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_core() {
        let c = RunConfig::default();
        assert_eq!(c.alpha_params(), AlphaDogsParams::default());
        assert_eq!(c.delta_params(), DeltaDogsParams::default());
        assert_eq!(c.stopping(), Stopping::samples(2000));
        c.validate().unwrap();
    }

    #[test]
    fn lorenz_defaults_use_averaging_lengths() {
        let c = RunConfig {
            problem: ProblemName::Lorenz,
            ..Default::default()
        };
        let p = c.alpha_params();
        assert_eq!((p.n0, p.n_delta), (400, 140));
        assert_eq!(c.delta_params().samples_per_point, 50260);
        let s = c.stopping();
        assert_eq!(
            s.tolerance,
            Some(Tolerance {
                value: 0.04,
                sigma: 0.02
            })
        );
        assert_eq!(s.max_iterations, Some(LORENZ_ITERATION_CAP));
    }

    #[test]
    fn toml_overrides() {
        let c: RunConfig = toml::from_str(
            r#"
            problem = "schwefel"
            dim = 2
            budget = 300
            points = [[0.5, 0.25]]
            [alpha_dogs]
            k0 = 2.0
            [lorenz]
            h = 0.01
            "#,
        )
        .unwrap();
        assert_eq!(c.problem, ProblemName::Schwefel);
        assert_eq!(c.alpha_params().k0, 2.0);
        assert_eq!(c.alpha_params().gamma, 100.0);
        assert_eq!(c.lorenz.h, 0.01);
        assert_eq!(c.lorenz.t0, 20.0);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(toml::from_str::<RunConfig>("problm = \"parabola\"").is_err());
        assert!(toml::from_str::<RunConfig>("problem = \"rosenbrock\"").is_err());
        let c = RunConfig {
            points: vec![vec![1.5]],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            alpha_dogs: AlphaOverrides {
                gamma: Some(0.5),
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn tolerance_parsing() {
        assert_eq!(
            parse_tolerance("0.15, 0.06").unwrap(),
            Tolerance {
                value: 0.15,
                sigma: 0.06
            }
        );
        assert!(parse_tolerance("0.15").is_err());
    }
}
