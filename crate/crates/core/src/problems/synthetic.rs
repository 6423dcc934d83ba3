use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::sampling::{IidState, SamplerError, StochasticObjective, UncertaintyModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `f(x) = (5/n) sum (x_i - 0.3)^2`.
    Parabola,
    /// `f(x) = 0.83797 - (1/n) sum x_i sin(sqrt(500 |x_i|))`.
    Schwefel,
}

/// A known function on `[0, 1]^n` observed through additive Gaussian noise.
#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    kind: SyntheticKind,
    n: usize,
    noise_sigma: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    minimum: f64,
}

const PARABOLA_CENTER: f64 = 0.3;
const SCHWEFEL_OFFSET: f64 = 0.83797;
const SCHWEFEL_MINIMIZER: f64 = 0.8419;

fn schwefel_term(x: f64) -> f64 {
    x * (500.0 * x.abs()).sqrt().sin()
}

/// Golden-section refinement of the 1D Schwefel term's maximum near the
/// nominal minimizer.
fn schwefel_argmax() -> f64 {
    let (mut a, mut b) = (
        SCHWEFEL_MINIMIZER - 0.02,
        (SCHWEFEL_MINIMIZER + 0.02).min(1.0),
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if schwefel_term(c) > schwefel_term(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

impl SyntheticProblem {
    pub fn new(kind: SyntheticKind, n: usize, noise_sigma: f64) -> Self {
        assert!(n >= 1, "dimension must be positive");
        assert!(noise_sigma >= 0.0, "noise must be nonnegative");
        let minimum = match kind {
            SyntheticKind::Parabola => 0.0,
            SyntheticKind::Schwefel => SCHWEFEL_OFFSET - schwefel_term(schwefel_argmax()),
        };
        SyntheticProblem {
            kind,
            n,
            noise_sigma,
            lower: vec![0.0; n],
            upper: vec![1.0; n],
            minimum,
        }
    }

    pub fn parabola(n: usize) -> Self {
        Self::new(SyntheticKind::Parabola, n, 0.3)
    }

    pub fn schwefel(n: usize) -> Self {
        Self::new(SyntheticKind::Schwefel, n, 0.3)
    }

    pub fn kind(&self) -> SyntheticKind {
        self.kind
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Noise-free value.
    pub fn value(&self, x: &[f64]) -> f64 {
        let n = self.n as f64;
        match self.kind {
            SyntheticKind::Parabola => {
                5.0 / n * x.iter().map(|v| (v - PARABOLA_CENTER).powi(2)).sum::<f64>()
            }
            SyntheticKind::Schwefel => {
                SCHWEFEL_OFFSET - x.iter().map(|&v| schwefel_term(v)).sum::<f64>() / n
            }
        }
    }

    /// Global minimizer.
    pub fn minimizer(&self) -> Vec<f64> {
        let c = match self.kind {
            SyntheticKind::Parabola => PARABOLA_CENTER,
            SyntheticKind::Schwefel => schwefel_argmax(),
        };
        vec![c; self.n]
    }

    /// One sample `g(x, k) = f(x) + v_k`.
    pub fn sample(&self, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        let v: f64 = rng.sample(StandardNormal);
        self.value(x) + self.noise_sigma * v
    }
}

impl StochasticObjective for SyntheticProblem {
    type State = IidState;

    fn dimension(&self) -> usize {
        self.n
    }

    fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    fn begin(&self, _x: &[f64], stream: ChaCha8Rng) -> Result<IidState, SamplerError> {
        Ok(IidState::new(stream))
    }

    fn extend(&self, x: &[f64], state: &mut IidState, count: u64) -> Result<(), SamplerError> {
        for _ in 0..count {
            let g = self.sample(x, &mut state.rng);
            state.push(g);
        }
        Ok(())
    }

    fn estimate(&self, state: &IidState) -> (f64, u64) {
        (state.mean(), state.count)
    }

    fn truth(&self, x: &[f64]) -> Option<f64> {
        Some(self.value(x))
    }

    fn known_minimum(&self) -> Option<f64> {
        Some(self.minimum)
    }

    fn uncertainty(&self) -> UncertaintyModel {
        UncertaintyModel::iid(self.noise_sigma)
    }
}
