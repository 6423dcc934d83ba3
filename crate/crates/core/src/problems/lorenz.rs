use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sampling::{SamplerError, StochasticObjective, UncertaintyModel};

/// Coefficients of the Lorenz system. `rho_lorenz` and `beta_lorenz` are the
/// decision variables; `s` is held fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub rho_lorenz: f64,
    pub beta_lorenz: f64,
    pub s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl OdeState {
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

fn rhs(u: OdeState, p: &LorenzParams) -> OdeState {
    OdeState {
        x: p.s * (u.y - u.x),
        y: u.x * (p.rho_lorenz - u.z) - u.y,
        z: u.x * u.y - p.beta_lorenz * u.z,
    }
}

fn axpy(u: OdeState, a: f64, k: OdeState) -> OdeState {
    OdeState {
        x: u.x + a * k.x,
        y: u.y + a * k.y,
        z: u.z + a * k.z,
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step(u: OdeState, p: &LorenzParams, h: f64) -> OdeState {
    let k1 = rhs(u, p);
    let k2 = rhs(axpy(u, 0.5 * h, k1), p);
    let k3 = rhs(axpy(u, 0.5 * h, k2), p);
    let k4 = rhs(axpy(u, h, k3), p);
    OdeState {
        x: u.x + h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
        y: u.y + h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
        z: u.z + h / 6.0 * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z),
    }
}

/// A trajectory past its transient, with running sums of `Z` and `Z^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzTrack {
    pub state: OdeState,
    /// Steps taken, including the discarded transient.
    pub steps: u64,
    /// Steps averaged.
    pub count: u64,
    pub sum_z: f64,
    pub sum_z2: f64,
}

impl LorenzTrack {
    pub fn mean_z(&self) -> f64 {
        self.sum_z / self.count as f64
    }

    /// Population standard deviation of `Z` over the window.
    pub fn std_z(&self) -> f64 {
        let m = self.mean_z();
        (self.sum_z2 / self.count as f64 - m * m).max(0.0).sqrt()
    }
}

/// Fit the Lorenz system's `(rho, beta)` so that the long-time mean and
/// standard deviation of `Z` match targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzProblem {
    pub s: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub h: f64,
    pub transient_steps: u64,
    pub target_mean: f64,
    pub target_std: f64,
    /// Averaging length of a new point.
    pub t0: f64,
    /// Averaging length added by a supplemental iteration.
    pub t1: f64,
    /// Fixed averaging length of the baseline.
    pub t_fixed: f64,
    pub uq_scale: f64,
    pub ic_center: [f64; 3],
    pub ic_half_width: f64,
}

impl Default for LorenzProblem {
    fn default() -> Self {
        LorenzProblem {
            s: 10.0,
            lower: vec![24.0, 1.8],
            upper: vec![29.15, 4.0],
            h: 0.05,
            transient_steps: 2600,
            target_mean: 23.57,
            target_std: 8.67,
            t0: 20.0,
            t1: 7.0,
            t_fixed: 2513.0,
            // sigma = 0.02 at T = 2513
            uq_scale: 0.02 * 2513f64.sqrt(),
            ic_center: [0.0, 1.0, 1.05],
            ic_half_width: 0.05,
        }
    }
}

impl LorenzProblem {
    pub fn params(&self, x: &[f64]) -> LorenzParams {
        LorenzParams {
            rho_lorenz: x[0],
            beta_lorenz: x[1],
            s: self.s,
        }
    }

    /// Number of steps covering averaging length `t`.
    pub fn samples_for(&self, t: f64) -> Result<u64, SamplerError> {
        let n = (t / self.h).round();
        if !(n >= 1.0) || ((n * self.h - t).abs() > 1e-9 * t.max(1.0)) {
            return Err(SamplerError::Invalid(format!(
                "length {t} is not a positive multiple of h = {}",
                self.h
            )));
        }
        Ok(n as u64)
    }

    pub fn identifying_samples(&self) -> u64 {
        self.samples_for(self.t0)
            .expect("t0 must be a multiple of h")
    }

    pub fn supplemental_samples(&self) -> u64 {
        self.samples_for(self.t1)
            .expect("t1 must be a multiple of h")
    }

    pub fn baseline_samples(&self) -> u64 {
        self.samples_for(self.t_fixed)
            .expect("t_fixed must be a multiple of h")
    }

    /// Center of the decision box.
    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Random initial condition near the attractor, then the transient.
    pub fn start(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<LorenzTrack, SamplerError> {
        let w = self.ic_half_width;
        let mut jitter = || rng.random_range(-w..=w);
        let state = OdeState {
            x: self.ic_center[0] + jitter(),
            y: self.ic_center[1] + jitter(),
            z: self.ic_center[2] + jitter(),
        };
        self.start_from(x, state)
    }

    /// Discard the transient from a given initial condition.
    pub fn start_from(&self, x: &[f64], mut state: OdeState) -> Result<LorenzTrack, SamplerError> {
        let p = self.params(x);
        for step in 0..self.transient_steps {
            state = rk4_step(state, &p, self.h);
            if !state.is_finite() {
                return Err(SamplerError::NonFiniteState(step + 1));
            }
        }
        Ok(LorenzTrack {
            state,
            steps: self.transient_steps,
            count: 0,
            sum_z: 0.0,
            sum_z2: 0.0,
        })
    }

    /// Continue a track by `count` averaged steps.
    pub fn advance(
        &self,
        x: &[f64],
        track: &mut LorenzTrack,
        count: u64,
    ) -> Result<(), SamplerError> {
        let p = self.params(x);
        for _ in 0..count {
            let next = rk4_step(track.state, &p, self.h);
            track.steps += 1;
            if !next.is_finite() {
                return Err(SamplerError::NonFiniteState(track.steps));
            }
            track.state = next;
            track.count += 1;
            track.sum_z += next.z;
            track.sum_z2 += next.z * next.z;
        }
        Ok(())
    }

    /// `|mean Z - target| + |std Z - target|` over the track's window.
    pub fn cost(&self, track: &LorenzTrack) -> f64 {
        (track.mean_z() - self.target_mean).abs() + (track.std_z() - self.target_std).abs()
    }
}

/// Extend a point's trajectory by `added_t` time units and return the cost
/// estimate over the whole window. Without `resume` a new trajectory is
/// started from `rng` and its transient discarded first.
pub fn lorenz_cost_sample(
    lp: &LorenzProblem,
    x: &[f64],
    resume: Option<LorenzTrack>,
    added_t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, LorenzTrack), SamplerError> {
    let count = lp.samples_for(added_t)?;
    let mut track = match resume {
        Some(t) => t,
        None => lp.start(x, rng)?,
    };
    lp.advance(x, &mut track, count)?;
    Ok((lp.cost(&track), track))
}

impl StochasticObjective for LorenzProblem {
    type State = LorenzTrack;

    fn dimension(&self) -> usize {
        2
    }

    fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    fn begin(&self, x: &[f64], mut stream: ChaCha8Rng) -> Result<LorenzTrack, SamplerError> {
        self.start(x, &mut stream)
    }

    fn extend(&self, x: &[f64], state: &mut LorenzTrack, count: u64) -> Result<(), SamplerError> {
        self.advance(x, state, count)
    }

    fn estimate(&self, state: &LorenzTrack) -> (f64, u64) {
        (self.cost(state), state.count)
    }

    fn known_minimum(&self) -> Option<f64> {
        Some(0.0)
    }

    fn uncertainty(&self) -> UncertaintyModel {
        UncertaintyModel::empirical_sqrt(self.uq_scale, self.h)
    }
}
