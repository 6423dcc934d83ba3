//! Dyadic Cartesian grids over a box and quantization onto them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

/// Finest supported level. Node coordinates of the unit grid stay exactly
/// representable in an `f64` up to this level.
pub const MAX_LEVEL: u32 = 52;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("coordinate {index} = {value} lies outside [{lower}, {upper}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("lower bound must be strictly below upper bound in every coordinate")]
    InvalidBounds,
    #[error("grid level {0} exceeds the maximum of {MAX_LEVEL}")]
    LevelTooFine(u32),
    #[error("point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Exact location of a grid node, expressed as integer indices on the
/// finest grid so that nodes from different levels compare exactly.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridKey(pub Vec<u64>);

/// The grid `L_l`: `2^l` equal subdivisions of each side of the box `[a, b]`,
/// with nodes at both bounds, giving `(2^l + 1)^n` nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLevel {
    level: u32,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl GridLevel {
    pub fn new(level: u32, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GridError> {
        if level > MAX_LEVEL {
            return Err(GridError::LevelTooFine(level));
        }
        if lower.is_empty()
            || lower.len() != upper.len()
            || lower
                .iter()
                .zip(&upper)
                .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
        {
            return Err(GridError::InvalidBounds);
        }
        Ok(GridLevel {
            level,
            lower,
            upper,
        })
    }

    /// Grid over the unit box `[0, 1]^n`.
    pub fn unit(level: u32, n: usize) -> Result<Self, GridError> {
        Self::new(level, vec![0.0; n], vec![1.0; n])
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `N_l = 2^l`.
    pub fn subdivisions(&self) -> u64 {
        1u64 << self.level
    }

    /// Number of nodes, `(N_l + 1)^n`, if it fits in a `u128`.
    pub fn node_count(&self) -> Option<u128> {
        (self.subdivisions() as u128 + 1).checked_pow(self.dim() as u32)
    }

    /// The next finer grid over the same box.
    pub fn refined(&self) -> Result<Self, GridError> {
        Self::new(self.level + 1, self.lower.clone(), self.upper.clone())
    }

    /// Maximum quantization error `||b - a|| / (2 N_l)`.
    pub fn max_quantization_error(&self) -> f64 {
        let diag = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        diag / (2.0 * self.subdivisions() as f64)
    }

    /// Per-axis node indices of the nearest node. Ties round away from the
    /// lower bound.
    pub fn quantize_indices(&self, x: &[f64]) -> Result<Vec<u64>, GridError> {
        if x.len() != self.dim() {
            return Err(GridError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let n = self.subdivisions() as f64;
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let (a, b) = (self.lower[j], self.upper[j]);
                if !(v >= a && v <= b) {
                    return Err(GridError::OutOfBounds {
                        index: j,
                        value: v,
                        lower: a,
                        upper: b,
                    });
                }
                let t = (v - a) / (b - a) * n;
                Ok(t.round().clamp(0.0, n) as u64)
            })
            .collect()
    }

    /// Coordinates of the node with the given per-axis indices. Indices `0`
    /// and `N_l` map exactly onto the bounds.
    pub fn node(&self, indices: &[u64]) -> Point {
        let n = self.subdivisions();
        Point::new(
            indices
                .iter()
                .enumerate()
                .map(|(j, &z)| {
                    let (a, b) = (self.lower[j], self.upper[j]);
                    if z == 0 {
                        a
                    } else if z >= n {
                        b
                    } else {
                        a + (b - a) * (z as f64 / n as f64)
                    }
                })
                .collect(),
        )
    }

    /// Nearest grid node to `x`.
    pub fn quantize(&self, x: &[f64]) -> Result<Point, GridError> {
        Ok(self.node(&self.quantize_indices(x)?))
    }

    /// Level-independent key of the node with the given indices.
    pub fn key(&self, indices: &[u64]) -> GridKey {
        GridKey(
            indices
                .iter()
                .map(|z| z << (MAX_LEVEL - self.level))
                .collect(),
        )
    }
}

/// Quantize `x` onto `grid` (free-function form).
pub fn quantize(grid: &GridLevel, x: &[f64]) -> Result<Point, GridError> {
    grid.quantize(x)
}

pub fn max_quantization_error(grid: &GridLevel) -> f64 {
    grid.max_quantization_error()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn level_one_example() {
        let g = GridLevel::unit(1, 2).unwrap();
        assert_eq!(g.quantize(&[0.3, 0.6]).unwrap().coords(), &[0.5, 0.5]);
    }

    #[test]
    fn nodes_quantize_to_themselves() {
        let g = GridLevel::unit(3, 2).unwrap();
        assert_eq!(g.quantize(&[0.375, 1.0]).unwrap().coords(), &[0.375, 1.0]);
    }

    #[test]
    fn ties_round_away_from_lower_bound() {
        let g = GridLevel::unit(1, 1).unwrap();
        assert_eq!(g.quantize(&[0.25]).unwrap().coords(), &[0.5]);
        assert_eq!(g.quantize(&[0.75]).unwrap().coords(), &[1.0]);
    }

    #[test]
    fn max_error_values() {
        let g = GridLevel::unit(3, 1).unwrap();
        assert_eq!(g.max_quantization_error(), 0.0625);
        let g = GridLevel::unit(0, 2).unwrap();
        assert!((g.max_quantization_error() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-16);
        for l in 0..10 {
            let a = GridLevel::unit(l, 3).unwrap().max_quantization_error();
            let b = GridLevel::unit(l + 1, 3).unwrap().max_quantization_error();
            assert_eq!(a, 2.0 * b);
        }
    }

    #[test]
    fn node_count() {
        assert_eq!(GridLevel::unit(2, 3).unwrap().node_count(), Some(125));
    }

    #[test]
    fn out_of_bounds_and_invalid() {
        let g = GridLevel::unit(2, 1).unwrap();
        assert!(matches!(
            g.quantize(&[1.5]),
            Err(GridError::OutOfBounds { index: 0, .. })
        ));
        assert_eq!(
            GridLevel::new(1, vec![1.0], vec![1.0]),
            Err(GridError::InvalidBounds)
        );
        assert_eq!(
            GridLevel::unit(MAX_LEVEL + 1, 1),
            Err(GridError::LevelTooFine(MAX_LEVEL + 1))
        );
    }

    #[test]
    fn bounds_map_exactly_on_awkward_boxes() {
        let g = GridLevel::new(3, vec![0.1, 24.0], vec![0.3, 29.15]).unwrap();
        let q = g.quantize(&[0.3, 24.0]).unwrap();
        assert_eq!(q.coords(), &[0.3, 24.0]);
    }

    #[test]
    fn keys_agree_across_levels() {
        let coarse = GridLevel::unit(2, 1).unwrap();
        let fine = GridLevel::unit(5, 1).unwrap();
        assert_eq!(coarse.key(&[1]), fine.key(&[8]));
        assert_ne!(coarse.key(&[1]), fine.key(&[9]));
    }

    proptest! {
        #[test]
        fn quantization_properties(
            level in 0u32..8,
            coords in prop::collection::vec(0.0f64..=1.0, 1..5),
            pin in prop::collection::vec(0u8..4, 1..5),
        ) {
            let n = coords.len().min(pin.len());
            let mut x = coords[..n].to_vec();
            // pin some coordinates to the bounds to exercise the active set
            for j in 0..n {
                match pin[j] { 0 => x[j] = 0.0, 1 => x[j] = 1.0, _ => {} }
            }
            let g = GridLevel::new(level, vec![-2.0; n], vec![3.0; n]).unwrap();
            let y: Vec<f64> = x.iter().map(|v| -2.0 + 5.0 * v).collect();
            let q = g.quantize(&y).unwrap();
            let err = q.distance(&y);
            prop_assert!(err <= g.max_quantization_error() * (1.0 + 1e-12));
            let qq = g.quantize(&q).unwrap();
            prop_assert_eq!(&qq, &q);
            for j in 0..n {
                if y[j] == -2.0 { prop_assert_eq!(q[j], -2.0); }
                if y[j] == 3.0 { prop_assert_eq!(q[j], 3.0); }
            }
        }
    }
}
