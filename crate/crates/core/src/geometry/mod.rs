//! Delaunay triangulations of small point sets in up to six dimensions, their
//! circumspheres, and the piecewise-quadratic remoteness function built on
//! them.

pub mod predicates;
mod triangulation;

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use triangulation::{SimplexId, Triangulation};

/// Highest supported dimension. The initial design alone has `2^n` points.
pub const MAX_DIMENSION: usize = 6;

/// Barycentric coordinates at or above this value count as inside a simplex.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-9;

/// Relative distance below which two points are considered the same.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point set does not span {0} dimensions")]
    DegeneratePointSet(usize),
    #[error("point {0} duplicates an existing point")]
    DuplicatePoint(usize),
    #[error("simplex vertices are affinely dependent")]
    DegenerateSimplex,
    #[error("point lies outside the triangulated hull")]
    OutsideHull,
    #[error("dimension {0} is not supported (1..={MAX_DIMENSION})")]
    UnsupportedDimension(usize),
    #[error("point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("cavity retriangulation produced an inverted simplex")]
    InvertedCell,
}

/// A location in the (normalized) parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        squared_distance(&self.0, other).sqrt()
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl From<&[f64]> for Point {
    fn from(v: &[f64]) -> Self {
        Point(v.to_vec())
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A simplex of a triangulation with its cached circumsphere.
#[derive(Clone, Debug, PartialEq)]
pub struct Simplex {
    vertices: Vec<usize>,
    circumcenter: Point,
    circumradius: f64,
    /// Coordinates of the first vertex.
    anchor: Point,
    /// Circumcenter minus anchor.
    offset: Vec<f64>,
}

impl Simplex {
    /// Indices into the owning triangulation's point list.
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn circumcenter(&self) -> &Point {
        &self.circumcenter
    }

    pub fn circumradius(&self) -> f64 {
        self.circumradius
    }

    pub(crate) fn new(vertices: Vec<usize>, coords: &[&[f64]]) -> Result<Self, GeometryError> {
        let offset = circumsphere_offset(coords)?;
        let anchor = Point(coords[0].to_vec());
        let circumcenter = Point(anchor.iter().zip(&offset).map(|(a, w)| a + w).collect());
        let circumradius = offset.iter().map(|w| w * w).sum::<f64>().sqrt();
        Ok(Simplex {
            vertices,
            circumcenter,
            circumradius,
            anchor,
            offset,
        })
    }

    /// Local remoteness `R^2 - |x - Z|^2`, evaluated relative to the first
    /// vertex as `2 d.(Z - v0) - |d|^2` with `d = x - v0`.
    pub fn remoteness(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.anchor.iter())
            .zip(&self.offset)
            .map(|((xi, ai), wi)| {
                let d = xi - ai;
                d * (2.0 * wi - d)
            })
            .sum()
    }

    /// Gradient of the local remoteness, `-2 (x - Z)`.
    pub fn remoteness_gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.circumcenter.iter())
            .map(|(xi, zi)| -2.0 * (xi - zi))
            .collect()
    }
}

/// Circumcenter and circumradius of `n + 1` points in `R^n`.
pub fn circumsphere(vertices: &[&[f64]]) -> Result<(Point, f64), GeometryError> {
    let offset = circumsphere_offset(vertices)?;
    let center: Vec<f64> = vertices[0]
        .iter()
        .zip(&offset)
        .map(|(o, w)| o + w)
        .collect();
    let radius = offset.iter().map(|w| w * w).sum::<f64>().sqrt();
    Ok((Point(center), radius))
}

/// Circumcenter relative to the first vertex.
fn circumsphere_offset(vertices: &[&[f64]]) -> Result<Vec<f64>, GeometryError> {
    let n = vertices.len().saturating_sub(1);
    if n == 0 || vertices.iter().any(|v| v.len() != n) {
        return Err(GeometryError::DegenerateSimplex);
    }
    if predicates::orient(vertices) == predicates::Sign::Zero {
        return Err(GeometryError::DegenerateSimplex);
    }
    let origin = vertices[0];
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let v = vertices[i + 1];
        let mut sq = 0.0;
        for j in 0..n {
            let d = v[j] - origin[j];
            a[(i, j)] = d;
            sq += d * d;
        }
        b[i] = 0.5 * sq;
    }
    let offset = a
        .full_piv_lu()
        .solve(&b)
        .ok_or(GeometryError::DegenerateSimplex)?;
    if offset.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::DegenerateSimplex);
    }
    Ok(offset.iter().copied().collect())
}

/// Barycentric coordinates of `x` with respect to `vertices`.
pub fn barycentric(vertices: &[&[f64]], x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len();
    let origin = vertices[0];
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = vertices[i + 1][j] - origin[j];
        }
    }
    let rhs = DVector::from_iterator(n, (0..n).map(|j| x[j] - origin[j]));
    let lam = a.lu().solve(&rhs)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0 - lam.sum());
    out.extend(lam.iter());
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn thin_simplex_remoteness_is_well_conditioned() {
        // circumradius about 1250 with an inradius near 1e-4
        let v: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 0.0], &[0.5, 1e-4]];
        let s = Simplex::new(vec![0, 1, 2], &v).unwrap();
        assert!(s.circumradius() > 1000.0);
        for p in v {
            assert!(s.remoteness(p).abs() <= 1e-15);
        }
        let (x, h) = ([0.5, 0.3e-4], 1e-5);
        let fd = (s.remoteness(&[x[0], x[1] + h]) - 2.0 * s.remoteness(&x)
            + s.remoteness(&[x[0], x[1] - h]))
            / (h * h);
        assert!((fd + 2.0).abs() <= 1e-4, "fd {fd}");
    }

    #[test]
    fn right_triangle_circumsphere() {
        let (c, r) = circumsphere(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_relative_eq!(c[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(c[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn segment_circumsphere_is_midpoint() {
        let (c, r) = circumsphere(&[&[0.0], &[1.0]]).unwrap();
        assert_eq!(c.coords(), &[0.5]);
        assert_eq!(r, 0.5);
    }

    #[test]
    fn degenerate_simplex_rejected() {
        assert_eq!(
            circumsphere(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]]),
            Err(GeometryError::DegenerateSimplex)
        );
    }

    #[test]
    fn random_tetrahedra_are_equidistant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let pts: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
                .collect();
            let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let (c, r) = circumsphere(&refs).unwrap();
            for p in &pts {
                let d = c.distance(p);
                assert!((d - r).abs() <= 1e-10 * r, "d = {d}, r = {r}");
            }
        }
    }

    #[test]
    fn barycentric_of_centroid() {
        let lam = barycentric(&[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 3.0]], &[1.0, 1.0]).unwrap();
        for l in lam {
            assert_relative_eq!(l, 1.0 / 3.0, epsilon = 1e-14);
        }
    }
}
