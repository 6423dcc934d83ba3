//! Orientation and in-sphere predicates with a floating-point filter and an
//! exact big-integer fallback.
//!
//! Every `f64` is a dyadic rational, so after scaling all coordinates by a
//! common power of two the determinants can be evaluated exactly over the
//! integers. The floating filter settles the sign whenever the computed
//! determinant clears a conservative error bound; grid points are frequently
//! cospherical, so the exact path is exercised routinely, not just in
//! pathological cases.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};

/// Largest matrix order handled by the subset expansion (n <= 6 gives 7 for
/// in-sphere tests).
const MAX_ORDER: usize = 8;

/// Sign of a determinant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    fn of_f64(v: f64) -> Self {
        if v > 0.0 {
            Sign::Positive
        } else if v < 0.0 {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }

    fn of_big(v: &BigInt) -> Self {
        if v.is_zero() {
            Sign::Zero
        } else if v.is_positive() {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Negative => Sign::Positive,
            Sign::Zero => Sign::Zero,
            Sign::Positive => Sign::Negative,
        }
    }
}

/// Determinant of a `k x k` row-major matrix by Laplace expansion over column
/// subsets, together with the permanent of the absolute entries (used as the
/// error scale of the floating filter).
fn det_and_permanent(m: &[f64], k: usize) -> (f64, f64) {
    debug_assert!(k <= MAX_ORDER && m.len() == k * k);
    let full = (1usize << k) - 1;
    let mut det = [0.0f64; 1 << MAX_ORDER];
    let mut perm = [0.0f64; 1 << MAX_ORDER];
    det[0] = 1.0;
    perm[0] = 1.0;
    for mask in 1..=full {
        let row = (mask as u32).count_ones() as usize - 1;
        let mut d = 0.0;
        let mut p = 0.0;
        for j in 0..k {
            if mask & (1 << j) == 0 {
                continue;
            }
            let sub = mask & !(1 << j);
            let a = m[row * k + j];
            let term = a * det[sub];
            if (mask >> (j + 1)).count_ones() % 2 == 0 {
                d += term;
            } else {
                d -= term;
            }
            p += a.abs() * perm[sub];
        }
        det[mask] = d;
        perm[mask] = p;
    }
    (det[full], perm[full])
}

fn det_exact(m: &[BigInt], k: usize) -> BigInt {
    let full = (1usize << k) - 1;
    let mut det: Vec<BigInt> = vec![BigInt::zero(); 1 << k];
    det[0] = BigInt::from(1);
    for mask in 1..=full {
        let row = (mask as u32).count_ones() as usize - 1;
        let mut d = BigInt::zero();
        for j in 0..k {
            if mask & (1 << j) == 0 {
                continue;
            }
            let a = &m[row * k + j];
            if a.is_zero() {
                continue;
            }
            let term = a * &det[mask & !(1 << j)];
            if (mask >> (j + 1)).count_ones() % 2 == 0 {
                d += term;
            } else {
                d -= term;
            }
        }
        det[mask] = d;
    }
    std::mem::take(&mut det[full])
}

/// Split a finite double into `(mantissa, exponent)` with `v = m * 2^e`.
fn decompose(v: f64) -> (i64, i32) {
    if v == 0.0 {
        return (0, 0);
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 0 { 1i64 } else { -1 };
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i64;
    let (mant, exp) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1i64 << 52), exp_bits - 1075)
    };
    (sign * mant, exp)
}

/// Exact integer images of a set of points, all scaled by one power of two.
fn to_integers(points: &[&[f64]]) -> Vec<Vec<BigInt>> {
    let min_exp = points
        .iter()
        .flat_map(|p| p.iter())
        .filter(|v| **v != 0.0)
        .map(|v| decompose(*v).1)
        .min()
        .unwrap_or(0);
    points
        .iter()
        .map(|p| {
            p.iter()
                .map(|&v| {
                    let (m, e) = decompose(v);
                    BigInt::from(m) << ((e - min_exp) as usize)
                })
                .collect()
        })
        .collect()
}

fn filter_bound(perm: f64, k: usize) -> f64 {
    32.0 * k as f64 * f64::EPSILON * perm
}

/// Sign of `det [[p_0, 1], ..., [p_n, 1]]` for `n + 1` points in `R^n`.
pub fn orient(points: &[&[f64]]) -> Sign {
    let k = points.len() - 1;
    debug_assert!(points.iter().all(|p| p.len() == k));
    if k == 0 {
        return Sign::Positive;
    }
    let last = points[k];
    let mut m = [0.0f64; MAX_ORDER * MAX_ORDER];
    for i in 0..k {
        for j in 0..k {
            m[i * k + j] = points[i][j] - last[j];
        }
    }
    let (d, perm) = det_and_permanent(&m[..k * k], k);
    if d.abs() > filter_bound(perm, k) {
        return Sign::of_f64(d);
    }
    orient_exact(points)
}

fn orient_exact(points: &[&[f64]]) -> Sign {
    let k = points.len() - 1;
    let ints = to_integers(points);
    let mut m = Vec::with_capacity(k * k);
    for row in ints.iter().take(k) {
        for j in 0..k {
            m.push(&row[j] - &ints[k][j]);
        }
    }
    Sign::of_big(&det_exact(&m, k))
}

/// Sign of the lifted determinant
/// `det [[v_0, |v_0|^2, 1], ..., [v_n, |v_n|^2, 1], [p, |p|^2, 1]]`.
///
/// For a positively oriented simplex the sign is a fixed function of the
/// dimension when `p` lies strictly inside the circumsphere; see
/// [`inside_sign`].
pub fn insphere(verts: &[&[f64]], p: &[f64]) -> Sign {
    let n = p.len();
    let k = n + 1;
    debug_assert_eq!(verts.len(), k);
    let mut m = [0.0f64; MAX_ORDER * MAX_ORDER];
    for (i, v) in verts.iter().enumerate() {
        let mut h = 0.0;
        for j in 0..n {
            let d = v[j] - p[j];
            m[i * k + j] = d;
            h += d * d;
        }
        m[i * k + n] = h;
    }
    let (d, perm) = det_and_permanent(&m[..k * k], k);
    if d.abs() > filter_bound(perm, k) {
        return Sign::of_f64(d);
    }
    insphere_exact(verts, p)
}

fn insphere_exact(verts: &[&[f64]], p: &[f64]) -> Sign {
    let n = p.len();
    let k = n + 1;
    let mut all: Vec<&[f64]> = verts.to_vec();
    all.push(p);
    let ints = to_integers(&all);
    let mut m = Vec::with_capacity(k * k);
    for row in ints.iter().take(k) {
        let mut h = BigInt::zero();
        for j in 0..n {
            let d = &row[j] - &ints[k][j];
            h += &d * &d;
            m.push(d);
        }
        m.push(h);
    }
    Sign::of_big(&det_exact(&m, k))
}

/// In-sphere sign under a symbolic perturbation of the lifted heights.
///
/// Each point `q` is lifted to `|q|^2 + eps_q`, where the infinitesimals are
/// strictly ordered by the lexicographic order of the coordinates (the
/// lexicographically smallest point receives the dominant perturbation). The
/// lifted determinant is linear in each `eps_q`, with coefficient equal to the
/// cofactor of that point's height entry, which is (up to sign) the
/// orientation of the remaining points. Because the simplex vertices are
/// affinely independent, the coefficient of `p` never vanishes, so the result
/// is never [`Sign::Zero`].
///
/// The ordering depends only on coordinates, so the triangulation that these
/// predicates define is a function of the point set alone.
pub fn insphere_perturbed(verts: &[&[f64]], p: &[f64]) -> Sign {
    let s = insphere(verts, p);
    if s != Sign::Zero {
        return s;
    }
    let n = p.len();
    let mut rows: Vec<&[f64]> = verts.to_vec();
    rows.push(p);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(rows[a], rows[b]));
    for &i in &order {
        let others: Vec<&[f64]> = rows
            .iter()
            .enumerate()
            .filter(|(t, _)| *t != i)
            .map(|(_, r)| *r)
            .collect();
        let minor = orient(&others);
        if minor == Sign::Zero {
            continue;
        }
        // Cofactor sign (-1)^(i + n) for the height column at index n.
        return if (i + n) % 2 == 0 {
            minor
        } else {
            minor.flip()
        };
    }
    Sign::Zero
}

pub fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Sign of [`insphere`] for a positively oriented simplex and a point strictly
/// inside its circumsphere, in dimension `n`.
pub fn inside_sign(n: usize) -> Sign {
    let mut verts: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        verts.push(e);
    }
    let mut refs: Vec<&[f64]> = verts.iter().map(|v| v.as_slice()).collect();
    if orient(&refs) == Sign::Negative {
        refs.swap(0, 1);
    }
    let centroid: Vec<f64> = (0..n).map(|_| 1.0 / (n as f64 + 1.0)).collect();
    insphere(&refs, &centroid)
}
