use std::collections::HashMap;

use super::predicates::{self, Sign};
use super::{
    barycentric, squared_distance, GeometryError, Point, Simplex, CONTAINMENT_TOLERANCE,
    DUPLICATE_TOLERANCE, MAX_DIMENSION,
};

/// Vertex index standing for the point at infinity in ghost cells.
const GHOST: usize = usize::MAX;
const NO_CELL: usize = usize::MAX;

/// Stable handle to a simplex of a [`Triangulation`]. Handles are invalidated
/// when an insertion removes the simplex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SimplexId(pub usize);

#[derive(Clone, Debug)]
struct Cell {
    /// `n + 1` vertex indices; ghost cells hold exactly one `GHOST`.
    verts: Vec<usize>,
    /// `nbrs[i]` is the cell across the facet opposite `verts[i]`.
    nbrs: Vec<usize>,
    /// Present for finite cells only.
    simplex: Option<Simplex>,
    alive: bool,
}

impl Cell {
    fn ghost_slot(&self) -> Option<usize> {
        self.verts.iter().position(|&v| v == GHOST)
    }
}

/// Delaunay triangulation of a full-dimensional point set.
///
/// Finite cells are kept positively oriented. The convex hull is closed off
/// by ghost cells joining each hull facet to a vertex at infinity, so
/// insertion outside the current hull needs no special casing. Cospherical
/// configurations are resolved by the symbolic perturbation in
/// [`predicates::insphere_perturbed`], which makes the result independent of
/// insertion order.
#[derive(Clone, Debug)]
pub struct Triangulation {
    dim: usize,
    points: Vec<Point>,
    cells: Vec<Cell>,
    free: Vec<usize>,
    inside: Sign,
}

impl Triangulation {
    /// Triangulate `points` in `R^dim`. Point indices are preserved.
    pub fn build(points: Vec<Point>, dim: usize) -> Result<Self, GeometryError> {
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(GeometryError::UnsupportedDimension(dim));
        }
        for p in &points {
            check_point(p, dim)?;
        }
        for i in 1..points.len() {
            for j in 0..i {
                if is_duplicate(&points[i], &points[j]) {
                    return Err(GeometryError::DuplicatePoint(i));
                }
            }
        }
        if points.len() < dim + 1 {
            return Err(GeometryError::DegeneratePointSet(dim));
        }
        let seed = spanning_subset(&points, dim)?;
        let mut tri = Triangulation {
            dim,
            points,
            cells: Vec::new(),
            free: Vec::new(),
            inside: predicates::inside_sign(dim),
        };
        tri.seed_cells(&seed)?;
        for i in 0..tri.points.len() {
            if !seed.contains(&i) {
                tri.insert_index(i)?;
            }
        }
        Ok(tri)
    }

    /// Insert a new point, returning its index.
    pub fn insert(&mut self, p: Point) -> Result<usize, GeometryError> {
        check_point(&p, self.dim)?;
        if self.points.iter().any(|q| is_duplicate(q, &p)) {
            return Err(GeometryError::DuplicatePoint(self.points.len()));
        }
        self.points.push(p);
        let idx = self.points.len() - 1;
        if let Err(e) = self.insert_index(idx) {
            self.points.pop();
            return Err(e);
        }
        Ok(idx)
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Finite simplices in storage order.
    pub fn simplices(&self) -> impl Iterator<Item = (SimplexId, &Simplex)> + '_ {
        self.cells.iter().enumerate().filter_map(|(i, c)| {
            if c.alive {
                c.simplex.as_ref().map(|s| (SimplexId(i), s))
            } else {
                None
            }
        })
    }

    pub fn num_simplices(&self) -> usize {
        self.simplices().count()
    }

    pub fn simplex(&self, id: SimplexId) -> Option<&Simplex> {
        self.cells
            .get(id.0)
            .filter(|c| c.alive)
            .and_then(|c| c.simplex.as_ref())
    }

    /// Finite neighbors of a simplex; entry `i` is across the facet opposite
    /// vertex `i`, `None` on the hull.
    pub fn neighbors(&self, id: SimplexId) -> Vec<Option<SimplexId>> {
        self.cells[id.0]
            .nbrs
            .iter()
            .map(|&nb| {
                if self.cells[nb].simplex.is_some() {
                    Some(SimplexId(nb))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Coordinates of the vertices of a simplex.
    pub fn vertex_coords(&self, id: SimplexId) -> Vec<&[f64]> {
        self.cells[id.0]
            .verts
            .iter()
            .map(|&v| self.points[v].coords())
            .collect()
    }

    /// A simplex containing `x`. Points on shared facets may be assigned to
    /// either neighbor; the remoteness function is continuous there.
    pub fn locate(&self, x: &[f64]) -> Result<SimplexId, GeometryError> {
        if x.len() != self.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if let Some(id) = self.walk(x) {
            return Ok(id);
        }
        let mut best: Option<(SimplexId, f64)> = None;
        for (id, _) in self.simplices() {
            let Some(lam) = barycentric(&self.vertex_coords(id), x) else {
                continue;
            };
            let worst = lam.iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Ok(id);
            }
            if best.is_none_or(|(_, w)| worst > w) {
                best = Some((id, worst));
            }
        }
        match best {
            Some((id, w)) if w >= -CONTAINMENT_TOLERANCE => Ok(id),
            _ => Err(GeometryError::OutsideHull),
        }
    }

    /// Visibility walk: step across the facet with the most negative
    /// barycentric coordinate. `None` when the walk leaves the hull or does
    /// not settle.
    fn walk(&self, x: &[f64]) -> Option<SimplexId> {
        let mut cur = self.simplices().next()?.0 .0;
        for _ in 0..self.cells.len() {
            let lam = barycentric(&self.vertex_coords(SimplexId(cur)), x)?;
            let (i, worst) = lam
                .iter()
                .copied()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))?;
            if worst >= 0.0 {
                return Some(SimplexId(cur));
            }
            let nb = self.cells[cur].nbrs[i];
            if nb == NO_CELL || self.cells[nb].simplex.is_none() {
                return None;
            }
            cur = nb;
        }
        None
    }

    /// Global remoteness `e(x)`: the local function of the containing simplex.
    pub fn remoteness(&self, x: &[f64]) -> Result<f64, GeometryError> {
        let id = self.locate(x)?;
        Ok(self.cells[id.0].simplex.as_ref().unwrap().remoteness(x))
    }

    fn alloc(&mut self, cell: Cell) -> usize {
        if let Some(i) = self.free.pop() {
            self.cells[i] = cell;
            i
        } else {
            self.cells.push(cell);
            self.cells.len() - 1
        }
    }

    fn make_cell(&self, verts: Vec<usize>) -> Result<Cell, GeometryError> {
        let simplex = if verts.contains(&GHOST) {
            None
        } else {
            let coords: Vec<&[f64]> = verts.iter().map(|&v| self.points[v].coords()).collect();
            if predicates::orient(&coords) != Sign::Positive {
                return Err(GeometryError::InvertedCell);
            }
            Some(Simplex::new(verts.clone(), &coords)?)
        };
        Ok(Cell {
            nbrs: vec![NO_CELL; verts.len()],
            verts,
            simplex,
            alive: true,
        })
    }

    fn seed_cells(&mut self, seed: &[usize]) -> Result<(), GeometryError> {
        let mut verts = seed.to_vec();
        let coords: Vec<&[f64]> = verts.iter().map(|&v| self.points[v].coords()).collect();
        if predicates::orient(&coords) == Sign::Negative {
            verts.swap(0, 1);
        }
        let n1 = verts.len();
        let mut ids = vec![self.alloc(self.make_cell(verts.clone())?)];
        for i in 0..n1 {
            // Replace the apex by the ghost and flip orientation so that the
            // ghost sits on the far side of the hull facet.
            let mut g = verts.clone();
            g[i] = GHOST;
            g.swap(i, (i + 1) % n1);
            ids.push(self.alloc(self.make_cell(g)?));
        }
        let mut open: HashMap<Vec<usize>, (usize, usize)> = HashMap::new();
        for &c in &ids {
            for j in 0..n1 {
                self.link_facet(&mut open, c, j);
            }
        }
        debug_assert!(open.is_empty());
        Ok(())
    }

    fn link_facet(&mut self, open: &mut HashMap<Vec<usize>, (usize, usize)>, c: usize, j: usize) {
        let mut key: Vec<usize> = self.cells[c]
            .verts
            .iter()
            .enumerate()
            .filter(|(t, _)| *t != j)
            .map(|(_, &v)| v)
            .collect();
        key.sort_unstable();
        if let Some((oc, oj)) = open.remove(&key) {
            self.cells[c].nbrs[j] = oc;
            self.cells[oc].nbrs[oj] = c;
        } else {
            open.insert(key, (c, j));
        }
    }

    fn in_conflict(&self, c: usize, p: &[f64]) -> bool {
        let cell = &self.cells[c];
        let coords = |v: usize| -> &[f64] {
            if v == GHOST {
                p
            } else {
                self.points[v].coords()
            }
        };
        match cell.ghost_slot() {
            Some(k) => {
                let pts: Vec<&[f64]> = cell.verts.iter().map(|&v| coords(v)).collect();
                match predicates::orient(&pts) {
                    Sign::Positive => true,
                    Sign::Negative => false,
                    // On the hull facet's hyperplane: the point conflicts with
                    // the ghost exactly when it conflicts with the finite cell
                    // behind that facet.
                    Sign::Zero => self.in_conflict(cell.nbrs[k], p),
                }
            }
            None => {
                let pts: Vec<&[f64]> = cell.verts.iter().map(|&v| coords(v)).collect();
                predicates::insphere_perturbed(&pts, p) == self.inside
            }
        }
    }

    fn insert_index(&mut self, pi: usize) -> Result<(), GeometryError> {
        let p = self.points[pi].clone();
        let seed = (0..self.cells.len())
            .find(|&c| self.cells[c].alive && self.in_conflict(c, &p))
            .ok_or(GeometryError::InvertedCell)?;

        // 0 = unknown, 1 = conflict, 2 = clear
        let mut mark: HashMap<usize, u8> = HashMap::new();
        mark.insert(seed, 1);
        let mut stack = vec![seed];
        let mut cavity = vec![seed];
        let mut boundary: Vec<(usize, usize)> = Vec::new();
        while let Some(c) = stack.pop() {
            for i in 0..=self.dim {
                let nb = self.cells[c].nbrs[i];
                let state = match mark.get(&nb) {
                    Some(&s) => s,
                    None => {
                        let s = if self.in_conflict(nb, &p) { 1 } else { 2 };
                        mark.insert(nb, s);
                        if s == 1 {
                            stack.push(nb);
                            cavity.push(nb);
                        }
                        s
                    }
                };
                if state == 2 {
                    boundary.push((c, i));
                }
            }
        }

        let mut created = Vec::with_capacity(boundary.len());
        for &(c, i) in &boundary {
            let mut verts = self.cells[c].verts.clone();
            verts[i] = pi;
            created.push(self.make_cell(verts)?);
        }
        for &c in &cavity {
            self.cells[c].alive = false;
        }
        let mut open: HashMap<Vec<usize>, (usize, usize)> = HashMap::new();
        for (cell, &(c, i)) in created.into_iter().zip(&boundary) {
            let outside = self.cells[c].nbrs[i];
            let nc = if let Some(slot) = self.free.pop() {
                self.cells[slot] = cell;
                slot
            } else {
                self.cells.push(cell);
                self.cells.len() - 1
            };
            self.cells[nc].nbrs[i] = outside;
            let back = self.cells[outside]
                .nbrs
                .iter()
                .position(|&x| x == c)
                .expect("neighbor relation is symmetric");
            self.cells[outside].nbrs[back] = nc;
            for j in 0..=self.dim {
                if j != i {
                    self.link_facet(&mut open, nc, j);
                }
            }
        }
        debug_assert!(open.is_empty(), "unmatched cavity facets");
        self.free.extend(cavity);
        Ok(())
    }
}

fn check_point(p: &Point, dim: usize) -> Result<(), GeometryError> {
    if p.dim() != dim {
        return Err(GeometryError::DimensionMismatch {
            expected: dim,
            got: p.dim(),
        });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    Ok(())
}

fn is_duplicate(a: &[f64], b: &[f64]) -> bool {
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    squared_distance(a, b).sqrt() <= DUPLICATE_TOLERANCE * scale
}

/// Choose `dim + 1` affinely independent points, greedily maximizing the
/// distance to the affine hull of those already chosen.
fn spanning_subset(points: &[Point], dim: usize) -> Result<Vec<usize>, GeometryError> {
    let mut chosen = vec![0usize];
    let origin = points[0].coords();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let scale = points
        .iter()
        .map(|p| squared_distance(p, origin).sqrt())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(GeometryError::DegeneratePointSet(dim));
    }
    while chosen.len() < dim + 1 {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let mut r: Vec<f64> = p.iter().zip(origin).map(|(a, b)| a - b).collect();
            for b in &basis {
                let dot: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in r.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if best.as_ref().is_none_or(|(_, bn, _)| norm > *bn) {
                best = Some((i, norm, r));
            }
        }
        match best {
            Some((i, norm, r)) if norm > 1e-12 * scale => {
                chosen.push(i);
                basis.push(r.iter().map(|x| x / norm).collect());
            }
            _ => return Err(GeometryError::DegeneratePointSet(dim)),
        }
    }
    let coords: Vec<&[f64]> = chosen.iter().map(|&i| points[i].coords()).collect();
    if predicates::orient(&coords) == Sign::Zero {
        return Err(GeometryError::DegeneratePointSet(dim));
    }
    Ok(chosen)
}
