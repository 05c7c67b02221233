//! Box domains, their uniform tensor grids and distance-to-boundary queries.
//!
//! Coordinates are stored in fixed-size arrays of length [`MAX_DIM`]; in one
//! dimension only the first component is meaningful and the rest stay zero.
//! This keeps the hot simulation loops allocation free.

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 2;

/// A point or vector in at most [`MAX_DIM`] dimensions.
pub type Point = [f64; MAX_DIM];

/// A `MAX_DIM x MAX_DIM` matrix, row major.
pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

/// Smallest number of cells per axis accepted by [`Grid::new`].
pub const MIN_CELLS: usize = 4;

/// The open box `G = (lower_0, upper_0) x ... ` in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    dim: usize,
    lower: Point,
    upper: Point,
}

impl BoxDomain {
    pub fn new(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidDomain(format!(
                "lower has {} coordinates but upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        let dim = lower.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidDomain(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for i in 0..dim {
            if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] < upper[i]) {
                return Err(Error::InvalidDomain(format!(
                    "axis {i}: need finite lower < upper, got [{}, {}]",
                    lower[i], upper[i]
                )));
            }
            lo[i] = lower[i];
            hi[i] = upper[i];
        }
        Ok(Self {
            dim,
            lower: lo,
            upper: hi,
        })
    }

    /// The interval `(0, length)`.
    pub fn interval(length: f64) -> Result<Self> {
        Self::new(&[0.0], &[length])
    }

    pub fn unit_square() -> Self {
        Self::new(&[0.0, 0.0], &[1.0, 1.0]).expect("unit square is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.dim]
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|i| self.width(i)).product()
    }

    pub fn center(&self) -> Point {
        let mut c = [0.0; MAX_DIM];
        for i in 0..self.dim {
            c[i] = 0.5 * (self.lower[i] + self.upper[i]);
        }
        c
    }

    /// True for points of the open box.
    #[inline]
    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|i| x[i] > self.lower[i] && x[i] < self.upper[i])
    }

    /// True for points of the closed box.
    #[inline]
    pub fn contains_closed(&self, x: &Point) -> bool {
        (0..self.dim).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    /// Signed distance to the boundary without the closed-box check:
    /// positive inside, zero on the boundary, negative outside.
    #[inline]
    pub fn signed_distance(&self, x: &Point) -> f64 {
        let mut d = f64::INFINITY;
        for i in 0..self.dim {
            d = d.min(x[i] - self.lower[i]).min(self.upper[i] - x[i]);
        }
        d
    }

    /// Projects a point onto the closed box.
    pub fn clamp(&self, x: &Point) -> Point {
        let mut y = *x;
        for i in 0..self.dim {
            y[i] = y[i].clamp(self.lower[i], self.upper[i]);
        }
        y
    }

    /// Lifts a slice of coordinates into a [`Point`], checking its length.
    pub fn point(&self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: coords.len(),
            });
        }
        let mut p = [0.0; MAX_DIM];
        p[..self.dim].copy_from_slice(coords);
        Ok(p)
    }
}

/// `dist(x, dG)` for a point of the closed box.
pub fn distance_to_boundary(domain: &BoxDomain, x: &Point) -> Result<f64> {
    if !domain.contains_closed(x) {
        return Err(Error::OutsideDomain {
            point: x[..domain.dim()].to_vec(),
        });
    }
    Ok(domain.signed_distance(x).max(0.0))
}

/// Uniform tensor grid on a [`BoxDomain`].
///
/// Nodes are numbered lexicographically with axis 0 varying fastest. Interior
/// nodes (every index strictly between 0 and `n`) get a second, dense
/// numbering used by the discrete operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: BoxDomain,
    cells: [usize; MAX_DIM],
    spacing: Point,
    interior: Vec<usize>,
    interior_of_node: Vec<Option<usize>>,
    weights: Vec<f64>,
}

impl Grid {
    /// Builds the grid with `n_per_axis[i]` cells along axis `i`.
    pub fn new(domain: BoxDomain, n_per_axis: &[usize]) -> Result<Self> {
        let dim = domain.dim();
        if n_per_axis.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: n_per_axis.len(),
            });
        }
        let mut cells = [0usize; MAX_DIM];
        let mut spacing = [0.0; MAX_DIM];
        for (axis, &n) in n_per_axis.iter().enumerate() {
            if n < MIN_CELLS {
                return Err(Error::GridTooCoarse { axis, n });
            }
            cells[axis] = n;
            spacing[axis] = domain.width(axis) / n as f64;
        }

        let counts = node_counts(dim, &cells);
        let total: usize = counts.iter().product();
        let mut interior = Vec::new();
        let mut interior_of_node = vec![None; total];
        let mut weights = vec![0.0; total];
        for node in 0..total {
            let idx = unravel(node, &counts);
            let mut boundary = false;
            let mut w = 1.0;
            for axis in 0..dim {
                let end = idx[axis] == 0 || idx[axis] == cells[axis];
                boundary |= end;
                w *= if end { 0.5 } else { 1.0 } * spacing[axis];
            }
            weights[node] = w;
            if !boundary {
                interior_of_node[node] = Some(interior.len());
                interior.push(node);
            }
        }
        Ok(Self {
            domain,
            cells,
            spacing,
            interior,
            interior_of_node,
            weights,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Number of cells along `axis`.
    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dim()]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.spacing[i])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing[i]).fold(0.0, f64::max)
    }

    /// Nodes per axis, `n + 1` on active axes and 1 on unused ones.
    pub fn node_counts(&self) -> [usize; MAX_DIM] {
        node_counts(self.dim(), &self.cells)
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    /// Node ids of the interior nodes, in interior order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_of_node[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.interior_of_node[node].is_none()
    }

    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        unravel(node, &self.node_counts())
    }

    pub fn node_id(&self, idx: &[usize; MAX_DIM]) -> usize {
        let counts = self.node_counts();
        idx[0] + counts[0] * idx[1]
    }

    pub fn node_coords(&self, node: usize) -> Point {
        let idx = self.multi_index(node);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim() {
            x[axis] = if idx[axis] == self.cells[axis] {
                self.domain.upper[axis]
            } else {
                self.domain.lower[axis] + idx[axis] as f64 * self.spacing[axis]
            };
        }
        x
    }

    /// Tensor trapezoid weight of a node.
    pub fn weight(&self, node: usize) -> f64 {
        self.weights[node]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weights restricted to interior nodes, in interior order.
    pub fn interior_weights(&self) -> Vec<f64> {
        self.interior.iter().map(|&n| self.weights[n]).collect()
    }

    /// Expands interior values to a full nodal field with zero boundary values.
    pub fn embed(&self, interior_values: &[f64]) -> Result<Vec<f64>> {
        if interior_values.len() != self.interior.len() {
            return Err(Error::LengthMismatch {
                expected: self.interior.len(),
                got: interior_values.len(),
            });
        }
        let mut full = vec![0.0; self.node_count()];
        for (k, &node) in self.interior.iter().enumerate() {
            full[node] = interior_values[k];
        }
        Ok(full)
    }

    /// Restricts a full nodal field to the interior nodes.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&n| full[n]).collect()
    }

    /// Samples a function at every node.
    pub fn sample<F: Fn(&Point) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.node_count())
            .map(|n| f(&self.node_coords(n)))
            .collect()
    }

    /// Distance of a node to the boundary.
    pub fn node_distance(&self, node: usize) -> f64 {
        self.domain
            .signed_distance(&self.node_coords(node))
            .max(0.0)
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_axis().iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing[i]).product()
    }

    /// Index of the cell containing a point of the closed box; points on the
    /// upper faces belong to the last cell.
    pub fn cell_of(&self, x: &Point) -> Option<usize> {
        if !self.domain.contains_closed(x) {
            return None;
        }
        let mut id = 0;
        let mut stride = 1;
        for axis in 0..self.dim() {
            let t = (x[axis] - self.domain.lower[axis]) / self.spacing[axis];
            let k = (t.floor() as usize).min(self.cells[axis] - 1);
            id += k * stride;
            stride *= self.cells[axis];
        }
        Some(id)
    }

    /// Lower corner of a cell.
    pub fn cell_origin(&self, cell: usize) -> Point {
        let mut x = [0.0; MAX_DIM];
        let mut rest = cell;
        for axis in 0..self.dim() {
            let k = rest % self.cells[axis];
            rest /= self.cells[axis];
            x[axis] = self.domain.lower[axis] + k as f64 * self.spacing[axis];
        }
        x
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let mut x = self.cell_origin(cell);
        for axis in 0..self.dim() {
            x[axis] += 0.5 * self.spacing[axis];
        }
        x
    }

    /// Locates a point of the closed box for multilinear interpolation: the
    /// lower-corner node multi-index of its cell and the local coordinates in
    /// `[0, 1]`.
    pub fn locate(&self, x: &Point) -> ([usize; MAX_DIM], Point) {
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for axis in 0..self.dim() {
            let t = (x[axis] - self.domain.lower[axis]) / self.spacing[axis];
            let k = (t.floor().max(0.0) as usize).min(self.cells[axis] - 1);
            base[axis] = k;
            frac[axis] = (t - k as f64).clamp(0.0, 1.0);
        }
        (base, frac)
    }

    /// Corner nodes of the cell with lower corner `base` and their
    /// multilinear weights at local coordinates `frac`.
    pub fn cell_corners(
        &self,
        base: &[usize; MAX_DIM],
        frac: &Point,
    ) -> ([usize; 1 << MAX_DIM], [f64; 1 << MAX_DIM], usize) {
        let dim = self.dim();
        let mut nodes = [0usize; 1 << MAX_DIM];
        let mut weights = [0.0; 1 << MAX_DIM];
        let corners = 1 << dim;
        for (c, (node, weight)) in nodes
            .iter_mut()
            .zip(weights.iter_mut())
            .take(corners)
            .enumerate()
        {
            let mut idx = *base;
            let mut w = 1.0;
            for axis in 0..dim {
                if c >> axis & 1 == 1 {
                    idx[axis] += 1;
                    w *= frac[axis];
                } else {
                    w *= 1.0 - frac[axis];
                }
            }
            *node = self.node_id(&idx);
            *weight = w;
        }
        (nodes, weights, corners)
    }

    /// Multilinear interpolation of a full nodal field.
    pub fn interpolate(&self, field: &[f64], x: &Point) -> f64 {
        let (base, frac) = self.locate(x);
        let (nodes, weights, corners) = self.cell_corners(&base, &frac);
        (0..corners).map(|c| weights[c] * field[nodes[c]]).sum()
    }

    /// True when both grids discretize the same box with the same resolution.
    pub fn same_layout(&self, other: &Grid) -> bool {
        self.domain == other.domain && self.cells == other.cells
    }
}

fn node_counts(dim: usize, cells: &[usize; MAX_DIM]) -> [usize; MAX_DIM] {
    let mut counts = [1usize; MAX_DIM];
    for axis in 0..dim {
        counts[axis] = cells[axis] + 1;
    }
    counts
}

fn unravel(node: usize, counts: &[usize; MAX_DIM]) -> [usize; MAX_DIM] {
    [node % counts[0], node / counts[0]]
}

/// Free-function form of [`Grid::new`].
pub fn build_grid(domain: BoxDomain, n_per_axis: &[usize]) -> Result<Grid> {
    Grid::new(domain, n_per_axis)
}

#[inline]
pub fn dot(u: &Point, v: &Point, dim: usize) -> f64 {
    (0..dim).map(|i| u[i] * v[i]).sum()
}

#[inline]
pub fn mat_vec(m: &Matrix, v: &Point, rows: usize, cols: usize) -> Point {
    let mut out = [0.0; MAX_DIM];
    for i in 0..rows {
        out[i] = (0..cols).map(|j| m[i][j] * v[j]).sum();
    }
    out
}

/// `m^T v` for an `rows x cols` matrix.
#[inline]
pub fn mat_t_vec(m: &Matrix, v: &Point, rows: usize, cols: usize) -> Point {
    let mut out = [0.0; MAX_DIM];
    for j in 0..cols {
        out[j] = (0..rows).map(|i| m[i][j] * v[i]).sum();
    }
    out
}

/// `v . a v` for a `dim x dim` matrix.
#[inline]
pub fn quadratic_form(a: &Matrix, v: &Point, dim: usize) -> f64 {
    dot(v, &mat_vec(a, v, dim, dim), dim)
}

/// Eigenvalues of the symmetric part of a `dim x dim` matrix, ascending.
pub fn symmetric_eigenvalues(a: &Matrix, dim: usize) -> Point {
    match dim {
        1 => [a[0][0], a[0][0]],
        _ => {
            let off = 0.5 * (a[0][1] + a[1][0]);
            let mean = 0.5 * (a[0][0] + a[1][1]);
            let radius = (0.25 * (a[0][0] - a[1][1]).powi(2) + off * off).sqrt();
            [mean - radius, mean + radius]
        }
    }
}

/// Euclidean norm of the first `dim` components.
#[inline]
pub fn norm(v: &Point, dim: usize) -> f64 {
    dot(v, v, dim).sqrt()
}
