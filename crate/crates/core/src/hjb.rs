//! Cost potentials `-log` of the principal eigenfunctions, the residuals of
//! the two ergodic HJB equations, and the optimal feedback drifts.
//!
//! With `Psi = -log psi` the generator equation reads
//! `b . DPsi + 1/2 tr[a D^2 Psi] - 1/2 DPsi . a DPsi = lambda`, and with
//! `Phi~ = -log phi~` the adjoint one reads
//! `beta~ . DPhi~ + 1/2 tr[a D^2 Phi~] - 1/2 DPhi~ . a DPhi~ + c~ = lambda`.

use crate::coefficients::{
    drift_beta, drift_beta_tilde, potential_c_tilde, CoefficientModel, DensityWeight,
};
use crate::error::{Error, Result};
use crate::geometry::{mat_t_vec, mat_vec, quadratic_form, Grid, Point, MAX_DIM};

/// `Gamma = -log f` for a positive eigenfunction `f`, with its gradient.
///
/// The gradient at interior nodes is `-Df / f` with `Df` from central
/// differences of `f` (boundary values zero). Near the boundary, where `f`
/// vanishes linearly, this quotient reproduces the `1/dist` growth of the
/// exact gradient, which differencing `Gamma` itself does not.
#[derive(Debug, Clone)]
pub struct PotentialField {
    grid: Grid,
    values: Vec<f64>,
    gradient: Vec<Point>,
    source: Vec<f64>,
    source_gradient: Vec<Point>,
}

/// Builds the potential of a positive nodal field (boundary values ignored and
/// treated as zero).
pub fn log_transform(grid: &Grid, field: &[f64]) -> Result<PotentialField> {
    if field.len() != grid.node_count() {
        return Err(Error::LengthMismatch {
            expected: grid.node_count(),
            got: field.len(),
        });
    }
    let mut source = vec![0.0; grid.node_count()];
    for &node in grid.interior_nodes() {
        let v = field[node];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositive { node, value: v });
        }
        source[node] = v;
    }
    let values: Vec<f64> = source
        .iter()
        .map(|&v| if v > 0.0 { -v.ln() } else { f64::INFINITY })
        .collect();
    let source_gradient = nodal_gradient(grid, &source);
    let mut gradient = vec![[f64::NAN; MAX_DIM]; grid.node_count()];
    for &node in grid.interior_nodes() {
        let mut g = [0.0; MAX_DIM];
        for axis in 0..grid.dim() {
            g[axis] = -source_gradient[node][axis] / source[node];
        }
        gradient[node] = g;
    }
    Ok(PotentialField {
        grid: grid.clone(),
        values,
        gradient,
        source,
        source_gradient,
    })
}

/// Gradient of a nodal field: central differences inside, one-sided
/// second-order differences on the boundary faces.
pub fn nodal_gradient(grid: &Grid, f: &[f64]) -> Vec<Point> {
    let dim = grid.dim();
    (0..grid.node_count())
        .map(|node| {
            let idx = grid.multi_index(node);
            let mut g = [0.0; MAX_DIM];
            for axis in 0..dim {
                let h = grid.spacing(axis);
                let n = grid.cells(axis);
                let at = |k: usize| {
                    let mut j = idx;
                    j[axis] = k;
                    f[grid.node_id(&j)]
                };
                let k = idx[axis];
                g[axis] = if k == 0 {
                    (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                } else if k == n {
                    (3.0 * at(n) - 4.0 * at(n - 1) + at(n - 2)) / (2.0 * h)
                } else {
                    (at(k + 1) - at(k - 1)) / (2.0 * h)
                };
            }
            g
        })
        .collect()
}

impl PotentialField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Nodal values; `+inf` on the boundary.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Nodal gradient; NaN on the boundary.
    pub fn gradient(&self) -> &[Point] {
        &self.gradient
    }

    /// The positive field the potential was built from.
    pub fn source(&self) -> &[f64] {
        &self.source
    }

    /// Nodal gradient of [`Self::source`], one-sided on the boundary.
    pub fn source_gradient(&self) -> &[Point] {
        &self.source_gradient
    }

    /// Gradient at an arbitrary point of the open domain.
    ///
    /// Inside cells whose corners are all interior nodes this is the
    /// multilinear interpolant of the nodal gradient. In cells touching the
    /// boundary it is `-Df / f` with both factors interpolated, and the
    /// returned flag is set.
    pub fn gradient_at(&self, x: &Point) -> Result<(Point, bool)> {
        let grid = &self.grid;
        let dim = grid.dim();
        if !grid.domain().contains(x) {
            return Err(Error::OutsideDomain {
                point: x[..dim].to_vec(),
            });
        }
        let (base, frac) = grid.locate(x);
        let (nodes, weights, corners) = grid.cell_corners(&base, &frac);
        let near_boundary = nodes[..corners].iter().any(|&n| grid.is_boundary(n));
        let mut g = [0.0; MAX_DIM];
        if near_boundary {
            let mut f = 0.0;
            let mut df = [0.0; MAX_DIM];
            for c in 0..corners {
                f += weights[c] * self.source[nodes[c]];
                for axis in 0..dim {
                    df[axis] += weights[c] * self.source_gradient[nodes[c]][axis];
                }
            }
            if !(f > 0.0) {
                return Err(Error::NonPositive {
                    node: nodes[0],
                    value: f,
                });
            }
            for axis in 0..dim {
                g[axis] = -df[axis] / f;
            }
        } else {
            for c in 0..corners {
                for axis in 0..dim {
                    g[axis] += weights[c] * self.gradient[nodes[c]][axis];
                }
            }
        }
        Ok((g, near_boundary))
    }
}

/// Pointwise residual of an HJB equation; NaN at nodes whose stencil reaches
/// the boundary, where the potential is infinite.
#[derive(Debug, Clone)]
pub struct ResidualField {
    grid: Grid,
    values: Vec<f64>,
}

impl ResidualField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest residual over nodes at distance at least `min_distance` from
    /// the boundary (with a relative slack of `1e-9` for round-off in node
    /// coordinates).
    pub fn max_at_distance(&self, min_distance: f64) -> f64 {
        (0..self.grid.node_count())
            .filter(|&n| self.grid.node_distance(n) >= min_distance * (1.0 - 1e-9))
            .map(|n| self.values[n])
            .filter(|v| !v.is_nan())
            .fold(0.0, f64::max)
    }

    /// Largest residual over all nodes where it is defined.
    pub fn max(&self) -> f64 {
        self.max_at_distance(0.0)
    }
}

/// `|drift . DG + 1/2 tr[a D^2 G] - 1/2 DG . a DG + source - lambda|` with all
/// derivatives of `G` from finite differences of its values.
fn hjb_residual<F>(potential: &PotentialField, lambda: f64, mut coefficients: F) -> ResidualField
where
    F: FnMut(&Point) -> (Point, crate::geometry::Matrix, f64),
{
    let grid = potential.grid();
    let dim = grid.dim();
    let g = potential.values();
    let mut values = vec![f64::NAN; grid.node_count()];
    for &node in grid.interior_nodes() {
        let idx = grid.multi_index(node);
        let at = |di: isize, dj: isize| -> f64 {
            let mut j = idx;
            j[0] = (j[0] as isize + di) as usize;
            if dim == 2 {
                j[1] = (j[1] as isize + dj) as usize;
            }
            g[grid.node_id(&j)]
        };
        let mut stencil_finite = true;
        let offsets: &[(isize, isize)] = if dim == 1 {
            &[(-1, 0), (1, 0)]
        } else {
            &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ]
        };
        for &(di, dj) in offsets {
            stencil_finite &= at(di, dj).is_finite();
        }
        if !stencil_finite {
            continue;
        }
        let h = [
            grid.spacing(0),
            if dim == 2 { grid.spacing(1) } else { 1.0 },
        ];
        let centre = at(0, 0);
        let mut grad = [0.0; MAX_DIM];
        let mut hess = [[0.0; MAX_DIM]; MAX_DIM];
        grad[0] = (at(1, 0) - at(-1, 0)) / (2.0 * h[0]);
        hess[0][0] = (at(1, 0) - 2.0 * centre + at(-1, 0)) / (h[0] * h[0]);
        if dim == 2 {
            grad[1] = (at(0, 1) - at(0, -1)) / (2.0 * h[1]);
            hess[1][1] = (at(0, 1) - 2.0 * centre + at(0, -1)) / (h[1] * h[1]);
            let mixed = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h[0] * h[1]);
            hess[0][1] = mixed;
            hess[1][0] = mixed;
        }
        let x = grid.node_coords(node);
        let (drift, a, source) = coefficients(&x);
        let mut trace = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                trace += a[i][j] * hess[j][i];
            }
        }
        let lhs = (0..dim).map(|i| drift[i] * grad[i]).sum::<f64>() + 0.5 * trace
            - 0.5 * quadratic_form(&a, &grad, dim)
            + source;
        values[node] = (lhs - lambda).abs();
    }
    ResidualField {
        grid: grid.clone(),
        values,
    }
}

/// Residual of `b . DPsi + 1/2 tr[a D^2 Psi] - 1/2 DPsi . a DPsi = lambda`.
pub fn hjb_residual_generator<M: CoefficientModel + ?Sized>(
    psi_potential: &PotentialField,
    lambda: f64,
    model: &M,
) -> ResidualField {
    hjb_residual(psi_potential, lambda, |x| {
        (model.drift(x), model.diffusion(x), 0.0)
    })
}

/// Residual of
/// `beta~ . DPhi~ + 1/2 tr[a D^2 Phi~] - 1/2 DPhi~ . a DPhi~ + c~ = lambda`.
pub fn hjb_residual_adjoint<M, W>(
    phi_tilde_potential: &PotentialField,
    lambda: f64,
    model: &M,
    rho: &W,
) -> ResidualField
where
    M: CoefficientModel + ?Sized,
    W: DensityWeight + ?Sized,
{
    hjb_residual(phi_tilde_potential, lambda, |x| {
        (
            drift_beta_tilde(model, rho, x),
            model.diffusion(x),
            potential_c_tilde(model, rho, x),
        )
    })
}

/// Smallest potential over nodes adjacent to the boundary minus the potential
/// at the node closest to the centre of the box. Positive and growing under
/// refinement when the potential diverges at the boundary.
pub fn boundary_divergence_margin(potential: &PotentialField) -> f64 {
    let grid = potential.grid();
    let h = grid.max_spacing();
    let centre = grid.domain().center();
    let mut nearest = grid.interior_nodes()[0];
    let mut best = f64::INFINITY;
    let mut wall = f64::INFINITY;
    for &node in grid.interior_nodes() {
        let x = grid.node_coords(node);
        let d: f64 = (0..grid.dim()).map(|i| (x[i] - centre[i]).powi(2)).sum();
        if d < best {
            best = d;
            nearest = node;
        }
        if grid.node_distance(node) <= h * (1.0 + 1e-9) {
            wall = wall.min(potential.values()[node]);
        }
    }
    wall - potential.values()[nearest]
}

/// `u(x) = -sigma(x)^T DPsi(x)`; the flag marks evaluation in a cell touching
/// the boundary.
pub fn feedback_control<M: CoefficientModel + ?Sized>(
    potential: &PotentialField,
    model: &M,
    x: &Point,
) -> Result<(Point, bool)> {
    let (grad, flagged) = potential.gradient_at(x)?;
    let u = mat_t_vec(&model.sigma(x), &grad, model.dim(), model.noise_dim());
    Ok(([-u[0], -u[1]], flagged))
}

fn minus_a_grad<M: CoefficientModel + ?Sized>(model: &M, x: &Point, grad: &Point) -> Point {
    let d = model.dim();
    let ag = mat_vec(&model.diffusion(x), grad, d, d);
    [-ag[0], -ag[1]]
}

fn add(u: &Point, v: &Point) -> Point {
    [u[0] + v[0], u[1] + v[1]]
}

/// Drift of the optimally controlled process `Y`: `b - a DPsi`.
pub fn optimal_drift_y<M: CoefficientModel + ?Sized>(
    psi: &PotentialField,
    model: &M,
    x: &Point,
) -> Result<Point> {
    let (grad, _) = psi.gradient_at(x)?;
    Ok(add(&model.drift(x), &minus_a_grad(model, x, &grad)))
}

/// Drift of the optimally controlled process `Z` from `Phi = -log phi`:
/// `beta - a DPhi`.
pub fn optimal_drift_z<M: CoefficientModel + ?Sized>(
    phi: &PotentialField,
    model: &M,
    x: &Point,
) -> Result<Point> {
    let (grad, _) = phi.gradient_at(x)?;
    Ok(add(&drift_beta(model, x), &minus_a_grad(model, x, &grad)))
}

/// Drift of `Z` from the weighted potential `Phi~ = -log(phi / rho)`:
/// `beta~ - a DPhi~`. Equal to [`optimal_drift_z`] up to discretization error.
pub fn optimal_drift_z_weighted<M, W>(
    phi_tilde: &PotentialField,
    model: &M,
    rho: &W,
    x: &Point,
) -> Result<Point>
where
    M: CoefficientModel + ?Sized,
    W: DensityWeight + ?Sized,
{
    let (grad, _) = phi_tilde.gradient_at(x)?;
    Ok(add(
        &drift_beta_tilde(model, rho, x),
        &minus_a_grad(model, x, &grad),
    ))
}

/// Nodal `b - a DPsi`; NaN on the boundary.
pub fn drift_field_y<M: CoefficientModel + ?Sized>(psi: &PotentialField, model: &M) -> Vec<Point> {
    nodal_drift(psi, |x| model.drift(x), model)
}

/// Nodal `beta - a DPhi`; NaN on the boundary.
pub fn drift_field_z<M: CoefficientModel + ?Sized>(phi: &PotentialField, model: &M) -> Vec<Point> {
    nodal_drift(phi, |x| drift_beta(model, x), model)
}

/// Nodal `beta~ - a DPhi~`; NaN on the boundary.
pub fn drift_field_z_weighted<M, W>(phi_tilde: &PotentialField, model: &M, rho: &W) -> Vec<Point>
where
    M: CoefficientModel + ?Sized,
    W: DensityWeight + ?Sized,
{
    nodal_drift(phi_tilde, |x| drift_beta_tilde(model, rho, x), model)
}

fn nodal_drift<M, F>(potential: &PotentialField, base: F, model: &M) -> Vec<Point>
where
    M: CoefficientModel + ?Sized,
    F: Fn(&Point) -> Point,
{
    let grid = potential.grid();
    let mut out = vec![[f64::NAN; MAX_DIM]; grid.node_count()];
    for &node in grid.interior_nodes() {
        let x = grid.node_coords(node);
        out[node] = add(
            &base(&x),
            &minus_a_grad(model, &x, &potential.gradient()[node]),
        );
    }
    out
}

/// Largest nodal deviation between two drift fields, each node scaled by
/// `max(1, |reference drift|)`.
pub fn max_scaled_deviation(field: &[Point], reference: &[Point], grid: &Grid) -> f64 {
    let dim = grid.dim();
    grid.interior_nodes()
        .iter()
        .map(|&n| {
            let scale = (0..dim).map(|i| reference[n][i].abs()).fold(1.0, f64::max);
            (0..dim)
                .map(|i| (field[n][i] - reference[n][i]).abs())
                .fold(0.0, f64::max)
                / scale
        })
        .fold(0.0, f64::max)
}

/// Which optimally controlled process a [`ControlledDynamics`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlledKind {
    /// Drift `b - a DPsi`, running cost `1/2 DPsi . a DPsi`.
    Y,
    /// Drift `beta~ - a DPhi~`, running cost `1/2 DPhi~ . a DPhi~ + c~`.
    Z,
}

/// Dynamics of an optimally controlled process for the simulator.
pub struct ControlledDynamics<'a> {
    model: &'a dyn CoefficientModel,
    rho: &'a dyn DensityWeight,
    potential: PotentialField,
    kind: ControlledKind,
}

impl<'a> ControlledDynamics<'a> {
    /// `Y` from the potential of `psi`.
    pub fn y(
        model: &'a dyn CoefficientModel,
        rho: &'a dyn DensityWeight,
        psi: PotentialField,
    ) -> Self {
        Self {
            model,
            rho,
            potential: psi,
            kind: ControlledKind::Y,
        }
    }

    /// `Z` from the potential of `phi~ = phi / rho`.
    pub fn z(
        model: &'a dyn CoefficientModel,
        rho: &'a dyn DensityWeight,
        phi_tilde: PotentialField,
    ) -> Self {
        Self {
            model,
            rho,
            potential: phi_tilde,
            kind: ControlledKind::Z,
        }
    }

    pub fn kind(&self) -> ControlledKind {
        self.kind
    }

    pub fn potential(&self) -> &PotentialField {
        &self.potential
    }

    pub fn model(&self) -> &dyn CoefficientModel {
        self.model
    }

    /// Drift at `x`, or NaN components outside the open domain.
    pub fn drift_at(&self, x: &Point) -> Point {
        let r = match self.kind {
            ControlledKind::Y => optimal_drift_y(&self.potential, self.model, x),
            ControlledKind::Z => optimal_drift_z_weighted(&self.potential, self.model, self.rho, x),
        };
        r.unwrap_or([f64::NAN; MAX_DIM])
    }

    /// Running cost `[1/2 DG . a DG, c~]` at `x` (the second entry is zero
    /// for `Y`).
    pub fn running_cost(&self, x: &Point) -> [f64; 2] {
        let d = self.model.dim();
        let Ok((grad, _)) = self.potential.gradient_at(x) else {
            return [f64::NAN; 2];
        };
        let quad = 0.5 * quadratic_form(&self.model.diffusion(x), &grad, d);
        match self.kind {
            ControlledKind::Y => [quad, 0.0],
            ControlledKind::Z => [quad, potential_c_tilde(self.model, self.rho, x)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{GalleryModel, GalleryWeight};
    use crate::eigen::{solve_qsd, QsdSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};
    use crate::geometry::BoxDomain;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid1(len: f64, n: usize) -> Grid {
        Grid::new(BoxDomain::interval(len).unwrap(), &[n]).unwrap()
    }

    fn bm(m: f64) -> GalleryModel {
        GalleryModel::DriftedBrownian { m, sigma: 1.0 }
    }

    fn solve(model: &GalleryModel, weight: &GalleryWeight, grid: &Grid) -> QsdSolution {
        solve_qsd(
            model,
            weight,
            weight.name(),
            grid,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap()
    }

    #[test]
    fn constant_field_has_zero_potential_inside() {
        let grid = grid1(1.0, 10);
        let field = grid.sample(|_| 1.0);
        let pot = log_transform(&grid, &field).unwrap();
        for &n in grid.interior_nodes() {
            assert_eq!(pot.values()[n], 0.0);
        }
        // Away from the boundary the difference quotient of a constant is zero.
        for &n in &grid.interior_nodes()[1..grid.interior_count() - 1] {
            assert_eq!(pot.gradient()[n][0], 0.0);
        }
    }

    #[test]
    fn nonpositive_field_is_rejected() {
        let grid = grid1(1.0, 10);
        let mut field = grid.sample(|_| 1.0);
        field[4] = 0.0;
        assert!(matches!(
            log_transform(&grid, &field),
            Err(Error::NonPositive { node: 4, .. })
        ));
    }

    #[test]
    fn scaling_shifts_the_potential() {
        let grid = grid1(1.0, 20);
        let f = grid.sample(|x| (PI * x[0]).sin() * (x[0]).exp());
        let g: Vec<f64> = f.iter().map(|v| 3.5 * v).collect();
        let (pf, pg) = (
            log_transform(&grid, &f).unwrap(),
            log_transform(&grid, &g).unwrap(),
        );
        for &n in grid.interior_nodes() {
            assert_relative_eq!(
                pg.values()[n],
                pf.values()[n] - 3.5f64.ln(),
                max_relative = 1e-12
            );
            assert_relative_eq!(
                pg.gradient()[n][0],
                pf.gradient()[n][0],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn gradient_of_example_potential() {
        let (m, k) = (1.0, 1.0);
        let grid = grid1(k, 400);
        let psi = grid.sample(|x| (m * x[0]).exp() * (PI * x[0] / k).sin());
        let pot = log_transform(&grid, &psi).unwrap();
        let h = grid.spacing(0);
        for &n in grid.interior_nodes() {
            let x = grid.node_coords(n)[0];
            if grid.node_distance(n) < 5.0 * h {
                continue;
            }
            let exact = -m - PI / k / (PI * x / k).tan();
            assert!((pot.gradient()[n][0] - exact).abs() <= 1e-3 * exact.abs().max(PI / k));
        }
    }

    #[test]
    fn y_and_z_drifts_are_the_cot_profile() {
        let grid = grid1(1.0, 400);
        let model = bm(1.0);
        let sol = solve(&model, &GalleryWeight::One, &grid);
        let psi = log_transform(&grid, &sol.psi).unwrap();
        let phi = log_transform(&grid, &sol.phi).unwrap();
        let mid = optimal_drift_y(&psi, &model, &[0.5, 0.0]).unwrap()[0];
        assert!(mid.abs() < 1e-4);
        let (u, flagged) = feedback_control(&psi, &model, &[0.5, 0.0]).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-4 && !flagged);
        for x in [0.05, 0.2, 0.37, 0.8, 0.93] {
            let exact = PI / (PI * x).tan();
            let y = optimal_drift_y(&psi, &model, &[x, 0.0]).unwrap()[0];
            let z = optimal_drift_z(&phi, &model, &[x, 0.0]).unwrap()[0];
            assert!((y - exact).abs() < 1e-3 * exact.abs().max(PI));
            assert!((z - exact).abs() < 1e-3 * exact.abs().max(PI));
        }
        // Off-grid points in the boundary cell still see the 1/x pull.
        let x = 0.3 * grid.spacing(0);
        let (g, flagged) = psi.gradient_at(&[x, 0.0]).unwrap();
        assert!(flagged);
        assert!((-g[0] - 1.0 / x).abs() < 0.05 / x);
        assert!(psi.gradient_at(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_drift_symmetric_case_has_pi_cot_drift_and_coinciding_fields() {
        let grid = grid1(1.0, 400);
        let model = bm(0.0);
        let sol = solve(&model, &GalleryWeight::One, &grid);
        let psi = log_transform(&grid, &sol.psi).unwrap();
        let phi = log_transform(&grid, &sol.phi).unwrap();
        let y = drift_field_y(&psi, &model);
        let z = drift_field_z(&phi, &model);
        assert!(max_scaled_deviation(&y, &z, &grid) < 1e-8);
        let x = 0.25;
        assert!(
            (optimal_drift_y(&psi, &model, &[x, 0.0]).unwrap()[0] - PI / (PI * x).tan()).abs()
                < 1e-3
        );
    }

    #[test]
    fn z_drift_with_constant_potential_and_zero_beta_vanishes() {
        let grid = grid1(1.0, 10);
        let pot = log_transform(&grid, &grid.sample(|_| 2.0)).unwrap();
        let z = optimal_drift_z(&pot, &bm(0.0), &[0.5, 0.0]).unwrap();
        assert_eq!(z[0], 0.0);
        let (u, _) = feedback_control(&pot, &bm(0.0), &[0.5, 0.0]).unwrap();
        assert_eq!(u[0], 0.0);
    }

    fn residual_maxima(n: usize, weight: &GalleryWeight, delta: f64) -> (f64, f64) {
        let grid = grid1(1.0, n);
        let model = bm(1.0);
        let sol = solve(&model, weight, &grid);
        let psi = log_transform(&grid, &sol.psi).unwrap();
        let phi_tilde = log_transform(&grid, &sol.phi_tilde).unwrap();
        (
            hjb_residual_generator(&psi, sol.lambda, &model).max_at_distance(delta),
            hjb_residual_adjoint(&phi_tilde, sol.lambda, &model, weight).max_at_distance(delta),
        )
    }

    #[test]
    fn residuals_decay_at_second_order() {
        let delta = 3.0 / 50.0;
        for weight in [GalleryWeight::One, GalleryWeight::exp_first_axis(1.0)] {
            let (g1, a1) = residual_maxima(50, &weight, delta);
            let (g2, a2) = residual_maxima(100, &weight, delta);
            for (c, f) in [(g1, g2), (a1, a2)] {
                let order = (c / f).log2();
                assert!((1.7..=2.3).contains(&order), "order {order} from {c} {f}");
            }
        }
    }

    #[test]
    fn residual_invariances() {
        let grid = grid1(1.0, 100);
        let model = bm(1.0);
        let sol = solve(&model, &GalleryWeight::One, &grid);
        let pot = log_transform(&grid, &sol.psi).unwrap();
        let shifted =
            log_transform(&grid, &sol.psi.iter().map(|v| v * 7.0).collect::<Vec<_>>()).unwrap();
        let base = hjb_residual_generator(&pot, sol.lambda, &model);
        let moved = hjb_residual_generator(&shifted, sol.lambda, &model);
        for (a, b) in base.values().iter().zip(moved.values()) {
            if !a.is_nan() {
                assert!((a - b).abs() < 1e-6);
            }
        }
        let bumped = hjb_residual_generator(&pot, sol.lambda + 0.1, &model);
        let delta = 0.1;
        let h2 = grid.spacing(0).powi(2);
        for (n, v) in bumped.values().iter().enumerate() {
            if !v.is_nan() && grid.node_distance(n) >= delta {
                assert!(*v >= 0.1 - 1000.0 * h2);
            }
        }
        // The two layers nearest each wall are excluded.
        assert!(base.values()[1].is_nan());
        assert!(!base.values()[2].is_nan());
    }

    #[test]
    fn boundary_margin_grows_under_refinement() {
        let model = bm(1.0);
        let margins: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&n| {
                let grid = grid1(1.0, n);
                let sol = solve(&model, &GalleryWeight::One, &grid);
                boundary_divergence_margin(&log_transform(&grid, &sol.psi).unwrap())
            })
            .collect();
        assert!(margins[0] > 0.0);
        assert!(margins[1] > margins[0] + 0.5 && margins[2] > margins[1] + 0.5);
    }

    #[test]
    fn potential_is_monotone_near_each_wall() {
        let grid = grid1(1.0, 100);
        let sol = solve(&bm(1.0), &GalleryWeight::One, &grid);
        let v = log_transform(&grid, &sol.psi).unwrap().values().to_vec();
        for k in 1..10 {
            assert!(v[k] > v[k + 1]);
            assert!(v[100 - k] > v[100 - k - 1]);
        }
    }

    #[test]
    fn z_drift_is_weight_invariant() {
        let grid = grid1(1.0, 200);
        let model = bm(1.0);
        let h2 = grid.spacing(0).powi(2);
        let base = solve(&model, &GalleryWeight::One, &grid);
        let reference = drift_field_z(&log_transform(&grid, &base.phi).unwrap(), &model);
        for weight in [
            GalleryWeight::exp_first_axis(1.0),
            GalleryWeight::OnePlusSquare,
        ] {
            let sol = solve(&model, &weight, &grid);
            let weighted = drift_field_z_weighted(
                &log_transform(&grid, &sol.phi_tilde).unwrap(),
                &model,
                &weight,
            );
            assert!(
                max_scaled_deviation(&weighted, &reference, &grid)
                    <= 1e-8 + 5.0 * h2 * sol.coefficient_scale
            );
        }
    }

    #[test]
    fn controlled_dynamics_costs() {
        let grid = grid1(1.0, 100);
        let model = bm(1.0);
        let weight = GalleryWeight::exp_first_axis(1.0);
        let sol = solve(&model, &weight, &grid);
        let y = ControlledDynamics::y(&model, &weight, log_transform(&grid, &sol.psi).unwrap());
        let z = ControlledDynamics::z(
            &model,
            &weight,
            log_transform(&grid, &sol.phi_tilde).unwrap(),
        );
        let x = [0.5, 0.0];
        let cy = y.running_cost(&x);
        assert_eq!(cy[1], 0.0);
        // 1/2 (DPsi)^2 with DPsi(1/2) = -1
        assert!((cy[0] - 0.5).abs() < 1e-3);
        let cz = z.running_cost(&x);
        assert_relative_eq!(cz[1], -1.5, max_relative = 1e-12);
        assert!(y.drift_at(&[1.5, 0.0])[0].is_nan());
    }

    proptest! {
        #[test]
        fn minimized_hamiltonian_is_a_lower_bound(
            v0 in -5.0f64..5.0, v1 in -5.0f64..5.0,
            du0 in -3.0f64..3.0, du1 in -3.0f64..3.0,
            x0 in 0.05f64..0.95, x1 in 0.05f64..0.95,
        ) {
            let model = GalleryModel::from_spec("rot2d", &[("corr".into(), 0.4)]).unwrap();
            let x = [x0, x1];
            let v = [v0, v1];
            let b = model.drift(&x);
            let s = model.sigma(&x);
            let ham = |u: &Point| {
                let su = mat_vec(&s, u, 2, 2);
                (b[0] + su[0]) * v[0] + (b[1] + su[1]) * v[1] + 0.5 * (u[0] * u[0] + u[1] * u[1])
            };
            let st = mat_t_vec(&s, &v, 2, 2);
            let star = [-st[0], -st[1]];
            let minimum = b[0] * v[0] + b[1] * v[1] - 0.5 * quadratic_form(&model.diffusion(&x), &v, 2);
            prop_assert!((ham(&star) - minimum).abs() < 1e-9 * (1.0 + minimum.abs()));
            let other = [star[0] + du0, star[1] + du1];
            prop_assert!(ham(&other) >= minimum - 1e-9 * (1.0 + minimum.abs()));
        }
    }
}
