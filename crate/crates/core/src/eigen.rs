//! Principal Dirichlet eigenpairs by inverse iteration and the normalized
//! quasistationary solution built from them.

use crate::coefficients::{coefficient_scale, CoefficientModel, DensityWeight};
use crate::discretize::{assemble_adjoint, assemble_generator, DiscreteOperator};
use crate::error::{Error, Result};
use crate::geometry::{Grid, Point, MAX_DIM};
use crate::linalg::{BandedLu, CsrMatrix};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Multiple of `eps * ||A||_inf` below which a residual cannot be pushed in
/// double precision. The convergence test uses `max(tol, floor)`.
const RESIDUAL_FLOOR_FACTOR: f64 = 64.0;

/// Principal eigenpair `-A v = lambda v` of a discrete operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    /// Interior values, max-norm 1, strictly positive.
    pub vector: Vec<f64>,
    /// `||A v + lambda v||_inf / ||v||_inf`.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Lowest attainable residual for a matrix in double precision.
pub fn residual_floor(matrix: &CsrMatrix) -> f64 {
    RESIDUAL_FLOOR_FACTOR * f64::EPSILON * matrix.norm_inf()
}

fn negated(matrix: &CsrMatrix) -> CsrMatrix {
    let ones = vec![1.0; matrix.rows()];
    let minus: Vec<f64> = vec![-1.0; matrix.rows()];
    matrix.scale(&minus, &ones)
}

fn max_abs_signed(v: &[f64]) -> f64 {
    v.iter().copied().fold(
        0.0,
        |best: f64, x| if x.abs() > best.abs() { x } else { best },
    )
}

fn weighted_rayleigh(a: &CsrMatrix, v: &[f64], w: &[f64]) -> Result<f64> {
    let av = a.mul_vec(v)?;
    let num: f64 = (0..v.len()).map(|i| w[i] * v[i] * av[i]).sum();
    let den: f64 = (0..v.len()).map(|i| w[i] * v[i] * v[i]).sum();
    Ok(-num / den)
}

/// `||A v + lambda v||_inf / ||v||_inf`.
pub fn residual(matrix: &CsrMatrix, lambda: f64, v: &[f64]) -> Result<f64> {
    let av = matrix.mul_vec(v)?;
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let r = av
        .iter()
        .zip(v)
        .fold(0.0f64, |m, (a, x)| m.max((a + lambda * x).abs()));
    Ok(r / scale)
}

/// Recomputes the residual of a pair against an operator.
pub fn eigen_residual(pair: &EigenPair, op: &DiscreteOperator) -> Result<f64> {
    residual(op.matrix(), pair.lambda, &pair.vector)
}

/// Inverse iteration from the all-ones vector.
pub fn principal_eigenpair(op: &DiscreteOperator, tol: f64, max_iter: usize) -> Result<EigenPair> {
    principal_eigenpair_from(op, &vec![1.0; op.size()], tol, max_iter)
}

/// Inverse iteration on `-A` from a given start vector.
///
/// Each step solves `(-A) v_{k+1} = v_k` with a banded LU factorization
/// computed once, normalizes to max-norm 1 with a positive largest entry, and
/// takes `lambda` from the Rayleigh quotient in the quadrature inner product.
/// Stops when the eigenvalue change is below `tol` and the residual is below
/// `max(tol, floor)`, where the floor is the double-precision limit
/// [`residual_floor`].
pub fn principal_eigenpair_from(
    op: &DiscreteOperator,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "solver tolerance must be positive, got {tol}"
        )));
    }
    let n = op.size();
    if start.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: start.len(),
        });
    }
    let a = op.matrix();
    let lu = BandedLu::factor(&negated(a))?;
    let w = op.grid().interior_weights();
    let res_tol = tol.max(residual_floor(a));

    let mut v = start.to_vec();
    let mut lambda = f64::NAN;
    let mut change = f64::INFINITY;
    let mut res = f64::INFINITY;
    for it in 1..=max_iter {
        lu.solve_in_place(&mut v)?;
        let top = max_abs_signed(&v);
        if top == 0.0 || !top.is_finite() {
            return Err(Error::Singular(0));
        }
        v.iter_mut().for_each(|x| *x /= top);
        let next = weighted_rayleigh(a, &v, &w)?;
        change = (next - lambda).abs();
        lambda = next;
        res = residual(a, lambda, &v)?;
        if change < tol && res <= res_tol {
            let negative = v.iter().filter(|x| **x <= 0.0).count();
            if negative > 0 {
                return Err(Error::MixedSign {
                    negative,
                    total: n,
                    peclet: op.peclet(),
                });
            }
            return Ok(EigenPair {
                lambda,
                vector: v,
                residual_norm: res,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        last_change: change,
        residual: res,
    })
}

/// Crude estimate of the second eigenvalue of `-A`, by inverse iteration with
/// the principal right eigenvector deflated using the left one.
///
/// Only used to size transient windows; complex pairs yield a rough modulus.
pub fn second_eigenvalue_estimate(
    op: &DiscreteOperator,
    pair: &EigenPair,
    iterations: usize,
) -> Result<f64> {
    let n = op.size();
    let a = op.matrix();
    let left_op = BandedLu::factor(&negated(&a.transpose()))?;
    let mut left = vec![1.0; n];
    for _ in 0..200 {
        left_op.solve_in_place(&mut left)?;
        let top = max_abs_signed(&left);
        left.iter_mut().for_each(|x| *x /= top);
    }
    let r = &pair.vector;
    let lr: f64 = left.iter().zip(r).map(|(l, x)| l * x).sum();
    let lu = BandedLu::factor(&negated(a))?;
    let deflate = |v: &mut Vec<f64>| {
        let c: f64 = left.iter().zip(v.iter()).map(|(l, x)| l * x).sum::<f64>() / lr;
        v.iter_mut().zip(r).for_each(|(x, p)| *x -= c * p);
    };
    // A start vector that is not symmetric under reflection of any axis.
    let mut v: Vec<f64> = (0..n)
        .map(|i| ((i as f64) * 0.618_033_988_75).fract() - 0.5)
        .collect();
    deflate(&mut v);
    let mut estimate = f64::NAN;
    for _ in 0..iterations.max(1) {
        lu.solve_in_place(&mut v)?;
        deflate(&mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let av = a.mul_vec(&v)?;
        estimate = -v.iter().zip(&av).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(estimate)
}

/// Normalized principal eigenfunctions of the generator and the weighted
/// adjoint and the measures built from them. Fields are full nodal arrays
/// with zero boundary values.
#[derive(Debug, Clone)]
pub struct QsdSolution {
    pub grid: Grid,
    /// Eigenvalue from the generator solve.
    pub lambda: f64,
    /// Eigenvalue from the weighted-adjoint solve.
    pub lambda_adjoint: f64,
    /// Allowance used for the agreement check of the two eigenvalues.
    pub allowance: f64,
    /// Right eigenfunction, scaled so `sum W psi phi = 1`.
    pub psi: Vec<f64>,
    /// Quasistationary density, scaled so `sum W phi = 1`.
    pub phi: Vec<f64>,
    /// `phi / rho`, the eigenfunction of the weighted adjoint.
    pub phi_tilde: Vec<f64>,
    /// Nodal values of the density weight.
    pub rho: Vec<f64>,
    /// Density of the invariant measure of the controlled processes,
    /// `psi phi`, of unit quadrature mass.
    pub mu: Vec<f64>,
    pub generator_residual: f64,
    pub adjoint_residual: f64,
    pub generator_iterations: usize,
    pub adjoint_iterations: usize,
    pub peclet: f64,
    pub coefficient_scale: f64,
    pub warnings: Vec<String>,
}

impl QsdSolution {
    /// Node masses of the quasistationary distribution, `W phi`.
    pub fn nu(&self) -> Vec<f64> {
        self.phi
            .iter()
            .zip(self.grid.weights())
            .map(|(p, w)| p * w)
            .collect()
    }

    /// Node masses of the invariant measure, `W psi phi`.
    pub fn mu_masses(&self) -> Vec<f64> {
        self.mu
            .iter()
            .zip(self.grid.weights())
            .map(|(p, w)| p * w)
            .collect()
    }

    /// `sum W phi`.
    pub fn phi_mass(&self) -> f64 {
        self.nu().iter().sum()
    }

    /// `sum W psi phi`.
    pub fn psi_phi_mass(&self) -> f64 {
        self.mu_masses().iter().sum()
    }

    /// Average of a nodal density over each cell of `bins`, by tensor
    /// Gauss-Legendre quadrature of its multilinear interpolant. The result is
    /// a cell density (mass divided by cell volume).
    pub fn cell_density(&self, field: &[f64], bins: &Grid) -> Result<Vec<f64>> {
        cell_average(&self.grid, field, bins)
    }
}

/// Rescales a nodal field to unit quadrature mass `sum W f = 1`.
pub fn unit_mass(grid: &Grid, field: &[f64]) -> Vec<f64> {
    let mass: f64 = field.iter().zip(grid.weights()).map(|(f, w)| f * w).sum();
    field.iter().map(|f| f / mass).collect()
}

/// 4-point Gauss-Legendre nodes and weights on `[0, 1]`.
const GAUSS4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_9, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// Cell averages over `bins` of the multilinear interpolant of a nodal field
/// on `grid`. Both grids must discretize the same box.
pub fn cell_average(grid: &Grid, field: &[f64], bins: &Grid) -> Result<Vec<f64>> {
    if grid.domain() != bins.domain() {
        return Err(Error::GridMismatch(
            "histogram bins and field grid cover different boxes".into(),
        ));
    }
    if field.len() != grid.node_count() {
        return Err(Error::LengthMismatch {
            expected: grid.node_count(),
            got: field.len(),
        });
    }
    let dim = grid.dim();
    let mut out = Vec::with_capacity(bins.cell_count());
    // Sub-cells so that each quadrature piece sees a single interpolation cell
    // in the typical case of a field grid finer than the bins.
    let sub: Vec<usize> = (0..dim)
        .map(|i| ((bins.spacing(i) / grid.spacing(i)).ceil() as usize).max(1))
        .collect();
    for cell in 0..bins.cell_count() {
        let origin = bins.cell_origin(cell);
        let mut acc = 0.0;
        let ny = if dim == 2 { sub[1] } else { 1 };
        let qy = if dim == 2 { 4 } else { 1 };
        for sx in 0..sub[0] {
            for sy in 0..ny {
                for &(tx, wx) in &GAUSS4 {
                    for &(ty, wy) in GAUSS4.iter().take(qy) {
                        let mut p: Point = [0.0; MAX_DIM];
                        p[0] = origin[0] + (sx as f64 + tx) * bins.spacing(0) / sub[0] as f64;
                        let mut wt = wx / sub[0] as f64;
                        if dim == 2 {
                            p[1] = origin[1] + (sy as f64 + ty) * bins.spacing(1) / sub[1] as f64;
                            wt *= wy / sub[1] as f64;
                        }
                        acc += wt * grid.interpolate(field, &p);
                    }
                }
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Solves for the principal pair of `-L` and of `-L*_rho`, checks that the two
/// eigenvalues agree within `1e-8 + 10 tol + 5 h^2 * scale`, and applies the
/// normalizations `sum W phi = 1`, `sum W psi phi = 1`.
pub fn solve_qsd<M, W>(
    model: &M,
    rho: &W,
    weight_name: &str,
    grid: &Grid,
    tol: f64,
    max_iter: usize,
) -> Result<QsdSolution>
where
    M: CoefficientModel + ?Sized,
    W: DensityWeight + ?Sized,
{
    let gen = assemble_generator(model, grid)?;
    let adj = assemble_adjoint(model, rho, weight_name, grid)?;
    let right = principal_eigenpair(&gen, tol, max_iter)?;
    let left = principal_eigenpair(&adj, tol, max_iter)?;

    let scale = coefficient_scale(model, rho, grid);
    let h = grid.max_spacing();
    let allowance = 1e-8 + 10.0 * tol + 5.0 * h * h * scale;
    if (right.lambda - left.lambda).abs() > allowance {
        return Err(Error::EigenvalueMismatch {
            generator: right.lambda,
            adjoint: left.lambda,
            allowance,
        });
    }

    let weights = grid.weights();
    let rho_values = grid.sample(|x| rho.value(x));
    let mut phi = grid.embed(&left.vector)?;
    for (p, r) in phi.iter_mut().zip(&rho_values) {
        *p *= r;
    }
    let mass: f64 = phi.iter().zip(weights).map(|(p, w)| p * w).sum();
    phi.iter_mut().for_each(|p| *p /= mass);
    let phi_tilde: Vec<f64> = phi.iter().zip(&rho_values).map(|(p, r)| p / r).collect();

    let mut psi = grid.embed(&right.vector)?;
    let pairing: f64 = (0..psi.len()).map(|i| weights[i] * psi[i] * phi[i]).sum();
    psi.iter_mut().for_each(|p| *p /= pairing);
    let mu: Vec<f64> = psi.iter().zip(&phi).map(|(a, b)| a * b).collect();

    let mut warnings: Vec<String> = gen.warnings().to_vec();
    for w in adj.warnings() {
        if !warnings.contains(w) {
            warnings.push(w.clone());
        }
    }
    Ok(QsdSolution {
        grid: grid.clone(),
        lambda: right.lambda,
        lambda_adjoint: left.lambda,
        allowance,
        psi,
        phi,
        phi_tilde,
        rho: rho_values,
        mu,
        generator_residual: right.residual_norm,
        adjoint_residual: left.residual_norm,
        generator_iterations: right.iterations,
        adjoint_iterations: left.iterations,
        peclet: gen.peclet().max(adj.peclet()),
        coefficient_scale: scale,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{GalleryModel, GalleryWeight};
    use crate::geometry::BoxDomain;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn grid1(len: f64, n: usize) -> Grid {
        Grid::new(BoxDomain::interval(len).unwrap(), &[n]).unwrap()
    }

    fn bm(m: f64) -> GalleryModel {
        GalleryModel::DriftedBrownian { m, sigma: 1.0 }
    }

    /// Smallest real part among eigenvalues of `-A` from a dense solver.
    fn dense_principal(op: &DiscreteOperator) -> f64 {
        let d = op.matrix().to_dense();
        let n = op.size();
        let m = DMatrix::from_fn(n, n, |r, c| -d[r][c]);
        m.complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn heat_eigenpair_matches_dense_oracle_and_sine() {
        let grid = grid1(1.0, 64);
        let op = assemble_generator(&bm(0.0), &grid).unwrap();
        let pair = principal_eigenpair(&op, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_relative_eq!(pair.lambda, dense_principal(&op), max_relative = 1e-10);
        assert_relative_eq!(pair.lambda, PI * PI / 2.0, max_relative = 1e-3);
        let sine = grid.restrict(&grid.sample(|x| (PI * x[0]).sin()));
        for (v, s) in pair.vector.iter().zip(&sine) {
            assert!((v - s).abs() < 1e-3);
        }
        assert!(pair.residual_norm <= DEFAULT_TOL.max(residual_floor(op.matrix())));
        assert!(
            eigen_residual(&pair, &op).unwrap() <= DEFAULT_TOL.max(residual_floor(op.matrix()))
        );
    }

    #[test]
    fn drifted_brownian_matches_dense_oracle_and_closed_form() {
        let (m, k) = (1.5, 2.0);
        let grid = grid1(k, 64);
        let model = bm(m);
        let op = assemble_generator(&model, &grid).unwrap();
        let pair = principal_eigenpair(&op, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_relative_eq!(pair.lambda, dense_principal(&op), max_relative = 1e-10);
        let exact = model.closed_form_eigenvalue(grid.domain()).unwrap();
        assert_relative_eq!(exact, m * m / 2.0 + PI * PI / (2.0 * k * k));
        assert_relative_eq!(pair.lambda, exact, max_relative = 2e-3);
    }

    #[test]
    fn heat_on_square_is_sum_of_interval_values() {
        let grid = Grid::new(BoxDomain::unit_square(), &[24, 24]).unwrap();
        let op = assemble_generator(&bm2d(), &grid).unwrap();
        let pair = principal_eigenpair(&op, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let line = principal_eigenpair(
            &assemble_generator(&bm(0.0), &grid1(1.0, 24)).unwrap(),
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert_relative_eq!(pair.lambda, 2.0 * line.lambda, max_relative = 1e-9);
        assert_relative_eq!(pair.lambda, PI * PI, max_relative = 1e-2);
    }

    fn bm2d() -> GalleryModel {
        GalleryModel::ConstantDrift2d {
            drift: [0.0, 0.0],
            sigma: 1.0,
        }
    }

    #[test]
    fn perturbed_eigenvalue_raises_residual() {
        let grid = grid1(1.0, 32);
        let op = assemble_generator(&bm(1.0), &grid).unwrap();
        let mut pair = principal_eigenpair(&op, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        pair.lambda += 0.1;
        // v has max-norm 1, so the perturbation alone contributes 0.1.
        assert!(eigen_residual(&pair, &op).unwrap() >= 0.1 - 1e-9);
    }

    #[test]
    fn rayleigh_residual_of_random_vector_matches_dense_computation() {
        let grid = grid1(1.0, 8);
        let op = assemble_generator(&bm(0.5), &grid).unwrap();
        let v: Vec<f64> = (0..op.size())
            .map(|i| 0.5 + ((i * 7 % 5) as f64) / 10.0)
            .collect();
        let w = grid.interior_weights();
        let lambda = weighted_rayleigh(op.matrix(), &v, &w).unwrap();
        let d = op.matrix().to_dense();
        let n = op.size();
        let mut expected: f64 = 0.0;
        for r in 0..n {
            let av: f64 = (0..n).map(|c| d[r][c] * v[c]).sum();
            expected = expected.max((av + lambda * v[r]).abs());
        }
        let vmax = v.iter().cloned().fold(0.0, f64::max);
        let pair = EigenPair {
            lambda,
            vector: v,
            residual_norm: 0.0,
            iterations: 0,
        };
        assert_relative_eq!(
            eigen_residual(&pair, &op).unwrap(),
            expected / vmax,
            max_relative = 1e-12
        );
    }

    #[test]
    fn different_positive_starts_give_same_vector() {
        let grid = grid1(1.0, 50);
        let op = assemble_generator(&GalleryModel::VariableDiffusion1d, &grid).unwrap();
        let a = principal_eigenpair(&op, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let start: Vec<f64> = (0..op.size()).map(|i| 1.0 + (i as f64).sqrt()).collect();
        let b = principal_eigenpair_from(&op, &start, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        for (x, y) in a.vector.iter().zip(&b.vector) {
            assert!((x - y).abs() <= 10.0 * DEFAULT_TOL);
        }
    }

    #[test]
    fn nonconvergence_is_reported() {
        let grid = grid1(1.0, 50);
        let op = assemble_generator(&bm(1.0), &grid).unwrap();
        assert!(matches!(
            principal_eigenpair(&op, DEFAULT_TOL, 2),
            Err(Error::NoConvergence { iterations: 2, .. })
        ));
        assert!(principal_eigenpair(&op, 0.0, 10).is_err());
    }

    #[test]
    fn qsd_normalizations_and_closed_form() {
        let grid = grid1(1.0, 200);
        let sol = solve_qsd(
            &bm(1.0),
            &GalleryWeight::One,
            "one",
            &grid,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert_relative_eq!(sol.phi_mass(), 1.0, max_relative = 1e-10);
        assert_relative_eq!(sol.psi_phi_mass(), 1.0, max_relative = 1e-10);
        assert!(sol.mu.iter().all(|m| *m >= 0.0));
        assert_relative_eq!(sol.lambda, 0.5 + PI * PI / 2.0, max_relative = 1e-4);
        // psi phi is proportional to sin^2 with unit mass: 2 sin^2(pi x)
        for node in 0..grid.node_count() {
            let x = grid.node_coords(node)[0];
            assert!((sol.mu[node] - 2.0 * (PI * x).sin().powi(2)).abs() < 1e-3);
        }
    }

    #[test]
    fn weight_changes_phi_tilde_only() {
        let grid = grid1(1.0, 100);
        let model = bm(1.0);
        let one = solve_qsd(
            &model,
            &GalleryWeight::One,
            "one",
            &grid,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        let exp = GalleryWeight::exp_first_axis(1.0);
        let weighted =
            solve_qsd(&model, &exp, "exp", &grid, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(one.lambda, weighted.lambda);
        assert!((one.lambda_adjoint - weighted.lambda_adjoint).abs() < 1e-3);
        // The two adjoint discretizations differ at O(h^2) only.
        let h2 = grid.spacing(0).powi(2);
        for node in 0..grid.node_count() {
            assert!((one.phi[node] - weighted.phi[node]).abs() < 10.0 * h2);
            let x = grid.node_coords(node)[0];
            assert_relative_eq!(
                weighted.phi_tilde[node],
                weighted.phi[node] * (-x).exp(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn self_adjoint_case_has_psi_equal_phi() {
        let grid = grid1(1.0, 100);
        let sol = solve_qsd(
            &bm(0.0),
            &GalleryWeight::One,
            "one",
            &grid,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        let psi = unit_mass(&grid, &sol.psi);
        for (a, b) in psi.iter().zip(&sol.phi) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn positivity_across_weights_and_models() {
        let square = Grid::new(BoxDomain::unit_square(), &[20, 20]).unwrap();
        let rot = GalleryModel::from_spec("rot2d", &[]).unwrap();
        for weight in [
            GalleryWeight::One,
            GalleryWeight::exp_first_axis(1.0),
            GalleryWeight::OnePlusSquare,
        ] {
            let sol = solve_qsd(
                &rot,
                &weight,
                weight.name(),
                &square,
                DEFAULT_TOL,
                DEFAULT_MAX_ITER,
            )
            .unwrap();
            for &node in square.interior_nodes() {
                assert!(sol.psi[node] > 0.0 && sol.phi[node] > 0.0);
            }
        }
    }

    #[test]
    fn peclet_violation_surfaces_as_warning_or_sign_error() {
        let grid = grid1(1.0, 20);
        match solve_qsd(
            &bm(50.0),
            &GalleryWeight::One,
            "one",
            &grid,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        ) {
            Ok(sol) => assert!(!sol.warnings.is_empty()),
            Err(e) => assert!(matches!(
                e,
                Error::MixedSign { .. } | Error::EigenvalueMismatch { .. }
            )),
        }
    }

    #[test]
    fn second_eigenvalue_of_heat_equation() {
        let grid = grid1(1.0, 64);
        let op = assemble_generator(&bm(1.0), &grid).unwrap();
        let pair = principal_eigenpair(&op, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let second = second_eigenvalue_estimate(&op, &pair, 300).unwrap();
        // m^2/2 + 4 pi^2 / 2
        assert_relative_eq!(second, 0.5 + 2.0 * PI * PI, max_relative = 1e-2);
    }

    #[test]
    fn cell_average_integrates_linear_fields_exactly() {
        let grid = grid1(1.0, 40);
        let bins = grid1(1.0, 10);
        let field = grid.sample(|x| 3.0 * x[0] + 1.0);
        let avg = cell_average(&grid, &field, &bins).unwrap();
        for (c, v) in avg.iter().enumerate() {
            assert_relative_eq!(*v, 3.0 * bins.cell_center(c)[0] + 1.0, max_relative = 1e-12);
        }
        let other = grid1(2.0, 10);
        assert!(matches!(
            cell_average(&grid, &field, &other),
            Err(Error::GridMismatch(_))
        ));
    }
}
