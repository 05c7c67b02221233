//! Finite-difference matrices for second-order operators
//! `drift . Df + 1/2 tr[a D^2 f] + shift f` on the interior nodes of a grid,
//! with homogeneous Dirichlet values eliminated.
//!
//! Pure second derivatives use the 3-point difference, the mixed derivative
//! the symmetric 4-corner difference, and first derivatives central
//! differences, so every row has at most `3^d` entries and the scheme is
//! second-order consistent.

use crate::coefficients::{
    drift_beta_tilde, ellipticity_check, potential_c_tilde, CoefficientModel, DensityWeight,
};
use crate::error::{Error, Result};
use crate::geometry::{Grid, Matrix, Point, MAX_DIM};
use crate::linalg::CsrMatrix;

/// Cell Peclet number above which central differences lose the M-matrix
/// sign pattern.
pub const PECLET_LIMIT: f64 = 2.0;

/// What an assembled matrix discretizes.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    /// `L = b . D + 1/2 tr[a D^2]`.
    Generator,
    /// `L*_rho`, the adjoint of `L` in `L^2(rho dx)`; carries the weight name.
    Adjoint(String),
    /// A generator with a caller-supplied drift field, such as the controlled
    /// processes.
    Drift(String),
    /// `W^-1 A^T W`: the adjoint of another discrete operator with respect to
    /// the quadrature inner product.
    QuadratureAdjoint(Box<OperatorKind>),
}

/// Coefficients of the operator at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodalCoefficients {
    pub drift: Point,
    pub diffusion: Matrix,
    /// Zeroth-order term added to the diagonal.
    pub shift: f64,
}

/// A finite-difference operator on the interior nodes of a grid.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Grid,
    matrix: CsrMatrix,
    kind: OperatorKind,
    peclet: f64,
    warnings: Vec<String>,
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    /// Largest cell Peclet number `|drift_i| h_i / (a_ii / 2)` over interior
    /// nodes and axes.
    pub fn peclet(&self) -> f64 {
        self.peclet
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    /// Matrix-vector product on interior values.
    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        self.matrix.mul_vec(field)
    }

    /// The adjoint with respect to the quadrature inner product,
    /// `W^-1 A^T W` with `W` the interior trapezoid weights.
    pub fn quadrature_adjoint(&self) -> Self {
        let w = self.grid.interior_weights();
        let inv: Vec<f64> = w.iter().map(|v| 1.0 / v).collect();
        Self {
            grid: self.grid.clone(),
            matrix: self.matrix.transpose().scale(&inv, &w),
            kind: OperatorKind::QuadratureAdjoint(Box::new(self.kind.clone())),
            peclet: self.peclet,
            warnings: self.warnings.clone(),
        }
    }
}

/// Free-function form of [`DiscreteOperator::apply`].
pub fn apply(op: &DiscreteOperator, field: &[f64]) -> Result<Vec<f64>> {
    op.apply(field)
}

/// Assembles an operator from coefficients given per interior node.
///
/// `coefficients` receives the full node index and its coordinates.
pub fn assemble<F>(grid: &Grid, kind: OperatorKind, mut coefficients: F) -> Result<DiscreteOperator>
where
    F: FnMut(usize, &Point) -> NodalCoefficients,
{
    let dim = grid.dim();
    let n = grid.interior_count();
    let h: Vec<f64> = (0..dim).map(|i| grid.spacing(i)).collect();
    let mut triplets = Vec::with_capacity(n * 3usize.pow(dim as u32));
    let mut peclet: f64 = 0.0;

    for (row, &node) in grid.interior_nodes().iter().enumerate() {
        let x = grid.node_coords(node);
        let coef = coefficients(node, &x);
        let idx = grid.multi_index(node);
        let mut push = |offset: [isize; MAX_DIM], value: f64| {
            let mut nb = idx;
            for axis in 0..dim {
                nb[axis] = (idx[axis] as isize + offset[axis]) as usize;
            }
            // Neighbours on the boundary carry the Dirichlet value zero, so
            // their columns are dropped.
            if let Some(col) = grid.interior_index(grid.node_id(&nb)) {
                triplets.push((row, col, value));
            }
        };

        let mut diagonal = coef.shift;
        for axis in 0..dim {
            let a = coef.diffusion[axis][axis];
            let b = coef.drift[axis];
            let second = 0.5 * a / (h[axis] * h[axis]);
            let first = b / (2.0 * h[axis]);
            let mut plus = [0isize; MAX_DIM];
            plus[axis] = 1;
            let mut minus = [0isize; MAX_DIM];
            minus[axis] = -1;
            push(plus, second + first);
            push(minus, second - first);
            diagonal -= 2.0 * second;
            if a > 0.0 {
                peclet = peclet.max(b.abs() * h[axis] / (0.5 * a));
            } else if b != 0.0 {
                peclet = f64::INFINITY;
            }
        }
        if dim == 2 {
            // 1/2 (a_01 + a_10) f_xy with the symmetric 4-corner difference.
            let mixed = 0.5 * (coef.diffusion[0][1] + coef.diffusion[1][0]) / (4.0 * h[0] * h[1]);
            if mixed != 0.0 {
                push([1, 1], mixed);
                push([-1, -1], mixed);
                push([1, -1], -mixed);
                push([-1, 1], -mixed);
            }
        }
        push([0, 0], diagonal);
    }

    let mut warnings = Vec::new();
    if peclet > PECLET_LIMIT {
        warnings.push(format!(
            "cell Peclet number {peclet:.3} exceeds {PECLET_LIMIT}: central differences may lose positivity; refine the grid"
        ));
    }
    Ok(DiscreteOperator {
        grid: grid.clone(),
        matrix: CsrMatrix::from_triplets(n, n, &triplets),
        kind,
        peclet,
        warnings,
    })
}

fn check_dims<M: CoefficientModel + ?Sized>(model: &M, grid: &Grid) -> Result<()> {
    if model.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: model.dim(),
        });
    }
    Ok(())
}

/// Discretizes `L f = b . Df + 1/2 tr[a D^2 f]`.
pub fn assemble_generator<M: CoefficientModel + ?Sized>(
    model: &M,
    grid: &Grid,
) -> Result<DiscreteOperator> {
    check_dims(model, grid)?;
    ellipticity_check(model, grid)?;
    assemble(grid, OperatorKind::Generator, |_, x| NodalCoefficients {
        drift: model.drift(x),
        diffusion: model.diffusion(x),
        shift: 0.0,
    })
}

/// Discretizes `L*_rho f = beta~ . Df + 1/2 tr[a D^2 f] - c~ f`.
pub fn assemble_adjoint<M, W>(
    model: &M,
    rho: &W,
    weight_name: &str,
    grid: &Grid,
) -> Result<DiscreteOperator>
where
    M: CoefficientModel + ?Sized,
    W: DensityWeight + ?Sized,
{
    check_dims(model, grid)?;
    ellipticity_check(model, grid)?;
    assemble(
        grid,
        OperatorKind::Adjoint(weight_name.to_string()),
        |_, x| NodalCoefficients {
            drift: drift_beta_tilde(model, rho, x),
            diffusion: model.diffusion(x),
            shift: -potential_c_tilde(model, rho, x),
        },
    )
}

/// Discretizes `drift . Df + 1/2 tr[a D^2 f]` with the drift given per node
/// as a full nodal field (boundary entries are ignored).
pub fn assemble_with_drift<M: CoefficientModel + ?Sized>(
    model: &M,
    grid: &Grid,
    drift: &[Point],
    label: &str,
) -> Result<DiscreteOperator> {
    check_dims(model, grid)?;
    if drift.len() != grid.node_count() {
        return Err(Error::LengthMismatch {
            expected: grid.node_count(),
            got: drift.len(),
        });
    }
    ellipticity_check(model, grid)?;
    assemble(grid, OperatorKind::Drift(label.to_string()), |node, x| {
        NodalCoefficients {
            drift: drift[node],
            diffusion: model.diffusion(x),
            shift: 0.0,
        }
    })
}
