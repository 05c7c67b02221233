//! Drift and diffusion models and the coefficients of the adjoint operators.
//!
//! For `L f = b . Df + 1/2 tr[a D^2 f]` with `a = sigma sigma^T`, the Lebesgue
//! adjoint is `L* f = beta . Df + 1/2 tr[a D^2 f] - c f` with
//!
//! ```text
//! beta_i = -b_i + sum_j d_j a_ij
//! c      = -1/2 sum_ij d_i d_j a_ij + sum_i d_i b_i
//! ```
//!
//! and the adjoint in `L^2(rho dx)` is `L*_rho f = rho^{-1} L*(rho f)`, which has
//! drift `beta~ = beta + a Drho / rho` and potential
//! `c~ = c - beta . Drho / rho - tr[a D^2 rho] / (2 rho)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{
    dot, mat_vec, symmetric_eigenvalues, BoxDomain, Grid, Matrix, Point, MAX_DIM,
};

/// Step used by the central-difference fallback for first derivatives.
const FD_STEP_FIRST: f64 = 1e-5;
/// Step used by the central-difference fallback for second derivatives.
const FD_STEP_SECOND: f64 = 1e-3;

/// Where a model's derivatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeSource {
    Analytic,
    /// Central differences of the model's own coefficient functions. Lower
    /// accuracy; reported as a warning by callers that care.
    FiniteDifference,
}

/// Coefficients of `dX = b(X) dt + sigma(X) dB`.
///
/// Only `drift` and `sigma` are required. The derivative methods default to
/// central differences; models that know their derivatives should override
/// them and report [`DerivativeSource::Analytic`].
pub trait CoefficientModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Dimension `m` of the driving Brownian motion.
    fn noise_dim(&self) -> usize {
        self.dim()
    }

    /// `b(x)`.
    fn drift(&self, x: &Point) -> Point;

    /// `sigma(x)`, a `d x m` matrix.
    fn sigma(&self, x: &Point) -> Matrix;

    /// `a(x) = sigma sigma^T`.
    fn diffusion(&self, x: &Point) -> Matrix {
        let s = self.sigma(x);
        let (d, m) = (self.dim(), self.noise_dim());
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..d {
            for j in 0..d {
                a[i][j] = (0..m).map(|k| s[i][k] * s[j][k]).sum();
            }
        }
        a
    }

    /// `J[i][j] = d b_i / d x_j`.
    fn drift_jacobian(&self, x: &Point) -> Matrix {
        let d = self.dim();
        let mut jac = [[0.0; MAX_DIM]; MAX_DIM];
        for j in 0..d {
            let (xp, xm) = shifted(x, j, FD_STEP_FIRST);
            let (bp, bm) = (self.drift(&xp), self.drift(&xm));
            for i in 0..d {
                jac[i][j] = (bp[i] - bm[i]) / (2.0 * FD_STEP_FIRST);
            }
        }
        jac
    }

    /// `G[k][i][j] = d a_ij / d x_k`.
    fn diffusion_gradient(&self, x: &Point) -> [Matrix; MAX_DIM] {
        let d = self.dim();
        let mut g = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for (k, gk) in g.iter_mut().enumerate().take(d) {
            let (xp, xm) = shifted(x, k, FD_STEP_FIRST);
            let (ap, am) = (self.diffusion(&xp), self.diffusion(&xm));
            for i in 0..d {
                for j in 0..d {
                    gk[i][j] = (ap[i][j] - am[i][j]) / (2.0 * FD_STEP_FIRST);
                }
            }
        }
        g
    }

    /// `H[k][l][i][j] = d^2 a_ij / d x_k d x_l`.
    fn diffusion_hessian(&self, x: &Point) -> [[Matrix; MAX_DIM]; MAX_DIM] {
        let d = self.dim();
        let e = FD_STEP_SECOND;
        let mut h = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        let a0 = self.diffusion(x);
        for k in 0..d {
            for l in 0..d {
                let entry = |i: usize, j: usize| -> f64 {
                    if k == l {
                        let (xp, xm) = shifted(x, k, e);
                        (self.diffusion(&xp)[i][j] - 2.0 * a0[i][j] + self.diffusion(&xm)[i][j])
                            / (e * e)
                    } else {
                        let mut pp = *x;
                        pp[k] += e;
                        pp[l] += e;
                        let mut pm = *x;
                        pm[k] += e;
                        pm[l] -= e;
                        let mut mp = *x;
                        mp[k] -= e;
                        mp[l] += e;
                        let mut mm = *x;
                        mm[k] -= e;
                        mm[l] -= e;
                        (self.diffusion(&pp)[i][j]
                            - self.diffusion(&pm)[i][j]
                            - self.diffusion(&mp)[i][j]
                            + self.diffusion(&mm)[i][j])
                            / (4.0 * e * e)
                    }
                };
                for i in 0..d {
                    for j in 0..d {
                        h[k][l][i][j] = entry(i, j);
                    }
                }
            }
        }
        h
    }

    fn derivative_source(&self) -> DerivativeSource {
        DerivativeSource::FiniteDifference
    }
}

fn shifted(x: &Point, axis: usize, step: f64) -> (Point, Point) {
    let mut xp = *x;
    let mut xm = *x;
    xp[axis] += step;
    xm[axis] -= step;
    (xp, xm)
}

/// A strictly positive density weight `rho` with its first two derivatives.
pub trait DensityWeight: Send + Sync {
    fn value(&self, x: &Point) -> f64;
    fn gradient(&self, x: &Point) -> Point;
    fn hessian(&self, x: &Point) -> Matrix;
}

/// `beta(x)`, the first-order coefficient of `L*`.
pub fn drift_beta<M: CoefficientModel + ?Sized>(model: &M, x: &Point) -> Point {
    let d = model.dim();
    let b = model.drift(x);
    let g = model.diffusion_gradient(x);
    let mut beta = [0.0; MAX_DIM];
    for i in 0..d {
        beta[i] = -b[i] + (0..d).map(|j| g[j][i][j]).sum::<f64>();
    }
    beta
}

/// `c(x)`, the zeroth-order coefficient of `L*`.
pub fn potential_c<M: CoefficientModel + ?Sized>(model: &M, x: &Point) -> f64 {
    let d = model.dim();
    let h = model.diffusion_hessian(x);
    let jac = model.drift_jacobian(x);
    let mut c = 0.0;
    for i in 0..d {
        for j in 0..d {
            c -= 0.5 * h[i][j][i][j];
        }
        c += jac[i][i];
    }
    c
}

/// `beta~(x) = beta(x) + a(x) Drho(x) / rho(x)`.
pub fn drift_beta_tilde<M, W>(model: &M, rho: &W, x: &Point) -> Point
where
    M: CoefficientModel + ?Sized,
    W: DensityWeight + ?Sized,
{
    let d = model.dim();
    let mut beta = drift_beta(model, x);
    let r = rho.value(x);
    let shift = mat_vec(&model.diffusion(x), &rho.gradient(x), d, d);
    for i in 0..d {
        beta[i] += shift[i] / r;
    }
    beta
}

/// `c~(x) = c(x) - beta . Drho / rho - tr[a D^2 rho] / (2 rho)`.
pub fn potential_c_tilde<M, W>(model: &M, rho: &W, x: &Point) -> f64
where
    M: CoefficientModel + ?Sized,
    W: DensityWeight + ?Sized,
{
    let d = model.dim();
    let r = rho.value(x);
    let beta = drift_beta(model, x);
    let a = model.diffusion(x);
    let hess = rho.hessian(x);
    let trace: f64 = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| a[i][j] * hess[j][i])
        .sum();
    potential_c(model, x) - dot(&beta, &rho.gradient(x), d) / r - trace / (2.0 * r)
}

/// Smallest eigenvalue of `a` over every node of the grid.
///
/// Fails on the first node where it is not strictly positive.
pub fn ellipticity_check<M: CoefficientModel + ?Sized>(model: &M, grid: &Grid) -> Result<f64> {
    if model.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: model.dim(),
        });
    }
    let mut kappa = f64::INFINITY;
    for node in 0..grid.node_count() {
        let x = grid.node_coords(node);
        let a = model.diffusion(&x);
        let lo = symmetric_eigenvalues(&a, grid.dim())[0];
        if !(lo > 0.0) {
            return Err(Error::NotElliptic {
                node,
                coords: x[..grid.dim()].to_vec(),
                min_eigenvalue: lo,
            });
        }
        kappa = kappa.min(lo);
    }
    Ok(kappa)
}

/// Magnitude of the coefficients entering the weighted adjoint, at least 1.
///
/// Used to scale discretization allowances of the form `C h^2 * scale`.
pub fn coefficient_scale<M, W>(model: &M, rho: &W, grid: &Grid) -> f64
where
    M: CoefficientModel + ?Sized,
    W: DensityWeight + ?Sized,
{
    let d = grid.dim();
    let mut scale: f64 = 1.0;
    for node in 0..grid.node_count() {
        let x = grid.node_coords(node);
        let b = model.drift(&x);
        let a = model.diffusion(&x);
        let bt = drift_beta_tilde(model, rho, &x);
        for i in 0..d {
            scale = scale.max(b[i].abs()).max(bt[i].abs());
            for j in 0..d {
                scale = scale.max(a[i][j].abs());
            }
        }
        scale = scale.max(potential_c_tilde(model, rho, &x).abs());
    }
    scale
}

/// Built-in coefficient models.
#[derive(Debug, Clone, PartialEq)]
pub enum GalleryModel {
    /// `b = -m`, `sigma` constant, in one dimension.
    DriftedBrownian { m: f64, sigma: f64 },
    /// `b = -theta (x - center)`, `sigma` constant, in one dimension.
    OrnsteinUhlenbeck { theta: f64, center: f64, sigma: f64 },
    /// `b` constant, `sigma = s I`, in two dimensions.
    ConstantDrift2d { drift: Point, sigma: f64 },
    /// `b = 0`, `a(x) = x^2 + 1`, in one dimension.
    VariableDiffusion1d,
    /// Linear pull towards `center` plus rotation, with constant correlated
    /// noise: `a = s^2 [[1, corr], [corr, 1]]`. Non-gradient drift and a
    /// nonzero mixed diffusion coefficient.
    Rotational2d {
        theta: f64,
        omega: f64,
        center: Point,
        sigma: f64,
        correlation: f64,
    },
}

/// Names accepted by [`GalleryModel::from_spec`].
pub const MODEL_NAMES: [&str; 5] = ["bm1d_drift", "ou1d", "drift2d", "vardiff1d", "rot2d"];

impl GalleryModel {
    /// Builds a gallery model from its name and parameters. Parameters not
    /// given take their defaults; unknown parameter names are rejected.
    pub fn from_spec(name: &str, params: &[(String, f64)]) -> Result<Self> {
        let known: &[&str] = match name {
            "bm1d_drift" => &["m", "sigma"],
            "ou1d" => &["theta", "center", "sigma"],
            "drift2d" => &["b0", "b1", "sigma"],
            "vardiff1d" => &[],
            "rot2d" => &["theta", "omega", "c0", "c1", "sigma", "corr"],
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown model '{other}'; expected one of {}",
                    MODEL_NAMES.join(", ")
                )))
            }
        };
        for (key, _) in params {
            if !known.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "model '{name}' has no parameter '{key}'"
                )));
            }
        }
        let get = |key: &str, default: f64| {
            params
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map_or(default, |(_, v)| *v)
        };
        let model = match name {
            "bm1d_drift" => Self::DriftedBrownian {
                m: get("m", 1.0),
                sigma: get("sigma", 1.0),
            },
            "ou1d" => Self::OrnsteinUhlenbeck {
                theta: get("theta", 1.0),
                center: get("center", 0.0),
                sigma: get("sigma", 1.0),
            },
            "drift2d" => Self::ConstantDrift2d {
                drift: [get("b0", 0.0), get("b1", 0.0)],
                sigma: get("sigma", 1.0),
            },
            "vardiff1d" => Self::VariableDiffusion1d,
            _ => Self::Rotational2d {
                theta: get("theta", 1.0),
                omega: get("omega", 1.0),
                center: [get("c0", 0.5), get("c1", 0.5)],
                sigma: get("sigma", 1.0),
                correlation: get("corr", 0.3),
            },
        };
        match &model {
            Self::Rotational2d { correlation, .. } if correlation.abs() >= 1.0 => {
                Err(Error::InvalidConfig("rot2d needs |corr| < 1".into()))
            }
            _ => Ok(model),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::DriftedBrownian { .. } => "bm1d_drift",
            Self::OrnsteinUhlenbeck { .. } => "ou1d",
            Self::ConstantDrift2d { .. } => "drift2d",
            Self::VariableDiffusion1d => "vardiff1d",
            Self::Rotational2d { .. } => "rot2d",
        }
    }

    /// Principal Dirichlet eigenvalue of `-L` on the box, where known in
    /// closed form (constant coefficients, separation of variables).
    pub fn closed_form_eigenvalue(&self, domain: &BoxDomain) -> Option<f64> {
        use std::f64::consts::PI;
        if domain.dim() != self.dim() {
            return None;
        }
        match self {
            Self::DriftedBrownian { m, sigma } => {
                let k = PI / domain.width(0);
                let s2 = sigma * sigma;
                Some(m * m / (2.0 * s2) + s2 * k * k / 2.0)
            }
            Self::ConstantDrift2d { drift, sigma } => {
                let s2 = sigma * sigma;
                Some(
                    (0..2)
                        .map(|i| {
                            let k = PI / domain.width(i);
                            drift[i] * drift[i] / (2.0 * s2) + s2 * k * k / 2.0
                        })
                        .sum(),
                )
            }
            _ => None,
        }
    }
}

impl fmt::Display for GalleryModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl CoefficientModel for GalleryModel {
    fn dim(&self) -> usize {
        match self {
            Self::ConstantDrift2d { .. } | Self::Rotational2d { .. } => 2,
            _ => 1,
        }
    }

    fn drift(&self, x: &Point) -> Point {
        match *self {
            Self::DriftedBrownian { m, .. } => [-m, 0.0],
            Self::OrnsteinUhlenbeck { theta, center, .. } => [-theta * (x[0] - center), 0.0],
            Self::ConstantDrift2d { drift, .. } => drift,
            Self::VariableDiffusion1d => [0.0, 0.0],
            Self::Rotational2d {
                theta,
                omega,
                center,
                ..
            } => {
                let (u, v) = (x[0] - center[0], x[1] - center[1]);
                [-theta * u - omega * v, -theta * v + omega * u]
            }
        }
    }

    fn sigma(&self, x: &Point) -> Matrix {
        match *self {
            Self::DriftedBrownian { sigma, .. } | Self::OrnsteinUhlenbeck { sigma, .. } => {
                [[sigma, 0.0], [0.0, 0.0]]
            }
            Self::ConstantDrift2d { sigma, .. } => [[sigma, 0.0], [0.0, sigma]],
            Self::VariableDiffusion1d => [[(x[0] * x[0] + 1.0).sqrt(), 0.0], [0.0, 0.0]],
            Self::Rotational2d {
                sigma, correlation, ..
            } => [
                [sigma, 0.0],
                [
                    sigma * correlation,
                    sigma * (1.0 - correlation * correlation).sqrt(),
                ],
            ],
        }
    }

    fn diffusion(&self, x: &Point) -> Matrix {
        match *self {
            Self::DriftedBrownian { sigma, .. } | Self::OrnsteinUhlenbeck { sigma, .. } => {
                [[sigma * sigma, 0.0], [0.0, 0.0]]
            }
            Self::ConstantDrift2d { sigma, .. } => [[sigma * sigma, 0.0], [0.0, sigma * sigma]],
            Self::VariableDiffusion1d => [[x[0] * x[0] + 1.0, 0.0], [0.0, 0.0]],
            Self::Rotational2d {
                sigma, correlation, ..
            } => {
                let s2 = sigma * sigma;
                [[s2, s2 * correlation], [s2 * correlation, s2]]
            }
        }
    }

    fn drift_jacobian(&self, _x: &Point) -> Matrix {
        match *self {
            Self::OrnsteinUhlenbeck { theta, .. } => [[-theta, 0.0], [0.0, 0.0]],
            Self::Rotational2d { theta, omega, .. } => [[-theta, -omega], [omega, -theta]],
            _ => [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    fn diffusion_gradient(&self, x: &Point) -> [Matrix; MAX_DIM] {
        let mut g = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        if let Self::VariableDiffusion1d = self {
            g[0][0][0] = 2.0 * x[0];
        }
        g
    }

    fn diffusion_hessian(&self, _x: &Point) -> [[Matrix; MAX_DIM]; MAX_DIM] {
        let mut h = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        if let Self::VariableDiffusion1d = self {
            h[0][0][0][0] = 2.0;
        }
        h
    }

    fn derivative_source(&self) -> DerivativeSource {
        DerivativeSource::Analytic
    }
}

/// Built-in density weights.
#[derive(Debug, Clone, PartialEq)]
pub enum GalleryWeight {
    /// `rho = 1`, giving the Lebesgue adjoint.
    One,
    /// `rho = exp(rate . x)`.
    Exp { rate: Point },
    /// `rho = 1 + |x|^2`.
    OnePlusSquare,
}

/// Names accepted by [`GalleryWeight::from_spec`].
pub const WEIGHT_NAMES: [&str; 3] = ["one", "exp", "quadratic"];

impl GalleryWeight {
    pub fn from_spec(name: &str, params: &[(String, f64)]) -> Result<Self> {
        let known: &[&str] = match name {
            "one" | "quadratic" => &[],
            "exp" => &["k", "k1"],
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown density weight '{other}'; expected one of {}",
                    WEIGHT_NAMES.join(", ")
                )))
            }
        };
        for (key, _) in params {
            if !known.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "density weight '{name}' has no parameter '{key}'"
                )));
            }
        }
        let get = |key: &str, default: f64| {
            params
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map_or(default, |(_, v)| *v)
        };
        Ok(match name {
            "one" => Self::One,
            "quadratic" => Self::OnePlusSquare,
            _ => Self::Exp {
                rate: [get("k", 1.0), get("k1", 0.0)],
            },
        })
    }

    /// `exp(k x_0)`.
    pub fn exp_first_axis(k: f64) -> Self {
        Self::Exp { rate: [k, 0.0] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::One => "one",
            Self::Exp { .. } => "exp",
            Self::OnePlusSquare => "quadratic",
        }
    }
}

impl DensityWeight for GalleryWeight {
    fn value(&self, x: &Point) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Exp { rate } => (rate[0] * x[0] + rate[1] * x[1]).exp(),
            Self::OnePlusSquare => 1.0 + x[0] * x[0] + x[1] * x[1],
        }
    }

    fn gradient(&self, x: &Point) -> Point {
        match self {
            Self::One => [0.0; MAX_DIM],
            Self::Exp { rate } => {
                let v = self.value(x);
                [rate[0] * v, rate[1] * v]
            }
            Self::OnePlusSquare => [2.0 * x[0], 2.0 * x[1]],
        }
    }

    fn hessian(&self, x: &Point) -> Matrix {
        match self {
            Self::One => [[0.0; MAX_DIM]; MAX_DIM],
            Self::Exp { rate } => {
                let v = self.value(x);
                [
                    [rate[0] * rate[0] * v, rate[0] * rate[1] * v],
                    [rate[1] * rate[0] * v, rate[1] * rate[1] * v],
                ]
            }
            // On 1D points the second coordinate is identically zero, so the
            // unused diagonal entry never enters a trace.
            Self::OnePlusSquare => [[2.0, 0.0], [0.0, 2.0]],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDomain;
    use approx::assert_relative_eq;

    /// Same coefficients as a gallery model but with the default
    /// finite-difference derivatives.
    struct Numeric(GalleryModel);

    impl CoefficientModel for Numeric {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn drift(&self, x: &Point) -> Point {
            self.0.drift(x)
        }
        fn sigma(&self, x: &Point) -> Matrix {
            self.0.sigma(x)
        }
    }

    fn bm(m: f64) -> GalleryModel {
        GalleryModel::DriftedBrownian { m, sigma: 1.0 }
    }

    #[test]
    fn beta_examples() {
        assert_relative_eq!(drift_beta(&bm(0.7), &[0.3, 0.0])[0], 0.7);
        assert_relative_eq!(
            drift_beta(&GalleryModel::VariableDiffusion1d, &[0.4, 0.0])[0],
            0.8
        );
        let m2 = GalleryModel::ConstantDrift2d {
            drift: [1.0, 0.0],
            sigma: 1.0,
        };
        let b = drift_beta(&m2, &[0.2, 0.9]);
        assert_eq!(&b[..], &[-1.0, 0.0]);
    }

    #[test]
    fn c_examples() {
        assert_eq!(potential_c(&bm(2.0), &[0.5, 0.0]), 0.0);
        let ou = GalleryModel::OrnsteinUhlenbeck {
            theta: 1.0,
            center: 0.0,
            sigma: 1.0,
        };
        assert_relative_eq!(potential_c(&ou, &[0.3, 0.0]), -1.0);
        assert_relative_eq!(
            potential_c(&GalleryModel::VariableDiffusion1d, &[0.3, 0.0]),
            -1.0
        );
    }

    #[test]
    fn weighted_coefficients_examples() {
        let m = 0.8;
        let model = bm(m);
        let x = [0.37, 0.0];
        let rho = GalleryWeight::exp_first_axis(2.0 * m);
        assert_relative_eq!(
            drift_beta_tilde(&model, &rho, &x)[0],
            3.0 * m,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            potential_c_tilde(&model, &rho, &x),
            -4.0 * m * m,
            max_relative = 1e-14
        );

        let flat = bm(0.0);
        let quad = GalleryWeight::OnePlusSquare;
        assert_relative_eq!(drift_beta_tilde(&flat, &quad, &[1.0, 0.0])[0], 1.0);
        // a = 1: c~(0) = -1/2 * a * rho''(0) / rho(0) = -1
        assert_relative_eq!(potential_c_tilde(&flat, &quad, &[0.0, 0.0]), -1.0);
    }

    #[test]
    fn unit_weight_reproduces_lebesgue_adjoint_exactly() {
        let models = [
            bm(1.3),
            GalleryModel::VariableDiffusion1d,
            GalleryModel::from_spec("rot2d", &[]).unwrap(),
        ];
        for model in &models {
            for x in [[0.1, 0.2], [0.7, 0.4]] {
                assert_eq!(
                    drift_beta_tilde(model, &GalleryWeight::One, &x),
                    drift_beta(model, &x)
                );
                assert_eq!(
                    potential_c_tilde(model, &GalleryWeight::One, &x),
                    potential_c(model, &x)
                );
            }
        }
    }

    #[test]
    fn ellipticity_examples() {
        let grid = Grid::new(BoxDomain::interval(1.0).unwrap(), &[10]).unwrap();
        assert_relative_eq!(ellipticity_check(&bm(1.0), &grid).unwrap(), 1.0);
        assert_relative_eq!(
            ellipticity_check(&GalleryModel::VariableDiffusion1d, &grid).unwrap(),
            1.0
        );
        let degenerate = GalleryModel::DriftedBrownian { m: 0.0, sigma: 0.0 };
        assert!(matches!(
            ellipticity_check(&degenerate, &grid),
            Err(Error::NotElliptic { node: 0, .. })
        ));
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let models = [
            GalleryModel::VariableDiffusion1d,
            GalleryModel::from_spec("rot2d", &[("corr".into(), -0.4)]).unwrap(),
            GalleryModel::OrnsteinUhlenbeck {
                theta: 2.0,
                center: 0.3,
                sigma: 0.7,
            },
        ];
        for model in &models {
            let numeric = Numeric(model.clone());
            assert_eq!(
                numeric.derivative_source(),
                DerivativeSource::FiniteDifference
            );
            let d = model.dim();
            for x in [[0.2, 0.3], [0.9, 0.1], [-0.4, 0.6]] {
                let (ga, gn) = (model.diffusion_gradient(&x), numeric.diffusion_gradient(&x));
                let (ha, hn) = (model.diffusion_hessian(&x), numeric.diffusion_hessian(&x));
                let (ja, jn) = (model.drift_jacobian(&x), numeric.drift_jacobian(&x));
                for k in 0..d {
                    for i in 0..d {
                        assert!((ja[i][k] - jn[i][k]).abs() < 1e-8);
                        for j in 0..d {
                            assert!((ga[k][i][j] - gn[k][i][j]).abs() < 1e-8);
                            for l in 0..d {
                                assert!((ha[k][l][i][j] - hn[k][l][i][j]).abs() < 1e-5);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn diffusion_gradient_is_second_order_consistent_on_grids() {
        // Central differences of a at grid spacing h agree with the analytic
        // gradient to within 10 h^2 times the coefficient scale.
        let model = GalleryModel::VariableDiffusion1d;
        let grid = Grid::new(BoxDomain::new(&[-1.0], &[2.0]).unwrap(), &[30]).unwrap();
        let h = grid.spacing(0);
        for &node in grid.interior_nodes() {
            let x = grid.node_coords(node);
            let (xp, xm) = shifted(&x, 0, h);
            let fd = (model.diffusion(&xp)[0][0] - model.diffusion(&xm)[0][0]) / (2.0 * h);
            let scale = model.diffusion(&x)[0][0].max(1.0);
            assert!((fd - model.diffusion_gradient(&x)[0][0][0]).abs() <= 10.0 * h * h * scale);
        }
    }

    #[test]
    fn diffusion_is_symmetric() {
        let model = GalleryModel::from_spec("rot2d", &[("corr".into(), 0.6)]).unwrap();
        let a = model.diffusion(&[0.3, 0.8]);
        assert_eq!(a[0][1], a[1][0]);
        let from_sigma = {
            let s = model.sigma(&[0.3, 0.8]);
            s[0][0] * s[1][0] + s[0][1] * s[1][1]
        };
        assert_relative_eq!(from_sigma, a[0][1], max_relative = 1e-14);
    }

    #[test]
    fn gallery_specs() {
        assert!(GalleryModel::from_spec("nope", &[]).is_err());
        assert!(GalleryModel::from_spec("bm1d_drift", &[("q".into(), 1.0)]).is_err());
        assert!(GalleryWeight::from_spec("exp", &[("k".into(), 2.0)]).is_ok());
        assert!(GalleryWeight::from_spec("gauss", &[]).is_err());
        for name in MODEL_NAMES {
            assert_eq!(GalleryModel::from_spec(name, &[]).unwrap().name(), name);
        }
        for name in WEIGHT_NAMES {
            assert_eq!(GalleryWeight::from_spec(name, &[]).unwrap().name(), name);
        }
    }
}
