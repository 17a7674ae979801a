//! Equilibrium densities and soft boundary measures in MPS/TT form.
//!
//! Product-form potentials factor exactly into rank-1 trains. The
//! Ginzburg-Landau chain density is built from the eigendecomposition of a
//! univariate transfer kernel, with each pairwise eigenfunction product
//! expanded in scaled Chebyshev polynomials.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::basis::{chebyshev_basis, function_table_basis, BasisSet};
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::quadrature::Quadrature;
use crate::tt::{Core3, TensorTrain};

/// Evaluate a functional TT `sum_m P(m_1..m_d) psi_{m_1}(x_1)...psi_{m_d}(x_d)`
/// at a point by contracting basis-value vectors through the chain.
pub fn eval_expansion(tt: &TensorTrain, bases: &[BasisSet], x: &[f64]) -> Result<f64> {
    if bases.len() != tt.num_dims() || x.len() != tt.num_dims() {
        return Err(Error::ShapeMismatch(
            "expansion evaluation: dimension mismatch".into(),
        ));
    }
    let mut v = vec![1.0f64];
    for (l, core) in tt.cores.iter().enumerate() {
        if bases[l].size != core.n {
            return Err(Error::ShapeMismatch(format!(
                "dimension {l}: basis size {} vs mode size {}",
                bases[l].size, core.n
            )));
        }
        let phi = bases[l].eval_all(x[l]);
        let mut next = vec![0.0; core.r_right];
        for (a, &va) in v.iter().enumerate() {
            if va == 0.0 {
                continue;
            }
            for (m, &pm) in phi.iter().enumerate() {
                if pm == 0.0 {
                    continue;
                }
                let base = (a * core.n + m) * core.r_right;
                for b in 0..core.r_right {
                    next[b] += va * pm * core.data[base + b];
                }
            }
        }
        v = next;
    }
    Ok(v[0])
}

/// Tag describing which potential a density came from.
#[derive(Debug, Clone)]
pub enum PotentialDescriptor {
    /// `V(x) = (x_1^2 - 1)^2 + 0.3 sum_{i>=2} x_i^2`.
    DoubleWell { dim: usize },
    /// Discretized Ginzburg-Landau chain energy with spacing `h = 1/(d+1)`.
    GinzburgLandau { dim: usize, lambda: f64, h: f64 },
    Custom,
}

/// Unnormalized equilibrium density `exp(-beta V)` in functional TT form.
#[derive(Clone)]
pub struct DensityModel {
    pub tt: TensorTrain,
    pub bases: Vec<BasisSet>,
    pub beta: f64,
    pub descriptor: PotentialDescriptor,
    pub(crate) log_density: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl DensityModel {
    /// Log of the unnormalized density, from the closed-form potential.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }

    /// Density value reconstructed from the TT representation.
    pub fn eval_tt(&self, x: &[f64]) -> Result<f64> {
        eval_expansion(&self.tt, &self.bases, x)
    }

    pub fn dim(&self) -> usize {
        self.tt.num_dims()
    }

    /// Values of the k-th univariate factor at that dimension's quadrature
    /// nodes. Only meaningful for product-form densities (rank 1, K = 1).
    pub fn univariate_factor(&self, k: usize) -> Result<&[f64]> {
        if self.bases[k].size != 1 || self.tt.ranks().iter().any(|&r| r != 1) {
            return Err(Error::Unsupported(
                "univariate factors only exist for product-form densities".into(),
            ));
        }
        Ok(&self.bases[k].values[0])
    }
}

/// Geometry of a soft boundary measure.
#[derive(Debug, Clone)]
pub enum BoundaryGeometry {
    Sphere {
        center: Vec<f64>,
        radius: f64,
        sigma: f64,
    },
    Hyperplane {
        axis: usize,
        offset: f64,
        sigma: f64,
    },
}

/// Soft boundary measure `p_A` or `p_B` as a rank-1 functional TT.
#[derive(Debug, Clone)]
pub struct BoundaryMeasure {
    pub tt: TensorTrain,
    pub bases: Vec<BasisSet>,
    pub geometry: BoundaryGeometry,
}

impl BoundaryMeasure {
    /// Closed-form pointwise value.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.geometry {
            BoundaryGeometry::Sphere { center, sigma, .. } => {
                let d = center.len() as f64;
                let norm = (2.0 * std::f64::consts::PI).powf(-0.5 * d) * sigma.powf(-d);
                let sq: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(&xi, &ci)| (xi - ci) * (xi - ci))
                    .sum();
                norm * (-sq / (2.0 * sigma * sigma)).exp()
            }
            BoundaryGeometry::Hyperplane { axis, offset, sigma } => {
                let z = (x[*axis] - offset) / sigma;
                (2.0 * std::f64::consts::PI).sqrt().recip() / sigma * (-0.5 * z * z).exp()
            }
        }
    }

    pub fn eval_tt(&self, x: &[f64]) -> Result<f64> {
        eval_expansion(&self.tt, &self.bases, x)
    }

    /// Total mass over the truncated domain, from per-dimension quadrature.
    pub fn mass(&self) -> f64 {
        self.bases
            .iter()
            .map(|b| {
                b.quad
                    .weights
                    .iter()
                    .zip(&b.values[0])
                    .map(|(&w, &v)| w * v)
                    .sum::<f64>()
            })
            .product()
    }
}

fn gaussian_factor(sigma: f64, center: f64) -> impl Fn(f64) -> (f64, f64) + Clone {
    let norm = (2.0 * std::f64::consts::PI).sqrt().recip() / sigma;
    move |x: f64| {
        let z = (x - center) / sigma;
        let v = norm * (-0.5 * z * z).exp();
        (v, -v * z / sigma)
    }
}

/// Product density `exp(-beta sum_k V_k(x_k))` as a rank-1 TT with one table
/// function per dimension.
///
/// `factors[k]` supplies `(V_k, V_k')`.
#[allow(clippy::type_complexity)]
pub fn product_density(
    factors: Vec<(
        Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    )>,
    beta: f64,
    quads: &[Quadrature],
    descriptor: PotentialDescriptor,
) -> Result<DensityModel> {
    let d = factors.len();
    if quads.len() != d || d == 0 {
        return Err(Error::InvalidInput(
            "product_density: need one factor and one quadrature per dimension".into(),
        ));
    }
    let mut bases = Vec::with_capacity(d);
    for (k, quad) in quads.iter().enumerate() {
        let (v, dv) = factors[k].clone();
        let eval = Arc::new(move |_j: usize, x: f64| {
            let val = (-beta * v(x)).exp();
            (val, -beta * dv(x) * val)
        });
        bases.push(function_table_basis(1, quad, eval)?);
    }
    let tt = TensorTrain::rank_one(&vec![vec![1.0]; d])?;
    let pots: Vec<_> = factors.iter().map(|(v, _)| v.clone()).collect();
    let log_density = Arc::new(move |x: &[f64]| -> f64 {
        -beta * x.iter().zip(&pots).map(|(&xi, v)| v(xi)).sum::<f64>()
    });
    Ok(DensityModel {
        tt,
        bases,
        beta,
        descriptor,
        log_density,
    })
}

/// The double-well model `V(x) = (x_1^2-1)^2 + 0.3 sum_{i>=2} x_i^2`.
pub fn double_well_density(dim: usize, beta: f64, quads: &[Quadrature]) -> Result<DensityModel> {
    let mut factors: Vec<(
        Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    )> = Vec::with_capacity(dim);
    factors.push((
        Arc::new(|x: f64| (x * x - 1.0) * (x * x - 1.0)),
        Arc::new(|x: f64| 4.0 * x * (x * x - 1.0)),
    ));
    for _ in 1..dim {
        factors.push((
            Arc::new(|x: f64| 0.3 * x * x),
            Arc::new(|x: f64| 0.6 * x),
        ));
    }
    product_density(
        factors,
        beta,
        quads,
        PotentialDescriptor::DoubleWell { dim },
    )
}

/// Eigendecomposition of the Ginzburg-Landau transfer kernel on `[-R, R]`.
#[derive(Debug, Clone)]
pub struct KernelEigensystem {
    /// Descending nonnegative eigenvalues, truncated at `J`.
    pub eigenvalues: Vec<f64>,
    /// `u_j` at quadrature nodes (orthonormal in discretized L2).
    pub u_nodes: Vec<Vec<f64>>,
    pub quad: Quadrature,
    pub truncation: usize,
    pub lambda_gl: f64,
    pub beta: f64,
    pub coupling_h: f64,
    pub half_width: f64,
    /// `c_{lambda,beta} = exp(-beta/(4 lambda))`.
    pub prefactor: f64,
}

impl KernelEigensystem {
    /// The temperature-scaled transfer kernel `K_beta(x, y)`.
    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        gl_kernel(x, y, self.lambda_gl, self.beta, self.coupling_h)
    }

    /// Rescaled eigenfunction `v_j = sqrt(lambda_j) u_j` at arbitrary `x`,
    /// by Nystrom extension off the quadrature grid.
    pub fn eval_v(&self, j: usize, x: f64) -> f64 {
        let lam = self.eigenvalues[j];
        if lam <= 0.0 {
            return 0.0;
        }
        // u_j(x) = (1/lambda_j) sum_i w_i K(x, x_i) u_j(x_i)
        let u: f64 = self
            .quad
            .nodes
            .iter()
            .zip(&self.quad.weights)
            .zip(&self.u_nodes[j])
            .map(|((&xi, &wi), &ui)| wi * self.kernel(x, xi) * ui)
            .sum::<f64>()
            / lam;
        lam.sqrt() * u
    }

    /// All `v_j(x)` for `j < truncation`.
    pub fn eval_v_all(&self, x: f64) -> Vec<f64> {
        let kvals: Vec<f64> = self
            .quad
            .nodes
            .iter()
            .zip(&self.quad.weights)
            .map(|(&xi, &wi)| wi * self.kernel(x, xi))
            .collect();
        (0..self.truncation)
            .map(|j| {
                let lam = self.eigenvalues[j];
                if lam <= 0.0 {
                    return 0.0;
                }
                let u: f64 = kvals
                    .iter()
                    .zip(&self.u_nodes[j])
                    .map(|(&k, &u)| k * u)
                    .sum::<f64>()
                    / lam;
                lam.sqrt() * u
            })
            .collect()
    }
}

fn gl_kernel(x: f64, y: f64, lambda: f64, beta: f64, h: f64) -> f64 {
    let qx = (1.0 - x * x) * (1.0 - x * x);
    let qy = (1.0 - y * y) * (1.0 - y * y);
    let grad = (x - y) * (x - y);
    (-beta * (qx / (8.0 * lambda) + lambda * grad / (2.0 * h * h) + qy / (8.0 * lambda))).exp()
}

/// Symmetric eigendecomposition of the weighted kernel matrix
/// `W^{1/2} K W^{1/2}`, unweighted back to node values, top `truncation`
/// eigenpairs retained.
pub fn gl_kernel_eigensystem(
    lambda_gl: f64,
    beta: f64,
    coupling_h: f64,
    half_width: f64,
    quad: &Quadrature,
    truncation: usize,
) -> Result<KernelEigensystem> {
    let m = quad.order();
    if truncation == 0 || truncation > m {
        return Err(Error::InvalidInput(format!(
            "truncation {truncation} must be in 1..={m}"
        )));
    }
    let sw: Vec<f64> = quad.weights.iter().map(|&w| w.sqrt()).collect();
    let kmat = DMatrix::from_fn(m, m, |i, k| {
        sw[i] * gl_kernel(quad.nodes[i], quad.nodes[k], lambda_gl, beta, coupling_h) * sw[k]
    });
    // Symmetrize away quadrature-level round-off before the eigensolve.
    let kmat = 0.5 * (&kmat + kmat.transpose());
    let eig = SymmetricEigen::new(kmat);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let lam1 = eig.eigenvalues[order[0]].max(0.0);
    if lam1 <= 0.0 {
        return Err(Error::Degenerate("kernel has no positive spectrum".into()));
    }
    let mut eigenvalues = Vec::with_capacity(truncation);
    let mut u_nodes = Vec::with_capacity(truncation);
    for &idx in order.iter().take(truncation) {
        let mut lam = eig.eigenvalues[idx];
        if lam < 1e-14 * lam1 {
            lam = 0.0;
        }
        if lam < 0.0 {
            lam = 0.0;
        }
        eigenvalues.push(lam);
        let col = eig.eigenvectors.column(idx);
        u_nodes.push((0..m).map(|i| col[i] / sw[i]).collect());
    }
    if eigenvalues.iter().all(|&l| l == 0.0) {
        return Err(Error::Degenerate(
            "requested truncation exceeds the positive spectrum".into(),
        ));
    }
    Ok(KernelEigensystem {
        eigenvalues,
        u_nodes,
        quad: quad.clone(),
        truncation,
        lambda_gl,
        beta,
        coupling_h,
        half_width,
        prefactor: (-beta / (4.0 * lambda_gl)).exp(),
    })
}

/// Ginzburg-Landau chain density as a rank-`J` functional TT over a scaled
/// Chebyshev basis `T_0..T_{n_cheb}` on `[-R, R]`.
pub fn gl_density(
    eig: &KernelEigensystem,
    dim: usize,
    n_cheb: usize,
    quad: &Quadrature,
) -> Result<DensityModel> {
    if n_cheb + 1 > quad.order() {
        return Err(Error::InvalidInput(
            "gl_density: n_cheb + 1 must not exceed the quadrature order".into(),
        ));
    }
    if dim == 0 {
        return Err(Error::InvalidInput("gl_density: dim >= 1".into()));
    }
    let j_max = eig.truncation;
    let r = eig.half_width;
    let basis = chebyshev_basis(n_cheb, r, quad)?;
    let n = n_cheb + 1;

    // Chebyshev-Gauss nodes for the product expansions.
    let m_nodes = (2 * n).max(128);
    let thetas: Vec<f64> = (0..m_nodes)
        .map(|m| std::f64::consts::PI * (m as f64 + 0.5) / m_nodes as f64)
        .collect();
    let xs: Vec<f64> = thetas.iter().map(|&t| r * t.cos()).collect();
    // v_j at the expansion nodes and at 0.
    let v_tables: Vec<Vec<f64>> = par_map(xs.len(), |k| eig.eval_v_all(xs[k]));
    let v_zero = eig.eval_v_all(0.0);

    // coeff[(j, l, n)] = n-th Chebyshev coefficient of v_j v_l on [-R, R].
    let coeff = par_map(j_max * j_max, |jl| {
        let (j, l) = (jl / j_max, jl % j_max);
        let mut row = vec![0.0f64; n];
        for (nn, c) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (m, &theta) in thetas.iter().enumerate() {
                acc += v_tables[m][j] * v_tables[m][l] * ((nn as f64) * theta).cos();
            }
            let scale = if nn == 0 { 1.0 } else { 2.0 };
            *c = scale * acc / m_nodes as f64;
        }
        row
    });
    let c = |j: usize, l: usize, nn: usize| coeff[j * j_max + l][nn];

    let mut cores = Vec::with_capacity(dim);
    if dim == 1 {
        let core = Core3::from_fn(1, n, 1, |_, nn, _| {
            let mut acc = 0.0;
            for j in 0..j_max {
                for l in 0..j_max {
                    acc += v_zero[j] * c(j, l, nn) * v_zero[l];
                }
            }
            eig.prefactor * acc
        });
        cores.push(core);
    } else {
        let first = Core3::from_fn(1, n, j_max, |_, nn, j1| {
            let mut acc = 0.0;
            for j0 in 0..j_max {
                acc += v_zero[j0] * c(j0, j1, nn);
            }
            eig.prefactor * acc
        });
        cores.push(first);
        let interior = Core3::from_fn(j_max, n, j_max, |jl, nn, jr| c(jl, jr, nn));
        for _ in 1..dim - 1 {
            cores.push(interior.clone());
        }
        let last = Core3::from_fn(j_max, n, 1, |jl, nn, _| {
            let mut acc = 0.0;
            for jd in 0..j_max {
                acc += c(jl, jd, nn) * v_zero[jd];
            }
            acc
        });
        cores.push(last);
    }
    let tt = TensorTrain::new(cores)?;

    let (lambda, beta, h) = (eig.lambda_gl, eig.beta, eig.coupling_h);
    let log_density = Arc::new(move |u: &[f64]| -> f64 {
        -beta * gl_potential(u, lambda, h)
    });
    Ok(DensityModel {
        tt,
        bases: vec![basis; dim],
        beta,
        descriptor: PotentialDescriptor::GinzburgLandau {
            dim,
            lambda,
            h,
        },
        log_density,
    })
}

/// Discretized Ginzburg-Landau energy with pinned endpoints `U_0 = U_{d+1} = 0`.
/// The quartic term runs over all nodes including the endpoints, so that
/// `exp(-beta V)` coincides exactly with the prefactored kernel chain product.
pub fn gl_potential(u: &[f64], lambda: f64, h: f64) -> f64 {
    let d = u.len();
    let site = |i: usize| if i == 0 || i == d + 1 { 0.0 } else { u[i - 1] };
    let mut v = 0.0;
    for i in 0..=d + 1 {
        let s = site(i);
        let q = 1.0 - s * s;
        v += q * q / (4.0 * lambda);
        if i > 0 {
            let g = (s - site(i - 1)) / h;
            v += 0.5 * lambda * g * g;
        }
    }
    v
}

/// Gradient of [`gl_potential`].
pub fn gl_potential_gradient(u: &[f64], lambda: f64, h: f64) -> Vec<f64> {
    let d = u.len();
    (0..d)
        .map(|i| {
            let um = if i == 0 { 0.0 } else { u[i - 1] };
            let up = if i + 1 < d { u[i + 1] } else { 0.0 };
            lambda * (2.0 * u[i] - um - up) / (h * h)
                - u[i] * (1.0 - u[i] * u[i]) / lambda
        })
        .collect()
}

/// Positive minimizer `U_+` of the discretized Ginzburg-Landau energy,
/// found by damped gradient descent from the half-sine profile. The
/// negative minimizer is `-U_+` by symmetry.
pub fn gl_minimizer(dim: usize, lambda: f64, h: f64) -> Result<Vec<f64>> {
    if dim == 0 || !(lambda > 0.0) || !(h > 0.0) {
        return Err(Error::InvalidInput(
            "gl_minimizer: dim >= 1 and positive lambda, h required".into(),
        ));
    }
    let mut u: Vec<f64> = (1..=dim)
        .map(|i| (std::f64::consts::PI * i as f64 / (dim as f64 + 1.0)).sin())
        .collect();
    // Step below the inverse of the Hessian scale 4 lambda / h^2 + 2 / lambda.
    let step = 0.9 / (4.0 * lambda / (h * h) + 2.0 / lambda);
    for _ in 0..2_000_000 {
        let g = gl_potential_gradient(&u, lambda, h);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < 1e-13 {
            if u.iter().all(|&v| v > 0.0) {
                return Ok(u);
            }
            return Err(Error::Degenerate(
                "gl_minimizer: converged to a non-positive profile".into(),
            ));
        }
        for (ui, gi) in u.iter_mut().zip(&g) {
            *ui -= step * gi;
        }
    }
    Err(Error::Numerical(
        "gl_minimizer: gradient descent did not converge".into(),
    ))
}

/// Gaussian approximation of the uniform measure on a sphere of the given
/// radius: product Gaussian with `sigma = radius / sqrt(d)`.
pub fn sphere_boundary_measure(
    center: &[f64],
    radius: f64,
    quads: &[Quadrature],
) -> Result<BoundaryMeasure> {
    let d = center.len();
    if quads.len() != d || d == 0 {
        return Err(Error::InvalidInput(
            "sphere measure: need one quadrature per dimension".into(),
        ));
    }
    if radius <= 0.0 {
        return Err(Error::InvalidInput("sphere measure: radius > 0".into()));
    }
    let sigma = radius / (d as f64).sqrt();
    let mut bases = Vec::with_capacity(d);
    for (k, quad) in quads.iter().enumerate() {
        let f = gaussian_factor(sigma, center[k]);
        bases.push(function_table_basis(
            1,
            quad,
            Arc::new(move |_j, x| f(x)),
        )?);
    }
    Ok(BoundaryMeasure {
        tt: TensorTrain::rank_one(&vec![vec![1.0]; d])?,
        bases,
        geometry: BoundaryGeometry::Sphere {
            center: center.to_vec(),
            radius,
            sigma,
        },
    })
}

/// Hyperplane measure: 1D Gaussian on one axis, constant in all others.
/// Not normalized over the full domain.
pub fn hyperplane_boundary_measure(
    axis: usize,
    offset: f64,
    sigma: f64,
    quads: &[Quadrature],
) -> Result<BoundaryMeasure> {
    let d = quads.len();
    if axis >= d {
        return Err(Error::InvalidInput(format!(
            "hyperplane axis {axis} out of range for dimension {d}"
        )));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidInput("hyperplane measure: sigma > 0".into()));
    }
    let mut bases = Vec::with_capacity(d);
    for (k, quad) in quads.iter().enumerate() {
        if k == axis {
            let f = gaussian_factor(sigma, offset);
            bases.push(function_table_basis(1, quad, Arc::new(move |_j, x| f(x)))?);
        } else {
            bases.push(function_table_basis(1, quad, Arc::new(|_j, _x| (1.0, 0.0)))?);
        }
    }
    Ok(BoundaryMeasure {
        tt: TensorTrain::rank_one(&vec![vec![1.0]; d])?,
        bases,
        geometry: BoundaryGeometry::Hyperplane { axis, offset, sigma },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    #[test]
    fn double_well_mode_value() {
        let d = 20;
        let quads: Vec<_> = (0..d)
            .map(|_| gauss_legendre(64, -2.0, 2.0).unwrap())
            .collect();
        let p = double_well_density(d, 5.0, &quads).unwrap();
        let mut mode = vec![0.0; d];
        mode[0] = 1.0;
        assert_relative_eq!(p.log_density(&mode).exp(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn double_well_barrier_ratio() {
        let d = 4;
        let beta = 5.0;
        let quads: Vec<_> = (0..d)
            .map(|_| gauss_legendre(64, -2.0, 2.0).unwrap())
            .collect();
        let p = double_well_density(d, beta, &quads).unwrap();
        let mut well = vec![0.0; d];
        well[0] = 1.0;
        let top = vec![0.0; d];
        let ratio = (p.log_density(&well) - p.log_density(&top)).exp();
        assert_relative_eq!(ratio, beta.exp(), max_relative = 1e-12);
    }

    #[test]
    fn product_density_tt_matches_pointwise() {
        let d = 5;
        let quads: Vec<_> = (0..d)
            .map(|_| gauss_legendre(64, -2.0, 2.0).unwrap())
            .collect();
        let p = double_well_density(d, 2.0, &quads).unwrap();
        assert!(p.tt.ranks().iter().all(|&r| r == 1));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let tt_val = p.eval_tt(&x).unwrap();
            let direct = p.log_density(&x).exp();
            assert_relative_eq!(tt_val, direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn kernel_matrix_is_symmetric() {
        let quad = gauss_legendre(40, -2.6, 2.6).unwrap();
        let mut max_asym: f64 = 0.0;
        for &x in &quad.nodes {
            for &y in &quad.nodes {
                let a = gl_kernel(x, y, 0.03, 1.0, 1.0 / 51.0);
                let b = gl_kernel(y, x, 0.03, 1.0, 1.0 / 51.0);
                max_asym = max_asym.max((a - b).abs());
            }
        }
        assert!(max_asym < 1e-15);
    }

    #[test]
    fn spectrum_decays_fast_at_production_parameters() {
        // Coupling 0.03, spacing 1/51, half-width 2.6, inverse temperature
        // 1/16: thirty eigenvalues are more than enough for full precision.
        let quad = gauss_legendre(120, -2.6, 2.6).unwrap();
        let eig = gl_kernel_eigensystem(0.03, 1.0 / 16.0, 1.0 / 51.0, 2.6, &quad, 30).unwrap();
        assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(eig.eigenvalues.iter().all(|&l| l >= 0.0));
        let ratio = eig.eigenvalues[29] / eig.eigenvalues[0];
        assert!(ratio < 1e-10, "lambda_30/lambda_1 = {ratio:e}");
    }

    #[test]
    fn eigenfunctions_orthonormal() {
        let quad = gauss_legendre(80, -2.6, 2.6).unwrap();
        let eig = gl_kernel_eigensystem(0.1, 0.5, 0.25, 2.6, &quad, 10).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let dot: f64 = quad
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| w * eig.u_nodes[i][k] * eig.u_nodes[j][k])
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(dot, expect, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn full_spectrum_reconstructs_kernel() {
        let order = 48;
        let quad = gauss_legendre(order, -2.0, 2.0).unwrap();
        let eig = gl_kernel_eigensystem(0.1, 0.5, 0.25, 2.0, &quad, order).unwrap();
        for (i, &x) in quad.nodes.iter().enumerate().step_by(7) {
            for (k, &y) in quad.nodes.iter().enumerate().step_by(7) {
                let mut acc = 0.0;
                for j in 0..order {
                    if eig.eigenvalues[j] > 0.0 {
                        acc += eig.eigenvalues[j] * eig.u_nodes[j][i] * eig.u_nodes[j][k];
                    }
                }
                let direct = eig.kernel(x, y);
                assert_relative_eq!(acc, direct, max_relative = 1e-8, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gl_density_d1_matches_direct() {
        let quad = gauss_legendre(100, -2.0, 2.0).unwrap();
        let eig = gl_kernel_eigensystem(0.1, 0.5, 0.5, 2.0, &quad, 30).unwrap();
        let p = gl_density(&eig, 1, 40, &quad).unwrap();
        for &x in &[-1.2, -0.5, 0.0, 0.4, 1.1] {
            let direct = eig.prefactor * eig.kernel(0.0, x) * eig.kernel(x, 0.0);
            let expect = (-0.5 * gl_potential(&[x], 0.1, 0.5)).exp();
            assert_relative_eq!(direct, expect, max_relative = 1e-12);
            assert_relative_eq!(p.eval_tt(&[x]).unwrap(), expect, max_relative = 1e-6);
        }
    }

    #[test]
    fn gl_density_is_even() {
        let quad = gauss_legendre(100, -2.0, 2.0).unwrap();
        let h = 1.0 / 4.0;
        let eig = gl_kernel_eigensystem(0.1, 0.5, h, 2.0, &quad, 30).unwrap();
        let p = gl_density(&eig, 3, 40, &quad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let neg: Vec<f64> = u.iter().map(|&v| -v).collect();
            let a = p.eval_tt(&u).unwrap();
            let b = p.eval_tt(&neg).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn gl_density_d3_matches_kernel_product() {
        let quad = gauss_legendre(100, -2.0, 2.0).unwrap();
        let h = 1.0 / 4.0;
        let eig = gl_kernel_eigensystem(0.1, 0.5, h, 2.0, &quad, 30).unwrap();
        let p = gl_density(&eig, 3, 40, &quad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.2..1.2)).collect();
            let direct = eig.prefactor
                * eig.kernel(0.0, u[0])
                * eig.kernel(u[0], u[1])
                * eig.kernel(u[1], u[2])
                * eig.kernel(u[2], 0.0);
            assert_relative_eq!(p.eval_tt(&u).unwrap(), direct, max_relative = 1e-5);
        }
    }

    #[test]
    fn gl_density_error_decreases_in_truncation() {
        let quad = gauss_legendre(100, -2.0, 2.0).unwrap();
        let h = 1.0 / 4.0;
        let points: Vec<Vec<f64>> = {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            (0..20)
                .map(|_| (0..3).map(|_| rng.random_range(-1.2..1.2)).collect())
                .collect()
        };
        let mut prev = f64::INFINITY;
        for j in [5usize, 10, 20, 30] {
            let eig = gl_kernel_eigensystem(0.1, 0.5, h, 2.0, &quad, j).unwrap();
            let p = gl_density(&eig, 3, 40, &quad).unwrap();
            let mut err: f64 = 0.0;
            for u in &points {
                let direct = eig.prefactor
                    * eig.kernel(0.0, u[0])
                    * eig.kernel(u[0], u[1])
                    * eig.kernel(u[1], u[2])
                    * eig.kernel(u[2], 0.0);
                err = err.max(((p.eval_tt(u).unwrap() - direct) / direct).abs());
            }
            assert!(err <= prev * 1.5, "J={j}: {err} vs {prev}");
            prev = err;
        }
    }

    #[test]
    fn sphere_sigma_and_center_value() {
        let d = 50;
        let quads: Vec<_> = (0..d)
            .map(|_| gauss_legendre(64, -4.0, 4.0).unwrap())
            .collect();
        let center = vec![0.5; d];
        let m = sphere_boundary_measure(&center, 2.5, &quads).unwrap();
        match &m.geometry {
            BoundaryGeometry::Sphere { sigma, .. } => {
                assert_relative_eq!(*sigma, 2.5 / 50f64.sqrt(), max_relative = 1e-15);
                assert_relative_eq!(*sigma, 0.35355339059327373, max_relative = 1e-10);
            }
            _ => panic!(),
        }
        let sigma = 2.5 / (d as f64).sqrt();
        let expect = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0) * sigma.powf(-(d as f64));
        assert_relative_eq!(m.eval(&center), expect, max_relative = 1e-10);
        assert_relative_eq!(m.eval_tt(&center).unwrap(), expect, max_relative = 1e-10);
        assert!(m.tt.ranks().iter().all(|&r| r == 1));
    }

    #[test]
    fn sphere_mass_is_one() {
        let d = 8;
        let quads: Vec<_> = (0..d)
            .map(|_| gauss_legendre(64, -6.0, 6.0).unwrap())
            .collect();
        let m = sphere_boundary_measure(&vec![0.0; d], 2.0, &quads).unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sphere_gaussian_annulus_concentration() {
        let d = 50;
        let radius = 2.5;
        let sigma = radius / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 100_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let sq: f64 = (0..d)
                .map(|_| {
                    let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                    (z * sigma) * (z * sigma)
                })
                .sum();
            if ((sq.sqrt()) - (d as f64).sqrt() * sigma).abs() <= 3.0 * sigma {
                hits += 1;
            }
        }
        assert!(hits as f64 / n as f64 > 0.99);
    }

    #[test]
    fn hyperplane_peak_and_invariance() {
        let d = 4;
        let quads: Vec<_> = (0..d)
            .map(|_| gauss_legendre(64, -3.0, 3.0).unwrap())
            .collect();
        let m = hyperplane_boundary_measure(0, -1.0, 0.05, &quads).unwrap();
        let peak = m.eval(&[-1.0, 0.3, -0.7, 2.0]);
        assert_relative_eq!(
            peak,
            1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 0.05),
            max_relative = 1e-13
        );
        let a = m.eval(&[-0.5, 1.0, 2.0, -1.0]);
        let b = m.eval(&[-0.5, -2.0, 0.1, 0.4]);
        assert_relative_eq!(a, b, max_relative = 1e-14);
        assert!(m.tt.ranks().iter().all(|&r| r == 1));
    }

    #[test]
    fn gl_potential_gradient_matches_fd() {
        let u = [0.4, -0.9, 1.2, 0.1];
        let (lambda, h) = (0.1, 0.2);
        let g = gl_potential_gradient(&u, lambda, h);
        let eps = 1e-6;
        for i in 0..u.len() {
            let mut up = u;
            let mut um = u;
            up[i] += eps;
            um[i] -= eps;
            let fd = (gl_potential(&up, lambda, h) - gl_potential(&um, lambda, h)) / (2.0 * eps);
            assert_relative_eq!(g[i], fd, max_relative = 1e-5, epsilon = 1e-5);
        }
    }

    #[test]
    fn gl_minimizer_is_critical_symmetric_and_positive() {
        let (dim, lambda) = (16usize, 0.1);
        let h = 1.0 / (dim as f64 + 1.0);
        let u = gl_minimizer(dim, lambda, h).unwrap();
        let g = gl_potential_gradient(&u, lambda, h);
        assert!(g.iter().all(|v| v.abs() < 1e-12), "gradient {g:?}");
        for i in 0..dim {
            assert!(u[i] > 0.0 && u[i] < 1.2, "u[{i}] = {}", u[i]);
            assert_relative_eq!(u[i], u[dim - 1 - i], max_relative = 1e-10);
        }
        // Lower energy than the flat zero profile and than small
        // perturbations of itself.
        let e = gl_potential(&u, lambda, h);
        assert!(e < gl_potential(&vec![0.0; dim], lambda, h));
        let mut bumped = u.clone();
        bumped[dim / 2] += 0.05;
        assert!(e < gl_potential(&bumped, lambda, h));
    }

    #[test]
    fn hyperplane_axis_integral_is_one() {
        let sigma = 0.05;
        let quad = gauss_legendre(200, -1.0 - 8.0 * sigma, -1.0 + 8.0 * sigma).unwrap();
        let quads = vec![quad.clone(), gauss_legendre(16, -1.0, 1.0).unwrap()];
        let m = hyperplane_boundary_measure(0, -1.0, sigma, &quads).unwrap();
        let integral = quad.integrate(|x| m.eval(&[x, 0.0]));
        assert_relative_eq!(integral, 1.0, max_relative = 1e-12);
    }
}
