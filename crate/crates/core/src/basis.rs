//! Univariate basis families with value and derivative tables on quadrature
//! nodes, plus closed-form pointwise evaluation for arbitrary points.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::Quadrature;

/// Orthonormal-polynomial three-term recurrence (Stieltjes coefficients).
///
/// With `p_{-1} = 0`, `p_0 = 1/sqrt(beta[0])`:
/// `sqrt(beta[j+1]) p_{j+1}(x) = (x - alpha[j]) p_j(x) - sqrt(beta[j]) p_{j-1}(x)`.
#[derive(Debug, Clone)]
pub struct OrthoRecurrence {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl OrthoRecurrence {
    /// Values `p_0(x) .. p_{L-1}(x)` and derivatives, `L = alpha.len()`.
    pub fn eval_all(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let l = self.alpha.len();
        let mut p = Vec::with_capacity(l);
        let mut dp = Vec::with_capacity(l);
        let mut pm1 = 0.0;
        let mut dpm1 = 0.0;
        let mut p0 = 1.0 / self.beta[0].sqrt();
        let mut dp0 = 0.0;
        for j in 0..l {
            p.push(p0);
            dp.push(dp0);
            if j + 1 < l {
                let sb1 = self.beta[j + 1].sqrt();
                let sb = self.beta[j].sqrt();
                let p1 = ((x - self.alpha[j]) * p0 - if j == 0 { 0.0 } else { sb * pm1 }) / sb1;
                let dp1 =
                    (p0 + (x - self.alpha[j]) * dp0 - if j == 0 { 0.0 } else { sb * dpm1 }) / sb1;
                pm1 = p0;
                dpm1 = dp0;
                p0 = p1;
                dp0 = dp1;
            }
        }
        (p, dp)
    }
}

/// Which family a [`BasisSet`] belongs to, with whatever parameters its
/// closed-form evaluator needs.
#[derive(Clone)]
pub enum BasisFamily {
    /// `1, cos(pi x/gamma), sin(pi x/gamma), cos(2 pi x/gamma), ...`,
    /// normalized to unit L2 norm on `[-gamma, gamma]`.
    Fourier { gamma: f64 },
    /// Scaled Chebyshev polynomials `T_0(x/r) .. T_{L-1}(x/r)`.
    Chebyshev { r: f64 },
    /// Polynomials orthonormal with respect to a weight, held as a
    /// three-term recurrence.
    DensityOrthogonal { recurrence: OrthoRecurrence },
    /// Arbitrary tabulated functions with a pointwise evaluator returning
    /// `(value, derivative)` for each member.
    FunctionTable {
        eval: Arc<dyn Fn(usize, f64) -> (f64, f64) + Send + Sync>,
    },
}

impl std::fmt::Debug for BasisFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisFamily::Fourier { gamma } => write!(f, "Fourier {{ gamma: {gamma} }}"),
            BasisFamily::Chebyshev { r } => write!(f, "Chebyshev {{ r: {r} }}"),
            BasisFamily::DensityOrthogonal { .. } => write!(f, "DensityOrthogonal"),
            BasisFamily::FunctionTable { .. } => write!(f, "FunctionTable"),
        }
    }
}

/// A family of `size` univariate functions on `[a, b]`, with values and
/// derivatives tabulated at the nodes of `quad`.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub family: BasisFamily,
    pub size: usize,
    pub quad: Quadrature,
    /// `values[j][k]` = j-th function at k-th quadrature node.
    pub values: Vec<Vec<f64>>,
    pub deriv_values: Vec<Vec<f64>>,
}

impl BasisSet {
    pub fn domain(&self) -> (f64, f64) {
        (self.quad.a, self.quad.b)
    }

    /// Closed-form value of function `j` at `x`.
    pub fn eval(&self, j: usize, x: f64) -> f64 {
        self.eval_pair(j, x).0
    }

    pub fn eval_deriv(&self, j: usize, x: f64) -> f64 {
        self.eval_pair(j, x).1
    }

    fn eval_pair(&self, j: usize, x: f64) -> (f64, f64) {
        debug_assert!(j < self.size);
        match &self.family {
            BasisFamily::Fourier { gamma } => fourier_pair(j, x, *gamma),
            BasisFamily::Chebyshev { r } => chebyshev_pair(j, x / r, *r),
            BasisFamily::DensityOrthogonal { recurrence } => {
                let (p, dp) = recurrence.eval_all(x);
                (p[j], dp[j])
            }
            BasisFamily::FunctionTable { eval } => eval(j, x),
        }
    }

    /// All function values at `x` (used for pointwise TT evaluation).
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        match &self.family {
            BasisFamily::DensityOrthogonal { recurrence } => {
                let (p, _) = recurrence.eval_all(x);
                p
            }
            _ => (0..self.size).map(|j| self.eval(j, x)).collect(),
        }
    }

    pub fn eval_all_deriv(&self, x: f64) -> Vec<f64> {
        match &self.family {
            BasisFamily::DensityOrthogonal { recurrence } => {
                let (_, dp) = recurrence.eval_all(x);
                dp
            }
            _ => (0..self.size).map(|j| self.eval_deriv(j, x)).collect(),
        }
    }

    /// Build value/derivative tables from the closed-form evaluator.
    fn tabulate(mut self) -> Self {
        let nodes = self.quad.nodes.clone();
        self.values = (0..self.size)
            .map(|j| nodes.iter().map(|&x| self.eval(j, x)).collect())
            .collect();
        self.deriv_values = (0..self.size)
            .map(|j| nodes.iter().map(|&x| self.eval_deriv(j, x)).collect())
            .collect();
        self
    }

    /// Coefficient `c` such that `c * phi_0(x)` is the constant function 1,
    /// for families whose first member is constant.
    pub fn constant_coefficient(&self) -> Result<f64> {
        match &self.family {
            BasisFamily::Fourier { gamma } => Ok((2.0 * gamma).sqrt()),
            BasisFamily::Chebyshev { .. } => Ok(1.0),
            BasisFamily::DensityOrthogonal { recurrence } => Ok(recurrence.beta[0].sqrt()),
            BasisFamily::FunctionTable { .. } => Err(Error::Unsupported(
                "function-table bases have no declared constant member".into(),
            )),
        }
    }

    /// Gram matrix under the plain Lebesgue quadrature weight (for
    /// orthonormality checks).
    pub fn gram(&self) -> Vec<Vec<f64>> {
        self.gram_weighted(&vec![1.0; self.quad.order()])
    }

    pub fn gram_weighted(&self, weight_at_nodes: &[f64]) -> Vec<Vec<f64>> {
        let n = self.size;
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                g[i][j] = self
                    .quad
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| w * weight_at_nodes[k] * self.values[i][k] * self.values[j][k])
                    .sum();
            }
        }
        g
    }
}

fn fourier_pair(j: usize, x: f64, gamma: f64) -> (f64, f64) {
    if j == 0 {
        return (1.0 / (2.0 * gamma).sqrt(), 0.0);
    }
    let k = ((j + 1) / 2) as f64;
    let omega = k * std::f64::consts::PI / gamma;
    let norm = 1.0 / gamma.sqrt();
    if j % 2 == 1 {
        (norm * (omega * x).cos(), -norm * omega * (omega * x).sin())
    } else {
        (norm * (omega * x).sin(), norm * omega * (omega * x).cos())
    }
}

/// `(T_j(t), d/dx T_j(x/r))` with `t = x/r`, using `T_j' = j U_{j-1}`.
fn chebyshev_pair(j: usize, t: f64, r: f64) -> (f64, f64) {
    if j == 0 {
        return (1.0, 0.0);
    }
    // T by recurrence.
    let mut t0 = 1.0;
    let mut t1 = t;
    for _ in 2..=j {
        let t2 = 2.0 * t * t1 - t0;
        t0 = t1;
        t1 = t2;
    }
    // U_{j-1} by recurrence.
    let mut u0 = 1.0;
    let mut u1 = 2.0 * t;
    let u = if j == 1 {
        u0
    } else {
        for _ in 3..=j {
            let u2 = 2.0 * t * u1 - u0;
            u0 = u1;
            u1 = u2;
        }
        u1
    };
    (t1, (j as f64) * u / r)
}

/// First `size` functions of the Fourier sequence on `[-gamma, gamma]`,
/// normalized to unit L2 norm.
pub fn fourier_basis(size: usize, gamma: f64, quad: &Quadrature) -> Result<BasisSet> {
    if size == 0 {
        return Err(Error::InvalidInput("fourier basis: size >= 1".into()));
    }
    if gamma <= 0.0 {
        return Err(Error::InvalidInput("fourier basis: gamma > 0".into()));
    }
    Ok(BasisSet {
        family: BasisFamily::Fourier { gamma },
        size,
        quad: quad.clone(),
        values: vec![],
        deriv_values: vec![],
    }
    .tabulate())
}

/// Scaled Chebyshev polynomials `T_0(x/r) .. T_n(x/r)`, `size = n + 1`.
pub fn chebyshev_basis(degree: usize, r: f64, quad: &Quadrature) -> Result<BasisSet> {
    if r <= 0.0 {
        return Err(Error::InvalidInput("chebyshev basis: r > 0".into()));
    }
    Ok(BasisSet {
        family: BasisFamily::Chebyshev { r },
        size: degree + 1,
        quad: quad.clone(),
        values: vec![],
        deriv_values: vec![],
    }
    .tabulate())
}

/// Polynomials orthonormal with respect to the weight given by its values at
/// the quadrature nodes, via the Stieltjes procedure on the discretized
/// measure.
pub fn density_orthogonal_basis(
    weight_values: &[f64],
    size: usize,
    quad: &Quadrature,
) -> Result<BasisSet> {
    if weight_values.len() != quad.order() {
        return Err(Error::InvalidInput(
            "weight table length must match quadrature order".into(),
        ));
    }
    if size == 0 || size > quad.order() {
        return Err(Error::InvalidInput(format!(
            "basis size {size} must be in 1..=quadrature order {}",
            quad.order()
        )));
    }
    if weight_values.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidInput("weight must be nonnegative".into()));
    }
    let mu: Vec<f64> = quad
        .weights
        .iter()
        .zip(weight_values)
        .map(|(&w, &v)| w * v)
        .collect();
    let total: f64 = mu.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("weight is identically zero".into()));
    }
    let nodes = &quad.nodes;
    let m = nodes.len();
    let mut alpha = Vec::with_capacity(size);
    let mut beta = Vec::with_capacity(size);
    beta.push(total);
    let mut pm1 = vec![0.0f64; m];
    let mut p0: Vec<f64> = vec![1.0 / total.sqrt(); m];
    for j in 0..size {
        let a_j: f64 = (0..m).map(|k| mu[k] * nodes[k] * p0[k] * p0[k]).sum();
        alpha.push(a_j);
        if j + 1 == size {
            break;
        }
        let sb = beta[j].sqrt();
        let r: Vec<f64> = (0..m)
            .map(|k| (nodes[k] - a_j) * p0[k] - if j == 0 { 0.0 } else { sb * pm1[k] })
            .collect();
        let b_next: f64 = (0..m).map(|k| mu[k] * r[k] * r[k]).sum();
        if !(b_next > 0.0) || !b_next.is_finite() {
            return Err(Error::Degenerate(format!(
                "moment problem rank-deficient at degree {}",
                j + 1
            )));
        }
        beta.push(b_next);
        let sb_next = b_next.sqrt();
        pm1 = p0;
        p0 = r.iter().map(|&v| v / sb_next).collect();
    }
    let recurrence = OrthoRecurrence { alpha, beta };
    Ok(BasisSet {
        family: BasisFamily::DensityOrthogonal { recurrence },
        size,
        quad: quad.clone(),
        values: vec![],
        deriv_values: vec![],
    }
    .tabulate())
}

/// Coefficient TT of the constant function with the given value, in the
/// tensor-product basis `phi`. Rank 1; the value is absorbed into core 0.
pub fn constant_coefficients(phi: &[BasisSet], value: f64) -> Result<crate::tt::TensorTrain> {
    let mut factors = Vec::with_capacity(phi.len());
    for b in phi {
        let mut f = vec![0.0; b.size];
        f[0] = b.constant_coefficient()?;
        factors.push(f);
    }
    let mut tt = crate::tt::TensorTrain::rank_one(&factors)?;
    tt.scale(value);
    Ok(tt)
}

/// Basis of tabulated functions given by a closed-form `(value, derivative)`
/// evaluator. Used for density factors and boundary-measure factors.
pub fn function_table_basis(
    size: usize,
    quad: &Quadrature,
    eval: Arc<dyn Fn(usize, f64) -> (f64, f64) + Send + Sync>,
) -> Result<BasisSet> {
    if size == 0 {
        return Err(Error::InvalidInput("function table basis: size >= 1".into()));
    }
    Ok(BasisSet {
        family: BasisFamily::FunctionTable { eval },
        size,
        quad: quad.clone(),
        values: vec![],
        deriv_values: vec![],
    }
    .tabulate())
}
