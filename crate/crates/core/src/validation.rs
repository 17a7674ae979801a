//! Independent ground truth and statistical checks: 1D finite-difference
//! references, a Monte-Carlo relative-error metric, Langevin and
//! cemetery-state simulators, isosurface hitting tests, 2-means clustering,
//! and reactive-flow paths.
//!
//! Everything here is deterministic given its seed. Trajectory ensembles
//! derive one independent RNG stream per trajectory index, so results do
//! not depend on how the work is scheduled across threads, and all
//! reductions run in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::quadrature::gauss_legendre;

/// RNG stream for trajectory `index` of an ensemble with base `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

// ---- 1D references ---------------------------------------------------

/// Reference committor on a uniform 1D grid.
#[derive(Debug, Clone)]
pub struct ReferenceSolution1D {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl ReferenceSolution1D {
    pub fn x_lo(&self) -> f64 {
        self.grid[0]
    }

    pub fn x_hi(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Piecewise-linear evaluation, clamped to the end values outside the
    /// grid.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x <= self.grid[0] {
            return self.values[0];
        }
        if x >= self.grid[n - 1] {
            return self.values[n - 1];
        }
        let h = (self.grid[n - 1] - self.grid[0]) / (n - 1) as f64;
        let t = (x - self.grid[0]) / h;
        let i = (t.floor() as usize).min(n - 2);
        let frac = t - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// Solve a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    if diag[0] == 0.0 {
        return Err(Error::Numerical("tridiagonal pivot is zero".into()));
    }
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Numerical(format!(
                "tridiagonal solve broke down at row {i}"
            )));
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    Ok(x)
}

/// Hard-boundary double-well committor in the first coordinate: the
/// two-point boundary value problem `f'' - beta * 4 x (x^2 - 1) f' = 0` on
/// `[-1, 1]` with `f(-1) = 0`, `f(1) = 1`, discretized with second-order
/// central differences.
pub fn solve_dw_reference(beta: f64, grid_points: usize) -> Result<ReferenceSolution1D> {
    if grid_points < 1000 {
        return Err(Error::InvalidInput(
            "dw reference: need at least 1000 grid points".into(),
        ));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput("dw reference: beta must be positive".into()));
    }
    let n = grid_points;
    let h = 2.0 / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * h).collect();
    // Interior rows: (f[i+1] - 2 f[i] + f[i-1]) / h^2
    //              - c(x) (f[i+1] - f[i-1]) / (2h) = 0.
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    diag[0] = 1.0;
    rhs[0] = 0.0;
    diag[n - 1] = 1.0;
    rhs[n - 1] = 1.0;
    for i in 1..n - 1 {
        let x = grid[i];
        let drift = beta * 4.0 * x * (x * x - 1.0);
        lower[i] = 1.0 / (h * h) + drift / (2.0 * h);
        diag[i] = -2.0 / (h * h);
        upper[i] = 1.0 / (h * h) - drift / (2.0 * h);
    }
    let values = thomas(&lower, &diag, &upper, &rhs)?;
    Ok(ReferenceSolution1D { grid, values })
}

/// Closed-form double-well committor
/// `f(x) = int_{-1}^x exp(beta V1) / int_{-1}^1 exp(beta V1)` with
/// `V1(s) = (s^2 - 1)^2`, tabulated by per-cell Gauss-Legendre quadrature.
pub fn dw_reference_closed_form(beta: f64, grid_points: usize) -> Result<ReferenceSolution1D> {
    if grid_points < 2 {
        return Err(Error::InvalidInput("closed form: need >= 2 grid points".into()));
    }
    let n = grid_points;
    let h = 2.0 / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * h).collect();
    let w = |s: f64| {
        let v = (s * s - 1.0) * (s * s - 1.0);
        (beta * v).exp()
    };
    let mut cum = vec![0.0; n];
    for i in 1..n {
        let cell = gauss_legendre(6, grid[i - 1], grid[i])?;
        cum[i] = cum[i - 1] + cell.integrate(w);
    }
    let total = cum[n - 1];
    let values = cum.into_iter().map(|c| c / total).collect();
    Ok(ReferenceSolution1D { grid, values })
}

/// Zero-Neumann finite-difference solve of the penalized committor
/// equation `-beta^{-1} q'' + V' q' + (f + g) q = g` on a uniform grid,
/// with killing rates `f = rho pA / (beta p)` and `g = rho pB / (beta p)`,
/// `p = exp(-beta V)`.
pub fn soft_committor_1d_fd(
    v1: impl Fn(f64) -> f64,
    v1_prime: impl Fn(f64) -> f64,
    beta: f64,
    p_a1: impl Fn(f64) -> f64,
    p_b1: impl Fn(f64) -> f64,
    rho: f64,
    x_lo: f64,
    x_hi: f64,
    grid_points: usize,
) -> Result<ReferenceSolution1D> {
    if grid_points < 10 || !(x_lo < x_hi) {
        return Err(Error::InvalidInput("soft FD: bad grid".into()));
    }
    if !(beta > 0.0) || !(rho > 0.0) {
        return Err(Error::InvalidInput("soft FD: beta, rho must be positive".into()));
    }
    let n = grid_points;
    let h = (x_hi - x_lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| x_lo + i as f64 * h).collect();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let rate = |x: f64, p_bdry: &dyn Fn(f64) -> f64| {
        rho * p_bdry(x) / (beta * (-beta * v1(x)).exp())
    };
    for i in 0..n {
        let x = grid[i];
        let f = rate(x, &|y| p_a1(y));
        let g = rate(x, &|y| p_b1(y));
        if !f.is_finite() || !g.is_finite() || f < 0.0 || g < 0.0 {
            return Err(Error::Numerical(format!(
                "soft FD: invalid rates at x = {x}: f = {f}, g = {g}"
            )));
        }
        if i == 0 {
            // Ghost point with zero-Neumann end: q[-1] = q[1].
            diag[i] = 2.0 / (beta * h * h) + f + g;
            upper[i] = -2.0 / (beta * h * h);
        } else if i == n - 1 {
            diag[i] = 2.0 / (beta * h * h) + f + g;
            lower[i] = -2.0 / (beta * h * h);
        } else {
            let drift = v1_prime(x);
            lower[i] = -1.0 / (beta * h * h) - drift / (2.0 * h);
            diag[i] = 2.0 / (beta * h * h) + f + g;
            upper[i] = -1.0 / (beta * h * h) + drift / (2.0 * h);
        }
        rhs[i] = g;
    }
    let values = thomas(&lower, &diag, &upper, &rhs)?;
    Ok(ReferenceSolution1D { grid, values })
}

// ---- Monte-Carlo relative error --------------------------------------

/// A scalar Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
}

/// Inverse-CDF sampler for one univariate factor tabulated on quadrature
/// nodes, treating the factor as piecewise constant on the node cells.
struct FactorSampler {
    /// Cell edges, ascending.
    edges: Vec<f64>,
    /// Cumulative cell masses, normalized to end at 1.
    cum: Vec<f64>,
}

impl FactorSampler {
    fn new(nodes: &[f64], values: &[f64], clip: Option<(f64, f64)>) -> Result<Self> {
        let mut edges = Vec::new();
        let mut masses = Vec::new();
        let n = nodes.len();
        for i in 0..n {
            let lo = if i == 0 {
                nodes[0] - 0.5 * (nodes[1] - nodes[0])
            } else {
                0.5 * (nodes[i - 1] + nodes[i])
            };
            let hi = if i + 1 == n {
                nodes[n - 1] + 0.5 * (nodes[n - 1] - nodes[n - 2])
            } else {
                0.5 * (nodes[i] + nodes[i + 1])
            };
            let (lo, hi) = match clip {
                Some((a, b)) => (lo.max(a), hi.min(b)),
                None => (lo, hi),
            };
            if hi <= lo {
                continue;
            }
            let mass = (values[i]).max(0.0) * (hi - lo);
            if edges.is_empty() {
                edges.push(lo);
            }
            edges.push(hi);
            masses.push(mass);
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("factor has no positive mass".into()));
        }
        let mut cum = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m / total;
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(FactorSampler { edges, cum })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random_range(0.0..1.0);
        let k = self.cum.partition_point(|&c| c < u).min(self.cum.len() - 1);
        let lo = self.edges[k];
        let hi = self.edges[k + 1];
        let c_lo = if k == 0 { 0.0 } else { self.cum[k - 1] };
        let span = (self.cum[k] - c_lo).max(f64::MIN_POSITIVE);
        lo + (hi - lo) * ((u - c_lo) / span).clamp(0.0, 1.0)
    }
}

/// Relative density-weighted L2 error `E = ||q - q_ref|| / ||q_ref||`
/// between a d-dimensional committor `q` and the 1D reference evaluated on
/// the first coordinate, estimated by Monte Carlo over the product-form
/// density with the first coordinate restricted to `(-1, 1)`.
pub fn relative_error_mc(
    q: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    reference: &ReferenceSolution1D,
    density: &DensityModel,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let d = density.dim();
    if n_samples == 0 {
        return Err(Error::InvalidInput("relative_error_mc: n_samples >= 1".into()));
    }
    let mut samplers = Vec::with_capacity(d);
    for k in 0..d {
        let basis = &density.bases[k];
        let values = density.univariate_factor(k)?;
        let clip = if k == 0 { Some((-1.0, 1.0)) } else { None };
        samplers.push(FactorSampler::new(&basis.quad.nodes, values, clip)?);
    }
    // Per-sample contributions, one RNG stream each chunk of 1024 samples.
    let chunk = 1024usize;
    let n_chunks = n_samples.div_ceil(chunk);
    let contrib = par_map(n_chunks, |c| -> Result<(f64, f64, usize)> {
        let mut rng = trajectory_rng(seed, c as u64);
        let lo = c * chunk;
        let hi = ((c + 1) * chunk).min(n_samples);
        let (mut su, mut sv) = (0.0, 0.0);
        let mut x = vec![0.0; d];
        for _ in lo..hi {
            for (k, s) in samplers.iter().enumerate() {
                x[k] = s.sample(&mut rng);
            }
            let qv = q(&x)?;
            let fv = reference.eval(x[0]);
            su += (qv - fv) * (qv - fv);
            sv += fv * fv;
        }
        Ok((su, sv, hi - lo))
    });
    let (mut su, mut sv, mut count) = (0.0, 0.0, 0usize);
    let mut us: Vec<f64> = Vec::new();
    let mut vs: Vec<f64> = Vec::new();
    for c in contrib {
        let (a, b, n) = c?;
        su += a;
        sv += b;
        count += n;
        us.push(a / n.max(1) as f64);
        vs.push(b / n.max(1) as f64);
    }
    if !(sv > 0.0) {
        return Err(Error::Degenerate(
            "relative_error_mc: reference is zero on the sampled set".into(),
        ));
    }
    let nf = count as f64;
    let (ubar, vbar) = (su / nf, sv / nf);
    let r = ubar / vbar;
    let e = r.max(0.0).sqrt();
    // Delta-method standard error of the ratio from chunk means.
    let m = us.len() as f64;
    let mut var_r = 0.0;
    for (u, v) in us.iter().zip(&vs) {
        let z = (u - r * v) / vbar;
        var_r += z * z;
    }
    var_r /= m * (m - 1.0).max(1.0);
    let std_err = if e > 0.0 {
        var_r.sqrt() / (2.0 * e)
    } else {
        var_r.sqrt().sqrt()
    };
    Ok(McEstimate { value: e, std_err })
}

// ---- Langevin and cemetery simulators --------------------------------

/// One Euler-Maruyama step `x <- x - grad_v(x) dt + sqrt(2 dt / beta) z`.
pub fn langevin_step<R: Rng>(
    x: &mut [f64],
    grad_v: &dyn Fn(&[f64], &mut [f64]),
    beta: f64,
    dt: f64,
    grad_buf: &mut [f64],
    rng: &mut R,
) {
    grad_v(x, grad_buf);
    let noise = (2.0 * dt / beta).sqrt();
    for (xi, gi) in x.iter_mut().zip(grad_buf.iter()) {
        let z: f64 = StandardNormal.sample(rng);
        *xi += -gi * dt + noise * z;
    }
}

/// Endpoint of an overdamped Langevin trajectory of `n_steps` steps.
pub fn langevin_sample(
    grad_v: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    beta: f64,
    dt: f64,
    n_steps: usize,
    x0: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("langevin: dt must be positive".into()));
    }
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x.len()];
    let mut rng = trajectory_rng(seed, 0);
    for step in 0..n_steps {
        langevin_step(&mut x, grad_v, beta, dt, &mut grad, &mut rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "langevin trajectory diverged at step {step}"
            )));
        }
    }
    Ok(x)
}

/// Result of a cemetery-state hitting estimate.
#[derive(Debug, Clone, Copy)]
pub struct CemeteryEstimate {
    /// Estimated probability of absorption at the B cemetery state.
    pub value: f64,
    pub std_err: f64,
    /// Trajectories that hit the step cap and were excluded.
    pub censored: usize,
    /// Set when more than 5% of trajectories were censored.
    pub censoring_warning: bool,
}

/// Monte-Carlo estimate of the penalized committor at `x0`: the diffusion
/// jumps to the A cemetery at rate `f_rate` and to the B cemetery at rate
/// `g_rate`; the estimate is the fraction of trajectories absorbed at B.
#[allow(clippy::too_many_arguments)]
pub fn cemetery_estimate(
    x0: &[f64],
    f_rate: &(dyn Fn(&[f64]) -> f64 + Sync),
    g_rate: &(dyn Fn(&[f64]) -> f64 + Sync),
    grad_v: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    beta: f64,
    dt: f64,
    n_traj: usize,
    max_steps: usize,
    seed: u64,
) -> Result<CemeteryEstimate> {
    if n_traj == 0 || !(dt > 0.0) {
        return Err(Error::InvalidInput("cemetery: n_traj >= 1 and dt > 0".into()));
    }
    let outcomes = par_map(n_traj, |t| -> Result<Option<bool>> {
        let mut rng = trajectory_rng(seed, t as u64);
        let mut x = x0.to_vec();
        let mut grad = vec![0.0; x.len()];
        for step in 0..max_steps {
            let f = f_rate(&x);
            let g = g_rate(&x);
            if !(f >= 0.0) || !(g >= 0.0) || !f.is_finite() || !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "cemetery: invalid rates f = {f}, g = {g} at step {step}"
                )));
            }
            let total = f + g;
            if total > 0.0 {
                let u: f64 = rng.random_range(0.0..1.0);
                if u < 1.0 - (-total * dt).exp() {
                    let v: f64 = rng.random_range(0.0..1.0);
                    return Ok(Some(v < g / total));
                }
            }
            langevin_step(&mut x, grad_v, beta, dt, &mut grad, &mut rng);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "cemetery trajectory diverged at step {step}"
                )));
            }
        }
        Ok(None)
    });
    let mut hits_b = 0usize;
    let mut completed = 0usize;
    let mut censored = 0usize;
    for o in outcomes {
        match o? {
            Some(true) => {
                hits_b += 1;
                completed += 1;
            }
            Some(false) => completed += 1,
            None => censored += 1,
        }
    }
    if completed == 0 {
        return Err(Error::Degenerate(
            "cemetery: every trajectory was censored".into(),
        ));
    }
    let p = hits_b as f64 / completed as f64;
    let std_err = (p * (1.0 - p) / completed as f64).sqrt();
    Ok(CemeteryEstimate {
        value: p,
        std_err,
        censored,
        censoring_warning: censored as f64 > 0.05 * n_traj as f64,
    })
}

// ---- Isosurface hitting test -----------------------------------------

/// Spherical metastable region.
#[derive(Debug, Clone)]
pub struct BallRegion {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallRegion {
    pub fn contains(&self, x: &[f64]) -> bool {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        r2 <= self.radius * self.radius
    }
}

/// Outcome of the thickened-isosurface hitting test.
#[derive(Debug, Clone)]
pub struct TrajectoryStats {
    /// One start point per row.
    pub start_points: Vec<Vec<f64>>,
    /// Trajectories from start `j` absorbed in B before A.
    pub n_j: Vec<usize>,
    /// Trajectories from start `j` that reached either region (censored
    /// trajectories are excluded from the per-point means).
    pub completed_j: Vec<usize>,
    pub n_t: usize,
    pub eps: f64,
    pub grand_mean: f64,
    pub empirical_std: f64,
    /// CLT reference standard deviation `1 / (2 sqrt(N_t))`.
    pub theoretical_std: f64,
    /// Half width `3 (4 N_s N_t)^{-1/2}` of the grand-mean acceptance band.
    pub ci_half_width: f64,
    /// Whether the grand mean lies within `1/2 +- ci_half_width`.
    pub pass: bool,
    /// Sorted empirical per-point means paired with normal quantiles.
    pub qq: Vec<(f64, f64)>,
}

impl TrajectoryStats {
    /// Per-start-point hitting fractions.
    pub fn means(&self) -> Vec<f64> {
        self.n_j
            .iter()
            .zip(&self.completed_j)
            .map(|(&n, &c)| n as f64 / c.max(1) as f64)
            .collect()
    }
}

/// Inverse standard-normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9 — ample for Q-Q reference quantiles).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inverse_normal_cdf(1.0 - p)
    }
}

/// Run a trajectory from `x` until it enters A or B; `Some(true)` means B
/// was hit first, `None` means the step cap was reached.
fn run_to_absorption<R: Rng>(
    mut x: Vec<f64>,
    grad_v: &dyn Fn(&[f64], &mut [f64]),
    beta: f64,
    dt: f64,
    region_a: &BallRegion,
    region_b: &BallRegion,
    max_steps: usize,
    rng: &mut R,
) -> Result<Option<bool>> {
    let mut grad = vec![0.0; x.len()];
    for step in 0..max_steps {
        langevin_step(&mut x, grad_v, beta, dt, &mut grad, rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "hitting trajectory diverged at step {step}"
            )));
        }
        if region_a.contains(&x) {
            return Ok(Some(false));
        }
        if region_b.contains(&x) {
            return Ok(Some(true));
        }
    }
    Ok(None)
}

/// Parameters for the isosurface sampling phase.
#[derive(Debug, Clone)]
pub struct IsosurfaceSampling {
    /// Langevin start point for the sampling chain.
    pub x0: Vec<f64>,
    /// Steps discarded before collection starts.
    pub burn_in: usize,
    /// Steps between membership checks.
    pub thinning: usize,
    /// Total step budget for the sampling chain.
    pub step_budget: usize,
}

/// Thickened-isosurface hitting test: collect `n_s` Langevin samples with
/// `|q - 1/2| <= eps`, run `n_t` trajectories from each to absorption in A
/// or B, and compare the per-point hitting fractions with the CLT law
/// N(1/2, 1/(4 N_t)).
#[allow(clippy::too_many_arguments)]
pub fn isosurface_hitting_test(
    q: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    grad_v: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    beta: f64,
    eps: f64,
    n_s: usize,
    n_t: usize,
    region_a: &BallRegion,
    region_b: &BallRegion,
    dt: f64,
    sampling: &IsosurfaceSampling,
    max_steps: usize,
    seed: u64,
) -> Result<TrajectoryStats> {
    if n_s == 0 || n_t == 0 || !(eps > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidInput(
            "isosurface test: n_s, n_t, eps, dt must be positive".into(),
        ));
    }
    // Phase 1: harvest isosurface points from one deterministic chain.
    let mut rng = trajectory_rng(seed, u64::MAX);
    let mut x = sampling.x0.clone();
    let mut grad = vec![0.0; x.len()];
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(n_s);
    let mut steps = 0usize;
    while steps < sampling.burn_in {
        langevin_step(&mut x, grad_v, beta, dt, &mut grad, &mut rng);
        steps += 1;
    }
    while starts.len() < n_s {
        if steps >= sampling.step_budget {
            return Err(Error::ResourceLimit(format!(
                "isosurface sampling found {} of {} points within {} steps",
                starts.len(),
                n_s,
                sampling.step_budget
            )));
        }
        for _ in 0..sampling.thinning.max(1) {
            langevin_step(&mut x, grad_v, beta, dt, &mut grad, &mut rng);
            steps += 1;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("isosurface sampling chain diverged".into()));
        }
        if region_a.contains(&x) || region_b.contains(&x) {
            continue;
        }
        if (q(&x)? - 0.5).abs() <= eps {
            starts.push(x.clone());
        }
    }
    // Phase 2: hitting ensembles, one RNG stream per (start, trial).
    let outcomes = par_map(n_s * n_t, |idx| -> Result<Option<bool>> {
        let j = idx / n_t;
        let mut rng = trajectory_rng(seed, idx as u64);
        run_to_absorption(
            starts[j].clone(),
            grad_v,
            beta,
            dt,
            region_a,
            region_b,
            max_steps,
            &mut rng,
        )
    });
    let mut n_j = vec![0usize; n_s];
    let mut completed_j = vec![0usize; n_s];
    for (idx, o) in outcomes.into_iter().enumerate() {
        match o? {
            Some(hit_b) => {
                completed_j[idx / n_t] += 1;
                if hit_b {
                    n_j[idx / n_t] += 1;
                }
            }
            None => {}
        }
    }
    let means: Vec<f64> = n_j
        .iter()
        .zip(&completed_j)
        .map(|(&n, &c)| n as f64 / c.max(1) as f64)
        .collect();
    let grand_mean = means.iter().sum::<f64>() / n_s as f64;
    let empirical_std = (means
        .iter()
        .map(|m| (m - grand_mean) * (m - grand_mean))
        .sum::<f64>()
        / (n_s as f64 - 1.0).max(1.0))
    .sqrt();
    let theoretical_std = 0.5 / (n_t as f64).sqrt();
    let ci_half_width = 3.0 / (4.0 * n_s as f64 * n_t as f64).sqrt();
    let pass = (grand_mean - 0.5).abs() <= ci_half_width;
    let mut sorted = means.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let p = (i as f64 + 0.5) / n_s as f64;
            (m, 0.5 + theoretical_std * inverse_normal_cdf(p))
        })
        .collect();
    Ok(TrajectoryStats {
        start_points: starts,
        n_j,
        completed_j,
        n_t,
        eps,
        grand_mean,
        empirical_std,
        theoretical_std,
        ci_half_width,
        pass,
        qq,
    })
}

// ---- 2-means clustering ----------------------------------------------

/// Result of 2-means clustering with centroid-line projections.
#[derive(Debug, Clone)]
pub struct KMeans2 {
    pub centroids: [Vec<f64>; 2],
    pub assignments: Vec<usize>,
    /// Projection coordinate of each sample onto the centroid line:
    /// `theta = 1` at `centroids[0]`, `theta = 0` at `centroids[1]`.
    pub theta: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k = 2 and deterministic farthest-pair
/// initialization. The `seed` is accepted for interface stability but the
/// algorithm itself is fully deterministic.
pub fn kmeans2(samples: &[Vec<f64>], seed: u64) -> Result<KMeans2> {
    let _ = seed;
    if samples.len() < 2 {
        return Err(Error::InvalidInput("kmeans2: need at least 2 samples".into()));
    }
    let n = samples.len();
    // Farthest pair from the point most distant to the mean, then the point
    // most distant to that one (avoids the quadratic all-pairs scan).
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n as f64;
        }
    }
    let far = |from: &[f64]| -> usize {
        let mut best = 0;
        let mut best_d = -1.0;
        for (i, s) in samples.iter().enumerate() {
            let dd = dist2(s, from);
            if dd > best_d {
                best_d = dd;
                best = i;
            }
        }
        best
    };
    let i0 = far(&mean);
    let i1 = far(&samples[i0]);
    if dist2(&samples[i0], &samples[i1]) == 0.0 {
        return Err(Error::Degenerate("kmeans2: all samples identical".into()));
    }
    let mut centroids = [samples[i0].clone(), samples[i1].clone()];
    let mut assignments = vec![0usize; n];
    for _ in 0..1000 {
        let mut changed = false;
        for (i, s) in samples.iter().enumerate() {
            let a = usize::from(dist2(s, &centroids[1]) < dist2(s, &centroids[0]));
            if a != assignments[i] {
                assignments[i] = a;
                changed = true;
            }
        }
        let mut sums = [vec![0.0; d], vec![0.0; d]];
        let mut counts = [0usize; 2];
        for (s, &a) in samples.iter().zip(&assignments) {
            counts[a] += 1;
            for (acc, v) in sums[a].iter_mut().zip(s) {
                *acc += v;
            }
        }
        for c in 0..2 {
            if counts[c] == 0 {
                return Err(Error::Degenerate("kmeans2: empty cluster".into()));
            }
            for v in sums[c].iter_mut() {
                *v /= counts[c] as f64;
            }
            centroids[c] = sums[c].clone();
        }
        if !changed {
            break;
        }
    }
    // theta * c0 + (1 - theta) * c1 is the projection onto the line.
    let axis: Vec<f64> = centroids[0]
        .iter()
        .zip(&centroids[1])
        .map(|(a, b)| a - b)
        .collect();
    let len2: f64 = axis.iter().map(|v| v * v).sum();
    let theta = samples
        .iter()
        .map(|s| {
            s.iter()
                .zip(&centroids[1])
                .zip(&axis)
                .map(|((x, c), ax)| (x - c) * ax)
                .sum::<f64>()
                / len2
        })
        .collect();
    Ok(KMeans2 {
        centroids,
        assignments,
        theta,
    })
}

// ---- Reactive flow ---------------------------------------------------

/// A reactive-flow path with the committor value at each stored state.
#[derive(Debug, Clone)]
pub struct ReactivePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub q_values: Vec<f64>,
}

/// Integrate the deterministic reactive flow
/// `dU/dt = beta^{-1} p(U) grad q(U)` from `x0` with adaptive steps
/// bounded by `|dq| <= 1e-3`, stopping once `q >= q_stop_hi`.
pub fn reactive_flow(
    q: &dyn Fn(&[f64]) -> Result<f64>,
    grad_q: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    p: &dyn Fn(&[f64]) -> f64,
    beta: f64,
    x0: &[f64],
    q_stop_hi: f64,
) -> Result<ReactivePath> {
    const DQ_PER_STEP: f64 = 1e-3;
    const MAX_STEPS: usize = 2_000_000;
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut q_values = vec![q(&x)?];
    for _ in 0..MAX_STEPS {
        if *q_values.last().unwrap() >= q_stop_hi {
            return Ok(ReactivePath {
                times,
                states,
                q_values,
            });
        }
        let g = grad_q(&x)?;
        let pv = p(&x);
        // dq/dt = grad q . v = beta^{-1} p |grad q|^2.
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let dq_dt = pv * g2 / beta;
        if !(dq_dt > 1e-300) {
            return Err(Error::Numerical(
                "reactive flow stalled: p |grad q|^2 vanished".into(),
            ));
        }
        let dt = DQ_PER_STEP / dq_dt;
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi += dt * pv * gi / beta;
        }
        t += dt;
        times.push(t);
        states.push(x.clone());
        q_values.push(q(&x)?);
    }
    Err(Error::ResourceLimit(format!(
        "reactive flow did not reach q = {q_stop_hi} within {MAX_STEPS} steps"
    )))
}
