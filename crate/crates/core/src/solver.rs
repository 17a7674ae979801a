//! Alternating least squares over the TT cores of the committor
//! coefficients, with cached left/right environments for every operator
//! term and a penalty-weight schedule.
//!
//! The unknown is kept in mixed-canonical form with the orthogonality
//! center at the active core, so each local normal matrix inherits the
//! conditioning of the assembled operators. Because the rest of the chain
//! is contracted exactly into the environments, the local quadratic value
//! at the solved core *is* the global objective — the solver records it
//! after every update at no extra cost.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assembly::GalerkinProblem;
use crate::basis::BasisSet;
use crate::density::eval_expansion;
use crate::error::{Error, Result};
use crate::tt::{Core3, Core4, MatrixProductOperator, TensorTrain};

/// Solver settings.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Uniform target bond rank for the coefficient TT (clamped per bond to
    /// the maximal feasible rank).
    pub rank: usize,
    /// Forward+backward sweeps per penalty stage.
    pub sweeps_per_rho: usize,
    /// Increasing penalty weights; the solve warm-starts across stages.
    pub rho_schedule: Vec<f64>,
    /// Early-exit threshold on the relative objective decrease per sweep.
    pub convergence_tol: f64,
    /// Relative Tikhonov jitter added to the local normal matrix.
    pub regularization: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rank: 6,
            sweeps_per_rho: 4,
            rho_schedule: vec![1e1, 1e2, 1e3, 1e4],
            convergence_tol: 1e-10,
            regularization: 1e-12,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.sweeps_per_rho == 0 {
            return Err(Error::InvalidInput(
                "solver: rank and sweeps_per_rho must be >= 1".into(),
            ));
        }
        if self.rho_schedule.is_empty() || self.rho_schedule.iter().any(|&r| r <= 0.0) {
            return Err(Error::InvalidInput(
                "solver: rho schedule must be nonempty and positive".into(),
            ));
        }
        if self.rho_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "solver: rho schedule must be strictly increasing".into(),
            ));
        }
        if self.convergence_tol <= 0.0 || self.regularization < 0.0 {
            return Err(Error::InvalidInput(
                "solver: tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One recorded objective value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub rho: f64,
    pub sweep: usize,
    pub site: usize,
    pub objective: f64,
}

/// Solved committor: coefficient TT plus its bases and the solve history.
#[derive(Debug, Clone)]
pub struct CommittorSolution {
    pub q: TensorTrain,
    pub phi_bases: Vec<BasisSet>,
    pub objective_trace: Vec<TraceEntry>,
    pub final_rho: f64,
}

impl CommittorSolution {
    /// Pointwise committor value.
    pub fn eval_q(&self, x: &[f64]) -> Result<f64> {
        eval_expansion(&self.q, &self.phi_bases, x)
    }

    /// Full gradient of q at `x`, by one forward and one backward pass of
    /// partial contractions.
    pub fn eval_q_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.q.num_dims();
        if x.len() != d {
            return Err(Error::ShapeMismatch("gradient: point dimension".into()));
        }
        let vals: Vec<Vec<f64>> = (0..d).map(|l| self.phi_bases[l].eval_all(x[l])).collect();
        let ders: Vec<Vec<f64>> = (0..d)
            .map(|l| self.phi_bases[l].eval_all_deriv(x[l]))
            .collect();
        // Forward partials: f[l] = row vector after contracting sites < l.
        let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
        fwd.push(vec![1.0]);
        for l in 0..d {
            fwd.push(apply_site(&fwd[l], &self.q.cores[l], &vals[l]));
        }
        // Backward partials: g[l] = column vector for sites > l.
        let mut bwd: Vec<Vec<f64>> = vec![Vec::new(); d + 1];
        bwd[d] = vec![1.0];
        for l in (0..d).rev() {
            bwd[l] = apply_site_rev(&bwd[l + 1], &self.q.cores[l], &vals[l]);
        }
        let mut grad = vec![0.0; d];
        for (l, g) in grad.iter_mut().enumerate() {
            let mid = apply_site(&fwd[l], &self.q.cores[l], &ders[l]);
            *g = mid.iter().zip(&bwd[l + 1]).map(|(a, b)| a * b).sum();
        }
        Ok(grad)
    }
}

fn apply_site(v: &[f64], core: &Core3, phi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; core.r_right];
    for (a, &va) in v.iter().enumerate() {
        if va == 0.0 {
            continue;
        }
        for (i, &pi) in phi.iter().enumerate() {
            let base = (a * core.n + i) * core.r_right;
            for b in 0..core.r_right {
                out[b] += va * pi * core.data[base + b];
            }
        }
    }
    out
}

fn apply_site_rev(v: &[f64], core: &Core3, phi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; core.r_left];
    for a in 0..core.r_left {
        let mut acc = 0.0;
        for (i, &pi) in phi.iter().enumerate() {
            let base = (a * core.n + i) * core.r_right;
            for (b, &vb) in v.iter().enumerate() {
                acc += pi * core.data[base + b] * vb;
            }
        }
        out[a] = acc;
    }
    out
}

/// Objective value of the assembled problem at coefficients `q`.
pub fn evaluate_objective(problem: &GalerkinProblem, q: &TensorTrain) -> Result<f64> {
    problem.objective(q)
}

// ---- environments ----------------------------------------------------

/// Environment of an MPO term: `left[l]` is the contraction of sites `< l`
/// over (Q-core, O-core, Q-core) triples, shape `(rq, ro, rq)` at bond
/// `l-1` flattened with the last index fastest; `right[l]` likewise for
/// sites `> l` at bond `l`.
struct MpoEnvs {
    left: Vec<Vec<f64>>,
    right: Vec<Vec<f64>>,
}

/// `out(b, g2, b') = sum_{a,g,a',i,j} t(a,g,a') q(a,i,b) o(g,i,j,g2) q(a',j,b')`
fn mpo_left_step(t: &[f64], q: &Core3, o: &Core4) -> Vec<f64> {
    let (rq, n, rq2) = (q.r_left, q.n, q.r_right);
    let (ro, ro2) = (o.r_left, o.r_right);
    // U(i, b, g, a') = sum_a q(a, i, b) t(a, g, a')
    let mut u = vec![0.0; n * rq2 * ro * rq];
    for a in 0..rq {
        for i in 0..n {
            for b in 0..rq2 {
                let qv = q.get(a, i, b);
                if qv == 0.0 {
                    continue;
                }
                let ub = (i * rq2 + b) * ro * rq;
                let tb = a * ro * rq;
                for k in 0..ro * rq {
                    u[ub + k] += qv * t[tb + k];
                }
            }
        }
    }
    // W(j, g2, b, a') = sum_{g,i} o(g, i, j, g2) u(i, b, g, a')
    let mut w = vec![0.0; o.n * ro2 * rq2 * rq];
    for g in 0..ro {
        for i in 0..o.m {
            for j in 0..o.n {
                for g2 in 0..ro2 {
                    let ov = o.get(g, i, j, g2);
                    if ov == 0.0 {
                        continue;
                    }
                    for b in 0..rq2 {
                        let ub = (i * rq2 + b) * ro * rq + g * rq;
                        let wb = ((j * ro2 + g2) * rq2 + b) * rq;
                        for ap in 0..rq {
                            w[wb + ap] += ov * u[ub + ap];
                        }
                    }
                }
            }
        }
    }
    // out(b, g2, b') = sum_{a',j} q(a', j, b') w(j, g2, b, a')
    let mut out = vec![0.0; rq2 * ro2 * rq2];
    for ap in 0..rq {
        for j in 0..o.n {
            for bp in 0..rq2 {
                let qv = q.get(ap, j, bp);
                if qv == 0.0 {
                    continue;
                }
                for g2 in 0..ro2 {
                    for b in 0..rq2 {
                        let wv = w[((j * ro2 + g2) * rq2 + b) * rq + ap];
                        out[(b * ro2 + g2) * rq2 + bp] += qv * wv;
                    }
                }
            }
        }
    }
    out
}

/// Mirror image of [`mpo_left_step`] for the right environments:
/// `out(a, g, a') = sum q(a,i,b) o(g,i,j,g2) q(a',j,b') t(b,g2,b')`.
fn mpo_right_step(t: &[f64], q: &Core3, o: &Core4) -> Vec<f64> {
    let (rq, n, rq2) = (q.r_left, q.n, q.r_right);
    let (ro, ro2) = (o.r_left, o.r_right);
    // U(i, a, g2, b') = sum_b q(a, i, b) t(b, g2, b')
    let mut u = vec![0.0; n * rq * ro2 * rq2];
    for a in 0..rq {
        for i in 0..n {
            for b in 0..rq2 {
                let qv = q.get(a, i, b);
                if qv == 0.0 {
                    continue;
                }
                let ub = (i * rq + a) * ro2 * rq2;
                let tb = b * ro2 * rq2;
                for k in 0..ro2 * rq2 {
                    u[ub + k] += qv * t[tb + k];
                }
            }
        }
    }
    // W(j, g, a, b') = sum_{g2,i} o(g, i, j, g2) u(i, a, g2, b')
    let mut w = vec![0.0; o.n * ro * rq * rq2];
    for g in 0..ro {
        for i in 0..o.m {
            for j in 0..o.n {
                for g2 in 0..ro2 {
                    let ov = o.get(g, i, j, g2);
                    if ov == 0.0 {
                        continue;
                    }
                    for a in 0..rq {
                        let ub = (i * rq + a) * ro2 * rq2 + g2 * rq2;
                        let wb = ((j * ro + g) * rq + a) * rq2;
                        for bp in 0..rq2 {
                            w[wb + bp] += ov * u[ub + bp];
                        }
                    }
                }
            }
        }
    }
    // out(a, g, a') = sum_{b',j} q(a', j, b') w(j, g, a, b')
    let mut out = vec![0.0; rq * ro * rq];
    for ap in 0..rq {
        for j in 0..o.n {
            for bp in 0..rq2 {
                let qv = q.get(ap, j, bp);
                if qv == 0.0 {
                    continue;
                }
                for g in 0..ro {
                    for a in 0..rq {
                        let wv = w[((j * ro + g) * rq + a) * rq2 + bp];
                        out[(a * ro + g) * rq + ap] += qv * wv;
                    }
                }
            }
        }
    }
    out
}

/// Environment of the linear TT term: `left[l]` has shape `(rq, rh)`.
struct TtEnvs {
    left: Vec<Vec<f64>>,
    right: Vec<Vec<f64>>,
}

fn tt_left_step(t: &[f64], q: &Core3, h: &Core3) -> Vec<f64> {
    let (rq, n, rq2) = (q.r_left, q.n, q.r_right);
    let rh2 = h.r_right;
    let mut out = vec![0.0; rq2 * rh2];
    for a in 0..rq {
        for al in 0..h.r_left {
            let tv = t[a * h.r_left + al];
            if tv == 0.0 {
                continue;
            }
            for i in 0..n {
                for b in 0..rq2 {
                    let qv = q.get(a, i, b);
                    if qv == 0.0 {
                        continue;
                    }
                    for bl in 0..rh2 {
                        out[b * rh2 + bl] += tv * qv * h.get(al, i, bl);
                    }
                }
            }
        }
    }
    out
}

fn tt_right_step(t: &[f64], q: &Core3, h: &Core3) -> Vec<f64> {
    let (rq, n, rq2) = (q.r_left, q.n, q.r_right);
    let rh = h.r_left;
    let mut out = vec![0.0; rq * rh];
    for a in 0..rq {
        for al in 0..rh {
            let mut acc = 0.0;
            for i in 0..n {
                for b in 0..rq2 {
                    let qv = q.get(a, i, b);
                    if qv == 0.0 {
                        continue;
                    }
                    for bl in 0..h.r_right {
                        acc += qv * h.get(al, i, bl) * t[b * h.r_right + bl];
                    }
                }
            }
            out[a * rh + al] = acc;
        }
    }
    out
}

impl MpoEnvs {
    fn fresh(q: &TensorTrain, o: &MatrixProductOperator) -> Self {
        let d = q.num_dims();
        let mut left = vec![Vec::new(); d];
        let mut right = vec![Vec::new(); d];
        left[0] = vec![1.0];
        right[d - 1] = vec![1.0];
        for l in (1..d).rev() {
            right[l - 1] = mpo_right_step(&right[l], &q.cores[l], &o.cores[l]);
        }
        MpoEnvs { left, right }
    }
}

impl TtEnvs {
    fn fresh(q: &TensorTrain, h: &TensorTrain) -> Self {
        let d = q.num_dims();
        let mut left = vec![Vec::new(); d];
        let mut right = vec![Vec::new(); d];
        left[0] = vec![1.0];
        right[d - 1] = vec![1.0];
        for l in (1..d).rev() {
            right[l - 1] = tt_right_step(&right[l], &q.cores[l], &h.cores[l]);
        }
        TtEnvs { left, right }
    }
}

/// `M[(a,i,b),(a',j,b')] = sum_{g,g2} L(a,g,a') o(g,i,j,g2) R(b,g2,b')`.
fn local_matrix(left: &[f64], o: &Core4, right: &[f64], r1: usize, r2: usize) -> DMatrix<f64> {
    let (ro, ro2, n) = (o.r_left, o.r_right, o.n);
    // T(a, a', i, j, g2) = sum_g left(a, g, a') o(g, i, j, g2)
    let mut tmp = vec![0.0; r1 * r1 * o.m * n * ro2];
    for a in 0..r1 {
        for g in 0..ro {
            for ap in 0..r1 {
                let lv = left[(a * ro + g) * r1 + ap];
                if lv == 0.0 {
                    continue;
                }
                for i in 0..o.m {
                    for j in 0..n {
                        let tb = (((a * r1 + ap) * o.m + i) * n + j) * ro2;
                        let ob = ((g * o.m + i) * n + j) * ro2;
                        for g2 in 0..ro2 {
                            tmp[tb + g2] += lv * o.data[ob + g2];
                        }
                    }
                }
            }
        }
    }
    let dim = r1 * o.m * r2;
    let mut m = DMatrix::zeros(dim, dim);
    for a in 0..r1 {
        for ap in 0..r1 {
            for i in 0..o.m {
                for j in 0..n {
                    let tb = (((a * r1 + ap) * o.m + i) * n + j) * ro2;
                    for b in 0..r2 {
                        for bp in 0..r2 {
                            let mut acc = 0.0;
                            for g2 in 0..ro2 {
                                acc += tmp[tb + g2] * right[(b * ro2 + g2) * r2 + bp];
                            }
                            m[((a * o.m + i) * r2 + b, (ap * n + j) * r2 + bp)] += acc;
                        }
                    }
                }
            }
        }
    }
    m
}

/// `b[(a,i,b)] = sum_{al,bl} L(a,al) h(al,i,bl) R(b,bl)`.
fn local_vector(left: &[f64], h: &Core3, right: &[f64], r1: usize, r2: usize) -> DVector<f64> {
    let dim = r1 * h.n * r2;
    let mut v = DVector::zeros(dim);
    for a in 0..r1 {
        for al in 0..h.r_left {
            let lv = left[a * h.r_left + al];
            if lv == 0.0 {
                continue;
            }
            for i in 0..h.n {
                for bl in 0..h.r_right {
                    let hv = h.get(al, i, bl);
                    if hv == 0.0 {
                        continue;
                    }
                    for b in 0..r2 {
                        v[(a * h.n + i) * r2 + b] += lv * hv * right[b * h.r_right + bl];
                    }
                }
            }
        }
    }
    v
}

/// Shift the orthogonality center from `k` to `k+1` by a thin QR of the
/// left unfolding; the triangular factor is absorbed into core `k+1`.
fn move_center_right(q: &mut TensorTrain, k: usize) {
    let unf = q.cores[k].left_unfold();
    let qr = unf.qr();
    let qm = qr.q();
    let rm = qr.r();
    let (r_left, n) = (q.cores[k].r_left, q.cores[k].n);
    q.cores[k] = Core3::from_left_unfold(&qm, r_left, n);
    let next = rm * q.cores[k + 1].right_unfold();
    let (n2, rr2) = (q.cores[k + 1].n, q.cores[k + 1].r_right);
    q.cores[k + 1] = Core3::from_right_unfold(&next, n2, rr2);
}

/// Shift the orthogonality center from `k` to `k-1`.
fn move_center_left(q: &mut TensorTrain, k: usize) {
    let unf = q.cores[k].right_unfold().transpose();
    let qr = unf.qr();
    let qm = qr.q().transpose();
    let rm = qr.r().transpose();
    let (n, r_right) = (q.cores[k].n, q.cores[k].r_right);
    q.cores[k] = Core3::from_right_unfold(&qm, n, r_right);
    let prev = q.cores[k - 1].left_unfold() * rm;
    let (rl, n1) = (q.cores[k - 1].r_left, q.cores[k - 1].n);
    q.cores[k - 1] = Core3::from_left_unfold(&prev, rl, n1);
}

/// Largest representable bond ranks for the given mode sizes, capped at
/// `rank`.
pub fn feasible_ranks(mode_sizes: &[usize], rank: usize) -> Vec<usize> {
    let d = mode_sizes.len();
    let mut r = vec![1usize; d + 1];
    for l in 1..d {
        let left: usize = mode_sizes[..l]
            .iter()
            .try_fold(1usize, |p, &n| p.checked_mul(n))
            .unwrap_or(usize::MAX);
        let right: usize = mode_sizes[l..]
            .iter()
            .try_fold(1usize, |p, &n| p.checked_mul(n))
            .unwrap_or(usize::MAX);
        r[l] = rank.min(left).min(right);
    }
    r
}

struct SweepState {
    energy: MpoEnvs,
    ha: MpoEnvs,
    hb: MpoEnvs,
    hb_lin: TtEnvs,
}

impl SweepState {
    fn fresh(q: &TensorTrain, p: &GalerkinProblem) -> Self {
        SweepState {
            energy: MpoEnvs::fresh(q, &p.energy),
            ha: MpoEnvs::fresh(q, &p.ha),
            hb: MpoEnvs::fresh(q, &p.hb),
            hb_lin: TtEnvs::fresh(q, &p.hb_linear),
        }
    }

    fn push_left_envs(&mut self, q: &TensorTrain, p: &GalerkinProblem, k: usize) {
        self.energy.left[k + 1] =
            mpo_left_step(&self.energy.left[k], &q.cores[k], &p.energy.cores[k]);
        self.ha.left[k + 1] = mpo_left_step(&self.ha.left[k], &q.cores[k], &p.ha.cores[k]);
        self.hb.left[k + 1] = mpo_left_step(&self.hb.left[k], &q.cores[k], &p.hb.cores[k]);
        self.hb_lin.left[k + 1] =
            tt_left_step(&self.hb_lin.left[k], &q.cores[k], &p.hb_linear.cores[k]);
    }

    fn push_right_envs(&mut self, q: &TensorTrain, p: &GalerkinProblem, k: usize) {
        self.energy.right[k - 1] =
            mpo_right_step(&self.energy.right[k], &q.cores[k], &p.energy.cores[k]);
        self.ha.right[k - 1] = mpo_right_step(&self.ha.right[k], &q.cores[k], &p.ha.cores[k]);
        self.hb.right[k - 1] = mpo_right_step(&self.hb.right[k], &q.cores[k], &p.hb.cores[k]);
        self.hb_lin.right[k - 1] =
            tt_right_step(&self.hb_lin.right[k], &q.cores[k], &p.hb_linear.cores[k]);
    }
}

/// Solve the local normal equations at site `k`, write the core in place,
/// and return the exact objective value at the updated iterate.
fn update_core(
    q: &mut TensorTrain,
    p: &GalerkinProblem,
    st: &SweepState,
    k: usize,
    regularization: f64,
) -> Result<f64> {
    let (r1, n, r2) = (q.cores[k].r_left, q.cores[k].n, q.cores[k].r_right);
    let mut m = local_matrix(&st.energy.left[k], &p.energy.cores[k], &st.energy.right[k], r1, r2);
    let ma = local_matrix(&st.ha.left[k], &p.ha.cores[k], &st.ha.right[k], r1, r2);
    let mb = local_matrix(&st.hb.left[k], &p.hb.cores[k], &st.hb.right[k], r1, r2);
    m += p.rho * (ma + mb);
    // Exact symmetry for the local solve.
    let m = 0.5 * (&m + m.transpose());
    let b = p.rho
        * local_vector(
            &st.hb_lin.left[k],
            &p.hb_linear.cores[k],
            &st.hb_lin.right[k],
            r1,
            r2,
        );
    let dim = m.nrows();
    let jitter = regularization * m.trace() / dim as f64;
    let mut reg = m.clone();
    for i in 0..dim {
        reg[(i, i)] += jitter;
    }
    let x = reg
        .clone()
        .cholesky()
        .map(|c| c.solve(&b))
        .or_else(|| reg.lu().solve(&b))
        .ok_or_else(|| {
            Error::Numerical(format!(
                "singular local system at site {k} (dim {dim}, trace {:.3e})",
                m.trace()
            ))
        })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite local solution at site {k}"
        )));
    }
    // Exact global objective at the new iterate, from the local quadratic.
    let obj = (x.transpose() * &m * &x)[(0, 0)] - 2.0 * b.dot(&x) + p.rho * p.pb_mass;
    q.cores[k] = Core3 {
        r_left: r1,
        n,
        r_right: r2,
        data: x.iter().copied().collect(),
    };
    Ok(obj)
}

/// Minimize the objective over the penalty schedule, warm-starting each
/// stage from the previous solution.
pub fn solve(
    problem: &GalerkinProblem,
    phi_bases: &[BasisSet],
    config: &SolverConfig,
) -> Result<CommittorSolution> {
    config.validate()?;
    let d = phi_bases.len();
    let modes: Vec<usize> = phi_bases.iter().map(|b| b.size).collect();
    if problem.energy.row_mode_sizes() != modes {
        return Err(Error::ShapeMismatch(
            "solver: basis sizes do not match the assembled operators".into(),
        ));
    }
    let ranks = feasible_ranks(&modes, config.rank);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = TensorTrain::random(&modes, &ranks, &mut rng)?.right_orthogonalized();
    let mut trace = Vec::new();
    let mut final_rho = config.rho_schedule[0];
    for &rho in &config.rho_schedule {
        final_rho = rho;
        let p = problem.with_rho(rho);
        let mut st = SweepState::fresh(&q, &p);
        let mut prev_obj = f64::INFINITY;
        for sweep in 0..config.sweeps_per_rho {
            let mut last = prev_obj;
            // Forward half-sweep: center moves 0 -> d-1.
            for k in 0..d {
                last = update_core(&mut q, &p, &st, k, config.regularization)?;
                if !last.is_finite() {
                    return Err(Error::Numerical(format!(
                        "objective diverged at rho {rho}, sweep {sweep}, site {k}"
                    )));
                }
                trace.push(TraceEntry {
                    rho,
                    sweep,
                    site: k,
                    objective: last,
                });
                if k + 1 < d {
                    move_center_right(&mut q, k);
                    st.push_left_envs(&q, &p, k);
                }
            }
            // Backward half-sweep: center moves d-1 -> 0.
            for k in (0..d).rev() {
                last = update_core(&mut q, &p, &st, k, config.regularization)?;
                trace.push(TraceEntry {
                    rho,
                    sweep,
                    site: k,
                    objective: last,
                });
                if k > 0 {
                    move_center_left(&mut q, k);
                    st.push_right_envs(&q, &p, k);
                }
            }
            let scale = last.abs().max(1.0);
            let converged = (prev_obj - last).abs() <= config.convergence_tol * scale;
            prev_obj = last;
            if converged {
                break;
            }
        }
    }
    Ok(CommittorSolution {
        q,
        phi_bases: phi_bases.to_vec(),
        objective_trace: trace,
        final_rho,
    })
}
