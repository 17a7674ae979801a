//! Matrix product state / tensor train containers and the contraction,
//! rounding, and quadratic-form primitives the rest of the crate builds on.
//!
//! A tensor train stores a `d`-tensor as a chain of 3-index cores
//! `G_l(a, i, b)` with `a` in `0..r_{l-1}`, `i` in `0..n_l`, `b` in `0..r_l`
//! and boundary ranks `r_0 = r_d = 1`. An MPO is the operator analogue with
//! 4-index cores `G_l(a, i, j, b)`. Core data is contiguous with the right
//! rank index fastest-varying, so unfoldings are plain matrix reshapes.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dense::DenseTensor;
use crate::error::{Error, Result};

/// Default entry cap for densification (`to_dense`).
pub const DENSE_CAP: usize = 10_000_000;

/// One 3-index TT core of shape `(r_left, n, r_right)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Core3 {
    pub r_left: usize,
    pub n: usize,
    pub r_right: usize,
    /// Layout: `data[(a * n + i) * r_right + b]`.
    pub data: Vec<f64>,
}

impl Core3 {
    pub fn zeros(r_left: usize, n: usize, r_right: usize) -> Self {
        Core3 {
            r_left,
            n,
            r_right,
            data: vec![0.0; r_left * n * r_right],
        }
    }

    pub fn from_fn(
        r_left: usize,
        n: usize,
        r_right: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut c = Self::zeros(r_left, n, r_right);
        for a in 0..r_left {
            for i in 0..n {
                for b in 0..r_right {
                    c.data[(a * n + i) * r_right + b] = f(a, i, b);
                }
            }
        }
        c
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[(a * self.n + i) * self.r_right + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, v: f64) {
        self.data[(a * self.n + i) * self.r_right + b] = v;
    }

    /// The slice `G(:, i, :)` as an `r_left x r_right` matrix.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left, self.r_right, |a, b| self.get(a, i, b))
    }

    /// Left unfolding: `(r_left * n) x r_right`, row index `a * n + i`.
    pub fn left_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left * self.n, self.r_right, |row, b| {
            self.data[row * self.r_right + b]
        })
    }

    /// Right unfolding: `r_left x (n * r_right)`, column index `i * r_right + b`.
    pub fn right_unfold(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left, self.n * self.r_right, |a, col| {
            self.data[a * self.n * self.r_right + col]
        })
    }

    pub fn from_left_unfold(m: &DMatrix<f64>, r_left: usize, n: usize) -> Self {
        assert_eq!(m.nrows(), r_left * n);
        let r_right = m.ncols();
        Core3::from_fn(r_left, n, r_right, |a, i, b| m[(a * n + i, b)])
    }

    pub fn from_right_unfold(m: &DMatrix<f64>, n: usize, r_right: usize) -> Self {
        assert_eq!(m.ncols(), n * r_right);
        let r_left = m.nrows();
        Core3::from_fn(r_left, n, r_right, |a, i, b| m[(a, i * r_right + b)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }
}

/// One 4-index MPO core of shape `(r_left, m, n, r_right)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Core4 {
    pub r_left: usize,
    /// Row (output) mode size.
    pub m: usize,
    /// Column (input) mode size.
    pub n: usize,
    pub r_right: usize,
    /// Layout: `data[((a * m + i) * n + j) * r_right + b]`.
    pub data: Vec<f64>,
}

impl Core4 {
    pub fn zeros(r_left: usize, m: usize, n: usize, r_right: usize) -> Self {
        Core4 {
            r_left,
            m,
            n,
            r_right,
            data: vec![0.0; r_left * m * n * r_right],
        }
    }

    pub fn from_fn(
        r_left: usize,
        m: usize,
        n: usize,
        r_right: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut c = Self::zeros(r_left, m, n, r_right);
        for a in 0..r_left {
            for i in 0..m {
                for j in 0..n {
                    for b in 0..r_right {
                        c.data[((a * m + i) * n + j) * r_right + b] = f(a, i, j, b);
                    }
                }
            }
        }
        c
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, j: usize, b: usize) -> f64 {
        self.data[((a * self.m + i) * self.n + j) * self.r_right + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, j: usize, b: usize, v: f64) {
        self.data[((a * self.m + i) * self.n + j) * self.r_right + b] = v;
    }

    /// The slice `G(:, i, j, :)` as an `r_left x r_right` matrix.
    pub fn slice(&self, i: usize, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left, self.r_right, |a, b| self.get(a, i, j, b))
    }
}

/// Tensor train / matrix product state of a real `d`-tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorTrain {
    pub cores: Vec<Core3>,
}

impl TensorTrain {
    /// Build from cores, checking the chain invariants.
    pub fn new(cores: Vec<Core3>) -> Result<Self> {
        let tt = TensorTrain { cores };
        tt.validate()?;
        Ok(tt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cores.is_empty() {
            return Err(Error::InvalidInput("tensor train with no cores".into()));
        }
        if self.cores[0].r_left != 1 || self.cores.last().unwrap().r_right != 1 {
            return Err(Error::ShapeMismatch(
                "boundary ranks must equal 1".into(),
            ));
        }
        for (l, w) in self.cores.windows(2).enumerate() {
            if w[0].r_right != w[1].r_left {
                return Err(Error::ShapeMismatch(format!(
                    "bond {}: {} vs {}",
                    l + 1,
                    w[0].r_right,
                    w[1].r_left
                )));
            }
        }
        for (l, c) in self.cores.iter().enumerate() {
            if c.n == 0 || c.r_left == 0 || c.r_right == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "core {l} has a zero dimension"
                )));
            }
            if c.data.len() != c.r_left * c.n * c.r_right {
                return Err(Error::ShapeMismatch(format!(
                    "core {l} data length mismatch"
                )));
            }
        }
        Ok(())
    }

    pub fn num_dims(&self) -> usize {
        self.cores.len()
    }

    /// Rank vector `(r_0, ..., r_d)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.cores.len() + 1);
        r.push(self.cores[0].r_left);
        for c in &self.cores {
            r.push(c.r_right);
        }
        r
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n).collect()
    }

    /// Evaluate one entry as the `1 x 1` matrix product of core slices.
    pub fn eval(&self, idx: &[usize]) -> Result<f64> {
        if idx.len() != self.cores.len() {
            return Err(Error::IndexOutOfRange(format!(
                "index length {} for order-{} tensor",
                idx.len(),
                self.cores.len()
            )));
        }
        for (l, (&i, c)) in idx.iter().zip(&self.cores).enumerate() {
            if i >= c.n {
                return Err(Error::IndexOutOfRange(format!(
                    "index {i} at mode {l} (size {})",
                    c.n
                )));
            }
        }
        // Row vector propagated through the chain.
        let mut v = vec![1.0f64];
        for (&i, c) in idx.iter().zip(&self.cores) {
            let mut next = vec![0.0; c.r_right];
            for (a, &va) in v.iter().enumerate() {
                if va == 0.0 {
                    continue;
                }
                let base = (a * c.n + i) * c.r_right;
                for b in 0..c.r_right {
                    next[b] += va * c.data[base + b];
                }
            }
            v = next;
        }
        Ok(v[0])
    }

    /// Materialize the full tensor. Fails above `cap` entries.
    pub fn to_dense_capped(&self, cap: usize) -> Result<DenseTensor> {
        let shape = self.mode_sizes();
        let total: usize = shape.iter().product();
        if total > cap {
            return Err(Error::ResourceLimit(format!(
                "dense tensor would have {total} entries (cap {cap})"
            )));
        }
        let mut data = Vec::with_capacity(total);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..total {
            data.push(self.eval(&idx)?);
            advance(&mut idx, &shape);
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_dense_capped(DENSE_CAP)
    }

    /// TT-SVD: exact (up to `rel_tol`) decomposition of a dense tensor by a
    /// sequential truncated-SVD sweep.
    pub fn from_dense(t: &DenseTensor, rel_tol: f64, max_rank: usize) -> Result<Self> {
        if t.shape.is_empty() {
            return Err(Error::InvalidInput("empty shape".into()));
        }
        if max_rank == 0 {
            return Err(Error::InvalidInput("max_rank must be >= 1".into()));
        }
        let d = t.shape.len();
        let norm = t.frobenius_norm();
        let delta = if d > 1 {
            rel_tol * norm / ((d - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut cores = Vec::with_capacity(d);
        let mut r_prev = 1usize;
        // Remaining unfolding, rows = r_prev * n_l, cols = product of later modes.
        let mut rest: usize = t.shape.iter().product();
        let mut m = DMatrix::from_fn(1, rest, |_, k| t.data[k]);
        for (l, &n) in t.shape.iter().enumerate() {
            rest /= n;
            if l + 1 == d {
                cores.push(Core3::from_fn(r_prev, n, 1, |a, i, _| m[(a, i)]));
                break;
            }
            // reshape (r_prev, n * rest) -> (r_prev * n, rest)
            let unf = DMatrix::from_fn(r_prev * n, rest, |row, col| {
                let (a, i) = (row / n, row % n);
                m[(a, i * rest + col)]
            });
            let (u, sv, vt) = truncated_svd(&unf, delta, max_rank)?;
            let r = sv.len();
            cores.push(Core3::from_left_unfold(&u, r_prev, n));
            let mut sv_vt = vt;
            for (k, &s) in sv.iter().enumerate() {
                for c in 0..sv_vt.ncols() {
                    sv_vt[(k, c)] *= s;
                }
            }
            m = sv_vt;
            r_prev = r;
        }
        TensorTrain::new(cores)
    }

    /// Inner product `sum_i a(i) b(i)` by a left-to-right transfer sweep.
    pub fn inner(&self, other: &TensorTrain) -> Result<f64> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::ShapeMismatch(format!(
                "tt inner: {:?} vs {:?}",
                self.mode_sizes(),
                other.mode_sizes()
            )));
        }
        let mut t = DMatrix::from_element(1, 1, 1.0);
        for (ca, cb) in self.cores.iter().zip(&other.cores) {
            let mut next = DMatrix::zeros(ca.r_right, cb.r_right);
            for i in 0..ca.n {
                let ai = ca.slice(i);
                let bi = cb.slice(i);
                next += ai.transpose() * &t * bi;
            }
            t = next;
        }
        Ok(t[(0, 0)])
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).map(|v| v.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// Exact TT for `ca * a + cb * b` via block-diagonal cores.
    pub fn scale_add(a: &TensorTrain, b: &TensorTrain, ca: f64, cb: f64) -> Result<TensorTrain> {
        if a.mode_sizes() != b.mode_sizes() {
            return Err(Error::ShapeMismatch(format!(
                "tt scale_add: {:?} vs {:?}",
                a.mode_sizes(),
                b.mode_sizes()
            )));
        }
        let d = a.num_dims();
        if d == 1 {
            let (x, y) = (&a.cores[0], &b.cores[0]);
            let core = Core3::from_fn(1, x.n, 1, |_, i, _| {
                ca * x.get(0, i, 0) + cb * y.get(0, i, 0)
            });
            return TensorTrain::new(vec![core]);
        }
        let mut cores = Vec::with_capacity(d);
        for l in 0..d {
            let (x, y) = (&a.cores[l], &b.cores[l]);
            let (sa, sb) = if l == 0 { (ca, cb) } else { (1.0, 1.0) };
            let core = if l == 0 {
                // 1 x n x (rA + rB)
                Core3::from_fn(1, x.n, x.r_right + y.r_right, |_, i, b| {
                    if b < x.r_right {
                        sa * x.get(0, i, b)
                    } else {
                        sb * y.get(0, i, b - x.r_right)
                    }
                })
            } else if l == d - 1 {
                // (rA + rB) x n x 1
                Core3::from_fn(x.r_left + y.r_left, x.n, 1, |a_, i, _| {
                    if a_ < x.r_left {
                        x.get(a_, i, 0)
                    } else {
                        y.get(a_ - x.r_left, i, 0)
                    }
                })
            } else {
                Core3::from_fn(
                    x.r_left + y.r_left,
                    x.n,
                    x.r_right + y.r_right,
                    |a_, i, b| {
                        if a_ < x.r_left && b < x.r_right {
                            x.get(a_, i, b)
                        } else if a_ >= x.r_left && b >= x.r_right {
                            y.get(a_ - x.r_left, i, b - x.r_right)
                        } else {
                            0.0
                        }
                    },
                )
            };
            cores.push(core);
        }
        TensorTrain::new(cores)
    }

    /// Multiply the represented tensor by a scalar (absorbed into core 0).
    pub fn scale(&mut self, c: f64) {
        self.cores[0].scale(c);
    }

    /// Rank-1 TT from per-dimension factor vectors.
    pub fn rank_one(factors: &[Vec<f64>]) -> Result<TensorTrain> {
        if factors.is_empty() {
            return Err(Error::InvalidInput("rank_one: no factors".into()));
        }
        let cores = factors
            .iter()
            .map(|f| Core3 {
                r_left: 1,
                n: f.len(),
                r_right: 1,
                data: f.clone(),
            })
            .collect();
        TensorTrain::new(cores)
    }

    /// TT with i.i.d. standard normal entries in every core.
    pub fn random<R: Rng>(mode_sizes: &[usize], ranks: &[usize], rng: &mut R) -> Result<TensorTrain> {
        let d = mode_sizes.len();
        if ranks.len() != d + 1 || ranks[0] != 1 || ranks[d] != 1 {
            return Err(Error::InvalidInput(
                "ranks must have length d+1 with boundary ranks 1".into(),
            ));
        }
        let cores = (0..d)
            .map(|l| {
                Core3::from_fn(ranks[l], mode_sizes[l], ranks[l + 1], |_, _, _| {
                    StandardNormal.sample(rng)
                })
            })
            .collect();
        TensorTrain::new(cores)
    }

    /// Bring all cores except the first to right-orthogonal form
    /// (`G_l` right unfoldings with orthonormal rows). Leaves the tensor
    /// unchanged; after this the Frobenius norm sits in core 0.
    pub fn right_orthogonalized(&self) -> TensorTrain {
        let mut cores = self.cores.clone();
        let d = cores.len();
        for l in (1..d).rev() {
            let m = cores[l].right_unfold(); // r_{l-1} x (n r_l)
            let qr = m.transpose().qr();
            let q = qr.q(); // (n r_l) x k
            let r = qr.r(); // k x r_{l-1}
            let k = q.ncols();
            let n = cores[l].n;
            let r_right = cores[l].r_right;
            cores[l] = Core3::from_right_unfold(&q.transpose(), n, r_right);
            debug_assert_eq!(cores[l].r_left, k);
            // Fold R^T into the left neighbor.
            let carry = r.transpose(); // r_{l-1} x k
            let left = cores[l - 1].left_unfold() * carry;
            cores[l - 1] = Core3::from_left_unfold(&left, cores[l - 1].r_left, cores[l - 1].n);
        }
        TensorTrain { cores }
    }

    /// Quasi-optimal TT truncation: right-to-left orthogonalization followed
    /// by a left-to-right truncated-SVD sweep with per-bond threshold
    /// `rel_tol * ||A||_F / sqrt(d - 1)` and a hard rank cap.
    pub fn round(&self, rel_tol: f64, max_rank: usize) -> Result<TensorTrain> {
        if rel_tol < 0.0 || max_rank == 0 {
            return Err(Error::InvalidInput(
                "round: rel_tol >= 0 and max_rank >= 1 required".into(),
            ));
        }
        let d = self.num_dims();
        if d == 1 {
            return Ok(self.clone());
        }
        let mut tt = self.right_orthogonalized();
        let norm = tt.cores[0].frobenius_norm();
        let delta = rel_tol * norm / ((d - 1) as f64).sqrt();
        for l in 0..d - 1 {
            let unf = tt.cores[l].left_unfold();
            let (u, sv, vt) = truncated_svd(&unf, delta, max_rank)?;
            let r = sv.len();
            let (r_left, n) = (tt.cores[l].r_left, tt.cores[l].n);
            tt.cores[l] = Core3::from_left_unfold(&u, r_left, n);
            let mut carry = vt; // r x r_l
            for (k, &s) in sv.iter().enumerate() {
                for c in 0..carry.ncols() {
                    carry[(k, c)] *= s;
                }
            }
            let right = carry * tt.cores[l + 1].right_unfold();
            let (n_next, rr_next) = (tt.cores[l + 1].n, tt.cores[l + 1].r_right);
            tt.cores[l + 1] = Core3::from_right_unfold(&right, n_next, rr_next);
            debug_assert_eq!(tt.cores[l].r_right, r);
        }
        tt.validate()?;
        Ok(tt)
    }
}

/// One-sided Jacobi SVD of a square matrix: `a = U diag(sv) V^T` with `sv`
/// descending. Orthogonalizes column pairs by plane rotations until all
/// off-diagonal column inner products vanish relative to the column norms.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let p = a.nrows();
    debug_assert_eq!(p, a.ncols());
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(p, p);
    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let ci = w.column(i);
                let cj = w.column(j);
                let aii = ci.dot(&ci);
                let ajj = cj.dot(&cj);
                let aij = ci.dot(&cj);
                if aij.abs() <= tol * (aii * ajj).sqrt() || aij == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (ajj - aii) / (2.0 * aij);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for row in 0..p {
                    let wi = w[(row, i)];
                    let wj = w[(row, j)];
                    w[(row, i)] = cs * wi - sn * wj;
                    w[(row, j)] = sn * wi + cs * wj;
                    let vi = v[(row, i)];
                    let vj = v[(row, j)];
                    v[(row, i)] = cs * vi - sn * vj;
                    v[(row, j)] = sn * vi + cs * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    let norms: Vec<f64> = (0..p).map(|c| w.column(c).norm()).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());
    let mut u = DMatrix::<f64>::zeros(p, p);
    let mut vs = DMatrix::<f64>::zeros(p, p);
    let mut sv = Vec::with_capacity(p);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sv.push(s);
        for row in 0..p {
            // Exactly zero columns get a placeholder left vector; they only
            // survive truncation when the whole matrix is zero.
            u[(row, dst)] = if s > 0.0 {
                w[(row, src)] / s
            } else if row == dst {
                1.0
            } else {
                0.0
            };
            vs[(row, dst)] = v[(row, src)];
        }
    }
    (u, sv, vs)
}

/// SVD with tail-energy truncation: keeps the smallest rank such that the
/// discarded singular values satisfy `sqrt(sum tail^2) <= delta`, capped at
/// `max_rank`, and never below 1.
fn truncated_svd(
    m: &DMatrix<f64>,
    delta: f64,
    max_rank: usize,
) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    // Reduce to a small square factor by QR of the taller orientation, then
    // run one-sided Jacobi on that factor. The bidiagonalization behind the
    // library SVD loses accuracy on graded and rank-deficient unfoldings
    // (singular values can even exceed the Frobenius norm); Jacobi keeps
    // high relative accuracy and these factors are small.
    let (u_full, sv_full, vt_full) = if m.nrows() >= m.ncols() {
        let qr = m.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let (ur, sv, vr) = jacobi_svd(&r);
        (q * ur, sv, vr.transpose())
    } else {
        let qr = m.transpose().qr();
        let (q, r) = (qr.q(), qr.r());
        // m = r^T q^T; the SVD of r^T supplies the left factor of m.
        let (ur, sv, vr) = jacobi_svd(&r.transpose());
        (ur, sv, vr.transpose() * q.transpose())
    };
    let u = &u_full;
    let vt = &vt_full;
    let mut sv: Vec<f64> = sv_full;
    // nalgebra returns singular values in descending order; be defensive about
    // exact ties only.
    let full = sv.len();
    let mut tail = 0.0f64;
    let mut keep = full;
    while keep > 1 {
        let cand = tail + sv[keep - 1] * sv[keep - 1];
        if cand.sqrt() <= delta {
            tail = cand;
            keep -= 1;
        } else {
            break;
        }
    }
    let keep = keep.min(max_rank).max(1);
    sv.truncate(keep);
    let ut = DMatrix::from_fn(u.nrows(), keep, |r, c| u[(r, c)]);
    let vtt = DMatrix::from_fn(keep, vt.ncols(), |r, c| vt[(r, c)]);
    Ok((ut, sv, vtt))
}

/// Matrix product operator: chain of 4-index cores.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixProductOperator {
    pub cores: Vec<Core4>,
}

impl MatrixProductOperator {
    pub fn new(cores: Vec<Core4>) -> Result<Self> {
        let mpo = MatrixProductOperator { cores };
        mpo.validate()?;
        Ok(mpo)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cores.is_empty() {
            return Err(Error::InvalidInput("MPO with no cores".into()));
        }
        if self.cores[0].r_left != 1 || self.cores.last().unwrap().r_right != 1 {
            return Err(Error::ShapeMismatch("MPO boundary ranks must equal 1".into()));
        }
        for (l, w) in self.cores.windows(2).enumerate() {
            if w[0].r_right != w[1].r_left {
                return Err(Error::ShapeMismatch(format!(
                    "MPO bond {}: {} vs {}",
                    l + 1,
                    w[0].r_right,
                    w[1].r_left
                )));
            }
        }
        for (l, c) in self.cores.iter().enumerate() {
            if c.m == 0 || c.n == 0 || c.r_left == 0 || c.r_right == 0 {
                return Err(Error::ShapeMismatch(format!("MPO core {l} has a zero dimension")));
            }
            if c.data.len() != c.r_left * c.m * c.n * c.r_right {
                return Err(Error::ShapeMismatch(format!("MPO core {l} data length mismatch")));
            }
        }
        Ok(())
    }

    pub fn num_dims(&self) -> usize {
        self.cores.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.cores.len() + 1);
        r.push(self.cores[0].r_left);
        for c in &self.cores {
            r.push(c.r_right);
        }
        r
    }

    pub fn row_mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.m).collect()
    }

    pub fn col_mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n).collect()
    }

    /// Rank-1 identity MPO on the given mode sizes.
    pub fn identity(mode_sizes: &[usize]) -> Result<Self> {
        let cores = mode_sizes
            .iter()
            .map(|&n| Core4::from_fn(1, n, n, 1, |_, i, j, _| if i == j { 1.0 } else { 0.0 }))
            .collect();
        MatrixProductOperator::new(cores)
    }

    /// MPO with i.i.d. standard normal entries.
    pub fn random<R: Rng>(
        row_sizes: &[usize],
        col_sizes: &[usize],
        ranks: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let d = row_sizes.len();
        if col_sizes.len() != d || ranks.len() != d + 1 || ranks[0] != 1 || ranks[d] != 1 {
            return Err(Error::InvalidInput("MPO random: bad shape spec".into()));
        }
        let cores = (0..d)
            .map(|l| {
                Core4::from_fn(ranks[l], row_sizes[l], col_sizes[l], ranks[l + 1], |_, _, _, _| {
                    StandardNormal.sample(rng)
                })
            })
            .collect();
        MatrixProductOperator::new(cores)
    }

    /// One entry `O(i; j)` of the operator.
    pub fn eval(&self, row_idx: &[usize], col_idx: &[usize]) -> Result<f64> {
        if row_idx.len() != self.cores.len() || col_idx.len() != self.cores.len() {
            return Err(Error::IndexOutOfRange("MPO eval: index length".into()));
        }
        let mut v = vec![1.0f64];
        for ((&i, &j), c) in row_idx.iter().zip(col_idx).zip(&self.cores) {
            if i >= c.m || j >= c.n {
                return Err(Error::IndexOutOfRange(format!(
                    "MPO eval: ({i},{j}) out of ({},{})",
                    c.m, c.n
                )));
            }
            let mut next = vec![0.0; c.r_right];
            for (a, &va) in v.iter().enumerate() {
                if va == 0.0 {
                    continue;
                }
                let base = ((a * c.m + i) * c.n + j) * c.r_right;
                for b in 0..c.r_right {
                    next[b] += va * c.data[base + b];
                }
            }
            v = next;
        }
        Ok(v[0])
    }

    /// Dense matrix form (row multi-index slowest on `i_1`), for oracles.
    pub fn to_dense_matrix(&self, cap: usize) -> Result<DMatrix<f64>> {
        let rows: usize = self.row_mode_sizes().iter().product();
        let cols: usize = self.col_mode_sizes().iter().product();
        if rows * cols > cap {
            return Err(Error::ResourceLimit(format!(
                "dense MPO would have {} entries (cap {cap})",
                rows * cols
            )));
        }
        let rshape = self.row_mode_sizes();
        let cshape = self.col_mode_sizes();
        let mut out = DMatrix::zeros(rows, cols);
        let mut ridx = vec![0usize; rshape.len()];
        for r in 0..rows {
            let mut cidx = vec![0usize; cshape.len()];
            for c in 0..cols {
                out[(r, c)] = self.eval(&ridx, &cidx)?;
                advance(&mut cidx, &cshape);
            }
            advance(&mut ridx, &rshape);
        }
        Ok(out)
    }

    /// Quadratic form `sum_{i,j} x(i) A(i;j) y(j)` by a single left-to-right
    /// sweep over (x-core, A-core, y-core) triples. Never materializes `A y`.
    pub fn quadratic_form(&self, x: &TensorTrain, y: &TensorTrain) -> Result<f64> {
        if self.row_mode_sizes() != x.mode_sizes() || self.col_mode_sizes() != y.mode_sizes() {
            return Err(Error::ShapeMismatch(format!(
                "quadratic form: MPO ({:?};{:?}) vs x {:?}, y {:?}",
                self.row_mode_sizes(),
                self.col_mode_sizes(),
                x.mode_sizes(),
                y.mode_sizes()
            )));
        }
        // Transfer tensor T(ax, aA, ay), flattened with ay fastest.
        let mut t = vec![1.0f64];
        let (mut rx, mut ra, mut ry) = (1usize, 1usize, 1usize);
        for l in 0..self.cores.len() {
            let xc = &x.cores[l];
            let ac = &self.cores[l];
            let yc = &y.cores[l];
            let (rx2, ra2, ry2) = (xc.r_right, ac.r_right, yc.r_right);
            // Step 1: U(i, ax2, aA, ay) = sum_ax x(ax, i, ax2) T(ax, aA, ay)
            let mut u = vec![0.0f64; xc.n * rx2 * ra * ry];
            for ax in 0..rx {
                for i in 0..xc.n {
                    for ax2 in 0..rx2 {
                        let xv = xc.get(ax, i, ax2);
                        if xv == 0.0 {
                            continue;
                        }
                        let ubase = (i * rx2 + ax2) * ra * ry;
                        let tbase = ax * ra * ry;
                        for k in 0..ra * ry {
                            u[ubase + k] += xv * t[tbase + k];
                        }
                    }
                }
            }
            // Step 2: W(j, aA2, ax2, ay) = sum_{aA,i} A(aA, i, j, aA2) U(i, ax2, aA, ay)
            let mut w = vec![0.0f64; ac.n * ra2 * rx2 * ry];
            for aa in 0..ra {
                for i in 0..ac.m {
                    for j in 0..ac.n {
                        for aa2 in 0..ra2 {
                            let av = ac.get(aa, i, j, aa2);
                            if av == 0.0 {
                                continue;
                            }
                            for ax2 in 0..rx2 {
                                let ubase = (i * rx2 + ax2) * ra * ry + aa * ry;
                                let wbase = ((j * ra2 + aa2) * rx2 + ax2) * ry;
                                for ay in 0..ry {
                                    w[wbase + ay] += av * u[ubase + ay];
                                }
                            }
                        }
                    }
                }
            }
            // Step 3: T'(ax2, aA2, ay2) = sum_{ay,j} y(ay, j, ay2) W(j, aA2, ax2, ay)
            let mut t2 = vec![0.0f64; rx2 * ra2 * ry2];
            for ay in 0..ry {
                for j in 0..yc.n {
                    for ay2 in 0..ry2 {
                        let yv = yc.get(ay, j, ay2);
                        if yv == 0.0 {
                            continue;
                        }
                        for aa2 in 0..ra2 {
                            for ax2 in 0..rx2 {
                                let wv = w[((j * ra2 + aa2) * rx2 + ax2) * ry + ay];
                                t2[(ax2 * ra2 + aa2) * ry2 + ay2] += yv * wv;
                            }
                        }
                    }
                }
            }
            t = t2;
            rx = rx2;
            ra = ra2;
            ry = ry2;
        }
        Ok(t[0])
    }
}

fn advance(idx: &mut [usize], shape: &[usize]) {
    for l in (0..idx.len()).rev() {
        idx[l] += 1;
        if idx[l] < shape[l] {
            return;
        }
        idx[l] = 0;
    }
}
