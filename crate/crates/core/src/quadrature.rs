//! Gauss-Legendre quadrature and domain truncation for unbounded factors.

use crate::error::{Error, Result};

/// Quadrature rule on an interval `[a, b]`.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl Quadrature {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Legendre polynomial value and derivative at `x` via the three-term
/// recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre rule with `order` nodes on `[a, b]`, exact for
/// polynomials of degree `2*order - 1`. Nodes by Newton iteration on the
/// Legendre roots, which reaches machine precision for any practical order.
pub fn gauss_legendre(order: usize, a: f64, b: f64) -> Result<Quadrature> {
    if order == 0 {
        return Err(Error::InvalidInput("quadrature order must be >= 1".into()));
    }
    if !(a < b) {
        return Err(Error::InvalidInput(format!(
            "invalid interval [{a}, {b}]"
        )));
    }
    let n = order;
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    for i in 0..n {
        // Tricomi initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        if n == 1 {
            x = 0.0;
        } else {
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
        }
        let w = if n == 1 {
            2.0
        } else {
            let (_, dp) = legendre(n, x);
            2.0 / ((1.0 - x * x) * dp * dp)
        };
        // cos() above descends, store ascending.
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
    }
    // Affine map to [a, b].
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for (x, w) in nodes.iter_mut().zip(&mut weights) {
        *x = mid + half * *x;
        *w *= half;
    }
    Ok(Quadrature { nodes, weights, a, b })
}

/// Composite Gauss-Legendre mass of `w` over `[-gamma, gamma]`.
fn interval_mass(w: &dyn Fn(f64) -> f64, gamma: f64, panels: usize, order: usize) -> f64 {
    let mut total = 0.0;
    let width = 2.0 * gamma / panels as f64;
    for p in 0..panels {
        let lo = -gamma + p as f64 * width;
        let quad = gauss_legendre(order, lo, lo + width).expect("valid panel");
        total += quad.integrate(w);
    }
    total
}

/// Symmetric domain half-width `gamma` such that the mass of the
/// (unnormalized, nonnegative) univariate density `w` outside
/// `[-gamma, gamma]` is below `tail_tol` relative to its total mass.
///
/// Expands an outer bracket until the mass stops growing, then bisects.
pub fn truncate_domain(w: impl Fn(f64) -> f64, tail_tol: f64) -> Result<f64> {
    let w = &w as &dyn Fn(f64) -> f64;
    let mut outer = 1.0;
    let mut mass = interval_mass(w, outer, 16, 32);
    for _ in 0..60 {
        let next_outer = outer * 2.0;
        let next = interval_mass(w, next_outer, 32, 32);
        let converged = next > 0.0 && (next - mass).abs() <= 0.1 * tail_tol * next;
        outer = next_outer;
        mass = next;
        if converged {
            break;
        }
    }
    if mass <= 0.0 {
        return Err(Error::Degenerate("density has no detectable mass".into()));
    }
    let total = mass;
    let tail_ok = |g: f64| (total - interval_mass(w, g, 32, 32)) / total < tail_tol;
    let (mut lo, mut hi) = (1e-6, outer);
    if !tail_ok(hi) {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail_ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-6 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn order_one_is_midpoint() {
        let q = gauss_legendre(1, -1.0, 1.0).unwrap();
        assert_eq!(q.nodes, vec![0.0]);
        assert_eq!(q.weights, vec![2.0]);
    }

    #[test]
    fn order_two_integrates_x_squared() {
        let q = gauss_legendre(2, -1.0, 1.0).unwrap();
        let v = q.integrate(|x| x * x);
        assert!((v - 2.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn order_twenty_integrates_x38() {
        let q = gauss_legendre(20, -1.0, 1.0).unwrap();
        let v = q.integrate(|x| x.powi(38));
        assert_relative_eq!(v, 2.0 / 39.0, max_relative = 1e-13);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for order in [1, 2, 5, 17, 64, 120] {
            let q = gauss_legendre(order, -2.5, 3.5).unwrap();
            let sum: f64 = q.weights.iter().sum();
            assert_relative_eq!(sum, 6.0, max_relative = 1e-12);
            assert!(q.weights.iter().all(|&w| w > 0.0));
            assert!(q.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(q.nodes.iter().all(|&x| x > -2.5 && x < 3.5));
        }
    }

    #[test]
    fn exp_convergence_monotone() {
        let exact = 1.0f64.exp() - (-1.0f64).exp();
        let mut prev = f64::INFINITY;
        for order in 2..=20 {
            let q = gauss_legendre(order, -1.0, 1.0).unwrap();
            let err = (q.integrate(f64::exp) - exact).abs();
            // Monotone until the round-off floor.
            assert!(err <= prev || err < 5e-14, "order {order}: {err} vs {prev}");
            prev = err;
        }
        assert!(prev < 1e-14);
    }

    #[test]
    fn invalid_interval_rejected() {
        assert!(gauss_legendre(4, 1.0, 1.0).is_err());
        assert!(gauss_legendre(0, 0.0, 1.0).is_err());
    }

    #[test]
    fn truncate_domain_gaussian() {
        // Standard Gaussian: tail below 1e-10 needs gamma ~ 6.5.
        let gamma = truncate_domain(|x: f64| (-0.5 * x * x).exp(), 1e-10).unwrap();
        assert!(gamma > 6.0 && gamma < 7.5, "gamma = {gamma}");
    }
}
