//! End-to-end experiment pipelines shared by the CLI and the test suites:
//! build density, boundary measures, and bases from a run configuration,
//! assemble and solve, and drive the validation protocol.

use std::sync::Arc;

use crate::assembly::{assemble_problem, GalerkinProblem};
use crate::basis::{chebyshev_basis, density_orthogonal_basis, BasisSet};
use crate::config::{Experiment, RunConfig};
use crate::density::{
    double_well_density, gl_density, gl_kernel_eigensystem, gl_minimizer,
    gl_potential_gradient, hyperplane_boundary_measure, sphere_boundary_measure,
    BoundaryMeasure, DensityModel, KernelEigensystem, PotentialDescriptor,
};
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::solver::{solve, CommittorSolution};
use crate::validation::{
    isosurface_hitting_test, kmeans2, reactive_flow, relative_error_mc, solve_dw_reference,
    BallRegion, IsosurfaceSampling, ReactivePath, TrajectoryStats,
};

/// Everything needed to assemble and validate one configured experiment.
pub struct ExperimentSetup {
    pub density: DensityModel,
    pub pa: BoundaryMeasure,
    pub pb: BoundaryMeasure,
    pub phi: Vec<BasisSet>,
    /// Centers of the metastable regions (A then B).
    pub center_a: Vec<f64>,
    pub center_b: Vec<f64>,
    /// Kernel eigensystem (Ginzburg-Landau only).
    pub eigensystem: Option<KernelEigensystem>,
}

/// In-place potential gradient for the model behind a density.
pub fn gradient_fn(
    descriptor: &PotentialDescriptor,
) -> Result<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>> {
    match descriptor {
        PotentialDescriptor::DoubleWell { .. } => Ok(Arc::new(|x, g| {
            g[0] = 4.0 * x[0] * (x[0] * x[0] - 1.0);
            for k in 1..x.len() {
                g[k] = 0.6 * x[k];
            }
        })),
        PotentialDescriptor::GinzburgLandau { lambda, h, .. } => {
            let (lambda, h) = (*lambda, *h);
            Ok(Arc::new(move |x, g| {
                g.copy_from_slice(&gl_potential_gradient(x, lambda, h));
            }))
        }
        PotentialDescriptor::Custom => Err(Error::Unsupported(
            "no closed-form gradient for custom potentials".into(),
        )),
    }
}

/// Build the density, boundary measures, and committor bases for a run.
pub fn build_experiment(cfg: &RunConfig) -> Result<ExperimentSetup> {
    let d = cfg.dimension;
    let beta = cfg.beta();
    let quad = gauss_legendre(cfg.quad_order, -cfg.gamma, cfg.gamma)?;
    let quads = vec![quad.clone(); d];
    match cfg.experiment {
        Experiment::DoubleWell => {
            let density = double_well_density(d, beta, &quads)?;
            let pa =
                hyperplane_boundary_measure(0, cfg.boundary_offset_a, cfg.boundary_sigma, &quads)?;
            let pb =
                hyperplane_boundary_measure(0, cfg.boundary_offset_b, cfg.boundary_sigma, &quads)?;
            let phi: Vec<BasisSet> = (0..d)
                .map(|k| {
                    let w = density.univariate_factor(k)?.to_vec();
                    density_orthogonal_basis(&w, cfg.basis_size, &quad)
                })
                .collect::<Result<_>>()?;
            let mut center_a = vec![0.0; d];
            let mut center_b = vec![0.0; d];
            center_a[0] = cfg.boundary_offset_a;
            center_b[0] = cfg.boundary_offset_b;
            Ok(ExperimentSetup {
                density,
                pa,
                pb,
                phi,
                center_a,
                center_b,
                eigensystem: None,
            })
        }
        Experiment::GinzburgLandau => {
            let eig = gl_kernel_eigensystem(
                cfg.gl_lambda,
                beta,
                cfg.gl_coupling_h,
                cfg.gamma,
                &quad,
                cfg.gl_truncation,
            )?;
            let density = gl_density(&eig, d, cfg.gl_n_cheb, &quad)?;
            let u_plus = gl_minimizer(d, cfg.gl_lambda, cfg.gl_coupling_h)?;
            let u_minus: Vec<f64> = u_plus.iter().map(|v| -v).collect();
            let pa = sphere_boundary_measure(&u_minus, cfg.ball_radius, &quads)?;
            let pb = sphere_boundary_measure(&u_plus, cfg.ball_radius, &quads)?;
            let phi: Vec<BasisSet> = (0..d)
                .map(|_| chebyshev_basis(cfg.basis_size - 1, cfg.gamma, &quad))
                .collect::<Result<_>>()?;
            Ok(ExperimentSetup {
                density,
                pa,
                pb,
                phi,
                center_a: u_minus,
                center_b: u_plus,
                eigensystem: Some(eig),
            })
        }
    }
}

/// Assemble the Galerkin problem for a setup at the first penalty weight.
pub fn assemble_experiment(cfg: &RunConfig, setup: &ExperimentSetup) -> Result<GalerkinProblem> {
    assemble_problem(
        &setup.density,
        &setup.pa,
        &setup.pb,
        &setup.phi,
        cfg.solver.rho_schedule[0],
    )
}

/// Assemble and run the ALS solve.
pub fn solve_experiment(
    cfg: &RunConfig,
    setup: &ExperimentSetup,
) -> Result<(CommittorSolution, GalerkinProblem)> {
    let problem = assemble_experiment(cfg, setup)?;
    let solution = solve(&problem, &setup.phi, &cfg.solver)?;
    Ok((solution, problem))
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Everything the validation protocol produced for one run.
#[derive(Debug, Default)]
pub struct ValidationOutput {
    pub metrics: Vec<MetricRow>,
    pub hitting: Option<TrajectoryStats>,
    /// Centroid-line projections of the isosurface samples.
    pub theta: Option<Vec<f64>>,
    pub reactive_path: Option<ReactivePath>,
}

impl ValidationOutput {
    pub fn all_pass(&self) -> bool {
        self.metrics.iter().all(|m| m.pass)
    }
}

fn push_metric(out: &mut ValidationOutput, metric: &str, value: f64, tolerance: f64) {
    out.metrics.push(MetricRow {
        metric: metric.to_string(),
        value,
        tolerance,
        pass: value.abs() <= tolerance,
    });
}

/// Run the configured validation checks for a solved experiment.
pub fn run_validation(
    cfg: &RunConfig,
    setup: &ExperimentSetup,
    solution: &CommittorSolution,
    problem: &GalerkinProblem,
) -> Result<ValidationOutput> {
    let mut out = ValidationOutput::default();
    let beta = cfg.beta();
    let p = problem.with_rho(solution.final_rho);
    push_metric(
        &mut out,
        "boundary_fidelity_a",
        p.boundary_a_error(&solution.q)?,
        1e-2,
    );
    push_metric(
        &mut out,
        "boundary_fidelity_b",
        p.boundary_b_error(&solution.q)?,
        1e-2,
    );

    if cfg.validate_relative_error {
        if cfg.experiment != Experiment::DoubleWell {
            return Err(Error::Unsupported(
                "relative-error validation needs the double-well 1D reference".into(),
            ));
        }
        let reference = solve_dw_reference(beta, 100_001)?;
        let q = |x: &[f64]| solution.eval_q(x);
        let est = relative_error_mc(&q, &reference, &setup.density, cfg.mc_samples, cfg.seed)?;
        push_metric(&mut out, "relative_error_mc", est.value, 1e-3);
        push_metric(&mut out, "relative_error_mc_std_err", est.std_err, 1e-3);
    }

    if cfg.validate_isosurface {
        let grad = gradient_fn(&setup.density.descriptor)?;
        let grad_ref: &(dyn Fn(&[f64], &mut [f64]) + Sync) = &*grad;
        let q = |x: &[f64]| solution.eval_q(x);
        let region_a = BallRegion {
            center: setup.center_a.clone(),
            radius: cfg.ball_radius,
        };
        let region_b = BallRegion {
            center: setup.center_b.clone(),
            radius: cfg.ball_radius,
        };
        let sampling = IsosurfaceSampling {
            x0: vec![0.0; cfg.dimension],
            burn_in: cfg.iso_burn_in,
            thinning: cfg.iso_thinning,
            step_budget: cfg.iso_step_budget,
        };
        let stats = isosurface_hitting_test(
            &q,
            grad_ref,
            beta,
            cfg.iso_eps,
            cfg.iso_n_s,
            cfg.iso_n_t,
            &region_a,
            &region_b,
            cfg.dt,
            &sampling,
            cfg.max_steps,
            cfg.seed,
        )?;
        push_metric(
            &mut out,
            "isosurface_grand_mean_minus_half",
            stats.grand_mean - 0.5,
            stats.ci_half_width,
        );
        out.metrics.push(MetricRow {
            metric: "isosurface_empirical_std".into(),
            value: stats.empirical_std,
            tolerance: stats.theoretical_std,
            pass: stats.empirical_std >= 0.6 * stats.theoretical_std
                && stats.empirical_std <= 1.6 * stats.theoretical_std,
        });
        // Cluster the isosurface samples and project onto the centroid line.
        if stats.start_points.len() >= 2 {
            let km = kmeans2(&stats.start_points, cfg.seed)?;
            out.theta = Some(km.theta);
        }
        // One reactive transition path, started on the A-to-B segment where
        // q first reaches ~0.1.
        let path = reactive_path_from_segment(cfg, setup, solution, beta)?;
        out.reactive_path = path;
        out.hitting = Some(stats);
    }
    Ok(out)
}

/// Locate q = 0.1 on the straight segment from A's center to B's center by
/// bisection, then integrate the reactive flow up to q = 0.9.
fn reactive_path_from_segment(
    cfg: &RunConfig,
    setup: &ExperimentSetup,
    solution: &CommittorSolution,
    beta: f64,
) -> Result<Option<ReactivePath>> {
    let d = cfg.dimension;
    let at = |t: f64| -> Vec<f64> {
        (0..d)
            .map(|k| setup.center_a[k] + t * (setup.center_b[k] - setup.center_a[k]))
            .collect()
    };
    let qt = |t: f64| -> Result<f64> { solution.eval_q(&at(t)) };
    let (mut lo, mut hi) = (0.0, 0.5);
    if qt(lo)? > 0.1 || qt(hi)? < 0.1 {
        return Ok(None);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if qt(mid)? < 0.1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x0 = at(hi);
    let q = |x: &[f64]| solution.eval_q(x);
    let grad_q = |x: &[f64]| solution.eval_q_gradient(x);
    let density = &setup.density;
    let p = |x: &[f64]| density.log_density(x).exp();
    Ok(Some(reactive_flow(&q, &grad_q, &p, beta, &x0, 0.9)?))
}

// ---- 1D cross-checks --------------------------------------------------

/// ALS solve of the 1D double-well soft problem side by side with a direct
/// finite-difference solve of the same penalized equation.
#[derive(Debug)]
pub struct D1Comparison {
    pub grid: Vec<f64>,
    pub q_als: Vec<f64>,
    pub q_fd: Vec<f64>,
    /// Relative L2(p) distance over the grid, weighted by the equilibrium
    /// density (the norm in which the Galerkin solve is posed).
    pub l2_error: f64,
    pub fd: crate::validation::ReferenceSolution1D,
}

/// Solve the d = 1 double-well problem with Gaussian hyperplane measures at
/// +-1 by ALS and by finite differences, at a single penalty weight.
pub fn d1_soft_comparison(beta: f64, sigma: f64, rho: f64) -> Result<D1Comparison> {
    let cfg = RunConfig::from_text(&format!(
        "experiment = double_well\ndimension = 1\ntemperature = {}\n\
         boundary.sigma = {sigma}\nsolver.rho_schedule = {},{},{rho}\n",
        1.0 / beta,
        rho * 1e-2,
        rho * 1e-1,
    ))?;
    let setup = build_experiment(&cfg)?;
    let (sol, _) = solve_experiment(&cfg, &setup)?;
    let v1 = |x: f64| (x * x - 1.0) * (x * x - 1.0);
    let v1p = |x: f64| 4.0 * x * (x * x - 1.0);
    let norm = (2.0 * std::f64::consts::PI).sqrt().recip() / sigma;
    let pa = move |x: f64| norm * (-0.5 * ((x + 1.0) / sigma).powi(2)).exp();
    let pb = move |x: f64| norm * (-0.5 * ((x - 1.0) / sigma).powi(2)).exp();
    let fd = crate::validation::soft_committor_1d_fd(
        v1, v1p, beta, pa, pb, rho, -cfg.gamma, cfg.gamma, 8001,
    )?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut q_als = Vec::with_capacity(fd.grid.len());
    for (&x, &qf) in fd.grid.iter().zip(&fd.values) {
        let qa = sol.eval_q(&[x])?;
        let w = (-beta * v1(x)).exp();
        num += w * (qa - qf) * (qa - qf);
        den += w * qf * qf;
        q_als.push(qa);
    }
    Ok(D1Comparison {
        grid: fd.grid.clone(),
        q_als,
        q_fd: fd.values.clone(),
        l2_error: (num / den.max(f64::MIN_POSITIVE)).sqrt(),
        fd,
    })
}

// ---- dense brute-force oracle ----------------------------------------

/// Maximal relative discrepancy between the assembled operators and a
/// brute-force dense Galerkin assembly from refined-quadrature univariate
/// integrals, at `d = 3` with 4 basis functions per dimension and random
/// rank-2 density and measure TTs. Exercises the energy MPO, both penalty
/// MPOs, and the linear term.
pub fn dense_assembly_oracle(seed: u64) -> Result<f64> {
    use crate::assembly::{
        build_energy_mpo, build_linear_term, build_penalty_mpo, compute_integral_tables,
    };
    use crate::basis::fourier_basis;
    use crate::tt::TensorTrain;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let (d, l, k) = (3usize, 4usize, 4usize);
    let quad = gauss_legendre(64, -1.0, 1.0)?;
    let phi: Vec<BasisSet> = (0..d)
        .map(|_| fourier_basis(l, 1.0, &quad))
        .collect::<Result<_>>()?;
    let psi: Vec<BasisSet> = (0..d)
        .map(|_| chebyshev_basis(k - 1, 1.0, &quad))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranks = [1usize, 2, 2, 1];
    let ptt = TensorTrain::random(&[k; 3], &ranks, &mut rng)?;
    let att = TensorTrain::random(&[k; 3], &ranks, &mut rng)?;
    let btt = TensorTrain::random(&[k; 3], &ranks, &mut rng)?;
    let density = DensityModel {
        tt: ptt.clone(),
        bases: psi.clone(),
        beta: 1.0,
        descriptor: PotentialDescriptor::Custom,
        log_density: Arc::new(|_| 0.0),
    };
    let tables = compute_integral_tables(&phi, &psi, &psi, &psi)?;
    let energy = build_energy_mpo(&density, &tables)?;
    let ha = build_penalty_mpo(&att, &tables.a_tables)?;
    let hb = build_penalty_mpo(&btt, &tables.b_tables)?;
    let lin = build_linear_term(&btt, &tables.j_tables)?;

    // Independent side: refined quadrature, closed-form evaluators, dense
    // coefficient tensors.
    let fine = gauss_legendre(96, -1.0, 1.0)?;
    let int3 = |m: usize, i: usize, j: usize, deriv: bool| -> f64 {
        fine.integrate(|x| {
            let w = psi[0].eval(m, x);
            let (a, b) = if deriv {
                (phi[0].eval_deriv(i, x), phi[0].eval_deriv(j, x))
            } else {
                (phi[0].eval(i, x), phi[0].eval(j, x))
            };
            w * a * b
        })
    };
    let int2 = |m: usize, i: usize| -> f64 {
        fine.integrate(|x| psi[0].eval(m, x) * phi[0].eval(i, x))
    };
    let t_val: Vec<f64> = (0..k * l * l)
        .map(|idx| int3(idx / (l * l), (idx / l) % l, idx % l, false))
        .collect();
    let t_der: Vec<f64> = (0..k * l * l)
        .map(|idx| int3(idx / (l * l), (idx / l) % l, idx % l, true))
        .collect();
    let t_lin: Vec<f64> = (0..k * l).map(|idx| int2(idx / l, idx % l)).collect();
    let tv = |m: usize, i: usize, j: usize| t_val[(m * l + i) * l + j];
    let td = |m: usize, i: usize, j: usize| t_der[(m * l + i) * l + j];

    let pd = ptt.to_dense()?;
    let ad = att.to_dense()?;
    let bd = btt.to_dense()?;
    let n = l * l * l;
    let dense_from = |coeffs: &crate::dense::DenseTensor, with_energy: bool| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for mi in coeffs.indices() {
            let c = coeffs.get(&mi);
            for row in 0..n {
                let i = [row / (l * l), (row / l) % l, row % l];
                for col in 0..n {
                    let j = [col / (l * l), (col / l) % l, col % l];
                    if with_energy {
                        let mut acc = 0.0;
                        for kk in 0..d {
                            let mut term = c;
                            for dd in 0..d {
                                term *= if dd == kk {
                                    td(mi[dd], i[dd], j[dd])
                                } else {
                                    tv(mi[dd], i[dd], j[dd])
                                };
                            }
                            acc += term;
                        }
                        m[(row, col)] += acc;
                    } else {
                        let mut term = c;
                        for dd in 0..d {
                            term *= tv(mi[dd], i[dd], j[dd]);
                        }
                        m[(row, col)] += term;
                    }
                }
            }
        }
        m
    };
    let energy_ref = dense_from(&pd, true);
    let ha_ref = dense_from(&ad, false);
    let hb_ref = dense_from(&bd, false);
    let mut lin_ref = vec![0.0; n];
    for mi in bd.indices() {
        let c = bd.get(&mi);
        for (row, entry) in lin_ref.iter_mut().enumerate() {
            let i = [row / (l * l), (row / l) % l, row % l];
            *entry +=
                c * t_lin[mi[0] * l + i[0]] * t_lin[mi[1] * l + i[1]] * t_lin[mi[2] * l + i[2]];
        }
    }

    let rel = |got: &DMatrix<f64>, want: &DMatrix<f64>| -> f64 {
        let diff = (got - want).norm();
        diff / want.norm().max(f64::MIN_POSITIVE)
    };
    let cap = 1 << 20;
    let mut worst = rel(&energy.to_dense_matrix(cap)?, &energy_ref);
    worst = worst.max(rel(&ha.to_dense_matrix(cap)?, &ha_ref));
    worst = worst.max(rel(&hb.to_dense_matrix(cap)?, &hb_ref));
    let lin_dense = lin.to_dense()?;
    let lin_diff: f64 = lin_dense
        .data
        .iter()
        .zip(&lin_ref)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let lin_norm: f64 = lin_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
    worst = worst.max(lin_diff / lin_norm.max(f64::MIN_POSITIVE));
    Ok(worst)
}
