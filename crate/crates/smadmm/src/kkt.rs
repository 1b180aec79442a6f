//! Stationarity diagnostics. A point (x, y, lambda) is measured by the
//! squared distance of zero from the Lagrangian optimality stack:
//!
//! ```text
//! dual^2 = ||A'lambda - grad F(x)||^2
//! prox^2 = dist^2(B'lambda, dh(y))
//! feas^2 = ||A x + B y - c||^2
//! ```
//!
//! and their sum is the reported residual. The exact gradient is generally
//! unavailable online, so the gradient slot can be filled with the exact
//! field (reference problems), the solver's own estimate v, or a large-batch
//! sample mean drawn from the diagnostic stream.

use crate::error::{Error, Result};
use crate::linalg;
use crate::prox::l1_coordinate_distance;
use crate::solver::{IterateLog, Problem};

/// How the gradient slot of the dual residual is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Exact gradient of the expectation; needs a reference field.
    Exact,
    /// The solver's running estimate; an estimate of the residual, not the
    /// definition.
    SurrogateV,
    /// Mean of this many samples from the diagnostic stream.
    LargeBatch(usize),
}

/// Squared residual components. `prox_sq` is `None` when the regularizer has
/// no subgradient-distance routine (reported as missing rather than zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub dual_sq: f64,
    pub prox_sq: Option<f64>,
    pub feas_sq: f64,
}

impl KktResidual {
    pub fn total_sq(&self) -> Option<f64> {
        self.prox_sq.map(|p| self.dual_sq + p + self.feas_sq)
    }
}

/// Evaluates the three residual components at (x, y, lambda).
pub fn kkt_residual(
    problem: &mut Problem,
    x: &[f64],
    y: &[f64],
    lambda: &[f64],
    v: &[f64],
    mode: GradMode,
) -> Result<KktResidual> {
    let grad = match mode {
        GradMode::Exact => problem.oracle.exact_gradient(x).ok_or_else(|| {
            Error::Unsupported("exact stationarity needs a reference gradient field".into())
        })?,
        GradMode::SurrogateV => v.to_vec(),
        GradMode::LargeBatch(m) => problem.oracle.diagnostic_gradient(x, m)?,
    };
    let at_lambda = problem.a_map.adjoint_apply(lambda)?;
    let dual_sq = linalg::dist_sq(&at_lambda, &grad);

    let bt_lambda = problem.b_map.adjoint_apply(lambda)?;
    let prox_sq = problem
        .h
        .subgrad_distance(&bt_lambda, y)
        .map(|d| d * d);

    let res = problem.constraint_residual(x, y)?;
    let feas_sq = linalg::norm_sq(&res);

    Ok(KktResidual {
        dual_sq,
        prox_sq,
        feas_sq,
    })
}

/// Euclidean distance from w to the subdifferential of tau ||.||_1 at y.
pub fn l1_subgrad_dist(w: &[f64], y: &[f64], tau: f64) -> f64 {
    debug_assert_eq!(w.len(), y.len());
    w.iter()
        .zip(y)
        .map(|(&wi, &yi)| l1_coordinate_distance(wi, yi, tau).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Per-iteration margins of the two stationarity upper bounds along a
/// recorded trajectory:
///
/// ```text
/// ||A'lambda_k - grad F(x_k)||^2
///     <= 3 ||v_{k-1} - grad F(x_{k-1})||^2
///        + 3 (L^2 + eta_{k-1}^2 phi_max^2) ||x_k - x_{k-1}||^2
/// dist^2(B'lambda_k, dh(y_k))
///     <= 2 rho_{k-1}^2 ||B||^2 ||A||^2 ||x_k - x_{k-1}||^2
///        + 2 sigma_max(H_{k-1})^2 ||y_k - y_{k-1}||^2
/// ```
///
/// Needs exact reference gradients. Report-only.
#[derive(Debug, Clone)]
pub struct BoundsReport {
    /// (iteration, dual-bound margin, prox-bound margin); nonnegative margins
    /// mean the bound held.
    pub rows: Vec<(usize, f64, f64)>,
    pub violations: usize,
}

pub struct BoundsInputs {
    pub lipschitz: f64,
    pub phi_max: f64,
    pub norm_a: f64,
    pub norm_b: f64,
}

pub fn stationarity_bounds_check(
    problem: &Problem,
    log: &IterateLog,
    inputs: &BoundsInputs,
) -> Result<BoundsReport> {
    let steps = log.steps();
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "bounds check needs a recorded run".into(),
        ));
    }
    let slack = 1e-8;
    let mut rows = Vec::with_capacity(steps);
    let mut violations = 0;
    for k in 1..=steps {
        let params = log.params[k - 1];
        let dx_sq = linalg::dist_sq(&log.x[k], &log.x[k - 1]);
        let dy_sq = linalg::dist_sq(&log.y[k], &log.y[k - 1]);

        let grad_prev = problem
            .oracle
            .exact_gradient(&log.x[k - 1])
            .ok_or_else(|| Error::Unsupported("bounds check needs exact gradients".into()))?;
        let grad_now = problem
            .oracle
            .exact_gradient(&log.x[k])
            .ok_or_else(|| Error::Unsupported("bounds check needs exact gradients".into()))?;
        let eps_prev_sq = linalg::dist_sq(&grad_prev, &log.v[k - 1]);

        let at_lambda = problem.a_map.adjoint_apply(&log.lambda[k])?;
        let dual_lhs = linalg::dist_sq(&at_lambda, &grad_now);
        let dual_rhs = 3.0 * eps_prev_sq
            + 3.0
                * (inputs.lipschitz * inputs.lipschitz
                    + params.eta * params.eta * inputs.phi_max * inputs.phi_max)
                * dx_sq;
        let dual_margin = dual_rhs - dual_lhs + slack * (1.0 + dual_rhs.abs());

        let bt_lambda = problem.b_map.adjoint_apply(&log.lambda[k])?;
        let prox_lhs = problem
            .h
            .subgrad_distance(&bt_lambda, &log.y[k])
            .map(|d| d * d)
            .ok_or_else(|| Error::Unsupported("regularizer has no subgradient distance".into()))?;
        let sigma_max_h = log.r_shift[k - 1] - params.rho * problem.b_gram_min();
        let prox_rhs = 2.0
            * params.rho
            * params.rho
            * inputs.norm_b
            * inputs.norm_b
            * inputs.norm_a
            * inputs.norm_a
            * dx_sq
            + 2.0 * sigma_max_h * sigma_max_h * dy_sq;
        let prox_margin = prox_rhs - prox_lhs + slack * (1.0 + prox_rhs.abs());

        if dual_margin < 0.0 || prox_margin < 0.0 {
            violations += 1;
        }
        rows.push((k, dual_margin, prox_margin));
    }
    Ok(BoundsReport { rows, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::oracle::{QuadraticLoss, StochasticOracle};
    use crate::prox::Regularizer;
    use crate::solver::ProxMetric;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn l1_distance_trivial_cases() {
        assert_eq!(l1_subgrad_dist(&[0.5], &[1.0], 0.5), 0.0);
        assert_eq!(l1_subgrad_dist(&[0.0], &[0.0], 0.5), 0.0);
        let d = l1_subgrad_dist(&[0.9, -0.2], &[0.0, 0.0], 0.5);
        assert!((d - 0.4).abs() < 1e-15);
    }

    /// Brute-force minimization over a grid of valid subgradients, 2-dim.
    #[test]
    fn l1_distance_matches_grid_search() {
        let tau = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let w = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            let y = [
                if rng.random::<f64>() < 0.5 { 0.0 } else { rng.random::<f64>() - 0.5 },
                if rng.random::<f64>() < 0.5 { 0.0 } else { rng.random::<f64>() - 0.5 },
            ];
            let fast = l1_subgrad_dist(&w, &y, tau);
            // enumerate subgradients on a 1000x1000 grid
            let grid = 1000;
            let mut best = f64::INFINITY;
            let candidates = |yi: f64| -> Vec<f64> {
                if yi != 0.0 {
                    vec![tau * yi.signum()]
                } else {
                    (0..=grid)
                        .map(|t| -tau + 2.0 * tau * t as f64 / grid as f64)
                        .collect()
                }
            };
            for g0 in candidates(y[0]) {
                for g1 in candidates(y[1]) {
                    let d = ((w[0] - g0).powi(2) + (w[1] - g1).powi(2)).sqrt();
                    best = best.min(d);
                }
            }
            assert!(
                (fast - best).abs() <= 1e-3,
                "fast {fast} vs grid {best} for w {w:?} y {y:?}"
            );
        }
    }

    fn tiny_problem(h: Regularizer) -> Problem {
        let p = DenseMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.5]]).unwrap();
        let loss = Arc::new(QuadraticLoss {
            p,
            q: vec![1.0, -0.5],
            lipschitz: 2.2,
        });
        Problem::consensus(
            StochasticOracle::deterministic(loss, 0),
            h,
            ProxMetric::Margin(0.05),
        )
        .unwrap()
    }

    #[test]
    fn zero_regularizer_consistent_multiplier_zeroes_two_terms() {
        let mut problem = tiny_problem(Regularizer::Zero);
        // feasible pair with lambda = 0: dh(y) = {0}, B'lambda = 0
        let x = vec![0.4, -0.2];
        let y = x.clone();
        let res = kkt_residual(&mut problem, &x, &y, &[0.0, 0.0], &[0.0, 0.0], GradMode::Exact)
            .unwrap();
        assert_eq!(res.prox_sq, Some(0.0));
        assert!(res.feas_sq < 1e-30);
        assert!(res.total_sq().unwrap() >= res.dual_sq);
    }

    /// Stationary point of a 2-dim quadratic + l1 composite found by an
    /// independent proximal-gradient iteration: the assembled multiplier
    /// zeroes the full residual.
    #[test]
    fn residual_vanishes_at_proximal_gradient_solution() {
        let tau = 0.3;
        let mut problem = tiny_problem(Regularizer::l1(tau).unwrap());
        let loss_grad = |x: &[f64]| problem.oracle.exact_gradient(x).unwrap();
        // proximal gradient on F + tau ||.||_1
        let step = 1.0 / 2.2;
        let mut x = vec![0.0, 0.0];
        for _ in 0..200_000 {
            let g = loss_grad(&x);
            let z: Vec<f64> = x.iter().zip(&g).map(|(&xi, &gi)| xi - step * gi).collect();
            let x_new: Vec<f64> = z
                .iter()
                .map(|&zi| crate::prox::soft_threshold(zi, step * tau))
                .collect();
            let moved = linalg::dist_sq(&x_new, &x);
            x = x_new;
            if moved < 1e-26 {
                break;
            }
        }
        // consensus multiplier: lambda = grad F(x*), y = x*
        let lambda = loss_grad(&x);
        let y = x.clone();
        let res =
            kkt_residual(&mut problem, &x, &y, &lambda, &lambda, GradMode::Exact).unwrap();
        assert!(res.total_sq().unwrap() <= 1e-12, "{res:?}");
    }

    #[test]
    fn feasibility_term_matches_dual_step_identity() {
        let mut problem = tiny_problem(Regularizer::l1(0.2).unwrap());
        let x = vec![0.3, 0.6];
        let y = vec![0.1, -0.2];
        let lambda = vec![0.05, -0.1];
        let rho = 2.0;
        let res = kkt_residual(&mut problem, &x, &y, &lambda, &lambda, GradMode::Exact).unwrap();
        let cres = problem.constraint_residual(&x, &y).unwrap();
        let lambda_new = crate::solver::lambda_update(&lambda, rho, &cres);
        let via_dual = linalg::dist_sq(&lambda_new, &lambda) / (rho * rho);
        assert!((res.feas_sq - via_dual).abs() <= 1e-12 * (1.0 + res.feas_sq));
    }

    #[test]
    fn exact_mode_requires_reference_and_surrogate_does_not() {
        let mut problem = tiny_problem(Regularizer::Zero);
        let x = vec![0.0, 0.0];
        // the quadratic oracle has an exact field, so Exact works
        assert!(
            kkt_residual(&mut problem, &x, &x, &[0.0; 2], &[0.0; 2], GradMode::Exact).is_ok()
        );
        let res =
            kkt_residual(&mut problem, &x, &x, &[0.0; 2], &[1.0, 1.0], GradMode::SurrogateV)
                .unwrap();
        // surrogate uses v, so the dual term is ||0 - v||^2 = 2
        assert!((res.dual_sq - 2.0).abs() < 1e-15);
    }

    fn recorded_run(
        sigma: f64,
        iters: usize,
    ) -> (Problem, crate::solver::IterateLog, BoundsInputs) {
        use crate::solver::{run, RunOptions, XUpdate};
        let p = DenseMatrix::from_rows(&[vec![1.8, 0.2], vec![0.2, 1.2]]).unwrap();
        let loss = Arc::new(QuadraticLoss {
            p,
            q: vec![0.7, -0.2],
            lipschitz: 1.9,
        });
        let oracle = if sigma > 0.0 {
            StochasticOracle::streaming_gaussian(loss, sigma, 17).unwrap()
        } else {
            StochasticOracle::deterministic(loss, 17)
        };
        let mut problem = Problem::consensus(
            oracle,
            Regularizer::l1(0.15).unwrap(),
            ProxMetric::Margin(0.05),
        )
        .unwrap();
        let schedule = crate::schedules::Schedule::practical(crate::schedules::PracticalSchedule {
            rho: 1.0,
            eta: crate::schedules::EtaRule::Fixed(3.0),
            momentum: crate::schedules::MomentumRule::Fixed(0.4),
            init_batch: 1,
        })
        .unwrap();
        let opts = RunOptions {
            x_update: XUpdate::Linearized,
            diag_interval: 0,
            grad_mode: GradMode::SurrogateV,
            record_iterates: true,
            ..RunOptions::default()
        };
        let out = run(&mut problem, &schedule, iters, &opts).unwrap();
        // linearized metric: phi_max = lambda_max(I - (rho/eta) A'A) with
        // A = I, so phi_max = 1 - rho/eta at most 1
        let inputs = BoundsInputs {
            lipschitz: 1.9,
            phi_max: 1.0,
            norm_a: 1.0,
            norm_b: 1.0,
        };
        (problem, out.iterates.unwrap(), inputs)
    }

    /// Both stationarity upper bounds hold on every recorded iteration of a
    /// deterministic run.
    #[test]
    fn stationarity_bounds_hold_deterministically() {
        let (problem, log, inputs) = recorded_run(0.0, 300);
        let report = stationarity_bounds_check(&problem, &log, &inputs).unwrap();
        assert_eq!(report.violations, 0, "{:?}", report.rows.iter().take(5).collect::<Vec<_>>());
        assert_eq!(report.rows.len(), 300);
    }

    /// The bounds are pathwise, so they also hold along stochastic runs when
    /// evaluated against the exact reference gradient.
    #[test]
    fn stationarity_bounds_hold_on_stochastic_runs() {
        let (problem, log, inputs) = recorded_run(0.5, 300);
        let report = stationarity_bounds_check(&problem, &log, &inputs).unwrap();
        assert_eq!(report.violations, 0);
    }

    /// Frozen iterates at an exact stationary point with no estimation error
    /// reduce both sides of both bounds to zero.
    #[test]
    fn stationarity_bounds_degenerate_at_stationary_freeze() {
        use crate::linalg::LuFactors;
        let p = DenseMatrix::from_rows(&[vec![1.8, 0.2], vec![0.2, 1.2]]).unwrap();
        let q = vec![0.7, -0.2];
        let loss = Arc::new(QuadraticLoss {
            p: p.clone(),
            q: q.clone(),
            lipschitz: 1.9,
        });
        let problem = Problem::consensus(
            StochasticOracle::deterministic(loss, 0),
            Regularizer::Zero,
            ProxMetric::Margin(0.05),
        )
        .unwrap();
        // unregularized minimizer: grad F = 0, lambda = 0 is consistent with
        // the zero regularizer's subdifferential {0}
        let x_star = LuFactors::factor(&p).unwrap().solve(&q).unwrap();
        let zero = vec![0.0; 2];
        let log = crate::solver::IterateLog {
            x: vec![x_star.clone(), x_star.clone()],
            y: vec![x_star.clone(), x_star.clone()],
            lambda: vec![zero.clone(), zero.clone()],
            v: vec![zero.clone(), zero.clone()],
            params: vec![crate::schedules::IterationParams {
                rho: 1.0,
                eta: 3.0,
                a: 0.5,
                nu: 1.0,
                gamma: 0.0,
            }],
            r_shift: vec![1.05],
        };
        let inputs = BoundsInputs {
            lipschitz: 1.9,
            phi_max: 1.0,
            norm_a: 1.0,
            norm_b: 1.0,
        };
        let report = stationarity_bounds_check(&problem, &log, &inputs).unwrap();
        assert_eq!(report.rows.len(), 1);
        let (_, dual_margin, prox_margin) = report.rows[0];
        // both right-hand sides are exactly zero, so the margins reduce to
        // the slack; both left-hand sides vanish at machine precision
        assert!((dual_margin - 1e-8).abs() <= 1e-10, "{dual_margin}");
        assert!((prox_margin - 1e-8).abs() <= 1e-10, "{prox_margin}");
    }

    /// Permuting coordinates consistently leaves the residual unchanged.
    #[test]
    fn residual_invariant_under_coordinate_permutation() {
        let p = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let loss = Arc::new(QuadraticLoss {
            p: p.clone(),
            q: vec![1.0, -2.0],
            lipschitz: 2.0,
        });
        let mut problem = Problem::consensus(
            StochasticOracle::deterministic(loss, 0),
            Regularizer::l1(0.4).unwrap(),
            ProxMetric::Margin(0.05),
        )
        .unwrap();
        let x = vec![0.7, -0.3];
        let y = vec![0.5, 0.0];
        let lambda = vec![0.2, -0.6];
        let r1 = kkt_residual(&mut problem, &x, &y, &lambda, &lambda, GradMode::Exact).unwrap();

        // permuted problem: swap the two coordinates everywhere
        let pp = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let loss_p = Arc::new(QuadraticLoss {
            p: pp,
            q: vec![-2.0, 1.0],
            lipschitz: 2.0,
        });
        let mut problem_p = Problem::consensus(
            StochasticOracle::deterministic(loss_p, 0),
            Regularizer::l1(0.4).unwrap(),
            ProxMetric::Margin(0.05),
        )
        .unwrap();
        let swap = |v: &[f64]| vec![v[1], v[0]];
        let r2 = kkt_residual(
            &mut problem_p,
            &swap(&x),
            &swap(&y),
            &swap(&lambda),
            &swap(&lambda),
            GradMode::Exact,
        )
        .unwrap();
        assert!((r1.dual_sq - r2.dual_sq).abs() < 1e-12);
        assert_eq!(r1.prox_sq, r2.prox_sq);
        assert!((r1.feas_sq - r2.feas_sq).abs() < 1e-12);
    }
}
