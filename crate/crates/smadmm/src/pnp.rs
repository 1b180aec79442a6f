//! Plug-and-play layer: the proximal y-update is replaced by a denoiser.
//!
//! The gradient-step denoiser D = I - grad g with a contractive grad g
//! (constant below one) is exactly the proximal operator of the weakly
//! convex potential
//!
//! ```text
//! phi(x) = g(D^{-1}(x)) - 0.5 ||D^{-1}(x) - x||^2     for x in Im(D),
//! ```
//!
//! so a consensus run with such a denoiser minimizes F + r phi and all the
//! stationarity machinery still applies. Analytic (quadratic) potentials are
//! provided; neural denoisers can be bridged through the same trait without
//! touching the loop.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::kkt::GradMode;
use crate::linalg::{self, DenseMatrix, LuFactors};
use crate::oracle::StochasticOracle;
use crate::prox::Regularizer;
use crate::schedules::Schedule;
use crate::solver::{GradientEstimator, MomentumDriver, RunStatus, SolverState, Trace, TraceRow};

/// Inner fixed-point inversion bounds for D^{-1}.
const INVERT_MAX_ITERS: usize = 500;
const INVERT_TOL: f64 = 1e-10;

/// Differentiable potential g whose gradient step defines the denoiser.
pub trait DenoiserPotential: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn dim(&self) -> usize;
    /// Lipschitz constant of the gradient; must be < 1 for the fixed-point
    /// inversion and the prox interpretation.
    fn gradient_lipschitz(&self) -> f64;
}

/// g = 0: the denoiser is the identity.
pub struct ZeroPotential {
    pub dim: usize,
}

impl DenoiserPotential for ZeroPotential {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn gradient_lipschitz(&self) -> f64 {
        0.0
    }
}

/// g(x) = 0.5 x'Mx with symmetric M, ||M|| < 1. The scalar shrink
/// D(z) = (1 - c) z is the 1x1 case.
pub struct QuadraticPotential {
    m: DenseMatrix,
    norm: f64,
}

impl QuadraticPotential {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::InvalidArgument(
                "potential curvature matrix must be square".into(),
            ));
        }
        let norm = crate::linops::operator_norm(&crate::linops::LinearMap::dense(m.clone()))?;
        if norm >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "gradient-step potential needs ||M|| < 1, got {norm}"
            )));
        }
        Ok(Self { m, norm })
    }

    pub fn scalar(c: f64) -> Result<Self> {
        Self::new(DenseMatrix::from_rows(&[vec![c]]).unwrap())
    }

    /// Hessian of the induced potential phi: with S = (I - M)^{-1},
    /// hess phi = S M S - (S - I)^2.
    pub fn phi_hessian(&self) -> Result<DenseMatrix> {
        let n = self.m.rows();
        let mut i_minus_m = self.m.scaled(-1.0);
        i_minus_m.add_scaled_identity(1.0);
        let lu = LuFactors::factor(&i_minus_m)?;
        // S columnwise
        let mut s = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = lu.solve(&e)?;
            for i in 0..n {
                s.set(i, j, col[i]);
            }
            e[j] = 0.0;
        }
        let sms = s.matmul(&self.m).matmul(&s);
        let mut s_minus_i = s.clone();
        s_minus_i.add_scaled_identity(-1.0);
        let sq = s_minus_i.matmul(&s_minus_i);
        let mut out = sms;
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, out.get(i, j) - sq.get(i, j));
            }
        }
        Ok(out)
    }
}

impl DenoiserPotential for QuadraticPotential {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * linalg::dot(x, &self.m.matvec(x))
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.m.matvec(x)
    }
    fn dim(&self) -> usize {
        self.m.rows()
    }
    fn gradient_lipschitz(&self) -> f64 {
        self.norm
    }
}

/// Denoiser plugged into the y-slot of the consensus loop.
pub enum Denoiser {
    /// D = I - grad g.
    GradientStep(Arc<dyn DenoiserPotential>),
    /// Reference prox denoiser, D = prox of h at the given metric scale;
    /// reproduces the plain solver.
    ProxReference { h: Regularizer, scale: f64 },
}

impl Denoiser {
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Denoiser::GradientStep(g) => {
                let grad = g.gradient(z);
                Ok(linalg::sub(z, &grad))
            }
            Denoiser::ProxReference { h, scale } => h.prox(*scale, z),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Denoiser::GradientStep(g) => Some(g.dim()),
            Denoiser::ProxReference { .. } => None,
        }
    }
}

/// The potential phi implied by a gradient-step denoiser, evaluated through
/// the fixed-point inversion u <- x + grad g(u) (a contraction for
/// gradient Lipschitz constant < 1).
pub struct WeaklyConvexPotential {
    g: Arc<dyn DenoiserPotential>,
}

impl WeaklyConvexPotential {
    pub fn new(g: Arc<dyn DenoiserPotential>) -> Result<Self> {
        let lip = g.gradient_lipschitz();
        if lip >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "potential inversion needs gradient Lipschitz < 1, got {lip}"
            )));
        }
        Ok(Self { g })
    }

    /// Weak-convexity modulus L_g / (L_g + 1).
    pub fn modulus(&self) -> f64 {
        let l = self.g.gradient_lipschitz();
        l / (l + 1.0)
    }

    /// D^{-1}(x) by fixed-point iteration.
    pub fn invert(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut u = x.to_vec();
        for _ in 0..INVERT_MAX_ITERS {
            let grad = self.g.gradient(&u);
            let next: Vec<f64> = x.iter().zip(&grad).map(|(&xi, &gi)| xi + gi).collect();
            let moved = linalg::dist_sq(&next, &u).sqrt();
            u = next;
            if moved <= INVERT_TOL {
                return Ok(u);
            }
        }
        Err(Error::SpectralNoConvergence {
            iterations: INVERT_MAX_ITERS,
            estimate: f64::NAN,
            residual: INVERT_TOL,
        })
    }

    /// phi(x) = g(D^{-1} x) - 0.5 ||D^{-1} x - x||^2.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let u = self.invert(x)?;
        Ok(self.g.value(&u) - 0.5 * linalg::dist_sq(&u, x))
    }

    /// grad phi(x) = D^{-1}(x) - x on the image of D.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.invert(x)?;
        Ok(linalg::sub(&u, x))
    }
}

/// Safety report for a user-supplied potential: the analytic gradient is
/// checked against central differences and the gradient's Lipschitz constant
/// is estimated from random secants.
#[derive(Debug, Clone)]
pub struct PotentialCheck {
    pub max_gradient_error: f64,
    pub lipschitz_estimate: f64,
    /// Secant estimate at 0.9 or above: the contraction margin is thin and
    /// the fixed-point inversion may converge slowly.
    pub near_expansive: bool,
}

/// Validates a gradient-step potential on a sampling region of the given
/// radius. Errors when the secant estimate reaches one (the denoiser is no
/// longer a proximal map); flags estimates of 0.9 and above.
pub fn verify_denoiser_potential(
    g: &Arc<dyn DenoiserPotential>,
    radius: f64,
    seed: u64,
) -> Result<PotentialCheck> {
    let dim = g.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha20Rng| -> Vec<f64> {
        (0..dim)
            .map(|_| radius * (2.0 * rng.random::<f64>() - 1.0))
            .collect()
    };
    let mut max_gradient_error = 0.0f64;
    for _ in 0..20 {
        let x = point(&mut rng);
        let grad = g.gradient(&x);
        let fd = crate::oracle::finite_difference_gradient(&|p: &[f64]| g.value(p), &x, 1e-6);
        for (a, b) in grad.iter().zip(&fd) {
            max_gradient_error = max_gradient_error.max((a - b).abs() / (1.0 + a.abs()));
        }
    }
    if max_gradient_error > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "potential gradient disagrees with finite differences by {max_gradient_error:.2e}"
        )));
    }
    let mut lipschitz_estimate = 0.0f64;
    for _ in 0..100 {
        let u = point(&mut rng);
        let w = point(&mut rng);
        let du = linalg::dist_sq(&u, &w).sqrt();
        if du < 1e-12 {
            continue;
        }
        let slope = linalg::dist_sq(&g.gradient(&u), &g.gradient(&w)).sqrt() / du;
        lipschitz_estimate = lipschitz_estimate.max(slope);
    }
    if lipschitz_estimate >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "potential gradient is not a contraction: secant estimate {lipschitz_estimate:.4}"
        )));
    }
    Ok(PotentialCheck {
        max_gradient_error,
        lipschitz_estimate,
        near_expansive: lipschitz_estimate >= 0.9,
    })
}

/// Checks that u = D(z) minimizes 0.5 ||u' - z||^2 + phi(u') by sampling a
/// local neighborhood of u; returns the largest improvement found (zero up
/// to float noise when D really is the prox of phi).
pub fn verify_prox_property(
    denoiser: &Arc<dyn DenoiserPotential>,
    z: &[f64],
    seed: u64,
) -> Result<f64> {
    let phi = WeaklyConvexPotential::new(denoiser.clone())?;
    let grad = denoiser.gradient(z);
    let u = linalg::sub(z, &grad);
    let objective = |point: &[f64]| -> Result<f64> {
        Ok(0.5 * linalg::dist_sq(point, z) + phi.value(point)?)
    };
    let base = objective(&u)?;
    let mut best = base;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dim = u.len();
    for &radius in &[1e-4, 1e-3, 1e-2, 0.05] {
        // coordinate directions plus random ones
        for i in 0..dim {
            for sign in [-1.0, 1.0] {
                let mut cand = u.clone();
                cand[i] += sign * radius;
                best = best.min(objective(&cand)?);
            }
        }
        for _ in 0..32 {
            let mut dir: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
            let norm = linalg::norm(&dir);
            if norm == 0.0 {
                continue;
            }
            linalg::scale(radius / norm, &mut dir);
            let cand = linalg::add(&u, &dir);
            best = best.min(objective(&cand)?);
        }
    }
    Ok((base - best).max(0.0))
}

/// Which anchor feeds the denoiser. The direct form uses x - lambda/rho; the
/// averaged form keeps the relaxation toward the previous y that the plain
/// proximal update has, ((r - rho) y + rho (x - lambda/rho)) / r, and needs
/// r > rho.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnpAnchor {
    Direct,
    Averaged,
}

/// Consensus problem (x - y = 0) with a denoiser standing in for the
/// proximal operator; minimizes F + reg_weight * phi for gradient-step
/// denoisers.
pub struct PnpProblem {
    pub oracle: StochasticOracle,
    pub denoiser: Denoiser,
    /// Regularization weight r; also the metric shift of the averaged anchor.
    pub reg_weight: f64,
    pub anchor: PnpAnchor,
}

impl PnpProblem {
    pub fn new(
        oracle: StochasticOracle,
        denoiser: Denoiser,
        reg_weight: f64,
        anchor: PnpAnchor,
    ) -> Result<Self> {
        if reg_weight <= 0.0 {
            return Err(Error::InvalidArgument(
                "regularization weight must be positive".into(),
            ));
        }
        if let Some(d) = denoiser.dim() {
            if d != oracle.dim() {
                return Err(Error::DimensionMismatch {
                    expected: oracle.dim(),
                    got: d,
                    context: "denoiser dimension",
                });
            }
        }
        Ok(Self {
            oracle,
            denoiser,
            reg_weight,
            anchor,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PnpRunOptions {
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub lambda0: Option<Vec<f64>>,
    pub diag_interval: usize,
    pub grad_mode: GradMode,
    pub estimator_batch: usize,
}

impl Default for PnpRunOptions {
    fn default() -> Self {
        Self {
            x0: None,
            y0: None,
            lambda0: None,
            diag_interval: 1,
            grad_mode: GradMode::Exact,
            estimator_batch: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PnpRunOutput {
    pub state: SolverState,
    pub best_k: Option<usize>,
    pub best_kkt_sq: Option<f64>,
    pub trace: Trace,
    pub status: RunStatus,
}

/// Momentum loop with the denoiser in the y-slot:
///
/// ```text
/// y_{k+1} = D(anchor_k)
/// x_{k+1} = x_k - (1/eta)(v_k + rho (x_k - y_{k+1} - lambda/rho))
/// lambda_{k+1} = lambda_k - rho (x_{k+1} - y_{k+1})
/// ```
///
/// Stationarity is reported against F + r phi when the denoiser is a
/// gradient step (grad phi at y_{k+1} is anchor - y_{k+1}, available for
/// free) and against h when it is a reference prox.
pub fn pnp_run(
    problem: &mut PnpProblem,
    schedule: &Schedule,
    k_iters: usize,
    options: &PnpRunOptions,
) -> Result<PnpRunOutput> {
    if k_iters == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let n = problem.oracle.dim();
    let take = |opt: &Option<Vec<f64>>, what: &'static str| -> Result<Vec<f64>> {
        match opt {
            None => Ok(vec![0.0; n]),
            Some(v) if v.len() == n => Ok(v.clone()),
            Some(v) => Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
                context: what,
            }),
        }
    };
    let mut x = take(&options.x0, "x0")?;
    let mut y = take(&options.y0, "y0")?;
    let mut lambda = take(&options.lambda0, "lambda0")?;

    let mut driver = MomentumDriver::new(schedule.init_batch(), options.estimator_batch);
    let mut v = driver.init(&mut problem.oracle, &x)?;

    let mut trace = Trace::new("pnp_smadmm");
    let mut status = RunStatus::Completed;
    let mut best: Option<(usize, f64)> = None;

    for s in 1..=k_iters {
        let params = schedule.params_at(s)?;
        let rho = params.rho;
        let eta = params.eta;
        // consensus constraint: the linearized metric needs eta > rho
        if eta <= rho {
            return Err(Error::IndefiniteLinearizedMetric {
                required: rho,
                eta,
            });
        }
        // arithmetic mirrors the general consensus path operation for
        // operation, so a reference prox denoiser reproduces the plain
        // solver bitwise
        let neg_inv_rho = -1.0 / rho;
        let shifted_residual = |xs: &[f64], ys: &[f64], ls: &[f64]| -> Vec<f64> {
            let mut t: Vec<f64> = xs.iter().zip(ys).map(|(&xi, &yi)| xi + (-yi)).collect();
            for (ti, li) in t.iter_mut().zip(ls) {
                *ti += neg_inv_rho * li;
            }
            t
        };
        let anchor: Vec<f64> = match problem.anchor {
            PnpAnchor::Direct => x
                .iter()
                .zip(&lambda)
                .map(|(&xi, &li)| xi - li / rho)
                .collect(),
            PnpAnchor::Averaged => {
                let r = problem.reg_weight;
                if r <= rho {
                    return Err(Error::ScheduleRejected(format!(
                        "averaged anchor needs r > rho, got r = {r}, rho = {rho}"
                    )));
                }
                let inner = shifted_residual(&x, &y, &lambda);
                let alpha = -rho / r;
                let mut a = y.clone();
                for (ai, ii) in a.iter_mut().zip(&inner) {
                    *ai += alpha * -ii;
                }
                a
            }
        };
        let y_new = problem.denoiser.apply(&anchor)?;
        let inner = shifted_residual(&x, &y_new, &lambda);
        let mut x_new = x.clone();
        for i in 0..n {
            x_new[i] -= (v[i] + rho * inner[i]) / eta;
        }
        let residual: Vec<f64> = x_new
            .iter()
            .zip(&y_new)
            .map(|(&xi, &yi)| xi + (-yi))
            .collect();
        let feas_sq = linalg::norm_sq(&residual);
        let lambda_new: Vec<f64> = lambda
            .iter()
            .zip(&residual)
            .map(|(&l, &r)| l - rho * r)
            .collect();

        if !(linalg::all_finite(&x_new) && linalg::all_finite(&lambda_new)) {
            status = RunStatus::Diverged { iteration: s };
            trace.rows.push(TraceRow {
                k: s,
                rho,
                eta,
                a: params.a,
                objective: f64::NAN,
                aug_lagrangian: f64::NAN,
                kkt_sq: f64::NAN,
                feas_sq,
                dual_sq: f64::NAN,
                prox_sq: f64::NAN,
                oracle_queries: problem.oracle.queries(),
                invariant_flags: 0,
            });
            break;
        }

        let v_next = driver.update(&mut problem.oracle, &x_new, s, params.a)?;

        let diag_now =
            (options.diag_interval > 0 && s % options.diag_interval == 0) || s == k_iters;
        let (mut objective, mut kkt_sq, mut dual_sq, mut prox_sq) =
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        if diag_now {
            let grad = match options.grad_mode {
                GradMode::Exact => problem.oracle.exact_gradient(&x_new).ok_or_else(|| {
                    Error::Unsupported("exact stationarity needs a reference field".into())
                })?,
                GradMode::SurrogateV => v_next.clone(),
                GradMode::LargeBatch(m) => problem.oracle.diagnostic_gradient(&x_new, m)?,
            };
            // dual: ||grad F(x) - lambda||^2 (A = I)
            dual_sq = linalg::dist_sq(&grad, &lambda_new);
            // prox: dist(0, d(r phi)(y) + lambda) with grad phi(y) = anchor - y
            prox_sq = match &problem.denoiser {
                Denoiser::GradientStep(_) => {
                    let r = problem.reg_weight;
                    let mut acc = 0.0;
                    for i in 0..n {
                        let gphi = anchor[i] - y_new[i];
                        let t = r * gphi + lambda_new[i];
                        acc += t * t;
                    }
                    acc
                }
                Denoiser::ProxReference { h, .. } => {
                    let neg_lambda: Vec<f64> = lambda_new.iter().map(|l| -l).collect();
                    h.subgrad_distance(&neg_lambda, &y_new)
                        .map(|d| d * d)
                        .unwrap_or(f64::NAN)
                }
            };
            kkt_sq = dual_sq + prox_sq + feas_sq;
            if let Some(val) = problem.oracle.exact_value(&x_new) {
                objective = match &problem.denoiser {
                    Denoiser::GradientStep(g) => {
                        let phi = WeaklyConvexPotential::new(g.clone())?;
                        phi.value(&x_new)
                            .map(|p| val + problem.reg_weight * p)
                            .unwrap_or(f64::NAN)
                    }
                    Denoiser::ProxReference { h, .. } => val + h.value(&x_new),
                };
            }
            if kkt_sq.is_finite() && best.map_or(true, |(_, b)| kkt_sq < b) {
                best = Some((s, kkt_sq));
            }
        }

        trace.rows.push(TraceRow {
            k: s,
            rho,
            eta,
            a: params.a,
            objective,
            aug_lagrangian: f64::NAN,
            kkt_sq,
            feas_sq,
            dual_sq,
            prox_sq,
            oracle_queries: problem.oracle.queries(),
            invariant_flags: 3,
        });

        x = x_new;
        y = y_new;
        lambda = lambda_new;
        v = v_next;
    }

    let final_params = schedule.params_at(trace.rows.last().map_or(1, |r| r.k))?;
    Ok(PnpRunOutput {
        state: SolverState {
            x,
            y,
            lambda,
            v,
            k: trace.rows.len(),
            params: final_params,
        },
        best_k: best.map(|(k, _)| k),
        best_kkt_sq: best.map(|(_, b)| b),
        trace,
        status,
    })
}

/// Small deblurring instance: banded blur operator K, observation
/// b = K x_true, smooth term 0.5 ||Kx - b||^2.
pub struct ToyDeblur {
    pub oracle_loss: Arc<crate::oracle::QuadraticLoss>,
    pub blur: DenseMatrix,
    pub observation: Vec<f64>,
    pub x_true: Vec<f64>,
    pub lipschitz: f64,
}

pub fn toy_deblur(n: usize, seed: u64) -> Result<ToyDeblur> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // circulant [0.25, 0.5, 0.25] blur
    let mut blur = DenseMatrix::zeros(n, n);
    for i in 0..n {
        blur.set(i, i, 0.5);
        blur.set(i, (i + 1) % n, 0.25);
        blur.set(i, (i + n - 1) % n, 0.25);
    }
    // piecewise-smooth ground truth
    let mut x_true = vec![0.0; n];
    let mut level = 0.0;
    for (i, v) in x_true.iter_mut().enumerate() {
        if i % 16 == 0 {
            level = 2.0 * rng.random::<f64>() - 1.0;
        }
        *v = level;
    }
    let observation = blur.matvec(&x_true);
    let p = blur.gram();
    let q = blur.matvec_t(&observation);
    let lipschitz = crate::linops::largest_eigenvalue(&crate::linops::LinearMap::dense(p.clone()))?;
    let oracle_loss = Arc::new(crate::oracle::QuadraticLoss {
        p,
        q,
        lipschitz,
    });
    Ok(ToyDeblur {
        oracle_loss,
        blur,
        observation,
        x_true,
        lipschitz,
    })
}
