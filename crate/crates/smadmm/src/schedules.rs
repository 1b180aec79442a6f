//! Per-iteration parameter schedules.
//!
//! Two theory regimes are provided. In the constant regime the penalty,
//! step coefficient and momentum are fixed from the horizon K:
//!
//! ```text
//! rho = c_rho K^(1/3),  a = c_a^2 / rho^2,
//! eta = phi_min rho sigma_A / (20 phi_max^2),  m = ceil(rho)
//! ```
//!
//! In the dynamic regime they vary with the iteration index k:
//!
//! ```text
//! rho_k = c_rho k^(1/3),  a_{k+1} = c_a k^(-2/3),  eta_k = c_eta k^(1/3),
//! nu_k = c_nu / rho_k,    gamma_{k+1} = c_gamma k^(1/3),  m = 1
//! ```
//!
//! with the constants tied to the problem through the smoothness constant L
//! and the spectral quantities of A, Q and H. A practical mode bypasses the
//! theory constants entirely, since they are far too conservative on real
//! data.

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::StochasticOracle;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Problem constants from which both regimes derive their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConstants {
    /// Gradient Lipschitz constant of the smooth term.
    pub lipschitz: f64,
    /// Smallest eigenvalue of AA' (or A'A for a tall full-column-rank A).
    pub sigma_a: f64,
    /// Extreme eigenvalues of the x-update metric Q.
    pub phi_min: f64,
    pub phi_max: f64,
    /// Extreme eigenvalues of the y-update metric H.
    pub sigma_min_h: f64,
    pub sigma_max_h: f64,
    /// Operator norms of the constraint maps.
    pub norm_a: f64,
    pub norm_b: f64,
    /// tau = phi_min^2 sigma_a / (40 phi_max^2) + sigma_a / 2.
    pub tau: f64,
    pub c_a: f64,
    pub c_rho: f64,
    pub c_eta: f64,
    pub c_nu: f64,
    pub c_gamma: f64,
}

/// Which set of constant inequalities applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Constant,
    Dynamic,
}

/// Raw spectral inputs for constant construction.
#[derive(Debug, Clone, Copy)]
pub struct SpectralInputs {
    pub sigma_a: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub sigma_min_h: f64,
    pub sigma_max_h: f64,
    pub norm_a: f64,
    pub norm_b: f64,
}

impl ScheduleConstants {
    /// Derives every constant for the requested regime. Rejects rank-deficient
    /// constraint maps (sigma_a = 0) since both regimes divide by sigma_a.
    pub fn derive(lipschitz: f64, spec: SpectralInputs, regime: Regime) -> Result<Self> {
        if spec.sigma_a <= 0.0 {
            return Err(Error::ScheduleRejected(format!(
                "sigma_a = {} (constraint map is rank deficient); the schedules divide by it",
                spec.sigma_a
            )));
        }
        if spec.phi_min <= 0.0 || spec.phi_max < spec.phi_min {
            return Err(Error::ScheduleRejected(format!(
                "x-metric eigenvalues must satisfy 0 < phi_min <= phi_max, got ({}, {})",
                spec.phi_min, spec.phi_max
            )));
        }
        if spec.sigma_min_h <= 0.0 || spec.sigma_max_h < spec.sigma_min_h {
            return Err(Error::ScheduleRejected(format!(
                "y-metric eigenvalues must satisfy 0 < sigma_min <= sigma_max, got ({}, {})",
                spec.sigma_min_h, spec.sigma_max_h
            )));
        }
        if lipschitz <= 0.0 || !lipschitz.is_finite() {
            return Err(Error::ScheduleRejected(format!(
                "smoothness constant must be positive and finite, got {lipschitz}"
            )));
        }
        let l = lipschitz;
        let sigma_a = spec.sigma_a;
        let tau =
            spec.phi_min * spec.phi_min * sigma_a / (40.0 * spec.phi_max * spec.phi_max)
                + sigma_a / 2.0;

        let (c_a, c_rho, c_eta, c_nu, c_gamma) = match regime {
            Regime::Constant => {
                let c_a = (((1.0 + 2.0 * l * l) / 2.0 + 20.0 * l * l / sigma_a) * 2.0 / tau)
                    .max(1.0);
                let c_rho_growth = (20.0 * l * l + 2.0 * sigma_a * l) / (sigma_a * tau);
                let c_rho_metric = tau * spec.sigma_max_h * spec.sigma_max_h
                    / (4.0 * spec.norm_a * spec.norm_a * spec.norm_b * spec.norm_b
                        * spec.sigma_min_h);
                let c_rho = c_rho_growth.max(c_rho_metric).max(1.0);
                // nu = c_nu / rho with c_nu = c_a in this regime
                (c_a, c_rho, f64::NAN, c_a, 0.0)
            }
            Regime::Dynamic => {
                let stated = 8.0 * l / sigma_a
                    + 160.0 * l * l / (sigma_a * sigma_a)
                    + spec.norm_a * spec.norm_b / (spec.sigma_max_h * spec.sigma_max_h);
                // the telescoped stationarity bound additionally needs
                // c_rho >= sigma_max(H) / (||A|| ||B||)
                let c_rho = stated
                    .max(spec.sigma_max_h / (spec.norm_a * spec.norm_b))
                    .max(1.0);
                let c_eta = sigma_a * c_rho / (160.0f64.sqrt() * spec.phi_max);
                // satisfies the stated c_nu >= 1/(4 sigma_a) with room for the
                // step-coefficient split used in the telescoped bound
                let c_nu = 4.0 / sigma_a;
                let c_gamma = sigma_a * c_rho / (16.0 * l * l);
                let c_a = (3.0 * c_nu * c_rho + 60.0 + 2.0 * c_gamma * sigma_a * c_rho)
                    / (3.0 * c_gamma * sigma_a * c_rho);
                (c_a, c_rho, c_eta, c_nu, c_gamma)
            }
        };

        Ok(Self {
            lipschitz,
            sigma_a,
            phi_min: spec.phi_min,
            phi_max: spec.phi_max,
            sigma_min_h: spec.sigma_min_h,
            sigma_max_h: spec.sigma_max_h,
            norm_a: spec.norm_a,
            norm_b: spec.norm_b,
            tau,
            c_a,
            c_rho,
            c_eta,
            c_nu,
            c_gamma,
        })
    }
}

/// Estimates the gradient Lipschitz constant by the largest of 100 random
/// secant slopes, inflated by a 1.5 safety factor. Uses the exact gradient
/// field when the oracle has one, a 256-sample mean otherwise.
pub fn estimate_lipschitz(oracle: &mut StochasticOracle, radius: f64, seed: u64) -> Result<f64> {
    let dim = oracle.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha20Rng| -> Vec<f64> {
        (0..dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * radius)
            .collect()
    };
    let grad = |oracle: &mut StochasticOracle, x: &[f64]| -> Result<Vec<f64>> {
        match oracle.exact_gradient(x) {
            Some(g) => Ok(g),
            None => oracle.diagnostic_gradient(x, 256),
        }
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let u = point(&mut rng);
        let w = point(&mut rng);
        let du = linalg::dist_sq(&u, &w).sqrt();
        if du < 1e-12 {
            continue;
        }
        let gu = grad(oracle, &u)?;
        let gw = grad(oracle, &w)?;
        let slope = linalg::dist_sq(&gu, &gw).sqrt() / du;
        worst = worst.max(slope);
    }
    if worst == 0.0 {
        // gradient field is constant; any positive constant works
        worst = 1e-12;
    }
    Ok(worst * 1.5)
}

/// Parameters consumed by one solver iteration. `a` is the momentum used by
/// the estimator update at the end of the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationParams {
    pub rho: f64,
    pub eta: f64,
    pub a: f64,
    pub nu: f64,
    pub gamma: f64,
}

/// A rule producing per-iteration parameters plus the initial sample size.
#[derive(Debug, Clone)]
pub enum Schedule {
    Constant {
        consts: ScheduleConstants,
        horizon: usize,
        params: IterationParams,
        init_batch: usize,
    },
    Dynamic {
        consts: ScheduleConstants,
    },
    Practical(PracticalSchedule),
}

/// Hand-tuned parameters, the mode real experiments run in.
#[derive(Debug, Clone, PartialEq)]
pub struct PracticalSchedule {
    /// Fixed penalty.
    pub rho: f64,
    pub eta: EtaRule,
    pub momentum: MomentumRule,
    /// Initial sample count m.
    pub init_batch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaRule {
    Fixed(f64),
    /// eta_k = min(coeff * k^(1/3), cap).
    PowerCapped { coeff: f64, cap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentumRule {
    Fixed(f64),
    /// a_{k+1} = max(coeff * k^(-2/3), floor), clamped into (0, 1].
    PowerFloored { coeff: f64, floor: f64 },
}

/// rho = c_rho K^(1/3), a = min(c_a^2/rho^2, 1),
/// eta = phi_min rho sigma_a / (20 phi_max^2), m = ceil(rho).
pub fn constant_schedule(consts: ScheduleConstants, horizon: usize) -> Result<Schedule> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if consts.sigma_a <= 0.0 {
        return Err(Error::ScheduleRejected(
            "sigma_a = 0: constraint map is rank deficient".into(),
        ));
    }
    let rho = consts.c_rho * (horizon as f64).powf(1.0 / 3.0);
    let raw_a = consts.c_a * consts.c_a / (rho * rho);
    let a = raw_a.min(1.0);
    if a <= 0.0 {
        return Err(Error::ScheduleRejected(format!(
            "momentum parameter {a} fell outside (0, 1]"
        )));
    }
    let eta = consts.phi_min * rho * consts.sigma_a / (20.0 * consts.phi_max * consts.phi_max);
    let init_batch = rho.ceil() as usize;
    let params = IterationParams {
        rho,
        eta,
        a,
        nu: consts.c_nu / rho,
        gamma: 0.0,
    };
    Ok(Schedule::Constant {
        consts,
        horizon,
        params,
        init_batch,
    })
}

pub fn dynamic_schedule(consts: ScheduleConstants) -> Schedule {
    Schedule::Dynamic { consts }
}

/// Parameters of the dynamic regime at 1-indexed iteration k.
pub fn dynamic_params(consts: &ScheduleConstants, k: usize) -> Result<IterationParams> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "dynamic schedule is 1-indexed; k = 0 rejected".into(),
        ));
    }
    let kf = k as f64;
    let third = kf.powf(1.0 / 3.0);
    let rho = consts.c_rho * third;
    let raw_a = consts.c_a * kf.powf(-2.0 / 3.0);
    if raw_a <= 0.0 {
        return Err(Error::ScheduleRejected(format!(
            "momentum parameter {raw_a} fell outside (0, 1]"
        )));
    }
    Ok(IterationParams {
        rho,
        eta: consts.c_eta * third,
        a: raw_a.min(1.0),
        nu: consts.c_nu / rho,
        gamma: consts.c_gamma * third,
    })
}

impl Schedule {
    pub fn practical(p: PracticalSchedule) -> Result<Self> {
        if p.rho <= 0.0 {
            return Err(Error::ScheduleRejected("penalty must be positive".into()));
        }
        if p.init_batch == 0 {
            return Err(Error::ScheduleRejected(
                "initial sample count must be >= 1".into(),
            ));
        }
        Ok(Schedule::Practical(p))
    }

    /// Parameters for 1-based iteration `k`.
    pub fn params_at(&self, k: usize) -> Result<IterationParams> {
        match self {
            Schedule::Constant { params, .. } => {
                if k == 0 {
                    return Err(Error::InvalidArgument("iterations are 1-indexed".into()));
                }
                Ok(*params)
            }
            Schedule::Dynamic { consts } => dynamic_params(consts, k),
            Schedule::Practical(p) => {
                if k == 0 {
                    return Err(Error::InvalidArgument("iterations are 1-indexed".into()));
                }
                let kf = k as f64;
                let eta = match p.eta {
                    EtaRule::Fixed(v) => v,
                    EtaRule::PowerCapped { coeff, cap } => (coeff * kf.powf(1.0 / 3.0)).min(cap),
                };
                let a = match p.momentum {
                    MomentumRule::Fixed(v) => v,
                    MomentumRule::PowerFloored { coeff, floor } => {
                        (coeff * kf.powf(-2.0 / 3.0)).max(floor).min(1.0)
                    }
                };
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::ScheduleRejected(format!(
                        "practical momentum {a} outside (0, 1]"
                    )));
                }
                if eta <= 0.0 {
                    return Err(Error::ScheduleRejected(format!(
                        "practical step coefficient {eta} must be positive"
                    )));
                }
                Ok(IterationParams {
                    rho: p.rho,
                    eta,
                    a,
                    nu: 1.0 / p.rho,
                    gamma: 0.0,
                })
            }
        }
    }

    pub fn init_batch(&self) -> usize {
        match self {
            Schedule::Constant { init_batch, .. } => *init_batch,
            Schedule::Dynamic { .. } => 1,
            Schedule::Practical(p) => p.init_batch,
        }
    }

    pub fn constants(&self) -> Option<&ScheduleConstants> {
        match self {
            Schedule::Constant { consts, .. } | Schedule::Dynamic { consts } => Some(consts),
            Schedule::Practical(_) => None,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self, Schedule::Dynamic { .. })
    }
}

/// One inequality check with both sides evaluated.
#[derive(Debug, Clone)]
pub struct ConstantCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<ConstantCheck>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&ConstantCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Re-evaluates every inequality the chosen regime imposes on the constants,
/// naming each violated bound. Report-only.
pub fn validate_constants(consts: &ScheduleConstants, regime: Regime) -> ValidationReport {
    let mut report = ValidationReport::default();
    let c = consts;
    let mut check = |name: &'static str, lhs: f64, rhs: f64, geq: bool| {
        let pass = if geq {
            lhs >= rhs - 1e-12 * rhs.abs().max(1.0)
        } else {
            lhs <= rhs + 1e-12 * rhs.abs().max(1.0)
        };
        report.checks.push(ConstantCheck {
            name,
            lhs,
            rhs,
            pass,
        });
    };

    let tau_expected = c.phi_min * c.phi_min * c.sigma_a / (40.0 * c.phi_max * c.phi_max)
        + c.sigma_a / 2.0;
    check("tau definition", c.tau, tau_expected, true);
    check("tau definition (upper)", c.tau, tau_expected, false);
    check("sigma_a > 0", c.sigma_a, f64::MIN_POSITIVE, true);
    check("phi_min <= phi_max", c.phi_min, c.phi_max, false);
    check("sigma_min_h <= sigma_max_h", c.sigma_min_h, c.sigma_max_h, false);

    let l = c.lipschitz;
    match regime {
        Regime::Constant => {
            let c_a_bound =
                ((1.0 + 2.0 * l * l) / 2.0 + 20.0 * l * l / c.sigma_a) * 2.0 / c.tau;
            check("c_a >= growth bound", c.c_a, c_a_bound.max(1.0), true);
            let growth = (20.0 * l * l + 2.0 * c.sigma_a * l) / (c.sigma_a * c.tau);
            check("c_rho >= growth bound", c.c_rho, growth, true);
            let metric = c.tau * c.sigma_max_h * c.sigma_max_h
                / (4.0 * c.norm_a * c.norm_a * c.norm_b * c.norm_b * c.sigma_min_h);
            check("c_rho >= metric bound", c.c_rho, metric, true);
            check("c_rho >= 1", c.c_rho, 1.0, true);
        }
        Regime::Dynamic => {
            let rho_bound = 8.0 * l / c.sigma_a
                + 160.0 * l * l / (c.sigma_a * c.sigma_a)
                + c.norm_a * c.norm_b / (c.sigma_max_h * c.sigma_max_h);
            check("c_rho >= smoothness bound", c.c_rho, rho_bound, true);
            let a_bound = (3.0 * c.c_nu * c.c_rho + 60.0 + 2.0 * c.c_gamma * c.sigma_a * c.c_rho)
                / (3.0 * c.c_gamma * c.sigma_a * c.c_rho);
            check("c_a >= momentum bound", c.c_a, a_bound, true);
            let eta_bound = c.sigma_a * c.c_rho / (160.0f64.sqrt() * c.phi_max);
            check("c_eta <= step bound", c.c_eta, eta_bound, false);
            check("c_nu >= 1/(4 sigma_a)", c.c_nu, 1.0 / (4.0 * c.sigma_a), true);
            let gamma_bound = c.sigma_a * c.c_rho / (16.0 * l * l);
            check("c_gamma <= weight bound", c.c_gamma, gamma_bound, false);
            if c.c_eta <= 1.0 {
                report.warnings.push(format!(
                    "c_eta = {:.6} <= 1: early step coefficients are below one",
                    c.c_eta
                ));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_spec() -> SpectralInputs {
        SpectralInputs {
            sigma_a: 1.0,
            phi_min: 1.0,
            phi_max: 1.0,
            sigma_min_h: 1.0,
            sigma_max_h: 1.0,
            norm_a: 1.0,
            norm_b: 1.0,
        }
    }

    /// With identity A and Q, choose L so the growth term collapses and
    /// c_rho = 1. Then K = 1000 gives rho = 10, eta = 0.5, m = 10.
    #[test]
    fn constant_schedule_direct_substitution() {
        // tau = 1/40 + 1/2 = 0.525; pick L small enough that every growth
        // bound stays below 1
        let consts = ScheduleConstants::derive(1e-3, identity_spec(), Regime::Constant).unwrap();
        assert_eq!(consts.c_rho, 1.0);
        let schedule = constant_schedule(consts, 1000).unwrap();
        let p = schedule.params_at(1).unwrap();
        assert!((p.rho - 10.0).abs() < 1e-12);
        assert!((p.eta - 0.5).abs() < 1e-12);
        assert_eq!(schedule.init_batch(), 10);
        // k-independence
        assert_eq!(schedule.params_at(500).unwrap(), p);
    }

    #[test]
    fn constant_schedule_unit_horizon() {
        let consts = ScheduleConstants::derive(0.5, identity_spec(), Regime::Constant).unwrap();
        let c_rho = consts.c_rho;
        let schedule = constant_schedule(consts, 1).unwrap();
        let p = schedule.params_at(1).unwrap();
        assert!((p.rho - c_rho).abs() < 1e-12);
        assert_eq!(schedule.init_batch(), c_rho.ceil() as usize);
    }

    #[test]
    fn constant_momentum_formula() {
        // a = c_a^2 / rho^2: with c_a = 1 and rho = 10, a = 0.01
        let mut consts = ScheduleConstants::derive(1e-3, identity_spec(), Regime::Constant).unwrap();
        consts.c_a = 1.0;
        let schedule = constant_schedule(consts, 1000).unwrap();
        let p = schedule.params_at(1).unwrap();
        assert!((p.a - 0.01).abs() < 1e-15);
    }

    #[test]
    fn constant_schedule_rejects_rank_deficient_map() {
        let mut spec = identity_spec();
        spec.sigma_a = 0.0;
        assert!(ScheduleConstants::derive(1.0, spec, Regime::Constant).is_err());
    }

    #[test]
    fn dynamic_params_at_cube() {
        let mut consts = ScheduleConstants::derive(0.5, identity_spec(), Regime::Dynamic).unwrap();
        consts.c_rho = 1.0;
        consts.c_eta = 1.0;
        consts.c_gamma = 1.0;
        consts.c_a = 1.0;
        let p = dynamic_params(&consts, 8).unwrap();
        assert!((p.rho - 2.0).abs() < 1e-12);
        assert!((p.eta - 2.0).abs() < 1e-12);
        assert!((p.gamma - 2.0).abs() < 1e-12);
        assert!((p.a - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dynamic_params_unit_iteration_and_zero_rejection() {
        let consts = ScheduleConstants::derive(0.5, identity_spec(), Regime::Dynamic).unwrap();
        let p = dynamic_params(&consts, 1).unwrap();
        assert!((p.rho - consts.c_rho).abs() < 1e-12);
        assert!((p.a - consts.c_a.min(1.0)).abs() < 1e-12);
        assert!(dynamic_params(&consts, 0).is_err());
    }

    #[test]
    fn dynamic_monotonicity() {
        let consts = ScheduleConstants::derive(0.5, identity_spec(), Regime::Dynamic).unwrap();
        let mut prev = dynamic_params(&consts, 1).unwrap();
        for k in 2..=1000 {
            let p = dynamic_params(&consts, k).unwrap();
            assert!(p.rho >= prev.rho);
            assert!(p.eta >= prev.eta);
            assert!(p.a <= prev.a);
            assert!(p.a > 0.0 && p.a <= 1.0);
            prev = p;
        }
    }

    #[test]
    fn derived_constants_validate_in_both_regimes() {
        for &l in &[0.1, 0.5, 2.0, 10.0] {
            let con = ScheduleConstants::derive(l, identity_spec(), Regime::Constant).unwrap();
            let report = validate_constants(&con, Regime::Constant);
            assert!(report.all_pass(), "constant regime l={l}: {:?}", report.failed());
            let dyn_c = ScheduleConstants::derive(l, identity_spec(), Regime::Dynamic).unwrap();
            let report = validate_constants(&dyn_c, Regime::Dynamic);
            assert!(report.all_pass(), "dynamic regime l={l}: {:?}", report.failed());
        }
    }

    #[test]
    fn validation_catches_inflated_step_constant() {
        let mut consts = ScheduleConstants::derive(0.5, identity_spec(), Regime::Dynamic).unwrap();
        consts.c_eta = consts.sigma_a * consts.c_rho / (160.0f64.sqrt() * consts.phi_max) * 2.0;
        let report = validate_constants(&consts, Regime::Dynamic);
        assert!(!report.all_pass());
        assert!(report.failed().iter().any(|c| c.name == "c_eta <= step bound"));
    }

    /// Doubling L after construction makes the stale c_a bound fail.
    #[test]
    fn validation_recomputes_against_changed_smoothness() {
        let mut consts = ScheduleConstants::derive(1.0, identity_spec(), Regime::Constant).unwrap();
        assert!(validate_constants(&consts, Regime::Constant).all_pass());
        consts.lipschitz *= 2.0;
        let report = validate_constants(&consts, Regime::Constant);
        assert!(!report.all_pass());
        assert!(report
            .failed()
            .iter()
            .any(|c| c.name == "c_a >= growth bound" || c.name == "c_rho >= growth bound"));
    }

    /// A derived step constant at or below one is legal but flagged, since
    /// early steps are then below unit length.
    #[test]
    fn small_step_constant_warns() {
        let consts = ScheduleConstants::derive(0.1, identity_spec(), Regime::Dynamic).unwrap();
        assert!(consts.c_eta <= 1.0);
        let report = validate_constants(&consts, Regime::Dynamic);
        assert!(report.all_pass());
        assert!(!report.warnings.is_empty());
        let big_l = ScheduleConstants::derive(0.5, identity_spec(), Regime::Dynamic).unwrap();
        assert!(big_l.c_eta > 1.0);
        assert!(validate_constants(&big_l, Regime::Dynamic).warnings.is_empty());
    }

    #[test]
    fn practical_schedule_rules() {
        let schedule = Schedule::practical(PracticalSchedule {
            rho: 1.0,
            eta: EtaRule::PowerCapped {
                coeff: 0.1,
                cap: 0.5,
            },
            momentum: MomentumRule::PowerFloored {
                coeff: 0.5,
                floor: 0.01,
            },
            init_batch: 1,
        })
        .unwrap();
        let p1 = schedule.params_at(1).unwrap();
        assert!((p1.eta - 0.1).abs() < 1e-15);
        assert!((p1.a - 0.5).abs() < 1e-15);
        let p_large = schedule.params_at(1_000_000).unwrap();
        assert!((p_large.eta - 0.5).abs() < 1e-15);
        assert!((p_large.a - 0.01).abs() < 1e-15);
    }

    #[test]
    fn lipschitz_estimate_covers_quadratic() {
        use crate::linalg::DenseMatrix;
        use crate::oracle::QuadraticLoss;
        use std::sync::Arc;
        let mut p = DenseMatrix::identity(4);
        p.set(0, 0, 3.0);
        let loss = Arc::new(QuadraticLoss {
            p,
            q: vec![0.0; 4],
            lipschitz: 3.0,
        });
        let mut oracle = StochasticOracle::deterministic(loss, 0);
        let est = estimate_lipschitz(&mut oracle, 1.0, 1).unwrap();
        // secant slopes of a quadratic never exceed the true constant
        assert!(est <= 3.0 * 1.5 + 1e-9);
        assert!(est >= 3.0 * 0.5, "estimate {est} too small");
    }
}
