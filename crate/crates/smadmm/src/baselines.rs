//! Comparison algorithms. Every baseline reuses the solver's y/x/lambda
//! updates through [`GradientEstimator`], so the only difference between
//! runs is how the gradient slot v is filled:
//!
//! - plain: one fresh stochastic gradient per iteration,
//! - svrg: component difference anchored at a periodically refreshed
//!   full-gradient snapshot (finite sums only),
//! - spider: recursive difference estimator re-estimated from a large batch
//!   at epoch boundaries,
//! - asvrg: svrg evaluated at an extrapolated point; an approximation of the
//!   momentum-accelerated variant, kept only as an experimental comparator.

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::StochasticOracle;
use crate::solver::GradientEstimator;

/// Baseline selector with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorVariant {
    /// Plain stochastic gradient (classic stochastic ADMM).
    Plain { batch: usize },
    /// Epoch snapshot with full-gradient anchor; `epoch_len` interior steps
    /// per snapshot.
    Svrg { epoch_len: usize, batch: usize },
    /// Recursive difference estimator; `epoch_batch` samples at each epoch
    /// boundary, paired samples inside.
    Spider {
        epoch_len: usize,
        epoch_batch: usize,
        batch: usize,
    },
    /// Svrg with iterate extrapolation weight in [0, 1).
    Asvrg {
        epoch_len: usize,
        batch: usize,
        extrapolation: f64,
    },
}

impl EstimatorVariant {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorVariant::Plain { .. } => "sadmm",
            EstimatorVariant::Svrg { .. } => "svrg_admm",
            EstimatorVariant::Spider { .. } => "spider_admm",
            EstimatorVariant::Asvrg { .. } => "asvrg_admm",
        }
    }

    pub fn build(&self, oracle: &StochasticOracle) -> Result<Box<dyn GradientEstimator>> {
        match self {
            EstimatorVariant::Plain { batch } => Ok(Box::new(PlainSgd { batch: *batch })),
            EstimatorVariant::Svrg { epoch_len, batch } => {
                if !oracle.is_finite_sum() {
                    return Err(Error::Unsupported(
                        "svrg needs a finite-sum oracle for its full-gradient snapshot".into(),
                    ));
                }
                Ok(Box::new(Svrg::new(*epoch_len, *batch, 0.0)?))
            }
            EstimatorVariant::Spider {
                epoch_len,
                epoch_batch,
                batch,
            } => Ok(Box::new(Spider::new(*epoch_len, *epoch_batch, *batch)?)),
            EstimatorVariant::Asvrg {
                epoch_len,
                batch,
                extrapolation,
            } => {
                if !oracle.is_finite_sum() {
                    return Err(Error::Unsupported(
                        "asvrg needs a finite-sum oracle for its full-gradient snapshot".into(),
                    ));
                }
                if !(0.0..1.0).contains(extrapolation) {
                    return Err(Error::InvalidArgument(
                        "extrapolation weight must lie in [0, 1)".into(),
                    ));
                }
                let mut svrg = Svrg::new(*epoch_len, *batch, *extrapolation)?;
                svrg.name = "asvrg_admm";
                Ok(Box::new(svrg))
            }
        }
    }
}

/// One fresh stochastic gradient per update.
pub struct PlainSgd {
    pub batch: usize,
}

impl GradientEstimator for PlainSgd {
    fn init(&mut self, oracle: &mut StochasticOracle, x0: &[f64]) -> Result<Vec<f64>> {
        oracle.sample_gradient(x0, self.batch)
    }

    fn update(
        &mut self,
        oracle: &mut StochasticOracle,
        x_new: &[f64],
        _step: usize,
        _a_next: f64,
    ) -> Result<Vec<f64>> {
        oracle.sample_gradient(x_new, self.batch)
    }

    fn name(&self) -> &'static str {
        "sadmm"
    }
}

/// Full finite-sum gradient, charged at the component count.
fn full_gradient(oracle: &mut StochasticOracle, x: &[f64]) -> Result<Vec<f64>> {
    let n = oracle.component_count().ok_or_else(|| {
        Error::Unsupported("full-gradient snapshot needs a finite-sum oracle".into())
    })? as u64;
    let g = oracle
        .exact_gradient(x)
        .expect("finite-sum oracles always expose the full gradient");
    oracle.charge_queries(n);
    Ok(g)
}

/// v = grad f_i(x) - grad f_i(x_snap) + grad F(x_snap) with a shared
/// component, snapshot refreshed every `epoch_len` steps.
pub struct Svrg {
    epoch_len: usize,
    batch: usize,
    extrapolation: f64,
    snapshot_x: Vec<f64>,
    snapshot_grad: Vec<f64>,
    prev_x: Vec<f64>,
    steps_since_snapshot: usize,
    name: &'static str,
}

impl Svrg {
    pub fn new(epoch_len: usize, batch: usize, extrapolation: f64) -> Result<Self> {
        if epoch_len == 0 || batch == 0 {
            return Err(Error::InvalidArgument(
                "epoch length and batch must be >= 1".into(),
            ));
        }
        Ok(Self {
            epoch_len,
            batch,
            extrapolation,
            snapshot_x: Vec::new(),
            snapshot_grad: Vec::new(),
            prev_x: Vec::new(),
            steps_since_snapshot: 0,
            name: "svrg_admm",
        })
    }

    fn refresh(&mut self, oracle: &mut StochasticOracle, x: &[f64]) -> Result<()> {
        self.snapshot_grad = full_gradient(oracle, x)?;
        self.snapshot_x = x.to_vec();
        self.steps_since_snapshot = 0;
        Ok(())
    }
}

impl GradientEstimator for Svrg {
    fn init(&mut self, oracle: &mut StochasticOracle, x0: &[f64]) -> Result<Vec<f64>> {
        self.refresh(oracle, x0)?;
        self.prev_x = x0.to_vec();
        Ok(self.snapshot_grad.clone())
    }

    fn update(
        &mut self,
        oracle: &mut StochasticOracle,
        x_new: &[f64],
        _step: usize,
        _a_next: f64,
    ) -> Result<Vec<f64>> {
        self.steps_since_snapshot += 1;
        if self.steps_since_snapshot >= self.epoch_len {
            self.refresh(oracle, x_new)?;
            self.prev_x = x_new.to_vec();
            return Ok(self.snapshot_grad.clone());
        }
        // extrapolated evaluation point (0 weight gives plain svrg)
        let point: Vec<f64> = if self.extrapolation > 0.0 && !self.prev_x.is_empty() {
            x_new
                .iter()
                .zip(&self.prev_x)
                .map(|(&xn, &xp)| xn + self.extrapolation * (xn - xp))
                .collect()
        } else {
            x_new.to_vec()
        };
        let (g_now, g_snap) = oracle.sample_pair(&point, &self.snapshot_x, self.batch)?;
        let mut v = g_now;
        for i in 0..v.len() {
            v[i] += self.snapshot_grad[i] - g_snap[i];
        }
        self.prev_x = x_new.to_vec();
        Ok(v)
    }

    fn name(&self) -> &'static str {
        self.name
    }
}

/// v_new = v_old + grad f(x_new, xi) - grad f(x_old, xi) inside an epoch,
/// re-estimated from `epoch_batch` samples at the boundary.
pub struct Spider {
    epoch_len: usize,
    epoch_batch: usize,
    batch: usize,
    v: Vec<f64>,
    prev_x: Vec<f64>,
    steps_since_epoch: usize,
}

impl Spider {
    pub fn new(epoch_len: usize, epoch_batch: usize, batch: usize) -> Result<Self> {
        if epoch_len == 0 || epoch_batch == 0 || batch == 0 {
            return Err(Error::InvalidArgument(
                "epoch length and batch sizes must be >= 1".into(),
            ));
        }
        Ok(Self {
            epoch_len,
            epoch_batch,
            batch,
            v: Vec::new(),
            prev_x: Vec::new(),
            steps_since_epoch: 0,
        })
    }
}

impl GradientEstimator for Spider {
    fn init(&mut self, oracle: &mut StochasticOracle, x0: &[f64]) -> Result<Vec<f64>> {
        self.v = oracle.sample_gradient(x0, self.epoch_batch)?;
        self.prev_x = x0.to_vec();
        self.steps_since_epoch = 0;
        Ok(self.v.clone())
    }

    fn update(
        &mut self,
        oracle: &mut StochasticOracle,
        x_new: &[f64],
        _step: usize,
        _a_next: f64,
    ) -> Result<Vec<f64>> {
        self.steps_since_epoch += 1;
        if self.steps_since_epoch >= self.epoch_len {
            self.v = oracle.sample_gradient(x_new, self.epoch_batch)?;
            self.steps_since_epoch = 0;
        } else {
            let (g_new, g_old) = oracle.sample_pair(x_new, &self.prev_x, self.batch)?;
            for i in 0..self.v.len() {
                self.v[i] += g_new[i] - g_old[i];
            }
        }
        self.prev_x = x_new.to_vec();
        Ok(self.v.clone())
    }

    fn name(&self) -> &'static str {
        "spider_admm"
    }
}

/// Variance of plain single-sample estimates around the exact gradient,
/// estimated over `trials` draws. Test support.
pub fn empirical_gradient_variance(
    oracle: &mut StochasticOracle,
    x: &[f64],
    trials: usize,
) -> Result<f64> {
    let exact = oracle
        .exact_gradient(x)
        .ok_or_else(|| Error::Unsupported("variance check needs a reference gradient".into()))?;
    let mut acc = 0.0;
    for _ in 0..trials {
        let g = oracle.sample_gradient(x, 1)?;
        acc += linalg::dist_sq(&g, &exact);
    }
    Ok(acc / trials as f64)
}
