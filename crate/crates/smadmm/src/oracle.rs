//! Stochastic first-order oracle: the solver's only access to the smooth
//! objective term. One query returns one stochastic gradient at one point;
//! the `queries` counter is the complexity measure reported everywhere.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A differentiable objective component with value and gradient.
pub trait SmoothLoss: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Gradient Lipschitz constant when known.
    fn lipschitz(&self) -> Option<f64> {
        None
    }
    fn dim(&self) -> usize;
}

/// Closure-backed loss, convenient for test fixtures.
pub struct FnLoss<V, G>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    pub value_fn: V,
    pub grad_fn: G,
    pub dim: usize,
    pub lipschitz: Option<f64>,
}

impl<V, G> SmoothLoss for FnLoss<V, G>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value_fn)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad_fn)(x)
    }
    fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
    fn dim(&self) -> usize {
        self.dim
    }
}

enum Kind {
    /// Exact gradients; sampling is a no-op.
    Deterministic(Arc<dyn SmoothLoss>),
    /// Mean of component losses; a sample picks one component uniformly.
    FiniteSum(Vec<Arc<dyn SmoothLoss>>),
    /// Exact gradient field plus additive Gaussian noise with
    /// E||noise||^2 = sigma^2. A sample index corresponds to one noise
    /// realization, so evaluating two points on the same sample shares
    /// the noise vector.
    StreamingGaussian { base: Arc<dyn SmoothLoss>, sigma: f64 },
}

/// Stochastic gradient oracle with reproducible sampling and query accounting.
///
/// `queries` counts gradient evaluations charged to the algorithm;
/// `diagnostic_queries` counts evaluations made only for reporting (for
/// example large-batch stationarity estimates) and never enters complexity
/// comparisons.
pub struct StochasticOracle {
    kind: Kind,
    rng: ChaCha20Rng,
    /// Separate stream for diagnostic sampling, so reporting never perturbs
    /// the algorithm's trajectory.
    diag_rng: ChaCha20Rng,
    seed: u64,
    queries: u64,
    diagnostic_queries: u64,
    /// Bound on ||grad f(x, xi)||^2 when known; recorded but unused by the
    /// parameter schedules.
    pub grad_bound_sq: Option<f64>,
}

impl StochasticOracle {
    pub fn deterministic(base: Arc<dyn SmoothLoss>, seed: u64) -> Self {
        Self::new(Kind::Deterministic(base), seed)
    }

    pub fn finite_sum(components: Vec<Arc<dyn SmoothLoss>>, seed: u64) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument(
                "finite-sum oracle needs at least one component".into(),
            ));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::InvalidArgument(
                "finite-sum components must share the dimension".into(),
            ));
        }
        Ok(Self::new(Kind::FiniteSum(components), seed))
    }

    pub fn streaming_gaussian(base: Arc<dyn SmoothLoss>, sigma: f64, seed: u64) -> Result<Self> {
        if sigma < 0.0 {
            return Err(Error::InvalidArgument("noise level must be >= 0".into()));
        }
        Ok(Self::new(Kind::StreamingGaussian { base, sigma }, seed))
    }

    fn new(kind: Kind, seed: u64) -> Self {
        Self {
            kind,
            rng: ChaCha20Rng::seed_from_u64(seed),
            diag_rng: ChaCha20Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15),
            seed,
            queries: 0,
            diagnostic_queries: 0,
            grad_bound_sq: None,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            Kind::Deterministic(b) => b.dim(),
            Kind::FiniteSum(cs) => cs[0].dim(),
            Kind::StreamingGaussian { base, .. } => base.dim(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn diagnostic_queries(&self) -> u64 {
        self.diagnostic_queries
    }

    pub fn is_finite_sum(&self) -> bool {
        matches!(self.kind, Kind::FiniteSum(_))
    }

    pub fn component_count(&self) -> Option<usize> {
        match &self.kind {
            Kind::FiniteSum(cs) => Some(cs.len()),
            _ => None,
        }
    }

    /// Exact gradient of the expectation, when the model makes it available.
    /// Deterministic and Gaussian oracles expose their base field; finite
    /// sums average every component. Not charged to the query counter.
    pub fn exact_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.kind {
            Kind::Deterministic(b) => Some(b.gradient(x)),
            Kind::StreamingGaussian { base, .. } => Some(base.gradient(x)),
            Kind::FiniteSum(cs) => {
                let mut g = vec![0.0; self.dim()];
                for c in cs {
                    let gc = c.gradient(x);
                    for (gi, gci) in g.iter_mut().zip(&gc) {
                        *gi += gci;
                    }
                }
                let inv = 1.0 / cs.len() as f64;
                for gi in g.iter_mut() {
                    *gi *= inv;
                }
                Some(g)
            }
        }
    }

    /// Exact objective value, same availability as [`Self::exact_gradient`].
    pub fn exact_value(&self, x: &[f64]) -> Option<f64> {
        match &self.kind {
            Kind::Deterministic(b) => Some(b.value(x)),
            Kind::StreamingGaussian { base, .. } => Some(base.value(x)),
            Kind::FiniteSum(cs) => {
                let s: f64 = cs.iter().map(|c| c.value(x)).sum();
                Some(s / cs.len() as f64)
            }
        }
    }

    pub fn lipschitz(&self) -> Option<f64> {
        match &self.kind {
            Kind::Deterministic(b) => b.lipschitz(),
            Kind::StreamingGaussian { base, .. } => base.lipschitz(),
            Kind::FiniteSum(cs) => {
                // L of the mean is at most the max component L
                let mut worst = 0.0f64;
                for c in cs {
                    worst = worst.max(c.lipschitz()?);
                }
                Some(worst)
            }
        }
    }

    fn gradient_with_rng(kind: &Kind, rng: &mut ChaCha20Rng, x: &[f64]) -> Vec<f64> {
        match kind {
            Kind::Deterministic(b) => b.gradient(x),
            Kind::FiniteSum(cs) => {
                let i = rng.random_range(0..cs.len());
                cs[i].gradient(x)
            }
            Kind::StreamingGaussian { base, sigma } => {
                let mut g = base.gradient(x);
                let scale = sigma / (g.len() as f64).sqrt();
                for gi in g.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *gi += scale * z;
                }
                g
            }
        }
    }

    /// Mean of `batch` i.i.d. stochastic gradients at `x`. Charges `batch`
    /// queries.
    pub fn sample_gradient(&mut self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_point(x)?;
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        // exact cases bypass the accumulate/divide arithmetic so that a mean
        // of identical draws is the draw itself, bitwise
        if let Kind::Deterministic(b) = &self.kind {
            self.queries += batch as u64;
            return Ok(b.gradient(x));
        }
        if batch == 1 {
            let g = Self::gradient_with_rng(&self.kind, &mut self.rng, x);
            self.queries += 1;
            return Ok(g);
        }
        let mut mean = vec![0.0; x.len()];
        for _ in 0..batch {
            let g = Self::gradient_with_rng(&self.kind, &mut self.rng, x);
            for (mi, gi) in mean.iter_mut().zip(&g) {
                *mi += gi;
            }
        }
        let inv = 1.0 / batch as f64;
        for mi in mean.iter_mut() {
            *mi *= inv;
        }
        self.queries += batch as u64;
        Ok(mean)
    }

    /// Gradients at two points evaluated on the same sample(s): the pair
    /// shares the component index (finite sum) or the noise realization
    /// (Gaussian model). Charges `2 * batch` queries.
    pub fn sample_pair(
        &mut self,
        x_new: &[f64],
        x_old: &[f64],
        batch: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_point(x_new)?;
        self.check_point(x_old)?;
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if let Kind::Deterministic(b) = &self.kind {
            self.queries += 2 * batch as u64;
            return Ok((b.gradient(x_new), b.gradient(x_old)));
        }
        if batch == 1 {
            let pair = self.paired_gradients(x_new, x_old);
            self.queries += 2;
            return Ok(pair);
        }
        let dim = x_new.len();
        let mut g_new = vec![0.0; dim];
        let mut g_old = vec![0.0; dim];
        for _ in 0..batch {
            let (a, b) = self.paired_gradients(x_new, x_old);
            for i in 0..dim {
                g_new[i] += a[i];
                g_old[i] += b[i];
            }
        }
        let inv = 1.0 / batch as f64;
        for i in 0..dim {
            g_new[i] *= inv;
            g_old[i] *= inv;
        }
        self.queries += 2 * batch as u64;
        Ok((g_new, g_old))
    }

    fn paired_gradients(&mut self, x_new: &[f64], x_old: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            Kind::Deterministic(b) => (b.gradient(x_new), b.gradient(x_old)),
            Kind::FiniteSum(cs) => {
                let i = self.rng.random_range(0..cs.len());
                (cs[i].gradient(x_new), cs[i].gradient(x_old))
            }
            Kind::StreamingGaussian { base, sigma } => {
                let mut a = base.gradient(x_new);
                let mut b = base.gradient(x_old);
                let scale = sigma / (a.len() as f64).sqrt();
                for i in 0..a.len() {
                    let z: f64 = self.rng.sample(StandardNormal);
                    a[i] += scale * z;
                    b[i] += scale * z;
                }
                (a, b)
            }
        }
    }

    /// Large-batch gradient estimate for reporting only: drawn from the
    /// diagnostic stream and charged to the diagnostic counter, so the
    /// algorithm's sample sequence is untouched.
    pub fn diagnostic_gradient(&mut self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_point(x)?;
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        let mut mean = vec![0.0; x.len()];
        for _ in 0..batch {
            let g = Self::gradient_with_rng(&self.kind, &mut self.diag_rng, x);
            for (mi, gi) in mean.iter_mut().zip(&g) {
                *mi += gi;
            }
        }
        let inv = 1.0 / batch as f64;
        for mi in mean.iter_mut() {
            *mi *= inv;
        }
        self.diagnostic_queries += batch as u64;
        Ok(mean)
    }

    /// Adds `n` to the algorithm query counter without sampling. Used by
    /// baseline estimators that evaluate full finite-sum gradients.
    pub fn charge_queries(&mut self, n: u64) {
        self.queries += n;
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
                context: "oracle query point",
            });
        }
        Ok(())
    }
}

/// Quadratic objective 0.5 x'Px - q'x with exact gradient Px - q.
/// P is given row-major and must be symmetric positive semidefinite.
pub struct QuadraticLoss {
    pub p: crate::linalg::DenseMatrix,
    pub q: Vec<f64>,
    pub lipschitz: f64,
}

impl SmoothLoss for QuadraticLoss {
    fn value(&self, x: &[f64]) -> f64 {
        let px = self.p.matvec(x);
        0.5 * crate::linalg::dot(x, &px) - crate::linalg::dot(&self.q, x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.p.matvec(x);
        for (gi, qi) in g.iter_mut().zip(&self.q) {
            *gi -= qi;
        }
        g
    }
    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
    fn dim(&self) -> usize {
        self.q.len()
    }
}

/// Central finite-difference gradient, for checking analytic gradients.
pub fn finite_difference_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}
