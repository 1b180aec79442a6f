//! Benchmark problem constructors: graph-guided fused lasso over sparse
//! classification datasets, and synthetic composite instances for
//! verification at desk scale.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::linops::{self, LinearMap, SparseMatrix};
use crate::oracle::{SmoothLoss, StochasticOracle};
use crate::prox::Regularizer;
use crate::solver::{Problem, ProxMetric};

/// Largest absolute second derivative of the sigmoid 1/(1+e^z).
const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_64; // 1/(6 sqrt(3))

/// One labeled sparse sample; feature indices are 0-based and strictly
/// increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: f64,
    pub features: Vec<(usize, f64)>,
}

impl Sample {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.features.iter().map(|&(i, v)| v * x[i]).sum()
    }
}

/// Per-feature scaling applied at load time, recorded for reproducibility.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScale {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_features: usize,
    /// Empty unless min-max normalization was applied.
    pub normalization: Vec<FeatureScale>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Min-max normalization to [0, 1] per feature, recording the scales.
    /// Constant features are left untouched.
    pub fn normalize_min_max(&mut self) {
        let mut lo = vec![f64::INFINITY; self.n_features];
        let mut hi = vec![f64::NEG_INFINITY; self.n_features];
        for s in &self.samples {
            for &(i, v) in &s.features {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        for s in &mut self.samples {
            for (i, v) in s.features.iter_mut() {
                let (l, h) = (lo[*i], hi[*i]);
                if h > l {
                    *v = (*v - l) / (h - l);
                }
            }
        }
        self.normalization = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| FeatureScale { min: l, max: h })
            .collect();
    }

    /// Deterministic split into two halves by a seeded shuffle.
    pub fn split_half(&self, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let cut = idx.len() / 2;
        let pick = |ids: &[usize]| Dataset {
            samples: ids.iter().map(|&i| self.samples[i].clone()).collect(),
            n_features: self.n_features,
            normalization: self.normalization.clone(),
        };
        (pick(&idx[..cut]), pick(&idx[cut..]))
    }
}

/// Parses the sparse `label index:value ...` text format (1-based indices).
/// Labels in {0, 1} or {-1, +1} are mapped to {-1, +1}; anything else is a
/// parse error naming the line, as are non-numeric tokens and nonincreasing
/// indices within a line.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut n_features = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let mut tokens = text.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a first token");
        let raw: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("label '{label_tok}' is not numeric"),
        })?;
        let label = match raw {
            r if r == 1.0 => 1.0,
            r if r == -1.0 || r == 0.0 => -1.0,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("label {other} is not binary ({{0,1}} or {{-1,+1}})"),
                })
            }
        };
        let mut features = Vec::new();
        let mut last_index: Option<usize> = None;
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("feature token '{tok}' is not index:value"),
            })?;
            let one_based: usize = idx_s.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("feature index '{idx_s}' is not an integer"),
            })?;
            if one_based == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "feature indices are 1-based; found 0".into(),
                });
            }
            let value: f64 = val_s.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("feature value '{val_s}' is not numeric"),
            })?;
            let idx = one_based - 1;
            if let Some(prev) = last_index {
                if idx <= prev {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!(
                            "feature indices must be strictly increasing ({} after {})",
                            one_based,
                            prev + 1
                        ),
                    });
                }
            }
            last_index = Some(idx);
            n_features = n_features.max(one_based);
            features.push((idx, value));
        }
        samples.push(Sample { label, features });
    }
    Ok(Dataset {
        samples,
        n_features,
        normalization: Vec::new(),
    })
}

/// Writes the same sparse text format back out (1-based indices).
pub fn write_libsvm<W: Write>(dataset: &Dataset, out: &mut W) -> std::io::Result<()> {
    for s in &dataset.samples {
        write!(out, "{}", if s.label > 0.0 { "+1" } else { "-1" })?;
        for &(i, v) in &s.features {
            write!(out, " {}:{}", i + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Sigmoid classification loss of one sample: value 1/(1+e^z) with
/// z = label * <a, x>, evaluated with sign-branched exponentials so large
/// |z| cannot overflow.
pub fn sigmoid_loss_grad(x: &[f64], label: f64, features: &[(usize, f64)]) -> (f64, Vec<f64>) {
    let z = label * features.iter().map(|&(i, v)| v * x[i]).sum::<f64>();
    let value = stable_sigmoid_of_neg(z);
    // d/dz [1/(1+e^z)] = -value (1 - value)
    let factor = -label * value * (1.0 - value);
    let mut grad = vec![0.0; x.len()];
    for &(i, v) in features {
        grad[i] = factor * v;
    }
    (value, grad)
}

/// 1/(1+e^z) without overflow for |z| > 30.
fn stable_sigmoid_of_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Loss component backed by one dataset sample.
pub struct SigmoidSampleLoss {
    pub sample: Sample,
    pub dim: usize,
}

impl SmoothLoss for SigmoidSampleLoss {
    fn value(&self, x: &[f64]) -> f64 {
        let z = self.sample.label * self.sample.dot(x);
        stable_sigmoid_of_neg(z)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        sigmoid_loss_grad(x, self.sample.label, &self.sample.features).1
    }
    fn lipschitz(&self) -> Option<f64> {
        let norm_sq: f64 = self.sample.features.iter().map(|&(_, v)| v * v).sum();
        Some(SIGMOID_CURVATURE * norm_sq)
    }
    fn dim(&self) -> usize {
        self.dim
    }
}

/// Mean sigmoid loss over a whole dataset as one smooth field; used as the
/// base of streaming oracles and for test-loss reporting.
pub struct MeanSigmoidLoss {
    pub dataset: Arc<Dataset>,
}

impl SmoothLoss for MeanSigmoidLoss {
    fn value(&self, x: &[f64]) -> f64 {
        let s: f64 = self
            .dataset
            .samples
            .iter()
            .map(|smp| stable_sigmoid_of_neg(smp.label * smp.dot(x)))
            .sum();
        s / self.dataset.len() as f64
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dataset.n_features];
        for smp in &self.dataset.samples {
            let z = smp.label * smp.dot(x);
            let value = stable_sigmoid_of_neg(z);
            let factor = -smp.label * value * (1.0 - value);
            for &(i, v) in &smp.features {
                g[i] += factor * v;
            }
        }
        let inv = 1.0 / self.dataset.len() as f64;
        for gi in g.iter_mut() {
            *gi *= inv;
        }
        g
    }
    fn lipschitz(&self) -> Option<f64> {
        // curvature bound times the largest eigenvalue of the second-moment
        // matrix; cheap upper bound via the max row norm instead
        let worst = self
            .dataset
            .samples
            .iter()
            .map(|s| s.features.iter().map(|&(_, v)| v * v).sum::<f64>())
            .fold(0.0f64, f64::max);
        Some(SIGMOID_CURVATURE * worst)
    }
    fn dim(&self) -> usize {
        self.dataset.n_features
    }
}

/// Mean sigmoid loss of `x` over a dataset.
pub fn mean_sigmoid_loss(dataset: &Dataset, x: &[f64]) -> f64 {
    let s: f64 = dataset
        .samples
        .iter()
        .map(|smp| stable_sigmoid_of_neg(smp.label * smp.dot(x)))
        .sum();
    s / dataset.len() as f64
}

/// Fraction of samples with label * <a, x> <= 0.
pub fn zero_one_error(dataset: &Dataset, x: &[f64]) -> f64 {
    let wrong = dataset
        .samples
        .iter()
        .filter(|smp| smp.label * smp.dot(x) <= 0.0)
        .count();
    wrong as f64 / dataset.len() as f64
}

/// Thresholded-correlation fusion graph: one row e_i - e_j for every feature
/// pair with |corr| >= threshold (i < j, lexicographic order). Constant
/// features have their correlations defined as zero and never produce edges.
pub fn build_graph_matrix(dataset: &Dataset, corr_threshold: f64) -> Result<SparseMatrix> {
    if corr_threshold <= 0.0 {
        return Err(Error::InvalidArgument(
            "correlation threshold must be positive".into(),
        ));
    }
    let m = dataset.n_features;
    let n = dataset.len() as f64;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "graph construction needs a nonempty dataset".into(),
        ));
    }
    let mut sums = vec![0.0; m];
    let mut gram = DenseMatrix::zeros(m, m);
    for s in &dataset.samples {
        for &(i, vi) in &s.features {
            sums[i] += vi;
            for &(j, vj) in &s.features {
                if j >= i {
                    gram.set(i, j, gram.get(i, j) + vi * vj);
                }
            }
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let vars: Vec<f64> = (0..m)
        .map(|i| (gram.get(i, i) / n - means[i] * means[i]).max(0.0))
        .collect();
    let mut triplets = Vec::new();
    let mut edges = 0usize;
    for i in 0..m {
        if vars[i] <= 1e-12 {
            continue;
        }
        for j in (i + 1)..m {
            if vars[j] <= 1e-12 {
                continue;
            }
            let cov = gram.get(i, j) / n - means[i] * means[j];
            let corr = cov / (vars[i] * vars[j]).sqrt();
            if corr.abs() >= corr_threshold {
                triplets.push((edges, i, 1.0));
                triplets.push((edges, j, -1.0));
                edges += 1;
            }
        }
    }
    SparseMatrix::from_triplets(edges, m, &triplets)
}

/// Graph-guided fused lasso over a classification dataset:
/// mean sigmoid loss plus l1 on [G; I] x through the splitting constraint
/// [G; I] x - y = 0.
pub struct FusedLasso {
    pub problem: Problem,
    pub edges: usize,
    pub lipschitz: f64,
    pub dataset: Arc<Dataset>,
}

pub fn fused_lasso_problem(
    dataset: Dataset,
    lambda1: f64,
    corr_threshold: f64,
    oracle_seed: u64,
) -> Result<FusedLasso> {
    let g = build_graph_matrix(&dataset, corr_threshold)?;
    let edges = g.rows();
    let m = dataset.n_features;
    let a_map = LinearMap::vstack(vec![
        LinearMap::Sparse(g),
        LinearMap::identity(m),
    ])?;
    let p = a_map.rows();
    let dataset = Arc::new(dataset);
    let components: Vec<Arc<dyn SmoothLoss>> = dataset
        .samples
        .iter()
        .map(|s| {
            Arc::new(SigmoidSampleLoss {
                sample: s.clone(),
                dim: m,
            }) as Arc<dyn SmoothLoss>
        })
        .collect();
    let oracle = StochasticOracle::finite_sum(components, oracle_seed)?;
    let lipschitz = MeanSigmoidLoss {
        dataset: dataset.clone(),
    }
    .lipschitz()
    .unwrap();
    let problem = Problem::new(
        oracle,
        Regularizer::l1(lambda1)?,
        a_map,
        LinearMap::neg_identity(p),
        vec![0.0; p],
        ProxMetric::Margin(0.05),
    )?;
    Ok(FusedLasso {
        problem,
        edges,
        lipschitz,
        dataset,
    })
}

/// Kind of synthetic smooth term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convexity {
    ConvexQuadratic,
    NonconvexSigmoid,
}

/// Synthetic consensus instance with known structure. For the quadratic kind
/// the curvature matrix has an exactly known spectrum, so the smoothness
/// constant is exact; for the sigmoid kind it is a curvature bound from the
/// sample second-moment matrix.
pub struct Synthetic {
    pub problem: Problem,
    pub lipschitz: f64,
    /// Quadratic data (P, q) when the smooth term is 0.5 x'Px - q'x.
    pub quadratic: Option<(DenseMatrix, Vec<f64>)>,
    pub dataset: Option<Arc<Dataset>>,
    pub reg_weight: f64,
}

/// Builds a consensus instance (A = I, B = -I, c = 0) of dimension n with
/// an l1 regularizer. `noise_sigma = 0` yields a deterministic oracle.
pub fn synthetic_composite(
    n: usize,
    seed: u64,
    noise_sigma: f64,
    convexity: Convexity,
) -> Result<Synthetic> {
    synthetic_composite_with(n, seed, noise_sigma, convexity, 0.1)
}

pub fn synthetic_composite_with(
    n: usize,
    seed: u64,
    noise_sigma: f64,
    convexity: Convexity,
    reg_weight: f64,
) -> Result<Synthetic> {
    synthetic_composite_seeded(n, seed, seed ^ 0xA5A5, noise_sigma, convexity, reg_weight)
}

/// Root constructor with separate data and oracle seeds, so multi-seed runs
/// share one instance bitwise while drawing independent sample streams.
pub fn synthetic_composite_seeded(
    n: usize,
    data_seed: u64,
    oracle_seed: u64,
    noise_sigma: f64,
    convexity: Convexity,
    reg_weight: f64,
) -> Result<Synthetic> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(data_seed);
    let h = Regularizer::l1(reg_weight)?;
    match convexity {
        Convexity::ConvexQuadratic => {
            // P = R D R with R a Householder reflector, so the spectrum is
            // exactly the chosen diagonal
            let eigs: Vec<f64> = (0..n)
                .map(|_| 0.5 + 1.5 * rng.random::<f64>())
                .collect();
            let lipschitz = eigs.iter().cloned().fold(0.0f64, f64::max);
            let mut u: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let un = linalg::norm(&u);
            linalg::scale(1.0 / un, &mut u);
            let mut p = DenseMatrix::zeros(n, n);
            // (R D R)_{ij} with R = I - 2 u u'
            let mut r = DenseMatrix::identity(n);
            for i in 0..n {
                for j in 0..n {
                    r.set(i, j, r.get(i, j) - 2.0 * u[i] * u[j]);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += r.get(i, k) * eigs[k] * r.get(j, k);
                    }
                    p.set(i, j, s);
                }
            }
            let q: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let loss = Arc::new(crate::oracle::QuadraticLoss {
                p: p.clone(),
                q: q.clone(),
                lipschitz,
            });
            let oracle = if noise_sigma > 0.0 {
                StochasticOracle::streaming_gaussian(loss, noise_sigma, oracle_seed)?
            } else {
                StochasticOracle::deterministic(loss, oracle_seed)
            };
            let problem = Problem::consensus(oracle, h, ProxMetric::Margin(0.05))?;
            Ok(Synthetic {
                problem,
                lipschitz,
                quadratic: Some((p, q)),
                dataset: None,
                reg_weight,
            })
        }
        Convexity::NonconvexSigmoid => {
            let samples_n = 4 * n.max(25);
            let scale = 1.0 / (n as f64).sqrt();
            let planted: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mut samples = Vec::with_capacity(samples_n);
            for _ in 0..samples_n {
                let feats: Vec<(usize, f64)> = (0..n)
                    .map(|i| (i, scale * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                let score: f64 = feats.iter().map(|&(i, v)| v * planted[i]).sum();
                // 20% label flips keep the optimum away from infinity
                let flip = rng.random::<f64>() < 0.2;
                let label = if (score >= 0.0) ^ flip { 1.0 } else { -1.0 };
                samples.push(Sample {
                    label,
                    features: feats,
                });
            }
            let dataset = Arc::new(Dataset {
                samples,
                n_features: n,
                normalization: Vec::new(),
            });
            let base = Arc::new(MeanSigmoidLoss {
                dataset: dataset.clone(),
            });
            // curvature bound via the exact largest second-moment eigenvalue
            let mut second_moment = DenseMatrix::zeros(n, n);
            for s in &dataset.samples {
                for &(i, vi) in &s.features {
                    for &(j, vj) in &s.features {
                        second_moment.set(i, j, second_moment.get(i, j) + vi * vj);
                    }
                }
            }
            let inv = 1.0 / dataset.len() as f64;
            let second_moment = second_moment.scaled(inv);
            let top = linops::largest_eigenvalue(&LinearMap::dense(second_moment))?;
            let lipschitz = SIGMOID_CURVATURE * top;
            let oracle = if noise_sigma > 0.0 {
                StochasticOracle::streaming_gaussian(base, noise_sigma, oracle_seed)?
            } else {
                StochasticOracle::deterministic(base, oracle_seed)
            };
            let problem = Problem::consensus(oracle, h, ProxMetric::Margin(0.05))?;
            Ok(Synthetic {
                problem,
                lipschitz,
                quadratic: None,
                dataset: Some(dataset),
                reg_weight,
            })
        }
    }
}

/// Sparse binary classification dataset in the style of one-hot encoded
/// census data: `fields` categorical fields are one-hot encoded (one active
/// feature per field per row), a few echo features copy other features with
/// high fidelity so the correlation graph has planted edges, and labels come
/// from a sparse logistic model with label noise. Deterministic in the seed.
pub fn synthetic_binary_dataset(
    rows: usize,
    fields: usize,
    categories_per_field: usize,
    echo_features: usize,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let base_features = fields * categories_per_field;
    let n_features = base_features + echo_features;
    // weights of the planted label model
    let weights: Vec<f64> = (0..n_features)
        .map(|_| {
            if rng.random::<f64>() < 0.3 {
                2.0 * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut features = Vec::with_capacity(fields + echo_features);
        for f in 0..fields {
            let cat = rng.random_range(0..categories_per_field);
            features.push((f * categories_per_field + cat, 1.0));
        }
        // echo feature e mirrors base feature e with 95% fidelity
        for e in 0..echo_features {
            let source_active = features.iter().any(|&(i, _)| i == e);
            let active = if rng.random::<f64>() < 0.95 {
                source_active
            } else {
                rng.random::<f64>() < 1.0 / categories_per_field as f64
            };
            if active {
                features.push((base_features + e, 1.0));
            }
        }
        features.sort_by_key(|&(i, _)| i);
        let score: f64 = features.iter().map(|&(i, _)| weights[i]).sum();
        let flip = rng.random::<f64>() < 0.1;
        let label = if (score >= 0.0) ^ flip { 1.0 } else { -1.0 };
        samples.push(Sample { label, features });
    }
    Dataset {
        samples,
        n_features,
        normalization: Vec::new(),
    }
}
