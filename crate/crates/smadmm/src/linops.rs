//! Linear operators for the constraint maps and proximal metrics, together
//! with the spectral quantities the parameter schedules need.

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Iteration cap for power/shifted-power eigenvalue estimation.
const SPECTRAL_MAX_ITERS: usize = 10_000;
/// Relative tolerance for eigenvalue estimates.
const SPECTRAL_TOL: f64 = 1e-8;

/// Sparse matrix in compressed-row form. Built from coordinate triplets;
/// duplicate entries are summed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) out of bounds for {rows}x{cols} matrix"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
            row_ptr[r + 1] = col_idx.len();
        }
        // make row_ptr cumulative across empty rows
        for r in 0..rows {
            if row_ptr[r + 1] < row_ptr[r] {
                row_ptr[r + 1] = row_ptr[r];
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * u[self.col_idx[k]];
            }
            out[r] = s;
        }
        out
    }

    pub fn matvec_t(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let wr = w[r];
            if wr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col_idx[k]] += self.values[k] * wr;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m.set(r, self.col_idx[k], self.values[k]);
            }
        }
        m
    }
}

/// A real linear operator with explicit apply/adjoint.
#[derive(Debug, Clone)]
pub enum LinearMap {
    Dense(DenseMatrix),
    Sparse(SparseMatrix),
    Identity(usize),
    NegIdentity(usize),
    ScaledIdentity { dim: usize, scale: f64 },
    /// Vertical stack [top; bottom; ...]; all blocks share the column count.
    VStack(Vec<LinearMap>),
}

impl LinearMap {
    pub fn identity(n: usize) -> Self {
        LinearMap::Identity(n)
    }

    pub fn neg_identity(n: usize) -> Self {
        LinearMap::NegIdentity(n)
    }

    pub fn dense(m: DenseMatrix) -> Self {
        LinearMap::Dense(m)
    }

    pub fn vstack(blocks: Vec<LinearMap>) -> Result<Self> {
        let cols = match blocks.first() {
            Some(b) => b.cols(),
            None => {
                return Err(Error::InvalidArgument(
                    "vertical stack needs at least one block".into(),
                ))
            }
        };
        for b in &blocks {
            if b.cols() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: b.cols(),
                    context: "vertical stack column count",
                });
            }
        }
        Ok(LinearMap::VStack(blocks))
    }

    pub fn rows(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.rows(),
            LinearMap::Sparse(m) => m.rows(),
            LinearMap::Identity(n) | LinearMap::NegIdentity(n) => *n,
            LinearMap::ScaledIdentity { dim, .. } => *dim,
            LinearMap::VStack(blocks) => blocks.iter().map(LinearMap::rows).sum(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.cols(),
            LinearMap::Sparse(m) => m.cols(),
            LinearMap::Identity(n) | LinearMap::NegIdentity(n) => *n,
            LinearMap::ScaledIdentity { dim, .. } => *dim,
            LinearMap::VStack(blocks) => blocks[0].cols(),
        }
    }

    /// Matrix-vector product.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                got: u.len(),
                context: "apply input length",
            });
        }
        Ok(self.apply_unchecked(u))
    }

    fn apply_unchecked(&self, u: &[f64]) -> Vec<f64> {
        match self {
            LinearMap::Dense(m) => m.matvec(u),
            LinearMap::Sparse(m) => m.matvec(u),
            LinearMap::Identity(_) => u.to_vec(),
            LinearMap::NegIdentity(_) => u.iter().map(|x| -x).collect(),
            LinearMap::ScaledIdentity { scale, .. } => u.iter().map(|x| scale * x).collect(),
            LinearMap::VStack(blocks) => {
                let mut out = Vec::with_capacity(self.rows());
                for b in blocks {
                    out.extend(b.apply_unchecked(u));
                }
                out
            }
        }
    }

    /// Transpose-vector product: `apply` and `adjoint_apply` satisfy
    /// <A u, w> = <u, A' w>.
    pub fn adjoint_apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.rows(),
                got: w.len(),
                context: "adjoint input length",
            });
        }
        Ok(self.adjoint_unchecked(w))
    }

    fn adjoint_unchecked(&self, w: &[f64]) -> Vec<f64> {
        match self {
            LinearMap::Dense(m) => m.matvec_t(w),
            LinearMap::Sparse(m) => m.matvec_t(w),
            LinearMap::Identity(_) => w.to_vec(),
            LinearMap::NegIdentity(_) => w.iter().map(|x| -x).collect(),
            LinearMap::ScaledIdentity { scale, .. } => w.iter().map(|x| scale * x).collect(),
            LinearMap::VStack(blocks) => {
                let mut out = vec![0.0; self.cols()];
                let mut offset = 0;
                for b in blocks {
                    let r = b.rows();
                    let part = b.adjoint_unchecked(&w[offset..offset + r]);
                    for (o, p) in out.iter_mut().zip(&part) {
                        *o += p;
                    }
                    offset += r;
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            LinearMap::Dense(m) => m.clone(),
            LinearMap::Sparse(m) => m.to_dense(),
            LinearMap::Identity(n) => DenseMatrix::identity(*n),
            LinearMap::NegIdentity(n) => DenseMatrix::identity(*n).scaled(-1.0),
            LinearMap::ScaledIdentity { dim, scale } => DenseMatrix::identity(*dim).scaled(*scale),
            LinearMap::VStack(blocks) => {
                let mut m = DenseMatrix::zeros(self.rows(), self.cols());
                let mut offset = 0;
                for b in blocks {
                    let d = b.to_dense();
                    for i in 0..d.rows() {
                        for j in 0..d.cols() {
                            m.set(offset + i, j, d.get(i, j));
                        }
                    }
                    offset += d.rows();
                }
                m
            }
        }
    }

    /// The scale when this map is (a multiple of) the identity.
    pub fn scaled_identity_factor(&self) -> Option<f64> {
        match self {
            LinearMap::Identity(_) => Some(1.0),
            LinearMap::NegIdentity(_) => Some(-1.0),
            LinearMap::ScaledIdentity { scale, .. } => Some(*scale),
            _ => None,
        }
    }

    fn is_scaled_identity(&self) -> Option<f64> {
        self.scaled_identity_factor()
    }
}

/// Which spectral quantity to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralMode {
    /// Smallest eigenvalue of the Gram matrix (AA' when rows <= cols,
    /// A'A otherwise, keeping the smaller eigenproblem).
    GramMin,
    /// Smallest and largest eigenvalues of a symmetric positive
    /// (semi)definite map.
    PdExtremes,
}

/// Spectral quantities of the operators entering the schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    /// Smallest eigenvalue of AA' (or A'A for tall full-column-rank maps).
    pub sigma_a: f64,
    /// Extreme eigenvalues of the x-update metric Q.
    pub phi_min: f64,
    pub phi_max: f64,
    /// Extreme eigenvalues of the y-update metric H.
    pub sigma_min_h: f64,
    pub sigma_max_h: f64,
}

impl SpectralSummary {
    pub fn identity() -> Self {
        Self {
            sigma_a: 1.0,
            phi_min: 1.0,
            phi_max: 1.0,
            sigma_min_h: 1.0,
            sigma_max_h: 1.0,
        }
    }
}

/// Estimates the requested spectral quantity. Identity-like and diagonal maps
/// are handled in closed form; everything else goes through power iteration
/// for the largest eigenvalue and a shifted power iteration for the smallest.
pub fn spectral_summary(map: &LinearMap, mode: SpectralMode) -> Result<SpectralSummary> {
    let mut summary = SpectralSummary {
        sigma_a: f64::NAN,
        phi_min: f64::NAN,
        phi_max: f64::NAN,
        sigma_min_h: f64::NAN,
        sigma_max_h: f64::NAN,
    };
    match mode {
        SpectralMode::GramMin => {
            summary.sigma_a = smallest_gram_eigenvalue(map)?;
        }
        SpectralMode::PdExtremes => {
            let (lo, hi) = pd_extremes(map)?;
            summary.phi_min = lo;
            summary.phi_max = hi;
            summary.sigma_min_h = lo;
            summary.sigma_max_h = hi;
        }
    }
    Ok(summary)
}

/// Smallest eigenvalue of AA' (rows <= cols) or A'A (rows > cols).
pub fn smallest_gram_eigenvalue(map: &LinearMap) -> Result<f64> {
    if let Some(s) = map.is_scaled_identity() {
        return Ok(s * s);
    }
    let (dim, gram_apply): (usize, Box<dyn Fn(&[f64]) -> Vec<f64> + '_>) =
        if map.rows() <= map.cols() {
            (
                map.rows(),
                Box::new(move |u: &[f64]| map.apply_unchecked(&map.adjoint_unchecked(u))),
            )
        } else {
            (
                map.cols(),
                Box::new(move |u: &[f64]| map.adjoint_unchecked(&map.apply_unchecked(u))),
            )
        };
    let largest = power_iteration(dim, &gram_apply)?;
    if largest == 0.0 {
        // zero operator
        return Ok(0.0);
    }
    // shifted operator (largest*I - G) has largest eigenvalue largest - min(G)
    let shift = largest * (1.0 + 1e-3);
    let shifted = |u: &[f64]| {
        let gu = gram_apply(u);
        u.iter().zip(&gu).map(|(ui, gi)| shift * ui - gi).collect()
    };
    let mu = power_iteration(dim, &shifted)?;
    Ok((shift - mu).max(0.0))
}

/// Extreme eigenvalues of a symmetric PSD operator.
pub fn pd_extremes(map: &LinearMap) -> Result<(f64, f64)> {
    if map.rows() != map.cols() {
        return Err(Error::InvalidArgument(
            "eigenvalue extremes need a square symmetric map".into(),
        ));
    }
    if let Some(s) = map.is_scaled_identity() {
        return Ok((s, s));
    }
    let dim = map.rows();
    let apply = |u: &[f64]| map.apply_unchecked(u);
    let largest = power_iteration(dim, &apply)?;
    if largest == 0.0 {
        return Ok((0.0, 0.0));
    }
    let shift = largest * (1.0 + 1e-3);
    let shifted = |u: &[f64]| {
        let mu = apply(u);
        u.iter().zip(&mu).map(|(ui, mi)| shift * ui - mi).collect()
    };
    let mu = power_iteration(dim, &shifted)?;
    Ok(((shift - mu).max(0.0), largest))
}

/// Operator 2-norm, ||A||_2 = sqrt(lambda_max(A'A)).
pub fn operator_norm(map: &LinearMap) -> Result<f64> {
    if let Some(s) = map.is_scaled_identity() {
        return Ok(s.abs());
    }
    let dim = map.cols();
    let gram = |u: &[f64]| map.adjoint_unchecked(&map.apply_unchecked(u));
    Ok(power_iteration(dim, &gram)?.max(0.0).sqrt())
}

/// Largest eigenvalue of A'A.
pub fn gram_largest_eigenvalue(map: &LinearMap) -> Result<f64> {
    let n = operator_norm(map)?;
    Ok(n * n)
}

/// Largest eigenvalue of a symmetric PSD map (forward power iteration only;
/// usable when the smallest eigenvalue clusters near zero and the shifted
/// iteration would stall).
pub fn largest_eigenvalue(map: &LinearMap) -> Result<f64> {
    if map.rows() != map.cols() {
        return Err(Error::InvalidArgument(
            "largest eigenvalue needs a square symmetric map".into(),
        ));
    }
    if let Some(s) = map.is_scaled_identity() {
        return Ok(s);
    }
    power_iteration(map.rows(), &|u: &[f64]| map.apply_unchecked(u))
}

/// Power iteration for the largest eigenvalue of a symmetric PSD operator.
/// The start vector comes from a fixed-seed generator so estimates are
/// reproducible.
fn power_iteration(dim: usize, apply: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<f64> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "power iteration on an empty operator".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0123 ^ dim as u64);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let nrm = linalg::norm(&v);
    linalg::scale(1.0 / nrm, &mut v);

    let mut lambda = 0.0;
    let mut resid = f64::INFINITY;
    for _ in 0..SPECTRAL_MAX_ITERS {
        let mut w = apply(&v);
        lambda = linalg::dot(&v, &w);
        // for symmetric operators the eigen-residual ||Mv - lambda v||
        // bounds the eigenvalue error
        resid = {
            let mut r = w.clone();
            linalg::axpy(-lambda, &v, &mut r);
            linalg::norm(&r)
        };
        let wn = linalg::norm(&w);
        if wn <= f64::MIN_POSITIVE * dim as f64 {
            // operator annihilates the iterate: eigenvalue 0
            return Ok(0.0);
        }
        linalg::scale(1.0 / wn, &mut w);
        v = w;
        if resid <= SPECTRAL_TOL * (1.0 + lambda.abs()) {
            return Ok(lambda);
        }
    }
    Err(Error::SpectralNoConvergence {
        iterations: SPECTRAL_MAX_ITERS,
        estimate: lambda,
        residual: resid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph_row() -> LinearMap {
        LinearMap::dense(DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap())
    }

    #[test]
    fn identity_apply_is_identity() {
        let m = LinearMap::identity(3);
        assert_eq!(m.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn stack_apply_concatenates_blocks() {
        let a = LinearMap::vstack(vec![graph_row(), LinearMap::identity(2)]).unwrap();
        assert_eq!(a.rows(), 3);
        assert_eq!(a.cols(), 2);
        assert_eq!(a.apply(&[2.0, 5.0]).unwrap(), vec![-3.0, 2.0, 5.0]);
    }

    #[test]
    fn neg_identity_flips_sign() {
        let m = LinearMap::neg_identity(1);
        assert_eq!(m.apply(&[4.0]).unwrap(), vec![-4.0]);
    }

    #[test]
    fn identity_adjoint_is_identity() {
        let m = LinearMap::identity(2);
        assert_eq!(m.adjoint_apply(&[7.0, 8.0]).unwrap(), vec![7.0, 8.0]);
    }

    #[test]
    fn single_row_adjoint_is_transpose() {
        assert_eq!(graph_row().adjoint_apply(&[3.0]).unwrap(), vec![3.0, -3.0]);
    }

    #[test]
    fn stack_adjoint_matches_dense_transpose() {
        let a = LinearMap::vstack(vec![graph_row(), LinearMap::identity(2)]).unwrap();
        let got = a.adjoint_apply(&[1.0, 1.0, 1.0]).unwrap();
        // cross-check against an explicit dense transpose multiply
        let dense = a.to_dense();
        let expected = dense.matvec_t(&[1.0, 1.0, 1.0]);
        assert_eq!(got, expected);
        assert_eq!(got, vec![2.0, 0.0]);
    }

    #[test]
    fn apply_rejects_wrong_dimension() {
        let m = LinearMap::identity(3);
        assert!(m.apply(&[1.0]).is_err());
        assert!(m.adjoint_apply(&[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn sparse_sums_duplicate_triplets() {
        let s = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 4.0)]).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.matvec(&[1.0, 1.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn identity_spectrum_is_exact() {
        let s = spectral_summary(&LinearMap::identity(5), SpectralMode::GramMin).unwrap();
        assert_eq!(s.sigma_a, 1.0);
        let e = spectral_summary(&LinearMap::identity(5), SpectralMode::PdExtremes).unwrap();
        assert_eq!((e.phi_min, e.phi_max), (1.0, 1.0));
    }

    #[test]
    fn diagonal_gram_min_matches_squared_entries() {
        let d = LinearMap::dense(
            DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap(),
        );
        let sigma = smallest_gram_eigenvalue(&d).unwrap();
        assert!((sigma - 4.0).abs() < 1e-6 * 4.0);
    }

    #[test]
    fn zero_map_reports_zero_sigma() {
        let z = LinearMap::dense(DenseMatrix::zeros(3, 3));
        assert_eq!(smallest_gram_eigenvalue(&z).unwrap(), 0.0);
    }

    /// Dense symmetric eigendecomposition (external) as the oracle for the
    /// power-iteration path.
    #[test]
    fn gram_min_matches_dense_eigensolver_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let rows = 4;
            let cols = 6;
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let a = DenseMatrix::from_row_major(rows, cols, data.clone()).unwrap();
            let map = LinearMap::dense(a);
            let est = smallest_gram_eigenvalue(&map).unwrap();

            let na = DMatrix::from_row_slice(rows, cols, &data);
            let gram = &na * na.transpose();
            let eigs = gram.symmetric_eigenvalues();
            let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                (est - min_eig).abs() <= 1e-6 * min_eig.max(1e-12),
                "power iteration {est} vs oracle {min_eig}"
            );
        }
    }

    #[test]
    fn pd_extremes_match_dense_eigensolver_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 5;
        let data: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let b = DMatrix::from_row_slice(n, n, &data);
        let spd = &b * b.transpose() + DMatrix::<f64>::identity(n, n) * 0.5;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| spd[(i, j)]).collect())
            .collect();
        let map = LinearMap::dense(DenseMatrix::from_rows(&rows).unwrap());
        let (lo, hi) = pd_extremes(&map).unwrap();
        let eigs = spd.symmetric_eigenvalues();
        let lo_true = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_true = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - lo_true).abs() <= 1e-6 * lo_true);
        assert!((hi - hi_true).abs() <= 1e-6 * hi_true);
    }

    #[test]
    fn spectral_sandwich_holds_for_estimated_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4;
        let data: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let b = DMatrix::from_row_slice(n, n, &data);
        let spd = &b * b.transpose() + DMatrix::<f64>::identity(n, n) * 0.3;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| spd[(i, j)]).collect())
            .collect();
        let map = LinearMap::dense(DenseMatrix::from_rows(&rows).unwrap());
        let (lo, hi) = pd_extremes(&map).unwrap();
        for _ in 0..100 {
            let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let qu = map.apply(&u).unwrap();
            let quad = linalg::dot(&u, &qu);
            let nsq = linalg::norm_sq(&u);
            assert!(quad >= lo * nsq * (1.0 - 1e-8) - 1e-12);
            assert!(quad <= hi * nsq * (1.0 + 1e-8) + 1e-12);
        }
    }

    proptest! {
        /// <Au, w> == <u, A'w> for every representation.
        #[test]
        fn adjoint_consistency(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = rng.random_range(1..6usize);
            let cols = rng.random_range(1..6usize);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let maps = vec![
                LinearMap::dense(DenseMatrix::from_row_major(rows, cols, data.clone()).unwrap()),
                LinearMap::identity(cols),
                LinearMap::neg_identity(cols),
                LinearMap::ScaledIdentity { dim: cols, scale: 2.5 },
                LinearMap::vstack(vec![
                    LinearMap::dense(DenseMatrix::from_row_major(rows, cols, data).unwrap()),
                    LinearMap::identity(cols),
                ]).unwrap(),
            ];
            for m in maps {
                let u: Vec<f64> = (0..m.cols()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let w: Vec<f64> = (0..m.rows()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let left = linalg::dot(&m.apply(&u).unwrap(), &w);
                let right = linalg::dot(&u, &m.adjoint_apply(&w).unwrap());
                prop_assert!((left - right).abs() <= 1e-10 * (1.0 + left.abs()));
            }
        }

        /// [G; I] applied to u is exactly the concatenation of G u and u.
        #[test]
        fn stack_matches_concatenation(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = rng.random_range(1..5usize);
            let cols = rng.random_range(1..5usize);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let g = DenseMatrix::from_row_major(rows, cols, data).unwrap();
            let stack = LinearMap::vstack(vec![
                LinearMap::dense(g.clone()),
                LinearMap::identity(cols),
            ]).unwrap();
            let u: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let got = stack.apply(&u).unwrap();
            let mut expected = g.matvec(&u);
            expected.extend_from_slice(&u);
            prop_assert_eq!(got, expected);
        }
    }
}
