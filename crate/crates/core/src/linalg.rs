//! Sparse matrices, dominant-eigenvalue estimation and the ridge solve.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CooMatrix", try_from = "CooMatrix")]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-list form used for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooMatrix {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl From<SparseMatrix> for CooMatrix {
    fn from(m: SparseMatrix) -> Self {
        let mut rows = Vec::with_capacity(m.values.len());
        for i in 0..m.n {
            rows.extend(std::iter::repeat(i).take(m.row_ptr[i + 1] - m.row_ptr[i]));
        }
        CooMatrix {
            n: m.n,
            rows,
            cols: m.col_idx,
            values: m.values,
        }
    }
}

impl TryFrom<CooMatrix> for SparseMatrix {
    type Error = Error;

    fn try_from(c: CooMatrix) -> Result<Self> {
        if c.rows.len() != c.values.len() || c.cols.len() != c.values.len() {
            return Err(Error::Data("coordinate arrays differ in length".into()));
        }
        SparseMatrix::from_triplets(
            c.n,
            c.rows.into_iter().zip(c.cols).zip(c.values).map(|((r, c), v)| (r, c, v)),
        )
    }
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Entries are stored in
    /// row-major order; duplicates are rejected.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = t.iter().find(|(r, c, _)| *r >= n || *c >= n) {
            return Err(Error::Data(format!("entry ({r}, {c}) outside {n}x{n} matrix")));
        }
        t.sort_by_key(|&(r, c, _)| (r, c));
        if t.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Data("duplicate sparse entry".into()));
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _, _) in &t {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx: t.iter().map(|x| x.1).collect(),
            values: t.iter().map(|x| x.2).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `out = self * x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }
}

/// Anything that can be multiplied against a block of column vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64>;
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, v.ncols());
        for j in 0..v.ncols() {
            self.mul_vec_into(v.column(j).as_slice(), out.column_mut(j).as_mut_slice());
        }
        out
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        assert!(self.is_square(), "spectral radius needs a square matrix");
        self.nrows()
    }

    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIterationConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Number of vectors iterated together. Blocks of several vectors
    /// resolve complex-conjugate and `±λ` dominant pairs.
    pub block: usize,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iter: 10_000,
            block: 8,
        }
    }
}

const RITZ_EVERY: usize = 5;

/// Relative residual below which a Ritz pair counts as an eigenpair.
const RITZ_RESIDUAL_TOL: f64 = 1e-6;

/// Magnitude of the dominant eigenvalue by block power iteration with
/// Rayleigh–Ritz extraction. The start block is fixed, so results are
/// deterministic. Returns 0 for nilpotent (including zero) matrices.
///
/// If the dominant cluster is wider than the block and the iteration stalls,
/// the block is doubled and the iteration restarted.
pub fn spectral_radius<A: LinearOperator>(a: &A, cfg: &PowerIterationConfig) -> Result<f64> {
    let n = a.dim();
    if n == 0 {
        return Ok(0.0);
    }
    let mut k = cfg.block.clamp(1, n);
    loop {
        match block_power(a, k, cfg) {
            Err(Error::NoConvergence { .. }) if k < n => k = (2 * k).min(n),
            other => return other,
        }
    }
}

fn block_power<A: LinearOperator>(a: &A, k: usize, cfg: &PowerIterationConfig) -> Result<f64> {
    let n = a.dim();
    let mut v = if k == n {
        DMatrix::identity(n, n)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_5eed);
        let start = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
        start.qr().q()
    };
    let mut prev = f64::NAN;
    let mut stable = 0;
    let mut iter = 0;
    while iter < cfg.max_iter {
        let w = a.apply_block(&v);
        iter += 1;
        let scale = w.amax();
        if scale == 0.0 {
            return Ok(0.0);
        }
        if !scale.is_finite() {
            return Err(Error::Numerical("non-finite values in power iteration".into()));
        }
        if k == n {
            // The block spans the whole space: the Ritz values are exact.
            return Ok(ritz_values(&(v.transpose() * &w))?.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        match dominant_ritz(&v, &w)? {
            Some(mu) if (mu - prev).abs() <= cfg.rel_tol * mu.max(f64::MIN_POSITIVE) => {
                stable += 1;
                if stable >= 3 {
                    return Ok(mu);
                }
            }
            Some(mu) => {
                stable = 0;
                prev = mu;
            }
            None => stable = 0,
        }
        // Plain steps between orthonormalisations; the Ritz extraction is
        // the expensive part of an iteration.
        let mut x = w / scale;
        for _ in 1..RITZ_EVERY.min(cfg.max_iter - iter + 1) {
            x = a.apply_block(&x);
            iter += 1;
            let s = x.amax();
            if s == 0.0 {
                return Ok(0.0);
            }
            if !s.is_finite() {
                return Err(Error::Numerical("non-finite values in power iteration".into()));
            }
            x /= s;
        }
        v = x.qr().q();
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
    })
}

/// Eigenvalues of a small dense matrix. The Schur iteration is bounded
/// because the unbounded variant can stall on clustered eigenvalues.
fn ritz_values(h: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    for eps in [f64::EPSILON, 1e-12, 1e-9] {
        if let Some(schur) = nalgebra::linalg::Schur::try_new(h.clone(), eps, 2_000) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::Numerical("Schur decomposition of the Ritz matrix did not converge".into()))
}

/// Largest modulus among Ritz values of `span(v)` (with `w = A v`) whose
/// Ritz vectors are accurate eigenvectors of `A`. For non-normal `A` the
/// unconverged Ritz values can lie outside the spectrum, so they are skipped.
fn dominant_ritz(v: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Option<f64>> {
    let h = v.transpose() * w;
    let mut theta = ritz_values(&h)?;
    theta.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let k = h.nrows();
    let hc = h.map(|x| Complex::new(x, 0.0));
    let (vc, wc) = (v.map(|x| Complex::new(x, 0.0)), w.map(|x| Complex::new(x, 0.0)));
    for t in theta {
        if t.norm() == 0.0 {
            break;
        }
        // Ritz vector of `h` by two steps of shifted inverse iteration.
        let shift = t + Complex::new(1e-10 * t.norm(), 0.0);
        let lu = (&hc - DMatrix::identity(k, k) * shift).lu();
        let mut y = DVector::from_element(k, Complex::new(1.0, 0.0));
        for _ in 0..2 {
            match lu.solve(&y) {
                Some(next) if next.norm().is_finite() && next.norm() > 0.0 => y = &next / Complex::new(next.norm(), 0.0),
                _ => break,
            }
        }
        let residual = (&wc * &y - &vc * &y * t).norm();
        if residual <= RITZ_RESIDUAL_TOL * t.norm() {
            return Ok(Some(t.norm()));
        }
    }
    Ok(None)
}

/// Ridge readout: returns `W` (d × p) minimising `‖W X − Y‖² + β‖W‖²` where
/// `X` is p × T and `Y` is d × T. Solved from the normal equations
/// `(X Xᵀ + β I) Wᵀ = X Yᵀ` by Cholesky factorisation.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::Data(format!(
            "ridge: {} state columns vs {} target columns",
            x.ncols(),
            y.ncols()
        )));
    }
    if x.ncols() == 0 {
        return Err(Error::Data("ridge: no training samples".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("ridge parameter must be finite and >= 0, got {beta}")));
    }
    let p = x.nrows();
    let mut gram = DMatrix::zeros(p, p);
    gram.gemm(1.0, x, &x.transpose(), 0.0);
    for i in 0..p {
        gram[(i, i)] += beta;
    }
    let rhs = x * y.transpose();
    let singular = || {
        Error::Singular(format!(
            "normal equations are not positive definite at ridge {beta}; use a ridge parameter > 0"
        ))
    };
    let max_diag = (0..p).map(|i| gram[(i, i)]).fold(0.0f64, f64::max);
    let chol = gram.cholesky().ok_or_else(singular)?;
    // Cholesky succeeds on numerically rank-deficient systems with tiny
    // pivots; reject those when unregularised.
    let l = chol.l_dirty();
    let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if beta == 0.0 && min_pivot <= 1e-13 * max_diag {
        return Err(singular());
    }
    let wt = chol.solve(&rhs);
    if wt.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(wt.transpose())
}

/// `(x_1..x_n, x_1²..x_n²)`
pub fn augment_quadratic(r: &[f64]) -> DVector<f64> {
    let n = r.len();
    DVector::from_fn(2 * n, |i, _| if i < n { r[i] } else { r[i - n] * r[i - n] })
}
