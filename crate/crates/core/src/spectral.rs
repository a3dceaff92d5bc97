//! Symmetric eigendecomposition, overlap grids between a matrix and its
//! embedded minor, Cauchy interlacing checks and quantile indexing.
//!
//! Everything here is ordered descending, `λ₁ ≥ … ≥ λ_N`.

use std::sync::Once;

use faer::{Mat, Side};

use crate::ensembles::SymmetricMatrix;
use crate::error::{Error, Result};

/// Support tolerance used to tell the embedded minor's null space apart from
/// its genuine eigenvectors.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Eigenvalues sorted descending, with orthonormal eigenvectors stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    vectors: Vec<f64>,
    dim: usize,
}

impl SpectralDecomposition {
    /// Assembles a decomposition from parts, sorting pairs by descending eigenvalue.
    pub fn from_parts(eigenvalues: Vec<f64>, eigenvectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = eigenvalues.len();
        if eigenvectors.len() != dim || eigenvectors.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidArgument(
                "need one eigenvector of length N per eigenvalue".into(),
            ));
        }
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
        Ok(Self {
            eigenvalues: order.iter().map(|&k| eigenvalues[k]).collect(),
            vectors: order
                .iter()
                .flat_map(|&k| eigenvectors[k].iter().copied())
                .collect(),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Unit eigenvector paired with `eigenvalues()[k]`.
    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    /// `max_k ‖X v_k − λ_k v_k‖₂`.
    pub fn max_residual(&self, x: &SymmetricMatrix) -> f64 {
        (0..self.dim)
            .map(|k| {
                let v = self.vector(k);
                let lam = self.eigenvalues[k];
                x.mul_vec(v)
                    .iter()
                    .zip(v)
                    .map(|(xv, vi)| (xv - lam * vi).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Largest entrywise deviation of the eigenvector Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.dim {
            for b in a..self.dim {
                let dot = dot(self.vector(a), self.vector(b));
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// `‖V diag(λ) Vᵀ − X‖∞` (maximum absolute row sum).
    pub fn reconstruction_error(&self, x: &SymmetricMatrix) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let r: f64 = (0..n)
                    .map(|k| self.eigenvalues[k] * self.vectors[k * n + i] * self.vectors[k * n + j])
                    .sum();
                row += (r - x.get(i, j)).abs();
            }
            worst = worst.max(row);
        }
        worst
    }

    /// [`Self::reconstruction_error`] divided by `‖X‖∞`.
    pub fn relative_reconstruction_error(&self, x: &SymmetricMatrix) -> f64 {
        let scale = x.norm_inf();
        let err = self.reconstruction_error(x);
        if scale > 0.0 {
            err / scale
        } else {
            err
        }
    }

    /// `‖X r − V diag(λ) Vᵀ r‖₂ / (max|λ| ‖r‖₂)` for a fixed pseudo-random
    /// probe `r`. Costs `O(N²)` instead of the `O(N³)` full reconstruction.
    pub fn probe_reconstruction_error(&self, x: &SymmetricMatrix) -> f64 {
        let n = self.dim;
        let r: Vec<f64> = (0..n)
            .map(|i| ((i as f64 + 1.0) * 0.754_877_666_246_692_7).fract() - 0.5)
            .collect();
        let mut approx = vec![0.0; n];
        for k in 0..n {
            let v = self.vector(k);
            let c = self.eigenvalues[k] * dot(v, &r);
            for (a, vi) in approx.iter_mut().zip(v) {
                *a += c * vi;
            }
        }
        let exact = x.mul_vec(&r);
        let err = exact
            .iter()
            .zip(&approx)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = self.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs())) * dot(&r, &r).sqrt();
        if scale > 0.0 {
            err / scale
        } else {
            err
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

static SEQUENTIAL: Once = Once::new();

/// Dense symmetric eigendecomposition (faer's tridiagonal QR).
///
/// faer is pinned to sequential execution so results do not depend on the
/// thread count; parallelism happens across Monte Carlo trials instead.
pub fn eig_sym(x: &SymmetricMatrix) -> Result<SpectralDecomposition> {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    let n = x.dim();
    let m = Mat::<f64>::from_fn(n, n, |i, j| x.get(i, j));
    let evd = m.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigen {
        context: format!("{n}x{n} symmetric matrix ({e:?})"),
    })?;
    let s = evd.S().column_vector();
    let u = evd.U();
    // faer returns ascending eigenvalues.
    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * n);
    for k in (0..n).rev() {
        let lam = s[k];
        if !lam.is_finite() {
            return Err(Error::Eigen {
                context: format!("{n}x{n} symmetric matrix (non-finite eigenvalue)"),
            });
        }
        eigenvalues.push(lam);
        vectors.extend((0..n).map(|i| u[(i, k)]));
    }
    let mut dec = SpectralDecomposition {
        eigenvalues,
        vectors,
        dim: n,
    };
    dec.enforce_descending();
    Ok(dec)
}

impl SpectralDecomposition {
    fn enforce_descending(&mut self) {
        if self.eigenvalues.windows(2).all(|w| w[0] >= w[1]) {
            return;
        }
        let vecs: Vec<Vec<f64>> = (0..self.dim).map(|k| self.vector(k).to_vec()).collect();
        *self = Self::from_parts(self.eigenvalues.clone(), vecs).expect("shapes already valid");
    }
}

/// Decomposition of the embedded minor `X̃` computed from its `n × n` block.
///
/// The block's eigenvectors are padded with zeros to length `N` and the
/// `N − n` null pairs `(0, e_k)`, `k > n`, are added, so the result is the
/// exact decomposition of the embedded matrix.
pub fn eig_minor(x: &SymmetricMatrix, n: usize) -> Result<SpectralDecomposition> {
    let big_n = x.dim();
    let block = eig_sym(&x.leading_block(n)?)?;
    let mut eigenvalues = block.eigenvalues().to_vec();
    let mut vectors: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut v = block.vector(k).to_vec();
            v.resize(big_n, 0.0);
            v
        })
        .collect();
    for k in n..big_n {
        eigenvalues.push(0.0);
        let mut e = vec![0.0; big_n];
        e[k] = 1.0;
        vectors.push(e);
    }
    SpectralDecomposition::from_parts(eigenvalues, vectors)
}

/// Squared overlaps `⟨Φ_i|Ψ_j⟩²` between the minor's `n` genuine eigenvectors
/// (rows) and the full matrix's `N` eigenvectors (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapGrid {
    n: usize,
    big_n: usize,
    values: Vec<f64>,
    minor_evals: Vec<f64>,
    full_evals: Vec<f64>,
}

impl OverlapGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn big_n(&self) -> usize {
        self.big_n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.big_n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.big_n..(i + 1) * self.big_n]
    }

    pub fn minor_evals(&self) -> &[f64] {
        &self.minor_evals
    }

    pub fn full_evals(&self) -> &[f64] {
        &self.full_evals
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.big_n)
            .map(|j| (0..self.n).map(|i| self.get(i, j)).sum())
            .collect()
    }

    /// `max_i |Σ_j values(i, j) − 1|`.
    pub fn normalization_audit(&self) -> f64 {
        self.row_sums()
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the overlap grid between a full decomposition and the decomposition
/// of its embedded minor.
///
/// Null-space pairs of the minor are recognised by support: an eigenvector
/// with weight at most [`SUPPORT_TOL`] on the first `n` coordinates is null.
pub fn overlap_grid(
    full: &SpectralDecomposition,
    minor: &SpectralDecomposition,
    n: usize,
) -> Result<OverlapGrid> {
    let big_n = full.dim();
    if minor.dim() != big_n {
        return Err(Error::InvalidArgument(format!(
            "full and minor decompositions differ in size ({} vs {})",
            big_n,
            minor.dim()
        )));
    }
    if n == 0 || n > big_n {
        return Err(Error::InvalidArgument(format!(
            "minor size n = {n} must satisfy 1 <= n <= {big_n}"
        )));
    }

    let mut genuine = Vec::with_capacity(n);
    for k in 0..big_n {
        let v = minor.vector(k);
        let head = v[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
        let tail = v[n..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if head <= SUPPORT_TOL {
            continue;
        }
        if tail <= SUPPORT_TOL {
            genuine.push(k);
            continue;
        }
        let lam = minor.eigenvalues()[k];
        return Err(Error::DegenerateInput(format!(
            "minor eigenvector {k} (eigenvalue {lam:e}) has mixed support: \
             head weight {head:e}, tail weight {tail:e}"
        )));
    }
    if genuine.len() != n {
        return Err(Error::DegenerateInput(format!(
            "found {} eigenvectors supported on the leading {n} coordinates, expected {n}",
            genuine.len()
        )));
    }

    let mut values = Vec::with_capacity(n * big_n);
    for &k in &genuine {
        let phi = minor.vector(k);
        let end = phi.iter().rposition(|&x| x != 0.0).map_or(0, |p| p + 1);
        let phi = &phi[..end];
        values.extend((0..big_n).map(|j| {
            let d = dot(phi, &full.vector(j)[..end]);
            d * d
        }));
    }

    Ok(OverlapGrid {
        n,
        big_n,
        values,
        minor_evals: genuine.iter().map(|&k| minor.eigenvalues()[k]).collect(),
        full_evals: full.eigenvalues().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterlacingCheck {
    pub holds: bool,
    /// `min_i min(μ_i − λ_{i+N−n}, λ_i − μ_i)`; negative when violated.
    pub worst_margin: f64,
}

/// Cauchy interlacing `λ_{i+N−n} ≤ μ_i ≤ λ_i` with tolerance
/// `1e-9 · max(1, ‖λ‖∞)`. Both inputs sorted descending.
pub fn check_interlacing(full_evals: &[f64], minor_evals: &[f64]) -> InterlacingCheck {
    let big_n = full_evals.len();
    let n = minor_evals.len();
    assert!(n <= big_n, "minor has more eigenvalues than the full matrix");
    let scale = full_evals.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let worst_margin = minor_evals
        .iter()
        .enumerate()
        .map(|(i, &mu)| (mu - full_evals[i + big_n - n]).min(full_evals[i] - mu))
        .fold(f64::INFINITY, f64::min);
    InterlacingCheck {
        holds: worst_margin >= -tol,
        worst_margin,
    }
}

/// One-based eigenvalue index for quantile `x`: `clamp(round(x · size), 1, size)`.
///
/// Index 1 is the largest eigenvalue, so `x` is the spectral mass above the
/// selected eigenvalue.
pub fn quantile_index(x: f64, size: usize) -> usize {
    let raw = (x * size as f64).round();
    (raw.max(1.0) as usize).min(size)
}
