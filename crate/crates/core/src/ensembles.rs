//! Seeded samplers for the random matrix ensembles: GOE snapshots and Dyson
//! paths, principal-minor truncation, rank-one deterministic parts and
//! Bernoulli matrices.
//!
//! Every sampler is a pure function of its [`SeedSpec`]. Generator streams are
//! ChaCha8 keyed by the master seed with the trial index as the 64-bit stream
//! number, so `(master_seed, stream_id)` pairs never share a keystream.
//! Gaussian variates come from `rand_distr::StandardNormal` (ziggurat).
//! Upper-triangle entries are drawn row by row, diagonal first in each row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dense real symmetric matrix. Both triangles are stored and every write is
/// mirrored, so `get(i, j) == get(j, i)` holds bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle (`i <= j`).
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from explicit rows; they must be square and exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(invalid("matrix must have at least one row"));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("matrix rows must all have length equal to the row count"));
        }
        for i in 0..dim {
            for j in 0..i {
                if rows[i][j] != rows[j][i] {
                    return Err(invalid(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        rows[i][j], rows[j][i]
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    /// Row-major view of the full storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(invalid(format!(
                "dimension mismatch: {} vs {}",
                self.dim, other.dim
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self {
            dim: self.dim,
            data,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `uᵀ M v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        assert_eq!(u.len(), self.dim);
        u.iter()
            .zip(self.data.chunks(self.dim))
            .map(|(ui, row)| ui * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    /// The top-left `n × n` block as a standalone matrix.
    pub fn leading_block(&self, n: usize) -> Result<Self> {
        check_minor_size(n, self.dim)?;
        Ok(Self::from_upper_fn(n, |i, j| self.get(i, j)))
    }
}

fn check_minor_size(n: usize, dim: usize) -> Result<()> {
    if n == 0 || n > dim {
        return Err(invalid(format!("minor size n = {n} must satisfy 1 <= n <= {dim}")));
    }
    Ok(())
}

/// Identifies one independent generator stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// The generator for this stream. The 256-bit ChaCha key holds the master
    /// seed verbatim in its first 8 bytes (padded with a splitmix64 expansion
    /// of it) and the stream id selects the ChaCha stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        let mut state = self.master_seed;
        for chunk in key[8..].chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for trial `trial_index` of an experiment seeded with `master_seed`.
/// Stable across versions: it is the identity map onto [`SeedSpec`], whose
/// generator construction is fixed above.
pub fn derive_stream(master_seed: u64, trial_index: u64) -> SeedSpec {
    SeedSpec::new(master_seed, trial_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    GoeSnapshot,
    DysonIncrement,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub n: usize,
    /// Time for snapshots, step for increments; ignored for Bernoulli.
    pub t_or_dt: f64,
    /// Bernoulli parameter; required for `Bernoulli`, ignored otherwise.
    pub p: Option<f64>,
}

impl EnsembleSpec {
    pub fn sample(&self, seed: &SeedSpec) -> Result<SymmetricMatrix> {
        match self.kind {
            EnsembleKind::GoeSnapshot | EnsembleKind::DysonIncrement => {
                sample_goe(self.n, self.t_or_dt, seed)
            }
            EnsembleKind::Bernoulli => {
                let p = self
                    .p
                    .ok_or_else(|| invalid("Bernoulli ensemble requires p"))?;
                sample_bernoulli(self.n, p, seed)
            }
        }
    }
}

/// GOE matrix with variance `2t/N` on the diagonal and `t/N` off it.
pub fn sample_goe(n: usize, t: f64, seed: &SeedSpec) -> Result<SymmetricMatrix> {
    let mut rng = seed.rng();
    goe_with_rng(n, t, &mut rng)
}

/// Same law as [`sample_goe`], drawing from a caller-owned generator.
pub fn goe_with_rng<R: Rng + ?Sized>(n: usize, t: f64, rng: &mut R) -> Result<SymmetricMatrix> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("t = {t} must be a finite nonnegative number")));
    }
    let mut h = SymmetricMatrix::zeros(n);
    add_goe_increment(&mut h, t, rng);
    Ok(h)
}

fn add_goe_increment<R: Rng + ?Sized>(h: &mut SymmetricMatrix, dt: f64, rng: &mut R) {
    let n = h.dim();
    if dt == 0.0 {
        return;
    }
    let off = (dt / n as f64).sqrt();
    let diag = (2.0 * dt / n as f64).sqrt();
    for i in 0..n {
        for j in i..n {
            let z: f64 = rng.sample(StandardNormal);
            let scale = if i == j { diag } else { off };
            let v = h.get(i, j) + scale * z;
            h.set(i, j, v);
        }
    }
}

/// Cumulative Dyson noise `H_t` at each grid time, built from independent
/// Gaussian increments over consecutive grid intervals (starting from `H_0 = 0`).
pub fn sample_path(n: usize, t_grid: &[f64], seed: &SeedSpec) -> Result<Vec<SymmetricMatrix>> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    if t_grid.is_empty() {
        return Err(invalid("time grid is empty"));
    }
    if !(t_grid[0] >= 0.0) {
        return Err(invalid(format!("time grid starts at {} < 0", t_grid[0])));
    }
    if let Some(w) = t_grid.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(invalid(format!(
            "time grid must be strictly increasing ({} followed by {})",
            w[0], w[1]
        )));
    }
    let mut rng = seed.rng();
    let mut h = SymmetricMatrix::zeros(n);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        add_goe_increment(&mut h, t - prev, &mut rng);
        out.push(h.clone());
        prev = t;
    }
    Ok(out)
}

/// The principal `n × n` minor embedded in an `N × N` matrix of zeros.
pub fn minor_truncate(x: &SymmetricMatrix, n: usize) -> Result<SymmetricMatrix> {
    check_minor_size(n, x.dim())?;
    let mut out = SymmetricMatrix::zeros(x.dim());
    for i in 0..n {
        for j in i..n {
            out.set(i, j, x.get(i, j));
        }
    }
    Ok(out)
}

/// `ψψᵀ`.
pub fn rank_one(psi: &[f64]) -> Result<SymmetricMatrix> {
    if psi.is_empty() {
        return Err(invalid("vector must have at least one entry"));
    }
    Ok(SymmetricMatrix::from_upper_fn(psi.len(), |i, j| {
        psi[i] * psi[j]
    }))
}

/// Symmetric matrix whose upper-triangle entries (diagonal included) are
/// i.i.d. `Bernoulli(p) / √N`.
pub fn sample_bernoulli(n: usize, p: f64, seed: &SeedSpec) -> Result<SymmetricMatrix> {
    let mut rng = seed.rng();
    bernoulli_with_rng(n, p, &mut rng)
}

pub fn bernoulli_with_rng<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    rng: &mut R,
) -> Result<SymmetricMatrix> {
    if n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("Bernoulli parameter p = {p} must lie in [0, 1]")));
    }
    let value = 1.0 / (n as f64).sqrt();
    Ok(SymmetricMatrix::from_upper_fn(n, |_, _| {
        if rng.random::<f64>() < p {
            value
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(k: u64) -> SeedSpec {
        derive_stream(2024, k)
    }

    fn off_diagonal(m: &SymmetricMatrix) -> Vec<f64> {
        let n = m.dim();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j))
            .collect()
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn goe_at_time_zero_is_zero() {
        let h = sample_goe(3, 0.0, &seed(0)).unwrap();
        assert_eq!(h, SymmetricMatrix::zeros(3));
    }

    #[test]
    fn goe_second_moments() {
        let h = sample_goe(200, 1.0, &seed(1)).unwrap();
        let (_, v_off) = mean_var(&off_diagonal(&h));
        assert!((v_off / (1.0 / 200.0) - 1.0).abs() < 0.10, "off-diagonal variance {v_off}");
        let diag: Vec<f64> = (0..200).map(|i| h.get(i, i)).collect();
        let (_, v_diag) = mean_var(&diag);
        assert!((v_diag / (2.0 / 200.0) - 1.0).abs() < 0.25, "diagonal variance {v_diag}");
    }

    #[test]
    fn goe_rejects_negative_time() {
        assert!(sample_goe(4, -1.0, &seed(0)).is_err());
    }

    #[test]
    fn sampled_matrices_are_bitwise_symmetric() {
        for m in [
            sample_goe(37, 0.7, &seed(3)).unwrap(),
            sample_bernoulli(37, 0.3, &seed(3)).unwrap(),
        ] {
            for i in 0..37 {
                for j in 0..37 {
                    assert_eq!(m.get(i, j).to_bits(), m.get(j, i).to_bits());
                }
            }
        }
    }

    #[test]
    fn path_starts_at_zero_and_rejects_bad_grids() {
        let p = sample_path(5, &[0.0], &seed(0)).unwrap();
        assert_eq!(p, vec![SymmetricMatrix::zeros(5)]);
        assert!(sample_path(5, &[0.0, 0.5, 0.5], &seed(0)).is_err());
        assert!(sample_path(5, &[0.0, 1.0, 0.5], &seed(0)).is_err());
        assert!(sample_path(5, &[-0.1, 1.0], &seed(0)).is_err());
    }

    #[test]
    fn path_endpoint_has_snapshot_variance() {
        let p = sample_path(200, &[0.0, 1.0], &seed(5)).unwrap();
        let (_, v_off) = mean_var(&off_diagonal(&p[1]));
        assert!((v_off * 200.0 - 1.0).abs() < 0.10);
    }

    #[test]
    fn path_increments_are_uncorrelated() {
        let p = sample_path(100, &[0.0, 0.5, 1.0], &seed(6)).unwrap();
        let first = off_diagonal(&p[1]);
        let second: Vec<f64> = off_diagonal(&p[2])
            .iter()
            .zip(&first)
            .map(|(b, a)| b - a)
            .collect();
        let k = first.len() as f64;
        let cov: f64 = first.iter().zip(&second).map(|(a, b)| a * b).sum::<f64>() / k;
        // Each increment has variance 0.5/N; the product of independent entries has sd 0.5/N.
        let se = (0.5 / 100.0) / k.sqrt();
        assert!(cov.abs() < 3.0 * se, "cov {cov} vs se {se}");
        let (_, v2) = mean_var(&second);
        assert!((v2 / (0.5 / 100.0) - 1.0).abs() < 0.1);
    }

    #[test]
    fn truncation_cases() {
        let x = sample_goe(4, 1.0, &seed(7)).unwrap();
        assert_eq!(minor_truncate(&x, 4).unwrap(), x);
        let m1 = minor_truncate(&x, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == 0 && j == 0 { x.get(0, 0) } else { 0.0 };
                assert_eq!(m1.get(i, j), expect);
            }
        }
        let ones = SymmetricMatrix::from_upper_fn(3, |_, _| 1.0);
        let m2 = minor_truncate(&ones, 2).unwrap();
        assert_eq!(
            m2.rows(),
            vec![vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]]
        );
        assert!(minor_truncate(&x, 0).is_err());
        assert!(minor_truncate(&x, 5).is_err());
    }

    #[test]
    fn rank_one_of_basis_vector() {
        let a = rank_one(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            a.rows(),
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]
        );
        let z = rank_one(&[0.0; 4]).unwrap();
        assert_eq!(z, SymmetricMatrix::zeros(4));
    }

    #[test]
    fn bernoulli_extremes_and_mean() {
        assert_eq!(sample_bernoulli(6, 0.0, &seed(0)).unwrap(), SymmetricMatrix::zeros(6));
        let full = sample_bernoulli(6, 1.0, &seed(0)).unwrap();
        assert!(full.as_slice().iter().all(|&v| v == 1.0 / 6f64.sqrt()));
        assert!(sample_bernoulli(6, 1.5, &seed(0)).is_err());
        assert!(sample_bernoulli(6, -0.1, &seed(0)).is_err());

        let b = sample_bernoulli(200, 0.5, &seed(9)).unwrap();
        let upper: Vec<f64> = (0..200)
            .flat_map(|i| (i..200).map(move |j| (i, j)))
            .map(|(i, j)| b.get(i, j))
            .collect();
        let (mean, _) = mean_var(&upper);
        let expect = 0.5 / 200f64.sqrt();
        let se = 0.5 / 200f64.sqrt() / (upper.len() as f64).sqrt();
        assert!((mean - expect).abs() < 3.0 * se);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = sample_goe(20, 1.0, &derive_stream(11, 4)).unwrap();
        let b = sample_goe(20, 1.0, &derive_stream(11, 4)).unwrap();
        assert_eq!(a, b);
        let c = sample_goe(20, 1.0, &derive_stream(12, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn neighbouring_streams_are_uncorrelated() {
        let a = off_diagonal(&sample_goe(100, 1.0, &derive_stream(77, 0)).unwrap());
        let b = off_diagonal(&sample_goe(100, 1.0, &derive_stream(77, 1)).unwrap());
        let k = a.len() as f64;
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let corr = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / ((k - 1.0) * (va * vb).sqrt());
        assert!(corr.abs() < 3.0 / k.sqrt(), "corr {corr}");
    }

    #[test]
    fn master_seeds_do_not_collide() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..1000u64 {
            let first: u64 = SeedSpec::new(s, 3).rng().random();
            assert!(seen.insert(first), "collision at master seed {s}");
        }
    }

    #[test]
    fn ensemble_spec_dispatch() {
        let spec = EnsembleSpec {
            kind: EnsembleKind::Bernoulli,
            n: 5,
            t_or_dt: 0.0,
            p: None,
        };
        assert!(spec.sample(&seed(0)).is_err());
        let spec = EnsembleSpec {
            kind: EnsembleKind::GoeSnapshot,
            n: 5,
            t_or_dt: 1.0,
            p: None,
        };
        assert_eq!(spec.sample(&seed(2)).unwrap(), sample_goe(5, 1.0, &seed(2)).unwrap());
    }
}
