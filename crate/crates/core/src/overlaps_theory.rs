//! Limiting overlap formulas.
//!
//! `W(μ, λ, t)` is the large-`N` limit of `N · E[⟨Φ_i|Ψ_j⟩²]` when the minor
//! eigenvalue `μ_i → μ` and the full eigenvalue `λ_j → λ`. It is obtained from
//! the double Stieltjes transform
//!
//! ```text
//! S(z, z̃, t) = (1/N) Σ_i Σ_j ⟨Φ_i|Ψ_j⟩² / ((z̃ − μ_i)(z − λ_j))
//! ```
//!
//! whose evolution under the noise is `S₀(y, ỹ) / (1 − t S₀(y, ỹ))` with
//! `y = z − t G(z)` and `ỹ = z̃ − q t G̃(z̃)`. Projecting onto the real axis
//! gives the general kernel; for `A ≡ 0` it collapses to a Cauchy-like closed
//! form.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::ensembles::SymmetricMatrix;
use crate::error::{domain, invalid, Error, Result};
use crate::freeprob::{
    boundary_values, require_interior, semicircle_quantile, BoundaryValues, Resolvent,
};
use crate::spectral::{eig_minor, eig_sym, overlap_grid, OverlapGrid};

/// Densities below this are refused by formulas that divide by `ρ ρ̃`.
pub const DENSITY_FLOOR: f64 = 1e-3;
const POLE_TOL: f64 = 1e-12;

/// One value of the limiting rescaled mean squared overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapKernelPoint {
    pub mu: f64,
    pub lambda: f64,
    pub t: f64,
    pub q: f64,
    pub value: f64,
}

/// `S(·, ·, 0)`, the double Stieltjes transform of the noiseless matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialOverlapTransform {
    /// `A ≡ 0`: `S₀(z, z̃) = q / (z z̃)`.
    Null { q: f64 },
    /// Rational sum over one representative finite matrix of size `N₀`.
    Finite {
        full_evals: Vec<f64>,
        minor_evals: Vec<f64>,
        /// `n × N₀` squared overlaps, row-major.
        overlaps: Vec<f64>,
    },
}

impl InitialOverlapTransform {
    pub fn null(q: f64) -> Self {
        Self::Null { q }
    }

    pub fn from_grid(grid: &OverlapGrid) -> Self {
        let big_n = grid.big_n();
        Self::Finite {
            full_evals: grid.full_evals().to_vec(),
            minor_evals: grid.minor_evals().to_vec(),
            overlaps: (0..grid.n())
                .flat_map(|i| (0..big_n).map(move |j| (i, j)))
                .map(|(i, j)| grid.get(i, j))
                .collect(),
        }
    }

    /// Decomposes `A` and its leading `n × n` minor.
    pub fn from_matrix(a: &SymmetricMatrix, n: usize) -> Result<Self> {
        let grid = overlap_grid(&eig_sym(a)?, &eig_minor(a, n)?, n)?;
        Ok(Self::from_grid(&grid))
    }

    /// Diagonal `A`: eigenvectors are the canonical basis, so the overlap
    /// between minor vector `i` and full vector `j` is `δ_ij`.
    pub fn from_diagonal(diag: &[f64], n: usize) -> Result<Self> {
        let big_n = diag.len();
        if n == 0 || n > big_n {
            return Err(invalid(format!("minor size n = {n} must satisfy 1 <= n <= {big_n}")));
        }
        let mut overlaps = vec![0.0; n * big_n];
        for i in 0..n {
            overlaps[i * big_n + i] = 1.0;
        }
        Ok(Self::Finite {
            full_evals: diag.to_vec(),
            minor_evals: diag[..n].to_vec(),
            overlaps,
        })
    }

    pub fn eval(&self, z: Complex64, z_tilde: Complex64) -> Complex64 {
        match self {
            Self::Null { q } => *q / (z * z_tilde),
            Self::Finite {
                full_evals,
                minor_evals,
                overlaps,
            } => {
                let big_n = full_evals.len();
                let a: Vec<Complex64> = full_evals.iter().map(|&l| (z - l).inv()).collect();
                let total: Complex64 = minor_evals
                    .iter()
                    .enumerate()
                    .map(|(i, &mu)| {
                        let row = &overlaps[i * big_n..(i + 1) * big_n];
                        let inner: Complex64 = row
                            .iter()
                            .zip(&a)
                            .filter(|(o, _)| **o != 0.0)
                            .map(|(o, aj)| aj * *o)
                            .sum();
                        inner / (z_tilde - mu)
                    })
                    .sum();
                total / big_n as f64
            }
        }
    }
}

fn evolve(s0: Complex64, t: f64, z: Complex64, z_tilde: Complex64) -> Result<Complex64> {
    let denominator = 1.0 - t * s0;
    if denominator.norm() < POLE_TOL {
        return Err(Error::Pole {
            z,
            z_tilde,
            denominator,
        });
    }
    Ok(s0 / denominator)
}

/// `S(z, z̃, t) = S₀(y, ỹ) / (1 − t S₀(y, ỹ))`, `y = z − tG(z)`, `ỹ = z̃ − qtG̃(z̃)`.
pub fn s_general(
    s0: &InitialOverlapTransform,
    z: Complex64,
    z_tilde: Complex64,
    t: f64,
    q: f64,
    g: &dyn Resolvent,
    g_tilde: &dyn Resolvent,
) -> Result<Complex64> {
    if z.im == 0.0 || z_tilde.im == 0.0 {
        return Err(invalid("S needs both arguments off the real axis"));
    }
    if !(t >= 0.0) {
        return Err(invalid(format!("t = {t} must be nonnegative")));
    }
    if t == 0.0 {
        return Ok(s0.eval(z, z_tilde));
    }
    let y = z - t * g.eval(z)?;
    let y_tilde = z_tilde - q * t * g_tilde.eval(z_tilde)?;
    evolve(s0.eval(y, y_tilde), t, y, y_tilde)
}

/// Kernel from precomputed boundary values of the full (`full`) and minor
/// (`minor`) spectra. Both points must be interior (density above
/// [`DENSITY_FLOOR`] and not edge-flagged).
pub fn w_general_from_boundary(
    s0: &InitialOverlapTransform,
    full: &BoundaryValues,
    minor: &BoundaryValues,
    t: f64,
    q: f64,
) -> Result<OverlapKernelPoint> {
    require_interior(full, DENSITY_FLOOR, "lambda")?;
    require_interior(minor, DENSITY_FLOOR, "mu")?;
    let y = Complex64::new(full.lambda - t * full.v, -PI * t * full.rho);
    let y_tilde = Complex64::new(minor.lambda - q * t * minor.v, -q * PI * t * minor.rho);
    let plus = evolve(s0.eval(y, y_tilde.conj()), t, y, y_tilde.conj())?;
    let minus = evolve(s0.eval(y, y_tilde), t, y, y_tilde)?;
    let value = (plus - minus).re / (2.0 * q * PI * PI * full.rho * minor.rho);
    Ok(OverlapKernelPoint {
        mu: minor.lambda,
        lambda: full.lambda,
        t,
        q,
        value,
    })
}

/// General kernel `W(μ, λ, t)` for any initial transform.
pub fn w_general(
    s0: &InitialOverlapTransform,
    mu: f64,
    lambda: f64,
    t: f64,
    q: f64,
    g: &dyn Resolvent,
    g_tilde: &dyn Resolvent,
) -> Result<OverlapKernelPoint> {
    if !(t > 0.0) {
        return Err(invalid(format!("t = {t} must be positive")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("q = {q} must lie in (0, 1]")));
    }
    let full = boundary_values(g, lambda, t)?;
    let minor = boundary_values(g_tilde, mu, t)?;
    w_general_from_boundary(s0, &full, &minor, t, q)
}

/// Kernel on a `mus × lambdas` grid, reusing boundary values along each axis.
/// Edge points come back as `Err` in their slot.
pub fn w_general_grid(
    s0: &InitialOverlapTransform,
    mus: &[f64],
    lambdas: &[f64],
    t: f64,
    q: f64,
    g: &dyn Resolvent,
    g_tilde: &dyn Resolvent,
) -> Result<Vec<Vec<Result<OverlapKernelPoint>>>> {
    let full: Vec<BoundaryValues> = lambdas
        .iter()
        .map(|&l| boundary_values(g, l, t))
        .collect::<Result<_>>()?;
    let minor: Vec<BoundaryValues> = mus
        .iter()
        .map(|&m| boundary_values(g_tilde, m, t))
        .collect::<Result<_>>()?;
    Ok(minor
        .iter()
        .map(|m| {
            full.iter()
                .map(|f| w_general_from_boundary(s0, f, m, t, q))
                .collect()
        })
        .collect())
}

/// Closed-form kernel for `A ≡ 0`:
/// `W = (1−q)t / ((1−q)²t + (λ−μ)(qλ−μ))`.
pub fn w_goe(mu: f64, lambda: f64, t: f64, q: f64) -> Result<OverlapKernelPoint> {
    if !(t > 0.0) {
        return Err(invalid(format!("t = {t} must be positive")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("q = {q} must lie in (0, 1]")));
    }
    let denominator = (1.0 - q).powi(2) * t + (lambda - mu) * (q * lambda - mu);
    if !(denominator > 0.0) {
        return Err(domain(format!(
            "GOE kernel denominator {denominator} <= 0 at mu = {mu}, lambda = {lambda} \
             (mu outside the minor bulk or at q = 1 with lambda = mu)"
        )));
    }
    Ok(OverlapKernelPoint {
        mu,
        lambda,
        t,
        q,
        value: (1.0 - q) * t / denominator,
    })
}

fn check_t_q(t: f64, q: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!("t = {t} must be positive")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("q = {q} must lie in (0, 1]")));
    }
    Ok(())
}

/// `P(X) = qX³ − ((1+6q+q²)t + μ²)X + 4(1+q)tμ`, whose root in the bulk
/// maximizes `λ ↦ W(μ, λ, t) ρ(λ, t)`.
pub fn interlacing_cubic(x: f64, mu: f64, t: f64, q: f64) -> f64 {
    q * x.powi(3) - ((1.0 + 6.0 * q + q * q) * t + mu * mu) * x + 4.0 * (1.0 + q) * t * mu
}

/// Location `λ*` of the maximum of `W(μ, ·, t) ρ(·, t)` for the GOE kernel:
/// the unique root of [`interlacing_cubic`] in `[−2√t, 2√t]`, by bisection
/// on the guaranteed sign change `P(−2√t) ≥ 0 ≥ P(2√t)`.
pub fn lambda_star(mu: f64, t: f64, q: f64) -> Result<f64> {
    check_t_q(t, q)?;
    let minor_edge = 2.0 * (q * t).sqrt();
    if mu.abs() > minor_edge * (1.0 + 1e-12) {
        return Err(domain(format!(
            "mu = {mu} lies outside the minor bulk [-{minor_edge}, {minor_edge}]"
        )));
    }
    let p = |x: f64| interlacing_cubic(x, mu, t, q);
    let edge = 2.0 * t.sqrt();
    let (mut lo, mut hi) = (-edge, edge);
    if p(lo) == 0.0 {
        return Ok(lo);
    }
    if p(hi) == 0.0 {
        return Ok(hi);
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-14 {
            return Ok(mid);
        }
        let pm = p(mid);
        if pm == 0.0 {
            return Ok(mid);
        }
        if pm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Asymptotic interlacing bounds `(λ(qx + 1 − q, t), λ(qx, t))` for the minor
/// eigenvalue at quantile `x`.
pub fn interlace_interval(x: f64, t: f64, q: f64) -> Result<(f64, f64)> {
    check_t_q(t, q)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("quantile x = {x} must lie in [0, 1]")));
    }
    let lower = semicircle_quantile(q * x + 1.0 - q, t, 1.0)?;
    let upper = semicircle_quantile(q * x, t, 1.0)?;
    Ok((lower, upper))
}

/// Spike positions at time `t` for a rank-one `A` with eigenvalue `λ` whose
/// minor has eigenvalue `μ` (or no spike when `mu` is `None`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpikeTrajectory {
    /// `λ + t/λ`.
    pub lambda1: f64,
    /// `μ + qt/μ`.
    pub mu1: Option<f64>,
    /// `t < λ²`.
    pub full_separated: bool,
    /// `t < μ²/q`.
    pub minor_separated: Option<bool>,
}

pub fn spike_trajectories(lambda: f64, mu: Option<f64>, q: f64, t: f64) -> SpikeTrajectory {
    SpikeTrajectory {
        lambda1: lambda + t / lambda,
        mu1: mu.map(|m| m + q * t / m),
        full_separated: t < lambda * lambda,
        minor_separated: mu.map(|m| t < m * m / q),
    }
}

/// Initial spike `λ` recovered from the observed outlier `λ₁(t)`:
/// `(λ₁ + √(λ₁² − 4t)) / 2`.
pub fn spike_origin(lambda1: f64, t: f64) -> Result<f64> {
    let d = lambda1 * lambda1 - 4.0 * t;
    if d < 0.0 {
        return Err(domain(format!("lambda1 = {lambda1} lies inside the bulk at t = {t}")));
    }
    Ok(0.5 * (lambda1 + d.sqrt()))
}

/// Minor counterpart of [`spike_origin`]: `(μ₁ + √(μ₁² − 4qt)) / 2`.
pub fn minor_spike_origin(mu1: f64, t: f64, q: f64) -> Result<f64> {
    spike_origin(mu1, q * t)
}

/// Limiting spike-spike squared overlap
/// `f(t) = (μ/λ) (λ² − t)(μ² − qt) / (λμ − qt)²`.
pub fn f_spike(lambda: f64, mu: f64, q: f64, t: f64) -> Result<f64> {
    if !(mu > 0.0 && mu <= lambda) {
        return Err(domain(format!("need 0 < mu <= lambda, got mu = {mu}, lambda = {lambda}")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("q = {q} must lie in (0, 1]")));
    }
    if !(t >= 0.0) {
        return Err(invalid(format!("t = {t} must be nonnegative")));
    }
    if t >= lambda * lambda {
        return Err(domain(format!(
            "t = {t} >= lambda^2 = {}: the full spike has merged with the bulk",
            lambda * lambda
        )));
    }
    if t >= mu * mu / q {
        return Err(domain(format!(
            "t = {t} >= mu^2/q = {}: the minor spike has merged with its bulk",
            mu * mu / q
        )));
    }
    let d = lambda * mu - q * t;
    Ok(mu / lambda * (lambda * lambda - t) * (mu * mu - q * t) / (d * d))
}

/// Rate `f'(t)/f(t) = 1/(t − λ²) + q/(qt − μ²) + 2q/(λμ − qt)` of the
/// spike-spike overlap.
pub fn f_spike_log_rate(lambda: f64, mu: f64, q: f64, t: f64) -> f64 {
    1.0 / (t - lambda * lambda) + q / (q * t - mu * mu) + 2.0 * q / (lambda * mu - q * t)
}

/// Limiting `N E[⟨Φ_i|Ψ₁⟩²]` between minor bulk vectors at `μ` and the full
/// spike when the spike vector has no weight on the minor's coordinates:
/// `g = (λ² − qt) t / (λ² − λμ + qt)²`.
pub fn g_spike_bulk(lambda: f64, q: f64, t: f64, mu: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(domain(format!("spike lambda = {lambda} must be positive")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("q = {q} must lie in (0, 1]")));
    }
    if !(t >= 0.0) {
        return Err(invalid(format!("t = {t} must be nonnegative")));
    }
    if t >= lambda * lambda {
        return Err(domain(format!(
            "t = {t} >= lambda^2 = {}: the spike has merged with the bulk",
            lambda * lambda
        )));
    }
    let edge = 2.0 * (q * t).sqrt();
    if mu.abs() > edge * (1.0 + 1e-12) {
        return Err(domain(format!("mu = {mu} lies outside the minor bulk [-{edge}, {edge}]")));
    }
    let d = lambda * lambda - lambda * mu + q * t;
    Ok((lambda * lambda - q * t) * t / (d * d))
}

/// Total squared overlap of the full spike with the minor bulk, `qt / λ²`.
pub fn spike_mass(lambda: f64, q: f64, t: f64) -> Result<f64> {
    if t >= lambda * lambda {
        return Err(domain(format!(
            "t = {t} >= lambda^2 = {}: the spike has merged with the bulk",
            lambda * lambda
        )));
    }
    Ok(q * t / (lambda * lambda))
}

/// Mean squared top-eigenvector overlap of a Bernoulli(p) matrix and its
/// `n × n` minor to order `1/N`: `n/N − (1 − n/N)(1/p − 1)/N`. The neglected
/// remainder is `O(N^{-3/2})`.
pub fn bernoulli_spike(big_n: usize, n: usize, p: f64) -> Result<f64> {
    if n == 0 || n > big_n {
        return Err(invalid(format!("need 1 <= n <= N, got n = {n}, N = {big_n}")));
    }
    if p == 0.0 {
        return Err(domain("p = 0: the 1/N expansion diverges"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("p = {p} must lie in (0, 1]")));
    }
    let ratio = n as f64 / big_n as f64;
    Ok(ratio - (1.0 - ratio) * (1.0 / p - 1.0) / big_n as f64)
}
