//! Stieltjes transforms of limiting spectra.
//!
//! Sign conventions: `G(z) = ∫ ρ(x) / (z − x) dx` maps the upper half-plane to
//! the lower one, and the boundary value from below the real axis is
//! `G(λ − i0) = v(λ) + iπρ(λ)`, where `v` is the Hilbert transform of `ρ`.
//!
//! Adding GOE noise of variance `t` evolves `G` along straight
//! characteristics, so `G(z, t) = G₀(z − t G(z, t))`. The minor's transform
//! obeys the same relation with the shift `q t`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};

/// Default offset below the real axis used to extract boundary values.
pub const BOUNDARY_EPS: f64 = 1e-6;
/// Distance from a support edge inside which boundary values are flagged.
pub const EDGE_DISTANCE: f64 = 1e-3;
/// Densities at or below this level count as "outside the support" for edge probing.
const ZERO_DENSITY: f64 = 1e-9;

const DAMPING: f64 = 0.5;
const MAX_DAMPED_ITERATIONS: usize = 500;
const MAX_NEWTON_ITERATIONS: usize = 100;
const RESIDUAL_TOL: f64 = 1e-10;

/// Limiting spectrum: weighted atoms for the bulk plus zero-weight spikes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumModelRepr", into = "SpectrumModelRepr")]
pub struct SpectrumModel {
    atoms: Vec<(f64, f64)>,
    spikes: Vec<f64>,
    q: f64,
}

#[derive(Serialize, Deserialize)]
struct SpectrumModelRepr {
    atoms: Vec<(f64, f64)>,
    #[serde(default)]
    spikes: Vec<f64>,
    #[serde(default = "one")]
    q: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<SpectrumModelRepr> for SpectrumModel {
    type Error = Error;

    fn try_from(r: SpectrumModelRepr) -> Result<Self> {
        SpectrumModel::new(r.atoms, r.spikes, r.q)
    }
}

impl From<SpectrumModel> for SpectrumModelRepr {
    fn from(m: SpectrumModel) -> Self {
        Self {
            atoms: m.atoms,
            spikes: m.spikes,
            q: m.q,
        }
    }
}

impl SpectrumModel {
    pub fn new(atoms: Vec<(f64, f64)>, spikes: Vec<f64>, q: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("spectrum model needs at least one atom"));
        }
        if atoms
            .iter()
            .any(|&(loc, w)| !loc.is_finite() || !(w > 0.0) || !w.is_finite())
        {
            return Err(invalid("atoms need finite locations and positive weights"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("atom weights sum to {total}, expected 1")));
        }
        if let Some(s) = spikes
            .iter()
            .find(|s| !s.is_finite() || atoms.iter().any(|a| a.0 == **s))
        {
            return Err(invalid(format!(
                "spike at {s} must be finite and distinct from every atom"
            )));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(invalid(format!("minor fraction q = {q} must lie in (0, 1]")));
        }
        Ok(Self { atoms, spikes, q })
    }

    /// Unit mass at zero: the spectrum of `A ≡ 0`.
    pub fn null(q: f64) -> Result<Self> {
        Self::new(vec![(0.0, 1.0)], vec![], q)
    }

    /// Equal-weight atoms at the given locations.
    pub fn uniform_atoms(locations: &[f64], q: f64) -> Result<Self> {
        let w = 1.0 / locations.len() as f64;
        let mut atoms: Vec<(f64, f64)> = locations.iter().map(|&l| (l, w)).collect();
        // Force the weights to sum to 1 to within rounding.
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if let Some(last) = atoms.last_mut() {
            last.1 += 1.0 - total;
        }
        Self::new(atoms, vec![], q)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn spikes(&self) -> &[f64] {
        &self.spikes
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spectrum model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| invalid(format!("bad spectrum model JSON: {e}")))
    }

    fn g0(&self, w: Complex64) -> Complex64 {
        self.atoms
            .iter()
            .map(|&(loc, weight)| weight / (w - loc))
            .sum()
    }

    fn g0_derivative(&self, w: Complex64) -> Complex64 {
        -self
            .atoms
            .iter()
            .map(|&(loc, weight)| {
                let d = w - loc;
                weight / (d * d)
            })
            .sum::<Complex64>()
    }
}

/// `G₀(w) = Σ_k weight_k / (w − atom_k)`.
pub fn stieltjes_atomic(model: &SpectrumModel, w: Complex64) -> Result<Complex64> {
    if w.im == 0.0 {
        return Err(invalid(format!("Stieltjes transform needs Im(w) != 0, got {w}")));
    }
    Ok(model.g0(w))
}

/// `√(z² − 4t)` on the branch that behaves like `z` at infinity, with its cut
/// on `[−2√t, 2√t]`.
fn semicircle_sqrt(z: Complex64, t: f64) -> Complex64 {
    let r = 2.0 * t.sqrt();
    (z - r).sqrt() * (z + r).sqrt()
}

/// Stieltjes transform of the semicircle of variance `t` (radius `2√t`):
/// `(z − √(z² − 4t)) / 2t`.
pub fn semicircle_g(z: Complex64, t: f64) -> Complex64 {
    assert!(t > 0.0, "semicircle variance must be positive");
    (z - semicircle_sqrt(z, t)) / (2.0 * t)
}

/// `ρ(λ, t) = √((4t − λ²)₊) / 2πt`.
pub fn semicircle_density(lambda: f64, t: f64) -> f64 {
    (4.0 * t - lambda * lambda).max(0.0).sqrt() / (2.0 * PI * t)
}

/// Hilbert transform of the semicircle: `λ / 2t` inside the bulk, `Re G(λ)` outside.
pub fn semicircle_hilbert(lambda: f64, t: f64) -> f64 {
    let d = lambda * lambda - 4.0 * t;
    if d <= 0.0 {
        lambda / (2.0 * t)
    } else {
        (lambda - lambda.signum() * d.sqrt()) / (2.0 * t)
    }
}

/// Mass of the semicircle of variance `t` lying above `λ`.
pub fn semicircle_tail_mass(lambda: f64, t: f64) -> f64 {
    let u = (lambda / (2.0 * t.sqrt())).clamp(-1.0, 1.0);
    (u.acos() - u * (1.0 - u * u).sqrt()) / PI
}

/// Quantile with tail mass `x` above it, `x = ∫_{λ(x)}^∞ ρ`, for the
/// semicircle of variance `t`, multiplied by `radius_scale` (use `√q` for the
/// minor's spectrum).
pub fn semicircle_quantile(x: f64, t: f64, radius_scale: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("quantile level x = {x} must lie in [0, 1]")));
    }
    if !(t > 0.0) {
        return Err(invalid(format!("t = {t} must be positive")));
    }
    let edge = 2.0 * t.sqrt();
    if x == 0.0 {
        return Ok(radius_scale * edge);
    }
    if x == 1.0 {
        return Ok(-radius_scale * edge);
    }
    let (mut lo, mut hi) = (-edge, edge);
    while hi - lo > 1e-13 * edge.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if semicircle_tail_mass(mid, t) > x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(radius_scale * 0.5 * (lo + hi))
}

/// Something that evaluates a Stieltjes transform off the real axis.
pub trait Resolvent {
    fn eval(&self, z: Complex64) -> Result<Complex64>;
}

impl<F> Resolvent for F
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    fn eval(&self, z: Complex64) -> Result<Complex64> {
        self(z)
    }
}

/// Closed-form semicircle of variance `variance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Semicircle {
    pub variance: f64,
}

impl Resolvent for Semicircle {
    fn eval(&self, z: Complex64) -> Result<Complex64> {
        Ok(semicircle_g(z, self.variance))
    }
}

/// Free convolution of an atomic model with a semicircle, evaluated by
/// solving `G = G₀(z − shift · G)`. Use `shift = t` for the full matrix and
/// `shift = q t` for the minor.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeConvolution {
    pub model: SpectrumModel,
    pub shift: f64,
}

impl Resolvent for FreeConvolution {
    fn eval(&self, z: Complex64) -> Result<Complex64> {
        solve_g(&self.model, z, self.shift)
    }
}

fn residual(model: &SpectrumModel, z: Complex64, t: f64, g: Complex64) -> f64 {
    (g - model.g0(z - t * g)).norm()
}

fn herglotz_ok(z: Complex64, g: Complex64) -> bool {
    g.is_finite() && z.im * g.im < 0.0
}

fn newton(model: &SpectrumModel, z: Complex64, t: f64, mut g: Complex64) -> Complex64 {
    for _ in 0..MAX_NEWTON_ITERATIONS {
        let w = z - t * g;
        let r = g - model.g0(w);
        if r.norm() < 0.1 * RESIDUAL_TOL {
            break;
        }
        let dr = 1.0 + t * model.g0_derivative(w);
        let step = r / dr;
        if !step.is_finite() {
            break;
        }
        g -= step;
    }
    g
}

/// Solves `G = G₀(z − tG)` for the model's `G₀`.
///
/// Damped iteration `G ← (1−α)G + α G₀(z − tG)` with `α = 0.5` from `G₀(z)`,
/// polished by Newton on the residual. If that leaves a residual above
/// `1e-10` or the wrong Herglotz sign, the solve is repeated by continuation
/// from `Im z = ±max(1, |Im z|)` down to the target.
pub fn solve_g(model: &SpectrumModel, z: Complex64, t: f64) -> Result<Complex64> {
    if z.im == 0.0 || !z.is_finite() {
        return Err(invalid(format!("solve_G needs a finite z off the real axis, got {z}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("t = {t} must be finite and nonnegative")));
    }
    if t == 0.0 {
        return Ok(model.g0(z));
    }

    let mut g = model.g0(z);
    for _ in 0..MAX_DAMPED_ITERATIONS {
        let next = model.g0(z - t * g);
        if (next - g).norm() < RESIDUAL_TOL {
            g = next;
            break;
        }
        g = (1.0 - DAMPING) * g + DAMPING * next;
    }
    g = newton(model, z, t, g);
    if herglotz_ok(z, g) && residual(model, z, t, g) < RESIDUAL_TOL {
        return Ok(g);
    }

    // Continuation in the imaginary part.
    let target = z.im.abs();
    let mut im = target.max(1.0);
    let sign = z.im.signum();
    let mut g = model.g0(Complex64::new(z.re, sign * im));
    loop {
        let zk = Complex64::new(z.re, sign * im);
        for _ in 0..MAX_DAMPED_ITERATIONS / 10 {
            g = (1.0 - DAMPING) * g + DAMPING * model.g0(zk - t * g);
        }
        g = newton(model, zk, t, g);
        if im <= target {
            break;
        }
        im = (im * 0.5).max(target);
    }
    let res = residual(model, z, t, g);
    if herglotz_ok(z, g) && res < RESIDUAL_TOL {
        Ok(g)
    } else {
        Err(Error::NonConvergence {
            z,
            t,
            residual: res,
            iterations: MAX_DAMPED_ITERATIONS + MAX_NEWTON_ITERATIONS,
        })
    }
}

/// Solves `G̃ = G̃₀(z − q t G̃)` for the minor's transform.
pub fn solve_g_tilde(model: &SpectrumModel, z: Complex64, t: f64, q: f64) -> Result<Complex64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!("minor fraction q = {q} must lie in (0, 1]")));
    }
    solve_g(model, z, q * t)
}

/// Density and Hilbert transform at a real point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryValues {
    pub lambda: f64,
    pub t: f64,
    /// Hilbert transform `Re G(λ − i0)`.
    pub v: f64,
    /// Density `Im G(λ − i0) / π`, clipped at zero.
    pub rho: f64,
    /// Set within [`EDGE_DISTANCE`] of a support edge.
    pub near_edge: bool,
    /// Set when the two ε evaluations disagree by more than `1e-4` relative.
    pub warning: Option<String>,
}

fn extrapolate(g: &dyn Resolvent, lambda: f64, eps: f64) -> Result<(Complex64, Complex64)> {
    let g1 = g.eval(Complex64::new(lambda, -eps))?;
    let g2 = g.eval(Complex64::new(lambda, -0.5 * eps))?;
    Ok((2.0 * g2 - g1, g1 - g2))
}

/// Density at `λ` via the ε-extrapolated boundary value (no edge probing).
pub fn boundary_density(g: &dyn Resolvent, lambda: f64, eps: f64) -> Result<f64> {
    let (g0, _) = extrapolate(g, lambda, eps)?;
    Ok((g0.im / PI).max(0.0))
}

/// Boundary values from `G(λ − iε)` at `ε₀` and `ε₀/2`, combined by two-point
/// Richardson extrapolation (`2G(ε₀/2) − G(ε₀)`).
pub fn boundary_values(g: &dyn Resolvent, lambda: f64, t: f64) -> Result<BoundaryValues> {
    boundary_values_eps(g, lambda, t, BOUNDARY_EPS)
}

pub fn boundary_values_eps(
    g: &dyn Resolvent,
    lambda: f64,
    t: f64,
    eps: f64,
) -> Result<BoundaryValues> {
    if !lambda.is_finite() {
        return Err(invalid("boundary point must be finite"));
    }
    let (g0, diff) = extrapolate(g, lambda, eps)?;
    let rho = (g0.im / PI).max(0.0);
    let scale = g0.norm().max(1e-300);
    let warning = (diff.norm() > 1e-4 * scale).then(|| {
        format!(
            "epsilon extrapolation unstable at lambda = {lambda}: |G(e) - G(e/2)| = {:.3e}",
            diff.norm()
        )
    });
    let inside = rho > ZERO_DENSITY;
    let near_edge = [-EDGE_DISTANCE, EDGE_DISTANCE]
        .iter()
        .map(|d| boundary_density(g, lambda + d, eps))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .any(|r| (r > ZERO_DENSITY) != inside);
    Ok(BoundaryValues {
        lambda,
        t,
        v: g0.re,
        rho,
        near_edge,
        warning,
    })
}

/// Support intervals of the boundary density on `[lo, hi]`.
///
/// Scans with step `(hi − lo) / resolution`, then refines every sign change
/// of `ρ > threshold` by bisection to `1e-12`.
pub fn density_support(
    g: &dyn Resolvent,
    lo: f64,
    hi: f64,
    resolution: usize,
    eps: f64,
    threshold: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(hi > lo) || resolution < 2 {
        return Err(invalid("support scan needs lo < hi and resolution >= 2"));
    }
    let inside = |x: f64| boundary_density(g, x, eps).map(|r| r > threshold);
    let refine = |mut a: f64, mut b: f64, a_in: bool| -> Result<f64> {
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            if inside(m)? == a_in {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    };
    let step = (hi - lo) / resolution as f64;
    let mut intervals = Vec::new();
    let mut prev_x = lo;
    let mut prev_in = inside(lo)?;
    let mut start = prev_in.then_some(lo);
    for k in 1..=resolution {
        let x = lo + step * k as f64;
        let now_in = inside(x)?;
        if now_in != prev_in {
            let edge = refine(prev_x, x, prev_in)?;
            if now_in {
                start = Some(edge);
            } else if let Some(s) = start.take() {
                intervals.push((s, edge));
            }
        }
        prev_x = x;
        prev_in = now_in;
    }
    if let Some(s) = start {
        intervals.push((s, hi));
    }
    Ok(intervals)
}

/// Ensures an evaluation point is strictly inside the support (used by
/// formulas that divide by the density).
pub(crate) fn require_interior(bv: &BoundaryValues, floor: f64, what: &str) -> Result<()> {
    if bv.near_edge || bv.rho < floor {
        return Err(domain(format!(
            "{what} = {} is at or beyond a spectral edge (density {:.3e}, near_edge = {})",
            bv.lambda, bv.rho, bv.near_edge
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_atoms() -> SpectrumModel {
        SpectrumModel::new(vec![(-1.0, 0.5), (1.0, 0.5)], vec![], 1.0).unwrap()
    }

    #[test]
    fn model_validation() {
        assert!(SpectrumModel::new(vec![(0.0, 0.5)], vec![], 1.0).is_err());
        assert!(SpectrumModel::new(vec![(0.0, 1.0)], vec![0.0], 1.0).is_err());
        assert!(SpectrumModel::new(vec![(0.0, 1.0)], vec![3.0], 0.0).is_err());
        assert!(SpectrumModel::new(vec![], vec![], 0.5).is_err());
        let m = SpectrumModel::new(vec![(0.0, 1.0)], vec![3.0], 0.5).unwrap();
        assert_eq!(m.spikes(), &[3.0]);
        let u = SpectrumModel::uniform_atoms(&[-1.0, 0.0, 1.0, 2.0, 5.0, 7.0, 9.0], 1.0).unwrap();
        assert_eq!(u.atoms().len(), 7);
    }

    #[test]
    fn model_json_round_trip() {
        let m = SpectrumModel::new(vec![(-1.0, 0.25), (2.0, 0.75)], vec![4.5], 0.3).unwrap();
        let s = m.to_json();
        assert_eq!(s, r#"{"atoms":[[-1.0,0.25],[2.0,0.75]],"spikes":[4.5],"q":0.3}"#);
        assert_eq!(SpectrumModel::from_json(&s).unwrap(), m);
        assert!(SpectrumModel::from_json(r#"{"atoms":[[0,0.5]],"spikes":[],"q":1}"#).is_err());
    }

    #[test]
    fn atomic_transform_examples() {
        let null = SpectrumModel::null(1.0).unwrap();
        assert_abs_diff_eq!(stieltjes_atomic(&null, c(0.0, 1.0)).unwrap().im, -1.0);
        let g = stieltjes_atomic(&two_atoms(), c(0.0, 2.0)).unwrap();
        assert_abs_diff_eq!(g.re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.im, -0.4, epsilon = 1e-15);
        assert!(stieltjes_atomic(&null, c(1.0, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn atomic_transform_is_herglotz(
            locs in proptest::collection::vec(-5.0f64..5.0, 1..6),
            re in -10.0f64..10.0,
            im in 1e-6f64..10.0,
        ) {
            let model = SpectrumModel::uniform_atoms(&locs, 1.0).unwrap();
            let g = stieltjes_atomic(&model, c(re, im)).unwrap();
            prop_assert!(g.im < 0.0);
        }
    }

    #[test]
    fn semicircle_closed_form_examples() {
        let g = semicircle_g(c(100.0, 0.0), 1.0);
        assert_abs_diff_eq!(g.re, 0.010001, epsilon = 1e-6);
        let g = semicircle_g(c(0.0, 1.0), 1.0);
        assert_abs_diff_eq!(g.im, (1.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.re, 0.0, epsilon = 1e-14);
        let g = semicircle_g(c(0.0, -1e-8), 1.0);
        assert_abs_diff_eq!(g.re, 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(g.im, 1.0, epsilon = 1e-7);
        // Outside the bulk on the real axis.
        let g = semicircle_g(c(3.0, 0.0), 1.0);
        assert_abs_diff_eq!(g.re, (3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-14);
        let g = semicircle_g(c(-3.0, 0.0), 1.0);
        assert_abs_diff_eq!(g.re, -(3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn semicircle_density_values() {
        assert_abs_diff_eq!(semicircle_density(0.0, 1.0), 1.0 / PI, epsilon = 1e-15);
        assert_eq!(semicircle_density(2.0, 1.0), 0.0);
        assert_eq!(semicircle_density(-2.0 * 0.7f64.sqrt(), 0.7), 0.0);
        assert_eq!(semicircle_density(5.0, 1.0), 0.0);
        assert_abs_diff_eq!(semicircle_hilbert(1.0, 2.0), 0.25);
    }

    #[test]
    fn semicircle_density_integrates_to_one() {
        // Substituting λ = 2 sin θ turns the integrand into (2/π) cos² θ.
        let m = 20_000;
        let h = PI / m as f64;
        let total: f64 = (0..m)
            .map(|k| {
                let th = -PI / 2.0 + (k as f64 + 0.5) * h;
                semicircle_density(2.0 * th.sin(), 1.0) * 2.0 * th.cos() * h
            })
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn solver_matches_closed_form_for_null_model() {
        let null = SpectrumModel::null(1.0).unwrap();
        for k in 0..20 {
            let re = -3.0 + 0.3 * k as f64;
            let im = if k % 2 == 0 { 0.05 + 0.1 * k as f64 } else { -(0.01 + 0.2 * k as f64) };
            let z = c(re, im);
            let g = solve_g(&null, z, 1.0).unwrap();
            assert!((g - semicircle_g(z, 1.0)).norm() < 1e-10, "z = {z}");
        }
    }

    #[test]
    fn solver_at_zero_time_is_initial_transform() {
        let m = two_atoms();
        let z = c(0.3, 0.4);
        assert_eq!(solve_g(&m, z, 0.0).unwrap(), stieltjes_atomic(&m, z).unwrap());
        let g = solve_g(&m, z, 1e-12).unwrap();
        assert!((g - stieltjes_atomic(&m, z).unwrap()).norm() < 1e-10);
    }

    #[test]
    fn solver_rejects_real_argument() {
        assert!(solve_g(&two_atoms(), c(0.5, 0.0), 1.0).is_err());
    }

    #[test]
    fn minor_solver_scales_time() {
        let m = two_atoms();
        let z = c(0.2, -0.3);
        assert_eq!(solve_g_tilde(&m, z, 1.0, 1.0).unwrap(), solve_g(&m, z, 1.0).unwrap());
        let null = SpectrumModel::null(0.5).unwrap();
        let g = solve_g_tilde(&null, z, 1.0, 0.5).unwrap();
        assert!((g - semicircle_g(z, 0.5)).norm() < 1e-10);
        assert!(solve_g_tilde(&m, z, 1.0, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn solver_output_is_herglotz_with_small_residual(
            locs in proptest::collection::vec(-3.0f64..3.0, 1..5),
            re in -5.0f64..5.0,
            im in 1e-4f64..3.0,
            upper in any::<bool>(),
            t in 0.01f64..3.0,
        ) {
            let model = SpectrumModel::uniform_atoms(&locs, 1.0).unwrap();
            let z = c(re, if upper { im } else { -im });
            let g = solve_g(&model, z, t).unwrap();
            prop_assert!(g.im * z.im < 0.0);
            prop_assert!((g - model.g0(z - t * g)).norm() < 1e-10);
        }
    }

    #[test]
    fn boundary_values_of_semicircle() {
        let sc = Semicircle { variance: 1.0 };
        let bv = boundary_values(&sc, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(bv.v, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(bv.rho, 1.0 / PI, epsilon = 1e-9);
        assert!(!bv.near_edge && bv.warning.is_none());

        let bv = boundary_values(&sc, 3.0, 1.0).unwrap();
        assert!(bv.rho < 1e-8);
        assert_abs_diff_eq!(bv.v, (3.0 - 5f64.sqrt()) / 2.0, epsilon = 1e-9);

        assert!(boundary_values(&sc, 2.0 - 5e-4, 1.0).unwrap().near_edge);
    }

    #[test]
    fn boundary_values_reproduce_density_and_hilbert_inside_bulk() {
        for t in [0.5, 1.0, 2.0] {
            let sc = Semicircle { variance: t };
            let edge = 2.0 * f64::sqrt(t) - 0.05;
            for k in 0..=40 {
                let lam = -edge + 2.0 * edge * k as f64 / 40.0;
                let bv = boundary_values(&sc, lam, t).unwrap();
                assert!((bv.rho - semicircle_density(lam, t)).abs() < 1e-6);
                assert!((bv.v - semicircle_hilbert(lam, t)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_atom_density_is_symmetric_and_normalized() {
        let fc = FreeConvolution { model: two_atoms(), shift: 1.0 };
        for k in 0..30 {
            let lam = 0.1 * k as f64;
            let a = boundary_values(&fc, lam, 1.0).unwrap();
            let b = boundary_values(&fc, -lam, 1.0).unwrap();
            assert!((a.rho - b.rho).abs() < 1e-8, "lambda {lam}");
        }
        let support = density_support(&fc, -4.0, 4.0, 400, 1e-9, 1e-7).unwrap();
        assert_eq!(support.len(), 1);
        let (lo, hi) = support[0];
        assert_abs_diff_eq!(lo, -hi, epsilon = 1e-9);
        // At t = 1 the two atoms have just merged: ρ(0) = 0 with a cube-root cusp.
        // λ = hi·sin³θ absorbs both the cusp and the square-root edge.
        let m = 2000;
        let h = PI / 2.0 / m as f64;
        let half_mass: f64 = (0..m)
            .map(|k| {
                let th = (k as f64 + 0.5) * h;
                let (s, c) = th.sin_cos();
                boundary_density(&fc, hi * s.powi(3), 1e-9).unwrap() * 3.0 * hi * s * s * c * h
            })
            .sum();
        let total = 2.0 * half_mass;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn minor_semicircle_support_edge() {
        let null = SpectrumModel::null(0.5).unwrap();
        let fc = FreeConvolution { model: null, shift: 0.5 };
        let support = density_support(&fc, -3.0, 3.0, 600, 1e-9, 1e-7).unwrap();
        assert_eq!(support.len(), 1);
        let edge = 2.0 * 0.5f64.sqrt();
        assert_abs_diff_eq!(support[0].0, -edge, epsilon = 1e-6);
        assert_abs_diff_eq!(support[0].1, edge, epsilon = 1e-6);
        // And it is the semicircle of radius 2√(qt).
        for k in 0..10 {
            let mu = -1.3 + 0.29 * k as f64;
            let rho = boundary_density(&fc, mu, BOUNDARY_EPS).unwrap();
            assert!((rho - semicircle_density(mu, 0.5)).abs() < 1e-6);
        }
    }

    #[test]
    fn quantile_examples() {
        assert_abs_diff_eq!(semicircle_quantile(0.5, 1.3, 1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(semicircle_quantile(0.0, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(semicircle_quantile(1.0, 4.0, 1.0).unwrap(), -4.0);
        for k in 0..=100 {
            let x = k as f64 / 100.0;
            let lam = semicircle_quantile(x, 1.0, 1.0).unwrap();
            assert!((semicircle_tail_mass(lam, 1.0) - x).abs() < 1e-9);
            let q: f64 = 0.37;
            let mu = semicircle_quantile(x, 1.0, q.sqrt()).unwrap();
            assert!((mu - q.sqrt() * lam).abs() < 1e-10);
        }
        assert!(semicircle_quantile(1.2, 1.0, 1.0).is_err());
    }

    #[test]
    fn tail_mass_matches_quadrature() {
        for &lam in &[-1.5, -0.2, 0.0, 0.9, 1.99] {
            let m = 20_000;
            let h = (2.0 - lam) / m as f64;
            let q: f64 = (0..m)
                .map(|k| semicircle_density(lam + (k as f64 + 0.5) * h, 1.0) * h)
                .sum();
            assert!((q - semicircle_tail_mass(lam, 1.0)).abs() < 1e-6);
        }
    }
}
