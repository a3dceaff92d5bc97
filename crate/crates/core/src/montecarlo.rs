//! Finite-`N` experiments that estimate rescaled mean squared overlaps with
//! 99% confidence intervals and line them up against the limiting formulas,
//! plus two probes of the stochastic calculus behind those formulas.
//!
//! Trials run in parallel on a dedicated rayon pool. Trial `k` draws from
//! stream `k` of the master seed and writes only its own output slot; the
//! reduction walks the slots in trial order, so a report is bitwise identical
//! for any thread count.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ensembles::{
    bernoulli_with_rng, derive_stream, goe_with_rng, minor_truncate, rank_one, sample_goe,
    sample_path, SeedSpec, SymmetricMatrix,
};
use crate::error::{domain, invalid, Error, Result};
use crate::freeprob::{
    boundary_density, density_support, semicircle_density, FreeConvolution, SpectrumModel,
    BOUNDARY_EPS,
};
use crate::overlaps_theory::{
    bernoulli_spike, f_spike, g_spike_bulk, interlace_interval, spike_mass, w_general, w_goe,
    InitialOverlapTransform,
};
use crate::spectral::{
    check_interlacing, eig_minor, eig_sym, overlap_grid, quantile_index, OverlapGrid,
    SpectralDecomposition,
};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;
/// Fewest trials accepted by experiments that report confidence intervals.
pub const MIN_CI_TRIALS: usize = 100;
const MAX_ABORTED_FRACTION: f64 = 0.01;
const NORMALIZATION_TOL: f64 = 1e-10;
const RECONSTRUCTION_TOL: f64 = 1e-8;
/// Outliers closer than `0.1√t` to the semicircle edge count as absorbed.
const SPIKE_GAP: f64 = 0.1;

/// How the rank-one deterministic part `A = ψψᵀ` is laid out.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankOneRecipe {
    /// `‖ψ‖² = λ`, with mass `μ` spread evenly over the minor's coordinates and
    /// `λ − μ` over the rest. The minor then has the single nonzero eigenvalue
    /// `μ` and the initial top overlap is `μ/λ`.
    Split { lambda: f64, mu: f64 },
    /// `ψ = √(λ/(N−n)) (0,…,0,1,…,1)`: the minor does not see the spike.
    Outside { lambda: f64 },
    Vector { psi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ASpec {
    Null,
    RankOne { recipe: RankOneRecipe },
    Explicit { rows: Vec<Vec<f64>> },
    /// Diagonal `A` realizing the model's atoms, each atom spread evenly along
    /// the diagonal so the minor sees the same mixture. Spikes occupy the last
    /// diagonal slots.
    Model { model: SpectrumModel },
    /// The whole matrix is Bernoulli(`p`) with entries in `{0, 1/√N}`.
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    /// Overlaps of the minor eigenvector at quantile `x` with every full
    /// eigenvector, binned by `λ`.
    Bulk { x: f64 },
    /// Top minor eigenvector against top full eigenvector.
    SpikeSpike,
    /// Minor bulk eigenvectors against the full spike, binned by `μ`.
    SpikeBulk,
    /// Bulk pairs near `λ = 0` binned by `μ`, top eigenpairs excluded.
    BernoulliBulk,
    /// `n/N − E⟨Φ₁|Ψ₁⟩²` for each matrix size.
    BernoulliSpike { sizes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Binning {
    pub count: usize,
    /// `None` selects the default range for the experiment.
    pub range: Option<(f64, f64)>,
}

impl Default for Binning {
    fn default() -> Self {
        Self {
            count: 25,
            range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(rename = "N")]
    pub big_n: usize,
    pub q: f64,
    pub t: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub a_spec: ASpec,
    pub target: Target,
    pub binning: Binning,
    /// Worker threads, 0 for rayon's default. Has no effect on results.
    #[serde(skip)]
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn new(big_n: usize, q: f64, t: f64, trials: usize, master_seed: u64, target: Target) -> Self {
        Self {
            big_n,
            q,
            t,
            trials,
            master_seed,
            a_spec: ASpec::Null,
            target,
            binning: Binning::default(),
            threads: 0,
        }
    }

    /// Minor size `round(qN)`.
    pub fn n(&self) -> usize {
        minor_size(self.q, self.big_n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < MIN_CI_TRIALS {
            return Err(invalid(format!(
                "trials = {} but confidence intervals need at least {MIN_CI_TRIALS}",
                self.trials
            )));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(invalid(format!("q = {} must lie in (0, 1)", self.q)));
        }
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(invalid(format!("t = {} must be positive", self.t)));
        }
        if !matches!(self.target, Target::BernoulliSpike { .. }) {
            check_minor_size(self.q, self.big_n)?;
        }
        if self.binning.count == 0 {
            return Err(invalid("bin count must be positive"));
        }
        if let Some((lo, hi)) = self.binning.range {
            if !(hi > lo) {
                return Err(invalid(format!("bin range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }
}

fn minor_size(q: f64, big_n: usize) -> usize {
    (q * big_n as f64).round() as usize
}

fn check_minor_size(q: f64, big_n: usize) -> Result<usize> {
    let n = minor_size(q, big_n);
    if n < 1 || n + 1 > big_n {
        return Err(invalid(format!(
            "minor size round(qN) = {n} must satisfy 1 <= n <= N - 1 (N = {big_n})"
        )));
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapEstimate {
    pub center: f64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
}

impl OverlapEstimate {
    fn from_mean_se(center: f64, mean: f64, se: f64, n_samples: usize) -> Self {
        Self {
            center,
            mean,
            ci_low: mean - Z99 * se,
            ci_high: mean + Z99 * se,
            n_samples,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Theory matched to one estimate. `w_rho` is `w` times the density at the
/// bin center, the quantity usually plotted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryValue {
    pub w: Option<f64>,
    pub w_rho: Option<f64>,
}

/// Extremes of the per-trial exact checks over all accepted trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditStats {
    pub pairs_checked: usize,
    /// Smallest interlacing margin seen; negative would be a violation.
    pub worst_interlacing_margin: f64,
    pub max_normalization_error: f64,
    pub max_reconstruction_error: f64,
}

impl Default for AuditStats {
    fn default() -> Self {
        Self {
            pairs_checked: 0,
            worst_interlacing_margin: f64::INFINITY,
            max_normalization_error: 0.0,
            max_reconstruction_error: 0.0,
        }
    }
}

impl AuditStats {
    fn absorb(&mut self, other: &AuditStats) {
        self.pairs_checked += other.pairs_checked;
        self.worst_interlacing_margin = self.worst_interlacing_margin.min(other.worst_interlacing_margin);
        self.max_normalization_error = self.max_normalization_error.max(other.max_normalization_error);
        self.max_reconstruction_error = self.max_reconstruction_error.max(other.max_reconstruction_error);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArgmaxCheck {
    /// Center of the bin maximizing `mc_mean · ρ(center)`.
    pub center: f64,
    pub bin_width: f64,
    pub interval: (f64, f64),
    /// The argmax bin overlaps the interlacing interval.
    pub inside: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassCheck {
    pub estimate: OverlapEstimate,
    pub theory: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub lambda1: f64,
    pub mu1: f64,
    /// Second-largest eigenvalue: the empirical top of the bulk.
    pub edge_full: f64,
    pub edge_minor: f64,
}

/// Experiment-specific diagnostics. Fields not relevant to an experiment stay
/// `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    pub trials_used: usize,
    pub trials_aborted: usize,
    /// Trials dropped because the outlier had merged with the bulk.
    pub trials_excluded: usize,
    pub audit: AuditStats,
    /// Trial-averaged minor eigenvalue at the target quantile.
    pub mu_hat: Option<f64>,
    /// `t` used by the theory when it differs from the configured one.
    pub effective_t: Option<f64>,
    pub interior: Vec<bool>,
    pub argmax: Option<ArgmaxCheck>,
    pub spike_mass: Option<MassCheck>,
    /// `|mean − theory| / theory` for single-point experiments.
    pub relative_error: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub estimates: Vec<OverlapEstimate>,
    pub theory: Vec<TheoryValue>,
    /// Fraction of interior estimates whose CI contains the theory value.
    pub coverage: Option<f64>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub wall_time_s: f64,
}

// ---------------------------------------------------------------------------
// Trial plumbing

struct TrialBatch<T> {
    results: Vec<T>,
    aborted: usize,
    first_error: Option<(u64, Error)>,
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("cannot start {threads} worker threads: {e}")))
}

/// Runs `trial(k)` for `k` in `0..trials`, keeping results in trial order.
fn run_trials<T, F>(threads: usize, trials: usize, trial: F) -> Result<TrialBatch<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let outcomes: Vec<Result<T>> =
        pool(threads)?.install(|| (0..trials as u64).into_par_iter().map(&trial).collect());
    let mut batch = TrialBatch {
        results: Vec::with_capacity(trials),
        aborted: 0,
        first_error: None,
    };
    for (k, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => batch.results.push(r),
            Err(e) => {
                batch.aborted += 1;
                batch.first_error.get_or_insert((k as u64, e));
            }
        }
    }
    if batch.aborted as f64 > MAX_ABORTED_FRACTION * trials as f64 {
        let (k, e) = batch.first_error.take().expect("aborted trials record an error");
        return Err(Error::TrialsAborted {
            aborted: batch.aborted,
            trials,
            first: format!("trial {k}: {e}"),
        });
    }
    Ok(batch)
}

/// Decomposes `x` and its minor and runs the exact checks on the pair.
struct Snapshot {
    full: SpectralDecomposition,
    grid: OverlapGrid,
    audit: AuditStats,
}

fn snapshot(x: &SymmetricMatrix, n: usize) -> Result<Snapshot> {
    let full = eig_sym(x)?;
    let minor = eig_minor(x, n)?;
    let grid = overlap_grid(&full, &minor, n)?;
    let interlacing = check_interlacing(full.eigenvalues(), grid.minor_evals());
    if !interlacing.holds {
        return Err(Error::DegenerateInput(format!(
            "interlacing violated by {:e}",
            -interlacing.worst_margin
        )));
    }
    let normalization = grid.normalization_audit();
    if normalization > NORMALIZATION_TOL {
        return Err(Error::DegenerateInput(format!(
            "overlap rows deviate from 1 by {normalization:e}"
        )));
    }
    let reconstruction = full
        .probe_reconstruction_error(x)
        .max(minor.probe_reconstruction_error(&minor_truncate(x, n)?));
    if reconstruction > RECONSTRUCTION_TOL {
        return Err(Error::DegenerateInput(format!(
            "reconstruction error {reconstruction:e}"
        )));
    }
    Ok(Snapshot {
        full,
        grid,
        audit: AuditStats {
            pairs_checked: 1,
            worst_interlacing_margin: interlacing.worst_margin,
            max_normalization_error: normalization,
            max_reconstruction_error: reconstruction,
        },
    })
}

/// Deterministic part of `X_t`, or the Bernoulli parameter.
enum Sampler {
    Gaussian { a: Option<SymmetricMatrix>, t: f64 },
    Bernoulli { p: f64 },
}

impl Sampler {
    fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        match &cfg.a_spec {
            ASpec::Bernoulli { p } => Ok(Self::Bernoulli { p: *p }),
            spec => Ok(Self::Gaussian {
                a: build_a(spec, cfg.big_n, cfg.n())?,
                t: cfg.t,
            }),
        }
    }

    fn sample(&self, big_n: usize, seed: SeedSpec) -> Result<SymmetricMatrix> {
        let mut rng = seed.rng();
        self.sample_with(big_n, &mut rng)
    }

    fn sample_with<R: Rng + ?Sized>(&self, big_n: usize, rng: &mut R) -> Result<SymmetricMatrix> {
        match self {
            Self::Gaussian { a, t } => {
                let h = goe_with_rng(big_n, *t, rng)?;
                match a {
                    Some(a) => a.add(&h),
                    None => Ok(h),
                }
            }
            Self::Bernoulli { p } => bernoulli_with_rng(big_n, *p, rng),
        }
    }
}

/// Builds `ψ` for a rank-one recipe.
pub fn rank_one_vector(recipe: &RankOneRecipe, big_n: usize, n: usize) -> Result<Vec<f64>> {
    match recipe {
        RankOneRecipe::Split { lambda, mu } => {
            if !(*mu > 0.0 && mu <= lambda) {
                return Err(domain(format!("need 0 < mu <= lambda, got mu = {mu}, lambda = {lambda}")));
            }
            if n == big_n {
                return Err(invalid("split spike needs n < N"));
            }
            let head = (mu / n as f64).sqrt();
            let tail = ((lambda - mu) / (big_n - n) as f64).sqrt();
            Ok((0..big_n).map(|k| if k < n { head } else { tail }).collect())
        }
        RankOneRecipe::Outside { lambda } => {
            if !(*lambda > 0.0) {
                return Err(domain(format!("spike lambda = {lambda} must be positive")));
            }
            let tail = (lambda / (big_n - n) as f64).sqrt();
            Ok((0..big_n).map(|k| if k < n { 0.0 } else { tail }).collect())
        }
        RankOneRecipe::Vector { psi } => {
            if psi.len() != big_n {
                return Err(invalid(format!("psi has length {}, expected {big_n}", psi.len())));
            }
            Ok(psi.clone())
        }
    }
}

/// Diagonal entries realizing `model` at size `big_n`: atom counts are rounded
/// from the weights and each atom's entries are spread evenly along the
/// diagonal; spikes take the last slots.
pub fn model_diagonal(model: &SpectrumModel, big_n: usize) -> Result<Vec<f64>> {
    let spikes = model.spikes();
    if spikes.len() >= big_n {
        return Err(invalid("more spikes than matrix rows"));
    }
    let slots = big_n - spikes.len();
    let atoms = model.atoms();
    let mut counts: Vec<usize> = atoms.iter().map(|a| (a.1 * slots as f64).floor() as usize).collect();
    // Largest-remainder rounding so the counts add up to `slots`.
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = atoms[a].1 * slots as f64 - counts[a] as f64;
        let rb = atoms[b].1 * slots as f64 - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = slots - counts.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        counts[k] += 1;
    }
    let mut keyed: Vec<(f64, usize, f64)> = Vec::with_capacity(slots);
    for (k, (&(loc, _), &c)) in atoms.iter().zip(&counts).enumerate() {
        keyed.extend((0..c).map(|m| ((m as f64 + 0.5) / c as f64, k, loc)));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut diag: Vec<f64> = keyed.into_iter().map(|e| e.2).collect();
    diag.extend_from_slice(spikes);
    Ok(diag)
}

/// Materializes `A`; `None` for the null matrix.
pub fn build_a(spec: &ASpec, big_n: usize, n: usize) -> Result<Option<SymmetricMatrix>> {
    match spec {
        ASpec::Null => Ok(None),
        ASpec::RankOne { recipe } => Ok(Some(rank_one(&rank_one_vector(recipe, big_n, n)?)?)),
        ASpec::Explicit { rows } => {
            let a = SymmetricMatrix::from_rows(rows)?;
            if a.dim() != big_n {
                return Err(invalid(format!("explicit A is {0}x{0}, expected N = {big_n}", a.dim())));
            }
            Ok(Some(a))
        }
        ASpec::Model { model } => Ok(Some(SymmetricMatrix::from_diagonal(&model_diagonal(model, big_n)?))),
        ASpec::Bernoulli { .. } => Err(invalid("Bernoulli matrices have no separate deterministic part")),
    }
}

/// Pooled mean over trials with a trial-clustered standard error, so samples
/// from the same matrix are not treated as independent.
#[derive(Debug, Clone, Default)]
struct ClusterAccumulator {
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl ClusterAccumulator {
    fn push_trial(&mut self, sum: f64, count: usize) {
        self.sums.push(sum);
        self.counts.push(count);
    }

    fn estimate(&self, center: f64) -> Option<OverlapEstimate> {
        let total: usize = self.counts.iter().sum();
        let trials = self.counts.iter().filter(|&&c| c > 0).count();
        if total == 0 || trials < 2 {
            return None;
        }
        let mean = self.sums.iter().sum::<f64>() / total as f64;
        let m = self.sums.len() as f64;
        let ss: f64 = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(s, &c)| (s - mean * c as f64).powi(2))
            .sum();
        let se = (ss * m / (m - 1.0)).sqrt() / total as f64;
        Some(OverlapEstimate::from_mean_se(center, mean, se, total))
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[derive(Debug, Clone, Copy)]
struct Bins {
    lo: f64,
    width: f64,
    count: usize,
}

impl Bins {
    fn new(lo: f64, hi: f64, count: usize) -> Self {
        Self {
            lo,
            width: (hi - lo) / count as f64,
            count,
        }
    }

    fn index(&self, x: f64) -> Option<usize> {
        let k = ((x - self.lo) / self.width).floor();
        (k >= 0.0 && (k as usize) < self.count).then_some(k as usize)
    }

    fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width
    }
}

/// Per-bin samples from one trial: `(bin, abscissa, value)`.
type BinnedSamples = Vec<(usize, f64, f64)>;

/// Folds per-trial binned samples into per-bin accumulators and keeps every
/// sample's abscissa for sample-averaged theory.
fn reduce_bins(trials: &[BinnedSamples], bins: &Bins) -> (Vec<ClusterAccumulator>, Vec<Vec<f64>>) {
    let mut acc = vec![ClusterAccumulator::default(); bins.count];
    let mut abscissae = vec![Vec::new(); bins.count];
    let mut sums = vec![0.0; bins.count];
    let mut counts = vec![0usize; bins.count];
    for samples in trials {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for &(b, x, v) in samples {
            sums[b] += v;
            counts[b] += 1;
            abscissae[b].push(x);
        }
        for b in 0..bins.count {
            acc[b].push_trial(sums[b], counts[b]);
        }
    }
    (acc, abscissae)
}

fn coverage(estimates: &[OverlapEstimate], theory: &[TheoryValue], interior: &[bool]) -> Option<f64> {
    let (hits, total) = estimates
        .iter()
        .zip(theory)
        .zip(interior)
        .filter(|(_, &inside)| inside)
        .filter_map(|((e, th), _)| th.w.map(|w| e.contains(w)))
        .fold((0usize, 0usize), |(h, n), c| (h + c as usize, n + 1));
    (total > 0).then(|| hits as f64 / total as f64)
}

fn sample_mean<F: Fn(f64) -> Result<f64>>(xs: &[f64], f: F) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &x in xs {
        total += f(x).ok()?;
    }
    Some(total / xs.len() as f64)
}

// ---------------------------------------------------------------------------
// Bulk

enum BulkTheory {
    Goe,
    General {
        s0: InitialOverlapTransform,
        g: FreeConvolution,
        g_tilde: FreeConvolution,
    },
}

impl BulkTheory {
    fn new(a: Option<&SymmetricMatrix>, n: usize, t: f64, q: f64) -> Result<Self> {
        let Some(a) = a else {
            return Ok(Self::Goe);
        };
        let full = eig_sym(a)?;
        let minor = eig_sym(&a.leading_block(n)?)?;
        Ok(Self::General {
            s0: InitialOverlapTransform::from_matrix(a, n)?,
            g: FreeConvolution {
                model: SpectrumModel::uniform_atoms(full.eigenvalues(), q)?,
                shift: t,
            },
            g_tilde: FreeConvolution {
                model: SpectrumModel::uniform_atoms(minor.eigenvalues(), q)?,
                shift: q * t,
            },
        })
    }

    fn rho(&self, lambda: f64, t: f64) -> Result<f64> {
        match self {
            Self::Goe => Ok(semicircle_density(lambda, t)),
            Self::General { g, .. } => boundary_density(g, lambda, BOUNDARY_EPS),
        }
    }

    /// Outer edges of the full matrix's limiting support.
    fn support(&self, a: Option<&SymmetricMatrix>, t: f64) -> Result<(f64, f64)> {
        match (self, a) {
            (Self::General { g, .. }, Some(a)) => {
                let reach = a.norm_inf() + 3.0 * t.sqrt();
                let intervals = density_support(g, -reach, reach, 800, 1e-9, 1e-7)?;
                match (intervals.first(), intervals.last()) {
                    (Some(first), Some(last)) => Ok((first.0, last.1)),
                    _ => Err(Error::DegenerateInput("limiting density has empty support".into())),
                }
            }
            _ => Ok((-2.0 * t.sqrt(), 2.0 * t.sqrt())),
        }
    }
}

/// Rescaled overlaps `N ⟨Φ_i|Ψ_j⟩²` of the minor eigenvector at quantile `x`
/// with all full eigenvectors, binned by `λ_j`.
///
/// Theory per bin is `W(μ̂, λ_j)` averaged over the bin's samples, with `μ̂`
/// the trial-averaged `μ_i`; for non-null `A` the general kernel is evaluated
/// at the bin center instead.
pub fn run_bulk_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    cfg.validate()?;
    let Target::Bulk { x } = cfg.target else {
        return Err(invalid("run_bulk_experiment needs a bulk target"));
    };
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("quantile x = {x} must lie in [0, 1]")));
    }
    if matches!(cfg.a_spec, ASpec::Bernoulli { .. }) {
        return Err(invalid("use run_bernoulli for Bernoulli matrices"));
    }
    let (big_n, n, t, q) = (cfg.big_n, cfg.n(), cfg.t, cfg.q);
    let sampler = Sampler::from_config(cfg)?;
    let a = match &sampler {
        Sampler::Gaussian { a, .. } => a.as_ref(),
        Sampler::Bernoulli { .. } => None,
    };
    let theory_model = BulkTheory::new(a, n, t, q)?;
    let (edge_lo, edge_hi) = theory_model.support(a, t)?;
    let half = 0.5 * (edge_hi - edge_lo);
    let (lo, hi) = cfg
        .binning
        .range
        .unwrap_or((edge_lo + 0.05 * half, edge_hi - 0.05 * half));
    let bins = Bins::new(lo, hi, cfg.binning.count);
    let row = quantile_index(x, n) - 1;

    let batch = run_trials(cfg.threads, cfg.trials, |k| {
        let xm = sampler.sample(big_n, derive_stream(cfg.master_seed, k))?;
        let snap = snapshot(&xm, n)?;
        let samples: BinnedSamples = snap
            .grid
            .row(row)
            .iter()
            .zip(snap.grid.full_evals())
            .filter_map(|(&o, &lam)| bins.index(lam).map(|b| (b, lam, big_n as f64 * o)))
            .collect();
        Ok((snap.grid.minor_evals()[row], samples, snap.audit))
    })?;

    let mut diagnostics = Diagnostics {
        trials_used: batch.results.len(),
        trials_aborted: batch.aborted,
        ..Default::default()
    };
    for r in &batch.results {
        diagnostics.audit.absorb(&r.2);
    }
    let mu_hat = batch.results.iter().map(|r| r.0).sum::<f64>() / batch.results.len() as f64;
    diagnostics.mu_hat = Some(mu_hat);

    let per_trial: Vec<BinnedSamples> = batch.results.into_iter().map(|r| r.1).collect();
    let (acc, lambdas) = reduce_bins(&per_trial, &bins);
    let mut estimates = Vec::new();
    let mut theory = Vec::new();
    let mut interior = Vec::new();
    for b in 0..bins.count {
        let center = bins.center(b);
        let Some(est) = acc[b].estimate(center) else {
            diagnostics.warnings.push(format!("bin at {center} has too few samples"));
            continue;
        };
        let w = match &theory_model {
            BulkTheory::Goe => sample_mean(&lambdas[b], |lam| w_goe(mu_hat, lam, t, q).map(|p| p.value)),
            BulkTheory::General { s0, g, g_tilde } => {
                w_general(s0, mu_hat, center, t, q, g, g_tilde).ok().map(|p| p.value)
            }
        };
        let rho = theory_model.rho(center, t)?;
        estimates.push(est);
        theory.push(TheoryValue {
            w,
            w_rho: w.map(|w| w * rho),
        });
        interior.push(center >= edge_lo + 0.15 * half && center <= edge_hi - 0.15 * half);
    }

    if matches!(theory_model, BulkTheory::Goe) {
        let mut best: Option<(f64, f64)> = None;
        for e in &estimates {
            let score = e.mean * semicircle_density(e.center, t);
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, e.center));
            }
        }
        if let Some((_, center)) = best {
            let interval = interlace_interval(x, t, q)?;
            let half_bin = 0.5 * bins.width;
            diagnostics.argmax = Some(ArgmaxCheck {
                center,
                bin_width: bins.width,
                interval,
                inside: center + half_bin >= interval.0 && center - half_bin <= interval.1,
            });
        }
    }

    let coverage = coverage(&estimates, &theory, &interior);
    diagnostics.interior = interior;
    Ok(ExperimentReport {
        config: cfg.clone(),
        estimates,
        theory,
        coverage,
        diagnostics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Spikes

fn spike_absorbed(top: f64, t: f64) -> bool {
    top < (2.0 + SPIKE_GAP) * t.sqrt()
}

/// Mean squared overlap between the top eigenvectors of `X_t` and its minor
/// for `A = ψψᵀ` built by [`RankOneRecipe::Split`].
pub fn run_spike_spike(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    cfg.validate()?;
    let ASpec::RankOne {
        recipe: RankOneRecipe::Split { lambda, mu },
    } = cfg.a_spec
    else {
        return Err(invalid("spike-spike experiments need a split rank-one A"));
    };
    let (big_n, n, t, q) = (cfg.big_n, cfg.n(), cfg.t, cfg.q);
    let theory = f_spike(lambda, mu, q, t)?;
    let sampler = Sampler::from_config(cfg)?;

    let batch = run_trials(cfg.threads, cfg.trials, |k| {
        let xm = sampler.sample(big_n, derive_stream(cfg.master_seed, k))?;
        let snap = snapshot(&xm, n)?;
        let absorbed = spike_absorbed(snap.full.eigenvalues()[0], t);
        Ok((snap.grid.get(0, 0), absorbed, snap.audit))
    })?;

    let mut diagnostics = Diagnostics {
        trials_aborted: batch.aborted,
        ..Default::default()
    };
    let mut values = Vec::new();
    for (overlap, absorbed, audit) in &batch.results {
        diagnostics.audit.absorb(audit);
        if *absorbed {
            diagnostics.trials_excluded += 1;
        } else {
            values.push(*overlap);
        }
    }
    if diagnostics.trials_excluded > 0 {
        diagnostics.warnings.push(format!(
            "{} trials excluded: spike absorbed into the bulk",
            diagnostics.trials_excluded
        ));
    }
    diagnostics.trials_used = values.len();
    if values.len() < 2 {
        return Err(Error::DegenerateInput("every trial had its spike absorbed".into()));
    }
    let (mean, se) = mean_se(&values);
    let est = OverlapEstimate::from_mean_se(t, mean, se, values.len());
    diagnostics.relative_error = Some((mean - theory).abs() / theory);
    diagnostics.interior = vec![true];
    Ok(ExperimentReport {
        config: cfg.clone(),
        coverage: Some(if est.contains(theory) { 1.0 } else { 0.0 }),
        estimates: vec![est],
        theory: vec![TheoryValue {
            w: Some(theory),
            w_rho: None,
        }],
        diagnostics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Top eigenvalues of one Dyson path `A + H_t` and its minor along `t_grid`.
pub fn run_spike_path(cfg: &ExperimentConfig, t_grid: &[f64]) -> Result<Vec<TrajectoryPoint>> {
    let big_n = cfg.big_n;
    let n = check_minor_size(cfg.q, big_n)?;
    let a = build_a(&cfg.a_spec, big_n, n)?;
    let noise = sample_path(big_n, t_grid, &derive_stream(cfg.master_seed, 0))?;
    let pool = pool(cfg.threads)?;
    let points: Vec<Result<TrajectoryPoint>> = pool.install(|| {
        t_grid
            .par_iter()
            .zip(noise.par_iter())
            .map(|(&t, h)| {
                let x = match &a {
                    Some(a) => a.add(h)?,
                    None => h.clone(),
                };
                let full = eig_sym(&x)?;
                let minor = eig_sym(&x.leading_block(n)?)?;
                let second = |e: &[f64]| e.get(1).copied().unwrap_or(f64::NAN);
                Ok(TrajectoryPoint {
                    t,
                    lambda1: full.eigenvalues()[0],
                    mu1: minor.eigenvalues()[0],
                    edge_full: second(full.eigenvalues()),
                    edge_minor: second(minor.eigenvalues()),
                })
            })
            .collect()
    });
    points.into_iter().collect()
}

/// Rescaled overlaps `N ⟨Φ_i|Ψ₁⟩²` of minor bulk eigenvectors with the full
/// spike for `A = ψψᵀ` supported off the minor, binned by `μ_i`, plus the
/// total mass `Σ_i ⟨Φ_i|Ψ₁⟩²`.
pub fn run_spike_bulk(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    cfg.validate()?;
    let lambda = match &cfg.a_spec {
        ASpec::RankOne {
            recipe: RankOneRecipe::Outside { lambda },
        } => *lambda,
        _ => return Err(invalid("spike-bulk experiments need a rank-one A supported outside the minor")),
    };
    let (big_n, n, t, q) = (cfg.big_n, cfg.n(), cfg.t, cfg.q);
    let mass_theory = spike_mass(lambda, q, t)?;
    g_spike_bulk(lambda, q, t, 0.0)?;
    let sampler = Sampler::from_config(cfg)?;
    let edge = 2.0 * (q * t).sqrt();
    let (lo, hi) = cfg.binning.range.unwrap_or((-0.95 * edge, 0.95 * edge));
    let bins = Bins::new(lo, hi, cfg.binning.count);

    let batch = run_trials(cfg.threads, cfg.trials, |k| {
        let xm = sampler.sample(big_n, derive_stream(cfg.master_seed, k))?;
        let snap = snapshot(&xm, n)?;
        let absorbed = spike_absorbed(snap.full.eigenvalues()[0], t);
        let mut mass = 0.0;
        let mut samples = BinnedSamples::new();
        for (i, &mu) in snap.grid.minor_evals().iter().enumerate() {
            let o = snap.grid.get(i, 0);
            mass += o;
            if let Some(b) = bins.index(mu) {
                samples.push((b, mu, big_n as f64 * o));
            }
        }
        Ok((samples, mass, absorbed, snap.audit))
    })?;

    let mut diagnostics = Diagnostics {
        trials_aborted: batch.aborted,
        ..Default::default()
    };
    let mut per_trial = Vec::new();
    let mut masses = Vec::new();
    for (samples, mass, absorbed, audit) in batch.results {
        diagnostics.audit.absorb(&audit);
        if absorbed {
            diagnostics.trials_excluded += 1;
        } else {
            per_trial.push(samples);
            masses.push(mass);
        }
    }
    if diagnostics.trials_excluded > 0 {
        diagnostics.warnings.push(format!(
            "{} trials excluded: spike absorbed into the bulk",
            diagnostics.trials_excluded
        ));
    }
    diagnostics.trials_used = masses.len();
    if masses.len() < 2 {
        return Err(Error::DegenerateInput("every trial had its spike absorbed".into()));
    }

    let (acc, mus) = reduce_bins(&per_trial, &bins);
    let mut estimates = Vec::new();
    let mut theory = Vec::new();
    let mut interior = Vec::new();
    for b in 0..bins.count {
        let center = bins.center(b);
        let Some(est) = acc[b].estimate(center) else {
            diagnostics.warnings.push(format!("bin at {center} has too few samples"));
            continue;
        };
        let w = sample_mean(&mus[b], |mu| g_spike_bulk(lambda, q, t, mu));
        estimates.push(est);
        theory.push(TheoryValue {
            w,
            w_rho: w.map(|w| w * semicircle_density(center, q * t)),
        });
        interior.push(center.abs() <= 0.85 * edge);
    }

    let (mean, se) = mean_se(&masses);
    diagnostics.spike_mass = Some(MassCheck {
        estimate: OverlapEstimate::from_mean_se(lambda, mean, se, masses.len()),
        theory: mass_theory,
        relative_error: (mean - mass_theory).abs() / mass_theory,
    });
    let coverage = coverage(&estimates, &theory, &interior);
    diagnostics.interior = interior;
    Ok(ExperimentReport {
        config: cfg.clone(),
        estimates,
        theory,
        coverage,
        diagnostics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Bernoulli

/// Bernoulli(`p`) experiments. The bulk is compared with the GOE kernel at
/// `t = p(1−p)` (the configured `t` is not used); spike mode compares
/// `n/N − E⟨Φ₁|Ψ₁⟩²` with its `1/N` expansion for every size in the target.
///
/// In spike mode `coverage` is the fraction of sizes whose estimate lies
/// within three CI half-widths of the expansion.
pub fn run_bernoulli(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    cfg.validate()?;
    let ASpec::Bernoulli { p } = cfg.a_spec else {
        return Err(invalid("Bernoulli experiments need a Bernoulli A specification"));
    };
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("Bernoulli p = {p} must lie in (0, 1)")));
    }
    match &cfg.target {
        Target::BernoulliBulk => bernoulli_bulk(cfg, p, start),
        Target::BernoulliSpike { sizes } => bernoulli_spike_mode(cfg, p, sizes, start),
        _ => Err(invalid("run_bernoulli needs a Bernoulli target")),
    }
}

fn bernoulli_bulk(cfg: &ExperimentConfig, p: f64, start: Instant) -> Result<ExperimentReport> {
    let (big_n, n, q) = (cfg.big_n, cfg.n(), cfg.q);
    let t = p * (1.0 - p);
    let sampler = Sampler::Bernoulli { p };
    // λ-window at 0 as wide as one bin of the default λ binning.
    let window = 2.0 * 1.9 * t.sqrt() / cfg.binning.count as f64;
    let edge = 2.0 * (q * t).sqrt();
    let (lo, hi) = cfg.binning.range.unwrap_or((-0.95 * edge, 0.95 * edge));
    let bins = Bins::new(lo, hi, cfg.binning.count);

    let batch = run_trials(cfg.threads, cfg.trials, |k| {
        let xm = sampler.sample(big_n, derive_stream(cfg.master_seed, k))?;
        let snap = snapshot(&xm, n)?;
        let mut samples = BinnedSamples::new();
        let mut pairs = Vec::new();
        let lambdas = snap.grid.full_evals();
        let picked: Vec<usize> = (1..big_n).filter(|&j| lambdas[j].abs() <= 0.5 * window).collect();
        for (i, &mu) in snap.grid.minor_evals().iter().enumerate().skip(1) {
            if let Some(b) = bins.index(mu) {
                for &j in &picked {
                    samples.push((b, mu, big_n as f64 * snap.grid.get(i, j)));
                    pairs.push((mu, lambdas[j]));
                }
            }
        }
        Ok((samples, pairs, snap.audit))
    })?;

    let mut diagnostics = Diagnostics {
        trials_used: batch.results.len(),
        trials_aborted: batch.aborted,
        effective_t: Some(t),
        ..Default::default()
    };
    let mut per_trial = Vec::new();
    let mut pairs_by_bin = vec![Vec::new(); bins.count];
    for (samples, pairs, audit) in batch.results {
        diagnostics.audit.absorb(&audit);
        for (&(b, _, _), pair) in samples.iter().zip(&pairs) {
            pairs_by_bin[b].push(*pair);
        }
        per_trial.push(samples);
    }
    let (acc, _) = reduce_bins(&per_trial, &bins);
    let mut estimates = Vec::new();
    let mut theory = Vec::new();
    let mut interior = Vec::new();
    for b in 0..bins.count {
        let center = bins.center(b);
        let Some(est) = acc[b].estimate(center) else {
            diagnostics.warnings.push(format!("bin at {center} has too few samples"));
            continue;
        };
        let pairs = &pairs_by_bin[b];
        let w = pairs
            .iter()
            .map(|&(mu, lam)| w_goe(mu, lam, t, q).map(|p| p.value))
            .sum::<Result<f64>>()
            .ok()
            .map(|s| s / pairs.len() as f64);
        estimates.push(est);
        theory.push(TheoryValue {
            w,
            w_rho: w.map(|w| w * semicircle_density(0.0, t)),
        });
        interior.push(center.abs() <= 0.85 * edge);
    }
    let coverage = coverage(&estimates, &theory, &interior);
    diagnostics.interior = interior;
    Ok(ExperimentReport {
        config: cfg.clone(),
        estimates,
        theory,
        coverage,
        diagnostics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn bernoulli_spike_mode(
    cfg: &ExperimentConfig,
    p: f64,
    sizes: &[usize],
    start: Instant,
) -> Result<ExperimentReport> {
    if sizes.is_empty() {
        return Err(invalid("Bernoulli spike mode needs at least one matrix size"));
    }
    let mut diagnostics = Diagnostics::default();
    let mut estimates = Vec::new();
    let mut theory = Vec::new();
    let mut hits = 0usize;
    for (s, &big_n) in sizes.iter().enumerate() {
        let n = check_minor_size(cfg.q, big_n)?;
        let ratio = n as f64 / big_n as f64;
        let expected = ratio - bernoulli_spike(big_n, n, p)?;
        let sampler = Sampler::Bernoulli { p };
        let batch = run_trials(cfg.threads, cfg.trials, |k| {
            let seed = SeedSpec::new(cfg.master_seed, ((s as u64) << 32) | k);
            let snap = snapshot(&sampler.sample(big_n, seed)?, n)?;
            Ok((ratio - snap.grid.get(0, 0), snap.audit))
        })?;
        diagnostics.trials_used += batch.results.len();
        diagnostics.trials_aborted += batch.aborted;
        let values: Vec<f64> = batch
            .results
            .iter()
            .map(|(v, audit)| {
                diagnostics.audit.absorb(audit);
                *v
            })
            .collect();
        let (mean, se) = mean_se(&values);
        let est = OverlapEstimate::from_mean_se(big_n as f64, mean, se, values.len());
        if (mean - expected).abs() <= 3.0 * est.half_width() {
            hits += 1;
        }
        estimates.push(est);
        theory.push(TheoryValue {
            w: Some(expected),
            w_rho: None,
        });
    }
    diagnostics.interior = vec![true; sizes.len()];
    Ok(ExperimentReport {
        config: cfg.clone(),
        estimates,
        theory,
        coverage: Some(hits as f64 / sizes.len() as f64),
        diagnostics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Probes of the stochastic calculus

/// Frozen state for the probes: `X_t = H_t` (GOE) and the decompositions of
/// `X_t` and its `n × n` block, with signed overlaps `c[l][k] = ⟨Φ_l|Ψ_k⟩`.
struct FrozenState {
    x: SymmetricMatrix,
    full: SpectralDecomposition,
    minor: SpectralDecomposition,
    phi: Vec<Vec<f64>>,
    signed: Vec<Vec<f64>>,
}

impl FrozenState {
    fn new(big_n: usize, n: usize, t: f64, seed: SeedSpec) -> Result<Self> {
        if n == 0 || n > big_n {
            return Err(invalid(format!("minor size n = {n} must satisfy 1 <= n <= N = {big_n}")));
        }
        let x = sample_goe(big_n, t, &seed)?;
        let full = eig_sym(&x)?;
        let minor = eig_sym(&x.leading_block(n)?)?;
        let phi: Vec<Vec<f64>> = (0..n)
            .map(|l| {
                let mut v = minor.vector(l).to_vec();
                v.resize(big_n, 0.0);
                v
            })
            .collect();
        let signed = phi
            .iter()
            .map(|p| (0..big_n).map(|k| dot(&p[..n], &full.vector(k)[..n])).collect())
            .collect();
        Ok(Self {
            x,
            full,
            minor,
            phi,
            signed,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One probed correlation `E[⟨Φ_i|dX̃ Φ_l⟩⟨Ψ_j|dX Ψ_k⟩] / dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationEntry {
    pub i: usize,
    pub l: usize,
    pub j: usize,
    pub k: usize,
    pub estimate: f64,
    pub std_error: f64,
    /// `(1/N)(⟨Φ_i|Ψ_j⟩⟨Φ_l|Ψ_k⟩ + ⟨Φ_i|Ψ_k⟩⟨Φ_l|Ψ_j⟩)`.
    pub theory: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationProbeReport {
    pub big_n: usize,
    pub n: usize,
    pub t: f64,
    pub samples: usize,
    pub entries: Vec<CorrelationEntry>,
    pub max_abs_z: f64,
    /// Estimate over theory for the `i = l, j = k` entry with the largest overlap.
    pub diagonal_ratio: f64,
}

/// Index set `(i, l, j, k)` for [`correlation_probe`]: three mid-spectrum
/// minor indices against the three full indices best aligned with the middle
/// one, both as diagonal (`i = l, j = k`) and shifted (`l = next i`,
/// `k = next j`) combinations, plus an edge-to-edge pair whose right-hand
/// side nearly vanishes.
fn default_design(state: &FrozenState) -> Vec<[usize; 4]> {
    let n = state.phi.len();
    let big_n = state.signed[0].len();
    let mid = n / 2;
    let minors: Vec<usize> = [mid.saturating_sub(1), mid, (mid + 1).min(n - 1)].to_vec();
    let mut by_overlap: Vec<usize> = (0..big_n).collect();
    by_overlap.sort_by(|&a, &b| {
        state.signed[mid][b]
            .abs()
            .total_cmp(&state.signed[mid][a].abs())
            .then(a.cmp(&b))
    });
    let fulls = &by_overlap[..3.min(big_n)];
    let mut design = Vec::new();
    for (a, &i) in minors.iter().enumerate() {
        for (b, &j) in fulls.iter().enumerate() {
            design.push([i, i, j, j]);
            design.push([i, minors[(a + 1) % 3], j, fulls[(b + 1) % fulls.len()]]);
        }
    }
    design.push([0, 0, big_n - 1, big_n - 1]);
    design
}

const PROBE_CHUNK: usize = 1024;

/// Estimates the increment correlations on a frozen GOE state by drawing
/// `samples` independent increments `dX` (GOE with `dt = 1`; the ratio to
/// `dt` is scale free) and compares them with the closed-form identity.
/// `indices` defaults to the design described on [`CorrelationProbeReport`].
pub fn correlation_probe(
    big_n: usize,
    n: usize,
    t: f64,
    samples: usize,
    master_seed: u64,
    indices: Option<Vec<[usize; 4]>>,
    threads: usize,
) -> Result<CorrelationProbeReport> {
    if samples < 2 {
        return Err(invalid("correlation probe needs at least two samples"));
    }
    let state = FrozenState::new(big_n, n, t, derive_stream(master_seed, 0))?;
    let design = indices.unwrap_or_else(|| default_design(&state));
    for &[i, l, j, k] in &design {
        if i >= n || l >= n || j >= big_n || k >= big_n {
            return Err(invalid(format!("probe index ({i}, {l}, {j}, {k}) out of range")));
        }
    }
    let c = &state.signed;
    let theory: Vec<f64> = design
        .iter()
        .map(|&[i, l, j, k]| (c[i][j] * c[l][k] + c[i][k] * c[l][j]) / big_n as f64)
        .collect();

    let chunks = samples.div_ceil(PROBE_CHUNK);
    let partials: Vec<Result<(Vec<f64>, Vec<f64>)>> = pool(threads)?.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut sum = vec![0.0; design.len()];
                let mut sum_sq = vec![0.0; design.len()];
                let end = ((chunk + 1) * PROBE_CHUNK).min(samples);
                for s in chunk * PROBE_CHUNK..end {
                    let dx = sample_goe(big_n, 1.0, &derive_stream(master_seed, s as u64 + 1))?;
                    for (e, &[i, l, j, k]) in design.iter().enumerate() {
                        let minor_term = dx.bilinear(&state.phi[i], &state.phi[l]);
                        let full_term = dx.bilinear(state.full.vector(j), state.full.vector(k));
                        let v = minor_term * full_term;
                        sum[e] += v;
                        sum_sq[e] += v * v;
                    }
                }
                Ok((sum, sum_sq))
            })
            .collect()
    });
    let mut sum = vec![0.0; design.len()];
    let mut sum_sq = vec![0.0; design.len()];
    for partial in partials {
        let (s, s2) = partial?;
        for e in 0..design.len() {
            sum[e] += s[e];
            sum_sq[e] += s2[e];
        }
    }
    let m = samples as f64;
    let entries: Vec<CorrelationEntry> = design
        .iter()
        .enumerate()
        .map(|(e, &[i, l, j, k])| {
            let mean = sum[e] / m;
            let var = (sum_sq[e] / m - mean * mean) * m / (m - 1.0);
            let se = (var.max(0.0) / m).sqrt();
            CorrelationEntry {
                i,
                l,
                j,
                k,
                estimate: mean,
                std_error: se,
                theory: theory[e],
                z_score: (mean - theory[e]) / se,
            }
        })
        .collect();
    let max_abs_z = entries.iter().map(|e| e.z_score.abs()).fold(0.0, f64::max);
    let diagonal_ratio = entries
        .iter()
        .filter(|e| e.i == e.l && e.j == e.k)
        .max_by(|a, b| a.theory.total_cmp(&b.theory))
        .map_or(f64::NAN, |e| e.estimate / e.theory);
    Ok(CorrelationProbeReport {
        big_n,
        n,
        t,
        samples,
        entries,
        max_abs_z,
        diagonal_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftTerms {
    /// `(1/N) Σ_{k≠j} (⟨i|k⟩² − ⟨i|j⟩²) / (λ_j − λ_k)²`.
    pub full_repulsion: f64,
    /// `(1/N) Σ_{l≠i} (⟨l|j⟩² − ⟨i|j⟩²) / (μ_i − μ_l)²`.
    pub minor_repulsion: f64,
    /// `(2/N) Σ_{l≠i} Σ_{k≠j} (⟨i|j⟩⟨l|k⟩ + ⟨i|k⟩⟨l|j⟩)² / ((μ_i − μ_l)(λ_j − λ_k))`.
    pub cross: f64,
}

impl DriftTerms {
    pub fn total(&self) -> f64 {
        self.full_repulsion + self.minor_repulsion + self.cross
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftEstimate {
    pub dt: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftProbeReport {
    pub big_n: usize,
    pub n: usize,
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub overlap: f64,
    pub terms: DriftTerms,
    pub formula: f64,
    pub estimate: DriftEstimate,
    pub relative_deviation: f64,
    /// Sample mean and standard error of the martingale part of the increment.
    pub martingale_mean: f64,
    pub martingale_std_error: f64,
    /// The same estimate with the increment scaled to `2dt`.
    pub doubled: Option<DriftEstimate>,
}

/// Drift of `⟨Φ_i|Ψ_j⟩²` evaluated on the frozen state.
fn drift_terms(state: &FrozenState, i: usize, j: usize) -> DriftTerms {
    let big_n = state.full.dim();
    let lam = state.full.eigenvalues();
    let mu = state.minor.eigenvalues();
    let c = &state.signed;
    let nf = big_n as f64;
    let a = c[i][j];
    let a2 = a * a;
    let full_repulsion = (0..big_n)
        .filter(|&k| k != j)
        .map(|k| (c[i][k].powi(2) - a2) / (lam[j] - lam[k]).powi(2))
        .sum::<f64>()
        / nf;
    let minor_repulsion = (0..mu.len())
        .filter(|&l| l != i)
        .map(|l| (c[l][j].powi(2) - a2) / (mu[i] - mu[l]).powi(2))
        .sum::<f64>()
        / nf;
    let mut cross = 0.0;
    for l in (0..mu.len()).filter(|&l| l != i) {
        for k in (0..big_n).filter(|&k| k != j) {
            cross += (a * c[l][k] + c[i][k] * c[l][j]).powi(2) / ((mu[i] - mu[l]) * (lam[j] - lam[k]));
        }
    }
    DriftTerms {
        full_repulsion,
        minor_repulsion,
        cross: 2.0 * cross / nf,
    }
}

fn overlap_after(x: &SymmetricMatrix, n: usize, i: usize, j: usize) -> Result<f64> {
    let full = eig_sym(x)?;
    let minor = eig_sym(&x.leading_block(n)?)?;
    Ok(dot(minor.vector(i), &full.vector(j)[..n]).powi(2))
}

/// Finite-difference estimate of the drift of `⟨Φ_i|Ψ_j⟩²` on a frozen GOE
/// state. Increments come in antithetic pairs `±dX`, which cancel the
/// martingale part exactly, so `trials` increments make `trials/2` pairs.
/// `pair` defaults to the middle minor index and its best-aligned full index.
#[allow(clippy::too_many_arguments)]
pub fn drift_probe(
    big_n: usize,
    n: usize,
    t: f64,
    dt: f64,
    trials: usize,
    master_seed: u64,
    pair: Option<(usize, usize)>,
    check_doubling: bool,
    threads: usize,
) -> Result<DriftProbeReport> {
    if !(dt > 0.0) {
        return Err(invalid(format!("dt = {dt} must be positive")));
    }
    if trials < 4 {
        return Err(invalid("drift probe needs at least four trials"));
    }
    let state = FrozenState::new(big_n, n, t, derive_stream(master_seed, 0))?;
    let (i, j) = pair.unwrap_or_else(|| {
        let mid = n / 2;
        let j = (0..big_n)
            .max_by(|&a, &b| state.signed[mid][a].abs().total_cmp(&state.signed[mid][b].abs()))
            .expect("N >= 1");
        (mid, j)
    });
    if i >= n || j >= big_n {
        return Err(invalid(format!("pair ({i}, {j}) out of range")));
    }
    let terms = drift_terms(&state, i, j);
    let formula = terms.total();
    let a = state.signed[i][j];
    let base = a * a;
    let lam = state.full.eigenvalues();
    let mu = state.minor.eigenvalues();
    let psi_j = state.full.vector(j);
    let phi_i = &state.phi[i];

    let pairs = trials / 2;
    let scales: Vec<f64> = if check_doubling { vec![1.0, 2f64.sqrt()] } else { vec![1.0] };
    let results = run_trials(threads, pairs, |k| {
        let dx = sample_goe(big_n, dt, &derive_stream(master_seed, k + 1))?;
        let mut finite_diffs = Vec::with_capacity(scales.len());
        for &s in &scales {
            let step = dx.scaled(s);
            let up = overlap_after(&state.x.add(&step)?, n, i, j)?;
            let down = overlap_after(&state.x.add(&step.scaled(-1.0))?, n, i, j)?;
            finite_diffs.push((up + down - 2.0 * base) / (2.0 * s * s * dt));
        }
        // Martingale part: 2a Σ_k dX_kj c_ik/(λ_j−λ_k) + 2a Σ_l dX̃_li c_lj/(μ_i−μ_l),
        // with dX_kj = ⟨Ψ_k|dX Ψ_j⟩ and dX̃_li = ⟨Φ_l|dX̃ Φ_i⟩.
        let dx_psi = dx.mul_vec(psi_j);
        let dx_phi = dx.mul_vec(phi_i);
        let mut martingale = 0.0;
        for k in (0..big_n).filter(|&k| k != j) {
            martingale += dot(state.full.vector(k), &dx_psi) * state.signed[i][k] / (lam[j] - lam[k]);
        }
        for l in (0..n).filter(|&l| l != i) {
            martingale += dot(&state.phi[l], &dx_phi) * state.signed[l][j] / (mu[i] - mu[l]);
        }
        Ok((finite_diffs, 2.0 * a * martingale / dt.sqrt()))
    })?;

    let column = |s: usize| -> Vec<f64> { results.results.iter().map(|r| r.0[s]).collect() };
    let (est, se) = mean_se(&column(0));
    let doubled = check_doubling.then(|| {
        let (e, s) = mean_se(&column(1));
        DriftEstimate {
            dt: 2.0 * dt,
            estimate: e,
            std_error: s,
        }
    });
    let martingales: Vec<f64> = results.results.iter().map(|r| r.1).collect();
    let (m_mean, m_se) = mean_se(&martingales);
    Ok(DriftProbeReport {
        big_n,
        n,
        t,
        i,
        j,
        overlap: base,
        terms,
        formula,
        estimate: DriftEstimate {
            dt,
            estimate: est,
            std_error: se,
        },
        relative_deviation: (est - formula).abs() / formula.abs(),
        martingale_mean: m_mean,
        martingale_std_error: m_se,
        doubled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bulk_config(big_n: usize, q: f64, x: f64, trials: usize) -> ExperimentConfig {
        ExperimentConfig::new(big_n, q, 1.0, trials, 11, Target::Bulk { x })
    }

    #[test]
    fn config_validation() {
        assert!(bulk_config(40, 0.5, 0.5, 99).validate().is_err());
        assert!(bulk_config(40, 0.5, 0.5, 100).validate().is_ok());
        assert!(bulk_config(40, 0.999, 0.5, 100).validate().is_err());
        assert!(bulk_config(40, 0.0, 0.5, 100).validate().is_err());
        let mut c = bulk_config(40, 0.5, 0.5, 100);
        c.t = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn cluster_estimate_matches_plain_mean_for_single_samples() {
        let mut acc = ClusterAccumulator::default();
        let values = [1.0, 2.0, 4.0, 7.0];
        for v in values {
            acc.push_trial(v, 1);
        }
        let est = acc.estimate(0.0).unwrap();
        let (mean, se) = mean_se(&values);
        assert!((est.mean - mean).abs() < 1e-15);
        assert!((est.half_width() - Z99 * se).abs() < 1e-12);
        assert!(est.ci_low <= est.mean && est.mean <= est.ci_high);
    }

    #[test]
    fn bins_index_and_center() {
        let b = Bins::new(-1.0, 1.0, 4);
        assert_eq!(b.index(-1.0), Some(0));
        assert_eq!(b.index(0.99), Some(3));
        assert_eq!(b.index(1.0), None);
        assert_eq!(b.index(-1.01), None);
        assert!((b.center(1) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn rank_one_recipes() {
        let psi = rank_one_vector(&RankOneRecipe::Split { lambda: 1.0, mu: 0.3 }, 10, 3).unwrap();
        let head: f64 = psi[..3].iter().map(|x| x * x).sum();
        let total: f64 = psi.iter().map(|x| x * x).sum();
        assert!((head - 0.3).abs() < 1e-14 && (total - 1.0).abs() < 1e-14);
        let psi = rank_one_vector(&RankOneRecipe::Outside { lambda: 3.0 }, 10, 7).unwrap();
        assert!(psi[..7].iter().all(|&x| x == 0.0));
        assert!((psi.iter().map(|x| x * x).sum::<f64>() - 3.0).abs() < 1e-14);
        assert!(rank_one_vector(&RankOneRecipe::Split { lambda: 1.0, mu: 1.5 }, 10, 3).is_err());
    }

    #[test]
    fn model_diagonal_spreads_atoms() {
        let model = SpectrumModel::new(vec![(-1.0, 0.5), (1.0, 0.5)], vec![4.0], 0.5).unwrap();
        let d = model_diagonal(&model, 21).unwrap();
        assert_eq!(d.len(), 21);
        assert_eq!(d[20], 4.0);
        let head_plus = d[..10].iter().filter(|&&v| v == 1.0).count();
        assert_eq!(head_plus, 5);
    }

    #[test]
    fn bulk_run_is_thread_count_invariant() {
        let mut cfg = bulk_config(40, 0.5, 0.5, 100);
        cfg.binning.count = 8;
        cfg.threads = 1;
        let a = run_bulk_experiment(&cfg).unwrap();
        cfg.threads = 3;
        let b = run_bulk_experiment(&cfg).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.theory, b.theory);
        assert_eq!(a.diagnostics, b.diagnostics);
        assert_eq!(a.estimates.len(), a.theory.len());
        assert_eq!(a.diagnostics.audit.pairs_checked, 100);
        assert!(a.diagnostics.audit.max_normalization_error < 1e-10);
        assert!(a.diagnostics.audit.worst_interlacing_margin >= -1e-9);
    }

    #[test]
    fn bulk_run_with_general_a() {
        let model = SpectrumModel::new(vec![(-1.0, 0.5), (1.0, 0.5)], vec![], 0.5).unwrap();
        let mut cfg = bulk_config(40, 0.5, 0.5, 100);
        cfg.a_spec = ASpec::Model { model };
        cfg.binning.count = 6;
        let report = run_bulk_experiment(&cfg).unwrap();
        assert!(report.theory.iter().any(|t| t.w.is_some()));
        assert!(report.diagnostics.argmax.is_none());
    }

    #[test]
    fn spike_spike_rejects_window_violation() {
        let mut cfg = ExperimentConfig::new(60, 0.3, 0.3, 100, 1, Target::SpikeSpike);
        cfg.a_spec = ASpec::RankOne {
            recipe: RankOneRecipe::Split { lambda: 1.0, mu: 0.3 },
        };
        assert!(matches!(run_spike_spike(&cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn spike_spike_small_time_recovers_initial_overlap() {
        let mut cfg = ExperimentConfig::new(60, 0.3, 1e-4, 100, 5, Target::SpikeSpike);
        cfg.a_spec = ASpec::RankOne {
            recipe: RankOneRecipe::Split { lambda: 1.0, mu: 0.3 },
        };
        let report = run_spike_spike(&cfg).unwrap();
        assert!((report.estimates[0].mean - 0.3).abs() < 0.003);
        assert_eq!(report.diagnostics.trials_excluded, 0);
    }

    #[test]
    fn spike_path_follows_outlier() {
        let mut cfg = ExperimentConfig::new(200, 0.3, 1.0, 100, 3, Target::SpikeSpike);
        cfg.a_spec = ASpec::RankOne {
            recipe: RankOneRecipe::Split { lambda: 1.0, mu: 0.3 },
        };
        let grid: Vec<f64> = (1..=12).map(|k| 0.1 * k as f64).collect();
        let path = run_spike_path(&cfg, &grid).unwrap();
        assert_eq!(path.len(), 12);
        for p in path.iter().filter(|p| p.t <= 0.5) {
            assert!((p.lambda1 - (1.0 + p.t)).abs() < 0.15, "{p:?}");
            assert!(p.lambda1 > p.edge_full && p.mu1 >= p.edge_minor);
        }
    }

    #[test]
    fn bernoulli_p_one_has_no_deficit() {
        let mut cfg = ExperimentConfig::new(40, 0.5, 1.0, 100, 1, Target::BernoulliSpike { sizes: vec![40] });
        cfg.a_spec = ASpec::Bernoulli { p: 1.0 };
        assert!(run_bernoulli(&cfg).is_err());
        let expected = 0.5 - bernoulli_spike(40, 20, 1.0).unwrap();
        assert_eq!(expected, 0.0);
    }

    #[test]
    fn correlation_probe_small() {
        let report = correlation_probe(12, 8, 1.0, 4000, 9, None, 2).unwrap();
        assert_eq!(report.entries.len(), 19);
        assert!(report.max_abs_z < 6.0, "{report:?}");
        let again = correlation_probe(12, 8, 1.0, 4000, 9, None, 1).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn drift_terms_vanish_for_trivial_minor() {
        // n = N: the minor is the matrix itself and ⟨Φ_i|Ψ_j⟩² = δ_ij is frozen.
        let state = FrozenState::new(8, 8, 1.0, SeedSpec::new(1, 0)).unwrap();
        let terms = drift_terms(&state, 3, 3);
        assert!(terms.total().abs() < 1e-8, "{terms:?}");
    }
}
