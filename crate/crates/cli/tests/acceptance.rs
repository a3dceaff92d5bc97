//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Everything uses master seed 42. Progress goes to stderr while the runs
//! execute; the verdict lines are printed together at the end.

use std::process::{Command, ExitCode};
use std::time::Instant;

use minor_overlaps::ensembles::{derive_stream, sample_bernoulli, sample_goe};
use minor_overlaps::freeprob::{
    semicircle_g, semicircle_quantile, solve_g, Semicircle, SpectrumModel,
};
use minor_overlaps::montecarlo::{
    correlation_probe, drift_probe, run_bernoulli, run_bulk_experiment, run_spike_bulk,
    run_spike_spike, ASpec, AuditStats, ExperimentConfig, ExperimentReport, RankOneRecipe, Target,
};
use minor_overlaps::overlaps_theory::{
    f_spike, f_spike_log_rate, g_spike_bulk, interlace_interval, interlacing_cubic, lambda_star,
    s_general, spike_mass, w_general, w_goe, InitialOverlapTransform,
};
use minor_overlaps::spectral::eig_sym;
use num_complex::Complex64;

const SEED: u64 = 42;

type Verdict = (bool, String);

fn fail(e: impl std::fmt::Display) -> Verdict {
    (false, format!("error: {e}"))
}

/// Integral of `f(2r sin θ) (2/π) cos²θ` over `(−π/2, π/2)`, i.e. of `f`
/// against the semicircle of radius `2r`, by composite Simpson.
fn semicircle_average(r: f64, f: impl Fn(f64) -> f64) -> f64 {
    let m = 4000;
    let h = std::f64::consts::PI / m as f64;
    let mut sum = 0.0;
    for k in 0..=m {
        let theta = -std::f64::consts::FRAC_PI_2 + k as f64 * h;
        let w = if k == 0 || k == m {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let c = theta.cos();
        sum += w * f(2.0 * r * theta.sin()) * c * c;
    }
    sum * h / 3.0 * 2.0 / std::f64::consts::PI
}

struct Audit {
    stats: AuditStats,
    runs: usize,
}

impl Audit {
    fn add(&mut self, r: &ExperimentReport) {
        let a = &r.diagnostics.audit;
        let s = &mut self.stats;
        s.pairs_checked += a.pairs_checked;
        s.worst_interlacing_margin = s.worst_interlacing_margin.min(a.worst_interlacing_margin);
        s.max_normalization_error = s.max_normalization_error.max(a.max_normalization_error);
        s.max_reconstruction_error = s.max_reconstruction_error.max(a.max_reconstruction_error);
        self.runs += 1;
    }
}

fn criterion_1(audit: &mut Audit) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for q in [0.5, 0.9] {
        for x in [0.1, 0.5, 0.95] {
            let cfg = ExperimentConfig::new(400, q, 1.0, 200, SEED, Target::Bulk { x });
            let r = match run_bulk_experiment(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            audit.add(&r);
            let cov = r.coverage.unwrap_or(0.0);
            let inside = r.diagnostics.argmax.map(|a| a.inside).unwrap_or(false);
            let this = cov >= 0.95 && inside && r.wall_time_s < 600.0;
            ok &= this;
            eprintln!("  bulk q={q} x={x}: coverage {cov:.4}, argmax inside {inside}, {:.1} s", r.wall_time_s);
            parts.push(format!("q={q},x={x}:{cov:.3}{}", if inside { "" } else { "(argmax outside)" }));
        }
    }
    (ok, format!("coverage by config {}", parts.join(" ")))
}

fn criterion_2(audit: &Audit) -> Verdict {
    let s = &audit.stats;
    let mut ok = s.worst_interlacing_margin >= -1e-9
        && s.max_normalization_error <= 1e-10
        && s.max_reconstruction_error <= 1e-8
        && s.pairs_checked > 0;
    // Full relative reconstruction on a subset of matrices.
    let mut worst_full: f64 = 0.0;
    for k in 0..10u64 {
        let m = if k < 7 {
            sample_goe(400, 1.0, &derive_stream(SEED, k))
        } else {
            sample_bernoulli(300, 0.5, &derive_stream(SEED, k))
        };
        let m = match m {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let n = m.dim() / 2;
        for x in [m.clone(), m.leading_block(n).expect("n < N")] {
            match eig_sym(&x) {
                Ok(d) => worst_full = worst_full.max(d.relative_reconstruction_error(&x)),
                Err(e) => return fail(e),
            }
        }
    }
    ok &= worst_full <= 1e-8;
    (
        ok,
        format!(
            "{} runs, {} pairs: worst interlacing margin {:.3e}, max row-sum error {:.3e}, max probe reconstruction {:.3e}, full reconstruction on 20 matrices {:.3e}",
            audit.runs,
            s.pairs_checked,
            s.worst_interlacing_margin,
            s.max_normalization_error,
            s.max_reconstruction_error,
            worst_full
        ),
    )
}

fn criterion_3() -> Verdict {
    let (t, q) = (1.0, 0.5);
    let s0 = InitialOverlapTransform::null(q);
    let g = Semicircle { variance: t };
    let g_tilde = Semicircle { variance: q * t };
    let mut worst_w: f64 = 0.0;
    for a in 0..21 {
        let mu = 2.0 * (q * t).sqrt() * 0.9 * (-1.0 + 2.0 * a as f64 / 20.0);
        for b in 0..21 {
            let lambda = 2.0 * t.sqrt() * 0.9 * (-1.0 + 2.0 * b as f64 / 20.0);
            let general = match w_general(&s0, mu, lambda, t, q, &g, &g_tilde) {
                Ok(p) => p.value,
                Err(e) => return fail(e),
            };
            let goe = match w_goe(mu, lambda, t, q) {
                Ok(p) => p.value,
                Err(e) => return fail(e),
            };
            worst_w = worst_w.max((general - goe).abs());
        }
    }

    let finite = match InitialOverlapTransform::from_diagonal(&[1.5, -0.5, 0.25, 2.0, -1.0], 3) {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    let mut s_exact = true;
    for (z, zt) in [
        (Complex64::new(0.3, 0.7), Complex64::new(-0.2, -0.4)),
        (Complex64::new(1.1, -0.2), Complex64::new(0.5, 0.9)),
    ] {
        for s in [&s0, &finite] {
            match s_general(s, z, zt, 0.0, q, &g, &g_tilde) {
                Ok(v) => s_exact &= v == s.eval(z, zt),
                Err(e) => return fail(e),
            }
        }
    }

    let model = match SpectrumModel::null(1.0) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let mut worst_g: f64 = 0.0;
    for k in 0..20 {
        let re = -3.0 + 6.0 * (k % 10) as f64 / 9.0;
        let im = if k < 10 { 0.05 } else { -1.3 };
        let z = Complex64::new(re, im);
        match solve_g(&model, z, t) {
            Ok(v) => worst_g = worst_g.max((v - semicircle_g(z, t)).norm()),
            Err(e) => return fail(e),
        }
    }
    (
        worst_w <= 1e-8 && s_exact && worst_g <= 1e-10,
        format!(
            "max |W_general - W_goe| {worst_w:.3e} on 21x21, S(t=0) exact {s_exact}, max |G - G_sc| {worst_g:.3e} on 20 points"
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut worst_w: f64 = 0.0;
    // Latin square: each quantile meets each q and each t once.
    let xs = [0.2, 0.5, 0.8];
    for (a, q) in [0.3f64, 0.6, 0.9].into_iter().enumerate() {
        for (b, t) in [0.5, 1.0, 2.0].into_iter().enumerate() {
            let x = xs[(a + b) % 3];
            let mu = match semicircle_quantile(x, t, q.sqrt()) {
                Ok(m) => m,
                Err(e) => return fail(e),
            };
            let integral = semicircle_average(t.sqrt(), |l| w_goe(mu, l, t, q).map(|p| p.value).unwrap_or(f64::NAN));
            worst_w = worst_w.max((integral - 1.0).abs());
        }
    }
    let mut worst_g: f64 = 0.0;
    for (lambda, q, t) in [(3.0, 0.7f64, 1.0f64), (2.0, 0.5, 1.0), (1.5, 0.3, 0.5)] {
        let integral = q * semicircle_average((q * t).sqrt(), |m| {
            g_spike_bulk(lambda, q, t, m).unwrap_or(f64::NAN)
        });
        let target = match spike_mass(lambda, q, t) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        worst_g = worst_g.max((integral - target).abs());
    }
    (
        worst_w <= 1e-5 && worst_g <= 1e-6,
        format!("max |int W rho - 1| {worst_w:.3e} over 9 points, max |q int g rho - qt/lambda^2| {worst_g:.3e} over 3 points"),
    )
}

fn criterion_5(audit: &mut Audit) -> Verdict {
    let (lambda, mu, q, t) = (1.0, 0.3, 0.3, 0.2);
    let mut cfg = ExperimentConfig::new(300, q, t, 200, SEED, Target::SpikeSpike);
    cfg.a_spec = ASpec::RankOne {
        recipe: RankOneRecipe::Split { lambda, mu },
    };
    let r = match run_spike_spike(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    audit.add(&r);
    let f = match f_spike(lambda, mu, q, t) {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    let mean = r.estimates[0].mean;
    let rel = (mean - f).abs() / f;

    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for k in 0..=48 {
        let s = 0.01 + 0.24 * k as f64 / 48.0;
        let v = |s: f64| f_spike(lambda, mu, q, s).unwrap_or(f64::NAN);
        let deriv = (-v(s + 2.0 * h) + 8.0 * v(s + h) - 8.0 * v(s - h) + v(s - 2.0 * h)) / (12.0 * h);
        worst = worst.max((deriv - v(s) * f_spike_log_rate(lambda, mu, q, s)).abs());
    }
    (
        rel <= 0.05 && worst < 1e-7,
        format!("mean {mean:.5} vs f = {f:.5} (relative error {rel:.4}), max ODE residual {worst:.3e}"),
    )
}

fn criterion_6(audit: &mut Audit) -> Verdict {
    let mut cfg = ExperimentConfig::new(400, 0.7, 1.0, 200, SEED, Target::SpikeBulk);
    cfg.a_spec = ASpec::RankOne {
        recipe: RankOneRecipe::Outside { lambda: 3.0 },
    };
    let r = match run_spike_bulk(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    audit.add(&r);
    let cov = r.coverage.unwrap_or(0.0);
    let Some(mass) = r.diagnostics.spike_mass else {
        return (false, "no spike mass estimate".into());
    };
    (
        cov >= 0.95 && mass.relative_error <= 0.05,
        format!(
            "coverage {cov:.4}, spike mass {:.5} vs {:.5} (relative error {:.4})",
            mass.estimate.mean, mass.theory, mass.relative_error
        ),
    )
}

fn criterion_7(audit: &mut Audit) -> Verdict {
    let p = 0.5;
    let mut bulk = ExperimentConfig::new(300, 0.5, p * (1.0 - p), 200, SEED, Target::BernoulliBulk);
    bulk.a_spec = ASpec::Bernoulli { p };
    let rb = match run_bernoulli(&bulk) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    audit.add(&rb);
    let cov = rb.coverage.unwrap_or(0.0);
    eprintln!("  bernoulli bulk: coverage {cov:.4}");

    let p = 0.7;
    let sizes = vec![100, 200, 400];
    let mut spike = ExperimentConfig::new(
        400,
        0.5,
        p * (1.0 - p),
        1000,
        SEED,
        Target::BernoulliSpike { sizes: sizes.clone() },
    );
    spike.a_spec = ASpec::Bernoulli { p };
    let rs = match run_bernoulli(&spike) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    audit.add(&rs);
    let mut spike_ok = true;
    let mut parts = Vec::new();
    for ((e, th), n) in rs.estimates.iter().zip(&rs.theory).zip(&sizes) {
        let expected = th.w.unwrap_or(f64::NAN);
        let dist = (e.mean - expected).abs() / e.half_width();
        spike_ok &= dist <= 3.0;
        parts.push(format!("N={n}: {:.5} vs {expected:.5} ({dist:.2} hw)", e.mean));
    }
    (
        cov >= 0.90 && spike_ok,
        format!("bulk coverage {cov:.4}; spike deficits {}", parts.join(", ")),
    )
}

fn criterion_8() -> Verdict {
    let c = match correlation_probe(50, 45, 1.0, 100_000, SEED, None, 0) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let d = match drift_probe(60, 30, 1.0, 1e-4, 20_000, SEED, None, true, 0) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    (
        c.max_abs_z <= 5.0 && d.relative_deviation <= 0.10,
        format!(
            "correlation max |z| {:.3} over {} entries; drift {:.4} vs formula {:.4} (relative deviation {:.4}) for pair ({}, {})",
            c.max_abs_z,
            c.entries.len(),
            d.estimate.estimate,
            d.formula,
            d.relative_deviation,
            d.i,
            d.j
        ),
    )
}

fn sign_changes(mu: f64, t: f64, q: f64) -> usize {
    let edge = 2.0 * t.sqrt();
    let m = 20_000;
    let mut count = 0;
    let mut prev = interlacing_cubic(-edge, mu, t, q);
    for k in 1..=m {
        let x = -edge + 2.0 * edge * k as f64 / m as f64;
        let v = interlacing_cubic(x, mu, t, q);
        // Exact zeros are skipped so a root on a grid point counts once.
        if v == 0.0 {
            continue;
        }
        if prev != 0.0 && (prev > 0.0) != (v > 0.0) {
            count += 1;
        }
        prev = v;
    }
    count
}

fn criterion_9() -> Verdict {
    let t = 1.0;
    let mut ok = true;
    let mut worst_residual: f64 = 0.0;
    let mut bad = Vec::new();
    for q in [0.1f64, 0.5, 0.9] {
        let edge = 2.0 * (q * t).sqrt();
        for k in 1..=99 {
            let mu = edge * (-1.0 + 2.0 * k as f64 / 100.0);
            let ls = match lambda_star(mu, t, q) {
                Ok(v) => v,
                Err(e) => return fail(e),
            };
            let unique = sign_changes(mu, t, q) == 1;
            let bounded = mu < 0.0 || (mu - 1e-12 <= ls && ls <= mu / q.sqrt() + 1e-12);
            let interval_ok = interlace_interval(0.5, t, q).is_ok();
            worst_residual = worst_residual.max(interlacing_cubic(ls, mu, t, q).abs());
            if !(unique && bounded && interval_ok) {
                ok = false;
                bad.push(format!("q={q},mu={mu:.4}"));
            }
        }
    }
    let mut worst_q1: f64 = 0.0;
    for k in 1..=99 {
        let mu = 2.0 * (-1.0 + 2.0 * k as f64 / 100.0);
        match lambda_star(mu, t, 1.0) {
            Ok(v) => worst_q1 = worst_q1.max((v - mu).abs()),
            Err(e) => return fail(e),
        }
    }
    ok &= worst_q1 <= 1e-12 && worst_residual <= 1e-10;
    let mut detail = format!(
        "297 grid points, max |P(lambda*)| {worst_residual:.3e}, q=1 max |lambda* - mu| {worst_q1:.3e}"
    );
    if !bad.is_empty() {
        detail.push_str(&format!("; failures at {}", bad.join(" ")));
    }
    (ok, detail)
}

fn criterion_10() -> Verdict {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let runs: [&[&str]; 6] = [
        &["simulate", "--N", "100", "--trials", "100", "--bins", "10"],
        &["simulate", "--N", "100", "--trials", "100", "--bins", "10", "--format", "json"],
        &["spike", "--mode", "bulk", "--lambda", "3", "--q", "0.7", "--N", "100", "--trials", "100", "--bins", "8"],
        &["bernoulli", "--mode", "spike", "--p", "0.7", "--sizes", "40,60", "--trials", "100"],
        &["bernoulli", "--p", "0.5", "--N", "100", "--trials", "100", "--bins", "8"],
        &["probe", "--kind", "correlation", "--N", "20", "--samples", "5000"],
    ];
    let mut ok = true;
    let mut files = 0;
    for (r, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for (k, threads) in ["1", "4", "4"].iter().enumerate() {
            let out = dir.path().join(format!("run{r}_{k}"));
            let status = Command::new(env!("CARGO_BIN_EXE_minor-overlaps"))
                .args(*args)
                .args(["--seed", &SEED.to_string(), "--threads", threads, "--out"])
                .arg(&out)
                .output();
            match status {
                Ok(o) if o.status.success() => {}
                Ok(o) => return (false, format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr))),
                Err(e) => return fail(e),
            }
            let mut bytes = std::fs::read(&out).unwrap_or_default();
            let mut meta = out.clone().into_os_string();
            meta.push(".meta.json");
            if let Ok(m) = std::fs::read(&meta) {
                bytes.extend(m);
            }
            outputs.push(bytes);
        }
        files += outputs.len();
        if !(outputs[0] == outputs[1] && outputs[1] == outputs[2]) {
            ok = false;
            eprintln!("  outputs differ for {args:?}");
        }
    }
    (ok, format!("{} commands x threads 1/4/4, {files} outputs compared byte for byte", runs.len()))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut audit = Audit {
        stats: AuditStats::default(),
        runs: 0,
    };
    let names = [
        "GOE bulk kernel",
        "exact invariants",
        "formula cross-consistency",
        "normalization by quadrature",
        "spike-spike overlap",
        "spike-bulk overlap",
        "Bernoulli universality",
        "increment correlations and drift",
        "lambda* solver",
        "determinism",
    ];
    let mut verdicts: Vec<Option<Verdict>> = vec![None; 10];
    let mut record = |i: usize, v: Verdict| {
        eprintln!("criterion {} done ({:.0} s)", i + 1, start.elapsed().as_secs_f64());
        verdicts[i] = Some(v);
    };
    record(0, criterion_1(&mut audit));
    record(2, criterion_3());
    record(3, criterion_4());
    record(4, criterion_5(&mut audit));
    record(5, criterion_6(&mut audit));
    record(6, criterion_7(&mut audit));
    record(7, criterion_8());
    record(8, criterion_9());
    record(9, criterion_10());
    record(1, criterion_2(&audit));

    let mut all = true;
    for (i, (name, v)) in names.iter().zip(&verdicts).enumerate() {
        let (ok, detail) = v.clone().expect("every criterion ran");
        all &= ok;
        println!("criterion {:>2} {}: {name}: {detail}", i + 1, if ok { "PASS" } else { "FAIL" });
    }
    println!("total {:.0} s", start.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
