use std::fs;
use std::path::Path;
use std::time::Instant;

use minor_overlaps::freeprob::{
    density_support, semicircle_density, semicircle_quantile, FreeConvolution, SpectrumModel,
};
use minor_overlaps::montecarlo::{
    correlation_probe, drift_probe, model_diagonal, run_bernoulli, run_bulk_experiment,
    run_spike_bulk, run_spike_path, run_spike_spike, ASpec, Binning, DriftEstimate,
    ExperimentConfig, ExperimentReport, RankOneRecipe, Target,
};
use minor_overlaps::overlaps_theory::{
    bernoulli_spike, f_spike, g_spike_bulk, interlace_interval, lambda_star, w_general, w_goe,
    InitialOverlapTransform,
};
use minor_overlaps::Error;
use serde_json::{json, Value};

use crate::output::{
    config_echo, emit, to_value, Cell, Document, Table, BULK_HEADER, SPIKE_BULK_HEADER,
    TOOL_VERSION, TRAJECTORY_HEADER,
};
use crate::{
    BernoulliArgs, BernoulliMode, CliError, Common, CompareArgs, ExperimentArgs, Kernel,
    ProbeArgs, ProbeKind, SpikeArgs, SpikeMode, TheoryArgs,
};

type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::InvalidArgument(msg.into()))
}

fn require<T>(v: Option<T>, flag: &str, what: &str) -> CliResult<T> {
    v.ok_or_else(|| invalid(format!("{what} needs --{flag}")))
}

/// `count` bin centers over `[lo, hi]`.
fn centers(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let w = (hi - lo) / count as f64;
    (0..count).map(|b| lo + (b as f64 + 0.5) * w).collect()
}

fn load_model(path: &Path) -> CliResult<SpectrumModel> {
    let text = fs::read_to_string(path)?;
    Ok(SpectrumModel::from_json(&text)?)
}

fn document(common: &Common, config: Value, table: &Table, extra: Option<&ExperimentReport>) -> Document {
    let (estimates, theory, coverage, diagnostics, wall) = match extra {
        Some(r) => (
            to_value(&r.estimates),
            to_value(&r.theory),
            r.coverage,
            Some(to_value(&r.diagnostics)),
            Some(r.wall_time_s),
        ),
        None => (Value::Null, table.to_json_rows(), None, None, None),
    };
    Document {
        config,
        estimates,
        theory,
        coverage,
        wall_time_s: if common.timing { wall } else { None },
        tool_version: TOOL_VERSION,
        diagnostics,
    }
}

fn finish(common: &Common, table: &Table, doc: &Document, start: Instant) -> CliResult<()> {
    emit(common.format, common.out.as_deref(), table, doc)?;
    eprintln!("wall time: {:.3} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn report_summary(r: &ExperimentReport) {
    let d = &r.diagnostics;
    eprintln!(
        "trials used {}, aborted {}, excluded {}",
        d.trials_used, d.trials_aborted, d.trials_excluded
    );
    if let Some(c) = r.coverage {
        eprintln!("coverage: {c:.4}");
    }
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
}

// ---------------------------------------------------------------------------
// theory

pub fn theory(a: &TheoryArgs) -> CliResult<()> {
    let start = Instant::now();
    let (table, params) = if let Some(kernel) = a.kernel {
        theory_kernel(a, kernel)?
    } else if a.spike_f {
        theory_spike_f(a)?
    } else if a.spike_g {
        theory_spike_g(a)?
    } else if a.lambda_star {
        theory_lambda_star(a)?
    } else if a.interlace {
        theory_interlace(a)?
    } else {
        theory_bernoulli(a)?
    };
    let doc = document(&a.common, config_echo("theory", &params), &table, None);
    finish(&a.common, &table, &doc, start)
}

fn minor_mu(a: &TheoryArgs, t: f64, q: f64) -> CliResult<f64> {
    match (a.mu, a.x) {
        (Some(mu), _) => Ok(mu),
        (None, Some(x)) => Ok(semicircle_quantile(x, t, q.sqrt())?),
        (None, None) => Err(invalid("the kernel needs --mu or --x")),
    }
}

fn theory_kernel(a: &TheoryArgs, kernel: Kernel) -> CliResult<(Table, Value)> {
    let t = require(a.t, "t", "the kernel")?;
    let mut table = Table::new(&BULK_HEADER);
    let empty = || [Cell::F(None), Cell::F(None), Cell::F(None), Cell::U(0)];
    match kernel {
        Kernel::Goe => {
            let q = require(a.q, "qfrac", "the kernel")?;
            let mu = minor_mu(a, t, q)?;
            let edge = 2.0 * t.sqrt();
            for lambda in centers(-edge, edge, a.bins) {
                let w = w_goe(mu, lambda, t, q)?.value;
                let mut row = vec![
                    lambda.into(),
                    mu.into(),
                    t.into(),
                    q.into(),
                    w.into(),
                    (w * semicircle_density(lambda, t)).into(),
                ];
                row.extend(empty());
                table.push(row);
            }
            let params = json!({ "kernel": "goe", "t": t, "q": q, "mu": mu, "x": a.x, "bins": a.bins });
            Ok((table, params))
        }
        Kernel::General => {
            let path = require(a.model.as_ref(), "model", "the general kernel")?;
            let model = load_model(path)?;
            let q = a.q.unwrap_or(model.q());
            let mu = require(a.mu, "mu", "the general kernel")?;
            let big_n = a.big_n.unwrap_or(400);
            let n = (q * big_n as f64).round() as usize;
            let s0 = InitialOverlapTransform::from_diagonal(&model_diagonal(&model, big_n)?, n)?;
            let g = FreeConvolution {
                model: model.clone(),
                shift: t,
            };
            let g_tilde = FreeConvolution {
                model: model.clone(),
                shift: q * t,
            };
            let reach = model
                .atoms()
                .iter()
                .map(|(x, _)| x.abs())
                .chain(model.spikes().iter().map(|s| s.abs()))
                .fold(0.0, f64::max)
                + 3.0 * t.sqrt();
            let support = density_support(&g, -reach, reach, 800, 1e-9, 1e-7)?;
            let (lo, hi) = match (support.first(), support.last()) {
                (Some(f), Some(l)) => (f.0, l.1),
                _ => return Err(Error::DegenerateInput("limiting density has empty support".into()).into()),
            };
            for lambda in centers(lo, hi, a.bins) {
                // Gaps and edges have no interior value; their cells stay empty.
                let (w, w_rho) = match w_general(&s0, mu, lambda, t, q, &g, &g_tilde) {
                    Ok(p) => {
                        let rho = minor_overlaps::freeprob::boundary_density(
                            &g,
                            lambda,
                            minor_overlaps::freeprob::BOUNDARY_EPS,
                        )?;
                        (Some(p.value), Some(p.value * rho))
                    }
                    Err(Error::Domain(_)) => (None, None),
                    Err(e) => return Err(e.into()),
                };
                let mut row = vec![lambda.into(), mu.into(), t.into(), q.into(), w.into(), w_rho.into()];
                row.extend(empty());
                table.push(row);
            }
            let params = json!({
                "kernel": "general", "t": t, "q": q, "mu": mu, "N": big_n, "bins": a.bins,
                "model": serde_json::from_str::<Value>(&model.to_json()).unwrap_or(Value::Null),
            });
            Ok((table, params))
        }
    }
}

fn theory_spike_f(a: &TheoryArgs) -> CliResult<(Table, Value)> {
    let lambda = require(a.lambda, "lambda", "--spike-f")?;
    let mu = require(a.mu, "mu", "--spike-f")?;
    let q = require(a.q, "qfrac", "--spike-f")?;
    let mut table = Table::new(&["lambda", "mu", "t", "q", "f"]);
    let ts: Vec<f64> = match a.points {
        Some(points) => {
            // Uniform grid on [0, merge time).
            let t_end = (lambda * lambda).min(mu * mu / q);
            (0..points).map(|k| t_end * k as f64 / points as f64).collect()
        }
        None => vec![require(a.t, "t", "--spike-f")?],
    };
    for &t in &ts {
        let f = f_spike(lambda, mu, q, t)?;
        table.push(vec![lambda.into(), mu.into(), t.into(), q.into(), f.into()]);
    }
    let params = json!({ "quantity": "spike_f", "lambda": lambda, "mu": mu, "q": q, "t": a.t, "points": a.points });
    Ok((table, params))
}

fn theory_spike_g(a: &TheoryArgs) -> CliResult<(Table, Value)> {
    let lambda = require(a.lambda, "lambda", "--spike-g")?;
    let q = require(a.q, "qfrac", "--spike-g")?;
    let t = require(a.t, "t", "--spike-g")?;
    let edge = 2.0 * (q * t).sqrt();
    let mut table = Table::new(&SPIKE_BULK_HEADER);
    for mu in centers(-edge, edge, a.bins) {
        let g = g_spike_bulk(lambda, q, t, mu)?;
        table.push(vec![
            mu.into(),
            lambda.into(),
            t.into(),
            q.into(),
            g.into(),
            (g * semicircle_density(mu, q * t)).into(),
            Cell::F(None),
            Cell::F(None),
            Cell::F(None),
            Cell::U(0),
        ]);
    }
    let params = json!({ "quantity": "spike_g", "lambda": lambda, "q": q, "t": t, "bins": a.bins });
    Ok((table, params))
}

fn theory_lambda_star(a: &TheoryArgs) -> CliResult<(Table, Value)> {
    let q = require(a.q, "qfrac", "--lambda-star")?;
    let t = require(a.t, "t", "--lambda-star")?;
    let mus = match a.points {
        Some(points) => {
            let edge = 2.0 * (q * t).sqrt();
            centers(-edge, edge, points)
        }
        None => vec![minor_mu(a, t, q)?],
    };
    let mut table = Table::new(&["mu", "t", "q", "lambda_star"]);
    for mu in mus {
        table.push(vec![mu.into(), t.into(), q.into(), lambda_star(mu, t, q)?.into()]);
    }
    let params = json!({ "quantity": "lambda_star", "q": q, "t": t, "mu": a.mu, "x": a.x, "points": a.points });
    Ok((table, params))
}

fn theory_interlace(a: &TheoryArgs) -> CliResult<(Table, Value)> {
    let q = require(a.q, "qfrac", "--interlace")?;
    let t = require(a.t, "t", "--interlace")?;
    let xs = match a.points {
        Some(points) => centers(0.0, 1.0, points),
        None => vec![require(a.x, "x", "--interlace")?],
    };
    let mut table = Table::new(&["x", "mu", "t", "q", "lower", "upper", "lambda_star"]);
    for x in xs {
        let mu = semicircle_quantile(x, t, q.sqrt())?;
        let (lower, upper) = interlace_interval(x, t, q)?;
        table.push(vec![
            x.into(),
            mu.into(),
            t.into(),
            q.into(),
            lower.into(),
            upper.into(),
            lambda_star(mu, t, q)?.into(),
        ]);
    }
    let params = json!({ "quantity": "interlace", "q": q, "t": t, "x": a.x, "points": a.points });
    Ok((table, params))
}

fn theory_bernoulli(a: &TheoryArgs) -> CliResult<(Table, Value)> {
    let big_n = require(a.big_n, "N", "--bernoulli")?;
    let p = require(a.p, "p", "--bernoulli")?;
    let q = require(a.q, "qfrac", "--bernoulli")?;
    let n = (q * big_n as f64).round() as usize;
    let overlap = bernoulli_spike(big_n, n, p)?;
    let mut table = Table::new(&["N", "n", "p", "overlap", "deficit"]);
    table.push(vec![
        big_n.into(),
        n.into(),
        p.into(),
        overlap.into(),
        (n as f64 / big_n as f64 - overlap).into(),
    ]);
    let params = json!({ "quantity": "bernoulli", "N": big_n, "p": p, "q": q });
    Ok((table, params))
}

// ---------------------------------------------------------------------------
// simulate / compare

fn experiment_config(e: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(e.big_n, e.q, e.t, e.trials, e.common.seed, Target::Bulk { x: e.x });
    cfg.threads = e.common.threads;
    cfg.binning = Binning {
        count: e.bins,
        range: e.range.as_ref().map(|r| (r[0], r[1])),
    };
    if let Some(path) = &e.model {
        cfg.a_spec = ASpec::Model {
            model: load_model(path)?,
        };
    }
    Ok(cfg)
}

/// Bulk table: one row per bin, `mu` the trial-averaged minor eigenvalue.
fn bulk_table(r: &ExperimentReport, header: &[&'static str], fixed: f64) -> Table {
    let cfg = &r.config;
    let t = r.diagnostics.effective_t.unwrap_or(cfg.t);
    let mut table = Table::new(header);
    for (e, th) in r.estimates.iter().zip(&r.theory) {
        table.push(vec![
            e.center.into(),
            fixed.into(),
            t.into(),
            cfg.q.into(),
            th.w.into(),
            th.w_rho.into(),
            e.mean.into(),
            e.ci_low.into(),
            e.ci_high.into(),
            e.n_samples.into(),
        ]);
    }
    table
}

fn run_bulk(e: &ExperimentArgs, command: &str) -> CliResult<(ExperimentReport, Table, Document)> {
    let cfg = experiment_config(e)?;
    let report = run_bulk_experiment(&cfg)?;
    let mu = report.diagnostics.mu_hat.unwrap_or(f64::NAN);
    let table = bulk_table(&report, &BULK_HEADER, mu);
    let doc = document(&e.common, config_echo(command, &report.config), &table, Some(&report));
    report_summary(&report);
    if let Some(arg) = &report.diagnostics.argmax {
        eprintln!(
            "argmax of W*rho at {:.4}, interlacing interval [{:.4}, {:.4}]: {}",
            arg.center,
            arg.interval.0,
            arg.interval.1,
            if arg.inside { "inside" } else { "outside" }
        );
    }
    Ok((report, table, doc))
}

pub fn simulate(e: &ExperimentArgs) -> CliResult<()> {
    let start = Instant::now();
    let (_, table, doc) = run_bulk(e, "simulate")?;
    finish(&e.common, &table, &doc, start)
}

pub fn compare(a: &CompareArgs) -> CliResult<()> {
    let start = Instant::now();
    let (report, table, doc) = run_bulk(&a.experiment, "compare")?;
    eprintln!("{:>10} {:>12} {:>12} {:>25} {:>5}", "lambda", "theory", "mc_mean", "99% CI", "in");
    for ((e, th), interior) in report
        .estimates
        .iter()
        .zip(&report.theory)
        .zip(&report.diagnostics.interior)
    {
        let (w, hit) = match th.w {
            Some(w) => (format!("{w:.6}"), if e.contains(w) { "yes" } else { "no" }),
            None => ("-".to_string(), "-"),
        };
        eprintln!(
            "{:>10.4} {:>12} {:>12.6} [{:>10.6}, {:>10.6}] {:>5}{}",
            e.center,
            w,
            e.mean,
            e.ci_low,
            e.ci_high,
            hit,
            if *interior { "" } else { " (edge)" }
        );
    }
    finish(&a.experiment.common, &table, &doc, start)?;
    match report.coverage {
        Some(c) if c >= a.threshold => Ok(()),
        coverage => Err(CliError::Coverage {
            coverage,
            threshold: a.threshold,
        }),
    }
}

// ---------------------------------------------------------------------------
// spike

pub fn spike(a: &SpikeArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::new(a.big_n, a.q, a.t, a.trials, a.common.seed, Target::SpikeSpike);
    cfg.threads = a.common.threads;
    cfg.binning.count = a.bins;
    let recipe = match a.mu {
        Some(mu) if a.mode != SpikeMode::Bulk => RankOneRecipe::Split { lambda: a.lambda, mu },
        _ => RankOneRecipe::Outside { lambda: a.lambda },
    };
    cfg.a_spec = ASpec::RankOne { recipe };
    match a.mode {
        SpikeMode::Spike => {
            let mu = require(a.mu, "mu", "spike mode")?;
            let report = run_spike_spike(&cfg)?;
            report_summary(&report);
            let mut table = Table::new(&[
                "lambda", "mu", "t", "q", "theory_f", "mc_mean", "mc_ci_low", "mc_ci_high", "n_samples",
            ]);
            for (e, th) in report.estimates.iter().zip(&report.theory) {
                table.push(vec![
                    a.lambda.into(),
                    mu.into(),
                    a.t.into(),
                    a.q.into(),
                    th.w.into(),
                    e.mean.into(),
                    e.ci_low.into(),
                    e.ci_high.into(),
                    e.n_samples.into(),
                ]);
            }
            let doc = document(&a.common, config_echo("spike", &report.config), &table, Some(&report));
            finish(&a.common, &table, &doc, start)
        }
        SpikeMode::Bulk => {
            cfg.target = Target::SpikeBulk;
            let report = run_spike_bulk(&cfg)?;
            report_summary(&report);
            if let Some(m) = &report.diagnostics.spike_mass {
                eprintln!(
                    "spike mass: {:.6} (theory {:.6}, relative error {:.4})",
                    m.estimate.mean, m.theory, m.relative_error
                );
            }
            let table = bulk_table(&report, &SPIKE_BULK_HEADER, a.lambda);
            let doc = document(&a.common, config_echo("spike", &report.config), &table, Some(&report));
            finish(&a.common, &table, &doc, start)
        }
        SpikeMode::Path => {
            if a.steps == 0 || !(a.t_max > 0.0) {
                return Err(invalid("path mode needs --steps >= 1 and --t-max > 0"));
            }
            let grid: Vec<f64> = (1..=a.steps)
                .map(|k| a.t_max * k as f64 / a.steps as f64)
                .collect();
            let points = run_spike_path(&cfg, &grid)?;
            let mut table = Table::new(&TRAJECTORY_HEADER);
            for p in &points {
                table.push(vec![
                    p.t.into(),
                    p.lambda1.into(),
                    p.mu1.into(),
                    p.edge_full.into(),
                    p.edge_minor.into(),
                ]);
            }
            let mut params = to_value(&cfg);
            params["t_max"] = json!(a.t_max);
            params["steps"] = json!(a.steps);
            let mut doc = document(&a.common, config_echo("spike", &params), &table, None);
            doc.estimates = to_value(&points);
            doc.theory = Value::Null;
            finish(&a.common, &table, &doc, start)
        }
    }
}

// ---------------------------------------------------------------------------
// bernoulli

pub fn bernoulli(a: &BernoulliArgs) -> CliResult<()> {
    let start = Instant::now();
    let target = match a.mode {
        BernoulliMode::Bulk => Target::BernoulliBulk,
        BernoulliMode::Spike => Target::BernoulliSpike {
            sizes: a.sizes.clone(),
        },
    };
    let t = a.p * (1.0 - a.p);
    let mut cfg = ExperimentConfig::new(a.big_n, a.q, t, a.trials, a.common.seed, target);
    cfg.threads = a.common.threads;
    cfg.binning.count = a.bins;
    cfg.a_spec = ASpec::Bernoulli { p: a.p };
    let report = run_bernoulli(&cfg)?;
    report_summary(&report);
    let table = match a.mode {
        BernoulliMode::Bulk => bulk_table(&report, &SPIKE_BULK_HEADER, 0.0),
        BernoulliMode::Spike => {
            let mut table = Table::new(&[
                "N", "n", "p", "theory_deficit", "mc_deficit", "mc_ci_low", "mc_ci_high", "n_samples",
            ]);
            for ((e, th), &big_n) in report.estimates.iter().zip(&report.theory).zip(&a.sizes) {
                table.push(vec![
                    big_n.into(),
                    ((a.q * big_n as f64).round() as usize).into(),
                    a.p.into(),
                    th.w.into(),
                    e.mean.into(),
                    e.ci_low.into(),
                    e.ci_high.into(),
                    e.n_samples.into(),
                ]);
            }
            table
        }
    };
    let doc = document(&a.common, config_echo("bernoulli", &report.config), &table, Some(&report));
    finish(&a.common, &table, &doc, start)
}

// ---------------------------------------------------------------------------
// probe

pub fn probe(a: &ProbeArgs) -> CliResult<()> {
    let start = Instant::now();
    let n = a.n.unwrap_or((0.9 * a.big_n as f64).round() as usize);
    match a.kind {
        ProbeKind::Correlation => {
            let indices = (!a.index.is_empty()).then(|| {
                a.index
                    .chunks(4)
                    .map(|c| [c[0], c[1], c[2], c[3]])
                    .collect::<Vec<_>>()
            });
            if a.index.len() % 4 != 0 {
                return Err(invalid("--index takes quadruples i,l,j,k"));
            }
            let r = correlation_probe(a.big_n, n, a.t, a.samples, a.common.seed, indices, a.common.threads)?;
            eprintln!("max |z| = {:.3}, diagonal ratio = {:.5}", r.max_abs_z, r.diagonal_ratio);
            let mut table = Table::new(&["i", "l", "j", "k", "estimate", "std_error", "theory", "z_score"]);
            for e in &r.entries {
                table.push(vec![
                    e.i.into(),
                    e.l.into(),
                    e.j.into(),
                    e.k.into(),
                    e.estimate.into(),
                    e.std_error.into(),
                    e.theory.into(),
                    e.z_score.into(),
                ]);
            }
            let params = json!({ "kind": "correlation", "N": a.big_n, "n": n, "t": a.t, "samples": a.samples, "master_seed": a.common.seed });
            let mut doc = document(&a.common, config_echo("probe", &params), &table, None);
            doc.estimates = table.to_json_rows();
            doc.theory = Value::Null;
            doc.diagnostics = Some(json!({ "max_abs_z": r.max_abs_z, "diagonal_ratio": r.diagonal_ratio }));
            finish(&a.common, &table, &doc, start)
        }
        ProbeKind::Drift => {
            let pair = a.pair.as_ref().map(|p| (p[0], p[1]));
            let r = drift_probe(
                a.big_n,
                n,
                a.t,
                a.dt,
                a.samples,
                a.common.seed,
                pair,
                a.doubling,
                a.common.threads,
            )?;
            eprintln!(
                "drift formula {:.6}, estimate {:.6} +- {:.6}, relative deviation {:.4}",
                r.formula, r.estimate.estimate, r.estimate.std_error, r.relative_deviation
            );
            let mut table = Table::new(&["i", "j", "overlap", "dt", "formula", "estimate", "std_error"]);
            let row = |e: &DriftEstimate| -> Vec<Cell> {
                vec![
                    r.i.into(),
                    r.j.into(),
                    r.overlap.into(),
                    e.dt.into(),
                    r.formula.into(),
                    e.estimate.into(),
                    e.std_error.into(),
                ]
            };
            table.push(row(&r.estimate));
            if let Some(d) = &r.doubled {
                table.push(row(d));
            }
            let params = json!({ "kind": "drift", "N": a.big_n, "n": n, "t": a.t, "dt": a.dt, "trials": a.samples, "doubling": a.doubling, "master_seed": a.common.seed });
            let mut doc = document(&a.common, config_echo("probe", &params), &table, None);
            doc.estimates = table.to_json_rows();
            doc.theory = json!({ "terms": to_value(&r.terms), "formula": r.formula });
            doc.diagnostics = Some(json!({
                "relative_deviation": r.relative_deviation,
                "martingale_mean": r.martingale_mean,
                "martingale_std_error": r.martingale_std_error,
            }));
            finish(&a.common, &table, &doc, start)
        }
    }
}
