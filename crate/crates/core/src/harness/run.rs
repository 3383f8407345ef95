//! Subcommand runners: each takes a config, exercises the library, and
//! produces a `Report` whose `pass` flag drives the process exit code.

use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::conjugacy::{
    conjugacy_residual, injectivity_probe, linear_orbit, solve_correction_on_orbit, IterationPolicy,
};
use crate::delay_system::{lipschitz_certificate, SemilinearSystem, TimeRule};
use crate::dichotomy::{
    contraction_certificate, decay_tail_sum, green_norm_bound, ContractionCertificate,
    DichotomyData,
};
use crate::error::{Error, Result};
use crate::harness::config::{Config, SweepParameter};
use crate::harness::report::{DecayRow, Report, ResidualRow, SweepRow, Verdict};
use crate::sampling;

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub quiet: bool,
}

impl RunOptions {
    fn apply(&self, cfg: &Config) -> Config {
        let mut cfg = cfg.clone();
        if let Some(seed) = self.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(samples) = self.samples {
            cfg.experiment.samples = samples;
        }
        cfg
    }
}

fn require_dichotomy(cfg: &Config) -> Result<()> {
    if cfg.dichotomy.is_none() {
        return Err(Error::Config(
            "this command needs a [dichotomy] section".into(),
        ));
    }
    Ok(())
}

fn picard_policy(cfg: &Config) -> IterationPolicy {
    match cfg.experiment.picard_iters {
        Some(k) => IterationPolicy::Fixed(k),
        None => IterationPolicy::TargetError(cfg.experiment.picard_target),
    }
}

/// Simulates the linear and semilinear flows from the configured initial
/// history and writes per-step state vectors.
pub fn cmd_simulate(cfg: &Config, opts: &RunOptions) -> Result<Report> {
    let cfg = opts.apply(cfg);
    let built = cfg.build()?;
    let sys = &built.system;
    let p = &sys.phase;

    let initial = match &cfg.experiment.initial {
        Some(v) => {
            if v.len() != p.state_dim() {
                return Err(Error::Config(format!(
                    "initial vector has dimension {}, expected {}",
                    v.len(),
                    p.state_dim()
                )));
            }
            p.impulse(&DVector::from_vec(v.clone()))
        }
        None => p.zero_history(),
    };

    let horizon = cfg.experiment.horizon;
    let mut lin = initial.clone();
    let mut sem = initial.clone();
    let mut csv = String::from("m");
    for i in 0..p.state_dim() {
        write!(csv, ",lin_{i}").expect("string write");
    }
    for i in 0..p.state_dim() {
        write!(csv, ",sem_{i}").expect("string write");
    }
    csv.push('\n');
    for m in 0..=horizon {
        write!(csv, "{m}").expect("string write");
        for i in 0..p.state_dim() {
            write!(csv, ",{}", lin.latest()[i]).expect("string write");
        }
        for i in 0..p.state_dim() {
            write!(csv, ",{}", sem.latest()[i]).expect("string write");
        }
        csv.push('\n');
        if m < horizon {
            let v = sys.step_linear(m, &lin);
            lin = p.shift_append(&lin, &v);
            let w = sys.step(m, &sem);
            sem = p.shift_append(&sem, &w);
        }
    }

    let mut report = Report::new("simulate", cfg.experiment.seed, cfg.clone());
    let tables = opts.out.join("tables");
    std::fs::create_dir_all(&tables)?;
    std::fs::write(tables.join("trajectories.csv"), csv)?;
    report.files.push("tables/trajectories.csv".into());
    report.push_verdict(
        Verdict::new("simulate", horizon + 1, 0.0, 0.0)
            .with_note(&format!("wrote {} steps", horizon + 1)),
    );
    report.write(&opts.out)?;
    report.print_summary(opts.quiet);
    Ok(report)
}

/// Runs the Lipschitz probe and the contraction certificate.
pub fn cmd_certify(cfg: &Config, opts: &RunOptions) -> Result<Report> {
    let cfg = opts.apply(cfg);
    require_dichotomy(&cfg)?;
    let built = cfg.build()?;
    let sys = &built.system;
    let d = built.dichotomy.as_ref().expect("checked above");
    let mut rng = sampling::rng_from_seed(cfg.experiment.seed);

    let mut report = Report::new("certify", cfg.experiment.seed, cfg.clone());
    push_lipschitz_verdict(&mut report, sys, cfg.experiment.samples, &mut rng)?;

    let cert = contraction_certificate(sys, d, cfg.experiment.sum_horizon)?;
    report.certificate = Some(cert);
    report.push_verdict(certificate_verdict(&cert));

    let m = cfg.experiment.base_time;
    for n in 0..=cfg.experiment.sum_horizon.min(60) {
        report.decay.push(DecayRow {
            m,
            n,
            upper: d.green_upper(m, n),
            tail_sum_from_n: decay_tail_sum(d, m, n),
        });
    }

    report.write(&opts.out)?;
    report.print_summary(opts.quiet);
    Ok(report)
}

fn certificate_verdict(cert: &ContractionCertificate) -> Verdict {
    let mut v = Verdict::new("contraction_certificate", 1, cert.product, 1.0);
    v.pass = cert.satisfied;
    v.note = format!(
        "q_bound={} tail={} horizon={}",
        cert.q_bound, cert.tail_bound_contribution, cert.horizon_used
    );
    v
}

fn push_lipschitz_verdict(
    report: &mut Report,
    sys: &SemilinearSystem,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    match &sys.nonlinear {
        Some(nl) => {
            let cert = lipschitz_certificate(nl, &sys.phase, samples, rng)?;
            report.push_verdict(Verdict::new(
                "lipschitz_probe",
                cert.samples,
                cert.max_ratio,
                1.0 + 1e-9,
            ));
        }
        None => {
            report.push_verdict(Verdict::skipped("lipschitz_probe", "no nonlinearity"));
        }
    }
    Ok(())
}

/// Builds conjugacy data for every configured base point and checks the
/// identity residuals against their budgets.
pub fn cmd_conjugate(cfg: &Config, opts: &RunOptions) -> Result<Report> {
    let cfg = opts.apply(cfg);
    require_dichotomy(&cfg)?;
    let built = cfg.build()?;
    let sys = &built.system;
    let d = built.dichotomy.as_ref().expect("checked above");
    let mut report = Report::new("conjugate", cfg.experiment.seed, cfg.clone());

    let cert = contraction_certificate(sys, d, cfg.experiment.sum_horizon)?;
    report.certificate = Some(cert);
    report.push_verdict(certificate_verdict(&cert));
    if !cert.satisfied {
        report
            .warnings
            .push("contraction certificate not satisfied; conjugacy construction refused".into());
        report.write(&opts.out)?;
        report.print_summary(opts.quiet);
        return Ok(report);
    }

    let outcome = conjugacy_rows(sys, d, &cfg, &cert)?;
    for row in outcome.rows {
        report.push_residual(row);
    }
    report.warnings.extend(outcome.warnings);
    report.push_verdict(contraction_measurement_verdict(
        &cert,
        outcome.max_step_ratio,
    ));

    report.write(&opts.out)?;
    report.print_summary(opts.quiet);
    Ok(report)
}

fn contraction_measurement_verdict(cert: &ContractionCertificate, worst: f64) -> Verdict {
    // Measured step ratios satisfy the contraction bound up to float noise.
    Verdict::new(
        "picard_contraction",
        1,
        worst,
        cert.product * (1.0 + 1e-9) + 1e-12,
    )
}

struct ConjugacyOutcome {
    rows: Vec<ResidualRow>,
    warnings: Vec<String>,
    max_step_ratio: f64,
}

/// Shared by `conjugate` and `sweep` so a one-point sweep reproduces the
/// conjugate output exactly.
fn conjugacy_rows(
    sys: &SemilinearSystem,
    d: &DichotomyData,
    cfg: &Config,
    cert: &ContractionCertificate,
) -> Result<ConjugacyOutcome> {
    if !d.supports_backward() {
        return Err(Error::Config(
            "conjugacy needs backward evolution; tabulated dichotomy data declares none".into(),
        ));
    }
    let expt = &cfg.experiment;
    if expt.eval_horizon > expt.orbit_horizon {
        return Err(Error::Config(format!(
            "eval_horizon {} exceeds orbit_horizon {}",
            expt.eval_horizon, expt.orbit_horizon
        )));
    }
    if expt.base_time > expt.eval_horizon {
        return Err(Error::Config(format!(
            "base_time {} exceeds eval_horizon {}",
            expt.base_time, expt.eval_horizon
        )));
    }
    let policy = picard_policy(cfg);
    let stride = expt.eval_stride.max(1);

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut max_step_ratio: f64 = 0.0;
    for (index, g) in cfg.generator_vectors().iter().enumerate() {
        if g.len() != sys.phase.state_dim() {
            return Err(Error::Config(format!(
                "generator {index} has dimension {}, expected {}",
                g.len(),
                sys.phase.state_dim()
            )));
        }
        let base = d.project_unstable(expt.base_time, &sys.phase.impulse(g));
        if sys.phase.norm_beta(&base) <= 1e-14 {
            warnings.push(format!(
                "generator {index} has no unstable component; skipped"
            ));
            continue;
        }
        let orbit = linear_orbit(sys, d, expt.base_time, &base, expt.orbit_horizon)?;
        let oc = solve_correction_on_orbit(sys, d, cert, expt.base_time, orbit, policy)?;
        warnings.extend(oc.budget_warnings(sys, expt.max_orbit_norm));
        for r in &oc.step_ratios {
            max_step_ratio = max_step_ratio.max(*r);
        }
        let mut n = expt.base_time;
        while n <= expt.eval_horizon {
            let mut m = n;
            while m <= expt.eval_horizon {
                let r = conjugacy_residual(sys, &oc, n, m)?;
                rows.push(ResidualRow {
                    check: "conjugacy".into(),
                    orbit: index,
                    n,
                    m,
                    residual: r.residual,
                    tolerance: r.tolerance,
                    picard: r.picard_term,
                    f_tail: r.f_tail_term,
                    truncation: r.truncation_term,
                    pass: r.pass,
                });
                m += stride;
            }
            n += stride;
        }
    }
    Ok(ConjugacyOutcome {
        rows,
        warnings,
        max_step_ratio,
    })
}

/// Runs the full invariant suite with the configured sample counts.
pub fn cmd_verify(cfg: &Config, opts: &RunOptions) -> Result<Report> {
    let cfg = opts.apply(cfg);
    let built = cfg.build()?;
    let sys = &built.system;
    let mut rng = sampling::rng_from_seed(cfg.experiment.seed);
    let samples = cfg.experiment.samples;
    let support = cfg.experiment.support_len;
    let p = &sys.phase;
    let mut report = Report::new("verify", cfg.experiment.seed, cfg.clone());

    // Cocycle law of the linear evolution.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let h = sampling::random_history(&mut rng, p, support, 1.0);
            let n = sampling::range_usize(&mut rng, 0, 6);
            let k = n + sampling::range_usize(&mut rng, 0, 7);
            let m = k + sampling::range_usize(&mut rng, 0, 7);
            let via = sys.evolve_linear(k, &sys.evolve_linear(n, &h, k)?, m)?;
            let direct = sys.evolve_linear(n, &h, m)?;
            let res = p.norm_beta(&via.sub(&direct)) / (1.0 + p.norm_beta(&h));
            worst = worst.max(res);
        }
        report.push_verdict(Verdict::new("cocycle", samples, worst, 1e-10));
    }

    // Variation of constants, one- and two-time forms.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let h = sampling::random_history(&mut rng, p, support, 1.0);
            let m = sampling::range_usize(&mut rng, 1, 10);
            let forcing: Vec<DVector<f64>> = (0..m)
                .map(|_| sampling::random_vector(&mut rng, p.state_dim(), 1.0))
                .collect();
            let direct = sys.evolve_forced(&h, &forcing, m)?;
            let summed = sys.voc_sum(&h, &forcing, m)?;
            worst = worst.max(p.norm_beta(&direct.sub(&summed)));
        }
        report.push_verdict(Verdict::new("forced_voc", samples, worst, 1e-10));
    }
    {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let h = sampling::random_history(&mut rng, p, support, 1.0);
            let n = sampling::range_usize(&mut rng, 0, 5);
            let m = n + sampling::range_usize(&mut rng, 0, 10);
            worst = worst.max(sys.two_time_residual(n, m, &h)?);
        }
        report.push_verdict(Verdict::new("two_time_voc", samples, worst, 1e-9));
    }

    // Lipschitz contract of the perturbation.
    push_lipschitz_verdict(&mut report, sys, samples, &mut rng)?;

    let Some(d) = built.dichotomy.as_ref() else {
        report.write(&opts.out)?;
        report.print_summary(opts.quiet);
        return Ok(report);
    };
    let (coeff, rate) = d.constants();

    // Projection algebra.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let h = sampling::random_history(&mut rng, p, support, 1.0);
            let n = sampling::range_usize(&mut rng, 0, 12);
            let q = d.project_unstable(n, &h);
            let s = d.project_stable(n, &h);
            worst = worst.max(p.entry_sup_norm(&d.project_unstable(n, &q).sub(&q)));
            worst = worst.max(p.entry_sup_norm(&d.project_stable(n, &s).sub(&s)));
            worst = worst.max(p.entry_sup_norm(&s.add(&q).sub(&h)));
        }
        report.push_verdict(Verdict::new("projection_algebra", samples, worst, 1e-12));
    }

    // Commutation with the evolution.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let h = sampling::random_history(&mut rng, p, support, 1.0);
            let n = sampling::range_usize(&mut rng, 0, 6);
            let m = n + sampling::range_usize(&mut rng, 0, 20);
            let res = d.commutation_residual(sys, n, m, &h)? / (1.0 + p.norm_beta(&h));
            worst = worst.max(res);
        }
        report.push_verdict(Verdict::new("commutation", samples, worst, 1e-10));
    }

    // Decay inequalities with the certified constants.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let h = sampling::random_history(&mut rng, p, support, 1.0);
            let norm = p.norm_beta(&h);
            if norm <= 1e-12 {
                continue;
            }
            let n = sampling::range_usize(&mut rng, 0, 6);
            let k = sampling::range_usize(&mut rng, 0, 20);
            let fwd = sys.evolve_linear(n, &d.project_stable(n, &h), n + k)?;
            let bound = coeff * (-rate * k as f64).exp() * norm;
            worst = worst.max(p.norm_beta(&fwd) / bound);
        }
        report.push_verdict(Verdict::new("forward_decay", samples, worst, 1.0 + 1e-9));
    }
    if d.supports_backward() {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let h = sampling::random_history(&mut rng, p, support, 1.0);
            let norm = p.norm_beta(&h);
            if norm <= 1e-12 {
                continue;
            }
            let k = sampling::range_usize(&mut rng, 1, 20);
            let n = 20 + sampling::range_usize(&mut rng, 0, 6);
            let back = d.backward_on_unstable(n, n - k, &d.project_unstable(n, &h))?;
            let bound = coeff * (-rate * k as f64).exp() * norm;
            worst = worst.max(p.norm_beta(&back) / bound);
        }
        report.push_verdict(Verdict::new("backward_decay", samples, worst, 1.0 + 1e-9));
    } else {
        report.push_verdict(Verdict::skipped(
            "backward_decay",
            "tabulated data declares no backward evolution",
        ));
    }

    // Sampled Green norms stay under the analytic bound. Sampling only
    // probes a subspace, so the bound is ground truth; a sample within 5%
    // of it is flagged as a sharpness diagnostic.
    {
        let mut worst: f64 = 0.0;
        let probes = (samples / 10).max(5);
        for _ in 0..4 {
            let m = sampling::range_usize(&mut rng, 0, 10);
            let n = sampling::range_usize(&mut rng, 0, 10);
            if !d.supports_backward() && m < n {
                continue;
            }
            let b = green_norm_bound(d, sys, m, n, probes, &mut rng)?;
            let ratio = b.sampled_lower / b.upper;
            if ratio >= 0.95 {
                report.warnings.push(format!(
                    "sampled Green norm at ({m}, {n}) reaches {:.1}% of the analytic bound",
                    100.0 * ratio
                ));
            }
            worst = worst.max(ratio);
        }
        report.push_verdict(Verdict::new("green_bounds", 4 * probes, worst, 1.0 + 1e-9));
    }

    // Summable decay: the Green bound tail drops below any threshold.
    {
        let m = cfg.experiment.base_time;
        let mut from = m + 1;
        while decay_tail_sum(d, m, from) >= 1e-6 && from < m + 100_000 {
            from += 1;
        }
        let tail = decay_tail_sum(d, m, from);
        report.push_verdict(
            Verdict::new("decay_tail", 1, tail, 1e-6)
                .with_note(&format!("tail sum below 1e-6 from offset {}", from - m)),
        );
        for n in 0..=60.min(cfg.experiment.sum_horizon) {
            report.decay.push(DecayRow {
                m,
                n,
                upper: d.green_upper(m, n),
                tail_sum_from_n: decay_tail_sum(d, m, n),
            });
        }
    }

    // Conjugacy and injectivity, when the hypothesis is certified. Errors
    // from data that contradicts its own axioms (planted faults) become
    // failing verdicts so the suite still aggregates and exits with 2.
    let cert = contraction_certificate(sys, d, cfg.experiment.sum_horizon)?;
    report.certificate = Some(cert);
    if cert.satisfied && d.supports_backward() {
        match conjugacy_rows(sys, d, &cfg, &cert) {
            Ok(outcome) => {
                for row in outcome.rows {
                    report.push_residual(row);
                }
                report.warnings.extend(outcome.warnings);
                report.push_verdict(contraction_measurement_verdict(
                    &cert,
                    outcome.max_step_ratio,
                ));
                push_injectivity_verdict(&mut report, sys, d, &cfg, &cert)?;
            }
            Err(Error::Consistency(msg)) | Err(Error::Domain(msg)) => {
                let mut v = Verdict::skipped("conjugacy", &format!("failed: {msg}"));
                v.pass = false;
                report.push_verdict(v);
            }
            Err(e) => return Err(e),
        }
    } else {
        let why = if !cert.satisfied {
            "contraction certificate not satisfied"
        } else {
            "tabulated data declares no backward evolution"
        };
        report.push_verdict(Verdict::skipped("conjugacy", why));
    }

    report.write(&opts.out)?;
    report.print_summary(opts.quiet);
    Ok(report)
}

/// Sweeps one parameter and tabulates the certificate (and, when certified,
/// the conjugacy residuals) per point.
pub fn cmd_sweep(cfg: &Config, opts: &RunOptions) -> Result<Report> {
    let cfg = opts.apply(cfg);
    let Some(sweep) = cfg.sweep.clone() else {
        return Err(Error::Config("sweep needs a [sweep] section".into()));
    };
    require_dichotomy(&cfg)?;
    let mut report = Report::new("sweep", cfg.experiment.seed, cfg.clone());

    for &value in &sweep.values {
        let mut point_cfg = cfg.clone();
        let label = match sweep.parameter {
            SweepParameter::Epsilon => {
                let Some(nl) = point_cfg.nonlinearity.as_mut() else {
                    return Err(Error::Config(
                        "epsilon sweep needs a [nonlinearity] section".into(),
                    ));
                };
                for e in nl.epsilon.iter_mut() {
                    *e = value;
                }
                "epsilon"
            }
            SweepParameter::Beta => {
                point_cfg.phase.beta = value;
                "beta"
            }
            SweepParameter::Horizon => {
                let h = value.round();
                if h < 0.0 || (h - value).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "horizon sweep values must be nonnegative integers (got {value})"
                    )));
                }
                point_cfg.experiment.eval_horizon = h as usize;
                "horizon"
            }
        };

        let built = point_cfg.build()?;
        let sys = &built.system;
        let d = built.dichotomy.as_ref().expect("checked above");
        let cert = contraction_certificate(sys, d, point_cfg.experiment.sum_horizon)?;

        let (max_residual, rows_pass) = if cert.satisfied && d.supports_backward() {
            let outcome = conjugacy_rows(sys, d, &point_cfg, &cert)?;
            let max = outcome.rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            let pass = outcome.rows.iter().all(|r| r.pass);
            report.warnings.extend(outcome.warnings);
            (Some(max), pass)
        } else {
            (None, true)
        };

        let row = SweepRow {
            parameter: label.into(),
            value,
            q_bound: cert.q_bound,
            product: cert.product,
            satisfied: cert.satisfied,
            max_residual,
            pass: rows_pass,
        };
        report.pass &= row.pass;
        report.sweep.push(row);
    }

    report.write(&opts.out)?;
    report.print_summary(opts.quiet);
    Ok(report)
}

fn push_injectivity_verdict(
    report: &mut Report,
    sys: &SemilinearSystem,
    d: &DichotomyData,
    cfg: &Config,
    cert: &ContractionCertificate,
) -> Result<()> {
    let (_, rule) = sys.lipschitz_values();
    if !matches!(rule, TimeRule::Constant) {
        report.push_verdict(Verdict::skipped(
            "injectivity",
            "requires a constant Lipschitz-constant rule",
        ));
        return Ok(());
    }
    let generators = cfg.generator_vectors();
    if generators.len() < 2 {
        report.push_verdict(Verdict::skipped("injectivity", "needs two base points"));
        return Ok(());
    }
    let p = &sys.phase;
    let phi1 = d.project_unstable(cfg.experiment.base_time, &p.impulse(&generators[0]));
    let phi2 = d.project_unstable(cfg.experiment.base_time, &p.impulse(&generators[1]));
    let probe = injectivity_probe(
        sys,
        d,
        cert,
        cfg.experiment.base_time,
        &phi1,
        &phi2,
        cfg.experiment.orbit_horizon,
        picard_policy(cfg),
    )?;
    let mut ok = true;
    let mut note = String::new();
    if probe.vacuous {
        note = "identical base points; probe vacuous".into();
    } else {
        for row in &probe.rows {
            ok &= row.lower_bound <= row.growth * (1.0 + 1e-9) + 1e-12;
        }
        ok &= probe.first_crossing.is_some();
        ok &= probe.images_distinct;
        write!(
            note,
            "ceiling={} crossing_offset={:?} image_separation={}",
            probe.ceiling, probe.first_crossing, probe.image_separation
        )
        .expect("string write");
    }
    let mut v = Verdict::new(
        "injectivity",
        probe.rows.len(),
        probe.image_tolerance,
        probe.image_separation.max(probe.image_tolerance),
    );
    v.pass = ok;
    v.note = note;
    report.push_verdict(v);
    Ok(())
}
