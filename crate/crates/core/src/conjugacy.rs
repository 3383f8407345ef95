//! Construction of the conjugacy between the linear and semilinear flows
//! along one linear orbit.
//!
//! The fixed-point operator behind the conjugacy only queries the unknown
//! correction at points of the same linear orbit: propagating a point of the
//! unstable range keeps it on that orbit. Restricting to one orbit therefore
//! turns the fixed-point problem into a self-contained contraction on a
//! finite sequence of histories, solved by Picard iteration from zero with
//! an a-priori geometric error bound. Truncating the operator's time sum at
//! the orbit horizon adds an explicitly budgeted geometric tail.

use nalgebra::DVector;

use crate::delay_system::{SemilinearSystem, TimeRule};
use crate::dichotomy::{ContractionCertificate, DichotomyData};
use crate::error::{Error, Result};
use crate::phase_space::History;

/// Relative tolerance for membership of the unstable range.
const MEMBERSHIP_TOL: f64 = 1e-10;

/// Stopping rule for the Picard iteration.
#[derive(Debug, Clone, Copy)]
pub enum IterationPolicy {
    /// Run exactly this many sweeps.
    Fixed(usize),
    /// Run until the a-priori contraction factor power drops below the
    /// target: `k = ceil(ln target / ln rho)`.
    TargetError(f64),
}

impl IterationPolicy {
    fn iterations(&self, rho: f64) -> usize {
        match *self {
            IterationPolicy::Fixed(k) => k.max(1),
            IterationPolicy::TargetError(target) => {
                if rho <= 0.0 {
                    1
                } else {
                    let k = (target.ln() / rho.ln()).ceil();
                    (k.max(1.0) as usize).min(500)
                }
            }
        }
    }
}

/// The conjugacy data computed along one linear orbit: the orbit points, the
/// correction sequence approximating the conjugacy offset at each point, and
/// the certified error accounting.
#[derive(Debug, Clone)]
pub struct OrbitConjugacy {
    base_time: usize,
    orbit: Vec<History>,
    correction: Vec<History>,
    pub iterations: usize,
    /// `K(1) q` from the certificate.
    pub contraction_factor: f64,
    /// Distance from the computed correction to the fixed point of the
    /// truncated operator: `rho^k * rho / (1 - rho)`.
    pub apriori_error: f64,
    /// Decay rate of the certified truncation error (see
    /// [`truncation_decay`]): strictly below the dichotomy rate in general.
    pub truncation_rate: f64,
    /// Coefficient of the certified truncation error.
    pub truncation_coeff: f64,
    /// Sup-norm ratios of successive Picard steps. Recorded only while
    /// the reference step is above the floating-point measurement floor
    /// (`64 eps (1 + ||u||)`); below it a quotient reads rounding jitter,
    /// not the operator.
    pub step_ratios: Vec<f64>,
    pub max_correction_norm: f64,
    /// True when iteration stopped because a sweep reproduced the previous
    /// correction exactly (an exact fixed point in floating point).
    pub converged_exactly: bool,
}

impl OrbitConjugacy {
    pub fn base_time(&self) -> usize {
        self.base_time
    }

    /// Largest orbit time (the truncation horizon of the operator sum).
    pub fn horizon(&self) -> usize {
        self.orbit.len() - 1
    }

    pub fn orbit_point(&self, m: usize) -> &History {
        &self.orbit[m]
    }

    pub fn correction(&self, m: usize) -> &History {
        &self.correction[m]
    }

    /// The conjugacy image of the orbit point at time `m`: identity plus
    /// correction.
    pub fn conjugated(&self, m: usize) -> History {
        self.orbit[m].add(&self.correction[m])
    }

    /// Certified bound on the distance between the computed fixed point of
    /// the horizon-truncated operator and the fixed point of the full one,
    /// at orbit index `m`.
    pub fn truncation_error(&self, m: usize) -> f64 {
        self.truncation_coeff * (-self.truncation_rate * (self.horizon() + 2 - m) as f64).exp()
    }

    /// Certified distance from `correction(m)` to the exact conjugacy
    /// offset: Picard error plus the truncation error of the operator sum.
    pub fn correction_error_bound(&self, m: usize) -> f64 {
        self.apriori_error + self.truncation_error(m)
    }

    /// Flags orbit points whose norm exceeds the configured budget.
    pub fn budget_warnings(&self, sys: &SemilinearSystem, max_norm: f64) -> Vec<String> {
        let mut warnings = Vec::new();
        for (m, point) in self.orbit.iter().enumerate() {
            let norm = sys.phase.norm_beta(point);
            if norm > max_norm {
                warnings.push(format!(
                    "orbit point at time {m} has norm {norm:.3e}, beyond the budget {max_norm:.3e}"
                ));
                break;
            }
        }
        warnings
    }
}

/// Builds the linear orbit `A(m, n) phi` for `m = 0..=horizon`.
///
/// `phi` must lie in the unstable range at time `n` (within the membership
/// tolerance); it is re-projected before use so the orbit stays exactly in
/// the ranges where backward evolution is defined.
pub fn linear_orbit(
    sys: &SemilinearSystem,
    d: &DichotomyData,
    n: usize,
    phi: &History,
    horizon: usize,
) -> Result<Vec<History>> {
    if n > horizon {
        return Err(Error::Domain(format!(
            "base time {n} beyond orbit horizon {horizon}"
        )));
    }
    let p = &sys.phase;
    let stable_part = p.norm_beta(&d.project_stable(n, phi));
    if stable_part > MEMBERSHIP_TOL * (1.0 + p.norm_beta(phi)) {
        return Err(Error::Domain(format!(
            "base point is not in the unstable range: stable mass {stable_part:.3e}"
        )));
    }
    let base = d.project_unstable(n, phi);

    let mut orbit = vec![p.zero_history(); horizon + 1];
    orbit[n] = base;
    for m in n..horizon {
        let v = sys.step_linear(m, &orbit[m]);
        orbit[m + 1] = p.shift_append(&orbit[m], &v);
    }
    for m in (0..n).rev() {
        orbit[m] = d.backward_on_unstable(m + 1, m, &orbit[m + 1])?;
    }
    Ok(orbit)
}

/// One sweep of the fixed-point operator along the orbit: maps a candidate
/// correction sequence `u` to
/// `u'(t) = sum_{m=0..=horizon} G(t, m+1) Gamma f_m(orbit[m] + u[m])`,
/// returning the new sequence and the per-index geometric bound on the
/// discarded `m > horizon` mass.
///
/// The sum is evaluated with two running accumulators (forward through the
/// stable projections, backward through the unstable ones), so one sweep
/// costs one forward and one backward pass instead of a double loop.
pub fn correction_map_on_orbit(
    sys: &SemilinearSystem,
    d: &DichotomyData,
    orbit: &[History],
    u: &[History],
) -> Result<(Vec<History>, Vec<f64>)> {
    if orbit.len() != u.len() || orbit.is_empty() {
        return Err(Error::Domain(
            "orbit and correction sequences must share a nonempty horizon".into(),
        ));
    }
    let p = &sys.phase;
    let horizon = orbit.len() - 1;

    let impulses: Vec<History> = (0..=horizon)
        .map(|m| {
            let arg = orbit[m].add(&u[m]);
            let value = match &sys.nonlinear {
                Some(nl) => nl.apply(m, &arg),
                None => DVector::zeros(p.state_dim()),
            };
            p.impulse(&value)
        })
        .collect();

    // Forward pass: fwd[t] = sum_{m+1 <= t} A(t, m+1) P_{m+1} impulse_m.
    let mut fwd = vec![p.zero_history(); horizon + 1];
    for t in 0..horizon {
        let stepped = {
            let v = sys.step_linear(t, &fwd[t]);
            p.shift_append(&fwd[t], &v)
        };
        fwd[t + 1] = stepped.add(&d.project_stable(t + 1, &impulses[t]));
    }

    // Backward pass: bwd[t] = sum_{m >= t} A(t, m+1) Q_{m+1} impulse_m.
    let mut bwd = vec![p.zero_history(); horizon + 1];
    let mut carry = p.zero_history();
    for t in (0..=horizon).rev() {
        let incoming = d.project_unstable(t + 1, &impulses[t]).add(&carry);
        carry = d.backward_on_unstable(t + 1, t, &incoming)?;
        bwd[t] = carry.clone();
    }

    let next: Vec<History> = (0..=horizon).map(|t| fwd[t].sub(&bwd[t])).collect();

    // Discarded terms m > horizon contribute at most
    // K(1) c_sup D e^{-lambda (horizon + 2 - t)} / (1 - e^{-lambda}).
    let (coeff, rate) = d.constants();
    let k1 = p.axiom_constants(1).k;
    let c_sup = sys.lipschitz_sup();
    let decay = (-rate).exp();
    let tails = (0..=horizon)
        .map(|t| k1 * c_sup * coeff * (-rate * (horizon + 2 - t) as f64).exp() / (1.0 - decay))
        .collect();

    Ok((next, tails))
}

/// Picard iteration for the correction sequence along one orbit, starting
/// from zero. Requires a satisfied contraction certificate; records step
/// ratios and the a-priori error bound.
pub fn solve_correction_on_orbit(
    sys: &SemilinearSystem,
    d: &DichotomyData,
    cert: &ContractionCertificate,
    base_time: usize,
    orbit: Vec<History>,
    policy: IterationPolicy,
) -> Result<OrbitConjugacy> {
    if !cert.satisfied {
        return Err(Error::Hypothesis(format!(
            "contraction certificate not satisfied: K(1) q = {}",
            cert.product
        )));
    }
    let p = &sys.phase;
    let horizon = orbit.len() - 1;
    if base_time > horizon {
        return Err(Error::Domain(format!(
            "base time {base_time} beyond orbit horizon {horizon}"
        )));
    }
    check_orbit_membership(&orbit, sys, d)?;
    let rho = cert.product;
    let (truncation_rate, truncation_coeff) = truncation_decay(sys, d, rho);

    let mut u = vec![p.zero_history(); horizon + 1];
    let planned = policy.iterations(rho);
    let mut step_ratios = Vec::new();
    let mut previous_step: Option<f64> = None;
    let mut correction_scale: f64 = 0.0;
    let mut performed = 0;
    let mut converged_exactly = false;
    for _ in 0..planned {
        let (next, _) = correction_map_on_orbit(sys, d, &orbit, &u)?;
        let mut step: f64 = 0.0;
        for m in 0..=horizon {
            step = step.max(p.entry_sup_norm(&next[m].sub(&u[m])));
            correction_scale = correction_scale.max(p.entry_sup_norm(&next[m]));
        }
        u = next;
        performed += 1;
        let measurement_floor = 64.0 * f64::EPSILON * (1.0 + correction_scale);
        if let Some(prev) = previous_step {
            if prev > measurement_floor {
                step_ratios.push(step / prev);
            }
        }
        previous_step = Some(step);
        if step == 0.0 {
            converged_exactly = true;
            break;
        }
    }

    let apriori_error = rho.powi(performed as i32) * rho / (1.0 - rho);
    let max_correction_norm = u.iter().map(|h| p.norm_beta(h)).fold(0.0, f64::max);

    Ok(OrbitConjugacy {
        base_time,
        orbit,
        correction: u,
        iterations: performed,
        contraction_factor: rho,
        apriori_error,
        truncation_rate,
        truncation_coeff,
        step_ratios,
        max_correction_norm,
        converged_exactly,
    })
}

/// Certified decay of the truncation error of the operator sum.
///
/// Truncating the time sum at the orbit horizon perturbs the operator by at
/// most `F0 e^{-lambda (horizon + 2 - t)}` at index `t` (one-sweep tail,
/// `F0 = K(1) c_sup D / (1 - e^{-lambda})`). The fixed points of the
/// truncated and full operators then differ, at index `t`, by at most
/// `F0 e^{-mu (horizon + 2 - t)} / (1 - kappa(mu))`, where the comparison
/// runs in the sup norm weighted by `e^{mu (horizon + 2 - t)}` and
///
/// `kappa(mu) = K(1) c_sup D e^{-mu} [ 1/(1 - e^{-(lambda-mu)})
///                                     + e^{-(lambda+mu)}/(1 - e^{-(lambda+mu)}) ]`
///
/// bounds the operator's Lipschitz constant in that weighted norm. At
/// `mu = 0` the weighted norm is the plain sup norm and the constant is the
/// certified contraction factor itself, so a valid pair always exists; the
/// search returns the largest grid rate whose constant stays clearly below
/// one. Large near-horizon errors are thereby charged at a certified
/// geometric discount toward earlier indices instead of the unsound
/// full-rate `lambda`.
pub fn truncation_decay(sys: &SemilinearSystem, d: &DichotomyData, rho: f64) -> (f64, f64) {
    let (coeff, rate) = d.constants();
    let k1 = sys.phase.axiom_constants(1).k;
    let c_sup = sys.lipschitz_sup();
    let decay = (-rate).exp();
    let one_sweep = k1 * c_sup * coeff / (1.0 - decay);
    if c_sup == 0.0 {
        return (rate, 0.0);
    }
    let kappa_cap = 0.5 * (1.0 + rho);
    let base = k1 * c_sup * coeff;
    for j in (1..20usize).rev() {
        let mu = rate * j as f64 / 20.0;
        let near = 1.0 / (1.0 - (-(rate - mu)).exp());
        let far = (-(rate + mu)).exp() / (1.0 - (-(rate + mu)).exp());
        let kappa = base * (-mu).exp() * (near + far);
        if kappa <= kappa_cap {
            return (mu, one_sweep / (1.0 - kappa));
        }
    }
    (0.0, one_sweep / (1.0 - rho))
}

/// Verifies every orbit point stays in the unstable range.
fn check_orbit_membership(
    orbit: &[History],
    sys: &SemilinearSystem,
    d: &DichotomyData,
) -> Result<()> {
    let p = &sys.phase;
    for (m, point) in orbit.iter().enumerate() {
        let stable = p.norm_beta(&d.project_stable(m, point));
        if stable > MEMBERSHIP_TOL * (1.0 + p.norm_beta(point)) {
            return Err(Error::Consistency(format!(
                "orbit point at time {m} drifted out of the unstable range \
                 (stable mass {stable:.3e})"
            )));
        }
    }
    Ok(())
}

/// Residual of the conjugacy identity between orbit times `n <= m`, with its
/// certified tolerance budget.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ConjugacyResidual {
    pub residual: f64,
    pub tolerance: f64,
    /// Picard error of both endpoints, amplified through the flow.
    pub picard_term: f64,
    /// Discarded operator-sum tails, amplified through the flow.
    pub f_tail_term: f64,
    /// Window truncation tails of both compared histories.
    pub truncation_term: f64,
    pub pass: bool,
}

/// Compares the conjugacy image at time `m` against the semilinear flow of
/// the image at time `n`. The residual is measured over the stored window;
/// tail uncertainty appears in the budget instead, so an exactly conjugate
/// pair reports residual zero.
pub fn conjugacy_residual(
    sys: &SemilinearSystem,
    oc: &OrbitConjugacy,
    n: usize,
    m: usize,
) -> Result<ConjugacyResidual> {
    if n > m || m > oc.horizon() {
        return Err(Error::Domain(format!(
            "conjugacy residual needs n <= m <= horizon (got n={n}, m={m}, horizon={})",
            oc.horizon()
        )));
    }
    let p = &sys.phase;
    let lhs = oc.conjugated(m);
    let rhs = sys.evolve(n, &oc.conjugated(n), m)?;
    let residual = p.entry_sup_norm(&lhs.sub(&rhs));

    let amplify = sys.flow_lipschitz(n, m);
    let picard_term = oc.apriori_error * (1.0 + amplify);
    let f_tail_term = oc.truncation_error(m) + amplify * oc.truncation_error(n);
    let truncation_term = lhs.tail_bound() + rhs.tail_bound();
    let tolerance = picard_term + f_tail_term + truncation_term;
    Ok(ConjugacyResidual {
        residual,
        tolerance,
        picard_term,
        f_tail_term,
        truncation_term,
        pass: residual <= tolerance,
    })
}

/// One row of the injectivity growth table.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct InjectivityRow {
    pub time: usize,
    /// `||A(n, p)(phi1 - phi2)||`.
    pub growth: f64,
    /// Certified lower bound `||phi1 - phi2|| / a_{p,n}`.
    pub lower_bound: f64,
    pub exceeds_ceiling: bool,
}

/// Outcome of the injectivity mechanism probe.
#[derive(Debug, Clone, serde::Serialize)]
pub struct InjectivityReport {
    pub base_time: usize,
    pub base_separation: f64,
    /// `2 ||correction||_inf` bound: twice `rho / (1 - rho)`.
    pub ceiling: f64,
    pub rows: Vec<InjectivityRow>,
    /// Offset `n - p` of the first growth value above the ceiling.
    pub first_crossing: Option<usize>,
    pub vacuous: bool,
    pub image_separation: f64,
    pub image_tolerance: f64,
    pub images_distinct: bool,
}

/// Probes the mechanism that makes the conjugacy one-to-one: the forward
/// growth of the difference of two unstable-range points must exceed any
/// bounded-correction ceiling, while the images under the conjugacy stay
/// separated. Requires a constant Lipschitz rule.
#[allow(clippy::too_many_arguments)]
pub fn injectivity_probe(
    sys: &SemilinearSystem,
    d: &DichotomyData,
    cert: &ContractionCertificate,
    p_time: usize,
    phi1: &History,
    phi2: &History,
    horizon: usize,
    policy: IterationPolicy,
) -> Result<InjectivityReport> {
    let (_, rule) = sys.lipschitz_values();
    if !matches!(rule, TimeRule::Constant) {
        return Err(Error::Hypothesis(
            "injectivity probe requires a constant Lipschitz-constant rule".into(),
        ));
    }
    let p = &sys.phase;
    let rho = cert.product;
    let ceiling = 2.0 * rho / (1.0 - rho);

    let base1 = d.project_unstable(p_time, phi1);
    let base2 = d.project_unstable(p_time, phi2);
    let delta = base1.sub(&base2);
    let base_separation = p.norm_beta(&delta);

    if base_separation <= 1e-14 {
        return Ok(InjectivityReport {
            base_time: p_time,
            base_separation,
            ceiling,
            rows: Vec::new(),
            first_crossing: None,
            vacuous: true,
            image_separation: 0.0,
            image_tolerance: 0.0,
            images_distinct: false,
        });
    }

    let mut rows = Vec::new();
    let mut first_crossing = None;
    let mut diff = delta.clone();
    for t in p_time..=horizon {
        if t > p_time {
            let v = sys.step_linear(t - 1, &diff);
            diff = p.shift_append(&diff, &v);
        }
        let growth = p.norm_beta(&diff);
        let lower_bound = base_separation / d.green_upper(p_time, t);
        let exceeds = growth > ceiling;
        if exceeds && first_crossing.is_none() {
            first_crossing = Some(t - p_time);
        }
        rows.push(InjectivityRow {
            time: t,
            growth,
            lower_bound,
            exceeds_ceiling: exceeds,
        });
    }

    let orbit1 = linear_orbit(sys, d, p_time, &base1, horizon)?;
    let orbit2 = linear_orbit(sys, d, p_time, &base2, horizon)?;
    let oc1 = solve_correction_on_orbit(sys, d, cert, p_time, orbit1, policy)?;
    let oc2 = solve_correction_on_orbit(sys, d, cert, p_time, orbit2, policy)?;
    let image1 = oc1.conjugated(p_time);
    let image2 = oc2.conjugated(p_time);
    let image_separation = p.entry_sup_norm(&image1.sub(&image2));
    let image_tolerance = oc1.correction_error_bound(p_time)
        + oc2.correction_error_bound(p_time)
        + image1.tail_bound()
        + image2.tail_bound();

    Ok(InjectivityReport {
        base_time: p_time,
        base_separation,
        ceiling,
        rows,
        first_crossing,
        vacuous: false,
        image_separation,
        image_tolerance,
        images_distinct: image_separation > image_tolerance,
    })
}

/// Brute-force reference evaluation of the iterated fixed-point operator by
/// literal recursive expansion: no orbit sharing, every propagated point and
/// Green application recomputed from scratch. Cost grows like
/// `(horizon + 1)^depth`; refuses horizons above 8 and depths above 4.
pub fn dense_correction_oracle(
    sys: &SemilinearSystem,
    d: &DichotomyData,
    n: usize,
    phi: &History,
    depth: usize,
    horizon: usize,
) -> Result<History> {
    if horizon > 8 {
        return Err(Error::Domain(format!(
            "dense oracle horizon {horizon} exceeds the cap of 8"
        )));
    }
    if depth > 4 {
        return Err(Error::Domain(format!(
            "dense oracle depth {depth} exceeds the cap of 4"
        )));
    }
    dense_recursion(sys, d, n, phi, depth, horizon)
}

fn dense_recursion(
    sys: &SemilinearSystem,
    d: &DichotomyData,
    n: usize,
    phi: &History,
    depth: usize,
    horizon: usize,
) -> Result<History> {
    let p = &sys.phase;
    if depth == 0 {
        return Ok(p.zero_history());
    }
    let mut acc = p.zero_history();
    for m in 0..=horizon {
        let point = if m >= n {
            sys.evolve_linear(n, phi, m)?
        } else {
            d.backward_on_unstable(n, m, phi)?
        };
        let inner = dense_recursion(sys, d, m, &point, depth - 1, horizon)?;
        let value = match &sys.nonlinear {
            Some(nl) => nl.apply(m, &point.add(&inner)),
            None => DVector::zeros(p.state_dim()),
        };
        let term = d.green_apply(sys, n, m + 1, &p.impulse(&value))?;
        acc = acc.add(&term);
    }
    Ok(acc)
}
