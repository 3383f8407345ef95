//! Linear delay operators with finite taps and saturated Lipschitz
//! nonlinearities with tracked constants.
//!
//! The one-step linear map reads finitely many lags of the current segment,
//! `A_m phi = sum_j C_{m,j} phi(-j)`. The nonlinearity family is a saturated
//! affine read, `f_m(phi) = eps_m * shape(sum_k <w_k, phi(-d_k)>) * u`, which
//! satisfies `|f_m(phi) - f_m(psi)| <= c_m min(1, ||phi - psi||)` with the
//! analytically known constant `c_m = eps_m * sum_k |w_k| e^{beta d_k}`.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phase_space::{History, PhaseSpaceParams};
use crate::sampling;

/// How a per-time table of coefficients extends to all of `Z^+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeRule {
    /// One table entry, used at every time.
    Constant,
    /// Table of length `p`, indexed by `m mod p`.
    Periodic(usize),
    /// Table indexed by `m`, clamped to the last entry beyond the table.
    Tabulated,
}

impl TimeRule {
    pub(crate) fn index(&self, table_len: usize, m: usize) -> usize {
        match self {
            TimeRule::Constant => 0,
            TimeRule::Periodic(p) => m % p,
            TimeRule::Tabulated => m.min(table_len - 1),
        }
    }

    pub(crate) fn validate(&self, table_len: usize, what: &str) -> Result<()> {
        if table_len == 0 {
            return Err(Error::Config(format!("{what}: empty table")));
        }
        match self {
            TimeRule::Constant if table_len != 1 => Err(Error::Config(format!(
                "{what}: constant rule expects exactly one table entry, got {table_len}"
            ))),
            TimeRule::Periodic(p) if *p != table_len || *p == 0 => Err(Error::Config(format!(
                "{what}: periodic rule with period {p} expects {p} table entries, got {table_len}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Linear delay operator in finite tap form. `taps_by_time[t][j]` is the
/// matrix applied to the lag-`j` entry at (rule-resolved) time `t`.
#[derive(Debug, Clone)]
pub struct LinearTapSystem {
    taps_by_time: Vec<Vec<DMatrix<f64>>>,
    rule: TimeRule,
    state_dim: usize,
}

impl LinearTapSystem {
    pub fn new(taps_by_time: Vec<Vec<DMatrix<f64>>>, rule: TimeRule) -> Result<Self> {
        rule.validate(taps_by_time.len(), "linear taps")?;
        let first = taps_by_time
            .first()
            .and_then(|taps| taps.first())
            .ok_or_else(|| Error::Config("linear taps: empty tap list".into()))?;
        let state_dim = first.nrows();
        for taps in &taps_by_time {
            if taps.is_empty() {
                return Err(Error::Config("linear taps: empty tap list".into()));
            }
            for c in taps {
                if c.nrows() != state_dim || c.ncols() != state_dim {
                    return Err(Error::Config(format!(
                        "linear taps: expected {state_dim}x{state_dim} matrices"
                    )));
                }
                if c.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config("linear taps: non-finite entry".into()));
                }
            }
        }
        Ok(Self {
            taps_by_time,
            rule,
            state_dim,
        })
    }

    /// Time-invariant system from one tap list (lag 0 first).
    pub fn constant(taps: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::new(vec![taps], TimeRule::Constant)
    }

    /// Tapless system `x(m+1) = diag(multipliers) x(m)`.
    pub fn diagonal(multipliers: &[f64]) -> Result<Self> {
        if multipliers.is_empty() {
            return Err(Error::Config(
                "diagonal system: empty multiplier list".into(),
            ));
        }
        let dim = multipliers.len();
        let m = DMatrix::from_fn(dim, dim, |r, c| if r == c { multipliers[r] } else { 0.0 });
        Self::constant(vec![m])
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn rule(&self) -> TimeRule {
        self.rule
    }

    /// Largest lag read by any tap.
    pub fn max_lag(&self) -> usize {
        self.taps_by_time
            .iter()
            .map(|taps| taps.len() - 1)
            .max()
            .unwrap_or(0)
    }

    pub fn taps_at(&self, m: usize) -> &[DMatrix<f64>] {
        &self.taps_by_time[self.rule.index(self.taps_by_time.len(), m)]
    }

    /// `sum_j C_{m,j} h(-j)`.
    pub fn apply(&self, m: usize, h: &History) -> DVector<f64> {
        let taps = self.taps_at(m);
        debug_assert!(taps.len() <= h.entries().len(), "tap lag exceeds window");
        let mut out = DVector::zeros(self.state_dim);
        for (j, c) in taps.iter().enumerate() {
            out += c * h.entry(j);
        }
        out
    }

    /// Upper bound on the operator norm of the one-step read as a map from
    /// the weighted history space to the state space:
    /// `sum_j ||C_{m,j}||_F e^{beta j}` (Frobenius dominates spectral).
    pub fn op_norm_bound(&self, m: usize, beta: f64) -> f64 {
        self.taps_at(m)
            .iter()
            .enumerate()
            .map(|(j, c)| c.norm() * (beta * j as f64).exp())
            .sum()
    }
}

/// Built-in saturating shapes: bounded odd scalar functions, 1-Lipschitz,
/// vanishing at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `s -> tanh(2s)/2`: slope 1 at the origin, total swing 1.
    Saturation,
}

impl Shape {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Shape::Saturation => 0.5 * (2.0 * s).tanh(),
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match self {
            Shape::Saturation => 0.5,
        }
    }

    /// Total variation available to the shape (`2 sup|shape|`). The tracked
    /// Lipschitz constant formula is valid only when the affine read gain is
    /// at least this swing; see `SemilinearSystem::new`.
    pub fn swing(&self) -> f64 {
        2.0 * self.sup_abs()
    }
}

/// Saturated affine-read nonlinearity,
/// `f_m(phi) = eps_m * shape(sum_k <w_k, phi(-d_k)>) * direction`.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    amplitudes: Vec<f64>,
    rule: TimeRule,
    read_lags: Vec<usize>,
    weights: Vec<DVector<f64>>,
    shape: Shape,
    direction: DVector<f64>,
}

impl Nonlinearity {
    pub fn new(
        amplitudes: Vec<f64>,
        rule: TimeRule,
        read_lags: Vec<usize>,
        weights: Vec<DVector<f64>>,
        shape: Shape,
        direction: DVector<f64>,
    ) -> Result<Self> {
        rule.validate(amplitudes.len(), "nonlinearity amplitudes")?;
        if amplitudes.iter().any(|&e| !e.is_finite() || e < 0.0) {
            return Err(Error::Config(
                "nonlinearity amplitudes must be finite and nonnegative".into(),
            ));
        }
        if read_lags.len() != weights.len() || read_lags.is_empty() {
            return Err(Error::Config(
                "nonlinearity read lags and weights must be nonempty and match".into(),
            ));
        }
        let dim = direction.len();
        if weights.iter().any(|w| w.len() != dim) {
            return Err(Error::Config(
                "nonlinearity weight dimension mismatch".into(),
            ));
        }
        let dn = direction.norm();
        if dn == 0.0 || !dn.is_finite() {
            return Err(Error::Config(
                "nonlinearity direction must be nonzero".into(),
            ));
        }
        Ok(Self {
            amplitudes,
            rule,
            read_lags,
            weights,
            shape,
            direction: direction / dn,
        })
    }

    pub fn amplitude(&self, m: usize) -> f64 {
        self.amplitudes[self.rule.index(self.amplitudes.len(), m)]
    }

    pub fn rule(&self) -> TimeRule {
        self.rule
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn max_lag(&self) -> usize {
        self.read_lags.iter().copied().max().unwrap_or(0)
    }

    pub fn state_dim(&self) -> usize {
        self.direction.len()
    }

    pub fn apply(&self, m: usize, h: &History) -> DVector<f64> {
        let mut s = 0.0;
        for (lag, w) in self.read_lags.iter().zip(&self.weights) {
            s += w.dot(h.entry(*lag));
        }
        &self.direction * (self.amplitude(m) * self.shape.eval(s))
    }

    /// Gain of the affine read in the weighted norm:
    /// `sum_k |w_k| e^{beta d_k}` (a lag-`d` read is `e^{beta d}`-Lipschitz).
    pub fn read_gain(&self, beta: f64) -> f64 {
        self.read_lags
            .iter()
            .zip(&self.weights)
            .map(|(lag, w)| w.norm() * (beta * *lag as f64).exp())
            .sum()
    }

    /// Tracked Lipschitz constant `c_m = eps_m * read_gain`.
    pub fn lipschitz_constant(&self, m: usize, beta: f64) -> f64 {
        self.amplitude(m) * self.read_gain(beta)
    }

    /// The full table of Lipschitz constants with its time rule.
    pub fn lipschitz_values(&self, beta: f64) -> (Vec<f64>, TimeRule) {
        let gain = self.read_gain(beta);
        (
            self.amplitudes.iter().map(|e| e * gain).collect(),
            self.rule,
        )
    }
}

/// Certified Lipschitz data for a nonlinearity: the analytic constants plus
/// the sharpest ratio observed by a randomized probe of the defining
/// inequality.
#[derive(Debug, Clone)]
pub struct LipschitzCertificate {
    pub constants: Vec<f64>,
    pub rule: TimeRule,
    /// Max over sampled pairs of `|f(phi)-f(psi)| / (c_m min(1, ||phi-psi||))`.
    pub max_ratio: f64,
    pub samples: usize,
}

/// Computes `c_m` analytically and probes the Lipschitz inequality on random
/// history pairs, including pairs separated by more than 1 so the saturated
/// branch is exercised. A violation means the configured shape breaks its
/// declared bounds.
pub fn lipschitz_certificate(
    nl: &Nonlinearity,
    p: &PhaseSpaceParams,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LipschitzCertificate> {
    let (constants, rule) = nl.lipschitz_values(p.beta());
    let support = (nl.max_lag() + 1).min(p.trunc_len());
    let mut max_ratio: f64 = 0.0;
    for i in 0..samples {
        // Alternate between nearby pairs and widely separated pairs.
        let amp = if i % 2 == 0 { 0.4 } else { 40.0 };
        let a = sampling::random_history(rng, p, support, amp);
        let b = sampling::random_history(rng, p, support, amp);
        let dist = p.norm_beta(&a.sub(&b));
        let m = sampling::range_usize(rng, 0, constants.len().saturating_sub(1) + 4);
        let c = constants[rule.index(constants.len(), m)];
        let df = (nl.apply(m, &a) - nl.apply(m, &b)).norm();
        let bound = c * dist.min(1.0);
        if bound == 0.0 {
            if df > 1e-14 {
                return Err(Error::Consistency(format!(
                    "nonlinearity varies where its Lipschitz constant is zero (|df| = {df})"
                )));
            }
            continue;
        }
        let ratio = df / bound;
        if ratio > 1.0 + 1e-9 {
            return Err(Error::Consistency(format!(
                "Lipschitz probe violation: ratio {ratio} > 1 (shape out of contract)"
            )));
        }
        max_ratio = max_ratio.max(ratio);
    }
    Ok(LipschitzCertificate {
        constants,
        rule,
        max_ratio,
        samples,
    })
}

/// Linear taps plus an optional saturated nonlinearity over one history
/// space. `None` nonlinearity is the identically zero perturbation.
#[derive(Debug, Clone)]
pub struct SemilinearSystem {
    pub linear: LinearTapSystem,
    pub nonlinear: Option<Nonlinearity>,
    pub phase: PhaseSpaceParams,
}

impl SemilinearSystem {
    pub fn new(
        linear: LinearTapSystem,
        nonlinear: Option<Nonlinearity>,
        phase: PhaseSpaceParams,
    ) -> Result<Self> {
        if linear.state_dim() != phase.state_dim() {
            return Err(Error::Config(format!(
                "linear system dimension {} != phase dimension {}",
                linear.state_dim(),
                phase.state_dim()
            )));
        }
        if linear.max_lag() >= phase.trunc_len() {
            return Err(Error::Config(format!(
                "tap lag {} exceeds stored history length {}",
                linear.max_lag(),
                phase.trunc_len()
            )));
        }
        if let Some(nl) = &nonlinear {
            if nl.state_dim() != phase.state_dim() {
                return Err(Error::Config("nonlinearity dimension mismatch".into()));
            }
            if nl.max_lag() >= phase.trunc_len() {
                return Err(Error::Config(format!(
                    "nonlinearity read lag {} exceeds stored history length {}",
                    nl.max_lag(),
                    phase.trunc_len()
                )));
            }
            // The tracked constant c_m = eps_m * read_gain dominates the
            // saturated branch only when the read gain covers the shape's
            // swing; smaller gains would make the certificate unsound.
            let gain = nl.read_gain(phase.beta());
            if gain < nl.shape().swing() - 1e-12 {
                return Err(Error::Config(format!(
                    "nonlinearity read gain {gain} is below the shape swing {}; \
                     scale the weights up so the tracked Lipschitz constant is valid",
                    nl.shape().swing()
                )));
            }
        }
        Ok(Self {
            linear,
            nonlinear,
            phase,
        })
    }

    pub fn linear_only(linear: LinearTapSystem, phase: PhaseSpaceParams) -> Result<Self> {
        Self::new(linear, None, phase)
    }

    pub fn step_linear(&self, m: usize, h: &History) -> DVector<f64> {
        self.linear.apply(m, h)
    }

    /// One step of the semilinear recursion: `A_m h + f_m(h)`.
    pub fn step(&self, m: usize, h: &History) -> DVector<f64> {
        let mut v = self.linear.apply(m, h);
        if let Some(nl) = &self.nonlinear {
            v += nl.apply(m, h);
        }
        v
    }

    /// Lipschitz constants of the perturbation (all zero when absent).
    pub fn lipschitz_values(&self) -> (Vec<f64>, TimeRule) {
        match &self.nonlinear {
            Some(nl) => nl.lipschitz_values(self.phase.beta()),
            None => (vec![0.0], TimeRule::Constant),
        }
    }

    pub fn lipschitz_sup(&self) -> f64 {
        let (values, _) = self.lipschitz_values();
        values.iter().copied().fold(0.0, f64::max)
    }

    /// Lipschitz bound for one step of the semilinear flow on the weighted
    /// space: `max(||A_m|| + c_m, e^{-beta})` (new entry vs shifted window).
    pub fn one_step_lipschitz(&self, m: usize) -> f64 {
        let beta = self.phase.beta();
        let c = self
            .nonlinear
            .as_ref()
            .map_or(0.0, |nl| nl.lipschitz_constant(m, beta));
        (self.linear.op_norm_bound(m, beta) + c).max((-beta).exp())
    }

    /// Lipschitz bound for the flow from time `n` to time `m >= n`.
    pub fn flow_lipschitz(&self, n: usize, m: usize) -> f64 {
        (n..m).map(|k| self.one_step_lipschitz(k)).product()
    }
}
