//! Weighted history space for delay difference equations.
//!
//! A history is a map `Z^- -> X` stored as a finite window of `L` vectors
//! (lag 0 is the most recent value) together with a scalar `tail_bound`
//! dominating the weighted sup of everything older than the window. All
//! norms computed here are upper bounds on the true weighted sup norm
//! `sup_j |phi(j)| e^{beta j}`, exact whenever the tail bound is exact.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Parameters of the weighted history space: weight exponent `beta`, state
/// dimension, and stored window length.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceParams {
    beta: f64,
    state_dim: usize,
    trunc_len: usize,
}

/// Constants `(J, K(n), M(n))` of the fading-memory inequality
/// `J |x(n)| <= ||x_n|| <= K(n) sup_{0<=j<=n} |x(j)| + M(n) ||x_0||`
/// satisfied by the weighted space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxiomConstants {
    pub j: f64,
    pub k: f64,
    pub m: f64,
}

/// Outcome of checking the fading-memory inequality on one trajectory.
#[derive(Debug, Clone)]
pub struct AxiomProbe {
    pub segment_norm: f64,
    /// `||x_n|| - J |x(n)|`; nonnegative when the lower inequality holds.
    pub lower_slack: f64,
    /// `K(n) sup |x(j)| + M(n) ||x_0|| - ||x_n||`; nonnegative when the
    /// upper inequality holds.
    pub upper_slack: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

impl AxiomProbe {
    pub fn holds(&self) -> bool {
        self.lower_holds && self.upper_holds
    }
}

impl PhaseSpaceParams {
    /// Default construction: requires `beta > 0` so that lag weights decay
    /// and truncation tails are geometrically suppressed.
    pub fn new(beta: f64, state_dim: usize, trunc_len: usize) -> Result<Self> {
        if beta.is_nan() || beta <= 0.0 {
            return Err(Error::Config(format!(
                "beta must be > 0 (got {beta}); use with_any_beta to override"
            )));
        }
        Self::with_any_beta(beta, state_dim, trunc_len)
    }

    /// Explicit override allowing `beta <= 0`. Weights then grow with lag
    /// and window truncation is no longer certifiable; intended for probing
    /// the constant formulas only.
    pub fn with_any_beta(beta: f64, state_dim: usize, trunc_len: usize) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::Config(format!("beta must be finite (got {beta})")));
        }
        if state_dim == 0 {
            return Err(Error::Config("state_dim must be >= 1".into()));
        }
        if trunc_len == 0 {
            return Err(Error::Config("trunc_len must be >= 1".into()));
        }
        Ok(Self {
            beta,
            state_dim,
            trunc_len,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn trunc_len(&self) -> usize {
        self.trunc_len
    }

    /// Weight `e^{-beta k}` attached to lag `k`.
    pub fn weight(&self, lag: usize) -> f64 {
        (-self.beta * lag as f64).exp()
    }

    pub fn zero_history(&self) -> History {
        History {
            entries: vec![DVector::zeros(self.state_dim); self.trunc_len],
            tail_bound: 0.0,
        }
    }

    /// Builds a history from explicit window entries (lag 0 first) and a
    /// tail bound, validating dimensions.
    pub fn history(&self, entries: Vec<DVector<f64>>, tail_bound: f64) -> Result<History> {
        if entries.len() != self.trunc_len {
            return Err(Error::Config(format!(
                "history window has {} entries, expected {}",
                entries.len(),
                self.trunc_len
            )));
        }
        if entries.iter().any(|v| v.len() != self.state_dim) {
            return Err(Error::Config("history entry dimension mismatch".into()));
        }
        if !tail_bound.is_finite() || tail_bound < 0.0 {
            return Err(Error::Config(format!(
                "tail_bound must be finite and nonnegative (got {tail_bound})"
            )));
        }
        Ok(History {
            entries,
            tail_bound,
        })
    }

    /// History with `v` at lag zero and an identically zero past: the unit
    /// impulse that variation-of-constants sums propagate.
    pub fn impulse(&self, v: &DVector<f64>) -> History {
        self.check_vector(v);
        let mut entries = vec![DVector::zeros(self.state_dim); self.trunc_len];
        entries[0] = v.clone();
        History {
            entries,
            tail_bound: 0.0,
        }
    }

    /// Weighted sup norm `max(max_k |entries[k]| e^{-beta k}, tail_bound)`.
    pub fn norm_beta(&self, h: &History) -> f64 {
        self.check_history_internal(h);
        self.entry_sup_norm(h).max(h.tail_bound)
    }

    /// Weighted sup over the stored window only, ignoring the tail bound.
    /// Used for residuals whose tail uncertainty is budgeted separately.
    pub fn entry_sup_norm(&self, h: &History) -> f64 {
        self.check_history_internal(h);
        h.entries
            .iter()
            .enumerate()
            .map(|(k, v)| v.norm() * self.weight(k))
            .fold(0.0, f64::max)
    }

    /// Advances a segment one step: the new value `v` enters at lag 0, the
    /// window shifts back, and the entry falling off the window is folded
    /// into the tail bound so the norm stays an upper bound.
    pub fn shift_append(&self, h: &History, v: &DVector<f64>) -> History {
        self.check_history_internal(h);
        self.check_vector(v);
        let len = self.trunc_len;
        let dropped = h.entries[len - 1].norm() * self.weight(len);
        let tail_bound = (h.tail_bound * (-self.beta).exp()).max(dropped);
        let mut entries = Vec::with_capacity(len);
        entries.push(v.clone());
        entries.extend_from_slice(&h.entries[..len - 1]);
        History {
            entries,
            tail_bound,
        }
    }

    /// Fading-memory constants of this space: `J = 1`, `M(n) = e^{-beta n}`,
    /// and `K(n) = 1` for `beta >= 0` (`e^{-beta n}` for `beta < 0`).
    pub fn axiom_constants(&self, n: usize) -> AxiomConstants {
        let decay = (-self.beta * n as f64).exp();
        AxiomConstants {
            j: 1.0,
            k: if self.beta >= 0.0 { 1.0 } else { decay },
            m: decay,
        }
    }

    /// Checks both fading-memory inequalities on the trajectory that starts
    /// from segment `start` (time 0) and takes the values `later_values`
    /// at times `1..=n`. Slack is measured against the computed norms.
    pub fn axiom_probe(&self, start: &History, later_values: &[DVector<f64>]) -> AxiomProbe {
        let n = later_values.len();
        let mut segment = start.clone();
        let mut sup_values = start.entries[0].norm();
        for v in later_values {
            segment = self.shift_append(&segment, v);
            sup_values = sup_values.max(v.norm());
        }
        let consts = self.axiom_constants(n);
        let segment_norm = self.norm_beta(&segment);
        let latest = segment.entries[0].norm();
        let lower_slack = segment_norm - consts.j * latest;
        let upper_slack = consts.k * sup_values + consts.m * self.norm_beta(start) - segment_norm;
        let float_slack = 1e-12 * (1.0 + segment_norm);
        AxiomProbe {
            segment_norm,
            lower_slack,
            upper_slack,
            lower_holds: lower_slack >= -float_slack,
            upper_holds: upper_slack >= -float_slack,
        }
    }

    /// Validates a history against these parameters, reporting a
    /// configuration error on mismatch. Construction through this type keeps
    /// values consistent; this is the boundary check for external data.
    pub fn check_history(&self, h: &History) -> Result<()> {
        if h.entries.len() != self.trunc_len {
            return Err(Error::Config(format!(
                "history window has {} entries, expected {}",
                h.entries.len(),
                self.trunc_len
            )));
        }
        if h.entries.iter().any(|v| v.len() != self.state_dim) {
            return Err(Error::Config("history entry dimension mismatch".into()));
        }
        Ok(())
    }

    fn check_history_internal(&self, h: &History) {
        debug_assert_eq!(h.entries.len(), self.trunc_len, "history window length");
        debug_assert!(
            h.entries.iter().all(|v| v.len() == self.state_dim),
            "history entry dimension"
        );
    }

    fn check_vector(&self, v: &DVector<f64>) {
        debug_assert_eq!(v.len(), self.state_dim, "state vector dimension");
    }
}

/// A truncated element of the weighted history space: `entries[k]` holds the
/// value at lag `k` and `tail_bound` dominates the weighted sup of the
/// forgotten past.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    entries: Vec<DVector<f64>>,
    tail_bound: f64,
}

impl History {
    pub fn entries(&self) -> &[DVector<f64>] {
        &self.entries
    }

    pub fn entry(&self, lag: usize) -> &DVector<f64> {
        &self.entries[lag]
    }

    /// The value at lag zero (the current state).
    pub fn latest(&self) -> &DVector<f64> {
        &self.entries[0]
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn add(&self, other: &History) -> History {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &History) -> History {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> History {
        History {
            entries: self.entries.iter().map(|v| v * factor).collect(),
            tail_bound: self.tail_bound * factor.abs(),
        }
    }

    fn zip(
        &self,
        other: &History,
        op: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    ) -> History {
        assert_eq!(self.entries.len(), other.entries.len(), "window length");
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| op(a, b))
            .collect();
        History {
            entries,
            // Sound for both sum and difference of the underlying sequences.
            tail_bound: self.tail_bound + other.tail_bound,
        }
    }
}
