//! TOML experiment configuration and its translation into runtime objects.
//!
//! Unknown keys anywhere in the file are errors: configs fail fast rather
//! than silently ignoring typos.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::delay_system::{LinearTapSystem, Nonlinearity, SemilinearSystem, Shape, TimeRule};
use crate::dichotomy::{Corruption, DichotomyData, TabulatedProjections};
use crate::error::{Error, Result};
use crate::phase_space::PhaseSpaceParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub phase: PhaseSection,
    pub system: SystemSection,
    #[serde(default)]
    pub nonlinearity: Option<NonlinearitySection>,
    #[serde(default)]
    pub dichotomy: Option<DichotomySection>,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub beta: f64,
    pub dim: usize,
    pub history_len: usize,
    #[serde(default)]
    pub allow_nonpositive_beta: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase", tag = "kind")]
pub enum SystemSection {
    /// Tapless diagonal system split into stable/unstable multipliers.
    Diagonal {
        stable: Vec<f64>,
        unstable: Vec<f64>,
    },
    /// Explicit tap matrices: `taps[time][lag]` is a row-major matrix.
    Taps {
        rule: RuleSection,
        taps: Vec<Vec<Vec<Vec<f64>>>>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase", tag = "name")]
pub enum RuleSection {
    Constant,
    Periodic { period: usize },
    Tabulated,
}

impl RuleSection {
    fn to_rule(self) -> TimeRule {
        match self {
            RuleSection::Constant => TimeRule::Constant,
            RuleSection::Periodic { period } => TimeRule::Periodic(period),
            RuleSection::Tabulated => TimeRule::Tabulated,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySection {
    pub epsilon: Vec<f64>,
    pub rule: RuleSection,
    pub lags: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub direction: Vec<f64>,
    #[serde(default = "default_shape")]
    pub shape: String,
}

fn default_shape() -> String {
    "saturation".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase", tag = "kind")]
pub enum DichotomySection {
    /// Built from the diagonal system splitting.
    Diagonal {
        #[serde(default)]
        corrupt: CorruptSection,
    },
    /// User-supplied projection matrices on the flattened window
    /// (`flat[lag * dim + coord]`), with declared decay constants.
    Tabulated {
        declared_d: f64,
        declared_lambda: f64,
        #[serde(default)]
        tail_gain: f64,
        rule: RuleSection,
        projections: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        corrupt: CorruptSection,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptSection {
    #[default]
    None,
    AlternatingIdentity,
}

impl CorruptSection {
    fn to_corruption(self) -> Corruption {
        match self {
            CorruptSection::None => Corruption::None,
            CorruptSection::AlternatingIdentity => Corruption::AlternatingIdentity,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub base_time: usize,
    #[serde(default = "default_sum_horizon")]
    pub sum_horizon: usize,
    #[serde(default = "default_orbit_horizon")]
    pub orbit_horizon: usize,
    #[serde(default = "default_eval_horizon")]
    pub eval_horizon: usize,
    #[serde(default = "default_eval_stride")]
    pub eval_stride: usize,
    #[serde(default = "default_picard_target")]
    pub picard_target: f64,
    #[serde(default)]
    pub picard_iters: Option<usize>,
    #[serde(default = "default_support_len")]
    pub support_len: usize,
    #[serde(default = "default_max_orbit_norm")]
    pub max_orbit_norm: f64,
    #[serde(default = "default_sim_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub generators: Vec<Vec<f64>>,
}

fn default_samples() -> usize {
    100
}
fn default_sum_horizon() -> usize {
    200
}
fn default_orbit_horizon() -> usize {
    80
}
fn default_eval_horizon() -> usize {
    20
}
fn default_eval_stride() -> usize {
    4
}
fn default_picard_target() -> f64 {
    1e-8
}
fn default_support_len() -> usize {
    6
}
fn default_max_orbit_norm() -> f64 {
    1e15
}
fn default_sim_horizon() -> usize {
    40
}

impl Default for ExperimentSection {
    fn default() -> Self {
        toml::from_str("").expect("empty experiment section has defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Epsilon,
    Beta,
    Horizon,
}

/// Runtime objects built from a validated config.
pub struct BuiltExperiment {
    pub system: SemilinearSystem,
    pub dichotomy: Option<DichotomyData>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn phase_params(&self) -> Result<PhaseSpaceParams> {
        if self.phase.allow_nonpositive_beta {
            PhaseSpaceParams::with_any_beta(self.phase.beta, self.phase.dim, self.phase.history_len)
        } else {
            PhaseSpaceParams::new(self.phase.beta, self.phase.dim, self.phase.history_len)
        }
    }

    /// Builds the system and (when configured) the dichotomy data.
    pub fn build(&self) -> Result<BuiltExperiment> {
        let phase = self.phase_params()?;

        let linear = match &self.system {
            SystemSection::Diagonal { stable, unstable } => {
                let mut multipliers = stable.clone();
                multipliers.extend_from_slice(unstable);
                LinearTapSystem::diagonal(&multipliers)?
            }
            SystemSection::Taps { rule, taps } => {
                let dim = self.phase.dim;
                let tables: Vec<Vec<DMatrix<f64>>> = taps
                    .iter()
                    .map(|per_time| {
                        per_time
                            .iter()
                            .map(|rows| matrix_from_rows(rows, dim))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                LinearTapSystem::new(tables, rule.to_rule())?
            }
        };

        let nonlinear = match &self.nonlinearity {
            None => None,
            Some(section) => {
                if section.shape != "saturation" {
                    return Err(Error::Config(format!(
                        "unknown shape '{}' (built-in: saturation)",
                        section.shape
                    )));
                }
                let weights = section
                    .weights
                    .iter()
                    .map(|w| DVector::from_vec(w.clone()))
                    .collect();
                Some(Nonlinearity::new(
                    section.epsilon.clone(),
                    section.rule.to_rule(),
                    section.lags.clone(),
                    weights,
                    Shape::Saturation,
                    DVector::from_vec(section.direction.clone()),
                )?)
            }
        };

        let system = SemilinearSystem::new(linear, nonlinear, phase.clone())?;

        let dichotomy = match &self.dichotomy {
            None => None,
            Some(DichotomySection::Diagonal { corrupt }) => {
                let SystemSection::Diagonal { stable, unstable } = &self.system else {
                    return Err(Error::Config(
                        "diagonal dichotomy data requires a diagonal system".into(),
                    ));
                };
                Some(
                    DichotomyData::diagonal(stable, unstable, phase.clone())?
                        .with_corruption(corrupt.to_corruption()),
                )
            }
            Some(DichotomySection::Tabulated {
                declared_d,
                declared_lambda,
                tail_gain,
                rule,
                projections,
                corrupt,
            }) => {
                let flat = phase.trunc_len() * phase.state_dim();
                let matrices = projections
                    .iter()
                    .map(|rows| matrix_from_rows(rows, flat))
                    .collect::<Result<Vec<_>>>()?;
                let proj = TabulatedProjections::new(matrices, rule.to_rule(), *tail_gain)?;
                Some(
                    DichotomyData::tabulated(proj, *declared_d, *declared_lambda, phase.clone())?
                        .with_corruption(corrupt.to_corruption()),
                )
            }
        };

        Ok(BuiltExperiment { system, dichotomy })
    }

    /// Base points for conjugacy runs: configured generators, or a default
    /// pair aligned with the last coordinate when none are given.
    pub fn generator_vectors(&self) -> Vec<DVector<f64>> {
        if self.experiment.generators.is_empty() {
            let dim = self.phase.dim;
            let mut g1 = DVector::zeros(dim);
            g1[dim - 1] = 1.0;
            let g2 = &g1 * -0.5;
            vec![g1, g2]
        } else {
            self.experiment
                .generators
                .iter()
                .map(|g| DVector::from_vec(g.clone()))
                .collect()
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], expected: usize) -> Result<DMatrix<f64>> {
    if rows.len() != expected || rows.iter().any(|r| r.len() != expected) {
        return Err(Error::Config(format!(
            "matrix must be {expected}x{expected} (got {} rows)",
            rows.len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(expected, expected, &flat))
}
