//! Shared random-instance generators for the integration suites.

use delin::delay_system::{LinearTapSystem, Nonlinearity, SemilinearSystem, Shape, TimeRule};
use delin::dichotomy::{contraction_certificate, ContractionCertificate, DichotomyData};
use delin::phase_space::{History, PhaseSpaceParams};
use delin::sampling;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..=hi)
}

fn random_rule(rng: &mut ChaCha8Rng, table_len_cap: usize) -> (TimeRule, usize) {
    match rng.random_range(0..3u8) {
        0 => (TimeRule::Constant, 1),
        1 => {
            let p = rng.random_range(2..=table_len_cap.max(2));
            (TimeRule::Periodic(p), p)
        }
        _ => {
            let len = rng.random_range(2..=table_len_cap.max(2));
            (TimeRule::Tabulated, len)
        }
    }
}

/// Random small tap system with operator norm kept below 1 so horizons of a
/// few dozen steps stay at unit scale.
pub fn random_tap_linear(rng: &mut ChaCha8Rng, dim: usize) -> LinearTapSystem {
    let lags = rng.random_range(1..=3usize);
    let (rule, tables) = random_rule(rng, 4);
    let amp = 0.5 / (lags as f64 * (dim as f64).sqrt());
    let taps_by_time: Vec<Vec<DMatrix<f64>>> = (0..tables)
        .map(|_| {
            (0..lags)
                .map(|_| DMatrix::from_fn(dim, dim, |_, _| uniform(rng, -amp, amp)))
                .collect()
        })
        .collect();
    LinearTapSystem::new(taps_by_time, rule).unwrap()
}

/// Random saturated nonlinearity whose read gain lands in `[1, 2.5]`, so the
/// tracked Lipschitz constants are valid.
pub fn random_nonlinearity(
    rng: &mut ChaCha8Rng,
    dim: usize,
    beta: f64,
    eps_lo: f64,
    eps_hi: f64,
) -> Nonlinearity {
    let n_lags = rng.random_range(1..=2usize);
    let lags: Vec<usize> = (0..n_lags).map(|_| rng.random_range(0..=3usize)).collect();
    let mut weights: Vec<DVector<f64>> = (0..n_lags)
        .map(|_| sampling::random_unit_vector(rng, dim))
        .collect();
    let raw_gain: f64 = lags
        .iter()
        .zip(&weights)
        .map(|(d, w)| w.norm() * (beta * *d as f64).exp())
        .sum();
    let target = uniform(rng, 1.0, 2.5);
    for w in &mut weights {
        *w *= target / raw_gain;
    }
    let (rule, tables) = random_rule(rng, 4);
    let epsilon: Vec<f64> = (0..tables).map(|_| uniform(rng, eps_lo, eps_hi)).collect();
    let direction = sampling::random_unit_vector(rng, dim);
    Nonlinearity::new(epsilon, rule, lags, weights, Shape::Saturation, direction).unwrap()
}

/// Random forced-equation instance: system, initial segment, forcing, and a
/// horizon of at most 15 steps.
pub fn random_forced_instance(
    rng: &mut ChaCha8Rng,
) -> (SemilinearSystem, History, Vec<DVector<f64>>, usize) {
    let dim = rng.random_range(1..=3usize);
    let beta = uniform(rng, 0.05, 0.4);
    let phase = PhaseSpaceParams::new(beta, dim, 40).unwrap();
    let linear = random_tap_linear(rng, dim);
    let sys = SemilinearSystem::linear_only(linear, phase).unwrap();
    let phi = sampling::random_history(rng, &sys.phase, 4, 1.0);
    let horizon = rng.random_range(1..=15usize);
    let forcing: Vec<DVector<f64>> = (0..horizon)
        .map(|_| sampling::random_vector(rng, dim, 1.0))
        .collect();
    (sys, phi, forcing, horizon)
}

/// Random semilinear instance with a saturated perturbation (sometimes
/// absent) and times `n <= m <= 15`.
pub fn random_semilinear_instance(
    rng: &mut ChaCha8Rng,
) -> (SemilinearSystem, History, usize, usize) {
    let dim = rng.random_range(1..=3usize);
    let beta = uniform(rng, 0.05, 0.4);
    let phase = PhaseSpaceParams::new(beta, dim, 40).unwrap();
    let linear = random_tap_linear(rng, dim);
    let nonlinear = if rng.random_range(0..5u8) > 0 {
        Some(random_nonlinearity(rng, dim, beta, 0.05, 0.3))
    } else {
        None
    };
    let sys = SemilinearSystem::new(linear, nonlinear, phase).unwrap();
    let phi = sampling::random_history(rng, &sys.phase, 4, 1.0);
    let m = rng.random_range(1..=15usize);
    let n = rng.random_range(0..=m);
    (sys, phi, n, m)
}

/// A certified diagonal instance for conjugacy runs.
pub struct CertifiedInstance {
    pub sys: SemilinearSystem,
    pub dichotomy: DichotomyData,
    pub certificate: ContractionCertificate,
    pub base_time: usize,
    pub eval_horizon: usize,
    pub orbit_horizon: usize,
    pub generator: DVector<f64>,
}

/// Builds a diagonal system plus saturated perturbation whose contraction
/// product lands near `rho_target` (default range keeps it at or below 0.5),
/// with the orbit horizon padded so the discarded operator tail at the
/// evaluation window is below 1e-10.
pub fn certified_diagonal_instance(
    rng: &mut ChaCha8Rng,
    with_nonlinearity: bool,
) -> CertifiedInstance {
    let (n_stable, n_unstable) = match rng.random_range(0..3u8) {
        0 => (1usize, 1usize),
        1 => (2, 1),
        _ => (1, 2),
    };
    let dim = n_stable + n_unstable;
    let beta = uniform(rng, 0.25, 0.5);
    let phase = PhaseSpaceParams::new(beta, dim, 64).unwrap();

    let sign = |rng: &mut ChaCha8Rng| {
        if rng.random_range(0..4u8) == 0 {
            -1.0
        } else {
            1.0
        }
    };
    let stable: Vec<f64> = (0..n_stable)
        .map(|_| sign(rng) * uniform(rng, 0.3, 0.7))
        .collect();
    let unstable: Vec<f64> = (0..n_unstable)
        .map(|_| sign(rng) * uniform(rng, 1.15, 1.3))
        .collect();

    let mut multipliers = stable.clone();
    multipliers.extend_from_slice(&unstable);
    let linear = LinearTapSystem::diagonal(&multipliers).unwrap();
    let dichotomy = DichotomyData::diagonal(&stable, &unstable, phase.clone()).unwrap();
    let (coeff, rate) = dichotomy.constants();
    let decay = (-rate).exp();
    let envelope = coeff * (1.0 + decay) / (1.0 - decay);

    let nonlinear = if with_nonlinearity {
        let rho_target = uniform(rng, 0.25, 0.45);
        let nl = random_constant_nonlinearity(rng, dim, beta, rho_target / envelope);
        Some(nl)
    } else {
        None
    };
    let sys = SemilinearSystem::new(linear, nonlinear, phase).unwrap();
    let certificate = contraction_certificate(&sys, &dichotomy, 300).unwrap();
    assert!(
        certificate.satisfied,
        "generator must produce certified instances"
    );
    assert!(certificate.product <= 0.5 + 1e-9);

    let base_time = rng.random_range(0..=6usize);
    let eval_horizon = 40;
    let (mu, tcoeff) = delin::conjugacy::truncation_decay(&sys, &dichotomy, certificate.product);
    let pad = if tcoeff <= 0.0 || mu <= 0.0 {
        0
    } else {
        ((tcoeff / 1e-10).ln() / mu).ceil().max(0.0) as usize
    };
    let orbit_horizon = eval_horizon + pad;

    let mut generator = DVector::zeros(dim);
    for i in n_stable..dim {
        generator[i] = sign(rng) * uniform(rng, 0.3, 1.0);
    }

    CertifiedInstance {
        sys,
        dichotomy,
        certificate,
        base_time,
        eval_horizon,
        orbit_horizon,
        generator,
    }
}

/// Constant-rule nonlinearity with the amplitude chosen so the tracked
/// Lipschitz constant is exactly `c_target`.
pub fn random_constant_nonlinearity(
    rng: &mut ChaCha8Rng,
    dim: usize,
    beta: f64,
    c_target: f64,
) -> Nonlinearity {
    let n_lags = rng.random_range(1..=2usize);
    let lags: Vec<usize> = (0..n_lags).map(|_| rng.random_range(0..=3usize)).collect();
    let mut weights: Vec<DVector<f64>> = (0..n_lags)
        .map(|_| sampling::random_unit_vector(rng, dim))
        .collect();
    let raw_gain: f64 = lags
        .iter()
        .zip(&weights)
        .map(|(d, w)| w.norm() * (beta * *d as f64).exp())
        .sum();
    let target_gain = uniform(rng, 1.0, 2.0);
    for w in &mut weights {
        *w *= target_gain / raw_gain;
    }
    let epsilon = c_target / target_gain;
    let direction = sampling::random_unit_vector(rng, dim);
    Nonlinearity::new(
        vec![epsilon],
        TimeRule::Constant,
        lags,
        weights,
        Shape::Saturation,
        direction,
    )
    .unwrap()
}
