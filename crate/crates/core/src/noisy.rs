//! One-step noisy model: `x = B u + z + sigma * xi` with `x_0 = 0`.
//!
//! The minimal-norm regression of `u` on `x` splits into a component
//! `P_1` supported on the linearizing subspace and a leakage term `P_2`
//! in the complement, with `||P_2||_2` bounded by
//! `sigma * rho / (2 sqrt(1 - rho^2)) * ||B^+||_2 * ||P_1||_2`
//! where `rho` is the canonical correlation of `(u, z)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{empirical_cca, DiagnosticsError};
use crate::model::HiddenSubspaceSystem;
use crate::numerics::{min_norm_lstsq, pinv, spectral_norm, DEFAULT_RANK_TOL};
use crate::rng::{gaussian_matrix, stream};
use crate::simulator::RealizedDistractor;

const TAG_NOISY: u64 = 5;

/// One-step noisy sample: observations, controls, and the distractor
/// component, each with `n` columns.
#[derive(Debug, Clone)]
pub struct NoisySample {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

/// Draw `n` one-step samples: `u ~ N(0, I)`, `x = B u + z + sigma * xi`
/// with `xi ~ N(0, I)` independent of both, and the initial state fixed
/// at zero (so the latent after one step is `B_bar u`).
pub fn sample_noisy_one_step(
    system: &HiddenSubspaceSystem,
    n: usize,
    sigma: f64,
    seed: u64,
) -> NoisySample {
    assert!(sigma >= 0.0);
    let realized = RealizedDistractor::for_system(system);
    let (_, b) = system.derive_lifted();
    let mut rng = stream(seed, &[TAG_NOISY]);
    let u = gaussian_matrix(system.l, n, &mut rng);
    // Latent after one step from h_0 = 0.
    let h1 = &system.b_bar * &u;
    let g = realized.eval(system.d - system.r, &h1, &mut rng);
    let z = &system.v_perp * g;
    let mut x = &b * &u + &z;
    if sigma > 0.0 {
        x += gaussian_matrix(system.d, n, &mut rng) * sigma;
    }
    NoisySample { x, u, z }
}

/// Minimal-norm least-squares minimizer of `||P X - U||_F`, solved on the
/// transposed system. Warns (via the return flag) when `n <= d`, where
/// the regression is underdetermined.
pub fn fit_noisy(x: &DMatrix<f64>, u: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let underdetermined = x.ncols() <= x.nrows();
    let p_t = min_norm_lstsq(&x.transpose(), &u.transpose()).solution;
    (p_t.transpose(), underdetermined)
}

/// A fitted `P` split across the subspace and its complement, with the
/// theorem's bound evaluated from the empirical `rho`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisySplit {
    pub p: DMatrix<f64>,
    /// Rows projected onto `V`: `P_1 = P V V^T`.
    pub p1: DMatrix<f64>,
    /// `P_2 = P - P_1`, rows in the complement.
    pub p2: DMatrix<f64>,
    pub sigma: f64,
    /// Empirical canonical correlation of `(u, z)` on the same sample.
    pub rho: f64,
    /// `sigma * rho / (2 sqrt(1 - rho^2)) * ||B^+||_2 * ||P_1||_2`.
    pub bound: f64,
    pub p2_spectral: f64,
}

/// Split a fitted `P` along the system's subspace and evaluate the bound.
pub fn split_solution(
    system: &HiddenSubspaceSystem,
    p: DMatrix<f64>,
    sigma: f64,
    rho: f64,
) -> NoisySplit {
    let p1 = &p * &system.v * system.v.transpose();
    let p2 = &p - &p1;
    let (_, b) = system.derive_lifted();
    let b_pinv_spectral = spectral_norm(&pinv(&b, DEFAULT_RANK_TOL));
    let denom = (1.0 - rho * rho).max(f64::EPSILON).sqrt();
    let bound = sigma * rho / (2.0 * denom) * b_pinv_spectral * spectral_norm(&p1);
    let p2_spectral = spectral_norm(&p2);
    NoisySplit {
        p,
        p1,
        p2,
        sigma,
        rho,
        bound,
        p2_spectral,
    }
}

/// Fit one noisy trial end to end.
pub fn fit_noisy_trial(
    system: &HiddenSubspaceSystem,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<NoisySplit, DiagnosticsError> {
    let sample = sample_noisy_one_step(system, n, sigma, seed);
    let (p, _) = fit_noisy(&sample.x, &sample.u);
    let rho = match empirical_cca(&sample.u, &sample.z, 0.0) {
        Ok(est) => est.rho,
        Err(DiagnosticsError::DegenerateSample) if sample.z.amax() == 0.0 => 0.0,
        Err(e) => return Err(e),
    };
    Ok(split_solution(system, p, sigma, rho))
}

/// Outcome of a multi-trial bound verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyBoundReport {
    pub trials: usize,
    pub satisfied: usize,
    pub fraction_satisfied: f64,
    pub slack: f64,
    pub rho_values: Vec<f64>,
    pub p2_norms: Vec<f64>,
    pub bounds: Vec<f64>,
}

/// Run `trials` independent fits and report how often
/// `||P_2||_2 <= bound * (1 + slack)` holds. The slack absorbs
/// finite-sample estimation of `rho` and the expectations.
pub fn verify_noisy_bound(
    system: &HiddenSubspaceSystem,
    sigma: f64,
    n: usize,
    trials: usize,
    seed: u64,
    slack: f64,
) -> Result<NoisyBoundReport, DiagnosticsError> {
    assert!(trials >= 1);
    let splits: Result<Vec<NoisySplit>, DiagnosticsError> = (0..trials)
        .into_par_iter()
        .map(|t| fit_noisy_trial(system, n, sigma, seed.wrapping_add(t as u64)))
        .collect();
    let splits = splits?;
    let satisfied = splits
        .iter()
        .filter(|s| s.p2_spectral <= s.bound * (1.0 + slack) + 1e-12)
        .count();
    Ok(NoisyBoundReport {
        trials,
        satisfied,
        fraction_satisfied: satisfied as f64 / trials as f64,
        slack,
        rho_values: splits.iter().map(|s| s.rho).collect(),
        p2_norms: splits.iter().map(|s| s.p2_spectral).collect(),
        bounds: splits.iter().map(|s| s.bound).collect(),
    })
}
