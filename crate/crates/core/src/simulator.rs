//! Random system generation and trajectory sampling.
//!
//! Systems are drawn in general position (Gaussian entries, orthonormal
//! factor of a Gaussian matrix for `V`) and re-drawn with an incremented
//! sub-seed until the controllability and non-degeneracy checks pass.
//! Dataset generation is a pure function of `(config, seed)`: each
//! trajectory has its own RNG stream, so parallel and serial sampling
//! produce identical data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::check_v_controllability;
use crate::model::{
    DatasetMetadata, DistractorSpec, HiddenSubspaceSystem, ModelError, TrajectoryDataset,
};
use crate::numerics::{orth_basis, pinv, spectral_norm, DEFAULT_RANK_TOL};
use crate::rng::{gaussian_matrix, gaussian_vector, stream, RNG_ID};

/// Stream tags; fixed so data layouts stay reproducible across builds.
const TAG_SYSTEM: u64 = 1;
const TAG_TRAJECTORY: u64 = 2;
const TAG_COEFFS: u64 = 4;

const MAX_GENERATION_ATTEMPTS: u64 = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid generation config: {0}")]
    BadConfig(String),
    #[error("failed to generate a system passing assumption checks after {0} attempts")]
    GenerationFailed(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything needed to generate a system and its datasets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenerationConfig {
    pub d: usize,
    pub r: usize,
    pub l: usize,
    pub seed: u64,
    /// `A_bar` is rescaled so its spectral norm equals this (default 0.9).
    #[serde(default = "default_a_norm")]
    pub a_spectral_norm_target: f64,
    pub distractor: DistractorSpec,
    /// Observation noise scale; only the noisy one-step experiments use it.
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_a_norm() -> f64 {
    0.9
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.l == 0 || self.r == 0 || self.d == 0 {
            return Err(SimError::BadConfig("d, r, l must be positive".into()));
        }
        if !(self.l <= self.r && self.r <= self.d) {
            return Err(SimError::BadConfig(format!(
                "need l <= r <= d, got l={}, r={}, d={}",
                self.l, self.r, self.d
            )));
        }
        if !(self.a_spectral_norm_target > 0.0 && self.a_spectral_norm_target <= 2.0) {
            return Err(SimError::BadConfig(format!(
                "a_spectral_norm_target must be in (0, 2], got {}",
                self.a_spectral_norm_target
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(SimError::BadConfig("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A generated system together with how many draws it took.
#[derive(Debug, Clone)]
pub struct GeneratedSystem {
    pub system: HiddenSubspaceSystem,
    pub attempts: u32,
}

/// Draw a random system in general position, re-drawing with an
/// incremented sub-seed until Assumptions 2 and 3 hold.
pub fn random_system(config: &GenerationConfig) -> Result<GeneratedSystem, SimError> {
    config.validate()?;
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = stream(config.seed, &[TAG_SYSTEM, attempt]);
        let mut a_bar = gaussian_matrix(config.r, config.r, &mut rng);
        let a_norm = spectral_norm(&a_bar);
        if a_norm == 0.0 {
            continue;
        }
        a_bar *= config.a_spectral_norm_target / a_norm;
        let b_bar = gaussian_matrix(config.r, config.l, &mut rng);
        let v = orth_basis(&gaussian_matrix(config.d, config.r, &mut rng), 1e-10);
        if v.ncols() != config.r {
            continue;
        }
        let system = match HiddenSubspaceSystem::new(
            a_bar,
            b_bar,
            v,
            config.distractor.clone(),
        ) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let (a, b) = system.derive_lifted();
        let b_pinv_t = pinv(&b, DEFAULT_RANK_TOL).transpose();
        let check = check_v_controllability(
            &a.transpose(),
            &b_pinv_t,
            &system.v,
            DEFAULT_RANK_TOL,
        );
        if check.pass {
            return Ok(GeneratedSystem {
                system,
                attempts: attempt as u32 + 1,
            });
        }
    }
    Err(SimError::GenerationFailed(MAX_GENERATION_ATTEMPTS))
}

/// A distractor map with all randomness resolved: evaluating it on a
/// latent sample is deterministic except for the independent-Gaussian
/// kind, which draws from the provided stream.
#[derive(Debug, Clone)]
pub enum RealizedDistractor {
    Zero,
    IndependentGaussian {
        scale: f64,
    },
    Polynomial {
        exponents: Vec<Vec<u32>>,
        /// `(d - r) x m`.
        coeffs: DMatrix<f64>,
        /// Best linear predictor of `g(h)` from `h`, subtracted when the
        /// orthogonalize-linear flag is set. `(d - r) x r`.
        linear_correction: Option<DMatrix<f64>>,
    },
}

/// Exponent vectors over `vars` variables with total degree in
/// `[min_degree, max_degree]`, in a fixed deterministic order.
pub fn monomial_exponents(vars: usize, min_degree: u32, max_degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; vars];
    fn recurse(
        current: &mut Vec<u32>,
        idx: usize,
        remaining: u32,
        min_total: u32,
        total: u32,
        out: &mut Vec<Vec<u32>>,
    ) {
        if idx == current.len() {
            if total >= min_total {
                out.push(current.clone());
            }
            return;
        }
        for e in 0..=remaining {
            current[idx] = e;
            recurse(current, idx + 1, remaining - e, min_total, total + e, out);
        }
        current[idx] = 0;
    }
    recurse(&mut current, 0, max_degree, min_degree, 0, &mut out);
    out
}

/// `E[h^k]` for `h ~ N(0, 1)`: zero for odd `k`, `(k - 1)!!` for even.
fn gaussian_moment(k: u32) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let mut val = 1.0;
    let mut i = 1;
    while i < k {
        val *= i as f64;
        i += 2;
    }
    val
}

fn eval_monomials(exponents: &[Vec<u32>], h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.ncols();
    let m = exponents.len();
    DMatrix::from_fn(m, n, |j, col| {
        exponents[j]
            .iter()
            .enumerate()
            .map(|(var, &e)| h[(var, col)].powi(e as i32))
            .product()
    })
}

impl RealizedDistractor {
    /// Resolve a spec into a concrete map for the given system.
    pub fn for_system(system: &HiddenSubspaceSystem) -> Self {
        let g_dim = system.d - system.r;
        match &system.distractor {
            DistractorSpec::Zero => RealizedDistractor::Zero,
            _ if g_dim == 0 => RealizedDistractor::Zero,
            DistractorSpec::IndependentGaussian { scale } => {
                RealizedDistractor::IndependentGaussian { scale: *scale }
            }
            DistractorSpec::Polynomial {
                degree,
                min_degree,
                coeff_seed,
                orthogonalize_linear,
            } => {
                let exponents =
                    monomial_exponents(system.r, (*min_degree).max(1), (*degree).max(*min_degree));
                let m = exponents.len();
                let mut coeff_rng = stream(*coeff_seed, &[TAG_COEFFS]);
                let coeffs = gaussian_matrix(g_dim, m, &mut coeff_rng) / (m as f64).sqrt();
                let linear_correction = if *orthogonalize_linear {
                    // Best linear predictor of g(h) under h ~ N(0, I) in
                    // closed form: beta = E[g(h) h^T], using independence
                    // across coordinates and E[h^k] = (k - 1)!! for even k.
                    let moments = DMatrix::from_fn(m, system.r, |idx, j| {
                        let mut val = 1.0;
                        for (i, &e) in exponents[idx].iter().enumerate() {
                            let k = if i == j { e + 1 } else { e };
                            val *= gaussian_moment(k);
                            if val == 0.0 {
                                break;
                            }
                        }
                        val
                    });
                    Some(&coeffs * moments)
                } else {
                    None
                };
                RealizedDistractor::Polynomial {
                    exponents,
                    coeffs,
                    linear_correction,
                }
            }
            DistractorSpec::Custom { exponents, coeffs } => RealizedDistractor::Polynomial {
                exponents: exponents.clone(),
                coeffs: coeffs.clone(),
                linear_correction: None,
            },
        }
    }

    /// Evaluate `g` on a latent sample (`r x n`), returning `(d - r) x n`
    /// coordinates in the complement basis.
    pub fn eval<R: Rng>(&self, g_dim: usize, h: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
        let n = h.ncols();
        match self {
            RealizedDistractor::Zero => DMatrix::zeros(g_dim, n),
            RealizedDistractor::IndependentGaussian { scale } => {
                gaussian_matrix(g_dim, n, rng) * *scale
            }
            RealizedDistractor::Polynomial {
                exponents,
                coeffs,
                linear_correction,
            } => {
                let mut g = coeffs * eval_monomials(exponents, h);
                if let Some(beta) = linear_correction {
                    g -= beta * h;
                }
                g
            }
        }
    }
}

/// Realize the distractor for a latent sample: `Z = V_perp g(H)`, `d x n`.
pub fn realize_distractor<R: Rng>(
    system: &HiddenSubspaceSystem,
    h_sample: &DMatrix<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let realized = RealizedDistractor::for_system(system);
    let g = realized.eval(system.d - system.r, h_sample, rng);
    &system.v_perp * g
}

/// One trajectory: latents, observations, and distractors, each with
/// `horizon + 1` columns.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub h: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

/// Roll the latent dynamics forward from `h0` under the given controls.
///
/// `x[t] = V h[t] + z[t]`, plus `sigma * xi` observation noise on `x`
/// when `noise_sigma > 0`.
pub fn rollout<R: Rng>(
    system: &HiddenSubspaceSystem,
    realized: &RealizedDistractor,
    h0: &DVector<f64>,
    controls: &DMatrix<f64>,
    noise_sigma: f64,
    rng: &mut R,
) -> Trajectory {
    assert_eq!(h0.len(), system.r, "h0 must have latent dimension");
    assert_eq!(controls.nrows(), system.l, "controls must be l x horizon");
    let horizon = controls.ncols();
    let mut h = DMatrix::zeros(system.r, horizon + 1);
    h.set_column(0, h0);
    for t in 0..horizon {
        let next = &system.a_bar * h.column(t) + &system.b_bar * controls.column(t);
        h.set_column(t + 1, &next);
    }
    let g = realized.eval(system.d - system.r, &h, rng);
    let z = &system.v_perp * g;
    let mut x = &system.v * &h + &z;
    if noise_sigma > 0.0 {
        x += gaussian_matrix(system.d, horizon + 1, rng) * noise_sigma;
    }
    Trajectory { h, x, z }
}

/// Convenience wrapper realizing the distractor internally.
pub fn rollout_system<R: Rng>(
    system: &HiddenSubspaceSystem,
    h0: &DVector<f64>,
    controls: &DMatrix<f64>,
    rng: &mut R,
) -> Trajectory {
    let realized = RealizedDistractor::for_system(system);
    rollout(system, &realized, h0, controls, 0.0, rng)
}

/// Sample `n` i.i.d. trajectories: `h_0` and every `u_t` standard
/// Gaussian, per-trajectory streams derived from `(seed, index)`.
pub fn sample_batch(
    system: &HiddenSubspaceSystem,
    n: usize,
    horizon: usize,
    seed: u64,
) -> TrajectoryDataset {
    sample_batch_opts(system, n, horizon, seed, 0.0, 1)
}

/// Full-control variant: observation noise scale and the attempt count to
/// record in metadata.
pub fn sample_batch_opts(
    system: &HiddenSubspaceSystem,
    n: usize,
    horizon: usize,
    seed: u64,
    noise_sigma: f64,
    system_attempts: u32,
) -> TrajectoryDataset {
    assert!(n >= 1 && horizon >= 1);
    let realized = RealizedDistractor::for_system(system);
    let trajectories: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[TAG_TRAJECTORY, i as u64]);
            let h0 = gaussian_vector(system.r, &mut rng);
            let controls = gaussian_matrix(system.l, horizon, &mut rng);
            rollout(system, &realized, &h0, &controls, noise_sigma, &mut rng)
        })
        .collect();
    // Controls are re-derived from the same streams so each trajectory's
    // draws stay self-contained.
    let controls: Vec<DMatrix<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[TAG_TRAJECTORY, i as u64]);
            let _h0 = gaussian_vector(system.r, &mut rng);
            gaussian_matrix(system.l, horizon, &mut rng)
        })
        .collect();

    let step_matrix = |get: &dyn Fn(usize) -> DMatrix<f64>, rows: usize, steps: usize| {
        (0..steps)
            .map(|t| {
                DMatrix::from_fn(rows, n, |row, i| get(i)[(row, t)])
            })
            .collect::<Vec<_>>()
    };
    let x = step_matrix(&|i| trajectories[i].x.clone(), system.d, horizon + 1);
    let h = step_matrix(&|i| trajectories[i].h.clone(), system.r, horizon + 1);
    let z = step_matrix(&|i| trajectories[i].z.clone(), system.d, horizon + 1);
    let u = (0..horizon)
        .map(|t| DMatrix::from_fn(system.l, n, |row, i| controls[i][(row, t)]))
        .collect();

    TrajectoryDataset {
        n,
        horizon,
        d: system.d,
        l: system.l,
        r_meta: system.r,
        seed,
        x,
        u,
        h: Some(h),
        z: Some(z),
        metadata: DatasetMetadata {
            rng: RNG_ID.to_string(),
            system_attempts,
            noisy_one_step: false,
        },
    }
}

/// Ground-truth system with an invertible nonlinear observation map:
/// `x = cbrt(M h)` elementwise, `M` invertible. The latent dynamics are
/// linear; the observations are not, but become linear after a cubic
/// feature lift.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WarpedSystem {
    pub d: usize,
    pub l: usize,
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    /// Invertible `d x d` mixing applied before the cube root.
    pub mix: DMatrix<f64>,
}

/// Draw a warped system; the mixing matrix is re-drawn until its
/// condition number is moderate.
pub fn random_warped_system(
    d: usize,
    l: usize,
    seed: u64,
    a_spectral_norm_target: f64,
) -> Result<WarpedSystem, SimError> {
    if l == 0 || l > d {
        return Err(SimError::BadConfig(format!("need 0 < l <= d, got l={l}, d={d}")));
    }
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = stream(seed, &[TAG_SYSTEM, attempt]);
        let mut a_bar = gaussian_matrix(d, d, &mut rng);
        let a_norm = spectral_norm(&a_bar);
        if a_norm == 0.0 {
            continue;
        }
        a_bar *= a_spectral_norm_target / a_norm;
        let b_bar = gaussian_matrix(d, l, &mut rng);
        let mix = gaussian_matrix(d, d, &mut rng);
        let svals = crate::numerics::retained_singular_values(&mix, 0.0);
        if svals.len() < d || svals[d - 1] < 0.05 * svals[0] {
            continue;
        }
        if crate::numerics::retained_singular_values(&b_bar, 1e-10).len() != l {
            continue;
        }
        return Ok(WarpedSystem {
            d,
            l,
            a_bar,
            b_bar,
            mix,
        });
    }
    Err(SimError::GenerationFailed(MAX_GENERATION_ATTEMPTS))
}

fn signed_cbrt(x: f64) -> f64 {
    x.signum() * x.abs().cbrt()
}

/// Sample i.i.d. trajectories from a warped system. Latents are retained
/// for verification.
pub fn sample_warped_batch(
    system: &WarpedSystem,
    n: usize,
    horizon: usize,
    seed: u64,
) -> TrajectoryDataset {
    assert!(n >= 1 && horizon >= 1);
    let per_traj: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[TAG_TRAJECTORY, i as u64]);
            let h0 = gaussian_vector(system.d, &mut rng);
            let controls = gaussian_matrix(system.l, horizon, &mut rng);
            let mut h = DMatrix::zeros(system.d, horizon + 1);
            h.set_column(0, &h0);
            for t in 0..horizon {
                let next = &system.a_bar * h.column(t) + &system.b_bar * controls.column(t);
                h.set_column(t + 1, &next);
            }
            let x = (&system.mix * &h).map(signed_cbrt);
            (h, x, controls)
        })
        .collect();
    let x = (0..horizon + 1)
        .map(|t| DMatrix::from_fn(system.d, n, |row, i| per_traj[i].1[(row, t)]))
        .collect();
    let h = (0..horizon + 1)
        .map(|t| DMatrix::from_fn(system.d, n, |row, i| per_traj[i].0[(row, t)]))
        .collect();
    let u = (0..horizon)
        .map(|t| DMatrix::from_fn(system.l, n, |row, i| per_traj[i].2[(row, t)]))
        .collect();
    TrajectoryDataset {
        n,
        horizon,
        d: system.d,
        l: system.l,
        r_meta: system.d,
        seed,
        x,
        u,
        h: Some(h),
        z: None,
        metadata: DatasetMetadata {
            rng: RNG_ID.to_string(),
            system_attempts: 1,
            noisy_one_step: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DistractorSpec;

    fn config(d: usize, r: usize, l: usize, seed: u64) -> GenerationConfig {
        GenerationConfig {
            d,
            r,
            l,
            seed,
            a_spectral_norm_target: 0.9,
            distractor: DistractorSpec::Zero,
            noise_sigma: 0.0,
        }
    }

    #[test]
    fn random_system_passes_assumption_checks() {
        let cfg = config(6, 2, 1, 7);
        let generated = random_system(&cfg).unwrap();
        let sys = &generated.system;
        let (a, b) = sys.derive_lifted();
        let b_pinv_t = pinv(&b, 1e-8).transpose();
        let check = check_v_controllability(&a.transpose(), &b_pinv_t, &sys.v, 1e-8);
        assert!(check.pass);
        assert!((spectral_norm(&sys.a_bar) - 0.9).abs() < 1e-10);
    }

    #[test]
    fn random_system_is_deterministic() {
        let cfg = config(8, 3, 2, 21);
        let a = random_system(&cfg).unwrap().system;
        let b = random_system(&cfg).unwrap().system;
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_system_generates() {
        let cfg = config(1, 1, 1, 5);
        let sys = random_system(&cfg).unwrap().system;
        assert!(sys.b_bar[(0, 0)].abs() > 0.0);
    }

    #[test]
    fn rollout_identity_dynamics_single_step() {
        let r = 2;
        let sys = HiddenSubspaceSystem::new(
            DMatrix::identity(r, r),
            DMatrix::identity(r, r),
            DMatrix::identity(r, r),
            DistractorSpec::Zero,
        )
        .unwrap();
        let realized = RealizedDistractor::for_system(&sys);
        let h0 = DVector::zeros(r);
        let controls = DMatrix::from_column_slice(r, 1, &[1.0, 0.0]);
        let mut rng = stream(0, &[0]);
        let traj = rollout(&sys, &realized, &h0, &controls, 0.0, &mut rng);
        assert_eq!(traj.h[(0, 1)], 1.0);
        assert_eq!(traj.h[(1, 1)], 0.0);
        // d = r with zero distractor: X equals H exactly.
        assert_eq!(traj.x, traj.h);
    }

    #[test]
    fn rollout_distractor_is_orthogonal_to_v() {
        let cfg = GenerationConfig {
            distractor: DistractorSpec::Polynomial {
                degree: 2,
                min_degree: 2,
                coeff_seed: 3,
                orthogonalize_linear: false,
            },
            ..config(7, 3, 2, 13)
        };
        let sys = random_system(&cfg).unwrap().system;
        let realized = RealizedDistractor::for_system(&sys);
        let mut rng = stream(99, &[1]);
        let h0 = gaussian_vector(3, &mut rng);
        let controls = gaussian_matrix(2, 4, &mut rng);
        let traj = rollout(&sys, &realized, &h0, &controls, 0.0, &mut rng);
        let resid = &traj.x - &sys.v * &traj.h;
        assert!((sys.v.transpose() * &resid).amax() < 1e-10);
        assert!((resid - traj.z).amax() < 1e-12);
    }

    #[test]
    fn sample_batch_is_reproducible_and_consistent() {
        let cfg = GenerationConfig {
            distractor: DistractorSpec::IndependentGaussian { scale: 1.0 },
            ..config(6, 2, 1, 31)
        };
        let sys = random_system(&cfg).unwrap().system;
        let a = sample_batch(&sys, 20, 3, 77);
        let b = sample_batch(&sys, 20, 3, 77);
        assert_eq!(a, b);
        let h = a.h_ref().unwrap();
        let z = a.z_ref().unwrap();
        for t in 0..=3 {
            let recon = &sys.v * &h[t] + &z[t];
            assert!((&a.x[t] - recon).amax() < 1e-10);
        }
    }

    #[test]
    fn sample_batch_initial_latents_are_standard_gaussian() {
        let cfg = config(4, 2, 1, 41);
        let sys = random_system(&cfg).unwrap().system;
        let n = 1000;
        let ds = sample_batch(&sys, n, 1, 5);
        let h0 = &ds.h_ref().unwrap()[0];
        let cov = h0 * h0.transpose() / n as f64;
        let dev = spectral_norm(&(cov - DMatrix::<f64>::identity(2, 2)));
        assert!(dev < 0.2, "empirical covariance deviates by {dev}");
        let bound = 5.0 / (n as f64).sqrt();
        for row in 0..2 {
            let mean = h0.row(row).sum() / n as f64;
            let var = h0.row(row).map(|v| v * v).sum() / n as f64 - mean * mean;
            assert!(mean.abs() < bound);
            assert!((var - 1.0).abs() < 5.0 * bound);
        }
    }

    #[test]
    fn monomial_enumeration_counts() {
        // Degree-2..2 monomials in 3 variables: C(4,2) = 6.
        assert_eq!(monomial_exponents(3, 2, 2).len(), 6);
        // All monomials of degree 1..3 in 3 variables: C(6,3) - 1 = 19.
        assert_eq!(monomial_exponents(3, 1, 3).len(), 19);
    }

    #[test]
    fn zero_distractor_realizes_to_zero() {
        let cfg = config(5, 2, 1, 3);
        let sys = random_system(&cfg).unwrap().system;
        let mut rng = stream(1, &[0]);
        let h = gaussian_matrix(2, 10, &mut rng);
        let z = realize_distractor(&sys, &h, &mut rng);
        assert_eq!(z, DMatrix::zeros(5, 10));
    }

    #[test]
    fn orthogonalize_linear_removes_linear_component() {
        let cfg = GenerationConfig {
            distractor: DistractorSpec::Polynomial {
                degree: 3,
                min_degree: 1,
                coeff_seed: 11,
                orthogonalize_linear: true,
            },
            ..config(6, 2, 1, 51)
        };
        let sys = random_system(&cfg).unwrap().system;
        let realized = RealizedDistractor::for_system(&sys);
        let mut rng = stream(8, &[0]);
        let n = 20000;
        let h = gaussian_matrix(2, n, &mut rng);
        let g = realized.eval(4, &h, &mut rng);
        // Cross-covariance with h should be near zero after correction.
        let cross = &g * h.transpose() / n as f64;
        assert!(
            cross.amax() < 0.05,
            "residual linear correlation {}",
            cross.amax()
        );
    }

    #[test]
    fn warped_batch_inverts_through_cubes() {
        let sys = random_warped_system(3, 1, 9, 0.9).unwrap();
        let ds = sample_warped_batch(&sys, 10, 2, 4);
        let h = ds.h_ref().unwrap();
        for t in 0..=2 {
            let cubed = ds.x[t].map(|v| v * v * v);
            let recon = &sys.mix * &h[t];
            assert!((cubed - recon).amax() < 1e-9);
        }
    }
}
