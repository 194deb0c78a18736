//! Assumption checking and measurement: empirical canonical correlation,
//! V-controllability, and subspace distances.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, SubspaceEstimate, TrajectoryDataset};
use crate::numerics::{principal_angles, retained_singular_values, spectral_norm};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("degenerate sample: a whitened covariance block has zero rank")]
    DegenerateSample,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Empirical canonical correlation between two sample blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcaEstimate {
    /// Largest canonical correlation, in `[0, 1]`.
    pub rho: f64,
    pub rank_first: usize,
    pub rank_second: usize,
    pub ridge: f64,
}

/// Symmetric inverse square root of `S + ridge I` with a relative cutoff,
/// together with the retained rank. `S` must be symmetric PSD.
fn inv_sqrt_psd(s: &DMatrix<f64>, ridge: f64, tol: f64) -> (DMatrix<f64>, usize) {
    let k = s.nrows();
    let regularized = s + DMatrix::<f64>::identity(k, k) * ridge;
    let eig = regularized.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(k, k);
    let mut rank = 0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > tol * lmax && lambda > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(i);
            out += v * v.transpose() / lambda.sqrt();
        }
    }
    (out, rank)
}

/// Largest empirical canonical correlation between the columns of two
/// sample matrices (`k1 x n` and `k2 x n`), computed by whitening both
/// blocks and taking the top singular value of the whitened
/// cross-covariance. Covariances are `1/n` times sample cross-products.
pub fn empirical_cca(
    first: &DMatrix<f64>,
    second: &DMatrix<f64>,
    ridge: f64,
) -> Result<CcaEstimate, DiagnosticsError> {
    let n = first.ncols();
    if n < 2 {
        return Err(DiagnosticsError::TooFewSamples(n));
    }
    assert_eq!(second.ncols(), n, "sample counts must agree");
    let nf = n as f64;
    let s11 = first * first.transpose() / nf;
    let s22 = second * second.transpose() / nf;
    let s12 = first * second.transpose() / nf;
    let tol = 1e-12;
    let (w1, rank_first) = inv_sqrt_psd(&s11, ridge, tol);
    let (w2, rank_second) = inv_sqrt_psd(&s22, ridge, tol);
    if rank_first == 0 || rank_second == 0 {
        return Err(DiagnosticsError::DegenerateSample);
    }
    let whitened = &w1 * &s12 * &w2;
    let rho = spectral_norm(&whitened).min(1.0);
    Ok(CcaEstimate {
        rho,
        rank_first,
        rank_second,
        ridge,
    })
}

/// Default CCA ridge: tiny multiple of the covariance trace scale.
pub fn default_cca_ridge(first: &DMatrix<f64>, second: &DMatrix<f64>) -> f64 {
    let n = first.ncols().max(1) as f64;
    let trace = (first.norm_squared() + second.norm_squared()) / n;
    1e-10 * trace
}

/// Per-step empirical check of the no-linear-dependence assumption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Assumption1Report {
    /// `rho((z_i, z_0), (h_i, h_0))` for `i = 1..=r`.
    pub rho_per_step: Vec<f64>,
    /// Extended version conditioning on earlier controls:
    /// `rho((z_i, z_0), (h_i, h_0, u_0..u_{i-2}))`.
    pub rho_extended_per_step: Vec<f64>,
    pub max_rho: f64,
}

fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].ncols();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, n);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), n)).copy_from(*b);
        at += b.nrows();
    }
    out
}

/// Estimate the assumption-1 correlations on a dataset that carries
/// ground-truth latents and distractors. An identically-zero distractor
/// block is reported as `rho = 0` by convention.
pub fn assumption1_estimate(
    dataset: &TrajectoryDataset,
    steps: usize,
    ridge: f64,
) -> Result<Assumption1Report, DiagnosticsError> {
    let h = dataset.h_ref()?;
    let z = dataset.z_ref()?;
    assert!(steps <= dataset.horizon, "steps exceed dataset horizon");
    let mut rho_per_step = Vec::with_capacity(steps);
    let mut rho_extended = Vec::with_capacity(steps);
    for i in 1..=steps {
        let z_block = vstack(&[&z[i], &z[0]]);
        let h_block = vstack(&[&h[i], &h[0]]);
        let rho = match empirical_cca(&z_block, &h_block, ridge) {
            Ok(est) => est.rho,
            Err(DiagnosticsError::DegenerateSample) if z_block.amax() == 0.0 => 0.0,
            Err(e) => return Err(e),
        };
        rho_per_step.push(rho);
        let mut ext_blocks: Vec<&DMatrix<f64>> = vec![&h[i], &h[0]];
        for k in 0..i.saturating_sub(1) {
            ext_blocks.push(&dataset.u[k]);
        }
        let ext_block = vstack(&ext_blocks);
        let rho_ext = match empirical_cca(&z_block, &ext_block, ridge) {
            Ok(est) => est.rho,
            Err(DiagnosticsError::DegenerateSample) if z_block.amax() == 0.0 => 0.0,
            Err(e) => return Err(e),
        };
        rho_extended.push(rho_ext);
    }
    let max_rho = rho_per_step.iter().cloned().fold(0.0, f64::max);
    Ok(Assumption1Report {
        rho_per_step,
        rho_extended_per_step: rho_extended,
        max_rho,
    })
}

/// Outcome of the subspace-restricted controllability test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllabilityCheck {
    /// Whether `col(A)`, `col(A^T)`, and `col(B)` all project into `V`.
    pub contained: bool,
    /// Numerical rank of `[B AB ... A^{r-1}B]`.
    pub krylov_rank: usize,
    pub pass: bool,
}

/// V-controllability: column spaces of `A`, `A^T`, `B` inside `V` and the
/// Krylov block matrix `[B AB ... A^{r-1}B]` of rank `r = dim(V)`.
pub fn check_v_controllability(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    v: &DMatrix<f64>,
    tol: f64,
) -> ControllabilityCheck {
    let d = a.nrows();
    let r = v.ncols();
    let l = b.ncols();
    assert_eq!(a.shape(), (d, d));
    assert_eq!(b.nrows(), d);
    assert_eq!(v.nrows(), d);
    let proj_out = |m: &DMatrix<f64>| -> f64 {
        let resid = m - v * (v.transpose() * m);
        let scale = m.norm();
        if scale == 0.0 {
            0.0
        } else {
            resid.norm() / scale
        }
    };
    let contained =
        proj_out(a) <= tol && proj_out(&a.transpose()) <= tol && proj_out(b) <= tol;
    let mut krylov = DMatrix::zeros(d, r * l);
    let mut block = b.clone();
    for k in 0..r {
        krylov.view_mut((0, k * l), (d, l)).copy_from(&block);
        block = a * block;
    }
    let krylov_rank = retained_singular_values(&krylov, tol).len();
    ControllabilityCheck {
        contained,
        krylov_rank,
        pass: contained && krylov_rank == r,
    }
}

/// Largest principal angle between an estimate and the true basis, with
/// any dimension mismatch reported rather than silently compared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceDistance {
    pub largest_angle: f64,
    pub estimated_dim: usize,
    pub true_dim: usize,
    pub dim_mismatch: bool,
}

pub fn subspace_distance(
    estimate: &SubspaceEstimate,
    v: &DMatrix<f64>,
) -> Result<SubspaceDistance, crate::numerics::NumericsError> {
    let angles = principal_angles(&estimate.basis, v)?;
    let largest_angle = if estimate.basis.ncols() == 0 && v.ncols() > 0 {
        std::f64::consts::FRAC_PI_2
    } else {
        angles.first().copied().unwrap_or(0.0)
    };
    Ok(SubspaceDistance {
        largest_angle,
        estimated_dim: estimate.basis.ncols(),
        true_dim: v.ncols(),
        dim_mismatch: estimate.basis.ncols() != v.ncols(),
    })
}
