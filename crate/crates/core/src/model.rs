//! Domain types shared by the simulator and all solvers.
//!
//! A hidden-subspace system has latent linear dynamics
//! `h_{t+1} = A_bar h_t + B_bar u_t` and observations
//! `x_t = V h_t + z_t`, where `V` has orthonormal columns and the
//! distractor `z_t` lives in the orthogonal complement of `V`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{orth_basis, retained_singular_values};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension constraint violated: {0}")]
    BadDimensions(String),
    #[error("V columns are not orthonormal (max entry deviation {0:.3e})")]
    NotOrthonormal(f64),
    #[error("B_bar is rank deficient (rank {rank}, expected {expected})")]
    RankDeficientControl { rank: usize, expected: usize },
    #[error("dataset is missing ground-truth {0}")]
    MissingGroundTruth(&'static str),
    #[error("shapes do not match: {0}")]
    DimensionMismatch(String),
}

/// How the subspace-orthogonal distractor `z_t = V_perp g(h_t)` is produced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistractorSpec {
    /// `z_t = 0` exactly; the model is fully linear.
    Zero,
    /// Each distractor coordinate is an i.i.d. Gaussian draw, independent
    /// of the latent state.
    IndependentGaussian { scale: f64 },
    /// Each distractor coordinate is a random linear combination of
    /// monomials of `h` with total degree in `[min_degree, degree]`
    /// (default range `[2, degree]`). When `orthogonalize_linear` is set,
    /// the best linear predictor of `g(h)` under `h ~ N(0, I)`, computed
    /// in closed form from Gaussian moments, is subtracted.
    Polynomial {
        degree: u32,
        #[serde(default = "default_min_degree")]
        min_degree: u32,
        coeff_seed: u64,
        orthogonalize_linear: bool,
    },
    /// Tabulated polynomial map: explicit exponent rows (length `r`) and a
    /// `(d - r) x m` coefficient matrix.
    Custom {
        exponents: Vec<Vec<u32>>,
        coeffs: DMatrix<f64>,
    },
}

fn default_min_degree() -> u32 {
    2
}

/// Ground-truth generator: latent dynamics plus the linearizing subspace.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HiddenSubspaceSystem {
    pub d: usize,
    pub r: usize,
    pub l: usize,
    /// Latent transition, `r x r`.
    pub a_bar: DMatrix<f64>,
    /// Latent control, `r x l`.
    pub b_bar: DMatrix<f64>,
    /// Linearizing subspace basis, `d x r`, orthonormal columns.
    pub v: DMatrix<f64>,
    /// Orthonormal basis of the complement, `d x (d - r)`.
    pub v_perp: DMatrix<f64>,
    pub distractor: DistractorSpec,
}

impl HiddenSubspaceSystem {
    pub fn new(
        a_bar: DMatrix<f64>,
        b_bar: DMatrix<f64>,
        v: DMatrix<f64>,
        distractor: DistractorSpec,
    ) -> Result<Self, ModelError> {
        let (d, r) = v.shape();
        let l = b_bar.ncols();
        if r == 0 || d == 0 || l == 0 {
            return Err(ModelError::BadDimensions(
                "d, r, l must be positive".into(),
            ));
        }
        if l > r || r > d {
            return Err(ModelError::BadDimensions(format!(
                "need l <= r <= d, got l={l}, r={r}, d={d}"
            )));
        }
        if a_bar.shape() != (r, r) || b_bar.nrows() != r {
            return Err(ModelError::DimensionMismatch(format!(
                "A_bar {:?}, B_bar {:?} inconsistent with V {:?}",
                a_bar.shape(),
                b_bar.shape(),
                v.shape()
            )));
        }
        let gram = v.transpose() * &v;
        let defect = (&gram - DMatrix::<f64>::identity(r, r)).amax();
        if defect > 1e-12 {
            return Err(ModelError::NotOrthonormal(defect));
        }
        let b_rank = retained_singular_values(&b_bar, 1e-10).len();
        if b_rank != l {
            return Err(ModelError::RankDeficientControl {
                rank: b_rank,
                expected: l,
            });
        }
        let v_perp = if d == r {
            // Full latent dimension: the complement is trivial, and the
            // residual projector is pure roundoff.
            DMatrix::zeros(d, 0)
        } else {
            let projector_perp = DMatrix::<f64>::identity(d, d) - &v * v.transpose();
            orth_basis(&projector_perp, 0.5)
        };
        debug_assert_eq!(v_perp.ncols(), d - r);
        Ok(Self {
            d,
            r,
            l,
            a_bar,
            b_bar,
            v,
            v_perp,
            distractor,
        })
    }

    /// Lifted observation-space dynamics `A = V A_bar V^T`, `B = V B_bar`.
    /// (`V^+ = V^T` because `V` is orthonormal.)
    pub fn derive_lifted(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = &self.v * &self.a_bar * self.v.transpose();
        let b = &self.v * &self.b_bar;
        (a, b)
    }
}

/// Bookkeeping recorded with every generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMetadata {
    /// RNG family identifier; see [`crate::rng::RNG_ID`].
    pub rng: String,
    /// How many generation attempts the source system needed.
    pub system_attempts: u32,
    /// Set when this dataset encodes the noisy one-step experiment
    /// (`x_0 = 0`, observations carry additive Gaussian noise).
    pub noisy_one_step: bool,
}

/// `n` i.i.d. trajectories, stored step-major: `x[t]` is the `d x n`
/// matrix of observations at step `t` across all trajectories.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryDataset {
    pub n: usize,
    pub horizon: usize,
    pub d: usize,
    pub l: usize,
    /// Latent dimension of the generating system (metadata; the solver
    /// never reads it).
    pub r_meta: usize,
    pub seed: u64,
    /// Observations: `horizon + 1` matrices of shape `d x n`.
    pub x: Vec<DMatrix<f64>>,
    /// Controls: `horizon` matrices of shape `l x n`.
    pub u: Vec<DMatrix<f64>>,
    /// Ground-truth latents, `horizon + 1` matrices of shape `r x n`.
    pub h: Option<Vec<DMatrix<f64>>>,
    /// Ground-truth distractors, `horizon + 1` matrices of shape `d x n`.
    pub z: Option<Vec<DMatrix<f64>>>,
    pub metadata: DatasetMetadata,
}

impl TrajectoryDataset {
    pub fn h_ref(&self) -> Result<&Vec<DMatrix<f64>>, ModelError> {
        self.h.as_ref().ok_or(ModelError::MissingGroundTruth("H"))
    }

    pub fn z_ref(&self) -> Result<&Vec<DMatrix<f64>>, ModelError> {
        self.z.as_ref().ok_or(ModelError::MissingGroundTruth("Z"))
    }
}

/// Fitted inverse model: `P x_i - L_i x_0 - sum_k T_k u_{i-1-k} ~ u_{i-1}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InverseModelSolution {
    /// `l x d`.
    pub p: DMatrix<f64>,
    /// `r` matrices, each `l x d`.
    pub l_mats: Vec<DMatrix<f64>>,
    /// `r - 1` matrices, each `l x l`, shared across steps.
    pub t_mats: Vec<DMatrix<f64>>,
    /// Root-mean-square prediction error over all steps, samples, and
    /// control coordinates.
    pub residual_rms: f64,
    /// `||P||_F`.
    pub p_norm: f64,
    /// `sum_i ||L_i||_F^2`.
    pub l_norm_sq: f64,
}

/// Orthonormal basis of the recovered subspace.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubspaceEstimate {
    /// `d x k`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Retained singular values of the stacked matrix
    /// `[P^T L_1^T ... L_r^T]`, descending.
    pub singular_values: Vec<f64>,
    /// Relative cutoff used to truncate the rank.
    pub rank_tolerance: f64,
}

impl SubspaceEstimate {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, stream};
    use nalgebra::DVector;

    fn standard_basis_v(d: usize, r: usize) -> DMatrix<f64> {
        DMatrix::from_fn(d, r, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn derive_lifted_identity_case() {
        let r = 3;
        let d = 5;
        let v = standard_basis_v(d, r);
        let sys = HiddenSubspaceSystem::new(
            DMatrix::identity(r, r),
            DMatrix::identity(r, r).columns(0, 2).into(),
            v,
            DistractorSpec::Zero,
        )
        .unwrap();
        let (a, b) = sys.derive_lifted();
        let expected_a = DMatrix::from_fn(d, d, |i, j| if i == j && i < r { 1.0 } else { 0.0 });
        assert!((a - expected_a).norm() < 1e-12);
        let expected_b = DMatrix::from_fn(d, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        assert!((b - expected_b).norm() < 1e-12);
    }

    #[test]
    fn derive_lifted_zero_transition() {
        let mut rng = stream(11, &[0]);
        let v = orth_basis(&gaussian_matrix(6, 2, &mut rng), 1e-10);
        let sys = HiddenSubspaceSystem::new(
            DMatrix::zeros(2, 2),
            gaussian_matrix(2, 2, &mut rng),
            v,
            DistractorSpec::Zero,
        )
        .unwrap();
        let (a, _) = sys.derive_lifted();
        assert!(a.norm() < 1e-12);
    }

    #[test]
    fn lifted_columns_live_in_v() {
        let mut rng = stream(13, &[0]);
        let v = orth_basis(&gaussian_matrix(7, 3, &mut rng), 1e-10);
        let sys = HiddenSubspaceSystem::new(
            gaussian_matrix(3, 3, &mut rng),
            gaussian_matrix(3, 2, &mut rng),
            v.clone(),
            DistractorSpec::Zero,
        )
        .unwrap();
        let (a, b) = sys.derive_lifted();
        let proj = DMatrix::<f64>::identity(7, 7) - &v * v.transpose();
        assert!((&proj * &a).norm() < 1e-12);
        assert!((&proj * a.transpose()).norm() < 1e-12);
        assert!((&proj * &b).norm() < 1e-12);
    }

    #[test]
    fn rejects_rank_deficient_control() {
        let v = standard_basis_v(4, 2);
        let b_bar = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let err = HiddenSubspaceSystem::new(
            DMatrix::identity(2, 2),
            b_bar,
            v,
            DistractorSpec::Zero,
        );
        assert!(matches!(
            err,
            Err(ModelError::RankDeficientControl { .. })
        ));
    }

    #[test]
    fn rejects_non_orthonormal_v() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        let err = HiddenSubspaceSystem::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            v,
            DistractorSpec::Zero,
        );
        assert!(matches!(err, Err(ModelError::NotOrthonormal(_))));
    }

    #[test]
    fn v_perp_is_the_orthogonal_complement() {
        let mut rng = stream(17, &[0]);
        let v = orth_basis(&gaussian_matrix(6, 2, &mut rng), 1e-10);
        let sys = HiddenSubspaceSystem::new(
            gaussian_matrix(2, 2, &mut rng),
            gaussian_matrix(2, 1, &mut rng),
            v.clone(),
            DistractorSpec::Zero,
        )
        .unwrap();
        assert_eq!(sys.v_perp.ncols(), 4);
        assert!((v.transpose() * &sys.v_perp).norm() < 1e-12);
        let gram = sys.v_perp.transpose() * &sys.v_perp;
        assert!((gram - DMatrix::<f64>::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn system_serialization_round_trips_bit_exactly() {
        let mut rng = stream(19, &[0]);
        let v = orth_basis(&gaussian_matrix(5, 2, &mut rng), 1e-10);
        let sys = HiddenSubspaceSystem::new(
            gaussian_matrix(2, 2, &mut rng),
            gaussian_matrix(2, 1, &mut rng),
            v,
            DistractorSpec::Polynomial {
                degree: 3,
                min_degree: 2,
                coeff_seed: 42,
                orthogonalize_linear: true,
            },
        )
        .unwrap();
        let json = serde_json::to_string(&sys).unwrap();
        let back: HiddenSubspaceSystem = serde_json::from_str(&json).unwrap();
        assert_eq!(sys, back);
    }

    #[test]
    fn scalar_system_is_valid() {
        let sys = HiddenSubspaceSystem::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            DistractorSpec::Zero,
        )
        .unwrap();
        let (a, b) = sys.derive_lifted();
        assert_eq!(a[(0, 0)], 0.5);
        assert_eq!(b[(0, 0)], 2.0);
        assert_eq!(sys.v_perp.ncols(), 0);
        let _ = DVector::<f64>::zeros(1);
    }
}
