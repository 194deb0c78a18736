//! Dense linear-algebra kernels shared by every solver: SVD pseudoinverse,
//! minimal-norm least squares, the two-stage lexicographic minimal-norm
//! solver, orthonormal bases, and principal angles.
//!
//! All rank decisions use relative cutoffs (singular values below
//! `tol * sigma_max` are treated as zero) and everything goes through the
//! SVD; normal equations are never formed.

use nalgebra::DMatrix;
use thiserror::Error;

/// Default relative singular-value cutoff used across the crate.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("input columns are not orthonormal (Gram deviation {0:.3e})")]
    NotOrthonormal(f64),
}

/// Result of a minimal-norm least-squares solve.
#[derive(Debug, Clone)]
pub struct LstsqResult {
    /// The unique minimal-Frobenius-norm minimizer.
    pub solution: DMatrix<f64>,
    /// Frobenius norm of `A * solution - C`.
    pub residual_norm: f64,
    /// Numerical rank of `A` at the cutoff used.
    pub effective_rank: usize,
}

/// A thin SVD `M = U diag(s) V^T` with `s` descending.
struct SvdParts {
    /// `p x k` with `k = min(p, q)`.
    u: DMatrix<f64>,
    singular: Vec<f64>,
    /// `q x k`.
    v: DMatrix<f64>,
}

fn svd_parts(m: &DMatrix<f64>) -> SvdParts {
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = f.thin_svd().expect("SVD did not converge");
    let fu = svd.U();
    let fv = svd.V();
    let fs = svd.S();
    let k = fs.dim();
    SvdParts {
        u: DMatrix::from_fn(fu.nrows(), k, |i, j| fu[(i, j)]),
        singular: (0..k).map(|i| fs[i]).collect(),
        v: DMatrix::from_fn(fv.nrows(), k, |i, j| fv[(i, j)]),
    }
}

/// Moore-Penrose pseudoinverse via SVD with a relative cutoff.
///
/// Singular values below `tol * sigma_max` are treated as zero. A zero
/// matrix returns a zero matrix.
pub fn pinv(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (p, q) = m.shape();
    if p == 0 || q == 0 {
        return DMatrix::zeros(q, p);
    }
    let svd = svd_parts(m);
    let smax = svd.singular.first().copied().unwrap_or(0.0);
    let cutoff = tol * smax;
    let mut result = DMatrix::zeros(q, p);
    for (i, &s) in svd.singular.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let vi = svd.v.column(i);
            let ui = svd.u.column(i);
            result += (vi * ui.transpose()) / s;
        }
    }
    result
}

/// Minimal-Frobenius-norm solution of `min_X ||A X - C||_F`.
pub fn min_norm_lstsq(a: &DMatrix<f64>, c: &DMatrix<f64>) -> LstsqResult {
    min_norm_lstsq_tol(a, c, DEFAULT_RANK_TOL)
}

/// Same as [`min_norm_lstsq`] with an explicit relative rank cutoff.
pub fn min_norm_lstsq_tol(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: f64) -> LstsqResult {
    assert_eq!(a.nrows(), c.nrows(), "row counts must agree");
    let (_, p) = a.shape();
    let q = c.ncols();
    if p == 0 || a.nrows() == 0 {
        let solution = DMatrix::zeros(p, q);
        let residual_norm = (c - a * &solution).norm();
        return LstsqResult {
            solution,
            residual_norm,
            effective_rank: 0,
        };
    }
    let svd = svd_parts(a);
    let smax = svd.singular.first().copied().unwrap_or(0.0);
    let cutoff = tol * smax;
    let mut solution = DMatrix::zeros(p, q);
    let mut rank = 0;
    for (i, &s) in svd.singular.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let coeff = (svd.u.column(i).transpose() * c) / s;
            solution += svd.v.column(i) * coeff;
        }
    }
    let residual_norm = (a * &solution - c).norm();
    LstsqResult {
        solution,
        residual_norm,
        effective_rank: rank,
    }
}

/// Two-stage lexicographic minimal-norm solve of
/// `min ||A_x X + A_y Y - C||_F`.
///
/// Stage 1 finds the minimal-norm `X` of the problem reduced by the
/// projection onto `col(A_y)`; stage 2 finds the minimal-norm `Y` of the
/// remainder. Among all zero-residual pairs (when they exist), the result
/// has minimal `||X||_F`, and minimal `||Y||_F` among those.
pub fn two_stage_min_norm(
    a_x: &DMatrix<f64>,
    a_y: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    two_stage_min_norm_tol(a_x, a_y, c, DEFAULT_RANK_TOL)
}

pub fn two_stage_min_norm_tol(
    a_x: &DMatrix<f64>,
    a_y: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tol: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    assert_eq!(a_x.nrows(), c.nrows());
    assert_eq!(a_y.nrows(), c.nrows());
    if a_y.ncols() == 0 {
        let x = min_norm_lstsq_tol(a_x, c, tol).solution;
        let y = DMatrix::zeros(0, c.ncols());
        return (x, y);
    }
    let basis_y = orth_basis(a_y, tol);
    // Reduced stage-1 problem: (I - P_B) A_x X = (I - P_B) C.
    let proj = |m: &DMatrix<f64>| -> DMatrix<f64> { &basis_y * (basis_y.transpose() * m) };
    let ax_reduced = a_x - proj(a_x);
    let c_reduced = c - proj(c);
    let x = min_norm_lstsq_tol(&ax_reduced, &c_reduced, tol).solution;
    // Stage 2: A_y Y = P_B C - P_B A_x X.
    let rhs = proj(c) - proj(&(a_x * &x));
    let y = min_norm_lstsq_tol(a_y, &rhs, tol).solution;
    (x, y)
}

/// Orthonormal basis of `col(M)`: left singular directions with
/// `sigma > tol * sigma_max`. A zero matrix yields an empty basis.
pub fn orth_basis(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let p = m.nrows();
    if p == 0 || m.ncols() == 0 {
        return DMatrix::zeros(p, 0);
    }
    let svd = svd_parts(m);
    let smax = svd.singular.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return DMatrix::zeros(p, 0);
    }
    let cutoff = tol * smax;
    let cols: Vec<usize> = svd
        .singular
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cutoff)
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(p, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        basis.set_column(j, &svd.u.column(i));
    }
    basis
}

/// Retained singular values of `M` above the relative cutoff, descending.
pub fn retained_singular_values(m: &DMatrix<f64>, tol: f64) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let svd = svd_parts(m);
    let smax = svd.singular.first().copied().unwrap_or(0.0);
    svd.singular
        .iter()
        .cloned()
        .filter(|&s| s > tol * smax && smax > 0.0)
        .collect()
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    svd_parts(m).singular.first().copied().unwrap_or(0.0)
}

fn orthonormality_defect(u: &DMatrix<f64>) -> f64 {
    let k = u.ncols();
    let gram = u.transpose() * u;
    (&gram - DMatrix::<f64>::identity(k, k)).norm()
}

/// Principal angles between the subspaces spanned by `u` and `w`,
/// nonincreasing, in `[0, pi/2]`. Inputs must have orthonormal columns.
pub fn principal_angles(
    u: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<Vec<f64>, NumericsError> {
    for m in [u, w] {
        let defect = orthonormality_defect(m);
        if defect > 1e-8 {
            return Err(NumericsError::NotOrthonormal(defect));
        }
    }
    let product = u.transpose() * w;
    if product.nrows() == 0 || product.ncols() == 0 {
        return Ok(Vec::new());
    }
    let cosines = svd_parts(&product).singular;
    // acos near 1 only resolves angles down to ~sqrt(eps); small angles
    // come from the sine formulation instead (Knyazev-Argentati).
    let residual = w - u * &product;
    let mut sines = svd_parts(&residual).singular;
    sines.reverse(); // ascending, pairing with descending cosines
    let mut angles: Vec<f64> = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            if c * c > 0.5 {
                s.clamp(0.0, 1.0).asin()
            } else {
                c.clamp(0.0, 1.0).acos()
            }
        })
        .collect();
    // Angles are ascending at this point; report nonincreasing.
    angles.reverse();
    Ok(angles)
}

/// Largest principal angle between two subspaces with orthonormal bases.
pub fn largest_principal_angle(
    u: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<f64, NumericsError> {
    Ok(principal_angles(u, w)?.first().copied().unwrap_or(0.0))
}
