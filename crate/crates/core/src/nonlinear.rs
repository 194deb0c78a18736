//! Inverse-model fitting over nonlinear feature maps.
//!
//! Observations pass through a feature map `phi` before the inverse
//! model is fit. For fixed dictionaries (identity, monomials, random
//! Fourier) the problem stays linear in `(P, L, T)` and is solved exactly
//! with the same two-stage rule as the linear solver; a learnable linear
//! combination over a fixed dictionary is handled by alternating
//! minimization. A zero-loss fit whose last `L` block is contained in
//! the span of the earlier ones certifies linear dynamics on the
//! projected feature space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linear::{assemble_design, solve_design, SolverError};
use crate::model::{InverseModelSolution, TrajectoryDataset};
use crate::numerics::{min_norm_lstsq, orth_basis, DEFAULT_RANK_TOL};
use crate::rng::{gaussian_matrix, stream};
use crate::simulator::monomial_exponents;

/// A deterministic feature map `R^d -> R^k`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureMap {
    /// `phi(x) = x`.
    Identity { input_dim: usize },
    /// All monomials of the input coordinates with total degree in
    /// `1..=degree`, in a fixed enumeration order.
    Monomials { input_dim: usize, degree: u32 },
    /// Random Fourier features `sqrt(2/m) cos(w_j^T x / bandwidth + b_j)`
    /// with `w_j ~ N(0, I)` and `b_j ~ U[0, 2 pi)` resolved from `seed`.
    RandomFourier {
        input_dim: usize,
        count: usize,
        bandwidth: f64,
        seed: u64,
    },
    /// `phi(x) = W psi(x)` with a fixed dictionary `psi` and a learnable
    /// combination `W`.
    LearnedCombination {
        dictionary: Box<FeatureMap>,
        w: DMatrix<f64>,
    },
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { input_dim }
            | FeatureMap::Monomials { input_dim, .. }
            | FeatureMap::RandomFourier { input_dim, .. } => *input_dim,
            FeatureMap::LearnedCombination { dictionary, .. } => dictionary.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { input_dim } => *input_dim,
            FeatureMap::Monomials { input_dim, degree } => {
                monomial_exponents(*input_dim, 1, *degree).len()
            }
            FeatureMap::RandomFourier { count, .. } => *count,
            FeatureMap::LearnedCombination { w, .. } => w.nrows(),
        }
    }

    /// Evaluate on a `d x n` sample, producing `k x n`.
    pub fn eval(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.input_dim(), "input dimension mismatch");
        match self {
            FeatureMap::Identity { .. } => x.clone(),
            FeatureMap::Monomials { input_dim, degree } => {
                let exponents = monomial_exponents(*input_dim, 1, *degree);
                DMatrix::from_fn(exponents.len(), x.ncols(), |j, col| {
                    exponents[j]
                        .iter()
                        .enumerate()
                        .map(|(var, &e)| x[(var, col)].powi(e as i32))
                        .product()
                })
            }
            FeatureMap::RandomFourier {
                input_dim,
                count,
                bandwidth,
                seed,
            } => {
                let mut rng = stream(*seed, &[6]);
                let omega = gaussian_matrix(*count, *input_dim, &mut rng);
                let phases: Vec<f64> = (0..*count)
                    .map(|_| {
                        use rand::Rng;
                        rng.random::<f64>() * std::f64::consts::TAU
                    })
                    .collect();
                let projected = omega * x / *bandwidth;
                let scale = (2.0 / *count as f64).sqrt();
                DMatrix::from_fn(*count, x.ncols(), |j, col| {
                    scale * (projected[(j, col)] + phases[j]).cos()
                })
            }
            FeatureMap::LearnedCombination { dictionary, w } => w * dictionary.eval(x),
        }
    }
}

/// Alternating-minimization settings for the learned-combination map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop when the relative loss improvement falls below this.
    pub rel_tol: f64,
    /// Loss above this at the plateau is reported as non-convergence.
    pub convergence_loss_threshold: f64,
    /// Scale of the Gaussian noise added to the initial `W`.
    pub init_noise_scale: f64,
    pub init_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-10,
            convergence_loss_threshold: 1e-8,
            init_noise_scale: 1e-2,
            init_seed: 0,
        }
    }
}

/// A fitted nonlinear inverse model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonlinearFit {
    pub feature_map: FeatureMap,
    pub tau: usize,
    /// `l x k`.
    pub p: DMatrix<f64>,
    pub l_mats: Vec<DMatrix<f64>>,
    pub t_mats: Vec<DMatrix<f64>>,
    /// `(1/2) mean_j sum_i ||residual_{i,j}||^2`.
    pub loss: f64,
    pub residual_rms: f64,
    /// Alternating-minimization iterations used (1 for fixed maps).
    pub iterations: usize,
    /// Loss plateaued above the convergence threshold.
    pub non_convergence: bool,
    /// `||P||_F` collapsed to ~0; the objective forbids this at zero
    /// loss, so it flags optimizer failure.
    pub trivial_p: bool,
}

fn feature_dataset(dataset: &TrajectoryDataset, map: &FeatureMap) -> TrajectoryDataset {
    TrajectoryDataset {
        n: dataset.n,
        horizon: dataset.horizon,
        d: map.output_dim(),
        l: dataset.l,
        r_meta: dataset.r_meta,
        seed: dataset.seed,
        x: dataset.x.iter().map(|xt| map.eval(xt)).collect(),
        u: dataset.u.clone(),
        h: None,
        z: None,
        metadata: dataset.metadata.clone(),
    }
}

fn finish_fit(
    map: FeatureMap,
    tau: usize,
    n: usize,
    l: usize,
    sol: InverseModelSolution,
    iterations: usize,
    config: &OptimizerConfig,
) -> NonlinearFit {
    let loss = 0.5 * sol.residual_rms * sol.residual_rms * (tau * l) as f64;
    let _ = n;
    NonlinearFit {
        feature_map: map,
        tau,
        p: sol.p,
        l_mats: sol.l_mats,
        t_mats: sol.t_mats,
        loss,
        residual_rms: sol.residual_rms,
        iterations,
        non_convergence: loss > config.convergence_loss_threshold,
        trivial_p: false,
    }
    .flag_trivial()
}

impl NonlinearFit {
    fn flag_trivial(mut self) -> Self {
        self.trivial_p = self.p.norm() < 1e-10;
        self
    }
}

/// Fit the nonlinear inverse model over `tau` steps.
pub fn fit_nonlinear(
    dataset: &TrajectoryDataset,
    feature_map: &FeatureMap,
    tau: usize,
    config: &OptimizerConfig,
) -> Result<NonlinearFit, SolverError> {
    match feature_map {
        FeatureMap::LearnedCombination { dictionary, w } => fit_learned_combination(
            dataset,
            dictionary,
            w.nrows(),
            tau,
            config,
        ),
        _ => {
            let lifted = feature_dataset(dataset, feature_map);
            let design = assemble_design(&lifted, tau)?;
            let sol = solve_design(&design, DEFAULT_RANK_TOL);
            Ok(finish_fit(
                feature_map.clone(),
                tau,
                dataset.n,
                dataset.l,
                sol,
                1,
                config,
            ))
        }
    }
}

/// Initial `W`: identity-embedding rows of the dictionary (the degree-1
/// monomial slots when present, otherwise the leading dictionary rows)
/// plus small seeded Gaussian noise.
fn initial_w(dictionary: &FeatureMap, k: usize, config: &OptimizerConfig) -> DMatrix<f64> {
    let m = dictionary.output_dim();
    let mut w = DMatrix::zeros(k, m);
    let linear_slots: Vec<usize> = match dictionary {
        FeatureMap::Monomials { input_dim, degree } => {
            let exponents = monomial_exponents(*input_dim, 1, *degree);
            exponents
                .iter()
                .enumerate()
                .filter(|(_, e)| e.iter().sum::<u32>() == 1)
                .map(|(i, _)| i)
                .collect()
        }
        _ => (0..m).collect(),
    };
    for (row, &slot) in linear_slots.iter().take(k).enumerate() {
        w[(row, slot)] = 1.0;
    }
    let mut rng = stream(config.init_seed, &[7]);
    w + gaussian_matrix(k, m, &mut rng) * config.init_noise_scale
}

fn fit_learned_combination(
    dataset: &TrajectoryDataset,
    dictionary: &FeatureMap,
    k: usize,
    tau: usize,
    config: &OptimizerConfig,
) -> Result<NonlinearFit, SolverError> {
    if dataset.horizon < tau {
        return Err(SolverError::HorizonTooShort {
            horizon: dataset.horizon,
            steps: tau,
        });
    }
    let (n, l) = (dataset.n, dataset.l);
    let m = dictionary.output_dim();
    // Dictionary features are fixed; evaluate once.
    let psi: Vec<DMatrix<f64>> = dataset.x.iter().map(|xt| dictionary.eval(xt)).collect();
    let mut w = initial_w(dictionary, k, config);
    let mut prev_loss = f64::INFINITY;
    let mut best: Option<(InverseModelSolution, DMatrix<f64>, f64)> = None;
    let mut iterations = 0;
    for iter in 0..config.max_iterations {
        iterations = iter + 1;
        // (P, L, T) step: exact solve with phi = W psi fixed.
        let lifted = TrajectoryDataset {
            n,
            horizon: dataset.horizon,
            d: k,
            l,
            r_meta: dataset.r_meta,
            seed: dataset.seed,
            x: psi.iter().map(|p| &w * p).collect(),
            u: dataset.u.clone(),
            h: None,
            z: None,
            metadata: dataset.metadata.clone(),
        };
        let design = assemble_design(&lifted, tau)?;
        let sol = solve_design(&design, DEFAULT_RANK_TOL);
        let loss = 0.5 * sol.residual_rms * sol.residual_rms * (tau * l) as f64;
        if best.as_ref().map_or(true, |(_, _, b)| loss < *b) {
            best = Some((sol.clone(), w.clone(), loss));
        }
        if prev_loss.is_finite() {
            let improvement = (prev_loss - loss) / prev_loss.abs().max(1e-300);
            if improvement < config.rel_tol {
                break;
            }
        }
        prev_loss = loss;
        // W step: least squares in vec(W) with (P, L, T) fixed.
        w = solve_w_step(&sol, &psi, dataset, k, m, tau);
    }
    let (sol, w, loss) = best.expect("at least one iteration");
    let map = FeatureMap::LearnedCombination {
        dictionary: Box::new(dictionary.clone()),
        w,
    };
    let mut fit = NonlinearFit {
        feature_map: map,
        tau,
        p: sol.p,
        l_mats: sol.l_mats,
        t_mats: sol.t_mats,
        loss,
        residual_rms: (2.0 * loss / (tau * l) as f64).sqrt(),
        iterations,
        non_convergence: loss > config.convergence_loss_threshold,
        trivial_p: false,
    };
    fit = fit.flag_trivial();
    Ok(fit)
}

/// Solve `min_W sum_{i,j} ||P W psi_i - L_i W psi_0 - c_{i,j}||^2` by
/// stacking into a dense least-squares problem over `vec(W)`.
fn solve_w_step(
    sol: &InverseModelSolution,
    psi: &[DMatrix<f64>],
    dataset: &TrajectoryDataset,
    k: usize,
    m: usize,
    tau: usize,
) -> DMatrix<f64> {
    let (n, l) = (dataset.n, dataset.l);
    let rows = tau * n * l;
    let mut design = DMatrix::zeros(rows, k * m);
    let mut target = DMatrix::zeros(rows, 1);
    let mut row = 0;
    for i in 1..=tau {
        for j in 0..n {
            // Fixed part of the target: u_{i-1} + sum_k T_k u_{i-1-k}.
            let mut c = dataset.u[i - 1].column(j).into_owned();
            for kk in 1..i {
                c += &sol.t_mats[kk - 1] * dataset.u[i - 1 - kk].column(j);
            }
            for out in 0..l {
                for a in 0..k {
                    for b in 0..m {
                        design[(row, a * m + b)] = sol.p[(out, a)] * psi[i][(b, j)]
                            - sol.l_mats[i - 1][(out, a)] * psi[0][(b, j)];
                    }
                }
                target[(row, 0)] = c[out];
                row += 1;
            }
        }
    }
    let vec_w = min_norm_lstsq(&design, &target).solution;
    DMatrix::from_fn(k, m, |a, b| vec_w[(a * m + b, 0)])
}

/// The projector onto the span of `[P^T | L_1^T | ... | L_{tau-1}^T]`,
/// with the containment of `L_tau^T` reported as a residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionExtract {
    /// `k x k` orthogonal projector.
    pub q: DMatrix<f64>,
    /// Orthonormal basis of the projected subspace, `k x s`.
    pub basis: DMatrix<f64>,
    /// `||(I - Q) L_tau^T||_F / max(||L_tau||_F, eps)`.
    pub containment_residual: f64,
}

pub fn extract_projection(fit: &NonlinearFit, rank_tol: f64) -> ProjectionExtract {
    let k = fit.p.ncols();
    let l = fit.p.nrows();
    let blocks = fit.tau; // P plus L_1..L_{tau-1}.
    let mut stacked = DMatrix::zeros(k, blocks * l);
    stacked.view_mut((0, 0), (k, l)).copy_from(&fit.p.transpose());
    for i in 0..fit.tau.saturating_sub(1) {
        stacked
            .view_mut((0, (i + 1) * l), (k, l))
            .copy_from(&fit.l_mats[i].transpose());
    }
    let basis = orth_basis(&stacked, rank_tol);
    let q = &basis * basis.transpose();
    let l_tau = &fit.l_mats[fit.tau - 1];
    let ltau_t = l_tau.transpose();
    let outside = &ltau_t - &q * &ltau_t;
    let containment_residual = outside.norm() / l_tau.norm().max(1e-12);
    ProjectionExtract {
        q,
        basis,
        containment_residual,
    }
}

/// Latent linear dynamics fitted in the projected feature space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentDynamics {
    /// `k x k`, satisfies `A = Q A Q` by construction.
    pub a: DMatrix<f64>,
    /// `k x l`.
    pub b: DMatrix<f64>,
    /// RMS one-step prediction error in the projected feature space.
    pub dynamics_residual_rms: f64,
    /// Set when the projection was empty and nothing was fitted.
    pub degenerate: bool,
}

/// Least-squares fit of `Q phi(x_{t+1}) ~ A Q phi(x_t) + B u_t` over every
/// consecutive pair, solved in the projected coordinates so that
/// `A = Q A Q` holds exactly.
pub fn fit_latent_dynamics(
    fit: &NonlinearFit,
    proj: &ProjectionExtract,
    dataset: &TrajectoryDataset,
) -> LatentDynamics {
    let k = fit.p.ncols();
    let l = dataset.l;
    let s = proj.basis.ncols();
    if s == 0 {
        return LatentDynamics {
            a: DMatrix::zeros(k, k),
            b: DMatrix::zeros(k, l),
            dynamics_residual_rms: 0.0,
            degenerate: true,
        };
    }
    let phi: Vec<DMatrix<f64>> = dataset.x.iter().map(|xt| fit.feature_map.eval(xt)).collect();
    let coords: Vec<DMatrix<f64>> = phi.iter().map(|p| proj.basis.transpose() * p).collect();
    let pairs = dataset.horizon * dataset.n;
    let mut regressors = DMatrix::zeros(pairs, s + l);
    let mut targets = DMatrix::zeros(pairs, s);
    for t in 0..dataset.horizon {
        let row0 = t * dataset.n;
        regressors
            .view_mut((row0, 0), (dataset.n, s))
            .copy_from(&coords[t].transpose());
        regressors
            .view_mut((row0, s), (dataset.n, l))
            .copy_from(&dataset.u[t].transpose());
        targets
            .view_mut((row0, 0), (dataset.n, s))
            .copy_from(&coords[t + 1].transpose());
    }
    let out = min_norm_lstsq(&regressors, &targets);
    let coeffs = out.solution.transpose(); // s x (s + l)
    let a_reduced = coeffs.columns(0, s).into_owned();
    let b_reduced = coeffs.columns(s, l).into_owned();
    let dynamics_residual_rms =
        (out.residual_norm.powi(2) / (pairs * s) as f64).sqrt();
    LatentDynamics {
        a: &proj.basis * &a_reduced * proj.basis.transpose(),
        b: &proj.basis * b_reduced,
        dynamics_residual_rms,
        degenerate: false,
    }
}

/// Evaluate a fitted model's inverse-prediction residual on a dataset
/// (typically held out). Returns the per-entry RMS error.
pub fn evaluate_fit(fit: &NonlinearFit, dataset: &TrajectoryDataset) -> Result<f64, SolverError> {
    let lifted = feature_dataset(dataset, &fit.feature_map);
    let design = assemble_design(&lifted, fit.tau)?;
    let sol = InverseModelSolution {
        p: fit.p.clone(),
        l_mats: fit.l_mats.clone(),
        t_mats: fit.t_mats.clone(),
        residual_rms: 0.0,
        p_norm: fit.p.norm(),
        l_norm_sq: fit.l_mats.iter().map(|m| m.norm_squared()).sum(),
    };
    let mut sq = 0.0;
    let rows = design.regressors.nrows();
    for row in 0..rows {
        let pred = design.predict_row(&sol, row);
        let target = design.targets.row(row).transpose();
        sq += (pred - target).norm_squared();
    }
    Ok((sq / (rows * dataset.l) as f64).sqrt())
}

/// Recovered-subspace dimension per trajectory length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankSaturationScan {
    pub dims: Vec<usize>,
    /// First `tau` at which the dimension stops increasing, if any.
    pub saturation_tau: Option<usize>,
}

pub fn rank_saturation_scan(
    dataset: &TrajectoryDataset,
    feature_map: &FeatureMap,
    tau_max: usize,
    config: &OptimizerConfig,
) -> Result<RankSaturationScan, SolverError> {
    let mut dims = Vec::with_capacity(tau_max);
    for tau in 1..=tau_max {
        let fit = fit_nonlinear(dataset, feature_map, tau, config)?;
        let proj = extract_projection(&fit, DEFAULT_RANK_TOL);
        dims.push(proj.basis.ncols());
    }
    let saturation_tau = dims
        .windows(2)
        .position(|w| w[1] == w[0])
        .map(|idx| idx + 1);
    Ok(RankSaturationScan {
        dims,
        saturation_tau,
    })
}
