//! Experiment runners: one function per `ExperimentKind`, all driven by a
//! master seed so that identical configs reproduce identical reports.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use linsub_core::diagnostics::{assumption1_estimate, check_v_controllability, default_cca_ridge};
use linsub_core::linear::{fit_inverse_model, verify_solution};
use linsub_core::model::{HiddenSubspaceSystem, TrajectoryDataset};
use linsub_core::noisy::{verify_noisy_bound, NoisyBoundReport};
use linsub_core::nonlinear::{
    evaluate_fit, extract_projection, fit_latent_dynamics, fit_nonlinear, rank_saturation_scan,
    FeatureMap, OptimizerConfig,
};
use linsub_core::numerics::{pinv, DEFAULT_RANK_TOL};
use linsub_core::rng::{derive_seed, RNG_ID};
use linsub_core::simulator::{
    random_system, random_warped_system, sample_batch, sample_warped_batch, GenerationConfig,
};

use crate::config::{ExperimentConfig, ExperimentKind, ObservationKind};

/// Tags for deriving per-trial sub-seeds from the master seed.
const TAG_SYSTEM: u64 = 1;
const TAG_DATA: u64 = 2;
const TAG_HELDOUT: u64 = 3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("simulation failed: {0}")]
    Sim(#[from] linsub_core::simulator::SimError),
    #[error("solver failed: {0}")]
    Solver(#[from] linsub_core::linear::SolverError),
    #[error("diagnostics failed: {0}")]
    Diagnostics(#[from] linsub_core::diagnostics::DiagnosticsError),
    #[error("numerical failure: {0}")]
    Numerics(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub rng: String,
    pub seed_used: u64,
    /// Config echo; re-running it with the same build reproduces every
    /// metric below bit-exactly.
    pub config: ExperimentConfig,
    pub body: ReportBody,
    /// Not covered by the determinism guarantee.
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ReportBody {
    FitLinear {
        trials: Vec<LinearTrial>,
        success_rate: f64,
        median_subspace_angle: f64,
    },
    FitNoisy {
        runs: Vec<NoisySigmaRun>,
    },
    FitNonlinear(Box<NonlinearRun>),
    SweepSamples {
        rows: Vec<SweepRow>,
    },
    SweepTau {
        trials: Vec<TauTrial>,
        /// Largest saturation step over trials, when all trials saturate.
        saturation_tau: Option<usize>,
    },
    Verify(VerifyRun),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearTrial {
    pub trial: usize,
    pub residual_rms: f64,
    pub p_error: f64,
    pub max_l_error: f64,
    pub max_t_error: f64,
    /// `||P B - I||_F`.
    pub pb_identity_error: f64,
    pub subspace_angle: f64,
    pub recovered_dim: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisySigmaRun {
    pub sigma: f64,
    pub report: NoisyBoundReport,
    pub median_rho: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonlinearRun {
    pub loss: f64,
    pub residual_rms: f64,
    pub iterations: usize,
    pub non_convergence: bool,
    pub trivial_p: bool,
    pub containment_residual: f64,
    pub subspace_dim: usize,
    pub heldout_inverse_rms: f64,
    pub heldout_dynamics_rms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub trials: usize,
    pub success_rate: f64,
    pub median_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauTrial {
    pub trial: usize,
    pub dims: Vec<usize>,
    pub saturation_tau: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyRun {
    pub rho_per_step: Vec<f64>,
    pub rho_extended_per_step: Vec<f64>,
    pub max_rho: f64,
    pub controllability_contained: bool,
    pub krylov_rank: usize,
    pub controllability_pass: bool,
}

fn trial_system(
    generation: &GenerationConfig,
    master_seed: u64,
    trial: u64,
) -> Result<HiddenSubspaceSystem, ExperimentError> {
    let mut gen = generation.clone();
    gen.seed = derive_seed(master_seed, &[TAG_SYSTEM, trial]);
    Ok(random_system(&gen)?.system)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn run_linear_trial(
    generation: &GenerationConfig,
    master_seed: u64,
    trial: u64,
    samples: usize,
    steps: Option<usize>,
    recovery_tol: f64,
) -> Result<LinearTrial, ExperimentError> {
    let system = trial_system(generation, master_seed, trial)?;
    let steps = steps.unwrap_or(system.r);
    let dataset = sample_batch(
        &system,
        samples,
        steps,
        derive_seed(master_seed, &[TAG_DATA, trial]),
    );
    let fit = fit_inverse_model(&dataset, steps, DEFAULT_RANK_TOL)?;
    let report = verify_solution(&system, &fit, recovery_tol)?;
    let (_, b) = system.derive_lifted();
    let pb_identity_error =
        (&fit.p * &b - DMatrix::<f64>::identity(system.l, system.l)).norm();
    Ok(LinearTrial {
        trial: trial as usize,
        residual_rms: fit.residual_rms,
        p_error: report.p_error,
        max_l_error: report.l_errors.iter().cloned().fold(0.0, f64::max),
        max_t_error: report.t_errors.iter().cloned().fold(0.0, f64::max),
        pb_identity_error,
        subspace_angle: report.subspace_angle,
        recovered_dim: report.recovered_dim,
        pass: report.pass,
    })
}

fn run_fit_linear(
    config: &ExperimentConfig,
    seed: u64,
    samples: usize,
    steps: Option<usize>,
    trials: usize,
    recovery_tol: f64,
) -> Result<ReportBody, ExperimentError> {
    let mut records = Vec::with_capacity(trials);
    for trial in 0..trials {
        records.push(run_linear_trial(
            &config.generation,
            seed,
            trial as u64,
            samples,
            steps,
            recovery_tol,
        )?);
    }
    let success_rate =
        records.iter().filter(|t| t.pass).count() as f64 / trials as f64;
    let mut angles: Vec<f64> = records.iter().map(|t| t.subspace_angle).collect();
    let median_subspace_angle = median(&mut angles);
    Ok(ReportBody::FitLinear {
        trials: records,
        success_rate,
        median_subspace_angle,
    })
}

fn run_fit_noisy(
    config: &ExperimentConfig,
    seed: u64,
    samples: usize,
    sigmas: &[f64],
    trials: usize,
    slack: f64,
) -> Result<ReportBody, ExperimentError> {
    let system = trial_system(&config.generation, seed, 0)?;
    let mut runs = Vec::with_capacity(sigmas.len());
    for (idx, &sigma) in sigmas.iter().enumerate() {
        let report = verify_noisy_bound(
            &system,
            sigma,
            samples,
            trials,
            derive_seed(seed, &[TAG_DATA, idx as u64]),
            slack,
        )?;
        let mut rhos = report.rho_values.clone();
        let median_rho = median(&mut rhos);
        runs.push(NoisySigmaRun {
            sigma,
            report,
            median_rho,
        });
    }
    Ok(ReportBody::FitNoisy { runs })
}

fn nonlinear_dataset(
    config: &ExperimentConfig,
    observation: ObservationKind,
    samples: usize,
    horizon: usize,
    system_seed: u64,
    data_seed: u64,
) -> Result<TrajectoryDataset, ExperimentError> {
    match observation {
        ObservationKind::Linear => {
            let mut gen = config.generation.clone();
            gen.seed = system_seed;
            let system = random_system(&gen)?.system;
            Ok(sample_batch(&system, samples, horizon, data_seed))
        }
        ObservationKind::CubeRoot => {
            let system = random_warped_system(
                config.generation.d,
                config.generation.l,
                system_seed,
                config.generation.a_spectral_norm_target,
            )?;
            Ok(sample_warped_batch(&system, samples, horizon, data_seed))
        }
    }
}

fn run_fit_nonlinear(
    config: &ExperimentConfig,
    seed: u64,
    samples: usize,
    heldout_samples: usize,
    tau: usize,
    feature_map: &FeatureMap,
    observation: ObservationKind,
) -> Result<ReportBody, ExperimentError> {
    let system_seed = derive_seed(seed, &[TAG_SYSTEM, 0]);
    let train = nonlinear_dataset(
        config,
        observation,
        samples,
        tau,
        system_seed,
        derive_seed(seed, &[TAG_DATA, 0]),
    )?;
    let heldout = nonlinear_dataset(
        config,
        observation,
        heldout_samples,
        tau,
        system_seed,
        derive_seed(seed, &[TAG_HELDOUT, 0]),
    )?;
    let optimizer = OptimizerConfig {
        init_seed: derive_seed(seed, &[TAG_SYSTEM, 1]),
        ..OptimizerConfig::default()
    };
    let fit = fit_nonlinear(&train, feature_map, tau, &optimizer)?;
    let projection = extract_projection(&fit, DEFAULT_RANK_TOL);
    let dynamics = fit_latent_dynamics(&fit, &projection, &heldout);
    let heldout_inverse_rms = evaluate_fit(&fit, &heldout)?;
    Ok(ReportBody::FitNonlinear(Box::new(NonlinearRun {
        loss: fit.loss,
        residual_rms: fit.residual_rms,
        iterations: fit.iterations,
        non_convergence: fit.non_convergence,
        trivial_p: fit.trivial_p,
        containment_residual: projection.containment_residual,
        subspace_dim: projection.basis.ncols(),
        heldout_inverse_rms,
        heldout_dynamics_rms: dynamics.dynamics_residual_rms,
    })))
}

fn run_sweep_samples(
    config: &ExperimentConfig,
    seed: u64,
    grid: &[usize],
    trials: usize,
    steps: Option<usize>,
    recovery_tol: f64,
) -> Result<ReportBody, ExperimentError> {
    let mut rows = Vec::with_capacity(grid.len());
    for (gi, &n) in grid.iter().enumerate() {
        let mut successes = 0;
        let mut errors = Vec::with_capacity(trials);
        for trial in 0..trials {
            // Independent trial seeds per grid point.
            let record = run_linear_trial(
                &config.generation,
                derive_seed(seed, &[TAG_DATA, gi as u64]),
                trial as u64,
                n,
                steps,
                recovery_tol,
            )?;
            if record.pass {
                successes += 1;
            }
            errors.push(
                record
                    .p_error
                    .max(record.max_l_error)
                    .max(record.subspace_angle),
            );
        }
        rows.push(SweepRow {
            n,
            trials,
            success_rate: successes as f64 / trials as f64,
            median_error: median(&mut errors),
        });
    }
    Ok(ReportBody::SweepSamples { rows })
}

fn run_sweep_tau(
    config: &ExperimentConfig,
    seed: u64,
    samples: usize,
    tau_max: usize,
    trials: usize,
) -> Result<ReportBody, ExperimentError> {
    let mut records = Vec::with_capacity(trials);
    let optimizer = OptimizerConfig::default();
    for trial in 0..trials {
        let system = trial_system(&config.generation, seed, trial as u64)?;
        let dataset = sample_batch(
            &system,
            samples,
            tau_max,
            derive_seed(seed, &[TAG_DATA, trial as u64]),
        );
        let map = FeatureMap::Identity {
            input_dim: system.d,
        };
        let scan = rank_saturation_scan(&dataset, &map, tau_max, &optimizer)?;
        records.push(TauTrial {
            trial,
            dims: scan.dims,
            saturation_tau: scan.saturation_tau,
        });
    }
    let saturation_tau = records
        .iter()
        .map(|t| t.saturation_tau)
        .collect::<Option<Vec<_>>>()
        .and_then(|taus| taus.into_iter().max());
    Ok(ReportBody::SweepTau {
        trials: records,
        saturation_tau,
    })
}

fn run_verify(
    config: &ExperimentConfig,
    seed: u64,
    samples: usize,
    steps: usize,
) -> Result<ReportBody, ExperimentError> {
    let system = trial_system(&config.generation, seed, 0)?;
    let dataset = sample_batch(
        &system,
        samples,
        steps,
        derive_seed(seed, &[TAG_DATA, 0]),
    );
    // A tiny relative ridge keeps the whitening stable; scale it off the
    // first-step blocks.
    let ridge = dataset
        .z_ref()
        .ok()
        .zip(dataset.h_ref().ok())
        .map(|(z, h)| default_cca_ridge(&z[0], &h[0]))
        .unwrap_or(0.0);
    let assumption1 = assumption1_estimate(&dataset, steps, ridge)?;
    let (a, b) = system.derive_lifted();
    let b_pinv_t = pinv(&b, DEFAULT_RANK_TOL).transpose();
    let ctrl = check_v_controllability(&a.transpose(), &b_pinv_t, &system.v, DEFAULT_RANK_TOL);
    Ok(ReportBody::Verify(VerifyRun {
        rho_per_step: assumption1.rho_per_step,
        rho_extended_per_step: assumption1.rho_extended_per_step,
        max_rho: assumption1.max_rho,
        controllability_contained: ctrl.contained,
        krylov_rank: ctrl.krylov_rank,
        controllability_pass: ctrl.pass,
    }))
}

/// Execute the experiment named by the config. `seed_override` (from
/// `--seed`) replaces the config's master seed when present.
pub fn run_experiment(
    config: &ExperimentConfig,
    seed_override: Option<u64>,
) -> Result<ExperimentReport, ExperimentError> {
    let seed = seed_override.unwrap_or(config.master_seed);
    let started = std::time::Instant::now();
    let body = match &config.kind {
        ExperimentKind::FitLinear {
            samples,
            steps,
            trials,
            recovery_tol,
        } => run_fit_linear(config, seed, *samples, *steps, *trials, *recovery_tol)?,
        ExperimentKind::FitNoisy {
            samples,
            sigmas,
            trials,
            slack,
        } => run_fit_noisy(config, seed, *samples, sigmas, *trials, *slack)?,
        ExperimentKind::FitNonlinear {
            samples,
            heldout_samples,
            tau,
            feature_map,
            observation,
        } => run_fit_nonlinear(
            config,
            seed,
            *samples,
            *heldout_samples,
            *tau,
            feature_map,
            *observation,
        )?,
        ExperimentKind::SweepSamples {
            grid,
            trials,
            steps,
            recovery_tol,
        } => run_sweep_samples(config, seed, grid, *trials, *steps, *recovery_tol)?,
        ExperimentKind::SweepTau {
            samples,
            tau_max,
            trials,
        } => run_sweep_tau(config, seed, *samples, *tau_max, *trials)?,
        ExperimentKind::Verify { samples, steps } => {
            run_verify(config, seed, *samples, *steps)?
        }
    };
    Ok(ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        rng: RNG_ID.to_string(),
        seed_used: seed,
        config: config.clone(),
        body,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    })
}

/// Write the sweep-samples success curve as CSV next to the report.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n", "trials", "success_rate", "median_error"])?;
    for row in rows {
        w.write_record([
            row.n.to_string(),
            row.trials.to_string(),
            row.success_rate.to_string(),
            row.median_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write the tau-scan dimension table as CSV.
pub fn write_tau_csv(trials: &[TauTrial], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["trial", "tau", "dim"])?;
    for t in trials {
        for (i, dim) in t.dims.iter().enumerate() {
            w.write_record([
                t.trial.to_string(),
                (i + 1).to_string(),
                dim.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
