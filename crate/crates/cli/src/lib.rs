//! Command-line orchestration: design an experiment from a configuration, then
//! validate it by Monte Carlo identification.
//!
//! Exit codes: 0 success, 2 configuration error (nothing written), 3 the design
//! hit `max_time` (partial artifacts written), 1 anything else.

pub mod artifacts;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use tdid::appset::{self, chi2_percentile, EllipsoidPair};
use tdid::cyclic::{self, DesignProblem};
use tdid::{fisher, harness, lti, DesignOutcome, DesignStatus, MonteCarloReport};

use config::{LoadedConfig, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MAX_TIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}:{line}:{column}: {message}", path.display())]
    Config { path: PathBuf, line: usize, column: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Design(#[from] tdid::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

/// Command-line overrides shared by both commands.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
}

fn out_dir(cfg: &LoadedConfig, o: &Overrides) -> Result<PathBuf, CliError> {
    let dir = o.out.clone().unwrap_or_else(|| cfg.output_dir());
    fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Serialize)]
struct DesignSummary {
    schema_version: u32,
    status: DesignStatus,
    experiment_length: usize,
    stop_sample: usize,
    final_cost: f64,
    lmi_margin: f64,
    lmi_satisfied: bool,
    gamma: f64,
    alpha: f64,
    chi2: f64,
    basis_seed: u64,
    rejected_cycles: usize,
    degenerate_steps: usize,
    truncation_tail_fractions: Vec<f64>,
    hessian: Vec<Vec<f64>>,
    fim: Vec<Vec<f64>>,
}

pub struct DesignRun {
    pub outcome: DesignOutcome,
    pub out_dir: PathBuf,
}

impl DesignRun {
    pub fn exit_code(&self) -> i32 {
        match self.outcome.status {
            DesignStatus::Success => EXIT_OK,
            DesignStatus::MaxTime => EXIT_MAX_TIME,
        }
    }
}

/// Everything that can be rejected before a file is written.
struct Prepared {
    cfg: LoadedConfig,
    problem: DesignProblem,
    hessian: DMatrix<f64>,
}

fn prepare(config_path: &Path, o: &Overrides) -> Result<Prepared, CliError> {
    let mut cfg = config::load(config_path)?;
    if let Some(seed) = o.seed {
        cfg.config.spec.seed = seed;
    }
    let hessian = appset::application_hessian(&cfg.model, &cfg.config.scenario)
        .map_err(|e| cfg.error_at("scenario", e.to_string()))?;
    let problem = DesignProblem::new(&cfg.model, &cfg.config.spec).map_err(|e| cfg.error_at("spec", e.to_string()))?;
    Ok(Prepared { cfg, problem, hessian })
}

/// `design <config>`: writes design.csv, trace.csv, fim.csv, hessian.csv,
/// ellipsoids.csv and summary.json.
pub fn run_design(config_path: &Path, o: &Overrides) -> Result<DesignRun, CliError> {
    let Prepared { cfg, problem, hessian } = prepare(config_path, o)?;
    let outcome = cyclic::design_with(&problem, &cfg.model, &hessian)?;
    let dir = out_dir(&cfg, o)?;
    let spec = &cfg.config.spec;

    artifacts::write(&dir.join("design.csv"), &artifacts::design_csv(&outcome.inputs, &outcome.outputs))?;
    artifacts::write(&dir.join("trace.csv"), &artifacts::trace_csv(&outcome.diagnostics))?;
    artifacts::write(&dir.join("fim.csv"), &artifacts::matrix_csv(&outcome.fim))?;
    artifacts::write(&dir.join("hessian.csv"), &artifacts::matrix_csv(&outcome.hessian))?;
    let pair = EllipsoidPair::new(
        outcome.hessian.clone(),
        outcome.fim.clone(),
        cfg.model.theta_g.clone(),
        spec.gamma,
        spec.alpha,
    );
    artifacts::write(&dir.join("ellipsoids.csv"), &artifacts::ellipsoids_csv(&pair))?;

    let summary = DesignSummary {
        schema_version: SCHEMA_VERSION,
        status: outcome.status,
        experiment_length: outcome.length(),
        stop_sample: outcome.stop_sample,
        final_cost: outcome.diagnostics.last().map_or(f64::NAN, |d| d.cost),
        lmi_margin: outcome.lmi.margin,
        lmi_satisfied: outcome.lmi.satisfied,
        gamma: spec.gamma,
        alpha: spec.alpha,
        chi2: chi2_percentile(spec.alpha, cfg.model.n_theta()),
        basis_seed: spec.seed,
        rejected_cycles: outcome.diagnostics.iter().filter(|d| d.rejected).count(),
        degenerate_steps: outcome.diagnostics.iter().filter(|d| d.degenerate).count(),
        truncation_tail_fractions: problem.bank.tail_fractions.clone(),
        hessian: rows(&outcome.hessian),
        fim: rows(&outcome.fim),
    };
    write_json(&dir.join("summary.json"), &serde_json::to_value(&summary).expect("summary serializes"))?;
    Ok(DesignRun { outcome, out_dir: dir })
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    artifacts::write(path, &(serde_json::to_string_pretty(v).expect("json") + "\n"))
}

pub struct ValidateRun {
    pub report: MonteCarloReport,
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub out_dir: PathBuf,
}

/// `validate <config> <design.csv>`: Monte Carlo identification with the designed
/// input. Writes montecarlo.csv and adds a `validation` block to summary.json.
pub fn run_validate(config_path: &Path, design_path: &Path, o: &Overrides) -> Result<ValidateRun, CliError> {
    let cfg = config::load(config_path)?;
    let text = fs::read_to_string(design_path).map_err(|e| CliError::Config {
        path: design_path.to_path_buf(),
        line: 0,
        column: 0,
        message: e.to_string(),
    })?;
    let (inputs, outputs) = artifacts::parse_design_csv(design_path, &text)?;
    let model = &cfg.model;
    if inputs.nrows() != model.n_u || outputs.nrows() != model.n_y {
        return Err(CliError::Config {
            path: design_path.to_path_buf(),
            line: 1,
            column: 1,
            message: format!(
                "design has {} inputs and {} outputs, model has {} and {}",
                inputs.nrows(),
                outputs.nrows(),
                model.n_u,
                model.n_y
            ),
        });
    }
    let spec = &cfg.config.spec;
    let hessian = appset::application_hessian(model, &cfg.config.scenario)
        .map_err(|e| cfg.error_at("scenario", e.to_string()))?;
    let bank = lti::sensitivity_impulse_responses(model, &model.theta_g, spec.truncation_n, spec.horizon_nu, spec.tail_tol)
        .map_err(|e| cfg.error_at("spec", e.to_string()))?;
    let lambda_inv = model.lambda.clone().try_inverse().ok_or_else(|| cfg.error_at("model", "singular noise covariance"))?;
    let fim = fisher::batch_information(&bank, &inputs, inputs.ncols(), &lambda_inv);
    let pair = EllipsoidPair::new(hessian, fim, model.theta_g.clone(), spec.gamma, spec.alpha);

    let runs = o.runs.unwrap_or(cfg.config.monte_carlo.runs);
    let seed = o.seed.unwrap_or(cfg.config.monte_carlo.seed);
    let report = harness::monte_carlo(model, &inputs, &pair, runs, seed, cfg.mc_lambda.as_ref());
    let dir = out_dir(&cfg, o)?;
    artifacts::write(&dir.join("montecarlo.csv"), &artifacts::montecarlo_csv(&report, model.n_theta()))?;

    let summary_path = dir.join("summary.json");
    let mut summary = fs::read_to_string(&summary_path)
        .ok()
        .and_then(|s| serde_json::from_str::<Value>(&s).ok())
        .filter(Value::is_object)
        .unwrap_or_else(|| json!({ "schema_version": SCHEMA_VERSION }));
    summary["validation"] = json!({
        "design": design_path.display().to_string(),
        "runs": runs,
        "base_seed": seed,
        "counted_runs": runs - report.flagged.len(),
        "flagged_runs": report.flagged.iter().map(|k| k + 1).collect::<Vec<_>>(),
        "inside_id_fraction": report.inside_id_fraction,
        "inside_app_fraction": report.inside_app_fraction,
        "containment_margin": pair.containment(0.0).margin,
        "noise_covariance": rows(cfg.mc_lambda.as_ref().unwrap_or(&model.lambda)),
    });
    write_json(&summary_path, &summary)?;
    Ok(ValidateRun { report, inputs, outputs, out_dir: dir })
}
