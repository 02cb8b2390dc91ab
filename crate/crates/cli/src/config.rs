//! Run configuration and model documents.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use tdid::{ApplicationScenario, ExperimentSpec, ModelStructure, NoiseModel, ParametricLtiModel};

use crate::CliError;

/// Version of the configuration and model schemas in `docs/`.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Model document, relative to the config file.
    pub model: PathBuf,
    pub spec: ExperimentSpec,
    pub scenario: ApplicationScenario,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    /// Artifact directory, relative to the config file.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Noise covariance used to generate the data, replacing the model's Λ.
    #[serde(default)]
    pub lambda: Option<Vec<Vec<f64>>>,
}

fn default_runs() -> usize {
    100
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { runs: default_runs(), seed: 0, lambda: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub structure: ModelStructure,
    /// Nominal plant parameters θ₀.
    pub theta: Vec<f64>,
    #[serde(default)]
    pub theta_h: Vec<f64>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    /// Innovation covariance, row-major.
    pub lambda: Vec<Vec<f64>>,
    #[serde(default)]
    pub inputs: Option<usize>,
    #[serde(default)]
    pub outputs: Option<usize>,
}

/// A parsed configuration with its model and resolved paths.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub config: RunConfig,
    pub model: ParametricLtiModel,
    pub model_path: PathBuf,
    pub mc_lambda: Option<DMatrix<f64>>,
}

impl LoadedConfig {
    pub fn output_dir(&self) -> PathBuf {
        match &self.config.output_dir {
            Some(dir) => resolve(&self.path, dir),
            None => resolve(&self.path, Path::new("out")),
        }
    }

    /// Config error anchored at the first occurrence of `"key"`.
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> CliError {
        anchored(&self.path, &self.text, key, message)
    }
}

fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// One-based line and column of the first `"key"` in `text`, or `1:1`.
pub fn locate(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    match text.find(&needle) {
        Some(offset) => {
            let before = &text[..offset];
            let line = before.matches('\n').count() + 1;
            let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
            (line, column)
        }
        None => (1, 1),
    }
}

pub fn anchored(path: &Path, text: &str, key: &str, message: impl Into<String>) -> CliError {
    let (line, column) = locate(text, key);
    CliError::Config { path: path.to_path_buf(), line, column, message: message.into() }
}

fn read(path: &Path, from: Option<(&Path, &str, &str)>) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| match from {
        Some((cfg, text, key)) => anchored(cfg, text, key, format!("cannot read {}: {e}", path.display())),
        None => CliError::Config { path: path.to_path_buf(), line: 0, column: 0, message: e.to_string() },
    })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

fn load_model(path: &Path) -> Result<ParametricLtiModel, CliError> {
    let text = read(path, None)?;
    let doc: ModelDocument = parse(path, &text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(anchored(path, &text, "schema_version", format!("unsupported schema_version {}", doc.schema_version)));
    }
    let lambda = matrix(&doc.lambda).ok_or_else(|| anchored(path, &text, "lambda", "lambda rows differ in length"))?;
    let model = ParametricLtiModel::new(
        doc.structure,
        DVector::from_vec(doc.theta),
        DVector::from_vec(doc.theta_h),
        doc.noise,
        lambda,
    )
    .map_err(|e| anchored(path, &text, "structure", e.to_string()))?;
    for (key, declared, actual) in [("inputs", doc.inputs, model.n_u), ("outputs", doc.outputs, model.n_y)] {
        if let Some(d) = declared {
            if d != actual {
                return Err(anchored(path, &text, key, format!("declared {d} {key}, structure has {actual}")));
            }
        }
    }
    Ok(model)
}

/// Read and check a configuration and its model document.
pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = read(path, None)?;
    let config: RunConfig = parse(path, &text)?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(anchored(path, &text, "schema_version", format!("unsupported schema_version {}", config.schema_version)));
    }
    config.spec.validate().map_err(|e| anchored(path, &text, "spec", e.to_string()))?;
    if config.scenario.length() == 0 {
        return Err(anchored(path, &text, "scenario", "scenario length must be positive"));
    }
    let model_path = resolve(path, &config.model);
    if !model_path.is_file() {
        return Err(anchored(path, &text, "model", format!("model file {} does not exist", model_path.display())));
    }
    let model = load_model(&model_path)?;
    let mc_lambda = match &config.monte_carlo.lambda {
        None => None,
        Some(rows) => {
            let m = matrix(rows).filter(|m| m.shape() == (model.n_y, model.n_y)).ok_or_else(|| {
                anchored(path, &text, "lambda", format!("noise covariance override must be {n}x{n}", n = model.n_y))
            })?;
            if tdid::linalg::min_eigenvalue(&tdid::linalg::symmetrize(&m)) < 0.0 {
                return Err(anchored(path, &text, "lambda", "noise covariance override must be positive semidefinite"));
            }
            Some(m)
        }
    };
    Ok(LoadedConfig { path: path.to_path_buf(), text, config, model, model_path, mc_lambda })
}
