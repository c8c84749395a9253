//! Experiment configuration: one TOML file, with dotted-path overrides.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineConfig;
use crate::models::{BranchLaw, ExplicitTables, ModelKind, Truncation};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for {field}: {message}")]
    Invalid { field: String, message: String },
}

type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Looptree,
    StableTree,
    BrownianCrt,
    FiniteDemo,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelName,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_eps_tail")]
    pub eps_tail: f64,
    #[serde(default = "default_max_children")]
    pub max_children: usize,
    #[serde(default)]
    pub explicit: Option<ExplicitTables>,
}

fn default_eps_tail() -> f64 {
    Truncation::default().eps_tail
}

fn default_max_children() -> usize {
    Truncation::default().max_children
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub depth: usize,
    pub max_depth: usize,
    pub resolution_floor: f64,
    /// Node budget for cut-line expansion.
    pub max_nodes: usize,
    pub node_cache: usize,
    pub memo_cache: usize,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        EngineSection {
            depth: e.depth,
            max_depth: e.max_depth,
            resolution_floor: e.resolution_floor,
            max_nodes: 1_000_000,
            node_cache: e.node_cache,
            memo_cache: e.memo_cache,
        }
    }
}

impl EngineSection {
    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            depth: self.depth,
            max_depth: self.max_depth,
            resolution_floor: self.resolution_floor,
            node_cache: self.node_cache,
            memo_cache: self.memo_cache,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionMode {
    Minkowski,
    Hausdorff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Points per distance matrix.
    pub k: usize,
    pub reps: usize,
    /// Monte Carlo draws per hypothesis estimate.
    pub n_samples: usize,
    /// Moment orders for the contraction and height checks.
    pub moments: Vec<f64>,
    /// Exponent of the size-biased negative moment.
    pub delta: f64,
    pub depths: Vec<usize>,
    pub permutations: usize,
    pub coupled: bool,
    pub mode: DimensionMode,
    pub n_points: usize,
    pub eps_grid: Vec<f64>,
    pub n_centers: usize,
    pub n_mass_points: usize,
    pub radii_grid: Vec<f64>,
    /// Cut-line threshold.
    pub epsilon: f64,
    /// Points per subspace used to estimate heights for the big-subspace count.
    pub height_samples: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            k: 2,
            reps: 100,
            n_samples: 20_000,
            moments: vec![1.0, 2.0],
            delta: 0.1,
            depths: vec![5, 10, 15, 20],
            permutations: 199,
            coupled: true,
            mode: DimensionMode::Minkowski,
            n_points: 2000,
            eps_grid: Vec::new(),
            n_centers: 200,
            n_mass_points: 2000,
            radii_grid: Vec::new(),
            epsilon: 0.01,
            height_samples: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub path: Option<String>,
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { path: None, format: OutputFormat::Json }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Parses a TOML document, applies `key.path=value` overrides, and validates.
pub fn load(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for item in overrides {
        apply_override(&mut doc, item)?;
    }
    let config: ExperimentConfig =
        toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_file(path: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_string(), source })?;
    load(&text, overrides)
}

fn apply_override(doc: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item.split_once('=').ok_or_else(|| invalid(item, "override must look like key.path=value"))?;
    let key = key.trim();
    let value = parse_scalar(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(key, "empty path segment"));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| invalid(key, format!("{part} is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A TOML literal when it parses as one, a bare string otherwise.
fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.eps_tail > 0.0 && m.eps_tail < 1.0) {
            return Err(invalid("model.eps_tail", "must lie in (0,1)"));
        }
        if m.max_children < 8 {
            return Err(invalid("model.max_children", "must be at least 8"));
        }
        match m.kind {
            ModelName::Looptree | ModelName::StableTree if m.beta.is_none() => {
                return Err(invalid("model.beta", "required for this model"));
            }
            ModelName::Explicit if m.explicit.is_none() => {
                return Err(invalid("model.explicit", "explicit models need parents, r, s, l and alpha"));
            }
            _ => {}
        }
        self.law().map_err(|e| invalid("model", e.to_string()))?;
        let e = &self.engine;
        if e.depth > e.max_depth {
            return Err(invalid("engine.depth", format!("{} exceeds engine.max_depth = {}", e.depth, e.max_depth)));
        }
        if !(e.resolution_floor >= 0.0) {
            return Err(invalid("engine.resolution_floor", "must be non-negative"));
        }
        if e.max_nodes == 0 || e.node_cache == 0 || e.memo_cache == 0 {
            return Err(invalid("engine", "max_nodes and cache sizes must be positive"));
        }
        let x = &self.experiment;
        if x.k == 0 {
            return Err(invalid("experiment.k", "must be at least 1"));
        }
        if x.reps == 0 {
            return Err(invalid("experiment.reps", "must be positive"));
        }
        if x.n_samples < 100 {
            return Err(invalid("experiment.n_samples", "must be at least 100"));
        }
        if x.moments.iter().any(|p| !(*p >= 1.0)) {
            return Err(invalid("experiment.moments", "orders must be at least 1"));
        }
        if !(x.delta > 0.0) {
            return Err(invalid("experiment.delta", "must be positive"));
        }
        if x.depths.is_empty() {
            return Err(invalid("experiment.depths", "must not be empty"));
        }
        if x.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("experiment.depths", "must be strictly increasing"));
        }
        if x.depths.last().is_some_and(|&d| d > e.max_depth) {
            return Err(invalid("experiment.depths", "deepest entry exceeds engine.max_depth"));
        }
        if x.eps_grid.iter().chain(&x.radii_grid).any(|v| !(*v > 0.0)) {
            return Err(invalid("experiment.eps_grid", "grid values must be positive"));
        }
        if !(x.epsilon > 0.0) {
            return Err(invalid("experiment.epsilon", "must be positive"));
        }
        Ok(())
    }

    pub fn law(&self) -> std::result::Result<BranchLaw, crate::models::ModelError> {
        let m = &self.model;
        let kind = match m.kind {
            ModelName::Looptree => ModelKind::Looptree { beta: m.beta.unwrap_or(f64::NAN) },
            ModelName::StableTree => ModelKind::StableTree { beta: m.beta.unwrap_or(f64::NAN) },
            ModelName::BrownianCrt => ModelKind::BrownianCrt,
            ModelName::FiniteDemo => ModelKind::FiniteDemo,
            ModelName::Explicit => ModelKind::Explicit(m.explicit.clone().unwrap_or(ExplicitTables {
                parents: Vec::new(),
                r: Vec::new(),
                s: Vec::new(),
                l: Vec::new(),
                alpha: f64::NAN,
            })),
        };
        BranchLaw::new(kind, Truncation { eps_tail: m.eps_tail, max_children: m.max_children })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "seed = 3\n[model]\nkind = \"looptree\"\nbeta = 1.5\n";

    #[test]
    fn overrides_reach_nested_keys() {
        let c = load(BASE, &["engine.depth=12".into(), "experiment.eps_grid=[0.1, 1.0]".into()]).unwrap();
        assert_eq!(c.engine.depth, 12);
        assert_eq!(c.experiment.eps_grid, vec![0.1, 1.0]);
        let c = load(BASE, &["model.kind=finite_demo".into()]).unwrap();
        assert_eq!(c.model.kind, ModelName::FiniteDemo);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(load(BASE, &["engine.dpeth=3".into()]), Err(ConfigError::Parse(_))));
        assert!(load("[model]\nkind = \"looptree\"\nbeta = 1.5\ncolour = 1\n", &[]).is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = load(BASE, &["model.beta=2.5".into()]).unwrap_err();
        assert!(err.to_string().contains("model"), "{err}");
        let err = load(BASE, &["experiment.depths=[5, 3]".into()]).unwrap_err();
        assert!(err.to_string().contains("experiment.depths"), "{err}");
        let err = load("[model]\nkind = \"stable_tree\"\n", &[]).unwrap_err();
        assert!(err.to_string().contains("model.beta"), "{err}");
    }
}
