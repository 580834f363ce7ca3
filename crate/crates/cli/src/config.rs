//! Configuration files, topology resolution, and exit-code mapping.

use poolsim::cluster::{ClusterError, ClusterTopology};
use poolsim::engine::EngineError;
use poolsim::layouts::LayoutError;
use poolsim::numerics::NumericsError;
use poolsim::pipeline::{Batching, PipelineError, UseCaseConfig};
use serde::Deserialize;
use serde_json::Value;
use std::fmt;
use std::path::Path;

/// A CLI failure carrying its exit code: 1 for usage or configuration
/// problems, 2 for verification failures, 3 for a simulator deadlock.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Verification(String),
    Deadlock(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Deadlock(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Verification(msg) => write!(f, "verification failed: {msg}"),
            CliError::Deadlock(msg) => write!(f, "simulator deadlock: {msg}"),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::GoldenMismatch { .. } => CliError::Verification(e.to_string()),
            PipelineError::Engine(EngineError::Deadlock { .. }) => CliError::Deadlock(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Deadlock { .. } => CliError::Deadlock(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<LayoutError> for CliError {
    fn from(e: LayoutError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

/// A topology with the label used for it in reports.
#[derive(Debug)]
pub struct NamedTopology {
    pub topo: ClusterTopology,
    pub label: String,
}

impl NamedTopology {
    /// The form echoed into report config blocks: the preset name when one
    /// was used, otherwise the parameter object. Either form feeds back
    /// through a config file and resolves to this same topology, so a report's
    /// echoed config re-validates to an identical resolved configuration.
    pub fn echo(&self) -> Value {
        match self.label.as_str() {
            "mempool" | "terapool" => Value::String(self.label.clone()),
            _ => serde_json::json!({
                "cores_per_tile": self.topo.cores_per_tile,
                "tiles_per_group": self.topo.tiles_per_group,
                "num_groups": self.topo.num_groups,
            }),
        }
    }
}

/// Resolves `--topology`: a preset name or a path to a JSON file holding
/// either a preset string or `{cores_per_tile, tiles_per_group, num_groups}`.
pub fn topology_from_flag(flag: &str) -> Result<NamedTopology, CliError> {
    match flag {
        "mempool" => Ok(NamedTopology { topo: ClusterTopology::mempool(), label: "mempool".into() }),
        "terapool" => {
            Ok(NamedTopology { topo: ClusterTopology::terapool(), label: "terapool".into() })
        }
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!(
                    "--topology {path} is neither a preset (mempool, terapool) nor a readable file: {e}"
                ))
            })?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            topology_from_value(&value)
        }
    }
}

/// Resolves a topology from a config-file value: preset string or an inline
/// parameter object (exactly the three size keys).
pub fn topology_from_value(value: &Value) -> Result<NamedTopology, CliError> {
    match value {
        Value::String(name) if name == "mempool" || name == "terapool" => {
            topology_from_flag(name)
        }
        Value::String(other) => Err(CliError::Config(format!(
            "unknown topology preset {other:?}; expected \"mempool\" or \"terapool\""
        ))),
        Value::Object(map) => {
            let get = |key: &str| -> Result<usize, CliError> {
                map.get(key)
                    .and_then(Value::as_u64)
                    .map(|v| v as usize)
                    .ok_or_else(|| {
                        CliError::Config(format!("topology object needs a positive integer {key:?}"))
                    })
            };
            let cores_per_tile = get("cores_per_tile")?;
            let tiles_per_group = get("tiles_per_group")?;
            let num_groups = get("num_groups")?;
            for key in map.keys() {
                if !matches!(key.as_str(), "cores_per_tile" | "tiles_per_group" | "num_groups") {
                    return Err(CliError::Config(format!("unknown topology key {key:?}")));
                }
            }
            let topo = ClusterTopology::custom(cores_per_tile, tiles_per_group, num_groups)?;
            Ok(NamedTopology {
                topo,
                label: format!("custom({cores_per_tile},{tiles_per_group},{num_groups})"),
            })
        }
        _ => Err(CliError::Config(
            "topology must be a preset string or a parameter object".to_string(),
        )),
    }
}

/// On-disk pipeline configuration. Either `preset` (currently only
/// `"usecase-5g"`) or an explicit `use_case` block selects the slot
/// dimensions; both together are ambiguous and rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFileConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub use_case: Option<UseCaseConfig>,
    #[serde(default)]
    pub topology: Option<Value>,
    #[serde(default)]
    pub batching: Option<Batching>,
}

#[derive(Debug)]
pub struct ResolvedPipeline {
    pub cfg: UseCaseConfig,
    pub named: NamedTopology,
    pub batching: Batching,
}

/// Merges file contents and command-line overrides into a runnable pipeline
/// configuration. Precedence: CLI flags, then the file, then defaults
/// (use case `usecase-5g` on the `terapool` preset).
pub fn resolve_pipeline(
    config_path: Option<&Path>,
    preset_flag: Option<&str>,
    topology_flag: Option<&str>,
    seed: Option<u64>,
) -> Result<ResolvedPipeline, CliError> {
    let file = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<PipelineFileConfig>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => PipelineFileConfig::default(),
    };

    let preset = preset_flag.or(file.preset.as_deref());
    let mut cfg = match (preset, file.use_case) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "config selects both a preset and an explicit use_case; pick one".to_string(),
            ))
        }
        (Some("usecase-5g"), None) => UseCaseConfig::usecase_5g(),
        (Some(other), None) => {
            return Err(CliError::Config(format!(
                "unknown use-case preset {other:?}; expected \"usecase-5g\""
            )))
        }
        (None, Some(explicit)) => explicit,
        (None, None) => UseCaseConfig::usecase_5g(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }

    let named = match (topology_flag, file.topology.as_ref()) {
        (Some(flag), _) => topology_from_flag(flag)?,
        (None, Some(value)) => topology_from_value(value)?,
        (None, None) => topology_from_flag("terapool")?,
    };

    Ok(ResolvedPipeline { cfg, named, batching: file.batching.unwrap_or_default() })
}

/// On-disk sweep configuration: a kernel plus optional axes. Absent axes
/// collapse to a single point.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFileConfig {
    /// `fft` (axes: sizes x batches), `mmm` (axis: cores), or `cholesky`
    /// (axis: sizes).
    pub kernel: String,
    #[serde(default)]
    pub topology: Option<Value>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Transform lengths or factorisation sizes.
    #[serde(default)]
    pub sizes: Vec<usize>,
    /// Transforms per core set between barriers (fft only).
    #[serde(default)]
    pub batches: Vec<usize>,
    /// Core counts (mmm only).
    #[serde(default)]
    pub cores: Vec<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub p: Option<usize>,
    /// Decompositions per cholesky point.
    #[serde(default)]
    pub instances: Option<usize>,
}

pub fn load_sweep(path: &Path) -> Result<SweepFileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
