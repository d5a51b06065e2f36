//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{RunConfig, StepSchedule, DEFAULT_DIVERGENCE_THRESHOLD};
use crate::environment::{make_heterogeneous_suite, BaseSpec, Environment, LabeledData, SensitivityGrid, SensitivityLayout};
use crate::harness::dataset::{heterogeneous_corpus, load_dataset, partition_agents, synthetic_corpus, DatasetBundle, HeterogeneousCorpus, SyntheticCorpus};
use crate::metrics::{RateWindow, RecorderOptions};
use crate::oracle::OracleConfig;
use crate::theory::DEFAULT_DELTA;
use crate::topology::{
    metropolis_weights, uniform_neighbor_weights, validate_schedule, Communication, Graph, GraphSchedule,
    ScheduleCertificate,
};
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    pub name: String,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub run: RunSection,
    pub steps: StepSchedule,
    pub topology: TopologyConfig,
    pub environment: EnvironmentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub iterations: u64,
    pub batch: usize,
    pub record_every: u64,
    pub theta0: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub divergence_threshold: f64,
    #[serde(default)]
    pub parallel_agents: bool,
}

fn default_threshold() -> f64 {
    DEFAULT_DIVERGENCE_THRESHOLD
}

impl RunSection {
    pub fn with_seed(&self, seed: u64) -> RunConfig {
        RunConfig {
            iterations: self.iterations,
            batch: self.batch,
            record_every: self.record_every,
            seed,
            theta0: self.theta0.clone(),
            divergence_threshold: self.divergence_threshold,
            parallel_agents: self.parallel_agents,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Complete,
    Star,
    EdgeList,
    Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    #[default]
    Uniform,
    Metropolis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub n: usize,
    #[serde(default)]
    pub weights: WeightRule,
    /// Edge-list file for `edge_list`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_file: Option<PathBuf>,
    /// Schedule file for `schedule`, or the builtin `ring_alternating`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    Gaussian,
    Strategic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridConfig {
    /// Evenly spaced multipliers over `[1 - spread, 1 + spread]`.
    Linear {
        spread: f64,
        #[serde(default)]
        layout: SensitivityLayout,
    },
    Homogeneous,
    /// Explicit multipliers of `eps_avg`; their mean must be 1.
    Multipliers {
        values: Vec<f64>,
        #[serde(default)]
        layout: SensitivityLayout,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSection {
    /// Base mean shared by all agents; its length is the dimension.
    pub zbar: Vec<f64>,
    /// Optional per-agent base means, overriding `zbar`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zbar_per_agent: Option<Vec<Vec<f64>>>,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategicSection {
    /// CSV corpus (features then a 0/1 label per row).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Generated corpus, used when `dataset` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticCorpus>,
    /// Per-agent generated shards; `per_agent` and `test_split` are then
    /// taken from this section instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub federated: Option<HeterogeneousCorpus>,
    /// Keep only the first `columns` feature columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<usize>,
    #[serde(default)]
    pub standardize: bool,
    pub beta: f64,
    #[serde(default)]
    pub per_agent: usize,
    #[serde(default)]
    pub test_split: usize,
    #[serde(default)]
    pub partition_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub kind: EnvironmentKind,
    pub n: usize,
    pub eps_avg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<GridConfig>,
    /// Explicit sensitivities; their mean must equal `eps_avg`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    #[serde(default)]
    pub homogeneous: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategic: Option<StrategicSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    EpsAvg,
    /// 0 = heterogeneous, 1 = homogeneous populations.
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub risk: bool,
    pub grad_norm: bool,
    pub accuracy: bool,
    pub rate_fraction: f64,
    pub rate_t_min: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let w = RateWindow::default();
        Self {
            risk: true,
            grad_norm: true,
            accuracy: false,
            rate_fraction: w.fraction,
            rate_t_min: w.t_min,
        }
    }
}

impl MetricsConfig {
    pub fn window(&self) -> RateWindow {
        RateWindow {
            fraction: self.rate_fraction,
            t_min: self.rate_t_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub delta: f64,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA }
    }
}

/// Everything needed to run one sweep point.
pub struct Instance {
    pub env: Environment,
    pub comm: Communication,
    /// Test split of a strategic corpus.
    pub test: Option<Arc<LabeledData>>,
    pub bundle: Option<Arc<DatasetBundle>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.topology.edge_file.as_mut() {
            fix(p);
        }
        if let Some(s) = self.topology.schedule_file.as_mut() {
            if s != "ring_alternating" && Path::new(s).is_relative() {
                *s = base.join(&*s).to_string_lossy().into_owned();
            }
        }
        if let Some(p) = self.environment.strategic.as_mut().and_then(|s| s.dataset.as_mut()) {
            fix(p);
        }
    }

    /// SHA-256 of the canonical TOML emission.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        self.run.with_seed(0).validate()?;
        self.steps.validate()?;
        let env = &self.environment;
        if env.n != self.topology.n {
            return Err(Error::Config(format!(
                "environment.n = {} but topology.n = {}",
                env.n, self.topology.n
            )));
        }
        if env.eps_grid.is_some() && env.eps_list.is_some() {
            return Err(Error::Config("give eps_grid or eps_list, not both".into()));
        }
        match env.kind {
            EnvironmentKind::Gaussian if env.gaussian.is_none() => {
                return Err(Error::Config("gaussian environment needs [environment.gaussian]".into()))
            }
            EnvironmentKind::Strategic => match &env.strategic {
                None => return Err(Error::Config("strategic environment needs [environment.strategic]".into())),
                Some(s) if s.dataset.is_none() && s.synthetic.is_none() && s.federated.is_none() => {
                    return Err(Error::Config("strategic environment needs dataset, synthetic or federated".into()))
                }
                Some(s) if s.federated.as_ref().is_some_and(|f| f.agents != env.n) => {
                    return Err(Error::Config("federated.agents must equal environment.n".into()))
                }
                _ => {}
            },
            _ => {}
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
        }
        if !(self.theory.delta > 0.0) {
            return Err(Error::Config("theory.delta must be > 0".into()));
        }
        Ok(())
    }

    /// Sweep points: the configured values, or the config itself.
    pub fn sweep_points(&self) -> Vec<(String, ExperimentConfig)> {
        match &self.sweep {
            None => vec![(format_value(self.environment.eps_avg), self.clone())],
            Some(s) => s
                .values
                .iter()
                .map(|&v| {
                    let mut c = self.clone();
                    c.sweep = None;
                    match s.axis {
                        SweepAxis::EpsAvg => c.environment.eps_avg = v,
                        SweepAxis::Homogeneous => c.environment.homogeneous = v != 0.0,
                    }
                    let label = match s.axis {
                        SweepAxis::EpsAvg => format_value(v),
                        SweepAxis::Homogeneous => if v != 0.0 { "homogeneous" } else { "heterogeneous" }.to_string(),
                    };
                    (label, c)
                })
                .collect(),
        }
    }

    pub fn step_schedule(&self) -> StepSchedule {
        self.steps
    }

    pub fn recorder_options(&self, theta_ps: Option<nalgebra::DVector<f64>>, test: Option<Arc<LabeledData>>) -> RecorderOptions {
        RecorderOptions {
            theta_ps,
            risk: self.metrics.risk,
            grad_norm: self.metrics.grad_norm,
            test: if self.metrics.accuracy { test } else { None },
        }
    }

    pub fn communication(&self) -> Result<Communication> {
        let t = &self.topology;
        let graph = match t.kind {
            TopologyKind::Ring => Graph::ring(t.n)?,
            TopologyKind::Complete => Graph::complete(t.n)?,
            TopologyKind::Star => Graph::star(t.n)?,
            TopologyKind::EdgeList => {
                let path = t
                    .edge_file
                    .as_ref()
                    .ok_or_else(|| Error::Config("edge_list topology needs edge_file".into()))?;
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Graph::parse_edge_list(t.n, &text)?
            }
            TopologyKind::Schedule => {
                let source = t
                    .schedule_file
                    .as_ref()
                    .ok_or_else(|| Error::Config("schedule topology needs schedule_file".into()))?;
                let schedule = if source == "ring_alternating" {
                    GraphSchedule::ring_alternating(t.n)?
                } else {
                    load_schedule(Path::new(source), t.n)?
                };
                if let ScheduleCertificate::Violation { start } = validate_schedule(&schedule) {
                    return Err(Error::Config(format!(
                        "schedule is not {}-connected: window starting at {start} has a disconnected union",
                        schedule.window()
                    )));
                }
                return Ok(Communication::TimeVarying(schedule.mixing()));
            }
        };
        let w = match t.weights {
            WeightRule::Uniform => uniform_neighbor_weights(&graph)?,
            WeightRule::Metropolis => metropolis_weights(&graph)?,
        };
        Ok(Communication::Static(w))
    }

    fn grid(&self) -> Result<SensitivityGrid> {
        let env = &self.environment;
        if let Some(list) = &env.eps_list {
            if list.len() != env.n {
                return Err(Error::Shape {
                    expected: env.n,
                    got: list.len(),
                });
            }
            let mean = list.iter().sum::<f64>() / list.len() as f64;
            if (mean - env.eps_avg).abs() > 1e-12 * mean.abs().max(1.0) {
                return Err(Error::Config(format!("eps_list mean {mean} differs from eps_avg {}", env.eps_avg)));
            }
            if mean == 0.0 {
                return SensitivityGrid::homogeneous(env.n);
            }
            return SensitivityGrid::from_multipliers(list.iter().map(|e| e / mean).collect());
        }
        match env.eps_grid.as_ref().unwrap_or(&GridConfig::Homogeneous) {
            GridConfig::Linear { spread, layout } => Ok(SensitivityGrid::linear(env.n, *spread)?.arranged(*layout)),
            GridConfig::Homogeneous => SensitivityGrid::homogeneous(env.n),
            GridConfig::Multipliers { values, layout } => {
                if values.len() != env.n {
                    return Err(Error::Shape {
                        expected: env.n,
                        got: values.len(),
                    });
                }
                Ok(SensitivityGrid::from_multipliers(values.clone())?.arranged(*layout))
            }
        }
    }

    /// Loads or generates and partitions the strategic corpus.
    pub fn dataset_bundle(&self) -> Result<Option<DatasetBundle>> {
        let Some(s) = &self.environment.strategic else {
            return Ok(None);
        };
        if self.environment.kind != EnvironmentKind::Strategic {
            return Ok(None);
        }
        if let Some(fed) = &s.federated {
            let bundle = heterogeneous_corpus(fed)?;
            return Ok(Some(if s.standardize { bundle.standardized() } else { bundle }));
        }
        let table = match (&s.dataset, &s.synthetic) {
            (Some(path), _) => load_dataset(path, s.columns)?,
            (None, Some(gen)) => synthetic_corpus(gen)?,
            (None, None) => return Err(Error::Config("strategic environment needs dataset or synthetic".into())),
        };
        let bundle = partition_agents(&table, self.environment.n, s.per_agent, s.test_split, s.partition_seed)?;
        Ok(Some(if s.standardize { bundle.standardized() } else { bundle }))
    }

    /// Builds environment and communication, reusing `bundle` if given.
    pub fn instantiate_with(&self, bundle: Option<Arc<DatasetBundle>>) -> Result<Instance> {
        let env_cfg = &self.environment;
        let grid = self.grid()?;
        let (base, test, bundle) = match env_cfg.kind {
            EnvironmentKind::Gaussian => {
                let g = env_cfg.gaussian.as_ref().expect("validated");
                let zbar = match &g.zbar_per_agent {
                    Some(per) => per.iter().map(|z| nalgebra::DVector::from_vec(z.clone())).collect(),
                    None => vec![nalgebra::DVector::from_vec(g.zbar.clone())],
                };
                (
                    BaseSpec::Gaussian {
                        zbar,
                        sigma2: g.sigma2,
                    },
                    None,
                    None,
                )
            }
            EnvironmentKind::Strategic => {
                let s = env_cfg.strategic.as_ref().expect("validated");
                let bundle = match bundle {
                    Some(b) => b,
                    None => Arc::new(self.dataset_bundle()?.expect("strategic")),
                };
                (
                    BaseSpec::Strategic {
                        shards: bundle.shards.clone(),
                        beta: s.beta,
                    },
                    bundle.test.clone(),
                    Some(bundle),
                )
            }
        };
        let env = make_heterogeneous_suite(env_cfg.eps_avg, &grid, base, env_cfg.homogeneous)?;
        Ok(Instance {
            env,
            comm: self.communication()?,
            test,
            bundle,
        })
    }

    pub fn instantiate(&self) -> Result<Instance> {
        self.instantiate_with(None)
    }
}

/// Directory-friendly rendering of a sweep value.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    window: usize,
    graph: Vec<ScheduleGraph>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleGraph {
    edges: Vec<[usize; 2]>,
}

/// Reads a schedule file:
///
/// ```toml
/// window = 2
/// [[graph]]
/// edges = [[0, 1], [2, 3]]
/// [[graph]]
/// edges = [[1, 2], [3, 0]]
/// ```
pub fn load_schedule(path: &Path, n: usize) -> Result<GraphSchedule> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schedule(&text, n)
}

pub fn parse_schedule(text: &str, n: usize) -> Result<GraphSchedule> {
    let file: ScheduleFile = toml::from_str(text).map_err(|e| Error::Config(format!("schedule file: {e}")))?;
    let graphs = file
        .graph
        .iter()
        .map(|g| Graph::from_edges(n, g.edges.iter().map(|e| (e[0], e[1]))))
        .collect::<Result<Vec<_>>>()?;
    GraphSchedule::new(graphs, file.window)
}
