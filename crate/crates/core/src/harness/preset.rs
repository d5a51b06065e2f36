//! Ready-made experiment configurations.
//!
//! * `gaussian_mean`: scalar mean estimation on a 25-agent ring, swept over
//!   the average sensitivity around the stability threshold.
//! * `spam_logistic`: strategic logistic regression on a spam-style binary
//!   corpus split over 25 agents.
//! * `hetero_vs_homo`: logistic regression on per-agent generated data,
//!   contrasting heterogeneous shards with a shared pooled population.
//!
//! The same configurations ship as TOML files in the crate's `presets/`
//! directory.

use crate::engine::{StepSchedule, DEFAULT_DIVERGENCE_THRESHOLD};
use crate::environment::SensitivityLayout;
use crate::harness::config::*;
use crate::harness::dataset::{HeterogeneousCorpus, SyntheticCorpus};
use crate::oracle::OracleConfig;
use crate::{Error, Result};

pub const PRESET_NAMES: [&str; 3] = ["gaussian_mean", "spam_logistic", "hetero_vs_homo"];

pub const RING_AGENTS: usize = 25;

/// Sensitivity spread that puts the most sensitive agent at `1.01` when
/// `eps_avg = 0.9`.
pub const GAUSSIAN_SPREAD: f64 = 1.01 / 0.9 - 1.0;

fn ring() -> TopologyConfig {
    TopologyConfig {
        kind: TopologyKind::Ring,
        n: RING_AGENTS,
        weights: WeightRule::Uniform,
        edge_file: None,
        schedule_file: None,
    }
}

fn seeds(count: u64) -> Vec<u64> {
    (0..count).collect()
}

pub fn gaussian_mean() -> ExperimentConfig {
    ExperimentConfig {
        config_version: CONFIG_VERSION,
        name: "gaussian_mean".into(),
        seeds: seeds(10),
        run: RunSection {
            iterations: 200_000,
            batch: 1,
            record_every: 100,
            theta0: vec![0.0],
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            parallel_agents: false,
        },
        steps: StepSchedule::InverseTime { a0: 50.0, a1: 1e4 },
        topology: ring(),
        environment: EnvironmentConfig {
            kind: EnvironmentKind::Gaussian,
            n: RING_AGENTS,
            eps_avg: 0.9,
            eps_grid: Some(GridConfig::Linear {
                spread: GAUSSIAN_SPREAD,
                layout: SensitivityLayout::Interleaved,
            }),
            eps_list: None,
            homogeneous: false,
            gaussian: Some(GaussianSection {
                zbar: vec![10.0],
                zbar_per_agent: None,
                sigma2: 50.0,
            }),
            strategic: None,
        },
        sweep: Some(SweepConfig {
            axis: SweepAxis::EpsAvg,
            values: vec![0.9, 1.01, 1.05, 1.1],
        }),
        metrics: MetricsConfig::default(),
        theory: TheorySection::default(),
        oracle: OracleConfig::default(),
    }
}

pub fn spam_logistic() -> ExperimentConfig {
    ExperimentConfig {
        config_version: CONFIG_VERSION,
        name: "spam_logistic".into(),
        seeds: seeds(10),
        run: RunSection {
            iterations: 200_000,
            batch: 32,
            record_every: 1000,
            theta0: vec![0.0],
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            parallel_agents: false,
        },
        steps: StepSchedule::InverseTime { a0: 50.0, a1: 1e5 },
        topology: ring(),
        environment: EnvironmentConfig {
            kind: EnvironmentKind::Strategic,
            n: RING_AGENTS,
            eps_avg: 1.0,
            eps_grid: Some(GridConfig::Linear {
                spread: 0.6,
                layout: SensitivityLayout::Sorted,
            }),
            eps_list: None,
            homogeneous: false,
            gaussian: None,
            strategic: Some(StrategicSection {
                dataset: None,
                synthetic: Some(SyntheticCorpus {
                    rows: 4601,
                    dim: 48,
                    seed: 2023,
                    separation: 1.5,
                    positive_rate: 0.4,
                }),
                federated: None,
                columns: None,
                standardize: true,
                beta: 1e-4,
                per_agent: 138,
                test_split: 1150,
                partition_seed: 0,
            }),
        },
        sweep: Some(SweepConfig {
            axis: SweepAxis::EpsAvg,
            values: vec![0.01, 0.1, 1.0],
        }),
        metrics: MetricsConfig {
            accuracy: true,
            ..MetricsConfig::default()
        },
        theory: TheorySection::default(),
        oracle: OracleConfig::default(),
    }
}

/// Step-size rows for the two sensitivity levels of the generated-data
/// comparison: gentle steps when populations react strongly.
pub fn hetero_steps(eps: f64) -> StepSchedule {
    if eps >= 1.0 {
        StepSchedule::InverseTime { a0: 1.0, a1: 1000.0 }
    } else {
        StepSchedule::InverseTime { a0: 200.0, a1: 1000.0 }
    }
}

pub fn hetero_vs_homo(eps: f64) -> ExperimentConfig {
    ExperimentConfig {
        config_version: CONFIG_VERSION,
        name: "hetero_vs_homo".into(),
        seeds: seeds(10),
        run: RunSection {
            iterations: 20_000,
            batch: 32,
            record_every: 100,
            theta0: vec![0.0],
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            parallel_agents: false,
        },
        steps: hetero_steps(eps),
        topology: ring(),
        environment: EnvironmentConfig {
            kind: EnvironmentKind::Strategic,
            n: RING_AGENTS,
            eps_avg: eps,
            eps_grid: Some(GridConfig::Homogeneous),
            eps_list: None,
            homogeneous: false,
            gaussian: None,
            strategic: Some(StrategicSection {
                dataset: None,
                synthetic: None,
                federated: Some(HeterogeneousCorpus {
                    agents: RING_AGENTS,
                    per_agent: 100,
                    test_per_agent: 20,
                    dim: 100,
                    heterogeneity: 1.0,
                    seed: 2019,
                }),
                columns: None,
                standardize: false,
                beta: 1e-4,
                per_agent: 0,
                test_split: 0,
                partition_seed: 0,
            }),
        },
        sweep: Some(SweepConfig {
            axis: SweepAxis::Homogeneous,
            values: vec![0.0, 1.0],
        }),
        metrics: MetricsConfig {
            accuracy: true,
            ..MetricsConfig::default()
        },
        theory: TheorySection::default(),
        oracle: OracleConfig::default(),
    }
}

/// Looks a preset up by name (`hetero_vs_homo` at `eps = 0.1`).
pub fn by_name(name: &str) -> Result<ExperimentConfig> {
    match name {
        "gaussian_mean" => Ok(gaussian_mean()),
        "spam_logistic" => Ok(spam_logistic()),
        "hetero_vs_homo" => Ok(hetero_vs_homo(0.1)),
        other => Err(Error::Config(format!(
            "unknown preset {other:?}; expected one of {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}
