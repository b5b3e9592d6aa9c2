//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{FdsObservable, HFunction, MultioverlapIndex, PotentialTag};
use crate::models::ModelSpec;
use crate::oracle::GRID_MAX_DIM;
use crate::perturbation::{PerturbationIndex, RegularizationSchedule, TruncationPolicy};
use crate::sampler::McmcConfig;

/// One estimator to evaluate in every cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorSpec {
    ThermalVariance {
        k: Vec<MultioverlapIndex>,
    },
    QuenchedVariance {
        k: Vec<MultioverlapIndex>,
    },
    /// Statistic on sites `0..arity` per disorder, plus the unbiased second
    /// moment over up to `tuples` disjoint site tuples.
    ThermalDecorrelation {
        h: HFunction,
        arity: usize,
        #[serde(default = "default_tuples")]
        tuples: usize,
    },
    QuenchedDecorrelation {
        h: HFunction,
        arity: usize,
        #[serde(default = "default_tuples")]
        tuples: usize,
    },
    EnergyConcentration {
        index: PerturbationIndex,
    },
    Fds {
        index: PerturbationIndex,
        observable: FdsObservable,
        replicas: usize,
        #[serde(default = "default_strata")]
        strata: usize,
    },
    FreeEntropyVariance {
        #[serde(default = "all_potentials")]
        potentials: Vec<PotentialTag>,
    },
    /// `E|⟨R⟩_{t=1} - ⟨R⟩_{t=0}|`, evaluated in the `t = 1` cells.
    MeanGap {
        k: Vec<MultioverlapIndex>,
    },
    BrascampLieb {
        k: Vec<MultioverlapIndex>,
    },
}

fn default_tuples() -> usize {
    16
}
fn default_strata() -> usize {
    4
}
fn all_potentials() -> Vec<PotentialTag> {
    PotentialTag::ALL.to_vec()
}
fn default_t() -> Vec<f64> {
    vec![1.0]
}
fn default_chains() -> usize {
    8
}

impl EstimatorSpec {
    /// Chains needed per ensemble.
    fn chains_needed(&self) -> usize {
        match self {
            EstimatorSpec::ThermalVariance { k } | EstimatorSpec::BrascampLieb { k } => {
                2 * k.iter().map(|k| k.replicas()).max().unwrap_or(1)
            }
            EstimatorSpec::QuenchedVariance { k } | EstimatorSpec::MeanGap { k } => {
                k.iter().map(|k| k.replicas()).max().unwrap_or(1)
            }
            EstimatorSpec::ThermalDecorrelation { arity, .. } => 2 * arity,
            EstimatorSpec::QuenchedDecorrelation { .. } | EstimatorSpec::EnergyConcentration { .. } => 2,
            EstimatorSpec::Fds { replicas, .. } => (*replicas).max(2),
            EstimatorSpec::FreeEntropyVariance { .. } => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub model: ModelSpec,
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub schedule: RegularizationSchedule,
    #[serde(default = "default_t")]
    pub t_values: Vec<f64>,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default = "default_chains")]
    pub chains: usize,
    pub n_disorder: usize,
    pub seed: u64,
    #[serde(default)]
    pub truncation: TruncationPolicy,
    #[serde(default)]
    pub estimators: Vec<EstimatorSpec>,
    /// Output directory; the command line takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment_id.trim().is_empty() {
            return Err(Error::invalid("experiment_id must not be empty"));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::invalid("n_grid must be a non-empty list of positive sizes"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("n_grid must be strictly increasing"));
        }
        self.schedule.validate(&self.n_grid)?;
        if self.t_values.is_empty() {
            return Err(Error::invalid("t_values must not be empty"));
        }
        if let Some(&t) = self.t_values.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                domain: "[0, 1]",
            });
        }
        let mut ts = self.t_values.clone();
        ts.sort_by(f64::total_cmp);
        if ts.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("t_values must be distinct"));
        }
        self.mcmc.validate()?;
        if self.n_disorder == 0 {
            return Err(Error::invalid("n_disorder must be positive"));
        }
        let retained = self.truncation.indices();
        for e in &self.estimators {
            let need = e.chains_needed();
            if self.chains < need {
                return Err(Error::invalid(format!(
                    "estimator {e:?} needs at least {need} chains, config has {}",
                    self.chains
                )));
            }
            match e {
                EstimatorSpec::ThermalVariance { k }
                | EstimatorSpec::QuenchedVariance { k }
                | EstimatorSpec::MeanGap { k }
                | EstimatorSpec::BrascampLieb { k }
                    if k.is_empty() =>
                {
                    return Err(Error::invalid("multioverlap list must not be empty"));
                }
                EstimatorSpec::ThermalDecorrelation { arity, tuples, .. }
                | EstimatorSpec::QuenchedDecorrelation { arity, tuples, .. } => {
                    if *arity == 0 || *tuples == 0 || *arity > self.n_grid[0] {
                        return Err(Error::invalid(format!(
                            "decorrelation needs 1 <= arity <= smallest N and at least one tuple, got arity {arity}"
                        )));
                    }
                }
                EstimatorSpec::EnergyConcentration { index } | EstimatorSpec::Fds { index, .. }
                    if !retained.contains(index) =>
                {
                    return Err(Error::invalid(format!("index {index} is not in the truncation")));
                }
                _ => {}
            }
            let quenched = !matches!(
                e,
                EstimatorSpec::ThermalVariance { .. }
                    | EstimatorSpec::ThermalDecorrelation { .. }
                    | EstimatorSpec::BrascampLieb { .. }
            );
            if quenched && self.n_disorder < 2 {
                return Err(Error::invalid(format!("estimator {e:?} needs at least 2 disorder samples")));
            }
            if let EstimatorSpec::QuenchedDecorrelation { arity, .. } = e {
                if self.n_disorder < *arity {
                    return Err(Error::invalid("quenched decorrelation needs n_disorder >= arity"));
                }
            }
            if let EstimatorSpec::Fds {
                observable,
                replicas,
                strata,
                ..
            } = e
            {
                if *replicas < observable.min_replicas() || *strata == 0 {
                    return Err(Error::invalid("FdS needs enough replicas for its observable and a positive stratum count"));
                }
                if self.n_disorder < 2 * strata {
                    return Err(Error::invalid("FdS needs at least two disorder samples per lambda stratum"));
                }
            }
            if let EstimatorSpec::MeanGap { .. } = e {
                if !self.t_values.contains(&1.0) {
                    return Err(Error::invalid("mean-gap is evaluated in t = 1 cells; add 1.0 to t_values"));
                }
            }
            if let EstimatorSpec::FreeEntropyVariance { potentials } = e {
                if potentials.is_empty() {
                    return Err(Error::invalid("free-entropy-variance needs at least one potential"));
                }
                if !self.model.is_separable() && *self.n_grid.last().unwrap() > GRID_MAX_DIM {
                    return Err(Error::Unsupported(format!(
                        "free entropies of coupled models are exact only for N <= {GRID_MAX_DIM}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
experiment_id = "rf-quenched"
n_grid = [16, 64]
n_disorder = 8
seed = 7
t_values = [0.0, 1.0]

[model]
family = "random-field"
field_std = 1.0

[schedule.eps]
rule = "cube-root-density"
[schedule.s]
rule = "ceil-sqrt"

[mcmc]
samples = 100

[[estimators]]
kind = "quenched-variance"
k = ["1-1"]

[[estimators]]
kind = "fds"
index = [0, 1]
observable = "spin1"
replicas = 1
strata = 2
"#;

    #[test]
    fn parses_and_validates() {
        let c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.chains, 8);
        assert_eq!(c.mcmc.burn_in, 100);
        assert_eq!(c.estimators.len(), 2);
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_grids_and_fields() {
        let mut c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        c.n_grid = vec![64, 16];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        c.n_disorder = 3;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml(&format!("{EXAMPLE}\nbogus = 1\n")).is_err());
        let mut c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        c.t_values = vec![1.5];
        assert!(c.validate().is_err());
    }
}
