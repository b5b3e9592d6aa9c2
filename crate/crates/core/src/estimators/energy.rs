//! Fluctuations of the perturbation energy `E_I(σ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::DisorderSample;
use crate::perturbation::PerturbationIndex;
use crate::sampler::ReplicaEnsemble;
use crate::stats::{mean, variance, Estimate};

/// Per-chain traces of `E_I(σ)` on one disorder sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyDeviations {
    pub s_n: f64,
    pub traces: Vec<Vec<f64>>,
}

impl EnergyDeviations {
    pub fn compute(
        ensemble: &ReplicaEnsemble,
        disorder: &DisorderSample,
        index: &PerturbationIndex,
    ) -> Result<Self> {
        crate::error::check_len(disorder.dim(), ensemble.n)?;
        let state = &disorder.perturbation;
        let pos = state
            .position(index)
            .ok_or_else(|| Error::invalid(format!("index {index} is not in the truncation")))?;
        let traces = (0..ensemble.chains)
            .map(|c| ensemble.trace(c, |s| state.energy_observable_at(s, pos)))
            .collect();
        Ok(EnergyDeviations {
            s_n: state.s_n(),
            traces,
        })
    }

    fn thermal_mean(&self) -> f64 {
        mean(&self.traces.iter().map(|t| mean(t)).collect::<Vec<_>>())
    }

    /// `⟨|E_I - ⟨E_I⟩|⟩`, the centre for chain `c` estimated from the other chains.
    fn thermal_deviation(&self) -> f64 {
        let means: Vec<f64> = self.traces.iter().map(|t| mean(t)).collect();
        let total: f64 = means.iter().sum();
        let k = means.len();
        let per_chain: Vec<f64> = self
            .traces
            .iter()
            .zip(&means)
            .map(|(t, m)| {
                let centre = if k > 1 {
                    (total - m) / (k - 1) as f64
                } else {
                    *m
                };
                mean(&t.iter().map(|e| (e - centre).abs()).collect::<Vec<_>>())
            })
            .collect();
        mean(&per_chain)
    }

    fn total_deviation(&self, centre: f64) -> f64 {
        let per_chain: Vec<f64> = self
            .traces
            .iter()
            .map(|t| mean(&t.iter().map(|e| (e - centre).abs()).collect::<Vec<_>>()))
            .collect();
        mean(&per_chain)
    }
}

/// Mean absolute deviation of `E_I` from its quenched mean, split as in the
/// thermal/disorder decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConcentration {
    /// `E⟨|E_I - E⟨E_I⟩|⟩`.
    pub total: Estimate,
    /// `E⟨|E_I - ⟨E_I⟩|⟩`.
    pub thermal: Estimate,
    /// `√(2 s_N)`, the scale the deviation is compared against.
    pub reference: f64,
}

fn summarize(values: &[f64]) -> Estimate {
    let n = values.len();
    Estimate::new(mean(values), (variance(values) / n as f64).sqrt()).with_counts(n, n, 0)
}

/// The quenched centre for disorder `d` is the mean of the other samples'
/// thermal means, so it is independent of the deviations it is compared to.
/// `λ` is whatever each disorder sample drew, which averages over it.
pub fn energy_concentration_statistic(per_disorder: &[EnergyDeviations]) -> Result<EnergyConcentration> {
    let n = per_disorder.len();
    if n < 2 {
        return Err(Error::Insufficient {
            what: "disorder samples",
            needed: 2,
            found: n,
        });
    }
    let thermal_means: Vec<f64> = per_disorder.iter().map(|d| d.thermal_mean()).collect();
    let sum: f64 = thermal_means.iter().sum();
    let total: Vec<f64> = per_disorder
        .iter()
        .zip(&thermal_means)
        .map(|(d, m)| d.total_deviation((sum - m) / (n - 1) as f64))
        .collect();
    let thermal: Vec<f64> = per_disorder.iter().map(|d| d.thermal_deviation()).collect();
    let s_n = per_disorder[0].s_n;
    Ok(EnergyConcentration {
        total: summarize(&total),
        thermal: summarize(&thermal),
        reference: (2.0 * s_n).sqrt(),
    })
}
