//! Effect of the Poisson perturbation on mean multioverlaps.

use serde::{Deserialize, Serialize};

use super::{group_moments, multioverlap_oracle_moments, MultioverlapIndex};
use crate::error::{Error, Result};
use crate::models::DisorderSample;
use crate::oracle::site_measures;
use crate::sampler::ReplicaEnsemble;
use crate::stats::{mean, variance, Estimate};

/// `⟨R⟩` at full and zero perturbation strength on one disorder sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSample {
    pub perturbed: f64,
    pub unperturbed: f64,
}

impl GapSample {
    /// Both ensembles must come from the same chain seeds so that their
    /// noise is shared.
    pub fn from_ensembles(
        perturbed: &ReplicaEnsemble,
        unperturbed: &ReplicaEnsemble,
        k: &MultioverlapIndex,
    ) -> Result<Self> {
        if perturbed.n != unperturbed.n
            || perturbed.chains != unperturbed.chains
            || perturbed.samples_per_chain != unperturbed.samples_per_chain
            || perturbed.lineage != unperturbed.lineage
        {
            return Err(Error::invalid(
                "perturbed and unperturbed ensembles do not share disorder and chain seeds",
            ));
        }
        Ok(GapSample {
            perturbed: mean(&group_moments(perturbed, k)?.first),
            unperturbed: mean(&group_moments(unperturbed, k)?.first),
        })
    }

    pub fn gap(&self) -> f64 {
        (self.perturbed - self.unperturbed).abs()
    }
}

/// `E|⟨R⟩_{t=1} - ⟨R⟩_{t=0}|` over disorder samples.
pub fn mean_gap(samples: &[GapSample]) -> Result<Estimate> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Insufficient {
            what: "disorder samples",
            needed: 1,
            found: 0,
        });
    }
    let gaps: Vec<f64> = samples.iter().map(GapSample::gap).collect();
    let se = if n > 1 {
        (variance(&gaps) / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(Estimate::new(mean(&gaps), se).with_counts(n, n, 0))
}

/// Exact `|⟨R⟩_{t=1} - ⟨R⟩_{t=0}|` for a separable disorder sample.
pub fn oracle_gap(disorder: &DisorderSample, eps: f64, k: &MultioverlapIndex) -> Result<f64> {
    let on = site_measures(&disorder.with_strength(1.0)?, eps)?;
    let off = site_measures(&disorder.with_strength(0.0)?, eps)?;
    Ok((multioverlap_oracle_moments(&on, k).0 - multioverlap_oracle_moments(&off, k).0).abs())
}
