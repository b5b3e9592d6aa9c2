//! Disorder variance of free entropies shifted by bounded potentials.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BOOTSTRAP_REPS;
use crate::error::{Error, Result};
use crate::models::DisorderSample;
use crate::oracle::free_entropy;
use crate::rng::SeedLineage;
use crate::stats::{bootstrap_stderr, variance, Estimate};

/// Finite dictionary of potentials `V` with `|V| ≤ s_N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialTag {
    /// `V = 0`.
    Zero,
    /// `V = s_N`.
    Constant,
    /// `V = (s_N/N) Σ_i σ_i`.
    MagnetizationPlus,
    /// `V = -(s_N/N) Σ_i σ_i`.
    MagnetizationMinus,
}

impl PotentialTag {
    pub const ALL: [PotentialTag; 4] = [
        PotentialTag::Zero,
        PotentialTag::Constant,
        PotentialTag::MagnetizationPlus,
        PotentialTag::MagnetizationMinus,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PotentialTag::Zero => "zero",
            PotentialTag::Constant => "constant",
            PotentialTag::MagnetizationPlus => "magnetization-plus",
            PotentialTag::MagnetizationMinus => "magnetization-minus",
        }
    }

    /// `ln ∫ e^{H + V}` for one disorder sample.
    pub fn free_entropy(&self, disorder: &DisorderSample, eps: f64, s_n: f64) -> Result<f64> {
        let n = disorder.dim() as f64;
        let shifted = |delta: f64| DisorderSample {
            model: std::sync::Arc::new(disorder.model.with_field_shift(delta)),
            ..disorder.clone()
        };
        match self {
            PotentialTag::Zero => free_entropy(disorder, eps),
            PotentialTag::Constant => Ok(free_entropy(disorder, eps)? + s_n),
            PotentialTag::MagnetizationPlus => free_entropy(&shifted(s_n / n), eps),
            PotentialTag::MagnetizationMinus => free_entropy(&shifted(-s_n / n), eps),
        }
    }
}

impl fmt::Display for PotentialTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PotentialTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PotentialTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown potential {s:?}")))
    }
}

/// Largest disorder variance of `F^{(V)}` over the given potentials, with the
/// potential that attains it. Being a maximum over a finite dictionary, it is
/// a lower bound on the supremum over all bounded potentials.
pub fn free_entropy_variance(
    disorders: &[DisorderSample],
    eps: f64,
    s_n: f64,
    tags: &[PotentialTag],
    lineage: &SeedLineage,
) -> Result<(PotentialTag, Estimate)> {
    let samples = tags
        .iter()
        .map(|tag| {
            let values = crate::par::try_map_range(disorders.len(), |i| tag.free_entropy(&disorders[i], eps, s_n))?;
            Ok((*tag, values))
        })
        .collect::<Result<Vec<_>>>()?;
    max_disorder_variance(&samples, lineage)
}

/// Maximum over potentials of the sample variance of per-disorder free
/// entropies; bootstrap error over disorder samples.
pub fn max_disorder_variance(
    samples: &[(PotentialTag, Vec<f64>)],
    lineage: &SeedLineage,
) -> Result<(PotentialTag, Estimate)> {
    if samples.is_empty() {
        return Err(Error::invalid("need at least one potential"));
    }
    let mut best: Option<(PotentialTag, Estimate)> = None;
    for (j, (tag, values)) in samples.iter().enumerate() {
        let n = values.len();
        if n < 2 {
            return Err(Error::Insufficient {
                what: "disorder samples",
                needed: 2,
                found: n,
            });
        }
        let se = bootstrap_stderr(n, BOOTSTRAP_REPS, &lineage.child(j as u64), |idx| {
            variance(&idx.iter().map(|&i| values[i]).collect::<Vec<_>>())
        });
        let est = Estimate::new(variance(values), se).with_counts(n, n, 0);
        if best.as_ref().is_none_or(|(_, b)| est.value > b.value) {
            best = Some((*tag, est));
        }
    }
    Ok(best.expect("samples is non-empty"))
}
