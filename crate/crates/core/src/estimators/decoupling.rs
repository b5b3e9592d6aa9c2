//! Decorrelation of single-site functions across distinct sites.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BOOTSTRAP_REPS;
use crate::error::{Error, Result};
use crate::rng::SeedLineage;
use crate::sampler::ReplicaEnsemble;
use crate::stats::{bootstrap_stderr, distinct_product_mean, mean, Estimate};

/// Fixed dictionary of test functions on `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HFunction {
    Identity,
    Square,
    /// `x ↦ (x + 1)/2`.
    HalfShift,
    /// `x ↦ tanh(2x)`.
    Tanh2,
}

impl HFunction {
    pub const ALL: [HFunction; 4] = [
        HFunction::Identity,
        HFunction::Square,
        HFunction::HalfShift,
        HFunction::Tanh2,
    ];

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            HFunction::Identity => x,
            HFunction::Square => x * x,
            HFunction::HalfShift => 0.5 * (x + 1.0),
            HFunction::Tanh2 => (2.0 * x).tanh(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            HFunction::Identity => 1.0,
            HFunction::Square => 2.0 * x,
            HFunction::HalfShift => 0.5,
            HFunction::Tanh2 => 2.0 / (2.0 * x).cosh().powi(2),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HFunction::Identity => "identity",
            HFunction::Square => "square",
            HFunction::HalfShift => "half-shift",
            HFunction::Tanh2 => "tanh2",
        }
    }
}

impl fmt::Display for HFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        HFunction::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown h function {s:?}")))
    }
}

fn check_sites(sites: &[usize], n: usize) -> Result<()> {
    if sites.is_empty() {
        return Err(Error::invalid("need at least one site"));
    }
    for (a, &i) in sites.iter().enumerate() {
        if i >= n {
            return Err(Error::invalid(format!("site {i} out of range for N = {n}")));
        }
        if sites[..a].contains(&i) {
            return Err(Error::invalid(format!("site {i} repeated")));
        }
    }
    Ok(())
}

/// Per-chain time means of `Π_j h(σ_{i_j})` and of each factor `h(σ_{i_j})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteTupleMeans {
    pub joint: Vec<f64>,
    /// `marginals[j][c]`.
    pub marginals: Vec<Vec<f64>>,
}

impl SiteTupleMeans {
    pub fn compute(ensemble: &ReplicaEnsemble, h: HFunction, sites: &[usize]) -> Result<Self> {
        check_sites(sites, ensemble.n)?;
        let joint = (0..ensemble.chains)
            .map(|c| mean(&ensemble.trace(c, |s| sites.iter().map(|&i| h.eval(s[i])).product())))
            .collect();
        let marginals = sites
            .iter()
            .map(|&i| {
                (0..ensemble.chains)
                    .map(|c| mean(&ensemble.trace(c, |s| h.eval(s[i]))))
                    .collect()
            })
            .collect();
        Ok(SiteTupleMeans { joint, marginals })
    }

    fn statistic(&self, chains: &[usize]) -> f64 {
        let joint: Vec<f64> = chains.iter().map(|&c| self.joint[c]).collect();
        let cols: Vec<Vec<f64>> = self
            .marginals
            .iter()
            .map(|m| chains.iter().map(|&c| m[c]).collect())
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        mean(&joint) - distinct_product_mean(&refs)
    }

    /// Thermal mean of the joint function over all chains.
    pub fn joint_mean(&self) -> f64 {
        mean(&self.joint)
    }

    pub fn marginal_means(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| mean(m)).collect()
    }
}

/// `⟨Π_j h(σ_{i_j})⟩ - Π_j ⟨h(σ_{i_j})⟩` with the product over distinct chains;
/// chain bootstrap error. Exactly zero for a single site.
pub fn thermal_decorrelation(
    ensemble: &ReplicaEnsemble,
    h: HFunction,
    sites: &[usize],
    lineage: &SeedLineage,
) -> Result<Estimate> {
    if ensemble.chains < sites.len().max(2) {
        return Err(Error::Insufficient {
            what: "chains",
            needed: sites.len().max(2),
            found: ensemble.chains,
        });
    }
    let means = SiteTupleMeans::compute(ensemble, h, sites)?;
    let all: Vec<usize> = (0..ensemble.chains).collect();
    let value = means.statistic(&all);
    let se = if sites.len() == 1 {
        0.0
    } else {
        bootstrap_stderr(ensemble.chains, BOOTSTRAP_REPS, lineage, |idx| means.statistic(idx))
    };
    Ok(Estimate::new(value, se).with_counts(1, ensemble.chains, ensemble.mcmc_steps()))
}

/// Unbiased estimate of the squared thermal decorrelation, averaged over site tuples.
///
/// The chains are split into two halves; the statistic computed on each half
/// is an independent unbiased estimate, so their product is unbiased for the
/// square.
pub fn decorrelation_second_moment(
    ensemble: &ReplicaEnsemble,
    h: HFunction,
    tuples: &[Vec<usize>],
) -> Result<f64> {
    let k = tuples.iter().map(|t| t.len()).max().unwrap_or(0);
    let half = ensemble.chains / 2;
    if half < k.max(1) {
        return Err(Error::Insufficient {
            what: "chains for two disjoint halves",
            needed: 2 * k.max(1),
            found: ensemble.chains,
        });
    }
    let a: Vec<usize> = (0..half).collect();
    let b: Vec<usize> = (half..2 * half).collect();
    let values = tuples
        .iter()
        .map(|t| {
            let m = SiteTupleMeans::compute(ensemble, h, t)?;
            Ok(m.statistic(&a) * m.statistic(&b))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&values))
}

/// Per-disorder thermal means for a list of site tuples.
pub type QuenchedTuples = Vec<SiteTupleMeans>;

fn quenched_statistic(per_disorder: &[QuenchedTuples], idx: &[usize]) -> f64 {
    let tuples = per_disorder[0].len();
    let mut total = 0.0;
    for t in 0..tuples {
        let joint: Vec<f64> = idx.iter().map(|&d| per_disorder[d][t].joint_mean()).collect();
        let k = per_disorder[0][t].marginals.len();
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                idx.iter()
                    .map(|&d| mean(&per_disorder[d][t].marginals[j]))
                    .collect()
            })
            .collect();
        let product = if k <= 2 {
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            distinct_product_mean(&refs)
        } else {
            rotated_group_product(&cols)
        };
        total += mean(&joint) - product;
    }
    total / tuples as f64
}

/// Product of means over `k` disjoint disorder groups (unit `u` is in group
/// `u mod k`), averaged over the `k` cyclic assignments of factors to groups.
fn rotated_group_product(cols: &[Vec<f64>]) -> f64 {
    let k = cols.len();
    let n = cols[0].len();
    let mut acc = 0.0;
    for r in 0..k {
        let mut p = 1.0;
        for (j, col) in cols.iter().enumerate() {
            let g = (j + r) % k;
            let members: Vec<f64> = (0..n).filter(|u| u % k == g).map(|u| col[u]).collect();
            p *= mean(&members);
        }
        acc += p;
    }
    acc / k as f64
}

/// `E⟨Π_j h(σ_{i_j})⟩ - Π_j E⟨h(σ_{i_j})⟩`, averaged over the site tuples, with
/// the product taken over distinct disorder samples; disorder bootstrap error.
pub fn quenched_decorrelation(per_disorder: &[QuenchedTuples], lineage: &SeedLineage) -> Result<Estimate> {
    let n = per_disorder.len();
    let k = per_disorder
        .first()
        .and_then(|t| t.first())
        .map_or(1, |m| m.marginals.len());
    if n < k.max(2) {
        return Err(Error::Insufficient {
            what: "disorder samples",
            needed: k.max(2),
            found: n,
        });
    }
    if per_disorder.iter().any(|t| t.len() != per_disorder[0].len() || t.is_empty()) {
        return Err(Error::invalid("every disorder sample needs the same non-empty tuple list"));
    }
    let all: Vec<usize> = (0..n).collect();
    let value = quenched_statistic(per_disorder, &all);
    let se = bootstrap_stderr(n, BOOTSTRAP_REPS, lineage, |idx| quenched_statistic(per_disorder, idx));
    Ok(Estimate::new(value, se).with_counts(n, n, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DisorderSample, ModelSpec};
    use crate::perturbation::TruncationPolicy;
    use crate::sampler::{sample_replicas, McmcConfig};

    fn ensemble(spec: ModelSpec, n: usize, seed: u64) -> ReplicaEnsemble {
        let d = DisorderSample::draw(&spec, n, 0.0, 0.0, &TruncationPolicy::default(), &SeedLineage::new(seed))
            .unwrap();
        let cfg = McmcConfig {
            samples: 400,
            ..McmcConfig::default()
        };
        sample_replicas(&d, 0.5, 8, &cfg, &SeedLineage::new(seed + 100)).unwrap()
    }

    #[test]
    fn single_site_statistic_is_exactly_zero() {
        let e = ensemble(ModelSpec::RandomField { field_std: 1.0 }, 4, 1);
        for h in HFunction::ALL {
            let s = thermal_decorrelation(&e, h, &[2], &SeedLineage::new(1)).unwrap();
            assert_eq!(s.value, 0.0);
        }
    }

    #[test]
    fn separable_statistic_is_near_zero() {
        let e = ensemble(ModelSpec::RandomField { field_std: 1.0 }, 6, 2);
        for h in HFunction::ALL {
            let s = thermal_decorrelation(&e, h, &[0, 3], &SeedLineage::new(2)).unwrap();
            assert!(s.within(0.0, 3.5), "{h}: {s:?}");
        }
    }

    #[test]
    fn repeated_sites_are_rejected() {
        let e = ensemble(ModelSpec::Zero, 3, 3);
        assert!(thermal_decorrelation(&e, HFunction::Identity, &[1, 1], &SeedLineage::new(3)).is_err());
        assert!(thermal_decorrelation(&e, HFunction::Identity, &[5], &SeedLineage::new(3)).is_err());
    }

    #[test]
    fn rotated_product_is_product_for_constant_columns() {
        let cols = vec![vec![2.0; 9], vec![3.0; 9], vec![0.5; 9]];
        assert!((rotated_group_product(&cols) - 3.0).abs() < 1e-15);
        assert_eq!("tanh2".parse::<HFunction>().unwrap(), HFunction::Tanh2);
    }
}
