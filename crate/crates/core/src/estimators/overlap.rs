//! Thermal and quenched fluctuations of multioverlaps.

use serde::{Deserialize, Serialize};

use super::{multioverlap_unchecked, MultioverlapIndex, BOOTSTRAP_REPS};
use crate::error::{Error, Result};
use crate::oracle::SiteMeasure;
use crate::rng::SeedLineage;
use crate::sampler::ReplicaEnsemble;
use crate::stats::{bootstrap_stderr, mean, pair_product_mean, Estimate};

/// Time averages of `R` and `R²` for each disjoint group of `n` chains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub samples: usize,
}

/// Group `g` uses chains `g·n, …, g·n + n - 1`; replica tuples are the states
/// of those chains at a common recorded time.
pub fn group_moments(ensemble: &ReplicaEnsemble, k: &MultioverlapIndex) -> Result<GroupMoments> {
    let n = k.replicas();
    let groups = ensemble.groups(n);
    if groups == 0 {
        return Err(Error::Insufficient {
            what: "chains for one replica group",
            needed: n,
            found: ensemble.chains,
        });
    }
    let t_len = ensemble.samples_per_chain;
    let per_group = crate::par::map_range(groups, |g| {
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut views: Vec<&[f64]> = Vec::with_capacity(n);
        for t in 0..t_len {
            views.clear();
            views.extend((0..n).map(|l| ensemble.sample(g * n + l, t)));
            let r = multioverlap_unchecked(&views, k.powers());
            s1 += r;
            s2 += r * r;
        }
        (s1 / t_len as f64, s2 / t_len as f64)
    });
    Ok(GroupMoments {
        first: per_group.iter().map(|p| p.0).collect(),
        second: per_group.iter().map(|p| p.1).collect(),
        samples: t_len,
    })
}

fn variance_from_groups(m: &GroupMoments, idx: &[usize]) -> f64 {
    let first: Vec<f64> = idx.iter().map(|&g| m.first[g]).collect();
    let second: Vec<f64> = idx.iter().map(|&g| m.second[g]).collect();
    mean(&second) - pair_product_mean(&first)
}

/// `⟨R²⟩ - ⟨R⟩²`, the square taken over distinct replica groups; group bootstrap error.
pub fn thermal_variance(
    ensemble: &ReplicaEnsemble,
    k: &MultioverlapIndex,
    lineage: &SeedLineage,
) -> Result<Estimate> {
    let m = group_moments(ensemble, k)?;
    let g = m.first.len();
    if g < 2 {
        return Err(Error::Insufficient {
            what: "replica groups",
            needed: 2,
            found: g,
        });
    }
    let all: Vec<usize> = (0..g).collect();
    let value = variance_from_groups(&m, &all);
    let se = bootstrap_stderr(g, BOOTSTRAP_REPS, lineage, |idx| variance_from_groups(&m, idx));
    Ok(Estimate::new(value, se).with_counts(1, g, ensemble.mcmc_steps()))
}

/// Per-disorder thermal estimates of `⟨R⟩` and `⟨R²⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderMoments {
    pub first: f64,
    pub second: f64,
}

impl From<&GroupMoments> for DisorderMoments {
    fn from(m: &GroupMoments) -> Self {
        DisorderMoments {
            first: mean(&m.first),
            second: mean(&m.second),
        }
    }
}

fn quenched_variance_of(d: &[DisorderMoments], idx: &[usize]) -> f64 {
    let first: Vec<f64> = idx.iter().map(|&i| d[i].first).collect();
    let second: Vec<f64> = idx.iter().map(|&i| d[i].second).collect();
    mean(&second) - pair_product_mean(&first)
}

/// `E⟨R⟩` and `E⟨R²⟩ - (E⟨R⟩)²`, the square taken over distinct disorder
/// samples; disorder bootstrap errors.
pub fn quenched_mean_and_variance(
    per_disorder: &[DisorderMoments],
    lineage: &SeedLineage,
) -> Result<(Estimate, Estimate)> {
    let n = per_disorder.len();
    if n < 2 {
        return Err(Error::Insufficient {
            what: "disorder samples",
            needed: 2,
            found: n,
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let firsts: Vec<f64> = per_disorder.iter().map(|d| d.first).collect();
    let mean_est = Estimate::new(mean(&firsts), (crate::stats::variance(&firsts) / n as f64).sqrt());
    let var_value = quenched_variance_of(per_disorder, &all);
    let se = bootstrap_stderr(n, BOOTSTRAP_REPS, lineage, |idx| {
        quenched_variance_of(per_disorder, idx)
    });
    Ok((
        mean_est.with_counts(n, n, 0),
        Estimate::new(var_value, se).with_counts(n, n, 0),
    ))
}

/// Exact `⟨R⟩` and `Var R` under a product measure given its site marginals.
pub fn multioverlap_oracle_moments(sites: &[SiteMeasure], k: &MultioverlapIndex) -> (f64, f64) {
    let n = sites.len() as f64;
    let (mut mean_sum, mut var_sum) = (0.0, 0.0);
    for s in sites {
        let m: f64 = k.powers().iter().map(|&p| s.moment(p)).product();
        let m2: f64 = k.powers().iter().map(|&p| s.moment(2 * p)).product();
        mean_sum += m;
        var_sum += m2 - m * m;
    }
    (mean_sum / n, var_sum / (n * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DisorderSample, ModelSpec};
    use crate::oracle::site_measures;
    use crate::perturbation::TruncationPolicy;
    use crate::sampler::{sample_replicas, McmcConfig};

    #[test]
    fn identical_replicas_have_zero_variance() {
        let trace = vec![vec![0.3, -0.7, 0.1]; 10];
        let e = ReplicaEnsemble::from_traces(vec![trace; 4], 1.0).unwrap();
        let k = MultioverlapIndex::new(vec![1]).unwrap();
        let v = thermal_variance(&e, &k, &SeedLineage::new(1)).unwrap();
        assert!(v.value.abs() < 1e-15 && v.stderr < 1e-15);
        let d = vec![
            DisorderMoments {
                first: 0.2,
                second: 0.04
            };
            5
        ];
        let (m, q) = quenched_mean_and_variance(&d, &SeedLineage::new(2)).unwrap();
        assert!((m.value - 0.2).abs() < 1e-15);
        assert!(q.value.abs() < 1e-15);
        assert!(quenched_mean_and_variance(&d[..1], &SeedLineage::new(2)).is_err());
    }

    #[test]
    fn thermal_variance_matches_separable_oracle() {
        let spec = ModelSpec::RandomField { field_std: 1.0 };
        let d = DisorderSample::draw(&spec, 4, 0.0, 0.0, &TruncationPolicy::default(), &SeedLineage::new(3))
            .unwrap();
        let cfg = McmcConfig {
            samples: 1000,
            ..McmcConfig::default()
        };
        let e = sample_replicas(&d, 1.0, 16, &cfg, &SeedLineage::new(4)).unwrap();
        let sites = site_measures(&d, 1.0).unwrap();
        for k in ["1", "1-1", "2-1"] {
            let k: MultioverlapIndex = k.parse().unwrap();
            let est = thermal_variance(&e, &k, &SeedLineage::new(5)).unwrap();
            let (_, var) = multioverlap_oracle_moments(&sites, &k);
            assert!(est.within(var, 3.0), "{k}: {est:?} vs {var}");
            assert!(est.value <= k.thermal_bound(4, 1.0) + 3.0 * est.stderr);
        }
    }
}
