//! Monte Carlo statistics over replica ensembles and disorder samples.
//!
//! Products of thermal means are always formed from distinct chains (which are
//! conditionally independent), and products of quenched means from distinct
//! disorder samples, so every reported quantity is free of the `O(1/n)` bias a
//! plug-in square would carry.

mod decoupling;
mod energy;
mod fds;
mod free_entropy;
mod gap;
mod inequalities;
mod overlap;

pub use decoupling::{
    decorrelation_second_moment, quenched_decorrelation, thermal_decorrelation, HFunction,
    QuenchedTuples, SiteTupleMeans,
};
pub use energy::{energy_concentration_statistic, EnergyConcentration, EnergyDeviations};
pub use fds::{
    fds_identity_check, fds_statistic, lambda_strata, FdsCheck, FdsDisorderTerms, FdsObservable,
    FDS_EXPANSION_DEPTH, FDS_ORACLE_MAX_DIM,
};
pub use free_entropy::{free_entropy_variance, max_disorder_variance, PotentialTag};
pub use gap::{mean_gap, oracle_gap, GapSample};
pub use inequalities::{
    brascamp_lieb_check, brascamp_lieb_oracle, convex_derivative_gap_bound, reciprocal_poly,
    reciprocal_poly_bound, BlCheck, BlObservable, ConvexFn,
};
pub use overlap::{
    group_moments, multioverlap_oracle_moments, quenched_mean_and_variance, thermal_variance,
    DisorderMoments, GroupMoments,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bootstrap replicates used for every standard error.
pub const BOOTSTRAP_REPS: usize = 400;

/// Powers `k = (k_1, …, k_n)` of a multioverlap.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MultioverlapIndex {
    powers: Vec<u32>,
}

impl MultioverlapIndex {
    pub fn new(powers: Vec<u32>) -> Result<Self> {
        if powers.is_empty() || powers.contains(&0) {
            return Err(Error::invalid("multioverlap powers must be a non-empty list of positive integers"));
        }
        Ok(MultioverlapIndex { powers })
    }

    pub fn powers(&self) -> &[u32] {
        &self.powers
    }

    /// Number of replicas.
    pub fn replicas(&self) -> usize {
        self.powers.len()
    }

    /// `‖k‖² = Σ k_l²`.
    pub fn norm_sq(&self) -> f64 {
        self.powers.iter().map(|&k| (k * k) as f64).sum()
    }

    /// Upper bound `‖k‖² / (N ε)` on the thermal variance.
    pub fn thermal_bound(&self, n: usize, eps: f64) -> f64 {
        self.norm_sq() / (n as f64 * eps)
    }
}

impl fmt::Display for MultioverlapIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.powers.iter().map(|k| k.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

impl FromStr for MultioverlapIndex {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim().trim_start_matches('(').trim_end_matches(')');
        let powers = body
            .split([',', '-'])
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::invalid(format!("bad multioverlap index {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        MultioverlapIndex::new(powers)
    }
}

impl TryFrom<String> for MultioverlapIndex {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MultioverlapIndex> for String {
    fn from(k: MultioverlapIndex) -> Self {
        k.to_string()
    }
}

/// `R^{(k)} = N^{-1} Σ_i Π_l (σ_i^l)^{k_l}` over the first `n` replicas.
pub fn multioverlap(replicas: &[&[f64]], k: &MultioverlapIndex) -> Result<f64> {
    let n = k.replicas();
    if replicas.len() < n {
        return Err(Error::Insufficient {
            what: "replicas in block",
            needed: n,
            found: replicas.len(),
        });
    }
    let dim = replicas[0].len();
    for r in &replicas[..n] {
        crate::error::check_len(dim, r.len())?;
    }
    Ok(multioverlap_unchecked(&replicas[..n], k.powers()))
}

pub(crate) fn multioverlap_unchecked(replicas: &[&[f64]], powers: &[u32]) -> f64 {
    let dim = replicas[0].len();
    let mut acc = 0.0;
    for i in 0..dim {
        let mut p = 1.0;
        for (r, &k) in replicas.iter().zip(powers) {
            p *= r[i].powi(k as i32);
        }
        acc += p;
    }
    acc / dim as f64
}

/// `‖∇R^{(k)}‖²` with respect to all replicas' spins.
pub fn multioverlap_gradient_norm_sq(replicas: &[&[f64]], k: &MultioverlapIndex) -> Result<f64> {
    let n = k.replicas();
    if replicas.len() < n {
        return Err(Error::Insufficient {
            what: "replicas in block",
            needed: n,
            found: replicas.len(),
        });
    }
    let dim = replicas[0].len() as f64;
    let mut total = 0.0;
    for (l, &kl) in k.powers().iter().enumerate() {
        for i in 0..replicas[0].len() {
            let mut d = kl as f64 * replicas[l][i].powi(kl as i32 - 1) / dim;
            for (m, &km) in k.powers().iter().enumerate() {
                if m != l {
                    d *= replicas[m][i].powi(km as i32);
                }
            }
            total += d * d;
        }
    }
    Ok(total)
}
