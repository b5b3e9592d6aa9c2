//! Franz–de Sanctis quantities for one perturbation index.
//!
//! `θ = P_I(σ_u)` at a site `u` carrying one of the index's Poisson draws and
//! `w = e^{-tλ_I θ}`. All observables are products of single-replica factors,
//! so every replica expectation factorizes into single-replica thermal means.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::inequalities::reciprocal_poly;
use super::BOOTSTRAP_REPS;
use crate::error::{Error, Result};
use crate::models::DisorderSample;
use crate::oracle::{legendre, truncated_poisson_average, SiteMeasure};
use crate::perturbation::{PerturbationIndex, PerturbationState};
use crate::rng::SeedLineage;
use crate::sampler::ReplicaEnsemble;
use crate::stats::{bootstrap_stderr, cross_pair_mean, distinct_product_mean, mean, Estimate};

/// Terms kept in the geometric expansion of `1/⟨w⟩`.
pub const FDS_EXPANSION_DEPTH: usize = 12;

/// Largest system the identity oracle enumerates.
pub const FDS_ORACLE_MAX_DIM: usize = 4;

const POISSON_TOLERANCE: f64 = 1e-13;

/// Bounded replica functions `f_n`, products of per-replica factors of the first spin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FdsObservable {
    /// `f ≡ 1`.
    One,
    /// `σ¹_1`.
    Spin1,
    /// `σ¹_1 σ²_1`.
    Spin1Pair,
}

impl FdsObservable {
    pub fn min_replicas(&self) -> usize {
        match self {
            FdsObservable::Spin1Pair => 2,
            _ => 1,
        }
    }

    /// Whether replica `l` (0-based) carries a factor `σ^l_1`.
    fn uses_spin(&self, l: usize) -> bool {
        match self {
            FdsObservable::One => false,
            FdsObservable::Spin1 => l == 0,
            FdsObservable::Spin1Pair => l < 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FdsObservable::One => "one",
            FdsObservable::Spin1 => "spin1",
            FdsObservable::Spin1Pair => "spin1-pair",
        }
    }
}

impl fmt::Display for FdsObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FdsObservable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [FdsObservable::One, FdsObservable::Spin1, FdsObservable::Spin1Pair]
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown FdS observable {s:?}")))
    }
}

fn check_replicas(f: FdsObservable, n: usize) -> Result<()> {
    if n < f.min_replicas() {
        return Err(Error::invalid(format!(
            "observable {f} needs at least {} replicas, got {n}",
            f.min_replicas()
        )));
    }
    Ok(())
}

fn index_position(state: &PerturbationState, index: &PerturbationIndex) -> Result<usize> {
    state
        .position(index)
        .ok_or_else(|| Error::invalid(format!("index {index} is not in the truncation")))
}

/// Gauss–Legendre nodes on `[1/2, 1]` with weights summing to one.
pub fn lambda_strata(count: usize) -> Vec<(f64, f64)> {
    legendre(count)
        .into_iter()
        .map(|(x, w)| (0.75 + 0.25 * x, 0.5 * w))
        .collect()
}

/// Both sides of the exact identity `E⟨f E_I(σ¹)⟩ = s·E[⟨f θ e^{-λΣ_l θ^l}⟩/⟨w⟩ⁿ]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdsCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Largest certified Poisson tail dropped on either side.
    pub tail_bound: f64,
}

/// Site marginals of a separable base with extra Poisson draws of one index.
struct SiteBank {
    field: Vec<f64>,
    eps: f64,
    base: Arc<PerturbationState>,
    index: PerturbationIndex,
    strength: f64,
    cache: HashMap<(usize, u32), Arc<SiteMeasure>>,
}

impl SiteBank {
    fn measure(&mut self, site: usize, count: u32) -> Result<Arc<SiteMeasure>> {
        if let Some(m) = self.cache.get(&(site, count)) {
            return Ok(m.clone());
        }
        let h = self.field[site];
        let eps = self.eps;
        let base = self.base.clone();
        let index = self.index.clone();
        let a = self.strength * count as f64;
        let m = Arc::new(SiteMeasure::new(move |x| {
            h * x - 0.5 * eps * x * x + base.site_energy(site, x) - a * index.poly_unchecked(x)
        })?);
        self.cache.insert((site, count), m.clone());
        Ok(m)
    }
}

fn compositions(total: u32, parts: usize, out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>) {
    if cur.len() + 1 == parts {
        cur.push(total);
        out.push(cur.clone());
        cur.pop();
        return;
    }
    for c in 0..=total {
        cur.push(c);
        compositions(total - c, parts, out, cur);
        cur.pop();
    }
}

/// `E_c[g(c)]` for site counts `c` of `r` uniform draws among `n` sites.
fn multinomial_average(r: usize, n: usize, mut g: impl FnMut(&[u32]) -> Result<f64>) -> Result<f64> {
    let log_fact: Vec<f64> = (0..=r)
        .scan(0.0, |acc, k| {
            if k > 0 {
                *acc += (k as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    let mut all = Vec::new();
    compositions(r as u32, n, &mut all, &mut Vec::with_capacity(n));
    let mut total = 0.0;
    for c in &all {
        let log_p = log_fact[r] - c.iter().map(|&k| log_fact[k as usize]).sum::<f64>()
            - r as f64 * (n as f64).ln();
        total += log_p.exp() * g(c)?;
    }
    Ok(total)
}

/// Exact evaluation of both sides for a separable system with `N ≤ 4`.
///
/// The index's own draws are replaced by `π ~ Poisson(s)` draws at uniform
/// sites, the rest of the disorder is kept, and both sides are averaged over
/// `λ_I ~ U[1/2, 1]` by Gauss–Legendre quadrature.
pub fn fds_identity_check(
    disorder: &DisorderSample,
    eps: f64,
    index: &PerturbationIndex,
    f: FdsObservable,
    n: usize,
    s: f64,
) -> Result<FdsCheck> {
    check_replicas(f, n)?;
    if !disorder.is_separable() {
        return Err(Error::Unsupported("the identity oracle needs a separable model".into()));
    }
    let dim = disorder.dim();
    if dim > FDS_ORACLE_MAX_DIM {
        return Err(Error::Unsupported(format!(
            "the identity oracle enumerates N <= {FDS_ORACLE_MAX_DIM}, got {dim}"
        )));
    }
    let state = &disorder.perturbation;
    let pos = index_position(state, index)?;
    let mut counts: Vec<Vec<(u32, u32)>> = (0..state.indices().len())
        .map(|p| state.counts_of(p).to_vec())
        .collect();
    counts[pos].clear();
    let base = Arc::new(PerturbationState::from_parts(
        dim,
        state.s_n(),
        state.t(),
        state.indices().to_vec(),
        state.lambdas().to_vec(),
        counts,
    )?);
    let p_max = index.sup();
    let (mut lhs, mut rhs, mut tail) = (0.0, 0.0, 0.0f64);
    for (lambda, weight) in lambda_strata(16) {
        let strength = state.t() * lambda;
        let mut bank = SiteBank {
            field: disorder.model.field().to_vec(),
            eps,
            base: base.clone(),
            index: index.clone(),
            strength,
            cache: HashMap::new(),
        };
        let poly = |x: f64| index.poly_unchecked(x);
        let w = |x: f64| (-strength * index.poly_unchecked(x)).exp();
        let spin = |use_spin: bool, x: f64| if use_spin { x } else { 1.0 };

        let bank_cell = std::cell::RefCell::new(&mut bank);
        let failure = std::cell::RefCell::new(None);
        let record = |r: Result<f64>| {
            r.unwrap_or_else(|e| {
                failure.borrow_mut().get_or_insert(e);
                0.0
            })
        };
        let left = |r: usize| -> f64 {
            let mut b = bank_cell.borrow_mut();
            record(multinomial_average(r, dim, |c| {
                let m0 = b.measure(0, c[0])?;
                let mut rest = 1.0;
                for l in 1..n {
                    rest *= m0.expect(|x| spin(f.uses_spin(l), x));
                }
                let mut e = 0.0;
                for (i, &ci) in c.iter().enumerate() {
                    if ci == 0 {
                        continue;
                    }
                    let first = if i == 0 {
                        m0.expect(|x| spin(f.uses_spin(0), x) * poly(x))
                    } else {
                        m0.expect(|x| spin(f.uses_spin(0), x)) * b.measure(i, ci)?.expect(poly)
                    };
                    e += ci as f64 * first;
                }
                Ok(e * rest)
            }))
        };
        let l = truncated_poisson_average(left, s, p_max, 1, POISSON_TOLERANCE)?;

        let right = |r: usize| -> f64 {
            let mut b = bank_cell.borrow_mut();
            record(multinomial_average(r, dim, |c| {
                let m0 = b.measure(0, c[0])?;
                let mut acc = 0.0;
                for u in 0..dim {
                    let mu = b.measure(u, c[u])?;
                    let mut num = 1.0;
                    for l in 0..n {
                        let theta = |x: f64| if l == 0 { poly(x) } else { 1.0 };
                        num *= if u == 0 {
                            m0.expect(|x| spin(f.uses_spin(l), x) * theta(x) * w(x))
                        } else {
                            m0.expect(|x| spin(f.uses_spin(l), x)) * mu.expect(|x| theta(x) * w(x))
                        };
                    }
                    acc += num / mu.expect(w).powi(n as i32);
                }
                Ok(acc / dim as f64)
            }))
        };
        let rbound = p_max * (n as f64 * strength * p_max).exp();
        let r = truncated_poisson_average(right, s, rbound, 0, POISSON_TOLERANCE)?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        lhs += weight * l.value;
        rhs += weight * s * r.value;
        tail = tail.max(l.tail_bound).max(s * r.tail_bound);
    }
    Ok(FdsCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        tail_bound: tail,
    })
}

/// Per-disorder ingredients of the Franz–de Sanctis statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdsDisorderTerms {
    /// Index of the `λ_I` stratum the disorder was sampled at.
    pub stratum: usize,
    /// `⟨f θ e^{-λΣ_l θ^l}⟩ / ⟨w⟩ⁿ`.
    pub joint: f64,
    /// `⟨f⟩`.
    pub marginal: f64,
    /// `⟨θ w⟩ / ⟨w⟩`.
    pub single: f64,
    /// `|p_R(⟨w⟩)ⁿ - ⟨w⟩⁻ⁿ|` at the estimated `⟨w⟩`, worst over sites.
    pub truncation: f64,
}

/// Sites `u` carrying the index's draws, weighted by their counts; uniform
/// when the index has no draws (then `θ` is a fresh uniform site).
fn theta_sites(state: &PerturbationState, pos: usize) -> Vec<(usize, f64)> {
    let counts = state.counts_of(pos);
    let total: u32 = counts.iter().map(|&(_, c)| c).sum();
    if total == 0 {
        let n = state.n();
        (0..n).map(|u| (u, 1.0 / n as f64)).collect()
    } else {
        counts
            .iter()
            .map(|&(u, c)| (u as usize, c as f64 / total as f64))
            .collect()
    }
}

impl FdsDisorderTerms {
    /// Monte Carlo terms from an ensemble at full perturbation strength.
    ///
    /// Products of thermal means over replicas use distinct chains; `1/⟨w⟩`
    /// is expanded to [`FDS_EXPANSION_DEPTH`] terms at the all-chain estimate.
    pub fn compute(
        ensemble: &ReplicaEnsemble,
        disorder: &DisorderSample,
        index: &PerturbationIndex,
        f: FdsObservable,
        n: usize,
        stratum: usize,
    ) -> Result<Self> {
        check_replicas(f, n)?;
        crate::error::check_len(disorder.dim(), ensemble.n)?;
        if ensemble.chains < n.max(2) {
            return Err(Error::Insufficient {
                what: "chains",
                needed: n.max(2),
                found: ensemble.chains,
            });
        }
        let state = &disorder.perturbation;
        let pos = index_position(state, index)?;
        let strength = state.t() * state.lambdas()[pos];
        let chain_mean = |g: &dyn Fn(&[f64]) -> f64| -> Vec<f64> {
            (0..ensemble.chains).map(|c| mean(&ensemble.trace(c, g))).collect()
        };
        let spin_means = chain_mean(&|s| s[0]);
        let ones = vec![1.0; ensemble.chains];
        let factor = |l: usize| if f.uses_spin(l) { &spin_means } else { &ones };
        let cols: Vec<&[f64]> = (0..n).map(|l| factor(l).as_slice()).collect();
        let marginal = distinct_product_mean(&cols);

        let (mut joint, mut single, mut truncation) = (0.0, 0.0, 0.0f64);
        for (u, weight) in theta_sites(state, pos) {
            let w = move |s: &[f64]| (-strength * index.poly_unchecked(s[u])).exp();
            let pw = chain_mean(&|s| index.poly_unchecked(s[u]) * w(s));
            let spw = chain_mean(&|s| s[0] * index.poly_unchecked(s[u]) * w(s));
            let ww = chain_mean(&w);
            let sw = chain_mean(&|s| s[0] * w(s));
            let cols: Vec<&[f64]> = (0..n)
                .map(|l| match (l == 0, f.uses_spin(l)) {
                    (true, true) => spw.as_slice(),
                    (true, false) => pw.as_slice(),
                    (false, true) => sw.as_slice(),
                    (false, false) => ww.as_slice(),
                })
                .collect();
            let x = mean(&ww).min(1.0 - f64::EPSILON);
            let inv = reciprocal_poly(x, FDS_EXPANSION_DEPTH)?;
            joint += weight * distinct_product_mean(&cols) * inv.powi(n as i32);
            single += weight * mean(&pw) * inv;
            truncation = truncation.max((inv.powi(n as i32) - x.powi(-(n as i32))).abs());
        }
        Ok(FdsDisorderTerms {
            stratum,
            joint,
            marginal,
            single,
            truncation,
        })
    }

    /// Exact terms for a separable disorder sample.
    pub fn oracle(
        disorder: &DisorderSample,
        eps: f64,
        index: &PerturbationIndex,
        f: FdsObservable,
        n: usize,
        stratum: usize,
    ) -> Result<Self> {
        check_replicas(f, n)?;
        let sites = crate::oracle::site_measures(disorder, eps)?;
        let state = &disorder.perturbation;
        let pos = index_position(state, index)?;
        let strength = state.t() * state.lambdas()[pos];
        let poly = |x: f64| index.poly_unchecked(x);
        let w = |x: f64| (-strength * poly(x)).exp();
        let spin = |l: usize, x: f64| if f.uses_spin(l) { x } else { 1.0 };
        let m0 = &sites[0];
        let marginal: f64 = (0..n).map(|l| m0.expect(|x| spin(l, x))).product();
        let (mut joint, mut single) = (0.0, 0.0);
        for (u, weight) in theta_sites(state, pos) {
            let mu = &sites[u];
            let mut num = 1.0;
            for l in 0..n {
                let theta = |x: f64| if l == 0 { poly(x) } else { 1.0 };
                num *= if u == 0 {
                    m0.expect(|x| spin(l, x) * theta(x) * w(x))
                } else {
                    m0.expect(|x| spin(l, x)) * mu.expect(|x| theta(x) * w(x))
                };
            }
            let x = mu.expect(w);
            joint += weight * num / x.powi(n as i32);
            single += weight * mu.expect(|x| poly(x) * w(x)) / x;
        }
        Ok(FdsDisorderTerms {
            stratum,
            joint,
            marginal,
            single,
            truncation: 0.0,
        })
    }
}

fn stratified_statistic(terms: &[FdsDisorderTerms], weights: &[f64], idx: &[usize]) -> f64 {
    let mut total = 0.0;
    for (j, &wj) in weights.iter().enumerate() {
        let members: Vec<&FdsDisorderTerms> = idx
            .iter()
            .map(|&d| &terms[d])
            .filter(|t| t.stratum == j)
            .collect();
        if members.len() < 2 {
            return f64::NAN;
        }
        let joint: Vec<f64> = members.iter().map(|t| t.joint).collect();
        let marginal: Vec<f64> = members.iter().map(|t| t.marginal).collect();
        let single: Vec<f64> = members.iter().map(|t| t.single).collect();
        total += wj * (mean(&joint) - cross_pair_mean(&marginal, &single)).abs();
    }
    total / weights.iter().sum::<f64>()
}

/// `E_λ|E[joint] - E[marginal]·E[single]|` with `λ_I` stratified on the
/// nodes whose weights are given; the product of disorder means is taken over
/// distinct disorder samples. Disorder bootstrap error.
pub fn fds_statistic(
    terms: &[FdsDisorderTerms],
    weights: &[f64],
    lineage: &SeedLineage,
) -> Result<Estimate> {
    if weights.is_empty() {
        return Err(Error::invalid("need at least one lambda stratum"));
    }
    for j in 0..weights.len() {
        let count = terms.iter().filter(|t| t.stratum == j).count();
        if count < 2 {
            return Err(Error::Insufficient {
                what: "disorder samples per lambda stratum",
                needed: 2,
                found: count,
            });
        }
    }
    if let Some(t) = terms.iter().find(|t| t.stratum >= weights.len()) {
        return Err(Error::invalid(format!("stratum {} has no weight", t.stratum)));
    }
    let all: Vec<usize> = (0..terms.len()).collect();
    let value = stratified_statistic(terms, weights, &all);
    let se = bootstrap_stderr(terms.len(), BOOTSTRAP_REPS, lineage, |idx| {
        stratified_statistic(terms, weights, idx)
    });
    Ok(Estimate::new(value, se).with_counts(terms.len(), terms.len(), 0))
}
