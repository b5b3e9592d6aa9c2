//! Gaussian regularization and the dyadic Poisson perturbation.
//!
//! A [`PerturbationIndex`] is a tuple of exponents `(i_0, …, i_{m-1})` with
//! `i_p ≥ p`; it selects the polynomial
//!
//! ```text
//! P_I(x) = 2^{-ι(I) - 2m} · Σ_p 2^{-i_p} (x + 1)^p,   ι(I) = Σ_p i_p,
//! ```
//!
//! which is positive, convex and non-decreasing on `[-1, 1]`. A
//! [`PerturbationState`] holds the site-indexed Poisson counts `π_{I,i}`, the
//! weights `λ_I ∈ [1/2, 1]`, the mean `s_N` and the strength `t`, and evaluates
//! `-t Σ_I λ_I Σ_i π_{I,i} P_I(σ_i)`.
//!
//! The index set is infinite; a [`TruncationPolicy`] keeps the finitely many
//! indices with `m ≤ m_max` and `ι ≤ k_max`, and
//! [`PerturbationState::tail_bound`] reports a bound on the energy the
//! excluded indices could contribute.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::SeedLineage;

/// Element of the dyadic index set, stored as integer exponents.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct PerturbationIndex {
    exponents: Vec<u32>,
}

impl PerturbationIndex {
    pub fn new(exponents: Vec<u32>) -> Result<Self> {
        if exponents.is_empty() {
            return Err(Error::invalid("a perturbation index needs at least one exponent"));
        }
        if let Some(p) = exponents.iter().enumerate().position(|(p, &i)| (i as usize) < p) {
            return Err(Error::invalid(format!(
                "exponent i_{p} = {} must be at least {p}",
                exponents[p]
            )));
        }
        Ok(PerturbationIndex { exponents })
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    /// Number of exponents.
    pub fn m(&self) -> usize {
        self.exponents.len()
    }

    /// Sum of the exponents.
    pub fn iota(&self) -> u32 {
        self.exponents.iter().sum()
    }

    /// `2^{-ι-2m}`.
    pub fn scale(&self) -> f64 {
        (-(self.iota() as f64) - 2.0 * self.m() as f64).exp2()
    }

    /// `m · 2^{-ι-2m}`, an upper bound of `P_I` on the box.
    pub fn sup(&self) -> f64 {
        self.m() as f64 * self.scale()
    }

    /// Coefficients of `P_I` as a polynomial in `y = x + 1`.
    pub fn coefficients(&self) -> Vec<f64> {
        let s = self.scale();
        self.exponents
            .iter()
            .map(|&i| s * (-(i as f64)).exp2())
            .collect()
    }

    /// `P_I(x)`; errors outside `[-1, 1]`.
    pub fn poly(&self, x: f64) -> Result<f64> {
        check_spin(x)?;
        Ok(self.poly_unchecked(x))
    }

    pub fn poly_unchecked(&self, x: f64) -> f64 {
        horner(&self.coefficients(), x + 1.0)
    }

    pub fn poly_derivative(&self, x: f64) -> f64 {
        horner_derivative(&self.coefficients(), x + 1.0)
    }
}

impl TryFrom<Vec<u32>> for PerturbationIndex {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        PerturbationIndex::new(v)
    }
}

impl From<PerturbationIndex> for Vec<u32> {
    fn from(i: PerturbationIndex) -> Self {
        i.exponents
    }
}

impl fmt::Display for PerturbationIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (p, i) in self.exponents.iter().enumerate() {
            if p > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, ")")
    }
}

impl std::str::FromStr for PerturbationIndex {
    type Err = Error;
    /// Parses `"0-1-3"`, `"(0,1,3)"` or `"0,1,3"`.
    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim().trim_start_matches('(').trim_end_matches(')');
        let exps = body
            .split([',', '-'])
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::invalid(format!("bad perturbation index {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        PerturbationIndex::new(exps)
    }
}

fn horner(c: &[f64], y: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * y + a)
}

fn horner_derivative(c: &[f64], y: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (p, &a)| acc * y + p as f64 * a)
}

pub(crate) fn check_spin(x: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "spin",
            value: x,
            domain: "[-1, 1]",
        })
    }
}

/// `-(ε/2)‖σ‖²`.
pub fn gaussian_regularization_energy(sigma: &[f64], eps: f64) -> f64 {
    -0.5 * eps * sigma.iter().map(|x| x * x).sum::<f64>()
}

/// Which part of the index set is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub m_max: usize,
    pub k_max: u32,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy { m_max: 3, k_max: 8 }
    }
}

impl TruncationPolicy {
    /// All retained indices, ordered by `m`, then lexicographically.
    pub fn indices(&self) -> Vec<PerturbationIndex> {
        let mut out = Vec::new();
        for m in 1..=self.m_max {
            let mut cur = Vec::with_capacity(m);
            push_indices(m, self.k_max, &mut cur, &mut out);
        }
        out
    }

    /// `Σ_{I excluded} m·2^{-ι-2m}`.
    pub fn excluded_weight(&self) -> f64 {
        let mut total = 0.0;
        // Lengths kept by the policy: only the part with ι > k_max is missing.
        for m in 1..=self.m_max {
            let base = (m * (m - 1) / 2) as u32;
            let mut s = (self.k_max + 1).max(base);
            loop {
                let q = (s - base) as u64;
                let term = m as f64
                    * binomial(q + m as u64 - 1, m as u64 - 1)
                    * (-(s as f64) - 2.0 * m as f64).exp2();
                total += term;
                if term < 1e-300 || (term < total * 1e-18 && s > self.k_max + 8) {
                    break;
                }
                s += 1;
            }
        }
        // Lengths beyond m_max are excluded entirely.
        let mut m = self.m_max + 1;
        loop {
            let mf = m as f64;
            let term = mf * (-mf - mf * (mf - 1.0) / 2.0).exp2();
            total += term;
            if term < 1e-300 || term < total * 1e-18 {
                break;
            }
            m += 1;
        }
        total
    }
}

fn push_indices(m: usize, budget: u32, cur: &mut Vec<u32>, out: &mut Vec<PerturbationIndex>) {
    let p = cur.len();
    if p == m {
        out.push(PerturbationIndex {
            exponents: cur.clone(),
        });
        return;
    }
    // Remaining positions p+1..m need at least their own index each.
    let reserve: u32 = ((p + 1)..m).map(|q| q as u32).sum();
    let used: u32 = cur.iter().sum();
    let mut i = p as u32;
    while used + i + reserve <= budget {
        cur.push(i);
        push_indices(m, budget, cur, out);
        cur.pop();
        i += 1;
    }
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Rule for the ridge strength `ε_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum EpsRule {
    /// `ε_N = (s_N / N)^{1/3}`.
    CubeRootDensity,
    /// `ε_N = N^{-exponent}`.
    Power { exponent: f64 },
    Constant { value: f64 },
}

/// Rule for the Poisson mean `s_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SRule {
    /// `s_N = ⌈√N⌉`.
    CeilSqrt,
    Constant { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSchedule {
    pub eps: EpsRule,
    pub s: SRule,
}

impl Default for RegularizationSchedule {
    fn default() -> Self {
        RegularizationSchedule {
            eps: EpsRule::CubeRootDensity,
            s: SRule::CeilSqrt,
        }
    }
}

impl RegularizationSchedule {
    pub fn s_n(&self, n: usize) -> f64 {
        match self.s {
            SRule::CeilSqrt => (n as f64).sqrt().ceil(),
            SRule::Constant { value } => value,
        }
    }

    pub fn eps_n(&self, n: usize) -> f64 {
        match self.eps {
            EpsRule::CubeRootDensity => (self.s_n(n) / n as f64).cbrt(),
            EpsRule::Power { exponent } => (n as f64).powf(-exponent),
            EpsRule::Constant { value } => value,
        }
    }

    /// Checks the schedule on a finite grid of system sizes.
    pub fn validate(&self, grid: &[usize]) -> Result<()> {
        if grid.is_empty() {
            return Err(Error::invalid("empty N grid"));
        }
        for w in grid.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("N grid must be strictly increasing"));
            }
        }
        for &n in grid {
            let (eps, s) = (self.eps_n(n), self.s_n(n));
            if n == 0 {
                return Err(Error::invalid("N must be positive"));
            }
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::Domain {
                    what: "eps_N",
                    value: eps,
                    domain: "(0, 1]",
                });
            }
            if !(s >= 0.0 && s <= n as f64) {
                return Err(Error::Domain {
                    what: "s_N",
                    value: s,
                    domain: "[0, N]",
                });
            }
        }
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            if self.eps_n(b) > self.eps_n(a) * (1.0 + 1e-12) {
                return Err(Error::invalid("eps_N must be non-increasing on the grid"));
            }
            if b as f64 * self.eps_n(b) < a as f64 * self.eps_n(a) * (1.0 - 1e-12) {
                return Err(Error::invalid("N·eps_N must be non-decreasing on the grid"));
            }
            if self.s_n(b) < self.s_n(a) {
                return Err(Error::invalid("s_N must be non-decreasing on the grid"));
            }
        }
        Ok(())
    }
}

/// Sampled Poisson perturbation for one disorder realization.
///
/// Immutable once built; [`with_strength`](Self::with_strength) and
/// [`with_lambdas`](Self::with_lambdas) return modified copies sharing the same
/// counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PerturbationRecord", into = "PerturbationRecord")]
pub struct PerturbationState {
    n: usize,
    s_n: f64,
    t: f64,
    indices: Vec<PerturbationIndex>,
    lambdas: Vec<f64>,
    /// Per index: sorted `(site, count)` pairs with nonzero count.
    counts: Vec<Vec<(u32, u32)>>,
    /// Per site: coefficients in `x + 1` of `Σ_I λ_I π_{I,i} P_I`, i.e. at `t = 1`.
    site_coeffs: Vec<f64>,
    degree: usize,
}

/// Flat text form of a [`PerturbationState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub n: usize,
    pub s_n: f64,
    pub t: f64,
    pub truncation: Vec<PerturbationIndex>,
    pub lambdas: Vec<f64>,
    /// `(index position, site, count)` for every nonzero count.
    pub counts: Vec<(u32, u32, u32)>,
}

impl From<PerturbationState> for PerturbationRecord {
    fn from(s: PerturbationState) -> Self {
        let counts = s
            .counts
            .iter()
            .enumerate()
            .flat_map(|(k, v)| v.iter().map(move |&(i, c)| (k as u32, i, c)))
            .collect();
        PerturbationRecord {
            n: s.n,
            s_n: s.s_n,
            t: s.t,
            truncation: s.indices,
            lambdas: s.lambdas,
            counts,
        }
    }
}

impl TryFrom<PerturbationRecord> for PerturbationState {
    type Error = Error;
    fn try_from(r: PerturbationRecord) -> Result<Self> {
        let mut counts = vec![Vec::new(); r.truncation.len()];
        for &(k, i, c) in &r.counts {
            let slot = counts
                .get_mut(k as usize)
                .ok_or_else(|| Error::Malformed(format!("count for unknown index {k}")))?;
            if i as usize >= r.n {
                return Err(Error::Malformed(format!("count for site {i} >= N = {}", r.n)));
            }
            if c > 0 {
                slot.push((i, c));
            }
        }
        PerturbationState::from_parts(r.n, r.s_n, r.t, r.truncation, r.lambdas, counts)
    }
}

impl PerturbationState {
    /// Builds a state from explicit parts, validating every invariant.
    pub fn from_parts(
        n: usize,
        s_n: f64,
        t: f64,
        indices: Vec<PerturbationIndex>,
        lambdas: Vec<f64>,
        mut counts: Vec<Vec<(u32, u32)>>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                domain: "[0, 1]",
            });
        }
        if !(s_n >= 0.0 && s_n <= n as f64) {
            return Err(Error::Domain {
                what: "s_N",
                value: s_n,
                domain: "[0, N]",
            });
        }
        check_len(indices.len(), lambdas.len())?;
        check_len(indices.len(), counts.len())?;
        if let Some(&l) = lambdas.iter().find(|l| !(0.5..=1.0).contains(*l)) {
            return Err(Error::Domain {
                what: "lambda",
                value: l,
                domain: "[1/2, 1]",
            });
        }
        let mut sorted = indices.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != indices.len() {
            return Err(Error::invalid("duplicate perturbation index in truncation"));
        }
        for v in counts.iter_mut() {
            v.sort_unstable();
            if v.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Malformed("repeated site in count list".into()));
            }
            if v.iter().any(|&(i, _)| i as usize >= n) {
                return Err(Error::Malformed("site index out of range".into()));
            }
        }
        let degree = indices.iter().map(|i| i.m()).max().unwrap_or(0);
        let mut site_coeffs = vec![0.0; n * degree];
        for ((idx, &lambda), v) in indices.iter().zip(&lambdas).zip(&counts) {
            let c = idx.coefficients();
            for &(i, k) in v {
                let row = &mut site_coeffs[i as usize * degree..(i as usize + 1) * degree];
                for (slot, a) in row.iter_mut().zip(&c) {
                    *slot += lambda * k as f64 * a;
                }
            }
        }
        Ok(PerturbationState {
            n,
            s_n,
            t,
            indices,
            lambdas,
            counts,
            site_coeffs,
            degree,
        })
    }

    /// A perturbation that contributes nothing (no indices).
    pub fn empty(n: usize) -> Self {
        PerturbationState::from_parts(n, 0.0, 0.0, Vec::new(), Vec::new(), Vec::new())
            .expect("empty perturbation is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn s_n(&self) -> f64 {
        self.s_n
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn indices(&self) -> &[PerturbationIndex] {
        &self.indices
    }
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn position(&self, index: &PerturbationIndex) -> Option<usize> {
        self.indices.iter().position(|i| i == index)
    }

    /// Nonzero `(site, count)` pairs of the index at `pos`.
    pub fn counts_of(&self, pos: usize) -> &[(u32, u32)] {
        &self.counts[pos]
    }

    /// `π_{I,i}`.
    pub fn count(&self, pos: usize, site: usize) -> u32 {
        self.counts[pos]
            .binary_search_by_key(&(site as u32), |&(i, _)| i)
            .map(|k| self.counts[pos][k].1)
            .unwrap_or(0)
    }

    pub fn total_count(&self, pos: usize) -> u64 {
        self.counts[pos].iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn with_strength(&self, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                domain: "[0, 1]",
            });
        }
        let mut s = self.clone();
        s.t = t;
        Ok(s)
    }

    pub fn with_lambdas(&self, lambdas: Vec<f64>) -> Result<Self> {
        PerturbationState::from_parts(
            self.n,
            self.s_n,
            self.t,
            self.indices.clone(),
            lambdas,
            self.counts.clone(),
        )
    }

    /// True when the perturbation cannot change the Gibbs measure.
    pub fn is_inert(&self) -> bool {
        self.t == 0.0 || self.site_coeffs.iter().all(|&c| c == 0.0)
    }

    fn coeffs(&self, site: usize) -> &[f64] {
        &self.site_coeffs[site * self.degree..(site + 1) * self.degree]
    }

    /// Perturbation energy of one site, `-t Σ_I λ_I π_{I,i} P_I(x)`.
    pub fn site_energy(&self, site: usize, x: f64) -> f64 {
        if self.degree == 0 {
            return 0.0;
        }
        -self.t * horner(self.coeffs(site), x + 1.0)
    }

    pub fn site_derivative(&self, site: usize, x: f64) -> f64 {
        if self.degree == 0 {
            return 0.0;
        }
        -self.t * horner_derivative(self.coeffs(site), x + 1.0)
    }

    /// `-t Σ_I λ_I Σ_i π_{I,i} P_I(σ_i)`.
    pub fn energy(&self, sigma: &[f64]) -> Result<f64> {
        check_len(self.n, sigma.len())?;
        Ok(sigma
            .iter()
            .enumerate()
            .map(|(i, &x)| self.site_energy(i, x))
            .sum())
    }

    /// Adds the perturbation gradient into `grad`.
    pub fn add_gradient(&self, sigma: &[f64], grad: &mut [f64]) -> Result<()> {
        check_len(self.n, sigma.len())?;
        check_len(self.n, grad.len())?;
        for (i, (g, &x)) in grad.iter_mut().zip(sigma).enumerate() {
            *g += self.site_derivative(i, x);
        }
        Ok(())
    }

    /// `E_I(σ) = Σ_i π_{I,i} P_I(σ_i)` for the index at `pos`.
    pub fn energy_observable_at(&self, sigma: &[f64], pos: usize) -> f64 {
        let idx = &self.indices[pos];
        self.counts[pos]
            .iter()
            .map(|&(i, c)| c as f64 * idx.poly_unchecked(sigma[i as usize]))
            .sum()
    }

    /// Bound on the energy the excluded indices could add at this `s_N`, `t`.
    pub fn tail_bound(&self, policy: &TruncationPolicy) -> f64 {
        self.t * self.s_n * policy.excluded_weight()
    }
}

/// `E_I(σ)`; errors when `index` is not retained or `σ` has the wrong length.
pub fn perturbation_energy_observable(
    sigma: &[f64],
    state: &PerturbationState,
    index: &PerturbationIndex,
) -> Result<f64> {
    check_len(state.n(), sigma.len())?;
    let pos = state
        .position(index)
        .ok_or_else(|| Error::invalid(format!("index {index} is not in the truncation")))?;
    Ok(state.energy_observable_at(sigma, pos))
}

/// `-t Σ_I λ_I Σ_i π_{I,i} P_I(σ_i)`.
pub fn poisson_perturbation_energy(sigma: &[f64], state: &PerturbationState) -> Result<f64> {
    state.energy(sigma)
}

/// Draws the site-indexed counts `π_{I,i} ~ Poisson(s_N/N)` and `λ_I ~ U[1/2, 1]`.
///
/// The stream depends only on `lineage`, never on `t`, so states that differ
/// only in strength share all their randomness.
pub fn sample_perturbation(
    n: usize,
    s_n: f64,
    t: f64,
    policy: &TruncationPolicy,
    lineage: &SeedLineage,
) -> Result<PerturbationState> {
    if n == 0 {
        return Err(Error::invalid("N must be positive"));
    }
    if !(s_n >= 0.0 && s_n <= n as f64) {
        return Err(Error::Domain {
            what: "s_N",
            value: s_n,
            domain: "[0, N]",
        });
    }
    let indices = policy.indices();
    let mut rng = lineage.rng();
    let lambdas: Vec<f64> = indices
        .iter()
        .map(|_| rng.random_range(0.5..=1.0))
        .collect();
    let rate = s_n / n as f64;
    let counts: Vec<Vec<(u32, u32)>> = if rate > 0.0 {
        let pois = Poisson::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
        indices
            .iter()
            .map(|_| {
                (0..n as u32)
                    .filter_map(|i| {
                        let c = pois.sample(&mut rng) as u32;
                        (c > 0).then_some((i, c))
                    })
                    .collect()
            })
            .collect()
    } else {
        vec![Vec::new(); indices.len()]
    };
    PerturbationState::from_parts(n, s_n, t, indices, lambdas, counts)
}

/// One draw of `Σ_i π_{I,i} P_I(σ_i)` with `π_{I,i} ~ Poisson(s/N)` per site.
pub fn draw_site_indexed_sum<R: Rng + ?Sized>(
    sigma: &[f64],
    index: &PerturbationIndex,
    s: f64,
    rng: &mut R,
) -> f64 {
    let rate = s / sigma.len() as f64;
    if rate <= 0.0 {
        return 0.0;
    }
    let pois = Poisson::new(rate).expect("positive rate");
    sigma
        .iter()
        .map(|&x| pois.sample(rng) * index.poly_unchecked(x))
        .sum()
}

/// One draw of `Σ_{j ≤ π_I} P_I(σ_{U_j})` with `π_I ~ Poisson(s)`, `U_j` uniform sites.
pub fn draw_uniform_indexed_sum<R: Rng + ?Sized>(
    sigma: &[f64],
    index: &PerturbationIndex,
    s: f64,
    rng: &mut R,
) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let count = Poisson::new(s).expect("positive mean").sample(rng) as u64;
    (0..count)
        .map(|_| index.poly_unchecked(sigma[rng.random_range(0..sigma.len())]))
        .sum()
}
