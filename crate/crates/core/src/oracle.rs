//! Deterministic quadrature oracle.
//!
//! One-dimensional Gibbs measures `∝ e^{φ(x)}` on `[-1, 1]` are integrated with
//! a composite Gauss–Legendre rule whose panel count is doubled until the
//! normalizer and the first four moments stop moving by more than `1e-10`.
//! Product measures (separable models) reduce to one such measure per site.
//! Coupled models with `N ≤ 3` are handled by a tensor-product grid.
//!
//! Poisson averages `Σ_r e^{-s} s^r/r! · f(r)` are truncated with a certified
//! bound on the neglected tail.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};
use crate::models::DisorderSample;

/// Nodes per Gauss–Legendre panel.
pub const PANEL_ORDER: usize = 8;
/// Smallest panel count used by the adaptive 1D rule.
pub const MIN_PANELS: usize = 64;
const MAX_PANELS: usize = 1 << 14;
/// Target accuracy of the adaptive 1D rule.
pub const TOLERANCE: f64 = 1e-10;

fn reference_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| legendre(PANEL_ORDER))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn legendre(order: usize) -> Vec<(f64, f64)> {
    let order = NonZeroUsize::new(order.max(1)).expect("order is positive");
    GaussLegendre::new(order).as_node_weight_pairs().to_vec()
}

/// Composite rule on `[a, b]` with `panels` equal panels of the reference rule.
pub fn composite_rule(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = reference_rule();
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * rule.len());
    let mut ws = Vec::with_capacity(panels * rule.len());
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for &(x, w) in rule {
            xs.push(mid + 0.5 * h * x);
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

/// Numerically stable `ln Σ w_k e^{l_k}`; returns the shift-free weights too.
fn normalize(logs: &[f64], ws: &[f64]) -> (f64, Vec<f64>) {
    let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs
        .iter()
        .zip(ws)
        .map(|(l, w)| w * (l - shift).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    (shift + z.ln(), raw.into_iter().map(|r| r / z).collect())
}

/// A value with an estimate of its absolute error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

type Potential = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Probability measure `∝ e^{φ(x)} dx` on `[-1, 1]`, tabulated on a composite rule.
pub struct SiteMeasure {
    potential: Potential,
    xs: Vec<f64>,
    probs: Vec<f64>,
    log_z: f64,
    panels: usize,
    error: f64,
}

impl std::fmt::Debug for SiteMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SiteMeasure")
            .field("panels", &self.panels)
            .field("log_z", &self.log_z)
            .field("error", &self.error)
            .finish()
    }
}

struct Tabulation {
    xs: Vec<f64>,
    probs: Vec<f64>,
    log_z: f64,
}

impl Tabulation {
    fn summary(&self) -> [f64; 5] {
        let mut out = [self.log_z, 0.0, 0.0, 0.0, 0.0];
        for (x, p) in self.xs.iter().zip(&self.probs) {
            let mut xk = 1.0;
            for slot in out.iter_mut().skip(1) {
                xk *= x;
                *slot += p * xk;
            }
        }
        out
    }
}

fn tabulate(phi: &dyn Fn(f64) -> f64, panels: usize) -> Result<Tabulation> {
    let (xs, ws) = composite_rule(-1.0, 1.0, panels);
    let logs: Vec<f64> = xs.iter().map(|&x| phi(x)).collect();
    if let Some(bad) = logs.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("potential at x = {}", xs[bad])));
    }
    let (log_z, probs) = normalize(&logs, &ws);
    Ok(Tabulation { xs, probs, log_z })
}

impl SiteMeasure {
    /// Adaptive construction: doubles the panel count from [`MIN_PANELS`]
    /// until the normalizer and first four moments agree to [`TOLERANCE`].
    pub fn new(phi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        SiteMeasure::adaptive(Box::new(phi), MIN_PANELS)
    }

    pub fn with_min_panels(
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        panels: usize,
    ) -> Result<Self> {
        SiteMeasure::adaptive(Box::new(phi), panels.max(1))
    }

    fn adaptive(phi: Potential, start: usize) -> Result<Self> {
        let mut panels = start;
        let mut coarse = tabulate(&*phi, panels)?;
        loop {
            let fine = tabulate(&*phi, 2 * panels)?;
            let (a, b) = (coarse.summary(), fine.summary());
            let error = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if error <= TOLERANCE || 2 * panels >= MAX_PANELS {
                if error > TOLERANCE {
                    return Err(Error::Diagnostic(format!(
                        "1D quadrature did not converge: error {error:e} at {} panels",
                        2 * panels
                    )));
                }
                return Ok(SiteMeasure {
                    potential: phi,
                    xs: fine.xs,
                    probs: fine.probs,
                    log_z: fine.log_z,
                    panels: 2 * panels,
                    error,
                });
            }
            panels *= 2;
            coarse = fine;
        }
    }

    /// `E f(X)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.xs.iter().zip(&self.probs).map(|(&x, p)| p * f(x)).sum()
    }

    pub fn moment(&self, k: u32) -> f64 {
        self.expect(|x| x.powi(k as i32))
    }

    pub fn variance(&self) -> f64 {
        let m = self.moment(1);
        self.moment(2) - m * m
    }

    /// `ln ∫_{-1}^{1} e^{φ}`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_z
    }

    pub fn error_estimate(&self) -> f64 {
        self.error
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    /// `P(X ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let panels = ((x + 1.0) / 2.0 * self.panels as f64).ceil().max(1.0) as usize;
        let (xs, ws) = composite_rule(-1.0, x, panels);
        let mass: f64 = xs
            .iter()
            .zip(&ws)
            .map(|(&u, w)| w * ((self.potential)(u) - self.log_z).exp())
            .sum();
        mass.clamp(0.0, 1.0)
    }
}

/// `∫σ^k e^{φ} / ∫e^{φ}` on `[-1, 1]` with its error estimate.
pub fn quadrature_moment_1d(
    phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    k: u32,
    min_panels: usize,
) -> Result<Quadrature> {
    if min_panels < MIN_PANELS {
        return Err(Error::invalid(format!("resolution must be at least {MIN_PANELS} panels")));
    }
    let m = SiteMeasure::with_min_panels(phi, min_panels)?;
    Ok(Quadrature {
        value: m.moment(k),
        error: m.error_estimate(),
    })
}

/// Site marginal of a separable disorder sample.
pub fn site_measure(disorder: &DisorderSample, eps: f64, site: usize) -> Result<SiteMeasure> {
    // Validates separability and the site index.
    let _ = disorder.site_potential(site, eps)?;
    let h = disorder.model.field()[site];
    let pert = disorder.perturbation.clone();
    SiteMeasure::new(move |x| h * x - 0.5 * eps * x * x + pert.site_energy(site, x))
}

/// All site marginals of a separable disorder sample.
pub fn site_measures(disorder: &DisorderSample, eps: f64) -> Result<Vec<SiteMeasure>> {
    crate::par::try_map_range(disorder.dim(), |i| site_measure(disorder, eps, i))
}

/// `⟨σ_i^k⟩` for each `k` in `powers`.
pub fn separable_gibbs_moments(
    disorder: &DisorderSample,
    eps: f64,
    site: usize,
    powers: &[u32],
) -> Result<Vec<f64>> {
    let m = site_measure(disorder, eps, site)?;
    Ok(powers.iter().map(|&k| m.moment(k)).collect())
}

/// Gibbs measure of a small system tabulated on a tensor-product grid.
#[derive(Clone, Debug)]
pub struct GridOracle {
    n: usize,
    /// Flattened grid points, `n` coordinates each.
    points: Vec<f64>,
    probs: Vec<f64>,
    log_z: f64,
}

/// Largest `N` the grid oracle accepts.
pub const GRID_MAX_DIM: usize = 3;

impl GridOracle {
    /// `panels` Gauss–Legendre panels per axis (at least 6, i.e. 48 points).
    pub fn new(disorder: &DisorderSample, eps: f64, panels: usize) -> Result<Self> {
        let n = disorder.dim();
        if n > GRID_MAX_DIM {
            return Err(Error::Unsupported(format!(
                "grid oracle handles N ≤ {GRID_MAX_DIM}, got N = {n}"
            )));
        }
        let (axis, axis_w) = composite_rule(-1.0, 1.0, panels.max(6));
        let q = axis.len();
        let total = q.pow(n as u32);
        let mut points = Vec::with_capacity(total * n);
        let mut ws = Vec::with_capacity(total);
        let mut logs = Vec::with_capacity(total);
        let mut sigma = vec![0.0; n];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for s in sigma.iter_mut() {
                let k = rem % q;
                rem /= q;
                *s = axis[k];
                w *= axis_w[k];
            }
            let e = disorder.total_energy(&sigma, eps)?;
            if !e.is_finite() {
                return Err(Error::NonFinite("energy on the oracle grid".into()));
            }
            points.extend_from_slice(&sigma);
            ws.push(w);
            logs.push(e);
        }
        let (log_z, probs) = normalize(&logs, &ws);
        Ok(GridOracle {
            n,
            points,
            probs,
            log_z,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Single-replica expectation `⟨f(σ)⟩`.
    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points
            .chunks_exact(self.n)
            .zip(&self.probs)
            .map(|(s, p)| p * f(s))
            .sum()
    }

    /// `⟨Π_l f_l(σ^l)⟩` over independent replicas, which factorizes.
    pub fn expect_product(&self, factors: &[&dyn Fn(&[f64]) -> f64]) -> f64 {
        factors.iter().map(|f| self.expect(f)).product()
    }

    /// Brute-force `⟨f(σ^1, …, σ^n)⟩` over the replicated grid.
    ///
    /// Only feasible for tiny `N·n`; fails when the grid would exceed 2^26 points.
    pub fn expect_replicas(&self, replicas: usize, f: impl Fn(&[&[f64]]) -> f64) -> Result<f64> {
        let m = self.probs.len();
        let total = (m as f64).powi(replicas as i32);
        if total > (1u64 << 26) as f64 {
            return Err(Error::Unsupported(format!(
                "replicated grid with {total:e} points is too large"
            )));
        }
        let mut idx = vec![0usize; replicas];
        let mut acc = 0.0;
        let mut views: Vec<&[f64]> = vec![&[]; replicas];
        loop {
            let mut p = 1.0;
            for (l, &k) in idx.iter().enumerate() {
                views[l] = &self.points[k * self.n..(k + 1) * self.n];
                p *= self.probs[k];
            }
            acc += p * f(&views);
            let mut l = 0;
            loop {
                if l == replicas {
                    return Ok(acc);
                }
                idx[l] += 1;
                if idx[l] < m {
                    break;
                }
                idx[l] = 0;
                l += 1;
            }
        }
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_z
    }
}

/// `ln ∫ e^{H'(σ)} dσ` for separable models (sum of site terms) or `N ≤ 3` (grid).
pub fn free_entropy(disorder: &DisorderSample, eps: f64) -> Result<f64> {
    if disorder.is_separable() {
        let logs = crate::par::try_map_range(disorder.dim(), |i| {
            site_measure(disorder, eps, i).map(|m| m.log_normalizer())
        })?;
        Ok(logs.iter().sum())
    } else if disorder.dim() <= GRID_MAX_DIM {
        let coarse = GridOracle::new(disorder, eps, 8)?.log_normalizer();
        let fine = GridOracle::new(disorder, eps, 16)?.log_normalizer();
        if (coarse - fine).abs() > 1e-8 {
            return Err(Error::Diagnostic(format!(
                "grid free entropy unresolved: {coarse} vs {fine}"
            )));
        }
        Ok(fine)
    } else {
        Err(Error::Unsupported(format!(
            "free entropy of a coupled model with N = {}",
            disorder.dim()
        )))
    }
}

/// Result of a truncated Poisson average.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonAverage {
    pub value: f64,
    /// Largest count included.
    pub terms: usize,
    /// Certified bound on the neglected tail.
    pub tail_bound: f64,
}

/// `Σ_{r=0}^{R} e^{-s} s^r / r! · f(r)` for `|f(r)| ≤ bound·(1 + r)^growth`.
///
/// `R` is the smallest cutoff past the mode for which the ratio test bounds
/// the neglected tail by `tolerance`. Any evaluated `f(r)` that violates the
/// envelope is an error.
pub fn truncated_poisson_average(
    f: impl Fn(usize) -> f64,
    s: f64,
    bound: f64,
    growth: u32,
    tolerance: f64,
) -> Result<PoissonAverage> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Domain {
            what: "Poisson mean",
            value: s,
            domain: "[0, ∞)",
        });
    }
    if !(tolerance > 0.0) || !(bound >= 0.0 && bound.is_finite()) {
        return Err(Error::invalid("tolerance must be positive and the bound finite"));
    }
    let envelope = |r: usize| bound * (1.0 + r as f64).powi(growth as i32);
    let mut value = 0.0;
    let mut log_mass = -s;
    let mut r = 0usize;
    loop {
        let fr = f(r);
        if !fr.is_finite() || fr.abs() > envelope(r) * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "f({r}) = {fr} exceeds the stated envelope {}",
                envelope(r)
            )));
        }
        value += log_mass.exp() * fr;
        // Bound on Σ_{j>r} p_j·envelope(j) by a geometric series with ratio ρ.
        let next = r + 1;
        let log_next = log_mass + if s > 0.0 { s.ln() - (next as f64).ln() } else { f64::NEG_INFINITY };
        if (next as f64) > s {
            let rho = s / (next as f64 + 1.0)
                * ((next as f64 + 2.0) / (next as f64 + 1.0)).powi(growth as i32);
            if rho < 1.0 {
                let tail = log_next.exp() * envelope(next) / (1.0 - rho);
                if tail <= tolerance {
                    return Ok(PoissonAverage {
                        value,
                        terms: r,
                        tail_bound: tail,
                    });
                }
            }
        }
        log_mass = log_next;
        r = next;
        if r > 100_000 {
            return Err(Error::Diagnostic("Poisson average did not converge".into()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{quadratic_model, Hamiltonian, ModelKind};
    use crate::perturbation::{sample_perturbation, TruncationPolicy};
    use crate::rng::SeedLineage;
    use rand::SeedableRng;

    fn langevin(h: f64) -> f64 {
        1.0 / h.tanh() - 1.0 / h
    }

    #[test]
    fn uniform_and_linear_moments() {
        assert!(quadrature_moment_1d(|_| 0.0, 1, 64).unwrap().value.abs() < 1e-14);
        assert!((quadrature_moment_1d(|_| 0.0, 2, 64).unwrap().value - 1.0 / 3.0).abs() < 1e-14);
        let m = quadrature_moment_1d(|x| x, 1, 64).unwrap();
        assert!((m.value - langevin(1.0)).abs() < 1e-12);
        assert!((m.value - 0.313035).abs() < 1e-6);
        assert!(quadrature_moment_1d(|_| 0.0, 1, 8).is_err());
        assert!(SiteMeasure::new(|x| if x > 0.5 { f64::NAN } else { 0.0 }).is_err());
    }

    #[test]
    fn truncated_gaussian_variance() {
        let m = SiteMeasure::new(|x| -0.5 * x * x).unwrap();
        // Var of a unit Gaussian truncated to [-1, 1]: 1 - 2φ(1)/(2Φ(1) - 1).
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expected = 1.0 - 2.0 * phi1 / 0.682_689_492_137_085_9;
        assert!((m.variance() - expected).abs() < 1e-12);
        assert!((m.variance() - 0.2912).abs() < 1e-4);
    }

    #[test]
    fn doubling_changes_less_than_reported_error() {
        let phi = |x: f64| 2.3 * x - 1.7 * x * x - 0.2 * (x + 1.0).powi(2);
        let m = SiteMeasure::new(phi).unwrap();
        let finer = SiteMeasure::with_min_panels(phi, 2 * m.panels()).unwrap();
        for k in 1..=4 {
            assert!((m.moment(k) - finer.moment(k)).abs() <= m.error_estimate().max(1e-14));
        }
    }

    #[test]
    fn cdf_matches_closed_form() {
        let m = SiteMeasure::new(|x| x).unwrap();
        for x in [-0.9, -0.2, 0.0, 0.4, 0.99] {
            let exact = (f64::exp(x) - f64::exp(-1.0)) / (f64::exp(1.0) - f64::exp(-1.0));
            assert!((m.cdf(x) - exact).abs() < 1e-12);
        }
        assert_eq!(m.cdf(-2.0), 0.0);
        assert_eq!(m.cdf(1.0), 1.0);
    }

    fn field_disorder(h: Vec<f64>) -> DisorderSample {
        DisorderSample::unperturbed(
            Hamiltonian::from_parts(ModelKind::RandomField, h, None, 0.0, None).unwrap(),
        )
    }

    #[test]
    fn separable_moment_examples() {
        let d = field_disorder(vec![0.0, 1.0]);
        let m = separable_gibbs_moments(&d, 0.0, 0, &[1, 2, 3, 4]).unwrap();
        let expected = [0.0, 1.0 / 3.0, 0.0, 0.2];
        assert!(m.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-13));
        let m1 = separable_gibbs_moments(&d, 0.0, 1, &[1]).unwrap()[0];
        assert!((m1 - 0.313035).abs() < 1e-6);
        let second: Vec<f64> = [0.0, 1.0, 10.0]
            .iter()
            .map(|&e| separable_gibbs_moments(&d, e, 0, &[2]).unwrap()[0])
            .collect();
        assert!(second[0] > second[1] && second[1] > second[2]);
    }

    #[test]
    fn free_entropy_examples() {
        let z = DisorderSample::unperturbed(Hamiltonian::zero(3).unwrap());
        assert!((free_entropy(&z, 0.0).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
        let d = field_disorder(vec![1.0]);
        let f = free_entropy(&d, 0.0).unwrap();
        assert!((f - (1f64.exp() - (-1f64).exp()).ln()).abs() < 1e-10);
        let d = field_disorder(vec![0.3, -1.2, 2.0]);
        let sum: f64 = (0..3)
            .map(|i| free_entropy(&field_disorder(vec![d.model.field()[i]]), 0.4).unwrap())
            .sum();
        assert!((free_entropy(&d, 0.4).unwrap() - sum).abs() < 1e-10);
    }

    #[test]
    fn grid_matches_separable_with_perturbation() {
        let h = vec![0.7, -0.4];
        let pert = sample_perturbation(2, 2.0, 1.0, &TruncationPolicy::default(), &SeedLineage::new(4))
            .unwrap();
        let d = DisorderSample::with_perturbation(
            Hamiltonian::from_parts(ModelKind::RandomField, h, None, 0.0, None).unwrap(),
            pert,
        )
        .unwrap();
        let g = GridOracle::new(&d, 0.3, 8).unwrap();
        assert!((g.expect(|_| 1.0) - 1.0).abs() < 1e-12);
        for i in 0..2 {
            let m = separable_gibbs_moments(&d, 0.3, i, &[1, 2]).unwrap();
            assert!((g.expect(|s| s[i]) - m[0]).abs() < 1e-6);
            assert!((g.expect(|s| s[i] * s[i]) - m[1]).abs() < 1e-6);
        }
        assert!((g.log_normalizer() - free_entropy(&d, 0.3).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn grid_replica_independence() {
        let z = DisorderSample::unperturbed(Hamiltonian::zero(1).unwrap());
        let g = GridOracle::new(&z, 0.0, 6).unwrap();
        let v = g.expect_replicas(2, |r| r[0][0] * r[1][0]).unwrap();
        assert!(v.abs() < 1e-14);
        let q = g.expect_replicas(2, |r| (r[0][0] * r[1][0]).powi(2)).unwrap();
        assert!((q - 1.0 / 9.0).abs() < 1e-12);
        let f = |s: &[f64]| s[0] * s[0];
        assert!((g.expect_product(&[&f, &f]) - q).abs() < 1e-12);
    }

    #[test]
    fn grid_free_entropy_of_coupled_model() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = DisorderSample::unperturbed(quadratic_model(2, 4, 1.0, &mut rng).unwrap());
        let f = free_entropy(&d, 0.1).unwrap();
        assert!(f.is_finite());
        assert!(free_entropy(
            &DisorderSample::unperturbed(quadratic_model(4, 8, 1.0, &mut rng).unwrap()),
            0.1
        )
        .is_err());
    }

    #[test]
    fn poisson_average_examples() {
        let one = truncated_poisson_average(|_| 1.0, 3.0, 1.0, 0, 1e-12).unwrap();
        assert!((one.value - 1.0).abs() < 1e-12);
        let mean = truncated_poisson_average(|r| r as f64, 2.0, 1.0, 1, 1e-12).unwrap();
        assert!((mean.value - 2.0).abs() < 1e-12);
        let sq = truncated_poisson_average(|r| (r * r) as f64, 2.0, 1.0, 2, 1e-12).unwrap();
        assert!((sq.value - 6.0).abs() < 1e-11);
        assert!(sq.tail_bound <= 1e-12);
        assert!(truncated_poisson_average(|r| (r * r) as f64, 2.0, 1.0, 1, 1e-12).is_err());
        let zero = truncated_poisson_average(|r| r as f64, 0.0, 1.0, 1, 1e-12).unwrap();
        assert_eq!(zero.value, 0.0);
    }
}
