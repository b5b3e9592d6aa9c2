//! Elementary inequalities used along the way: the Brascamp–Lieb variance
//! bound, the geometric expansion of `1/x` and the derivative gap of convex
//! functions.

use serde::{Deserialize, Serialize};

use super::{multioverlap_gradient_norm_sq, multioverlap_unchecked, HFunction, MultioverlapIndex};
use crate::error::{Error, Result};
use crate::models::DisorderSample;
use crate::oracle::site_measures;
use crate::sampler::ReplicaEnsemble;
use crate::stats::{batch_means, Estimate};

const E2: f64 = std::f64::consts::E * std::f64::consts::E;

fn reciprocal_domain_min() -> f64 {
    (-2.0f64).exp()
}

/// `p_r(x) = Σ_{m=0}^{r} (1 - x)^m` on `[e^{-2}, 1)`.
pub fn reciprocal_poly(x: f64, r: usize) -> Result<f64> {
    if !(x >= reciprocal_domain_min() && x < 1.0) {
        return Err(Error::Domain {
            what: "x",
            value: x,
            domain: "[e^-2, 1)",
        });
    }
    let y = 1.0 - x;
    Ok((0..=r).rev().fold(0.0, |acc, _| acc * y + 1.0))
}

/// Uniform bound `e²(1 - e^{-2})^{r+1}` on `|p_r(x) - 1/x|`.
pub fn reciprocal_poly_bound(r: usize) -> f64 {
    E2 * (1.0 - reciprocal_domain_min()).powi(r as i32 + 1)
}

/// A convex function of one variable with its derivative.
pub struct ConvexFn {
    value: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    derivative: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ConvexFn {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ConvexFn {
            value: Box::new(value),
            derivative: Box::new(derivative),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    /// Second differences on a 33-point grid over `[a, b]` and monotone
    /// derivative on the same grid.
    fn looks_convex(&self, a: f64, b: f64) -> bool {
        let pts = 33;
        let h = (b - a) / (pts - 1) as f64;
        let xs: Vec<f64> = (0..pts).map(|j| a + j as f64 * h).collect();
        let v: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        let d: Vec<f64> = xs.iter().map(|&x| self.derivative(x)).collect();
        let scale = v.iter().chain(&d).fold(1.0f64, |m, x| m.max(x.abs()));
        let tol = 1e-9 * scale;
        v.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= -tol) && d.windows(2).all(|w| w[1] >= w[0] - tol)
    }
}

/// Both sides of `|G'(x) - g'(x)| ≤ δ⁻¹ Σ_{u ∈ {x-δ, x, x+δ}} |G(u) - g(u)| + C⁺ + C⁻`
/// with `C⁺ = g'(x+δ) - g'(x)` and `C⁻ = g'(x) - g'(x-δ)`.
pub fn convex_derivative_gap_bound(big: &ConvexFn, small: &ConvexFn, x: f64, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain {
            what: "delta",
            value: delta,
            domain: "(0, ∞)",
        });
    }
    if !big.looks_convex(x - delta, x + delta) || !small.looks_convex(x - delta, x + delta) {
        return Err(Error::invalid("input function is not convex on [x - delta, x + delta]"));
    }
    let lhs = (big.derivative(x) - small.derivative(x)).abs();
    let diffs: f64 = [x - delta, x, x + delta]
        .iter()
        .map(|&u| (big.value(u) - small.value(u)).abs())
        .sum();
    let c_plus = small.derivative(x + delta) - small.derivative(x);
    let c_minus = small.derivative(x) - small.derivative(x - delta);
    Ok((lhs, diffs / delta + c_plus + c_minus))
}

/// Observables `g` for the Brascamp–Lieb check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BlObservable {
    /// `Σ_i a_i h(σ_i)`.
    SiteSum { weights: Vec<f64>, h: HFunction },
    /// `R^{(k)}` of `n` independent replicas.
    Multioverlap { k: MultioverlapIndex },
}

impl BlObservable {
    fn replicas(&self) -> usize {
        match self {
            BlObservable::SiteSum { .. } => 1,
            BlObservable::Multioverlap { k } => k.replicas(),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if let BlObservable::SiteSum { weights, .. } = self {
            crate::error::check_len(n, weights.len())?;
        }
        Ok(())
    }

    /// `(g, ‖∇g‖²)` at one replica tuple.
    fn eval(&self, replicas: &[&[f64]]) -> (f64, f64) {
        match self {
            BlObservable::SiteSum { weights, h } => {
                let s = replicas[0];
                let mut g = 0.0;
                let mut grad = 0.0;
                for (a, &x) in weights.iter().zip(s) {
                    g += a * h.eval(x);
                    grad += (a * h.derivative(x)).powi(2);
                }
                (g, grad)
            }
            BlObservable::Multioverlap { k } => (
                multioverlap_unchecked(replicas, k.powers()),
                multioverlap_gradient_norm_sq(replicas, k).unwrap_or(f64::NAN),
            ),
        }
    }
}

/// Variance of `g` and the bound `E‖∇g‖²/ε` for a Gibbs measure whose total
/// Hessian is certified below `-ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlCheck {
    pub variance: Estimate,
    pub bound: Estimate,
    /// Certified curvature `ε`.
    pub curvature: f64,
}

impl BlCheck {
    /// `variance ≤ bound` up to three combined standard errors.
    pub fn passed(&self) -> bool {
        let se = self.variance.stderr.hypot(self.bound.stderr);
        self.variance.value <= self.bound.value + 3.0 * se + 1e-12
    }
}

fn certified_curvature(disorder: &DisorderSample, eps: f64) -> Result<f64> {
    let curvature = -disorder.total_hessian_bound(eps);
    if !(curvature > 0.0) {
        return Err(Error::Unsupported(format!(
            "Hessian is not certified below a negative multiple of the identity (bound {})",
            -curvature
        )));
    }
    Ok(curvature)
}

/// Exact check for a separable disorder sample by one-dimensional quadrature.
pub fn brascamp_lieb_oracle(disorder: &DisorderSample, eps: f64, g: &BlObservable) -> Result<BlCheck> {
    let curvature = certified_curvature(disorder, eps)?;
    g.check_dim(disorder.dim())?;
    let sites = site_measures(disorder, eps)?;
    let (var, grad) = match g {
        BlObservable::SiteSum { weights, h } => {
            let mut var = 0.0;
            let mut grad = 0.0;
            for (a, m) in weights.iter().zip(&sites) {
                let mean = m.expect(|x| h.eval(x));
                var += a * a * (m.expect(|x| h.eval(x).powi(2)) - mean * mean);
                grad += a * a * m.expect(|x| h.derivative(x).powi(2));
            }
            (var, grad)
        }
        BlObservable::Multioverlap { k } => {
            let (_, var) = super::multioverlap_oracle_moments(&sites, k);
            let n = sites.len() as f64;
            let p = k.powers();
            let mut grad = 0.0;
            for m in &sites {
                for (l, &kl) in p.iter().enumerate() {
                    let mut term = (kl * kl) as f64 * m.moment(2 * (kl - 1));
                    for (j, &kj) in p.iter().enumerate() {
                        if j != l {
                            term *= m.moment(2 * kj);
                        }
                    }
                    grad += term;
                }
            }
            (var, grad / (n * n))
        }
    };
    Ok(BlCheck {
        variance: Estimate::exact(var),
        bound: Estimate::exact(grad / curvature),
        curvature,
    })
}

/// Monte Carlo check on an ensemble; replica tuples are the states of
/// disjoint chain groups at a common time. Errors by batch means.
pub fn brascamp_lieb_check(
    ensemble: &ReplicaEnsemble,
    disorder: &DisorderSample,
    g: &BlObservable,
) -> Result<BlCheck> {
    let curvature = certified_curvature(disorder, ensemble.eps)?;
    g.check_dim(ensemble.n)?;
    let n = g.replicas();
    let groups = ensemble.groups(n);
    if groups < 2 {
        return Err(Error::Insufficient {
            what: "replica groups",
            needed: 2,
            found: groups,
        });
    }
    let mut values = Vec::with_capacity(groups);
    let mut grads = Vec::with_capacity(groups);
    for grp in 0..groups {
        let (mut v, mut gr) = (Vec::new(), Vec::new());
        for t in 0..ensemble.samples_per_chain {
            let views: Vec<&[f64]> = (0..n).map(|l| ensemble.sample(grp * n + l, t)).collect();
            let (a, b) = g.eval(&views);
            v.push(a);
            gr.push(b);
        }
        values.push(v);
        grads.push(gr);
    }
    let batches = 10.min(ensemble.samples_per_chain);
    let (centre, _) = batch_means(&values, batches);
    let sq: Vec<Vec<f64>> = values
        .iter()
        .map(|v| v.iter().map(|x| (x - centre).powi(2)).collect())
        .collect();
    let (var, var_se) = batch_means(&sq, batches);
    let (grad, grad_se) = batch_means(&grads, batches);
    let total = groups * ensemble.samples_per_chain;
    let var = var * total as f64 / (total - 1) as f64;
    Ok(BlCheck {
        variance: Estimate::new(var, var_se).with_counts(1, groups, ensemble.mcmc_steps()),
        bound: Estimate::new(grad / curvature, grad_se / curvature).with_counts(1, groups, ensemble.mcmc_steps()),
        curvature,
    })
}
