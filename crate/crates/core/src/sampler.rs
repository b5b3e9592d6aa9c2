//! Replica samplers for Gibbs densities `∝ exp(H'(σ))` on `[-1, 1]^N`.
//!
//! The default sampler is a systematic-scan coordinate slice sampler. Each full
//! conditional is a one-dimensional log-concave density on `[-1, 1]`, so a
//! slice is a single interval: stepping out (clipped at the box) followed by
//! shrinkage samples it exactly, with no step size to tune. The model gradient
//! is maintained incrementally so that the conditional of coordinate `i` is
//!
//! ```text
//! ℓ(x) = g_i·(x - x₀) - ½ a_ii (x - x₀)² - ε x²/2 + H_pert,i(x),
//! ```
//!
//! which costs O(1) per evaluation plus one O(N) gradient update per move.
//!
//! A reflected Metropolis-adjusted Langevin sampler is provided as an
//! independent cross-check.
//!
//! Randomness is addressed by `(site, sweep)` inside each chain's stream, and
//! the chain stream does not depend on the perturbation strength, so runs at
//! `t = 0` and `t = 1` use common random numbers.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DisorderSample, HamiltonianModel};
use crate::rng::{AddressedRng, SeedLineage};
use crate::stats::variance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    CoordinateSlice,
    ReflectedLangevin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub algorithm: Algorithm,
    /// Sweeps (slice) or steps (Langevin) discarded before recording.
    pub burn_in: usize,
    /// Recorded samples per chain.
    pub samples: usize,
    /// Sweeps between recorded samples.
    pub thin: usize,
    /// Initial slice width (slice) or proposal scale `h` (Langevin).
    pub step_size: f64,
    /// Sweeps between full gradient recomputations.
    pub refresh_every: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            algorithm: Algorithm::CoordinateSlice,
            burn_in: 100,
            samples: 200,
            thin: 1,
            step_size: 0.5,
            refresh_every: 50,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.thin == 0 || self.refresh_every == 0 {
            return Err(Error::invalid("samples, thin and refresh_every must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Domain {
                what: "step_size",
                value: self.step_size,
                domain: "(0, ∞)",
            });
        }
        Ok(())
    }

    /// Sweeps run per chain, burn-in included.
    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.samples * self.thin
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub sweeps: usize,
    /// Fraction of post-burn-in updates that changed the state.
    pub acceptance: f64,
}

/// Recorded samples of independent chains targeting one Gibbs measure.
///
/// Sample `s` of chain `c` is a replica; samples of distinct chains are
/// conditionally independent, so groups of distinct chains give independent
/// replica tuples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaEnsemble {
    pub n: usize,
    pub chains: usize,
    pub samples_per_chain: usize,
    pub eps: f64,
    pub lineage: SeedLineage,
    pub stats: Vec<ChainStats>,
    data: Vec<f64>,
}

impl ReplicaEnsemble {
    /// Builds an ensemble from explicit chain traces (`chains × samples × n`).
    pub fn from_traces(traces: Vec<Vec<Vec<f64>>>, eps: f64) -> Result<Self> {
        let chains = traces.len();
        let samples_per_chain = traces.first().map_or(0, |t| t.len());
        let n = traces
            .first()
            .and_then(|t| t.first())
            .map_or(0, |s| s.len());
        let mut data = Vec::with_capacity(chains * samples_per_chain * n);
        for t in &traces {
            if t.len() != samples_per_chain {
                return Err(Error::invalid("chains have different lengths"));
            }
            for s in t {
                crate::error::check_len(n, s.len())?;
                data.extend_from_slice(s);
            }
        }
        Ok(ReplicaEnsemble {
            n,
            chains,
            samples_per_chain,
            eps,
            lineage: SeedLineage::new(0),
            stats: vec![
                ChainStats {
                    sweeps: samples_per_chain,
                    acceptance: 1.0
                };
                chains
            ],
            data,
        })
    }

    pub fn sample(&self, chain: usize, s: usize) -> &[f64] {
        let off = (chain * self.samples_per_chain + s) * self.n;
        &self.data[off..off + self.n]
    }

    /// Trace of a scalar function along one chain.
    pub fn trace(&self, chain: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.samples_per_chain)
            .map(|s| f(self.sample(chain, s)))
            .collect()
    }

    /// Number of disjoint groups of `size` chains.
    pub fn groups(&self, size: usize) -> usize {
        if size == 0 {
            0
        } else {
            self.chains / size
        }
    }

    /// Total sweeps over all chains.
    pub fn mcmc_steps(&self) -> usize {
        self.stats.iter().map(|s| s.sweeps).sum()
    }

    pub fn min_acceptance(&self) -> f64 {
        self.stats
            .iter()
            .map(|s| s.acceptance)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Runs `chains` independent chains on one disorder sample.
///
/// Chain `c` draws from `lineage / c`; chains run in parallel and are
/// assembled in index order.
pub fn sample_replicas(
    disorder: &DisorderSample,
    eps: f64,
    chains: usize,
    config: &McmcConfig,
    lineage: &SeedLineage,
) -> Result<ReplicaEnsemble> {
    if chains == 0 {
        return Err(Error::invalid("need at least one chain"));
    }
    if config.samples == 0 || config.thin == 0 {
        return Err(Error::invalid("samples and thin must be positive"));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Domain {
            what: "eps",
            value: eps,
            domain: "[0, ∞)",
        });
    }
    let runs = crate::par::try_map_range(chains, |c| {
        let chain_lineage = lineage.child(c as u64);
        match config.algorithm {
            Algorithm::CoordinateSlice => run_slice_chain(disorder, eps, config, &chain_lineage),
            Algorithm::ReflectedLangevin => run_langevin_chain(disorder, eps, config, &chain_lineage),
        }
    })?;
    let n = disorder.dim();
    let mut data = Vec::with_capacity(chains * config.samples * n);
    let mut stats = Vec::with_capacity(chains);
    for (samples, st) in runs {
        data.extend_from_slice(&samples);
        stats.push(st);
    }
    Ok(ReplicaEnsemble {
        n,
        chains,
        samples_per_chain: config.samples,
        eps,
        lineage: lineage.clone(),
        stats,
        data,
    })
}

fn initial_state(rng: &mut AddressedRng, n: usize) -> Vec<f64> {
    let r = rng.at(n as u64, u64::MAX >> 32);
    (0..n).map(|_| r.random_range(-1.0..=1.0)).collect()
}

/// One slice update of a log-concave density on `[-1, 1]`.
///
/// Returns the new point; it always lies in the box.
pub fn slice_update<R: Rng + ?Sized>(
    x0: f64,
    width: f64,
    logp: impl Fn(f64) -> f64,
    rng: &mut R,
) -> f64 {
    let level = logp(x0) - rng.sample::<f64, _>(Exp1);
    let u: f64 = rng.random();
    let mut lo = (x0 - u * width).max(-1.0);
    let mut hi = (lo + width).min(1.0);
    if width > 0.0 {
        while lo > -1.0 && logp(lo) > level {
            lo = (lo - width).max(-1.0);
        }
        while hi < 1.0 && logp(hi) > level {
            hi = (hi + width).min(1.0);
        }
    }
    for _ in 0..200 {
        let x = lo + rng.random::<f64>() * (hi - lo);
        if logp(x) >= level {
            assert!((-1.0..=1.0).contains(&x), "slice proposal left the box");
            return x;
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    x0
}

fn run_slice_chain(
    disorder: &DisorderSample,
    eps: f64,
    config: &McmcConfig,
    lineage: &SeedLineage,
) -> Result<(Vec<f64>, ChainStats)> {
    let n = disorder.dim();
    let model = &*disorder.model;
    let pert = &disorder.perturbation;
    let separable = model.is_separable();
    let curvature: Vec<f64> = (0..n).map(|i| model.self_curvature(i)).collect();
    let mut rng = lineage.addressed();
    let mut sigma = initial_state(&mut rng, n);
    let mut grad = model.gradient(&sigma);
    let total = config.total_sweeps();
    let mut out = Vec::with_capacity(config.samples * n);
    let (mut moved, mut updates) = (0usize, 0usize);
    for sweep in 0..total {
        if !separable && sweep > 0 && sweep % config.refresh_every == 0 {
            model.gradient_into(&sigma, &mut grad);
        }
        for i in 0..n {
            let x0 = sigma[i];
            let (g, c) = (grad[i], curvature[i]);
            let logp = |x: f64| {
                let d = x - x0;
                g * d - 0.5 * c * d * d - 0.5 * eps * x * x + pert.site_energy(i, x)
            };
            let x = slice_update(x0, config.step_size, logp, rng.at(i as u64, sweep as u64));
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("state of site {i} in chain {:?}", lineage.path)));
            }
            if sweep >= config.burn_in {
                updates += 1;
                if x != x0 {
                    moved += 1;
                }
            }
            if x != x0 {
                sigma[i] = x;
                if !separable {
                    model.shift_gradient(&mut grad, i, x - x0);
                }
            }
        }
        if sweep >= config.burn_in && (sweep + 1 - config.burn_in) % config.thin == 0 {
            out.extend_from_slice(&sigma);
        }
    }
    Ok((
        out,
        ChainStats {
            sweeps: total,
            acceptance: if updates > 0 { moved as f64 / updates as f64 } else { 1.0 },
        },
    ))
}

/// Folds the real line onto `[-1, 1]` by reflection at `±1`.
pub fn reflect(z: f64) -> f64 {
    let w = (z + 1.0).rem_euclid(4.0);
    if w > 2.0 {
        3.0 - w
    } else {
        w - 1.0
    }
}

/// Log density of the reflected proposal `reflect(μ + h ξ)` at `y`, per coordinate.
fn log_reflected_kernel(y: &[f64], mean: &[f64], h: f64) -> f64 {
    let norm = -(h * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let reach = (6.0 * h / 4.0).ceil() as i64 + 1;
    y.iter()
        .zip(mean)
        .map(|(&yi, &mi)| {
            let mut acc = 0.0;
            for k in -reach..=reach {
                let shift = 4.0 * k as f64;
                for z in [yi + shift, 2.0 - yi + shift] {
                    let d = (z - mi) / h;
                    acc += (-0.5 * d * d).exp();
                }
            }
            norm + acc.max(f64::MIN_POSITIVE).ln()
        })
        .sum()
}

fn run_langevin_chain(
    disorder: &DisorderSample,
    eps: f64,
    config: &McmcConfig,
    lineage: &SeedLineage,
) -> Result<(Vec<f64>, ChainStats)> {
    let n = disorder.dim();
    let h = config.step_size;
    let mut rng = lineage.addressed();
    let mut x = initial_state(&mut rng, n);
    let mut ex = disorder.total_energy(&x, eps)?;
    let mut gx = disorder.total_gradient(&x, eps)?;
    let drift = |p: &[f64], g: &[f64]| -> Vec<f64> {
        p.iter().zip(g).map(|(a, b)| a + 0.5 * h * h * b).collect()
    };
    let total = config.total_sweeps();
    let mut out = Vec::with_capacity(config.samples * n);
    let (mut accepted, mut steps) = (0usize, 0usize);
    for step in 0..total {
        let r = rng.at(0, step as u64);
        let mx = drift(&x, &gx);
        let y: Vec<f64> = mx
            .iter()
            .map(|m| reflect(m + h * r.sample::<f64, _>(StandardNormal)))
            .collect();
        let ey = disorder.total_energy(&y, eps)?;
        if !ey.is_finite() {
            return Err(Error::NonFinite("Langevin proposal energy".into()));
        }
        let gy = disorder.total_gradient(&y, eps)?;
        let my = drift(&y, &gy);
        let log_ratio =
            ey - ex + log_reflected_kernel(&x, &my, h) - log_reflected_kernel(&y, &mx, h);
        let u: f64 = r.random();
        let accept = u.ln() < log_ratio;
        if accept {
            x = y;
            ex = ey;
            gx = gy;
        }
        if step >= config.burn_in {
            steps += 1;
            accepted += accept as usize;
            if (step + 1 - config.burn_in) % config.thin == 0 {
                out.extend_from_slice(&x);
            }
        }
    }
    Ok((
        out,
        ChainStats {
            sweeps: total,
            acceptance: if steps > 0 { accepted as f64 / steps as f64 } else { 1.0 },
        },
    ))
}

/// Convergence summary of an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    /// Split-chain potential scale reduction per coordinate (`NaN` when degenerate).
    pub rhat: Vec<f64>,
    /// Effective sample size per coordinate.
    pub ess: Vec<f64>,
    pub max_rhat: f64,
    pub min_ess: f64,
    /// Coordinates whose within-chain variance is zero.
    pub degenerate: Vec<usize>,
    /// Chains with acceptance below 1%.
    pub stuck_chains: Vec<usize>,
}

/// Reduction factor above which a coordinate is flagged.
pub const RHAT_LIMIT: f64 = 1.05;
pub const MIN_ACCEPTANCE: f64 = 0.01;

impl DiagnosticReport {
    pub fn passed(&self) -> bool {
        self.degenerate.is_empty()
            && self.stuck_chains.is_empty()
            && self.rhat.iter().all(|r| r.is_finite() && *r <= RHAT_LIMIT)
    }

    /// Human-readable reason for a failure, naming the offending chain or coordinate.
    pub fn failure(&self) -> Option<String> {
        if let Some(&c) = self.stuck_chains.first() {
            return Some(format!("chain {c} acceptance below {MIN_ACCEPTANCE}"));
        }
        if let Some(&i) = self.degenerate.first() {
            return Some(format!("coordinate {i} has zero within-chain variance"));
        }
        self.rhat
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r <= RHAT_LIMIT))
            .map(|(i, r)| format!("coordinate {i} split-Rhat {r:.4} exceeds {RHAT_LIMIT}"))
    }
}

/// Split-R̂ and effective sample size of a set of scalar chains.
///
/// Returns `None` for the reduction factor when the within-chain variance is
/// zero.
pub fn split_rhat_ess(chains: &[Vec<f64>]) -> Result<(Option<f64>, f64)> {
    let len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if chains.len() < 2 && len < 4 || len < 4 {
        return Err(Error::Insufficient {
            what: "samples per chain for split diagnostics",
            needed: 4,
            found: len,
        });
    }
    let half = len / 2;
    let seqs: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[half..2 * half]])
        .collect();
    let m = seqs.len() as f64;
    let nf = half as f64;
    let means: Vec<f64> = seqs.iter().map(|s| crate::stats::mean(s)).collect();
    let w = seqs.iter().map(|s| variance(s)).sum::<f64>() / m;
    let b = nf * variance(&means);
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    if !(w > 0.0) {
        return Ok((None, 0.0));
    }
    let rhat = (var_plus / w).sqrt();
    // Geyer initial positive sequence on the averaged autocorrelations.
    let mut rho_sum = 0.0;
    let mut lag = 1;
    while lag + 1 < half {
        let pair = autocorr(&seqs, &means, lag, w, var_plus) + autocorr(&seqs, &means, lag + 1, w, var_plus);
        if pair <= 0.0 {
            break;
        }
        rho_sum += pair;
        lag += 2;
    }
    let ess = m * nf / (1.0 + 2.0 * rho_sum).max(1.0 / (m * nf).ln().max(1.0));
    Ok((Some(rhat), ess))
}

fn autocorr(seqs: &[&[f64]], means: &[f64], lag: usize, w: f64, var_plus: f64) -> f64 {
    let m = seqs.len() as f64;
    let acov: f64 = seqs
        .iter()
        .zip(means)
        .map(|(s, mu)| {
            let n = s.len();
            (0..n - lag).map(|t| (s[t] - mu) * (s[t + lag] - mu)).sum::<f64>() / n as f64
        })
        .sum::<f64>()
        / m;
    1.0 - (w - acov) / var_plus
}

/// Per-coordinate split-R̂ and ESS, plus acceptance checks.
pub fn diagnostics(ensemble: &ReplicaEnsemble) -> Result<DiagnosticReport> {
    if ensemble.chains < 2 {
        return Err(Error::Insufficient {
            what: "chains",
            needed: 2,
            found: ensemble.chains,
        });
    }
    let per_coord = crate::par::try_map_range(ensemble.n, |i| {
        let traces: Vec<Vec<f64>> = (0..ensemble.chains)
            .map(|c| ensemble.trace(c, |s| s[i]))
            .collect();
        split_rhat_ess(&traces)
    })?;
    let mut rhat = Vec::with_capacity(ensemble.n);
    let mut ess = Vec::with_capacity(ensemble.n);
    let mut degenerate = Vec::new();
    for (i, (r, e)) in per_coord.into_iter().enumerate() {
        match r {
            Some(r) => rhat.push(r),
            None => {
                rhat.push(f64::NAN);
                degenerate.push(i);
            }
        }
        ess.push(e);
    }
    let stuck_chains = ensemble
        .stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.acceptance < MIN_ACCEPTANCE)
        .map(|(c, _)| c)
        .collect();
    Ok(DiagnosticReport {
        max_rhat: rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_ess: ess.iter().copied().fold(f64::INFINITY, f64::min),
        rhat,
        ess,
        degenerate,
        stuck_chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{quadratic_model, random_field_model, Hamiltonian, ModelKind};
    use crate::oracle::{site_measure, GridOracle};
    use crate::stats::{batch_means, ks_critical_one_sample, ks_one_sample};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn short() -> McmcConfig {
        McmcConfig {
            burn_in: 50,
            samples: 2000,
            ..McmcConfig::default()
        }
    }

    fn field(h: Vec<f64>) -> DisorderSample {
        DisorderSample::unperturbed(
            Hamiltonian::from_parts(ModelKind::RandomField, h, None, 0.0, None).unwrap(),
        )
    }

    fn coordinate_traces(e: &ReplicaEnsemble, f: impl Fn(&[f64]) -> f64 + Copy) -> Vec<Vec<f64>> {
        (0..e.chains).map(|c| e.trace(c, f)).collect()
    }

    #[test]
    fn uniform_target_moments() {
        let d = DisorderSample::unperturbed(Hamiltonian::zero(1).unwrap());
        let cfg = McmcConfig {
            samples: 1250,
            ..short()
        };
        let e = sample_replicas(&d, 0.0, 8, &cfg, &SeedLineage::new(1)).unwrap();
        let (m1, se1) = batch_means(&coordinate_traces(&e, |s| s[0]), 10);
        let (m2, se2) = batch_means(&coordinate_traces(&e, |s| s[0] * s[0]), 10);
        assert!(m1.abs() < 3.0 * se1, "{m1} ± {se1}");
        assert!((m2 - 1.0 / 3.0).abs() < 3.0 * se2, "{m2} ± {se2}");
    }

    #[test]
    fn single_field_mean_matches_langevin_function() {
        let d = field(vec![1.0]);
        let e = sample_replicas(&d, 0.0, 8, &short(), &SeedLineage::new(2)).unwrap();
        let (m, se) = batch_means(&coordinate_traces(&e, |s| s[0]), 10);
        let exact = 1.0 / 1f64.tanh() - 1.0;
        assert!((m - exact).abs() < 3.0 * se, "{m} ± {se} vs {exact}");
    }

    #[test]
    fn separable_marginals_pass_ks_against_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = DisorderSample::unperturbed(random_field_model(3, 1.0, &mut rng).unwrap());
        let cfg = McmcConfig {
            thin: 5,
            samples: 400,
            ..short()
        };
        let e = sample_replicas(&d, 0.5, 8, &cfg, &SeedLineage::new(4)).unwrap();
        for i in 0..3 {
            let oracle = site_measure(&d, 0.5, i).unwrap();
            let xs: Vec<f64> = coordinate_traces(&e, |s| s[i]).concat();
            let stat = ks_one_sample(&xs, |x| oracle.cdf(x));
            assert!(stat < ks_critical_one_sample(xs.len(), 0.01), "site {i}: {stat}");
        }
    }

    #[test]
    fn slice_and_langevin_agree_on_coupled_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = DisorderSample::unperturbed(quadratic_model(2, 4, 1.0, &mut rng).unwrap());
        let grid = GridOracle::new(&d, 0.2, 8).unwrap();
        let slice = sample_replicas(&d, 0.2, 8, &short(), &SeedLineage::new(6)).unwrap();
        let cfg = McmcConfig {
            algorithm: Algorithm::ReflectedLangevin,
            burn_in: 200,
            samples: 4000,
            step_size: 0.6,
            ..McmcConfig::default()
        };
        let mala = sample_replicas(&d, 0.2, 8, &cfg, &SeedLineage::new(7)).unwrap();
        assert!(mala.min_acceptance() > 0.3);
        for i in 0..2 {
            let exact = grid.expect(|s| s[i]);
            let (a, sa) = batch_means(&coordinate_traces(&slice, |s| s[i]), 10);
            let (b, sb) = batch_means(&coordinate_traces(&mala, |s| s[i]), 10);
            assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt(), "{a} vs {b}");
            assert!((a - exact).abs() < 3.0 * sa);
            assert!((b - exact).abs() < 3.0 * sb);
        }
    }

    #[test]
    fn langevin_is_reversible_on_binned_states() {
        let d = field(vec![0.8]);
        let cfg = McmcConfig {
            algorithm: Algorithm::ReflectedLangevin,
            burn_in: 100,
            samples: 60_000,
            step_size: 0.9,
            ..McmcConfig::default()
        };
        let e = sample_replicas(&d, 0.0, 1, &cfg, &SeedLineage::new(8)).unwrap();
        let xs = e.trace(0, |s| s[0]);
        let bin = |x: f64| ((x + 1.0) / 2.0 * 3.0).floor().min(2.0) as usize;
        let mut flow = [[0f64; 3]; 3];
        for w in xs.windows(2) {
            flow[bin(w[0])][bin(w[1])] += 1.0;
        }
        for a in 0..3 {
            for b in (a + 1)..3 {
                let (f, g) = (flow[a][b], flow[b][a]);
                assert!((f - g).abs() < 4.0 * (f + g).sqrt().max(1.0), "{a}->{b}: {f} vs {g}");
            }
        }
    }

    #[test]
    fn reflection_folds_into_box() {
        for z in [-7.3, -3.0, -1.5, -1.0, 0.2, 1.0, 1.5, 2.9, 5.0, 9.99] {
            let y = reflect(z);
            assert!((-1.0..=1.0).contains(&y));
        }
        assert!((reflect(1.5) - 0.5).abs() < 1e-15);
        assert!((reflect(-1.5) + 0.5).abs() < 1e-15);
        assert!((reflect(3.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn reflected_kernel_integrates_to_one() {
        let (xs, ws) = crate::oracle::composite_rule(-1.0, 1.0, 64);
        for (mu, h) in [(0.9, 0.5), (-0.3, 1.3), (2.5, 0.2)] {
            let mass: f64 = xs
                .iter()
                .zip(&ws)
                .map(|(&y, w)| w * log_reflected_kernel(&[y], &[mu], h).exp())
                .sum();
            assert!((mass - 1.0).abs() < 1e-8, "{mass}");
        }
    }

    #[test]
    fn sampling_is_bit_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = DisorderSample::unperturbed(quadratic_model(4, 8, 1.0, &mut rng).unwrap());
        let cfg = McmcConfig {
            samples: 20,
            burn_in: 5,
            ..McmcConfig::default()
        };
        let a = sample_replicas(&d, 0.3, 3, &cfg, &SeedLineage::new(10)).unwrap();
        let b = crate::par::with_threads(1, || sample_replicas(&d, 0.3, 3, &cfg, &SeedLineage::new(10)))
            .unwrap();
        assert_eq!(a, b);
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ReplicaEnsemble>(&text).unwrap(), a);
    }

    #[test]
    fn diagnostics_examples() {
        let constant = vec![vec![0.5; 100], vec![0.5; 100]];
        assert_eq!(split_rhat_ess(&constant).unwrap().0, None);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let iid: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| rng.random::<f64>()).collect())
            .collect();
        let (r, ess) = split_rhat_ess(&iid).unwrap();
        let r = r.unwrap();
        assert!((0.99..=1.05).contains(&r), "{r}");
        assert!(ess > 2000.0, "{ess}");
        let mut shifted = iid.clone();
        shifted[0].iter_mut().for_each(|x| *x += 0.5);
        assert!(split_rhat_ess(&shifted).unwrap().0.unwrap() > RHAT_LIMIT);
        assert!(split_rhat_ess(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn frozen_sampler_is_flagged() {
        let d = field(vec![0.3, -0.2]);
        let cfg = McmcConfig {
            step_size: 0.0,
            samples: 50,
            burn_in: 5,
            ..McmcConfig::default()
        };
        assert!(cfg.validate().is_err());
        let e = sample_replicas(&d, 0.1, 4, &cfg, &SeedLineage::new(12)).unwrap();
        let report = diagnostics(&e).unwrap();
        assert!(!report.passed());
        assert!(report.failure().unwrap().contains("chain 0"));
        let good = sample_replicas(&d, 0.1, 4, &McmcConfig::default(), &SeedLineage::new(12)).unwrap();
        assert!(diagnostics(&good).unwrap().passed());
    }

    #[test]
    fn slice_update_stays_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut x = 0.0;
        for _ in 0..10_000 {
            x = slice_update(x, 0.3, |y| 40.0 * y, &mut rng);
            assert!((-1.0..=1.0).contains(&x));
        }
        assert!(x > 0.5);
    }
}
