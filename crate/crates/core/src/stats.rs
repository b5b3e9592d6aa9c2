//! Small statistics toolkit shared by the estimators: the [`Estimate`] record,
//! U-statistics for products of independent means, bootstrap and batch-means
//! standard errors, Kolmogorov–Smirnov statistics and trend verdicts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SeedLineage;

/// A Monte Carlo quantity with its standard error and sample-size metadata.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_disorder: usize,
    pub n_blocks: usize,
    pub mcmc_steps: usize,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Estimate {
            value,
            stderr: stderr.max(0.0),
            n_disorder: 1,
            n_blocks: 1,
            mcmc_steps: 0,
        }
    }

    pub fn exact(value: f64) -> Self {
        Estimate::new(value, 0.0)
    }

    pub fn with_counts(mut self, n_disorder: usize, n_blocks: usize, mcmc_steps: usize) -> Self {
        self.n_disorder = n_disorder;
        self.n_blocks = n_blocks;
        self.mcmc_steps = mcmc_steps;
        self
    }

    /// `|value - target| <= sigmas * stderr`, with a floor for exact zeros.
    pub fn within(&self, target: f64, sigmas: f64) -> bool {
        (self.value - target).abs() <= sigmas * self.stderr + 1e-12 * target.abs().max(1.0)
    }

    pub fn upper(&self, sigmas: f64) -> f64 {
        self.value + sigmas * self.stderr
    }

    pub fn lower(&self, sigmas: f64) -> f64 {
        self.value - sigmas * self.stderr
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Mean of `x_a * x_b` over ordered pairs `a != b`.
///
/// When the `x_a` are independent draws with a common mean `μ`, this is
/// unbiased for `μ²`, unlike the plug-in square of the sample mean.
pub fn pair_product_mean(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let s: f64 = xs.iter().sum();
    let s2: f64 = xs.iter().map(|x| x * x).sum();
    (s * s - s2) / (n as f64 * (n - 1) as f64)
}

/// Mean of `a_i * b_j` over `i != j` (paired sequences of equal length).
pub fn cross_pair_mean(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::NAN;
    }
    let sa: f64 = a[..n].iter().sum();
    let sb: f64 = b[..n].iter().sum();
    let diag: f64 = a[..n].iter().zip(&b[..n]).map(|(x, y)| x * y).sum();
    (sa * sb - diag) / (n as f64 * (n - 1) as f64)
}

/// Mean of `Π_j cols[j][u_j]` over ordered tuples of pairwise distinct units.
///
/// With independent units this is unbiased for the product of the column
/// means. All columns must have the same length; returns `NaN` when there are
/// fewer units than columns.
pub fn distinct_product_mean(cols: &[&[f64]]) -> f64 {
    let k = cols.len();
    if k == 0 {
        return 1.0;
    }
    let n = cols.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < k {
        return f64::NAN;
    }
    match k {
        1 => mean(&cols[0][..n]),
        2 => cross_pair_mean(&cols[0][..n], &cols[1][..n]),
        _ => {
            let mut used = vec![false; n];
            let mut count = 0f64;
            let total = distinct_rec(cols, n, 0, 1.0, &mut used, &mut count);
            total / count
        }
    }
}

fn distinct_rec(cols: &[&[f64]], n: usize, depth: usize, acc: f64, used: &mut [bool], count: &mut f64) -> f64 {
    if depth == cols.len() {
        *count += 1.0;
        return acc;
    }
    let mut s = 0.0;
    for u in 0..n {
        if !used[u] {
            used[u] = true;
            s += distinct_rec(cols, n, depth + 1, acc * cols[depth][u], used, count);
            used[u] = false;
        }
    }
    s
}

/// Nonparametric bootstrap standard error over `n_units` resampling units.
///
/// `stat` receives the resampled unit indices (with repetition). Returns 0 for
/// fewer than two units.
pub fn bootstrap_stderr<F>(n_units: usize, reps: usize, lineage: &SeedLineage, stat: F) -> f64
where
    F: Fn(&[usize]) -> f64,
{
    if n_units < 2 || reps < 2 {
        return 0.0;
    }
    let mut rng = lineage.rng();
    let mut idx = vec![0usize; n_units];
    let mut vals = Vec::with_capacity(reps);
    for _ in 0..reps {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n_units);
        }
        let v = stat(&idx);
        if v.is_finite() {
            vals.push(v);
        }
    }
    if vals.len() < 2 {
        return 0.0;
    }
    variance(&vals).sqrt()
}

/// Mean and standard error from per-chain traces using batch means.
///
/// Each chain is cut into `batches` contiguous batches; the batch means of all
/// chains are treated as independent.
pub fn batch_means(chains: &[Vec<f64>], batches: usize) -> (f64, f64) {
    let mut bm = Vec::new();
    for trace in chains {
        let b = batches.max(1).min(trace.len().max(1));
        let len = trace.len() / b;
        if len == 0 {
            continue;
        }
        for j in 0..b {
            bm.push(mean(&trace[j * len..(j + 1) * len]));
        }
    }
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let m = mean(&all);
    let se = if bm.len() >= 2 {
        (variance(&bm) / bm.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    (m, se)
}

/// Two-sample Kolmogorov–Smirnov statistic (ties handled exactly).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value `c(α)·sqrt((n+m)/(n m))` of the two-sample test.
pub fn ks_critical_two_sample(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

pub fn ks_critical_one_sample(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Outcome of a "decreasing in N" judgement on a series of estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendVerdict {
    pub strictly_decreasing: bool,
    /// `first - last` in units of the combined standard error.
    pub drop_sigmas: f64,
    pub passed: bool,
}

/// Point estimates strictly decreasing, and the first-to-last drop larger than
/// `sigmas` combined standard errors.
pub fn judge_decreasing(series: &[Estimate], sigmas: f64) -> TrendVerdict {
    let strictly_decreasing = series.windows(2).all(|w| w[1].value < w[0].value);
    let (first, last) = match (series.first(), series.last()) {
        (Some(f), Some(l)) if series.len() >= 2 => (f, l),
        _ => {
            return TrendVerdict {
                strictly_decreasing: false,
                drop_sigmas: 0.0,
                passed: false,
            }
        }
    };
    let se = (first.stderr.powi(2) + last.stderr.powi(2)).sqrt();
    let drop = first.value - last.value;
    let drop_sigmas = if se > 0.0 {
        drop / se
    } else if drop > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    TrendVerdict {
        strictly_decreasing,
        drop_sigmas,
        passed: strictly_decreasing && drop_sigmas > sigmas,
    }
}
