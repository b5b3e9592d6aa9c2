//! Seeded sweeps over `(N, t, disorder)` cells with a crash-safe journal.
//!
//! Every cell draws its randomness from `seed / N / disorder`, so cells are
//! independent of scheduling, and the perturbation strength `t` never enters a
//! stream: cells that differ only in `t` share their disorder and chain noise.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{EstimatorSpec, ExperimentConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    brascamp_lieb_check, decorrelation_second_moment, energy_concentration_statistic, fds_statistic,
    group_moments, lambda_strata, max_disorder_variance, mean_gap, quenched_decorrelation,
    quenched_mean_and_variance, thermal_decorrelation, thermal_variance, BlObservable, DisorderMoments,
    EnergyDeviations, FdsDisorderTerms, GapSample, MultioverlapIndex, PotentialTag, QuenchedTuples,
    SiteTupleMeans,
};
use crate::models::DisorderSample;
use crate::rng::{purpose, SeedLineage};
use crate::sampler::{diagnostics, sample_replicas, ReplicaEnsemble};
use crate::stats::{mean, variance, Estimate};

pub const RESULTS_FILE: &str = "results.csv";
pub const JOURNAL_FILE: &str = "cells.jsonl";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

pub const CSV_HEADER: [&str; 13] = [
    "experiment_id",
    "model",
    "N",
    "eps",
    "s_N",
    "t",
    "k",
    "estimator",
    "value",
    "stderr",
    "n_disorder",
    "n_blocks",
    "seed",
];

/// Label separating aggregate bootstrap streams from per-cell ones.
const AGGREGATE: u64 = 0xA66;

mod lossless {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub model: String,
    pub n: usize,
    pub eps: f64,
    pub s_n: f64,
    pub t: f64,
    pub k: String,
    pub estimator: String,
    #[serde(with = "lossless")]
    pub value: f64,
    #[serde(with = "lossless")]
    pub stderr: f64,
    pub n_disorder: usize,
    pub n_blocks: usize,
    pub seed: u64,
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

impl ResultRow {
    fn fields(&self) -> [String; 13] {
        [
            self.experiment_id.clone(),
            self.model.clone(),
            self.n.to_string(),
            format_float(self.eps),
            format_float(self.s_n),
            format_float(self.t),
            self.k.clone(),
            self.estimator.clone(),
            format_float(self.value),
            format_float(self.stderr),
            self.n_disorder.to_string(),
            self.n_blocks.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// Intermediate per-disorder data kept for the aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "part", rename_all = "kebab-case")]
pub enum CellPart {
    Moments {
        est: usize,
        k: MultioverlapIndex,
        moments: DisorderMoments,
    },
    Tuples {
        est: usize,
        tuples: QuenchedTuples,
    },
    SecondMoment {
        est: usize,
        value: f64,
    },
    Energy {
        est: usize,
        deviations: EnergyDeviations,
    },
    Fds {
        est: usize,
        terms: FdsDisorderTerms,
    },
    FreeEntropy {
        est: usize,
        values: Vec<(PotentialTag, f64)>,
    },
    Gap {
        est: usize,
        k: MultioverlapIndex,
        sample: GapSample,
    },
}

/// Everything one `(N, t, disorder)` cell produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub n: usize,
    pub t: f64,
    pub disorder: usize,
    /// Key of the disorder's seed lineage.
    pub seed: u64,
    pub eps: f64,
    pub s_n: f64,
    pub rows: Vec<ResultRow>,
    pub parts: Vec<CellPart>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    n_pos: usize,
    t_pos: usize,
    disorder: usize,
}

struct RowContext<'a> {
    config: &'a ExperimentConfig,
    n: usize,
    eps: f64,
    s_n: f64,
    t: f64,
}

impl RowContext<'_> {
    fn row(&self, k: impl Into<String>, estimator: impl Into<String>, est: &Estimate, seed: u64) -> ResultRow {
        ResultRow {
            experiment_id: self.config.experiment_id.clone(),
            model: self.config.model.name().to_string(),
            n: self.n,
            eps: self.eps,
            s_n: self.s_n,
            t: self.t,
            k: k.into(),
            estimator: estimator.into(),
            value: est.value,
            stderr: est.stderr,
            n_disorder: est.n_disorder,
            n_blocks: est.n_blocks,
            seed,
        }
    }
}

fn site_tuples(n: usize, arity: usize, tuples: usize) -> Vec<Vec<usize>> {
    (0..(n / arity).min(tuples))
        .map(|j| (j * arity..(j + 1) * arity).collect())
        .collect()
}

fn dash_join(sites: &[usize]) -> String {
    sites.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("-")
}

fn index_label(index: &crate::perturbation::PerturbationIndex) -> String {
    index.exponents().iter().map(|s| s.to_string()).collect::<Vec<_>>().join("-")
}

/// The disorder sample of a cell, with `λ_I` moved to its stratum node for
/// every FdS estimator.
pub fn cell_disorder(config: &ExperimentConfig, n: usize, t: f64, disorder: usize) -> Result<DisorderSample> {
    let lineage = SeedLineage::new(config.seed).descend(&[n as u64, disorder as u64]);
    let s_n = config.schedule.s_n(n);
    let mut sample = DisorderSample::draw(&config.model, n, s_n, t, &config.truncation, &lineage)?;
    let mut lambdas = sample.perturbation.lambdas().to_vec();
    let mut changed = false;
    for e in &config.estimators {
        if let EstimatorSpec::Fds { index, strata, .. } = e {
            let pos = sample
                .perturbation
                .position(index)
                .ok_or_else(|| Error::invalid(format!("index {index} is not in the truncation")))?;
            lambdas[pos] = lambda_strata(*strata)[disorder % strata].0;
            changed = true;
        }
    }
    if changed {
        sample.perturbation = sample.perturbation.with_lambdas(lambdas)?;
    }
    Ok(sample)
}

/// Runs one cell: samples the ensemble, checks it, evaluates every estimator.
pub fn run_cell(config: &ExperimentConfig, n: usize, t: f64, d: usize) -> Result<CellRecord> {
    let disorder = cell_disorder(config, n, t, d)?;
    let lineage = disorder.lineage.clone();
    let seed = lineage.key();
    let eps = config.schedule.eps_n(n);
    let s_n = config.schedule.s_n(n);
    let ctx = RowContext { config, n, eps, s_n, t };
    let chain_lineage = lineage.child(purpose::CHAIN);
    let ens = sample_replicas(&disorder, eps, config.chains, &config.mcmc, &chain_lineage)?;
    let report = diagnostics(&ens)?;
    if !report.stuck_chains.is_empty() || !report.degenerate.is_empty() {
        return Err(Error::Diagnostic(format!(
            "N = {n}, t = {t}, disorder {d}: {}",
            report.failure().unwrap_or_default()
        )));
    }
    let mut rows = vec![ctx.row(
        "",
        "max-rhat",
        &Estimate::exact(report.max_rhat).with_counts(1, ens.chains, ens.mcmc_steps()),
        seed,
    )];
    let mut parts = Vec::new();
    let boot = lineage.child(purpose::BOOTSTRAP);
    let mut unperturbed: Option<ReplicaEnsemble> = None;
    for (est, spec) in config.estimators.iter().enumerate() {
        let boot = boot.child(est as u64);
        match spec {
            EstimatorSpec::ThermalVariance { k } => {
                for (j, k) in k.iter().enumerate() {
                    let v = thermal_variance(&ens, k, &boot.child(j as u64))?;
                    rows.push(ctx.row(k.to_string(), "thermal-variance", &v, seed));
                }
            }
            EstimatorSpec::QuenchedVariance { k } => {
                for k in k {
                    let moments = DisorderMoments::from(&group_moments(&ens, k)?);
                    parts.push(CellPart::Moments {
                        est,
                        k: k.clone(),
                        moments,
                    });
                }
            }
            EstimatorSpec::ThermalDecorrelation { h, arity, tuples } => {
                let tuples = site_tuples(n, *arity, *tuples);
                let v = thermal_decorrelation(&ens, *h, &tuples[0], &boot)?;
                rows.push(ctx.row(dash_join(&tuples[0]), format!("thermal-decorrelation:{h}"), &v, seed));
                let value = decorrelation_second_moment(&ens, *h, &tuples)?;
                parts.push(CellPart::SecondMoment { est, value });
            }
            EstimatorSpec::QuenchedDecorrelation { h, arity, tuples } => {
                let tuples = site_tuples(n, *arity, *tuples)
                    .iter()
                    .map(|s| SiteTupleMeans::compute(&ens, *h, s))
                    .collect::<Result<Vec<_>>>()?;
                parts.push(CellPart::Tuples { est, tuples });
            }
            EstimatorSpec::EnergyConcentration { index } => {
                parts.push(CellPart::Energy {
                    est,
                    deviations: EnergyDeviations::compute(&ens, &disorder, index)?,
                });
            }
            EstimatorSpec::Fds {
                index,
                observable,
                replicas,
                strata,
            } => {
                let terms = FdsDisorderTerms::compute(&ens, &disorder, index, *observable, *replicas, d % strata)?;
                parts.push(CellPart::Fds { est, terms });
            }
            EstimatorSpec::FreeEntropyVariance { potentials } => {
                let values = potentials
                    .iter()
                    .map(|tag| Ok((*tag, tag.free_entropy(&disorder, eps, s_n)?)))
                    .collect::<Result<Vec<_>>>()?;
                parts.push(CellPart::FreeEntropy { est, values });
            }
            EstimatorSpec::MeanGap { k } => {
                if t != 1.0 {
                    continue;
                }
                if unperturbed.is_none() {
                    let off = disorder.with_strength(0.0)?;
                    unperturbed = Some(sample_replicas(&off, eps, config.chains, &config.mcmc, &chain_lineage)?);
                }
                let off = unperturbed.as_ref().expect("sampled above");
                for k in k {
                    let sample = GapSample::from_ensembles(&ens, off, k)?;
                    parts.push(CellPart::Gap {
                        est,
                        k: k.clone(),
                        sample,
                    });
                }
            }
            EstimatorSpec::BrascampLieb { k } => {
                for k in k {
                    let c = brascamp_lieb_check(&ens, &disorder, &BlObservable::Multioverlap { k: k.clone() })?;
                    rows.push(ctx.row(k.to_string(), "brascamp-lieb-variance", &c.variance, seed));
                    rows.push(ctx.row(k.to_string(), "brascamp-lieb-bound", &c.bound, seed));
                }
            }
        }
    }
    Ok(CellRecord {
        n,
        t,
        disorder: d,
        seed,
        eps,
        s_n,
        rows,
        parts,
    })
}

fn mean_estimate(values: &[f64]) -> Estimate {
    let n = values.len();
    let se = if n > 1 { (variance(values) / n as f64).sqrt() } else { 0.0 };
    Estimate::new(mean(values), se).with_counts(n, n, 0)
}

/// Cross-disorder rows for one `(N, t)` slice; `cells` are in disorder order.
fn aggregate(config: &ExperimentConfig, t_pos: usize, cells: &[CellRecord]) -> Result<Vec<ResultRow>> {
    let first = &cells[0];
    let ctx = RowContext {
        config,
        n: first.n,
        eps: first.eps,
        s_n: first.s_n,
        t: first.t,
    };
    let seed = config.seed;
    let lineage = SeedLineage::new(seed).descend(&[AGGREGATE, first.n as u64, t_pos as u64]);
    let parts = |est: usize| cells.iter().flat_map(move |c| c.parts.iter().filter(move |p| part_est(p) == est));
    let mut rows = Vec::new();
    for (est, spec) in config.estimators.iter().enumerate() {
        let boot = lineage.child(est as u64);
        match spec {
            EstimatorSpec::QuenchedVariance { k } => {
                for (j, k) in k.iter().enumerate() {
                    let per: Vec<DisorderMoments> = parts(est)
                        .filter_map(|p| match p {
                            CellPart::Moments { k: kk, moments, .. } if kk == k => Some(*moments),
                            _ => None,
                        })
                        .collect();
                    let (m, v) = quenched_mean_and_variance(&per, &boot.child(j as u64))?;
                    rows.push(ctx.row(k.to_string(), "quenched-mean", &m, seed));
                    rows.push(ctx.row(k.to_string(), "quenched-variance", &v, seed));
                }
            }
            EstimatorSpec::ThermalDecorrelation { h, arity, .. } => {
                let values: Vec<f64> = parts(est)
                    .filter_map(|p| match p {
                        CellPart::SecondMoment { value, .. } => Some(*value),
                        _ => None,
                    })
                    .collect();
                let label = format!("thermal-decorrelation-sq:{h}");
                rows.push(ctx.row(arity.to_string(), label, &mean_estimate(&values), seed));
            }
            EstimatorSpec::QuenchedDecorrelation { h, arity, .. } => {
                let per: Vec<QuenchedTuples> = parts(est)
                    .filter_map(|p| match p {
                        CellPart::Tuples { tuples, .. } => Some(tuples.clone()),
                        _ => None,
                    })
                    .collect();
                let v = quenched_decorrelation(&per, &boot)?;
                rows.push(ctx.row(arity.to_string(), format!("quenched-decorrelation:{h}"), &v, seed));
            }
            EstimatorSpec::EnergyConcentration { index } => {
                let per: Vec<EnergyDeviations> = parts(est)
                    .filter_map(|p| match p {
                        CellPart::Energy { deviations, .. } => Some(deviations.clone()),
                        _ => None,
                    })
                    .collect();
                let c = energy_concentration_statistic(&per)?;
                let label = index_label(index);
                rows.push(ctx.row(label.clone(), "energy-concentration", &c.total, seed));
                rows.push(ctx.row(label.clone(), "energy-concentration-thermal", &c.thermal, seed));
                rows.push(ctx.row(
                    label,
                    "energy-reference",
                    &Estimate::exact(c.reference).with_counts(per.len(), per.len(), 0),
                    seed,
                ));
            }
            EstimatorSpec::Fds {
                index,
                observable,
                replicas,
                strata,
            } => {
                let terms: Vec<FdsDisorderTerms> = parts(est)
                    .filter_map(|p| match p {
                        CellPart::Fds { terms, .. } => Some(*terms),
                        _ => None,
                    })
                    .collect();
                let weights: Vec<f64> = lambda_strata(*strata).iter().map(|p| p.1).collect();
                let v = fds_statistic(&terms, &weights, &boot)?;
                let label = format!("fds:{observable}:n{replicas}");
                rows.push(ctx.row(index_label(index), label, &v, seed));
                let worst = terms.iter().map(|t| t.truncation).fold(0.0, f64::max);
                rows.push(ctx.row(
                    index_label(index),
                    "fds-truncation",
                    &Estimate::exact(worst).with_counts(terms.len(), terms.len(), 0),
                    seed,
                ));
            }
            EstimatorSpec::FreeEntropyVariance { potentials } => {
                let samples: Vec<(PotentialTag, Vec<f64>)> = potentials
                    .iter()
                    .enumerate()
                    .map(|(j, tag)| {
                        let values = parts(est)
                            .filter_map(|p| match p {
                                CellPart::FreeEntropy { values, .. } => Some(values[j].1),
                                _ => None,
                            })
                            .collect();
                        (*tag, values)
                    })
                    .collect();
                let (tag, v) = max_disorder_variance(&samples, &boot)?;
                rows.push(ctx.row("", format!("free-entropy-variance:{tag}"), &v, seed));
            }
            EstimatorSpec::MeanGap { k } => {
                if first.t != 1.0 {
                    continue;
                }
                for k in k {
                    let samples: Vec<GapSample> = parts(est)
                        .filter_map(|p| match p {
                            CellPart::Gap { k: kk, sample, .. } if kk == k => Some(*sample),
                            _ => None,
                        })
                        .collect();
                    rows.push(ctx.row(k.to_string(), "mean-gap", &mean_gap(&samples)?, seed));
                }
            }
            EstimatorSpec::ThermalVariance { .. } | EstimatorSpec::BrascampLieb { .. } => {}
        }
    }
    Ok(rows)
}

fn part_est(p: &CellPart) -> usize {
    match p {
        CellPart::Moments { est, .. }
        | CellPart::Tuples { est, .. }
        | CellPart::SecondMoment { est, .. }
        | CellPart::Energy { est, .. }
        | CellPart::Fds { est, .. }
        | CellPart::FreeEntropy { est, .. }
        | CellPart::Gap { est, .. } => *est,
    }
}

/// Reads the journal; a torn final line (from a killed run) is dropped.
fn read_journal(path: &Path) -> Result<Vec<CellRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CellRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => {}
            Err(e) => {
                return Err(Error::Malformed(format!("{}: line {}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok(out)
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn journal_line(r: &CellRecord) -> Result<String> {
    let mut s = serde_json::to_string(r).map_err(|e| Error::invalid(format!("journal encoding: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Renders rows as CSV with the fixed header.
pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.fields()).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))
}

/// Summary of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub rows: Vec<ResultRow>,
    pub cells_run: usize,
    pub cells_resumed: usize,
    pub results: PathBuf,
}

/// Runs (or resumes) an experiment into `out_dir`.
///
/// Finished cells are appended to the journal as they complete; on restart
/// they are skipped. `results.csv` is rebuilt from the journal in cell order
/// and replaced atomically.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let snapshot_path = out_dir.join(CONFIG_SNAPSHOT);
    let snapshot = config.to_toml()?;
    match fs::read_to_string(&snapshot_path) {
        Ok(old) if old != snapshot => {
            return Err(Error::invalid(format!(
                "{} holds a different experiment; use a fresh output directory",
                out_dir.display()
            )));
        }
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_atomically(&snapshot_path, snapshot.as_bytes())?,
        Err(e) => return Err(Error::io(&snapshot_path, e)),
    }

    let journal_path = out_dir.join(JOURNAL_FILE);
    let previous = read_journal(&journal_path)?;
    let mut clean = String::new();
    for r in &previous {
        clean.push_str(&journal_line(r)?);
    }
    write_atomically(&journal_path, clean.as_bytes())?;

    let position = |r: &CellRecord| -> Option<CellKey> {
        Some(CellKey {
            n_pos: config.n_grid.iter().position(|&n| n == r.n)?,
            t_pos: config.t_values.iter().position(|&t| t == r.t)?,
            disorder: r.disorder,
        })
    };
    let mut done: BTreeMap<CellKey, CellRecord> = BTreeMap::new();
    for r in previous {
        match position(&r) {
            Some(key) if r.disorder < config.n_disorder => {
                done.insert(key, r);
            }
            _ => return Err(Error::Malformed("journal cell outside the configured grid".into())),
        }
    }
    let cells_resumed = done.len();

    let mut pending = Vec::new();
    if !config.estimators.is_empty() {
        for n_pos in 0..config.n_grid.len() {
            for t_pos in 0..config.t_values.len() {
                for disorder in 0..config.n_disorder {
                    let key = CellKey { n_pos, t_pos, disorder };
                    if !done.contains_key(&key) {
                        pending.push(key);
                    }
                }
            }
        }
    }

    let journal = Mutex::new(
        OpenOptions::new()
            .append(true)
            .open(&journal_path)
            .map_err(|e| Error::io(&journal_path, e))?,
    );
    let results = crate::par::map_range(pending.len(), |i| {
        let key = pending[i];
        let record = run_cell(
            config,
            config.n_grid[key.n_pos],
            config.t_values[key.t_pos],
            key.disorder,
        )?;
        let line = journal_line(&record)?;
        let mut f = journal.lock().expect("journal lock");
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&journal_path, e))?;
        Ok::<_, Error>(record)
    });
    let cells_run = pending.len();
    for (key, r) in pending.into_iter().zip(results) {
        done.insert(key, r?);
    }

    let mut rows = Vec::new();
    let mut slice: Vec<CellRecord> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let records: Vec<(CellKey, CellRecord)> = done.into_iter().collect();
    for (key, r) in records {
        if current.is_some_and(|c| c != (key.n_pos, key.t_pos)) {
            rows.extend(aggregate(config, current.expect("set").1, &slice)?);
            slice.clear();
        }
        current = Some((key.n_pos, key.t_pos));
        rows.extend(r.rows.iter().cloned());
        slice.push(r);
    }
    if let Some((_, t_pos)) = current {
        rows.extend(aggregate(config, t_pos, &slice)?);
    }
    let results_path = out_dir.join(RESULTS_FILE);
    write_atomically(&results_path, &rows_to_csv(&rows)?)?;
    Ok(RunOutcome {
        rows,
        cells_run,
        cells_resumed,
        results: results_path,
    })
}
