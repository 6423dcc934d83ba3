use std::path::Path;

use anyhow::{bail, Context, Result};
use dogs_core::optimizer::{candidate, initialize, initialize_delta_dogs};
use dogs_core::sampling::{derive_seed, fit_uq_model};
use dogs_core::{
    records_table, run_from, IterationRecord, OptimizerError, OptimizerState, StochasticObjective,
    Stopping,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AlgorithmName, Problem, RunConfig};
use crate::output::{aggregate, aggregate_table, points_table, spearman, uq_table, write_atomic};
use crate::UsageError;

pub const SNAPSHOT_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct Snapshot<S> {
    pub schema: u32,
    pub config: RunConfig,
    pub state: S,
}

#[derive(Serialize)]
struct CandidateSummary {
    index: usize,
    location: Vec<f64>,
    y: f64,
    sigma: f64,
    regret: Option<f64>,
}

#[derive(Serialize)]
struct RunSummary {
    algorithm: &'static str,
    seed: u64,
    tolerance_met: Option<bool>,
    iterations: u64,
    points: usize,
    level: u32,
    cumulative_samples: u64,
    total_averaging_time: f64,
    candidate: CandidateSummary,
    reference_error: f64,
}

fn summarize<O: StochasticObjective>(
    state: &OptimizerState<O::State>,
    obj: &O,
    tolerance_met: Option<bool>,
) -> RunSummary {
    let c = candidate(state, obj);
    let samples = state.cumulative_samples();
    RunSummary {
        algorithm: match state.algorithm {
            dogs_core::Algorithm::AlphaDogs => AlgorithmName::AlphaDogs.as_str(),
            dogs_core::Algorithm::DeltaDogs => AlgorithmName::DeltaDogs.as_str(),
        },
        seed: state.seed,
        tolerance_met,
        iterations: state.iteration,
        points: state.points.len(),
        level: state.level,
        cumulative_samples: samples,
        total_averaging_time: samples as f64 * obj.uncertainty().sample_interval,
        candidate: CandidateSummary {
            index: c.index,
            location: c.location.into_inner(),
            y: c.measurement,
            sigma: c.sigma,
            regret: c.regret,
        },
        reference_error: c.reference_error,
    }
}

fn start<O: StochasticObjective>(
    obj: &O,
    cfg: &RunConfig,
    algorithm: AlgorithmName,
    seed: u64,
) -> Result<OptimizerState<O::State>> {
    Ok(match algorithm {
        AlgorithmName::AlphaDogs => initialize(obj, &cfg.alpha_params(), &cfg.points, seed)?,
        AlgorithmName::DeltaDogs => {
            initialize_delta_dogs(obj, &cfg.delta_params(), &cfg.points, seed)?
        }
    })
}

/// Advance `state`; `Ok(Some(false))` when a tolerance was requested but the
/// iteration or sample cap came first.
fn advance<O: StochasticObjective>(
    state: &mut OptimizerState<O::State>,
    obj: &O,
    stopping: &Stopping,
) -> Result<Option<bool>> {
    match run_from(state, obj, stopping) {
        Ok(()) => Ok(stopping.tolerance.map(|_| true)),
        Err(OptimizerError::BudgetExhausted { .. }) => Ok(Some(false)),
        Err(e) => Err(e.into()),
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn write_run<O: StochasticObjective>(
    out: &Path,
    cfg: &RunConfig,
    state: &OptimizerState<O::State>,
    obj: &O,
    summary: &RunSummary,
) -> Result<()> {
    write_atomic(out, "records.tsv", &records_table(&state.history))?;
    write_atomic(out, "points.tsv", &points_table(&state.points, obj))?;
    let snap = Snapshot {
        schema: SNAPSHOT_SCHEMA,
        config: cfg.clone(),
        state,
    };
    write_atomic(out, "state.json", &serde_json::to_string(&snap)?)?;
    write_atomic(out, "summary.json", &to_json(summary)?)
}

fn print_summary(s: &RunSummary) {
    println!(
        "{}: {} iterations, {} points, {} samples (averaging time {})",
        s.algorithm, s.iterations, s.points, s.cumulative_samples, s.total_averaging_time
    );
    let regret = s
        .candidate
        .regret
        .map_or_else(|| "NA".into(), |r| r.to_string());
    println!(
        "candidate {:?}: y = {} +- {}, regret {regret}",
        s.candidate.location, s.candidate.y, s.candidate.sigma
    );
}

pub fn run(cfg: &RunConfig, out: &Path, resume: Option<serde_json::Value>) -> Result<()> {
    match cfg.problem() {
        Problem::Synthetic(p) => run_one(&p, cfg, out, resume),
        Problem::Lorenz(p) => run_one(&p, cfg, out, resume),
    }
}

fn run_one<O: StochasticObjective>(
    obj: &O,
    cfg: &RunConfig,
    out: &Path,
    resume: Option<serde_json::Value>,
) -> Result<()> {
    let mut state = match resume {
        Some(v) => serde_json::from_value::<OptimizerState<O::State>>(v)
            .context("snapshot state does not match its configuration")?,
        None => start(obj, cfg, cfg.algorithm, cfg.seed)?,
    };
    let met = advance(&mut state, obj, &cfg.stopping())?;
    let summary = summarize(&state, obj, met);
    write_run(out, cfg, &state, obj, &summary)?;
    print_summary(&summary);
    println!("wrote {}", out.display());
    if met == Some(false) {
        bail!("iteration or sample cap reached before the tolerance was met");
    }
    Ok(())
}

/// Load `state.json`, returning its configuration and the raw state.
pub fn load_snapshot(path: &Path) -> Result<(RunConfig, serde_json::Value)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    let snap: Snapshot<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    if snap.schema != SNAPSHOT_SCHEMA {
        return Err(UsageError(format!(
            "{}: unsupported snapshot schema {}",
            path.display(),
            snap.schema
        ))
        .into());
    }
    Ok((snap.config, snap.state))
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()?)
}

#[derive(Serialize)]
struct EnsembleSummary {
    runs: usize,
    master_seed: u64,
    mean_final_regret: Option<f64>,
    members: Vec<RunSummary>,
}

pub fn ensemble(cfg: &RunConfig, out: &Path, jobs: Option<usize>) -> Result<()> {
    match cfg.problem() {
        Problem::Synthetic(p) => ensemble_of(&p, cfg, out, jobs),
        Problem::Lorenz(p) => ensemble_of(&p, cfg, out, jobs),
    }
}

fn ensemble_of<O: StochasticObjective>(
    obj: &O,
    cfg: &RunConfig,
    out: &Path,
    jobs: Option<usize>,
) -> Result<()> {
    let stopping = cfg.stopping();
    let members = pool(jobs)?.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|i| -> Result<(Vec<IterationRecord>, RunSummary)> {
                let seed = derive_seed(cfg.seed, i as u64);
                let mut state = start(obj, cfg, cfg.algorithm, seed)?;
                let met = advance(&mut state, obj, &stopping)?;
                write_atomic(
                    &out.join("members"),
                    &format!("member-{i:03}.tsv"),
                    &records_table(&state.history),
                )?;
                let summary = summarize(&state, obj, met);
                Ok((std::mem::take(&mut state.history), summary))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (histories, summaries): (Vec<_>, Vec<_>) = members.into_iter().unzip();
    let u = obj.uncertainty();
    let rows = aggregate(&histories, |s| u.sigma(s.max(1)));
    write_atomic(out, "aggregate.tsv", &aggregate_table(&rows, cfg.runs))?;
    let regrets: Option<Vec<f64>> = summaries.iter().map(|s| s.candidate.regret).collect();
    let summary = EnsembleSummary {
        runs: cfg.runs,
        master_seed: cfg.seed,
        mean_final_regret: regrets.map(|r| r.iter().sum::<f64>() / r.len() as f64),
        members: summaries,
    };
    write_atomic(out, "summary.json", &to_json(&summary)?)?;
    match summary.mean_final_regret {
        Some(r) => println!("{} runs, mean final regret {r}", cfg.runs),
        None => println!("{} runs", cfg.runs),
    }
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    alpha_dogs: RunSummary,
    delta_dogs: RunSummary,
    /// Delta-DOGS averaging time over alpha-DOGS averaging time.
    cost_ratio: f64,
    /// Rank correlation of estimate and averaging length over the
    /// alpha-DOGS point set.
    spearman_y_length: Option<f64>,
}

pub fn compare_lorenz(cfg: &RunConfig, out: &Path, jobs: Option<usize>) -> Result<()> {
    let Problem::Lorenz(obj) = cfg.problem() else {
        return Err(UsageError("compare-lorenz needs the lorenz problem".into()).into());
    };
    let stopping = cfg.stopping();
    let algorithms = [AlgorithmName::AlphaDogs, AlgorithmName::DeltaDogs];
    let runs = pool(jobs)?.install(|| {
        algorithms
            .par_iter()
            .map(|&a| -> Result<_> {
                let mut state = start(&obj, cfg, a, cfg.seed)?;
                let met = advance(&mut state, &obj, &stopping)?;
                Ok(state_with_summary(state, &obj, met))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = String::from(
        "# dogs-compare schema=1\nalgorithm\ttolerance_met\titerations\tpoints\tcumulative_samples\t\
         total_averaging_time\tcandidate_x0\tcandidate_x1\tcandidate_y\tcandidate_sigma\n",
    );
    for (a, (state, s)) in algorithms.iter().zip(&runs) {
        let name = a.as_str();
        write_atomic(
            out,
            &format!("records-{name}.tsv"),
            &records_table(&state.history),
        )?;
        write_atomic(
            out,
            &format!("points-{name}.tsv"),
            &points_table(&state.points, &obj),
        )?;
        let met = s
            .tolerance_met
            .map_or_else(|| "NA".into(), |m| m.to_string());
        table.push_str(&format!(
            "{name}\t{met}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            s.iterations,
            s.points,
            s.cumulative_samples,
            s.total_averaging_time,
            s.candidate.location[0],
            s.candidate.location[1],
            s.candidate.y,
            s.candidate.sigma
        ));
    }
    write_atomic(out, "comparison.tsv", &table)?;
    let mut runs = runs.into_iter();
    let (alpha_state, alpha) = runs.next().unwrap();
    let (_, delta) = runs.next().unwrap();
    let ys: Vec<f64> = alpha_state.points.iter().map(|p| p.measurement).collect();
    let lengths: Vec<f64> = alpha_state
        .points
        .iter()
        .map(|p| p.sample_count as f64)
        .collect();
    let cmp = Comparison {
        cost_ratio: delta.total_averaging_time / alpha.total_averaging_time,
        spearman_y_length: spearman(&ys, &lengths),
        alpha_dogs: alpha,
        delta_dogs: delta,
    };
    write_atomic(out, "summary.json", &to_json(&cmp)?)?;
    print_summary(&cmp.alpha_dogs);
    print_summary(&cmp.delta_dogs);
    println!("averaging time ratio (delta/alpha): {}", cmp.cost_ratio);
    if let Some(r) = cmp.spearman_y_length {
        println!("rank correlation of estimate and averaging length: {r}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn state_with_summary<O: StochasticObjective>(
    state: OptimizerState<O::State>,
    obj: &O,
    met: Option<bool>,
) -> (OptimizerState<O::State>, RunSummary) {
    let s = summarize(&state, obj, met);
    (state, s)
}

#[derive(Serialize)]
struct UqSummary {
    location: Vec<f64>,
    ensemble: usize,
    scale: f64,
    theta: f64,
    low_confidence: bool,
    max_relative_residual: f64,
}

pub fn fit_uq(cfg: &RunConfig, out: &Path) -> Result<()> {
    match cfg.problem() {
        Problem::Synthetic(p) => fit_uq_of(&p, cfg, out),
        Problem::Lorenz(p) => fit_uq_of(&p, cfg, out),
    }
}

fn fit_uq_of<O: StochasticObjective>(obj: &O, cfg: &RunConfig, out: &Path) -> Result<()> {
    let h = obj.uncertainty().sample_interval;
    let probes: Vec<u64> = cfg
        .uq
        .probe_lengths
        .iter()
        .map(|t| (t / h).round() as u64)
        .collect();
    if probes[0] == 0 || probes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(UsageError(format!(
            "probe lengths {:?} do not give distinct sample counts at interval {h}",
            cfg.uq.probe_lengths
        ))
        .into());
    }
    let x = cfg.uq_location();
    let fit = fit_uq_model(obj, &x, cfg.uq.ensemble, &probes, cfg.seed)?;
    write_atomic(out, "uq.tsv", &uq_table(&fit, cfg.uq.ensemble))?;
    let s = UqSummary {
        location: x,
        ensemble: cfg.uq.ensemble,
        scale: fit.model.scale,
        theta: fit.model.theta,
        low_confidence: fit.low_confidence,
        max_relative_residual: fit.max_relative_residual(),
    };
    write_atomic(out, "summary.json", &to_json(&s)?)?;
    println!(
        "sigma(T) = {} T^-{} (largest relative residual {})",
        s.scale, s.theta, s.max_relative_residual
    );
    if s.low_confidence {
        eprintln!(
            "warning: ensemble of {} is small; the fit is low confidence",
            s.ensemble
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Run `f` on a pool of `jobs` threads.
pub fn pool_install<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    pool(jobs)?.install(f)
}
