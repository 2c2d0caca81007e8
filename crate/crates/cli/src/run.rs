//! The three subcommands.

use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use reed::analytics::variance_chip;
use reed::data::partition;
use reed::fedlearn::{build_objective, run_fedavg};
use reed::montecarlo::estimator_moments;
use reed::{Aggregator, Axis, FedRunOutput, PartitionSpec, StreamKey};

use crate::config::{ExperimentConfig, FedPlan, MomentPlan, SweepAxis};
use crate::output::{fmt_float, fmt_opt, write_csv, write_json, MeanStd};

pub const MOMENTS_HEADER: [&str; 8] = ["point_id", "s", "mc_mean", "cf_mean", "mc_var", "cf_var", "rel_err", "pass"];
pub const TRACE_HEADER: [&str; 8] = [
    "trial",
    "round",
    "aggregator",
    "train_loss",
    "test_acc",
    "grad_norm_sq",
    "eps_norm_sq",
    "max_client_energy",
];

#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow {
    pub id: String,
    pub s: f64,
    pub mc_mean: f64,
    pub cf_mean: f64,
    pub mc_var: f64,
    pub cf_var: f64,
    pub rel_err: f64,
    pub pass: bool,
}

/// Runs every moment point; a point passes when the variance is within the
/// relative tolerance and the mean within four standard errors.
pub fn validate_moments(plan: &MomentPlan) -> Result<Vec<MomentRow>> {
    let root = StreamKey::new(plan.seed);
    plan.points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let key = root.child(Axis::Trial, i as u64);
            let mc = estimator_moments(&p.point.inputs, &p.point.cfg, plan.trials, &key)?;
            let mut cf_cfg = p.point.cfg.clone();
            cf_cfg.eta = p.cf_eta;
            let cf = variance_chip(&p.point.inputs, &cf_cfg)?;
            let rel_err = (mc.variance() - cf.variance).abs() / cf.variance;
            let mean_ok = (mc.mean - cf.mean).abs() <= 4.0 * mc.std_error();
            Ok(MomentRow {
                id: p.point.id.clone(),
                s: p.point.inputs.signed_sum(),
                mc_mean: mc.mean,
                cf_mean: cf.mean,
                mc_var: mc.variance(),
                cf_var: cf.variance,
                rel_err,
                pass: rel_err <= plan.tolerance && mean_ok,
            })
        })
        .collect()
}

pub fn moment_rows(rows: &[MomentRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.id.clone(),
                fmt_float(r.s),
                fmt_float(r.mc_mean),
                fmt_float(r.cf_mean),
                fmt_float(r.mc_var),
                fmt_float(r.cf_var),
                fmt_float(r.rel_err),
                r.pass.to_string(),
            ]
        })
        .collect()
}

/// Writes `moments.csv`; returns whether every point passed.
pub fn cmd_validate_moments(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let plan = MomentPlan::build(cfg)?;
    let rows = validate_moments(&plan)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(&out.join("moments.csv"), &MOMENTS_HEADER, &moment_rows(&rows))?;
    for r in &rows {
        println!(
            "{:<8} mc_var {:>12} cf_var {:>12} rel_err {:>10} {}",
            r.id,
            fmt_float(r.mc_var),
            fmt_float(r.cf_var),
            fmt_float(r.rel_err),
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(rows.iter().all(|r| r.pass))
}

/// Result of one trial for one aggregator.
#[derive(Clone, Debug)]
pub struct TrialRun {
    pub trial: usize,
    pub aggregator: Aggregator,
    pub output: FedRunOutput,
}

/// Seed of trial `t`, shared by every aggregator.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    StreamKey::new(seed).child(Axis::Trial, trial as u64).derive_seed()
}

/// Runs all trials of a plan, returning runs ordered by trial then by the
/// configured aggregator order.
pub fn run_plan(plan: &FedPlan) -> Result<Vec<TrialRun>> {
    let per_trial: Vec<Vec<TrialRun>> = (0..plan.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = trial_seed(plan.seed, trial);
            let (train, test) = plan.data.datasets(seed)?;
            let objective = build_objective(&plan.model, train.clone())?;
            let parts = partition(&train, &PartitionSpec { kind: plan.partition, clients: plan.run.clients, seed })?;
            plan.aggregators
                .iter()
                .map(|&aggregator| {
                    let mut cfg = plan.run.clone();
                    cfg.aggregator = aggregator;
                    cfg.seed = seed;
                    let output = run_fedavg(&cfg, objective.as_ref(), &parts, test.as_deref())
                        .with_context(|| format!("trial {trial}, aggregator {}", aggregator.name()))?;
                    Ok(TrialRun { trial, aggregator, output })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

pub fn trace_rows(runs: &[TrialRun]) -> Vec<Vec<String>> {
    runs.iter()
        .flat_map(|r| {
            r.output.traces.iter().map(move |t| {
                vec![
                    r.trial.to_string(),
                    t.round.to_string(),
                    r.aggregator.name().to_string(),
                    fmt_float(t.train_loss),
                    fmt_opt(t.test_accuracy),
                    fmt_float(t.grad_norm_sq),
                    fmt_float(t.eps_norm_sq),
                    fmt_float(t.max_client_energy),
                ]
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AggregatorSummary {
    pub aggregator: String,
    pub trials: usize,
    pub final_train_loss: MeanStd,
    pub final_test_acc: Option<MeanStd>,
    pub final_grad_norm_sq: MeanStd,
    pub final_eps_norm_sq: MeanStd,
    pub max_client_energy: MeanStd,
    /// Per-trial `acc(ideal) - acc(aggregator)` on the final round.
    pub gap_to_ideal: Option<MeanStd>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub trials: usize,
    pub rounds: usize,
    pub aggregators: Vec<AggregatorSummary>,
}

pub fn summarize(plan: &FedPlan, runs: &[TrialRun]) -> RunSummary {
    let last = |r: &TrialRun| r.output.traces.last().expect("at least one round").clone();
    let ideal_acc: Vec<Option<f64>> = (0..plan.trials)
        .map(|t| {
            runs.iter()
                .find(|r| r.trial == t && r.aggregator == Aggregator::Ideal)
                .and_then(|r| last(r).test_accuracy)
        })
        .collect();
    let aggregators = plan
        .aggregators
        .iter()
        .map(|&a| {
            let mine: Vec<&TrialRun> = runs.iter().filter(|r| r.aggregator == a).collect();
            let finals: Vec<_> = mine.iter().map(|r| last(r)).collect();
            let col = |f: &dyn Fn(&reed::RoundTrace) -> f64| {
                MeanStd::of(&finals.iter().map(f).collect::<Vec<_>>()).expect("nonempty")
            };
            let accs: Option<Vec<f64>> = finals.iter().map(|t| t.test_accuracy).collect();
            let gaps: Option<Vec<f64>> = mine
                .iter()
                .zip(&finals)
                .map(|(r, t)| Some(ideal_acc[r.trial]? - t.test_accuracy?))
                .collect();
            let max_energy: Vec<f64> = mine
                .iter()
                .map(|r| r.output.traces.iter().map(|t| t.max_client_energy).fold(0.0, f64::max))
                .collect();
            AggregatorSummary {
                aggregator: a.name().to_string(),
                trials: mine.len(),
                final_train_loss: col(&|t| t.train_loss),
                final_test_acc: accs.and_then(|v| MeanStd::of(&v)),
                final_grad_norm_sq: col(&|t| t.grad_norm_sq),
                final_eps_norm_sq: col(&|t| t.eps_norm_sq),
                max_client_energy: MeanStd::of(&max_energy).expect("nonempty"),
                gap_to_ideal: gaps.and_then(|v| MeanStd::of(&v)),
            }
        })
        .collect();
    RunSummary { seed: plan.seed, trials: plan.trials, rounds: plan.run.rounds, aggregators }
}

/// Writes `traces.csv` and `summary.json`.
pub fn cmd_run_fedavg(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let plan = FedPlan::build(cfg)?;
    let runs = run_plan(&plan)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(&out.join("traces.csv"), &TRACE_HEADER, &trace_rows(&runs))?;
    let summary = summarize(&plan, &runs);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub summary: RunSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

pub const SWEEP_SUMMARY_HEADER: [&str; 9] = [
    "value",
    "aggregator",
    "final_train_loss_mean",
    "final_test_acc_mean",
    "final_test_acc_std",
    "final_eps_norm_sq_mean",
    "max_client_energy_mean",
    "gap_mean",
    "gap_std",
];

/// Runs one experiment per axis value after validating all of them. Writes
/// `sweep_traces.csv` (the run traces keyed by the axis value),
/// `sweep_summary.csv` and `sweep_summary.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, out: &Path) -> Result<SweepSummary> {
    let values = cfg.axis_values(axis)?;
    let plans = values
        .iter()
        .map(|&v| {
            let c = cfg.with_axis_value(axis, v)?;
            FedPlan::build(&c).with_context(|| format!("sweep.{} = {}", axis.name(), fmt_float(v)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut traces = Vec::new();
    let mut summary_rows = Vec::new();
    let mut points = Vec::new();
    for (&value, plan) in values.iter().zip(&plans) {
        let runs = run_plan(plan)?;
        let v = fmt_float(value);
        for mut row in trace_rows(&runs) {
            row.insert(0, v.clone());
            traces.push(row);
        }
        let summary = summarize(plan, &runs);
        for a in &summary.aggregators {
            summary_rows.push(vec![
                v.clone(),
                a.aggregator.clone(),
                fmt_float(a.final_train_loss.mean),
                fmt_opt(a.final_test_acc.map(|m| m.mean)),
                fmt_opt(a.final_test_acc.map(|m| m.std)),
                fmt_float(a.final_eps_norm_sq.mean),
                fmt_float(a.max_client_energy.mean),
                fmt_opt(a.gap_to_ideal.map(|m| m.mean)),
                fmt_opt(a.gap_to_ideal.map(|m| m.std)),
            ]);
        }
        points.push(SweepPoint { value, summary });
    }

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut header = vec![axis.name()];
    header.extend(TRACE_HEADER);
    write_csv(&out.join("sweep_traces.csv"), &header, &traces)?;
    let mut header = vec![axis.name()];
    header.extend(&SWEEP_SUMMARY_HEADER[1..]);
    write_csv(&out.join("sweep_summary.csv"), &header, &summary_rows)?;
    let summary = SweepSummary { axis: axis.name().to_string(), points };
    write_json(&out.join("sweep_summary.json"), &summary)?;
    Ok(summary)
}
