//! Metric files. Every file is written to a temporary name and renamed into
//! place, so a reader never sees half a file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{CellOutcome, MetricsBundle};
use crate::error::{FladError, Result};
use crate::harness::{PolicySnapshot, RunResult};
use crate::rewards::RewardKind;

pub const SUMMARY_HEADER: &str = "method,reward,K,seed_count,mean_acc,std_acc,mean_convergence_step";
const RUNS_HEADER: &str =
    "method,reward,K,seed,status,updates,convergence_step,heldout_acc,best_val_loss,best_val_acc,backward_passes,message";
const TRACE_HEADER: &str = "update,arms,rewards,target_loss,val_loss,val_acc,heldout_acc,best_update,best_heldout_acc,backward_passes,policy";
const SAMPLING_HEADER: &str = "method,reward,K,seed,arm,pulls,share";

/// Nine significant digits, printed in the shortest form that reads back
/// to the same rounded value.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|&v| format_float(v)).collect::<Vec<_>>().join(";")
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| FladError::Io(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let io = |e: std::io::Error| FladError::Io(format!("{}: {e}", path.display()));
    let written = fs::write(&tmp, contents).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(io(e));
    }
    Ok(())
}

fn summary_csv(bundle: &MetricsBundle) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for row in bundle.summary() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.method.name(),
            row.reward.map_or("na", RewardKind::name),
            row.num_aux,
            row.seed_count,
            format_float(row.mean_acc),
            format_float(row.std_acc),
            format_float(row.mean_convergence_step)
        );
    }
    out
}

fn runs_csv(bundle: &MetricsBundle) -> String {
    let mut out = format!("{RUNS_HEADER}\n");
    for o in &bundle.outcomes {
        let c = &o.cell;
        let prefix = format!("{},{},{},{}", c.method.name(), c.reward_label(), c.num_aux, c.seed);
        match &o.result {
            Ok(r) => {
                let passes: u64 = r.init_backward_passes + r.records.iter().map(|t| t.backward_passes).sum::<u64>();
                let (status, message) = match &r.aborted {
                    Some(m) => ("aborted", m.as_str()),
                    None => ("ok", ""),
                };
                let _ = writeln!(
                    out,
                    "{prefix},{status},{},{},{},{},{},{passes},{}",
                    r.updates,
                    r.convergence_step,
                    format_float(r.heldout_acc),
                    format_float(r.best_val_loss),
                    format_float(r.best_val_acc),
                    quote(message)
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{prefix},error,,,,,,,{}", quote(e));
            }
        }
    }
    out
}

fn policy_vector(snapshot: &PolicySnapshot) -> String {
    match snapshot {
        PolicySnapshot::Exp3 { pi, .. } => join_floats(pi),
        PolicySnapshot::Ucb1 { index, .. } => join_floats(index),
        PolicySnapshot::Mixture { target_weight, aux_weights } => {
            let mut v = vec![*target_weight];
            v.extend_from_slice(aux_weights);
            join_floats(&v)
        }
        PolicySnapshot::Static => String::new(),
    }
}

/// One row per update. `best_*` columns track the best checkpoint so far,
/// starting from the initial model.
pub(crate) fn trace_csv(run: &RunResult) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    let mut best = (0usize, run.initial_heldout_acc);
    for r in &run.records {
        if let Some(h) = r.heldout_acc {
            best = (r.update, h);
        }
        let arms = r.arms.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";");
        let rewards = r
            .rewards
            .iter()
            .map(|ar| format!("{}:{}", ar.arm, format_float(ar.reward.value)))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{},{arms},{rewards},{},{},{},{},{},{},{},{}",
            r.update,
            format_float(r.target_loss),
            format_float(r.val_loss),
            format_float(r.val_acc),
            r.heldout_acc.map(format_float).unwrap_or_default(),
            best.0,
            format_float(best.1),
            r.backward_passes,
            policy_vector(&r.policy)
        );
    }
    out
}

fn histograms_jsonl(bundle: &MetricsBundle) -> String {
    let mut out = String::new();
    for (o, run) in completed(bundle) {
        for probe in &run.probes {
            let line = json!({
                "method": o.cell.method.name(),
                "reward": o.cell.reward_label(),
                "K": o.cell.num_aux,
                "seed": o.cell.seed,
                "update": probe.update,
                "probe_reward": probe.reward.name(),
                "arms": probe.arms,
            });
            let _ = writeln!(out, "{line}");
        }
    }
    out
}

fn sampling_csv(bundle: &MetricsBundle) -> String {
    let mut out = format!("{SAMPLING_HEADER}\n");
    for (o, run) in completed(bundle) {
        for (arm, (&pulls, &share)) in run.pull_counts.iter().zip(&run.sampling_distribution).enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{arm},{pulls},{}",
                o.cell.method.name(),
                o.cell.reward_label(),
                o.cell.num_aux,
                o.cell.seed,
                format_float(share)
            );
        }
    }
    out
}

fn completed(bundle: &MetricsBundle) -> impl Iterator<Item = (&CellOutcome, &RunResult)> {
    bundle
        .outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|r| (o, r)))
}

/// Writes `summary.csv`, `runs.csv`, `sampling.csv`, `histograms.jsonl` and
/// one `traces/<method>_<reward>_K<K>_s<seed>.csv` per completed run.
pub fn emit_metrics(bundle: &MetricsBundle, dir: &Path) -> Result<()> {
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).map_err(|e| FladError::Io(format!("{}: {e}", traces.display())))?;
    let mut files: Vec<(PathBuf, String)> = vec![
        (dir.join("summary.csv"), summary_csv(bundle)),
        (dir.join("runs.csv"), runs_csv(bundle)),
        (dir.join("sampling.csv"), sampling_csv(bundle)),
        (dir.join("histograms.jsonl"), histograms_jsonl(bundle)),
    ];
    for (o, run) in completed(bundle) {
        files.push((traces.join(format!("{}.csv", o.cell.stem())), trace_csv(run)));
    }
    for (path, contents) in &files {
        write_atomic(path, contents)?;
    }
    Ok(())
}
