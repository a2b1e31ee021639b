use std::path::Path;

use serde::Serialize;

use brace_core::gibbs::ChainTrace;
use brace_core::summary::{
    absorb_unselected, credible_interval_select, point_partition, PartitionLoss,
    PosteriorSummary,
};

use crate::args::SummarizeArgs;
use crate::error::{usage_from, CliError, Result};
use crate::manifest::{PhaseClock, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Ci,
    Inclusion,
}

#[derive(Debug, Serialize)]
struct ResolvedSummarize {
    trace: String,
    level: f64,
    loss: PartitionLoss,
    restarts: usize,
    seed: u64,
    selection: SelectionRule,
    inclusion_threshold: f64,
}

pub fn run(args: &SummarizeArgs) -> Result<()> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::usage(format!(
            "--level must be in (0, 1), got {}",
            args.level
        )));
    }
    let loss: PartitionLoss = args.loss.parse().map_err(usage_from)?;
    let selection = match args.selection.as_str() {
        "ci" => SelectionRule::Ci,
        "inclusion" => SelectionRule::Inclusion,
        other => {
            return Err(CliError::usage(format!(
                "unknown --selection rule '{other}' (expected ci or inclusion)"
            )))
        }
    };

    let mut clock = PhaseClock::start();
    let trace = brace_core::io::read_trace(&args.trace)?;
    clock.lap("load");

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Io(e.to_string()))?;
    let resolved = ResolvedSummarize {
        trace: args.trace.display().to_string(),
        level: args.level,
        loss,
        restarts: args.restarts,
        seed: args.seed,
        selection,
        inclusion_threshold: args.inclusion_threshold,
    };
    let mut manifest = RunManifest::new(
        "summarize",
        args.seed,
        serde_json::to_value(&resolved).map_err(|e| CliError::Io(e.to_string()))?,
    );
    manifest.write(&args.out)?;

    let summary = summarize_trace(
        &trace,
        args.level,
        loss,
        args.restarts,
        args.seed,
        selection,
        args.inclusion_threshold,
    )?;
    clock.lap("summarize");

    brace_core::io::write_json(&args.out.join("summary.json"), &summary)?;
    write_feature_table(&args.out.join("features.csv"), &summary)?;
    clock.lap("write");

    manifest.timings = clock.timings;
    manifest.write(&args.out)?;
    let selected = summary.selected.iter().filter(|&&s| s).count();
    let clusters = summary
        .point_partition
        .iter()
        .filter(|&&l| l != 0)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    println!(
        "summarize: {selected} selected features in {clusters} nonzero cluster(s) -> {}",
        args.out.display()
    );
    Ok(())
}

/// Selection, intervals, and the reported partition (unselected features
/// absorbed into the spike).
pub fn summarize_trace(
    trace: &ChainTrace,
    level: f64,
    loss: PartitionLoss,
    restarts: usize,
    seed: u64,
    selection: SelectionRule,
    inclusion_threshold: f64,
) -> Result<PosteriorSummary> {
    let mut summary = credible_interval_select(trace, level)?;
    if selection == SelectionRule::Inclusion {
        summary.selected = summary
            .inclusion_prob
            .iter()
            .map(|&p| p > inclusion_threshold)
            .collect();
    }
    let partition = point_partition(trace, loss, restarts, seed)?;
    summary.point_partition = absorb_unselected(&partition, &summary.selected);
    Ok(summary)
}

/// Per-feature table sorted by |posterior mean| descending.
pub fn write_feature_table(path: &Path, summary: &PosteriorSummary) -> Result<()> {
    let p = summary.feature_names.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        summary.beta_mean[b]
            .abs()
            .total_cmp(&summary.beta_mean[a].abs())
    });
    let mut w = csv::Writer::from_path(path).map_err(brace_core::BraceError::from)?;
    w.write_record([
        "name",
        "beta_mean",
        "ci_lower",
        "ci_upper",
        "inclusion_prob",
        "selected",
        "cluster_label",
    ])
    .map_err(brace_core::BraceError::from)?;
    for &j in &order {
        w.write_record([
            summary.feature_names[j].clone(),
            format!("{}", summary.beta_mean[j]),
            format!("{}", summary.ci_lower[j]),
            format!("{}", summary.ci_upper[j]),
            format!("{}", summary.inclusion_prob[j]),
            format!("{}", summary.selected[j]),
            format!("{}", summary.point_partition[j]),
        ])
        .map_err(brace_core::BraceError::from)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}
