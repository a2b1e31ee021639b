use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use brace_core::gibbs::{run_chain, ChainConfig, Hyperparams};
use brace_core::io::{read_matrix_csv, read_response_csv, write_trace};
use brace_core::marginal::GramPolicy;
use brace_core::preprocessing::{center, to_log_relative_abundance, CountMatrix, Dataset};
use brace_core::BraceError;

use crate::args::FitArgs;
use crate::error::{usage_from, CliError, Result};
use crate::manifest::{PhaseClock, RunManifest};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialFitConfig {
    x: Option<PathBuf>,
    counts: Option<PathBuf>,
    y: Option<PathBuf>,
    pseudocount: Option<f64>,
    min_total_abundance: Option<f64>,
    iters: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
    seed: Option<u64>,
    init_clusters: Option<usize>,
    random_sweep: Option<bool>,
    gram: Option<String>,
    a_sigma: Option<f64>,
    b_sigma: Option<f64>,
    a_gamma: Option<f64>,
    b_gamma: Option<f64>,
    a_alpha: Option<f64>,
    b_alpha: Option<f64>,
    alpha0: Option<f64>,
}

/// Fully resolved fit configuration, echoed into the manifest.
#[derive(Debug, Serialize)]
pub struct ResolvedFit {
    pub x: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub y: PathBuf,
    pub pseudocount: f64,
    pub min_total_abundance: f64,
    pub chain: ChainConfig,
    pub hyperparams: Hyperparams,
}

pub fn run(args: &FitArgs) -> Result<()> {
    let file: PartialFitConfig = match &args.config {
        Some(path) => brace_core::io::read_json(path).map_err(CliError::from)?,
        None => PartialFitConfig::default(),
    };

    let x_path = args.x.clone().or(file.x);
    let counts_path = args.counts.clone().or(file.counts);
    if x_path.is_some() && counts_path.is_some() {
        return Err(CliError::usage("--x and --counts are mutually exclusive"));
    }
    if x_path.is_none() && counts_path.is_none() {
        return Err(CliError::usage("one of --x or --counts is required"));
    }
    let y_path = args
        .y
        .clone()
        .or(file.y)
        .ok_or_else(|| CliError::usage("--y is required"))?;
    let seed = args
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError::usage("--seed is required; runs must be reproducible"))?;

    let gram = match args.gram.clone().or(file.gram) {
        None => GramPolicy::Auto,
        Some(s) => match s.as_str() {
            "auto" => GramPolicy::Auto,
            "cached" => GramPolicy::Cached,
            "on-the-fly" => GramPolicy::OnTheFly,
            other => {
                return Err(CliError::usage(format!(
                    "unknown --gram policy '{other}' (expected auto, cached, or on-the-fly)"
                )))
            }
        },
    };

    let mut chain = ChainConfig::new(seed);
    chain.n_iter = args.iters.or(file.iters).unwrap_or(5000);
    chain.burn_in = args.burnin.or(file.burnin).unwrap_or(3000);
    chain.thin = args.thin.or(file.thin).unwrap_or(1);
    chain.init_clusters = args.init_clusters.or(file.init_clusters).unwrap_or(5);
    chain.random_sweep = args.random_sweep || file.random_sweep.unwrap_or(false);
    chain.gram = gram;
    chain.validate().map_err(usage_from)?;

    let pseudocount = args.pseudocount.or(file.pseudocount).unwrap_or(0.5);
    let min_total = args
        .min_total_abundance
        .or(file.min_total_abundance)
        .unwrap_or(0.0);

    let mut clock = PhaseClock::start();
    let data = load_dataset(x_path.as_deref(), counts_path.as_deref(), &y_path, pseudocount, min_total)?;
    clock.lap("load");

    // The default cluster count must fit the data; an explicit request that
    // does not is a usage error.
    if args.init_clusters.or(file.init_clusters).is_none() {
        chain.init_clusters = chain.init_clusters.min(data.p());
    } else if chain.init_clusters > data.p() {
        return Err(CliError::usage(format!(
            "--init-clusters ({}) exceeds the feature count ({})",
            chain.init_clusters,
            data.p()
        )));
    }

    let mut hp = Hyperparams::defaults_for(data.p());
    apply_override(&mut hp.a_sigma, args.a_sigma.or(file.a_sigma));
    apply_override(&mut hp.b_sigma, args.b_sigma.or(file.b_sigma));
    apply_override(&mut hp.a_gamma, args.a_gamma.or(file.a_gamma));
    apply_override(&mut hp.b_gamma, args.b_gamma.or(file.b_gamma));
    apply_override(&mut hp.a_alpha, args.a_alpha.or(file.a_alpha));
    apply_override(&mut hp.b_alpha, args.b_alpha.or(file.b_alpha));
    apply_override(&mut hp.alpha0, args.alpha0.or(file.alpha0));
    hp.validate().map_err(usage_from)?;

    let resolved = ResolvedFit {
        x: x_path,
        counts: counts_path,
        y: y_path,
        pseudocount,
        min_total_abundance: min_total,
        chain: chain.clone(),
        hyperparams: hp.clone(),
    };
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Io(e.to_string()))?;
    let mut manifest = RunManifest::new(
        "fit",
        seed,
        serde_json::to_value(&resolved).map_err(|e| CliError::Io(e.to_string()))?,
    );
    manifest.write(&args.out)?;

    let trace = match run_chain(&data, &chain, &hp) {
        Ok(trace) => trace,
        Err(BraceError::Numerical { message, context }) => {
            let dump = args.out.join("state_dump.json");
            let body = context.unwrap_or_else(|| "{}".to_string());
            std::fs::write(&dump, body).map_err(|e| CliError::Io(e.to_string()))?;
            return Err(CliError::Numerical {
                message: format!("{message} (state dump at {})", dump.display()),
                state_dump: Some(dump),
            });
        }
        Err(other) => return Err(other.into()),
    };
    clock.lap("sample");

    write_trace(&args.out, &trace)?;
    clock.lap("write");

    manifest.timings = clock.timings;
    manifest.write(&args.out)?;
    println!(
        "fit: {} stored samples over {} features -> {}",
        trace.len(),
        trace.p(),
        args.out.display()
    );
    Ok(())
}

fn apply_override(slot: &mut f64, value: Option<f64>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Reads the design (directly, or from counts via the pseudocount recipe)
/// and the response, and centers both.
pub fn load_dataset(
    x: Option<&Path>,
    counts: Option<&Path>,
    y: &Path,
    pseudocount: f64,
    min_total: f64,
) -> Result<Dataset> {
    let (x_raw, names) = match (x, counts) {
        (Some(path), None) => read_matrix_csv(path)?,
        (None, Some(path)) => {
            let (values, names) = read_matrix_csv(path)?;
            let sample_ids = (1..=values.nrows()).map(|i| format!("sample_{i}")).collect();
            let table = CountMatrix::new(values, names, sample_ids)?;
            let (table, dropped) = table.filter_features(min_total);
            if !dropped.is_empty() {
                eprintln!(
                    "dropped {} feature(s) below total abundance {min_total}",
                    dropped.len()
                );
            }
            let x = to_log_relative_abundance(&table, pseudocount)?;
            (x, table.feature_names)
        }
        _ => unreachable!("validated by caller"),
    };
    let y = read_response_csv(y)?;
    Ok(center(&x_raw, &y, names)?)
}
