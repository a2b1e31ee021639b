use std::path::Path;

use serde::Deserialize;

use brace_core::io::{write_matrix_csv, write_response_csv};
use brace_core::simulation::{simulate_raw, CovarianceCase, SimConfig};

use crate::args::SimulateArgs;
use crate::error::{usage_from, CliError, Result};
use crate::manifest::{PhaseClock, RunManifest};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSimConfig {
    n: Option<usize>,
    p: Option<usize>,
    case: Option<String>,
    rho: Option<f64>,
    snr: Option<f64>,
    seed: Option<u64>,
    train_fraction: Option<f64>,
}

const TEMPLATE_NOTE: &str = "coefficient template does not sum to zero as printed; \
the mean of its nonzero entries was subtracted from every nonzero entry to make \
the zero-sum constraint exact";

pub fn run(args: &SimulateArgs) -> Result<()> {
    let file: PartialSimConfig = match &args.config {
        Some(path) => brace_core::io::read_json(path).map_err(CliError::from)?,
        None => PartialSimConfig::default(),
    };
    let case_str = args
        .case
        .clone()
        .or(file.case)
        .ok_or_else(|| CliError::usage("--case is required (dep1 or dep2)"))?;
    let case: CovarianceCase = case_str.parse().map_err(usage_from)?;
    let cfg = SimConfig {
        n: args
            .n
            .or(file.n)
            .ok_or_else(|| CliError::usage("--n is required"))?,
        p: args
            .p
            .or(file.p)
            .ok_or_else(|| CliError::usage("--p is required"))?,
        case,
        rho: args.rho.or(file.rho).unwrap_or(0.5),
        snr: args.snr.or(file.snr).unwrap_or(1.0),
        seed: args
            .seed
            .or(file.seed)
            .ok_or_else(|| CliError::usage("--seed is required; runs must be reproducible"))?,
        train_fraction: args.train_fraction.or(file.train_fraction).unwrap_or(0.8),
    };
    cfg.validate().map_err(usage_from)?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Io(e.to_string()))?;
    let mut manifest = RunManifest::new(
        "simulate",
        cfg.seed,
        serde_json::to_value(&cfg).map_err(|e| CliError::Io(e.to_string()))?,
    )
    .with_note(TEMPLATE_NOTE);
    manifest.write(&args.out)?;

    let mut clock = PhaseClock::start();
    let (raw, truth) = simulate_raw(&cfg)?;
    clock.lap("generate");

    write_files(&args.out, &raw, &truth)?;
    clock.lap("write");

    manifest.timings = clock.timings;
    manifest.write(&args.out)?;
    println!(
        "simulated n={} p={} ({:?}) -> {}",
        cfg.n,
        cfg.p,
        cfg.case,
        args.out.display()
    );
    Ok(())
}

fn write_files(
    out: &Path,
    raw: &brace_core::RawSplit,
    truth: &brace_core::SimulationTruth,
) -> Result<()> {
    write_matrix_csv(&out.join("x_train.csv"), &raw.x_train, &raw.feature_names)?;
    write_response_csv(&out.join("y_train.csv"), &raw.y_train)?;
    write_matrix_csv(&out.join("x_test.csv"), &raw.x_test, &raw.feature_names)?;
    write_response_csv(&out.join("y_test.csv"), &raw.y_test)?;
    brace_core::io::write_json(&out.join("truth.json"), truth)?;
    Ok(())
}
