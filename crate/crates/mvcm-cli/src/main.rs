//! Command-line pipeline for multivariate varying coefficient models.
//!
//! Subcommands run the estimation chain up to their stage and persist every
//! intermediate artifact plus a manifest: `fit` writes the coefficient
//! estimates, `smooth` adds the individual curves, `fpca` the eigen system,
//! `test` the wild-bootstrap global test, `band` the simultaneous
//! confidence bands. `simulate-power` and `simulate-coverage` run the Monte
//! Carlo studies.

mod config;
mod ingest;
mod output;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mvcm::{
    build_band, compute_scores, decompose_all, empirical_covariance, estimate_bias,
    estimate_coefficients, estimate_coefficients_auto, scb_critical_values, smooth_individuals,
    smooth_individuals_auto, wild_bootstrap_test, B0Spec, EvaluationGrid, GridLaw,
    LinearHypothesis, Retention, SimulationDesign,
};
use nalgebra::DMatrix;
use ndarray::Array2;
use serde::Deserialize;

use config::{Overrides, RunConfig};
use output::{Manifest, OutputSet};

#[derive(Parser)]
#[command(name = "mvcm", version, about = "Varying coefficient models for functional responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    kernel: Option<String>,
    /// Coefficient bandwidths: "auto" or comma-separated values.
    #[arg(long)]
    h1: Option<String>,
    /// Smoothing bandwidths: "auto" or comma-separated values.
    #[arg(long)]
    h2: Option<String>,
    #[arg(long = "g-reps")]
    g_reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation grid size (0 = report on the data grid).
    #[arg(long = "eval-points")]
    eval_points: Option<usize>,
    /// Eigenvalue energy threshold for component retention.
    #[arg(long)]
    energy: Option<f64>,
    /// Include the bootstrap draws in test.json.
    #[arg(long = "emit-draws", default_value_t = false)]
    emit_draws: bool,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Long-format responses CSV: subject_id,response_index,grid_position,value.
    #[arg(long)]
    responses: PathBuf,
    /// Covariates CSV: subject_id,x1,...,xp.
    #[arg(long)]
    covariates: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize a dataset.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate the coefficient functions and their bias.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit plus individual-curve smoothing.
    Smooth {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit, smooth, and decompose the curve covariance.
    Fpca {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Full pipeline plus the wild-bootstrap global test.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
        /// Hypothesis JSON: {"c": [[...]], "b0": "zero" | [[...]]}.
        #[arg(long)]
        hypothesis: PathBuf,
    },
    /// Full pipeline plus simultaneous confidence bands for every
    /// coefficient.
    Band {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Rejection-rate study over effect scales and sample sizes.
    SimulatePower {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long = "c-values", default_value = "0,0.1,0.2,0.3,0.4", value_delimiter = ',')]
        c_values: Vec<f64>,
        #[arg(long = "n-values", default_value = "100,200", value_delimiter = ',')]
        n_values: Vec<usize>,
        #[arg(long, default_value = "0.05,0.01", value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        /// Grid size of the simulated datasets.
        #[arg(long, default_value_t = 50)]
        m: usize,
        #[arg(long, default_value = "uniform")]
        grid: String,
    },
    /// Simultaneous-coverage study over grid sizes.
    SimulateCoverage {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long = "m-values", default_value = "25,50,75", value_delimiter = ',')]
        m_values: Vec<usize>,
        #[arg(long, default_value = "0.05,0.01", value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value = "uniform")]
        grid: String,
    },
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { data, common } => run_ingest(&data, &common),
        Command::Fit { data, common } => run_pipeline(&data, &common, Stage::Fit, None),
        Command::Smooth { data, common } => run_pipeline(&data, &common, Stage::Smooth, None),
        Command::Fpca { data, common } => run_pipeline(&data, &common, Stage::Fpca, None),
        Command::Test {
            data,
            common,
            hypothesis,
        } => run_pipeline(&data, &common, Stage::Test, Some(&hypothesis)),
        Command::Band { data, common } => run_pipeline(&data, &common, Stage::Band, None),
        Command::SimulatePower {
            common,
            c_values,
            n_values,
            alphas,
            reps,
            m,
            grid,
        } => run_power(&common, &c_values, &n_values, &alphas, reps, m, &grid),
        Command::SimulateCoverage {
            common,
            n,
            m_values,
            alphas,
            reps,
            grid,
        } => run_coverage(&common, n, &m_values, &alphas, reps, &grid),
    }
}

fn overrides_of(common: &CommonArgs) -> Overrides {
    Overrides {
        kernel: common.kernel.clone(),
        h1: common.h1.clone(),
        h2: common.h2.clone(),
        g_reps: common.g_reps,
        alpha: common.alpha,
        seed: common.seed,
        eval_points: common.eval_points,
        energy: common.energy,
        emit_draws: common.emit_draws,
    }
}

fn run_ingest(data: &DataArgs, common: &CommonArgs) -> Result<()> {
    let config = RunConfig::resolve(common.config.as_deref(), &overrides_of(common))?;
    let report = ingest::ingest(&data.responses, &data.covariates).context("stage ingest")?;
    let mut manifest = Manifest::new("ingest", config.as_map());
    manifest.record_input("responses", &data.responses)?;
    manifest.record_input("covariates", &data.covariates)?;
    std::fs::create_dir_all(&common.out)?;
    ingest::emit(
        &report.dataset,
        &report.subject_ids,
        &common.out.join("responses_normalized.csv"),
        &common.out.join("covariates_normalized.csv"),
    )?;
    let mut outputs = OutputSet::new();
    outputs.add(
        "summary.json",
        serde_json::to_string_pretty(&serde_json::json!({
            "subjects": report.dataset.n(),
            "responses": report.dataset.num_responses(),
            "grid_points": report.dataset.num_points(),
            "covariates": report.dataset.p(),
        }))?,
    );
    manifest.outputs.push("responses_normalized.csv".into());
    manifest.outputs.push("covariates_normalized.csv".into());
    outputs.write_all(&common.out, manifest)?;
    println!(
        "ingested {} subjects, {} responses, {} grid points",
        report.dataset.n(),
        report.dataset.num_responses(),
        report.dataset.num_points()
    );
    Ok(())
}

#[derive(PartialEq, PartialOrd, Clone, Copy)]
enum Stage {
    Fit,
    Smooth,
    Fpca,
    Test,
    Band,
}

#[derive(Deserialize)]
struct HypothesisFile {
    c: Vec<Vec<f64>>,
    b0: B0Field,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum B0Field {
    Keyword(String),
    Table(Vec<Vec<f64>>),
}

fn load_hypothesis(path: &Path, eval_len: usize) -> Result<LinearHypothesis> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read hypothesis file {}", path.display()))?;
    let parsed: HypothesisFile =
        serde_json::from_str(&text).context("hypothesis file is not valid JSON")?;
    let rows = parsed.c.len();
    if rows == 0 {
        bail!("hypothesis matrix C is empty");
    }
    let cols = parsed.c[0].len();
    if parsed.c.iter().any(|row| row.len() != cols) {
        bail!("hypothesis matrix C has ragged rows");
    }
    let c = DMatrix::from_fn(rows, cols, |r, l| parsed.c[r][l]);
    let b0 = match parsed.b0 {
        B0Field::Keyword(word) if word.eq_ignore_ascii_case("zero") => B0Spec::Zero,
        B0Field::Keyword(word) => bail!("unknown b0 keyword {word:?} (expected \"zero\")"),
        B0Field::Table(values) => {
            if values.len() != eval_len {
                bail!(
                    "b0 table has {} rows but the evaluation grid has {eval_len} points",
                    values.len()
                );
            }
            if values.iter().any(|row| row.len() != rows) {
                bail!("each b0 row must have {rows} entries (one per constraint)");
            }
            let mut table = Array2::zeros((eval_len, rows));
            for (e, row) in values.iter().enumerate() {
                for (r, v) in row.iter().enumerate() {
                    table[[e, r]] = *v;
                }
            }
            B0Spec::Tabulated(table)
        }
    };
    Ok(LinearHypothesis::new(c, b0)?)
}

fn run_pipeline(
    data_args: &DataArgs,
    common: &CommonArgs,
    stage: Stage,
    hypothesis_path: Option<&Path>,
) -> Result<()> {
    let config = RunConfig::resolve(common.config.as_deref(), &overrides_of(common))?;
    let mut manifest = Manifest::new(stage_name(stage), config.as_map());
    manifest.record_input("responses", &data_args.responses)?;
    manifest.record_input("covariates", &data_args.covariates)?;
    if let Some(path) = common.config.as_deref() {
        manifest.record_input("config", path)?;
    }
    if let Some(path) = hypothesis_path {
        manifest.record_input("hypothesis", path)?;
    }

    let report = ingest::ingest(&data_args.responses, &data_args.covariates)
        .context("stage ingest")?;
    let data = &report.dataset;
    let eval = if config.eval_points == 0 {
        EvaluationGrid::from_dataset(data)
    } else {
        EvaluationGrid::equispaced(config.eval_points).context("stage fit")?
    };

    let mut outputs = OutputSet::new();

    // Stage fit: bandwidths ("auto" runs leave-one-curve-out CV),
    // coefficients and the plug-in bias.
    let kernel = config.kernel;
    let fit = match config.h1.resolve(data.num_responses()).context("stage fit")? {
        Some(fixed) => {
            let mut fit = estimate_coefficients(data, &fixed, &eval, kernel).context("stage fit")?;
            let bias = estimate_bias(data, &fit, &eval).context("stage fit")?;
            fit.set_bias(bias.bias).context("stage fit")?;
            fit
        }
        None => estimate_coefficients_auto(data, &eval, kernel).context("stage fit")?,
    };
    outputs.add("estimates.json", output::estimates_json(&fit, data)?);

    if stage >= Stage::Smooth {
        let curves = match config.h2.resolve(data.num_responses()).context("stage smooth")? {
            Some(fixed) => smooth_individuals(data, &fit, &fixed).context("stage smooth")?,
            None => smooth_individuals_auto(data, &fit).context("stage smooth")?,
        };
        outputs.add("eta.csv", output::eta_csv(data, &curves, &report.subject_ids));

        if stage >= Stage::Fpca {
            let cov = empirical_covariance(data, &curves).context("stage fpca")?;
            let eig =
                decompose_all(&cov, Retention::Energy(config.energy)).context("stage fpca")?;
            let scores = compute_scores(&curves, &eig);
            outputs.add("fpca.json", output::fpca_json(&eig, &curves)?);
            outputs.add("fpca.csv", output::fpca_csv(&eig));
            outputs.add("scores.csv", output::scores_csv(&scores, &report.subject_ids));

            if stage == Stage::Test {
                let hyp = load_hypothesis(
                    hypothesis_path.expect("test stage requires a hypothesis"),
                    eval.len(),
                )
                .context("stage test")?;
                let result = wild_bootstrap_test(
                    data,
                    &fit,
                    &curves,
                    &cov,
                    &hyp,
                    config.g_reps,
                    config.seed,
                )
                .context("stage test")?;
                outputs.add("test.json", output::test_json(&result, config.emit_draws)?);
                println!(
                    "global test: statistic {:.6}, p-value {:.6} ({} draws)",
                    result.s_n, result.p_value, result.g
                );
            }
        }

        if stage == Stage::Band {
            let critical =
                scb_critical_values(data, &fit, config.alpha, config.g_reps, config.seed)
                    .context("stage band")?;
            let mut bands = Vec::new();
            for j in 0..data.num_responses() {
                for l in 0..data.p() {
                    bands.push(
                        build_band(
                            &fit,
                            j,
                            l,
                            config.alpha,
                            critical[[j, l]],
                            data.n(),
                            config.g_reps,
                            config.seed,
                        )
                        .context("stage band")?,
                    );
                }
            }
            outputs.add("bands.json", output::bands_json(&bands)?);
            outputs.add("bands.csv", output::bands_csv(&bands));
        }
    }

    outputs.write_all(&common.out, manifest)?;
    println!("wrote artifacts to {}", common.out.display());
    Ok(())
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Fit => "fit",
        Stage::Smooth => "smooth",
        Stage::Fpca => "fpca",
        Stage::Test => "test",
        Stage::Band => "band",
    }
}

fn grid_law(raw: &str) -> Result<GridLaw> {
    match raw.to_ascii_lowercase().as_str() {
        "uniform" => Ok(GridLaw::Uniform),
        "equispaced" => Ok(GridLaw::Equispaced),
        other => bail!("unknown grid law {other:?} (expected uniform | equispaced)"),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_power(
    common: &CommonArgs,
    c_values: &[f64],
    n_values: &[usize],
    alphas: &[f64],
    reps: usize,
    m: usize,
    grid: &str,
) -> Result<()> {
    let config = RunConfig::resolve(common.config.as_deref(), &overrides_of(common))?;
    let design = SimulationDesign {
        m,
        grid_law: grid_law(grid)?,
        ..SimulationDesign::default()
    };
    let result = mvcm::run_power_study(
        &design,
        c_values,
        n_values,
        alphas,
        reps,
        config.g_reps,
        config.seed,
    )
    .context("stage simulate-power")?;
    let mut outputs = OutputSet::new();
    outputs.add("power_study.csv", result.power_csv());
    let mut manifest_config = config.as_map();
    manifest_config.insert("c_values".into(), join(c_values));
    manifest_config.insert("n_values".into(), join(n_values));
    manifest_config.insert("alphas".into(), join(alphas));
    manifest_config.insert("reps".into(), reps.to_string());
    manifest_config.insert("m".into(), m.to_string());
    manifest_config.insert("grid".into(), grid.to_string());
    outputs.write_all(&common.out, Manifest::new("simulate-power", manifest_config))?;
    println!(
        "power study finished: {} conditions in {:.1?}",
        result.power_rows.len(),
        result.wall_clock
    );
    Ok(())
}

fn run_coverage(
    common: &CommonArgs,
    n: usize,
    m_values: &[usize],
    alphas: &[f64],
    reps: usize,
    grid: &str,
) -> Result<()> {
    let config = RunConfig::resolve(common.config.as_deref(), &overrides_of(common))?;
    let design = SimulationDesign {
        grid_law: grid_law(grid)?,
        ..SimulationDesign::default()
    };
    let result = mvcm::run_coverage_study(
        &design,
        n,
        m_values,
        alphas,
        reps,
        config.g_reps,
        config.seed,
    )
    .context("stage simulate-coverage")?;
    let mut outputs = OutputSet::new();
    outputs.add("coverage_study.csv", result.coverage_csv());
    let mut manifest_config = config.as_map();
    manifest_config.insert("n".into(), n.to_string());
    manifest_config.insert("m_values".into(), join(m_values));
    manifest_config.insert("alphas".into(), join(alphas));
    manifest_config.insert("reps".into(), reps.to_string());
    manifest_config.insert("grid".into(), grid.to_string());
    outputs.write_all(
        &common.out,
        Manifest::new("simulate-coverage", manifest_config),
    )?;
    println!(
        "coverage study finished: {} cells in {:.1?}",
        result.coverage_rows.len(),
        result.wall_clock
    );
    Ok(())
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
