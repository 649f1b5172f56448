//! `rcl` — simulate benchmark data, run estimator sweeps, and verify
//! score properties from the command line.
//!
//! Exit codes: 0 on success, 1 when an experiment completed but some
//! cells failed, 2 on a hard error (bad config, unreadable file, …).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rcl_core::dgp::{generate, Assignment, DgpConfig};
use rcl_core::model::{write_csv, write_truth_csv};
use rcl_core::runner::{
    run_experiment, text_table, CsvSource, DataConfig, EvalSplit, ExperimentConfig, LearnerConfig,
};
use rcl_core::score::ScoreKind;
use rcl_core::verify::{
    fd_orthogonality, fd_orthogonality_stratified, mc_moment_check, OrthoReport,
    PerturbationDirection,
};
use rcl_core::Result;

#[derive(Parser)]
#[command(
    name = "rcl",
    version,
    about = "Average-treatment-effect estimation with robust causal learning scores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV with a truth sidecar.
    Simulate(SimulateArgs),
    /// Estimate effects on a CSV dataset and report ε_ATE against its
    /// truth sidecar.
    Estimate(EstimateArgs),
    /// Run a full experiment sweep from a TOML config.
    Run(RunArgs),
    /// Check the moment condition and orthogonality orders of a score.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Sample count N.
    #[arg(long)]
    n: usize,
    /// Covariate dimension p.
    #[arg(long, default_value_t = 5)]
    p: usize,
    /// Confounding ratio r_c in [0,1].
    #[arg(long, default_value_t = 1.0)]
    r_c: f64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Assignment rule: argmax or sample.
    #[arg(long, default_value = "argmax")]
    assignment: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Truth sidecar path (level,theta_true).
    #[arg(long)]
    truth_out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Observations CSV (y,d,z1..zp).
    #[arg(long)]
    data: PathBuf,
    /// Truth sidecar CSV (level,theta_true).
    #[arg(long)]
    truth: PathBuf,
    /// Replication count (re-splits the same data).
    #[arg(long, default_value_t = 1)]
    replications: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    /// Outcome regressor: lasso, ridge, or forest.
    #[arg(long, default_value = "lasso")]
    regressor: String,
    /// Propensity classifier: logistic or forest.
    #[arg(long, default_value = "logistic")]
    classifier: String,
    /// Rows the estimators see: train, test, or both.
    #[arg(long, default_value = "test")]
    evaluation_split: String,
    /// Feed the finite-only ε into the reduction ratios.
    #[arg(long)]
    finite_only: bool,
    /// Report directory (falls back to $RCL_OUTPUT_DIR, then ./rcl-out).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Also write per-N and per-r_c series (plot_n.csv, plot_rc.csv).
    #[arg(long)]
    emit_plot_data: bool,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Score to check: dr, ipw, dml, or rcl.
    #[arg(long)]
    kind: String,
    /// RCL weight order r (rcl only).
    #[arg(long, default_value_t = 2)]
    r: usize,
    /// RCL orthogonality order k (rcl only).
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Treatment level under test.
    #[arg(long, default_value = "d1")]
    level: String,
    /// Derivative ball to require (defaults to k for rcl, 1 otherwise).
    #[arg(long)]
    order: Option<usize>,
    /// Monte-Carlo sample size.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    /// Seed for the synthetic draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Covariate dimension of the synthetic draw.
    #[arg(long, default_value_t = 5)]
    p: usize,
    /// Confounding ratio of the synthetic draw.
    #[arg(long, default_value_t = 1.0)]
    r_c: f64,
    /// Also print per-quartile stratified reports.
    #[arg(long)]
    stratified: bool,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Estimate(args) => estimate(args),
        Command::Run(args) => run(args),
        Command::Verify(args) => verify(args),
    }
}

fn parse_assignment(text: &str) -> Result<Assignment> {
    match text {
        "argmax" => Ok(Assignment::Argmax),
        "sample" => Ok(Assignment::Sample),
        other => Err(rcl_core::Error::Config(format!(
            "unknown assignment {other:?} (expected \"argmax\" or \"sample\")"
        ))),
    }
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut config = DgpConfig::new(args.n, args.p, args.r_c, args.seed);
    config.assignment = parse_assignment(&args.assignment)?;
    let (data, truth) = generate(&config)?;
    write_csv(&data, &args.out)?;
    let rows: Vec<(String, f64)> = data
        .treatment_space
        .labels()
        .iter()
        .zip(&truth.theta)
        .map(|(level, &theta)| (level.to_string(), theta))
        .collect();
    write_truth_csv(&rows, &args.truth_out)?;
    println!(
        "wrote {} rows to {} (truth: {})",
        data.n_rows(),
        args.out.display(),
        args.truth_out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_eval_split(text: &str) -> Result<EvalSplit> {
    match text {
        "train" => Ok(EvalSplit::Train),
        "test" => Ok(EvalSplit::Test),
        "both" => Ok(EvalSplit::Both),
        other => Err(rcl_core::Error::Config(format!(
            "unknown evaluation split {other:?} (expected \"train\", \"test\", or \"both\")"
        ))),
    }
}

fn estimate(args: EstimateArgs) -> Result<ExitCode> {
    let config = ExperimentConfig {
        data: DataConfig {
            source: "csv".to_string(),
            simulate: None,
            csv: Some(CsvSource {
                path: args.data,
                truth: args.truth,
            }),
        },
        replications: args.replications,
        split: (0.7, 0.15, 0.15),
        evaluation_split: parse_eval_split(&args.evaluation_split)?,
        master_seed: args.master_seed,
        output_dir: args.output_dir,
        finite_only: args.finite_only,
        tuning: Default::default(),
        learners: vec![LearnerConfig {
            regressor: args.regressor,
            classifier: args.classifier,
            lambda: None,
            l2: None,
            trees: None,
            depth: None,
            min_leaf: None,
            features: None,
        }],
        estimators: ExperimentConfig::default_estimator_grid(),
        sweep: None,
    };
    config.check()?;
    finish_run(&config, false)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if args.output_dir.is_some() {
        config.output_dir = args.output_dir;
    }
    finish_run(&config, args.emit_plot_data)
}

fn finish_run(config: &ExperimentConfig, emit_plot_data: bool) -> Result<ExitCode> {
    let (report, dir) = run_experiment(config, emit_plot_data)?;
    print!("{}", text_table(&report, config));
    println!("\nreports written to {}", dir.display());
    if report.clean() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let kind = match args.kind.as_str() {
        "dr" => ScoreKind::Dr,
        "ipw" => ScoreKind::Ipw,
        "dml" => ScoreKind::Dml,
        "rcl" => ScoreKind::Rcl {
            r: args.r,
            k: args.k,
        },
        other => {
            return Err(rcl_core::Error::Config(format!(
                "unknown score kind {other:?} (expected \"dr\", \"ipw\", \"dml\", or \"rcl\")"
            )));
        }
    };
    let order = args.order.unwrap_or(match kind {
        ScoreKind::Rcl { k, .. } => k,
        _ => 1,
    });
    let config = DgpConfig::new(0, args.p, args.r_c, 0);

    let moment = mc_moment_check(kind, &config, &args.level, args.n, args.seed)?;
    println!(
        "moment condition  E[psi] = {:+.6e}  (SE {:.3e})  {}",
        moment.mean,
        moment.se,
        if moment.passes() { "PASS" } else { "FAIL" }
    );

    let direction = PerturbationDirection::default();
    let report = fd_orthogonality(
        kind,
        &config,
        &args.level,
        &direction,
        order,
        args.n,
        args.seed,
    )?;
    print_ortho(&report);

    if args.stratified {
        let strata = fd_orthogonality_stratified(
            kind,
            &config,
            &args.level,
            &direction,
            order,
            args.n,
            args.seed,
        )?;
        for stratum in &strata {
            print_ortho(stratum);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_ortho(report: &OrthoReport) {
    match report.stratum {
        Some((bin, total)) => println!(
            "\northogonality of {} on {} up to order {} (stratum {}/{}, n = {})",
            report.kind,
            report.level,
            report.order,
            bin + 1,
            total,
            report.n
        ),
        None => println!(
            "\northogonality of {} on {} up to order {} (n = {})",
            report.kind, report.level, report.order, report.n
        ),
    }
    println!(
        "  {:<8} {:>14} {:>12} {:>12}  verdict",
        "alpha", "derivative", "SE", "tol"
    );
    for entry in &report.entries {
        println!(
            "  ({},{})    {:>+14.6e} {:>12.3e} {:>12.3e}  {}{}",
            entry.alpha.0,
            entry.alpha.1,
            entry.value,
            entry.se,
            entry.tol,
            if entry.pass { "PASS" } else { "FAIL" },
            if entry.required { "" } else { " (power check)" },
        );
    }
    println!(
        "  required orders: {}",
        if report.required_pass() {
            "PASS"
        } else {
            "FAIL"
        }
    );
}
