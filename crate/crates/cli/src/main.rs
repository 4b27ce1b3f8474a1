use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dp_audit::accountant::{self, AccountantError, MechanismParams, PrivacyBudget};
use dp_audit::bounds::rr_bound_report;
use dp_audit::harness::{
    emit_report, exit_code, parse_records, run_experiment_timed, run_sweep, Cell, ExperimentConfig, HarnessError,
    OutputFormat, SWEEP_EPSILONS,
};
use dp_audit::metrics::{bound_check, confidence_interval};
use dp_audit::mia::{read_features, repeat_attacks_on, AttackOptions};
use dp_audit::serde_ext::parse_f64_or_inf;

#[derive(Parser)]
#[command(name = "dp-audit", version, about = "Train with DP-SGD and audit models with membership inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and audit one configuration.
    Train(RunArgs),
    /// Run the attack suite on a feature file of an externally trained model.
    Attack(AttackArgs),
    /// Compute ε for a noise multiplier, or calibrate σ for a target ε.
    Account(AccountArgs),
    /// Play the membership game against randomized response.
    BoundCheck(BoundArgs),
    /// Train and audit every config at every ε.
    Sweep(SweepArgs),
    /// Re-emit tables and plot series from a records file.
    Report(ReportArgs),
}

fn parse_eps(s: &str) -> Result<f64, String> {
    parse_f64_or_inf(s).ok_or_else(|| format!("not a number or inf: {s:?}"))
}

#[derive(Args)]
struct Output {
    /// Output directory for report files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Report files to write.
    #[arg(long, value_delimiter = ',', default_values = ["records", "table", "plot"])]
    format: Vec<OutputFormat>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Target ε, or `inf` for non-private training.
    #[arg(long, value_parser = parse_eps)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epsilon {
            cfg.privacy.epsilon = e;
        }
        if let Some(d) = self.delta {
            cfg.privacy.delta = d;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct AttackArgs {
    /// Feature file (DPF1 layout).
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    /// ε the model was trained with, for the bound check.
    #[arg(long, value_parser = parse_eps)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Fit one attacker per true class.
    #[arg(long)]
    per_class: bool,
}

#[derive(Args)]
struct AccountArgs {
    /// Sampling rate B/n.
    #[arg(long)]
    q: f64,
    /// Noise multiplier; computes ε.
    #[arg(long, conflicts_with = "epsilon", required_unless_present = "epsilon")]
    sigma: Option<f64>,
    /// Target ε; calibrates σ.
    #[arg(long, value_parser = parse_eps)]
    epsilon: Option<f64>,
    /// Number of steps.
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, value_parser = parse_eps)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// One config per variant.
    #[arg(long, required = true, num_args = 1..)]
    config: Vec<PathBuf>,
    /// Budgets to sweep.
    #[arg(long, value_delimiter = ',', value_parser = parse_eps)]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ReportArgs {
    /// Records file written by `train` or `sweep`.
    #[arg(long)]
    records: PathBuf,
    #[command(flatten)]
    output: Output,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self { code: e.exit_code(), message: e.to_string() }
    }
}

fn config_error(message: impl ToString) -> Failure {
    Failure { code: exit_code::CONFIG, message: message.to_string() }
}

fn accountant_error(e: AccountantError) -> Failure {
    let code = match e {
        AccountantError::Unreachable { .. } => exit_code::CALIBRATION,
        _ => exit_code::CONFIG,
    };
    Failure { code, message: e.to_string() }
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn emit(cells: &[Cell], out: &Output) -> Result<(), Failure> {
    for p in emit_report(cells, &out.out, &out.format)? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn train(a: RunArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    a.overrides.apply(&mut cfg);
    let report = run_experiment_timed(&cfg)?;
    print(&json!({
        "variant": report.variant(),
        "target_epsilon": dp_audit::harness::format_epsilon(report.target_epsilon),
        "achieved_epsilon": dp_audit::harness::format_epsilon(report.achieved_epsilon),
        "sigma": report.training.sigma,
        "accuracy": report.utility.accuracy,
        "f1": report.utility.f1,
        "advantage_ci": report.attack.as_ref().map(|a| [a.interval.lower, a.interval.upper]),
        "bound_satisfied": report.attack.as_ref().map(|a| a.bound.satisfied),
    }));
    emit(&[Cell::Done(Box::new(report))], &a.output)
}

fn attack(a: AttackArgs) -> Result<(), Failure> {
    let input = read_features(&a.features).map_err(HarnessError::from)?;
    let opts = AttackOptions { per_class: a.per_class, ..AttackOptions::default() };
    let suites = repeat_attacks_on(&input, a.repeats, a.seed, &opts).map_err(HarnessError::from)?;
    let advantages: Vec<f64> = suites.iter().map(|s| s.best.advantage).collect();
    let ci = confidence_interval(&advantages, 0.95).map_err(HarnessError::from)?;
    let check = match a.epsilon {
        Some(e) => Some(bound_check(e, a.delta, ci).map_err(config_error)?),
        None => None,
    };
    let records: Vec<_> = suites.iter().map(|s| dp_audit::mia::AttackRecord::from(&s.best)).collect();
    print(&json!({ "interval": ci, "bound_check": check, "attacks": records }));
    Ok(())
}

fn account(a: AccountArgs) -> Result<(), Failure> {
    if let Some(target) = a.epsilon {
        let budget = PrivacyBudget::new(target, a.delta).map_err(accountant_error)?;
        let c = accountant::calibrate_noise(budget, a.q, a.steps).map_err(accountant_error)?;
        print(&json!({ "sigma": c.sigma, "epsilon": c.epsilon, "delta": a.delta, "order": c.order }));
    } else {
        let sigma = a.sigma.expect("clap requires sigma or epsilon");
        let m = MechanismParams { q: a.q, sigma, steps: a.steps };
        let c = m.epsilon(a.delta).map_err(accountant_error)?;
        print(&serde_json::to_value(c).expect("conversion serializes"));
    }
    Ok(())
}

fn bound(a: BoundArgs) -> Result<(), Failure> {
    let r = rr_bound_report(a.epsilon, a.delta, a.trials, a.seed).map_err(config_error)?;
    print(&serde_json::to_value(r).expect("report serializes"));
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let mut variants = Vec::with_capacity(a.config.len());
    for p in &a.config {
        let mut cfg = ExperimentConfig::load(p)?;
        Overrides { seed: a.seed, epsilon: None, delta: a.delta }.apply(&mut cfg);
        variants.push(cfg);
    }
    let epsilons = a.epsilons.unwrap_or_else(|| SWEEP_EPSILONS.to_vec());
    let cells = run_sweep(&variants, &epsilons, true);
    for c in &cells {
        match c {
            Cell::Done(r) => log::info!("{} eps {}: accuracy {:.4}", r.variant(), r.target_epsilon, r.utility.accuracy),
            Cell::Failed { variant, epsilon, error, .. } => log::warn!("{variant} eps {epsilon}: NA ({error})"),
        }
    }
    emit(&cells, &a.output)
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let cells = parse_records(&a.records)?;
    emit(&cells, &a.output)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a),
        Command::Account(a) => account(a),
        Command::BoundCheck(a) => bound(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
