//! `flexbid`: end-to-end and per-stage commands for the EV-aggregator mFRR
//! planning toolkit. `run` executes the whole pipeline from a config file;
//! the per-stage subcommands compose into the same artifacts.
//!
//! Exit codes: 0 success, 1 domain/stage failure, 2 usage error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flexbid_core::bidding::{
    solve_cooptimized, solve_independent, BidSolution, RiskParams, SolveOptions,
};
use flexbid_core::config::RunConfig;
use flexbid_core::envelope::{build_envelopes, read_envelopes_csv, write_envelopes_csv};
use flexbid_core::fleet::{sample_fleet, read_sessions_csv, write_sessions_csv};
use flexbid_core::scenario::{
    calibrate, read_day_ahead_csv, read_history_csv, read_scenarios_csv, sample_scenarios,
    write_scenarios_csv, DayAheadPrices, MarketParams,
};
use flexbid_core::settlement::{compare, evaluate, KpiPanel};
use flexbid_core::{defaults, pipeline, QH_PER_DAY};

#[derive(Parser)]
#[command(
    name = "flexbid",
    about = "EV-aggregator planning for the Nordic 15-minute mFRR energy activation market",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a config file.
    Run(RunArgs),
    /// Sample a synthetic charging cohort to CSV.
    FleetSample(FleetSampleArgs),
    /// Aggregate sessions into virtual-battery envelopes.
    Envelopes(EnvelopesArgs),
    /// Calibrate chain and premium parameters from observed history.
    ScenariosCalibrate(CalibrateArgs),
    /// Sample market scenarios from calibrated or bundled parameters.
    ScenariosSample(SampleArgs),
    /// Solve one bidding mode against a scenario set.
    Solve(SolveArgs),
    /// Replay a solution into a KPI panel.
    Evaluate(EvaluateArgs),
    /// Compare two KPI panels (baseline vs candidate).
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// independent | cooptimized | both
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n_scenarios: Option<usize>,
    /// Output directory; FLEXBID_OUT_DIR overrides the config too.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FleetSampleArgs {
    /// Optional config file for the fleet parameters (defaults otherwise).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_vehicles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnvelopesArgs {
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long, default_value_t = QH_PER_DAY)]
    horizon_qh: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// History CSV: timestamp_iso8601,lambda_da,lambda_up,lambda_dn.
    #[arg(long)]
    history: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    trim_quantile: f64,
    /// Output JSON with chain and premium parameters.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PriceSource {
    /// Day-ahead price CSV: timestamp,lambda_da (hourly or 15-minute rows).
    #[arg(long)]
    da_prices: Option<PathBuf>,
    /// Bundled synthetic day: duck_curve | double_peak.
    #[arg(long)]
    price_day: Option<String>,
}

impl PriceSource {
    fn resolve(&self) -> Result<DayAheadPrices> {
        match (&self.da_prices, &self.price_day) {
            (Some(path), _) => {
                read_day_ahead_csv(path, &format!("observed:{}", path.display()))
                    .with_context(|| format!("reading day-ahead prices {}", path.display()))
            }
            (None, Some(day)) => defaults::synthetic_prices(day)
                .with_context(|| format!("unknown synthetic price day '{day}'")),
            (None, None) => bail!("one of --da-prices or --price-day is required"),
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Calibrated parameter JSON; bundled synthetic defaults when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    prices: PriceSource,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    envelopes: PathBuf,
    #[arg(long)]
    scenarios: PathBuf,
    #[command(flatten)]
    prices: PriceSource,
    /// independent | cooptimized
    #[arg(long)]
    mode: String,
    #[arg(long, default_value_t = 0.4)]
    beta: f64,
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    fee: f64,
    #[arg(long, default_value_t = SolveOptions::default().max_nodes)]
    max_nodes: usize,
    #[arg(long, default_value_t = SolveOptions::default().gap_tol)]
    gap_tol: f64,
    /// Seed the co-optimised search with a known-feasible solution JSON.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    scenarios: PathBuf,
    #[command(flatten)]
    prices: PriceSource,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline KPI panel (e.g. independent mode).
    #[arg(long)]
    baseline: PathBuf,
    /// Candidate KPI panel (e.g. co-optimised mode).
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = RunConfig::from_file(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.set("seed", &seed.to_string())?;
    }
    if let Some(beta) = args.beta {
        config.set("beta", &beta.to_string())?;
    }
    if let Some(alpha) = args.alpha {
        config.set("alpha", &alpha.to_string())?;
    }
    if let Some(mode) = &args.mode {
        config.set("mode", mode)?;
    }
    if let Some(n) = args.n_scenarios {
        config.set("n_scenarios", &n.to_string())?;
    }
    if let Some(dir) = &args.out_dir {
        config.out_dir = dir.clone();
    }
    if let Ok(dir) = std::env::var("FLEXBID_OUT_DIR") {
        config.out_dir = PathBuf::from(dir);
    }
    let output = pipeline::run_pipeline(&config)?;
    eprintln!(
        "pipeline ok: {} artifacts in {}",
        output.artifacts.len(),
        output.out_dir.display()
    );
    if let Some(report) = &output.compare {
        eprintln!(
            "co-optimised vs independent: expected {:+.2} EUR, CVaR {:+.2} EUR, \
             DA volume {:+.3} MWh, mFRR-down volume {:+.3} MWh",
            report.expected_total_delta_eur,
            report.cvar_delta_eur,
            report.da_volume_delta_mwh,
            report.mfrr_dn_volume_delta_mwh
        );
    }
    Ok(())
}

fn cmd_fleet_sample(args: FleetSampleArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => RunConfig::from_file(path)?.fleet,
        None => Default::default(),
    };
    if let Some(n) = args.n_vehicles {
        spec.n_vehicles = n;
    }
    if let Some(seed) = args.seed {
        spec.rng_seed = seed;
    }
    let sessions = sample_fleet(&spec)?;
    write_sessions_csv(&args.out, &sessions)?;
    eprintln!("wrote {} sessions to {}", sessions.len(), args.out.display());
    Ok(())
}

fn cmd_envelopes(args: EnvelopesArgs) -> Result<()> {
    let sessions = read_sessions_csv(&args.sessions)?;
    let vb = build_envelopes(&sessions, args.horizon_qh)?;
    write_envelopes_csv(&args.out, &vb)?;
    eprintln!(
        "aggregated {} sessions: total need {:.3} MWh over {} QHs",
        sessions.len(),
        vb.total_energy_mwh(),
        vb.horizon_qh
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let history = read_history_csv(&args.history)?;
    let cal = calibrate(&history, args.trim_quantile)?;
    let diag = cal.diagnostics.clone();
    write_json(&args.out, &cal.into_params())?;
    eprintln!(
        "calibrated on {} records ({} up / {} down premium observations, \
         {} sparse cells pooled over time of day)",
        diag.n_records, diag.n_up_observations, diag.n_down_observations, diag.n_fallback_cells
    );
    if diag.n_both_direction_qhs > 0 {
        eprintln!(
            "note: {} QHs had both directions activated; the larger premium \
             decided the state",
            diag.n_both_direction_qhs
        );
    }
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let params: MarketParams = match &args.params {
        Some(path) => read_json(path)?,
        None => {
            let (chain, premium) = defaults::default_market_params();
            MarketParams { chain, premium }
        }
    };
    params.validate()?;
    let da = args.prices.resolve()?;
    let scenarios = sample_scenarios(&params.chain, &params.premium, &da, args.n, args.seed)?;
    write_scenarios_csv(&args.out, &scenarios)?;
    eprintln!(
        "sampled {} scenarios over {} QHs to {}",
        scenarios.len(),
        da.eur_mwh.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let vb = read_envelopes_csv(&args.envelopes)?;
    let scenarios = read_scenarios_csv(&args.scenarios)?;
    let da = args.prices.resolve()?;
    let risk = RiskParams {
        beta: args.beta,
        alpha: args.alpha,
    };
    let opts = SolveOptions {
        max_nodes: args.max_nodes,
        gap_tol: args.gap_tol,
        ..SolveOptions::default()
    };
    let sol = match args.mode.as_str() {
        "independent" => solve_independent(&vb, &scenarios, &da, &risk, args.fee, &opts)?,
        "cooptimized" => {
            let warm: Option<BidSolution> = match &args.warm_start {
                Some(path) => Some(read_json(path)?),
                None => None,
            };
            solve_cooptimized(
                &vb,
                &scenarios,
                &da,
                &risk,
                args.fee,
                &opts,
                warm.map(|s| s.first_stage()).as_ref(),
            )?
        }
        other => bail!("unknown mode '{other}' (independent | cooptimized)"),
    };
    eprintln!(
        "{} objective {:.2} EUR (gap {})",
        sol.mode,
        sol.objective_value,
        sol.solver
            .gap
            .map(|g| format!("{g:.2e}"))
            .unwrap_or_else(|| "uncertified".into())
    );
    write_json(&args.out, &sol)?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let sol: BidSolution = read_json(&args.solution)?;
    let scenarios = read_scenarios_csv(&args.scenarios)?;
    let da = args.prices.resolve()?;
    let panel = evaluate(&sol, &scenarios, &da, &sol.risk, sol.fee_eur_mwh)?;
    eprintln!(
        "{}: expected {:.2} EUR, CVaR_{} {:.2} EUR",
        panel.mode, panel.expected.total_eur, panel.risk.alpha, panel.cvar_alpha_eur
    );
    write_json(&args.out, &panel)?;
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let a: KpiPanel = read_json(&args.baseline)?;
    let b: KpiPanel = read_json(&args.candidate)?;
    let report = compare(&a, &b)?;
    eprintln!(
        "{} -> {}: expected {:+.2} EUR, CVaR {:+.2} EUR",
        report.mode_a, report.mode_b, report.expected_total_delta_eur, report.cvar_delta_eur
    );
    write_json(&args.out, &report)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::FleetSample(args) => cmd_fleet_sample(args),
        Command::Envelopes(args) => cmd_envelopes(args),
        Command::ScenariosCalibrate(args) => cmd_calibrate(args),
        Command::ScenariosSample(args) => cmd_sample(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
