//! End-to-end run: fleet -> envelopes -> scenarios -> solve(s) -> KPIs ->
//! comparison, with every intermediate written as a file artifact and a
//! machine-readable MANIFEST. Fully reproducible under a fixed seed; no
//! timestamps enter any artifact.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::bidding::{
    self, check_realized_feasible, optimal_recourse_for, BidMode, BidSolution,
};
use crate::config::{RunConfig, RunMode};
use crate::defaults;
use crate::envelope::{build_envelopes, write_envelopes_csv, VirtualBattery};
use crate::fleet::{sample_fleet, write_sessions_csv};
use crate::scenario::{
    calibrate, most_likely_path, read_day_ahead_csv, read_history_csv, sample_scenarios,
    write_scenarios_csv, DayAheadPrices, MarketScenario, PremiumModelParams, StateChainParams,
};
use crate::settlement::{self, ComparisonReport, KpiPanel};

#[derive(Debug, Error)]
#[error("stage '{stage}' failed: {message}")]
pub struct PipelineError {
    pub stage: String,
    pub message: String,
}

fn stage_err<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> PipelineError + '_ {
    move |e| PipelineError {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    config_hash: String,
    status: String,
    failed_stage: Option<String>,
    artifacts: Vec<String>,
}

/// Everything a finished (or partially finished) run produced.
#[derive(Debug)]
pub struct PipelineOutput {
    pub out_dir: PathBuf,
    pub artifacts: Vec<String>,
    pub solutions: Vec<BidSolution>,
    pub kpis: Vec<KpiPanel>,
    pub compare: Option<ComparisonReport>,
}

fn write_json<T: Serialize, P: AsRef<Path>>(path: P, value: &T) -> Result<(), String> {
    let file = File::create(path.as_ref()).map_err(|e| e.to_string())?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| e.to_string())?;
    w.write_all(b"\n").map_err(|e| e.to_string())?;
    Ok(())
}

fn write_manifest(
    out_dir: &Path,
    config: &RunConfig,
    artifacts: &[String],
    failed_stage: Option<&str>,
) {
    let manifest = Manifest {
        config_hash: config.hash(),
        status: if failed_stage.is_none() { "ok" } else { "failed" }.into(),
        failed_stage: failed_stage.map(str::to_string),
        artifacts: artifacts.to_vec(),
    };
    // Best effort: a manifest write failure must not mask the stage error.
    let _ = write_json(out_dir.join("MANIFEST.json"), &manifest);
}

/// Resolve the market parameter set: calibrated from history when given,
/// otherwise the bundled synthetic defaults.
pub fn resolve_market_params(
    config: &RunConfig,
) -> Result<(StateChainParams, PremiumModelParams, String), PipelineError> {
    match &config.history_csv {
        Some(path) => {
            let history = read_history_csv(path).map_err(stage_err("scenarios"))?;
            let cal = calibrate(&history, config.trim_quantile).map_err(stage_err("scenarios"))?;
            Ok((cal.chain, cal.premium, format!("calibrated:{}", path.display())))
        }
        None => {
            let (chain, premium) = defaults::default_market_params();
            Ok((chain, premium, "synthetic_default_params".into()))
        }
    }
    .map(|(chain, premium, source)| {
        if config.chain_override.as_deref() == Some("all_none") {
            (defaults::all_none_chain(), premium, "all_none_override".into())
        } else {
            (chain, premium, source)
        }
    })
}

/// Resolve the day-ahead price series: observed CSV when given, otherwise the
/// bundled synthetic day.
pub fn resolve_day_ahead(config: &RunConfig) -> Result<DayAheadPrices, PipelineError> {
    match &config.da_prices_csv {
        Some(path) => read_day_ahead_csv(path, &format!("observed:{}", path.display()))
            .map_err(stage_err("scenarios")),
        None => defaults::synthetic_prices(&config.price_day).ok_or_else(|| PipelineError {
            stage: "scenarios".into(),
            message: format!("unknown synthetic price day '{}'", config.price_day),
        }),
    }
}

/// Run the whole pipeline. On a stage failure, artifacts produced so far stay
/// on disk and the MANIFEST records the failure point.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    config.validate().map_err(stage_err("config"))?;
    std::fs::create_dir_all(&config.out_dir).map_err(stage_err("config"))?;
    let out = config.out_dir.clone();
    let mut artifacts: Vec<String> = Vec::new();

    let fail = |artifacts: &[String], stage: &str, message: String| -> PipelineError {
        write_manifest(&out, config, artifacts, Some(stage));
        PipelineError {
            stage: stage.into(),
            message,
        }
    };

    // Fleet.
    let sessions = match sample_fleet(&config.fleet) {
        Ok(s) => s,
        Err(e) => return Err(fail(&artifacts, "fleet", e.to_string())),
    };
    if let Err(e) = write_sessions_csv(out.join("sessions.csv"), &sessions) {
        return Err(fail(&artifacts, "fleet", e.to_string()));
    }
    artifacts.push("sessions.csv".into());

    // Envelopes.
    let vb = match build_envelopes(&sessions, crate::QH_PER_DAY) {
        Ok(vb) => vb,
        Err(e) => return Err(fail(&artifacts, "envelopes", e.to_string())),
    };
    if let Err(e) = write_envelopes_csv(out.join("envelopes.csv"), &vb) {
        return Err(fail(&artifacts, "envelopes", e.to_string()));
    }
    artifacts.push("envelopes.csv".into());

    // Scenarios.
    let (chain, premium, _params_source) = match resolve_market_params(config) {
        Ok(v) => v,
        Err(e) => {
            return Err(fail(&artifacts, &e.stage.clone(), e.message));
        }
    };
    let da = match resolve_day_ahead(config) {
        Ok(v) => v,
        Err(e) => return Err(fail(&artifacts, &e.stage.clone(), e.message)),
    };
    let scenarios =
        match sample_scenarios(&chain, &premium, &da, config.n_scenarios, config.seed) {
            Ok(s) => s,
            Err(e) => return Err(fail(&artifacts, "scenarios", e.to_string())),
        };
    if let Err(e) = write_scenarios_csv(out.join("scenarios.csv"), &scenarios) {
        return Err(fail(&artifacts, "scenarios", e.to_string()));
    }
    artifacts.push("scenarios.csv".into());

    // Solves, KPIs, traces.
    let mut solutions: Vec<BidSolution> = Vec::new();
    let mut kpis: Vec<KpiPanel> = Vec::new();
    let ml_path = match most_likely_path(&chain, &premium, &da) {
        Ok(p) => p,
        Err(e) => return Err(fail(&artifacts, "scenarios", e.to_string())),
    };

    let run_one = |mode: BidMode,
                       warm: Option<&BidSolution>,
                       artifacts: &mut Vec<String>,
                       solutions: &mut Vec<BidSolution>,
                       kpis: &mut Vec<KpiPanel>|
     -> Result<(), PipelineError> {
        let stage = format!("solve_{mode}");
        let sol = match mode {
            BidMode::Independent => bidding::solve_independent(
                &vb,
                &scenarios,
                &da,
                &config.risk,
                config.fee_eur_mwh,
                &config.solve,
            ),
            BidMode::Cooptimized => bidding::solve_cooptimized(
                &vb,
                &scenarios,
                &da,
                &config.risk,
                config.fee_eur_mwh,
                &config.solve,
                warm.map(|s| s.first_stage()).as_ref(),
            ),
        }
        .map_err(|e| fail(artifacts, &stage, e.to_string()))?;
        check_realized_feasible(&sol, &vb, &scenarios)
            .map_err(|e| fail(artifacts, &stage, e.to_string()))?;
        write_json(out.join(format!("solution_{mode}.json")), &sol)
            .map_err(|e| fail(artifacts, &stage, e))?;
        artifacts.push(format!("solution_{mode}.json"));

        let stage = format!("evaluate_{mode}");
        let kpi = settlement::evaluate(&sol, &scenarios, &da, &config.risk, config.fee_eur_mwh)
            .map_err(|e| fail(artifacts, &stage, e.to_string()))?;
        write_json(out.join(format!("kpi_{mode}.json")), &kpi)
            .map_err(|e| fail(artifacts, &stage, e))?;
        artifacts.push(format!("kpi_{mode}.json"));

        let trace_recourse = optimal_recourse_for(
            &sol.first_stage(),
            &vb,
            &ml_path,
            &da,
            &config.risk,
            config.fee_eur_mwh,
        )
        .map_err(|e| fail(artifacts, &stage, e.to_string()))?;
        settlement::write_trace_csv(
            out.join(format!("trace_{mode}.csv")),
            &sol,
            &vb,
            &ml_path,
            &trace_recourse,
            &da,
        )
        .map_err(|e| fail(artifacts, &stage, e.to_string()))?;
        artifacts.push(format!("trace_{mode}.csv"));

        solutions.push(sol);
        kpis.push(kpi);
        Ok(())
    };

    if config.mode.runs_independent() {
        run_one(
            BidMode::Independent,
            None,
            &mut artifacts,
            &mut solutions,
            &mut kpis,
        )?;
    }
    if config.mode.runs_cooptimized() {
        let warm = solutions
            .iter()
            .find(|s| s.mode == BidMode::Independent)
            .cloned();
        run_one(
            BidMode::Cooptimized,
            warm.as_ref(),
            &mut artifacts,
            &mut solutions,
            &mut kpis,
        )?;
    }

    // Comparison (independent as baseline, co-optimised as candidate).
    let mut comparison = None;
    if config.mode == RunMode::Both {
        let ind = kpis
            .iter()
            .find(|k| k.mode == BidMode::Independent)
            .expect("independent KPI present in both mode");
        let coopt = kpis
            .iter()
            .find(|k| k.mode == BidMode::Cooptimized)
            .expect("co-optimised KPI present in both mode");
        let report = settlement::compare(ind, coopt)
            .map_err(|e| fail(&artifacts, "compare", e.to_string()))?;
        write_json(out.join("compare.json"), &report)
            .map_err(|e| fail(&artifacts, "compare", e))?;
        artifacts.push("compare.json".into());
        comparison = Some(report);
    }

    write_manifest(&out, config, &artifacts, None);
    artifacts.push("MANIFEST.json".into());
    Ok(PipelineOutput {
        out_dir: out,
        artifacts,
        solutions,
        kpis,
        compare: comparison,
    })
}

/// Convenience wrapper for tests and bindings: build the inputs a solve needs
/// from a config without touching the filesystem.
pub fn prepared_inputs(
    config: &RunConfig,
) -> Result<(VirtualBattery, Vec<MarketScenario>, DayAheadPrices), PipelineError> {
    let sessions = sample_fleet(&config.fleet).map_err(stage_err("fleet"))?;
    let vb = build_envelopes(&sessions, crate::QH_PER_DAY).map_err(stage_err("envelopes"))?;
    let (chain, premium, _) = resolve_market_params(config)?;
    let da = resolve_day_ahead(config)?;
    let scenarios = sample_scenarios(&chain, &premium, &da, config.n_scenarios, config.seed)
        .map_err(stage_err("scenarios"))?;
    Ok((vb, scenarios, da))
}
