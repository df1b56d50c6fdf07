//! Settlement replay and KPI aggregation: per-scenario cash flows split into
//! day-ahead / mFRR up / mFRR down / imbalance, expected values, tail risk,
//! and mode-comparison reports.
//!
//! Sign convention: costs negative, revenues positive. The day-ahead
//! contribution of a consumption portfolio is negative; an imbalance
//! contribution is the signed cash flow of settling the deviation at the
//! QH's activation price, minus fees.

use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidding::{instructed_position, realized_charging, BidMode, BidSolution, RiskParams};
use crate::envelope::VirtualBattery;
use crate::scenario::{DayAheadPrices, MarketScenario, RegulationState};
use crate::QH_HOURS;

#[derive(Debug, Error)]
pub enum SettlementError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty scenario set")]
    EmptyScenarioSet,
    #[error("scenario {scenario} corrupt at QH {qh}: missing {direction} price")]
    MissingActivationPrice {
        scenario: usize,
        qh: usize,
        direction: &'static str,
    },
    #[error("KPI panels compare different scenario sets: {a} vs {b}")]
    ScenarioSetMismatch { a: String, b: String },
    #[error("KPI panels compare different price days: {a} vs {b}")]
    PriceDayMismatch { a: String, b: String },
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace csv: {0}")]
    Io(#[from] io::Error),
}

/// Cash flows (EUR) and energy volumes (MWh) of one scenario or an
/// expectation over scenarios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfitBreakdown {
    pub da_eur: f64,
    pub mfrr_up_eur: f64,
    pub mfrr_dn_eur: f64,
    pub imbalance_eur: f64,
    pub total_eur: f64,
    pub da_mwh: f64,
    pub mfrr_up_mwh: f64,
    pub mfrr_dn_mwh: f64,
    /// Energy sold back: consumption below the instructed position.
    pub imbalance_up_mwh: f64,
    /// Extra purchases: consumption above the instructed position.
    pub imbalance_dn_mwh: f64,
}

impl ProfitBreakdown {
    fn add_scaled(&mut self, other: &ProfitBreakdown, w: f64) {
        self.da_eur += w * other.da_eur;
        self.mfrr_up_eur += w * other.mfrr_up_eur;
        self.mfrr_dn_eur += w * other.mfrr_dn_eur;
        self.imbalance_eur += w * other.imbalance_eur;
        self.total_eur += w * other.total_eur;
        self.da_mwh += w * other.da_mwh;
        self.mfrr_up_mwh += w * other.mfrr_up_mwh;
        self.mfrr_dn_mwh += w * other.mfrr_dn_mwh;
        self.imbalance_up_mwh += w * other.imbalance_up_mwh;
        self.imbalance_dn_mwh += w * other.imbalance_dn_mwh;
    }
}

/// Settle one scenario of a solved strategy.
///
/// Activated energies follow the cleared bids; the deviation of realized
/// consumption from the instructed position settles at the activation price
/// (day-ahead price in no-regulation QHs) plus `fee` EUR/MWh on its absolute
/// value.
pub fn scenario_profit(
    sol: &BidSolution,
    scenario_idx: usize,
    sc: &MarketScenario,
    da: &DayAheadPrices,
    fee: f64,
) -> Result<ProfitBreakdown, SettlementError> {
    let t_len = sol.horizon_qh;
    if da.eur_mwh.len() != t_len || sc.states.len() != t_len {
        return Err(SettlementError::InvalidInput(format!(
            "horizon mismatch: solution {t_len}, scenario {}, prices {}",
            sc.states.len(),
            da.eur_mwh.len()
        )));
    }
    let c = realized_charging(sol, scenario_idx, sc)
        .map_err(|e| SettlementError::InvalidInput(e.to_string()))?;
    let s = instructed_position(sol, sc).map_err(|e| SettlementError::InvalidInput(e.to_string()))?;

    let mut out = ProfitBreakdown::default();
    for t in 0..t_len {
        let lam_da = da.eur_mwh[t];
        out.da_eur -= QH_HOURS * sol.p_da_mw[t] * lam_da;
        out.da_mwh += QH_HOURS * sol.p_da_mw[t];
        let lam_act = match sc.states[t] {
            RegulationState::Up => {
                let lam_up = sc.price_up_eur_mwh[t].ok_or(
                    SettlementError::MissingActivationPrice {
                        scenario: scenario_idx,
                        qh: t,
                        direction: "up",
                    },
                )?;
                let activated = QH_HOURS * sol.bid_up_mw[t] as f64;
                out.mfrr_up_eur += activated * lam_up;
                out.mfrr_up_mwh += activated;
                lam_up
            }
            RegulationState::Down => {
                let lam_dn = sc.price_dn_eur_mwh[t].ok_or(
                    SettlementError::MissingActivationPrice {
                        scenario: scenario_idx,
                        qh: t,
                        direction: "down",
                    },
                )?;
                let activated = QH_HOURS * sol.bid_dn_mw[t] as f64;
                out.mfrr_dn_eur -= activated * lam_dn;
                out.mfrr_dn_mwh += activated;
                lam_dn
            }
            RegulationState::None => lam_da,
        };
        let imbalance_mwh = QH_HOURS * (c[t] - s[t]);
        out.imbalance_eur -= imbalance_mwh * lam_act + fee * imbalance_mwh.abs();
        if imbalance_mwh >= 0.0 {
            out.imbalance_dn_mwh += imbalance_mwh;
        } else {
            out.imbalance_up_mwh -= imbalance_mwh;
        }
    }
    out.total_eur = out.da_eur + out.mfrr_up_eur + out.mfrr_dn_eur + out.imbalance_eur;
    Ok(out)
}

/// CVaR at confidence `alpha`: the probability-weighted mean of the worst
/// `1 - alpha` tail, with fractional weighting of the marginal scenario.
/// Matches the optimal value of the standard CVaR linearization on the same
/// sample.
pub fn cvar_sorted(profits: &[f64], weights: &[f64], alpha: f64) -> f64 {
    assert_eq!(profits.len(), weights.len());
    assert!(!profits.is_empty(), "cvar of an empty sample");
    let tail_mass = 1.0 - alpha;
    if tail_mass <= 0.0 {
        return profits.iter().cloned().fold(f64::INFINITY, f64::min);
    }
    let mut order: Vec<usize> = (0..profits.len()).collect();
    order.sort_by(|&i, &j| profits[i].total_cmp(&profits[j]).then(i.cmp(&j)));
    let mut remaining = tail_mass;
    let mut acc = 0.0;
    for idx in order {
        let take = weights[idx].min(remaining);
        acc += take * profits[idx];
        remaining -= take;
        if remaining <= 1e-15 {
            break;
        }
    }
    acc / tail_mass
}

/// KPI panel of one solution replayed over a scenario set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiPanel {
    pub mode: BidMode,
    pub price_day: String,
    pub risk: RiskParams,
    pub fee_eur_mwh: f64,
    pub expected: ProfitBreakdown,
    pub cvar_alpha_eur: f64,
    /// `(1-beta) * E + beta * CVaR` recomputed from the replay.
    pub risk_adjusted_objective_eur: f64,
    pub scenario_profits_eur: Vec<f64>,
    pub n_scenarios: usize,
    pub scenario_set_hash: String,
}

/// 64-bit FNV-1a over a canonical byte encoding of the scenario set, used to
/// refuse comparisons across different sets.
pub fn scenario_set_hash(scenarios: &[MarketScenario]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    eat(&(scenarios.len() as u64).to_le_bytes());
    for sc in scenarios {
        eat(&(sc.states.len() as u64).to_le_bytes());
        eat(&sc.weight.to_bits().to_le_bytes());
        for t in 0..sc.states.len() {
            eat(&[sc.states[t].index() as u8]);
            for price in [sc.price_up_eur_mwh[t], sc.price_dn_eur_mwh[t]] {
                match price {
                    Some(p) => {
                        eat(&[1]);
                        eat(&p.to_bits().to_le_bytes());
                    }
                    None => eat(&[0]),
                }
            }
        }
    }
    format!("{hash:016x}")
}

/// Replay a solution over its scenario set and aggregate the KPI panel.
pub fn evaluate(
    sol: &BidSolution,
    scenarios: &[MarketScenario],
    da: &DayAheadPrices,
    risk: &RiskParams,
    fee: f64,
) -> Result<KpiPanel, SettlementError> {
    if scenarios.is_empty() {
        return Err(SettlementError::EmptyScenarioSet);
    }
    if scenarios.len() != sol.n_scenarios() {
        return Err(SettlementError::InvalidInput(format!(
            "solution has recourse for {} scenarios, set has {}",
            sol.n_scenarios(),
            scenarios.len()
        )));
    }
    let breakdowns: Vec<ProfitBreakdown> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, sc)| scenario_profit(sol, i, sc, da, fee))
        .collect::<Result<_, _>>()?;
    let weights: Vec<f64> = scenarios.iter().map(|s| s.weight).collect();
    let mut expected = ProfitBreakdown::default();
    for (pb, &w) in breakdowns.iter().zip(&weights) {
        expected.add_scaled(pb, w);
    }
    let profits: Vec<f64> = breakdowns.iter().map(|b| b.total_eur).collect();
    let cvar = cvar_sorted(&profits, &weights, risk.alpha);
    Ok(KpiPanel {
        mode: sol.mode,
        price_day: da.source.clone(),
        risk: *risk,
        fee_eur_mwh: fee,
        expected,
        cvar_alpha_eur: cvar,
        risk_adjusted_objective_eur: (1.0 - risk.beta) * expected.total_eur + risk.beta * cvar,
        scenario_profits_eur: profits,
        n_scenarios: scenarios.len(),
        scenario_set_hash: scenario_set_hash(scenarios),
    })
}

/// KPI deltas of `b` relative to `a`, and the qualitative flags of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub mode_a: BidMode,
    pub mode_b: BidMode,
    pub expected_total_delta_eur: f64,
    pub cvar_delta_eur: f64,
    pub da_volume_delta_mwh: f64,
    pub mfrr_up_volume_delta_mwh: f64,
    pub mfrr_dn_volume_delta_mwh: f64,
    pub imbalance_volume_delta_mwh: f64,
    /// b's expected total profit is strictly higher than a's.
    pub expected_improves: bool,
    /// b's CVaR is strictly higher (less bad tail) than a's.
    pub cvar_improves: bool,
    /// b buys strictly less day-ahead volume than a.
    pub da_volume_decreases: bool,
    /// b's expected mFRR-down volume is strictly higher than a's.
    pub mfrr_dn_volume_increases: bool,
}

/// Compare two panels computed on the same scenario set and price day.
pub fn compare(a: &KpiPanel, b: &KpiPanel) -> Result<ComparisonReport, SettlementError> {
    if a.scenario_set_hash != b.scenario_set_hash {
        return Err(SettlementError::ScenarioSetMismatch {
            a: a.scenario_set_hash.clone(),
            b: b.scenario_set_hash.clone(),
        });
    }
    if a.price_day != b.price_day {
        return Err(SettlementError::PriceDayMismatch {
            a: a.price_day.clone(),
            b: b.price_day.clone(),
        });
    }
    Ok(ComparisonReport {
        mode_a: a.mode,
        mode_b: b.mode,
        expected_total_delta_eur: b.expected.total_eur - a.expected.total_eur,
        cvar_delta_eur: b.cvar_alpha_eur - a.cvar_alpha_eur,
        da_volume_delta_mwh: b.expected.da_mwh - a.expected.da_mwh,
        mfrr_up_volume_delta_mwh: b.expected.mfrr_up_mwh - a.expected.mfrr_up_mwh,
        mfrr_dn_volume_delta_mwh: b.expected.mfrr_dn_mwh - a.expected.mfrr_dn_mwh,
        imbalance_volume_delta_mwh: (b.expected.imbalance_up_mwh + b.expected.imbalance_dn_mwh)
            - (a.expected.imbalance_up_mwh + a.expected.imbalance_dn_mwh),
        expected_improves: b.expected.total_eur > a.expected.total_eur,
        cvar_improves: b.cvar_alpha_eur > a.cvar_alpha_eur,
        da_volume_decreases: b.expected.da_mwh < a.expected.da_mwh,
        mfrr_dn_volume_increases: b.expected.mfrr_dn_mwh > a.expected.mfrr_dn_mwh,
    })
}

#[derive(Debug, Serialize)]
struct TraceRow {
    qh: usize,
    lambda_da: f64,
    state: RegulationState,
    lambda_up: Option<f64>,
    lambda_dn: Option<f64>,
    p_da_mw: f64,
    c_base_mw: f64,
    bid_up_mw: u32,
    bid_dn_mw: u32,
    charging_mw: f64,
    cumulative_mwh: f64,
    e_min_mwh: f64,
    e_max_mwh: f64,
    p_max_mw: f64,
    imbalance_mwh: f64,
}

/// Per-QH trace of a solution replayed on one scenario path (charging vs
/// envelopes, activations, imbalance, prices); data for re-plotting.
pub fn write_trace_csv<P: AsRef<Path>>(
    path: P,
    sol: &BidSolution,
    vb: &VirtualBattery,
    path_scenario: &MarketScenario,
    path_recourse: &[f64],
    da: &DayAheadPrices,
) -> Result<(), SettlementError> {
    let t_len = sol.horizon_qh;
    if path_recourse.len() != t_len {
        return Err(SettlementError::InvalidInput(format!(
            "trace recourse length {} != horizon {}",
            path_recourse.len(),
            t_len
        )));
    }
    let mut replay = sol.clone();
    replay.recourse_mw = vec![path_recourse.to_vec()];
    let c = realized_charging(&replay, 0, path_scenario)
        .map_err(|e| SettlementError::InvalidInput(e.to_string()))?;
    let s = instructed_position(&replay, path_scenario)
        .map_err(|e| SettlementError::InvalidInput(e.to_string()))?;

    let mut w = csv::Writer::from_path(path)?;
    let mut cumulative = 0.0;
    for t in 0..t_len {
        cumulative += c[t] * QH_HOURS;
        w.serialize(TraceRow {
            qh: t,
            lambda_da: da.eur_mwh[t],
            state: path_scenario.states[t],
            lambda_up: path_scenario.price_up_eur_mwh[t],
            lambda_dn: path_scenario.price_dn_eur_mwh[t],
            p_da_mw: sol.p_da_mw[t],
            c_base_mw: sol.c_base_mw[t],
            bid_up_mw: sol.bid_up_mw[t],
            bid_dn_mw: sol.bid_dn_mw[t],
            charging_mw: c[t],
            cumulative_mwh: cumulative,
            e_min_mwh: vb.e_min_mwh[t + 1],
            e_max_mwh: vb.e_max_mwh[t + 1],
            p_max_mw: vb.p_max_mw[t],
            imbalance_mwh: QH_HOURS * (c[t] - s[t]),
        })?;
    }
    w.flush()?;
    Ok(())
}
