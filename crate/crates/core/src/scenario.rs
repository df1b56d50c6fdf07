//! Joint scenarios of the system regulation state and mFRR price premia at
//! 15-minute resolution.
//!
//! The regulation state follows a non-time-homogeneous semi-Markov chain:
//! transition rows are indexed by (QH of day, current state, sojourn-duration
//! bin), so the exit probability can depend on how long the system has been
//! in its current state. Premia (activation price minus day-ahead price, sign
//! so that both directions are positive) follow a latent AR(1) on the log
//! scale per direction, with bootstrapped residuals; the latent process
//! evolves every QH and is observed only in QHs whose state matches, which
//! avoids re-initialization artifacts between activations.

use std::io;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::QH_PER_DAY;

/// System regulation state of one quarter-hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegulationState {
    Up,
    Down,
    None,
}

pub const STATES: [RegulationState; 3] = [
    RegulationState::Up,
    RegulationState::Down,
    RegulationState::None,
];

impl RegulationState {
    pub fn index(self) -> usize {
        match self {
            RegulationState::Up => 0,
            RegulationState::Down => 1,
            RegulationState::None => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        STATES[i]
    }
}

/// Sojourn-length bins in QHs: 1, 2, 3, >= 4.
pub const DURATION_BINS: usize = 4;

/// Map a sojourn length (QHs already spent in the state, >= 1) to its bin.
pub fn duration_bin(sojourn_qh: usize) -> usize {
    sojourn_qh.clamp(1, DURATION_BINS) - 1
}

/// Transition structure of the regulation-state chain.
///
/// `transition[qh_of_day][from][bin]` is a probability row over the next
/// state, `[up, down, none]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateChainParams {
    pub transition: Vec<[[[f64; 3]; DURATION_BINS]; 3]>,
    pub initial_distribution: [f64; 3],
}

/// One direction of the premium model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionPremiumParams {
    /// Long-run mean of the log premium.
    pub mu_log: f64,
    /// Mean-reversion coefficient, in (0, 1).
    pub phi: f64,
    /// Empirical residual pool (trimmed), sampled uniformly with replacement.
    pub residual_pool: Vec<f64>,
    /// Latent value at the first QH of the horizon.
    pub init_log: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumModelParams {
    pub up: DirectionPremiumParams,
    pub down: DirectionPremiumParams,
}

/// Chain and premium parameters together: the unit that calibration
/// produces and scenario sampling consumes (JSON-serializable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub chain: StateChainParams,
    pub premium: PremiumModelParams,
}

impl MarketParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.chain.validate()?;
        self.premium.validate()
    }
}

/// Day-ahead prices over the horizon, EUR/MWh per QH.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayAheadPrices {
    pub eur_mwh: Vec<f64>,
    /// Which QH of day the horizon starts at (13:00 start = 52); aligns the
    /// horizon with the chain's QH-of-day index.
    pub start_qh_of_day: usize,
    /// Where the series came from (observed day or synthetic label).
    pub source: String,
}

/// One sampled market outcome over the horizon.
///
/// Activation prices are defined only in QHs whose state matches the
/// direction; by construction `price_up >= lambda_da` and
/// `price_dn <= lambda_da` wherever defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketScenario {
    pub states: Vec<RegulationState>,
    pub price_up_eur_mwh: Vec<Option<f64>>,
    pub price_dn_eur_mwh: Vec<Option<f64>>,
    pub weight: f64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("history csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("history csv: {0}")]
    Io(#[from] io::Error),
}

impl StateChainParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.transition.len() != QH_PER_DAY {
            return Err(ScenarioError::InvalidParams(format!(
                "transition table must have {QH_PER_DAY} QH rows, got {}",
                self.transition.len()
            )));
        }
        let check_row = |row: &[f64; 3], what: &str| {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(ScenarioError::InvalidParams(format!(
                    "{what} is not a probability row: {row:?}"
                )));
            }
            Ok(())
        };
        for (qh, per_state) in self.transition.iter().enumerate() {
            for (s, per_bin) in per_state.iter().enumerate() {
                for (b, row) in per_bin.iter().enumerate() {
                    check_row(row, &format!("transition[{qh}][{s}][{b}]"))?;
                }
            }
        }
        check_row(&self.initial_distribution, "initial distribution")
    }

    pub fn row(&self, qh_of_day: usize, state: RegulationState, sojourn_qh: usize) -> &[f64; 3] {
        &self.transition[qh_of_day % QH_PER_DAY][state.index()][duration_bin(sojourn_qh)]
    }
}

impl DirectionPremiumParams {
    fn validate(&self, what: &str) -> Result<(), ScenarioError> {
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(ScenarioError::InvalidParams(format!(
                "{what}: phi must be in (0,1), got {}",
                self.phi
            )));
        }
        if self.residual_pool.is_empty() {
            return Err(ScenarioError::InvalidParams(format!(
                "{what}: residual pool is empty"
            )));
        }
        Ok(())
    }
}

impl PremiumModelParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.up.validate("up premium")?;
        self.down.validate("down premium")
    }
}

impl MarketScenario {
    /// Price-ordering and definedness invariants against a day-ahead series.
    pub fn check_invariants(&self, da: &DayAheadPrices) -> Result<(), ScenarioError> {
        let t_len = self.states.len();
        if da.eur_mwh.len() != t_len
            || self.price_up_eur_mwh.len() != t_len
            || self.price_dn_eur_mwh.len() != t_len
        {
            return Err(ScenarioError::InvalidParams(
                "scenario / price length mismatch".into(),
            ));
        }
        for t in 0..t_len {
            let up_defined = self.price_up_eur_mwh[t].is_some();
            let dn_defined = self.price_dn_eur_mwh[t].is_some();
            match self.states[t] {
                RegulationState::Up if !up_defined || dn_defined => {
                    return Err(ScenarioError::InvalidParams(format!(
                        "QH {t}: up state must define exactly the up price"
                    )));
                }
                RegulationState::Down if !dn_defined || up_defined => {
                    return Err(ScenarioError::InvalidParams(format!(
                        "QH {t}: down state must define exactly the down price"
                    )));
                }
                RegulationState::None if up_defined || dn_defined => {
                    return Err(ScenarioError::InvalidParams(format!(
                        "QH {t}: no-regulation QH must define no activation price"
                    )));
                }
                _ => {}
            }
            if let Some(p) = self.price_up_eur_mwh[t] {
                if p < da.eur_mwh[t] {
                    return Err(ScenarioError::InvalidParams(format!(
                        "QH {t}: up price {p} below day-ahead {}",
                        da.eur_mwh[t]
                    )));
                }
            }
            if let Some(p) = self.price_dn_eur_mwh[t] {
                if p > da.eur_mwh[t] {
                    return Err(ScenarioError::InvalidParams(format!(
                        "QH {t}: down price {p} above day-ahead {}",
                        da.eur_mwh[t]
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// One 15-minute historical record. The regulation state is inferred from
/// which activation prices are present.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub qh_of_day: usize,
    pub lambda_da: f64,
    pub lambda_up: Option<f64>,
    pub lambda_dn: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CalibrationDiagnostics {
    pub n_records: usize,
    pub n_up_observations: usize,
    pub n_down_observations: usize,
    /// QHs where both directions were present; the larger absolute premium
    /// decided the state. Flagged in reports because the tie rule is a
    /// modeling choice.
    pub n_both_direction_qhs: usize,
    /// Transition cells with zero observations that fell back to the
    /// time-of-day-aggregated row.
    pub n_fallback_cells: usize,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub chain: StateChainParams,
    /// Transition rows pooled over the time of day (Laplace-smoothed); also
    /// the fallback used for cells without observations.
    pub aggregated_transition: [[[f64; 3]; DURATION_BINS]; 3],
    pub premium: PremiumModelParams,
    pub diagnostics: CalibrationDiagnostics,
}

impl Calibration {
    pub fn into_params(self) -> MarketParams {
        MarketParams {
            chain: self.chain,
            premium: self.premium,
        }
    }
}

fn infer_state(rec: &HistoryRecord, both_count: &mut usize) -> RegulationState {
    match (rec.lambda_up, rec.lambda_dn) {
        (Some(up), Some(dn)) => {
            *both_count += 1;
            let up_prem = (up - rec.lambda_da).abs();
            let dn_prem = (rec.lambda_da - dn).abs();
            if up_prem >= dn_prem {
                RegulationState::Up
            } else {
                RegulationState::Down
            }
        }
        (Some(_), None) => RegulationState::Up,
        (None, Some(_)) => RegulationState::Down,
        (None, None) => RegulationState::None,
    }
}

/// Drop the top `trim_quantile` fraction of a sample (by value). Returns the
/// retained values in the original order.
fn trim_upper(values: &[f64], trim_quantile: f64) -> Vec<f64> {
    let n = values.len();
    let k_drop = (n as f64 * trim_quantile).floor() as usize;
    if k_drop == 0 {
        return values.to_vec();
    }
    // Drop exactly the k largest, ties resolved by position for determinism.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap().then(i.cmp(&j)));
    let mut keep = vec![true; n];
    for &idx in order.iter().take(k_drop) {
        keep[idx] = false;
    }
    values
        .iter()
        .zip(keep)
        .filter_map(|(&v, k)| k.then_some(v))
        .collect()
}

/// Least-squares AR(1) fit on consecutive pairs of `series`:
/// y' = intercept + phi * y. Returns (mu, phi, residuals).
fn fit_ar1(series: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    if n < 3 || var < 1e-12 {
        // Degenerate (constant) series: mean reversion is unidentifiable.
        return (mean, 0.5, vec![0.0; n.max(1)]);
    }
    let x = &series[..n - 1];
    let y = &series[1..];
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let mut phi = if sxx > 1e-12 { sxy / sxx } else { 0.5 };
    // The premium model requires mean reversion; clamp into (0, 1).
    phi = phi.clamp(1e-3, 0.999);
    let intercept = my - phi * mx;
    let mu = intercept / (1.0 - phi);
    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| b - (intercept + phi * a))
        .collect();
    (mu, phi, residuals)
}

fn calibrate_direction(
    log_premia: &[f64],
    trim_quantile: f64,
    what: &str,
) -> Result<DirectionPremiumParams, ScenarioError> {
    if log_premia.len() < 10 {
        return Err(ScenarioError::Calibration(format!(
            "need at least 10 {what} premium observations, got {}",
            log_premia.len()
        )));
    }
    let trimmed = trim_upper(log_premia, trim_quantile);
    let (mu, phi, residuals) = fit_ar1(&trimmed);
    let mut pool = trim_upper(&residuals, trim_quantile);
    if pool.is_empty() {
        pool = vec![0.0];
    }
    Ok(DirectionPremiumParams {
        mu_log: mu,
        phi,
        residual_pool: pool,
        init_log: mu,
    })
}

/// Estimate chain and premium parameters from a contiguous 15-minute history.
///
/// Transition rows are relative frequencies with Laplace smoothing per
/// (QH-of-day, state, duration-bin) cell; cells with no observations fall
/// back to the row aggregated over the time of day. Premium series are the
/// log premia on matching-state QHs with the top `trim_quantile` removed;
/// the AR(1) residual pool is trimmed with the same rule.
pub fn calibrate(
    history: &[HistoryRecord],
    trim_quantile: f64,
) -> Result<Calibration, ScenarioError> {
    if history.len() < QH_PER_DAY {
        return Err(ScenarioError::Calibration(format!(
            "history must cover at least one full day ({QH_PER_DAY} QHs), got {}",
            history.len()
        )));
    }
    if !(0.0..=0.1).contains(&trim_quantile) {
        return Err(ScenarioError::Calibration(format!(
            "trim quantile must be in [0, 0.1], got {trim_quantile}"
        )));
    }

    let mut diagnostics = CalibrationDiagnostics {
        n_records: history.len(),
        ..Default::default()
    };
    let states: Vec<RegulationState> = history
        .iter()
        .map(|r| infer_state(r, &mut diagnostics.n_both_direction_qhs))
        .collect();

    // Transition counts per (qh, from, bin) and aggregated over qh.
    let mut counts = vec![[[[0.0f64; 3]; DURATION_BINS]; 3]; QH_PER_DAY];
    let mut agg = [[[0.0f64; 3]; DURATION_BINS]; 3];
    let mut init_counts = [0.0f64; 3];
    let mut sojourn = 1usize;
    init_counts[states[0].index()] += 1.0;
    for t in 0..history.len() - 1 {
        let from = states[t].index();
        let to = states[t + 1].index();
        let bin = duration_bin(sojourn);
        counts[history[t].qh_of_day % QH_PER_DAY][from][bin][to] += 1.0;
        agg[from][bin][to] += 1.0;
        sojourn = if states[t + 1] == states[t] { sojourn + 1 } else { 1 };
    }

    let laplace_row = |c: &[f64; 3]| {
        let tot: f64 = c.iter().sum();
        [
            (c[0] + 1.0) / (tot + 3.0),
            (c[1] + 1.0) / (tot + 3.0),
            (c[2] + 1.0) / (tot + 3.0),
        ]
    };
    let mut transition = vec![[[[0.0f64; 3]; DURATION_BINS]; 3]; QH_PER_DAY];
    let mut aggregated_transition = [[[0.0f64; 3]; DURATION_BINS]; 3];
    for s in 0..3 {
        for b in 0..DURATION_BINS {
            aggregated_transition[s][b] = laplace_row(&agg[s][b]);
        }
    }
    for qh in 0..QH_PER_DAY {
        for s in 0..3 {
            for b in 0..DURATION_BINS {
                let cell = &counts[qh][s][b];
                if cell.iter().sum::<f64>() > 0.0 {
                    transition[qh][s][b] = laplace_row(cell);
                } else {
                    diagnostics.n_fallback_cells += 1;
                    transition[qh][s][b] = aggregated_transition[s][b];
                }
            }
        }
    }
    let init_tot: f64 = init_counts.iter().sum();
    let initial_distribution = [
        (init_counts[0] + 1.0) / (init_tot + 3.0),
        (init_counts[1] + 1.0) / (init_tot + 3.0),
        (init_counts[2] + 1.0) / (init_tot + 3.0),
    ];
    let chain = StateChainParams {
        transition,
        initial_distribution,
    };
    chain.validate()?;

    // Premium series on matching-state QHs, in chronological order.
    let mut up_log = Vec::new();
    let mut dn_log = Vec::new();
    for (rec, &state) in history.iter().zip(&states) {
        match state {
            RegulationState::Up => {
                if let Some(up) = rec.lambda_up {
                    let prem = up - rec.lambda_da;
                    if prem > 0.0 {
                        up_log.push(prem.ln());
                    }
                }
            }
            RegulationState::Down => {
                if let Some(dn) = rec.lambda_dn {
                    let prem = rec.lambda_da - dn;
                    if prem > 0.0 {
                        dn_log.push(prem.ln());
                    }
                }
            }
            RegulationState::None => {}
        }
    }
    diagnostics.n_up_observations = up_log.len();
    diagnostics.n_down_observations = dn_log.len();
    let premium = PremiumModelParams {
        up: calibrate_direction(&up_log, trim_quantile, "up")?,
        down: calibrate_direction(&dn_log, trim_quantile, "down")?,
    };
    premium.validate()?;

    Ok(Calibration {
        chain,
        aggregated_transition,
        premium,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

fn sample_categorical(rng: &mut ChaCha8Rng, row: &[f64; 3]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    2
}

struct LatentPremium<'a> {
    params: &'a DirectionPremiumParams,
    y: f64,
}

impl<'a> LatentPremium<'a> {
    fn new(params: &'a DirectionPremiumParams) -> Self {
        Self {
            params,
            y: params.init_log,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) {
        let pool = &self.params.residual_pool;
        let eps = pool[rng.random_range(0..pool.len())];
        self.y = self.params.mu_log + self.params.phi * (self.y - self.params.mu_log) + eps;
    }

    fn step_mean(&mut self) {
        self.y = self.params.mu_log + self.params.phi * (self.y - self.params.mu_log);
    }

    fn premium(&self) -> f64 {
        self.y.exp()
    }
}

/// Sample `n` equally weighted scenarios over the horizon of `da`.
/// Deterministic for a fixed seed; scenario `i` uses RNG substream `i`.
pub fn sample_scenarios(
    chain: &StateChainParams,
    premium: &PremiumModelParams,
    da: &DayAheadPrices,
    n: usize,
    seed: u64,
) -> Result<Vec<MarketScenario>, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::InvalidParams("need n >= 1 scenarios".into()));
    }
    chain.validate()?;
    premium.validate()?;
    let t_len = da.eur_mwh.len();
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64);
        let mut states = Vec::with_capacity(t_len);
        let mut price_up = vec![None; t_len];
        let mut price_dn = vec![None; t_len];
        let mut up = LatentPremium::new(&premium.up);
        let mut dn = LatentPremium::new(&premium.down);
        let mut state = RegulationState::from_index(sample_categorical(
            &mut rng,
            &chain.initial_distribution,
        ));
        let mut sojourn = 1usize;
        for t in 0..t_len {
            if t > 0 {
                // Draw order per QH is fixed: next state, then one residual
                // per direction.
                let row = chain.row(da.start_qh_of_day + t - 1, state, sojourn);
                let next = RegulationState::from_index(sample_categorical(&mut rng, row));
                sojourn = if next == state { sojourn + 1 } else { 1 };
                state = next;
                up.step(&mut rng);
                dn.step(&mut rng);
            }
            states.push(state);
            match state {
                RegulationState::Up => price_up[t] = Some(da.eur_mwh[t] + up.premium()),
                RegulationState::Down => price_dn[t] = Some(da.eur_mwh[t] - dn.premium()),
                RegulationState::None => {}
            }
        }
        out.push(MarketScenario {
            states,
            price_up_eur_mwh: price_up,
            price_dn_eur_mwh: price_dn,
            weight: 1.0 / n as f64,
        });
    }
    Ok(out)
}

/// Deterministic illustration path: greedy argmax state transitions (ties
/// prefer no regulation, then down) and the latent premium mean path.
pub fn most_likely_path(
    chain: &StateChainParams,
    premium: &PremiumModelParams,
    da: &DayAheadPrices,
) -> Result<MarketScenario, ScenarioError> {
    chain.validate()?;
    premium.validate()?;
    let t_len = da.eur_mwh.len();
    let argmax = |row: &[f64; 3]| {
        // Tie preference: None, then Down, then Up.
        let order = [2usize, 1, 0];
        let mut best = order[0];
        for &i in &order {
            if row[i] > row[best] + 1e-15 {
                best = i;
            }
        }
        best
    };
    let mut states = Vec::with_capacity(t_len);
    let mut price_up = vec![None; t_len];
    let mut price_dn = vec![None; t_len];
    let mut up = LatentPremium::new(&premium.up);
    let mut dn = LatentPremium::new(&premium.down);
    let mut state = RegulationState::from_index(argmax(&chain.initial_distribution));
    let mut sojourn = 1usize;
    for t in 0..t_len {
        if t > 0 {
            let row = chain.row(da.start_qh_of_day + t - 1, state, sojourn);
            let next = RegulationState::from_index(argmax(row));
            sojourn = if next == state { sojourn + 1 } else { 1 };
            state = next;
            up.step_mean();
            dn.step_mean();
        }
        states.push(state);
        match state {
            RegulationState::Up => price_up[t] = Some(da.eur_mwh[t] + up.premium()),
            RegulationState::Down => price_dn[t] = Some(da.eur_mwh[t] - dn.premium()),
            RegulationState::None => {}
        }
    }
    Ok(MarketScenario {
        states,
        price_up_eur_mwh: price_up,
        price_dn_eur_mwh: price_dn,
        weight: 1.0,
    })
}

// ---------------------------------------------------------------------------
// CSV interfaces
// ---------------------------------------------------------------------------

fn parse_qh_of_day(timestamp: &str) -> Result<usize, ScenarioError> {
    // Minimal ISO-8601 wall-clock parse: ...THH:MM...
    let t_pos = timestamp.find('T').ok_or_else(|| {
        ScenarioError::Calibration(format!("timestamp missing 'T': {timestamp}"))
    })?;
    let rest = &timestamp[t_pos + 1..];
    if rest.len() < 5 || rest.as_bytes()[2] != b':' {
        return Err(ScenarioError::Calibration(format!(
            "timestamp not HH:MM after 'T': {timestamp}"
        )));
    }
    let hour: usize = rest[..2]
        .parse()
        .map_err(|_| ScenarioError::Calibration(format!("bad hour in {timestamp}")))?;
    let minute: usize = rest[3..5]
        .parse()
        .map_err(|_| ScenarioError::Calibration(format!("bad minute in {timestamp}")))?;
    if hour >= 24 || minute >= 60 {
        return Err(ScenarioError::Calibration(format!(
            "timestamp out of range: {timestamp}"
        )));
    }
    Ok(hour * 4 + minute / 15)
}

#[derive(Debug, Deserialize)]
struct HistoryCsvRow {
    timestamp_iso8601: String,
    lambda_da: f64,
    lambda_up: Option<f64>,
    lambda_dn: Option<f64>,
}

/// Read a 15-minute history CSV: `timestamp_iso8601,lambda_da,lambda_up,lambda_dn`
/// with empty activation cells in QHs without that direction.
pub fn read_history_csv<P: AsRef<Path>>(path: P) -> Result<Vec<HistoryRecord>, ScenarioError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let row: HistoryCsvRow = rec?;
        out.push(HistoryRecord {
            qh_of_day: parse_qh_of_day(&row.timestamp_iso8601)?,
            lambda_da: row.lambda_da,
            lambda_up: row.lambda_up,
            lambda_dn: row.lambda_dn,
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct DaCsvRow {
    timestamp: String,
    lambda_da: f64,
}

/// Read a day-ahead price CSV: `timestamp,lambda_da`. Hourly rows are
/// replicated to 4 QHs; 15-minute rows are taken as-is.
pub fn read_day_ahead_csv<P: AsRef<Path>>(
    path: P,
    source: &str,
) -> Result<DayAheadPrices, ScenarioError> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: DaCsvRow = rec?;
        rows.push((parse_qh_of_day(&row.timestamp)?, row.lambda_da));
    }
    if rows.is_empty() {
        return Err(ScenarioError::Calibration(
            "day-ahead price csv is empty".into(),
        ));
    }
    let start_qh_of_day = rows[0].0;
    let step = if rows.len() >= 2 {
        (rows[1].0 + QH_PER_DAY - rows[0].0) % QH_PER_DAY
    } else {
        4
    };
    let eur_mwh: Vec<f64> = match step {
        // Hourly input: replicate each price across its 4 QHs.
        4 | 0 => rows.iter().flat_map(|&(_, p)| [p; 4]).collect(),
        1 => rows.iter().map(|&(_, p)| p).collect(),
        other => {
            return Err(ScenarioError::Calibration(format!(
                "day-ahead rows step by {other} QHs; expected hourly or 15-minute"
            )));
        }
    };
    for &p in &eur_mwh {
        if !p.is_finite() {
            return Err(ScenarioError::Calibration(
                "day-ahead prices must be finite".into(),
            ));
        }
    }
    Ok(DayAheadPrices {
        eur_mwh,
        start_qh_of_day,
        source: source.to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioCsvRow {
    scenario_id: usize,
    qh: usize,
    state: RegulationState,
    price_up: Option<f64>,
    price_dn: Option<f64>,
}

/// Write a scenario set in long format: `scenario_id,qh,state,price_up,price_dn`.
pub fn write_scenarios_csv<P: AsRef<Path>>(
    path: P,
    scenarios: &[MarketScenario],
) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, sc) in scenarios.iter().enumerate() {
        for t in 0..sc.states.len() {
            w.serialize(ScenarioCsvRow {
                scenario_id: id,
                qh: t,
                state: sc.states[t],
                price_up: sc.price_up_eur_mwh[t],
                price_dn: sc.price_dn_eur_mwh[t],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a scenario set written by [`write_scenarios_csv`]; scenarios are
/// re-weighted equally.
pub fn read_scenarios_csv<P: AsRef<Path>>(path: P) -> Result<Vec<MarketScenario>, ScenarioError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: Vec<ScenarioCsvRow> = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    if rows.is_empty() {
        return Err(ScenarioError::InvalidParams("scenario csv is empty".into()));
    }
    let n = rows.iter().map(|r| r.scenario_id).max().unwrap() + 1;
    let t_len = rows.iter().map(|r| r.qh).max().unwrap() + 1;
    if rows.len() != n * t_len {
        return Err(ScenarioError::InvalidParams(format!(
            "scenario csv has {} rows, expected {n} x {t_len}",
            rows.len()
        )));
    }
    let mut out = vec![
        MarketScenario {
            states: vec![RegulationState::None; t_len],
            price_up_eur_mwh: vec![None; t_len],
            price_dn_eur_mwh: vec![None; t_len],
            weight: 1.0 / n as f64,
        };
        n
    ];
    for row in rows {
        let sc = &mut out[row.scenario_id];
        sc.states[row.qh] = row.state;
        sc.price_up_eur_mwh[row.qh] = row.price_up;
        sc.price_dn_eur_mwh[row.qh] = row.price_dn;
    }
    Ok(out)
}
