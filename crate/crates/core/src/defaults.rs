//! Bundled synthetic defaults: stylised day-ahead price days and a
//! down-heavy market parameter set, used when no observed history or price
//! CSV is supplied. All outputs are labeled synthetic.

use crate::scenario::{
    DayAheadPrices, DirectionPremiumParams, PremiumModelParams, StateChainParams, DURATION_BINS,
};
use crate::QH_PER_DAY;

/// Horizon start used by the bundled case studies: 13:00.
pub const CASE_STUDY_START_QH: usize = 52;

fn replicate_hourly(hourly: &[f64; 24], start_qh_of_day: usize, source: &str) -> DayAheadPrices {
    DayAheadPrices {
        eur_mwh: hourly.iter().flat_map(|&p| [p; 4]).collect(),
        start_qh_of_day,
        source: source.to_string(),
    }
}

/// Duck-shaped day from 13:00 to 13:00: depressed early-afternoon trough
/// (0.15 EUR/MWh in the first hour) and elevated evening prices.
pub fn synthetic_duck_prices() -> DayAheadPrices {
    let hourly = [
        // 13:00 .. 20:00
        0.15, 2.0, 9.0, 24.0, 52.0, 88.0, 112.0, 96.0, //
        // 21:00 .. 04:00
        74.0, 58.0, 49.0, 43.0, 39.0, 36.0, 34.0, 33.0, //
        // 05:00 .. 12:00
        35.0, 44.0, 63.0, 79.0, 71.0, 60.0, 47.0, 28.0,
    ];
    replicate_hourly(&hourly, CASE_STUDY_START_QH, "synthetic_duck_curve")
}

/// Double-peak day from 13:00 to 13:00: pronounced evening (~137 EUR/MWh at
/// 18:00) and morning (~138 EUR/MWh at 07:00) peaks.
pub fn synthetic_double_peak_prices() -> DayAheadPrices {
    let hourly = [
        // 13:00 .. 20:00
        56.0, 61.0, 69.0, 83.0, 108.0, 137.0, 121.0, 97.0, //
        // 21:00 .. 04:00
        81.0, 70.0, 61.0, 53.0, 47.0, 44.0, 42.0, 43.0, //
        // 05:00 .. 12:00
        49.0, 78.0, 138.0, 124.0, 101.0, 86.0, 73.0, 62.0,
    ];
    replicate_hourly(&hourly, CASE_STUDY_START_QH, "synthetic_double_peak")
}

pub fn synthetic_prices(day: &str) -> Option<DayAheadPrices> {
    match day {
        "duck_curve" => Some(synthetic_duck_prices()),
        "double_peak" => Some(synthetic_double_peak_prices()),
        _ => None,
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation, ~1e-9
/// absolute error). Used to lay out deterministic residual pools.
fn inv_norm_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inv_norm_cdf(1.0 - p)
    }
}

/// Deterministic residual pool: normal quantile grid scaled by `sigma`.
fn quantile_pool(sigma: f64, size: usize) -> Vec<f64> {
    (0..size)
        .map(|k| sigma * inv_norm_cdf((k as f64 + 0.5) / size as f64))
        .collect()
}

/// Bundled down-heavy regulation-state chain.
///
/// Down regulation is markedly more frequent than up regulation; exit hazards
/// rise with time already spent in an activation state (long activations are
/// rarer), and night/midday QHs lean further down while morning/evening peak
/// QHs see relatively more up events.
pub fn default_chain_params() -> StateChainParams {
    let mut transition = vec![[[[0.0f64; 3]; DURATION_BINS]; 3]; QH_PER_DAY];
    // Base rows per (state, sojourn bin): [to_up, to_down, to_none].
    let up_rows = [
        [0.50, 0.04, 0.46],
        [0.42, 0.05, 0.53],
        [0.34, 0.05, 0.61],
        [0.24, 0.06, 0.70],
    ];
    let down_rows = [
        [0.02, 0.62, 0.36],
        [0.02, 0.55, 0.43],
        [0.03, 0.46, 0.51],
        [0.03, 0.34, 0.63],
    ];
    let none_rows = [
        [0.055, 0.170, 0.775],
        [0.050, 0.160, 0.790],
        [0.045, 0.150, 0.805],
        [0.040, 0.140, 0.820],
    ];
    for (qh, per_state) in transition.iter_mut().enumerate() {
        // Mild time-of-day tilt: peak hours (06-09, 17-20) shift entry
        // probability from down to up.
        let hour = qh / 4;
        let peak = matches!(hour, 6..=9 | 17..=20);
        let tilt: f64 = if peak { 0.035 } else { -0.015 };
        for (s, rows) in [&up_rows, &down_rows, &none_rows].into_iter().enumerate() {
            for b in 0..DURATION_BINS {
                let mut row = rows[b];
                let shift = tilt.min(row[1] - 0.01).max(-(row[0] - 0.01));
                row[0] += shift;
                row[1] -= shift;
                per_state[s][b] = row;
            }
        }
    }
    StateChainParams {
        transition,
        initial_distribution: [0.06, 0.20, 0.74],
    }
}

/// Bundled premium model: up premia rarer but larger, down premia more
/// modest, both log-AR(1) with deterministic quantile residual pools.
pub fn default_premium_params() -> PremiumModelParams {
    PremiumModelParams {
        up: DirectionPremiumParams {
            mu_log: 30.0f64.ln(),
            phi: 0.80,
            residual_pool: quantile_pool(0.55, 192),
            init_log: 30.0f64.ln(),
        },
        down: DirectionPremiumParams {
            mu_log: 16.0f64.ln(),
            phi: 0.85,
            residual_pool: quantile_pool(0.42, 192),
            init_log: 16.0f64.ln(),
        },
    }
}

/// The bundled synthetic market parameter set (chain + premia).
pub fn default_market_params() -> (StateChainParams, PremiumModelParams) {
    (default_chain_params(), default_premium_params())
}

/// A chain that never activates either direction (degenerate dry runs).
pub fn all_none_chain() -> StateChainParams {
    StateChainParams {
        transition: vec![[[[0.0, 0.0, 1.0]; DURATION_BINS]; 3]; QH_PER_DAY],
        initial_distribution: [0.0, 0.0, 1.0],
    }
}
