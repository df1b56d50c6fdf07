//! Synthetic residential charging cohort: per-session parameters sampled from
//! empirical distributions, plus session validation and CSV round-trip.

use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{QH_HOURS, QH_PER_DAY};

/// One vehicle's plug-in session: arrival/departure on the quarter-hour grid,
/// energy need to target state of charge, and peak charging power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSession {
    pub vehicle_id: usize,
    pub arrival_qh: usize,
    pub departure_qh: usize,
    pub energy_kwh: f64,
    pub power_kw: f64,
}

impl EvSession {
    /// Plug-in duration in hours.
    pub fn duration_h(&self) -> f64 {
        (self.departure_qh.saturating_sub(self.arrival_qh)) as f64 * QH_HOURS
    }

    /// Maximum energy deliverable within the plug window.
    pub fn completable_kwh(&self) -> f64 {
        self.power_kw * self.duration_h()
    }
}

/// Sampling distribution for a synthetic residential overnight cohort.
///
/// Times are clock hours; departures are interpreted as next-day clock times
/// (the cohort arrives in the evening and leaves the following morning). The
/// horizon is 24 h = 96 QHs starting at `horizon_start_h`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FleetSpec {
    pub n_vehicles: usize,
    pub energy_lognormal_mu: f64,
    pub energy_lognormal_sigma: f64,
    pub arrival_mean_h: f64,
    pub arrival_sd_h: f64,
    pub departure_mean_h: f64,
    pub departure_sd_h: f64,
    pub power_kw: f64,
    pub horizon_start_h: f64,
    pub rng_seed: u64,
}

impl Default for FleetSpec {
    fn default() -> Self {
        // Residential long-duration charging cohort.
        Self {
            n_vehicles: 1000,
            energy_lognormal_mu: 2.6,
            energy_lognormal_sigma: 0.6,
            arrival_mean_h: 17.1,
            arrival_sd_h: 1.3,
            departure_mean_h: 8.9,
            departure_sd_h: 1.3,
            power_kw: 11.0,
            horizon_start_h: 13.0,
            rng_seed: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum FleetError {
    #[error("fleet spec invalid: {0}")]
    InvalidSpec(String),
    #[error("session csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("session csv: {0}")]
    Io(#[from] io::Error),
}

impl FleetSpec {
    pub fn validate(&self) -> Result<(), FleetError> {
        let err = |m: String| Err(FleetError::InvalidSpec(m));
        if self.n_vehicles == 0 {
            return err("n_vehicles must be >= 1".into());
        }
        for (name, v) in [
            ("energy_lognormal_sigma", self.energy_lognormal_sigma),
            ("arrival_sd_h", self.arrival_sd_h),
            ("departure_sd_h", self.departure_sd_h),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return err(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.power_kw > 0.0) || !self.power_kw.is_finite() {
            return err(format!("power_kw must be > 0, got {}", self.power_kw));
        }
        if !(0.0..24.0).contains(&self.horizon_start_h) {
            return err(format!(
                "horizon_start_h must be in [0, 24), got {}",
                self.horizon_start_h
            ));
        }
        // The 24 h horizon must contain the mean arrival (same day) and the
        // mean departure (next day).
        let arr_rel = self.arrival_mean_h - self.horizon_start_h;
        if !(0.0..24.0).contains(&arr_rel) {
            return err(format!(
                "horizon starting at {} h cannot contain arrival mean {} h",
                self.horizon_start_h, self.arrival_mean_h
            ));
        }
        let dep_rel = self.departure_mean_h + 24.0 - self.horizon_start_h;
        if !(0.0..=24.0).contains(&dep_rel) {
            return err(format!(
                "horizon starting at {} h cannot contain next-day departure mean {} h",
                self.horizon_start_h, self.departure_mean_h
            ));
        }
        if arr_rel >= dep_rel {
            return err("mean departure precedes mean arrival within the horizon".into());
        }
        Ok(())
    }
}

/// Round to the nearest quarter-hour tick, half away from zero.
fn round_to_qh(rel_hours: f64) -> i64 {
    let x = rel_hours / QH_HOURS;
    if x >= 0.0 {
        (x + 0.5).floor() as i64
    } else {
        (x - 0.5).ceil() as i64
    }
}

/// Sample a synthetic fleet of `spec.n_vehicles` sessions over a fixed 96-QH
/// horizon. Deterministic for a fixed `rng_seed`.
///
/// Draws that cannot complete (energy exceeds power x plug duration, or the
/// window collapses after rounding) are resampled up to 100 times, then the
/// energy is clipped to the completable maximum. Arrivals before the horizon
/// start and departures after the horizon end are clamped to the boundary.
pub fn sample_fleet(spec: &FleetSpec) -> Result<Vec<EvSession>, FleetError> {
    spec.validate()?;
    let horizon = QH_PER_DAY;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let arr_dist = Normal::new(spec.arrival_mean_h, spec.arrival_sd_h)
        .map_err(|e| FleetError::InvalidSpec(format!("arrival distribution: {e}")))?;
    let dep_dist = Normal::new(spec.departure_mean_h, spec.departure_sd_h)
        .map_err(|e| FleetError::InvalidSpec(format!("departure distribution: {e}")))?;
    let energy_dist = LogNormal::new(spec.energy_lognormal_mu, spec.energy_lognormal_sigma)
        .map_err(|e| FleetError::InvalidSpec(format!("energy distribution: {e}")))?;

    let mut sessions = Vec::with_capacity(spec.n_vehicles);
    for vehicle_id in 0..spec.n_vehicles {
        let mut chosen: Option<(usize, usize, f64)> = None;
        let mut last: Option<(usize, usize, f64)> = None;
        for _attempt in 0..100 {
            let arr_rel = arr_dist.sample(&mut rng) - spec.horizon_start_h;
            let dep_rel = dep_dist.sample(&mut rng) + 24.0 - spec.horizon_start_h;
            let energy = energy_dist.sample(&mut rng);
            let arr_qh = round_to_qh(arr_rel).clamp(0, horizon as i64) as usize;
            let dep_qh = round_to_qh(dep_rel).clamp(0, horizon as i64) as usize;
            if dep_qh <= arr_qh {
                continue;
            }
            last = Some((arr_qh, dep_qh, energy));
            let cap = spec.power_kw * (dep_qh - arr_qh) as f64 * QH_HOURS;
            if energy <= cap {
                chosen = Some((arr_qh, dep_qh, energy));
                break;
            }
        }
        let (arr_qh, dep_qh, energy) = match (chosen, last) {
            (Some(s), _) => s,
            // 100 completability failures: keep the last valid window, clip energy.
            (None, Some((a, d, e))) => {
                let cap = spec.power_kw * (d - a) as f64 * QH_HOURS;
                (a, d, e.min(cap))
            }
            // 100 collapsed windows: pin a minimal one-QH session at the mean arrival.
            (None, None) => {
                let a = round_to_qh(spec.arrival_mean_h - spec.horizon_start_h)
                    .clamp(0, horizon as i64 - 1) as usize;
                (a, a + 1, spec.power_kw * QH_HOURS)
            }
        };
        sessions.push(EvSession {
            vehicle_id,
            arrival_qh: arr_qh,
            departure_qh: dep_qh,
            energy_kwh: energy,
            power_kw: spec.power_kw,
        });
    }
    Ok(sessions)
}

/// Per-invariant violation counts over a session list. Pure report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_sessions: usize,
    /// arrival/departure outside [0, horizon] or departure <= arrival
    pub window_violations: usize,
    /// energy_kwh <= 0 or power_kw <= 0 or non-finite
    pub positivity_violations: usize,
    /// energy_kwh > power_kw * 0.25 * (departure_qh - arrival_qh)
    pub completability_violations: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.window_violations == 0
            && self.positivity_violations == 0
            && self.completability_violations == 0
    }
}

pub fn validate_sessions(sessions: &[EvSession], horizon_qh: usize) -> ValidationReport {
    let mut report = ValidationReport {
        n_sessions: sessions.len(),
        ..Default::default()
    };
    // Completability comparison gets a tiny absolute slack so that sessions
    // clipped exactly to the cap do not flag on float round-off.
    const TOL_KWH: f64 = 1e-9;
    for s in sessions {
        if s.departure_qh <= s.arrival_qh || s.departure_qh > horizon_qh {
            report.window_violations += 1;
        }
        if !(s.energy_kwh > 0.0) || !(s.power_kw > 0.0) {
            report.positivity_violations += 1;
        } else if s.energy_kwh > s.completable_kwh() + TOL_KWH {
            report.completability_violations += 1;
        }
    }
    report
}

pub fn write_sessions_csv<P: AsRef<Path>>(path: P, sessions: &[EvSession]) -> Result<(), FleetError> {
    let mut w = csv::Writer::from_path(path)?;
    for s in sessions {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sessions_csv<P: AsRef<Path>>(path: P) -> Result<Vec<EvSession>, FleetError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
