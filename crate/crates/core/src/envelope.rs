//! Virtual-battery aggregation: cumulative energy envelopes and the
//! instantaneous power cap of a session fleet, plus trajectory feasibility.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{validate_sessions, EvSession};
use crate::QH_HOURS;

/// Feasibility tolerance on cumulative energy (MWh) and power (MW).
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Aggregate representation of a fleet as one controllable resource.
///
/// Envelopes are cumulative at QH boundaries (`e_min_mwh`/`e_max_mwh` have
/// `horizon_qh + 1` entries); the power cap is per QH. `e_min` is the
/// latest-start bound (minimum cumulative energy by `t` so that every
/// departure leaves fully charged), `e_max` the earliest-start bound (every
/// vehicle charges at full power from arrival).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualBattery {
    pub horizon_qh: usize,
    pub e_min_mwh: Vec<f64>,
    pub e_max_mwh: Vec<f64>,
    pub p_max_mw: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("invalid sessions: {0:?}")]
    InvalidSessions(crate::fleet::ValidationReport),
    #[error("envelope invariant violated: {0}")]
    Invariant(String),
    #[error("envelope csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("envelope csv: {0}")]
    Io(#[from] io::Error),
}

/// First violation found when checking a charging trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TrajectoryViolation {
    LengthMismatch { expected: usize, got: usize },
    NegativePower { qh: usize, power_mw: f64 },
    PowerCap { qh: usize, power_mw: f64, cap_mw: f64 },
    BelowMin { qh: usize, energy_mwh: f64, bound_mwh: f64 },
    AboveMax { qh: usize, energy_mwh: f64, bound_mwh: f64 },
}

/// Aggregate sessions into the three envelopes. Sessions must be valid for
/// the horizon.
pub fn build_envelopes(
    sessions: &[EvSession],
    horizon_qh: usize,
) -> Result<VirtualBattery, EnvelopeError> {
    let report = validate_sessions(sessions, horizon_qh);
    if !report.is_clean() {
        return Err(EnvelopeError::InvalidSessions(report));
    }

    let mut e_max_inc = vec![0.0f64; horizon_qh];
    let mut e_min_inc = vec![0.0f64; horizon_qh];
    let mut p_max = vec![0.0f64; horizon_qh];

    for s in sessions {
        let step = s.power_kw * QH_HOURS; // kWh per QH at full power
        // Earliest start: full power from arrival until the need is met; the
        // final QH carries the remainder.
        let mut remaining = s.energy_kwh;
        for t in s.arrival_qh..s.departure_qh {
            if remaining <= 0.0 {
                break;
            }
            let inc = step.min(remaining);
            e_max_inc[t] += inc;
            remaining -= inc;
        }
        // Latest start: full power ending exactly at departure; the first
        // charging QH carries the remainder.
        let mut remaining = s.energy_kwh;
        for t in (s.arrival_qh..s.departure_qh).rev() {
            if remaining <= 0.0 {
                break;
            }
            let inc = step.min(remaining);
            e_min_inc[t] += inc;
            remaining -= inc;
        }
        for t in s.arrival_qh..s.departure_qh {
            p_max[t] += s.power_kw;
        }
    }

    let kwh_to_mwh = 1e-3;
    let cumulative = |inc: &[f64]| {
        let mut out = Vec::with_capacity(horizon_qh + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for &v in inc {
            acc += v * kwh_to_mwh;
            out.push(acc);
        }
        out
    };
    let vb = VirtualBattery {
        horizon_qh,
        e_min_mwh: cumulative(&e_min_inc),
        e_max_mwh: cumulative(&e_max_inc),
        p_max_mw: p_max.iter().map(|p| p * 1e-3).collect(),
    };
    Ok(vb)
}

impl VirtualBattery {
    /// Total fleet energy need (MWh); both envelopes end here.
    pub fn total_energy_mwh(&self) -> f64 {
        self.e_min_mwh[self.horizon_qh]
    }

    /// Verify the structural invariants within `tol` MWh.
    pub fn check_invariants(&self, tol: f64) -> Result<(), EnvelopeError> {
        let t_len = self.horizon_qh;
        let err = |m: String| Err(EnvelopeError::Invariant(m));
        if self.e_min_mwh.len() != t_len + 1
            || self.e_max_mwh.len() != t_len + 1
            || self.p_max_mw.len() != t_len
        {
            return err("envelope length mismatch".into());
        }
        if self.e_min_mwh[0].abs() > tol || self.e_max_mwh[0].abs() > tol {
            return err("envelopes must start at zero".into());
        }
        if (self.e_min_mwh[t_len] - self.e_max_mwh[t_len]).abs() > tol {
            return err(format!(
                "envelopes must meet at the horizon end: {} vs {}",
                self.e_min_mwh[t_len], self.e_max_mwh[t_len]
            ));
        }
        for t in 0..t_len {
            let d_min = self.e_min_mwh[t + 1] - self.e_min_mwh[t];
            let d_max = self.e_max_mwh[t + 1] - self.e_max_mwh[t];
            let cap = self.p_max_mw[t] * QH_HOURS;
            if d_min < -tol || d_max < -tol {
                return err(format!("envelope decreases at QH {t}"));
            }
            if d_min > cap + tol || d_max > cap + tol {
                return err(format!(
                    "envelope increment exceeds power cap at QH {t}: {} / {} > {}",
                    d_min, d_max, cap
                ));
            }
            if self.e_min_mwh[t + 1] > self.e_max_mwh[t + 1] + tol {
                return err(format!("e_min above e_max at QH {t}"));
            }
        }
        Ok(())
    }

    /// Check a per-QH charging series (MW) against the power cap and the
    /// cumulative energy band, within [`FEASIBILITY_TOL`]. Returns the first
    /// violation.
    pub fn check_trajectory(&self, charging_mw: &[f64]) -> Result<(), TrajectoryViolation> {
        if charging_mw.len() != self.horizon_qh {
            return Err(TrajectoryViolation::LengthMismatch {
                expected: self.horizon_qh,
                got: charging_mw.len(),
            });
        }
        let mut energy = 0.0;
        for (t, &p) in charging_mw.iter().enumerate() {
            if p < -FEASIBILITY_TOL {
                return Err(TrajectoryViolation::NegativePower { qh: t, power_mw: p });
            }
            if p > self.p_max_mw[t] + FEASIBILITY_TOL {
                return Err(TrajectoryViolation::PowerCap {
                    qh: t,
                    power_mw: p,
                    cap_mw: self.p_max_mw[t],
                });
            }
            energy += p * QH_HOURS;
            if energy < self.e_min_mwh[t + 1] - FEASIBILITY_TOL {
                return Err(TrajectoryViolation::BelowMin {
                    qh: t,
                    energy_mwh: energy,
                    bound_mwh: self.e_min_mwh[t + 1],
                });
            }
            if energy > self.e_max_mwh[t + 1] + FEASIBILITY_TOL {
                return Err(TrajectoryViolation::AboveMax {
                    qh: t,
                    energy_mwh: energy,
                    bound_mwh: self.e_max_mwh[t + 1],
                });
            }
        }
        Ok(())
    }

    /// The earliest-start charging profile (derivative of `e_max`), MW.
    pub fn earliest_profile_mw(&self) -> Vec<f64> {
        (0..self.horizon_qh)
            .map(|t| (self.e_max_mwh[t + 1] - self.e_max_mwh[t]) / QH_HOURS)
            .collect()
    }

    /// The latest-start charging profile (derivative of `e_min`), MW.
    pub fn latest_profile_mw(&self) -> Vec<f64> {
        (0..self.horizon_qh)
            .map(|t| (self.e_min_mwh[t + 1] - self.e_min_mwh[t]) / QH_HOURS)
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnvelopeRow {
    qh_index: usize,
    e_min_mwh: f64,
    e_max_mwh: f64,
    // T rows carry the cap; the final boundary row leaves it empty.
    p_max_mw: Option<f64>,
}

pub fn write_envelopes_csv<P: AsRef<Path>>(
    path: P,
    vb: &VirtualBattery,
) -> Result<(), EnvelopeError> {
    let mut w = csv::Writer::from_path(path)?;
    for t in 0..=vb.horizon_qh {
        w.serialize(EnvelopeRow {
            qh_index: t,
            e_min_mwh: vb.e_min_mwh[t],
            e_max_mwh: vb.e_max_mwh[t],
            p_max_mw: vb.p_max_mw.get(t).copied(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_envelopes_csv<P: AsRef<Path>>(path: P) -> Result<VirtualBattery, EnvelopeError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut e_min = Vec::new();
    let mut e_max = Vec::new();
    let mut p_max = Vec::new();
    for rec in r.deserialize() {
        let row: EnvelopeRow = rec?;
        e_min.push(row.e_min_mwh);
        e_max.push(row.e_max_mwh);
        if let Some(p) = row.p_max_mw {
            p_max.push(p);
        }
    }
    if e_min.len() != p_max.len() + 1 {
        return Err(EnvelopeError::Invariant(format!(
            "expected {} boundary rows and {} power rows",
            p_max.len() + 1,
            p_max.len()
        )));
    }
    let vb = VirtualBattery {
        horizon_qh: p_max.len(),
        e_min_mwh: e_min,
        e_max_mwh: e_max,
        p_max_mw: p_max,
    };
    vb.check_invariants(1e-6)?;
    Ok(vb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::{sample_fleet, FleetSpec};
    use crate::QH_PER_DAY;
    use proptest::prelude::*;

    fn session(arrival: usize, departure: usize, energy: f64, power: f64) -> EvSession {
        EvSession {
            vehicle_id: 0,
            arrival_qh: arrival,
            departure_qh: departure,
            energy_kwh: energy,
            power_kw: power,
        }
    }

    #[test]
    fn single_ev_hand_computed_envelopes() {
        // 11 kW, 5.5 kWh: exactly 2 QHs of charging inside a 4-QH window.
        let vb = build_envelopes(&[session(0, 4, 5.5, 11.0)], 4).unwrap();
        let kwh = |v: &Vec<f64>| v.iter().map(|x| x * 1e3).collect::<Vec<_>>();
        assert_eq!(kwh(&vb.e_max_mwh), vec![0.0, 2.75, 5.5, 5.5, 5.5]);
        assert_eq!(kwh(&vb.e_min_mwh), vec![0.0, 0.0, 0.0, 2.75, 5.5]);
        assert_eq!(vb.p_max_mw, vec![0.011; 4]);
    }

    #[test]
    fn empty_fleet_is_identically_zero() {
        let vb = build_envelopes(&[], 8).unwrap();
        assert!(vb.e_min_mwh.iter().all(|&x| x == 0.0));
        assert!(vb.e_max_mwh.iter().all(|&x| x == 0.0));
        assert!(vb.p_max_mw.iter().all(|&x| x == 0.0));
        vb.check_invariants(1e-12).unwrap();
    }

    #[test]
    fn partial_final_qh_keeps_total_exact() {
        // 7 kWh at 11 kW: 2 full QHs (2.75 each) plus a 1.5 kWh remainder.
        let vb = build_envelopes(&[session(2, 10, 7.0, 11.0)], 12).unwrap();
        assert!((vb.total_energy_mwh() - 0.007).abs() < 1e-12);
        assert!((vb.e_max_mwh[12] - 0.007).abs() < 1e-12);
        vb.check_invariants(1e-9).unwrap();
    }

    #[test]
    fn rejects_invalid_sessions() {
        let err = build_envelopes(&[session(4, 4, 1.0, 11.0)], 8);
        assert!(matches!(err, Err(EnvelopeError::InvalidSessions(_))));
        let err = build_envelopes(&[session(0, 2, 100.0, 11.0)], 8);
        assert!(matches!(err, Err(EnvelopeError::InvalidSessions(_))));
    }

    #[test]
    fn envelope_boundaries_are_feasible_trajectories() {
        let spec = FleetSpec {
            n_vehicles: 300,
            rng_seed: 11,
            ..FleetSpec::default()
        };
        let vb = build_envelopes(&sample_fleet(&spec).unwrap(), QH_PER_DAY).unwrap();
        vb.check_trajectory(&vb.earliest_profile_mw()).unwrap();
        vb.check_trajectory(&vb.latest_profile_mw()).unwrap();
    }

    #[test]
    fn zero_charging_fails_at_first_binding_qh() {
        let vb = build_envelopes(&[session(0, 4, 5.5, 11.0)], 4).unwrap();
        let got = vb.check_trajectory(&[0.0; 4]).unwrap_err();
        // e_min first becomes positive at boundary 3, i.e. during QH 2.
        match got {
            TrajectoryViolation::BelowMin { qh, .. } => assert_eq!(qh, 2),
            v => panic!("unexpected violation {v:?}"),
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let vb = build_envelopes(&[session(0, 4, 5.5, 11.0)], 4).unwrap();
        assert!(matches!(
            vb.check_trajectory(&[0.0; 3]),
            Err(TrajectoryViolation::LengthMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let spec = FleetSpec {
            n_vehicles: 50,
            rng_seed: 5,
            ..FleetSpec::default()
        };
        let vb = build_envelopes(&sample_fleet(&spec).unwrap(), QH_PER_DAY).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("envelopes.csv");
        write_envelopes_csv(&path, &vb).unwrap();
        let back = read_envelopes_csv(&path).unwrap();
        assert_eq!(back, vb);
    }

    prop_compose! {
        fn arb_session(horizon: usize)(
            arrival in 0usize..95,
            dur in 1usize..96,
            energy_frac in 0.05f64..1.0,
            power in 3.0f64..22.0,
        ) -> EvSession {
            let departure = (arrival + dur).min(horizon);
            let arrival = arrival.min(departure - 1);
            let cap = power * QH_HOURS * (departure - arrival) as f64;
            EvSession {
                vehicle_id: 0,
                arrival_qh: arrival,
                departure_qh: departure,
                energy_kwh: energy_frac * cap,
                power_kw: power,
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn envelopes_satisfy_invariants_for_random_fleets(
            sessions in prop::collection::vec(arb_session(QH_PER_DAY), 0..60)
        ) {
            let vb = build_envelopes(&sessions, QH_PER_DAY).unwrap();
            vb.check_invariants(1e-9).unwrap();
        }

        #[test]
        fn adding_a_session_weakly_increases_envelopes(
            sessions in prop::collection::vec(arb_session(QH_PER_DAY), 1..40)
        ) {
            let all = build_envelopes(&sessions, QH_PER_DAY).unwrap();
            let fewer = build_envelopes(&sessions[..sessions.len()-1], QH_PER_DAY).unwrap();
            for t in 0..=QH_PER_DAY {
                prop_assert!(all.e_min_mwh[t] + 1e-12 >= fewer.e_min_mwh[t]);
                prop_assert!(all.e_max_mwh[t] + 1e-12 >= fewer.e_max_mwh[t]);
            }
            for t in 0..QH_PER_DAY {
                prop_assert!(all.p_max_mw[t] + 1e-12 >= fewer.p_max_mw[t]);
            }
        }

        #[test]
        fn envelope_derivatives_are_feasible(
            sessions in prop::collection::vec(arb_session(QH_PER_DAY), 1..40)
        ) {
            let vb = build_envelopes(&sessions, QH_PER_DAY).unwrap();
            prop_assert!(vb.check_trajectory(&vb.earliest_profile_mw()).is_ok());
            prop_assert!(vb.check_trajectory(&vb.latest_profile_mw()).is_ok());
        }
    }
}
