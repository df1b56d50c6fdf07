//! Shared test oracles, implemented independently of the production paths
//! they check: a dense two-phase simplex, an exhaustive-enumeration solver
//! for tiny bidding instances, per-vehicle envelope accumulation, greedy
//! price-ordered filling, semi-Markov marginal propagation, and band
//! projection.

#![allow(dead_code)]

pub mod simplex;

use flexbid_core::bidding::{BUFFER_FACTOR, REG_EPS};
use flexbid_core::envelope::VirtualBattery;
use flexbid_core::fleet::EvSession;
use flexbid_core::scenario::{
    duration_bin, DayAheadPrices, MarketScenario, RegulationState, StateChainParams,
    DURATION_BINS,
};
use flexbid_core::{QH_HOURS, QH_PER_DAY};

use simplex::{solve_dense, DenseLp};

/// Independent per-vehicle accumulation of the three envelopes at one QH
/// boundary `k` (0..=T): direct integration per vehicle, no shared code with
/// the production builder.
pub fn accumulate_envelopes_at(sessions: &[EvSession], k: usize) -> (f64, f64) {
    let mut e_min_kwh = 0.0;
    let mut e_max_kwh = 0.0;
    for s in sessions {
        let step = s.power_kw * QH_HOURS;
        // Earliest start: charging from arrival; by boundary k the vehicle has
        // been charging for (k - arrival) QHs, capped by its need.
        if k > s.arrival_qh {
            let qhs = (k - s.arrival_qh) as f64;
            e_max_kwh += (qhs * step).min(s.energy_kwh);
        }
        // Latest start: charging ends at departure; by boundary k the vehicle
        // has charged only what cannot fit between k and departure.
        if s.departure_qh > k {
            let room = (s.departure_qh - k) as f64 * step;
            e_min_kwh += (s.energy_kwh - room).max(0.0);
        } else {
            e_min_kwh += s.energy_kwh;
        }
    }
    (e_min_kwh * 1e-3, e_max_kwh * 1e-3)
}

/// Project an arbitrary nonnegative power series into the feasible band by
/// cumulative clipping; the result is always a feasible trajectory.
pub fn project_into_band(vb: &VirtualBattery, noise_mw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(vb.horizon_qh);
    let mut energy = 0.0f64;
    for t in 0..vb.horizon_qh {
        let wanted = noise_mw[t].clamp(0.0, vb.p_max_mw[t]);
        // min-then-max rather than clamp: the band can pinch to a point where
        // the bounds cross by one ulp.
        let next = (energy + wanted * QH_HOURS)
            .min(vb.e_max_mwh[t + 1])
            .max(vb.e_min_mwh[t + 1]);
        out.push((next - energy) / QH_HOURS);
        energy = next;
    }
    out
}

/// Greedy price-ordered fill: allocate the total need to the cheapest QHs,
/// binary-searching each allocation against a remaining-problem feasibility
/// check. Exact for this interval structure; used to cross-check the
/// production day-ahead LP by cost.
pub fn greedy_fill_cost(vb: &VirtualBattery, da: &DayAheadPrices) -> f64 {
    let t_len = vb.horizon_qh;
    let mut alloc = vec![f64::NAN; t_len]; // NAN = not yet fixed
    let feasible = |alloc: &[f64]| -> bool {
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for t in 0..t_len {
            let (add_lo, add_hi) = if alloc[t].is_nan() {
                (0.0, vb.p_max_mw[t] * QH_HOURS)
            } else {
                let e = alloc[t] * QH_HOURS;
                (e, e)
            };
            lo = (lo + add_lo).max(vb.e_min_mwh[t + 1]);
            hi = (hi + add_hi).min(vb.e_max_mwh[t + 1]);
            if lo > hi + 1e-12 {
                return false;
            }
        }
        true
    };
    let mut order: Vec<usize> = (0..t_len).collect();
    order.sort_by(|&a, &b| da.eur_mwh[a].total_cmp(&da.eur_mwh[b]).then(a.cmp(&b)));
    for t in order {
        // Largest feasible allocation at this QH given everything fixed so far.
        let mut lo = 0.0;
        let mut hi = vb.p_max_mw[t];
        alloc[t] = hi;
        if !feasible(&alloc) {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                alloc[t] = mid;
                if feasible(&alloc) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            alloc[t] = lo;
        }
    }
    alloc
        .iter()
        .zip(&da.eur_mwh)
        .map(|(p, l)| p * QH_HOURS * l)
        .sum()
}

/// Per-QH marginal state distribution of the chain, by forward propagation
/// of the joint (state, sojourn-bin) distribution from the initial law.
pub fn propagate_marginals(
    chain: &StateChainParams,
    start_qh_of_day: usize,
    t_len: usize,
) -> Vec<[f64; 3]> {
    // joint[state][bin]
    let mut joint = [[0.0f64; DURATION_BINS]; 3];
    for s in 0..3 {
        joint[s][duration_bin(1)] = chain.initial_distribution[s];
    }
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut marginal = [0.0f64; 3];
        for s in 0..3 {
            for b in 0..DURATION_BINS {
                marginal[s] += joint[s][b];
            }
        }
        out.push(marginal);
        // Advance one QH.
        let mut next = [[0.0f64; DURATION_BINS]; 3];
        let qh = (start_qh_of_day + t) % QH_PER_DAY;
        for s in 0..3 {
            for b in 0..DURATION_BINS {
                let mass = joint[s][b];
                if mass == 0.0 {
                    continue;
                }
                // Sojourn bins index "QHs already spent": bin b means
                // sojourn b+1, so staying moves to bin(sojourn + 1).
                let row = &chain.transition[qh][s][b];
                for (s2, &p) in row.iter().enumerate() {
                    if s2 == s {
                        next[s2][duration_bin(b + 2)] += mass * p;
                    } else {
                        next[s2][duration_bin(1)] += mass * p;
                    }
                }
            }
        }
        joint = next;
    }
    out
}

/// Tiny-instance description for the enumeration oracle.
pub struct TinyInstance {
    pub vb: VirtualBattery,
    pub scenarios: Vec<MarketScenario>,
    pub da: DayAheadPrices,
    pub beta: f64,
    pub alpha: f64,
    pub fee: f64,
    /// Hard bid cap per QH and direction (MW).
    pub bid_cap: u32,
}

/// Exhaustive enumeration over the integer bid lattice with a dense-simplex
/// LP at every leaf. Returns the maximal model objective (including the
/// declared regularization terms) over all feasible bid vectors.
pub fn enumerate_optimum(inst: &TinyInstance) -> f64 {
    let t_len = inst.vb.horizon_qh;
    let caps: Vec<u32> = (0..t_len)
        .map(|t| {
            let cap = ((inst.vb.p_max_mw[t] / BUFFER_FACTOR) + 1e-9).floor() as u32;
            cap.min(inst.bid_cap)
        })
        .collect();

    // Enumerate joint (bu, bd) per QH subject to the joint buffer limit.
    let mut per_qh: Vec<Vec<(u32, u32)>> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut combos = Vec::new();
        for bu in 0..=caps[t] {
            for bd in 0..=caps[t] {
                if BUFFER_FACTOR * (bu + bd) as f64 <= inst.vb.p_max_mw[t] + 1e-9 {
                    combos.push((bu, bd));
                }
            }
        }
        per_qh.push(combos);
    }

    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; t_len];
    loop {
        let bu: Vec<u32> = (0..t_len).map(|t| per_qh[t][choice[t]].0).collect();
        let bd: Vec<u32> = (0..t_len).map(|t| per_qh[t][choice[t]].1).collect();
        if let Some(value) = leaf_value(inst, &bu, &bd) {
            if value > best {
                best = value;
            }
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == t_len {
                return best;
            }
            choice[pos] += 1;
            if choice[pos] < per_qh[pos].len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// Model objective for fixed bids: an LP over (p_da, c_base, deviations,
/// per-scenario charging, imbalance split, CVaR auxiliaries), solved with the
/// dense simplex. Returns `None` when the bids are infeasible.
pub fn leaf_value(inst: &TinyInstance, bid_up: &[u32], bid_dn: &[u32]) -> Option<f64> {
    let t_len = inst.vb.horizon_qh;
    let s_len = inst.scenarios.len();
    let delta = QH_HOURS;
    let beta = inst.beta;
    let omb = 1.0 - beta;
    let etot = inst.vb.total_energy_mwh();

    // Columns, all nonnegative:
    // p_da (T), c_base (T), dev_p (T), dev_m (T),
    // per scenario: c (T), ip (T), im (T), then eta (S), zp, zm.
    let col_p = |t: usize| t;
    let col_cb = |t: usize| t_len + t;
    let col_dp = |t: usize| 2 * t_len + t;
    let col_dm = |t: usize| 3 * t_len + t;
    let sc0 = 4 * t_len;
    let col_c = move |s: usize, t: usize| sc0 + s * 3 * t_len + t;
    let col_ip = move |s: usize, t: usize| sc0 + s * 3 * t_len + t_len + t;
    let col_im = move |s: usize, t: usize| sc0 + s * 3 * t_len + 2 * t_len + t;
    let col_eta = move |s: usize| sc0 + s_len * 3 * t_len + s;
    let col_zp = sc0 + s_len * 3 * t_len + s_len;
    let col_zm = col_zp + 1;
    let n = col_zm + 1;

    let mut lp = DenseLp::new(n);

    // Constant parts of the objective and of each scenario profit.
    let mut bid_reg = 0.0;
    for t in 0..t_len {
        bid_reg += REG_EPS * (bid_up[t] + bid_dn[t]) as f64;
    }
    let act = |s: usize, t: usize| -> f64 {
        let sc = &inst.scenarios[s];
        match sc.states[t] {
            RegulationState::Up => sc.price_up_eur_mwh[t].unwrap(),
            RegulationState::Down => sc.price_dn_eur_mwh[t].unwrap(),
            RegulationState::None => inst.da.eur_mwh[t],
        }
    };
    let mut bid_revenue = vec![0.0f64; s_len]; // constant per scenario
    for (s, sc) in inst.scenarios.iter().enumerate() {
        for t in 0..t_len {
            match sc.states[t] {
                RegulationState::Up => {
                    bid_revenue[s] += delta * bid_up[t] as f64 * sc.price_up_eur_mwh[t].unwrap();
                }
                RegulationState::Down => {
                    bid_revenue[s] -= delta * bid_dn[t] as f64 * sc.price_dn_eur_mwh[t].unwrap();
                }
                RegulationState::None => {}
            }
        }
    }

    // Objective, minimization form (negate the profit terms).
    for t in 0..t_len {
        lp.cost[col_p(t)] = omb * delta * inst.da.eur_mwh[t];
        lp.cost[col_dp(t)] = REG_EPS;
        lp.cost[col_dm(t)] = REG_EPS;
    }
    for (s, sc) in inst.scenarios.iter().enumerate() {
        let w = sc.weight;
        for t in 0..t_len {
            lp.cost[col_ip(s, t)] += omb * w * (act(s, t) + inst.fee);
            lp.cost[col_im(s, t)] += omb * w * (inst.fee - act(s, t));
        }
        lp.cost[col_eta(s)] = beta * sc.weight / (1.0 - inst.alpha);
    }
    lp.cost[col_zp] = -beta;
    lp.cost[col_zm] = beta;

    // First-stage rows.
    for t in 0..t_len {
        lp.le_row(&[(col_p(t), 1.0)], inst.vb.p_max_mw[t]);
        // Buffers, bids constant.
        let lo = BUFFER_FACTOR * bid_up[t] as f64;
        let hi = inst.vb.p_max_mw[t] - BUFFER_FACTOR * bid_dn[t] as f64;
        if lo > hi + 1e-9 {
            return None;
        }
        lp.le_row(&[(col_cb(t), -1.0)], -lo);
        lp.le_row(&[(col_cb(t), 1.0)], hi);
        // dev_p - dev_m - c_base + p_da = 0
        lp.eq_row(
            &[
                (col_dp(t), 1.0),
                (col_dm(t), -1.0),
                (col_cb(t), -1.0),
                (col_p(t), 1.0),
            ],
            0.0,
        );
    }
    // Baseline cumulative band and final energy (dense prefix rows).
    for k in 1..=t_len {
        let prefix: Vec<(usize, f64)> = (0..k).map(|t| (col_cb(t), delta)).collect();
        if k < t_len {
            lp.le_row(&prefix, inst.vb.e_max_mwh[k]);
            let neg: Vec<(usize, f64)> = (0..k).map(|t| (col_cb(t), -delta)).collect();
            lp.le_row(&neg, -inst.vb.e_min_mwh[k]);
        } else {
            lp.eq_row(&prefix, etot);
        }
    }
    // Position absorbability: cumulative p_da within the earliest-start bound.
    for k in 1..=t_len {
        let prefix: Vec<(usize, f64)> = (0..k).map(|t| (col_p(t), delta)).collect();
        lp.le_row(&prefix, inst.vb.e_max_mwh[k]);
    }

    // Scenario rows.
    for (s, sc) in inst.scenarios.iter().enumerate() {
        for t in 0..t_len {
            lp.le_row(&[(col_c(s, t), 1.0)], inst.vb.p_max_mw[t]);
            // ip - im - delta*c + delta*p_da = delta*(bu[t]*up - bd[t]*dn)
            let (up, dn) = match sc.states[t] {
                RegulationState::Up => (1.0, 0.0),
                RegulationState::Down => (0.0, 1.0),
                RegulationState::None => (0.0, 0.0),
            };
            lp.eq_row(
                &[
                    (col_ip(s, t), 1.0),
                    (col_im(s, t), -1.0),
                    (col_c(s, t), -delta),
                    (col_p(t), delta),
                ],
                delta * (bid_up[t] as f64 * up - bid_dn[t] as f64 * dn),
            );
        }
        for k in 1..=t_len {
            let prefix: Vec<(usize, f64)> = (0..k).map(|t| (col_c(s, t), delta)).collect();
            if k < t_len {
                lp.le_row(&prefix, inst.vb.e_max_mwh[k]);
                let neg: Vec<(usize, f64)> = (0..k).map(|t| (col_c(s, t), -delta)).collect();
                lp.le_row(&neg, -inst.vb.e_min_mwh[k]);
            } else {
                lp.eq_row(&prefix, etot);
            }
        }
        // CVaR tail: zeta - eta_s - profit_s <= 0, constants on the rhs.
        let mut row = vec![(col_zp, 1.0), (col_zm, -1.0), (col_eta(s), -1.0)];
        for t in 0..t_len {
            row.push((col_p(t), delta * inst.da.eur_mwh[t]));
            row.push((col_ip(s, t), act(s, t) + inst.fee));
            row.push((col_im(s, t), inst.fee - act(s, t)));
        }
        lp.le_row(&row, bid_revenue[s]);
    }

    let (_, min_value) = solve_dense(&lp)?;
    // Add back the constant terms: expected bid revenue and bid regularization.
    let const_revenue: f64 = inst
        .scenarios
        .iter()
        .enumerate()
        .map(|(s, sc)| omb * sc.weight * bid_revenue[s])
        .sum();
    Some(-min_value + const_revenue - bid_reg)
}
