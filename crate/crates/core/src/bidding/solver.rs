//! LP-relaxation + branch-and-bound over the integer bid lattice, the
//! independent-mode day-ahead LP, and single-scenario recourse replays.
//!
//! The search is deterministic: best-bound node selection with id tie-breaks,
//! a fixed node budget instead of wall-clock limits, and a single-threaded
//! interior-point backend. When the budget ends the search early, the
//! remaining relative gap is reported.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::envelope::VirtualBattery;
use crate::lp::{LpBuilder, LpStatus, LpTols};
use crate::scenario::{DayAheadPrices, MarketScenario};
use crate::QH_HOURS;

use super::model::{build_model, extract_candidate, BidModel, Candidate, InstanceSummary};
use super::{BidMode, BidSolution, BiddingError, FirstStage, RiskParams, SolveOptions};

/// Solve diagnostics attached to a returned solution.
///
/// `objective_internal` and bounds include the declared regularization terms
/// (the search metric); `objective_value` on the solution itself does not.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverInfo {
    pub nodes_explored: usize,
    pub lp_solves: usize,
    /// Root LP relaxation value (maximization form, with regularization).
    pub root_relaxation: f64,
    /// Best proven upper bound on the internal objective.
    pub best_bound: f64,
    /// Internal objective of the returned solution.
    pub objective_internal: f64,
    /// Best internal objective over every candidate examined.
    pub best_internal_objective: f64,
    /// Relative optimality gap vs `best_internal_objective`; `None` when a
    /// node LP failed and the bound could not be certified.
    pub gap: Option<f64>,
    /// CVaR recomputed at the LP's VaR level for the returned solution.
    pub cvar_from_zeta: Option<f64>,
    pub instance: InstanceSummary,
}

struct HeapNode {
    bound: f64,
    id: u64,
    bu: Vec<(u32, u32)>,
    bd: Vec<(u32, u32)>,
}

impl PartialEq for HeapNode {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for HeapNode {}
impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on bound; older node first on ties.
        self.bound
            .total_cmp(&other.bound)
            .then(other.id.cmp(&self.id))
    }
}

fn fractionality(v: f64) -> f64 {
    (v - v.round()).abs()
}

/// Clamp rounded bids to their caps and the joint buffer limit
/// `1.1 * (bu + bd) <= p_max`; shrink the larger bid first when violated.
fn repair_bids(bu: &mut [u32], bd: &mut [u32], model: &BidModel, p_max: &[f64]) {
    for t in 0..bu.len() {
        bu[t] = bu[t].min(model.cap_up[t]);
        bd[t] = bd[t].min(model.cap_dn[t]);
        while super::BUFFER_FACTOR * (bu[t] + bd[t]) as f64 > p_max[t] + 1e-9 {
            if bu[t] >= bd[t] && bu[t] > 0 {
                bu[t] -= 1;
            } else if bd[t] > 0 {
                bd[t] -= 1;
            } else {
                break;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_mode(
    mode: BidMode,
    vb: &VirtualBattery,
    scenarios: &[MarketScenario],
    da: &DayAheadPrices,
    risk: &RiskParams,
    fee: f64,
    opts: &SolveOptions,
    p_da_fixed: Option<&[f64]>,
    warm_start: Option<&FirstStage>,
) -> Result<BidSolution, BiddingError> {
    let mut model = build_model(vb, scenarios, da, risk, fee);
    let t_len = model.layout.t_len;
    let p_max = vb.p_max_mw.clone();
    let node_tols = if opts.exact_nodes {
        LpTols::tight()
    } else {
        LpTols::default()
    };
    let mut lp_solves = 0usize;

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut best_internal = f64::NEG_INFINITY;

    // Seed with a known-feasible first stage, evaluated under this model.
    if let Some(ws) = warm_start {
        if ws.p_da_mw.len() == t_len {
            model.pin_first_stage(ws);
            let out = model.solve(LpTols::tight())?;
            lp_solves += 1;
            if out.usable() {
                let cand = extract_candidate(&model, &out.x, mode, scenarios, da, risk, fee)?;
                best_internal = best_internal.max(cand.internal_objective);
                candidates.push(cand);
            }
            model.restore_first_stage();
        }
    }
    if let Some(p_da) = p_da_fixed {
        model.pin_p_da(p_da);
    }

    // Root relaxation.
    let root = model.solve(node_tols)?;
    lp_solves += 1;
    match root.status {
        LpStatus::Infeasible => {
            return Err(BiddingError::SolverFailure(
                "root relaxation infeasible".into(),
            ));
        }
        LpStatus::Unbounded => {
            return Err(BiddingError::SolverFailure(
                "root relaxation unbounded".into(),
            ));
        }
        LpStatus::Failed => {
            return Err(BiddingError::SolverFailure(
                "root relaxation did not converge".into(),
            ));
        }
        _ => {}
    }
    let root_bound = -root.dual_obj;

    // Rounding heuristics on the relaxed bids: floor (always
    // buffer-feasible) and nearest, deduplicated.
    let mut evaluated: Vec<(Vec<u32>, Vec<u32>)> = Vec::new();
    for nearest in [false, true] {
        let (bu_rel, bd_rel) = model.bid_values(&root.x);
        let round = |v: f64| {
            if nearest {
                v.round().max(0.0) as u32
            } else {
                v.max(0.0) as u32
            }
        };
        let mut bu: Vec<u32> = bu_rel.iter().map(|&v| round(v)).collect();
        let mut bd: Vec<u32> = bd_rel.iter().map(|&v| round(v)).collect();
        repair_bids(&mut bu, &mut bd, &model, &p_max);
        if evaluated.iter().any(|(u, d)| *u == bu && *d == bd) {
            continue;
        }
        model.pin_bids(&bu, &bd);
        let out = model.solve(LpTols::tight())?;
        lp_solves += 1;
        if out.usable() {
            let cand = extract_candidate(&model, &out.x, mode, scenarios, da, risk, fee)?;
            best_internal = best_internal.max(cand.internal_objective);
            candidates.push(cand);
        }
        evaluated.push((bu, bd));
    }
    model.restore_bid_bounds();

    // Branch and bound, best bound first.
    let mut heap = BinaryHeap::new();
    let mut next_id = 0u64;
    let root_node = HeapNode {
        bound: root_bound,
        id: next_id,
        bu: model.cap_up.iter().map(|&c| (0, c)).collect(),
        bd: model.cap_dn.iter().map(|&c| (0, c)).collect(),
    };
    next_id += 1;
    heap.push(root_node);

    let mut nodes_explored = 0usize;
    let mut bound_certified = true;
    let mut final_bound = root_bound;

    while let Some(node) = heap.pop() {
        let scale = best_internal.abs().max(1.0);
        if best_internal.is_finite() && node.bound <= best_internal + opts.gap_tol * scale {
            // Best-first order: every remaining node is within tolerance.
            final_bound = node.bound.max(best_internal);
            heap.clear();
            break;
        }
        if nodes_explored >= opts.max_nodes {
            final_bound = node.bound;
            break;
        }
        nodes_explored += 1;

        model.set_bid_bounds(&node.bu, &node.bd);
        let mut out = model.solve(node_tols)?;
        lp_solves += 1;
        if out.status == LpStatus::Failed {
            out = model.solve(LpTols::tight())?;
            lp_solves += 1;
        }
        match out.status {
            LpStatus::Infeasible => continue,
            LpStatus::Failed | LpStatus::Unbounded => {
                // Cannot certify this subtree's bound.
                bound_certified = false;
                continue;
            }
            _ => {}
        }
        let node_bound = (-out.dual_obj).min(node.bound);
        if node_bound <= best_internal + 1e-9 * best_internal.abs().max(1.0) {
            continue;
        }

        let (bu_val, bd_val) = model.bid_values(&out.x);
        let mut worst = 0.0f64;
        let mut branch_var: Option<(bool, usize, f64)> = None;
        for t in 0..t_len {
            for (is_up, v) in [(true, bu_val[t]), (false, bd_val[t])] {
                let f = fractionality(v);
                if f > worst + 1e-12 {
                    worst = f;
                    branch_var = Some((is_up, t, v));
                }
            }
        }

        if worst <= opts.int_tol {
            // Integral: polish with pinned bids and evaluate exactly. Nodes
            // often round to a bid vector already evaluated; skip repeats.
            let mut bu: Vec<u32> = bu_val.iter().map(|&v| v.round().max(0.0) as u32).collect();
            let mut bd: Vec<u32> = bd_val.iter().map(|&v| v.round().max(0.0) as u32).collect();
            repair_bids(&mut bu, &mut bd, &model, &p_max);
            if evaluated.iter().any(|(u, d)| *u == bu && *d == bd) {
                continue;
            }
            model.pin_bids(&bu, &bd);
            let polished = model.solve(LpTols::tight())?;
            lp_solves += 1;
            if polished.usable() {
                let cand =
                    extract_candidate(&model, &polished.x, mode, scenarios, da, risk, fee)?;
                best_internal = best_internal.max(cand.internal_objective);
                candidates.push(cand);
            }
            evaluated.push((bu, bd));
            continue;
        }

        let (is_up, t, v) = branch_var.expect("fractional variable exists");
        let floor = v.floor().max(0.0) as u32;
        let mut lower = HeapNode {
            bound: node_bound,
            id: next_id,
            bu: node.bu.clone(),
            bd: node.bd.clone(),
        };
        next_id += 1;
        let mut upper = HeapNode {
            bound: node_bound,
            id: next_id,
            bu: node.bu,
            bd: node.bd,
        };
        next_id += 1;
        if is_up {
            lower.bu[t].1 = floor.min(lower.bu[t].1);
            upper.bu[t].0 = (floor + 1).max(upper.bu[t].0);
            if lower.bu[t].0 <= lower.bu[t].1 {
                heap.push(lower);
            }
            if upper.bu[t].0 <= upper.bu[t].1 {
                heap.push(upper);
            }
        } else {
            lower.bd[t].1 = floor.min(lower.bd[t].1);
            upper.bd[t].0 = (floor + 1).max(upper.bd[t].0);
            if lower.bd[t].0 <= lower.bd[t].1 {
                heap.push(lower);
            }
            if upper.bd[t].0 <= upper.bd[t].1 {
                heap.push(upper);
            }
        }
    }
    if let Some(top) = heap.peek() {
        final_bound = final_bound.max(top.bound);
    } else if !candidates.is_empty() && final_bound < best_internal {
        final_bound = best_internal;
    }

    if candidates.is_empty() {
        return Err(BiddingError::SolverFailure(
            "no integer-feasible candidate found".into(),
        ));
    }
    if heap.is_empty() && nodes_explored < opts.max_nodes && bound_certified {
        // Exhausted the tree: the incumbent is proven optimal.
        final_bound = best_internal;
    }

    // Return the best reported objective; ties go to the better internal
    // value, then to discovery order.
    let mut best_idx = 0usize;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let b = &candidates[best_idx];
        if c.solution.objective_value > b.solution.objective_value
            || (c.solution.objective_value == b.solution.objective_value
                && c.internal_objective > b.internal_objective)
        {
            best_idx = i;
        }
    }
    let best_internal_objective = candidates
        .iter()
        .map(|c| c.internal_objective)
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = candidates.swap_remove(best_idx);
    let gap = bound_certified.then(|| {
        ((final_bound - best_internal_objective) / best_internal_objective.abs().max(1.0)).max(0.0)
    });

    let mut solution = chosen.solution;
    solution.solver = SolverInfo {
        nodes_explored,
        lp_solves,
        root_relaxation: root_bound,
        best_bound: final_bound,
        objective_internal: chosen.internal_objective,
        best_internal_objective,
        gap,
        cvar_from_zeta: chosen.cvar_from_zeta,
        instance: model.summary,
    };
    Ok(solution)
}

/// Independent-mode Step 1: the cheapest envelope-feasible day-ahead plan,
/// with a secondary pass that picks the earliest plan among cost ties.
pub fn solve_step1_day_ahead(
    vb: &VirtualBattery,
    da: &DayAheadPrices,
) -> Result<Vec<f64>, BiddingError> {
    let t_len = vb.horizon_qh;
    if da.eur_mwh.len() != t_len {
        return Err(BiddingError::InvalidInput(format!(
            "day-ahead series length {} != horizon {}",
            da.eur_mwh.len(),
            t_len
        )));
    }
    let build = |cost_time_weighted: bool, cost_cap: Option<f64>| {
        let mut b = LpBuilder::new();
        let p = b.add_cols(t_len);
        let e = b.add_cols(t_len + 1);
        let mut cost_row = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let da_cost = QH_HOURS * da.eur_mwh[t];
            if cost_time_weighted {
                b.set_cost(p + t, (t + 1) as f64);
            } else {
                b.set_cost(p + t, da_cost);
            }
            cost_row.push((p + t, da_cost));
            b.add_le(vec![(p + t, 1.0)], vb.p_max_mw[t]);
            b.add_le(vec![(p + t, -1.0)], 0.0);
        }
        b.add_eq(vec![(e, 1.0)], 0.0);
        for t in 0..t_len {
            b.add_eq(vec![(e + t + 1, 1.0), (e + t, -1.0), (p + t, -QH_HOURS)], 0.0);
        }
        b.add_eq(vec![(e + t_len, 1.0)], vb.total_energy_mwh());
        for k in 1..t_len {
            b.add_le(vec![(e + k, 1.0)], vb.e_max_mwh[k]);
            b.add_le(vec![(e + k, -1.0)], -vb.e_min_mwh[k]);
        }
        if let Some(cap) = cost_cap {
            b.add_le(cost_row, cap);
        }
        b.build()
    };

    let first = build(false, None).solve(LpTols::tight())?;
    if !first.usable() {
        return Err(BiddingError::SolverFailure(format!(
            "day-ahead plan LP: {:?}",
            first.status
        )));
    }
    let optimal_cost = first.primal_obj;
    let cap = optimal_cost + 1e-9 * optimal_cost.abs().max(1.0);
    let second = build(true, Some(cap)).solve(LpTols::tight())?;
    let x = if second.usable() { &second.x } else { &first.x };
    Ok(x[..t_len]
        .iter()
        .enumerate()
        .map(|(t, &v)| v.clamp(0.0, vb.p_max_mw[t]))
        .collect())
}

/// Optimal recourse for one scenario with the whole first stage pinned.
pub(crate) fn solve_recourse_only(
    fs: &FirstStage,
    vb: &VirtualBattery,
    sc: &MarketScenario,
    da: &DayAheadPrices,
    risk: &RiskParams,
    fee: f64,
) -> Result<Vec<f64>, BiddingError> {
    let scenarios = std::slice::from_ref(sc);
    let mut model = build_model(vb, scenarios, da, risk, fee);
    model.pin_first_stage(fs);
    let out = model.solve(LpTols::tight())?;
    if !out.usable() {
        return Err(BiddingError::SolverFailure(format!(
            "recourse replay: {:?}",
            out.status
        )));
    }
    let cand = extract_candidate(&model, &out.x, BidMode::Cooptimized, scenarios, da, risk, fee)?;
    Ok(cand.solution.recourse_mw.into_iter().next().unwrap())
}
