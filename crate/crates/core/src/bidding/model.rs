//! Deterministic-equivalent LP of the two-stage program, with handles for
//! retargeting bound rows (branch-and-bound, first-stage pinning) and exact
//! re-evaluation of extracted candidates.

use serde::{Deserialize, Serialize};

use crate::envelope::VirtualBattery;
use crate::lp::{LeRow, LpBuilder, LpModel, LpOutcome, LpTols};
use crate::scenario::{DayAheadPrices, MarketScenario, RegulationState};
use crate::settlement;
use crate::QH_HOURS;

use super::{
    BidMode, BidSolution, BiddingError, FirstStage, RiskParams, SolverInfo, BUFFER_FACTOR,
    REG_EPS,
};

/// Column layout of the deterministic equivalent.
///
/// First stage: position `p_da`, baseline `c_base` with its cumulative chain
/// `e_base`, deviation split `dev_p/dev_m` for `|c_base - p_da|`, bids
/// `bu/bd`. Per scenario: realized charging `c`, cumulative chain `e`, and
/// the imbalance settlement epigraph `z` (EUR per QH: `z >= (lam_act +- fee)
/// * imbalance`, tight at the optimum). CVaR auxiliaries `eta` per scenario
/// and the VaR level `zeta` close the layout.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub t_len: usize,
    pub s_len: usize,
    pub p_da: usize,
    pub e_pda: usize,
    pub c_base: usize,
    pub e_base: usize,
    pub dev_p: usize,
    pub dev_m: usize,
    pub bu: usize,
    pub bd: usize,
    sc0: usize,
    sc_stride: usize,
    pub eta: usize,
    pub zeta: usize,
}

impl Layout {
    fn new(t_len: usize, s_len: usize) -> Self {
        let p_da = 0;
        let e_pda = p_da + t_len;
        let c_base = e_pda + t_len + 1;
        let e_base = c_base + t_len;
        let dev_p = e_base + t_len + 1;
        let dev_m = dev_p + t_len;
        let bu = dev_m + t_len;
        let bd = bu + t_len;
        let sc0 = bd + t_len;
        let sc_stride = t_len + (t_len + 1) + t_len;
        let eta = sc0 + s_len * sc_stride;
        let zeta = eta + s_len;
        Self {
            t_len,
            s_len,
            p_da,
            e_pda,
            c_base,
            e_base,
            dev_p,
            dev_m,
            bu,
            bd,
            sc0,
            sc_stride,
            eta,
            zeta,
        }
    }

    pub fn n_cols(&self) -> usize {
        self.zeta + 1
    }

    pub fn c(&self, s: usize, t: usize) -> usize {
        self.sc0 + s * self.sc_stride + t
    }

    pub fn e(&self, s: usize, k: usize) -> usize {
        self.sc0 + s * self.sc_stride + self.t_len + k
    }

    pub fn z(&self, s: usize, t: usize) -> usize {
        self.sc0 + s * self.sc_stride + 2 * self.t_len + 1 + t
    }
}

/// Size summary of a built instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub n_vars: usize,
    pub n_rows: usize,
    pub n_integer: usize,
}

pub(crate) struct BidModel {
    pub lp: LpModel,
    pub layout: Layout,
    pub summary: InstanceSummary,
    pub cap_up: Vec<u32>,
    pub cap_dn: Vec<u32>,
    p_max: Vec<f64>,
    pda_ub: Vec<LeRow>,
    pda_lb: Vec<LeRow>,
    cb_ub: Vec<LeRow>,
    cb_lb: Vec<LeRow>,
    bu_ub: Vec<LeRow>,
    bu_lb: Vec<LeRow>,
    bd_ub: Vec<LeRow>,
    bd_lb: Vec<LeRow>,
}

/// Activation indicator of a scenario at one QH.
fn indicators(sc: &MarketScenario, t: usize) -> (bool, bool) {
    match sc.states[t] {
        RegulationState::Up => (true, false),
        RegulationState::Down => (false, true),
        RegulationState::None => (false, false),
    }
}

/// Settlement price of a scenario at one QH (one-price rule; day-ahead price
/// when no direction is activated).
fn settlement_price(sc: &MarketScenario, da: &DayAheadPrices, t: usize) -> f64 {
    match sc.states[t] {
        RegulationState::Up => sc.price_up_eur_mwh[t].expect("validated"),
        RegulationState::Down => sc.price_dn_eur_mwh[t].expect("validated"),
        RegulationState::None => da.eur_mwh[t],
    }
}

pub(crate) fn build_model(
    vb: &VirtualBattery,
    scenarios: &[MarketScenario],
    da: &DayAheadPrices,
    risk: &RiskParams,
    fee: f64,
) -> BidModel {
    let t_len = vb.horizon_qh;
    let s_len = scenarios.len();
    let layout = Layout::new(t_len, s_len);
    let delta = QH_HOURS;
    let beta = risk.beta;
    let one_minus_beta = 1.0 - beta;
    let etot = vb.total_energy_mwh();

    let mut b = LpBuilder::new();
    let n = b.add_cols(layout.n_cols());
    debug_assert_eq!(n, 0);

    // --- objective ------------------------------------------------------
    for t in 0..t_len {
        b.add_to_cost(layout.p_da + t, one_minus_beta * delta * da.eur_mwh[t]);
        b.add_to_cost(layout.bu + t, REG_EPS);
        b.add_to_cost(layout.bd + t, REG_EPS);
        b.add_to_cost(layout.dev_p + t, REG_EPS);
        b.add_to_cost(layout.dev_m + t, REG_EPS);
    }
    for (s, sc) in scenarios.iter().enumerate() {
        let w = sc.weight;
        for t in 0..t_len {
            let (up, dn) = indicators(sc, t);
            if up {
                b.add_to_cost(
                    layout.bu + t,
                    -one_minus_beta * w * delta * sc.price_up_eur_mwh[t].expect("validated"),
                );
            }
            if dn {
                b.add_to_cost(
                    layout.bd + t,
                    one_minus_beta * w * delta * sc.price_dn_eur_mwh[t].expect("validated"),
                );
            }
            b.add_to_cost(layout.z(s, t), one_minus_beta * w);
        }
        if beta > 0.0 {
            b.add_to_cost(layout.eta + s, beta * w / (1.0 - risk.alpha));
        }
    }
    if beta > 0.0 {
        b.add_to_cost(layout.zeta, -beta);
    }

    // --- first-stage structure -------------------------------------------
    // Day-ahead position nomination chain: the cumulative position may never
    // exceed what the fleet could physically have absorbed by then
    // (earliest-start envelope). No lower bound: under-procurement is how
    // demand shifts into the balancing market.
    b.add_eq(vec![(layout.e_pda, 1.0)], 0.0);
    for t in 0..t_len {
        b.add_eq(
            vec![
                (layout.e_pda + t + 1, 1.0),
                (layout.e_pda + t, -1.0),
                (layout.p_da + t, -delta),
            ],
            0.0,
        );
    }
    // Baseline cumulative chain, pinned to the total need at the end.
    b.add_eq(vec![(layout.e_base, 1.0)], 0.0);
    for t in 0..t_len {
        b.add_eq(
            vec![
                (layout.e_base + t + 1, 1.0),
                (layout.e_base + t, -1.0),
                (layout.c_base + t, -delta),
            ],
            0.0,
        );
    }
    b.add_eq(vec![(layout.e_base + t_len, 1.0)], etot);
    // dev_p - dev_m = c_base - p_da
    for t in 0..t_len {
        b.add_eq(
            vec![
                (layout.dev_p + t, 1.0),
                (layout.dev_m + t, -1.0),
                (layout.c_base + t, -1.0),
                (layout.p_da + t, 1.0),
            ],
            0.0,
        );
    }

    // --- scenario structure ------------------------------------------------
    for s in 0..s_len {
        b.add_eq(vec![(layout.e(s, 0), 1.0)], 0.0);
        for t in 0..t_len {
            b.add_eq(
                vec![
                    (layout.e(s, t + 1), 1.0),
                    (layout.e(s, t), -1.0),
                    (layout.c(s, t), -delta),
                ],
                0.0,
            );
        }
        b.add_eq(vec![(layout.e(s, t_len), 1.0)], etot);
    }
    // CVaR auxiliaries: with beta = 0 the machinery is unused; pin it so the
    // LP has no zero-cost free directions.
    if beta == 0.0 {
        b.add_eq(vec![(layout.zeta, 1.0)], 0.0);
        for s in 0..s_len {
            b.add_eq(vec![(layout.eta + s, 1.0)], 0.0);
        }
    }

    // --- inequalities -----------------------------------------------------
    let mut pda_ub = Vec::with_capacity(t_len);
    let mut pda_lb = Vec::with_capacity(t_len);
    let mut cb_ub = Vec::with_capacity(t_len);
    let mut cb_lb = Vec::with_capacity(t_len);
    let mut bu_ub = Vec::with_capacity(t_len);
    let mut bu_lb = Vec::with_capacity(t_len);
    let mut bd_ub = Vec::with_capacity(t_len);
    let mut bd_lb = Vec::with_capacity(t_len);
    let mut cap_up = Vec::with_capacity(t_len);
    let mut cap_dn = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let p_max = vb.p_max_mw[t];
        // Day-ahead position capped at physical delivery capability.
        pda_ub.push(b.add_le(vec![(layout.p_da + t, 1.0)], p_max));
        pda_lb.push(b.add_le(vec![(layout.p_da + t, -1.0)], 0.0));
        cb_ub.push(b.add_le(vec![(layout.c_base + t, 1.0)], p_max));
        cb_lb.push(b.add_le(vec![(layout.c_base + t, -1.0)], 0.0));
        // Integer bid caps implied by the availability buffer.
        let cap = ((p_max / BUFFER_FACTOR) + 1e-9).floor().max(0.0) as u32;
        cap_up.push(cap);
        cap_dn.push(cap);
        bu_ub.push(b.add_le(vec![(layout.bu + t, 1.0)], cap as f64));
        bu_lb.push(b.add_le(vec![(layout.bu + t, -1.0)], 0.0));
        bd_ub.push(b.add_le(vec![(layout.bd + t, 1.0)], cap as f64));
        bd_lb.push(b.add_le(vec![(layout.bd + t, -1.0)], 0.0));
        // Availability buffers tie bids to the baseline plan.
        b.add_le(
            vec![(layout.bu + t, BUFFER_FACTOR), (layout.c_base + t, -1.0)],
            0.0,
        );
        b.add_le(
            vec![(layout.c_base + t, 1.0), (layout.bd + t, BUFFER_FACTOR)],
            p_max,
        );
        b.add_le(vec![(layout.dev_p + t, -1.0)], 0.0);
        b.add_le(vec![(layout.dev_m + t, -1.0)], 0.0);
    }
    // Baseline band (interior boundaries; ends are pinned by equalities).
    for k in 1..t_len {
        b.add_le(vec![(layout.e_base + k, 1.0)], vb.e_max_mwh[k]);
        b.add_le(vec![(layout.e_base + k, -1.0)], -vb.e_min_mwh[k]);
    }
    // Position absorbability cap.
    for k in 1..=t_len {
        b.add_le(vec![(layout.e_pda + k, 1.0)], vb.e_max_mwh[k]);
    }
    for (s, sc) in scenarios.iter().enumerate() {
        for t in 0..t_len {
            b.add_le(vec![(layout.c(s, t), 1.0)], vb.p_max_mw[t]);
            b.add_le(vec![(layout.c(s, t), -1.0)], 0.0);
            // Settlement epigraph: z >= (lam_act +- fee) * imbalance, with
            // imbalance = delta * (c - p_da + bu*1[up] - bd*1[dn]). With no
            // fee both pieces coincide and one row suffices.
            let (up, dn) = indicators(sc, t);
            let lam_act = settlement_price(sc, da, t);
            let slopes: &[f64] = if fee > 0.0 {
                &[lam_act + fee, lam_act - fee]
            } else {
                &[lam_act]
            };
            for &k in slopes {
                let mut row = vec![
                    (layout.z(s, t), -1.0),
                    (layout.c(s, t), k * delta),
                    (layout.p_da + t, -k * delta),
                ];
                if up {
                    row.push((layout.bu + t, k * delta));
                }
                if dn {
                    row.push((layout.bd + t, -k * delta));
                }
                b.add_le(row, 0.0);
            }
        }
        for k in 1..t_len {
            b.add_le(vec![(layout.e(s, k), 1.0)], vb.e_max_mwh[k]);
            b.add_le(vec![(layout.e(s, k), -1.0)], -vb.e_min_mwh[k]);
        }
    }
    // CVaR tail rows: zeta - eta_s - profit_s <= 0.
    if beta > 0.0 {
        for (s, sc) in scenarios.iter().enumerate() {
            let mut row: Vec<(usize, f64)> = vec![(layout.zeta, 1.0), (layout.eta + s, -1.0)];
            for t in 0..t_len {
                let (up, dn) = indicators(sc, t);
                row.push((layout.p_da + t, delta * da.eur_mwh[t]));
                if up {
                    row.push((layout.bu + t, -delta * sc.price_up_eur_mwh[t].expect("validated")));
                }
                if dn {
                    row.push((layout.bd + t, delta * sc.price_dn_eur_mwh[t].expect("validated")));
                }
                row.push((layout.z(s, t), 1.0));
            }
            b.add_le(row, 0.0);
            b.add_le(vec![(layout.eta + s, -1.0)], 0.0);
        }
    }

    let lp = b.build();
    let summary = InstanceSummary {
        n_vars: lp.n_cols(),
        n_rows: lp.n_rows(),
        n_integer: 2 * t_len,
    };
    BidModel {
        lp,
        layout,
        summary,
        cap_up,
        cap_dn,
        p_max: vb.p_max_mw.clone(),
        pda_ub,
        pda_lb,
        cb_ub,
        cb_lb,
        bu_ub,
        bu_lb,
        bd_ub,
        bd_lb,
    }
}

impl BidModel {
    pub fn solve(&self, tols: LpTols) -> Result<LpOutcome, crate::lp::LpError> {
        self.lp.solve(tols)
    }

    /// Set branch bounds on the integer bid variables.
    pub fn set_bid_bounds(&mut self, bu: &[(u32, u32)], bd: &[(u32, u32)]) {
        for t in 0..self.layout.t_len {
            self.lp.set_le_rhs(self.bu_lb[t], -(bu[t].0 as f64));
            self.lp.set_le_rhs(self.bu_ub[t], bu[t].1 as f64);
            self.lp.set_le_rhs(self.bd_lb[t], -(bd[t].0 as f64));
            self.lp.set_le_rhs(self.bd_ub[t], bd[t].1 as f64);
        }
    }

    /// Pin the bids to fixed integer values.
    pub fn pin_bids(&mut self, bu: &[u32], bd: &[u32]) {
        for t in 0..self.layout.t_len {
            self.lp.set_le_rhs(self.bu_lb[t], -(bu[t] as f64));
            self.lp.set_le_rhs(self.bu_ub[t], bu[t] as f64);
            self.lp.set_le_rhs(self.bd_lb[t], -(bd[t] as f64));
            self.lp.set_le_rhs(self.bd_ub[t], bd[t] as f64);
        }
    }

    pub fn restore_bid_bounds(&mut self) {
        for t in 0..self.layout.t_len {
            self.lp.set_le_rhs(self.bu_lb[t], 0.0);
            self.lp.set_le_rhs(self.bu_ub[t], self.cap_up[t] as f64);
            self.lp.set_le_rhs(self.bd_lb[t], 0.0);
            self.lp.set_le_rhs(self.bd_ub[t], self.cap_dn[t] as f64);
        }
    }

    /// Freeze the day-ahead position (independent mode).
    pub fn pin_p_da(&mut self, p_da: &[f64]) {
        for t in 0..self.layout.t_len {
            self.lp.set_le_rhs(self.pda_ub[t], p_da[t]);
            self.lp.set_le_rhs(self.pda_lb[t], -p_da[t]);
        }
    }

    /// Pin the full first stage (warm-start evaluation).
    pub fn pin_first_stage(&mut self, fs: &FirstStage) {
        self.pin_p_da(&fs.p_da_mw);
        for t in 0..self.layout.t_len {
            self.lp.set_le_rhs(self.cb_ub[t], fs.c_base_mw[t]);
            self.lp.set_le_rhs(self.cb_lb[t], -fs.c_base_mw[t]);
        }
        self.pin_bids(&fs.bid_up_mw, &fs.bid_dn_mw);
    }

    pub fn restore_first_stage(&mut self) {
        for t in 0..self.layout.t_len {
            self.lp.set_le_rhs(self.pda_ub[t], self.p_max[t]);
            self.lp.set_le_rhs(self.pda_lb[t], 0.0);
            self.lp.set_le_rhs(self.cb_ub[t], self.p_max[t]);
            self.lp.set_le_rhs(self.cb_lb[t], 0.0);
        }
        self.restore_bid_bounds();
    }

    /// Relaxed bid values of an LP point.
    pub fn bid_values<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let l = &self.layout;
        (
            &x[l.bu..l.bu + l.t_len],
            &x[l.bd..l.bd + l.t_len],
        )
    }
}

/// A fully evaluated integer-feasible candidate.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub solution: BidSolution,
    /// Model objective including regularization terms (search metric).
    pub internal_objective: f64,
    /// CVaR recomputed at the LP's VaR level (consistency diagnostic).
    pub cvar_from_zeta: Option<f64>,
}

/// Build the reported solution from an LP point with integral bids, and
/// recompute all cash flows exactly from the extracted series.
pub(crate) fn extract_candidate(
    model: &BidModel,
    x: &[f64],
    mode: BidMode,
    scenarios: &[MarketScenario],
    da: &DayAheadPrices,
    risk: &RiskParams,
    fee: f64,
) -> Result<Candidate, BiddingError> {
    let l = &model.layout;
    let t_len = l.t_len;
    let clip = |v: f64| if v.abs() < 1e-9 { 0.0 } else { v };
    let p_da: Vec<f64> = (0..t_len).map(|t| clip(x[l.p_da + t]).max(0.0)).collect();
    let c_base: Vec<f64> = (0..t_len).map(|t| clip(x[l.c_base + t]).max(0.0)).collect();
    let bid_up: Vec<u32> = (0..t_len)
        .map(|t| x[l.bu + t].round().max(0.0) as u32)
        .collect();
    let bid_dn: Vec<u32> = (0..t_len)
        .map(|t| x[l.bd + t].round().max(0.0) as u32)
        .collect();

    let mut recourse = Vec::with_capacity(l.s_len);
    for (s, sc) in scenarios.iter().enumerate() {
        let mut xs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (up, dn) = indicators(sc, t);
            let c = x[l.c(s, t)];
            let dev =
                c - c_base[t] + (up as u32 * bid_up[t]) as f64 - (dn as u32 * bid_dn[t]) as f64;
            xs.push(dev);
        }
        recourse.push(xs);
    }

    let mut solution = BidSolution {
        mode,
        horizon_qh: t_len,
        risk: *risk,
        fee_eur_mwh: fee,
        p_da_mw: p_da,
        c_base_mw: c_base,
        bid_up_mw: bid_up,
        bid_dn_mw: bid_dn,
        recourse_mw: recourse,
        scenario_profit_eur: Vec::new(),
        objective_value: 0.0,
        solver: SolverInfo::default(),
    };

    let mut profits = Vec::with_capacity(l.s_len);
    for (s, sc) in scenarios.iter().enumerate() {
        let pb = settlement::scenario_profit(&solution, s, sc, da, fee)
            .map_err(|e| BiddingError::SolverFailure(format!("profit replay: {e}")))?;
        profits.push(pb.total_eur);
    }
    let weights: Vec<f64> = scenarios.iter().map(|s| s.weight).collect();
    let expected: f64 = profits.iter().zip(&weights).map(|(p, w)| p * w).sum();
    let objective_value = if risk.beta > 0.0 {
        let cvar = settlement::cvar_sorted(&profits, &weights, risk.alpha);
        (1.0 - risk.beta) * expected + risk.beta * cvar
    } else {
        expected
    };

    let reg: f64 = REG_EPS
        * (solution
            .bid_up_mw
            .iter()
            .chain(&solution.bid_dn_mw)
            .map(|&v| v as f64)
            .sum::<f64>()
            + solution
                .c_base_mw
                .iter()
                .zip(&solution.p_da_mw)
                .map(|(c, p)| (c - p).abs())
                .sum::<f64>());
    let internal_objective = objective_value - reg;

    let cvar_from_zeta = if risk.beta > 0.0 {
        let zeta = x[l.zeta];
        let tail: f64 = profits
            .iter()
            .zip(&weights)
            .map(|(p, w)| w * (zeta - p).max(0.0))
            .sum();
        Some(zeta - tail / (1.0 - risk.alpha))
    } else {
        None
    };

    solution.scenario_profit_eur = profits;
    solution.objective_value = objective_value;
    Ok(Candidate {
        solution,
        internal_objective,
        cvar_from_zeta,
    })
}
