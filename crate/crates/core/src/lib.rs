//! Planning toolkit for an EV aggregator bidding into the Nordic 15-minute
//! mFRR energy activation market.
//!
//! The pipeline goes: sample a synthetic residential charging cohort
//! ([`fleet`]), aggregate it into virtual-battery envelopes ([`envelope`]),
//! calibrate and sample joint regulation-state/price scenarios ([`scenario`]),
//! solve the risk-aware two-stage bidding program in independent or
//! co-optimised mode ([`bidding`]), and replay solutions into settlement KPIs
//! and mode comparisons ([`settlement`]). [`pipeline`] wires the stages into a
//! reproducible end-to-end run driven by a flat config file ([`config`]).
//!
//! Market conventions used throughout: quarter-hour (QH) market time units of
//! 0.25 h, integer-MW bids with a 1 MW minimum, up-regulation = reduce
//! charging, down-regulation = increase charging, one-price imbalance
//! settlement at the QH's marginal activation price.

pub mod bidding;
pub mod config;
pub mod defaults;
pub mod envelope;
pub mod fleet;
pub mod lp;
pub mod pipeline;
pub mod scenario;
pub mod settlement;

/// Quarter-hours per day.
pub const QH_PER_DAY: usize = 96;
/// Hours per quarter-hour market time unit.
pub const QH_HOURS: f64 = 0.25;

pub use bidding::{BidMode, BidSolution, RiskParams, SolveOptions};
pub use envelope::VirtualBattery;
pub use fleet::{EvSession, FleetSpec};
pub use scenario::{DayAheadPrices, MarketScenario, RegulationState};
pub use settlement::{KpiPanel, ProfitBreakdown};
