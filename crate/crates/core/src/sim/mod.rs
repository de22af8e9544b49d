//! Agent-based Monte Carlo over the protocol engine.
//!
//! A [`ScenarioConfig`] names the structure parameters, the agents and their
//! strategies, and the experiment to run. Every replicate drives a fresh
//! [`Engine`](crate::protocol::Engine) from its own ChaCha8 stream, so a
//! report depends only on the config and the master seed, never on thread
//! count or scheduling.
//!
//! Money never enters the ledger. The runner keeps each agent's cash on the
//! side, crediting the payouts the engine reports and debiting prices and
//! costs; an agent's net is its cash delta plus the change in value of its
//! tokens.

mod dilution;
mod grid;
mod report;
mod runner;
mod stats;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::Issuance;
use crate::protocol::{MembershipMode, ProtocolConfig};
use crate::structure::Params;
use crate::units::{AgentId, Fraction, MonetaryAmount, Tick, TokenAmount};

pub use dilution::{depth_dilution_scan, DilutionRow};
pub use grid::{estimate_theorem2, generate_cells, GridCellReport, LeakCell};
pub use report::{
    run, AgentSummary, Comparison, EventCounts, MakerReturnRow, SimReport, REPORT_SCHEMA,
};
pub use runner::{replicate_seed, run_replicate, ReplicateOutcome};
pub use stats::Summary;

pub const SCENARIO_SCHEMA: &str = "tdm-scenario/1";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("invariant violated in replicate {replicate}: {message}")]
    Invariant { replicate: u64, message: String },
    #[error("engine rejected setup: {0}")]
    Setup(String),
}

impl SimError {
    fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Strategy {
    /// Acquires data at `acquisition_cost` each and proposes it.
    HonestMaker {
        elements_per_epoch: u32,
        acquisition_cost: MonetaryAmount,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_elements: Option<u32>,
    },
    /// Votes on every open poll, judging correctly with probability
    /// `accuracy`, and challenges invalid elements it notices.
    HonestVoter {
        accuracy: Fraction,
    },
    LazyHolder,
    /// Spends up to `⌊kD / (cN)⌋` liveness checks on each off-chain element.
    LivenessProber {
        check_cost: MonetaryAmount,
        expected_sales: u64,
        sale_price: MonetaryAmount,
    },
    /// Proposes garbage with probability `garbage_rate` each epoch.
    Troll {
        garbage_rate: Fraction,
    },
    /// Challenges valid elements until its losses exceed `loss_budget`.
    Madman {
        loss_budget: MonetaryAmount,
    },
    /// Re-proposes live content under `identity_count` fresh identities.
    SybilDuplicator {
        identity_count: u32,
    },
    /// Buys a membership at tick 0 and leaks the data at `leak_tick`.
    Leaker {
        leak_tick: Tick,
    },
    /// Buys access once at `arrival_tick` if the price is at most `price`.
    MembershipBuyer {
        price: MonetaryAmount,
        arrival_tick: Tick,
    },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::HonestMaker { .. } => "honest_maker",
            Self::HonestVoter { .. } => "honest_voter",
            Self::LazyHolder => "lazy_holder",
            Self::LivenessProber { .. } => "liveness_prober",
            Self::Troll { .. } => "troll",
            Self::Madman { .. } => "madman",
            Self::SybilDuplicator { .. } => "sybil_duplicator",
            Self::Leaker { .. } => "leaker",
            Self::MembershipBuyer { .. } => "membership_buyer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    pub strategy: Strategy,
    #[serde(default)]
    pub tokens: TokenAmount,
    #[serde(default)]
    pub cash: MonetaryAmount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    /// Buyers acquire a membership and its query stake.
    #[default]
    Membership,
    /// Buyers pay a per-access fee and receive no tokens.
    Transaction,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Experiment {
    /// Run the configured agents for `replicates` replicates.
    #[default]
    Scenario,
    /// Monte Carlo check of the leak expectation over a grid of cells.
    LeakGrid {
        #[serde(default)]
        cells: Vec<LeakCell>,
        /// Extra cells drawn from the master seed.
        #[serde(default)]
        random_cells: u32,
        replicates_per_cell: u64,
    },
    /// Cost of forcing a quorum at each nesting depth.
    DepthDilution {
        max_depth: u32,
        base_supply: TokenAmount,
        /// Each level's supply is this fraction of its parent's.
        shrink: Fraction,
    },
}

fn default_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}

fn default_issuance() -> Issuance {
    Issuance::Mining
}

fn one() -> u64 {
    1
}

fn fraction_one() -> Fraction {
    Fraction::ONE
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default = "default_issuance")]
    pub issuance: Issuance,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub horizon: Tick,
    #[serde(default = "one")]
    pub replicates: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub access_mode: AccessMode,
    /// Probability that a maker's element is valid.
    #[serde(default = "fraction_one")]
    pub ground_truth: Fraction,
    /// Probability that a leak is detected.
    #[serde(default)]
    pub p_detect: Fraction,
    /// Fraction of the price that survives an undetected leak.
    #[serde(default = "fraction_one")]
    pub beta: Fraction,
    /// Worth of one counterfeit sale as a fraction of the price.
    #[serde(default)]
    pub gamma: Fraction,
    /// Counterfeit sales after an undetected leak.
    #[serde(default)]
    pub counterfeit_sales: u64,
    /// Monetary value of one token when computing net returns.
    #[serde(default)]
    pub token_unit_value: MonetaryAmount,
    /// Per-epoch blob loss probability of the content store.
    #[serde(default)]
    pub drop_probability: Fraction,
    #[serde(default)]
    pub experiment: Experiment,
}

impl ScenarioConfig {
    /// Field-level semantic checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(SimError::config(
                "schema",
                format!("expected `{SCENARIO_SCHEMA}`"),
            ));
        }
        self.params
            .validate()
            .map_err(|e| SimError::config("params", e.to_string()))?;
        let fractions = [
            ("ground_truth", self.ground_truth),
            ("p_detect", self.p_detect),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("drop_probability", self.drop_probability),
        ];
        for (name, f) in fractions {
            if !f.is_unit_interval() {
                return Err(SimError::config(name, format!("{f} is outside [0, 1]")));
            }
        }
        if self.issuance == Issuance::Predetermined
            && self.protocol.membership_mode == MembershipMode::Minted
            && !self.params.query_stake.is_zero()
        {
            return Err(SimError::config(
                "protocol.membership_mode",
                "minted query stakes need mining issuance; use steady_state",
            ));
        }
        match &self.experiment {
            Experiment::Scenario => self.validate_scenario(),
            Experiment::LeakGrid {
                cells,
                random_cells,
                replicates_per_cell,
            } => {
                if *replicates_per_cell == 0 {
                    return Err(SimError::config(
                        "experiment.replicates_per_cell",
                        "must be at least 1",
                    ));
                }
                if cells.is_empty() && *random_cells == 0 {
                    return Err(SimError::config("experiment.cells", "grid has no cells"));
                }
                for (i, c) in cells.iter().enumerate() {
                    c.validate().map_err(|(f, m)| {
                        SimError::config(format!("experiment.cells[{i}].{f}"), m)
                    })?;
                }
                Ok(())
            }
            Experiment::DepthDilution {
                max_depth,
                base_supply,
                shrink,
            } => {
                if *max_depth == 0 {
                    return Err(SimError::config(
                        "experiment.max_depth",
                        "must be at least 1",
                    ));
                }
                if base_supply.is_zero() {
                    return Err(SimError::config(
                        "experiment.base_supply",
                        "must be positive",
                    ));
                }
                if !shrink.is_unit_interval() {
                    return Err(SimError::config(
                        "experiment.shrink",
                        format!("{shrink} is outside [0, 1]"),
                    ));
                }
                Ok(())
            }
        }
    }

    fn validate_scenario(&self) -> Result<(), SimError> {
        if self.agents.is_empty() {
            return Err(SimError::config("agents", "at least one agent is required"));
        }
        if self.horizon == 0 {
            return Err(SimError::config("horizon", "must be at least 1 tick"));
        }
        if self.replicates == 0 {
            return Err(SimError::config("replicates", "must be at least 1"));
        }
        if self.agents.iter().all(|a| a.tokens.is_zero()) {
            return Err(SimError::config(
                "agents",
                "someone must hold tokens at genesis",
            ));
        }
        let mut seen = BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            let field = |f: &str| format!("agents[{i}].{f}");
            if a.id.as_str().is_empty() || a.id.as_str().contains('#') {
                return Err(SimError::config(
                    field("id"),
                    "must be non-empty and must not contain `#`",
                ));
            }
            if !seen.insert(a.id.clone()) {
                return Err(SimError::config(
                    field("id"),
                    format!("duplicate agent id {}", a.id),
                ));
            }
            match &a.strategy {
                Strategy::HonestVoter { accuracy } if !accuracy.is_unit_interval() => {
                    return Err(SimError::config(
                        field("strategy.accuracy"),
                        "must be in [0, 1]",
                    ));
                }
                Strategy::Troll { garbage_rate } if !garbage_rate.is_unit_interval() => {
                    return Err(SimError::config(
                        field("strategy.garbage_rate"),
                        "must be in [0, 1]",
                    ));
                }
                Strategy::LivenessProber { check_cost, .. } if check_cost.is_zero() => {
                    return Err(SimError::config(
                        field("strategy.check_cost"),
                        "must be positive",
                    ));
                }
                Strategy::LivenessProber { .. } if !self.params.offchain => {
                    return Err(SimError::config(
                        field("strategy"),
                        "liveness probing needs params.offchain",
                    ));
                }
                Strategy::Leaker { .. } if self.access_mode != AccessMode::Membership => {
                    return Err(SimError::config(
                        field("strategy"),
                        "a leaker needs membership access",
                    ));
                }
                Strategy::MembershipBuyer { .. }
                    if self.access_mode == AccessMode::Transaction
                        && self.protocol.access_fee.is_zero() =>
                {
                    return Err(SimError::config(
                        "protocol.access_fee",
                        "transaction access needs a positive fee",
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
