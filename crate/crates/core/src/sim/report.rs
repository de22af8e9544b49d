use std::collections::BTreeMap;

use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dilution::{depth_dilution_scan, DilutionRow};
use super::grid::{estimate_theorem2, generate_cells, GridCellReport};
use super::runner::{run_replicate, ReplicateOutcome};
use super::stats::Summary;
use super::{Experiment, ScenarioConfig, SimError};
use crate::canonical::{canonical_digest, Digest};
use crate::economics::{self, from_fraction, from_money, render_fixed, Rational};
use crate::units::{AgentId, MonetaryAmount, TokenAmount};

pub const REPORT_SCHEMA: &str = "tdm-report/1";

fn add_tokens(a: TokenAmount, b: TokenAmount) -> TokenAmount {
    TokenAmount::from_micros(a.micros().saturating_add(b.micros()))
}

/// Protocol events, summed over replicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub proposals: u64,
    pub duplicates_refused: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub challenges: u64,
    pub upheld: u64,
    pub dismissed: u64,
    pub liveness_probes: u64,
    pub liveness_passed: u64,
    pub liveness_failed: u64,
    pub forks: u64,
    pub cancelled: u64,
    pub memberships: u64,
    pub access_payments: u64,
    pub leaks: u64,
    pub leaks_detected: u64,
    pub slashed: u64,
    pub blobs_dropped: u64,
    pub rewards_released: u64,
    /// Agent actions the engine refused (insufficient tokens, duplicates,
    /// closed polls and so on).
    pub refused_actions: u64,
    pub minted: TokenAmount,
    pub burned: TokenAmount,
}

impl EventCounts {
    fn absorb(&mut self, o: &EventCounts) {
        self.proposals += o.proposals;
        self.duplicates_refused += o.duplicates_refused;
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.challenges += o.challenges;
        self.upheld += o.upheld;
        self.dismissed += o.dismissed;
        self.liveness_probes += o.liveness_probes;
        self.liveness_passed += o.liveness_passed;
        self.liveness_failed += o.liveness_failed;
        self.forks += o.forks;
        self.cancelled += o.cancelled;
        self.memberships += o.memberships;
        self.access_payments += o.access_payments;
        self.leaks += o.leaks;
        self.leaks_detected += o.leaks_detected;
        self.slashed += o.slashed;
        self.blobs_dropped += o.blobs_dropped;
        self.rewards_released += o.rewards_released;
        self.refused_actions += o.refused_actions;
        self.minted = add_tokens(self.minted, o.minted);
        self.burned = add_tokens(self.burned, o.burned);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub id: AgentId,
    pub strategy: String,
    pub mean_net: String,
    pub stderr: String,
    pub min_net: String,
    pub max_net: String,
    pub mean_receipts: String,
}

/// A closed-form value next to its Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub closed_form: String,
    pub monte_carlo_mean: String,
    pub stderr: String,
    pub replicates: u64,
    pub within_3_stderr: bool,
}

/// A maker's realized cash against `Σ αᵢ·Dᵢ − E` from replicate 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MakerReturnRow {
    pub agent: AgentId,
    pub elements: u32,
    pub sales: u64,
    /// Ownership fraction at every sale, when it never changed.
    pub alpha: Option<String>,
    /// Price of every sale, when it never changed.
    pub price: Option<MonetaryAmount>,
    pub cost: MonetaryAmount,
    pub closed_form: String,
    pub realized: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema: String,
    pub experiment: String,
    pub config_digest: Digest,
    pub master_seed: u64,
    pub replicates: u64,
    pub agents: Vec<AgentSummary>,
    pub comparisons: Vec<Comparison>,
    pub maker_return: Vec<MakerReturnRow>,
    pub events: EventCounts,
    /// Checked in every replicate; a violation aborts the run instead.
    pub invariants_checked: Vec<String>,
    pub leak_grid: Vec<GridCellReport>,
    pub depth_dilution: Vec<DilutionRow>,
    /// Engine state digest at the end of replicate 0.
    pub final_state_digest: Option<Digest>,
    /// Event log of replicate 0; written next to the report, not inside it.
    #[serde(skip)]
    pub event_log: Option<String>,
}

fn fixed_micros(m: i64) -> String {
    render_fixed(&economics::micro_ratio(m as i128))
}

fn empty_report(cfg: &ScenarioConfig, experiment: &str) -> Result<SimReport, SimError> {
    Ok(SimReport {
        schema: REPORT_SCHEMA.to_string(),
        experiment: experiment.to_string(),
        config_digest: canonical_digest(cfg).map_err(|e| SimError::Setup(e.to_string()))?,
        master_seed: cfg.master_seed,
        replicates: 0,
        agents: Vec::new(),
        comparisons: Vec::new(),
        maker_return: Vec::new(),
        events: EventCounts::default(),
        invariants_checked: Vec::new(),
        leak_grid: Vec::new(),
        depth_dilution: Vec::new(),
        final_state_digest: None,
        event_log: None,
    })
}

/// Validates `cfg` and runs its experiment.
pub fn run(cfg: &ScenarioConfig) -> Result<SimReport, SimError> {
    cfg.validate()?;
    match &cfg.experiment {
        Experiment::Scenario => run_scenario(cfg),
        Experiment::LeakGrid {
            cells,
            random_cells,
            replicates_per_cell,
        } => {
            let mut all = cells.clone();
            all.extend(generate_cells(cfg.master_seed, *random_cells));
            let mut report = empty_report(cfg, "leak_grid")?;
            report.replicates = *replicates_per_cell;
            report.leak_grid = estimate_theorem2(cfg.master_seed, &all, *replicates_per_cell)?;
            Ok(report)
        }
        Experiment::DepthDilution {
            max_depth,
            base_supply,
            shrink,
        } => {
            let mut report = empty_report(cfg, "depth_dilution")?;
            report.depth_dilution = depth_dilution_scan(
                &cfg.params,
                *base_supply,
                *shrink,
                *max_depth,
                cfg.token_unit_value,
            )?;
            Ok(report)
        }
    }
}

fn run_scenario(cfg: &ScenarioConfig) -> Result<SimReport, SimError> {
    let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates)
        .into_par_iter()
        .map(|i| run_replicate(cfg, i, i == 0, None))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    let mut report = empty_report(cfg, "scenario")?;
    report.replicates = cfg.replicates;
    report.invariants_checked = [
        "supply_conservation",
        "cash_closure",
        "no_free_lunch",
        "transaction_access",
    ]
    .map(String::from)
    .to_vec();

    let mut nets: BTreeMap<&AgentId, Summary> = BTreeMap::new();
    let mut receipts: BTreeMap<&AgentId, Summary> = BTreeMap::new();
    for o in &outcomes {
        report.events.absorb(&o.events);
        for (a, n) in &o.nets {
            nets.entry(a).or_default().push(n.micros());
        }
        for (a, r) in &o.receipts {
            receipts.entry(a).or_default().push(r.micros() as i64);
        }
    }
    for spec in &cfg.agents {
        let s = &nets[&spec.id];
        report.agents.push(AgentSummary {
            id: spec.id.clone(),
            strategy: spec.strategy.name().to_string(),
            mean_net: render_fixed(&s.mean()),
            stderr: render_fixed(&s.stderr()),
            min_net: render_fixed(&s.min().unwrap_or_else(Rational::zero)),
            max_net: render_fixed(&s.max().unwrap_or_else(Rational::zero)),
            mean_receipts: render_fixed(&receipts[&spec.id].mean()),
        });
    }

    let first = &outcomes[0];
    for leak in &first.leaks {
        let cf = economics::dishonest_ev(
            &from_fraction(cfg.p_detect),
            &from_fraction(cfg.beta),
            &from_fraction(cfg.gamma),
            &leak.alpha,
            leak.sales_after_join,
            cfg.counterfeit_sales,
            &from_money(leak.price),
        );
        let s = &nets[&leak.agent];
        report.comparisons.push(Comparison {
            name: format!("leak_expectation:{}", leak.agent),
            closed_form: render_fixed(&cf),
            monte_carlo_mean: render_fixed(&s.mean()),
            stderr: render_fixed(&s.stderr()),
            replicates: s.count(),
            within_3_stderr: s.within(&cf, 3),
        });
    }
    for m in &first.makers {
        let cf: Rational = &m.oracle_income - from_money(m.cost);
        let realized = first.cash.get(&m.agent).map_or(0, |c| c.micros());
        report.maker_return.push(MakerReturnRow {
            agent: m.agent.clone(),
            elements: m.elements,
            sales: m.sales,
            alpha: (m.alphas.len() == 1)
                .then(|| m.alphas.iter().next().expect("one alpha").to_string()),
            price: (m.prices.len() == 1).then(|| *m.prices.iter().next().expect("one price")),
            cost: m.cost,
            closed_form: render_fixed(&cf),
            realized: fixed_micros(realized),
        });
    }
    report.final_state_digest = Some(first.state_digest);
    report.event_log = first.log.clone();
    Ok(report)
}
