use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

use super::{AccessMode, ScenarioConfig, SimError, Strategy};
use crate::canonical::Digest;
use crate::economics::{self, from_money, Rational};
use crate::ledger::{BondId, BondPurpose, TokenEconomy};
use crate::offchain::FaultModel;
use crate::protocol::{
    Choice, Command, Effect, Engine, PollId, PollKind, ProtocolError, Resolution,
};
use crate::structure::{DataRef, ElementBody, ElementId, TokenizedDataStructure, Visibility};
use crate::units::{
    AgentId, Fraction, MonetaryAmount, SignedAmount, Tick, TokenAmount, MICRO, TICKS_PER_DAY,
};

use super::report::EventCounts;

/// Agents act once per day, plus at every arrival and leak tick.
const ACTION_INTERVAL: Tick = TICKS_PER_DAY;

/// Seed of replicate `index`: SHA-256 of the master seed and the index.
pub fn replicate_seed(master_seed: u64, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"tdm-replicate");
    h.update(master_seed.to_le_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// What one maker earned, next to the ownership-weighted oracle income.
#[derive(Debug, Clone, PartialEq)]
pub struct MakerTally {
    pub agent: AgentId,
    pub elements: u32,
    pub cost: MonetaryAmount,
    /// `Σ αᵢ·Dᵢ` over every sale, with `αᵢ` read from the ledger just
    /// before sale `i`.
    pub oracle_income: Rational,
    /// Distinct ownership fractions seen at sales where the maker owned
    /// anything.
    pub alphas: BTreeSet<Rational>,
    pub prices: BTreeSet<MonetaryAmount>,
    pub sales: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakTally {
    pub agent: AgentId,
    pub price: MonetaryAmount,
    /// Query stake over supply right after joining.
    pub alpha: Rational,
    pub sales_after_join: u64,
    pub detected: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub index: u64,
    /// Net return per configured agent, Sybil identities folded in.
    pub nets: BTreeMap<AgentId, SignedAmount>,
    pub receipts: BTreeMap<AgentId, MonetaryAmount>,
    /// Cash delta per identity.
    pub cash: BTreeMap<AgentId, SignedAmount>,
    pub events: EventCounts,
    pub makers: Vec<MakerTally>,
    pub leaks: Vec<LeakTally>,
    /// Most liveness checks spent on any one element.
    pub max_probes_per_element: u64,
    pub supply: TokenAmount,
    pub state_digest: Digest,
    pub log: Option<String>,
}

#[derive(Debug, Clone, Default)]
struct AgentState {
    made: u32,
    losses: i64,
    joined: bool,
    leaked: bool,
    bought: bool,
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    index: u64,
    engine: Engine,
    rng: ChaCha8Rng,
    forced_detection: Option<bool>,
    cash: BTreeMap<AgentId, i64>,
    world: i64,
    receipts: BTreeMap<AgentId, i64>,
    stake_price: BTreeMap<BondId, MonetaryAmount>,
    valid: BTreeMap<ElementId, bool>,
    probes: BTreeMap<ElementId, u64>,
    madman_polls: BTreeMap<PollId, usize>,
    state: Vec<AgentState>,
    events: EventCounts,
    makers: Vec<MakerTally>,
    leaks: Vec<LeakTally>,
    payload_counter: u64,
    initial_supply: TokenAmount,
}

/// Runs replicate `index` of a scenario. `forced_detection` overrides the
/// leak detection draw; every other draw still comes from the replicate's
/// stream.
pub fn run_replicate(
    cfg: &ScenarioConfig,
    index: u64,
    record: bool,
    forced_detection: Option<bool>,
) -> Result<ReplicateOutcome, SimError> {
    let seed = replicate_seed(cfg.master_seed, index);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let fault = FaultModel {
        drop_probability: cfg.drop_probability,
        rng_seed: rng.random(),
    };
    let allocation: BTreeMap<AgentId, TokenAmount> = cfg
        .agents
        .iter()
        .map(|a| (a.id.clone(), a.tokens))
        .collect();
    let root = TokenizedDataStructure::new(cfg.params.clone(), "tdm", &allocation, cfg.issuance)
        .map_err(|e| SimError::Setup(e.to_string()))?;
    let initial_supply = root
        .economy()
        .map(TokenEconomy::total_supply)
        .unwrap_or(TokenAmount::ZERO);
    let engine = if record {
        Engine::recording(root, cfg.protocol.clone(), fault)
    } else {
        Engine::new(root, cfg.protocol.clone(), fault)
    }
    .map_err(|e| SimError::Setup(e.to_string()))?;
    let makers = cfg
        .agents
        .iter()
        .filter(|a| matches!(a.strategy, Strategy::HonestMaker { .. }))
        .map(|a| MakerTally {
            agent: a.id.clone(),
            elements: 0,
            cost: MonetaryAmount::ZERO,
            oracle_income: Rational::from_integer(0.into()),
            alphas: BTreeSet::new(),
            prices: BTreeSet::new(),
            sales: 0,
        })
        .collect();
    let runner = Runner {
        cfg,
        index,
        engine,
        rng,
        forced_detection,
        cash: BTreeMap::new(),
        world: 0,
        receipts: BTreeMap::new(),
        stake_price: BTreeMap::new(),
        valid: BTreeMap::new(),
        probes: BTreeMap::new(),
        madman_polls: BTreeMap::new(),
        state: vec![AgentState::default(); cfg.agents.len()],
        events: EventCounts::default(),
        makers,
        leaks: Vec::new(),
        payload_counter: 0,
        initial_supply,
    };
    runner.run()
}

fn sybil_identity(base: &AgentId, i: u32) -> AgentId {
    AgentId::new(format!("{base}#{i}"))
}

/// The configured agent an identity belongs to.
fn base_of(identity: &AgentId) -> &str {
    identity.as_str().split('#').next().unwrap_or_default()
}

impl Runner<'_> {
    fn run(mut self) -> Result<ReplicateOutcome, SimError> {
        let horizon = self.cfg.horizon;
        let mut ticks: BTreeSet<Tick> = (0..horizon).step_by(ACTION_INTERVAL as usize).collect();
        for a in &self.cfg.agents {
            match a.strategy {
                Strategy::Leaker { leak_tick } if leak_tick < horizon => {
                    ticks.insert(leak_tick);
                }
                Strategy::MembershipBuyer { arrival_tick, .. } if arrival_tick < horizon => {
                    ticks.insert(arrival_tick);
                }
                _ => {}
            }
        }
        for t in ticks {
            self.advance(t)?;
            self.act(t)?;
            self.vote();
            self.respond_liveness();
        }
        self.advance(horizon)?;
        self.finish()
    }

    fn econ(&self) -> &TokenEconomy {
        self.engine
            .root()
            .economy()
            .expect("sim roots carry an economy")
    }

    fn chance(&mut self, f: Fraction) -> bool {
        self.rng.random_range(0..MICRO) < f.micros()
    }

    fn credit(&mut self, agent: &AgentId, micros: i64) {
        *self.cash.entry(agent.clone()).or_default() += micros;
    }

    fn advance(&mut self, to: Tick) -> Result<(), SimError> {
        if to <= self.engine.now() {
            return Ok(());
        }
        self.exec(Command::AdvanceTime { to })
            .map(|_| ())
            .map_err(|e| SimError::Setup(e.to_string()))
    }

    /// Applies a command and books whatever it resolved.
    fn exec(&mut self, cmd: Command) -> Result<Effect, ProtocolError> {
        let effect = self.engine.apply(cmd);
        match &effect {
            Ok(Effect::Advanced {
                released,
                dropped,
                resolutions,
            }) => {
                self.events.rewards_released += released.len() as u64;
                self.events.blobs_dropped += dropped.len() as u64;
                self.book(resolutions);
            }
            Ok(Effect::Resolved { resolutions }) => self.book(resolutions),
            Err(_) => self.events.refused_actions += 1,
            _ => {}
        }
        effect
    }

    fn book(&mut self, resolutions: &[Resolution]) {
        use crate::protocol::Outcome::*;
        for r in resolutions {
            let kind = self.engine.poll(r.poll).map(|p| p.kind.clone()).ok();
            match (kind, r.outcome) {
                (Some(PollKind::Candidacy { .. }), Accepted) => self.events.accepted += 1,
                (Some(PollKind::Candidacy { .. }), Rejected) => self.events.rejected += 1,
                (Some(PollKind::Challenge { .. }), Upheld) => self.events.upheld += 1,
                (Some(PollKind::Challenge { .. }), Dismissed) => {
                    self.events.dismissed += 1;
                    if let Some(&i) = self.madman_polls.get(&r.poll) {
                        let loss = self.cfg.token_unit_value.times_tokens(r.seized).micros();
                        self.state[i].losses += loss;
                    }
                }
                (Some(PollKind::Liveness { .. }), Upheld) => self.events.liveness_failed += 1,
                (Some(PollKind::Liveness { .. }), Dismissed) => self.events.liveness_passed += 1,
                (Some(PollKind::Fork { .. }), Forked) => self.events.forks += 1,
                (_, Cancelled) => self.events.cancelled += 1,
                _ => {}
            }
        }
    }

    fn live(&self) -> Vec<ElementId> {
        self.engine.root().live_elements()
    }

    fn has_open_poll(&self, element: ElementId) -> bool {
        self.engine
            .open_polls()
            .any(|p| p.scope.is_empty() && p.kind.element() == Some(element))
    }

    fn act(&mut self, t: Tick) -> Result<(), SimError> {
        for i in 0..self.cfg.agents.len() {
            let spec = &self.cfg.agents[i];
            let agent = spec.id.clone();
            match spec.strategy.clone() {
                Strategy::HonestMaker {
                    elements_per_epoch,
                    acquisition_cost,
                    max_elements,
                } => {
                    for _ in 0..elements_per_epoch {
                        if max_elements.is_some_and(|m| self.state[i].made >= m) {
                            break;
                        }
                        let valid = self.chance(self.cfg.ground_truth);
                        if self.propose_new(&agent, valid, "data").is_some() {
                            self.state[i].made += 1;
                            self.credit(&agent, -(acquisition_cost.micros() as i64));
                            self.world += acquisition_cost.micros() as i64;
                            let tally = self
                                .makers
                                .iter_mut()
                                .find(|m| m.agent == agent)
                                .expect("maker tally");
                            tally.elements += 1;
                            tally.cost = MonetaryAmount::from_micros(
                                tally.cost.micros() + acquisition_cost.micros(),
                            );
                        }
                    }
                }
                Strategy::HonestVoter { accuracy } => {
                    for e in self.live() {
                        if self.valid.get(&e) == Some(&false)
                            && !self.has_open_poll(e)
                            && self.chance(accuracy)
                        {
                            if let Ok(Effect::Opened { .. }) = self.exec(Command::IssueChallenge {
                                scope: vec![],
                                agent: agent.clone(),
                                element: e,
                            }) {
                                self.events.challenges += 1;
                            }
                        }
                    }
                }
                Strategy::LazyHolder => {}
                Strategy::LivenessProber {
                    check_cost,
                    expected_sales,
                    sale_price,
                } => self.probe(&agent, check_cost, expected_sales, sale_price),
                Strategy::Troll { garbage_rate } => {
                    if self.chance(garbage_rate) {
                        self.propose_new(&agent, false, "garbage");
                    }
                }
                Strategy::Madman { loss_budget } => {
                    if self.state[i].losses <= loss_budget.micros() as i64 {
                        self.attack(i, &agent);
                    }
                }
                Strategy::SybilDuplicator { identity_count } => {
                    for k in 1..=identity_count {
                        self.duplicate(&sybil_identity(&agent, k));
                    }
                }
                Strategy::Leaker { leak_tick } => {
                    if !self.state[i].joined {
                        self.state[i].joined =
                            self.buy(&agent, MonetaryAmount::from_micros(u64::MAX))?;
                    }
                    if self.state[i].joined && !self.state[i].leaked && t >= leak_tick {
                        self.state[i].leaked = true;
                        self.leak(&agent);
                    }
                }
                Strategy::MembershipBuyer {
                    price,
                    arrival_tick,
                } => {
                    if !self.state[i].bought && t >= arrival_tick {
                        self.state[i].bought = self.buy(&agent, price)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn next_payload(&mut self, agent: &AgentId, tag: &str) -> Vec<u8> {
        self.payload_counter += 1;
        format!("{tag}:{agent}:{}:{}", self.index, self.payload_counter).into_bytes()
    }

    fn propose_new(&mut self, agent: &AgentId, valid: bool, tag: &str) -> Option<ElementId> {
        let payload = self.next_payload(agent, tag);
        let body = if self.cfg.params.offchain {
            let Ok(Effect::Stored { digest }) = self.exec(Command::StorePut { payload }) else {
                return None;
            };
            ElementBody::offchain(digest, agent.clone(), Visibility::Private)
        } else {
            ElementBody::inline(payload, Visibility::Private)
        };
        self.propose(agent, body, valid)
    }

    fn propose(&mut self, agent: &AgentId, body: ElementBody, valid: bool) -> Option<ElementId> {
        match self.exec(Command::ProposeCandidate {
            scope: vec![],
            agent: agent.clone(),
            body,
        }) {
            Ok(Effect::Proposed { element, .. }) => {
                self.events.proposals += 1;
                self.valid.insert(element, valid);
                Some(element)
            }
            Err(ProtocolError::DuplicateContent(_)) => {
                self.events.duplicates_refused += 1;
                None
            }
            _ => None,
        }
    }

    fn duplicate(&mut self, identity: &AgentId) {
        let live = self.live();
        if live.is_empty() {
            return;
        }
        let target = live[self.rng.random_range(0..live.len())];
        let body = match self.engine.root().element(target).map(|e| &e.body) {
            Some(ElementBody::Leaf {
                data: DataRef::Offchain { content_hash, .. },
                visibility,
            }) => ElementBody::offchain(*content_hash, identity.clone(), *visibility),
            Some(leaf @ ElementBody::Leaf { .. }) => leaf.clone(),
            _ => return,
        };
        self.propose(identity, body, false);
    }

    fn attack(&mut self, i: usize, agent: &AgentId) {
        let targets: Vec<ElementId> = self
            .live()
            .into_iter()
            .filter(|e| self.valid.get(e) != Some(&false) && !self.has_open_poll(*e))
            .collect();
        if targets.is_empty() || self.econ().holdings(agent).is_zero() {
            return;
        }
        let target = targets[self.rng.random_range(0..targets.len())];
        if let Ok(Effect::Opened { poll }) = self.exec(Command::IssueChallenge {
            scope: vec![],
            agent: agent.clone(),
            element: target,
        }) {
            self.events.challenges += 1;
            self.madman_polls.insert(poll, i);
            let _ = self.exec(Command::CastVote {
                poll,
                agent: agent.clone(),
                choice: Choice::Yes,
            });
        }
    }

    fn probe(&mut self, agent: &AgentId, cost: MonetaryAmount, k: u64, price: MonetaryAmount) {
        let live = self.live();
        let Ok(budget) =
            economics::liveness_budget(k, &from_money(price), &from_money(cost), live.len() as u64)
        else {
            return;
        };
        let budget: u64 = budget.floor().to_integer().try_into().unwrap_or(u64::MAX);
        for e in live {
            let offchain = matches!(
                self.engine.root().element(e).map(|x| &x.body),
                Some(ElementBody::Leaf {
                    data: DataRef::Offchain { .. },
                    ..
                })
            );
            if !offchain
                || self.probes.get(&e).copied().unwrap_or(0) >= budget
                || self.has_open_poll(e)
            {
                continue;
            }
            let nonce: [u8; 32] = self.rng.random();
            if let Ok(Effect::Opened { .. }) = self.exec(Command::LivenessChallenge {
                scope: vec![],
                agent: agent.clone(),
                element: e,
                nonce,
            }) {
                *self.probes.entry(e).or_default() += 1;
                self.events.liveness_probes += 1;
                self.credit(agent, -(cost.micros() as i64));
                self.world += cost.micros() as i64;
            }
        }
    }

    /// Owners answer every open liveness probe they still can.
    fn respond_liveness(&mut self) {
        let open: Vec<(PollId, ElementId, [u8; 32])> = self
            .engine
            .open_polls()
            .filter(|p| p.scope.is_empty())
            .filter_map(|p| match p.kind {
                PollKind::Liveness { element, nonce } => Some((p.id, element, nonce)),
                _ => None,
            })
            .collect();
        for (poll, element, nonce) in open {
            let Some(ElementBody::Leaf {
                data:
                    DataRef::Offchain {
                        content_hash,
                        owner,
                    },
                ..
            }) = self.engine.root().element(element).map(|e| e.body.clone())
            else {
                continue;
            };
            if let Some(proof) = self.engine.store().prove(element, &content_hash, nonce) {
                let _ = self.exec(Command::RespondLiveness {
                    poll,
                    agent: owner,
                    proof,
                });
            }
        }
    }

    fn vote(&mut self) {
        for i in 0..self.cfg.agents.len() {
            let Strategy::HonestVoter { accuracy } = self.cfg.agents[i].strategy else {
                continue;
            };
            let agent = self.cfg.agents[i].id.clone();
            let now = self.engine.now();
            let polls: Vec<(PollId, PollKind)> = self
                .engine
                .open_polls()
                .filter(|p| {
                    p.scope.is_empty() && p.close_tick > now && !p.votes.contains_key(&agent)
                })
                .map(|p| (p.id, p.kind.clone()))
                .collect();
            for (poll, kind) in polls {
                if self.econ().holdings(&agent).is_zero() {
                    break;
                }
                let correct = match kind {
                    PollKind::Candidacy { element } => {
                        Some(self.valid.get(&element).copied().unwrap_or(true))
                    }
                    PollKind::Challenge { element } => {
                        Some(!self.valid.get(&element).copied().unwrap_or(true))
                    }
                    PollKind::Fork { .. } => None,
                    PollKind::Liveness { .. } => continue,
                };
                let yes = match correct {
                    Some(c) => self.chance(accuracy) == c,
                    None => false,
                };
                let choice = if yes { Choice::Yes } else { Choice::No };
                let _ = self.exec(Command::CastVote {
                    poll,
                    agent: agent.clone(),
                    choice,
                });
            }
        }
    }

    /// Books a completed sale against the ownership that held just before it.
    fn note_sale(&mut self, ownership: &BTreeMap<AgentId, TokenAmount>, payment: MonetaryAmount) {
        let total: u128 = ownership.values().map(|t| t.micros() as u128).sum();
        if total == 0 {
            return;
        }
        for m in &mut self.makers {
            let own = ownership
                .get(&m.agent)
                .copied()
                .unwrap_or(TokenAmount::ZERO);
            if own.is_zero() {
                continue;
            }
            let alpha = Rational::new((own.micros() as u128).into(), total.into());
            m.oracle_income += &alpha * from_money(payment);
            m.alphas.insert(alpha);
            m.prices.insert(payment);
            m.sales += 1;
        }
        for l in &mut self.leaks {
            l.sales_after_join += 1;
        }
    }

    fn book_payouts(
        &mut self,
        payer: &AgentId,
        payment: MonetaryAmount,
        payouts: &BTreeMap<AgentId, MonetaryAmount>,
    ) {
        self.credit(payer, -(payment.micros() as i64));
        for (a, amt) in payouts {
            self.credit(a, amt.micros() as i64);
            *self.receipts.entry(a.clone()).or_default() += amt.micros() as i64;
        }
    }

    /// Buys access at the current price if it is at most `max_price`.
    /// Returns whether the purchase went through.
    fn buy(&mut self, agent: &AgentId, max_price: MonetaryAmount) -> Result<bool, SimError> {
        match self.cfg.access_mode {
            AccessMode::Membership => {
                let price = self.engine.config().membership_price;
                if price > max_price {
                    return Ok(false);
                }
                let before = self.econ().ownership_map();
                let Ok(Effect::Joined {
                    stake_bond,
                    payouts,
                    ..
                }) = self.exec(Command::AcquireMembership {
                    scope: vec![],
                    agent: agent.clone(),
                    payment: price,
                })
                else {
                    return Ok(false);
                };
                self.note_sale(&before, price);
                self.book_payouts(agent, price, &payouts);
                self.stake_price.insert(stake_bond, price);
                self.events.memberships += 1;
                let is_leaker = self
                    .cfg
                    .agents
                    .iter()
                    .any(|a| &a.id == agent && matches!(a.strategy, Strategy::Leaker { .. }));
                if is_leaker {
                    let econ = self.econ();
                    let stake = econ
                        .bond(stake_bond)
                        .map(|b| b.amount)
                        .unwrap_or(TokenAmount::ZERO);
                    let supply = econ.total_supply();
                    let alpha = if supply.is_zero() {
                        Rational::from_integer(0.into())
                    } else {
                        Rational::new(stake.micros().into(), supply.micros().into())
                    };
                    self.leaks.push(LeakTally {
                        agent: agent.clone(),
                        price,
                        alpha,
                        sales_after_join: 0,
                        detected: None,
                    });
                }
                Ok(true)
            }
            AccessMode::Transaction => {
                let fee = self.engine.config().access_fee;
                let Some(&element) = self.live().first() else {
                    return Ok(false);
                };
                if fee > max_price {
                    return Ok(false);
                }
                let before = self.econ().ownership_map();
                let Ok(Effect::Accessed { payouts, .. }) = self.exec(Command::PayAccessFee {
                    scope: vec![],
                    agent: agent.clone(),
                    element,
                    payment: fee,
                }) else {
                    return Ok(false);
                };
                self.note_sale(&before, fee);
                self.book_payouts(agent, fee, &payouts);
                self.events.access_payments += 1;
                if !self.econ().ownership(agent).is_zero() {
                    return Err(
                        self.violation(format!("transaction buyer {agent} received tokens"))
                    );
                }
                Ok(true)
            }
        }
    }

    fn leak(&mut self, agent: &AgentId) {
        self.events.leaks += 1;
        let detected = match self.forced_detection {
            Some(d) => d,
            None => self.chance(self.cfg.p_detect),
        };
        let price = self.engine.config().membership_price;
        if let Some(l) = self.leaks.iter_mut().find(|l| &l.agent == agent) {
            l.detected = Some(detected);
        }
        if detected {
            self.events.leaks_detected += 1;
            if self
                .exec(Command::SlashMembership {
                    scope: vec![],
                    member: agent.clone(),
                })
                .is_ok()
            {
                self.events.slashed += 1;
            }
        } else {
            let counterfeit =
                price.scale(self.cfg.gamma).micros() as i64 * self.cfg.counterfeit_sales as i64;
            self.credit(agent, counterfeit);
            self.world -= counterfeit;
            let _ = self.exec(Command::SetMembershipPrice {
                price: price.scale(self.cfg.beta),
            });
        }
    }

    fn violation(&self, message: String) -> SimError {
        SimError::Invariant {
            replicate: self.index,
            message,
        }
    }

    /// Token value of an identity: free and bonded tokens at the unit value,
    /// except active query stakes, which are worth what was paid for them.
    fn token_value(&self, identity: &AgentId) -> i64 {
        let econ = self.econ();
        let unit = self.cfg.token_unit_value;
        let mut v = unit.times_tokens(econ.holdings(identity)).micros();
        for b in econ
            .bonds()
            .iter()
            .filter(|b| b.is_active() && &b.owner == identity)
        {
            v += match (b.purpose, self.stake_price.get(&b.id)) {
                (BondPurpose::QueryStake, Some(price)) => price.micros() as i64,
                _ => unit.times_tokens(b.amount).micros(),
            };
        }
        v
    }

    fn finish(self) -> Result<ReplicateOutcome, SimError> {
        let econ = self.econ();
        econ.check_conservation()
            .map_err(|e| self.violation(format!("conservation: {e}")))?;
        let expected = self.initial_supply.micros() as i128 + econ.minted().micros() as i128
            - econ.burned().micros() as i128;
        if expected != econ.total_supply().micros() as i128 {
            return Err(self.violation(format!(
                "supply {} != initial {} + minted {} - burned {}",
                econ.total_supply(),
                self.initial_supply,
                econ.minted(),
                econ.burned()
            )));
        }
        let cash_sum: i64 = self.cash.values().sum();
        if cash_sum + self.world != 0 {
            return Err(self.violation(format!(
                "cash does not close: agents {} + outside world {}",
                SignedAmount::from_micros(cash_sum),
                SignedAmount::from_micros(self.world)
            )));
        }

        let mut identities: BTreeMap<String, Vec<AgentId>> = BTreeMap::new();
        for id in self.cash.keys().chain(econ.ownership_map().keys()) {
            identities
                .entry(base_of(id).to_string())
                .or_default()
                .push(id.clone());
        }
        let mut nets = BTreeMap::new();
        let mut receipts = BTreeMap::new();
        for spec in &self.cfg.agents {
            let mut ids = identities.remove(spec.id.as_str()).unwrap_or_default();
            ids.sort();
            ids.dedup();
            let mut net = -self.cfg.token_unit_value.times_tokens(spec.tokens).micros();
            let mut received = 0i64;
            for id in &ids {
                net += self.cash.get(id).copied().unwrap_or(0) + self.token_value(id);
                received += self.receipts.get(id).copied().unwrap_or(0);
            }
            if spec.strategy == Strategy::LazyHolder {
                let cash = self.cash.get(&spec.id).copied().unwrap_or(0);
                if cash != received {
                    return Err(self.violation(format!(
                        "lazy holder {} gained {} in cash but received {}",
                        spec.id,
                        SignedAmount::from_micros(cash),
                        SignedAmount::from_micros(received)
                    )));
                }
                if spec.tokens.is_zero() && net != 0 {
                    return Err(self.violation(format!(
                        "{} took no action and held nothing but ended at {}",
                        spec.id,
                        SignedAmount::from_micros(net)
                    )));
                }
            }
            if self.cfg.access_mode == AccessMode::Transaction
                && matches!(spec.strategy, Strategy::MembershipBuyer { .. })
                && !econ.ownership(&spec.id).is_zero()
            {
                return Err(self.violation(format!("transaction buyer {} holds tokens", spec.id)));
            }
            nets.insert(spec.id.clone(), SignedAmount::from_micros(net));
            receipts.insert(
                spec.id.clone(),
                MonetaryAmount::from_micros(received.max(0) as u64),
            );
        }

        let mut events = self.events.clone();
        events.minted = econ.minted();
        events.burned = econ.burned();
        Ok(ReplicateOutcome {
            index: self.index,
            nets,
            receipts,
            cash: self
                .cash
                .iter()
                .map(|(a, c)| (a.clone(), SignedAmount::from_micros(*c)))
                .collect(),
            events,
            makers: self.makers.clone(),
            leaks: self.leaks.clone(),
            max_probes_per_element: self.probes.values().copied().max().unwrap_or(0),
            supply: econ.total_supply(),
            state_digest: self.engine.state_digest(),
            log: self.engine.log().map(|l| l.to_text()),
        })
    }
}
