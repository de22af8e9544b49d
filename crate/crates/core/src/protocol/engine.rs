use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::log::{EventLog, Genesis, Record};
use super::{
    Choice, Command, Effect, MembershipMode, MembershipRecord, Outcome, Poll, PollId, PollKind,
    ProtocolConfig, ProtocolError, Resolution, Result, Scope, Vote,
};
use crate::canonical::{self, Digest};
use crate::ledger::{BondId, BondPurpose, Issuance, TokenEconomy};
use crate::offchain::{self, ContentStore, FaultModel, LivenessProof, FAULT_EPOCH_TICKS};
use crate::structure::{
    DataRef, ElementBody, ElementId, ElementState, StructureError, TokenizedDataStructure,
    Visibility,
};
use crate::units::{AgentId, MonetaryAmount, Tick, TokenAmount};

/// Sequential protocol state machine over one root structure.
#[derive(Debug, Clone)]
pub struct Engine {
    root: TokenizedDataStructure,
    store: ContentStore,
    /// Payloads as originally stored; the liveness verifier's reference.
    truth: BTreeMap<Digest, Vec<u8>>,
    config: ProtocolConfig,
    now: Tick,
    polls: Vec<Poll>,
    open: BTreeSet<PollId>,
    memberships: Vec<MembershipRecord>,
    detached: Vec<TokenizedDataStructure>,
    log: Option<EventLog>,
}

#[derive(Serialize)]
struct StateView<'a> {
    now: Tick,
    root: &'a TokenizedDataStructure,
    config: &'a ProtocolConfig,
    polls: &'a [Poll],
    memberships: &'a [MembershipRecord],
    detached: &'a [TokenizedDataStructure],
    stored: Vec<&'a Digest>,
    store_epoch: u64,
}

fn scope_ref<'a>(
    root: &'a TokenizedDataStructure,
    scope: &[ElementId],
) -> Result<&'a TokenizedDataStructure> {
    let mut td = root;
    for id in scope {
        td = match td.element(*id).map(|e| &e.body) {
            Some(ElementBody::Nested(child)) => child,
            _ => return Err(ProtocolError::UnknownScope(scope.to_vec())),
        };
    }
    Ok(td)
}

fn scope_mut<'a>(
    root: &'a mut TokenizedDataStructure,
    scope: &[ElementId],
) -> Result<&'a mut TokenizedDataStructure> {
    let mut td = root;
    for id in scope {
        td = match td.element_mut(*id).map(|e| &mut e.body) {
            Some(ElementBody::Nested(child)) => child,
            _ => return Err(ProtocolError::UnknownScope(scope.to_vec())),
        };
    }
    Ok(td)
}

fn economy_mut(td: &mut TokenizedDataStructure) -> Result<&mut TokenEconomy> {
    td.economy_mut().ok_or(ProtocolError::NoEconomy)
}

/// Returns a bond to its owner if a fork has not already destroyed it.
fn refund(econ: &mut TokenEconomy, bond: BondId) -> Result<()> {
    if econ.bond(bond)?.is_active() {
        econ.unlock(bond)?;
    }
    Ok(())
}

fn forfeit(econ: &mut TokenEconomy, bond: BondId) -> Result<TokenAmount> {
    if econ.bond(bond)?.is_active() {
        Ok(econ.burn(bond)?)
    } else {
        Ok(TokenAmount::ZERO)
    }
}

/// Releases every reward bond whose statute has run out, at every level.
fn release_due(
    td: &mut TokenizedDataStructure,
    scope: &mut Scope,
    now: Tick,
    out: &mut Vec<(Scope, BondId)>,
) -> Result<()> {
    if let Some(econ) = td.economy_mut() {
        let due: Vec<BondId> = econ
            .bonds()
            .iter()
            .filter(|b| {
                b.is_active() && b.purpose == BondPurpose::CandidateReward && b.release_tick <= now
            })
            .map(|b| b.id)
            .collect();
        for id in due {
            econ.release_bond(id, now)?;
            out.push((scope.clone(), id));
        }
    }
    let nested: Vec<ElementId> = td
        .elements()
        .iter()
        .filter(|e| matches!(e.body, ElementBody::Nested(_)))
        .map(|e| e.id)
        .collect();
    for id in nested {
        if let Some(ElementBody::Nested(child)) = td.element_mut(id).map(|e| &mut e.body) {
            scope.push(id);
            release_due(child, scope, now, out)?;
            scope.pop();
        }
    }
    Ok(())
}

fn next_release(td: &TokenizedDataStructure) -> Option<Tick> {
    let own = td.economy().and_then(|econ| {
        econ.bonds()
            .iter()
            .filter(|b| b.is_active() && b.purpose == BondPurpose::CandidateReward)
            .map(|b| b.release_tick)
            .min()
    });
    td.elements()
        .iter()
        .filter_map(|e| match &e.body {
            ElementBody::Nested(child) => next_release(child),
            ElementBody::Leaf { .. } => None,
        })
        .chain(own)
        .min()
}

impl Engine {
    pub fn new(
        root: TokenizedDataStructure,
        config: ProtocolConfig,
        fault: FaultModel,
    ) -> Result<Self> {
        root.validate()?;
        Ok(Self {
            root,
            store: ContentStore::new(fault),
            truth: BTreeMap::new(),
            config,
            now: 0,
            polls: Vec::new(),
            open: BTreeSet::new(),
            memberships: Vec::new(),
            detached: Vec::new(),
            log: None,
        })
    }

    /// Like [`Engine::new`], but records every applied command.
    pub fn recording(
        root: TokenizedDataStructure,
        config: ProtocolConfig,
        fault: FaultModel,
    ) -> Result<Self> {
        let genesis = Genesis {
            structure: root.clone(),
            config: config.clone(),
            fault,
        };
        let mut engine = Self::new(root, config, fault)?;
        engine.log = Some(EventLog::new(genesis));
        Ok(engine)
    }

    pub fn root(&self) -> &TokenizedDataStructure {
        &self.root
    }

    pub fn structure(&self, scope: &[ElementId]) -> Result<&TokenizedDataStructure> {
        scope_ref(&self.root, scope)
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn polls(&self) -> &[Poll] {
        &self.polls
    }

    pub fn poll(&self, id: PollId) -> Result<&Poll> {
        self.polls
            .get(id.0 as usize)
            .ok_or(ProtocolError::UnknownPoll(id))
    }

    pub fn open_polls(&self) -> impl Iterator<Item = &Poll> {
        self.open.iter().map(|id| &self.polls[id.0 as usize])
    }

    pub fn memberships(&self) -> &[MembershipRecord] {
        &self.memberships
    }

    /// Structures split off by forks, in fork order.
    pub fn detached(&self) -> &[TokenizedDataStructure] {
        &self.detached
    }

    pub fn log(&self) -> Option<&EventLog> {
        self.log.as_ref()
    }

    /// SHA-256 of the canonical JSON of the whole engine state.
    pub fn state_digest(&self) -> Digest {
        let view = StateView {
            now: self.now,
            root: &self.root,
            config: &self.config,
            polls: &self.polls,
            memberships: &self.memberships,
            detached: &self.detached,
            stored: self.store.digests().collect(),
            store_epoch: self.store.epoch(),
        };
        canonical::canonical_digest(&view).expect("engine state always serializes")
    }

    pub fn is_member(&self, scope: &[ElementId], agent: &AgentId) -> bool {
        self.active_membership(scope, agent).is_some()
    }

    fn active_membership(&self, scope: &[ElementId], agent: &AgentId) -> Option<&MembershipRecord> {
        let econ = scope_ref(&self.root, scope).ok()?.economy()?;
        self.memberships.iter().find(|m| {
            m.scope == scope
                && &m.agent == agent
                && econ.bond(m.stake_bond).is_ok_and(|b| b.is_active())
        })
    }

    /// Applies one command, recording it when the engine is recording.
    pub fn apply(&mut self, command: Command) -> Result<Effect> {
        let tick = self.now;
        let result = self.dispatch(&command);
        if let Some(log) = self.log.as_mut() {
            log.push(Record::new(tick, command, &result));
        }
        result
    }

    fn dispatch(&mut self, command: &Command) -> Result<Effect> {
        match command {
            Command::ProposeCandidate { scope, agent, body } => {
                self.propose_candidate(scope, agent, body.clone())
            }
            Command::CastVote {
                poll,
                agent,
                choice,
            } => self.cast_vote(*poll, agent, *choice),
            Command::Resolve { poll } => self.resolve(*poll),
            Command::IssueChallenge {
                scope,
                agent,
                element,
            } => self.issue_challenge(scope, agent, *element),
            Command::LivenessChallenge {
                scope,
                agent,
                element,
                nonce,
            } => self.liveness_challenge(scope, agent, *element, *nonce),
            Command::RespondLiveness { poll, agent, proof } => {
                self.respond_liveness(*poll, agent, proof)
            }
            Command::AcquireMembership {
                scope,
                agent,
                payment,
            } => self.acquire_membership(scope, agent, *payment),
            Command::SlashMembership { scope, member } => self.slash_membership(scope, member),
            Command::PayAccessFee {
                scope,
                element,
                payment,
                ..
            } => self.pay_access_fee(scope, *element, *payment),
            Command::SetMembershipPrice { price } => {
                self.config.membership_price = *price;
                Ok(Effect::Updated)
            }
            Command::QueryElement {
                scope,
                agent,
                element,
            } => {
                let payload = self.read_element(scope, agent, *element)?;
                Ok(Effect::Queried {
                    payload_digest: Digest::of(payload),
                })
            }
            Command::ProposeFork {
                scope,
                agent,
                elements_one,
                elements_two,
            } => self.propose_fork(scope, agent, elements_one, elements_two),
            Command::StorePut { payload } => {
                let digest = self.store.put(payload)?;
                self.truth.entry(digest).or_insert_with(|| payload.clone());
                Ok(Effect::Stored { digest })
            }
            Command::StoreRemove { digest } => Ok(Effect::Dropped {
                existed: self.store.remove(digest),
            }),
            Command::AdvanceTime { to } => self.advance_time(*to),
        }
    }

    fn open_poll(
        &mut self,
        scope: &[ElementId],
        kind: PollKind,
        proposer: &AgentId,
        bond: BondId,
        period: Tick,
    ) -> PollId {
        let id = PollId(self.polls.len() as u64);
        self.polls.push(Poll {
            id,
            scope: scope.to_vec(),
            kind,
            proposer: proposer.clone(),
            deposit_bond: bond,
            open_tick: self.now,
            close_tick: self.now.saturating_add(period),
            votes: BTreeMap::new(),
            outcome: None,
        });
        self.open.insert(id);
        id
    }

    fn propose_candidate(
        &mut self,
        scope: &[ElementId],
        agent: &AgentId,
        body: ElementBody,
    ) -> Result<Effect> {
        if let ElementBody::Leaf {
            data: DataRef::Offchain { content_hash, .. },
            ..
        } = &body
        {
            if !self.store.contains(content_hash) {
                return Err(ProtocolError::PayloadNotStored(*content_hash));
            }
        }
        let now = self.now;
        let dedup = self.config.dedup;
        let td = scope_mut(&mut self.root, scope)?;
        if body.uses_offchain() && !td.params.offchain {
            return Err(StructureError::OffchainDisabled.into());
        }
        if dedup {
            let digest = body.content_digest();
            let duplicate = td.elements().iter().any(|e| {
                matches!(
                    td.state(e.id),
                    Some(ElementState::Candidate | ElementState::QuasiFinalized)
                ) && e.body.content_digest() == digest
            });
            if duplicate {
                return Err(ProtocolError::DuplicateContent(digest));
            }
        }
        if td.economy().is_none() {
            let element = td.insert(body, agent.clone(), now, ElementState::QuasiFinalized)?;
            return Ok(Effect::Proposed {
                element,
                poll: None,
            });
        }
        let (deposit, period) = (td.params.candidate_deposit, td.params.candidate_vote_period);
        let bond = economy_mut(td)?.bond_stake(
            agent,
            deposit,
            BondPurpose::CandidateDeposit,
            now.saturating_add(period),
        )?;
        let element = td.insert(body, agent.clone(), now, ElementState::Candidate)?;
        let poll = self.open_poll(scope, PollKind::Candidacy { element }, agent, bond, period);
        Ok(Effect::Proposed {
            element,
            poll: Some(poll),
        })
    }

    fn cast_vote(&mut self, id: PollId, agent: &AgentId, choice: Choice) -> Result<Effect> {
        let now = self.now;
        let poll = self.poll(id)?;
        if !poll.kind.takes_votes() {
            return Err(ProtocolError::WrongPollKind(id));
        }
        if !poll.is_open() || now < poll.open_tick || now >= poll.close_tick {
            return Err(ProtocolError::PollClosed(id));
        }
        if poll.votes.contains_key(agent) {
            return Err(ProtocolError::AlreadyVoted {
                poll: id,
                agent: agent.clone(),
            });
        }
        let econ = scope_ref(&self.root, &poll.scope)?
            .economy()
            .ok_or(ProtocolError::NoEconomy)?;
        let weight = econ.holdings(agent);
        if weight.is_zero() {
            return Err(ProtocolError::NotTokenHolder(agent.clone()));
        }
        self.polls[id.0 as usize]
            .votes
            .insert(agent.clone(), Vote { choice, weight });
        Ok(Effect::Voted { weight })
    }

    fn resolve(&mut self, id: PollId) -> Result<Effect> {
        let poll = self.poll(id)?;
        if !poll.is_open() {
            return Err(ProtocolError::PollAlreadyResolved(id));
        }
        if self.now < poll.close_tick {
            return Err(ProtocolError::PollStillOpen {
                poll: id,
                close_tick: poll.close_tick,
            });
        }
        let resolutions = self.settle(id)?;
        release_due(&mut self.root, &mut Vec::new(), self.now, &mut Vec::new())?;
        Ok(Effect::Resolved { resolutions })
    }

    fn close(&mut self, id: PollId, outcome: Outcome, seized: TokenAmount) -> Resolution {
        self.polls[id.0 as usize].outcome = Some(outcome);
        self.open.remove(&id);
        Resolution {
            poll: id,
            outcome,
            tick: self.now,
            seized,
            detached: None,
        }
    }

    /// Decides a poll that is due. The first resolution is `id` itself.
    fn settle(&mut self, id: PollId) -> Result<Vec<Resolution>> {
        let poll = self.polls[id.0 as usize].clone();
        match &poll.kind {
            PollKind::Candidacy { element } => {
                self.settle_candidacy(&poll, *element).map(|r| vec![r])
            }
            PollKind::Challenge { element } => {
                self.settle_challenge(&poll, *element).map(|r| vec![r])
            }
            PollKind::Liveness { element, .. } => self
                .settle_liveness(&poll, *element, false)
                .map(|r| vec![r]),
            PollKind::Fork { elements_two, .. } => self.settle_fork(&poll, elements_two),
        }
    }

    fn settle_candidacy(&mut self, poll: &Poll, element: ElementId) -> Result<Resolution> {
        let now = self.now;
        let forfeit_rejected = self.config.forfeit_rejected_deposit;
        let td = scope_mut(&mut self.root, &poll.scope)?;
        let supply = economy_mut(td)?.total_supply();
        let accepted = td
            .params
            .candidate_quorum
            .is_met(poll.weight_for(Choice::Yes), supply);
        let mut seized = TokenAmount::ZERO;
        let outcome = if accepted {
            td.transition(element, ElementState::QuasiFinalized)?;
            let (reward, period) = (td.params.candidate_reward, td.params.reward_stake_period);
            let econ = economy_mut(td)?;
            refund(econ, poll.deposit_bond)?;
            if econ.issuance() == Issuance::Mining && !reward.is_zero() {
                econ.mint(&poll.proposer, reward)?;
                let bond = econ.bond_stake(
                    &poll.proposer,
                    reward,
                    BondPurpose::CandidateReward,
                    now.saturating_add(period),
                )?;
                if let Some(meta) = td.metadata_mut(element) {
                    meta.reward_bond = Some(bond);
                }
            }
            Outcome::Accepted
        } else {
            td.transition(element, ElementState::Removed)?;
            let econ = economy_mut(td)?;
            if forfeit_rejected {
                seized = forfeit(econ, poll.deposit_bond)?;
            } else {
                refund(econ, poll.deposit_bond)?;
            }
            Outcome::Rejected
        };
        Ok(self.close(poll.id, outcome, seized))
    }

    fn settle_challenge(&mut self, poll: &Poll, element: ElementId) -> Result<Resolution> {
        let to_challenger = self.config.seizure_to_challenger;
        let td = scope_mut(&mut self.root, &poll.scope)?;
        let supply = economy_mut(td)?.total_supply();
        let upheld = td
            .params
            .challenge_quorum
            .is_met(poll.weight_for(Choice::Yes), supply);
        let mut seized = TokenAmount::ZERO;
        let outcome = if upheld {
            td.transition(element, ElementState::Challenged)?;
            let reward_bond = td.metadata(element).and_then(|m| m.reward_bond);
            let bonus = td.params.challenge_reward;
            let econ = economy_mut(td)?;
            if let Some(bond) = reward_bond {
                // Past the statute of limitations the bond is already released
                // and the ledger is left untouched.
                if econ.bond(bond)?.is_active() {
                    seized = if to_challenger {
                        econ.seize_to(bond, &poll.proposer)?
                    } else {
                        econ.burn(bond)?
                    };
                }
            }
            refund(econ, poll.deposit_bond)?;
            if econ.issuance() == Issuance::Mining && !bonus.is_zero() {
                econ.mint(&poll.proposer, bonus)?;
            }
            Outcome::Upheld
        } else {
            seized = forfeit(economy_mut(td)?, poll.deposit_bond)?;
            Outcome::Dismissed
        };
        Ok(self.close(poll.id, outcome, seized))
    }

    fn settle_liveness(
        &mut self,
        poll: &Poll,
        element: ElementId,
        proven: bool,
    ) -> Result<Resolution> {
        let td = scope_mut(&mut self.root, &poll.scope)?;
        let mut seized = TokenAmount::ZERO;
        let outcome = if proven {
            refund(economy_mut(td)?, poll.deposit_bond)?;
            Outcome::Dismissed
        } else {
            td.transition(element, ElementState::Challenged)?;
            let reward_bond = td.metadata(element).and_then(|m| m.reward_bond);
            let econ = economy_mut(td)?;
            if let Some(bond) = reward_bond {
                seized = forfeit(econ, bond)?;
            }
            refund(econ, poll.deposit_bond)?;
            Outcome::Upheld
        };
        Ok(self.close(poll.id, outcome, seized))
    }

    fn settle_fork(
        &mut self,
        poll: &Poll,
        elements_two: &BTreeSet<ElementId>,
    ) -> Result<Vec<Resolution>> {
        let td = scope_ref(&self.root, &poll.scope)?;
        let econ = td.economy().ok_or(ProtocolError::NoEconomy)?;
        let adopters = poll.weight_for(Choice::Yes);
        if !td
            .params
            .fork_threshold
            .is_met(adopters, econ.total_supply())
        {
            let seized = forfeit(
                economy_mut(scope_mut(&mut self.root, &poll.scope)?)?,
                poll.deposit_bond,
            )?;
            return Ok(vec![self.close(poll.id, Outcome::NoFork, seized)]);
        }

        // Every other open poll at or below this scope is void once the
        // structure splits.
        let stale: Vec<PollId> = self
            .open
            .iter()
            .copied()
            .filter(|p| *p != poll.id && self.polls[p.0 as usize].scope.starts_with(&poll.scope))
            .collect();
        let mut cancelled = Vec::with_capacity(stale.len());
        for id in stale {
            let other = self.polls[id.0 as usize].clone();
            let td = scope_mut(&mut self.root, &other.scope)?;
            refund(economy_mut(td)?, other.deposit_bond)?;
            if let PollKind::Candidacy { element } = other.kind {
                td.transition(element, ElementState::Removed)?;
            }
            cancelled.push(self.close(id, Outcome::Cancelled, TokenAmount::ZERO));
        }

        let td = scope_mut(&mut self.root, &poll.scope)?;
        refund(economy_mut(td)?, poll.deposit_bond)?;
        let holders: BTreeSet<AgentId> = economy_mut(td)?.ownership_map().into_keys().collect();
        let holders_two: BTreeSet<AgentId> = poll
            .votes
            .iter()
            .filter(|(a, v)| v.choice == Choice::Yes && holders.contains(*a))
            .map(|(a, _)| a.clone())
            .collect();
        let holders_one: BTreeSet<AgentId> = holders.difference(&holders_two).cloned().collect();
        let all: BTreeSet<ElementId> = td.elements().iter().map(|e| e.id).collect();
        // Elements added after the proposal stay with the direct offshoot.
        let elements_one: BTreeSet<ElementId> = all.difference(elements_two).copied().collect();

        let mut two = td.clone();
        td.retain_elements(&elements_one);
        two.retain_elements(elements_two);
        let econ_one = economy_mut(td)?;
        for agent in &holders_two {
            econ_one.expel(agent)?;
        }
        let econ_two = economy_mut(&mut two)?;
        for agent in &holders_one {
            econ_two.expel(agent)?;
        }
        econ_two.token_id = format!("{}/fork-{}", econ_two.token_id, poll.id.0);
        self.detached.push(two);

        if let PollKind::Fork {
            holders_one: h1,
            holders_two: h2,
            ..
        } = &mut self.polls[poll.id.0 as usize].kind
        {
            *h1 = holders_one;
            *h2 = holders_two;
        }
        let mut resolution = self.close(poll.id, Outcome::Forked, TokenAmount::ZERO);
        resolution.detached = Some(self.detached.len() - 1);
        let mut out = vec![resolution];
        out.extend(cancelled);
        Ok(out)
    }

    fn has_open_challenge(&self, scope: &[ElementId], element: ElementId) -> bool {
        self.open_polls().any(|p| {
            p.scope == scope && matches!(p.kind, PollKind::Challenge { element: e } | PollKind::Liveness { element: e, .. } if e == element)
        })
    }

    fn issue_challenge(
        &mut self,
        scope: &[ElementId],
        agent: &AgentId,
        element: ElementId,
    ) -> Result<Effect> {
        let now = self.now;
        if self.has_open_challenge(scope, element) {
            return Err(ProtocolError::ChallengePending(element));
        }
        let td = scope_mut(&mut self.root, scope)?;
        if td.state(element) != Some(ElementState::QuasiFinalized) {
            return Err(ProtocolError::ElementNotLive(element));
        }
        let (deposit, period) = (td.params.challenge_deposit, td.params.challenge_vote_period);
        let bond = economy_mut(td)?.bond_stake(
            agent,
            deposit,
            BondPurpose::ChallengeDeposit,
            now.saturating_add(period),
        )?;
        let poll = self.open_poll(scope, PollKind::Challenge { element }, agent, bond, period);
        Ok(Effect::Opened { poll })
    }

    fn liveness_challenge(
        &mut self,
        scope: &[ElementId],
        agent: &AgentId,
        element: ElementId,
        nonce: [u8; 32],
    ) -> Result<Effect> {
        let now = self.now;
        if self.has_open_challenge(scope, element) {
            return Err(ProtocolError::ChallengePending(element));
        }
        let td = scope_mut(&mut self.root, scope)?;
        let body = &td
            .element(element)
            .ok_or(StructureError::UnknownElement(element))?
            .body;
        if !body.uses_offchain() {
            return Err(ProtocolError::NotOffchainLeaf(element));
        }
        if td.state(element) != Some(ElementState::QuasiFinalized) {
            return Err(ProtocolError::ElementNotLive(element));
        }
        let (deposit, period) = (td.params.challenge_deposit, td.params.challenge_vote_period);
        let bond = economy_mut(td)?.bond_stake(
            agent,
            deposit,
            BondPurpose::ChallengeDeposit,
            now.saturating_add(period),
        )?;
        let poll = self.open_poll(
            scope,
            PollKind::Liveness { element, nonce },
            agent,
            bond,
            period,
        );
        Ok(Effect::Opened { poll })
    }

    fn respond_liveness(
        &mut self,
        id: PollId,
        agent: &AgentId,
        proof: &LivenessProof,
    ) -> Result<Effect> {
        let poll = self.poll(id)?.clone();
        let PollKind::Liveness { element, nonce } = poll.kind else {
            return Err(ProtocolError::WrongPollKind(id));
        };
        if !poll.is_open() || self.now >= poll.close_tick {
            return Err(ProtocolError::PollClosed(id));
        }
        let td = scope_ref(&self.root, &poll.scope)?;
        let Some(ElementBody::Leaf {
            data:
                DataRef::Offchain {
                    content_hash,
                    owner,
                },
            ..
        }) = td.element(element).map(|e| &e.body)
        else {
            return Err(ProtocolError::NotOffchainLeaf(element));
        };
        if owner != agent {
            return Err(ProtocolError::NotOwner {
                agent: agent.clone(),
                element,
            });
        }
        let valid = proof.element_id == element
            && proof.nonce == nonce
            && self
                .truth
                .get(content_hash)
                .is_some_and(|payload| offchain::verify(payload, proof));
        let resolution = self.settle_liveness(&poll, element, valid)?;
        Ok(Effect::Resolved {
            resolutions: vec![resolution],
        })
    }

    fn acquire_membership(
        &mut self,
        scope: &[ElementId],
        agent: &AgentId,
        payment: MonetaryAmount,
    ) -> Result<Effect> {
        if payment != self.config.membership_price {
            return Err(ProtocolError::WrongPrice {
                expected: self.config.membership_price,
                got: payment,
            });
        }
        if self.is_member(scope, agent) {
            return Err(ProtocolError::AlreadyMember(agent.clone()));
        }
        let (now, mode) = (self.now, self.config.membership_mode);
        let td = scope_mut(&mut self.root, scope)?;
        let stake = td.params.query_stake;
        let econ = economy_mut(td)?;
        let payouts = econ.distribute_pro_rata(payment)?;
        let mut sold = BTreeMap::new();
        if !stake.is_zero() {
            match mode {
                MembershipMode::Minted => econ.mint(agent, stake)?,
                MembershipMode::SteadyState => sold = econ.purchase_pro_rata(agent, stake)?,
            }
        }
        let stake_bond = econ.bond_stake(agent, stake, BondPurpose::QueryStake, Tick::MAX)?;
        self.memberships.push(MembershipRecord {
            scope: scope.to_vec(),
            agent: agent.clone(),
            stake_bond,
            acquired_tick: now,
        });
        Ok(Effect::Joined {
            stake_bond,
            payouts,
            sold,
        })
    }

    fn slash_membership(&mut self, scope: &[ElementId], member: &AgentId) -> Result<Effect> {
        let bond = self
            .active_membership(scope, member)
            .ok_or_else(|| ProtocolError::NotAMember(member.clone()))?
            .stake_bond;
        let amount = economy_mut(scope_mut(&mut self.root, scope)?)?.burn(bond)?;
        Ok(Effect::Slashed { bond, amount })
    }

    fn pay_access_fee(
        &mut self,
        scope: &[ElementId],
        element: ElementId,
        payment: MonetaryAmount,
    ) -> Result<Effect> {
        if payment != self.config.access_fee {
            return Err(ProtocolError::WrongPrice {
                expected: self.config.access_fee,
                got: payment,
            });
        }
        let payload_digest = Digest::of(self.fetch(scope, element)?.1);
        let econ = scope_ref(&self.root, scope)?
            .economy()
            .ok_or(ProtocolError::NoEconomy)?;
        let payouts = econ.distribute_pro_rata(payment)?;
        Ok(Effect::Accessed {
            payload_digest,
            payouts,
        })
    }

    /// A live leaf's visibility and payload, ignoring access rights.
    fn fetch(&self, scope: &[ElementId], element: ElementId) -> Result<(Visibility, &[u8])> {
        let td = scope_ref(&self.root, scope)?;
        let e = td
            .element(element)
            .ok_or(StructureError::UnknownElement(element))?;
        if td.state(element) != Some(ElementState::QuasiFinalized) {
            return Err(ProtocolError::ElementNotLive(element));
        }
        match &e.body {
            ElementBody::Leaf {
                data: DataRef::Inline { payload },
                visibility,
            } => Ok((*visibility, payload)),
            ElementBody::Leaf {
                data: DataRef::Offchain { content_hash, .. },
                visibility,
            } => self
                .store
                .get(content_hash)
                .map(|p| (*visibility, p))
                .ok_or(ProtocolError::DataUnavailable(element)),
            ElementBody::Nested(_) => Err(ProtocolError::NotALeaf(element)),
        }
    }

    /// Reads a live leaf. Private leaves need an active membership.
    pub fn read_element(
        &self,
        scope: &[ElementId],
        agent: &AgentId,
        element: ElementId,
    ) -> Result<&[u8]> {
        let (visibility, payload) = self.fetch(scope, element)?;
        if visibility == Visibility::Private && !self.is_member(scope, agent) {
            return Err(ProtocolError::NotAMember(agent.clone()));
        }
        Ok(payload)
    }

    fn propose_fork(
        &mut self,
        scope: &[ElementId],
        agent: &AgentId,
        elements_one: &BTreeSet<ElementId>,
        elements_two: &BTreeSet<ElementId>,
    ) -> Result<Effect> {
        let now = self.now;
        let td = scope_mut(&mut self.root, scope)?;
        if let Some(e) = elements_one.intersection(elements_two).next() {
            return Err(ProtocolError::InvalidPartition(format!(
                "{e} is on both sides"
            )));
        }
        let all: BTreeSet<ElementId> = td.elements().iter().map(|e| e.id).collect();
        if let Some(e) = elements_one.union(elements_two).find(|e| !all.contains(e)) {
            return Err(ProtocolError::InvalidPartition(format!(
                "{e} is not an element"
            )));
        }
        if let Some(e) = all
            .iter()
            .find(|e| !elements_one.contains(e) && !elements_two.contains(e))
        {
            return Err(ProtocolError::InvalidPartition(format!(
                "{e} is on neither side"
            )));
        }
        let (deposit, period) = (td.params.fork_deposit, td.params.fork_vote_period);
        let bond = economy_mut(td)?.bond_stake(
            agent,
            deposit,
            BondPurpose::ForkDeposit,
            now.saturating_add(period),
        )?;
        let kind = PollKind::Fork {
            elements_one: elements_one.clone(),
            elements_two: elements_two.clone(),
            holders_one: BTreeSet::new(),
            holders_two: BTreeSet::new(),
        };
        let poll = self.open_poll(scope, kind, agent, bond, period);
        Ok(Effect::Opened { poll })
    }

    fn next_event(&self) -> Option<Tick> {
        let polls = self.open_polls().map(|p| p.close_tick).min();
        let epoch = (!self.store.fault_model().drop_probability.is_zero())
            .then(|| (self.store.epoch() + 1).saturating_mul(FAULT_EPOCH_TICKS));
        [next_release(&self.root), polls, epoch]
            .into_iter()
            .flatten()
            .min()
    }

    /// Moves the clock to `to`, processing every tick on the way at which
    /// something falls due. Within a tick: reward releases, fault-model
    /// drops, poll resolutions in id order, then releases created by those
    /// resolutions.
    fn advance_time(&mut self, to: Tick) -> Result<Effect> {
        if to < self.now {
            return Err(ProtocolError::ClockRegression { now: self.now, to });
        }
        let mut released = Vec::new();
        let mut dropped = Vec::new();
        let mut resolutions = Vec::new();
        while let Some(next) = self.next_event().filter(|t| *t <= to) {
            let t = next.max(self.now);
            self.now = t;
            release_due(&mut self.root, &mut Vec::new(), t, &mut released)?;
            if !self.store.fault_model().drop_probability.is_zero()
                && (self.store.epoch() + 1).saturating_mul(FAULT_EPOCH_TICKS) <= t
            {
                dropped.extend(self.store.advance_epoch());
            }
            let due: Vec<PollId> = self
                .open_polls()
                .filter(|p| p.close_tick <= t)
                .map(|p| p.id)
                .collect();
            for id in due {
                if self.polls[id.0 as usize].is_open() {
                    resolutions.extend(self.settle(id)?);
                }
            }
            release_due(&mut self.root, &mut Vec::new(), t, &mut released)?;
        }
        self.now = to;
        Ok(Effect::Advanced {
            released,
            dropped,
            resolutions,
        })
    }
}
