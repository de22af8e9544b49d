use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use super::*;
use crate::ledger::{BondState, Issuance};
use crate::offchain::FaultModel;
use crate::structure::{ElementBody, ElementState, Params, TokenizedDataStructure, Visibility};
use crate::units::{BasisPoints, Fraction, TokenAmount};

fn a(s: &str) -> AgentId {
    AgentId::from(s)
}

fn tokens(n: u64) -> TokenAmount {
    TokenAmount::from_units(n)
}

fn money(n: u64) -> MonetaryAmount {
    MonetaryAmount::from_units(n)
}

fn td(params: Params, holders: &[(&str, u64)], issuance: Issuance) -> TokenizedDataStructure {
    let alloc: BTreeMap<AgentId, TokenAmount> =
        holders.iter().map(|(h, n)| (a(h), tokens(*n))).collect();
    TokenizedDataStructure::new(params, "T", &alloc, issuance).unwrap()
}

fn engine_with(params: Params, holders: &[(&str, u64)], config: ProtocolConfig) -> Engine {
    Engine::recording(
        td(params, holders, Issuance::Mining),
        config,
        FaultModel::default(),
    )
    .unwrap()
}

fn engine(holders: &[(&str, u64)]) -> Engine {
    engine_with(Params::default(), holders, ProtocolConfig::default())
}

fn leaf(s: &str) -> ElementBody {
    ElementBody::inline(s.as_bytes(), Visibility::Public)
}

fn propose(e: &mut Engine, agent: &str, body: ElementBody) -> (ElementId, PollId) {
    match e
        .apply(Command::ProposeCandidate {
            scope: vec![],
            agent: a(agent),
            body,
        })
        .unwrap()
    {
        Effect::Proposed {
            element,
            poll: Some(poll),
        } => (element, poll),
        other => panic!("unexpected {other:?}"),
    }
}

fn vote(e: &mut Engine, poll: PollId, agent: &str, choice: Choice) -> Result<Effect> {
    e.apply(Command::CastVote {
        poll,
        agent: a(agent),
        choice,
    })
}

fn advance(e: &mut Engine, to: Tick) -> Vec<Resolution> {
    match e.apply(Command::AdvanceTime { to }).unwrap() {
        Effect::Advanced { resolutions, .. } => resolutions,
        other => panic!("unexpected {other:?}"),
    }
}

fn challenge(e: &mut Engine, agent: &str, element: ElementId) -> Result<PollId> {
    e.apply(Command::IssueChallenge {
        scope: vec![],
        agent: a(agent),
        element,
    })
    .map(|eff| match eff {
        Effect::Opened { poll } => poll,
        other => panic!("unexpected {other:?}"),
    })
}

/// Accepted leaf proposed by `maker` at tick 0, accepted at tick 72.
fn accepted(e: &mut Engine, maker: &str, voter: &str, payload: &str) -> ElementId {
    let (el, poll) = propose(e, maker, leaf(payload));
    vote(e, poll, voter, Choice::Yes).unwrap();
    let close = e.poll(poll).unwrap().close_tick;
    advance(e, close);
    assert_eq!(e.root().state(el), Some(ElementState::QuasiFinalized));
    el
}

fn economy(e: &Engine) -> &crate::ledger::TokenEconomy {
    e.root().economy().unwrap()
}

#[test]
fn zero_deposit_admits_any_maker() {
    let mut e = engine(&[("founder", 100), ("maker", 10)]);
    let (el, poll) = propose(&mut e, "maker", leaf("x"));
    assert_eq!(e.poll(poll).unwrap().close_tick, 72);
    assert_eq!(e.root().state(el), Some(ElementState::Candidate));
    // Holding tokens is not required when the deposit is zero.
    propose(&mut e, "nobody", leaf("y"));
}

#[test]
fn maker_below_deposit_is_refused() {
    let params = Params {
        candidate_deposit: tokens(20),
        ..Params::default()
    };
    let mut e = engine_with(
        params,
        &[("founder", 100), ("maker", 10)],
        ProtocolConfig::default(),
    );
    let err = e
        .apply(Command::ProposeCandidate {
            scope: vec![],
            agent: a("maker"),
            body: leaf("x"),
        })
        .unwrap_err();
    assert!(matches!(
        err,
        ProtocolError::Ledger(LedgerError::InsufficientTokens { .. })
    ));
    assert!(e.root().elements().is_empty());
}

#[test]
fn duplicate_content_is_refused_while_live() {
    let mut e = engine(&[("founder", 100)]);
    accepted(&mut e, "founder", "founder", "same");
    let err = e
        .apply(Command::ProposeCandidate {
            scope: vec![],
            agent: a("sybil"),
            body: leaf("same"),
        })
        .unwrap_err();
    assert_eq!(
        err,
        ProtocolError::DuplicateContent(crate::Digest::of(b"same"))
    );

    let mut open = engine_with(
        Params::default(),
        &[("founder", 100)],
        ProtocolConfig {
            dedup: false,
            ..ProtocolConfig::default()
        },
    );
    accepted(&mut open, "founder", "founder", "same");
    propose(&mut open, "sybil", leaf("same"));
}

#[test]
fn vote_window_is_half_open() {
    let mut e = engine(&[("a", 40), ("b", 260)]);
    let (_, poll) = propose(&mut e, "a", leaf("x"));
    assert_eq!(
        vote(&mut e, poll, "a", Choice::Yes).unwrap(),
        Effect::Voted { weight: tokens(40) }
    );
    assert_eq!(
        vote(&mut e, poll, "a", Choice::No).unwrap_err(),
        ProtocolError::AlreadyVoted {
            poll,
            agent: a("a")
        }
    );
    assert_eq!(
        vote(&mut e, poll, "stranger", Choice::No).unwrap_err(),
        ProtocolError::NotTokenHolder(a("stranger"))
    );
    e.apply(Command::AdvanceTime { to: 71 }).unwrap();
    vote(&mut e, poll, "b", Choice::No).unwrap();
    let mut late = engine(&[("a", 40), ("b", 260)]);
    let (_, poll) = propose(&mut late, "a", leaf("x"));
    // Stepping onto the close tick resolves the poll; voting is over.
    late.apply(Command::AdvanceTime { to: 72 }).unwrap();
    assert_eq!(
        vote(&mut late, poll, "b", Choice::Yes).unwrap_err(),
        ProtocolError::PollClosed(poll)
    );
}

#[test]
fn candidacy_quorum_boundary() {
    for (yes, expect) in [(200, Outcome::Rejected), (201, Outcome::Accepted)] {
        let mut e = engine(&[("y", yes), ("n", 300 - yes)]);
        let (_, poll) = propose(&mut e, "y", leaf("x"));
        vote(&mut e, poll, "y", Choice::Yes).unwrap();
        let res = advance(&mut e, 72);
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].outcome, expect, "yes weight {yes}");
    }
}

#[test]
fn unvoted_candidate_is_removed() {
    let mut e = engine(&[("a", 100)]);
    let (el, _) = propose(&mut e, "a", leaf("x"));
    assert_eq!(advance(&mut e, 72)[0].outcome, Outcome::Rejected);
    assert_eq!(e.root().state(el), Some(ElementState::Removed));
}

#[test]
fn accepted_candidate_earns_bonded_reward() {
    let mut e = engine(&[("founder", 100)]);
    let el = accepted(&mut e, "maker", "founder", "x");
    let bond_id = e.root().metadata(el).unwrap().reward_bond.unwrap();
    let bond = economy(&e).bond(bond_id).unwrap();
    assert_eq!(bond.amount, tokens(1));
    assert_eq!(bond.owner, a("maker"));
    assert_eq!(bond.release_tick, 72 + 720);
    assert_eq!(economy(&e).total_supply(), tokens(101));
    assert_eq!(economy(&e).holdings(&a("maker")), TokenAmount::ZERO);
}

#[test]
fn predetermined_issuance_pays_no_reward() {
    let mut e = Engine::new(
        td(
            Params::default(),
            &[("founder", 100)],
            Issuance::Predetermined,
        ),
        ProtocolConfig::default(),
        FaultModel::default(),
    )
    .unwrap();
    let el = accepted(&mut e, "maker", "founder", "x");
    assert_eq!(e.root().metadata(el).unwrap().reward_bond, None);
    assert_eq!(economy(&e).total_supply(), tokens(100));
}

#[test]
fn forfeit_flag_burns_rejected_deposit() {
    let params = Params {
        candidate_deposit: tokens(5),
        ..Params::default()
    };
    for (forfeit, after) in [(false, 10), (true, 5)] {
        let config = ProtocolConfig {
            forfeit_rejected_deposit: forfeit,
            ..ProtocolConfig::default()
        };
        let mut e = engine_with(params.clone(), &[("founder", 100), ("maker", 10)], config);
        propose(&mut e, "maker", leaf("x"));
        assert_eq!(economy(&e).holdings(&a("maker")), tokens(5));
        advance(&mut e, 72);
        assert_eq!(economy(&e).holdings(&a("maker")), tokens(after));
    }
}

#[test]
fn resolve_requires_closed_and_unresolved_poll() {
    let mut e = engine(&[("a", 100)]);
    let (_, poll) = propose(&mut e, "a", leaf("x"));
    assert_eq!(
        e.apply(Command::Resolve { poll }).unwrap_err(),
        ProtocolError::PollStillOpen {
            poll,
            close_tick: 72
        }
    );
    advance(&mut e, 72);
    assert_eq!(
        e.apply(Command::Resolve { poll }).unwrap_err(),
        ProtocolError::PollAlreadyResolved(poll)
    );
    assert_eq!(
        e.apply(Command::Resolve { poll: PollId(9) }).unwrap_err(),
        ProtocolError::UnknownPoll(PollId(9))
    );
}

#[test]
fn challenge_requires_live_element() {
    let mut e = engine(&[("a", 100)]);
    let (el, _) = propose(&mut e, "a", leaf("x"));
    assert_eq!(
        challenge(&mut e, "a", el).unwrap_err(),
        ProtocolError::ElementNotLive(el)
    );
}

#[test]
fn upheld_challenge_within_statute_burns_reward() {
    let mut e = engine(&[("founder", 100)]);
    let el = accepted(&mut e, "maker", "founder", "x");
    let poll = challenge(&mut e, "founder", el).unwrap();
    assert_eq!(e.poll(poll).unwrap().close_tick, 72 + 120);
    assert_eq!(
        challenge(&mut e, "founder", el).unwrap_err(),
        ProtocolError::ChallengePending(el)
    );
    vote(&mut e, poll, "founder", Choice::Yes).unwrap();
    let res = advance(&mut e, 192);
    assert_eq!(res[0].outcome, Outcome::Upheld);
    assert_eq!(res[0].seized, tokens(1));
    assert_eq!(e.root().state(el), Some(ElementState::Challenged));
    assert_eq!(economy(&e).ownership(&a("maker")), TokenAmount::ZERO);
    assert_eq!(economy(&e).total_supply(), tokens(100));
    assert!(e.root().live_elements().is_empty());
}

#[test]
fn seizure_can_pay_the_challenger() {
    let config = ProtocolConfig {
        seizure_to_challenger: true,
        ..ProtocolConfig::default()
    };
    let mut e = engine_with(Params::default(), &[("founder", 100)], config);
    let el = accepted(&mut e, "maker", "founder", "x");
    let poll = challenge(&mut e, "founder", el).unwrap();
    vote(&mut e, poll, "founder", Choice::Yes).unwrap();
    advance(&mut e, 192);
    assert_eq!(economy(&e).holdings(&a("founder")), tokens(101));
    assert_eq!(economy(&e).total_supply(), tokens(101));
}

#[test]
fn upheld_challenge_after_statute_leaves_ledger_alone() {
    let mut e = engine(&[("founder", 100)]);
    let el = accepted(&mut e, "maker", "founder", "x");
    advance(&mut e, 800);
    assert_eq!(economy(&e).holdings(&a("maker")), tokens(1));
    let before = (
        economy(&e).holdings_map().clone(),
        economy(&e).total_supply(),
    );
    let poll = challenge(&mut e, "founder", el).unwrap();
    vote(&mut e, poll, "founder", Choice::Yes).unwrap();
    let res = advance(&mut e, 920);
    assert_eq!(res[0].outcome, Outcome::Upheld);
    assert_eq!(res[0].seized, TokenAmount::ZERO);
    assert_eq!(e.root().state(el), Some(ElementState::Challenged));
    assert_eq!(
        (
            economy(&e).holdings_map().clone(),
            economy(&e).total_supply()
        ),
        before
    );
}

#[test]
fn dismissed_challenge_forfeits_deposit() {
    let params = Params {
        challenge_deposit: tokens(10),
        ..Params::default()
    };
    let mut e = engine_with(
        params,
        &[("founder", 100), ("troll", 10)],
        ProtocolConfig::default(),
    );
    let el = accepted(&mut e, "maker", "founder", "x");
    let poll = challenge(&mut e, "troll", el).unwrap();
    vote(&mut e, poll, "founder", Choice::No).unwrap();
    let res = advance(&mut e, 192);
    assert_eq!(res[0].outcome, Outcome::Dismissed);
    assert_eq!(res[0].seized, tokens(10));
    assert_eq!(economy(&e).ownership(&a("troll")), TokenAmount::ZERO);
    assert_eq!(e.root().state(el), Some(ElementState::QuasiFinalized));
}

#[test]
fn reward_release_tick_is_the_statute_boundary() {
    // Accepted at 72, reward releases at 792.
    for (close, seized) in [(791, tokens(1)), (792, TokenAmount::ZERO)] {
        let mut e = engine(&[("founder", 100)]);
        let el = accepted(&mut e, "maker", "founder", "x");
        advance(&mut e, close - 120);
        let poll = challenge(&mut e, "founder", el).unwrap();
        vote(&mut e, poll, "founder", Choice::Yes).unwrap();
        let res = advance(&mut e, close);
        assert_eq!(res[0].seized, seized, "challenge closing at {close}");
    }
}

#[test]
fn polls_closing_together_resolve_in_id_order() {
    let mut e = engine(&[("a", 100)]);
    propose(&mut e, "a", leaf("x"));
    propose(&mut e, "a", leaf("y"));
    let res = advance(&mut e, 100);
    assert_eq!(
        res.iter().map(|r| r.poll).collect::<Vec<_>>(),
        vec![PollId(0), PollId(1)]
    );
    assert!(advance(&mut e, 200).is_empty());
    assert_eq!(
        e.apply(Command::AdvanceTime { to: 10 }).unwrap_err(),
        ProtocolError::ClockRegression { now: 200, to: 10 }
    );
}

fn offchain_engine(fault: FaultModel) -> (Engine, ElementId, crate::Digest) {
    let params = Params {
        offchain: true,
        ..Params::default()
    };
    let mut e = Engine::recording(
        td(params, &[("founder", 100)], Issuance::Mining),
        ProtocolConfig::default(),
        fault,
    )
    .unwrap();
    let digest = match e
        .apply(Command::StorePut {
            payload: b"blob".to_vec(),
        })
        .unwrap()
    {
        Effect::Stored { digest } => digest,
        other => panic!("unexpected {other:?}"),
    };
    let body = ElementBody::offchain(digest, a("owner"), Visibility::Public);
    let (el, poll) = propose(&mut e, "owner", body);
    vote(&mut e, poll, "founder", Choice::Yes).unwrap();
    advance(&mut e, 72);
    (e, el, digest)
}

fn probe(e: &mut Engine, el: ElementId) -> PollId {
    match e
        .apply(Command::LivenessChallenge {
            scope: vec![],
            agent: a("founder"),
            element: el,
            nonce: [7; 32],
        })
        .unwrap()
    {
        Effect::Opened { poll } => poll,
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn liveness_proof_dismisses_probe() {
    let (mut e, el, digest) = offchain_engine(FaultModel::default());
    let poll = probe(&mut e, el);
    let proof = e.store().prove(el, &digest, [7; 32]).unwrap();
    let eff = e
        .apply(Command::RespondLiveness {
            poll,
            agent: a("owner"),
            proof,
        })
        .unwrap();
    let Effect::Resolved { resolutions } = eff else {
        panic!()
    };
    assert_eq!(resolutions[0].outcome, Outcome::Dismissed);
    assert_eq!(e.root().state(el), Some(ElementState::QuasiFinalized));
}

#[test]
fn missing_blob_burns_reward_on_timeout() {
    let (mut e, el, digest) = offchain_engine(FaultModel::default());
    e.apply(Command::StoreRemove { digest }).unwrap();
    let poll = probe(&mut e, el);
    assert!(e.store().prove(el, &digest, [7; 32]).is_none());
    let close = e.poll(poll).unwrap().close_tick;
    let res = advance(&mut e, close);
    assert_eq!(res[0].outcome, Outcome::Upheld);
    assert_eq!(res[0].seized, tokens(1));
    assert_eq!(e.root().state(el), Some(ElementState::Challenged));
    assert_eq!(economy(&e).total_supply(), tokens(100));
}

#[test]
fn forged_proof_upholds_at_once() {
    let (mut e, el, _) = offchain_engine(FaultModel::default());
    let poll = probe(&mut e, el);
    let forged = crate::offchain::LivenessProof::compute(el, b"not the blob", [7; 32]);
    assert_eq!(
        e.apply(Command::RespondLiveness {
            poll,
            agent: a("founder"),
            proof: forged.clone(),
        })
        .unwrap_err(),
        ProtocolError::NotOwner {
            agent: a("founder"),
            element: el
        }
    );
    let Effect::Resolved { resolutions } = e
        .apply(Command::RespondLiveness {
            poll,
            agent: a("owner"),
            proof: forged,
        })
        .unwrap()
    else {
        panic!()
    };
    assert_eq!(resolutions[0].outcome, Outcome::Upheld);
}

#[test]
fn fault_model_drops_blobs_on_epoch_ticks() {
    let fault = FaultModel {
        drop_probability: Fraction::ONE,
        rng_seed: 3,
    };
    let (mut e, el, digest) = offchain_engine(fault);
    // The epoch at tick 72 already dropped it.
    assert!(!e.store().contains(&digest));
    assert_eq!(
        e.apply(Command::QueryElement {
            scope: vec![],
            agent: a("x"),
            element: el
        })
        .unwrap_err(),
        ProtocolError::DataUnavailable(el)
    );
    let _ = &mut e;
}

#[test]
fn inline_leaf_cannot_be_probed() {
    let mut e = engine(&[("founder", 100)]);
    let el = accepted(&mut e, "maker", "founder", "x");
    assert_eq!(
        e.apply(Command::LivenessChallenge {
            scope: vec![],
            agent: a("founder"),
            element: el,
            nonce: [0; 32]
        })
        .unwrap_err(),
        ProtocolError::NotOffchainLeaf(el)
    );
}

fn member_engine(mode: MembershipMode) -> Engine {
    let params = Params {
        query_stake: tokens(5),
        ..Params::default()
    };
    let config = ProtocolConfig {
        membership_mode: mode,
        membership_price: money(100),
        ..ProtocolConfig::default()
    };
    engine_with(params, &[("a", 75), ("b", 25)], config)
}

fn join(e: &mut Engine, agent: &str, price: MonetaryAmount) -> Result<Effect> {
    e.apply(Command::AcquireMembership {
        scope: vec![],
        agent: a(agent),
        payment: price,
    })
}

#[test]
fn membership_payment_is_split_pro_rata() {
    let mut e = member_engine(MembershipMode::Minted);
    let Effect::Joined { payouts, .. } = join(&mut e, "q", money(100)).unwrap() else {
        panic!()
    };
    assert_eq!(payouts[&a("a")], money(75));
    assert_eq!(payouts[&a("b")], money(25));
    assert_eq!(economy(&e).total_supply(), tokens(105));
    assert_eq!(economy(&e).ownership(&a("q")), tokens(5));
    assert!(e.is_member(&[], &a("q")));
    assert_eq!(
        join(&mut e, "q", money(100)).unwrap_err(),
        ProtocolError::AlreadyMember(a("q"))
    );
    assert_eq!(
        join(&mut e, "r", money(99)).unwrap_err(),
        ProtocolError::WrongPrice {
            expected: money(100),
            got: money(99)
        }
    );
}

#[test]
fn steady_state_membership_keeps_supply() {
    let mut e = member_engine(MembershipMode::SteadyState);
    let Effect::Joined { sold, .. } = join(&mut e, "q", money(100)).unwrap() else {
        panic!()
    };
    assert_eq!(sold[&a("a")], TokenAmount::from_micros(3_750_000));
    assert_eq!(sold[&a("b")], TokenAmount::from_micros(1_250_000));
    assert_eq!(economy(&e).total_supply(), tokens(100));
    assert_eq!(economy(&e).ownership(&a("q")), tokens(5));
}

#[test]
fn private_data_needs_membership() {
    let mut e = member_engine(MembershipMode::Minted);
    let (public, p1) = propose(&mut e, "a", leaf("pub"));
    let (private, p2) = propose(
        &mut e,
        "a",
        ElementBody::inline(*b"secret", Visibility::Private),
    );
    vote(&mut e, p1, "a", Choice::Yes).unwrap();
    vote(&mut e, p2, "a", Choice::Yes).unwrap();
    advance(&mut e, 72);
    assert_eq!(e.read_element(&[], &a("q"), public).unwrap(), b"pub");
    assert_eq!(
        e.read_element(&[], &a("q"), private).unwrap_err(),
        ProtocolError::NotAMember(a("q"))
    );
    join(&mut e, "q", money(100)).unwrap();
    assert_eq!(e.read_element(&[], &a("q"), private).unwrap(), b"secret");
    e.apply(Command::SlashMembership {
        scope: vec![],
        member: a("q"),
    })
    .unwrap();
    assert_eq!(
        e.read_element(&[], &a("q"), private).unwrap_err(),
        ProtocolError::NotAMember(a("q"))
    );
}

#[test]
fn access_fee_pays_holders_without_tokens() {
    let config = ProtocolConfig {
        access_fee: money(10),
        ..ProtocolConfig::default()
    };
    let mut e = engine_with(Params::default(), &[("a", 75), ("b", 25)], config);
    let el = accepted(&mut e, "a", "a", "x");
    let Effect::Accessed { payouts, .. } = e
        .apply(Command::PayAccessFee {
            scope: vec![],
            agent: a("buyer"),
            element: el,
            payment: money(10),
        })
        .unwrap()
    else {
        panic!()
    };
    assert_eq!(payouts.values().copied().sum::<MonetaryAmount>(), money(10));
    assert_eq!(economy(&e).ownership(&a("buyer")), TokenAmount::ZERO);
}

fn fork(e: &mut Engine, scope: Scope, one: &[u64], two: &[u64]) -> Result<PollId> {
    e.apply(Command::ProposeFork {
        scope,
        agent: a("a"),
        elements_one: one.iter().map(|i| ElementId(*i)).collect(),
        elements_two: two.iter().map(|i| ElementId(*i)).collect(),
    })
    .map(|eff| match eff {
        Effect::Opened { poll } => poll,
        other => panic!("unexpected {other:?}"),
    })
}

#[test]
fn fork_rejects_bad_partitions() {
    let mut e = engine(&[("a", 100)]);
    accepted(&mut e, "a", "a", "x");
    accepted(&mut e, "a", "a", "y");
    for (one, two) in [(&[0u64, 1][..], &[1u64][..]), (&[0], &[]), (&[0, 1], &[5])] {
        assert!(matches!(
            fork(&mut e, vec![], one, two),
            Err(ProtocolError::InvalidPartition(_))
        ));
    }
    fork(&mut e, vec![], &[0], &[1]).unwrap();
}

#[test]
fn unanimous_side_one_leaves_an_empty_child() {
    let params = Params {
        fork_threshold: BasisPoints::new(2500),
        ..Params::default()
    };
    let mut e = engine_with(params, &[("a", 70), ("b", 30)], ProtocolConfig::default());
    accepted(&mut e, "a", "a", "x");
    let poll = fork(&mut e, vec![], &[0], &[]).unwrap();
    vote(&mut e, poll, "a", Choice::No).unwrap();
    vote(&mut e, poll, "b", Choice::Yes).unwrap();
    let close = e.poll(poll).unwrap().close_tick;
    let res = advance(&mut e, close);
    assert_eq!(res[0].outcome, Outcome::Forked);
    // "b" adopted side two with no elements; "a" and the bonded reward stay.
    let child = &e.detached()[0];
    assert_eq!(child.economy().unwrap().holdings(&a("b")), tokens(30));
    assert_eq!(child.economy().unwrap().total_supply(), tokens(30));
    assert!(child.elements().is_empty());
    assert_eq!(economy(&e).ownership(&a("b")), TokenAmount::ZERO);
    assert_eq!(economy(&e).total_supply(), tokens(71));

    let mut e = engine(&[("a", 70), ("b", 30)]);
    let poll = fork(&mut e, vec![], &[], &[]).unwrap();
    vote(&mut e, poll, "a", Choice::Yes).unwrap();
    vote(&mut e, poll, "b", Choice::Yes).unwrap();
    assert_eq!(advance(&mut e, 720)[0].outcome, Outcome::Forked);
    // Everyone left: the direct offshoot has an empty ledger.
    assert_eq!(economy(&e).total_supply(), TokenAmount::ZERO);
    assert!(economy(&e).holdings_map().is_empty());
}

#[test]
fn fork_threshold_is_inclusive() {
    for (yes, expect) in [(50, Outcome::Forked), (49, Outcome::NoFork)] {
        let mut e = engine(&[("a", yes), ("b", 100 - yes)]);
        let poll = fork(&mut e, vec![], &[], &[]).unwrap();
        vote(&mut e, poll, "a", Choice::Yes).unwrap();
        let res = advance(&mut e, 720);
        assert_eq!(res[0].outcome, expect);
    }
}

#[test]
fn fork_cancels_other_open_polls() {
    let mut e = engine(&[("a", 100)]);
    let poll = fork(&mut e, vec![], &[], &[]).unwrap();
    vote(&mut e, poll, "a", Choice::Yes).unwrap();
    e.apply(Command::AdvanceTime { to: 700 }).unwrap();
    let (el, cand) = propose(&mut e, "a", leaf("late"));
    let res = advance(&mut e, 720);
    assert_eq!(res[0].outcome, Outcome::Forked);
    assert_eq!(res[1].poll, cand);
    assert_eq!(res[1].outcome, Outcome::Cancelled);
    assert_eq!(e.root().state(el), Some(ElementState::Removed));
}

#[test]
fn nested_fork_detaches_variant_until_it_passes_candidacy() {
    let mut e = engine(&[("a", 100)]);
    let inner = td(Params::default(), &[("a", 10), ("b", 10)], Issuance::Mining);
    let (outer_el, poll) = propose(&mut e, "a", ElementBody::Nested(Box::new(inner)));
    vote(&mut e, poll, "a", Choice::Yes).unwrap();
    advance(&mut e, 72);
    let scope = vec![outer_el];
    let fork_poll = fork(&mut e, scope.clone(), &[], &[]).unwrap();
    vote(&mut e, fork_poll, "b", Choice::Yes).unwrap();
    let res = advance(&mut e, 72 + 720);
    assert_eq!(res[0].outcome, Outcome::Forked);
    assert_eq!(e.root().elements().len(), 1);
    assert_eq!(
        e.structure(&scope)
            .unwrap()
            .economy()
            .unwrap()
            .total_supply(),
        tokens(10)
    );
    let variant = e.detached()[0].clone();
    let (el, poll) = propose(&mut e, "b", ElementBody::Nested(Box::new(variant)));
    assert_eq!(e.root().state(el), Some(ElementState::Candidate));
    vote(&mut e, poll, "a", Choice::Yes).unwrap();
    advance(&mut e, 2000);
    assert_eq!(e.root().live_elements(), vec![outer_el, el]);
    assert_eq!(e.root().depth(), 2);
}

#[test]
fn nested_scope_votes_use_child_economy() {
    let mut e = engine(&[("a", 1000)]);
    let inner = td(Params::default(), &[("tiny", 3)], Issuance::Mining);
    let (outer, poll) = propose(&mut e, "a", ElementBody::Nested(Box::new(inner)));
    vote(&mut e, poll, "a", Choice::Yes).unwrap();
    advance(&mut e, 72);
    let Effect::Proposed { poll: Some(p), .. } = e
        .apply(Command::ProposeCandidate {
            scope: vec![outer],
            agent: a("tiny"),
            body: leaf("inner"),
        })
        .unwrap()
    else {
        panic!()
    };
    assert_eq!(
        vote(&mut e, p, "a", Choice::Yes).unwrap_err(),
        ProtocolError::NotTokenHolder(a("a"))
    );
    vote(&mut e, p, "tiny", Choice::Yes).unwrap();
    advance(&mut e, 200);
    assert_eq!(e.structure(&[outer]).unwrap().live_elements().len(), 1);
    assert_eq!(
        e.apply(Command::QueryElement {
            scope: vec![ElementId(9)],
            agent: a("a"),
            element: ElementId(0)
        })
        .unwrap_err(),
        ProtocolError::UnknownScope(vec![ElementId(9)])
    );
}

#[test]
fn token_free_structure_admits_directly() {
    let mut e = Engine::new(
        TokenizedDataStructure::token_free(Params::default()).unwrap(),
        ProtocolConfig::default(),
        FaultModel::default(),
    )
    .unwrap();
    let eff = e
        .apply(Command::ProposeCandidate {
            scope: vec![],
            agent: a("x"),
            body: leaf("k"),
        })
        .unwrap();
    assert_eq!(
        eff,
        Effect::Proposed {
            element: ElementId(0),
            poll: None
        }
    );
    assert_eq!(
        challenge(&mut e, "x", ElementId(0)).unwrap_err(),
        ProtocolError::NoEconomy
    );
}

#[test]
fn replay_reproduces_state() {
    let (mut e, el, digest) = offchain_engine(FaultModel::default());
    let poll = probe(&mut e, el);
    let proof = e.store().prove(el, &digest, [7; 32]).unwrap();
    e.apply(Command::RespondLiveness {
        poll,
        agent: a("owner"),
        proof,
    })
    .unwrap();
    let _ = challenge(&mut e, "nobody-with-tokens", ElementId(77));
    advance(&mut e, 1000);
    let text = e.log().unwrap().to_text();
    let parsed = log::EventLog::parse(&text).unwrap();
    assert_eq!(&parsed, e.log().unwrap());
    let replayed = parsed.replay().unwrap();
    assert_eq!(replayed.state_digest(), e.state_digest());
    assert_eq!(replayed.log().unwrap().to_text(), text);
}

#[test]
fn replay_detects_tampering() {
    let mut e = engine(&[("a", 40), ("b", 60)]);
    let (_, poll) = propose(&mut e, "a", leaf("x"));
    vote(&mut e, poll, "a", Choice::Yes).unwrap();
    advance(&mut e, 100);
    let text = e.log().unwrap().to_text();
    let edited = text.replace("\"weight\":\"40.000000\"", "\"weight\":\"60.000000\"");
    assert_ne!(edited, text);
    let err = log::EventLog::parse(&edited).unwrap().replay().unwrap_err();
    assert!(
        matches!(err, log::ReplayError::Divergence { seq: 1, .. }),
        "{err}"
    );

    let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
    let short = log::EventLog::parse(&truncated).unwrap().replay().unwrap();
    assert_ne!(short.state_digest(), e.state_digest());
}

/// Quorum decision recomputed with plain integers.
fn quorum_oracle(yes_micros: u64, supply_micros: u64, bp: u32) -> bool {
    yes_micros as u128 * 10_000 >= bp as u128 * supply_micros as u128
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quorum_outcome_matches_integer_oracle(
        weights in proptest::collection::vec(1u64..1_000_000_000, 1..6),
        yes_mask in any::<u8>(),
        bp in 1u32..=10_000,
    ) {
        let holders: Vec<(String, u64)> = weights.iter().enumerate().map(|(i, w)| (format!("h{i}"), *w)).collect();
        let alloc: BTreeMap<AgentId, TokenAmount> =
            holders.iter().map(|(h, w)| (a(h), TokenAmount::from_micros(*w))).collect();
        let params = Params { candidate_quorum: BasisPoints::new(bp), ..Params::default() };
        let mut e = Engine::new(
            TokenizedDataStructure::new(params, "T", &alloc, Issuance::Mining).unwrap(),
            ProtocolConfig::default(),
            FaultModel::default(),
        ).unwrap();
        let (_, poll) = propose(&mut e, "h0", leaf("x"));
        let mut yes = 0;
        for (i, (h, w)) in holders.iter().enumerate() {
            let choice = if yes_mask >> i & 1 == 1 { yes += w; Choice::Yes } else { Choice::No };
            vote(&mut e, poll, h, choice).unwrap();
        }
        let supply: u64 = weights.iter().sum();
        let res = advance(&mut e, 72);
        let expect = if quorum_oracle(yes, supply, bp) { Outcome::Accepted } else { Outcome::Rejected };
        prop_assert_eq!(res[0].outcome, expect);
    }

    #[test]
    fn forks_split_disjointly(
        n_elements in 0usize..6,
        sides in any::<u16>(),
        adopt in any::<u8>(),
        holders in proptest::collection::vec(1u64..50, 1..6),
    ) {
        let alloc: Vec<(String, u64)> = holders.iter().enumerate().map(|(i, t)| (format!("h{i}"), *t)).collect();
        let refs: Vec<(&str, u64)> = alloc.iter().map(|(h, t)| (h.as_str(), *t)).collect();
        let params = Params { fork_threshold: BasisPoints::new(1), ..Params::default() };
        let mut e = engine_with(params, &refs, ProtocolConfig { dedup: false, ..ProtocolConfig::default() });
        for i in 0..n_elements {
            propose(&mut e, "h0", leaf(&format!("e{i}")));
        }
        advance(&mut e, 100);
        let (two, one): (Vec<u64>, Vec<u64>) = (0..n_elements as u64).partition(|i| sides >> i & 1 == 1);
        let poll = fork(&mut e, vec![], &one, &two).unwrap();
        for (i, (h, _)) in alloc.iter().enumerate() {
            let choice = if adopt >> i & 1 == 1 { Choice::Yes } else { Choice::No };
            vote(&mut e, poll, h, choice).unwrap();
        }
        let before = economy(&e).ownership_map();
        let res = advance(&mut e, 1000);
        let forked = res[0].outcome == Outcome::Forked;
        let any_yes = (0..alloc.len()).any(|i| adopt >> i & 1 == 1);
        prop_assert_eq!(forked, any_yes);
        if forked {
            let l1 = economy(&e).ownership_map();
            let l2 = e.detached()[0].economy().unwrap().ownership_map();
            prop_assert!(l1.keys().all(|k| !l2.contains_key(k)));
            let mut joined = l1.clone();
            joined.extend(l2);
            prop_assert_eq!(joined, before);
            let e1: BTreeSet<ElementId> = e.root().elements().iter().map(|x| x.id).collect();
            let e2: BTreeSet<ElementId> = e.detached()[0].elements().iter().map(|x| x.id).collect();
            prop_assert!(e1.is_disjoint(&e2));
            prop_assert_eq!(e1.len() + e2.len(), n_elements);
            e.root().validate().unwrap();
            e.detached()[0].validate().unwrap();
        }
    }

    #[test]
    fn statute_expiry_freezes_ledger(extra in 0u64..500) {
        let mut e = engine(&[("founder", 100)]);
        let el = accepted(&mut e, "maker", "founder", "x");
        advance(&mut e, 792 + extra);
        let before = economy(&e).holdings_map().clone();
        let supply = economy(&e).total_supply();
        let poll = challenge(&mut e, "founder", el).unwrap();
        vote(&mut e, poll, "founder", Choice::Yes).unwrap();
        advance(&mut e, 792 + extra + 120);
        prop_assert_eq!(economy(&e).holdings_map(), &before);
        prop_assert_eq!(economy(&e).total_supply(), supply);
        prop_assert_eq!(
            economy(&e).bonds().iter().filter(|b| b.state == BondState::Seized).count(),
            0
        );
    }

    #[test]
    fn private_payload_only_reaches_members(ops in proptest::collection::vec((0u8..4, 0u8..3), 1..20)) {
        let mut e = member_engine(MembershipMode::Minted);
        let (el, p) = propose(&mut e, "a", ElementBody::inline(*b"secret", Visibility::Private));
        vote(&mut e, p, "a", Choice::Yes).unwrap();
        advance(&mut e, 72);
        for (op, who) in ops {
            let agent = a(["x", "y", "z"][who as usize]);
            match op {
                0 => { let _ = join(&mut e, agent.as_str(), money(100)); }
                1 => { let _ = e.apply(Command::SlashMembership { scope: vec![], member: agent.clone() }); }
                _ => {
                    let member = e.is_member(&[], &agent);
                    let got = e.read_element(&[], &agent, el);
                    prop_assert_eq!(got.is_ok(), member);
                }
            }
        }
    }
}
