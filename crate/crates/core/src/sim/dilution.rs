use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::ledger::Issuance;
use crate::offchain::FaultModel;
use crate::protocol::{Choice, Command, Effect, Engine, Outcome, ProtocolConfig, Scope};
use crate::structure::{ElementBody, ElementState, Params, TokenizedDataStructure, Visibility};
use crate::units::{AgentId, BasisPoints, Fraction, MonetaryAmount, TokenAmount, MICRO};

/// Cost of forcing a candidacy quorum in the structure at one depth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilutionRow {
    pub depth: u32,
    pub supply: TokenAmount,
    pub quorum: BasisPoints,
    /// Smallest holding that passes the quorum alone.
    pub tokens_to_force: TokenAmount,
    pub cost: MonetaryAmount,
    /// The structure at this depth has no tokens left to vote with.
    pub degenerate: bool,
    /// The engine accepted a candidate on exactly `tokens_to_force` and
    /// rejected it on one micro-token less.
    pub verified: bool,
}

fn attacker() -> AgentId {
    AgentId::new("madman")
}

fn holder() -> AgentId {
    AgentId::new("holder")
}

fn supply_at(base: TokenAmount, shrink: Fraction, depth: u32) -> TokenAmount {
    let mut s = base.micros() as u128;
    for _ in 1..depth {
        s = s * shrink.micros() as u128 / MICRO as u128;
    }
    TokenAmount::from_micros(s as u64)
}

/// A chain of `supplies.len()` nested structures; the innermost gives the
/// attacker `stake` and a bystander the rest.
fn build_chain(
    params: &Params,
    supplies: &[TokenAmount],
    stake: TokenAmount,
) -> Result<(TokenizedDataStructure, Scope), SimError> {
    let setup = |e: &dyn std::fmt::Display| SimError::Setup(e.to_string());
    let (inner_supply, outer) = supplies.split_last().expect("depth is at least 1");
    let mut alloc = BTreeMap::new();
    alloc.insert(attacker(), stake);
    alloc.insert(
        holder(),
        TokenAmount::from_micros(inner_supply.micros() - stake.micros()),
    );
    let mut td = TokenizedDataStructure::new(
        params.clone(),
        format!("depth-{}", supplies.len()),
        &alloc,
        Issuance::Mining,
    )
    .map_err(|e| setup(&e))?;
    let mut scope = Vec::new();
    for (level, supply) in outer.iter().enumerate().rev() {
        let alloc = BTreeMap::from([(holder(), *supply)]);
        let mut parent = TokenizedDataStructure::new(
            params.clone(),
            format!("depth-{}", level + 1),
            &alloc,
            Issuance::Mining,
        )
        .map_err(|e| setup(&e))?;
        let id = parent
            .insert(
                ElementBody::Nested(Box::new(td)),
                holder(),
                0,
                ElementState::QuasiFinalized,
            )
            .map_err(|e| setup(&e))?;
        scope.insert(0, id);
        td = parent;
    }
    Ok((td, scope))
}

/// Whether a candidate backed by the attacker's vote alone is accepted.
fn passes_alone(
    params: &Params,
    supplies: &[TokenAmount],
    stake: TokenAmount,
) -> Result<bool, SimError> {
    let (root, scope) = build_chain(params, supplies, stake)?;
    let mut engine = Engine::new(root, ProtocolConfig::default(), FaultModel::default())
        .map_err(|e| SimError::Setup(e.to_string()))?;
    let poll = match engine.apply(Command::ProposeCandidate {
        scope,
        agent: attacker(),
        body: ElementBody::inline(b"forced".to_vec(), Visibility::Public),
    }) {
        Ok(Effect::Proposed { poll: Some(p), .. }) => p,
        other => return Err(SimError::Setup(format!("proposal failed: {other:?}"))),
    };
    let _ = engine.apply(Command::CastVote {
        poll,
        agent: attacker(),
        choice: Choice::Yes,
    });
    let close = engine
        .poll(poll)
        .map_err(|e| SimError::Setup(e.to_string()))?
        .close_tick;
    engine
        .apply(Command::AdvanceTime { to: close })
        .map_err(|e| SimError::Setup(e.to_string()))?;
    let outcome = engine
        .poll(poll)
        .map_err(|e| SimError::Setup(e.to_string()))?
        .outcome;
    Ok(outcome == Some(Outcome::Accepted))
}

/// For depths `1..=max_depth`, each level holding `shrink` times its
/// parent's supply: the tokens and money a lone attacker needs to pass a
/// candidacy vote, each checked against the engine.
pub fn depth_dilution_scan(
    params: &Params,
    base_supply: TokenAmount,
    shrink: Fraction,
    max_depth: u32,
    unit_value: MonetaryAmount,
) -> Result<Vec<DilutionRow>, SimError> {
    let quorum = params.candidate_quorum;
    let mut rows = Vec::new();
    let mut supplies = Vec::new();
    for depth in 1..=max_depth {
        let supply = supply_at(base_supply, shrink, depth);
        supplies.push(supply);
        if supply.is_zero() {
            rows.push(DilutionRow {
                depth,
                supply,
                quorum,
                tokens_to_force: TokenAmount::ZERO,
                cost: MonetaryAmount::ZERO,
                degenerate: true,
                verified: false,
            });
            continue;
        }
        let need = quorum.min_weight(supply);
        let verified = supplies.iter().all(|s| !s.is_zero())
            && passes_alone(params, &supplies, need)?
            && (need.is_zero()
                || !passes_alone(
                    params,
                    &supplies,
                    TokenAmount::from_micros(need.micros() - 1),
                )?);
        rows.push(DilutionRow {
            depth,
            supply,
            quorum,
            tokens_to_force: need,
            cost: MonetaryAmount::from_micros(unit_value.times_tokens(need).micros() as u64),
            degenerate: false,
            verified,
        });
    }
    Ok(rows)
}
