//! Candidacy, challenge, liveness, membership and fork polls.
//!
//! [`Engine`] owns a structure (and any structures nested inside it), the
//! content store and every poll. All mutation goes through
//! [`Engine::apply`], one [`Command`] at a time; each application can be
//! recorded and replayed byte for byte (see [`log`]).

mod engine;
pub mod log;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::Digest;
use crate::ledger::{BondId, LedgerError};
use crate::offchain::{LivenessProof, StoreError};
use crate::structure::{ElementBody, ElementId, StructureError};
use crate::units::{AgentId, MonetaryAmount, Tick, TokenAmount};

pub use engine::Engine;

/// Path of nested element ids from the root structure to a sub-structure.
/// The empty path is the root.
pub type Scope = Vec<ElementId>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PollId(pub u64);

impl std::fmt::Display for PollId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("structure has no token economy")]
    NoEconomy,
    #[error("no structure at scope {0:?}")]
    UnknownScope(Scope),
    #[error("unknown poll {0}")]
    UnknownPoll(PollId),
    #[error("poll {0} is closed")]
    PollClosed(PollId),
    #[error("poll {poll} is open until tick {close_tick}")]
    PollStillOpen { poll: PollId, close_tick: Tick },
    #[error("poll {0} is already resolved")]
    PollAlreadyResolved(PollId),
    #[error("poll {0} does not take this action")]
    WrongPollKind(PollId),
    #[error("{agent} already voted in poll {poll}")]
    AlreadyVoted { poll: PollId, agent: AgentId },
    #[error("{0} holds no free tokens")]
    NotTokenHolder(AgentId),
    #[error("content {0} is already live")]
    DuplicateContent(Digest),
    #[error("element {0} is not live")]
    ElementNotLive(ElementId),
    #[error("element {0} already has an open challenge")]
    ChallengePending(ElementId),
    #[error("element {0} is not an off-chain leaf")]
    NotOffchainLeaf(ElementId),
    #[error("element {0} is not a leaf")]
    NotALeaf(ElementId),
    #[error("off-chain payload {0} is not in the store")]
    PayloadNotStored(Digest),
    #[error("{0} has no active membership")]
    NotAMember(AgentId),
    #[error("{0} is already a member")]
    AlreadyMember(AgentId),
    #[error("price is {expected}, got {got}")]
    WrongPrice {
        expected: MonetaryAmount,
        got: MonetaryAmount,
    },
    #[error("data for element {0} is unavailable")]
    DataUnavailable(ElementId),
    #[error("{agent} does not own element {element}")]
    NotOwner { agent: AgentId, element: ElementId },
    #[error("invalid fork partition: {0}")]
    InvalidPartition(String),
    #[error("clock cannot move back from {now} to {to}")]
    ClockRegression { now: Tick, to: Tick },
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("store: {0}")]
    Store(String),
}

impl From<StoreError> for ProtocolError {
    fn from(e: StoreError) -> Self {
        Self::Store(e.to_string())
    }
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub choice: Choice,
    pub weight: TokenAmount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum PollKind {
    Candidacy {
        element: ElementId,
    },
    Challenge {
        element: ElementId,
    },
    Liveness {
        element: ElementId,
        #[serde(with = "crate::canonical::hex_array")]
        nonce: [u8; 32],
    },
    /// A `Yes` vote adopts side two (the forked variant); `No` and abstention
    /// stay on side one. Holder sides are filled in at resolution.
    Fork {
        elements_one: BTreeSet<ElementId>,
        elements_two: BTreeSet<ElementId>,
        holders_one: BTreeSet<AgentId>,
        holders_two: BTreeSet<AgentId>,
    },
}

impl PollKind {
    pub fn element(&self) -> Option<ElementId> {
        match self {
            Self::Candidacy { element }
            | Self::Challenge { element }
            | Self::Liveness { element, .. } => Some(*element),
            Self::Fork { .. } => None,
        }
    }

    fn takes_votes(&self) -> bool {
        !matches!(self, Self::Liveness { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected,
    Upheld,
    Dismissed,
    Forked,
    NoFork,
    /// Closed without a decision because a fork split the structure.
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Poll {
    pub id: PollId,
    pub scope: Scope,
    pub kind: PollKind,
    pub proposer: AgentId,
    pub deposit_bond: BondId,
    pub open_tick: Tick,
    pub close_tick: Tick,
    pub votes: BTreeMap<AgentId, Vote>,
    pub outcome: Option<Outcome>,
}

impl Poll {
    pub fn is_open(&self) -> bool {
        self.outcome.is_none()
    }

    pub fn weight_for(&self, choice: Choice) -> TokenAmount {
        self.votes
            .values()
            .filter(|v| v.choice == choice)
            .map(|v| v.weight)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipRecord {
    pub scope: Scope,
    pub agent: AgentId,
    pub stake_bond: BondId,
    pub acquired_tick: Tick,
}

/// How a new member's query stake comes into existence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipMode {
    /// Freshly minted (needs mining issuance).
    #[default]
    Minted,
    /// Bought pro-rata from existing free holdings; supply never changes.
    SteadyState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Reject proposals whose content matches a pending or live element.
    pub dedup: bool,
    /// Hand a seized candidate reward to the challenger instead of burning it.
    pub seizure_to_challenger: bool,
    /// Burn a rejected candidate's deposit instead of refunding it.
    pub forfeit_rejected_deposit: bool,
    pub membership_mode: MembershipMode,
    pub membership_price: MonetaryAmount,
    /// One-off fee for transaction-mode access (no tokens change hands).
    pub access_fee: MonetaryAmount,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            dedup: true,
            seizure_to_challenger: false,
            forfeit_rejected_deposit: false,
            membership_mode: MembershipMode::Minted,
            membership_price: MonetaryAmount::ZERO,
            access_fee: MonetaryAmount::ZERO,
        }
    }
}

fn is_root(scope: &Scope) -> bool {
    scope.is_empty()
}

/// One protocol operation. Serialized as `{"op": ..., "args": {...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum Command {
    ProposeCandidate {
        #[serde(default, skip_serializing_if = "is_root")]
        scope: Scope,
        agent: AgentId,
        body: ElementBody,
    },
    CastVote {
        poll: PollId,
        agent: AgentId,
        choice: Choice,
    },
    Resolve {
        poll: PollId,
    },
    IssueChallenge {
        #[serde(default, skip_serializing_if = "is_root")]
        scope: Scope,
        agent: AgentId,
        element: ElementId,
    },
    LivenessChallenge {
        #[serde(default, skip_serializing_if = "is_root")]
        scope: Scope,
        agent: AgentId,
        element: ElementId,
        #[serde(with = "crate::canonical::hex_array")]
        nonce: [u8; 32],
    },
    RespondLiveness {
        poll: PollId,
        agent: AgentId,
        proof: LivenessProof,
    },
    AcquireMembership {
        #[serde(default, skip_serializing_if = "is_root")]
        scope: Scope,
        agent: AgentId,
        payment: MonetaryAmount,
    },
    /// Burns a member's query stake after a detected leak.
    SlashMembership {
        #[serde(default, skip_serializing_if = "is_root")]
        scope: Scope,
        member: AgentId,
    },
    PayAccessFee {
        #[serde(default, skip_serializing_if = "is_root")]
        scope: Scope,
        agent: AgentId,
        element: ElementId,
        payment: MonetaryAmount,
    },
    SetMembershipPrice {
        price: MonetaryAmount,
    },
    QueryElement {
        #[serde(default, skip_serializing_if = "is_root")]
        scope: Scope,
        agent: AgentId,
        element: ElementId,
    },
    ProposeFork {
        #[serde(default, skip_serializing_if = "is_root")]
        scope: Scope,
        agent: AgentId,
        elements_one: BTreeSet<ElementId>,
        elements_two: BTreeSet<ElementId>,
    },
    StorePut {
        #[serde(with = "crate::canonical::hex_bytes")]
        payload: Vec<u8>,
    },
    /// An owner losing a blob outside the fault model.
    StoreRemove {
        digest: Digest,
    },
    AdvanceTime {
        to: Tick,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub poll: PollId,
    pub outcome: Outcome,
    pub tick: Tick,
    /// Tokens taken from the losing side (burned or handed over).
    pub seized: TokenAmount,
    /// For a fork, the index of the detached structure in
    /// [`Engine::detached`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detached: Option<usize>,
}

/// What a successfully applied command did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    Proposed {
        element: ElementId,
        poll: Option<PollId>,
    },
    Voted {
        weight: TokenAmount,
    },
    Opened {
        poll: PollId,
    },
    /// The resolved poll first, then any polls a fork cancelled.
    Resolved {
        resolutions: Vec<Resolution>,
    },
    Joined {
        stake_bond: BondId,
        payouts: BTreeMap<AgentId, MonetaryAmount>,
        sold: BTreeMap<AgentId, TokenAmount>,
    },
    Slashed {
        bond: BondId,
        amount: TokenAmount,
    },
    Accessed {
        payload_digest: Digest,
        payouts: BTreeMap<AgentId, MonetaryAmount>,
    },
    Queried {
        payload_digest: Digest,
    },
    Stored {
        digest: Digest,
    },
    Dropped {
        existed: bool,
    },
    Updated,
    Advanced {
        released: Vec<(Scope, BondId)>,
        dropped: Vec<Digest>,
        resolutions: Vec<Resolution>,
    },
}

#[cfg(test)]
mod tests;
