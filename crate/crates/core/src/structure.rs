//! The recursive tokenized data structure.
//!
//! A structure is a tuple of elements, an optional token economy and
//! per-element metadata. An element is either a leaf holding data (inline or
//! by content hash) or a whole nested structure with its own economy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, Digest};
use crate::ledger::{BondId, Issuance, LedgerError, TokenEconomy};
use crate::units::{AgentId, BasisPoints, Tick, TokenAmount, TICKS_PER_DAY};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("an economy needs a non-empty initial allocation")]
    EmptyAllocation,
    #[error("off-chain data is disabled for this structure")]
    OffchainDisabled,
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("element {id}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        id: ElementId,
        from: ElementState,
        to: ElementState,
    },
    #[error("malformed structure: {0}")]
    Malformed(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Protocol parameters. Defaults follow the reference parameter table; the
/// entries it leaves open default to zero deposits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub candidate_deposit: TokenAmount,
    pub candidate_vote_period: Tick,
    pub candidate_reward: TokenAmount,
    pub candidate_quorum: BasisPoints,
    /// Statute of limitations on the candidate reward. Zero releases the
    /// reward as soon as it is minted.
    pub reward_stake_period: Tick,
    pub challenge_deposit: TokenAmount,
    pub challenge_vote_period: Tick,
    pub challenge_reward: TokenAmount,
    pub challenge_quorum: BasisPoints,
    pub fork_deposit: TokenAmount,
    pub fork_vote_period: Tick,
    pub fork_threshold: BasisPoints,
    pub query_stake: TokenAmount,
    pub offchain: bool,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            candidate_deposit: TokenAmount::ZERO,
            candidate_vote_period: 3 * TICKS_PER_DAY,
            candidate_reward: TokenAmount::from_units(1),
            candidate_quorum: BasisPoints::new(6667),
            reward_stake_period: 30 * TICKS_PER_DAY,
            challenge_deposit: TokenAmount::ZERO,
            challenge_vote_period: 5 * TICKS_PER_DAY,
            challenge_reward: TokenAmount::ZERO,
            challenge_quorum: BasisPoints::new(6667),
            fork_deposit: TokenAmount::ZERO,
            fork_vote_period: 30 * TICKS_PER_DAY,
            fork_threshold: BasisPoints::new(5000),
            query_stake: TokenAmount::ZERO,
            offchain: false,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<(), StructureError> {
        let fractions = [
            ("candidate_quorum", self.candidate_quorum),
            ("challenge_quorum", self.challenge_quorum),
            ("fork_threshold", self.fork_threshold),
        ];
        for (name, f) in fractions {
            if f.get() == 0 || f > BasisPoints::ONE {
                return Err(StructureError::InvalidParams(format!(
                    "{name} = {f} is outside (0, 1]"
                )));
            }
        }
        let periods = [
            ("candidate_vote_period", self.candidate_vote_period),
            ("challenge_vote_period", self.challenge_vote_period),
            ("fork_vote_period", self.fork_vote_period),
        ];
        for (name, p) in periods {
            if p == 0 {
                return Err(StructureError::InvalidParams(format!(
                    "{name} must be at least 1 tick"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub u64);

impl std::fmt::Display for ElementId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRef {
    Inline {
        #[serde(with = "canonical::hex_bytes")]
        payload: Vec<u8>,
    },
    Offchain {
        content_hash: Digest,
        owner: AgentId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementBody {
    Leaf {
        data: DataRef,
        visibility: Visibility,
    },
    Nested(Box<TokenizedDataStructure>),
}

impl ElementBody {
    pub fn inline(payload: impl Into<Vec<u8>>, visibility: Visibility) -> Self {
        Self::Leaf {
            data: DataRef::Inline {
                payload: payload.into(),
            },
            visibility,
        }
    }

    pub fn offchain(content_hash: Digest, owner: AgentId, visibility: Visibility) -> Self {
        Self::Leaf {
            data: DataRef::Offchain {
                content_hash,
                owner,
            },
            visibility,
        }
    }

    /// Hash identifying the content, used for duplicate detection.
    pub fn content_digest(&self) -> Digest {
        match self {
            Self::Leaf {
                data: DataRef::Inline { payload },
                ..
            } => Digest::of(payload),
            Self::Leaf {
                data: DataRef::Offchain { content_hash, .. },
                ..
            } => *content_hash,
            Self::Nested(td) => td.snapshot_digest(),
        }
    }

    pub(crate) fn uses_offchain(&self) -> bool {
        matches!(
            self,
            Self::Leaf {
                data: DataRef::Offchain { .. },
                ..
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: ElementId,
    pub body: ElementBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementState {
    Candidate,
    QuasiFinalized,
    Challenged,
    Removed,
}

impl ElementState {
    pub fn can_become(self, to: ElementState) -> bool {
        use ElementState::*;
        matches!(
            (self, to),
            (Candidate, QuasiFinalized) | (Candidate, Removed) | (QuasiFinalized, Challenged)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementMetadata {
    pub state: ElementState,
    pub proposer: AgentId,
    pub reward_bond: Option<BondId>,
    pub added_tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDataStructure {
    pub params: Params,
    elements: Vec<Element>,
    metadata: BTreeMap<ElementId, ElementMetadata>,
    economy: Option<TokenEconomy>,
    next_element_id: u64,
}

impl TokenizedDataStructure {
    /// A structure with its own token economy seeded from `allocation`.
    pub fn new(
        params: Params,
        token_id: impl Into<String>,
        allocation: &BTreeMap<AgentId, TokenAmount>,
        issuance: Issuance,
    ) -> Result<Self, StructureError> {
        params.validate()?;
        if allocation.values().all(|t| t.is_zero()) {
            return Err(StructureError::EmptyAllocation);
        }
        let economy = TokenEconomy::new(token_id, allocation, issuance)?;
        Ok(Self {
            params,
            elements: Vec::new(),
            metadata: BTreeMap::new(),
            economy: Some(economy),
            next_element_id: 0,
        })
    }

    /// A token-free structure: a plain distributed table with no staking.
    pub fn token_free(params: Params) -> Result<Self, StructureError> {
        params.validate()?;
        Ok(Self {
            params,
            elements: Vec::new(),
            metadata: BTreeMap::new(),
            economy: None,
            next_element_id: 0,
        })
    }

    pub fn economy(&self) -> Option<&TokenEconomy> {
        self.economy.as_ref()
    }

    pub(crate) fn economy_mut(&mut self) -> Option<&mut TokenEconomy> {
        self.economy.as_mut()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, id: ElementId) -> Option<&Element> {
        // Ids are assigned in increasing order, so the list is sorted by id.
        self.elements
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.elements[i])
    }

    pub(crate) fn element_mut(&mut self, id: ElementId) -> Option<&mut Element> {
        self.elements
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(move |i| &mut self.elements[i])
    }

    pub fn metadata(&self, id: ElementId) -> Option<&ElementMetadata> {
        self.metadata.get(&id)
    }

    pub(crate) fn metadata_mut(&mut self, id: ElementId) -> Option<&mut ElementMetadata> {
        self.metadata.get_mut(&id)
    }

    pub fn metadata_map(&self) -> &BTreeMap<ElementId, ElementMetadata> {
        &self.metadata
    }

    pub fn state(&self, id: ElementId) -> Option<ElementState> {
        self.metadata.get(&id).map(|m| m.state)
    }

    /// Appends an element in the `Candidate` state (or `QuasiFinalized` for
    /// token-free structures, which have no vote).
    pub(crate) fn insert(
        &mut self,
        body: ElementBody,
        proposer: AgentId,
        tick: Tick,
        state: ElementState,
    ) -> Result<ElementId, StructureError> {
        if body.uses_offchain() && !self.params.offchain {
            return Err(StructureError::OffchainDisabled);
        }
        let id = ElementId(self.next_element_id);
        self.next_element_id += 1;
        self.elements.push(Element { id, body });
        self.metadata.insert(
            id,
            ElementMetadata {
                state,
                proposer,
                reward_bond: None,
                added_tick: tick,
            },
        );
        Ok(id)
    }

    /// Moves an element along the metadata state machine.
    pub(crate) fn transition(
        &mut self,
        id: ElementId,
        to: ElementState,
    ) -> Result<(), StructureError> {
        let meta = self
            .metadata
            .get_mut(&id)
            .ok_or(StructureError::UnknownElement(id))?;
        if !meta.state.can_become(to) {
            return Err(StructureError::IllegalTransition {
                id,
                from: meta.state,
                to,
            });
        }
        meta.state = to;
        Ok(())
    }

    /// Keeps only the listed elements (and their metadata).
    pub(crate) fn retain_elements(&mut self, keep: &BTreeSet<ElementId>) {
        self.elements.retain(|e| keep.contains(&e.id));
        self.metadata.retain(|id, _| keep.contains(id));
    }

    /// Nesting depth: a structure of leaves has depth 1.
    pub fn depth(&self) -> usize {
        1 + self
            .elements
            .iter()
            .filter_map(|e| match &e.body {
                ElementBody::Nested(td) => Some(td.depth()),
                ElementBody::Leaf { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Quasi-finalized elements in insertion order.
    pub fn live_elements(&self) -> Vec<ElementId> {
        self.elements
            .iter()
            .filter(|e| self.state(e.id) == Some(ElementState::QuasiFinalized))
            .map(|e| e.id)
            .collect()
    }

    /// Checks id uniqueness, metadata completeness, off-chain consistency and
    /// ledger conservation at every nesting level.
    pub fn validate(&self) -> Result<(), StructureError> {
        self.params.validate()?;
        let mut seen = BTreeSet::new();
        for e in &self.elements {
            if !seen.insert(e.id) {
                return Err(StructureError::Malformed(format!(
                    "duplicate element id {}",
                    e.id
                )));
            }
            if e.id.0 >= self.next_element_id {
                return Err(StructureError::Malformed(format!(
                    "element id {} not yet issued",
                    e.id
                )));
            }
            if !self.metadata.contains_key(&e.id) {
                return Err(StructureError::Malformed(format!(
                    "element {} has no metadata",
                    e.id
                )));
            }
            if e.body.uses_offchain() && !self.params.offchain {
                return Err(StructureError::OffchainDisabled);
            }
            if let ElementBody::Nested(td) = &e.body {
                td.validate()?;
            }
        }
        if self.metadata.len() != self.elements.len() {
            return Err(StructureError::Malformed(
                "metadata for unknown elements".into(),
            ));
        }
        if self.elements.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(StructureError::Malformed("elements out of id order".into()));
        }
        if let Some(economy) = &self.economy {
            economy.check_conservation()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON snapshot.
    pub fn snapshot_digest(&self) -> Digest {
        canonical::canonical_digest(self).expect("structures always serialize")
    }
}
