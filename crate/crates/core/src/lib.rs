//! Tokenized data structures and the incentive simulator built on them.
//!
//! * [`ledger`]: token holdings, bonds, issuance and pro-rata payouts.
//! * [`structure`]: the recursive element tuple with per-element metadata.
//! * [`protocol`]: candidacy, challenge, liveness, membership and fork polls.
//! * [`offchain`]: content-addressed blob store and liveness proofs.
//! * [`economics`]: exact closed-form incentive calculators.
//! * [`sim`]: agent-based Monte Carlo scenarios and reports.

pub mod canonical;
pub mod economics;
pub mod ledger;
pub mod offchain;
pub mod protocol;
pub mod sim;
pub mod structure;
pub mod units;

pub use canonical::Digest;
pub use ledger::{BondId, BondPurpose, BondRecord, BondState, Issuance, LedgerError, TokenEconomy};
pub use structure::{
    DataRef, Element, ElementBody, ElementId, ElementMetadata, ElementState, Params,
    TokenizedDataStructure, Visibility,
};
pub use units::{AgentId, BasisPoints, Fraction, MonetaryAmount, SignedAmount, Tick, TokenAmount};
