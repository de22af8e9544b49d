//! Token accounting: holdings, bonded stakes, issuance and pro-rata payouts.
//!
//! A [`TokenEconomy`] is the token type plus its ledger. Tokens are either
//! freely held or locked in a [`BondRecord`]; the total supply always equals
//! the sum of free holdings and active bonds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{AgentId, MonetaryAmount, Tick, TokenAmount};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("token issuance is forbidden under a predetermined allocation")]
    IssuanceForbidden,
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("{agent} holds {available} tokens, needs {needed}")]
    InsufficientTokens {
        agent: AgentId,
        needed: TokenAmount,
        available: TokenAmount,
    },
    #[error("unknown bond {0}")]
    UnknownBond(BondId),
    #[error("bond {0} is not active")]
    BondNotActive(BondId),
    #[error("bond {bond} is locked until tick {release_tick} (now {now})")]
    BondStillLocked {
        bond: BondId,
        release_tick: Tick,
        now: Tick,
    },
    #[error("economy has no token holders")]
    EmptyEconomy,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("ledger invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T, E = LedgerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Issuance {
    /// Fixed supply split among the founders.
    Predetermined,
    /// Supply grows through candidate rewards.
    Mining,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BondId(pub u64);

impl std::fmt::Display for BondId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondPurpose {
    CandidateDeposit,
    CandidateReward,
    ChallengeDeposit,
    ForkDeposit,
    QueryStake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondState {
    Active,
    Released,
    Seized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BondRecord {
    pub id: BondId,
    pub owner: AgentId,
    pub amount: TokenAmount,
    pub purpose: BondPurpose,
    pub release_tick: Tick,
    pub state: BondState,
}

impl BondRecord {
    pub fn is_active(&self) -> bool {
        self.state == BondState::Active
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEconomy {
    pub token_id: String,
    total_supply: TokenAmount,
    holdings: BTreeMap<AgentId, TokenAmount>,
    bonds: Vec<BondRecord>,
    issuance: Issuance,
    minted: TokenAmount,
    burned: TokenAmount,
}

impl TokenEconomy {
    /// Seeds an economy with an initial allocation. Zero entries are dropped.
    pub fn new(
        token_id: impl Into<String>,
        allocation: &BTreeMap<AgentId, TokenAmount>,
        issuance: Issuance,
    ) -> Result<Self> {
        let mut holdings = BTreeMap::new();
        let mut supply = 0u64;
        for (agent, amount) in allocation {
            if amount.is_zero() {
                continue;
            }
            supply = supply
                .checked_add(amount.micros())
                .ok_or(LedgerError::Overflow)?;
            holdings.insert(agent.clone(), *amount);
        }
        Ok(Self {
            token_id: token_id.into(),
            total_supply: TokenAmount::from_micros(supply),
            holdings,
            bonds: Vec::new(),
            issuance,
            minted: TokenAmount::ZERO,
            burned: TokenAmount::ZERO,
        })
    }

    pub fn total_supply(&self) -> TokenAmount {
        self.total_supply
    }

    pub fn issuance(&self) -> Issuance {
        self.issuance
    }

    /// Tokens minted since construction.
    pub fn minted(&self) -> TokenAmount {
        self.minted
    }

    /// Tokens burned since construction.
    pub fn burned(&self) -> TokenAmount {
        self.burned
    }

    /// Free (unbonded) balance.
    pub fn holdings(&self, agent: &AgentId) -> TokenAmount {
        self.holdings.get(agent).copied().unwrap_or_default()
    }

    pub fn holdings_map(&self) -> &BTreeMap<AgentId, TokenAmount> {
        &self.holdings
    }

    pub fn bonds(&self) -> &[BondRecord] {
        &self.bonds
    }

    pub fn bond(&self, id: BondId) -> Result<&BondRecord> {
        self.bonds
            .get(id.0 as usize)
            .ok_or(LedgerError::UnknownBond(id))
    }

    /// Free balance plus active bonds: what the agent owns.
    pub fn ownership(&self, agent: &AgentId) -> TokenAmount {
        let bonded: u64 = self
            .bonds
            .iter()
            .filter(|b| b.is_active() && &b.owner == agent)
            .map(|b| b.amount.micros())
            .sum();
        TokenAmount::from_micros(self.holdings(agent).micros() + bonded)
    }

    /// Ownership of every agent with a positive stake, in id order.
    pub fn ownership_map(&self) -> BTreeMap<AgentId, TokenAmount> {
        let mut out: BTreeMap<AgentId, TokenAmount> = self.holdings.clone();
        for b in self
            .bonds
            .iter()
            .filter(|b| b.is_active() && !b.amount.is_zero())
        {
            let e = out.entry(b.owner.clone()).or_default();
            *e = TokenAmount::from_micros(e.micros() + b.amount.micros());
        }
        out
    }

    fn credit(&mut self, agent: &AgentId, amount: TokenAmount) -> Result<()> {
        if amount.is_zero() {
            return Ok(());
        }
        let entry = self.holdings.entry(agent.clone()).or_default();
        *entry = entry.checked_add(amount).ok_or(LedgerError::Overflow)?;
        Ok(())
    }

    fn debit(&mut self, agent: &AgentId, amount: TokenAmount) -> Result<()> {
        let available = self.holdings(agent);
        let rest =
            available
                .checked_sub(amount)
                .ok_or_else(|| LedgerError::InsufficientTokens {
                    agent: agent.clone(),
                    needed: amount,
                    available,
                })?;
        if rest.is_zero() {
            self.holdings.remove(agent);
        } else {
            self.holdings.insert(agent.clone(), rest);
        }
        Ok(())
    }

    /// Issues new tokens to `agent`. Only allowed under mining issuance.
    pub fn mint(&mut self, agent: &AgentId, amount: TokenAmount) -> Result<()> {
        if self.issuance == Issuance::Predetermined {
            return Err(LedgerError::IssuanceForbidden);
        }
        if amount.is_zero() {
            return Err(LedgerError::ZeroAmount);
        }
        let supply = self
            .total_supply
            .checked_add(amount)
            .ok_or(LedgerError::Overflow)?;
        self.credit(agent, amount)?;
        self.total_supply = supply;
        self.minted = TokenAmount::from_micros(self.minted.micros() + amount.micros());
        Ok(())
    }

    /// Locks `amount` of the agent's free balance in a new bond.
    pub fn bond_stake(
        &mut self,
        agent: &AgentId,
        amount: TokenAmount,
        purpose: BondPurpose,
        release_tick: Tick,
    ) -> Result<BondId> {
        self.debit(agent, amount)?;
        let id = BondId(self.bonds.len() as u64);
        self.bonds.push(BondRecord {
            id,
            owner: agent.clone(),
            amount,
            purpose,
            release_tick,
            state: BondState::Active,
        });
        Ok(id)
    }

    fn active_bond_mut(&mut self, id: BondId) -> Result<&mut BondRecord> {
        let bond = self
            .bonds
            .get_mut(id.0 as usize)
            .ok_or(LedgerError::UnknownBond(id))?;
        if !bond.is_active() {
            return Err(LedgerError::BondNotActive(id));
        }
        Ok(bond)
    }

    /// Returns a bond's tokens to its owner once `now >= release_tick`.
    pub fn release_bond(&mut self, id: BondId, now: Tick) -> Result<()> {
        let bond = self.active_bond_mut(id)?;
        if now < bond.release_tick {
            return Err(LedgerError::BondStillLocked {
                bond: id,
                release_tick: bond.release_tick,
                now,
            });
        }
        self.unlock(id)
    }

    /// Returns a bond's tokens to its owner regardless of its release tick.
    /// Used when a poll settles in the owner's favour.
    pub(crate) fn unlock(&mut self, id: BondId) -> Result<()> {
        let bond = self.active_bond_mut(id)?;
        bond.state = BondState::Released;
        let (owner, amount) = (bond.owner.clone(), bond.amount);
        self.credit(&owner, amount)
    }

    /// Seizes a bond and destroys its tokens. No free balance changes.
    pub fn burn(&mut self, id: BondId) -> Result<TokenAmount> {
        let bond = self.active_bond_mut(id)?;
        bond.state = BondState::Seized;
        let amount = bond.amount;
        self.total_supply = self
            .total_supply
            .checked_sub(amount)
            .ok_or_else(|| LedgerError::Invariant("burn exceeds supply".into()))?;
        self.burned = TokenAmount::from_micros(self.burned.micros() + amount.micros());
        Ok(amount)
    }

    /// Seizes a bond and hands its tokens to `recipient`. Supply is unchanged.
    pub fn seize_to(&mut self, id: BondId, recipient: &AgentId) -> Result<TokenAmount> {
        let bond = self.active_bond_mut(id)?;
        bond.state = BondState::Seized;
        let amount = bond.amount;
        self.credit(recipient, amount)?;
        Ok(amount)
    }

    /// Destroys an agent's free balance. Returns the amount burned.
    pub(crate) fn burn_holdings(&mut self, agent: &AgentId) -> TokenAmount {
        let amount = self.holdings.remove(agent).unwrap_or_default();
        self.total_supply = self.total_supply.saturating_sub(amount);
        self.burned = TokenAmount::from_micros(self.burned.micros() + amount.micros());
        amount
    }

    /// Burns everything `agent` owns: free balance and active bonds.
    pub(crate) fn expel(&mut self, agent: &AgentId) -> Result<TokenAmount> {
        let mut total = self.burn_holdings(agent);
        let owned: Vec<BondId> = self
            .bonds
            .iter()
            .filter(|b| b.is_active() && &b.owner == agent)
            .map(|b| b.id)
            .collect();
        for id in owned {
            total = TokenAmount::from_micros(total.micros() + self.burn(id)?.micros());
        }
        Ok(total)
    }

    pub fn transfer(&mut self, from: &AgentId, to: &AgentId, amount: TokenAmount) -> Result<()> {
        self.debit(from, amount)?;
        self.credit(to, amount)
    }

    /// Buys `amount` tokens for `buyer` from every other holder's free balance,
    /// pro-rata to those balances. Supply is unchanged.
    pub fn purchase_pro_rata(
        &mut self,
        buyer: &AgentId,
        amount: TokenAmount,
    ) -> Result<BTreeMap<AgentId, TokenAmount>> {
        let sellers: Vec<(AgentId, u64)> = self
            .holdings
            .iter()
            .filter(|(a, _)| *a != buyer)
            .map(|(a, t)| (a.clone(), t.micros()))
            .collect();
        let available: u64 = sellers.iter().map(|(_, t)| t).sum();
        if available < amount.micros() {
            return Err(LedgerError::InsufficientTokens {
                agent: buyer.clone(),
                needed: amount,
                available: TokenAmount::from_micros(available),
            });
        }
        let weights: Vec<u128> = sellers.iter().map(|(_, t)| *t as u128).collect();
        let shares = largest_remainder(amount.micros() as u128, &weights)?;
        let mut sold = BTreeMap::new();
        for ((seller, _), share) in sellers.into_iter().zip(shares) {
            let share = TokenAmount::from_micros(share as u64);
            self.transfer(&seller, buyer, share)?;
            sold.insert(seller, share);
        }
        Ok(sold)
    }

    /// Splits `payment` across all owners in proportion to ownership.
    ///
    /// Shares are exact micro-units: floors first, then the leftover units go
    /// to the largest remainders, ties broken by ascending agent id.
    pub fn distribute_pro_rata(
        &self,
        payment: MonetaryAmount,
    ) -> Result<BTreeMap<AgentId, MonetaryAmount>> {
        let owners = self.ownership_map();
        if owners.is_empty() {
            return Err(LedgerError::EmptyEconomy);
        }
        let weights: Vec<u128> = owners.values().map(|t| t.micros() as u128).collect();
        let shares = largest_remainder(payment.micros() as u128, &weights)?;
        Ok(owners
            .into_keys()
            .zip(shares)
            .map(|(a, s)| (a, MonetaryAmount::from_micros(s as u64)))
            .collect())
    }

    /// Unit value times total supply (in display tokens), rounded down.
    pub fn economy_size(&self, unit_value: MonetaryAmount) -> MonetaryAmount {
        economy_size(unit_value, self.total_supply)
    }

    /// Supply equals free holdings plus active bonds.
    pub fn check_conservation(&self) -> Result<()> {
        let free: u128 = self.holdings.values().map(|t| t.micros() as u128).sum();
        let bonded: u128 = self
            .bonds
            .iter()
            .filter(|b| b.is_active())
            .map(|b| b.amount.micros() as u128)
            .sum();
        if free + bonded != self.total_supply.micros() as u128 {
            return Err(LedgerError::Invariant(format!(
                "supply {} != holdings {} + bonds {}",
                self.total_supply.micros(),
                free,
                bonded
            )));
        }
        Ok(())
    }
}

pub fn economy_size(unit_value: MonetaryAmount, supply: TokenAmount) -> MonetaryAmount {
    let v = unit_value.micros() as u128 * supply.micros() as u128 / crate::units::MICRO as u128;
    MonetaryAmount::from_micros(v as u64)
}

/// Largest-remainder apportionment of `total` units over `weights`.
/// Ties in remainder go to the lower index.
pub(crate) fn largest_remainder(total: u128, weights: &[u128]) -> Result<Vec<u128>> {
    let sum: u128 = weights.iter().sum();
    if sum == 0 {
        return Err(LedgerError::EmptyEconomy);
    }
    let mut shares = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    let mut assigned = 0u128;
    for (i, w) in weights.iter().enumerate() {
        let product = total.checked_mul(*w).ok_or(LedgerError::Overflow)?;
        shares.push(product / sum);
        remainders.push((product % sum, i));
        assigned += product / sum;
    }
    let leftover = (total - assigned) as usize;
    if leftover > 0 {
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().take(leftover) {
            shares[i] += 1;
        }
    }
    Ok(shares)
}
