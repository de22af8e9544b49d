//! Content-addressed blob store standing in for off-chain storage.
//!
//! Blobs are keyed by the SHA-256 of their payload. A seeded fault model can
//! drop blobs once per epoch; a blob is either returned intact or absent.
//! Liveness proofs bind a payload to a fresh nonce: `SHA-256(payload ‖ nonce)`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, Digest};
use crate::structure::ElementId;
use crate::units::{Fraction, Tick, MICRO, TICKS_PER_DAY};

/// Ticks between fault-model drop checks.
pub const FAULT_EPOCH_TICKS: Tick = TICKS_PER_DAY;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("payload is empty")]
    EmptyPayload,
    #[error("blob file {0} does not match its digest")]
    CorruptBlob(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultModel {
    /// Chance that a stored blob disappears in one epoch.
    pub drop_probability: Fraction,
    pub rng_seed: u64,
}

impl Default for FaultModel {
    fn default() -> Self {
        Self {
            drop_probability: Fraction::ZERO,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessProof {
    pub element_id: ElementId,
    #[serde(with = "canonical::hex_array")]
    pub nonce: [u8; 32],
    pub response: Digest,
}

impl LivenessProof {
    /// Builds the response for a payload the prover actually holds.
    pub fn compute(element_id: ElementId, payload: &[u8], nonce: [u8; 32]) -> Self {
        Self {
            element_id,
            nonce,
            response: Digest::of_concat(payload, &nonce),
        }
    }
}

/// True iff `proof` was computed from exactly `payload`.
pub fn verify(payload: &[u8], proof: &LivenessProof) -> bool {
    Digest::of_concat(payload, &proof.nonce) == proof.response
}

#[derive(Debug, Clone)]
pub struct ContentStore {
    blobs: BTreeMap<Digest, Vec<u8>>,
    fault: FaultModel,
    rng: ChaCha8Rng,
    epoch: u64,
}

impl Default for ContentStore {
    fn default() -> Self {
        Self::new(FaultModel::default())
    }
}

impl ContentStore {
    pub fn new(fault: FaultModel) -> Self {
        Self {
            blobs: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(fault.rng_seed),
            fault,
            epoch: 0,
        }
    }

    pub fn fault_model(&self) -> FaultModel {
        self.fault
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn put(&mut self, payload: &[u8]) -> Result<Digest, StoreError> {
        if payload.is_empty() {
            return Err(StoreError::EmptyPayload);
        }
        let digest = Digest::of(payload);
        self.blobs.entry(digest).or_insert_with(|| payload.to_vec());
        Ok(digest)
    }

    pub fn get(&self, digest: &Digest) -> Option<&[u8]> {
        self.blobs.get(digest).map(Vec::as_slice)
    }

    /// Stored digests in ascending order.
    pub fn digests(&self) -> impl Iterator<Item = &Digest> {
        self.blobs.keys()
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.blobs.contains_key(digest)
    }

    /// Deletes a blob. Returns whether it was present.
    pub fn remove(&mut self, digest: &Digest) -> bool {
        self.blobs.remove(digest).is_some()
    }

    /// Runs one epoch of the fault model and returns the dropped digests.
    pub fn advance_epoch(&mut self) -> Vec<Digest> {
        self.epoch += 1;
        let p = self.fault.drop_probability.micros();
        if p == 0 {
            return Vec::new();
        }
        let mut dropped = Vec::new();
        for digest in self.blobs.keys() {
            if self.rng.random_range(0..MICRO) < p {
                dropped.push(*digest);
            }
        }
        for d in &dropped {
            self.blobs.remove(d);
        }
        dropped
    }

    /// Answers a liveness challenge, or `None` when the blob is gone.
    pub fn prove(
        &self,
        element_id: ElementId,
        digest: &Digest,
        nonce: [u8; 32],
    ) -> Option<LivenessProof> {
        self.get(digest)
            .map(|payload| LivenessProof::compute(element_id, payload, nonce))
    }

    /// Writes every blob to `dir`, one file per blob named by its hex digest.
    pub fn save_dir(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir)?;
        for (digest, payload) in &self.blobs {
            fs::write(dir.join(digest.to_hex()), payload)?;
        }
        Ok(())
    }

    /// Loads blobs from a directory written by [`ContentStore::save_dir`].
    pub fn load_dir(dir: &Path, fault: FaultModel) -> Result<Self, StoreError> {
        let mut store = Self::new(fault);
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            let payload = fs::read(entry.path())?;
            let digest = store.put(&payload)?;
            if digest.to_hex() != name {
                return Err(StoreError::CorruptBlob(name));
            }
        }
        Ok(store)
    }
}
