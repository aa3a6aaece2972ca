use thiserror::Error;

use super::block::{hash_block, Block};
use super::state::{TxRejection, WorldState};
use super::types::Digest;
use crate::membership::MembershipRegistry;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AppendError {
    #[error("prev_hash does not match the tip at height {tip_height}")]
    BadLink { tip_height: u64 },
    #[error("expected height {expected}, got {got}")]
    BadHeight { expected: u64, got: u64 },
    #[error("block hash does not match its contents")]
    BadHash,
    #[error("transaction {index} rejected: {reason}")]
    InvalidTx { index: usize, reason: TxRejection },
}

/// Committed blocks plus the incrementally maintained world state.
/// Single writer; callers snapshot by cloning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    state: WorldState,
}

impl Chain {
    pub fn new(genesis: Block) -> Self {
        Self {
            blocks: vec![genesis],
            state: WorldState::new(),
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub fn append_block(
        &mut self,
        block: Block,
        registry: &MembershipRegistry,
    ) -> Result<(), AppendError> {
        let next = self.check_block(&block, registry)?;
        self.blocks.push(block);
        self.state = next;
        Ok(())
    }

    /// Runs every append check and returns the resulting state without
    /// committing anything.
    pub fn check_block(
        &self,
        block: &Block,
        registry: &MembershipRegistry,
    ) -> Result<WorldState, AppendError> {
        let tip = self.tip();
        if block.prev_hash != tip.block_hash {
            return Err(AppendError::BadLink {
                tip_height: tip.height,
            });
        }
        if block.height != tip.height + 1 {
            return Err(AppendError::BadHeight {
                expected: tip.height + 1,
                got: block.height,
            });
        }
        if !block.hash_is_valid() {
            return Err(AppendError::BadHash);
        }
        let mut state = self.state.clone();
        for (index, tx) in block.txs.iter().enumerate() {
            state
                .validate_transaction(tx, registry)
                .map_err(|reason| AppendError::InvalidTx { index, reason })?;
            state.apply_transaction(tx);
        }
        Ok(state)
    }
}

/// Link, hash and height check from genesis to tip.
pub fn verify_chain(blocks: &[Block]) -> bool {
    first_invalid_height(blocks).is_none() && !blocks.is_empty()
}

/// Height (position) of the first block that breaks an invariant.
pub fn first_invalid_height(blocks: &[Block]) -> Option<u64> {
    let mut prev: Option<&Block> = None;
    for (i, b) in blocks.iter().enumerate() {
        let ok = match prev {
            None => b.height == 0 && b.prev_hash == Digest::ZERO,
            Some(p) => b.height == p.height + 1 && b.prev_hash == p.block_hash,
        };
        if !ok || b.block_hash != hash_block(b) || !b.hash_is_valid() {
            return Some(i as u64);
        }
        prev = Some(b);
    }
    None
}

/// Folds every transaction from genesis without validation.
pub fn replay(blocks: &[Block]) -> WorldState {
    let mut state = WorldState::new();
    for tx in blocks.iter().flat_map(|b| &b.txs) {
        state.apply_transaction(tx);
    }
    state
}
