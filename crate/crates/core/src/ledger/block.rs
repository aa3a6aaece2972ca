use super::tx::Transaction;
use super::types::Digest;
use crate::codec::Canonical;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainConfig {
    pub chain_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub txs: Vec<Transaction>,
    /// Replica that proposed the block. For the genesis block this field
    /// carries the chain id.
    pub proposer: String,
    pub timestamp: u64,
    pub block_hash: Digest,
}

/// Canonical serialization of everything except `block_hash`.
pub fn canonical_bytes(block: &Block) -> Vec<u8> {
    let mut c = Canonical::new();
    c.u64(block.height)
        .fixed(block.prev_hash.as_bytes())
        .u64(block.timestamp)
        .str(&block.proposer)
        .u32(block.txs.len() as u32);
    for tx in &block.txs {
        c.fixed(tx.tx_id.as_bytes())
            .bytes(&tx.signing_bytes())
            .bytes(&tx.signature);
    }
    c.finish()
}

pub fn hash_block(block: &Block) -> Digest {
    Digest::of(&canonical_bytes(block))
}

impl Block {
    /// Builds a block and fills in its hash.
    pub fn seal(
        height: u64,
        prev_hash: Digest,
        proposer: &str,
        timestamp: u64,
        txs: Vec<Transaction>,
    ) -> Self {
        let mut b = Block {
            height,
            prev_hash,
            txs,
            proposer: proposer.to_string(),
            timestamp,
            block_hash: Digest::ZERO,
        };
        b.block_hash = hash_block(&b);
        b
    }

    pub fn hash_is_valid(&self) -> bool {
        self.block_hash == hash_block(self) && self.txs.iter().all(Transaction::id_matches)
    }
}

pub fn create_genesis(config: &ChainConfig) -> Block {
    Block::seal(0, Digest::ZERO, &config.chain_id, 0, Vec::new())
}
