//! Hash-chained block store and the world state of registered IoT assets.

mod block;
mod chain;
pub mod export;
mod state;
mod tx;
mod types;

pub use block::{canonical_bytes, create_genesis, hash_block, Block, ChainConfig};
pub use chain::{first_invalid_height, replay, verify_chain, AppendError, Chain};
pub use state::{
    Asset, DeviceAsset, DeviceStatus, NotFound, SensorAsset, TxRejection, WorldState,
};
pub use tx::{signing_bytes, Payload, Transaction, TxKind};
pub use types::{strict_hex, Digest, Value};
