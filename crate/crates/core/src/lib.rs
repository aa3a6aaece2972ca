//! Permissioned, PBFT-replicated ledger for IoT sensor data with an
//! intrusion-detection model at every gateway.

pub mod codec;
pub mod consensus;
pub mod evaluation;
pub mod gateway;
pub mod ids_data;
pub mod ids_models;
pub mod ledger;
pub mod membership;
pub mod netsim;
pub mod simulation;
