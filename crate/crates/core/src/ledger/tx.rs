use std::fmt;

use super::types::{Digest, Value};
use crate::codec::Canonical;
use crate::membership::Signer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxKind {
    SensorUpdate,
    Alert,
    Register,
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxKind::SensorUpdate => "SensorUpdate",
            TxKind::Alert => "Alert",
            TxKind::Register => "Register",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    SensorUpdate {
        sensor_id: String,
        value: Value,
    },
    /// Raised by a gateway after a malicious verdict. `quarantine` is false
    /// under the alert-only policy.
    Alert {
        device_id: String,
        class_name: String,
        probability: Value,
        quarantine: bool,
    },
    RegisterDevice {
        device_id: String,
        owner: String,
    },
    RegisterSensor {
        sensor_id: String,
        device_id: String,
        initial: Value,
    },
}

impl Payload {
    pub fn kind(&self) -> TxKind {
        match self {
            Payload::SensorUpdate { .. } => TxKind::SensorUpdate,
            Payload::Alert { .. } => TxKind::Alert,
            Payload::RegisterDevice { .. } | Payload::RegisterSensor { .. } => TxKind::Register,
        }
    }

    pub(crate) const TAG_SENSOR_UPDATE: u8 = 1;
    pub(crate) const TAG_ALERT: u8 = 2;
    pub(crate) const TAG_REGISTER_DEVICE: u8 = 3;
    pub(crate) const TAG_REGISTER_SENSOR: u8 = 4;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Digest,
    pub payload: Payload,
    pub submitter: String,
    /// Distinguishes otherwise identical submissions.
    pub nonce: u64,
    pub signature: Vec<u8>,
}

/// Canonical bytes covered by both `tx_id` and the signature.
pub fn signing_bytes(payload: &Payload, submitter: &str, nonce: u64) -> Vec<u8> {
    let mut c = Canonical::new();
    match payload {
        Payload::SensorUpdate { sensor_id, value } => {
            c.u8(Payload::TAG_SENSOR_UPDATE).str(submitter).u64(nonce);
            c.str(sensor_id).i64(value.scaled());
        }
        Payload::Alert {
            device_id,
            class_name,
            probability,
            quarantine,
        } => {
            c.u8(Payload::TAG_ALERT).str(submitter).u64(nonce);
            c.str(device_id)
                .str(class_name)
                .i64(probability.scaled())
                .u8(*quarantine as u8);
        }
        Payload::RegisterDevice { device_id, owner } => {
            c.u8(Payload::TAG_REGISTER_DEVICE).str(submitter).u64(nonce);
            c.str(device_id).str(owner);
        }
        Payload::RegisterSensor {
            sensor_id,
            device_id,
            initial,
        } => {
            c.u8(Payload::TAG_REGISTER_SENSOR).str(submitter).u64(nonce);
            c.str(sensor_id).str(device_id).i64(initial.scaled());
        }
    }
    c.finish()
}

impl Transaction {
    pub fn new_signed(payload: Payload, signer: &Signer, nonce: u64) -> Self {
        let bytes = signing_bytes(&payload, signer.id(), nonce);
        Transaction {
            tx_id: Digest::of(&bytes),
            signature: signer.sign(&bytes),
            payload,
            submitter: signer.id().to_string(),
            nonce,
        }
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        signing_bytes(&self.payload, &self.submitter, self.nonce)
    }

    pub fn kind(&self) -> TxKind {
        self.payload.kind()
    }

    pub fn sensor_id(&self) -> Option<&str> {
        match &self.payload {
            Payload::SensorUpdate { sensor_id, .. } | Payload::RegisterSensor { sensor_id, .. } => {
                Some(sensor_id)
            }
            _ => None,
        }
    }

    pub fn value(&self) -> Option<Value> {
        match &self.payload {
            Payload::SensorUpdate { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn alert_class(&self) -> Option<&str> {
        match &self.payload {
            Payload::Alert { class_name, .. } => Some(class_name),
            _ => None,
        }
    }

    /// True when `tx_id` is the digest of the signed content.
    pub fn id_matches(&self) -> bool {
        self.tx_id == Digest::of(&self.signing_bytes())
    }
}
