use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use super::tx::{Payload, Transaction, TxKind};
use super::types::{Digest, Value};
use crate::membership::{authorize, Action, MembershipError, MembershipRegistry, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceStatus {
    Active,
    Quarantined,
}

impl DeviceStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceStatus::Active => "active",
            DeviceStatus::Quarantined => "quarantined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorAsset {
    pub sensor_id: String,
    pub device_id: String,
    pub last_value: Value,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceAsset {
    pub device_id: String,
    pub owner_member: String,
    pub status: DeviceStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Asset<'a> {
    Sensor(&'a SensorAsset),
    Device(&'a DeviceAsset),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxRejection {
    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("signature does not verify")]
    BadSignature,
    #[error("submitter `{0}` is not authorized")]
    Unauthorized(String),
    #[error("device `{0}` is quarantined")]
    DeviceQuarantined(String),
    #[error("transaction already applied")]
    DuplicateTx,
    #[error("asset `{0}` already registered")]
    AlreadyRegistered(String),
    #[error("owner `{0}` is not a registered gateway")]
    UnknownOwner(String),
}

impl TxRejection {
    /// Short stable code used in logs and replies.
    pub fn code(&self) -> &'static str {
        match self {
            TxRejection::UnknownSensor(_) => "UnknownSensor",
            TxRejection::UnknownDevice(_) => "UnknownDevice",
            TxRejection::BadSignature => "BadSignature",
            TxRejection::Unauthorized(_) => "Unauthorized",
            TxRejection::DeviceQuarantined(_) => "DeviceQuarantined",
            TxRejection::DuplicateTx => "DuplicateTx",
            TxRejection::AlreadyRegistered(_) => "AlreadyRegistered",
            TxRejection::UnknownOwner(_) => "UnknownOwner",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("asset `{0}` not found")]
pub struct NotFound(pub String);

/// Materialized view of the chain.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    sensors: BTreeMap<String, SensorAsset>,
    devices: BTreeMap<String, DeviceAsset>,
    alerts: Vec<Transaction>,
    applied: BTreeSet<Digest>,
    clock: u64,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sensors(&self) -> &BTreeMap<String, SensorAsset> {
        &self.sensors
    }

    pub fn devices(&self) -> &BTreeMap<String, DeviceAsset> {
        &self.devices
    }

    pub fn alerts(&self) -> &[Transaction] {
        &self.alerts
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn contains_tx(&self, id: &Digest) -> bool {
        self.applied.contains(id)
    }

    pub fn validate_transaction(
        &self,
        tx: &Transaction,
        registry: &MembershipRegistry,
    ) -> Result<(), TxRejection> {
        if !tx.id_matches() {
            return Err(TxRejection::BadSignature);
        }
        let principal = match registry.verify(&tx.submitter, &tx.signing_bytes(), &tx.signature) {
            Ok(p) => p,
            Err(MembershipError::UnknownMember(id)) => return Err(TxRejection::Unauthorized(id)),
            Err(_) => return Err(TxRejection::BadSignature),
        };
        let action = match tx.kind() {
            TxKind::SensorUpdate | TxKind::Alert => Action::SubmitTx,
            TxKind::Register => Action::RegisterMember,
        };
        if !authorize(&principal, action) {
            return Err(TxRejection::Unauthorized(tx.submitter.clone()));
        }
        if self.applied.contains(&tx.tx_id) {
            return Err(TxRejection::DuplicateTx);
        }
        match &tx.payload {
            Payload::SensorUpdate { sensor_id, .. } => {
                let sensor = self
                    .sensors
                    .get(sensor_id)
                    .ok_or_else(|| TxRejection::UnknownSensor(sensor_id.clone()))?;
                let device = self.live_device(&sensor.device_id)?;
                // the device itself, or the gateway it is registered to
                let own_device = principal.role() == Role::Device && tx.submitter == device.device_id;
                if !own_device && tx.submitter != device.owner_member {
                    return Err(TxRejection::Unauthorized(tx.submitter.clone()));
                }
            }
            Payload::Alert { device_id, .. } => {
                let device = self.live_device(device_id)?;
                if principal.role() != Role::Gateway || tx.submitter != device.owner_member {
                    return Err(TxRejection::Unauthorized(tx.submitter.clone()));
                }
            }
            Payload::RegisterDevice { device_id, owner } => {
                if self.devices.contains_key(device_id) {
                    return Err(TxRejection::AlreadyRegistered(device_id.clone()));
                }
                if registry.role_of(owner) != Some(Role::Gateway) {
                    return Err(TxRejection::UnknownOwner(owner.clone()));
                }
            }
            Payload::RegisterSensor {
                sensor_id,
                device_id,
                ..
            } => {
                if self.sensors.contains_key(sensor_id) {
                    return Err(TxRejection::AlreadyRegistered(sensor_id.clone()));
                }
                if !self.devices.contains_key(device_id) {
                    return Err(TxRejection::UnknownDevice(device_id.clone()));
                }
            }
        }
        Ok(())
    }

    fn live_device(&self, device_id: &str) -> Result<&DeviceAsset, TxRejection> {
        let device = self
            .devices
            .get(device_id)
            .ok_or_else(|| TxRejection::UnknownDevice(device_id.to_string()))?;
        if device.status == DeviceStatus::Quarantined {
            return Err(TxRejection::DeviceQuarantined(device_id.to_string()));
        }
        Ok(device)
    }

    /// Applies a transaction that passed [`validate_transaction`](Self::validate_transaction).
    /// Referenced assets that are missing are ignored, so replaying an
    /// unvalidated chain never panics.
    pub fn apply_transaction(&mut self, tx: &Transaction) {
        self.clock += 1;
        self.applied.insert(tx.tx_id);
        match &tx.payload {
            Payload::SensorUpdate { sensor_id, value } => {
                if let Some(s) = self.sensors.get_mut(sensor_id) {
                    s.last_value = *value;
                    s.updated_at = self.clock;
                }
            }
            Payload::Alert {
                device_id,
                quarantine,
                ..
            } => {
                self.alerts.push(tx.clone());
                if *quarantine {
                    if let Some(d) = self.devices.get_mut(device_id) {
                        d.status = DeviceStatus::Quarantined;
                    }
                }
            }
            Payload::RegisterDevice { device_id, owner } => {
                self.devices.insert(
                    device_id.clone(),
                    DeviceAsset {
                        device_id: device_id.clone(),
                        owner_member: owner.clone(),
                        status: DeviceStatus::Active,
                    },
                );
            }
            Payload::RegisterSensor {
                sensor_id,
                device_id,
                initial,
            } => {
                self.sensors.insert(
                    sensor_id.clone(),
                    SensorAsset {
                        sensor_id: sensor_id.clone(),
                        device_id: device_id.clone(),
                        last_value: *initial,
                        updated_at: self.clock,
                    },
                );
            }
        }
    }

    /// Sensors shadow devices when ids collide.
    pub fn query_asset(&self, id: &str) -> Result<Asset<'_>, NotFound> {
        if let Some(s) = self.sensors.get(id) {
            return Ok(Asset::Sensor(s));
        }
        self.devices
            .get(id)
            .map(Asset::Device)
            .ok_or_else(|| NotFound(id.to_string()))
    }

    /// Deterministic text dump ordered by asset id.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for d in self.devices.values() {
            let _ = writeln!(
                out,
                "device {} owner={} status={}",
                d.device_id,
                d.owner_member,
                d.status.as_str()
            );
        }
        for s in self.sensors.values() {
            let _ = writeln!(
                out,
                "sensor {} device={} value={} updated_at={}",
                s.sensor_id, s.device_id, s.last_value, s.updated_at
            );
        }
        for (i, a) in self.alerts.iter().enumerate() {
            if let Payload::Alert {
                device_id,
                class_name,
                probability,
                quarantine,
            } = &a.payload
            {
                let _ = writeln!(
                    out,
                    "alert {i} device={device_id} class={} probability={probability} quarantine={quarantine} tx={}",
                    class_name.replace(' ', "_"),
                    a.tx_id.short()
                );
            }
        }
        out
    }
}
