//! Permissioned identity registry.
//!
//! Every participant (device, gateway, validator, admin) holds a static
//! credential. The default signature scheme is a keyed digest
//! (HMAC-SHA256) over the canonical payload, keyed by that credential; the
//! [`SignatureScheme`] trait is the seam for an asymmetric scheme.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Device,
    Gateway,
    Validator,
    Admin,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Device => "device",
            Role::Gateway => "gateway",
            Role::Validator => "validator",
            Role::Admin => "admin",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = MembershipError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "device" => Ok(Role::Device),
            "gateway" => Ok(Role::Gateway),
            "validator" => Ok(Role::Validator),
            "admin" => Ok(Role::Admin),
            other => Err(MembershipError::UnknownRole(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    SubmitTx,
    ProposeBlock,
    ValidateBlock,
    RegisterMember,
    Query,
}

/// Fixed access-control list.
pub fn acl(role: Role) -> &'static [Action] {
    use Action::*;
    match role {
        Role::Device | Role::Gateway => &[SubmitTx, Query],
        Role::Validator => &[ProposeBlock, ValidateBlock, Query],
        Role::Admin => &[RegisterMember, Query],
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MembershipError {
    #[error("member `{0}` is already registered")]
    DuplicateId(String),
    #[error("principal `{0}` is not authorized for this action")]
    Unauthorized(String),
    #[error("unknown member `{0}`")]
    UnknownMember(String),
    #[error("credential check failed for `{0}`")]
    BadCredential(String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("registry file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("registry file: {0}")]
    Io(String),
}

/// Pluggable signature scheme. `secret` is what the signer holds,
/// `credential` is what the registry stores for verification; for the
/// keyed-digest scheme they are the same bytes.
pub trait SignatureScheme: Send + Sync {
    fn sign(&self, secret: &[u8], payload: &[u8]) -> Vec<u8>;
    fn verify(&self, credential: &[u8], payload: &[u8], signature: &[u8]) -> bool;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct KeyedDigest;

impl SignatureScheme for KeyedDigest {
    fn sign(&self, secret: &[u8], payload: &[u8]) -> Vec<u8> {
        let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("hmac accepts any key length");
        mac.update(payload);
        mac.finalize().into_bytes().to_vec()
    }

    fn verify(&self, credential: &[u8], payload: &[u8], signature: &[u8]) -> bool {
        let mut mac =
            Hmac::<Sha256>::new_from_slice(credential).expect("hmac accepts any key length");
        mac.update(payload);
        mac.verify_slice(signature).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberIdentity {
    pub member_id: String,
    pub role: Role,
    pub credential: Vec<u8>,
}

/// An authenticated member. Only the registry hands these out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    id: String,
    role: Role,
}

impl Principal {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }
}

/// Challenge/response proof of credential possession.
#[derive(Debug, Clone)]
pub struct Proof {
    pub challenge: Vec<u8>,
    pub tag: Vec<u8>,
}

impl Proof {
    pub fn new(scheme: &dyn SignatureScheme, secret: &[u8], challenge: &[u8]) -> Self {
        Proof {
            challenge: challenge.to_vec(),
            tag: scheme.sign(secret, challenge),
        }
    }
}

pub fn authorize(principal: &Principal, action: Action) -> bool {
    acl(principal.role).contains(&action)
}

#[derive(Clone)]
pub struct MembershipRegistry {
    members: BTreeMap<String, MemberIdentity>,
    scheme: Arc<dyn SignatureScheme>,
}

impl fmt::Debug for MembershipRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MembershipRegistry")
            .field("members", &self.members.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl PartialEq for MembershipRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.members == other.members
    }
}

impl MembershipRegistry {
    /// A registry seeded with one admin member.
    pub fn with_admin(admin_id: &str, credential: Vec<u8>) -> Self {
        let mut members = BTreeMap::new();
        members.insert(
            admin_id.to_string(),
            MemberIdentity {
                member_id: admin_id.to_string(),
                role: Role::Admin,
                credential,
            },
        );
        Self {
            members,
            scheme: Arc::new(KeyedDigest),
        }
    }

    pub fn scheme(&self) -> &dyn SignatureScheme {
        self.scheme.as_ref()
    }

    pub fn register_member(
        &mut self,
        caller: &Principal,
        id: &str,
        role: Role,
        credential: Vec<u8>,
    ) -> Result<(), MembershipError> {
        if !authorize(caller, Action::RegisterMember) {
            return Err(MembershipError::Unauthorized(caller.id.clone()));
        }
        if self.members.contains_key(id) {
            return Err(MembershipError::DuplicateId(id.to_string()));
        }
        self.members.insert(
            id.to_string(),
            MemberIdentity {
                member_id: id.to_string(),
                role,
                credential,
            },
        );
        Ok(())
    }

    pub fn authenticate(&self, id: &str, proof: &Proof) -> Result<Principal, MembershipError> {
        self.verify(id, &proof.challenge, &proof.tag)
    }

    /// Verifies `signature` over `payload` under `id`'s credential.
    pub fn verify(
        &self,
        id: &str,
        payload: &[u8],
        signature: &[u8],
    ) -> Result<Principal, MembershipError> {
        let member = self
            .members
            .get(id)
            .ok_or_else(|| MembershipError::UnknownMember(id.to_string()))?;
        if self.scheme.verify(&member.credential, payload, signature) {
            Ok(Principal {
                id: member.member_id.clone(),
                role: member.role,
            })
        } else {
            Err(MembershipError::BadCredential(id.to_string()))
        }
    }

    pub fn get(&self, id: &str) -> Option<&MemberIdentity> {
        self.members.get(id)
    }

    pub fn role_of(&self, id: &str) -> Option<Role> {
        self.members.get(id).map(|m| m.role)
    }

    pub fn members(&self) -> impl Iterator<Item = &MemberIdentity> {
        self.members.values()
    }

    /// Parses a bootstrap file: `<id> <role> <credential-hex>` per line,
    /// `#` comments and blank lines ignored. The file is trusted input and
    /// bypasses the admin check.
    pub fn from_bootstrap(text: &str) -> Result<Self, MembershipError> {
        let mut registry = Self {
            members: BTreeMap::new(),
            scheme: Arc::new(KeyedDigest),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: &str| MembershipError::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [id, role, cred] = fields[..] else {
                return Err(parse_err("expected `<id> <role> <credential-hex>`"));
            };
            let role: Role = role.parse().map_err(|e: MembershipError| parse_err(&e.to_string()))?;
            let credential = hex::decode(cred).map_err(|_| parse_err("credential is not hex"))?;
            if registry.members.contains_key(id) {
                return Err(parse_err(&format!("duplicate member `{id}`")));
            }
            registry.members.insert(
                id.to_string(),
                MemberIdentity {
                    member_id: id.to_string(),
                    role,
                    credential,
                },
            );
        }
        Ok(registry)
    }

    pub fn load_bootstrap(path: &Path) -> Result<Self, MembershipError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MembershipError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bootstrap(&text)
    }

    pub fn to_bootstrap(&self) -> String {
        let mut out = String::new();
        for m in self.members.values() {
            out.push_str(&format!(
                "{} {} {}\n",
                m.member_id,
                m.role,
                hex::encode(&m.credential)
            ));
        }
        out
    }
}

/// Signing half held by a member.
#[derive(Clone)]
pub struct Signer {
    id: String,
    secret: Vec<u8>,
    scheme: Arc<dyn SignatureScheme>,
}

impl fmt::Debug for Signer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Signer").field("id", &self.id).finish()
    }
}

impl Signer {
    pub fn keyed(id: &str, secret: Vec<u8>) -> Self {
        Self {
            id: id.to_string(),
            secret,
            scheme: Arc::new(KeyedDigest),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sign(&self, payload: &[u8]) -> Vec<u8> {
        self.scheme.sign(&self.secret, payload)
    }

    pub fn prove(&self, challenge: &[u8]) -> Proof {
        Proof::new(self.scheme.as_ref(), &self.secret, challenge)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn admin_registry() -> (MembershipRegistry, Principal) {
        let reg = MembershipRegistry::with_admin("admin", b"admin-secret".to_vec());
        let admin = reg
            .authenticate("admin", &Signer::keyed("admin", b"admin-secret".to_vec()).prove(b"c"))
            .unwrap();
        (reg, admin)
    }

    #[test]
    fn admin_registers_gateway() {
        let (mut reg, admin) = admin_registry();
        reg.register_member(&admin, "gw-1", Role::Gateway, b"k".to_vec())
            .unwrap();
        assert_eq!(reg.role_of("gw-1"), Some(Role::Gateway));
        assert_eq!(
            reg.register_member(&admin, "gw-1", Role::Gateway, b"k".to_vec()),
            Err(MembershipError::DuplicateId("gw-1".into()))
        );
    }

    #[test]
    fn gateway_cannot_register() {
        let (mut reg, admin) = admin_registry();
        reg.register_member(&admin, "gw-1", Role::Gateway, b"k".to_vec())
            .unwrap();
        let gw = reg
            .authenticate("gw-1", &Signer::keyed("gw-1", b"k".to_vec()).prove(b"x"))
            .unwrap();
        assert_eq!(
            reg.register_member(&gw, "dev-9", Role::Device, b"d".to_vec()),
            Err(MembershipError::Unauthorized("gw-1".into()))
        );
    }

    #[test]
    fn authenticate_paths() {
        let (reg, _) = admin_registry();
        let good = Signer::keyed("admin", b"admin-secret".to_vec()).prove(b"nonce");
        assert_eq!(reg.authenticate("admin", &good).unwrap().role(), Role::Admin);
        let bad = Signer::keyed("admin", b"wrong".to_vec()).prove(b"nonce");
        assert_eq!(
            reg.authenticate("admin", &bad),
            Err(MembershipError::BadCredential("admin".into()))
        );
        assert_eq!(
            reg.authenticate("ghost", &good),
            Err(MembershipError::UnknownMember("ghost".into()))
        );
    }

    #[test]
    fn acl_matrix() {
        let p = |role| Principal { id: "x".into(), role };
        assert!(authorize(&p(Role::Validator), Action::ProposeBlock));
        assert!(authorize(&p(Role::Validator), Action::ValidateBlock));
        assert!(!authorize(&p(Role::Device), Action::ProposeBlock));
        assert!(!authorize(&p(Role::Gateway), Action::ValidateBlock));
        assert!(!authorize(&p(Role::Validator), Action::SubmitTx));
        assert!(authorize(&p(Role::Device), Action::SubmitTx));
        assert!(!authorize(&p(Role::Device), Action::RegisterMember));
        for role in [Role::Device, Role::Gateway, Role::Validator, Role::Admin] {
            assert!(authorize(&p(role), Action::Query));
        }
    }

    #[test]
    fn bootstrap_round_trip_and_determinism() {
        let text = "# members\nadmin admin 0a0b\ngw-1 gateway ff00\n\nv0 validator 01\n";
        let a = MembershipRegistry::from_bootstrap(text).unwrap();
        let b = MembershipRegistry::from_bootstrap(text).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get("gw-1").unwrap().credential, vec![0xff, 0x00]);
        let again = MembershipRegistry::from_bootstrap(&a.to_bootstrap()).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn bootstrap_errors_name_the_line() {
        let err = MembershipRegistry::from_bootstrap("admin admin 00\nbad line\n").unwrap_err();
        assert!(matches!(err, MembershipError::Parse { line: 2, .. }));
        let err = MembershipRegistry::from_bootstrap("a wizard 00\n").unwrap_err();
        assert!(matches!(err, MembershipError::Parse { line: 1, .. }));
    }
}
