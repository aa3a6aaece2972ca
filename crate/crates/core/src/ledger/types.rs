use std::fmt;
use std::str::FromStr;

use sha2::{Digest as _, Sha256};

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Strict lowercase 64-char hex.
    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = strict_hex(s)?;
        Some(Digest(bytes.try_into().ok()?))
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Hex decoding that only accepts lowercase digits, so every byte string
/// has exactly one textual form.
pub fn strict_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return None;
    }
    hex::decode(s).ok()
}

/// Fixed-point decimal with three fractional digits.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Value(pub i64);

impl Value {
    pub const SCALE_DIGITS: u32 = 3;
    pub const SCALE: i64 = 1000;

    pub fn from_int(v: i64) -> Self {
        Value(v * Self::SCALE)
    }

    pub fn scaled(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    /// Rounds to the nearest representable value.
    pub fn from_f64(v: f64) -> Self {
        Value((v * Self::SCALE as f64).round() as i64)
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Value({self})")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let int = abs / Self::SCALE as u64;
        let frac = abs % Self::SCALE as u64;
        if frac == 0 {
            write!(f, "{sign}{int}")
        } else {
            let digits = format!("{frac:03}");
            write!(f, "{sign}{int}.{}", digits.trim_end_matches('0'))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseValueError(pub String);

impl fmt::Display for ParseValueError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid decimal `{}`", self.0)
    }
}

impl std::error::Error for ParseValueError {}

impl FromStr for Value {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseValueError(s.to_string());
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if frac.len() > Self::SCALE_DIGITS as usize || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let int: i64 = int.parse().map_err(|_| err())?;
        let mut frac_val: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| err())? };
        for _ in frac.len()..Self::SCALE_DIGITS as usize {
            frac_val *= 10;
        }
        let mag = int
            .checked_mul(Self::SCALE)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(err)?;
        Ok(Value(if neg { -mag } else { mag }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_empty_input_matches_published_vector() {
        assert_eq!(
            Digest::of(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            Digest::of(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn flipped_bit_changes_digest() {
        let a = Digest::of(b"sensor 1 -> 11");
        let mut bytes = b"sensor 1 -> 11".to_vec();
        bytes[3] ^= 1;
        assert_ne!(a, Digest::of(&bytes));
    }

    #[test]
    fn strict_hex_rejects_uppercase() {
        assert!(strict_hex("0a").is_some());
        assert!(strict_hex("0A").is_none());
        assert!(strict_hex("0").is_none());
        assert!(Digest::from_hex(&Digest::of(b"x").to_hex()).is_some());
    }

    #[test]
    fn value_parse_and_display() {
        assert_eq!("23".parse::<Value>().unwrap(), Value(23_000));
        assert_eq!("-1.5".parse::<Value>().unwrap(), Value(-1_500));
        assert_eq!("0.125".parse::<Value>().unwrap(), Value(125));
        assert!("1.2345".parse::<Value>().is_err());
        assert!("abc".parse::<Value>().is_err());
        assert!(".5".parse::<Value>().is_err());
        assert_eq!(Value(11_000).to_string(), "11");
        assert_eq!(Value(-1_500).to_string(), "-1.5");
        assert_eq!(Value(125).to_string(), "0.125");
        assert_eq!(Value(-5).to_string(), "-0.005");
    }
}
