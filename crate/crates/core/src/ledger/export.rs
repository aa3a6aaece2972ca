//! Line-oriented ledger export.
//!
//! One block per line, tab-separated, in canonical field order:
//!
//! ```text
//! <height> TAB <prev_hash> TAB <timestamp> TAB <proposer> TAB <txs> TAB <block_hash> LF
//! ```
//!
//! Integers are unsigned decimal without leading zeros. Binary values
//! (`prev_hash`, `block_hash`, the UTF-8 bytes of `proposer`) are lowercase
//! hex. `<txs>` is `-` for an empty block, otherwise a comma-separated list
//! of `<tx_id>:<payload>:<signature>`, where `<payload>` is the hex of the
//! canonical signing bytes. The block hash is SHA-256 over
//! [`canonical_bytes`](super::block::canonical_bytes), so an external tool
//! can recompute every hash from the file alone.
//!
//! Parsing is strict: any deviation from the single valid textual form is an
//! error, which makes every single-byte corruption observable either as a
//! parse failure or as a hash/link mismatch.

use std::fmt::Write as _;

use thiserror::Error;

use super::block::Block;
use super::tx::{Payload, Transaction};
use super::types::{strict_hex, Digest, Value};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExportError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

pub fn export_chain(blocks: &[Block]) -> String {
    let mut out = String::new();
    for b in blocks {
        let txs = if b.txs.is_empty() {
            "-".to_string()
        } else {
            b.txs
                .iter()
                .map(|tx| {
                    format!(
                        "{}:{}:{}",
                        tx.tx_id.to_hex(),
                        hex::encode(tx.signing_bytes()),
                        hex::encode(&tx.signature)
                    )
                })
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            b.height,
            b.prev_hash.to_hex(),
            b.timestamp,
            hex::encode(b.proposer.as_bytes()),
            txs,
            b.block_hash.to_hex()
        );
    }
    out
}

pub fn import_chain(text: &str) -> Result<Vec<Block>, ExportError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let Some(body) = text.strip_suffix('\n') else {
        return Err(ExportError::Malformed {
            line: text.lines().count(),
            msg: "missing final newline".into(),
        });
    };
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            parse_line(line).map_err(|msg| ExportError::Malformed { line: i + 1, msg })
        })
        .collect()
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let canonical = !s.is_empty()
        && s.bytes().all(|b| b.is_ascii_digit())
        && (s == "0" || !s.starts_with('0'));
    if !canonical {
        return Err(format!("bad integer `{s}`"));
    }
    s.parse().map_err(|_| format!("bad integer `{s}`"))
}

fn parse_digest(s: &str) -> Result<Digest, String> {
    Digest::from_hex(s).ok_or_else(|| format!("bad digest `{s}`"))
}

fn parse_line(line: &str) -> Result<Block, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [height, prev, ts, proposer, txs, hash] = fields[..] else {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    };
    let proposer = strict_hex(proposer)
        .and_then(|b| String::from_utf8(b).ok())
        .ok_or("bad proposer")?;
    let txs = if txs == "-" {
        Vec::new()
    } else {
        txs.split(',').map(parse_tx).collect::<Result<Vec<_>, _>>()?
    };
    Ok(Block {
        height: parse_u64(height)?,
        prev_hash: parse_digest(prev)?,
        txs,
        proposer,
        timestamp: parse_u64(ts)?,
        block_hash: parse_digest(hash)?,
    })
}

fn parse_tx(s: &str) -> Result<Transaction, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [id, payload, sig] = parts[..] else {
        return Err("transaction needs 3 parts".into());
    };
    let payload_bytes = strict_hex(payload).ok_or("bad payload hex")?;
    let signature = strict_hex(sig).ok_or("bad signature hex")?;
    let (payload, submitter, nonce) = decode_payload(&payload_bytes)?;
    Ok(Transaction {
        tx_id: parse_digest(id)?,
        payload,
        submitter,
        nonce,
        signature,
    })
}

struct BeReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl BeReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], String> {
        if self.data.len() - self.pos < n {
            return Err("payload truncated".into());
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, String> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, String> {
        let n = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "payload string not utf-8".into())
    }
}

/// Inverse of [`signing_bytes`](super::tx::signing_bytes).
pub fn decode_payload(bytes: &[u8]) -> Result<(Payload, String, u64), String> {
    let mut r = BeReader { data: bytes, pos: 0 };
    let tag = r.u8()?;
    let submitter = r.str()?;
    let nonce = r.u64()?;
    let payload = match tag {
        Payload::TAG_SENSOR_UPDATE => Payload::SensorUpdate {
            sensor_id: r.str()?,
            value: Value(r.i64()?),
        },
        Payload::TAG_ALERT => Payload::Alert {
            device_id: r.str()?,
            class_name: r.str()?,
            probability: Value(r.i64()?),
            quarantine: match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err("bad quarantine flag".into()),
            },
        },
        Payload::TAG_REGISTER_DEVICE => Payload::RegisterDevice {
            device_id: r.str()?,
            owner: r.str()?,
        },
        Payload::TAG_REGISTER_SENSOR => Payload::RegisterSensor {
            sensor_id: r.str()?,
            device_id: r.str()?,
            initial: Value(r.i64()?),
        },
        other => return Err(format!("unknown payload tag {other}")),
    };
    if r.pos != bytes.len() {
        return Err("trailing payload bytes".into());
    }
    Ok((payload, submitter, nonce))
}
