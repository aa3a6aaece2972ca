use std::fmt::Write as _;
use std::path::Path;

use edgeguard::ledger::export::{import_chain, ExportError};
use edgeguard::ledger::{first_invalid_height, replay, verify_chain, Asset, Block, Payload, Transaction};

use crate::args::LedgerAction;
use crate::{read_text, CliError};

fn load(path: &Path) -> Result<Vec<Block>, CliError> {
    let text = read_text(path)?;
    import_chain(&text).map_err(|ExportError::Malformed { line, msg }| {
        // line 1 holds the genesis block
        CliError::Verify(format!("FAIL: block at height {}: {msg}", line - 1))
    })
}

fn describe(tx: &Transaction) -> String {
    match &tx.payload {
        Payload::SensorUpdate { sensor_id, value } => format!("update sensor={sensor_id} value={value}"),
        Payload::Alert {
            device_id,
            class_name,
            probability,
            quarantine,
        } => format!("alert device={device_id} class={class_name} probability={probability} quarantine={quarantine}"),
        Payload::RegisterDevice { device_id, owner } => format!("register device={device_id} owner={owner}"),
        Payload::RegisterSensor {
            sensor_id,
            device_id,
            initial,
        } => format!("register sensor={sensor_id} device={device_id} initial={initial}"),
    }
}

fn touches(tx: &Transaction, id: &str, device_of: Option<&str>) -> bool {
    match &tx.payload {
        Payload::SensorUpdate { sensor_id, .. } => sensor_id == id,
        Payload::Alert { device_id, .. } | Payload::RegisterDevice { device_id, .. } => device_id == id,
        Payload::RegisterSensor {
            sensor_id, device_id, ..
        } => sensor_id == id || (device_of.is_none() && device_id == id),
    }
}

pub fn inspect(blocks: &[Block]) -> String {
    let mut out = String::new();
    for b in blocks {
        let _ = writeln!(
            out,
            "block {} hash={} prev={} proposer={} time={} txs={}",
            b.height,
            b.block_hash.short(),
            b.prev_hash.short(),
            b.proposer,
            b.timestamp,
            b.txs.len()
        );
        for tx in &b.txs {
            let _ = writeln!(out, "  tx {} by {}: {}", tx.tx_id.short(), tx.submitter, describe(tx));
        }
    }
    out.push_str(&replay(blocks).dump());
    out
}

pub fn query(blocks: &[Block], id: &str) -> Result<String, CliError> {
    let state = replay(blocks);
    let asset = state
        .query_asset(id)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = String::new();
    let device_of = match asset {
        Asset::Sensor(s) => {
            let _ = writeln!(
                out,
                "sensor {} device={} value={} updated_at={}",
                s.sensor_id, s.device_id, s.last_value, s.updated_at
            );
            Some(s.device_id.as_str())
        }
        Asset::Device(d) => {
            let _ = writeln!(out, "device {} owner={} status={}", d.device_id, d.owner_member, d.status.as_str());
            None
        }
    };
    for b in blocks {
        for tx in b.txs.iter().filter(|t| touches(t, id, device_of)) {
            let _ = writeln!(out, "  height {} tx {} by {}: {}", b.height, tx.tx_id.short(), tx.submitter, describe(tx));
        }
    }
    Ok(out)
}

pub fn run(action: &LedgerAction) -> Result<(), CliError> {
    match action {
        LedgerAction::Inspect { file } => print!("{}", inspect(&load(file)?)),
        LedgerAction::Verify { file } => {
            let blocks = load(file)?;
            if !verify_chain(&blocks) {
                let h = first_invalid_height(&blocks).unwrap_or(0);
                return Err(CliError::Verify(format!("FAIL: block at height {h}")));
            }
            println!("OK");
        }
        LedgerAction::Query { file, id } => print!("{}", query(&load(file)?, id)?),
    }
    Ok(())
}
