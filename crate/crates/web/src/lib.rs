//! WebAssembly entry points for the static demo page in `www/`. Each
//! export takes plain numbers or strings and returns a JSON document.

use did6g_core::scenario::{run_consensus_sweep, run_roaming_scenario, ScenarioConfig, SweepKind};
use wasm_bindgen::prelude::*;

const BFT_SWEEP: &str = include_str!("../../../configs/consensus-sweep-bft.json");
const STAKE_SWEEP: &str = include_str!("../../../configs/consensus-sweep-stake.json");
const ROAMING: &str = include_str!("../../../configs/roaming.json");

/// Largest network the page lets the halting search simulate.
pub const MAX_NODES: usize = 64;

fn config(text: &str) -> Result<ScenarioConfig, String> {
    ScenarioConfig::from_json(text).map_err(|e| e.to_string())
}

/// Simulated halting threshold and message cost for every BFT network
/// size from 1 to `max_nodes`.
pub fn bft_thresholds_json(max_nodes: usize, per_message_latency_ms: f64) -> Result<String, String> {
    if !(1..=MAX_NODES).contains(&max_nodes) {
        return Err(format!("node count must be between 1 and {MAX_NODES}"));
    }
    if !(per_message_latency_ms.is_finite() && per_message_latency_ms >= 0.0) {
        return Err("latency must be a non-negative number".into());
    }
    let mut cfg = config(BFT_SWEEP)?;
    let sweep = cfg.sweep.as_mut().ok_or("bundled sweep config lacks a sweep section")?;
    sweep.kind = SweepKind::Bft;
    sweep.node_counts = (1..=max_nodes).collect();
    sweep.per_message_latency_ms = per_message_latency_ms;
    run_consensus_sweep(&cfg, 0).map(|r| r.to_json()).map_err(|e| e.to_string())
}

/// Whether an attacker holding `fraction` of the stake can rewrite the
/// ledger, with the forged fork when it can.
pub fn stake_takeover_json(fraction: f64, seed: u64) -> Result<String, String> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err("stake fraction must lie in [0, 1]".into());
    }
    let mut cfg = config(STAKE_SWEEP)?;
    let sweep = cfg.sweep.as_mut().ok_or("bundled sweep config lacks a sweep section")?;
    sweep.kind = SweepKind::Stake;
    sweep.stake_fractions = vec![fraction];
    run_consensus_sweep(&cfg, seed).map(|r| r.to_json()).map_err(|e| e.to_string())
}

/// The roaming scenario under one of `none`, `stranger-key` or `replay`.
pub fn roaming_json(seed: u64, adversary: &str) -> Result<String, String> {
    let mut cfg = config(ROAMING)?;
    match adversary {
        "none" => {}
        "stranger-key" => cfg.adversary.stranger_key_vp = true,
        "replay" => cfg.adversary.replay_vp = true,
        other => return Err(format!("unknown adversary {other:?}")),
    }
    run_roaming_scenario(&cfg, seed).map(|r| r.to_json()).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = bftThresholds)]
pub fn bft_thresholds(max_nodes: u32, per_message_latency_ms: f64) -> Result<String, JsError> {
    bft_thresholds_json(max_nodes as usize, per_message_latency_ms).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = stakeTakeover)]
pub fn stake_takeover(fraction: f64, seed: u32) -> Result<String, JsError> {
    stake_takeover_json(fraction, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = runRoaming)]
pub fn run_roaming(seed: u32, adversary: &str) -> Result<String, JsError> {
    roaming_json(u64::from(seed), adversary).map_err(|e| JsError::new(&e))
}
