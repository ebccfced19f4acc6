//! Report plumbing: deterministic JSON envelopes (stable key order, timing
//! stripped into a separate metadata file) and report merging.

use serde_json::{json, Map, Value};
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::Result;

pub const TOOL: &str = "haarlab";

pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Standard wrapper carried by every emitted report.
pub fn envelope(check: &str, seed: u64, net_hash: Option<&str>, body: Value) -> Value {
    json!({
        "tool": TOOL,
        "version": version(),
        "check": check,
        "seed": seed,
        "net_hash": net_hash,
        "body": body,
    })
}

/// Remove every `runtime_ms` field in place and return their sum, so the
/// main report stays byte-identical across runs; timing goes to metadata.
pub fn strip_timing(v: &mut Value) -> u64 {
    match v {
        Value::Object(map) => {
            let mut total = map
                .remove("runtime_ms")
                .and_then(|x| x.as_u64())
                .unwrap_or(0);
            for (_, child) in map.iter_mut() {
                total += strip_timing(child);
            }
            total
        }
        Value::Array(items) => items.iter_mut().map(strip_timing).sum(),
        _ => 0,
    }
}

/// Canonical rendering: serde_json's map is ordered, pretty printing is
/// stable, and a trailing newline keeps files diff-friendly.
pub fn to_canonical_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values always render");
    s.push('\n');
    s
}

/// Write the deterministic report to `path` and the volatile parts
/// (timestamp, accumulated runtime) to `<path>.meta.json`.
pub fn write_report(path: &Path, mut report: Value) -> Result<()> {
    let runtime_ms = strip_timing(&mut report);
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_canonical_json(&report).as_bytes())?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "written_at_unix": stamp,
        "runtime_ms": runtime_ms,
    });
    let meta_path = path.with_extension(format!(
        "{}meta.json",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    let mut mf = std::fs::File::create(meta_path)?;
    mf.write_all(to_canonical_json(&meta).as_bytes())?;
    Ok(())
}

/// Merge report envelopes into one document, sorted by (check, seed) for
/// deterministic output regardless of input order.
pub fn merge_reports(reports: Vec<Value>) -> Value {
    let mut items = reports;
    items.sort_by(|a, b| {
        let key = |v: &Value| {
            (
                v.get("check")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string(),
                v.get("seed").and_then(Value::as_u64).unwrap_or(0),
            )
        };
        key(a).cmp(&key(b))
    });
    let mut top = Map::new();
    top.insert("tool".into(), Value::String(TOOL.into()));
    top.insert("version".into(), Value::String(version().into()));
    top.insert("check".into(), Value::String("report_merge".into()));
    top.insert("reports".into(), Value::Array(items));
    Value::Object(top)
}
