//! Line-delimited JSON records on standard error.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

fn emit(level: &str, event: &str, fields: Value) {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let mut record = Map::new();
    record.insert("ts".into(), json!(ts));
    record.insert("level".into(), json!(level));
    record.insert("event".into(), json!(event));
    if let Value::Object(extra) = fields {
        record.extend(extra);
    }
    let _ = writeln!(std::io::stderr().lock(), "{}", Value::Object(record));
}

pub fn info(event: &str, fields: Value) {
    emit("info", event, fields);
}

pub fn error(message: &str, exit_code: u8) {
    emit("error", "failed", json!({ "message": message, "exit_code": exit_code }));
}
