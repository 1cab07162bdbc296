//! Line-delimited JSON logs on stderr.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{Map, Value};

pub fn emit(level: &str, msg: &str, fields: Value) {
    let mut line = Map::new();
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    line.insert("ts".into(), Value::from((ts * 1000.0).round() / 1000.0));
    line.insert("level".into(), level.into());
    line.insert("msg".into(), msg.into());
    if let Value::Object(extra) = fields {
        line.extend(extra);
    }
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", Value::Object(line));
}

macro_rules! info {
    ($msg:expr) => { $crate::log::emit("info", $msg, serde_json::Value::Null) };
    ($msg:expr, $($fields:tt)+) => { $crate::log::emit("info", $msg, serde_json::json!({ $($fields)+ })) };
}

macro_rules! log_warn {
    ($msg:expr) => { $crate::log::emit("warn", $msg, serde_json::Value::Null) };
    ($msg:expr, $($fields:tt)+) => { $crate::log::emit("warn", $msg, serde_json::json!({ $($fields)+ })) };
}

pub(crate) use {info, log_warn};
