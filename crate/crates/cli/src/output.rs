//! Atomic file output and the timestamp sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use crate::Failure;

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(e, &format!("creating {}", dir.display())))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Failure::io(e, &format!("writing {}", tmp.display())))?;
        f.write_all(bytes)
            .and_then(|_| f.sync_all())
            .map_err(|e| Failure::io(e, &format!("writing {}", tmp.display())))?;
    }
    fs::rename(&tmp, &target).map_err(|e| Failure::io(e, &format!("renaming to {}", target.display())))?;
    Ok(target)
}

/// Pretty JSON plus a `.meta.json` sidecar with everything that varies
/// between identical runs (wall clock, worker count).
pub fn write_report(dir: &Path, stem: &str, value: &Value, workers: usize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    text.push('\n');
    write_atomic(dir, &format!("{stem}.json"), text.as_bytes())?;
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "report": format!("{stem}.json"),
        "written_unix_seconds": now,
        "workers": workers,
        "dsde_version": env!("CARGO_PKG_VERSION"),
    });
    let mut m = serde_json::to_string_pretty(&meta).expect("JSON value serializes");
    m.push('\n');
    write_atomic(dir, &format!("{stem}.meta.json"), m.as_bytes())?;
    Ok(())
}

/// JSON number, or `"inf"`/`"-inf"`/`"nan"` for non-finite values.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}
