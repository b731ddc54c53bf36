//! Flat `key = value` text files (configs, metrics, manifests) and atomic
//! file replacement.

use std::io::Write;
use std::path::Path;

use crate::error::{Result, VsdeError};

/// Parses `key = value` lines; blank lines and `#` comments are skipped. The
/// split happens at the last `=` so keys may not contain one.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .rsplit_once('=')
            .ok_or_else(|| VsdeError::Format(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(VsdeError::Format(format!("line {}: empty key", lineno + 1)));
        }
        out.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(out)
}

/// Renders pairs one per line, in the given order.
pub fn format_kv<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k.as_ref());
        out.push_str(" = ");
        out.push_str(v.as_ref());
        out.push('\n');
    }
    out
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| VsdeError::Format(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| VsdeError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| VsdeError::io(&tmp, e))?;
    f.sync_all().map_err(|e| VsdeError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| VsdeError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| VsdeError::io(path, e))
}
