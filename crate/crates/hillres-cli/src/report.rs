//! CSV reports with JSON mirrors.

use serde::Serialize;
use std::fs;
use std::io;
use std::path::Path;

/// Writes `<name>.csv` and its `<name>.json` mirror. An empty table still gets its header row.
pub fn write_table<T: Serialize + Default>(dir: &Path, name: &str, rows: &[T]) -> io::Result<()> {
    let path = dir.join(format!("{name}.csv"));
    if rows.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(T::default())?;
        let text = String::from_utf8(w.into_inner().map_err(io::Error::other)?).map_err(io::Error::other)?;
        fs::write(&path, text.lines().next().unwrap_or_default().to_string() + "\n")?;
    } else {
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    write_json(dir, name, &rows)
}

/// Writes `<name>.json`.
pub fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    fs::write(dir.join(format!("{name}.json")), text + "\n")
}
