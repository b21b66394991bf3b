//! Plot-ready CSV emission. Every file carries a header block with the
//! schema version, the resolved configuration and, when applicable, the
//! basis fingerprint. All numeric rows are deterministic for a fixed config
//! and seed; wall-clock timings only appear in bench and run-summary files.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest-roundtrip scientific notation; stable across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Write one CSV with the standard header block.
pub fn write_csv(
    path: &Path,
    schema: &str,
    config_lines: &[String],
    basis_fingerprint: Option<&str>,
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# schema: rbhom/{schema} v{SCHEMA_VERSION}\n"));
    if let Some(fp) = basis_fingerprint {
        out.push_str(&format!("# basis: {fp}\n"));
    }
    for line in config_lines {
        out.push_str(&format!("# config: {line}\n"));
    }
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_block_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(
            &path,
            "test",
            &["a=1".into(), "b=2".into()],
            Some("deadbeef"),
            &["x", "y"],
            vec![vec!["1".into(), fmt_f64(0.5)]],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# schema: rbhom/test v1");
        assert_eq!(lines[1], "# basis: deadbeef");
        assert_eq!(lines[2], "# config: a=1");
        assert_eq!(lines[3], "# config: b=2");
        assert_eq!(lines[4], "x,y");
        assert_eq!(lines[5], "1,5e-1");
    }
}
