//! CSV and JSON emission with a commented metadata header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::error::Result;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header lines: artifact version, study, config hash, master seed, then
/// every configuration field. `workers` and `out` are left out so that
/// reruns on other pools or directories produce identical files.
pub fn header(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let mut h = vec![
        ("artifact_version".to_string(), ARTIFACT_VERSION.to_string()),
        ("study".to_string(), cfg.study.clone()),
        ("config_hash".to_string(), cfg.hash()),
        ("master_seed".to_string(), cfg.seed.to_string()),
    ];
    h.extend(cfg.echo().into_iter().map(|(k, v)| (format!("config.{k}"), v)));
    h
}

/// Writes `# key = value` lines followed by the CSV body.
pub fn write_csv<S: Serialize>(path: &Path, header: &[(String, String)], rows: &[S]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (k, v) in header {
        writeln!(out, "# {k} = {v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with the header folded in under `"meta"`.
pub fn write_json<S: Serialize>(path: &Path, header: &[(String, String)], body: &S) -> Result<()> {
    let meta: serde_json::Map<String, serde_json::Value> = header
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
        .collect();
    let doc = serde_json::json!({ "meta": meta, "result": body });
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], skipping the header lines.
pub fn read_csv_body(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concentration::MomentRow;

    #[test]
    fn header_then_body() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let cfg = ExperimentConfig::default();
        write_csv(&p, &header(&cfg), &[MomentRow::new("x", 1.0, 0.5, 0.1, 1.0)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# artifact_version = "));
        assert!(text.contains(&format!("# config_hash = {}", cfg.hash())));
        assert!(!text.contains("config.workers"));
        assert_eq!(read_csv_body(&p).unwrap(), "check,order,empirical,std_err,bound,pass\nx,1.0,0.5,0.1,1.0,true\n");
    }
}
