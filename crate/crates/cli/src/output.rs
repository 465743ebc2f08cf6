use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `<file>.meta.json` next to an output file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Run metadata for one output: creation time, command line and the full
/// resolved configuration.
pub fn write_sidecar(path: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    let meta = json!({
        "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "created": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        "command": command,
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg,
    });
    write_json(&sidecar_path(path), &meta)
}

/// Dense matrix in the Matrix Market array format (column-major values).
pub fn write_matrix_market<W: Write>(mut w: W, m: &DMatrix<f64>, comment: &str) -> std::io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    for line in comment.lines() {
        writeln!(w, "% {line}")?;
    }
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for v in m.iter() {
        writeln!(w, "{v:.17e}")?;
    }
    Ok(())
}
