//! Model files: one `#` header line followed by the JSON-encoded zone model.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::features::LAYOUT_VERSION;
use crate::pipeline::ZoneModel;
use crate::quantreg::TAU_GRID;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: invalid model file: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

/// File name of a zone's model inside an output directory.
pub fn model_file_name(zone: &str) -> String {
    format!("model_{zone}.json")
}

/// Header line: tool version, format, layout, basis digest and run hash.
pub fn header_line(model: &ZoneModel, config_hash: &str) -> String {
    format!(
        "# qrload {} model format={} layout={} zone={} spec={} window={} config={}",
        env!("CARGO_PKG_VERSION"),
        FORMAT_VERSION,
        LAYOUT_VERSION,
        model.zone,
        model.spec.digest(),
        model.trend.window,
        config_hash
    )
}

pub fn encode(model: &ZoneModel, config_hash: &str) -> String {
    let body = serde_json::to_string(model).expect("model serializes");
    format!("{}\n{body}\n", header_line(model, config_hash))
}

pub fn decode(text: &str, path: &Path) -> Result<ZoneModel, ModelIoError> {
    let invalid = |reason: String| ModelIoError::Invalid { path: path.to_path_buf(), reason };
    let body: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    let model: ZoneModel = serde_json::from_str(&body).map_err(|e| invalid(e.to_string()))?;
    validate(&model).map_err(invalid)?;
    Ok(model)
}

fn validate(model: &ZoneModel) -> Result<(), String> {
    let q = &model.qmodels;
    if q.layout_version != LAYOUT_VERSION {
        return Err(format!("layout version {} (expected {LAYOUT_VERSION})", q.layout_version));
    }
    if q.tau_grid != TAU_GRID {
        return Err("unexpected quantile grid".into());
    }
    model.spec.validate().map_err(|e| e.to_string())?;
    let width = 7 * (1 + model.spec.fourier_columns()) + model.spec.spline_columns();
    if q.coef.len() != 24 || q.coef.iter().any(|h| h.len() != TAU_GRID.len()) {
        return Err("coefficient table is not 24 × 9".into());
    }
    if q.coef.iter().flatten().any(|c| c.len() != width || c.iter().any(|v| !v.is_finite())) {
        return Err(format!("coefficient vectors must be finite with length {width}"));
    }
    let t = &model.trend;
    if t.trend_path.len() <= t.window || t.trend_path.iter().any(|v| !v.is_finite()) {
        return Err("trend path is shorter than its window or not finite".into());
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<ZoneModel, ModelIoError> {
    let text = fs::read_to_string(path).map_err(|source| ModelIoError::Io { path: path.to_path_buf(), source })?;
    decode(&text, path)
}

pub fn save(model: &ZoneModel, path: &Path, config_hash: &str) -> Result<(), ModelIoError> {
    write_atomic(path, encode(model, config_hash).as_bytes())
        .map_err(|source| ModelIoError::Io { path: path.to_path_buf(), source })
}

/// Write through a temporary sibling file and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
