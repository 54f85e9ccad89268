//! JSON case and protocol files.

use std::fs;
use std::path::Path;

use super::{PatientCase, Protocol};
use crate::Result;

/// Reads, canonicalizes and validates a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<PatientCase> {
    let text = fs::read_to_string(path)?;
    let case: PatientCase = serde_json::from_str(&text)?;
    case.canonicalized()
}

pub fn save_case(case: &PatientCase, path: impl AsRef<Path>) -> Result<()> {
    let canonical = case.clone().canonicalized()?;
    fs::write(path, serde_json::to_string(&canonical)?)?;
    Ok(())
}

pub fn load_protocol(path: impl AsRef<Path>) -> Result<Protocol> {
    let text = fs::read_to_string(path)?;
    let protocol: Protocol = serde_json::from_str(&text)?;
    protocol.validate()?;
    Ok(protocol)
}

pub fn save_protocol(protocol: &Protocol, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(protocol)?)?;
    Ok(())
}
