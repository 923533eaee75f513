//! Shared conventions for CSV artifacts.

use std::io::Write;

use crate::error::Result;

/// Writes the `# config_hash: <hex>` line that leads every CSV artifact.
pub fn write_hash_line<W: Write>(out: &mut W, hash: Option<&str>) -> Result<()> {
    if let Some(h) = hash {
        writeln!(out, "# config_hash: {h}")?;
    }
    Ok(())
}
