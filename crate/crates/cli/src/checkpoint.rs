//! Model checkpoint format: one text header line
//! (`#viewrank model v1 <users> <items> <factors> <seed>`) followed by the
//! row-major user matrix then item matrix as little-endian f64 bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use viewrank_core::types::FactorModel;

const MAGIC: &str = "#viewrank model v1";

pub fn render_model(model: &FactorModel, seed: u64) -> Result<Vec<u8>> {
    if !model.is_finite() {
        bail!("refusing to checkpoint a model with non-finite factors");
    }
    let mut out = Vec::with_capacity(
        64 + 8 * (model.user_factors.len() + model.item_factors.len()),
    );
    writeln!(
        out,
        "{MAGIC} {} {} {} {}",
        model.num_users, model.num_items, model.factors, seed
    )?;
    for value in model.user_factors.iter().chain(&model.item_factors) {
        out.extend_from_slice(&value.to_le_bytes());
    }
    Ok(out)
}

pub fn save_model(path: &Path, model: &FactorModel, seed: u64) -> Result<()> {
    let bytes = render_model(model, seed)?;
    fs::write(path, bytes).with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn parse_model(bytes: &[u8]) -> Result<(FactorModel, u64)> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .context("checkpoint missing header line")?;
    let header = std::str::from_utf8(&bytes[..newline]).context("checkpoint header not UTF-8")?;
    let Some(rest) = header.strip_prefix(MAGIC) else {
        bail!("not a model checkpoint (header `{header}`)");
    };
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if fields.len() != 4 {
        bail!("malformed checkpoint header `{header}`");
    }
    let num_users: usize = fields[0].parse().context("checkpoint user count")?;
    let num_items: usize = fields[1].parse().context("checkpoint item count")?;
    let factors: usize = fields[2].parse().context("checkpoint factor count")?;
    let seed: u64 = fields[3].parse().context("checkpoint seed")?;

    let payload = &bytes[newline + 1..];
    let expected = 8 * factors * (num_users + num_items);
    if payload.len() != expected {
        bail!(
            "checkpoint payload is {} bytes, expected {expected} for {num_users}x{num_items}x{factors}",
            payload.len()
        );
    }

    let mut model = FactorModel::zeros(num_users, num_items, factors);
    let user_bytes = 8 * num_users * factors;
    for (slot, chunk) in model.user_factors.iter_mut().zip(payload[..user_bytes].chunks_exact(8)) {
        *slot = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    for (slot, chunk) in model.item_factors.iter_mut().zip(payload[user_bytes..].chunks_exact(8)) {
        *slot = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    if !model.is_finite() {
        bail!("checkpoint contains non-finite factors");
    }
    Ok((model, seed))
}

pub fn load_model(path: &Path) -> Result<(FactorModel, u64)> {
    let bytes =
        fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    parse_model(&bytes).with_context(|| format!("parsing checkpoint {}", path.display()))
}
