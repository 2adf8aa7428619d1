//! Dataset snapshot format: a versioned, tab-separated text file carrying
//! the dense-indexed feedback sets, their timestamps, and the id maps.
//! Writing is deterministic, so identical inputs produce identical bytes.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use viewrank_core::ingest::IdMaps;
use viewrank_core::types::{validate_dataset, FeedbackDataset};

const HEADER: &str = "#viewrank snapshot v1";

pub fn render_snapshot(data: &FeedbackDataset, maps: &IdMaps) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&format!(
        "meta\t{}\t{}\t{}\n",
        data.num_users,
        data.num_items,
        u8::from(data.timestamps_day_granular)
    ));
    for id in &maps.users {
        out.push_str(&format!("u\t{id}\n"));
    }
    for id in &maps.items {
        out.push_str(&format!("i\t{id}\n"));
    }
    for user in 0..data.num_users {
        for (&item, &ts) in data.purchases[user].iter().zip(&data.purchase_timestamps[user]) {
            out.push_str(&format!("p\t{user}\t{item}\t{ts}\n"));
        }
    }
    for user in 0..data.num_users {
        for (&item, &ts) in data.views[user].iter().zip(&data.view_timestamps[user]) {
            out.push_str(&format!("v\t{user}\t{item}\t{ts}\n"));
        }
    }
    out
}

pub fn save_snapshot(path: &Path, data: &FeedbackDataset, maps: &IdMaps) -> Result<()> {
    fs::write(path, render_snapshot(data, maps))
        .with_context(|| format!("writing snapshot {}", path.display()))
}

pub fn parse_snapshot(text: &str) -> Result<(FeedbackDataset, IdMaps)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line == HEADER => {}
        Some((_, line)) => bail!("not a snapshot file (header `{line}`)"),
        None => bail!("empty snapshot file"),
    }
    let meta = lines.next().map(|(_, l)| l).unwrap_or_default();
    let fields: Vec<&str> = meta.split('\t').collect();
    if fields.len() != 4 || fields[0] != "meta" {
        bail!("malformed snapshot meta line");
    }
    let num_users: usize = fields[1].parse().context("snapshot user count")?;
    let num_items: usize = fields[2].parse().context("snapshot item count")?;
    let day_granular = fields[3] == "1";

    let mut data = FeedbackDataset::empty(num_users, num_items);
    data.timestamps_day_granular = day_granular;
    let mut users = Vec::with_capacity(num_users);
    let mut items = Vec::with_capacity(num_items);

    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut parts = line.split('\t');
        let tag = parts.next().unwrap_or_default();
        match tag {
            "u" | "i" => {
                let id = parts.next().map(str::to_string);
                let Some(id) = id else { bail!("snapshot line {line_no}: missing id") };
                if tag == "u" {
                    users.push(id);
                } else {
                    items.push(id);
                }
            }
            "p" | "v" => {
                let parse = |field: Option<&str>| -> Result<i64> {
                    field
                        .and_then(|f| f.parse().ok())
                        .with_context(|| format!("snapshot line {line_no}: malformed record"))
                };
                let user = parse(parts.next())? as usize;
                let item = parse(parts.next())? as u32;
                let ts = parse(parts.next())?;
                if user >= num_users {
                    bail!("snapshot line {line_no}: user {user} out of range");
                }
                if tag == "p" {
                    data.purchases[user].push(item);
                    data.purchase_timestamps[user].push(ts);
                } else {
                    data.views[user].push(item);
                    data.view_timestamps[user].push(ts);
                }
            }
            "" => continue,
            other => bail!("snapshot line {line_no}: unknown record tag `{other}`"),
        }
    }

    if users.len() != num_users || items.len() != num_items {
        bail!(
            "snapshot id maps are inconsistent: {} users / {} items listed, meta says {num_users} / {num_items}",
            users.len(),
            items.len()
        );
    }
    let violations = validate_dataset(&data);
    if !violations.is_empty() {
        bail!("snapshot violates dataset invariants: {}", violations[0]);
    }
    Ok((data, IdMaps { users, items }))
}

pub fn load_snapshot(path: &Path) -> Result<(FeedbackDataset, IdMaps)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading snapshot {}", path.display()))?;
    parse_snapshot(&text).with_context(|| format!("parsing snapshot {}", path.display()))
}
