//! Tag files: a single `present=` line listing class indices.

use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::TagSet;

/// Parses the listed indices. Background (0) is implied and added if missing.
pub fn parse_tags(text: &str, origin: &Path) -> Result<Vec<usize>> {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::format(origin, "no present= line"))?;
    let list = line
        .strip_prefix("present=")
        .ok_or_else(|| Error::format(origin, format!("expected present=..., got {line:?}")))?;
    let mut out = vec![0usize];
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let k: usize = item
            .parse()
            .map_err(|_| Error::format(origin, format!("bad label index {item:?}")))?;
        if k == 0 {
            continue;
        }
        if out.contains(&k) {
            return Err(Error::format(origin, format!("duplicate label index {k}")));
        }
        out.push(k);
    }
    out.sort_unstable();
    Ok(out)
}

pub fn format_tags(tags: &TagSet) -> String {
    let list: Vec<String> = tags.present().iter().map(|k| k.to_string()).collect();
    format!("present={}\n", list.join(","))
}

/// Reads a tag file against a known label count (classes + background).
pub fn read_tags(path: &Path, label_count: usize) -> Result<TagSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let present = parse_tags(&text, path)?;
    if let Some(&k) = present.iter().find(|&&k| k >= label_count) {
        return Err(Error::format(
            path,
            format!("label {k} out of range for {label_count} labels"),
        ));
    }
    TagSet::new(label_count, &present)
}

pub fn write_tags(path: &Path, tags: &TagSet) -> Result<()> {
    std::fs::write(path, format_tags(tags)).map_err(|e| Error::io(path, e))
}
