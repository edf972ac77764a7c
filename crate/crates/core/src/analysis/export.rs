//! Token grid CSV files.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::TokenGrid;

/// Header `channel,patch_0,...,patch_{N-1}`, one row per channel.
pub fn token_grid_csv(grid: &TokenGrid, channel_labels: &[String]) -> Result<String> {
    if channel_labels.len() != grid.channels() {
        return Err(Error::InvalidInput(format!(
            "{} channel labels for a {}-channel grid",
            channel_labels.len(),
            grid.channels()
        )));
    }
    let mut s = String::from("channel");
    for i in 0..grid.patches() {
        let _ = write!(s, ",patch_{i}");
    }
    s.push('\n');
    for (c, label) in channel_labels.iter().enumerate() {
        s.push_str(label);
        for t in grid.row(c) {
            let _ = write!(s, ",{t}");
        }
        s.push('\n');
    }
    Ok(s)
}

/// Inverse of [`token_grid_csv`]; returns the grid and its channel labels.
pub fn parse_token_grid_csv(text: &str) -> Result<(TokenGrid, Vec<String>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty token grid file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"channel")
        || cols[1..].iter().enumerate().any(|(i, c)| *c != format!("patch_{i}"))
    {
        return Err(Error::InvalidInput(format!("bad token grid header `{header}`")));
    }
    let n = cols.len() - 1;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != n + 1 {
            return Err(Error::InvalidInput(format!(
                "token grid row {} has {} fields, expected {}",
                i + 2,
                f.len(),
                n + 1
            )));
        }
        labels.push(f[0].to_string());
        rows.push(
            f[1..]
                .iter()
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("bad token `{t}` in row {}", i + 2)))
                })
                .collect::<Result<Vec<u32>>>()?,
        );
    }
    Ok((TokenGrid::from_rows(&rows)?, labels))
}
