use std::fmt::Write as _;
use std::path::Path;

use diffpath::analysis::{PartAssignment, PortionHotVector};
use diffpath::data::pnm::write_pnm;
use diffpath::model::rank_descending;
use diffpath::{Error, Result, Tensor};
use serde::Serialize;

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Header of a portion-hot table: `id` and one column per pathway channel.
pub fn portion_hot_header(counts: &[usize]) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    for (l, &c) in counts.iter().enumerate() {
        h.extend((0..c).map(|ch| format!("L{l}_c{ch}")));
    }
    h
}

pub fn portion_hot_row(id: usize, v: &PortionHotVector) -> Vec<String> {
    let mut row = Vec::with_capacity(v.values.len() + 1);
    row.push(id.to_string());
    row.extend(v.values.iter().map(|x| x.to_string()));
    row
}

/// A numeric CSV table with a header.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: empty table", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("{}: row {}: {e}", path.display(), n + 1)))?;
        if row.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                n + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Reads a portion-hot table into `(ids, vectors)`.
pub fn read_portion_hot(path: &Path) -> Result<(Vec<usize>, Vec<PortionHotVector>)> {
    let t = read_table(path)?;
    let ids = t.rows.iter().map(|r| r[0] as usize).collect();
    let vectors = t
        .rows
        .into_iter()
        .map(|r| PortionHotVector {
            values: r[1..].to_vec(),
            k: 0,
        })
        .collect();
    Ok((ids, vectors))
}

/// One gray level per part: pixels take the level of their strongest
/// channel, ranked by part size (largest part brightest); unassigned pixels
/// are black.
pub fn render_parts(parts: &PartAssignment, path: &Path) -> Result<()> {
    let order = rank_descending(&parts.ratios());
    let mut level = vec![0usize; parts.channels];
    let used: Vec<usize> = order.into_iter().filter(|&c| parts.sizes[c] > 0).collect();
    for (rank, &c) in used.iter().enumerate() {
        level[c] = used.len() - rank;
    }
    let top = used.len().max(1) as f32;
    let data = parts
        .pixels
        .iter()
        .map(|list| list.first().map_or(0.0, |&c| level[c] as f32 / top))
        .collect();
    write_pnm(&Tensor::new(vec![parts.height, parts.width], data)?, path)
}

pub fn fmt_f64s(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v}").unwrap();
    }
    s
}
