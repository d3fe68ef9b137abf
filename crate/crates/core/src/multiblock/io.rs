//! Text formats for matrices and multi-block directories.
//!
//! A matrix file is comma-delimited, one row per line, with an optional
//! `# rows=<I> cols=<J>` header. Values are written with shortest
//! round-trip formatting, so reading back is exact.
//!
//! A multi-block directory holds `block_000.csv`, `block_001.csv`, … and a
//! `meta.json` of the form `{"shared_rows": I, "blocks": [J_1, …]}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{validate, MultiBlock};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiBlockMeta {
    pub shared_rows: usize,
    pub blocks: Vec<usize>,
}

pub(crate) fn format_value(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 20);
    out.push_str(&format!("# rows={} cols={}\n", m.nrows(), m.ncols()));
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&x| format_value(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let body = line.trim().strip_prefix('#')?;
    let mut rows = None;
    let mut cols = None;
    for tok in body.split_whitespace() {
        if let Some(v) = tok.strip_prefix("rows=") {
            rows = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("cols=") {
            cols = v.parse().ok();
        }
    }
    Some((rows?, cols?))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let declared = text.lines().next().and_then(parse_header);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::parse(
                    path,
                    format!("row {rows} has {} fields, expected {c}", record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(path, format!("row {rows}: bad number {field:?}")))?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    if let Some((r, c)) = declared {
        if (r, c) != (rows, cols) {
            return Err(Error::parse(
                path,
                format!("header declares {r}x{c} but data is {rows}x{cols}"),
            ));
        }
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn block_file_name(n: usize) -> String {
    format!("block_{n:03}.csv")
}

pub fn write_multiblock(dir: impl AsRef<Path>, mb: &MultiBlock) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (n, m) in mb.matrices().enumerate() {
        write_matrix(dir.join(block_file_name(n)), m)?;
    }
    let meta = MultiBlockMeta {
        shared_rows: mb.shared_rows(),
        blocks: mb.col_counts(),
    };
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta).expect("meta serialises");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_multiblock(dir: impl AsRef<Path>) -> Result<MultiBlock> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MultiBlockMeta =
        serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.to_string()))?;
    let mut blocks = Vec::with_capacity(meta.blocks.len());
    for (n, &cols) in meta.blocks.iter().enumerate() {
        let path = dir.join(block_file_name(n));
        let m = read_matrix(&path)?;
        if m.ncols() != cols {
            return Err(Error::parse(
                &path,
                format!("meta.json lists {cols} columns, file has {}", m.ncols()),
            ));
        }
        blocks.push(m);
    }
    let mb = validate(blocks)?;
    if mb.shared_rows() != meta.shared_rows {
        return Err(Error::parse(
            &meta_path,
            format!("shared_rows {} but blocks have {}", meta.shared_rows, mb.shared_rows()),
        ));
    }
    Ok(mb)
}
