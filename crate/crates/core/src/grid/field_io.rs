//! Plain-text field files: a `CRI-FIELD v1 n=<n> N=<N>` header line followed by
//! the `N^n` values in lexicographic index order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GridError, PeriodicGrid, ScalarField};

pub const FIELD_HEADER_TAG: &str = "CRI-FIELD";

/// Writes one value per line with 17 significant digits, which round-trips exactly.
pub fn write_field<W: Write>(field: &ScalarField, mut w: W) -> std::io::Result<()> {
    let g = field.grid();
    writeln!(w, "{FIELD_HEADER_TAG} v1 n={} N={}", g.dim(), g.points_per_axis())?;
    for v in field.values() {
        writeln!(w, "{v:.16e}")?;
    }
    w.flush()
}

pub fn write_field_file(field: &ScalarField, path: impl AsRef<Path>) -> Result<(), GridError> {
    let f = File::create(path)?;
    write_field(field, BufWriter::new(f))?;
    Ok(())
}

pub fn read_field<R: Read>(r: R) -> Result<ScalarField, GridError> {
    let mut reader = BufReader::new(r);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let grid = parse_header(header.trim())?;
    let mut body = String::new();
    reader.read_to_string(&mut body)?;
    let values = body
        .split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            tok.parse::<f64>().map_err(|_| GridError::Format(format!("value #{i} `{tok}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    ScalarField::new(grid, values)
}

pub fn read_field_file(path: impl AsRef<Path>) -> Result<ScalarField, GridError> {
    read_field(File::open(path)?)
}

fn parse_header(line: &str) -> Result<PeriodicGrid, GridError> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(FIELD_HEADER_TAG) || tokens.next() != Some("v1") {
        return Err(GridError::Format(format!("expected `{FIELD_HEADER_TAG} v1 n=<n> N=<N>`, got `{line}`")));
    }
    let mut dim = None;
    let mut res = None;
    for tok in tokens {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| GridError::Format(format!("bad header token `{tok}`")))?;
        let val: usize = val.parse().map_err(|_| GridError::Format(format!("bad header value `{tok}`")))?;
        match key {
            "n" => dim = Some(val),
            "N" => res = Some(val),
            _ => return Err(GridError::Format(format!("unknown header key `{key}`"))),
        }
    }
    match (dim, res) {
        (Some(d), Some(n)) => PeriodicGrid::new(d, n),
        _ => Err(GridError::Format("header must carry both n= and N=".into())),
    }
}
