//! Plain-text field and mask files: a `H W C` header line followed by
//! whitespace-separated values in row-major, channels-last order.

use std::fmt::Write as _;
use std::path::Path;

use super::grid::FieldGrid;
use super::mask::CorruptionMask;
use crate::error::{Error, Result};

fn header(tokens: &mut std::str::SplitWhitespace<'_>) -> Result<[usize; 3]> {
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::Parse("missing header field".into()))?;
        *d = tok
            .parse()
            .map_err(|_| Error::Parse(format!("bad header field `{tok}`")))?;
    }
    Ok(dims)
}

fn body(dims: &[usize; 3], values: impl Iterator<Item = String>) -> String {
    let mut s = format!("{} {} {}\n", dims[0], dims[1], dims[2]);
    let row = dims[1] * dims[2];
    for (i, v) in values.enumerate() {
        s.push_str(&v);
        s.push(if (i + 1) % row == 0 { '\n' } else { ' ' });
    }
    s
}

pub fn write_fgrid(field: &FieldGrid) -> String {
    let (h, w, c) = field.shape();
    body(
        &[h, w, c],
        field.values().iter().map(|v| {
            let mut s = String::new();
            let _ = write!(s, "{v}");
            s
        }),
    )
}

pub fn parse_fgrid(text: &str) -> Result<FieldGrid> {
    let mut tokens = text.split_whitespace();
    let [h, w, c] = header(&mut tokens)?;
    let values = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad value `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    FieldGrid::new(h, w, c, values)
}

/// Masks are stored as `H W 1` with entries `0`/`1`.
pub fn write_fmask(mask: &CorruptionMask) -> String {
    body(
        &[mask.height(), mask.width(), 1],
        mask.values()
            .iter()
            .map(|&m| if m { "1".into() } else { "0".into() }),
    )
}

pub fn parse_fmask(text: &str) -> Result<CorruptionMask> {
    let mut tokens = text.split_whitespace();
    let [h, w, c] = header(&mut tokens)?;
    if c != 1 {
        return Err(Error::Parse(format!("mask must have one channel, got {c}")));
    }
    let values = tokens
        .map(|t| match t {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(Error::Parse(format!("bad mask entry `{t}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    CorruptionMask::new(h, w, values)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn read_fgrid(path: &Path) -> Result<FieldGrid> {
    parse_fgrid(&read(path)?)
}

pub fn read_fmask(path: &Path) -> Result<CorruptionMask> {
    parse_fmask(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let f = FieldGrid::new(2, 3, 2, (0..12).map(|i| i as f64 / 7.0 - 0.5).collect()).unwrap();
        let text = write_fgrid(&f);
        assert!(text.starts_with("2 3 2\n"));
        assert_eq!(parse_fgrid(&text).unwrap(), f);

        let m = CorruptionMask::new(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(parse_fmask(&write_fmask(&m)).unwrap(), m);
    }

    #[test]
    fn malformed() {
        assert!(parse_fgrid("2 2 1\n1 2 3").is_err());
        assert!(parse_fgrid("2 x 1\n").is_err());
        assert!(parse_fmask("1 2 1\n0 2").is_err());
    }
}
