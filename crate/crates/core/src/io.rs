//! Text formats: grid dumps, `key = value` blocks, CSV rows, atomic writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::energy::Field;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Scientific notation with 17 significant digits; round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Joins fields with commas, quoting any that contain a comma, quote or newline.
pub fn csv_line<S: AsRef<str>>(fields: &[S]) -> String {
    let mut out = String::new();
    for (k, f) in fields.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let f = f.as_ref();
        if f.contains([',', '"', '\n', '\r']) {
            out.push('"');
            out.push_str(&f.replace('"', "\"\""));
            out.push('"');
        } else {
            out.push_str(f);
        }
    }
    out
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `# kind n h d` header, then `ix iy v_1 … v_d` for every interior node.
pub fn grid_dump(u: &Field) -> String {
    let g = u.grid();
    let mut out = String::new();
    let _ = writeln!(out, "# {} {} {} {}", g.kind().token(), g.n(), fmt_f64(g.h()), u.d());
    for k in 0..g.len() {
        if !g.is_interior(k) {
            continue;
        }
        let (ix, iy) = g.node(k);
        let _ = write!(out, "{ix} {iy}");
        for i in 0..u.d() {
            let _ = write!(out, " {}", fmt_f64(u.comp(i)[k]));
        }
        out.push('\n');
    }
    out
}

pub fn write_grid_dump(path: &Path, u: &Field) -> Result<()> {
    write_atomic(path, &grid_dump(u))
}

/// Parses a dump written for `grid` with `d` components.
pub fn parse_grid_dump(text: &str, grid: Arc<Grid>, d: usize) -> Result<Field> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty grid dump".into()))?;
    let parts: Vec<&str> = header.trim_start_matches('#').split_whitespace().collect();
    if parts.len() != 4 {
        return Err(Error::Parse(format!("malformed grid-dump header: {header}")));
    }
    let n: usize = parts[1].parse().map_err(|_| Error::Parse(format!("bad n in header: {header}")))?;
    let h: f64 = parts[2].parse().map_err(|_| Error::Parse(format!("bad h in header: {header}")))?;
    let dd: usize = parts[3].parse().map_err(|_| Error::Parse(format!("bad d in header: {header}")))?;
    if parts[0] != grid.kind().token() || n != grid.n() || (h - grid.h()).abs() > 1e-12 * grid.h() || dd != d {
        return Err(Error::Parse(format!(
            "grid dump ({} n={n} h={h} d={dd}) does not match the configured grid ({} n={} h={} d={d})",
            parts[0],
            grid.kind().token(),
            grid.n(),
            grid.h()
        )));
    }
    let mut comps = vec![vec![0.0; grid.len()]; d];
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse(format!("grid dump line {}: {line}", lineno + 2));
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != d + 2 {
            return Err(bad());
        }
        let ix: usize = tok[0].parse().map_err(|_| bad())?;
        let iy: usize = tok[1].parse().map_err(|_| bad())?;
        if ix >= grid.nx() || iy >= grid.ny() {
            return Err(bad());
        }
        let k = grid.index(ix, iy);
        for i in 0..d {
            comps[i][k] = tok[i + 2].parse().map_err(|_| bad())?;
        }
    }
    Field::new(grid, comps)
}

pub fn read_grid_dump(path: &Path, grid: Arc<Grid>, d: usize) -> Result<Field> {
    let text = fs::read_to_string(path)?;
    parse_grid_dump(&text, grid, d)
}

/// `key = value` lines.
pub fn key_values<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    pairs.iter().fold(String::new(), |mut out, (k, v)| {
        let _ = writeln!(out, "{} = {}", k.as_ref(), v.as_ref());
        out
    })
}
