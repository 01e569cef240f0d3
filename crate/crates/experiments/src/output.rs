//! CSV tables, grayscale images and field conversions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use willmore_core::grid::{GridSpec, NodalField};

use crate::error::{CliError, Result};

/// Scientific notation with 17 significant digits, enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// The 2D field itself, or the slice of a 3D field through the middle of
/// `axis`, as rows of values with the second in-plane axis pointing up.
/// 1D fields become a single row.
pub fn image_rows(field: &NodalField, axis: usize) -> Result<Vec<Vec<f64>>> {
    let spec = field.spec();
    let n = spec.n();
    let v = field.values();
    match spec.dim() {
        1 => Ok(vec![v.to_vec()]),
        2 => Ok((0..n).rev().map(|j| (0..n).map(|i| v[spec.flat_index(&[i, j])]).collect()).collect()),
        3 => {
            if axis > 2 {
                return Err(CliError::Config(format!("slice axis {axis} out of range")));
            }
            let (a, b) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let mid = n / 2;
            Ok((0..n)
                .rev()
                .map(|j| {
                    (0..n)
                        .map(|i| {
                            let mut idx = [mid; 3];
                            idx[a] = i;
                            idx[b] = j;
                            v[spec.flat_index(&idx)]
                        })
                        .collect()
                })
                .collect())
        }
        d => Err(CliError::Config(format!("cannot render a {d}-dimensional field"))),
    }
}

/// Maps `[-1, 1]` linearly onto `[0, 255]`, clamping outside.
pub fn gray_level(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (127.5 * (v.clamp(-1.0, 1.0) + 1.0)).round() as u8
}

/// Binary portable graymap.
pub fn encode_pgm(rows: &[Vec<f64>]) -> Vec<u8> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for row in rows {
        out.extend(row.iter().map(|&v| gray_level(v)));
    }
    out
}

pub fn write_pgm(field: &NodalField, axis: usize, path: &Path) -> Result<()> {
    let bytes = encode_pgm(&image_rows(field, axis)?);
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Header, width, height and pixels of a binary graymap with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || CliError::Format("not a binary graymap".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let pixels = bytes.get(pos..).ok_or_else(bad)?.to_vec();
    if pixels.len() != width * height {
        return Err(bad());
    }
    Ok((width, height, pixels))
}

/// Writes `flat_index,value` rows after `#` lines carrying the grid.
pub fn write_field_csv(field: &NodalField, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let spec = field.spec();
    let origin: Vec<String> = spec.origin().iter().map(|&o| fmt_f64(o)).collect();
    let io = |e| CliError::io(path, e);
    writeln!(w, "# dim {}", spec.dim()).map_err(io)?;
    writeln!(w, "# n {}", spec.n()).map_err(io)?;
    writeln!(w, "# origin {}", origin.join(" ")).map_err(io)?;
    writeln!(w, "# edge_length {}", fmt_f64(spec.edge_length())).map_err(io)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["flat_index", "value"])?;
    for (i, &v) in field.values().iter().enumerate() {
        csv.write_record([i.to_string(), fmt_f64(v)])?;
    }
    csv.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_field_csv(path: &Path) -> Result<NodalField> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |m: &str| CliError::Format(format!("{}: {m}", path.display()));
    let (mut dim, mut n, mut origin, mut edge) = (None, None, None, None);
    for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("malformed header"));
        match key {
            "dim" => dim = Some(rest.first().and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| bad("dim"))?),
            "n" => n = Some(rest.first().and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| bad("n"))?),
            "origin" => origin = Some(rest.iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?),
            "edge_length" => edge = Some(num(rest.first().copied().unwrap_or_default())?),
            _ => {}
        }
    }
    let (Some(dim), Some(n), Some(origin), Some(edge)) = (dim, n, origin, edge) else {
        return Err(bad("missing grid header"));
    };
    let spec = GridSpec::new(dim, n, origin, edge)?;
    let mut values = vec![f64::NAN; spec.len()];
    let mut seen = 0;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    for record in reader.records() {
        let record = record?;
        let i: usize = record.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("index"))?;
        let v: f64 = record.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("value"))?;
        *values.get_mut(i).ok_or_else(|| bad("index out of range"))? = v;
        seen += 1;
    }
    if seen != spec.len() {
        return Err(bad("wrong number of rows"));
    }
    Ok(NodalField::new(spec, values)?)
}
