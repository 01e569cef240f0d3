use std::path::Path;

use willmore_core::grid::NodalField;
use willmore_core::grid::io::{read_field, write_field};

use crate::error::{CliError, Result};
use crate::output::{read_field_csv, write_field_csv, write_pgm};

fn extension(path: &Path) -> Result<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .ok_or_else(|| CliError::Config(format!("{} has no file extension", path.display())))
}

/// Converts between binary fields (`.wfld`), field CSV (`.csv`) and, as
/// output only, grayscale images (`.pgm`).
pub fn cmd_export(input: &Path, output: &Path, slice_axis: usize) -> Result<NodalField> {
    let field = match extension(input)?.as_str() {
        "wfld" => read_field(input).map_err(|e| match e {
            willmore_core::Error::Io(source) => CliError::io(input, source),
            e => e.into(),
        })?,
        "csv" => read_field_csv(input)?,
        other => return Err(CliError::Config(format!("cannot read .{other} files"))),
    };
    match extension(output)?.as_str() {
        "wfld" => write_field(&field, output).map_err(|e| match e {
            willmore_core::Error::Io(source) => CliError::io(output, source),
            e => e.into(),
        })?,
        "csv" => write_field_csv(&field, output)?,
        "pgm" => write_pgm(&field, slice_axis, output)?,
        other => return Err(CliError::Config(format!("cannot write .{other} files"))),
    }
    Ok(field)
}
