//! CSV helpers. Numbers use Rust's shortest round-trip formatting, which is
//! locale independent; records end in `\n`.

use std::io::Write;

use csv::{Terminator, Writer, WriterBuilder};

use crate::CliError;

pub fn writer<W: Write>(out: W) -> Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(out)
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Writes a header and rows, then flushes.
pub fn write_table<W: Write>(out: W, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `location` on a line, `location_x,location_y` in the plane.
pub fn location_header(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["location".into()]
    } else {
        vec!["location_x".into(), "location_y".into()]
    }
}

pub fn location_cells(p: &basestation::Point<f64>) -> Vec<String> {
    p.coords().into_iter().map(num).collect()
}
