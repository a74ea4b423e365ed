//! Row emitters shared by every subcommand.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;

use natcomp::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    JsonLines,
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Writes `rows` to `out` (stdout when `None`).
pub fn emit<T: Serialize>(rows: &[T], format: Format, out: Option<&Path>) -> Result<()> {
    let mut w = sink(out)?;
    match format {
        Format::Csv => {
            let mut c = csv::Writer::from_writer(&mut w);
            for r in rows {
                c.serialize(r).map_err(|e| io::Error::other(e.to_string()))?;
            }
            c.flush()?;
        }
        Format::JsonLines => {
            for r in rows {
                serde_json::to_writer(&mut w, r).map_err(io::Error::other)?;
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
