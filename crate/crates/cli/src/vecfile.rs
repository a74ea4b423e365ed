//! Vector files: one decimal per line, or raw little-endian binary32 when
//! the name ends in `.f32`.

use std::fs;
use std::path::Path;

use natcomp::{DenseVector, Error, Result};

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "f32")
}

pub fn load(path: &Path) -> Result<DenseVector> {
    if is_binary(path) {
        let bytes = fs::read(path)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::InvalidInput(format!(
                "{}: length {} is not a multiple of 4",
                path.display(),
                bytes.len()
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "{}: element {i} is not finite",
                path.display()
            )));
        }
        return DenseVector::new(values);
    }
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f32 = line.parse().map_err(|_| {
            Error::InvalidInput(format!("{}:{}: not a number: {line:?}", path.display(), n + 1))
        })?;
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{}:{}: value {line:?} is not finite",
                path.display(),
                n + 1
            )));
        }
        values.push(v);
    }
    DenseVector::new(values)
}

/// Text output prints the shortest decimal that parses back to the same binary32.
pub fn save(path: &Path, x: &DenseVector) -> Result<()> {
    if is_binary(path) {
        let bytes: Vec<u8> = x.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes)?;
    } else {
        let mut s = String::with_capacity(x.len() * 12);
        for v in x.as_slice() {
            s.push_str(&format!("{v}\n"));
        }
        fs::write(path, s)?;
    }
    Ok(())
}
