//! Text serialization for tensor trains and MPOs, and the CSV dialect used
//! by all exported artifacts.
//!
//! Floats are printed with 17 significant digits, which round-trips every
//! finite `f64` bit-faithfully.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tt::{Core3, Core4, MatrixProductOperator, TensorTrain};

/// Format a float with 17 significant digits (bit-faithful round trip).
pub fn fmt_g17(v: f64) -> String {
    format!("{v:.16e}")
}

// ---- TTv1 / MPOv1 ----------------------------------------------------

/// Write a tensor train in the `TTv1` text format: the tag line, the
/// number of dimensions, then per core a `r_prev n r_next` header followed
/// by the entries with the left rank slowest and the right rank fastest.
pub fn write_tt(w: &mut impl Write, tt: &TensorTrain) -> Result<()> {
    writeln!(w, "TTv1")?;
    writeln!(w, "{}", tt.num_dims())?;
    for core in &tt.cores {
        writeln!(w, "{} {} {}", core.r_left, core.n, core.r_right)?;
        for chunk in core.data.chunks(core.r_right.max(1)) {
            let line: Vec<String> = chunk.iter().map(|&v| fmt_g17(v)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
    }
    Ok(())
}

/// Write an MPO in the `MPOv1` text format (header `r_prev m n r_next`).
pub fn write_mpo(w: &mut impl Write, mpo: &MatrixProductOperator) -> Result<()> {
    writeln!(w, "MPOv1")?;
    writeln!(w, "{}", mpo.num_dims())?;
    for core in &mpo.cores {
        writeln!(
            w,
            "{} {} {} {}",
            core.r_left, core.m, core.n, core.r_right
        )?;
        for chunk in core.data.chunks(core.r_right.max(1)) {
            let line: Vec<String> = chunk.iter().map(|&v| fmt_g17(v)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
    }
    Ok(())
}

/// Whitespace token stream over a reader.
struct Tokens {
    items: Vec<String>,
    pos: usize,
}

impl Tokens {
    fn from_reader(r: impl Read) -> Result<Self> {
        let mut buf = String::new();
        BufReader::new(r).read_to_string(&mut buf)?;
        Ok(Tokens {
            items: buf.split_whitespace().map(|s| s.to_string()).collect(),
            pos: 0,
        })
    }

    fn next(&mut self) -> Result<&str> {
        let t = self
            .items
            .get(self.pos)
            .ok_or_else(|| Error::Parse("unexpected end of input".into()))?;
        self.pos += 1;
        Ok(t)
    }

    fn next_usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| Error::Parse(format!("expected integer, got '{t}'")))
    }

    fn next_f64(&mut self) -> Result<f64> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| Error::Parse(format!("expected float, got '{t}'")))
    }
}

/// Read a `TTv1` stream written by [`write_tt`].
pub fn read_tt(r: impl Read) -> Result<TensorTrain> {
    let mut tok = Tokens::from_reader(r)?;
    let tag = tok.next()?;
    if tag != "TTv1" {
        return Err(Error::Parse(format!("expected TTv1 tag, got '{tag}'")));
    }
    let d = tok.next_usize()?;
    if d == 0 {
        return Err(Error::Parse("TTv1: zero dimensions".into()));
    }
    let mut cores = Vec::with_capacity(d);
    for _ in 0..d {
        let r_left = tok.next_usize()?;
        let n = tok.next_usize()?;
        let r_right = tok.next_usize()?;
        let len = r_left
            .checked_mul(n)
            .and_then(|v| v.checked_mul(r_right))
            .ok_or_else(|| Error::Parse("TTv1: core size overflow".into()))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(tok.next_f64()?);
        }
        cores.push(Core3 {
            r_left,
            n,
            r_right,
            data,
        });
    }
    TensorTrain::new(cores)
}

/// Read an `MPOv1` stream written by [`write_mpo`].
pub fn read_mpo(r: impl Read) -> Result<MatrixProductOperator> {
    let mut tok = Tokens::from_reader(r)?;
    let tag = tok.next()?;
    if tag != "MPOv1" {
        return Err(Error::Parse(format!("expected MPOv1 tag, got '{tag}'")));
    }
    let d = tok.next_usize()?;
    if d == 0 {
        return Err(Error::Parse("MPOv1: zero dimensions".into()));
    }
    let mut cores = Vec::with_capacity(d);
    for _ in 0..d {
        let r_left = tok.next_usize()?;
        let m = tok.next_usize()?;
        let n = tok.next_usize()?;
        let r_right = tok.next_usize()?;
        let len = r_left
            .checked_mul(m)
            .and_then(|v| v.checked_mul(n))
            .and_then(|v| v.checked_mul(r_right))
            .ok_or_else(|| Error::Parse("MPOv1: core size overflow".into()))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(tok.next_f64()?);
        }
        cores.push(Core4 {
            r_left,
            m,
            n,
            r_right,
            data,
        });
    }
    MatrixProductOperator::new(cores)
}

pub fn save_tt(path: impl AsRef<Path>, tt: &TensorTrain) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tt(&mut w, tt)?;
    w.flush()?;
    Ok(())
}

pub fn load_tt(path: impl AsRef<Path>) -> Result<TensorTrain> {
    read_tt(File::open(path)?)
}

pub fn save_mpo(path: impl AsRef<Path>, mpo: &MatrixProductOperator) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mpo(&mut w, mpo)?;
    w.flush()?;
    Ok(())
}

pub fn load_mpo(path: impl AsRef<Path>) -> Result<MatrixProductOperator> {
    read_mpo(File::open(path)?)
}

// ---- CSV -------------------------------------------------------------

/// A CSV cell: either verbatim text or a float rendered with 17
/// significant digits.
#[derive(Debug, Clone)]
pub enum CsvCell {
    Text(String),
    Float(f64),
    Int(i64),
}

impl From<f64> for CsvCell {
    fn from(v: f64) -> Self {
        CsvCell::Float(v)
    }
}

impl From<usize> for CsvCell {
    fn from(v: usize) -> Self {
        CsvCell::Int(v as i64)
    }
}

impl From<&str> for CsvCell {
    fn from(v: &str) -> Self {
        CsvCell::Text(v.to_string())
    }
}

impl From<String> for CsvCell {
    fn from(v: String) -> Self {
        CsvCell::Text(v)
    }
}

impl CsvCell {
    fn render(&self) -> String {
        match self {
            CsvCell::Text(s) => s.clone(),
            CsvCell::Float(v) => fmt_g17(*v),
            CsvCell::Int(v) => v.to_string(),
        }
    }
}

/// Write a CSV file with a header row; floats use 17 significant digits.
pub fn write_csv(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<CsvCell>>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "csv row has {} cells for {} columns",
                row.len(),
                header.len()
            )));
        }
        let line: Vec<String> = row.iter().map(|c| c.render()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
