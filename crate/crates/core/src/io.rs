//! On-disk formats: measure CSV rows, the little-endian binary checkpoint
//! stream and its JSON-lines index, and JSON-lines record writing.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{moment, GridMeasure, MeasureKind};

/// 16-byte file magic of binary checkpoint streams.
pub const CHECKPOINT_MAGIC: &[u8; 16] = b"CGEDG-CKPT-v001\0";

/// Write `mass,weight` rows (with header) for every grid point.
pub fn write_measure_csv<W: Write>(out: W, mu: &GridMeasure) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["mass", "weight"])?;
    for (k, weight) in mu.weights().iter().enumerate() {
        w.write_record([format_f64(mu.mass(k)), format_f64(*weight)])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `mass,weight` rows back; masses must lie on a uniform grid from 0.
pub fn read_measure_csv<R: Read>(input: R) -> Result<GridMeasure> {
    let mut r = csv::Reader::from_reader(input);
    let mut masses = Vec::new();
    let mut weights = Vec::new();
    for row in r.records() {
        let row = row?;
        let parse = |i: usize| -> Result<f64> {
            row.get(i)
                .ok_or_else(|| Error::Format("short CSV row".into()))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(e.to_string()))
        };
        masses.push(parse(0)?);
        weights.push(parse(1)?);
    }
    if masses.len() < 2 {
        return Err(Error::Format("need at least two grid rows".into()));
    }
    let eps = masses[1] - masses[0];
    for (k, m) in masses.iter().enumerate() {
        if (m - k as f64 * eps).abs() > 1e-9 * (1.0 + m.abs()) {
            return Err(Error::Format(format!("mass {m} off the uniform grid")));
        }
    }
    GridMeasure::new(eps, weights, MeasureKind::Density)
}

/// Shortest round-trip representation.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Append one measure record: `eps: f64`, `N: u64`, then `N + 1` weights, all little-endian.
pub fn write_measure_binary<W: Write>(out: &mut W, mu: &GridMeasure) -> Result<u64> {
    out.write_all(&mu.eps().to_le_bytes())?;
    out.write_all(&(mu.top_class() as u64).to_le_bytes())?;
    for w in mu.weights() {
        out.write_all(&w.to_le_bytes())?;
    }
    Ok(16 + 8 * mu.weights().len() as u64)
}

pub fn read_measure_binary<R: Read>(input: &mut R) -> Result<GridMeasure> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    let eps = f64::from_le_bytes(buf);
    input.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf);
    if n > (1 << 32) {
        return Err(Error::Format(format!("implausible grid size {n}")));
    }
    let mut weights = Vec::with_capacity(n as usize + 1);
    for _ in 0..=n {
        input.read_exact(&mut buf)?;
        weights.push(f64::from_le_bytes(buf));
    }
    GridMeasure::new(eps, weights, MeasureKind::Density)
}

pub fn read_magic<R: Read>(input: &mut R) -> Result<()> {
    let mut magic = [0u8; 16];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    Ok(())
}

/// Index line for one snapshot in a checkpoint stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub replica: u64,
    pub t: f64,
    pub file_offset: u64,
    pub moments: [f64; 3],
}

/// Writes snapshots into `<stem>.bin` and their index into `<stem>.jsonl`.
pub struct CheckpointWriter {
    data: BufWriter<File>,
    index: BufWriter<File>,
    offset: u64,
}

impl CheckpointWriter {
    pub fn create(dir: &Path, stem: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut data = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
        data.write_all(CHECKPOINT_MAGIC)?;
        let index = BufWriter::new(File::create(dir.join(format!("{stem}.jsonl")))?);
        Ok(CheckpointWriter {
            data,
            index,
            offset: CHECKPOINT_MAGIC.len() as u64,
        })
    }

    pub fn append(&mut self, replica: u64, t: f64, mu: &GridMeasure) -> Result<()> {
        let entry = CheckpointIndex {
            replica,
            t,
            file_offset: self.offset,
            moments: [moment(mu, |_| 1.0), moment(mu, |x| x), moment(mu, |x| x * x)],
        };
        self.offset += write_measure_binary(&mut self.data, mu)?;
        write_json_line(&mut self.index, &entry)
    }

    pub fn finish(mut self) -> Result<()> {
        self.data.flush()?;
        self.index.flush()?;
        Ok(())
    }
}

pub fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}
