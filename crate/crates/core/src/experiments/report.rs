//! Sweep records as CSV or JSON.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Method;

pub const CSV_HEADER: [&str; 9] = ["n", "rep", "method", "lambda", "source_err", "proj_err", "op_err", "r_err", "runtime_ms"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub n: usize,
    pub rep: usize,
    pub method: Method,
    pub lambda: f64,
    /// `‖ĥ − h₀‖₂`.
    pub source_err: f64,
    /// `‖T(ĥ − h₀)‖₂`.
    pub proj_err: f64,
    /// `‖T − T̂‖`.
    pub op_err: f64,
    /// `‖r̂ − r₀‖₂`.
    pub r_err: f64,
    pub runtime_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }
}

pub fn write_records<W: Write>(records: &[SweepRecord], format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER)?;
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, records)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_records<R: Read>(input: R, format: Format) -> Result<Vec<SweepRecord>> {
    match format {
        Format::Csv => {
            let mut r = csv::Reader::from_reader(input);
            let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
            if header != CSV_HEADER {
                return Err(Error::Csv(format!("unexpected header {header:?}")));
            }
            r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
        }
        Format::Json => Ok(serde_json::from_reader(input)?),
    }
}
