//! Dataset and feature CSV files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back yields bit-identical records.

use std::path::Path;

use delaycast_core::formulation::{Airport, AirportRecord, N_TMI, N_WX};
use delaycast_core::wx::FEATURES;

use crate::error::{CliError, Result};
use crate::fsutil;

/// Column names of `dataset.csv`, in order.
pub fn header() -> Vec<String> {
    let mut h: Vec<String> = [
        "airport",
        "t",
        "arrivals",
        "departures",
        "arr_delay",
        "dep_delay",
        "arr_otp",
        "dep_otp",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..N_WX).map(|i| format!("f{i}")));
    h.extend(["arr_demand", "dep_demand", "aar", "adr", "aar_eff"].map(String::from));
    h.extend((0..N_TMI).map(|i| format!("tmi{i}")));
    h.extend(["hour", "qod", "month", "dep_delay_ma", "arr_delay_ma"].map(String::from));
    h
}

fn record_fields(r: &AirportRecord) -> Vec<String> {
    let mut f = vec![r.airport.code().to_string(), r.t.to_string()];
    f.extend([r.arrivals, r.departures, r.arr_delay, r.dep_delay, r.arr_otp, r.dep_otp].map(|v| v.to_string()));
    f.extend(r.wx.iter().map(f64::to_string));
    f.extend([r.arr_demand, r.dep_demand, r.aar, r.adr, r.aar_eff].map(|v| v.to_string()));
    f.extend(r.tmi.iter().map(u8::to_string));
    f.extend([r.hour, r.qod, r.month].map(|v| v.to_string()));
    f.extend([r.dep_delay_ma, r.arr_delay_ma].map(|v| v.to_string()));
    f
}

/// Serializes records as `dataset.csv` bytes.
pub fn to_csv(records: &[AirportRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header())?;
    for r in records {
        w.write_record(record_fields(r))?;
    }
    w.into_inner().map_err(|e| CliError::Data(format!("csv: {e}")))
}

pub fn write(path: &Path, records: &[AirportRecord]) -> Result<()> {
    fsutil::write(path, &to_csv(records)?)
}

struct Fields<'a> {
    rec: &'a csv::StringRecord,
    line: u64,
    next: usize,
}

impl Fields<'_> {
    fn raw(&mut self) -> Result<&str> {
        let i = self.next;
        self.next += 1;
        match self.rec.get(i) {
            Some(s) if !s.trim().is_empty() => Ok(s.trim()),
            _ => Err(CliError::Data(format!(
                "line {}: missing value in column {}",
                self.line,
                header()[i]
            ))),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let col = self.next;
        let line = self.line;
        let s = self.raw()?;
        s.parse()
            .map_err(|_| CliError::Data(format!("line {line}: bad value {s:?} in column {}", header()[col])))
    }

    fn real(&mut self) -> Result<f64> {
        let v: f64 = self.parse()?;
        if !v.is_finite() {
            return Err(CliError::Data(format!("line {}: non-finite value", self.line)));
        }
        Ok(v)
    }
}

fn parse_record(rec: &csv::StringRecord, line: u64) -> Result<AirportRecord> {
    let mut f = Fields { rec, line, next: 0 };
    let code = f.raw()?.to_string();
    let airport =
        Airport::from_code(&code).ok_or_else(|| CliError::Data(format!("line {line}: unknown airport {code:?}")))?;
    let t = f.parse()?;
    let (arrivals, departures, arr_delay, dep_delay, arr_otp, dep_otp) =
        (f.real()?, f.real()?, f.real()?, f.real()?, f.real()?, f.real()?);
    let mut wx = [0.0; N_WX];
    for v in &mut wx {
        *v = f.real()?;
    }
    let (arr_demand, dep_demand, aar, adr, aar_eff) = (f.real()?, f.real()?, f.real()?, f.real()?, f.real()?);
    let mut tmi = [0u8; N_TMI];
    for v in &mut tmi {
        *v = f.parse()?;
    }
    let r = AirportRecord {
        airport,
        t,
        arrivals,
        departures,
        arr_delay,
        dep_delay,
        arr_otp,
        dep_otp,
        wx,
        arr_demand,
        dep_demand,
        aar,
        adr,
        aar_eff,
        tmi,
        hour: f.parse()?,
        qod: f.parse()?,
        month: f.parse()?,
        dep_delay_ma: f.real()?,
        arr_delay_ma: f.real()?,
    };
    r.validate().map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
    Ok(r)
}

/// Parses `dataset.csv` bytes. The header must match [`header`] exactly.
pub fn from_csv(bytes: &[u8]) -> Result<Vec<AirportRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let got: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if got != header() {
        return Err(CliError::Data(
            "dataset header does not match the expected columns".into(),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != got.len() {
            return Err(CliError::Data(format!(
                "line {}: expected {} columns",
                i + 2,
                got.len()
            )));
        }
        out.push(parse_record(&rec, i as u64 + 2)?);
    }
    if out.is_empty() {
        return Err(CliError::Data("dataset has no rows".into()));
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<AirportRecord>> {
    from_csv(&fsutil::read(path)?).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// `features.csv`: `timestamp,f0..f15`.
pub fn write_features(path: &Path, rows: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut h = vec!["timestamp".to_string()];
    h.extend((0..FEATURES).map(|i| format!("f{i}")));
    w.write_record(&h)?;
    for (t, f) in rows {
        if f.len() != FEATURES {
            return Err(CliError::Data(format!("timestamp {t}: expected {FEATURES} features")));
        }
        let mut rec = vec![t.to_string()];
        rec.extend(f.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(format!("csv: {e}")))?;
    fsutil::write(path, &bytes)
}

pub fn read_features(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let bytes = fsutil::read(path)?;
    let mut rd = csv::Reader::from_reader(bytes.as_slice());
    if rd.headers()?.len() != FEATURES + 1 {
        return Err(CliError::Data(format!(
            "{}: expected timestamp and {FEATURES} features",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Data(format!("bad feature {s:?}")))
        };
        let t = rec[0]
            .trim()
            .parse()
            .map_err(|_| CliError::Data(format!("bad timestamp {:?}", &rec[0])))?;
        let f = rec.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
        out.push((t, f));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_has_49_columns() {
        let h = header();
        assert_eq!(h.len(), 49);
        assert_eq!(h[8], "f0");
        assert_eq!(h[29], "tmi0");
        assert_eq!(h.last().unwrap(), "arr_delay_ma");
    }

    #[test]
    fn rejects_bad_header() {
        assert!(matches!(from_csv(b"a,b\n1,2\n"), Err(CliError::Data(_))));
    }
}
