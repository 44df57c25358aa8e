//! Dataset CSV files, versioned JSON documents and plot-data exports.
//!
//! Floats in CSV output carry 17 significant digits so that a written dataset
//! reads back bit-identically.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::ChoiceRecord;
use crate::synthetic::ReplicationSummary;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const REQUIRED: [&str; 3] = ["chose_alt1", "dt", "dc"];
const OPTIONAL: [&str; 5] = ["dh", "dk", "income", "mean_trip_time", "group"];

/// Formats `x` with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Copy)]
enum Column {
    Chose,
    Dt,
    Dc,
    Dh,
    Dk,
    Income,
    TripTime,
    Group,
}

impl Column {
    fn from_name(name: &str) -> Option<Column> {
        Some(match name {
            "chose_alt1" => Column::Chose,
            "dt" => Column::Dt,
            "dc" => Column::Dc,
            "dh" => Column::Dh,
            "dk" => Column::Dk,
            "income" => Column::Income,
            "mean_trip_time" => Column::TripTime,
            "group" => Column::Group,
            _ => return None,
        })
    }
}

/// Reads a dataset from any CSV source with a header row.
pub fn read_dataset_from<R: Read>(reader: R) -> Result<Vec<ChoiceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut columns = Vec::with_capacity(headers.len());
    for (i, name) in headers.iter().enumerate() {
        let col = Column::from_name(name).ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        if headers.iter().take(i).any(|h| h == name) {
            return Err(Error::InvalidConfig(format!("duplicate column \"{name}\"")));
        }
        columns.push(col);
    }
    for name in REQUIRED {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::MissingColumn(name.to_string()));
        }
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let mut rec = ChoiceRecord::new(0.0, 0.0, false);
        for ((field, col), name) in row.iter().zip(&columns).zip(headers.iter()) {
            let err = |message: String| Error::Parse {
                row: row_no,
                column: name.to_string(),
                message,
            };
            let number = || -> Result<f64> {
                let v: f64 = field
                    .parse()
                    .map_err(|_| err(format!("cannot parse \"{field}\" as a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(format!("value {v} is not finite")))
                }
            };
            let optional = || -> Result<Option<f64>> {
                if field.is_empty() {
                    return Ok(None);
                }
                let v = number()?;
                if v > 0.0 {
                    Ok(Some(v))
                } else {
                    Err(err(format!("must be positive, got {v}")))
                }
            };
            match col {
                Column::Chose => {
                    rec.chose_alt1 = match field {
                        "1" => true,
                        "0" => false,
                        _ => return Err(err(format!("expected 0 or 1, got \"{field}\""))),
                    }
                }
                Column::Dt => rec.dt = number()?,
                Column::Dc => rec.dc = number()?,
                Column::Dh => rec.dh = number()?,
                Column::Dk => rec.dk = number()?,
                Column::Income => rec.income = optional()?,
                Column::TripTime => rec.mean_trip_time = optional()?,
                Column::Group => {
                    rec.group = field
                        .parse()
                        .map_err(|_| err(format!("expected a non-negative integer, got \"{field}\"")))?
                }
            }
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(records)
}

pub fn read_dataset(path: &Path) -> Result<Vec<ChoiceRecord>> {
    read_dataset_from(File::open(path)?)
}

/// Writes the required columns plus every optional column that some record uses.
pub fn write_dataset_to<W: Write>(writer: W, records: &[ChoiceRecord]) -> Result<()> {
    let uses = [
        records.iter().any(|r| r.dh != 0.0),
        records.iter().any(|r| r.dk != 0.0),
        records.iter().any(|r| r.income.is_some()),
        records.iter().any(|r| r.mean_trip_time.is_some()),
        records.iter().any(|r| r.group != 0),
    ];
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = REQUIRED.to_vec();
    header.extend(OPTIONAL.iter().zip(uses).filter(|(_, u)| *u).map(|(n, _)| *n));
    wtr.write_record(&header)?;

    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    for r in records {
        let mut row = vec![
            if r.chose_alt1 { "1" } else { "0" }.to_string(),
            format_float(r.dt),
            format_float(r.dc),
        ];
        let optional = [
            format_float(r.dh),
            format_float(r.dk),
            opt(r.income),
            opt(r.mean_trip_time),
            r.group.to_string(),
        ];
        row.extend(optional.into_iter().zip(uses).filter(|(_, u)| *u).map(|(v, _)| v));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, records: &[ChoiceRecord]) -> Result<()> {
    write_dataset_to(BufWriter::new(File::create(path)?), records)
}

/// A JSON document body with a `schema_version` field in front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Versioned {
            schema_version: SCHEMA_VERSION,
            body,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &Versioned::new(value))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a document written by [`write_json`], rejecting newer schema versions.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let doc: Versioned<T> = serde_json::from_reader(File::open(path)?)?;
    if doc.schema_version > SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!(
            "{} has schema version {}, this build reads up to {SCHEMA_VERSION}",
            path.display(),
            doc.schema_version
        )));
    }
    Ok(doc.body)
}

/// Inputs of a command, enough to run it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    /// Resolved configuration, including defaults and seeds.
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

/// `(dt_minutes, vtts_per_hour)` rows.
pub fn write_curve_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["dt_minutes", "vtts_per_hour"])?;
    for &(dt, v) in curve {
        wtr.write_record([format_float(dt), format_float(v)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// One row per (spec, parameter): mean, empirical SD and mean reported SE.
pub fn write_replication_csv(path: &Path, summaries: &[ReplicationSummary]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record([
        "spec",
        "parameter",
        "mean",
        "empirical_sd",
        "mean_std_error",
        "runs",
        "excluded",
    ])?;
    for s in summaries {
        for p in &s.parameters {
            wtr.write_record([
                s.spec.kind().name().to_string(),
                p.name.clone(),
                format_float(p.mean),
                format_float(p.empirical_sd),
                p.mean_std_error.map(format_float).unwrap_or_default(),
                s.runs.to_string(),
                s.excluded.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Line plot of one or more curves as a standalone SVG document.
pub fn curves_svg(title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

    let points = curves.iter().flat_map(|(_, c)| c.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x0 < x1) {
        (x0, x1) = (-1.0, 1.0);
    }
    if !(y0 < y1) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{M} {} V{} H{}" fill="none" stroke="black"/>"#,
        M,
        H - M,
        W - M
    );
    for (x, anchor, y) in [(x0, "start", H - M + 16.0), (x1, "end", H - M + 16.0)] {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{y}" text-anchor="{anchor}">{x}</text>"#, sx(x));
    }
    for v in [y0, y1] {
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, M - 4.0, sy(v) + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">dt (minutes)</text>"#, W / 2.0, H - 12.0);
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for &(x, y) in curve {
            if !(x.is_finite() && y.is_finite()) {
                pen_up = true;
                continue;
            }
            let _ = write!(d, "{}{:.2} {:.2} ", if pen_up { "M" } else { "L" }, sx(x), sy(y));
            pen_up = false;
        }
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - M - 100.0,
            M + 16.0 * i as f64,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
