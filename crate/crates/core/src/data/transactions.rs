//! Transaction file reading and writing.
//!
//! Format: UTF-8, comma-delimited with a header row, standard CSV quoting.
//! Lines starting with `#` are comments. Required columns, in any order:
//!
//! | column | content |
//! |---|---|
//! | `order_id` | opaque string |
//! | `timestamp` | ISO-8601 local time `YYYY-MM-DDTHH:MM:SS` (an RFC 3339 offset is accepted and ignored) |
//! | `store_id` | store identifier |
//! | `region` | region code; alternatively `latitude` and `longitude`, which map to a 1° grid cell |
//! | `weather` | weather description |
//! | `temperature_c` or `temperature_f` | temperature; the header declares the unit |
//! | `items` | item names in add-to-cart order, separated by `|` |

use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};

use super::context::RawContext;
use crate::error::{Error, Result};

pub const ITEM_SEPARATOR: char = '|';
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub struct TransactionRecord {
    pub order_id: String,
    pub context: RawContext,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<TransactionRecord>,
    pub skipped: Vec<SkippedRow>,
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| DateTime::parse_from_rfc3339(s).map(|dt| dt.naive_local()))
        .map_err(|_| Error::format(format!("unparsable timestamp '{s}'")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

#[derive(Debug, Clone, Copy)]
enum Temperature {
    Celsius(usize),
    Fahrenheit(usize),
}

#[derive(Debug, Clone, Copy)]
enum Region {
    Code(usize),
    LatLon(usize, usize),
}

struct Columns {
    order_id: usize,
    timestamp: usize,
    store: usize,
    region: Region,
    weather: usize,
    temperature: Temperature,
    items: usize,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &str| find(name).ok_or_else(|| Error::format(format!("missing mandatory column '{name}'")));
        let temperature = match (find("temperature_c"), find("temperature_f")) {
            (Some(c), _) => Temperature::Celsius(c),
            (None, Some(f)) => Temperature::Fahrenheit(f),
            (None, None) => return Err(Error::format("missing mandatory column 'temperature_c' or 'temperature_f'")),
        };
        let region = match (find("region"), find("latitude"), find("longitude")) {
            (Some(r), _, _) => Region::Code(r),
            (None, Some(lat), Some(lon)) => Region::LatLon(lat, lon),
            _ => return Err(Error::format("missing mandatory column 'region' (or 'latitude' and 'longitude')")),
        };
        Ok(Columns {
            order_id: need("order_id")?,
            timestamp: need("timestamp")?,
            store: need("store_id")?,
            region,
            weather: need("weather")?,
            temperature,
            items: need("items")?,
        })
    }

    fn record(&self, row: &csv::StringRecord) -> Result<TransactionRecord> {
        let field = |i: usize| row.get(i).map(str::trim).ok_or_else(|| Error::format("missing field"));
        let number = |i: usize| -> Result<f64> {
            let s = field(i)?;
            let v: f64 = s.parse().map_err(|_| Error::format(format!("bad number '{s}'")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::format(format!("non-finite number '{s}'")))
            }
        };
        let temperature_c = match self.temperature {
            Temperature::Celsius(i) => number(i)?,
            Temperature::Fahrenheit(i) => (number(i)? - 32.0) * 5.0 / 9.0,
        };
        let region = match self.region {
            Region::Code(i) => field(i)?.to_string(),
            Region::LatLon(lat, lon) => format!("{:.0}_{:.0}", number(lat)?.floor(), number(lon)?.floor()),
        };
        let items: Vec<String> = field(self.items)?
            .split(ITEM_SEPARATOR)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if items.is_empty() {
            return Err(Error::format("order has no items"));
        }
        Ok(TransactionRecord {
            order_id: field(self.order_id)?.to_string(),
            context: RawContext {
                timestamp: parse_timestamp(field(self.timestamp)?)?,
                temperature_c,
                weather: field(self.weather)?.to_string(),
                store: field(self.store)?.to_string(),
                region,
            },
            items,
        })
    }
}

/// Reads a transaction file. Malformed rows are skipped and reported with
/// their line number; a missing mandatory column is fatal.
pub fn parse_transactions<R: Read>(input: R) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::format(format!("unreadable header: {e}")))?
        .clone();
    let columns = Columns::from_header(&header)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in reader.records() {
        match row {
            Ok(row) => {
                let line = row.position().map(|p| p.line()).unwrap_or(0);
                if row.len() != header.len() {
                    skipped.push(SkippedRow {
                        line,
                        reason: format!("expected {} fields, found {}", header.len(), row.len()),
                    });
                    continue;
                }
                match columns.record(&row) {
                    Ok(r) => records.push(r),
                    Err(e) => skipped.push(SkippedRow {
                        line,
                        reason: e.to_string(),
                    }),
                }
            }
            Err(e) => skipped.push(SkippedRow {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                reason: e.to_string(),
            }),
        }
    }
    Ok(ParseOutcome { records, skipped })
}

/// Writes records in the canonical column order, preceded by `#` comment lines.
pub fn write_transactions<W: Write>(out: W, records: &[TransactionRecord], comments: &[String]) -> Result<()> {
    let mut out = out;
    let io = |e: std::io::Error| Error::format(format!("write failed: {e}"));
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}").map_err(io)?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::format(format!("write failed: {e}"));
    w.write_record(["order_id", "timestamp", "store_id", "region", "weather", "temperature_c", "items"])
        .map_err(csv_err)?;
    for r in records {
        let items = r.items.join(&ITEM_SEPARATOR.to_string());
        w.write_record([
            r.order_id.as_str(),
            &format_timestamp(&r.context.timestamp),
            &r.context.store,
            &r.context.region,
            &r.context.weather,
            &format!("{}", r.context.temperature_c),
            &items,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Splits records into those strictly before `cutoff` and the rest.
pub fn split_by_time(
    records: Vec<TransactionRecord>,
    cutoff: &NaiveDateTime,
) -> (Vec<TransactionRecord>, Vec<TransactionRecord>) {
    records.into_iter().partition(|r| r.context.timestamp < *cutoff)
}
