//! Dataset CSV files.
//!
//! Header row required, UTF-8, comma separated. `NULL` or an empty cell is a
//! missing value. `srch_id`, `prop_id` and `prop_country_id` are required;
//! labeled files also need `click_bool` and `booking_bool`. `position` is
//! optional (defaults to the row's place within its query). Other columns
//! outside the known set are ignored. `date_time` accepts unix seconds or
//! `YYYY-MM-DD HH:MM:SS` (UTC).

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use ltrkit_core::schema::{Column, Dataset, Schema, SearchImpression, N_COLUMNS};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] ltrkit_core::Error),
}

const DATE_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

struct Layout {
    srch_id: usize,
    prop_id: usize,
    country: usize,
    position: Option<usize>,
    flags: Option<(usize, usize)>,
    columns: [Option<usize>; N_COLUMNS],
}

impl Layout {
    fn from_header(header: &csv::StringRecord, labeled: bool) -> Result<Layout, DataError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let need = |name: &'static str| find(name).ok_or(DataError::MissingColumn(name));
        let flags = if labeled { Some((need("click_bool")?, need("booking_bool")?)) } else { None };
        let mut columns = [None; N_COLUMNS];
        for c in Column::ALL {
            columns[c.index()] = find(c.name());
        }
        Ok(Layout {
            srch_id: need("srch_id")?,
            prop_id: need("prop_id")?,
            country: need("prop_country_id")?,
            position: find("position"),
            flags,
            columns,
        })
    }

    fn schema(&self, labeled: bool) -> Schema {
        Schema { present: self.columns.map(|c| c.is_some()), labeled }
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NULL"
}

fn parse_int<T: std::str::FromStr>(cell: &str, name: &str, line: u64) -> Result<T, DataError> {
    cell.trim().parse().map_err(|_| DataError::Row { line, message: format!("{name}: expected an integer, got `{cell}`") })
}

fn parse_flag(cell: &str, name: &str, line: u64) -> Result<bool, DataError> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(DataError::Row { line, message: format!("{name}: expected 0 or 1, got `{other}`") }),
    }
}

fn parse_value(cell: &str, col: Column, line: u64) -> Result<Option<f64>, DataError> {
    let cell = cell.trim();
    if is_missing(cell) {
        return Ok(None);
    }
    if let Ok(v) = cell.parse::<f64>() {
        if !v.is_finite() {
            return Err(DataError::Row { line, message: format!("{}: non-finite value `{cell}`", col.name()) });
        }
        return Ok(Some(v));
    }
    if col == Column::DateTime {
        if let Ok(t) = NaiveDateTime::parse_from_str(cell, DATE_FORMAT) {
            return Ok(Some(t.and_utc().timestamp() as f64));
        }
    }
    Err(DataError::Row { line, message: format!("{}: cannot parse `{cell}`", col.name()) })
}

/// Reads a dataset from any CSV source.
pub fn read_csv<R: Read>(reader: R, labeled: bool) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let layout = Layout::from_header(rdr.headers()?, labeled)?;
    let mut rows = Vec::new();
    let mut within: std::collections::HashMap<u64, u32> = std::collections::HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i).unwrap_or("");
        let srch_id: u64 = parse_int(cell(layout.srch_id), "srch_id", line)?;
        let mut imp = SearchImpression::new(
            srch_id,
            parse_int(cell(layout.prop_id), "prop_id", line)?,
            parse_int(cell(layout.country), "prop_country_id", line)?,
        );
        let seen = within.entry(srch_id).or_insert(0);
        *seen += 1;
        imp.position = match layout.position.map(cell).filter(|c| !is_missing(c)) {
            Some(c) => parse_int(c, "position", line)?,
            None => *seen,
        };
        for c in Column::ALL {
            if let Some(i) = layout.columns[c.index()] {
                imp.set(c, parse_value(cell(i), c, line)?);
            }
        }
        if let Some((ci, bi)) = layout.flags {
            imp.click = parse_flag(cell(ci), "click_bool", line)?;
            imp.booking = parse_flag(cell(bi), "booking_bool", line)?;
        }
        imp.check_ranges().map_err(|message| DataError::Row { line, message })?;
        rows.push(imp);
    }
    Ok(Dataset::from_rows(rows, layout.schema(labeled))?)
}

pub fn load_csv(path: &Path, labeled: bool) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    read_csv(io::BufReader::new(file), labeled)
}

/// Writes `ds` sorted by srch_id (rows keep their order within a query).
/// Labels are written only when the dataset carries them.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let columns: Vec<Column> = ds.schema().columns().collect();
    let mut header = vec!["srch_id", "prop_id", "prop_country_id", "position"];
    if ds.is_labeled() {
        header.extend(["click_bool", "booking_bool"]);
    }
    header.extend(columns.iter().map(|c| c.name()));
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for r in ds.export_order() {
        record.clear();
        record.extend([r.srch_id.to_string(), r.prop_id.to_string(), r.prop_country_id.to_string(), r.position.to_string()]);
        if ds.is_labeled() {
            record.push(u8::from(r.click).to_string());
            record.push(u8::from(r.booking).to_string());
        }
        for &c in &columns {
            record.push(r.get(c).map_or_else(|| "NULL".to_string(), |v| v.to_string()));
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|source| DataError::Io { path: "<csv output>".into(), source })?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    write_csv(ds, BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ltrkit_core::schema::{generate_synthetic, Grade, SyntheticConfig};

    fn load(text: &str, labeled: bool) -> Result<Dataset, DataError> {
        read_csv(text.as_bytes(), labeled)
    }

    #[test]
    fn groups_follow_srch_id() {
        let ds = load("srch_id,prop_id,prop_country_id,click_bool,booking_bool\n1,10,5,0,0\n1,11,5,1,0\n2,12,6,0,0\n", true).unwrap();
        let sizes: Vec<usize> = ds.groups().iter().map(|g| g.len()).collect();
        assert_eq!(sizes, vec![2, 1]);
        assert_eq!(ds.groups()[0].impressions()[1].position, 2);
    }

    #[test]
    fn null_means_missing_and_booking_repairs_click() {
        let ds = load("srch_id,prop_id,prop_country_id,click_bool,booking_bool,price_usd,extra\n1,10,5,0,1,NULL,zzz\n1,11,5,0,0,,1\n", true).unwrap();
        let r = &ds.groups()[0].impressions()[0];
        assert_eq!(r.get(Column::PriceUsd), None);
        assert!(r.click && r.booking);
        assert_eq!(r.grade(), Grade::Booked);
        assert!(ds.schema().has(Column::PriceUsd));
        assert!(!ds.schema().has(Column::PropStarrating));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = load("srch_id,prop_id,prop_country_id,click_bool,booking_bool\n1,10,5,0,0\n1,x,5,0,0\n", true).unwrap_err();
        assert!(matches!(err, DataError::Row { line: 3, .. }), "{err}");
        let err = load("srch_id,prop_id,prop_country_id,price_usd\n1,10,5,-3\n", false).unwrap_err();
        assert!(matches!(err, DataError::Row { line: 2, .. }));
        assert!(matches!(load("srch_id,prop_id\n1,2\n", false), Err(DataError::MissingColumn("prop_country_id"))));
        assert!(matches!(load("srch_id,prop_id,prop_country_id\n1,2,3\n", true), Err(DataError::MissingColumn("click_bool"))));
    }

    #[test]
    fn dates_parse_in_both_forms() {
        let ds = load("srch_id,prop_id,prop_country_id,date_time\n1,10,5,2013-04-04 08:32:15\n1,11,5,1365064335\n", false).unwrap();
        let t: Vec<f64> = ds.rows().map(|r| r.get(Column::DateTime).unwrap()).collect();
        assert_eq!(t, vec![1_365_064_335.0, 1_365_064_335.0]);
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = generate_synthetic(&SyntheticConfig::new(40, 6, 3, 2)).unwrap();
        let mut first = Vec::new();
        write_csv(&ds, &mut first).unwrap();
        let back = read_csv(first.as_slice(), true).unwrap();
        assert_eq!(back, ds);
        let mut second = Vec::new();
        write_csv(&back, &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn export_sorts_by_srch_id() {
        let ds = load("srch_id,prop_id,prop_country_id\n7,1,1\n3,2,1\n7,3,1\n", false).unwrap();
        let mut out = Vec::new();
        write_csv(&ds, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(ids, vec!["2", "1", "3"]);
    }
}
