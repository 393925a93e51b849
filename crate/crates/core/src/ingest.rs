//! CSV ingestion: parse raw event exports, validate and clean records, and
//! apply the geographic bounding-box filter.
//!
//! Parsing is streaming so multi-million-row exports never need to fit in
//! memory: `RecordParser` pulls rows, `Cleaner` validates them one at a
//! time, and `RecordsWriter` appends the survivors to the columnar
//! intermediate file.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Seek, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifact::{header_strings, header_usize, ArtifactReader, ArtifactWriter};
use crate::error::{Error, Result};
use crate::geo::{BoundingBox, GeoPoint};

/// Maps logical fields to CSV header names, plus the timestamp formats
/// tried in order when extracting hour and month.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub date: String,
    pub primary_type: String,
    pub description: String,
    pub latitude: String,
    pub longitude: String,
    pub arrest: String,
    pub beat: String,
    pub district: String,
    pub ward: String,
    pub fbi_code: String,
    pub timestamp_formats: Vec<String>,
}

impl Default for CsvSchema {
    /// Column names of the Chicago open-data portal export.
    fn default() -> Self {
        CsvSchema {
            date: "Date".into(),
            primary_type: "Primary Type".into(),
            description: "Description".into(),
            latitude: "Latitude".into(),
            longitude: "Longitude".into(),
            arrest: "Arrest".into(),
            beat: "Beat".into(),
            district: "District".into(),
            ward: "Ward".into(),
            fbi_code: "FBI Code".into(),
            timestamp_formats: vec!["%m/%d/%Y %I:%M:%S %p".into(), "%m/%d/%Y %H:%M:%S".into()],
        }
    }
}

/// One CSV row with minimal coercion: strings are kept verbatim, numeric
/// and boolean fields parse leniently to `None` when empty or unreadable.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub date_text: String,
    pub primary_type: String,
    pub description: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub arrest: Option<bool>,
    pub beat: Option<String>,
    pub district: Option<String>,
    pub ward: Option<String>,
    pub fbi_code: Option<String>,
}

/// A validated event: finite in-range coordinates, interned type id, and
/// hour/month extracted from the timestamp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CleanRecord {
    pub lat: f64,
    pub lon: f64,
    pub type_id: u16,
    pub hour: u8,
    pub month: u8,
}

impl CleanRecord {
    pub fn point(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

/// Interner for raw primary-type strings; ids are assigned in first-seen
/// order so identical inputs always produce identical tables.
#[derive(Clone, Debug, Default)]
pub struct TypeTable {
    names: Vec<String>,
    index: HashMap<String, u16>,
}

impl TypeTable {
    pub fn intern(&mut self, name: &str) -> u16 {
        self.try_intern(name).expect("type table full")
    }

    /// `None` once 65,536 distinct names exist; ids must fit in u16.
    pub fn try_intern(&mut self, name: &str) -> Option<u16> {
        if let Some(&id) = self.index.get(name) {
            return Some(id);
        }
        if self.names.len() > u16::MAX as usize {
            return None;
        }
        let id = self.names.len() as u16;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Some(id)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn from_names(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, n)| (n, i as u16))
            .collect();
        TypeTable { names, index }
    }
}

/// Row accounting for one ingest run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_rows: u64,
    pub rows_after_null_removal: u64,
    pub rows_after_bbox: u64,
    pub reject_reasons: BTreeMap<String, u64>,
}

impl IngestReport {
    fn bump(&mut self, reason: &str) {
        *self.reject_reasons.entry(reason.to_string()).or_insert(0) += 1;
    }

    /// Combine reports from independently processed input shards.
    pub fn merge(&mut self, other: &IngestReport) {
        self.total_rows += other.total_rows;
        self.rows_after_null_removal += other.rows_after_null_removal;
        self.rows_after_bbox += other.rows_after_bbox;
        for (reason, count) in &other.reject_reasons {
            *self.reject_reasons.entry(reason.clone()).or_insert(0) += count;
        }
    }
}

const REASON_MALFORMED: &str = "malformed_row";
const REASON_MISSING_COORDS: &str = "missing_coords";
const REASON_IMPLAUSIBLE_COORDS: &str = "implausible_coords";
const REASON_MISSING_TYPE: &str = "missing_type";
const REASON_BAD_TIMESTAMP: &str = "bad_timestamp";
const REASON_TYPE_TABLE_FULL: &str = "type_table_full";
const REASON_OUTSIDE_BBOX: &str = "outside_bbox";

/// Streaming CSV parser. Malformed rows are counted and skipped; only IO
/// failures and a header that does not match the schema are fatal.
pub struct RecordParser<R: Read> {
    reader: csv::Reader<R>,
    columns: Columns,
    record: csv::StringRecord,
    parse_errors: u64,
}

struct Columns {
    date: usize,
    primary_type: usize,
    description: usize,
    latitude: usize,
    longitude: usize,
    arrest: usize,
    beat: usize,
    district: usize,
    ward: usize,
    fbi_code: usize,
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("missing column {name:?} in CSV header")))
}

fn parse_opt_f64(field: &str) -> Option<f64> {
    let t = field.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok()
}

fn parse_opt_bool(field: &str) -> Option<bool> {
    match field.trim().to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn parse_opt_string(field: &str) -> Option<String> {
    let t = field.trim();
    if t.is_empty() {
        None
    } else {
        Some(t.to_string())
    }
}

impl<R: Read> RecordParser<R> {
    pub fn new(input: R, schema: &CsvSchema) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| Error::Schema(format!("cannot read CSV header: {e}")))?
            .clone();
        let columns = Columns {
            date: find_column(&headers, &schema.date)?,
            primary_type: find_column(&headers, &schema.primary_type)?,
            description: find_column(&headers, &schema.description)?,
            latitude: find_column(&headers, &schema.latitude)?,
            longitude: find_column(&headers, &schema.longitude)?,
            arrest: find_column(&headers, &schema.arrest)?,
            beat: find_column(&headers, &schema.beat)?,
            district: find_column(&headers, &schema.district)?,
            ward: find_column(&headers, &schema.ward)?,
            fbi_code: find_column(&headers, &schema.fbi_code)?,
        };
        Ok(RecordParser {
            reader,
            columns,
            record: csv::StringRecord::new(),
            parse_errors: 0,
        })
    }

    /// Next well-formed record, or `None` at end of input.
    pub fn next_record(&mut self) -> Result<Option<RawRecord>> {
        loop {
            match self.reader.read_record(&mut self.record) {
                Ok(false) => return Ok(None),
                Ok(true) => {
                    let c = &self.columns;
                    let get = |i: usize| self.record.get(i).unwrap_or("");
                    return Ok(Some(RawRecord {
                        date_text: get(c.date).to_string(),
                        primary_type: get(c.primary_type).to_string(),
                        description: get(c.description).to_string(),
                        latitude: parse_opt_f64(get(c.latitude)),
                        longitude: parse_opt_f64(get(c.longitude)),
                        arrest: parse_opt_bool(get(c.arrest)),
                        beat: parse_opt_string(get(c.beat)),
                        district: parse_opt_string(get(c.district)),
                        ward: parse_opt_string(get(c.ward)),
                        fbi_code: parse_opt_string(get(c.fbi_code)),
                    }));
                }
                Err(e) => match e.kind() {
                    csv::ErrorKind::Io(_) => return Err(Error::Io(io::Error::other(e))),
                    _ => {
                        self.parse_errors += 1;
                        continue;
                    }
                },
            }
        }
    }

    pub fn parse_errors(&self) -> u64 {
        self.parse_errors
    }

    /// Drain the input; convenient for in-memory use and tests.
    pub fn read_all(mut self) -> Result<(Vec<RawRecord>, u64)> {
        let mut out = Vec::new();
        while let Some(r) = self.next_record()? {
            out.push(r);
        }
        Ok((out, self.parse_errors))
    }
}

fn parse_timestamp(text: &str, formats: &[String]) -> Option<NaiveDateTime> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    formats
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(t, f).ok())
}

/// Validates raw records one at a time, interning event types and keeping
/// the reject accounting.
///
/// Reject precedence when several fields are bad: coordinates first, then
/// event type, then timestamp; one reason per row.
pub struct Cleaner {
    formats: Vec<String>,
    types: TypeTable,
    report: IngestReport,
}

impl Cleaner {
    pub fn new(schema: &CsvSchema) -> Self {
        Cleaner {
            formats: schema.timestamp_formats.clone(),
            types: TypeTable::default(),
            report: IngestReport::default(),
        }
    }

    /// Validate one record; rejects are tallied and return `None`.
    pub fn clean_one(&mut self, raw: &RawRecord) -> Option<CleanRecord> {
        self.report.total_rows += 1;
        let (lat, lon) = match (raw.latitude, raw.longitude) {
            (Some(lat), Some(lon)) => (lat, lon),
            _ => {
                self.report.bump(REASON_MISSING_COORDS);
                return None;
            }
        };
        if !(GeoPoint { lat, lon }).is_valid() {
            self.report.bump(REASON_IMPLAUSIBLE_COORDS);
            return None;
        }
        if raw.primary_type.trim().is_empty() {
            self.report.bump(REASON_MISSING_TYPE);
            return None;
        }
        let ts = match parse_timestamp(&raw.date_text, &self.formats) {
            Some(ts) => ts,
            None => {
                self.report.bump(REASON_BAD_TIMESTAMP);
                return None;
            }
        };
        let type_id = match self.types.try_intern(raw.primary_type.trim()) {
            Some(id) => id,
            None => {
                self.report.bump(REASON_TYPE_TABLE_FULL);
                return None;
            }
        };
        self.report.rows_after_null_removal += 1;
        Some(CleanRecord {
            lat,
            lon,
            type_id,
            hour: ts.hour() as u8,
            month: ts.month() as u8,
        })
    }

    /// Fold the parser's malformed-row count into the report.
    pub fn add_parse_errors(&mut self, n: u64) {
        if n > 0 {
            self.report.total_rows += n;
            *self
                .report
                .reject_reasons
                .entry(REASON_MALFORMED.to_string())
                .or_insert(0) += n;
        }
    }

    pub fn record_bbox_drop(&mut self) {
        self.report.bump(REASON_OUTSIDE_BBOX);
    }

    pub fn set_bbox_retained(&mut self, retained: u64) {
        self.report.rows_after_bbox = retained;
    }

    pub fn finish(self) -> (TypeTable, IngestReport) {
        (self.types, self.report)
    }
}

/// Keep exactly the records inside the box (boundaries inclusive).
pub fn bbox_filter(records: Vec<CleanRecord>, bbox: &BoundingBox) -> (Vec<CleanRecord>, u64) {
    let before = records.len();
    let kept: Vec<CleanRecord> = records
        .into_iter()
        .filter(|r| bbox.contains(r.point()))
        .collect();
    let dropped = (before - kept.len()) as u64;
    (kept, dropped)
}

/// Parse, clean, and bbox-filter a whole CSV in memory.
pub fn ingest_csv<R: Read>(
    input: R,
    schema: &CsvSchema,
    bbox: &BoundingBox,
) -> Result<(Vec<CleanRecord>, TypeTable, IngestReport)> {
    let mut parser = RecordParser::new(input, schema)?;
    let mut cleaner = Cleaner::new(schema);
    let mut cleaned = Vec::new();
    while let Some(raw) = parser.next_record()? {
        if let Some(rec) = cleaner.clean_one(&raw) {
            cleaned.push(rec);
        }
    }
    cleaner.add_parse_errors(parser.parse_errors());
    let (kept, dropped) = bbox_filter(cleaned, bbox);
    for _ in 0..dropped {
        cleaner.record_bbox_drop();
    }
    cleaner.set_bbox_retained(kept.len() as u64);
    let (types, report) = cleaner.finish();
    Ok((kept, types, report))
}

const RECORD_BYTES: usize = 20; // f64 lat, f64 lon, u16 type, u8 hour, u8 month

/// Streaming writer for the columnar records file.
///
/// The record count and type table are only known at the end, so the payload
/// is spooled to a sibling temp file and stitched after the final header.
pub struct RecordsWriter {
    path: std::path::PathBuf,
    tmp_path: std::path::PathBuf,
    tmp: BufWriter<File>,
    count: u64,
}

impl RecordsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let tmp_path = path.with_extension("tmp");
        let tmp = BufWriter::new(File::create(&tmp_path)?);
        Ok(RecordsWriter {
            path: path.to_path_buf(),
            tmp_path,
            tmp,
            count: 0,
        })
    }

    pub fn append(&mut self, r: &CleanRecord) -> Result<()> {
        self.tmp.write_all(&r.lat.to_le_bytes())?;
        self.tmp.write_all(&r.lon.to_le_bytes())?;
        self.tmp.write_all(&r.type_id.to_le_bytes())?;
        self.tmp.write_all(&[r.hour, r.month])?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self, types: &TypeTable, mut meta: Value) -> Result<u64> {
        self.tmp.flush()?;
        drop(self.tmp);

        meta["count"] = Value::from(self.count);
        meta["type_names"] = Value::from(types.names().to_vec());
        let mut writer = ArtifactWriter::create(&self.path, "records", meta)?;
        let mut tmp = File::open(&self.tmp_path)?;
        tmp.rewind()?;
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = tmp.read(&mut buf)?;
            if n == 0 {
                break;
            }
            writer.write_bytes(&buf[..n])?;
        }
        writer.finish()?;
        std::fs::remove_file(&self.tmp_path)?;
        Ok(self.count)
    }
}

/// Write a full record set in one call.
pub fn write_records(
    path: &Path,
    records: &[CleanRecord],
    types: &TypeTable,
    meta: Value,
) -> Result<()> {
    let mut w = RecordsWriter::create(path)?;
    for r in records {
        w.append(r)?;
    }
    w.finish(types, meta)?;
    Ok(())
}

/// Load a columnar records file.
pub fn read_records(path: &Path) -> Result<(Vec<CleanRecord>, TypeTable, Value)> {
    let mut reader = ArtifactReader::open(path, "records")?;
    let count = header_usize(&reader.header, "count")?;
    let names = header_strings(&reader.header, "type_names")?;
    let bytes = reader.read_bytes(count * RECORD_BYTES)?;
    let mut records = Vec::with_capacity(count);
    for chunk in bytes.chunks_exact(RECORD_BYTES) {
        records.push(CleanRecord {
            lat: f64::from_le_bytes(chunk[0..8].try_into().unwrap()),
            lon: f64::from_le_bytes(chunk[8..16].try_into().unwrap()),
            type_id: u16::from_le_bytes(chunk[16..18].try_into().unwrap()),
            hour: chunk[18],
            month: chunk[19],
        });
    }
    let header = reader.header.clone();
    Ok((records, TypeTable::from_names(names), header))
}
