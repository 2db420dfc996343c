//! Outage-record ingestion: CSV parsing, filtering, daily deduplication, and
//! the per-line annual count matrix.
//!
//! The cleaning pipeline is `parse -> filter -> dedup -> annual_counts`.
//! Filtering drops scheduled outages, momentary outages (duration of one
//! minute or less), and lines at excluded voltage classes. Deduplication keeps
//! at most one record per line and calendar day, preferring the earliest
//! start.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutageType {
    Forced,
    Scheduled,
}

/// One raw outage event, as parsed from the input file.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageRecord {
    pub line_id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub outage_type: OutageType,
    pub cause: String,
    pub voltage_kv: f64,
    pub length_miles: f64,
    pub districts: BTreeSet<String>,
}

impl OutageRecord {
    pub fn duration_seconds(&self) -> i64 {
        (self.end - self.start).num_seconds()
    }
}

/// Per-line attributes, constant across all records of the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineAttributes {
    pub line_id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub voltage_kv: f64,
    pub length_miles: f64,
    pub districts: BTreeSet<String>,
}

/// Line inventory, sorted by line id.
#[derive(Debug, Clone, Default)]
pub struct LineTable {
    lines: Vec<LineAttributes>,
}

impl LineTable {
    pub fn new(mut lines: Vec<LineAttributes>) -> Result<Self> {
        lines.sort_by(|a, b| a.line_id.cmp(&b.line_id));
        for pair in lines.windows(2) {
            if pair[0].line_id == pair[1].line_id {
                return Err(Error::Invalid(format!(
                    "duplicate line id {} in line table",
                    pair[0].line_id
                )));
            }
        }
        Ok(Self { lines })
    }

    /// Build the line table from cleaned records. Records of one line must
    /// agree on every attribute; a conflict is an error (same-day conflicts
    /// have already been resolved by dedup).
    pub fn from_records(records: &[OutageRecord]) -> Result<Self> {
        let mut by_id: BTreeMap<&str, LineAttributes> = BTreeMap::new();
        for r in records {
            let attrs = LineAttributes {
                line_id: r.line_id.clone(),
                from_bus: r.from_bus.clone(),
                to_bus: r.to_bus.clone(),
                voltage_kv: r.voltage_kv,
                length_miles: r.length_miles,
                districts: r.districts.clone(),
            };
            match by_id.get(r.line_id.as_str()) {
                None => {
                    by_id.insert(r.line_id.as_str(), attrs);
                }
                Some(existing) if *existing != attrs => {
                    return Err(Error::Invalid(format!(
                        "line {} has conflicting attributes across records",
                        r.line_id
                    )));
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            lines: by_id.into_values().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn lines(&self) -> &[LineAttributes] {
        &self.lines
    }

    pub fn get(&self, i: usize) -> &LineAttributes {
        &self.lines[i]
    }

    pub fn index_of(&self, line_id: &str) -> Option<usize> {
        self.lines
            .binary_search_by(|l| l.line_id.as_str().cmp(line_id))
            .ok()
    }

    pub fn line_ids(&self) -> Vec<String> {
        self.lines.iter().map(|l| l.line_id.clone()).collect()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.length_miles).collect()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.voltage_kv).collect()
    }

    /// Restrict the table to the given line ids (sorted order preserved).
    pub fn select(&self, ids: &BTreeSet<String>) -> LineTable {
        LineTable {
            lines: self
                .lines
                .iter()
                .filter(|l| ids.contains(&l.line_id))
                .cloned()
                .collect(),
        }
    }
}

/// Filtering policy applied to parsed records.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    /// Drop scheduled (maintenance) outages, keeping forced outages only.
    pub drop_scheduled: bool,
    /// Drop outages whose duration does not exceed this many seconds.
    pub momentary_max_secs: i64,
    /// Voltage classes excluded entirely (e.g. HVDC lines).
    pub excluded_voltages_kv: Vec<f64>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            drop_scheduled: true,
            momentary_max_secs: 60,
            excluded_voltages_kv: vec![1000.0],
        }
    }
}

/// Day boundary used for deduplication and year assignment. The calendar date
/// is taken in the data's local clock, expressed as an offset from UTC.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct DayBoundary {
    pub utc_offset_minutes: i32,
}


impl DayBoundary {
    fn local(&self, t: DateTime<Utc>) -> NaiveDateTime {
        (t + Duration::minutes(self.utc_offset_minutes as i64)).naive_utc()
    }

    pub fn local_date(&self, t: DateTime<Utc>) -> chrono::NaiveDate {
        self.local(t).date()
    }

    pub fn year_of(&self, t: DateTime<Utc>) -> i32 {
        use chrono::Datelike;
        self.local_date(t).year()
    }
}

/// Counts dropped per filtering rule; rules are applied in the listed order,
/// so each dropped record is attributed to the first rule it hits.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterStats {
    pub dropped_scheduled: usize,
    pub dropped_momentary: usize,
    pub dropped_voltage: usize,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<OutageRecord>,
    pub stats: FilterStats,
}

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    pub kept: Vec<OutageRecord>,
    pub removed: usize,
    /// Human-readable notes for same-day duplicates whose attributes disagree
    /// with the kept (earliest) record.
    pub attribute_conflicts: Vec<String>,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "line_id",
    "from_bus",
    "to_bus",
    "start",
    "end",
    "type",
    "cause",
    "voltage_kv",
    "length_miles",
    "districts",
];

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

/// Parse outage records from CSV with the documented schema. Fails with a
/// schema error for missing columns and a row error (with the 1-based data
/// row number) for the first malformed row.
pub fn parse_records<R: Read>(reader: R) -> Result<Vec<OutageRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let mut col = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        col.insert(h.to_string(), i);
    }
    let missing: Vec<&str> = CSV_COLUMNS
        .iter()
        .filter(|c| !col.contains_key(**c))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing mandatory columns: {}",
            missing.join(", ")
        )));
    }

    let field = |rec: &csv::StringRecord, name: &str| -> String {
        rec.get(col[name]).unwrap_or("").to_string()
    };

    let mut out = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let rownum = idx + 1;
        let rec = row.map_err(|e| Error::Row {
            row: rownum,
            msg: e.to_string(),
        })?;
        let bad = |msg: String| Error::Row { row: rownum, msg };

        let start = parse_timestamp(&field(&rec, "start"))
            .ok_or_else(|| bad(format!("unparseable timestamp '{}'", field(&rec, "start"))))?;
        let end = parse_timestamp(&field(&rec, "end"))
            .ok_or_else(|| bad(format!("unparseable timestamp '{}'", field(&rec, "end"))))?;
        if end < start {
            return Err(bad("end precedes start".into()));
        }
        let outage_type = match field(&rec, "type").to_ascii_lowercase().as_str() {
            "forced" => OutageType::Forced,
            "scheduled" => OutageType::Scheduled,
            other => return Err(bad(format!("unknown outage type '{other}'"))),
        };
        let voltage_kv: f64 = field(&rec, "voltage_kv")
            .parse()
            .map_err(|_| bad("bad voltage_kv".into()))?;
        if !(voltage_kv > 0.0) {
            return Err(bad("voltage_kv must be positive".into()));
        }
        let length_miles: f64 = field(&rec, "length_miles")
            .parse()
            .map_err(|_| bad("bad length_miles".into()))?;
        if !(length_miles > 0.0) {
            return Err(bad("length_miles must be positive".into()));
        }
        let districts: BTreeSet<String> = field(&rec, "districts")
            .split(';')
            .map(|d| d.trim().to_string())
            .filter(|d| !d.is_empty())
            .collect();
        if districts.is_empty() {
            return Err(bad("districts must be nonempty".into()));
        }
        out.push(OutageRecord {
            line_id: field(&rec, "line_id"),
            from_bus: field(&rec, "from_bus"),
            to_bus: field(&rec, "to_bus"),
            start,
            end,
            outage_type,
            cause: field(&rec, "cause"),
            voltage_kv,
            length_miles,
            districts,
        });
    }
    Ok(out)
}

pub fn parse_records_path(path: &Path) -> Result<Vec<OutageRecord>> {
    parse_records(std::fs::File::open(path)?)
}

/// Apply the filtering policy. Total: never fails.
pub fn filter_records(records: Vec<OutageRecord>, policy: &FilterPolicy) -> FilterOutcome {
    let mut stats = FilterStats::default();
    let kept = records
        .into_iter()
        .filter(|r| {
            if policy.drop_scheduled && r.outage_type == OutageType::Scheduled {
                stats.dropped_scheduled += 1;
                return false;
            }
            if r.duration_seconds() <= policy.momentary_max_secs {
                stats.dropped_momentary += 1;
                return false;
            }
            if policy
                .excluded_voltages_kv
                .iter()
                .any(|&v| (v - r.voltage_kv).abs() < 1e-9)
            {
                stats.dropped_voltage += 1;
                return false;
            }
            true
        })
        .collect();
    FilterOutcome { kept, stats }
}

fn dedup_key(r: &OutageRecord) -> (DateTime<Utc>, DateTime<Utc>, String) {
    (r.start, r.end, r.cause.clone())
}

/// Keep at most one record per (line, calendar day); the earliest start wins.
/// Output is in canonical (line_id, start) order, so the operation is
/// insensitive to input ordering and idempotent.
pub fn dedup_daily(records: Vec<OutageRecord>, boundary: &DayBoundary) -> DedupOutcome {
    let mut groups: BTreeMap<(String, chrono::NaiveDate), Vec<OutageRecord>> = BTreeMap::new();
    let total = records.len();
    for r in records {
        let key = (r.line_id.clone(), boundary.local_date(r.start));
        groups.entry(key).or_default().push(r);
    }
    let mut kept = Vec::with_capacity(groups.len());
    let mut attribute_conflicts = Vec::new();
    for ((line, day), mut group) in groups {
        group.sort_by_key(dedup_key);
        let winner = group.remove(0);
        for other in &group {
            let same = other.voltage_kv == winner.voltage_kv
                && other.length_miles == winner.length_miles
                && other.districts == winner.districts
                && other.from_bus == winner.from_bus
                && other.to_bus == winner.to_bus;
            if !same {
                attribute_conflicts.push(format!(
                    "line {line} on {day}: dropped duplicate disagrees on attributes; kept earliest record's"
                ));
            }
        }
        kept.push(winner);
    }
    kept.sort_by(|a, b| (a.line_id.as_str(), a.start).cmp(&(b.line_id.as_str(), b.start)));
    DedupOutcome {
        removed: total - kept.len(),
        kept,
        attribute_conflicts,
    }
}

/// Per-line, per-year outage counts over a fixed observation window.
///
/// Every listed line gets an explicit row over all years in the window, with
/// zeros where nothing happened. Exposure is the full window for every line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    line_ids: Vec<String>,
    years: Vec<i32>,
    /// Row-major, line-by-year.
    counts: Vec<u32>,
}

impl CountMatrix {
    pub fn new(line_ids: Vec<String>, years: Vec<i32>, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != line_ids.len() * years.len() {
            return Err(Error::Invalid(format!(
                "count matrix shape mismatch: {} entries for {} lines x {} years",
                counts.len(),
                line_ids.len(),
                years.len()
            )));
        }
        Ok(Self {
            line_ids,
            years,
            counts,
        })
    }

    pub fn n_lines(&self) -> usize {
        self.line_ids.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn line_ids(&self) -> &[String] {
        &self.line_ids
    }

    pub fn index_of(&self, line_id: &str) -> Option<usize> {
        self.line_ids.iter().position(|l| l == line_id)
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let k = self.n_years();
        &self.counts[i * k..(i + 1) * k]
    }

    pub fn count(&self, i: usize, y: usize) -> u32 {
        self.counts[i * self.n_years() + y]
    }

    /// Total outages for line i over the window.
    pub fn total(&self, i: usize) -> u64 {
        self.row(i).iter().map(|&c| c as u64).sum()
    }

    /// Observation years for line i; a line with no outages is still observed
    /// for the whole window.
    pub fn exposure(&self, _i: usize) -> f64 {
        self.n_years() as f64
    }

    pub fn grand_total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Add all-zero rows for lines known from an inventory but absent from the
    /// outage data. Rows stay sorted by line id.
    pub fn add_zero_lines<I: IntoIterator<Item = String>>(&mut self, ids: I) {
        let existing: BTreeSet<&String> = self.line_ids.iter().collect();
        let new_ids: Vec<String> = ids
            .into_iter()
            .filter(|id| !existing.contains(id))
            .collect();
        drop(existing);
        let k = self.n_years();
        for id in new_ids {
            self.line_ids.push(id);
            self.counts.extend(std::iter::repeat_n(0, k));
        }
        // Re-sort rows by line id.
        let mut order: Vec<usize> = (0..self.line_ids.len()).collect();
        order.sort_by(|&a, &b| self.line_ids[a].cmp(&self.line_ids[b]));
        let mut ids = Vec::with_capacity(order.len());
        let mut counts = Vec::with_capacity(self.counts.len());
        for &i in &order {
            ids.push(self.line_ids[i].clone());
            counts.extend_from_slice(&self.counts[i * k..(i + 1) * k]);
        }
        self.line_ids = ids;
        self.counts = counts;
    }

    /// The matrix restricted to the first `k` years of the window.
    pub fn truncate_years(&self, k: usize) -> Result<CountMatrix> {
        if k == 0 || k > self.n_years() {
            return Err(Error::Invalid(format!(
                "cutoff {k} outside the {}-year window",
                self.n_years()
            )));
        }
        let mut counts = Vec::with_capacity(self.n_lines() * k);
        for i in 0..self.n_lines() {
            counts.extend_from_slice(&self.row(i)[..k]);
        }
        CountMatrix::new(self.line_ids.clone(), self.years[..k].to_vec(), counts)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["line_id".to_string()];
        header.extend(self.years.iter().map(|y| y.to_string()));
        wtr.write_record(&header)?;
        for i in 0..self.n_lines() {
            let mut rec = vec![self.line_ids[i].clone()];
            rec.extend(self.row(i).iter().map(|c| c.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<CountMatrix> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
            .clone();
        if headers.get(0) != Some("line_id") {
            return Err(Error::Schema("first column must be line_id".into()));
        }
        let years: Vec<i32> = headers
            .iter()
            .skip(1)
            .map(|h| {
                h.parse()
                    .map_err(|_| Error::Schema(format!("bad year column '{h}'")))
            })
            .collect::<Result<_>>()?;
        let mut line_ids = Vec::new();
        let mut counts = Vec::new();
        for (idx, row) in rdr.records().enumerate() {
            let rec = row?;
            line_ids.push(rec.get(0).unwrap_or("").to_string());
            for y in 0..years.len() {
                let v: u32 = rec.get(y + 1).unwrap_or("").parse().map_err(|_| Error::Row {
                    row: idx + 1,
                    msg: format!("bad count '{}'", rec.get(y + 1).unwrap_or("")),
                })?;
                counts.push(v);
            }
        }
        CountMatrix::new(line_ids, years, counts)
    }

    pub fn read_csv_path(path: &Path) -> Result<CountMatrix> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Build the annual count matrix from cleaned records.
///
/// `year_range` is the inclusive observation window; a record dated outside it
/// is an error. Lines appearing in the records each get a full row.
pub fn annual_counts(
    records: &[OutageRecord],
    year_range: (i32, i32),
    boundary: &DayBoundary,
) -> Result<CountMatrix> {
    let (y0, y1) = year_range;
    if y1 < y0 {
        return Err(Error::Invalid(format!("empty year range {y0}..{y1}")));
    }
    let years: Vec<i32> = (y0..=y1).collect();
    let mut ids: Vec<String> = records.iter().map(|r| r.line_id.clone()).collect();
    ids.sort();
    ids.dedup();
    let index: BTreeMap<&String, usize> = ids.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let mut counts = vec![0u32; ids.len() * years.len()];
    for r in records {
        let y = boundary.year_of(r.start);
        if y < y0 || y > y1 {
            return Err(Error::Invalid(format!(
                "record for line {} dated {} outside window {y0}..{y1}",
                r.line_id, y
            )));
        }
        let i = index[&r.line_id];
        counts[i * years.len() + (y - y0) as usize] += 1;
    }
    CountMatrix::new(ids, years, counts)
}

/// Pooled statistics over all line-years, plus the mean per-line
/// variance-to-mean ratio (lines with zero mean excluded from the ratio).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledStats {
    pub mean: f64,
    pub sd: f64,
    pub mean_variance_to_mean_ratio: Option<f64>,
    pub n_lines: usize,
    pub n_line_years: usize,
}

pub fn pooled_statistics(cm: &CountMatrix) -> Result<PooledStats> {
    if cm.n_lines() == 0 || cm.n_years() == 0 {
        return Err(Error::Invalid("empty count matrix".into()));
    }
    let all: Vec<f64> = (0..cm.n_lines())
        .flat_map(|i| cm.row(i).iter().map(|&c| c as f64).collect::<Vec<_>>())
        .collect();
    let mean = stats::mean(&all);
    let sd = stats::sample_sd(&all);
    let mut ratios = Vec::new();
    for i in 0..cm.n_lines() {
        let row: Vec<f64> = cm.row(i).iter().map(|&c| c as f64).collect();
        let m = stats::mean(&row);
        if m > 0.0 && row.len() >= 2 {
            ratios.push(stats::sample_variance(&row) / m);
        }
    }
    Ok(PooledStats {
        mean,
        sd,
        mean_variance_to_mean_ratio: if ratios.is_empty() {
            None
        } else {
            Some(stats::mean(&ratios))
        },
        n_lines: cm.n_lines(),
        n_line_years: all.len(),
    })
}

/// Full ingestion report emitted by the CLI: what was dropped where.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub schema_version: u32,
    pub parsed: usize,
    pub filter: FilterStats,
    pub dedup_removed: usize,
    pub attribute_conflicts: Vec<String>,
    pub surviving: usize,
    pub n_lines: usize,
    pub pooled: PooledStats,
}

pub fn write_line_table<W: Write>(table: &LineTable, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "line_id",
        "from_bus",
        "to_bus",
        "voltage_kv",
        "length_miles",
        "districts",
    ])?;
    for l in table.lines() {
        let districts: Vec<&str> = l.districts.iter().map(|d| d.as_str()).collect();
        wtr.write_record([
            l.line_id.as_str(),
            l.from_bus.as_str(),
            l.to_bus.as_str(),
            &l.voltage_kv.to_string(),
            &l.length_miles.to_string(),
            &districts.join(";"),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_line_table_path(table: &LineTable, path: &Path) -> Result<()> {
    write_line_table(table, std::fs::File::create(path)?)
}

pub fn read_line_table<R: Read>(r: R) -> Result<LineTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut lines = Vec::new();
    for (idx, row) in rdr.deserialize::<LineTableRow>().enumerate() {
        let row = row.map_err(|e| Error::Row {
            row: idx + 1,
            msg: e.to_string(),
        })?;
        let districts: BTreeSet<String> = row
            .districts
            .split(';')
            .map(|d| d.trim().to_string())
            .filter(|d| !d.is_empty())
            .collect();
        if districts.is_empty() {
            return Err(Error::Row {
                row: idx + 1,
                msg: "districts must be nonempty".into(),
            });
        }
        lines.push(LineAttributes {
            line_id: row.line_id,
            from_bus: row.from_bus,
            to_bus: row.to_bus,
            voltage_kv: row.voltage_kv,
            length_miles: row.length_miles,
            districts,
        });
    }
    LineTable::new(lines)
}

pub fn read_line_table_path(path: &Path) -> Result<LineTable> {
    read_line_table(std::fs::File::open(path)?)
}

#[derive(Deserialize)]
struct LineTableRow {
    line_id: String,
    from_bus: String,
    to_bus: String,
    voltage_kv: f64,
    length_miles: f64,
    districts: String,
}
