//! Session ingestion, weather join, SoC-grid resampling and train/test splits.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{SocGridProfile, GRID_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub timestamp: NaiveDateTime,
    /// State of charge, percent.
    pub soc: f64,
    /// Requested power, kW.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingSession {
    pub session_id: String,
    pub charger_id: String,
    pub records: Vec<SessionRecord>,
    pub capacity_kwh: f64,
    pub controlled: bool,
    pub temp_at_arrival: Option<f64>,
}

impl ChargingSession {
    /// Builds a session from time-ordered records, enforcing the record and
    /// session invariants.
    pub fn new(
        session_id: impl Into<String>,
        charger_id: impl Into<String>,
        mut records: Vec<SessionRecord>,
        capacity_kwh: f64,
        controlled: bool,
    ) -> std::result::Result<Self, RejectReason> {
        records.sort_by_key(|r| r.timestamp);
        validate_records(&records, capacity_kwh)?;
        Ok(ChargingSession {
            session_id: session_id.into(),
            charger_id: charger_id.into(),
            records,
            capacity_kwh,
            controlled,
            temp_at_arrival: None,
        })
    }

    pub fn t_a(&self) -> NaiveDateTime {
        self.records[0].timestamp
    }

    pub fn t_d(&self) -> NaiveDateTime {
        self.records[self.records.len() - 1].timestamp
    }

    pub fn soc_a(&self) -> f64 {
        self.records[0].soc
    }

    pub fn soc_d(&self) -> f64 {
        self.records[self.records.len() - 1].soc
    }

    pub fn arrival_hour(&self) -> usize {
        self.t_a().hour() as usize
    }

    pub fn departure_hour(&self) -> usize {
        self.t_d().hour() as usize
    }

    /// Session length t_d - t_a in minutes.
    pub fn duration_minutes(&self) -> f64 {
        (self.t_d() - self.t_a()).num_seconds() as f64 / 60.0
    }

    /// Energy implied by capacity and the SoC span, kWh.
    pub fn energy_kwh(&self) -> f64 {
        self.capacity_kwh * (self.soc_d() - self.soc_a()) / 100.0
    }

    pub fn powers(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.power).collect()
    }
}

/// Why a session was dropped during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RejectReason {
    TooFewRecords(usize),
    DuplicateTimestamp,
    NonMonotoneSoc,
    SocOutOfRange,
    NegativePower,
    NonPositiveCapacity,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::TooFewRecords(_) => f.write_str("too_few_records"),
            RejectReason::DuplicateTimestamp => f.write_str("duplicate_timestamp"),
            RejectReason::NonMonotoneSoc => f.write_str("non_monotone_soc"),
            RejectReason::SocOutOfRange => f.write_str("soc_out_of_range"),
            RejectReason::NegativePower => f.write_str("negative_power"),
            RejectReason::NonPositiveCapacity => f.write_str("non_positive_capacity"),
        }
    }
}

fn validate_records(records: &[SessionRecord], capacity_kwh: f64) -> std::result::Result<(), RejectReason> {
    if records.len() < 2 {
        return Err(RejectReason::TooFewRecords(records.len()));
    }
    if !(capacity_kwh > 0.0 && capacity_kwh.is_finite()) {
        return Err(RejectReason::NonPositiveCapacity);
    }
    for r in records {
        if !(0.0..=100.0).contains(&r.soc) {
            return Err(RejectReason::SocOutOfRange);
        }
        if !(r.power >= 0.0 && r.power.is_finite()) {
            return Err(RejectReason::NegativePower);
        }
    }
    for w in records.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(RejectReason::DuplicateTimestamp);
        }
        if w[1].soc < w[0].soc {
            return Err(RejectReason::NonMonotoneSoc);
        }
    }
    Ok(())
}

/// Column names of the sessions CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSchema {
    pub session_id: String,
    pub charger_id: String,
    pub timestamp: String,
    pub soc: String,
    pub power: String,
    pub capacity: String,
    pub controlled: String,
}

impl Default for SessionSchema {
    fn default() -> Self {
        SessionSchema {
            session_id: "session_id".into(),
            charger_id: "charger_id".into(),
            timestamp: "timestamp".into(),
            soc: "soc_percent".into(),
            power: "power_kw".into(),
            capacity: "capacity_kwh".into(),
            controlled: "controlled".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rejection {
    pub session_id: String,
    pub reason: RejectReason,
}

/// Result of reading a sessions file.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub sessions: Vec<ChargingSession>,
    pub rejected: Vec<Rejection>,
    /// Rows read from the file, including those of rejected sessions.
    pub rows_read: usize,
}

impl LoadReport {
    pub fn accepted_records(&self) -> usize {
        self.sessions.iter().map(|s| s.records.len()).sum()
    }
}

/// Parses an ISO-8601 timestamp. Offsets are converted to UTC; naive
/// timestamps are taken as-is.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

pub fn load_sessions(path: impl AsRef<Path>, schema: &SessionSchema) -> Result<LoadReport> {
    let file = std::fs::File::open(path.as_ref())?;
    load_sessions_from_reader(file, schema)
}

pub fn load_sessions_from_reader<R: Read>(reader: R, schema: &SessionSchema) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let i_sid = column(&headers, &schema.session_id)?;
    let i_cid = column(&headers, &schema.charger_id)?;
    let i_ts = column(&headers, &schema.timestamp)?;
    let i_soc = column(&headers, &schema.soc)?;
    let i_pow = column(&headers, &schema.power)?;
    let i_cap = column(&headers, &schema.capacity)?;
    let i_ctl = column(&headers, &schema.controlled)?;

    struct Pending {
        charger_id: String,
        capacity: f64,
        controlled: bool,
        records: Vec<SessionRecord>,
    }

    let mut groups: BTreeMap<String, Pending> = BTreeMap::new();
    let mut rows_read = 0usize;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let bad = |what: &str, v: &str| Error::Row {
            line,
            message: format!("cannot parse {what} `{v}`"),
        };
        let num = |i: usize, what: &str| -> Result<f64> { field(i).parse::<f64>().map_err(|_| bad(what, field(i))) };

        let timestamp = parse_timestamp(field(i_ts)).ok_or_else(|| bad("timestamp", field(i_ts)))?;
        let soc = num(i_soc, "soc")?;
        let power = num(i_pow, "power")?;
        let capacity = num(i_cap, "capacity")?;
        let controlled = match field(i_ctl) {
            "0" | "false" | "False" => false,
            "1" | "true" | "True" => true,
            other => return Err(bad("controlled flag", other)),
        };
        rows_read += 1;

        let entry = groups.entry(field(i_sid).to_string()).or_insert_with(|| Pending {
            charger_id: field(i_cid).to_string(),
            capacity,
            controlled: false,
            records: Vec::new(),
        });
        entry.controlled |= controlled;
        entry.records.push(SessionRecord { timestamp, soc, power });
    }
    if rows_read == 0 {
        return Err(Error::EmptyDataset("sessions file has no data rows".into()));
    }

    let mut sessions = Vec::with_capacity(groups.len());
    let mut rejected = Vec::new();
    for (session_id, p) in groups {
        match ChargingSession::new(session_id.clone(), p.charger_id, p.records, p.capacity, p.controlled) {
            Ok(s) => sessions.push(s),
            Err(reason) => {
                log::debug!("rejecting session {session_id}: {reason:?}");
                rejected.push(Rejection { session_id, reason });
            }
        }
    }
    sessions.sort_by(|a, b| a.t_a().cmp(&b.t_a()).then_with(|| a.session_id.cmp(&b.session_id)));
    if !rejected.is_empty() {
        log::info!(
            "rejected {} of {} sessions",
            rejected.len(),
            rejected.len() + sessions.len()
        );
    }
    Ok(LoadReport {
        sessions,
        rejected,
        rows_read,
    })
}

/// Hourly ambient temperature, °C.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeatherTable {
    pub temps: BTreeMap<NaiveDateTime, f64>,
}

impl WeatherTable {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (NaiveDateTime, f64)>) -> Self {
        WeatherTable {
            temps: pairs.into_iter().collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path.as_ref())?)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let i_ts = column(&headers, "timestamp")?;
        let i_t = column(&headers, "temperature_c")?;
        let mut temps = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let ts = row.get(i_ts).and_then(parse_timestamp).ok_or_else(|| Error::Row {
                line,
                message: "cannot parse timestamp".into(),
            })?;
            let t: f64 = row.get(i_t).unwrap_or("").parse().map_err(|_| Error::Row {
                line,
                message: "cannot parse temperature".into(),
            })?;
            temps.insert(ts, t);
        }
        if temps.is_empty() {
            return Err(Error::EmptyDataset("weather file has no data rows".into()));
        }
        Ok(WeatherTable { temps })
    }

    /// Temperature of the entry nearest to `t`; equidistant entries resolve to
    /// the later one. Fails when the nearest entry is more than 24 h away.
    pub fn nearest(&self, t: NaiveDateTime) -> Option<f64> {
        let before = self.temps.range(..=t).next_back();
        let after = self.temps.range(t..).next();
        let pick = match (before, after) {
            (Some(b), Some(a)) => {
                if (t - *b.0) < (*a.0 - t) {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => return None,
        };
        let gap = (*pick.0 - t).num_seconds().abs();
        (gap <= 24 * 3600).then_some(*pick.1)
    }
}

/// Sets `temp_at_arrival` on every session the table covers. Sessions whose
/// arrival lies more than 24 h from any weather entry keep `None` and are
/// reported in the returned error list.
pub fn join_weather(sessions: Vec<ChargingSession>, weather: &WeatherTable) -> (Vec<ChargingSession>, Vec<Error>) {
    let mut failures = Vec::new();
    let joined = sessions
        .into_iter()
        .map(|mut s| {
            match weather.nearest(s.t_a()) {
                Some(t) => s.temp_at_arrival = Some(t),
                None => failures.push(Error::WeatherJoin {
                    session_id: s.session_id.clone(),
                    message: format!("no weather within 24 h of {}", s.t_a()),
                }),
            }
            s
        })
        .collect();
    (joined, failures)
}

/// Linear interpolation of (soc, power) points onto the integer SoC grid,
/// holding the first and last values constant outside the observed span.
/// Points must be sorted by SoC; equal SoCs are averaged.
pub fn resample_points(points: &[(f64, f64)]) -> Result<SocGridProfile> {
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    let mut i = 0;
    while i < points.len() {
        let soc = points[i].0;
        let mut j = i;
        let mut sum = 0.0;
        while j < points.len() && points[j].0 == soc {
            sum += points[j].1;
            j += 1;
        }
        knots.push((soc, sum / (j - i) as f64));
        i = j;
    }
    if knots.len() < 2 {
        return Err(Error::param("need at least two distinct SoC values"));
    }
    if knots.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::param("points must be sorted by SoC"));
    }

    let (first, last) = (knots[0], knots[knots.len() - 1]);
    let mut k = 0;
    let grid = (0..GRID_LEN)
        .map(|g| {
            let s = g as f64;
            if s <= first.0 {
                return first.1;
            }
            if s >= last.0 {
                return last.1;
            }
            while knots[k + 1].0 < s {
                k += 1;
            }
            let (s0, p0) = knots[k];
            let (s1, p1) = knots[k + 1];
            if s == s1 {
                return p1;
            }
            p0 + (p1 - p0) * (s - s0) / (s1 - s0)
        })
        .collect();
    SocGridProfile::new(grid)
}

pub fn resample_to_soc_grid(session: &ChargingSession) -> Result<SocGridProfile> {
    if session.soc_d() <= session.soc_a() {
        return Err(Error::DegenerateSession(session.session_id.clone()));
    }
    let points: Vec<(f64, f64)> = session.records.iter().map(|r| (r.soc, r.power)).collect();
    resample_points(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    Chronological,
    SeededRandom,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<ChargingSession>,
    pub test: Vec<ChargingSession>,
    pub split_ratio: f64,
    pub split_mode: SplitMode,
}

/// Train size `floor(ratio * n)`, kept within `[1, n - 1]`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    let raw = (ratio * n as f64 + 1e-9).floor() as usize;
    raw.clamp(1, n - 1)
}

pub fn split_dataset(
    mut sessions: Vec<ChargingSession>,
    ratio: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::param(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    if sessions.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: sessions.len(),
        });
    }
    match mode {
        SplitMode::Chronological => {
            sessions.sort_by(|a, b| a.t_a().cmp(&b.t_a()).then_with(|| a.session_id.cmp(&b.session_id)))
        }
        SplitMode::SeededRandom => {
            sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
            sessions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }
    let n_train = train_count(sessions.len(), ratio);
    let test = sessions.split_off(n_train);
    Ok(DatasetSplit {
        train: sessions,
        test,
        split_ratio: ratio,
        split_mode: mode,
    })
}

pub fn filter_uncontrolled(sessions: &[ChargingSession]) -> Vec<ChargingSession> {
    sessions.iter().filter(|s| !s.controlled).cloned().collect()
}

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Writes sessions in the ingest CSV layout, one row per record.
pub fn write_sessions_csv<W: std::io::Write>(w: W, sessions: &[ChargingSession]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let s = SessionSchema::default();
    wtr.write_record([
        &s.session_id,
        &s.charger_id,
        &s.timestamp,
        &s.soc,
        &s.power,
        &s.capacity,
        &s.controlled,
    ])?;
    for sess in sessions {
        for r in &sess.records {
            wtr.write_record([
                sess.session_id.clone(),
                sess.charger_id.clone(),
                r.timestamp.format(TS_FORMAT).to_string(),
                r.soc.to_string(),
                r.power.to_string(),
                sess.capacity_kwh.to_string(),
                u8::from(sess.controlled).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_weather_csv<W: std::io::Write>(w: W, weather: &WeatherTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["timestamp", "temperature_c"])?;
    for (t, c) in &weather.temps {
        wtr.write_record([t.format(TS_FORMAT).to_string(), c.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
