//! Raw minute-level records: loading, quality flags, device renaming and
//! reference unit conversion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, DurationRound, NaiveDateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Universal gas constant, J·mol⁻¹·K⁻¹.
pub const GAS_CONSTANT: f64 = 8.314;
/// Molar mass of NO₂, g·mol⁻¹.
pub const MOLAR_MASS_NO2: f64 = 46.0055;

/// Measurement channel. Sensor gas channels are in nA; `RefNo2` is the
/// reference analyzer concentration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "no2_na")]
    No2,
    #[serde(rename = "no_na")]
    No,
    #[serde(rename = "co_na")]
    Co,
    #[serde(rename = "rh_pct")]
    Rh,
    #[serde(rename = "t_c")]
    Temp,
    #[serde(rename = "p_mbar")]
    Pressure,
    #[serde(rename = "ref_no2")]
    RefNo2,
}

impl Channel {
    /// The six channels measured by a sensor box, in storage order.
    pub const SENSOR: [Channel; 6] = [
        Channel::No2,
        Channel::No,
        Channel::Co,
        Channel::Rh,
        Channel::Temp,
        Channel::Pressure,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Channel::No2 => "no2_na",
            Channel::No => "no_na",
            Channel::Co => "co_na",
            Channel::Rh => "rh_pct",
            Channel::Temp => "t_c",
            Channel::Pressure => "p_mbar",
            Channel::RefNo2 => "ref_no2",
        }
    }

    /// Index into [`Channel::SENSOR`], `None` for the reference channel.
    pub fn sensor_index(self) -> Option<usize> {
        Channel::SENSOR.iter().position(|c| *c == self)
    }

    /// Physical plausibility of a value in this channel's unit.
    pub fn accepts(self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match self {
            Channel::Rh => (0.0..=105.0).contains(&value),
            Channel::Temp => (-60.0..=80.0).contains(&value),
            Channel::Pressure => value > 0.0 && value < 1200.0,
            _ => true,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let c = match s.trim().to_ascii_lowercase().as_str() {
            "no2_na" | "no2" => Channel::No2,
            "no_na" | "no" => Channel::No,
            "co_na" | "co" => Channel::Co,
            "rh_pct" | "rh" => Channel::Rh,
            "t_c" | "t" | "temp" => Channel::Temp,
            "p_mbar" | "p" | "pressure" => Channel::Pressure,
            "ref_no2" | "ref" => Channel::RefNo2,
            other => return Err(Error::InvalidInput(format!("unknown channel `{other}`"))),
        };
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub device_id: String,
    /// UTC timestamp truncated to the minute.
    pub timestamp: DateTime<Utc>,
    pub channel: Channel,
    pub value: f64,
    pub flag: u16,
}

/// Row layout of a raw file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One row per (device, minute) with one column per channel.
    Wide,
    /// One row per (device, minute, channel) with value and flag columns.
    Long {
        channel_column: String,
        value_column: String,
    },
}

/// Mapping from file columns to record fields.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestSchema {
    pub layout: Layout,
    pub device_column: String,
    pub timestamp_column: String,
    /// `chrono` format string; RFC 3339 and common ISO variants when absent.
    pub timestamp_format: Option<String>,
    pub flag_column: Option<String>,
    /// Wide layout: column header to channel. Long layout: channel label to
    /// channel; labels not listed are ignored.
    pub channels: BTreeMap<String, Channel>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub records: usize,
}

/// Loads a delimited raw file. The delimiter (`,` or `;`) is detected from the
/// header line.
pub fn load_raw(path: &Path, schema: &IngestSchema) -> Result<(Vec<RawRecord>, LoadReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_raw_from(file, schema).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path, message),
        other => other,
    })
}

pub fn load_raw_from<R: Read>(reader: R, schema: &IngestSchema) -> Result<(Vec<RawRecord>, LoadReport)> {
    let mut reader = BufReader::new(reader);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::io("<input>", e))?;
    if header.trim().is_empty() {
        return Ok((Vec::new(), LoadReport::default()));
    }
    let delimiter = detect_delimiter(&header);
    let stream = std::io::Cursor::new(header.into_bytes()).chain(reader);
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(stream);
    let headers = csv
        .headers()
        .map_err(|e| Error::parse("<input>", e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let device_col = col(&schema.device_column)?;
    let time_col = col(&schema.timestamp_column)?;
    let flag_col = schema.flag_column.as_deref().map(col).transpose()?;

    enum Columns {
        Wide(Vec<(usize, Channel)>),
        Long { channel: usize, value: usize },
    }
    let columns = match &schema.layout {
        Layout::Wide => {
            let mut cols = Vec::new();
            for (name, ch) in &schema.channels {
                cols.push((col(name)?, *ch));
            }
            Columns::Wide(cols)
        }
        Layout::Long {
            channel_column,
            value_column,
        } => Columns::Long {
            channel: col(channel_column)?,
            value: col(value_column)?,
        },
    };

    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for row in csv.records() {
        report.rows_read += 1;
        let Ok(row) = row else {
            report.rows_skipped += 1;
            continue;
        };
        let parsed = (|| -> Option<Vec<RawRecord>> {
            let device = row.get(device_col)?.to_string();
            if device.is_empty() {
                return None;
            }
            let timestamp = parse_timestamp(row.get(time_col)?, schema.timestamp_format.as_deref())?;
            let flag = match flag_col {
                Some(c) => parse_flag(row.get(c)?)?,
                None => 0,
            };
            let make = |channel: Channel, value: f64| RawRecord {
                device_id: device.clone(),
                timestamp,
                channel,
                value,
                flag,
            };
            let mut out = Vec::new();
            match &columns {
                Columns::Wide(cols) => {
                    for &(c, ch) in cols {
                        let cell = row.get(c).unwrap_or("");
                        if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                            continue;
                        }
                        let value: f64 = cell.parse().ok()?;
                        if !ch.accepts(value) {
                            return None;
                        }
                        out.push(make(ch, value));
                    }
                }
                Columns::Long { channel, value } => {
                    let label = row.get(*channel)?;
                    // Channels the schema does not name are not part of the study.
                    let Some(&ch) = schema.channels.get(label) else {
                        return Some(out);
                    };
                    let value: f64 = row.get(*value)?.parse().ok()?;
                    if !ch.accepts(value) {
                        return None;
                    }
                    out.push(make(ch, value));
                }
            }
            Some(out)
        })();
        match parsed {
            Some(recs) => records.extend(recs),
            None => report.rows_skipped += 1,
        }
    }
    records.sort_by(|a, b| {
        (&a.device_id, a.timestamp, a.channel).cmp(&(&b.device_id, b.timestamp, b.channel))
    });
    report.records = records.len();
    Ok((records, report))
}

fn detect_delimiter(header: &str) -> u8 {
    let semis = header.matches(';').count();
    let commas = header.matches(',').count();
    if semis > commas {
        b';'
    } else {
        b','
    }
}

fn parse_flag(cell: &str) -> Option<u16> {
    if cell.is_empty() {
        return Some(0);
    }
    cell.parse::<u16>()
        .ok()
        .or_else(|| cell.parse::<f64>().ok().filter(|v| v.fract() == 0.0 && *v >= 0.0).map(|v| v as u16))
}

/// Parses a timestamp as UTC and truncates it to the minute.
pub fn parse_timestamp(cell: &str, format: Option<&str>) -> Option<DateTime<Utc>> {
    let ts = match format {
        Some(fmt) => NaiveDateTime::parse_from_str(cell, fmt).ok()?.and_utc(),
        None => DateTime::parse_from_rfc3339(cell)
            .map(|t| t.with_timezone(&Utc))
            .ok()
            .or_else(|| {
                ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"]
                    .iter()
                    .find_map(|f| NaiveDateTime::parse_from_str(cell, f).ok())
                    .map(|t| t.and_utc())
            })?,
    };
    ts.duration_trunc(TimeDelta::minutes(1)).ok()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlagReport {
    pub removed_per_device: BTreeMap<String, usize>,
}

impl FlagReport {
    pub fn total(&self) -> usize {
        self.removed_per_device.values().sum()
    }
}

/// Removes records whose flag is in `bad_flags`.
pub fn apply_flags(records: Vec<RawRecord>, bad_flags: &BTreeSet<u16>) -> (Vec<RawRecord>, FlagReport) {
    let mut report = FlagReport::default();
    if bad_flags.is_empty() {
        return (records, report);
    }
    let kept = records
        .into_iter()
        .filter(|r| {
            let bad = bad_flags.contains(&r.flag);
            if bad {
                *report.removed_per_device.entry(r.device_id.clone()).or_default() += 1;
            }
            !bad
        })
        .collect();
    (kept, report)
}

/// Bijective device renaming table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RenameMap {
    forward: BTreeMap<String, String>,
}

impl RenameMap {
    pub fn new<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut forward = BTreeMap::new();
        let mut targets = BTreeSet::new();
        for (old, new) in pairs {
            let (old, new) = (old.into(), new.into());
            if !targets.insert(new.clone()) {
                return Err(Error::InvalidInput(format!("rename target `{new}` used twice")));
            }
            if forward.insert(old.clone(), new).is_some() {
                return Err(Error::InvalidInput(format!("device `{old}` renamed twice")));
            }
        }
        Ok(Self { forward })
    }

    /// Device names of the Antwerp deployment mapped to `ASE_Axx` labels.
    pub fn antwerp() -> Self {
        const PAIRS: [(&str, &str); 34] = [
            ("4065DA", "ASE_A01"),
            ("4065EA", "ASE_A02"),
            ("4043B1", "ASE_A03"),
            ("4049A6", "ASE_A04"),
            ("4067BD", "ASE_A05"),
            ("4043AE", "ASE_A06"),
            ("4067B3", "ASE_A07"),
            ("40642B", "ASE_A08"),
            ("4047D7", "ASE_A09"),
            ("40499C", "ASE_A13"),
            ("4043A7", "ASE_A14"),
            ("40499F", "ASE_A16"),
            ("406246", "ASE_A21"),
            ("4047CD", "ASE_A22"),
            ("4065E0", "ASE_A23"),
            ("402B00", "ASE_A24"),
            ("4065D3", "ASE_A25"),
            ("4067BA", "ASE_A26"),
            ("4065D0", "ASE_A27"),
            ("402723", "ASE_A28"),
            ("408168", "ASE_A29"),
            ("4047E7", "ASE_A30"),
            ("406424", "ASE_A31"),
            ("408165", "ASE_A32"),
            ("408175", "ASE_A33"),
            ("4047DD", "ASE_A34"),
            ("408178", "ASE_A35"),
            ("4067B0", "ASE_A36"),
            ("4065DD", "ASE_A37"),
            ("4065E3", "ASE_A38"),
            ("406249", "ASE_A39"),
            ("40623F", "ASE_A40"),
            ("4047E0", "ASE_A41"),
            ("40641B", "ASE_A42"),
        ];
        Self::new(PAIRS).expect("static table is bijective")
    }

    pub fn get(&self, old: &str) -> Option<&str> {
        self.forward.get(old).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.forward.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Devices in `devices` that the map does not cover.
    pub fn missing<'a>(&self, devices: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        devices
            .into_iter()
            .filter(|d| !self.forward.contains_key(*d))
            .map(str::to_string)
            .collect()
    }
}

/// Renames device ids. Ids in `keep` (reference stations) pass through
/// unchanged; any other id absent from `map` is an error.
pub fn rename(records: Vec<RawRecord>, map: &RenameMap, keep: &BTreeSet<String>) -> Result<Vec<RawRecord>> {
    let unknown: BTreeSet<&str> = records
        .iter()
        .map(|r| r.device_id.as_str())
        .filter(|id| map.get(id).is_none() && !keep.contains(*id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnmappedDevices(unknown.into_iter().map(str::to_string).collect()));
    }
    Ok(records
        .into_iter()
        .map(|mut r| {
            if let Some(new) = map.get(&r.device_id) {
                r.device_id = new.to_string();
            }
            r
        })
        .collect())
}

/// Converts a mixing ratio in ppb to µg·m⁻³ with the ideal gas law.
///
/// `pressure` in Pa, `temperature` in K, `molar_mass` in g·mol⁻¹.
pub fn ppb_to_ugm3(value: f64, pressure: f64, temperature: f64, molar_mass: f64) -> Result<f64> {
    if !(pressure > 0.0) || !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!(
            "pressure ({pressure} Pa) and temperature ({temperature} K) must be positive"
        )));
    }
    Ok(value * pressure * molar_mass / (1000.0 * GAS_CONSTANT * temperature))
}

/// Ambient conditions used when a record carries no pressure or temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atmosphere {
    pub pressure_pa: f64,
    pub temperature_k: f64,
}

impl Default for Atmosphere {
    fn default() -> Self {
        Self {
            pressure_pa: 101_325.0,
            temperature_k: 293.15,
        }
    }
}

/// Converts every `RefNo2` record from ppb to µg·m⁻³, using the pressure and
/// temperature recorded by the same device at the same minute when present.
pub fn convert_reference_ppb(records: Vec<RawRecord>, fallback: Atmosphere) -> Result<Vec<RawRecord>> {
    let mut met: HashMap<(&str, DateTime<Utc>), (Option<f64>, Option<f64>)> = HashMap::new();
    for r in &records {
        let entry = met.entry((&r.device_id, r.timestamp)).or_default();
        match r.channel {
            Channel::Pressure => entry.0 = Some(r.value * 100.0),
            Channel::Temp => entry.1 = Some(r.value + 273.15),
            _ => {}
        }
    }
    let converted: Vec<Option<f64>> = records
        .iter()
        .map(|r| {
            if r.channel != Channel::RefNo2 {
                return Ok(None);
            }
            let (p, t) = met.get(&(r.device_id.as_str(), r.timestamp)).copied().unwrap_or_default();
            ppb_to_ugm3(
                r.value,
                p.unwrap_or(fallback.pressure_pa),
                t.unwrap_or(fallback.temperature_k),
                MOLAR_MASS_NO2,
            )
            .map(Some)
        })
        .collect::<Result<_>>()?;
    Ok(records
        .into_iter()
        .zip(converted)
        .map(|(mut r, v)| {
            if let Some(v) = v {
                r.value = v;
            }
            r
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn long_schema() -> IngestSchema {
        IngestSchema {
            layout: Layout::Long {
                channel_column: "channel".into(),
                value_column: "value".into(),
            },
            device_column: "device".into(),
            timestamp_column: "time".into(),
            timestamp_format: None,
            flag_column: Some("flag".into()),
            channels: [("NO2".to_string(), Channel::No2), ("CO".to_string(), Channel::Co)]
                .into_iter()
                .collect(),
        }
    }

    fn load(text: &str, schema: &IngestSchema) -> Result<(Vec<RawRecord>, LoadReport)> {
        load_raw_from(text.as_bytes(), schema)
    }

    #[test]
    fn empty_input_gives_empty_stream() {
        let (recs, report) = load("", &long_schema()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report, LoadReport::default());
    }

    #[test]
    fn text_in_value_column_is_skipped() {
        let text = "device,time,channel,value,flag\n\
                    4065DA,2020-07-01T00:00:00Z,NO2,10.5,0\n\
                    4065DA,2020-07-01T00:01:00Z,NO2,11.5,0\n\
                    4065DA,2020-07-01T00:02:00Z,NO2,oops,0\n\
                    4065DA,2020-07-01T00:03:00Z,CO,250,0\n";
        let (recs, report) = load(text, &long_schema()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(report.rows_skipped, 1);
        assert_eq!(report.rows_read, 4);
        assert!(recs.iter().all(|r| r.device_id == "4065DA"));
    }

    #[test]
    fn semicolon_wide_file_and_minute_truncation() {
        let schema = IngestSchema {
            layout: Layout::Wide,
            device_column: "id".into(),
            timestamp_column: "date".into(),
            timestamp_format: Some("%Y-%m-%d %H:%M:%S".into()),
            flag_column: None,
            channels: [("no2".to_string(), Channel::No2), ("rh".to_string(), Channel::Rh)]
                .into_iter()
                .collect(),
        };
        let text = "id;date;no2;rh\nA;2020-07-01 00:00:42;1.5;60\nA;2020-07-01 00:01:00;;61\n";
        let (recs, report) = load(text, &schema).unwrap();
        assert_eq!(report.rows_skipped, 0);
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].timestamp.to_rfc3339(), "2020-07-01T00:00:00+00:00");
    }

    #[test]
    fn implausible_humidity_is_rejected() {
        let schema = IngestSchema {
            layout: Layout::Wide,
            device_column: "id".into(),
            timestamp_column: "date".into(),
            timestamp_format: None,
            flag_column: None,
            channels: [("rh".to_string(), Channel::Rh)].into_iter().collect(),
        };
        let (recs, report) = load("id,date,rh\nA,2020-07-01T00:00:00Z,250\n", &schema).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.rows_skipped, 1);
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = load("device,time,channel,flag,val\n", &long_schema()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "value"));
    }

    fn rec(device: &str, minute: u32, flag: u16) -> RawRecord {
        RawRecord {
            device_id: device.into(),
            timestamp: parse_timestamp(&format!("2020-07-01T00:{minute:02}:00Z"), None).unwrap(),
            channel: Channel::No2,
            value: minute as f64,
            flag,
        }
    }

    #[test]
    fn flags() {
        let recs: Vec<_> = (0..10).map(|m| rec("A", m, (m % 3) as u16)).collect();
        let (same, report) = apply_flags(recs.clone(), &BTreeSet::new());
        assert_eq!(same, recs);
        assert_eq!(report.total(), 0);

        let all: BTreeSet<u16> = [0, 1, 2].into();
        assert!(apply_flags(recs.clone(), &all).0.is_empty());

        let bad: BTreeSet<u16> = [1].into();
        let expected_good = recs.iter().filter(|r| r.flag != 1).count();
        let (kept, report) = apply_flags(recs.clone(), &bad);
        assert_eq!(kept.len(), expected_good);
        assert_eq!(report.removed_per_device["A"], recs.len() - expected_good);
        let (twice, _) = apply_flags(kept.clone(), &bad);
        assert_eq!(twice, kept);
    }

    #[test]
    fn renaming() {
        let map = RenameMap::antwerp();
        assert_eq!(map.len(), 34);
        assert_eq!(map.get("40499C"), Some("ASE_A13"));
        assert_eq!(map.get("4065DA"), Some("ASE_A01"));

        let keep: BTreeSet<String> = ["Ref_3".to_string()].into();
        let out = rename(vec![rec("40499C", 0, 0), rec("Ref_3", 0, 0)], &map, &keep).unwrap();
        assert_eq!(out[0].device_id, "ASE_A13");
        assert_eq!(out[1].device_id, "Ref_3");

        let identity = RenameMap::new([("A", "A")]).unwrap();
        let same = rename(vec![rec("A", 1, 0)], &identity, &BTreeSet::new()).unwrap();
        assert_eq!(same, vec![rec("A", 1, 0)]);

        match rename(vec![rec("XYZ", 0, 0)], &map, &keep) {
            Err(Error::UnmappedDevices(ids)) => assert_eq!(ids, vec!["XYZ".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rename_map_must_be_bijective() {
        assert!(RenameMap::new([("a", "x"), ("b", "x")]).is_err());
        assert!(RenameMap::new([("a", "x"), ("a", "y")]).is_err());
    }

    #[test]
    fn ppb_conversion_examples() {
        assert_eq!(ppb_to_ugm3(0.0, 101_325.0, 293.15, MOLAR_MASS_NO2).unwrap(), 0.0);
        // 10 * 101325 * 46.0055 / (1000 * 8.314 * 293.15)
        let v = ppb_to_ugm3(10.0, 101_325.0, 293.15, MOLAR_MASS_NO2).unwrap();
        assert!((v - 19.126_08).abs() < 1e-4, "{v}");
        let doubled = ppb_to_ugm3(10.0, 2.0 * 101_325.0, 293.15, MOLAR_MASS_NO2).unwrap();
        assert!((doubled - 2.0 * v).abs() < 1e-12);
        assert!(ppb_to_ugm3(1.0, 0.0, 293.15, MOLAR_MASS_NO2).is_err());
        assert!(ppb_to_ugm3(1.0, 101_325.0, -1.0, MOLAR_MASS_NO2).is_err());
    }

    #[test]
    fn reference_conversion_uses_own_met_channels() {
        let t = parse_timestamp("2020-07-01T00:00:00Z", None).unwrap();
        let mk = |channel, value| RawRecord {
            device_id: "Ref_1".into(),
            timestamp: t,
            channel,
            value,
            flag: 0,
        };
        let out = convert_reference_ppb(
            vec![mk(Channel::RefNo2, 10.0), mk(Channel::Pressure, 1000.0), mk(Channel::Temp, 10.0)],
            Atmosphere::default(),
        )
        .unwrap();
        let expected = ppb_to_ugm3(10.0, 100_000.0, 283.15, MOLAR_MASS_NO2).unwrap();
        assert_eq!(out[0].value, expected);
        assert_eq!(out[1].value, 1000.0);

        let alone = convert_reference_ppb(vec![mk(Channel::RefNo2, 10.0)], Atmosphere::default()).unwrap();
        assert_eq!(alone[0].value, ppb_to_ugm3(10.0, 101_325.0, 293.15, MOLAR_MASS_NO2).unwrap());
    }

    #[test]
    fn loading_is_deterministic() {
        let text = "device,time,channel,value,flag\nB,2020-07-01T00:01:00Z,NO2,1,0\nA,2020-07-01T00:02:00Z,CO,2,0\nA,2020-07-01T00:00:00Z,NO2,3,0\n";
        let a = load(text, &long_schema()).unwrap();
        let b = load(text, &long_schema()).unwrap();
        assert_eq!(a, b);
        let ids: Vec<_> = a.0.iter().map(|r| (r.device_id.as_str(), r.value)).collect();
        assert_eq!(ids, vec![("A", 3.0), ("A", 2.0), ("B", 1.0)]);
    }

    proptest! {
        #[test]
        fn conversion_linearity(v in 0.0f64..500.0, p in 5e4f64..1.1e5, t in 230.0f64..320.0, k in 0.1f64..10.0) {
            let base = ppb_to_ugm3(v, p, t, MOLAR_MASS_NO2).unwrap();
            let scaled_v = ppb_to_ugm3(k * v, p, t, MOLAR_MASS_NO2).unwrap();
            let scaled_p = ppb_to_ugm3(v, k * p, t, MOLAR_MASS_NO2).unwrap();
            let scaled_t = ppb_to_ugm3(v, p, k * t, MOLAR_MASS_NO2).unwrap();
            let tol = 1e-12 * base.abs().max(1.0) * k.max(1.0 / k);
            prop_assert!((scaled_v - k * base).abs() <= tol);
            prop_assert!((scaled_p - k * base).abs() <= tol);
            prop_assert!((scaled_t - base / k).abs() <= tol);
        }
    }
}
