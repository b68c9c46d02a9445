//! Minute → quarter-hour → hour aggregation and the hourly site panel.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, DurationRound, NaiveDate, TimeDelta, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Position;
use crate::ingest::{Channel, RawRecord};

/// Minutes needed for a quarter-hour mean (75% of 15).
pub const MIN_MINUTES_PER_QUARTER: usize = 12;
/// Quarter-hours needed for an hourly mean.
pub const MIN_QUARTERS_PER_HOUR: usize = 3;

pub const PANEL_FILE: &str = "panel.csv";
pub const SITES_FILE: &str = "sites.csv";

/// Mean of one channel of one device over an aligned interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMean {
    pub device_id: String,
    pub channel: Channel,
    /// Interval start (:00/:15/:30/:45 for quarters, :00 for hours), UTC.
    pub start: DateTime<Utc>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AggregationReport {
    pub emitted: usize,
    /// Intervals with some data but below the coverage threshold.
    pub dropped: usize,
}

type SeriesKey = (String, Channel, DateTime<Utc>);

fn aggregate(
    items: impl Iterator<Item = (String, Channel, DateTime<Utc>, f64)>,
    width: TimeDelta,
    min_count: usize,
) -> (Vec<IntervalMean>, AggregationReport) {
    let mut groups: BTreeMap<SeriesKey, (f64, usize)> = BTreeMap::new();
    for (device, channel, t, v) in items {
        let start = t.duration_trunc(width).expect("aligned bucket");
        let g = groups.entry((device, channel, start)).or_insert((0.0, 0));
        g.0 += v;
        g.1 += 1;
    }
    let mut report = AggregationReport::default();
    let mut out = Vec::with_capacity(groups.len());
    for ((device_id, channel, start), (sum, n)) in groups {
        if n >= min_count {
            out.push(IntervalMean {
                device_id,
                channel,
                start,
                value: sum / n as f64,
            });
            report.emitted += 1;
        } else {
            report.dropped += 1;
        }
    }
    (out, report)
}

/// Quarter-hour means, kept only when at least 12 distinct minutes have a
/// value. Repeated records for one minute are averaged first.
pub fn minutes_to_quarters(records: &[RawRecord]) -> (Vec<IntervalMean>, AggregationReport) {
    let (minutes, _) = aggregate(
        records
            .iter()
            .map(|r| (r.device_id.clone(), r.channel, r.timestamp, r.value)),
        TimeDelta::minutes(1),
        1,
    );
    aggregate(
        minutes.into_iter().map(|m| (m.device_id, m.channel, m.start, m.value)),
        TimeDelta::minutes(15),
        MIN_MINUTES_PER_QUARTER,
    )
}

/// Hourly means of quarter means, kept only when at least 3 quarters exist.
pub fn quarters_to_hours(quarters: &[IntervalMean]) -> (Vec<IntervalMean>, AggregationReport) {
    aggregate(
        quarters
            .iter()
            .map(|q| (q.device_id.clone(), q.channel, q.start, q.value)),
        TimeDelta::hours(1),
        MIN_QUARTERS_PER_HOUR,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reference,
    CollocatedSensor,
    DeployedSensor,
}

impl Role {
    pub fn token(self) -> &'static str {
        match self {
            Role::Reference => "reference",
            Role::CollocatedSensor => "collocated_sensor",
            Role::DeployedSensor => "deployed_sensor",
        }
    }

    pub fn is_sensor(self) -> bool {
        self != Role::Reference
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Role::Reference),
            "collocated_sensor" => Ok(Role::CollocatedSensor),
            "deployed_sensor" => Ok(Role::DeployedSensor),
            other => Err(Error::InvalidInput(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Typology {
    UrbanTraffic,
    UrbanIndustry,
    UrbanBackground,
    SuburbanTraffic,
    SuburbanBackground,
}

impl Typology {
    pub const ALL: [Typology; 5] = [
        Typology::UrbanTraffic,
        Typology::UrbanIndustry,
        Typology::UrbanBackground,
        Typology::SuburbanTraffic,
        Typology::SuburbanBackground,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Typology::UrbanTraffic => "urban_traffic",
            Typology::UrbanIndustry => "urban_industry",
            Typology::UrbanBackground => "urban_background",
            Typology::SuburbanTraffic => "suburban_traffic",
            Typology::SuburbanBackground => "suburban_background",
        }
    }
}

impl FromStr for Typology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Typology::ALL
            .into_iter()
            .find(|t| t.token() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown typology `{s}`")))
    }
}

impl fmt::Display for Typology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// A measurement location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub id: String,
    pub position: Position,
    pub role: Role,
    pub typology: Typology,
    /// Id of the reference station a collocated sensor shares its site with.
    pub reference: Option<String>,
}

/// One hour of a site: sensor channels and, where available, the reference
/// concentration in µg·m⁻³.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimedSample {
    pub values: [Option<f64>; 6],
    pub reference: Option<f64>,
}

impl TimedSample {
    pub fn get(&self, channel: Channel) -> Option<f64> {
        match channel.sensor_index() {
            Some(i) => self.values[i],
            None => self.reference,
        }
    }

    pub fn set(&mut self, channel: Channel, value: Option<f64>) {
        match channel.sensor_index() {
            Some(i) => self.values[i] = value,
            None => self.reference = value,
        }
    }

    pub fn has_all(&self, channels: &[Channel]) -> bool {
        channels.iter().all(|c| self.get(*c).is_some())
    }
}

/// Per-site tallies from panel assembly.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PanelReport {
    pub cells_per_site: BTreeMap<String, usize>,
    pub incomplete_dropped: BTreeMap<String, usize>,
}

/// Hourly, site-indexed observation table.
///
/// Sensor cells always hold every required channel. Reference stations hold
/// the reference concentration only; a collocated sensor cell carries the
/// reference value of its paired station at the same hour.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    sites: Vec<SiteRecord>,
    index: HashMap<String, usize>,
    hours: Vec<DateTime<Utc>>,
    cells: BTreeMap<(usize, usize), TimedSample>,
    required: Vec<Channel>,
}

impl Panel {
    /// Assembles a panel from per-site hourly samples. Sensor samples missing
    /// any of `required` are dropped and tallied.
    pub fn assemble(
        sites: Vec<SiteRecord>,
        samples: impl IntoIterator<Item = (String, DateTime<Utc>, TimedSample)>,
        required: &[Channel],
    ) -> Result<(Self, PanelReport)> {
        let mut index = HashMap::new();
        for (i, s) in sites.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate site id `{}`", s.id)));
            }
            if !s.position.is_finite() {
                return Err(Error::InvalidInput(format!("site `{}` has a non-finite position", s.id)));
            }
        }
        if required.contains(&Channel::RefNo2) {
            return Err(Error::InvalidInput("the reference channel cannot be a covariate".into()));
        }
        for s in &sites {
            match (s.role, &s.reference) {
                (Role::CollocatedSensor, Some(r)) => match index.get(r) {
                    Some(&j) if sites[j].role == Role::Reference => {}
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "collocated sensor `{}` names `{r}`, which is not a reference station",
                            s.id
                        )))
                    }
                },
                (Role::CollocatedSensor, None) => {
                    return Err(Error::InvalidInput(format!(
                        "collocated sensor `{}` has no paired reference station",
                        s.id
                    )))
                }
                _ => {}
            }
        }

        let mut report = PanelReport::default();
        for s in &sites {
            report.cells_per_site.insert(s.id.clone(), 0);
        }
        let mut raw: BTreeMap<(usize, DateTime<Utc>), TimedSample> = BTreeMap::new();
        for (id, hour, mut sample) in samples {
            let &site = index.get(&id).ok_or_else(|| Error::UnknownSite(id.clone()))?;
            if sites[site].role == Role::Reference {
                sample.values = [None; 6];
                if sample.reference.is_none() {
                    continue;
                }
            } else {
                sample.reference = None;
                if !sample.has_all(required) {
                    *report.incomplete_dropped.entry(id).or_default() += 1;
                    continue;
                }
            }
            if raw.insert((site, hour), sample).is_some() {
                return Err(Error::InvalidInput(format!("duplicate sample for `{id}` at {hour}")));
            }
        }

        let hours: Vec<DateTime<Utc>> = raw
            .keys()
            .map(|(_, h)| *h)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let hour_index: HashMap<DateTime<Utc>, usize> =
            hours.iter().enumerate().map(|(i, h)| (*h, i)).collect();
        let mut cells: BTreeMap<(usize, usize), TimedSample> = raw
            .into_iter()
            .map(|((s, h), v)| ((s, hour_index[&h]), v))
            .collect();

        let station_of: Vec<Option<usize>> = sites
            .iter()
            .map(|s| match s.role {
                Role::CollocatedSensor => s.reference.as_ref().map(|r| index[r]),
                _ => None,
            })
            .collect();
        let links: Vec<((usize, usize), Option<f64>)> = cells
            .keys()
            .filter_map(|&(s, h)| {
                station_of[s].map(|st| ((s, h), cells.get(&(st, h)).and_then(|c| c.reference)))
            })
            .collect();
        for (key, reference) in links {
            cells.get_mut(&key).expect("key from map").reference = reference;
        }
        for &(s, _) in cells.keys() {
            *report.cells_per_site.get_mut(&sites[s].id).expect("site") += 1;
        }

        Ok((
            Self {
                sites,
                index,
                hours,
                cells,
                required: required.to_vec(),
            },
            report,
        ))
    }

    pub fn sites(&self) -> &[SiteRecord] {
        &self.sites
    }

    pub fn site(&self, idx: usize) -> &SiteRecord {
        &self.sites[idx]
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn hours(&self) -> &[DateTime<Utc>] {
        &self.hours
    }

    pub fn hour(&self, idx: usize) -> DateTime<Utc> {
        self.hours[idx]
    }

    pub fn required_channels(&self) -> &[Channel] {
        &self.required
    }

    pub fn cell(&self, site: usize, hour: usize) -> Option<&TimedSample> {
        self.cells.get(&(site, hour))
    }

    /// Cells of one site in hour order.
    pub fn site_cells(&self, site: usize) -> impl Iterator<Item = (usize, &TimedSample)> + '_ {
        self.cells
            .range((site, 0)..(site + 1, 0))
            .map(|(&(_, h), c)| (h, c))
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, &TimedSample)> + '_ {
        self.cells.iter().map(|(&(s, h), c)| (s, h, c))
    }

    pub fn cell_count(&self, site: usize) -> usize {
        self.site_cells(site).count()
    }

    pub fn sensor_sites(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.sites.len()).filter(|&i| self.sites[i].role.is_sensor())
    }

    pub fn sites_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.sites.len()).filter(|&i| self.sites[i].role == role).collect()
    }

    /// Index of the reference station paired with a collocated sensor.
    pub fn station_of(&self, site: usize) -> Option<usize> {
        match self.sites[site].role {
            Role::CollocatedSensor => self.sites[site].reference.as_deref().and_then(|r| self.site_index(r)),
            Role::Reference => Some(site),
            Role::DeployedSensor => None,
        }
    }

    pub fn hour_of_day(&self, hour: usize) -> u32 {
        self.hours[hour].hour()
    }

    pub fn day_of(&self, hour: usize) -> NaiveDate {
        self.hours[hour].date_naive()
    }

    /// A copy with sensor values replaced through `f(site, channel, value)`.
    /// Reference values are untouched.
    pub fn map_sensor_values(&self, mut f: impl FnMut(usize, Channel, f64) -> f64) -> Panel {
        let mut out = self.clone();
        for (&(s, _), cell) in out.cells.iter_mut() {
            for (i, ch) in Channel::SENSOR.iter().enumerate() {
                if let Some(v) = cell.values[i] {
                    cell.values[i] = Some(f(s, *ch, v));
                }
            }
        }
        out
    }

    /// A copy with the reference values of `site` (and of the sensors
    /// collocated with it, when `site` is a station) replaced by `value`.
    pub fn with_reference_replaced(&self, site: usize, value: f64) -> Panel {
        let mut out = self.clone();
        let station = self.station_of(site);
        for (&(s, _), cell) in out.cells.iter_mut() {
            let hit = s == site || (station.is_some() && self.station_of(s) == station);
            if hit && cell.reference.is_some() {
                cell.reference = Some(value);
            }
        }
        out
    }
}

/// Builds the panel from hourly means. Devices absent from the registry are
/// an error.
pub fn build_panel(
    hourly: &[IntervalMean],
    sites: Vec<SiteRecord>,
    required: &[Channel],
) -> Result<(Panel, PanelReport)> {
    let known: BTreeSet<&str> = sites.iter().map(|s| s.id.as_str()).collect();
    if let Some(unknown) = hourly.iter().find(|h| !known.contains(h.device_id.as_str())) {
        return Err(Error::UnknownSite(unknown.device_id.clone()));
    }
    let mut samples: BTreeMap<(String, DateTime<Utc>), TimedSample> = BTreeMap::new();
    for h in hourly {
        samples
            .entry((h.device_id.clone(), h.start))
            .or_default()
            .set(h.channel, Some(h.value));
    }
    Panel::assemble(
        sites,
        samples.into_iter().map(|((id, t), s)| (id, t, s)),
        required,
    )
}

const HOUR_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Writes `panel.csv` and `sites.csv` into `dir`. Values use the shortest
/// exact decimal representation, so reading back reproduces the panel.
pub fn write_panel(panel: &Panel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sites_path = dir.join(SITES_FILE);
    let mut w = csv::Writer::from_path(&sites_path).map_err(|e| csv_err(&sites_path, e))?;
    let write = |w: &mut csv::Writer<fs::File>, row: &[String]| w.write_record(row).map_err(|e| csv_err(&sites_path, e));
    write(&mut w, &["id", "x", "y", "role", "typology", "reference"].map(String::from))?;
    for s in &panel.sites {
        write(
            &mut w,
            &[
                s.id.clone(),
                format!("{}", s.position.x),
                format!("{}", s.position.y),
                s.role.token().into(),
                s.typology.token().into(),
                s.reference.clone().unwrap_or_default(),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(&sites_path, e))?;

    let panel_path = dir.join(PANEL_FILE);
    let mut w = csv::Writer::from_path(&panel_path).map_err(|e| csv_err(&panel_path, e))?;
    let mut header = vec!["site".to_string(), "hour".to_string()];
    header.extend(Channel::SENSOR.iter().map(|c| c.token().to_string()));
    header.push(Channel::RefNo2.token().into());
    w.write_record(&header).map_err(|e| csv_err(&panel_path, e))?;
    for (s, h, cell) in panel.cells() {
        let site = &panel.sites[s];
        let mut row = vec![site.id.clone(), panel.hours[h].format(HOUR_FORMAT).to_string()];
        row.extend(cell.values.iter().map(|v| fmt_opt(*v)));
        // Collocated sensors get their reference from the station on read.
        let reference = if site.role == Role::Reference { cell.reference } else { None };
        row.push(fmt_opt(reference));
        w.write_record(&row).map_err(|e| csv_err(&panel_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&panel_path, e))?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

pub fn read_sites(path: &Path) -> Result<Vec<SiteRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut sites = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| Error::parse(path, format!("row {}: bad {what}", line + 2));
        let field = |i: usize| row.get(i).unwrap_or("");
        let reference = field(5);
        sites.push(SiteRecord {
            id: field(0).to_string(),
            position: Position::new(
                field(1).parse().map_err(|_| bad("x"))?,
                field(2).parse().map_err(|_| bad("y"))?,
            ),
            role: field(3).parse().map_err(|_| bad("role"))?,
            typology: field(4).parse().map_err(|_| bad("typology"))?,
            reference: (!reference.is_empty()).then(|| reference.to_string()),
        });
    }
    Ok(sites)
}

/// Reads a panel written by [`write_panel`].
pub fn read_panel(dir: &Path, required: &[Channel]) -> Result<(Panel, PanelReport)> {
    let sites = read_sites(&dir.join(SITES_FILE))?;
    let path = dir.join(PANEL_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let headers = r.headers().map_err(|e| csv_err(&path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.into()));
    let site_col = col("site")?;
    let hour_col = col("hour")?;
    let mut channel_cols = Vec::new();
    for ch in Channel::SENSOR.iter().chain(std::iter::once(&Channel::RefNo2)) {
        if let Ok(c) = col(ch.token()) {
            channel_cols.push((c, *ch));
        }
    }
    let mut samples = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(&path, e))?;
        let bad = |what: &str| Error::parse(&path, format!("row {}: bad {what}", line + 2));
        let hour = chrono::NaiveDateTime::parse_from_str(row.get(hour_col).unwrap_or(""), HOUR_FORMAT)
            .map_err(|_| bad("hour"))?
            .and_utc();
        let mut sample = TimedSample::default();
        for &(c, ch) in &channel_cols {
            let cell = row.get(c).unwrap_or("");
            if !cell.is_empty() {
                sample.set(ch, Some(cell.parse().map_err(|_| bad(ch.token()))?));
            }
        }
        samples.push((row.get(site_col).unwrap_or("").to_string(), hour, sample));
    }
    Panel::assemble(sites, samples, required)
}
