//! Synthetic sensor networks with known coefficient fields, and an
//! independent least-squares oracle.
//!
//! Every station site gets a collocated sensor at the same position; deployed
//! sensors have no reference. True covariates follow a city-wide diurnal
//! signal plus AR(1) noise, with an optional site-local AR(1) component. The
//! reference is `β*(s)·[1, x] + ε` on the true covariates, while gas
//! channels seen by each sensor carry a per-sensor gain and offset.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BoundingBox, Position};
use crate::gwr::{dot, CovariateSet, DesignSlice};
use crate::ingest::Channel;
use crate::preprocess::{Panel, Role, SiteRecord, TimedSample, Typology};

/// A true coefficient as a function of position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Field {
    Constant {
        value: f64,
    },
    /// `base + gradient · (s − domain center)`.
    Linear {
        base: f64,
        gradient: [f64; 2],
    },
    Bump {
        base: f64,
        amplitude: f64,
        center: [f64; 2],
        length: f64,
    },
    /// Stationary Gaussian-correlated field, `corr(d) = exp(−d²/2L²)`,
    /// drawn with random Fourier features.
    Smooth {
        base: f64,
        amplitude: f64,
        length: f64,
        #[serde(default = "default_features")]
        features: usize,
    },
}

fn default_features() -> usize {
    64
}

impl Field {
    pub fn constant(value: f64) -> Self {
        Field::Constant { value }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Field::Constant { value } => value.is_finite(),
            Field::Linear { base, gradient } => base.is_finite() && gradient.iter().all(|g| g.is_finite()),
            Field::Bump { length, .. } | Field::Smooth { length, .. } => *length > 0.0 && length.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid coefficient field {self:?}")))
        }
    }
}

/// A field with its random features drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedField {
    field: Field,
    center: Position,
    features: Vec<(f64, f64, f64)>,
}

impl RealizedField {
    fn draw(field: &Field, domain: &BoundingBox, rng: &mut ChaCha8Rng) -> Self {
        let features = match field {
            Field::Smooth { length, features, .. } => (0..*features)
                .map(|_| {
                    let wx: f64 = rng.sample::<f64, _>(StandardNormal) / length;
                    let wy: f64 = rng.sample::<f64, _>(StandardNormal) / length;
                    (wx, wy, rng.random_range(0.0..2.0 * PI))
                })
                .collect(),
            _ => Vec::new(),
        };
        Self {
            field: field.clone(),
            center: Position::new(0.5 * (domain.min_x + domain.max_x), 0.5 * (domain.min_y + domain.max_y)),
            features,
        }
    }

    pub fn at(&self, s: Position) -> f64 {
        match &self.field {
            Field::Constant { value } => *value,
            Field::Linear { base, gradient } => {
                base + gradient[0] * (s.x - self.center.x) + gradient[1] * (s.y - self.center.y)
            }
            Field::Bump {
                base,
                amplitude,
                center,
                length,
            } => {
                let d2 = (s.x - center[0]).powi(2) + (s.y - center[1]).powi(2);
                base + amplitude * (-0.5 * d2 / (length * length)).exp()
            }
            Field::Smooth { base, amplitude, .. } => {
                let m = self.features.len().max(1) as f64;
                let sum: f64 = self.features.iter().map(|(wx, wy, ph)| (wx * s.x + wy * s.y + ph).cos()).sum();
                base + amplitude * (2.0 / m).sqrt() * sum
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    Uniform,
    /// Near-square grid over the domain; each site moved by up to `jitter`
    /// cell widths.
    Grid { jitter: f64 },
}

/// Typical level and spread of each sensor channel.
fn channel_scale(ch: Channel) -> (f64, f64) {
    match ch {
        Channel::No2 => (60.0, 20.0),
        Channel::No => (100.0, 40.0),
        Channel::Co => (300.0, 80.0),
        Channel::Rh => (65.0, 12.0),
        Channel::Temp => (14.0, 6.0),
        Channel::Pressure => (1013.0, 8.0),
        Channel::RefNo2 => (40.0, 15.0),
    }
}

fn is_gas(ch: Channel) -> bool {
    matches!(ch, Channel::No2 | Channel::No | Channel::Co)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Reference stations, each with a collocated sensor.
    pub stations: usize,
    pub deployed: usize,
    pub domain: BoundingBox,
    pub layout: Layout,
    pub covariates: CovariateSet,
    /// One field per coefficient, intercept first.
    pub coefficients: Vec<Field>,
    /// Standard deviation of the reference noise, µg·m⁻³.
    pub noise_sigma: f64,
    /// Optional hour-of-day multipliers of `noise_sigma` (24 entries).
    pub noise_profile: Option<Vec<f64>>,
    /// Gains of gas channels are drawn from `1 ± gain_spread`.
    pub gain_spread: f64,
    /// Offsets of gas channels are drawn from `± offset_spread ·` channel level.
    pub offset_spread: f64,
    /// Site-local covariate fluctuation relative to the city-wide one; zero
    /// gives every site identical true covariates.
    pub site_variation: f64,
    pub hours: usize,
    pub start: DateTime<Utc>,
    /// Probability that a sensor or reference hour is missing.
    pub dropout: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            stations: 9,
            deployed: 3,
            domain: BoundingBox {
                min_x: 0.0,
                min_y: 0.0,
                max_x: 6000.0,
                max_y: 6000.0,
            },
            layout: Layout::Grid { jitter: 0.25 },
            covariates: CovariateSet::gwr5(),
            coefficients: vec![
                Field::Linear {
                    base: 5.0,
                    gradient: [6e-4, -4e-4],
                },
                Field::Linear {
                    base: 0.1,
                    gradient: [1e-5, 0.0],
                },
                Field::constant(0.05),
                Field::Linear {
                    base: -0.1,
                    gradient: [0.0, 1e-5],
                },
                Field::constant(0.3),
                Field::Bump {
                    base: 0.5,
                    amplitude: 0.1,
                    center: [3000.0, 3000.0],
                    length: 2000.0,
                },
            ],
            noise_sigma: 5.0,
            noise_profile: None,
            gain_spread: 0.0,
            offset_spread: 0.0,
            site_variation: 0.3,
            hours: 960,
            start: Utc.with_ymd_and_hms(2020, 7, 1, 0, 0, 0).single().expect("valid date"),
            dropout: 0.0,
        }
    }
}

impl SynthSpec {
    /// Coefficient fields constant at `beta`, no noise, no distortion, and
    /// identical covariates everywhere.
    pub fn exact(beta: &[f64]) -> Self {
        Self {
            coefficients: beta.iter().map(|b| Field::constant(*b)).collect(),
            noise_sigma: 0.0,
            site_variation: 0.0,
            ..Self::default()
        }
    }

    /// A 25-station city whose intercept and NO₂ coefficient are smooth
    /// random fields with correlation length `length`. Stations sit on a
    /// jittered grid with spacing `1.5 · length`.
    pub fn correlated_city(length: f64) -> Self {
        let side = 5.0 * 1.5 * length;
        Self {
            stations: 25,
            deployed: 0,
            domain: BoundingBox {
                min_x: 0.0,
                min_y: 0.0,
                max_x: side,
                max_y: side,
            },
            layout: Layout::Grid { jitter: 0.25 },
            coefficients: vec![
                Field::Smooth {
                    base: 5.0,
                    amplitude: 5.0,
                    length,
                    features: default_features(),
                },
                Field::constant(0.1),
                Field::constant(0.05),
                Field::constant(-0.1),
                Field::constant(0.3),
                Field::Smooth {
                    base: 0.5,
                    amplitude: 0.15,
                    length,
                    features: default_features(),
                },
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("synthetic spec: {m}")));
        if self.stations == 0 {
            return bad("at least one station is required");
        }
        if self.coefficients.len() != self.covariates.n_coefficients() {
            return bad("one coefficient field per covariate plus the intercept is required");
        }
        for f in &self.coefficients {
            f.validate()?;
        }
        if !(self.noise_sigma >= 0.0) || !(self.site_variation >= 0.0) {
            return bad("noise and site variation must be non-negative");
        }
        if !(0.0..1.0).contains(&self.gain_spread) || !(self.offset_spread >= 0.0) {
            return bad("gain spread must lie in [0, 1) and offset spread be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if let Some(p) = &self.noise_profile {
            if p.len() != 24 || p.iter().any(|v| !(*v >= 0.0)) {
                return bad("noise profile needs 24 non-negative entries");
            }
        }
        if self.hours == 0 {
            return bad("at least one hour is required");
        }
        BoundingBox::new(self.domain.min_x, self.domain.min_y, self.domain.max_x, self.domain.max_y)?;
        Ok(())
    }

    fn sigma_at(&self, hour_of_day: usize) -> f64 {
        self.noise_sigma * self.noise_profile.as_ref().map_or(1.0, |p| p[hour_of_day])
    }
}

/// Ground truth of a generated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub fields: Vec<RealizedField>,
    /// True coefficients at every site.
    pub beta: BTreeMap<String, Vec<f64>>,
    /// Noise-free response at every site and hour.
    pub clean: BTreeMap<(String, usize), f64>,
    /// `(gain, offset)` of each sensor channel, in covariate order.
    pub distortion: BTreeMap<String, Vec<(f64, f64)>>,
}

impl SynthTruth {
    pub fn beta_at(&self, s: Position) -> Vec<f64> {
        self.fields.iter().map(|f| f.at(s)).collect()
    }
}

fn positions(spec: &SynthSpec, n: usize, layout: Layout, rng: &mut ChaCha8Rng) -> Vec<Position> {
    let d = &spec.domain;
    match layout {
        Layout::Uniform => (0..n)
            .map(|_| {
                Position::new(
                    rng.random_range(d.min_x..d.max_x),
                    rng.random_range(d.min_y..d.max_y),
                )
            })
            .collect(),
        Layout::Grid { jitter } => {
            let cols = (n as f64).sqrt().ceil() as usize;
            let rows = n.div_ceil(cols);
            let (cw, ch) = (d.width() / cols as f64, d.height() / rows as f64);
            (0..n)
                .map(|k| {
                    let (i, j) = (k % cols, k / cols);
                    let jx = jitter * cw * rng.random_range(-1.0..1.0);
                    let jy = jitter * ch * rng.random_range(-1.0..1.0);
                    Position::new(
                        d.min_x + (i as f64 + 0.5) * cw + jx,
                        d.min_y + (j as f64 + 0.5) * ch + jy,
                    )
                })
                .collect()
        }
    }
}

/// Unit-variance AR(1) series.
fn ar1(n: usize, phi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut v = rng.sample::<f64, _>(StandardNormal);
    (0..n)
        .map(|_| {
            let out = v;
            v = phi * v + innov * rng.sample::<f64, _>(StandardNormal);
            out
        })
        .collect()
}

const AR_PHI: f64 = 0.9;

/// Generates a panel and its ground truth. The same settings and seed always
/// give the same output.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<(Panel, SynthTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let covs = spec.covariates.channels().to_vec();
    let n = spec.hours;

    let station_pos = positions(spec, spec.stations, spec.layout, &mut rng);
    let deployed_pos = positions(spec, spec.deployed, Layout::Uniform, &mut rng);
    let fields: Vec<RealizedField> = spec
        .coefficients
        .iter()
        .map(|f| RealizedField::draw(f, &spec.domain, &mut rng))
        .collect();

    let mut sites = Vec::new();
    let mut sensors: Vec<(String, Position)> = Vec::new();
    for (i, p) in station_pos.iter().enumerate() {
        let typology = Typology::ALL[i % Typology::ALL.len()];
        let station = format!("REF_{:02}", i + 1);
        let sensor = format!("SYN_C{:02}", i + 1);
        sites.push(SiteRecord {
            id: station.clone(),
            position: *p,
            role: Role::Reference,
            typology,
            reference: None,
        });
        sites.push(SiteRecord {
            id: sensor.clone(),
            position: *p,
            role: Role::CollocatedSensor,
            typology,
            reference: Some(station),
        });
        sensors.push((sensor, *p));
    }
    for (i, p) in deployed_pos.iter().enumerate() {
        let id = format!("SYN_D{:02}", i + 1);
        sites.push(SiteRecord {
            id: id.clone(),
            position: *p,
            role: Role::DeployedSensor,
            typology: Typology::ALL[i % Typology::ALL.len()],
            reference: None,
        });
        sensors.push((id, *p));
    }

    // city-wide signal: diurnal cycle with a per-channel phase plus AR(1)
    let city: Vec<Vec<f64>> = covs
        .iter()
        .map(|ch| {
            let (level, spread) = channel_scale(*ch);
            let phase = rng.random_range(0.0..2.0 * PI);
            let ar = ar1(n, AR_PHI, &mut rng);
            (0..n)
                .map(|t| {
                    let diurnal = (2.0 * PI * (t % 24) as f64 / 24.0 + phase).sin();
                    level + spread * (0.8 * diurnal + 0.6 * ar[t])
                })
                .collect()
        })
        .collect();

    let hours: Vec<DateTime<Utc>> = (0..n).map(|t| spec.start + TimeDelta::hours(t as i64)).collect();
    let mut truth = SynthTruth {
        fields,
        beta: BTreeMap::new(),
        clean: BTreeMap::new(),
        distortion: BTreeMap::new(),
    };
    let mut samples = Vec::new();
    for (k, (id, pos)) in sensors.iter().enumerate() {
        let beta = truth.beta_at(*pos);
        let local: Vec<Vec<f64>> = covs.iter().map(|_| ar1(n, AR_PHI, &mut rng)).collect();
        let distortion: Vec<(f64, f64)> = covs
            .iter()
            .map(|ch| {
                let g = 1.0 + spec.gain_spread * rng.random_range(-1.0..1.0);
                let o = spec.offset_spread * channel_scale(*ch).0 * rng.random_range(-1.0..1.0);
                if is_gas(*ch) {
                    (g, o)
                } else {
                    (1.0, 0.0)
                }
            })
            .collect();
        let station = (k < spec.stations).then(|| format!("REF_{:02}", k + 1));
        for t in 0..n {
            let x: Vec<f64> = covs
                .iter()
                .enumerate()
                .map(|(i, ch)| {
                    let v = city[i][t] + spec.site_variation * channel_scale(*ch).1 * local[i][t];
                    if *ch == Channel::Rh {
                        v.clamp(0.0, 100.0)
                    } else {
                        v
                    }
                })
                .collect();
            let clean = beta[0] + dot(&beta[1..], &x);
            let noise = spec.sigma_at(t % 24) * rng.sample::<f64, _>(StandardNormal);
            let sensor_missing = rng.random::<f64>() < spec.dropout;
            let reference_missing = rng.random::<f64>() < spec.dropout;
            truth.clean.insert((id.clone(), t), clean);
            if let Some(station) = &station {
                truth.clean.insert((station.clone(), t), clean);
                if !reference_missing {
                    let s = TimedSample {
                        values: [None; 6],
                        reference: Some(clean + noise),
                    };
                    samples.push((station.clone(), hours[t], s));
                }
            }
            if !sensor_missing {
                let mut s = TimedSample::default();
                for (i, ch) in covs.iter().enumerate() {
                    let (g, o) = distortion[i];
                    s.set(*ch, Some(g * x[i] + o));
                }
                samples.push((id.clone(), hours[t], s));
            }
        }
        if let Some(station) = station {
            truth.beta.insert(station, beta.clone());
        }
        truth.beta.insert(id.clone(), beta);
        truth.distortion.insert(id.clone(), distortion);
    }
    let (panel, _) = Panel::assemble(sites, samples, &covs)?;
    Ok((panel, truth))
}

/// Ordinary least squares by Householder QR of the design matrix.
pub fn oracle_ols(slice: &DesignSlice) -> Result<Vec<f64>> {
    oracle_wls(slice, &vec![1.0; slice.n_rows()])
}

/// Weighted least squares by QR of the `√w`-scaled design.
pub fn oracle_wls(slice: &DesignSlice, weights: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = (slice.n_rows(), slice.p());
    if n < p {
        return Err(Error::InsufficientData(format!("{n} rows for {p} coefficients")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| weights[i].sqrt() * slice.row(i)[j]);
    let y = DVector::from_fn(n, |i, _| weights[i].sqrt() * slice.response()[i]);
    let qr = x.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12 * max) {
        return Err(Error::SingularFit {
            condition: (max / min).powi(2),
        });
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularFit { condition: f64::INFINITY })?;
    Ok(beta.iter().copied().collect())
}
