//! Kernel-free linear calibration baselines.
//!
//! The collocated model regresses a station's reference concentrations on
//! the covariates of the sensor installed next to it. The non-collocated
//! model does the same with a station at a different, similar site.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::distance;
use crate::gwr::{fit_wls, CovariateSet, DesignSlice, LocalModel, ModelFamily, WlsOptions};
use crate::preprocess::{Panel, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// The sensor's own station.
    Collocated,
    /// Nearest station of the same typology class.
    MatchedTypology,
    /// Nearest station when no station shares the typology.
    Nearest,
    UserSpecified,
}

impl Provenance {
    pub fn token(self) -> &'static str {
        match self {
            Provenance::Collocated => "collocated",
            Provenance::MatchedTypology => "matched_typology",
            Provenance::Nearest => "nearest",
            Provenance::UserSpecified => "user_specified",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub station: String,
    pub provenance: Provenance,
}

/// Reference station supplying the response of each sensor's
/// non-collocated model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPlan {
    pairs: BTreeMap<String, Pairing>,
}

impl PairingPlan {
    /// Pairs every sensor with the nearest station of its typology class,
    /// never with the station it is collocated with.
    pub fn by_typology(panel: &Panel) -> Result<Self> {
        let stations = panel.sites_with_role(Role::Reference);
        let mut pairs = BTreeMap::new();
        for sensor in panel.sensor_sites() {
            let site = panel.site(sensor);
            let own = panel.station_of(sensor);
            let candidates: Vec<usize> = stations.iter().copied().filter(|&s| Some(s) != own).collect();
            let nearest = |pool: &mut dyn Iterator<Item = usize>| {
                pool.min_by(|&a, &b| {
                    let da = distance(site.position, panel.site(a).position);
                    let db = distance(site.position, panel.site(b).position);
                    da.total_cmp(&db).then(panel.site(a).id.cmp(&panel.site(b).id))
                })
            };
            let matched = nearest(&mut candidates.iter().copied().filter(|&s| panel.site(s).typology == site.typology));
            let (station, provenance) = match matched {
                Some(s) => (s, Provenance::MatchedTypology),
                None => match nearest(&mut candidates.iter().copied()) {
                    Some(s) => (s, Provenance::Nearest),
                    None => continue,
                },
            };
            pairs.insert(
                site.id.clone(),
                Pairing {
                    station: panel.site(station).id.clone(),
                    provenance,
                },
            );
        }
        Ok(Self { pairs })
    }

    /// Replaces the pairing of `sensor`.
    pub fn set(&mut self, panel: &Panel, sensor: &str, station: &str) -> Result<()> {
        let s = panel.site_index(sensor).ok_or_else(|| Error::UnknownSite(sensor.into()))?;
        let st = panel.site_index(station).ok_or_else(|| Error::UnknownSite(station.into()))?;
        if !panel.site(s).role.is_sensor() {
            return Err(Error::InvalidInput(format!("`{sensor}` is not a sensor")));
        }
        if panel.site(st).role != Role::Reference {
            return Err(Error::InvalidInput(format!("`{station}` is not a reference station")));
        }
        let provenance = if panel.station_of(s) == Some(st) {
            Provenance::Collocated
        } else {
            Provenance::UserSpecified
        };
        self.pairs.insert(
            sensor.to_string(),
            Pairing {
                station: station.to_string(),
                provenance,
            },
        );
        Ok(())
    }

    pub fn get(&self, sensor: &str) -> Option<&Pairing> {
        self.pairs.get(sensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Pairing)> {
        self.pairs.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn ols(slice: &DesignSlice, opts: &WlsOptions) -> Result<crate::gwr::WlsSolution> {
    fit_wls(slice, &vec![1.0; slice.n_rows()], opts)
}

/// Ordinary least squares on the site's own complete rows within the
/// sample.
pub fn fit_collocated(
    panel: &Panel,
    site: usize,
    covariates: &CovariateSet,
    include_hour: &(dyn Fn(usize) -> bool + Sync),
    opts: &WlsOptions,
) -> Result<LocalModel> {
    let s = panel.site(site);
    if s.role != Role::CollocatedSensor {
        return Err(Error::InvalidInput(format!("`{}` is not a collocated sensor", s.id)));
    }
    let slice = DesignSlice::from_panel(panel, covariates, &[site], include_hour);
    let sol = ols(&slice, opts)?;
    Ok(LocalModel::from_solution(
        s.id.clone(),
        s.position,
        ModelFamily::Collocated,
        covariates.clone(),
        None,
        sol,
    ))
}

/// Ordinary least squares of the paired station's reference on the sensor's
/// covariates at the hours both are present.
pub fn fit_noncollocated(
    panel: &Panel,
    sensor: usize,
    plan: &PairingPlan,
    covariates: &CovariateSet,
    include_hour: &(dyn Fn(usize) -> bool + Sync),
    opts: &WlsOptions,
) -> Result<LocalModel> {
    let s = panel.site(sensor);
    let pairing = plan
        .get(&s.id)
        .ok_or_else(|| Error::InvalidInput(format!("no pairing for sensor `{}`", s.id)))?;
    let station = panel
        .site_index(&pairing.station)
        .ok_or_else(|| Error::UnknownSite(pairing.station.clone()))?;
    let mut rows = Vec::new();
    for (h, cell) in panel.site_cells(sensor) {
        if !include_hour(h) {
            continue;
        }
        let (Ok(xs), Some(y)) = (covariates.extract(cell), panel.cell(station, h).and_then(|c| c.reference)) else {
            continue;
        };
        rows.push((xs, y));
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "sensor `{}` and station `{}` share no hours",
            s.id, pairing.station
        )));
    }
    let slice = DesignSlice::from_rows(covariates.clone(), &rows, &vec![sensor; rows.len()])?;
    let sol = ols(&slice, opts)?;
    Ok(LocalModel::from_solution(
        s.id.clone(),
        s.position,
        ModelFamily::NonCollocated,
        covariates.clone(),
        None,
        sol,
    ))
}
