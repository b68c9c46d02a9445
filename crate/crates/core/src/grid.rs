//! Coefficient fields evaluated on a regular raster.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fmt::sig;
use crate::geo::{BoundingBox, Position, Projection};
use crate::gwr::{destandardize_with, Calibrator, CovariateSet, ModelKind, Target, WlsOptions};
use crate::kernel::KernelSpec;
use crate::preprocess::Panel;

/// Raster of cell centers over a box. Nodes are ordered row by row with
/// `y` ascending, then `x` ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub bbox: BoundingBox,
    pub cell_size: f64,
    /// Coefficient labels to evaluate (`intercept`, channel tokens); all when
    /// absent.
    #[serde(default)]
    pub coefficients: Option<Vec<String>>,
    /// Hour of day for the spatio-temporal kernel.
    #[serde(default)]
    pub hour: Option<u32>,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, cell_size: f64) -> Result<Self> {
        let g = Self {
            bbox,
            cell_size,
            coefficients: None,
            hour: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::InvalidInput(format!("cell size must be positive, got {}", self.cell_size)));
        }
        let b = &self.bbox;
        BoundingBox::new(b.min_x, b.min_y, b.max_x, b.max_y)?;
        if self.hour.is_some_and(|h| h >= 24) {
            return Err(Error::InvalidInput("grid hour must lie in 0..24".into()));
        }
        Ok(())
    }

    /// Columns and rows; a partial trailing cell counts as a cell.
    pub fn shape(&self) -> (usize, usize) {
        let count = |extent: f64| ((extent / self.cell_size) - 1e-9).ceil().max(1.0) as usize;
        (count(self.bbox.width()), count(self.bbox.height()))
    }

    pub fn nodes(&self) -> Vec<Position> {
        let (nx, ny) = self.shape();
        (0..ny)
            .flat_map(|j| {
                (0..nx).map(move |i| {
                    Position::new(
                        self.bbox.min_x + (i as f64 + 0.5) * self.cell_size,
                        self.bbox.min_y + (j as f64 + 0.5) * self.cell_size,
                    )
                })
            })
            .collect()
    }

    fn selected(&self, covs: &CovariateSet) -> Result<Vec<usize>> {
        let labels = covs.labels();
        match &self.coefficients {
            None => Ok((0..labels.len()).collect()),
            Some(sel) => sel
                .iter()
                .map(|s| {
                    labels
                        .iter()
                        .position(|l| l == s)
                        .ok_or_else(|| Error::InvalidInput(format!("unknown coefficient `{s}`")))
                })
                .collect(),
        }
    }
}

/// One coefficient over the grid nodes; `None` marks no-data.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub nodes: Vec<Position>,
    pub layers: Vec<Layer>,
}

impl Surface {
    pub fn layer(&self, label: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.label == label)
    }

    /// Share of nodes without a fit.
    pub fn no_data_fraction(&self) -> f64 {
        match self.layers.first() {
            Some(l) if !l.values.is_empty() => {
                l.values.iter().filter(|v| v.is_none()).count() as f64 / l.values.len() as f64
            }
            _ => 0.0,
        }
    }
}

/// Evaluates the local fit at every grid node with the same estimation
/// path as calibration. SGWR coefficients are de-standardized with the
/// network median of the fitting sites' sensor statistics.
pub fn coefficient_surface(
    panel: &Panel,
    kind: ModelKind,
    kernel: &KernelSpec,
    covariates: &CovariateSet,
    fit_sites: &[usize],
    include_hour: &(dyn Fn(usize) -> bool + Sync),
    grid: &GridSpec,
    opts: WlsOptions,
) -> Result<Surface> {
    grid.validate()?;
    if kernel.is_temporal() && grid.hour.is_none() {
        return Err(Error::InvalidInput("the spatio-temporal kernel needs a grid hour".into()));
    }
    let selected = grid.selected(covariates)?;
    let cal = Calibrator::new(panel, kind, covariates, fit_sites, include_hour, opts)?;
    let stats = match cal.standardizer() {
        Some(std) => {
            let ids: Vec<&str> = fit_sites.iter().map(|&s| panel.site(s).id.as_str()).collect();
            Some(std.network_median(&ids)?)
        }
        None => None,
    };
    let hour = if kernel.is_temporal() { grid.hour } else { None };
    let nodes = grid.nodes();
    let betas: Vec<Option<Vec<f64>>> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let target = Target::new(format!("node{i}"), *p);
            match cal.model_at(&target, kernel, hour, &|_| false) {
                Ok(m) => Some(match &stats {
                    Some(st) => destandardize_with(&m, st).beta,
                    None => m.beta,
                }),
                Err(e) => {
                    log::debug!("grid node {i} has no fit: {e}");
                    None
                }
            }
        })
        .collect();
    let labels = covariates.labels();
    let layers = selected
        .iter()
        .map(|&j| Layer {
            label: labels[j].clone(),
            values: betas.iter().map(|b| b.as_ref().map(|b| b[j])).collect(),
        })
        .collect();
    let surface = Surface { nodes, layers };
    let nd = surface.no_data_fraction();
    if nd > 0.0 {
        log::warn!("{:.1}% of grid nodes have no fit", 100.0 * nd);
    }
    Ok(surface)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerFormat {
    /// `coef_<label>.csv` with header `x,y,value`.
    Delimited,
    /// `coefficients.geojson`, one point per node with every coefficient as a
    /// property.
    Geojson,
}

fn value6(v: Option<f64>) -> String {
    v.map(|v| sig(v, 6)).unwrap_or_default()
}

pub fn layer_file(label: &str) -> String {
    format!("coef_{label}.csv")
}

pub const GEOJSON_FILE: &str = "coefficients.geojson";

/// Writes the layers of `surface` into `dir`. GeoJSON coordinates are
/// longitude/latitude when a projection is given, local meters otherwise.
pub fn export_layers(
    surface: &Surface,
    format: LayerFormat,
    dir: &Path,
    projection: Option<&Projection>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        LayerFormat::Delimited => surface
            .layers
            .iter()
            .map(|layer| {
                let path = dir.join(layer_file(&layer.label));
                let err = |e: csv::Error| Error::parse(&path, e.to_string());
                let mut w = csv::Writer::from_path(&path).map_err(err)?;
                w.write_record(["x", "y", "value"]).map_err(err)?;
                for (p, v) in surface.nodes.iter().zip(&layer.values) {
                    w.write_record([sig(p.x, 12), sig(p.y, 12), value6(*v)]).map_err(err)?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
                Ok(path)
            })
            .collect(),
        LayerFormat::Geojson => {
            let features: Vec<Value> = surface
                .nodes
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let coords = match projection {
                        Some(pr) => {
                            let (lon, lat) = pr.unproject(*p);
                            vec![lon, lat]
                        }
                        None => vec![p.x, p.y],
                    };
                    let props: serde_json::Map<String, Value> = surface
                        .layers
                        .iter()
                        .map(|l| {
                            let v = l.values[i]
                                .map(|v| Value::from(sig(v, 6).parse::<f64>().expect("formatted number")))
                                .unwrap_or(Value::Null);
                            (l.label.clone(), v)
                        })
                        .collect();
                    json!({
                        "type": "Feature",
                        "geometry": {"type": "Point", "coordinates": coords},
                        "properties": props,
                    })
                })
                .collect();
            let doc = json!({"type": "FeatureCollection", "features": features});
            let path = dir.join(GEOJSON_FILE);
            let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::parse(&path, e.to_string()))?;
            fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
    }
}

/// Reads a delimited layer back.
pub fn read_layer(path: &Path) -> Result<(Vec<Position>, Vec<Option<f64>>)> {
    let err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let (mut nodes, mut values) = (Vec::new(), Vec::new());
    for row in r.records() {
        let row = row.map_err(err)?;
        let num = |i: usize| row.get(i).unwrap_or("").parse::<f64>().map_err(|_| Error::parse(path, "bad number"));
        nodes.push(Position::new(num(0)?, num(1)?));
        values.push(match row.get(2).unwrap_or("") {
            "" => None,
            _ => Some(num(2)?),
        });
    }
    Ok((nodes, values))
}

/// Reads the properties of a GeoJSON layer file.
pub fn read_geojson(path: &Path) -> Result<BTreeMap<String, Vec<Option<f64>>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut out: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for f in doc["features"].as_array().ok_or_else(|| Error::parse(path, "no features"))? {
        for (k, v) in f["properties"].as_object().ok_or_else(|| Error::parse(path, "no properties"))? {
            out.entry(k.clone()).or_default().push(v.as_f64());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gwr::fit_gwr;
    use crate::preprocess::Role;
    use crate::synth::{generate, SynthSpec};

    fn bbox(w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(0.0, 0.0, w, h).unwrap()
    }

    #[test]
    fn node_layout() {
        let g = GridSpec::new(bbox(200.0, 100.0), 100.0).unwrap();
        assert_eq!(g.shape(), (2, 1));
        assert_eq!(g.nodes(), vec![Position::new(50.0, 50.0), Position::new(150.0, 50.0)]);
        let g = GridSpec::new(bbox(250.0, 100.0), 100.0).unwrap();
        assert_eq!(g.shape(), (3, 1));
        assert!(GridSpec::new(bbox(1.0, 1.0), 0.0).is_err());
    }

    fn panel() -> Panel {
        generate(&SynthSpec { hours: 120, ..SynthSpec::default() }, 4).unwrap().0
    }

    #[test]
    fn single_site_constant_and_node_matches_direct_fit() {
        let p = panel();
        let covs = CovariateSet::gwr5();
        let site = p.sites_with_role(Role::CollocatedSensor)[0];
        let k = KernelSpec::gaussian(800.0).unwrap();
        let g = GridSpec::new(bbox(6000.0, 6000.0), 1500.0).unwrap();
        let s = coefficient_surface(&p, ModelKind::Gwr, &k, &covs, &[site], &|_| true, &g, WlsOptions::default()).unwrap();
        for l in &s.layers {
            let first = l.values[0].unwrap();
            assert!(l.values.iter().all(|v| (v.unwrap() - first).abs() <= 1e-9 * first.abs().max(1.0)));
        }
        // a grid whose first node sits on the site
        let pos = p.site(site).position;
        let g = GridSpec::new(BoundingBox::new(pos.x - 50.0, pos.y - 50.0, pos.x + 150.0, pos.y + 150.0).unwrap(), 100.0).unwrap();
        let fit: Vec<usize> = p.sites_with_role(Role::CollocatedSensor);
        let s = coefficient_surface(&p, ModelKind::Gwr, &k, &covs, &fit, &|_| true, &g, WlsOptions::default()).unwrap();
        assert_eq!(s.nodes[0], pos);
        let direct = fit_gwr(&p, &[Target::new("x", pos)], &k, &covs, &fit, &|_| true, WlsOptions::default());
        let beta = &direct[0].as_ref().unwrap().beta;
        for (l, b) in s.layers.iter().zip(beta) {
            assert_eq!(l.values[0], Some(*b));
        }
    }

    #[test]
    fn export_round_trip() {
        let p = panel();
        let covs = CovariateSet::gwr5();
        let fit = p.sites_with_role(Role::CollocatedSensor);
        let k = KernelSpec::gaussian(1500.0).unwrap();
        let mut g = GridSpec::new(bbox(6000.0, 6000.0), 3000.0).unwrap();
        g.coefficients = Some(vec!["intercept".into(), "no2_na".into()]);
        let s = coefficient_surface(&p, ModelKind::Sgwr, &k, &covs, &fit, &|_| true, &g, WlsOptions::default()).unwrap();
        assert_eq!(s.layers.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let files = export_layers(&s, LayerFormat::Delimited, dir.path(), None).unwrap();
        assert_eq!(files.len(), 2);
        for (layer, f) in s.layers.iter().zip(&files) {
            let (nodes, values) = read_layer(f).unwrap();
            assert_eq!(nodes.len(), 4);
            assert_eq!(nodes, s.nodes);
            for (a, b) in layer.values.iter().zip(&values) {
                let (a, b) = (a.unwrap(), b.unwrap());
                assert!((a - b).abs() <= 5e-6 * a.abs());
            }
        }
        let files = export_layers(&s, LayerFormat::Geojson, dir.path(), None).unwrap();
        let props = read_geojson(&files[0]).unwrap();
        assert_eq!(props["intercept"].len(), 4);
    }

    #[test]
    fn no_data_is_empty_field() {
        let s = Surface {
            nodes: vec![Position::new(0.0, 0.0), Position::new(1.0, 0.0)],
            layers: vec![Layer {
                label: "intercept".into(),
                values: vec![Some(1.5), None],
            }],
        };
        assert_eq!(s.no_data_fraction(), 0.5);
        let dir = tempfile::tempdir().unwrap();
        let files = export_layers(&s, LayerFormat::Delimited, dir.path(), None).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text, "x,y,value\n0,0,1.5\n1,0,\n");
        let files = export_layers(&s, LayerFormat::Geojson, dir.path(), None).unwrap();
        assert_eq!(read_geojson(&files[0]).unwrap()["intercept"], vec![Some(1.5), None]);
    }
}
