//! Site registry files for ingestion. Positions are given either as local
//! meters (`x`, `y`) or as `lon`, `lat`, projected with the configured origin.

use std::path::Path;

use aqgwr::{Position, Projection, SiteRecord};

use crate::error::CliError;

fn data_err(path: &Path, message: String) -> CliError {
    aqgwr::Error::Parse {
        path: path.to_path_buf(),
        message,
    }
    .into()
}

pub fn read_registry(path: &Path, projection: Option<&Projection>) -> Result<Vec<SiteRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| data_err(path, e.to_string()))?;
    let headers = r.headers().map_err(|e| data_err(path, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let need = |name: &str| col(name).ok_or_else(|| CliError::from(aqgwr::Error::MissingColumn(name.into())));
    let id = need("id")?;
    let role = need("role")?;
    let typology = need("typology")?;
    let reference = col("reference");
    let planar = col("x").zip(col("y"));
    let geographic = col("lon").zip(col("lat"));
    let projection = match (planar, geographic, projection) {
        (Some(_), _, _) => None,
        (None, Some(_), Some(p)) => Some(p),
        (None, Some(_), None) => {
            return Err(CliError::Config("registry gives lon/lat but no projection origin is configured".into()))
        }
        (None, None, _) => return Err(aqgwr::Error::MissingColumn("x".into()).into()),
    };
    let (cx, cy) = planar.or(geographic).expect("checked above");

    let mut sites = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| data_err(path, e.to_string()))?;
        let cell = |i: usize| row.get(i).unwrap_or("").trim();
        let bad = |what: &str| data_err(path, format!("row {}: bad {what}", line + 2));
        let a: f64 = cell(cx).parse().map_err(|_| bad("coordinate"))?;
        let b: f64 = cell(cy).parse().map_err(|_| bad("coordinate"))?;
        let position = match projection {
            Some(p) => p.project(a, b)?,
            None => Position::new(a, b),
        };
        let reference = reference.map(cell).filter(|s| !s.is_empty()).map(String::from);
        sites.push(SiteRecord {
            id: cell(id).to_string(),
            position,
            role: cell(role).parse().map_err(|_| bad("role"))?,
            typology: cell(typology).parse().map_err(|_| bad("typology"))?,
            reference,
        });
    }
    Ok(sites)
}
