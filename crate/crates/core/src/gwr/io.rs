//! Delimited model tables: one row per local model.

use std::path::Path;

use super::{CovariateSet, LocalModel, ModelFamily};
use crate::error::{Error, Result};
use crate::fmt::sig;
use crate::geo::Position;
use crate::ingest::Channel;
use crate::kernel::{KernelKind, KernelSpec};

const FIXED: [&str; 9] = [
    "family",
    "target_id",
    "x",
    "y",
    "hour",
    "kernel",
    "bandwidth",
    "condition",
    "weight_mass",
];

/// Writes models sharing one covariate set. Coefficient columns are named
/// `b_intercept`, `b_<channel>` in model order; numbers carry 12
/// significant digits.
pub fn write_models(path: &Path, models: &[LocalModel]) -> Result<()> {
    let covs = models.first().map(|m| m.covariates.clone()).unwrap_or_default();
    if models.iter().any(|m| m.covariates != covs) {
        return Err(Error::InvalidInput("a model table holds one covariate set".into()));
    }
    let err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(covs.labels().iter().map(|l| format!("b_{l}")));
    w.write_record(&header).map_err(err)?;
    for m in models {
        let mut row = vec![
            m.family.token().to_string(),
            m.target_id.clone(),
            sig(m.target.x, 12),
            sig(m.target.y, 12),
            m.hour.map(|h| h.to_string()).unwrap_or_default(),
            m.kernel.map(|k| k.kind.token().to_string()).unwrap_or_default(),
            m.kernel.map(|k| sig(k.bandwidth, 12)).unwrap_or_default(),
            sig(m.condition, 12),
            sig(m.weight_mass, 12),
        ];
        row.extend(m.beta.iter().map(|b| sig(*b, 12)));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_models(path: &Path) -> Result<Vec<LocalModel>> {
    let err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header = r.headers().map_err(err)?.clone();
    for (i, name) in FIXED.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(Error::MissingColumn(name.to_string()));
        }
    }
    let labels: Vec<&str> = header.iter().skip(FIXED.len()).collect();
    if labels.first() != Some(&"b_intercept") {
        return Err(Error::MissingColumn("b_intercept".into()));
    }
    let channels = labels[1..]
        .iter()
        .map(|l| {
            l.strip_prefix("b_")
                .ok_or_else(|| Error::parse(path, format!("bad coefficient column `{l}`")))?
                .parse::<Channel>()
        })
        .collect::<Result<Vec<_>>>()?;
    let covariates = CovariateSet::new(channels)?;
    let mut models = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(err)?;
        let bad = |what: &str| Error::parse(path, format!("row {}: bad {what}", line + 2));
        let num = |i: usize, what: &str| row.get(i).unwrap_or("").parse::<f64>().map_err(|_| bad(what));
        let family: ModelFamily = row.get(0).unwrap_or("").parse().map_err(|_| bad("family"))?;
        let hour = match row.get(4).unwrap_or("") {
            "" => None,
            h => Some(h.parse::<u32>().map_err(|_| bad("hour"))?),
        };
        let kernel = match row.get(5).unwrap_or("") {
            "" => None,
            k => {
                let kind: KernelKind = k.parse().map_err(|_| bad("kernel"))?;
                Some(KernelSpec::new(kind, num(6, "bandwidth")?)?)
            }
        };
        let beta = (0..labels.len())
            .map(|j| num(FIXED.len() + j, "coefficient"))
            .collect::<Result<Vec<_>>>()?;
        models.push(LocalModel {
            target_id: row.get(1).unwrap_or("").to_string(),
            target: Position::new(num(2, "x")?, num(3, "y")?),
            hour,
            family,
            covariates: covariates.clone(),
            beta,
            kernel,
            condition: num(7, "condition")?,
            weight_mass: num(8, "weight_mass")?,
        });
    }
    Ok(models)
}
