//! Command implementations behind the `aqgwr` binary.

pub mod config;
pub mod error;
pub mod registry;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aqgwr::baseline::PairingPlan;
use aqgwr::eval::{default_candidates, split_days, DaySet, Split, SplitSpec, ValidationPlan};
use aqgwr::grid::{coefficient_surface, export_layers};
use aqgwr::gwr::{fit_local_models, write_models};
use aqgwr::ingest::{apply_flags, convert_reference_ppb, load_raw, rename};
use aqgwr::preprocess::{build_panel, minutes_to_quarters, quarters_to_hours, read_panel, write_panel, PANEL_FILE};
use aqgwr::{fit_collocated, fit_noncollocated, generate, Channel, LocalModel, ModelFamily, ModelKind, Panel, Role};

pub use config::{Overrides, PipelineConfig};
pub use error::CliError;

use config::ReferenceUnit;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    aqgwr::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Raw minute files to panel. `raw` replaces the configured file list when
/// non-empty. Returns the retention summary.
pub fn cmd_ingest(cfg: &PipelineConfig, raw: &[PathBuf]) -> Result<String, CliError> {
    let ing = cfg
        .ingest
        .as_ref()
        .ok_or_else(|| CliError::Config("the [ingest] section is required".into()))?;
    let files = if raw.is_empty() { &ing.raw } else { raw };
    if files.is_empty() {
        return Err(CliError::Config("no raw files given".into()));
    }
    let schema = ing.schema.schema();
    let mut out = String::new();
    let mut records = Vec::new();
    for path in files {
        let (mut r, rep) = load_raw(path, &schema)?;
        let _ = writeln!(
            out,
            "read {}: {} rows, {} skipped, {} records",
            path.display(),
            rep.rows_read,
            rep.rows_skipped,
            rep.records
        );
        records.append(&mut r);
    }
    let loaded = records.len();

    let (records, flags) = apply_flags(records, &ing.flags);
    let _ = writeln!(out, "flags: removed {} of {} records ({:.2}%)", flags.total(), loaded, pct(flags.total(), loaded));
    let records = match ing.rename_map()? {
        Some(map) => {
            let r = rename(records, &map, &ing.keep)?;
            let _ = writeln!(out, "rename: {} device ids mapped", map.len());
            r
        }
        None => records,
    };
    let records = match ing.reference_unit {
        ReferenceUnit::Ppb => convert_reference_ppb(records, ing.atmosphere)?,
        ReferenceUnit::Ugm3 => records,
    };

    let (quarters, qrep) = minutes_to_quarters(&records);
    let _ = writeln!(
        out,
        "quarters: kept {}, dropped {} ({:.2}% retained)",
        qrep.emitted,
        qrep.dropped,
        pct(qrep.emitted, qrep.emitted + qrep.dropped)
    );
    let (hours, hrep) = quarters_to_hours(&quarters);
    let _ = writeln!(
        out,
        "hours: kept {}, dropped {} ({:.2}% retained)",
        hrep.emitted,
        hrep.dropped,
        pct(hrep.emitted, hrep.emitted + hrep.dropped)
    );

    let sites = registry::read_registry(&ing.sites, cfg.projection().as_ref())?;
    let (panel, prep) = build_panel(&hours, sites, cfg.covariates.channels())?;
    for (site, cells) in &prep.cells_per_site {
        let dropped = prep.incomplete_dropped.get(site).copied().unwrap_or(0);
        let _ = writeln!(out, "panel {site}: {cells} hours, {dropped} incomplete dropped");
    }
    let dir = cfg.panel_dir();
    write_panel(&panel, &dir)?;
    let _ = writeln!(out, "wrote {} sites x {} hours to {}", panel.sites().len(), panel.hours().len(), dir.display());
    Ok(out)
}

/// Reads the panel after checking that every covariate and the reference
/// have a column, so configuration mistakes surface before any fit.
pub fn load_panel(cfg: &PipelineConfig) -> Result<Panel, CliError> {
    let dir = cfg.panel_dir();
    let path = dir.join(PANEL_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| {
        CliError::from(aqgwr::Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })
    })?;
    let header = r
        .headers()
        .map_err(|e| {
            CliError::from(aqgwr::Error::Parse {
                path: path.clone(),
                message: e.to_string(),
            })
        })?
        .clone();
    let has = |c: Channel| header.iter().any(|h| h == c.token());
    let absent: Vec<&str> = cfg
        .covariates
        .channels()
        .iter()
        .filter(|c| !has(**c))
        .map(|c| c.token())
        .collect();
    if !absent.is_empty() {
        return Err(CliError::Config(format!("covariates absent from the panel: {}", absent.join(", "))));
    }
    if !has(Channel::RefNo2) {
        return Err(CliError::Config("the panel has no reference channel".into()));
    }
    let (panel, _) = read_panel(&dir, cfg.covariates.channels())?;
    if !panel.cells().any(|(_, _, c)| c.reference.is_some()) {
        return Err(CliError::Config("the panel holds no reference values".into()));
    }
    Ok(panel)
}

fn split_for(cfg: &PipelineConfig, panel: &Panel) -> Result<(SplitSpec, Split), CliError> {
    let spec = match &cfg.split {
        Some(s) => s.clone(),
        None => SplitSpec::covering(panel)?,
    };
    let split = split_days(&spec)?;
    Ok((spec, split))
}

fn pairing_for(cfg: &PipelineConfig, panel: &Panel) -> Result<PairingPlan, CliError> {
    let mut plan = PairingPlan::by_typology(panel)?;
    for (sensor, station) in &cfg.pairing {
        plan.set(panel, sensor, station)?;
    }
    Ok(plan)
}

fn kind_of(family: ModelFamily) -> Option<ModelKind> {
    match family {
        ModelFamily::Gwr => Some(ModelKind::Gwr),
        ModelFamily::Sgwr => Some(ModelKind::Sgwr),
        _ => None,
    }
}

/// Fits every configured family and writes one model table per family plus
/// a table of failed targets.
pub fn cmd_fit(cfg: &PipelineConfig) -> Result<String, CliError> {
    let panel = load_panel(cfg)?;
    let (_, split) = split_for(cfg, &panel)?;
    let s0 = split.hours_in(&panel, DaySet::S0);
    let s1 = split.hours_in(&panel, DaySet::S1);
    let kernel = cfg.kernel_spec()?;
    let opts = cfg.wls_options();
    let covs = &cfg.covariates;
    let collocated = panel.sites_with_role(Role::CollocatedSensor);
    let sensors: Vec<usize> = panel.sensor_sites().collect();
    let dir = cfg.out_dir.join("models");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;

    let mut out = String::new();
    let mut failures = String::from("family,target_id,error\n");
    let mut fitted_any = false;
    let mut singular_only = true;
    for &family in &cfg.fit.models {
        let results: Vec<(String, aqgwr::Result<LocalModel>)> = match kind_of(family) {
            None if family == ModelFamily::Collocated => collocated
                .iter()
                .map(|&s| (panel.site(s).id.clone(), fit_collocated(&panel, s, covs, &s0, &opts)))
                .collect(),
            None => {
                let plan = pairing_for(cfg, &panel)?;
                sensors
                    .iter()
                    .map(|&s| (panel.site(s).id.clone(), fit_noncollocated(&panel, s, &plan, covs, &s0, &opts)))
                    .collect()
            }
            Some(kind) => {
                let per_target = if kernel.is_temporal() { 24 } else { 1 };
                let models = fit_local_models(&panel, kind, &kernel, covs, &collocated, &s1, &sensors, opts)?;
                models
                    .into_iter()
                    .enumerate()
                    .map(|(i, m)| (panel.site(sensors[i / per_target]).id.clone(), m))
                    .collect()
            }
        };
        let mut models = Vec::new();
        for (id, r) in results {
            match r {
                Ok(m) => models.push(m),
                Err(e) => {
                    log::warn!("{family} fit at {id} failed: {e}");
                    singular_only &= e.is_numerical();
                    let _ = writeln!(failures, "{family},{id},\"{}\"", e.to_string().replace('"', "'"));
                }
            }
        }
        fitted_any |= !models.is_empty();
        let path = dir.join(format!("models_{}.csv", family.token()));
        write_models(&path, &models)?;
        let _ = writeln!(out, "{family}: {} models -> {}", models.len(), path.display());
    }
    write_text(&dir.join("failures.csv"), &failures)?;
    if !fitted_any {
        let err = if singular_only {
            aqgwr::Error::SingularFit { condition: f64::INFINITY }
        } else {
            aqgwr::Error::InsufficientData("no model could be fitted".into())
        };
        return Err(err.into());
    }
    Ok(out)
}

/// Runs the evaluation protocol and writes the report tables.
pub fn cmd_validate(cfg: &PipelineConfig) -> Result<String, CliError> {
    let panel = load_panel(cfg)?;
    let (split, _) = split_for(cfg, &panel)?;
    let plan = ValidationPlan {
        families: cfg.fit.models.clone(),
        kernel: cfg.kernel_spec()?,
        covariates: cfg.covariates.clone(),
        split,
        pairing: pairing_for(cfg, &panel)?,
        bandwidth_candidates: cfg
            .validate
            .bandwidth_search
            .then(|| cfg.validate.candidates.clone().unwrap_or_else(default_candidates)),
        opts: cfg.wls_options(),
    };
    let report = aqgwr::eval::validate(&panel, &plan)?;
    let dir = cfg.out_dir.join("validation");
    let files = report.write(&dir)?;
    let mut out = report.to_text();
    let _ = writeln!(out, "wrote {} files to {}", files.len(), dir.display());
    Ok(out)
}

/// Evaluates the configured model's coefficient fields on the grid.
pub fn cmd_grid(cfg: &PipelineConfig) -> Result<String, CliError> {
    let gcfg = cfg
        .grid
        .as_ref()
        .ok_or_else(|| CliError::Config("the [grid] section is required".into()))?;
    let grid = gcfg.spec()?;
    if let Some(wanted) = &grid.coefficients {
        let labels = cfg.covariates.labels();
        if let Some(bad) = wanted.iter().find(|w| !labels.contains(w)) {
            return Err(CliError::Config(format!(
                "unknown coefficient `{bad}`; expected one of {}",
                labels.join(", ")
            )));
        }
    }
    let panel = load_panel(cfg)?;
    let (_, split) = split_for(cfg, &panel)?;
    let s1 = split.hours_in(&panel, DaySet::S1);
    let kernel = cfg.kernel_spec()?;
    let collocated = panel.sites_with_role(Role::CollocatedSensor);
    let surface = coefficient_surface(
        &panel,
        gcfg.model,
        &kernel,
        &cfg.covariates,
        &collocated,
        &s1,
        &grid,
        cfg.wls_options(),
    )?;
    let dir = cfg.out_dir.join("grid");
    let files = export_layers(&surface, gcfg.format, &dir, cfg.projection().as_ref())?;
    let (nx, ny) = grid.shape();
    Ok(format!(
        "{nx} x {ny} nodes, {} layers, {:.2}% no-data, {} files in {}\n",
        surface.layers.len(),
        100.0 * surface.no_data_fraction(),
        files.len(),
        dir.display()
    ))
}

/// Writes a synthetic panel and its true coefficients.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<String, CliError> {
    let scfg = cfg
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("the [synth] section is required".into()))?;
    let (panel, truth) = generate(&scfg.spec, scfg.seed)?;
    let dir = cfg.panel_dir();
    write_panel(&panel, &dir)?;

    let labels = scfg.spec.covariates.labels();
    let mut text = String::from("site");
    for l in &labels {
        let _ = write!(text, ",b_{l}");
    }
    for c in scfg.spec.covariates.channels() {
        let _ = write!(text, ",gain_{0},offset_{0}", c.token());
    }
    text.push('\n');
    for site in panel.sites() {
        text.push_str(&site.id);
        for b in &truth.beta[&site.id] {
            let _ = write!(text, ",{}", aqgwr::fmt::sig(*b, 12));
        }
        let distortion = truth.distortion.get(&site.id);
        for i in 0..scfg.spec.covariates.channels().len() {
            match distortion.and_then(|d| d.get(i)) {
                Some((g, o)) => {
                    let _ = write!(text, ",{},{}", aqgwr::fmt::sig(*g, 12), aqgwr::fmt::sig(*o, 12));
                }
                None => text.push_str(",,"),
            }
        }
        text.push('\n');
    }
    let truth_path = cfg.out_dir.join("synth").join("truth.csv");
    write_text(&truth_path, &text)?;
    Ok(format!(
        "{} sites x {} hours -> {}; truth -> {}\n",
        panel.sites().len(),
        panel.hours().len(),
        dir.display(),
        truth_path.display()
    ))
}
