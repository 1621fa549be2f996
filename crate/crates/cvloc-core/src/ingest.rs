//! Dataset ingestion and metrics output: KML trajectory parsing,
//! descriptor tables, dataset manifests, and the CSV reports experiments
//! emit.
//!
//! All formats are plain UTF-8 text. Floats are written with Rust's
//! shortest-round-trip formatting, so a write/read cycle reproduces values
//! exactly and identical reports serialize to identical bytes.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{AerialDatabase, DbError, GeoDescriptor};
use crate::descriptor::{Descriptor, DescriptorSet};
use crate::experiment::{ExperimentReport, StepRecord, StrategyComparison, SweepReport};
use crate::geo::{GeoCoordinate, GeoError, LocalFrame, Position2, TimedPose, Velocity2};

pub const RUN_REPORT_HEADER: &str = "step,truth_x,truth_y,dr_x,dr_y,est_x,est_y,err_dr,err_est";
pub const SWEEP_SUMMARY_HEADER: &str =
    "value,recall_top1,recall_at_1pct,recall_at_10pct,err_est_mean,err_est_std,err_dr_mean,err_dr_std";
pub const COMPARISON_HEADER: &str =
    "strategy,err_est_mean,err_est_std,err_dr_mean,err_dr_std,recall_top1";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to {action} {path}: {source}")]
    Io { action: &'static str, path: PathBuf, source: std::io::Error },
    #[error("document has no coordinates element")]
    MissingCoordinates,
    #[error("coordinates are empty")]
    EmptyCoordinates,
    #[error("coordinates element opened on line {line} is never closed")]
    UnclosedCoordinates { line: usize },
    #[error("line {line}: malformed coordinate tuple {token:?}: {reason}")]
    MalformedTuple { line: usize, token: String, reason: String },
    #[error("line {line}: invalid coordinate: {source}")]
    BadCoordinate { line: usize, source: GeoError },
    #[error("bad table header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("table has no data rows")]
    EmptyTable,
    #[error("table uses lat/lon columns but no frame origin was provided")]
    FrameRequired,
    #[error("invalid frame origin: {0}")]
    FrameOrigin(GeoError),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("malformed report: line {line}: {message}")]
    Report { line: usize, message: String },
}

fn read_file(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        action: "read",
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), IngestError> {
    std::fs::write(path, contents).map_err(|source| IngestError::Io {
        action: "write",
        path: path.to_path_buf(),
        source,
    })
}

fn line_of(text: &str, byte_offset: usize) -> usize {
    text.as_bytes()[..byte_offset].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Extracts every GPS coordinate from the coordinates elements of a KML
/// document, in document order.
///
/// Tuples are whitespace-separated `lon,lat[,alt]` triples; altitude is
/// discarded and the lon/lat order is swapped into [`GeoCoordinate`]'s
/// lat/lon. This is a minimal element scan, not a markup validator.
pub fn parse_kml_coordinates(text: &str) -> Result<Vec<GeoCoordinate>, IngestError> {
    let mut coords = Vec::new();
    let mut found_element = false;
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find("<coordinates") {
        let open = search_from + rel;
        let after_name = open + "<coordinates".len();
        // Require a real tag boundary so e.g. <coordinatesque> is skipped.
        match text[after_name..].chars().next() {
            Some(c) if c == '>' || c.is_ascii_whitespace() => {}
            _ => {
                search_from = after_name;
                continue;
            }
        }
        let content_start = match text[after_name..].find('>') {
            Some(i) => after_name + i + 1,
            None => return Err(IngestError::UnclosedCoordinates { line: line_of(text, open) }),
        };
        let content_end = match text[content_start..].find("</coordinates") {
            Some(i) => content_start + i,
            None => return Err(IngestError::UnclosedCoordinates { line: line_of(text, open) }),
        };
        found_element = true;

        let base_line = line_of(text, content_start);
        for (k, line_text) in text[content_start..content_end].lines().enumerate() {
            let line = base_line + k;
            for token in line_text.split_whitespace() {
                coords.push(parse_kml_tuple(token, line)?);
            }
        }
        search_from = content_end;
    }
    if !found_element {
        return Err(IngestError::MissingCoordinates);
    }
    if coords.is_empty() {
        return Err(IngestError::EmptyCoordinates);
    }
    Ok(coords)
}

fn parse_kml_tuple(token: &str, line: usize) -> Result<GeoCoordinate, IngestError> {
    let fields: Vec<&str> = token.split(',').collect();
    if fields.len() < 2 || fields.len() > 3 {
        return Err(IngestError::MalformedTuple {
            line,
            token: token.to_string(),
            reason: format!("expected lon,lat[,alt], found {} fields", fields.len()),
        });
    }
    let mut parsed = [0.0f64; 2];
    for (i, field) in fields[..2].iter().enumerate() {
        parsed[i] = field.parse().map_err(|_| IngestError::MalformedTuple {
            line,
            token: token.to_string(),
            reason: format!("{field:?} is not a number"),
        })?;
    }
    let (lon, lat) = (parsed[0], parsed[1]);
    GeoCoordinate::new(lat, lon).map_err(|source| IngestError::BadCoordinate { line, source })
}

/// A parsed descriptor table: row order preserved.
#[derive(Debug, Clone)]
pub struct DescriptorTable {
    pub ids: Vec<u64>,
    pub positions: Vec<Position2>,
    pub descriptors: DescriptorSet,
    /// Whether the source used lat/lon columns (converted through the
    /// provided frame) rather than local x/y.
    pub geodetic: bool,
}

impl DescriptorTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn into_geo_descriptors(self) -> Vec<GeoDescriptor> {
        self.ids
            .into_iter()
            .zip(self.positions)
            .zip(self.descriptors.into_items())
            .map(|((id, position), descriptor)| GeoDescriptor { id, position, descriptor })
            .collect()
    }
}

/// Parses the delimited descriptor-table format: header
/// `id,x,y,d0..d{D-1}` (local frame, meters) or `id,lat,lon,d0..d{D-1}`
/// (geodetic, converted through `frame`). Ids must be unique.
pub fn parse_descriptor_table(
    text: &str,
    frame: Option<&LocalFrame>,
) -> Result<DescriptorTable, IngestError> {
    parse_table(text, frame, true)
}

/// Like [`parse_descriptor_table`] but for ground-query tables, where the
/// id column names the true aerial match and may repeat.
pub fn parse_query_table(
    text: &str,
    frame: Option<&LocalFrame>,
) -> Result<DescriptorTable, IngestError> {
    parse_table(text, frame, false)
}

pub fn load_descriptor_table(
    path: &Path,
    frame: Option<&LocalFrame>,
) -> Result<DescriptorTable, IngestError> {
    parse_descriptor_table(&read_file(path)?, frame)
}

pub fn load_query_table(
    path: &Path,
    frame: Option<&LocalFrame>,
) -> Result<DescriptorTable, IngestError> {
    parse_query_table(&read_file(path)?, frame)
}

fn parse_table(
    text: &str,
    frame: Option<&LocalFrame>,
    require_unique_ids: bool,
) -> Result<DescriptorTable, IngestError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => return Err(IngestError::EmptyTable),
        }
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[0] != "id" {
        return Err(IngestError::Header(format!(
            "expected id,x,y,d0.. or id,lat,lon,d0.., got {header:?}"
        )));
    }
    let geodetic = match (cols[1], cols[2]) {
        ("x", "y") => false,
        ("lat", "lon") => true,
        _ => {
            return Err(IngestError::Header(format!(
                "columns 2-3 must be x,y or lat,lon, got {},{}",
                cols[1], cols[2]
            )))
        }
    };
    let dim = cols.len() - 3;
    for (i, name) in cols[3..].iter().enumerate() {
        let expected = format!("d{i}");
        if *name != expected {
            return Err(IngestError::Header(format!(
                "descriptor column {} should be {expected}, got {name:?}",
                i + 4
            )));
        }
    }
    if geodetic && frame.is_none() {
        return Err(IngestError::FrameRequired);
    }

    let mut ids = Vec::new();
    let mut positions = Vec::new();
    let mut descriptors = DescriptorSet::new(dim);
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 3 + dim {
            return Err(IngestError::Row {
                line,
                message: format!("expected {} fields, found {}", 3 + dim, fields.len()),
            });
        }
        let id: u64 = fields[0].parse().map_err(|_| IngestError::Row {
            line,
            message: format!("invalid id {:?}", fields[0]),
        })?;
        if require_unique_ids && !seen.insert(id) {
            return Err(IngestError::Row { line, message: format!("duplicate id {id}") });
        }
        let mut coords = [0.0f64; 2];
        for (i, field) in fields[1..3].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| IngestError::Row {
                line,
                message: format!("invalid number {field:?} in column {}", i + 2),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Row {
                    line,
                    message: format!("non-finite value in column {}", i + 2),
                });
            }
            coords[i] = v;
        }
        let position = if geodetic {
            let geo = GeoCoordinate::new(coords[0], coords[1])
                .map_err(|source| IngestError::BadCoordinate { line, source })?;
            frame.expect("checked above").geo_to_local(geo)
        } else {
            Position2::new(coords[0], coords[1])
        };
        let mut values = Vec::with_capacity(dim);
        for field in &fields[3..] {
            let v: f64 = field.parse().map_err(|_| IngestError::Row {
                line,
                message: format!("invalid descriptor value {field:?}"),
            })?;
            values.push(v);
        }
        let descriptor = Descriptor::new(values)
            .map_err(|e| IngestError::Row { line, message: e.to_string() })?;
        descriptors.push(descriptor).map_err(|e| IngestError::Row { line, message: e.to_string() })?;
        ids.push(id);
        positions.push(position);
    }
    if ids.is_empty() {
        return Err(IngestError::EmptyTable);
    }
    Ok(DescriptorTable { ids, positions, descriptors, geodetic })
}

/// Writes entries in the local-frame table format (`id,x,y,d0..`).
/// [`load_descriptor_table`] reads the result back exactly.
pub fn write_descriptor_table(path: &Path, entries: &[GeoDescriptor]) -> Result<(), IngestError> {
    let dim = entries.first().map_or(0, |e| e.descriptor.dim());
    let mut out = String::from("id,x,y");
    for i in 0..dim {
        out.push_str(&format!(",d{i}"));
    }
    out.push('\n');
    for e in entries {
        out.push_str(&format!("{},{},{}", e.id, e.position.x, e.position.y));
        for v in e.descriptor.values() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Paths and metadata locating a real dataset on disk. Paths are resolved
/// relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub aerial_table_path: PathBuf,
    pub query_table_path: PathBuf,
    /// KML document holding the ordered trajectory coordinates.
    pub trajectory_path: PathBuf,
    pub descriptor_dim: usize,
    /// Tangent-plane origin for geodetic-to-local conversion.
    pub frame_origin: GeoCoordinate,
}

/// A fully loaded dataset: aerial database, ground-truth trajectory in the
/// local frame, and one query (with its true aerial id) per pose.
#[derive(Debug, Clone)]
pub struct DatasetContent {
    pub db: AerialDatabase,
    pub truth: Vec<TimedPose>,
    pub queries: Vec<Descriptor>,
    pub true_ids: Vec<u64>,
}

impl DatasetContent {
    /// Velocities a robot would report: truth differences (1 s steps) plus
    /// per-axis Gaussian noise, with the same placeholder-first convention
    /// and random stream as the simulator.
    pub fn corrupted_velocities(&self, velocity_noise_sigma: f64, seed: u64) -> Vec<Velocity2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut velocities = Vec::with_capacity(self.truth.len());
        velocities.push(Velocity2::new(0.0, 0.0));
        for w in self.truth.windows(2) {
            let dt = w[1].t - w[0].t;
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            velocities.push(Velocity2::new(
                (w[1].position.x - w[0].position.x) / dt + velocity_noise_sigma * nx,
                (w[1].position.y - w[0].position.y) / dt + velocity_noise_sigma * ny,
            ));
        }
        velocities
    }
}

fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

/// Loads and cross-validates everything a manifest points at.
pub fn load_dataset(
    manifest: &DatasetManifest,
    base_dir: &Path,
) -> Result<DatasetContent, IngestError> {
    let frame = LocalFrame::new(manifest.frame_origin).map_err(IngestError::FrameOrigin)?;

    let aerial =
        load_descriptor_table(&resolve(base_dir, &manifest.aerial_table_path), Some(&frame))?;
    if aerial.descriptors.dimension() != manifest.descriptor_dim {
        return Err(IngestError::Inconsistent(format!(
            "aerial table dimension {} != manifest descriptor_dim {}",
            aerial.descriptors.dimension(),
            manifest.descriptor_dim
        )));
    }
    let db = AerialDatabase::new(aerial.into_geo_descriptors())?;

    let queries = load_query_table(&resolve(base_dir, &manifest.query_table_path), Some(&frame))?;
    if queries.descriptors.dimension() != manifest.descriptor_dim {
        return Err(IngestError::Inconsistent(format!(
            "query table dimension {} != manifest descriptor_dim {}",
            queries.descriptors.dimension(),
            manifest.descriptor_dim
        )));
    }
    for id in &queries.ids {
        if db.get(*id).is_none() {
            return Err(IngestError::Inconsistent(format!(
                "query references aerial id {id}, which is not in the aerial table"
            )));
        }
    }

    let kml = read_file(&resolve(base_dir, &manifest.trajectory_path))?;
    let truth: Vec<TimedPose> = parse_kml_coordinates(&kml)?
        .into_iter()
        .enumerate()
        .map(|(j, geo)| TimedPose { t: j as f64, position: frame.geo_to_local(geo) })
        .collect();
    if truth.len() != queries.len() {
        return Err(IngestError::Inconsistent(format!(
            "trajectory has {} poses but query table has {} rows",
            truth.len(),
            queries.len()
        )));
    }

    let true_ids = queries.ids.clone();
    Ok(DatasetContent { db, truth, queries: queries.descriptors.into_items(), true_ids })
}

/// Serializes an experiment to per-step CSV: one row per step with runs
/// concatenated in order (the step column restarts at 0 on each run
/// boundary), then one `summary` record with the pooled mean and std of
/// the estimate and dead-reckoning errors. An empty report produces a
/// header-only file.
pub fn write_run_report(report: &ExperimentReport, path: &Path) -> Result<(), IngestError> {
    write_file(path, &run_report_to_string(report))
}

fn run_report_to_string(report: &ExperimentReport) -> String {
    let mut out = String::from(RUN_REPORT_HEADER);
    out.push('\n');
    let total_steps: usize = report.runs.iter().map(|r| r.steps.len()).sum();
    if total_steps == 0 {
        tracing::warn!("writing header-only run report: no steps recorded");
        return out;
    }
    for run in &report.runs {
        for s in &run.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.step, s.truth.x, s.truth.y, s.dr.x, s.dr.y, s.est.x, s.est.y, s.err_dr, s.err_est
            ));
        }
    }
    out.push_str(&format!(
        "summary,{},{},{},{}\n",
        report.err_est.mean, report.err_est.std, report.err_dr.mean, report.err_dr.std
    ));
    out
}

/// The pooled statistics row at the end of a run report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub err_est_mean: f64,
    pub err_est_std: f64,
    pub err_dr_mean: f64,
    pub err_dr_std: f64,
}

/// A run report read back from disk: per-run step records (split at step
/// counter resets) and the summary, if one was written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReportFile {
    pub runs: Vec<Vec<StepRecord>>,
    pub summary: Option<ReportSummary>,
}

pub fn read_run_report(path: &Path) -> Result<RunReportFile, IngestError> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RUN_REPORT_HEADER => {}
        Some((_, h)) => {
            return Err(IngestError::Report {
                line: 1,
                message: format!("unexpected header {h:?}"),
            })
        }
        None => return Err(IngestError::Report { line: 1, message: "empty file".into() }),
    }

    let mut runs: Vec<Vec<StepRecord>> = Vec::new();
    let mut summary = None;
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if summary.is_some() {
            return Err(IngestError::Report {
                line,
                message: "data after the summary record".into(),
            });
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields[0] == "summary" {
            let v = parse_floats(&fields[1..], line, 4)?;
            summary = Some(ReportSummary {
                err_est_mean: v[0],
                err_est_std: v[1],
                err_dr_mean: v[2],
                err_dr_std: v[3],
            });
            continue;
        }
        let step: usize = fields[0].parse().map_err(|_| IngestError::Report {
            line,
            message: format!("invalid step {:?}", fields[0]),
        })?;
        let v = parse_floats(&fields[1..], line, 8)?;
        let record = StepRecord {
            step,
            truth: Position2::new(v[0], v[1]),
            dr: Position2::new(v[2], v[3]),
            est: Position2::new(v[4], v[5]),
            err_dr: v[6],
            err_est: v[7],
        };
        if step == 0 || runs.is_empty() {
            runs.push(Vec::new());
        }
        runs.last_mut().expect("just ensured non-empty").push(record);
    }
    Ok(RunReportFile { runs, summary })
}

fn parse_floats(fields: &[&str], line: usize, expected: usize) -> Result<Vec<f64>, IngestError> {
    if fields.len() != expected {
        return Err(IngestError::Report {
            line,
            message: format!("expected {expected} values, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse().map_err(|_| IngestError::Report {
                line,
                message: format!("invalid number {f:?}"),
            })
        })
        .collect()
}

/// One row per swept value: retrieval quality and error statistics.
pub fn write_sweep_summary(sweep: &SweepReport, path: &Path) -> Result<(), IngestError> {
    let mut out = String::from(SWEEP_SUMMARY_HEADER);
    out.push('\n');
    for row in &sweep.rows {
        let r = &row.report;
        let at = |f: f64| r.recall.at_fraction(f).expect("report curves tabulate this fraction");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.value,
            r.recall_top1,
            at(0.01),
            at(0.10),
            r.err_est.mean,
            r.err_est.std,
            r.err_dr.mean,
            r.err_dr.std
        ));
    }
    write_file(path, &out)
}

/// Two strategy rows plus the std ratio record.
pub fn write_comparison_summary(
    comparison: &StrategyComparison,
    path: &Path,
) -> Result<(), IngestError> {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for report in [&comparison.ppf, &comparison.capf] {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            report.strategy,
            report.err_est.mean,
            report.err_est.std,
            report.err_dr.mean,
            report.err_dr.std,
            report.recall_top1
        ));
    }
    out.push_str(&format!("std_ratio,{}\n", comparison.std_ratio()));
    write_file(path, &out)
}
