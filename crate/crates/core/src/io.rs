//! Readers and writers for annotation, prediction, consensus, part-box,
//! training-manifest, report and sweep files.
//!
//! Record files are JSON Lines. The first line is a header
//! `{"config":…,"schema":…,"version":1}`; every following non-blank line is
//! one record. Writers sort object keys and round reals to 6 significant
//! digits, so equal inputs always give equal bytes. Loaders validate every
//! record and report the offending line and field path.
//!
//! CUB annotations use the dataset's own whitespace-delimited text files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotation::{ImageAnnotation, ImageId, Keypoint, PredictionSet, CUB_NUM_KEYPOINTS};
use crate::consensus::{ConsensusResult, KeypointObservation};
use crate::error::{Error, FormatError, Result};
use crate::geometry::{NormalizedPoint, Point, Rect};
use crate::metrics::{
    AeUnits, AnnotatorStd, ErrorStats, EvalReport, PcpReport, Tally, VisibilityRates,
};
use crate::simulator::SweepRow;
use crate::training_prep::TrainingExample;

pub const SCHEMA_VERSION: u64 = 1;
pub const PREDICTIONS_SCHEMA: &str = "keypoint-consensus/predictions";
pub const CONSENSUS_SCHEMA: &str = "keypoint-consensus/consensus";
pub const PART_BOXES_SCHEMA: &str = "keypoint-consensus/part-boxes";
pub const MANIFEST_SCHEMA: &str = "keypoint-consensus/training-manifest";
pub const REPORT_SCHEMA: &str = "keypoint-consensus/report";

/// `x` rounded to 6 significant digits. Negative zero becomes zero.
pub fn round6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    let r: f64 = format!("{x:.5e}").parse().expect("formatted float");
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

fn open(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(FormatError::MissingFile(path.to_path_buf()).into())
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn malformed(file: &str, line: usize, message: impl Into<String>) -> Error {
    FormatError::Malformed {
        file: file.to_string(),
        line,
        message: message.into(),
    }
    .into()
}

fn invalid(file: &str, line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    FormatError::InvalidValue {
        file: file.to_string(),
        line,
        field: field.into(),
        message: message.into(),
    }
    .into()
}

/// Line-oriented record writer. Create with [`RecordWriter::new`], which
/// emits the header.
pub struct RecordWriter<W: Write> {
    out: W,
    name: String,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut out: W, name: impl Into<String>, schema: &str, config: &Value) -> Result<Self> {
        let name = name.into();
        let header = serde_json::json!({
            "schema": schema,
            "version": SCHEMA_VERSION,
            "config": config,
        });
        writeln!(out, "{header}").map_err(|e| Error::io(&name, e))?;
        Ok(Self { out, name })
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        // going through Value sorts the keys
        let value = serde_json::to_value(record).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(self.out, "{value}").map_err(|e| Error::io(&self.name, e))
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| Error::io(&self.name, e))?;
        Ok(self.out)
    }
}

/// Header and numbered records of a record file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile<R> {
    pub config: Value,
    /// `(line number, record)` pairs.
    pub records: Vec<(usize, R)>,
}

/// Parses a record file, checking the header against `schema`.
pub fn read_records<R: BufRead, D: DeserializeOwned>(
    input: R,
    name: &str,
    schema: &str,
) -> Result<RecordFile<D>> {
    let mut header: Option<Value> = None;
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: Value =
                serde_json::from_str(&line).map_err(|e| malformed(name, lineno, e.to_string()))?;
            let found = h
                .get("schema")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string();
            let version = h.get("version").and_then(Value::as_u64);
            if found != schema || version != Some(SCHEMA_VERSION) {
                return Err(FormatError::SchemaMismatch {
                    file: name.to_string(),
                    expected: format!("{schema} v{SCHEMA_VERSION}"),
                    found: format!("{found} v{}", version.map_or("?".into(), |v| v.to_string())),
                }
                .into());
            }
            header = Some(h);
            continue;
        }
        let record =
            serde_json::from_str(&line).map_err(|e| malformed(name, lineno, e.to_string()))?;
        records.push((lineno, record));
    }
    let header = header.ok_or_else(|| malformed(name, 1, "missing header record"))?;
    Ok(RecordFile {
        config: header.get("config").cloned().unwrap_or(Value::Null),
        records,
    })
}

fn check_finite(file: &str, line: usize, field: impl Fn() -> String, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(file, line, field(), "not finite"))
    }
}

fn check_confidence(file: &str, line: usize, field: impl Fn() -> String, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(
            file,
            line,
            field(),
            format!("confidence {v} outside [0, 1]"),
        ))
    }
}

fn rect_from(file: &str, line: usize, field: &str, b: [f64; 4]) -> Result<Rect<f64>> {
    Rect::new(b[0], b[1], b[2], b[3]).map_err(|e| invalid(file, line, field, e.to_string()))
}

fn rect_to(r: &Rect<f64>) -> [f64; 4] {
    [round6(r.x()), round6(r.y()), round6(r.w()), round6(r.h())]
}

// ---------------------------------------------------------------- predictions

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRecord {
    image_id: u64,
    #[serde(rename = "box")]
    rect: [f64; 4],
    box_score: f64,
    loc: Vec<[f64; 2]>,
    vis: Vec<f64>,
}

fn prediction_record(p: &PredictionSet<f64>) -> Result<PredictionRecord> {
    if p.loc.len() != p.vis.len() {
        return Err(Error::LengthMismatch {
            what: "loc/vis",
            expected: p.loc.len(),
            found: p.vis.len(),
        });
    }
    if !p.score.is_finite() || p.loc.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite);
    }
    for &c in &p.vis {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::OutOfRange {
                what: "vis".into(),
                value: c,
                range: "[0, 1]",
            });
        }
    }
    Ok(PredictionRecord {
        image_id: p.image_id.0,
        rect: rect_to(&p.rect),
        box_score: round6(p.score),
        loc: p.loc.iter().map(|l| [round6(l.u), round6(l.v)]).collect(),
        vis: p.vis.iter().map(|&c| round6(c)).collect(),
    })
}

fn prediction_from(file: &str, line: usize, r: PredictionRecord) -> Result<PredictionSet<f64>> {
    let rect = rect_from(file, line, "box", r.rect)?;
    check_finite(file, line, || "box_score".into(), r.box_score)?;
    if r.loc.len() != r.vis.len() {
        return Err(invalid(
            file,
            line,
            "vis",
            format!("{} confidences for {} locations", r.vis.len(), r.loc.len()),
        ));
    }
    for (k, l) in r.loc.iter().enumerate() {
        for (c, v) in l.iter().enumerate() {
            check_finite(file, line, || format!("loc[{k}][{c}]"), *v)?;
        }
    }
    for (k, &c) in r.vis.iter().enumerate() {
        check_confidence(file, line, || format!("vis[{k}]"), c)?;
    }
    Ok(PredictionSet {
        image_id: ImageId(r.image_id),
        rect,
        score: r.box_score,
        loc: r
            .loc
            .iter()
            .map(|l| NormalizedPoint::new(l[0], l[1]))
            .collect(),
        vis: r.vis,
    })
}

/// Writes prediction (or proposal-only) records in the given order.
pub fn write_predictions<W: Write>(
    out: W,
    sets: &[PredictionSet<f64>],
    config: &Value,
) -> Result<W> {
    let mut w = RecordWriter::new(out, "predictions", PREDICTIONS_SCHEMA, config)?;
    for p in sets {
        w.write(&prediction_record(p)?)?;
    }
    w.finish()
}

pub fn read_predictions<R: BufRead>(
    input: R,
    name: &str,
) -> Result<RecordFile<PredictionSet<f64>>> {
    let file = read_records::<_, PredictionRecord>(input, name, PREDICTIONS_SCHEMA)?;
    let records = file
        .records
        .into_iter()
        .map(|(line, r)| Ok((line, prediction_from(name, line, r)?)))
        .collect::<Result<_>>()?;
    Ok(RecordFile {
        config: file.config,
        records,
    })
}

pub fn save_predictions(path: &Path, sets: &[PredictionSet<f64>], config: &Value) -> Result<()> {
    write_predictions(create(path)?, sets, config).map(drop)
}

/// Predictions or proposals in file order. All non-empty prediction vectors
/// must have the same length.
pub fn load_predictions(path: &Path) -> Result<Vec<PredictionSet<f64>>> {
    let name = file_name(path);
    let file = read_predictions(open(path)?, &name)?;
    let mut n: Option<usize> = None;
    for (line, p) in &file.records {
        if p.is_proposal_only() {
            continue;
        }
        match n {
            None => n = Some(p.loc.len()),
            Some(n) if n != p.loc.len() => {
                return Err(invalid(
                    &name,
                    *line,
                    "loc",
                    format!("{} keypoints, earlier records have {n}", p.loc.len()),
                ))
            }
            _ => {}
        }
    }
    Ok(file.records.into_iter().map(|(_, p)| p).collect())
}

// ---------------------------------------------------------------- consensus

type ObservationTuple = (f64, f64, f64, usize);

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConsensusRecord {
    image_id: u64,
    keypoint: usize,
    visible: bool,
    location: Option<[f64; 2]>,
    inliers: Vec<ObservationTuple>,
    filtered: Vec<ObservationTuple>,
}

fn observation_tuple(o: &KeypointObservation<f64>) -> ObservationTuple {
    (
        round6(o.location.x),
        round6(o.location.y),
        round6(o.confidence),
        o.source_box,
    )
}

fn observations_from(
    file: &str,
    line: usize,
    field: &str,
    obs: &[ObservationTuple],
) -> Result<Vec<KeypointObservation<f64>>> {
    obs.iter()
        .enumerate()
        .map(|(i, &(x, y, c, b))| {
            check_finite(file, line, || format!("{field}[{i}][0]"), x)?;
            check_finite(file, line, || format!("{field}[{i}][1]"), y)?;
            check_confidence(file, line, || format!("{field}[{i}][2]"), c)?;
            Ok(KeypointObservation::new(Point::new(x, y), c, b))
        })
        .collect()
}

/// Consensus results of every image, keyed by image id.
pub type ConsensusTable = BTreeMap<ImageId, Vec<ConsensusResult<f64>>>;

/// Writes one record per (image, keypoint), images in id order.
pub fn write_consensus<W: Write>(out: W, table: &ConsensusTable, config: &Value) -> Result<W> {
    let mut w = RecordWriter::new(out, "consensus", CONSENSUS_SCHEMA, config)?;
    for (id, results) in table {
        for (k, r) in results.iter().enumerate() {
            w.write(&ConsensusRecord {
                image_id: id.0,
                keypoint: k,
                visible: r.visible,
                location: r.location.map(|p| [round6(p.x), round6(p.y)]),
                inliers: r.inliers.iter().map(observation_tuple).collect(),
                filtered: r.all_filtered.iter().map(observation_tuple).collect(),
            })?;
        }
    }
    w.finish()
}

/// Parses a consensus file. Keypoints of each image must appear as
/// `0, 1, …, N-1` in order, and `location` must be present exactly when
/// `visible` is true.
pub fn parse_consensus<R: BufRead>(input: R, name: &str) -> Result<(Value, ConsensusTable)> {
    let file = read_records::<_, ConsensusRecord>(input, name, CONSENSUS_SCHEMA)?;
    let mut table = ConsensusTable::new();
    for (line, r) in file.records {
        let results = table.entry(ImageId(r.image_id)).or_default();
        if r.keypoint != results.len() {
            return Err(FormatError::InconsistentIds {
                file: name.to_string(),
                message: format!(
                    "line {line}: image {} keypoint {} where {} was expected",
                    r.image_id,
                    r.keypoint,
                    results.len()
                ),
            }
            .into());
        }
        let location = match (r.visible, r.location) {
            (true, Some([x, y])) => {
                check_finite(name, line, || "location[0]".into(), x)?;
                check_finite(name, line, || "location[1]".into(), y)?;
                Some(Point::new(x, y))
            }
            (false, None) => None,
            (true, None) => {
                return Err(invalid(
                    name,
                    line,
                    "location",
                    "missing for a visible keypoint",
                ))
            }
            (false, Some(_)) => {
                return Err(invalid(
                    name,
                    line,
                    "location",
                    "present for an invisible keypoint",
                ))
            }
        };
        results.push(ConsensusResult {
            visible: r.visible,
            location,
            inliers: observations_from(name, line, "inliers", &r.inliers)?,
            all_filtered: observations_from(name, line, "filtered", &r.filtered)?,
        });
    }
    let n = table.values().map(Vec::len).max().unwrap_or(0);
    if let Some((id, _)) = table.iter().find(|(_, r)| r.len() != n) {
        return Err(FormatError::InconsistentIds {
            file: name.to_string(),
            message: format!("image {id} has fewer than {n} keypoints"),
        }
        .into());
    }
    Ok((file.config, table))
}

pub fn save_consensus(path: &Path, table: &ConsensusTable, config: &Value) -> Result<()> {
    write_consensus(create(path)?, table, config).map(drop)
}

pub fn load_consensus(path: &Path) -> Result<ConsensusTable> {
    let name = file_name(path);
    parse_consensus(open(path)?, &name).map(|(_, t)| t)
}

// ---------------------------------------------------------------- part boxes

/// One named part box of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PartBoxRecord {
    pub image_id: ImageId,
    pub part: String,
    pub rect: Option<Rect<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartBoxWire {
    image_id: u64,
    part: String,
    #[serde(rename = "box")]
    rect: Option<[f64; 4]>,
}

pub fn write_part_boxes<W: Write>(out: W, records: &[PartBoxRecord], config: &Value) -> Result<W> {
    let mut w = RecordWriter::new(out, "part boxes", PART_BOXES_SCHEMA, config)?;
    for r in records {
        w.write(&PartBoxWire {
            image_id: r.image_id.0,
            part: r.part.clone(),
            rect: r.rect.as_ref().map(rect_to),
        })?;
    }
    w.finish()
}

pub fn parse_part_boxes<R: BufRead>(input: R, name: &str) -> Result<Vec<PartBoxRecord>> {
    let file = read_records::<_, PartBoxWire>(input, name, PART_BOXES_SCHEMA)?;
    file.records
        .into_iter()
        .map(|(line, r)| {
            Ok(PartBoxRecord {
                image_id: ImageId(r.image_id),
                part: r.part,
                rect: r
                    .rect
                    .map(|b| rect_from(name, line, "box", b))
                    .transpose()?,
            })
        })
        .collect()
}

pub fn save_part_boxes(path: &Path, records: &[PartBoxRecord], config: &Value) -> Result<()> {
    write_part_boxes(create(path)?, records, config).map(drop)
}

pub fn load_part_boxes(path: &Path) -> Result<Vec<PartBoxRecord>> {
    parse_part_boxes(open(path)?, &file_name(path))
}

// ---------------------------------------------------------------- training manifest

/// One training crop.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub image_id: ImageId,
    pub split: String,
    pub example: TrainingExample<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestWire {
    image_id: u64,
    split: String,
    #[serde(rename = "box")]
    rect: [f64; 4],
    padded_box: [f64; 4],
    v: Vec<u8>,
    l: Vec<Option<[f64; 2]>>,
    flipped: bool,
    background: bool,
}

pub fn write_manifest<W: Write>(out: W, records: &[ManifestRecord], config: &Value) -> Result<W> {
    let mut w = RecordWriter::new(out, "manifest", MANIFEST_SCHEMA, config)?;
    for r in records {
        let ex = &r.example;
        w.write(&ManifestWire {
            image_id: r.image_id.0,
            split: r.split.clone(),
            rect: rect_to(&ex.rect),
            padded_box: rect_to(&ex.padded),
            v: ex.visible.iter().map(|&v| u8::from(v)).collect(),
            l: ex
                .location
                .iter()
                .map(|l| l.map(|p| [round6(p.u), round6(p.v)]))
                .collect(),
            flipped: ex.flipped,
            background: ex.is_background,
        })?;
    }
    w.finish()
}

pub fn parse_manifest<R: BufRead>(input: R, name: &str) -> Result<Vec<ManifestRecord>> {
    let file = read_records::<_, ManifestWire>(input, name, MANIFEST_SCHEMA)?;
    file.records
        .into_iter()
        .map(|(line, r)| {
            if r.v.len() != r.l.len() {
                return Err(invalid(name, line, "l", "length differs from v"));
            }
            let mut visible = Vec::with_capacity(r.v.len());
            for (k, (&v, l)) in r.v.iter().zip(&r.l).enumerate() {
                match (v, l) {
                    (1, Some(p)) => {
                        check_finite(name, line, || format!("l[{k}][0]"), p[0])?;
                        check_finite(name, line, || format!("l[{k}][1]"), p[1])?;
                        visible.push(true);
                    }
                    (0, None) => visible.push(false),
                    (0 | 1, _) => {
                        return Err(invalid(
                            name,
                            line,
                            format!("l[{k}]"),
                            "must be present exactly when v is 1",
                        ))
                    }
                    _ => return Err(invalid(name, line, format!("v[{k}]"), "must be 0 or 1")),
                }
            }
            Ok(ManifestRecord {
                image_id: ImageId(r.image_id),
                split: r.split,
                example: TrainingExample {
                    rect: rect_from(name, line, "box", r.rect)?,
                    padded: rect_from(name, line, "padded_box", r.padded_box)?,
                    visible,
                    location: r
                        .l
                        .iter()
                        .map(|l| l.map(|p| NormalizedPoint::new(p[0], p[1])))
                        .collect(),
                    is_background: r.background,
                    flipped: r.flipped,
                },
            })
        })
        .collect()
}

pub fn save_manifest(path: &Path, records: &[ManifestRecord], config: &Value) -> Result<()> {
    write_manifest(create(path)?, records, config).map(drop)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    parse_manifest(open(path)?, &file_name(path))
}

// ---------------------------------------------------------------- report

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct TallyWire {
    hits: u64,
    total: u64,
    ratio: Option<f64>,
}

impl From<Tally> for TallyWire {
    fn from(t: Tally) -> Self {
        Self {
            hits: t.hits,
            total: t.total,
            ratio: t.ratio().map(round6),
        }
    }
}

impl TallyWire {
    fn tally(&self, file: &str, field: &str) -> Result<Tally> {
        if self.hits > self.total {
            return Err(invalid(file, 2, field, "hits exceed total"));
        }
        Ok(Tally::new(self.hits, self.total))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ErrorWire {
    mean: Option<f64>,
    sum: f64,
    count: u64,
    units: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportWire {
    pcp_per_keypoint: BTreeMap<String, TallyWire>,
    pcp_merged: BTreeMap<String, TallyWire>,
    pcp_total: TallyWire,
    ae: ErrorWire,
    fvr: TallyWire,
    fir: TallyWire,
    part_accuracy: BTreeMap<String, TallyWire>,
}

fn units_name(u: AeUnits) -> &'static str {
    match u {
        AeUnits::AnnotatorStd => "std",
        AeUnits::Pixels => "pixels",
    }
}

/// Key under which keypoint `k` is reported: zero-padded index and name,
/// so that keys sort in keypoint order.
fn keypoint_key(k: usize, names: &[String]) -> String {
    match names.get(k) {
        Some(n) => format!("{k:02}:{n}"),
        None => format!("{k:02}"),
    }
}

/// Writes an evaluation report as a single record. Keypoints are keyed by
/// index and `names`.
pub fn write_report<W: Write>(
    out: W,
    report: &EvalReport<f64>,
    names: &[String],
    config: &Value,
) -> Result<W> {
    let mut w = RecordWriter::new(out, "report", REPORT_SCHEMA, config)?;
    let wire = ReportWire {
        pcp_per_keypoint: report
            .pcp
            .per_keypoint
            .iter()
            .enumerate()
            .map(|(k, t)| (keypoint_key(k, names), (*t).into()))
            .collect(),
        pcp_merged: report
            .pcp_merged
            .iter()
            .map(|(n, t)| (n.clone(), (*t).into()))
            .collect(),
        pcp_total: report.pcp.total.into(),
        ae: ErrorWire {
            mean: report.error.mean().map(round6),
            sum: round6(report.error.sum),
            count: report.error.count,
            units: units_name(report.ae_units).into(),
        },
        fvr: report.visibility.false_visible.into(),
        fir: report.visibility.false_invisible.into(),
        part_accuracy: report
            .part_accuracy
            .iter()
            .map(|(n, t)| (n.clone(), (*t).into()))
            .collect(),
    };
    w.write(&wire)?;
    w.finish()
}

/// Reads a report written by [`write_report`] back into counts.
pub fn parse_report<R: BufRead>(input: R, name: &str) -> Result<(Value, EvalReport<f64>)> {
    let file = read_records::<_, ReportWire>(input, name, REPORT_SCHEMA)?;
    let [(_, r)]: [(usize, ReportWire); 1] = file
        .records
        .try_into()
        .map_err(|_| malformed(name, 2, "expected exactly one report record"))?;
    let tallies = |m: &BTreeMap<String, TallyWire>| -> Result<BTreeMap<String, Tally>> {
        m.iter()
            .map(|(k, t)| Ok((k.clone(), t.tally(name, k)?)))
            .collect()
    };
    let per_keypoint = r
        .pcp_per_keypoint
        .iter()
        .map(|(k, t)| t.tally(name, k))
        .collect::<Result<Vec<_>>>()?;
    let ae_units = match r.ae.units.as_str() {
        "std" => AeUnits::AnnotatorStd,
        "pixels" => AeUnits::Pixels,
        other => {
            return Err(invalid(
                name,
                2,
                "ae.units",
                format!("unknown units `{other}`"),
            ))
        }
    };
    let report = EvalReport {
        pcp: PcpReport {
            per_keypoint,
            total: r.pcp_total.tally(name, "pcp_total")?,
        },
        pcp_merged: tallies(&r.pcp_merged)?,
        error: ErrorStats {
            sum: r.ae.sum,
            count: r.ae.count,
        },
        ae_units,
        visibility: VisibilityRates {
            false_visible: r.fvr.tally(name, "fvr")?,
            false_invisible: r.fir.tally(name, "fir")?,
        },
        part_accuracy: tallies(&r.part_accuracy)?,
    };
    Ok((file.config, report))
}

pub fn save_report(
    path: &Path,
    report: &EvalReport<f64>,
    names: &[String],
    config: &Value,
) -> Result<()> {
    write_report(create(path)?, report, names, config).map(drop)
}

pub fn load_report(path: &Path) -> Result<EvalReport<f64>> {
    parse_report(open(path)?, &file_name(path)).map(|(_, r)| r)
}

// ---------------------------------------------------------------- sweep table

pub const SWEEP_COLUMNS: [&str; 10] = [
    "box_count",
    "head_acc",
    "torso_acc",
    "body_acc",
    "head_hits",
    "head_total",
    "torso_hits",
    "torso_total",
    "body_hits",
    "body_total",
];

fn ratio_field(t: &Tally) -> String {
    t.ratio()
        .map_or_else(String::new, |r| round6(r).to_string())
}

/// Writes the sweep as CSV after a `# config: {…}` comment line.
pub fn write_sweep<W: Write>(mut out: W, rows: &[SweepRow], config: &Value) -> Result<W> {
    writeln!(out, "# config: {config}").map_err(|e| Error::io("sweep", e))?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Config(format!("sweep output: {e}"));
    w.write_record(SWEEP_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.box_count.to_string(),
            ratio_field(&r.head),
            ratio_field(&r.torso),
            ratio_field(&r.body),
            r.head.hits.to_string(),
            r.head.total.to_string(),
            r.torso.hits.to_string(),
            r.torso.total.to_string(),
            r.body.hits.to_string(),
            r.body.total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("sweep output: {e}")))
}

/// Reads the tallies back from a sweep table.
pub fn parse_sweep<R: std::io::Read>(input: R, name: &str) -> Result<Vec<SweepRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 3;
        let rec = rec.map_err(|e| malformed(name, line, e.to_string()))?;
        if rec.len() != SWEEP_COLUMNS.len() {
            return Err(malformed(
                name,
                line,
                format!("{} columns, expected {}", rec.len(), SWEEP_COLUMNS.len()),
            ));
        }
        let int = |c: usize| -> Result<u64> {
            rec[c].parse().map_err(|_| {
                invalid(
                    name,
                    line,
                    SWEEP_COLUMNS[c],
                    format!("`{}` is not a count", &rec[c]),
                )
            })
        };
        rows.push(SweepRow {
            box_count: int(0)? as usize,
            head: Tally::new(int(4)?, int(5)?),
            torso: Tally::new(int(6)?, int(7)?),
            body: Tally::new(int(8)?, int(9)?),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- CUB annotations

/// An annotated CUB image.
#[derive(Debug, Clone, PartialEq)]
pub struct CubImage {
    pub annotation: ImageAnnotation<f64>,
    /// Path relative to the dataset's image directory.
    pub path: String,
    pub is_train: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CubOptions {
    /// Subtract 1 from every keypoint and box coordinate, for releases that
    /// store 1-indexed pixel positions.
    pub one_indexed: bool,
}

/// File holding optional `<image_id> <width> <height>` records. CUB itself
/// ships no image sizes.
pub const IMAGE_SIZES_FILE: &str = "image_sizes.txt";

struct TextFile {
    name: String,
    lines: Vec<(usize, Vec<String>)>,
}

fn read_text(root: &Path, file: &str, required: bool) -> Result<Option<TextFile>> {
    let path = root.join(file);
    if !required && !path.exists() {
        return Ok(None);
    }
    let name = file_name(&path);
    let mut lines = Vec::new();
    for (i, line) in open(&path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let fields: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !fields.is_empty() {
            lines.push((i + 1, fields));
        }
    }
    Ok(Some(TextFile { name, lines }))
}

fn field<T: std::str::FromStr>(
    f: &TextFile,
    line: usize,
    fields: &[String],
    i: usize,
    what: &str,
) -> Result<T> {
    fields[i].parse().map_err(|_| {
        malformed(
            &f.name,
            line,
            format!("{what}: cannot parse `{}`", fields[i]),
        )
    })
}

fn finite_field(f: &TextFile, line: usize, fields: &[String], i: usize, what: &str) -> Result<f64> {
    let v: f64 = field(f, line, fields, i, what)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(malformed(&f.name, line, format!("{what}: not finite")))
    }
}

fn expect_fields(f: &TextFile, line: usize, fields: &[String], n: usize) -> Result<()> {
    if fields.len() == n {
        Ok(())
    } else {
        Err(malformed(
            &f.name,
            line,
            format!("expected {n} fields, found {}", fields.len()),
        ))
    }
}

fn inconsistent(f: &TextFile, message: String) -> Error {
    FormatError::InconsistentIds {
        file: f.name.clone(),
        message,
    }
    .into()
}

/// Loads a CUB-style dataset from `root`, sorted by image id.
///
/// Reads `images.txt`, `part_locs.txt`, `bounding_boxes.txt` and
/// `train_test_split.txt`. Image sizes come from `image_sizes.txt` when
/// present, otherwise they are the extent of the object box and the
/// visible keypoints. The class label is the directory part of the image
/// path.
pub fn load_cub(root: &Path, opts: CubOptions) -> Result<Vec<CubImage>> {
    let shift = if opts.one_indexed { 1.0 } else { 0.0 };
    let images = read_text(root, "images.txt", true)?.expect("required");
    let parts = read_text(root, "part_locs.txt", true)?.expect("required");
    let boxes = read_text(root, "bounding_boxes.txt", true)?.expect("required");
    let split = read_text(root, "train_test_split.txt", true)?.expect("required");
    let sizes = read_text(root, IMAGE_SIZES_FILE, false)?;

    let mut paths: BTreeMap<u64, String> = BTreeMap::new();
    for (line, f) in &images.lines {
        expect_fields(&images, *line, f, 2)?;
        let id = field(&images, *line, f, 0, "image id")?;
        if paths.insert(id, f[1].clone()).is_some() {
            return Err(inconsistent(
                &images,
                format!("line {line}: duplicate image id {id}"),
            ));
        }
    }
    let known = |f: &TextFile, line: usize, id: u64| -> Result<()> {
        if paths.contains_key(&id) {
            Ok(())
        } else {
            Err(inconsistent(
                f,
                format!("line {line}: image id {id} not in images.txt"),
            ))
        }
    };

    let mut rects: BTreeMap<u64, Rect<f64>> = BTreeMap::new();
    for (line, f) in &boxes.lines {
        expect_fields(&boxes, *line, f, 5)?;
        let id = field(&boxes, *line, f, 0, "image id")?;
        known(&boxes, *line, id)?;
        let v: Vec<f64> = (1..5)
            .map(|i| finite_field(&boxes, *line, f, i, "box"))
            .collect::<Result<_>>()?;
        let r = Rect::new(v[0] - shift, v[1] - shift, v[2], v[3])
            .map_err(|e| malformed(&boxes.name, *line, e.to_string()))?;
        if rects.insert(id, r).is_some() {
            return Err(inconsistent(
                &boxes,
                format!("line {line}: duplicate box for image {id}"),
            ));
        }
    }

    let mut train: BTreeMap<u64, bool> = BTreeMap::new();
    for (line, f) in &split.lines {
        expect_fields(&split, *line, f, 2)?;
        let id = field(&split, *line, f, 0, "image id")?;
        known(&split, *line, id)?;
        let flag = match f[1].as_str() {
            "1" => true,
            "0" => false,
            other => {
                return Err(malformed(
                    &split.name,
                    *line,
                    format!("split flag `{other}` is not 0 or 1"),
                ))
            }
        };
        train.insert(id, flag);
    }

    let mut keypoints: BTreeMap<u64, Vec<Option<Keypoint<f64>>>> = BTreeMap::new();
    for (line, f) in &parts.lines {
        expect_fields(&parts, *line, f, 5)?;
        let id = field(&parts, *line, f, 0, "image id")?;
        known(&parts, *line, id)?;
        let part: usize = field(&parts, *line, f, 1, "part id")?;
        if !(1..=CUB_NUM_KEYPOINTS).contains(&part) {
            return Err(malformed(
                &parts.name,
                *line,
                format!("part id {part} outside 1..{CUB_NUM_KEYPOINTS}"),
            ));
        }
        let x = finite_field(&parts, *line, f, 2, "x")?;
        let y = finite_field(&parts, *line, f, 3, "y")?;
        let visible = match f[4].as_str() {
            "1" => true,
            "0" => false,
            other => {
                return Err(malformed(
                    &parts.name,
                    *line,
                    format!("visibility `{other}` is not 0 or 1"),
                ))
            }
        };
        let slot = &mut keypoints
            .entry(id)
            .or_insert_with(|| vec![None; CUB_NUM_KEYPOINTS])[part - 1];
        if slot.is_some() {
            return Err(inconsistent(
                &parts,
                format!("line {line}: duplicate part {part} for image {id}"),
            ));
        }
        let location = if visible {
            Point::new(x - shift, y - shift)
        } else {
            Point::new(x, y)
        };
        *slot = Some(Keypoint { location, visible });
    }

    let mut dims: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    if let Some(sizes) = &sizes {
        for (line, f) in &sizes.lines {
            expect_fields(sizes, *line, f, 3)?;
            let id = field(sizes, *line, f, 0, "image id")?;
            known(sizes, *line, id)?;
            let w = finite_field(sizes, *line, f, 1, "width")?;
            let h = finite_field(sizes, *line, f, 2, "height")?;
            if w <= 0.0 || h <= 0.0 {
                return Err(malformed(&sizes.name, *line, "image size must be positive"));
            }
            dims.insert(id, (w, h));
        }
    }

    let mut out = Vec::with_capacity(paths.len());
    for (&id, path) in &paths {
        let object_box = *rects
            .get(&id)
            .ok_or_else(|| inconsistent(&boxes, format!("no box for image {id}")))?;
        let is_train = *train
            .get(&id)
            .ok_or_else(|| inconsistent(&split, format!("no split flag for image {id}")))?;
        let kps = keypoints
            .get(&id)
            .ok_or_else(|| inconsistent(&parts, format!("no parts for image {id}")))?;
        let kps: Vec<Keypoint<f64>> = kps
            .iter()
            .enumerate()
            .map(|(k, kp)| {
                kp.ok_or_else(|| inconsistent(&parts, format!("image {id} lacks part {}", k + 1)))
            })
            .collect::<Result<_>>()?;
        let (width, height) = match dims.get(&id) {
            Some(&d) => d,
            None => {
                let mut w = object_box.right();
                let mut h = object_box.bottom();
                for k in kps.iter().filter(|k| k.visible) {
                    w = w.max(k.location.x);
                    h = h.max(k.location.y);
                }
                (w, h)
            }
        };
        if let Some(k) = kps.iter().position(|k| {
            k.visible && !(0.0..=width).contains(&k.location.x)
                || k.visible && !(0.0..=height).contains(&k.location.y)
        }) {
            return Err(inconsistent(
                &parts,
                format!("image {id}: visible part {} outside the image", k + 1),
            ));
        }
        let class_label = path.rsplit_once('/').map_or("", |(dir, _)| dir).to_string();
        out.push(CubImage {
            annotation: ImageAnnotation {
                image_id: ImageId(id),
                width,
                height,
                keypoints: kps,
                object_box,
                class_label,
            },
            path: path.clone(),
            is_train,
        });
    }
    Ok(out)
}

/// Writes `images` in the layout [`load_cub`] reads, including
/// `image_sizes.txt`. Coordinates are written 0-indexed.
pub fn write_cub(root: &Path, images: &[CubImage]) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut files: BTreeMap<&str, String> = BTreeMap::new();
    for img in images {
        let a = &img.annotation;
        let id = a.image_id.0;
        let b = &a.object_box;
        files
            .entry("images.txt")
            .or_default()
            .push_str(&format!("{id} {}\n", img.path));
        files
            .entry("bounding_boxes.txt")
            .or_default()
            .push_str(&format!("{id} {} {} {} {}\n", b.x(), b.y(), b.w(), b.h()));
        files
            .entry("train_test_split.txt")
            .or_default()
            .push_str(&format!("{id} {}\n", u8::from(img.is_train)));
        files
            .entry(IMAGE_SIZES_FILE)
            .or_default()
            .push_str(&format!("{id} {} {}\n", a.width, a.height));
        let parts = files.entry("part_locs.txt").or_default();
        for (k, kp) in a.keypoints.iter().enumerate() {
            parts.push_str(&format!(
                "{id} {} {} {} {}\n",
                k + 1,
                kp.location.x,
                kp.location.y,
                u8::from(kp.visible)
            ));
        }
    }
    for name in [
        "images.txt",
        "bounding_boxes.txt",
        "train_test_split.txt",
        IMAGE_SIZES_FILE,
        "part_locs.txt",
    ] {
        let path = root.join(name);
        std::fs::write(&path, files.get(name).map_or("", String::as_str))
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- annotator std

/// Reads `<part_id> <sigma>` lines (1-based part ids, `#` comments) covering
/// parts `1..=num_keypoints` exactly once each.
pub fn load_annotator_std(path: &Path, num_keypoints: usize) -> Result<AnnotatorStd<f64>> {
    let name = file_name(path);
    let mut sigma: Vec<Option<f64>> = vec![None; num_keypoints];
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let content = line.split('#').next().unwrap_or("");
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(malformed(
                &name,
                lineno,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        let part: usize = fields[0].parse().map_err(|_| {
            malformed(
                &name,
                lineno,
                format!("part id: cannot parse `{}`", fields[0]),
            )
        })?;
        let s: f64 = fields[1].parse().map_err(|_| {
            malformed(
                &name,
                lineno,
                format!("sigma: cannot parse `{}`", fields[1]),
            )
        })?;
        if !(1..=num_keypoints).contains(&part) {
            return Err(malformed(
                &name,
                lineno,
                format!("part id {part} outside 1..{num_keypoints}"),
            ));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid(
                &name,
                lineno,
                "sigma",
                format!("{s} is not positive"),
            ));
        }
        if sigma[part - 1].replace(s).is_some() {
            return Err(malformed(
                &name,
                lineno,
                format!("duplicate part id {part}"),
            ));
        }
    }
    let values = sigma
        .iter()
        .enumerate()
        .map(|(k, s)| s.ok_or(Error::MissingSigma(k)))
        .collect::<Result<Vec<_>>>()?;
    AnnotatorStd::new(values)
}

pub fn save_annotator_std(path: &Path, std: &AnnotatorStd<f64>) -> Result<()> {
    let mut text = String::from("# part_id sigma\n");
    for (k, s) in std.values().iter().enumerate() {
        text.push_str(&format!("{} {s}\n", k + 1));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
