//! Dataset, reconstruction and report files.
//!
//! Every writer produces text its reader accepts and re-emits byte for byte: floats are
//! printed with the shortest representation that parses back to the same value, rows are
//! written in a fixed order and ids are 1-based.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::eval::{EvalReport, GroundTruth};
use crate::geometry::CameraIntrinsics;
use crate::pipeline::{Failure, PipelineConfig, PipelineOutput, PointEstimate, SubsetPlan, SubsetSummary, Timings, TrackSummary};

pub const CORRESPONDENCE_MAGIC: &str = "isonrsfm-correspondences";
pub const REPORT_FORMAT: &str = "isonrsfm-report";
pub const FORMAT_VERSION: u32 = 1;

pub const CORRESPONDENCES_FILE: &str = "correspondences.txt";
pub const INTRINSICS_FILE: &str = "intrinsics.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

const CORRESPONDENCE_COLUMNS: &str = "track_id image_id px py";
const GROUND_TRUTH_HEADER: &str = "image_id,track_id,x,y,z,nx,ny,nz";
const LABELS_HEADER: &str = "track_id,image_id,corrupted";
const SWEEP_HEADER: &str = "fraction,seeds,evaluated_points,depth_rmse_mm,shape_rmse_deg,tpr,tnr,fpr,fnr";

/// Serde adapter writing non-finite floats as `null` and reading `null` back as +∞.
pub mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn format_error(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_string(), line, msg: msg.into() }
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|cause| Error::Io { path: path_str(path), cause })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|cause| Error::Io { path: path_str(path), cause })
}

fn parse_num<T: std::str::FromStr>(tok: &str, what: &str, path: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| format_error(path, line, format!("cannot parse {what} from {tok:?}")))
}

fn parse_finite(tok: &str, what: &str, path: &str, line: usize) -> Result<f64> {
    let v: f64 = parse_num(tok, what, path, line)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format_error(path, line, format!("{what} is not finite")))
    }
}

/// Lines with their 1-based numbers, skipping blank lines.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.trim().is_empty())
}

/// Correspondence tracks plus the path of the intrinsics file they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceFile {
    pub intrinsics: String,
    pub set: CorrespondenceSet,
}

pub fn format_correspondences(file: &CorrespondenceFile) -> String {
    let set = &file.set;
    let mut out = String::new();
    writeln!(out, "{CORRESPONDENCE_MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(out, "images {}", set.n_images()).unwrap();
    writeln!(out, "tracks {}", set.n_tracks()).unwrap();
    writeln!(out, "intrinsics {}", file.intrinsics).unwrap();
    writeln!(out, "{CORRESPONDENCE_COLUMNS}").unwrap();
    for j in 0..set.n_tracks() {
        for i in 0..set.n_images() {
            if let Some(p) = set.get(j, i) {
                writeln!(out, "{} {} {} {}", j + 1, i + 1, p.x, p.y).unwrap();
            }
        }
    }
    out
}

pub fn parse_correspondences(text: &str, path: &str) -> Result<CorrespondenceFile> {
    let mut lines = numbered_lines(text);
    let mut header = |key: &str| -> Result<(usize, String)> {
        let (n, l) = lines.next().ok_or_else(|| format_error(path, 0, format!("missing {key:?} header line")))?;
        let rest = l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| format_error(path, n, format!("expected {key:?} header")))?;
        Ok((n, rest.to_string()))
    };
    let (n, version) = header(CORRESPONDENCE_MAGIC)?;
    if parse_num::<u32>(&version, "format version", path, n)? != FORMAT_VERSION {
        return Err(format_error(path, n, format!("unsupported format version {version}")));
    }
    let (n, images) = header("images")?;
    let n_images: usize = parse_num(&images, "image count", path, n)?;
    if n_images == 0 {
        return Err(format_error(path, n, "image count must be positive"));
    }
    let (n, tracks) = header("tracks")?;
    let n_tracks: usize = parse_num(&tracks, "track count", path, n)?;
    let (_, intrinsics) = header("intrinsics")?;
    match lines.next() {
        Some((_, l)) if l.split_whitespace().collect::<Vec<_>>().join(" ") == CORRESPONDENCE_COLUMNS => {}
        Some((n, _)) => return Err(format_error(path, n, format!("expected column line {CORRESPONDENCE_COLUMNS:?}"))),
        None => return Err(format_error(path, 0, "missing column line")),
    }
    let mut tracks = vec![vec![None; n_images]; n_tracks];
    for (n, l) in lines {
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(format_error(path, n, format!("expected 4 fields, found {}", tok.len())));
        }
        let j: usize = parse_num(tok[0], "track id", path, n)?;
        let i: usize = parse_num(tok[1], "image id", path, n)?;
        if j == 0 || j > n_tracks {
            return Err(format_error(path, n, format!("track id {j} outside [1, {n_tracks}]")));
        }
        if i == 0 || i > n_images {
            return Err(format_error(path, n, format!("image id {i} outside [1, {n_images}]")));
        }
        let p = Vector2::new(parse_finite(tok[2], "px", path, n)?, parse_finite(tok[3], "py", path, n)?);
        let slot = &mut tracks[j - 1][i - 1];
        if slot.is_some() {
            return Err(format_error(path, n, format!("duplicate observation of track {j} in image {i}")));
        }
        *slot = Some(p);
    }
    if let Some(j) = tracks.iter().position(|t| t.iter().all(Option::is_none)) {
        return Err(format_error(path, 0, format!("track {} has no observations", j + 1)));
    }
    Ok(CorrespondenceFile { intrinsics, set: CorrespondenceSet::new(n_images, tracks)? })
}

pub fn read_correspondences(path: &Path) -> Result<CorrespondenceFile> {
    parse_correspondences(&read_text(path)?, &path_str(path))
}

pub fn format_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_json<T: DeserializeOwned>(text: &str, path: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| format_error(path, e.line(), e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?, &path_str(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &format_json(value)?)
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let k: CameraIntrinsics = read_json(path)?;
    k.validate()?;
    Ok(k)
}

/// Ground-truth points and normals, one row per (image, track), image-major.
pub fn format_ground_truth(gt: &GroundTruth) -> String {
    let mut out = String::new();
    writeln!(out, "{GROUND_TRUTH_HEADER}").unwrap();
    for (i, (pts, nrm)) in gt.points.iter().zip(&gt.normals).enumerate() {
        for (j, (p, n)) in pts.iter().zip(nrm).enumerate() {
            if let (Some(p), Some(n)) = (p, n) {
                writeln!(out, "{},{},{},{},{},{},{},{}", i + 1, j + 1, p.x, p.y, p.z, n.x, n.y, n.z).unwrap();
            }
        }
    }
    out
}

/// Injected-error flags for every visible observation, track-major.
pub fn format_labels(corrupted: &[Vec<bool>], visible: &CorrespondenceSet) -> String {
    let mut out = String::new();
    writeln!(out, "{LABELS_HEADER}").unwrap();
    for (j, row) in corrupted.iter().enumerate() {
        for (i, &c) in row.iter().enumerate() {
            if visible.is_visible(j, i) {
                writeln!(out, "{},{},{}", j + 1, i + 1, c as u8).unwrap();
            }
        }
    }
    out
}

fn csv_rows<'a>(text: &'a str, header: &str, path: &'a str, fields: usize) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)> + 'a> {
    let mut lines = numbered_lines(text);
    match lines.next() {
        Some((_, l)) if l == header => {}
        Some((n, _)) => return Err(format_error(path, n, format!("expected header {header:?}"))),
        None => return Err(format_error(path, 0, "empty file")),
    }
    let rows: Vec<_> = lines.map(|(n, l)| (n, l.split(',').collect::<Vec<_>>())).collect();
    if let Some((n, r)) = rows.iter().find(|(_, r)| r.len() != fields) {
        return Err(format_error(path, *n, format!("expected {fields} fields, found {}", r.len())));
    }
    Ok(rows.into_iter())
}

fn id_in(tok: &str, what: &str, max: usize, path: &str, line: usize) -> Result<usize> {
    let v: usize = parse_num(tok, what, path, line)?;
    if v == 0 || v > max {
        return Err(format_error(path, line, format!("{what} {v} outside [1, {max}]")));
    }
    Ok(v - 1)
}

/// Parses ground-truth geometry and labels into `GroundTruth` sized `n_images × n_tracks`.
pub fn parse_ground_truth(
    geometry: &str,
    geometry_path: &str,
    labels: &str,
    labels_path: &str,
    n_images: usize,
    n_tracks: usize,
) -> Result<GroundTruth> {
    let mut points = vec![vec![None; n_tracks]; n_images];
    let mut normals = vec![vec![None; n_tracks]; n_images];
    for (n, r) in csv_rows(geometry, GROUND_TRUTH_HEADER, geometry_path, 8)? {
        let i = id_in(r[0], "image id", n_images, geometry_path, n)?;
        let j = id_in(r[1], "track id", n_tracks, geometry_path, n)?;
        let mut v = [0.0; 6];
        for (k, x) in v.iter_mut().enumerate() {
            *x = parse_finite(r[2 + k], "coordinate", geometry_path, n)?;
        }
        if points[i][j].is_some() {
            return Err(format_error(geometry_path, n, format!("duplicate row for image {} track {}", i + 1, j + 1)));
        }
        points[i][j] = Some(Vector3::new(v[0], v[1], v[2]));
        normals[i][j] = Some(Vector3::new(v[3], v[4], v[5]));
    }
    let mut corrupted = vec![vec![false; n_images]; n_tracks];
    for (n, r) in csv_rows(labels, LABELS_HEADER, labels_path, 3)? {
        let j = id_in(r[0], "track id", n_tracks, labels_path, n)?;
        let i = id_in(r[1], "image id", n_images, labels_path, n)?;
        corrupted[j][i] = match r[2] {
            "0" => false,
            "1" => true,
            other => return Err(format_error(labels_path, n, format!("corrupted flag must be 0 or 1, found {other:?}"))),
        };
    }
    Ok(GroundTruth { points, normals, corrupted })
}

pub fn read_ground_truth(dir: &Path, n_images: usize, n_tracks: usize) -> Result<GroundTruth> {
    let gp = dir.join(GROUND_TRUTH_FILE);
    let lp = dir.join(LABELS_FILE);
    parse_ground_truth(&read_text(&gp)?, &path_str(&gp), &read_text(&lp)?, &path_str(&lp), n_images, n_tracks)
}

/// One reconstructed point as stored in a cloud file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    /// 0-based track index.
    pub track: usize,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub inlier: bool,
}

pub fn cloud_file_name(image: usize) -> String {
    format!("cloud_{:03}.ply", image + 1)
}

/// ASCII PLY for one image; `image` is 0-based.
pub fn format_ply(image: usize, points: &[CloudPoint]) -> String {
    let mut out = String::new();
    writeln!(out, "ply\nformat ascii 1.0\ncomment isonrsfm image {}", image + 1).unwrap();
    writeln!(out, "element vertex {}", points.len()).unwrap();
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(out, "property double {p}").unwrap();
    }
    writeln!(out, "property uchar inlier\nproperty int track_id\nend_header").unwrap();
    for c in points {
        let (p, n) = (c.point, c.normal);
        writeln!(out, "{} {} {} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z, c.inlier as u8, c.track + 1).unwrap();
    }
    out
}

const PLY_HEADER_TAIL: [&str; 9] = [
    "property double x",
    "property double y",
    "property double z",
    "property double nx",
    "property double ny",
    "property double nz",
    "property uchar inlier",
    "property int track_id",
    "end_header",
];

/// Parses a cloud; returns the 0-based image and its points.
pub fn parse_ply(text: &str, path: &str) -> Result<(usize, Vec<CloudPoint>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let mut expect = |want: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, l)) if l.starts_with(want) => Ok((n, l[want.len()..].trim().to_string())),
            Some((n, l)) => Err(format_error(path, n, format!("expected {want:?}, found {l:?}"))),
            None => Err(format_error(path, 0, format!("truncated header, missing {want:?}"))),
        }
    };
    expect("ply")?;
    expect("format ascii 1.0")?;
    let (n, img) = expect("comment isonrsfm image")?;
    let image: usize = parse_num(&img, "image id", path, n)?;
    if image == 0 {
        return Err(format_error(path, n, "image id must be positive"));
    }
    let (n, count) = expect("element vertex")?;
    let count: usize = parse_num(&count, "vertex count", path, n)?;
    for h in PLY_HEADER_TAIL {
        expect(h)?;
    }
    let mut points = Vec::with_capacity(count);
    for (n, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let tok: Vec<&str> = l.split_whitespace().collect();
        if tok.len() != 8 {
            return Err(format_error(path, n, format!("expected 8 fields, found {}", tok.len())));
        }
        let mut v = [0.0; 6];
        for (k, x) in v.iter_mut().enumerate() {
            *x = parse_finite(tok[k], "vertex value", path, n)?;
        }
        let inlier = match tok[6] {
            "0" => false,
            "1" => true,
            other => return Err(format_error(path, n, format!("inlier flag must be 0 or 1, found {other:?}"))),
        };
        let track: usize = parse_num(tok[7], "track id", path, n)?;
        if track == 0 {
            return Err(format_error(path, n, "track id must be positive"));
        }
        points.push(CloudPoint {
            track: track - 1,
            point: Vector3::new(v[0], v[1], v[2]),
            normal: Vector3::new(v[3], v[4], v[5]),
            inlier,
        });
    }
    if points.len() != count {
        return Err(format_error(path, 0, format!("header declares {count} vertices, found {}", points.len())));
    }
    Ok((image - 1, points))
}

pub fn read_ply(path: &Path) -> Result<(usize, Vec<CloudPoint>)> {
    parse_ply(&read_text(path)?, &path_str(path))
}

/// Points of one image from `[image][track]` estimates, in track order.
pub fn cloud_points(estimates: &[Option<PointEstimate>]) -> Vec<CloudPoint> {
    estimates
        .iter()
        .enumerate()
        .filter_map(|(j, e)| e.map(|e| CloudPoint { track: j, point: e.point, normal: e.normal, inlier: e.inlier }))
        .collect()
}

/// Run report: everything about a reconstruction except wall-clock timings, which live in a
/// separate file so that reports of identical runs are identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: PipelineConfig,
    pub n_images: usize,
    pub n_tracks: usize,
    pub plan: SubsetPlan,
    /// α per image, `null` for images without a scale.
    pub scales: Vec<Option<f64>>,
    /// `[track][image]`: true inlier, false outlier, `null` when not visible.
    pub labels: Vec<Vec<Option<bool>>>,
    pub reconstructed_points: usize,
    pub tracks: Vec<TrackSummary>,
    pub subsets: Vec<SubsetSummary>,
    pub failures: Vec<Failure>,
    /// Present when the dataset carries ground truth.
    pub metrics: Option<EvalReport>,
}

impl RunReport {
    pub fn new(out: &PipelineOutput, metrics: Option<EvalReport>) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            version: FORMAT_VERSION,
            seed: out.config.seed,
            config: out.config.clone(),
            n_images: out.n_images,
            n_tracks: out.n_tracks,
            plan: out.plan.clone(),
            scales: out.scales.clone(),
            labels: out.labels.clone(),
            reconstructed_points: out.reconstructed_count(),
            tracks: out.tracks.clone(),
            subsets: out.subsets.clone(),
            failures: out.failures.clone(),
            metrics,
        }
    }
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let r: RunReport = read_json(path)?;
    if r.format != REPORT_FORMAT || r.version != FORMAT_VERSION {
        return Err(format_error(&path_str(path), 1, format!("not a version {FORMAT_VERSION} {REPORT_FORMAT} file")));
    }
    Ok(r)
}

pub fn read_timings(path: &Path) -> Result<Timings> {
    read_json(path)
}

/// Mean metrics over seeds at one contamination fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub seeds: usize,
    pub evaluated_points: f64,
    pub depth_rmse_mm: f64,
    pub shape_rmse_deg: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub fpr: f64,
    pub fnr: f64,
}

impl SweepRow {
    pub fn mean(fraction: f64, reports: &[EvalReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self {
            fraction,
            seeds: reports.len(),
            evaluated_points: avg(&|r| r.evaluated_points as f64),
            depth_rmse_mm: avg(&|r| r.depth_rmse_mm),
            shape_rmse_deg: avg(&|r| r.shape_rmse_deg),
            tpr: avg(&|r| r.rates.tpr),
            tnr: avg(&|r| r.rates.tnr),
            fpr: avg(&|r| r.rates.fpr),
            fnr: avg(&|r| r.rates.fnr),
        }
    }
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{SWEEP_HEADER}").unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.fraction, r.seeds, r.evaluated_points, r.depth_rmse_mm, r.shape_rmse_deg, r.tpr, r.tnr, r.fpr, r.fnr
        )
        .unwrap();
    }
    out
}

pub fn parse_sweep(text: &str, path: &str) -> Result<Vec<SweepRow>> {
    csv_rows(text, SWEEP_HEADER, path, 9)?
        .map(|(n, r)| {
            let f = |k: usize, what: &str| parse_num::<f64>(r[k], what, path, n);
            Ok(SweepRow {
                fraction: f(0, "fraction")?,
                seeds: parse_num(r[1], "seed count", path, n)?,
                evaluated_points: f(2, "evaluated points")?,
                depth_rmse_mm: f(3, "depth error")?,
                shape_rmse_deg: f(4, "shape error")?,
                tpr: f(5, "tpr")?,
                tnr: f(6, "tnr")?,
                fpr: f(7, "fpr")?,
                fnr: f(8, "fnr")?,
            })
        })
        .collect()
}

/// Rebuilds `[image][track]` estimates from cloud files for evaluation.
pub fn estimates_from_clouds(clouds: &[(usize, Vec<CloudPoint>)], n_images: usize, n_tracks: usize) -> Result<Vec<Vec<Option<PointEstimate>>>> {
    let mut est = vec![vec![None; n_tracks]; n_images];
    for (i, pts) in clouds {
        if *i >= n_images {
            return Err(Error::InvalidInput(format!("cloud for image {} but the report has {n_images} images", i + 1)));
        }
        for c in pts {
            if c.track >= n_tracks {
                return Err(Error::InvalidInput(format!("cloud of image {} names track {} of {n_tracks}", i + 1, c.track + 1)));
            }
            est[*i][c.track] = Some(PointEstimate { point: c.point, normal: c.normal, shape: Default::default(), inlier: c.inlier });
        }
    }
    Ok(est)
}
