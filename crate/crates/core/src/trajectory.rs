//! Keypoint trajectories: storage, CSV I/O, pixel calibration, resampling and
//! extraction of observation points along a centerline.
//!
//! CSV layout (header required): `t,P0x,P0y,P1x,P1y,...`, SI units, `.` as
//! decimal separator, LF line endings. Values are written with 17 significant
//! digits so a save/load cycle reproduces every bit.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::TrajectoryError;

/// Time-stamped keypoint positions, stored row-major (`N × K`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    labels: Vec<String>,
    points: Vec<Vector2<f64>>,
}

/// `P0`, `P1`, ...
pub fn keypoint_labels(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("P{i}")).collect()
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        labels: Vec<String>,
        points: Vec<Vector2<f64>>,
    ) -> Result<Self, TrajectoryError> {
        if times.is_empty() {
            return Err(TrajectoryError::Invalid("no samples".into()));
        }
        if labels.is_empty() {
            return Err(TrajectoryError::Invalid("no keypoints".into()));
        }
        if points.len() != times.len() * labels.len() {
            return Err(TrajectoryError::Invalid(format!(
                "{} points for {} samples of {} keypoints",
                points.len(),
                times.len(),
                labels.len()
            )));
        }
        check_times(&times, 0)?;
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(TrajectoryError::Invalid("non-finite point".into()));
        }
        Ok(Self {
            times,
            labels,
            points,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn n_keypoints(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[Vector2<f64>] {
        let k = self.labels.len();
        &self.points[i * k..(i + 1) * k]
    }

    pub fn point(&self, i: usize, keypoint: usize) -> Vector2<f64> {
        self.points[i * self.labels.len() + keypoint]
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Keeps only the named keypoints, in the order given.
    pub fn select(&self, labels: &[String]) -> Result<Trajectory, TrajectoryError> {
        let idx: Vec<usize> = labels
            .iter()
            .map(|l| {
                self.labels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| TrajectoryError::Invalid(format!("unknown keypoint {l}")))
            })
            .collect::<Result<_, _>>()?;
        let points = (0..self.n_samples())
            .flat_map(|i| idx.iter().map(move |&k| (i, k)))
            .map(|(i, k)| self.point(i, k))
            .collect();
        Trajectory::new(self.times.clone(), labels.to_vec(), points)
    }

    /// Same samples with every point shifted by `offset`.
    pub fn translated(&self, offset: Vector2<f64>) -> Trajectory {
        Trajectory {
            points: self.points.iter().map(|p| p + offset).collect(),
            ..self.clone()
        }
    }
}

fn check_times(times: &[f64], row_offset: usize) -> Result<(), TrajectoryError> {
    if let Some(i) = times.iter().position(|t| !t.is_finite()) {
        return Err(TrajectoryError::Invalid(format!(
            "non-finite time at row {}",
            i + row_offset
        )));
    }
    for (i, w) in times.windows(2).enumerate() {
        if w[1] == w[0] {
            return Err(TrajectoryError::DuplicateTimestamp {
                row: i + 1 + row_offset,
                t: w[1],
            });
        }
        if w[1] < w[0] {
            return Err(TrajectoryError::NonMonotonicTime {
                row: i + 1 + row_offset,
                prev: w[0],
                next: w[1],
            });
        }
    }
    Ok(())
}

/// Pixel-to-world mapping: `p = (p_px − origin_px) · meters_per_pixel`, with
/// `y` negated when `flip_y` (image rows grow downward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub meters_per_pixel: f64,
    pub origin_px: [f64; 2],
    #[serde(default)]
    pub flip_y: bool,
}

impl Calibration {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.meters_per_pixel > 0.0 && self.meters_per_pixel.is_finite() {
            Ok(())
        } else {
            Err(TrajectoryError::Invalid(format!(
                "meters_per_pixel must be positive, got {}",
                self.meters_per_pixel
            )))
        }
    }

    pub fn to_world(&self, px: Vector2<f64>) -> Vector2<f64> {
        let x = (px.x - self.origin_px[0]) * self.meters_per_pixel;
        let y = (px.y - self.origin_px[1]) * self.meters_per_pixel;
        Vector2::new(x, if self.flip_y { -y } else { y })
    }

    /// Reads a JSON sidecar `{meters_per_pixel, origin_px, flip_y}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrajectoryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TrajectoryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cal: Calibration = serde_json::from_str(&text).map_err(|e| TrajectoryError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        cal.validate()?;
        Ok(cal)
    }
}

fn parse_header(header: &csv::StringRecord) -> Result<Vec<String>, TrajectoryError> {
    let bad = |message: String| TrajectoryError::Parse { line: 1, message };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(bad("first column must be `t`".into()));
    }
    let coords = &cols[1..];
    if coords.is_empty() || coords.len() % 2 != 0 {
        return Err(bad(format!(
            "expected pairs of x/y columns after `t`, found {}",
            coords.len()
        )));
    }
    coords
        .chunks(2)
        .map(|pair| {
            let label = pair[0]
                .strip_suffix('x')
                .filter(|l| !l.is_empty() && pair[1].strip_suffix('y') == Some(l))
                .ok_or_else(|| bad(format!("columns `{}`,`{}` are not an x/y pair", pair[0], pair[1])))?;
            Ok(label.to_string())
        })
        .collect()
}

/// Reads a keypoint CSV, optionally mapping pixel coordinates to meters.
pub fn load_trajectory(
    path: impl AsRef<Path>,
    calibration: Option<&Calibration>,
) -> Result<Trajectory, TrajectoryError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TrajectoryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_trajectory(file, calibration)
}

pub fn read_trajectory(
    reader: impl std::io::Read,
    calibration: Option<&Calibration>,
) -> Result<Trajectory, TrajectoryError> {
    if let Some(c) = calibration {
        c.validate()?;
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| TrajectoryError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let labels = parse_header(header)?;
    let width = 1 + 2 * labels.len();

    let mut times = Vec::new();
    let mut points = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| TrajectoryError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(TrajectoryError::Parse {
                line,
                message: format!("expected {width} cells, found {}", record.len()),
            });
        }
        let mut cells = record.iter().map(|cell| {
            cell.parse::<f64>().map_err(|_| TrajectoryError::Parse {
                line,
                message: format!("`{cell}` is not a number"),
            })
        });
        times.push(cells.next().expect("width >= 3")?);
        while let Some(x) = cells.next() {
            let y = cells.next().expect("even coordinate count")?;
            let p = Vector2::new(x?, y);
            points.push(calibration.map_or(p, |c| c.to_world(p)));
        }
    }
    check_times(&times, 0)?;
    Trajectory::new(times, labels, points)
}

/// Writes `traj` as CSV with 17 significant digits per value.
pub fn save_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<(), TrajectoryError> {
    let path = path.as_ref();
    let io_err = |source| TrajectoryError::Io {
        path: path.to_path_buf(),
        source,
    };
    // re-check invariants so a hand-built value cannot write a bad file
    let traj = Trajectory::new(traj.times.clone(), traj.labels.clone(), traj.points.clone())?;
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_trajectory(&traj, file).map_err(io_err)
}

pub fn write_trajectory(traj: &Trajectory, writer: impl std::io::Write) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = vec!["t".to_string()];
    for l in &traj.labels {
        header.push(format!("{l}x"));
        header.push(format!("{l}y"));
    }
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..traj.n_samples() {
        record.clear();
        record.push(format!("{:.16e}", traj.times[i]));
        for p in traj.row(i) {
            record.push(format!("{:.16e}", p.x));
            record.push(format!("{:.16e}", p.y));
        }
        w.write_record(&record)?;
    }
    w.flush()
}

/// Piecewise-linear interpolation of every keypoint at `new_times`. Original
/// timestamps are reproduced exactly.
pub fn resample(traj: &Trajectory, new_times: &[f64]) -> Result<Trajectory, TrajectoryError> {
    let (start, end) = (traj.start_time(), traj.end_time());
    let k = traj.n_keypoints();
    let mut points = Vec::with_capacity(new_times.len() * k);
    for &t in new_times {
        if !(t >= start && t <= end) {
            return Err(TrajectoryError::OutOfRange { t, start, end });
        }
        // last index with times[i] <= t
        let i = traj.times.partition_point(|&x| x <= t) - 1;
        if traj.times[i] == t {
            points.extend_from_slice(traj.row(i));
        } else {
            let (t0, t1) = (traj.times[i], traj.times[i + 1]);
            let alpha = (t - t0) / (t1 - t0);
            let (a, b) = (traj.row(i), traj.row(i + 1));
            points.extend(a.iter().zip(b).map(|(p, q)| p + (q - p) * alpha));
        }
    }
    Trajectory::new(new_times.to_vec(), traj.labels.clone(), points)
}

/// Points at the given arc-length fractions of `polyline`. Fraction 0 and 1
/// return the first and last vertex exactly.
pub fn keypoints_from_centerline(
    polyline: &[Vector2<f64>],
    fractions: &[f64],
) -> Result<Vec<Vector2<f64>>, TrajectoryError> {
    if polyline.len() < 2 {
        return Err(TrajectoryError::DegeneratePolyline { length: 0.0 });
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(TrajectoryError::Invalid(format!("fraction {f} outside [0, 1]")));
    }
    let total: f64 = polyline.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    if !(total >= 1e-12) {
        return Err(TrajectoryError::DegeneratePolyline { length: total });
    }
    let last = polyline[polyline.len() - 1];
    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if f == 0.0 {
            out.push(polyline[0]);
            continue;
        }
        if f == 1.0 {
            out.push(last);
            continue;
        }
        let target = f * total;
        let mut walked = 0.0;
        let mut found = last;
        for w in polyline.windows(2) {
            let seg = (w[1] - w[0]).norm();
            if seg > 0.0 && walked + seg >= target {
                found = w[0] + (w[1] - w[0]) * ((target - walked) / seg);
                break;
            }
            walked += seg;
        }
        out.push(found);
    }
    Ok(out)
}
