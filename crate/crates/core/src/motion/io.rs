//! Text formats for motion tracks.
//!
//! Rate tracks (gyroscope, event-camera estimates):
//!
//! ```text
//! # sensor=imu0 kind=imu
//! t,wx,wy,wz[,inliers,support]
//! 0.005000000,0.12,-0.4,1.05
//! ```
//!
//! Relative-rotation tracks (frame camera, LiDAR), rotation vector of `R_cj_ci`:
//!
//! ```text
//! # sensor=cam0 kind=frame convention=R_cj_ci
//! t_i,t_j,rx,ry,rz
//! ```
//!
//! Times are written with nine decimals and values with the shortest
//! round-trip representation, so load followed by save reproduces a file
//! byte for byte.

use super::{AngularVelocitySample, RelativeRotationSample, SensorKind, SensorTrack};
use nalgebra::Vector3;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const RELATIVE_CONVENTION: &str = "R_cj_ci";
const INVERSE_CONVENTION: &str = "R_ci_cj";

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {t} does not increase (previous {prev})")]
    NonMonotonic { line: usize, t: f64, prev: f64 },
    #[error("line {line}: duplicate timestamp {t}")]
    Duplicate { line: usize, t: f64 },
    #[error("header declares kind '{found}' but '{expected}' was requested")]
    KindMismatch { expected: SensorKind, found: SensorKind },
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Treat stored relative rotations as `R_ci_cj` and invert them on load.
    pub invert_relative: bool,
    /// Sensor id to use when the file header does not name one.
    pub default_id: Option<String>,
}

pub fn load_track(path: &Path, kind: SensorKind) -> Result<SensorTrack, TrackError> {
    load_track_with(path, kind, &LoadOptions::default())
}

pub fn load_track_with(path: &Path, kind: SensorKind, opts: &LoadOptions) -> Result<SensorTrack, TrackError> {
    let text =
        fs::read_to_string(path).map_err(|source| TrackError::Io { path: path.display().to_string(), source })?;
    let fallback = opts
        .default_id
        .clone()
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| kind.to_string());
    parse_track(&text, kind, &fallback, opts.invert_relative)
}

fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.trim_start_matches('#')
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
}

pub(crate) fn parse_track(
    text: &str,
    kind: SensorKind,
    fallback_id: &str,
    invert_relative: bool,
) -> Result<SensorTrack, TrackError> {
    let mut id = fallback_id.to_string();
    let mut invert = invert_relative;
    let mut rates = Vec::new();
    let mut relative = Vec::new();
    let mut prev: Option<f64> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some(v) = header_value(line, "sensor") {
                id = v.to_string();
            }
            if let Some(v) = header_value(line, "kind") {
                let found: SensorKind =
                    v.parse().map_err(|message| TrackError::Parse { line: line_no, message })?;
                if found != kind {
                    return Err(TrackError::KindMismatch { expected: kind, found });
                }
            }
            if let Some(v) = header_value(line, "convention") {
                match v {
                    RELATIVE_CONVENTION => {}
                    INVERSE_CONVENTION => invert = !invert,
                    other => {
                        return Err(TrackError::Parse {
                            line: line_no,
                            message: format!("unknown convention tag '{other}'"),
                        })
                    }
                }
            }
            continue;
        }
        if line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            // column header
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| TrackError::Parse {
                    line: line_no,
                    message: format!("bad number '{}': {e}", f.trim()),
                })
            })
            .collect::<Result<_, _>>()?;
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(TrackError::Parse { line: line_no, message: "non-finite value".into() });
        }

        let t = fields[0];
        if let Some(p) = prev {
            if t == p {
                return Err(TrackError::Duplicate { line: line_no, t });
            }
            if t < p {
                return Err(TrackError::NonMonotonic { line: line_no, t, prev: p });
            }
        }
        prev = Some(t);

        if kind.is_relative() {
            if fields.len() != 5 {
                return Err(TrackError::Parse {
                    line: line_no,
                    message: format!("expected 5 columns t_i,t_j,rx,ry,rz, found {}", fields.len()),
                });
            }
            if !(fields[1] > fields[0]) {
                return Err(TrackError::Parse { line: line_no, message: "t_j must exceed t_i".into() });
            }
            let mut rotvec = Vector3::new(fields[2], fields[3], fields[4]);
            if invert {
                rotvec = -rotvec;
            }
            relative.push(RelativeRotationSample { t_i: fields[0], t_j: fields[1], rotvec });
        } else {
            let (inliers, support) = match fields.len() {
                4 => (0, 1.0),
                6 => (fields[4] as usize, fields[5]),
                n => {
                    return Err(TrackError::Parse {
                        line: line_no,
                        message: format!("expected 4 or 6 columns, found {n}"),
                    })
                }
            };
            rates.push(AngularVelocitySample {
                t,
                omega: Vector3::new(fields[1], fields[2], fields[3]),
                inliers,
                support,
            });
        }
    }

    Ok(SensorTrack { id, kind, angular_velocity: rates, relative_rotations: relative })
}

/// Serialize a track in its documented text format.
pub fn format_track(track: &SensorTrack) -> String {
    let mut out = String::new();
    if track.kind.is_relative() {
        let _ = writeln!(out, "# sensor={} kind={} convention={}", track.id, track.kind, RELATIVE_CONVENTION);
        out.push_str("t_i,t_j,rx,ry,rz\n");
        for s in &track.relative_rotations {
            let v = s.rotvec;
            let _ = writeln!(out, "{:.9},{:.9},{},{},{}", s.t_i, s.t_j, v.x, v.y, v.z);
        }
    } else {
        let _ = writeln!(out, "# sensor={} kind={}", track.id, track.kind);
        let with_stats = track.kind == SensorKind::Event;
        if with_stats {
            out.push_str("t,wx,wy,wz,inliers,support\n");
        } else {
            out.push_str("t,wx,wy,wz\n");
        }
        for s in &track.angular_velocity {
            let _ = write!(out, "{:.9},{},{},{}", s.t, s.omega.x, s.omega.y, s.omega.z);
            if with_stats {
                let _ = write!(out, ",{},{}", s.inliers, s.support);
            }
            out.push('\n');
        }
    }
    out
}

pub fn save_track(track: &SensorTrack, path: &Path) -> Result<(), TrackError> {
    fs::write(path, format_track(track)).map_err(|source| TrackError::Io { path: path.display().to_string(), source })
}
