//! Trajectory persistence.
//!
//! The canonical format is a CSV file with optional leading `# key: value`
//! metadata lines, a header row, one sample per row and per-row gesture and
//! unsafe labels. JIGSAWS-style kinematics (whitespace separated, 76 or 38
//! columns) can be ingested together with a transcription file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    Arm, GestureId, GestureSegment, KinematicsSample, Source, Trajectory, TrajectoryMeta, ARM_FEATURES,
    NUM_FEATURES,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Csv,
    Jigsaws,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(InputFormat::Csv),
            "jigsaws" => Ok(InputFormat::Jigsaws),
            other => Err(Error::Config(format!("unknown input format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Required for files without a `t_ms` column or rate metadata.
    pub sample_rate_hz: Option<f64>,
    /// JIGSAWS transcription (`<start> <end> G<k>` per line).
    pub transcription: Option<PathBuf>,
    /// Added to transcription frame numbers to obtain sample indices.
    pub frame_offset: i64,
    pub length_unit: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            sample_rate_hz: None,
            transcription: None,
            frame_offset: 0,
            length_unit: None,
        }
    }
}

const JIGSAWS_RATE_HZ: f64 = 30.0;

fn arm_columns(prefix: char) -> Vec<String> {
    let mut cols = vec![];
    for c in ["px", "py", "pz"] {
        cols.push(format!("{prefix}_{c}"));
    }
    for r in 1..=3 {
        for c in 1..=3 {
            cols.push(format!("{prefix}_r{r}{c}"));
        }
    }
    cols.push(format!("{prefix}_ga"));
    for c in ["vx", "vy", "vz", "wx", "wy", "wz"] {
        cols.push(format!("{prefix}_{c}"));
    }
    cols
}

/// The 38 feature column names in canonical order.
pub fn feature_columns() -> Vec<String> {
    let mut cols = arm_columns('L');
    cols.extend(arm_columns('R'));
    cols
}

pub fn load_trajectory(path: &Path, format: InputFormat, opts: &LoadOptions) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut traj = match format {
        InputFormat::Csv => parse_csv(&text, opts)?,
        InputFormat::Jigsaws => parse_jigsaws(&text, opts)?,
    };
    if traj.meta.name.is_empty() {
        traj.meta.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    if let Some(tpath) = &opts.transcription {
        let ttext = fs::read_to_string(tpath).map_err(|e| Error::file(tpath, e))?;
        traj.segments = parse_transcription(&ttext, opts.frame_offset)?;
    }
    traj.validate()?;
    Ok(traj)
}

fn parse_csv(text: &str, opts: &LoadOptions) -> Result<Trajectory> {
    let mut meta = TrajectoryMeta::default();
    let mut rate = opts.sample_rate_hz;
    let mut source = Source::Synthetic;
    let mut unit = opts.length_unit.clone().unwrap_or_else(|| "unit".into());
    let mut body_start = 0usize;
    let mut header_line = 1usize;
    for line in text.split_inclusive('\n') {
        let Some(rest) = line.strip_prefix('#') else { break };
        body_start += line.len();
        header_line += 1;
        let Some((key, value)) = rest.split_once(':') else { continue };
        let value = value.trim();
        match key.trim() {
            "sample_rate_hz" if opts.sample_rate_hz.is_none() => {
                rate = Some(value.parse().map_err(|_| Error::Parse {
                    line: header_line - 1,
                    message: format!("bad sample rate {value:?}"),
                })?)
            }
            "source" => {
                source = match value {
                    "jigsaws" => Source::Jigsaws,
                    _ => Source::Synthetic,
                }
            }
            "length_unit" if opts.length_unit.is_none() => unit = value.to_string(),
            "name" => meta.name = value.to_string(),
            "group" => meta.group = Some(value.to_string()),
            "fault_onset_ms" => {
                meta.fault_onset_ms = Some(value.parse().map_err(|_| Error::Parse {
                    line: header_line - 1,
                    message: format!("bad fault onset {value:?}"),
                })?)
            }
            _ => {}
        }
    }
    let body = &text[body_start..];
    if body.trim().is_empty() {
        return Err(Error::Structure("trajectory file is empty".into()));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(body.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let has_time = headers.first().map(String::as_str) == Some("t_ms");
    let first_feature = usize::from(has_time);
    let expected = feature_columns();
    if headers.len() < first_feature + NUM_FEATURES
        || headers[first_feature..first_feature + NUM_FEATURES] != expected[..]
    {
        return Err(Error::Parse {
            line: header_line,
            message: "header does not list the 38 kinematics columns in canonical order".into(),
        });
    }
    let gesture_col = headers.iter().position(|h| h == "gesture");
    let unsafe_col = headers.iter().position(|h| h == "unsafe");
    if !has_time && rate.is_none() {
        return Err(Error::Config(
            "file has no t_ms column; a sample rate is required".into(),
        ));
    }

    let mut samples = Vec::new();
    let mut labels: Vec<Option<(GestureId, bool, Vec<String>)>> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = header_line + 1 + row_no;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            let cell = record[i].trim();
            cell.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column {:?} is not numeric: {cell:?}", headers[i]),
            })
        };
        let t = if has_time {
            num(0)?
        } else {
            Trajectory::nominal_timestamp(rate.unwrap_or(JIGSAWS_RATE_HZ), samples.len())
        };
        let mut f = [0.0; NUM_FEATURES];
        for (j, v) in f.iter_mut().enumerate() {
            *v = num(first_feature + j)?;
        }
        samples.push(KinematicsSample::from_features(t, &f));

        let label = match gesture_col.map(|c| record[c].trim()) {
            Some(g) if !g.is_empty() => {
                let gesture = g.parse::<GestureId>().map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
                let (flag, codes) = match unsafe_col.map(|c| record[c].trim()) {
                    Some(u) if !u.is_empty() => parse_unsafe_cell(u).ok_or_else(|| Error::Parse {
                        line,
                        message: format!("bad unsafe flag {u:?}"),
                    })?,
                    _ => (false, Vec::new()),
                };
                Some((gesture, flag, codes))
            }
            _ => None,
        };
        labels.push(label);
    }
    if samples.is_empty() {
        return Err(Error::Structure("trajectory file has no samples".into()));
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].timestamp_ms <= pair[0].timestamp_ms {
            return Err(Error::Structure(format!(
                "non-monotone or duplicate timestamp at data row {}",
                i + 2
            )));
        }
    }
    let rate = match rate {
        Some(r) => r,
        None if samples.len() >= 2 => {
            1000.0 * (samples.len() - 1) as f64 / (samples[samples.len() - 1].timestamp_ms - samples[0].timestamp_ms)
        }
        None => return Err(Error::Config("cannot infer sample rate from one sample".into())),
    };

    Ok(Trajectory {
        samples,
        sample_rate_hz: rate,
        segments: segments_from_labels(&labels),
        source,
        length_unit: unit,
        meta,
    })
}

fn parse_unsafe_cell(cell: &str) -> Option<(bool, Vec<String>)> {
    let mut parts = cell.split(';');
    let flag = match parts.next()? {
        "0" => false,
        "1" => true,
        _ => return None,
    };
    Some((flag, parts.map(str::to_string).collect()))
}

fn segments_from_labels(labels: &[Option<(GestureId, bool, Vec<String>)>]) -> Vec<GestureSegment> {
    let mut out: Vec<GestureSegment> = Vec::new();
    let mut prev: Option<&(GestureId, bool, Vec<String>)> = None;
    for (i, label) in labels.iter().enumerate() {
        match label {
            Some(l) if prev == Some(l) => out.last_mut().expect("open segment").end = i,
            Some(l) => out.push(GestureSegment {
                gesture: l.0,
                start: i,
                end: i,
                unsafe_: l.1,
                error_codes: l.2.clone(),
            }),
            None => {}
        }
        prev = label.as_ref();
    }
    out
}

/// Writes the canonical CSV. Adjacent segments must differ in gesture,
/// unsafe flag or error codes to survive a reload unchanged.
pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(traj.len() * 400);
    let _ = writeln!(out, "# sample_rate_hz: {}", traj.sample_rate_hz);
    let _ = writeln!(
        out,
        "# source: {}",
        match traj.source {
            Source::Jigsaws => "jigsaws",
            Source::Synthetic => "synthetic",
        }
    );
    let _ = writeln!(out, "# length_unit: {}", traj.length_unit);
    if !traj.meta.name.is_empty() {
        let _ = writeln!(out, "# name: {}", traj.meta.name);
    }
    if let Some(g) = &traj.meta.group {
        let _ = writeln!(out, "# group: {g}");
    }
    if let Some(t) = traj.meta.fault_onset_ms {
        let _ = writeln!(out, "# fault_onset_ms: {t}");
    }
    out.push_str("t_ms,");
    out.push_str(&feature_columns().join(","));
    out.push_str(",gesture,unsafe\n");

    let mut seg_iter = traj.segments.iter().peekable();
    for (i, s) in traj.samples.iter().enumerate() {
        let _ = write!(out, "{}", s.timestamp_ms);
        for v in s.features() {
            let _ = write!(out, ",{v}");
        }
        while seg_iter.peek().is_some_and(|seg| seg.end < i) {
            seg_iter.next();
        }
        match seg_iter.peek().filter(|seg| seg.contains(i)) {
            Some(seg) => {
                let _ = write!(out, ",{},{}", seg.gesture, u8::from(seg.unsafe_));
                for code in &seg.error_codes {
                    let _ = write!(out, ";{code}");
                }
                out.push('\n');
            }
            None => out.push_str(",,\n"),
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))
}

/// JIGSAWS per-arm layout: position, rotation, linear velocity, angular
/// velocity, grasper angle. Maps one arm block into canonical order.
fn jigsaws_arm_to_canonical(src: &[f64], dst: &mut [f64]) {
    dst[0..12].copy_from_slice(&src[0..12]);
    dst[12] = src[18];
    dst[13..19].copy_from_slice(&src[12..18]);
}

fn parse_jigsaws(text: &str, opts: &LoadOptions) -> Result<Trajectory> {
    let rate = opts.sample_rate_hz.unwrap_or(JIGSAWS_RATE_HZ);
    let mut samples = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|c| {
                c.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("non-numeric value {c:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let w = *width.get_or_insert(values.len());
        if values.len() != w || !(w == 2 * NUM_FEATURES || w == NUM_FEATURES) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 76 or 38 columns consistently, found {}", values.len()),
            });
        }
        // slave (patient-side) manipulators are the last 38 columns
        let slave = &values[w - NUM_FEATURES..];
        let mut f = [0.0; NUM_FEATURES];
        for arm in [Arm::Left, Arm::Right] {
            let b = arm.base();
            jigsaws_arm_to_canonical(&slave[b..b + ARM_FEATURES], &mut f[b..b + ARM_FEATURES]);
        }
        let t = Trajectory::nominal_timestamp(rate, samples.len());
        samples.push(KinematicsSample::from_features(t, &f));
    }
    if samples.is_empty() {
        return Err(Error::Structure("kinematics file is empty".into()));
    }
    Ok(Trajectory {
        samples,
        sample_rate_hz: rate,
        segments: vec![],
        source: Source::Jigsaws,
        length_unit: opts.length_unit.clone().unwrap_or_else(|| "m".into()),
        meta: TrajectoryMeta::default(),
    })
}

/// Parses `<startframe> <endframe> G<k>` lines into ordered segments.
pub fn parse_transcription(text: &str, frame_offset: i64) -> Result<Vec<GestureSegment>> {
    let mut out: Vec<GestureSegment> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected '<start> <end> G<k>', found {line:?}"),
            });
        }
        let frame = |s: &str| -> Result<usize> {
            let f: i64 = s.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad frame number {s:?}"),
            })?;
            usize::try_from(f + frame_offset).map_err(|_| Error::Structure(format!(
                "frame {f} maps to a negative sample index at line {}",
                i + 1
            )))
        };
        let start = frame(fields[0])?;
        let end = frame(fields[1])?;
        let gesture = fields[2].parse::<GestureId>().map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if start > end {
            return Err(Error::Structure(format!("line {}: start frame after end frame", i + 1)));
        }
        if out.last().is_some_and(|prev| start <= prev.end) {
            return Err(Error::Structure(format!(
                "line {}: non-monotone or duplicate frame indices",
                i + 1
            )));
        }
        out.push(GestureSegment::new(gesture, start, end));
    }
    Ok(out)
}
