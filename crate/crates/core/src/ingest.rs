//! Loading recorded leader logs from CSV, locally weighted regression
//! smoothing for noisy channels, and conversion onto the uniform grid the
//! simulator replays.

use crate::simulate::{central_differences, SampledTrajectory, SimulateError};
use csv::ReaderBuilder;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no data rows found")]
    EmptyFile,
    #[error("required column '{0}' not found in header")]
    MissingColumn(&'static str),
    #[error("row {row}: field '{field}' does not parse as a number")]
    UnparsableRow { row: usize, field: String },
    #[error("span keeps {0} points per window; at least 2 are required")]
    SpanTooSmall(usize),
    #[error("window around index {0} has zero time spread; cannot fit a line")]
    DegenerateWindow(usize),
    #[error("output step {0} must be positive")]
    NonPositiveStep(f64),
    #[error(transparent)]
    Trajectory(#[from] SimulateError),
}

/// One row of a leader log. Velocity and acceleration are optional; missing
/// channels are reconstructed by differentiating the smoothed position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub position: f64,
    pub velocity: Option<f64>,
    pub acceleration: Option<f64>,
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

/// Reads a leader log. Recognized headers: time as `t`/`time`, position as
/// `p`/`pos`/`position`, velocity as `v`/`velocity`, acceleration as
/// `a`/`accel`/`acceleration`. Rows are sorted by time and rows sharing a
/// timestamp are averaged channel-wise.
pub fn read_trajectory_csv<R: Read>(reader: R) -> Result<Vec<TrajectoryRecord>, IngestError> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let t_col = find_column(&headers, &["t", "time"]).ok_or(IngestError::MissingColumn("t"))?;
    let p_col = find_column(&headers, &["p", "pos", "position"])
        .ok_or(IngestError::MissingColumn("position"))?;
    let v_col = find_column(&headers, &["v", "velocity"]);
    let a_col = find_column(&headers, &["a", "accel", "acceleration"]);

    let parse = |rec: &csv::StringRecord, col: usize, row: usize| -> Result<f64, IngestError> {
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<f64>().map_err(|_| IngestError::UnparsableRow {
            row,
            field: raw.to_string(),
        })
    };

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        rows.push(TrajectoryRecord {
            t: parse(&rec, t_col, row)?,
            position: parse(&rec, p_col, row)?,
            velocity: v_col.map(|c| parse(&rec, c, row)).transpose()?,
            acceleration: a_col.map(|c| parse(&rec, c, row)).transpose()?,
        });
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    rows.sort_by(|a, b| a.t.total_cmp(&b.t));

    // average duplicate timestamps channel-wise
    let mut merged: Vec<TrajectoryRecord> = Vec::with_capacity(rows.len());
    let mut i = 0;
    while i < rows.len() {
        let mut j = i + 1;
        while j < rows.len() && rows[j].t == rows[i].t {
            j += 1;
        }
        if j == i + 1 {
            merged.push(rows[i].clone());
        } else {
            let group = &rows[i..j];
            let k = group.len() as f64;
            let avg_opt = |get: fn(&TrajectoryRecord) -> Option<f64>| -> Option<f64> {
                let vals: Vec<f64> = group.iter().filter_map(get).collect();
                if vals.len() == group.len() {
                    Some(vals.iter().sum::<f64>() / k)
                } else {
                    None
                }
            };
            merged.push(TrajectoryRecord {
                t: group[0].t,
                position: group.iter().map(|r| r.position).sum::<f64>() / k,
                velocity: avg_opt(|r| r.velocity),
                acceleration: avg_opt(|r| r.acceleration),
            });
        }
        i = j;
    }
    Ok(merged)
}

pub fn read_trajectory_file(path: &Path) -> Result<Vec<TrajectoryRecord>, IngestError> {
    read_trajectory_csv(std::fs::File::open(path)?)
}

/// Locally weighted degree-1 regression with tricube weights over the
/// `span * n` nearest neighbors of each point, followed by `robustness_iters`
/// bisquare reweighting passes. Reproduces affine data exactly.
pub fn loess_smooth(
    t: &[f64],
    y: &[f64],
    span: f64,
    robustness_iters: usize,
) -> Result<Vec<f64>, IngestError> {
    assert_eq!(t.len(), y.len(), "channel lengths must match");
    let n = t.len();
    let k = ((span * n as f64).ceil() as usize).min(n);
    if k < 2 {
        return Err(IngestError::SpanTooSmall(k));
    }

    let mut robust = vec![1.0; n];
    let mut fitted = vec![0.0; n];
    for pass in 0..=robustness_iters {
        for i in 0..n {
            let (lo, hi) = window_around(t, i, k);
            let dmax = (t[i] - t[lo]).abs().max((t[hi - 1] - t[i]).abs());
            if dmax == 0.0 {
                return Err(IngestError::DegenerateWindow(i));
            }
            // weighted linear fit of y on (t - t_i); intercept is the estimate
            let (mut sw, mut swx, mut swxx, mut swy, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in lo..hi {
                let d = ((t[j] - t[i]).abs() / dmax).min(1.0);
                let wt = (1.0 - d * d * d).powi(3) * robust[j];
                let x = t[j] - t[i];
                sw += wt;
                swx += wt * x;
                swxx += wt * x * x;
                swy += wt * y[j];
                swxy += wt * x * y[j];
            }
            let det = sw * swxx - swx * swx;
            fitted[i] = if det.abs() > 1e-12 * sw.max(1.0) * swxx.max(1e-300) {
                (swxx * swy - swx * swxy) / det
            } else if sw > 0.0 {
                swy / sw
            } else {
                y[i]
            };
        }
        if pass == robustness_iters {
            break;
        }
        let mut abs_res: Vec<f64> = y
            .iter()
            .zip(fitted.iter())
            .map(|(a, b)| (a - b).abs())
            .collect();
        abs_res.sort_by(f64::total_cmp);
        let s = abs_res[n / 2];
        if s <= 1e-300 {
            break;
        }
        for j in 0..n {
            let u = (y[j] - fitted[j]) / (6.0 * s);
            robust[j] = if u.abs() < 1.0 {
                let v = 1.0 - u * u;
                v * v
            } else {
                0.0
            };
        }
    }
    Ok(fitted)
}

/// Half-open index range of the k nearest neighbors of t[i] on a sorted grid.
fn window_around(t: &[f64], i: usize, k: usize) -> (usize, usize) {
    let n = t.len();
    let (mut lo, mut hi) = (i, i + 1);
    while hi - lo < k {
        let extend_left = if lo == 0 {
            false
        } else if hi == n {
            true
        } else {
            (t[i] - t[lo - 1]) <= (t[hi] - t[i])
        };
        if extend_left {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    (lo, hi)
}

/// Smoothing and resampling settings for leader-log conversion.
#[derive(Debug, Clone, Copy)]
pub struct SmoothOptions {
    pub span: f64,
    pub robustness_iters: usize,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        Self {
            span: 0.05,
            robustness_iters: 2,
        }
    }
}

/// Smooths the logged channels and resamples them onto a uniform grid with
/// step `dt_out`, keeping the original time base. Channels missing from the
/// log come from differentiating the next-lower smoothed channel.
pub fn to_leader_trajectory(
    records: &[TrajectoryRecord],
    opts: SmoothOptions,
    dt_out: f64,
) -> Result<SampledTrajectory, IngestError> {
    if records.len() < 2 {
        return Err(IngestError::Trajectory(SimulateError::TooFewSamples(
            records.len(),
        )));
    }
    if !(dt_out > 0.0) {
        return Err(IngestError::NonPositiveStep(dt_out));
    }
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let p_smooth = loess_smooth(
        &t,
        &records.iter().map(|r| r.position).collect::<Vec<_>>(),
        opts.span,
        opts.robustness_iters,
    )?;
    let have_v = records.iter().all(|r| r.velocity.is_some());
    let have_a = records.iter().all(|r| r.acceleration.is_some());
    let v_smooth = if have_v {
        loess_smooth(
            &t,
            &records.iter().map(|r| r.velocity.unwrap()).collect::<Vec<_>>(),
            opts.span,
            opts.robustness_iters,
        )?
    } else {
        central_differences(&t, &p_smooth)
    };
    let a_smooth = if have_a {
        loess_smooth(
            &t,
            &records
                .iter()
                .map(|r| r.acceleration.unwrap())
                .collect::<Vec<_>>(),
            opts.span,
            opts.robustness_iters,
        )?
    } else {
        central_differences(&t, &v_smooth)
    };

    let smoothed = SampledTrajectory::new(t.clone(), p_smooth, v_smooth, a_smooth)?;
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let steps = ((t1 - t0) / dt_out).floor() as usize;
    let mut gt = Vec::with_capacity(steps + 1);
    let mut gp = Vec::with_capacity(steps + 1);
    let mut gv = Vec::with_capacity(steps + 1);
    let mut ga = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let tj = t0 + j as f64 * dt_out;
        gt.push(tj);
        gp.push(interp_sorted(&smoothed.t, &smoothed.position, tj));
        gv.push(interp_sorted(&smoothed.t, &smoothed.velocity, tj));
        ga.push(interp_sorted(&smoothed.t, &smoothed.acceleration, tj));
    }
    Ok(SampledTrajectory::new(gt, gp, gv, ga)?)
}

fn interp_sorted(t: &[f64], y: &[f64], time: f64) -> f64 {
    if time <= t[0] {
        return y[0];
    }
    if time >= t[t.len() - 1] {
        return y[t.len() - 1];
    }
    let idx = match t.binary_search_by(|x| x.total_cmp(&time)) {
        Ok(i) => return y[i],
        Err(i) => i,
    };
    let w = (time - t[idx - 1]) / (t[idx] - t[idx - 1]);
    y[idx - 1] * (1.0 - w) + y[idx] * w
}

/// Writes a smoothed trajectory with a marker comment so downstream tools can
/// tell smoothed output from raw logs.
pub fn write_smoothed_csv<W: std::io::Write>(
    tr: &SampledTrajectory,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "# smoothed: true")?;
    writeln!(out, "t,position,velocity,acceleration")?;
    for i in 0..tr.t.len() {
        writeln!(
            out,
            "{},{},{},{}",
            tr.t[i], tr.position[i], tr.velocity[i], tr.acceleration[i]
        )?;
    }
    Ok(())
}
