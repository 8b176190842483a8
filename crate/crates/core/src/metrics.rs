//! Summary statistics of a trajectory log.

use serde::{Deserialize, Serialize};

use crate::simulate::{flags, Record, TrajectoryLog};

/// Absolute band floor for position channels (m).
pub const POSITION_FLOOR: f64 = 0.01;
/// Absolute band floor for angle channels (rad).
pub const ANGLE_FLOOR: f64 = 0.5 * std::f64::consts::PI / 180.0;

pub const CHANNELS: [&str; 7] = ["ey1", "ez1", "ey2", "ez2", "theta1", "theta2", "theta3"];

/// Error of every tracked channel at one record. Rope angles are measured from
/// the active target, the bar angle from level.
pub fn channel_errors(r: &Record) -> [f64; 7] {
    [
        r.errors[0],
        r.errors[1],
        r.errors[2],
        r.errors[3],
        r.q[2] - r.theta_target,
        r.q[3] - r.theta_target,
        r.q[4],
    ]
}

fn floor(channel: usize) -> f64 {
    if channel < 4 {
        POSITION_FLOOR
    } else {
        ANGLE_FLOOR
    }
}

/// Settling time of one sampled signal: the first instant after which
/// `|e| ≤ band` holds for the rest of the samples. `None` if the final sample
/// is outside the band.
pub fn settling_time(samples: impl IntoIterator<Item = (f64, f64)>, band: f64) -> Option<f64> {
    let mut settled_since = None;
    let mut first = true;
    for (t, e) in samples {
        if e.abs() > band {
            settled_since = None;
        } else if settled_since.is_none() {
            settled_since = Some(if first { 0.0 } else { t });
        }
        first = false;
    }
    settled_since
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: String,
    pub band: f64,
    /// `None` when the channel is outside its band at the end of the log.
    pub settling_time: Option<f64>,
    pub peak: f64,
    pub rms: f64,
    pub final_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub controller: String,
    pub band_fraction: f64,
    pub duration: f64,
    pub channels: Vec<ChannelMetrics>,
    /// Latest settling time over all channels, `None` if any is unsettled.
    pub settling_time: Option<f64>,
    /// Largest |θi| over the log (rad).
    pub peak_swing: [f64; 3],
    pub max_ey_sq: f64,
    pub saturated_samples: usize,
    pub fault: Option<String>,
}

impl Metrics {
    pub fn channel(&self, name: &str) -> Option<&ChannelMetrics> {
        self.channels.iter().find(|c| c.channel == name)
    }
}

/// Computes metrics over a whole log. Each channel's band is
/// `max(band · |e(0)|, floor)` with floors of 1 cm and 0.5°.
///
/// # Panics
/// If the log is empty.
pub fn compute_metrics(log: &TrajectoryLog, band: f64) -> Metrics {
    let records = &log.records;
    assert!(!records.is_empty(), "metrics need at least one record");
    let first = channel_errors(&records[0]);
    let errors: Vec<[f64; 7]> = records.iter().map(channel_errors).collect();

    let channels: Vec<ChannelMetrics> = (0..CHANNELS.len())
        .map(|c| {
            let width = (band * first[c].abs()).max(floor(c));
            let series = records.iter().zip(&errors).map(|(r, e)| (r.t, e[c]));
            ChannelMetrics {
                channel: CHANNELS[c].to_string(),
                band: width,
                settling_time: settling_time(series, width),
                peak: errors.iter().map(|e| e[c].abs()).fold(0.0, f64::max),
                rms: (errors.iter().map(|e| e[c] * e[c]).sum::<f64>() / errors.len() as f64).sqrt(),
                final_error: errors.last().unwrap()[c],
            }
        })
        .collect();

    let settling = channels
        .iter()
        .map(|c| c.settling_time)
        .try_fold(0.0_f64, |acc, t| t.map(|t| acc.max(t)));

    let mut peak_swing = [0.0; 3];
    for r in records {
        for (peak, angle) in peak_swing.iter_mut().zip(&r.q[2..]) {
            *peak = f64::max(*peak, angle.abs());
        }
    }

    Metrics {
        scenario: log.scenario.clone(),
        controller: log.controller.to_string(),
        band_fraction: band,
        duration: log.last().t - records[0].t,
        channels,
        settling_time: settling,
        peak_swing,
        max_ey_sq: records.iter().map(|r| r.ey_sq).fold(0.0, f64::max),
        saturated_samples: records.iter().filter(|r| r.has(flags::SATURATED)).count(),
        fault: log.fault.as_ref().map(|f| f.to_string()),
    }
}

/// Recovery after one disturbance window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub start: f64,
    pub end: f64,
    /// Largest absolute channel error between the window start and the next
    /// window (or the end of the log), per channel.
    pub peak: [f64; 7],
    /// Time from the window end until every channel stays within its floor
    /// band up to the next window. `None` if that never happens.
    pub recovery_time: Option<f64>,
    /// Time from the window end until the largest swing-angle error stays
    /// within [`SWING_DECAY_FRACTION`] of its peak after the window.
    pub swing_decay_time: Option<f64>,
}

pub const SWING_DECAY_FRACTION: f64 = 0.2;

/// Recovery times after each disturbance window of the log, using the
/// absolute floor bands scaled by `scale`.
pub fn recovery_times(log: &TrajectoryLog, scale: f64) -> Vec<Recovery> {
    let mut windows = log.disturbance_windows.clone();
    windows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let horizon = log.last().t;
    (0..windows.len())
        .map(|i| {
            let (start, end) = windows[i];
            let next = windows.get(i + 1).map_or(f64::INFINITY, |w| w.0);
            let span: Vec<(f64, [f64; 7])> = log
                .records
                .iter()
                .filter(|r| r.t >= start && r.t < next)
                .map(|r| (r.t, channel_errors(r)))
                .collect();
            let mut peak = [0.0; 7];
            for (_, e) in &span {
                for c in 0..7 {
                    peak[c] = f64::max(peak[c], e[c].abs());
                }
            }
            let after: Vec<&(f64, [f64; 7])> = span.iter().filter(|(t, _)| *t >= end).collect();
            let swing = |e: &[f64; 7]| e[4].abs().max(e[5].abs()).max(e[6].abs());
            let swing_peak = after.iter().map(|(_, e)| swing(e)).fold(0.0, f64::max);
            let swing_decay_time = settling_time(
                after.iter().map(|(t, e)| (*t, swing(e))),
                SWING_DECAY_FRACTION * swing_peak,
            )
            .filter(|_| end <= horizon && swing_peak > 0.0)
            .map(|t| (t - end).max(0.0));
            let mut settled_since: Option<f64> = None;
            for (t, e) in after.iter().map(|x| (&x.0, &x.1)) {
                let inside = (0..7).all(|c| e[c].abs() <= scale * floor(c));
                if !inside {
                    settled_since = None;
                } else if settled_since.is_none() {
                    settled_since = Some(*t);
                }
            }
            // A window that runs to the end of the log has not been recovered from.
            let recovery_time = settled_since.filter(|_| end <= horizon).map(|t| t - end);
            Recovery {
                start,
                end,
                peak,
                recovery_time,
                swing_decay_time,
            }
        })
        .collect()
}
