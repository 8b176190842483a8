use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use dronebar::metrics::{compute_metrics, recovery_times, Metrics, Recovery, CHANNELS};
use dronebar::simulate::{run_with, RunOptions, TrajectoryLog};
use dronebar::verify::{run_suite, AuditReport, Suite, SuiteOptions};
use dronebar::{scenarios, ControllerKind, ScenarioConfig};
use serde::Serialize;

use crate::manifest::{ManifestBuilder, RunManifest};
use crate::plot::{line_chart, Series};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Fault(Box<RunManifest>),
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Output(_) => 1,
            Self::Fault(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Output(m) => write!(f, "output error: {m}"),
            Self::Fault(m) => write!(f, "simulation fault: {}", m.summary.join("; ")),
        }
    }
}

fn output_err(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Scenario selection and overrides shared by `simulate` and `compare`.
#[derive(Debug, Clone)]
pub struct RunRequest {
    pub config: String,
    pub controller: Option<ControllerKind>,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub stride: usize,
    pub band: f64,
}

/// A readable file path, otherwise a shipped scenario name.
pub fn resolve_config(request: &RunRequest) -> Result<ScenarioConfig, CliError> {
    let path = Path::new(&request.config);
    let mut config = if path.is_file() {
        ScenarioConfig::load(path).map_err(|e| CliError::Config(e.to_string()))?
    } else if let Some(c) = scenarios::builtin(&request.config) {
        c
    } else {
        return Err(CliError::Config(format!(
            "`{}` is neither a readable file nor a shipped scenario ({})",
            request.config,
            scenarios::NAMES.join(", ")
        )));
    };
    if let Some(controller) = request.controller {
        config.controller = controller;
    }
    if let Some(dt) = request.dt {
        config.dt = dt;
    }
    if let Some(duration) = request.duration {
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(CliError::Config(format!(
                "duration must be non-negative, got {duration}"
            )));
        }
        config = config.with_duration(duration);
    }
    if request.stride == 0 {
        return Err(CliError::Config("stride must be at least 1".into()));
    }
    config
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", config.name)))?;
    Ok(config)
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(output_err)?;
    std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn simulate_log(config: &ScenarioConfig, stride: usize) -> Result<TrajectoryLog, CliError> {
    run_with(
        config,
        RunOptions {
            audits: true,
            stride,
        },
    )
    .map_err(|e| CliError::Config(format!("{}: {e}", config.name)))
}

fn write_trajectory(
    log: &TrajectoryLog,
    format: Format,
    m: &mut ManifestBuilder,
    prefix: &str,
) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let path = m.output(&format!("{prefix}trajectory.csv"));
            let file = File::create(&path).map_err(output_err)?;
            log.write_csv(BufWriter::new(file)).map_err(output_err)
        }
        Format::Json => {
            let path = m.output(&format!("{prefix}trajectory.json"));
            let file = File::create(&path).map_err(output_err)?;
            serde_json::to_writer(BufWriter::new(file), log).map_err(output_err)
        }
    }
}

fn column(log: &TrajectoryLog, f: impl Fn(&dronebar::simulate::Record) -> f64) -> Vec<(f64, f64)> {
    log.records.iter().map(|r| (r.t, f(r))).collect()
}

/// Position, swing, control and energy series of one run, labelled with
/// `suffix` and drawn dashed if requested.
struct RunSeries {
    positions: Vec<Series>,
    swing: Vec<Series>,
    controls: Vec<Series>,
    energy: Vec<Series>,
}

fn run_series(log: &TrajectoryLog, suffix: &str, dashed: bool) -> RunSeries {
    let make = |label: String, color: usize, points| {
        if dashed {
            Series::dashed(label, color, points)
        } else {
            Series::solid(label, color, points)
        }
    };
    let names = ["y1", "z1", "y2", "z2"];
    let positions = (0..4)
        .map(|i| make(format!("{}{suffix}", names[i]), i, column(log, |r| r.xi[i])))
        .collect();
    let swing = (0..3)
        .map(|i| {
            make(
                format!("theta{}{suffix}", i + 1),
                i,
                column(log, |r| r.q[2 + i].to_degrees()),
            )
        })
        .collect();
    let controls = (0..4)
        .map(|i| make(format!("u{}{suffix}", i + 1), i, column(log, |r| r.u[i])))
        .collect();
    let mut energy = vec![make(format!("E{suffix}"), 1, column(log, |r| r.storage))];
    if log.records.iter().any(|r| r.lyapunov.is_some()) {
        energy.insert(
            0,
            make(
                format!("V{suffix}"),
                0,
                column(log, |r| r.lyapunov.unwrap_or(f64::NAN)),
            ),
        );
    }
    RunSeries {
        positions,
        swing,
        controls,
        energy,
    }
}

fn draw(path: &Path, title: &str, y_label: &str, series: &[Series]) -> Result<(), CliError> {
    line_chart(path, title, y_label, series)
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn draw_all(
    m: &mut ManifestBuilder,
    prefix: &str,
    title: &str,
    s: &RunSeries,
) -> Result<(), CliError> {
    draw(
        &m.output(&format!("{prefix}positions.svg")),
        &format!("{title}: drone positions"),
        "m",
        &s.positions,
    )?;
    draw(
        &m.output(&format!("{prefix}swing_angles.svg")),
        &format!("{title}: swing angles"),
        "deg",
        &s.swing,
    )?;
    draw(
        &m.output(&format!("{prefix}controls.svg")),
        &format!("{title}: thrust components"),
        "N",
        &s.controls,
    )?;
    draw(
        &m.output(&format!("{prefix}energy.svg")),
        &format!("{title}: V and E"),
        "J",
        &s.energy,
    )
}

fn metrics_lines(metrics: &Metrics) -> Vec<String> {
    let settle = metrics
        .settling_time
        .map_or("unsettled".to_string(), |t| format!("{t:.3} s"));
    vec![format!(
        "{} [{}]: settling time {settle}, peak swing {:.2}/{:.2}/{:.2} deg, max e_y^2 {:.4}",
        metrics.scenario,
        metrics.controller,
        metrics.peak_swing[0].to_degrees(),
        metrics.peak_swing[1].to_degrees(),
        metrics.peak_swing[2].to_degrees(),
        metrics.max_ey_sq
    )]
}

pub fn cmd_simulate(
    request: &RunRequest,
    out: Option<PathBuf>,
    format: Format,
) -> Result<RunManifest, CliError> {
    let config = resolve_config(request)?;
    let out = out.unwrap_or_else(|| PathBuf::from("out").join(&config.name));
    prepare_dir(&out)?;
    let mut m = ManifestBuilder::new("simulate", &out);
    m.config(&config);
    write_json(&m.output("config.json"), &config)?;

    let log = simulate_log(&config, request.stride)?;
    write_trajectory(&log, format, &mut m, "")?;
    let metrics = compute_metrics(&log, request.band);
    write_json(&m.output("metrics.json"), &metrics)?;
    draw_all(
        &mut m,
        "",
        &format!("{} ({})", config.name, config.controller),
        &run_series(&log, "", false),
    )?;

    for line in metrics_lines(&metrics) {
        m.line(line);
    }
    if let Some(fault) = &log.fault {
        m.fail();
        m.line(fault.to_string());
        return Err(CliError::Fault(Box::new(m.finish().map_err(output_err)?)));
    }
    m.finish().map_err(output_err)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelComparison {
    pub channel: String,
    pub proposed: Option<f64>,
    pub pd: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub scenario: String,
    pub band_fraction: f64,
    /// Proposed over PD settling time, over all channels.
    pub settling_ratio: Option<f64>,
    pub channels: Vec<ChannelComparison>,
    pub proposed: Metrics,
    pub pd: Metrics,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub recovery_proposed: Vec<Recovery>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub recovery_pd: Vec<Recovery>,
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        (Some(a), Some(b)) if a == b => Some(1.0),
        _ => None,
    }
}

pub fn compare_logs(proposed: &TrajectoryLog, pd: &TrajectoryLog, band: f64) -> Comparison {
    let mp = compute_metrics(proposed, band);
    let md = compute_metrics(pd, band);
    let channels = CHANNELS
        .iter()
        .map(|&c| {
            let a = mp.channel(c).and_then(|x| x.settling_time);
            let b = md.channel(c).and_then(|x| x.settling_time);
            ChannelComparison {
                channel: c.to_string(),
                proposed: a,
                pd: b,
                ratio: ratio(a, b),
            }
        })
        .collect();
    Comparison {
        scenario: proposed.scenario.clone(),
        band_fraction: band,
        settling_ratio: ratio(mp.settling_time, md.settling_time),
        channels,
        recovery_proposed: recovery_times(proposed, 1.0),
        recovery_pd: recovery_times(pd, 1.0),
        proposed: mp,
        pd: md,
    }
}

fn fmt_time(t: Option<f64>) -> String {
    t.map_or("-".to_string(), |t| format!("{t:.3}"))
}

fn comparison_table(c: &Comparison) -> Vec<String> {
    let mut lines = vec![format!(
        "{:<8} {:>12} {:>12} {:>8}",
        "channel", "proposed_s", "pd_s", "ratio"
    )];
    for ch in &c.channels {
        lines.push(format!(
            "{:<8} {:>12} {:>12} {:>8}",
            ch.channel,
            fmt_time(ch.proposed),
            fmt_time(ch.pd),
            ch.ratio.map_or("-".into(), |r| format!("{r:.4}"))
        ));
    }
    lines.push(format!(
        "{:<8} {:>12} {:>12} {:>8}",
        "overall",
        fmt_time(c.proposed.settling_time),
        fmt_time(c.pd.settling_time),
        c.settling_ratio.map_or("-".into(), |r| format!("{r:.4}"))
    ));
    lines
}

fn recovery_table(c: &Comparison) -> Vec<String> {
    let mut lines = vec![format!(
        "{:<9} {:>8} {:>8} {:>12} {:>14} {:>16}",
        "controller", "start_s", "end_s", "recovery_s", "swing_decay_s", "peak_swing_deg"
    )];
    for (name, list) in [("proposed", &c.recovery_proposed), ("pd", &c.recovery_pd)] {
        for r in list {
            let swing = r.peak[4].max(r.peak[5]).max(r.peak[6]).to_degrees();
            lines.push(format!(
                "{name:<9} {:>8.2} {:>8.2} {:>12} {:>14} {:>16.3}",
                r.start,
                r.end,
                fmt_time(r.recovery_time),
                fmt_time(r.swing_decay_time),
                swing
            ));
        }
    }
    lines
}

fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(output_err)?;
    w.write_record(header).map_err(output_err)?;
    for row in rows {
        w.write_record(row).map_err(output_err)?;
    }
    w.flush().map_err(output_err)
}

pub fn cmd_compare(
    request: &RunRequest,
    out: Option<PathBuf>,
    format: Format,
) -> Result<RunManifest, CliError> {
    let base = resolve_config(request)?;
    let proposed_cfg = base.with_controller(ControllerKind::Proposed);
    let pd_cfg = base.with_controller(ControllerKind::Pd);
    proposed_cfg
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", base.name)))?;
    let out = out.unwrap_or_else(|| PathBuf::from("out").join(format!("{}_compare", base.name)));
    prepare_dir(&out)?;
    let mut m = ManifestBuilder::new("compare", &out);
    m.config(&proposed_cfg);
    write_json(&m.output("config.json"), &proposed_cfg)?;

    let (proposed, pd) = std::thread::scope(|s| {
        let a = s.spawn(|| simulate_log(&proposed_cfg, request.stride));
        let b = simulate_log(&pd_cfg, request.stride);
        (a.join().expect("simulation thread panicked"), b)
    });
    let (proposed, pd) = (proposed?, pd?);

    write_trajectory(&proposed, format, &mut m, "proposed_")?;
    write_trajectory(&pd, format, &mut m, "pd_")?;
    let comparison = compare_logs(&proposed, &pd, request.band);
    write_json(&m.output("comparison.json"), &comparison)?;

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut rows: Vec<Vec<String>> = comparison
        .channels
        .iter()
        .map(|c| vec![c.channel.clone(), opt(c.proposed), opt(c.pd), opt(c.ratio)])
        .collect();
    rows.push(vec![
        "overall".into(),
        opt(comparison.proposed.settling_time),
        opt(comparison.pd.settling_time),
        opt(comparison.settling_ratio),
    ]);
    write_table(
        &m.output("settling_ratio.csv"),
        &["channel", "proposed_s", "pd_s", "ratio"],
        rows,
    )?;

    for line in comparison_table(&comparison) {
        m.line(line);
    }
    if !comparison.recovery_proposed.is_empty() {
        let mut rows = Vec::new();
        for (name, list) in [
            ("proposed", &comparison.recovery_proposed),
            ("pd", &comparison.recovery_pd),
        ] {
            for r in list {
                let mut row = vec![
                    name.to_string(),
                    r.start.to_string(),
                    r.end.to_string(),
                    opt(r.recovery_time),
                    opt(r.swing_decay_time),
                ];
                row.extend(r.peak.iter().map(f64::to_string));
                rows.push(row);
            }
        }
        let mut header = vec!["controller", "start", "end", "recovery_s", "swing_decay_s"];
        let peaks: Vec<String> = CHANNELS.iter().map(|c| format!("peak_{c}")).collect();
        header.extend(peaks.iter().map(String::as_str));
        write_table(&m.output("recovery.csv"), &header, rows)?;
        for line in recovery_table(&comparison) {
            m.line(line);
        }
    }

    let title = &base.name;
    let a = run_series(&proposed, " proposed", false);
    let b = run_series(&pd, " pd", true);
    let both = |x: Vec<Series>, y: Vec<Series>| x.into_iter().chain(y).collect::<Vec<_>>();
    draw(
        &m.output("compare_positions.svg"),
        &format!("{title}: drone positions"),
        "m",
        &both(a.positions, b.positions),
    )?;
    draw(
        &m.output("compare_swing_angles.svg"),
        &format!("{title}: swing angles"),
        "deg",
        &both(a.swing, b.swing),
    )?;
    draw(
        &m.output("compare_controls.svg"),
        &format!("{title}: thrust components"),
        "N",
        &both(a.controls, b.controls),
    )?;
    draw(
        &m.output("compare_energy.svg"),
        &format!("{title}: V and E"),
        "J",
        &both(a.energy, b.energy),
    )?;

    let faults: Vec<String> = [&proposed, &pd]
        .iter()
        .filter_map(|l| l.fault.as_ref().map(|f| format!("{}: {f}", l.controller)))
        .collect();
    if !faults.is_empty() {
        m.fail();
        for f in faults {
            m.line(f);
        }
        return Err(CliError::Fault(Box::new(m.finish().map_err(output_err)?)));
    }
    m.finish().map_err(output_err)
}

pub fn cmd_verify(
    suite: Suite,
    options: &SuiteOptions,
    out: Option<PathBuf>,
) -> Result<(RunManifest, Vec<AuditReport>), CliError> {
    let out = out.unwrap_or_else(|| PathBuf::from("out").join("verify"));
    prepare_dir(&out)?;
    let mut m = ManifestBuilder::new("verify", &out);
    m.seed(options.seed);
    let reports = run_suite(suite, options).map_err(|e| CliError::Config(e.to_string()))?;
    write_json(&m.output("verify.json"), &reports)?;
    for r in &reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        m.line(format!("{status} {}", r.check));
        if !r.passed {
            m.fail();
        }
    }
    let manifest = m.finish().map_err(output_err)?;
    Ok((manifest, reports))
}

/// Writes every shipped scenario as `<name>.json`.
pub fn cmd_scenarios(out: Option<PathBuf>) -> Result<Vec<PathBuf>, CliError> {
    let Some(dir) = out else {
        return Ok(Vec::new());
    };
    prepare_dir(&dir)?;
    scenarios::all()
        .into_iter()
        .map(|c| {
            let path = dir.join(format!("{}.json", c.name));
            std::fs::write(&path, c.to_json() + "\n").map_err(output_err)?;
            Ok(path)
        })
        .collect()
}
