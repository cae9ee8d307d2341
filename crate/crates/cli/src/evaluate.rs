use crate::calibrate::{load_config, load_inputs};
use crate::config::to_toml;
use crate::error::{Failure, Result};
use crate::manifest::{digest, Outputs};
use crate::plot::{line_chart, Series};
use crate::simulate::{command_line, load_truth, Truth};
use evcal::motion::SensorTrack;
use evcal::refine::{calibrate, RefineConfig, ResultDocument, Weighting};
use evcal::so3::log_map;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMetrics {
    pub id: String,
    /// rotation vector of `R_trueᵀ R_est`, degrees per axis
    pub rotation_error_deg: [f64; 3],
    pub rotation_error_norm_deg: f64,
    /// estimate minus truth
    pub tau_error_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_error_rad_s: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sensors: Vec<SensorMetrics>,
}

/// Errors of `doc` against the simulated truth; the sensor sets must match.
pub fn metrics(doc: &ResultDocument, truth: &Truth) -> Result<Metrics> {
    let have: BTreeSet<&str> = doc.sensors.iter().map(|s| s.id.as_str()).collect();
    let want: BTreeSet<&str> = truth.rig.sensors.iter().map(|s| s.id.as_str()).collect();
    if have != want {
        return Err(Failure::precondition(format!("sensor sets differ: result has {have:?}, truth has {want:?}")));
    }
    let sensors = doc
        .sensors
        .iter()
        .map(|e| {
            let t = truth.rig.sensor(&e.id).expect("sets match");
            let r = log_map(&(t.extrinsic().inverse() * e.rotation())).map(f64::to_degrees);
            SensorMetrics {
                id: e.id.clone(),
                rotation_error_deg: [r.x, r.y, r.z],
                rotation_error_norm_deg: r.norm(),
                tau_error_ms: e.tau_ms - t.offset * 1e3,
                bias_error_rad_s: e.bias().map(|b| {
                    let d = b - t.bias;
                    [d.x, d.y, d.z]
                }),
            }
        })
        .collect();
    Ok(Metrics { sensors })
}

pub fn render(m: &Metrics) -> String {
    let mut s = format!("{:<10} {:>28} {:>10} {:>10}  {}\n", "sensor", "rotation error (deg)", "|rot| deg", "tau ms", "bias error (rad/s)");
    for e in &m.sensors {
        let [x, y, z] = e.rotation_error_deg;
        let bias = e.bias_error_rad_s.map(|b| format!("{:+.2e} {:+.2e} {:+.2e}", b[0], b[1], b[2])).unwrap_or_default();
        let _ = writeln!(s, "{:<10} {x:>+9.4} {y:>+9.4} {z:>+9.4} {:>10.4} {:>+10.4}  {bias}", e.id, e.rotation_error_norm_deg, e.tau_error_ms);
    }
    s
}

pub struct EvaluateArgs {
    pub result: PathBuf,
    pub truth: PathBuf,
    pub out: Option<PathBuf>,
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.result)
        .map_err(|e| Failure::precondition(format!("{}: {e}", args.result.display())))?;
    let doc: ResultDocument =
        serde_json::from_str(&text).map_err(|e| Failure::parse(format!("{}: {e}", args.result.display())))?;
    let truth = load_truth(&args.truth)?;
    let m = metrics(&doc, &truth).map_err(|f| f.at("evaluate"))?;
    print!("{}", render(&m));
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&m).map_err(|e| Failure::io(e.to_string()))? + "\n";
        std::fs::write(path, json).map_err(crate::error::write_err(path))?;
    }
    Ok(())
}

pub struct SweepArgs {
    pub config: PathBuf,
    pub truth: PathBuf,
    pub durations: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub paper_faithful: bool,
    pub out: PathBuf,
    pub sets: Vec<String>,
}

/// One calibrated sub-window.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub duration: f64,
    pub trial: usize,
    pub start: f64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

/// Per duration and sensor: sample standard deviation of the per-axis
/// rotation errors (pooled over axes) and of the offset errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadRow {
    pub duration: f64,
    pub sensor: String,
    pub runs: usize,
    pub rotation_spread_deg: f64,
    pub tau_spread_ms: f64,
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn spreads(rows: &[SweepRow], truth: &Truth) -> Vec<SpreadRow> {
    let mut durations: Vec<f64> = rows.iter().map(|r| r.duration).collect();
    durations.dedup();
    let mut out = Vec::new();
    for d in durations {
        for s in &truth.rig.sensors {
            let ms: Vec<&SensorMetrics> = rows
                .iter()
                .filter(|r| r.duration == d)
                .filter_map(|r| r.metrics.as_ref())
                .filter_map(|m| m.sensors.iter().find(|x| x.id == s.id))
                .collect();
            let rot: Vec<f64> = ms.iter().flat_map(|m| m.rotation_error_deg).collect();
            let tau: Vec<f64> = ms.iter().map(|m| m.tau_error_ms).collect();
            out.push(SpreadRow {
                duration: d,
                sensor: s.id.clone(),
                runs: ms.len(),
                rotation_spread_deg: std_dev(&rot),
                tau_spread_ms: std_dev(&tau),
            });
        }
    }
    out
}

/// Short windows cannot keep the configured overlap across the offset
/// range, so it is capped at 80% of the window.
fn window_config(cfg: &RefineConfig, duration: f64) -> RefineConfig {
    let mut c = cfg.clone();
    c.cca.min_overlap = c.cca.min_overlap.min(0.8 * duration);
    c
}

/// Calibrate random sub-windows of every requested length.
pub fn sweep(tracks: &[SensorTrack], truth: &Truth, durations: &[f64], trials: usize, seed: u64, cfg: &RefineConfig) -> Vec<SweepRow> {
    let (t0, t1) = tracks[0].span().unwrap_or((0.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &d in durations {
        if d > t1 - t0 + 1e-9 {
            log::warn!("sweep: skipping {d} s windows, the recording spans {:.1} s", t1 - t0);
            continue;
        }
        for trial in 0..trials {
            let start = if t1 - t0 - d > 0.0 { rng.gen_range(t0..=t1 - d) } else { t0 };
            let window: Vec<SensorTrack> = tracks.iter().map(|t| t.windowed(start, start + d)).collect();
            let row = match calibrate(&window, &window_config(cfg, d)) {
                Ok(r) => match metrics(&ResultDocument::from(&r), truth) {
                    Ok(m) => SweepRow { duration: d, trial, start, metrics: Some(m), error: None },
                    Err(e) => SweepRow { duration: d, trial, start, metrics: None, error: Some(e.message) },
                },
                Err(e) => SweepRow { duration: d, trial, start, metrics: None, error: Some(e.to_string()) },
            };
            if let Some(e) = &row.error {
                log::warn!("sweep: {d} s window at {start:.2} s failed: {e}");
            }
            rows.push(row);
        }
    }
    rows
}

pub fn run_sweep(args: &SweepArgs) -> Result<()> {
    if args.durations.is_empty() || args.trials == 0 {
        return Err(Failure::precondition("sweep needs at least one duration and one trial"));
    }
    let mut cfg = load_config(&args.config, &args.sets)?;
    cfg.paper_faithful |= args.paper_faithful;
    if cfg.paper_faithful {
        cfg.refine.weighting = Weighting::Unweighted;
        cfg.refine.huber = None;
    }
    let truth = load_truth(&args.truth)?;
    let inputs = load_inputs(&cfg)?;
    let rows = sweep(&inputs.tracks, &truth, &args.durations, args.trials, args.seed, &cfg.refine);
    let spread = spreads(&rows, &truth);

    let mut out = Outputs::create(&args.out)?;
    let mut csv = String::from("duration_s,trial,start_s,sensor,rot_x_deg,rot_y_deg,rot_z_deg,tau_ms,error\n");
    for r in &rows {
        match (&r.metrics, &r.error) {
            (Some(m), _) => {
                for s in &m.sensors {
                    let [x, y, z] = s.rotation_error_deg;
                    let _ = writeln!(csv, "{},{},{:.6},{},{x:e},{y:e},{z:e},{:e},", r.duration, r.trial, r.start, s.id, s.tau_error_ms);
                }
            }
            (None, e) => {
                let msg = e.clone().unwrap_or_default().replace(',', ";");
                let _ = writeln!(csv, "{},{},{:.6},,,,,,{msg}", r.duration, r.trial, r.start);
            }
        }
    }
    out.write("sweep.csv", csv)?;
    let mut summary = String::from("duration_s,sensor,runs,rotation_spread_deg,tau_spread_ms\n");
    for s in &spread {
        let _ = writeln!(summary, "{},{},{},{:e},{:e}", s.duration, s.sensor, s.runs, s.rotation_spread_deg, s.tau_spread_ms);
    }
    print!("{summary}");
    out.write("sweep_summary.csv", summary)?;
    let series = |f: fn(&SpreadRow) -> f64| -> Vec<Series> {
        truth
            .rig
            .sensors
            .iter()
            .map(|s| Series {
                name: s.id.clone(),
                points: spread.iter().filter(|r| r.sensor == s.id).map(|r| (r.duration, f(r))).collect(),
            })
            .collect()
    };
    out.write("sweep_rotation.svg", line_chart("rotation error spread", "window (s)", "std (deg)", &series(|r| r.rotation_spread_deg)))?;
    out.write("sweep_offset.svg", line_chart("offset error spread", "window (s)", "std (ms)", &series(|r| r.tau_spread_ms)))?;
    out.write("config.toml", to_toml(&cfg)?)?;
    let mut digests = inputs.digests;
    digests.push(digest(&args.truth, args.truth.display().to_string())?);
    out.finish(command_line(), args.seed, to_toml(&cfg)?, digests)
}
