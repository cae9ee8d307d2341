use crate::config::{layered, to_toml, RunConfig};
use crate::error::{Class, Failure, Result};
use crate::manifest::{digest, FileDigest, Outputs};
use crate::plot::{histogram, line_chart, Series};
use crate::simulate::command_line;
use evcal::cca::CcaResult;
use evcal::event_flow::{angular_velocity_track, load_events};
use evcal::motion::{load_track, load_track_with, save_track, LoadOptions, SensorKind, SensorTrack};
use evcal::refine::{calibrate, initialize, render_report, ResultDocument, Stage, Weighting};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct CalibrateArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub stage: Option<Stage>,
    pub paper_faithful: bool,
    pub out: Option<PathBuf>,
    pub sets: Vec<String>,
}

/// Effective configuration with input paths resolved against the config
/// file's directory.
pub fn load_config(path: &Path, sets: &[String]) -> Result<RunConfig> {
    let mut cfg: RunConfig = layered(Some(path), sets)?;
    cfg.resolve(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

/// Sensor tracks with the event camera first, plus digests of every input.
pub struct Inputs {
    pub tracks: Vec<SensorTrack>,
    pub digests: Vec<FileDigest>,
    /// windows of the event stream that produced no estimate
    pub skipped_windows: usize,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let mut digests = Vec::new();
    let mut add = |p: &Path| -> Result<()> {
        if !p.exists() {
            return Err(Failure::precondition(format!("input file {} does not exist", p.display())));
        }
        digests.push(digest(p, p.display().to_string())?);
        Ok(())
    };
    let ev = &cfg.event;
    let (event, skipped_windows) = match (&ev.events, &ev.rates) {
        (Some(events), None) => {
            add(events)?;
            let cam = ev
                .intrinsics
                .ok_or_else(|| Failure::precondition("[event] intrinsics are required to process raw events"))?;
            if !cam.is_valid() {
                return Err(Failure::precondition("[event] intrinsics are invalid"));
            }
            let stream = load_events(events).map_err(|e| Failure::from(e).at("events"))?;
            if (stream.width, stream.height) != (cam.width, cam.height) {
                return Err(Failure::precondition(format!(
                    "event file is {}x{} but intrinsics are {}x{}",
                    stream.width, stream.height, cam.width, cam.height
                )));
            }
            let track = angular_velocity_track(&stream.events, &cam, &cfg.flow)
                .map_err(|e| Failure::precondition(e).at("event angular velocity"))?;
            log::info!("event angular velocity: {} windows, {} skipped", track.samples.len() + track.skipped.len(), track.skipped.len());
            (SensorTrack::from_rates(ev.id.clone(), SensorKind::Event, track.samples), track.skipped.len())
        }
        (None, Some(rates)) => {
            add(rates)?;
            let mut t = load_track(rates, SensorKind::Event).map_err(|e| Failure::from(e).at("event rates"))?;
            t.id = ev.id.clone();
            (t, 0)
        }
        _ => {
            return Err(Failure::precondition(
                "exactly one event track is required: set either [event] events or [event] rates",
            ))
        }
    };
    let mut tracks = vec![event];
    for s in &cfg.sensors {
        if s.kind == SensorKind::Event {
            return Err(Failure::precondition(format!(
                "sensor {} is an event track; exactly one event track is allowed",
                s.path.display()
            )));
        }
        add(&s.path)?;
        let opts = LoadOptions { invert_relative: s.invert_relative, default_id: s.id.clone() };
        let mut t = load_track_with(&s.path, s.kind, &opts).map_err(|e| Failure::from(e).at(&s.path.display().to_string()))?;
        if let Some(id) = &s.id {
            t.id = id.clone();
        }
        tracks.push(t);
    }
    if tracks.len() < 2 {
        return Err(Failure::precondition("at least one sensor besides the event camera is required"));
    }
    Ok(Inputs { tracks, digests, skipped_windows })
}

fn write_curves(out: &mut Outputs, ids: &[String], inits: &[CcaResult]) -> Result<()> {
    let mut series = Vec::new();
    for (id, init) in ids.iter().zip(inits) {
        out.write(&format!("cca_{id}.csv"), init.curve_csv())?;
        let points: Vec<(f64, f64)> = init.search.taus.iter().map(|t| t * 1e3).zip(init.search.curve.iter().copied()).collect();
        series.push(Series { name: id.clone(), points });
    }
    out.write("cca_curves.svg", line_chart("trace correlation vs time offset", "offset (ms)", "trace correlation", &series))
}

pub fn run(args: &CalibrateArgs) -> Result<()> {
    let mut cfg = load_config(&args.config, &args.sets)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(stage) = args.stage {
        cfg.stage = stage;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    cfg.paper_faithful |= args.paper_faithful;
    cfg.flow.seed = cfg.seed;
    if cfg.paper_faithful {
        cfg.refine.weighting = Weighting::Unweighted;
        cfg.refine.huber = None;
    }
    let effective = to_toml(&cfg)?;
    let inputs = load_inputs(&cfg)?;
    let mut out = Outputs::create(&cfg.out)?;
    let event = &inputs.tracks[0];
    save_track(event, &out.path("event_omega.csv")).map_err(Failure::from)?;
    out.record("event_omega.csv");

    let ids: Vec<String> = inputs.tracks[1..].iter().map(|t| t.id.clone()).collect();
    let mut failure = None;
    let doc = match cfg.stage {
        Stage::Init => {
            let (params, inits) =
                initialize(&event.angular_velocity, &inputs.tracks[1..], &cfg.refine).map_err(|e| Failure::from(e).at("init"))?;
            write_curves(&mut out, &ids, &inits)?;
            ResultDocument::from_init(&event.id, &params, &inits)
        }
        Stage::Full => {
            let result = calibrate(&inputs.tracks, &cfg.refine).map_err(|e| Failure::from(e).at("calibrate"))?;
            write_curves(&mut out, &ids, &result.init)?;
            let doc = ResultDocument::from(&result);
            let res = doc.residuals.as_ref().expect("full runs carry residuals");
            let mut csv = String::from("sensor,kind,count,excluded,rms,max,cost\n");
            for t in &res.terms {
                let _ = writeln!(csv, "{},{},{},{},{:e},{:e},{:e}", t.sensor, t.kind.as_str(), t.count, t.excluded, t.rms, t.max, t.cost);
            }
            out.write("residuals.csv", csv)?;
            for (t, norms) in res.terms.iter().zip(&result.residual_norms) {
                let unit = if t.kind.is_relative() { "rad" } else { "rad/s" };
                let title = format!("{} residual norms", t.sensor);
                out.write(&format!("residuals_{}.svg", t.sensor), histogram(&title, unit, norms, 40))?;
            }
            let mut hist = String::from("cost\n");
            for c in &result.cost_history {
                let _ = writeln!(hist, "{c:e}");
            }
            out.write("cost_history.csv", hist)?;
            if !result.converged() {
                failure = Some(Failure::new(
                    Class::Convergence,
                    format!("optimizer stopped after {} iterations without converging ({:?})", result.iterations, result.termination),
                ));
            }
            doc
        }
    };
    let mut doc = doc;
    if inputs.skipped_windows > 0 {
        doc.warnings.push(format!("{} event windows produced no angular velocity", inputs.skipped_windows));
    }
    let report = render_report(&doc);
    print!("{report}");
    out.write_json("result.json", &doc)?;
    out.write("report.txt", report)?;
    out.write("config.toml", &effective)?;
    out.finish(command_line(), cfg.seed, effective, inputs.digests)?;
    match failure {
        Some(f) => Err(f.at("calibrate")),
        None => Ok(()),
    }
}
