use crate::config::{layered, to_toml, EventInput, RunConfig, SensorInput};
use crate::error::{Failure, Result};
use crate::manifest::Outputs;
use evcal::event_flow::events::{encode_binary, format_text};
use evcal::event_flow::EventStream;
use evcal::motion::save_track;
use evcal::synth::{simulate_rig, RigSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Ground-truth sidecar written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub rig: RigSpec,
}

pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub duration: Option<f64>,
    pub out: PathBuf,
    pub text_events: bool,
    pub sets: Vec<String>,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let mut spec: RigSpec = layered(args.config.as_deref(), &args.sets)?;
    if let Some(d) = args.duration {
        spec.duration = d;
    }
    let rig = simulate_rig(&spec, args.seed).map_err(|e| Failure::precondition(e.to_string()).at("simulate"))?;
    let mut out = Outputs::create(&args.out)?;

    let stream = EventStream { width: spec.event.intrinsics.width, height: spec.event.intrinsics.height, events: rig.events };
    let events_name = if args.text_events {
        out.write("events.txt", format_text(&stream))?;
        "events.txt"
    } else {
        out.write("events.bin", encode_binary(&stream))?;
        "events.bin"
    };
    let mut sensors = Vec::new();
    for track in &rig.tracks {
        let name = format!("{}.csv", track.id);
        save_track(track, &out.path(&name))?;
        out.record(&name);
        sensors.push(SensorInput { id: Some(track.id.clone()), kind: track.kind, path: PathBuf::from(name), invert_relative: false });
    }
    out.write_json("truth.json", &Truth { seed: args.seed, rig: spec.clone() })?;

    let run = RunConfig {
        seed: args.seed,
        event: EventInput {
            id: spec.event.id.clone(),
            events: Some(PathBuf::from(events_name)),
            rates: None,
            intrinsics: Some(spec.event.intrinsics),
        },
        sensors,
        refine: evcal::refine::RefineConfig { tau_max: spec.tau_max, ..Default::default() },
        ..RunConfig::default()
    };
    out.write("calibrate.toml", to_toml(&run)?)?;
    log::info!("wrote {} events and {} sensor tracks to {}", stream.events.len(), rig.tracks.len(), args.out.display());

    let inputs = match &args.config {
        Some(p) => vec![crate::manifest::digest(p, p.display().to_string())?],
        None => Vec::new(),
    };
    out.finish(command_line(), args.seed, to_toml(&spec)?, inputs)
}

pub fn command_line() -> String {
    std::env::args().skip(1).collect::<Vec<_>>().join(" ")
}

pub fn load_truth(path: &Path) -> Result<Truth> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::precondition(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
}
