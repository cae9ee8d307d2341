//! Machine-readable result document and the plain-text report.

use super::{CalibrationResult, ResidualReport, SensorParams, WeakDirection, Weighting};
use crate::cca::CcaResult;
use crate::lsq::Termination;
use crate::motion::SensorKind;
use crate::so3::{exp_map, log_map, Rotation};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

fn deg3(v: Vector3<f64>) -> [f64; 3] {
    [v.x.to_degrees(), v.y.to_degrees(), v.z.to_degrees()]
}

fn finite3(v: Vector3<f64>) -> Option<[f64; 3]> {
    v.iter().all(|x| x.is_finite()).then_some([v.x, v.y, v.z])
}

/// One calibrated sensor pair, in presentation units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEntry {
    pub id: String,
    pub kind: SensorKind,
    /// rotation vector of `R^e_o`, degrees per axis
    pub rotation_deg: [f64; 3],
    pub tau_ms: f64,
    /// rad/s, IMU only
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_rad_s: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_std_deg: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_std_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_std_rad_s: Option<[f64; 3]>,
    pub init_rotation_deg: [f64; 3],
    pub init_tau_ms: f64,
    pub init_correlation: f64,
}

impl SensorEntry {
    pub fn rotation(&self) -> Rotation {
        exp_map(&Vector3::from(self.rotation_deg).map(f64::to_radians))
    }

    pub fn tau(&self) -> f64 {
        self.tau_ms * 1e-3
    }

    pub fn bias(&self) -> Option<Vector3<f64>> {
        self.bias_rad_s.map(Vector3::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub event: String,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<Weighting>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    pub sensors: Vec<SensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualReport>,
    #[serde(default)]
    pub weak_directions: Vec<WeakDirection>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ResultDocument {
    pub fn sensor(&self, id: &str) -> Option<&SensorEntry> {
        self.sensors.iter().find(|s| s.id == id)
    }

    /// Document for a run that stopped after trace-correlation initialization.
    pub fn from_init(event: &str, params: &[SensorParams], inits: &[CcaResult]) -> Self {
        let sensors = params
            .iter()
            .zip(inits)
            .map(|(p, init)| {
                let rotation_deg = deg3(log_map(&p.rotation));
                SensorEntry {
                    id: p.id.clone(),
                    kind: p.kind,
                    rotation_deg,
                    tau_ms: p.tau * 1e3,
                    bias_rad_s: (p.kind == SensorKind::Imu).then_some([p.bias.x, p.bias.y, p.bias.z]),
                    rotation_std_deg: None,
                    tau_std_ms: None,
                    bias_std_rad_s: None,
                    init_rotation_deg: rotation_deg,
                    init_tau_ms: init.tau * 1e3,
                    init_correlation: init.search.r_peak,
                }
            })
            .collect();
        Self {
            event: event.to_string(),
            stage: Stage::Init,
            weighting: None,
            iterations: 0,
            converged: true,
            termination: None,
            sensors,
            residuals: None,
            weak_directions: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

impl From<&CalibrationResult> for ResultDocument {
    fn from(r: &CalibrationResult) -> Self {
        let sensors = r
            .sensors
            .iter()
            .map(|s| SensorEntry {
                id: s.id.clone(),
                kind: s.kind,
                rotation_deg: deg3(log_map(&s.rotation)),
                tau_ms: s.tau * 1e3,
                bias_rad_s: s.bias.map(|b| [b.x, b.y, b.z]),
                rotation_std_deg: finite3(s.rotation_std.map(f64::to_degrees)),
                tau_std_ms: (s.tau_std.is_finite()).then_some(s.tau_std * 1e3),
                bias_std_rad_s: s.bias_std.and_then(finite3),
                init_rotation_deg: deg3(log_map(&s.init_rotation)),
                init_tau_ms: s.init_tau * 1e3,
                init_correlation: s.init_correlation,
            })
            .collect();
        Self {
            event: r.event_id.clone(),
            stage: Stage::Full,
            weighting: Some(r.weighting),
            iterations: r.iterations,
            converged: r.converged(),
            termination: Some(r.termination),
            sensors,
            residuals: Some(r.report.clone()),
            weak_directions: r.weak_directions.clone(),
            warnings: r.warnings.clone(),
        }
    }
}

fn fmt3(v: &[f64; 3], prec: usize) -> String {
    format!("{:>9.prec$} {:>9.prec$} {:>9.prec$}", v[0], v[1], v[2])
}

/// Plain-text report of a result document.
pub fn render_report(doc: &ResultDocument) -> String {
    let mut s = String::new();
    let stage = match doc.stage {
        Stage::Init => "initialization only",
        Stage::Full => "joint refinement",
    };
    let _ = writeln!(s, "Calibration against event camera '{}' ({stage})", doc.event);
    if doc.stage == Stage::Full {
        let mode = match doc.weighting {
            Some(Weighting::Unweighted) => "unweighted",
            _ => "inverse-std weighted",
        };
        let _ = writeln!(
            s,
            "optimizer: {} iterations, {}, {mode}",
            doc.iterations,
            match doc.termination {
                Some(t) if t.converged() => format!("converged ({t:?})"),
                Some(t) => format!("NOT converged ({t:?})"),
                None => "n/a".into(),
            }
        );
    }
    for e in &doc.sensors {
        let _ = writeln!(s, "\n[{}] {}", e.id, e.kind.as_str());
        let _ = writeln!(s, "  rotation vector (deg)  {}", fmt3(&e.rotation_deg, 4));
        if let Some(sd) = &e.rotation_std_deg {
            let _ = writeln!(s, "    std (deg)            {}", fmt3(sd, 4));
        }
        let _ = write!(s, "  time offset (ms)       {:>9.3}", e.tau_ms);
        match e.tau_std_ms {
            Some(sd) => {
                let _ = writeln!(s, "  (std {sd:.3})");
            }
            None => s.push('\n'),
        }
        if let Some(b) = &e.bias_rad_s {
            let _ = writeln!(s, "  gyro bias (rad/s)      {}", fmt3(b, 5));
        }
        if doc.stage == Stage::Full {
            let _ = writeln!(
                s,
                "  initial: rotation {} deg, offset {:.3} ms, r = {:.4}",
                fmt3(&e.init_rotation_deg, 4).trim_start(),
                e.init_tau_ms,
                e.init_correlation
            );
        } else {
            let _ = writeln!(s, "  trace correlation      {:>9.4}", e.init_correlation);
        }
    }
    if let Some(res) = &doc.residuals {
        let _ = writeln!(s, "\nresiduals (rad/s for rates, rad for rotation pairs)");
        let _ = writeln!(s, "  {:<12} {:<6} {:>7} {:>8} {:>11} {:>11} {:>12}", "sensor", "kind", "count", "excluded", "rms", "max", "cost");
        for t in &res.terms {
            let _ = writeln!(
                s,
                "  {:<12} {:<6} {:>7} {:>8} {:>11.4e} {:>11.4e} {:>12.5e}",
                t.sensor,
                t.kind.as_str(),
                t.count,
                t.excluded,
                t.rms,
                t.max,
                t.cost
            );
        }
        let _ = writeln!(s, "  total cost {:.6e}", res.total_cost);
    }
    for w in &doc.weak_directions {
        let parts: Vec<String> = w.components.iter().map(|(n, c)| format!("{c:+.2}·{n}")).collect();
        let _ = writeln!(s, "\nweak direction (eigenvalue {:.2e}): {}", w.eigenvalue, parts.join(" "));
    }
    for w in &doc.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}
