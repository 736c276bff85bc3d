//! JSON scenario files.
//!
//! ```json
//! {
//!   "system":  { "A": [[1.0]], "Q": [[1.0]], "P0": [[1.0]] },
//!   "sensors": [ { "C": [[1.0]], "R": [[1.0]], "position": [0.0] } ],
//!   "loss_model": { "family": "exponential", "kappa": 1.0, "d_max": 1.0 },
//!   "region": { "lo": [0.0], "hi": [1.0] }
//! }
//! ```
//!
//! Matrices are row-major nested arrays. `position`, `lo` and `hi` have one
//! entry on a line and two in the plane. Optional `name` and `description`
//! strings are carried along for reports.

use std::fs;
use std::path::Path;

use basestation::model::{LinearSystem, LossModel, Point, Region, Scenario, Sensor};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    #[allow(dead_code)]
    description: Option<String>,
    system: SystemSpec,
    sensors: Vec<SensorSpec>,
    loss_model: LossSpec,
    region: RegionSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSpec {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "P0")]
    p0: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorSpec {
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    position: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSpec {
    family: String,
    #[serde(default)]
    kappa: Option<f64>,
    #[serde(default)]
    slope: Option<f64>,
    d_max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// A validated scenario and the name it is reported under.
#[derive(Debug, Clone)]
pub struct NamedScenario {
    pub name: String,
    pub scenario: Scenario<f64>,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> CliError {
    CliError::Core(basestation::Error::Invalid {
        field: field.into(),
        reason: reason.into(),
    })
}

/// Row-major nested array to a matrix.
pub fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(invalid(field, "empty matrix"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(field, "rows have unequal length"));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid(field, "non-finite entry"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn point(coords: &[f64], field: &str) -> Result<Point<f64>, CliError> {
    if coords.iter().any(|x| !x.is_finite()) {
        return Err(invalid(field, "non-finite coordinate"));
    }
    Point::from_coords(coords).map_err(|e| CliError::Core(e.at(field)))
}

fn core(prefix: &str) -> impl Fn(basestation::Error) -> CliError + '_ {
    move |e| CliError::Core(e.at(prefix))
}

/// Parses and validates scenario text. `origin` names the source in parse
/// errors.
pub fn parse_scenario_str(text: &str, origin: &str) -> Result<NamedScenario, CliError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| CliError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    let s = &file.system;
    let system = LinearSystem::new(
        matrix(&s.a, "system.A")?,
        matrix(&s.q, "system.Q")?,
        matrix(&s.p0, "system.P0")?,
    )
    .map_err(core("system"))?;

    let mut sensors = Vec::with_capacity(file.sensors.len());
    for (j, spec) in file.sensors.iter().enumerate() {
        let prefix = format!("sensors[{j}]");
        let sensor = Sensor::new(
            matrix(&spec.c, &format!("{prefix}.C"))?,
            matrix(&spec.r, &format!("{prefix}.R"))?,
            point(&spec.position, &format!("{prefix}.position"))?,
        )
        .map_err(core(&prefix))?;
        sensors.push(sensor);
    }

    let l = &file.loss_model;
    let model = match l.family.as_str() {
        "exponential" => {
            let kappa = l
                .kappa
                .ok_or_else(|| invalid("loss_model.kappa", "required for the exponential family"))?;
            LossModel::exponential(kappa, l.d_max)
        }
        "linear" => {
            let slope = l
                .slope
                .ok_or_else(|| invalid("loss_model.slope", "required for the linear family"))?;
            LossModel::linear(slope, l.d_max)
        }
        other => {
            return Err(invalid(
                "loss_model.family",
                format!("unknown family {other:?}, expected \"exponential\" or \"linear\""),
            ))
        }
    }
    .map_err(core("loss_model"))?;

    let region = Region::new(
        point(&file.region.lo, "region.lo")?,
        point(&file.region.hi, "region.hi")?,
    )
    .map_err(core("region"))?;
    let scenario = Scenario::new(system, sensors, model, region).map_err(CliError::Core)?;
    Ok(NamedScenario {
        name: file.name.unwrap_or_else(|| origin.to_string()),
        scenario,
    })
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<NamedScenario, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let stem = path
        .file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    let mut named = parse_scenario_str(&text, &path.display().to_string())?;
    if named.name == path.display().to_string() {
        named.name = stem;
    }
    Ok(named)
}

/// Scenario files that ship with the binary.
pub const BUILTIN: &[(&str, &str)] = &[
    ("fig1_default", include_str!("../scenarios/fig1_default.json")),
    ("fig2_colinear3", include_str!("../scenarios/fig2_colinear3.json")),
    ("fig3_triangle", include_str!("../scenarios/fig3_triangle.json")),
    ("unequal_noise", include_str!("../scenarios/unequal_noise.json")),
];

pub fn builtin(name: &str) -> Option<NamedScenario> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| parse_scenario_str(text, n).expect("shipped scenario is valid"))
}

pub fn builtins() -> Vec<NamedScenario> {
    BUILTIN
        .iter()
        .map(|(n, text)| parse_scenario_str(text, n).expect("shipped scenario is valid"))
        .collect()
}
