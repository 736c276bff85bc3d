//! Subcommand implementations. Each writes CSV to the given sinks so that
//! they can be driven from tests as well as from `main`.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use basestation::linalg::CovMatrix;
use basestation::model::{Point, Scenario};
use basestation::montecarlo::{mean_trace_curve, surrogate_trace_recursion, SimConfig};
use basestation::placement::{expected_at, place_1d, place_2d, scan_piecewise_concavity, ConcavityReport};
use basestation::PlacementResult;

use crate::output::{location_cells, location_header, num, write_table};
use crate::scenario::matrix;
use crate::CliError;

/// Parses `x` or `x,y`.
pub fn parse_location(s: &str) -> Result<Point<f64>, CliError> {
    let coords = s
        .split(',')
        .map(|c| c.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("location {s:?}: {e}")))?;
    Point::from_coords(&coords).map_err(|e| CliError::Usage(format!("location {s:?}: {e}")))
}

/// `--pk` takes a nested JSON array, either inline or in a file.
pub fn parse_pk(arg: &str, scenario: &Scenario<f64>) -> Result<CovMatrix<f64>, CliError> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| CliError::Usage(format!("cannot read --pk file {arg}: {e}")))?
    };
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        origin: "--pk".into(),
        message: e.to_string(),
    })?;
    let m = matrix(&rows, "pk")?;
    let n = scenario.system().n();
    if m.shape() != (n, n) {
        return Err(CliError::Usage(format!("--pk must be {n}x{n}")));
    }
    CovMatrix::new(m).map_err(|e| CliError::Core(e.at("pk")))
}

fn initial_cov(pk: Option<&str>, scenario: &Scenario<f64>) -> Result<CovMatrix<f64>, CliError> {
    match pk {
        Some(arg) => parse_pk(arg, scenario),
        None => Ok(scenario.system().p0().clone()),
    }
}

fn check_location(p: &Point<f64>, scenario: &Scenario<f64>) -> Result<(), CliError> {
    if p.dim() != scenario.dim() {
        return Err(CliError::Usage(format!(
            "location {p} has {} coordinates, scenario is {}D",
            p.dim(),
            scenario.dim()
        )));
    }
    if !scenario.region().contains(p) {
        return Err(CliError::Usage(format!("location {p} is outside the scenario region")));
    }
    Ok(())
}

/// One row per location: coordinates, entries `p_i_j` of the expected next
/// covariance (row-major), trace.
pub fn cmd_expect<W: Write>(
    scenario: &Scenario<f64>,
    locations: &[Point<f64>],
    pk: Option<&str>,
    out: W,
) -> Result<(), CliError> {
    if locations.is_empty() {
        return Err(CliError::Usage("at least one --location is required".into()));
    }
    let p = initial_cov(pk, scenario)?;
    let n = scenario.system().n();
    let mut header = location_header(scenario.dim());
    for i in 0..n {
        for j in 0..n {
            header.push(format!("p_{i}_{j}"));
        }
    }
    header.push("trace".into());
    let mut rows = Vec::new();
    for loc in locations {
        check_location(loc, scenario)?;
        let e = expected_at(&p, scenario, loc)?;
        let mut row = location_cells(loc);
        for i in 0..n {
            for j in 0..n {
                row.push(num(e.matrix()[(i, j)]));
            }
        }
        row.push(num(e.trace()));
        rows.push(row);
    }
    write_table(out, &header, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlaceDim {
    #[value(name = "1d")]
    One,
    #[value(name = "2d")]
    Two,
}

#[derive(Debug, Clone)]
pub struct PlaceOptions<'a> {
    pub dim: Option<PlaceDim>,
    /// Grid points on a line.
    pub grid: usize,
    /// Grid spacing in the plane.
    pub resolution: f64,
    pub pk: Option<&'a str>,
}

/// The CSV tables produced by `place`.
#[derive(Debug, Clone, Default)]
pub struct PlaceTables {
    pub cost_curve: Vec<u8>,
    pub summary: Vec<u8>,
    /// 1D only.
    pub concavity: Option<Vec<u8>>,
    /// 2D only.
    pub local_minima: Option<Vec<u8>>,
}

fn summary_table(result: &PlacementResult, extra: &[(&str, String)]) -> Result<Vec<u8>, CliError> {
    let dim = result.best_location.dim();
    let mut header: Vec<String> = location_header(dim)
        .into_iter()
        .map(|h| h.replacen("location", "best_location", 1))
        .collect();
    header.extend(["best_cost", "endpoint_optimal", "loewner_dominant"].map(String::from));
    let mut row = location_cells(&result.best_location);
    row.extend([
        num(result.best_cost),
        result.endpoint_optimal.to_string(),
        result.loewner_dominant.to_string(),
    ]);
    for (k, v) in extra {
        header.push(k.to_string());
        row.push(v.clone());
    }
    let mut buf = Vec::new();
    write_table(&mut buf, &header, &[row])?;
    Ok(buf)
}

fn cost_table(result: &PlacementResult) -> Result<Vec<u8>, CliError> {
    let mut header = location_header(result.best_location.dim());
    header.push("cost".into());
    let rows: Vec<Vec<String>> = result
        .cost_curve
        .iter()
        .map(|(p, c)| {
            let mut r = location_cells(p);
            r.push(num(*c));
            r
        })
        .collect();
    let mut buf = Vec::new();
    write_table(&mut buf, &header, &rows)?;
    Ok(buf)
}

fn concavity_table(report: &ConcavityReport<f64>) -> Result<Vec<u8>, CliError> {
    let header = [
        "interval",
        "lo",
        "hi",
        "location",
        "min_eig_second_diff",
        "max_eig_second_diff",
        "threshold",
        "trace_second_diff",
        "trace_threshold",
        "matrix_concave",
        "trace_concave",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|q| {
            let iv = &report.intervals[q.interval];
            vec![
                q.interval.to_string(),
                num(iv.lo),
                num(iv.hi),
                num(q.location),
                num(q.min_eig),
                num(q.max_eig),
                num(q.threshold),
                num(q.trace_second_diff),
                num(q.trace_threshold),
                q.matrix_nsd().to_string(),
                q.trace_concave().to_string(),
            ]
        })
        .collect();
    let mut buf = Vec::new();
    write_table(&mut buf, &header, &rows)?;
    Ok(buf)
}

/// Concavity scan between consecutive sensors, in position order. `None`
/// when fewer than two distinct positions exist.
fn piecewise(
    p: &CovMatrix<f64>,
    scenario: &Scenario<f64>,
    grid: usize,
) -> Result<Option<ConcavityReport<f64>>, CliError> {
    let mut sensors = scenario.sensors().to_vec();
    sensors.sort_by(|a, b| a.position().x().total_cmp(&b.position().x()));
    if sensors.windows(2).any(|w| w[0].position().x() == w[1].position().x()) || sensors.len() < 2 {
        return Ok(None);
    }
    let sorted = scenario.with_sensors(sensors)?;
    Ok(Some(scan_piecewise_concavity(p, &sorted, grid)?))
}

/// Grid search for the best base location.
pub fn cmd_place(scenario: &Scenario<f64>, opts: &PlaceOptions) -> Result<PlaceTables, CliError> {
    let p = initial_cov(opts.pk, scenario)?;
    let dim = opts.dim.unwrap_or(if scenario.dim() == 1 {
        PlaceDim::One
    } else {
        PlaceDim::Two
    });
    match (dim, scenario.dim()) {
        (PlaceDim::One, 1) => {
            let result = place_1d(&p, scenario, opts.grid)?;
            let report = piecewise(&p, scenario, opts.grid)?;
            let extra = match &report {
                Some(r) => vec![
                    ("matrix_concave", r.all_nsd.to_string()),
                    ("trace_concave", r.all_trace_concave().to_string()),
                ],
                None => vec![],
            };
            Ok(PlaceTables {
                cost_curve: cost_table(&result)?,
                summary: summary_table(&result, &extra)?,
                concavity: report.as_ref().map(concavity_table).transpose()?,
                local_minima: None,
            })
        }
        (PlaceDim::Two, 2) => {
            if !(opts.resolution > 0.0) {
                return Err(CliError::Usage("--resolution must be positive".into()));
            }
            let placed = place_2d(&p, scenario, opts.resolution)?;
            let interior = placed.interior_minima().count();
            let extra = [
                ("local_minima", placed.local_minima.len().to_string()),
                ("interior_minima", interior.to_string()),
                ("degenerate", placed.degenerate.to_string()),
            ];
            let header = ["location_x", "location_y", "cost", "interior"].map(String::from);
            let rows: Vec<Vec<String>> = placed
                .local_minima
                .iter()
                .map(|m| {
                    let mut r = location_cells(&m.location);
                    r.extend([num(m.cost), m.interior.to_string()]);
                    r
                })
                .collect();
            let mut minima = Vec::new();
            write_table(&mut minima, &header, &rows)?;
            Ok(PlaceTables {
                cost_curve: cost_table(&placed.result)?,
                summary: summary_table(&placed.result, &extra)?,
                concavity: None,
                local_minima: Some(minima),
            })
        }
        (_, d) => Err(CliError::Usage(format!("--dim does not match the {d}D scenario"))),
    }
}

/// Writes the `place` tables into `dir` as `cost_curve.csv`, `summary.csv`
/// and `concavity.csv` or `local_minima.csv`.
pub fn write_place_tables(tables: &PlaceTables, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let put = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        File::create(dir.join(name))?.write_all(bytes)?;
        Ok(())
    };
    put("cost_curve.csv", &tables.cost_curve)?;
    put("summary.csv", &tables.summary)?;
    if let Some(c) = &tables.concavity {
        put("concavity.csv", c)?;
    }
    if let Some(m) = &tables.local_minima {
        put("local_minima.csv", m)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub location: Point<f64>,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Adds the deterministic expected-covariance recursion as a column.
    pub surrogate: bool,
}

/// Per-step mean and standard error of `trace(P_k)` over simulated trials.
pub fn cmd_simulate<W: Write>(scenario: &Scenario<f64>, opts: &SimulateOptions, out: W) -> Result<(), CliError> {
    check_location(&opts.location, scenario)?;
    let config = SimConfig::new(opts.horizon, opts.trials, opts.seed, opts.location)?;
    let curve = match opts.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?
            .install(|| mean_trace_curve(scenario, &config))?,
        None => mean_trace_curve(scenario, &config)?,
    };
    let surrogate = if opts.surrogate {
        Some(surrogate_trace_recursion(scenario, &opts.location, opts.horizon)?)
    } else {
        None
    };
    let mut header = ["step", "mean_trace", "stderr_trace"].map(String::from).to_vec();
    if surrogate.is_some() {
        header.push("surrogate_trace".into());
    }
    let rows: Vec<Vec<String>> = (0..opts.horizon)
        .map(|k| {
            let mut r = vec![(k + 1).to_string(), num(curve.mean[k]), num(curve.stderr[k])];
            if let Some(s) = &surrogate {
                r.push(num(s[k]));
            }
            r
        })
        .collect();
    write_table(out, &header, &rows)
}
