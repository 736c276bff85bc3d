//! Verification runner: applies the concavity and placement checks that a
//! scenario qualifies for and reports each as pass, fail or skip.

use std::fmt;
use std::fs;
use std::path::Path;

use basestation::expectation::{expected_next_cov, lemma_gap, two_sensor_terms, DEFAULT_STEP};
use basestation::linalg::{loewner_leq, CovMatrix, PsdTolerance};
use basestation::model::{arrival_probs, Point, Scenario};
use basestation::montecarlo::empirical_one_step;
use basestation::placement::{
    check_two_sensor_hypotheses, expected_at, place_1d, place_2d, scan_piecewise_concavity, verify_concavity_1d,
    Hypotheses,
};
use basestation::{Definiteness, Error};

use crate::scenario::{parse_scenario, NamedScenario};
use crate::CliError;

const GRID: usize = 101;
const ORACLE_REL_TOL: f64 = 1e-10;
const MC_TRIALS: usize = 20_000;
const MC_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub scenario: String,
    pub check: String,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}: {}", self.status, self.scenario, self.check, self.detail)
    }
}

struct Recorder<'a> {
    scenario: &'a str,
    out: Vec<Outcome>,
}

impl Recorder<'_> {
    fn push(&mut self, check: &str, status: Status, detail: impl Into<String>) {
        self.out.push(Outcome {
            scenario: self.scenario.to_string(),
            check: check.to_string(),
            status,
            detail: detail.into(),
        });
    }

    fn check(&mut self, check: &str, ok: bool, detail: impl Into<String>) {
        self.push(check, if ok { Status::Pass } else { Status::Fail }, detail);
    }

    /// Records `f`'s verdict, or a failure carrying the error.
    fn run(&mut self, check: &str, f: impl FnOnce() -> Result<(bool, String), Error>) {
        match f() {
            Ok((ok, detail)) => self.check(check, ok, detail),
            Err(e) => self.push(check, Status::Fail, e.to_string()),
        }
    }
}

fn rel_diff(a: &CovMatrix<f64>, b: &CovMatrix<f64>) -> f64 {
    (a.matrix() - b.matrix()).amax() / b.matrix().amax().max(f64::MIN_POSITIVE)
}

fn line_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn two_sensor_checks(rec: &mut Recorder, sc: &Scenario<f64>, hyp: &Hypotheses) {
    let p = sc.system().p0();
    let s = sc.sensors();
    let (x1, x2) = (s[0].position().x(), s[1].position().x());

    rec.run("closed form", || {
        let terms = two_sensor_terms(p, sc.system(), s[0].c(), s[0].r(), s[1].r())?;
        let mut worst = 0.0f64;
        for d in line_grid(x1.min(x2), x1.max(x2), GRID) {
            let loc = Point::Line(d);
            let lambda = arrival_probs(sc, &loc)?;
            let closed = terms.expected_cov(lambda[0], lambda[1])?;
            let exact = expected_next_cov(p, sc, &lambda)?;
            worst = worst.max(rel_diff(&closed, &exact));
        }
        Ok((
            worst <= ORACLE_REL_TOL,
            format!("max relative deviation {worst:.3e} over {GRID} points"),
        ))
    });

    rec.run("matrix concavity", || {
        let spacing = (x2 - x1).abs() / (GRID - 1) as f64;
        let report = verify_concavity_1d(p, sc, GRID, DEFAULT_STEP.min(spacing))?;
        let worst = report.intervals[0].worst_matrix_margin;
        Ok((
            report.all_nsd,
            format!(
                "second differences NSD at {} interior points (worst margin {worst:.3e})",
                report.points.len()
            ),
        ))
    });

    rec.run("endpoint optimality", || {
        let r = place_1d(p, sc, GRID)?;
        Ok((
            r.endpoint_optimal,
            format!("argmin {} with cost {:.6}", r.best_location, r.best_cost),
        ))
    });

    if *hyp == Hypotheses::ScalarMeasurement {
        rec.run("correction gap", || {
            let terms = two_sensor_terms(p, sc.system(), s[0].c(), s[0].r(), s[1].r())?;
            let gap = lemma_gap(&terms)?;
            let ok = matches!(gap.verdict, Definiteness::Nsd | Definiteness::Zero);
            Ok((
                ok,
                format!("M0 − M1 − M2 is {:?} (max eigenvalue {:.3e})", gap.verdict, gap.max_eig),
            ))
        });
        rec.run("lower noise wins", || {
            let (r1, r2) = (s[0].r().matrix()[(0, 0)], s[1].r().matrix()[(0, 0)]);
            let (quiet, loud) = if r1 < r2 { (x1, x2) } else { (x2, x1) };
            let r = place_1d(p, sc, GRID)?;
            let at_quiet = expected_at(p, sc, &Point::Line(quiet))?;
            let at_loud = expected_at(p, sc, &Point::Line(loud))?;
            let dominated = loewner_leq(&at_quiet, &at_loud, PsdTolerance::default())?;
            Ok((
                r.best_location == Point::Line(quiet) && dominated,
                format!(
                    "argmin {}, lower-noise sensor at {quiet}, Loewner order {}",
                    r.best_location,
                    if dominated { "holds" } else { "fails" }
                ),
            ))
        });
    }
}

fn monte_carlo_check(rec: &mut Recorder, sc: &Scenario<f64>) {
    rec.run("monte carlo", || {
        let region = sc.region();
        let mid: Vec<f64> = region
            .lo
            .coords()
            .iter()
            .zip(region.hi.coords())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let loc = Point::from_coords(&mid)?;
        let lambda = arrival_probs(sc, &loc)?;
        let p = sc.system().p0();
        let exact = expected_next_cov(p, sc, &lambda)?;
        let est = empirical_one_step(p, sc, &lambda, MC_TRIALS, MC_SEED)?;
        let mut worst = 0.0f64;
        for (d, se) in (est.mean.matrix() - exact.matrix()).iter().zip(est.stderr.iter()) {
            let z = if *se > 0.0 {
                d.abs() / se
            } else if d.abs() <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
        Ok((
            worst <= 4.0,
            format!("{MC_TRIALS} trials at {loc}, worst deviation {worst:.2} standard errors"),
        ))
    });
}

/// Runs every applicable check on one scenario.
pub fn verify_scenario(named: &NamedScenario) -> Vec<Outcome> {
    let sc = &named.scenario;
    let mut rec = Recorder {
        scenario: &named.name,
        out: Vec::new(),
    };
    let n_sensors = sc.sensors().len();
    if sc.dim() == 1 && n_sensors == 2 {
        match check_two_sensor_hypotheses(sc) {
            Hypotheses::NotMet(why) => {
                rec.push("hypotheses", Status::Skip, format!("hypotheses not met: {why}"));
                return rec.out;
            }
            hyp => {
                rec.push("hypotheses", Status::Pass, format!("{hyp:?}"));
                two_sensor_checks(&mut rec, sc, &hyp);
            }
        }
    } else if sc.dim() == 1 && n_sensors > 2 {
        rec.run("piecewise trace concavity", || {
            let mut sensors = sc.sensors().to_vec();
            sensors.sort_by(|a, b| a.position().x().total_cmp(&b.position().x()));
            let sorted = sc.with_sensors(sensors)?;
            let report = scan_piecewise_concavity(sorted.system().p0(), &sorted, GRID)?;
            let concave = report.intervals.iter().filter(|i| i.trace_concave).count();
            Ok((
                report.all_trace_concave(),
                format!("{concave} of {} inter-sensor intervals concave", report.intervals.len()),
            ))
        });
    } else if sc.dim() == 2 {
        rec.run("planar search", || {
            let placed = place_2d(sc.system().p0(), sc, 0.01)?;
            let interior: Vec<String> = placed.interior_minima().map(|m| m.location.to_string()).collect();
            Ok((
                placed.result.best_cost.is_finite(),
                format!(
                    "best {} ({:.6}); interior local minima: {}",
                    placed.result.best_location,
                    placed.result.best_cost,
                    if interior.is_empty() {
                        "none".into()
                    } else {
                        interior.join(" ")
                    }
                ),
            ))
        });
    } else {
        rec.push("hypotheses", Status::Skip, "hypotheses not met: single sensor");
    }
    monte_carlo_check(&mut rec, sc);
    rec.out
}

/// Loads every `*.json` in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<NamedScenario>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "no scenario files (*.json) in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| parse_scenario(p)).collect()
}

pub fn verify_all(scenarios: &[NamedScenario]) -> Vec<Outcome> {
    scenarios.iter().flat_map(verify_scenario).collect()
}
