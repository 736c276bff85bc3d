//! Base-station placement.
//!
//! The search objective is the trace of the one-step expected covariance.
//! Loewner dominance of the winner over every sampled competitor is computed
//! separately and reported as a flag, since the Loewner order is partial.
//!
//! Grid evaluations run in parallel but results are collected in grid order,
//! so the argmin and its tie-breaking do not depend on scheduling.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expectation::{concavity_second_difference, expected_next_cov, noise_equal};
use crate::linalg::{loewner_leq, symmetric_eigenvalues, CovMatrix, PsdTolerance};
use crate::model::{arrival_probs, Point, Scenario};
use crate::scalar::{lit, Real};

/// Relative tolerance for NSD verdicts on second differences, scaled by
/// `‖J(d)‖₂` at the evaluation point.
pub const CONCAVITY_TOL: f64 = 1e-7;

/// Costs within this relative distance of the minimum count as ties.
pub const TIE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementResult<T: Real> {
    pub best_location: Point<T>,
    pub best_cost: T,
    pub cost_curve: Vec<(Point<T>, T)>,
    /// The argmin is a sensor position.
    pub endpoint_optimal: bool,
    /// The winner's expected covariance is Loewner-below every sampled
    /// competitor's.
    pub loewner_dominant: bool,
}

/// Expected next covariance with the base station at `location`.
pub fn expected_at<T: Real>(p: &CovMatrix<T>, scenario: &Scenario<T>, location: &Point<T>) -> Result<CovMatrix<T>> {
    let lambda = arrival_probs(scenario, location)?;
    expected_next_cov(p, scenario, &lambda)
}

/// Trace of the expected next covariance at `location`.
pub fn objective<T: Real>(p: &CovMatrix<T>, scenario: &Scenario<T>, location: &Point<T>) -> Result<T> {
    Ok(expected_at(p, scenario, location)?.trace())
}

fn evaluate<T: Real>(p: &CovMatrix<T>, scenario: &Scenario<T>, points: &[Point<T>]) -> Result<Vec<CovMatrix<T>>> {
    points.par_iter().map(|x| expected_at(p, scenario, x)).collect()
}

/// Picks the winner among grid entries whose trace is within the tie
/// tolerance of the minimum: the first sensor position if any, else the
/// first entry. `points` must already be in tie-breaking order.
fn select<T: Real>(
    points: Vec<Point<T>>,
    covs: &[CovMatrix<T>],
    is_sensor: impl Fn(usize) -> bool,
) -> Result<PlacementResult<T>> {
    let costs: Vec<T> = covs.iter().map(|c| c.trace()).collect();
    let min = costs
        .iter()
        .copied()
        .fold(T::max_value().expect("bounded"), |a, b| a.min(b));
    let tie = lit::<T>(TIE_REL_TOL) * (T::one() + min.abs());
    let tied = |i: &usize| costs[*i] - min <= tie;
    let best = (0..costs.len())
        .filter(tied)
        .find(|&i| is_sensor(i))
        .or_else(|| (0..costs.len()).find(tied))
        .ok_or_else(|| Error::Numeric("empty or non-finite cost curve".into()))?;
    let tol = PsdTolerance::default();
    let loewner_dominant = covs
        .par_iter()
        .map(|c| loewner_leq(&covs[best], c, tol))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .all(|b| b);
    Ok(PlacementResult {
        best_location: points[best],
        best_cost: costs[best],
        endpoint_optimal: is_sensor(best),
        loewner_dominant,
        cost_curve: points.into_iter().zip(costs).collect(),
    })
}

/// Uniform grid on `[lo, hi]` with both ends exact.
fn linspace<T: Real>(lo: T, hi: T, count: usize) -> Vec<T> {
    let step = (hi - lo) / lit(count as f64 - 1.0);
    (0..count)
        .map(|i| if i + 1 == count { hi } else { lo + step * lit(i as f64) })
        .collect()
}

/// Sorted union of a uniform grid and the given exact positions. Grid nodes
/// closer than `1e-12·span` to a position are replaced by it.
fn grid_with_positions<T: Real>(lo: T, hi: T, count: usize, positions: &[T]) -> Vec<(T, bool)> {
    let mut pts: Vec<(T, bool)> = linspace(lo, hi, count).into_iter().map(|x| (x, false)).collect();
    pts.extend(positions.iter().map(|&x| (x, true)));
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite grid").then(b.1.cmp(&a.1)));
    let merge = lit::<T>(1e-12) * (hi - lo);
    let mut out: Vec<(T, bool)> = Vec::with_capacity(pts.len());
    for (x, exact) in pts {
        match out.last_mut() {
            Some(last) if (x - last.0).abs() <= merge => {
                if exact && !last.1 {
                    *last = (x, true);
                }
            }
            _ => out.push((x, exact)),
        }
    }
    out
}

fn require_dim<T: Real>(scenario: &Scenario<T>, dim: usize) -> Result<()> {
    if scenario.dim() != dim {
        return Err(Error::invalid(
            "region",
            format!("expected a {dim}D scenario, got {}D", scenario.dim()),
        ));
    }
    Ok(())
}

/// Grid search over a 1D region. The grid contains both region ends and
/// every sensor position exactly; near-ties go to sensor positions, then to
/// the smaller coordinate.
pub fn place_1d<T: Real>(p: &CovMatrix<T>, scenario: &Scenario<T>, grid_points: usize) -> Result<PlacementResult<T>> {
    require_dim(scenario, 1)?;
    if grid_points < 3 {
        return Err(Error::invalid("grid", "at least 3 grid points are required"));
    }
    let (lo, hi) = (scenario.region().lo.x(), scenario.region().hi.x());
    if !(lo < hi) {
        return Err(Error::invalid("region", "degenerate interval"));
    }
    let positions: Vec<T> = scenario.sensors().iter().map(|s| s.position().x()).collect();
    let grid = grid_with_positions(lo, hi, grid_points, &positions);
    let points: Vec<Point<T>> = grid.iter().map(|&(x, _)| Point::Line(x)).collect();
    let covs = evaluate(p, scenario, &points)?;
    select(points, &covs, |i| grid[i].1)
}

/// Which concavity result a two-sensor scenario falls under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Hypotheses {
    /// Equal `C`, equal `R`.
    EqualNoise,
    /// Equal single-row `C`, arbitrary `R1`, `R2`.
    ScalarMeasurement,
    NotMet(String),
    /// Empirical scan with no theorem behind it.
    Empirical,
}

impl Hypotheses {
    pub fn is_met(&self) -> bool {
        matches!(self, Hypotheses::EqualNoise | Hypotheses::ScalarMeasurement)
    }
}

/// Checks the hypotheses of the two-sensor concavity results on a scenario:
/// two sensors on a line, identical observation matrices, a validated
/// convex decreasing loss model, and equal noise or a single-row `C`.
pub fn check_two_sensor_hypotheses<T: Real>(scenario: &Scenario<T>) -> Hypotheses {
    let s = scenario.sensors();
    if scenario.dim() != 1 {
        return Hypotheses::NotMet("sensors are not on a line".into());
    }
    if s.len() != 2 {
        return Hypotheses::NotMet(format!("{} sensors, expected 2", s.len()));
    }
    if s[0].c() != s[1].c() {
        return Hypotheses::NotMet("C1 ≠ C2".into());
    }
    if !scenario.loss_model().is_validated() {
        return Hypotheses::NotMet("loss model not validated as convex and decreasing".into());
    }
    if noise_equal(s[0].r().matrix(), s[1].r().matrix()) {
        Hypotheses::EqualNoise
    } else if s[0].c().nrows() == 1 {
        Hypotheses::ScalarMeasurement
    } else {
        Hypotheses::NotMet("R1 ≠ R2 with vector-valued measurements".into())
    }
}

/// Second-difference diagnostics at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcavityPoint<T> {
    pub location: T,
    pub interval: usize,
    /// Eigenvalue range of the matrix second difference.
    pub min_eig: T,
    pub max_eig: T,
    /// `CONCAVITY_TOL · ‖J(d)‖₂`.
    pub threshold: T,
    /// Second difference of the trace curve.
    pub trace_second_diff: T,
    /// `CONCAVITY_TOL · trace J(d)`.
    pub trace_threshold: T,
    /// Largest eigenvalue of the Richardson combination `(4 D(h/2) − D(h)) / 3`.
    pub richardson_max_eig: T,
}

impl<T: Real> ConcavityPoint<T> {
    pub fn matrix_nsd(&self) -> bool {
        self.max_eig <= self.threshold
    }

    pub fn trace_concave(&self) -> bool {
        self.trace_second_diff <= self.trace_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalVerdict<T> {
    pub lo: T,
    pub hi: T,
    pub matrix_concave: bool,
    pub trace_concave: bool,
    /// Largest `max_eig − threshold` over the interval (≤ 0 when concave).
    pub worst_matrix_margin: T,
    /// Largest `trace_second_diff − trace_threshold` over the interval.
    pub worst_trace_margin: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcavityReport<T: Real> {
    pub points: Vec<ConcavityPoint<T>>,
    pub intervals: Vec<IntervalVerdict<T>>,
    /// Every interior point's matrix second difference is NSD within
    /// tolerance.
    pub all_nsd: bool,
    pub hypotheses: Hypotheses,
    pub step: T,
}

impl<T: Real> ConcavityReport<T> {
    pub fn grid(&self) -> Vec<T> {
        self.points.iter().map(|p| p.location).collect()
    }

    pub fn min_eig_of_second_diff(&self) -> Vec<T> {
        self.points.iter().map(|p| p.min_eig).collect()
    }

    pub fn all_trace_concave(&self) -> bool {
        self.intervals.iter().all(|i| i.trace_concave)
    }
}

fn max_eig<T: Real>(m: &DMatrix<T>) -> Result<(T, T)> {
    let ev = symmetric_eigenvalues(m)?;
    Ok((ev[0], ev[ev.len() - 1]))
}

fn scan_interval<T: Real>(
    p: &CovMatrix<T>,
    scenario: &Scenario<T>,
    lo: T,
    hi: T,
    grid_points: usize,
    h: T,
    interval: usize,
) -> Result<(Vec<ConcavityPoint<T>>, IntervalVerdict<T>)> {
    let j = |d: T| expected_at(p, scenario, &Point::Line(d)).map(CovMatrix::into_inner);
    let grid = linspace(lo, hi, grid_points);
    let tol = lit::<T>(CONCAVITY_TOL);
    let half = h * lit(0.5);
    let points: Vec<ConcavityPoint<T>> = grid[1..grid.len() - 1]
        .par_iter()
        .map(|&d| {
            let centre = j(d)?;
            let dd = concavity_second_difference(j, d, h, (lo, hi))?;
            let dd_half = concavity_second_difference(j, d, half, (lo, hi))?;
            let richardson = (&dd_half * lit::<T>(4.0) - &dd) / lit::<T>(3.0);
            let (min_eig, max_e) = max_eig(&dd)?;
            let norm = crate::linalg::spectral_radius_sym(&centre)?;
            Ok(ConcavityPoint {
                location: d,
                interval,
                min_eig,
                max_eig: max_e,
                threshold: tol * norm,
                trace_second_diff: dd.trace(),
                trace_threshold: tol * centre.trace().abs(),
                richardson_max_eig: max_eig(&richardson)?.1,
            })
        })
        .collect::<Result<_>>()?;
    let worst = |f: &dyn Fn(&ConcavityPoint<T>) -> T| {
        points
            .iter()
            .map(f)
            .fold(T::min_value().expect("bounded"), |a, b| a.max(b))
    };
    let worst_matrix_margin = worst(&|q| q.max_eig - q.threshold);
    let worst_trace_margin = worst(&|q| q.trace_second_diff - q.trace_threshold);
    let verdict = IntervalVerdict {
        lo,
        hi,
        matrix_concave: points.iter().all(ConcavityPoint::matrix_nsd),
        trace_concave: points.iter().all(ConcavityPoint::trace_concave),
        worst_matrix_margin,
        worst_trace_margin,
    };
    Ok((points, verdict))
}

fn check_stencil<T: Real>(lo: T, hi: T, grid_points: usize, h: T) -> Result<()> {
    if grid_points < 3 {
        return Err(Error::invalid("grid", "at least 3 grid points are required"));
    }
    if !(h > T::zero()) {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let spacing = (hi - lo) / lit(grid_points as f64 - 1.0);
    if h > spacing {
        return Err(Error::Domain {
            what: "finite-difference step",
            value: format!("{h}"),
            domain: format!("(0, {spacing}] for this grid"),
        });
    }
    Ok(())
}

/// Matrix second differences of the expected covariance along the segment
/// between two sensors. Scenarios outside the theorem's hypotheses are still
/// scanned; the report records why the hypotheses fail.
pub fn verify_concavity_1d<T: Real>(
    p: &CovMatrix<T>,
    scenario: &Scenario<T>,
    grid_points: usize,
    h: T,
) -> Result<ConcavityReport<T>> {
    require_dim(scenario, 1)?;
    let s = scenario.sensors();
    if s.len() != 2 {
        return Err(Error::invalid("sensors", "two sensors are required"));
    }
    let (a, b) = (s[0].position().x(), s[1].position().x());
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if !(lo < hi) {
        return Err(Error::invalid("sensors", "sensor positions coincide"));
    }
    check_stencil(lo, hi, grid_points, h)?;
    let (points, verdict) = scan_interval(p, scenario, lo, hi, grid_points, h, 0)?;
    Ok(ConcavityReport {
        all_nsd: verdict.matrix_concave,
        points,
        intervals: vec![verdict],
        hypotheses: check_two_sensor_hypotheses(scenario),
        step: h,
    })
}

/// Per-interval concavity scan between consecutive colinear sensors, with
/// `grid_points` samples per interval.
pub fn scan_piecewise_concavity<T: Real>(
    p: &CovMatrix<T>,
    scenario: &Scenario<T>,
    grid_points: usize,
) -> Result<ConcavityReport<T>> {
    require_dim(scenario, 1)?;
    let pos: Vec<T> = scenario.sensors().iter().map(|s| s.position().x()).collect();
    if pos.len() < 2 {
        return Err(Error::invalid("sensors", "at least two sensors are required"));
    }
    if pos.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("sensors", "positions must be sorted and distinct"));
    }
    let mut points = Vec::new();
    let mut intervals = Vec::new();
    let mut step = lit::<T>(crate::expectation::DEFAULT_STEP);
    for (k, w) in pos.windows(2).enumerate() {
        let spacing = (w[1] - w[0]) / lit(grid_points.max(2) as f64 - 1.0);
        let h = step.min(spacing);
        step = step.min(h);
        check_stencil(w[0], w[1], grid_points, h)?;
        let (pts, verdict) = scan_interval(p, scenario, w[0], w[1], grid_points, h, k)?;
        points.extend(pts);
        intervals.push(verdict);
    }
    let hypotheses = if pos.len() == 2 {
        check_two_sensor_hypotheses(scenario)
    } else {
        Hypotheses::Empirical
    };
    Ok(ConcavityReport {
        all_nsd: intervals.iter().all(|i| i.matrix_concave),
        points,
        intervals,
        hypotheses,
        step,
    })
}

/// Grid minimum whose cost is strictly below all of its grid neighbours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMinimum<T> {
    pub location: Point<T>,
    pub cost: T,
    /// Not on the boundary of the searched box (or segment).
    pub interior: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement2d<T: Real> {
    pub result: PlacementResult<T>,
    pub local_minima: Vec<LocalMinimum<T>>,
    /// Sensors were colinear or co-located and the search ran along their
    /// common line.
    pub degenerate: bool,
}

impl<T: Real> Placement2d<T> {
    pub fn interior_minima(&self) -> impl Iterator<Item = &LocalMinimum<T>> {
        self.local_minima.iter().filter(|m| m.interior)
    }
}

fn plane<T: Real>(p: &Point<T>) -> (T, T) {
    match *p {
        Point::Plane(x, y) => (x, y),
        Point::Line(x) => (x, T::zero()),
    }
}

/// Grid search over the bounding box of the sensors' convex hull.
///
/// Local minima use the 8-neighbourhood: a node is reported when its cost is
/// strictly below every adjacent node including diagonals. Colinear sensor
/// layouts fall back to a search along the segment they span.
pub fn place_2d<T: Real>(p: &CovMatrix<T>, scenario: &Scenario<T>, resolution: T) -> Result<Placement2d<T>> {
    require_dim(scenario, 2)?;
    if !(resolution > T::zero()) {
        return Err(Error::invalid("resolution", "must be positive"));
    }
    let pos: Vec<(T, T)> = scenario.sensors().iter().map(|s| plane(&s.position())).collect();
    let (x0, x1, y0, y1) = pos
        .iter()
        .fold((pos[0].0, pos[0].0, pos[0].1, pos[0].1), |(a, b, c, d), &(x, y)| {
            (a.min(x), b.max(x), c.min(y), d.max(y))
        });
    let extent = (x1 - x0).max(y1 - y0);
    let flat_tol = lit::<T>(1e-12) * (T::one() + extent * extent);
    let colinear = pos.iter().all(|&(x, y)| {
        pos.iter().all(|&(u, v)| {
            let (ax, ay) = (u - pos[0].0, v - pos[0].1);
            let (bx, by) = (x - pos[0].0, y - pos[0].1);
            (ax * by - ay * bx).abs() <= flat_tol
        })
    });
    if colinear {
        return place_along_segment(p, scenario, &pos, resolution);
    }

    let nx = ((x1 - x0) / resolution).round().to_usize().unwrap_or(0).max(1) + 1;
    let ny = ((y1 - y0) / resolution).round().to_usize().unwrap_or(0).max(1) + 1;
    let xs = linspace(x0, x1, nx);
    let ys = linspace(y0, y1, ny);
    // x-major so that grid order is the lexicographic tie-breaking order
    let points: Vec<Point<T>> = xs
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| Point::Plane(x, y)))
        .collect();
    let covs = evaluate(p, scenario, &points)?;
    let near = (x1 - x0) / lit(nx as f64 - 1.0) * lit(0.5) + (y1 - y0) / lit(ny as f64 - 1.0) * lit(0.5);
    let at_sensor = |i: usize| {
        let (x, y) = plane(&points[i]);
        pos.iter().any(|&(u, v)| (x - u).abs() <= near && (y - v).abs() <= near)
    };
    let flags: Vec<bool> = (0..points.len()).map(at_sensor).collect();
    let result = select(points, &covs, |i| flags[i])?;

    let cost = |i: usize, j: usize| result.cost_curve[i * ny + j].1;
    let mut local_minima = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let c = cost(i, j);
            let mut strict = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                        continue;
                    }
                    strict &= c < cost(a as usize, b as usize);
                }
            }
            if strict {
                local_minima.push(LocalMinimum {
                    location: result.cost_curve[i * ny + j].0,
                    cost: c,
                    interior: i > 0 && j > 0 && i + 1 < nx && j + 1 < ny,
                });
            }
        }
    }
    Ok(Placement2d {
        result,
        local_minima,
        degenerate: false,
    })
}

fn place_along_segment<T: Real>(
    p: &CovMatrix<T>,
    scenario: &Scenario<T>,
    pos: &[(T, T)],
    resolution: T,
) -> Result<Placement2d<T>> {
    // extreme pair along the common line
    let mut ends = (pos[0], pos[0]);
    let mut best = T::zero();
    for &a in pos {
        for &b in pos {
            let d = (a.0 - b.0).hypot(a.1 - b.1);
            if d > best {
                best = d;
                ends = (a, b);
            }
        }
    }
    let ((ax, ay), (bx, by)) = ends;
    if best == T::zero() {
        let location = Point::Plane(ax, ay);
        let covs = evaluate(p, scenario, &[location])?;
        let result = select(vec![location], &covs, |_| true)?;
        let cost = result.best_cost;
        return Ok(Placement2d {
            result,
            local_minima: vec![LocalMinimum {
                location,
                cost,
                interior: false,
            }],
            degenerate: true,
        });
    }
    let count = (best / resolution).round().to_usize().unwrap_or(0).max(2) + 1;
    let along: Vec<T> = pos
        .iter()
        .map(|&(x, y)| ((x - ax) * (bx - ax) + (y - ay) * (by - ay)) / (best * best))
        .collect();
    let grid = grid_with_positions(T::zero(), T::one(), count, &along);
    let at = |t: T| Point::Plane(ax + (bx - ax) * t, ay + (by - ay) * t);
    let mut points: Vec<Point<T>> = grid.iter().map(|&(t, _)| at(t)).collect();
    // sensors themselves sit exactly on the grid
    for (k, &(t, exact)) in grid.iter().enumerate() {
        if exact {
            if let Some(i) = along.iter().position(|&u| u == t) {
                points[k] = Point::Plane(pos[i].0, pos[i].1);
            }
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (plane(&points[i]), plane(&points[j]));
        a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap())
    });
    let sorted: Vec<Point<T>> = order.iter().map(|&i| points[i]).collect();
    let sorted_exact: Vec<bool> = order.iter().map(|&i| grid[i].1).collect();
    let covs = evaluate(p, scenario, &sorted)?;
    let result = select(sorted, &covs, |i| sorted_exact[i])?;
    let costs: Vec<T> = result.cost_curve.iter().map(|c| c.1).collect();
    let local_minima = (0..costs.len())
        .filter(|&i| (i == 0 || costs[i] < costs[i - 1]) && (i + 1 == costs.len() || costs[i] < costs[i + 1]))
        .map(|i| LocalMinimum {
            location: result.cost_curve[i].0,
            cost: costs[i],
            interior: i > 0 && i + 1 < costs.len(),
        })
        .collect();
    Ok(Placement2d {
        result,
        local_minima,
        degenerate: true,
    })
}
