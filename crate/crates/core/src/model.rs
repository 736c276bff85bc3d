//! Scenario domain model: the linear system, sensors, loss-probability
//! models and the subset stacking that produces `F_ω` and `G_ω`.

use std::fmt;
use std::sync::Arc;

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{blkcol, blkdiag, CovMatrix, PsdTolerance};
use crate::scalar::{lit, tol_floor, Real};

/// Largest sensor count for which the power set is enumerated.
pub const MAX_ENUMERATED_SENSORS: usize = 20;

/// Sample count used when checking the shape of a loss model.
const SHAPE_SAMPLES: usize = 1001;

/// `x_{k+1} = A x_k + w_k`, `w ~ N(0, Q)`, `x_0 ~ N(0, P0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem<T: Real> {
    a: DMatrix<T>,
    q: CovMatrix<T>,
    p0: CovMatrix<T>,
}

impl<T: Real> LinearSystem<T> {
    pub fn new(a: DMatrix<T>, q: DMatrix<T>, p0: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::invalid("A", format!("must be square, got {}x{}", n, a.ncols())));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("A", "contains a non-finite entry"));
        }
        if q.shape() != (n, n) {
            return Err(Error::invalid("Q", format!("must be {n}x{n} to match A")));
        }
        if p0.shape() != (n, n) {
            return Err(Error::invalid("P0", format!("must be {n}x{n} to match A")));
        }
        let q = CovMatrix::new(q).map_err(|e| e.at("Q"))?;
        let p0 = CovMatrix::new(p0).map_err(|e| e.at("P0"))?;
        Ok(Self { a, q, p0 })
    }

    /// Scalar system `x_{k+1} = a x_k + w_k`.
    pub fn scalar(a: T, q: T, p0: T) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, p0),
        )
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn q(&self) -> &CovMatrix<T> {
        &self.q
    }

    pub fn p0(&self) -> &CovMatrix<T> {
        &self.p0
    }

    /// `A P Aᵀ + Q`, symmetrized.
    pub fn propagate(&self, p: &CovMatrix<T>) -> Result<CovMatrix<T>> {
        if p.dim() != self.n() {
            return Err(Error::dim(format!(
                "covariance is {}x{} but the system has n = {}",
                p.dim(),
                p.dim(),
                self.n()
            )));
        }
        Ok(CovMatrix::from_update(
            &self.a * p.matrix() * self.a.transpose() + self.q.matrix(),
        ))
    }
}

/// Location in one or two dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point<T> {
    Line(T),
    Plane(T, T),
}

impl<T: Real> Point<T> {
    pub fn from_coords(c: &[T]) -> Result<Self> {
        match *c {
            [x] => Ok(Point::Line(x)),
            [x, y] => Ok(Point::Plane(x, y)),
            _ => Err(Error::invalid(
                "",
                format!("expected 1 or 2 coordinates, got {}", c.len()),
            )),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Point::Line(_) => 1,
            Point::Plane(..) => 2,
        }
    }

    pub fn coords(&self) -> Vec<T> {
        match *self {
            Point::Line(x) => vec![x],
            Point::Plane(x, y) => vec![x, y],
        }
    }

    pub fn x(&self) -> T {
        match *self {
            Point::Line(x) | Point::Plane(x, _) => x,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }

    pub fn distance(&self, other: &Point<T>) -> Result<T> {
        match (*self, *other) {
            (Point::Line(a), Point::Line(b)) => Ok((a - b).abs()),
            (Point::Plane(ax, ay), Point::Plane(bx, by)) => Ok((ax - bx).hypot(ay - by)),
            _ => Err(Error::dim("distance between points of different dimension")),
        }
    }
}

impl<T: Real> fmt::Display for Point<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Line(x) => write!(f, "{x}"),
            Point::Plane(x, y) => write!(f, "({x}, {y})"),
        }
    }
}

/// Closed interval (1D) or axis-aligned box (2D).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region<T> {
    pub lo: Point<T>,
    pub hi: Point<T>,
}

impl<T: Real> Region<T> {
    pub fn new(lo: Point<T>, hi: Point<T>) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::invalid("", "lo and hi have different dimensions"));
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("", "non-finite bound"));
        }
        if lo.coords().iter().zip(hi.coords()).any(|(l, h)| *l > h) {
            return Err(Error::invalid("", "lo exceeds hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn interval(lo: T, hi: T) -> Result<Self> {
        Self::new(Point::Line(lo), Point::Line(hi))
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn contains(&self, p: &Point<T>) -> bool {
        p.dim() == self.dim()
            && p.coords()
                .iter()
                .zip(self.lo.coords().iter().zip(self.hi.coords()))
                .all(|(c, (l, h))| *c >= *l && *c <= h)
    }

    pub fn corners(&self) -> Vec<Point<T>> {
        match (self.lo, self.hi) {
            (Point::Line(a), Point::Line(b)) => vec![Point::Line(a), Point::Line(b)],
            (Point::Plane(ax, ay), Point::Plane(bx, by)) => vec![
                Point::Plane(ax, ay),
                Point::Plane(bx, ay),
                Point::Plane(ax, by),
                Point::Plane(bx, by),
            ],
            _ => unreachable!("validated on construction"),
        }
    }
}

/// Packet-arrival probability as a function of distance.
#[derive(Clone)]
pub enum LossFamily<T: Real> {
    /// `f(d) = exp(−κ d)`, `κ > 0`.
    Exponential { kappa: T },
    /// `f(d) = max(0, 1 − c d)`, `c ∈ (0, 1]`.
    Linear { slope: T },
    /// Arbitrary user function, e.g. for counterexample searches.
    Custom {
        name: String,
        f: Arc<dyn Fn(T) -> T + Send + Sync>,
    },
}

impl<T: Real> fmt::Debug for LossFamily<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossFamily::Exponential { kappa } => write!(f, "Exponential {{ kappa: {kappa:?} }}"),
            LossFamily::Linear { slope } => write!(f, "Linear {{ slope: {slope:?} }}"),
            LossFamily::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossModel<T: Real> {
    family: LossFamily<T>,
    d_max: T,
    validated: bool,
}

impl<T: Real> LossModel<T> {
    pub fn exponential(kappa: T, d_max: T) -> Result<Self> {
        if !(kappa > T::zero()) || !kappa.is_finite() {
            return Err(Error::invalid("kappa", "must be positive and finite"));
        }
        Self::checked(LossFamily::Exponential { kappa }, d_max)
    }

    pub fn linear(slope: T, d_max: T) -> Result<Self> {
        if !(slope > T::zero() && slope <= T::one()) {
            return Err(Error::invalid("slope", "must lie in (0, 1]"));
        }
        Self::checked(LossFamily::Linear { slope }, d_max)
    }

    /// Custom function, subject to the same shape validation as the built-in
    /// families.
    pub fn custom(name: impl Into<String>, f: impl Fn(T) -> T + Send + Sync + 'static, d_max: T) -> Result<Self> {
        Self::checked(
            LossFamily::Custom {
                name: name.into(),
                f: Arc::new(f),
            },
            d_max,
        )
    }

    /// Custom function with shape validation skipped. Only meant for probing
    /// what happens outside the convex/decreasing hypotheses; downstream
    /// checks report such models as not meeting their hypotheses.
    pub fn custom_unchecked(name: impl Into<String>, f: impl Fn(T) -> T + Send + Sync + 'static, d_max: T) -> Self {
        Self {
            family: LossFamily::Custom {
                name: name.into(),
                f: Arc::new(f),
            },
            d_max,
            validated: false,
        }
    }

    fn checked(family: LossFamily<T>, d_max: T) -> Result<Self> {
        if !(d_max > T::zero()) || !d_max.is_finite() {
            return Err(Error::invalid("d_max", "must be positive and finite"));
        }
        let model = Self {
            family,
            d_max,
            validated: false,
        };
        model.validate_shape()?;
        Ok(Self {
            validated: true,
            ..model
        })
    }

    fn raw(&self, d: T) -> T {
        match &self.family {
            LossFamily::Exponential { kappa } => (-*kappa * d).exp(),
            LossFamily::Linear { slope } => (T::one() - *slope * d).max(T::zero()),
            LossFamily::Custom { f, .. } => f(d),
        }
    }

    /// Sampled check that `f(0) = 1`, `f ∈ [0, 1]`, `f` nonincreasing and
    /// convex on `[0, d_max]`.
    fn validate_shape(&self) -> Result<()> {
        if self.raw(T::zero()) != T::one() {
            return Err(Error::invalid("family", "f(0) must equal 1"));
        }
        let step = self.d_max / lit(SHAPE_SAMPLES as f64 - 1.0);
        let vals: Vec<T> = (0..SHAPE_SAMPLES)
            .map(|i| {
                self.raw(if i + 1 == SHAPE_SAMPLES {
                    self.d_max
                } else {
                    step * lit(i as f64)
                })
            })
            .collect();
        if vals.iter().any(|v| !v.is_finite() || *v < T::zero() || *v > T::one()) {
            return Err(Error::invalid("family", "f must map into [0, 1]"));
        }
        let incr_tol: T = tol_floor(1e-12, 4.0);
        if vals.windows(2).any(|w| w[1] - w[0] > incr_tol) {
            return Err(Error::invalid("family", "f must be nonincreasing"));
        }
        let conv_tol: T = tol_floor(1e-10, 64.0);
        if vals.windows(3).any(|w| w[0] - w[1] - w[1] + w[2] < -conv_tol) {
            return Err(Error::invalid("family", "f must be convex"));
        }
        Ok(())
    }

    pub fn family(&self) -> &LossFamily<T> {
        &self.family
    }

    pub fn d_max(&self) -> T {
        self.d_max
    }

    /// Whether the shape hypotheses were checked at construction.
    pub fn is_validated(&self) -> bool {
        self.validated
    }

    /// Arrival probability at distance `d ∈ [0, d_max]`.
    pub fn eval(&self, d: T) -> Result<T> {
        if !(d >= T::zero() && d <= self.d_max) {
            return Err(Error::Domain {
                what: "distance",
                value: format!("{d}"),
                domain: format!("[0, {}]", self.d_max),
            });
        }
        Ok(self.raw(d))
    }
}

/// Sensor `y_j = C_j x + v_j`, `v_j ~ N(0, R_j)`, at a fixed position.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensor<T: Real> {
    c: DMatrix<T>,
    r: CovMatrix<T>,
    position: Point<T>,
}

impl<T: Real> Sensor<T> {
    pub fn new(c: DMatrix<T>, r: DMatrix<T>, position: Point<T>) -> Result<Self> {
        if c.nrows() == 0 || c.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("C", "must have at least one row and finite entries"));
        }
        if r.shape() != (c.nrows(), c.nrows()) {
            return Err(Error::invalid(
                "R",
                format!("must be {m}x{m} to match C", m = c.nrows()),
            ));
        }
        let r = CovMatrix::new(r).map_err(|e| e.at("R"))?;
        if !r.is_positive_definite(PsdTolerance::default()) {
            return Err(Error::invalid("R", "not positive definite"));
        }
        if !position.is_finite() {
            return Err(Error::invalid("position", "non-finite coordinate"));
        }
        Ok(Self { c, r, position })
    }

    /// Scalar measurement of a state of dimension `c.len()`.
    pub fn scalar(c: &[T], r: T, position: Point<T>) -> Result<Self> {
        Self::new(
            DMatrix::from_row_slice(1, c.len(), c),
            DMatrix::from_element(1, 1, r),
            position,
        )
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn r(&self) -> &CovMatrix<T> {
        &self.r
    }

    pub fn position(&self) -> Point<T> {
        self.position
    }

    /// Rows of `C`.
    pub fn measurement_dim(&self) -> usize {
        self.c.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Scenario<T: Real> {
    system: LinearSystem<T>,
    sensors: Vec<Sensor<T>>,
    loss_model: LossModel<T>,
    region: Region<T>,
}

impl<T: Real> Scenario<T> {
    pub fn new(
        system: LinearSystem<T>,
        sensors: Vec<Sensor<T>>,
        loss_model: LossModel<T>,
        region: Region<T>,
    ) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::invalid("sensors", "at least one sensor is required"));
        }
        let n = system.n();
        let mut farthest = T::zero();
        for (j, s) in sensors.iter().enumerate() {
            if s.c.ncols() != n {
                return Err(Error::invalid(
                    format!("sensors[{j}].C"),
                    format!("has {} columns, system has n = {n}", s.c.ncols()),
                ));
            }
            if !region.contains(&s.position) {
                return Err(Error::invalid(
                    format!("sensors[{j}].position"),
                    "outside the candidate region",
                ));
            }
            for corner in region.corners() {
                farthest = farthest.max(s.position.distance(&corner)?);
            }
        }
        // every location in the region must be within the model's range
        if farthest > loss_model.d_max * (T::one() + tol_floor::<T>(1e-12, 4.0)) {
            return Err(Error::invalid(
                "loss_model.d_max",
                format!(
                    "{} is smaller than the largest sensor-to-region distance {farthest}",
                    loss_model.d_max
                ),
            ));
        }
        Ok(Self {
            system,
            sensors,
            loss_model,
            region,
        })
    }

    pub fn system(&self) -> &LinearSystem<T> {
        &self.system
    }

    pub fn sensors(&self) -> &[Sensor<T>] {
        &self.sensors
    }

    pub fn loss_model(&self) -> &LossModel<T> {
        &self.loss_model
    }

    pub fn region(&self) -> &Region<T> {
        &self.region
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn with_loss_model(&self, loss_model: LossModel<T>) -> Result<Self> {
        Self::new(self.system.clone(), self.sensors.clone(), loss_model, self.region)
    }

    pub fn with_sensors(&self, sensors: Vec<Sensor<T>>) -> Result<Self> {
        Self::new(self.system.clone(), sensors, self.loss_model.clone(), self.region)
    }
}

/// Set of sensors whose packets arrived, as strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorSubset {
    indices: Vec<usize>,
}

impl SensorSubset {
    pub fn new(indices: Vec<usize>, n_sensors: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("subset", "indices must be strictly increasing"));
        }
        if indices.last().is_some_and(|&i| i >= n_sensors) {
            return Err(Error::invalid(
                "subset",
                format!("index out of range for {n_sensors} sensors"),
            ));
        }
        Ok(Self { indices })
    }

    pub fn empty() -> Self {
        Self { indices: Vec::new() }
    }

    pub fn full(n_sensors: usize) -> Self {
        Self {
            indices: (0..n_sensors).collect(),
        }
    }

    /// Bit `j` set ⇔ sensor `j` included.
    pub fn from_mask(mask: u64, n_sensors: usize) -> Self {
        Self {
            indices: (0..n_sensors).filter(|j| mask >> j & 1 == 1).collect(),
        }
    }

    pub fn mask(&self) -> u64 {
        self.indices.iter().fold(0, |m, &j| m | 1 << j)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
}

impl fmt::Display for SensorSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.indices.iter().join(","))
    }
}

/// All `2^n` subsets: empty set first, then by cardinality, lexicographic
/// within a cardinality.
pub fn enumerate_subsets(n_sensors: usize) -> Result<Vec<SensorSubset>> {
    if !(1..=MAX_ENUMERATED_SENSORS).contains(&n_sensors) {
        return Err(Error::Domain {
            what: "sensor count",
            value: n_sensors.to_string(),
            domain: format!("[1, {MAX_ENUMERATED_SENSORS}]"),
        });
    }
    Ok((0..=n_sensors)
        .flat_map(|k| (0..n_sensors).combinations(k))
        .map(|indices| SensorSubset { indices })
        .collect())
}

/// `F_ω = blkcol(C_j)`, `G_ω = blkdiag(R_j)` over `j ∈ ω` in ascending order.
pub fn stack_subset<T: Real>(sensors: &[Sensor<T>], subset: &SensorSubset) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if subset.is_empty() {
        return Err(Error::invalid(
            "subset",
            "empty subset has no measurement; use the prediction branch",
        ));
    }
    if subset.indices.last().is_some_and(|&i| i >= sensors.len()) {
        return Err(Error::invalid("subset", "index out of range"));
    }
    let f = blkcol(subset.indices.iter().map(|&j| &sensors[j].c))?;
    let g = blkdiag(subset.indices.iter().map(|&j| sensors[j].r.matrix()))?;
    Ok((f, g))
}

/// Arrival probabilities `λ_j = f(‖p_j − location‖)` in sensor order.
pub fn arrival_probs<T: Real>(scenario: &Scenario<T>, location: &Point<T>) -> Result<Vec<T>> {
    if !scenario.region.contains(location) {
        return Err(Error::Domain {
            what: "base location",
            value: location.to_string(),
            domain: format!("[{}, {}]", scenario.region.lo, scenario.region.hi),
        });
    }
    let model = &scenario.loss_model;
    scenario
        .sensors
        .iter()
        .map(|s| {
            // the scenario guarantees d_max covers the region; the cap only
            // absorbs rounding in the distance
            let d = s.position.distance(location)?.min(model.d_max);
            model.eval(d)
        })
        .collect()
}
