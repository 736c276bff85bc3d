//! Monte Carlo simulation of the lossy filter.
//!
//! Every trial draws from its own ChaCha8 stream: the key is derived from
//! `master_seed` (via `seed_from_u64`) and the 64-bit stream id is the trial
//! index. ChaCha is counter based, so a trial's draws depend only on
//! `(master_seed, trial_index)` and never on which thread ran it or in which
//! order. Aggregates are reduced in fixed chunks of trial indices and merged
//! in index order, which keeps results bit-identical across thread counts.
//!
//! Within one step the draw order is: one uniform per sensor for arrivals,
//! then measurement noise for every sensor (arrived or not), then process
//! noise. The initial state is drawn first.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expectation::expected_next_cov;
use crate::filter::{lossy_step, FilterState};
use crate::linalg::{psd_sqrt, CovMatrix};
use crate::model::{arrival_probs, Point, Scenario, SensorSubset};
use crate::scalar::{lit, Real};

/// Trials per reduction chunk. Fixed so that the floating-point summation
/// order never depends on the thread pool.
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T> {
    pub horizon: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub base_location: Point<T>,
}

impl<T: Real> SimConfig<T> {
    pub fn new(horizon: usize, trials: usize, master_seed: u64, base_location: Point<T>) -> Result<Self> {
        let cfg = Self {
            horizon,
            trials,
            master_seed,
            base_location,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        Ok(())
    }
}

/// One simulated trajectory. Entry `k` describes step `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord<T> {
    pub traces: Vec<T>,
    pub arrival_masks: Vec<u64>,
}

/// Random stream of trial `trial_index`.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial_index);
    rng
}

/// Includes sensor `i` independently with probability `lambda[i]`.
pub fn sample_arrivals<T: Real, R: Rng + ?Sized>(lambda: &[T], rng: &mut R) -> SensorSubset {
    let mut mask = 0u64;
    for (i, l) in lambda.iter().enumerate() {
        let u: f64 = rng.random();
        if u < l.to_f64().unwrap_or(0.0) {
            mask |= 1 << i;
        }
    }
    SensorSubset::from_mask(mask, lambda.len())
}

fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<T> {
    DVector::from_fn(len, |_, _| lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Simulates the true process, sensor measurements, packet arrivals and the
/// filter for `config.horizon` steps.
pub fn simulate_trial<T: Real>(
    scenario: &Scenario<T>,
    config: &SimConfig<T>,
    trial_index: u64,
) -> Result<TrajectoryRecord<T>> {
    config.validate()?;
    let lambda = arrival_probs(scenario, &config.base_location)?;
    let system = scenario.system();
    let sensors = scenario.sensors();
    let n = system.n();
    let q_root = psd_sqrt(system.q());
    let r_roots: Vec<DMatrix<T>> = sensors.iter().map(|s| psd_sqrt(s.r())).collect();

    let mut rng = trial_rng(config.master_seed, trial_index);
    let mut x = psd_sqrt(system.p0()) * standard_normal::<T, _>(&mut rng, n);
    let mut state = FilterState::initial(system);
    let mut traces = Vec::with_capacity(config.horizon);
    let mut masks = Vec::with_capacity(config.horizon);

    for _ in 0..config.horizon {
        let subset = sample_arrivals(&lambda, &mut rng);
        let ys: Vec<DVector<T>> = sensors
            .iter()
            .zip(&r_roots)
            .map(|(s, r)| s.c() * &x + r * standard_normal::<T, _>(&mut rng, s.measurement_dim()))
            .collect();
        let y_len = subset.indices().iter().map(|&j| ys[j].len()).sum();
        let mut y = DVector::zeros(y_len);
        let mut at = 0;
        for &j in subset.indices() {
            y.rows_mut(at, ys[j].len()).copy_from(&ys[j]);
            at += ys[j].len();
        }
        state = lossy_step(&state, scenario, &subset, &y)?.state;
        traces.push(state.p.trace());
        masks.push(subset.mask());
        x = system.a() * &x + &q_root * standard_normal::<T, _>(&mut rng, n);
    }
    Ok(TrajectoryRecord {
        traces,
        arrival_masks: masks,
    })
}

/// Monte Carlo estimate of the one-step expected covariance.
#[derive(Debug, Clone)]
pub struct EmpiricalStep<T: Real> {
    pub mean: CovMatrix<T>,
    /// Entrywise standard error of `mean`; zero when `trials = 1`.
    pub stderr: DMatrix<T>,
    /// How often each arrival mask was drawn.
    pub mask_counts: BTreeMap<u64, u64>,
    pub trials: usize,
}

/// Averages the one-step covariance from `p` over `trials` sampled arrival
/// subsets. The covariance update does not depend on the measurements, so
/// none are synthesized; each distinct subset is evaluated once.
pub fn empirical_one_step<T: Real>(
    p: &CovMatrix<T>,
    scenario: &Scenario<T>,
    lambda: &[T],
    trials: usize,
    seed: u64,
) -> Result<EmpiricalStep<T>> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let n_sensors = scenario.sensors().len();
    if lambda.len() != n_sensors {
        return Err(Error::dim(format!(
            "{} arrival probabilities for {n_sensors} sensors",
            lambda.len()
        )));
    }
    let masks: Vec<u64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| sample_arrivals(lambda, &mut trial_rng(seed, t)).mask())
        .collect();
    let mut mask_counts = BTreeMap::new();
    for m in masks {
        *mask_counts.entry(m).or_insert(0u64) += 1;
    }

    let state = FilterState::with_covariance(p.clone());
    let mut outcomes = Vec::with_capacity(mask_counts.len());
    for (&mask, &count) in &mask_counts {
        let subset = SensorSubset::from_mask(mask, n_sensors);
        let y_len = subset
            .indices()
            .iter()
            .map(|&j| scenario.sensors()[j].measurement_dim())
            .sum();
        let next = lossy_step(&state, scenario, &subset, &DVector::zeros(y_len))?;
        outcomes.push((next.state.p.into_inner(), lit::<T>(count as f64)));
    }

    let total = lit::<T>(trials as f64);
    let dim = p.dim();
    let mut mean = DMatrix::zeros(dim, dim);
    for (m, c) in &outcomes {
        mean += m * *c;
    }
    mean /= total;
    let mut stderr = DMatrix::zeros(dim, dim);
    if trials > 1 {
        let mut ss = DMatrix::<T>::zeros(dim, dim);
        for (m, c) in &outcomes {
            let d = m - &mean;
            ss += d.component_mul(&d) * *c;
        }
        stderr = ss.map(|v| (v / (total - T::one()) / total).sqrt());
    }
    Ok(EmpiricalStep {
        mean: CovMatrix::from_update(mean),
        stderr,
        mask_counts,
        trials,
    })
}

/// Per-step across-trial mean and standard error of `trace(P_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceCurve<T> {
    pub mean: Vec<T>,
    pub stderr: Vec<T>,
}

/// Running count, mean and sum of squared deviations per step.
#[derive(Clone)]
struct Moments<T> {
    count: T,
    mean: Vec<T>,
    m2: Vec<T>,
}

impl<T: Real> Moments<T> {
    fn empty(len: usize) -> Self {
        Self {
            count: T::zero(),
            mean: vec![T::zero(); len],
            m2: vec![T::zero(); len],
        }
    }

    fn push(&mut self, xs: &[T]) {
        self.count += T::one();
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(xs) {
            let delta = x - *m;
            *m += delta / self.count;
            *s += delta * (x - *m);
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        if other.count == T::zero() {
            return self;
        }
        let n = self.count + other.count;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * other.count / n;
            self.m2[i] += other.m2[i] + delta * delta * self.count * other.count / n;
        }
        self.count = n;
        self
    }
}

/// Runs `config.trials` independent trajectories and summarizes the trace
/// of the filter covariance at every step.
pub fn mean_trace_curve<T: Real>(scenario: &Scenario<T>, config: &SimConfig<T>) -> Result<TraceCurve<T>> {
    config.validate()?;
    let chunks = config.trials.div_ceil(CHUNK);
    let partial: Vec<Moments<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::empty(config.horizon);
            for t in c * CHUNK..((c + 1) * CHUNK).min(config.trials) {
                acc.push(&simulate_trial(scenario, config, t as u64)?.traces);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total = partial
        .iter()
        .fold(Moments::empty(config.horizon), |acc, m| acc.merge(m));
    let stderr = if config.trials > 1 {
        total
            .m2
            .iter()
            .map(|&s| (s / (total.count - T::one()) / total.count).sqrt())
            .collect()
    } else {
        vec![T::zero(); config.horizon]
    };
    Ok(TraceCurve {
        mean: total.mean,
        stderr,
    })
}

/// Traces of the deterministic recursion `P̄_{k+1} = E[P_{k+1} | P_k = P̄_k]`
/// started at `P0`.
///
/// This is not the marginal mean of `trace(P_k)`: the one-step map is
/// nonlinear in `P`, so iterating the conditional expectation differs from
/// the expectation of the iterates (Jensen gap). [`mean_trace_curve`] gives
/// the marginal.
pub fn surrogate_trace_recursion<T: Real>(
    scenario: &Scenario<T>,
    location: &Point<T>,
    horizon: usize,
) -> Result<Vec<T>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let lambda = arrival_probs(scenario, location)?;
    let mut p = scenario.system().p0().clone();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        p = expected_next_cov(&p, scenario, &lambda)?;
        out.push(p.trace());
    }
    Ok(out)
}
