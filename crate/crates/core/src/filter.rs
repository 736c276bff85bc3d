//! Kalman recursion with packet losses.
//!
//! ```text
//! K      = A P Fᵀ (F P Fᵀ + G)⁻¹
//! x̂'     = A x̂ + K (y − F x̂)
//! P'     = A P Aᵀ + Q − K F P Aᵀ
//! ```
//!
//! When no packet arrives the step degenerates to pure prediction. The
//! covariance update is kept in this (non-Joseph) form and re-symmetrized
//! after every step.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{sym_unchecked, CovMatrix};
use crate::model::{stack_subset, LinearSystem, Scenario, SensorSubset};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T: Real> {
    pub x_hat: DVector<T>,
    pub p: CovMatrix<T>,
    pub k: u64,
}

impl<T: Real> FilterState<T> {
    /// Zero-mean prior with covariance `P0`, at `k = 0`.
    pub fn initial(system: &LinearSystem<T>) -> Self {
        Self {
            x_hat: DVector::zeros(system.n()),
            p: system.p0().clone(),
            k: 0,
        }
    }

    pub fn with_covariance(p: CovMatrix<T>) -> Self {
        Self {
            x_hat: DVector::zeros(p.dim()),
            p,
            k: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T: Real> {
    pub state: FilterState<T>,
    /// Gain used for the update; `None` on the prediction branch.
    pub gain: Option<DMatrix<T>>,
}

/// Gain and covariance reduction of one measurement update.
#[derive(Debug, Clone)]
pub(crate) struct Correction<T: Real> {
    pub gain: DMatrix<T>,
    /// `K F P Aᵀ`, symmetrized.
    pub reduction: DMatrix<T>,
}

/// Computes `K = A P Fᵀ S⁻¹` and `K F P Aᵀ` with `S = F P Fᵀ + G`, inverting
/// `S` through its Cholesky factor.
pub(crate) fn correction<T: Real>(
    p: &DMatrix<T>,
    a: &DMatrix<T>,
    f: &DMatrix<T>,
    g: &DMatrix<T>,
) -> Result<Correction<T>> {
    let innovation = sym_unchecked(&(f * p * f.transpose() + g));
    let chol = Cholesky::new(innovation).ok_or(Error::SingularInnovation { subset: None })?;
    // F P Aᵀ, so that K = (S⁻¹ F P Aᵀ)ᵀ
    let fpa = f * p * a.transpose();
    let solved = chol.solve(&fpa);
    let gain = solved.transpose();
    let reduction = sym_unchecked(&(fpa.transpose() * &solved));
    Ok(Correction { gain, reduction })
}

fn check_state<T: Real>(state: &FilterState<T>, system: &LinearSystem<T>) -> Result<()> {
    let n = system.n();
    if state.p.dim() != n || state.x_hat.len() != n {
        return Err(Error::dim(format!(
            "filter state has dimension {} / {}, system has n = {n}",
            state.x_hat.len(),
            state.p.dim()
        )));
    }
    Ok(())
}

/// Time update only: `x̂' = A x̂`, `P' = A P Aᵀ + Q`.
pub fn predict<T: Real>(state: &FilterState<T>, system: &LinearSystem<T>) -> Result<StepResult<T>> {
    check_state(state, system)?;
    Ok(StepResult {
        state: FilterState {
            x_hat: system.a() * &state.x_hat,
            p: system.propagate(&state.p)?,
            k: state.k + 1,
        },
        gain: None,
    })
}

/// One Kalman step with stacked observation matrix `f` and noise `g`.
pub fn kf_step<T: Real>(
    state: &FilterState<T>,
    system: &LinearSystem<T>,
    f: &DMatrix<T>,
    g: &DMatrix<T>,
    y: &DVector<T>,
) -> Result<StepResult<T>> {
    check_state(state, system)?;
    let m = f.nrows();
    if f.ncols() != system.n() || g.shape() != (m, m) || y.len() != m {
        return Err(Error::dim(format!(
            "F is {}x{}, G is {}x{}, y has {} entries (n = {})",
            f.nrows(),
            f.ncols(),
            g.nrows(),
            g.ncols(),
            y.len(),
            system.n()
        )));
    }
    let a = system.a();
    let p = state.p.matrix();
    let Correction { gain, reduction } = correction(p, a, f, g)?;
    let x_hat = a * &state.x_hat + &gain * (y - f * &state.x_hat);
    let p_next = a * p * a.transpose() + system.q().matrix() - reduction;
    Ok(StepResult {
        state: FilterState {
            x_hat,
            p: CovMatrix::from_update(p_next),
            k: state.k + 1,
        },
        gain: Some(gain),
    })
}

/// Step driven by the received subset `subset`; `y` stacks the received
/// measurements in ascending sensor order and is ignored when nothing
/// arrived.
pub fn lossy_step<T: Real>(
    state: &FilterState<T>,
    scenario: &Scenario<T>,
    subset: &SensorSubset,
    y: &DVector<T>,
) -> Result<StepResult<T>> {
    if subset.is_empty() {
        return predict(state, scenario.system());
    }
    let (f, g) = stack_subset(scenario.sensors(), subset)?;
    if y.len() != f.nrows() {
        return Err(Error::dim(format!(
            "subset {subset} expects {} measurement entries, got {}",
            f.nrows(),
            y.len()
        )));
    }
    kf_step(state, scenario.system(), &f, &g, y).map_err(|e| match e {
        Error::SingularInnovation { .. } => Error::SingularInnovation {
            subset: Some(subset.indices().to_vec()),
        },
        other => other,
    })
}
