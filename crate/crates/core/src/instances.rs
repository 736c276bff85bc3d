//! Random problem instances for property checks and verification sweeps.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::Result;
use crate::linalg::CovMatrix;
use crate::model::{LinearSystem, LossModel, Point, Region, Scenario, Sensor};
use crate::scalar::{lit, Real};

fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> T {
    lit(rng.random_range(lo..hi))
}

pub fn random_matrix<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| uniform(rng, -1.0, 1.0))
}

/// `B Bᵀ` for a uniform random `B`, so PSD and usually full rank.
pub fn random_psd<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> CovMatrix<T> {
    let b = random_matrix::<T, R>(rng, n, n);
    CovMatrix::from_update(&b * b.transpose())
}

/// Positive definite with smallest eigenvalue at least `floor`.
pub fn random_pd<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, floor: f64) -> CovMatrix<T> {
    let p = random_psd::<T, R>(rng, n);
    CovMatrix::from_update(p.into_inner() + DMatrix::identity(n, n) * lit::<T>(floor))
}

/// Random dynamics matrix rescaled to spectral radius in `[0.3, 1] · max_radius`.
pub fn random_stable<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, max_radius: f64) -> DMatrix<T> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let rho = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(1e-12);
    let target = max_radius * rng.random_range(0.3..1.0);
    (a * (target / rho)).map(lit::<T>)
}

pub fn random_system<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> LinearSystem<T> {
    let a = random_stable(rng, n, 0.95);
    let q = random_psd::<T, R>(rng, n).into_inner();
    let p0 = random_pd::<T, R>(rng, n, 0.1).into_inner();
    LinearSystem::new(a, q, p0).expect("random system is valid")
}

/// Exponential or linear loss model with a random parameter.
pub fn random_loss_model<T: Real, R: Rng + ?Sized>(rng: &mut R, d_max: f64) -> LossModel<T> {
    if rng.random_bool(0.5) {
        LossModel::exponential(uniform(rng, 0.2, 3.0), lit(d_max)).expect("valid kappa")
    } else {
        LossModel::linear(uniform(rng, 0.1, 1.0), lit(d_max)).expect("valid slope")
    }
}

/// Two sensors at 0 and 1 on the line, region `[0, 1]`.
pub fn two_sensor_scenario<T: Real>(
    system: LinearSystem<T>,
    c: DMatrix<T>,
    r1: DMatrix<T>,
    r2: DMatrix<T>,
    loss_model: LossModel<T>,
) -> Result<Scenario<T>> {
    let sensors = vec![
        Sensor::new(c.clone(), r1, Point::Line(T::zero()))?,
        Sensor::new(c, r2, Point::Line(T::one()))?,
    ];
    Scenario::new(system, sensors, loss_model, Region::interval(T::zero(), T::one())?)
}

/// Equal `C ∈ ℝ^{m×n}` and equal `R` at both sensors.
pub fn random_equal_noise_pair<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Scenario<T> {
    let system = random_system(rng, n);
    let c = random_matrix(rng, m, n);
    let r = random_pd::<T, R>(rng, m, 0.05).into_inner();
    let model = random_loss_model(rng, 1.0);
    two_sensor_scenario(system, c, r.clone(), r, model).expect("valid scenario")
}

/// Equal single-row `C`, `R1 > R2` (both scalars).
pub fn random_scalar_measurement_pair<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Scenario<T> {
    let system = random_system(rng, n);
    let c = random_matrix(rng, 1, n);
    let r2: f64 = rng.random_range(0.05..2.0);
    let r1 = r2 + rng.random_range(0.1..2.0);
    let model = random_loss_model(rng, 1.0);
    two_sensor_scenario(
        system,
        c,
        DMatrix::from_element(1, 1, lit(r1)),
        DMatrix::from_element(1, 1, lit(r2)),
        model,
    )
    .expect("valid scenario")
}
