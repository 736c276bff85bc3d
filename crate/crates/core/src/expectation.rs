//! One-step expected error covariance under independent packet arrivals.
//!
//! For arrival probabilities `λ_1..λ_N` the received subset `ω` has
//! probability `α_ω = ∏_{j∈ω} λ_j ∏_{j∉ω} (1 − λ_j)` and
//!
//! ```text
//! E[P' | P] = A P Aᵀ + Q − Σ_{ω ≠ ∅} α_ω K_ω F_ω P Aᵀ
//! ```
//!
//! The empty subset contributes no correction; its probability mass is
//! carried by the prediction term.
//!
//! For two sensors with a common `C` this reduces to closed forms in the
//! joint correction `M0` and the single-sensor corrections `M1`, `M2`, see
//! [`TwoSensorTerms`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filter::correction;
use crate::linalg::{
    blkcol, blkdiag, definiteness, spectral_radius_sym, sym_unchecked, CovMatrix, Definiteness, PsdTolerance,
};
use crate::model::{LinearSystem, LossModel, Scenario, SensorSubset, MAX_ENUMERATED_SENSORS};
use crate::scalar::{lit, Real};

/// Default finite-difference step for second differences in location.
pub const DEFAULT_STEP: f64 = 1e-3;

fn check_probs<T: Real>(lambda: &[T]) -> Result<()> {
    match lambda.iter().position(|&l| !(l >= T::zero() && l <= T::one())) {
        Some(i) => Err(Error::Domain {
            what: "arrival probability",
            value: format!("λ[{i}] = {}", lambda[i]),
            domain: "[0, 1]".into(),
        }),
        None => Ok(()),
    }
}

/// Probability that exactly the sensors in `subset` report. Defined for the
/// empty subset too.
pub fn subset_weight<T: Real>(lambda: &[T], subset: &SensorSubset) -> Result<T> {
    check_probs(lambda)?;
    if subset.indices().last().is_some_and(|&i| i >= lambda.len()) {
        return Err(Error::invalid("subset", "index out of range"));
    }
    Ok(mask_weight(lambda, subset.mask()))
}

fn mask_weight<T: Real>(lambda: &[T], mask: u64) -> T {
    lambda.iter().enumerate().fold(T::one(), |acc, (j, &l)| {
        if mask >> j & 1 == 1 {
            acc * l
        } else {
            acc * (T::one() - l)
        }
    })
}

/// `E[P_{k+1} | P_k = P]` summed over the power set of received subsets.
pub fn expected_next_cov<T: Real>(p: &CovMatrix<T>, scenario: &Scenario<T>, lambda: &[T]) -> Result<CovMatrix<T>> {
    let sensors = scenario.sensors();
    let n_sensors = sensors.len();
    if lambda.len() != n_sensors {
        return Err(Error::dim(format!(
            "{} arrival probabilities for {n_sensors} sensors",
            lambda.len()
        )));
    }
    if n_sensors > MAX_ENUMERATED_SENSORS {
        return Err(Error::Domain {
            what: "sensor count",
            value: n_sensors.to_string(),
            domain: format!("[1, {MAX_ENUMERATED_SENSORS}]"),
        });
    }
    check_probs(lambda)?;
    let system = scenario.system();
    let mut out = system.propagate(p)?.into_inner();
    for mask in 1u64..(1u64 << n_sensors) {
        let alpha = mask_weight(lambda, mask);
        if alpha == T::zero() {
            continue;
        }
        let subset = SensorSubset::from_mask(mask, n_sensors);
        let f = blkcol(subset.indices().iter().map(|&j| sensors[j].c()))?;
        let g = blkdiag(subset.indices().iter().map(|&j| sensors[j].r().matrix()))?;
        let corr = correction(p.matrix(), system.a(), &f, &g).map_err(|_| Error::SingularInnovation {
            subset: Some(subset.indices().to_vec()),
        })?;
        out -= corr.reduction * alpha;
    }
    Ok(CovMatrix::from_update(out))
}

/// Which closed form a [`TwoSensorTerms`] was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoSensorForm {
    /// `C1 = C2 = C` (any row count), `R1 = R2 = R`; the joint correction is
    /// the single-sensor correction at noise `R/2`.
    EqualNoise,
    /// `C1 = C2 = C` with one row, `R1`, `R2` arbitrary; the joint
    /// correction inverts the 2×2 block innovation.
    ScalarMeasurement,
}

/// Prediction term and corrections for two sensors sharing `C`.
///
/// - `s  = A P Aᵀ + Q`
/// - `m0` joint correction (both packets received)
/// - `m1`, `m2` correction from sensor 1 / sensor 2 alone
/// - `t  = C P Cᵀ`
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSensorTerms<T: Real> {
    pub form: TwoSensorForm,
    pub t: DMatrix<T>,
    pub s: DMatrix<T>,
    pub m0: DMatrix<T>,
    pub m1: DMatrix<T>,
    pub m2: DMatrix<T>,
}

impl<T: Real> TwoSensorTerms<T> {
    /// Expected next covariance when sensor 1 reports with probability `f1`
    /// and sensor 2 with probability `f2`:
    ///
    /// `S − f1 f2 M0 − f1 (1 − f2) M1 − f2 (1 − f1) M2`.
    pub fn expected_cov(&self, f1: T, f2: T) -> Result<CovMatrix<T>> {
        check_probs(&[f1, f2])?;
        let one = T::one();
        let both = f1 * f2;
        let only1 = f1 * (one - f2);
        let only2 = f2 * (one - f1);
        Ok(CovMatrix::from_update(
            &self.s - &self.m0 * both - &self.m1 * only1 - &self.m2 * only2,
        ))
    }
}

fn check_two_sensor_dims<T: Real>(p: &CovMatrix<T>, system: &LinearSystem<T>, c: &DMatrix<T>) -> Result<()> {
    let n = system.n();
    if p.dim() != n || c.ncols() != n || c.nrows() == 0 {
        return Err(Error::dim(format!(
            "P is {}x{}, C is {}x{}, system n = {n}",
            p.dim(),
            p.dim(),
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(())
}

/// Relative entrywise equality used to decide whether two noise covariances
/// are the same.
pub fn noise_equal<T: Real>(r1: &DMatrix<T>, r2: &DMatrix<T>) -> bool {
    r1.shape() == r2.shape() && (r1 - r2).amax() <= lit::<T>(1e-12) * (T::one() + r1.amax().max(r2.amax()))
}

/// Closed-form terms for two sensors sharing `C`.
///
/// Single-row `C` uses the stacked 2×2 innovation for `M0`. Multi-row `C`
/// requires `R1 = R2` and uses the `R/2` identity instead.
pub fn two_sensor_terms<T: Real>(
    p: &CovMatrix<T>,
    system: &LinearSystem<T>,
    c: &DMatrix<T>,
    r1: &CovMatrix<T>,
    r2: &CovMatrix<T>,
) -> Result<TwoSensorTerms<T>> {
    check_two_sensor_dims(p, system, c)?;
    let m = c.nrows();
    if r1.dim() != m || r2.dim() != m {
        return Err(Error::dim(format!("noise blocks must be {m}x{m}")));
    }
    if m > 1 {
        if !noise_equal(r1.matrix(), r2.matrix()) {
            return Err(Error::invalid(
                "R2",
                "distinct noise covariances require a single-row observation matrix",
            ));
        }
        return two_sensor_terms_equal_noise(p, system, c, r1);
    }
    let a = system.a();
    let pm = p.matrix();
    let stacked_c = blkcol([c, c])?;
    let stacked_r = blkdiag([r1.matrix(), r2.matrix()])?;
    Ok(TwoSensorTerms {
        form: TwoSensorForm::ScalarMeasurement,
        t: c * pm * c.transpose(),
        s: system.propagate(p)?.into_inner(),
        m0: correction(pm, a, &stacked_c, &stacked_r)?.reduction,
        m1: correction(pm, a, c, r1.matrix())?.reduction,
        m2: correction(pm, a, c, r2.matrix())?.reduction,
    })
}

/// Equal-noise terms: `M1 = M2` is the correction at noise `R`, `M0` the
/// correction at `R/2`.
pub fn two_sensor_terms_equal_noise<T: Real>(
    p: &CovMatrix<T>,
    system: &LinearSystem<T>,
    c: &DMatrix<T>,
    r: &CovMatrix<T>,
) -> Result<TwoSensorTerms<T>> {
    check_two_sensor_dims(p, system, c)?;
    if r.dim() != c.nrows() {
        return Err(Error::dim("noise block does not match C"));
    }
    let a = system.a();
    let pm = p.matrix();
    let single = correction(pm, a, c, r.matrix())?.reduction;
    let halved = r.matrix() * lit::<T>(0.5);
    Ok(TwoSensorTerms {
        form: TwoSensorForm::EqualNoise,
        t: c * pm * c.transpose(),
        s: system.propagate(p)?.into_inner(),
        m0: correction(pm, a, c, &halved)?.reduction,
        m1: single.clone(),
        m2: single,
    })
}

/// `M0 − M1 − M2` with its sign classification.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaGap<T: Real> {
    pub gap: DMatrix<T>,
    pub verdict: Definiteness,
    pub min_eig: T,
    pub max_eig: T,
}

/// Classifies `M0 − M1 − M2`. Eigenvalues within the default PSD tolerance,
/// relative to `‖M0‖`, count as zero.
pub fn lemma_gap<T: Real>(terms: &TwoSensorTerms<T>) -> Result<LemmaGap<T>> {
    let gap = sym_unchecked(&(&terms.m0 - &terms.m1 - &terms.m2));
    let scale = spectral_radius_sym(&terms.m0)?;
    let verdict = definiteness(&gap, PsdTolerance::default(), scale)?;
    let ev = crate::linalg::symmetric_eigenvalues(&gap)?;
    Ok(LemmaGap {
        min_eig: ev.first().copied().unwrap_or_else(T::zero),
        max_eig: ev.last().copied().unwrap_or_else(T::zero),
        gap,
        verdict,
    })
}

/// Expected next covariance with the base station at `d ∈ [0, 1]` between
/// sensor 1 at 0 and sensor 2 at 1, so that the arrival probabilities are
/// `f(d)` and `f(1 − d)`.
pub fn two_sensor_expected_cov<T: Real>(
    p: &CovMatrix<T>,
    system: &LinearSystem<T>,
    c: &DMatrix<T>,
    r1: &CovMatrix<T>,
    r2: &CovMatrix<T>,
    d: T,
    model: &LossModel<T>,
) -> Result<CovMatrix<T>> {
    if !(d >= T::zero() && d <= T::one()) {
        return Err(Error::Domain {
            what: "location",
            value: format!("{d}"),
            domain: "[0, 1]".into(),
        });
    }
    let terms = two_sensor_terms(p, system, c, r1, r2)?;
    terms.expected_cov(model.eval(d)?, model.eval(T::one() - d)?)
}

/// Central second difference `(J(d+h) − 2 J(d) + J(d−h)) / h²`, symmetrized.
/// `domain` is the closed interval on which `J` may be evaluated.
pub fn concavity_second_difference<T, F>(j: F, d: T, h: T, domain: (T, T)) -> Result<DMatrix<T>>
where
    T: Real,
    F: Fn(T) -> Result<DMatrix<T>>,
{
    if !(h > T::zero()) {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let (lo, hi) = domain;
    if d - h < lo || d + h > hi {
        return Err(Error::Domain {
            what: "stencil",
            value: format!("[{}, {}]", d - h, d + h),
            domain: format!("[{lo}, {hi}]"),
        });
    }
    let mid = j(d)?;
    let second = (j(d + h)? - &mid * lit::<T>(2.0) + j(d - h)?) / (h * h);
    Ok(sym_unchecked(&second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{kf_step, FilterState};
    use crate::instances::{random_equal_noise_pair, random_scalar_measurement_pair, two_sensor_scenario};
    use crate::model::{enumerate_subsets, Point, Region, Sensor};
    use nalgebra::{dmatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_one_sensor() -> Scenario<f64> {
        let sys = LinearSystem::scalar(1.0, 1.0, 1.0).unwrap();
        Scenario::new(
            sys,
            vec![Sensor::scalar(&[1.0], 1.0, Point::Line(0.0)).unwrap()],
            LossModel::linear(1.0, 1.0).unwrap(),
            Region::interval(0.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    fn unit_terms(r2: f64) -> TwoSensorTerms<f64> {
        let sys = LinearSystem::scalar(1.0, 0.0, 1.0).unwrap();
        two_sensor_terms(
            &CovMatrix::identity(1),
            &sys,
            &dmatrix![1.0],
            &CovMatrix::new(dmatrix![1.0]).unwrap(),
            &CovMatrix::new(dmatrix![r2]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn subset_weight_examples() {
        let ones = [1.0, 1.0];
        for s in enumerate_subsets(2).unwrap() {
            let w = subset_weight(&ones, &s).unwrap();
            assert_eq!(w, if s.len() == 2 { 1.0 } else { 0.0 });
            assert_eq!(subset_weight(&[0.5, 0.5], &s).unwrap(), 0.25);
        }
        let e = (-1.0f64).exp();
        let w = subset_weight(&[1.0, e], &SensorSubset::new(vec![0], 2).unwrap()).unwrap();
        assert!((w - 0.632120558829).abs() < 1e-12);
        assert!(subset_weight(&[1.2], &SensorSubset::empty()).is_err());
    }

    #[test]
    fn subset_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=8 {
            let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
            let total: f64 = enumerate_subsets(n)
                .unwrap()
                .iter()
                .map(|s| subset_weight(&lambda, s).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_next_cov_examples() {
        let sc = scalar_one_sensor();
        let p = CovMatrix::identity(1);
        let none = expected_next_cov(&p, &sc, &[0.0]).unwrap();
        assert_eq!(none.matrix()[(0, 0)], 2.0);
        let all = expected_next_cov(&p, &sc, &[1.0]).unwrap();
        assert!((all.matrix()[(0, 0)] - 1.5).abs() < 1e-15);
        let half = expected_next_cov(&p, &sc, &[0.5]).unwrap();
        assert!((half.matrix()[(0, 0)] - 1.75).abs() < 1e-15);
        assert!(expected_next_cov(&p, &sc, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn certain_arrivals_match_full_kf_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sc: Scenario<f64> = random_equal_noise_pair(&mut rng, 3, 2);
        let p = sc.system().p0().clone();
        let expected = expected_next_cov(&p, &sc, &[1.0, 1.0]).unwrap();
        let (f, g) = crate::model::stack_subset(sc.sensors(), &SensorSubset::full(2)).unwrap();
        let step = kf_step(
            &FilterState::with_covariance(p),
            sc.system(),
            &f,
            &g,
            &DVector::zeros(4),
        )
        .unwrap();
        assert!((expected.matrix() - step.state.p.matrix()).amax() < 1e-12);
    }

    #[test]
    fn two_sensor_terms_hand_values() {
        let t = unit_terms(1.0);
        assert_eq!(t.form, TwoSensorForm::ScalarMeasurement);
        assert!((t.t[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((t.m1[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((t.m2[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((t.m0[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);

        let big = unit_terms(1e9);
        assert!((big.m0[(0, 0)] - big.m1[(0, 0)]).abs() <= 1e-6 * big.m1[(0, 0)]);
    }

    #[test]
    fn uninformative_sensor_gives_zero_terms() {
        let sys = LinearSystem::new(
            dmatrix![0.9, 0.1; 0.0, 0.5],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let r = CovMatrix::new(dmatrix![1.0]).unwrap();
        let t = two_sensor_terms(sys.p0(), &sys, &dmatrix![0.0, 0.0], &r, &r.scaled(3.0)).unwrap();
        assert_eq!(t.m0.amax(), 0.0);
        assert_eq!(t.m1.amax(), 0.0);
        assert_eq!(t.m2.amax(), 0.0);
        let g = lemma_gap(&t).unwrap();
        assert_eq!(g.verdict, Definiteness::Zero);
    }

    #[test]
    fn lemma_gap_hand_value() {
        let g = lemma_gap(&unit_terms(1.0)).unwrap();
        assert!((g.gap[(0, 0)] + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(g.verdict, Definiteness::Nsd);
    }

    #[test]
    fn lemma_gap_direction_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tol = PsdTolerance::default();
        for _ in 0..500 {
            let n = rng.random_range(1..=4);
            let sc: Scenario<f64> = random_scalar_measurement_pair(&mut rng, n);
            let p = crate::instances::random_psd(&mut rng, sc.system().n());
            let s = sc.sensors();
            let t = two_sensor_terms(&p, sc.system(), s[0].c(), s[0].r(), s[1].r()).unwrap();
            let g = lemma_gap(&t).unwrap();
            assert!(matches!(g.verdict, Definiteness::Nsd | Definiteness::Zero), "{:?}", g);
            let m0 = CovMatrix::from_update(t.m0.clone());
            let m1 = CovMatrix::from_update(t.m1.clone());
            let m2 = CovMatrix::from_update(t.m2.clone());
            assert!(crate::linalg::loewner_leq(&m1, &m0, tol).unwrap());
            assert!(crate::linalg::loewner_leq(&m2, &m0, tol).unwrap());
        }
    }

    #[test]
    fn two_sensor_closed_form_matches_power_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for k in 0..20 {
            let sc: Scenario<f64> = if k % 2 == 0 {
                random_equal_noise_pair(&mut rng, 3, 2)
            } else {
                random_scalar_measurement_pair(&mut rng, 3)
            };
            let p = crate::instances::random_psd(&mut rng, 3);
            let s = sc.sensors();
            let model = sc.loss_model();
            for d in [0.0, 0.3, 0.77, 1.0] {
                let closed = two_sensor_expected_cov(&p, sc.system(), s[0].c(), s[0].r(), s[1].r(), d, model).unwrap();
                let lambda = [model.eval(d).unwrap(), model.eval(1.0 - d).unwrap()];
                let oracle = expected_next_cov(&p, &sc, &lambda).unwrap();
                let err = (closed.matrix() - oracle.matrix()).amax();
                assert!(err <= 1e-10 * oracle.matrix().amax(), "{err}");
            }
        }
    }

    #[test]
    fn endpoint_probabilities_and_certain_double_arrival() {
        let sys = LinearSystem::scalar(0.8, 0.5, 1.0).unwrap();
        let r = CovMatrix::new(dmatrix![0.7]).unwrap();
        let terms = two_sensor_terms_equal_noise(sys.p0(), &sys, &dmatrix![1.0], &r).unwrap();
        // f ≡ 1 on both links
        let both = terms.expected_cov(1.0, 1.0).unwrap();
        assert!((both.matrix() - (&terms.s - &terms.m0)).amax() < 1e-15);
        // d = 0 with f = e^{-d}: (both, one-only, none) = (e^-1, 1 - e^-1, 0)
        let e = (-1.0f64).exp();
        let at0 = terms.expected_cov(1.0, e).unwrap();
        let by_table = &terms.s - &terms.m0 * e - &terms.m1 * (1.0 - e);
        assert!((at0.matrix() - by_table).amax() < 1e-15);
    }

    #[test]
    fn distinct_noise_requires_scalar_measurement() {
        let sys = LinearSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let r1 = CovMatrix::identity(2);
        let err = two_sensor_terms(sys.p0(), &sys, &DMatrix::identity(2, 2), &r1, &r1.scaled(2.0)).unwrap_err();
        assert!(matches!(err, Error::Invalid { .. }));
        let ok = two_sensor_terms(sys.p0(), &sys, &DMatrix::identity(2, 2), &r1, &r1).unwrap();
        assert_eq!(ok.form, TwoSensorForm::EqualNoise);
    }

    #[test]
    fn second_difference_examples() {
        let affine = |d: f64| Ok(DMatrix::identity(2, 2) * (3.0 * d + 1.0));
        let dd = concavity_second_difference(affine, 0.5, 0.01, (0.0, 1.0)).unwrap();
        assert!(dd.amax() < 1e-8);
        let quad = |d: f64| Ok(DMatrix::identity(2, 2) * (d * d));
        let dd = concavity_second_difference(quad, 0.5, 0.01, (0.0, 1.0)).unwrap();
        assert!((dd - DMatrix::identity(2, 2) * 2.0).amax() < 1e-8);
        assert!(concavity_second_difference(quad, 0.005, 0.01, (0.0, 1.0)).is_err());
        assert!(concavity_second_difference(quad, 0.5, 0.0, (0.0, 1.0)).is_err());
    }

    #[test]
    fn equal_noise_second_difference_is_nsd() {
        let sys = LinearSystem::new(
            dmatrix![0.9, 0.3; -0.1, 0.7],
            dmatrix![0.4, 0.1; 0.1, 0.3],
            dmatrix![1.0, 0.0; 0.0, 1.0],
        )
        .unwrap();
        let model = LossModel::exponential(1.0, 1.0).unwrap();
        let sc = two_sensor_scenario(sys, dmatrix![1.0, 0.5], dmatrix![0.6], dmatrix![0.6], model).unwrap();
        let s = sc.sensors();
        let p = sc.system().p0().clone();
        let j = |d: f64| {
            two_sensor_expected_cov(&p, sc.system(), s[0].c(), s[0].r(), s[1].r(), d, sc.loss_model())
                .map(|c| c.into_inner())
        };
        let h = DEFAULT_STEP;
        for i in 1..100 {
            let d = i as f64 / 100.0;
            let dd = concavity_second_difference(j, d, h, (0.0, 1.0)).unwrap();
            let scale = j(d).unwrap().amax();
            let v = definiteness(&dd, PsdTolerance::new(1e-7).unwrap(), scale).unwrap();
            assert!(matches!(v, Definiteness::Nsd | Definiteness::Zero), "d = {d}: {v:?}");
        }
    }
}
