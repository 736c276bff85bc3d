//! Small dense symmetric-matrix utilities.
//!
//! Positive semidefiniteness is decided from the symmetric eigendecomposition
//! so that callers get a quantitative margin (the smallest eigenvalue) and not
//! only a verdict. The acceptance threshold is relative:
//!
//! ```text
//! λ_min(sym(M)) ≥ −rel_tol · (1 + max |λ|)
//! ```

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// Relative tolerance used by the PSD and Loewner predicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdTolerance<T> {
    rel_tol: T,
}

impl<T: Real> PsdTolerance<T> {
    pub fn new(rel_tol: T) -> Result<Self> {
        if !(rel_tol > T::zero()) || !rel_tol.is_finite() {
            return Err(Error::invalid("rel_tol", "must be positive and finite"));
        }
        Ok(Self { rel_tol })
    }

    pub fn rel_tol(&self) -> T {
        self.rel_tol
    }

    /// Absolute threshold for a spectrum whose largest magnitude is `scale`.
    pub fn threshold(&self, scale: T) -> T {
        self.rel_tol * (T::one() + scale)
    }
}

impl<T: Real> Default for PsdTolerance<T> {
    fn default() -> Self {
        Self {
            rel_tol: lit(DEFAULT_REL_TOL),
        }
    }
}

fn ensure_square<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn ensure_finite<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(what, "contains a non-finite entry"))
    }
}

/// Returns `(M + Mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    ensure_square(m, "matrix")?;
    Ok(sym_unchecked(m))
}

#[inline]
pub(crate) fn sym_unchecked<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues<T: Real>(m: &DMatrix<T>) -> Result<Vec<T>> {
    ensure_square(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    let mut ev: Vec<T> = sym_unchecked(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(ev)
}

/// Spectrum summary of a symmetric matrix under a tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdMargin<T> {
    pub min_eig: T,
    pub max_eig: T,
    /// Admissible negative excursion, `rel_tol · (1 + max |λ|)`.
    pub threshold: T,
}

impl<T: Real> PsdMargin<T> {
    pub fn is_psd(&self) -> bool {
        self.min_eig >= -self.threshold
    }

    pub fn is_pd(&self) -> bool {
        self.min_eig > self.threshold
    }

    pub fn max_abs_eig(&self) -> T {
        self.min_eig.abs().max(self.max_eig.abs())
    }
}

pub fn psd_margin<T: Real>(m: &DMatrix<T>, tol: PsdTolerance<T>) -> Result<PsdMargin<T>> {
    let ev = symmetric_eigenvalues(m)?;
    let (min_eig, max_eig) = match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (T::zero(), T::zero()),
    };
    let scale = min_eig.abs().max(max_eig.abs());
    Ok(PsdMargin {
        min_eig,
        max_eig,
        threshold: tol.threshold(scale),
    })
}

pub fn is_psd<T: Real>(m: &DMatrix<T>, tol: PsdTolerance<T>) -> Result<bool> {
    Ok(psd_margin(m, tol)?.is_psd())
}

/// Sign classification of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    Zero,
    Psd,
    Nsd,
    Indefinite,
}

/// Classifies `m` by eigenvalue signs. Eigenvalues with magnitude at most
/// `tol.threshold(scale)` count as zero; `scale` is the magnitude the
/// comparison is relative to (for example the norm of the terms that
/// produced `m`).
pub fn definiteness<T: Real>(m: &DMatrix<T>, tol: PsdTolerance<T>, scale: T) -> Result<Definiteness> {
    let ev = symmetric_eigenvalues(m)?;
    let thr = tol.threshold(scale);
    let pos = ev.iter().any(|&e| e > thr);
    let neg = ev.iter().any(|&e| e < -thr);
    Ok(match (pos, neg) {
        (false, false) => Definiteness::Zero,
        (true, false) => Definiteness::Psd,
        (false, true) => Definiteness::Nsd,
        (true, true) => Definiteness::Indefinite,
    })
}

/// Symmetric positive-semidefinite matrix.
///
/// Construction symmetrizes the input; the checked constructors additionally
/// reject matrices that are not PSD under the given tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix<T: Real> {
    data: DMatrix<T>,
}

impl<T: Real> CovMatrix<T> {
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        Self::with_tolerance(m, PsdTolerance::default())
    }

    pub fn with_tolerance(m: DMatrix<T>, tol: PsdTolerance<T>) -> Result<Self> {
        ensure_square(&m, "covariance")?;
        ensure_finite(&m, "")?;
        let data = sym_unchecked(&m);
        let margin = psd_margin(&data, tol)?;
        if !margin.is_psd() {
            return Err(Error::invalid(
                "",
                format!("not positive semidefinite (min eigenvalue {:?})", margin.min_eig),
            ));
        }
        Ok(Self { data })
    }

    /// Wraps the output of a covariance update, symmetrizing it without a
    /// PSD check. The caller is responsible for monitoring the eigenvalue
    /// margin, see [`CovMatrix::min_eigenvalue`].
    pub fn from_update(m: DMatrix<T>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Self {
            data: sym_unchecked(&m),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        Self {
            data: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.data
    }

    pub fn trace(&self) -> T {
        self.data.trace()
    }

    pub fn min_eigenvalue(&self) -> T {
        psd_margin(&self.data, PsdTolerance::default())
            .map(|m| m.min_eig)
            .unwrap_or_else(|_| lit(f64::NAN))
    }

    pub fn margin(&self, tol: PsdTolerance<T>) -> PsdMargin<T> {
        psd_margin(&self.data, tol).expect("square finite matrix")
    }

    /// Strict positive definiteness under `tol`.
    pub fn is_positive_definite(&self, tol: PsdTolerance<T>) -> bool {
        psd_margin(&self.data, tol).map(|m| m.is_pd()).unwrap_or(false)
    }

    /// Scales every entry by `s`; `s` must be nonnegative to stay PSD.
    pub fn scaled(&self, s: T) -> Self {
        assert!(s >= T::zero(), "negative scale breaks positive semidefiniteness");
        Self { data: &self.data * s }
    }

    pub fn cast<U: Real>(&self) -> CovMatrix<U> {
        CovMatrix {
            data: self.data.map(|x| lit::<U>(x.to_f64().expect("finite"))),
        }
    }
}

impl<T: Real> AsRef<DMatrix<T>> for CovMatrix<T> {
    fn as_ref(&self) -> &DMatrix<T> {
        &self.data
    }
}

/// `X ⪯ Y` in the Loewner order, i.e. `Y − X` is PSD within tolerance.
pub fn loewner_leq<T: Real>(x: &CovMatrix<T>, y: &CovMatrix<T>, tol: PsdTolerance<T>) -> Result<bool> {
    if x.dim() != y.dim() {
        return Err(Error::dim(format!(
            "Loewner comparison of {}x{} and {}x{}",
            x.dim(),
            x.dim(),
            y.dim(),
            y.dim()
        )));
    }
    is_psd(&(y.matrix() - x.matrix()), tol)
}

/// Vertical stack of blocks sharing a column count.
pub fn blkcol<'a, T: Real>(blocks: impl IntoIterator<Item = &'a DMatrix<T>>) -> Result<DMatrix<T>> {
    let blocks: Vec<&DMatrix<T>> = blocks.into_iter().collect();
    let first = blocks
        .first()
        .ok_or_else(|| Error::dim("blkcol of an empty block list"))?;
    let ncols = first.ncols();
    if let Some(bad) = blocks.iter().find(|b| b.ncols() != ncols) {
        return Err(Error::dim(format!(
            "blkcol blocks need {ncols} columns, found one with {}",
            bad.ncols()
        )));
    }
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut row = 0;
    for b in blocks {
        out.view_mut((row, 0), (b.nrows(), ncols)).copy_from(b);
        row += b.nrows();
    }
    Ok(out)
}

/// Block-diagonal assembly of square blocks.
pub fn blkdiag<'a, T: Real>(blocks: impl IntoIterator<Item = &'a DMatrix<T>>) -> Result<DMatrix<T>> {
    let blocks: Vec<&DMatrix<T>> = blocks.into_iter().collect();
    if blocks.is_empty() {
        return Err(Error::dim("blkdiag of an empty block list"));
    }
    for b in &blocks {
        ensure_square(b, "blkdiag block")?;
    }
    let n = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        let m = b.nrows();
        out.view_mut((at, at), (m, m)).copy_from(b);
        at += m;
    }
    Ok(out)
}

/// Factor `L` with `L Lᵀ = M` for a PSD `M`, from the symmetric
/// eigendecomposition. Works for singular `M`; slightly negative eigenvalues
/// from rounding are clamped to zero.
pub fn psd_sqrt<T: Real>(m: &CovMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(m.matrix().clone());
    let roots = eig.eigenvalues.map(|e| e.max(T::zero()).sqrt());
    eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Largest eigenvalue magnitude of the symmetric part.
pub fn spectral_radius_sym<T: Real>(m: &DMatrix<T>) -> Result<T> {
    let ev = symmetric_eigenvalues(m)?;
    Ok(ev.iter().fold(T::zero(), |acc, e| acc.max(e.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn tol() -> PsdTolerance<f64> {
        PsdTolerance::default()
    }

    #[test]
    fn symmetrize_examples() {
        assert_eq!(
            symmetrize(&dmatrix![1.0, 2.0; 0.0, 1.0]).unwrap(),
            dmatrix![1.0, 1.0; 1.0, 1.0]
        );
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(symmetrize(&eye).unwrap(), eye);
        assert_eq!(
            symmetrize(&dmatrix![0.0, -3.0; 3.0, 0.0]).unwrap(),
            DMatrix::zeros(2, 2)
        );
        assert!(matches!(
            symmetrize(&DMatrix::<f64>::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn is_psd_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!(is_psd(&eye, tol()).unwrap());
        assert!(!is_psd(&(-eye), tol()).unwrap());
        // eigenvalues 0 and 2
        assert!(is_psd(&dmatrix![1.0, 1.0; 1.0, 1.0], tol()).unwrap());
        assert!(is_psd(&DMatrix::<f64>::zeros(2, 3), tol()).is_err());
        assert!(matches!(
            is_psd(&dmatrix![f64::NAN, 0.0; 0.0, 1.0], tol()),
            Err(Error::Invalid { .. })
        ));
    }

    #[test]
    fn loewner_examples() {
        let i = CovMatrix::<f64>::identity(2);
        let two_i = i.scaled(2.0);
        assert!(loewner_leq(&i, &two_i, tol()).unwrap());
        assert!(!loewner_leq(&two_i, &i, tol()).unwrap());
        let a = CovMatrix::from_diagonal(&[1.0, 3.0]);
        let b = CovMatrix::from_diagonal(&[2.0, 2.0]);
        assert!(!loewner_leq(&a, &b, tol()).unwrap());
        assert!(!loewner_leq(&b, &a, tol()).unwrap());
        assert!(loewner_leq(&a, &CovMatrix::identity(3), tol()).is_err());
    }

    #[test]
    fn blkcol_examples() {
        let c = dmatrix![1.0, 2.0];
        assert_eq!(blkcol([&c]).unwrap(), c);
        let e0 = dmatrix![1.0, 0.0];
        let e1 = dmatrix![0.0, 1.0];
        assert_eq!(blkcol([&e0, &e1]).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(blkcol([&c, &c]).unwrap(), dmatrix![1.0, 2.0; 1.0, 2.0]);
        assert!(blkcol(std::iter::empty::<&DMatrix<f64>>()).is_err());
        assert!(blkcol([&c, &dmatrix![1.0]]).is_err());
    }

    #[test]
    fn blkdiag_examples() {
        let r = dmatrix![2.0, 0.5; 0.5, 1.0];
        assert_eq!(blkdiag([&r]).unwrap(), r);
        let one = dmatrix![1.0];
        assert_eq!(blkdiag([&one, &one]).unwrap(), DMatrix::identity(2, 2));
        let three = dmatrix![3.0, 0.0; 0.0, 3.0];
        assert_eq!(
            blkdiag([&dmatrix![2.0], &three]).unwrap(),
            DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0, 3.0])
        );
        assert!(blkdiag([&dmatrix![1.0, 2.0]]).is_err());
        assert!(blkdiag(std::iter::empty::<&DMatrix<f64>>()).is_err());
    }

    #[test]
    fn cov_matrix_rejects_negative_eigenvalue() {
        let err = CovMatrix::new(dmatrix![1.0, 0.0; 0.0, -0.1]).unwrap_err();
        assert!(matches!(err, Error::Invalid { .. }));
        assert!(CovMatrix::new(dmatrix![1.0, 0.0; 0.0, 0.0]).is_ok());
    }

    #[test]
    fn definiteness_classes() {
        let t = tol();
        assert_eq!(
            definiteness(&DMatrix::<f64>::zeros(2, 2), t, 1.0).unwrap(),
            Definiteness::Zero
        );
        assert_eq!(
            definiteness(&dmatrix![1.0, 1.0; 1.0, 1.0], t, 1.0).unwrap(),
            Definiteness::Psd
        );
        assert_eq!(
            definiteness(&dmatrix![-1.0, 0.0; 0.0, 0.0], t, 1.0).unwrap(),
            Definiteness::Nsd
        );
        assert_eq!(
            definiteness(&dmatrix![1.0, 0.0; 0.0, -1.0], t, 1.0).unwrap(),
            Definiteness::Indefinite
        );
    }

    #[test]
    fn psd_sqrt_reconstructs_singular_matrix() {
        let m = CovMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap();
        let l = psd_sqrt(&m);
        let back = &l * l.transpose();
        assert!((back - m.matrix()).amax() < 1e-12);
    }

    #[test]
    fn f32_instantiation() {
        let a = CovMatrix::<f32>::identity(2);
        let b = a.scaled(3.0);
        assert!(loewner_leq(&a, &b, PsdTolerance::default()).unwrap());
    }

    fn sym4() -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-2.0..2.0f64, 16).prop_map(|v| {
            let m = DMatrix::from_vec(4, 4, v);
            &m + m.transpose()
        })
    }

    fn psd3() -> impl Strategy<Value = CovMatrix<f64>> {
        prop::collection::vec(-1.5..1.5f64, 9).prop_map(|v| {
            let b = DMatrix::from_vec(3, 3, v);
            CovMatrix::new(&b * b.transpose()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn psd_invariant_under_symmetrization(v in prop::collection::vec(-2.0..2.0f64, 9)) {
            let m = DMatrix::from_vec(3, 3, v);
            prop_assert_eq!(is_psd(&m, tol()).unwrap(), is_psd(&symmetrize(&m).unwrap(), tol()).unwrap());
        }

        #[test]
        fn loewner_reflexive_and_transitive(x in psd3(), d1 in psd3(), d2 in psd3()) {
            let y = CovMatrix::new(x.matrix() + d1.matrix()).unwrap();
            let z = CovMatrix::new(y.matrix() + d2.matrix()).unwrap();
            prop_assert!(loewner_leq(&x, &x, tol()).unwrap());
            prop_assert!(loewner_leq(&x, &y, tol()).unwrap());
            prop_assert!(loewner_leq(&y, &z, tol()).unwrap());
            prop_assert!(loewner_leq(&x, &z, tol()).unwrap());
        }

        #[test]
        fn blkdiag_blocks_recoverable(a in psd3(), m in -3.0..3.0f64, b in psd3()) {
            let s = dmatrix![m];
            let blocks = [a.matrix().clone(), s.clone(), b.matrix().clone()];
            let d = blkdiag(blocks.iter()).unwrap();
            prop_assert_eq!(d.view((0, 0), (3, 3)).clone_owned(), blocks[0].clone());
            prop_assert_eq!(d.view((3, 3), (1, 1)).clone_owned(), s);
            prop_assert_eq!(d.view((4, 4), (3, 3)).clone_owned(), blocks[2].clone());
            prop_assert_eq!(d.view((0, 3), (3, 4)).amax(), 0.0);
        }
    }

    #[test]
    fn eigen_verdict_agrees_with_cholesky() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut compared = 0;
        for _ in 0..1000 {
            let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let shift: f64 = rng.random_range(-0.5..0.5);
            let m = &b * b.transpose() - DMatrix::identity(4, 4) * shift;
            let margin = psd_margin(&m, tol()).unwrap();
            // skip the band around singularity where the two tests may differ
            if margin.min_eig.abs() <= 1e3 * margin.threshold {
                continue;
            }
            let chol = nalgebra::Cholesky::new(m.clone()).is_some();
            assert_eq!(chol, margin.is_psd(), "min eig {}", margin.min_eig);
            compared += 1;
        }
        assert!(compared > 900);
    }

    proptest! {
        #[test]
        fn symmetric_random_matrices_classified(m in sym4()) {
            let margin = psd_margin(&m, tol()).unwrap();
            prop_assert!(margin.min_eig <= margin.max_eig);
        }
    }
}
