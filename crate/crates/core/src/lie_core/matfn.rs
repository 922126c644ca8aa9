//! Dense matrix functions on raw `DMatrix<f64>`: exponential, principal
//! square root and principal logarithm, plus their Fréchet derivatives.
//!
//! These operate on arbitrary square matrices (no group or algebra
//! constraints) so that block-triangular constructions can reuse them.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Diagonal Padé degree of the exponential core.
const PADE_DEGREE: usize = 8;
/// Scaled Frobenius norm must fall below this before the Padé core runs.
const EXP_SCALED_NORM: f64 = 0.5;

/// `log` works on `Y = A^{1/2^s}` once `‖Y − I‖_F` drops below this.
const LOG_SERIES_RADIUS: f64 = 0.25;
const MAX_SQRT_STEPS: usize = 48;
const DB_MAX_ITER: usize = 100;
const MERCATOR_TAIL: f64 = 1e-18;

fn pade_coefficients() -> [f64; PADE_DEGREE + 1] {
    let m = PADE_DEGREE;
    let mut c = [0.0; PADE_DEGREE + 1];
    c[0] = 1.0;
    for k in 1..=m {
        // c_k = c_{k-1} (m - k + 1) / ((2m - k + 1) k)
        c[k] = c[k - 1] * (m - k + 1) as f64 / (((2 * m - k + 1) * k) as f64);
    }
    c
}

fn check_square(a: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::invalid(format!("{what}: matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// Matrix exponential by scaling and squaring around a [8/8] Padé core.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(a, "expm")?;
    let n = a.nrows();
    let norm = a.norm();
    let mut squarings = 0u32;
    if norm >= EXP_SCALED_NORM {
        squarings = (norm / EXP_SCALED_NORM).log2().floor() as u32 + 1;
    }
    let scaled = a / 2f64.powi(squarings as i32);

    let c = pade_coefficients();
    let id = DMatrix::<f64>::identity(n, n);
    let mut numer = &id * c[0];
    let mut denom = &id * c[0];
    let mut power = id.clone();
    for (k, ck) in c.iter().enumerate().skip(1) {
        power = &power * &scaled;
        numer += &power * *ck;
        if k % 2 == 0 {
            denom += &power * *ck;
        } else {
            denom -= &power * *ck;
        }
    }
    let lu = denom.lu();
    let mut result = lu
        .solve(&numer)
        .ok_or(Error::Singular { det: 0.0 })?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expm result"));
    }
    Ok(result)
}

fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone().try_inverse().ok_or_else(|| Error::Singular { det: a.determinant() })
}

/// Principal square root via the Denman–Beavers iteration.
///
/// Fails with an out-of-domain error when the iteration does not settle,
/// which is what happens for spectra touching the closed negative axis.
pub fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(a, "sqrtm")?;
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..DB_MAX_ITER {
        let y_inv = inverse(&y).map_err(|_| Error::out_of_domain("sqrtm", "iterate became singular"))?;
        let z_inv = inverse(&z).map_err(|_| Error::out_of_domain("sqrtm", "iterate became singular"))?;
        let y_next = (&y + &z_inv) * 0.5;
        let z_next = (&z + &y_inv) * 0.5;
        let step = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if !step.is_finite() {
            break;
        }
        if step <= 1e-15 * y.norm().max(1.0) {
            return Ok(y);
        }
    }
    Err(Error::out_of_domain(
        "sqrtm",
        "Denman-Beavers iteration did not converge (eigenvalue on or near the negative real axis)",
    ))
}

/// Principal logarithm by inverse scaling and squaring: take square roots
/// until `‖Y − I‖_F < 0.25`, sum the Mercator series with an explicit tail
/// bound, then rescale by `2^s`.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(a, "logm")?;
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut y = a.clone();
    let mut roots = 0usize;
    while (&y - &id).norm() >= LOG_SERIES_RADIUS {
        if roots == MAX_SQRT_STEPS {
            return Err(Error::out_of_domain("logm", "square-root reduction did not reach the series radius"));
        }
        y = sqrtm(&y).map_err(|e| match e {
            Error::OutOfDomain { detail, .. } => Error::out_of_domain("logm", detail),
            other => other,
        })?;
        roots += 1;
    }
    let e = &y - &id;
    let q = e.norm();
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut power = e.clone();
    let mut k = 1usize;
    loop {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum += &power * (sign / k as f64);
        let tail = q.powi(k as i32 + 1) / ((k + 1) as f64 * (1.0 - q));
        if tail < MERCATOR_TAIL || k >= 200 {
            break;
        }
        power = &power * &e;
        k += 1;
    }
    Ok(sum * 2f64.powi(roots as i32))
}

fn block_upper(a: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut big = DMatrix::<f64>::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((n, n), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, n)).copy_from(e);
    big
}

/// Fréchet derivative of `expm` at `a` in direction `e`, read off the
/// upper-right block of `exp([[A, E], [0, A]])`.
pub fn expm_frechet(a: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let big = expm(&block_upper(a, e))?;
    Ok(big.view((0, n), (n, n)).into_owned())
}

/// Fréchet derivative of `logm` at `a` in direction `e` (same block trick).
pub fn logm_frechet(a: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let big = logm(&block_upper(a, e))?;
    Ok(big.view((0, n), (n, n)).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor_exp(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = a.nrows();
        let mut sum = DMatrix::<f64>::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        for k in 1..terms {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn pade_coefficients_match_factorial_formula() {
        let c = pade_coefficients();
        // c_1 = 1/2 and c_2 = (m-1)/(4(2m-1)) for the diagonal approximant
        assert!((c[1] - 0.5).abs() < 1e-16);
        assert!((c[2] - 7.0 / 60.0).abs() < 1e-16);
    }

    #[test]
    fn expm_matches_taylor_on_general_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, -0.4, 0.2, 0.3, 0.05, -0.1, -0.2, 0.15, 0.0]);
        let diff = (expm(&a).unwrap() - taylor_exp(&a, 40)).norm();
        assert!(diff < 1e-14, "{diff}");
    }

    #[test]
    fn expm_handles_large_norm_via_squaring() {
        let a = DMatrix::from_row_slice(2, 2, &[-3.0, 3.0, 0.0, 0.0]);
        let got = expm(&a).unwrap();
        let e = (-3.0f64).exp();
        assert!((got[(0, 0)] - e).abs() < 1e-14);
        assert!((got[(0, 1)] - (1.0 - e)).abs() < 1e-14);
    }

    #[test]
    fn expm_rejects_non_finite() {
        let a = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 0.0]);
        assert!(matches!(expm(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sqrtm_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let r = sqrtm(&a).unwrap();
        assert!((&r * &r - &a).norm() < 1e-13);
    }

    #[test]
    fn logm_rejects_negative_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        assert!(matches!(logm(&a), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn logm_inverts_expm_beyond_series_radius() {
        let x = DMatrix::from_row_slice(2, 2, &[-1.5, 1.5, 0.7, -0.7]);
        let back = logm(&expm(&x).unwrap()).unwrap();
        assert!((back - x).norm() < 1e-12);
    }

    #[test]
    fn frechet_derivatives_match_central_differences() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.4, 0.4, 0.3, -0.3]);
        let e = DMatrix::from_row_slice(2, 2, &[0.2, -0.2, -0.1, 0.1]);
        let h = 1e-5;
        let fd = (expm(&(&a + &e * h)).unwrap() - expm(&(&a - &e * h)).unwrap()) / (2.0 * h);
        assert!((expm_frechet(&a, &e).unwrap() - fd).norm() < 1e-9);

        let g = expm(&a).unwrap();
        let fd = (logm(&(&g + &e * h)).unwrap() - logm(&(&g - &e * h)).unwrap()) / (2.0 * h);
        assert!((logm_frechet(&g, &e).unwrap() - fd).norm() < 1e-9);
    }
}
