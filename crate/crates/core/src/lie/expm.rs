//! Matrix exponential and logarithm for 3×3 real matrices.
//!
//! The exponential uses scaling and squaring around a truncated Taylor core.
//! The logarithm uses inverse scaling and squaring: repeated Denman–Beavers
//! square roots bring the argument close to the identity, then the Mercator
//! series is summed and the result is rescaled.

use nalgebra::Matrix3;

use super::LieError;

/// Scaled matrices are brought below this 1-norm before the Taylor core runs.
const EXP_SCALE_TARGET: f64 = 0.5;
/// 0.5^19 / 19! < 1e-22, far below f64 resolution.
const EXP_TAYLOR_TERMS: usize = 18;

/// Square roots are taken until ‖X − I‖_F drops below this.
const LOG_SQRT_TARGET: f64 = 0.25;
const LOG_MAX_SQRTS: usize = 60;
const LOG_MAX_TERMS: usize = 400;

fn norm1(a: &Matrix3<f64>) -> f64 {
    (0..3)
        .map(|j| (0..3).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring.
pub fn expm3(a: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = norm1(a);
    let squarings = if norm > EXP_SCALE_TARGET {
        (norm / EXP_SCALE_TARGET).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    // Horner evaluation of sum_{k=0}^{n} A^k / k!
    let mut result = Matrix3::identity();
    for k in (1..=EXP_TAYLOR_TERMS).rev() {
        result = Matrix3::identity() + scaled * result / k as f64;
    }
    for _ in 0..squarings {
        result = result * result;
    }
    result
}

/// Largest eigenvalue modulus of `m`.
pub fn spectral_radius(m: &Matrix3<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Principal square root by the Denman–Beavers iteration.
fn sqrtm3(a: &Matrix3<f64>) -> Result<Matrix3<f64>, LieError> {
    let mut y = *a;
    let mut z = Matrix3::identity();
    for _ in 0..100 {
        let y_inv = y.try_inverse().ok_or(LieError::Singular)?;
        let z_inv = z.try_inverse().ok_or(LieError::Singular)?;
        let y_next = 0.5 * (y + z_inv);
        let z_next = 0.5 * (z + y_inv);
        let delta = (y_next - y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm() {
            break;
        }
    }
    Ok(y)
}

/// Principal matrix logarithm, defined when the spectral radius of `u − I`
/// is below one.
pub fn logm3(u: &Matrix3<f64>) -> Result<Matrix3<f64>, LieError> {
    let eye = Matrix3::identity();
    let radius = spectral_radius(&(u - eye));
    if !(radius < 1.0) {
        return Err(LieError::OutsideLogDomain { radius });
    }

    let mut x = *u;
    let mut roots: i32 = 0;
    while (x - eye).norm() > LOG_SQRT_TARGET {
        if roots as usize == LOG_MAX_SQRTS {
            return Err(LieError::OutsideLogDomain { radius });
        }
        x = sqrtm3(&x)?;
        roots += 1;
    }

    let y = x - eye;
    let mut power = y;
    let mut sum = Matrix3::zeros();
    for n in 1..=LOG_MAX_TERMS {
        let term = power / n as f64;
        if n % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
        if term.norm() < 1e-20 {
            break;
        }
        power *= y;
    }
    Ok(sum * 2f64.powi(roots))
}
