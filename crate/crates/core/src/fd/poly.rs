//! Minimal real-polynomial helpers; coefficients ascending by power.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

pub fn eval(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Degree ignoring trailing zero coefficients (relative to the largest one).
pub fn degree(coeffs: &[f64]) -> usize {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return 0;
    }
    coeffs
        .iter()
        .rposition(|c| c.abs() > 1e-12 * scale)
        .unwrap_or(0)
}

/// Degree counting every exactly-zero leading coefficient as absent.
pub fn degree_exact(coeffs: &[f64]) -> usize {
    coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0)
}

/// Roots via the companion-matrix eigenvalues of the monic-normalized
/// polynomial. The variable is rescaled to bring the coefficients to a
/// common magnitude first, so polynomials whose coefficients span many
/// decades (roots far from unit size) stay well conditioned.
pub fn roots(coeffs: &[f64]) -> Vec<Complex64> {
    let deg = degree_exact(coeffs);
    if deg == 0 {
        return Vec::new();
    }
    let trimmed = &coeffs[..=deg];
    let lead = trimmed[deg];
    // Geometric-mean estimate of the root magnitude: |c_0 / c_d|^(1/d),
    // falling back over the first nonzero trailing coefficient.
    let mut scale = 1.0f64;
    for (i, &c) in trimmed.iter().enumerate() {
        if c != 0.0 {
            scale = (c.abs() / lead.abs()).powf(1.0 / (deg - i) as f64);
            break;
        }
    }
    if !scale.is_finite() || scale <= 0.0 {
        scale = 1.0;
    }
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        // Coefficients of p(scale·z)/(lead·scale^deg), highest power monic.
        companion[(i, deg - 1)] = -trimmed[i] / (lead * scale.powi((deg - i) as i32));
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z * scale)
        .collect()
}

/// Distance from `z` to the nearest root, estimated by a Newton step
/// `|p(z)/p'(z)|`. Tight for simple roots; used to verify constructed root
/// locations without extracting eigenvalues.
pub fn newton_root_distance(coeffs: &[f64], z: Complex64) -> f64 {
    let value = eval(coeffs, z);
    let deriv: Complex64 = coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, (i, &c)| {
            acc * z + c * i as f64
        });
    if deriv.norm() == 0.0 {
        return f64::INFINITY;
    }
    (value / deriv).norm()
}
