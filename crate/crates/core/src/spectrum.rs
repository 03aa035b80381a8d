//! Small spectral helpers for signal characterization and plot data.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::sim::Signal;

const FFT_LEN: usize = 4096;

/// One-sided magnitude spectrum on a zero-padded grid.
///
/// Returns `(frequency [Hz], magnitude)` pairs for the positive-frequency
/// bins, DC excluded.
pub fn magnitude_spectrum(s: &Signal) -> Vec<(f64, f64)> {
    let n_fft = FFT_LEN.max(s.len().next_power_of_two());
    let mut buf: Vec<Complex64> = s
        .samples
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    let df = 1.0 / (n_fft as f64 * s.dt);
    (1..n_fft / 2)
        .map(|k| (k as f64 * df, buf[k].norm()))
        .collect()
}

/// Frequency of the spectral peak [Hz], refined by parabolic interpolation of
/// the three bins around the maximum.
pub fn dominant_frequency(s: &Signal) -> f64 {
    let spec = magnitude_spectrum(s);
    let (peak, _) = spec
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty spectrum");
    if peak == 0 || peak + 1 >= spec.len() {
        return spec[peak].0;
    }
    let (f0, m0) = spec[peak - 1];
    let (f1, m1) = spec[peak];
    let (_, m2) = spec[peak + 1];
    let denom = m0 - 2.0 * m1 + m2;
    if denom.abs() < 1e-300 {
        return f1;
    }
    let shift = 0.5 * (m0 - m2) / denom;
    f1 + shift * (spec[peak].0 - f0)
}

/// Log-envelope decay rate [1/s], estimated from the RMS ratio of the
/// first and second half of the window. Positive values mean decay.
pub fn decay_rate(s: &Signal) -> f64 {
    let n = s.len();
    let half = n / 2;
    let rms = |xs: &[f64]| (xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64).sqrt();
    let r1 = rms(&s.samples[..half]).max(1e-300);
    let r2 = rms(&s.samples[half..]).max(1e-300);
    let duration = half as f64 * s.dt;
    (r1 / r2).ln() / duration
}
