//! Residual generation and the healthy/faulty decision.
//!
//! The filter is synthesized from the identified healthy model alone: a
//! polynomial row annihilating the stacked system pencil removes every
//! trajectory the healthy dynamics can produce from an unknown acquisition
//! state, and an output-injection channel compensates the estimated state.
//! What remains in the residual is, up to noise and model error, excited only
//! by faults. The decision compares the residual energy over the acquisition
//! window against a threshold calibrated on healthy data.

mod nullspace;
pub mod poly;
mod realize;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use nullspace::{
    annihilation_defect, assemble_dae, check_sensitivity, left_null_space, model_annihilator,
    pencil_blocks, stack_hbar, stack_pencil, DaeMatrices, FaultSensitivity, NullSpace,
    PencilBlock,
};
pub use realize::{
    design_denominator, discrete_denominator, observer_form, DiscreteStateSpace,
    OmegaConvention,
};

use crate::model::{FaultSpec, FaultVariant};
use crate::sim::Signal;
use crate::sysid::IdentifiedModel;
use crate::{Error, Result};
use nalgebra::{DVector, Vector2, Vector4};

/// Statistic compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionStatistic {
    /// Integral of the squared residual (default).
    Energy,
    /// Peak absolute residual value; cheaper, less sensitive.
    PeakAbs,
}

/// Filter synthesis and detection configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Number of annihilator blocks (filter order).
    pub d_n: usize,
    /// Desired oscillation count of the residual over the window.
    pub n_o: u32,
    pub omega_convention: OmegaConvention,
    /// Threshold margin factor.
    pub mu: f64,
    pub statistic: DetectionStatistic,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            d_n: 5,
            n_o: 5,
            omega_convention: OmegaConvention::Cycles,
            mu: 1.0,
            statistic: DetectionStatistic::Energy,
        }
    }
}

/// The continuous-domain design: annihilator blocks and denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolynomials {
    /// Blocks `N_0 … N_{d_n-1}` of the annihilating row, each pairing the
    /// four state equations with the output equation. Expressed in the
    /// model's dimensionless coordinates (see
    /// [`IdentifiedModel::normalized`]), where the components carry
    /// comparable weight.
    pub n_blocks: Vec<[f64; 5]>,
    /// Ascending monic denominator coefficients, degree `d_n`, in physical
    /// rad/s units.
    pub alpha: Vec<f64>,
    /// Marginal pole frequency [rad/s].
    pub omega_r: f64,
    pub d_n: usize,
    /// Normalization frequency of the annihilator blocks: their Laplace
    /// variable is `s/frequency_scale`.
    pub frequency_scale: f64,
}

impl FilterPolynomials {
    /// Output-channel numerator `N(s̃)·L`, ascending coefficients over the
    /// normalized variable `s̃ = s/frequency_scale`.
    pub fn y_numerator(&self) -> Vec<f64> {
        self.n_blocks.iter().map(|b| -b[4]).collect()
    }
}

/// A synthesized residual generator, realized as a discrete state space with
/// two inputs: the sensing samples and a constant one driving the
/// acquisition-state compensation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualFilter {
    pub polys: FilterPolynomials,
    pub realization: DiscreteStateSpace,
    pub x_a_hat: [f64; 4],
    pub dt: f64,
}

impl ResidualFilter {
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Synthesis health report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisDiagnostics {
    /// Left-null-space dimension of the stacked pencil (1 when unique).
    pub null_dimension: usize,
    /// Relative annihilation defect of the continuous pencil.
    pub annihilation_defect: f64,
    /// Relative annihilation defect of the sampled pencil.
    pub discrete_defect: f64,
    /// Max relative magnitude deviation between the realized and the
    /// continuous response over the evaluation band.
    pub frequency_fit_error: f64,
    /// Which fault structures the annihilator can see. A blind entry is a
    /// warning, not a failure.
    pub sensitivity: Vec<FaultSensitivity>,
}

/// Detection decision for one signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub energy: f64,
    pub threshold: f64,
    pub is_faulty: bool,
}

/// Runs the full synthesis: pencil assembly, annihilator extraction,
/// sensitivity check, denominator design, and the sampled realization.
pub fn synthesize(
    model: &IdentifiedModel,
    cfg: &FilterConfig,
) -> Result<(ResidualFilter, SynthesisDiagnostics)> {
    let faults: Vec<FaultSpec> = FaultVariant::FAULTS
        .iter()
        .map(|&v| FaultSpec::default_for(v))
        .collect();
    // All pencil work runs in the model's dimensionless form, where the
    // annihilation and visibility thresholds are meaningful.
    let (normalized, frequency_scale) = model.normalized();
    let dae = assemble_dae(&normalized, &faults);
    let hbar = stack_hbar(&dae, cfg.d_n);
    let ns = model_annihilator(model, cfg.d_n)?;

    let h_scale = hbar.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n_scale = nullspace::max_abs(&ns.nbar);
    let defect = annihilation_defect(&ns.nbar, &hbar) / (n_scale * h_scale);
    if defect > 1e-9 {
        return Err(Error::Synthesis(format!(
            "annihilation defect {defect:.3e} above tolerance"
        )));
    }
    let sensitivity = check_sensitivity(&ns.nbar, &dae, cfg.d_n);

    let (alpha, omega_r) = design_denominator(
        cfg.d_n,
        cfg.n_o,
        model.grid.window(),
        cfg.omega_convention,
    )?;
    let n_blocks: Vec<[f64; 5]> = ns
        .nbar
        .chunks(5)
        .map(|c| [c[0], c[1], c[2], c[3], c[4]])
        .collect();
    let polys = FilterPolynomials {
        n_blocks,
        alpha,
        omega_r,
        d_n: cfg.d_n,
        frequency_scale,
    };

    let (filter, realization_diag) =
        realize_filter(model, &polys, &model.x_a_hat, model.grid.dt)?;
    Ok((
        filter,
        SynthesisDiagnostics {
            null_dimension: ns.dimension,
            annihilation_defect: defect,
            discrete_defect: realization_diag.0,
            frequency_fit_error: realization_diag.1,
            sensitivity,
        },
    ))
}

/// Realizes the designed polynomials as a sampled filter for the given model,
/// compensation state and sample period. Returns the filter and the
/// `(discrete defect, frequency fit error)` diagnostics.
pub fn realize_filter(
    model: &IdentifiedModel,
    polys: &FilterPolynomials,
    x_a_hat: &[f64; 4],
    dt: f64,
) -> Result<(ResidualFilter, (f64, f64))> {
    let y_num = polys.y_numerator();
    if poly::degree(&y_num) >= polys.alpha.len() - 1 {
        return Err(Error::Synthesis(format!(
            "output-channel numerator degree {} violates strict properness against denominator degree {}",
            poly::degree(&y_num),
            polys.alpha.len() - 1
        )));
    }
    let synthesis = realize::realize_discrete(
        &model.state_matrix(),
        &model.output_matrix(),
        &Vector4::from_column_slice(x_a_hat),
        &y_num,
        polys.frequency_scale,
        &polys.alpha,
        polys.omega_r,
        polys.d_n,
        dt,
    )?;
    let filter = ResidualFilter {
        polys: polys.clone(),
        realization: synthesis.realization,
        x_a_hat: *x_a_hat,
        dt,
    };
    Ok((
        filter,
        (synthesis.discrete_defect, synthesis.frequency_fit_error),
    ))
}

/// Runs the filter over a signal: residual `r[k]` on the same grid, state
/// initialized to zero at the window start.
pub fn compute_residual(filter: &ResidualFilter, signal: &Signal) -> Result<Signal> {
    let rel = (signal.dt - filter.dt).abs() / filter.dt.max(1e-300);
    if rel > 1e-9 {
        return Err(Error::GridMismatch(format!(
            "signal dt {} does not match filter dt {}",
            signal.dt, filter.dt
        )));
    }
    let ss = &filter.realization;
    let order = ss.order();
    let mut state = DVector::<f64>::zeros(order);
    let mut out = Vec::with_capacity(signal.len());
    for &y in &signal.samples {
        let r = (&ss.c * &state)[(0, 0)] + ss.d[(0, 0)] * y + ss.d[(0, 1)];
        out.push(r);
        let u = Vector2::new(y, 1.0);
        state = &ss.a * state + &ss.b * u;
    }
    Signal::new(out, signal.t_a, signal.dt)
}

/// Residual energy `Σ r[k]²·dt` (rectangle rule for the squared integral).
pub fn residual_energy(r: &Signal) -> f64 {
    r.samples.iter().map(|v| v * v).sum::<f64>() * r.dt
}

pub fn residual_statistic(r: &Signal, statistic: DetectionStatistic) -> f64 {
    match statistic {
        DetectionStatistic::Energy => residual_energy(r),
        DetectionStatistic::PeakAbs => r.max_abs(),
    }
}

/// Threshold `μ · max` residual energy over a healthy calibration set.
pub fn calibrate_threshold(healthy_residuals: &[Signal], mu: f64) -> Result<f64> {
    calibrate_threshold_with(healthy_residuals, mu, DetectionStatistic::Energy)
}

pub fn calibrate_threshold_with(
    healthy_residuals: &[Signal],
    mu: f64,
    statistic: DetectionStatistic,
) -> Result<f64> {
    if healthy_residuals.is_empty() {
        return Err(Error::Empty(
            "threshold calibration needs at least one healthy residual".into(),
        ));
    }
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "threshold factor must be positive, got {mu}"
        )));
    }
    Ok(mu * healthy_residuals
        .iter()
        .map(|r| residual_statistic(r, statistic))
        .fold(0.0f64, f64::max))
}

/// Faulty iff the statistic strictly exceeds the threshold.
pub fn detect(energy: f64, threshold: f64) -> DetectionResult {
    debug_assert!(energy >= 0.0 && threshold >= 0.0);
    DetectionResult {
        energy,
        threshold,
        is_faulty: energy > threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_system_matrices, faulted_dynamics, ChannelParams};
    use crate::sim::{simulate_autonomous, Signal};
    use approx::assert_relative_eq;
    use nalgebra::Vector4;

    fn reference_filter() -> (IdentifiedModel, ResidualFilter, SynthesisDiagnostics) {
        let model = IdentifiedModel::reference();
        let (filter, diag) = synthesize(&model, &FilterConfig::default()).unwrap();
        (model, filter, diag)
    }

    fn healthy_signal(model: &IdentifiedModel, x_a: &Vector4<f64>) -> Signal {
        simulate_autonomous(
            &model.state_matrix(),
            &model.output_matrix(),
            x_a,
            model.grid.t_a,
            model.grid.dt,
            model.grid.n,
        )
        .unwrap()
    }

    #[test]
    fn synthesis_annihilates_and_sees_every_fault() {
        let (_, filter, diag) = reference_filter();
        // Two annihilator directions at order five: the minimal degree-3 row
        // and its shift (one state mode is unobservable from the output).
        assert_eq!(diag.null_dimension, 2);
        assert!(diag.annihilation_defect <= 1e-9);
        assert!(diag.discrete_defect <= 1e-9);
        assert!(diag.sensitivity.iter().all(|s| s.sensitive));
        assert_eq!(filter.polys.n_blocks.len(), 5);
        assert_eq!(filter.realization.order(), 5);
    }

    #[test]
    fn exact_healthy_record_yields_a_null_residual() {
        let (model, filter, _) = reference_filter();
        let y = healthy_signal(&model, &model.x_a());
        let r = compute_residual(&filter, &y).unwrap();
        let bound = 1e-6 * y.max_abs();
        assert!(
            r.max_abs() <= bound,
            "max |r| = {:.3e} vs bound {:.3e}",
            r.max_abs(),
            bound
        );
    }

    #[test]
    fn acquisition_state_mismatch_excites_the_residual() {
        let (model, filter, _) = reference_filter();
        // A 20% overshoot of the whole acquisition state: by linearity the
        // residual is 20% of the compensation response, far above the exact
        // floor.
        let x = model.x_a() * 1.2;
        let y = healthy_signal(&model, &x);
        let exact = healthy_signal(&model, &model.x_a());
        let r = compute_residual(&filter, &y).unwrap();
        let r_exact = compute_residual(&filter, &exact).unwrap();
        assert!(
            r.max_abs() > 1e3 * r_exact.max_abs().max(1e-300),
            "mismatch response {:.3e} vs exact floor {:.3e}",
            r.max_abs(),
            r_exact.max_abs()
        );
    }

    #[test]
    fn zero_input_and_zero_compensation_give_zero_residual() {
        let (model, filter, _) = reference_filter();
        let (zeroed, _) = realize_filter(&model, &filter.polys, &[0.0; 4], model.grid.dt).unwrap();
        let silent = Signal::new(vec![0.0; model.grid.n], 0.0, model.grid.dt).unwrap();
        let r = compute_residual(&zeroed, &silent).unwrap();
        assert!(r.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_is_linear_in_the_input() {
        let (model, filter, _) = reference_filter();
        let (f0, _) = realize_filter(&model, &filter.polys, &[0.0; 4], model.grid.dt).unwrap();
        let y1 = healthy_signal(&model, &model.x_a());
        let y2 = healthy_signal(&model, &Vector4::new(0.1, -0.3, 0.4, 0.2));
        let sum = Signal::new(
            y1.samples
                .iter()
                .zip(&y2.samples)
                .map(|(a, b)| a + b)
                .collect(),
            y1.t_a,
            y1.dt,
        )
        .unwrap();
        let r1 = compute_residual(&f0, &y1).unwrap();
        let r2 = compute_residual(&f0, &y2).unwrap();
        let r12 = compute_residual(&f0, &sum).unwrap();
        let scale = r12.max_abs().max(1e-300);
        for k in 0..r12.len() {
            assert!(
                ((r1.samples[k] + r2.samples[k]) - r12.samples[k]).abs() <= 1e-9 * scale,
                "nonlinearity at sample {k}"
            );
        }
    }

    #[test]
    fn faulty_dynamics_dominate_the_exact_healthy_floor() {
        let (model, filter, _) = reference_filter();
        let matrices = build_system_matrices(&ChannelParams::reference()).unwrap();
        let healthy = healthy_signal(&model, &model.x_a());
        let r_h = compute_residual(&filter, &healthy).unwrap();

        let a_f = faulted_dynamics(&matrices, &FaultSpec::default_for(FaultVariant::DDN)).unwrap();
        let faulty = simulate_autonomous(
            &a_f,
            &matrices.c,
            &model.x_a(),
            model.grid.t_a,
            model.grid.dt,
            model.grid.n,
        )
        .unwrap();
        let r_f = compute_residual(&filter, &faulty).unwrap();
        assert!(residual_energy(&r_f) > 1e6 * residual_energy(&r_h).max(1e-300));
    }

    #[test]
    fn faulty_residual_rings_at_the_design_frequency_without_washout() {
        let (model, filter, _) = reference_filter();
        let matrices = build_system_matrices(&ChannelParams::reference()).unwrap();
        let a_f = faulted_dynamics(&matrices, &FaultSpec::default_for(FaultVariant::DDN)).unwrap();
        let faulty = simulate_autonomous(
            &a_f,
            &matrices.c,
            &model.x_a(),
            model.grid.t_a,
            model.grid.dt,
            model.grid.n,
        )
        .unwrap();
        let r = compute_residual(&filter, &faulty).unwrap();

        // Peak of the residual spectrum sits at the marginal frequency.
        let f_peak = crate::spectrum::dominant_frequency(&r);
        let f_design = filter.polys.omega_r / (2.0 * std::f64::consts::PI);
        assert!(
            (f_peak - f_design).abs() < 0.1 * f_design,
            "peak {f_peak:.3e} vs design {f_design:.3e}"
        );

        // Cumulative energy keeps growing: the tail still carries a
        // substantial share, the ringing does not die out.
        let quarter = r.len() / 4;
        let tail: f64 = r.samples[3 * quarter..].iter().map(|v| v * v).sum();
        let total: f64 = r.samples.iter().map(|v| v * v).sum();
        assert!(tail > 0.15 * total, "tail share {}", tail / total);
    }

    #[test]
    fn discrete_poles_and_frequency_response_track_the_design() {
        let (_, filter, diag) = reference_filter();
        let a = &filter.realization.a;
        let theta = filter.polys.omega_r * filter.dt;

        // Leading block: observer form of z² - 2cos(θ)z + 1. Its determinant
        // is the stored unit constant, so the exact eigenvalue pair has
        // modulus exactly 1; no eigensolver tolerance is involved.
        assert_eq!(a[(0, 0)], 2.0 * theta.cos());
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(1, 0)], -1.0);
        assert_eq!(a[(1, 1)], 0.0);
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        assert_eq!(det, 1.0);
        assert!(a[(0, 0)].abs() < 2.0, "pair degenerated to real poles");

        // Block-diagonal coupling is exactly zero.
        let order = filter.realization.order();
        for i in 0..2 {
            for j in 2..order {
                assert_eq!(a[(i, j)], 0.0);
                assert_eq!(a[(j, i)], 0.0);
            }
        }

        // Stable block strictly inside the circle with a wide margin.
        let radius = (-filter.polys.omega_r * filter.dt).exp();
        let stable = a.view((2, 2), (order - 2, order - 2)).clone_owned();
        for e in stable.complex_eigenvalues().iter() {
            assert!(
                (e.norm() - radius).abs() < 0.01 && e.norm() < 0.99,
                "stable pole at {e}"
            );
        }

        assert!(
            diag.frequency_fit_error < 0.01,
            "frequency fit error {:.4e}",
            diag.frequency_fit_error
        );
    }

    #[test]
    fn energy_matches_closed_forms() {
        let zeros = Signal::new(vec![0.0; 500], 0.0, 1e-7).unwrap();
        assert_eq!(residual_energy(&zeros), 0.0);

        let ones = Signal::new(vec![1.0; 500], 0.0, 1e-7).unwrap();
        assert_relative_eq!(residual_energy(&ones), 5e-5, max_relative = 1e-12);

        // Whole number of periods: energy a²·T/2.
        let a = 2.5;
        let periods = 10.0;
        let n = 500;
        let dt = 1e-7;
        let t_total = n as f64 * dt;
        let f = periods / t_total;
        let sine = Signal::new(
            (0..n)
                .map(|k| a * (2.0 * std::f64::consts::PI * f * k as f64 * dt).sin())
                .collect(),
            0.0,
            dt,
        )
        .unwrap();
        assert_relative_eq!(
            residual_energy(&sine),
            a * a * t_total / 2.0,
            max_relative = 0.01
        );
    }

    #[test]
    fn threshold_is_mu_times_max() {
        let residuals: Vec<Signal> = [1.0f64, 2.0, 3.0]
            .iter()
            .map(|e| {
                // One-sample signals with dt = 1 have energy = value².
                Signal::new(vec![e.sqrt()], 0.0, 1.0).unwrap()
            })
            .collect();
        assert_relative_eq!(
            calibrate_threshold(&residuals, 1.0).unwrap(),
            3.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            calibrate_threshold(&residuals, 2.0).unwrap(),
            6.0,
            max_relative = 1e-12
        );
        assert!(calibrate_threshold(&[], 1.0).is_err());
        assert!(calibrate_threshold(&residuals, 0.0).is_err());
    }

    #[test]
    fn detection_uses_a_strict_threshold() {
        assert!(!detect(3.0, 3.0).is_faulty);
        assert!(detect(3.01, 3.0).is_faulty);
        assert!(!detect(0.0, 0.0).is_faulty);
    }

    #[test]
    fn filter_round_trips_through_json_bit_exactly() {
        let (_, filter, _) = reference_filter();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("filter.json");
        filter.save(&path).unwrap();
        let back = ResidualFilter::load(&path).unwrap();
        assert_eq!(back, filter);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let (_, filter, _) = reference_filter();
        let wrong = Signal::new(vec![0.0; 10], 0.0, filter.dt * 2.0).unwrap();
        assert!(matches!(
            compute_residual(&filter, &wrong),
            Err(Error::GridMismatch(_))
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn energy_scales_quadratically(scale in 0.1f64..10.0) {
                let base = Signal::new(vec![0.3, -0.7, 1.1, 0.2], 0.0, 1e-7).unwrap();
                let scaled = Signal::new(
                    base.samples.iter().map(|v| v * scale).collect(),
                    0.0,
                    1e-7,
                )
                .unwrap();
                let ratio = residual_energy(&scaled) / residual_energy(&base);
                prop_assert!((ratio - scale * scale).abs() < 1e-9 * scale * scale);
            }

            #[test]
            fn detection_flag_matches_strict_comparison(
                energy in 0.0f64..10.0,
                threshold in 0.0f64..10.0
            ) {
                let d = detect(energy, threshold);
                prop_assert_eq!(d.is_faulty, energy > threshold);
            }
        }
    }
}
