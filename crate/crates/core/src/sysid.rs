//! Grey-box identification of the healthy channel model.
//!
//! Fits the four free state-matrix coefficients and the shared acquisition
//! state by minimizing the sampled output-fit objective
//! `Σ_signals Σ_k w(y[k] − C·exp(A·k·dt)·x̂_a)·dt` with `w = |·|` (default) or
//! `(·)²`. The state matrix keeps the structural zeros/ones and the
//! `a31 = a32`, `a41 = a42` ties by construction, and the acquisition gain is
//! pinned to `c = 1` to remove the output-scale ambiguity.
//!
//! The search runs over the coefficient magnitudes in log space with the
//! acquisition state eliminated by linear least squares (the objective is
//! linear in `x̂_a` once `A` is fixed), followed by a derivative-free polish
//! over all eight parameters.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix4, RowVector4, Vector4};
use serde::{Deserialize, Serialize};

use crate::sim::{GridConfig, Signal};
use crate::{Error, Result};

/// Pointwise fit weight of the identification objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitObjective {
    /// Absolute error (default).
    L1,
    /// Squared error; smoother for gradient-based refinement.
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysidConfig {
    pub objective: FitObjective,
    /// Iteration cap per simplex run.
    pub max_iterations: usize,
    /// Relative objective-spread tolerance for simplex convergence.
    pub tolerance: f64,
    /// Multi-start grid: log10 magnitudes tried for the inertance-coupling
    /// coefficients (`a31`, `a41`) when the recurrence-based initializer is
    /// not applicable.
    pub coupling_decades: Vec<f64>,
    /// Multi-start grid: log10 magnitudes tried for the damping coefficients
    /// (`a33`, `a44`).
    pub damping_decades: Vec<f64>,
    /// Number of best starts refined by the simplex search.
    pub refine_starts: usize,
}

impl Default for SysidConfig {
    fn default() -> Self {
        Self {
            objective: FitObjective::L1,
            max_iterations: 2000,
            tolerance: 1e-12,
            coupling_decades: vec![10.5, 11.0, 11.5, 12.0, 12.5],
            damping_decades: vec![4.5, 5.0, 5.5],
            refine_starts: 3,
        }
    }
}

/// The identified healthy model: structured state matrix, pinned output map,
/// shared acquisition state and the achieved objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModel {
    pub a31: f64,
    pub a33: f64,
    pub a41: f64,
    pub a44: f64,
    /// Acquisition gain, fixed to 1.
    pub c: f64,
    pub x_a_hat: [f64; 4],
    pub fit_residual: f64,
    pub grid: GridConfig,
}

impl IdentifiedModel {
    /// Reference coefficients used as the documented fixture across the test
    /// suites: the identified channel model and its acquisition state.
    pub fn reference() -> Self {
        Self {
            a31: -4.33e11,
            a33: -1.59e5,
            a41: -6.17e11,
            a44: -1.75e5,
            c: 1.0,
            x_a_hat: [0.21, 0.21, 0.16, 0.22],
            fit_residual: 0.0,
            grid: GridConfig::default(),
        }
    }

    pub fn state_matrix(&self) -> Matrix4<f64> {
        Matrix4::new(
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            self.a31, self.a31, self.a33, 0.0, //
            self.a41, self.a41, 0.0, self.a44,
        )
    }

    /// Natural frequency scale `ω = sqrt(|a31| + |a41|)` of the coupling
    /// coefficients.
    pub fn frequency_scale(&self) -> f64 {
        let omega = (self.a31.abs() + self.a41.abs()).sqrt();
        if omega.is_finite() && omega > 0.0 {
            omega
        } else {
            1.0
        }
    }

    /// The same channel in dimensionless coordinates: time normalized by the
    /// natural frequency and the volume states rescaled to match the flow
    /// states. The structural form is preserved (`A' = D·(A/ω)·D⁻¹` keeps
    /// the identity rows), all coefficients become order one, and the raw
    /// model is recovered through `a31 = a31'·ω²`, `a33 = a33'·ω`, etc.
    /// Returns the normalized model and `ω`.
    pub fn normalized(&self) -> (IdentifiedModel, f64) {
        let omega = self.frequency_scale();
        let model = IdentifiedModel {
            a31: self.a31 / (omega * omega),
            a33: self.a33 / omega,
            a41: self.a41 / (omega * omega),
            a44: self.a44 / omega,
            c: self.c,
            x_a_hat: [
                self.x_a_hat[0] * omega,
                self.x_a_hat[1] * omega,
                self.x_a_hat[2],
                self.x_a_hat[3],
            ],
            fit_residual: self.fit_residual,
            grid: GridConfig {
                t_a: self.grid.t_a * omega,
                dt: self.grid.dt * omega,
                n: self.grid.n,
            },
        };
        (model, omega)
    }

    pub fn output_matrix(&self) -> RowVector4<f64> {
        RowVector4::new(0.0, 0.0, self.c, self.c)
    }

    pub fn x_a(&self) -> Vector4<f64> {
        Vector4::from_column_slice(&self.x_a_hat)
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.a31, self.a33, self.a41, self.a44]
    }

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

/// Objective of a fixed model over a signal set (rectangle-rule discretized).
pub fn fit_objective(
    model: &IdentifiedModel,
    signals: &[Signal],
    objective: FitObjective,
) -> Result<f64> {
    let problem = FitProblem::new(signals, objective)?;
    let phi = problem
        .basis(&model.coefficients())
        .ok_or_else(|| Error::InvalidParameter("non-finite model coefficients".into()))?;
    Ok(problem.exact_objective(&phi, &model.x_a()))
}

struct FitProblem<'a> {
    signals: &'a [Signal],
    mean: DVector<f64>,
    dt: f64,
    n: usize,
    objective: FitObjective,
}

impl<'a> FitProblem<'a> {
    fn new(signals: &'a [Signal], objective: FitObjective) -> Result<Self> {
        let first = signals
            .first()
            .ok_or_else(|| Error::Empty("identification needs at least one signal".into()))?;
        first.validate()?;
        for s in signals {
            if !s.same_grid(first) {
                return Err(Error::GridMismatch(
                    "identification signals must share one sampling grid".into(),
                ));
            }
        }
        let n = first.len();
        let mut mean = DVector::zeros(n);
        for s in signals {
            for (k, v) in s.samples.iter().enumerate() {
                mean[k] += v;
            }
        }
        mean /= signals.len() as f64;
        Ok(Self {
            signals,
            mean,
            dt: first.dt,
            n,
            objective,
        })
    }

    /// Rows `C·exp(A·k·dt)` of the output predictor for the structured state
    /// matrix built from `(a31, a33, a41, a44)`.
    fn basis(&self, coeffs: &[f64; 4]) -> Option<DMatrix<f64>> {
        if coeffs.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let a = Matrix4::new(
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            coeffs[0], coeffs[0], coeffs[1], 0.0, //
            coeffs[2], coeffs[2], 0.0, coeffs[3],
        );
        let step = (a * self.dt).exp();
        let mut row: RowVector4<f64> = RowVector4::new(0.0, 0.0, 1.0, 1.0);
        let mut phi = DMatrix::zeros(self.n, 4);
        for k in 0..self.n {
            for j in 0..4 {
                if !row[j].is_finite() {
                    return None;
                }
                phi[(k, j)] = row[j];
            }
            row *= step;
        }
        Some(phi)
    }

    /// Best acquisition state for a fixed basis, by least squares against the
    /// mean signal. Small singular values are truncated relative to the
    /// largest one: near-parallel basis columns would otherwise blow the
    /// state up along their cancellation direction.
    fn solve_state(&self, phi: &DMatrix<f64>) -> Vector4<f64> {
        let svd = phi.clone().svd(true, true);
        let s_max = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
        match svd.solve(&self.mean, 1e-10 * s_max.max(1e-300)) {
            Ok(x) => Vector4::from_column_slice(x.as_slice()),
            Err(_) => Vector4::zeros(),
        }
    }

    /// Squared-error objective against the mean signal; drives the
    /// coefficient search, where the state elimination is exact for this
    /// norm. The configured objective is applied in the final polish.
    fn surrogate(&self, phi: &DMatrix<f64>, x: &Vector4<f64>) -> f64 {
        let count = self.signals.len() as f64;
        let mut acc = 0.0;
        for k in 0..self.n {
            let e = self.mean[k]
                - phi[(k, 0)] * x[0]
                - phi[(k, 1)] * x[1]
                - phi[(k, 2)] * x[2]
                - phi[(k, 3)] * x[3];
            acc += e * e;
        }
        acc * self.dt * count
    }

    /// The stated objective: summed over every signal.
    fn exact_objective(&self, phi: &DMatrix<f64>, x: &Vector4<f64>) -> f64 {
        let mut acc = 0.0;
        for s in self.signals {
            for k in 0..self.n {
                let e = s.samples[k]
                    - phi[(k, 0)] * x[0]
                    - phi[(k, 1)] * x[1]
                    - phi[(k, 2)] * x[2]
                    - phi[(k, 3)] * x[3];
                acc += match self.objective {
                    FitObjective::L1 => e.abs(),
                    FitObjective::L2 => e * e,
                };
            }
        }
        acc * self.dt
    }

    fn coeffs_from_log(p: &[f64]) -> [f64; 4] {
        [
            -10f64.powf(p[0]),
            -10f64.powf(p[1]),
            -10f64.powf(p[2]),
            -10f64.powf(p[3]),
        ]
    }

    /// Sampled recurrence roots of the mean signal at the given lag order,
    /// by ordinary or total least squares. Total least squares tolerates
    /// noise on the regressors; higher orders give the noise spurious roots
    /// to absorb.
    fn ar_roots(&self, order: usize, total: bool) -> Option<Vec<num_complex::Complex64>> {
        let n = self.n;
        if n < order + 8 {
            return None;
        }
        let rows = n - order;
        let mut regressors = DMatrix::zeros(rows, order);
        let mut targets = DVector::zeros(rows);
        for k in 0..rows {
            for j in 0..order {
                regressors[(k, j)] = self.mean[k + order - 1 - j];
            }
            targets[k] = self.mean[k + order];
        }
        let ar: Vec<f64> = if total {
            let mut joint = DMatrix::zeros(rows, order + 1);
            joint.view_mut((0, 0), (rows, order)).copy_from(&regressors);
            joint.set_column(order, &targets);
            let svd = joint.svd(false, true);
            let v_t = svd.v_t?;
            let min_idx = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)?;
            let v = v_t.row(min_idx);
            if v[order].abs() < 1e-12 {
                return None;
            }
            (0..order).map(|j| -v[j] / v[order]).collect()
        } else {
            let svd = regressors.svd(true, true);
            let s_max = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
            let sol = svd.solve(&targets, 1e-12 * s_max.max(1e-300)).ok()?;
            sol.iter().copied().collect()
        };
        let mut companion = DMatrix::<f64>::zeros(order, order);
        for (j, &c) in ar.iter().enumerate() {
            companion[(0, j)] = c;
        }
        for i in 1..order {
            companion[(i, i - 1)] = 1.0;
        }
        Some(companion.complex_eigenvalues().iter().copied().collect())
    }

    /// Candidate characteristic polynomials `s³ + c2·s² + c1·s + c0` of the
    /// third-order observable dynamics (the ink redistribution mode is
    /// invisible to the output), assembled from conjugate-closed root triples
    /// of an ensemble of recurrence fits. All candidates are later ranked by
    /// the data fit, so a spurious one costs nothing.
    fn recurrence_candidates(&self) -> Vec<[f64; 3]> {
        let mut candidates = Vec::new();
        for order in [3usize, 4, 5] {
            for total in [false, true] {
                let Some(roots) = self.ar_roots(order, total) else {
                    continue;
                };
                let m = roots.len();
                for a in 0..m {
                    for b in a + 1..m {
                        for c in b + 1..m {
                            let triple = [roots[a], roots[b], roots[c]];
                            if let Some(chi) = triple_to_char_poly(&triple, self.dt) {
                                candidates.push(chi);
                            }
                        }
                    }
                }
            }
        }
        candidates
    }
}

/// Maps a conjugate-closed sampled root triple to the continuous
/// characteristic coefficients, rejecting unstable or badly damped sets.
fn triple_to_char_poly(
    triple: &[num_complex::Complex64; 3],
    dt: f64,
) -> Option<[f64; 3]> {
    // Conjugate closure: every complex member needs its partner.
    for z in triple {
        if z.im.abs() > 1e-9 * z.norm() {
            let has_partner = triple
                .iter()
                .any(|w| (w - z.conj()).norm() < 1e-6 * z.norm());
            if !has_partner {
                return None;
            }
        }
    }
    let mut poles = [num_complex::Complex64::new(0.0, 0.0); 3];
    for (p, z) in poles.iter_mut().zip(triple) {
        if !(1e-6..=1.5).contains(&z.norm()) {
            return None;
        }
        *p = z.ln() / dt;
    }
    let sum: num_complex::Complex64 = poles.iter().sum();
    let pair = poles[0] * poles[1] + poles[0] * poles[2] + poles[1] * poles[2];
    let product = poles[0] * poles[1] * poles[2];
    if sum.im.abs() > 1e-6 * sum.re.abs() + 1.0 {
        return None;
    }
    let c2 = -sum.re;
    let c1 = pair.re;
    let c0 = -product.re;
    let valid = c2.is_finite() && c1.is_finite() && c0.is_finite();
    (valid && c2 > 0.0 && c1 > 0.0 && c0 > 0.0).then_some([c2, c1, c0])
}

/// Search coordinates aligned with what the output actually pins down: the
/// three characteristic-polynomial coefficients of the observable dynamics
/// (log scale) plus the damping split `τ = a33/(a33 + a44)`, the one softly
/// identified direction.
fn coeffs_from_combo(v: &[f64]) -> Option<[f64; 4]> {
    let c2 = 10f64.powf(v[0]);
    let c1 = 10f64.powf(v[1]);
    let c0 = 10f64.powf(v[2]);
    let tau = v[3];
    if !(0.001..=0.999).contains(&tau) || !(c2.is_finite() && c1.is_finite() && c0.is_finite()) {
        return None;
    }
    let d1 = -tau * c2;
    let d2 = -(1.0 - tau) * c2;
    let det = d1 - d2;
    if det.abs() < 1e-9 * c2 {
        return None;
    }
    // a31 + a41 = d1·d2 - c1 and a31·d2 + a41·d1 = c0.
    let coupling_sum = d1 * d2 - c1;
    let a31 = (coupling_sum * d1 - c0) / det;
    let a41 = coupling_sum - a31;
    (a31 < 0.0 && a41 < 0.0).then_some([a31, d1, a41, d2])
}

fn combo_from_coeffs(coeffs: &[f64; 4]) -> Option<[f64; 4]> {
    let [a31, a33, a41, a44] = *coeffs;
    let c2 = -(a33 + a44);
    let c1 = a33 * a44 - (a31 + a41);
    let c0 = a41 * a33 + a31 * a44;
    if c2 <= 0.0 || c1 <= 0.0 || c0 <= 0.0 {
        return None;
    }
    Some([c2.log10(), c1.log10(), c0.log10(), a33 / (a33 + a44)])
}

/// Plain Nelder–Mead over `f`, started at `x0` with per-coordinate initial
/// steps. Returns `(argmin, min, converged, iterations)`. Convergence uses
/// the objective spread relative to the current values with the starting
/// value as an absolute floor, so near-zero optima still terminate.
fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    max_iter: usize,
    ftol: f64,
) -> (Vec<f64>, f64, bool, usize) {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    let f_scale = if simplex[0].1.is_finite() {
        simplex[0].1.abs()
    } else {
        0.0
    };
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += step[i];
        let fv = f(&v);
        simplex.push((v, fv));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    let mut iter = 0;
    while iter < max_iter {
        iter += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = (worst - best).abs();
        if spread <= ftol * (best.abs() + worst.abs() + f_scale + 1e-300) {
            converged = true;
            break;
        }
        // Near-zero optima: the objective spread saturates at its rounding
        // floor while the simplex keeps contracting; stop on its diameter.
        let diameter = (0..dim)
            .map(|i| {
                let lo = simplex.iter().map(|(v, _)| v[i]).fold(f64::INFINITY, f64::min);
                let hi = simplex
                    .iter()
                    .map(|(v, _)| v[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                (hi - lo) / (1.0 + simplex[0].0[i].abs())
            })
            .fold(0.0f64, f64::max);
        if diameter <= 1e-10 {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (v, _) in &simplex[..dim] {
            for i in 0..dim {
                centroid[i] += v[i];
            }
        }
        centroid.iter_mut().for_each(|c| *c /= dim as f64);

        let point = |from: &[f64], coef: f64| -> Vec<f64> {
            (0..dim)
                .map(|i| centroid[i] + coef * (from[i] - centroid[i]))
                .collect()
        };

        let reflected = point(&simplex[dim].0, -alpha);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = point(&simplex[dim].0, -gamma);
            let fe = f(&expanded);
            simplex[dim] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
            continue;
        }
        let contracted = if fr < simplex[dim].1 {
            point(&simplex[dim].0, -rho)
        } else {
            point(&simplex[dim].0, rho)
        };
        let fc = f(&contracted);
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (contracted, fc);
            continue;
        }
        // Shrink toward the best vertex.
        let best_v = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            for i in 0..dim {
                entry.0[i] = best_v[i] + sigma * (entry.0[i] - best_v[i]);
            }
            entry.1 = f(&entry.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, converged, iter)
}

/// Identifies the healthy model from sensing signals.
///
/// All signals must share one sampling grid; a single shared acquisition state
/// is estimated. Non-convergence returns an error carrying the best model
/// found.
pub fn identify(signals: &[Signal], cfg: &SysidConfig) -> Result<IdentifiedModel> {
    let problem = FitProblem::new(signals, cfg.objective)?;
    let grid = GridConfig {
        t_a: signals[0].t_a,
        dt: signals[0].dt,
        n: signals[0].len(),
    };

    // Degenerate data: any state matrix fits a zero record with x̂_a = 0.
    if signals.iter().all(|s| s.max_abs() == 0.0) {
        return Ok(IdentifiedModel {
            a31: -1e11,
            a33: -1e5,
            a41: -1e11,
            a44: -1e5,
            c: 1.0,
            x_a_hat: [0.0; 4],
            fit_residual: 0.0,
            grid,
        });
    }

    let mut surrogate_at = |p: &[f64]| -> f64 {
        match coeffs_from_combo(p).and_then(|c| problem.basis(&c)) {
            Some(phi) => {
                let x = problem.solve_state(&phi);
                problem.surrogate(&phi, &x)
            }
            None => f64::INFINITY,
        }
    };

    // Candidate starts: the recurrence fit pins the characteristic
    // coefficients, leaving only the damping split to scan; the coarse
    // log-magnitude grid provides fallback coverage.
    let mut starts: Vec<(Vec<f64>, f64)> = Vec::new();
    for [c2, c1, c0] in problem.recurrence_candidates() {
        for step in 1..20 {
            let tau = step as f64 / 20.0;
            let p = vec![c2.log10(), c1.log10(), c0.log10(), tau];
            let fp = surrogate_at(&p);
            if fp.is_finite() {
                starts.push((p, fp));
            }
        }
    }
    for &c31 in &cfg.coupling_decades {
        for &c41 in &cfg.coupling_decades {
            for &d33 in &cfg.damping_decades {
                for &d44 in &cfg.damping_decades {
                    let coeffs = [
                        -10f64.powf(c31),
                        -10f64.powf(d33),
                        -10f64.powf(c41),
                        -10f64.powf(d44),
                    ];
                    if let Some(p) = combo_from_coeffs(&coeffs) {
                        let p = p.to_vec();
                        let fp = surrogate_at(&p);
                        if fp.is_finite() {
                            starts.push((p, fp));
                        }
                    }
                }
            }
        }
    }
    if starts.is_empty() {
        return Err(Error::InvalidParameter(
            "no feasible identification starting point".into(),
        ));
    }
    starts.sort_by(|a, b| a.1.total_cmp(&b.1));
    starts.truncate(cfg.refine_starts.max(1));

    // Coefficient search with the state eliminated; each start gets a
    // fresh-simplex restart at its own optimum.
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for (p0, _) in &starts {
        let (p1, _, _, _) = nelder_mead(
            &mut surrogate_at,
            p0,
            &[0.1, 0.1, 0.1, 0.05],
            cfg.max_iterations,
            cfg.tolerance,
        );
        let (p, fp, conv, _) = nelder_mead(
            &mut surrogate_at,
            &p1,
            &[0.01, 0.01, 0.01, 0.005],
            cfg.max_iterations,
            cfg.tolerance,
        );
        if best.as_ref().map_or(true, |(_, fb, _)| fp < *fb) {
            best = Some((p, fp, conv));
        }
    }
    let (mut p_best, _, coarse_converged) = best.expect("at least one start");

    // Gauge fixing. The output can be reproduced exactly for any damping
    // split τ by letting the acquisition state compensate, so the fit alone
    // leaves τ free. The compensation needs flow-rate components orders of
    // magnitude above the physical state, so the natural representative is
    // the split minimizing the acquisition-state norm.
    let state_norm_at = |tau: f64| -> f64 {
        let p = [p_best[0], p_best[1], p_best[2], tau];
        match coeffs_from_combo(&p).and_then(|c| problem.basis(&c)) {
            Some(phi) => problem.solve_state(&phi).norm(),
            None => f64::INFINITY,
        }
    };
    let mut tau_best = p_best[3];
    let mut tau_norm = state_norm_at(tau_best);
    for step in 1..40 {
        let tau = step as f64 / 40.0;
        let norm = state_norm_at(tau);
        if norm < tau_norm {
            tau_norm = norm;
            tau_best = tau;
        }
    }
    // Golden-section refinement around the best grid split.
    let (mut lo, mut hi) = ((tau_best - 0.025).max(0.001), (tau_best + 0.025).min(0.999));
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = hi - ratio * (hi - lo);
        let m2 = lo + ratio * (hi - lo);
        if state_norm_at(m1) < state_norm_at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    p_best[3] = 0.5 * (lo + hi);

    // Polish on the exact summed objective with the gauge direction pinned.
    // The state directions are orders of magnitude stiffer than the
    // coefficient directions, so the coefficients are polished with the
    // state still eliminated, then the state alone with sensitivity-scaled
    // steps.
    let tau_fixed = p_best[3];
    let mut exact_coeffs_at = |q: &[f64]| -> f64 {
        let p = [q[0], q[1], q[2], tau_fixed];
        match coeffs_from_combo(&p).and_then(|c| problem.basis(&c)) {
            Some(phi) => {
                let x = problem.solve_state(&phi);
                problem.exact_objective(&phi, &x)
            }
            None => f64::INFINITY,
        }
    };
    // Fresh-simplex sweeps with shrinking steps; a single run can collapse
    // its simplex along the valley before reaching the bottom.
    let mut q = p_best[..3].to_vec();
    let mut polish_a_converged = false;
    for step in [2e-3, 4e-4, 8e-5, 1.6e-5] {
        let (next, _, conv, _) = nelder_mead(
            &mut exact_coeffs_at,
            &q,
            &[step, step, step],
            cfg.max_iterations,
            cfg.tolerance,
        );
        q = next;
        polish_a_converged = conv;
    }
    // The polish moved the characteristic coefficients, so reselect the
    // natural damping split for them before refining the state.
    let renorm_at = |tau: f64| -> f64 {
        let p = [q[0], q[1], q[2], tau];
        match coeffs_from_combo(&p).and_then(|c| problem.basis(&c)) {
            Some(phi) => problem.solve_state(&phi).norm(),
            None => f64::INFINITY,
        }
    };
    let (mut lo, mut hi) = ((tau_fixed - 0.05).max(0.001), (tau_fixed + 0.05).min(0.999));
    for _ in 0..60 {
        let m1 = hi - ratio * (hi - lo);
        let m2 = lo + ratio * (hi - lo);
        if renorm_at(m1) < renorm_at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let tau_fixed = 0.5 * (lo + hi);

    let coeffs = coeffs_from_combo(&[q[0], q[1], q[2], tau_fixed])
        .ok_or_else(|| Error::InvalidParameter("search left the feasible region".into()))?;
    let phi = problem
        .basis(&coeffs)
        .ok_or_else(|| Error::InvalidParameter("search left the feasible region".into()))?;
    let x1 = problem.solve_state(&phi);

    // State-only refinement: per-component steps sized by the output
    // sensitivity of that component.
    let f_now = problem.exact_objective(&phi, &x1);
    let mut x_steps = [0.0f64; 4];
    for j in 0..4 {
        let sensitivity: f64 =
            phi.column(j).iter().map(|v| v.abs()).sum::<f64>() * problem.dt
                * problem.signals.len() as f64;
        x_steps[j] = if sensitivity > 0.0 {
            (0.25 * f_now / sensitivity).max(1e-14)
        } else {
            0.1
        };
    }
    let mut state_at = |q: &[f64]| -> f64 {
        problem.exact_objective(&phi, &Vector4::new(q[0], q[1], q[2], q[3]))
    };
    let (xq, fq, polish_b_converged, iterations) = nelder_mead(
        &mut state_at,
        x1.as_slice(),
        &x_steps,
        cfg.max_iterations,
        cfg.tolerance,
    );

    let model = IdentifiedModel {
        a31: coeffs[0],
        a33: coeffs[1],
        a41: coeffs[2],
        a44: coeffs[3],
        c: 1.0,
        x_a_hat: [xq[0], xq[1], xq[2], xq[3]],
        fit_residual: fq,
        grid,
    };
    let polish_converged = polish_a_converged && polish_b_converged;

    if coarse_converged || polish_converged {
        Ok(model)
    } else {
        Err(Error::IdentificationNonConvergence {
            iterations,
            objective: fq,
            best: Box::new(model),
        })
    }
}
