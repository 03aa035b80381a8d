//! Independent reference implementations backing the test suites.
//!
//! Everything here deliberately avoids the production code paths it is used
//! to check: the integrator never touches the matrix exponential, and the
//! grid search never calls the constrained solver.

use nalgebra::{DMatrix, DVector, Matrix4, RowVector4, Vector4};

/// Fixed-step fourth-order Runge–Kutta sampling of `ẋ = A·x`, `y = C·x`,
/// with `substeps` integrator steps per output sample.
pub fn rk4_sample(
    a: &Matrix4<f64>,
    c: &RowVector4<f64>,
    x0: &Vector4<f64>,
    dt: f64,
    n: usize,
    substeps: usize,
) -> Vec<f64> {
    let h = dt / substeps as f64;
    let mut x = *x0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push((c * x)[0]);
        for _ in 0..substeps {
            let k1 = a * x;
            let k2 = a * (x + k1 * (h / 2.0));
            let k3 = a * (x + k2 * (h / 2.0));
            let k4 = a * (x + k3 * h);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
    }
    out
}

/// Exhaustive minimization of `‖R·φ − r‖₂` over the probability simplex
/// discretized with step `1/m`.
///
/// Every lattice point is accounted for: the first `n_f − 2` coordinates are
/// enumerated outright, and along each remaining two-coordinate line the
/// objective is a convex quadratic in the integer line parameter, whose
/// lattice minimum lies at the clamped floor/ceil of its vertex. Returns the
/// best weights and the objective value.
pub fn simplex_grid_search(r_mat: &DMatrix<f64>, rhs: &DVector<f64>, m: usize) -> (Vec<f64>, f64) {
    let n_f = r_mat.ncols();
    assert!(n_f >= 1 && m >= 1);
    let gram = r_mat.tr_mul(r_mat);
    let proj = r_mat.tr_mul(rhs);
    let constant = rhs.dot(rhs);

    let quad = |counts: &[usize]| -> f64 {
        let mut value = constant;
        for i in 0..n_f {
            let pi = counts[i] as f64 / m as f64;
            if pi == 0.0 {
                continue;
            }
            value -= 2.0 * pi * proj[i];
            for j in 0..n_f {
                let pj = counts[j] as f64 / m as f64;
                value += pi * gram[(i, j)] * pj;
            }
        }
        value
    };

    let mut best_counts = vec![0usize; n_f];
    best_counts[0] = m;
    let mut best_value = quad(&best_counts);

    if n_f == 1 {
        return (vec![1.0], best_value.max(0.0).sqrt());
    }

    // Enumerate the leading coordinates; minimize each trailing line exactly.
    let mut counts = vec![0usize; n_f];
    let last = n_f - 1;
    let prev = n_f - 2;
    enumerate_prefix(&mut counts, 0, prev, m, &mut |counts, remaining| {
        // φ(t): counts[prev] = t, counts[last] = remaining - t.
        // The objective along the line is a·t² + b·t + c with a ≥ 0.
        let u_gram = gram[(prev, prev)] - 2.0 * gram[(prev, last)] + gram[(last, last)];
        let mut lin = 0.0;
        for i in 0..n_f {
            let base = if i == last {
                remaining as f64 / m as f64
            } else if i == prev {
                0.0
            } else {
                counts[i] as f64 / m as f64
            };
            lin += base * (gram[(i, prev)] - gram[(i, last)]);
        }
        lin = 2.0 * (lin / m as f64) - 2.0 * (proj[prev] - proj[last]) / m as f64;
        let a = u_gram / (m as f64 * m as f64);

        let mut candidates: Vec<usize> = vec![0, remaining];
        if a > 0.0 {
            let vertex = -lin / (2.0 * a);
            let floor = vertex.floor();
            for cand in [floor, floor + 1.0] {
                if cand >= 0.0 && cand <= remaining as f64 {
                    candidates.push(cand as usize);
                }
            }
        }
        for &t in &candidates {
            counts[prev] = t;
            counts[last] = remaining - t;
            let value = quad(counts);
            if value < best_value {
                best_value = value;
                best_counts.copy_from_slice(counts);
            }
        }
        counts[prev] = 0;
        counts[last] = 0;
    });

    let phi: Vec<f64> = best_counts.iter().map(|&c| c as f64 / m as f64).collect();
    (phi, best_value.max(0.0).sqrt())
}

fn enumerate_prefix(
    counts: &mut Vec<usize>,
    level: usize,
    stop: usize,
    remaining: usize,
    visit: &mut impl FnMut(&mut Vec<usize>, usize),
) {
    if level == stop {
        visit(counts, remaining);
        return;
    }
    for v in 0..=remaining {
        counts[level] = v;
        enumerate_prefix(counts, level + 1, stop, remaining - v, visit);
    }
    counts[level] = 0;
}

/// Tiny deterministic generator for test instances (splitmix64 core with a
/// Box–Muller normal).
pub struct SplitMix {
    state: u64,
    spare: Option<f64>,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = self.next_uniform().max(1e-300);
        let u2 = self.next_uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The accelerated line search must agree with plain full enumeration.
    #[test]
    fn line_minimization_matches_naive_enumeration() {
        let mut rng = SplitMix::new(99);
        for _ in 0..10 {
            let n_f = 3;
            let n_s = 4;
            let r_mat = DMatrix::from_fn(n_s, n_f, |_, _| rng.next_normal());
            let rhs = DVector::from_fn(n_s, |_, _| rng.next_normal());
            let m = 40;

            let (_, fast) = simplex_grid_search(&r_mat, &rhs, m);

            let mut naive = f64::INFINITY;
            for i in 0..=m {
                for j in 0..=(m - i) {
                    let k = m - i - j;
                    let phi = DVector::from_column_slice(&[
                        i as f64 / m as f64,
                        j as f64 / m as f64,
                        k as f64 / m as f64,
                    ]);
                    let value = (&r_mat * phi - &rhs).norm();
                    naive = naive.min(value);
                }
            }
            assert!(
                (fast - naive).abs() < 1e-12,
                "fast {fast} vs naive {naive}"
            );
        }
    }
}
