//! The algebraic core of the residual filter: the stacked system pencil and
//! its left null space.
//!
//! Writing the autonomous dynamics plus output equation as the pencil
//! `H(s) = H0 + H1·s` with `H0 = [A; C]` and `H1 = [-I; 0]`, a polynomial row
//! `N(s) = Σ N_i s^i` annihilates the state contribution iff the stacked row
//! `N̄ = [N_0 … N_{d-1}]` lies in the left null space of the block-banded
//! matrix carrying `[H0 H1]` shifted along its block rows. Fault
//! detectability additionally requires `N̄` not to annihilate the stacked
//! fault structures.

use nalgebra::{DMatrix, Matrix4, RowVector4, SMatrix, SVector};

use crate::model::{FaultSpec, FaultVariant};
use crate::sysid::IdentifiedModel;
use crate::{Error, Result};

pub type PencilBlock = SMatrix<f64, 5, 4>;

/// The first-order pencil form of the autonomous dynamics with output, plus
/// the structural fault directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeMatrices {
    /// `[A; C]`.
    pub h0: PencilBlock,
    /// `[-I; 0]`.
    pub h1: PencilBlock,
    /// Output injection column `[0; -1]`.
    pub l: SVector<f64, 5>,
    /// Stacked fault incidence structures `[B_f; 0]`, one per fault variant.
    pub f_list: Vec<(FaultVariant, PencilBlock)>,
}

/// Builds the `(H0, H1)` pencil blocks for an arbitrary state/output pair.
pub fn pencil_blocks(a: &Matrix4<f64>, c: &RowVector4<f64>) -> (PencilBlock, PencilBlock) {
    let mut h0 = PencilBlock::zeros();
    let mut h1 = PencilBlock::zeros();
    for i in 0..4 {
        for j in 0..4 {
            h0[(i, j)] = a[(i, j)];
        }
        h0[(4, i)] = c[i];
        h1[(i, i)] = -1.0;
    }
    (h0, h1)
}

/// Assembles the pencil of the identified model together with the fault
/// structures of the given specs. Only the incidence patterns of the faults
/// enter: the filter knows which equations a fault touches, not how hard.
pub fn assemble_dae(model: &IdentifiedModel, faults: &[FaultSpec]) -> DaeMatrices {
    let (h0, h1) = pencil_blocks(&model.state_matrix(), &model.output_matrix());
    let mut l = SVector::<f64, 5>::zeros();
    l[4] = -1.0;
    let f_list = faults
        .iter()
        .map(|spec| {
            let pattern = spec.variant.pattern();
            let mut f = PencilBlock::zeros();
            for i in 0..4 {
                for j in 0..4 {
                    f[(i, j)] = pattern[(i, j)];
                }
            }
            (spec.variant, f)
        })
        .collect();
    DaeMatrices { h0, h1, l, f_list }
}

/// Block-banded stacking of `[H0 H1]` over `d_n` block rows; block row `i`
/// carries `H0` in block column `i` and `H1` in block column `i+1`, giving a
/// `5·d_n × 4·(d_n+1)` matrix.
pub fn stack_pencil(h0: &PencilBlock, h1: &PencilBlock, d_n: usize) -> DMatrix<f64> {
    assert!(d_n >= 1, "stacking order must be at least 1");
    let mut out = DMatrix::zeros(5 * d_n, 4 * (d_n + 1));
    for block in 0..d_n {
        out.view_mut((5 * block, 4 * block), (5, 4)).copy_from(h0);
        out.view_mut((5 * block, 4 * (block + 1)), (5, 4))
            .copy_from(h1);
    }
    out
}

pub fn stack_hbar(dae: &DaeMatrices, d_n: usize) -> DMatrix<f64> {
    stack_pencil(&dae.h0, &dae.h1, d_n)
}

/// Outcome of the left-null-space extraction.
#[derive(Debug, Clone)]
pub struct NullSpace {
    /// Unit-norm annihilating row, sign-normalized so its first significant
    /// entry is positive.
    pub nbar: Vec<f64>,
    /// Dimension of the left null space; 1 means the row is unique up to
    /// scale.
    pub dimension: usize,
}

/// Unit-norm left null vector of `hbar` via singular value decomposition: the
/// left singular vector of the smallest singular value.
///
/// A matrix with fewer columns than rows is padded with zero columns so the
/// thin decomposition carries the full left basis. The caller is responsible
/// for a sensible entry scaling; see [`model_annihilator`] for the channel
/// pencil, whose raw entries span too many decades for a meaningful
/// decomposition.
pub fn left_null_space(hbar: &DMatrix<f64>) -> Result<NullSpace> {
    let (basis, dimension) = left_null_basis(hbar)?;
    let mut nbar = basis.into_iter().next().expect("non-empty basis");
    normalize_annihilator(&mut nbar);
    Ok(NullSpace { nbar, dimension })
}

/// Orthonormal basis of the left null space, smallest singular value first.
fn left_null_basis(hbar: &DMatrix<f64>) -> Result<(Vec<Vec<f64>>, usize)> {
    let (rows, cols) = hbar.shape();
    let work = if cols < rows {
        let mut padded = DMatrix::zeros(rows, rows);
        padded.view_mut((0, 0), (rows, cols)).copy_from(hbar);
        padded
    } else {
        hbar.clone()
    };
    let svd = work.svd(true, false);
    let sv = &svd.singular_values;
    let s_max = sv.iter().fold(0.0f64, |m, &s| m.max(s));
    let tol = s_max * rows.max(cols) as f64 * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count().min(cols);
    if rank >= rows {
        return Err(Error::Synthesis(
            "the stacked pencil has full row rank: no annihilating row exists at this order; \
             increase the filter order"
                .into(),
        ));
    }
    let dimension = rows - rank;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    let u = svd.u.expect("u requested");
    let basis = order
        .iter()
        .take(dimension)
        .map(|&idx| u.column(idx).iter().copied().collect())
        .collect();
    Ok((basis, dimension))
}

/// The minimal-degree member of the left null space: the combination of
/// basis vectors with the smallest top block. At stacking orders above the
/// minimal one the null space also contains shifted copies of the minimal
/// row; selecting the minimal member keeps the synthesized filter canonical
/// regardless of the stacking order.
pub(crate) fn minimal_annihilator(hbar: &DMatrix<f64>, d_n: usize) -> Result<NullSpace> {
    let (basis, dimension) = left_null_basis(hbar)?;
    let mut nbar = if dimension == 1 {
        basis.into_iter().next().expect("non-empty basis")
    } else {
        // Top-block content of each basis vector; the right singular vector
        // of the smallest singular value gives the flattest combination.
        let top = DMatrix::from_fn(5, dimension, |i, k| basis[k][5 * (d_n - 1) + i]);
        let svd = top.svd(false, true);
        let v_t = svd.v_t.expect("v requested");
        let min_idx = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty singular values");
        let weights = v_t.row(min_idx);
        let len = basis[0].len();
        (0..len)
            .map(|i| {
                basis
                    .iter()
                    .zip(weights.iter())
                    .map(|(v, w)| v[i] * w)
                    .sum()
            })
            .collect()
    };
    normalize_annihilator(&mut nbar);
    Ok(NullSpace { nbar, dimension })
}

fn normalize_annihilator(nbar: &mut [f64]) {
    let norm = nbar.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        nbar.iter_mut().for_each(|v| *v /= norm);
    }
    let max_abs = nbar.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(first) = nbar.iter().find(|v| v.abs() > 1e-9 * max_abs) {
        if *first < 0.0 {
            nbar.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// State balancing for the channel structure: the volume states are scaled by
/// the natural frequency `ω = sqrt(|a31| + |a41|)` so positions and flow
/// rates carry comparable weight. Returns the balanced pair and `ω`.
pub(crate) fn balance_state(
    a: &Matrix4<f64>,
    c: &RowVector4<f64>,
) -> (Matrix4<f64>, RowVector4<f64>, f64) {
    let mut omega = (a[(2, 0)].abs() + a[(3, 0)].abs()).sqrt();
    if !omega.is_finite() || omega <= 0.0 {
        omega = 1.0;
    }
    let d = [omega, omega, 1.0, 1.0];
    let mut a_bal = *a;
    let mut c_bal = *c;
    for i in 0..4 {
        for j in 0..4 {
            a_bal[(i, j)] = a[(i, j)] * d[i] / d[j];
        }
        c_bal[i] = c[i] / d[i];
    }
    (a_bal, c_bal, omega)
}

/// Annihilating row of the model's stacked pencil, computed and returned in
/// the model's dimensionless form (see [`IdentifiedModel::normalized`]).
///
/// The raw pencil mixes unit output weights with coupling coefficients near
/// 1e12, and the polynomial degrees spread the annihilator coefficients over
/// seventeen more decades; no floating-point decomposition can separate the
/// structural null direction at that spread, nor represent the row with
/// comparable component weights. In the dimensionless coordinates the pencil
/// entries and the annihilator components are all order one, so both the
/// annihilation and the fault-visibility checks are numerically meaningful.
pub fn model_annihilator(model: &IdentifiedModel, d_n: usize) -> Result<NullSpace> {
    let (normalized, _) = model.normalized();
    let (h0, h1) = pencil_blocks(&normalized.state_matrix(), &normalized.output_matrix());
    let hbar = stack_pencil(&h0, &h1, d_n);
    minimal_annihilator(&hbar, d_n)
}

/// Entrywise max norm of the annihilation defect `N̄·H̄`.
pub fn annihilation_defect(nbar: &[f64], hbar: &DMatrix<f64>) -> f64 {
    let (rows, cols) = hbar.shape();
    assert_eq!(nbar.len(), rows);
    let mut worst = 0.0f64;
    for j in 0..cols {
        let mut acc = 0.0;
        for i in 0..rows {
            acc += nbar[i] * hbar[(i, j)];
        }
        worst = worst.max(acc.abs());
    }
    worst
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Per-fault sensitivity of an annihilating row: the residual generator can
/// see fault `i` iff `N̄·F̄_i ≠ 0`, with `F̄_i` the block-diagonal stacking of
/// the fault structure.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FaultSensitivity {
    pub variant: FaultVariant,
    pub sensitive: bool,
    /// `‖N̄·F̄_i‖_∞`, entrywise.
    pub gain: f64,
}

pub fn check_sensitivity(nbar: &[f64], dae: &DaeMatrices, d_n: usize) -> Vec<FaultSensitivity> {
    assert_eq!(nbar.len(), 5 * d_n, "annihilating row length");
    let n_scale = max_abs(nbar);
    dae.f_list
        .iter()
        .map(|(variant, f)| {
            let mut gain = 0.0f64;
            for block in 0..d_n {
                let n_block = &nbar[5 * block..5 * (block + 1)];
                for j in 0..4 {
                    let mut acc = 0.0;
                    for i in 0..5 {
                        acc += n_block[i] * f[(i, j)];
                    }
                    gain = gain.max(acc.abs());
                }
            }
            FaultSensitivity {
                variant: *variant,
                sensitive: gain > 1e-6 * n_scale,
                gain,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FaultSpec;
    use crate::sysid::IdentifiedModel;

    fn default_faults() -> Vec<FaultSpec> {
        FaultVariant::FAULTS
            .iter()
            .map(|&v| FaultSpec::default_for(v))
            .collect()
    }

    #[test]
    fn pencil_blocks_have_the_stated_structure() {
        let model = IdentifiedModel::reference();
        let dae = assemble_dae(&model, &default_faults());
        // Bottom row of H0 is the output map.
        for (j, expected) in [0.0, 0.0, 1.0, 1.0].iter().enumerate() {
            assert_eq!(dae.h0[(4, j)], *expected);
        }
        // H1 = [-I; 0].
        for i in 0..5 {
            for j in 0..4 {
                let expected = if i == j { -1.0 } else { 0.0 };
                assert_eq!(dae.h1[(i, j)], expected);
            }
        }
        assert_eq!(dae.l.as_slice(), &[0.0, 0.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn dried_nozzle_structure_has_a_single_entry() {
        let model = IdentifiedModel::reference();
        let dae = assemble_dae(&model, &default_faults());
        let (variant, f) = &dae.f_list[3];
        assert_eq!(*variant, FaultVariant::SDN);
        for i in 0..5 {
            for j in 0..4 {
                let expected = if (i, j) == (3, 3) { 1.0 } else { 0.0 };
                assert_eq!(f[(i, j)], expected, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn stacking_dimensions() {
        let model = IdentifiedModel::reference();
        let dae = assemble_dae(&model, &default_faults());
        assert_eq!(stack_hbar(&dae, 1).shape(), (5, 8));
        assert_eq!(stack_hbar(&dae, 5).shape(), (25, 24));
    }

    #[test]
    fn stacked_pencil_annihilator_exists_and_its_dimension_is_reported() {
        let model = IdentifiedModel::reference();
        let (normalized, _) = model.normalized();
        let dae = assemble_dae(&normalized, &default_faults());
        let hbar = stack_hbar(&dae, 5);
        let ns = model_annihilator(&model, 5).unwrap();
        // The state matrix has two identical columns, so one ink
        // redistribution mode is invisible to the output: the observable part
        // is third order, the minimal annihilator has degree 3, and at five
        // blocks the annihilator space is two-dimensional (the minimal row
        // and its shift).
        assert_eq!(ns.dimension, 2);
        assert_eq!(ns.nbar.len(), 25);
        // Unit norm and positive leading significant entry.
        let norm: f64 = ns.nbar.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        // The canonical minimal-degree member: top block empty, and it
        // annihilates the stacked pencil.
        assert!(max_abs(&ns.nbar[20..]) < 1e-12);
        let defect = annihilation_defect(&ns.nbar, &hbar);
        let h_scale = hbar.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            defect <= 1e-9 * max_abs(&ns.nbar) * h_scale,
            "defect {defect:.3e} vs scale {h_scale:.3e}"
        );
    }

    #[test]
    fn full_row_rank_matrix_has_no_annihilating_row() {
        // 2×3 full-row-rank pencil: no left null space.
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert!(left_null_space(&m).is_err());
    }

    #[test]
    fn wide_null_space_is_reported() {
        // Rank-1 3×3: left null dimension 2.
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 3.0, 6.0, 9.0]);
        let ns = left_null_space(&m).unwrap();
        assert_eq!(ns.dimension, 2);
        assert!(annihilation_defect(&ns.nbar, &m) < 1e-12);
    }

    #[test]
    fn all_six_faults_are_visible_at_order_five() {
        let model = IdentifiedModel::reference();
        let dae = assemble_dae(&model, &default_faults());
        let ns = model_annihilator(&model, 5).unwrap();
        let sens = check_sensitivity(&ns.nbar, &dae, 5);
        assert_eq!(sens.len(), 6);
        for s in &sens {
            assert!(s.sensitive, "{}: gain {:.3e}", s.variant, s.gain);
        }
    }

    #[test]
    fn zero_and_orthogonal_structures_are_invisible() {
        let model = IdentifiedModel::reference();
        let mut dae = assemble_dae(&model, &default_faults());
        let ns = model_annihilator(&model, 5).unwrap();

        // A zero structure is never visible.
        dae.f_list.push((FaultVariant::Healthy, PencilBlock::zeros()));
        let sens = check_sensitivity(&ns.nbar, &dae, 5);
        assert!(!sens.last().unwrap().sensitive);

        // A structure supported only on near-zero entries of every N block is
        // invisible by construction.
        let n_scale = max_abs(&ns.nbar);
        let mut dead_rows = Vec::new();
        for i in 0..5 {
            let col_max = (0..5)
                .map(|b| ns.nbar[5 * b + i].abs())
                .fold(0.0f64, f64::max);
            if col_max < 1e-9 * n_scale {
                dead_rows.push(i);
            }
        }
        if let Some(&row) = dead_rows.first() {
            let mut crafted = PencilBlock::zeros();
            crafted[(row, 0)] = 1.0;
            dae.f_list.push((FaultVariant::Healthy, crafted));
            let sens = check_sensitivity(&ns.nbar, &dae, 5);
            assert!(!sens.last().unwrap().sensitive);
        }
    }
}
