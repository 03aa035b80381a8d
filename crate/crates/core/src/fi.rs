//! Fault isolation: simplex-constrained template regression and
//! nearest-neighbor classification.
//!
//! Offline, the residuals of each fault class are averaged into one template
//! column. Online, a measured residual is explained as a convex combination
//! of the templates; the weight vector lives on the probability simplex and
//! its largest entry names the fault. A nearest-neighbor classifier over the
//! raw training residuals is available as the alternative.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::FaultVariant;
use crate::sim::Signal;
use crate::{Error, Result};

/// Per-class averaged residual templates on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMatrix {
    /// `n_samples × n_f`; column `i` is the mean residual of
    /// `class_order[i]`.
    pub columns: DMatrix<f64>,
    pub class_order: Vec<FaultVariant>,
    pub t_a: f64,
    pub dt: f64,
}

impl TemplateMatrix {
    pub fn n_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn class_index(&self, class: FaultVariant) -> Option<usize> {
        self.class_order.iter().position(|&c| c == class)
    }

    /// Writes the templates as CSV: header of class names, one row per
    /// sample.
    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = self.class_order.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.columns.nrows() {
            let row: Vec<String> = (0..self.columns.ncols())
                .map(|j| format!("{}", self.columns[(i, j)]))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv<P: AsRef<Path>>(path: P, t_a: f64, dt: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("missing template header".into()))?;
        let class_order: Vec<FaultVariant> = header
            .split(',')
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Format(format!("bad template value: {e}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != class_order.len() {
                return Err(Error::Format("ragged template row".into()));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Empty("template file has no rows".into()));
        }
        let columns = DMatrix::from_fn(rows.len(), class_order.len(), |i, j| rows[i][j]);
        Ok(Self {
            columns,
            class_order,
            t_a,
            dt,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsolationMethod {
    LR,
    KNN,
}

/// Outcome of one isolation call: simplex weights over the class order and
/// the winning class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationResult {
    pub phi: Vec<f64>,
    pub winner: FaultVariant,
    pub method: IsolationMethod,
}

/// Averages the residuals of every class into the template matrix. All
/// classes must be non-empty and share one grid.
pub fn train_templates(
    residuals_by_class: &BTreeMap<FaultVariant, Vec<Signal>>,
) -> Result<TemplateMatrix> {
    if residuals_by_class.is_empty() {
        return Err(Error::Empty("no classes to train on".into()));
    }
    let reference = residuals_by_class
        .values()
        .flat_map(|v| v.first())
        .next()
        .ok_or_else(|| Error::Empty("all classes are empty".into()))?
        .clone();
    let n = reference.len();
    let mut class_order = Vec::new();
    let mut columns = DMatrix::zeros(n, residuals_by_class.len());
    for (j, (&class, signals)) in residuals_by_class.iter().enumerate() {
        if signals.is_empty() {
            return Err(Error::Empty(format!("class {class} has no residuals")));
        }
        for s in signals {
            if !s.same_grid(&reference) {
                return Err(Error::GridMismatch(format!(
                    "class {class} signal grid differs from the shared grid"
                )));
            }
            for k in 0..n {
                columns[(k, j)] += s.samples[k];
            }
        }
        columns.column_mut(j).scale_mut(1.0 / signals.len() as f64);
        class_order.push(class);
    }
    Ok(TemplateMatrix {
        columns,
        class_order,
        t_a: reference.t_a,
        dt: reference.dt,
    })
}

/// Index of the largest entry; the earliest one wins ties.
pub fn argmax_lowest_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Solves `min ‖R·φ − r‖₂` subject to `Σφ = 1`, `φ ≥ 0`.
///
/// The class count is small, so every support set is enumerated and its
/// equality-constrained solution checked for feasibility; convexity makes the
/// best feasible candidate the global optimum. The returned weights are
/// clamped and renormalized, keeping the simplex constraints satisfied to
/// well below 1e-12.
pub fn solve_simplex_ls(templates: &TemplateMatrix, r: &Signal) -> Result<Vec<f64>> {
    if r.len() != templates.columns.nrows() {
        return Err(Error::GridMismatch(format!(
            "residual length {} does not match template rows {}",
            r.len(),
            templates.columns.nrows()
        )));
    }
    let n_f = templates.n_classes();
    let rhs = DVector::from_column_slice(&r.samples);
    let gram = templates.columns.tr_mul(&templates.columns);
    let proj = templates.columns.tr_mul(&rhs);

    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n_f) {
        let support: Vec<usize> = (0..n_f).filter(|i| mask & (1 << i) != 0).collect();
        let s = support.len();
        // KKT system of the equality-constrained restriction:
        // [2G_S 1; 1ᵀ 0]·[φ_S; λ] = [2h_S; 1].
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs_kkt = DVector::zeros(s + 1);
        for (a, &ia) in support.iter().enumerate() {
            for (b, &ib) in support.iter().enumerate() {
                kkt[(a, b)] = 2.0 * gram[(ia, ib)];
            }
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
            rhs_kkt[a] = 2.0 * proj[ia];
        }
        rhs_kkt[s] = 1.0;

        let solution = match kkt.clone().lu().solve(&rhs_kkt) {
            Some(x) => x,
            None => match kkt.svd(true, true).solve(&rhs_kkt, 1e-12) {
                Ok(x) => x,
                Err(_) => continue,
            },
        };
        if solution.iter().take(s).any(|v| *v < -1e-9 || !v.is_finite()) {
            continue;
        }
        let mut phi = vec![0.0; n_f];
        for (a, &ia) in support.iter().enumerate() {
            phi[ia] = solution[a].max(0.0);
        }
        let obj = {
            let mut quad = 0.0;
            for i in 0..n_f {
                for j in 0..n_f {
                    quad += phi[i] * gram[(i, j)] * phi[j];
                }
                quad -= 2.0 * phi[i] * proj[i];
            }
            quad
        };
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, phi));
        }
    }
    let (_, mut phi) = best.ok_or_else(|| Error::Solver("no feasible support found".into()))?;
    let sum: f64 = phi.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Solver("degenerate simplex solution".into()));
    }
    phi.iter_mut().for_each(|v| *v /= sum);
    Ok(phi)
}

/// Isolation by simplex-constrained regression onto the templates.
pub fn isolate_lr(templates: &TemplateMatrix, r: &Signal) -> Result<IsolationResult> {
    let phi = solve_simplex_ls(templates, r)?;
    let winner = templates.class_order[argmax_lowest_index(&phi)];
    Ok(IsolationResult {
        phi,
        winner,
        method: IsolationMethod::LR,
    })
}

/// Isolation by k-nearest neighbors over raw sample vectors (Euclidean
/// distance). Vote ties break by smaller within-class total distance, then by
/// class order. The weight vector reports vote fractions.
pub fn isolate_knn(
    train: &[(Signal, FaultVariant)],
    r: &Signal,
    k: usize,
) -> Result<IsolationResult> {
    if train.is_empty() {
        return Err(Error::Empty("nearest-neighbor training set is empty".into()));
    }
    if k < 1 || k > train.len() {
        return Err(Error::InvalidParameter(format!(
            "k must be in 1..={}, got {k}",
            train.len()
        )));
    }
    let mut class_order: Vec<FaultVariant> = train.iter().map(|(_, c)| *c).collect();
    class_order.sort();
    class_order.dedup();

    let mut distances: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, (s, _))| {
            if s.len() != r.len() {
                return Err(Error::GridMismatch(
                    "training signal length differs from the query".into(),
                ));
            }
            let d2: f64 = s
                .samples
                .iter()
                .zip(&r.samples)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok((d2.sqrt(), i))
        })
        .collect::<Result<_>>()?;
    distances.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut votes = vec![0usize; class_order.len()];
    let mut total_distance = vec![0.0f64; class_order.len()];
    for &(d, idx) in distances.iter().take(k) {
        let class = train[idx].1;
        let j = class_order.iter().position(|&c| c == class).unwrap();
        votes[j] += 1;
        total_distance[j] += d;
    }

    let mut winner_idx = 0;
    for j in 1..class_order.len() {
        let better = votes[j] > votes[winner_idx]
            || (votes[j] == votes[winner_idx] && total_distance[j] < total_distance[winner_idx]);
        if better {
            winner_idx = j;
        }
    }
    let phi: Vec<f64> = votes.iter().map(|&v| v as f64 / k as f64).collect();
    Ok(IsolationResult {
        phi,
        winner: class_order[winner_idx],
        method: IsolationMethod::KNN,
    })
}
